//! Output heads: a log-normal mixture over the next inter-event time and a
//! categorical distribution over the next account, both read off the same
//! history context vector.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{uniform_init, EncodedSequence};
use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::linalg::{log_sum_exp, vec_mat_acc, Mat};

/// Bounds applied to `V_s c + b_s` before exponentiation.
pub const LOG_SCALE_MIN: f64 = -10.0;
pub const LOG_SCALE_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Mixture components K.
    pub components: usize,
    /// Hidden width of the type-prediction MLP.
    pub type_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            components: 8,
            type_hidden: 64,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.type_hidden == 0 {
            return Err(Error::Parameter(
                "components and type_hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub config: HeadConfig,
    /// `d × K` projections and `1 × K` biases.
    pub v_weight: Mat,
    pub b_weight: Mat,
    pub v_scale: Mat,
    pub b_scale: Mat,
    pub v_mean: Mat,
    pub b_mean: Mat,
    /// Type MLP: `d × H`, `1 × H`, `H × |U|`, `1 × |U|`.
    pub w_type_hidden: Mat,
    pub b_type_hidden: Mat,
    pub w_type_out: Mat,
    pub b_type_out: Mat,
}

impl HeadParams {
    pub fn init(config: HeadConfig, model_dim: usize, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let k = config.components;
        let h = config.type_hidden;
        Ok(Self {
            v_weight: uniform_init(model_dim, k, model_dim, rng),
            b_weight: Mat::zeros(1, k),
            v_scale: uniform_init(model_dim, k, model_dim, rng),
            b_scale: Mat::zeros(1, k),
            v_mean: uniform_init(model_dim, k, model_dim, rng),
            // spread component locations over a few orders of magnitude
            b_mean: Mat::from_fn(1, k, |_, j| {
                if k == 1 {
                    0.0
                } else {
                    -2.0 + 4.0 * j as f64 / (k - 1) as f64
                }
            }),
            w_type_hidden: uniform_init(model_dim, h, model_dim, rng),
            b_type_hidden: Mat::zeros(1, h),
            w_type_out: uniform_init(h, vocab_size, h, rng),
            b_type_out: Mat::zeros(1, vocab_size),
            config,
        })
    }

    pub fn components(&self) -> usize {
        self.b_weight.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.b_type_out.cols()
    }
}

/// A log-normal mixture over a positive waiting time. Means and scales live
/// in log-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(Error::Parameter("mixture arrays must be non-empty and equal length".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!("mixture weights {weights:?} are not on the simplex")));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Parameter("mixture scales must be positive and means finite".into()));
        }
        Ok(Self {
            weights,
            means,
            scales,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_k w_k exp(μ_k + s_k²/2)`.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((w, m), s)| w * (m + 0.5 * s * s).exp())
            .sum()
    }
}

/// `w = softmax(V_w c + b_w)`, `s = exp(clamp(V_s c + b_s))`, `μ = V_μ c + b_μ`.
pub fn mixture_from_context(context: &[f64], head: &HeadParams) -> Result<MixtureParams> {
    let (log_w, means, _, log_s) = mixture_raw(context, head);
    let mix = MixtureParams {
        weights: log_w.iter().map(|l| l.exp()).collect(),
        means,
        scales: log_s.iter().map(|l| l.exp()).collect(),
    };
    if mix.weights.iter().chain(&mix.means).chain(&mix.scales).any(|x| !x.is_finite()) {
        return Err(Error::numeric("mixture head"));
    }
    Ok(mix)
}

/// (log-weights, means, unclamped log-scales, clamped log-scales)
fn mixture_raw(context: &[f64], head: &HeadParams) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut logits = head.b_weight.row(0).to_vec();
    vec_mat_acc(context, &head.v_weight, &mut logits);
    let lse = log_sum_exp(&logits);
    let log_w: Vec<f64> = logits.iter().map(|l| l - lse).collect();

    let mut means = head.b_mean.row(0).to_vec();
    vec_mat_acc(context, &head.v_mean, &mut means);

    let mut raw_log_s = head.b_scale.row(0).to_vec();
    vec_mat_acc(context, &head.v_scale, &mut raw_log_s);
    let log_s = raw_log_s
        .iter()
        .map(|l| l.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX))
        .collect();
    (log_w, means, raw_log_s, log_s)
}

/// Per-component log terms `log w_k + log LogNormal(τ; μ_k, s_k)` at `x = log τ`.
fn component_log_terms(x: f64, log_w: &[f64], means: &[f64], log_s: &[f64]) -> Vec<f64> {
    log_w
        .iter()
        .zip(means)
        .zip(log_s)
        .map(|((lw, m), ls)| {
            let z = (x - m) * (-ls).exp();
            lw - x - ls - HALF_LN_2PI - 0.5 * z * z
        })
        .collect()
}

/// Log-density of a log-normal mixture at `tau`, evaluated with log-sum-exp.
pub fn lognormal_mixture_logpdf(tau: f64, mix: &MixtureParams) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("inter-event time {tau} must be positive")));
    }
    let log_w: Vec<f64> = mix.weights.iter().map(|w| w.ln()).collect();
    let log_s: Vec<f64> = mix.scales.iter().map(|s| s.ln()).collect();
    Ok(log_sum_exp(&component_log_terms(tau.ln(), &log_w, &mix.means, &log_s)))
}

/// Draws a component from the weights, then `exp(μ_k + s_k z)`.
pub fn sample_inter_event_time(mix: &MixtureParams, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = mix.components() - 1;
    for (j, w) in mix.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            k = j;
            break;
        }
    }
    let z: f64 = StandardNormal.sample(rng);
    (mix.means[k] + mix.scales[k] * z).exp()
}

/// Type-head hidden activations and logits for one context.
pub(crate) fn type_forward(context: &[f64], head: &HeadParams) -> (Vec<f64>, Vec<f64>) {
    let mut hidden = head.b_type_hidden.row(0).to_vec();
    vec_mat_acc(context, &head.w_type_hidden, &mut hidden);
    hidden.iter_mut().for_each(|h| *h = h.tanh());
    let mut logits = head.b_type_out.row(0).to_vec();
    vec_mat_acc(&hidden, &head.w_type_out, &mut logits);
    (hidden, logits)
}

/// Probabilities of the next account given a context.
pub fn type_distribution(context: &[f64], head: &HeadParams) -> Vec<f64> {
    let (_, mut logits) = type_forward(context, head);
    crate::linalg::softmax_in_place(&mut logits);
    logits
}

/// Everything computed for one predicted event; the backward pass reuses it.
#[derive(Debug, Clone)]
pub(crate) struct PositionTerms {
    pub log_tau: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub raw_log_scale: Vec<f64>,
    pub log_scale: Vec<f64>,
    /// Posterior component responsibilities at `τ`.
    pub resp: Vec<f64>,
    pub time_logpdf: f64,
    pub type_hidden: Vec<f64>,
    pub type_probs: Vec<f64>,
    pub type_nll: f64,
    pub correct: bool,
}

pub(crate) fn position_terms(context: &[f64], head: &HeadParams, tau: f64, target: usize) -> PositionTerms {
    let (log_w, means, raw_log_scale, log_scale) = mixture_raw(context, head);
    let log_tau = tau.ln();
    let terms = component_log_terms(log_tau, &log_w, &means, &log_scale);
    let time_logpdf = log_sum_exp(&terms);
    let resp = terms.iter().map(|t| (t - time_logpdf).exp()).collect();

    let (type_hidden, logits) = type_forward(context, head);
    let lse = log_sum_exp(&logits);
    let type_nll = lse - logits[target];
    let argmax = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0;
    let type_probs = logits.iter().map(|l| (l - lse).exp()).collect();
    PositionTerms {
        log_tau,
        weights: log_w.iter().map(|l| l.exp()).collect(),
        means,
        raw_log_scale,
        log_scale,
        resp,
        time_logpdf,
        type_hidden,
        type_probs,
        type_nll,
        correct: argmax == target,
    }
}

/// Negative log-likelihood of one sequence, summed over predicted events.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceNll {
    pub total: f64,
    pub time: f64,
    pub types: f64,
    pub type_correct: usize,
    pub predicted: usize,
}

impl SequenceNll {
    pub fn per_event(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.total / self.predicted as f64
        }
    }

    pub fn accumulate(&mut self, other: &SequenceNll) {
        self.total += other.total;
        self.time += other.time;
        self.types += other.types;
        self.type_correct += other.type_correct;
        self.predicted += other.predicted;
    }
}

/// Converts raw gaps into model units: clamps ties to `min_interval` seconds
/// then divides by `time_scale`.
#[inline]
pub fn model_interval(gap: f64, time_scale: f64, min_interval: f64) -> f64 {
    gap.max(min_interval) / time_scale
}

/// Event `i ≥ 1` is scored with context `c_{i-1}`. Time terms are reported in
/// the original time units (the `ln time_scale` Jacobian is added back).
pub fn sequence_nll(
    seq: &EventSequence,
    encoded: &EncodedSequence,
    head: &HeadParams,
    time_scale: f64,
    min_interval: f64,
) -> Result<SequenceNll> {
    if encoded.contexts.rows() != seq.len() {
        return Err(Error::Contract(format!(
            "encoded length {} does not match sequence length {}",
            encoded.contexts.rows(),
            seq.len()
        )));
    }
    let ln_scale = time_scale.ln();
    let mut out = SequenceNll::default();
    for i in 1..seq.len() {
        let tau = model_interval(seq.events[i].time - seq.events[i - 1].time, time_scale, min_interval);
        let terms = position_terms(encoded.contexts.row(i - 1), head, tau, seq.events[i].account);
        let time_nll = -terms.time_logpdf + ln_scale;
        out.time += time_nll;
        out.types += terms.type_nll;
        out.total += time_nll + terms.type_nll;
        out.type_correct += usize::from(terms.correct);
        out.predicted += 1;
    }
    if !out.total.is_finite() {
        return Err(Error::numeric(format!("likelihood of sequence {}", seq.id)));
    }
    Ok(out)
}
