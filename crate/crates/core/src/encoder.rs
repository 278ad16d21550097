//! History encoder: event/position/time embeddings followed by one causal
//! self-attention layer.
//!
//! Row `i` of the input matrix is `[W_e[u_i], PE(i), φ(t_i - t_{i-1})]`. The
//! attention matrix is lower-triangular with the diagonal unmasked, so the
//! context of event `i` depends on events `0..=i` only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::linalg::{dot, Mat};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Summarizer {
    /// Contexts are the attention block outputs.
    #[default]
    Identity,
    /// A tanh recurrent layer run over the attention block outputs.
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemporalLayout {
    /// Per-frequency feature maps are added together (length `time_dim`).
    #[default]
    Summed,
    /// Per-frequency feature maps are concatenated, `time_dim / k` slots each.
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub event_dim: usize,
    pub position_dim: usize,
    pub time_dim: usize,
    pub num_frequencies: usize,
    pub dropout: f64,
    pub summarizer: Summarizer,
    pub temporal_layout: TemporalLayout,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            event_dim: 32,
            position_dim: 16,
            time_dim: 16,
            num_frequencies: 8,
            dropout: 0.1,
            summarizer: Summarizer::Identity,
            temporal_layout: TemporalLayout::Summed,
        }
    }
}

impl EncoderConfig {
    /// Width of the concatenated input row (and of every hidden row).
    pub fn model_dim(&self) -> usize {
        self.event_dim + self.position_dim + self.time_dim
    }

    /// Feature slots per frequency.
    pub fn slots_per_frequency(&self) -> usize {
        match self.temporal_layout {
            TemporalLayout::Summed => self.time_dim,
            TemporalLayout::Stacked => self.time_dim / self.num_frequencies.max(1),
        }
    }

    /// Free kernel coefficients per frequency: one for the constant slot and
    /// one per harmonic (shared by its cosine and sine slots).
    pub fn coefficients_per_frequency(&self) -> usize {
        self.slots_per_frequency() / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.event_dim == 0 || self.time_dim == 0 {
            return Err(Error::Parameter("event_dim and time_dim must be positive".into()));
        }
        if !self.position_dim.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "position_dim {} must be even",
                self.position_dim
            )));
        }
        if self.num_frequencies == 0 {
            return Err(Error::Parameter("num_frequencies must be positive".into()));
        }
        if self.temporal_layout == TemporalLayout::Stacked
            && !self.time_dim.is_multiple_of(self.num_frequencies)
        {
            return Err(Error::Parameter(format!(
                "stacked temporal layout needs time_dim ({}) divisible by num_frequencies ({})",
                self.time_dim, self.num_frequencies
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Learnable encoder weights plus the fixed frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// Kernel frequencies ω, fixed after initialization.
    pub frequencies: Vec<f64>,
    /// `|U| × event_dim`.
    pub embedding: Mat,
    /// `k × coefficients_per_frequency`, holding `√c`.
    pub kernel_amp: Mat,
    pub w_query: Mat,
    pub w_key: Mat,
    pub w_value: Mat,
    pub ln_gain: Mat,
    pub ln_bias: Mat,
    pub w_ff: Mat,
    pub b_ff: Mat,
    /// Recurrent summarizer weights; `0 × 0` when the identity summarizer is used.
    pub w_rec_in: Mat,
    pub w_rec_hidden: Mat,
    pub b_rec: Mat,
}

pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl EncoderParams {
    pub fn init(
        config: EncoderConfig,
        vocab_size: usize,
        frequencies: Vec<f64>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if frequencies.len() != config.num_frequencies
            || frequencies.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::Parameter(format!(
                "expected {} positive frequencies, got {frequencies:?}",
                config.num_frequencies
            )));
        }
        let d = config.model_dim();
        let n_coef = config.coefficients_per_frequency();
        let slots = config.slots_per_frequency();
        // uniform c = 1/slots
        let kernel_amp = Mat::from_fn(config.num_frequencies, n_coef, |_, _| {
            (1.0 / slots as f64).sqrt()
        });
        let (w_rec_in, w_rec_hidden, b_rec) = match config.summarizer {
            Summarizer::Identity => (Mat::zeros(0, 0), Mat::zeros(0, 0), Mat::zeros(0, 0)),
            Summarizer::Recurrent => (
                uniform_init(d, d, d, rng),
                uniform_init(d, d, d, rng),
                Mat::zeros(1, d),
            ),
        };
        Ok(Self {
            embedding: uniform_init(vocab_size, config.event_dim, vocab_size, rng),
            kernel_amp,
            w_query: uniform_init(d, d, d, rng),
            w_key: uniform_init(d, d, d, rng),
            w_value: uniform_init(d, d, d, rng),
            ln_gain: Mat::from_fn(1, d, |_, _| 1.0),
            ln_bias: Mat::zeros(1, d),
            w_ff: uniform_init(d, d, d, rng),
            b_ff: Mat::zeros(1, d),
            w_rec_in,
            w_rec_hidden,
            b_rec,
            frequencies,
            config,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.config.model_dim()
    }

    /// Kernel coefficients `c` (the squares of the stored amplitudes).
    pub fn kernel_coefficients(&self) -> Mat {
        let mut c = self.kernel_amp.clone();
        c.as_mut_slice().iter_mut().for_each(|a| *a *= *a);
        c
    }
}

/// Geometric grid of `k` frequencies spanning the positive inter-event times.
pub fn frequency_grid(deltas: impl IntoIterator<Item = f64>, k: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in deltas {
        if d > 0.0 && d.is_finite() {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if !lo.is_finite() {
        lo = 1.0;
        hi = 1.0;
    }
    if k <= 1 {
        return vec![(lo * hi).sqrt(); k];
    }
    let ratio = hi / lo;
    (0..k)
        .map(|f| lo * ratio.powf(f as f64 / (k - 1) as f64))
        .collect()
}

/// Sinusoidal position encoding of length `dim` (must be even).
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    write_positional(pos, &mut out);
    out
}

fn write_positional(pos: usize, out: &mut [f64]) {
    let dim = out.len();
    for j in 0..dim / 2 {
        let angle = pos as f64 / 10000f64.powf((2 * j) as f64 / dim as f64);
        out[2 * j] = angle.sin();
        out[2 * j + 1] = angle.cos();
    }
}

/// Basis value for one slot of one frequency: 1, cos(jπt/ω), sin(jπt/ω), …
#[inline]
fn kernel_basis(slot: usize, delta: f64, omega: f64) -> f64 {
    if slot == 0 {
        return 1.0;
    }
    let harmonic = slot.div_ceil(2) as f64;
    let arg = harmonic * std::f64::consts::PI * delta / omega;
    if slot % 2 == 1 {
        arg.cos()
    } else {
        arg.sin()
    }
}

#[inline]
fn coefficient_index(slot: usize) -> usize {
    slot.div_ceil(2)
}

/// Per-frequency feature map φ_ω(Δt) for frequency row `f`.
pub fn frequency_feature_map(delta: f64, params: &EncoderParams, f: usize) -> Vec<f64> {
    let slots = params.config.slots_per_frequency();
    let omega = params.frequencies[f];
    (0..slots)
        .map(|s| params.kernel_amp.get(f, coefficient_index(s)) * kernel_basis(s, delta, omega))
        .collect()
}

/// Temporal encoding φ(Δt) of length `time_dim`.
pub fn temporal_encoding(delta: f64, params: &EncoderParams) -> Vec<f64> {
    let mut out = vec![0.0; params.config.time_dim];
    write_temporal(delta, params, &mut out, None);
    out
}

/// Writes φ(Δt) into `out`; optionally records the raw basis values
/// (frequency-major) for backprop.
fn write_temporal(delta: f64, params: &EncoderParams, out: &mut [f64], basis: Option<&mut [f64]>) {
    let cfg = &params.config;
    let slots = cfg.slots_per_frequency();
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut basis = basis;
    for (f, &omega) in params.frequencies.iter().enumerate() {
        let offset = match cfg.temporal_layout {
            TemporalLayout::Summed => 0,
            TemporalLayout::Stacked => f * slots,
        };
        for s in 0..slots {
            let b = kernel_basis(s, delta, omega);
            if let Some(buf) = basis.as_deref_mut() {
                buf[f * slots + s] = b;
            }
            out[offset + s] += params.kernel_amp.get(f, coefficient_index(s)) * b;
        }
    }
}

/// Input matrix `X` (`L × d`) for a sequence. Times must already be in model
/// units.
pub fn embed_sequence(seq: &EventSequence, params: &EncoderParams) -> Result<Mat> {
    embed_with_basis(seq, params, 1.0).map(|(x, _)| x)
}

pub(crate) fn embed_with_basis(
    seq: &EventSequence,
    params: &EncoderParams,
    time_scale: f64,
) -> Result<(Mat, Mat)> {
    let cfg = &params.config;
    let (me, mp, mt) = (cfg.event_dim, cfg.position_dim, cfg.time_dim);
    let d = cfg.model_dim();
    let l = seq.len();
    let basis_width = params.frequencies.len() * cfg.slots_per_frequency();
    let mut x = Mat::zeros(l, d);
    let mut basis = Mat::zeros(l, basis_width);
    let vocab = params.vocab_size();
    let deltas = seq.time_deltas();
    for (i, e) in seq.events.iter().enumerate() {
        if e.account >= vocab {
            return Err(Error::UnknownAccount {
                index: e.account,
                size: vocab,
            });
        }
        let row = x.row_mut(i);
        row[..me].copy_from_slice(params.embedding.row(e.account));
        write_positional(i, &mut row[me..me + mp]);
        write_temporal(
            deltas[i] / time_scale,
            params,
            &mut row[me + mp..me + mp + mt],
            Some(basis.row_mut(i)),
        );
    }
    Ok((x, basis))
}

/// Output of the encoder for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// `L × d`; row `i` summarizes events `0..=i`.
    pub contexts: Mat,
    /// `L × L`, lower-triangular, rows sum to 1.
    pub attention: Mat,
    /// `L × d` input rows.
    pub inputs: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout disabled; fully deterministic.
    Eval,
    /// Dropout enabled with masks drawn from `seed`.
    Train { seed: u64 },
}

/// Every intermediate the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub x: Mat,
    pub basis: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub attn: Mat,
    pub ln_norm: Mat,
    pub ln_inv_std: Vec<f64>,
    pub dropout_scale: Option<Mat>,
    pub z: Mat,
    pub ff_act: Mat,
    pub h_out: Mat,
    pub contexts: Mat,
}

fn check_finite(m: &Mat, stage: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(stage))
    }
}

/// Causal single-head attention over input rows `x`.
pub(crate) fn attention_forward(
    x: Mat,
    basis: Mat,
    params: &EncoderParams,
    mode: Mode,
) -> Result<ForwardCache> {
    check_finite(&x, "encoder input")?;
    let l = x.rows();
    let d = x.cols();
    let q = x.matmul(&params.w_query);
    let k = x.matmul(&params.w_key);
    let v = x.matmul(&params.w_value);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut attn = Mat::zeros(l, l);
    for i in 0..l {
        let qi = q.row(i);
        let row = &mut attn.row_mut(i)[..=i];
        for (j, a) in row.iter_mut().enumerate() {
            *a = dot(qi, k.row(j)) * inv_sqrt_d;
        }
        crate::linalg::softmax_in_place(row);
    }
    check_finite(&attn, "attention weights")?;

    // H_attn = A V, skipping the masked upper triangle
    let mut h_attn = Mat::zeros(l, d);
    for i in 0..l {
        let out = h_attn.row_mut(i);
        for j in 0..=i {
            let a = attn.get(i, j);
            for (o, &vv) in out.iter_mut().zip(v.row(j)) {
                *o += a * vv;
            }
        }
    }

    let mut ln_norm = Mat::zeros(l, d);
    let mut ln_inv_std = vec![0.0; l];
    let mut z = Mat::zeros(l, d);
    for i in 0..l {
        let h = h_attn.row(i);
        let mean = h.iter().sum::<f64>() / d as f64;
        let var = h.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        ln_inv_std[i] = inv_std;
        for c in 0..d {
            let n = (h[c] - mean) * inv_std;
            ln_norm.set(i, c, n);
            z.set(i, c, n * params.ln_gain.get(0, c) + params.ln_bias.get(0, c));
        }
    }

    let dropout_scale = match mode {
        Mode::Train { seed } if params.config.dropout > 0.0 => {
            let p = params.config.dropout;
            let keep = 1.0 / (1.0 - p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = Mat::from_fn(l, d, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
            for (zv, m) in z.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *zv *= m;
            }
            Some(mask)
        }
        _ => None,
    };

    // feed-forward with residual: H_out = Z + tanh(Z W_ff + b_ff)
    let mut ff_act = z.matmul(&params.w_ff);
    for i in 0..l {
        for (a, &b) in ff_act.row_mut(i).iter_mut().zip(params.b_ff.row(0)) {
            *a = (*a + b).tanh();
        }
    }
    let mut h_out = z.clone();
    h_out.add_assign(&ff_act);
    check_finite(&h_out, "feed-forward output")?;

    let contexts = match params.config.summarizer {
        Summarizer::Identity => h_out.clone(),
        Summarizer::Recurrent => {
            let mut hs = Mat::zeros(l, d);
            let mut prev = vec![0.0; d];
            for i in 0..l {
                let mut pre = params.b_rec.row(0).to_vec();
                crate::linalg::vec_mat_acc(h_out.row(i), &params.w_rec_in, &mut pre);
                crate::linalg::vec_mat_acc(&prev, &params.w_rec_hidden, &mut pre);
                pre.iter_mut().for_each(|p| *p = p.tanh());
                hs.row_mut(i).copy_from_slice(&pre);
                prev = pre;
            }
            check_finite(&hs, "recurrent summarizer")?;
            hs
        }
    };

    Ok(ForwardCache {
        x,
        basis,
        q,
        k,
        v,
        attn,
        ln_norm,
        ln_inv_std,
        dropout_scale,
        z,
        ff_act,
        h_out,
        contexts,
    })
}

/// Runs the attention block on a precomputed input matrix.
pub fn masked_self_attention(x: &Mat, params: &EncoderParams, mode: Mode) -> Result<EncodedSequence> {
    let basis = Mat::zeros(x.rows(), 0);
    let cache = attention_forward(x.clone(), basis, params, mode)?;
    Ok(EncodedSequence {
        contexts: cache.contexts,
        attention: cache.attn,
        inputs: cache.x,
    })
}

pub(crate) fn forward_cache(
    seq: &EventSequence,
    params: &EncoderParams,
    time_scale: f64,
    mode: Mode,
) -> Result<ForwardCache> {
    let (x, basis) = embed_with_basis(seq, params, time_scale)?;
    attention_forward(x, basis, params, mode)
}

/// Full encoder: embedding followed by masked self-attention. Inter-event
/// times are divided by `time_scale` before the temporal encoding.
pub fn encode(
    seq: &EventSequence,
    params: &EncoderParams,
    time_scale: f64,
    mode: Mode,
) -> Result<EncodedSequence> {
    let cache = forward_cache(seq, params, time_scale, mode)?;
    Ok(EncodedSequence {
        contexts: cache.contexts,
        attention: cache.attn,
        inputs: cache.x,
    })
}
