//! Multivariate Hawkes processes with an exponential kernel `κ(Δ) = β e^{−βΔ}`.
//!
//! `α[i][j]` is the excitation that an event of account `j` adds to the
//! intensity of account `i`.

mod fit;
mod scenario;
mod simulate;

pub use fit::{fit_hawkes, HawkesFit, HawkesFitConfig};
pub use scenario::{account_names, make_scenario, Scenario, ScenarioConfig};
pub use simulate::{simulate, simulate_with, DEFAULT_EVENT_CAP};

use serde::{Deserialize, Serialize};

use crate::density_head::SequenceNll;
use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Excitation {
    Dense(Mat),
    /// `α[i][j] = softplus(receiver[i] · sender[j])`.
    Factorized { receiver: Mat, sender: Mat },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    pub base_rates: Vec<f64>,
    pub excitation: Excitation,
    pub decay: f64,
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl HawkesModel {
    pub fn dense(base_rates: Vec<f64>, alpha: Mat, decay: f64) -> Result<Self> {
        let m = Self {
            base_rates,
            excitation: Excitation::Dense(alpha),
            decay,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn factorized(base_rates: Vec<f64>, receiver: Mat, sender: Mat, decay: f64) -> Result<Self> {
        let m = Self {
            base_rates,
            excitation: Excitation::Factorized { receiver, sender },
            decay,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.base_rates.len();
        if n == 0 {
            return Err(Error::Parameter("Hawkes model needs at least one account".into()));
        }
        if self.base_rates.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Parameter("base rates must be positive and finite".into()));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(Error::Parameter(format!("decay {} must be positive", self.decay)));
        }
        match &self.excitation {
            Excitation::Dense(a) => {
                if a.shape() != (n, n) {
                    return Err(Error::Parameter(format!(
                        "excitation matrix is {:?}, expected {n}x{n}",
                        a.shape()
                    )));
                }
                if a.as_slice().iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::Parameter("excitation must be non-negative".into()));
                }
            }
            Excitation::Factorized { receiver, sender } => {
                if receiver.rows() != n || sender.rows() != n || receiver.cols() != sender.cols() {
                    return Err(Error::Parameter(format!(
                        "embedding shapes {:?} and {:?} do not match {n} accounts",
                        receiver.shape(),
                        sender.shape()
                    )));
                }
                if !receiver.is_finite() || !sender.is_finite() {
                    return Err(Error::Parameter("embeddings must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn num_accounts(&self) -> usize {
        self.base_rates.len()
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        match &self.excitation {
            Excitation::Dense(a) => a.get(i, j),
            Excitation::Factorized { receiver, sender } => {
                softplus(crate::linalg::dot(receiver.row(i), sender.row(j)))
            }
        }
    }

    pub fn alpha_matrix(&self) -> Mat {
        let n = self.num_accounts();
        Mat::from_fn(n, n, |i, j| self.alpha(i, j))
    }

    /// Spectral radius of `α`; the process is stationary when it is below 1.
    pub fn branching_ratio(&self) -> f64 {
        spectral_radius(&self.alpha_matrix())
    }

    pub fn check_stable(&self) -> Result<()> {
        let rho = self.branching_ratio();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Stability(format!(
                "branching ratio {rho:.4} is not below 1"
            )))
        }
    }
}

/// Perron root of a non-negative square matrix. Power iteration on `A + I`
/// with Collatz-Wielandt bounds; returns the upper bound.
pub fn spectral_radius(a: &Mat) -> f64 {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut v = vec![1.0; n];
    let mut upper = f64::INFINITY;
    for _ in 0..100_000 {
        let mut w = v.clone();
        crate::linalg::mat_vec_acc(a, &v, &mut w);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi / vi;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        upper = hi - 1.0;
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let norm = w.iter().cloned().fold(0.0, f64::max);
        v = w.into_iter().map(|x| x / norm).collect();
    }
    upper.max(0.0)
}

/// Precomputed `α`, its column sums and the decay.
pub(crate) struct Kernel<'a> {
    pub mu: &'a [f64],
    pub alpha: Mat,
    /// `Σ_i α[i][j]`: total excitation emitted by one event of account `j`.
    pub emitted: Vec<f64>,
    pub beta: f64,
}

impl<'a> Kernel<'a> {
    pub fn new(model: &'a HawkesModel) -> Self {
        let alpha = model.alpha_matrix();
        let n = alpha.rows();
        let mut emitted = vec![0.0; n];
        for i in 0..n {
            for (e, a) in emitted.iter_mut().zip(alpha.row(i)) {
                *e += a;
            }
        }
        Self {
            mu: &model.base_rates,
            alpha,
            emitted,
            beta: model.decay,
        }
    }

    /// `λ_i` given per-account decayed counts `r[j] = Σ e^{−βΔ}`.
    #[inline]
    pub fn rate(&self, i: usize, r: &[f64]) -> f64 {
        self.mu[i] + self.beta * crate::linalg::dot(self.alpha.row(i), r)
    }

    #[inline]
    pub fn total_rate(&self, r: &[f64]) -> f64 {
        self.mu.iter().sum::<f64>() + self.beta * crate::linalg::dot(&self.emitted, r)
    }

    /// `∫_a^{a+δ} Σ_i λ_i` starting from state `r` at `a`.
    #[inline]
    pub fn total_integral(&self, r: &[f64], delta: f64) -> f64 {
        self.mu.iter().sum::<f64>() * delta
            + crate::linalg::dot(&self.emitted, r) * (-(-self.beta * delta).exp_m1())
    }
}

fn check_history(model: &HawkesModel, seq: &EventSequence) -> Result<()> {
    seq.validate(model.num_accounts())
}

/// `λ_account(t)` given events strictly before `t`.
pub fn intensity(model: &HawkesModel, account: usize, t: f64, history: &EventSequence) -> Result<f64> {
    if account >= model.num_accounts() {
        return Err(Error::UnknownAccount {
            index: account,
            size: model.num_accounts(),
        });
    }
    if let Some(last) = history.events.last() {
        if t < last.time {
            return Err(Error::Domain(format!(
                "intensity requested at {t}, before the last history event at {}",
                last.time
            )));
        }
    }
    let beta = model.decay;
    let excitation: f64 = history
        .events
        .iter()
        .filter(|e| e.time < t)
        .map(|e| model.alpha(account, e.account) * beta * (-beta * (t - e.time)).exp())
        .sum();
    Ok(model.base_rates[account] + excitation)
}

/// Exact log-likelihood on the window `[start, end]`: every event's log
/// intensity minus the integrated total intensity.
pub fn log_likelihood(model: &HawkesModel, seq: &EventSequence, start: f64, end: f64) -> Result<f64> {
    check_history(model, seq)?;
    if let (Some(f), Some(l)) = (seq.events.first(), seq.events.last()) {
        if f.time < start || l.time > end {
            return Err(Error::Domain(format!(
                "events span [{}, {}] outside the window [{start}, {end}]",
                f.time, l.time
            )));
        }
    }
    let k = Kernel::new(model);
    let n = model.num_accounts();
    let mut r = vec![0.0; n];
    let mut t = start;
    let mut ll = 0.0;
    for e in &seq.events {
        let f = (-k.beta * (e.time - t)).exp();
        ll -= k.total_integral(&r, e.time - t);
        r.iter_mut().for_each(|x| *x *= f);
        ll += k.rate(e.account, &r).ln();
        r[e.account] += 1.0;
        t = e.time;
    }
    ll -= k.total_integral(&r, end - t);
    Ok(ll)
}

/// Per-event negative log-likelihood of events `1..L`, each conditioned on the
/// events before it. Splits into a timing part (total intensity) and a type
/// part (share of the event's account), so it is comparable with the
/// mixture-density model's NLL in the same time units.
pub fn conditional_nll(model: &HawkesModel, seq: &EventSequence) -> Result<SequenceNll> {
    check_history(model, seq)?;
    let k = Kernel::new(model);
    let n = model.num_accounts();
    let mut r = vec![0.0; n];
    let mut out = SequenceNll::default();
    let Some(first) = seq.events.first() else {
        return Ok(out);
    };
    r[first.account] = 1.0;
    let mut t = first.time;
    let mut rates = vec![0.0; n];
    for e in &seq.events[1..] {
        let delta = e.time - t;
        let compensator = k.total_integral(&r, delta);
        let f = (-k.beta * delta).exp();
        r.iter_mut().for_each(|x| *x *= f);
        for (i, slot) in rates.iter_mut().enumerate() {
            *slot = k.rate(i, &r);
        }
        let total: f64 = rates.iter().sum();
        let time_nll = compensator - total.ln();
        let type_nll = total.ln() - rates[e.account].ln();
        let argmax = rates
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        out.time += time_nll;
        out.types += type_nll;
        out.total += time_nll + type_nll;
        out.type_correct += usize::from(argmax == e.account);
        out.predicted += 1;
        r[e.account] += 1.0;
        t = e.time;
    }
    Ok(out)
}

/// Compensator increments `Λ(t_i) − Λ(t_{i−1})` of the total intensity,
/// starting from `start`. Unit-exponential under the true model.
pub fn rescaled_intervals(model: &HawkesModel, seq: &EventSequence, start: f64) -> Result<Vec<f64>> {
    check_history(model, seq)?;
    let k = Kernel::new(model);
    let mut r = vec![0.0; model.num_accounts()];
    let mut t = start;
    let mut out = Vec::with_capacity(seq.len());
    for e in &seq.events {
        out.push(k.total_integral(&r, e.time - t));
        let f = (-k.beta * (e.time - t)).exp();
        r.iter_mut().for_each(|x| *x *= f);
        r[e.account] += 1.0;
        t = e.time;
    }
    Ok(out)
}
