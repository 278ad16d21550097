use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sigmoid, HawkesModel, Kernel};
use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HawkesFitConfig {
    /// Embedding width of the factorized excitation.
    pub rank: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Observation window `[0, horizon]` for every sequence. When absent each
    /// sequence is observed from its first to its last event.
    pub horizon: Option<f64>,
    /// Starting decay rate; defaults to the inverse mean gap.
    pub initial_decay: Option<f64>,
    /// Stop once an epoch improves the mean log-likelihood by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for HawkesFitConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            epochs: 300,
            learning_rate: 0.05,
            horizon: None,
            initial_decay: None,
            tolerance: 1e-9,
            seed: 0,
        }
    }
}

impl HawkesFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || !(self.learning_rate > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Parameter(
                "rank and learning_rate must be positive, tolerance non-negative".into(),
            ));
        }
        if self.horizon.is_some_and(|h| !(h > 0.0 && h.is_finite()))
            || self.initial_decay.is_some_and(|b| !(b > 0.0 && b.is_finite()))
        {
            return Err(Error::Parameter("horizon and initial_decay must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HawkesFit {
    pub model: HawkesModel,
    /// Mean per-event log-likelihood after initialization and after every
    /// accepted step. Non-decreasing.
    pub log_likelihood: Vec<f64>,
}

struct Layout {
    accounts: usize,
    rank: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.accounts + 1 + 2 * self.accounts * self.rank
    }

    // [log μ | log β | receiver | sender]
    fn unpack(&self, theta: &[f64]) -> Result<HawkesModel> {
        let n = self.accounts;
        let block = n * self.rank;
        let mu = theta[..n].iter().map(|x| x.exp()).collect();
        let beta = theta[n].exp();
        let receiver = Mat::from_vec(n, self.rank, theta[n + 1..n + 1 + block].to_vec());
        let sender = Mat::from_vec(n, self.rank, theta[n + 1 + block..].to_vec());
        HawkesModel::factorized(mu, receiver, sender, beta)
    }
}

struct Terms {
    ll: f64,
    d_mu: Vec<f64>,
    d_alpha: Mat,
    d_beta: f64,
}

/// Log-likelihood on `[start, end]` with its gradient w.r.t. `μ`, `α` and `β`.
fn sequence_terms(k: &Kernel, seq: &EventSequence, start: f64, end: f64) -> Terms {
    let n = k.mu.len();
    let beta = k.beta;
    let mut r = vec![0.0; n];
    // d[j] = Σ Δ e^{−βΔ}, so ∂(β r_j)/∂β = r_j − β d_j
    let mut d = vec![0.0; n];
    let mut t = start;
    let mut ll = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_alpha = Mat::zeros(n, n);
    let mut d_beta = 0.0;
    for e in &seq.events {
        let delta = e.time - t;
        let f = (-beta * delta).exp();
        for (dj, rj) in d.iter_mut().zip(r.iter_mut()) {
            *dj = (*dj + delta * *rj) * f;
            *rj *= f;
        }
        let i = e.account;
        let lam = k.rate(i, &r);
        let g = 1.0 / lam;
        ll += lam.ln();
        d_mu[i] += g;
        for (da, rj) in d_alpha.row_mut(i).iter_mut().zip(&r) {
            *da += g * beta * rj;
        }
        let mut s = 0.0;
        for ((a, rj), dj) in k.alpha.row(i).iter().zip(&r).zip(&d) {
            s += a * (rj - beta * dj);
        }
        d_beta += g * s;
        r[i] += 1.0;
        t = e.time;
    }
    let span = end - start;
    ll -= k.mu.iter().sum::<f64>() * span;
    d_mu.iter_mut().for_each(|x| *x -= span);
    let mut tail = vec![0.0; n];
    let mut tail_dbeta = vec![0.0; n];
    for e in &seq.events {
        let w = end - e.time;
        let ex = (-beta * w).exp();
        tail[e.account] += -(-beta * w).exp_m1();
        tail_dbeta[e.account] += w * ex;
    }
    for j in 0..n {
        ll -= k.emitted[j] * tail[j];
        d_beta -= k.emitted[j] * tail_dbeta[j];
        for i in 0..n {
            d_alpha.add_at(i, j, -tail[j]);
        }
    }
    Terms {
        ll,
        d_mu,
        d_alpha,
        d_beta,
    }
}

struct Problem<'a> {
    data: &'a [EventSequence],
    windows: Vec<(f64, f64)>,
    layout: Layout,
    events: f64,
}

impl Problem<'_> {
    /// Mean per-event log-likelihood and its gradient in the packed space.
    fn objective(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let model = self.layout.unpack(theta)?;
        let k = Kernel::new(&model);
        let parts: Vec<Terms> = self
            .data
            .par_iter()
            .zip(&self.windows)
            .map(|(seq, &(s, e))| sequence_terms(&k, seq, s, e))
            .collect();
        let n = self.layout.accounts;
        let rank = self.layout.rank;
        let mut ll = 0.0;
        let mut d_mu = vec![0.0; n];
        let mut d_alpha = Mat::zeros(n, n);
        let mut d_beta = 0.0;
        for p in &parts {
            ll += p.ll;
            d_mu.iter_mut().zip(&p.d_mu).for_each(|(a, b)| *a += b);
            d_alpha.add_assign(&p.d_alpha);
            d_beta += p.d_beta;
        }
        if !ll.is_finite() {
            return Err(Error::Divergence(format!("Hawkes log-likelihood {ll}")));
        }
        let scale = 1.0 / self.events;
        let mut grad = vec![0.0; theta.len()];
        for i in 0..n {
            grad[i] = d_mu[i] * model.base_rates[i] * scale;
        }
        grad[n] = d_beta * model.decay * scale;
        let super::Excitation::Factorized { receiver, sender } = &model.excitation else {
            unreachable!("fit always uses the factorized form");
        };
        let block = n * rank;
        let (g_recv, g_send) = grad[n + 1..].split_at_mut(block);
        for i in 0..n {
            for j in 0..n {
                let dz = d_alpha.get(i, j) * sigmoid(dot(receiver.row(i), sender.row(j))) * scale;
                if dz == 0.0 {
                    continue;
                }
                for c in 0..rank {
                    g_recv[i * rank + c] += dz * sender.get(j, c);
                    g_send[j * rank + c] += dz * receiver.get(i, c);
                }
            }
        }
        Ok((ll * scale, grad))
    }
}

fn initial_theta(problem: &Problem, config: &HawkesFitConfig) -> Vec<f64> {
    let n = problem.layout.accounts;
    let rank = problem.layout.rank;
    let mut counts = vec![0usize; n];
    let (mut gap_sum, mut gaps) = (0.0, 0usize);
    for seq in problem.data {
        for e in &seq.events {
            counts[e.account] += 1;
        }
        for w in seq.events.windows(2) {
            gap_sum += w[1].time - w[0].time;
            gaps += 1;
        }
    }
    let observed: f64 = problem.windows.iter().map(|(s, e)| e - s).sum::<f64>().max(f64::MIN_POSITIVE);
    let beta = config.initial_decay.unwrap_or_else(|| {
        if gaps > 0 && gap_sum > 0.0 {
            gaps as f64 / gap_sum
        } else {
            1.0
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = Vec::with_capacity(problem.layout.len());
    theta.extend(counts.iter().map(|&c| (0.5 * c.max(1) as f64 / observed).ln()));
    theta.push(beta.ln());
    // first coordinate fixed so every α starts near softplus(−3) ≈ 0.05
    for side in [1.0, -3.0] {
        for _ in 0..n {
            for c in 0..rank {
                theta.push(if c == 0 { side } else { rng.random_range(-0.1..0.1) });
            }
        }
    }
    theta
}

/// Maximum-likelihood fit of a factorized Hawkes model by Adam ascent. A step
/// that lowers the likelihood is undone and the learning rate halved, so the
/// recorded likelihood never decreases.
pub fn fit_hawkes(data: &[EventSequence], num_accounts: usize, config: &HawkesFitConfig) -> Result<HawkesFit> {
    config.validate()?;
    if num_accounts == 0 {
        return Err(Error::Parameter("num_accounts must be positive".into()));
    }
    let events: usize = data.iter().map(|s| s.len()).sum();
    if events == 0 {
        return Err(Error::Parameter("no events to fit".into()));
    }
    let mut windows = Vec::with_capacity(data.len());
    for seq in data {
        seq.validate(num_accounts)?;
        let (first, last) = match (seq.events.first(), seq.events.last()) {
            (Some(f), Some(l)) => (f.time, l.time),
            _ => (0.0, 0.0),
        };
        let w = match config.horizon {
            Some(h) => {
                if first < 0.0 || last > h {
                    return Err(Error::Domain(format!(
                        "sequence {} spans [{first}, {last}], outside [0, {h}]",
                        seq.id
                    )));
                }
                (0.0, h)
            }
            None => (first, last),
        };
        windows.push(w);
    }
    let problem = Problem {
        data,
        windows,
        layout: Layout {
            accounts: num_accounts,
            rank: config.rank,
        },
        events: events as f64,
    };

    let mut theta = initial_theta(&problem, config);
    let (mut ll, mut grad) = problem.objective(&theta)?;
    let mut history = vec![ll];
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut step = 0i32;
    let mut lr = config.learning_rate;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for epoch in 0..config.epochs {
        let mut improved = false;
        while lr > config.learning_rate * 1e-6 {
            let mut m_next = m.clone();
            let mut v_next = v.clone();
            let t = step + 1;
            let mut cand = theta.clone();
            for i in 0..theta.len() {
                m_next[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v_next[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let mh = m_next[i] / (1.0 - b1.powi(t));
                let vh = v_next[i] / (1.0 - b2.powi(t));
                cand[i] += lr * mh / (vh.sqrt() + eps);
            }
            match problem.objective(&cand) {
                Ok((cand_ll, cand_grad)) if cand_ll >= ll => {
                    let gain = cand_ll - ll;
                    theta = cand;
                    m = m_next;
                    v = v_next;
                    step = t;
                    ll = cand_ll;
                    grad = cand_grad;
                    history.push(ll);
                    improved = gain >= config.tolerance;
                    break;
                }
                _ => lr *= 0.5,
            }
        }
        log::debug!("hawkes epoch {epoch}: mean log-likelihood {ll:.6}, lr {lr:.2e}");
        if !improved {
            break;
        }
    }
    Ok(HawkesFit {
        model: problem.layout.unpack(&theta)?,
        log_likelihood: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::log_likelihood;

    fn data() -> Vec<EventSequence> {
        vec![
            EventSequence::from_pairs("a", &[(0, 0.3), (1, 0.5), (2, 1.1), (0, 1.15), (1, 2.9)]),
            EventSequence::from_pairs("b", &[(2, 0.1), (2, 0.2), (0, 3.0)]),
        ]
    }

    #[test]
    fn packed_gradient_matches_finite_differences() {
        let seqs = data();
        let layout = Layout { accounts: 3, rank: 2 };
        let problem = Problem {
            data: &seqs,
            windows: vec![(0.0, 4.0), (0.0, 4.0)],
            events: 8.0,
            layout,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta: Vec<f64> = (0..problem.layout.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ll, grad) = problem.objective(&theta).unwrap();
        // objective agrees with the reference likelihood
        let model = problem.layout.unpack(&theta).unwrap();
        let direct: f64 = seqs.iter().map(|s| log_likelihood(&model, s, 0.0, 4.0).unwrap()).sum::<f64>() / 8.0;
        assert!((ll - direct).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            let mut q = theta.clone();
            p[i] += h;
            q[i] -= h;
            let fd = (problem.objective(&p).unwrap().0 - problem.objective(&q).unwrap().0) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(grad[i].abs()) + 1e-9,
                "coordinate {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn likelihood_history_is_non_decreasing() {
        let cfg = HawkesFitConfig {
            rank: 2,
            epochs: 40,
            horizon: Some(4.0),
            ..HawkesFitConfig::default()
        };
        let fit = fit_hawkes(&data(), 3, &cfg).unwrap();
        assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
        assert!(fit.log_likelihood.last().unwrap() > &fit.log_likelihood[0]);
    }

    #[test]
    fn rejects_events_outside_horizon() {
        let cfg = HawkesFitConfig {
            horizon: Some(1.0),
            ..HawkesFitConfig::default()
        };
        assert!(fit_hawkes(&data(), 3, &cfg).is_err());
        assert!(fit_hawkes(&[], 3, &HawkesFitConfig::default()).is_err());
    }
}
