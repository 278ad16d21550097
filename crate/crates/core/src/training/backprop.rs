//! Reverse-mode gradients for the fixed AMDN architecture.
//!
//! The forward pass caches every intermediate (see `encoder::ForwardCache`
//! and `density_head::PositionTerms`); the backward pass walks them in
//! reverse, one hand-derived adjoint per operation.

use rayon::prelude::*;

use crate::density_head::{model_interval, position_terms, SequenceNll, LOG_SCALE_MAX, LOG_SCALE_MIN};
use crate::encoder::{forward_cache, ForwardCache, Mode, Summarizer, TemporalLayout};
use crate::error::{Error, Result};
use crate::event_data::{Event, EventSequence};
use crate::linalg::{dot, mat_vec_acc, outer_acc, Mat};
use crate::training::params::{AmdnModel, ModelParams};

/// Sequences padded to a common length with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<String>,
    /// `batch × padded_len` events; entries past `lengths[b]` are padding.
    pub events: Vec<Vec<Event>>,
    pub mask: Vec<Vec<bool>>,
    pub padded_len: usize,
}

impl PaddedBatch {
    /// Pads to the longest sequence, or to `pad_to` if that is longer.
    pub fn new(sequences: &[EventSequence], pad_to: Option<usize>) -> Self {
        let longest = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
        let padded_len = pad_to.map_or(longest, |p| p.max(longest));
        let pad = Event { account: 0, time: 0.0 };
        let mut events = Vec::with_capacity(sequences.len());
        let mut mask = Vec::with_capacity(sequences.len());
        for s in sequences {
            let mut row = s.events.clone();
            let last = row.last().map_or(0.0, |e| e.time);
            row.resize(padded_len, Event { time: last, ..pad });
            let mut m = vec![true; s.len()];
            m.resize(padded_len, false);
            events.push(row);
            mask.push(m);
        }
        Self {
            ids: sequences.iter().map(|s| s.id.clone()).collect(),
            events,
            mask,
            padded_len,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Valid prefix of row `b`.
    pub fn sequence(&self, b: usize) -> EventSequence {
        let valid = self.mask[b].iter().take_while(|m| **m).count();
        EventSequence::new(self.ids[b].clone(), self.events[b][..valid].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    /// Mean per-event NLL over the batch.
    pub loss: f64,
    pub nll: SequenceNll,
    /// Gradient of `loss` w.r.t. every parameter.
    pub grads: ModelParams,
}

/// Dropout seed for sequence `index` of a batch: `None` runs in eval mode.
pub type DropoutSeeds<'a> = Option<&'a dyn Fn(usize) -> u64>;

const REDUCE_CHUNK: usize = 8;

/// Mean per-event NLL and its exact gradient over a batch. Chunks are summed
/// in a fixed order so results do not depend on thread scheduling.
pub fn loss_and_gradients(
    batch: &[EventSequence],
    model: &AmdnModel,
    dropout_seeds: DropoutSeeds<'_>,
) -> Result<LossAndGrad> {
    loss_and_gradients_padded(&PaddedBatch::new(batch, None), model, dropout_seeds)
}

pub fn loss_and_gradients_padded(
    batch: &PaddedBatch,
    model: &AmdnModel,
    dropout_seeds: DropoutSeeds<'_>,
) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let seeds: Vec<Mode> = (0..batch.len())
        .map(|b| match dropout_seeds {
            Some(f) => Mode::Train { seed: f(b) },
            None => Mode::Eval,
        })
        .collect();
    let indices: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<Result<(SequenceNll, ModelParams)>> = indices
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grads = model.params.zeros_like();
            let mut nll = SequenceNll::default();
            for &b in chunk {
                let seq = batch.sequence(b);
                let part = sequence_gradients(&seq, model, seeds[b], &mut grads)?;
                nll.accumulate(&part);
            }
            Ok((nll, grads))
        })
        .collect();

    let mut grads = model.params.zeros_like();
    let mut nll = SequenceNll::default();
    for p in partials {
        let (n, g) = p?;
        nll.accumulate(&n);
        grads.add_assign(&g);
    }
    if nll.predicted == 0 {
        return Err(Error::Parameter("batch has no predicted events".into()));
    }
    let inv = 1.0 / nll.predicted as f64;
    grads.scale(inv);
    Ok(LossAndGrad {
        loss: nll.total * inv,
        nll,
        grads,
    })
}

/// Accumulates the gradient of the summed NLL of one sequence into `grads`.
pub(crate) fn sequence_gradients(
    seq: &EventSequence,
    model: &AmdnModel,
    mode: Mode,
    grads: &mut ModelParams,
) -> Result<SequenceNll> {
    let params = &model.params;
    let cache = forward_cache(seq, &params.encoder, model.time_scale, mode)?;
    let l = seq.len();
    let d = params.encoder.model_dim();
    let ln_scale = model.time_scale.ln();

    let mut nll = SequenceNll::default();
    let mut d_ctx = Mat::zeros(l, d);
    let head = &params.head;
    let g_head = &mut grads.head;
    let k = head.components();
    let mut d_logit_w = vec![0.0; k];
    let mut d_mean = vec![0.0; k];
    let mut d_log_s = vec![0.0; k];

    for i in 1..l {
        let gap = seq.events[i].time - seq.events[i - 1].time;
        let tau = model_interval(gap, model.time_scale, model.min_interval);
        let target = seq.events[i].account;
        let ctx = cache.contexts.row(i - 1);
        let t = position_terms(ctx, head, tau, target);

        let time_nll = -t.time_logpdf + ln_scale;
        nll.time += time_nll;
        nll.types += t.type_nll;
        nll.total += time_nll + t.type_nll;
        nll.type_correct += usize::from(t.correct);
        nll.predicted += 1;

        // time head: d(-log Σ_k exp ℓ_k)/dℓ_k = -r_k
        for c in 0..k {
            let r = t.resp[c];
            let inv_s = (-t.log_scale[c]).exp();
            let z = (t.log_tau - t.means[c]) * inv_s;
            d_logit_w[c] = t.weights[c] - r;
            d_mean[c] = -r * z * inv_s;
            let raw = t.raw_log_scale[c];
            d_log_s[c] = if raw > LOG_SCALE_MIN && raw < LOG_SCALE_MAX {
                -r * (z * z - 1.0)
            } else {
                0.0
            };
        }
        outer_acc(ctx, &d_logit_w, &mut g_head.v_weight);
        outer_acc(ctx, &d_mean, &mut g_head.v_mean);
        outer_acc(ctx, &d_log_s, &mut g_head.v_scale);
        add_row(&mut g_head.b_weight, &d_logit_w);
        add_row(&mut g_head.b_mean, &d_mean);
        add_row(&mut g_head.b_scale, &d_log_s);
        let dc = d_ctx.row_mut(i - 1);
        mat_vec_acc(&head.v_weight, &d_logit_w, dc);
        mat_vec_acc(&head.v_mean, &d_mean, dc);
        mat_vec_acc(&head.v_scale, &d_log_s, dc);

        // type head: softmax cross-entropy through a tanh hidden layer
        let mut d_logits = t.type_probs.clone();
        d_logits[target] -= 1.0;
        outer_acc(&t.type_hidden, &d_logits, &mut g_head.w_type_out);
        add_row(&mut g_head.b_type_out, &d_logits);
        let mut d_hidden = vec![0.0; t.type_hidden.len()];
        mat_vec_acc(&head.w_type_out, &d_logits, &mut d_hidden);
        for (dh, h) in d_hidden.iter_mut().zip(&t.type_hidden) {
            *dh *= 1.0 - h * h;
        }
        outer_acc(ctx, &d_hidden, &mut g_head.w_type_hidden);
        add_row(&mut g_head.b_type_hidden, &d_hidden);
        mat_vec_acc(&head.w_type_hidden, &d_hidden, dc);
    }
    if !nll.total.is_finite() {
        return Err(Error::numeric(format!("loss of sequence {}", seq.id)));
    }

    encoder_backward(seq, model, &cache, d_ctx, grads);
    Ok(nll)
}

#[inline]
fn add_row(acc: &mut Mat, g: &[f64]) {
    for (a, b) in acc.row_mut(0).iter_mut().zip(g) {
        *a += b;
    }
}

fn encoder_backward(
    seq: &EventSequence,
    model: &AmdnModel,
    cache: &ForwardCache,
    d_ctx: Mat,
    grads: &mut ModelParams,
) {
    let enc = &model.params.encoder;
    let g = &mut grads.encoder;
    let cfg = &enc.config;
    let l = seq.len();
    let d = cfg.model_dim();

    // summarizer
    let d_hout = match cfg.summarizer {
        Summarizer::Identity => d_ctx,
        Summarizer::Recurrent => {
            let mut d_hout = Mat::zeros(l, d);
            let mut carry = vec![0.0; d];
            let zero = vec![0.0; d];
            for i in (0..l).rev() {
                let h = cache.contexts.row(i);
                let d_pre: Vec<f64> = d_ctx
                    .row(i)
                    .iter()
                    .zip(&carry)
                    .zip(h)
                    .map(|((a, b), hv)| (a + b) * (1.0 - hv * hv))
                    .collect();
                let prev = if i == 0 { &zero[..] } else { cache.contexts.row(i - 1) };
                outer_acc(cache.h_out.row(i), &d_pre, &mut g.w_rec_in);
                outer_acc(prev, &d_pre, &mut g.w_rec_hidden);
                add_row(&mut g.b_rec, &d_pre);
                mat_vec_acc(&enc.w_rec_in, &d_pre, d_hout.row_mut(i));
                carry.iter_mut().for_each(|c| *c = 0.0);
                mat_vec_acc(&enc.w_rec_hidden, &d_pre, &mut carry);
            }
            d_hout
        }
    };

    // H_out = Z + tanh(Z W_ff + b_ff)
    let mut d_pre = d_hout.clone();
    for (dp, a) in d_pre.as_mut_slice().iter_mut().zip(cache.ff_act.as_slice()) {
        *dp *= 1.0 - a * a;
    }
    cache.z.t_matmul_into(&d_pre, &mut g.w_ff);
    for i in 0..l {
        add_row(&mut g.b_ff, d_pre.row(i));
    }
    let mut d_z = d_hout;
    d_z.add_assign(&d_pre.matmul_t(&enc.w_ff));

    if let Some(mask) = &cache.dropout_scale {
        for (dz, m) in d_z.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *dz *= m;
        }
    }

    // layer norm
    let mut d_h = Mat::zeros(l, d);
    let gain = enc.ln_gain.row(0);
    for i in 0..l {
        let n = cache.ln_norm.row(i);
        let dz = d_z.row(i);
        let mut dn = vec![0.0; d];
        for c in 0..d {
            g.ln_gain.add_at(0, c, dz[c] * n[c]);
            g.ln_bias.add_at(0, c, dz[c]);
            dn[c] = dz[c] * gain[c];
        }
        let mean_dn = dn.iter().sum::<f64>() / d as f64;
        let mean_dn_n = dot(&dn, n) / d as f64;
        let inv_std = cache.ln_inv_std[i];
        for (c, out) in d_h.row_mut(i).iter_mut().enumerate() {
            *out = inv_std * (dn[c] - mean_dn - n[c] * mean_dn_n);
        }
    }

    // H = A V, A = softmax(Q Kᵀ / √d) under the causal mask
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut d_q = Mat::zeros(l, d);
    let mut d_k = Mat::zeros(l, d);
    let mut d_v = Mat::zeros(l, d);
    let mut d_a = vec![0.0; l];
    for i in 0..l {
        let dh = d_h.row(i);
        let a_row = cache.attn.row(i);
        for j in 0..=i {
            d_a[j] = dot(dh, cache.v.row(j));
            let a = a_row[j];
            for (o, &x) in d_v.row_mut(j).iter_mut().zip(dh) {
                *o += a * x;
            }
        }
        let weighted: f64 = (0..=i).map(|j| a_row[j] * d_a[j]).sum();
        for j in 0..=i {
            let ds = a_row[j] * (d_a[j] - weighted) * inv_sqrt_d;
            if ds == 0.0 {
                continue;
            }
            for (o, &kv) in d_q.row_mut(i).iter_mut().zip(cache.k.row(j)) {
                *o += ds * kv;
            }
            for (o, &qv) in d_k.row_mut(j).iter_mut().zip(cache.q.row(i)) {
                *o += ds * qv;
            }
        }
    }
    cache.x.t_matmul_into(&d_q, &mut g.w_query);
    cache.x.t_matmul_into(&d_k, &mut g.w_key);
    cache.x.t_matmul_into(&d_v, &mut g.w_value);
    let mut d_x = d_q.matmul_t(&enc.w_query);
    d_x.add_assign(&d_k.matmul_t(&enc.w_key));
    d_x.add_assign(&d_v.matmul_t(&enc.w_value));

    // inputs: embedding rows and kernel amplitudes (positions are fixed)
    let (me, mp) = (cfg.event_dim, cfg.position_dim);
    let slots = cfg.slots_per_frequency();
    for (i, e) in seq.events.iter().enumerate() {
        let dx = d_x.row(i);
        for (o, v) in g.embedding.row_mut(e.account).iter_mut().zip(&dx[..me]) {
            *o += v;
        }
        let d_phi = &dx[me + mp..];
        let basis = cache.basis.row(i);
        for f in 0..enc.frequencies.len() {
            let offset = match cfg.temporal_layout {
                TemporalLayout::Summed => 0,
                TemporalLayout::Stacked => f * slots,
            };
            for s in 0..slots {
                g.kernel_amp
                    .add_at(f, s.div_ceil(2), d_phi[offset + s] * basis[f * slots + s]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::params::ModelConfig;

    fn tiny_model() -> AmdnModel {
        let mut cfg = ModelConfig::default();
        cfg.encoder.event_dim = 3;
        cfg.encoder.position_dim = 2;
        cfg.encoder.time_dim = 3;
        cfg.encoder.num_frequencies = 2;
        cfg.encoder.dropout = 0.0;
        cfg.head.components = 2;
        cfg.head.type_hidden = 4;
        AmdnModel {
            params: ModelParams::init(&cfg, 3, vec![0.5, 3.0], 1).unwrap(),
            time_scale: 1.3,
            min_interval: 1e-4,
        }
    }

    fn seqs() -> Vec<EventSequence> {
        vec![
            EventSequence::from_pairs("a", &[(0, 0.0), (1, 0.7), (2, 0.9), (0, 2.5)]),
            EventSequence::from_pairs("b", &[(2, 1.0), (2, 1.0), (1, 4.0)]),
        ]
    }

    #[test]
    fn padding_is_inert() {
        let model = tiny_model();
        let plain = loss_and_gradients(&seqs(), &model, None).unwrap();
        let padded = loss_and_gradients_padded(&PaddedBatch::new(&seqs(), Some(12)), &model, None).unwrap();
        assert_eq!(plain.loss, padded.loss);
        assert_eq!(plain.grads, padded.grads);
    }

    #[test]
    fn duplicated_batch_keeps_mean() {
        let model = tiny_model();
        let once = loss_and_gradients(&seqs(), &model, None).unwrap();
        let doubled: Vec<_> = seqs().into_iter().chain(seqs()).collect();
        let twice = loss_and_gradients(&doubled, &model, None).unwrap();
        assert!((once.loss - twice.loss).abs() < 1e-12);
    }

    #[test]
    fn unused_last_position_gets_no_gradient() {
        // with one 2-event sequence only context 0 is scored: the second
        // event's input row receives no gradient
        let model = tiny_model();
        let seq = EventSequence::from_pairs("s", &[(0, 0.0), (1, 1.0)]);
        let out = loss_and_gradients(&[seq], &model, None).unwrap();
        assert!(out.grads.encoder.embedding.row(0).iter().any(|g| *g != 0.0));
        assert!(out.grads.encoder.embedding.row(1).iter().all(|g| *g == 0.0));
        assert!(out.grads.encoder.embedding.row(2).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(loss_and_gradients(&[], &tiny_model(), None).is_err());
    }
}
