use serde::{Deserialize, Serialize};

use super::InfluenceMatrix;
use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedAccount {
    pub account: usize,
    pub score: f64,
}

/// PageRank over the graph with an edge `u → v` of weight `influence(v, u)`
/// for every observed pair with `u ≠ v`. Accounts without outgoing weight
/// spread their mass uniformly.
pub fn pagerank(influence: &InfluenceMatrix, damping: f64) -> Result<Vec<f64>> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Parameter(format!("damping {damping} must lie in (0, 1)")));
    }
    let n = influence.num_accounts();
    if n == 0 {
        return Ok(Vec::new());
    }
    // out[u] = Σ_v w(u → v)
    let mut out = vec![0.0; n];
    for v in 0..n {
        for (u, o) in out.iter_mut().enumerate() {
            if u != v {
                *o += influence.get(v, u).unwrap_or(0.0);
            }
        }
    }
    let uniform = 1.0 / n as f64;
    let mut p = vec![uniform; n];
    for _ in 0..MAX_ITERATIONS {
        let dangling: f64 = (0..n).filter(|&u| out[u] == 0.0).map(|u| p[u]).sum();
        let mut next = vec![(1.0 - damping) * uniform + damping * dangling * uniform; n];
        for (v, slot) in next.iter_mut().enumerate() {
            for u in 0..n {
                if u != v && out[u] > 0.0 {
                    if let Some(w) = influence.get(v, u) {
                        *slot += damping * w / out[u] * p[u];
                    }
                }
            }
        }
        let residual: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if residual < TOLERANCE {
            let total: f64 = p.iter().sum();
            return Ok(p.into_iter().map(|x| x / total).collect());
        }
    }
    Err(Error::Numeric {
        stage: format!("pagerank (no convergence in {MAX_ITERATIONS} iterations)"),
    })
}

/// The `top_k` highest-scoring accounts; equal scores keep index order.
pub fn pagerank_influence(influence: &InfluenceMatrix, damping: f64, top_k: usize) -> Result<Vec<RankedAccount>> {
    let scores = pagerank(influence, damping)?;
    let mut ranked: Vec<RankedAccount> = scores
        .into_iter()
        .enumerate()
        .map(|(account, score)| RankedAccount { account, score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.account.cmp(&b.account)));
    ranked.truncate(top_k);
    Ok(ranked)
}
