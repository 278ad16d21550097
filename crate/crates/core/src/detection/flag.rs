use serde::{Deserialize, Serialize};

use super::InfluenceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagOutcome {
    pub cluster: usize,
    /// Accounts of the selected cluster, ascending.
    pub flagged: Vec<usize>,
    /// Mean influence between distinct members of each cluster; `None` when
    /// no such pair was ever observed.
    pub cluster_influence: Vec<Option<f64>>,
}

fn mean_present(pairs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = pairs.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Flags the cluster whose members influence each other most. Ties go to the
/// smaller cluster, then to the cluster holding the lowest account index.
pub fn flag_coordinated(assignment: &[usize], influence: &InfluenceMatrix) -> Result<FlagOutcome> {
    let n = influence.num_accounts();
    if assignment.len() != n {
        return Err(Error::Contract(format!(
            "{} cluster labels for {n} accounts",
            assignment.len()
        )));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..n).filter(|&a| assignment[a] == c).collect())
        .collect();
    let cluster_influence: Vec<Option<f64>> = members
        .iter()
        .map(|m| {
            mean_present(
                m.iter()
                    .flat_map(|&v| m.iter().filter(move |&&u| u != v).map(move |&u| influence.get(v, u))),
            )
        })
        .collect();
    let mut best: Option<usize> = None;
    for c in 0..k {
        if members[c].is_empty() {
            continue;
        }
        let Some(score) = cluster_influence[c] else {
            log::warn!(
                "cluster {c} ({} accounts) has no observed intra-cluster influence; skipping it",
                members[c].len()
            );
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let bs = cluster_influence[b].expect("selected clusters have a score");
                score > bs
                    || (score == bs
                        && (members[c].len(), members[c][0]) < (members[b].len(), members[b][0]))
            }
        };
        if better {
            best = Some(c);
        }
    }
    let cluster = best.ok_or_else(|| {
        Error::Parameter("no cluster has observed influence between distinct members".into())
    })?;
    Ok(FlagOutcome {
        cluster,
        flagged: members[cluster].clone(),
        cluster_influence,
    })
}

/// Per-account ranking score: mean observed influence in either direction
/// between the account and the other flagged accounts.
pub fn anomaly_scores(flagged: &[usize], influence: &InfluenceMatrix) -> Vec<f64> {
    (0..influence.num_accounts())
        .map(|a| {
            mean_present(
                flagged
                    .iter()
                    .filter(|&&f| f != a)
                    .flat_map(|&f| [influence.get(a, f), influence.get(f, a)]),
            )
            .unwrap_or(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn block(n: usize, split: usize, hi: f64, lo: f64) -> InfluenceMatrix {
        InfluenceMatrix::from_dense(Mat::from_fn(n, n, |v, u| {
            if v == u {
                0.9
            } else if (v < split) == (u < split) {
                if v < split { hi } else { lo }
            } else {
                0.01
            }
        }))
        .unwrap()
    }

    #[test]
    fn strongest_cluster_is_flagged() {
        let inf = block(6, 3, 0.30, 0.05);
        let out = flag_coordinated(&[0, 0, 0, 1, 1, 1], &inf).unwrap();
        assert_eq!(out.flagged, vec![0, 1, 2]);
        assert!((out.cluster_influence[0].unwrap() - 0.30).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_the_smaller_cluster() {
        let inf = InfluenceMatrix::from_dense(Mat::from_fn(55, 55, |_, _| 0.2)).unwrap();
        let assignment: Vec<usize> = (0..55).map(|a| usize::from(a >= 50)).collect();
        let out = flag_coordinated(&assignment, &inf).unwrap();
        assert_eq!(out.flagged, (50..55).collect::<Vec<_>>());
    }

    #[test]
    fn relabeling_clusters_keeps_the_flagged_set() {
        let inf = block(6, 3, 0.30, 0.05);
        let a = flag_coordinated(&[0, 0, 0, 1, 1, 1], &inf).unwrap();
        let b = flag_coordinated(&[1, 1, 1, 0, 0, 0], &inf).unwrap();
        assert_eq!(a.flagged, b.flagged);
        let even = InfluenceMatrix::from_dense(Mat::from_fn(4, 4, |_, _| 0.5)).unwrap();
        let c = flag_coordinated(&[0, 0, 1, 1], &even).unwrap();
        let d = flag_coordinated(&[1, 1, 0, 0], &even).unwrap();
        assert_eq!(c.flagged, d.flagged);
    }

    #[test]
    fn singleton_clusters_are_skipped() {
        let inf = block(4, 1, 0.9, 0.1);
        let out = flag_coordinated(&[0, 1, 1, 1], &inf).unwrap();
        assert_eq!(out.cluster_influence[0], None);
        assert_eq!(out.flagged, vec![1, 2, 3]);
        assert!(flag_coordinated(&[0, 1, 2, 3], &inf).is_err());
    }

    #[test]
    fn scores_average_both_directions_over_other_members() {
        let inf = block(4, 2, 0.4, 0.1);
        let s = anomaly_scores(&[0, 1], &inf);
        assert!((s[0] - 0.4).abs() < 1e-15);
        assert!((s[3] - 0.01).abs() < 1e-15);
    }
}
