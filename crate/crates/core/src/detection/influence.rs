use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, Mode};
use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::linalg::Mat;
use crate::training::AmdnModel;

/// Account-level attention: `value(v, u)` is the mean attention that events
/// of account `v` pay to earlier (or the same) events of account `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    values: Mat,
    counts: Vec<u64>,
}

impl InfluenceMatrix {
    pub fn from_parts(values: Mat, counts: Vec<u64>) -> Result<Self> {
        let n = values.rows();
        if values.cols() != n || counts.len() != n * n {
            return Err(Error::Contract(format!(
                "influence values {:?} and {} counts are not square and aligned",
                values.shape(),
                counts.len()
            )));
        }
        if values.as_slice().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Contract("influence values must be non-negative".into()));
        }
        Ok(Self { values, counts })
    }

    /// Dense matrix with every entry present, for hand-built graphs.
    pub fn from_dense(values: Mat) -> Result<Self> {
        let n = values.rows();
        Self::from_parts(values, vec![1; n * n])
    }

    pub fn num_accounts(&self) -> usize {
        self.values.rows()
    }

    pub fn count(&self, v: usize, u: usize) -> u64 {
        self.counts[v * self.num_accounts() + u]
    }

    /// `None` when `u` never appeared in the history of `v`.
    pub fn get(&self, v: usize, u: usize) -> Option<f64> {
        (self.count(v, u) > 0).then(|| self.values.get(v, u))
    }

    /// Values with missing entries as 0.
    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        self.write_table(path, names, |v, u| self.get(v, u).map(|x| x.to_string()).unwrap_or_default())
    }

    pub fn write_counts_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        self.write_table(path, names, |v, u| self.count(v, u).to_string())
    }

    fn write_table(&self, path: &Path, names: &[String], cell: impl Fn(usize, usize) -> String) -> Result<()> {
        let n = self.num_accounts();
        if names.len() != n {
            return Err(Error::Contract(format!("{} names for {n} accounts", names.len())));
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["account".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (v, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..n).map(|u| cell(v, u)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format rows `(v, u, value, count)` over present entries.
    pub fn write_long_tsv(&self, out: &mut impl Write, names: &[String]) -> Result<()> {
        writeln!(out, "target\tsource\tinfluence\tcount")?;
        let n = self.num_accounts();
        for v in 0..n {
            for u in 0..n {
                if let Some(x) = self.get(v, u) {
                    writeln!(out, "{}\t{}\t{x}\t{}", names[v], names[u], self.count(v, u))?;
                }
            }
        }
        Ok(())
    }
}

struct Accumulator {
    sums: Mat,
    counts: Vec<u64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            sums: Mat::zeros(n, n),
            counts: vec![0; n * n],
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.sums.add_assign(&other.sums);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }
}

/// Averages evaluation-mode attention over every sequence, keyed by the
/// accounts of the attending and attended events.
pub fn aggregate_influence(model: &AmdnModel, data: &[EventSequence]) -> Result<InfluenceMatrix> {
    let n = model.vocab_size();
    let partials: Vec<Result<Accumulator>> = data
        .par_chunks(8)
        .map(|chunk| {
            let mut acc = Accumulator::new(n);
            for seq in chunk {
                let encoded = encode(seq, &model.params.encoder, model.time_scale, Mode::Eval)?;
                for (i, ei) in seq.events.iter().enumerate() {
                    let row = encoded.attention.row(i);
                    for (j, ej) in seq.events[..=i].iter().enumerate() {
                        acc.sums.add_at(ei.account, ej.account, row[j]);
                        acc.counts[ei.account * n + ej.account] += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(n);
    for p in partials {
        total.merge(&p?);
    }
    let mut values = total.sums;
    for v in 0..n {
        for u in 0..n {
            let c = total.counts[v * n + u];
            if c > 0 {
                values.set(v, u, values.get(v, u) / c as f64);
            }
        }
    }
    InfluenceMatrix::from_parts(values, total.counts)
}
