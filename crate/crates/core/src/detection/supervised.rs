use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub folds: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights (not the intercept).
    pub l2: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Parameter(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.iterations == 0 || !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Parameter(
                "iterations and learning_rate must be positive, l2 non-negative".into(),
            ));
        }
        Ok(())
    }
}

struct Logistic {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Logistic {
    fn fit(x: &Mat, rows: &[usize], y: &[bool], config: &SupervisedConfig) -> Self {
        let dim = x.cols();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|c| rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|c| {
                let var = rows.iter().map(|&r| (x.get(r, c) - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| (0..dim).map(|c| (x.get(r, c) - mean[c]) / scale[c]).collect())
            .collect();
        let mut weights = vec![0.0; dim];
        let mut bias = 0.0;
        for _ in 0..config.iterations {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (zi, &r) in z.iter().zip(rows) {
                let err = sigmoid(dot(&weights, zi) + bias) - f64::from(u8::from(y[r]));
                gb += err;
                for (g, v) in gw.iter_mut().zip(zi) {
                    *g += err * v;
                }
            }
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * (g / n + config.l2 * *w);
            }
            bias -= config.learning_rate * gb / n;
        }
        Self {
            mean,
            scale,
            weights,
            bias,
        }
    }

    fn predict(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = row
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        sigmoid(dot(&self.weights, &z) + self.bias)
    }
}

/// Out-of-fold logistic-regression probabilities for every labeled row of
/// `embeddings`, using stratified folds. Unlabeled rows get `None`.
pub fn supervised_scores(
    embeddings: &Mat,
    labels: &[Option<bool>],
    config: &SupervisedConfig,
) -> Result<Vec<Option<f64>>> {
    if labels.len() != embeddings.rows() {
        return Err(Error::Contract(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            embeddings.rows()
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fold_of = vec![usize::MAX; labels.len()];
    let mut class_sizes = [0usize; 2];
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Some(class)).collect();
        class_sizes[usize::from(class)] = members.len();
        members.shuffle(&mut rng);
        for (k, i) in members.into_iter().enumerate() {
            fold_of[i] = k % config.folds;
        }
    }
    if class_sizes.contains(&0) {
        return Err(Error::Parameter("labels must contain both classes".into()));
    }
    let y: Vec<bool> = labels.iter().map(|l| l.unwrap_or(false)).collect();
    let mut out = vec![None; labels.len()];
    for fold in 0..config.folds {
        let train: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i].is_some() && fold_of[i] != fold)
            .collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let model = Logistic::fit(embeddings, &train, &y, config);
        for i in test {
            out[i] = Some(model.predict(embeddings.row(i)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_count_and_class_checks() {
        let x = Mat::from_fn(4, 1, |i, _| i as f64);
        let labels = [Some(true), Some(false), Some(true), None];
        let one = SupervisedConfig {
            folds: 1,
            ..SupervisedConfig::default()
        };
        assert!(supervised_scores(&x, &labels, &one).is_err());
        let single = [Some(true), Some(true), None, None];
        assert!(supervised_scores(&x, &single, &SupervisedConfig::default()).is_err());
        let s = supervised_scores(&x, &labels, &SupervisedConfig { folds: 2, ..Default::default() }).unwrap();
        assert!(s[3].is_none() && s[..3].iter().all(|v| v.is_some()));
    }
}
