//! From a trained model to coordination findings: account influence,
//! embedding clusters, the flagged group, rankings and scores.

mod cluster;
mod flag;
mod influence;
mod metrics;
mod pagerank;
mod supervised;

pub use cluster::{
    adjusted_rand_index, canonical_labels, cluster_accounts, gmm_diagonal, kmeans, ClusterConfig, ClusterMethod,
    KMeansFit,
};
pub use flag::{anomaly_scores, flag_coordinated, FlagOutcome};
pub use influence::{aggregate_influence, InfluenceMatrix};
pub use metrics::{
    average_precision, detection_metrics, flag_scores, jaccard, max_f1, roc_auc, roc_points, DetectionMetrics,
};
pub use pagerank::{pagerank, pagerank_influence, RankedAccount, MAX_ITERATIONS, TOLERANCE};
pub use supervised::{supervised_scores, SupervisedConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::EventSequence;
use crate::training::AmdnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub cluster: ClusterConfig,
    pub damping: f64,
    pub top_k: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            damping: 0.85,
            top_k: 10,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Parameter(format!("damping {} must lie in (0, 1)", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub assignment: Vec<usize>,
    pub flagged_cluster: usize,
    pub flagged: Vec<usize>,
    pub cluster_influence: Vec<Option<f64>>,
    /// Anomaly score per account.
    pub scores: Vec<f64>,
    pub metrics: Option<DetectionMetrics>,
}

impl DetectionResult {
    pub fn flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.assignment.len()];
        for &a in &self.flagged {
            f[a] = true;
        }
        f
    }
}

/// Unsupervised pipeline: influence, clustering of the account embeddings,
/// cluster selection and scoring (against `labels` when given).
pub fn detect(
    model: &AmdnModel,
    data: &[EventSequence],
    config: &DetectionConfig,
    labels: Option<&[bool]>,
) -> Result<(InfluenceMatrix, DetectionResult)> {
    let influence = aggregate_influence(model, data)?;
    let result = detect_from_influence(model, &influence, config, labels)?;
    Ok((influence, result))
}

pub fn detect_from_influence(
    model: &AmdnModel,
    influence: &InfluenceMatrix,
    config: &DetectionConfig,
    labels: Option<&[bool]>,
) -> Result<DetectionResult> {
    if influence.num_accounts() != model.vocab_size() {
        return Err(Error::Contract("influence matrix and model disagree on the vocabulary".into()));
    }
    config.validate()?;
    let assignment = cluster_accounts(model.embeddings(), &config.cluster)?;
    let flag = flag_coordinated(&assignment, influence)?;
    let scores = anomaly_scores(&flag.flagged, influence);
    let mut result = DetectionResult {
        assignment,
        flagged_cluster: flag.cluster,
        flagged: flag.flagged,
        cluster_influence: flag.cluster_influence,
        scores,
        metrics: None,
    };
    if let Some(labels) = labels {
        result.metrics = Some(detection_metrics(&result.scores, &result.flags(), labels)?);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedResult {
    pub scores: Vec<Option<f64>>,
    /// Over labeled accounts; flags are probabilities of at least one half.
    pub metrics: DetectionMetrics,
}

pub fn detect_supervised(
    model: &AmdnModel,
    labels: &[Option<bool>],
    config: &SupervisedConfig,
) -> Result<SupervisedResult> {
    let scores = supervised_scores(model.embeddings(), labels, config)?;
    let (mut s, mut y) = (Vec::new(), Vec::new());
    for (score, label) in scores.iter().zip(labels) {
        if let (Some(p), Some(l)) = (score, label) {
            s.push(*p);
            y.push(*l);
        }
    }
    let flags: Vec<bool> = s.iter().map(|p| *p >= 0.5).collect();
    let metrics = detection_metrics(&s, &flags, &y)?;
    Ok(SupervisedResult { scores, metrics })
}
