use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use amdn_core::detection::{
    detect, detect_supervised, pagerank, pagerank_influence, roc_points, DetectionMetrics, SupervisedResult,
};
use amdn_core::event_data::{build_vocabulary, chunk_all, parse_event_log, prepare_splits, write_event_log, LogFormat};
use amdn_core::hawkes::{conditional_nll, fit_hawkes, make_scenario};
use amdn_core::training::{evaluate, train, EpochRecord};
use amdn_core::{
    AccountVocabulary, Checkpoint, DatasetSplit, EvalMetrics, EventSequence, InfluenceMatrix, ScenarioConfig,
    SequenceNll, TrainConfig,
};
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::artifacts::Outputs;
use crate::config::RunConfig;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const LABELS_FILE: &str = "labels.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const TIMING_FILE: &str = "timing.json";
pub const INFLUENCE_CSV: &str = "influence.csv";
pub const COUNTS_CSV: &str = "influence_counts.csv";
pub const INFLUENCE_JSON: &str = "influence.json";
pub const PAGERANK_FILE: &str = "pagerank.json";

// simulate --------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct LabelsFile {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    /// Account id to membership of the coordinated group.
    pub labels: BTreeMap<String, bool>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    scenario: &'a ScenarioConfig,
    sequences: usize,
    events: usize,
    branching_ratio: f64,
    base_rates: &'a [f64],
    files: [&'static str; 2],
}

pub fn simulate(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let seed = config.seed();
    let scenario = make_scenario(&config.scenario, seed)?;
    let names = amdn_core::hawkes::account_names(scenario.labels.len());
    let raw = scenario.raw_sequences();
    let mut out = Outputs::new();
    out.dir(out_dir)?;
    out.write_with(&out_dir.join(EVENTS_FILE), |p| Ok(write_event_log(p, &raw)?))?;
    let labels = LabelsFile {
        seed: Some(seed),
        scenario: Some(config.scenario.clone()),
        labels: names.iter().cloned().zip(scenario.labels.iter().copied()).collect(),
    };
    out.write_json(&out_dir.join(LABELS_FILE), &labels)?;
    let manifest = Manifest {
        seed,
        scenario: &config.scenario,
        sequences: scenario.sequences.len(),
        events: scenario.sequences.iter().map(|s| s.len()).sum(),
        branching_ratio: scenario.model.branching_ratio(),
        base_rates: &scenario.model.base_rates,
        files: [EVENTS_FILE, LABELS_FILE],
    };
    out.write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "simulated {} sequences, {} events (branching ratio {:.3})",
        manifest.sequences,
        manifest.events,
        manifest.branching_ratio
    );
    Ok(out.commit())
}

// data ------------------------------------------------------------------------

pub struct Dataset {
    pub vocabulary: AccountVocabulary,
    /// Every sequence chunked to the model's maximum length.
    pub chunks: Vec<EventSequence>,
    pub split: DatasetSplit,
}

/// Parses the log, indexes accounts (with `vocabulary` when resuming from a
/// checkpoint) and reproduces the split of `config`.
pub fn load_dataset(path: &Path, config: &TrainConfig, vocabulary: Option<&AccountVocabulary>) -> Result<Dataset> {
    ensure!(path.exists(), "data file {} does not exist", path.display());
    let raw = parse_event_log(path, LogFormat::from_path(path))?;
    let (vocabulary, encoded) = match vocabulary {
        Some(v) => (v.clone(), v.encode_all(&raw)),
        None => build_vocabulary(&raw, config.data.min_activity)?,
    };
    ensure!(!encoded.is_empty(), "no sequence in {} has two known events", path.display());
    let split = prepare_splits(&encoded, config.data.max_len, config.data.fractions, config.seed)?;
    let chunks = chunk_all(&encoded, config.data.max_len);
    Ok(Dataset {
        vocabulary,
        chunks,
        split,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    ensure!(path.exists(), "checkpoint {} does not exist", path.display());
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

// train -----------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub config: TrainConfig,
    pub accounts: usize,
    pub train_sequences: usize,
    pub validation_sequences: usize,
    pub test_sequences: usize,
    pub time_scale: f64,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLine>,
}

#[derive(Serialize)]
struct Timing<'a> {
    seed: u64,
    epochs: &'a [EpochRecord],
}

pub fn train_cmd(config: &RunConfig, data: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let tc = &config.train;
    let ds = load_dataset(data, tc, None)?;
    ensure!(
        !ds.split.train.is_empty() && !ds.split.validation.is_empty(),
        "{} chunks are too few for a train/validation split",
        ds.chunks.len()
    );
    log::info!(
        "{} accounts; {} train, {} validation, {} test chunks",
        ds.vocabulary.len(),
        ds.split.train.len(),
        ds.split.validation.len(),
        ds.split.test.len()
    );
    let outcome = train(&ds.split, ds.vocabulary.len(), tc)?;
    let checkpoint = Checkpoint::new(tc, &ds.vocabulary, &outcome.model, &outcome.optimizer, outcome.best_epoch)?;

    let mut out = Outputs::new();
    out.dir(out_dir)?;
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    out.write_bytes(&ck_path, checkpoint.to_json()?.as_bytes())?;
    let back = Checkpoint::load(&ck_path)?;
    ensure!(back.model()? == outcome.model, "checkpoint did not round-trip");

    let log = TrainLog {
        seed: tc.seed,
        config: checkpoint.config.clone(),
        accounts: ds.vocabulary.len(),
        train_sequences: ds.split.train.len(),
        validation_sequences: ds.split.validation.len(),
        test_sequences: ds.split.test.len(),
        time_scale: outcome.model.time_scale,
        best_epoch: outcome.best_epoch,
        epochs: outcome
            .log
            .iter()
            .map(|r| EpochLine {
                epoch: r.epoch,
                train_nll: r.train_nll,
                val_nll: r.val_nll,
            })
            .collect(),
    };
    out.write_json(&out_dir.join(TRAIN_LOG_FILE), &log)?;
    out.write_json(
        &out_dir.join(TIMING_FILE),
        &Timing {
            seed: tc.seed,
            epochs: &outcome.log,
        },
    )?;
    log::info!(
        "best epoch {} of {}, validation NLL {:.5}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.log[outcome.best_epoch].val_nll
    );
    Ok(out.commit())
}

// eval ------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub split: Split,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
    pub config: TrainConfig,
    /// Factorized Hawkes model fitted on the training split.
    pub hawkes: Option<HawkesBaseline>,
}

#[derive(Serialize)]
pub struct HawkesBaseline {
    pub config: amdn_core::hawkes::HawkesFitConfig,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

pub fn eval_cmd(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    split: Split,
    baseline: bool,
    out_path: Option<&Path>,
) -> Result<String> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let ds = load_dataset(data, &ck.config, Some(&ck.vocabulary))?;
    let part = match split {
        Split::Train => &ds.split.train,
        Split::Validation => &ds.split.validation,
        Split::Test => &ds.split.test,
    };
    ensure!(!part.is_empty(), "the {split:?} split is empty");
    let metrics = evaluate(part, &model)?;
    let hawkes = if baseline {
        let fit = fit_hawkes(&ds.split.train, ds.vocabulary.len(), &config.hawkes)?;
        let mut total = SequenceNll::default();
        for s in part {
            total.accumulate(&conditional_nll(&fit.model, s)?);
        }
        Some(HawkesBaseline {
            config: config.hawkes.clone(),
            metrics: EvalMetrics::from_totals(&total),
        })
    } else {
        None
    };
    let report = EvalReport {
        seed: ck.config.seed,
        split,
        metrics,
        config: ck.config.clone(),
        hawkes,
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = out_path {
        let mut out = Outputs::new();
        out.write_json(p, &report)?;
        out.commit();
    }
    Ok(text)
}

// detect ----------------------------------------------------------------------

pub fn read_labels(path: &Path, vocabulary: &AccountVocabulary) -> Result<Vec<Option<bool>>> {
    ensure!(path.exists(), "labels file {} does not exist", path.display());
    let text = std::fs::read_to_string(path)?;
    let file: LabelsFile =
        serde_json::from_str(&text).with_context(|| format!("{} is not a labels document", path.display()))?;
    let unknown = file.labels.keys().filter(|k| vocabulary.index_of(k).is_none()).count();
    if unknown > 0 {
        log::warn!("{unknown} labeled accounts are not in the model vocabulary");
    }
    Ok(vocabulary.names().iter().map(|n| file.labels.get(n).copied()).collect())
}

#[derive(Serialize, Deserialize)]
pub struct SupervisedReport {
    pub config: amdn_core::detection::SupervisedConfig,
    pub scores: Vec<Option<f64>>,
    pub metrics: DetectionMetrics,
}

#[derive(Serialize, Deserialize)]
pub struct DetectReport {
    pub seed: u64,
    pub config: amdn_core::DetectionConfig,
    pub train_config: TrainConfig,
    pub accounts: Vec<String>,
    pub labels: Option<Vec<Option<bool>>>,
    pub assignment: Vec<usize>,
    pub flagged_cluster: usize,
    pub cluster_influence: Vec<Option<f64>>,
    pub flagged: Vec<String>,
    pub flags: Vec<bool>,
    pub scores: Vec<f64>,
    pub metrics: Option<DetectionMetrics>,
    pub supervised: Option<SupervisedReport>,
}

pub fn detect_cmd(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    labels: Option<&Path>,
    supervised: bool,
    out_path: &Path,
) -> Result<Vec<PathBuf>> {
    if supervised && labels.is_none() {
        bail!("--supervised needs --labels");
    }
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let labels = labels.map(|p| read_labels(p, &ck.vocabulary)).transpose()?;
    let ds = load_dataset(data, &ck.config, Some(&ck.vocabulary))?;
    let complete: Option<Vec<bool>> = labels.as_ref().and_then(|l| l.iter().copied().collect());
    if labels.is_some() && complete.is_none() {
        log::warn!("some accounts are unlabeled; unsupervised metrics are skipped");
    }
    let (_, result) = detect(&model, &ds.chunks, &config.detection, complete.as_deref())?;
    let supervised = if supervised {
        let l = labels.as_deref().expect("checked above");
        let SupervisedResult { scores, metrics } = detect_supervised(&model, l, &config.supervised)?;
        Some(SupervisedReport {
            config: config.supervised.clone(),
            scores,
            metrics,
        })
    } else {
        None
    };
    let names = ck.vocabulary.names();
    let report = DetectReport {
        seed: config.seed(),
        config: config.detection.clone(),
        train_config: ck.config.clone(),
        accounts: names.to_vec(),
        labels,
        flags: result.flags(),
        assignment: result.assignment,
        flagged_cluster: result.flagged_cluster,
        cluster_influence: result.cluster_influence,
        flagged: result.flagged.iter().map(|&i| names[i].clone()).collect(),
        scores: result.scores,
        metrics: result.metrics,
        supervised,
    };
    if let Some(m) = &report.metrics {
        log::info!("AUC {:.3}, AP {:.3}, flagged {:?}", m.auc, m.ap, report.flagged);
    }
    let mut out = Outputs::new();
    out.write_json(out_path, &report)?;
    Ok(out.commit())
}

// influence -------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct RankedName {
    pub account: String,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
pub struct PageRankReport {
    pub seed: u64,
    pub damping: f64,
    pub top_k: usize,
    pub train_config: TrainConfig,
    pub ranking: Vec<RankedName>,
    /// Score of every account, in vocabulary order.
    pub scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct InfluenceReport {
    pub seed: u64,
    pub train_config: TrainConfig,
    pub accounts: Vec<String>,
    pub influence: InfluenceMatrix,
}

pub fn influence_cmd(config: &RunConfig, checkpoint: &Path, data: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let ds = load_dataset(data, &ck.config, Some(&ck.vocabulary))?;
    let influence = amdn_core::detection::aggregate_influence(&model, &ds.chunks)?;
    let names = ck.vocabulary.names().to_vec();
    let damping = config.detection.damping;
    let top_k = config.detection.top_k;
    let ranking = pagerank_influence(&influence, damping, top_k)?
        .into_iter()
        .map(|r| RankedName {
            account: names[r.account].clone(),
            score: r.score,
        })
        .collect();
    let pr = PageRankReport {
        seed: config.seed(),
        damping,
        top_k,
        train_config: ck.config.clone(),
        ranking,
        scores: pagerank(&influence, damping)?,
    };

    let mut out = Outputs::new();
    out.dir(out_dir)?;
    out.write_with(&out_dir.join(INFLUENCE_CSV), |p| Ok(influence.write_csv(p, &names)?))?;
    out.write_with(&out_dir.join(COUNTS_CSV), |p| Ok(influence.write_counts_csv(p, &names)?))?;
    out.write_json(
        &out_dir.join(INFLUENCE_JSON),
        &InfluenceReport {
            seed: config.seed(),
            train_config: ck.config.clone(),
            accounts: names.clone(),
            influence,
        },
    )?;
    out.write_json(&out_dir.join(PAGERANK_FILE), &pr)?;
    Ok(out.commit())
}

// report ----------------------------------------------------------------------

pub struct ReportInputs<'a> {
    pub train_dir: Option<&'a Path>,
    pub detect: Option<&'a Path>,
    pub influence_dir: Option<&'a Path>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    ensure!(path.exists(), "{} does not exist", path.display());
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("{} has an unexpected layout", path.display()))
}

fn write_tsv(out: &mut Outputs, path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    out.write_with(path, |p| {
        let mut w = BufWriter::new(File::create(p)?);
        fill(&mut w)?;
        w.flush()?;
        Ok(())
    })
}

pub fn report_cmd(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.train_dir.is_none() && inputs.detect.is_none() && inputs.influence_dir.is_none() {
        bail!("report needs at least one of --train-dir, --detect, --influence-dir");
    }
    let train: Option<TrainLog> = inputs
        .train_dir
        .map(|d| read_json(&d.join(TRAIN_LOG_FILE)))
        .transpose()?;
    let detect: Option<DetectReport> = inputs.detect.map(read_json).transpose()?;
    let influence: Option<InfluenceReport> = inputs
        .influence_dir
        .map(|d| read_json(&d.join(INFLUENCE_JSON)))
        .transpose()?;
    let pagerank: Option<PageRankReport> = inputs
        .influence_dir
        .map(|d| read_json(&d.join(PAGERANK_FILE)))
        .transpose()?;

    let mut out = Outputs::new();
    out.dir(out_dir)?;
    let mut summary = serde_json::Map::new();

    if let Some(t) = &train {
        write_tsv(&mut out, &out_dir.join("epochs.tsv"), |w| {
            writeln!(w, "epoch\ttrain_nll\tval_nll")?;
            for e in &t.epochs {
                writeln!(w, "{}\t{}\t{}", e.epoch, e.train_nll, e.val_nll)?;
            }
            Ok(())
        })?;
        let best = t.epochs.iter().find(|e| e.epoch == t.best_epoch);
        summary.insert(
            "training".into(),
            serde_json::json!({
                "seed": t.seed,
                "config": t.config,
                "epochs": t.epochs.len(),
                "best_epoch": t.best_epoch,
                "best_val_nll": best.map(|e| e.val_nll),
                "time_scale": t.time_scale,
            }),
        );
    }
    if let Some(d) = &detect {
        let labels: Option<Vec<bool>> = d.labels.as_ref().and_then(|l| l.iter().copied().collect());
        if let Some(labels) = &labels {
            let points = roc_points(&d.scores, labels)?;
            write_tsv(&mut out, &out_dir.join("roc.tsv"), |w| {
                writeln!(w, "fpr\ttpr")?;
                for (f, t) in &points {
                    writeln!(w, "{f}\t{t}")?;
                }
                Ok(())
            })?;
        }
        summary.insert(
            "detection".into(),
            serde_json::json!({
                "seed": d.seed,
                "config": d.config,
                "flagged": d.flagged,
                "flagged_cluster": d.flagged_cluster,
                "cluster_influence": d.cluster_influence,
                "metrics": d.metrics,
                "supervised_metrics": d.supervised.as_ref().map(|s| &s.metrics),
            }),
        );
    }
    if let Some(inf) = &influence {
        write_tsv(&mut out, &out_dir.join("heatmap.tsv"), |w| {
            Ok(inf.influence.write_long_tsv(w, &inf.accounts)?)
        })?;
    }
    if let Some(pr) = &pagerank {
        summary.insert(
            "influence".into(),
            serde_json::json!({
                "seed": pr.seed,
                "damping": pr.damping,
                "top_k": pr.top_k,
                "ranking": pr.ranking,
            }),
        );
    }
    out.write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(out.commit())
}
