//! Activity-log ingestion: parsing, account vocabulary, chunking and splits.
//!
//! Raw logs carry string account ids. After [`build_vocabulary`] every
//! sequence is re-expressed over dense account indices (`0..|U|`), which is
//! what the model, the Hawkes baseline and the detection code consume.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One activity with the account still in its logged (string) form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub account: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSequence {
    pub id: String,
    pub events: Vec<RawEvent>,
}

/// One activity over the dense account index space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub account: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: String,
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Self {
        Self {
            id: id.into(),
            events,
        }
    }

    /// Builds a sequence from parallel account / timestamp slices.
    pub fn from_pairs(id: impl Into<String>, pairs: &[(usize, f64)]) -> Self {
        Self::new(
            id,
            pairs
                .iter()
                .map(|&(account, time)| Event { account, time })
                .collect(),
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of events that carry a likelihood term (all but the first).
    #[inline]
    pub fn predicted_events(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    /// `t_i - t_{i-1}`, with 0 for the first event.
    pub fn time_deltas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.events.len());
        let mut prev = None;
        for e in &self.events {
            out.push(prev.map_or(0.0, |p| e.time - p));
            prev = Some(e.time);
        }
        out
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for e in &self.events {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::Domain(format!(
                    "sequence {}: timestamp {} is not a finite non-negative value",
                    self.id, e.time
                )));
            }
            if e.time < prev {
                return Err(Error::Domain(format!(
                    "sequence {}: timestamps decrease",
                    self.id
                )));
            }
            if e.account >= vocab_size {
                return Err(Error::UnknownAccount {
                    index: e.account,
                    size: vocab_size,
                });
            }
            prev = e.time;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Jsonl,
    Csv,
}

impl LogFormat {
    /// `.csv` selects CSV, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => LogFormat::Csv,
            _ => LogFormat::Jsonl,
        }
    }
}

/// Ids may be logged as strings or bare numbers.
#[derive(Deserialize)]
#[serde(untagged)]
enum LoggedId {
    Text(String),
    Int(i64),
    Float(f64),
}

impl LoggedId {
    fn into_string(self) -> String {
        match self {
            LoggedId::Text(s) => s,
            LoggedId::Int(i) => i.to_string(),
            LoggedId::Float(f) => f.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LoggedTime {
    Number(f64),
    Text(String),
}

#[derive(Deserialize)]
struct LogRecord {
    seq: LoggedId,
    account: LoggedId,
    ts: LoggedTime,
}

#[derive(Serialize)]
struct LogRecordOut<'a> {
    seq: &'a str,
    account: &'a str,
    ts: f64,
}

struct Grouper {
    groups: IndexMap<String, Vec<RawEvent>>,
}

impl Grouper {
    fn new() -> Self {
        Self {
            groups: IndexMap::new(),
        }
    }

    fn push(&mut self, path: &Path, line: usize, rec: LogRecord) -> Result<()> {
        let timestamp = match rec.ts {
            LoggedTime::Number(x) => x,
            LoggedTime::Text(s) => s.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("timestamp {s:?}: {e}"),
            })?,
        };
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                line,
                message: format!("timestamp {timestamp} must be finite and non-negative"),
            });
        }
        self.groups
            .entry(rec.seq.into_string())
            .or_default()
            .push(RawEvent {
                account: rec.account.into_string(),
                timestamp,
            });
        Ok(())
    }

    fn finish(self) -> Vec<RawSequence> {
        self.groups
            .into_iter()
            .map(|(id, mut events)| {
                // stable: ties keep log order
                events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
                RawSequence { id, events }
            })
            .collect()
    }
}

/// Reads an activity log and groups it into time-sorted sequences, in order of
/// first appearance of each sequence id.
pub fn parse_event_log(path: &Path, format: LogFormat) -> Result<Vec<RawSequence>> {
    let file = File::open(path)?;
    let mut grouper = Grouper::new();
    match format {
        LogFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                let lineno = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: e.to_string(),
                })?;
                grouper.push(path, lineno, rec)?;
            }
        }
        LogFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .trim(csv::Trim::All)
                .from_reader(file);
            let mut record = csv::StringRecord::new();
            loop {
                let more = reader.read_record(&mut record).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                if !more {
                    break;
                }
                let lineno = record.position().map_or(0, |p| p.line() as usize);
                let headers = reader.headers()?.clone();
                let rec: LogRecord =
                    record
                        .deserialize(Some(&headers))
                        .map_err(|e| Error::Parse {
                            path: path.to_path_buf(),
                            line: lineno,
                            message: e.to_string(),
                        })?;
                grouper.push(path, lineno, rec)?;
            }
        }
    }
    Ok(grouper.finish())
}

/// Writes sequences as JSONL records `{seq, account, ts}`.
pub fn write_event_log(path: &Path, sequences: &[RawSequence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for seq in sequences {
        for e in &seq.events {
            serde_json::to_writer(
                &mut out,
                &LogRecordOut {
                    seq: &seq.id,
                    account: &e.account,
                    ts: e.timestamp,
                },
            )?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Bijection between account ids and dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccountVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AccountVocabulary {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Parameter(format!("duplicate account id {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, account: &str) -> Option<usize> {
        self.index.get(account).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Maps a raw sequence into index space, dropping unknown accounts.
    /// Returns `None` when fewer than two events remain.
    pub fn encode(&self, raw: &RawSequence) -> Option<EventSequence> {
        let events: Vec<Event> = raw
            .events
            .iter()
            .filter_map(|e| {
                self.index_of(&e.account).map(|account| Event {
                    account,
                    time: e.timestamp,
                })
            })
            .collect();
        (events.len() >= 2).then(|| EventSequence::new(raw.id.clone(), events))
    }

    pub fn encode_all(&self, raw: &[RawSequence]) -> Vec<EventSequence> {
        raw.iter().filter_map(|r| self.encode(r)).collect()
    }

    pub fn decode(&self, seq: &EventSequence) -> RawSequence {
        RawSequence {
            id: seq.id.clone(),
            events: seq
                .events
                .iter()
                .map(|e| RawEvent {
                    account: self.names[e.account].clone(),
                    timestamp: e.time,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.names)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_names(serde_json::from_str(s)?)
    }
}

impl Serialize for AccountVocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AccountVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        AccountVocabulary::from_names(names).map_err(serde::de::Error::custom)
    }
}

/// Drops accounts with fewer than `min_activity` events, then sequences left
/// with fewer than two events, repeating until nothing changes. Survivors are
/// indexed in order of first appearance.
pub fn build_vocabulary(
    sequences: &[RawSequence],
    min_activity: usize,
) -> Result<(AccountVocabulary, Vec<EventSequence>)> {
    let mut current: Vec<RawSequence> = sequences.to_vec();
    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &current {
            for e in &s.events {
                *counts.entry(e.account.as_str()).or_default() += 1;
            }
        }
        let keep = |a: &str| counts.get(a).copied().unwrap_or(0) >= min_activity;
        let before: usize = current.iter().map(|s| s.events.len()).sum();
        let next: Vec<RawSequence> = current
            .iter()
            .map(|s| RawSequence {
                id: s.id.clone(),
                events: s
                    .events
                    .iter()
                    .filter(|e| keep(&e.account))
                    .cloned()
                    .collect(),
            })
            .filter(|s| s.events.len() >= 2)
            .collect();
        let after: usize = next.iter().map(|s| s.events.len()).sum();
        current = next;
        if after == before {
            break;
        }
    }

    let names: IndexSet<String> = current
        .iter()
        .flat_map(|s| s.events.iter().map(|e| e.account.clone()))
        .collect();
    if names.is_empty() {
        return Err(Error::EmptyVocabulary { min_activity });
    }
    let vocab = AccountVocabulary::from_names(names.into_iter().collect())?;
    let encoded = current
        .iter()
        .map(|s| vocab.encode(s).expect("filtered sequences keep >= 2 known events"))
        .collect();
    Ok((vocab, encoded))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0)
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Parameter(format!(
                "split fractions {parts:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::new(0.75, 0.15, 0.10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<EventSequence>,
    pub validation: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
    pub fractions: SplitFractions,
}

/// Cuts a sequence into consecutive chunks of at most `max_len` events,
/// dropping chunks shorter than two.
pub fn chunk_sequence(seq: &EventSequence, max_len: usize) -> Vec<EventSequence> {
    if seq.len() <= max_len {
        return if seq.len() >= 2 { vec![seq.clone()] } else { Vec::new() };
    }
    seq.events
        .chunks(max_len)
        .enumerate()
        .filter(|(_, c)| c.len() >= 2)
        .map(|(k, c)| EventSequence::new(format!("{}#{k}", seq.id), c.to_vec()))
        .collect()
}

pub fn chunk_all(sequences: &[EventSequence], max_len: usize) -> Vec<EventSequence> {
    sequences
        .iter()
        .flat_map(|s| chunk_sequence(s, max_len))
        .collect()
}

/// Chunks, shuffles with `seed`, and partitions by `fractions`. Validation and
/// test sizes are rounded down; the remainder goes to train.
pub fn prepare_splits(
    sequences: &[EventSequence],
    max_len: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    if max_len < 2 {
        return Err(Error::Parameter(format!("max_len {max_len} must be >= 2")));
    }
    fractions.validate()?;
    let mut chunks = chunk_all(sequences, max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    chunks.shuffle(&mut rng);

    let n = chunks.len();
    let n_val = (n as f64 * fractions.validation).floor() as usize;
    let n_test = (n as f64 * fractions.test).floor() as usize;
    let n_train = n - n_val - n_test;

    let test = chunks.split_off(n_train + n_val);
    let validation = chunks.split_off(n_train);
    Ok(DatasetSplit {
        train: chunks,
        validation,
        test,
        fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn raw(id: &str, events: &[(&str, f64)]) -> RawSequence {
        RawSequence {
            id: id.into(),
            events: events
                .iter()
                .map(|&(a, t)| RawEvent {
                    account: a.into(),
                    timestamp: t,
                })
                .collect(),
        }
    }

    #[test]
    fn jsonl_groups_and_sorts() {
        let f = write_tmp(
            "{\"seq\":\"s\",\"account\":\"a\",\"ts\":5.0}\n\
             {\"seq\":\"s\",\"account\":\"b\",\"ts\":1.0}\n\
             {\"seq\":\"s\",\"account\":\"a\",\"ts\":3.0}\n",
            ".jsonl",
        );
        let seqs = parse_event_log(f.path(), LogFormat::Jsonl).unwrap();
        assert_eq!(seqs.len(), 1);
        let ts: Vec<f64> = seqs[0].events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1.0, 3.0, 5.0]);
        assert_eq!(seqs[0].events[0].account, "b");
    }

    #[test]
    fn ties_keep_log_order() {
        let f = write_tmp(
            "{\"seq\":\"s\",\"account\":\"x\",\"ts\":2}\n\
             {\"seq\":\"s\",\"account\":\"y\",\"ts\":2}\n\
             {\"seq\":\"s\",\"account\":\"z\",\"ts\":1}\n",
            ".jsonl",
        );
        let seqs = parse_event_log(f.path(), LogFormat::Jsonl).unwrap();
        let order: Vec<&str> = seqs[0].events.iter().map(|e| e.account.as_str()).collect();
        assert_eq!(order, vec!["z", "x", "y"]);
    }

    #[test]
    fn empty_file_gives_no_sequences() {
        let f = write_tmp("", ".jsonl");
        assert!(parse_event_log(f.path(), LogFormat::Jsonl).unwrap().is_empty());
    }

    #[test]
    fn nan_timestamp_is_rejected_with_line() {
        let f = write_tmp(
            "{\"seq\":\"s\",\"account\":\"a\",\"ts\":1.0}\n\
             {\"seq\":\"s\",\"account\":\"a\",\"ts\":\"NaN\"}\n",
            ".jsonl",
        );
        match parse_event_log(f.path(), LogFormat::Jsonl) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn negative_timestamp_is_rejected() {
        let f = write_tmp("{\"seq\":\"s\",\"account\":\"a\",\"ts\":-1}\n", ".jsonl");
        assert!(matches!(
            parse_event_log(f.path(), LogFormat::Jsonl),
            Err(Error::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn malformed_record_names_line() {
        let f = write_tmp(
            "{\"seq\":\"s\",\"account\":\"a\",\"ts\":1}\n\n{\"seq\":\"s\",\"ts\":2}\n",
            ".jsonl",
        );
        match parse_event_log(f.path(), LogFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_matches_jsonl() {
        let f = write_tmp("seq,account,ts\ns1,a,3.5\ns1,b,1.0\ns2,a,0\ns2,a,2\n", ".csv");
        assert_eq!(LogFormat::from_path(f.path()), LogFormat::Csv);
        let seqs = parse_event_log(f.path(), LogFormat::Csv).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0], raw("s1", &[("b", 1.0), ("a", 3.5)]));
        assert_eq!(seqs[1], raw("s2", &[("a", 0.0), ("a", 2.0)]));

        let bad = write_tmp("seq,account,ts\ns1,a,x\n", ".csv");
        assert!(matches!(
            parse_event_log(bad.path(), LogFormat::Csv),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn vocabulary_drops_sparse_accounts() {
        let mut events: Vec<(&str, f64)> = (0..12).map(|i| ("a", i as f64)).collect();
        events.extend((0..3).map(|i| ("b", 0.5 + i as f64)));
        events.sort_by(|x, y| x.1.total_cmp(&y.1));
        let (vocab, seqs) = build_vocabulary(&[raw("s", &events)], 10).unwrap();
        assert_eq!(vocab.names(), &["a".to_string()]);
        assert_eq!(seqs[0].len(), 12);
        assert!(seqs[0].events.iter().all(|e| e.account == 0));
    }

    #[test]
    fn vocabulary_zero_threshold_orders_by_first_appearance() {
        let (vocab, _) = build_vocabulary(
            &[raw("s1", &[("c", 0.0), ("a", 1.0)]), raw("s2", &[("b", 0.0), ("c", 1.0)])],
            0,
        )
        .unwrap();
        assert_eq!(vocab.names(), &["c", "a", "b"]);
    }

    #[test]
    fn vocabulary_all_filtered_is_error() {
        let events: Vec<(&str, f64)> = (0..15)
            .map(|i| (["a", "b", "c"][i % 3], i as f64))
            .collect();
        assert!(matches!(
            build_vocabulary(&[raw("s", &events)], 10),
            Err(Error::EmptyVocabulary { .. })
        ));
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = AccountVocabulary::from_names(vec!["x".into(), "y".into()]).unwrap();
        let s = v.to_json().unwrap();
        assert_eq!(s, r#"["x","y"]"#);
        assert_eq!(AccountVocabulary::from_json(&s).unwrap(), v);
        assert!(AccountVocabulary::from_names(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn chunks_of_long_sequence() {
        let pairs: Vec<(usize, f64)> = (0..300).map(|i| (0, i as f64)).collect();
        let seq = EventSequence::from_pairs("s", &pairs);
        let lens: Vec<usize> = chunk_sequence(&seq, 128).iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![128, 128, 44]);

        let pairs: Vec<(usize, f64)> = (0..129).map(|i| (0, i as f64)).collect();
        let seq = EventSequence::from_pairs("s", &pairs);
        let lens: Vec<usize> = chunk_sequence(&seq, 128).iter().map(|c| c.len()).collect();
        assert_eq!(lens, vec![128]);
    }

    fn ten_chunks() -> Vec<EventSequence> {
        (0..10)
            .map(|k| EventSequence::from_pairs(format!("s{k}"), &[(0, 0.0), (0, 1.0)]))
            .collect()
    }

    #[test]
    fn split_sizes_floor_with_remainder_to_train() {
        for seed in 0..5 {
            let s = prepare_splits(&ten_chunks(), 128, SplitFractions::default(), seed).unwrap();
            assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        }
        let s = prepare_splits(&ten_chunks(), 128, SplitFractions::new(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.train.len(), 10);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(prepare_splits(&ten_chunks(), 1, SplitFractions::default(), 0).is_err());
        assert!(prepare_splits(&ten_chunks(), 8, SplitFractions::new(0.5, 0.2, 0.2), 0).is_err());
    }
}
