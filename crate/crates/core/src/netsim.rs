//! In-process network: whitelisted message kinds, per-edge FIFO timing from
//! a fixed delay plus size over bandwidth, and byte accounting by edge and
//! by protocol phase.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::nn::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Ciphertext,
    PublicKey,
    KeyGenShare,
    RefreshShare,
    DecryptShare,
    KeySwitchShare,
    /// Never allowed on the wire.
    PlainData,
    /// Never allowed on the wire.
    SecretKeyShare,
}

impl MsgKind {
    pub fn whitelisted(self) -> bool {
        !matches!(self, MsgKind::PlainData | MsgKind::SecretKeyShare)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WirePhase {
    Prepare,
    Map,
    Combine,
    Reduce,
    Bootstrap,
    KeySwitch,
    Decrypt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub kind: MsgKind,
    pub phase: WirePhase,
    pub bytes: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("message kind {0:?} is not allowed on the wire")]
    Forbidden(MsgKind),
    #[error("self-loop at party {0}")]
    SelfLoop(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub delay_ms: f64,
    pub bandwidth_bps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { delay_ms: 0.17, bandwidth_bps: 1e9 }
    }
}

impl NetConfig {
    pub fn transfer_ms(&self, bytes: usize) -> f64 {
        self.delay_ms + bytes as f64 * 8.0 / self.bandwidth_bps * 1e3
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub messages: u64,
    pub bytes: u64,
    pub time_ms: f64,
}

impl Traffic {
    fn add(&mut self, bytes: usize, ms: f64) {
        self.messages += 1;
        self.bytes += bytes as u64;
        self.time_ms += ms;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WireStats {
    pub per_edge: BTreeMap<(usize, usize), Traffic>,
    pub per_phase: BTreeMap<WirePhase, Traffic>,
    pub total: Traffic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub sent_ms: f64,
    pub arrived_ms: f64,
}

/// Simulated network. Edges are FIFO: a message starts once the edge has
/// finished transmitting the previous one.
#[derive(Clone, Debug, Default)]
pub struct Netsim {
    pub cfg: NetConfig,
    now_ms: f64,
    horizon_ms: f64,
    edge_free: BTreeMap<(usize, usize), f64>,
    pub stats: WireStats,
    pub log: Vec<Message>,
}

impl Netsim {
    pub fn new(cfg: NetConfig) -> Netsim {
        Netsim { cfg, ..Netsim::default() }
    }

    pub fn now_ms(&self) -> f64 {
        self.now_ms
    }

    pub fn deliver(&mut self, msg: Message) -> Result<Receipt, WireError> {
        if !msg.kind.whitelisted() {
            return Err(WireError::Forbidden(msg.kind));
        }
        if msg.from == msg.to {
            return Err(WireError::SelfLoop(msg.from));
        }
        let edge = (msg.from, msg.to);
        let start = self.now_ms.max(self.edge_free.get(&edge).copied().unwrap_or(0.0));
        let ms = self.cfg.transfer_ms(msg.bytes);
        let wire_ms = ms - self.cfg.delay_ms;
        self.edge_free.insert(edge, start + wire_ms);
        let arrived = start + ms;
        self.horizon_ms = self.horizon_ms.max(arrived);
        self.stats.per_edge.entry(edge).or_default().add(msg.bytes, ms);
        self.stats.per_phase.entry(msg.phase).or_default().add(msg.bytes, ms);
        self.stats.total.add(msg.bytes, ms);
        self.log.push(msg);
        Ok(Receipt { sent_ms: start, arrived_ms: arrived })
    }

    /// Phase boundary: the clock jumps to the last arrival.
    pub fn barrier(&mut self) {
        self.now_ms = self.now_ms.max(self.horizon_ms);
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {col}: {cell:?} is not a number")]
    NotNumeric { row: usize, col: usize, cell: String },
    #[error("row {row}: label {label} is not a class index")]
    BadLabel { row: usize, label: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Column layout of a feature table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub has_header: bool,
    /// Trailing label columns: one holds a class index, several a one-hot row.
    pub label_columns: usize,
    /// Class count for index labels; inferred from the data when absent.
    pub classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { has_header: true, label_columns: 1, classes: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub features: usize,
    pub classes: usize,
}

impl Dataset {
    /// Feature width after padding to a power of two.
    pub fn padded_features(&self) -> usize {
        self.features.next_power_of_two()
    }

    /// Seeded even random split: shuffle, then deal round-robin.
    pub fn split(&self, n: usize, seed: u64) -> Vec<Vec<Sample>> {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let mut shards = vec![Vec::new(); n];
        for (k, i) in idx.into_iter().enumerate() {
            shards[k % n].push(self.samples[i].clone());
        }
        shards
    }

    /// Seeded split into a training and a held-out set.
    pub fn holdout(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let cut = ((1.0 - fraction) * idx.len() as f64).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
            features: self.features,
            classes: self.classes,
        };
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }
}

pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset, DataError> {
    let rdr = csv::ReaderBuilder::new().has_headers(schema.has_header).flexible(true).from_path(path)?;
    parse_records(rdr, schema)
}

pub fn parse_csv(text: &str, schema: CsvSchema) -> Result<Dataset, DataError> {
    let rdr = csv::ReaderBuilder::new().has_headers(schema.has_header).flexible(true).from_reader(text.as_bytes());
    parse_records(rdr, schema)
}

fn parse_records<R: std::io::Read>(mut rdr: csv::Reader<R>, schema: CsvSchema) -> Result<Dataset, DataError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1 + usize::from(schema.has_header);
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(DataError::Ragged { row, expected: w, found: rec.len() });
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| cell.trim().parse::<f64>().map_err(|_| DataError::NotNumeric { row, col: c + 1, cell: cell.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    let w = width.ok_or_else(|| DataError::Invalid("no data rows".into()))?;
    if schema.label_columns == 0 || schema.label_columns >= w {
        return Err(DataError::Invalid(format!("{} label columns in a {w}-column table", schema.label_columns)));
    }
    let features = w - schema.label_columns;
    let classes = if schema.label_columns > 1 {
        schema.label_columns
    } else {
        let max = rows.iter().map(|r| r[features]).fold(0.0, f64::max);
        schema.classes.unwrap_or(max as usize + 1)
    };
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(r, mut v)| {
            let labels = v.split_off(features);
            let y = if schema.label_columns > 1 {
                labels
            } else {
                let l = labels[0];
                if l < 0.0 || l.fract() != 0.0 || l as usize >= classes {
                    return Err(DataError::BadLabel { row: r + 1 + usize::from(schema.has_header), label: l });
                }
                (0..classes).map(|k| f64::from(k == l as usize)).collect()
            };
            Ok(Sample { x: v, y })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { samples, features, classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_is_delay_plus_serialization() {
        let mut net = Netsim::new(NetConfig::default());
        let zero = net.deliver(Message { from: 0, to: 1, kind: MsgKind::Ciphertext, phase: WirePhase::Map, bytes: 0 }).unwrap();
        assert!((zero.arrived_ms - zero.sent_ms - 0.17).abs() < 1e-12);
        let mb = net.deliver(Message { from: 1, to: 2, kind: MsgKind::Ciphertext, phase: WirePhase::Map, bytes: 1_000_000 }).unwrap();
        assert!((mb.arrived_ms - mb.sent_ms - 8.17).abs() < 1e-9);
        // Second message on the same edge queues behind the first.
        let next = net.deliver(Message { from: 1, to: 2, kind: MsgKind::Ciphertext, phase: WirePhase::Map, bytes: 0 }).unwrap();
        assert!((next.sent_ms - 8.0).abs() < 1e-9);
    }

    #[test]
    fn forbidden_payloads_are_rejected() {
        let mut net = Netsim::new(NetConfig::default());
        for kind in [MsgKind::PlainData, MsgKind::SecretKeyShare] {
            assert_eq!(net.deliver(Message { from: 0, to: 1, kind, phase: WirePhase::Map, bytes: 8 }), Err(WireError::Forbidden(kind)));
        }
        assert!(net.log.is_empty());
    }

    #[test]
    fn totals_equal_sums_of_parts() {
        let mut net = Netsim::new(NetConfig::default());
        for (i, phase) in [WirePhase::Map, WirePhase::Combine, WirePhase::Bootstrap].into_iter().enumerate() {
            for to in 1..4 {
                net.deliver(Message { from: 0, to, kind: MsgKind::Ciphertext, phase, bytes: 100 * (i + to) }).unwrap();
            }
        }
        let s = &net.stats;
        assert_eq!(s.per_edge.values().map(|t| t.bytes).sum::<u64>(), s.total.bytes);
        assert_eq!(s.per_phase.values().map(|t| t.bytes).sum::<u64>(), s.total.bytes);
        assert_eq!(s.total.messages, 9);
    }

    #[test]
    fn csv_shapes_and_errors() {
        let d = parse_csv("a,b,c,label\n1,2,3,0\n4,5,6,1\n7,8,9,1\n", CsvSchema::default()).unwrap();
        assert_eq!((d.samples.len(), d.features, d.classes), (3, 3, 2));
        assert_eq!(d.samples[1].y, vec![0.0, 1.0]);
        assert_eq!(d.padded_features(), 4);
        assert!(matches!(parse_csv("a,b\n1,2\n3\n", CsvSchema::default()), Err(DataError::Ragged { row: 3, .. })));
        assert!(matches!(parse_csv("a,b\n1,x\n", CsvSchema::default()), Err(DataError::NotNumeric { row: 2, col: 2, .. })));
        let credit = parse_csv(&format!("{}\n", vec!["0"; 24].join(",")), CsvSchema { has_header: false, ..CsvSchema::default() }).unwrap();
        assert_eq!(credit.padded_features(), 32);
    }

    #[test]
    fn shards_differ_by_at_most_one() {
        let d = Dataset { samples: (0..37).map(|i| Sample { x: vec![i as f64], y: vec![1.0] }).collect(), features: 1, classes: 1 };
        for n in 1..12 {
            let sizes: Vec<usize> = d.split(n, 3).iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            assert_eq!(sizes.iter().sum::<usize>(), 37);
        }
    }
}
