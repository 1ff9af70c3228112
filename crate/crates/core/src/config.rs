//! Run configuration: one TOML file describing the network, the federation,
//! the crypto parameters, the data source and the simulated wire.
//!
//! Unknown keys are rejected. Syntax and type errors carry the parser's line
//! and column; semantic errors name the offending key and its line.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::cost::{select_params, CryptoPlan, PlanRequest};
use crate::federation::{FedConfig, TopologyKind};
use crate::mhe::params::ChainSpec;
use crate::netsim::{load_csv, CsvSchema, Dataset, NetConfig};
use crate::nn::spec::{Network, NetworkSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Syntax { path: String, source: toml::de::Error },
    #[error("{path}:{line}: `{key}`: {msg}")]
    Invalid { path: String, line: usize, key: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Lattice-based multiparty backend.
    Real,
    /// Noiseless backend with identical level and scale bookkeeping.
    #[default]
    Reference,
}

fn yes() -> bool {
    true
}
fn default_parties() -> usize {
    3
}
fn default_seed() -> u64 {
    1
}
fn default_scale() -> u32 {
    32
}
fn default_lambda() -> u32 {
    128
}
fn one() -> usize {
    1
}
fn default_holdout() -> f64 {
    0.2
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_parties")]
    pub parties: usize,
    #[serde(default)]
    pub topology: TopologyKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Collective z-score normalization before training.
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection { parties: default_parties(), topology: TopologyKind::default(), seed: default_seed(), normalize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoSection {
    #[serde(default)]
    pub backend: BackendKind,
    /// Insecure small rings; the security table is not consulted.
    #[serde(default = "yes")]
    pub toy: bool,
    /// `log2` of the ring dimension. With `levels`, fixes the chain; when
    /// either is absent the planner chooses.
    #[serde(default)]
    pub log_ring_dim: Option<u32>,
    /// Rescaling primes above the base prime.
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default = "default_scale")]
    pub scale_bits: u32,
    #[serde(default = "default_lambda")]
    pub lambda: u32,
}

impl Default for CryptoSection {
    fn default() -> Self {
        CryptoSection {
            backend: BackendKind::default(),
            toy: true,
            log_ring_dim: None,
            levels: None,
            scale_bits: default_scale(),
            lambda: default_lambda(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file, relative to the config file.
    pub path: PathBuf,
    #[serde(default = "yes")]
    pub has_header: bool,
    #[serde(default = "one")]
    pub label_columns: usize,
    #[serde(default)]
    pub classes: Option<usize>,
    /// Held-out fraction for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Artifact directory, relative to the config file.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub network: NetworkSpec,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub crypto: CryptoSection,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub wire: NetConfig,
    /// Directory of the file the config was read from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// 1-based line of `key` inside `[section]` (or of the section header when
/// the key is absent); 1 when neither is found.
fn locate(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim_matches(['[', ']']).trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        let k = t.split('=').next().unwrap_or("").trim();
        if current == section && k == key {
            return i + 1;
        }
    }
    header.unwrap_or(1)
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Syntax { path: path.into(), source })?;
        cfg.base_dir = Path::new(path).parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate(text, path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
        RunConfig::parse(&text, &p)
    }

    fn validate(&self, text: &str, path: &str) -> Result<(), ConfigError> {
        let bad = |section: &str, key: &str, msg: String| ConfigError::Invalid {
            path: path.into(),
            line: locate(text, section, key),
            key: if section.is_empty() { key.into() } else { format!("{section}.{key}") },
            msg,
        };
        if let Err(e) = self.network.validate() {
            return Err(bad("network", "layers", e.to_string()));
        }
        if let Err(e) = Network::compile(&self.network) {
            return Err(bad("network", "layers", e.to_string()));
        }
        if self.federation.parties == 0 {
            return Err(bad("federation", "parties", "at least one party is required".into()));
        }
        let c = &self.crypto;
        if c.log_ring_dim.is_some() != c.levels.is_some() {
            return Err(bad("crypto", "levels", "set both `log_ring_dim` and `levels`, or neither".into()));
        }
        if let Some(l) = c.log_ring_dim {
            if !(2..=16).contains(&l) {
                return Err(bad("crypto", "log_ring_dim", format!("{l} is outside 2..=16")));
            }
        }
        if c.levels == Some(0) {
            return Err(bad("crypto", "levels", "at least one rescaling prime is required".into()));
        }
        if !(20..=52).contains(&c.scale_bits) {
            return Err(bad("crypto", "scale_bits", format!("{} is outside 20..=52", c.scale_bits)));
        }
        if ![128, 192, 256].contains(&c.lambda) {
            return Err(bad("crypto", "lambda", format!("{} is not one of 128, 192, 256", c.lambda)));
        }
        if let Some(d) = &self.data {
            if !(0.0..1.0).contains(&d.holdout) {
                return Err(bad("data", "holdout", format!("{} is outside [0, 1)", d.holdout)));
            }
            if d.label_columns == 0 {
                return Err(bad("data", "label_columns", "at least one label column is required".into()));
            }
        }
        if !(self.wire.delay_ms >= 0.0 && self.wire.bandwidth_bps > 0.0) {
            return Err(bad("wire", "bandwidth_bps", "delay must be >= 0 and bandwidth > 0".into()));
        }
        Ok(())
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            parties: self.federation.parties,
            topology: self.federation.topology,
            seed: self.federation.seed,
            normalize: self.federation.normalize,
            net: self.wire,
        }
    }

    pub fn plan_request(&self) -> PlanRequest {
        let mut r = PlanRequest::new(self.crypto.lambda, self.crypto.scale_bits, self.federation.parties);
        r.toy = self.crypto.toy;
        r
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    /// Chain recipe: the fixed one when given, otherwise the planner's choice.
    pub fn chain(&self, net: &Network) -> Result<(ChainSpec, Option<CryptoPlan>), crate::cost::CostError> {
        let c = &self.crypto;
        if let (Some(log_n), Some(levels)) = (c.log_ring_dim, c.levels) {
            let spec = if c.toy {
                ChainSpec { scale_bits: c.scale_bits, ..ChainSpec::toy(log_n, levels) }
            } else {
                ChainSpec {
                    log_ring_dim: log_n,
                    levels,
                    base_bits: (c.scale_bits + 8).min(61),
                    scale_bits: c.scale_bits,
                    special_bits: 61,
                    security_level: c.lambda,
                    toy_mode: false,
                }
            };
            return Ok((spec, None));
        }
        let plan = select_params(net, &self.plan_request())?;
        let spec = ChainSpec {
            log_ring_dim: plan.ring_dim.trailing_zeros(),
            levels: plan.levels - 1,
            base_bits: plan.prime_bits[0],
            scale_bits: plan.scale_bits,
            special_bits: 61,
            security_level: if c.toy { ChainSpec::toy(2, 1).security_level } else { c.lambda },
            toy_mode: c.toy,
        };
        Ok((spec, Some(plan)))
    }

    /// The configured dataset, split into training rows and held-out rows.
    pub fn dataset(&self) -> Result<Option<(Dataset, Dataset)>, crate::netsim::DataError> {
        let Some(d) = &self.data else { return Ok(None) };
        let schema = CsvSchema { has_header: d.has_header, label_columns: d.label_columns, classes: d.classes };
        let all = load_csv(&self.base_dir.join(&d.path), schema)?;
        Ok(Some(all.holdout(d.holdout, self.federation.seed)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[network]
input_dim = 4
learning_rate = 1.0
local_batch = 2
global_iters = 3

[[network.layers]]
kind = "fc"
out = 2
"#;

    #[test]
    fn defaults_fill_every_section() {
        let c = RunConfig::parse(MINIMAL, "run.toml").unwrap();
        assert_eq!(c.federation, FederationSection::default());
        assert_eq!(c.crypto, CryptoSection::default());
        assert_eq!(c.wire, NetConfig::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.data.is_none());
    }

    #[test]
    fn unknown_keys_fail_with_a_line_number() {
        let text = format!("{MINIMAL}\n[federation]\nparties = 3\nparites = 4\n");
        let msg = RunConfig::parse(&text, "run.toml").unwrap_err().to_string();
        assert!(msg.contains("parites"), "{msg}");
        assert!(msg.contains("line 14"), "{msg}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = format!("{MINIMAL}\n[crypto]\ntoy = true\nlambda = 100\n");
        match RunConfig::parse(&text, "run.toml").unwrap_err() {
            ConfigError::Invalid { line, key, .. } => {
                assert_eq!(key, "crypto.lambda");
                assert_eq!(line, 14);
            }
            e => panic!("unexpected {e}"),
        }
        let text = MINIMAL.replace("out = 2", "out = 0");
        match RunConfig::parse(&text, "run.toml").unwrap_err() {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "network.layers"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn fixed_chain_is_used_verbatim() {
        let text = format!("{MINIMAL}\n[crypto]\nlog_ring_dim = 6\nlevels = 5\n");
        let c = RunConfig::parse(&text, "run.toml").unwrap();
        let net = Network::compile(&c.network).unwrap();
        let (spec, plan) = c.chain(&net).unwrap();
        assert!(plan.is_none());
        assert_eq!((spec.log_ring_dim, spec.levels, spec.toy_mode), (6, 5, true));
        let text = format!("{MINIMAL}\n[crypto]\nlevels = 5\n");
        assert!(RunConfig::parse(&text, "run.toml").is_err());
    }
}
