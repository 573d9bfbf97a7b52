//! Run configuration: typed TOML sections plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{Architecture, OptimizerConfig};
use crate::contrastive::BaselineConfig;
use crate::datasets::{SplitProportions, SyntheticBenchmarkConfig};
use crate::error::{Error, Result};
use crate::protonet::{EpisodicConfig, PrototypeDistance};
use crate::rotation::PretrainConfig;
use crate::sampler::EpisodeSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Supervised source training only.
    BackboneOnly,
    /// Contrastive pseudo-label training on the target's unlabelled images.
    Baseline,
    /// Joint supervised + rotation training, then episodic training.
    Ssl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Directory with `<domain>/<class>/<image>` files. The synthetic
    /// generator is used when absent.
    pub data_root: Option<PathBuf>,
    /// Resize loaded images to `(height, width)`.
    pub resize: Option<(usize, usize)>,
    pub synthetic: SyntheticBenchmarkConfig,
    pub source_domain: String,
    pub target_domains: Vec<String>,
    /// Multiplies the unlabelled target pool with freshly rendered images.
    pub unlabelled_multiplier: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            data_root: None,
            resize: None,
            synthetic: SyntheticBenchmarkConfig::default(),
            source_domain: "real".into(),
            target_domains: vec!["clipart".into(), "painting".into(), "sketch".into()],
            unlabelled_multiplier: 1,
        }
    }
}

impl BenchmarkSection {
    /// Domains the run needs to load.
    pub fn domains(&self) -> Vec<String> {
        let mut d = vec![self.source_domain.clone()];
        d.extend(self.target_domains.iter().filter(|t| **t != self.source_domain).cloned());
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub proportions: SplitProportions,
    pub seed: u64,
    /// Existing manifest to use instead of building one.
    pub manifest: Option<PathBuf>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            proportions: SplitProportions::Counts {
                train: 16,
                unlabelled: 16,
                test: 8,
            },
            seed: 0,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub kind: MethodKind,
    /// Name used in reports; derived from `kind` when absent.
    pub label: Option<String>,
    pub seed: u64,
    /// Start the baseline from the supervised source model instead of a
    /// fresh initialisation.
    pub baseline_warm_start: bool,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            kind: MethodKind::Ssl,
            label: None,
            seed: 0,
            baseline_warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_way: usize,
    pub shots: Vec<usize>,
    pub n_query: usize,
    pub n_episodes: usize,
    pub seed: u64,
    pub distance: PrototypeDistance,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_way: 5,
            shots: vec![1, 5],
            n_query: 15,
            n_episodes: crate::evaluation::DEFAULT_EVAL_EPISODES,
            seed: 0,
            distance: PrototypeDistance::SquaredEuclidean,
        }
    }
}

impl EvalSection {
    pub fn specs(&self) -> Vec<EpisodeSpec> {
        self.shots
            .iter()
            .map(|&k| EpisodeSpec::new(self.n_way, k, self.n_query, self.seed))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkSection,
    pub split: SplitSection,
    pub method: MethodSection,
    pub backbone: Architecture,
    pub pretrain: PretrainConfig,
    pub baseline: BaselineConfig,
    pub episodic: EpisodicConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkSection::default(),
            split: SplitSection::default(),
            method: MethodSection::default(),
            backbone: Architecture::default(),
            pretrain: PretrainConfig {
                epochs: 12,
                optimizer: OptimizerConfig::with_lr(0.05),
                ..PretrainConfig::default()
            },
            baseline: BaselineConfig::default(),
            episodic: EpisodicConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// `overrides` of the form `section.key=value`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::NotFound(p.to_path_buf()),
                    _ => e.into(),
                })?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let p = dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&p, self.to_toml()?)?;
        Ok(p)
    }

    /// Label used in reports: the explicit label, else `backbone`, `ssl`,
    /// `baseline`, or `baseline1` when the unlabelled pool is doubled.
    pub fn method_label(&self) -> String {
        if let Some(l) = &self.method.label {
            return l.clone();
        }
        match self.method.kind {
            MethodKind::BackboneOnly => "backbone".into(),
            MethodKind::Ssl => "ssl".into(),
            MethodKind::Baseline => match self.benchmark.unlabelled_multiplier {
                1 => "baseline".into(),
                2 => "baseline1".into(),
                m => format!("baseline-x{m}"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.benchmark;
        if b.data_root.is_none() {
            b.synthetic.validate()?;
            for d in b.domains() {
                if !b.synthetic.domains.contains(&d) {
                    return Err(Error::Config(format!("domain {d:?} is not in benchmark.synthetic.domains")));
                }
            }
        } else if b.unlabelled_multiplier != 1 {
            return Err(Error::Config("unlabelled_multiplier > 1 needs the synthetic benchmark".into()));
        }
        if b.unlabelled_multiplier == 0 {
            return Err(Error::Config("unlabelled_multiplier must be >= 1".into()));
        }
        if b.target_domains.is_empty() {
            return Err(Error::Config("benchmark.target_domains is empty".into()));
        }
        if b.target_domains.contains(&b.source_domain) {
            return Err(Error::Config(format!("source domain {:?} is also a target", b.source_domain)));
        }
        if let Some(m) = &self.split.manifest {
            if !m.exists() {
                return Err(Error::NotFound(m.clone()));
            }
        }
        if self.eval.shots.is_empty() || self.eval.n_episodes == 0 {
            return Err(Error::Config("eval needs at least one shot count and one episode".into()));
        }
        for s in self.eval.specs() {
            s.validate()?;
        }
        if let Architecture::ConvSmall { channels } = &self.backbone {
            if channels.is_empty() || channels.contains(&0) {
                return Err(Error::Config("backbone channels must be non-empty and positive".into()));
            }
        }
        self.pretrain.validate()?;
        self.baseline.validate()?;
        self.episodic.validate()
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

/// Sets `a.b.c = value` in `table`. `value` is read as a TOML value, falling
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: {k:?} is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_apply_and_round_trip() {
        let c = RunConfig::load(
            None,
            &[
                "method.kind=baseline".into(),
                "benchmark.unlabelled_multiplier=2".into(),
                "pretrain.optimizer.learning_rate=0.02".into(),
                "eval.shots=[5]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.method.kind, MethodKind::Baseline);
        assert_eq!(c.method_label(), "baseline1");
        assert_eq!(c.pretrain.optimizer.learning_rate, 0.02);
        assert_eq!(c.eval.shots, vec![5]);
        assert_eq!(RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::load(None, &["method.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["method.kind=fancy".into()]), Err(Error::Config(_))));
        assert!(RunConfig::load(None, &["benchmark.source_domain=clipart".into()]).is_err());
        assert!(RunConfig::load(None, &["noequals".into()]).is_err());
    }
}
