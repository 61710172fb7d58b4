use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregationConfig, BootstrapMode};
use crate::diagnose::DEFAULT_LOW_SUPPORT;
use crate::synth::SynthSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format {s:?} (expected csv or json)")),
        }
    }
}

/// Curve fed to the area metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaIntegrand {
    #[default]
    Raw,
    Smoothed,
}

impl fmt::Display for AreaIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AreaIntegrand::Raw => "raw",
            AreaIntegrand::Smoothed => "smoothed",
        })
    }
}

/// Which bootstrap modes the interval table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapSelection {
    PerBenchmark,
    Pooled,
    #[default]
    Both,
}

impl BootstrapSelection {
    pub fn modes(self) -> Vec<BootstrapMode> {
        match self {
            BootstrapSelection::PerBenchmark => vec![BootstrapMode::PerBenchmark],
            BootstrapSelection::Pooled => vec![BootstrapMode::Pooled],
            BootstrapSelection::Both => vec![BootstrapMode::PerBenchmark, BootstrapMode::Pooled],
        }
    }
}

/// Pipeline configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Keep only these models (all when absent).
    pub models: Option<Vec<String>>,
    /// Keep only these benchmarks (all when absent).
    pub benchmarks: Option<Vec<String>>,
    /// Optional record manifest enabling strict validation.
    pub record_manifest: Option<PathBuf>,
    pub area_integrand: AreaIntegrand,
    pub bootstrap_mode: BootstrapSelection,
    pub low_support_threshold: usize,
    pub aggregation: AggregationConfig,
    /// Synthetic runs for the `synth` subcommand.
    pub synth: Vec<SynthSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            out_dir: None,
            format: OutputFormat::Csv,
            models: None,
            benchmarks: None,
            record_manifest: None,
            area_integrand: AreaIntegrand::Raw,
            bootstrap_mode: BootstrapSelection::Both,
            low_support_threshold: DEFAULT_LOW_SUPPORT,
            aggregation: AggregationConfig::default(),
            synth: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.aggregation.validate()?;
        for s in &cfg.synth {
            s.validate()?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.inputs.iter_mut().for_each(resolve);
        cfg.out_dir.iter_mut().for_each(resolve);
        cfg.record_manifest.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    /// Overrides the bootstrap seed and every synth seed (offset by index).
    pub fn override_seed(&mut self, seed: u64) {
        self.aggregation.rng_seed = seed;
        for (i, s) in self.synth.iter_mut().enumerate() {
            s.seed = seed.wrapping_add(i as u64);
        }
    }
}
