use std::path::{Path, PathBuf};

use pathwise::functionals::{CylinderFunction, DensitySpec, FunctionalSpec};
use pathwise::partitions::PartitionSpec;
use pathwise::paths::{generate_stream, read_csv, GeneratorSpec, JumpDetection};
use pathwise::trading::RealizedDensity;
use pathwise::{ConvergenceConfig, FdConfig, PartitionSequence, SampledPath};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One experiment, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub partition: PartitionSpec,
    pub path: PathConfig,
    #[serde(default)]
    pub functional: Option<FunctionalSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub probes: Option<Vec<f64>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub integrate: IntegrateConfig,
    #[serde(default)]
    pub hedge: HedgeConfig,
    #[serde(default)]
    pub plausibility: PlausibilityConfig,
}

/// Either a generator or a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Relative gap above which file increments are read as jumps.
    #[serde(default)]
    pub jump_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub qv_tol: f64,
    pub conv_tol: f64,
    pub monotone_window: usize,
    pub fd: FdConfig,
    pub self_financing: f64,
    pub fpde: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = ConvergenceConfig::default();
        Self {
            qv_tol: c.tol,
            conv_tol: c.tol,
            monotone_window: c.monotone_window,
            fd: FdConfig::default(),
            self_financing: 1e-10,
            fpde: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn qv(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            tol: self.qv_tol,
            monotone_window: self.monotone_window,
        }
    }

    pub fn integral(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            tol: self.conv_tol,
            monotone_window: self.monotone_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateConfig {
    /// `f` for the Itô residual sweep; defaults to `x²` on coordinate 0.
    pub ito_function: Option<CylinderFunction>,
    /// Top levels of the residual sweep; defaults to every level from 2.
    pub sweep_levels: Option<Vec<usize>>,
    /// Exponents for the p-variation table of coordinate 0.
    pub p_variation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgeConfig {
    /// Number of scenario paths; scenario `k` uses stream `k` of the generator.
    pub paths: usize,
    /// Quadratic-variation density the functional is priced under.
    pub model: Option<DensitySpec>,
    pub realized: RealizedDensity,
    /// Trading level; defaults to the top level.
    pub level: Option<usize>,
    pub fpde_samples: usize,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        Self {
            paths: 1,
            model: None,
            realized: RealizedDensity::default(),
            level: None,
            fpde_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlausibilityConfig {
    /// Replace the configured path by the adversarial construction on the dyadic grid.
    pub adversarial: bool,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Replaces the top level of the partition.
    pub fn set_level(&mut self, level: usize) -> Result<(), CliError> {
        match &mut self.partition {
            PartitionSpec::Dyadic { max_level, .. } => {
                *max_level = level;
                Ok(())
            }
            PartitionSpec::Explicit { levels, .. } => {
                if level >= levels.len() {
                    return Err(CliError::Config(format!(
                        "level {level} exceeds the {} explicit levels",
                        levels.len()
                    )));
                }
                levels.truncate(level + 1);
                Ok(())
            }
        }
    }

    pub fn sequence(&self) -> Result<PartitionSequence, CliError> {
        self.partition.build().map_err(|e| CliError::Config(format!("partition: {e}")))
    }

    /// Scenario path `stream`; files only provide stream 0.
    pub fn load_path(&self, seq: &PartitionSequence, stream: u64) -> Result<SampledPath, CliError> {
        match (&self.path.generator, &self.path.file) {
            (Some(g), None) => {
                generate_stream(g, self.seed, stream, seq).map_err(|e| CliError::Config(format!("path generator: {e}")))
            }
            (None, Some(file)) => {
                if stream != 0 {
                    return Err(CliError::Config("a path file provides a single scenario".into()));
                }
                let f = std::fs::File::open(file)
                    .map_err(|e| CliError::Config(format!("cannot open path file {}: {e}", file.display())))?;
                let detection = self.path.jump_gap.map_or(JumpDetection::Off, JumpDetection::RelativeGap);
                read_csv(std::io::BufReader::new(f), detection)
                    .map_err(|e| CliError::Config(format!("path file {}: {e}", file.display())))
            }
            _ => Err(CliError::Config("path needs exactly one of `generator` or `file`".into())),
        }
    }
}
