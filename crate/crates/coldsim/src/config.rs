//! Experiment configuration: a JSON schema with strict key checking, seed
//! handling, bundled presets, and the run manifest.
//!
//! All durations in the config are f64 nanoseconds. Unknown keys are
//! rejected everywhere so typos fail loudly. Every run writes a
//! `manifest.json` echoing the resolved configuration, the tool version,
//! the master seed, and a hash of the raw config bytes.

use serde::{Deserialize, Serialize};

use crate::analytics::{DeviceGeometry, EnergyParams};
use crate::array::{DramGeometry, ProfileDistribution};
use crate::characterize::{Metric, SweepGrid};
use crate::engine::{Temperature, SPEEDUP_MODERATE};
use crate::error::{Result, SimError};
use crate::rng::fnv1a;
use crate::stream::TimingParams;
use crate::units::MS;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Temperature section: operating point plus the 45 -> 95 °C flip-time
/// speedup that pins the scale profile.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureConfig {
    pub celsius: f64,
    #[serde(default = "default_speedup")]
    pub speedup_45_to_95: f64,
}

fn default_speedup() -> f64 {
    SPEEDUP_MODERATE
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        TemperatureConfig {
            celsius: 85.0,
            speedup_45_to_95: SPEEDUP_MODERATE,
        }
    }
}

impl TemperatureConfig {
    pub fn build(&self) -> Result<Temperature> {
        Temperature::new(self.celsius, self.speedup_45_to_95)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeConfig {
    #[serde(default)]
    pub bank: usize,
    /// Subarray the metrics are reported for; defaults to the middle one.
    #[serde(default)]
    pub subarray: Option<usize>,
    pub grid: SweepGrid,
    pub metrics: Vec<Metric>,
    #[serde(default = "default_radius")]
    pub exclusion_radius: usize,
}

fn default_radius() -> usize {
    8
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverseConfig {
    #[serde(default)]
    pub bank: usize,
    /// Explicit subarray sizes to build the probed array with; defaults to
    /// the uniform geometry.
    #[serde(default)]
    pub subarray_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigateConfig {
    #[serde(default)]
    pub bank: usize,
    /// Aggressor row; defaults to the middle row of the middle subarray.
    #[serde(default)]
    pub aggressor_row: Option<usize>,
    /// Scenario length.
    pub duration: f64,
    /// Periodic refresh windows to compare.
    #[serde(default = "default_windows")]
    pub periodic_windows: Vec<f64>,
    /// PRVR pass budget; derived as half the measured time to the first
    /// flip when absent.
    #[serde(default)]
    pub prvr_t_first: Option<f64>,
    #[serde(default = "default_trigger")]
    pub prvr_trigger_fraction: f64,
    #[serde(default = "default_t_weak")]
    pub raidr_t_weak: f64,
    #[serde(default = "default_t_strong")]
    pub raidr_t_strong: f64,
}

fn default_windows() -> Vec<f64> {
    vec![8.0 * MS, 32.0 * MS]
}
fn default_trigger() -> f64 {
    0.5
}
fn default_t_weak() -> f64 {
    64.0 * MS
}
fn default_t_strong() -> f64 {
    1024.0 * MS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrvrModelConfig {
    pub n_victims: u64,
    pub t_first: f64,
    #[serde(default = "default_window_32")]
    pub default_window: f64,
    #[serde(default = "default_window_8")]
    pub fast_window: f64,
}

fn default_window_32() -> f64 {
    32.0 * MS
}
fn default_window_8() -> f64 {
    8.0 * MS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Weak-row fractions of the refresh-ops grid.
    pub weak_fractions: Vec<f64>,
    /// Strong windows of the refresh-ops grid.
    #[serde(default = "default_strong_windows")]
    pub strong_windows: Vec<f64>,
    #[serde(default = "default_t_weak")]
    pub t_weak: f64,
    #[serde(default = "DeviceGeometry::preset_32gb")]
    pub device: DeviceGeometry,
    #[serde(default)]
    pub energy: Option<EnergyParams>,
    pub prvr: PrvrModelConfig,
}

fn default_strong_windows() -> Vec<f64> {
    crate::analytics::standard_strong_windows().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeChoice {
    #[serde(rename = "hamming-7-4")]
    Hamming74,
    #[serde(rename = "secded-72-64")]
    Secded7264,
    #[serde(rename = "sec-136-128")]
    Sec136128,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EccConfig {
    pub codes: Vec<CodeChoice>,
    pub weights: Vec<usize>,
    #[serde(default = "default_trials")]
    pub monte_carlo_trials: u64,
    #[serde(default = "default_chunk_bits")]
    pub chunk_bits: usize,
    /// Parity-check matrix file for the custom code choice.
    #[serde(default)]
    pub h_matrix_file: Option<String>,
    /// Refresh interval of the disturbance run feeding the histogram.
    #[serde(default = "default_hist_interval")]
    pub histogram_interval: f64,
}

fn default_trials() -> u64 {
    10_000
}
fn default_chunk_bits() -> usize {
    64
}
fn default_hist_interval() -> f64 {
    512.0 * MS
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: DramGeometry,
    #[serde(default = "ProfileDistribution::illustrative")]
    pub profile: ProfileDistribution,
    #[serde(default)]
    pub timings: TimingParams,
    #[serde(default)]
    pub temperature: TemperatureConfig,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub characterize: Option<CharacterizeConfig>,
    #[serde(default)]
    pub reverse_subarrays: Option<ReverseConfig>,
    #[serde(default)]
    pub mitigate: Option<MitigateConfig>,
    #[serde(default)]
    pub analytics: Option<AnalyticsConfig>,
    #[serde(default)]
    pub ecc: Option<EccConfig>,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.timings.validate()?;
        if let Some(c) = &self.characterize {
            if c.grid.is_empty() {
                return Err(SimError::Config(
                    "characterize grid has an empty axis".into(),
                ));
            }
            if c.metrics.is_empty() {
                return Err(SimError::Config(
                    "characterize needs at least one metric".into(),
                ));
            }
        }
        if let Some(m) = &self.mitigate {
            if !(m.duration > 0.0) {
                return Err(SimError::Config(
                    "mitigate duration must be positive".into(),
                ));
            }
            if m.raidr_t_weak > m.raidr_t_strong {
                return Err(SimError::Config(
                    "raidr t_weak must not exceed t_strong".into(),
                ));
            }
        }
        if let Some(a) = &self.analytics {
            for &f in &a.weak_fractions {
                if !(0.0..=1.0).contains(&f) {
                    return Err(SimError::Config(format!(
                        "weak fraction {f} outside [0, 1]"
                    )));
                }
            }
            if a.weak_fractions.is_empty() || a.strong_windows.is_empty() {
                return Err(SimError::Config("analytics grid has an empty axis".into()));
            }
        }
        if let Some(e) = &self.ecc {
            if e.codes.is_empty() || e.weights.is_empty() {
                return Err(SimError::Config("ecc needs codes and weights".into()));
            }
            if e.codes.contains(&CodeChoice::Custom) && e.h_matrix_file.is_none() {
                return Err(SimError::Config(
                    "custom code requires h_matrix_file".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Bundled presets addressable by `--preset`.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "default" => Some(include_str!("../presets/default.json")),
        "paper-fig-refresh-ops" => Some(include_str!("../presets/paper-fig-refresh-ops.json")),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["default", "paper-fig-refresh-ops"]
}

/// Run manifest: tool version, seed, config hash, and the resolved config.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool_version: &'static str,
    pub master_seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
}

pub fn config_hash(raw: &str) -> String {
    format!("{:016x}", fnv1a(raw.as_bytes()))
}
