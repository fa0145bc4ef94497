//! Run configuration: one TOML (or provenance JSON) file drives every
//! subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vecchia_core::likelihood::{FitOptions, LikelihoodSpec, Model, ResampleKind};
use vecchia_core::spatial::OrderingKind;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<SitesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub are: Option<AreConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<DiagConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
}

/// Exactly one of `grid` (side length of a unit-spaced square grid) or
/// `file` (CSV with header `id,x,y`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SitesConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub spec: LikelihoodSpec,
    #[serde(default)]
    pub fixed: Vec<bool>,
    #[serde(default)]
    pub options: FitOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample: Option<ResampleConfig>,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    pub kind: ResampleKind,
    /// Bootstrap size; ignored by the jackknife.
    #[serde(default)]
    pub replicates: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_n() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    pub schemes: Vec<LikelihoodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_parameter() -> String {
    "lambda".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_parameter")]
    pub parameter: String,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl SweepConfig {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let span = (self.to - self.from) / self.step;
        if !(self.step > 0.0 && span.is_finite() && span >= -1e-9) {
            return Err(CliError::Config(format!(
                "sweep from {} to {} by {} is empty or unbounded",
                self.from, self.to, self.step
            )));
        }
        let count = (span + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|k| self.from + k as f64 * self.step).collect())
    }
}

fn default_fraction() -> f64 {
    0.1
}

fn default_neighbours() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub data: PathBuf,
    /// Fit results to score; the top-level `model`, when present, is scored too.
    #[serde(default)]
    pub fits: Vec<PathBuf>,
    /// Validation site ids. Without it, the last `validation_fraction` of the
    /// max-min ordering is held out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_neighbours")]
    pub neighbours: usize,
}

fn default_bins() -> usize {
    10
}

fn default_step() -> f64 {
    15.0
}

fn default_curve() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagConfig {
    pub fit: PathBuf,
    pub data: PathBuf,
    /// Upper edge of the distance classes; defaults to the largest site
    /// separation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance: Option<f64>,
    #[serde(default = "default_bins")]
    pub distance_bins: usize,
    #[serde(default = "default_step")]
    pub direction_step_deg: f64,
    #[serde(default = "default_curve")]
    pub curve_points: usize,
}

fn default_reps() -> usize {
    3
}

fn default_bench_n() -> usize {
    10
}

fn default_ordering() -> OrderingKind {
    OrderingKind::MaxMin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Grid side lengths; `D = side²`.
    pub sides: Vec<usize>,
    pub d: Vec<usize>,
    #[serde(default = "default_ordering")]
    pub ordering: OrderingKind,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_bench_n")]
    pub n: usize,
}

impl RunConfig {
    /// Read a TOML config, or a JSON document whose `provenance.config` (or
    /// top-level `config`) holds a previously resolved config.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let inner = v
                .get("provenance")
                .and_then(|p| p.get("config"))
                .or_else(|| v.get("config"))
                .cloned()
                .unwrap_or(v);
            // a replayed config already carries absolute paths
            return serde_json::from_value(inner).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
        }
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(dir).map_err(|e| CliError::io(path, e))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Make relative paths relative to `base`, so the resolved config can be
    /// replayed from any working directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = self.sites.as_mut().and_then(|s| s.file.as_mut()) {
            fix(s);
        }
        if let Some(f) = self.fit.as_mut() {
            fix(&mut f.data);
        }
        if let Some(s) = self.score.as_mut() {
            fix(&mut s.data);
            s.fits.iter_mut().for_each(fix);
            if let Some(v) = s.validation.as_mut() {
                fix(v);
            }
        }
        if let Some(d) = self.diag.as_mut() {
            fix(&mut d.fit);
            fix(&mut d.data);
        }
        if let Some(o) = self.out.as_mut() {
            fix(o);
        }
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config(format!("`{command}` is stochastic: set `seed` in the config or pass --seed")))
    }

    pub fn require_model(&self) -> Result<Model, CliError> {
        let m = self.model.ok_or_else(|| CliError::Config("missing [model] block".into()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] block")))
    }
}
