//! Experiment configuration: JSON file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mslocal_core::{DisorderConfig, DisorderKind, LatticeGeometry, ResonanceParams, Schedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Correlator,
    Percolation,
    Convergence,
    VolumeConvergence,
    OracleCompare,
    Gaps,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Correlator,
        Experiment::Percolation,
        Experiment::Convergence,
        Experiment::VolumeConvergence,
        Experiment::OracleCompare,
        Experiment::Gaps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Correlator => "correlator",
            Experiment::Percolation => "percolation",
            Experiment::Convergence => "convergence",
            Experiment::VolumeConvergence => "volume_convergence",
            Experiment::OracleCompare => "oracle_compare",
            Experiment::Gaps => "gaps",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

fn default_kappa() -> f64 {
    0.25
}

fn default_volume_sizes() -> Vec<usize> {
    vec![8, 12, 16, 20, 24]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub dims: Vec<usize>,
    pub j0: f64,
    #[serde(default)]
    pub disorder: DisorderKind,
    #[serde(default)]
    pub master_seed: u64,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Overrides the `J0^delta` resonance parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Exponent of the correlator tail threshold `J0^(kappa d / 2)`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Half-widths `K` of the nested boxes `[-K, K]^D`.
    #[serde(default = "default_volume_sizes")]
    pub volume_sizes: Vec<usize>,
    /// Largest tolerated fraction of failed samples.
    #[serde(default)]
    pub max_failure_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Command-line values that replace fields of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub dims: Option<Vec<usize>>,
    pub j0: Option<f64>,
    pub num_samples: Option<usize>,
    pub master_seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub delta: Option<f64>,
    pub max_steps: Option<usize>,
}

/// `"32"` or `"12x12"`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    s.split(['x', 'X'])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad dimension `{p}`: {e}"))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, dims: &[usize], j0: f64, num_samples: usize) -> Self {
        Self {
            experiment: Some(experiment),
            dims: dims.to_vec(),
            j0,
            disorder: DisorderKind::default(),
            master_seed: 0,
            num_samples,
            delta: None,
            epsilon: None,
            m: None,
            tol: None,
            max_steps: None,
            kappa: default_kappa(),
            volume_sizes: default_volume_sizes(),
            max_failure_fraction: 0.0,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(e) = o.experiment {
            self.experiment = Some(e);
        }
        if let Some(d) = &o.dims {
            self.dims = d.clone();
        }
        if let Some(j0) = o.j0 {
            self.j0 = j0;
        }
        if let Some(n) = o.num_samples {
            self.num_samples = n;
        }
        if let Some(s) = o.master_seed {
            self.master_seed = s;
        }
        if let Some(p) = &o.output {
            self.output = Some(p.clone());
        }
        if let Some(d) = o.delta {
            self.delta = Some(d);
        }
        if let Some(m) = o.max_steps {
            self.max_steps = Some(m);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.experiment.is_none() {
            return invalid("no experiment selected");
        }
        if self.num_samples < 1 {
            return invalid("num_samples must be at least 1");
        }
        if !(self.j0 >= 0.0 && self.j0.is_finite()) {
            return invalid(format!(
                "j0 must be finite and nonnegative, got {}",
                self.j0
            ));
        }
        LatticeGeometry::new(&self.dims).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.disorder
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return invalid(format!("delta must be positive, got {d}"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return invalid(format!("epsilon must lie in [0, 1], got {e}"));
            }
        }
        if let Some(m) = self.m {
            if !(m > 0.0 && m.is_finite()) {
                return invalid(format!("m must be positive, got {m}"));
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return invalid(format!("tol must be positive, got {t}"));
            }
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return invalid(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return invalid("max_failure_fraction must lie in [0, 1]");
        }
        if self.experiment == Some(Experiment::VolumeConvergence) {
            if !(1..=2).contains(&self.dims.len()) {
                return invalid("volume_convergence runs in one or two dimensions");
            }
            if self.volume_sizes.is_empty() || self.volume_sizes.windows(2).any(|w| w[0] >= w[1]) {
                return invalid("volume_sizes must be nonempty and strictly increasing");
            }
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment.expect("validated config has an experiment")
    }

    pub fn geometry(&self) -> LatticeGeometry {
        LatticeGeometry::new(&self.dims).expect("validated dims")
    }

    pub fn disorder(&self) -> DisorderConfig {
        DisorderConfig {
            kind: self.disorder,
            master_seed: self.master_seed,
        }
    }

    pub fn params(&self) -> ResonanceParams {
        let dim = self.dims.len();
        let delta = self.delta.unwrap_or(ResonanceParams::DEFAULT_DELTA);
        let mut p = ResonanceParams::with_delta(self.j0, dim, delta);
        if let Some(e) = self.epsilon {
            p = p.epsilon(e);
        }
        if let Some(m) = self.m {
            p = p.m(m);
        }
        p
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::with_limits(
            self.params(),
            self.tol.unwrap_or(Schedule::DEFAULT_TOL),
            self.max_steps.unwrap_or(Schedule::DEFAULT_MAX_STEPS),
        )
    }

    /// One-line JSON of the resolved config with the code version.
    pub fn header_json(&self) -> String {
        let value = serde_json::json!({
            "config": self,
            "version": crate::VERSION,
        });
        value.to_string()
    }
}
