use std::path::{Path, PathBuf};

use mirrorplay::dynamics::SimConfig;
use mirrorplay::games::{
    BilinearGame, BilinearParams, CournotGame, CournotParams, Game, QuadraticGame, QuadraticGameParams,
};
use mirrorplay::linalg::matrix_from_rows;
use mirrorplay::mirror_maps::{AggregatedMirror, MirrorMap};
use mirrorplay::stochastic::SdeConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checks::CHECK_NAMES;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameSpec {
    Cournot(CournotParams),
    Bilinear(BilinearParams),
    Quadratic(QuadraticGameParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MirrorSpec {
    /// `φ(y) = ½ yᵀ A y` with the given row-major `A`.
    Quadratic(Vec<Vec<f64>>),
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: f64,
    pub dt: f64,
    /// Initial dual state; zeros when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: 10.0,
            dt: 1e-3,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    pub epsilon: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Initial dual state; falls back to `sim.x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_record_stride")]
    pub record_stride: usize,
}

fn default_horizon() -> f64 {
    10.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_paths() -> usize {
    1000
}

fn default_record_stride() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Row stride for time-series CSV files.
    pub stride: usize,
    pub formats: Vec<Format>,
    /// Also write every Monte Carlo path (thinned by `stride`).
    pub paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            stride: 1,
            formats: vec![Format::Csv, Format::Json],
            paths: false,
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn default_checks() -> Vec<String> {
    CHECK_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub game: GameSpec,
    /// One entry per player; identity maps when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<Vec<MirrorSpec>>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticSection>,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default)]
    pub output: OutputSection,
    /// Seed for every random draw of a run.
    #[serde(default)]
    pub seed: u64,
}

/// A validated configuration with its game and mirror instantiated.
#[derive(Debug)]
pub struct Scenario {
    pub game: Box<dyn Game>,
    pub mirror: AggregatedMirror,
    pub sim: SimConfig,
    pub sde: Option<SdeConfig>,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.build()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates every invariant and instantiates the scenario.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("expected {SCHEMA_VERSION}, got {}", self.schema)));
        }
        for name in &self.checks {
            if !CHECK_NAMES.contains(&name.as_str()) {
                return Err(invalid(
                    "checks",
                    format!("unknown check `{name}`; valid names: {}", CHECK_NAMES.join(", ")),
                ));
            }
        }
        if self.output.stride == 0 {
            return Err(invalid("output.stride", "must be at least 1"));
        }

        let game: Box<dyn Game> = match &self.game {
            GameSpec::Cournot(p) => Box::new(CournotGame::new(p.clone()).map_err(|e| invalid("game.cournot", e.to_string()))?),
            GameSpec::Bilinear(p) => {
                Box::new(BilinearGame::new(p.clone()).map_err(|e| invalid("game.bilinear", e.to_string()))?)
            }
            GameSpec::Quadratic(p) => {
                Box::new(QuadraticGame::new(p.clone()).map_err(|e| invalid("game.quadratic", e.to_string()))?)
            }
        };
        let dims = game.dims().to_vec();

        let mirror = match &self.mirror {
            None => AggregatedMirror::identity(&dims),
            Some(specs) => {
                if specs.len() != dims.len() {
                    return Err(invalid(
                        "mirror",
                        format!("{} entries for {} players", specs.len(), dims.len()),
                    ));
                }
                let parts = specs
                    .iter()
                    .zip(&dims)
                    .enumerate()
                    .map(|(i, (spec, &ni))| mirror_part(spec, ni).map_err(|m| invalid(format!("mirror[{i}]"), m)))
                    .collect::<Result<Vec<_>, _>>()?;
                AggregatedMirror::new(parts).map_err(|e| invalid("mirror", e.to_string()))?
            }
        };

        let n = mirror.dim();
        let x0 = self.sim.x0.clone().unwrap_or_else(|| vec![0.0; n]);
        let sim = SimConfig::new(self.sim.horizon, self.sim.dt, x0);
        sim.validate(n).map_err(|e| invalid("sim", e.to_string()))?;

        let sde = match &self.stochastic {
            None => None,
            Some(s) => {
                let sde = SdeConfig {
                    epsilon: s.epsilon,
                    horizon: s.horizon,
                    dt: s.dt,
                    paths: s.paths,
                    seed: self.seed,
                    x0: s.x0.clone().unwrap_or_else(|| sim.x0.clone()),
                    record_stride: s.record_stride,
                };
                sde.validate(n).map_err(|e| invalid("stochastic", e.to_string()))?;
                Some(sde)
            }
        };

        Ok(Scenario { game, mirror, sim, sde })
    }
}

fn mirror_part(spec: &MirrorSpec, dim: usize) -> Result<MirrorMap, String> {
    match spec {
        MirrorSpec::Entropy => Ok(MirrorMap::negative_entropy(dim)),
        MirrorSpec::Quadratic(rows) => {
            let a = matrix_from_rows(rows).ok_or("matrix rows are ragged or empty")?;
            if a.nrows() != dim || a.ncols() != dim {
                return Err(format!(
                    "matrix is {}x{}, player dimension is {dim}",
                    a.nrows(),
                    a.ncols()
                ));
            }
            MirrorMap::quadratic(a).map_err(|e| e.to_string())
        }
    }
}
