//! JSON scenario configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub loss: LossConfig,
    pub scheme: SchemeConfig,
    /// Defaults to the scheme's native noise, or Gaussian.
    #[serde(default)]
    pub noise: NoiseConfig,
    pub plan: PlanConfig,
    pub w0: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stop: StopConfig,
    /// Approximate number of recorded points per trajectory.
    #[serde(default = "default_record")]
    pub record_points: usize,
    /// Step of the limiting flow or SDE on the slow clock.
    #[serde(default = "default_limit_dt")]
    pub limit_dt: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}
fn default_record() -> usize {
    10_000
}
fn default_limit_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossConfig {
    RingSine {
        #[serde(default = "ring_a")]
        a: f64,
        #[serde(default = "ring_b")]
        b: f64,
    },
    /// ½ Σ_j λ_j w_j².
    Quadratic {
        diag: Vec<f64>,
    },
    Olm {
        d_in: usize,
        data: DataSource,
    },
    Shallow {
        hidden: usize,
        d_in: usize,
        data: DataSource,
    },
    /// Layer widths from input to the scalar output.
    Deep {
        dims: Vec<usize>,
        data: DataSource,
    },
}

fn ring_a() -> f64 {
    0.7
}
fn ring_b() -> f64 {
    5.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// CSV with columns x_1..x_d, y and a header row.
    Csv(PathBuf),
    /// Inputs uniform in [−1, 1]^d, labels from the model at `w_star`.
    Teacher { n: usize, w_star: Vec<f64>, seed: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchemeConfig {
    DropConnect,
    AntiPgd,
    Sgld,
    LabelNoise,
    Minibatch {
        m_expect: usize,
    },
    #[serde(rename = "label+minibatch")]
    LabelMinibatch {
        #[serde(default)]
        constant: ConstantChoice,
    },
    DropoutOlm,
    DropoutShallow,
    DropoutDeep {
        #[serde(default)]
        layers: Option<Vec<usize>>,
    },
    ModulatedQuadratic {
        #[serde(default = "ring_a")]
        c: f64,
        #[serde(default = "two")]
        k: f64,
    },
    NormLinear,
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantChoice {
    #[default]
    Linear,
    Sqrt,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    Native,
    Gaussian,
    /// Two-point dropout noise with variance σ².
    Bernoulli,
    Uniform,
    /// η ~ N(0, σ² C).
    Correlated {
        c: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeChoice {
    Nondegenerate,
    Degenerate,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub alpha: f64,
    pub sigma: f64,
    /// Defaults to the clock of the scheme's class.
    #[serde(default)]
    pub regime: Option<RegimeChoice>,
    pub horizon: f64,
    #[serde(default = "default_cap")]
    pub step_cap: usize,
}

fn default_cap() -> usize {
    zeroloss::dynamics::DEFAULT_STEP_CAP
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopConfig {
    #[default]
    Unbounded,
    Annulus {
        r_min: f64,
        r_max: f64,
    },
    LossSublevel {
        level: f64,
    },
}

impl ScenarioConfig {
    /// Reads a config, or the config embedded in a run manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut v: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(inner) = v.get_mut("config") {
            v = inner.take();
        }
        let cfg: ScenarioConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = &self.plan;
        if !(p.alpha > 0.0 && p.sigma > 0.0 && p.horizon > 0.0) {
            return Err(CliError::Config("alpha, sigma and horizon must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must be non-empty".into()));
        }
        if self.w0.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config("w0 must be finite".into()));
        }
        if !(self.limit_dt > 0.0) || self.record_points == 0 {
            return Err(CliError::Config("limit_dt and record_points must be positive".into()));
        }
        Ok(())
    }
}
