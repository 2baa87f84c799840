//! Resolution of config ids into losses, schemes and noise families.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use zeroloss::dynamics::{Regime, ScalePlan, StopRegion};
use zeroloss::losses::{
    Dataset, DeepNet, MseLoss, OlmPredictor, Predictor, Quadratic, RingSine, ShallowNet, SharedLoss,
};
use zeroloss::noise::{NoiseFamily, RngState};
use zeroloss::schemes::{
    AntiPgd, CombinedConstant, DegenerateClass, DropConnect, DropoutDeep, DropoutOlm, DropoutShallow, LabelNoise,
    LabelPlusMinibatch, Minibatch, ModulatedQuadratic, NormLinear, Sgld, SharedNoisyLoss,
};
use zeroloss::{Matrix, ParamVector};

use crate::config::{
    ConstantChoice, DataSource, LossConfig, NoiseConfig, RegimeChoice, ScenarioConfig, SchemeConfig, StopConfig,
};
use crate::error::{CliError, CliResult};

/// Everything a command needs to run a config.
pub struct Scenario {
    pub loss: SharedLoss,
    pub scheme: SharedNoisyLoss,
    pub family: NoiseFamily,
    pub plan: ScalePlan,
    pub w0: ParamVector,
    pub stop: StopRegion,
    pub dataset: Option<Arc<Dataset>>,
    /// Planar loss whose zero set is the unit circle.
    pub ring: bool,
}

/// Teacher inputs uniform in [−1, 1]^d, drawn from a dedicated stream.
pub fn teacher_dataset(pred: &dyn Predictor, w_star: &ParamVector, n: usize, seed: u64) -> CliResult<Dataset> {
    if w_star.len() != pred.dim_w() {
        return Err(CliError::Config(format!(
            "teacher w_star has {} entries, model needs {}",
            w_star.len(),
            pred.dim_w()
        )));
    }
    let mut rng = RngState::new(seed, 99);
    let xs = (0..n)
        .map(|_| ParamVector::from_fn(pred.dim_in(), |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    Ok(Dataset::teacher(pred, w_star, xs)?)
}

enum Model {
    Ring,
    Quadratic,
    Olm(usize),
    Shallow(usize, usize),
    Deep(Vec<usize>),
}

struct BuiltLoss {
    shared: SharedLoss,
    mse: Option<Arc<MseLoss>>,
    data: Option<Arc<Dataset>>,
    model: Model,
}

fn predictor(def: &LossConfig) -> CliResult<Option<Arc<dyn Predictor>>> {
    Ok(match def {
        LossConfig::Olm { d_in, .. } => Some(Arc::new(OlmPredictor::new(*d_in))),
        LossConfig::Shallow { hidden, d_in, .. } => Some(Arc::new(ShallowNet::new(*hidden, *d_in))),
        LossConfig::Deep { dims, .. } => Some(Arc::new(DeepNet::new(dims.clone())?)),
        _ => None,
    })
}

fn build_loss(def: &LossConfig, base_dir: &Path) -> CliResult<BuiltLoss> {
    let supervised = |source: &DataSource, model: Model| -> CliResult<BuiltLoss> {
        let pred = predictor(def)?.expect("supervised loss");
        let data = match source {
            DataSource::Csv(p) => crate::io::read_dataset(&base_dir.join(p))?,
            DataSource::Teacher { n, w_star, seed } => {
                teacher_dataset(pred.as_ref(), &ParamVector::from_row_slice(w_star), *n, *seed)?
            }
        };
        if data.dim_in() != pred.dim_in() {
            return Err(CliError::Config(format!(
                "dataset has {} inputs, model expects {}",
                data.dim_in(),
                pred.dim_in()
            )));
        }
        let data = Arc::new(data);
        let mse = Arc::new(MseLoss::new(pred, data.clone())?);
        Ok(BuiltLoss {
            shared: mse.clone(),
            mse: Some(mse),
            data: Some(data),
            model,
        })
    };
    match def {
        LossConfig::RingSine { a, b } => Ok(BuiltLoss {
            shared: Arc::new(RingSine { a: *a, b: *b }),
            mse: None,
            data: None,
            model: Model::Ring,
        }),
        LossConfig::Quadratic { diag } => {
            if diag.is_empty() || diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(CliError::Config(
                    "quadratic diag must be non-empty and non-negative".into(),
                ));
            }
            Ok(BuiltLoss {
                shared: Arc::new(Quadratic::new(Matrix::from_diagonal(&ParamVector::from_row_slice(
                    diag,
                )))),
                mse: None,
                data: None,
                model: Model::Quadratic,
            })
        }
        LossConfig::Olm { d_in, data } => supervised(data, Model::Olm(*d_in)),
        LossConfig::Shallow { hidden, d_in, data } => supervised(data, Model::Shallow(*hidden, *d_in)),
        LossConfig::Deep { dims, data } => supervised(data, Model::Deep(dims.clone())),
    }
}

fn scheme_name(s: &SchemeConfig) -> &'static str {
    match s {
        SchemeConfig::DropConnect => "drop-connect",
        SchemeConfig::AntiPgd => "anti-pgd",
        SchemeConfig::Sgld => "sgld",
        SchemeConfig::LabelNoise => "label-noise",
        SchemeConfig::Minibatch { .. } => "minibatch",
        SchemeConfig::LabelMinibatch { .. } => "label+minibatch",
        SchemeConfig::DropoutOlm => "dropout-olm",
        SchemeConfig::DropoutShallow => "dropout-shallow",
        SchemeConfig::DropoutDeep { .. } => "dropout-deep",
        SchemeConfig::ModulatedQuadratic { .. } => "modulated-quadratic",
        SchemeConfig::NormLinear => "norm-linear",
    }
}

fn build_scheme(def: &SchemeConfig, loss: &BuiltLoss, sigma: f64) -> CliResult<SharedNoisyLoss> {
    let need_mse = || {
        loss.mse.clone().ok_or_else(|| {
            CliError::Config(format!(
                "scheme {} needs a supervised loss (olm, shallow, deep)",
                scheme_name(def)
            ))
        })
    };
    let mismatch = |want: &str| CliError::Config(format!("scheme {} needs loss {want}", scheme_name(def)));
    let l = loss.shared.clone();
    Ok(match def {
        SchemeConfig::DropConnect => Arc::new(DropConnect::new(l)),
        SchemeConfig::AntiPgd => Arc::new(AntiPgd::new(l)),
        SchemeConfig::Sgld => Arc::new(Sgld::new(l)),
        SchemeConfig::ModulatedQuadratic { c, k } => Arc::new(ModulatedQuadratic::new(l, *c, *k)),
        SchemeConfig::NormLinear => Arc::new(NormLinear::new(l)),
        SchemeConfig::LabelNoise => Arc::new(LabelNoise::new(need_mse()?)),
        SchemeConfig::Minibatch { m_expect } => Arc::new(Minibatch::new(need_mse()?, *m_expect)?),
        SchemeConfig::LabelMinibatch { constant } => {
            let c = match constant {
                ConstantChoice::Linear => CombinedConstant::Linear,
                ConstantChoice::Sqrt => CombinedConstant::Sqrt,
            };
            // Both noises share the level σ, so σ₀ = σ.
            Arc::new(LabelPlusMinibatch::new(need_mse()?, sigma, c))
        }
        SchemeConfig::DropoutOlm => match loss.model {
            Model::Olm(d_in) => Arc::new(DropoutOlm::new(d_in, loss.data.clone().unwrap())?),
            _ => return Err(mismatch("olm")),
        },
        SchemeConfig::DropoutShallow => match loss.model {
            Model::Shallow(h, d_in) => Arc::new(DropoutShallow::new(h, d_in, loss.data.clone().unwrap())?),
            _ => return Err(mismatch("shallow")),
        },
        SchemeConfig::DropoutDeep { layers } => match &loss.model {
            Model::Deep(dims) => Arc::new(DropoutDeep::new(
                dims.clone(),
                layers.clone(),
                loss.data.clone().unwrap(),
            )?),
            _ => return Err(mismatch("deep")),
        },
    })
}

fn build_family(def: &NoiseConfig, scheme: &SharedNoisyLoss, sigma: f64) -> CliResult<NoiseFamily> {
    let dim = scheme.noise_dim();
    let native = scheme.native_noise(sigma);
    if native.is_some() && !matches!(def, NoiseConfig::Native) {
        return Err(CliError::Config(format!(
            "scheme {} defines its own noise; omit `noise` or use kind \"native\"",
            scheme.tag().id()
        )));
    }
    Ok(match def {
        NoiseConfig::Native => native.unwrap_or_else(|| NoiseFamily::gaussian(sigma, dim)),
        NoiseConfig::Gaussian => NoiseFamily::gaussian(sigma, dim),
        NoiseConfig::Bernoulli => NoiseFamily::bernoulli_with_sigma(sigma, dim)?,
        NoiseConfig::Uniform => NoiseFamily::uniform(sigma, dim),
        NoiseConfig::Correlated { c } => {
            if c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(CliError::Config(format!("correlated noise needs a {dim}×{dim} matrix")));
            }
            let m = Matrix::from_fn(dim, dim, |i, j| c[i][j]);
            NoiseFamily::correlated(m * (sigma * sigma))?
        }
    })
}

pub fn default_regime(scheme: &SharedNoisyLoss) -> Regime {
    match scheme.degenerate_class() {
        DegenerateClass::Nondegenerate => Regime::Nondegenerate,
        _ => Regime::Degenerate,
    }
}

/// Builds a scenario; relative dataset paths resolve against `base_dir`.
pub fn resolve(cfg: &ScenarioConfig, base_dir: &Path) -> CliResult<Scenario> {
    cfg.validate()?;
    let loss = build_loss(&cfg.loss, base_dir)?;
    let scheme = build_scheme(&cfg.scheme, &loss, cfg.plan.sigma)?;
    if cfg.w0.len() != loss.shared.dim() {
        return Err(CliError::Config(format!(
            "w0 has {} entries, the loss has {} parameters",
            cfg.w0.len(),
            loss.shared.dim()
        )));
    }
    let family = build_family(&cfg.noise, &scheme, cfg.plan.sigma)?;
    let regime = match cfg.plan.regime {
        Some(RegimeChoice::Nondegenerate) => Regime::Nondegenerate,
        Some(RegimeChoice::Degenerate) => Regime::Degenerate,
        None => default_regime(&scheme),
    };
    let plan = ScalePlan::new(cfg.plan.alpha, cfg.plan.sigma, regime, cfg.plan.horizon)?;
    plan.check_budget(cfg.plan.step_cap)?;
    let stop = match cfg.stop {
        StopConfig::Unbounded => StopRegion::Unbounded,
        StopConfig::Annulus { r_min, r_max } => StopRegion::Annulus { r_min, r_max },
        StopConfig::LossSublevel { level } => StopRegion::LossSublevel(level),
    };
    Ok(Scenario {
        ring: matches!(loss.model, Model::Ring),
        loss: loss.shared,
        scheme,
        family,
        plan,
        w0: ParamVector::from_row_slice(&cfg.w0),
        stop,
        dataset: loss.data,
    })
}
