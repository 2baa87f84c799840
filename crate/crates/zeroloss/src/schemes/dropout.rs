//! Dropout filters on supervised predictors.

use std::sync::Arc;

use super::{DegenerateClass, NoisyLoss, SchemeTag};
use crate::losses::{Dataset, DeepNet, Loss, MseLoss, OlmPredictor, ShallowNet, SharedLoss};
use crate::noise::NoiseFamily;
use crate::regularizers::{Provenance, Regularizer, SharedReg};
use crate::{Error, ParamVector, Result};

/// OLM with input dropout: f(x, η) = ⟨u⊙u − v⊙v, x ⊙ (1 + η)⟩.
#[derive(Clone)]
pub struct DropoutOlm {
    pub pred: OlmPredictor,
    pub data: Arc<Dataset>,
    pub loss: Arc<MseLoss>,
}

impl DropoutOlm {
    pub fn new(d_in: usize, data: Arc<Dataset>) -> Result<Self> {
        let pred = OlmPredictor::new(d_in);
        let loss = Arc::new(MseLoss::new(Arc::new(pred), data.clone())?);
        Ok(Self { pred, data, loss })
    }

    fn drop_residuals(&self, beta: &ParamVector, eta: &ParamVector) -> Vec<f64> {
        self.data
            .inputs
            .iter()
            .zip(&self.data.labels)
            .map(|(x, y)| {
                (0..self.pred.d_in)
                    .map(|j| beta[j] * x[j] * (1.0 + eta[j]))
                    .sum::<f64>()
                    - y
            })
            .collect()
    }
}

impl NoisyLoss for DropoutOlm {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.pred.d_in
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        let r = self.drop_residuals(&self.pred.beta(w), eta);
        r.iter().map(|r| r * r).sum::<f64>() / r.len() as f64
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let d = self.pred.d_in;
        let n = self.data.len() as f64;
        let r = self.drop_residuals(&self.pred.beta(w), eta);
        let mut g = ParamVector::zeros(2 * d);
        for (ri, x) in r.iter().zip(&self.data.inputs) {
            for j in 0..d {
                let c = 2.0 * ri / n * 2.0 * x[j] * (1.0 + eta[j]);
                g[j] += c * w[j];
                g[d + j] -= c * w[d + j];
            }
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::DropoutOlm
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
    fn analytic_reg(&self, _family: Option<&NoiseFamily>) -> Option<SharedReg> {
        Some(Arc::new(OlmDropoutReg {
            pred: self.pred,
            col_sq: self.data.column_sq_sums(),
            n: self.data.len() as f64,
        }))
    }
}

/// Reg(w) = (1/N) Σ_j (u_j² − v_j²)² Σ_i x_ij².
#[derive(Clone)]
pub struct OlmDropoutReg {
    pred: OlmPredictor,
    col_sq: ParamVector,
    n: f64,
}

impl OlmDropoutReg {
    pub fn new(data: &Dataset) -> Self {
        Self {
            pred: OlmPredictor::new(data.dim_in()),
            col_sq: data.column_sq_sums(),
            n: data.len() as f64,
        }
    }
}

impl Regularizer for OlmDropoutReg {
    fn value(&self, w: &ParamVector) -> f64 {
        let b = self.pred.beta(w);
        b.iter().zip(self.col_sq.iter()).map(|(b, s)| b * b * s).sum::<f64>() / self.n
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let d = self.pred.d_in;
        let b = self.pred.beta(w);
        let mut g = ParamVector::zeros(2 * d);
        for j in 0..d {
            let c = 4.0 * b[j] * self.col_sq[j] / self.n;
            g[j] = c * w[j];
            g[d + j] = -c * w[d + j];
        }
        g
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        "olm-dropout".into()
    }
}

/// Shallow network with dropout on the hidden units.
#[derive(Clone)]
pub struct DropoutShallow {
    pub net: ShallowNet,
    pub data: Arc<Dataset>,
    pub loss: Arc<MseLoss>,
}

impl DropoutShallow {
    pub fn new(n_hidden: usize, d_in: usize, data: Arc<Dataset>) -> Result<Self> {
        let net = ShallowNet::new(n_hidden, d_in);
        let loss = Arc::new(MseLoss::new(Arc::new(net), data.clone())?);
        Ok(Self { net, data, loss })
    }
}

impl NoisyLoss for DropoutShallow {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.net.n_hidden
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        let n = self.data.len() as f64;
        self.data
            .inputs
            .iter()
            .zip(&self.data.labels)
            .map(|(x, y)| (self.net.predict_filtered(w, x, eta.as_slice()) - y).powi(2))
            .sum::<f64>()
            / n
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let n = self.data.len() as f64;
        let mut g = ParamVector::zeros(self.loss.dim());
        for (x, y) in self.data.inputs.iter().zip(&self.data.labels) {
            let r = self.net.predict_filtered(w, x, eta.as_slice()) - y;
            g.axpy(2.0 * r / n, &self.net.grad_filtered(w, x, eta.as_slice()), 1.0);
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::DropoutShallow
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
    fn analytic_reg(&self, _family: Option<&NoiseFamily>) -> Option<SharedReg> {
        Some(Arc::new(ShallowDropoutReg {
            net: self.net,
            data: self.data.clone(),
        }))
    }
}

/// Reg(w) = (1/N) Σ_i Σ_j a_j² s(b_jᵀx_i)².
#[derive(Clone)]
pub struct ShallowDropoutReg {
    net: ShallowNet,
    data: Arc<Dataset>,
}

impl ShallowDropoutReg {
    pub fn new(net: ShallowNet, data: Arc<Dataset>) -> Self {
        Self { net, data }
    }
}

impl Regularizer for ShallowDropoutReg {
    fn value(&self, w: &ParamVector) -> f64 {
        let n = self.data.len() as f64;
        let mut acc = 0.0;
        for x in &self.data.inputs {
            for j in 0..self.net.n_hidden {
                let s = crate::losses::smooth_relu(self.net.pre_activation(w, j, x));
                acc += w[j] * w[j] * s * s;
            }
        }
        acc / n
    }
    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let (nh, d) = (self.net.n_hidden, self.net.d_in);
        let n = self.data.len() as f64;
        let mut g = ParamVector::zeros(self.net.n_hidden * (d + 1));
        for x in &self.data.inputs {
            for j in 0..nh {
                let z = self.net.pre_activation(w, j, x);
                let s = crate::losses::smooth_relu(z);
                let s1 = crate::losses::smooth_relu_d1(z);
                g[j] += 2.0 * w[j] * s * s / n;
                let c = 2.0 * w[j] * w[j] * s * s1 / n;
                for k in 0..d {
                    g[nh + j * d + k] += c * x[k];
                }
            }
        }
        g
    }
    fn provenance(&self) -> Provenance {
        Provenance::AnalyticClosedForm
    }
    fn name(&self) -> String {
        "shallow-dropout".into()
    }
}

/// Deep network with Gaussian filters on the inputs of selected layers.
///
/// Layers are 1-based; by default every layer except the first is
/// filtered, i.e. dropout acts on hidden representations.
#[derive(Clone)]
pub struct DropoutDeep {
    pub net: DeepNet,
    pub layers: Vec<usize>,
    pub data: Arc<Dataset>,
    pub loss: Arc<MseLoss>,
    offsets: Vec<(usize, usize)>,
}

impl DropoutDeep {
    pub fn new(dims: Vec<usize>, layers: Option<Vec<usize>>, data: Arc<Dataset>) -> Result<Self> {
        let net = DeepNet::new(dims)?;
        let p = net.n_layers();
        let mut layers = layers.unwrap_or_else(|| (2..=p).collect());
        layers.sort_unstable();
        layers.dedup();
        if layers.is_empty() || layers.iter().any(|&l| l == 0 || l > p) {
            return Err(Error::Config(format!(
                "dropout layers must be a non-empty subset of 1..={p}"
            )));
        }
        let mut offsets = Vec::new();
        let mut off = 0;
        for &l in &layers {
            offsets.push((l, off));
            off += net.dims[l - 1];
        }
        let loss = Arc::new(MseLoss::new(Arc::new(net.clone()), data.clone())?);
        Ok(Self {
            net,
            layers,
            data,
            loss,
            offsets,
        })
    }

    fn filters<'a>(&self, eta: &'a ParamVector) -> Vec<Option<&'a [f64]>> {
        let mut f = vec![None; self.net.n_layers() + 1];
        for &(l, off) in &self.offsets {
            f[l] = Some(&eta.as_slice()[off..off + self.net.dims[l - 1]]);
        }
        f
    }
}

impl NoisyLoss for DropoutDeep {
    fn base(&self) -> SharedLoss {
        self.loss.clone()
    }
    fn noise_dim(&self) -> usize {
        self.layers.iter().map(|&l| self.net.dims[l - 1]).sum()
    }
    fn value(&self, w: &ParamVector, eta: &ParamVector) -> f64 {
        let f = self.filters(eta);
        let n = self.data.len() as f64;
        self.data
            .inputs
            .iter()
            .zip(&self.data.labels)
            .map(|(x, y)| (self.net.predict_filtered(w, x, &f) - y).powi(2))
            .sum::<f64>()
            / n
    }
    fn grad_w(&self, w: &ParamVector, eta: &ParamVector) -> ParamVector {
        let f = self.filters(eta);
        let n = self.data.len() as f64;
        let mut g = ParamVector::zeros(self.loss.dim());
        for (x, y) in self.data.inputs.iter().zip(&self.data.labels) {
            let r = self.net.predict_filtered(w, x, &f) - y;
            g.axpy(2.0 * r / n, &self.net.grad_filtered(w, x, &f), 1.0);
        }
        g
    }
    fn tag(&self) -> SchemeTag {
        SchemeTag::DropoutDeep
    }
    fn degenerate_class(&self) -> DegenerateClass {
        DegenerateClass::Nondegenerate
    }
}
