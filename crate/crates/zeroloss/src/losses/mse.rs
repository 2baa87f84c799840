use std::sync::Arc;

use super::{DerivativeMode, Loss, Predictor};
use crate::{Error, Matrix, ParamVector, Result};

/// Supervised samples (x_i, y_i).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<ParamVector>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<ParamVector>, labels: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::Config(format!(
                "dataset needs N ≥ 1 matching inputs and labels (got {} and {})",
                inputs.len(),
                labels.len()
            )));
        }
        let d = inputs[0].len();
        if d == 0 || inputs.iter().any(|x| x.len() != d) {
            return Err(Error::Config("inputs must share a positive dimension".into()));
        }
        if inputs
            .iter()
            .flat_map(|x| x.iter())
            .chain(&labels)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self { inputs, labels })
    }

    /// Labels generated by a predictor at a reference parameter, so that the
    /// reference lies on the zero-loss set.
    pub fn teacher(pred: &dyn Predictor, w_star: &ParamVector, inputs: Vec<ParamVector>) -> Result<Self> {
        let labels = inputs.iter().map(|x| pred.predict(w_star, x)).collect();
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim_in(&self) -> usize {
        self.inputs[0].len()
    }

    /// Σ_i x_ij² for each input coordinate j.
    pub fn column_sq_sums(&self) -> ParamVector {
        let mut s = ParamVector::zeros(self.dim_in());
        for x in &self.inputs {
            s += x.component_mul(x);
        }
        s
    }
}

/// L(w) = (1/N) Σ_i (f_w(x_i) − y_i)².
#[derive(Clone)]
pub struct MseLoss {
    pub pred: Arc<dyn Predictor>,
    pub data: Arc<Dataset>,
}

impl MseLoss {
    pub fn new(pred: Arc<dyn Predictor>, data: Arc<Dataset>) -> Result<Self> {
        if pred.dim_in() != data.dim_in() {
            return Err(Error::Config(format!(
                "predictor expects inputs of dimension {}, dataset has {}",
                pred.dim_in(),
                data.dim_in()
            )));
        }
        Ok(Self { pred, data })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// r_i = f_w(x_i) − y_i.
    pub fn residuals(&self, w: &ParamVector) -> ParamVector {
        ParamVector::from_iterator(
            self.n(),
            self.data
                .inputs
                .iter()
                .zip(&self.data.labels)
                .map(|(x, y)| self.pred.predict(w, x) - y),
        )
    }

    /// Columns ∇_w f_w(x_i).
    pub fn sample_gradients(&self, w: &ParamVector) -> Vec<ParamVector> {
        self.data.inputs.iter().map(|x| self.pred.grad_w(w, x)).collect()
    }
}

impl Loss for MseLoss {
    fn dim(&self) -> usize {
        self.pred.dim_w()
    }

    fn value(&self, w: &ParamVector) -> f64 {
        self.residuals(w).norm_squared() / self.n() as f64
    }

    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let n = self.n() as f64;
        let mut g = ParamVector::zeros(self.dim());
        for (x, y) in self.data.inputs.iter().zip(&self.data.labels) {
            let r = self.pred.predict(w, x) - y;
            if r != 0.0 {
                g.axpy(2.0 * r / n, &self.pred.grad_w(w, x), 1.0);
            }
        }
        g
    }

    fn hessian(&self, w: &ParamVector) -> Matrix {
        let n = self.n() as f64;
        let m = self.dim();
        let mut h = Matrix::zeros(m, m);
        for (x, y) in self.data.inputs.iter().zip(&self.data.labels) {
            let r = self.pred.predict(w, x) - y;
            let g = self.pred.grad_w(w, x);
            h.ger(2.0 / n, &g, &g, 1.0);
            if r != 0.0 {
                h += self.pred.hess_w(w, x) * (2.0 * r / n);
            }
        }
        (&h + h.transpose()) * 0.5
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Analytic
    }

    fn name(&self) -> String {
        format!("mse-{}", self.pred.name())
    }
}
