use crate::{numdiff, Matrix, ParamVector};

/// Model output f_w(x) for supervised losses.
pub trait Predictor: Send + Sync {
    fn dim_w(&self) -> usize;
    fn dim_in(&self) -> usize;
    fn predict(&self, w: &ParamVector, x: &ParamVector) -> f64;
    fn grad_w(&self, w: &ParamVector, x: &ParamVector) -> ParamVector;

    fn hess_w(&self, w: &ParamVector, x: &ParamVector) -> Matrix {
        numdiff::hessian_from_gradient(|p| self.grad_w(p, x), w, numdiff::GRAD_STEP)
    }

    fn name(&self) -> String;
}

// e^{-1/x} underflows to zero for x below 1/745.
const RELU_CUTOFF: f64 = 1.0 / 745.0;

/// s(x) = x·e^{−1/x} for x > 0, else 0.
pub fn smooth_relu(x: f64) -> f64 {
    if x <= RELU_CUTOFF {
        0.0
    } else {
        x * (-1.0 / x).exp()
    }
}

/// s'(x) = e^{−1/x}(1 + 1/x).
pub fn smooth_relu_d1(x: f64) -> f64 {
    if x <= RELU_CUTOFF {
        0.0
    } else {
        (-1.0 / x).exp() * (1.0 + 1.0 / x)
    }
}

/// s''(x) = e^{−1/x}/x³.
pub fn smooth_relu_d2(x: f64) -> f64 {
    if x <= RELU_CUTOFF {
        0.0
    } else {
        (-1.0 / x).exp() / (x * x * x)
    }
}

/// f_w(x) = ⟨u⊙u − v⊙v, x⟩ with w = (u, v).
#[derive(Clone, Copy, Debug)]
pub struct OlmPredictor {
    pub d_in: usize,
}

impl OlmPredictor {
    pub fn new(d_in: usize) -> Self {
        assert!(d_in >= 1);
        Self { d_in }
    }

    /// Effective linear coefficients β = u⊙u − v⊙v.
    pub fn beta(&self, w: &ParamVector) -> ParamVector {
        let d = self.d_in;
        ParamVector::from_fn(d, |j, _| w[j] * w[j] - w[d + j] * w[d + j])
    }
}

impl Predictor for OlmPredictor {
    fn dim_w(&self) -> usize {
        2 * self.d_in
    }
    fn dim_in(&self) -> usize {
        self.d_in
    }
    fn predict(&self, w: &ParamVector, x: &ParamVector) -> f64 {
        let d = self.d_in;
        (0..d).map(|j| (w[j] * w[j] - w[d + j] * w[d + j]) * x[j]).sum()
    }
    fn grad_w(&self, w: &ParamVector, x: &ParamVector) -> ParamVector {
        let d = self.d_in;
        let mut g = ParamVector::zeros(2 * d);
        for j in 0..d {
            g[j] = 2.0 * w[j] * x[j];
            g[d + j] = -2.0 * w[d + j] * x[j];
        }
        g
    }
    fn hess_w(&self, _w: &ParamVector, x: &ParamVector) -> Matrix {
        let d = self.d_in;
        let mut h = Matrix::zeros(2 * d, 2 * d);
        for j in 0..d {
            h[(j, j)] = 2.0 * x[j];
            h[(d + j, d + j)] = -2.0 * x[j];
        }
        h
    }
    fn name(&self) -> String {
        "olm".into()
    }
}

/// f_w(x) = Σ_j a_j s(b_jᵀx).
///
/// Layout of w: a_1..a_n, then b_1, …, b_n (each of length d_in).
#[derive(Clone, Copy, Debug)]
pub struct ShallowNet {
    pub n_hidden: usize,
    pub d_in: usize,
}

impl ShallowNet {
    pub fn new(n_hidden: usize, d_in: usize) -> Self {
        assert!(n_hidden >= 1 && d_in >= 1);
        Self { n_hidden, d_in }
    }

    pub fn pre_activation(&self, w: &ParamVector, j: usize, x: &ParamVector) -> f64 {
        let off = self.n_hidden + j * self.d_in;
        (0..self.d_in).map(|k| w[off + k] * x[k]).sum()
    }

    /// Output with each hidden unit j scaled by (1 + η_j).
    pub fn predict_filtered(&self, w: &ParamVector, x: &ParamVector, eta: &[f64]) -> f64 {
        (0..self.n_hidden)
            .map(|j| w[j] * (1.0 + eta[j]) * smooth_relu(self.pre_activation(w, j, x)))
            .sum()
    }

    pub fn grad_filtered(&self, w: &ParamVector, x: &ParamVector, eta: &[f64]) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim_w());
        for j in 0..self.n_hidden {
            let z = self.pre_activation(w, j, x);
            let scale = 1.0 + eta[j];
            g[j] = scale * smooth_relu(z);
            let c = scale * w[j] * smooth_relu_d1(z);
            let off = self.n_hidden + j * self.d_in;
            for k in 0..self.d_in {
                g[off + k] = c * x[k];
            }
        }
        g
    }
}

impl Predictor for ShallowNet {
    fn dim_w(&self) -> usize {
        self.n_hidden * (self.d_in + 1)
    }
    fn dim_in(&self) -> usize {
        self.d_in
    }
    fn predict(&self, w: &ParamVector, x: &ParamVector) -> f64 {
        (0..self.n_hidden)
            .map(|j| w[j] * smooth_relu(self.pre_activation(w, j, x)))
            .sum()
    }
    fn grad_w(&self, w: &ParamVector, x: &ParamVector) -> ParamVector {
        self.grad_filtered(w, x, &vec![0.0; self.n_hidden])
    }
    fn hess_w(&self, w: &ParamVector, x: &ParamVector) -> Matrix {
        let (n, d) = (self.n_hidden, self.d_in);
        let mut h = Matrix::zeros(self.dim_w(), self.dim_w());
        for j in 0..n {
            let z = self.pre_activation(w, j, x);
            let (s1, s2) = (smooth_relu_d1(z), smooth_relu_d2(z));
            let off = n + j * d;
            for k in 0..d {
                h[(j, off + k)] = s1 * x[k];
                h[(off + k, j)] = s1 * x[k];
                for l in 0..d {
                    h[(off + k, off + l)] = w[j] * s2 * x[k] * x[l];
                }
            }
        }
        h
    }
    fn name(&self) -> String {
        "shallow".into()
    }
}

/// Feed-forward network: smooth-ReLU hidden layers, linear scalar output.
///
/// Layer l (1-based) maps R^{d_{l−1}} → R^{d_l} by W_l y + b_l. Layout of w:
/// for each layer, W_l row-major followed by b_l. Multiplicative filters
/// (1 + η) can be applied to the input of any subset of layers.
#[derive(Clone, Debug)]
pub struct DeepNet {
    pub dims: Vec<usize>,
}

impl DeepNet {
    pub fn new(dims: Vec<usize>) -> crate::Result<Self> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
            return Err(crate::Error::Config(format!(
                "layer dims must have length ≥ 2, be positive and end in 1; got {dims:?}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offset of W_l in w (l is 1-based).
    pub fn layer_offset(&self, l: usize) -> usize {
        (1..l).map(|k| self.dims[k] * self.dims[k - 1] + self.dims[k]).sum()
    }

    /// Runs the network. `filters[l]` (if present) multiplies the input of
    /// layer l. Returns pre-activations and filtered inputs for backprop.
    fn forward(
        &self,
        w: &ParamVector,
        x: &ParamVector,
        filters: &[Option<&[f64]>],
    ) -> (f64, Vec<ParamVector>, Vec<ParamVector>) {
        let p = self.n_layers();
        let mut inputs = Vec::with_capacity(p);
        let mut pre = Vec::with_capacity(p);
        let mut y = x.clone();
        for l in 1..=p {
            if let Some(eta) = filters[l] {
                for (yi, e) in y.iter_mut().zip(eta) {
                    *yi *= 1.0 + e;
                }
            }
            let (din, dout) = (self.dims[l - 1], self.dims[l]);
            let off = self.layer_offset(l);
            let mut z = ParamVector::zeros(dout);
            for r in 0..dout {
                let row = off + r * din;
                let mut acc = w[off + dout * din + r];
                for c in 0..din {
                    acc += w[row + c] * y[c];
                }
                z[r] = acc;
            }
            inputs.push(y);
            y = if l < p { z.map(smooth_relu) } else { z.clone() };
            pre.push(z);
        }
        (y[0], pre, inputs)
    }

    fn backward(
        &self,
        w: &ParamVector,
        pre: &[ParamVector],
        inputs: &[ParamVector],
        filters: &[Option<&[f64]>],
    ) -> ParamVector {
        let p = self.n_layers();
        let mut g = ParamVector::zeros(self.dim_w());
        let mut delta = ParamVector::from_element(1, 1.0);
        for l in (1..=p).rev() {
            let (din, dout) = (self.dims[l - 1], self.dims[l]);
            let off = self.layer_offset(l);
            let y = &inputs[l - 1];
            for r in 0..dout {
                for c in 0..din {
                    g[off + r * din + c] = delta[r] * y[c];
                }
                g[off + dout * din + r] = delta[r];
            }
            if l == 1 {
                break;
            }
            let mut back = ParamVector::zeros(din);
            for c in 0..din {
                let mut acc = 0.0;
                for r in 0..dout {
                    acc += w[off + r * din + c] * delta[r];
                }
                back[c] = acc;
            }
            if let Some(eta) = filters[l] {
                for (b, e) in back.iter_mut().zip(eta) {
                    *b *= 1.0 + e;
                }
            }
            delta = back.zip_map(&pre[l - 2], |b, z| b * smooth_relu_d1(z));
        }
        g
    }

    pub fn predict_filtered(&self, w: &ParamVector, x: &ParamVector, filters: &[Option<&[f64]>]) -> f64 {
        self.forward(w, x, filters).0
    }

    pub fn grad_filtered(&self, w: &ParamVector, x: &ParamVector, filters: &[Option<&[f64]>]) -> ParamVector {
        let (_, pre, inputs) = self.forward(w, x, filters);
        self.backward(w, &pre, &inputs, filters)
    }

    /// Maps [`ShallowNet`] parameters (a, b) onto the layout of a
    /// `[d, n, 1]` network with zero biases.
    pub fn embed_shallow(n: usize, d: usize, w: &ParamVector) -> ParamVector {
        let mut out = ParamVector::zeros(n * d + n + n + 1);
        for j in 0..n {
            for k in 0..d {
                out[j * d + k] = w[n + j * d + k];
            }
        }
        let off2 = n * d + n;
        for j in 0..n {
            out[off2 + j] = w[j];
        }
        out
    }

    fn no_filters(&self) -> Vec<Option<&'static [f64]>> {
        vec![None; self.n_layers() + 1]
    }
}

impl Predictor for DeepNet {
    fn dim_w(&self) -> usize {
        self.layer_offset(self.n_layers() + 1)
    }
    fn dim_in(&self) -> usize {
        self.dims[0]
    }
    fn predict(&self, w: &ParamVector, x: &ParamVector) -> f64 {
        self.predict_filtered(w, x, &self.no_filters())
    }
    fn grad_w(&self, w: &ParamVector, x: &ParamVector) -> ParamVector {
        self.grad_filtered(w, x, &self.no_filters())
    }
    fn name(&self) -> String {
        "deep".into()
    }
}
