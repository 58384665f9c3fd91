//! Parameter vectors, batches and small differentiable classifiers.
//!
//! Models are stored as one flat [`ParamVector`] so that random directions for
//! the roughness index can be sampled in the full parameter space. The layout
//! is layer-major: for every dense layer `(in, out)` the `out * in` weights come
//! first in row-major order (`W[o][i]` at `offset + o * in + i`), followed by
//! the `out` biases. Hidden layers use ReLU, with the subgradient at zero taken
//! as zero.
//!
//! A model whose last layer has width 1 is a binary classifier with a sigmoid
//! output; any wider output layer is a softmax classifier. Both use the mean
//! cross-entropy over the batch, computed through log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, real-valued model parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other, "dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self + s * direction`, as a new vector.
    pub fn axpy(&self, direction: &ParamVector, s: f64) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_scaled(direction, s)?;
        Ok(out)
    }

    /// In-place `self += s * direction`.
    pub fn add_scaled(&mut self, direction: &ParamVector, s: f64) -> Result<()> {
        self.check_dim(direction, "axpy")?;
        for (w, d) in self.0.iter_mut().zip(&direction.0) {
            *w += s * d;
        }
        Ok(())
    }

    /// `self - other`, as a new vector.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_dim(other, "sub")?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other, "dist_sq")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub(crate) fn check_dim(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::dims(context, self.dim(), other.dim()));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// `params + s * direction`.
pub fn axpy(params: &ParamVector, direction: &ParamVector, s: f64) -> Result<ParamVector> {
    params.axpy(direction, s)
}

/// A dense row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    width: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, width: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("a batch needs at least one row"));
        }
        if features.len() != labels.len() * width {
            return Err(Error::dims("batch features", labels.len() * width, features.len()));
        }
        Ok(Batch {
            features,
            labels,
            width,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Anything with a scalar loss and an analytic gradient over a batch.
///
/// [`LossModel`] is the production implementor; tests plug in closed-form
/// objectives (quadratics) through the same interface.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64>;

    fn grad(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

/// A cross-entropy classifier made of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    kind: ModelKind,
    layers: Vec<(usize, usize)>,
    num_classes: usize,
}

fn output_width(num_classes: usize) -> usize {
    if num_classes == 2 {
        1
    } else {
        num_classes
    }
}

impl LossModel {
    /// Logistic regression: sigmoid output for two classes, softmax otherwise.
    pub fn logistic(input: usize, num_classes: usize) -> Result<Self> {
        Self::build(ModelKind::LogisticRegression, input, &[], num_classes)
    }

    /// Multi-layer perceptron with ReLU hidden layers of the given widths.
    pub fn mlp(input: usize, hidden: &[usize], num_classes: usize) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config("an MLP needs at least one hidden layer"));
        }
        Self::build(ModelKind::Mlp, input, hidden, num_classes)
    }

    fn build(kind: ModelKind, input: usize, hidden: &[usize], num_classes: usize) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::config("a classifier needs at least two classes"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push((prev, h));
            prev = h;
        }
        layers.push((prev, output_width(num_classes)));
        Ok(LossModel {
            kind,
            layers,
            num_classes,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0
    }

    pub fn param_dim(&self) -> usize {
        self.layers.iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Offset of each layer's weight block in the flat layout.
    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for &(i, o) in &self.layers {
            offs.push(at);
            at += i * o + o;
        }
        offs
    }

    /// He-style initialisation for hidden layers and a small Glorot-scaled
    /// output layer; biases start at zero. Logistic regression starts at zero.
    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        use rand_distr::{Distribution, Normal};
        let mut p = ParamVector::zeros(self.param_dim());
        if self.kind == ModelKind::LogisticRegression {
            return p;
        }
        let last = self.layers.len() - 1;
        for (li, (&(fan_in, fan_out), off)) in self.layers.iter().zip(self.offsets()).enumerate() {
            let std = if li == last {
                (2.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut p.as_mut_slice()[off..off + fan_in * fan_out] {
                *w = normal.sample(rng);
            }
        }
        p
    }

    fn check(&self, params: &ParamVector, batch: &Batch) -> Result<()> {
        if params.dim() != self.param_dim() {
            return Err(Error::dims("model parameters", self.param_dim(), params.dim()));
        }
        if batch.width() != self.input_width() {
            return Err(Error::dims("batch width", self.input_width(), batch.width()));
        }
        if let Some(&label) = batch.labels().iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Forward pass. Returns the activations entering every layer (the input
    /// batch first, then each post-ReLU hidden output) and the raw output logits.
    fn forward(&self, params: &[f64], batch: &Batch) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = batch.rows();
        let last = self.layers.len() - 1;
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut current = batch.features().to_vec();
        let mut off = 0;
        for (li, &(fan_in, fan_out)) in self.layers.iter().enumerate() {
            let weights = &params[off..off + fan_in * fan_out];
            let bias = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut out = vec![0.0; n * fan_out];
            for s in 0..n {
                let x = &current[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let z = bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                    out[s * fan_out + o] = if li < last { z.max(0.0) } else { z };
                }
            }
            inputs.push(current);
            current = out;
        }
        (inputs, current)
    }

    /// Per-sample losses and, when requested, d(loss_s)/d(logits_s).
    fn output_loss(&self, logits: &[f64], labels: &[usize], want_delta: bool) -> (f64, Vec<f64>) {
        let width = output_width(self.num_classes);
        let mut total = 0.0;
        let mut delta = if want_delta {
            vec![0.0; logits.len()]
        } else {
            Vec::new()
        };
        for (s, &y) in labels.iter().enumerate() {
            let z = &logits[s * width..(s + 1) * width];
            if width == 1 {
                let t = if y == 1 { 1.0 } else { 0.0 };
                // softplus(z) - t*z == -[t ln σ(z) + (1-t) ln(1-σ(z))]
                let softplus = z[0].max(0.0) + (-z[0].abs()).exp().ln_1p();
                total += softplus - t * z[0];
                if want_delta {
                    delta[s] = sigmoid(z[0]) - t;
                }
            } else {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                total += lse - z[y];
                if want_delta {
                    let d = &mut delta[s * width..(s + 1) * width];
                    for (k, dk) in d.iter_mut().enumerate() {
                        *dk = (z[k] - lse).exp();
                    }
                    d[y] -= 1.0;
                }
            }
        }
        (total, delta)
    }

    /// Mean loss and its gradient in one forward/backward pass.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let n = batch.rows();
        let p = params.as_slice();
        let (inputs, logits) = self.forward(p, batch);
        let (total, mut delta) = self.output_loss(&logits, batch.labels(), true);
        let inv_n = 1.0 / n as f64;
        delta.iter_mut().for_each(|d| *d *= inv_n);

        let mut grad = vec![0.0; self.param_dim()];
        let offsets = self.offsets();
        for li in (0..self.layers.len()).rev() {
            let (fan_in, fan_out) = self.layers[li];
            let off = offsets[li];
            let x = &inputs[li];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for s in 0..n {
                    let xs = &x[s * fan_in..(s + 1) * fan_in];
                    for o in 0..fan_out {
                        let d = delta[s * fan_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xs) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if li == 0 {
                break;
            }
            // Back through the weights, then through the ReLU that produced `x`.
            let weights = &p[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; n * fan_in];
            for s in 0..n {
                let ps = &mut prev[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let d = delta[s * fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pi, w) in ps.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *pi += d * w;
                    }
                }
                for (pi, &xi) in ps.iter_mut().zip(&x[s * fan_in..(s + 1) * fan_in]) {
                    if xi <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok((total * inv_n, ParamVector(grad)))
    }

    /// Raw output scores, one row of `output width` values per sample.
    pub fn logits(&self, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
        self.check(params, batch)?;
        Ok(self.forward(params.as_slice(), batch).1)
    }

    /// Arg-max class per sample; ties go to the smaller class index.
    pub fn predict(&self, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
        let logits = self.logits(params, batch)?;
        let width = output_width(self.num_classes);
        Ok(logits
            .chunks(width)
            .map(|z| {
                if width == 1 {
                    usize::from(z[0] > 0.0)
                } else {
                    let mut best = 0;
                    for (k, &v) in z.iter().enumerate().skip(1) {
                        if v > z[best] {
                            best = k;
                        }
                    }
                    best
                }
            })
            .collect())
    }

    /// Smallest |pre-activation| over every hidden unit and sample, i.e. the
    /// distance to the nearest ReLU kink. `f64::INFINITY` without hidden layers.
    pub fn min_hidden_margin(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let p = params.as_slice();
        let n = batch.rows();
        let mut margin = f64::INFINITY;
        let mut current = batch.features().to_vec();
        let mut off = 0;
        for &(fan_in, fan_out) in &self.layers[..self.layers.len() - 1] {
            let weights = &p[off..off + fan_in * fan_out];
            let bias = &p[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut out = vec![0.0; n * fan_out];
            for s in 0..n {
                let x = &current[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let z = bias[o]
                        + weights[o * fan_in..(o + 1) * fan_in]
                            .iter()
                            .zip(x)
                            .map(|(w, xi)| w * xi)
                            .sum::<f64>();
                    margin = margin.min(z.abs());
                    out[s * fan_out + o] = z.max(0.0);
                }
            }
            current = out;
        }
        Ok(margin)
    }
}

impl Objective for LossModel {
    fn dim(&self) -> usize {
        self.param_dim()
    }

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check(params, batch)?;
        let (_, logits) = self.forward(params.as_slice(), batch);
        let (total, _) = self.output_loss(&logits, batch.labels(), false);
        Ok(total / batch.rows() as f64)
    }

    fn grad(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        self.loss_and_grad(params, batch).map(|(_, g)| g)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Central-difference gradient of an arbitrary scalar function.
pub fn fd_gradient_fn<F>(mut f: F, params: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.dim());
    for i in 0..params.dim() {
        let orig = probe.0[i];
        probe.0[i] = orig + h;
        let up = f(&probe)?;
        probe.0[i] = orig - h;
        let down = f(&probe)?;
        probe.0[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(ParamVector(grad))
}

/// Central-difference gradient of `model.loss` at `params`.
pub fn fd_gradient<O: Objective + ?Sized>(
    model: &O,
    params: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector> {
    if params.dim() != model.dim() {
        return Err(Error::dims("model parameters", model.dim(), params.dim()));
    }
    fd_gradient_fn(|w| model.loss(w, batch), params, h)
}
