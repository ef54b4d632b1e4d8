//! Fully-connected tanh surrogate network.
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix (`out × in`, row-major) followed by its bias vector when biases are
//! enabled; layers are ordered input → hidden → output. The network maps
//! `(t, x)` to a scalar.
//!
//! Three evaluation paths share that layout:
//! * plain batched forward passes,
//! * reverse accumulation of an objective's gradient with respect to the
//!   parameters (HMC force, Adam updates),
//! * truncated Taylor propagation of the inputs, which yields exact
//!   derivatives `f_t` and `f_x … f_xxxx` for the candidate library.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, MeasurementDataset};
use crate::error::{Error, Result};
use crate::fastmath;

/// Rows per block when a batch is split for (optionally parallel) evaluation.
/// Partial results are always reduced in block order.
const BLOCK_ROWS: usize = 512;

/// Highest spatial derivative order the jet supports.
pub const MAX_X_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_inputs: usize,
    pub n_layers: usize,
    pub n_units: usize,
    pub activation: Activation,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl Default for Architecture {
    /// Four hidden layers of fifty tanh units with biases.
    fn default() -> Self {
        Architecture {
            n_inputs: 2,
            n_layers: 4,
            n_units: 50,
            activation: Activation::Tanh,
            bias: true,
        }
    }
}

impl Architecture {
    pub fn new(n_layers: usize, n_units: usize, bias: bool) -> Result<Self> {
        let arch = Architecture {
            n_inputs: 2,
            n_layers,
            n_units,
            activation: Activation::Tanh,
            bias,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs != 2 {
            return Err(Error::Dimension(format!(
                "the surrogate takes (t, x); n_inputs = {}",
                self.n_inputs
            )));
        }
        if self.n_layers == 0 || self.n_units == 0 {
            return Err(Error::Dimension(format!(
                "need at least one hidden layer and unit, got {}x{}",
                self.n_layers, self.n_units
            )));
        }
        Ok(())
    }

    /// `(out, in)` for every layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.n_layers + 1);
        dims.push((self.n_units, self.n_inputs));
        for _ in 1..self.n_layers {
            dims.push((self.n_units, self.n_units));
        }
        dims.push((1, self.n_units));
        dims
    }

    /// Total parameter count `P`.
    pub fn n_params(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(o, i)| o * i + if self.bias { o } else { 0 })
            .sum()
    }
}

/// Flat parameter vector tied to an architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    arch: Architecture,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.n_params() {
            return Err(Error::Dimension(format!(
                "architecture {}x{} (bias: {}) has {} parameters, got {}",
                arch.n_layers,
                arch.n_units,
                arch.bias,
                arch.n_params(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("weight {i} is not finite")));
        }
        Ok(WeightVector { arch, values })
    }

    pub fn zeros(arch: Architecture) -> Self {
        WeightVector {
            arch,
            values: vec![0.0; arch.n_params()],
        }
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One layer's parameters viewed in place.
struct Layer<'a> {
    weight: ArrayView2<'a, f64>,
    bias: Option<ArrayView1<'a, f64>>,
}

fn layers<'a>(arch: &Architecture, params: &'a [f64]) -> Vec<Layer<'a>> {
    let mut out = Vec::with_capacity(arch.n_layers + 1);
    let mut offset = 0;
    for (o, i) in arch.layer_dims() {
        let weight = ArrayView2::from_shape((o, i), &params[offset..offset + o * i])
            .expect("layer slice matches its shape");
        offset += o * i;
        let bias = if arch.bias {
            let b = ArrayView1::from(&params[offset..offset + o]);
            offset += o;
            Some(b)
        } else {
            None
        };
        out.push(Layer { weight, bias });
    }
    out
}

fn check_inputs(inputs: &ArrayView2<'_, f64>) -> Result<()> {
    if inputs.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "inputs need 2 columns (t, x), got {}",
            inputs.ncols()
        )));
    }
    Ok(())
}

fn affine(a: &ArrayView2<'_, f64>, layer: &Layer<'_>) -> Array2<f64> {
    let mut z = a.dot(&layer.weight.t());
    if let Some(b) = &layer.bias {
        z += b;
    }
    z
}

fn block_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(BLOCK_ROWS)
        .map(|s| (s, (s + BLOCK_ROWS).min(n)))
        .collect()
}

fn forward_block(arch: &Architecture, params: &[f64], inputs: ArrayView2<'_, f64>) -> Array1<f64> {
    let layers = layers(arch, params);
    let (hidden, output) = layers.split_at(arch.n_layers);
    let mut a = inputs.to_owned();
    for layer in hidden {
        a = affine(&a.view(), layer);
        fastmath::tanh_inplace(a.as_slice_mut().expect("standard layout"));
    }
    affine(&a.view(), &output[0]).column(0).to_owned()
}

fn forward_rows(arch: &Architecture, params: &[f64], inputs: ArrayView2<'_, f64>) -> Array1<f64> {
    let parts: Vec<Array1<f64>> = block_ranges(inputs.nrows())
        .into_par_iter()
        .map(|(s, e)| forward_block(arch, params, inputs.slice(s![s..e, ..])))
        .collect();
    let mut out = Array1::zeros(inputs.nrows());
    for ((s, e), part) in block_ranges(inputs.nrows()).into_iter().zip(parts) {
        out.slice_mut(s![s..e]).assign(&part);
    }
    out
}

/// `f(t, x | w)`.
pub fn forward(w: &WeightVector, t: f64, x: f64) -> Result<f64> {
    let inputs = ndarray::arr2(&[[t, x]]);
    Ok(forward_batch(w, inputs.view())?[0])
}

/// `f` at every row `(t, x)` of `inputs`.
pub fn forward_batch(w: &WeightVector, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    check_inputs(&inputs)?;
    Ok(forward_rows(&w.arch, &w.values, inputs))
}

/// Value, time derivative and spatial derivatives of the network output at one point.
///
/// Entries above the requested spatial order are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivativeJet {
    pub f: f64,
    pub f_t: f64,
    pub f_x: f64,
    pub f_xx: f64,
    pub f_xxx: f64,
    pub f_xxxx: f64,
}

impl DerivativeJet {
    /// Spatial derivative of the given order (0 is the value itself).
    pub fn x_derivative(&self, order: usize) -> f64 {
        match order {
            0 => self.f,
            1 => self.f_x,
            2 => self.f_xx,
            3 => self.f_xxx,
            4 => self.f_xxxx,
            _ => panic!("spatial order {order} exceeds {MAX_X_ORDER}"),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.f, self.f_t, self.f_x, self.f_xx, self.f_xxx, self.f_xxxx]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Jets of a batch of points: `x_derivs[k][i]` is `∂^k f/∂x^k` at row `i`.
#[derive(Clone, Debug)]
pub struct JetBatch {
    pub f_t: Array1<f64>,
    /// Orders `0..=max_x_order`; index 0 is the value.
    pub x_derivs: Vec<Array1<f64>>,
}

impl JetBatch {
    pub fn len(&self) -> usize {
        self.f_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_t.is_empty()
    }

    pub fn max_x_order(&self) -> usize {
        self.x_derivs.len() - 1
    }

    pub fn get(&self, i: usize) -> DerivativeJet {
        let d = |k: usize| self.x_derivs.get(k).map_or(0.0, |v| v[i]);
        DerivativeJet {
            f: d(0),
            f_t: self.f_t[i],
            f_x: d(1),
            f_xx: d(2),
            f_xxx: d(3),
            f_xxxx: d(4),
        }
    }
}

/// Taylor coefficients of `tanh(z(s))` from those of `z(s)`, in place of `z`.
///
/// Uses `y' = (1 - y²) z'`: with `q = 1 - y²`,
/// `k y_k = Σ_{j=1..k} j z_j q_{k-j}` and `q_k = -Σ_{i=0..k} y_i y_{k-i}`.
/// The first-order time tangent rides along as `y_t = q_0 z_t`.
fn tanh_taylor_inplace(coeffs: &mut [Array2<f64>], tangent: &mut Array2<f64>) {
    let order = coeffs.len() - 1;
    let n = tangent.len();
    let mut slices: Vec<&mut [f64]> = coeffs
        .iter_mut()
        .map(|c| c.as_slice_mut().expect("standard layout"))
        .collect();
    let tan = tangent.as_slice_mut().expect("standard layout");
    let mut z = [0.0; MAX_X_ORDER + 1];
    let mut y = [0.0; MAX_X_ORDER + 1];
    let mut q = [0.0; MAX_X_ORDER + 1];
    for e in 0..n {
        for k in 0..=order {
            z[k] = slices[k][e];
        }
        y[0] = fastmath::tanh(z[0]);
        q[0] = 1.0 - y[0] * y[0];
        for k in 1..=order {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * z[j] * q[k - j];
            }
            y[k] = acc / k as f64;
            let mut qk = 0.0;
            for i in 0..=k {
                qk += y[i] * y[k - i];
            }
            q[k] = -qk;
        }
        for k in 0..=order {
            slices[k][e] = y[k];
        }
        tan[e] *= q[0];
    }
}

fn jet_block(
    arch: &Architecture,
    params: &[f64],
    inputs: ArrayView2<'_, f64>,
    order: usize,
) -> JetBatch {
    let layers = layers(arch, params);
    let (hidden, output) = layers.split_at(arch.n_layers);
    let n = inputs.nrows();
    let units = arch.n_units;

    // First layer: the x-direction has unit velocity in the second input,
    // the t-tangent has unit velocity in the first.
    let first = &hidden[0];
    let mut coeffs = Vec::with_capacity(order + 1);
    coeffs.push(affine(&inputs, first));
    let x_col = first.weight.column(1);
    coeffs.push(Array2::from_shape_fn((n, units), |(_, j)| x_col[j]));
    for _ in 2..=order {
        coeffs.push(Array2::zeros((n, units)));
    }
    let t_col = first.weight.column(0);
    let mut tangent = Array2::from_shape_fn((n, units), |(_, j)| t_col[j]);
    tanh_taylor_inplace(&mut coeffs, &mut tangent);

    for layer in &hidden[1..] {
        let wt = layer.weight.t();
        for (k, c) in coeffs.iter_mut().enumerate() {
            let mut z = c.dot(&wt);
            if k == 0 {
                if let Some(b) = &layer.bias {
                    z += b;
                }
            }
            *c = z;
        }
        tangent = tangent.dot(&wt);
        tanh_taylor_inplace(&mut coeffs, &mut tangent);
    }

    let out = &output[0];
    let w_out = out.weight.row(0);
    let b_out = out.bias.as_ref().map_or(0.0, |b| b[0]);
    let mut factorial = 1.0;
    let x_derivs = coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if k > 0 {
                factorial *= k as f64;
            }
            let mut v = c.dot(&w_out) * factorial;
            if k == 0 {
                v += b_out;
            }
            v
        })
        .collect();
    JetBatch {
        f_t: tangent.dot(&w_out),
        x_derivs,
    }
}

/// Exact jets at every row of `inputs`, spatial orders `1..=max_x_order`.
pub fn jet_batch(
    w: &WeightVector,
    inputs: ArrayView2<'_, f64>,
    max_x_order: usize,
) -> Result<JetBatch> {
    check_inputs(&inputs)?;
    if !(1..=MAX_X_ORDER).contains(&max_x_order) {
        return Err(Error::Domain(format!(
            "spatial order must lie in 1..={MAX_X_ORDER}, got {max_x_order}"
        )));
    }
    Ok(jet_rows(&w.arch, &w.values, inputs, max_x_order))
}

pub(crate) fn jet_rows(
    arch: &Architecture,
    params: &[f64],
    inputs: ArrayView2<'_, f64>,
    order: usize,
) -> JetBatch {
    let ranges = block_ranges(inputs.nrows());
    if ranges.len() <= 1 {
        return jet_block(arch, params, inputs, order);
    }
    let parts: Vec<JetBatch> = ranges
        .par_iter()
        .map(|&(s, e)| jet_block(arch, params, inputs.slice(s![s..e, ..]), order))
        .collect();
    let cat = |f: &dyn Fn(&JetBatch) -> ArrayView1<'_, f64>| {
        let views: Vec<_> = parts.iter().map(f).collect();
        ndarray::concatenate(Axis(0), &views).expect("1-d blocks concatenate")
    };
    JetBatch {
        f_t: cat(&|p| p.f_t.view()),
        x_derivs: (0..=order).map(|k| cat(&|p| p.x_derivs[k].view())).collect(),
    }
}

/// Single-point jet.
pub fn jet(w: &WeightVector, t: f64, x: f64, max_x_order: usize) -> Result<DerivativeJet> {
    let inputs = ndarray::arr2(&[[t, x]]);
    Ok(jet_batch(w, inputs.view(), max_x_order)?.get(0))
}

/// `Σ_p log N(w_p | 0, 1)`.
pub fn log_prior(w: &WeightVector) -> f64 {
    log_prior_slice(&w.values)
}

fn log_prior_slice(values: &[f64]) -> f64 {
    let sq: f64 = values.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * values.len() as f64 * (2.0 * PI).ln()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!(
            "likelihood noise std must be positive, got {sigma}"
        )));
    }
    Ok(())
}

/// `Σ_i log N(y_i | f(t_i, x_i | w), σ²)`.
pub fn log_likelihood(w: &WeightVector, data: &MeasurementDataset, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let pred = forward_rows(&w.arch, &w.values, data.inputs());
    Ok(gaussian_log_lik(&pred.view(), &data.targets(), sigma))
}

fn gaussian_log_lik(pred: &ArrayView1<'_, f64>, targets: &ArrayView1<'_, f64>, sigma: f64) -> f64 {
    let n = targets.len() as f64;
    let sq: f64 = pred
        .iter()
        .zip(targets.iter())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    -n * (sigma * (2.0 * PI).sqrt()).ln() - sq / (2.0 * sigma * sigma)
}

/// Unnormalized log-posterior; the HMC potential is its negative.
pub fn log_posterior_unnorm(
    w: &WeightVector,
    data: &MeasurementDataset,
    sigma: f64,
) -> Result<f64> {
    Ok(log_likelihood(w, data, sigma)? + log_prior(w))
}

/// Objective whose parameter gradient [`grad_wrt_weights`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Gaussian log-likelihood with noise std `sigma` plus the standard-normal log-prior.
    LogPosterior { sigma: f64 },
    /// Mean squared error over the dataset.
    Mse,
}

/// Partial objective contribution of one block of rows and its parameter gradient.
fn objective_block(
    arch: &Architecture,
    params: &[f64],
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    objective: Objective,
    n_total: usize,
    grad: &mut [f64],
) -> f64 {
    let layers = layers(arch, params);
    let (hidden, output) = layers.split_at(arch.n_layers);
    // activations[0] = inputs, activations[l] = output of hidden layer l
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(arch.n_layers + 1);
    activations.push(inputs.to_owned());
    for layer in hidden {
        let mut a = affine(&activations.last().unwrap().view(), layer);
        fastmath::tanh_inplace(a.as_slice_mut().expect("standard layout"));
        activations.push(a);
    }
    let out_layer = &output[0];
    let pred = affine(&activations.last().unwrap().view(), out_layer)
        .column(0)
        .to_owned();
    let resid = &targets - &pred;

    let (value, seed) = match objective {
        Objective::LogPosterior { sigma } => {
            let inv_var = 1.0 / (sigma * sigma);
            let value = gaussian_log_lik(&pred.view(), &targets, sigma);
            (value, resid.mapv(|r| r * inv_var))
        }
        Objective::Mse => {
            let scale = 1.0 / n_total as f64;
            let value = resid.iter().map(|r| r * r).sum::<f64>() * scale;
            (value, resid.mapv(|r| -2.0 * r * scale))
        }
    };

    // Parameter offsets per layer.
    let dims = arch.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &(o, i) in &dims {
        offsets.push(off);
        off += o * i + if arch.bias { o } else { 0 };
    }

    // Output layer.
    let last = activations.last().unwrap();
    let (o, i) = dims[arch.n_layers];
    let off = offsets[arch.n_layers];
    let g_w = seed.dot(last);
    for (g, v) in grad[off..off + o * i].iter_mut().zip(g_w.iter()) {
        *g += v;
    }
    if arch.bias {
        grad[off + o * i] += seed.sum();
    }

    // delta for the last hidden layer: seed ⊗ w_out ⊙ (1 - a²)
    let w_out = out_layer.weight.row(0);
    let mut delta = Array2::from_shape_fn(last.raw_dim(), |(r, c)| {
        let a = last[[r, c]];
        seed[r] * w_out[c] * (1.0 - a * a)
    });
    for l in (0..arch.n_layers).rev() {
        let (o, i) = dims[l];
        let off = offsets[l];
        let prev = &activations[l];
        let g_w = delta.t().dot(prev);
        let g_slice = &mut grad[off..off + o * i];
        for (g, v) in g_slice.iter_mut().zip(g_w.iter()) {
            *g += v;
        }
        if arch.bias {
            let g_b = delta.sum_axis(Axis(0));
            for (g, v) in grad[off + o * i..off + o * i + o].iter_mut().zip(g_b.iter()) {
                *g += v;
            }
        }
        if l > 0 {
            let mut next = delta.dot(&hidden[l].weight);
            ndarray::Zip::from(&mut next)
                .and(prev)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            delta = next;
        }
    }
    value
}

/// Objective value and its gradient, written into `grad` (overwritten).
///
/// For [`Objective::LogPosterior`] the value includes the prior terms.
pub(crate) fn objective_and_gradient_raw(
    arch: &Architecture,
    params: &[f64],
    data: &MeasurementDataset,
    objective: Objective,
    grad: &mut [f64],
) -> f64 {
    let inputs = data.inputs();
    let targets = data.targets();
    let n = targets.len();
    let ranges = block_ranges(n);
    let mut value = if ranges.len() <= 1 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if n == 0 {
            0.0
        } else {
            objective_block(arch, params, inputs, targets, objective, n, grad)
        }
    } else {
        let parts: Vec<(f64, Vec<f64>)> = ranges
            .par_iter()
            .map(|&(s, e)| {
                let mut g = vec![0.0; params.len()];
                let v = objective_block(
                    arch,
                    params,
                    inputs.slice(s![s..e, ..]),
                    targets.slice(s![s..e]),
                    objective,
                    n,
                    &mut g,
                );
                (v, g)
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (v, g) in parts {
            total += v;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
        total
    };
    if let Objective::LogPosterior { .. } = objective {
        value += log_prior_slice(params);
        for (g, p) in grad.iter_mut().zip(params) {
            *g -= p;
        }
    }
    value
}

/// Objective value and exact parameter gradient.
pub fn objective_and_gradient(
    w: &WeightVector,
    data: &MeasurementDataset,
    objective: Objective,
) -> Result<(f64, Vec<f64>)> {
    if let Objective::LogPosterior { sigma } = objective {
        check_sigma(sigma)?;
    }
    let mut grad = vec![0.0; w.len()];
    let v = objective_and_gradient_raw(&w.arch, &w.values, data, objective, &mut grad);
    Ok((v, grad))
}

/// Gradient of the chosen objective with respect to every parameter.
///
/// `sigma` is only used by [`ObjectiveKind::LogPosterior`].
pub fn grad_wrt_weights(
    w: &WeightVector,
    data: &MeasurementDataset,
    sigma: f64,
    objective: ObjectiveKind,
) -> Result<Vec<f64>> {
    let obj = match objective {
        ObjectiveKind::LogPosterior => Objective::LogPosterior { sigma },
        ObjectiveKind::Mse => Objective::Mse,
    };
    Ok(objective_and_gradient(w, data, obj)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    LogPosterior,
    Mse,
}

/// Affine maps between physical units and the surrogate's reference frame.
///
/// Inputs: `Ω → [-1, 1]²`. Targets: `y ↦ (y - y_offset) / y_scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub t_center: f64,
    pub t_half: f64,
    pub x_center: f64,
    pub x_half: f64,
    pub y_offset: f64,
    pub y_scale: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self::identity()
    }
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling {
            t_center: 0.0,
            t_half: 1.0,
            x_center: 0.0,
            x_half: 1.0,
            y_offset: 0.0,
            y_scale: 1.0,
        }
    }

    /// Domain-to-square input map plus target standardization (mean, population std).
    pub fn fit(data: &MeasurementDataset) -> Self {
        let dom = data.domain();
        let y = data.targets();
        let (mean, scale) = if y.is_empty() {
            (0.0, 1.0)
        } else {
            let mean = y.mean().unwrap_or(0.0);
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        };
        Scaling {
            t_center: 0.5 * (dom.t_min + dom.t_max),
            t_half: 0.5 * dom.t_span(),
            x_center: 0.5 * (dom.x_min + dom.x_max),
            x_half: 0.5 * dom.x_span(),
            y_offset: mean,
            y_scale: scale,
        }
    }

    pub fn input(&self, t: f64, x: f64) -> (f64, f64) {
        (
            (t - self.t_center) / self.t_half,
            (x - self.x_center) / self.x_half,
        )
    }

    pub fn inputs(&self, points: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = points.to_owned();
        out.column_mut(0)
            .mapv_inplace(|t| (t - self.t_center) / self.t_half);
        out.column_mut(1)
            .mapv_inplace(|x| (x - self.x_center) / self.x_half);
        out
    }

    pub fn output(&self, g: f64) -> f64 {
        self.y_offset + self.y_scale * g
    }

    /// Dataset expressed in the reference frame.
    pub fn dataset(&self, data: &MeasurementDataset) -> Result<MeasurementDataset> {
        let inputs = self.inputs(data.inputs());
        let targets = data
            .targets()
            .mapv(|y| (y - self.y_offset) / self.y_scale);
        let dom = data.domain();
        let (t0, x0) = self.input(dom.t_min, dom.x_min);
        let (t1, x1) = self.input(dom.t_max, dom.x_max);
        MeasurementDataset::new(inputs, targets, Domain::new(t0, t1, x0, x1)?)
    }

    /// Chain-rule a reference-frame jet batch back to physical units.
    pub fn jets_to_physical(&self, jets: &mut JetBatch) {
        jets.f_t *= self.y_scale / self.t_half;
        for (k, d) in jets.x_derivs.iter_mut().enumerate() {
            if k == 0 {
                d.mapv_inplace(|g| self.output(g));
            } else {
                *d *= self.y_scale / self.x_half.powi(k as i32);
            }
        }
    }
}

/// Per-point predictive mean and population standard deviation over samples.
pub fn predict_stats(
    samples: &[WeightVector],
    scaling: &Scaling,
    points: ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_inputs(&points)?;
    if samples.is_empty() {
        return Err(Error::Domain("predictive statistics need at least one sample".into()));
    }
    let scaled = scaling.inputs(points);
    let preds: Vec<Array1<f64>> = samples
        .iter()
        .map(|w| forward_rows(&w.arch, &w.values, scaled.view()).mapv(|g| scaling.output(g)))
        .collect();
    let n_s = samples.len() as f64;
    let mut mean = Array1::zeros(points.nrows());
    for p in &preds {
        mean += p;
    }
    mean /= n_s;
    let mut var = Array1::<f64>::zeros(points.nrows());
    for p in &preds {
        ndarray::Zip::from(&mut var)
            .and(p)
            .and(&mean)
            .for_each(|v, &x, &m| *v += (x - m) * (x - m));
    }
    var /= n_s;
    Ok((mean, var.mapv(f64::sqrt)))
}
