//! Dense feed-forward networks with hand-written backpropagation and Adam.
//!
//! Weights are stored row-major with shape `(out, in)`. A layer may carry
//! hard-concrete gates, in which case the forward pass uses `z * w` and the
//! backward pass also produces gradients for the gate locations.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{self, GateParams, Gating};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(dst, a, other.row(k));
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape("cannot subtract matrices of different shapes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, x) in dst.iter_mut().zip(x) {
        *d += a * x;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub gate: Option<GateParams>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Weight actually used by the forward pass for a given gate vector.
    pub fn effective_weight(&self, z: Option<&[f64]>) -> Matrix {
        match z {
            Some(z) => Matrix::from_raw(
                self.weight.rows(),
                self.weight.cols(),
                self.weight.data().iter().zip(z).map(|(w, z)| w * z).collect(),
            ),
            None => self.weight.clone(),
        }
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    /// Identity plus mutation counter so caches can detect staleness.
    #[serde(skip, default = "fresh_id")]
    id: u64,
    #[serde(skip)]
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Sum over layers of `in * out + out`.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "zero-width layer in {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl Network {
    /// Fully connected network; hidden layers use `activation`, the last layer is linear.
    ///
    /// Weights are drawn from `U(-limit, limit)` with `limit = sqrt(6 / fan_in)`
    /// for relu and `sqrt(3 / fan_in)` otherwise. Biases start at zero.
    pub fn mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Network> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = layer_sizes.len() - 1;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = if activation == Activation::Relu { 6.0 } else { 3.0 };
                let limit = (gain / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer {
                    weight: Matrix::from_raw(fan_out, fan_in, data),
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == n {
                        Activation::Identity
                    } else {
                        activation
                    },
                    gate: None,
                }
            })
            .collect();
        Ok(Network {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i}: bias length {} for {} outputs",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidArchitecture(format!("layer {i} has a zero dimension")));
            }
            if let Some(gp) = &l.gate {
                if gp.len() != l.weight.data().len() {
                    return Err(Error::InvalidArchitecture(format!(
                        "layer {i}: {} gates for {} weights",
                        gp.len(),
                        l.weight.data().len()
                    )));
                }
                gp.validate()?;
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::InvalidArchitecture("final layer must be linear".into()));
        }
        Ok(Network {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Attaches default-initialized gates to every layer.
    pub fn with_gates(mut self) -> Network {
        for l in &mut self.layers {
            l.gate = Some(GateParams::with_defaults(l.weight.data().len()));
        }
        self.version += 1;
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_gated(&self) -> bool {
        self.layers.iter().any(|l| l.gate.is_some())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    /// Weights and biases (gate locations excluded).
    pub fn param_count(&self) -> usize {
        param_count(&self.layer_sizes())
    }

    /// Mutable view of every trainable slot: per layer weight, bias, then gate locations.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
            if let Some(gp) = &mut l.gate {
                out.push(gp.log_alpha.as_mut_slice());
            }
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            if let Some(gp) = &l.gate {
                out.push(gp.log_alpha.as_slice());
            }
        }
        out
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    /// Overwrites all parameters with those of a same-shaped network.
    pub fn copy_from(&mut self, other: &Network) -> Result<()> {
        if self.layer_sizes() != other.layer_sizes() || self.is_gated() != other.is_gated() {
            return Err(Error::Shape("copy between differently shaped networks".into()));
        }
        self.layers.clone_from(&other.layers);
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix, mut gating: Gating<'_>) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let b = batch.rows();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let (z, dz) = match &layer.gate {
                Some(gp) => {
                    let (z, dz) = gates::draw_with_grad(gp, &mut gating);
                    (Some(z), Some(dz))
                }
                None => (None, None),
            };
            let weff = layer.effective_weight(z.as_deref());
            let y = dense_forward(&x, &weff, &layer.bias, layer.activation, b);
            layers.push(LayerCache {
                input: x,
                weff,
                z,
                dz,
            });
            x = y;
        }
        let cache = ForwardCache {
            network_id: self.id,
            version: self.version,
            layers,
            output: x.clone(),
        };
        Ok((x, cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, batch: &Matrix, mut gating: Gating<'_>) -> Result<Matrix> {
        if batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let mut x = batch.clone();
        for layer in &self.layers {
            let z = layer
                .gate
                .as_ref()
                .map(|gp| gates::draw_with_grad(gp, &mut gating).0);
            let weff = layer.effective_weight(z.as_deref());
            x = dense_forward(&x, &weff, &layer.bias, layer.activation, batch.rows());
        }
        Ok(x)
    }

    /// Backpropagates `loss_grad` (dL/d output) through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        if cache.network_id != self.id || cache.version != self.version {
            return Err(Error::Consistency(
                "cache was produced by a different network or before a parameter update".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Consistency("cache layer count differs".into()));
        }
        if loss_grad.rows() != cache.output.rows() || loss_grad.cols() != cache.output.cols() {
            return Err(Error::Shape(format!(
                "loss gradient is {}x{}, output is {}x{}",
                loss_grad.rows(),
                loss_grad.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        let b = loss_grad.rows();
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut delta = loss_grad.clone();
        let mut output = &cache.output;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[idx];
            let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
            if layer.activation != Activation::Identity {
                for (d, y) in delta.data.iter_mut().zip(&output.data) {
                    *d *= layer.activation.derivative_from_output(*y);
                }
            }
            let mut dbias = vec![0.0; n_out];
            let mut dweff = vec![0.0; n_out * n_in];
            for i in 0..b {
                let drow = delta.row(i);
                let xrow = lc.input.row(i);
                for (o, &d) in drow.iter().enumerate() {
                    if d != 0.0 {
                        dbias[o] += d;
                        axpy(&mut dweff[o * n_in..(o + 1) * n_in], d, xrow);
                    }
                }
            }
            let mut dinput = Matrix::zeros(b, n_in);
            for i in 0..b {
                let dst = &mut dinput.data[i * n_in..(i + 1) * n_in];
                for (o, &d) in delta.row(i).iter().enumerate() {
                    if d != 0.0 {
                        axpy(dst, d, lc.weff.row(o));
                    }
                }
            }
            let (weight, log_alpha) = match (&lc.z, &lc.dz) {
                (Some(z), Some(dz)) => {
                    let w = layer.weight.data();
                    let dw = dweff.iter().zip(z).map(|(g, z)| g * z).collect();
                    let dla = dweff
                        .iter()
                        .zip(w)
                        .zip(dz)
                        .map(|((g, w), dz)| g * w * dz)
                        .collect();
                    (dw, Some(dla))
                }
                _ => (dweff, None),
            };
            grads.push(LayerGrads {
                weight,
                bias: dbias,
                log_alpha,
            });
            delta = dinput;
            if idx > 0 {
                output = &cache.layers[idx].input;
            }
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }

    /// Zeroed gradient container shaped like this network.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![0.0; l.weight.data().len()],
                    bias: vec![0.0; l.bias.len()],
                    log_alpha: l.gate.as_ref().map(|g| vec![0.0; g.len()]),
                })
                .collect(),
            input: Matrix::zeros(0, self.in_dim()),
        }
    }
}

fn dense_forward(x: &Matrix, weff: &Matrix, bias: &[f64], act: Activation, b: usize) -> Matrix {
    let (n_out, n_in) = (weff.rows(), weff.cols());
    let wt = weff.transpose();
    let mut y = Vec::with_capacity(b * n_out);
    for _ in 0..b {
        y.extend_from_slice(bias);
    }
    for i in 0..b {
        let dst = &mut y[i * n_out..(i + 1) * n_out];
        for (k, &xv) in x.row(i).iter().enumerate() {
            if xv != 0.0 {
                axpy(dst, xv, &wt.data[k * n_out..(k + 1) * n_out]);
            }
        }
        debug_assert_eq!(x.row(i).len(), n_in);
    }
    if act != Activation::Identity {
        for v in &mut y {
            *v = act.apply(*v);
        }
    }
    Matrix::from_raw(b, n_out, y)
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    weff: Matrix,
    z: Option<Vec<f64>>,
    dz: Option<Vec<f64>>,
}

/// Activations recorded by [`Network::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    network_id: u64,
    version: u64,
    layers: Vec<LayerCache>,
    output: Matrix,
}

impl ForwardCache {
    /// Gate values used in layer `i`, if the layer is gated.
    pub fn gate_values(&self, i: usize) -> Option<&[f64]> {
        self.layers.get(i).and_then(|l| l.z.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub log_alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    /// dL/d input batch.
    pub input: Matrix,
}

impl Gradients {
    /// Same slot order as [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let Some(la) = &l.log_alpha {
                out.push(la.as_slice());
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(la) = &mut l.log_alpha {
                out.push(la.as_mut_slice());
            }
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Accumulates another gradient of the same shape.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        let rhs = other.slices();
        let mut lhs = self.slices_mut();
        if lhs.len() != rhs.len() || lhs.iter().zip(&rhs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("gradient shapes differ".into()));
        }
        for (a, b) in lhs.iter_mut().zip(rhs) {
            axpy(a, 1.0, b);
        }
        Ok(())
    }

    /// Global L2 norm over weight, bias and gate slots.
    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One Adam update of `net` along `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let g = grads.slices();
        let mut p = net.param_slices_mut();
        self.step_slices(&mut p, &g)
    }

    /// Adam over raw parameter slots. Moments are allocated on first use.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("parameter and gradient slots differ".into()));
        }
        for (slot, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { slot });
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len()
            || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / c1;
        let c2_sqrt = c2.sqrt();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() / c2_sqrt + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> Layer {
        Layer {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
            activation: Activation::Identity,
            gate: None,
        }
    }

    #[test]
    fn table_parameter_counts() {
        assert_eq!(param_count(&[4, 64, 160, 2]), 11042);
        assert_eq!(param_count(&[6, 64, 160, 3]), 11331);
        assert_eq!(param_count(&[8, 64, 160, 4]), 11620);
        assert_eq!(param_count(&[1, 1]), 2);
        let net = Network::mlp(&[4, 64, 160, 2], Activation::Relu, 0).unwrap();
        assert_eq!(net.param_count(), 11042);
    }

    #[test]
    fn hidden_widths_fit_all_rows() {
        // Rows differ only in obs/action dims; solve for (h1, h2) by search.
        let rows = [(4, 2, 11042), (6, 3, 11331), (8, 4, 11620)];
        let fits: Vec<(usize, usize)> = (1..=512)
            .flat_map(|h1| (1..=512).map(move |h2| (h1, h2)))
            .filter(|&(h1, h2)| {
                rows.iter()
                    .all(|&(o, a, n)| param_count(&[o, h1, h2, a]) == n)
            })
            .collect();
        assert_eq!(fits, vec![(64, 160)]);
    }

    #[test]
    fn bad_architectures() {
        assert!(matches!(
            Network::mlp(&[], Activation::Relu, 0),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(Network::mlp(&[3], Activation::Relu, 0).is_err());
        assert!(Network::mlp(&[3, 0, 2], Activation::Relu, 0).is_err());
    }

    #[test]
    fn seeded_init_is_bitwise_deterministic() {
        let a = Network::mlp(&[2, 2], Activation::Relu, 17).unwrap();
        let b = Network::mlp(&[2, 2], Activation::Relu, 17).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 2.0).sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= limit));
        assert!(a.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Network::from_layers(vec![identity_layer(3)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 4.0, -1.0]]).unwrap();
        let (y, _) = net.forward(&x, Gating::Deterministic).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_of_negative_preactivation_is_zero() {
        let layer = Layer {
            weight: Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, -1.0]]).unwrap(),
            bias: vec![-10.0, -10.0],
            activation: Activation::Relu,
            gate: None,
        };
        let net = Network::from_layers(vec![layer, identity_layer(2)]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = net.forward(&x, Gating::Deterministic).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_shape_error() {
        let net = Network::mlp(&[3, 2], Activation::Relu, 0).unwrap();
        let x = Matrix::zeros(1, 4);
        assert!(matches!(net.forward(&x, Gating::Deterministic), Err(Error::Shape(_))));
    }

    #[test]
    fn scalar_gradient_is_input() {
        let layer = Layer {
            weight: Matrix::from_vec(1, 1, vec![0.7]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
            gate: None,
        };
        let net = Network::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_vec(1, 1, vec![2.5]).unwrap();
        let (_, cache) = net.forward(&x, Gating::Deterministic).unwrap();
        let g = net.backward(&cache, &Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.layers[0].weight, vec![2.5]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let net = Network::mlp(&[3, 5, 2], Activation::Tanh, 3).unwrap().with_gates();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let (_, cache) = net.forward(&x, Gating::Deterministic).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Network::mlp(&[2, 3, 1], Activation::Relu, 0).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let (_, cache) = net.forward(&x, Gating::Deterministic).unwrap();
        let other = net.clone();
        assert!(matches!(
            other.backward(&cache, &Matrix::zeros(1, 1)),
            Err(Error::Consistency(_))
        ));
        let grads = net.backward(&cache, &Matrix::zeros(1, 1)).unwrap();
        AdamState::new(1e-3).step(&mut net, &grads).unwrap();
        assert!(matches!(
            net.backward(&cache, &Matrix::zeros(1, 1)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut adam = AdamState::new(0.1);
        adam.step_slices(&mut [p.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);

        // Existing moments decay by beta under a zero gradient.
        adam.step_slices(&mut [p.as_mut_slice()], &[&[0.5, -0.5]]).unwrap();
        let m = adam.first_moments()[0].clone();
        let v = adam.second_moments()[0].clone();
        adam.step_slices(&mut [p.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        for i in 0..2 {
            assert!((adam.first_moments()[0][i] - 0.9 * m[i]).abs() < 1e-15);
            assert!((adam.second_moments()[0][i] - 0.999 * v[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.01, 3.0, -250.0] {
            let mut p = vec![0.0];
            let mut adam = AdamState::new(0.05);
            adam.step_slices(&mut [p.as_mut_slice()], &[&[g]]).unwrap();
            assert!((p[0].abs() - 0.05).abs() < 1e-6, "g={g} moved {}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // Independent scalar recurrence.
        let (mut x_ref, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (x_ref - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let mut x = vec![0.0];
        let mut adam = AdamState::new(0.1);
        for _ in 0..100 {
            let g = [2.0 * (x[0] - 3.0)];
            adam.step_slices(&mut [x.as_mut_slice()], &[&g]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.1, "{}", x[0]);
        assert!((x[0] - x_ref).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0, 0.0];
        let mut adam = AdamState::new(0.1);
        let err = adam
            .step_slices(&mut [p.as_mut_slice()], &[&[1.0, f64::NAN]])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { slot: 0 }));
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn matrix_from_vec_validates() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 1, vec![f64::INFINITY]).is_err());
    }
}
