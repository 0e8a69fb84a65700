//! Hard-concrete L0 gates and the weight penalties they are compared against.
//!
//! Every gated weight `w` carries a learnable location `log_alpha`. A gate value
//! is drawn by stretching a temperature-controlled logistic sample to
//! `(gamma, zeta)` and hard-clamping it to `[0, 1]`:
//!
//! ```text
//! s = sigmoid((ln u - ln(1 - u) + log_alpha) / beta) * (zeta - gamma) + gamma
//! z = min(1, max(0, s))
//! ```
//!
//! The clamp produces exact zeros, so the gated weight `z * w` is truly sparse.
//! The expected number of non-zero gates is the differentiable penalty
//! `sum_j sigmoid(log_alpha_j - beta * ln(-gamma / zeta))`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Network};

pub const DEFAULT_BETA: f64 = 2.0 / 3.0;
pub const DEFAULT_GAMMA: f64 = -0.1;
pub const DEFAULT_ZETA: f64 = 1.1;
/// Initial location: the deterministic gate is fully open and a sampled gate
/// closes with probability under 2%.
pub const DEFAULT_LOG_ALPHA: f64 = 2.4;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-weight gate locations for one layer plus the shared stretch parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub log_alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl GateParams {
    pub fn new(log_alpha: Vec<f64>, beta: f64, gamma: f64, zeta: f64) -> Result<Self> {
        let gp = GateParams {
            log_alpha,
            beta,
            gamma,
            zeta,
        };
        gp.validate()?;
        Ok(gp)
    }

    /// `n` gates at the default location and stretch.
    pub fn with_defaults(n: usize) -> Self {
        GateParams {
            log_alpha: vec![DEFAULT_LOG_ALPHA; n],
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            zeta: DEFAULT_ZETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma < 0.0 && self.zeta > 1.0) {
            return Err(Error::Domain(format!(
                "gate stretch requires gamma < 0 < 1 < zeta, got gamma={} zeta={}",
                self.gamma, self.zeta
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Domain(format!("gate temperature must be > 0, got {}", self.beta)));
        }
        if self.log_alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite gate location".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }

    #[inline]
    fn stretch(&self, p: f64) -> f64 {
        p * (self.zeta - self.gamma) + self.gamma
    }

    /// Shift inside the penalty sigmoid: `beta * ln(-gamma / zeta)`.
    #[inline]
    fn penalty_shift(&self) -> f64 {
        self.beta * (-self.gamma / self.zeta).ln()
    }
}

/// How gate values are produced on a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Fresh uniform noise on every forward pass.
    #[default]
    Sampled,
    /// Noise-free gate `min(1, max(0, sigmoid(log_alpha) * (zeta - gamma) + gamma))`.
    Deterministic,
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(GateMode::Sampled),
            "deterministic" => Ok(GateMode::Deterministic),
            other => Err(Error::Config(format!("unknown gate mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateMode::Sampled => "sampled",
            GateMode::Deterministic => "deterministic",
        })
    }
}

/// Gate source passed into a forward pass.
pub enum Gating<'a> {
    Sampled(&'a mut dyn RngCore),
    Deterministic,
}

impl<'a> Gating<'a> {
    pub fn new(mode: GateMode, rng: &'a mut dyn RngCore) -> Self {
        match mode {
            GateMode::Sampled => Gating::Sampled(rng),
            GateMode::Deterministic => Gating::Deterministic,
        }
    }
}

/// Draws `u ~ U(0, 1)` with both endpoints excluded.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Sampled gates for explicit noise `u`.
pub fn sample_gate(gp: &GateParams, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != gp.len() {
        return Err(Error::Shape(format!(
            "{} noise values for {} gates",
            u.len(),
            gp.len()
        )));
    }
    u.iter()
        .zip(&gp.log_alpha)
        .map(|(&u, &la)| {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::Domain(format!("gate noise must lie in (0, 1), got {u}")));
            }
            Ok(sampled_value(gp, logit(u), la).0)
        })
        .collect()
}

#[inline]
fn logit(u: f64) -> f64 {
    u.ln() - (1.0 - u).ln()
}

/// Gate value and its derivative with respect to `log_alpha`.
#[inline]
fn sampled_value(gp: &GateParams, noise: f64, log_alpha: f64) -> (f64, f64) {
    let p = sigmoid((noise + log_alpha) / gp.beta);
    clamp_with_grad(gp, p, p * (1.0 - p) / gp.beta)
}

/// Same as `sampled_value(gp, logit(u), la)` without the two logarithms:
/// sigmoid((logit u + la)/β) = 1 / (1 + ((1−u)/u)^(1/β) · e^(−la/β)).
#[inline]
fn fast_sampled_value(gp: &GateParams, u: f64, la: f64, inv_beta: f64, root: bool) -> (f64, f64) {
    let r = (1.0 - u) / u;
    let rp = if root { r * r.sqrt() } else { r.powf(inv_beta) };
    let t = rp * (-la * inv_beta).exp();
    if t.is_nan() {
        return sampled_value(gp, logit(u), la);
    }
    let p = 1.0 / (1.0 + t);
    clamp_with_grad(gp, p, p * (1.0 - p) * inv_beta)
}

#[inline]
fn clamp_with_grad(gp: &GateParams, p: f64, dp: f64) -> (f64, f64) {
    let s = gp.stretch(p);
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        (s, dp * (gp.zeta - gp.gamma))
    }
}

pub fn deterministic_gate(gp: &GateParams) -> Vec<f64> {
    gp.log_alpha
        .iter()
        .map(|&la| {
            let p = sigmoid(la);
            clamp_with_grad(gp, p, 0.0).0
        })
        .collect()
}

/// Gate values `z` and `dz/dlog_alpha` for one forward pass.
pub(crate) fn draw_with_grad(gp: &GateParams, gating: &mut Gating<'_>) -> (Vec<f64>, Vec<f64>) {
    let n = gp.len();
    let mut z = Vec::with_capacity(n);
    let mut dz = Vec::with_capacity(n);
    match gating {
        Gating::Sampled(rng) => {
            let inv_beta = 1.0 / gp.beta;
            let root = (inv_beta - 1.5).abs() < 1e-15;
            for &la in &gp.log_alpha {
                let u = open_uniform(*rng);
                let (v, d) = fast_sampled_value(gp, u, la, inv_beta, root);
                z.push(v);
                dz.push(d);
            }
        }
        Gating::Deterministic => {
            for &la in &gp.log_alpha {
                let p = sigmoid(la);
                let (v, d) = clamp_with_grad(gp, p, p * (1.0 - p));
                z.push(v);
                dz.push(d);
            }
        }
    }
    (z, dz)
}

/// Expected number of open gates; differentiable in every `log_alpha`.
pub fn sparsity_penalty(gp: &GateParams) -> f64 {
    let shift = gp.penalty_shift();
    gp.log_alpha.iter().map(|&la| sigmoid(la - shift)).sum()
}

/// Gradient of [`sparsity_penalty`] with respect to each `log_alpha`.
pub fn sparsity_penalty_grad(gp: &GateParams) -> Vec<f64> {
    let shift = gp.penalty_shift();
    gp.log_alpha
        .iter()
        .map(|&la| {
            let p = sigmoid(la - shift);
            p * (1.0 - p)
        })
        .collect()
}

/// Elementwise `z * w`.
pub fn apply_gate(w: &Matrix, z: &[f64]) -> Result<Matrix> {
    if z.len() != w.data().len() {
        return Err(Error::Shape(format!(
            "{} gate values for a {}x{} weight",
            z.len(),
            w.rows(),
            w.cols()
        )));
    }
    let data = w.data().iter().zip(z).map(|(w, z)| w * z).collect();
    Matrix::from_vec(w.rows(), w.cols(), data)
}

pub fn l1_penalty<'a>(weights: impl IntoIterator<Item = &'a f64>) -> f64 {
    weights.into_iter().map(|w| w.abs()).sum()
}

pub fn l2_penalty<'a>(weights: impl IntoIterator<Item = &'a f64>) -> f64 {
    weights.into_iter().map(|w| w * w).sum()
}

/// Sparsification method applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sparsity {
    #[default]
    None,
    L0,
    L1,
    L2,
}

impl std::str::FromStr for Sparsity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "dense" => Ok(Sparsity::None),
            "l0" => Ok(Sparsity::L0),
            "l1" => Ok(Sparsity::L1),
            "l2" => Ok(Sparsity::L2),
            other => Err(Error::Config(format!("unknown sparsity method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Sparsity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sparsity::None => "none",
            Sparsity::L0 => "l0",
            Sparsity::L1 => "l1",
            Sparsity::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub total_gated_weights: usize,
    pub zero_count: usize,
    pub percent: f64,
}

impl SparsityReport {
    pub fn from_counts(zero_count: usize, total_gated_weights: usize) -> Self {
        let percent = if total_gated_weights == 0 {
            0.0
        } else {
            100.0 * zero_count as f64 / total_gated_weights as f64
        };
        SparsityReport {
            total_gated_weights,
            zero_count,
            percent,
        }
    }
}

/// How gate values are chosen when counting zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GatePolicy {
    Sampled { seed: u64 },
    Deterministic,
}

/// Counts zero entries of the effective weight matrices. Biases are excluded.
///
/// Gated layers use `z * w`; plain layers use `w`. An entry is zero when it is
/// exactly `0.0` or its magnitude is below `threshold`.
pub fn measure_sparsity(net: &Network, policy: GatePolicy, threshold: f64) -> SparsityReport {
    use rand::SeedableRng;

    let mut rng = match policy {
        GatePolicy::Sampled { seed } => rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        GatePolicy::Deterministic => rand_chacha::ChaCha8Rng::seed_from_u64(0),
    };
    let is_zero = |v: f64| v == 0.0 || v.abs() < threshold;
    let mut zeros = 0;
    let mut total = 0;
    for layer in net.layers() {
        let w = layer.weight.data();
        total += w.len();
        match &layer.gate {
            Some(gp) => {
                let mut gating = match policy {
                    GatePolicy::Sampled { .. } => Gating::Sampled(&mut rng),
                    GatePolicy::Deterministic => Gating::Deterministic,
                };
                let (z, _) = draw_with_grad(gp, &mut gating);
                zeros += w.iter().zip(&z).filter(|(w, z)| is_zero(*w * *z)).count();
            }
            None => zeros += w.iter().filter(|w| is_zero(**w)).count(),
        }
    }
    SparsityReport::from_counts(zeros, total)
}
