//! Singular value decomposition and rank-r compression of policy weights.
//!
//! The SVD is a one-sided Jacobi iteration: columns of the working matrix are
//! rotated pairwise until mutually orthogonal, at which point their norms are
//! the singular values. It is accurate to working precision and fast enough
//! for the few-hundred-wide matrices found in these policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates;
use crate::nn::{Activation, Matrix, Network};

pub const DEFAULT_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Thin SVD `a = u * diag(s) * v^T` with `s` sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        scaled_product(&self.u, &self.s, &self.v, self.s.len())
    }
}

/// `u[:, :r] * diag(s[:r]) * v[:, :r]^T`
fn scaled_product(u: &Matrix, s: &[f64], v: &Matrix, r: usize) -> Matrix {
    let (m, n) = (u.rows(), v.rows());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        for k in 0..r {
            let a = u.get(i, k) * s[k];
            if a == 0.0 {
                continue;
            }
            for j in 0..n {
                let cur = out.get(i, j);
                out.set(i, j, cur + a * v.get(j, k));
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// `tol` bounds the cosine between any two working columns at convergence.
/// Fails with [`Error::Numerical`] if that is not reached in 60 sweeps.
pub fn svd(a: &Matrix, tol: f64) -> Result<SvdResult> {
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("svd input must be finite".into()));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose(), tol)?;
        let mut out = SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let (m, n) = (a.rows(), a.cols());
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // Columns this small are numerically null; rotating them only churns noise.
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = false;
    let mut worst = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        worst = 0.0;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let cosine = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                worst = worst.max(cosine);
                if cosine <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical {
            msg: format!("jacobi svd did not converge in {MAX_SWEEPS} sweeps"),
            residual: worst,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms[order[0]];
    let cutoff = smax * f64::EPSILON * m as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &j in &order {
        let sigma = norms[j];
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; m]);
            s.push(0.0);
        }
        v_cols.push(v[j].clone());
    }
    // Null directions get an orthonormal completion.
    for &slot in &deficient {
        u_cols[slot] = complete_basis(&u_cols, slot, m);
    }

    let mut out = SvdResult {
        u: from_columns(&u_cols, m),
        s,
        v: from_columns(&v_cols, n),
    };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to every non-zero column except `slot`.
fn complete_basis(cols: &[Vec<f64>], slot: usize, m: usize) -> Vec<f64> {
    let mut best = vec![0.0; m];
    let mut best_norm = -1.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == slot || c.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let d = dot(&cand, c);
                cand.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        if nrm > best_norm {
            best_norm = nrm;
            best = cand;
        }
        if nrm > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Matrix {
    let k = cols.len();
    let mut out = Matrix::zeros(rows, k);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            out.set(i, j, x);
        }
    }
    out
}

/// First non-zero entry of every `u` column becomes non-negative.
fn fix_signs(r: &mut SvdResult) {
    for j in 0..r.s.len() {
        let lead = (0..r.u.rows()).map(|i| r.u.get(i, j)).find(|&x| x != 0.0);
        if lead.is_some_and(|x| x < 0.0) {
            for i in 0..r.u.rows() {
                r.u.set(i, j, -r.u.get(i, j));
            }
            for i in 0..r.v.rows() {
                r.v.set(i, j, -r.v.get(i, j));
            }
        }
    }
}

/// Rank-r factors of a weight matrix: `u (m x r)`, `s (r)`, `v (n x r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankWeight {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl LowRankWeight {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn out_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.v.rows()
    }

    pub fn reconstruct(&self) -> Matrix {
        scaled_product(&self.u, &self.s, &self.v, self.rank())
    }

    pub fn param_count(&self) -> usize {
        factored_param_count(self.out_dim(), self.in_dim(), self.rank())
    }

    /// `x (b x n) -> x v diag(s) u^T (b x m)` without forming the full matrix.
    fn apply(&self, x: &Matrix) -> Matrix {
        let r = self.rank();
        let (m, n) = (self.out_dim(), self.in_dim());
        let mut out = Matrix::zeros(x.rows(), m);
        let mut t = vec![0.0; r];
        for i in 0..x.rows() {
            let row = x.row(i);
            for (k, tk) in t.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * self.v.get(j, k);
                }
                *tk = acc * self.s[k];
            }
            for o in 0..m {
                let mut acc = 0.0;
                for (k, tk) in t.iter().enumerate() {
                    acc += self.u.get(o, k) * tk;
                }
                out.set(i, o, acc);
            }
        }
        out
    }
}

/// Keeps the `r` leading singular triplets.
pub fn truncate(svd: &SvdResult, r: usize) -> Result<LowRankWeight> {
    let max = svd.s.len();
    if r == 0 || r > max {
        return Err(Error::Rank { rank: r, max });
    }
    let take = |m: &Matrix| {
        let mut out = Matrix::zeros(m.rows(), r);
        for i in 0..m.rows() {
            for k in 0..r {
                out.set(i, k, m.get(i, k));
            }
        }
        out
    };
    Ok(LowRankWeight {
        u: take(&svd.u),
        s: svd.s[..r].to_vec(),
        v: take(&svd.v),
    })
}

/// Stored values for a rank-r factorization of an `m x n` matrix: `r (m + n + 1)`.
pub fn factored_param_count(m: usize, n: usize, r: usize) -> usize {
    r * (m + n + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredLayer {
    pub weight: LowRankWeight,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CompressedLayer {
    Dense {
        weight: Matrix,
        bias: Vec<f64>,
        activation: Activation,
    },
    Factored(FactoredLayer),
}

impl CompressedLayer {
    pub fn param_count(&self) -> usize {
        match self {
            CompressedLayer::Dense { weight, bias, .. } => weight.data().len() + bias.len(),
            CompressedLayer::Factored(f) => f.weight.param_count() + f.bias.len(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            CompressedLayer::Dense { weight, .. } => weight.cols(),
            CompressedLayer::Factored(f) => f.weight.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CompressedLayer::Dense { weight, .. } => weight.rows(),
            CompressedLayer::Factored(f) => f.weight.out_dim(),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            CompressedLayer::Dense { .. } => None,
            CompressedLayer::Factored(f) => Some(f.weight.rank()),
        }
    }

    /// Weight matrix this layer applies.
    pub fn effective_weight(&self) -> Matrix {
        match self {
            CompressedLayer::Dense { weight, .. } => weight.clone(),
            CompressedLayer::Factored(f) => f.weight.reconstruct(),
        }
    }
}

/// Gate-free network whose layers are either dense or low-rank factored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedNetwork {
    pub layers: Vec<CompressedLayer>,
}

impl CompressedNetwork {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CompressedLayer::param_count).sum()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(CompressedLayer::out_dim))
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let mut x = batch.clone();
        for layer in &self.layers {
            let (mut y, bias, act) = match layer {
                CompressedLayer::Dense {
                    weight,
                    bias,
                    activation,
                } => (x.matmul(&weight.transpose())?, bias, *activation),
                CompressedLayer::Factored(f) => (f.weight.apply(&x), &f.bias, f.activation),
            };
            let cols = y.cols();
            for (i, v) in y.data_mut().iter_mut().enumerate() {
                let s = *v + bias[i % cols];
                *v = match act {
                    Activation::Relu => s.max(0.0),
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                };
            }
            x = y;
        }
        Ok(x)
    }

    /// Lossless view of a (possibly gated) network, gates folded deterministically.
    pub fn from_network(net: &Network) -> CompressedNetwork {
        CompressedNetwork {
            layers: net
                .layers()
                .iter()
                .map(|l| CompressedLayer::Dense {
                    weight: folded_weight(l),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

fn folded_weight(layer: &crate::nn::Layer) -> Matrix {
    match &layer.gate {
        Some(gp) => layer.effective_weight(Some(&gates::deterministic_gate(gp))),
        None => layer.weight.clone(),
    }
}

/// Replaces each weight matrix by its rank-`min(r, m, n)` factorization when
/// that stores fewer values than the dense `m x n` matrix; otherwise the layer
/// stays dense. Gates are folded in deterministically first. Biases are kept.
pub fn decompose_network(net: &Network, r: usize) -> Result<CompressedNetwork> {
    if r == 0 {
        return Err(Error::Rank { rank: 0, max: usize::MAX });
    }
    if net.layers().is_empty() {
        return Err(Error::InvalidInput("network has no layers".into()));
    }
    let mut layers = Vec::with_capacity(net.layers().len());
    for l in net.layers() {
        let w = folded_weight(l);
        let (m, n) = (w.rows(), w.cols());
        let rank = r.min(m.min(n));
        if factored_param_count(m, n, rank) < m * n {
            let full = svd(&w, DEFAULT_TOL)?;
            layers.push(CompressedLayer::Factored(FactoredLayer {
                weight: truncate(&full, rank)?,
                bias: l.bias.clone(),
                activation: l.activation,
            }));
        } else {
            layers.push(CompressedLayer::Dense {
                weight: w,
                bias: l.bias.clone(),
                activation: l.activation,
            });
        }
    }
    Ok(CompressedNetwork { layers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweepRow {
    pub rank: usize,
    pub params_dense: usize,
    pub params_factored: usize,
    pub size_decrease_pct: f64,
    pub eval_reward_mean: f64,
    pub eval_reward_std: f64,
}

pub const RANK_SWEEP_HEADER: &str =
    "rank,params_dense,params_factored,size_decrease_pct,eval_reward_mean,eval_reward_std";

impl RankSweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.rank,
            self.params_dense,
            self.params_factored,
            self.size_decrease_pct,
            self.eval_reward_mean,
            self.eval_reward_std
        )
    }
}

/// Decomposes `net` at every rank and scores each result with `evaluate`,
/// which returns the (mean, std) evaluation return.
pub fn rank_sweep<F>(net: &Network, ranks: &[usize], mut evaluate: F) -> Result<Vec<RankSweepRow>>
where
    F: FnMut(&CompressedNetwork) -> Result<(f64, f64)>,
{
    let dense = net.param_count();
    ranks
        .iter()
        .map(|&rank| {
            let compressed = decompose_network(net, rank)?;
            let factored = compressed.param_count();
            let (mean, std) = evaluate(&compressed)?;
            Ok(RankSweepRow {
                rank,
                params_dense: dense,
                params_factored: factored,
                size_decrease_pct: 100.0 * (dense as f64 - factored as f64) / dense as f64,
                eval_reward_mean: mean,
                eval_reward_std: std,
            })
        })
        .collect()
}
