//! Weighted, feature-masked, L2-regularized logistic regression used as the
//! interpretable preference model.
//!
//! The objective over unmasked coefficients `w` and intercept `b` is
//!
//! ```text
//! J(w, b) = 0.5 * |w|^2 + C * sum_i s_i * (log(1 + exp(z_i)) - y_i * z_i),
//! z_i = b + sum_{d in x_i, d unmasked} w_d
//! ```
//!
//! where `s_i` is the row weight and `C` the inverse regularization strength.
//! The intercept is not regularized. Minimization is deterministic L-BFGS with
//! an Armijo backtracking line search started from the zero vector, so the
//! loss never increases between iterations.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ItemVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    User,
    Pseudo,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub bits: Vec<u32>,
    pub label: u8,
    pub weight: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub dim: usize,
    pub rows: Vec<TrainingRow>,
    pub mask: BTreeSet<usize>,
}

impl TrainingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            mask: BTreeSet::new(),
        }
    }

    pub fn push_item(&mut self, item: &ItemVector, label: u8, weight: f64, origin: Origin) {
        debug_assert_eq!(item.dim, self.dim);
        self.rows.push(TrainingRow {
            bits: item.bits.clone(),
            label,
            weight,
            origin,
        });
    }

    /// Adds a one-hot row for a single dimension.
    pub fn push_one_hot(&mut self, dim: usize, label: u8, weight: f64, origin: Origin) {
        self.rows.push(TrainingRow {
            bits: vec![dim as u32],
            label,
            weight,
            origin,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.rows {
            c[(r.label != 0) as usize] += 1;
        }
        c
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        for r in &self.rows {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!("row weight {} must be positive and finite", r.weight)));
            }
            if let Some(&b) = r.bits.last() {
                if b as usize >= self.dim {
                    return Err(Error::UniverseMismatch {
                        expected: self.dim,
                        actual: b as usize + 1,
                    });
                }
            }
        }
        let counts = self.class_counts();
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Inverse L2 strength: larger means weaker regularization.
    pub c: f64,
    /// Stop once the gradient max-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    /// Universe fingerprint, or empty when unknown.
    pub universe: String,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Sorted masked dimensions; their coefficients are exactly zero.
    pub mask: Vec<usize>,
    pub epoch: usize,
    /// True for the majority-label fallback used when training data is
    /// single-class.
    #[serde(default)]
    pub stub: bool,
}

impl PreferenceModel {
    pub fn zero(dim: usize) -> Self {
        Self {
            universe: String::new(),
            coefficients: vec![0.0; dim],
            intercept: 0.0,
            mask: Vec::new(),
            epoch: 0,
            stub: false,
        }
    }

    /// Constant model predicting the Laplace-smoothed label prior.
    pub fn majority_stub(dim: usize, mask: &BTreeSet<usize>, counts: [usize; 2]) -> Self {
        Self {
            universe: String::new(),
            coefficients: vec![0.0; dim],
            intercept: ((counts[1] as f64 + 1.0) / (counts[0] as f64 + 1.0)).ln(),
            mask: mask.iter().copied().collect(),
            epoch: 0,
            stub: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_masked(&self, dim: usize) -> bool {
        self.mask.binary_search(&dim).is_ok()
    }

    pub fn coefficient(&self, dim: usize) -> f64 {
        self.coefficients[dim]
    }

    fn logit_bits(&self, bits: &[u32]) -> f64 {
        // Masked coefficients are exactly +0.0, so they never perturb the sum.
        self.intercept + bits.iter().map(|&d| self.coefficients[d as usize]).sum::<f64>()
    }

    /// `(P(dislike), P(like))`.
    pub fn predict_proba(&self, x: &ItemVector) -> Result<[f64; 2]> {
        if x.dim != self.dim() {
            return Err(Error::UniverseMismatch {
                expected: self.dim(),
                actual: x.dim,
            });
        }
        let p = sigmoid(self.logit_bits(&x.bits)).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        Ok([1.0 - p, p])
    }

    pub fn predict_label(&self, x: &ItemVector) -> Result<u8> {
        Ok((self.predict_proba(x)?[1] > 0.5) as u8)
    }

    /// Flat JSON record used for snapshots and event logs.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn snapshot_hash(&self) -> String {
        hex::encode(Sha256::digest(self.snapshot().as_bytes()))
    }
}

/// Item positions ordered by descending `P(like)`; ties keep input order.
pub fn rank(model: &PreferenceModel, items: &[&ItemVector]) -> Result<Vec<usize>> {
    let scores = items
        .iter()
        .map(|x| model.predict_proba(x).map(|p| p[1]))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub grad_max_norm: f64,
    pub converged: bool,
}

pub fn train(data: &TrainingSet, params: &TrainParams) -> Result<PreferenceModel> {
    train_with_report(data, params).map(|(m, _)| m)
}

pub fn train_with_report(data: &TrainingSet, params: &TrainParams) -> Result<(PreferenceModel, TrainReport)> {
    data.validate()?;
    if !(params.c > 0.0) {
        return Err(Error::InvalidConfig(format!("C must be positive, got {}", params.c)));
    }
    // Optimize only over unmasked dimensions that occur in some row; every
    // other coefficient has its optimum at zero.
    let mut local = vec![usize::MAX; data.dim];
    let mut active = Vec::new();
    for r in &data.rows {
        for &b in &r.bits {
            let d = b as usize;
            if local[d] == usize::MAX && !data.mask.contains(&d) {
                local[d] = active.len();
                active.push(d);
            }
        }
    }
    let rows: Vec<Row> = data
        .rows
        .iter()
        .map(|r| Row {
            bits: r
                .bits
                .iter()
                .filter_map(|&b| {
                    let l = local[b as usize];
                    (l != usize::MAX).then_some(l as u32)
                })
                .collect(),
            y: (r.label != 0) as u8 as f64,
            w: r.weight * params.c,
        })
        .collect();
    let problem = Problem { rows, p: active.len() };
    let (x, report) = lbfgs(&problem, params.tol, params.max_iter);

    let mut coefficients = vec![0.0; data.dim];
    for (l, &d) in active.iter().enumerate() {
        coefficients[d] = x[l];
    }
    Ok((
        PreferenceModel {
            universe: String::new(),
            coefficients,
            intercept: x[problem.p],
            mask: data.mask.iter().copied().collect(),
            epoch: 0,
            stub: false,
        },
        report,
    ))
}

/// Objective value at the given full-dimensional parameters.
pub fn loss(data: &TrainingSet, params: &TrainParams, coefficients: &[f64], intercept: f64) -> f64 {
    loss_and_gradient(data, params, coefficients, intercept).0
}

/// Objective value and analytic gradient `(dJ/dw, dJ/db)`; masked coordinates
/// have zero gradient.
pub fn loss_and_gradient(
    data: &TrainingSet,
    params: &TrainParams,
    coefficients: &[f64],
    intercept: f64,
) -> (f64, Vec<f64>, f64) {
    let mut f = 0.0;
    let mut g = vec![0.0; data.dim];
    for d in 0..data.dim {
        if !data.mask.contains(&d) {
            f += 0.5 * coefficients[d] * coefficients[d];
            g[d] = coefficients[d];
        }
    }
    let mut gb = 0.0;
    for r in &data.rows {
        let bits: Vec<usize> = r
            .bits
            .iter()
            .map(|&b| b as usize)
            .filter(|d| !data.mask.contains(d))
            .collect();
        let z = intercept + bits.iter().map(|&d| coefficients[d]).sum::<f64>();
        let y = (r.label != 0) as u8 as f64;
        let w = r.weight * params.c;
        f += w * (softplus(z) - y * z);
        let resid = w * (sigmoid(z) - y);
        gb += resid;
        for d in bits {
            g[d] += resid;
        }
    }
    (f, g, gb)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Row {
    bits: Vec<u32>,
    y: f64,
    /// Row weight times C.
    w: f64,
}

struct Problem {
    rows: Vec<Row>,
    /// Number of coefficients; the intercept sits at index `p`.
    p: usize,
}

impl Problem {
    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let p = self.p;
        let mut f = 0.0;
        for d in 0..p {
            f += 0.5 * x[d] * x[d];
            g[d] = x[d];
        }
        g[p] = 0.0;
        for r in &self.rows {
            let z = x[p] + r.bits.iter().map(|&b| x[b as usize]).sum::<f64>();
            f += r.w * (softplus(z) - r.y * z);
            let resid = r.w * (sigmoid(z) - r.y);
            g[p] += resid;
            for &b in &r.bits {
                g[b as usize] += resid;
            }
        }
        f
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

const MEMORY: usize = 10;

fn lbfgs(problem: &Problem, tol: f64, max_iter: usize) -> (Vec<f64>, TrainReport) {
    let n = problem.p + 1;
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut f = problem.eval(&x, &mut g);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = max_abs(&g) < tol;

    while !converged && iterations < max_iter {
        iterations += 1;
        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut step = if history.is_empty() {
            (1.0 / max_abs(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = problem.eval(&x_new, &mut g_new);
            if f_new <= f + 1e-4 * step * slope {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if history.len() == MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(f);
        converged = max_abs(&g) < tol;
    }
    let report = TrainReport {
        iterations,
        loss_trace: trace,
        grad_max_norm: max_abs(&g),
        converged,
    };
    (x, report)
}
