//! Label spreading over the Jaccard affinity graph and confidence gating of
//! the resulting pseudo-labels.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::normalized_entropy;
use crate::similarity::AffinityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadParams {
    /// Weight on propagated mass; `1 - alpha` clamps to the initial labels.
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Similarities below this are dropped from the graph.
    pub sparsify_below: f64,
}

impl Default for SpreadParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            tol: 1e-6,
            max_iter: 1000,
            sparsify_below: 0.01,
        }
    }
}

/// Symmetrically normalized graph `D^-1/2 W D^-1/2` in CSR form, with the
/// diagonal of `W` zeroed.
#[derive(Debug, Clone)]
pub struct SpreadGraph {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl SpreadGraph {
    pub fn new(affinity: &AffinityMatrix, sparsify_below: f64) -> Self {
        let n = affinity.len();
        let mut degree = vec![0.0; n];
        for (i, d) in degree.iter_mut().enumerate() {
            *d = affinity
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &w)| j != i && w >= sparsify_below && w > 0.0)
                .map(|(_, &w)| w)
                .sum();
        }
        let inv_sqrt: Vec<f64> = degree
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for i in 0..n {
            for (j, &w) in affinity.row(i).iter().enumerate() {
                if j != i && w >= sparsify_below && w > 0.0 {
                    indices.push(j as u32);
                    weights.push(inv_sqrt[i] * w * inv_sqrt[j]);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            indptr,
            indices,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn degree_is_zero(&self, i: usize) -> bool {
        self.indptr[i] == self.indptr[i + 1]
    }
}

/// Row-normalized class distributions `(P(0), P(1))` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub probs: Vec<[f64; 2]>,
    /// Nodes that received no label mass and were set to uniform.
    pub uniform_rows: Vec<usize>,
    pub iterations: usize,
    /// Max-abs change per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

pub fn spread(affinity: &AffinityMatrix, labels: &[(usize, u8)], params: &SpreadParams) -> Result<SoftLabels> {
    let graph = SpreadGraph::new(affinity, params.sparsify_below);
    spread_on(&graph, labels, params)
}

/// Iterates `F <- alpha * S * F + (1 - alpha) * Y` to a fixed point.
pub fn spread_on(graph: &SpreadGraph, labels: &[(usize, u8)], params: &SpreadParams) -> Result<SoftLabels> {
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {} not in (0,1)", params.alpha)));
    }
    let n = graph.len();
    let mut y = vec![[0.0f64; 2]; n];
    for &(i, l) in labels {
        if i >= n {
            return Err(Error::InvalidConfig(format!("labeled index {i} outside graph of {n}")));
        }
        y[i] = [0.0; 2];
        y[i][(l != 0) as usize] = 1.0;
    }
    let clamp = 1.0 - params.alpha;
    let mut f = y.clone();
    let mut next = vec![[0.0f64; 2]; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let (mut a, mut b) = (0.0, 0.0);
            for k in graph.indptr[i]..graph.indptr[i + 1] {
                let w = graph.weights[k];
                let row = &f[graph.indices[k] as usize];
                a += w * row[0];
                b += w * row[1];
            }
            let v = [params.alpha * a + clamp * y[i][0], params.alpha * b + clamp * y[i][1]];
            delta = delta.max((v[0] - f[i][0]).abs()).max((v[1] - f[i][1]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut f, &mut next);
        residuals.push(delta);
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    let mut uniform_rows = Vec::new();
    let probs = f
        .into_iter()
        .enumerate()
        .map(|(i, [a, b])| {
            let s = a + b;
            if s > 0.0 {
                let p1 = b / s;
                [1.0 - p1, p1]
            } else {
                uniform_rows.push(i);
                [0.5, 0.5]
            }
        })
        .collect();
    Ok(SoftLabels {
        probs,
        uniform_rows,
        iterations,
        residuals,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub index: usize,
    pub label: u8,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
    pub gate: f64,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for e in &self.entries {
            c[e.label as usize] += 1;
        }
        c
    }
}

/// Keeps unlabeled nodes whose normalized entropy is strictly below `gate`;
/// the label is the argmax class (ties go to class 0).
pub fn gate_pseudo_labels(soft: &SoftLabels, labeled: &HashSet<usize>, gate: f64) -> PseudoLabelSet {
    let entries = soft
        .probs
        .iter()
        .enumerate()
        .filter(|(i, _)| !labeled.contains(i))
        .filter_map(|(i, p)| {
            let h = normalized_entropy(p).ok()?;
            (h < gate).then(|| PseudoLabel {
                index: i,
                label: (p[1] > p[0]) as u8,
                probs: *p,
            })
        })
        .collect();
    PseudoLabelSet { entries, gate }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soft(rows: Vec<[f64; 2]>) -> SoftLabels {
        SoftLabels {
            probs: rows,
            uniform_rows: vec![],
            iterations: 0,
            residuals: vec![],
            converged: true,
        }
    }

    #[test]
    fn connected_pair_takes_label() {
        let a = AffinityMatrix::from_dense(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = spread(&a, &[(0, 1)], &SpreadParams::default()).unwrap();
        assert!(s.probs[1][1] > 0.99);
        assert!(s.converged);
    }

    #[test]
    fn disconnected_node_is_uniform() {
        #[rustfmt::skip]
        let a = AffinityMatrix::from_dense(3, vec![
            1.0, 0.5, 0.0,
            0.5, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]).unwrap();
        let s = spread(&a, &[(0, 1)], &SpreadParams::default()).unwrap();
        assert_eq!(s.probs[2], [0.5, 0.5]);
        assert_eq!(s.uniform_rows, vec![2]);
    }

    #[test]
    fn symmetric_path_midpoint() {
        #[rustfmt::skip]
        let a = AffinityMatrix::from_dense(3, vec![
            1.0, 0.5, 0.0,
            0.5, 1.0, 0.5,
            0.0, 0.5, 1.0,
        ]).unwrap();
        let s = spread(&a, &[(0, 1), (2, 0)], &SpreadParams::default()).unwrap();
        assert!((s.probs[1][0] - 0.5).abs() < 1e-9);
        assert!((s.probs[1][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn no_labels_is_an_error() {
        let a = AffinityMatrix::from_dense(1, vec![1.0]).unwrap();
        assert!(matches!(spread(&a, &[], &SpreadParams::default()), Err(Error::NoLabels)));
    }

    #[test]
    fn gate_examples() {
        let s = soft(vec![[1.0, 0.0], [0.5, 0.5], [0.9, 0.1], [0.6, 0.4]]);
        let p = gate_pseudo_labels(&s, &HashSet::new(), 0.6);
        let kept: Vec<usize> = p.entries.iter().map(|e| e.index).collect();
        assert_eq!(kept, vec![0, 2]);
        // Fully uncertain rows never pass, even at the loosest gate.
        let p = gate_pseudo_labels(&s, &HashSet::new(), 1.0);
        assert!(p.entries.iter().all(|e| e.index != 1));
    }

    #[test]
    fn gate_skips_labeled() {
        let s = soft(vec![[1.0, 0.0], [0.0, 1.0]]);
        let p = gate_pseudo_labels(&s, &HashSet::from([0]), 0.6);
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].index, 1);
        assert_eq!(p.entries[0].label, 1);
    }
}
