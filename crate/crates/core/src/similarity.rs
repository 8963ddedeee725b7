//! Jaccard kernels over binary item vectors.

use rayon::prelude::*;

use crate::corpus::ItemVector;
use crate::error::{Error, Result};

fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Jaccard similarity of two sorted bit lists. Two empty sets are identical.
pub fn jaccard_bits(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn jaccard(a: &ItemVector, b: &ItemVector) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::UniverseMismatch {
            expected: a.dim,
            actual: b.dim,
        });
    }
    Ok(jaccard_bits(&a.bits, &b.bits))
}

pub fn jaccard_distance(a: &ItemVector, b: &ItemVector) -> Result<f64> {
    jaccard(a, b).map(|s| 1.0 - s)
}

/// Anything that can report pairwise distances between `len()` points.
pub trait Dissimilarity: Sync {
    fn len(&self) -> usize;
    fn distance(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense symmetric matrix of pairwise Jaccard similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps a row-major square matrix. Used by tests and callers that bring
    /// their own kernel.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidConfig(format!(
                "affinity needs {} entries, got {}",
                n * n,
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let total: f64 = self.values.iter().sum::<f64>() - self.n as f64;
        total / (self.n * (self.n - 1)) as f64
    }
}

impl Dissimilarity for AffinityMatrix {
    fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        1.0 - self.get(i, j)
    }
}

/// Computes the full affinity matrix; rows are built in parallel.
pub fn affinity(items: &[&ItemVector]) -> Result<AffinityMatrix> {
    let first = items.first().ok_or(Error::EmptyInput)?;
    if let Some(bad) = items.iter().find(|it| it.dim != first.dim) {
        return Err(Error::UniverseMismatch {
            expected: first.dim,
            actual: bad.dim,
        });
    }
    let n = items.len();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = &items[i].bits;
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if i == j { 1.0 } else { jaccard_bits(a, &items[j].bits) };
        }
    });
    Ok(AffinityMatrix { n, values })
}

/// Jaccard distances computed on demand; for point sets too large to hold a
/// dense matrix.
pub struct OnTheFly<'a> {
    items: Vec<&'a ItemVector>,
}

impl<'a> OnTheFly<'a> {
    pub fn new(items: Vec<&'a ItemVector>) -> Self {
        Self { items }
    }
}

impl Dissimilarity for OnTheFly<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            1.0 - jaccard_bits(&self.items[i].bits, &self.items[j].bits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(bits: &[usize]) -> ItemVector {
        ItemVector::new("x", bits.iter().copied(), 8).unwrap()
    }

    #[test]
    fn identical_disjoint_and_partial() {
        assert_eq!(jaccard(&item(&[0, 1]), &item(&[0, 1])).unwrap(), 1.0);
        assert_eq!(jaccard(&item(&[0]), &item(&[1])).unwrap(), 0.0);
        assert!((jaccard(&item(&[0, 1]), &item(&[1, 2])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_universe() {
        let a = ItemVector::new("a", [0], 3).unwrap();
        let b = ItemVector::new("b", [0], 4).unwrap();
        assert!(matches!(jaccard(&a, &b), Err(Error::UniverseMismatch { .. })));
    }

    #[test]
    fn single_item_matrix() {
        let a = item(&[2]);
        let m = affinity(&[&a]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn disjoint_items_give_identity() {
        let (a, b, c) = (item(&[0]), item(&[1, 2]), item(&[3]));
        let m = affinity(&[&a, &b, &c]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }
}
