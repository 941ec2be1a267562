//! Locally reduced operators: contractions restricted to the coefficients of
//! each argument whose magnitude exceeds a threshold `ε`. The global basis is
//! unchanged and all `P` output coefficients are still written.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::tensors::{PairScratch, ProductTensors};

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedIndexSet {
    pub indices: Vec<usize>,
    pub eps: f64,
}

impl ReducedIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Indices of `0..p` not in the set.
    pub fn complement(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|j| !self.contains(*j)).collect()
    }
}

/// `{j : |a_j| > ε}` by a linear scan.
pub fn significant_indices(a: &[f64], eps: f64) -> ReducedIndexSet {
    let mut indices = Vec::new();
    significant_into(a, eps, &mut indices);
    ReducedIndexSet { indices, eps }
}

pub(crate) fn significant_into(a: &[f64], eps: f64, out: &mut Vec<usize>) {
    out.clear();
    out.extend(
        a.iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > eps)
            .map(|(j, _)| j),
    );
}

/// Copy of `a` with every coefficient outside `j` set to zero.
pub fn threshold(a: &[f64], j: &ReducedIndexSet) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for &i in &j.indices {
        out[i] = a[i];
    }
    out
}

pub fn reduced_mat_a(a: &[f64], ja: &ReducedIndexSet, t: &ProductTensors) -> (DMatrix<f64>, u64) {
    let mut m = DMatrix::zeros(t.len(), t.len());
    let macs = t.mat_a_into(a, &ja.indices, &mut m);
    (m, macs)
}

pub fn reduced_mat_b(
    a: &[f64],
    ja: &ReducedIndexSet,
    b: &[f64],
    jb: &ReducedIndexSet,
    t: &ProductTensors,
) -> Result<(DMatrix<f64>, u64)> {
    let mut m = DMatrix::zeros(t.len(), t.len());
    let macs = t.mat_b_into(
        a,
        &ja.indices,
        b,
        &jb.indices,
        &mut m,
        &mut PairScratch::default(),
    )?;
    Ok((m, macs))
}

/// `Â(a) b`: the product contracted over `ja × jb` only.
pub fn reduced_matvec_a(
    a: &[f64],
    ja: &ReducedIndexSet,
    b: &[f64],
    jb: &ReducedIndexSet,
    t: &ProductTensors,
) -> (Vec<f64>, u64) {
    let mut out = vec![0.0; t.len()];
    let macs = t.mul_into(
        a,
        &ja.indices,
        b,
        &jb.indices,
        &mut out,
        &mut PairScratch::default(),
    );
    (out, macs)
}

/// `B̂(a, b) c`: the triple product contracted over `ja × jb × jc` only.
pub fn reduced_matvec_b(
    a: &[f64],
    ja: &ReducedIndexSet,
    b: &[f64],
    jb: &ReducedIndexSet,
    c: &[f64],
    jc: &ReducedIndexSet,
    t: &ProductTensors,
) -> Result<(Vec<f64>, u64)> {
    let mut out = vec![0.0; t.len()];
    let macs = t.mul3_into(
        a,
        &ja.indices,
        b,
        &jb.indices,
        c,
        &jc.indices,
        &mut out,
        &mut PairScratch::default(),
    )?;
    Ok((out, macs))
}
