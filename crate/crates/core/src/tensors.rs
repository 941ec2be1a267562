//! Sparse triple and quadruple product tensors `⟨ψ_iψ_jψ_k⟩`,
//! `⟨ψ_hψ_iψ_jψ_k⟩` and the pseudo-spectral product operators built on them.
//!
//! Every operator takes explicit index lists for its vector arguments. The
//! full operators pass `0..P`; the locally reduced ones in [`crate::reduced`]
//! pass the significant indices only. Contractions report the number of
//! multiply-accumulate operations they performed.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::{binomial, MwBasis};
use crate::error::{Result, SgError};
use crate::quadrature::QuadratureRule;

pub const DEFAULT_DROP_TOL: f64 = 1e-14;

/// Default bound on both the dense accumulation buffer and the stored
/// quadruple entries.
pub const DEFAULT_QUAD_CAP: usize = 16_000_000;

/// The deterministic unit vector `(1, 0, …, 0)`.
pub fn e1(p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[0] = 1.0;
    v
}

pub fn mean(c: &[f64]) -> f64 {
    c[0]
}

pub fn variance(c: &[f64]) -> f64 {
    c[1..].iter().map(|x| x * x).sum()
}

pub fn std_dev(c: &[f64]) -> f64 {
    variance(c).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadPolicy {
    /// Fail with [`SgError::TensorCapExceeded`] if the quad tensor is too large.
    Required,
    /// Build it when it fits under the cap, otherwise leave it out.
    IfWithinCap,
    Skip,
}

#[derive(Debug, Clone, Copy)]
pub struct TensorOptions {
    pub drop_tol: f64,
    pub quad_cap: usize,
    pub quad: QuadPolicy,
}

impl Default for TensorOptions {
    fn default() -> Self {
        TensorOptions {
            drop_tol: DEFAULT_DROP_TOL,
            quad_cap: DEFAULT_QUAD_CAP,
            quad: QuadPolicy::IfWithinCap,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorStats {
    pub basis_size: usize,
    pub quadrature_nodes: usize,
    pub triple_nonzeros: usize,
    pub quad_nonzeros: Option<usize>,
    pub quad_required_entries: usize,
    pub build_seconds: f64,
}

/// Row-compressed lists of `(j, k, value)` with `j ≤ k`.
#[derive(Debug, Clone, Default)]
struct Slices {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32, f64)>,
    /// `entries` with `(j, k)` replaced by `pair_id(j, k)`.
    packed: Vec<(u32, f64)>,
}

impl Slices {
    fn from_sorted(rows: usize, mut items: Vec<(usize, u32, u32, f64)>) -> Self {
        items.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        items.dedup_by(|a, b| (a.0, a.1, a.2) == (b.0, b.1, b.2));
        let mut offsets = vec![0usize; rows + 1];
        for it in &items {
            offsets[it.0 + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let entries: Vec<(u32, u32, f64)> =
            items.into_iter().map(|(_, j, k, v)| (j, k, v)).collect();
        let packed = entries
            .iter()
            .map(|&(j, k, v)| (pair_id(j as usize, k as usize) as u32, v))
            .collect();
        Slices {
            offsets,
            entries,
            packed,
        }
    }

    #[inline]
    fn row(&self, r: usize) -> &[(u32, u32, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }

    #[inline]
    fn packed_row(&self, r: usize) -> &[(u32, f64)] {
        &self.packed[self.offsets[r]..self.offsets[r + 1]]
    }

    fn lookup(&self, r: usize, j: usize, k: usize) -> f64 {
        let (j, k) = if j <= k { (j, k) } else { (k, j) };
        let row = self.row(r);
        row.binary_search_by(|e| (e.0 as usize, e.1 as usize).cmp(&(j, k)))
            .map_or(0.0, |pos| row[pos].2)
    }
}

/// Packed index of the unordered pair `h ≤ i`.
#[inline]
pub(crate) fn pair_id(h: usize, i: usize) -> usize {
    let (h, i) = if h <= i { (h, i) } else { (i, h) };
    i * (i + 1) / 2 + h
}

#[derive(Debug, Clone)]
pub struct ProductTensors {
    p: usize,
    drop_tol: f64,
    /// `triple_by_first[i] = {(j, k, T_ijk) : j ≤ k}`
    triple_by_first: Slices,
    /// `triple_by_pair[(i ≤ j)] = {(k, k, T_ijk)}`
    triple_by_pair: Slices,
    /// `quad_by_pair[(h ≤ i)] = {(j, k, Q_hijk) : j ≤ k}`
    quad_by_pair: Option<Slices>,
    triple_nnz: usize,
    quad_nnz: Option<usize>,
    stats: TensorStats,
}

impl ProductTensors {
    pub fn build(basis: &MwBasis, rule: &QuadratureRule, opts: TensorOptions) -> Result<Self> {
        let start = Instant::now();
        let p = basis.len();
        let tri_len = binomial(p + 2, 3);
        let quad_len = binomial(p + 3, 4);
        let want_quad = match opts.quad {
            QuadPolicy::Skip => false,
            QuadPolicy::IfWithinCap => quad_len <= opts.quad_cap,
            QuadPolicy::Required => {
                if quad_len > opts.quad_cap {
                    return Err(SgError::TensorCapExceeded {
                        tensor: "quadruple",
                        required: quad_len,
                        available: opts.quad_cap,
                    });
                }
                true
            }
        };

        // rank of a sorted tuple: C(a,1) + C(b+1,2) + C(c+2,3) (+ C(d+3,4))
        let c2: Vec<usize> = (0..p + 1).map(|b| binomial(b + 1, 2)).collect();
        let c3: Vec<usize> = (0..p + 1).map(|c| binomial(c + 2, 3)).collect();
        let c4: Vec<usize> = (0..p + 1).map(|d| binomial(d + 3, 4)).collect();

        let mut tri = vec![0.0; tri_len];
        let mut quad = if want_quad {
            vec![0.0; quad_len]
        } else {
            Vec::new()
        };
        let mut vals = vec![0.0; p];
        let mut nz: Vec<(usize, f64)> = Vec::with_capacity(p);
        for (xi, w) in rule.iter() {
            basis.eval_all(xi, &mut vals);
            nz.clear();
            nz.extend(
                vals.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(m, v)| (m, *v)),
            );
            let n = nz.len();
            for a in 0..n {
                let (ia, va) = nz[a];
                for b in a..n {
                    let (ib, vb) = nz[b];
                    let wab = w * va * vb;
                    for c in b..n {
                        let (ic, vc) = nz[c];
                        let wabc = wab * vc;
                        tri[ia + c2[ib] + c3[ic]] += wabc;
                        if want_quad {
                            let base = ia + c2[ib] + c3[ic];
                            for &(id, vd) in &nz[c..] {
                                quad[base + c4[id]] += wabc * vd;
                            }
                        }
                    }
                }
            }
        }

        let mut tri_items = Vec::new();
        let mut tri_pair_items = Vec::new();
        let mut triple_nnz = 0;
        for k in 0..p {
            for j in 0..=k {
                for i in 0..=j {
                    let v = tri[i + c2[j] + c3[k]];
                    if v.abs() <= opts.drop_tol {
                        continue;
                    }
                    triple_nnz += 1;
                    for (r, s, t) in [(i, j, k), (j, i, k), (k, i, j)] {
                        tri_items.push((r, s as u32, t as u32, v));
                    }
                    for (r, s, t) in [(i, j, k), (i, k, j), (j, k, i)] {
                        tri_pair_items.push((pair_id(r, s), t as u32, t as u32, v));
                    }
                }
            }
        }
        drop(tri);
        let triple_by_first = Slices::from_sorted(p, tri_items);
        let triple_by_pair = Slices::from_sorted(p * (p + 1) / 2, tri_pair_items);

        let (quad_by_pair, quad_nnz) = if want_quad {
            let mut items = Vec::new();
            let mut count = 0usize;
            for l in 0..p {
                for k in 0..=l {
                    for j in 0..=k {
                        let base = c2[j] + c3[k] + c4[l];
                        for i in 0..=j {
                            let v = quad[i + base];
                            if v.abs() <= opts.drop_tol {
                                continue;
                            }
                            count += 1;
                            let t = [i, j, k, l];
                            for (x, y, z, q) in [
                                (0, 1, 2, 3),
                                (0, 2, 1, 3),
                                (0, 3, 1, 2),
                                (1, 2, 0, 3),
                                (1, 3, 0, 2),
                                (2, 3, 0, 1),
                            ] {
                                items.push((pair_id(t[x], t[y]), t[z] as u32, t[q] as u32, v));
                            }
                        }
                    }
                }
            }
            drop(quad);
            if count > opts.quad_cap {
                if opts.quad == QuadPolicy::Required {
                    return Err(SgError::TensorCapExceeded {
                        tensor: "quadruple",
                        required: count,
                        available: opts.quad_cap,
                    });
                }
                (None, None)
            } else {
                (
                    Some(Slices::from_sorted(p * (p + 1) / 2, items)),
                    Some(count),
                )
            }
        } else {
            (None, None)
        };

        let stats = TensorStats {
            basis_size: p,
            quadrature_nodes: rule.len(),
            triple_nonzeros: triple_nnz,
            quad_nonzeros: quad_nnz,
            quad_required_entries: quad_len,
            build_seconds: start.elapsed().as_secs_f64(),
        };
        Ok(ProductTensors {
            p,
            drop_tol: opts.drop_tol,
            triple_by_first,
            triple_by_pair,
            quad_by_pair,
            triple_nnz,
            quad_nnz,
            stats,
        })
    }

    /// Builds the basis quadrature and tensors with default options.
    pub fn for_basis(basis: &MwBasis) -> Result<Self> {
        Self::build(basis, &basis.build_quadrature(), TensorOptions::default())
    }

    pub fn len(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.p == 0
    }

    pub fn drop_tol(&self) -> f64 {
        self.drop_tol
    }

    pub fn stats(&self) -> &TensorStats {
        &self.stats
    }

    pub fn triple_nonzeros(&self) -> usize {
        self.triple_nnz
    }

    pub fn quad_nonzeros(&self) -> Option<usize> {
        self.quad_nnz
    }

    pub fn has_quad(&self) -> bool {
        self.quad_by_pair.is_some()
    }

    pub fn triple(&self, i: usize, j: usize, k: usize) -> f64 {
        self.triple_by_first.lookup(i, j, k)
    }

    pub fn quad(&self, h: usize, i: usize, j: usize, k: usize) -> Result<f64> {
        let q = self
            .quad_by_pair
            .as_ref()
            .ok_or(SgError::QuadTensorUnavailable)?;
        Ok(q.lookup(pair_id(h, i), j, k))
    }

    /// Largest `Σ_{j,k} |T_ijk|` over the slices `i` in `dropped`, the
    /// per-unit error bound of dropping those coefficients from `A(a)`.
    pub fn triple_slice_bound(&self, dropped: &[usize]) -> f64 {
        dropped
            .iter()
            .map(|&i| {
                self.triple_by_first
                    .row(i)
                    .iter()
                    .map(|(j, k, v)| if j == k { v.abs() } else { 2.0 * v.abs() })
                    .sum::<f64>()
            })
            .sum()
    }

    /// `out += Σ_{i∈ia} a_i T_{i··}`; returns the MAC count.
    pub fn mat_a_into(&self, a: &[f64], ia: &[usize], out: &mut DMatrix<f64>) -> u64 {
        let p = self.p;
        let m = out.as_mut_slice();
        let mut macs = 0u64;
        for &i in ia {
            let ai = a[i];
            let row = self.triple_by_first.row(i);
            macs += row.len() as u64;
            for &(j, k, v) in row {
                let (j, k) = (j as usize, k as usize);
                let x = ai * v;
                m[j + k * p] += x;
                if j != k {
                    m[k + j * p] += x;
                }
            }
        }
        macs
    }

    /// `out += B(a, b)` restricted to `h ∈ ia`, `i ∈ ib`; returns the MAC count.
    pub fn mat_b_into(
        &self,
        a: &[f64],
        ia: &[usize],
        b: &[f64],
        ib: &[usize],
        out: &mut DMatrix<f64>,
        scratch: &mut PairScratch,
    ) -> Result<u64> {
        let q = self
            .quad_by_pair
            .as_ref()
            .ok_or(SgError::QuadTensorUnavailable)?;
        let p = self.p;
        let mut macs = scratch.gather(a, ia, b, ib, p);
        // accumulate the upper triangle packed, then symmetrize once
        let PairScratch { pairs, tri, .. } = scratch;
        tri.clear();
        tri.resize(p * (p + 1) / 2, 0.0);
        for &(pid, c) in pairs.iter() {
            let row = q.packed_row(pid);
            macs += row.len() as u64;
            for &(t, v) in row {
                tri[t as usize] += c * v;
            }
        }
        let m = out.as_mut_slice();
        for k in 0..p {
            let base = k * (k + 1) / 2;
            for j in 0..k {
                let x = tri[base + j];
                m[j + k * p] += x;
                m[k + j * p] += x;
            }
            m[k + k * p] += tri[base + k];
        }
        Ok(macs)
    }

    /// `out += A(a) b` contracting `i ∈ ia`, `j ∈ ib`; returns the MAC count.
    pub fn mul_into(
        &self,
        a: &[f64],
        ia: &[usize],
        b: &[f64],
        ib: &[usize],
        out: &mut [f64],
        scratch: &mut PairScratch,
    ) -> u64 {
        let mut macs = scratch.gather(a, ia, b, ib, self.p);
        for &(pid, c) in &scratch.pairs {
            let row = self.triple_by_pair.row(pid);
            macs += row.len() as u64;
            for &(k, _, v) in row {
                out[k as usize] += c * v;
            }
        }
        macs
    }

    /// `out += B(a, b) c` contracting `h ∈ ia`, `i ∈ ib`, `j ∈ ic`.
    #[allow(clippy::too_many_arguments)]
    pub fn mul3_into(
        &self,
        a: &[f64],
        ia: &[usize],
        b: &[f64],
        ib: &[usize],
        c: &[f64],
        ic: &[usize],
        out: &mut [f64],
        scratch: &mut PairScratch,
    ) -> Result<u64> {
        let q = self
            .quad_by_pair
            .as_ref()
            .ok_or(SgError::QuadTensorUnavailable)?;
        let mut macs = scratch.gather(a, ia, b, ib, self.p);
        let keep = &mut scratch.mask;
        keep.clear();
        keep.resize(self.p, false);
        for &j in ic {
            keep[j] = true;
        }
        for &(pid, coef) in &scratch.pairs {
            for &(j, k, v) in q.row(pid) {
                let (j, k) = (j as usize, k as usize);
                if keep[j] {
                    out[k] += coef * v * c[j];
                    macs += 1;
                }
                if j != k && keep[k] {
                    out[j] += coef * v * c[k];
                    macs += 1;
                }
            }
        }
        Ok(macs)
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.p).collect()
    }

    /// `A(a)`.
    pub fn mat_a(&self, a: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        self.mat_a_into(a, &self.all_indices(), &mut m);
        m
    }

    /// `B(a, b)`.
    pub fn mat_b(&self, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.p, self.p);
        let all = self.all_indices();
        self.mat_b_into(a, &all, b, &all, &mut m, &mut PairScratch::default())?;
        Ok(m)
    }

    /// Galerkin projection of the pointwise product `a b`.
    pub fn pseudo_mul(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        let all = self.all_indices();
        self.mul_into(a, &all, b, &all, &mut out, &mut PairScratch::default());
        out
    }

    /// Galerkin projection of the pointwise product `a b c`.
    pub fn pseudo_mul3(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p];
        let all = self.all_indices();
        self.mul3_into(
            a,
            &all,
            b,
            &all,
            c,
            &all,
            &mut out,
            &mut PairScratch::default(),
        )?;
        Ok(out)
    }
}

/// Reusable buffers for symmetric pair coefficients `a_h b_i + a_i b_h`.
#[derive(Debug, Default, Clone)]
pub struct PairScratch {
    coef: Vec<f64>,
    touched: Vec<bool>,
    pairs: Vec<(usize, f64)>,
    mask: Vec<bool>,
    ids: Vec<usize>,
    tri: Vec<f64>,
}

impl PairScratch {
    /// Collects the coefficients of all unordered pairs in `ia × ib`, in
    /// first-touch order. Returns the MAC count.
    fn gather(&mut self, a: &[f64], ia: &[usize], b: &[f64], ib: &[usize], p: usize) -> u64 {
        let npairs = p * (p + 1) / 2;
        if self.coef.len() != npairs {
            self.coef = vec![0.0; npairs];
            self.touched = vec![false; npairs];
        }
        self.pairs.clear();
        let ids = &mut self.ids;
        ids.clear();
        for &h in ia {
            for &i in ib {
                let pid = pair_id(h, i);
                // for h != i both orders land here: a_h b_i + a_i b_h
                self.coef[pid] += a[h] * b[i];
                if !self.touched[pid] {
                    self.touched[pid] = true;
                    ids.push(pid);
                }
            }
        }
        for &pid in ids.iter() {
            self.pairs.push((pid, self.coef[pid]));
            self.coef[pid] = 0.0;
            self.touched[pid] = false;
        }
        (ia.len() * ib.len()) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MwBasisSpec;

    fn tensors(spec: MwBasisSpec) -> ProductTensors {
        let basis = MwBasis::new(spec).unwrap();
        ProductTensors::for_basis(&basis).unwrap()
    }

    #[test]
    fn first_slice_is_identity() {
        let t = tensors(MwBasisSpec::one_dim(1, 2));
        for j in 0..t.len() {
            for k in 0..t.len() {
                let e = if j == k { 1.0 } else { 0.0 };
                assert!((t.triple(0, j, k) - e).abs() < 1e-13);
                assert!((t.quad(0, 0, j, k).unwrap() - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn haar_cube_vanishes_and_legendre_value() {
        let haar = tensors(MwBasisSpec::one_dim(0, 1));
        assert_eq!(haar.triple(1, 1, 1), 0.0);
        let leg = tensors(MwBasisSpec::one_dim(2, 0));
        assert!((leg.triple(1, 1, 2) - 2.0 / 5f64.sqrt()).abs() < 1e-13);
        assert!((leg.triple(2, 1, 1) - 2.0 / 5f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn identities_on_e1() {
        let t = tensors(MwBasisSpec::one_dim(1, 2));
        let p = t.len();
        let b: Vec<f64> = (0..p).map(|i| (i as f64 * 0.37).sin()).collect();
        let id = t.mat_a(&e1(p));
        assert!((id - DMatrix::<f64>::identity(p, p)).abs().max() < 1e-13);
        let bb = t.mat_b(&e1(p), &b).unwrap();
        assert!((bb - t.mat_a(&b)).abs().max() < 1e-13);
        let m = t.pseudo_mul(&e1(p), &b);
        assert!(m.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-13));
    }

    #[test]
    fn quad_policy_cap() {
        let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2)).unwrap();
        let rule = basis.build_quadrature();
        let opts = TensorOptions {
            quad_cap: 10,
            quad: QuadPolicy::Required,
            ..Default::default()
        };
        assert!(matches!(
            ProductTensors::build(&basis, &rule, opts),
            Err(SgError::TensorCapExceeded { .. })
        ));
        let opts = TensorOptions {
            quad_cap: 10,
            ..Default::default()
        };
        let t = ProductTensors::build(&basis, &rule, opts).unwrap();
        assert!(!t.has_quad());
        assert!(matches!(
            t.mat_b(&e1(8), &e1(8)),
            Err(SgError::QuadTensorUnavailable)
        ));
    }
}
