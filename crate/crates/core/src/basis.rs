//! Truncated multiwavelet bases: orthonormal Legendre polynomials followed by
//! dilated and translated piecewise-polynomial mother wavelets, orthonormal
//! under the uniform probability measure on `[-1, 1]^d`.
//!
//! Indices are zero-based throughout: index `0` is the constant function.
//! In one dimension the function with mother degree `i`, level `j` and shift
//! `k` sits at `(N_p + 1)(2^j + k) + i`, after the `N_p + 1` Legendre
//! polynomials.
//!
//! In several dimensions each resolution level carries one total-order block
//! per shift. Wavelet refinement acts on the first stochastic variable (the
//! leading KL direction); the remaining variables enter through Legendre
//! factors, so a level-`j` function is `ψ^W_{k_1,j,s}(ξ_1) Π_{l>1} L_{k_l}(ξ_l)`
//! with `|k| ≤ p`. This keeps `P = (p+d)!/(p! d!) · 2^{N_r}`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::quadrature::{
    composite_probability_rule, legendre_orthonormal, legendre_orthonormal_at, probability_rule,
    QuadratureRule,
};

/// Largest basis accepted by [`MwBasis::new`] unless a cap is given explicitly.
pub const DEFAULT_MAX_BASIS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MwBasisSpec {
    /// Number of stochastic variables.
    pub dims: usize,
    /// Piecewise polynomial degree `N_p`; used when `dims == 1`.
    pub poly_degree: usize,
    /// Number of wavelet resolution levels `N_r`.
    pub resolution_levels: usize,
    /// Total polynomial order `p`; used when `dims > 1`.
    pub total_order: usize,
}

impl MwBasisSpec {
    pub fn one_dim(poly_degree: usize, resolution_levels: usize) -> Self {
        MwBasisSpec {
            dims: 1,
            poly_degree,
            resolution_levels,
            total_order: poly_degree,
        }
    }

    pub fn total_order(dims: usize, order: usize, resolution_levels: usize) -> Self {
        MwBasisSpec {
            dims,
            poly_degree: order,
            resolution_levels,
            total_order: order,
        }
    }

    /// Polynomial order that actually shapes the basis.
    pub fn order(&self) -> usize {
        if self.dims == 1 {
            self.poly_degree
        } else {
            self.total_order
        }
    }

    /// Size of one total-order block, `(p+d)!/(p! d!)`.
    pub fn block_size(&self) -> usize {
        binomial(self.order() + self.dims, self.dims)
    }

    /// Number of basis functions `P`.
    pub fn size(&self) -> usize {
        self.block_size() << self.resolution_levels
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        if self.dims == 0 {
            return Err(SgError::InvalidSpec("dims must be at least 1".into()));
        }
        if self.resolution_levels > 20 || self.order() > 20 || self.dims > 32 {
            return Err(SgError::InvalidSpec(format!("unreasonable spec {self:?}")));
        }
        let required = self.size();
        if required > cap {
            return Err(SgError::BasisTooLarge { required, cap });
        }
        Ok(())
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All multi-indices in `d` variables with `|k|_1 ≤ p`, graded by total
/// degree and ordered within a degree with the first variable varying slowest
/// (so `(1,0)` precedes `(0,1)`).
pub fn total_order_indices(p: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(p + d, d));
    for degree in 0..=p {
        let mut current = vec![0usize; d];
        push_compositions(degree, 0, &mut current, &mut out);
    }
    out
}

fn push_compositions(
    remaining: usize,
    pos: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    let d = current.len();
    if d == 0 {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if pos == d - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        push_compositions(remaining - k, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// One-dimensional factor of a basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Legendre(usize),
    Wavelet {
        degree: usize,
        level: usize,
        shift: usize,
    },
}

/// Position of a basis function in the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisIndex {
    /// `None` for the global polynomial block, otherwise `(level, shift)`.
    pub level: Option<(usize, usize)>,
    pub multi_index: Vec<usize>,
}

/// Mother wavelets on `[-1, 1]`, stored as orthonormal-Legendre coefficients
/// on each half interval in the local variable `t ∈ [-1, 1]`.
#[derive(Debug, Clone)]
pub struct MotherWavelets {
    degree: usize,
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
}

impl MotherWavelets {
    /// Gram-Schmidt construction on piecewise polynomials of degree
    /// `≤ degree` over `{[-1,0), [0,1]}`, orthogonalized against all global
    /// polynomials of that degree, then among themselves. Candidates are
    /// `sign(ξ) ξ^i`; each wavelet is signed to be positive as `ξ → 1⁻`.
    pub fn build(degree: usize) -> Self {
        let n = degree + 1;
        let (tq, wq) = probability_rule(degree + 2);
        // local Legendre coefficients of g on both halves
        let project = |g: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut coeffs = vec![0.0; 2 * n];
            let mut vals = vec![0.0; n];
            for (t, w) in tq.iter().zip(&wq) {
                legendre_orthonormal(degree, *t, &mut vals);
                let gl = g(0.5 * (t - 1.0));
                let gr = g(0.5 * (t + 1.0));
                for k in 0..n {
                    coeffs[k] += w * gl * vals[k];
                    coeffs[n + k] += w * gr * vals[k];
                }
            }
            coeffs
        };
        let inner = |a: &[f64], b: &[f64]| -> f64 {
            0.5 * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
        };

        let globals: Vec<Vec<f64>> = (0..n)
            .map(|i| project(&|x| legendre_orthonormal_at(i, x)))
            .collect();
        let mut wavelets: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = project(&|x: f64| {
                let s = if x < 0.0 { -1.0 } else { 1.0 };
                s * x.powi(i as i32)
            });
            for _ in 0..2 {
                for q in globals.iter().chain(wavelets.iter()) {
                    let c = inner(&v, q);
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let norm = inner(&v, &v).sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            wavelets.push(v);
        }

        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for v in wavelets {
            let (l, r) = v.split_at(n);
            let mut mw = (l.to_vec(), r.to_vec());
            let sign = [1.0, 0.75, 0.5, 0.25]
                .iter()
                .map(|&x| eval_piecewise(&mw.0, &mw.1, x))
                .find(|v| v.abs() > 1e-8)
                .map_or(1.0, f64::signum);
            if sign < 0.0 {
                mw.0.iter_mut().for_each(|c| *c = -*c);
                mw.1.iter_mut().for_each(|c| *c = -*c);
            }
            left.push(mw.0);
            right.push(mw.1);
        }
        MotherWavelets {
            degree,
            left,
            right,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Mother wavelet `i` at `η ∈ [-1, 1]`, right-continuous at 0.
    pub fn eval(&self, i: usize, eta: f64) -> f64 {
        eval_piecewise(&self.left[i], &self.right[i], eta)
    }

    pub fn coefficients(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.left[i], &self.right[i])
    }
}

fn eval_piecewise(left: &[f64], right: &[f64], eta: f64) -> f64 {
    let (coeffs, t) = if eta < 0.0 {
        (left, 2.0 * eta + 1.0)
    } else {
        (right, 2.0 * eta - 1.0)
    };
    let mut vals = [0.0; 24];
    let n = coeffs.len();
    if n <= vals.len() {
        legendre_orthonormal(n - 1, t, &mut vals[..n]);
        coeffs.iter().zip(&vals[..n]).map(|(c, v)| c * v).sum()
    } else {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * legendre_orthonormal_at(k, t))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct MwBasis {
    spec: MwBasisSpec,
    mothers: MotherWavelets,
    block: Vec<Vec<usize>>,
    functions: Vec<Vec<Factor>>,
}

impl MwBasis {
    pub fn new(spec: MwBasisSpec) -> Result<Self> {
        Self::with_cap(spec, DEFAULT_MAX_BASIS)
    }

    pub fn with_cap(spec: MwBasisSpec, cap: usize) -> Result<Self> {
        spec.validate(cap)?;
        let order = spec.order();
        let mothers = MotherWavelets::build(order);
        let block = total_order_indices(order, spec.dims);
        let mut functions = Vec::with_capacity(spec.size());
        for k in &block {
            functions.push(k.iter().map(|&deg| Factor::Legendre(deg)).collect());
        }
        for level in 0..spec.resolution_levels {
            for shift in 0..(1usize << level) {
                for k in &block {
                    let mut f: Vec<Factor> = k.iter().map(|&deg| Factor::Legendre(deg)).collect();
                    f[0] = Factor::Wavelet {
                        degree: k[0],
                        level,
                        shift,
                    };
                    functions.push(f);
                }
            }
        }
        debug_assert_eq!(functions.len(), spec.size());
        Ok(MwBasis {
            spec,
            mothers,
            block,
            functions,
        })
    }

    pub fn spec(&self) -> &MwBasisSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn mothers(&self) -> &MotherWavelets {
        &self.mothers
    }

    pub fn factors(&self, m: usize) -> &[Factor] {
        &self.functions[m]
    }

    /// Number of functions at the polynomial (coarsest) level.
    pub fn block_size(&self) -> usize {
        self.block.len()
    }

    pub fn index_of(&self, m: usize) -> Result<BasisIndex> {
        if m >= self.len() {
            return Err(SgError::OutOfRange {
                what: "basis index",
                detail: format!("{m} >= {}", self.len()),
            });
        }
        let b = self.block.len();
        let multi_index = self.block[m % b].clone();
        let level = if m < b {
            None
        } else {
            let cell = m / b - 1;
            let level = usize::BITS as usize - 1 - (cell + 1).leading_zeros() as usize;
            Some((level, cell + 1 - (1 << level)))
        };
        Ok(BasisIndex { level, multi_index })
    }

    pub fn global_index(&self, idx: &BasisIndex) -> Result<usize> {
        let pos = self
            .block
            .iter()
            .position(|k| *k == idx.multi_index)
            .ok_or_else(|| SgError::OutOfRange {
                what: "multi-index",
                detail: format!("{:?}", idx.multi_index),
            })?;
        let cell = match idx.level {
            None => 0,
            Some((level, shift)) => {
                if level >= self.spec.resolution_levels || shift >= (1 << level) {
                    return Err(SgError::OutOfRange {
                        what: "level/shift",
                        detail: format!("({level}, {shift})"),
                    });
                }
                (1 << level) + shift
            }
        };
        Ok(cell * self.block.len() + pos)
    }

    fn eval_factor(&self, f: Factor, x: f64) -> f64 {
        match f {
            Factor::Legendre(deg) => legendre_orthonormal_at(deg, x),
            Factor::Wavelet {
                degree,
                level,
                shift,
            } => {
                let cells = 1usize << level;
                let width = 2.0 / cells as f64;
                let cell = (((x + 1.0) / width).floor() as usize).min(cells - 1);
                if cell != shift {
                    return 0.0;
                }
                let eta = 2.0 * (x + 1.0 - shift as f64 * width) / width - 1.0;
                (cells as f64).sqrt() * self.mothers.eval(degree, eta.min(1.0))
            }
        }
    }

    /// Value of basis function `m` at `xi`, with range checks.
    pub fn eval(&self, m: usize, xi: &[f64]) -> Result<f64> {
        if m >= self.len() {
            return Err(SgError::OutOfRange {
                what: "basis index",
                detail: format!("{m} >= {}", self.len()),
            });
        }
        if xi.len() != self.dims() || xi.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(SgError::OutOfRange {
                what: "stochastic point",
                detail: format!("{xi:?}"),
            });
        }
        Ok(self.eval_unchecked(m, xi))
    }

    pub fn eval_unchecked(&self, m: usize, xi: &[f64]) -> f64 {
        self.functions[m]
            .iter()
            .zip(xi)
            .map(|(f, x)| self.eval_factor(*f, *x))
            .product()
    }

    /// All basis values at `xi`.
    pub fn eval_all(&self, xi: &[f64], out: &mut [f64]) {
        let order = self.spec.order();
        let d = self.dims();
        // Legendre values per dimension
        let mut leg = vec![0.0; d * (order + 1)];
        for (l, x) in xi.iter().enumerate() {
            legendre_orthonormal(order, *x, &mut leg[l * (order + 1)..(l + 1) * (order + 1)]);
        }
        for (m, factors) in self.functions.iter().enumerate() {
            let mut v = 1.0;
            for (l, f) in factors.iter().enumerate() {
                v *= match *f {
                    Factor::Legendre(deg) => leg[l * (order + 1) + deg],
                    w => self.eval_factor(w, xi[l]),
                };
                if v == 0.0 {
                    break;
                }
            }
            out[m] = v;
        }
    }

    /// Synthesizes `Σ c_m ψ_m(ξ)`.
    pub fn synthesize(&self, coeffs: &[f64], xi: &[f64]) -> f64 {
        let mut vals = vec![0.0; self.len()];
        self.eval_all(xi, &mut vals);
        vals.iter().zip(coeffs).map(|(v, c)| v * c).sum()
    }

    /// Points per dyadic cell per dimension used by [`MwBasis::build_quadrature`].
    pub fn quadrature_points_per_cell(&self) -> usize {
        2 * self.spec.order() + 3
    }

    /// Composite Gauss-Legendre rule on the finest dyadic partition, exact for
    /// piecewise polynomials of per-piece degree `4p + 4` and hence for all
    /// quadruple products of basis functions.
    pub fn build_quadrature(&self) -> QuadratureRule {
        let n = self.quadrature_points_per_cell();
        let mut per_dim = Vec::with_capacity(self.dims());
        per_dim.push(composite_probability_rule(
            n,
            1 << self.spec.resolution_levels,
        ));
        for _ in 1..self.dims() {
            per_dim.push(probability_rule(n));
        }
        QuadratureRule::tensor(&per_dim)
    }

    /// Projects `g` onto the basis with the given rule.
    pub fn project(&self, rule: &QuadratureRule, g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.len()];
        let mut vals = vec![0.0; self.len()];
        for (xi, w) in rule.iter() {
            let gv = g(xi);
            self.eval_all(xi, &mut vals);
            coeffs
                .iter_mut()
                .zip(&vals)
                .for_each(|(c, v)| *c += w * gv * v);
        }
        coeffs
    }

    /// Debug dump: one row per basis function with its hierarchy position and
    /// the piecewise mother-wavelet coefficients of its leading factor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,level,shift,multi_index,left_coeffs,right_coeffs\n");
        for m in 0..self.len() {
            let idx = self.index_of(m).expect("index in range");
            let (level, shift) = idx
                .level
                .map_or((-1i64, 0i64), |(l, s)| (l as i64, s as i64));
            let multi: Vec<String> = idx.multi_index.iter().map(|k| k.to_string()).collect();
            let (l, r) = match self.functions[m][0] {
                Factor::Wavelet { degree, .. } => {
                    let (l, r) = self.mothers.coefficients(degree);
                    (join(l), join(r))
                }
                Factor::Legendre(_) => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{m},{level},{shift},{},{l},{r}", multi.join(";"));
        }
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.17e}"))
        .collect::<Vec<_>>()
        .join(";")
}
