//! Buckley-Leverett fractional flow and its stochastic Galerkin extension.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::linalg::{
    backward_solve, cholesky_in_place, complex_eigenvalues, congruence_inverse, forward_solve,
    gershgorin, is_diagonal, max_asymmetry, symmetric_extremes,
};
use crate::reduced::significant_into;
use crate::tensors::{PairScratch, ProductTensors};

/// Largest basis for which wave speeds come from a dense eigensolve.
pub const DENSE_EIGEN_LIMIT: usize = 64;

/// Relative widening applied to the spectral wave-speed estimates.
pub const SPEED_SAFETY: f64 = 0.05;

pub const DEFAULT_EPSILON: f64 = 1e-10;

pub fn frac_flow(s: f64, a: f64) -> f64 {
    let num = s * s;
    let den = num + a * (1.0 - s) * (1.0 - s);
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn frac_flow_derivative(s: f64, a: f64) -> f64 {
    let den = s * s + a * (1.0 - s) * (1.0 - s);
    if den == 0.0 {
        return 0.0;
    }
    2.0 * a * s * (1.0 - s) / (den * den)
}

/// Saturation behind the shock for a zero right state, from the tangency
/// condition `f(S)/S = f'(S)`, solved by bisection. Returns `(S*, f'(S*))`.
pub fn shock_saturation(a: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(SgError::Config(format!(
            "viscosity ratio must be positive, got {a}"
        )));
    }
    let g = |s: f64| frac_flow(s, a) / s - frac_flow_derivative(s, a);
    let (mut lo, mut hi) = (1e-12, 1.0);
    if g(lo) * g(hi) > 0.0 {
        return Err(SgError::Bracketing { index: 0, lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    Ok((s, frac_flow_derivative(s, a)))
}

/// Largest characteristic speed factor `max_{S∈[0,1]} f'(S)`.
pub fn max_frac_flow_derivative(a: f64) -> f64 {
    // f' is unimodal on [0, 1]; golden-section search
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if frac_flow_derivative(x1, a) < frac_flow_derivative(x2, a) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    frac_flow_derivative(0.5 * (lo + hi), a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxMode {
    /// Single solve with the quadruple-product denominator matrix.
    Quad,
    /// Successive pairwise products.
    Trip,
}

impl std::str::FromStr for FluxMode {
    type Err = SgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quad" => Ok(FluxMode::Quad),
            "trip" => Ok(FluxMode::Trip),
            other => Err(SgError::Config(format!("unknown flux mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxParams {
    /// Viscosity ratio `μ_w / μ_n`.
    pub a: f64,
    pub mode: FluxMode,
    /// Reduction threshold; `ε ≤ 0` selects the full operators.
    pub eps: f64,
}

impl FluxParams {
    pub fn new(a: f64, mode: FluxMode, eps: f64) -> Self {
        FluxParams { a, mode, eps }
    }

    pub fn full(a: f64, mode: FluxMode) -> Self {
        FluxParams { a, mode, eps: 0.0 }
    }

    pub fn is_reduced(&self) -> bool {
        self.eps > 0.0
    }
}

/// Flux value and the extreme real eigenvalues of the flux Jacobian.
#[derive(Debug, Clone, Copy, Default)]
pub struct FluxEval {
    pub lo: f64,
    pub hi: f64,
    pub macs: u64,
}

/// Reusable buffers for repeated flux evaluations with one tensor set.
#[derive(Debug, Clone)]
pub struct FluxWorkspace {
    p: usize,
    all: Vec<usize>,
    js: Vec<usize>,
    jw: Vec<usize>,
    ju: Vec<usize>,
    jx: Vec<usize>,
    jf: Vec<usize>,
    w: Vec<f64>,
    aw: Vec<f64>,
    x: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    m: DMatrix<f64>,
    l: DMatrix<f64>,
    bss: DMatrix<f64>,
    m2: DMatrix<f64>,
    c: DMatrix<f64>,
    mid: Vec<f64>,
    scratch: PairScratch,
}

impl FluxWorkspace {
    pub fn new(p: usize) -> Self {
        let z = || DMatrix::zeros(p, p);
        FluxWorkspace {
            p,
            all: (0..p).collect(),
            js: Vec::with_capacity(p),
            jw: Vec::with_capacity(p),
            ju: Vec::with_capacity(p),
            jx: Vec::with_capacity(p),
            jf: Vec::with_capacity(p),
            w: vec![0.0; p],
            aw: vec![0.0; p],
            x: vec![0.0; p],
            v1: vec![0.0; p],
            v2: vec![0.0; p],
            m: z(),
            l: z(),
            bss: z(),
            m2: z(),
            c: z(),
            mid: vec![0.0; p],
            scratch: PairScratch::default(),
        }
    }

    pub(crate) fn take_mid(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.mid)
    }

    pub(crate) fn put_mid(&mut self, v: Vec<f64>) {
        self.mid = v;
    }
}

fn select<'a>(v: &[f64], eps: f64, buf: &'a mut Vec<usize>, all: &'a [usize]) -> &'a [usize] {
    if eps > 0.0 {
        significant_into(v, eps, buf);
        buf
    } else {
        all
    }
}

/// `out = M · v` over columns `cols`; returns the MAC count.
fn sym_matvec(m: &DMatrix<f64>, v: &[f64], cols: &[usize], out: &mut [f64]) -> u64 {
    let p = m.nrows();
    out.iter_mut().for_each(|o| *o = 0.0);
    let data = m.as_slice();
    for &k in cols {
        let vk = v[k];
        for (o, mjk) in out.iter_mut().zip(&data[k * p..(k + 1) * p]) {
            *o += mjk * vk;
        }
    }
    (p * cols.len()) as u64
}

/// Solves `G y = b` given either a diagonal `G` or its Cholesky factor in `l`.
fn spd_solve(g: &DMatrix<f64>, l: &mut DMatrix<f64>, diag: bool, b: &mut [f64]) -> Result<u64> {
    let p = g.nrows();
    if diag {
        let scale = (0..p).map(|j| g[(j, j)].abs()).fold(0.0, f64::max);
        for j in 0..p {
            let d = g[(j, j)];
            if !d.is_finite() {
                return Err(SgError::Singular(format!("non-finite pivot at row {j}")));
            }
            if d <= 1e-14 * scale {
                return Err(SgError::NotPositiveDefinite { smallest_pivot: d });
            }
            b[j] /= d;
        }
        return Ok(p as u64);
    }
    l.copy_from(g);
    let mut macs = cholesky_in_place(l)?;
    macs += forward_solve(l, b);
    macs += backward_solve(l, b);
    Ok(macs)
}

fn spectrum_bounds(c: &DMatrix<f64>, symmetric: bool) -> (f64, f64) {
    let p = c.nrows();
    if is_diagonal(c) {
        let d = c.diagonal();
        return (d.min(), d.max());
    }
    if p > DENSE_EIGEN_LIMIT {
        return gershgorin(c);
    }
    // normalize first: subnormal entries ahead of a front break the QR sweeps
    let scale = c.amax();
    if scale == 0.0 {
        return (0.0, 0.0);
    }
    let cs = c.unscale(scale);
    let (lo, hi) = if symmetric {
        symmetric_extremes(&cs)
    } else {
        complex_eigenvalues(&cs).map_or((f64::NAN, f64::NAN), |ev| {
            ev.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
                    (lo.min(z.re), hi.max(z.re))
                })
        })
    };
    if lo.is_finite() && hi.is_finite() {
        (lo * scale, hi * scale)
    } else {
        gershgorin(c)
    }
}

/// Evaluates the Galerkin flux `f` of saturation `s` and velocity `u` into
/// `out`. When `speeds` is set, also bounds the real spectrum of the flux
/// Jacobian at `s`.
pub fn eval_flux(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
    ws: &mut FluxWorkspace,
    out: &mut [f64],
    speeds: bool,
) -> Result<FluxEval> {
    debug_assert_eq!(ws.p, t.len());
    if ws.p == 1 {
        let f = frac_flow(s[0], params.a);
        out[0] = u[0] * f;
        let sp = u[0] * frac_flow_derivative(s[0], params.a);
        return Ok(FluxEval {
            lo: sp,
            hi: sp,
            macs: 1,
        });
    }
    // no significant coefficient: the reduced flux and Jacobian vanish
    if params.is_reduced() && s.iter().all(|v| v.abs() <= params.eps) {
        out.iter_mut().for_each(|o| *o = 0.0);
        return Ok(FluxEval::default());
    }
    match params.mode {
        FluxMode::Quad => eval_quad(s, u, params, t, ws, out, speeds),
        FluxMode::Trip => eval_trip(s, u, params, t, ws, out, speeds),
    }
}

fn eval_quad(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
    ws: &mut FluxWorkspace,
    out: &mut [f64],
    speeds: bool,
) -> Result<FluxEval> {
    let a = params.a;
    let eps = params.eps;
    for j in 0..ws.p {
        ws.w[j] = -s[j];
    }
    ws.w[0] += 1.0;
    for j in 0..ws.p {
        ws.aw[j] = a * ws.w[j];
    }
    let js = select(s, eps, &mut ws.js, &ws.all);
    let jw = select(&ws.w, eps, &mut ws.jw, &ws.all);
    let ju = select(u, eps, &mut ws.ju, &ws.all);

    ws.bss.fill(0.0);
    let mut macs = t.mat_b_into(s, js, s, js, &mut ws.bss, &mut ws.scratch)?;
    ws.m.copy_from(&ws.bss);
    macs += t.mat_b_into(&ws.aw, jw, &ws.w, jw, &mut ws.m, &mut ws.scratch)?;
    macs += sym_matvec(&ws.bss, u, ju, out);
    let diag = is_diagonal(&ws.m);
    macs += spd_solve(&ws.m, &mut ws.l, diag, out)?;

    if !speeds {
        return Ok(FluxEval {
            lo: 0.0,
            hi: 0.0,
            macs,
        });
    }
    // M₂ = B(a e1 - (1+a) S, f) + B(S, u); J = 2 M⁻¹ M₂
    for j in 0..ws.p {
        ws.x[j] = -(1.0 + a) * s[j];
    }
    ws.x[0] += a;
    let jx = select(&ws.x, eps, &mut ws.jx, &ws.all);
    let jf = select(out, eps, &mut ws.jf, &ws.all);
    ws.m2.fill(0.0);
    macs += t.mat_b_into(&ws.x, jx, out, jf, &mut ws.m2, &mut ws.scratch)?;
    macs += t.mat_b_into(s, js, u, ju, &mut ws.m2, &mut ws.scratch)?;
    let p = ws.p;
    if diag {
        for k in 0..p {
            let lk = ws.m[(k, k)].sqrt();
            for j in 0..p {
                ws.c[(j, k)] = 2.0 * ws.m2[(j, k)] / (lk * ws.m[(j, j)].sqrt());
            }
        }
        macs += (p * p) as u64;
    } else {
        macs += congruence_inverse(&ws.l, &ws.m2, &mut ws.c);
        ws.c.scale_mut(2.0);
    }
    let (lo, hi) = spectrum_bounds(&ws.c, true);
    if !is_diagonal(&ws.c) && p <= DENSE_EIGEN_LIMIT {
        macs += (p * p * p) as u64;
    }
    Ok(FluxEval { lo, hi, macs })
}

fn eval_trip(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
    ws: &mut FluxWorkspace,
    out: &mut [f64],
    speeds: bool,
) -> Result<FluxEval> {
    let a = params.a;
    let eps = params.eps;
    let p = ws.p;
    for j in 0..p {
        ws.w[j] = -s[j];
    }
    ws.w[0] += 1.0;
    let js = select(s, eps, &mut ws.js, &ws.all);
    let jw = select(&ws.w, eps, &mut ws.jw, &ws.all);

    // sq = S·S, dP = sq + a (e1-S)·(e1-S)
    ws.v1.iter_mut().for_each(|v| *v = 0.0);
    let mut macs = t.mul_into(s, js, s, js, &mut ws.v1, &mut ws.scratch);
    ws.v2.iter_mut().for_each(|v| *v = 0.0);
    macs += t.mul_into(&ws.w, jw, &ws.w, jw, &mut ws.v2, &mut ws.scratch);
    for j in 0..p {
        ws.x[j] = ws.v1[j] + a * ws.v2[j];
    }
    let jd = select(&ws.x, eps, &mut ws.jx, &ws.all);
    ws.m.fill(0.0);
    macs += t.mat_a_into(&ws.x, jd, &mut ws.m);
    let diag = is_diagonal(&ws.m);
    // g = A(dP)⁻¹ sq, kept in v1
    macs += spd_solve(&ws.m, &mut ws.l, diag, &mut ws.v1)?;
    let jg = select(&ws.v1, eps, &mut ws.jf, &ws.all);
    let ju = select(u, eps, &mut ws.ju, &ws.all);
    out.iter_mut().for_each(|v| *v = 0.0);
    macs += t.mul_into(u, ju, &ws.v1, jg, out, &mut ws.scratch);

    if !speeds {
        return Ok(FluxEval {
            lo: 0.0,
            hi: 0.0,
            macs,
        });
    }
    // J = A(u) A(dP)⁻¹ [2A(S) - 2A(g)(A(S) - a A(e1-S))]
    let mut as_ = DMatrix::zeros(p, p);
    macs += t.mat_a_into(s, js, &mut as_);
    let mut k = as_.clone();
    for j in 0..p {
        ws.aw[j] = -a * ws.w[j];
    }
    macs += t.mat_a_into(&ws.aw, jw, &mut k);
    let mut ag = DMatrix::zeros(p, p);
    macs += t.mat_a_into(&ws.v1, jg, &mut ag);
    let mut au = DMatrix::zeros(p, p);
    macs += t.mat_a_into(u, ju, &mut au);
    let all_diag =
        diag && is_diagonal(&as_) && is_diagonal(&k) && is_diagonal(&ag) && is_diagonal(&au);
    if all_diag {
        for j in 0..p {
            let r = 2.0 * as_[(j, j)] - 2.0 * ag[(j, j)] * k[(j, j)];
            ws.c[(j, j)] = au[(j, j)] * r / ws.m[(j, j)];
        }
        ws.c.fill_lower_triangle(0.0, 1);
        ws.c.fill_upper_triangle(0.0, 1);
        macs += p as u64;
    } else {
        let mut r = &ag * &k;
        r.scale_mut(-2.0);
        r += as_.scale(2.0);
        macs += (p * p * p) as u64;
        if diag {
            for j in 0..p {
                let d = ws.m[(j, j)];
                r.row_mut(j).scale_mut(1.0 / d);
            }
        } else {
            for c in 0..p {
                let col = &mut r.as_mut_slice()[c * p..(c + 1) * p];
                macs += forward_solve(&ws.l, col);
                macs += backward_solve(&ws.l, col);
            }
        }
        ws.c = &au * &r;
        macs += (p * p * p) as u64;
    }
    let (lo, hi) = spectrum_bounds(&ws.c, false);
    if !is_diagonal(&ws.c) && p <= DENSE_EIGEN_LIMIT {
        macs += (p * p * p) as u64;
    }
    Ok(FluxEval { lo, hi, macs })
}

/// Flux with the quadruple-product formulation.
pub fn sg_flux_quad(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
) -> Result<Vec<f64>> {
    let params = FluxParams {
        mode: FluxMode::Quad,
        ..*params
    };
    sg_flux(s, u, &params, t)
}

/// Flux with successive pairwise products.
pub fn sg_flux_trip(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
) -> Result<Vec<f64>> {
    let params = FluxParams {
        mode: FluxMode::Trip,
        ..*params
    };
    sg_flux(s, u, &params, t)
}

pub fn sg_flux(s: &[f64], u: &[f64], params: &FluxParams, t: &ProductTensors) -> Result<Vec<f64>> {
    let mut ws = FluxWorkspace::new(t.len());
    let mut out = vec![0.0; t.len()];
    eval_flux(s, u, params, t, &mut ws, &mut out, false)?;
    Ok(out)
}

/// Denominator matrix `B(S,S) + a B(e1-S, e1-S)` of the quadruple formulation.
pub fn denominator_matrix(s: &[f64], a: f64, t: &ProductTensors) -> Result<DMatrix<f64>> {
    let mut w: Vec<f64> = s.iter().map(|v| -v).collect();
    w[0] += 1.0;
    let mut m = t.mat_b(s, s)?;
    m += t.mat_b(&w, &w)?.scale(a);
    Ok(m)
}

/// Jacobian `∂f/∂S` of the flux in the configured mode, using the full
/// operators.
pub fn flux_jacobian(
    s: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
) -> Result<DMatrix<f64>> {
    let p = t.len();
    let a = params.a;
    let mut w: Vec<f64> = s.iter().map(|v| -v).collect();
    w[0] += 1.0;
    match params.mode {
        FluxMode::Quad => {
            let m = denominator_matrix(s, a, t)?;
            let f = sg_flux_quad(s, u, &FluxParams::full(a, FluxMode::Quad), t)?;
            let mut x: Vec<f64> = s.iter().map(|v| -(1.0 + a) * v).collect();
            x[0] += a;
            let m2 = t.mat_b(&x, &f)? + t.mat_b(s, u)?;
            let mut l = m.clone();
            cholesky_in_place(&mut l)?;
            let mut j = m2.scale(2.0);
            for c in 0..p {
                let col = &mut j.as_mut_slice()[c * p..(c + 1) * p];
                forward_solve(&l, col);
                backward_solve(&l, col);
            }
            Ok(j)
        }
        FluxMode::Trip => {
            let sq = t.pseudo_mul(s, s);
            let ww = t.pseudo_mul(&w, &w);
            let dp: Vec<f64> = sq.iter().zip(&ww).map(|(x, y)| x + a * y).collect();
            let ad = t.mat_a(&dp);
            let mut l = ad.clone();
            cholesky_in_place(&mut l)?;
            let mut g = sq.clone();
            forward_solve(&l, &mut g);
            backward_solve(&l, &mut g);
            let as_ = t.mat_a(s);
            let k = &as_ - t.mat_a(&w).scale(a);
            let mut r = as_.scale(2.0) - (t.mat_a(&g) * k).scale(2.0);
            for c in 0..p {
                let col = &mut r.as_mut_slice()[c * p..(c + 1) * p];
                forward_solve(&l, col);
                backward_solve(&l, col);
            }
            Ok(t.mat_a(u) * r)
        }
    }
}

/// Bounds `(σ_L, σ_R)` on the signal speeds between two states, widened by
/// [`SPEED_SAFETY`].
pub fn wave_speed_bounds(
    s_l: &[f64],
    s_r: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
) -> Result<(f64, f64)> {
    let mut ws = FluxWorkspace::new(t.len());
    let mut out = vec![0.0; t.len()];
    let l = eval_flux(s_l, u, params, t, &mut ws, &mut out, true)?;
    let r = eval_flux(s_r, u, params, t, &mut ws, &mut out, true)?;
    Ok(widen(l.lo.min(r.lo), l.hi.max(r.hi)))
}

pub fn widen(lo: f64, hi: f64) -> (f64, f64) {
    (lo - SPEED_SAFETY * lo.abs(), hi + SPEED_SAFETY * hi.abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicityReport {
    pub min_denominator_eigenvalue: f64,
    pub denominator_asymmetry: f64,
    pub positive_definite: bool,
    /// `None` when the Jacobian could not be formed.
    pub max_imag_eigenvalue: Option<f64>,
}

impl HyperbolicityReport {
    pub fn at_risk(&self) -> bool {
        !self.positive_definite || self.max_imag_eigenvalue.is_none_or(|v| v > 1e-9)
    }
}

/// Diagnostic for the quadruple formulation at state `s` with velocity `u`.
pub fn hyperbolicity_check(
    s: &[f64],
    u: &[f64],
    a: f64,
    t: &ProductTensors,
) -> Result<HyperbolicityReport> {
    let m = denominator_matrix(s, a, t)?;
    let asym = max_asymmetry(&m);
    let (min_eig, _) = symmetric_extremes(&m);
    let positive_definite = min_eig > 0.0;
    let max_imag = if positive_definite {
        flux_jacobian(s, u, &FluxParams::full(a, FluxMode::Quad), t)
            .ok()
            .and_then(|j| complex_eigenvalues(&j))
            .map(|ev| ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(HyperbolicityReport {
        min_denominator_eigenvalue: min_eig,
        denominator_asymmetry: asym,
        positive_definite,
        max_imag_eigenvalue: max_imag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{MwBasis, MwBasisSpec};
    use crate::tensors::e1;

    #[test]
    fn scalar_flux_values() {
        assert_eq!(frac_flow(0.0, 2.0), 0.0);
        assert_eq!(frac_flow(1.0, 2.0), 1.0);
        assert!((frac_flow(0.5, 2.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shock_matches_closed_form() {
        let (s, d) = shock_saturation(2.0).unwrap();
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((d - 1.11237).abs() < 1e-5);
        assert!((frac_flow(s, 2.0) / s - d).abs() < 1e-10);
    }

    #[test]
    fn deterministic_state_collapses_to_scalar_flux() {
        let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2)).unwrap();
        let t = ProductTensors::for_basis(&basis).unwrap();
        let p = t.len();
        let s: Vec<f64> = e1(p).iter().map(|v| 0.3 * v).collect();
        let u: Vec<f64> = e1(p).iter().map(|v| 1.7 * v).collect();
        for mode in [FluxMode::Quad, FluxMode::Trip] {
            let f = sg_flux(&s, &u, &FluxParams::full(2.0, mode), &t).unwrap();
            assert!((f[0] - 1.7 * frac_flow(0.3, 2.0)).abs() < 1e-12);
            assert!(f[1..].iter().all(|v| v.abs() < 1e-12));
        }
    }
}
