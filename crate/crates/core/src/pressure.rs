//! Incompressible single-phase pressure and stochastic velocity preprocessing.

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::MwBasis;
use crate::engine::{Grid, VelocityField};
use crate::error::{Result, SgError};
use crate::kl::{KlExpansion, VectorKl, XiMap};
use crate::quadrature::{composite_probability_rule, probability_rule, QuadratureRule};

/// Two-point flux pressure problem with no-flow outer boundaries.
#[derive(Debug, Clone)]
pub struct PressureProblem<'a> {
    pub grid: &'a Grid,
    pub perm: &'a [f64],
    /// Volumetric source per cell; must sum to zero.
    pub sources: &'a [f64],
}

#[derive(Debug, Clone, Serialize)]
pub struct PressureSolution {
    pub pressure: Vec<f64>,
    /// Total flux through each `x` face (positive towards `+x`).
    pub flux_x: Vec<f64>,
    /// Total flux through each `y` face (positive towards `+y`).
    pub flux_y: Vec<f64>,
    pub iterations: usize,
    /// `‖A p − b‖∞`.
    pub residual: f64,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

struct Tpfa {
    tx: Vec<f64>,
    ty: Vec<f64>,
    diag: Vec<f64>,
}

impl Tpfa {
    fn new(g: &Grid, k: &[f64]) -> Self {
        let mut tx = vec![0.0; g.x_faces()];
        let mut ty = vec![0.0; g.y_faces()];
        let mut diag = vec![0.0; g.cells()];
        for j in 0..g.my {
            for i in 1..g.mx {
                let (l, r) = (g.cell(i - 1, j), g.cell(i, j));
                let t = harmonic_mean(k[l], k[r]) * g.dy / g.dx;
                tx[j * (g.mx + 1) + i] = t;
                diag[l] += t;
                diag[r] += t;
            }
        }
        if g.is_2d() {
            for j in 1..g.my {
                for i in 0..g.mx {
                    let (b, tp) = (g.cell(i, j - 1), g.cell(i, j));
                    let t = harmonic_mean(k[b], k[tp]) * g.dx / g.dy;
                    ty[j * g.mx + i] = t;
                    diag[b] += t;
                    diag[tp] += t;
                }
            }
        }
        Tpfa { tx, ty, diag }
    }

    /// `y = A x` for the Neumann operator.
    fn apply(&self, g: &Grid, x: &[f64], y: &mut [f64]) {
        for (c, v) in y.iter_mut().enumerate() {
            *v = self.diag[c] * x[c];
        }
        for j in 0..g.my {
            for i in 1..g.mx {
                let t = self.tx[j * (g.mx + 1) + i];
                let (l, r) = (g.cell(i - 1, j), g.cell(i, j));
                y[l] -= t * x[r];
                y[r] -= t * x[l];
            }
        }
        if g.is_2d() {
            for j in 1..g.my {
                for i in 0..g.mx {
                    let t = self.ty[j * g.mx + i];
                    let (b, tp) = (g.cell(i, j - 1), g.cell(i, j));
                    y[b] -= t * x[tp];
                    y[tp] -= t * x[b];
                }
            }
        }
    }
}

/// Solves `−∇·(k∇p) = q` by TPFA with harmonic transmissibilities and
/// diagonally preconditioned CG; cell 0 is pinned to zero pressure.
pub fn solve_pressure(problem: &PressureProblem) -> Result<PressureSolution> {
    let g = problem.grid;
    let n = g.cells();
    if problem.perm.len() != n || problem.sources.len() != n {
        return Err(SgError::Config(
            "permeability and sources must have one entry per cell".into(),
        ));
    }
    if let Some(c) = problem
        .perm
        .iter()
        .position(|k| !(*k > 0.0 && k.is_finite()))
    {
        return Err(SgError::Config(format!(
            "permeability must be positive and finite (cell {c}: {})",
            problem.perm[c]
        )));
    }
    let b = problem.sources;
    let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let total: f64 = b.iter().sum();
    if total.abs() > 1e-12 * bnorm.max(1.0) {
        return Err(SgError::Config(format!(
            "sources must sum to zero, got {total:e}"
        )));
    }
    let op = Tpfa::new(g, problem.perm);
    if n > 1 {
        if let Some(c) = op.diag.iter().position(|d| *d == 0.0) {
            return Err(SgError::Singular(format!(
                "cell {c} has no transmissibility"
            )));
        }
    }
    let mut p = vec![0.0; n];
    let mut iterations = 0;
    if n > 1 && bnorm > 0.0 {
        // CG on the SPD system with row/column 0 removed
        let mask = |v: &mut [f64]| v[0] = 0.0;
        let mut r: Vec<f64> = b.to_vec();
        mask(&mut r);
        let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(a, d)| a / d).collect();
        let mut d = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ad = vec![0.0; n];
        let tol = 1e-13 * bnorm;
        for it in 0..20 * n + 100 {
            iterations = it + 1;
            op.apply(g, &d, &mut ad);
            mask(&mut ad);
            let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
            if !(dad > 0.0) {
                return Err(SgError::Singular(format!("CG breakdown (dᵀAd = {dad:e})")));
            }
            let alpha = rz / dad;
            p.iter_mut().zip(&d).for_each(|(x, v)| *x += alpha * v);
            r.iter_mut().zip(&ad).for_each(|(x, v)| *x -= alpha * v);
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol {
                break;
            }
            z.iter_mut()
                .zip(r.iter().zip(&op.diag))
                .for_each(|(zz, (rr, dd))| *zz = rr / dd);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            d.iter_mut()
                .zip(&z)
                .for_each(|(dd, zz)| *dd = zz + beta * *dd);
        }
    }
    let mut ap = vec![0.0; n];
    op.apply(g, &p, &mut ap);
    let residual = ap
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if residual > 1e-10 * bnorm.max(f64::MIN_POSITIVE) && bnorm > 0.0 {
        return Err(SgError::Singular(format!(
            "pressure solve stalled at residual {residual:e} after {iterations} iterations"
        )));
    }
    let mut flux_x = vec![0.0; g.x_faces()];
    for j in 0..g.my {
        for i in 1..g.mx {
            let f = j * (g.mx + 1) + i;
            flux_x[f] = -op.tx[f] * (p[g.cell(i, j)] - p[g.cell(i - 1, j)]);
        }
    }
    let mut flux_y = vec![0.0; g.y_faces()];
    if g.is_2d() {
        for j in 1..g.my {
            for i in 0..g.mx {
                let f = j * g.mx + i;
                flux_y[f] = -op.ty[f] * (p[g.cell(i, j)] - p[g.cell(i, j - 1)]);
            }
        }
    }
    Ok(PressureSolution {
        pressure: p,
        flux_x,
        flux_y,
        iterations,
        residual,
    })
}

/// Net outflow minus source per cell.
pub fn divergence(g: &Grid, flux_x: &[f64], flux_y: &[f64], sources: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.cells()];
    for j in 0..g.my {
        for i in 0..g.mx {
            let c = g.cell(i, j);
            let mut d = flux_x[j * (g.mx + 1) + i + 1] - flux_x[j * (g.mx + 1) + i];
            if g.is_2d() {
                d += flux_y[(j + 1) * g.mx + i] - flux_y[j * g.mx + i];
            }
            out[c] = d - sources[c];
        }
    }
    out
}

/// Quarter five-spot sources: `+rate` at cell (0,0), `−rate` at the
/// opposite corner.
pub fn five_spot_sources(g: &Grid, rate: f64) -> Vec<f64> {
    let mut q = vec![0.0; g.cells()];
    q[g.cell(0, 0)] = rate;
    q[g.cell(g.mx - 1, g.my - 1)] = -rate;
    q
}

/// `k = exp(Ȳ + Σ √λ_k g_k ξ_k)` on the expansion's points.
pub fn lognormal_permeability(kl: &KlExpansion, xi_std: &[f64]) -> Vec<f64> {
    kl.sample_std(xi_std).into_iter().map(f64::exp).collect()
}

/// Composite rule aligned with the basis' dyadic partition in the first
/// variable, `n` points per piece and per dimension.
pub fn velocity_rule(basis: &MwBasis, n: usize) -> QuadratureRule {
    let mut per_dim = vec![composite_probability_rule(
        n,
        1 << basis.spec().resolution_levels,
    )];
    for _ in 1..basis.dims() {
        per_dim.push(probability_rule(n));
    }
    QuadratureRule::tensor(&per_dim)
}

/// Face fluxes of one stochastic realization.
#[derive(Debug, Clone)]
pub struct FluxSample {
    pub flux_x: Vec<f64>,
    pub flux_y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionStats {
    pub nodes: usize,
    /// Largest `|∇·q_k|` over cells and modes, sources excluded from `k > 1`.
    pub max_divergence: f64,
}

/// Projected face-flux coefficients, `p` per face.
#[derive(Debug, Clone)]
pub struct MwFluxField {
    pub p: usize,
    pub flux_x: Vec<f64>,
    pub flux_y: Vec<f64>,
    pub stats: ProjectionStats,
}

impl MwFluxField {
    /// Face velocities per unit area.
    pub fn velocity(&self, g: &Grid) -> VelocityField {
        VelocityField {
            p: self.p,
            ux: self.flux_x.iter().map(|f| f / g.dy).collect(),
            uy: self.flux_y.iter().map(|f| f / g.dx).collect(),
        }
    }
}

/// `(q)_k ≈ Σ_j q(ξ_j) ψ_k(ξ_j) w_j`, sampled in parallel and reduced in
/// node order.
pub fn project_velocity_mw(
    sampler: impl Fn(&[f64]) -> Result<FluxSample> + Sync,
    basis: &MwBasis,
    rule: &QuadratureRule,
    grid: &Grid,
    sources: &[f64],
) -> Result<MwFluxField> {
    let p = basis.len();
    let samples: Vec<Result<FluxSample>> = (0..rule.len())
        .into_par_iter()
        .map(|q| {
            sampler(rule.node(q)).map_err(|e| {
                SgError::Config(format!(
                    "velocity sample at ξ = {:?} failed: {e}",
                    rule.node(q)
                ))
            })
        })
        .collect();
    let (nx, ny) = (grid.x_faces(), grid.y_faces());
    let mut fx = vec![0.0; nx * p];
    let mut fy = vec![0.0; ny * p];
    let mut psi = vec![0.0; p];
    for (q, s) in samples.into_iter().enumerate() {
        let s = s?;
        let w = rule.weight(q);
        basis.eval_all(rule.node(q), &mut psi);
        for (f, v) in s.flux_x.iter().enumerate() {
            for k in 0..p {
                fx[f * p + k] += w * v * psi[k];
            }
        }
        for (f, v) in s.flux_y.iter().enumerate() {
            for k in 0..p {
                fy[f * p + k] += w * v * psi[k];
            }
        }
    }
    let mut max_div: f64 = 0.0;
    let zero = vec![0.0; grid.cells()];
    for k in 0..p {
        let mx: Vec<f64> = (0..nx).map(|f| fx[f * p + k]).collect();
        let my: Vec<f64> = (0..ny).map(|f| fy[f * p + k]).collect();
        let src = if k == 0 { sources } else { &zero[..] };
        let d = divergence(grid, &mx, &my, src);
        max_div = d.iter().fold(max_div, |m, v| m.max(v.abs()));
    }
    Ok(MwFluxField {
        p,
        flux_x: fx,
        flux_y: fy,
        stats: ProjectionStats {
            nodes: rule.len(),
            max_divergence: max_div,
        },
    })
}

/// Coefficients of the mapped KL variables: row `k` holds `⟨ξ_k, ψ_m⟩`.
pub fn xi_coefficients(basis: &MwBasis, xi: XiMap, terms: usize) -> Result<Vec<Vec<f64>>> {
    if terms > basis.dims() {
        return Err(SgError::Config(format!(
            "{terms} KL terms need as many stochastic dimensions, basis has {}",
            basis.dims()
        )));
    }
    let rule = basis.build_quadrature();
    Ok((0..terms)
        .map(|k| basis.project(&rule, |x| xi.map(x[k])))
        .collect())
}

/// Face-centre points of a grid: `x` faces then `y` faces.
pub fn face_points(g: &Grid) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut xf = Vec::with_capacity(g.x_faces());
    for j in 0..g.my {
        for i in 0..=g.mx {
            xf.push([g.x0 + i as f64 * g.dx, g.y0 + (j as f64 + 0.5) * g.dy]);
        }
    }
    let mut yf = Vec::with_capacity(g.y_faces());
    if g.is_2d() {
        for j in 0..=g.my {
            for i in 0..g.mx {
                yf.push([g.x0 + (i as f64 + 0.5) * g.dx, g.y0 + j as f64 * g.dy]);
            }
        }
    }
    (xf, yf)
}

/// `u_x = u_mean + Σ √λ_k g_k^x ξ_k`, `u_y = Σ √λ_k g_k^y ξ_k` at the face
/// centres, projected onto the basis.
pub fn uniform_mean_inflow_field(
    grid: &Grid,
    u_mean: f64,
    kl: Option<&VectorKl>,
    basis: &MwBasis,
    xi: XiMap,
) -> Result<VelocityField> {
    let p = basis.len();
    let mut ux = vec![0.0; grid.x_faces() * p];
    let mut uy = vec![0.0; grid.y_faces() * p];
    for f in 0..grid.x_faces() {
        ux[f * p] = u_mean;
    }
    let Some(kl) = kl else {
        return Ok(VelocityField { p, ux, uy });
    };
    let modes = InflowModes::new(grid, kl)?;
    let coef = xi_coefficients(basis, xi, kl.eigenvalues.len())?;
    for (k, c) in coef.iter().enumerate() {
        for (f, g) in modes.scaled_x[k].iter().enumerate() {
            for m in 0..p {
                ux[f * p + m] += g * c[m];
            }
        }
        for (f, g) in modes.scaled_y[k].iter().enumerate() {
            for m in 0..p {
                uy[f * p + m] += g * c[m];
            }
        }
    }
    Ok(VelocityField { p, ux, uy })
}

/// Deterministic face velocities of one realization of the inflow field.
pub fn inflow_realization(
    grid: &Grid,
    u_mean: f64,
    modes: Option<&InflowModes>,
    xi: &[f64],
) -> VelocityField {
    let (nx, ny) = (grid.x_faces(), grid.y_faces());
    let mut ux = vec![u_mean; nx];
    let mut uy = vec![0.0; ny];
    if let Some(m) = modes {
        for (k, x) in xi.iter().enumerate().take(m.scaled_x.len()) {
            ux.iter_mut()
                .zip(&m.scaled_x[k])
                .for_each(|(u, g)| *u += g * x);
            uy.iter_mut()
                .zip(&m.scaled_y[k])
                .for_each(|(u, g)| *u += g * x);
        }
    }
    VelocityField { p: 1, ux, uy }
}

/// `√λ_k g_k` tabulated at the face centres.
#[derive(Debug, Clone)]
pub struct InflowModes {
    pub scaled_x: Vec<Vec<f64>>,
    pub scaled_y: Vec<Vec<f64>>,
}

impl InflowModes {
    pub fn new(grid: &Grid, kl: &VectorKl) -> Result<Self> {
        let (xf, yf) = face_points(grid);
        let mut scaled_x = Vec::new();
        let mut scaled_y = Vec::new();
        for k in 0..kl.eigenvalues.len() {
            let s = kl.eigenvalues[k].sqrt();
            let mut a = Vec::with_capacity(xf.len());
            for pt in &xf {
                a.push(s * kl.extend(k, *pt)?.0);
            }
            let mut b = Vec::with_capacity(yf.len());
            for pt in &yf {
                b.push(s * kl.extend(k, *pt)?.1);
            }
            scaled_x.push(a);
            scaled_y.push(b);
        }
        Ok(InflowModes { scaled_x, scaled_y })
    }
}
