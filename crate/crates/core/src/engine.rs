//! Finite-volume transport of the stochastic Galerkin system on uniform
//! Cartesian grids.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgError};
use crate::linalg::{gershgorin, symmetric_extremes};
use crate::tensors::{e1, ProductTensors};
use crate::transport::{
    eval_flux, frac_flow, frac_flow_derivative, max_frac_flow_derivative, widen, FluxEval,
    FluxParams, FluxWorkspace, DENSE_EIGEN_LIMIT, SPEED_SAFETY,
};

pub const DEFAULT_CFL_1D: f64 = 0.45;
pub const DEFAULT_CFL_2D: f64 = 0.25;
pub const DEFAULT_PENALTY_STRENGTH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub mx: usize,
    /// 1 for one-dimensional grids.
    pub my: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
    pub porosity: Vec<f64>,
    two_d: bool,
}

impl Grid {
    pub fn one_d(m: usize, x0: f64, x1: f64) -> Result<Self> {
        if m == 0 || !(x1 > x0) {
            return Err(SgError::Config(format!(
                "bad 1D grid: {m} cells on [{x0}, {x1}]"
            )));
        }
        Ok(Grid {
            mx: m,
            my: 1,
            dx: (x1 - x0) / m as f64,
            dy: 1.0,
            x0,
            y0: 0.0,
            porosity: vec![1.0; m],
            two_d: false,
        })
    }

    /// `mx × my` cells on `[0, lx] × [0, ly]`.
    pub fn two_d(mx: usize, my: usize, lx: f64, ly: f64) -> Result<Self> {
        if mx == 0 || my == 0 || !(lx > 0.0 && ly > 0.0) {
            return Err(SgError::Config(format!(
                "bad 2D grid: {mx}x{my} on {lx}x{ly}"
            )));
        }
        Ok(Grid {
            mx,
            my,
            dx: lx / mx as f64,
            dy: ly / my as f64,
            x0: 0.0,
            y0: 0.0,
            porosity: vec![1.0; mx * my],
            two_d: true,
        })
    }

    pub fn with_porosity(mut self, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != self.cells() || phi.iter().any(|p| !(*p > 0.0)) {
            return Err(SgError::Config("porosity must be positive per cell".into()));
        }
        self.porosity = phi;
        Ok(self)
    }

    pub fn is_2d(&self) -> bool {
        self.two_d
    }

    pub fn cells(&self) -> usize {
        self.mx * self.my
    }

    /// Cell index, `x` fastest.
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.mx + i
    }

    pub fn ij(&self, c: usize) -> (usize, usize) {
        (c % self.mx, c / self.mx)
    }

    pub fn center(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.ij(c);
        [
            self.x0 + (i as f64 + 0.5) * self.dx,
            self.y0 + (j as f64 + 0.5) * self.dy,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn x_faces(&self) -> usize {
        (self.mx + 1) * self.my
    }

    pub fn y_faces(&self) -> usize {
        if self.two_d {
            self.mx * (self.my + 1)
        } else {
            0
        }
    }
}

/// Saturation coefficients, `p` per cell, cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SgField {
    pub p: usize,
    pub data: Vec<f64>,
}

impl SgField {
    pub fn constant(cells: usize, value: &[f64]) -> Self {
        SgField {
            p: value.len(),
            data: value
                .iter()
                .copied()
                .cycle()
                .take(cells * value.len())
                .collect(),
        }
    }

    pub fn from_fn(cells: usize, p: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(cells * p);
        for c in 0..cells {
            let v = f(c);
            debug_assert_eq!(v.len(), p);
            data.extend_from_slice(&v);
        }
        SgField { p, data }
    }

    pub fn cells(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.data[c * self.p..(c + 1) * self.p]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.p..(c + 1) * self.p]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(SgError::NonFinite {
                cell: k / self.p,
                mode: k % self.p,
            }),
            None => Ok(()),
        }
    }

    /// Mode-1 mass `Σ φ S₁ ΔV`.
    pub fn mass(&self, grid: &Grid) -> f64 {
        (0..self.cells())
            .map(|c| grid.porosity[c] * self.data[c * self.p])
            .sum::<f64>()
            * grid.volume()
    }
}

/// Per-cell mean and standard deviation of an orthonormal expansion.
pub fn field_statistics(field: &SgField) -> (Vec<f64>, Vec<f64>) {
    let p = field.p;
    field
        .data
        .chunks(p)
        .map(|c| (c[0], c[1..].iter().map(|v| v * v).sum::<f64>().sqrt()))
        .unzip()
}

/// Face velocities (per unit area), `p` coefficients per face.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub p: usize,
    /// `(mx+1)·my` faces normal to `x`, index `j·(mx+1) + i`.
    pub ux: Vec<f64>,
    /// `mx·(my+1)` faces normal to `y`, index `j·mx + i`; empty in 1D.
    pub uy: Vec<f64>,
}

impl VelocityField {
    pub fn uniform(grid: &Grid, ux: &[f64], uy: &[f64]) -> Self {
        let p = ux.len();
        VelocityField {
            p,
            ux: ux
                .iter()
                .copied()
                .cycle()
                .take(grid.x_faces() * p)
                .collect(),
            uy: uy
                .iter()
                .copied()
                .cycle()
                .take(grid.y_faces() * p)
                .collect(),
        }
    }

    /// Averages cell-centered coefficients onto faces; boundary faces take
    /// the adjacent cell value.
    pub fn from_cells(grid: &Grid, p: usize, ux: &[f64], uy: &[f64]) -> Self {
        let mut vx = vec![0.0; grid.x_faces() * p];
        for j in 0..grid.my {
            for i in 0..=grid.mx {
                let l = grid.cell(i.saturating_sub(1), j);
                let r = grid.cell(i.min(grid.mx - 1), j);
                let f = j * (grid.mx + 1) + i;
                for k in 0..p {
                    vx[f * p + k] = 0.5 * (ux[l * p + k] + ux[r * p + k]);
                }
            }
        }
        let mut vy = vec![0.0; grid.y_faces() * p];
        if grid.is_2d() {
            for j in 0..=grid.my {
                for i in 0..grid.mx {
                    let b = grid.cell(i, j.saturating_sub(1));
                    let t = grid.cell(i, j.min(grid.my - 1));
                    let f = j * grid.mx + i;
                    for k in 0..p {
                        vy[f * p + k] = 0.5 * (uy[b * p + k] + uy[t * p + k]);
                    }
                }
            }
        }
        VelocityField { p, ux: vx, uy: vy }
    }

    pub fn x_face(&self, f: usize) -> &[f64] {
        &self.ux[f * self.p..(f + 1) * self.p]
    }

    pub fn y_face(&self, f: usize) -> &[f64] {
        &self.uy[f * self.p..(f + 1) * self.p]
    }

    pub fn max_mean_speed(&self) -> f64 {
        self.ux
            .chunks(self.p)
            .chain(self.uy.chunks(self.p))
            .map(|c| c[0].abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyInjection {
    /// Extent along the side, in physical coordinates.
    pub lo: f64,
    pub hi: f64,
    pub value: Vec<f64>,
    /// Dimensionless relaxation strength `κ`.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Dirichlet(Vec<f64>),
    /// Zero-gradient extrapolation.
    Outflow,
    NoFlow,
    /// Face flux zero on the whole side; cells in range relax towards
    /// `value` at a rate proportional to the normal velocity.
    Penalty(PenaltyInjection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub left: Boundary,
    pub right: Boundary,
    pub bottom: Boundary,
    pub top: Boundary,
}

impl Boundaries {
    pub fn all(b: Boundary) -> Self {
        Boundaries {
            left: b.clone(),
            right: b.clone(),
            bottom: b.clone(),
            top: b,
        }
    }

    pub fn side(&self, s: Side) -> &Boundary {
        match s {
            Side::Left => &self.left,
            Side::Right => &self.right,
            Side::Bottom => &self.bottom,
            Side::Top => &self.top,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceKind {
    /// Injects fluid carrying saturation `value`.
    Injection(Vec<f64>),
    /// Produces at the local fractional flow.
    Production,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub cell: usize,
    /// Volumetric rate, positive.
    pub rate: f64,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstruction {
    FirstOrder,
    Minmod,
    /// Central slopes without limiting.
    Unlimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub flux: FluxParams,
    pub cfl: f64,
    pub dt_max: f64,
    pub reconstruction: Reconstruction,
}

impl EngineConfig {
    pub fn new(flux: FluxParams, two_d: bool) -> Self {
        EngineConfig {
            flux,
            cfl: if two_d {
                DEFAULT_CFL_2D
            } else {
                DEFAULT_CFL_1D
            },
            dt_max: 1e-2,
            reconstruction: Reconstruction::Minmod,
        }
    }
}

pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Face values `(left, right)` of cell `c` from its neighbours, limited
/// coefficient by coefficient.
pub fn minmod_reconstruct(prev: &[f64], c: &[f64], next: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let slope: Vec<f64> = (0..c.len())
        .map(|k| minmod(c[k] - prev[k], next[k] - c[k]))
        .collect();
    (
        c.iter().zip(&slope).map(|(v, s)| v - 0.5 * s).collect(),
        c.iter().zip(&slope).map(|(v, s)| v + 0.5 * s).collect(),
    )
}

/// Evaluates the HLL flux between `sl` and `sr` into `out`. Returns the flux
/// MACs and the widened speed bounds.
pub fn hll_flux(
    sl: &[f64],
    sr: &[f64],
    u: &[f64],
    params: &FluxParams,
    t: &ProductTensors,
    ws: &mut FluxWorkspace,
    fl: &mut [f64],
    fr: &mut [f64],
    out: &mut [f64],
) -> Result<(u64, f64, f64)> {
    if sl.len() == 1 {
        return Ok(hll_scalar(sl[0], sr[0], u[0], params.a, fl, fr, out));
    }
    let a: FluxEval = eval_flux(sl, u, params, t, ws, fl, true)?;
    let b: FluxEval = eval_flux(sr, u, params, t, ws, fr, true)?;
    let (mut lo, mut hi) = (a.lo.min(b.lo), a.hi.max(b.hi));
    let mut macs = a.macs + b.macs;
    if sl != sr {
        // states 0 and 1 both have zero characteristic speed; the average
        // state catches the fan in between
        let mut mid = ws.take_mid();
        for k in 0..out.len() {
            mid[k] = 0.5 * (sl[k] + sr[k]);
        }
        let m = eval_flux(&mid, u, params, t, ws, out, true);
        ws.put_mid(mid);
        let m = m?;
        lo = lo.min(m.lo);
        hi = hi.max(m.hi);
        macs += m.macs;
    }
    let (lo, hi) = widen(lo, hi);
    if lo >= 0.0 {
        out.copy_from_slice(fl);
    } else if hi <= 0.0 {
        out.copy_from_slice(fr);
    } else if !(1.0 / (hi - lo)).is_finite() {
        // speeds vanish to subnormal range ahead of a front
        for k in 0..out.len() {
            out[k] = 0.5 * (fl[k] + fr[k]);
        }
    } else {
        let inv = 1.0 / (hi - lo);
        for k in 0..out.len() {
            out[k] = (hi * fl[k] - lo * fr[k] + lo * hi * (sr[k] - sl[k])) * inv;
        }
    }
    Ok((macs, lo, hi))
}

fn hll_scalar(
    sl: f64,
    sr: f64,
    u: f64,
    a: f64,
    fl: &mut [f64],
    fr: &mut [f64],
    out: &mut [f64],
) -> (u64, f64, f64) {
    fl[0] = u * frac_flow(sl, a);
    fr[0] = u * frac_flow(sr, a);
    let dl = u * frac_flow_derivative(sl, a);
    let dr = u * frac_flow_derivative(sr, a);
    let (mut lo, mut hi) = (dl.min(dr), dl.max(dr));
    if sl != sr {
        let dm = u * frac_flow_derivative(0.5 * (sl + sr), a);
        lo = lo.min(dm);
        hi = hi.max(dm);
    }
    let (lo, hi) = widen(lo, hi);
    out[0] = if lo >= 0.0 {
        fl[0]
    } else if hi <= 0.0 {
        fr[0]
    } else if !(1.0 / (hi - lo)).is_finite() {
        0.5 * (fl[0] + fr[0])
    } else {
        (hi * fl[0] - lo * fr[0] + lo * hi * (sr - sl)) / (hi - lo)
    };
    (if sl != sr { 3 } else { 2 }, lo, hi)
}

/// Result of one spatial-operator evaluation.
#[derive(Debug, Clone, Default)]
pub struct RhsInfo {
    /// Net mode-1 inflow through the boundary faces per unit time.
    pub boundary_rate: f64,
    /// Mode-1 mass added by point sources per unit time.
    pub source_rate: f64,
    pub max_speed_x: f64,
    pub max_speed_y: f64,
    /// Largest `rate / (φ V)` over production cells.
    pub production_rate: f64,
    pub macs: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StepReport {
    pub dt: f64,
    pub mass_before: f64,
    pub mass_after: f64,
    pub boundary_inflow: f64,
    pub source_inflow: f64,
    pub penalty_inflow: f64,
    /// `|ΔM − inflows|`.
    pub conservation_error: f64,
    pub macs: u64,
    pub halved: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub macs: u64,
    pub halvings: usize,
    pub max_conservation_error: f64,
}

/// One transport problem: grid, boundaries, velocity and sources.
pub struct Solver<'a> {
    pub grid: &'a Grid,
    pub bcs: &'a Boundaries,
    pub vel: &'a VelocityField,
    pub sources: &'a [PointSource],
    pub tensors: &'a ProductTensors,
    pub cfg: EngineConfig,
    /// Scalar speed envelope `max_faces ρ(A(u)) · max f'` per direction.
    envelope: [f64; 2],
}

struct FaceScratch {
    ws: FluxWorkspace,
    sl: Vec<f64>,
    sr: Vec<f64>,
    fl: Vec<f64>,
    fr: Vec<f64>,
}

impl FaceScratch {
    fn new(p: usize) -> Self {
        FaceScratch {
            ws: FluxWorkspace::new(p),
            sl: vec![0.0; p],
            sr: vec![0.0; p],
            fl: vec![0.0; p],
            fr: vec![0.0; p],
        }
    }
}

#[derive(Clone, Copy)]
enum Dir {
    X,
    Y,
}

fn galerkin_radius(u: &[f64], t: &ProductTensors) -> f64 {
    if u.len() == 1 {
        return u[0].abs();
    }
    let a = t.mat_a(u);
    let (lo, hi) = if u.len() > DENSE_EIGEN_LIMIT {
        gershgorin(&a)
    } else {
        symmetric_extremes(&a)
    };
    lo.abs().max(hi.abs())
}

impl<'a> Solver<'a> {
    pub fn new(
        grid: &'a Grid,
        bcs: &'a Boundaries,
        vel: &'a VelocityField,
        sources: &'a [PointSource],
        tensors: &'a ProductTensors,
        cfg: EngineConfig,
    ) -> Result<Self> {
        let mut s = Solver {
            grid,
            bcs,
            vel,
            sources,
            tensors,
            cfg,
            envelope: [0.0; 2],
        };
        s.validate()?;
        let fp = max_frac_flow_derivative(cfg.flux.a);
        // ρ(A(u)) ≤ max_ξ |u(ξ)|, so realizations never outrun this by much
        let radius = |data: &[f64]| {
            let mut seen: Vec<&[f64]> = Vec::new();
            let mut r: f64 = 0.0;
            for c in data.chunks(vel.p) {
                if seen.iter().any(|v| *v == c) {
                    continue;
                }
                r = r.max(galerkin_radius(c, tensors));
                if seen.len() < 8 {
                    seen.push(c);
                }
            }
            r
        };
        let w = 1.0 + SPEED_SAFETY;
        s.envelope = [w * radius(&vel.ux) * fp, w * radius(&vel.uy) * fp];
        Ok(s)
    }

    pub fn envelope(&self) -> [f64; 2] {
        self.envelope
    }

    fn p(&self) -> usize {
        self.tensors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.vel.p != p {
            return Err(SgError::Config(format!(
                "velocity has {} modes, basis has {p}",
                self.vel.p
            )));
        }
        if self.vel.ux.len() != self.grid.x_faces() * p
            || self.vel.uy.len() != self.grid.y_faces() * p
        {
            return Err(SgError::Config(
                "velocity field does not match the grid".into(),
            ));
        }
        for side in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
            match self.bcs.side(side) {
                Boundary::Dirichlet(v) if v.len() != p => {
                    return Err(SgError::Config(format!(
                        "{side:?} Dirichlet value needs {p} modes"
                    )));
                }
                Boundary::Penalty(pen) => {
                    if pen.value.len() != p {
                        return Err(SgError::Config(format!(
                            "{side:?} injection value needs {p} modes"
                        )));
                    }
                    let (a, b) = self.side_extent(side);
                    if pen.lo < a - 1e-12 || pen.hi > b + 1e-12 || pen.lo > pen.hi {
                        return Err(SgError::Config(format!(
                            "{side:?} injection range [{}, {}] outside [{a}, {b}]",
                            pen.lo, pen.hi
                        )));
                    }
                }
                _ => {}
            }
        }
        for s in self.sources {
            if s.cell >= self.grid.cells() || !(s.rate >= 0.0) {
                return Err(SgError::Config(format!(
                    "bad point source at cell {}",
                    s.cell
                )));
            }
        }
        Ok(())
    }

    fn side_extent(&self, side: Side) -> (f64, f64) {
        let g = self.grid;
        match side {
            Side::Left | Side::Right => (g.y0, g.y0 + g.my as f64 * g.dy),
            Side::Bottom | Side::Top => (g.x0, g.x0 + g.mx as f64 * g.dx),
        }
    }

    /// Cells adjacent to `side` whose centres lie in the injection range.
    pub fn penalty_cells(&self, side: Side, pen: &PenaltyInjection) -> Vec<(usize, usize)> {
        let g = self.grid;
        let mut out = Vec::new();
        match side {
            Side::Left | Side::Right => {
                let i = if matches!(side, Side::Left) {
                    0
                } else {
                    g.mx - 1
                };
                let fi = if matches!(side, Side::Left) { 0 } else { g.mx };
                for j in 0..g.my {
                    let y = g.center(g.cell(i, j))[1];
                    if y >= pen.lo && y <= pen.hi {
                        out.push((g.cell(i, j), j * (g.mx + 1) + fi));
                    }
                }
            }
            Side::Bottom | Side::Top => {
                let j = if matches!(side, Side::Bottom) {
                    0
                } else {
                    g.my - 1
                };
                let fj = if matches!(side, Side::Bottom) {
                    0
                } else {
                    g.my
                };
                for i in 0..g.mx {
                    let x = g.center(g.cell(i, j))[0];
                    if x >= pen.lo && x <= pen.hi {
                        out.push((g.cell(i, j), fj * g.mx + i));
                    }
                }
            }
        }
        out
    }

    fn slopes(&self, s: &SgField, dir: Dir) -> Vec<f64> {
        let g = self.grid;
        let p = s.p;
        let mut out = vec![0.0; s.data.len()];
        if matches!(self.cfg.reconstruction, Reconstruction::FirstOrder) {
            return out;
        }
        let (n_along, lo_side, hi_side) = match dir {
            Dir::X => (g.mx, Side::Left, Side::Right),
            Dir::Y => (g.my, Side::Bottom, Side::Top),
        };
        for c in 0..g.cells() {
            let (i, j) = g.ij(c);
            let k_along = if matches!(dir, Dir::X) { i } else { j };
            let neighbour = |kk: usize| match dir {
                Dir::X => g.cell(kk, j),
                Dir::Y => g.cell(i, kk),
            };
            let cur = s.cell(c);
            let prev: &[f64] = if k_along > 0 {
                s.cell(neighbour(k_along - 1))
            } else {
                match self.bcs.side(lo_side) {
                    Boundary::Dirichlet(v) => v,
                    _ => cur,
                }
            };
            let next: &[f64] = if k_along + 1 < n_along {
                s.cell(neighbour(k_along + 1))
            } else {
                match self.bcs.side(hi_side) {
                    Boundary::Dirichlet(v) => v,
                    _ => cur,
                }
            };
            for k in 0..p {
                let (a, b) = (cur[k] - prev[k], next[k] - cur[k]);
                out[c * p + k] = match self.cfg.reconstruction {
                    Reconstruction::Minmod => minmod(a, b),
                    Reconstruction::Unlimited => 0.5 * (a + b),
                    Reconstruction::FirstOrder => 0.0,
                };
            }
        }
        out
    }

    /// Fluxes through all faces normal to `dir`. Returns MACs and the largest
    /// speed magnitude.
    fn face_fluxes(
        &self,
        s: &SgField,
        slopes: &[f64],
        dir: Dir,
        out: &mut [f64],
    ) -> Result<(u64, f64)> {
        let g = self.grid;
        let p = s.p;
        let (n_faces_along, lo_side, hi_side) = match dir {
            Dir::X => (g.mx + 1, Side::Left, Side::Right),
            Dir::Y => (g.my + 1, Side::Bottom, Side::Top),
        };
        let params = self.cfg.flux;
        let t = self.tensors;
        let body = |sc: &mut FaceScratch, (f, o): (usize, &mut [f64])| -> Result<(u64, f64)> {
            let (along, across, u) = match dir {
                Dir::X => (f % (g.mx + 1), f / (g.mx + 1), self.vel.x_face(f)),
                Dir::Y => (f / g.mx, f % g.mx, self.vel.y_face(f)),
            };
            let cell = |k: usize| match dir {
                Dir::X => g.cell(k, across),
                Dir::Y => g.cell(across, k),
            };
            let face_state = |c: usize, sign: f64, buf: &mut [f64]| {
                for k in 0..p {
                    buf[k] = s.data[c * p + k] + sign * 0.5 * slopes[c * p + k];
                }
            };
            if along == 0 || along == n_faces_along - 1 {
                let lo = along == 0;
                let side = if lo { lo_side } else { hi_side };
                let interior = cell(if lo { 0 } else { along - 1 });
                match self.bcs.side(side) {
                    Boundary::NoFlow | Boundary::Penalty(_) => {
                        o.iter_mut().for_each(|v| *v = 0.0);
                        return Ok((0, 0.0));
                    }
                    Boundary::Dirichlet(v) => {
                        if lo {
                            sc.sl.copy_from_slice(v);
                            face_state(interior, -1.0, &mut sc.sr);
                        } else {
                            face_state(interior, 1.0, &mut sc.sl);
                            sc.sr.copy_from_slice(v);
                        }
                    }
                    Boundary::Outflow => {
                        face_state(interior, if lo { -1.0 } else { 1.0 }, &mut sc.sl);
                        sc.sr.copy_from_slice(&sc.sl);
                    }
                }
            } else {
                face_state(cell(along - 1), 1.0, &mut sc.sl);
                face_state(cell(along), -1.0, &mut sc.sr);
            }
            let (macs, lo, hi) = hll_flux(
                &sc.sl, &sc.sr, u, &params, t, &mut sc.ws, &mut sc.fl, &mut sc.fr, o,
            )?;
            Ok((macs, lo.abs().max(hi.abs())))
        };
        let join = |a: (u64, f64), b: (u64, f64)| (a.0 + b.0, a.1.max(b.1));
        if p == 1 {
            // scalar runs are parallel one level up
            let mut sc = FaceScratch::new(p);
            out.chunks_mut(p)
                .enumerate()
                .try_fold((0, 0.0), |acc, x| Ok(join(acc, body(&mut sc, x)?)))
        } else {
            out.par_chunks_mut(p)
                .enumerate()
                .map_init(|| FaceScratch::new(p), body)
                .try_reduce(|| (0, 0.0), |a, b| Ok(join(a, b)))
        }
    }

    /// Spatial operator `L(S)` including point sources.
    pub fn rhs(&self, s: &SgField, out: &mut SgField) -> Result<RhsInfo> {
        let g = self.grid;
        let p = s.p;
        let mut info = RhsInfo::default();
        out.data.iter_mut().for_each(|v| *v = 0.0);

        let slopes = self.slopes(s, Dir::X);
        let mut fx = vec![0.0; g.x_faces() * p];
        let (m, sp) = self.face_fluxes(s, &slopes, Dir::X, &mut fx)?;
        info.macs += m;
        info.max_speed_x = sp;
        for j in 0..g.my {
            for i in 0..g.mx {
                let c = g.cell(i, j);
                let (fl, fr) = (j * (g.mx + 1) + i, j * (g.mx + 1) + i + 1);
                let inv = 1.0 / (g.porosity[c] * g.dx);
                for k in 0..p {
                    out.data[c * p + k] -= (fx[fr * p + k] - fx[fl * p + k]) * inv;
                }
            }
            let (fl, fr) = (j * (g.mx + 1), j * (g.mx + 1) + g.mx);
            info.boundary_rate += (fx[fl * p] - fx[fr * p]) * g.dy;
        }

        if g.is_2d() {
            let slopes = self.slopes(s, Dir::Y);
            let mut fy = vec![0.0; g.y_faces() * p];
            let (m, sp) = self.face_fluxes(s, &slopes, Dir::Y, &mut fy)?;
            info.macs += m;
            info.max_speed_y = sp;
            for j in 0..g.my {
                for i in 0..g.mx {
                    let c = g.cell(i, j);
                    let (fb, ft) = (j * g.mx + i, (j + 1) * g.mx + i);
                    let inv = 1.0 / (g.porosity[c] * g.dy);
                    for k in 0..p {
                        out.data[c * p + k] -= (fy[ft * p + k] - fy[fb * p + k]) * inv;
                    }
                }
            }
            for i in 0..g.mx {
                info.boundary_rate += (fy[i * p] - fy[(g.my * g.mx + i) * p]) * g.dx;
            }
        }

        if !self.sources.is_empty() {
            let mut ws = FluxWorkspace::new(p);
            let unit = e1(p);
            let mut f = vec![0.0; p];
            for src in self.sources {
                let scale = src.rate / (g.porosity[src.cell] * g.volume());
                match &src.kind {
                    SourceKind::Injection(v) => {
                        for k in 0..p {
                            out.data[src.cell * p + k] += scale * v[k];
                        }
                        info.source_rate += src.rate * v[0];
                    }
                    SourceKind::Production => {
                        let e = eval_flux(
                            s.cell(src.cell),
                            &unit,
                            &self.cfg.flux,
                            self.tensors,
                            &mut ws,
                            &mut f,
                            false,
                        )?;
                        info.macs += e.macs;
                        for k in 0..p {
                            out.data[src.cell * p + k] -= scale * f[k];
                        }
                        info.source_rate -= src.rate * f[0];
                        info.production_rate = info.production_rate.max(scale);
                    }
                }
            }
        }
        Ok(info)
    }

    fn dt_from(&self, info: &RhsInfo) -> f64 {
        let g = self.grid;
        let phi_min = g.porosity.iter().copied().fold(f64::INFINITY, f64::min);
        let sx = info.max_speed_x.max(self.envelope[0]);
        let sy = info.max_speed_y.max(self.envelope[1]);
        let mut dt = if g.is_2d() {
            let sp = sx + sy;
            if sp > 0.0 {
                self.cfg.cfl * phi_min * g.dx.min(g.dy) / sp
            } else {
                f64::INFINITY
            }
        } else if sx > 0.0 {
            self.cfg.cfl * phi_min * g.dx / sx
        } else {
            f64::INFINITY
        };
        if info.production_rate > 0.0 {
            let fp = max_frac_flow_derivative(self.cfg.flux.a);
            dt = dt.min(self.cfg.cfl / (info.production_rate * fp));
        }
        dt.min(self.cfg.dt_max)
    }

    /// CFL-limited step size at state `s`.
    pub fn stable_dt(&self, s: &SgField) -> Result<f64> {
        let mut tmp = s.clone();
        let info = self.rhs(s, &mut tmp)?;
        Ok(self.dt_from(&info))
    }

    /// Backward-Euler relaxation of the injection cells; returns the mode-1
    /// mass added.
    fn apply_penalties(&self, s: &mut SgField, dt: f64) -> Result<f64> {
        let g = self.grid;
        let p = s.p;
        let mut added = 0.0;
        for side in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
            let Boundary::Penalty(pen) = self.bcs.side(side) else {
                continue;
            };
            let (h, sign) = match side {
                Side::Left => (g.dx, 1.0),
                Side::Right => (g.dx, -1.0),
                Side::Bottom => (g.dy, 1.0),
                Side::Top => (g.dy, -1.0),
            };
            for (c, f) in self.penalty_cells(side, pen) {
                let u: Vec<f64> = match side {
                    Side::Left | Side::Right => self.vel.x_face(f),
                    _ => self.vel.y_face(f),
                }
                .iter()
                .map(|v| sign * v)
                .collect();
                let theta = dt * pen.strength / (h * g.porosity[c]);
                let before = s.cell(c)[0];
                apply_penalty_injection(s.cell_mut(c), &u, &pen.value, theta, self.tensors)?;
                added += (s.cell(c)[0] - before) * g.porosity[c] * g.volume();
            }
        }
        let _ = p;
        Ok(added)
    }

    /// One SSP-RK2 step of size at most `dt_cap`; the step size is the
    /// stable one at the current state. On a lost positive definiteness the
    /// step is retried once at half size.
    pub fn step(&self, s: &mut SgField, dt_cap: f64) -> Result<StepReport> {
        let mut k0 = s.clone();
        let info0 = self.rhs(s, &mut k0)?;
        let dt = self.dt_from(&info0).min(dt_cap);
        match self.finish_step(s, &k0, &info0, dt) {
            Ok(r) => Ok(r),
            Err(SgError::NotPositiveDefinite { .. }) => {
                let mut r = self.finish_step(s, &k0, &info0, 0.5 * dt)?;
                r.halved = true;
                Ok(r)
            }
            Err(e) => Err(e),
        }
    }

    /// Fixed-size step without the retry.
    pub fn step_fixed(&self, s: &mut SgField, dt: f64) -> Result<StepReport> {
        let mut k0 = s.clone();
        let info0 = self.rhs(s, &mut k0)?;
        self.finish_step(s, &k0, &info0, dt)
    }

    fn finish_step(
        &self,
        s: &mut SgField,
        k0: &SgField,
        info0: &RhsInfo,
        dt: f64,
    ) -> Result<StepReport> {
        let mass_before = s.mass(self.grid);
        let mut s1 = s.clone();
        s1.data
            .iter_mut()
            .zip(&k0.data)
            .for_each(|(v, k)| *v += dt * k);
        s1.check_finite()?;
        let mut k1 = s1.clone();
        let info1 = self.rhs(&s1, &mut k1)?;
        let mut next = s.clone();
        for ((n, a), (b, k)) in next
            .data
            .iter_mut()
            .zip(&s.data)
            .zip(s1.data.iter().zip(&k1.data))
        {
            *n = 0.5 * a + 0.5 * (b + dt * k);
        }
        next.check_finite()?;
        let penalty_inflow = self.apply_penalties(&mut next, dt)?;
        next.check_finite()?;
        let mass_after = next.mass(self.grid);
        let boundary_inflow = 0.5 * dt * (info0.boundary_rate + info1.boundary_rate);
        let source_inflow = 0.5 * dt * (info0.source_rate + info1.source_rate);
        *s = next;
        Ok(StepReport {
            dt,
            mass_before,
            mass_after,
            boundary_inflow,
            source_inflow,
            penalty_inflow,
            conservation_error: (mass_after
                - mass_before
                - boundary_inflow
                - source_inflow
                - penalty_inflow)
                .abs(),
            macs: info0.macs + info1.macs,
            halved: false,
        })
    }

    /// Advances from `t0` to exactly `t1`.
    pub fn advance(&self, s: &mut SgField, t0: f64, t1: f64) -> Result<RunStats> {
        let mut stats = RunStats::default();
        let mut t = t0;
        while t < t1 - 1e-14 * t1.abs().max(1.0) {
            let r = self.step(s, t1 - t)?;
            t += r.dt;
            stats.steps += 1;
            stats.macs += r.macs;
            stats.halvings += r.halved as usize;
            stats.max_conservation_error = stats.max_conservation_error.max(r.conservation_error);
        }
        Ok(stats)
    }
}

/// Solves `(I + θ A(u)) S' = S + θ A(u) S_inj` in place, the implicit form
/// of the source `θ · pseudo_mul(u, S_inj − S)`.
pub fn apply_penalty_injection(
    s: &mut [f64],
    u: &[f64],
    s_inj: &[f64],
    theta: f64,
    t: &ProductTensors,
) -> Result<()> {
    let p = s.len();
    if p == 1 {
        let k = theta * u[0];
        s[0] = (s[0] + k * s_inj[0]) / (1.0 + k);
        return Ok(());
    }
    let a = t.mat_a(u);
    let lhs = DMatrix::identity(p, p) + a.scale(theta);
    let rhs = DVector::from_column_slice(s) + (&a * DVector::from_column_slice(s_inj)).scale(theta);
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SgError::Singular("penalty system".into()))?;
    s.copy_from_slice(sol.as_slice());
    Ok(())
}

/// Writes the coefficients as little-endian `f64` rows (one per cell) and a
/// JSON sidecar `<path>.json` describing the shape.
pub fn write_coefficient_dump(
    path: &Path,
    field: &SgField,
    extra: serde_json::Value,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| SgError::io(path, e))?;
    let side = serde_json::json!({
        "rows": field.cells(),
        "cols": field.p,
        "dtype": "f64-le",
        "layout": "row = cell, column = mode",
        "meta": extra,
    });
    let sp = path.with_extension("json");
    std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| SgError::io(&sp, e))?;
    Ok(())
}

pub fn read_coefficient_dump(path: &Path) -> Result<SgField> {
    let sp = path.with_extension("json");
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sp).map_err(|e| SgError::io(&sp, e))?)?;
    let cols = side["cols"]
        .as_u64()
        .ok_or_else(|| SgError::Config("sidecar lacks cols".into()))? as usize;
    let bytes = std::fs::read(path).map_err(|e| SgError::io(path, e))?;
    if cols == 0 || bytes.len() % (8 * cols) != 0 {
        return Err(SgError::Config(
            "dump size does not match the sidecar".into(),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok(SgField { p: cols, data })
}
