//! Experiment drivers: configuration, stochastic Galerkin and Monte Carlo
//! runs, validation metrics and file output.

pub mod config;
pub mod montecarlo;
pub mod output;

use std::path::Path;
use std::time::Instant;

use crate::basis::{MwBasis, MwBasisSpec};
use crate::engine::{
    field_statistics, Boundaries, Boundary, EngineConfig, Grid, PenaltyInjection, PointSource,
    RunStats, SgField, Solver, SourceKind, VelocityField,
};
use crate::error::{Result, SgError};
use crate::kl::{
    exp_cov_eigenpairs_2d, gevp_simpson, CovarianceTable, KlExpansion, SimpsonGrid, XiMap,
};
use crate::pressure::{
    five_spot_sources, inflow_realization, lognormal_permeability, project_velocity_mw,
    solve_pressure, uniform_mean_inflow_field, velocity_rule, FluxSample, InflowModes,
    PressureProblem,
};
use crate::tensors::{e1, ProductTensors, QuadPolicy, TensorOptions};
use crate::transport::{hyperbolicity_check, shock_saturation, FluxMode, FluxParams};

pub use config::{ExperimentKind, RunConfig};
pub use montecarlo::{run_monte_carlo, sample_xi, McResult, Moments};
pub use output::{RunManifest, Snapshot};

use output::*;

/// In-memory result of a run; [`write_outputs`] persists it.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub points: Vec<[f64; 2]>,
    pub two_d: bool,
    pub snapshots: Vec<Snapshot>,
}

/// Relative threshold for mean-curve jumps in the shock-band check, as a
/// fraction of `S*/2^{N_r}` (the jump carried by one dyadic piece).
pub const JUMP_FRACTION: f64 = 0.2;

/// Largest number of cells visited by the hyperbolicity diagnostic.
const HYPERBOLICITY_CELLS: usize = 400;

pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Riemann1d => run_riemann1d(cfg),
        ExperimentKind::LineInjection => run_line_injection(cfg),
        ExperimentKind::FiveSpot => run_five_spot(cfg),
        ExperimentKind::Bench => run_bench(cfg),
    }
}

/// Runs and writes `mean_t<t>.csv`, `std_t<t>.csv`, `timings.csv` and
/// `manifest.json`. A failed run still writes a manifest carrying the error.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out).map_err(|e| SgError::io(out, e))?;
    match run(cfg) {
        Ok(mut o) => {
            write_outputs(&mut o, out)?;
            Ok(o)
        }
        Err(e) => {
            let mut m = RunManifest::new(cfg.clone());
            m.error = Some(e.to_string());
            m.files.push("manifest.json".into());
            m.write(out)?;
            Err(e)
        }
    }
}

pub fn write_outputs(o: &mut RunOutcome, dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    for s in &o.snapshots {
        let l = time_label(s.t);
        let mean = field_csv(&o.points, o.two_d, "mean", &s.mw_mean, &s.mc_mean);
        write_text(dir, &format!("mean_t{l}.csv"), &mean, &mut files)?;
        let std = field_csv(&o.points, o.two_d, "std", &s.mw_std, &s.mc_std);
        write_text(dir, &format!("std_t{l}.csv"), &std, &mut files)?;
    }
    let timings = if o.manifest.bench.is_empty() {
        timings_csv(&o.manifest.timings)
    } else {
        bench_csv(&o.manifest.bench)
    };
    write_text(dir, "timings.csv", &timings, &mut files)?;
    files.push("manifest.json".into());
    o.manifest.files = files;
    o.manifest.write(dir)
}

fn tensor_options(mode: FluxMode) -> TensorOptions {
    TensorOptions {
        quad: match mode {
            FluxMode::Quad => QuadPolicy::Required,
            FluxMode::Trip => QuadPolicy::Skip,
        },
        ..TensorOptions::default()
    }
}

fn build_tensors(basis: &MwBasis, mode: FluxMode) -> Result<ProductTensors> {
    ProductTensors::build(basis, &basis.build_quadrature(), tensor_options(mode))
}

fn scalar_tensors() -> ProductTensors {
    let b = MwBasis::new(MwBasisSpec::one_dim(0, 0)).expect("scalar basis");
    ProductTensors::for_basis(&b).expect("scalar tensors")
}

fn engine_config(cfg: &RunConfig, flux: FluxParams) -> EngineConfig {
    let mut e = EngineConfig::new(flux, cfg.is_2d());
    e.cfl = cfg.cfl;
    e.reconstruction = cfg.reconstruction;
    e
}

fn add_stats(acc: &mut SolverSummary, r: &RunStats) {
    acc.steps += r.steps;
    acc.macs += r.macs;
    acc.halvings += r.halvings;
    acc.max_conservation_error = acc.max_conservation_error.max(r.max_conservation_error);
}

/// Advances through the snapshot times, returning a copy at each.
pub fn advance_snapshots(
    solver: &Solver,
    s: &mut SgField,
    snapshots: &[f64],
) -> Result<(Vec<SgField>, SolverSummary)> {
    let mut out = Vec::with_capacity(snapshots.len());
    let mut sum = SolverSummary::default();
    let mut t = 0.0;
    for &ts in snapshots {
        let r = solver.advance(s, t, ts)?;
        add_stats(&mut sum, &r);
        out.push(s.clone());
        t = ts;
    }
    Ok((out, sum))
}

/// Scalar (`P = 1`) run returning all snapshots concatenated.
fn deterministic_snapshots(
    grid: &Grid,
    bcs: &Boundaries,
    vel: &VelocityField,
    sources: &[PointSource],
    init: &SgField,
    cfg: &RunConfig,
    scalar: &ProductTensors,
) -> Result<Vec<f64>> {
    let ecfg = engine_config(cfg, FluxParams::full(cfg.viscosity_ratio, FluxMode::Quad));
    let solver = Solver::new(grid, bcs, vel, sources, scalar, ecfg)?;
    let mut s = init.clone();
    let (snaps, _) = advance_snapshots(&solver, &mut s, &cfg.snapshots)?;
    Ok(snaps.into_iter().flat_map(|f| f.data).collect())
}

fn hyperbolicity_summary(
    s: &SgField,
    vel: &VelocityField,
    grid: &Grid,
    a: f64,
    t: &ProductTensors,
) -> Option<HyperbolicitySummary> {
    if !t.has_quad() {
        return None;
    }
    let stride = grid.cells().div_ceil(HYPERBOLICITY_CELLS).max(1);
    let mut sum = HyperbolicitySummary {
        cells_checked: 0,
        min_denominator_eigenvalue: f64::INFINITY,
        max_denominator_asymmetry: 0.0,
        all_positive_definite: true,
        max_imag_eigenvalue: Some(0.0),
    };
    for c in (0..grid.cells()).step_by(stride) {
        let (i, j) = grid.ij(c);
        let u = vel.x_face(j * (grid.mx + 1) + i);
        let Ok(r) = hyperbolicity_check(s.cell(c), u, a, t) else {
            continue;
        };
        sum.cells_checked += 1;
        sum.min_denominator_eigenvalue = sum
            .min_denominator_eigenvalue
            .min(r.min_denominator_eigenvalue);
        sum.max_denominator_asymmetry = sum.max_denominator_asymmetry.max(r.denominator_asymmetry);
        sum.all_positive_definite &= r.positive_definite;
        sum.max_imag_eigenvalue = match (sum.max_imag_eigenvalue, r.max_imag_eigenvalue) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
    }
    Some(sum)
}

/// Splits concatenated per-snapshot fields.
fn split(v: &[f64], cells: usize) -> Vec<Vec<f64>> {
    v.chunks(cells).map(|c| c.to_vec()).collect()
}

fn snapshots_from(cfg: &RunConfig, mw: &[SgField], mc: &McResult, cells: usize) -> Vec<Snapshot> {
    let mc_mean = split(mc.mean(), cells);
    let mc_std = split(&mc.std(), cells);
    cfg.snapshots
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (m, s) = field_statistics(&mw[k]);
            Snapshot {
                t,
                mw_mean: m,
                mw_std: s,
                mc_mean: mc_mean[k].clone(),
                mc_std: mc_std[k].clone(),
            }
        })
        .collect()
}

fn mc_summary(mc: &McResult, n: usize) -> McSummary {
    McSummary {
        samples: n,
        failed: mc.failures.len(),
        failures: mc.failures.clone(),
    }
}

/// Velocity `u(ξ) = mid + half·x(ξ)/x(1)` for the configured law, so the
/// support is exactly `[u_min, u_max]`.
pub fn riemann_velocity(cfg: &RunConfig, xi_std: f64) -> f64 {
    let (lo, hi) = (cfg.riemann.u_min, cfg.riemann.u_max);
    let map = XiMap::new(cfg.xi_law);
    0.5 * (lo + hi) + 0.5 * (hi - lo) * map.map(xi_std) / map.map(1.0)
}

fn riemann_setup(grid: &Grid, p: usize) -> (Boundaries, SgField) {
    let bcs = Boundaries {
        left: Boundary::Dirichlet(e1(p)),
        right: Boundary::Outflow,
        bottom: Boundary::NoFlow,
        top: Boundary::NoFlow,
    };
    let init = SgField::from_fn(grid.cells(), p, |c| {
        if grid.center(c)[0] <= 0.0 {
            e1(p)
        } else {
            vec![0.0; p]
        }
    });
    (bcs, init)
}

fn riemann_grid(cfg: &RunConfig) -> Result<Grid> {
    Grid::one_d(cfg.grid.mx, cfg.grid.x0, cfg.grid.x0 + cfg.grid.lx)
}

/// Face positions where the cell-to-cell change of `mean` exceeds `threshold`,
/// checked against `[u_min f'(S*) t, u_max f'(S*) t]` widened by one cell.
pub fn shock_band_check(
    grid: &Grid,
    mean: &[f64],
    a: f64,
    u_min: f64,
    u_max: f64,
    t: f64,
    threshold: f64,
) -> Result<ShockBandReport> {
    let (_, fp) = shock_saturation(a)?;
    let band = [u_min * fp * t, u_max * fp * t];
    let jumps: Vec<f64> = mean
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() > threshold)
        .map(|(i, _)| grid.x0 + (i + 1) as f64 * grid.dx)
        .collect();
    let inside = !jumps.is_empty()
        && jumps
            .iter()
            .all(|x| *x >= band[0] - grid.dx && *x <= band[1] + grid.dx);
    Ok(ShockBandReport {
        t,
        band,
        cell_width: grid.dx,
        threshold,
        jumps,
        inside,
    })
}

pub fn run_riemann1d(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut sw = Stopwatch::default();
    let mut man = RunManifest::new(cfg.clone());
    let basis = MwBasis::new(cfg.basis)?;
    let p = basis.len();
    man.basis_size = p;
    let tensors = sw.time("tensors", || build_tensors(&basis, cfg.flux_mode))?;
    man.tensors = Some(tensors.stats().clone());
    let grid = riemann_grid(cfg)?;
    let u = basis.project(&basis.build_quadrature(), |x| riemann_velocity(cfg, x[0]));
    let vel = VelocityField::uniform(&grid, &u, &[]);
    let (bcs, init) = riemann_setup(&grid, p);
    let flux = FluxParams::new(cfg.viscosity_ratio, cfg.flux_mode, cfg.epsilon);
    let solver = Solver::new(&grid, &bcs, &vel, &[], &tensors, engine_config(cfg, flux))?;
    let mut s = init;
    let (mw, stats) = sw.time("mw_solve", || {
        advance_snapshots(&solver, &mut s, &cfg.snapshots)
    })?;
    man.solver = Some(stats);
    man.hyperbolicity = hyperbolicity_summary(&s, &vel, &grid, cfg.viscosity_ratio, &tensors);

    let scalar = scalar_tensors();
    let (bcs1, init1) = riemann_setup(&grid, 1);
    let mc = sw.time("monte_carlo", || {
        run_monte_carlo(
            |xi| {
                let v = VelocityField::uniform(&grid, &[riemann_velocity(cfg, xi[0])], &[]);
                deterministic_snapshots(&grid, &bcs1, &v, &[], &init1, cfg, &scalar)
            },
            cfg.mc_samples,
            cfg.seed,
            1,
        )
    })?;
    man.monte_carlo = Some(mc_summary(&mc, cfg.mc_samples));

    let snapshots = snapshots_from(cfg, &mw, &mc, grid.cells());
    man.validation.snapshots = snapshots
        .iter()
        .map(|s| snapshot_check(s, grid.mx, 1))
        .collect();
    let last = snapshots.last().expect("validated snapshots");
    let (s_star, _) = shock_saturation(cfg.viscosity_ratio)?;
    let pieces = (1usize << cfg.basis.resolution_levels) as f64;
    man.validation.shock_band = Some(shock_band_check(
        &grid,
        &last.mw_mean,
        cfg.viscosity_ratio,
        cfg.riemann.u_min,
        cfg.riemann.u_max,
        last.t,
        JUMP_FRACTION * s_star / pieces,
    )?);
    man.timings = sw.entries;
    Ok(RunOutcome {
        manifest: man,
        points: (0..grid.cells()).map(|c| grid.center(c)).collect(),
        two_d: false,
        snapshots,
    })
}

fn grid_2d(cfg: &RunConfig) -> Result<Grid> {
    Grid::two_d(cfg.grid.mx, cfg.grid.my, cfg.grid.lx, cfg.grid.ly)
}

/// Covariance table for the line-injection run: the configured file or the
/// demo kernel tabulated on the Simpson lags.
pub fn line_injection_covariance(cfg: &RunConfig) -> Result<CovarianceTable> {
    let l = &cfg.line_injection;
    match &l.covariance_file {
        Some(f) => CovarianceTable::from_csv(f),
        None => {
            let n = l.simpson_nodes - 1;
            Ok(CovarianceTable::separable_exponential(
                &l.demo_kernel,
                n,
                cfg.grid.lx / n as f64,
                n,
                cfg.grid.ly / n as f64,
            ))
        }
    }
}

fn line_injection_bcs(cfg: &RunConfig, p: usize) -> Boundaries {
    let l = &cfg.line_injection;
    Boundaries {
        left: Boundary::Penalty(PenaltyInjection {
            lo: l.inject_lo,
            hi: l.inject_hi,
            value: e1(p),
            strength: l.penalty_strength,
        }),
        right: Boundary::Outflow,
        bottom: Boundary::NoFlow,
        top: Boundary::NoFlow,
    }
}

pub fn run_line_injection(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut sw = Stopwatch::default();
    let mut man = RunManifest::new(cfg.clone());
    let l = &cfg.line_injection;
    let basis = MwBasis::new(cfg.basis)?;
    let p = basis.len();
    man.basis_size = p;
    let tensors = sw.time("tensors", || build_tensors(&basis, cfg.flux_mode))?;
    man.tensors = Some(tensors.stats().clone());
    let grid = grid_2d(cfg)?;
    let xi = XiMap::new(cfg.xi_law);

    let table = line_injection_covariance(cfg)?;
    let kl = if table.is_zero() || l.kl_terms == 0 {
        None
    } else {
        let sg = SimpsonGrid {
            nx: l.simpson_nodes,
            ny: l.simpson_nodes,
            len_x: cfg.grid.lx,
            len_y: cfg.grid.ly,
        };
        Some(sw.time("kl", || gevp_simpson(&table, &sg, l.kl_terms))?)
    };
    man.kl = Some(match &kl {
        Some(k) => KlSummary {
            terms: k.eigenvalues.len(),
            eigenvalues: k.eigenvalues.clone(),
            energy_fraction: k.energy_fraction,
        },
        None => KlSummary {
            terms: 0,
            eigenvalues: vec![],
            energy_fraction: 1.0,
        },
    });
    let vel = sw.time("velocity", || {
        uniform_mean_inflow_field(&grid, l.u_mean, kl.as_ref(), &basis, xi)
    })?;
    let bcs = line_injection_bcs(cfg, p);
    let flux = FluxParams::new(cfg.viscosity_ratio, cfg.flux_mode, cfg.epsilon);
    let solver = Solver::new(&grid, &bcs, &vel, &[], &tensors, engine_config(cfg, flux))?;
    let mut s = SgField::constant(grid.cells(), &vec![0.0; p]);
    let (mw, stats) = sw.time("mw_solve", || {
        advance_snapshots(&solver, &mut s, &cfg.snapshots)
    })?;
    man.solver = Some(stats);
    man.hyperbolicity = hyperbolicity_summary(&s, &vel, &grid, cfg.viscosity_ratio, &tensors);

    let scalar = scalar_tensors();
    let modes = kl
        .as_ref()
        .map(|k| InflowModes::new(&grid, k))
        .transpose()?;
    let dims = kl.as_ref().map_or(1, |k| k.eigenvalues.len());
    let bcs1 = line_injection_bcs(cfg, 1);
    let init1 = SgField::constant(grid.cells(), &[0.0]);
    let mc = sw.time("monte_carlo", || {
        run_monte_carlo(
            |x| {
                let v = inflow_realization(&grid, l.u_mean, modes.as_ref(), &xi.map_point(x));
                deterministic_snapshots(&grid, &bcs1, &v, &[], &init1, cfg, &scalar)
            },
            cfg.mc_samples,
            cfg.seed,
            dims,
        )
    })?;
    man.monte_carlo = Some(mc_summary(&mc, cfg.mc_samples));

    let snapshots = snapshots_from(cfg, &mw, &mc, grid.cells());
    man.validation.snapshots = snapshots
        .iter()
        .map(|s| snapshot_check(s, grid.mx, grid.my))
        .collect();
    let last = snapshots.last().expect("validated snapshots");
    let inlet: Vec<usize> = (0..grid.my)
        .map(|j| grid.cell(0, j))
        .filter(|c| (l.inject_lo..=l.inject_hi).contains(&grid.center(*c)[1]))
        .collect();
    man.validation.inlet = Some(InletReport {
        cells: inlet.len(),
        max_deviation_from_injected: inlet
            .iter()
            .map(|c| (last.mw_mean[*c] - 1.0).abs())
            .fold(0.0, f64::max),
    });
    man.timings = sw.entries;
    Ok(RunOutcome {
        manifest: man,
        points: (0..grid.cells()).map(|c| grid.center(c)).collect(),
        two_d: true,
        snapshots,
    })
}

/// Log-permeability expansion on the cell centres; `None` for zero variance.
pub fn five_spot_kl(cfg: &RunConfig, grid: &Grid) -> Result<Option<KlExpansion>> {
    let f = &cfg.five_spot;
    if f.perm_sigma2 == 0.0 || f.kl_terms == 0 {
        return Ok(None);
    }
    let pts: Vec<[f64; 2]> = (0..grid.cells()).map(|c| grid.center(c)).collect();
    let kl = exp_cov_eigenpairs_2d(
        f.perm_corr_x,
        f.perm_corr_y,
        f.perm_sigma2,
        cfg.grid.lx,
        cfg.grid.ly,
        f.kl_terms,
        f.kl_terms + 8,
    )?;
    Ok(Some(kl.on_points(
        &pts,
        f.perm_mean,
        XiMap::new(cfg.xi_law),
    )))
}

fn permeability(
    cfg: &RunConfig,
    kl: Option<&KlExpansion>,
    cells: usize,
    xi_std: &[f64],
) -> Vec<f64> {
    match kl {
        Some(k) => lognormal_permeability(k, xi_std),
        None => vec![cfg.five_spot.perm_mean.exp(); cells],
    }
}

fn five_spot_sources_engine(grid: &Grid, rate: f64, p: usize) -> Vec<PointSource> {
    vec![
        PointSource {
            cell: grid.cell(0, 0),
            rate,
            kind: SourceKind::Injection(e1(p)),
        },
        PointSource {
            cell: grid.cell(grid.mx - 1, grid.my - 1),
            rate,
            kind: SourceKind::Production,
        },
    ]
}

pub fn run_five_spot(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut sw = Stopwatch::default();
    let mut man = RunManifest::new(cfg.clone());
    let f = &cfg.five_spot;
    let basis = MwBasis::new(cfg.basis)?;
    let p = basis.len();
    man.basis_size = p;
    let tensors = sw.time("tensors", || build_tensors(&basis, cfg.flux_mode))?;
    man.tensors = Some(tensors.stats().clone());
    let grid = grid_2d(cfg)?;
    let kl = sw.time("kl", || five_spot_kl(cfg, &grid))?;
    man.kl = Some(match &kl {
        Some(k) => KlSummary {
            terms: k.terms(),
            eigenvalues: k.eigenvalues.clone(),
            energy_fraction: k.energy_fraction,
        },
        None => KlSummary {
            terms: 0,
            eigenvalues: vec![],
            energy_fraction: 1.0,
        },
    });
    let q = five_spot_sources(&grid, f.rate);
    let sample_flux = |xi: &[f64]| -> Result<FluxSample> {
        let k = permeability(cfg, kl.as_ref(), grid.cells(), xi);
        let s = solve_pressure(&PressureProblem {
            grid: &grid,
            perm: &k,
            sources: &q,
        })?;
        Ok(FluxSample {
            flux_x: s.flux_x,
            flux_y: s.flux_y,
        })
    };
    let rule = velocity_rule(&basis, f.quad_points_per_dim);
    let field = sw.time("velocity", || {
        project_velocity_mw(sample_flux, &basis, &rule, &grid, &q)
    })?;
    man.velocity_projection = Some(field.stats.clone());
    let vel = field.velocity(&grid);
    let bcs = Boundaries::all(Boundary::NoFlow);
    let sources = five_spot_sources_engine(&grid, f.rate, p);
    let flux = FluxParams::new(cfg.viscosity_ratio, cfg.flux_mode, cfg.epsilon);
    let solver = Solver::new(
        &grid,
        &bcs,
        &vel,
        &sources,
        &tensors,
        engine_config(cfg, flux),
    )?;
    let mut s = SgField::constant(grid.cells(), &vec![0.0; p]);
    let (mw, stats) = sw.time("mw_solve", || {
        advance_snapshots(&solver, &mut s, &cfg.snapshots)
    })?;
    man.solver = Some(stats);
    man.hyperbolicity = hyperbolicity_summary(&s, &vel, &grid, cfg.viscosity_ratio, &tensors);

    let scalar = scalar_tensors();
    let sources1 = five_spot_sources_engine(&grid, f.rate, 1);
    let init1 = SgField::constant(grid.cells(), &[0.0]);
    let dims = kl.as_ref().map_or(1, |k| k.terms());
    let mc = sw.time("monte_carlo", || {
        run_monte_carlo(
            |xi| {
                let fs = sample_flux(xi)?;
                let v = VelocityField {
                    p: 1,
                    ux: fs.flux_x.iter().map(|v| v / grid.dy).collect(),
                    uy: fs.flux_y.iter().map(|v| v / grid.dx).collect(),
                };
                deterministic_snapshots(&grid, &bcs, &v, &sources1, &init1, cfg, &scalar)
            },
            cfg.mc_samples,
            cfg.seed,
            dims,
        )
    })?;
    man.monte_carlo = Some(mc_summary(&mc, cfg.mc_samples));

    let snapshots = snapshots_from(cfg, &mw, &mc, grid.cells());
    man.validation.snapshots = snapshots
        .iter()
        .map(|s| snapshot_check(s, grid.mx, grid.my))
        .collect();
    man.timings = sw.entries;
    Ok(RunOutcome {
        manifest: man,
        points: (0..grid.cells()).map(|c| grid.center(c)).collect(),
        two_d: true,
        snapshots,
    })
}

/// Fixed-step run recording the state at the checkpoints.
fn bench_pass(
    solver: &Solver,
    init: &SgField,
    dt: f64,
    steps: usize,
    checkpoints: usize,
) -> Result<(Vec<SgField>, u64, f64)> {
    let every = (steps / checkpoints.max(1)).max(1);
    let mut s = init.clone();
    let mut saved = Vec::new();
    let mut macs = 0;
    let start = Instant::now();
    for k in 1..=steps {
        macs += solver.step_fixed(&mut s, dt)?.macs;
        if k % every == 0 || k == steps {
            saved.push(s.clone());
        }
    }
    Ok((saved, macs, start.elapsed().as_secs_f64()))
}

/// Full against reduced operators on the 1D Riemann problem, one row per
/// resolution level.
pub fn run_bench(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut man = RunManifest::new(cfg.clone());
    let grid = riemann_grid(cfg)?;
    let start = Instant::now();
    for &nr in &cfg.bench.resolution_levels {
        let basis = MwBasis::new(MwBasisSpec::one_dim(cfg.bench.poly_degree, nr))?;
        let p = basis.len();
        let tensors = build_tensors(&basis, cfg.flux_mode)?;
        let u = basis.project(&basis.build_quadrature(), |x| riemann_velocity(cfg, x[0]));
        let vel = VelocityField::uniform(&grid, &u, &[]);
        let (bcs, init) = riemann_setup(&grid, p);
        let a = cfg.viscosity_ratio;
        let full = Solver::new(
            &grid,
            &bcs,
            &vel,
            &[],
            &tensors,
            engine_config(cfg, FluxParams::full(a, cfg.flux_mode)),
        )?;
        let reduced = Solver::new(
            &grid,
            &bcs,
            &vel,
            &[],
            &tensors,
            engine_config(cfg, FluxParams::new(a, cfg.flux_mode, cfg.epsilon)),
        )?;
        let dt = full.stable_dt(&init)?;
        let (sf, mf, tf) = bench_pass(&full, &init, dt, cfg.bench.steps, cfg.bench.checkpoints)?;
        let (sr, mr, tr) = bench_pass(&reduced, &init, dt, cfg.bench.steps, cfg.bench.checkpoints)?;
        let dev = sf
            .iter()
            .zip(&sr)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        man.bench.push(BenchRow {
            p,
            resolution_levels: nr,
            steps: cfg.bench.steps,
            dt,
            full_seconds: tf,
            reduced_seconds: tr,
            full_macs: mf,
            reduced_macs: mr,
            mac_ratio: mf as f64 / mr.max(1) as f64,
            speedup: tf / tr.max(1e-12),
            max_deviation: dev,
        });
    }
    man.validation.mac_ratio_increasing = Some(
        man.bench
            .windows(2)
            .all(|w| w[1].mac_ratio > w[0].mac_ratio),
    );
    man.basis_size = man.bench.last().map_or(0, |r| r.p);
    man.timings = vec![Timing {
        phase: "bench".into(),
        seconds: start.elapsed().as_secs_f64(),
    }];
    Ok(RunOutcome {
        manifest: man,
        points: Vec::new(),
        two_d: false,
        snapshots: Vec::new(),
    })
}
