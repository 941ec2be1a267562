//! Acceptance report. Prints one PASS/FAIL line per check and a summary.
//! Exits non-zero on failure only when `ACCEPTANCE_STRICT=1`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow::basis::{MwBasis, MwBasisSpec};
use sgflow::experiments::config::{ExperimentKind, RunConfig};
use sgflow::experiments::{run, RunOutcome};
use sgflow::kl::*;
use sgflow::quadrature::{composite_probability_rule, probability_rule, QuadratureRule};
use sgflow::reduced::{
    reduced_mat_a, reduced_mat_b, reduced_matvec_a, reduced_matvec_b, significant_indices,
};
use sgflow::tensors::ProductTensors;
use sgflow::transport::{flux_jacobian, hyperbolicity_check, sg_flux, FluxMode, FluxParams};

#[derive(Default)]
struct Report {
    passed: usize,
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} [{id}] {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn run_timed(cfg: &RunConfig) -> (Result<RunOutcome, String>, f64) {
    let start = Instant::now();
    let out = run(cfg).map_err(|e| e.to_string());
    (out, start.elapsed().as_secs_f64())
}

fn phase_seconds(o: &RunOutcome, phase: &str) -> f64 {
    o.manifest
        .timings
        .iter()
        .filter(|t| t.phase == phase)
        .map(|t| t.seconds)
        .sum()
}

fn conservation(r: &mut Report, id: &str, o: &RunOutcome) {
    let e = o
        .manifest
        .solver
        .as_ref()
        .map_or(f64::INFINITY, |s| s.max_conservation_error);
    r.check(
        id,
        e < 1e-12,
        format!("max per-step mode-1 mass imbalance {e:.3e}"),
    );
}

fn shock_band(r: &mut Report) {
    let cfg = RunConfig::defaults(ExperimentKind::Riemann1d);
    let mut mw_only = cfg.clone();
    mw_only.mc_samples = 2;
    let (out, secs) = run_timed(&mw_only);
    let o = match out {
        Ok(o) => o,
        Err(e) => return r.check("1.shock_band", false, format!("run failed: {e}")),
    };
    // independent endpoints: S* = sqrt(a/(1+a)), f'(S) = 2aS(1-S)/(S²+a(1-S)²)²
    let a = cfg.viscosity_ratio;
    let s = (a / (1.0 + a)).sqrt();
    let fp = 2.0 * a * s * (1.0 - s) / (s * s + a * (1.0 - s) * (1.0 - s)).powi(2);
    let (lo, hi) = (
        cfg.riemann.u_min * fp * cfg.end_time,
        cfg.riemann.u_max * fp * cfg.end_time,
    );
    let sb = o.manifest.validation.shock_band.clone().unwrap();
    let dx = sb.cell_width;
    let inside = !sb.jumps.is_empty() && sb.jumps.iter().all(|x| *x >= lo - dx && *x <= hi + dx);
    r.check(
        "1.shock_band",
        inside && (sb.band[0] - lo).abs() < 1e-12 && (sb.band[1] - hi).abs() < 1e-12,
        format!(
            "P={} cells={} jumps {} in [{:.5}, {:.5}] ± {:.2e}, extent [{:.5}, {:.5}]",
            o.manifest.basis_size,
            cfg.grid.mx,
            sb.jumps.len(),
            lo,
            hi,
            dx,
            sb.jumps.first().copied().unwrap_or(f64::NAN),
            sb.jumps.last().copied().unwrap_or(f64::NAN)
        ),
    );
    let mw = phase_seconds(&o, "mw_solve");
    r.check(
        "1.runtime",
        mw < 60.0,
        format!("MW solve {mw:.2} s (whole run {secs:.2} s)"),
    );
    conservation(r, "8.mass_riemann", &o);
}

fn basis_counts(r: &mut Report) {
    for (spec, want) in [
        (MwBasisSpec::one_dim(2, 3), 24),
        (MwBasisSpec::one_dim(2, 1), 6),
        (MwBasisSpec::total_order(2, 4, 0), 15),
    ] {
        let got = MwBasis::new(spec).map(|b| b.len()).unwrap_or(0);
        r.check(
            "2.basis_count",
            got == want && spec.size() == want,
            format!("{spec:?}: {got} (want {want})"),
        );
    }
}

fn admissible(rng: &mut ChaCha8Rng, p: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 0.15 / (p as f64).sqrt();
    let mut s: Vec<f64> = (0..p).map(|_| rng.random_range(-scale..scale)).collect();
    s[0] = rng.random_range(0.1..0.9);
    let mut u: Vec<f64> = (0..p).map(|_| rng.random_range(-0.05..0.05)).collect();
    u[0] = rng.random_range(0.5..1.5);
    (s, u)
}

fn fd_jacobian(s: &[f64], u: &[f64], params: &FluxParams, t: &ProductTensors) -> DMatrix<f64> {
    let p = s.len();
    let h = 1e-6;
    let mut j = DMatrix::zeros(p, p);
    for c in 0..p {
        let (mut sp, mut sm) = (s.to_vec(), s.to_vec());
        sp[c] += h;
        sm[c] -= h;
        let fp = sg_flux(&sp, u, params, t).unwrap();
        let fm = sg_flux(&sm, u, params, t).unwrap();
        for k in 0..p {
            j[(k, c)] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    j
}

fn hyperbolicity(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for spec in [
        MwBasisSpec::one_dim(0, 2),
        MwBasisSpec::one_dim(0, 3),
        MwBasisSpec::one_dim(0, 4),
        MwBasisSpec::one_dim(3, 0),
        MwBasisSpec::one_dim(1, 2),
        MwBasisSpec::one_dim(3, 2),
    ] {
        let t = ProductTensors::for_basis(&MwBasis::new(spec).unwrap()).unwrap();
        let p = t.len();
        let (mut asym, mut imag, mut fd_err) = (0.0f64, 0.0f64, 0.0f64);
        let mut spd = 0;
        for _ in 0..200 {
            let (s, u) = admissible(&mut rng, p);
            let rep = hyperbolicity_check(&s, &u, 2.0, &t).unwrap();
            asym = asym.max(rep.denominator_asymmetry);
            if rep.positive_definite {
                spd += 1;
                imag = imag.max(rep.max_imag_eigenvalue.unwrap_or(f64::INFINITY));
                for mode in [FluxMode::Quad, FluxMode::Trip] {
                    let params = FluxParams::full(2.0, mode);
                    let j = flux_jacobian(&s, &u, &params, &t).unwrap();
                    fd_err = fd_err.max((j - fd_jacobian(&s, &u, &params, &t)).amax());
                }
            }
        }
        r.check(
            "3.hyperbolicity",
            asym <= 1e-13 && imag < 1e-9 && fd_err < 1e-6,
            format!(
                "P={p} {spec:?}: SPD {spd}/200, asymmetry {asym:.1e}, max|imag| {imag:.1e}, Jacobian vs FD {fd_err:.1e}"
            ),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    r.check("3.runtime", secs < 120.0, format!("{secs:.2} s"));
}

fn pseudo_spectral(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let vec = |p: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..p)
            .map(|_| {
                // a few exact zeros so the reduced index sets are proper subsets
                if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect()
    };
    for spec in [
        MwBasisSpec::one_dim(0, 1),
        MwBasisSpec::one_dim(1, 2),
        MwBasisSpec::one_dim(0, 4),
        MwBasisSpec::one_dim(3, 2),
        MwBasisSpec::total_order(2, 2, 1),
        MwBasisSpec::total_order(2, 4, 0),
    ] {
        let basis = MwBasis::new(spec).unwrap();
        let t = ProductTensors::for_basis(&basis).unwrap();
        let p = t.len();
        // dense oracle on a finer rule than the tensors were built with
        let n = basis.quadrature_points_per_cell() + 2;
        let mut per_dim = vec![composite_probability_rule(n, 1 << spec.resolution_levels)];
        for _ in 1..spec.dims {
            per_dim.push(probability_rule(n));
        }
        let rule = QuadratureRule::tensor(&per_dim);
        let tab: Vec<Vec<f64>> = rule
            .iter()
            .map(|(xi, _)| (0..p).map(|m| basis.eval_unchecked(m, xi)).collect())
            .collect();
        let synth = |row: &[f64], c: &[f64]| -> f64 { row.iter().zip(c).map(|(x, y)| x * y).sum() };
        let (mut oracle_err, mut reduced_err) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            let (a, b, c) = (vec(p, &mut rng), vec(p, &mut rng), vec(p, &mut rng));
            let mut want2 = vec![0.0; p];
            let mut want3 = vec![0.0; p];
            for (row, w) in tab.iter().zip(rule.weights()) {
                let ab = synth(row, &a) * synth(row, &b);
                let abc = ab * synth(row, &c);
                for k in 0..p {
                    want2[k] += w * ab * row[k];
                    want3[k] += w * abc * row[k];
                }
            }
            let got2 = t.pseudo_mul(&a, &b);
            let got3 = t.pseudo_mul3(&a, &b, &c).unwrap();
            oracle_err = oracle_err
                .max(max_diff(&got2, &want2))
                .max(max_diff(&got3, &want3));

            let (ja, jb, jc) = (
                significant_indices(&a, 0.0),
                significant_indices(&b, 0.0),
                significant_indices(&c, 0.0),
            );
            let ra = reduced_mat_a(&a, &ja, &t).0;
            let rb = reduced_mat_b(&a, &ja, &b, &jb, &t).unwrap().0;
            let rv = reduced_matvec_a(&a, &ja, &b, &jb, &t).0;
            let rv3 = reduced_matvec_b(&a, &ja, &b, &jb, &c, &jc, &t).unwrap().0;
            reduced_err = reduced_err
                .max((ra - t.mat_a(&a)).amax())
                .max((rb - t.mat_b(&a, &b).unwrap()).amax())
                .max(max_diff(&rv, &got2))
                .max(max_diff(&rv3, &got3));
        }
        r.check(
            "4.pseudo_spectral",
            oracle_err < 1e-12,
            format!("P={p} {spec:?}: max deviation from dense quadrature {oracle_err:.1e}"),
        );
        r.check(
            "4.reduced_eps0",
            reduced_err < 1e-13,
            format!("P={p} {spec:?}: reduced (ε=0) vs full {reduced_err:.1e}"),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    r.check("4.runtime", secs < 60.0, format!("{secs:.2} s"));
}

fn bench(r: &mut Report) {
    let cfg = RunConfig::defaults(ExperimentKind::Bench);
    let (out, secs) = run_timed(&cfg);
    let o = match out {
        Ok(o) => o,
        Err(e) => return r.check("5.bench", false, format!("run failed: {e}")),
    };
    let rows = &o.manifest.bench;
    for row in rows {
        println!(
            "      P={:3} steps={} full {:.3} s / {} MAC, reduced {:.3} s / {} MAC, ratio {:.2}, speedup {:.2}, deviation {:.1e}",
            row.p,
            row.steps,
            row.full_seconds,
            row.full_macs,
            row.reduced_seconds,
            row.reduced_macs,
            row.mac_ratio,
            row.speedup,
            row.max_deviation
        );
    }
    let ps: Vec<usize> = rows.iter().map(|r| r.p).collect();
    r.check("5.sizes", ps == vec![12, 24, 48, 96], format!("P = {ps:?}"));
    let dev = rows.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    r.check(
        "5.fidelity",
        dev < 1e-8,
        format!("max |reduced − full| {dev:.2e} at ε={}", cfg.epsilon),
    );
    let increasing = rows.windows(2).all(|w| w[1].mac_ratio > w[0].mac_ratio);
    let ratios: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.mac_ratio)).collect();
    r.check(
        "5.mac_ratio",
        increasing,
        format!("full/reduced MAC ratios {}", ratios.join(", ")),
    );
    let last = rows.last().map_or(0.0, |r| r.speedup);
    r.check(
        "5.speedup",
        last > 3.0,
        format!("wall-time speedup {last:.2} at the largest P"),
    );
    r.check("5.runtime", secs < 900.0, format!("{secs:.1} s"));
}

fn kl(r: &mut Report) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (l, len) in [(1.0, 1.0), (0.3, 1.0), (0.5, 2.0), (2.0, 1.0)] {
        let roots = exp_cov_roots_1d(l, len, 20).unwrap();
        for w in roots {
            worst = worst.max(exp_cov_residual(w, l, len).abs());
        }
    }
    r.check(
        "6.roots_first_20",
        worst < 1e-10,
        format!("max residual {worst:.2e} over four (l, L)"),
    );

    let pool = exp_cov_roots_1d(1.0, 1.0, 100).unwrap();
    let res: Vec<f64> = pool
        .iter()
        .map(|w| exp_cov_residual(*w, 1.0, 1.0).abs())
        .collect();
    let ok = res.iter().take_while(|v| **v < 1e-10).count();
    let max = res.iter().copied().fold(0.0, f64::max);
    r.check(
        "6.roots_pool_100",
        max < 1e-10,
        format!("l=L=1: {ok}/100 roots below 1e-10, max residual {max:.2e}"),
    );

    for (l, len) in [(1.0, 1.0), (0.3, 1.0), (0.1, 1.0)] {
        let f = ExpKl1d::new(l, len, 1.0, 100).unwrap().captured_fraction();
        r.check(
            "6.mercer",
            f > 0.95,
            format!("l={l} L={len}: 100 terms capture {:.4} of σ²L", f),
        );
    }

    let n = 81;
    let h = 1.0 / (n - 1) as f64;
    let k = DemoKernel {
        sigma2_xx: 0.01,
        sigma2_yy: 0.01,
        corr_x: 1.0,
        corr_y: 1.0,
        cross: 0.0,
    };
    let table = CovarianceTable::separable_exponential(&k, n - 1, h, n - 1, h);
    let grid = SimpsonGrid {
        nx: n,
        ny: n,
        len_x: 1.0,
        len_y: 1.0,
    };
    let d = 4;
    let got = gevp_simpson(&table, &grid, d).unwrap();
    let an = exp_cov_eigenpairs_2d(1.0, 1.0, 0.01, 1.0, 1.0, d, d).unwrap();
    let mut want: Vec<f64> = an
        .eigenvalues
        .iter()
        .chain(&an.eigenvalues)
        .copied()
        .collect();
    want.sort_by(|a, b| b.total_cmp(a));
    let err = max_diff(&got.eigenvalues, &want[..d]);
    r.check(
        "6.simpson_analytic",
        err < 1e-6,
        format!("81×81, σ²=0.01, l=1: max eigenvalue error {err:.2e}"),
    );

    let mut bi: f64 = 0.0;
    let cross = DemoKernel {
        sigma2_xx: 0.02,
        sigma2_yy: 0.01,
        corr_x: 0.4,
        corr_y: 0.2,
        cross: 0.5,
    };
    let m = 21;
    let hm = 1.0 / (m - 1) as f64;
    let small = SimpsonGrid {
        nx: m,
        ny: m,
        ..grid
    };
    let cross_kl = gevp_simpson(
        &CovarianceTable::separable_exponential(&cross, m - 1, hm, m - 1, hm),
        &small,
        5,
    )
    .unwrap();
    for v in [&got, &cross_kl] {
        for i in 0..v.modes.len() {
            for j in 0..v.modes.len() {
                let want = if i == j { 1.0 } else { 0.0 };
                bi = bi.max((v.inner(&v.modes[i], &v.modes[j]) - want).abs());
            }
        }
    }
    r.check(
        "6.biorthogonality",
        bi < 1e-8,
        format!("max |⟨g_i, g_j⟩_W − δ_ij| {bi:.2e}"),
    );
    let secs = start.elapsed().as_secs_f64();
    r.check("6.runtime", secs < 60.0, format!("{secs:.2} s"));
}

fn cross_validation(r: &mut Report, kind: ExperimentKind, id: &str) {
    let mut cfg = RunConfig::defaults(kind);
    // only the first snapshot is compared
    cfg.end_time = cfg.snapshots[0];
    cfg.snapshots.truncate(1);
    let (out, secs) = run_timed(&cfg);
    let o = match out {
        Ok(o) => o,
        Err(e) => return r.check(&format!("7.{id}"), false, format!("run failed: {e}")),
    };
    let s = &o.manifest.validation.snapshots[0];
    let mc = o.manifest.monte_carlo.as_ref().unwrap();
    r.check(
        &format!("7.{id}_mean"),
        s.normalized_l1_mean < 0.05,
        format!(
            "{}×{} P={} MC({}, {} failed) t={}: normalized L1 {:.4}",
            cfg.grid.mx,
            cfg.grid.my,
            o.manifest.basis_size,
            mc.samples,
            mc.failed,
            s.t,
            s.normalized_l1_mean
        ),
    );
    r.check(
        &format!("7.{id}_std_front"),
        s.std_argmax_in_front_band,
        format!(
            "MW std arg-max at cell index {}, front band has {} cells",
            s.mw_std_argmax, s.front_band_cells
        ),
    );
    r.check(
        &format!("7.{id}_runtime"),
        secs < 600.0,
        format!("{secs:.1} s"),
    );
    conservation(r, &format!("8.mass_{id}"), &o);
}

fn scalar_bounds(r: &mut Report) {
    for kind in [
        ExperimentKind::Riemann1d,
        ExperimentKind::LineInjection,
        ExperimentKind::FiveSpot,
    ] {
        let mut cfg = RunConfig::defaults(kind);
        cfg.basis = if cfg.is_2d() {
            MwBasisSpec::total_order(cfg.basis.dims, 0, 0)
        } else {
            MwBasisSpec::one_dim(0, 0)
        };
        cfg.end_time = cfg.snapshots[0];
        cfg.snapshots.truncate(1);
        cfg.mc_samples = 20;
        match run(&cfg) {
            Ok(o) => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for s in &o.snapshots {
                    for v in s.mw_mean.iter().chain(&s.mc_mean) {
                        lo = lo.min(*v);
                        hi = hi.max(*v);
                    }
                }
                r.check(
                    "8.max_principle",
                    lo >= -1e-10 && hi <= 1.0 + 1e-10,
                    format!("{} P=1: range [{lo:.3e}, {hi:.15}]", kind.name()),
                );
            }
            Err(e) => r.check("8.max_principle", false, format!("{}: {e}", kind.name())),
        }
    }
}

fn main() {
    let start = Instant::now();
    let mut r = Report::default();
    shock_band(&mut r);
    basis_counts(&mut r);
    hyperbolicity(&mut r);
    pseudo_spectral(&mut r);
    bench(&mut r);
    kl(&mut r);
    cross_validation(&mut r, ExperimentKind::FiveSpot, "five_spot");
    cross_validation(&mut r, ExperimentKind::LineInjection, "line_injection");
    scalar_bounds(&mut r);
    println!(
        "acceptance: {} passed, {} failed {:?} in {:.0} s",
        r.passed,
        r.failed.len(),
        r.failed,
        start.elapsed().as_secs_f64()
    );
    if !r.failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
