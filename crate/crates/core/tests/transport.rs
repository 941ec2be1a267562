use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow::basis::{MwBasis, MwBasisSpec};
use sgflow::quadrature::{composite_probability_rule, QuadratureRule};
use sgflow::tensors::{e1, ProductTensors};
use sgflow::transport::{
    denominator_matrix, flux_jacobian, frac_flow, frac_flow_derivative, hyperbolicity_check,
    max_frac_flow_derivative, sg_flux_quad, sg_flux_trip, shock_saturation, wave_speed_bounds,
    FluxMode, FluxParams,
};

fn setup(spec: MwBasisSpec) -> (MwBasis, ProductTensors) {
    let basis = MwBasis::new(spec).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    (basis, t)
}

fn admissible(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    let mut s = vec![0.0; p];
    s[0] = rng.random_range(0.2..0.8);
    let scale = 0.15 / (p as f64).sqrt();
    for v in s.iter_mut().skip(1) {
        *v = rng.random_range(-scale..scale);
    }
    s
}

fn velocity(p: usize) -> Vec<f64> {
    let mut u = e1(p);
    if p > 1 {
        u[1] = 0.2 / 3f64.sqrt();
    }
    u
}

#[test]
fn frac_flow_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s = rng.random_range(0.01..0.99);
        let a = rng.random_range(0.2..5.0);
        let h = 1e-6;
        let fd = (frac_flow(s + h, a) - frac_flow(s - h, a)) / (2.0 * h);
        assert!((fd - frac_flow_derivative(s, a)).abs() < 1e-8);
    }
}

#[test]
fn frac_flow_monotone_on_unit_interval() {
    let mut last = 0.0;
    for i in 0..=1000 {
        let f = frac_flow(i as f64 / 1000.0, 2.0);
        assert!(f >= last);
        last = f;
    }
}

#[test]
fn shock_saturation_increases_with_viscosity_ratio() {
    let mut last = 0.0;
    for i in 1..40 {
        let a = 0.1 * i as f64;
        let (s, _) = shock_saturation(a).unwrap();
        assert!((s - (a / (1.0 + a)).sqrt()).abs() < 1e-10);
        assert!(s > last);
        last = s;
    }
    let (_, d) = shock_saturation(2.0).unwrap();
    let band = (0.8 * d * 0.025, 1.2 * d * 0.025);
    assert!((band.0 - 0.0222).abs() < 1e-4 && (band.1 - 0.0334).abs() < 1e-4);
}

#[test]
fn zero_saturation_gives_zero_flux() {
    let (_, t) = setup(MwBasisSpec::one_dim(1, 2));
    let u = velocity(8);
    for f in [
        sg_flux_quad(&[0.0; 8], &u, &FluxParams::full(2.0, FluxMode::Quad), &t).unwrap(),
        sg_flux_trip(&[0.0; 8], &u, &FluxParams::full(2.0, FluxMode::Trip), &t).unwrap(),
    ] {
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }
}

#[test]
fn quad_flux_satisfies_galerkin_condition() {
    let (basis, t) = setup(MwBasisSpec::one_dim(1, 2));
    let rule = QuadratureRule::tensor(&[composite_probability_rule(9, 4)]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = 2.0;
    for _ in 0..10 {
        let s = admissible(&mut rng, 8);
        let u = velocity(8);
        let f = sg_flux_quad(&s, &u, &FluxParams::full(a, FluxMode::Quad), &t).unwrap();
        // residual (S² + a(1-S)²) f_h - S² u is orthogonal to the basis
        let proj = basis.project(&rule, |xi| {
            let sv = basis.synthesize(&s, xi);
            let uv = basis.synthesize(&u, xi);
            let fv = basis.synthesize(&f, xi);
            (sv * sv + a * (1.0 - sv) * (1.0 - sv)) * fv - sv * sv * uv
        });
        assert!(proj.iter().all(|v| v.abs() < 1e-10), "{proj:?}");
    }
}

#[test]
fn haar_quad_and_trip_agree() {
    let (_, t) = setup(MwBasisSpec::one_dim(0, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let s = admissible(&mut rng, 8);
        let u = velocity(8);
        let q = sg_flux_quad(&s, &u, &FluxParams::full(2.0, FluxMode::Quad), &t).unwrap();
        let r = sg_flux_trip(&s, &u, &FluxParams::full(2.0, FluxMode::Trip), &t).unwrap();
        let d = q
            .iter()
            .zip(&r)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
    }
}

#[test]
fn aliasing_shrinks_under_refinement() {
    let mut last = f64::INFINITY;
    for levels in 1..=4 {
        let (basis, t) = setup(MwBasisSpec::one_dim(1, levels));
        let rule = basis.build_quadrature();
        let s = basis.project(&rule, |xi| 0.5 + 0.45 * (2.0 * xi[0]).sin());
        let u = basis.project(&rule, |xi| 1.0 + 0.2 * xi[0]);
        let q = sg_flux_quad(&s, &u, &FluxParams::full(2.0, FluxMode::Quad), &t).unwrap();
        let r = sg_flux_trip(&s, &u, &FluxParams::full(2.0, FluxMode::Trip), &t).unwrap();
        let d = q
            .iter()
            .zip(&r)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d < last, "P={} gap {d} not below {last}", t.len());
        last = d;
    }
}

fn fd_jacobian(s: &[f64], u: &[f64], params: &FluxParams, t: &ProductTensors) -> DMatrix<f64> {
    let p = s.len();
    let h = 1e-6;
    let mut j = DMatrix::zeros(p, p);
    for c in 0..p {
        let mut sp = s.to_vec();
        let mut sm = s.to_vec();
        sp[c] += h;
        sm[c] -= h;
        let fp = sgflow::transport::sg_flux(&sp, u, params, t).unwrap();
        let fm = sgflow::transport::sg_flux(&sm, u, params, t).unwrap();
        for r in 0..p {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for spec in [
        MwBasisSpec::one_dim(2, 1),
        MwBasisSpec::one_dim(1, 2),
        MwBasisSpec::total_order(2, 1, 1),
    ] {
        let (_, t) = setup(spec);
        let p = t.len();
        for mode in [FluxMode::Quad, FluxMode::Trip] {
            let params = FluxParams::full(2.0, mode);
            for _ in 0..5 {
                let s = admissible(&mut rng, p);
                let u = velocity(p);
                let j = flux_jacobian(&s, &u, &params, &t).unwrap();
                let fd = fd_jacobian(&s, &u, &params, &t);
                assert!((j - fd).amax() < 1e-6, "{spec:?} {mode:?}");
            }
        }
    }
}

#[test]
fn deterministic_jacobian_is_scalar_chain_rule() {
    let (_, t) = setup(MwBasisSpec::one_dim(1, 1));
    let s: Vec<f64> = e1(4).iter().map(|v| 0.4 * v).collect();
    let u: Vec<f64> = e1(4).iter().map(|v| 1.3 * v).collect();
    for mode in [FluxMode::Quad, FluxMode::Trip] {
        let j = flux_jacobian(&s, &u, &FluxParams::full(2.0, mode), &t).unwrap();
        let want = DMatrix::<f64>::identity(4, 4).scale(1.3 * frac_flow_derivative(0.4, 2.0));
        assert!((j - want).amax() < 1e-12);
    }
}

#[test]
fn wave_speeds_bracket_spectrum_and_envelope() {
    let (basis, t) = setup(MwBasisSpec::one_dim(0, 4));
    let rule = basis.build_quadrature();
    let u = basis.project(&rule, |xi| 1.0 + 0.2 * xi[0]);
    let params = FluxParams::full(2.0, FluxMode::Quad);
    let one: Vec<f64> = e1(16);
    let zero = vec![0.0; 16];
    let (lo, hi) = wave_speed_bounds(&one, &zero, &u, &params, &t).unwrap();
    assert!(lo <= hi);
    assert!(hi <= 1.2 * max_frac_flow_derivative(2.0) * 1.05);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = admissible(&mut rng, 16);
    let (lo, hi) = wave_speed_bounds(&s, &s, &u, &params, &t).unwrap();
    let ev = flux_jacobian(&s, &u, &params, &t)
        .unwrap()
        .complex_eigenvalues();
    for z in ev.iter() {
        assert!(lo <= z.re && z.re <= hi);
    }
    // deterministic states bracket u f'(s)
    let sl: Vec<f64> = e1(16).iter().map(|v| 0.3 * v).collect();
    let sr: Vec<f64> = e1(16).iter().map(|v| 0.7 * v).collect();
    let det_u = e1(16);
    let (lo, hi) = wave_speed_bounds(&sl, &sr, &det_u, &params, &t).unwrap();
    for sv in [0.3, 0.7] {
        let c = frac_flow_derivative(sv, 2.0);
        assert!(lo <= c && c <= hi);
    }
}

#[test]
fn reduced_flux_tracks_full_flux() {
    let (basis, t) = setup(MwBasisSpec::one_dim(0, 4));
    let rule = basis.build_quadrature();
    let u = basis.project(&rule, |xi| 1.0 + 0.2 * xi[0]);
    // a front state: steep in ξ, many near-zero details
    let s = basis.project(&rule, |xi| if xi[0] > 0.3 { 0.8 } else { 0.0 });
    for mode in [FluxMode::Quad, FluxMode::Trip] {
        let full = sgflow::transport::sg_flux(&s, &u, &FluxParams::full(2.0, mode), &t).unwrap();
        let red =
            sgflow::transport::sg_flux(&s, &u, &FluxParams::new(2.0, mode, 1e-12), &t).unwrap();
        let d = full
            .iter()
            .zip(&red)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-10, "{mode:?} {d}");
    }
}

#[test]
fn hyperbolicity_report_contracts() {
    let (_, t) = setup(MwBasisSpec::one_dim(1, 1));
    let s: Vec<f64> = e1(4).iter().map(|v| 0.5 * v).collect();
    let m = denominator_matrix(&s, 2.0, &t).unwrap();
    assert!((m - DMatrix::<f64>::identity(4, 4).scale(0.25 + 0.25 * 2.0)).amax() < 1e-13);
    let rep = hyperbolicity_check(&s, &velocity(4), 2.0, &t).unwrap();
    assert!(rep.positive_definite && !rep.at_risk());
    // wildly unphysical coefficients: a verdict, not a crash
    let wild = vec![0.5, 40.0, -35.0, 60.0];
    let rep = hyperbolicity_check(&wild, &velocity(4), 2.0, &t).unwrap();
    assert!(rep.denominator_asymmetry < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn denominator_symmetric_and_spectrum_real(
        seed in 0u64..10_000,
        levels in 1usize..=3,
    ) {
        let (_, t) = setup(MwBasisSpec::one_dim(1, levels));
        let p = t.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = admissible(&mut rng, p);
        let rep = hyperbolicity_check(&s, &velocity(p), 2.0, &t).unwrap();
        prop_assert!(rep.denominator_asymmetry < 1e-13);
        if rep.positive_definite {
            prop_assert!(rep.max_imag_eigenvalue.unwrap() < 1e-9);
        }
    }

    #[test]
    fn deterministic_states_give_scalar_flux(s in 0.0f64..1.0, v in 0.1f64..2.0, a in 0.2f64..5.0) {
        let (_, t) = setup(MwBasisSpec::one_dim(1, 1));
        let sv: Vec<f64> = e1(4).iter().map(|x| s * x).collect();
        let uv: Vec<f64> = e1(4).iter().map(|x| v * x).collect();
        for mode in [FluxMode::Quad, FluxMode::Trip] {
            let f = sgflow::transport::sg_flux(&sv, &uv, &FluxParams::full(a, mode), &t).unwrap();
            prop_assert!((f[0] - v * frac_flow(s, a)).abs() < 1e-12);
        }
    }
}
