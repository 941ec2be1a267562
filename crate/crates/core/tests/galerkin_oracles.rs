use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgflow::basis::{MwBasis, MwBasisSpec};
use sgflow::quadrature::QuadratureRule;
use sgflow::reduced::{
    reduced_mat_a, reduced_mat_b, reduced_matvec_a, reduced_matvec_b, significant_indices,
    threshold,
};
use sgflow::tensors::{e1, ProductTensors};

/// Basis values at every node of the rule, row per node.
fn table(basis: &MwBasis, rule: &QuadratureRule) -> Vec<Vec<f64>> {
    rule.iter()
        .map(|(xi, _)| {
            (0..basis.len())
                .map(|m| basis.eval_unchecked(m, xi))
                .collect()
        })
        .collect()
}

fn synth(row: &[f64], c: &[f64]) -> f64 {
    row.iter().zip(c).map(|(x, y)| x * y).sum()
}

fn project(rule: &QuadratureRule, tab: &[Vec<f64>], g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let p = tab[0].len();
    let mut out = vec![0.0; p];
    for (row, w) in tab.iter().zip(rule.weights()) {
        let gv = g(row);
        for k in 0..p {
            out[k] += w * gv * row[k];
        }
    }
    out
}

fn dense_a(rule: &QuadratureRule, tab: &[Vec<f64>], a: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let mut m = DMatrix::zeros(p, p);
    for (row, w) in tab.iter().zip(rule.weights()) {
        let av = synth(row, a);
        for j in 0..p {
            for k in 0..p {
                m[(j, k)] += w * av * row[j] * row[k];
            }
        }
    }
    m
}

fn dense_b(rule: &QuadratureRule, tab: &[Vec<f64>], a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let p = a.len();
    let mut m = DMatrix::zeros(p, p);
    for (row, w) in tab.iter().zip(rule.weights()) {
        let ab = synth(row, a) * synth(row, b);
        for j in 0..p {
            for k in 0..p {
                m[(j, k)] += w * ab * row[j] * row[k];
            }
        }
    }
    m
}

fn random_vec(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn specs() -> Vec<MwBasisSpec> {
    vec![
        MwBasisSpec::one_dim(0, 1),
        MwBasisSpec::one_dim(1, 2),
        MwBasisSpec::one_dim(0, 4),
        MwBasisSpec::one_dim(3, 2),
        MwBasisSpec::total_order(2, 2, 1),
        MwBasisSpec::total_order(2, 4, 0),
    ]
}

#[test]
fn products_match_dense_quadrature_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in specs() {
        let basis = MwBasis::new(spec).unwrap();
        // an independent, finer rule than the one used to build the tensors
        let fine = {
            let n = basis.quadrature_points_per_cell() + 2;
            let mut per_dim = vec![sgflow::quadrature::composite_probability_rule(
                n,
                1 << spec.resolution_levels,
            )];
            for _ in 1..spec.dims {
                per_dim.push(sgflow::quadrature::probability_rule(n));
            }
            QuadratureRule::tensor(&per_dim)
        };
        let tab = table(&basis, &fine);
        let t = ProductTensors::for_basis(&basis).unwrap();
        let p = t.len();
        for _ in 0..10 {
            let (a, b, c) = (
                random_vec(&mut rng, p),
                random_vec(&mut rng, p),
                random_vec(&mut rng, p),
            );
            let got = t.pseudo_mul(&a, &b);
            let want = project(&fine, &tab, |row| synth(row, &a) * synth(row, &b));
            assert!(
                max_diff(&got, &want) < 1e-12,
                "{spec:?} mul {}",
                max_diff(&got, &want)
            );
            let got3 = t.pseudo_mul3(&a, &b, &c).unwrap();
            let want3 = project(&fine, &tab, |row| {
                synth(row, &a) * synth(row, &b) * synth(row, &c)
            });
            assert!(max_diff(&got3, &want3) < 1e-12, "{spec:?} mul3");
            let ma = t.mat_a(&a);
            assert!((&ma - dense_a(&fine, &tab, &a)).amax() < 1e-12);
            let mb = t.mat_b(&a, &b).unwrap();
            assert!((&mb - dense_b(&fine, &tab, &a, &b)).amax() < 1e-12);
            // mean of the product is the coefficient inner product
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((got[0] - dot).abs() < 1e-12);
        }
    }
}

#[test]
fn stored_tensor_entries_reproducible_by_quadrature() {
    let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2)).unwrap();
    let rule = basis.build_quadrature();
    let tab = table(&basis, &rule);
    let t = ProductTensors::for_basis(&basis).unwrap();
    let p = t.len();
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                let q: f64 = tab
                    .iter()
                    .zip(rule.weights())
                    .map(|(r, w)| w * r[i] * r[j] * r[k])
                    .sum();
                assert!((t.triple(i, j, k) - q).abs() < 1e-12);
                assert_eq!(t.triple(i, j, k), t.triple(k, i, j));
                for h in [0, 3, 7] {
                    let q4: f64 = tab
                        .iter()
                        .zip(rule.weights())
                        .map(|(r, w)| w * r[h] * r[i] * r[j] * r[k])
                        .sum();
                    assert!((t.quad(h, i, j, k).unwrap() - q4).abs() < 1e-12);
                    assert_eq!(t.quad(h, i, j, k).unwrap(), t.quad(k, j, h, i).unwrap());
                }
            }
        }
    }
}

#[test]
fn haar_products_are_closed() {
    // piecewise-constant functions: pairwise projection equals pointwise product
    let basis = MwBasis::new(MwBasisSpec::one_dim(0, 3)).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (a, b, c) = (
            random_vec(&mut rng, 8),
            random_vec(&mut rng, 8),
            random_vec(&mut rng, 8),
        );
        let nested = t.pseudo_mul(&t.pseudo_mul(&a, &b), &c);
        let direct = t.pseudo_mul3(&a, &b, &c).unwrap();
        assert!(max_diff(&nested, &direct) < 1e-12);
    }
}

#[test]
fn nested_products_alias_for_polynomials() {
    let basis = MwBasis::new(MwBasisSpec::one_dim(2, 0)).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    let a = [0.0, 0.0, 1.0];
    let nested = t.pseudo_mul(&t.pseudo_mul(&a, &a), &a);
    let direct = t.pseudo_mul3(&a, &a, &a).unwrap();
    assert!(max_diff(&nested, &direct) > 1e-3);
    // products staying in the span agree
    let lin = [0.5, 0.0, 0.0];
    let nested = t.pseudo_mul(&t.pseudo_mul(&lin, &lin), &a);
    let direct = t.pseudo_mul3(&lin, &lin, &a).unwrap();
    assert!(max_diff(&nested, &direct) < 1e-14);
}

#[test]
fn reduced_operators_at_zero_threshold_equal_full() {
    let basis = MwBasis::new(MwBasisSpec::one_dim(2, 2)).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (a, b, c) = (
            random_vec(&mut rng, 12),
            random_vec(&mut rng, 12),
            random_vec(&mut rng, 12),
        );
        let (ja, jb, jc) = (
            significant_indices(&a, 0.0),
            significant_indices(&b, 0.0),
            significant_indices(&c, 0.0),
        );
        assert!((reduced_mat_a(&a, &ja, &t).0 - t.mat_a(&a)).amax() < 1e-13);
        assert!(
            (reduced_mat_b(&a, &ja, &b, &jb, &t).unwrap().0 - t.mat_b(&a, &b).unwrap()).amax()
                < 1e-13
        );
        assert!(
            max_diff(
                &reduced_matvec_a(&a, &ja, &b, &jb, &t).0,
                &t.pseudo_mul(&a, &b)
            ) < 1e-13
        );
        let r3 = reduced_matvec_b(&a, &ja, &b, &jb, &c, &jc, &t).unwrap().0;
        assert!(max_diff(&r3, &t.pseudo_mul3(&a, &b, &c).unwrap()) < 1e-13);
    }
}

#[test]
fn reduced_operators_equal_thresholded_full_operators() {
    let basis = MwBasis::new(MwBasisSpec::one_dim(1, 3)).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut a = random_vec(&mut rng, 16);
        let mut b = random_vec(&mut rng, 16);
        let c = random_vec(&mut rng, 16);
        for j in (2..16).step_by(3) {
            a[j] *= 1e-5;
            b[(j + 1) % 16] *= 1e-5;
        }
        let eps = 1e-3;
        let (ja, jb, jc) = (
            significant_indices(&a, eps),
            significant_indices(&b, eps),
            significant_indices(&c, eps),
        );
        let (a2, b2, c2) = (threshold(&a, &ja), threshold(&b, &jb), threshold(&c, &jc));
        assert!((reduced_mat_a(&a, &ja, &t).0 - t.mat_a(&a2)).amax() < 1e-13);
        let (rb, _) = reduced_mat_b(&a, &ja, &b, &jb, &t).unwrap();
        assert!((rb - t.mat_b(&a2, &b2).unwrap()).amax() < 1e-13);
        let (rv, _) = reduced_matvec_b(&a, &ja, &b, &jb, &c, &jc, &t).unwrap();
        assert!(max_diff(&rv, &t.pseudo_mul3(&a2, &b2, &c2).unwrap()) < 1e-13);
        // error bound from the stored tensor slices
        let dropped = ja.complement(16);
        let bound = eps * t.triple_slice_bound(&dropped);
        let dev = (reduced_mat_a(&a, &ja, &t).0 - t.mat_a(&a)).amax();
        assert!(dev <= bound + 1e-15, "{dev} > {bound}");
        // e1 collapses B to A
        let one = significant_indices(&e1(16), eps);
        let (rb, _) = reduced_mat_b(&e1(16), &one, &b, &jb, &t).unwrap();
        assert!((rb - reduced_mat_a(&b, &jb, &t).0).amax() < 1e-13);
        // single index keeps a scalar multiple of the identity
        let (ra, _) = reduced_mat_a(&a, &significant_indices(&[a[0]], 0.0), &t);
        assert!((ra - DMatrix::identity(16, 16).scale(a[0])).amax() < 1e-14);
    }
}

#[test]
fn cost_is_monotone_in_threshold() {
    let basis = MwBasis::new(MwBasisSpec::one_dim(2, 3)).unwrap();
    let t = ProductTensors::for_basis(&basis).unwrap();
    let a: Vec<f64> = (0..24).map(|i| 0.5f64.powi(i)).collect();
    let mut last = u64::MAX;
    for eps in [0.0, 1e-12, 1e-8, 1e-4, 1e-2, 0.3] {
        let j = significant_indices(&a, eps);
        let (_, macs) = reduced_mat_b(&a, &j, &a, &j, &t).unwrap();
        assert!(macs <= last);
        last = macs;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn operators_symmetric_linear_commutative(
        a in prop::collection::vec(-2.0f64..2.0, 8),
        b in prop::collection::vec(-2.0f64..2.0, 8),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2)).unwrap();
        let t = ProductTensors::for_basis(&basis).unwrap();
        let ma = t.mat_a(&a);
        let mb = t.mat_b(&a, &b).unwrap();
        prop_assert!((&ma - ma.transpose()).amax() < 1e-13);
        prop_assert!((&mb - mb.transpose()).amax() < 1e-13);
        let comb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = t.mat_a(&comb);
        let rhs = ma.scale(alpha) + t.mat_a(&b).scale(beta);
        prop_assert!((lhs - rhs).amax() < 1e-12);
        prop_assert!(max_diff(&t.pseudo_mul(&a, &b), &t.pseudo_mul(&b, &a)) < 1e-13);
        let c = t.pseudo_mul(&a, &a);
        let p1 = t.pseudo_mul3(&a, &b, &c).unwrap();
        let p2 = t.pseudo_mul3(&c, &a, &b).unwrap();
        prop_assert!(max_diff(&p1, &p2) < 1e-12);
    }
}
