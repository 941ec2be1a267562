//! Galerkin products of two random quantities compared with the pointwise
//! product at a few points.

use sgflow::{MwBasis, MwBasisSpec, ProductTensors};

fn main() -> sgflow::Result<()> {
    let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2))?;
    let t = ProductTensors::for_basis(&basis)?;
    let p = basis.len();
    println!("{:?}", t.stats());

    // a(ξ) = 0.5 + 0.2ξ, b(ξ) = 1 - 0.3ξ, both exactly representable
    let a = basis.project(&basis.build_quadrature(), |x| 0.5 + 0.2 * x[0]);
    let b = basis.project(&basis.build_quadrature(), |x| 1.0 - 0.3 * x[0]);
    let ab = t.pseudo_mul(&a, &b);
    let abb = t.pseudo_mul3(&a, &b, &b)?;
    for xi in [-0.8, 0.0, 0.7] {
        let exact = (0.5 + 0.2 * xi) * (1.0 - 0.3 * xi);
        println!(
            "ξ = {xi:+.1}: a·b = {exact:.6}, Galerkin {:.6}; a·b² Galerkin {:.6} (exact {:.6})",
            basis.synthesize(&ab, &[xi]),
            basis.synthesize(&abb, &[xi]),
            exact * (1.0 - 0.3 * xi)
        );
    }
    let m = t.mat_a(&a);
    println!(
        "A(a) is {p}×{p}, mean of a on its diagonal: {:.3}",
        m[(0, 0)]
    );
    Ok(())
}
