//! Locally reduced products: significant index sets and the multiply-add
//! savings for a sparse coefficient vector.

use sgflow::reduced::{reduced_matvec_a, significant_indices};
use sgflow::{MwBasis, MwBasisSpec, ProductTensors};

fn main() -> sgflow::Result<()> {
    let basis = MwBasis::new(MwBasisSpec::one_dim(2, 5))?;
    let t = ProductTensors::for_basis(&basis)?;
    let p = t.len();
    // a localized step: only wavelets near ξ = 0.3 are active
    let s = basis.project(&basis.build_quadrature(), |x| {
        if x[0] < 0.3 {
            1.0
        } else {
            0.0
        }
    });
    let all = significant_indices(&s, 0.0);
    for eps in [0.0, 1e-12, 1e-8, 1e-4] {
        let j = significant_indices(&s, eps);
        let (full, full_macs) = reduced_matvec_a(&s, &all, &s, &all, &t);
        let (red, macs) = reduced_matvec_a(&s, &j, &s, &j, &t);
        let err = full
            .iter()
            .zip(&red)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "ε = {eps:.0e}: {} of {p} significant, MACs {macs} vs {full_macs}, max deviation {err:.2e}",
            j.len()
        );
    }
    Ok(())
}
