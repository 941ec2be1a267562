//! Stochastic Galerkin flux of an uncertain saturation, its Jacobian spectrum
//! and the hyperbolicity report, in both flux modes.

use sgflow::transport::{flux_jacobian, hyperbolicity_check, sg_flux, wave_speed_bounds};
use sgflow::{FluxMode, FluxParams, MwBasis, MwBasisSpec, ProductTensors};

fn main() -> sgflow::Result<()> {
    let basis = MwBasis::new(MwBasisSpec::one_dim(1, 2))?;
    let t = ProductTensors::for_basis(&basis)?;
    let rule = basis.build_quadrature();
    let s = basis.project(&rule, |x| 0.55 + 0.25 * x[0].powi(3));
    let u = basis.project(&rule, |x| 1.0 + 0.2 * x[0]);
    for mode in [FluxMode::Quad, FluxMode::Trip] {
        let params = FluxParams::full(2.0, mode);
        let f = sg_flux(&s, &u, &params, &t)?;
        let j = flux_jacobian(&s, &u, &params, &t)?;
        let ev = j.complex_eigenvalues();
        let max_imag = ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let (lo, hi) = wave_speed_bounds(&s, &s, &u, &params, &t)?;
        println!(
            "{mode:?}: mean flux {:.5}, speeds [{lo:.4}, {hi:.4}], max |imag| {max_imag:.1e}",
            f[0]
        );
    }
    let rep = hyperbolicity_check(&s, &u, 2.0, &t)?;
    println!("{rep:?}");
    Ok(())
}
