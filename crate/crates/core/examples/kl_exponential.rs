//! Analytic Karhunen-Loève expansion of the exponential covariance in 1D and
//! on a rectangle, and one lognormal permeability sample.

use sgflow::engine::Grid;
use sgflow::kl::{exp_cov_eigenpairs_2d, exp_cov_residual, exp_cov_roots_1d, ExpKl1d, XiMap};
use sgflow::pressure::lognormal_permeability;

fn main() -> sgflow::Result<()> {
    let roots = exp_cov_roots_1d(0.3, 1.0, 6)?;
    for w in &roots {
        println!(
            "ω = {w:.10}, residual {:.1e}",
            exp_cov_residual(*w, 0.3, 1.0)
        );
    }
    for n in [5, 20, 100] {
        let kl = ExpKl1d::new(0.3, 1.0, 1.0, n)?;
        println!("{n:3} terms capture {:.4} of σ²L", kl.captured_fraction());
    }

    let kl2 = exp_cov_eigenpairs_2d(0.3, 0.3, 1.0, 1.0, 1.0, 4, 12)?;
    println!(
        "2D eigenvalues {:?}, energy {:.3}",
        kl2.eigenvalues,
        kl2.energy_fraction()
    );
    let grid = Grid::two_d(8, 8, 1.0, 1.0)?;
    let centres: Vec<[f64; 2]> = (0..grid.cells()).map(|c| grid.center(c)).collect();
    let exp = kl2.on_points(&centres, 0.0, XiMap::truncated_gaussian());
    let k = lognormal_permeability(&exp, &[0.5, -0.2, 0.8, 0.1]);
    for j in (0..8).rev() {
        let row: Vec<String> = (0..8)
            .map(|i| format!("{:5.2}", k[grid.cell(i, j)]))
            .collect();
        println!("{}", row.join(" "));
    }
    Ok(())
}
