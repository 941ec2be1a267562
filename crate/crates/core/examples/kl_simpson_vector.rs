//! Numerical KL of a vector-valued field from a tabulated covariance, solved
//! on a Simpson grid.

use sgflow::kl::{gevp_simpson, CovarianceTable, DemoKernel, SimpsonGrid};

fn main() -> sgflow::Result<()> {
    let k = DemoKernel {
        sigma2_xx: 0.04,
        sigma2_yy: 0.01,
        corr_x: 0.5,
        corr_y: 0.3,
        cross: 0.3,
    };
    let n = 21;
    let h = 1.0 / (n - 1) as f64;
    let table = CovarianceTable::separable_exponential(&k, n - 1, h, n - 1, h);
    let grid = SimpsonGrid {
        nx: n,
        ny: n,
        len_x: 1.0,
        len_y: 1.0,
    };
    let kl = gevp_simpson(&table, &grid, 6)?;
    println!("eigenvalues {:.5?}", kl.eigenvalues);
    println!("energy fraction {:.4}", kl.energy_fraction);
    for i in 0..3 {
        let cross: Vec<String> = (0..3)
            .map(|j| format!("{:+.1e}", kl.inner(&kl.modes[i], &kl.modes[j])))
            .collect();
        println!("⟨g{i}, g·⟩_W = {}", cross.join(" "));
    }
    let (gx, gy) = kl.extend(0, [0.37, 0.61])?;
    println!("leading mode off-grid at (0.37, 0.61): ({gx:.4}, {gy:.4})");
    Ok(())
}
