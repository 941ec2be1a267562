//! Five-spot pressure solve on a lognormal permeability and the projection of
//! the random face fluxes onto a multiwavelet basis.

use sgflow::engine::Grid;
use sgflow::kl::{exp_cov_eigenpairs_2d, XiMap};
use sgflow::pressure::*;
use sgflow::{MwBasis, MwBasisSpec};

fn main() -> sgflow::Result<()> {
    let grid = Grid::two_d(16, 16, 1.0, 1.0)?;
    let q = five_spot_sources(&grid, 1.0);
    let centres: Vec<[f64; 2]> = (0..grid.cells()).map(|c| grid.center(c)).collect();
    let kl = exp_cov_eigenpairs_2d(0.3, 0.3, 1.0, 1.0, 1.0, 2, 10)?.on_points(
        &centres,
        0.0,
        XiMap::truncated_gaussian(),
    );
    let perm = lognormal_permeability(&kl, &[0.3, -0.6]);
    let sol = solve_pressure(&PressureProblem {
        grid: &grid,
        perm: &perm,
        sources: &q,
    })?;
    println!(
        "CG iterations {}, residual {:.1e}, pressure drop {:.3}",
        sol.iterations,
        sol.residual,
        sol.pressure
            .iter()
            .fold(f64::NEG_INFINITY, |a, b| a.max(*b))
            - sol.pressure.iter().fold(f64::INFINITY, |a, b| a.min(*b))
    );

    let basis = MwBasis::new(MwBasisSpec::total_order(2, 2, 0))?;
    let rule = velocity_rule(&basis, 4);
    let field = project_velocity_mw(
        |xi| {
            let k = lognormal_permeability(&kl, xi);
            let s = solve_pressure(&PressureProblem {
                grid: &grid,
                perm: &k,
                sources: &q,
            })?;
            Ok(FluxSample {
                flux_x: s.flux_x,
                flux_y: s.flux_y,
            })
        },
        &basis,
        &rule,
        &grid,
        &q,
    )?;
    println!(
        "P = {}, {} velocity samples, max mode divergence {:.1e}",
        field.p, field.stats.nodes, field.stats.max_divergence
    );
    Ok(())
}
