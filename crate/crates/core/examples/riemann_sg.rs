//! Uncertain-velocity Riemann problem solved with a Haar basis; prints the
//! mean and standard deviation profiles.

use sgflow::engine::*;
use sgflow::tensors::e1;
use sgflow::{FluxMode, FluxParams, MwBasis, MwBasisSpec, ProductTensors};

fn main() -> sgflow::Result<()> {
    let basis = MwBasis::new(MwBasisSpec::one_dim(0, 3))?;
    let t = ProductTensors::for_basis(&basis)?;
    let p = basis.len();
    let grid = Grid::one_d(120, -0.02, 0.06)?;
    let u = basis.project(&basis.build_quadrature(), |x| 1.0 + 0.2 * x[0]);
    let vel = VelocityField::uniform(&grid, &u, &[]);
    let bcs = Boundaries {
        left: Boundary::Dirichlet(e1(p)),
        right: Boundary::Outflow,
        bottom: Boundary::NoFlow,
        top: Boundary::NoFlow,
    };
    let cfg = EngineConfig::new(FluxParams::new(2.0, FluxMode::Quad, 1e-10), false);
    let solver = Solver::new(&grid, &bcs, &vel, &[], &t, cfg)?;
    let mut s = SgField::from_fn(grid.cells(), p, |c| {
        if grid.center(c)[0] <= 0.0 {
            e1(p)
        } else {
            vec![0.0; p]
        }
    });
    let stats = solver.advance(&mut s, 0.0, 0.025)?;
    println!(
        "{} steps, {} MACs, max mass imbalance {:.1e}",
        stats.steps, stats.macs, stats.max_conservation_error
    );
    let (mean, std) = field_statistics(&s);
    for c in (0..grid.cells()).step_by(6) {
        let bar = "#".repeat((mean[c] * 40.0).round() as usize);
        println!(
            "x={:+.4} mean {:.3} std {:.3} {bar}",
            grid.center(c)[0],
            mean[c],
            std[c]
        );
    }
    Ok(())
}
