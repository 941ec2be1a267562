//! Full against locally reduced solves of the Riemann problem for growing
//! Haar-type bases.

use sgflow::experiments::config::{ExperimentKind, RunConfig};
use sgflow::experiments::run;

fn main() -> sgflow::Result<()> {
    let mut cfg = RunConfig::defaults(ExperimentKind::Bench);
    cfg.grid.mx = 60;
    cfg.bench.resolution_levels = vec![1, 2, 3, 4];
    cfg.bench.steps = 20;
    let o = run(&cfg)?;
    println!("   P   MAC ratio  speedup  max deviation");
    for r in &o.manifest.bench {
        println!(
            "{:4} {:10.2} {:8.2} {:14.2e}",
            r.p, r.mac_ratio, r.speedup, r.max_deviation
        );
    }
    Ok(())
}
