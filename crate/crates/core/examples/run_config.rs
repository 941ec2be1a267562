//! Runs an experiment from a TOML overlay, the same path the CLI takes, and
//! lists what was written.

use sgflow::experiments::config::{ExperimentKind, RunConfig};
use sgflow::experiments::execute;

fn main() -> sgflow::Result<()> {
    let cfg = RunConfig::from_toml_str(
        ExperimentKind::Riemann1d,
        r#"
mc_samples = 100
snapshots = [0.0125, 0.025]

[grid]
mx = 100

[riemann]
u_min = 0.9
u_max = 1.1
"#,
    )?;
    let out = std::env::temp_dir().join("sgflow_run_config");
    let o = execute(&cfg, &out)?;
    for s in &o.manifest.validation.snapshots {
        println!(
            "t = {}: normalized L1(MW, MC) = {:.4}, std peak in front band: {}",
            s.t, s.normalized_l1_mean, s.std_argmax_in_front_band
        );
    }
    println!("wrote {:?} to {}", o.manifest.files, out.display());
    Ok(())
}
