use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::config::RunConfig;
use super::montecarlo::SampleFailure;
use crate::error::{Result, SgError};
use crate::pressure::ProjectionStats;
use crate::tensors::TensorStats;

/// Label used in snapshot file names: shortest round-trip decimal.
pub fn time_label(t: f64) -> String {
    format!("{t}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Default)]
pub struct Stopwatch {
    pub entries: Vec<Timing>,
}

impl Stopwatch {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.entries.push(Timing {
            phase: phase.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KlSummary {
    pub terms: usize,
    pub eigenvalues: Vec<f64>,
    pub energy_fraction: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverSummary {
    pub steps: usize,
    pub macs: u64,
    pub halvings: usize,
    pub max_conservation_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicitySummary {
    pub cells_checked: usize,
    pub min_denominator_eigenvalue: f64,
    pub max_denominator_asymmetry: f64,
    pub all_positive_definite: bool,
    pub max_imag_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub samples: usize,
    pub failed: usize,
    pub failures: Vec<SampleFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotCheck {
    pub t: f64,
    /// `Σ|mean_MW − mean_MC| / Σ|mean_MC|`.
    pub normalized_l1_mean: f64,
    pub mw_std_argmax: usize,
    /// Cells with MC mean in `[0.1, 0.9]`, dilated by one cell.
    pub front_band_cells: usize,
    pub std_argmax_in_front_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShockBandReport {
    pub t: f64,
    pub band: [f64; 2],
    pub cell_width: f64,
    pub threshold: f64,
    /// Face positions where the mean jumps by more than the threshold.
    pub jumps: Vec<f64>,
    pub inside: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InletReport {
    pub cells: usize,
    pub max_deviation_from_injected: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub p: usize,
    pub resolution_levels: usize,
    pub steps: usize,
    pub dt: f64,
    pub full_seconds: f64,
    pub reduced_seconds: f64,
    pub full_macs: u64,
    pub reduced_macs: u64,
    pub mac_ratio: f64,
    pub speedup: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Validation {
    pub snapshots: Vec<SnapshotCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shock_band: Option<ShockBandReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inlet: Option<InletReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mac_ratio_increasing: Option<bool>,
}

/// Everything needed to re-run and audit an experiment. Apart from the
/// wall-clock fields the content is a function of the config.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub package_version: &'static str,
    pub config: RunConfig,
    pub basis_size: usize,
    pub tensors: Option<TensorStats>,
    pub kl: Option<KlSummary>,
    pub velocity_projection: Option<ProjectionStats>,
    pub solver: Option<SolverSummary>,
    pub hyperbolicity: Option<HyperbolicitySummary>,
    pub monte_carlo: Option<McSummary>,
    pub validation: Validation,
    pub bench: Vec<BenchRow>,
    pub timings: Vec<Timing>,
    pub files: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        RunManifest {
            package_version: env!("CARGO_PKG_VERSION"),
            config,
            basis_size: 0,
            tensors: None,
            kl: None,
            velocity_projection: None,
            solver: None,
            hyperbolicity: None,
            monte_carlo: None,
            validation: Validation::default(),
            bench: Vec::new(),
            timings: Vec::new(),
            files: Vec::new(),
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| SgError::io(&path, e))
    }
}

/// Fields of one snapshot on cell centres.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub mw_mean: Vec<f64>,
    pub mw_std: Vec<f64>,
    pub mc_mean: Vec<f64>,
    pub mc_std: Vec<f64>,
}

pub(crate) fn field_csv(
    points: &[[f64; 2]],
    two_d: bool,
    name: &str,
    mw: &[f64],
    mc: &[f64],
) -> String {
    let mut s = String::new();
    if two_d {
        let _ = writeln!(s, "x,y,mw_{name},mc_{name}");
    } else {
        let _ = writeln!(s, "x,mw_{name},mc_{name}");
    }
    for (i, p) in points.iter().enumerate() {
        if two_d {
            let _ = writeln!(s, "{},{},{},{}", p[0], p[1], mw[i], mc[i]);
        } else {
            let _ = writeln!(s, "{},{},{}", p[0], mw[i], mc[i]);
        }
    }
    s
}

pub(crate) fn timings_csv(t: &[Timing]) -> String {
    let mut s = String::from("phase,seconds\n");
    for e in t {
        let _ = writeln!(s, "{},{}", e.phase, e.seconds);
    }
    s
}

pub(crate) fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "p,resolution_levels,steps,dt,full_seconds,reduced_seconds,full_macs,reduced_macs,mac_ratio,speedup,max_deviation\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.p,
            r.resolution_levels,
            r.steps,
            r.dt,
            r.full_seconds,
            r.reduced_seconds,
            r.full_macs,
            r.reduced_macs,
            r.mac_ratio,
            r.speedup,
            r.max_deviation
        );
    }
    s
}

pub(crate) fn write_text(
    dir: &Path,
    name: &str,
    text: &str,
    files: &mut Vec<String>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| SgError::io(&path, e))?;
    files.push(name.to_string());
    Ok(())
}

/// `Σ|a − b| / Σ|b|`, or the plain L1 norm of `a − b` when `b` vanishes.
pub fn normalized_l1(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = b.iter().map(|y| y.abs()).sum();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Cells with `lo ≤ mean ≤ hi`, dilated by one cell in each direction
/// (diagonals included).
pub fn front_band(mean: &[f64], mx: usize, my: usize, lo: f64, hi: f64) -> Vec<bool> {
    let core: Vec<bool> = mean.iter().map(|m| (lo..=hi).contains(m)).collect();
    let mut out = vec![false; mean.len()];
    for j in 0..my {
        for i in 0..mx {
            if !core[j * mx + i] {
                continue;
            }
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < mx && (jj as usize) < my {
                        out[jj as usize * mx + ii as usize] = true;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn snapshot_check(s: &Snapshot, mx: usize, my: usize) -> SnapshotCheck {
    let band = front_band(&s.mc_mean, mx, my, 0.1, 0.9);
    let am = argmax(&s.mw_std);
    SnapshotCheck {
        t: s.t,
        normalized_l1_mean: normalized_l1(&s.mw_mean, &s.mc_mean),
        mw_std_argmax: am,
        front_band_cells: band.iter().filter(|b| **b).count(),
        std_argmax_in_front_band: band[am],
    }
}
