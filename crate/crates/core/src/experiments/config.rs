use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::MwBasisSpec;
use crate::engine::{Reconstruction, DEFAULT_CFL_1D, DEFAULT_CFL_2D};
use crate::error::{Result, SgError};
use crate::kl::{DemoKernel, XiKind};
use crate::transport::{FluxMode, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Riemann1d,
    LineInjection,
    FiveSpot,
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Riemann1d => "riemann1d",
            ExperimentKind::LineInjection => "line-injection",
            ExperimentKind::FiveSpot => "five-spot",
            ExperimentKind::Bench => "bench",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = SgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "riemann1d" => Ok(ExperimentKind::Riemann1d),
            "line-injection" => Ok(ExperimentKind::LineInjection),
            "five-spot" => Ok(ExperimentKind::FiveSpot),
            "bench" => Ok(ExperimentKind::Bench),
            other => Err(SgError::Config(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Spatial grid. In 1D the domain is `[x0, x0 + lx]` and `my` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub mx: usize,
    pub my: usize,
    pub x0: f64,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiemannConfig {
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineInjectionConfig {
    pub u_mean: f64,
    pub inject_lo: f64,
    pub inject_hi: f64,
    pub penalty_strength: f64,
    pub kl_terms: usize,
    /// Simpson nodes per direction (odd).
    pub simpson_nodes: usize,
    /// CSV table `r1,r2,cxx,cyy,cxy`; the demo kernel is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_file: Option<PathBuf>,
    pub demo_kernel: DemoKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiveSpotConfig {
    /// Mean log-permeability `Ȳ`.
    pub perm_mean: f64,
    pub perm_sigma2: f64,
    pub perm_corr_x: f64,
    pub perm_corr_y: f64,
    pub kl_terms: usize,
    pub quad_points_per_dim: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub poly_degree: usize,
    /// One run per entry; `P = (N_p + 1)·2^{N_r}`.
    pub resolution_levels: Vec<usize>,
    pub steps: usize,
    /// Deviation checkpoints, evenly spaced over the steps.
    pub checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub basis: MwBasisSpec,
    pub flux_mode: FluxMode,
    /// Reduction threshold; `≤ 0` runs the full operators.
    pub epsilon: f64,
    pub viscosity_ratio: f64,
    pub xi_law: XiKind,
    pub grid: GridConfig,
    pub end_time: f64,
    pub snapshots: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
    pub cfl: f64,
    pub reconstruction: Reconstruction,
    pub paper_scale: bool,
    pub riemann: RiemannConfig,
    pub line_injection: LineInjectionConfig,
    pub five_spot: FiveSpotConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Desk-scale defaults.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = RunConfig {
            kind,
            basis: MwBasisSpec::one_dim(0, 4),
            flux_mode: FluxMode::Quad,
            epsilon: DEFAULT_EPSILON,
            viscosity_ratio: 2.0,
            xi_law: XiKind::Uniform,
            grid: GridConfig {
                mx: 300,
                my: 1,
                x0: -0.02,
                lx: 0.08,
                ly: 1.0,
            },
            end_time: 0.025,
            snapshots: vec![0.025],
            mc_samples: 500,
            seed: 2024,
            cfl: DEFAULT_CFL_1D,
            reconstruction: Reconstruction::Minmod,
            paper_scale: false,
            riemann: RiemannConfig {
                u_min: 0.8,
                u_max: 1.2,
            },
            line_injection: LineInjectionConfig {
                u_mean: 1.0,
                inject_lo: 0.25,
                inject_hi: 0.75,
                penalty_strength: 100.0,
                kl_terms: 4,
                simpson_nodes: 21,
                covariance_file: None,
                demo_kernel: DemoKernel {
                    sigma2_xx: 0.04,
                    sigma2_yy: 0.01,
                    corr_x: 0.5,
                    corr_y: 0.3,
                    cross: 0.0,
                },
            },
            five_spot: FiveSpotConfig {
                perm_mean: 0.0,
                perm_sigma2: 1.0,
                perm_corr_x: 0.3,
                perm_corr_y: 0.3,
                kl_terms: 2,
                quad_points_per_dim: 6,
                rate: 1.0,
            },
            bench: BenchConfig {
                poly_degree: 2,
                resolution_levels: vec![2, 3, 4, 5],
                steps: 40,
                checkpoints: 4,
            },
        };
        match kind {
            ExperimentKind::Riemann1d => {}
            ExperimentKind::LineInjection => {
                c.basis = MwBasisSpec::total_order(4, 2, 0);
                c.xi_law = XiKind::TruncatedGaussian;
                c.grid = GridConfig {
                    mx: 20,
                    my: 40,
                    x0: 0.0,
                    lx: 1.0,
                    ly: 1.0,
                };
                c.end_time = 0.5;
                c.snapshots = vec![0.25, 0.5];
                c.cfl = DEFAULT_CFL_2D;
            }
            ExperimentKind::FiveSpot => {
                c.basis = MwBasisSpec::total_order(2, 4, 0);
                c.xi_law = XiKind::TruncatedGaussian;
                c.grid = GridConfig {
                    mx: 25,
                    my: 25,
                    x0: 0.0,
                    lx: 1.0,
                    ly: 1.0,
                };
                c.end_time = 2.0;
                c.snapshots = vec![0.5, 1.0, 2.0];
                c.cfl = DEFAULT_CFL_2D;
            }
            ExperimentKind::Bench => {
                c.grid.mx = 100;
                c.mc_samples = 1;
            }
        }
        c
    }

    /// Parses TOML text on top of the defaults for `kind`. A `kind` key in the
    /// text must agree.
    pub fn from_toml_str(kind: ExperimentKind, text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e| SgError::Config(format!("config parse: {e}")))?;
        if let Some(k) = user.get("kind") {
            let k = k
                .as_str()
                .ok_or_else(|| SgError::Config("kind must be a string".into()))?;
            if k.parse::<ExperimentKind>()? != kind {
                return Err(SgError::Config(format!(
                    "config is for {k}, requested {}",
                    kind.name()
                )));
            }
        }
        let mut base = toml::Table::try_from(Self::defaults(kind))
            .map_err(|e| SgError::Config(format!("default config: {e}")))?;
        merge(&mut base, user);
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e| SgError::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config file; relative covariance paths resolve against its
    /// directory.
    pub fn from_file(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SgError::io(path, e))?;
        let mut cfg = Self::from_toml_str(kind, &text)?;
        if let Some(f) = &cfg.line_injection.covariance_file {
            if f.is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                cfg.line_injection.covariance_file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Switches to the reference grids and sample counts.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        match self.kind {
            ExperimentKind::Riemann1d | ExperimentKind::Bench => {
                self.grid.mx = 300;
            }
            ExperimentKind::LineInjection => {
                self.grid.mx = 40;
                self.grid.my = 80;
                self.mc_samples = 1000;
            }
            ExperimentKind::FiveSpot => {
                self.grid.mx = 50;
                self.grid.my = 50;
                self.mc_samples = 1000;
            }
        }
    }

    pub fn is_2d(&self) -> bool {
        matches!(
            self.kind,
            ExperimentKind::LineInjection | ExperimentKind::FiveSpot
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SgError::Config(m));
        if !(self.end_time > 0.0) {
            return bad(format!("end_time must be positive, got {}", self.end_time));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1".into());
        }
        if self.snapshots.is_empty()
            || self
                .snapshots
                .iter()
                .any(|t| !(*t > 0.0) || *t > self.end_time)
            || self.snapshots.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "snapshots must be increasing in (0, end_time]: {:?}",
                self.snapshots
            ));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl {} outside (0, 1]", self.cfl));
        }
        if !(self.viscosity_ratio > 0.0) {
            return bad("viscosity_ratio must be positive".into());
        }
        if self.grid.mx == 0 || (self.is_2d() && self.grid.my == 0) {
            return bad("grid needs at least one cell per direction".into());
        }
        if !(self.grid.lx > 0.0 && self.grid.ly > 0.0) {
            return bad("grid lengths must be positive".into());
        }
        match self.kind {
            ExperimentKind::Riemann1d | ExperimentKind::Bench => {
                let r = &self.riemann;
                if !(r.u_min > 0.0 && r.u_max >= r.u_min) {
                    return bad(format!("velocity range [{}, {}]", r.u_min, r.u_max));
                }
                if self.kind == ExperimentKind::Riemann1d && self.basis.dims != 1 {
                    return bad("riemann1d needs a one-variable basis".into());
                }
                if self.kind == ExperimentKind::Bench
                    && (self.bench.resolution_levels.is_empty() || self.bench.steps == 0)
                {
                    return bad("bench needs resolution levels and steps".into());
                }
            }
            ExperimentKind::LineInjection => {
                let l = &self.line_injection;
                if let Some(f) = &l.covariance_file {
                    if !f.is_file() {
                        return bad(format!("covariance file {} not found", f.display()));
                    }
                }
                if l.kl_terms > self.basis.dims {
                    return bad(format!(
                        "{} KL terms with a {}-variable basis",
                        l.kl_terms, self.basis.dims
                    ));
                }
                if l.simpson_nodes < 3 || l.simpson_nodes % 2 == 0 {
                    return bad("simpson_nodes must be odd and at least 3".into());
                }
            }
            ExperimentKind::FiveSpot => {
                let f = &self.five_spot;
                if f.kl_terms > self.basis.dims {
                    return bad(format!(
                        "{} KL terms with a {}-variable basis",
                        f.kl_terms, self.basis.dims
                    ));
                }
                if !(f.rate > 0.0) || f.quad_points_per_dim == 0 {
                    return bad("five-spot rate and quadrature points must be positive".into());
                }
                if f.perm_sigma2 < 0.0 || !(f.perm_corr_x > 0.0 && f.perm_corr_y > 0.0) {
                    return bad("permeability covariance parameters".into());
                }
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
