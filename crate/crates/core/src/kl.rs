//! Truncated Karhunen-Loève expansions: analytic eigenpairs of the separable
//! exponential covariance, a Simpson-discretized eigensolver for tabulated
//! stationary matrix-valued covariances, and field sampling.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SgError};

/// Truncation bound of the Gaussian law, in standard deviations of the
/// parent distribution's unit (the 99.7% convention).
pub const TRUNCATION_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiKind {
    Uniform,
    TruncatedGaussian,
}

/// Map from the basis variable `ξ_std ∈ [-1, 1]` (uniform) to a KL variable
/// with zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiMap {
    pub kind: XiKind,
    /// Uniform: half-width of the support. Truncated Gaussian: standard
    /// deviation of the untruncated parent.
    pub scale: f64,
}

impl XiMap {
    /// Uniform on `[-√3, √3]`.
    pub fn uniform() -> Self {
        XiMap {
            kind: XiKind::Uniform,
            scale: 3f64.sqrt(),
        }
    }

    /// Gaussian truncated at `±3`, with the parent scale chosen so that the
    /// truncated law has unit variance.
    pub fn truncated_gaussian() -> Self {
        XiMap {
            kind: XiKind::TruncatedGaussian,
            scale: truncated_parent_scale(TRUNCATION_BOUND),
        }
    }

    pub fn new(kind: XiKind) -> Self {
        match kind {
            XiKind::Uniform => Self::uniform(),
            XiKind::TruncatedGaussian => Self::truncated_gaussian(),
        }
    }

    pub fn map(&self, x: f64) -> f64 {
        match self.kind {
            XiKind::Uniform => self.scale * x,
            XiKind::TruncatedGaussian => {
                if x < 0.0 {
                    return -self.map(-x);
                }
                if x >= 1.0 {
                    return TRUNCATION_BOUND;
                }
                let n = Normal::new(0.0, 1.0).expect("standard normal");
                let alpha = TRUNCATION_BOUND / self.scale;
                let hi = n.cdf(alpha);
                // upper half of the symmetric truncated law
                let p = 0.5 + x * (hi - 0.5);
                self.scale * n.inverse_cdf(p)
            }
        }
    }

    pub fn map_point(&self, xi_std: &[f64]) -> Vec<f64> {
        xi_std.iter().map(|x| self.map(*x)).collect()
    }
}

/// Applies the configured law to a standardized point.
pub fn map_xi_distribution(kind: XiKind, xi_std: &[f64]) -> Vec<f64> {
    XiMap::new(kind).map_point(xi_std)
}

fn truncated_variance(s: f64, c: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let a = c / s;
    let z = 2.0 * n.cdf(a) - 1.0;
    let pdf = (-0.5 * a * a).exp() / (2.0 * PI).sqrt();
    s * s * (1.0 - 2.0 * a * pdf / z)
}

fn truncated_parent_scale(c: f64) -> f64 {
    let (mut lo, mut hi) = (1.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if truncated_variance(mid, c) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(l²ω² − 1) sin(ωL) − 2lω cos(ωL)`
pub fn exp_cov_residual(omega: f64, l: f64, len: f64) -> f64 {
    (l * l * omega * omega - 1.0) * (omega * len).sin() - 2.0 * l * omega * (omega * len).cos()
}

/// First `n` positive roots of the exponential-covariance transcendental
/// equation; root `m` is bracketed in `((m−1)π/L, mπ/L)`.
pub fn exp_cov_roots_1d(l: f64, len: f64, n: usize) -> Result<Vec<f64>> {
    if !(l > 0.0 && len > 0.0) {
        return Err(SgError::Config(format!(
            "correlation length and domain length must be positive (l={l}, L={len})"
        )));
    }
    let h = |w: f64| exp_cov_residual(w, l, len);
    let mut roots = Vec::with_capacity(n);
    for m in 1..=n {
        let step = PI / len;
        let mut lo = (m - 1) as f64 * step;
        let mut hi = m as f64 * step;
        if m == 1 {
            lo = 1e-9 * step;
        }
        let (mut flo, fhi) = (h(lo), h(hi));
        if flo * fhi > 0.0 {
            return Err(SgError::Bracketing { index: m, lo, hi });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = h(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if flo * fm < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        roots.push(if h(lo).abs() <= h(hi).abs() { lo } else { hi });
    }
    Ok(roots)
}

/// One-dimensional eigenpairs of `σ² exp(−|x − x'|/l)` on `[0, L]`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpKl1d {
    pub corr_len: f64,
    pub len: f64,
    pub sigma2: f64,
    pub omegas: Vec<f64>,
}

impl ExpKl1d {
    pub fn new(corr_len: f64, len: f64, sigma2: f64, n: usize) -> Result<Self> {
        Ok(ExpKl1d {
            corr_len,
            len,
            sigma2,
            omegas: exp_cov_roots_1d(corr_len, len, n)?,
        })
    }

    pub fn eigenvalue(&self, m: usize) -> f64 {
        let (l, w) = (self.corr_len, self.omegas[m]);
        2.0 * l * self.sigma2 / (1.0 + w * w * l * l)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.omegas.len()).map(|m| self.eigenvalue(m)).collect()
    }

    /// Eigenfunction `m` at `x`, unit norm in `L²(0, L)`.
    pub fn eigenfunction(&self, m: usize, x: f64) -> f64 {
        let (l, w) = (self.corr_len, self.omegas[m]);
        let norm = ((l * l * w * w + 1.0) * self.len / 2.0 + l).sqrt();
        (l * w * (w * x).cos() + (w * x).sin()) / norm
    }

    /// `Σ λ_m / (σ² L)` over the computed pool.
    pub fn captured_fraction(&self) -> f64 {
        self.eigenvalues().iter().sum::<f64>() / (self.sigma2 * self.len)
    }
}

/// Products of one-dimensional eigenpairs for the separable covariance on
/// `[0, L_x] × [0, L_y]`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpKl2d {
    pub x: ExpKl1d,
    pub y: ExpKl1d,
    pub sigma2: f64,
    /// Root indices `(m_x, m_y)` of each retained term.
    pub pairs: Vec<(usize, usize)>,
    pub eigenvalues: Vec<f64>,
}

/// Keeps the `d` largest candidates, ordered by eigenvalue then index pair,
/// independent of the candidate order.
pub fn select_top(mut candidates: Vec<(f64, usize, usize)>, d: usize) -> Vec<(f64, usize, usize)> {
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    candidates.truncate(d);
    candidates
}

/// The `d` largest separable-exponential eigenpairs using `pool` roots per
/// direction (at least `d`).
pub fn exp_cov_eigenpairs_2d(
    lx: f64,
    ly: f64,
    sigma2: f64,
    len_x: f64,
    len_y: f64,
    d: usize,
    pool: usize,
) -> Result<ExpKl2d> {
    if !(sigma2 > 0.0) || d == 0 {
        return Err(SgError::Config(format!(
            "need σ² > 0 and d ≥ 1 (σ²={sigma2}, d={d})"
        )));
    }
    if d > pool * pool {
        return Err(SgError::Config(format!(
            "{d} KL terms requested but the candidate pool has {}",
            pool * pool
        )));
    }
    let x = ExpKl1d::new(lx, len_x, 1.0, pool)?;
    let y = ExpKl1d::new(ly, len_y, 1.0, pool)?;
    let mut cands = Vec::with_capacity(pool * pool);
    for i in 0..pool {
        for j in 0..pool {
            cands.push((sigma2 * x.eigenvalue(i) * y.eigenvalue(j), i, j));
        }
    }
    let top = select_top(cands, d);
    Ok(ExpKl2d {
        x,
        y,
        sigma2,
        pairs: top.iter().map(|c| (c.1, c.2)).collect(),
        eigenvalues: top.iter().map(|c| c.0).collect(),
    })
}

impl ExpKl2d {
    pub fn eigenfunction(&self, k: usize, px: f64, py: f64) -> f64 {
        let (i, j) = self.pairs[k];
        self.x.eigenfunction(i, px) * self.y.eigenfunction(j, py)
    }

    pub fn energy_fraction(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / (self.sigma2 * self.x.len * self.y.len)
    }

    /// Scalar expansion on `points` with constant mean.
    pub fn on_points(&self, points: &[[f64; 2]], mean: f64, xi: XiMap) -> KlExpansion {
        let modes = (0..self.eigenvalues.len())
            .map(|k| {
                points
                    .iter()
                    .map(|p| self.eigenfunction(k, p[0], p[1]))
                    .collect()
            })
            .collect();
        KlExpansion {
            points: points.to_vec(),
            components: 1,
            mean: vec![mean; points.len()],
            eigenvalues: self.eigenvalues.clone(),
            modes,
            energy_fraction: self.energy_fraction(),
            xi,
        }
    }
}

/// A truncated KL expansion stored on a set of evaluation points. Values are
/// laid out point-major, `components` entries per point.
#[derive(Debug, Clone, Serialize)]
pub struct KlExpansion {
    pub points: Vec<[f64; 2]>,
    pub components: usize,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub energy_fraction: f64,
    pub xi: XiMap,
}

impl KlExpansion {
    pub fn terms(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `ḡ + Σ √λ_k g_k ξ_k` for an already-mapped `ξ`.
    pub fn sample_field(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for ((lam, g), x) in self.eigenvalues.iter().zip(&self.modes).zip(xi) {
            let c = lam.sqrt() * x;
            out.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    /// Field at a standardized point `ξ_std ∈ [-1, 1]^d`.
    pub fn sample_std(&self, xi_std: &[f64]) -> Vec<f64> {
        self.sample_field(&self.xi.map_point(xi_std))
    }

    /// Pointwise variance `Σ λ_k g_k²`.
    pub fn variance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        for (lam, g) in self.eigenvalues.iter().zip(&self.modes) {
            out.iter_mut().zip(g).for_each(|(o, v)| *o += lam * v * v);
        }
        out
    }
}

/// Stationary matrix-valued covariance `C̃(r1, r2)` tabulated on a uniform
/// lag grid, with `r = x' − x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTable {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// Row-major over `(r1, r2)`, `r2` fastest.
    pub cxx: Vec<f64>,
    pub cyy: Vec<f64>,
    pub cxy: Vec<f64>,
}

/// Parameters of the built-in anisotropic separable exponential kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoKernel {
    pub sigma2_xx: f64,
    pub sigma2_yy: f64,
    pub corr_x: f64,
    pub corr_y: f64,
    /// Correlation coefficient between components, in `[-1, 1]`.
    pub cross: f64,
}

impl CovarianceTable {
    /// Separable exponential blocks on lags `i·h1`, `j·h2` for
    /// `|i| ≤ n1`, `|j| ≤ n2`.
    pub fn separable_exponential(k: &DemoKernel, n1: usize, h1: f64, n2: usize, h2: f64) -> Self {
        let r1: Vec<f64> = (-(n1 as i64)..=n1 as i64).map(|i| i as f64 * h1).collect();
        let r2: Vec<f64> = (-(n2 as i64)..=n2 as i64).map(|j| j as f64 * h2).collect();
        let mut t = CovarianceTable {
            cxx: Vec::with_capacity(r1.len() * r2.len()),
            cyy: Vec::with_capacity(r1.len() * r2.len()),
            cxy: Vec::with_capacity(r1.len() * r2.len()),
            r1: r1.clone(),
            r2: r2.clone(),
        };
        for a in &r1 {
            for b in &r2 {
                let rho = (-a.abs() / k.corr_x - b.abs() / k.corr_y).exp();
                t.cxx.push(k.sigma2_xx * rho);
                t.cyy.push(k.sigma2_yy * rho);
                t.cxy
                    .push(k.cross * (k.sigma2_xx * k.sigma2_yy).sqrt() * rho);
            }
        }
        t
    }

    fn check_axis(v: &[f64], name: &str) -> Result<f64> {
        if v.len() < 2 {
            return Err(SgError::Covariance(format!(
                "{name} axis needs at least two lags"
            )));
        }
        let h = v[1] - v[0];
        if !(h > 0.0)
            || v.windows(2)
                .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0))
        {
            return Err(SgError::Covariance(format!(
                "{name} lag grid is not uniform"
            )));
        }
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        Self::check_axis(&self.r1, "r1")?;
        Self::check_axis(&self.r2, "r2")?;
        let n = self.r1.len() * self.r2.len();
        if self.cxx.len() != n || self.cyy.len() != n || self.cxy.len() != n {
            return Err(SgError::Covariance(
                "entry count does not match the lag grid".into(),
            ));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.cxx
            .iter()
            .chain(&self.cyy)
            .chain(&self.cxy)
            .all(|v| *v == 0.0)
    }

    /// Reads the `r1,r2,cxx,cyy,cxy` CSV format.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| SgError::Covariance("empty table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["r1", "r2", "cxx", "cyy", "cxy"] {
            return Err(SgError::Covariance(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| SgError::Covariance(format!("row {}: {e}", ln + 2)))?;
            if vals.len() != 5 {
                return Err(SgError::Covariance(format!(
                    "row {} has {} fields",
                    ln + 2,
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        let mut r1: Vec<f64> = Vec::new();
        let mut r2: Vec<f64> = Vec::new();
        for r in &rows {
            if r1.last() != Some(&r[0]) && !r1.contains(&r[0]) {
                r1.push(r[0]);
            }
            if !r2.contains(&r[1]) {
                r2.push(r[1]);
            }
        }
        if r1.len() * r2.len() != rows.len() {
            return Err(SgError::Covariance(
                "rows do not form a full lag grid".into(),
            ));
        }
        for (idx, r) in rows.iter().enumerate() {
            if r[0] != r1[idx / r2.len()] || r[1] != r2[idx % r2.len()] {
                return Err(SgError::Covariance(format!(
                    "row {} out of row-major order",
                    idx + 2
                )));
            }
        }
        let t = CovarianceTable {
            r1,
            r2,
            cxx: rows.iter().map(|r| r[2]).collect(),
            cyy: rows.iter().map(|r| r[3]).collect(),
            cxy: rows.iter().map(|r| r[4]).collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SgError::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r1,r2,cxx,cyy,cxy\n");
        for (i, a) in self.r1.iter().enumerate() {
            for (j, b) in self.r2.iter().enumerate() {
                let idx = i * self.r2.len() + j;
                let _ = writeln!(
                    out,
                    "{a:e},{b:e},{:e},{:e},{:e}",
                    self.cxx[idx], self.cyy[idx], self.cxy[idx]
                );
            }
        }
        out
    }

    /// Bilinear interpolation of one entry (`0 = xx`, `1 = yy`, `2 = xy`).
    pub fn lookup(&self, which: usize, r1: f64, r2: f64) -> Result<f64> {
        let data = match which {
            0 => &self.cxx,
            1 => &self.cyy,
            _ => &self.cxy,
        };
        let (h1, h2) = (self.r1[1] - self.r1[0], self.r2[1] - self.r2[0]);
        let f1 = (r1 - self.r1[0]) / h1;
        let f2 = (r2 - self.r2[0]) / h2;
        let (n1, n2) = (self.r1.len(), self.r2.len());
        let tol = 1e-9;
        if f1 < -tol || f2 < -tol || f1 > (n1 - 1) as f64 + tol || f2 > (n2 - 1) as f64 + tol {
            return Err(SgError::Covariance(format!(
                "lag ({r1}, {r2}) outside the table"
            )));
        }
        let i = (f1.floor().max(0.0) as usize).min(n1 - 2);
        let j = (f2.floor().max(0.0) as usize).min(n2 - 2);
        let (t, u) = (
            (f1 - i as f64).clamp(0.0, 1.0),
            (f2 - j as f64).clamp(0.0, 1.0),
        );
        let at = |a: usize, b: usize| data[a * n2 + b];
        Ok((1.0 - t) * (1.0 - u) * at(i, j)
            + t * (1.0 - u) * at(i + 1, j)
            + (1.0 - t) * u * at(i, j + 1)
            + t * u * at(i + 1, j + 1))
    }

    /// Largest deviation of the diagonal blocks from evenness on the table.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.r1.iter().enumerate() {
            for (j, b) in self.r2.iter().enumerate() {
                for which in [0, 1] {
                    if let (Ok(x), Ok(y)) = (self.lookup(which, -a, -b), self.lookup(which, *a, *b))
                    {
                        let _ = (i, j);
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Node layout and composite Simpson weights on `[0, L_x] × [0, L_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpsonGrid {
    pub nx: usize,
    pub ny: usize,
    pub len_x: f64,
    pub len_y: f64,
}

pub fn simpson_weights(n: usize, len: f64) -> Result<Vec<f64>> {
    if n < 3 || n % 2 == 0 {
        return Err(SgError::Config(format!(
            "Simpson's rule needs an odd node count ≥ 3, got {n}"
        )));
    }
    let h = len / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect())
}

impl SimpsonGrid {
    pub fn hx(&self) -> f64 {
        self.len_x / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.len_y / (self.ny - 1) as f64
    }

    /// Node coordinates, `y` fastest.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                out.push([i as f64 * self.hx(), j as f64 * self.hy()]);
            }
        }
        out
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        let wx = simpson_weights(self.nx, self.len_x)?;
        let wy = simpson_weights(self.ny, self.len_y)?;
        Ok(wx
            .iter()
            .flat_map(|a| wy.iter().map(move |b| a * b))
            .collect())
    }
}

/// Linear 2D convolution `y(i) = Σ_j T(i − j) z(j)` by zero-padded FFT.
struct Conv2d {
    n1: usize,
    n2: usize,
    m1: usize,
    m2: usize,
    f1: Arc<dyn Fft<f64>>,
    f2: Arc<dyn Fft<f64>>,
    i1: Arc<dyn Fft<f64>>,
    i2: Arc<dyn Fft<f64>>,
}

impl Conv2d {
    fn new(n1: usize, n2: usize) -> Self {
        let (m1, m2) = (2 * n1, 2 * n2);
        let mut planner = FftPlanner::new();
        Conv2d {
            n1,
            n2,
            m1,
            m2,
            f1: planner.plan_fft_forward(m1),
            f2: planner.plan_fft_forward(m2),
            i1: planner.plan_fft_inverse(m1),
            i2: planner.plan_fft_inverse(m2),
        }
    }

    fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::default(); src.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        out
    }

    /// Forward transform of an `m1 × m2` array (row-major, `m2` fastest);
    /// the result is left in transposed layout.
    fn forward(&self, mut a: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.f2.process(&mut a);
        let mut t = Self::transpose(&a, self.m1, self.m2);
        self.f1.process(&mut t);
        t
    }

    fn inverse(&self, mut t: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.i1.process(&mut t);
        let mut a = Self::transpose(&t, self.m2, self.m1);
        self.i2.process(&mut a);
        let s = 1.0 / (self.m1 * self.m2) as f64;
        a.iter_mut().for_each(|v| *v *= s);
        a
    }

    fn kernel_hat(&self, mut kernel: impl FnMut(i64, i64) -> f64) -> Vec<Complex<f64>> {
        let mut a = vec![Complex::default(); self.m1 * self.m2];
        let (n1, n2) = (self.n1 as i64, self.n2 as i64);
        for r1 in -(n1 - 1)..n1 {
            for r2 in -(n2 - 1)..n2 {
                let i = r1.rem_euclid(self.m1 as i64) as usize;
                let j = r2.rem_euclid(self.m2 as i64) as usize;
                a[i * self.m2 + j] = Complex::new(kernel(r1, r2), 0.0);
            }
        }
        self.forward(a)
    }

    fn spectrum(&self, z: &[f64]) -> Vec<Complex<f64>> {
        let mut a = vec![Complex::default(); self.m1 * self.m2];
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                a[i * self.m2 + j] = Complex::new(z[i * self.n2 + j], 0.0);
            }
        }
        self.forward(a)
    }

    fn restrict(&self, a: &[Complex<f64>], out: &mut [f64]) {
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                out[i * self.n2 + j] += a[i * self.m2 + j].re;
            }
        }
    }
}

/// Symmetrized Simpson-weighted block covariance operator
/// `W^{1/2} C W^{1/2}` acting on `(v_x, v_y)` node vectors.
struct BlockOperator {
    n: usize,
    sqrt_w: Vec<f64>,
    conv: Conv2d,
    /// Kernel spectra for the blocks `xx, xy, yx, yy`; `None` where zero.
    blocks: [Option<Vec<Complex<f64>>>; 4],
}

impl BlockOperator {
    fn new(cov: &CovarianceTable, grid: &SimpsonGrid) -> Result<Self> {
        let w = grid.weights()?;
        let conv = Conv2d::new(grid.nx, grid.ny);
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut blocks: [Option<Vec<Complex<f64>>>; 4] = [None, None, None, None];
        // block (a, b) kernel T(r) with r = i − j in node units; C(x_i, x_j) = C̃(x_j − x_i)
        let specs: [(usize, f64); 4] = [(0, -1.0), (2, -1.0), (2, 1.0), (1, -1.0)];
        for (slot, (which, sign)) in specs.iter().enumerate() {
            let data = match which {
                0 => &cov.cxx,
                1 => &cov.cyy,
                _ => &cov.cxy,
            };
            if data.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut err = None;
            let hat = conv.kernel_hat(|r1, r2| {
                let (a, b) = (sign * r1 as f64 * hx, sign * r2 as f64 * hy);
                cov.lookup(*which, a, b).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    0.0
                })
            });
            if let Some(e) = err {
                return Err(e);
            }
            blocks[slot] = Some(hat);
        }
        Ok(BlockOperator {
            n: w.len(),
            sqrt_w: w.iter().map(|v| v.sqrt()).collect(),
            conv,
            blocks,
        })
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|o| *o = 0.0);
        let zx: Vec<f64> = v[..n]
            .iter()
            .zip(&self.sqrt_w)
            .map(|(a, b)| a * b)
            .collect();
        let zy: Vec<f64> = v[n..]
            .iter()
            .zip(&self.sqrt_w)
            .map(|(a, b)| a * b)
            .collect();
        let sx = self.conv.spectrum(&zx);
        let sy = self.conv.spectrum(&zy);
        // rows: xx·zx + xy·zy, yx·zx + yy·zy
        for (row, (b1, b2)) in [(0usize, (0usize, 1usize)), (1, (2, 3))] {
            let mut acc = vec![Complex::default(); sx.len()];
            let mut any = false;
            for (blk, s) in [(b1, &sx), (b2, &sy)] {
                if let Some(k) = &self.blocks[blk] {
                    any = true;
                    acc.iter_mut()
                        .zip(k.iter().zip(s.iter()))
                        .for_each(|(a, (kk, ss))| *a += kk * ss);
                }
            }
            if any {
                let y = self.conv.inverse(acc);
                self.conv.restrict(&y, &mut out[row * n..(row + 1) * n]);
            }
        }
        for (o, s) in out[..n].iter_mut().zip(&self.sqrt_w) {
            *o *= s;
        }
        for (o, s) in out[n..].iter_mut().zip(&self.sqrt_w) {
            *o *= s;
        }
    }
}

/// Vector-valued KL eigenpairs on a Simpson grid.
#[derive(Debug, Clone)]
pub struct VectorKl {
    pub grid: SimpsonGrid,
    pub weights: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Each mode stores `g_x` at all nodes followed by `g_y`.
    pub modes: Vec<Vec<f64>>,
    /// Largest relative eigen-residual `‖C g − λ g‖ / λ` of the discrete operator.
    pub max_residual: f64,
    pub energy_fraction: f64,
    cov: CovarianceTable,
}

/// Top-`d` eigenpairs of the Simpson-discretized covariance operator, by
/// block subspace iteration with Rayleigh-Ritz projection.
pub fn gevp_simpson(cov: &CovarianceTable, grid: &SimpsonGrid, d: usize) -> Result<VectorKl> {
    cov.validate()?;
    if d == 0 {
        return Err(SgError::Config("at least one KL term is required".into()));
    }
    let asym = cov.max_asymmetry();
    if asym > 1e-10 {
        return Err(SgError::CovarianceAsymmetric {
            max_asymmetry: asym,
        });
    }
    if cov.is_zero() {
        return Err(SgError::Covariance(
            "covariance is identically zero; no positive eigenvalues".into(),
        ));
    }
    let op = BlockOperator::new(cov, grid)?;
    let n = op.n;
    let dim = 2 * n;
    let b = (2 * d).max(d + 8).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DMatrix::from_fn(dim, b, |_, _| rng.random_range(-1.0..1.0));
    let mut y = DMatrix::zeros(dim, b);
    let mut theta = Vec::new();
    let mut max_residual = f64::INFINITY;
    for _ in 0..1000 {
        let q = x.clone().qr().q();
        for c in 0..b {
            op.apply(q.column(c).as_slice(), y.column_mut(c).as_mut_slice());
        }
        let h = q.transpose() * &y;
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let v = DMatrix::from_fn(b, b, |r, c| eig.eigenvectors[(r, order[c])]);
        theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        x = &q * &v;
        let ax = &y * &v;
        max_residual = (0..d)
            .map(|k| {
                let r = ax.column(k) - x.column(k) * theta[k];
                r.norm() / theta[k].abs().max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max);
        if max_residual < 1e-11 {
            break;
        }
        x = ax;
    }
    if !(theta[d - 1] > 0.0) {
        return Err(SgError::Covariance(format!(
            "only {} positive eigenvalues; {d} requested",
            theta.iter().filter(|t| **t > 0.0).count()
        )));
    }
    if max_residual > 1e-8 {
        return Err(SgError::Eigen(format!(
            "subspace iteration stalled with relative residual {max_residual:.3e}"
        )));
    }
    let sqrt_w = &op.sqrt_w;
    let modes: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let mut g: Vec<f64> = x.column(k).iter().copied().collect();
            for (i, v) in g.iter_mut().enumerate() {
                *v /= sqrt_w[i % n];
            }
            // deterministic sign: largest-magnitude entry positive
            let (imax, _) = g.iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
                if v.abs() > acc.1 + 1e-12 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            if g[imax] < 0.0 {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            g
        })
        .collect();
    let weights = grid.weights()?;
    let c0 = cov.lookup(0, 0.0, 0.0)? + cov.lookup(1, 0.0, 0.0)?;
    let trace = c0 * grid.len_x * grid.len_y;
    let eigenvalues: Vec<f64> = theta[..d].to_vec();
    let energy_fraction = if trace > 0.0 {
        eigenvalues.iter().sum::<f64>() / trace
    } else {
        0.0
    };
    Ok(VectorKl {
        grid: *grid,
        weights,
        eigenvalues,
        modes,
        max_residual,
        energy_fraction,
        cov: cov.clone(),
    })
}

impl VectorKl {
    /// Applies the (unsymmetrized) discrete operator `C W` to a mode.
    pub fn apply_operator(&self, g: &[f64]) -> Result<Vec<f64>> {
        let op = BlockOperator::new(&self.cov, &self.grid)?;
        let n = op.n;
        let z: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, v)| v * op.sqrt_w[i % n])
            .collect();
        let mut out = vec![0.0; g.len()];
        op.apply(&z, &mut out);
        for (i, v) in out.iter_mut().enumerate() {
            *v /= op.sqrt_w[i % n];
        }
        Ok(out)
    }

    /// Simpson inner product of two modes.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.weights.len();
        (0..2 * n).map(|i| self.weights[i % n] * a[i] * b[i]).sum()
    }

    /// Nyström extension of mode `k` to an arbitrary point: `(g_x, g_y)`.
    pub fn extend(&self, k: usize, p: [f64; 2]) -> Result<(f64, f64)> {
        let nodes = self.grid.nodes();
        let n = nodes.len();
        let g = &self.modes[k];
        let (mut gx, mut gy) = (0.0, 0.0);
        for (j, xj) in nodes.iter().enumerate() {
            let (r1, r2) = (xj[0] - p[0], xj[1] - p[1]);
            let w = self.weights[j];
            let cxx = self.cov.lookup(0, r1, r2)?;
            let cyy = self.cov.lookup(1, r1, r2)?;
            let cxy = self.cov.lookup(2, r1, r2)?;
            let cyx = self.cov.lookup(2, -r1, -r2)?;
            gx += w * (cxx * g[j] + cxy * g[n + j]);
            gy += w * (cyx * g[j] + cyy * g[n + j]);
        }
        let lam = self.eigenvalues[k];
        Ok((gx / lam, gy / lam))
    }

    /// Two-component expansion on `points` with constant mean `(m_x, m_y)`.
    pub fn on_points(&self, points: &[[f64; 2]], mean: [f64; 2], xi: XiMap) -> Result<KlExpansion> {
        let mut modes = Vec::with_capacity(self.eigenvalues.len());
        for k in 0..self.eigenvalues.len() {
            let mut m = Vec::with_capacity(2 * points.len());
            for p in points {
                let (a, b) = self.extend(k, *p)?;
                m.push(a);
                m.push(b);
            }
            modes.push(m);
        }
        Ok(KlExpansion {
            points: points.to_vec(),
            components: 2,
            mean: points.iter().flat_map(|_| mean).collect(),
            eigenvalues: self.eigenvalues.clone(),
            modes,
            energy_fraction: self.energy_fraction,
            xi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_map_is_scaled_identity() {
        let m = XiMap::uniform();
        assert_eq!(m.map(0.0), 0.0);
        assert!((m.map(1.0) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn truncated_gaussian_endpoints_and_symmetry() {
        let m = XiMap::truncated_gaussian();
        assert_eq!(m.map(1.0), 3.0);
        assert_eq!(m.map(-1.0), -3.0);
        assert_eq!(m.map(0.0), 0.0);
        assert!((m.map(0.3) + m.map(-0.3)).abs() < 1e-15);
        assert!((truncated_variance(m.scale, 3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_root_below_pi() {
        let r = exp_cov_roots_1d(0.5, 1.0, 3).unwrap();
        assert!(r[0] > 0.0 && r[0] < PI);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        let w = simpson_weights(9, 2.0).unwrap();
        let h = 2.0 / 8.0;
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(i, w)| w * (i as f64 * h).powi(3))
            .sum();
        assert!((s - 4.0).abs() < 1e-13);
        assert!(simpson_weights(8, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let k = DemoKernel {
            sigma2_xx: 0.02,
            sigma2_yy: 0.01,
            corr_x: 0.3,
            corr_y: 0.2,
            cross: 0.1,
        };
        let t = CovarianceTable::separable_exponential(&k, 3, 0.1, 2, 0.25);
        let back = CovarianceTable::from_csv_str(&t.to_csv()).unwrap();
        assert_eq!(back.r1.len(), 7);
        assert!(back
            .cxx
            .iter()
            .zip(&t.cxx)
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
