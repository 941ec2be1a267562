//! Small dense kernels on column-major `DMatrix` storage.

use nalgebra::{Complex, DMatrix, Schur};

use crate::error::{Result, SgError};

/// Relative pivot floor below which a factorization is declared indefinite.
const PIVOT_FLOOR: f64 = 1e-14;

/// In-place lower Cholesky factor; the strict upper triangle is left
/// untouched. Returns the MAC count.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<u64> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let m = a.as_mut_slice();
    let mut macs = 0u64;
    for j in 0..n {
        let d = m[j + j * n];
        if !d.is_finite() {
            return Err(SgError::Singular(format!("non-finite pivot at row {j}")));
        }
        if d <= PIVOT_FLOOR * scale {
            return Err(SgError::NotPositiveDefinite { smallest_pivot: d });
        }
        let l = d.sqrt();
        m[j + j * n] = l;
        for i in j + 1..n {
            m[i + j * n] /= l;
        }
        for k in j + 1..n {
            let lkj = m[k + j * n];
            if lkj == 0.0 {
                continue;
            }
            for i in k..n {
                m[i + k * n] -= m[i + j * n] * lkj;
            }
            macs += (n - k) as u64;
        }
    }
    Ok(macs)
}

/// Solves `L y = b` in place.
pub fn forward_solve(l: &DMatrix<f64>, b: &mut [f64]) -> u64 {
    let n = l.nrows();
    let m = l.as_slice();
    for j in 0..n {
        b[j] /= m[j + j * n];
        let x = b[j];
        if x != 0.0 {
            for i in j + 1..n {
                b[i] -= m[i + j * n] * x;
            }
        }
    }
    (n * (n + 1) / 2) as u64
}

/// Solves `Lᵀ x = y` in place.
pub fn backward_solve(l: &DMatrix<f64>, b: &mut [f64]) -> u64 {
    let n = l.nrows();
    let m = l.as_slice();
    for j in (0..n).rev() {
        let mut s = b[j];
        for i in j + 1..n {
            s -= m[i + j * n] * b[i];
        }
        b[j] = s / m[j + j * n];
    }
    (n * (n + 1) / 2) as u64
}

/// `L⁻¹ M L⁻ᵀ` for symmetric `m`, written into `out`.
pub fn congruence_inverse(l: &DMatrix<f64>, m: &DMatrix<f64>, out: &mut DMatrix<f64>) -> u64 {
    let n = l.nrows();
    let mut macs = 0;
    out.copy_from(m);
    for c in 0..n {
        macs += forward_solve(l, &mut out.as_mut_slice()[c * n..(c + 1) * n]);
    }
    out.transpose_mut();
    for c in 0..n {
        macs += forward_solve(l, &mut out.as_mut_slice()[c * n..(c + 1) * n]);
    }
    macs
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    m.as_slice()
        .iter()
        .enumerate()
        .all(|(idx, v)| *v == 0.0 || idx % n == idx / n)
}

/// Gershgorin enclosure of the (real parts of the) spectrum.
pub fn gershgorin(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        lo = lo.min(m[(i, i)] - r);
        hi = hi.max(m[(i, i)] + r);
    }
    (lo, hi)
}

/// Eigenvalues of a general square matrix from a real Schur form with a
/// bounded number of QR sweeps; `None` when they stall.
pub fn complex_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = m.nrows();
    if is_diagonal(m) {
        return Some(m.diagonal().iter().map(|d| Complex::new(*d, 0.0)).collect());
    }
    let scale = m.amax();
    if !scale.is_finite() {
        return None;
    }
    let schur = Schur::try_new(m.unscale(scale), f64::EPSILON, 200 * n.max(8))?;
    let ev: Vec<Complex<f64>> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z * scale)
        .collect();
    ev.iter()
        .all(|z| z.re.is_finite() && z.im.is_finite())
        .then_some(ev)
}

pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let mut l = a.clone();
        cholesky_in_place(&mut l).unwrap();
        let mut x = vec![1.0, 2.0, 3.0];
        forward_solve(&l, &mut x);
        backward_solve(&l, &mut x);
        let r =
            &a * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(r.amax() < 1e-14);
    }

    #[test]
    fn indefinite_is_reported() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = cholesky_in_place(&mut a).unwrap_err();
        assert!(err.is_recoverable());
    }

    #[test]
    fn congruence_matches_spectrum() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, -0.5]);
        let mut l = g.clone();
        cholesky_in_place(&mut l).unwrap();
        let mut c = DMatrix::zeros(2, 2);
        congruence_inverse(&l, &m, &mut c);
        let direct = (g.try_inverse().unwrap() * &m).complex_eigenvalues();
        let (lo, hi) = symmetric_extremes(&c);
        let mut re: Vec<f64> = direct.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] - lo).abs() < 1e-12 && (re[1] - hi).abs() < 1e-12);
    }

    #[test]
    fn capped_eigenvalues() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let ev = complex_eigenvalues(&rot).unwrap();
        assert!(ev
            .iter()
            .all(|z| z.re.abs() < 1e-14 && (z.im.abs() - 2.0).abs() < 1e-14));
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 1e-310]));
        let ev = complex_eigenvalues(&d).unwrap();
        assert_eq!(ev[2].re, 1e-310);
        assert!(complex_eigenvalues(&DMatrix::from_element(2, 2, f64::NAN)).is_none());
    }
}
