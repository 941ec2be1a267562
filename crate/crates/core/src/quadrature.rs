//! Gauss-Legendre rules and orthonormal Legendre polynomials under the
//! uniform probability measure on [-1, 1].

/// Values of the orthonormal Legendre polynomials `L_0..=L_n` at `x`,
/// normalized so that `E[L_i L_j] = δ_ij` for `x ~ U[-1, 1]`.
pub fn legendre_orthonormal(n: usize, x: f64, out: &mut [f64]) {
    debug_assert!(out.len() > n);
    let mut p_prev = 1.0;
    out[0] = 1.0;
    if n == 0 {
        return;
    }
    let mut p = x;
    out[1] = 3f64.sqrt() * x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        out[k + 1] = (2.0 * (kf + 1.0) + 1.0).sqrt() * p;
    }
}

/// Single orthonormal Legendre polynomial value.
pub fn legendre_orthonormal_at(degree: usize, x: f64) -> f64 {
    let (mut p_prev, mut p) = (1.0, x);
    if degree == 0 {
        return 1.0;
    }
    for k in 1..degree {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    (2.0 * degree as f64 + 1.0).sqrt() * p
}

/// Classical Legendre polynomial P_n and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `n`-point Gauss-Legendre rule on [-1, 1] with weights summing to 2.
/// Nodes are returned in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Tensor-product quadrature with probability weights on a box in [-1,1]^d.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    dims: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensorizes per-dimension 1D rules (nodes in [-1,1], weights summing to 1).
    pub fn tensor(per_dim: &[(Vec<f64>, Vec<f64>)]) -> Self {
        let dims = per_dim.len();
        let count: usize = per_dim.iter().map(|(n, _)| n.len()).product();
        let mut nodes = Vec::with_capacity(count * dims);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dims];
        for _ in 0..count {
            let mut w = 1.0;
            for (l, (n, wt)) in per_dim.iter().enumerate() {
                nodes.push(n[idx[l]]);
                w *= wt[idx[l]];
            }
            weights.push(w);
            // odometer, last dimension fastest
            for l in (0..dims).rev() {
                idx[l] += 1;
                if idx[l] < per_dim[l].0.len() {
                    break;
                }
                idx[l] = 0;
            }
        }
        QuadratureRule {
            dims,
            nodes,
            weights,
        }
    }

    /// Plain `n`-point Gauss-Legendre in every one of `dims` dimensions.
    pub fn gauss_legendre_tensor(dims: usize, n: usize) -> Self {
        let rule = probability_rule(n);
        Self::tensor(&vec![rule; dims])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dims..(q + 1) * self.dims]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes
            .chunks_exact(self.dims)
            .zip(self.weights.iter().copied())
    }
}

/// `n`-point Gauss-Legendre rule with weights normalized to the uniform
/// probability measure on [-1, 1].
pub fn probability_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, mut w) = gauss_legendre(n);
    w.iter_mut().for_each(|v| *v *= 0.5);
    (x, w)
}

/// Composite `n`-point Gauss-Legendre on `cells` equal subintervals of
/// [-1, 1], probability-normalized.
pub fn composite_probability_rule(n: usize, cells: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let width = 2.0 / cells as f64;
    let mut nodes = Vec::with_capacity(n * cells);
    let mut weights = Vec::with_capacity(n * cells);
    for c in 0..cells {
        let left = -1.0 + c as f64 * width;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(left + 0.5 * width * (xi + 1.0));
            weights.push(wi * 0.5 * width * 0.5);
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_monomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let got: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(xi, wi)| wi * xi.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((got - exact).abs() < 1e-14, "n={n} deg={deg} got {got}");
            }
        }
    }

    #[test]
    fn orthonormal_legendre() {
        let (x, w) = probability_rule(12);
        let mut vals = vec![0.0; 8];
        let mut gram = [[0.0; 8]; 8];
        for (xi, wi) in x.iter().zip(&w) {
            legendre_orthonormal(7, *xi, &mut vals);
            for i in 0..8 {
                for j in 0..8 {
                    gram[i][j] += wi * vals[i] * vals[j];
                }
            }
        }
        for (i, row) in gram.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-13);
            }
        }
        assert!((legendre_orthonormal_at(1, 1.0) - 3f64.sqrt()).abs() < 1e-15);
        assert!(
            (legendre_orthonormal_at(5, 0.3) - {
                legendre_orthonormal(5, 0.3, &mut vals);
                vals[5]
            })
            .abs()
                < 1e-15
        );
    }

    #[test]
    fn composite_rule_weights_sum_to_one() {
        let (_, w) = composite_probability_rule(5, 8);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
