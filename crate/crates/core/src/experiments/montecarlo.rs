use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SgError};

/// Single-pass mean and second central moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Chan's pairwise update.
    pub fn merge(mut self, other: Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        self
    }

    /// Sample standard deviation; zero for fewer than two samples.
    pub fn std(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.n - 1) as f64;
        self.m2.iter().map(|s| (s.max(0.0) / d).sqrt()).collect()
    }
}

/// A skipped sample.
#[derive(Debug, Clone, Serialize)]
pub struct SampleFailure {
    pub index: u64,
    pub xi: Vec<f64>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub moments: Moments,
    pub failures: Vec<SampleFailure>,
}

impl McResult {
    pub fn mean(&self) -> &[f64] {
        &self.moments.mean
    }

    pub fn std(&self) -> Vec<f64> {
        self.moments.std()
    }
}

/// Standardized point `ξ_std ∈ [-1, 1)^d` of sample `index`; the stream
/// depends only on `(seed, index)`.
pub fn sample_xi(seed: u64, index: u64, dims: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Fraction of failed samples above which a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Runs `n` samples of `sampler(ξ_std)` in parallel. Moments are reduced by
/// a fixed pairwise tree over the sample index, so results do not depend on
/// scheduling. Failed samples are skipped and reported.
pub fn run_monte_carlo(
    sampler: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    n: usize,
    seed: u64,
    dims: usize,
) -> Result<McResult> {
    if n == 0 {
        return Err(SgError::Config(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let leaves: Vec<std::result::Result<Vec<f64>, SampleFailure>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sample_xi(seed, i, dims);
            sampler(&xi).map_err(|e| SampleFailure {
                index: i,
                xi,
                message: e.to_string(),
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut level: Vec<Moments> = Vec::with_capacity(n);
    let mut len = None;
    for leaf in leaves {
        match leaf {
            Ok(v) => {
                if *len.get_or_insert(v.len()) != v.len() {
                    return Err(SgError::Config("sampler output length changed".into()));
                }
                let mut m = Moments::new(v.len());
                m.push(&v);
                level.push(m);
            }
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * n as f64 || level.is_empty() {
        return Err(SgError::TooManySampleFailures {
            failed: failures.len(),
            total: n,
        });
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        level = next;
    }
    Ok(McResult {
        moments: level.pop().expect("at least one sample"),
        failures,
    })
}
