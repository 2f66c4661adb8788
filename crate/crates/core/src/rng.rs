//! Seedable random streams and the handful of samplers the simulators need.
//!
//! Every stochastic routine in the crate takes an explicit [`RngStream`]. A
//! stream is a `(seed, stream_id)` pair backed by ChaCha8, whose native stream
//! parameter gives independent substreams. Children are derived by hashing a
//! key into the stream id, so replication `r`, atom `i` always sees the same
//! numbers no matter how work is scheduled.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream addressed by `key`. Same parent and key, same child.
    pub fn substream(&self, key: u64) -> Self {
        Self { seed: self.seed, stream_id: splitmix64(self.stream_id ^ splitmix64(key)) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

impl fmt::Display for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed={} stream={:#018x}", self.seed, self.stream_id)
    }
}

/// Decreasing levels `U_i = 1/Γ_i` of a Poisson process on `(0, ∞)` with
/// intensity `u^{-2} du`, produced lazily from unit exponential increments.
pub struct PoissonArrivals<R> {
    rng: R,
    arrival: f64,
}

impl<R: Rng> PoissonArrivals<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, arrival: 0.0 }
    }

    /// Current arrival time `Γ_i` of the last level handed out.
    pub fn arrival(&self) -> f64 {
        self.arrival
    }
}

impl<R: Rng> Iterator for PoissonArrivals<R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let e: f64 = self.rng.sample(Exp1);
        self.arrival += e;
        Some(1.0 / self.arrival)
    }
}

/// The first `n` levels of the Fréchet Poisson process.
pub fn poisson_frechet_atoms(stream: &RngStream, n: usize) -> Vec<f64> {
    PoissonArrivals::new(stream.rng()).take(n).collect()
}

/// Levels from explicit exponential increments: reciprocals of partial sums.
pub fn levels_from_increments(increments: &[f64]) -> Vec<f64> {
    increments
        .iter()
        .scan(0.0, |gamma, e| {
            *gamma += e;
            Some(1.0 / *gamma)
        })
        .collect()
}

/// `P[η ≤ z] = exp(-c/z)` for a 1-Fréchet variable with scale `c`.
pub fn frechet_cdf(z: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("Fréchet scale must be positive, got {scale}")));
    }
    if !(z > 0.0) {
        return Err(invalid(format!("Fréchet argument must be positive, got {z}")));
    }
    Ok((-scale / z).exp())
}

pub fn frechet_quantile(p: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("Fréchet scale must be positive, got {scale}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(-scale / p.ln())
}

pub type Variogram = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Zero-mean Gaussian process with stationary increments, pinned to zero at
/// `anchor`, described by its variogram `σ²(t) = Var(Z(s+t) - Z(s))`.
#[derive(Clone)]
pub struct GaussianSpec {
    variogram: Variogram,
    anchor: f64,
}

impl fmt::Debug for GaussianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianSpec").field("anchor", &self.anchor).finish_non_exhaustive()
    }
}

impl GaussianSpec {
    pub fn new(variogram: impl Fn(f64) -> f64 + Send + Sync + 'static, anchor: f64) -> Self {
        Self { variogram: Arc::new(variogram), anchor }
    }

    pub fn variogram(&self, t: f64) -> f64 {
        (self.variogram)(t)
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// `C(s,t) = ½(σ²(s-a) + σ²(t-a) - σ²(t-s))`.
    pub fn covariance(&self, s: f64, t: f64) -> f64 {
        let a = self.anchor;
        0.5 * (self.variogram(s - a) + self.variogram(t - a) - self.variogram(t - s))
    }
}

/// Diagonal jitter tried, in order, before a factorization is declared failed.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Cholesky factor of a [`GaussianSpec`] restricted to a point set, reusable
/// across draws.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    len: usize,
    free: Vec<usize>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GaussianSampler {
    pub fn new(spec: &GaussianSpec, points: &[f64]) -> Result<Self> {
        let free: Vec<usize> = (0..points.len()).filter(|&i| points[i] != spec.anchor).collect();
        let n = free.len();
        let cov = DMatrix::from_fn(n, n, |i, j| spec.covariance(points[free[i]], points[free[j]]));
        if n == 0 {
            return Ok(Self { len: points.len(), free, factor: cov, jitter: 0.0 });
        }
        for &jitter in &JITTER_LADDER {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                return Ok(Self { len: points.len(), free, factor: chol.l(), jitter });
            }
        }
        Err(Error::NotPositiveSemidefinite { max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.free.len();
        let normals = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &self.factor * normals;
        let mut out = vec![0.0; self.len];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = z[k];
        }
        out
    }
}

/// One draw of the pinned Gaussian process on `points`.
pub fn sample_gaussian_path(spec: &GaussianSpec, points: &[f64], stream: &RngStream) -> Result<Vec<f64>> {
    let sampler = GaussianSampler::new(spec, points)?;
    Ok(sampler.sample(&mut stream.rng()))
}
