//! Random-number utilities driven by explicit generator state.
//!
//! Every random draw in the simulator goes through an [`RngStream`]. A stream
//! is identified by `(seed, stream_index)`: the ChaCha8 key is expanded from
//! `seed` with `SeedableRng::seed_from_u64` (rand_core 0.9) and the ChaCha
//! stream id is set to `stream_index`. Distinct stream ids select disjoint
//! keystreams under the same key, so replications never share randomness.
//!
//! Uniforms are built from the top 53 bits of one `u64` word, which keeps the
//! sequence independent of any distribution code in the `rand` ecosystem.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Name of the generator, recorded in run metadata.
pub const GENERATOR_NAME: &str = "ChaCha8";
/// Version of the generator implementation, recorded in run metadata.
pub const GENERATOR_VERSION: &str =
    "rand_chacha 0.9 (seed_from_u64 key expansion, stream id = replication index)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("uniform variate {0} outside [0, 1)")]
    UniformOutOfDomain(f64),
    #[error("power-law x_min must be finite and > 0, got {0}")]
    InvalidXMin(f64),
    #[error("power-law alpha must be finite and > 1, got {0}")]
    InvalidAlpha(f64),
    #[error("normal sigma must be finite and > 0, got {0}")]
    InvalidSigma(f64),
    #[error("normal mu must be finite, got {0}")]
    InvalidMu(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("sample size must be at least 1")]
    EmptySample,
}

/// A reproducible random stream owned by exactly one replication.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Next uniform variate in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.rng.next_u64() >> 11) as f64 * SCALE
    }

    /// Standard normal variate (Box-Muller, cosine branch only).
    ///
    /// Consumes exactly two uniforms per call.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform01();
        let u2 = self.uniform01();
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        radius * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, spec: NormalSpec) -> f64 {
        spec.mu + spec.sigma * self.standard_normal()
    }

    /// Exponential variate with the given mean, by inverse transform.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * (1.0 - self.uniform01()).ln()
    }

    /// `true` with probability `p`; `p` is expected in `[0, 1]`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let idx = (self.uniform01() * n as f64) as usize;
        idx.min(n - 1)
    }
}

/// Continuous power law with density proportional to `x^-alpha` on `[x_min, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawSpec {
    pub x_min: f64,
    pub alpha: f64,
}

impl PowerLawSpec {
    pub fn new(x_min: f64, alpha: f64) -> Result<Self, SamplingError> {
        let spec = Self { x_min, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.x_min.is_finite() && self.x_min > 0.0) {
            return Err(SamplingError::InvalidXMin(self.x_min));
        }
        if !(self.alpha.is_finite() && self.alpha > 1.0) {
            return Err(SamplingError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    /// `F(x) = 1 - (x / x_min)^(1 - alpha)` for `x >= x_min`, 0 below.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x_min {
            return 0.0;
        }
        1.0 - (x / self.x_min).powf(1.0 - self.alpha)
    }

    /// Closed-form mean; infinite when `alpha <= 2`.
    pub fn mean(&self) -> f64 {
        if self.alpha <= 2.0 {
            f64::INFINITY
        } else {
            (self.alpha - 1.0) / (self.alpha - 2.0) * self.x_min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, SamplingError> {
        let spec = Self { mu, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !self.mu.is_finite() {
            return Err(SamplingError::InvalidMu(self.mu));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(SamplingError::InvalidSigma(self.sigma));
        }
        Ok(())
    }
}

/// Direction of a rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// Inverse of the power-law CDF: `x_min * (1 - u)^(-1 / (alpha - 1))`.
pub fn power_law_inverse_cdf(u: f64, spec: PowerLawSpec) -> Result<f64, SamplingError> {
    spec.validate()?;
    if !(0.0..1.0).contains(&u) {
        return Err(SamplingError::UniformOutOfDomain(u));
    }
    Ok(spec.x_min * (1.0 - u).powf(-1.0 / (spec.alpha - 1.0)))
}

/// Draws `n` power-law variates by inverse transform.
pub fn sample_power_law(
    rng: &mut RngStream,
    spec: PowerLawSpec,
    n: usize,
) -> Result<Vec<f64>, SamplingError> {
    spec.validate()?;
    if n == 0 {
        return Err(SamplingError::EmptySample);
    }
    (0..n)
        .map(|_| power_law_inverse_cdf(rng.uniform01(), spec))
        .collect()
}

/// `F(x) = 1/2 [1 + erf((x - mu) / (sigma sqrt 2))]`, evaluated through `erfc`
/// so the lower tail keeps full relative precision.
pub fn normal_cdf(x: f64, spec: NormalSpec) -> f64 {
    let z = (x - spec.mu) / (spec.sigma * std::f64::consts::SQRT_2);
    0.5 * libm::erfc(-z)
}

/// Probability that an agent's realized action is negative, `F_i(0)`.
pub fn negative_rating_probability(spec: NormalSpec) -> f64 {
    normal_cdf(0.0, spec)
}

/// Returns [`Sign::Negative`] with probability `p_neg`.
pub fn sample_rating_sign(rng: &mut RngStream, p_neg: f64) -> Result<Sign, SamplingError> {
    if !(0.0..=1.0).contains(&p_neg) {
        return Err(SamplingError::InvalidProbability(p_neg));
    }
    Ok(if rng.bernoulli(p_neg) {
        Sign::Negative
    } else {
        Sign::Positive
    })
}
