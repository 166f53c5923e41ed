//! Self-checks of the samplers and the alignment inequality.

use crate::analysis::ks_distance;
use crate::mechanics::alignment_probabilities;
use crate::sampling::{
    normal_cdf, power_law_inverse_cdf, sample_power_law, NormalSpec, PowerLawSpec, RngStream,
};

pub const KS_SAMPLES: usize = 100_000;
pub const KS_THRESHOLD: f64 = 0.01;
pub const ROUND_TRIP_POINTS: usize = 10_000;
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-12;
pub const REFERENCE_POWER_LAW: PowerLawSpec = PowerLawSpec {
    x_min: 1.0,
    alpha: 2.5,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidationOptions {
    pub seed: u64,
    /// Negative control: sample with an exponent that is off by one half.
    pub broken_exponent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

pub fn power_law_ks(opts: ValidationOptions) -> CheckResult {
    let mut sampled = REFERENCE_POWER_LAW;
    if opts.broken_exponent {
        sampled.alpha += 0.5;
    }
    let mut rng = RngStream::new(opts.seed, 0);
    let samples = sample_power_law(&mut rng, sampled, KS_SAMPLES).expect("valid reference spec");
    let d = ks_distance(&samples, |x| REFERENCE_POWER_LAW.cdf(x));
    let below = samples
        .iter()
        .filter(|&&x| x < REFERENCE_POWER_LAW.x_min)
        .count();
    CheckResult::new(
        "power_law_ks",
        d < KS_THRESHOLD && below == 0,
        format!("D = {d:.6} over {KS_SAMPLES} samples (limit {KS_THRESHOLD}), {below} below x_min"),
    )
}

pub fn normal_ks(opts: ValidationOptions) -> CheckResult {
    let spec = NormalSpec {
        mu: 0.0,
        sigma: 1.0,
    };
    let mut rng = RngStream::new(opts.seed, 1);
    let samples: Vec<f64> = (0..KS_SAMPLES).map(|_| rng.normal(spec)).collect();
    let d = ks_distance(&samples, |x| normal_cdf(x, spec));
    CheckResult::new(
        "normal_ks",
        d < KS_THRESHOLD,
        format!("D = {d:.6} over {KS_SAMPLES} samples (limit {KS_THRESHOLD})"),
    )
}

pub fn inverse_cdf_round_trip() -> CheckResult {
    let spec = REFERENCE_POWER_LAW;
    let worst = (0..ROUND_TRIP_POINTS)
        .map(|i| {
            let u = i as f64 / ROUND_TRIP_POINTS as f64;
            let x = power_law_inverse_cdf(u, spec).expect("u in [0, 1)");
            (spec.cdf(x) - u).abs()
        })
        .fold(0.0, f64::max);
    CheckResult::new(
        "inverse_cdf_round_trip",
        worst <= ROUND_TRIP_TOLERANCE,
        format!("max |F(F^-1(u)) - u| = {worst:.3e} on {ROUND_TRIP_POINTS} points"),
    )
}

pub fn normal_cdf_symmetry() -> CheckResult {
    let mut worst: f64 = 0.0;
    for (mu, sigma) in [(0.0, 1.0), (1.5, 0.5), (-2.0, 3.0)] {
        let spec = NormalSpec { mu, sigma };
        worst = worst.max((normal_cdf(mu, spec) - 0.5).abs());
        for k in 1..=400 {
            let d = k as f64 * 0.02 * sigma;
            worst = worst.max((normal_cdf(mu + d, spec) + normal_cdf(mu - d, spec) - 1.0).abs());
        }
    }
    let standard = NormalSpec {
        mu: 0.0,
        sigma: 1.0,
    };
    let known = (normal_cdf(1.959963984540054, standard) - 0.975).abs();
    let passed = worst <= 1e-12 && known <= 1e-12;
    CheckResult::new(
        "normal_cdf_symmetry",
        passed,
        format!("max symmetry error {worst:.3e}, Phi(1.96) error {known:.3e}"),
    )
}

pub fn alignment_scan() -> CheckResult {
    let mut failures = Vec::new();
    for i in 0..=20 {
        let p = i as f64 * 0.05;
        let (align, misalign) = alignment_probabilities(p);
        let strict = (p - 0.5).abs() > 1e-9;
        let ok = if strict {
            align > misalign
        } else {
            (align - misalign).abs() < 1e-12
        };
        if !ok {
            failures.push(format!("{p:.2}"));
        }
    }
    CheckResult::new(
        "alignment_scan",
        failures.is_empty(),
        if failures.is_empty() {
            "p_align >= p_misalign on 21 grid points, equal only at 0.5".into()
        } else {
            format!("violated at p_plus = {}", failures.join(", "))
        },
    )
}

/// Runs every check in a fixed order.
pub fn run_checks(opts: ValidationOptions) -> Vec<CheckResult> {
    vec![
        power_law_ks(opts),
        normal_ks(opts),
        inverse_cdf_round_trip(),
        normal_cdf_symmetry(),
        alignment_scan(),
    ]
}
