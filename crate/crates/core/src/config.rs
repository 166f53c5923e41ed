//! Simulation configuration and its flat `key = value` text format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are listed in [`KEYS`]; anything else is rejected so typos never pass
//! silently. [`SimConfig::to_text`] writes every key, and its output parses
//! back to an identical configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::engine::{
    ExternalityMode, InitialDistribution, LearningMode, MechanismConfig, PopulationConfig,
    RatingSignMode,
};
use crate::mechanics::GainMode;

/// Default cap on `agents * rounds * replications`.
pub const DEFAULT_MAX_AGENT_ROUNDS: u64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` set more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}`: cannot parse {value:?} as {expected}")]
    Type {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key,
            reason: reason.into(),
        }
    }

    /// The configuration key the error is about, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::Type { key, .. } => Some(key),
            ConfigError::MissingKey(key) | ConfigError::Invalid { key, .. } => Some(key),
        }
    }
}

/// Every accepted key, in the order [`SimConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "agents",
    "cp_total",
    "initial_distribution",
    "power_law_x_min",
    "power_law_alpha",
    "population_mu",
    "population_sigma",
    "within_agent_sigma",
    "p_skip_action",
    "p_skip_rating",
    "consumer_selection",
    "ratings_per_rater",
    "learning_mode",
    "alpha_l",
    "beta",
    "gamma",
    "externality_mean",
    "externality_mode",
    "contributor_fraction",
    "gain_mode",
    "c_r2a",
    "c_r2r",
    "rating_sign_mode",
    "rounds",
    "replications",
    "seed",
    "out_dir",
    "bins",
    "max_agent_rounds",
];

/// Keys that must be present unless defaults are allowed.
pub const REQUIRED_KEYS: &[&str] = &["agents", "rounds", "replications", "seed"];

/// Keys `sweep` may vary.
pub const SWEEPABLE_KEYS: &[&str] = &[
    "agents",
    "cp_total",
    "power_law_x_min",
    "power_law_alpha",
    "population_mu",
    "population_sigma",
    "within_agent_sigma",
    "p_skip_action",
    "p_skip_rating",
    "ratings_per_rater",
    "alpha_l",
    "beta",
    "gamma",
    "externality_mean",
    "contributor_fraction",
    "c_r2a",
    "c_r2r",
    "rounds",
    "replications",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub population: PopulationConfig,
    pub mechanism: MechanismConfig,
    pub rounds: usize,
    pub replications: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Bin count for the staking-rate summaries.
    pub bins: usize,
    pub max_agent_rounds: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            mechanism: MechanismConfig::default(),
            rounds: 200,
            replications: 8,
            seed: 42,
            out_dir: PathBuf::from("out"),
            bins: 20,
            max_agent_rounds: DEFAULT_MAX_AGENT_ROUNDS,
        }
    }
}

impl SimConfig {
    pub fn agent_rounds(&self) -> u128 {
        self.population.n as u128 * self.rounds as u128 * self.replications as u128
    }

    /// Checks every nested invariant. The agent-round limit is skipped when
    /// `override_safety` is set.
    pub fn validate(&self, override_safety: bool) -> Result<(), ConfigError> {
        self.population.validate()?;
        self.mechanism.validate()?;
        if self.rounds == 0 {
            return Err(ConfigError::invalid("rounds", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(ConfigError::invalid("replications", "must be at least 1"));
        }
        if self.bins < 2 {
            return Err(ConfigError::invalid("bins", "must be at least 2"));
        }
        if !override_safety && self.agent_rounds() > self.max_agent_rounds as u128 {
            return Err(ConfigError::invalid(
                "max_agent_rounds",
                format!(
                    "agents * rounds * replications = {} exceeds the safety limit {}; \
                     raise max_agent_rounds or pass --override-safety",
                    self.agent_rounds(),
                    self.max_agent_rounds
                ),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let pop = &mut self.population;
        let mech = &mut self.mechanism;
        match key {
            "agents" => pop.n = parse(key, value)?,
            "cp_total" => pop.cp_total = parse(key, value)?,
            "initial_distribution" => {
                pop.initial_distribution = match value {
                    "uniform" => InitialDistribution::Uniform,
                    "power_law" => InitialDistribution::PowerLaw,
                    _ => return Err(type_err(key, value, "uniform | power_law")),
                };
            }
            "power_law_x_min" => pop.power_law.x_min = parse(key, value)?,
            "power_law_alpha" => pop.power_law.alpha = parse(key, value)?,
            "population_mu" => pop.population_mu = parse(key, value)?,
            "population_sigma" => pop.population_sigma = parse(key, value)?,
            "within_agent_sigma" => pop.within_agent_sigma = parse(key, value)?,
            "p_skip_action" => mech.p_skip_action = parse(key, value)?,
            "p_skip_rating" => mech.p_skip_rating = parse(key, value)?,
            "consumer_selection" => mech.consumer_selection = parse(key, value)?,
            "ratings_per_rater" => mech.ratings_per_rater = parse(key, value)?,
            "learning_mode" => {
                mech.learning_mode = match value {
                    "off" => LearningMode::Off,
                    "uniform" => LearningMode::Uniform,
                    "random_per_agent" => LearningMode::RandomPerAgent,
                    "stake_correlated" => LearningMode::StakeCorrelated,
                    _ => {
                        return Err(type_err(
                            key,
                            value,
                            "off | uniform | random_per_agent | stake_correlated",
                        ))
                    }
                };
            }
            "alpha_l" => mech.alpha_l = parse(key, value)?,
            "beta" => mech.beta = parse(key, value)?,
            "gamma" => mech.gamma = parse(key, value)?,
            "externality_mean" => mech.externality_mean = parse(key, value)?,
            "externality_mode" => {
                mech.externality_mode = match value {
                    "exponential" => ExternalityMode::Exponential,
                    "fixed" => ExternalityMode::Fixed,
                    _ => return Err(type_err(key, value, "exponential | fixed")),
                }
            }
            "contributor_fraction" => mech.contributor_fraction = parse(key, value)?,
            "gain_mode" => {
                mech.coeff.mode = match value {
                    "raw" => GainMode::Raw,
                    "self_normalized" => GainMode::SelfNormalized,
                    _ => return Err(type_err(key, value, "raw | self_normalized")),
                }
            }
            "c_r2a" => mech.coeff.c_r2a = parse(key, value)?,
            "c_r2r" => mech.coeff.c_r2r = parse(key, value)?,
            "rating_sign_mode" => {
                mech.rating_sign_mode = match value {
                    "per_rater_bernoulli" => RatingSignMode::PerRaterBernoulli,
                    "per_action_realization" => RatingSignMode::PerActionRealization,
                    _ => {
                        return Err(type_err(
                            key,
                            value,
                            "per_rater_bernoulli | per_action_realization",
                        ))
                    }
                }
            }
            "rounds" => self.rounds = parse(key, value)?,
            "replications" => self.replications = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "bins" => self.bins = parse(key, value)?,
            "max_agent_rounds" => self.max_agent_rounds = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies every setting in `source` on top of `self`.
    pub fn apply_source(&mut self, source: &str) -> Result<(), ConfigError> {
        for (key, (_, value)) in parse_pairs(source)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs covering every key in [`KEYS`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let pop = &self.population;
        let mech = &self.mechanism;
        let spec = pop.power_law;
        let learning_mode = match mech.learning_mode {
            LearningMode::Off => "off",
            LearningMode::Uniform => "uniform",
            LearningMode::RandomPerAgent => "random_per_agent",
            LearningMode::StakeCorrelated => "stake_correlated",
        };
        vec![
            ("agents", pop.n.to_string()),
            ("cp_total", num(pop.cp_total)),
            (
                "initial_distribution",
                match pop.initial_distribution {
                    InitialDistribution::Uniform => "uniform",
                    InitialDistribution::PowerLaw => "power_law",
                }
                .into(),
            ),
            ("power_law_x_min", num(spec.x_min)),
            ("power_law_alpha", num(spec.alpha)),
            ("population_mu", num(pop.population_mu)),
            ("population_sigma", num(pop.population_sigma)),
            ("within_agent_sigma", num(pop.within_agent_sigma)),
            ("p_skip_action", num(mech.p_skip_action)),
            ("p_skip_rating", num(mech.p_skip_rating)),
            ("consumer_selection", mech.consumer_selection.to_string()),
            ("ratings_per_rater", mech.ratings_per_rater.to_string()),
            ("learning_mode", learning_mode.into()),
            ("alpha_l", num(mech.alpha_l)),
            ("beta", num(mech.beta)),
            ("gamma", num(mech.gamma)),
            ("externality_mean", num(mech.externality_mean)),
            (
                "externality_mode",
                match mech.externality_mode {
                    ExternalityMode::Exponential => "exponential",
                    ExternalityMode::Fixed => "fixed",
                }
                .into(),
            ),
            ("contributor_fraction", num(mech.contributor_fraction)),
            (
                "gain_mode",
                match mech.coeff.mode {
                    GainMode::Raw => "raw",
                    GainMode::SelfNormalized => "self_normalized",
                }
                .into(),
            ),
            ("c_r2a", num(mech.coeff.c_r2a)),
            ("c_r2r", num(mech.coeff.c_r2r)),
            (
                "rating_sign_mode",
                match mech.rating_sign_mode {
                    RatingSignMode::PerRaterBernoulli => "per_rater_bernoulli",
                    RatingSignMode::PerActionRealization => "per_action_realization",
                }
                .into(),
            ),
            ("rounds", self.rounds.to_string()),
            ("replications", self.replications.to_string()),
            ("seed", self.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("bins", self.bins.to_string()),
            ("max_agent_rounds", self.max_agent_rounds.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn num(x: f64) -> String {
    // `{}` on f64 is the shortest string that round-trips.
    format!("{x}")
}

fn type_err(key: &str, value: &str, expected: &'static str) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| type_err(key, value, std::any::type_name::<T>()))
}

/// Splits source text into an ordered key/value map, rejecting unknown or
/// repeated keys.
pub fn parse_pairs(source: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if out
            .insert(key.to_string(), (line, value.to_string()))
            .is_some()
        {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
    }
    Ok(out)
}

/// Parses and validates a configuration.
///
/// With `allow_defaults` unset every key in [`REQUIRED_KEYS`] must appear;
/// otherwise missing keys take their documented defaults.
pub fn parse_config(source: &str, allow_defaults: bool) -> Result<SimConfig, ConfigError> {
    let pairs = parse_pairs(source)?;
    if !allow_defaults {
        if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !pairs.contains_key(**k)) {
            return Err(ConfigError::MissingKey(missing));
        }
    }
    let mut cfg = SimConfig::default();
    for (key, (_, value)) in &pairs {
        cfg.set(key, value)?;
    }
    cfg.validate(false)?;
    Ok(cfg)
}
