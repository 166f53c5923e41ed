//! Populations, rounds and adaptive staking.
//!
//! A round runs in a fixed order: participant selection, action staking,
//! rating assignment, settlement, credit update, staking-rate learning and
//! pool recomputation. All randomness for one replication comes from a single
//! [`RngStream`], consumed in agent-id order, so a replication is a pure
//! function of `(config, seed, replication index)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::mechanics::{
    clamp_to_pool, learning_signal, partition_round, settle_agent, ActionId, ActionStakeRecord,
    AgentId, CreditDelta, GainCoefficients, MechanicsError, RatingStakeRecord,
};
use crate::sampling::{
    negative_rating_probability, sample_power_law, sample_rating_sign, NormalSpec, PowerLawSpec,
    RngStream, SamplingError, Sign,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error("invariant violated in round {round} for agent {agent}: {what}")]
    Invariant {
        round: usize,
        agent: u32,
        what: String,
    },
    #[error("failed to build worker pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialDistribution {
    Uniform,
    /// Credits drawn from [`PopulationConfig::power_law`], rescaled to `cp_total`.
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n: usize,
    pub cp_total: f64,
    pub initial_distribution: InitialDistribution,
    pub power_law: PowerLawSpec,
    pub population_mu: f64,
    pub population_sigma: f64,
    pub within_agent_sigma: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            cp_total: 1e6,
            initial_distribution: InitialDistribution::Uniform,
            power_law: PowerLawSpec {
                x_min: 1.0,
                alpha: 2.5,
            },
            population_mu: 0.0,
            population_sigma: 1.0,
            within_agent_sigma: 0.5,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n > u32::MAX as usize {
            return Err(ConfigError::invalid("agents", "must be in 1..=4294967295"));
        }
        positive("cp_total", self.cp_total)?;
        if !self.population_mu.is_finite() {
            return Err(ConfigError::invalid("population_mu", "must be finite"));
        }
        positive("population_sigma", self.population_sigma)?;
        positive("within_agent_sigma", self.within_agent_sigma)?;
        if self.initial_distribution == InitialDistribution::PowerLaw {
            self.power_law.validate().map_err(|e| match e {
                SamplingError::InvalidXMin(_) => {
                    ConfigError::invalid("power_law_x_min", e.to_string())
                }
                _ => ConfigError::invalid("power_law_alpha", e.to_string()),
            })?;
        }
        Ok(())
    }
}

/// How learning intensities are assigned at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearningMode {
    /// Every agent gets 0; staking rates never move.
    Off,
    /// Every agent gets [`MechanismConfig::alpha_l`].
    Uniform,
    /// Independent uniform draws on `[0, 1)`.
    RandomPerAgent,
    /// Equal to the agent's initial action staking rate.
    StakeCorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingSignMode {
    /// Each rater independently rates negatively with probability `F_i(0)`.
    PerRaterBernoulli,
    /// One quality draw per action; every rater of it sees the same sign.
    PerActionRealization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalityMode {
    /// Contributors draw an exponential amount with mean `externality_mean`.
    Exponential,
    /// Contributors receive exactly `externality_mean`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismConfig {
    pub p_skip_action: f64,
    pub p_skip_rating: f64,
    /// Weight rating targets by action stake instead of uniformly.
    pub consumer_selection: bool,
    pub ratings_per_rater: usize,
    pub learning_mode: LearningMode,
    /// Intensity used by [`LearningMode::Uniform`].
    pub alpha_l: f64,
    /// Step clamp of the staking-rate update, in `(0, 1)`.
    pub beta: f64,
    pub gamma: f64,
    pub externality_mean: f64,
    pub externality_mode: ExternalityMode,
    pub contributor_fraction: f64,
    pub coeff: GainCoefficients,
    pub rating_sign_mode: RatingSignMode,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self {
            p_skip_action: 0.2,
            p_skip_rating: 0.2,
            consumer_selection: false,
            ratings_per_rater: 3,
            learning_mode: LearningMode::Off,
            alpha_l: 0.5,
            beta: 0.5,
            gamma: 0.0,
            externality_mean: 0.0,
            externality_mode: ExternalityMode::Exponential,
            contributor_fraction: 0.1,
            coeff: GainCoefficients::self_normalized(),
            rating_sign_mode: RatingSignMode::PerRaterBernoulli,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        probability("p_skip_action", self.p_skip_action)?;
        probability("p_skip_rating", self.p_skip_rating)?;
        probability("contributor_fraction", self.contributor_fraction)?;
        if self.ratings_per_rater == 0 {
            return Err(ConfigError::invalid(
                "ratings_per_rater",
                "must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha_l) {
            return Err(ConfigError::invalid(
                "alpha_l",
                format!(
                    "learning intensity must lie in [0, 1], got {}",
                    self.alpha_l
                ),
            ));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ConfigError::invalid(
                "beta",
                format!("must lie in (0, 1), got {}", self.beta),
            ));
        }
        nonnegative("gamma", self.gamma)?;
        nonnegative("externality_mean", self.externality_mean)?;
        nonnegative("c_r2a", self.coeff.c_r2a)?;
        nonnegative("c_r2r", self.coeff.c_r2r)?;
        Ok(())
    }
}

fn positive(key: &'static str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            key,
            format!("must be finite and > 0, got {x}"),
        ))
    }
}

fn nonnegative(key: &'static str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            key,
            format!("must be finite and >= 0, got {x}"),
        ))
    }
}

fn probability(key: &'static str, x: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            key,
            format!("must lie in [0, 1], got {x}"),
        ))
    }
}

/// Traits of an agent that do not change during a replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentParams {
    pub id: AgentId,
    /// Mean action level.
    pub mu: f64,
    /// Spread of the agent's own actions.
    pub sigma: f64,
    /// Learning intensity `alpha_L` in `[0, 1]`.
    pub learning_intensity: f64,
    pub beta: f64,
    /// Whether the agent earns externality credits.
    pub contributor: bool,
}

impl AgentParams {
    pub fn action_spec(&self) -> NormalSpec {
        NormalSpec {
            mu: self.mu,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub credit: f64,
    /// Upper limit drawn for the initial action staking rate.
    pub sr_a_cap: f64,
    pub stake_rate_action: f64,
    pub stake_rate_rating: f64,
    /// Credits earmarked for actions, `stake_rate_action * credit`.
    pub pool_action: f64,
    /// Credits earmarked for ratings, `stake_rate_rating * credit`.
    pub pool_rating: f64,
}

impl AgentState {
    fn refresh_pools(&mut self) {
        self.pool_action = self.stake_rate_action * self.credit;
        self.pool_rating = self.stake_rate_rating * self.credit;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub params: Vec<AgentParams>,
    pub states: Vec<AgentState>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_credit(&self) -> f64 {
        self.states.iter().map(|s| s.credit).sum()
    }

    pub fn stake_rates(&self) -> Vec<(f64, f64)> {
        self.states
            .iter()
            .map(|s| (s.stake_rate_action, s.stake_rate_rating))
            .collect()
    }

    /// Recomputes every pool from the current rates and credit.
    pub fn refresh_pools(&mut self) {
        self.states.iter_mut().for_each(AgentState::refresh_pools);
    }
}

/// Draws a population. Learning intensities start at 0 and contributors are
/// unmarked; see [`assign_learning_intensities`] and [`mark_contributors`].
///
/// Per agent, in id order: one normal for `mu`, then the staking-rate cap and
/// the two rate multipliers. Power-law credits are drawn afterwards.
pub fn init_population(
    cfg: &PopulationConfig,
    rng: &mut RngStream,
) -> Result<Population, EngineError> {
    cfg.validate()?;
    let n = cfg.n;
    let trait_spec = NormalSpec::new(cfg.population_mu, cfg.population_sigma)?;
    let mut params = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let mu = rng.normal(trait_spec);
        let sr_a_cap = rng.uniform01();
        let stake_rate_action = sr_a_cap * rng.uniform01();
        let mut stake_rate_rating = (1.0 - sr_a_cap) * rng.uniform01();
        if stake_rate_action + stake_rate_rating > 1.0 {
            stake_rate_rating = 1.0 - stake_rate_action;
        }
        params.push(AgentParams {
            id: AgentId(i as u32),
            mu,
            sigma: cfg.within_agent_sigma,
            learning_intensity: 0.0,
            beta: MechanismConfig::default().beta,
            contributor: false,
        });
        states.push(AgentState {
            credit: 0.0,
            sr_a_cap,
            stake_rate_action,
            stake_rate_rating,
            pool_action: 0.0,
            pool_rating: 0.0,
        });
    }
    match cfg.initial_distribution {
        InitialDistribution::Uniform => {
            let each = cfg.cp_total / n as f64;
            states.iter_mut().for_each(|s| s.credit = each);
        }
        InitialDistribution::PowerLaw => {
            let raw = sample_power_law(rng, cfg.power_law, n)?;
            let scale = cfg.cp_total / raw.iter().sum::<f64>();
            for (s, x) in states.iter_mut().zip(raw) {
                s.credit = x * scale;
            }
        }
    }
    let mut population = Population { params, states };
    population.refresh_pools();
    Ok(population)
}

/// Sets every agent's learning intensity and update clamp from `cfg`.
pub fn assign_learning_intensities(
    population: &mut Population,
    cfg: &MechanismConfig,
    rng: &mut RngStream,
) {
    for (p, s) in population.params.iter_mut().zip(&population.states) {
        p.beta = cfg.beta;
        p.learning_intensity = match cfg.learning_mode {
            LearningMode::Off => 0.0,
            LearningMode::Uniform => cfg.alpha_l,
            LearningMode::RandomPerAgent => rng.uniform01(),
            LearningMode::StakeCorrelated => s.stake_rate_action.clamp(0.0, 1.0),
        };
    }
}

/// Marks each agent as an externality contributor with probability
/// `contributor_fraction`. Always consumes one uniform per agent.
pub fn mark_contributors(population: &mut Population, cfg: &MechanismConfig, rng: &mut RngStream) {
    for p in &mut population.params {
        p.contributor = rng.bernoulli(cfg.contributor_fraction);
    }
}

/// Draws the initial population for one replication.
pub fn prepare_population(sim: &SimConfig, rng: &mut RngStream) -> Result<Population, EngineError> {
    sim.mechanism.validate()?;
    let mut population = init_population(&sim.population, rng)?;
    assign_learning_intensities(&mut population, &sim.mechanism, rng);
    mark_contributors(&mut population, &sim.mechanism, rng);
    Ok(population)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Participants {
    pub actors: Vec<AgentId>,
    pub raters: Vec<AgentId>,
}

/// Each agent independently acts with probability `1 - p_skip_action` and
/// rates with probability `1 - p_skip_rating`. Two uniforms per agent.
pub fn select_round_participants(
    population: &Population,
    cfg: &MechanismConfig,
    rng: &mut RngStream,
) -> Participants {
    let mut out = Participants::default();
    for p in &population.params {
        let acts = rng.uniform01() >= cfg.p_skip_action;
        let rates = rng.uniform01() >= cfg.p_skip_rating;
        if acts {
            out.actors.push(p.id);
        }
        if rates {
            out.raters.push(p.id);
        }
    }
    out
}

/// One action per actor, staking its whole action pool. Zero stakes abstain.
///
/// Action ids are assigned densely in actor order.
pub fn generate_actions(actors: &[AgentId], states: &[AgentState]) -> Vec<ActionStakeRecord> {
    let mut out = Vec::with_capacity(actors.len());
    for &actor in actors {
        let s = &states[actor.index()];
        let stake = s.stake_rate_action * s.credit;
        if stake > 0.0 {
            out.push(ActionStakeRecord {
                actor,
                action: ActionId(out.len() as u32),
                stake,
            });
        }
    }
    out
}

/// Weighted choice of distinct action indices for one rater.
struct TargetPicker {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    total: f64,
}

impl TargetPicker {
    const MAX_REJECTIONS: usize = 64;

    fn new(actions: &[ActionStakeRecord], by_stake: bool) -> Self {
        let weights: Vec<f64> = actions
            .iter()
            .map(|a| if by_stake { a.stake } else { 1.0 })
            .collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            weights,
            cumulative,
            total: acc,
        }
    }

    /// Sequential weighted sampling without replacement, skipping `exclude`.
    /// Rejection sampling first; an exact scan if rejections pile up.
    fn pick(&self, k: usize, exclude: Option<usize>, rng: &mut RngStream, out: &mut Vec<usize>) {
        out.clear();
        let eligible = self
            .weights
            .iter()
            .enumerate()
            .filter(|&(i, &w)| Some(i) != exclude && w > 0.0);
        let k = k.min(eligible.count());
        let mut rejections = 0;
        while out.len() < k {
            if rejections < Self::MAX_REJECTIONS {
                let t = rng.uniform01() * self.total;
                let idx = self
                    .cumulative
                    .partition_point(|&c| c <= t)
                    .min(self.weights.len() - 1);
                if Some(idx) == exclude || out.contains(&idx) || self.weights[idx] <= 0.0 {
                    rejections += 1;
                    continue;
                }
                out.push(idx);
            } else {
                let remaining: f64 = self
                    .weights
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| Some(*i) != exclude && !out.contains(i))
                    .map(|(_, w)| w)
                    .sum();
                let mut t = rng.uniform01() * remaining;
                let mut chosen = None;
                for (i, &w) in self.weights.iter().enumerate() {
                    if Some(i) == exclude || out.contains(&i) || w <= 0.0 {
                        continue;
                    }
                    chosen = Some(i);
                    if t < w {
                        break;
                    }
                    t -= w;
                }
                out.push(chosen.expect("k is bounded by the eligible count"));
            }
        }
    }
}

/// Rating records for one round.
///
/// Raters are processed in the given order. Each picks up to
/// `ratings_per_rater` distinct foreign actions, weighted by stake when
/// consumer selection is on, and splits its rating pool evenly across them.
pub fn assign_ratings(
    raters: &[AgentId],
    actions: &[ActionStakeRecord],
    population: &Population,
    cfg: &MechanismConfig,
    rng: &mut RngStream,
) -> Result<Vec<RatingStakeRecord>, EngineError> {
    if actions.is_empty() {
        return Ok(Vec::new());
    }
    let realized: Option<Vec<Sign>> = match cfg.rating_sign_mode {
        RatingSignMode::PerRaterBernoulli => None,
        RatingSignMode::PerActionRealization => Some(
            actions
                .iter()
                .map(|a| {
                    let x = rng.normal(population.params[a.actor.index()].action_spec());
                    if x < 0.0 {
                        Sign::Negative
                    } else {
                        Sign::Positive
                    }
                })
                .collect(),
        ),
    };
    let mut own_action = vec![None; population.len()];
    for (i, a) in actions.iter().enumerate() {
        own_action[a.actor.index()] = Some(i);
    }
    let picker = TargetPicker::new(actions, cfg.consumer_selection);
    let mut targets = Vec::with_capacity(cfg.ratings_per_rater);
    let mut out = Vec::new();
    for &rater in raters {
        let s = &population.states[rater.index()];
        let budget = s.stake_rate_rating * s.credit;
        if budget <= 0.0 {
            continue;
        }
        picker.pick(
            cfg.ratings_per_rater,
            own_action[rater.index()],
            rng,
            &mut targets,
        );
        if targets.is_empty() {
            continue;
        }
        let magnitude = budget / targets.len() as f64;
        for &t in &targets {
            let action = &actions[t];
            let sign = match &realized {
                Some(signs) => signs[t],
                None => {
                    let p_neg = negative_rating_probability(
                        population.params[action.actor.index()].action_spec(),
                    );
                    sample_rating_sign(rng, p_neg)?
                }
            };
            out.push(RatingStakeRecord {
                rater,
                action: action.action,
                signed_stake: sign.as_f64() * magnitude,
            });
        }
    }
    Ok(out)
}

fn adjust_rate(rate: f64, alpha: f64, beta: f64, signal: f64) -> f64 {
    if alpha == 0.0 || signal == 0.0 {
        return rate;
    }
    let step = signal
        .abs()
        .min(beta * rate.abs())
        .min(beta * (1.0 - rate).abs());
    (rate + alpha * signal.signum() * step).clamp(0.0, 1.0)
}

/// Next action staking rate:
/// `S + alpha_L * sign(d) * min(|d|, beta*|S|, beta*|1-S|)`.
///
/// `d_action` is the dimensionless action signal in `[-1, 1]`.
pub fn update_action_stake(params: &AgentParams, state: &AgentState, d_action: f64) -> f64 {
    adjust_rate(
        state.stake_rate_action,
        params.learning_intensity,
        params.beta,
        d_action,
    )
}

/// Next rating staking rate: the same update as for actions, then capped so
/// the two rates never sum above 1.
pub fn update_rating_stake(
    params: &AgentParams,
    state: &AgentState,
    d_rating: f64,
    new_stake_rate_action: f64,
) -> f64 {
    let tentative = adjust_rate(
        state.stake_rate_rating,
        params.learning_intensity,
        params.beta,
        d_rating,
    );
    tentative.min(1.0 - new_stake_rate_action).max(0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundEvents {
    pub actions: Vec<ActionStakeRecord>,
    pub ratings: Vec<RatingStakeRecord>,
}

/// Credit and rates of one agent after a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSnapshot {
    pub credit: f64,
    pub stake_rate_action: f64,
    pub stake_rate_rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round_index: usize,
    /// One entry per agent, in id order.
    pub deltas: Vec<CreditDelta>,
    pub events: RoundEvents,
    /// State of every agent after the round.
    pub after: Vec<AgentSnapshot>,
}

fn invariant(
    round: usize,
    agent: AgentId,
    ok: bool,
    what: impl FnOnce() -> String,
) -> Result<(), EngineError> {
    if ok {
        Ok(())
    } else {
        Err(EngineError::Invariant {
            round,
            agent: agent.0,
            what: what(),
        })
    }
}

/// Plays one round and updates `population` in place.
pub fn run_round(
    population: &mut Population,
    cfg: &MechanismConfig,
    round_index: usize,
    rng: &mut RngStream,
) -> Result<RoundOutcome, EngineError> {
    let participants = select_round_participants(population, cfg, rng);
    let actions = generate_actions(&participants.actors, &population.states);
    let ratings = assign_ratings(&participants.raters, &actions, population, cfg, rng)?;
    let activities = partition_round(population.len(), &actions, &ratings)?;

    let mut deltas = Vec::with_capacity(population.len());
    let mut after = Vec::with_capacity(population.len());
    for ((params, state), activity) in population
        .params
        .iter()
        .zip(population.states.iter_mut())
        .zip(&activities)
    {
        let id = params.id;
        let externality = if params.contributor {
            match cfg.externality_mode {
                ExternalityMode::Exponential => rng.exponential(cfg.externality_mean),
                ExternalityMode::Fixed => cfg.externality_mean,
            }
        } else {
            0.0
        };
        let mut delta = settle_agent(id, activity, &cfg.coeff, cfg.gamma, externality)?;
        let staked_action = activity.staked_on_actions();
        let staked_rating = activity.staked_on_ratings();
        delta.d_action = clamp_to_pool(delta.d_action, staked_action);
        delta.d_rating = clamp_to_pool(delta.d_rating, staked_rating);
        let (signal_action, signal_rating) = learning_signal(activity)?;

        state.credit = (state.credit + delta.total()).max(0.0);
        let new_action = update_action_stake(params, state, signal_action);
        let new_rating = update_rating_stake(params, state, signal_rating, new_action);
        state.stake_rate_action = new_action;
        state.stake_rate_rating = new_rating;
        state.refresh_pools();

        invariant(round_index, id, delta.d_action >= -staked_action, || {
            format!(
                "action loss {} exceeds stake {staked_action}",
                delta.d_action
            )
        })?;
        invariant(round_index, id, delta.d_rating >= -staked_rating, || {
            format!(
                "rating loss {} exceeds stake {staked_rating}",
                delta.d_rating
            )
        })?;
        invariant(round_index, id, state.credit >= 0.0, || {
            format!("negative credit {}", state.credit)
        })?;
        invariant(
            round_index,
            id,
            new_action >= 0.0 && new_rating >= 0.0 && new_action + new_rating <= 1.0,
            || format!("staking rates {new_action} + {new_rating} leave [0, 1]"),
        )?;

        deltas.push(delta);
        after.push(AgentSnapshot {
            credit: state.credit,
            stake_rate_action: state.stake_rate_action,
            stake_rate_rating: state.stake_rate_rating,
        });
    }
    Ok(RoundOutcome {
        round_index,
        deltas,
        events: RoundEvents { actions, ratings },
        after,
    })
}

/// One replication, advanced a round at a time.
#[derive(Debug, Clone)]
pub struct Replication {
    index: usize,
    mechanism: MechanismConfig,
    population: Population,
    initial: Population,
    rng: RngStream,
    round: usize,
}

impl Replication {
    /// Draws the initial population from stream `(sim.seed, index)`.
    pub fn new(sim: &SimConfig, index: usize) -> Result<Self, EngineError> {
        let mut rng = RngStream::new(sim.seed, index as u64);
        let population = prepare_population(sim, &mut rng)?;
        Ok(Self::from_population(
            sim.mechanism.clone(),
            population,
            rng,
            index,
        ))
    }

    /// Starts from an explicit population, for scenarios that pin agent traits.
    pub fn from_population(
        mechanism: MechanismConfig,
        population: Population,
        rng: RngStream,
        index: usize,
    ) -> Self {
        Self {
            index,
            mechanism,
            initial: population.clone(),
            population,
            rng,
            round: 0,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn rounds_played(&self) -> usize {
        self.round
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn initial(&self) -> &Population {
        &self.initial
    }

    pub fn step(&mut self) -> Result<RoundOutcome, EngineError> {
        let outcome = run_round(
            &mut self.population,
            &self.mechanism,
            self.round,
            &mut self.rng,
        )?;
        self.round += 1;
        Ok(outcome)
    }

    pub fn run(mut self, rounds: usize) -> Result<ReplicationResult, EngineError> {
        let mut outcomes = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            outcomes.push(self.step()?);
        }
        Ok(ReplicationResult {
            index: self.index,
            initial: self.initial,
            rounds: outcomes,
            final_population: self.population,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub index: usize,
    pub initial: Population,
    pub rounds: Vec<RoundOutcome>,
    pub final_population: Population,
}

impl ReplicationResult {
    /// Cumulative `(d_action, d_rating, d_externality)` per agent.
    pub fn cumulative_deltas(&self) -> Vec<(f64, f64, f64)> {
        let mut out = vec![(0.0, 0.0, 0.0); self.initial.len()];
        for round in &self.rounds {
            for (acc, d) in out.iter_mut().zip(&round.deltas) {
                acc.0 += d.d_action;
                acc.1 += d.d_rating;
                acc.2 += d.d_externality;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub config: SimConfig,
    /// In replication order.
    pub replications: Vec<ReplicationResult>,
}

impl SimulationResult {
    /// Per-replication values of `statistic`, in replication order.
    pub fn per_replication<F: Fn(&ReplicationResult) -> f64>(&self, statistic: F) -> Vec<f64> {
        self.replications.iter().map(statistic).collect()
    }
}

/// Runs every replication sequentially.
pub fn run_simulation(sim: &SimConfig) -> Result<SimulationResult, EngineError> {
    run_simulation_with_jobs(sim, 1)
}

/// Runs replications on up to `jobs` threads. Results do not depend on `jobs`.
pub fn run_simulation_with_jobs(
    sim: &SimConfig,
    jobs: usize,
) -> Result<SimulationResult, EngineError> {
    sim.population.validate()?;
    sim.mechanism.validate()?;
    let run_one = |r: usize| Replication::new(sim, r)?.run(sim.rounds);
    let replications = if jobs <= 1 {
        (0..sim.replications)
            .map(run_one)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            (0..sim.replications)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<Vec<_>, _>>()
        })?
    };
    Ok(SimulationResult {
        config: sim.clone(),
        replications,
    })
}
