//! Credit-point settlement arithmetic.
//!
//! An action's owner gains `C_R2A * S^A * S^R_j` from every rating `j` on it,
//! where the rating stake carries the rating's sign. A rater gains
//! `C_R2R * S^R_i * S^R_j` from every co-rater `j` of the same action, so
//! agreeing raters gain and disagreeing raters lose.
//!
//! In [`GainMode::SelfNormalized`] each coefficient is the reciprocal of the
//! agent's own absolute product sum for the round, bounding each channel to
//! `[-1, 1]`. Those dimensionless terms are converted to credit points by
//! multiplying with the credits the agent staked in that channel.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanicsError {
    #[error("rating by {rater:?} references action {action:?} outside the settled set")]
    DanglingAction { rater: AgentId, action: ActionId },
    #[error("agent {0:?} cannot interact with its own record")]
    SelfInteraction(AgentId),
    #[error("record for {found:?} passed while settling {expected:?}")]
    ForeignRecord { expected: AgentId, found: AgentId },
    #[error("action stake must be finite and > 0, got {0}")]
    InvalidActionStake(f64),
    #[error("rating stake must be finite and nonzero, got {0}")]
    InvalidRatingStake(f64),
    #[error("{name} must be finite and >= 0, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// Credits staked on one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionStakeRecord {
    pub actor: AgentId,
    pub action: ActionId,
    pub stake: f64,
}

/// Credits staked on a rating; the sign of `signed_stake` is the rating direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingStakeRecord {
    pub rater: AgentId,
    pub action: ActionId,
    pub signed_stake: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    Raw,
    SelfNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCoefficients {
    /// Rating-to-action coefficient, per credit point. Unused when self-normalized.
    pub c_r2a: f64,
    /// Rating-to-rating coefficient, per credit point. Unused when self-normalized.
    pub c_r2r: f64,
    pub mode: GainMode,
}

impl GainCoefficients {
    pub const DEFAULT_RAW: f64 = 1e-3;

    pub fn raw(c_r2a: f64, c_r2r: f64) -> Self {
        Self {
            c_r2a,
            c_r2r,
            mode: GainMode::Raw,
        }
    }

    pub fn self_normalized() -> Self {
        Self {
            c_r2a: Self::DEFAULT_RAW,
            c_r2r: Self::DEFAULT_RAW,
            mode: GainMode::SelfNormalized,
        }
    }
}

impl Default for GainCoefficients {
    fn default() -> Self {
        Self::self_normalized()
    }
}

/// Per-agent credit change for one round, split by channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CreditDelta {
    pub agent: AgentId,
    pub d_action: f64,
    pub d_rating: f64,
    pub d_externality: f64,
}

impl CreditDelta {
    pub fn zero(agent: AgentId) -> Self {
        Self {
            agent,
            d_action: 0.0,
            d_rating: 0.0,
            d_externality: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.d_action + self.d_rating + self.d_externality
    }
}

fn validate_action(a: &ActionStakeRecord) -> Result<(), MechanicsError> {
    if !(a.stake.is_finite() && a.stake > 0.0) {
        return Err(MechanicsError::InvalidActionStake(a.stake));
    }
    Ok(())
}

fn validate_rating(r: &RatingStakeRecord) -> Result<(), MechanicsError> {
    if !(r.signed_stake.is_finite() && r.signed_stake != 0.0) {
        return Err(MechanicsError::InvalidRatingStake(r.signed_stake));
    }
    Ok(())
}

/// Combines a signed product sum with its absolute sum according to `mode`.
fn combine(signed: f64, absolute: f64, coeff: f64, mode: GainMode) -> f64 {
    match mode {
        GainMode::Raw => coeff * signed,
        GainMode::SelfNormalized => {
            if absolute > 0.0 {
                signed / absolute
            } else {
                0.0
            }
        }
    }
}

/// Gain of an agent from the ratings its actions received.
///
/// Every rating must reference one of `actions`, and no rater may rate its own
/// action.
pub fn action_gain(
    actions: &[ActionStakeRecord],
    ratings: &[RatingStakeRecord],
    coeff: &GainCoefficients,
) -> Result<f64, MechanicsError> {
    for a in actions {
        validate_action(a)?;
    }
    let mut signed = 0.0;
    let mut absolute = 0.0;
    for r in ratings {
        validate_rating(r)?;
        let action = actions.iter().find(|a| a.action == r.action).ok_or(
            MechanicsError::DanglingAction {
                rater: r.rater,
                action: r.action,
            },
        )?;
        if action.actor == r.rater {
            return Err(MechanicsError::SelfInteraction(r.rater));
        }
        let product = action.stake * r.signed_stake;
        signed += product;
        absolute += product.abs();
    }
    Ok(combine(signed, absolute, coeff.c_r2a, coeff.mode))
}

/// Gain of a rater from the other ratings on the actions it rated.
///
/// `co_ratings` are matched to `own` by action id; a co-rating on an action the
/// agent did not rate is a dangling reference.
pub fn rating_cross_gain(
    own: &[RatingStakeRecord],
    co_ratings: &[RatingStakeRecord],
    coeff: &GainCoefficients,
) -> Result<f64, MechanicsError> {
    if let Some(first) = own.first() {
        for r in own {
            validate_rating(r)?;
            if r.rater != first.rater {
                return Err(MechanicsError::ForeignRecord {
                    expected: first.rater,
                    found: r.rater,
                });
            }
        }
    }
    let mut signed = 0.0;
    let mut absolute = 0.0;
    for co in co_ratings {
        validate_rating(co)?;
        let mine =
            own.iter()
                .find(|r| r.action == co.action)
                .ok_or(MechanicsError::DanglingAction {
                    rater: co.rater,
                    action: co.action,
                })?;
        if mine.rater == co.rater {
            return Err(MechanicsError::SelfInteraction(co.rater));
        }
        let product = mine.signed_stake * co.signed_stake;
        signed += product;
        absolute += product.abs();
    }
    Ok(combine(signed, absolute, coeff.c_r2r, coeff.mode))
}

/// Everything one agent did, and was subject to, in one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentActivity {
    /// Actions the agent staked on.
    pub actions: Vec<ActionStakeRecord>,
    /// Ratings other agents placed on those actions.
    pub received: Vec<RatingStakeRecord>,
    /// Ratings the agent issued.
    pub issued: Vec<RatingStakeRecord>,
    /// Other agents' ratings on the actions the agent rated.
    pub co_ratings: Vec<RatingStakeRecord>,
}

impl AgentActivity {
    pub fn staked_on_actions(&self) -> f64 {
        self.actions.iter().map(|a| a.stake).sum()
    }

    pub fn staked_on_ratings(&self) -> f64 {
        self.issued.iter().map(|r| r.signed_stake.abs()).sum()
    }
}

/// Splits one round's records into per-agent activities, indexed by agent id.
///
/// Every record's agent id must be below `n_agents`.
pub fn partition_round(
    n_agents: usize,
    actions: &[ActionStakeRecord],
    ratings: &[RatingStakeRecord],
) -> Result<Vec<AgentActivity>, MechanicsError> {
    let mut out = vec![AgentActivity::default(); n_agents];
    let mut owner: HashMap<ActionId, AgentId> = HashMap::with_capacity(actions.len());
    let mut by_action: HashMap<ActionId, Vec<usize>> = HashMap::with_capacity(actions.len());
    for a in actions {
        owner.insert(a.action, a.actor);
        out[a.actor.index()].actions.push(*a);
    }
    for (idx, r) in ratings.iter().enumerate() {
        let actor = *owner.get(&r.action).ok_or(MechanicsError::DanglingAction {
            rater: r.rater,
            action: r.action,
        })?;
        if actor == r.rater {
            return Err(MechanicsError::SelfInteraction(r.rater));
        }
        out[actor.index()].received.push(*r);
        out[r.rater.index()].issued.push(*r);
        by_action.entry(r.action).or_default().push(idx);
    }
    for group in by_action.values() {
        for &i in group {
            for &j in group {
                if i != j {
                    let rater = ratings[i].rater;
                    out[rater.index()].co_ratings.push(ratings[j]);
                }
            }
        }
    }
    // HashMap iteration order is unspecified; restore a canonical order so
    // floating-point sums are reproducible.
    for activity in &mut out {
        activity.co_ratings.sort_by_key(|r| (r.action, r.rater));
    }
    Ok(out)
}

/// Credit delta for one agent over one round.
///
/// In self-normalized mode the dimensionless channel terms are scaled by the
/// credits the agent staked in that channel.
pub fn settle_agent(
    agent: AgentId,
    activity: &AgentActivity,
    coeff: &GainCoefficients,
    gamma: f64,
    externality: f64,
) -> Result<CreditDelta, MechanicsError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(MechanicsError::Negative {
            name: "gamma",
            value: gamma,
        });
    }
    if !(externality.is_finite() && externality >= 0.0) {
        return Err(MechanicsError::Negative {
            name: "externality",
            value: externality,
        });
    }
    if let Some(a) = activity.actions.iter().find(|a| a.actor != agent) {
        return Err(MechanicsError::ForeignRecord {
            expected: agent,
            found: a.actor,
        });
    }
    if let Some(r) = activity.issued.iter().find(|r| r.rater != agent) {
        return Err(MechanicsError::ForeignRecord {
            expected: agent,
            found: r.rater,
        });
    }

    let mut d_action = action_gain(&activity.actions, &activity.received, coeff)?;
    let mut d_rating = rating_cross_gain(&activity.issued, &activity.co_ratings, coeff)?;
    if coeff.mode == GainMode::SelfNormalized {
        d_action *= activity.staked_on_actions();
        d_rating *= activity.staked_on_ratings();
    }
    Ok(CreditDelta {
        agent,
        d_action,
        d_rating,
        d_externality: gamma * externality,
    })
}

/// Dimensionless `[-1, 1]` action and rating terms, independent of the
/// settlement mode. These feed the staking-rate updates.
pub fn learning_signal(activity: &AgentActivity) -> Result<(f64, f64), MechanicsError> {
    let coeff = GainCoefficients::self_normalized();
    Ok((
        action_gain(&activity.actions, &activity.received, &coeff)?,
        rating_cross_gain(&activity.issued, &activity.co_ratings, &coeff)?,
    ))
}

/// Caps a loss at the credits allocated to the category; gains pass through.
pub fn clamp_to_pool(delta: f64, pool: f64) -> f64 {
    delta.max(-pool)
}

/// Probabilities that two independent raters agree or disagree, given each
/// rates positively with probability `p_plus`.
pub fn alignment_probabilities(p_plus: f64) -> (f64, f64) {
    let p_minus = 1.0 - p_plus;
    (p_plus * p_plus + p_minus * p_minus, 2.0 * p_plus * p_minus)
}
