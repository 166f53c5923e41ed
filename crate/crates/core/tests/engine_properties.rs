use proptest::prelude::*;
use stakerep::analysis::learning_separation;
use stakerep::engine::{
    assign_ratings, generate_actions, prepare_population, run_simulation, update_action_stake,
    update_rating_stake, AgentParams, AgentState, LearningMode, MechanismConfig, Replication,
};
use stakerep::mechanics::{AgentId, GainCoefficients};
use stakerep::{RngStream, SimConfig};

fn small(n: usize, rounds: usize) -> SimConfig {
    let mut sim = SimConfig::default();
    sim.population.n = n;
    sim.population.cp_total = 100.0 * n as f64;
    sim.rounds = rounds;
    sim.replications = 1;
    sim
}

fn agent(alpha: f64, beta: f64) -> AgentParams {
    AgentParams {
        id: AgentId(0),
        mu: 0.0,
        sigma: 1.0,
        learning_intensity: alpha,
        beta,
        contributor: false,
    }
}

fn rates(sa: f64, sr: f64) -> AgentState {
    AgentState {
        credit: 1.0,
        sr_a_cap: 1.0,
        stake_rate_action: sa,
        stake_rate_rating: sr,
        pool_action: sa,
        pool_rating: sr,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_and_credit_stay_in_bounds(
        seed in any::<u64>(),
        alpha in 0.0f64..=1.0,
        beta in 0.01f64..0.99,
        selection in any::<bool>(),
        raw in any::<bool>(),
        skip in 0.0f64..0.9,
    ) {
        let mut sim = small(40, 15);
        sim.seed = seed;
        sim.mechanism.learning_mode = LearningMode::Uniform;
        sim.mechanism.alpha_l = alpha;
        sim.mechanism.beta = beta;
        sim.mechanism.consumer_selection = selection;
        sim.mechanism.p_skip_action = skip;
        sim.mechanism.p_skip_rating = skip;
        if raw {
            sim.mechanism.coeff = GainCoefficients::raw(1e-3, 1e-3);
        }
        let result = run_simulation(&sim).unwrap();
        for round in &result.replications[0].rounds {
            for (s, d) in round.after.iter().zip(&round.deltas) {
                prop_assert!(s.credit >= 0.0);
                prop_assert!(s.stake_rate_action >= 0.0 && s.stake_rate_rating >= 0.0);
                prop_assert!(s.stake_rate_action + s.stake_rate_rating <= 1.0);
                let staked: f64 = round.events.actions.iter().filter(|a| a.actor == d.agent).map(|a| a.stake).sum();
                let rated: f64 = round.events.ratings.iter().filter(|r| r.rater == d.agent).map(|r| r.signed_stake.abs()).sum();
                prop_assert!(d.d_action >= -staked);
                prop_assert!(d.d_rating >= -rated * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn zero_action_stake_earns_nothing(seed in any::<u64>(), selection in any::<bool>()) {
        let mut sim = small(30, 10);
        sim.mechanism.consumer_selection = selection;
        let mut rng = RngStream::new(seed, 0);
        let mut pop = prepare_population(&sim, &mut rng).unwrap();
        for s in pop.states.iter_mut().step_by(3) {
            s.stake_rate_action = 0.0;
        }
        pop.refresh_pools();
        let result = Replication::from_population(sim.mechanism.clone(), pop, rng, 0).run(10).unwrap();
        for round in &result.rounds {
            for (d, s) in round.deltas.iter().zip(&result.initial.states) {
                if s.stake_rate_action == 0.0 {
                    prop_assert_eq!(d.d_action, 0.0);
                }
            }
        }
    }

    #[test]
    fn action_update_follows_signal(
        sa in 0.0f64..=1.0,
        alpha in 0.0f64..=1.0,
        beta in 0.01f64..0.99,
        d in -1.0f64..=1.0,
    ) {
        let next = update_action_stake(&agent(alpha, beta), &rates(sa, 0.0), d);
        prop_assert!((0.0..=1.0).contains(&next));
        if d > 0.0 { prop_assert!(next >= sa); }
        if d < 0.0 { prop_assert!(next <= sa); }
        prop_assert!((next - sa).abs() <= alpha * beta * sa.min(1.0 - sa) + 1e-15);
    }

    #[test]
    fn rating_update_respects_total(
        sa in 0.0f64..=1.0,
        frac in 0.0f64..=1.0,
        new_sa in 0.0f64..=1.0,
        alpha in 0.0f64..=1.0,
        d in -1.0f64..=1.0,
    ) {
        let sr = (1.0 - sa) * frac;
        let next = update_rating_stake(&agent(alpha, 0.5), &rates(sa, sr), d, new_sa);
        prop_assert!(next >= 0.0);
        prop_assert!(next + new_sa <= 1.0);
    }
}

#[test]
fn selection_favors_larger_stakes() {
    let mut sim = small(12, 1);
    sim.mechanism.consumer_selection = true;
    sim.mechanism.ratings_per_rater = 2;
    let mut rng = RngStream::new(31, 0);
    let mut pop = prepare_population(&sim, &mut rng).unwrap();
    for (i, s) in pop.states.iter_mut().enumerate() {
        s.stake_rate_action = if i < 6 { 0.05 * (i + 1) as f64 } else { 0.0 };
        s.stake_rate_rating = 0.5;
    }
    pop.refresh_pools();
    let actors: Vec<_> = (0..6).map(AgentId).collect();
    let raters: Vec<_> = (6..12).map(AgentId).collect();
    let actions = generate_actions(&actors, &pop.states);
    let mut received = [0usize; 6];
    for _ in 0..2_000 {
        for r in assign_ratings(&raters, &actions, &pop, &sim.mechanism, &mut rng).unwrap() {
            received[r.action.index()] += 1;
        }
    }
    assert!(received.windows(2).all(|w| w[0] <= w[1]), "{received:?}");
}

#[test]
fn symmetric_population_has_no_credit_drift() {
    let mut sim = small(200, 20);
    sim.mechanism.gamma = 0.0;
    let reps = 24;
    let drifts: Vec<f64> = (0..reps)
        .map(|r| {
            let mut rng = RngStream::new(404, r);
            let mut pop = prepare_population(&sim, &mut rng).unwrap();
            pop.params.iter_mut().for_each(|p| p.mu = 0.0);
            let start = pop.total_credit();
            let result = Replication::from_population(sim.mechanism.clone(), pop, rng, r as usize)
                .run(sim.rounds)
                .unwrap();
            (result.final_population.total_credit() - start) / sim.rounds as f64
        })
        .collect();
    let n = reps as f64;
    let mean = drifts.iter().sum::<f64>() / n;
    let sd = (drifts.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        mean.abs() <= 3.0 * sd / n.sqrt(),
        "drift {mean} with sd {sd}"
    );
}

#[test]
fn learning_separates_by_action_level() {
    let mut sim = small(300, 100);
    sim.replications = 2;
    sim.mechanism.learning_mode = LearningMode::Uniform;
    let learning = run_simulation(&sim).unwrap();
    sim.mechanism.learning_mode = LearningMode::Off;
    let frozen = run_simulation(&sim).unwrap();
    for (l, f) in learning.replications.iter().zip(&frozen.replications) {
        let (l, f) = (
            learning_separation(l).unwrap(),
            learning_separation(f).unwrap(),
        );
        assert!(l > 0.0 && l > f, "{l} vs {f}");
    }
}

#[test]
fn stake_correlated_intensity_equals_initial_rate() {
    let mut sim = small(100, 1);
    sim.mechanism.learning_mode = LearningMode::StakeCorrelated;
    let pop = prepare_population(&sim, &mut RngStream::new(1, 0)).unwrap();
    let x: Vec<f64> = pop.params.iter().map(|p| p.learning_intensity).collect();
    let y: Vec<f64> = pop.states.iter().map(|s| s.stake_rate_action).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 100.0, y.iter().sum::<f64>() / 100.0);
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    assert!((cov / (vx * vy).sqrt() - 1.0).abs() < 1e-12);
}

#[test]
fn mechanism_defaults_are_documented_values() {
    let m = MechanismConfig::default();
    assert_eq!((m.p_skip_action, m.p_skip_rating), (0.2, 0.2));
    assert_eq!(m.ratings_per_rater, 3);
    assert_eq!(m.beta, 0.5);
}
