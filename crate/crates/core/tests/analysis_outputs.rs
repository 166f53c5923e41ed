use std::fs;

use proptest::prelude::*;
use stakerep::analysis::{
    alignment_report, binned_delta_summary, export_tables, rank_correlation, Axis, AxisSource,
    Reports,
};
use stakerep::engine::{LearningMode, RoundEvents};
use stakerep::mechanics::{ActionId, ActionStakeRecord, AgentId, RatingStakeRecord};
use stakerep::{run_simulation, RngStream, SimConfig};

/// Rounds of `actions` actions with `raters` raters each, every rating
/// positive with probability `p_plus`.
fn synthetic(p_plus: f64, rounds: usize, actions: u32, raters: u32, seed: u64) -> Vec<RoundEvents> {
    let mut rng = RngStream::new(seed, 0);
    (0..rounds)
        .map(|_| RoundEvents {
            actions: (0..actions)
                .map(|a| ActionStakeRecord {
                    actor: AgentId(a),
                    action: ActionId(a),
                    stake: 1.0,
                })
                .collect(),
            ratings: (0..actions)
                .flat_map(|a| (0..raters).map(move |r| (a, r)))
                .map(|(a, r)| RatingStakeRecord {
                    rater: AgentId(actions + r),
                    action: ActionId(a),
                    signed_stake: if rng.uniform01() < p_plus { 1.0 } else { -1.0 },
                })
                .collect(),
        })
        .collect()
}

#[test]
fn symmetric_raters_align_half_the_time() {
    // 10 raters per action give 45 pairs; 2300 actions give 103500 pairs.
    let events = synthetic(0.5, 23, 100, 10, 1);
    let r = alignment_report(&events);
    assert!(r.pairs_total >= 100_000);
    assert!((r.empirical_p_align.unwrap() - 0.5).abs() < 0.005);
}

#[test]
fn skewed_raters_match_the_analytic_alignment() {
    let events = synthetic(0.9, 23, 100, 10, 2);
    let r = alignment_report(&events);
    let oracle = 0.9 * 0.9 + 0.1 * 0.1;
    assert!((r.empirical_p_align.unwrap() - oracle).abs() < 0.01);
    assert!((r.analytic_p_align.unwrap() - oracle).abs() < 0.01);
}

fn tiny(learning: bool) -> SimConfig {
    let mut sim = SimConfig::default();
    sim.population.n = 80;
    sim.population.cp_total = 8_000.0;
    sim.rounds = 30;
    sim.replications = 2;
    sim.bins = 5;
    if learning {
        sim.mechanism.learning_mode = LearningMode::Uniform;
    }
    sim
}

#[test]
fn bins_conserve_counts_and_totals() {
    let result = run_simulation(&tiny(true)).unwrap();
    for axis in Axis::ALL {
        let s = binned_delta_summary(&result, axis, 7, AxisSource::Final).unwrap();
        assert_eq!(s.total_count(), 160);
        assert_eq!(s.bin_edges.len(), 8);
        let direct: f64 = result
            .replications
            .iter()
            .flat_map(|r| r.cumulative_deltas())
            .map(|(a, r, _)| if axis == Axis::StakeRateRating { r } else { a })
            .sum();
        let binned: f64 = s.bins.iter().map(|b| b.sum_delta).sum();
        assert!((direct - binned).abs() <= 1e-9 * direct.abs().max(1.0));
    }
    assert!(binned_delta_summary(&result, Axis::StakeRateAction, 1, AxisSource::Final).is_err());
}

#[test]
fn frozen_rates_give_identical_initial_and_final_bins() {
    let result = run_simulation(&tiny(false)).unwrap();
    for axis in Axis::ALL {
        let a = binned_delta_summary(&result, axis, 10, AxisSource::Initial).unwrap();
        let b = binned_delta_summary(&result, axis, 10, AxisSource::Final).unwrap();
        assert_eq!(a.bins, b.bins);
    }
}

#[test]
fn identical_axis_values_fill_one_bin() {
    let mut sim = tiny(false);
    sim.mechanism.learning_mode = LearningMode::Uniform;
    sim.mechanism.alpha_l = 0.3;
    let result = run_simulation(&sim).unwrap();
    let s = binned_delta_summary(&result, Axis::LearningIntensity, 10, AxisSource::Final).unwrap();
    let nonempty: Vec<_> = s.bins.iter().filter(|b| b.count > 0).collect();
    assert_eq!(nonempty.len(), 1);
    assert_eq!(nonempty[0].count, 160);
    assert!(s
        .bins
        .iter()
        .filter(|b| b.count == 0)
        .all(|b| b.mean_delta.is_none()));
}

#[test]
fn learning_rewards_high_stakers() {
    let mut sim = tiny(true);
    sim.population.n = 300;
    sim.population.cp_total = 30_000.0;
    sim.rounds = 100;
    let result = run_simulation(&sim).unwrap();
    let s = binned_delta_summary(&result, Axis::StakeRateAction, 10, AxisSource::Final).unwrap();
    let (low, high) = s.extreme_means().unwrap();
    assert!(high > low, "{low} vs {high}");
}

#[test]
fn export_writes_every_table_deterministically() {
    let mut sim = tiny(true);
    sim.rounds = 3;
    let dir = tempfile::tempdir().unwrap();
    let mut contents = Vec::new();
    for sub in ["a", "b"] {
        let result = run_simulation(&sim).unwrap();
        let reports = Reports::compute(&result, sim.bins).unwrap();
        let out = dir.path().join(sub);
        let files = export_tables(&result, &reports, &out).unwrap();
        assert_eq!(files.len(), 3 + 6 + 1);
        let mut names: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            [
                "agents.csv",
                "alignment.csv",
                "binned_learning_intensity.csv",
                "binned_learning_intensity_initial.csv",
                "binned_stake_rate_action.csv",
                "binned_stake_rate_action_initial.csv",
                "binned_stake_rate_rating.csv",
                "binned_stake_rate_rating_initial.csv",
                "run_meta.txt",
                "trajectories.csv",
            ]
        );
        let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
        assert!(!traj.contains('\r'));
        assert_eq!(traj.lines().count(), 1 + 2 * 3 * 80);
        assert!(traj.starts_with("replication,round,agent_id,credit,"));
        let agents = fs::read_to_string(out.join("agents.csv")).unwrap();
        assert_eq!(agents.lines().count(), 1 + 2 * 80);
        let meta = fs::read_to_string(out.join("run_meta.txt")).unwrap();
        assert!(meta.contains("seed = 42\n") && meta.contains("rng = ChaCha8\n"));
        contents.push(
            [
                "trajectories.csv",
                "agents.csv",
                "alignment.csv",
                "binned_stake_rate_action.csv",
            ]
            .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(contents[0], contents[1]);
}

#[test]
fn export_into_unwritable_location_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let mut sim = tiny(false);
    sim.rounds = 1;
    let result = run_simulation(&sim).unwrap();
    let reports = Reports::compute(&result, sim.bins).unwrap();
    assert!(export_tables(&result, &reports, &blocker.join("out")).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

proptest! {
    #[test]
    fn rank_correlation_ignores_monotone_transforms(
        pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = rank_correlation(&x, &y) {
            let tx: Vec<f64> = x.iter().map(|v| (v / 100.0).exp()).collect();
            let ty: Vec<f64> = y.iter().map(|v| v * 3.0 - 7.0).collect();
            prop_assert!((rank_correlation(&tx, &ty).unwrap() - r).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
