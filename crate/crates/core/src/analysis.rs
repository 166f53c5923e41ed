//! Post-processing of completed simulations: alignment statistics,
//! staking-rate-binned credit changes, rank correlation and CSV export.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{Population, ReplicationResult, RoundEvents, SimulationResult};
use crate::mechanics::alignment_probabilities;
use crate::sampling::{GENERATOR_NAME, GENERATOR_VERSION};

pub const TOOL_NAME: &str = "stakerep";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("rank correlation undefined: input is constant")]
    ConstantInput,
    #[error("n_bins must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Co-rater agreement over a set of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignmentReport {
    pub pairs_total: u64,
    pub pairs_aligned: u64,
    pub ratings_total: u64,
    pub ratings_positive: u64,
    /// Share of co-rater pairs that agree; absent without pairs.
    pub empirical_p_align: Option<f64>,
    /// `p+^2 + p-^2` at the pooled positive-rating frequency; absent without pairs.
    pub analytic_p_align: Option<f64>,
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Counts agreeing co-rater pairs action by action.
pub fn alignment_report<'a, I>(events: I) -> AlignmentReport
where
    I: IntoIterator<Item = &'a RoundEvents>,
{
    let mut report = AlignmentReport::default();
    let mut counts: Vec<(u64, u64)> = Vec::new();
    for round in events {
        counts.clear();
        counts.resize(round.actions.len(), (0, 0));
        for r in &round.ratings {
            let idx = r.action.index();
            if idx >= counts.len() {
                counts.resize(idx + 1, (0, 0));
            }
            if r.signed_stake > 0.0 {
                counts[idx].0 += 1;
            } else {
                counts[idx].1 += 1;
            }
        }
        for &(pos, neg) in &counts {
            report.pairs_total += pairs(pos + neg);
            report.pairs_aligned += pairs(pos) + pairs(neg);
            report.ratings_total += pos + neg;
            report.ratings_positive += pos;
        }
    }
    if report.pairs_total > 0 {
        report.empirical_p_align = Some(report.pairs_aligned as f64 / report.pairs_total as f64);
        let p_plus = report.ratings_positive as f64 / report.ratings_total as f64;
        report.analytic_p_align = Some(alignment_probabilities(p_plus).0);
    }
    report
}

/// Alignment over every round of one replication.
pub fn replication_alignment(rep: &ReplicationResult) -> AlignmentReport {
    alignment_report(rep.rounds.iter().map(|r| &r.events))
}

/// Alignment over every round of every replication.
pub fn simulation_alignment(result: &SimulationResult) -> AlignmentReport {
    alignment_report(
        result
            .replications
            .iter()
            .flat_map(|rep| rep.rounds.iter().map(|r| &r.events)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    StakeRateAction,
    StakeRateRating,
    LearningIntensity,
}

impl Axis {
    pub const ALL: [Axis; 3] = [
        Axis::StakeRateAction,
        Axis::StakeRateRating,
        Axis::LearningIntensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::StakeRateAction => "stake_rate_action",
            Axis::StakeRateRating => "stake_rate_rating",
            Axis::LearningIntensity => "learning_intensity",
        }
    }

    pub fn parse(name: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.name() == name)
    }

    fn value(self, population: &Population, agent: usize) -> f64 {
        match self {
            Axis::StakeRateAction => population.states[agent].stake_rate_action,
            Axis::StakeRateRating => population.states[agent].stake_rate_rating,
            Axis::LearningIntensity => population.params[agent].learning_intensity,
        }
    }
}

/// Whether agents are binned by their starting or ending axis value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisSource {
    Initial,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub sum_delta: f64,
    /// Absent for empty bins.
    pub mean_delta: Option<f64>,
    /// Population variance; absent for empty bins.
    pub var_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSummary {
    pub axis: Axis,
    pub source: AxisSource,
    pub bin_edges: Vec<f64>,
    pub bins: Vec<Bin>,
}

impl BinnedSummary {
    pub fn total_count(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Means of the lowest and highest nonempty bins.
    pub fn extreme_means(&self) -> Option<(f64, f64)> {
        let mut nonempty = self.bins.iter().filter_map(|b| b.mean_delta);
        let first = nonempty.next()?;
        Some((first, nonempty.next_back().unwrap_or(first)))
    }
}

/// Index of the equal-width bin on `[0, 1]` holding `x`; the last bin is closed.
pub fn bin_index(x: f64, n_bins: usize) -> usize {
    ((x.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1)
}

/// Bins cumulative credit changes by an agent attribute, pooling agents of
/// every replication.
///
/// Rating-rate bins summarize the rating channel; the other axes summarize
/// the action channel.
pub fn binned_delta_summary(
    result: &SimulationResult,
    axis: Axis,
    n_bins: usize,
    source: AxisSource,
) -> Result<BinnedSummary, AnalysisError> {
    if n_bins < 2 {
        return Err(AnalysisError::TooFewBins(n_bins));
    }
    let mut sums = vec![(0u64, 0.0f64, 0.0f64); n_bins];
    for rep in &result.replications {
        let population = match source {
            AxisSource::Initial => &rep.initial,
            AxisSource::Final => &rep.final_population,
        };
        for (agent, (d_action, d_rating, _)) in rep.cumulative_deltas().into_iter().enumerate() {
            let delta = match axis {
                Axis::StakeRateRating => d_rating,
                _ => d_action,
            };
            let slot = &mut sums[bin_index(axis.value(population, agent), n_bins)];
            slot.0 += 1;
            slot.1 += delta;
            slot.2 += delta * delta;
        }
    }
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let bins = sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, sum, sum_sq))| {
            let (mean, var) = if count == 0 {
                (None, None)
            } else {
                let mean = sum / count as f64;
                (
                    Some(mean),
                    Some((sum_sq / count as f64 - mean * mean).max(0.0)),
                )
            };
            Bin {
                lo: bin_edges[i],
                hi: bin_edges[i + 1],
                count,
                sum_delta: sum,
                mean_delta: mean,
                var_delta: var,
            }
        })
        .collect();
    Ok(BinnedSummary {
        axis,
        source,
        bin_edges,
        bins,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman correlation between agents' mean action level and final action
/// staking rate in one replication.
pub fn learning_separation(rep: &ReplicationResult) -> Result<f64, AnalysisError> {
    let mu: Vec<f64> = rep.final_population.params.iter().map(|p| p.mu).collect();
    let sa: Vec<f64> = rep
        .final_population
        .states
        .iter()
        .map(|s| s.stake_rate_action)
        .collect();
    rank_correlation(&mu, &sa)
}

/// Monte-Carlo mean across replications with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub std_error: f64,
}

pub fn mc_estimate(samples: &[f64]) -> Result<McEstimate, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::TooFew {
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        n: samples.len(),
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Gini coefficient of nonnegative values; 0 for an all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    if v.is_empty() || total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = v
        .iter()
        .enumerate()
        .map(|(i, x)| (i as f64 + 1.0) * x)
        .sum();
    2.0 * weighted / (n * total) - (n + 1.0) / n
}

/// Share of the total held by the largest `fraction` of values.
pub fn top_share(values: &[f64], fraction: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((v.len() as f64 * fraction).ceil() as usize).min(v.len());
    let total: f64 = v.iter().sum();
    v[..k].iter().sum::<f64>() / total
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Formats a number with 9 significant digits, `%g` style.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Summaries exported alongside raw trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub alignment: AlignmentReport,
    /// One final and one initial summary per axis.
    pub binned: Vec<BinnedSummary>,
}

impl Reports {
    pub fn compute(result: &SimulationResult, n_bins: usize) -> Result<Self, AnalysisError> {
        let mut binned = Vec::new();
        for axis in Axis::ALL {
            for source in [AxisSource::Final, AxisSource::Initial] {
                binned.push(binned_delta_summary(result, axis, n_bins, source)?);
            }
        }
        Ok(Self {
            alignment: simulation_alignment(result),
            binned,
        })
    }
}

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "replication",
    "round",
    "agent_id",
    "credit",
    "stake_rate_action",
    "stake_rate_rating",
    "d_action",
    "d_rating",
    "d_externality",
];

pub const AGENT_HEADER: [&str; 12] = [
    "replication",
    "agent_id",
    "mu_i",
    "sigma_i",
    "alpha_l",
    "initial_credit",
    "final_credit",
    "final_stake_rate_action",
    "final_stake_rate_rating",
    "cum_d_action",
    "cum_d_rating",
    "cum_d_externality",
];

pub const BINNED_HEADER: [&str; 5] = ["bin_lo", "bin_hi", "count", "mean_delta", "var_delta"];

pub const ALIGNMENT_HEADER: [&str; 4] = [
    "pairs_total",
    "pairs_aligned",
    "empirical_p_align",
    "analytic_p_align",
];

fn binned_file_name(summary: &BinnedSummary) -> String {
    match summary.source {
        AxisSource::Final => format!("binned_{}.csv", summary.axis.name()),
        AxisSource::Initial => format!("binned_{}_initial.csv", summary.axis.name()),
    }
}

type Rows<'a> = Box<dyn FnOnce(&mut csv::Writer<&mut dyn Write>) -> csv::Result<()> + 'a>;

fn write_trajectories(result: &SimulationResult) -> Rows<'_> {
    Box::new(move |w| {
        w.write_record(TRAJECTORY_HEADER)?;
        for rep in &result.replications {
            for round in &rep.rounds {
                for (agent, (s, d)) in round.after.iter().zip(&round.deltas).enumerate() {
                    w.write_record([
                        rep.index.to_string(),
                        round.round_index.to_string(),
                        agent.to_string(),
                        fmt_num(s.credit),
                        fmt_num(s.stake_rate_action),
                        fmt_num(s.stake_rate_rating),
                        fmt_num(d.d_action),
                        fmt_num(d.d_rating),
                        fmt_num(d.d_externality),
                    ])?;
                }
            }
        }
        Ok(())
    })
}

fn write_agents(result: &SimulationResult) -> Rows<'_> {
    Box::new(move |w| {
        w.write_record(AGENT_HEADER)?;
        for rep in &result.replications {
            let cum = rep.cumulative_deltas();
            let end = &rep.final_population;
            for (i, p) in end.params.iter().enumerate() {
                let s = &end.states[i];
                w.write_record([
                    rep.index.to_string(),
                    p.id.0.to_string(),
                    fmt_num(p.mu),
                    fmt_num(p.sigma),
                    fmt_num(p.learning_intensity),
                    fmt_num(rep.initial.states[i].credit),
                    fmt_num(s.credit),
                    fmt_num(s.stake_rate_action),
                    fmt_num(s.stake_rate_rating),
                    fmt_num(cum[i].0),
                    fmt_num(cum[i].1),
                    fmt_num(cum[i].2),
                ])?;
            }
        }
        Ok(())
    })
}

fn write_binned(summary: &BinnedSummary) -> Rows<'_> {
    Box::new(move |w| {
        w.write_record(BINNED_HEADER)?;
        for b in &summary.bins {
            w.write_record([
                fmt_num(b.lo),
                fmt_num(b.hi),
                b.count.to_string(),
                opt_num(b.mean_delta),
                opt_num(b.var_delta),
            ])?;
        }
        Ok(())
    })
}

fn write_alignment(report: &AlignmentReport) -> Rows<'_> {
    Box::new(move |w| {
        w.write_record(ALIGNMENT_HEADER)?;
        w.write_record([
            report.pairs_total.to_string(),
            report.pairs_aligned.to_string(),
            opt_num(report.empirical_p_align),
            opt_num(report.analytic_p_align),
        ])
    })
}

/// Metadata text: every config key, then tool and generator identification.
pub fn run_meta(result: &SimulationResult) -> String {
    let mut text = result.config.to_text();
    text.push_str(&format!("tool = {TOOL_NAME}\n"));
    text.push_str(&format!("tool_version = {TOOL_VERSION}\n"));
    text.push_str(&format!("rng = {GENERATOR_NAME}\n"));
    text.push_str(&format!("rng_version = {GENERATOR_VERSION}\n"));
    text
}

/// Writes every table into `out_dir`, creating it if needed.
///
/// Files are staged as temporaries in `out_dir` and renamed into place only
/// after all of them were written; on failure nothing new is left behind.
pub fn export_tables(
    result: &SimulationResult,
    reports: &Reports,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    let created = !out_dir.exists();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let outcome = stage_and_commit(result, reports, out_dir);
    if outcome.is_err() && created {
        let _ = fs::remove_dir_all(out_dir);
    }
    outcome
}

fn stage_and_commit(
    result: &SimulationResult,
    reports: &Reports,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut jobs: Vec<(String, Rows<'_>)> = vec![
        ("trajectories.csv".into(), write_trajectories(result)),
        ("agents.csv".into(), write_agents(result)),
    ];
    for summary in &reports.binned {
        jobs.push((binned_file_name(summary), write_binned(summary)));
    }
    jobs.push(("alignment.csv".into(), write_alignment(&reports.alignment)));

    let mut staged = Vec::with_capacity(jobs.len() + 1);
    for (name, rows) in jobs {
        let target = out_dir.join(&name);
        let mut tmp = tempfile::NamedTempFile::new_in(out_dir).map_err(io_err(&target))?;
        {
            let mut buf = io::BufWriter::new(tmp.as_file_mut());
            let sink: &mut dyn Write = &mut buf;
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(sink);
            rows(&mut w).map_err(|e| AnalysisError::Io {
                path: target.clone(),
                source: e.into(),
            })?;
            w.flush().map_err(io_err(&target))?;
            drop(w);
            buf.flush().map_err(io_err(&target))?;
        }
        staged.push((tmp, target));
    }
    let meta_target = out_dir.join("run_meta.txt");
    let mut meta = tempfile::NamedTempFile::new_in(out_dir).map_err(io_err(&meta_target))?;
    meta.write_all(run_meta(result).as_bytes())
        .map_err(io_err(&meta_target))?;
    staged.push((meta, meta_target));

    let mut written = Vec::with_capacity(staged.len());
    for (tmp, target) in staged {
        if let Err(e) = tmp.persist(&target) {
            for path in &written {
                let _ = fs::remove_file(path);
            }
            return Err(AnalysisError::Io {
                path: target,
                source: e.error,
            });
        }
        written.push(target);
    }
    Ok(written)
}
