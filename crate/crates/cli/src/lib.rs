//! Command implementations behind the `stakerep` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use stakerep::analysis::{
    export_tables, fmt_num, learning_separation, mc_estimate, AlignmentReport, Axis, AxisSource,
    McEstimate, Reports,
};
use stakerep::config::{parse_pairs, SimConfig, REQUIRED_KEYS, SWEEPABLE_KEYS};
use stakerep::engine::{run_simulation_with_jobs, SimulationResult};
use stakerep::validation::{run_checks, CheckResult, ValidationOptions};

/// Named scenarios: learning on/off, initial credit shape, learning-intensity
/// assignment and consumer selection.
pub const PRESETS: &[(&str, &str)] = &[
    ("figure2", "learning_mode = off\ninitial_distribution = uniform\n"),
    ("figure3", "learning_mode = uniform\nalpha_l = 0.5\ninitial_distribution = uniform\n"),
    ("figure4", "learning_mode = off\ninitial_distribution = power_law\n"),
    ("figure5", "learning_mode = uniform\nalpha_l = 0.5\ninitial_distribution = power_law\n"),
    ("figure6", "learning_mode = random_per_agent\ninitial_distribution = uniform\n"),
    ("figure7", "learning_mode = random_per_agent\ninitial_distribution = power_law\n"),
    ("figure8", "learning_mode = stake_correlated\ninitial_distribution = uniform\n"),
    ("figure9", "learning_mode = stake_correlated\ninitial_distribution = power_law\n"),
    (
        "figure10",
        "learning_mode = off\ninitial_distribution = uniform\nconsumer_selection = true\n",
    ),
    (
        "figure11",
        "learning_mode = uniform\nalpha_l = 0.5\ninitial_distribution = uniform\nconsumer_selection = true\n",
    ),
    (
        "figure12",
        "learning_mode = off\ninitial_distribution = power_law\nconsumer_selection = true\n",
    ),
    (
        "figure13",
        "learning_mode = uniform\nalpha_l = 0.5\ninitial_distribution = power_law\nconsumer_selection = true\n",
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Settings shared by every subcommand, in increasing precedence:
/// defaults, preset, config file, explicit flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub agents: Option<usize>,
    pub replications: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub override_safety: bool,
}

/// Builds and validates the effective configuration.
///
/// A config file used without a preset must name every required key.
pub fn resolve_config(o: &Overrides) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    if let Some(name) = &o.preset {
        let text = preset(name).with_context(|| {
            let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            format!("unknown preset `{name}` (known: {})", names.join(", "))
        })?;
        cfg.apply_source(text)?;
    }
    if let Some(path) = &o.config {
        let source = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let pairs = parse_pairs(&source).with_context(|| format!("in {}", path.display()))?;
        if o.preset.is_none() {
            if let Some(k) = REQUIRED_KEYS.iter().find(|k| !pairs.contains_key(**k)) {
                bail!("{}: missing required key `{k}`", path.display());
            }
        }
        for (key, (line, value)) in &pairs {
            cfg.set(key, value)
                .with_context(|| format!("{}:{line}", path.display()))?;
        }
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(rounds) = o.rounds {
        cfg.rounds = rounds;
    }
    if let Some(agents) = o.agents {
        cfg.population.n = agents;
    }
    if let Some(replications) = o.replications {
        cfg.replications = replications;
    }
    if let Some(dir) = &o.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate(o.override_safety)?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
    pub alignment: AlignmentReport,
    /// Spearman correlation of mean action level against final action
    /// staking rate, across replications. Absent when undefined.
    pub separation: Option<McEstimate>,
    /// Mean cumulative action delta in the lowest and highest nonempty
    /// final action-staking-rate bins.
    pub stake_bin_means: Option<(f64, f64)>,
}

/// Rates must never move when every learning intensity is zero.
fn check_frozen_rates(result: &SimulationResult) -> Result<()> {
    for rep in &result.replications {
        if rep
            .initial
            .params
            .iter()
            .any(|p| p.learning_intensity != 0.0)
        {
            continue;
        }
        for round in &rep.rounds {
            for (agent, (s, init)) in round.after.iter().zip(&rep.initial.states).enumerate() {
                ensure!(
                    s.stake_rate_action.to_bits() == init.stake_rate_action.to_bits()
                        && s.stake_rate_rating.to_bits() == init.stake_rate_rating.to_bits(),
                    "replication {} round {}: agent {agent} moved its staking rates without learning",
                    rep.index,
                    round.round_index
                );
            }
        }
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &SimConfig, jobs: usize, out: &mut dyn Write) -> Result<SimulateSummary> {
    let result = run_simulation_with_jobs(cfg, jobs)?;
    check_frozen_rates(&result)?;
    let reports = Reports::compute(&result, cfg.bins)?;
    let files = export_tables(&result, &reports, &cfg.out_dir)
        .with_context(|| format!("writing outputs to {}", cfg.out_dir.display()))?;

    let separations: Vec<f64> = result
        .replications
        .iter()
        .filter_map(|rep| learning_separation(rep).ok())
        .collect();
    let separation = match separations.len() {
        0 => None,
        1 => Some(McEstimate {
            n: 1,
            mean: separations[0],
            std_error: f64::NAN,
        }),
        _ => Some(mc_estimate(&separations)?),
    };
    let stake_bin_means = reports
        .binned
        .iter()
        .find(|b| b.axis == Axis::StakeRateAction && b.source == AxisSource::Final)
        .and_then(|b| b.extreme_means());
    let summary = SimulateSummary {
        files,
        alignment: reports.alignment,
        separation,
        stake_bin_means,
    };
    writeln!(out, "{}", describe(cfg, &summary))?;
    Ok(summary)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "n/a".into())
}

fn describe(cfg: &SimConfig, s: &SimulateSummary) -> String {
    let a = &s.alignment;
    let mut text = format!(
        "Simulated {} replication(s) of {} agents over {} rounds with seed {}. \
         Co-rater alignment was {} against an analytic {} over {} pairs.",
        cfg.replications,
        cfg.population.n,
        cfg.rounds,
        cfg.seed,
        opt(a.empirical_p_align),
        opt(a.analytic_p_align),
        a.pairs_total
    );
    match s.separation {
        Some(e) if e.n > 1 => text.push_str(&format!(
            " Learning separation (rank correlation of action level with final action staking rate) averaged {} with standard error {}.",
            fmt_num(e.mean),
            fmt_num(e.std_error)
        )),
        Some(e) => text.push_str(&format!(" Learning separation was {}.", fmt_num(e.mean))),
        None => text.push_str(" Learning separation is undefined for this run."),
    }
    if let Some((lo, hi)) = s.stake_bin_means {
        text.push_str(&format!(
            " Mean cumulative action delta was {} in the lowest and {} in the highest staking-rate bin.",
            fmt_num(lo),
            fmt_num(hi)
        ));
    }
    text.push_str(&format!(
        " Wrote {} files to {}.",
        s.files.len(),
        cfg.out_dir.display()
    ));
    text
}

/// Seed for sweep point `index`, mixed from the master seed.
pub fn sweep_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn dir_component(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
}

/// One full simulation per value, each in its own subdirectory of
/// `cfg.out_dir`, plus `sweep_index.csv` mapping values to directories.
pub fn cmd_sweep(
    cfg: &SimConfig,
    axis: &str,
    values: &[String],
    jobs: usize,
    override_safety: bool,
    out: &mut dyn Write,
) -> Result<Vec<SweepPoint>> {
    ensure!(
        SWEEPABLE_KEYS.contains(&axis),
        "`{axis}` is not sweepable (choose one of: {})",
        SWEEPABLE_KEYS.join(", ")
    );
    ensure!(!values.is_empty(), "sweep needs at least one value");
    let mut points = Vec::with_capacity(values.len());
    for (i, value) in values.iter().enumerate() {
        let mut point = cfg.clone();
        point.set(axis, value)?;
        point.seed = sweep_seed(cfg.seed, i);
        point.out_dir = cfg
            .out_dir
            .join(format!("{i:03}_{axis}_{}", dir_component(value)));
        point
            .validate(override_safety)
            .with_context(|| format!("sweep value {axis} = {value}"))?;
        points.push((point, value.clone()));
    }
    let mut index = Vec::with_capacity(points.len());
    for (point, value) in points {
        writeln!(out, "[{axis} = {value}]")?;
        cmd_simulate(&point, jobs, out)?;
        index.push(SweepPoint {
            value,
            seed: point.seed,
            dir: point.out_dir,
        });
    }
    write_sweep_index(&cfg.out_dir, axis, &index)?;
    Ok(index)
}

fn write_sweep_index(dir: &Path, axis: &str, points: &[SweepPoint]) -> Result<()> {
    let target = dir.join("sweep_index.csv");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = csv_writer(tmp.as_file_mut());
        w.write_record(["index", "axis", "value", "seed", "directory"])?;
        for (i, p) in points.iter().enumerate() {
            let name = p.dir.file_name().map(|n| n.to_string_lossy().into_owned());
            w.write_record([
                i.to_string(),
                axis.to_string(),
                p.value.clone(),
                p.seed.to_string(),
                name.unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    tmp.persist(&target)
        .with_context(|| format!("writing {}", target.display()))?;
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Prints one line per check; returns whether all passed.
pub fn cmd_validate(opts: ValidationOptions, out: &mut dyn Write) -> Result<bool> {
    let checks = run_checks(opts);
    for CheckResult {
        name,
        passed,
        detail,
    } in &checks
    {
        writeln!(
            out,
            "{} {name}: {detail}",
            if *passed { "PASS" } else { "FAIL" }
        )?;
    }
    let failed: Vec<_> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect();
    if failed.is_empty() {
        writeln!(out, "all {} checks passed", checks.len())?;
    } else {
        writeln!(out, "failed: {}", failed.join(", "))?;
    }
    Ok(failed.is_empty())
}
