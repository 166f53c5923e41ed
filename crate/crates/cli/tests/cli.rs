use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stakerep_cli::{resolve_config, sweep_seed, Overrides, PRESETS};

fn stakerep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stakerep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_args(out: &Path) -> Vec<String> {
    [
        "--agents",
        "40",
        "--rounds",
        "5",
        "--replications",
        "2",
        "--seed",
        "7",
        "--out-dir",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

fn run(sub: &str, extra: &[&str], out: &Path) -> Output {
    let mut args = vec![sub.to_string()];
    args.extend(small_args(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    stakerep(&refs)
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run("simulate", &[], &a);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("Co-rater alignment"));
    assert!(run("simulate", &["--jobs", "2"], &b).status.success());
    let (x, y) = (csv_bytes(&a), csv_bytes(&b));
    assert_eq!(x.len(), 9);
    assert_eq!(x, y);
}

#[test]
fn invalid_out_dir_fails_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("plain-file");
    fs::write(&blocker, "x").unwrap();
    let out = run("simulate", &[], &blocker.join("out"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    assert_eq!(fs::read(&blocker).unwrap(), b"x");
}

#[test]
fn figure_presets_write_binned_tables() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["figure2", "figure3"] {
        let out_dir = dir.path().join(preset);
        let out = run("simulate", &["--preset", preset], &out_dir);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out_dir.join("binned_stake_rate_action.csv").exists());
    }
    // With learning off, initial and final staking-rate bins coincide.
    let frozen = dir.path().join("figure2");
    assert_eq!(
        fs::read(frozen.join("binned_stake_rate_action.csv")).unwrap(),
        fs::read(frozen.join("binned_stake_rate_action_initial.csv")).unwrap()
    );
}

#[test]
fn every_preset_resolves() {
    for (name, _) in PRESETS {
        let cfg = resolve_config(&Overrides {
            preset: Some(name.to_string()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.population.n, 1000);
    }
    assert!(resolve_config(&Overrides {
        preset: Some("figure99".into()),
        ..Default::default()
    })
    .is_err());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(
        &path,
        "agents = 10\nrounds = 100\nreplications = 1\nseed = 3\n",
    )
    .unwrap();
    let mut o = Overrides {
        config: Some(path.clone()),
        ..Default::default()
    };
    assert_eq!(resolve_config(&o).unwrap().rounds, 100);
    o.rounds = Some(200);
    assert_eq!(resolve_config(&o).unwrap().rounds, 200);

    fs::write(&path, "rounds = 100\n").unwrap();
    let err = resolve_config(&o).unwrap_err().to_string();
    assert!(err.contains("agents"), "{err}");

    fs::write(
        &path,
        "agents = 10\nrounds = 1\nreplications = 1\nseed = 3\nalpha_l = 1.5\n",
    )
    .unwrap();
    let err = format!("{:#}", resolve_config(&o).unwrap_err());
    assert!(err.contains("alpha_l") && err.contains("[0, 1]"), "{err}");
}

#[test]
fn safety_limit_needs_override() {
    let big = Overrides {
        agents: Some(100_000),
        rounds: Some(10_000),
        replications: Some(2),
        ..Default::default()
    };
    assert!(resolve_config(&big).is_err());
    assert!(resolve_config(&Overrides {
        override_safety: true,
        ..big
    })
    .is_ok());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        "sweep",
        &[
            "--axis",
            "alpha_l",
            "--values",
            "0,0.25,0.5",
            "--preset",
            "figure3",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let index = fs::read_to_string(dir.path().join("sweep_index.csv")).unwrap();
    let rows: Vec<_> = index.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let mut seeds = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<_> = row.split(',').collect();
        assert_eq!(cols[0], i.to_string());
        assert_eq!(cols[3], sweep_seed(7, i).to_string());
        seeds.push(cols[3].to_string());
        let sub = dir.path().join(cols[4]);
        assert_eq!(csv_bytes(&sub).len(), 9);
        let meta = fs::read_to_string(sub.join("run_meta.txt")).unwrap();
        assert!(meta.contains(&format!("alpha_l = {}\n", cols[2])));
    }
    seeds.dedup();
    assert_eq!(seeds.len(), 3);

    let bad = run(
        "sweep",
        &["--axis", "learning_mode", "--values", "off"],
        &dir.path().join("x"),
    );
    assert!(!bad.status.success());
}

#[test]
fn single_value_sweep_matches_simulate_with_derived_seed() {
    let dir = tempfile::tempdir().unwrap();
    let swept = dir.path().join("sweep");
    assert!(run("sweep", &["--axis", "gamma", "--values", "0"], &swept)
        .status
        .success());
    let seed = sweep_seed(7, 0).to_string();
    let direct = dir.path().join("direct");
    let out = stakerep(&[
        "simulate",
        "--agents",
        "40",
        "--rounds",
        "5",
        "--replications",
        "2",
        "--seed",
        &seed,
        "--out-dir",
        direct.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(csv_bytes(&swept.join("000_gamma_0")), csv_bytes(&direct));
}

#[test]
fn validate_passes_and_detects_broken_sampler() {
    let ok = stakerep(&["validate"]);
    assert!(ok.status.success());
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("PASS power_law_ks") && text.contains("PASS alignment_scan"));

    let broken = stakerep(&["validate", "--inject-broken-exponent"]);
    assert!(!broken.status.success());
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL power_law_ks"));
}

#[test]
fn figure3_high_stakers_gain_more() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = resolve_config(&Overrides {
        preset: Some("figure3".into()),
        agents: Some(300),
        rounds: Some(100),
        replications: Some(2),
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    })
    .unwrap();
    let mut text = Vec::new();
    let summary = stakerep_cli::cmd_simulate(&cfg, 1, &mut text).unwrap();
    let (low, high) = summary.stake_bin_means.unwrap();
    assert!(high > low, "{low} vs {high}");
    assert!(summary.separation.unwrap().mean > 0.5);
}
