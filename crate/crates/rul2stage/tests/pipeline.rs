//! End-to-end pipeline tests at desk scale: the binary's file contracts
//! and exit codes, consistency of the emitted reports, and a physical
//! sanity check that the detected FPC lands near the capacity knee.

use std::path::Path;
use std::process::Command;

use rul2stage::dataio::load_cells;
use rul2stage::fpc::{decide_fpc, train_hs, StageOptions};
use rul2stage::synthgen::{generate_fleet_with_params, FleetSpec, ParamRange};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rul2stage"))
}

/// A config small enough that the whole generate/train/evaluate round
/// trip stays in seconds.
fn small_config(base: &Path) -> String {
    format!(
        "data = {}\n\
         out = {}\n\
         n_cells = 8\n\
         n_train = 6\n\
         eol_min = 160\n\
         eol_max = 260\n\
         features = 2\n\
         hidden = 8\n\
         layers_per_stack = 1\n\
         num_stacks = 1\n\
         dense_units = 16\n\
         max_epochs = 25\n\
         seed = 11\n",
        base.join("data").join("fleet").display(),
        base.join("out").display(),
    )
}

#[test]
fn binary_round_trip_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config_path = base.join("run.conf");
    std::fs::write(&config_path, small_config(base)).unwrap();
    let config = config_path.to_str().unwrap();

    // generate writes the fleet under --out, which train then reads as data.
    let status = bin()
        .args(["generate", "--config", config, "--quiet", "--out"])
        .arg(base.join("data"))
        .status()
        .unwrap();
    assert!(status.success(), "generate failed");
    let manifest = base.join("data").join("fleet").join("manifest.txt");
    assert!(manifest.is_file());
    assert_eq!(load_cells(&base.join("data").join("fleet")).unwrap().len(), 8);

    let out = base.join("out");
    let status = bin()
        .args(["train", "--config", config, "--quiet"])
        .status()
        .unwrap();
    assert!(status.success(), "train failed");
    for f in [
        "hs.ckpt",
        "rul.ckpt",
        "hs_history.csv",
        "rul_history.csv",
        "decisions.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("test_fleet").join("manifest.txt").is_file());
    assert_eq!(load_cells(&out.join("test_fleet")).unwrap().len(), 2);
    assert!(!out.join(".lock").exists(), "lock not released");

    let status = bin()
        .args(["evaluate", "--config", config, "--quiet"])
        .status()
        .unwrap();
    assert!(status.success(), "evaluate failed");
    let eval_dir = out.join("eval");
    assert!(eval_dir.join("report.txt").is_file());
    assert!(eval_dir.join("report.csv").is_file());
    assert!(eval_dir.join("decisions.csv").is_file());

    // One curve CSV and one SVG per triggered row of the report.
    let report = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    let mut triggered = 0;
    for line in report.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let (cell_id, is_triggered) = (fields[0], fields[1] == "true");
        let curve = eval_dir.join("curves").join(format!("{cell_id}.csv"));
        let plot = eval_dir.join("plots").join(format!("{cell_id}.svg"));
        assert_eq!(curve.is_file(), is_triggered, "curve for {cell_id}");
        assert_eq!(plot.is_file(), is_triggered, "plot for {cell_id}");
        triggered += usize::from(is_triggered);
    }
    assert!(triggered >= 1, "nothing triggered in the smoke run");

    // inspect prints the checkpoint summary on stdout.
    let output = bin()
        .args(["inspect"])
        .arg(out.join("hs.ckpt"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("head = hs"), "inspect output: {text}");
    assert!(text.contains("n_params = "));
}

/// The emitted text report's aggregate must be recomputable from the
/// emitted CSV rows (unweighted mean over triggered cells). Both files
/// print full-precision floats, so the check is exact.
#[test]
fn emitted_aggregate_matches_recomputation_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config_path = base.join("run.conf");
    std::fs::write(&config_path, small_config(base)).unwrap();
    let config = config_path.to_str().unwrap();

    for sub in ["generate", "train", "evaluate"] {
        let mut cmd = bin();
        cmd.args([sub, "--config", config, "--quiet"]);
        if sub == "generate" {
            cmd.arg("--out").arg(base.join("data"));
        }
        assert!(cmd.status().unwrap().success(), "{sub} failed");
    }

    let eval_dir = base.join("out").join("eval");
    let csv = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    let mut mses = Vec::new();
    let mut maes = Vec::new();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "true" {
            mses.push(fields[4].parse::<f64>().unwrap());
            maes.push(fields[5].parse::<f64>().unwrap());
        }
    }
    assert!(!mses.is_empty());

    let txt = std::fs::read_to_string(eval_dir.join("report.txt")).unwrap();
    let field = |key: &str| -> f64 {
        txt.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or_else(|| panic!("missing `{key}` in report"))
            .trim()
            .parse()
            .unwrap()
    };
    let mse = field("aggregate.mse =");
    let mae = field("aggregate.mae =");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mse - mean(&mses)).abs() <= 1e-12, "mse {mse} vs rows");
    assert!((mae - mean(&maes)).abs() <= 1e-12, "mae {mae} vs rows");
    assert_eq!(
        txt.lines()
            .find_map(|l| l.strip_prefix("n_triggered ="))
            .unwrap()
            .trim()
            .parse::<usize>()
            .unwrap(),
        mses.len()
    );
}

#[test]
fn config_and_data_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();

    // Unknown config key: config error, exit 2.
    let bad_key = base.join("bad_key.conf");
    std::fs::write(&bad_key, "bogus = 1\n").unwrap();
    let status = bin()
        .args(["train", "--config", bad_key.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Out-of-range value: still a config error.
    let bad_range = base.join("bad_range.conf");
    std::fs::write(&bad_range, "features = 8\n").unwrap();
    let status = bin()
        .args(["train", "--config", bad_range.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Valid config, missing data: data error, exit 3.
    let missing = base.join("missing.conf");
    std::fs::write(
        &missing,
        format!("data = {}\nout = {}\n", base.join("nowhere").display(), base.join("o").display()),
    )
    .unwrap();
    let status = bin()
        .args(["train", "--config", missing.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // Corrupt checkpoint: data error, exit 3.
    let fake = base.join("fake.ckpt");
    std::fs::write(&fake, b"not a checkpoint").unwrap();
    let output = bin()
        .args(["inspect"])
        .arg(&fake)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

/// The detected first prediction cycle should sit near each cell's
/// capacity knee: that is the physical event the division model learns.
#[test]
fn detected_fpc_tracks_the_capacity_knee() {
    let mut spec = FleetSpec::desk_default(10, 200, 400, 123);
    // Pin the knee into a narrow band so proximity is well-defined.
    spec.knee_fraction = ParamRange { lo: 0.65, hi: 0.75 };
    let fleet = generate_fleet_with_params(&spec).unwrap();
    let cells: Vec<_> = fleet.iter().map(|(_, c)| c.clone()).collect();

    let mut opts = StageOptions::small();
    opts.train.seed = 7;
    opts.train.max_epochs = 40;
    let selection = rul2stage::dataio::FeatureSelection::first_n(2).unwrap();
    let (model, _) = train_hs(&cells, &selection, 0.10, &opts).unwrap();

    let mut offsets: Vec<f64> = Vec::new();
    for (params, cell) in &fleet {
        let decision = decide_fpc(&model, cell, 5).unwrap();
        if let Some(fpc) = decision.fpc_cycle {
            let knee = params.knee_fraction * cell.eol() as f64;
            // The trigger cannot fire before fade is visible, so a
            // moderate lag past the knee is expected; firing well before
            // it would mean the classifier keys on something unphysical.
            assert!(
                fpc as f64 >= knee - 0.10 * cell.eol() as f64,
                "cell {} triggered at {fpc}, well before its knee at {knee:.0}",
                cell.cell_id()
            );
            offsets.push((fpc as f64 - knee).abs() / cell.eol() as f64);
        }
    }
    assert!(
        offsets.len() >= 8,
        "only {} of 10 cells triggered",
        offsets.len()
    );
    offsets.sort_by(f64::total_cmp);
    let median = offsets[offsets.len() / 2];
    assert!(
        median <= 0.20,
        "median |fpc - knee| is {median:.3} of life, expected <= 0.20"
    );
}
