//! Command-line orchestration: fleet generation, two-stage training,
//! evaluation, feature-count ablation, and checkpoint inspection.
//!
//! Configuration is a flat `key = value` text file; every key has a
//! default matching the reference training setup, so an empty file (or no
//! file at all) reproduces it. The `--seed`, `--out`, and `--features`
//! flags override their config keys. All validation happens before any
//! compute starts, and commands that write into the output directory take
//! a lock file so concurrent runs cannot interleave artifacts.

use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::dataio::{load_cells, split_train_test, FeatureSelection};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_fleet_detailed, write_curve_svg, write_report_csv, write_report_text,
};
use crate::fpc::{
    decide_fpc, labeled_accuracy, train_hs, write_decisions_csv, FpcDecision, HsModel,
    StageOptions, DEFAULT_LABEL_FRACTION, DEFAULT_TRIGGER_K,
};
use crate::nn::{
    load_checkpoint, save_checkpoint, Checkpoint, Head, TrainConfig, TrainOutcome,
};
use crate::rulpred::{train_rul, write_curve_csv, RulModel};
use crate::synthgen::{generate_fleet, FleetSpec};
use crate::windows::{DEFAULT_STEP, DEFAULT_WINDOW};

/// Every config key with its documentation line, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data", "fleet manifest or directory with the training cells"),
    ("test_data", "optional separate test fleet; absent = hold out n_cells - n_train cells"),
    ("out", "output directory for all artifacts (default: out)"),
    ("n_cells", "fleet size for `generate` (default: 30)"),
    ("eol_min", "shortest cycle life for `generate` (default: 150)"),
    ("eol_max", "longest cycle life for `generate` (default: 1200)"),
    ("n_train", "training cells when splitting a single fleet (default: 24)"),
    ("features", "leading channels of the canonical order to use, 1..=7 (default: 4)"),
    ("n_w", "window length in cycles (default: 50)"),
    ("step", "window stride in cycles (default: 1)"),
    ("p", "healthy/unhealthy label fraction in (0, 0.5] (default: 0.1)"),
    ("trigger_k", "consecutive unhealthy windows that set the FPC (default: 5)"),
    ("hidden", "LSTM hidden units per layer (default: 50)"),
    ("layers_per_stack", "LSTM layers per stack (default: 4)"),
    ("num_stacks", "parallel LSTM stacks (default: 2)"),
    ("dense_units", "fully-connected layer width (default: 128)"),
    ("batch_size", "minibatch size (default: 8)"),
    ("max_epochs", "epoch cap (default: 100)"),
    ("patience", "early-stopping patience in epochs (default: 20)"),
    ("validation_fraction", "held-out fraction for early stopping (default: 0.1)"),
    ("lr", "Adam learning rate (default: 0.001)"),
    ("beta1", "Adam first-moment decay (default: 0.9)"),
    ("beta2", "Adam second-moment decay (default: 0.99)"),
    ("eps", "Adam denominator offset (default: 1e-8)"),
    ("seed", "master RNG seed (default: 0)"),
];

/// One run's full parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out: PathBuf,
    pub n_cells: usize,
    pub eol_min: usize,
    pub eol_max: usize,
    pub n_train: usize,
    pub features: usize,
    pub n_w: usize,
    pub step: usize,
    pub p: f64,
    pub trigger_k: usize,
    pub hidden: usize,
    pub layers_per_stack: usize,
    pub num_stacks: usize,
    pub dense_units: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            data: None,
            test_data: None,
            out: PathBuf::from("out"),
            n_cells: 30,
            eol_min: 150,
            eol_max: 1200,
            n_train: 24,
            features: 4,
            n_w: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            p: DEFAULT_LABEL_FRACTION,
            trigger_k: DEFAULT_TRIGGER_K,
            hidden: 50,
            layers_per_stack: 4,
            num_stacks: 2,
            dense_units: 128,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            validation_fraction: train.validation_fraction,
            lr: train.adam.lr,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            eps: train.adam.eps,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "config key `{key}`: cannot parse `{value}` as {}",
            std::any::type_name::<T>()
        ))
    })
}

impl RunConfig {
    /// Reads a config file and applies it over the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config = RunConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Applies `key = value` lines over the current values. Blank lines
    /// and `#` comments are skipped; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "test_data" => self.test_data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "n_cells" => self.n_cells = parse_value(key, value)?,
            "eol_min" => self.eol_min = parse_value(key, value)?,
            "eol_max" => self.eol_max = parse_value(key, value)?,
            "n_train" => self.n_train = parse_value(key, value)?,
            "features" => self.features = parse_value(key, value)?,
            "n_w" => self.n_w = parse_value(key, value)?,
            "step" => self.step = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            "trigger_k" => self.trigger_k = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "layers_per_stack" => self.layers_per_stack = parse_value(key, value)?,
            "num_stacks" => self.num_stacks = parse_value(key, value)?,
            "dense_units" => self.dense_units = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => {
                let known: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
                return Err(Error::Config(format!(
                    "unknown config key `{key}`; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Checks every numeric range before any work starts. Path existence
    /// is checked by the commands that need each path.
    pub fn validate(&self) -> Result<()> {
        if !(1..=7).contains(&self.features) {
            return Err(Error::Config(format!(
                "features must be 1..=7, got {}",
                self.features
            )));
        }
        if !(self.p > 0.0 && self.p <= 0.5) {
            return Err(Error::Config(format!("p must be in (0, 0.5], got {}", self.p)));
        }
        if self.trigger_k == 0 {
            return Err(Error::Config("trigger_k must be at least 1".into()));
        }
        if self.n_cells < 2 || self.n_train == 0 || self.n_train >= self.n_cells {
            return Err(Error::Config(format!(
                "need 1 <= n_train < n_cells, got n_train {} of n_cells {}",
                self.n_train, self.n_cells
            )));
        }
        if self.eol_min > self.eol_max {
            return Err(Error::Config(format!(
                "eol_min {} exceeds eol_max {}",
                self.eol_min, self.eol_max
            )));
        }
        // Delegate the rest to the owning modules' validators.
        self.stage_options().validate()?;
        self.selection().map(|_| ())
    }

    /// Feature selection: the first `features` channels in canonical order.
    pub fn selection(&self) -> Result<FeatureSelection> {
        FeatureSelection::first_n(self.features)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut train = TrainConfig::default();
        train.batch_size = self.batch_size;
        train.max_epochs = self.max_epochs;
        train.patience = self.patience;
        train.validation_fraction = self.validation_fraction;
        train.seed = self.seed;
        train.adam.lr = self.lr;
        train.adam.beta1 = self.beta1;
        train.adam.beta2 = self.beta2;
        train.adam.eps = self.eps;
        train
    }

    pub fn stage_options(&self) -> StageOptions {
        let mut opts = StageOptions::default();
        opts.n_w = self.n_w;
        opts.step = self.step;
        opts.hidden = self.hidden;
        opts.layers_per_stack = self.layers_per_stack;
        opts.num_stacks = self.num_stacks;
        opts.dense_units = self.dense_units;
        opts.train = self.train_config();
        opts
    }

    pub fn fleet_spec(&self) -> FleetSpec {
        FleetSpec::desk_default(self.n_cells, self.eol_min, self.eol_max, self.seed)
    }
}

/// Holds `<out>/.lock` for the duration of a writing command; released on
/// drop. A stale lock (crashed run) must be removed by hand.
#[derive(Debug)]
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(out: &Path) -> Result<OutputLock> {
        std::fs::create_dir_all(out)?;
        let path = out.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory is locked by {}; is another run writing there? remove the file if it is stale",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn note(quiet: bool, msg: std::fmt::Arguments) {
    if !quiet {
        println!("{msg}");
    }
}

macro_rules! note {
    ($quiet:expr, $($arg:tt)*) => { note($quiet, format_args!($($arg)*)) };
}

/// Generates a synthetic fleet into `<out>/fleet/` and returns the
/// manifest path.
pub fn cmd_generate(config: &RunConfig, quiet: bool) -> Result<PathBuf> {
    let _lock = OutputLock::acquire(&config.out)?;
    let spec = config.fleet_spec();
    let cells = generate_fleet(&spec)?;
    let dir = config.out.join("fleet");
    let manifest = crate::dataio::save_cells(&cells, &dir)?;
    note!(
        quiet,
        "generated {} cells (eol {}..={}) under {}",
        cells.len(),
        config.eol_min,
        config.eol_max,
        dir.display()
    );
    Ok(manifest)
}

/// Everything `train` leaves on disk.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub hs_checkpoint: PathBuf,
    pub rul_checkpoint: PathBuf,
    pub decisions: PathBuf,
    /// Manifest of the held-out fleet when `train` made the split itself.
    pub test_manifest: Option<PathBuf>,
    pub hs_accuracy: f64,
    pub n_triggered: usize,
    pub n_train_cells: usize,
}

fn write_history_csv(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss")?;
    for e in &outcome.history {
        writeln!(f, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
    }
    f.flush()?;
    Ok(())
}

fn stage_metadata(config: &RunConfig, stage: &str) -> String {
    format!(
        "stage={stage} features={} n_w={} step={} p={} trigger_k={} seed={}",
        config.features, config.n_w, config.step, config.p, config.trigger_k, config.seed
    )
}

/// Trains both stages end to end and persists: `hs.ckpt`, `rul.ckpt`,
/// per-stage history CSVs, the training cells' FPC decisions, and — when
/// no separate test fleet is configured — the held-out cells under
/// `<out>/test_fleet/`.
pub fn cmd_train(config: &RunConfig, quiet: bool) -> Result<TrainArtifacts> {
    let data = config.data.as_ref().ok_or_else(|| {
        Error::Config("config key `data` is required for train".into())
    })?;
    let _lock = OutputLock::acquire(&config.out)?;
    let cells = load_cells(data)?;

    // With no explicit test fleet, hold out everything past n_train and
    // save it, so evaluate has a self-contained input.
    let (train_cells, test_manifest) = if config.test_data.is_none() {
        if config.n_train >= cells.len() {
            return Err(Error::Config(format!(
                "n_train {} needs a fleet larger than that, found {} cells",
                config.n_train,
                cells.len()
            )));
        }
        let (train_cells, test_cells) = split_train_test(cells, config.n_train, config.seed)?;
        let manifest = crate::dataio::save_cells(&test_cells, &config.out.join("test_fleet"))?;
        note!(
            quiet,
            "split fleet: {} train / {} held out",
            train_cells.len(),
            test_cells.len()
        );
        (train_cells, Some(manifest))
    } else {
        (cells, None)
    };

    let selection = config.selection()?;
    let opts = config.stage_options();

    note!(quiet, "stage 1: training HS division model on {} cells", train_cells.len());
    let (hs_model, hs_outcome) = train_hs(&train_cells, &selection, config.p, &opts)?;
    let hs_accuracy = labeled_accuracy(&hs_model, &train_cells)?;
    note!(
        quiet,
        "stage 1: best val loss {:.6} at epoch {}; labeled accuracy {:.4}",
        hs_outcome.best_val_loss,
        hs_outcome.best_epoch,
        hs_accuracy
    );

    let decisions: Vec<FpcDecision> = train_cells
        .iter()
        .map(|c| decide_fpc(&hs_model, c, config.trigger_k))
        .collect::<Result<_>>()?;
    let n_triggered = decisions.iter().filter(|d| d.triggered).count();
    note!(
        quiet,
        "stage 1: {} of {} training cells triggered",
        n_triggered,
        decisions.len()
    );

    note!(quiet, "stage 2: training RUL model on post-FPC windows");
    let (rul_model, rul_outcome) = train_rul(&train_cells, &decisions, &selection, &opts)?;
    note!(
        quiet,
        "stage 2: best val loss {:.6} at epoch {}",
        rul_outcome.best_val_loss,
        rul_outcome.best_epoch
    );

    let hs_path = config.out.join("hs.ckpt");
    save_checkpoint(
        &Checkpoint {
            spec: hs_model.spec.clone(),
            params: hs_model.params.clone(),
            selection: selection.clone(),
            stats: hs_model.stats.clone(),
            metadata: stage_metadata(config, "hs"),
        },
        &hs_path,
    )?;
    let rul_path = config.out.join("rul.ckpt");
    save_checkpoint(
        &Checkpoint {
            spec: rul_model.spec.clone(),
            params: rul_model.params.clone(),
            selection: selection.clone(),
            stats: rul_model.stats.clone(),
            metadata: stage_metadata(config, "rul"),
        },
        &rul_path,
    )?;
    write_history_csv(&hs_outcome, &config.out.join("hs_history.csv"))?;
    write_history_csv(&rul_outcome, &config.out.join("rul_history.csv"))?;
    let decisions_path = config.out.join("decisions.csv");
    write_decisions_csv(&decisions, &decisions_path)?;
    note!(quiet, "wrote {} and {}", hs_path.display(), rul_path.display());

    Ok(TrainArtifacts {
        hs_checkpoint: hs_path,
        rul_checkpoint: rul_path,
        decisions: decisions_path,
        test_manifest,
        hs_accuracy,
        n_triggered,
        n_train_cells: decisions.len(),
    })
}

fn load_stage_checkpoint(path: &Path, head: Head, stage: &str) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.spec.head != head {
        return Err(Error::Config(format!(
            "{} is not a {stage} checkpoint",
            path.display()
        )));
    }
    Ok(ckpt)
}

/// Rebuilds both models from checkpoints, runs the pipeline over the test
/// fleet, and writes the report (text + CSV), one curve CSV and SVG per
/// triggered cell, and the decisions CSV. Returns the text report path.
pub fn cmd_evaluate(
    config: &RunConfig,
    hs_path: &Path,
    rul_path: &Path,
    quiet: bool,
) -> Result<PathBuf> {
    let test_path = match &config.test_data {
        Some(p) => p.clone(),
        None => config.out.join("test_fleet"),
    };
    let _lock = OutputLock::acquire(&config.out)?;
    let cells = load_cells(&test_path)?;
    let hs_ckpt = load_stage_checkpoint(hs_path, Head::Hs, "division (hs)")?;
    let rul_ckpt = load_stage_checkpoint(rul_path, Head::Rul, "RUL")?;
    let hs = HsModel {
        spec: hs_ckpt.spec,
        params: hs_ckpt.params,
        selection: hs_ckpt.selection,
        stats: hs_ckpt.stats,
        p: config.p,
        step: config.step,
    };
    let rul = RulModel {
        spec: rul_ckpt.spec,
        params: rul_ckpt.params,
        selection: rul_ckpt.selection,
        stats: rul_ckpt.stats,
        step: config.step,
    };

    let eval = evaluate_fleet_detailed(&hs, &rul, &cells, config.trigger_k)?;

    let eval_dir = config.out.join("eval");
    let curve_dir = eval_dir.join("curves");
    let plot_dir = eval_dir.join("plots");
    std::fs::create_dir_all(&curve_dir)?;
    std::fs::create_dir_all(&plot_dir)?;
    for curve in eval.curves.iter().flatten() {
        write_curve_csv(curve, &curve_dir.join(format!("{}.csv", curve.cell_id)))?;
        write_curve_svg(curve, &plot_dir.join(format!("{}.svg", curve.cell_id)))?;
    }
    write_decisions_csv(&eval.decisions, &eval_dir.join("decisions.csv"))?;
    let report_path = eval_dir.join("report.txt");
    write_report_text(&eval.report, &report_path)?;
    write_report_csv(&eval.report, &eval_dir.join("report.csv"))?;

    match &eval.report.aggregate {
        Some(a) => note!(
            quiet,
            "evaluated {} cells ({} triggered): MSE {:.6}, MAE {:.6}, MAPE {}",
            eval.report.rows.len(),
            eval.report.n_triggered(),
            a.mse,
            a.mae,
            a.mape.map(|m| format!("{m:.6}")).unwrap_or_else(|| "absent".into())
        ),
        None => note!(
            quiet,
            "evaluated {} cells; none triggered, no aggregate",
            eval.report.rows.len()
        ),
    }
    Ok(report_path)
}

/// Parses an ablation count list like `1,2,3,4,7`.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    let counts: Vec<usize> = text
        .split(',')
        .map(|t| parse_value("counts", t.trim()))
        .collect::<Result<_>>()?;
    if counts.is_empty() {
        return Err(Error::Config("counts must not be empty".into()));
    }
    for &c in &counts {
        if !(1..=7).contains(&c) {
            return Err(Error::Config(format!("feature count {c} outside 1..=7")));
        }
    }
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != counts.len() {
        return Err(Error::Config(format!("duplicate feature counts in `{text}`")));
    }
    Ok(counts)
}

/// One ablation row: the full pipeline's aggregate at a feature count.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub features: usize,
    pub hs_accuracy: f64,
    pub n_triggered: usize,
    pub n_cells: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
}

/// Trains and evaluates the pipeline once per feature count (same seed
/// and the same train/test split throughout) and writes
/// `<out>/ablation.csv`. Returns the rows in the order given.
pub fn cmd_ablate(config: &RunConfig, counts: &[usize], quiet: bool) -> Result<Vec<AblationRow>> {
    let data = config.data.as_ref().ok_or_else(|| {
        Error::Config("config key `data` is required for ablate".into())
    })?;
    if counts.is_empty() {
        return Err(Error::Config("ablation needs at least one feature count".into()));
    }
    let _lock = OutputLock::acquire(&config.out)?;
    let cells = load_cells(data)?;
    let (train_cells, test_cells) = match &config.test_data {
        Some(p) => (cells, load_cells(p)?),
        None => split_train_test(cells, config.n_train, config.seed)?,
    };
    if test_cells.is_empty() {
        return Err(Error::Data("ablation has no test cells".into()));
    }
    let opts = config.stage_options();

    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        note!(quiet, "ablation: {count} feature(s)");
        let selection = FeatureSelection::first_n(count)?;
        let (hs_model, _) = train_hs(&train_cells, &selection, config.p, &opts)?;
        let decisions: Vec<FpcDecision> = train_cells
            .iter()
            .map(|c| decide_fpc(&hs_model, c, config.trigger_k))
            .collect::<Result<_>>()?;
        let (rul_model, _) = train_rul(&train_cells, &decisions, &selection, &opts)?;
        let eval = evaluate_fleet_detailed(&hs_model, &rul_model, &test_cells, config.trigger_k)?;
        let hs_accuracy = labeled_accuracy(&hs_model, &test_cells)?;
        rows.push(AblationRow {
            features: count,
            hs_accuracy,
            n_triggered: eval.report.n_triggered(),
            n_cells: eval.report.rows.len(),
            mse: eval.report.aggregate.map(|a| a.mse),
            mae: eval.report.aggregate.map(|a| a.mae),
            mape: eval.report.aggregate.and_then(|a| a.mape),
        });
    }

    let table_path = config.out.join("ablation.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&table_path)?);
    writeln!(f, "features,hs_accuracy,n_triggered,n_cells,mse,mae,mape")?;
    for r in &rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.features,
            r.hs_accuracy,
            r.n_triggered,
            r.n_cells,
            opt(r.mse),
            opt(r.mae),
            opt(r.mape)
        )?;
    }
    f.flush()?;
    if !quiet {
        println!("features  hs_acc   triggered  mse        mae        mape");
        for r in &rows {
            let opt =
                |v: Option<f64>| v.map(|x| format!("{x:<10.6}")).unwrap_or_else(|| "-".into());
            println!(
                "{:<9} {:<8.4} {:>2} of {:<5} {} {} {}",
                r.features,
                r.hs_accuracy,
                r.n_triggered,
                r.n_cells,
                opt(r.mse),
                opt(r.mae),
                opt(r.mape)
            );
        }
        println!("table written to {}", table_path.display());
    }
    Ok(rows)
}

/// Renders a checkpoint's contents as `key = value` text.
pub fn describe_checkpoint(path: &Path) -> Result<String> {
    let ckpt = load_checkpoint(path)?;
    let mut s = String::new();
    let w = &mut s;
    let head = match ckpt.spec.head {
        Head::Hs => "hs",
        Head::Rul => "rul",
    };
    writeln!(w, "file = {}", path.display()).unwrap();
    writeln!(w, "head = {head}").unwrap();
    writeln!(w, "n_steps = {}", ckpt.spec.n_steps).unwrap();
    writeln!(w, "step_input = {}", ckpt.spec.step_input).unwrap();
    writeln!(w, "hidden = {}", ckpt.spec.hidden).unwrap();
    writeln!(w, "layers_per_stack = {}", ckpt.spec.layers_per_stack).unwrap();
    writeln!(w, "num_stacks = {}", ckpt.spec.num_stacks).unwrap();
    writeln!(w, "dense_units = {}", ckpt.spec.dense_units).unwrap();
    writeln!(w, "n_params = {}", ckpt.params.len()).unwrap();
    let channels: Vec<&str> = ckpt.selection.channels().iter().map(|c| c.name()).collect();
    writeln!(w, "selection = {}", channels.join(",")).unwrap();
    for (ch, mean, std) in ckpt.stats.entries() {
        writeln!(w, "stats.{}.mean = {mean}", ch.name()).unwrap();
        writeln!(w, "stats.{}.std = {std}", ch.name()).unwrap();
    }
    writeln!(w, "metadata = {}", ckpt.metadata).unwrap();
    Ok(s)
}

pub fn cmd_inspect(path: &Path) -> Result<()> {
    print!("{}", describe_checkpoint(path)?);
    Ok(())
}

/// Two-stage early RUL prediction for battery fleets.
#[derive(Debug, Parser)]
#[command(name = "rul2stage", version, about)]
pub struct Cli {
    /// Flat key = value config file; defaults reproduce the reference setup.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master RNG seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Leading feature channels to use, 1..=7 (overrides the config).
    #[arg(long, global = true)]
    pub features: Option<usize>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fleet under <out>/fleet/.
    Generate,
    /// Train both stages; writes checkpoints, histories, and decisions.
    Train,
    /// Evaluate checkpoints on the test fleet; writes report, curves, plots.
    Evaluate {
        /// HS division checkpoint (default: <out>/hs.ckpt).
        #[arg(long)]
        hs: Option<PathBuf>,
        /// RUL-model checkpoint (default: <out>/rul.ckpt).
        #[arg(long)]
        rul: Option<PathBuf>,
    },
    /// Train + evaluate once per feature count; writes a summary table.
    Ablate {
        /// Comma-separated feature counts, each 1..=7, no duplicates.
        #[arg(long, default_value = "1,2,3,4,7")]
        counts: String,
    },
    /// Print a checkpoint's shape, selection, stats, and metadata.
    Inspect { checkpoint: PathBuf },
}

/// Dispatches a parsed command line. The binary maps the error to its
/// exit code.
pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(features) = cli.features {
        config.features = features;
    }
    config.validate()?;

    match &cli.command {
        Command::Generate => cmd_generate(&config, cli.quiet).map(|_| ()),
        Command::Train => cmd_train(&config, cli.quiet).map(|_| ()),
        Command::Evaluate { hs, rul } => {
            let hs = hs.clone().unwrap_or_else(|| config.out.join("hs.ckpt"));
            let rul = rul.clone().unwrap_or_else(|| config.out.join("rul.ckpt"));
            cmd_evaluate(&config, &hs, &rul, cli.quiet).map(|_| ())
        }
        Command::Ablate { counts } => {
            let counts = parse_counts(counts)?;
            cmd_ablate(&config, &counts, cli.quiet).map(|_| ())
        }
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_mirror_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(
            (c.n_w, c.step, c.p, c.trigger_k),
            (50, 1, 0.10, 5)
        );
        assert_eq!(
            (c.hidden, c.layers_per_stack, c.num_stacks, c.dense_units),
            (50, 4, 2, 128)
        );
        assert_eq!((c.batch_size, c.max_epochs, c.patience), (8, 100, 20));
        assert_eq!((c.lr, c.beta1, c.beta2, c.eps), (0.001, 0.9, 0.99, 1e-8));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_text_overrides_and_rejects_unknowns() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\n\nfeatures = 2\nn_w=40\n  lr = 0.01\ndata = fleet/manifest.txt\n",
        )
        .unwrap();
        assert_eq!(c.features, 2);
        assert_eq!(c.n_w, 40);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.data.as_deref(), Some(Path::new("fleet/manifest.txt")));

        let err = c.apply_text("windows = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
        let err = c.apply_text("n_w flat\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
        let err = c.apply_text("n_w = soon\n").unwrap_err();
        assert!(err.to_string().contains("cannot parse"), "{err}");
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut c = RunConfig::default();
        c.features = 8;
        assert!(matches!(c.validate().unwrap_err(), Error::Config(_)));
        let mut c = RunConfig::default();
        c.p = 0.6;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.trigger_k = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.n_train = 30;
        assert!(c.validate().is_err());
    }

    #[test]
    fn counts_parse_and_reject_duplicates() {
        assert_eq!(parse_counts("1,2,3,4,7").unwrap(), vec![1, 2, 3, 4, 7]);
        assert_eq!(parse_counts("4").unwrap(), vec![4]);
        assert!(parse_counts("4,4").is_err());
        assert!(parse_counts("0,2").is_err());
        assert!(parse_counts("8").is_err());
        assert!(parse_counts("two").is_err());
    }

    #[test]
    fn output_lock_excludes_second_writer_until_released() {
        let dir = tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        let err = OutputLock::acquire(dir.path()).unwrap_err();
        assert!(err.to_string().contains("locked"), "{err}");
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn generate_writes_fleet_and_is_deterministic() {
        let dir = tempdir().unwrap();
        let mut config = RunConfig::default();
        config.out = dir.path().join("a");
        config.n_cells = 3;
        config.n_train = 2;
        config.eol_min = 80;
        config.eol_max = 120;
        let manifest = cmd_generate(&config, true).unwrap();
        let listed = crate::dataio::read_manifest(&manifest).unwrap();
        assert_eq!(listed.len(), 3);
        for f in &listed {
            assert!(f.is_file());
        }

        config.out = dir.path().join("b");
        let manifest_b = cmd_generate(&config, true).unwrap();
        for (fa, fb) in crate::dataio::read_manifest(&manifest)
            .unwrap()
            .iter()
            .zip(crate::dataio::read_manifest(&manifest_b).unwrap().iter())
        {
            assert_eq!(
                std::fs::read(fa).unwrap(),
                std::fs::read(fb).unwrap(),
                "rerun differs for {}",
                fa.display()
            );
        }
    }

    #[test]
    fn generate_rejects_sub_minimum_eol() {
        let dir = tempdir().unwrap();
        let mut config = RunConfig::default();
        config.out = dir.path().to_path_buf();
        config.eol_min = 40;
        config.eol_max = 50;
        assert!(cmd_generate(&config, true).is_err());
        // The failed run must not leave the directory locked.
        assert!(!dir.path().join(".lock").exists());
    }

    #[test]
    fn train_requires_a_data_path() {
        let dir = tempdir().unwrap();
        let mut config = RunConfig::default();
        config.out = dir.path().to_path_buf();
        let err = cmd_train(&config, true).unwrap_err();
        assert!(err.to_string().contains("`data`"), "{err}");
    }

    #[test]
    fn describe_checkpoint_reports_shape_and_stats() {
        use crate::dataio::{compute_normalization, CellHistory, CycleRecord};
        use crate::nn::{init_params, ModelSpec};
        use rand::SeedableRng;

        let records = (1..=80)
            .map(|c| CycleRecord {
                cycle_index: c as u32,
                discharge_capacity: 1.1 - 0.002 * c as f64,
                charge_capacity: 1.11 - 0.002 * c as f64,
                internal_resistance: 0.016 + 1e-5 * c as f64,
                temp_avg: 30.0 + 0.01 * c as f64,
                temp_min: 29.0 + 0.01 * c as f64,
                temp_max: 31.0 + 0.01 * c as f64,
                charge_time: 12.0 + 0.005 * c as f64,
            })
            .collect();
        let cell = CellHistory::new("c1", records).unwrap();
        let selection = FeatureSelection::first_n(2).unwrap();
        let stats = compute_normalization(std::slice::from_ref(&cell), &selection).unwrap();
        let spec = ModelSpec::standard(Head::Hs, 2, 10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = init_params(&spec, &mut rng);
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(
            &Checkpoint {
                spec,
                params,
                selection,
                stats,
                metadata: "stage=hs seed=1".into(),
            },
            &path,
        )
        .unwrap();

        let text = describe_checkpoint(&path).unwrap();
        assert!(text.contains("head = hs"));
        assert!(text.contains("n_steps = 2"));
        assert!(text.contains("selection = discharge_capacity,charge_capacity"));
        assert!(text.contains("stats.discharge_capacity.mean = "));
        assert!(text.contains("metadata = stage=hs seed=1"));
    }

    #[test]
    fn cli_flags_override_config_keys() {
        use clap::Parser;
        let cli = Cli::parse_from([
            "rul2stage",
            "train",
            "--seed",
            "9",
            "--features",
            "2",
            "--out",
            "elsewhere",
            "--quiet",
        ]);
        assert!(cli.quiet);
        let mut config = RunConfig::default();
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(out) = &cli.out {
            config.out = out.clone();
        }
        if let Some(features) = cli.features {
            config.features = features;
        }
        assert_eq!(config.seed, 9);
        assert_eq!(config.features, 2);
        assert_eq!(config.out, PathBuf::from("elsewhere"));
    }
}
