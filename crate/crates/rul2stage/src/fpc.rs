//! Stage 1: train the health-state (HS) division model on auto-labeled
//! windows and locate each cell's First Prediction Cycle (FPC).
//!
//! A cell's FPC is the anchor of the first window opening a run of
//! `trigger_k` consecutive unhealthy classifications. Prediction of the
//! remaining life (stage 2) only makes sense after that point.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::dataio::{
    apply_normalization, compute_normalization, CellHistory, FeatureSelection, NormalizationStats,
};
use crate::error::{Error, Result};
use crate::nn::{
    train, train_with_validation, Head, ModelParams, ModelSpec, LossKind, TrainConfig,
    TrainOutcome, TrainSample,
};
use crate::windows::{assign_hs_labels, healthy_start_limit, make_windows, unhealthy_anchor_start,
    HsLabel, WindowSample};

/// Consecutive unhealthy classifications required to fix the FPC.
pub const DEFAULT_TRIGGER_K: usize = 5;
/// Default labeled fraction at each end of life (Healthy head / Unhealthy tail).
pub const DEFAULT_LABEL_FRACTION: f64 = 0.10;

/// Windowing and architecture knobs shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOptions {
    pub n_w: usize,
    pub step: usize,
    pub hidden: usize,
    pub layers_per_stack: usize,
    pub num_stacks: usize,
    pub dense_units: usize,
    pub train: TrainConfig,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions {
            n_w: crate::windows::DEFAULT_WINDOW,
            step: crate::windows::DEFAULT_STEP,
            hidden: 50,
            layers_per_stack: 4,
            num_stacks: 2,
            dense_units: 128,
            train: TrainConfig::default(),
        }
    }
}

impl StageOptions {
    /// Scaled-down architecture for quick tests and demos.
    pub fn small() -> Self {
        StageOptions {
            hidden: 8,
            layers_per_stack: 1,
            num_stacks: 1,
            dense_units: 16,
            ..Default::default()
        }
    }

    pub fn model_spec(&self, head: Head, n_features: usize) -> ModelSpec {
        ModelSpec {
            head,
            n_steps: n_features,
            step_input: self.n_w,
            hidden: self.hidden,
            layers_per_stack: self.layers_per_stack,
            num_stacks: self.num_stacks,
            dense_units: self.dense_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_w == 0 || self.step == 0 {
            return Err(Error::Config("window size and step must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// Trained stage-1 classifier plus everything needed to run it on raw cells.
#[derive(Debug, Clone)]
pub struct HsModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub selection: FeatureSelection,
    pub stats: NormalizationStats,
    /// Labeled fraction the model was trained with.
    pub p: f64,
    /// Window stride used at training time and for FPC scans.
    pub step: usize,
}

impl HsModel {
    pub fn n_w(&self) -> usize {
        self.spec.step_input
    }
}

/// Hard binary classification of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsClass {
    Healthy,
    Unhealthy,
}

/// Where (and whether) stage 2 may start for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcDecision {
    pub cell_id: String,
    /// Anchor cycle of the first window of the triggering run, when any.
    pub fpc_cycle: Option<usize>,
    pub triggered: bool,
    /// (anchor_cycle, unhealthy probability) for every scanned window.
    pub trace: Vec<(usize, f64)>,
}

/// RNG stream for the cell-level validation split; distinct from the
/// training engine's internal streams, which all derive from the same seed.
const CELL_SPLIT_STREAM: u64 = 17;

/// Splits `n` cells into (train, validation) index sets deterministically,
/// reserving `fraction` of them (at least one) for validation when there
/// are at least two. Shared by both training stages.
pub(crate) fn split_cell_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CELL_SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * fraction).floor() as usize).clamp(1, n - 1);
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    (train, val)
}

/// Cuts one normalized cell into labeled HS training samples; unlabeled
/// windows are dropped.
fn labeled_samples(
    cell: &CellHistory,
    selection: &FeatureSelection,
    stats: &NormalizationStats,
    p: f64,
    n_w: usize,
    step: usize,
) -> Result<Vec<TrainSample>> {
    let channels = apply_normalization(cell, stats, selection)?;
    let windows = make_windows(&channels, n_w, step)?;
    let labels = assign_hs_labels(&windows, cell.eol(), p)?;
    Ok(windows
        .into_iter()
        .zip(labels)
        .filter_map(|(w, l)| {
            l.target().map(|target| TrainSample {
                input: w.features,
                target,
            })
        })
        .collect())
}

/// Trains the HS division model on every label-feasible window of the
/// training cells. Validation for early stopping is carved out cell-wise
/// (`train.validation_fraction` of cells) so windows from one cell never
/// straddle the split; a single-cell corpus falls back to a window split.
pub fn train_hs(
    cells: &[CellHistory],
    selection: &FeatureSelection,
    p: f64,
    opts: &StageOptions,
) -> Result<(HsModel, TrainOutcome)> {
    opts.validate()?;
    if cells.is_empty() {
        return Err(Error::Data("stage 1: empty training set".into()));
    }
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::Config(format!("p must be in (0, 0.5], got {p}")));
    }

    // Fail fast, naming every cell that cannot be labeled at this window
    // size, before any training compute.
    let infeasible: Vec<String> = cells
        .iter()
        .filter(|c| {
            healthy_start_limit(c.eol(), p) + opts.n_w - 1 >= unhealthy_anchor_start(c.eol(), p)
                || c.eol() < opts.n_w
        })
        .map(|c| c.cell_id().to_string())
        .collect();
    if !infeasible.is_empty() {
        return Err(Error::Data(format!(
            "stage 1: labeling infeasible for window {} on cells: {}",
            opts.n_w,
            infeasible.join(", ")
        )));
    }

    let stats = compute_normalization(cells, selection)?;
    let spec = opts.model_spec(Head::Hs, selection.len());

    let collect = |subset: &[&CellHistory]| -> Result<Vec<TrainSample>> {
        let nested: Vec<Vec<TrainSample>> = subset
            .par_iter()
            .map(|c| labeled_samples(c, selection, &stats, p, opts.n_w, opts.step))
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    };

    let outcome = if cells.len() == 1 {
        let samples = collect(&[&cells[0]])?;
        train(&spec, &samples, LossKind::Bce, &opts.train)?
    } else {
        let (train_idx, val_idx) =
            split_cell_indices(cells.len(), opts.train.validation_fraction, opts.train.seed);
        let pick = |idx: &[usize]| idx.iter().map(|&i| &cells[i]).collect::<Vec<_>>();
        let train_samples = collect(&pick(&train_idx))?;
        let val_samples = collect(&pick(&val_idx))?;
        train_with_validation(&spec, &train_samples, &val_samples, LossKind::Bce, &opts.train)?
    };

    let model = HsModel {
        spec,
        params: outcome.params.clone(),
        selection: selection.clone(),
        stats,
        p,
        step: opts.step,
    };
    Ok((model, outcome))
}

/// Classifies one normalized window: unhealthy iff probability > 0.5, so an
/// exact tie stays healthy (conservative: it can only delay the FPC).
pub fn classify(model: &HsModel, window: &WindowSample) -> Result<(HsClass, f64)> {
    if window.features.rows() != model.selection.len() {
        return Err(Error::Shape(format!(
            "window carries {} channels, model was trained on {}",
            window.features.rows(),
            model.selection.len()
        )));
    }
    let (prob, _) = model.spec.forward(&model.params, &window.features)?;
    let class = if prob > 0.5 {
        HsClass::Unhealthy
    } else {
        HsClass::Healthy
    };
    Ok((class, prob))
}

/// Start index of the first run of `k` consecutive `true` values.
pub fn first_run_of(flags: &[bool], k: usize) -> Option<usize> {
    if k == 0 {
        return Some(0);
    }
    let mut run = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            run += 1;
            if run == k {
                return Some(i + 1 - k);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Pure trigger rule over an already-computed probability trace.
/// `anchors` and `probs` are parallel, in scan order.
pub fn decide_from_trace(
    cell_id: &str,
    eol: usize,
    anchors: &[usize],
    probs: &[f64],
    k: usize,
) -> FpcDecision {
    let flags: Vec<bool> = probs.iter().map(|p| *p > 0.5).collect();
    let trace: Vec<(usize, f64)> = anchors.iter().copied().zip(probs.iter().copied()).collect();
    match first_run_of(&flags, k) {
        // A run starting at the very last anchor (k = 1 only) would put the
        // FPC at the EOL itself, leaving no life to predict; report it as
        // untriggered rather than emit an out-of-contract decision.
        Some(idx) if anchors[idx] < eol => FpcDecision {
            cell_id: cell_id.to_string(),
            fpc_cycle: Some(anchors[idx]),
            triggered: true,
            trace,
        },
        _ => FpcDecision {
            cell_id: cell_id.to_string(),
            fpc_cycle: None,
            triggered: false,
            trace,
        },
    }
}

/// Scans a cell's windows in anchor order and applies the k-consecutive
/// trigger to the hard classifications.
pub fn decide_fpc(model: &HsModel, cell: &CellHistory, k: usize) -> Result<FpcDecision> {
    if k == 0 {
        return Err(Error::Config("trigger length k must be >= 1".into()));
    }
    let channels = apply_normalization(cell, &model.stats, &model.selection)?;
    let windows = make_windows(&channels, model.n_w(), model.step)?;
    if windows.len() < k {
        return Err(Error::Data(format!(
            "cell {}: only {} windows, trigger needs {k}",
            cell.cell_id(),
            windows.len()
        )));
    }
    let probs: Vec<f64> = windows
        .par_iter()
        .map(|w| classify(model, w).map(|(_, p)| p))
        .collect::<Result<_>>()?;
    let anchors: Vec<usize> = windows.iter().map(|w| w.anchor_cycle).collect();
    Ok(decide_from_trace(cell.cell_id(), cell.eol(), &anchors, &probs, k))
}

/// Fraction of labeled windows the model classifies correctly, pooled over
/// the given cells (the stage-1 quality number reported on held-out cells).
pub fn labeled_accuracy(model: &HsModel, cells: &[CellHistory]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for cell in cells {
        let channels = apply_normalization(cell, &model.stats, &model.selection)?;
        let windows = make_windows(&channels, model.n_w(), model.step)?;
        let labels = assign_hs_labels(&windows, cell.eol(), model.p)?;
        let verdicts: Vec<Option<bool>> = windows
            .par_iter()
            .zip(&labels)
            .map(|(w, label)| {
                Ok(match label {
                    HsLabel::Unlabeled => None,
                    HsLabel::Healthy => Some(classify(model, w)?.0 == HsClass::Healthy),
                    HsLabel::Unhealthy => Some(classify(model, w)?.0 == HsClass::Unhealthy),
                })
            })
            .collect::<Result<_>>()?;
        for v in verdicts.into_iter().flatten() {
            total += 1;
            correct += v as usize;
        }
    }
    if total == 0 {
        return Err(Error::Data("no labeled windows to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Writes decisions as CSV: `cell_id,fpc_cycle,triggered`; untriggered
/// cells leave the cycle column empty.
pub fn write_decisions_csv(decisions: &[FpcDecision], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "cell_id,fpc_cycle,triggered")?;
    for d in decisions {
        let cycle = d.fpc_cycle.map(|c| c.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{}", d.cell_id, cycle, d.triggered)?;
    }
    f.flush()?;
    Ok(())
}

/// Writes one cell's probability trace as CSV: `anchor_cycle,probability`.
pub fn write_trace_csv(decision: &FpcDecision, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "anchor_cycle,probability")?;
    for (anchor, prob) in &decision.trace {
        writeln!(f, "{anchor},{prob:.6}")?;
    }
    f.flush()?;
    Ok(())
}
