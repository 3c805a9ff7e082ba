//! Fleet evaluation: per-cell error metrics over predicted RUL curves,
//! their unweighted aggregate, report and plot emission, and a
//! conventional capacity-forecasting baseline for comparison.
//!
//! The baseline mirrors the classical setup: take the first `q` fraction
//! of a cell's discharge-capacity series, fit a small sequence model to
//! its cycle-to-cycle decrements, and roll the model forward recursively
//! over the remaining cycles.

use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::dataio::{CellHistory, Channel};
use crate::error::{Error, Result};
use crate::fpc::{decide_fpc, FpcDecision, HsModel};
use crate::nn::{train, Head, LossKind, Matrix, ModelSpec, TrainConfig, TrainSample};
use crate::rulpred::{predict_curve, RulCurve, RulModel};

/// Targets below this floor are excluded from MAPE (the relative error is
/// undefined at the end of life, where the true fraction is exactly 0).
pub const DEFAULT_MAPE_FLOOR: f64 = 0.01;

/// Fraction of each cell's life given to the baseline forecaster as input.
pub const DEFAULT_BASELINE_FRACTION: f64 = 0.4;

/// Error metrics of one predicted curve against its targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean absolute percentage error over targets at or above the floor;
    /// absent when no target clears it.
    pub mape: Option<f64>,
    /// Points contributing to MSE/MAE (all target-bearing points).
    pub n_points: usize,
}

/// Computes MSE and MAE over every target-bearing point of a curve, and
/// MAPE over the points whose target is at least `mape_floor`.
pub fn compute_metrics(curve: &RulCurve, mape_floor: f64) -> Result<CurveMetrics> {
    let pairs: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| p.target.map(|t| (p.prediction, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "cell {}: curve has no target-bearing points to score",
            curve.cell_id
        )));
    }
    let n = pairs.len() as f64;
    let mse = pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mae = pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let floored: Vec<f64> = pairs
        .iter()
        .filter(|(_, t)| *t >= mape_floor)
        .map(|(p, t)| (p - t).abs() / t)
        .collect();
    let mape = if floored.is_empty() {
        None
    } else {
        Some(floored.iter().sum::<f64>() / floored.len() as f64)
    };
    Ok(CurveMetrics {
        mse,
        mae,
        mape,
        n_points: pairs.len(),
    })
}

/// One evaluated cell. Untriggered cells carry no cycle or metrics.
#[derive(Debug, Clone)]
pub struct CellMetrics {
    pub cell_id: String,
    pub triggered: bool,
    pub fpc_cycle: Option<usize>,
    pub metrics: Option<CurveMetrics>,
}

/// Per-cell metrics plus their fleet aggregate.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// One row per evaluated cell, ordered by cell id.
    pub rows: Vec<CellMetrics>,
    /// Unweighted mean over triggered cells; absent when none triggered.
    pub aggregate: Option<CurveMetrics>,
}

impl MetricsReport {
    pub fn n_triggered(&self) -> usize {
        self.rows.iter().filter(|r| r.triggered).count()
    }

    pub fn untriggered_ids(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| !r.triggered)
            .map(|r| r.cell_id.as_str())
            .collect()
    }
}

/// Unweighted mean of per-cell metrics over triggered rows. Rows are
/// folded in cell-id order so the result is independent of input order;
/// `n_points` aggregates as the total number of evaluated points. The MAPE
/// mean runs over the triggered cells that report one.
pub fn aggregate_metrics(rows: &[CellMetrics]) -> Option<CurveMetrics> {
    let mut triggered: Vec<&CellMetrics> = rows
        .iter()
        .filter(|r| r.triggered && r.metrics.is_some())
        .collect();
    if triggered.is_empty() {
        return None;
    }
    triggered.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let n = triggered.len() as f64;
    let ms: Vec<CurveMetrics> = triggered.iter().map(|r| r.metrics.unwrap()).collect();
    let mapes: Vec<f64> = ms.iter().filter_map(|m| m.mape).collect();
    Some(CurveMetrics {
        mse: ms.iter().map(|m| m.mse).sum::<f64>() / n,
        mae: ms.iter().map(|m| m.mae).sum::<f64>() / n,
        mape: if mapes.is_empty() {
            None
        } else {
            Some(mapes.iter().sum::<f64>() / mapes.len() as f64)
        },
        n_points: ms.iter().map(|m| m.n_points).sum(),
    })
}

/// Full per-cell artifacts of a fleet evaluation, aligned with
/// `report.rows` by index.
#[derive(Debug, Clone)]
pub struct FleetEvaluation {
    pub report: MetricsReport,
    pub decisions: Vec<FpcDecision>,
    /// Predicted curve per row; `None` for untriggered cells.
    pub curves: Vec<Option<RulCurve>>,
}

/// Runs the full two-stage pipeline over a test fleet: division trigger,
/// post-FPC curve prediction, per-cell metrics, aggregate. Both models
/// must have been trained on the same features and normalization.
pub fn evaluate_fleet_detailed(
    hs: &HsModel,
    rul: &RulModel,
    cells: &[CellHistory],
    trigger_k: usize,
) -> Result<FleetEvaluation> {
    if hs.selection != rul.selection {
        return Err(Error::Config(
            "stage models disagree on the feature selection".into(),
        ));
    }
    if hs.stats != rul.stats {
        return Err(Error::Config(
            "stage models disagree on normalization statistics".into(),
        ));
    }
    if cells.is_empty() {
        return Err(Error::Data("evaluation fleet is empty".into()));
    }
    let mut evaluated: Vec<(CellMetrics, FpcDecision, Option<RulCurve>)> = cells
        .par_iter()
        .map(|cell| {
            let decision = decide_fpc(hs, cell, trigger_k)?;
            let (curve, metrics) = match decision.fpc_cycle {
                Some(fpc) => {
                    let curve = predict_curve(rul, cell, fpc)?;
                    let metrics = compute_metrics(&curve, DEFAULT_MAPE_FLOOR)?;
                    (Some(curve), Some(metrics))
                }
                None => (None, None),
            };
            let row = CellMetrics {
                cell_id: cell.cell_id().to_string(),
                triggered: decision.triggered,
                fpc_cycle: decision.fpc_cycle,
                metrics,
            };
            Ok((row, decision, curve))
        })
        .collect::<Result<_>>()?;
    evaluated.sort_by(|a, b| a.0.cell_id.cmp(&b.0.cell_id));

    let mut rows = Vec::with_capacity(evaluated.len());
    let mut decisions = Vec::with_capacity(evaluated.len());
    let mut curves = Vec::with_capacity(evaluated.len());
    for (row, decision, curve) in evaluated {
        rows.push(row);
        decisions.push(decision);
        curves.push(curve);
    }
    let aggregate = aggregate_metrics(&rows);
    Ok(FleetEvaluation {
        report: MetricsReport { rows, aggregate },
        decisions,
        curves,
    })
}

/// As `evaluate_fleet_detailed`, returning only the metrics report.
pub fn evaluate_fleet(
    hs: &HsModel,
    rul: &RulModel,
    cells: &[CellHistory],
    trigger_k: usize,
) -> Result<MetricsReport> {
    Ok(evaluate_fleet_detailed(hs, rul, cells, trigger_k)?.report)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the report as machine-parseable `key = value` lines. Floats are
/// printed with full round-trip precision.
pub fn write_report_text(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# fleet evaluation report")?;
    writeln!(f, "# aggregate = unweighted mean over triggered cells")?;
    writeln!(f, "n_cells = {}", report.rows.len())?;
    writeln!(f, "n_triggered = {}", report.n_triggered())?;
    let untriggered = report.untriggered_ids();
    writeln!(f, "n_untriggered = {}", untriggered.len())?;
    writeln!(f, "untriggered_ids = {}", untriggered.join(","))?;
    match &report.aggregate {
        Some(a) => {
            writeln!(f, "aggregate.mse = {}", a.mse)?;
            writeln!(f, "aggregate.mae = {}", a.mae)?;
            writeln!(f, "aggregate.mape = {}", fmt_opt(a.mape))?;
            writeln!(f, "aggregate.n_points = {}", a.n_points)?;
        }
        None => writeln!(f, "aggregate = absent")?,
    }
    for r in &report.rows {
        let id = &r.cell_id;
        writeln!(f, "cell.{id}.triggered = {}", r.triggered)?;
        writeln!(f, "cell.{id}.fpc_cycle = {}", fmt_opt(r.fpc_cycle))?;
        if let Some(m) = &r.metrics {
            writeln!(f, "cell.{id}.mse = {}", m.mse)?;
            writeln!(f, "cell.{id}.mae = {}", m.mae)?;
            writeln!(f, "cell.{id}.mape = {}", fmt_opt(m.mape))?;
            writeln!(f, "cell.{id}.n_points = {}", m.n_points)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Writes the report as CSV: `cell_id,triggered,fpc_cycle,n_points,mse,mae,mape`.
/// Missing values (untriggered cells, absent MAPE) leave the field empty.
pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "cell_id,triggered,fpc_cycle,n_points,mse,mae,mape")?;
    for r in &report.rows {
        let (n_points, mse, mae, mape) = match &r.metrics {
            Some(m) => (
                m.n_points.to_string(),
                m.mse.to_string(),
                m.mae.to_string(),
                fmt_opt(m.mape),
            ),
            None => Default::default(),
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.cell_id,
            r.triggered,
            fmt_opt(r.fpc_cycle),
            n_points,
            mse,
            mae,
            mape
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Renders one curve as a static SVG line chart: prediction in blue and,
/// where present, the target in dashed gray, over the anchor cycle.
pub fn write_curve_svg(curve: &RulCurve, path: &Path) -> Result<()> {
    if curve.points.is_empty() {
        return Err(Error::Data(format!(
            "cell {}: cannot plot an empty curve",
            curve.cell_id
        )));
    }
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 620.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 360.0;
    let x0 = curve.points.first().unwrap().anchor_cycle as f64;
    let x1 = (curve.points.last().unwrap().anchor_cycle as f64).max(x0 + 1.0);
    let y1 = curve
        .points
        .iter()
        .flat_map(|p| [Some(p.prediction), p.target])
        .flatten()
        .fold(1.0_f64, f64::max);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (RIGHT - LEFT);
    let sy = |y: f64| BOTTOM - y / y1 * (BOTTOM - TOP);
    let pred_pts: String = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2} ", sx(p.anchor_cycle as f64), sy(p.prediction)))
        .collect();
    let tgt_pts: String = curve
        .points
        .iter()
        .filter_map(|p| p.target.map(|t| (p.anchor_cycle as f64, t)))
        .map(|(x, y)| format!("{:.2},{:.2} ", sx(x), sy(y)))
        .collect();

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="400" viewBox="0 0 640 400">"#
    )?;
    writeln!(f, r#"<rect width="640" height="400" fill="white"/>"#)?;
    writeln!(
        f,
        r#"<text x="320" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{} — predicted remaining-life fraction</text>"#,
        curve.cell_id
    )?;
    writeln!(
        f,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/>"#
    )?;
    writeln!(
        f,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    )?;
    for (x, label) in [(x0, x0), (x1, x1)] {
        writeln!(
            f,
            r#"<text x="{:.2}" y="378" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            sx(x),
            label
        )?;
    }
    for y in [0.0, y1] {
        writeln!(
            f,
            r#"<text x="52" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{:.2}</text>"#,
            sy(y) + 4.0,
            y
        )?;
    }
    writeln!(
        f,
        r#"<text x="320" y="396" text-anchor="middle" font-family="sans-serif" font-size="12">anchor cycle</text>"#
    )?;
    if !tgt_pts.is_empty() {
        writeln!(
            f,
            r##"<polyline points="{}" fill="none" stroke="#888888" stroke-dasharray="5,4" stroke-width="1.5"/>"##,
            tgt_pts.trim_end()
        )?;
    }
    writeln!(
        f,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        pred_pts.trim_end()
    )?;
    writeln!(
        f,
        r##"<text x="{RIGHT}" y="{TOP}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#1f77b4">prediction</text>"##
    )?;
    if !tgt_pts.is_empty() {
        writeln!(
            f,
            r##"<text x="{RIGHT}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#888888">target</text>"##,
            TOP + 14.0
        )?;
    }
    writeln!(f, "</svg>")?;
    f.flush()?;
    Ok(())
}

/// How one cell's history is cut for the baseline: cycles `1..=input_end`
/// feed the forecaster, the rest are ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSplit {
    pub cell_id: String,
    pub q: f64,
    pub input_end: usize,
    pub eol: usize,
}

impl BaselineSplit {
    pub fn input_len(&self) -> usize {
        self.input_end
    }

    pub fn target_len(&self) -> usize {
        self.eol - self.input_end
    }
}

/// Cuts a cell at `floor(q * eol)` cycles. The input segment must be at
/// least `min_input` cycles long (conventionally the window length, so the
/// comparison is not easier than the two-stage setup).
pub fn baseline_split(cell: &CellHistory, q: f64, min_input: usize) -> Result<BaselineSplit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!(
            "baseline fraction q must be in (0, 1), got {q}"
        )));
    }
    // Slack keeps exact products like 0.4 * 1000 from landing below the
    // integer they represent.
    let input_end = (q * cell.eol() as f64 + 1e-9).floor() as usize;
    if input_end < min_input {
        return Err(Error::Data(format!(
            "cell {}: baseline input of {input_end} cycles is shorter than the required {min_input}",
            cell.cell_id()
        )));
    }
    Ok(BaselineSplit {
        cell_id: cell.cell_id().to_string(),
        q,
        input_end,
        eol: cell.eol(),
    })
}

/// Baseline forecaster shape and training knobs. The defaults are small:
/// the baseline sees one scalar per step, so the two-stage dimensions
/// would be badly oversized.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// Lagged capacity decrements fed per prediction.
    pub n_in: usize,
    pub hidden: usize,
    pub layers_per_stack: usize,
    pub num_stacks: usize,
    pub dense_units: usize,
    pub train: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let mut train = TrainConfig::default();
        train.max_epochs = 300;
        train.patience = 40;
        // One scalar per step makes the loss surface mild; a faster rate
        // converges in far fewer epochs without hurting stability.
        train.adam.lr = 0.01;
        BaselineConfig {
            n_in: 20,
            hidden: 16,
            layers_per_stack: 1,
            num_stacks: 1,
            dense_units: 16,
            train,
        }
    }
}

impl BaselineConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            head: Head::Rul,
            n_steps: self.n_in,
            step_input: 1,
            hidden: self.hidden,
            layers_per_stack: self.layers_per_stack,
            num_stacks: self.num_stacks,
            dense_units: self.dense_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 {
            return Err(Error::Config("baseline needs at least one lag".into()));
        }
        self.model_spec().validate()?;
        self.train.validate()
    }
}

/// Per-cycle discharge-capacity forecast over a cell's target segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineForecast {
    pub cell_id: String,
    pub cycles: Vec<usize>,
    pub predictions: Vec<f64>,
}

impl BaselineForecast {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// Mean absolute error of a forecast against the cell's true capacities,
/// in the capacity's own unit.
pub fn forecast_mae(cell: &CellHistory, forecast: &BaselineForecast) -> Result<f64> {
    if forecast.is_empty() {
        return Err(Error::Data("empty forecast".into()));
    }
    let caps = cell.channel_values(Channel::DischargeCapacity);
    let mut total = 0.0;
    for (&cycle, &pred) in forecast.cycles.iter().zip(&forecast.predictions) {
        if cycle == 0 || cycle > caps.len() {
            return Err(Error::Data(format!(
                "forecast cycle {cycle} outside cell {}",
                cell.cell_id()
            )));
        }
        total += (pred - caps[cycle - 1]).abs();
    }
    Ok(total / forecast.len() as f64)
}

/// Trains a small sequence model on the input segment's cycle-to-cycle
/// capacity decrements and rolls it forward recursively over the target
/// segment.
///
/// Decrements are scaled by their mean magnitude so the learning problem
/// is unit-free; the rectified head output is the predicted next scaled
/// decrement, which can only move the forecast downward (capacity fade).
pub fn baseline_forecast(
    cell: &CellHistory,
    split: &BaselineSplit,
    config: &BaselineConfig,
) -> Result<BaselineForecast> {
    config.validate()?;
    if split.cell_id != cell.cell_id() || split.eol != cell.eol() {
        return Err(Error::Data(format!(
            "split belongs to cell {} at eol {}, not {} at eol {}",
            split.cell_id,
            split.eol,
            cell.cell_id(),
            cell.eol()
        )));
    }
    let caps = cell.channel_values(Channel::DischargeCapacity);
    let m = split.input_end;
    let n_samples = (m - 1).saturating_sub(config.n_in);
    if n_samples < 2 {
        return Err(Error::Data(format!(
            "cell {}: {m} input cycles cannot form two training samples of {} lags",
            cell.cell_id(),
            config.n_in
        )));
    }

    let diffs: Vec<f64> = (0..m - 1).map(|i| caps[i] - caps[i + 1]).collect();
    let mean_mag = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    // A flat series would divide by ~0; any positive scale works since the
    // decrements are then ~0 anyway.
    let scale = if mean_mag <= 1e-12 { 1.0 } else { mean_mag };
    let scaled: Vec<f64> = diffs.iter().map(|d| d / scale).collect();

    let samples: Vec<TrainSample> = (config.n_in..scaled.len())
        .map(|t| {
            Ok(TrainSample {
                input: Matrix::from_vec(config.n_in, 1, scaled[t - config.n_in..t].to_vec())?,
                target: scaled[t].max(0.0),
            })
        })
        .collect::<Result<_>>()?;

    let spec = config.model_spec();
    let outcome = train(&spec, &samples, LossKind::Mse, &config.train)?;

    let mut state: Vec<f64> = scaled[scaled.len() - config.n_in..].to_vec();
    let mut level = caps[m - 1];
    let mut cycles = Vec::with_capacity(split.target_len());
    let mut predictions = Vec::with_capacity(split.target_len());
    for cycle in m + 1..=split.eol {
        let input = Matrix::from_vec(config.n_in, 1, state.clone())?;
        let (step, _) = spec.forward(&outcome.params, &input)?;
        level -= scale * step;
        cycles.push(cycle);
        predictions.push(level);
        state.remove(0);
        state.push(step);
    }
    Ok(BaselineForecast {
        cell_id: cell.cell_id().to_string(),
        cycles,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CellHistory, CycleRecord, FeatureSelection};
    use crate::fpc::{train_hs, StageOptions};
    use crate::rulpred::{train_rul, CurvePoint};
    use crate::synthgen::{generate_fleet, FleetSpec};
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn curve_from(preds: &[f64], targets: &[Option<f64>]) -> RulCurve {
        RulCurve {
            cell_id: "c".into(),
            fpc_cycle: 100,
            points: preds
                .iter()
                .zip(targets)
                .enumerate()
                .map(|(i, (&p, &t))| CurvePoint {
                    anchor_cycle: 100 + i,
                    prediction: p,
                    raw: p,
                    target: t,
                })
                .collect(),
        }
    }

    fn capacity_cell(id: &str, eol: usize, cap: impl Fn(usize) -> f64) -> CellHistory {
        let records = (1..=eol)
            .map(|c| CycleRecord {
                cycle_index: c as u32,
                discharge_capacity: cap(c),
                charge_capacity: cap(c) * 1.01,
                internal_resistance: 0.016 + 1e-5 * c as f64,
                temp_avg: 30.0 + 0.01 * c as f64,
                temp_min: 29.0 + 0.01 * c as f64,
                temp_max: 31.0 + 0.01 * c as f64,
                charge_time: 12.0 + 0.005 * c as f64,
            })
            .collect();
        CellHistory::new(id, records).unwrap()
    }

    #[test]
    fn worked_metric_example() {
        let curve = curve_from(
            &[0.9, 0.5, 0.2],
            &[Some(1.0), Some(0.5), Some(0.0)],
        );
        let m = compute_metrics(&curve, DEFAULT_MAPE_FLOOR).unwrap();
        assert!((m.mse - 0.05 / 3.0).abs() < 1e-12, "mse {}", m.mse);
        assert!((m.mae - 0.1).abs() < 1e-12, "mae {}", m.mae);
        // Only the targets 1.0 and 0.5 clear the floor; 0.0 is excluded.
        assert!((m.mape.unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(m.n_points, 3);
    }

    #[test]
    fn identical_vectors_score_zero() {
        let curve = curve_from(&[0.8, 0.4, 0.1], &[Some(0.8), Some(0.4), Some(0.1)]);
        let m = compute_metrics(&curve, DEFAULT_MAPE_FLOOR).unwrap();
        assert_eq!((m.mse, m.mae, m.mape), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn no_targets_is_an_error_and_subfloor_targets_drop_mape() {
        let curve = curve_from(&[0.5, 0.5], &[None, None]);
        assert!(compute_metrics(&curve, DEFAULT_MAPE_FLOOR).is_err());

        let curve = curve_from(&[0.5, 0.5], &[Some(0.005), Some(0.001)]);
        let m = compute_metrics(&curve, DEFAULT_MAPE_FLOOR).unwrap();
        assert!(m.mape.is_none());
        assert!(m.mse > 0.0 && m.mae > 0.0);
        assert_eq!(m.n_points, 2);
    }

    proptest! {
        /// Brute-force re-derivation of all three metrics on random curves.
        #[test]
        fn metrics_match_bruteforce(
            pairs in prop::collection::vec(
                (0.0..1.5f64, prop::option::weighted(0.8, 0.0..1.2f64)),
                1..40,
            )
        ) {
            let preds: Vec<f64> = pairs.iter().map(|(p, _)| *p).collect();
            let targets: Vec<Option<f64>> = pairs.iter().map(|(_, t)| *t).collect();
            prop_assume!(targets.iter().any(|t| t.is_some()));
            let curve = curve_from(&preds, &targets);
            let m = compute_metrics(&curve, 0.01).unwrap();

            let mut se = 0.0;
            let mut ae = 0.0;
            let mut n = 0usize;
            let mut pe = 0.0;
            let mut np = 0usize;
            for (p, t) in &pairs {
                if let Some(t) = t {
                    se += (p - t) * (p - t);
                    ae += (p - t).abs();
                    n += 1;
                    if *t >= 0.01 {
                        pe += (p - t).abs() / t;
                        np += 1;
                    }
                }
            }
            prop_assert!((m.mse - se / n as f64).abs() <= 1e-12);
            prop_assert!((m.mae - ae / n as f64).abs() <= 1e-12);
            prop_assert_eq!(m.n_points, n);
            match m.mape {
                Some(v) => prop_assert!((v - pe / np as f64).abs() <= 1e-12),
                None => prop_assert_eq!(np, 0),
            }
        }
    }

    #[test]
    fn equal_absolute_errors_make_mse_the_square_of_mae() {
        // Error magnitude 0.5 everywhere: 0.25 and 0.5 are exact in binary,
        // so the identity holds bit-for-bit.
        let curve = curve_from(
            &[1.0, 0.0, 0.9, 0.1, 0.6],
            &[Some(0.5), Some(0.5), Some(0.4), Some(0.6), Some(1.1)],
        );
        let m = compute_metrics(&curve, DEFAULT_MAPE_FLOOR).unwrap();
        assert_eq!(m.mae, 0.5);
        assert_eq!(m.mse, 0.25);
        assert_eq!(m.mse, m.mae * m.mae);
    }

    fn row(id: &str, triggered: bool, mse: f64, mae: f64, mape: Option<f64>) -> CellMetrics {
        CellMetrics {
            cell_id: id.into(),
            triggered,
            fpc_cycle: triggered.then_some(100),
            metrics: triggered.then_some(CurveMetrics {
                mse,
                mae,
                mape,
                n_points: 10,
            }),
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_skips_untriggered() {
        let rows = vec![
            row("c3", true, 0.01, 0.08, Some(0.2)),
            row("c1", true, 0.03, 0.12, None),
            row("c2", false, 0.0, 0.0, None),
            row("c4", true, 0.02, 0.10, Some(0.4)),
        ];
        let a = aggregate_metrics(&rows).unwrap();
        assert!((a.mse - 0.02).abs() < 1e-15);
        assert!((a.mae - 0.10).abs() < 1e-15);
        // MAPE averages only the cells that report one.
        assert!((a.mape.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(a.n_points, 30);

        let mut shuffled = rows.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        let b = aggregate_metrics(&shuffled).unwrap();
        assert_eq!(a.mse.to_bits(), b.mse.to_bits());
        assert_eq!(a.mae.to_bits(), b.mae.to_bits());
        assert_eq!(a.mape.unwrap().to_bits(), b.mape.unwrap().to_bits());

        assert!(aggregate_metrics(&[row("c", false, 0.0, 0.0, None)]).is_none());
    }

    fn quick_options(seed: u64, epochs: usize) -> StageOptions {
        let mut opts = StageOptions::small();
        opts.train.seed = seed;
        opts.train.max_epochs = epochs;
        opts
    }

    #[test]
    fn fleet_evaluation_produces_one_sorted_row_per_cell() {
        let cells = generate_fleet(&FleetSpec::desk_default(5, 170, 230, 77)).unwrap();
        let selection = FeatureSelection::first_n(2).unwrap();
        let opts = quick_options(9, 25);
        let (hs, _) = train_hs(&cells, &selection, 0.10, &opts).unwrap();
        let decisions: Vec<FpcDecision> = cells
            .iter()
            .map(|c| FpcDecision {
                cell_id: c.cell_id().to_string(),
                fpc_cycle: Some(c.eol() * 6 / 10),
                triggered: true,
                trace: vec![],
            })
            .collect();
        let (rul, _) = train_rul(&cells, &decisions, &selection, &opts).unwrap();

        let eval = evaluate_fleet_detailed(&hs, &rul, &cells, 5).unwrap();
        let report = &eval.report;
        assert_eq!(report.rows.len(), cells.len());
        for pair in report.rows.windows(2) {
            assert!(pair[0].cell_id < pair[1].cell_id);
        }
        assert_eq!(
            report.n_triggered() + report.untriggered_ids().len(),
            cells.len()
        );
        for (row, curve) in report.rows.iter().zip(&eval.curves) {
            assert_eq!(row.triggered, curve.is_some());
            if let Some(m) = &row.metrics {
                assert!(m.mse.is_finite() && m.mae.is_finite());
            }
        }
        if report.n_triggered() > 0 {
            assert!(report.aggregate.is_some());
        }
        assert_eq!(eval.decisions.len(), cells.len());
    }

    #[test]
    fn mismatched_stage_models_are_rejected() {
        let cells = generate_fleet(&FleetSpec::desk_default(3, 170, 230, 78)).unwrap();
        let sel1 = FeatureSelection::first_n(1).unwrap();
        let sel2 = FeatureSelection::first_n(2).unwrap();
        let opts = quick_options(3, 3);
        let (hs, _) = train_hs(&cells, &sel1, 0.10, &opts).unwrap();
        let decisions: Vec<FpcDecision> = cells
            .iter()
            .map(|c| FpcDecision {
                cell_id: c.cell_id().to_string(),
                fpc_cycle: Some(c.eol() * 6 / 10),
                triggered: true,
                trace: vec![],
            })
            .collect();
        let (rul, _) = train_rul(&cells, &decisions, &sel2, &opts).unwrap();
        let err = evaluate_fleet(&hs, &rul, &cells, 5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn report_writers_emit_expected_shapes() {
        let rows = vec![
            row("c1", true, 0.01, 0.08, Some(0.2)),
            row("c2", false, 0.0, 0.0, None),
        ];
        let aggregate = aggregate_metrics(&rows);
        let report = MetricsReport { rows, aggregate };
        let dir = tempdir().unwrap();

        let csv_path = dir.path().join("report.csv");
        write_report_csv(&report, &csv_path).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            csv,
            "cell_id,triggered,fpc_cycle,n_points,mse,mae,mape\n\
             c1,true,100,10,0.01,0.08,0.2\n\
             c2,false,,,,,\n"
        );

        let txt_path = dir.path().join("report.txt");
        write_report_text(&report, &txt_path).unwrap();
        let txt = std::fs::read_to_string(&txt_path).unwrap();
        assert!(txt.contains("n_cells = 2"));
        assert!(txt.contains("n_triggered = 1"));
        assert!(txt.contains("untriggered_ids = c2"));
        assert!(txt.contains("aggregate.mse = 0.01"));
        assert!(txt.contains("cell.c1.mape = 0.2"));
        assert!(txt.contains("cell.c2.triggered = false"));
    }

    #[test]
    fn svg_writer_emits_both_polylines() {
        let curve = curve_from(&[0.9, 0.6, 0.3], &[Some(1.0), Some(0.5), Some(0.0)]);
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.svg");
        write_curve_svg(&curve, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);

        let empty = RulCurve {
            cell_id: "c".into(),
            fpc_cycle: 1,
            points: vec![],
        };
        assert!(write_curve_svg(&empty, &path).is_err());
    }

    #[test]
    fn baseline_split_examples() {
        let cell = capacity_cell("b1", 1000, |c| 1.1 - 0.0002 * c as f64);
        let split = baseline_split(&cell, 0.4, 50).unwrap();
        assert_eq!(split.input_end, 400);
        assert_eq!(split.target_len(), 600);

        // 40 input cycles cannot satisfy a 50-cycle minimum.
        let short = capacity_cell("b2", 100, |c| 1.1 - 0.002 * c as f64);
        assert!(baseline_split(&short, 0.4, 50).is_err());

        // A fraction just below one leaves a single target cycle.
        let split = baseline_split(&cell, 0.999, 50).unwrap();
        assert_eq!(split.input_end, 999);
        assert_eq!(split.target_len(), 1);

        assert!(baseline_split(&cell, 0.0, 50).is_err());
        assert!(baseline_split(&cell, 1.0, 50).is_err());
    }

    #[test]
    fn baseline_forecast_length_contract() {
        let cell = capacity_cell("b3", 150, |c| {
            1.1 - 0.22 * (c as f64 / 150.0).powi(3)
        });
        let split = baseline_split(&cell, 0.4, 50).unwrap();
        let mut config = BaselineConfig::default();
        config.train.max_epochs = 5;
        let forecast = baseline_forecast(&cell, &split, &config).unwrap();
        assert_eq!(forecast.len(), cell.eol() - split.input_end);
        assert_eq!(forecast.cycles[0], split.input_end + 1);
        assert_eq!(*forecast.cycles.last().unwrap(), cell.eol());
    }

    #[test]
    fn baseline_tracks_a_noiseless_linear_fade() {
        let eol = 120;
        let cell = capacity_cell("lin", eol, |c| {
            1.1 - 0.2 * (c - 1) as f64 / (eol - 1) as f64
        });
        let split = baseline_split(&cell, 0.4, 40).unwrap();
        let mut config = BaselineConfig::default();
        config.train.seed = 5;
        let forecast = baseline_forecast(&cell, &split, &config).unwrap();
        let caps = cell.channel_values(Channel::DischargeCapacity);
        let worst = forecast
            .cycles
            .iter()
            .zip(&forecast.predictions)
            .map(|(&c, &p)| (p - caps[c - 1]).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.02, "worst forecast error {worst}");
        assert!(forecast_mae(&cell, &forecast).unwrap() <= 0.02);
    }

    #[test]
    fn baseline_holds_a_constant_cell_flat() {
        let cell = capacity_cell("flat", 100, |_| 1.05);
        let split = baseline_split(&cell, 0.4, 30).unwrap();
        let config = BaselineConfig::default();
        let forecast = baseline_forecast(&cell, &split, &config).unwrap();
        for &p in &forecast.predictions {
            assert!((p - 1.05).abs() <= 0.01, "drifted to {p}");
        }
    }

    #[test]
    fn baseline_rejects_foreign_split_and_short_input() {
        let cell = capacity_cell("b4", 120, |c| 1.1 - 0.001 * c as f64);
        let other = capacity_cell("b5", 130, |c| 1.1 - 0.001 * c as f64);
        let split = baseline_split(&cell, 0.4, 40).unwrap();
        assert!(baseline_forecast(&other, &split, &BaselineConfig::default()).is_err());

        // 22 input cycles minus one diff leaves too few samples for 20 lags.
        let split = baseline_split(&cell, 0.19, 10).unwrap();
        assert_eq!(split.input_end, 22);
        let err = baseline_forecast(&cell, &split, &BaselineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("training samples"), "{err}");
    }
}
