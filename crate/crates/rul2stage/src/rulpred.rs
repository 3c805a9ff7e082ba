//! Stage 2: regress the remaining-life fraction on post-FPC windows and
//! predict per-cell RUL curves.
//!
//! Targets come from the degradation span itself: 1 at the FPC anchor,
//! falling affinely to 0 at the EOL anchor. Training pools the post-FPC
//! windows of every triggered training cell into one dataset; prediction is
//! clamped into [0, 1] for reporting while the raw rectifier output is kept
//! for diagnostics.

use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use crate::dataio::{
    apply_normalization, compute_normalization, CellHistory, FeatureSelection, NormalizationStats,
};
use crate::error::{Error, Result};
use crate::fpc::{FpcDecision, StageOptions};
use crate::nn::{
    train, train_with_validation, Head, LossKind, ModelParams, ModelSpec, TrainOutcome,
    TrainSample,
};
use crate::windows::{assign_rul_targets, make_windows};

/// Trained stage-2 regressor plus its data contract.
#[derive(Debug, Clone)]
pub struct RulModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub selection: FeatureSelection,
    pub stats: NormalizationStats,
    /// Window stride used at training time and for curve prediction.
    pub step: usize,
}

impl RulModel {
    pub fn n_w(&self) -> usize {
        self.spec.step_input
    }
}

/// One predicted point of a RUL curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub anchor_cycle: usize,
    /// Reported prediction, clamped into [0, 1].
    pub prediction: f64,
    /// Rectifier output before the upper clamp.
    pub raw: f64,
    /// Known remaining-life fraction, when the cell's EOL is known.
    pub target: Option<f64>,
}

/// Predicted remaining-life fractions over one cell's post-FPC region.
#[derive(Debug, Clone, PartialEq)]
pub struct RulCurve {
    pub cell_id: String,
    pub fpc_cycle: usize,
    pub points: Vec<CurvePoint>,
}

/// Post-FPC training samples of one normalized cell.
fn rul_samples(
    cell: &CellHistory,
    selection: &FeatureSelection,
    stats: &NormalizationStats,
    fpc: usize,
    n_w: usize,
    step: usize,
) -> Result<Vec<TrainSample>> {
    let channels = apply_normalization(cell, stats, selection)?;
    let windows = make_windows(&channels, n_w, step)?;
    let pairs = assign_rul_targets(&windows, cell.eol(), fpc)?;
    Ok(pairs
        .into_iter()
        .map(|(w, t)| TrainSample {
            input: w.features,
            target: t.fraction,
        })
        .collect())
}

/// Trains the RUL regressor on the pooled post-FPC windows of every
/// triggered training cell, with MAE loss. Cells without a triggered
/// decision are skipped; none triggering is an error. The validation split
/// is cell-wise over the triggered cells, mirroring stage 1.
pub fn train_rul(
    cells: &[CellHistory],
    decisions: &[FpcDecision],
    selection: &FeatureSelection,
    opts: &StageOptions,
) -> Result<(RulModel, TrainOutcome)> {
    opts.validate()?;
    if cells.is_empty() {
        return Err(Error::Data("stage 2: empty training set".into()));
    }
    let fpc_of = |id: &str| -> Option<usize> {
        decisions
            .iter()
            .find(|d| d.cell_id == id)
            .and_then(|d| if d.triggered { d.fpc_cycle } else { None })
    };
    let triggered: Vec<(&CellHistory, usize)> = cells
        .iter()
        .filter_map(|c| fpc_of(c.cell_id()).map(|fpc| (c, fpc)))
        .collect();
    if triggered.is_empty() {
        return Err(Error::Data(
            "stage 2: no triggered training cells to learn from".into(),
        ));
    }

    let stats = compute_normalization(cells, selection)?;
    let spec = opts.model_spec(Head::Rul, selection.len());

    let collect = |subset: &[(&CellHistory, usize)]| -> Result<Vec<TrainSample>> {
        let nested: Vec<Vec<TrainSample>> = subset
            .par_iter()
            .map(|(c, fpc)| rul_samples(c, selection, &stats, *fpc, opts.n_w, opts.step))
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    };

    let outcome = if triggered.len() == 1 {
        let samples = collect(&triggered)?;
        train(&spec, &samples, LossKind::Mae, &opts.train)?
    } else {
        // Same deterministic cell shuffle as stage 1, over triggered cells.
        let (train_idx, val_idx) = crate::fpc::split_cell_indices(
            triggered.len(),
            opts.train.validation_fraction,
            opts.train.seed,
        );
        let pick = |idx: &[usize]| idx.iter().map(|&i| triggered[i]).collect::<Vec<_>>();
        let train_samples = collect(&pick(&train_idx))?;
        let val_samples = collect(&pick(&val_idx))?;
        train_with_validation(&spec, &train_samples, &val_samples, LossKind::Mae, &opts.train)?
    };

    let model = RulModel {
        spec,
        params: outcome.params.clone(),
        selection: selection.clone(),
        stats,
        step: opts.step,
    };
    Ok((model, outcome))
}

/// Predicts the remaining-life curve of one cell from its (estimated) FPC.
/// One point per post-FPC window; anchors below `n_w` cannot exist, so the
/// curve starts at `max(fpc_cycle, n_w)`.
pub fn predict_curve(model: &RulModel, cell: &CellHistory, fpc_cycle: usize) -> Result<RulCurve> {
    if fpc_cycle >= cell.eol() {
        return Err(Error::Data(format!(
            "cell {}: fpc {fpc_cycle} must precede eol {}",
            cell.cell_id(),
            cell.eol()
        )));
    }
    let channels = apply_normalization(cell, &model.stats, &model.selection)?;
    let windows = make_windows(&channels, model.n_w(), model.step)?;
    let span = (cell.eol() - fpc_cycle) as f64;
    let points: Vec<CurvePoint> = windows
        .par_iter()
        .filter(|w| w.anchor_cycle >= fpc_cycle)
        .map(|w| {
            let (raw, _) = model.spec.forward(&model.params, &w.features)?;
            Ok(CurvePoint {
                anchor_cycle: w.anchor_cycle,
                prediction: raw.min(1.0),
                raw,
                target: Some((cell.eol() - w.anchor_cycle) as f64 / span),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RulCurve {
        cell_id: cell.cell_id().to_string(),
        fpc_cycle,
        points,
    })
}

/// Writes a curve as CSV: `cell_id,anchor_cycle,prediction,target`; rows
/// without a known target leave the column empty.
pub fn write_curve_csv(curve: &RulCurve, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "cell_id,anchor_cycle,prediction,target")?;
    for p in &curve.points {
        let target = p.target.map(|t| format!("{t:.6}")).unwrap_or_default();
        writeln!(
            f,
            "{},{},{:.6},{}",
            curve.cell_id, p.anchor_cycle, p.prediction, target
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpc::StageOptions;
    use crate::synthgen::{generate_cell, DegradationParams, FleetSpec};

    fn small_opts(seed: u64, epochs: usize) -> StageOptions {
        let mut opts = StageOptions::small();
        opts.train.seed = seed;
        opts.train.max_epochs = epochs;
        opts
    }

    fn fake_decision(cell: &CellHistory, fpc: Option<usize>) -> FpcDecision {
        FpcDecision {
            cell_id: cell.cell_id().to_string(),
            fpc_cycle: fpc,
            triggered: fpc.is_some(),
            trace: vec![],
        }
    }

    fn fleet(n: usize, seed: u64) -> Vec<CellHistory> {
        crate::synthgen::generate_fleet(&FleetSpec::desk_default(n, 170, 230, seed)).unwrap()
    }

    #[test]
    fn trains_on_pooled_post_fpc_windows() {
        let cells = fleet(4, 21);
        let decisions: Vec<FpcDecision> = cells
            .iter()
            .map(|c| fake_decision(c, Some(c.eol() * 6 / 10)))
            .collect();
        let selection = FeatureSelection::first_n(2).unwrap();
        let (model, outcome) = train_rul(&cells, &decisions, &selection, &small_opts(3, 10)).unwrap();
        assert_eq!(model.spec.head, Head::Rul);
        assert!(!outcome.history.is_empty());
    }

    #[test]
    fn no_triggered_cells_is_an_error() {
        let cells = fleet(3, 22);
        let decisions: Vec<FpcDecision> =
            cells.iter().map(|c| fake_decision(c, None)).collect();
        let selection = FeatureSelection::first_n(1).unwrap();
        let err = train_rul(&cells, &decisions, &selection, &small_opts(1, 2)).unwrap_err();
        assert!(err.to_string().contains("no triggered"), "{err}");
    }

    #[test]
    fn curve_shape_and_bounds() {
        let cells = fleet(3, 23);
        let decisions: Vec<FpcDecision> = cells
            .iter()
            .map(|c| fake_decision(c, Some(c.eol() * 6 / 10)))
            .collect();
        let selection = FeatureSelection::first_n(2).unwrap();
        let (model, _) = train_rul(&cells, &decisions, &selection, &small_opts(5, 6)).unwrap();

        let cell = &cells[0];
        let fpc = cell.eol() * 6 / 10;
        let curve = predict_curve(&model, cell, fpc).unwrap();
        // length = eol - max(fpc, n_w) + 1 at step 1
        assert_eq!(curve.points.len(), cell.eol() - fpc.max(model.n_w()) + 1);
        for pair in curve.points.windows(2) {
            assert_eq!(pair[1].anchor_cycle, pair[0].anchor_cycle + 1);
        }
        for p in &curve.points {
            assert!((0.0..=1.0).contains(&p.prediction));
            assert!(p.raw >= 0.0);
            assert!(p.anchor_cycle >= fpc);
        }
        assert_eq!(curve.points.first().unwrap().target, Some(1.0));
        assert_eq!(curve.points.last().unwrap().target, Some(0.0));
    }

    #[test]
    fn early_fpc_clips_curve_start_to_first_window() {
        let cells = fleet(1, 24);
        let cell = &cells[0];
        let decisions = vec![fake_decision(cell, Some(cell.eol() * 6 / 10))];
        let selection = FeatureSelection::first_n(1).unwrap();
        let (model, _) = train_rul(&cells, &decisions, &selection, &small_opts(6, 4)).unwrap();
        // An FPC before the first anchor (n_w) still yields a full curve.
        let curve = predict_curve(&model, cell, 10).unwrap();
        assert_eq!(curve.points[0].anchor_cycle, model.n_w());
        assert_eq!(curve.points.len(), cell.eol() - model.n_w() + 1);
    }

    #[test]
    fn reported_prediction_is_clamped_but_raw_is_kept() {
        let cells = fleet(1, 25);
        let cell = &cells[0];
        let selection = FeatureSelection::first_n(1).unwrap();
        let stats = compute_normalization(std::slice::from_ref(cell), &selection).unwrap();
        let opts = StageOptions::small();
        let spec = opts.model_spec(Head::Rul, 1);
        // Zero weights except a head bias of 1.7: every raw output is 1.7.
        let mut params = ModelParams::zeros(&spec);
        let layout = spec.layout();
        params.values_mut()[layout.head_b] = 1.7;
        let model = RulModel {
            spec,
            params,
            selection,
            stats,
            step: 1,
        };
        let curve = predict_curve(&model, cell, cell.eol() / 2).unwrap();
        for p in &curve.points {
            assert_eq!(p.raw, 1.7);
            assert_eq!(p.prediction, 1.0);
        }
    }

    #[test]
    fn fpc_at_eol_is_rejected() {
        let cells = fleet(1, 26);
        let cell = &cells[0];
        let selection = FeatureSelection::first_n(1).unwrap();
        let decisions = vec![fake_decision(cell, Some(cell.eol() * 6 / 10))];
        let (model, _) = train_rul(&cells, &decisions, &selection, &small_opts(7, 3)).unwrap();
        assert!(predict_curve(&model, cell, cell.eol()).is_err());
    }

    /// Train to convergence on one noiseless cell; the predicted curve must
    /// hug the affine target closely everywhere.
    #[test]
    fn converges_on_a_noiseless_cell() {
        let params = DegradationParams {
            eol: 200,
            capacity_noise_std: 0.0,
            ..Default::default()
        };
        let cell = generate_cell(&params, "clean").unwrap();
        let selection = FeatureSelection::first_n(1).unwrap();
        let fpc = 120;
        let decisions = vec![fake_decision(&cell, Some(fpc))];
        let mut opts = small_opts(11, 400);
        opts.train.patience = 60;
        let cells = vec![cell.clone()];
        let (model, _) = train_rul(&cells, &decisions, &selection, &opts).unwrap();
        let curve = predict_curve(&model, &cell, fpc).unwrap();
        let worst = curve
            .points
            .iter()
            .map(|p| (p.prediction - p.target.unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.05, "worst curve deviation {worst}");
    }

    #[test]
    fn curve_csv_format() {
        use tempfile::tempdir;
        let dir = tempdir().unwrap();
        let curve = RulCurve {
            cell_id: "c1".into(),
            fpc_cycle: 100,
            points: vec![
                CurvePoint {
                    anchor_cycle: 100,
                    prediction: 1.0,
                    raw: 1.2,
                    target: Some(1.0),
                },
                CurvePoint {
                    anchor_cycle: 101,
                    prediction: 0.9,
                    raw: 0.9,
                    target: None,
                },
            ],
        };
        let path = dir.path().join("curve.csv");
        write_curve_csv(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "cell_id,anchor_cycle,prediction,target\nc1,100,1.000000,1.000000\nc1,101,0.900000,\n"
        );
    }
}
