//! Train stage 2 alone and walk one cell's remaining-life curve.
//!
//! Stage 2 never sees raw cycle counts: its target is the dimensionless
//! fraction (EOL - t) / (EOL - FPC), which is 1 at the first-prediction
//! cycle and 0 at end of life. Here the FPC of every cell is fixed by a
//! known rule instead of a trained classifier, which isolates what the
//! regressor itself learns.
//!
//! ```text
//! cargo run --release --example predict_rul
//! ```

use rul2stage::dataio::FeatureSelection;
use rul2stage::eval::{compute_metrics, DEFAULT_MAPE_FLOOR};
use rul2stage::fpc::FpcDecision;
use rul2stage::rulpred::{predict_curve, train_rul};
use rul2stage::synthgen::{generate_fleet, FleetSpec};

fn main() -> rul2stage::Result<()> {
    let fleet = generate_fleet(&FleetSpec::desk_default(9, 200, 320, 5))?;
    let (probe, train) = fleet.split_last().unwrap();
    let selection = FeatureSelection::first_n(2)?;

    // Pretend stage 1 triggered at 60% of each cell's life.
    let fixed_fpc = |eol: usize| (6 * eol) / 10;
    let decisions: Vec<FpcDecision> = train
        .iter()
        .map(|c| FpcDecision {
            cell_id: c.cell_id().to_string(),
            fpc_cycle: Some(fixed_fpc(c.eol())),
            triggered: true,
            trace: Vec::new(),
        })
        .collect();

    let mut opts = rul2stage::fpc::StageOptions::small();
    opts.train.max_epochs = 150;
    opts.train.patience = 40;
    opts.train.seed = 5;
    let (model, outcome) = train_rul(train, &decisions, &selection, &opts)?;
    println!(
        "trained on {} cells, best validation MAE {:.4}\n",
        train.len(),
        outcome.best_val_loss
    );

    let fpc = fixed_fpc(probe.eol());
    let curve = predict_curve(&model, probe, fpc)?;
    println!(
        "{}: eol {}, fpc {fpc}, {} post-FPC windows",
        curve.cell_id,
        probe.eol(),
        curve.points.len()
    );
    println!("cycle  predicted  actual");
    let stride = (curve.points.len() / 8).max(1);
    for point in curve.points.iter().step_by(stride) {
        println!(
            "{:>5}  {:>9.3}  {:>6.3}",
            point.anchor_cycle,
            point.prediction,
            point.target.unwrap()
        );
    }

    let metrics = compute_metrics(&curve, DEFAULT_MAPE_FLOOR)?;
    println!(
        "\ncurve MAE {:.4} over {} points (remaining-life fraction units)",
        metrics.mae, metrics.n_points
    );
    Ok(())
}
