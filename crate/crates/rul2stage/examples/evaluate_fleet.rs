//! Score held-out cells and write the full report bundle.
//!
//! Runs both trained stages over a test fleet: classify windows, locate
//! each cell's FPC, predict its remaining-life curve, and score it with
//! MSE / MAE / MAPE. The aggregate row is the unweighted mean over the
//! cells that triggered. Alongside the text and CSV reports this writes
//! one prediction-vs-target SVG per scored cell.
//!
//! ```text
//! cargo run --release --example evaluate_fleet
//! ```

use rul2stage::dataio::{split_train_test, FeatureSelection};
use rul2stage::eval::{evaluate_fleet_detailed, write_curve_svg, write_report_csv, write_report_text};
use rul2stage::fpc::{decide_fpc, train_hs, StageOptions, DEFAULT_TRIGGER_K};
use rul2stage::rulpred::train_rul;
use rul2stage::synthgen::{generate_fleet, FleetSpec};

fn main() -> rul2stage::Result<()> {
    let fleet = generate_fleet(&FleetSpec::desk_default(12, 180, 320, 9))?;
    let (train, test) = split_train_test(fleet, 9, 9)?;
    let selection = FeatureSelection::first_n(2)?;
    let mut opts = StageOptions::small();
    opts.train.max_epochs = 40;
    opts.train.patience = 15;
    opts.train.seed = 9;

    let (hs_model, _) = train_hs(&train, &selection, 0.10, &opts)?;
    let decisions: Vec<_> = train
        .iter()
        .map(|c| decide_fpc(&hs_model, c, DEFAULT_TRIGGER_K))
        .collect::<rul2stage::Result<_>>()?;
    let (rul_model, _) = train_rul(&train, &decisions, &selection, &opts)?;

    let evaluation = evaluate_fleet_detailed(&hs_model, &rul_model, &test, DEFAULT_TRIGGER_K)?;
    let report = &evaluation.report;

    println!("cell        triggered   fpc     mse      mae      mape");
    for row in &report.rows {
        match (&row.metrics, row.fpc_cycle) {
            (Some(m), Some(fpc)) => println!(
                "{:<12} yes      {:>5}  {:>7.4}  {:>7.4}  {}",
                row.cell_id,
                fpc,
                m.mse,
                m.mae,
                m.mape.map_or("    -".into(), |v| format!("{v:>7.4}"))
            ),
            _ => println!("{:<12} no", row.cell_id),
        }
    }
    if let Some(agg) = &report.aggregate {
        println!(
            "\naggregate over {} triggered cells: mse {:.4}, mae {:.4}",
            report.n_triggered(),
            agg.mse,
            agg.mae
        );
    }

    let dir = std::env::temp_dir().join("rul2stage-examples").join("eval");
    std::fs::create_dir_all(&dir)?;
    write_report_text(report, &dir.join("report.txt"))?;
    write_report_csv(report, &dir.join("report.csv"))?;
    for curve in evaluation.curves.iter().flatten() {
        write_curve_svg(curve, &dir.join(format!("{}.svg", curve.cell_id)))?;
    }
    println!("report bundle written to {}", dir.display());
    Ok(())
}
