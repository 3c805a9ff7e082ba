//! Train both stages end to end on a small synthetic fleet.
//!
//! Stage 1 learns a healthy/unhealthy window classifier and locates each
//! cell's first-prediction cycle (FPC) as the start of the first run of
//! five consecutive unhealthy windows. Stage 2 then regresses the
//! remaining-life fraction (EOL - t) / (EOL - FPC) on the post-FPC
//! windows of the cells stage 1 actually triggered on.
//!
//! Dimensions are scaled down from the production defaults so the whole
//! run finishes in well under a minute.
//!
//! ```text
//! cargo run --release --example train_two_stage
//! ```

use rul2stage::dataio::{split_train_test, FeatureSelection};
use rul2stage::fpc::{decide_fpc, labeled_accuracy, train_hs, StageOptions, DEFAULT_TRIGGER_K};
use rul2stage::rulpred::{predict_curve, train_rul};
use rul2stage::synthgen::{generate_fleet, FleetSpec};

fn main() -> rul2stage::Result<()> {
    let fleet = generate_fleet(&FleetSpec::desk_default(10, 180, 320, 3))?;
    let (train, test) = split_train_test(fleet, 8, 3)?;
    let selection = FeatureSelection::first_n(2)?;

    let mut opts = StageOptions::small();
    opts.train.max_epochs = 30;
    opts.train.patience = 10;
    opts.train.seed = 3;

    let (hs_model, hs_outcome) = train_hs(&train, &selection, 0.10, &opts)?;
    println!(
        "stage 1: best validation loss {:.4} at epoch {} ({} epochs run)",
        hs_outcome.best_val_loss,
        hs_outcome.best_epoch,
        hs_outcome.history.len()
    );
    println!(
        "stage 1: window accuracy on held-out cells = {:.3}",
        labeled_accuracy(&hs_model, &test)?
    );

    let decisions: Vec<_> = train
        .iter()
        .map(|c| decide_fpc(&hs_model, c, DEFAULT_TRIGGER_K))
        .collect::<rul2stage::Result<_>>()?;
    let triggered = decisions.iter().filter(|d| d.triggered).count();
    println!("stage 1: FPC found for {triggered}/{} training cells", decisions.len());

    let (rul_model, rul_outcome) = train_rul(&train, &decisions, &selection, &opts)?;
    println!(
        "stage 2: best validation loss {:.4} at epoch {}",
        rul_outcome.best_val_loss, rul_outcome.best_epoch
    );

    // Score one held-out cell with the full two-stage pipeline.
    let cell = &test[0];
    let decision = decide_fpc(&hs_model, cell, DEFAULT_TRIGGER_K)?;
    match decision.fpc_cycle {
        Some(fpc) => {
            let curve = predict_curve(&rul_model, cell, fpc)?;
            let last = curve.points.last().unwrap();
            println!(
                "\n{}: eol {}, FPC at cycle {fpc}, {} curve points, final prediction {:.3} (target {:.3})",
                cell.cell_id(),
                cell.eol(),
                curve.points.len(),
                last.prediction,
                last.target.unwrap()
            );
        }
        None => println!("\n{}: classifier never triggered", cell.cell_id()),
    }
    Ok(())
}
