//! Locate the first-prediction cycle and inspect the trigger rule itself.
//!
//! The FPC is the anchor cycle of the first window that starts a run of
//! k = 5 consecutive unhealthy classifications. The first half of this
//! example exercises the pure decision rule on hand-written probability
//! traces; the second half trains a small classifier and shows a real
//! trace around its trigger point.
//!
//! ```text
//! cargo run --release --example locate_fpc
//! ```

use rul2stage::dataio::FeatureSelection;
use rul2stage::fpc::{
    decide_fpc, decide_from_trace, train_hs, StageOptions, DEFAULT_TRIGGER_K,
};
use rul2stage::synthgen::{generate_fleet, FleetSpec};

fn main() -> rul2stage::Result<()> {
    // The rule on synthetic traces: anchors 100, 110, ..., 170 with a
    // probability > 0.5 marking a window unhealthy (exactly 0.5 is healthy).
    let anchors = [100, 110, 120, 130, 140, 150, 160, 170];
    let cases: [(&str, [f64; 8]); 3] = [
        ("clean run of five", [0.1, 0.2, 0.3, 0.8, 0.9, 0.7, 0.6, 0.8]),
        ("run broken by a tie", [0.1, 0.8, 0.9, 0.5, 0.8, 0.9, 0.7, 0.6]),
        ("never five in a row", [0.9, 0.9, 0.4, 0.9, 0.9, 0.9, 0.9, 0.4]),
    ];
    for (label, probs) in &cases {
        let decision = decide_from_trace("demo", 180, &anchors, probs, DEFAULT_TRIGGER_K);
        println!("{label:<22} -> fpc {:?}", decision.fpc_cycle);
    }

    // The rule on a trained classifier: train on 8 cells, probe a 9th.
    let fleet = generate_fleet(&FleetSpec::desk_default(9, 180, 300, 12))?;
    let (probe, train) = fleet.split_last().unwrap();
    let selection = FeatureSelection::first_n(2)?;
    let mut opts = StageOptions::small();
    opts.train.max_epochs = 30;
    opts.train.patience = 10;
    opts.train.seed = 12;
    let (model, _) = train_hs(train, &selection, 0.10, &opts)?;

    let decision = decide_fpc(&model, probe, DEFAULT_TRIGGER_K)?;
    println!(
        "\n{}: eol {}, triggered = {}, fpc = {:?}",
        decision.cell_id,
        probe.eol(),
        decision.triggered,
        decision.fpc_cycle
    );
    if let Some(fpc) = decision.fpc_cycle {
        println!("trace around the trigger (anchor: p_unhealthy):");
        for (anchor, prob) in decision
            .trace
            .iter()
            .filter(|(a, _)| a.abs_diff(fpc) <= 15)
        {
            let mark = if *anchor == fpc { "  <- FPC" } else { "" };
            println!("  {anchor:>4}: {prob:.3}{mark}");
        }
    }
    Ok(())
}
