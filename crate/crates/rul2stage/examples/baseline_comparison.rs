//! Contrast the two-stage framing with a direct capacity forecaster.
//!
//! The single-stage baseline sees only the first q = 40% of a cell's
//! discharge-capacity curve, learns the cycle-to-cycle decrements, and
//! rolls the curve forward recursively to end of life. Recursive rollout
//! compounds its own errors, which is the argument for predicting a
//! bounded remaining-life fraction after a detected degradation onset
//! instead of extrapolating raw capacity from the healthy region.
//!
//! ```text
//! cargo run --release --example baseline_comparison
//! ```

use rul2stage::dataio::Channel;
use rul2stage::eval::{
    baseline_forecast, baseline_split, forecast_mae, BaselineConfig, DEFAULT_BASELINE_FRACTION,
};
use rul2stage::synthgen::{generate_fleet, FleetSpec};

fn main() -> rul2stage::Result<()> {
    let fleet = generate_fleet(&FleetSpec::desk_default(3, 260, 340, 21))?;
    let mut config = BaselineConfig::default();
    config.train.max_epochs = 120;
    config.train.patience = 25;
    config.train.seed = 21;

    for cell in &fleet {
        let split = baseline_split(cell, DEFAULT_BASELINE_FRACTION, config.n_in + 3)?;
        let forecast = baseline_forecast(cell, &split, &config)?;
        let mae = forecast_mae(cell, &forecast)?;

        let caps = cell.channel_values(Channel::DischargeCapacity);
        let mid = forecast.len() / 2;
        println!(
            "{}: eol {}, saw cycles 1..={}, forecast {} cycles ahead",
            cell.cell_id(),
            cell.eol(),
            split.input_len(),
            forecast.len()
        );
        for i in [0, mid, forecast.len() - 1] {
            let cycle = forecast.cycles[i];
            println!(
                "  cycle {:>4}: forecast {:.3} Ah, actual {:.3} Ah",
                cycle,
                forecast.predictions[i],
                caps[cycle - 1]
            );
        }
        println!("  capacity MAE over the horizon: {mae:.4} Ah\n");
    }
    Ok(())
}
