//! Generate a synthetic battery fleet and save it in the CSV contract.
//!
//! Each cell follows a knee-shaped capacity-fade trajectory with per-cell
//! parameters drawn from the fleet spec's ranges; the same master seed
//! always reproduces the same fleet, byte for byte.
//!
//! ```text
//! cargo run --example generate_fleet
//! ```

use rul2stage::dataio::{save_cells, Channel};
use rul2stage::synthgen::{generate_fleet_with_params, FleetSpec};

fn main() -> rul2stage::Result<()> {
    let spec = FleetSpec::desk_default(8, 200, 600, 42);
    let fleet = generate_fleet_with_params(&spec)?;

    println!("cell        eol   nominal  knee@cycle  final capacity");
    for (params, cell) in &fleet {
        let caps = cell.channel_values(Channel::DischargeCapacity);
        println!(
            "{:<10} {:>5}   {:.3} Ah  {:>8.0}    {:.3} Ah",
            cell.cell_id(),
            cell.eol(),
            params.nominal_capacity,
            params.knee_fraction * cell.eol() as f64,
            caps.last().unwrap()
        );
    }

    let cells: Vec<_> = fleet.into_iter().map(|(_, c)| c).collect();
    let dir = std::env::temp_dir().join("rul2stage-examples").join("fleet");
    let manifest = save_cells(&cells, &dir)?;
    println!("\nwrote {} cells + manifest to {}", cells.len(), manifest.display());
    Ok(())
}
