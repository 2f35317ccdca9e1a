//! Simulates one path per scenario with common random numbers and prints
//! the terminal value and realized quadratic variation.

use std::sync::Arc;

use gcalc::rng::SeedPolicy;
use gcalc::scenario::{generate_path, ControlSet, TimeGrid, VolatilityBand};

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let grid = Arc::new(TimeGrid::uniform(1.0, 256)?);
    let seeds = SeedPolicy::new(42);
    println!("{:<28} {:>10} {:>10}", "scenario", "B_T", "<B>_T");
    for control in ControlSet::default_for(band).iter() {
        let p = generate_path(control, grid.clone(), &band, seeds.slot(0, 0))?;
        println!("{:<28} {:>10.4} {:>10.4}", p.control_id, p.terminal(), p.realized_qv(p.n_steps()));
    }
    let p = generate_path(&ControlSet::default_for(band).0[0], grid, &band, seeds.slot(0, 0))?;
    p.write_csv(std::io::stdout().lock()).map_err(|e| gcalc::error::Error::Io(e.to_string()))?;
    Ok(())
}
