//! Solves the G-heat equation and compares it with Monte Carlo and the
//! Gaussian closed forms.

use gcalc::expectation::MonteCarlo;
use gcalc::pde::{cross_validate, gaussian_closed_form, solve, PdeGrid, TerminalPayoff};
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{ControlSet, TimeGrid, VolatilityBand};

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let horizon = 1.0;
    let grid = PdeGrid::centered(&band, horizon, 0.0, 6.0, 0.02)?;
    let mc = MonteCarlo::new(band, TimeGrid::uniform(horizon, 16)?, ControlSet::default_for(band), 50_000, SeedPolicy::new(9))?;

    for name in ["x^2", "-x^2", "max(x,0)"] {
        let phi = TerminalPayoff::by_name(name).expect("known payoff");
        let sigma = if name == "-x^2" { band.sigma_lo } else { band.sigma_hi };
        let cv = cross_validate(&phi, 0.0, &mc, &grid, 2e-3)?;
        println!(
            "{name:<9} pde {:>8.5} mc {:>8.5} (se {:.4}) gap {:.2e} {}  closed form {:?}",
            cv.pde_value,
            cv.mc_value,
            cv.mc_std_error,
            cv.abs_gap,
            if cv.pass { "ok" } else { "FAIL" },
            gaussian_closed_form(name, sigma, 0.0, horizon)
        );
    }

    let surface = solve(&TerminalPayoff::by_name("max(x,0)").unwrap(), &band, &grid, 5)?;
    for x in [-1.0, 0.0, 1.0] {
        println!("u(0, {x}) = {:.5}", surface.value_at(x));
    }
    Ok(())
}
