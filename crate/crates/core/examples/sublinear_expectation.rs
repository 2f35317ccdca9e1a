//! Upper and lower expectations of a few payoffs, and the G-normal moments.

use gcalc::expectation::{gnormal_abs_moment, MonteCarlo, Payoff};
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{ControlSet, TimeGrid, VolatilityBand};

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let mc = MonteCarlo::new(band, TimeGrid::uniform(1.0, 16)?, ControlSet::default_for(band), 50_000, SeedPolicy::new(7))?;

    let payoffs = [
        ("B_1^2", Payoff::at_time(1.0, |x| x * x)),
        ("-B_1^2", Payoff::at_time(1.0, |x| -x * x)),
        ("max(B_1, 0)", Payoff::at_time(1.0, |x| x.max(0.0))),
        ("B_1^3", Payoff::at_time(1.0, |x| x * x * x)),
    ];
    for (name, x) in &payoffs {
        let (upper, lower) = mc.bounds(x)?;
        println!(
            "{name:<12} upper {:>8.4} (se {:.4}, {})  lower {:>8.4}",
            upper.value, upper.std_error, upper.argmax_control_id, lower.value
        );
    }

    for p in [1.0, 2.0, 4.0] {
        let est = mc.sup_expectation(&Payoff::at_time(1.0, move |x: f64| x.abs().powf(p)))?;
        println!("E^[|B_1|^{p}] = {:.4} +- {:.4}, exact {:.4}", est.value, est.std_error, gnormal_abs_moment(p, &band)?);
    }

    let cap = mc.capacity_estimate(Some(1.0), |v| v.b_now() > 2.0)?;
    println!("capacity of {{B_1 > 2}}: {:.4}", cap.value);
    Ok(())
}
