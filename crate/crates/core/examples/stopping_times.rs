//! Hitting times, their dyadic approximations, and the stopped-integral identity.

use gcalc::expectation::MonteCarlo;
use gcalc::integration::GridProcess;
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{ControlSet, TimeGrid, VolatilityBand};
use gcalc::stopping::{
    dyadic_upper, evaluate, integral_of_stopped, stopped_integral, write_stop_times_csv, Direction, Monitor, StoppingTime,
};

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let mc = MonteCarlo::new(band, TimeGrid::uniform(1.0, 100)?, ControlSet::default_for(band), 8, SeedPolicy::new(11))?;
    let tau = StoppingTime::hitting(Monitor::AbsB, 1.0, Direction::Up)
        .min(StoppingTime::integral_threshold(GridProcess::brownian(), 2.0, 0.25));
    let eta = GridProcess::of_state(|t, b| (b + t).sin());

    let path = mc.path(mc.controls.len() - 1, 0)?;
    let t = evaluate(&tau, &path)?;
    println!("tau = {t} under {}", path.control_id);
    for n in [1, 2, 4, 8, 10] {
        println!("  tau_{n:<2} = {:.6}", dyadic_upper(&tau, n, &path)?);
    }

    let mut worst = 0.0f64;
    let mut paths = Vec::new();
    for c in 0..mc.controls.len() {
        for i in 0..mc.n_paths {
            let p = mc.path(c, i)?;
            let d = stopped_integral(&eta, &tau, 1.0, &p)? - integral_of_stopped(&eta, &tau, 1.0, &p)?;
            worst = worst.max(d.abs());
            paths.push(p);
        }
    }
    println!("max |int_0^(T ^ tau) eta dB - int_0^T 1[0,tau] eta dB| = {worst}");

    write_stop_times_csv(std::io::stdout().lock(), &tau, 4, &paths[..5])?;
    Ok(())
}
