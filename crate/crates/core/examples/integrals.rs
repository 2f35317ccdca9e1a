//! Itô integrals of random simple processes and the three moment inequalities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcalc::expectation::MonteCarlo;
use gcalc::integration::{
    gaussian_truncation_tail, integral_checks, integrate_samples, random_simple_process, GridProcess, Integrand, IntegralKind,
};
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{ControlSet, TimeGrid, VolatilityBand};

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let grid = TimeGrid::uniform(1.0, 64)?;
    let mc = MonteCarlo::new(band, grid.clone(), ControlSet::default_for(band), 2_000, SeedPolicy::new(3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for j in 0..5 {
        let eta = random_simple_process(&mut rng, &grid, 8, 1.0);
        let checks = integral_checks(&format!("eta-{j}"), &eta, &mc)?;
        for c in &checks.cases {
            println!(
                "{:<26} lhs {:>8.4} rhs {:>8.4} margin {:>6.2} se  {}",
                c.case_id,
                c.lhs,
                c.rhs,
                c.margin_in_std_errors,
                if c.pass { "ok" } else { "FAIL" }
            );
        }
    }

    let tail_grid = TimeGrid::uniform(1.0, 32)?;
    let tail_mc = MonteCarlo::new(band, tail_grid.clone(), ControlSet::default_for(band), 50_000, SeedPolicy::new(4))?;
    let b = GridProcess::brownian();
    for n in [1.0, 2.0, 4.0, 8.0] {
        let est = tail_mc.estimate_many(1, |p| {
            let v: Vec<f64> = b.sample(p)?.iter().map(|x| if x.abs() > n { x * x } else { 0.0 }).collect();
            Ok(vec![integrate_samples(&v, p, IntegralKind::Dt)?.final_value()])
        })?;
        println!(
            "n = {n}: E^[int |B|^2 1{{|B| > n}} dt] = {:.3e}, Gaussian oracle {:.3e}",
            est[0].value,
            gaussian_truncation_tail(n, band.sigma_hi, &tail_grid)
        );
    }
    Ok(())
}
