//! Itô formula residual convergence for a few test functions, plus the
//! remainder study and the localized/clamped comparison.

use gcalc::expectation::MonteCarlo;
use gcalc::ito_formula::{compare_localized, library, remainder_study, verify, Localization, Semimartingale, SmoothFunction};
use gcalc::rng::SeedPolicy;
use gcalc::scenario::{ControlSet, TimeGrid, VolatilityBand};
use gcalc::stopping::LocalizationSequence;

fn main() -> gcalc::error::Result<()> {
    let band = VolatilityBand::new(1.0, 2.0)?;
    let mc = MonteCarlo::new(band, TimeGrid::uniform(1.0, 2)?, ControlSet::default_for(band), 300, SeedPolicy::new(5))?;
    let x = Semimartingale::brownian();
    let levels = [128, 256, 512, 1024];

    for phi in [library::square(), library::cube(), library::sine(), library::gaussian_bump()] {
        let r = verify(&phi, &x, &mc, &levels)?;
        let rms: Vec<String> = r.levels.iter().map(|l| format!("{:.2e}", l.rms)).collect();
        println!("{:<10} rms [{}] fitted order {:.3}", phi.name(), rms.join(", "), r.fitted_order);
    }

    let affine = verify(&library::affine(2.0, -1.0), &x, &mc, &levels[..2])?;
    println!("affine     max |residual| {:.1e}", affine.levels.iter().map(|l| l.max_abs).fold(0.0, f64::max));

    let remainder_x = Semimartingale::constant_coefficients(0.0, 0.5, 0.5, 1.0);
    for l in remainder_study(&library::sine(), &remainder_x, &mc, &[32, 64, 128])? {
        println!("N = {:<4} E^[|sum eta_k|^2] = {:.3e}", l.n_steps, l.taylor_sum_sq.value);
    }

    let loc = Localization { level: 2, sequence: LocalizationSequence::exit_level() };
    let path = mc.path(0, 0)?;
    let cmp = compare_localized(&library::cube(), &x, &path, &loc)?;
    println!("localized and clamped variants identical: {}", cmp.identical());
    Ok(())
}
