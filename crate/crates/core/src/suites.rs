//! Verification suites. Each produces a [`SuiteReport`] of traced cases,
//! two-column plot series, and any extra CSV files.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Suite};
use crate::error::{Error, Result};
use crate::expectation::{gnormal_abs_moment, ExpectationEstimate, MonteCarlo};
use crate::integration::{
    gaussian_truncation_tail, integral_checks, integrate_samples, random_simple_process, GridProcess, IntegralKind,
};
use crate::ito_formula::{self, library, Localization, Semimartingale, SmoothFunction};
use crate::numeric;
use crate::pde::{self, PdeGrid, TerminalPayoff};
use crate::report::{emit_plot_data, slug, CaseRecord, PlotSeries, Report, Status, SuiteReport, Timing};
use crate::rng::COMMON_SLOT;
use crate::scenario::{generate_path, SamplePath};
use crate::stopping::{
    dyadic_upper, evaluate, integral_of_stopped, random_stopping_time, stopped_integral, write_stop_times_csv,
    LocalizationSequence, StoppingTime,
};

/// Control slots reserved for the random generators of each suite.
const AXIOMS_STREAM: u64 = 101;
const INTEGRALS_STREAM: u64 = 102;
const STOPPING_STREAM: u64 = 103;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    pub report: SuiteReport,
    pub plots: Vec<PlotSeries>,
    /// `(file name, contents)` pairs.
    pub files: Vec<(String, String)>,
}

impl SuiteOutput {
    fn new(suite: Suite, seed: u64) -> Self {
        Self {
            report: SuiteReport::new(suite.name(), seed),
            plots: Vec::new(),
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    pub plots: Vec<PlotSeries>,
    pub files: Vec<(String, String)>,
    pub timing: Timing,
}

pub fn run_suite(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutput> {
    match suite {
        Suite::Axioms => axioms(cfg),
        Suite::Integrals => integrals(cfg),
        Suite::Stopping => stopping(cfg),
        Suite::Ito => ito(cfg),
        Suite::Pde => pde_suite(cfg),
    }
}

/// Runs every selected suite in canonical order.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let t0 = Instant::now();
    let mut reports = Vec::new();
    let mut plots = Vec::new();
    let mut files = Vec::new();
    let mut timing = Timing {
        started_unix_seconds: started,
        ..Timing::default()
    };
    for suite in cfg.selected_suites()? {
        let t = Instant::now();
        let out = run_suite(cfg, suite)?;
        timing.suites.push((suite.name().to_string(), t.elapsed().as_secs_f64()));
        reports.push(out.report);
        plots.extend(out.plots);
        files.extend(out.files);
    }
    timing.total_seconds = t0.elapsed().as_secs_f64();
    Ok(RunOutput {
        report: Report::new(cfg.seed, reports),
        plots,
        files,
        timing,
    })
}

/// Writes `report.json`, the `timing.json` sidecar, plot data and extra files.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report.to_json())?;
    let timing = serde_json::to_string_pretty(&out.timing).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("timing.json"), timing + "\n")?;
    emit_plot_data(&out.plots, dir)?;
    for (name, contents) in &out.files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn monte_carlo(cfg: &ExperimentConfig, n_steps: usize, n_paths: usize) -> Result<MonteCarlo> {
    MonteCarlo::new(cfg.band()?, cfg.grid(n_steps)?, cfg.controls()?, n_paths, cfg.seeds())
}

fn prev_power_of_two(n: usize) -> usize {
    1usize << (usize::BITS - 1 - n.max(1).leading_zeros())
}

// ---------------------------------------------------------------- axioms

const N_FEATURES: usize = 8;
/// Functional values are rounded to this lattice so that sums are exact.
const LATTICE: f64 = 1.0 / (1u64 << 20) as f64;
const LATTICE_RANGE: f64 = 1024.0;

fn features(p: &SamplePath) -> Vec<f64> {
    let n = p.n_steps();
    let bt = p.terminal();
    let mean_b: f64 = (0..n).map(|k| p.b[k] * p.grid.dt(k)).sum();
    vec![
        bt,
        p.b[n / 2],
        p.qv[n],
        p.b.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        p.b.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_b,
        (3.0 * bt).sin(),
        bt * bt,
    ]
}

fn quantize(x: f64) -> f64 {
    (x.clamp(-LATTICE_RANGE, LATTICE_RANGE) / LATTICE).round() * LATTICE
}

#[derive(Debug, Clone, Copy)]
struct RandomFunctional {
    weights: [f64; N_FEATURES],
    transform: u8,
    scale: f64,
}

impl RandomFunctional {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let mut weights = [0.0; N_FEATURES];
        for w in &mut weights {
            *w = if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 };
        }
        Self {
            weights,
            transform: rng.random_range(0..5),
            scale: rng.random_range(0.1..10.0),
        }
    }

    fn eval(&self, f: &[f64]) -> f64 {
        let s: f64 = self.weights.iter().zip(f).map(|(w, x)| w * x).sum();
        let v = match self.transform {
            0 => s,
            1 => s.abs(),
            2 => s.max(0.0),
            3 => s.tanh(),
            _ => (s > 0.5) as u8 as f64,
        };
        quantize(self.scale * v)
    }
}

fn axioms(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::new(Suite::Axioms, cfg.seed);
    let n_paths = prev_power_of_two(cfg.axioms.n_paths);
    let mc = monte_carlo(cfg, cfg.grid.n_steps, n_paths)?;
    let ids = mc.control_ids();
    let feats = mc.evaluate(N_FEATURES, |p| Ok(features(p)))?;
    let nc = ids.len();
    let mut rng = cfg.seeds().slot(AXIOMS_STREAM, 0).rng();
    let specs: Vec<(RandomFunctional, RandomFunctional, f64, f64)> = (0..cfg.axioms.n_pairs)
        .map(|_| {
            let x = RandomFunctional::draw(&mut rng);
            let y = RandomFunctional::draw(&mut rng);
            let c = quantize(rng.random_range(-10.0..10.0));
            let lambda = rng.random_range(1..=64) as f64 / 16.0;
            (x, y, c, lambda)
        })
        .collect();
    let sample = |f: &dyn Fn(&[f64]) -> f64| -> Vec<Vec<f64>> {
        (0..nc)
            .map(|c| {
                (0..n_paths)
                    .map(|i| {
                        let row: Vec<f64> = (0..N_FEATURES).map(|m| feats[m][c][i]).collect();
                        f(&row)
                    })
                    .collect()
            })
            .collect()
    };
    let violations: Vec<[usize; 4]> = specs
        .par_iter()
        .map(|(x, y, c, lambda)| {
            let xs = sample(&|r| x.eval(r));
            let ys = sample(&|r| y.eval(r));
            let est = |s: &[Vec<f64>]| ExpectationEstimate::from_samples(&ids, s).map(|e| e.value);
            let combine = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
                xs.iter()
                    .zip(&ys)
                    .map(|(a, b)| a.iter().zip(b).map(|(u, v)| f(*u, *v)).collect())
                    .collect()
            };
            let ex = est(&xs)?;
            let ey = est(&ys)?;
            let dominating = combine(&|u, v| u + v.abs());
            let mono = est(&dominating)? < ex;
            let constant = est(&vec![vec![*c; n_paths]; nc])? != *c;
            let sub = est(&combine(&|u, v| u + v))? > ex + ey;
            let scaled: Vec<Vec<f64>> = xs.iter().map(|r| r.iter().map(|u| lambda * u).collect()).collect();
            let homog = est(&scaled)? != lambda * ex;
            Ok([mono as usize, constant as usize, sub as usize, homog as usize])
        })
        .collect::<Result<_>>()?;
    let total = |j: usize| violations.iter().map(|v| v[j]).sum::<usize>();
    let desc = |what: &str| format!("{what}; {} random functional pairs, {nc} scenarios x {n_paths} paths", specs.len());
    for (j, (name, anchor, what)) in [
        ("monotonicity", "sublinear-axiom:monotonicity", "E^[X + |Y|] >= E^[X]"),
        ("constant-preserving", "sublinear-axiom:constant-preserving", "E^[c] = c"),
        ("sub-additivity", "sublinear-axiom:sub-additivity", "E^[X + Y] <= E^[X] + E^[Y]"),
        ("positive-homogeneity", "sublinear-axiom:positive-homogeneity", "E^[lambda X] = lambda E^[X]"),
    ]
    .into_iter()
    .enumerate()
    {
        let v = total(j);
        out.report
            .push(CaseRecord::exact(format!("axioms/{name}"), anchor, desc(what), v == 0, v as f64, 0.0));
    }
    Ok(out)
}

// ------------------------------------------------------------- integrals

fn integrals(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::new(Suite::Integrals, cfg.seed);
    let ic = &cfg.integrals;
    let k = cfg.tolerances.n_std_errors;
    let band = cfg.band()?;
    let horizon = cfg.grid.horizon;

    // G-normal absolute moments of B_T.
    let mc = monte_carlo(cfg, ic.moment_steps, ic.moment_paths)?;
    let orders = ic.moment_orders.clone();
    let est = mc.estimate_many(orders.len(), |p| Ok(orders.iter().map(|&q| p.terminal().abs().powf(q)).collect()))?;
    for (q, e) in ic.moment_orders.iter().zip(&est) {
        let oracle = gnormal_abs_moment(*q, &band)? * horizon.powf(q / 2.0);
        out.report.push(CaseRecord::statistical(
            format!("integrals/gnormal-moment-p{q}"),
            "g-normal:absolute-moment",
            format!("E^[|B_T|^{q}] against the G-normal closed form; tolerance {k} se"),
            e.value,
            oracle,
            k * e.std_error,
        ));
    }

    // Zero mean, energy and maximal inequalities over random simple processes.
    let mc = monte_carlo(cfg, cfg.grid.n_steps, ic.n_paths)?;
    let mut rng = cfg.seeds().slot(INTEGRALS_STREAM, 0).rng();
    let s2 = band.sigma_hi * band.sigma_hi;
    let mut deterministic = 0usize;
    for j in 0..ic.n_processes {
        let eta = random_simple_process(&mut rng, &mc.grid, ic.max_pieces, ic.bound);
        let ch = integral_checks(&format!("eta-{j:03}"), &eta, &mc)?;
        let id = |what: &str| format!("integrals/eta-{j:03}/{what}");
        if ch.mean.value < ch.conjugate_mean.value || ch.energy.value > ic.bound * ic.bound * horizon * (1.0 + 1e-12) {
            deterministic += 1;
        }
        out.report.push(CaseRecord::statistical(
            id("zero-mean"),
            "integral:zero-mean",
            "E^[int eta dB] = 0",
            ch.mean.value,
            0.0,
            k * ch.mean.std_error,
        ));
        out.report.push(CaseRecord::statistical(
            id("zero-mean-conjugate"),
            "integral:zero-mean",
            "-E^[-int eta dB] = 0",
            ch.conjugate_mean.value,
            0.0,
            k * ch.conjugate_mean.std_error,
        ));
        out.report.push(CaseRecord::statistical_upper(
            id("energy"),
            "integral:energy-bound",
            "E^[I^2] <= sigma_hi^2 E^[int eta^2 dt]",
            ch.second_moment.value,
            s2 * ch.energy.value,
            k * numeric::pooled(ch.second_moment.std_error, s2 * ch.energy.std_error),
        ));
        out.report.push(CaseRecord::statistical_upper(
            id("maximal"),
            "integral:maximal-bound",
            "E^[max_t I_t^2] <= 2 sigma_hi^2 E^[int eta^2 dt]",
            ch.running_max_sq.value,
            2.0 * s2 * ch.energy.value,
            k * numeric::pooled(ch.running_max_sq.std_error, 2.0 * s2 * ch.energy.std_error),
        ));
    }
    out.report.push(CaseRecord::exact(
        "integrals/corpus/deterministic",
        "integral:zero-mean",
        "upper mean >= lower mean and int eta^2 dt <= bound^2 T on every process",
        deterministic == 0,
        deterministic as f64,
        0.0,
    ));

    // Truncation tails.
    let mc = monte_carlo(cfg, ic.truncation_steps, ic.truncation_paths)?;
    let levels = ic.truncation_levels.clone();
    let est = mc.estimate_many(levels.len(), |p| {
        levels
            .iter()
            .map(|&n| {
                let v: Vec<f64> = p.b.iter().map(|b| if b.abs() > n { b * b } else { 0.0 }).collect();
                Ok(integrate_samples(&v, p, IntegralKind::Dt)?.final_value())
            })
            .collect()
    })?;
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    let increases = order.windows(2).filter(|w| est[w[1]].value > est[w[0]].value).count();
    out.report.push(CaseRecord::exact(
        "integrals/truncation/decreasing",
        "integral:truncation-tail",
        "E^[int |B|^2 1{|B| > n} dt] is non-increasing in n",
        increases == 0,
        increases as f64,
        0.0,
    ));
    for (n, e) in levels.iter().zip(&est) {
        let oracle = gaussian_truncation_tail(*n, band.sigma_hi, &mc.grid);
        out.report.push(CaseRecord::statistical_lower(
            format!("integrals/truncation/n{n}/dominating-control"),
            "integral:truncation-tail",
            "sup estimate is at least the constant sigma_hi Gaussian value",
            e.value,
            oracle,
            k * e.std_error,
        ));
    }
    if let Some(&last) = order.last() {
        out.report.push(CaseRecord::statistical_upper(
            format!("integrals/truncation/n{}/below-threshold", levels[last]),
            "integral:truncation-tail",
            "tail at the largest level is below the configured threshold",
            est[last].value,
            cfg.tolerances.truncation_max,
            0.0,
        ));
    }
    // Absolute continuity: small E^[int |eta| dt] forces small E^[int |B|^2 |eta| dt].
    let thresholds = ic.ac_thresholds.clone();
    let ac = mc.estimate_many(2 * thresholds.len(), |p| {
        let mut v = Vec::with_capacity(2 * thresholds.len());
        for &a in &thresholds {
            let ind: Vec<f64> = p.b.iter().map(|b| (b.abs() > a) as u8 as f64).collect();
            let weighted: Vec<f64> = p.b.iter().zip(&ind).map(|(b, i)| b * b * i).collect();
            v.push(integrate_samples(&ind, p, IntegralKind::Dt)?.final_value());
            v.push(integrate_samples(&weighted, p, IntegralKind::Dt)?.final_value());
        }
        Ok(v)
    })?;
    let mut admitted = 0;
    for (j, a) in thresholds.iter().enumerate() {
        let (mass, weighted) = (&ac[2 * j], &ac[2 * j + 1]);
        if mass.value > ic.ac_delta {
            continue;
        }
        admitted += 1;
        out.report.push(CaseRecord::statistical_upper(
            format!("integrals/absolute-continuity/a{a}"),
            "integral:absolute-continuity",
            format!(
                "eta = 1{{|B| > {a}}} has E^[int eta dt] = {} <= delta = {}; E^[int |B|^2 eta dt] <= epsilon",
                mass.value, ic.ac_delta
            ),
            weighted.value,
            ic.ac_epsilon,
            k * weighted.std_error,
        ));
    }
    out.report.push(
        CaseRecord::exact(
            "integrals/absolute-continuity/admitted",
            "integral:absolute-continuity",
            "number of candidate integrands meeting the delta precondition",
            true,
            admitted as f64,
            thresholds.len() as f64,
        )
        .warn_if(admitted == 0),
    );
    out.plots.push(PlotSeries::new(
        "integrals_truncation_tail.csv",
        "n",
        "tail",
        order.iter().map(|&i| (levels[i], est[i].value)).collect(),
    ));
    Ok(out)
}

// -------------------------------------------------------------- stopping

fn stopping(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::new(Suite::Stopping, cfg.seed);
    let sc = &cfg.stopping;
    let band = cfg.band()?;
    let controls = cfg.controls()?;
    let seeds = cfg.seeds();
    let grid = Arc::new(cfg.grid(sc.n_steps)?);
    let horizon = grid.horizon();
    let nc = controls.len();

    // Stopped-integral identity on (eta, tau) pairs.
    let paths: Vec<SamplePath> = (0..sc.n_paths)
        .into_par_iter()
        .map(|i| generate_path(&controls.0[i % nc], grid.clone(), &band, seeds.slot(COMMON_SLOT, i as u64)))
        .collect::<Result<_>>()?;
    let mut rng = seeds.slot(STOPPING_STREAM, 0).rng();
    let pairs: Vec<(GridProcess, StoppingTime, f64)> = (0..sc.n_pairs)
        .map(|_| {
            let eta = GridProcess::from_integrand(random_simple_process(&mut rng, &grid, 8, cfg.integrals.bound));
            let tau = random_stopping_time(&mut rng, horizon);
            let t = grid.t(rng.random_range(0..=grid.n_steps()));
            (eta, tau, t)
        })
        .collect();
    let worst: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|(eta, tau, t)| {
            let mut max = 0.0f64;
            let mut mismatches = 0;
            for p in &paths {
                for tt in [*t, horizon] {
                    let d = (stopped_integral(eta, tau, tt, p)? - integral_of_stopped(eta, tau, tt, p)?).abs();
                    if d != 0.0 {
                        mismatches += 1;
                    }
                    max = max.max(d);
                }
            }
            Ok((max, mismatches))
        })
        .collect::<Result<_>>()?;
    let max_diff = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let mismatches: usize = worst.iter().map(|w| w.1).sum();
    out.report.push(CaseRecord::exact(
        "stopping/stopped-integral",
        "stopping:stopped-integral",
        format!(
            "max |int_0^(t^tau) eta dB - int_0^t 1[0,tau] eta dB| over {} pairs x {} paths x 2 times; {mismatches} mismatches",
            pairs.len(),
            paths.len()
        ),
        max_diff == 0.0,
        max_diff,
        0.0,
    ));

    // Dyadic sandwich and indicator gap.
    let mut taus: Vec<StoppingTime> = sc.times.iter().map(|t| t.build(horizon)).collect();
    let configured = taus.len();
    taus.extend((0..4).map(|_| random_stopping_time(&mut rng, horizon)));
    let max_level = sc.dyadic_max_level;
    let nt = taus.len();
    let mc = MonteCarlo::new(band, (*grid).clone(), controls.clone(), sc.dyadic_paths, seeds)?;
    let taus_ref = &taus;
    let gaps = mc.evaluate(nt * max_level as usize, |p| {
        let mut v = Vec::with_capacity(nt * max_level as usize);
        for tau in taus_ref {
            let t = evaluate(tau, p)?;
            for n in 1..=max_level {
                v.push(dyadic_upper(tau, n, p)? - t);
            }
        }
        Ok(v)
    })?;
    let ids = mc.control_ids();
    let mut gap_rows = Vec::new();
    let mut gap_bounds = Vec::new();
    for n in 1..=max_level {
        let mesh = horizon / (1u64 << n) as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut worst: Option<ExpectationEstimate> = None;
        for ti in 0..nt {
            let s = &gaps[ti * max_level as usize + (n as usize - 1)];
            for v in s.iter().flatten() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            let e = ExpectationEstimate::from_samples(&ids, s)?;
            let k = cfg.tolerances.n_std_errors;
            if worst.as_ref().is_none_or(|w| e.value - k * e.std_error > w.value - k * w.std_error) {
                worst = Some(e);
            }
        }
        out.report.push(CaseRecord::exact(
            format!("stopping/dyadic-sandwich/n{n}"),
            "stopping:dyadic-sandwich",
            format!("0 <= tau_n - tau <= 2^-{n} T on every path; observed is the largest gap, smallest gap {lo}"),
            lo >= 0.0 && hi <= mesh,
            hi,
            mesh,
        ));
        let w = worst.expect("at least one stopping time");
        out.report.push(CaseRecord::statistical_upper(
            format!("stopping/indicator-gap/n{n}"),
            "stopping:indicator-gap",
            "E^[int |1[0,tau_n] - 1[0,tau]| dt] <= 2^-n T for the least favourable stopping time",
            w.value,
            mesh,
            cfg.tolerances.n_std_errors * w.std_error,
        ));
        gap_rows.push((n as f64, hi));
        gap_bounds.push(mesh);
    }
    out.plots
        .push(PlotSeries::new("stopping_dyadic_gap.csv", "n", "max_gap", gap_rows).with_upper_bounds(gap_bounds));
    for (i, tau) in taus.iter().take(configured).enumerate() {
        let mut buf = Vec::new();
        write_stop_times_csv(&mut buf, tau, 4.min(max_level), &paths)?;
        out.files.push((format!("stopping_stop_times_{i}.csv"), String::from_utf8(buf).expect("ascii")));
    }
    Ok(out)
}

// ------------------------------------------------------------------- ito

fn ito(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::new(Suite::Ito, cfg.seed);
    let ic = &cfg.ito;
    let tol = &cfg.tolerances;
    let b = Semimartingale::brownian();
    let mc = monte_carlo(cfg, ic.levels[0], ic.n_paths)?;
    let centre = 0.5 * (tol.order_min + tol.order_max);
    let half = 0.5 * (tol.order_max - tol.order_min);

    for name in &ic.functions {
        let phi = library::by_name(name).ok_or_else(|| Error::Config(format!("unknown function '{name}'")))?;
        let rep = ito_formula::verify(&phi, &b, &mc, &ic.levels)?;
        let s = slug(name);
        let bumps = rep.levels.windows(2).filter(|w| w[1].rms >= w[0].rms).count();
        out.report.push(
            CaseRecord::exact(
                format!("ito/{s}/rms-decreasing"),
                "ito:residual-convergence",
                format!("RMS residual of {name} strictly decreasing over {:?} steps", ic.levels),
                bumps == 0,
                bumps as f64,
                0.0,
            )
            .statistical_kind(),
        );
        out.report.push(CaseRecord::statistical(
            format!("ito/{s}/order"),
            "ito:residual-convergence",
            format!("least-squares convergence order of the {name} residual over all levels"),
            rep.fitted_order,
            centre,
            half,
        ));
        for (w, o) in rep.levels.windows(2).zip(&rep.order_estimates) {
            let mut case = CaseRecord::statistical(
                format!("ito/{s}/order-{}-{}", w[0].n_steps, w[1].n_steps),
                "ito:residual-convergence",
                format!("successive-level order of the {name} residual (diagnostic, warns outside the band)"),
                *o,
                centre,
                half,
            );
            if case.status == Status::Fail {
                case.status = Status::Warn;
            }
            out.report.push(case);
        }
        out.plots.push(PlotSeries::new(
            format!("ito_convergence_{s}.csv"),
            "n_steps",
            "rms",
            rep.levels.iter().map(|l| (l.n_steps as f64, l.rms)).collect(),
        ));
        out.files.push((format!("ito_residual_{s}.json"), rep.to_json() + "\n"));
    }

    for phi in [library::identity(), library::affine(-1.5, 0.25)] {
        let rep = ito_formula::verify(&phi, &b, &mc, &ic.levels)?;
        let worst = rep.levels.iter().map(|l| l.max_abs).fold(0.0, f64::max);
        out.report.push(CaseRecord::within(
            format!("ito/affine/{}", if phi.name() == "x" { "identity" } else { "slope-intercept" }),
            "ito:affine-exact",
            "largest |residual| over every grid time, path and level; zero up to rounding",
            worst,
            0.0,
            tol.rounding,
        ));
    }

    // Localized formula against the clamped function.
    let loc = Localization {
        level: ic.localization_level,
        sequence: LocalizationSequence::exit_level(),
    };
    let grid = Arc::new(cfg.grid(ic.levels[0])?);
    let controls = cfg.controls()?;
    let nc = controls.len();
    for name in &ic.functions {
        let phi = library::by_name(name).expect("validated");
        let counts: Vec<(usize, usize, usize)> = (0..ic.localization_paths)
            .into_par_iter()
            .map(|i| {
                let p = generate_path(&controls.0[i % nc], grid.clone(), &mc.band, mc.seeds.slot(COMMON_SLOT, i as u64))?;
                let cmp = ito_formula::compare_localized(&phi, &b, &p, &loc)?;
                Ok((cmp.in_range as usize, (cmp.in_range && !cmp.identical()) as usize, cmp.stopped_early as usize))
            })
            .collect::<Result<_>>()?;
        let in_range: usize = counts.iter().map(|c| c.0).sum();
        let mismatches: usize = counts.iter().map(|c| c.1).sum();
        let stopped: usize = counts.iter().map(|c| c.2).sum();
        out.report.push(
            CaseRecord::exact(
                format!("ito/localization/{}", slug(name)),
                "ito:localization",
                format!(
                    "residual series of (phi, X^tau_k) vs (phi_k, X^tau_k), k = {}; {in_range} in-range paths, {stopped} stopped early",
                    loc.level
                ),
                mismatches == 0,
                mismatches as f64,
                0.0,
            )
            .warn_if(in_range == 0),
        );
    }

    // Remainder diagnostics for sin on a process with every coefficient active.
    let x = Semimartingale::constant_coefficients(0.0, 0.5, 0.5, 1.0);
    let rmc = monte_carlo(cfg, ic.remainder_levels[0], ic.remainder_paths)?;
    let levels = ito_formula::remainder_study(&library::sine(), &x, &rmc, &ic.remainder_levels)?;
    let k = tol.n_std_errors;
    for w in levels.windows(2) {
        let (a, c) = (&w[0], &w[1]);
        out.report.push(CaseRecord::statistical_upper(
            format!("ito/remainder/taylor-{}-{}", a.n_steps, c.n_steps),
            "ito:taylor-remainder",
            "E^[|sum eta_k|^2] does not increase when N doubles",
            c.taylor_sum_sq.value,
            a.taylor_sum_sq.value,
            k * numeric::pooled(a.taylor_sum_sq.std_error, c.taylor_sum_sq.std_error),
        ));
        for (m, term) in ito_formula::CrossTerms::NAMES.iter().enumerate() {
            out.report.push(CaseRecord::statistical_upper(
                format!("ito/remainder/{term}-{}-{}", a.n_steps, c.n_steps),
                "ito:cross-terms",
                format!("second moment of the {term} cross term does not increase when N doubles"),
                c.cross_sq[m].value,
                a.cross_sq[m].value,
                k * numeric::pooled(a.cross_sq[m].std_error, c.cross_sq[m].std_error),
            ));
        }
    }
    for l in &levels {
        out.report.push(CaseRecord::exact(
            format!("ito/remainder/taylor-envelope-{}", l.n_steps),
            "ito:taylor-remainder",
            "E^[|sum eta_k|^2] <= N sum_k E^[|eta_k|^2]",
            l.taylor_sum_sq.value <= l.taylor_envelope * (1.0 + 1e-12),
            l.taylor_sum_sq.value,
            l.taylor_envelope,
        ));
    }
    out.plots.push(PlotSeries::new(
        "ito_taylor_remainder.csv",
        "n_steps",
        "second_moment",
        levels.iter().map(|l| (l.n_steps as f64, l.taylor_sum_sq.value)).collect(),
    ));
    let fine = Arc::new(cfg.grid(*ic.remainder_levels.last().expect("validated"))?);
    let nonzero: usize = (0..ic.remainder_paths.min(200))
        .into_par_iter()
        .map(|i| {
            let p = generate_path(&controls.0[i % nc], fine.clone(), &mc.band, mc.seeds.slot(COMMON_SLOT, i as u64))?;
            let t = ito_formula::step_remainders(&library::square(), &x, &p)?;
            Ok(t.taylor.iter().filter(|&&v| v != 0.0).count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    out.report.push(CaseRecord::exact(
        "ito/remainder/quadratic-zero",
        "ito:quadratic-remainder",
        "number of nonzero eta_k for phi = x^2",
        nonzero == 0,
        nonzero as f64,
        0.0,
    ));
    Ok(out)
}

// ------------------------------------------------------------------- pde

fn pde_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::new(Suite::Pde, cfg.seed);
    let pc = &cfg.pde;
    let band = cfg.band()?;
    let horizon = cfg.grid.horizon;
    let mc = monte_carlo(cfg, pc.mc_steps, pc.n_paths)?;
    let grid = PdeGrid::centered(&band, horizon, pc.x0, pc.buffer_sigmas, pc.dx)?;
    let tol = &cfg.tolerances;

    let c = 1.25;
    let cv = pde::cross_validate(&TerminalPayoff::constant(c), pc.x0, &mc, &grid, tol.pde_scheme)?;
    out.report.push(CaseRecord::exact(
        "pde/constant",
        "pde:constant",
        format!("constant payoff {c}: observed is the Monte Carlo value, PDE gave {}", cv.pde_value),
        cv.mc_value == c && cv.pde_value == c,
        cv.mc_value,
        c,
    ));

    for name in &pc.payoffs {
        let phi = TerminalPayoff::by_name(name).ok_or_else(|| Error::Config(format!("unknown payoff '{name}'")))?;
        let s = slug(name);
        let surface = pde::solve(&phi, &band, &grid, pc.snapshots)?;
        let pde_value = surface.value_at(pc.x0);
        let est = mc.sup_expectation(&phi.as_payoff(pc.x0, horizon))?;
        let allowed = (tol.pde_relative * pde_value.abs()).max(tol.n_std_errors * est.std_error + tol.pde_scheme);
        let warn = grid.buffer_at(pc.x0) < 6.0 * band.sigma_hi * horizon.sqrt();
        out.report.push(
            CaseRecord::statistical(
                format!("pde/{s}/mc-vs-pde"),
                "pde:g-heat-cross-check",
                format!("Monte Carlo (argmax {}) against the G-heat equation", est.argmax_control_id),
                est.value,
                pde_value,
                allowed,
            )
            .warn_if(warn),
        );
        // convex payoffs select sigma_hi, concave ones sigma_lo
        let sigma = if name == "-x^2" { band.sigma_lo } else { band.sigma_hi };
        if let Some(closed) = pde::gaussian_closed_form(name, sigma, pc.x0, horizon) {
            let rel = tol.pde_relative * closed.abs();
            out.report.push(CaseRecord::within(
                format!("pde/{s}/pde-closed-form"),
                "pde:closed-form",
                format!("PDE value against E[phi(x0 + {sigma} W_T)]"),
                pde_value,
                closed,
                rel,
            ));
            out.report.push(CaseRecord::statistical(
                format!("pde/{s}/mc-closed-form"),
                "pde:closed-form",
                format!("Monte Carlo value against E[phi(x0 + {sigma} W_T)]"),
                est.value,
                closed,
                rel.max(tol.n_std_errors * est.std_error),
            ));
        }
        let last = surface.final_values();
        out.plots.push(PlotSeries::new(
            format!("pde_{s}.csv"),
            "x",
            "u",
            (0..grid.n_x).map(|i| (grid.x(i), last[i])).collect(),
        ));
        let mut buf = Vec::new();
        surface.write_csv(&mut buf)?;
        out.files.push((format!("pde_{s}_surface.csv"), String::from_utf8(buf).expect("ascii")));
    }
    Ok(out)
}
