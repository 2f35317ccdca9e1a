//! Sublinear expectation as a supremum of scenario means.
//!
//! Every scenario in a [`MonteCarlo`] run is driven by the same normal draws
//! for a given path index (common random numbers). Combined with the exact
//! reduction in [`crate::numeric`], the estimator `max_c mean_c(X)` then
//! satisfies monotonicity and constant preservation sample by sample, and
//! sub-additivity and positive homogeneity whenever the arithmetic on the
//! sample values is exact.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::numeric;
use crate::rng::{SeedPolicy, COMMON_SLOT};
use crate::scenario::{generate_path, ControlSet, PathView, SamplePath, TimeGrid, VolatilityBand};

/// The one-dimensional generator `G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    pub band: VolatilityBand,
}

impl GFunction {
    pub fn new(band: VolatilityBand) -> Self {
        Self { band }
    }

    pub fn eval(&self, a: f64) -> f64 {
        g_eval(self, a)
    }
}

pub fn g_eval(g: &GFunction, a: f64) -> f64 {
    let (lo, hi) = (g.band.sigma_lo, g.band.sigma_hi);
    0.5 * (hi * hi * a.max(0.0) - lo * lo * (-a).max(0.0))
}

/// `E^[|X|^p]` for `X` G-normal: the p-th absolute moment of a centered
/// Gaussian with variance `2 G(1) = sigma_hi^2`,
/// `sigma_hi^p 2^{p/2} Gamma((p+1)/2) / sqrt(pi)`.
pub fn gnormal_abs_moment(p: f64, band: &VolatilityBand) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("moment order p must be >= 1, got {p}")));
    }
    band.validate()?;
    let variance = 2.0 * g_eval(&GFunction::new(*band), 1.0);
    let sigma = variance.sqrt();
    Ok(sigma.powf(p) * 2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt())
}

type PayoffFn = dyn Fn(&PathView<'_>) -> f64 + Send + Sync;

/// A random variable: a functional of the path up to a horizon.
#[derive(Clone)]
pub struct Payoff {
    horizon: Option<f64>,
    f: Arc<PayoffFn>,
}

impl std::fmt::Debug for Payoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Payoff").field("horizon", &self.horizon).finish()
    }
}

impl Payoff {
    /// A functional that only sees the path on `[0, horizon]`.
    pub fn new(horizon: f64, f: impl Fn(&PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            horizon: Some(horizon),
            f: Arc::new(f),
        }
    }

    /// A functional of the whole simulated path.
    pub fn whole_path(f: impl Fn(&PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self { horizon: None, f: Arc::new(f) }
    }

    /// `g(B_t)` read at time `t`.
    pub fn at_time(t: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(t, move |v| g(v.b_now()))
    }

    pub fn constant(c: f64) -> Self {
        Self::whole_path(move |_| c)
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn negate(&self) -> Self {
        let f = self.f.clone();
        Self {
            horizon: self.horizon,
            f: Arc::new(move |v| -f(v)),
        }
    }

    pub fn eval(&self, path: &SamplePath) -> Result<f64> {
        let k = match self.horizon {
            None => path.n_steps(),
            Some(h) => path.grid.index_at_or_after(h).ok_or_else(|| {
                Error::Config(format!("payoff horizon {h} exceeds grid horizon {}", path.horizon()))
            })?,
        };
        Ok((self.f)(&path.view_until(k)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMean {
    pub control_id: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Sup over scenarios of the Monte Carlo means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEstimate {
    pub value: f64,
    /// Standard error of the selected scenario's mean.
    pub std_error: f64,
    pub argmax_control_id: String,
    pub argmax_index: usize,
    pub per_scenario: Vec<ScenarioMean>,
    pub n_paths: usize,
    pub n_scenarios: usize,
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    value: f64,
    std_error: f64,
    argmax_control_id: &'a str,
    n_paths: usize,
}

impl ExpectationEstimate {
    /// Reduces per-scenario samples (`samples[c][i]` = value on path `i` under scenario `c`).
    pub fn from_samples(control_ids: &[String], samples: &[Vec<f64>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("empty control set".into()));
        }
        let per_scenario: Vec<ScenarioMean> = samples
            .iter()
            .zip(control_ids)
            .map(|(xs, id)| {
                let (mean, std_error) = numeric::mean_and_se(xs);
                ScenarioMean {
                    control_id: id.clone(),
                    mean,
                    std_error,
                }
            })
            .collect();
        let mut best = 0;
        for (i, s) in per_scenario.iter().enumerate() {
            if s.mean > per_scenario[best].mean {
                best = i;
            }
        }
        Ok(Self {
            value: per_scenario[best].mean,
            std_error: per_scenario[best].std_error,
            argmax_control_id: per_scenario[best].control_id.clone(),
            argmax_index: best,
            n_paths: samples[0].len(),
            n_scenarios: samples.len(),
            per_scenario,
        })
    }

    /// The conjugate estimate `-E^[-X]` (the minimum scenario mean).
    pub fn conjugate(&self) -> Self {
        let mut worst = 0;
        for (i, s) in self.per_scenario.iter().enumerate() {
            if s.mean < self.per_scenario[worst].mean {
                worst = i;
            }
        }
        let w = &self.per_scenario[worst];
        Self {
            value: w.mean,
            std_error: w.std_error,
            argmax_control_id: w.control_id.clone(),
            argmax_index: worst,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&EstimateJson {
            value: self.value,
            std_error: self.std_error,
            argmax_control_id: &self.argmax_control_id,
            n_paths: self.n_paths,
        })
        .expect("serializable")
    }

    pub fn write_means_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "control_id,mean,std_error")?;
        for s in &self.per_scenario {
            writeln!(w, "\"{}\",{},{}", s.control_id, s.mean, s.std_error)?;
        }
        Ok(())
    }
}

/// A common-random-numbers Monte Carlo run over a finite scenario family.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub band: VolatilityBand,
    pub grid: Arc<TimeGrid>,
    pub controls: ControlSet,
    pub n_paths: usize,
    pub seeds: SeedPolicy,
}

impl MonteCarlo {
    pub fn new(
        band: VolatilityBand,
        grid: TimeGrid,
        controls: ControlSet,
        n_paths: usize,
        seeds: SeedPolicy,
    ) -> Result<Self> {
        band.validate()?;
        if controls.is_empty() {
            return Err(Error::Config("empty control set".into()));
        }
        if n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        Ok(Self {
            band,
            grid: Arc::new(grid),
            controls,
            n_paths,
            seeds,
        })
    }

    pub fn control_ids(&self) -> Vec<String> {
        self.controls.iter().map(|c| c.id()).collect()
    }

    /// Path `i` under scenario `c`; every scenario reuses the normals of path `i`.
    pub fn path(&self, c: usize, i: usize) -> Result<SamplePath> {
        generate_path(
            &self.controls.0[c],
            self.grid.clone(),
            &self.band,
            self.seeds.slot(COMMON_SLOT, i as u64),
        )
    }

    /// Evaluates `f` on every (scenario, path) cell. Returns `out[j][c][i]`:
    /// functional `j`, scenario `c`, path `i`.
    pub fn evaluate<F>(&self, n_functionals: usize, f: F) -> Result<Vec<Vec<Vec<f64>>>>
    where
        F: Fn(&SamplePath) -> Result<Vec<f64>> + Sync,
    {
        let mut out = vec![Vec::with_capacity(self.controls.len()); n_functionals];
        for c in 0..self.controls.len() {
            let rows: Vec<Vec<f64>> = (0..self.n_paths)
                .into_par_iter()
                .map(|i| {
                    let path = self.path(c, i)?;
                    let v = f(&path)?;
                    if v.len() != n_functionals {
                        return Err(Error::Contract(format!(
                            "functional returned {} values, expected {n_functionals}",
                            v.len()
                        )));
                    }
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            for (j, col) in out.iter_mut().enumerate() {
                col.push(rows.iter().map(|r| r[j]).collect());
            }
        }
        Ok(out)
    }

    /// Sup estimates for several functionals evaluated on shared samples.
    pub fn estimate_many<F>(&self, n_functionals: usize, f: F) -> Result<Vec<ExpectationEstimate>>
    where
        F: Fn(&SamplePath) -> Result<Vec<f64>> + Sync,
    {
        let ids = self.control_ids();
        self.evaluate(n_functionals, f)?
            .iter()
            .map(|s| ExpectationEstimate::from_samples(&ids, s))
            .collect()
    }

    fn check_horizon(&self, x: &Payoff) -> Result<()> {
        match x.horizon() {
            Some(h) if h > self.grid.horizon() * (1.0 + 1e-12) => Err(Error::Config(format!(
                "payoff horizon {h} exceeds grid horizon {}",
                self.grid.horizon()
            ))),
            _ => Ok(()),
        }
    }

    /// `E^[X] ~ max_c mean_c(X)`.
    pub fn sup_expectation(&self, x: &Payoff) -> Result<ExpectationEstimate> {
        self.check_horizon(x)?;
        Ok(self.estimate_many(1, |p| Ok(vec![x.eval(p)?]))?.remove(0))
    }

    /// `-E^[-X]`, sharing samples with [`Self::sup_expectation`].
    pub fn lower_expectation(&self, x: &Payoff) -> Result<ExpectationEstimate> {
        Ok(self.sup_expectation(x)?.conjugate())
    }

    /// Upper and lower expectation from one set of samples.
    pub fn bounds(&self, x: &Payoff) -> Result<(ExpectationEstimate, ExpectationEstimate)> {
        let upper = self.sup_expectation(x)?;
        let lower = upper.conjugate();
        Ok((upper, lower))
    }

    /// Capacity `c^(A) = sup_c P_c(A)` of a path event.
    pub fn capacity_estimate(
        &self,
        horizon: Option<f64>,
        event: impl Fn(&PathView<'_>) -> bool + Send + Sync + 'static,
    ) -> Result<ExpectationEstimate> {
        let ind = move |v: &PathView<'_>| if event(v) { 1.0 } else { 0.0 };
        let payoff = match horizon {
            Some(h) => Payoff::new(h, ind),
            None => Payoff::whole_path(ind),
        };
        self.sup_expectation(&payoff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::VolatilityControl;

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    fn mc(n_paths: usize, controls: ControlSet) -> MonteCarlo {
        MonteCarlo::new(band12(), TimeGrid::uniform(1.0, 8).unwrap(), controls, n_paths, SeedPolicy::new(11)).unwrap()
    }

    #[test]
    fn g_eval_examples() {
        let g = GFunction::new(band12());
        assert_eq!(g.eval(0.0), 0.0);
        assert_eq!(g.eval(1.0), 2.0);
        assert_eq!(g.eval(-1.0), -0.5);
    }

    #[test]
    fn g_eval_matches_sup_over_constant_volatilities() {
        // oracle: G(a) = sup over sigma in the band of sigma^2 a / 2
        let band = band12();
        let g = GFunction::new(band);
        for i in -20..=20 {
            let a = i as f64 * 0.37;
            let oracle = (0..=1000)
                .map(|j| {
                    let s = 1.0 + j as f64 / 1000.0;
                    0.5 * s * s * a
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((g.eval(a) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn g_eval_is_sublinear_and_monotone() {
        let g = GFunction::new(VolatilityBand::new(0.3, 1.7).unwrap());
        let pts: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.45).collect();
        for &a in &pts {
            for &b in &pts {
                assert!(g.eval(a + b) <= g.eval(a) + g.eval(b) + 1e-12);
                if a <= b {
                    assert!(g.eval(a) <= g.eval(b));
                }
            }
            for lam in [0.0, 0.5, 1.0, 3.0] {
                assert!((g.eval(lam * a) - lam * g.eval(a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn abs_moments_closed_form() {
        let band = band12();
        assert!((gnormal_abs_moment(2.0, &band).unwrap() - 4.0).abs() < 1e-12);
        assert!((gnormal_abs_moment(1.0, &band).unwrap() - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((gnormal_abs_moment(4.0, &band).unwrap() - 48.0).abs() < 1e-10);
        assert!(matches!(gnormal_abs_moment(0.5, &band), Err(Error::Domain(_))));
    }

    #[test]
    fn abs_moment_matches_quadrature_of_the_gaussian_integral() {
        // oracle: trapezoid rule on (2 pi s^2)^{-1/2} int |x|^p exp(-x^2 / 2 s^2) dx
        let band = VolatilityBand::new(0.5, 1.3).unwrap();
        let s2 = 1.3f64 * 1.3;
        for p in [1.0, 1.5, 2.0, 3.0, 4.0] {
            let h = 1e-3;
            let mut acc = 0.0;
            let mut x: f64 = -20.0;
            while x <= 20.0 {
                acc += x.abs().powf(p) * (-x * x / (2.0 * s2)).exp() * h;
                x += h;
            }
            let q = acc / (2.0 * std::f64::consts::PI * s2).sqrt();
            let c = gnormal_abs_moment(p, &band).unwrap();
            assert!((q - c).abs() < 1e-6 * c.max(1.0), "p={p}: {q} vs {c}");
        }
    }

    #[test]
    fn constant_payoff_is_exact() {
        let m = mc(100, ControlSet::default_for(band12()));
        for c in [0.1, -3.7, 0.0, 12345.678] {
            let (u, l) = m.bounds(&Payoff::constant(c)).unwrap();
            assert_eq!(u.value, c);
            assert_eq!(l.value, c);
        }
    }

    #[test]
    fn empty_control_set_is_rejected() {
        let err = MonteCarlo::new(band12(), TimeGrid::uniform(1.0, 4).unwrap(), ControlSet(vec![]), 10, SeedPolicy::new(1));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn horizon_past_grid_is_rejected() {
        let m = mc(4, ControlSet::constants(band12(), 3));
        assert!(m.sup_expectation(&Payoff::at_time(2.0, |x| x)).is_err());
    }

    #[test]
    fn payoff_only_sees_prefix() {
        let m = mc(1, ControlSet::constants(band12(), 1));
        let p = m.path(0, 0).unwrap();
        let x = Payoff::new(0.5, |v| v.b.len() as f64);
        assert_eq!(x.eval(&p).unwrap(), 5.0);
    }

    #[test]
    fn squared_terminal_picks_extreme_volatilities() {
        let m = MonteCarlo::new(
            band12(),
            TimeGrid::uniform(1.0, 4).unwrap(),
            ControlSet::default_for(band12()),
            20_000,
            SeedPolicy::new(2),
        )
        .unwrap();
        let (u, l) = m.bounds(&Payoff::at_time(1.0, |b| b * b)).unwrap();
        assert!((u.value - 4.0).abs() <= 3.0 * u.std_error + 0.05, "{u:?}");
        assert!((l.value - 1.0).abs() <= 3.0 * l.std_error + 0.02, "{}", l.value);
        assert!(l.value <= u.value);
        let neg = m.sup_expectation(&Payoff::at_time(1.0, |b| -b * b)).unwrap();
        assert_eq!(neg.value, -l.value);
    }

    #[test]
    fn capacity_examples() {
        let band = band12();
        let m = MonteCarlo::new(band, TimeGrid::uniform(1.0, 16).unwrap(), ControlSet::constants(band, 5), 20_000, SeedPolicy::new(3))
            .unwrap();
        assert_eq!(m.capacity_estimate(None, |_| true).unwrap().value, 1.0);
        let pos = m.capacity_estimate(Some(1.0), |v| v.b_now() > 0.0).unwrap();
        assert!((pos.value - 0.5).abs() <= 3.0 * pos.std_error, "{pos:?}");
        let far = m
            .capacity_estimate(None, |v| v.b.iter().any(|x| x.abs() > 20.0))
            .unwrap();
        assert!(far.value < 1e-3);
    }

    #[test]
    fn json_and_csv_exports() {
        let m = mc(10, ControlSet(vec![VolatilityControl::Constant(1.0), VolatilityControl::Constant(2.0)]));
        let e = m.sup_expectation(&Payoff::at_time(1.0, |b| b * b)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["n_paths"], 10);
        assert!(v["argmax_control_id"].is_string());
        let mut out = Vec::new();
        e.write_means_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }
}
