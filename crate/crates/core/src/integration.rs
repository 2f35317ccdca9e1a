//! Adapted integrands and the three integrals `int eta dB`, `int eta dt`,
//! `int eta d<B>`.
//!
//! An integrand is sampled on the simulation grid: `eta_k` is its value on
//! `[t_k, t_{k+1})` and only depends on the path up to `t_k`. All integrals are
//! left-point sums, which is exact for simple processes whose breakpoints lie
//! on the grid.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::{ExpectationEstimate, MonteCarlo};
use crate::numeric;
use crate::scenario::{PathView, SamplePath, TimeGrid};

/// Anything that can be sampled as an adapted process on a path.
pub trait Integrand: Send + Sync {
    /// `eta_k` for every grid point `k = 0..=N`.
    fn sample(&self, path: &SamplePath) -> Result<Vec<f64>>;

    /// Declared uniform bound `|eta| <= bound`, if any.
    fn bound(&self) -> Option<f64> {
        None
    }
}

type Functional = Arc<dyn Fn(&PathView<'_>) -> f64 + Send + Sync>;

/// `eta_t = sum_j xi_j 1_{[t_j, t_{j+1})}(t)` with bounded adapted coefficients.
#[derive(Clone)]
pub struct SimpleProcess {
    breakpoints: Vec<f64>,
    coefficients: Vec<Functional>,
    bound: f64,
}

impl fmt::Debug for SimpleProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimpleProcess")
            .field("breakpoints", &self.breakpoints)
            .field("bound", &self.bound)
            .finish()
    }
}

impl SimpleProcess {
    /// `breakpoints` runs from `0` to the last breakpoint; coefficient `j` is
    /// evaluated on the path up to `breakpoints[j]`.
    pub fn new(
        breakpoints: Vec<f64>,
        coefficients: Vec<Functional>,
        bound: f64,
    ) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints[0] != 0.0 {
            return Err(Error::Config("breakpoints must start at 0 and contain at least two points".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("breakpoints must be strictly increasing".into()));
        }
        if coefficients.len() + 1 != breakpoints.len() {
            return Err(Error::Config(format!(
                "{} breakpoints need {} coefficients, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                coefficients.len()
            )));
        }
        if !(bound >= 0.0) {
            return Err(Error::Config("bound must be non-negative".into()));
        }
        Ok(Self {
            breakpoints,
            coefficients,
            bound,
        })
    }

    /// Deterministic step function with the given levels.
    pub fn deterministic(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let bound = levels.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let coefficients = levels
            .into_iter()
            .map(|c| Arc::new(move |_: &PathView<'_>| c) as Functional)
            .collect();
        Self::new(breakpoints, coefficients, bound)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

impl Integrand for SimpleProcess {
    fn sample(&self, path: &SamplePath) -> Result<Vec<f64>> {
        let grid = &path.grid;
        let idx: Vec<usize> = self
            .breakpoints
            .iter()
            .map(|&t| grid.index_of(t).ok_or(Error::Alignment { t }))
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; grid.n_steps() + 1];
        for (j, xi) in self.coefficients.iter().enumerate() {
            let v = xi(&path.view_until(idx[j]));
            if !v.is_finite() || v.abs() > self.bound {
                return Err(Error::Contract(format!(
                    "coefficient {j} = {v} violates declared bound {}",
                    self.bound
                )));
            }
            out[idx[j]..idx[j + 1]].fill(v);
        }
        if let Some(last) = idx.last() {
            if *last == grid.n_steps() {
                out[*last] = out[last.saturating_sub(1)];
            }
        }
        Ok(out)
    }

    fn bound(&self) -> Option<f64> {
        Some(self.bound)
    }
}

type Sampler = Arc<dyn Fn(&SamplePath) -> Result<Vec<f64>> + Send + Sync>;

/// A general adapted integrand sampled at every grid point.
#[derive(Clone)]
pub struct GridProcess {
    sampler: Sampler,
    bound: Option<f64>,
}

impl fmt::Debug for GridProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridProcess").field("bound", &self.bound).finish()
    }
}

impl GridProcess {
    /// `eta_k = rule(k, path up to t_k)`. Adapted by construction.
    pub fn adapted(rule: impl Fn(usize, &PathView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            sampler: Arc::new(move |p: &SamplePath| {
                Ok((0..=p.n_steps()).map(|k| rule(k, &p.view_until(k))).collect())
            }),
            bound: None,
        }
    }

    /// `eta_k = f(t_k, B_{t_k})`.
    pub fn of_state(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            sampler: Arc::new(move |p: &SamplePath| {
                Ok((0..=p.n_steps()).map(|k| f(p.t(k), p.b[k])).collect())
            }),
            bound: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            sampler: Arc::new(move |p: &SamplePath| Ok(vec![c; p.n_steps() + 1])),
            bound: Some(c.abs()),
        }
    }

    /// The process `B` itself.
    pub fn brownian() -> Self {
        Self::of_state(|_, b| b)
    }

    /// Wraps a whole-path sampler. The caller guarantees adaptedness.
    pub(crate) fn from_sampler(sampler: Sampler, bound: Option<f64>) -> Self {
        Self { sampler, bound }
    }

    pub(crate) fn adapted_from_path(
        f: impl Fn(&SamplePath) -> Result<Vec<f64>> + Send + Sync + 'static,
        bound: Option<f64>,
    ) -> Self {
        Self::from_sampler(Arc::new(f), bound)
    }

    pub fn from_integrand<I: Integrand + Clone + 'static>(eta: I) -> Self {
        let bound = eta.bound();
        Self {
            sampler: Arc::new(move |p: &SamplePath| eta.sample(p)),
            bound,
        }
    }

    /// Declares `|eta| <= bound`; sampling fails if a value exceeds it.
    pub fn with_bound(self, bound: f64) -> Self {
        let inner = self.sampler;
        Self {
            sampler: Arc::new(move |p: &SamplePath| {
                let v = inner(p)?;
                if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !(x.abs() <= bound)) {
                    return Err(Error::Contract(format!("value {x} at index {k} exceeds declared bound {bound}")));
                }
                Ok(v)
            }),
            bound: Some(bound),
        }
    }

    /// Pointwise map, e.g. `|eta|^p`.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let inner = self.sampler.clone();
        Self {
            sampler: Arc::new(move |p: &SamplePath| Ok(inner(p)?.into_iter().map(&f).collect())),
            bound: None,
        }
    }

    /// Pointwise combination `f(self_k, other_k)`.
    pub fn zip_with(&self, other: &GridProcess, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        let (a, b) = (self.sampler.clone(), other.sampler.clone());
        Self {
            sampler: Arc::new(move |p: &SamplePath| {
                let (x, y) = (a(p)?, b(p)?);
                Ok(x.into_iter().zip(y).map(|(u, v)| f(u, v)).collect())
            }),
            bound: None,
        }
    }
}

impl Integrand for GridProcess {
    fn sample(&self, path: &SamplePath) -> Result<Vec<f64>> {
        (self.sampler)(path)
    }

    fn bound(&self) -> Option<f64> {
        self.bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegralKind {
    /// Against `dB`.
    DB,
    /// Against `dt`.
    Dt,
    /// Against `d<B>`.
    Dqv,
}

/// Running integral `int_0^{t_k} eta` at every grid point.
#[derive(Debug, Clone)]
pub struct IntegralPath {
    pub grid: Arc<TimeGrid>,
    pub values: Vec<f64>,
    pub kind: IntegralKind,
}

impl IntegralPath {
    pub fn final_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Largest `|I_{k+1} - I_k|`.
    pub fn max_jump(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.t(k), v)?;
        }
        Ok(())
    }
}

/// Left-point running sum of pre-sampled integrand values against the chosen increments.
pub fn integrate_samples(eta: &[f64], path: &SamplePath, kind: IntegralKind) -> Result<IntegralPath> {
    let n = path.n_steps();
    if eta.len() < n {
        return Err(Error::Contract(format!("integrand has {} values for {n} steps", eta.len())));
    }
    let mut values = Vec::with_capacity(n + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for (k, &e) in eta.iter().take(n).enumerate() {
        if !e.is_finite() {
            return Err(Error::NonFinite {
                index: k,
                what: "integrand".into(),
            });
        }
        let d = match kind {
            IntegralKind::DB => path.db(k),
            IntegralKind::Dt => path.grid.dt(k),
            IntegralKind::Dqv => path.dqv(k),
        };
        acc += e * d;
        values.push(acc);
    }
    Ok(IntegralPath {
        grid: path.grid.clone(),
        values,
        kind,
    })
}

pub fn ito_integral(eta: &dyn Integrand, path: &SamplePath) -> Result<IntegralPath> {
    integrate_samples(&eta.sample(path)?, path, IntegralKind::DB)
}

pub fn bochner_integral(eta: &dyn Integrand, path: &SamplePath) -> Result<IntegralPath> {
    integrate_samples(&eta.sample(path)?, path, IntegralKind::Dt)
}

pub fn qv_integral(eta: &dyn Integrand, path: &SamplePath) -> Result<IntegralPath> {
    integrate_samples(&eta.sample(path)?, path, IntegralKind::Dqv)
}

/// Estimate of `E^[int_0^T |eta_t|^p dt]`, the p-th power of the M^p norm.
pub fn mp_norm_estimate(eta: &dyn Integrand, p: f64, mc: &MonteCarlo) -> Result<ExpectationEstimate> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("norm order p must be >= 1, got {p}")));
    }
    Ok(mc
        .estimate_many(1, |path| {
            let v: Vec<f64> = eta.sample(path)?.into_iter().map(|x| x.abs().powf(p)).collect();
            Ok(vec![integrate_samples(&v, path, IntegralKind::Dt)?.final_value()])
        })?
        .remove(0))
}

/// `||eta||_{M^p} = E^[int_0^T |eta_t|^p dt]^{1/p}`.
pub fn mp_norm(eta: &dyn Integrand, p: f64, mc: &MonteCarlo) -> Result<f64> {
    Ok(mp_norm_estimate(eta, p, mc)?.value.powf(1.0 / p))
}

/// `(-n) v (eta ^ n)`.
pub fn truncate(eta: &GridProcess, n: f64) -> Result<GridProcess> {
    if !(n > 0.0) {
        return Err(Error::Domain(format!("truncation level must be positive, got {n}")));
    }
    let inner = eta.sampler.clone();
    Ok(GridProcess::from_sampler(
        Arc::new(move |p: &SamplePath| Ok(inner(p)?.into_iter().map(|x| x.clamp(-n, n)).collect())),
        Some(eta.bound.map_or(n, |b| b.min(n))),
    ))
}

/// Pointwise product of a bounded process with any adapted process.
pub fn product(bounded: &GridProcess, x: &GridProcess) -> Result<GridProcess> {
    let Some(b) = bounded.bound else {
        return Err(Error::Contract("product needs a declared bound on the first factor".into()));
    };
    let bound = x.bound.map(|xb| xb * b);
    let (f, g) = (bounded.sampler.clone(), x.sampler.clone());
    Ok(GridProcess::from_sampler(
        Arc::new(move |p: &SamplePath| {
            let (u, v) = (f(p)?, g(p)?);
            Ok(u.into_iter().zip(v).map(|(a, c)| a * c).collect())
        }),
        bound,
    ))
}

/// Random bounded simple process for the inequality suites: at most
/// `max_pieces` grid-aligned pieces, coefficient `j` equal to
/// `a_j + c_j tanh(w_j B_{t_j} + s_j)` with `|a_j| + |c_j| <= bound`.
pub fn random_simple_process<R: Rng>(rng: &mut R, grid: &TimeGrid, max_pieces: usize, bound: f64) -> SimpleProcess {
    let n = grid.n_steps();
    let pieces = rng.random_range(1..=max_pieces.min(n).max(1));
    let mut cuts: Vec<usize> = (1..n).collect();
    // partial Fisher-Yates for `pieces - 1` interior cut points
    for i in 0..(pieces - 1) {
        let j = rng.random_range(i..cuts.len());
        cuts.swap(i, j);
    }
    let mut idx: Vec<usize> = cuts[..pieces - 1].to_vec();
    idx.push(0);
    idx.push(n);
    idx.sort_unstable();
    let breakpoints: Vec<f64> = idx.iter().map(|&k| grid.t(k)).collect();
    let coefficients = (0..pieces)
        .map(|_| {
            let share: f64 = rng.random_range(0.0..=1.0);
            let a = bound * share * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let c = bound * (1.0 - share) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let w: f64 = rng.random_range(-2.0..2.0);
            let s: f64 = rng.random_range(-1.0..1.0);
            Arc::new(move |v: &PathView<'_>| a + c * (w * v.b_now() + s).tanh()) as Functional
        })
        .collect();
    SimpleProcess::new(breakpoints, coefficients, bound).expect("valid by construction")
}

/// One line of an inequality-suite report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCase {
    pub case_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `(rhs - lhs)` in units of the pooled standard error.
    pub margin_in_std_errors: f64,
    pub pass: bool,
}

impl InequalityCase {
    /// `lhs <= rhs + 3 * pooled_se`.
    pub fn upper(case_id: impl Into<String>, lhs: &ExpectationEstimate, rhs_value: f64, rhs_se: f64) -> Self {
        let se = numeric::pooled(lhs.std_error, rhs_se);
        let margin = if se > 0.0 {
            (rhs_value - lhs.value) / se
        } else if rhs_value >= lhs.value {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        Self {
            case_id: case_id.into(),
            lhs: lhs.value,
            rhs: rhs_value,
            margin_in_std_errors: margin,
            pass: lhs.value <= rhs_value + 3.0 * se,
        }
    }

    /// `|estimate - target| <= 3 se`.
    pub fn centered(case_id: impl Into<String>, est: &ExpectationEstimate, target: f64) -> Self {
        let dev = (est.value - target).abs();
        let margin = if est.std_error > 0.0 {
            3.0 - dev / est.std_error
        } else if dev == 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        Self {
            case_id: case_id.into(),
            lhs: dev,
            rhs: 3.0 * est.std_error,
            margin_in_std_errors: margin,
            pass: dev <= 3.0 * est.std_error,
        }
    }
}

/// Results of the zero-mean, energy and maximal inequalities for one integrand.
#[derive(Debug, Clone)]
pub struct IntegralChecks {
    pub mean: ExpectationEstimate,
    pub conjugate_mean: ExpectationEstimate,
    pub second_moment: ExpectationEstimate,
    pub running_max_sq: ExpectationEstimate,
    pub energy: ExpectationEstimate,
    pub cases: Vec<InequalityCase>,
}

/// Evaluates `E^[I]`, `-E^[-I]`, `E^[I^2]`, `E^[max_k I_k^2]` and
/// `E^[int eta^2 dt]` on shared samples, and the three inequalities:
/// zero mean (both signs), `E^[I^2] <= sigma_hi^2 E^[int eta^2 dt]`, and
/// `E^[max_t I_t^2] <= 2 sigma_hi^2 E^[int eta^2 dt]`.
pub fn integral_checks(case_id: &str, eta: &dyn Integrand, mc: &MonteCarlo) -> Result<IntegralChecks> {
    let mut est = mc.estimate_many(4, |path| {
        let v = eta.sample(path)?;
        let i = integrate_samples(&v, path, IntegralKind::DB)?;
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let e = integrate_samples(&sq, path, IntegralKind::Dt)?.final_value();
        let m = i.max_abs();
        Ok(vec![i.final_value(), i.final_value().powi(2), m * m, e])
    })?;
    let energy = est.pop().expect("4 functionals");
    let running_max_sq = est.pop().expect("4 functionals");
    let second_moment = est.pop().expect("4 functionals");
    let mean = est.pop().expect("4 functionals");
    let conjugate_mean = mean.conjugate();
    let s2 = mc.band.sigma_hi * mc.band.sigma_hi;
    let cases = vec![
        InequalityCase::centered(format!("{case_id}/zero-mean"), &mean, 0.0),
        InequalityCase::centered(format!("{case_id}/zero-mean-conjugate"), &conjugate_mean, 0.0),
        InequalityCase::upper(
            format!("{case_id}/energy"),
            &second_moment,
            s2 * energy.value,
            s2 * energy.std_error,
        ),
        InequalityCase::upper(
            format!("{case_id}/maximal"),
            &running_max_sq,
            2.0 * s2 * energy.value,
            2.0 * s2 * energy.std_error,
        ),
    ];
    Ok(IntegralChecks {
        mean,
        conjugate_mean,
        second_moment,
        running_max_sq,
        energy,
        cases,
    })
}

/// `sum_k dt_k E[B_{t_k}^2 1{|B_{t_k}| > n}]` for `B = sigma W`: the left-point
/// truncation tail under one constant volatility, in closed form.
pub fn gaussian_truncation_tail(n: f64, sigma: f64, grid: &TimeGrid) -> f64 {
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let z = Normal::standard();
    let mut acc = numeric::ExactSum::default();
    for k in 1..grid.n_steps() {
        let s = sigma * grid.t(k).sqrt();
        let a = n / s;
        // E[Z^2 1{|Z| > a}] = 2 (a phi(a) + 1 - Phi(a))
        acc.add(grid.dt(k) * s * s * 2.0 * (a * z.pdf(a) + z.sf(a)));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedPolicy;
    use crate::scenario::{generate_path, ControlSet, VolatilityBand, VolatilityControl};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    fn path(n: usize, control: VolatilityControl, i: u64) -> SamplePath {
        let grid = Arc::new(TimeGrid::uniform(1.0, n).unwrap());
        generate_path(&control, grid, &band12(), SeedPolicy::new(99).slot(0, i)).unwrap()
    }

    #[test]
    fn unit_integrand_reproduces_b_and_qv() {
        let p = path(64, VolatilityControl::bang_bang_positive(band12()), 0);
        let one = GridProcess::constant(1.0);
        let ib = ito_integral(&one, &p).unwrap();
        let iq = qv_integral(&one, &p).unwrap();
        for k in 0..=64 {
            assert!((ib.values[k] - p.b[k]).abs() < 1e-12);
            assert!((iq.values[k] - p.qv[k]).abs() < 1e-12);
        }
        let simple = SimpleProcess::deterministic(vec![0.0, 1.0], vec![1.0]).unwrap();
        let is = ito_integral(&simple, &p).unwrap();
        assert_eq!(is.values, ib.values);
    }

    #[test]
    fn constant_bochner_integral_is_ct() {
        let p = path(10, VolatilityControl::Constant(1.0), 0);
        let b = bochner_integral(&GridProcess::constant(2.5), &p).unwrap();
        for k in 0..=10 {
            assert!((b.values[k] - 2.5 * p.t(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn half_interval_indicator_has_area_half() {
        let p = path(8, VolatilityControl::Constant(1.0), 0);
        let eta = SimpleProcess::deterministic(vec![0.0, 0.5, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(bochner_integral(&eta, &p).unwrap().final_value(), 0.5);
    }

    #[test]
    fn misaligned_breakpoint_is_rejected() {
        let p = path(8, VolatilityControl::Constant(1.0), 0);
        let eta = SimpleProcess::deterministic(vec![0.0, 0.3, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(ito_integral(&eta, &p).unwrap_err(), Error::Alignment { t: 0.3 });
    }

    #[test]
    fn coefficient_bound_is_enforced() {
        let p = path(8, VolatilityControl::Constant(2.0), 3);
        let f: Functional = Arc::new(|_| 5.0);
        let eta = SimpleProcess::new(vec![0.0, 1.0], vec![f], 1.0).unwrap();
        assert!(matches!(ito_integral(&eta, &p), Err(Error::Contract(_))));
        assert!(SimpleProcess::deterministic(vec![0.0, 0.5], vec![]).is_err());
        assert!(SimpleProcess::deterministic(vec![0.5, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn two_b_integrand_matches_square_minus_qv_up_to_realized_residual() {
        for i in 0..20 {
            let p = path(256, VolatilityControl::bang_bang_positive(band12()), i);
            let eta = GridProcess::of_state(|_, b| 2.0 * b);
            let lhs = ito_integral(&eta, &p).unwrap().final_value();
            let n = p.n_steps();
            let residual = p.realized_qv(n) - p.qv[n];
            let rhs = p.terminal().powi(2) - p.qv[n] - residual;
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn qv_integral_respects_band_bound() {
        for i in 0..20 {
            let p = path(100, VolatilityControl::bang_bang_positive(band12()), i);
            let eta = GridProcess::of_state(|t, b| (3.0 * b + t).sin());
            let v = qv_integral(&eta, &p).unwrap().final_value();
            assert!(v.abs() <= 4.0 * 1.0);
        }
    }

    #[test]
    fn additivity_and_linearity_are_pathwise_exact() {
        let p = path(64, VolatilityControl::bang_bang_positive(band12()), 7);
        let eta = GridProcess::of_state(|t, b| b.cos() + t);
        let theta = GridProcess::of_state(|_, b| b * b);
        let i_eta = ito_integral(&eta, &p).unwrap();
        // additivity: int_s^t = int_s^r + int_r^t
        let (s, r, t) = (8, 30, 64);
        let lhs = i_eta.values[t] - i_eta.values[s];
        let rhs = (i_eta.values[r] - i_eta.values[s]) + (i_eta.values[t] - i_eta.values[r]);
        assert!((lhs - rhs).abs() < 1e-14);
        // linearity from time s with alpha measurable at s
        let alpha = p.b[s].sin() * 3.0;
        let comb = GridProcess::of_state(move |t, b| alpha * (b.cos() + t) + b * b);
        let i_comb = ito_integral(&comb, &p).unwrap();
        let i_theta = ito_integral(&theta, &p).unwrap();
        let l = i_comb.values[t] - i_comb.values[s];
        let r2 = alpha * (i_eta.values[t] - i_eta.values[s]) + (i_theta.values[t] - i_theta.values[s]);
        assert!((l - r2).abs() < 1e-12, "{l} vs {r2}");
    }

    #[test]
    fn truncate_and_product_contracts() {
        let p = path(32, VolatilityControl::Constant(2.0), 1);
        let b = GridProcess::brownian();
        let bounded = truncate(&b, 100.0).unwrap();
        assert_eq!(bounded.sample(&p).unwrap(), b.sample(&p).unwrap());
        let t1 = truncate(&b, 0.5).unwrap();
        assert!(t1.sample(&p).unwrap().iter().all(|x| x.abs() <= 0.5));
        assert!(truncate(&b, 0.0).is_err());

        assert!(matches!(product(&b, &b), Err(Error::Contract(_))));
        let one = product(&GridProcess::constant(1.0), &b).unwrap();
        assert_eq!(one.sample(&p).unwrap(), b.sample(&p).unwrap());
        let zero = product(&GridProcess::constant(0.0), &b).unwrap();
        assert!(zero.sample(&p).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn declared_bound_is_checked_on_sampling() {
        let p = path(32, VolatilityControl::Constant(2.0), 1);
        let b = GridProcess::brownian().with_bound(1e-9);
        assert!(matches!(b.sample(&p), Err(Error::Contract(_))));
    }

    #[test]
    fn mp_norm_of_constant() {
        let mc = MonteCarlo::new(band12(), TimeGrid::uniform(2.0, 16).unwrap(), ControlSet::constants(band12(), 3), 10, SeedPolicy::new(1))
            .unwrap();
        for p in [1.0, 2.0, 3.5] {
            let v = mp_norm(&GridProcess::constant(-1.5), p, &mc).unwrap();
            assert!((v - 1.5 * 2f64.powf(1.0 / p)).abs() < 1e-12);
        }
        assert!(mp_norm(&GridProcess::constant(1.0), 0.5, &mc).is_err());
    }

    #[test]
    fn product_norm_is_dominated() {
        let band = band12();
        let mc = MonteCarlo::new(band, TimeGrid::uniform(1.0, 32).unwrap(), ControlSet::default_for(band), 500, SeedPolicy::new(4))
            .unwrap();
        let x = GridProcess::brownian();
        let eta = GridProcess::of_state(|t, b| 0.7 * (b + t).sin()).with_bound(0.7);
        let prod = product(&eta, &x).unwrap();
        for p in [1.0, 2.0] {
            let lhs = mp_norm(&prod, p, &mc).unwrap();
            let rhs = 0.7 * mp_norm(&x, p, &mc).unwrap();
            assert!(lhs <= rhs);
        }
    }

    #[test]
    fn random_simple_processes_are_aligned_and_bounded() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = path(64, VolatilityControl::bang_bang_positive(band12()), 2);
        for _ in 0..200 {
            let eta = random_simple_process(&mut rng, &grid, 8, 1.0);
            assert!(eta.breakpoints().len() <= 9);
            let v = eta.sample(&p).unwrap();
            assert!(v.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn integral_csv_export() {
        let p = path(4, VolatilityControl::Constant(1.0), 0);
        let i = ito_integral(&GridProcess::constant(1.0), &p).unwrap();
        let mut out = Vec::new();
        i.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("t,value\n0,0\n"));
        assert_eq!(s.lines().count(), 6);
    }
}
