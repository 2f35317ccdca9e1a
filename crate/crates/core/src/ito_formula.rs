//! Generalized Itô formula on simulated paths.
//!
//! A [`Semimartingale`] `X = X_0 + int alpha ds + int eta d<B> + int beta dB`
//! is evolved by left-point Euler sums on the same path that drives `B`. The
//! residual `phi(t, X_t) - phi(0, X_0) - RHS(t)` then contains only the
//! discretization error: the second-order Taylor remainder and the cross
//! terms `dt dt`, `d<B> d<B>`, `dt d<B>`, `dt dB`, `d<B> dB`, plus the
//! difference between `(dB)^2` and `d<B>`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::{ExpectationEstimate, MonteCarlo};
use crate::numeric;
use crate::rng::COMMON_SLOT;
use crate::scenario::{generate_nested, PathView, SamplePath, TimeGrid};
use crate::stopping::LocalizationSequence;

/// Largest supported state dimension.
pub const MAX_DIM: usize = 4;

/// Everything a coefficient may look at when evaluated at the left point `t_k`.
#[derive(Debug, Clone, Copy)]
pub struct CoeffInput<'a> {
    pub k: usize,
    pub t: f64,
    pub x: &'a [f64],
    pub path: PathView<'a>,
}

/// An adapted coefficient process, possibly a function of `X` itself.
#[derive(Clone)]
pub struct Coefficient(Arc<dyn Fn(&CoeffInput<'_>) -> f64 + Send + Sync>);

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Coefficient")
    }
}

impl Coefficient {
    pub fn new(f: impl Fn(&CoeffInput<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `f(t, X_t)`.
    pub fn of_state(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |c| f(c.t, c.x))
    }

    pub fn eval(&self, input: &CoeffInput<'_>) -> f64 {
        (self.0)(input)
    }
}

/// `X^i_t = X^i_0 + int alpha^i ds + int eta^i d<B> + int beta^i dB`, `i < n`.
#[derive(Debug, Clone)]
pub struct Semimartingale {
    pub x0: Vec<f64>,
    pub alpha: Vec<Coefficient>,
    pub eta: Vec<Coefficient>,
    pub beta: Vec<Coefficient>,
    /// If set, every coefficient value must satisfy `|c| <= bound`.
    pub bound: Option<f64>,
}

impl Semimartingale {
    pub fn new(
        x0: Vec<f64>,
        alpha: Vec<Coefficient>,
        eta: Vec<Coefficient>,
        beta: Vec<Coefficient>,
    ) -> Result<Self> {
        let n = x0.len();
        if n == 0 || n > MAX_DIM {
            return Err(Error::Config(format!("dimension must be in 1..={MAX_DIM}, got {n}")));
        }
        if alpha.len() != n || eta.len() != n || beta.len() != n {
            return Err(Error::Config("every coefficient family needs one entry per component".into()));
        }
        Ok(Self {
            x0,
            alpha,
            eta,
            beta,
            bound: None,
        })
    }

    /// One-dimensional process with constant coefficients.
    pub fn constant_coefficients(x0: f64, alpha: f64, eta: f64, beta: f64) -> Self {
        Self::new(
            vec![x0],
            vec![Coefficient::constant(alpha)],
            vec![Coefficient::constant(eta)],
            vec![Coefficient::constant(beta)],
        )
        .expect("dimension 1")
    }

    /// `X = B`.
    pub fn brownian() -> Self {
        Self::constant_coefficients(0.0, 0.0, 0.0, 1.0)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// `X` and its coefficients on every grid point, stored row-major with stride `dim`.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub dim: usize,
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Index from which the coefficients were switched off, if the process was stopped.
    pub stop_index: Option<usize>,
}

impl Evolution {
    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    fn coeffs(&self, k: usize) -> (&[f64], &[f64], &[f64]) {
        let r = k * self.dim..(k + 1) * self.dim;
        (&self.alpha[r.clone()], &self.eta[r.clone()], &self.beta[r])
    }

    pub fn n_steps(&self) -> usize {
        self.x.len() / self.dim - 1
    }

    /// Largest Euclidean norm of `X` over the grid.
    pub fn max_norm(&self) -> f64 {
        (0..=self.n_steps()).map(|k| norm(self.x(k))).fold(0.0, f64::max)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Stop rule applied during evolution: the localizing time
/// `tau_k = inf{t : gamma_t > k} ^ sigma_k` with
/// `gamma_t = |X_t - X_0| + int_0^t (|beta|^2 + |alpha| + |eta|) du`.
#[derive(Debug, Clone)]
pub struct Localization {
    pub level: u32,
    pub sequence: LocalizationSequence,
}

/// Left-point Euler evolution of `X` along `path`.
pub fn evolve(x: &Semimartingale, path: &SamplePath) -> Result<Evolution> {
    evolve_inner(x, path, None)
}

/// Evolution of the stopped process `X_{t ^ tau_k}`.
pub fn evolve_localized(x: &Semimartingale, path: &SamplePath, loc: &Localization) -> Result<Evolution> {
    evolve_inner(x, path, Some(loc))
}

fn evolve_inner(x: &Semimartingale, path: &SamplePath, loc: Option<&Localization>) -> Result<Evolution> {
    let n = path.n_steps();
    let d = x.dim();
    let mut ev = Evolution {
        dim: d,
        x: Vec::with_capacity((n + 1) * d),
        alpha: Vec::with_capacity((n + 1) * d),
        eta: Vec::with_capacity((n + 1) * d),
        beta: Vec::with_capacity((n + 1) * d),
        stop_index: None,
    };
    ev.x.extend_from_slice(&x.x0);
    let sigma_idx = match loc {
        Some(l) => Some(l.sequence.at(l.level).stop_index(path)?),
        None => None,
    };
    let mut gamma_int = 0.0;
    for k in 0..=n {
        let xk: Vec<f64> = ev.x(k).to_vec();
        let stopped = match (loc, sigma_idx) {
            (Some(l), Some(si)) => {
                let drift = xk.iter().zip(&x.x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                ev.stop_index.is_some() || k >= si || drift + gamma_int > l.level as f64
            }
            _ => false,
        };
        if stopped && ev.stop_index.is_none() {
            ev.stop_index = Some(k);
        }
        let input = CoeffInput {
            k,
            t: path.t(k),
            x: &xk,
            path: path.view_until(k),
        };
        for i in 0..d {
            let (a, e, b) = if stopped {
                (0.0, 0.0, 0.0)
            } else {
                (x.alpha[i].eval(&input), x.eta[i].eval(&input), x.beta[i].eval(&input))
            };
            for (v, name) in [(a, "alpha"), (e, "eta"), (b, "beta")] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        index: k,
                        what: format!("{name}[{i}]"),
                    });
                }
                if let Some(bd) = x.bound {
                    if v.abs() > bd {
                        return Err(Error::Contract(format!(
                            "{name}[{i}] = {v} at grid index {k} exceeds declared bound {bd}"
                        )));
                    }
                }
            }
            ev.alpha.push(a);
            ev.eta.push(e);
            ev.beta.push(b);
        }
        if k == n {
            break;
        }
        let (dt, dq, db) = (path.grid.dt(k), path.dqv(k), path.db(k));
        let (al, et, be) = ev.coeffs(k);
        let next: Vec<f64> = (0..d).map(|i| xk[i] + al[i] * dt + et[i] * dq + be[i] * db).collect();
        gamma_int += (0..d).map(|i| be[i] * be[i] + al[i].abs() + et[i].abs()).sum::<f64>() * dt;
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: k + 1,
                what: format!("X[{i}]"),
            });
        }
        ev.x.extend_from_slice(&next);
    }
    Ok(ev)
}

/// A `C^{1,2}` test function with its derivatives.
pub trait SmoothFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn dt(&self, t: f64, x: &[f64]) -> f64;
    fn dx(&self, t: f64, x: &[f64], i: usize) -> f64;
    fn dxx(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64;
    fn name(&self) -> String {
        "phi".into()
    }
}

type ValueFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;
type HessFn = Arc<dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync>;

/// Test function with user-supplied derivatives.
#[derive(Clone)]
pub struct UserFunction {
    name: String,
    dim: usize,
    value: ValueFn,
    dt: ValueFn,
    dx: GradFn,
    dxx: HessFn,
}

impl fmt::Debug for UserFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserFunction").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl UserFunction {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        dt: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        dx: impl Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static,
        dxx: impl Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            dt: Arc::new(dt),
            dx: Arc::new(dx),
            dxx: Arc::new(dxx),
        }
    }

    /// Time-independent scalar function `f` with `f'` and `f''`.
    pub fn scalar(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            name,
            1,
            move |_, x| f(x[0]),
            |_, _| 0.0,
            move |_, x, _| f1(x[0]),
            move |_, x, _, _| f2(x[0]),
        )
    }
}

impl SmoothFunction for UserFunction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }
    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        (self.dt)(t, x)
    }
    fn dx(&self, t: f64, x: &[f64], i: usize) -> f64 {
        (self.dx)(t, x, i)
    }
    fn dxx(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
        (self.dxx)(t, x, i, j)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Step for central differences of first derivatives, `eps^{1/3} max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Step for second differences, `eps^{1/4} max(1, |x|)`.
fn fd_step2(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

/// Central-difference derivative of `value` in time.
fn cd_t(value: &(dyn Fn(f64, &[f64]) -> f64 + Send + Sync), t: f64, x: &[f64]) -> f64 {
    let h = fd_step(t);
    (value(t + h, x) - value(t - h, x)) / (2.0 * h)
}

fn cd_x(value: &(dyn Fn(f64, &[f64]) -> f64 + Send + Sync), t: f64, x: &[f64], i: usize) -> f64 {
    let h = fd_step(x[i]);
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    (value(t, &a) - value(t, &b)) / (2.0 * h)
}

fn cd_xx(value: &(dyn Fn(f64, &[f64]) -> f64 + Send + Sync), t: f64, x: &[f64], i: usize, j: usize, h_of: fn(f64) -> f64) -> f64 {
    if i == j {
        let h = h_of(x[i]);
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (value(t, &a) - 2.0 * value(t, x) + value(t, &b)) / (h * h)
    } else {
        let (hi, hj) = (h_of(x[i]), h_of(x[j]));
        let shift = |si: f64, sj: f64| {
            let mut y = x.to_vec();
            y[i] += si * hi;
            y[j] += sj * hj;
            value(t, &y)
        };
        (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0)) / (4.0 * hi * hj)
    }
}

/// Test function whose derivatives come from central finite differences.
#[derive(Clone)]
pub struct FiniteDifference {
    name: String,
    dim: usize,
    value: ValueFn,
}

impl fmt::Debug for FiniteDifference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteDifference").field("name", &self.name).finish()
    }
}

impl FiniteDifference {
    pub fn new(name: impl Into<String>, dim: usize, value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
        }
    }
}

impl SmoothFunction for FiniteDifference {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }
    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        cd_t(&*self.value, t, x)
    }
    fn dx(&self, t: f64, x: &[f64], i: usize) -> f64 {
        cd_x(&*self.value, t, x, i)
    }
    fn dxx(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
        cd_xx(&*self.value, t, x, i, j, fd_step)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeAudit {
    pub probes: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Compares supplied derivatives with central differences at `probes`
/// pseudo-random points of `[0, horizon] x [-radius, radius]^n`. The error
/// is `|supplied - fd| / max(1, |fd|)`; the audit passes at `1e-4`.
pub fn audit_derivatives(phi: &dyn SmoothFunction, probes: usize, horizon: f64, radius: f64, seed: u64) -> DerivativeAudit {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let value = |t: f64, x: &[f64]| phi.value(t, x);
    let n = phi.dim();
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..probes {
        // keep t away from 0 so the time difference stays inside the domain
        let t = rng.random_range(0.05 * horizon..horizon);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..radius)).collect();
        worst = worst.max(rel(phi.dt(t, &x), cd_t(&value, t, &x)));
        for i in 0..n {
            worst = worst.max(rel(phi.dx(t, &x, i), cd_x(&value, t, &x, i)));
            for j in 0..n {
                worst = worst.max(rel(phi.dxx(t, &x, i, j), cd_xx(&value, t, &x, i, j, fd_step2)));
            }
        }
    }
    DerivativeAudit {
        probes,
        max_rel_error: worst,
        pass: worst <= 1e-4,
    }
}

/// `phi(t_k, X_{t_k}) - phi(0, X_0)`.
pub fn ito_lhs(phi: &dyn SmoothFunction, ev: &Evolution, path: &SamplePath, k: usize) -> f64 {
    phi.value(path.t(k), ev.x(k)) - phi.value(0.0, ev.x(0))
}

/// The three integrals on the right-hand side, as running sums.
#[derive(Debug, Clone)]
pub struct RhsSeries {
    pub db: Vec<f64>,
    pub dt: Vec<f64>,
    pub dqv: Vec<f64>,
}

impl RhsSeries {
    pub fn total(&self, k: usize) -> f64 {
        self.db[k] + self.dt[k] + self.dqv[k]
    }
}

/// Left-point sums of
/// `int d_i phi beta^i dB + int (d_t phi + d_i phi alpha^i) du
///  + int (d_i phi eta^i + 1/2 d_ij phi beta^i beta^j) d<B>`.
pub fn rhs_series(phi: &dyn SmoothFunction, ev: &Evolution, path: &SamplePath) -> RhsSeries {
    let n = path.n_steps();
    let d = ev.dim;
    let mut s = RhsSeries {
        db: vec![0.0; n + 1],
        dt: vec![0.0; n + 1],
        dqv: vec![0.0; n + 1],
    };
    let (mut a_db, mut a_dt, mut a_dq) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let t = path.t(k);
        let x = ev.x(k);
        let (al, et, be) = ev.coeffs(k);
        let mut c_db = 0.0;
        let mut c_dt = phi.dt(t, x);
        let mut c_dq = 0.0;
        for i in 0..d {
            let g = phi.dx(t, x, i);
            c_db += g * be[i];
            c_dt += g * al[i];
            c_dq += g * et[i];
            for j in 0..d {
                c_dq += 0.5 * phi.dxx(t, x, i, j) * be[i] * be[j];
            }
        }
        a_db += c_db * path.db(k);
        a_dt += c_dt * path.grid.dt(k);
        a_dq += c_dq * path.dqv(k);
        s.db[k + 1] = a_db;
        s.dt[k + 1] = a_dt;
        s.dqv[k + 1] = a_dq;
    }
    s
}

/// Right-hand side of the formula at grid index `k`.
pub fn ito_rhs(phi: &dyn SmoothFunction, x: &Semimartingale, path: &SamplePath, k: usize) -> Result<f64> {
    let ev = evolve(x, path)?;
    Ok(rhs_series(phi, &ev, path).total(k))
}

/// `r(t_k) = LHS(t_k) - RHS(t_k)` for every grid index.
pub fn residual_series(phi: &dyn SmoothFunction, ev: &Evolution, path: &SamplePath) -> Vec<f64> {
    let rhs = rhs_series(phi, ev, path);
    (0..=path.n_steps())
        .map(|k| ito_lhs(phi, ev, path, k) - rhs.total(k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResidual {
    pub n_steps: usize,
    /// `sqrt(max_c mean_c r_T^2)`.
    pub rms: f64,
    pub max_abs: f64,
    /// Standard error of the selected scenario's mean square.
    pub mean_sq_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoResidualReport {
    pub function: String,
    pub levels: Vec<LevelResidual>,
    /// `log(rms_l / rms_{l+1}) / log(n_{l+1} / n_l)` for successive levels.
    pub order_estimates: Vec<f64>,
    /// Least-squares slope of `-log rms` against `log n` over all levels.
    pub fitted_order: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    levels: Vec<LevelJson>,
    order_estimates: &'a [f64],
    fitted_order: f64,
}

#[derive(Serialize)]
struct LevelJson {
    n_steps: usize,
    rms: f64,
    max_abs: f64,
}

impl ItoResidualReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ReportJson {
            levels: self
                .levels
                .iter()
                .map(|l| LevelJson {
                    n_steps: l.n_steps,
                    rms: l.rms,
                    max_abs: l.max_abs,
                })
                .collect(),
            order_estimates: &self.order_estimates,
            fitted_order: self.fitted_order,
        })
        .expect("serializable")
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].rms < w[0].rms)
    }

    pub fn write_convergence_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n_steps,rms")?;
        for l in &self.levels {
            writeln!(w, "{},{}", l.n_steps, l.rms)?;
        }
        Ok(())
    }
}

fn nested_grids(horizon: f64, levels: &[usize]) -> Result<Vec<Arc<TimeGrid>>> {
    if levels.len() < 2 {
        return Err(Error::Config("need at least two refinement levels".into()));
    }
    let grids: Vec<Arc<TimeGrid>> = levels
        .iter()
        .map(|&n| TimeGrid::uniform(horizon, n).map(Arc::new))
        .collect::<Result<_>>()?;
    for w in grids.windows(2) {
        if w[1].n_steps() <= w[0].n_steps() || w[1].refinement_map(&w[0]).is_none() {
            return Err(Error::Config(format!(
                "grid with {} steps does not refine grid with {} steps",
                w[1].n_steps(),
                w[0].n_steps()
            )));
        }
    }
    Ok(grids)
}

/// Residual convergence study across nested grids. Each path is simulated
/// once on the finest grid and aggregated onto the coarser ones, under every
/// scenario of `mc` (its own grid is ignored; its horizon is kept).
pub fn verify(phi: &dyn SmoothFunction, x: &Semimartingale, mc: &MonteCarlo, levels: &[usize]) -> Result<ItoResidualReport> {
    let grids = nested_grids(mc.grid.horizon(), levels)?;
    let n_levels = grids.len();
    // finals[c][i][l], maxes[c][i][l]
    let mut per_control: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(mc.controls.len());
    for control in mc.controls.iter() {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..mc.n_paths)
            .into_par_iter()
            .map(|i| {
                let paths = generate_nested(control, &grids, &mc.band, mc.seeds.slot(COMMON_SLOT, i as u64))?;
                let mut finals = Vec::with_capacity(n_levels);
                let mut maxes = Vec::with_capacity(n_levels);
                for p in &paths {
                    let ev = evolve(x, p)?;
                    let r = residual_series(phi, &ev, p);
                    finals.push(r[r.len() - 1]);
                    maxes.push(r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                }
                Ok((finals, maxes))
            })
            .collect::<Result<_>>()?;
        per_control.push(rows);
    }
    let ids = mc.control_ids();
    let mut out = Vec::with_capacity(n_levels);
    for (l, g) in grids.iter().enumerate() {
        let sq: Vec<Vec<f64>> = per_control
            .iter()
            .map(|rows| rows.iter().map(|(f, _)| f[l] * f[l]).collect())
            .collect();
        let est = ExpectationEstimate::from_samples(&ids, &sq)?;
        let max_abs = per_control
            .iter()
            .flat_map(|rows| rows.iter().map(|(_, m)| m[l]))
            .fold(0.0, f64::max);
        out.push(LevelResidual {
            n_steps: g.n_steps(),
            rms: est.value.sqrt(),
            max_abs,
            mean_sq_std_error: est.std_error,
        });
    }
    let order_estimates = out
        .windows(2)
        .map(|w| (w[0].rms / w[1].rms).ln() / (w[1].n_steps as f64 / w[0].n_steps as f64).ln())
        .collect();
    let pts: Vec<(f64, f64)> = out.iter().map(|l| ((l.n_steps as f64).ln(), -l.rms.ln())).collect();
    Ok(ItoResidualReport {
        function: phi.name(),
        levels: out,
        order_estimates,
        fitted_order: slope(&pts),
    })
}

/// Ordinary least-squares slope.
fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Five-point Gauss-Legendre nodes and weights on `[0, 1]`.
const GL5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_0, 0.118_463_442_528_094_5),
    (0.230_765_344_947_158_5, 0.239_314_335_249_683_2),
    (0.5, 0.284_444_444_444_444_4),
    (0.769_234_655_052_841_5, 0.239_314_335_249_683_2),
    (0.953_089_922_969_332_0, 0.118_463_442_528_094_5),
];

/// Per-path remainder sums of the second-order expansion on an `N`-step partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderTable {
    pub n_steps: usize,
    /// Second-order Taylor remainders `eta_k^N`, one per step.
    pub taylor: Vec<f64>,
    /// `zeta` split by increment pair.
    pub cross: CrossTerms,
    /// Remark-style envelopes (without their constants) for each cross term.
    pub envelopes: CrossTerms,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossTerms {
    pub dt_dt: f64,
    pub dqv_dqv: f64,
    pub dt_dqv: f64,
    pub dt_db: f64,
    pub dqv_db: f64,
}

impl CrossTerms {
    pub fn as_array(&self) -> [f64; 5] {
        [self.dt_dt, self.dqv_dqv, self.dt_dqv, self.dt_db, self.dqv_db]
    }

    pub const NAMES: [&'static str; 5] = ["dt_dt", "dqv_dqv", "dt_dqv", "dt_db", "dqv_db"];

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

impl RemainderTable {
    pub fn taylor_sum(&self) -> f64 {
        self.taylor.iter().sum()
    }
}

/// Expansion of `phi(t_k, .)` over each step of `path` (time frozen at the
/// left point). With `dX = X_{k+1} - X_k`,
/// `phi(X_{k+1}) - phi(X_k) = d_i phi dX^i + 1/2 [d_ij phi dX^i dX^j + eta_k]`
/// where `eta_k = 2 int_0^1 (1-s) [d_ij phi(X_k + s dX) - d_ij phi(X_k)] ds dX^i dX^j`
/// (five-point Gauss-Legendre). The cross terms are the parts of
/// `1/2 d_ij phi dX^i dX^j` other than `beta^i beta^j (dB)^2`.
pub fn step_remainders(phi: &dyn SmoothFunction, x: &Semimartingale, path: &SamplePath) -> Result<RemainderTable> {
    let ev = evolve(x, path)?;
    let n = path.n_steps();
    let d = ev.dim;
    let mut taylor = Vec::with_capacity(n);
    let mut cross = CrossTerms::default();
    let mut env = CrossTerms::default();
    let s_hi = path.qv.windows(2).enumerate().map(|(k, w)| (w[1] - w[0]) / path.grid.dt(k)).fold(0.0f64, f64::max);
    let mut y = vec![0.0; d];
    for k in 0..n {
        let t = path.t(k);
        let xk = ev.x(k);
        let xn = ev.x(k + 1);
        let dx: Vec<f64> = (0..d).map(|i| xn[i] - xk[i]).collect();
        let mut rem = 0.0;
        for &(s, w) in &GL5 {
            for i in 0..d {
                y[i] = xk[i] + s * dx[i];
            }
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += (phi.dxx(t, &y, i, j) - phi.dxx(t, xk, i, j)) * dx[i] * dx[j];
                }
            }
            rem += w * (1.0 - s) * acc;
        }
        taylor.push(2.0 * rem);

        let (al, et, be) = ev.coeffs(k);
        let (dt, dq, db) = (path.grid.dt(k), path.dqv(k), path.db(k));
        let mut c = [0.0f64; 5];
        for i in 0..d {
            for j in 0..d {
                let h = phi.dxx(t, xk, i, j);
                c[0] += 0.5 * h * al[i] * al[j];
                c[1] += 0.5 * h * et[i] * et[j];
                c[2] += 0.5 * h * (al[i] * et[j] + et[i] * al[j]);
                c[3] += h * al[i] * be[j];
                c[4] += h * et[i] * be[j];
            }
        }
        cross.dt_dt += c[0] * dt * dt;
        cross.dqv_dqv += c[1] * dq * dq;
        cross.dt_dqv += c[2] * dt * dq;
        cross.dt_db += c[3] * dt * db;
        cross.dqv_db += c[4] * dq * db;
        let s2 = s_hi;
        env.dt_dt += c[0] * c[0] * dt.powi(4);
        env.dqv_dqv += c[1] * c[1] * s2.powi(3) * dt.powi(3);
        env.dt_dqv += c[2] * c[2] * s2.powi(2) * dt.powi(3);
        env.dt_db += c[3] * c[3] * s2 * dt.powi(2);
        env.dqv_db += c[4] * c[4] * s2.powi(2) * dt.powi(2);
    }
    Ok(RemainderTable {
        n_steps: n,
        taylor,
        cross,
        envelopes: env,
    })
}

/// Ensemble statistics of the remainders at one partition size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderLevel {
    pub n_steps: usize,
    /// `E^[|sum_k eta_k^N|^2]`.
    pub taylor_sum_sq: ExpectationEstimate,
    /// `N sum_k E^[|eta_k^N|^2]`.
    pub taylor_envelope: f64,
    /// `E^[|zeta term|^2]` per cross term, ordered as [`CrossTerms::NAMES`].
    pub cross_sq: Vec<ExpectationEstimate>,
}

/// Runs [`step_remainders`] over nested partitions sharing the same noise.
/// Scenarios are processed one at a time and reduced to per-path sums, so
/// memory stays proportional to `n_paths * sum(levels)` for one scenario.
pub fn remainder_study(phi: &dyn SmoothFunction, x: &Semimartingale, mc: &MonteCarlo, levels: &[usize]) -> Result<Vec<RemainderLevel>> {
    let grids = nested_grids(mc.grid.horizon(), levels)?;
    let ids = mc.control_ids();
    let nl = grids.len();
    // [l][c][i] per-path samples, [l][c][k] per-step means of eta_k^2
    let mut sum_sq: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nl];
    let mut cross_sq: Vec<[Vec<Vec<f64>>; 5]> = (0..nl).map(|_| Default::default()).collect();
    let mut step_means: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nl];
    for control in mc.controls.iter() {
        let rows: Vec<Vec<RemainderTable>> = (0..mc.n_paths)
            .into_par_iter()
            .map(|i| {
                let paths = generate_nested(control, &grids, &mc.band, mc.seeds.slot(COMMON_SLOT, i as u64))?;
                paths.iter().map(|p| step_remainders(phi, x, p)).collect()
            })
            .collect::<Result<_>>()?;
        for l in 0..nl {
            sum_sq[l].push(rows.iter().map(|r| r[l].taylor_sum().powi(2)).collect());
            for (m, slot) in cross_sq[l].iter_mut().enumerate() {
                slot.push(rows.iter().map(|r| r[l].cross.as_array()[m].powi(2)).collect());
            }
            let means = (0..grids[l].n_steps())
                .map(|k| {
                    let v: Vec<f64> = rows.iter().map(|r| r[l].taylor[k].powi(2)).collect();
                    numeric::mean(&v)
                })
                .collect();
            step_means[l].push(means);
        }
    }
    (0..nl)
        .map(|l| {
            let n = grids[l].n_steps();
            let mut envelope = numeric::ExactSum::default();
            for k in 0..n {
                envelope.add(step_means[l].iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max));
            }
            Ok(RemainderLevel {
                n_steps: n,
                taylor_sum_sq: ExpectationEstimate::from_samples(&ids, &sum_sq[l])?,
                taylor_envelope: n as f64 * envelope.value(),
                cross_sq: cross_sq[l]
                    .iter()
                    .map(|s| ExpectationEstimate::from_samples(&ids, s))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// `phi_k = phi * psi(|x|)` with `psi = 1` on `[0, 2k]`, a quintic smoothstep
/// down to `0` on `[2k, 3k]`, and `0` beyond. Equal to `phi` (bit for bit)
/// wherever `|x| <= 2k`; its derivatives are bounded.
pub struct Clamped<F> {
    pub inner: F,
    pub k: f64,
}

impl<F: SmoothFunction> Clamped<F> {
    pub fn new(inner: F, k: f64) -> Self {
        Self { inner, k }
    }

    /// `(psi, psi', psi'')` at radius `r`.
    fn psi(&self, r: f64) -> (f64, f64, f64) {
        let (a, w) = (2.0 * self.k, self.k);
        if r <= a {
            return (1.0, 0.0, 0.0);
        }
        if r >= a + w {
            return (0.0, 0.0, 0.0);
        }
        let s = (r - a) / w;
        let step = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s) / w;
        let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (w * w);
        (1.0 - step, -d1, -d2)
    }

    fn inside(&self, x: &[f64]) -> bool {
        norm(x) <= 2.0 * self.k
    }
}

impl<F: SmoothFunction> SmoothFunction for Clamped<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        if self.inside(x) {
            return self.inner.value(t, x);
        }
        self.psi(norm(x)).0 * self.inner.value(t, x)
    }

    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        if self.inside(x) {
            return self.inner.dt(t, x);
        }
        self.psi(norm(x)).0 * self.inner.dt(t, x)
    }

    fn dx(&self, t: f64, x: &[f64], i: usize) -> f64 {
        if self.inside(x) {
            return self.inner.dx(t, x, i);
        }
        let r = norm(x);
        let (p, p1, _) = self.psi(r);
        p * self.inner.dx(t, x, i) + self.inner.value(t, x) * p1 * x[i] / r
    }

    fn dxx(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
        if self.inside(x) {
            return self.inner.dxx(t, x, i, j);
        }
        let r = norm(x);
        let (p, p1, p2) = self.psi(r);
        let delta = if i == j { 1.0 } else { 0.0 };
        let gi = p1 * x[i] / r;
        let gj = p1 * x[j] / r;
        let hij = p2 * x[i] * x[j] / (r * r) + p1 * (delta / r - x[i] * x[j] / (r * r * r));
        p * self.inner.dxx(t, x, i, j) + self.inner.dx(t, x, i) * gj + self.inner.dx(t, x, j) * gi + self.inner.value(t, x) * hij
    }

    fn name(&self) -> String {
        format!("{}_clamped({})", self.inner.name(), self.k)
    }
}

impl<F: SmoothFunction> SmoothFunction for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (**self).value(t, x)
    }
    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        (**self).dt(t, x)
    }
    fn dx(&self, t: f64, x: &[f64], i: usize) -> f64 {
        (**self).dx(t, x, i)
    }
    fn dxx(&self, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
        (**self).dxx(t, x, i, j)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Outcome of comparing the localized formula for `phi` with the formula for
/// the clamped `phi_k`, both on the stopped process.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationComparison {
    pub in_range: bool,
    pub stopped_early: bool,
    /// Residual series for `(phi, X^{tau_k})`.
    pub localized: Vec<f64>,
    /// Residual series for `(phi_k, X^{tau_k})`.
    pub clamped: Vec<f64>,
}

impl LocalizationComparison {
    pub fn identical(&self) -> bool {
        self.localized.len() == self.clamped.len()
            && self.localized.iter().zip(&self.clamped).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Evolves `X^{tau_k}` once and computes the residual series for `phi` and
/// for `Clamped(phi, k)`.
pub fn compare_localized<F: SmoothFunction + Clone>(
    phi: &F,
    x: &Semimartingale,
    path: &SamplePath,
    loc: &Localization,
) -> Result<LocalizationComparison> {
    let ev = evolve_localized(x, path, loc)?;
    let clamped = Clamped::new(phi.clone(), loc.level as f64);
    Ok(LocalizationComparison {
        in_range: ev.max_norm() <= 2.0 * loc.level as f64,
        stopped_early: ev.stop_index.is_some_and(|k| k < path.n_steps()),
        localized: residual_series(phi, &ev, path),
        clamped: residual_series(&clamped, &ev, path),
    })
}

/// Standard test functions.
pub mod library {
    use super::UserFunction;

    pub fn constant(c: f64) -> UserFunction {
        UserFunction::scalar("const", move |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn affine(a: f64, b: f64) -> UserFunction {
        UserFunction::scalar("affine", move |x| a * x + b, move |_| a, |_| 0.0)
    }

    pub fn identity() -> UserFunction {
        UserFunction::scalar("x", |x| x, |_| 1.0, |_| 0.0)
    }

    /// `phi(t, x) = t`.
    pub fn time() -> UserFunction {
        UserFunction::new("t", 1, |t, _| t, |_, _| 1.0, |_, _, _| 0.0, |_, _, _, _| 0.0)
    }

    pub fn square() -> UserFunction {
        UserFunction::scalar("x^2", |x| x * x, |x| 2.0 * x, |_| 2.0)
    }

    pub fn cube() -> UserFunction {
        UserFunction::scalar("x^3", |x| x * x * x, |x| 3.0 * x * x, |x| 6.0 * x)
    }

    pub fn sine() -> UserFunction {
        UserFunction::scalar("sin x", f64::sin, f64::cos, |x| -x.sin())
    }

    pub fn gaussian_bump() -> UserFunction {
        UserFunction::scalar(
            "exp(-x^2)",
            |x| (-x * x).exp(),
            |x| -2.0 * x * (-x * x).exp(),
            |x| (4.0 * x * x - 2.0) * (-x * x).exp(),
        )
    }

    pub fn by_name(name: &str) -> Option<UserFunction> {
        Some(match name {
            "x" => identity(),
            "x^2" => square(),
            "x^3" => cube(),
            "sin" | "sin x" => sine(),
            "exp(-x^2)" => gaussian_bump(),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::library::*;
    use super::*;
    use crate::rng::SeedPolicy;
    use crate::scenario::{generate_path, ControlSet, VolatilityBand, VolatilityControl};

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    fn path(n: usize, i: u64) -> SamplePath {
        let grid = Arc::new(TimeGrid::uniform(1.0, n).unwrap());
        generate_path(&VolatilityControl::bang_bang_positive(band12()), grid, &band12(), SeedPolicy::new(23).slot(0, i))
            .unwrap()
    }

    #[test]
    fn evolve_elementary_cases() {
        let p = path(50, 0);
        let ev = evolve(&Semimartingale::brownian(), &p).unwrap();
        for k in 0..=50 {
            assert_eq!(ev.x(k)[0], p.b[k]);
        }
        let ev = evolve(&Semimartingale::constant_coefficients(0.0, 1.0, 0.0, 0.0), &p).unwrap();
        for k in 0..=50 {
            assert_eq!(ev.x(k)[0], p.t(k));
        }
        let ev = evolve(&Semimartingale::constant_coefficients(0.0, 0.0, 1.0, 0.0), &p).unwrap();
        for k in 0..=50 {
            assert_eq!(ev.x(k)[0], p.qv[k]);
        }
    }

    #[test]
    fn evolve_reports_non_finite_and_bound_violations() {
        let p = path(10, 0);
        let x = Semimartingale::new(
            vec![0.0],
            vec![Coefficient::new(|c| if c.k == 4 { f64::NAN } else { 0.0 })],
            vec![Coefficient::zero()],
            vec![Coefficient::constant(1.0)],
        )
        .unwrap();
        assert_eq!(
            evolve(&x, &p).unwrap_err(),
            Error::NonFinite {
                index: 4,
                what: "alpha[0]".into()
            }
        );
        let y = Semimartingale::constant_coefficients(0.0, 0.0, 0.0, 3.0).with_bound(1.0);
        assert!(matches!(evolve(&y, &p), Err(Error::Contract(_))));
        assert!(Semimartingale::new(vec![0.0; 5], vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn lhs_and_rhs_elementary_cases() {
        let p = path(64, 1);
        let b = Semimartingale::brownian();
        let ev = evolve(&b, &p).unwrap();
        for k in [0, 10, 64] {
            assert_eq!(ito_lhs(&constant(3.0), &ev, &p, k), 0.0);
            assert_eq!(ito_lhs(&identity(), &ev, &p, k), p.b[k]);
            assert_eq!(ito_lhs(&time(), &ev, &p, k), p.t(k));
            assert_eq!(ito_rhs(&time(), &b, &p, k).unwrap(), p.t(k));
            assert!((ito_rhs(&identity(), &b, &p, k).unwrap() - p.b[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn square_rhs_is_two_b_db_plus_qv() {
        let p = path(128, 2);
        let b = Semimartingale::brownian();
        let mut acc = 0.0;
        for k in 0..128 {
            acc += 2.0 * p.b[k] * p.db(k);
        }
        let rhs = ito_rhs(&square(), &b, &p, 128).unwrap();
        assert!((rhs - (acc + p.qv[128])).abs() < 1e-12);
    }

    #[test]
    fn quadratic_residual_identity() {
        for i in 0..20 {
            let p = path(256, i);
            let ev = evolve(&Semimartingale::brownian(), &p).unwrap();
            let r = residual_series(&square(), &ev, &p);
            for k in [1, 100, 256] {
                assert!((r[k] + p.qv[k] - p.realized_qv(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_residual_vanishes() {
        let x = Semimartingale::new(
            vec![0.3],
            vec![Coefficient::of_state(|t, x| (t - x[0]).cos())],
            vec![Coefficient::of_state(|_, x| 0.5 * x[0].sin())],
            vec![Coefficient::of_state(|_, x| 1.0 + 0.2 * x[0].tanh())],
        )
        .unwrap();
        for i in 0..20 {
            let p = path(200, i);
            let ev = evolve(&x, &p).unwrap();
            for phi in [constant(2.0), affine(-1.5, 0.25), identity()] {
                let r = residual_series(&phi, &ev, &p);
                assert!(r.iter().all(|v| v.abs() < 1e-13), "{}", phi.name());
            }
            assert!(residual_series(&constant(7.0), &ev, &p).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn derivative_audit_accepts_correct_and_rejects_wrong() {
        for phi in [square(), cube(), sine(), gaussian_bump(), time()] {
            let a = audit_derivatives(&phi, 100, 1.0, 3.0, 1);
            assert!(a.pass, "{}: {}", phi.name(), a.max_rel_error);
        }
        let wrong = UserFunction::scalar("bad", |x| x * x, |x| 2.0 * x, |_| 2.1);
        assert!(!audit_derivatives(&wrong, 100, 1.0, 3.0, 1).pass);
        let two_d = UserFunction::new(
            "x0*x1+t",
            2,
            |t, x| x[0] * x[1] + t * x[0],
            |_, x| x[0],
            |t, x, i| if i == 0 { x[1] + t } else { x[0] },
            |_, _, i, j| if i != j { 1.0 } else { 0.0 },
        );
        assert!(audit_derivatives(&two_d, 100, 1.0, 2.0, 3).pass);
    }

    #[test]
    fn finite_difference_function_tracks_analytic() {
        let fd = FiniteDifference::new("sin fd", 1, |_, x| x[0].sin());
        let an = sine();
        for x in [-2.0, -0.3, 0.0, 1.1, 4.0] {
            assert!((fd.dx(0.5, &[x], 0) - an.dx(0.5, &[x], 0)).abs() < 1e-9);
            assert!((fd.dxx(0.5, &[x], 0, 0) - an.dxx(0.5, &[x], 0, 0)).abs() < 1e-4);
        }
    }

    #[test]
    fn multidimensional_einstein_sum() {
        // phi = x0 * x1 with X0 = B, X1 = t: d(x0 x1) = x1 dB + x0 dt
        let x = Semimartingale::new(
            vec![0.0, 0.0],
            vec![Coefficient::zero(), Coefficient::constant(1.0)],
            vec![Coefficient::zero(), Coefficient::zero()],
            vec![Coefficient::constant(1.0), Coefficient::zero()],
        )
        .unwrap();
        let phi = UserFunction::new(
            "x0*x1",
            2,
            |_, x| x[0] * x[1],
            |_, _| 0.0,
            |_, x, i| x[1 - i],
            |_, _, i, j| if i != j { 1.0 } else { 0.0 },
        );
        let p = path(4096, 3);
        let ev = evolve(&x, &p).unwrap();
        let r = residual_series(&phi, &ev, &p);
        // residual is -sum dB dt, which is O(sqrt(dt))
        assert!(r[4096].abs() < 0.05, "{}", r[4096]);
    }

    #[test]
    fn verify_rejects_non_nested_levels() {
        let mc = MonteCarlo::new(band12(), TimeGrid::uniform(1.0, 8).unwrap(), ControlSet::constants(band12(), 2), 4, SeedPolicy::new(1))
            .unwrap();
        let b = Semimartingale::brownian();
        assert!(matches!(verify(&square(), &b, &mc, &[8, 12]), Err(Error::Config(_))));
        assert!(matches!(verify(&square(), &b, &mc, &[8]), Err(Error::Config(_))));
    }

    #[test]
    fn verify_constant_is_zero_and_square_halves() {
        let mc = MonteCarlo::new(band12(), TimeGrid::uniform(1.0, 8).unwrap(), ControlSet::default_for(band12()), 400, SeedPolicy::new(5))
            .unwrap();
        let b = Semimartingale::brownian();
        let rep = verify(&constant(1.0), &b, &mc, &[32, 64, 128]).unwrap();
        assert!(rep.levels.iter().all(|l| l.rms == 0.0 && l.max_abs == 0.0));
        let rep = verify(&square(), &b, &mc, &[32, 64, 128, 256]).unwrap();
        assert!(rep.strictly_decreasing());
        for o in &rep.order_estimates {
            assert!((o - 0.5).abs() < 0.15, "{o}");
        }
        let j: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(j["levels"].as_array().unwrap().len(), 4);
        assert_eq!(j["order_estimates"].as_array().unwrap().len(), 3);
        assert!((rep.fitted_order - 0.5).abs() < 0.1, "{}", rep.fitted_order);
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.5 * i as f64 + 3.0)).collect();
        assert!((slope(&pts) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_taylor_remainder_is_exactly_zero() {
        let x = Semimartingale::constant_coefficients(0.2, 0.5, 0.5, 1.0);
        for i in 0..10 {
            let p = path(64, i);
            let t = step_remainders(&square(), &x, &p).unwrap();
            assert!(t.taylor.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn remainders_close_the_expansion() {
        // phi(X_T) - phi(X_0) = sum [phi' dX + 1/2 phi'' dX^2 + 1/2 eta_k]
        let x = Semimartingale::constant_coefficients(0.1, 0.5, 0.5, 1.0);
        let p = path(128, 4);
        let phi = sine();
        let ev = evolve(&x, &p).unwrap();
        let tab = step_remainders(&phi, &x, &p).unwrap();
        let mut acc = 0.0;
        for k in 0..128 {
            let (a, b) = (ev.x(k)[0], ev.x(k + 1)[0]);
            let d = b - a;
            acc += phi.dx(0.0, &[a], 0) * d + 0.5 * phi.dxx(0.0, &[a], 0, 0) * d * d + 0.5 * tab.taylor[k];
        }
        let lhs = phi.value(0.0, ev.x(128)) - phi.value(0.0, ev.x(0));
        assert!((lhs - acc).abs() < 1e-12, "{lhs} vs {acc}");
    }

    #[test]
    fn remainder_study_decreases_and_respects_envelope() {
        let mc = MonteCarlo::new(band12(), TimeGrid::uniform(1.0, 8).unwrap(), ControlSet::constants(band12(), 3), 300, SeedPolicy::new(2))
            .unwrap();
        let x = Semimartingale::constant_coefficients(0.0, 0.5, 0.5, 1.0);
        let lv = remainder_study(&sine(), &x, &mc, &[16, 32, 64]).unwrap();
        for w in lv.windows(2) {
            assert!(w[1].taylor_sum_sq.value < w[0].taylor_sum_sq.value);
            for m in 0..5 {
                assert!(w[1].cross_sq[m].value < w[0].cross_sq[m].value, "term {m}");
            }
        }
        for l in &lv {
            assert!(l.taylor_sum_sq.value <= l.taylor_envelope * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cross_terms_vanish_for_pure_brownian() {
        let p = path(64, 1);
        let t = step_remainders(&sine(), &Semimartingale::brownian(), &p).unwrap();
        assert_eq!(t.cross.total(), 0.0);
    }

    #[test]
    fn clamped_function_matches_inside_and_vanishes_outside() {
        let c = Clamped::new(cube(), 1.0);
        for x in [-2.0, -1.0, 0.0, 0.5, 2.0] {
            assert_eq!(c.value(0.0, &[x]), cube().value(0.0, &[x]));
            assert_eq!(c.dxx(0.0, &[x], 0, 0), cube().dxx(0.0, &[x], 0, 0));
        }
        assert_eq!(c.value(0.0, &[3.5]), 0.0);
        assert_eq!(c.dx(0.0, &[-3.5], 0), 0.0);
        // derivatives in the transition band agree with finite differences
        let audit = audit_derivatives(&c, 200, 1.0, 3.2, 9);
        assert!(audit.pass, "{}", audit.max_rel_error);
    }

    #[test]
    fn localized_and_clamped_residuals_agree_in_range() {
        let x = Semimartingale::brownian();
        let loc = Localization {
            level: 1,
            sequence: LocalizationSequence::horizon(),
        };
        let mut in_range = 0;
        for i in 0..100 {
            let p = path(256, i);
            let cmp = compare_localized(&cube(), &x, &p, &loc).unwrap();
            if cmp.in_range {
                in_range += 1;
                assert!(cmp.identical());
            }
        }
        assert!(in_range > 50);
    }
}
