//! G-Brownian motion realized scenario by scenario.
//!
//! A scenario is a volatility control `sigma(t, B_t)` restricted to the band
//! `[sigma_lo, sigma_hi]`. Under one scenario the driver is a Gaussian walk
//! `dB_k = sigma_k * sqrt(dt_k) * Z_k` with the control evaluated at the left
//! end of each step, and the quadratic variation accumulates analytically as
//! `sum sigma_k^2 dt_k`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedPolicy, SeedSlot};

/// The volatility band `[sigma_lo, sigma_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityBand {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl VolatilityBand {
    pub fn new(sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        let band = Self { sigma_lo, sigma_hi };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.sigma_lo, self.sigma_hi);
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi && hi > 0.0) {
            return Err(Error::InvalidBand { lo, hi });
        }
        Ok(())
    }

    pub fn contains(&self, sigma: f64) -> bool {
        sigma >= self.sigma_lo && sigma <= self.sigma_hi
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_lo == self.sigma_hi
    }
}

/// Strictly increasing simulation times `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        let n = n_steps as f64;
        let mut points: Vec<f64> = (0..=n_steps).map(|k| k as f64 * horizon / n).collect();
        points[n_steps] = horizon;
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidGrid("first point must be 0".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite point".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn t(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    fn tol(&self) -> f64 {
        1e-12 * self.horizon()
    }

    /// Index of the grid point equal to `t` (up to a 1e-12 relative tolerance).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.index_at_or_after(t)?;
        ((self.points[k] - t).abs() <= self.tol()).then_some(k)
    }

    /// First grid index whose time is `>= t`, snapping upward; `None` past the horizon.
    pub fn index_at_or_after(&self, t: f64) -> Option<usize> {
        if t > self.horizon() + self.tol() {
            return None;
        }
        let k = self.points.partition_point(|&p| p < t - self.tol());
        Some(k.min(self.n_steps()))
    }

    /// Maps every point of `coarse` to its index in `self`, if `self` refines `coarse`.
    pub fn refinement_map(&self, coarse: &TimeGrid) -> Option<Vec<usize>> {
        if (coarse.horizon() - self.horizon()).abs() > self.tol() {
            return None;
        }
        coarse.points.iter().map(|&t| self.index_of(t)).collect()
    }
}

/// A state-feedback volatility rule `sigma = rule(t, B_t)`.
#[derive(Clone)]
pub struct FeedbackRule {
    pub id: String,
    rule: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl FeedbackRule {
    pub fn new(id: impl Into<String>, rule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            id: id.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn eval(&self, t: f64, b: f64) -> f64 {
        (self.rule)(t, b)
    }
}

impl fmt::Debug for FeedbackRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeedbackRule").field("id", &self.id).finish()
    }
}

/// One scenario of the volatility-uncertainty family.
#[derive(Debug, Clone)]
pub enum VolatilityControl {
    Constant(f64),
    /// `values[i]` applies on `[breakpoints[i-1], breakpoints[i])`; needs one more value than breakpoints.
    PiecewiseDeterministic { breakpoints: Vec<f64>, values: Vec<f64> },
    StateFeedback(FeedbackRule),
}

impl VolatilityControl {
    pub fn feedback(id: impl Into<String>, rule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::StateFeedback(FeedbackRule::new(id, rule))
    }

    /// `sigma_hi` while `B > 0`, `sigma_lo` otherwise.
    pub fn bang_bang_positive(band: VolatilityBand) -> Self {
        let (lo, hi) = (band.sigma_lo, band.sigma_hi);
        Self::feedback("bang(hi if b>0)", move |_, b| if b > 0.0 { hi } else { lo })
    }

    pub fn id(&self) -> String {
        match self {
            Self::Constant(s) => {
                let r = format!("{s:.10}");
                format!("const({})", r.trim_end_matches('0').trim_end_matches('.'))
            }
            Self::PiecewiseDeterministic { breakpoints, values } => {
                format!("piecewise({breakpoints:?};{values:?})")
            }
            Self::StateFeedback(r) => r.id.clone(),
        }
    }

    pub fn sigma(&self, t: f64, b: f64) -> f64 {
        match self {
            Self::Constant(s) => *s,
            Self::PiecewiseDeterministic { breakpoints, values } => {
                values[breakpoints.partition_point(|&bp| bp <= t)]
            }
            Self::StateFeedback(r) => r.eval(t, b),
        }
    }

    fn validate_shape(&self) -> Result<()> {
        if let Self::PiecewiseDeterministic { breakpoints, values } = self {
            if values.len() != breakpoints.len() + 1 {
                return Err(Error::Config(format!(
                    "piecewise control needs {} values for {} breakpoints, got {}",
                    breakpoints.len() + 1,
                    breakpoints.len(),
                    values.len()
                )));
            }
            if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("piecewise breakpoints must increase".into()));
            }
        }
        Ok(())
    }

    /// Evaluates the control and rejects values outside the band.
    pub fn checked_sigma(&self, band: &VolatilityBand, t: f64, b: f64) -> Result<f64> {
        let sigma = self.sigma(t, b);
        if !band.contains(sigma) {
            return Err(Error::BandViolation {
                control: self.id(),
                t,
                sigma,
                lo: band.sigma_lo,
                hi: band.sigma_hi,
            });
        }
        Ok(sigma)
    }
}

/// A finite family of scenarios, indexed by position.
#[derive(Debug, Clone)]
pub struct ControlSet(pub Vec<VolatilityControl>);

impl ControlSet {
    /// `n` equally spaced constant controls covering the band (endpoints included).
    pub fn constants(band: VolatilityBand, n: usize) -> Self {
        let (lo, hi) = (band.sigma_lo, band.sigma_hi);
        if n <= 1 || band.is_degenerate() {
            return Self(vec![VolatilityControl::Constant(hi)]);
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut v: Vec<_> = (0..n).map(|i| VolatilityControl::Constant(lo + step * i as f64)).collect();
        v[n - 1] = VolatilityControl::Constant(hi);
        Self(v)
    }

    /// Eleven constant controls plus four bang-bang feedback controls.
    pub fn default_for(band: VolatilityBand) -> Self {
        let mut set = Self::constants(band, 11).0;
        let (lo, hi) = (band.sigma_lo, band.sigma_hi);
        set.push(VolatilityControl::bang_bang_positive(band));
        set.push(VolatilityControl::feedback("bang(lo if b>0)", move |_, b| {
            if b > 0.0 {
                lo
            } else {
                hi
            }
        }));
        set.push(VolatilityControl::feedback("bang(hi if |b|<sqrt t)", move |t: f64, b: f64| {
            if b.abs() < t.sqrt() {
                hi
            } else {
                lo
            }
        }));
        set.push(VolatilityControl::feedback("bang(hi if |b|>=sqrt t)", move |t: f64, b: f64| {
            if b.abs() >= t.sqrt() {
                hi
            } else {
                lo
            }
        }));
        Self(set)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VolatilityControl> {
        self.0.iter()
    }
}

impl From<Vec<VolatilityControl>> for ControlSet {
    fn from(v: Vec<VolatilityControl>) -> Self {
        Self(v)
    }
}

/// One discretized trajectory `(t, B_t, <B>_t)` under one scenario.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub grid: Arc<TimeGrid>,
    pub b: Vec<f64>,
    pub qv: Vec<f64>,
    pub control_id: Arc<str>,
    pub seed: SeedSlot,
}

/// Borrowed prefix of a path up to (and including) grid index `k`.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub t: &'a [f64],
    pub b: &'a [f64],
    pub qv: &'a [f64],
}

impl<'a> PathView<'a> {
    /// Index of the last visible point.
    pub fn k(&self) -> usize {
        self.t.len() - 1
    }

    pub fn time(&self) -> f64 {
        self.t[self.k()]
    }

    pub fn b_now(&self) -> f64 {
        self.b[self.k()]
    }

    pub fn qv_now(&self) -> f64 {
        self.qv[self.k()]
    }
}

impl SamplePath {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.grid.t(k)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn db(&self, k: usize) -> f64 {
        self.b[k + 1] - self.b[k]
    }

    pub fn dqv(&self, k: usize) -> f64 {
        self.qv[k + 1] - self.qv[k]
    }

    pub fn terminal(&self) -> f64 {
        self.b[self.b.len() - 1]
    }

    pub fn view(&self) -> PathView<'_> {
        self.view_until(self.n_steps())
    }

    pub fn view_until(&self, k: usize) -> PathView<'_> {
        PathView {
            t: &self.grid.points()[..=k],
            b: &self.b[..=k],
            qv: &self.qv[..=k],
        }
    }

    /// Realized sum of squared increments, `sum (dB_k)^2`, up to index `k`.
    pub fn realized_qv(&self, k: usize) -> f64 {
        (0..k).map(|j| self.db(j) * self.db(j)).sum()
    }

    /// Writes `t,b,qv` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,b,qv")?;
        for k in 0..=self.n_steps() {
            writeln!(w, "{},{},{}", self.t(k), self.b[k], self.qv[k])?;
        }
        Ok(())
    }
}

/// Builds a path from pre-drawn standard normals, one per step.
pub fn path_from_normals(
    control: &VolatilityControl,
    grid: Arc<TimeGrid>,
    band: &VolatilityBand,
    normals: &[f64],
    seed: SeedSlot,
) -> Result<SamplePath> {
    band.validate()?;
    control.validate_shape()?;
    let n = grid.n_steps();
    if normals.len() != n {
        return Err(Error::Contract(format!("expected {n} normals, got {}", normals.len())));
    }
    let (lo2, hi2) = (band.sigma_lo * band.sigma_lo, band.sigma_hi * band.sigma_hi);
    let mut b = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    b.push(0.0);
    qv.push(0.0);
    for (k, &z) in normals.iter().enumerate() {
        let t = grid.t(k);
        let dt = grid.dt(k);
        let sigma = control.checked_sigma(band, t, b[k])?;
        b.push(b[k] + sigma * dt.sqrt() * z);
        qv.push(accumulate_qv(qv[k], sigma * sigma * dt, lo2 * dt, hi2 * dt));
    }
    Ok(SamplePath {
        grid,
        b,
        qv,
        control_id: control.id().into(),
        seed,
    })
}

/// `prev + inc`, nudged by at most a few ulps so that the stored increment
/// `next - prev` stays inside `[lo, hi]` in floating point.
fn accumulate_qv(prev: f64, inc: f64, lo: f64, hi: f64) -> f64 {
    let mut next = prev + inc;
    while next - prev > hi {
        next = next.next_down();
    }
    while next - prev < lo {
        next = next.next_up();
    }
    next
}

/// Simulates one path under `control`.
pub fn generate_path(
    control: &VolatilityControl,
    grid: Arc<TimeGrid>,
    band: &VolatilityBand,
    seed: SeedSlot,
) -> Result<SamplePath> {
    let normals = seed.normals(grid.n_steps());
    path_from_normals(control, grid, band, &normals, seed)
}

/// Simulates `n_paths` independent paths. Path `i` uses the stream
/// `(master_seed, control_slot, i)`, so the result does not depend on the
/// thread count.
pub fn generate_ensemble(
    control: &VolatilityControl,
    grid: Arc<TimeGrid>,
    band: &VolatilityBand,
    n_paths: usize,
    seeds: SeedPolicy,
    control_slot: u64,
) -> Result<Vec<SamplePath>> {
    if n_paths == 0 {
        return Err(Error::Config("n_paths must be at least 1".into()));
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| generate_path(control, grid.clone(), band, seeds.slot(control_slot, i)))
        .collect()
}

/// Simulates one path on each of several nested grids, all driven by the same
/// Brownian increments. Normals are drawn on the finest grid (the last one)
/// and aggregated onto each coarser grid, `Z_c = sum Z_i sqrt(dt_i) / sqrt(dt_c)`.
pub fn generate_nested(
    control: &VolatilityControl,
    grids: &[Arc<TimeGrid>],
    band: &VolatilityBand,
    seed: SeedSlot,
) -> Result<Vec<SamplePath>> {
    let finest = grids
        .last()
        .ok_or_else(|| Error::Config("no grids given".into()))?;
    let fine_normals = seed.normals(finest.n_steps());
    grids
        .iter()
        .map(|g| {
            let map = finest
                .refinement_map(g)
                .ok_or_else(|| Error::Config("grids are not nested".into()))?;
            let normals: Vec<f64> = map
                .windows(2)
                .enumerate()
                .map(|(k, w)| {
                    let w_incr: f64 = (w[0]..w[1]).map(|i| fine_normals[i] * finest.dt(i).sqrt()).sum();
                    w_incr / g.dt(k).sqrt()
                })
                .collect();
            path_from_normals(control, g.clone(), band, &normals, seed)
        })
        .collect()
}
