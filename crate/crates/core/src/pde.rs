//! Explicit finite differences for the G-heat equation `u_t = G(u_xx)`,
//! `u(0, .) = phi`, so that `u(T, x)` approximates `E^[phi(x + B_T)]`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expectation::{g_eval, GFunction, MonteCarlo, Payoff};
use crate::scenario::VolatilityBand;

/// Spatial points above which the update runs in parallel.
const PARALLEL_THRESHOLD: usize = 8192;

/// Uniform space-time grid for the explicit scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl PdeGrid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, dt: f64, horizon: f64) -> Result<Self> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Config(format!("invalid spatial domain [{x_min}, {x_max}]")));
        }
        if n_x < 3 {
            return Err(Error::Config(format!("n_x must be at least 3, got {n_x}")));
        }
        if !(dt > 0.0) || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("need dt > 0 and T > 0, got dt={dt}, T={horizon}")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            dt,
            horizon,
        })
    }

    /// Grid centred at `x0` with half-width `buffer_sigmas * sigma_hi * sqrt(T)`,
    /// spacing about `dx`, and the largest stable time step dividing `T`.
    pub fn centered(band: &VolatilityBand, horizon: f64, x0: f64, buffer_sigmas: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) || !(buffer_sigmas > 0.0) {
            return Err(Error::Config("dx and buffer width must be positive".into()));
        }
        let half = buffer_sigmas * band.sigma_hi * horizon.sqrt();
        let cells = (2.0 * half / dx).ceil().max(2.0) as usize;
        let dx = 2.0 * half / cells as f64;
        let dt_max = dx * dx / (2.0 * band.sigma_hi * band.sigma_hi);
        let steps = (horizon / dt_max).ceil().max(1.0);
        Self::new(x0 - half, x0 + half, cells + 1, horizon / steps, horizon)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_x - 1 {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn n_t(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil() as usize
    }

    /// `dt <= dx^2 / (2 sigma_hi^2)`.
    pub fn check_cfl(&self, band: &VolatilityBand) -> Result<()> {
        let limit = self.dx().powi(2) / (2.0 * band.sigma_hi * band.sigma_hi);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "CFL violated: dt = {} exceeds dx^2/(2 sigma_hi^2) = {limit}",
                self.dt
            )));
        }
        Ok(())
    }

    /// Distance from `x` to the nearer boundary.
    pub fn buffer_at(&self, x: f64) -> f64 {
        (x - self.x_min).min(self.x_max - x)
    }
}

/// Terminal condition `phi`.
#[derive(Clone)]
pub struct TerminalPayoff {
    pub name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for TerminalPayoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalPayoff").field("name", &self.name).finish()
    }
}

impl TerminalPayoff {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| c)
    }

    pub fn square() -> Self {
        Self::new("x^2", |x| x * x)
    }

    pub fn neg_square() -> Self {
        Self::new("-x^2", |x| -x * x)
    }

    pub fn call() -> Self {
        Self::new("max(x,0)", |x| x.max(0.0))
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "x^2" => Self::square(),
            "-x^2" => Self::neg_square(),
            "max(x,0)" | "x+" => Self::call(),
            _ => return None,
        })
    }

    /// `phi(x0 + B_T)` as a path functional.
    pub fn as_payoff(&self, x0: f64, horizon: f64) -> Payoff {
        let f = self.f.clone();
        Payoff::at_time(horizon, move |b| f(x0 + b))
    }
}

/// Snapshots of `u(t_j, .)` on the spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub grid: PdeGrid,
    pub terminal: String,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

impl ValueSurface {
    pub fn final_values(&self) -> &[f64] {
        self.u.last().expect("at least the initial snapshot")
    }

    /// Linear interpolation of `u(T, .)`.
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        let u = self.final_values();
        let s = ((x - g.x_min) / g.dx()).clamp(0.0, (g.n_x - 1) as f64);
        let i = (s.floor() as usize).min(g.n_x - 2);
        let w = s - i as f64;
        if w == 0.0 {
            return u[i];
        }
        (1.0 - w) * u[i] + w * u[i + 1]
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.u) {
            for (i, v) in row.iter().enumerate() {
                writeln!(w, "{t},{},{v}", self.grid.x(i))?;
            }
        }
        Ok(())
    }
}

/// Explicit monotone scheme `u <- u + dt G(D^2 u)` with `u = phi` held on the
/// boundary. Keeps `snapshots + 1` evenly spaced time slices.
pub fn solve(phi: &TerminalPayoff, band: &VolatilityBand, grid: &PdeGrid, snapshots: usize) -> Result<ValueSurface> {
    band.validate()?;
    grid.check_cfl(band)?;
    let g = GFunction::new(*band);
    let n = grid.n_x;
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    let mut u: Vec<f64> = (0..n).map(|i| phi.eval(grid.x(i))).collect();
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            what: "terminal condition".into(),
        });
    }
    let mut next = u.clone();
    let n_t = grid.n_t();
    let every = (n_t / snapshots.max(1)).max(1);
    let mut times = vec![0.0];
    let mut slices = vec![u.clone()];
    let mut t = 0.0;
    for step in 0..n_t {
        let dt = grid.dt.min(grid.horizon - t);
        let update = |i: usize, out: &mut f64| {
            let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2;
            *out = u[i] + dt * g_eval(&g, d2);
        };
        if n >= PARALLEL_THRESHOLD {
            next[1..n - 1]
                .par_iter_mut()
                .enumerate()
                .for_each(|(j, out)| update(j + 1, out));
        } else {
            for (j, out) in next[1..n - 1].iter_mut().enumerate() {
                update(j + 1, out);
            }
        }
        std::mem::swap(&mut u, &mut next);
        t = if step + 1 == n_t { grid.horizon } else { t + dt };
        if (step + 1) % every == 0 || step + 1 == n_t {
            if times.last() != Some(&t) {
                times.push(t);
                slices.push(u.clone());
            }
        }
    }
    Ok(ValueSurface {
        grid: grid.clone(),
        terminal: phi.name.clone(),
        times,
        u: slices,
    })
}

/// Monte Carlo against PDE for one terminal payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub payoff: String,
    pub mc_value: f64,
    pub mc_std_error: f64,
    pub mc_argmax_control_id: String,
    pub pde_value: f64,
    pub abs_gap: f64,
    pub scheme_tolerance: f64,
    pub pass: bool,
    /// Set when the readout point is closer than `6 sigma_hi sqrt(T)` to the boundary.
    pub boundary_warning: bool,
}

impl CrossValidation {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

/// Estimates `E^[phi(x0 + B_T)]` both ways and applies
/// `gap <= max(1% |pde|, 3 se + scheme_tolerance)`.
pub fn cross_validate(
    phi: &TerminalPayoff,
    x0: f64,
    mc: &MonteCarlo,
    grid: &PdeGrid,
    scheme_tolerance: f64,
) -> Result<CrossValidation> {
    let horizon = mc.grid.horizon();
    if (grid.horizon - horizon).abs() > 1e-12 * horizon {
        return Err(Error::Config(format!(
            "PDE horizon {} differs from Monte Carlo horizon {horizon}",
            grid.horizon
        )));
    }
    let surface = solve(phi, &mc.band, grid, 1)?;
    let pde_value = surface.value_at(x0);
    let est = mc.sup_expectation(&phi.as_payoff(x0, horizon))?;
    let abs_gap = (est.value - pde_value).abs();
    let allowed = (0.01 * pde_value.abs()).max(3.0 * est.std_error + scheme_tolerance);
    Ok(CrossValidation {
        payoff: phi.name.clone(),
        mc_value: est.value,
        mc_std_error: est.std_error,
        mc_argmax_control_id: est.argmax_control_id,
        pde_value,
        abs_gap,
        scheme_tolerance,
        pass: abs_gap <= allowed,
        boundary_warning: grid.buffer_at(x0) < 6.0 * mc.band.sigma_hi * horizon.sqrt(),
    })
}

/// `E[phi(x0 + sigma W_T)]` for the convex test payoffs under one volatility.
pub fn gaussian_closed_form(name: &str, sigma: f64, x0: f64, horizon: f64) -> Option<f64> {
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let s = sigma * horizon.sqrt();
    match name {
        "x^2" => Some(x0 * x0 + s * s),
        "-x^2" => Some(-(x0 * x0 + s * s)),
        "max(x,0)" => {
            if s == 0.0 {
                return Some(x0.max(0.0));
            }
            let n = Normal::standard();
            let d = x0 / s;
            Some(x0 * n.cdf(d) + s * n.pdf(d))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedPolicy;
    use crate::scenario::{ControlSet, TimeGrid};

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    fn grid(band: &VolatilityBand) -> PdeGrid {
        PdeGrid::centered(band, 1.0, 0.0, 6.0, 0.04).unwrap()
    }

    #[test]
    fn cfl_is_enforced() {
        let b = band12();
        let g = PdeGrid::new(-1.0, 1.0, 21, 0.01, 1.0).unwrap();
        assert!(matches!(solve(&TerminalPayoff::square(), &b, &g, 1), Err(Error::Config(_))));
        let ok = PdeGrid::new(-1.0, 1.0, 21, 0.00125, 1.0).unwrap();
        assert!(ok.check_cfl(&b).is_ok());
        assert!(PdeGrid::new(1.0, -1.0, 21, 0.1, 1.0).is_err());
        assert!(grid(&b).check_cfl(&b).is_ok());
    }

    #[test]
    fn constant_is_preserved_exactly() {
        let b = band12();
        let s = solve(&TerminalPayoff::constant(1.7), &b, &grid(&b), 4).unwrap();
        assert!(s.u.iter().flatten().all(|&v| v == 1.7));
        assert_eq!(s.times.last(), Some(&1.0));
    }

    #[test]
    fn heat_equation_oracles() {
        let b = band12();
        let sq = solve(&TerminalPayoff::square(), &b, &grid(&b), 1).unwrap().value_at(0.0);
        assert!((sq - 4.0).abs() < 0.005 * 4.0, "{sq}");
        let nsq = solve(&TerminalPayoff::neg_square(), &b, &grid(&b), 1).unwrap().value_at(0.0);
        assert!((nsq + 1.0).abs() < 0.005, "{nsq}");
        let call = solve(&TerminalPayoff::call(), &b, &grid(&b), 1).unwrap().value_at(0.0);
        let oracle = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((call - oracle).abs() < 0.01 * oracle, "{call} vs {oracle}");
        assert!((gaussian_closed_form("max(x,0)", 2.0, 0.0, 1.0).unwrap() - oracle).abs() < 1e-12);

        let deg = VolatilityBand::new(1.5, 1.5).unwrap();
        let v = solve(&TerminalPayoff::square(), &deg, &grid(&deg), 1).unwrap().value_at(0.0);
        assert!((v - 2.25).abs() < 0.005 * 2.25, "{v}");
        let c = solve(&TerminalPayoff::call(), &deg, &grid(&deg), 1).unwrap().value_at(0.3);
        let o = gaussian_closed_form("max(x,0)", 1.5, 0.3, 1.0).unwrap();
        assert!((c - o).abs() < 0.005 * o, "{c} vs {o}");
    }

    #[test]
    fn scheme_is_monotone_and_sublinear() {
        let b = band12();
        let g = PdeGrid::centered(&b, 0.5, 0.0, 6.0, 0.05).unwrap();
        let lo = solve(&TerminalPayoff::new("sin", f64::sin), &b, &g, 3).unwrap();
        let hi = solve(&TerminalPayoff::new("sin+bump", |x| x.sin() + (-x * x).exp()), &b, &g, 3).unwrap();
        for (a, c) in lo.u.iter().flatten().zip(hi.u.iter().flatten()) {
            assert!(a <= c);
        }
        let f = solve(&TerminalPayoff::new("cos", f64::cos), &b, &g, 1).unwrap().value_at(0.0);
        let h = solve(&TerminalPayoff::new("-x^2/4", |x| -x * x / 4.0), &b, &g, 1).unwrap().value_at(0.0);
        let fh = solve(&TerminalPayoff::new("sum", |x| x.cos() - x * x / 4.0), &b, &g, 1).unwrap().value_at(0.0);
        assert!(fh <= f + h + 1e-12);
    }

    #[test]
    fn surface_csv_and_boundary_flag() {
        let b = band12();
        let g = PdeGrid::new(-1.0, 1.0, 5, 0.02, 0.1).unwrap();
        let s = solve(&TerminalPayoff::square(), &b, &g, 5).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,u\n"));
        assert_eq!(text.lines().count(), 1 + s.times.len() * 5);

        let mc = MonteCarlo::new(b, TimeGrid::uniform(0.1, 4).unwrap(), ControlSet::constants(b, 2), 200, SeedPolicy::new(1)).unwrap();
        let cv = cross_validate(&TerminalPayoff::constant(2.0), 0.0, &mc, &g, 1e-3).unwrap();
        assert!(cv.boundary_warning);
        assert_eq!(cv.mc_value, 2.0);
        assert_eq!(cv.pde_value, 2.0);
        assert!(cv.pass);
        let j: serde_json::Value = serde_json::from_str(&cv.to_json()).unwrap();
        for k in ["mc_value", "mc_std_error", "pde_value", "abs_gap", "pass"] {
            assert!(j.get(k).is_some());
        }
    }

    #[test]
    fn cross_validation_square() {
        let b = band12();
        let mc = MonteCarlo::new(b, TimeGrid::uniform(1.0, 16).unwrap(), ControlSet::default_for(b), 20_000, SeedPolicy::new(8)).unwrap();
        let cv = cross_validate(&TerminalPayoff::square(), 0.0, &mc, &grid(&b), 1e-3).unwrap();
        assert!(cv.pass, "{cv:?}");
        assert!(!cv.boundary_warning);
    }
}
