//! Grid-decidable stopping times, their dyadic upper approximations, stopped
//! integrals and localizing sequences.
//!
//! Every stopping time resolves to a grid index: the first index at which its
//! rule triggers, or `N` if it never does. Whether `tau <= t_k` is therefore
//! decided by the path up to `t_k`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integration::{integrate_samples, product, GridProcess, Integrand, IntegralKind};
use crate::scenario::SamplePath;

#[derive(Debug, Clone)]
pub enum Monitor {
    B,
    AbsB,
    Qv,
    Process(GridProcess),
}

impl Monitor {
    fn series(&self, path: &SamplePath) -> Result<Vec<f64>> {
        Ok(match self {
            Monitor::B => path.b.clone(),
            Monitor::AbsB => path.b.iter().map(|x| x.abs()).collect(),
            Monitor::Qv => path.qv.clone(),
            Monitor::Process(p) => p.sample(path)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Triggers once the monitored value is `>= threshold`.
    Up,
    /// Triggers once the monitored value is `<= threshold`.
    Down,
}

#[derive(Debug, Clone)]
pub enum StoppingTime {
    Deterministic(f64),
    HittingTime {
        monitor: Monitor,
        threshold: f64,
        direction: Direction,
    },
    /// First time `int_0^t |eta|^power d(measure) > level`.
    IntegralThreshold {
        integrand: GridProcess,
        power: f64,
        measure: IntegralKind,
        level: f64,
    },
    MinOf(Box<StoppingTime>, Box<StoppingTime>),
}

impl StoppingTime {
    pub fn hitting(monitor: Monitor, threshold: f64, direction: Direction) -> Self {
        Self::HittingTime {
            monitor,
            threshold,
            direction,
        }
    }

    /// `inf{t : int_0^t |eta_s|^power ds > level}`.
    pub fn integral_threshold(integrand: GridProcess, power: f64, level: f64) -> Self {
        Self::IntegralThreshold {
            integrand,
            power,
            measure: IntegralKind::Dt,
            level,
        }
    }

    pub fn min(self, other: StoppingTime) -> Self {
        Self::MinOf(Box::new(self), Box::new(other))
    }

    /// Grid index at which the rule first triggers, `N` if it never does.
    pub fn stop_index(&self, path: &SamplePath) -> Result<usize> {
        let n = path.n_steps();
        Ok(match self {
            Self::Deterministic(t) => path.grid.index_at_or_after(*t).unwrap_or(n),
            Self::HittingTime {
                monitor,
                threshold,
                direction,
            } => {
                let s = monitor.series(path)?;
                s.iter()
                    .position(|&x| match direction {
                        Direction::Up => x >= *threshold,
                        Direction::Down => x <= *threshold,
                    })
                    .unwrap_or(n)
            }
            Self::IntegralThreshold {
                integrand,
                power,
                measure,
                level,
            } => {
                let v: Vec<f64> = integrand.sample(path)?.into_iter().map(|x| x.abs().powf(*power)).collect();
                let run = integrate_samples(&v, path, *measure)?;
                run.values.iter().position(|&x| x > *level).unwrap_or(n)
            }
            Self::MinOf(a, b) => a.stop_index(path)?.min(b.stop_index(path)?),
        })
    }
}

/// The stopping time's value on `path`, snapped upward to the grid.
pub fn evaluate(tau: &StoppingTime, path: &SamplePath) -> Result<f64> {
    Ok(path.t(tau.stop_index(path)?))
}

/// The smallest point of the level-`n` dyadic mesh of `[0, T]` that is `>= tau`.
pub fn dyadic_upper(tau: &StoppingTime, n: u32, path: &SamplePath) -> Result<f64> {
    let t = evaluate(tau, path)?;
    dyadic_ceil(t, path.horizon(), n)
}

/// `min { m T / 2^n : m T / 2^n >= t }`.
pub fn dyadic_ceil(t: f64, horizon: f64, n: u32) -> Result<f64> {
    if n == 0 || n > 60 {
        return Err(Error::Domain(format!("dyadic level must be in 1..=60, got {n}")));
    }
    let cells = (1u64 << n) as f64;
    let mesh = horizon / cells;
    let mut m = (t / mesh).ceil().clamp(0.0, cells);
    while m > 0.0 && (m - 1.0) * mesh >= t {
        m -= 1.0;
    }
    while m < cells && m * mesh < t {
        m += 1.0;
    }
    Ok(m * mesh)
}

/// Step representation of `1_{[0, tau]}` on the grid: on `[t_k, t_{k+1})`
/// the value is 1 iff `t_k < tau`, which is known at `t_k`. It differs from
/// the pointwise indicator only at the single time `tau`.
pub fn indicator_process(tau: &StoppingTime) -> GridProcess {
    let tau = tau.clone();
    GridProcess::adapted_from_path(
        move |p: &SamplePath| {
            let j = tau.stop_index(p)?;
            let n = p.n_steps();
            Ok((0..=n).map(|k| if k < j || j == n { 1.0 } else { 0.0 }).collect())
        },
        Some(1.0),
    )
}

/// `int_0^{t ^ tau} eta dB`, read from the running integral at the stopped index.
pub fn stopped_integral(eta: &dyn Integrand, tau: &StoppingTime, t: f64, path: &SamplePath) -> Result<f64> {
    let kt = path.grid.index_of(t).ok_or(Error::Alignment { t })?;
    let j = tau.stop_index(path)?;
    let run = integrate_samples(&eta.sample(path)?, path, IntegralKind::DB)?;
    Ok(run.values[kt.min(j)])
}

/// `int_0^t 1_{[0,tau]} eta dB`, the other side of the stopped-integral identity.
pub fn integral_of_stopped(eta: &GridProcess, tau: &StoppingTime, t: f64, path: &SamplePath) -> Result<f64> {
    let kt = path.grid.index_of(t).ok_or(Error::Alignment { t })?;
    let stopped = product(&indicator_process(tau), eta)?;
    let run = integrate_samples(&stopped.sample(path)?, path, IntegralKind::DB)?;
    Ok(run.values[kt])
}

/// An increasing family of stopping times `m -> sigma_m`.
#[derive(Clone)]
pub struct LocalizationSequence {
    id: String,
    rule: Arc<dyn Fn(u32) -> StoppingTime + Send + Sync>,
}

impl fmt::Debug for LocalizationSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalizationSequence").field("id", &self.id).finish()
    }
}

impl LocalizationSequence {
    pub fn new(id: impl Into<String>, rule: impl Fn(u32) -> StoppingTime + Send + Sync + 'static) -> Self {
        Self {
            id: id.into(),
            rule: Arc::new(rule),
        }
    }

    /// `sigma_m = T` for every `m`.
    pub fn horizon() -> Self {
        Self::new("horizon", |_| StoppingTime::Deterministic(f64::INFINITY))
    }

    /// `sigma_m = inf{t : |B_t| >= m}`.
    pub fn exit_level() -> Self {
        Self::new("exit |b|>=m", |m| StoppingTime::hitting(Monitor::AbsB, m as f64, Direction::Up))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn at(&self, m: u32) -> StoppingTime {
        (self.rule)(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationRule {
    /// `inf{t : int_0^t |eta| ds > n}`
    L1,
    /// `inf{t : int_0^t |eta|^2 ds > n}`
    L2,
}

/// `(1_{[0, tau_n]} eta, tau_n)` with `tau_n` the integral-threshold time
/// for `rule`, capped by `sigma_n`.
pub fn localize(
    eta: &GridProcess,
    rule: LocalizationRule,
    sequence: &LocalizationSequence,
    n: u32,
) -> Result<(GridProcess, StoppingTime)> {
    if n == 0 {
        return Err(Error::Domain("localization level must be >= 1".into()));
    }
    let power = match rule {
        LocalizationRule::L1 => 1.0,
        LocalizationRule::L2 => 2.0,
    };
    let tau = StoppingTime::integral_threshold(eta.clone(), power, n as f64).min(sequence.at(n));
    let stopped = product(&indicator_process(&tau), eta)?;
    Ok((stopped, tau))
}

/// Paths on which `int_0^T |eta|^p dt` fails to be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub n_paths: usize,
    pub divergent: Vec<usize>,
}

impl MembershipReport {
    pub fn all_finite(&self) -> bool {
        self.divergent.is_empty()
    }
}

/// Empirical check of `int_0^T |eta|^p dt < infinity` on every sampled path
/// (every scenario measure must give it probability one).
pub fn membership_check(eta: &dyn Integrand, p: f64, paths: &[SamplePath]) -> MembershipReport {
    let divergent = paths
        .iter()
        .enumerate()
        .filter(|(_, path)| {
            let finite = eta.sample(path).ok().and_then(|v| {
                let w: Vec<f64> = v.into_iter().map(|x| x.abs().powf(p)).collect();
                let total = w.iter().take(path.n_steps()).enumerate().map(|(k, x)| x * path.grid.dt(k)).sum::<f64>();
                total.is_finite().then_some(())
            });
            finite.is_none()
        })
        .map(|(i, _)| i)
        .collect();
    MembershipReport {
        n_paths: paths.len(),
        divergent,
    }
}

/// `path_id,tau,tau_dyadic_n` rows.
pub fn write_stop_times_csv<W: std::io::Write>(
    mut w: W,
    tau: &StoppingTime,
    n: u32,
    paths: &[SamplePath],
) -> Result<()> {
    writeln!(w, "path_id,tau,tau_dyadic_{n}")?;
    for (i, p) in paths.iter().enumerate() {
        writeln!(w, "{i},{},{}", evaluate(tau, p)?, dyadic_upper(tau, n, p)?)?;
    }
    Ok(())
}

/// Random stopping time for identity tests: a deterministic time, a hitting
/// time of `B`, `|B|` or `<B>`, an integral threshold of `|sin(B) + t|^p`,
/// or the minimum of two such times.
pub fn random_stopping_time<R: rand::Rng>(rng: &mut R, horizon: f64) -> StoppingTime {
    fn leaf<R: rand::Rng>(rng: &mut R, horizon: f64) -> StoppingTime {
        match rng.random_range(0..6) {
            0 => StoppingTime::Deterministic(rng.random_range(0.0..=horizon)),
            1 => StoppingTime::hitting(Monitor::B, rng.random_range(0.1..2.0), Direction::Up),
            2 => StoppingTime::hitting(Monitor::B, -rng.random_range(0.1..2.0), Direction::Down),
            3 => StoppingTime::hitting(Monitor::AbsB, rng.random_range(0.1..2.5), Direction::Up),
            4 => StoppingTime::hitting(Monitor::Qv, rng.random_range(0.1..3.0) * horizon, Direction::Up),
            _ => {
                let shift: f64 = rng.random_range(-1.0..1.0);
                let power = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
                let eta = GridProcess::of_state(move |t, b| b.sin() + t + shift);
                StoppingTime::integral_threshold(eta, power, rng.random_range(0.05..1.0) * horizon)
            }
        }
    }
    if rng.random_bool(0.25) {
        leaf(rng, horizon).min(leaf(rng, horizon))
    } else {
        leaf(rng, horizon)
    }
}
