//! Experiment configuration, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! seed = 1592617837
//! suites = ["axioms", "ito"]   # or ["all"]
//!
//! [band]
//! sigma_lo = 1.0
//! sigma_hi = 2.0
//!
//! [ito]
//! functions = ["x^2", "x^3", "sin x"]
//! levels = [128, 256, 512, 1024, 2048]
//! n_paths = 1000
//! ```
//!
//! Every section and key is optional; see the field docs for defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedPolicy;
use crate::integration::GridProcess;
use crate::scenario::{ControlSet, TimeGrid, VolatilityBand};
use crate::stopping::{Direction, Monitor, StoppingTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Axioms,
    Integrals,
    Stopping,
    Ito,
    Pde,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Axioms, Suite::Integrals, Suite::Stopping, Suite::Ito, Suite::Pde];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Axioms => "axioms",
            Suite::Integrals => "integrals",
            Suite::Stopping => "stopping",
            Suite::Ito => "ito",
            Suite::Pde => "pde",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            Suite::Axioms => "monotonicity, constants, sub-additivity and homogeneity of the sup estimator",
            Suite::Integrals => "G-normal moments, zero-mean/energy/maximal inequalities, truncation tails",
            Suite::Stopping => "stopped-integral identity and dyadic approximation of stopping times",
            Suite::Ito => "Itô formula residual convergence, remainders and localization",
            Suite::Pde => "Monte Carlo against the G-heat equation",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite '{s}' (expected one of axioms, integrals, stopping, ito, pde, all)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            sigma_lo: 1.0,
            sigma_hi: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    /// Steps of the simulation grid shared by the axioms and integrals suites.
    pub n_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_steps: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    /// Evenly spaced constants plus four bang-bang feedback rules.
    Default,
    /// `n_constants` evenly spaced constants.
    Constants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub kind: ControlKind,
    pub n_constants: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            kind: ControlKind::Default,
            n_constants: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Width of every statistical acceptance band, in standard errors.
    pub n_std_errors: f64,
    pub order_min: f64,
    pub order_max: f64,
    /// Relative Monte Carlo against PDE tolerance.
    pub pde_relative: f64,
    /// Absolute discretization allowance of the PDE scheme.
    pub pde_scheme: f64,
    /// Upper bound for the truncation tail at the largest level.
    pub truncation_max: f64,
    /// Absolute tolerance for identities that hold up to rounding.
    pub rounding: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            n_std_errors: 3.0,
            order_min: 0.35,
            order_max: 0.65,
            pde_relative: 0.01,
            pde_scheme: 2e-3,
            truncation_max: 1e-3,
            rounding: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxiomsConfig {
    pub n_pairs: usize,
    /// Rounded down to a power of two so that sample means are exact.
    pub n_paths: usize,
}

impl Default for AxiomsConfig {
    fn default() -> Self {
        Self {
            n_pairs: 10_000,
            n_paths: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegralsConfig {
    pub n_processes: usize,
    pub n_paths: usize,
    pub max_pieces: usize,
    pub bound: f64,
    pub moment_orders: Vec<f64>,
    pub moment_paths: usize,
    pub moment_steps: usize,
    pub truncation_levels: Vec<f64>,
    pub truncation_paths: usize,
    pub truncation_steps: usize,
    /// Candidate thresholds `a` for the small-support integrands `1{|B_t| > a}`.
    pub ac_thresholds: Vec<f64>,
    pub ac_delta: f64,
    pub ac_epsilon: f64,
}

impl Default for IntegralsConfig {
    fn default() -> Self {
        Self {
            n_processes: 100,
            n_paths: 2_000,
            max_pieces: 8,
            bound: 1.0,
            moment_orders: vec![1.0, 2.0, 4.0],
            moment_paths: 100_000,
            moment_steps: 16,
            truncation_levels: vec![1.0, 2.0, 4.0, 8.0],
            truncation_paths: 200_000,
            truncation_steps: 32,
            ac_thresholds: vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            ac_delta: 1e-3,
            ac_epsilon: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingConfig {
    pub n_pairs: usize,
    pub n_paths: usize,
    /// Grid for the stopping suite; deliberately not a power of two.
    pub n_steps: usize,
    pub dyadic_max_level: u32,
    pub dyadic_paths: usize,
    /// Stopping times used for the dyadic checks and the stop-time export.
    pub times: Vec<StoppingSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorSpec {
    B,
    AbsB,
    Qv,
}

/// A stopping time written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StoppingSpec {
    /// A fixed time `t` (as a fraction of the horizon when `relative`).
    Deterministic {
        t: f64,
        #[serde(default)]
        relative: bool,
    },
    /// First grid time at which the monitored value crosses `threshold`.
    Hitting {
        monitor: MonitorSpec,
        threshold: f64,
        direction: Direction,
    },
    /// First time `int_0^t |B_s|^power ds > level`.
    Integral { power: f64, level: f64 },
}

impl StoppingSpec {
    pub fn build(&self, horizon: f64) -> StoppingTime {
        match *self {
            StoppingSpec::Deterministic { t, relative } => StoppingTime::Deterministic(if relative { t * horizon } else { t }),
            StoppingSpec::Hitting {
                monitor,
                threshold,
                direction,
            } => {
                let m = match monitor {
                    MonitorSpec::B => Monitor::B,
                    MonitorSpec::AbsB => Monitor::AbsB,
                    MonitorSpec::Qv => Monitor::Qv,
                };
                StoppingTime::hitting(m, threshold, direction)
            }
            StoppingSpec::Integral { power, level } => {
                StoppingTime::integral_threshold(GridProcess::brownian(), power, level)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StoppingSpec::Deterministic { t, .. } => t >= 0.0 && t.is_finite(),
            StoppingSpec::Hitting { threshold, .. } => threshold.is_finite(),
            StoppingSpec::Integral { power, level } => power >= 1.0 && level > 0.0 && level.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("stopping.times: invalid entry {self:?}")))
        }
    }
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1_000,
            n_paths: 1_000,
            n_steps: 100,
            dyadic_max_level: 10,
            dyadic_paths: 2_000,
            times: vec![
                StoppingSpec::Hitting {
                    monitor: MonitorSpec::AbsB,
                    threshold: 1.0,
                    direction: Direction::Up,
                },
                StoppingSpec::Hitting {
                    monitor: MonitorSpec::B,
                    threshold: 0.5,
                    direction: Direction::Up,
                },
                StoppingSpec::Hitting {
                    monitor: MonitorSpec::Qv,
                    threshold: 2.0,
                    direction: Direction::Up,
                },
                StoppingSpec::Deterministic { t: 0.3, relative: true },
                StoppingSpec::Integral { power: 2.0, level: 0.5 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoConfig {
    /// Names from `x`, `x^2`, `x^3`, `sin x`, `exp(-x^2)`.
    pub functions: Vec<String>,
    pub levels: Vec<usize>,
    pub n_paths: usize,
    pub remainder_levels: Vec<usize>,
    pub remainder_paths: usize,
    pub localization_level: u32,
    pub localization_paths: usize,
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self {
            functions: ["x^2", "x^3", "sin x", "exp(-x^2)"].map(String::from).to_vec(),
            levels: vec![128, 256, 512, 1024, 2048],
            n_paths: 1_000,
            remainder_levels: vec![32, 64, 128, 256, 512],
            remainder_paths: 2_000,
            localization_level: 2,
            localization_paths: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    /// Names from `x^2`, `-x^2`, `max(x,0)`.
    pub payoffs: Vec<String>,
    pub n_paths: usize,
    pub mc_steps: usize,
    pub dx: f64,
    /// Half-width of the spatial domain in units of `sigma_hi sqrt(T)`.
    pub buffer_sigmas: f64,
    pub x0: f64,
    pub snapshots: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            payoffs: ["x^2", "-x^2", "max(x,0)"].map(String::from).to_vec(),
            n_paths: 100_000,
            mc_steps: 16,
            dx: 0.02,
            buffer_sigmas: 6.0,
            x0: 0.0,
            snapshots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub suites: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub band: BandConfig,
    pub grid: GridConfig,
    pub controls: ControlConfig,
    pub tolerances: Tolerances,
    pub axioms: AxiomsConfig,
    pub integrals: IntegralsConfig,
    pub stopping: StoppingConfig,
    pub ito: ItoConfig,
    pub pde: PdeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: SeedPolicy::default().master_seed,
            suites: vec!["all".into()],
            out_dir: None,
            band: BandConfig::default(),
            grid: GridConfig::default(),
            controls: ControlConfig::default(),
            tolerances: Tolerances::default(),
            axioms: AxiomsConfig::default(),
            integrals: IntegralsConfig::default(),
            stopping: StoppingConfig::default(),
            ito: ItoConfig::default(),
            pde: PdeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Selected suites in canonical order, without duplicates.
    pub fn selected_suites(&self) -> Result<Vec<Suite>> {
        if self.suites.is_empty() {
            return Err(Error::Config("suites: select at least one suite".into()));
        }
        let mut out = Vec::new();
        for s in &self.suites {
            if s == "all" {
                out.extend(Suite::ALL);
            } else {
                out.push(s.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn band(&self) -> Result<VolatilityBand> {
        VolatilityBand::new(self.band.sigma_lo, self.band.sigma_hi)
    }

    pub fn grid(&self, n_steps: usize) -> Result<TimeGrid> {
        TimeGrid::uniform(self.grid.horizon, n_steps)
    }

    pub fn controls(&self) -> Result<ControlSet> {
        let band = self.band()?;
        Ok(match self.controls.kind {
            ControlKind::Default => ControlSet::default_for(band),
            ControlKind::Constants => ControlSet::constants(band, self.controls.n_constants),
        })
    }

    pub fn seeds(&self) -> SeedPolicy {
        SeedPolicy::new(self.seed)
    }

    /// Applies `--paths` to every suite's path count.
    pub fn override_paths(&mut self, n: usize) {
        self.axioms.n_paths = n;
        self.integrals.n_paths = n;
        self.integrals.moment_paths = n;
        self.integrals.truncation_paths = n;
        self.stopping.n_paths = n;
        self.stopping.dyadic_paths = n;
        self.ito.n_paths = n;
        self.ito.remainder_paths = n;
        self.ito.localization_paths = n;
        self.pde.n_paths = n;
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: &str| Err(Error::Config(format!("{field}: {msg}")));
        self.selected_suites()?;
        self.band().map_err(|e| Error::Config(format!("band: {e}")))?;
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return err("grid.horizon", "must be positive and finite");
        }
        if self.grid.n_steps == 0 {
            return err("grid.n_steps", "must be at least 1");
        }
        if self.controls.kind == ControlKind::Constants && self.controls.n_constants == 0 {
            return err("controls.n_constants", "must be at least 1");
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.n_std_errors", t.n_std_errors),
            ("tolerances.order_min", t.order_min),
            ("tolerances.order_max", t.order_max),
            ("tolerances.pde_relative", t.pde_relative),
            ("tolerances.pde_scheme", t.pde_scheme),
            ("tolerances.truncation_max", t.truncation_max),
            ("tolerances.rounding", t.rounding),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(name, "tolerances must be positive");
            }
        }
        if t.order_min >= t.order_max {
            return err("tolerances.order_min", "must be below order_max");
        }
        for (name, v) in [
            ("axioms.n_pairs", self.axioms.n_pairs),
            ("axioms.n_paths", self.axioms.n_paths),
            ("integrals.n_processes", self.integrals.n_processes),
            ("integrals.n_paths", self.integrals.n_paths),
            ("integrals.max_pieces", self.integrals.max_pieces),
            ("integrals.moment_paths", self.integrals.moment_paths),
            ("integrals.moment_steps", self.integrals.moment_steps),
            ("integrals.truncation_paths", self.integrals.truncation_paths),
            ("integrals.truncation_steps", self.integrals.truncation_steps),
            ("stopping.n_pairs", self.stopping.n_pairs),
            ("stopping.n_paths", self.stopping.n_paths),
            ("stopping.n_steps", self.stopping.n_steps),
            ("stopping.dyadic_paths", self.stopping.dyadic_paths),
            ("ito.n_paths", self.ito.n_paths),
            ("ito.remainder_paths", self.ito.remainder_paths),
            ("ito.localization_paths", self.ito.localization_paths),
            ("pde.n_paths", self.pde.n_paths),
            ("pde.mc_steps", self.pde.mc_steps),
        ] {
            if v == 0 {
                return err(name, "must be at least 1");
            }
        }
        if !(self.integrals.bound > 0.0) {
            return err("integrals.bound", "must be positive");
        }
        if self.integrals.moment_orders.iter().any(|&p| !(p >= 1.0)) {
            return err("integrals.moment_orders", "orders must be at least 1");
        }
        if self.integrals.truncation_levels.iter().any(|&n| !(n > 0.0)) {
            return err("integrals.truncation_levels", "levels must be positive");
        }
        if !(self.integrals.ac_delta > 0.0 && self.integrals.ac_epsilon > 0.0) {
            return err("integrals", "ac_delta and ac_epsilon must be positive");
        }
        if self.stopping.times.is_empty() {
            return err("stopping.times", "need at least one stopping time");
        }
        for t in &self.stopping.times {
            t.validate()?;
        }
        if !(1..=60).contains(&self.stopping.dyadic_max_level) {
            return err("stopping.dyadic_max_level", "must be in 1..=60");
        }
        for name in &self.ito.functions {
            if crate::ito_formula::library::by_name(name).is_none() {
                return err("ito.functions", &format!("unknown function '{name}'"));
            }
        }
        for (name, levels) in [("ito.levels", &self.ito.levels), ("ito.remainder_levels", &self.ito.remainder_levels)] {
            if levels.len() < 2 || levels.windows(2).any(|w| w[0] == 0 || w[1] <= w[0] || w[1] % w[0] != 0) {
                return err(name, "need at least two increasing levels, each dividing the next");
            }
        }
        if self.ito.localization_level == 0 {
            return err("ito.localization_level", "must be at least 1");
        }
        for name in &self.pde.payoffs {
            if crate::pde::TerminalPayoff::by_name(name).is_none() {
                return err("pde.payoffs", &format!("unknown payoff '{name}'"));
            }
        }
        if !(self.pde.dx > 0.0) || !(self.pde.buffer_sigmas > 0.0) {
            return err("pde", "dx and buffer_sigmas must be positive");
        }
        Ok(())
    }
}
