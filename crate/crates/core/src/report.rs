//! Machine-readable run reports, the traceability table, and plot data.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Warn,
}

/// Statistical fails exceeded a standard-error band; deterministic fails
/// violated an exact identity and indicate a defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailKind {
    Statistical,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub description: String,
    pub anchor: String,
    pub status: Status,
    pub kind: FailKind,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl CaseRecord {
    /// Exact check: passes iff `ok`.
    pub fn exact(case_id: impl Into<String>, anchor: &str, description: impl Into<String>, ok: bool, observed: f64, expected: f64) -> Self {
        Self {
            case_id: case_id.into(),
            description: description.into(),
            anchor: anchor.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            kind: FailKind::Deterministic,
            observed,
            expected,
            tolerance: 0.0,
        }
    }

    /// `|observed - expected| <= tolerance`, deterministic.
    pub fn within(case_id: impl Into<String>, anchor: &str, description: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let mut r = Self::exact(case_id, anchor, description, (observed - expected).abs() <= tolerance, observed, expected);
        r.tolerance = tolerance;
        r
    }

    /// `|observed - expected| <= tolerance`, where `tolerance` is a standard-error band.
    pub fn statistical(case_id: impl Into<String>, anchor: &str, description: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let mut r = Self::within(case_id, anchor, description, observed, expected, tolerance);
        r.kind = FailKind::Statistical;
        r
    }

    /// `observed <= expected + tolerance` against a statistical band.
    pub fn statistical_upper(case_id: impl Into<String>, anchor: &str, description: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let mut r = Self::exact(case_id, anchor, description, observed <= expected + tolerance, observed, expected);
        r.kind = FailKind::Statistical;
        r.tolerance = tolerance;
        r
    }

    /// `observed >= expected - tolerance` against a statistical band.
    pub fn statistical_lower(case_id: impl Into<String>, anchor: &str, description: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let mut r = Self::exact(case_id, anchor, description, observed >= expected - tolerance, observed, expected);
        r.kind = FailKind::Statistical;
        r.tolerance = tolerance;
        r
    }

    pub fn statistical_kind(mut self) -> Self {
        self.kind = FailKind::Statistical;
        self
    }

    pub fn warn_if(mut self, warn: bool) -> Self {
        if warn && self.status == Status::Pass {
            self.status = Status::Warn;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub cases: Vec<CaseRecord>,
}

impl SuiteReport {
    pub fn new(suite: impl Into<String>, seed: u64) -> Self {
        Self {
            suite: suite.into(),
            seed,
            cases: Vec::new(),
        }
    }

    pub fn push(&mut self, case: CaseRecord) {
        self.cases.push(case);
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseRecord::passed)
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// Cases whose id starts with `prefix`.
    pub fn cases_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a CaseRecord> + 'a {
        self.cases.iter().filter(move |c| c.case_id.starts_with(prefix))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub warn: usize,
    pub statistical_fail: usize,
    pub deterministic_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
    pub summary: Summary,
}

impl Report {
    pub fn new(seed: u64, suites: Vec<SuiteReport>) -> Self {
        let mut summary = Summary::default();
        for c in suites.iter().flat_map(|s| &s.cases) {
            match (c.status, c.kind) {
                (Status::Pass, _) => summary.pass += 1,
                (Status::Warn, _) => summary.warn += 1,
                (Status::Fail, FailKind::Statistical) => summary.statistical_fail += 1,
                (Status::Fail, FailKind::Deterministic) => summary.deterministic_fail += 1,
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            suites,
            summary,
        }
    }

    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Anchors that are missing from [`TRACEABILITY`].
    pub fn untraced_anchors(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .suites
            .iter()
            .flat_map(|s| &s.cases)
            .filter(|c| c.anchor.is_empty() || anchor(&c.anchor).is_none())
            .map(|c| c.anchor.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Wall-clock information kept out of `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_seconds: u64,
    pub suites: Vec<(String, f64)>,
    pub total_seconds: f64,
}

/// One row of the traceability table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Anchor {
    pub anchor: &'static str,
    pub module: &'static str,
    pub statement: &'static str,
}

pub const TRACEABILITY: &[Anchor] = &[
    Anchor { anchor: "sublinear-axiom:monotonicity", module: "expectation", statement: "X >= Y implies E^[X] >= E^[Y]" },
    Anchor { anchor: "sublinear-axiom:constant-preserving", module: "expectation", statement: "E^[c] = c" },
    Anchor { anchor: "sublinear-axiom:sub-additivity", module: "expectation", statement: "E^[X + Y] <= E^[X] + E^[Y]" },
    Anchor { anchor: "sublinear-axiom:positive-homogeneity", module: "expectation", statement: "E^[lambda X] = lambda E^[X] for lambda >= 0" },
    Anchor { anchor: "g-normal:absolute-moment", module: "expectation", statement: "E^[|B_1|^p] = sigma_hi^p 2^(p/2) Gamma((p+1)/2) / sqrt(pi)" },
    Anchor { anchor: "integral:zero-mean", module: "integration", statement: "E^[int eta dB] = E^[-int eta dB] = 0 for bounded simple eta" },
    Anchor { anchor: "integral:energy-bound", module: "integration", statement: "E^[(int eta dB)^2] <= sigma_hi^2 E^[int eta^2 dt]" },
    Anchor { anchor: "integral:maximal-bound", module: "integration", statement: "E^[max_t (int_0^t eta dB)^2] <= 2 sigma_hi^2 E^[int eta^2 dt]" },
    Anchor { anchor: "integral:truncation-tail", module: "integration", statement: "E^[int |B_t|^2 1{|B_t| > n} dt] decreases to 0" },
    Anchor { anchor: "integral:absolute-continuity", module: "integration", statement: "E^[int |eta| dt] <= delta implies E^[int |B_t|^2 |eta_t| dt] <= epsilon" },
    Anchor { anchor: "stopping:stopped-integral", module: "stopping", statement: "int_0^(t^tau) eta dB = int_0^t 1[0,tau] eta dB" },
    Anchor { anchor: "stopping:dyadic-sandwich", module: "stopping", statement: "0 <= tau_n - tau <= 2^-n T" },
    Anchor { anchor: "stopping:indicator-gap", module: "stopping", statement: "E^[int |1[0,tau_n] - 1[0,tau]| dt] <= 2^-n T" },
    Anchor { anchor: "ito:residual-convergence", module: "ito_formula", statement: "RMS residual of the Itô formula vanishes at order 1/2 under refinement" },
    Anchor { anchor: "ito:affine-exact", module: "ito_formula", statement: "affine phi gives zero residual" },
    Anchor { anchor: "ito:localization", module: "ito_formula", statement: "stopped formula for phi equals formula for the clamped phi_k on |x| <= 2k" },
    Anchor { anchor: "ito:taylor-remainder", module: "ito_formula", statement: "E^[|sum_k eta_k^N|^2] <= N sum_k E^[|eta_k^N|^2] and decreases in N" },
    Anchor { anchor: "ito:cross-terms", module: "ito_formula", statement: "second moments of the dt/d<B>/dB cross terms decrease in N" },
    Anchor { anchor: "ito:quadratic-remainder", module: "ito_formula", statement: "quadratic phi has zero Taylor remainder" },
    Anchor { anchor: "pde:g-heat-cross-check", module: "pde", statement: "Monte Carlo E^[phi(x + B_T)] agrees with the G-heat equation" },
    Anchor { anchor: "pde:closed-form", module: "pde", statement: "convex (concave) payoffs match the max (min) volatility Gaussian value" },
    Anchor { anchor: "pde:constant", module: "pde", statement: "constant payoffs are reproduced exactly by both methods" },
];

pub fn anchor(name: &str) -> Option<&'static Anchor> {
    TRACEABILITY.iter().find(|a| a.anchor == name)
}

/// Two-column CSV destined for plotting. `upper_bounds`, when present, is
/// re-checked row by row against the second column on export.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub file: String,
    pub columns: [String; 2],
    pub rows: Vec<(f64, f64)>,
    pub upper_bounds: Option<Vec<f64>>,
}

impl PlotSeries {
    pub fn new(file: impl Into<String>, x: &str, y: &str, rows: Vec<(f64, f64)>) -> Self {
        Self {
            file: file.into(),
            columns: [x.into(), y.into()],
            rows,
            upper_bounds: None,
        }
    }

    pub fn with_upper_bounds(mut self, bounds: Vec<f64>) -> Self {
        self.upper_bounds = Some(bounds);
        self
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{}", self.columns[0], self.columns[1])?;
        for (x, y) in &self.rows {
            writeln!(w, "{x},{y}")?;
        }
        Ok(())
    }
}

/// Writes every series under `dir`. No series, no files.
pub fn emit_plot_data(series: &[PlotSeries], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(series.len());
    for s in series {
        if let Some(bounds) = &s.upper_bounds {
            if bounds.len() != s.rows.len() {
                return Err(Error::Contract(format!("{}: one bound per row required", s.file)));
            }
            if let Some(((x, y), b)) = s.rows.iter().zip(bounds).find(|((_, y), b)| y > b) {
                return Err(Error::Contract(format!("{}: {} = {y} exceeds {b} at {x}", s.file, s.columns[1])));
            }
        }
        std::fs::create_dir_all(dir)?;
        let path = dir.join(&s.file);
        let f = std::fs::File::create(&path)?;
        s.write_csv(std::io::BufWriter::new(f))?;
        written.push(path);
    }
    Ok(written)
}

/// File-name fragment for a function name such as `exp(-x^2)`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        match ch {
            c if c.is_ascii_alphanumeric() => out.push(c),
            '-' => out.push_str("neg"),
            '^' => {}
            _ => {
                if !out.ends_with('_') {
                    out.push('_')
                }
            }
        }
    }
    out.trim_matches('_').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_unique_and_nonempty() {
        let mut names: Vec<&str> = TRACEABILITY.iter().map(|a| a.anchor).collect();
        assert!(names.iter().all(|n| !n.is_empty()));
        names.sort();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn summary_separates_fail_kinds() {
        let mut s = SuiteReport::new("x", 1);
        s.push(CaseRecord::exact("a", "pde:constant", "d", true, 0.0, 0.0));
        s.push(CaseRecord::exact("b", "pde:constant", "d", false, 1.0, 0.0));
        s.push(CaseRecord::statistical("c", "pde:constant", "d", 5.0, 0.0, 1.0));
        s.push(CaseRecord::statistical("d", "pde:constant", "d", 0.5, 0.0, 1.0).warn_if(true));
        let r = Report::new(1, vec![s]);
        assert_eq!(
            r.summary,
            Summary {
                pass: 1,
                warn: 1,
                statistical_fail: 1,
                deterministic_fail: 1
            }
        );
        assert!(!r.passed());
        assert!(r.untraced_anchors().is_empty());
        let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(j["schema_version"], 1);
        assert_eq!(j["suites"][0]["cases"][2]["kind"], "statistical");
    }

    #[test]
    fn plot_export_contracts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(&[], dir.path()).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        let ok = PlotSeries::new("gap.csv", "n", "max_gap", vec![(1.0, 0.4), (2.0, 0.2)]).with_upper_bounds(vec![0.5, 0.25]);
        let files = emit_plot_data(&[ok.clone()], dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), "n,max_gap\n1,0.4\n2,0.2\n");
        let bad = ok.with_upper_bounds(vec![0.5, 0.1]);
        assert!(matches!(emit_plot_data(&[bad], dir.path()), Err(Error::Contract(_))));
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("exp(-x^2)"), "exp_negx2");
        assert_eq!(slug("sin x"), "sin_x");
        assert_eq!(slug("max(x,0)"), "max_x_0");
        assert_eq!(slug("x^3"), "x3");
    }
}
