//! Runs one verification suite from a TOML config and prints its cases.
//!
//!     cargo run --release --example run_suite -- examples/configs/quick.toml stopping

use gcalc::config::{ExperimentConfig, Suite};
use gcalc::suites::run_suite;

fn main() -> gcalc::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => ExperimentConfig::load(std::path::Path::new(&path))?,
        None => ExperimentConfig::default(),
    };
    let suite: Suite = args.next().as_deref().unwrap_or("axioms").parse()?;
    cfg.validate()?;
    let out = run_suite(&cfg, suite)?;
    for c in &out.report.cases {
        println!("{:<5} {:<48} observed {:<12.6} expected {:<12.6}", format!("{:?}", c.status), c.case_id, c.observed, c.expected);
    }
    println!("{} cases, {}", out.report.cases.len(), if out.report.passed() { "all pass" } else { "some fail" });
    Ok(())
}
