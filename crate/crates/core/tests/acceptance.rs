//! Acceptance run at the default configuration: one line per criterion.

use std::process::ExitCode;

use gcalc::config::{ExperimentConfig, Suite};
use gcalc::report::{CaseRecord, Report, SuiteReport};
use gcalc::suites;

struct Criterion {
    id: u32,
    title: &'static str,
    suite: Suite,
    select: fn(&str) -> bool,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, title: "sublinear axioms hold exactly", suite: Suite::Axioms, select: |c| c.starts_with("axioms/") },
    Criterion { id: 2, title: "G-normal absolute moments", suite: Suite::Integrals, select: |c| c.starts_with("integrals/gnormal-moment-") },
    Criterion {
        id: 3,
        title: "integral zero mean and energy bound",
        suite: Suite::Integrals,
        select: |c| {
            (c.starts_with("integrals/eta-") && (c.contains("/zero-mean") || c.ends_with("/energy")))
                || c == "integrals/corpus/deterministic"
        },
    },
    Criterion {
        id: 4,
        title: "maximal inequality",
        suite: Suite::Integrals,
        select: |c| c.starts_with("integrals/eta-") && c.ends_with("/maximal"),
    },
    Criterion { id: 5, title: "stopped-integral identity", suite: Suite::Stopping, select: |c| c == "stopping/stopped-integral" },
    Criterion {
        id: 6,
        title: "dyadic sandwich and indicator gap",
        suite: Suite::Stopping,
        select: |c| c.starts_with("stopping/dyadic-sandwich/") || c.starts_with("stopping/indicator-gap/"),
    },
    Criterion {
        id: 7,
        title: "Ito residual convergence, affine exactness, localization",
        suite: Suite::Ito,
        select: |c| c.starts_with("ito/") && !c.starts_with("ito/remainder/"),
    },
    Criterion { id: 8, title: "Taylor and cross-term remainders", suite: Suite::Ito, select: |c| c.starts_with("ito/remainder/") },
    Criterion { id: 9, title: "truncation tails", suite: Suite::Integrals, select: |c| c.starts_with("integrals/truncation/") },
    Criterion { id: 10, title: "Monte Carlo against the G-heat equation", suite: Suite::Pde, select: |c| c.starts_with("pde/") },
];

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let reports: Vec<SuiteReport> = std::thread::scope(|s| {
        let handles: Vec<_> = Suite::ALL
            .iter()
            .map(|&suite| {
                let cfg = &cfg;
                s.spawn(move || suites::run_suite(cfg, suite).expect("suite runs").report)
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("suite thread")).collect()
    });
    let report = Report::new(cfg.seed, reports);

    let mut ok = true;
    for c in CRITERIA {
        let suite = &report.suites[Suite::ALL.iter().position(|s| *s == c.suite).unwrap()];
        let cases: Vec<&CaseRecord> = suite.cases.iter().filter(|r| (c.select)(&r.case_id)).collect();
        let failed: Vec<&CaseRecord> = cases.iter().copied().filter(|r| !r.passed()).collect();
        let pass = !cases.is_empty() && failed.is_empty();
        ok &= pass;
        println!(
            "criterion {:>2} {} {:<58} {} cases, {} failed",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            cases.len(),
            failed.len()
        );
        for f in failed {
            println!("    {} observed {} expected {} tolerance {}", f.case_id, f.observed, f.expected, f.tolerance);
        }
    }

    let untraced = report.untraced_anchors();
    let extra = report.passed() && untraced.is_empty();
    println!(
        "supplementary {} all remaining cases pass and every anchor is traced ({} cases total)",
        if extra { "PASS" } else { "FAIL" },
        report.suites.iter().map(|s| s.cases.len()).sum::<usize>()
    );
    ok &= extra;

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
