use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gcalc::config::{ExperimentConfig, Suite};
use gcalc::report::{Status, TRACEABILITY};
use gcalc::suites;

/// Default output directory when neither `--out-dir` nor the config sets one.
const OUT_DIR_ENV: &str = "GCALC_OUT_DIR";

#[derive(Parser)]
#[command(name = "gcalc", version, about = "Monte Carlo verification suites for G-expectation calculus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites selected by a TOML config; exit 0 if all pass, 2 on a fail, 1 on a config error.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to the config, then $GCALC_OUT_DIR, then ./gcalc-out.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override every suite's path count.
        #[arg(long)]
        paths: Option<usize>,
        /// Worker threads (does not change results).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the available suites.
    ListSuites,
    /// Print the anchor table that every report case refers to.
    PrintTraceability,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::ListSuites => {
            for s in Suite::ALL {
                println!("{:<10} {}", s.name(), s.summary());
            }
            println!("{:<10} every suite above", "all");
            ExitCode::SUCCESS
        }
        Command::PrintTraceability => {
            for a in TRACEABILITY {
                println!("{:<38} {:<12} {}", a.anchor, a.module, a.statement);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            out_dir,
            paths,
            jobs,
        } => run(config, seed, out_dir, paths, jobs),
    }
}

fn run(config: PathBuf, seed: Option<u64>, out_dir: Option<PathBuf>, paths: Option<usize>, jobs: Option<usize>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = paths {
        cfg.override_paths(n);
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if let Some(j) = jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let dir = out_dir
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gcalc-out"));
    let out = match suites::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = suites::write_outputs(&out, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for s in &out.report.suites {
        let fails: Vec<&str> = s
            .cases
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| c.case_id.as_str())
            .collect();
        let status = if fails.is_empty() { "PASS" } else { "FAIL" };
        println!("{status} {:<10} {} cases", s.suite, s.cases.len());
        for f in fails {
            println!("     fail {f}");
        }
    }
    let sm = &out.report.summary;
    println!(
        "{} pass, {} warn, {} statistical fail, {} deterministic fail; report in {}",
        sm.pass,
        sm.warn,
        sm.statistical_fail,
        sm.deterministic_fail,
        dir.display()
    );
    if out.report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
