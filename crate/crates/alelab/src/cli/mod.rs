//! Experiment runner: configuration, execution and report emission behind the `alelab` binary.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

pub use config::ExperimentConfig;
pub use experiments::execute;
pub use report::{emit_report, Outcome, RunReport};

use crate::error::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "ALELAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    Rates,
    Heat,
    Kernel,
    Flow,
    Picard,
    Psc,
    Check,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Rates,
        Experiment::Heat,
        Experiment::Kernel,
        Experiment::Flow,
        Experiment::Picard,
        Experiment::Psc,
        Experiment::Check,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Rates => "rates",
            Experiment::Heat => "heat",
            Experiment::Kernel => "kernel",
            Experiment::Flow => "flow",
            Experiment::Picard => "picard",
            Experiment::Psc => "psc",
            Experiment::Check => "check",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::Config(format!("unknown subcommand {s}")))
    }
}

/// Output directory: `ALELAB_OUT` when set, else `--out`.
pub fn resolve_out(flag: Option<&Path>) -> std::path::PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => v.into(),
        _ => flag.map_or_else(|| "alelab-out".into(), Path::to_path_buf),
    }
}

/// Run one experiment and write its artifacts to `out/<name>/`; returns the exit code.
///
/// The configuration is loaded and validated before anything is written.
pub fn run(exp: Experiment, config: Option<&Path>, out: &Path, verbose: bool) -> i32 {
    let cfg = match ExperimentConfig::load(exp, config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("alelab: {e}");
            return EXIT_CONFIG;
        }
    };
    let start = Instant::now();
    let outcome = execute(exp, &cfg, verbose);
    let wall = start.elapsed().as_secs_f64();
    let hash = cfg.hash();
    let report = RunReport::new(exp.name(), &hash, cfg.seed, &outcome);
    let mut files = outcome.files.clone();
    files.push(("config.txt".into(), cfg.render()));
    let dir = out.join(exp.name());
    if let Err(e) = emit_report(&dir, &report, &files, wall) {
        eprintln!("alelab: cannot write {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    if exp == Experiment::Rates {
        if let Some((_, csv)) = outcome.files.iter().find(|f| f.0 == "rates.csv") {
            print!("{}", csv.replace(',', "\t"));
        }
    }
    for c in &outcome.criteria {
        println!("{}", c.line());
    }
    println!("report: {}", dir.join("report.json").display());
    if outcome.all_pass() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}
