//! Configuration-driven runner for the curvature-invariant checks.
//!
//! `gbc run --config <file>` loads a check or a suite, runs every check and
//! writes one JSON report. Exit codes: 0 all assertions pass, 1 an assertion
//! failed, 2 the configuration is invalid, 3 a numerical failure or an
//! unwritable output.

pub mod config;
pub mod report;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use config::{Format, SuiteConfig};
use report::{convention_hash, library_version, write_csv, Report, SCHEMA_VERSION};
use tasks::TaskError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) | RunError::Numerical(m) => f.write_str(m),
        }
    }
}

/// Sets the rayon pool size from `GBC_THREADS`, once per process.
pub fn configure_threads() -> Result<(), RunError> {
    let Ok(v) = std::env::var("GBC_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| RunError::Config(format!("GBC_THREADS must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(RunError::Config("GBC_THREADS must be positive".into()));
    }
    // a second call in the same process finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs every check of a suite in order.
pub fn run_suite(suite: &SuiteConfig) -> Result<Report, RunError> {
    let started = Instant::now();
    let mut checks = Vec::with_capacity(suite.checks.len());
    for (i, c) in suite.checks.iter().enumerate() {
        let r = tasks::run_check(c).map_err(|e| {
            let msg = format!("checks[{i}] ({}): {e}", c.task.name());
            match e {
                TaskError::Config(_) => RunError::Config(msg),
                TaskError::Numerical(_) => RunError::Numerical(msg),
            }
        })?;
        checks.push(r);
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        library_version: library_version(),
        convention_ledger_sha256: convention_hash(),
        suite: suite.name.clone(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        wall_time_s: started.elapsed().as_secs_f64(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    })
}

/// `out.csv` gets its JSON report in `out.report.json`.
fn json_sibling(p: &Path) -> PathBuf {
    p.with_extension("report.json")
}

/// Writes the report (and the sweep CSV, if requested) where the suite asks.
pub fn emit(report: &Report, suite: &SuiteConfig, output: Option<&Path>) -> Result<(), RunError> {
    let target = output.map(Path::to_path_buf).or_else(|| suite.output.clone());
    let csv = suite.checks.iter().any(|c| c.format == Some(Format::Csv));
    let unwritable = |p: &Path, e: std::io::Error| RunError::Numerical(format!("cannot write {}: {e}", p.display()));
    match target {
        None => print!("{}", report::to_json(report)),
        Some(path) if csv => {
            let table = report.checks.iter().find_map(|c| c.table.as_ref());
            if let Some((header, rows)) = table {
                write_csv(header, rows, &path).map_err(|e| unwritable(&path, e.into()))?;
            }
            let js = json_sibling(&path);
            report::write_json(report, &js).map_err(|e| unwritable(&js, e))?;
        }
        Some(path) => report::write_json(report, &path).map_err(|e| unwritable(&path, e))?,
    }
    Ok(())
}

fn summarize(report: &Report) {
    for c in &report.checks {
        let label = c.config.name.clone().unwrap_or_else(|| c.task.clone());
        for a in &c.assertions {
            let relation = match a.relation {
                report::Relation::AtMost => "<=",
                report::Relation::AtLeast => ">=",
            };
            eprintln!(
                "{} {label}: {} = {:.3e} {relation} {:.1e}",
                if a.pass { "PASS" } else { "FAIL" },
                a.name,
                a.value,
                a.bound
            );
        }
    }
}

/// Loads, runs and writes; returns the process exit code.
pub fn run_path(config: &Path, output: Option<&Path>, quiet: bool) -> i32 {
    let outcome = (|| {
        configure_threads()?;
        let suite = config::load(config).map_err(|e| RunError::Config(e.0))?;
        let report = run_suite(&suite)?;
        emit(&report, &suite, output)?;
        Ok::<_, RunError>(report)
    })();
    match outcome {
        Ok(report) => {
            if !quiet {
                summarize(&report);
            }
            if report.pass {
                EXIT_PASS
            } else {
                EXIT_ASSERTION
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
