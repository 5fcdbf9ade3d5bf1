use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use vmf_core::blowup::{analyze, BlowupReport};
use vmf_core::greens::{green_estimate_check, DiskGreen, GreenFunction, TorusGreen};
use vmf_core::io::{read_field_csv, to_json, write_field_csv};
use vmf_core::kirchhoff::{find_critical, hamiltonian, CriticalityReport, VortexConfig};
use vmf_core::scenario::Scenario;
use vmf_core::solver::{continuation, solve_newton, Denominator, FoldCandidate, TraceEntry};
use vmf_core::{Domain, Error, Field, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_INCOMPLETE: u8 = 2;

const DEFAULT_OUT: &str = "vmf-out";

enum Outcome {
    Done,
    Incomplete(String),
}

/// Errors that mean the numerics gave up rather than the input being wrong.
fn is_numerical_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NotConverged { .. }
            | Error::Overflow { .. }
            | Error::SingularCapacitance { .. }
            | Error::SolverBreakdown(_)
            | Error::Singular(_)
    )
}

fn exit_code(e: &Error) -> u8 {
    if is_numerical_failure(e) {
        EXIT_INCOMPLETE
    } else {
        EXIT_CONFIG
    }
}

fn threads() -> Option<usize> {
    std::env::var("VMF_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config: String,
    out: String,
    version: &'static str,
    rng_seed: Option<u64>,
    threads: Option<usize>,
    exit_code: u8,
    message: Option<String>,
    elapsed_seconds: f64,
    finished_unix_seconds: u64,
}

pub fn run(command: &str, config: &Path, out: Option<&Path>, seed: Option<u64>) -> u8 {
    let start = Instant::now();
    let mut scenario = match Scenario::load(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("vmf {command}: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = seed {
        scenario.rng_seed = seed;
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| scenario.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        eprintln!("vmf {command}: cannot create {}: {e}", out_dir.display());
        return EXIT_CONFIG;
    }
    let result = match command {
        "solve" => cmd_solve(&scenario, &out_dir),
        "continue" => cmd_continue(&scenario, &out_dir),
        "analyze" => cmd_analyze(&scenario, &out_dir),
        "hamiltonian" => cmd_hamiltonian(&scenario, &out_dir),
        other => Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
    };
    let (code, message) = match result {
        Ok(Outcome::Done) => (EXIT_OK, None),
        Ok(Outcome::Incomplete(msg)) => (EXIT_INCOMPLETE, Some(msg)),
        Err(e) => (exit_code(&e), Some(e.to_string())),
    };
    if let Some(msg) = &message {
        eprintln!("vmf {command}: {msg}");
    }
    let meta = RunMeta {
        command,
        config: config.display().to_string(),
        out: out_dir.display().to_string(),
        version: env!("CARGO_PKG_VERSION"),
        rng_seed: (command == "analyze").then_some(scenario.rng_seed),
        threads: threads(),
        exit_code: code,
        message,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        finished_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    if let Err(e) = to_json(&meta).and_then(|s| write(&out_dir.join("run_meta.json"), &s)) {
        eprintln!("vmf {command}: {e}");
    }
    code
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, field: &Field) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_field_csv(field, std::io::BufWriter::new(file))
}

fn read_csv(path: &Path, grid: &std::sync::Arc<vmf_core::Grid>) -> Result<Field> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_field_csv(grid, std::io::BufReader::new(file))
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    lambda: f64,
    variant: &'static str,
    domain: &'a Domain,
    n: usize,
    h: f64,
    node_count: usize,
    converged: bool,
    residual_norm: f64,
    newton_iters: usize,
    increments: &'a [f64],
    v_max: f64,
    v_min: f64,
    /// `v` at the domain centre, bilinearly interpolated.
    v_center: Option<f64>,
    denominator: &'a Denominator,
}

fn cmd_solve(s: &Scenario, out: &Path) -> Result<Outcome> {
    let spec = s.problem(s.require_lambda()?)?;
    let grid = spec.grid().clone();
    let v0 = s.seed.initial_guess(&grid, None);
    let result = solve_newton(&spec, &v0, s.solve)?;
    write_csv(&out.join("solution.csv"), &result.v)?;
    let record = SolveRecord {
        lambda: spec.lambda(),
        variant: spec.variant().name(),
        domain: grid.domain(),
        n: grid.n(),
        h: grid.h(),
        node_count: grid.node_count(),
        converged: result.converged,
        residual_norm: result.residual_norm,
        newton_iters: result.newton_iters,
        increments: &result.increments,
        v_max: result.v.max(),
        v_min: result.v.min(),
        v_center: grid.interpolate(result.v.values(), grid.domain().center()),
        denominator: &result.denominator,
    };
    write(&out.join("result.json"), &to_json(&record)?)?;
    Ok(if result.converged {
        Outcome::Done
    } else {
        Outcome::Incomplete(format!(
            "Newton did not converge: residual {:e} after {} iterations",
            result.residual_norm, result.newton_iters
        ))
    })
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    variant: &'static str,
    domain: &'a Domain,
    n: usize,
    requested: &'a [f64],
    completed: bool,
    entries: &'a [TraceEntry],
    snapshots: Vec<String>,
    stopped: Option<&'a FoldCandidate>,
}

fn snapshot_name(i: usize) -> String {
    format!("snapshot_{i:03}.csv")
}

fn cmd_continue(s: &Scenario, out: &Path) -> Result<Outcome> {
    let lambdas = s.require_lambda_list()?;
    let base = s.problem(lambdas[0])?;
    let grid = base.grid().clone();
    let (entries, solutions, stopped) = match continuation(&base, lambdas, s.seed, s.solve) {
        Ok(trace) => (trace.entries, trace.solutions, trace.stopped),
        Err(e) if is_numerical_failure(&e) => (
            Vec::new(),
            Vec::new(),
            Some(FoldCandidate {
                lambda: lambdas[0],
                reason: e.to_string(),
            }),
        ),
        Err(e) => return Err(e),
    };
    let mut snapshots = Vec::with_capacity(solutions.len());
    for (i, v) in solutions.iter().enumerate() {
        let name = snapshot_name(i);
        write_csv(&out.join(&name), v)?;
        snapshots.push(name);
    }
    let record = TraceRecord {
        variant: base.variant().name(),
        domain: grid.domain(),
        n: grid.n(),
        requested: lambdas,
        completed: stopped.is_none(),
        entries: &entries,
        snapshots,
        stopped: stopped.as_ref(),
    };
    write(&out.join("trace.json"), &to_json(&record)?)?;
    Ok(match stopped {
        None => Outcome::Done,
        Some(f) => Outcome::Incomplete(format!("stopped at lambda = {}: {}", f.lambda, f.reason)),
    })
}

/// `(lambda, snapshot path, report file name)` for every solution to analyze.
fn analysis_targets(s: &Scenario) -> Result<Vec<(f64, PathBuf, String)>> {
    let input = s.require_input()?;
    if input.is_dir() {
        let path = input.join("trace.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let trace: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let entries = trace["entries"].as_array().cloned().unwrap_or_default();
        let snapshots = trace["snapshots"].as_array().cloned().unwrap_or_default();
        if entries.len() != snapshots.len() {
            return Err(Error::Io(format!("{}: entries and snapshots disagree", path.display())));
        }
        entries
            .iter()
            .zip(&snapshots)
            .enumerate()
            .map(|(i, (e, name))| {
                let lambda = e["lambda"]
                    .as_f64()
                    .ok_or_else(|| Error::Io(format!("{}: entry {i} has no lambda", path.display())))?;
                let name = name
                    .as_str()
                    .ok_or_else(|| Error::Io(format!("{}: snapshot {i} is not a file name", path.display())))?;
                Ok((lambda, input.join(name), format!("blowup_report_{i:03}.json")))
            })
            .collect()
    } else if input.is_file() {
        let lambda = match s.lambda {
            Some(l) => l,
            None => {
                let sibling = input.with_file_name("result.json");
                let text = fs::read_to_string(&sibling).map_err(|_| s.error("lambda", "missing, and no result.json beside the input"))?;
                let record: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", sibling.display())))?;
                record["lambda"]
                    .as_f64()
                    .ok_or_else(|| Error::Io(format!("{}: no lambda", sibling.display())))?
            }
        };
        Ok(vec![(lambda, input.to_path_buf(), "blowup_report.json".into())])
    } else {
        Err(Error::Io(format!("{}: no such file or directory", input.display())))
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

fn cmd_analyze(s: &Scenario, out: &Path) -> Result<Outcome> {
    let targets = analysis_targets(s)?;
    let base = s.problem(targets.first().map_or(0.0, |t| t.0))?;
    let reports: Vec<(String, BlowupReport)> = with_pool(|| {
        targets
            .par_iter()
            .map(|(lambda, path, name)| {
                let spec = base.with_lambda(*lambda)?;
                let v = read_csv(path, spec.grid())?;
                Ok((name.clone(), analyze(&spec, &v, &s.analysis)?))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    for (name, report) in &reports {
        write(&out.join(name), &to_json(report)?)?;
    }
    if !s.estimate_deltas.is_empty() {
        let checks = with_pool(|| {
            s.estimate_deltas
                .par_iter()
                .enumerate()
                .map(|(i, &d)| green_estimate_check(d, s.estimate_samples, s.rng_seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>>>()
        })??;
        write(&out.join("estimate_report.json"), &to_json(&checks)?)?;
    }
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct CriticalRecord<'a> {
    domain: &'a Domain,
    green_method: &'static str,
    start: &'a VortexConfig,
    hamiltonian_start: f64,
    critical: &'a VortexConfig,
    report: &'a CriticalityReport,
}

fn cmd_hamiltonian(s: &Scenario, out: &Path) -> Result<Outcome> {
    let domain = s.require_domain()?;
    let start = s.require_vortex()?;
    let greens: Box<dyn GreenFunction> = match domain {
        Domain::UnitDisk => Box::new(DiskGreen),
        Domain::FlatTorus { .. } => Box::new(TorusGreen::for_domain(domain)?),
        Domain::Rectangle { .. } => {
            return Err(s.error("domain", "the Hamiltonian needs an analytic Green function: use `disk` or `torus(...)`"))
        }
    };
    let h0 = hamiltonian(start, greens.as_ref()).map_err(|e| s.error("vortex", e.to_string()))?;
    let (critical, report) = find_critical(start, greens.as_ref(), s.critical_tol, s.critical_max_iter)?;
    let record = CriticalRecord {
        domain,
        green_method: greens.method(),
        start,
        hamiltonian_start: h0,
        critical: &critical,
        report: &report,
    };
    write(&out.join("critical.json"), &to_json(&record)?)?;
    Ok(if report.converged {
        Outcome::Done
    } else {
        Outcome::Incomplete(format!(
            "critical point search stopped at |grad| = {:e} after {} iterations",
            report.gradient_norm, report.iterations
        ))
    })
}
