//! Experiment runner: solves total-variation Poisson restoration problems
//! at desk scale, sweeps the inner tolerance, and exports plot-ready traces.
//!
//! Commands:
//!   vmila run <config>                  solve and export trace + image
//!   vmila sweep-eta <config>            one run per eta, plus summaries
//!   vmila make-problem <name> <scale> <seed>   materialize a test problem
//!
//! `VMILA_OUTPUT_ROOT` overrides the configured output directory.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use vmila::imaging::{self, ProblemName, TestProblem};
use vmila::oracle::FstarFixture;
use vmila::solver::{minimize, InnerRule, IterateTrace, SolverConfig};

use config::ExperimentConfig;

const TRACE_HEADER: &str = "k,f,delta,lambda,backtracks,inner_iters,eps_or_eta,time_s";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match args.first().map(String::as_str) {
        Some("run") if args.len() == 2 => cmd_run(Path::new(&args[1])),
        Some("sweep-eta") if args.len() == 2 => cmd_sweep_eta(Path::new(&args[1])),
        Some("make-problem") if args.len() == 4 => cmd_make_problem(&args[1], &args[2], &args[3]),
        _ => {
            eprintln!(
                "usage:\n  vmila run <config>\n  vmila sweep-eta <config>\n  vmila make-problem <name> <scale> <seed>"
            );
            return ExitCode::from(2);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn build_problem(cfg: &ExperimentConfig) -> Result<TestProblem, Box<dyn std::error::Error>> {
    let tp = imaging::make_test_problem(cfg.problem_name, cfg.scale, cfg.seed)?;
    if tp.blur.truncation_warning() {
        eprintln!(
            "warning: point-spread function is wide relative to the {}x{} grid; \
             kernel truncation may be noticeable",
            tp.width(),
            tp.height()
        );
    }
    Ok(tp)
}

fn write_trace_csv(path: &Path, trace: &IterateTrace) -> std::io::Result<()> {
    let mut out = String::with_capacity(64 * (trace.records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            r.f_value,
            r.delta,
            r.lambda,
            r.backtracks,
            r.inner_iterations,
            r.eps_or_eta,
            r.wall_time_s
        ));
    }
    fs::write(path, out)
}

fn cmd_run(config_path: &Path) -> CliResult {
    let cfg = config::load(config_path)?;
    let tp = build_problem(&cfg)?;
    let problem = tp.composite_problem()?;
    let x0 = tp.default_start();

    let outcome = minimize(&problem, &cfg.solver, &x0)?;
    let trace = &outcome.trace;

    fs::create_dir_all(&cfg.output_dir)?;
    write_trace_csv(&cfg.output_dir.join("trace.csv"), trace)?;
    let restored = imaging::ImageGrid::new(tp.width(), tp.height(), outcome.x.clone())?;
    imaging::write_image(&cfg.output_dir.join("restored.img"), &restored)?;

    println!(
        "problem {} | outer iterations {} | mean inner iterations {:.1} | final f {}",
        tp.id(),
        trace.records.len(),
        trace.mean_inner_iterations(),
        trace.final_f()
    );
    if trace.inner_exhausted > 0 {
        eprintln!(
            "warning: inner budget exhausted in {} outer iterations (descent still certified)",
            trace.inner_exhausted
        );
    }
    Ok(())
}

fn cmd_sweep_eta(config_path: &Path) -> CliResult {
    let cfg = config::load(config_path)?;
    if cfg.sweep_eta.len() < 2 {
        return Err("sweep.eta must list at least two values".into());
    }
    let tp = build_problem(&cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let fixture = match &cfg.fstar_fixture {
        Some(path) => match FstarFixture::read(path) {
            Ok(f) if f.problem_id == tp.id() => Some(f),
            Ok(f) => {
                eprintln!(
                    "warning: fixture {} is for problem '{}', not '{}'; \
                     relative-decrease output omitted",
                    path.display(),
                    f.problem_id,
                    tp.id()
                );
                None
            }
            Err(e) => {
                eprintln!(
                    "warning: cannot read f* fixture {}: {e}; relative-decrease output omitted",
                    path.display()
                );
                None
            }
        },
        None => {
            eprintln!("warning: no f* fixture configured; relative-decrease output omitted");
            None
        }
    };

    // One worker thread per eta; each writes its own trace file.
    let runs: Vec<(String, f64, IterateTrace)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (token, eta) in &cfg.sweep_eta {
            let solver = SolverConfig {
                inner_rule: InnerRule::Eta(*eta),
                ..cfg.solver.clone()
            };
            let tp_ref = &tp;
            handles.push((
                token.clone(),
                *eta,
                scope.spawn(move || -> Result<IterateTrace, String> {
                    let problem = tp_ref.composite_problem().map_err(|e| e.to_string())?;
                    let x0 = tp_ref.default_start();
                    let started = Instant::now();
                    let outcome = minimize(&problem, &solver, &x0).map_err(|e| e.to_string())?;
                    let _total = started.elapsed();
                    Ok(outcome.trace)
                }),
            ));
        }
        handles
            .into_iter()
            .map(|(token, eta, h)| {
                let trace = h
                    .join()
                    .expect("worker panicked")
                    .map_err(|e| e.to_string());
                trace.map(|t| (token, eta, t))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut summary = String::from("eta,outer_iters,mean_inner_iters,final_f,wall_time_s\n");
    let mut relative = String::from("eta,k,rel_decrease\n");
    for (token, _eta, trace) in &runs {
        write_trace_csv(
            &cfg.output_dir.join(format!("trace_eta_{token}.csv")),
            trace,
        )?;
        let wall: f64 = trace.records.iter().map(|r| r.wall_time_s).sum();
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            token,
            trace.records.len(),
            trace.mean_inner_iterations(),
            trace.final_f(),
            wall
        ));
        if let Some(fx) = &fixture {
            let denom = trace.f_initial - fx.f_star;
            if denom > 0.0 {
                for r in &trace.records {
                    relative.push_str(&format!(
                        "{},{},{}\n",
                        token,
                        r.k,
                        (r.f_value - fx.f_star) / denom
                    ));
                }
            }
        }
    }
    fs::write(cfg.output_dir.join("sweep_summary.csv"), summary)?;
    if fixture.is_some() {
        fs::write(cfg.output_dir.join("sweep_relative.csv"), relative)?;
    }

    println!(
        "swept {} eta values on {}; summary in {}",
        runs.len(),
        tp.id(),
        cfg.output_dir.join("sweep_summary.csv").display()
    );
    Ok(())
}

fn cmd_make_problem(name: &str, scale: &str, seed: &str) -> CliResult {
    let name: ProblemName = name.parse()?;
    let scale: usize = scale.parse().map_err(|e| format!("bad scale: {e}"))?;
    let seed: u64 = seed.parse().map_err(|e| format!("bad seed: {e}"))?;
    let tp = imaging::make_test_problem(name, scale, seed)?;

    let out_root = std::env::var_os("VMILA_OUTPUT_ROOT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| "out".into());
    fs::create_dir_all(&out_root)?;
    let base = tp.id();
    imaging::write_image(
        &out_root.join(format!("{base}_truth.img")),
        &tp.ground_truth,
    )?;
    imaging::write_image(&out_root.join(format!("{base}_data.img")), &tp.data)?;
    let mut params = fs::File::create(out_root.join(format!("{base}_params.txt")))?;
    writeln!(params, "name = {}", tp.name)?;
    writeln!(params, "width = {}", tp.width())?;
    writeln!(params, "height = {}", tp.height())?;
    writeln!(params, "bg = {}", tp.bg)?;
    writeln!(params, "rho = {}", tp.rho)?;
    writeln!(params, "seed = {}", tp.rng_seed)?;
    println!(
        "wrote {base}_truth.img, {base}_data.img, {base}_params.txt to {}",
        out_root.display()
    );
    Ok(())
}
