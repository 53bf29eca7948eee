//! `swdiff` — effective dynamics of periodic switching diffusions from the
//! command line.
//!
//! The pipeline has four stages, each a subcommand:
//!
//! * `validate` — check the standing assumptions (uniform ellipticity,
//!   nonnegative intensities, irreducible switching) on the grid;
//! * `homogenize` — solve the invariant-density and cell problems and
//!   assemble the effective drift `b̄` and covariance `C`;
//! * `simulate` — integrate an ensemble of rescaled paths and summarize the
//!   compensated displacement statistics;
//! * `verify` — compare the Monte Carlo statistics against the homogenized
//!   coefficients (covariance match, cross-variation identity, ergodic
//!   averaging);
//!
//! plus `convergence`, a dyadic grid-refinement study of `b̄` and `C`.
//!
//! A run is specified either by `--config run.json` or by `--preset NAME`;
//! every output file embeds the SHA-256 of the configuration and the seed,
//! and rerunning the same configuration reproduces the files byte for byte.
//!
//! Exit codes: 0 success, 1 scientific-check failure, 2 usage or
//! configuration error.

mod config;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use swdiff::error::{Error, Result};
use swdiff::grid::{quadrature, GridFunction, TorusGrid};
use swdiff::homogenize::{
    homogenize, solve_cell_problem, solve_invariant_density, HomogenizeResult,
};
use swdiff::model::{validate_model, SwitchingModel};
use swdiff::operators::assemble_generator;
use swdiff::simulate::run_paths;
use swdiff::verify::{
    covariance_experiment, crossvariation_check, ergodic_scaling_test, estimate_covariance,
    frobenius_rel_error,
};

use config::{ObservableConfig, RunConfig};
use output::{
    config_sha256, matrix_rows, write_convergence_csv, write_corrector_csv, write_json,
    write_paths_csv, ConvergenceRow, CovarianceSection, CrossvariationSection, EffectiveOutput,
    ErgodicSection, SimulateSummary, ValidationOutput, VerifyOutput,
};

#[derive(Parser)]
#[command(
    name = "swdiff",
    version,
    about = "Effective drift and covariance of periodic switching diffusions",
    arg_required_else_help = true
)]
struct Cli {
    /// JSON run configuration (mutually exclusive with --preset).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Built-in benchmark model with default settings (mutually exclusive
    /// with --config).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Output directory (default: the config's output_dir, else ".").
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the configured RNG seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Cap the worker-thread count (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on the grid; write validation.json.
    Validate,
    /// Solve for the invariant density, corrector, and effective
    /// coefficients; write effective.json, density.csv, corrector.csv.
    Homogenize {
        /// Solve the cell problems with the raw (uncentered) drift as the
        /// right-hand side, demonstrating the Fredholm compatibility gate.
        #[arg(long, hide = true)]
        debug_uncentered_rhs: bool,
    },
    /// Integrate an ensemble of rescaled paths; write simulate.json (and
    /// paths.csv when sim.write_paths is set).
    Simulate,
    /// Run the selected statistical checks against the homogenized
    /// coefficients; write verify.json.
    Verify {
        /// Scale the target covariance by FACTOR before comparing
        /// (negative control: a wrong target must fail).
        #[arg(long, hide = true, value_name = "FACTOR")]
        debug_scale_c: Option<f64>,
    },
    /// Dyadic grid-refinement study of b̄ and C; write convergence.csv.
    Convergence,
}

/// Exit with 2 for configuration and usage problems, 1 for everything that
/// went wrong while doing science (solver breakdowns, failed checks).
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::DimensionMismatch { .. }
        | Error::SizeMismatch { .. }
        | Error::InvalidModel(_)
        | Error::GridTooCoarse { .. }
        | Error::InvalidParameter { .. }
        | Error::StepConstraint { .. }
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn param(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}

const SUCCESS: u8 = 0;
const CHECK_FAILED: u8 = 1;

/// A loaded run: configuration, its hash, and the resolved output directory.
struct Run {
    config: RunConfig,
    sha: String,
    out_dir: PathBuf,
}

impl Run {
    fn seed(&self) -> u64 {
        self.config.sim.seed
    }

    fn metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("config_sha256", self.sha.clone()),
            ("seed", self.seed().to_string()),
        ]
    }
}

fn load_run(cli: &Cli) -> Result<Run> {
    // The hash identifies the configuration document: the raw file bytes
    // when one was given, the canonical serialization for preset runs.
    // Command-line overrides (--seed, --out) are applied afterwards and
    // recorded in the outputs' own fields.
    let (mut config, sha) = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => {
            return Err(param(
                "--config/--preset",
                "the two are mutually exclusive; give exactly one",
            ))
        }
        (Some(path), None) => {
            let bytes = fs::read(path)
                .map_err(|e| param("--config", format!("cannot read {}: {e}", path.display())))?;
            let config: RunConfig = serde_json::from_slice(&bytes)
                .map_err(|e| param("--config", format!("{}: {e}", path.display())))?;
            let sha = config_sha256(&bytes);
            (config, sha)
        }
        (None, Some(name)) => {
            let config = RunConfig::for_preset(name)?;
            let canonical = serde_json::to_vec(&config)
                .map_err(|e| param("config", format!("serialization failed: {e}")))?;
            let sha = config_sha256(&canonical);
            (config, sha)
        }
        (None, None) => {
            return Err(param(
                "--config/--preset",
                "a run needs either a configuration file or a preset name",
            ))
        }
    };
    if let Some(seed) = cli.seed {
        config.sim.seed = seed;
    }
    if let Some(dir) = &cli.out {
        config.output_dir = Some(dir.clone());
    }
    let out_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    Ok(Run {
        config,
        sha,
        out_dir,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: invalid parameter --threads: must be at least 1");
            return ExitCode::from(2);
        }
        // The global pool can only be configured once; a later failure means
        // it is already running, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let run = load_run(cli)?;
    match &cli.command {
        Command::Validate => cmd_validate(&run),
        Command::Homogenize {
            debug_uncentered_rhs,
        } => cmd_homogenize(&run, *debug_uncentered_rhs),
        Command::Simulate => cmd_simulate(&run),
        Command::Verify { debug_scale_c } => cmd_verify(&run, *debug_scale_c),
        Command::Convergence => cmd_convergence(&run),
    }
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(run: &Run) -> Result<u8> {
    let model = run.config.build_model()?;
    let grid = run.config.build_grid()?;
    let report = validate_model(&model, &grid)?;
    let out = ValidationOutput::new(&report, &grid, run.sha.clone(), run.seed());
    let path = run.out_dir.join("validation.json");
    write_json(&path, &out)?;
    if report.accepted() {
        println!(
            "validation: accepted (ellipticity_min = {:.3e}, max_total_rate = {:.3e}); wrote {}",
            report.ellipticity_min,
            report.max_total_rate,
            path.display()
        );
        Ok(SUCCESS)
    } else {
        eprintln!(
            "validation: rejected with {} violation(s); wrote {}",
            report.total_violations,
            path.display()
        );
        Ok(CHECK_FAILED)
    }
}

/// Validate as a precondition for the compute commands: reject before
/// touching a solver, and leave validation.json behind for diagnosis.
fn require_valid(run: &Run, model: &SwitchingModel, grid: &TorusGrid) -> Result<Option<u8>> {
    let report = validate_model(model, grid)?;
    if report.accepted() {
        return Ok(None);
    }
    let out = ValidationOutput::new(&report, grid, run.sha.clone(), run.seed());
    let path = run.out_dir.join("validation.json");
    write_json(&path, &out)?;
    eprintln!(
        "model rejected: {} standing-assumption violation(s); see {}",
        report.total_violations,
        path.display()
    );
    Ok(Some(CHECK_FAILED))
}

// ---------------------------------------------------------------------------
// homogenize
// ---------------------------------------------------------------------------

fn cmd_homogenize(run: &Run, debug_uncentered_rhs: bool) -> Result<u8> {
    let model = run.config.build_model()?;
    let grid = run.config.build_grid()?;
    let opts = run.config.solver_options()?;
    if let Some(code) = require_valid(run, &model, &grid)? {
        return Ok(code);
    }

    if debug_uncentered_rhs {
        // Feed the raw drift (mean not removed) to the cell solver. Unless
        // the effective drift vanishes, the Fredholm gate must refuse it.
        let op = assemble_generator(&model, &grid)?;
        let density = solve_invariant_density(&op, &opts)?;
        for k in 0..model.dim() {
            let rhs = GridFunction::tabulate(&grid, model.num_modes(), |x, alpha| {
                model.mode(alpha).drift[k].eval(x)
            });
            solve_cell_problem(&op, &density, &rhs, &opts)?;
        }
        println!("uncentered right-hand side accepted: the effective drift vanishes");
    }

    let result = homogenize(&model, &grid, &opts)?;
    write_homogenize_outputs(run, &grid, &result)?;
    println!(
        "b_bar = {}; C = {}; wrote {}/{{effective.json, density.csv, corrector.csv}}",
        fmt_vec(&result.effective.b_bar),
        fmt_matrix(&result.effective.covariance),
        run.out_dir.display()
    );
    Ok(SUCCESS)
}

fn write_homogenize_outputs(run: &Run, grid: &TorusGrid, result: &HomogenizeResult) -> Result<()> {
    let out = EffectiveOutput::new(result, grid, run.sha.clone(), run.seed());
    write_json(&run.out_dir.join("effective.json"), &out)?;

    let metadata = run.metadata();
    let density_file = fs::File::create(run.out_dir.join("density.csv"))?;
    result
        .density
        .density
        .write_csv(grid, std::io::BufWriter::new(density_file), &metadata)?;
    let corrector_file = fs::File::create(run.out_dir.join("corrector.csv"))?;
    write_corrector_csv(
        result,
        grid,
        std::io::BufWriter::new(corrector_file),
        &metadata,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(run: &Run) -> Result<u8> {
    let model = run.config.build_model()?;
    let grid = run.config.build_grid()?;
    let opts = run.config.solver_options()?;
    if let Some(code) = require_valid(run, &model, &grid)? {
        return Ok(code);
    }
    // The displacement is compensated by the homogenized drift, so the
    // solve runs first.
    let result = homogenize(&model, &grid, &opts)?;
    let b_bar = &result.effective.b_bar;
    let sim_cfg = run.config.sim_config(&model)?;

    let estimate = if run.config.sim.write_paths {
        let paths = run_paths(&model, &sim_cfg, |p| {
            p.rescale(sim_cfg.epsilon, sim_cfg.t_horizon)
        })?;
        let metadata = run.metadata();
        let file = fs::File::create(run.out_dir.join("paths.csv"))?;
        write_paths_csv(&paths, std::io::BufWriter::new(file), &metadata)?;
        estimate_covariance(&paths, b_bar, sim_cfg.epsilon, sim_cfg.t_horizon)?
    } else {
        covariance_experiment(&model, &sim_cfg, b_bar)?
    };

    let summary = SimulateSummary::new(
        &estimate,
        b_bar,
        sim_cfg.epsilon,
        sim_cfg.h_micro,
        run.sha.clone(),
        run.seed(),
    );
    write_json(&run.out_dir.join("simulate.json"), &summary)?;
    println!(
        "simulated {} paths at epsilon = {}; displacement covariance/T = {}; wrote {}/simulate.json",
        estimate.n_paths,
        sim_cfg.epsilon,
        fmt_matrix(&estimate.covariance),
        run.out_dir.display()
    );
    Ok(SUCCESS)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(run: &Run, debug_scale_c: Option<f64>) -> Result<u8> {
    let model = run.config.build_model()?;
    let grid = run.config.build_grid()?;
    let opts = run.config.solver_options()?;
    let v = &run.config.verify;
    v.check_tests()?;
    if let Some(code) = require_valid(run, &model, &grid)? {
        return Ok(code);
    }

    let result = homogenize(&model, &grid, &opts)?;
    let b_bar = &result.effective.b_bar;
    let mut c_target = result.effective.covariance.clone();
    if let Some(factor) = debug_scale_c {
        c_target *= factor;
    }
    let sim_cfg = run.config.sim_config(&model)?;
    let selected = |name: &str| v.tests.iter().any(|t| t == name);

    let mut covariance = None;
    if selected("covariance") {
        let estimate = covariance_experiment(&model, &sim_cfg, b_bar)?;
        let rel_error = frobenius_rel_error(&estimate.covariance, &c_target);
        let section = CovarianceSection::new(&estimate, rel_error, v.covariance_rel_tol);
        println!(
            "covariance: {} (rel error {:.4} vs tolerance {:.4}, {} paths)",
            pass_str(section.pass),
            section.rel_error,
            section.tolerance,
            section.n_paths
        );
        covariance = Some(section);
    }

    let mut crossvariation = None;
    if selected("crossvariation") {
        let mut cfg = sim_cfg.clone();
        cfg.record_stride = 1;
        let report = crossvariation_check(&model, &grid, &result.corrector, b_bar, &cfg)?;
        let section = CrossvariationSection::new(&report, v.crossvar_rel_tol, v.martingale_sigmas);
        println!(
            "crossvariation: {} (rel error {:.4} vs tolerance {:.4}, martingale mean ok: {})",
            pass_str(section.pass),
            section.rel_error,
            section.tolerance,
            section.martingale_mean_ok
        );
        crossvariation = Some(section);
    }

    let mut ergodic_scaling = None;
    if selected("ergodic-scaling") {
        let obs = v
            .observable
            .clone()
            .unwrap_or(ObservableConfig::DiffusionEntry { row: 1, col: 1 });
        let g = obs.build(&model)?;
        let g_ref: &(dyn Fn(&[f64], usize) -> f64 + Sync) = &*g;
        // ḡ = Σ_α ∫ g m: pair the observable with the computed density.
        let g_tab = GridFunction::tabulate(&grid, model.num_modes(), |x, alpha| g_ref(x, alpha));
        let gm: Vec<f64> = g_tab
            .values()
            .iter()
            .zip(result.density.density.values())
            .map(|(gv, mv)| gv * mv)
            .collect();
        let gm = GridFunction::from_values(gm, grid.num_nodes(), model.num_modes())?;
        let g_bar = quadrature(&grid, &gm)?;
        let scaling = ergodic_scaling_test(&model, g_ref, g_bar, &v.epsilons, &sim_cfg)?;
        let section = ErgodicSection::new(&scaling, v.ratio_min, v.ratio_max);
        if section.degenerate {
            println!(
                "ergodic-scaling: {} (time averages exact to roundoff, g_bar = {:.6})",
                pass_str(section.pass),
                section.g_bar
            );
        } else {
            println!(
                "ergodic-scaling: {} (RMS ratios {} in [{}, {}], g_bar = {:.6})",
                pass_str(section.pass),
                fmt_vec(&section.ratios),
                section.ratio_min,
                section.ratio_max,
                section.g_bar
            );
        }
        ergodic_scaling = Some(section);
    }

    let all_pass = covariance.as_ref().map_or(true, |s| s.pass)
        && crossvariation.as_ref().map_or(true, |s| s.pass)
        && ergodic_scaling.as_ref().map_or(true, |s| s.pass);
    let out = VerifyOutput {
        config_sha256: run.sha.clone(),
        seed: run.seed(),
        config: run.config.clone(),
        b_bar: b_bar.clone(),
        c_target: matrix_rows(&c_target),
        covariance,
        crossvariation,
        ergodic_scaling,
        all_pass,
    };
    let path = run.out_dir.join("verify.json");
    write_json(&path, &out)?;
    println!("verify: {}; wrote {}", pass_str(all_pass), path.display());
    Ok(if all_pass { SUCCESS } else { CHECK_FAILED })
}

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

/// Cap on dyadic refinement levels; beyond this the grids no longer fit in
/// memory anyway.
const MAX_LEVELS: usize = 12;

fn cmd_convergence(run: &Run) -> Result<u8> {
    let model = run.config.build_model()?;
    let opts = run.config.solver_options()?;
    let base = &run.config.grid.n;
    let levels = run.config.grid.refinements;
    if levels == 0 || levels > MAX_LEVELS {
        return Err(param(
            "grid.refinements",
            format!("must be between 1 and {MAX_LEVELS}"),
        ));
    }

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    let mut prev_c: Option<DMatrix<f64>> = None;
    let mut prev_delta: Option<f64> = None;
    for level in 0..levels {
        let n: Vec<usize> = base.iter().map(|&ni| ni << level).collect();
        let grid = TorusGrid::new(&n)?;
        if level == 0 {
            if let Some(code) = require_valid(run, &model, &grid)? {
                return Ok(code);
            }
        }
        let result = homogenize(&model, &grid, &opts)?;
        let covariance = result.effective.covariance.clone();
        let h_max = grid.spacing().iter().fold(0.0f64, |acc, &h| acc.max(h));
        let delta_c = prev_c.as_ref().map(|p| (&covariance - p).norm());
        let order = match (prev_delta, delta_c) {
            (Some(a), Some(b)) if b > 0.0 && a > 0.0 => Some((a / b).log2()),
            _ => None,
        };
        println!(
            "n = {:?}: b_bar = {}, C = {}{}",
            n,
            fmt_vec(&result.effective.b_bar),
            fmt_matrix(&covariance),
            match (delta_c, order) {
                (Some(d), Some(o)) => format!(", delta = {d:.3e}, order = {o:.2}"),
                (Some(d), None) => format!(", delta = {d:.3e}"),
                _ => String::new(),
            }
        );
        rows.push(ConvergenceRow {
            n,
            h_max,
            b_bar: result.effective.b_bar.clone(),
            covariance: covariance.clone(),
            delta_c,
            order,
        });
        prev_delta = delta_c;
        prev_c = Some(covariance);
    }

    let metadata = run.metadata();
    let path = run.out_dir.join("convergence.csv");
    let file = fs::File::create(&path)?;
    write_convergence_csv(&rows, model.dim(), std::io::BufWriter::new(file), &metadata)?;
    println!("wrote {}", path.display());
    Ok(SUCCESS)
}

// ---------------------------------------------------------------------------
// formatting helpers
// ---------------------------------------------------------------------------

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let body = v
        .iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!("[{body}]")
}

fn fmt_matrix(a: &DMatrix<f64>) -> String {
    let rows = (0..a.nrows())
        .map(|i| {
            (0..a.ncols())
                .map(|j| format!("{:.6}", a[(i, j)]))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect::<Vec<_>>()
        .join("; ");
    format!("[{rows}]")
}
