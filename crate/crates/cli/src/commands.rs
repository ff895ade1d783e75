use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stochwave_core::criteria::{check_conditions, closed_form_table, ConditionReport, B3_PRINTED_FACTOR, B3_REQUIRED_FACTOR};
use stochwave_core::diagnostics::{energy_residual, EnsembleStats};
use stochwave_core::ensemble::{explosion_summary, run_ensemble, ExplosionSummary, DEFAULT_BOUND_MARGIN};
use stochwave_core::grid::{build_grid, Grid};
use stochwave_core::integrator::{run_path, PathRecord};
use stochwave_core::model::ModelSpec;
use stochwave_core::noise::{NoiseField, NoiseSpec, CLIPPED_MASS_FLAG};

use crate::config::{Config, ConfigError};
use crate::output::{aligned, bit, flag, opt_real, real, write_files, Csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONDITIONS_FAIL: i32 = 2;

pub const REPORT_HEADER: &[&str] = &[
    "b1_lhs",
    "b1_pass",
    "b2_lhs",
    "b2_rhs",
    "b2_pass",
    "b3_factor",
    "b3_pass",
    "T0",
    "lambda_min",
    "clipped_mass",
];
pub const PATH_HEADER: &[&str] = &["t", "l2_sq", "energy", "energy_residual", "max_abs_u", "blown_up"];
pub const ENSEMBLE_HEADER: &[&str] = &["t", "phi", "phi_ci", "psi", "frac_blown", "n_alive", "mean_energy"];
pub const PATHS_HEADER: &[&str] = &["index", "seed", "blown_up", "t_blow"];
pub const TABLE_HEADER: &[&str] = &["quantity", "closed_form", "quadrature", "rel_err"];

#[derive(Debug, Parser)]
#[command(name = "stochwave", version, about = "Simulate stochastic wave equations and check blow-up conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate conditions B1-B3 and the bound T0; exit 2 if any condition fails.
    Check(CommonArgs),
    /// Integrate one sample path and write path_<seed>.csv.
    Simulate(CommonArgs),
    /// Run the Monte Carlo ensemble and write ensemble.csv, paths.csv, summary.txt.
    Ensemble(CommonArgs),
    /// Tabulate the half-plane example's closed forms against quadrature.
    #[command(name = "reproduce-example")]
    ReproduceExample(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set model.a_f=30`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Path seed for `simulate`, master seed for `ensemble`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding output.directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] stochwave_core::Error),
    #[error("cannot write outputs to {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// What a command produced: files written, the text echoed to stdout, and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    pub message: String,
}

pub fn run(cli: Cli, env_workers: Option<&str>) -> i32 {
    match execute(cli.command, env_workers) {
        Ok(outcome) => {
            print!("{}", outcome.message);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

type Handler = fn(&Config, &CommonArgs) -> Result<Outcome, CliError>;

pub fn execute(command: Command, env_workers: Option<&str>) -> Result<Outcome, CliError> {
    let (args, handler): (&CommonArgs, Handler) = match &command {
        Command::Check(a) => (a, cmd_check),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Ensemble(a) => (a, cmd_ensemble),
        Command::ReproduceExample(a) => (a, cmd_reproduce_example),
    };
    let mut config = Config::load(&args.config, &args.set, env_workers)?;
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    handler(&config, args)
}

struct Setup {
    grid: Grid,
    model: ModelSpec,
    noise_spec: NoiseSpec,
    noise: NoiseField,
}

fn setup(config: &Config) -> Result<Setup, CliError> {
    let grid = build_grid(config.grid_spec())?;
    let model = config.model_spec();
    model.validate()?;
    let noise_spec = config.noise_spec();
    let noise = NoiseField::new(noise_spec, &grid)?;
    // Surface a too-large fixed step as a config error before any work.
    config
        .time_spec()
        .dt(&grid, &model)
        .map_err(|e| ConfigError::Key {
            key: "time.dt".into(),
            message: e.to_string(),
        })?;
    Ok(Setup {
        grid,
        model,
        noise_spec,
        noise,
    })
}

fn write(dir: &Path, files: Vec<(String, String)>) -> Result<Vec<PathBuf>, CliError> {
    write_files(dir, &files).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn report_csv(r: &ConditionReport) -> String {
    let mut csv = Csv::new(REPORT_HEADER);
    csv.push(vec![
        real(r.b1_lhs),
        flag(r.b1_pass).into(),
        real(r.b2_lhs),
        real(r.b2_rhs),
        flag(r.b2_pass).into(),
        opt_real(r.b3_factor),
        flag(r.b3_pass).into(),
        opt_real(r.t0),
        opt_real(r.lambda_min),
        opt_real(r.clipped_mass),
    ]);
    csv.render()
}

fn report_lines(r: &ConditionReport, config: &Config, noise: &NoiseField) -> Vec<(String, String)> {
    let text = |v: Option<f64>| v.map(real).unwrap_or_else(|| "absent".into());
    let mut lines: Vec<(String, String)> = vec![
        ("evaluation".into(), r.evaluation.as_str().into()),
        ("b1_lhs (u0,v0)".into(), real(r.b1_lhs)),
        ("b1_pass".into(), flag(r.b1_pass).into()),
        ("b2_lhs (F(u0),1)".into(), real(r.b2_lhs)),
        ("b2_rhs".into(), real(r.b2_rhs)),
        ("b2_pass".into(), flag(r.b2_pass).into()),
        ("initial_energy".into(), real(r.initial_energy)),
        ("grid_energy".into(), real(r.grid_energy)),
        ("noise_budget".into(), real(r.noise_budget.value())),
        ("noise_budget_closed_form".into(), text(r.noise_budget.closed_form)),
        ("noise_budget_quadrature".into(), real(r.noise_budget.quadrature)),
        ("b3_factor".into(), text(r.b3_factor)),
        ("b3_probe_min".into(), text(r.b3_probe_min)),
        (format!("b3_pass (factor {B3_REQUIRED_FACTOR})"), flag(r.b3_pass).into()),
        (format!("b3_printed_pass (factor {B3_PRINTED_FACTOR})"), flag(r.b3_printed_pass).into()),
        ("T0".into(), text(r.t0)),
        ("lambda_min".into(), text(r.lambda_min)),
        ("clipped_mass".into(), text(r.clipped_mass)),
    ];
    if r.clipped_mass.is_some_and(|m| m > CLIPPED_MASS_FLAG) {
        lines.push((
            "warning".into(),
            format!("clipped_mass exceeds {CLIPPED_MASS_FLAG}; the kernel is far from positive semi-definite"),
        ));
    }
    lines.extend([
        ("dim".into(), config.domain.dim.to_string()),
        ("nodes".into(), format!("{:?}", config.domain.nodes)),
        ("node_count".into(), r.node_count.to_string()),
        ("noise_nodes".into(), noise.noise_node_count().to_string()),
        ("coarse_noise_stride".into(), noise.spec().coarse_stride.to_string()),
        ("all_pass".into(), flag(r.all_pass()).into()),
    ]);
    lines
}

fn cmd_check(config: &Config, _: &CommonArgs) -> Result<Outcome, CliError> {
    let s = setup(config)?;
    let report = check_conditions(&s.model, &s.grid, &s.noise_spec, Some(&s.noise))?;
    let text = aligned(&report_lines(&report, config, &s.noise));
    let files = write(
        &config.output,
        vec![("report.txt".into(), text.clone()), ("report.csv".into(), report_csv(&report))],
    )?;
    Ok(Outcome {
        exit_code: if report.all_pass() { EXIT_OK } else { EXIT_CONDITIONS_FAIL },
        files,
        message: text,
    })
}

pub fn path_csv(rec: &PathRecord) -> String {
    let mut csv = Csv::new(PATH_HEADER);
    for (row, res) in rec.rows.iter().zip(energy_residual(rec)) {
        csv.push(vec![
            real(row.t),
            real(row.l2_sq),
            real(row.energy),
            real(res),
            real(row.max_abs_u),
            bit(row.blown_up).into(),
        ]);
    }
    csv.render()
}

fn cmd_simulate(config: &Config, args: &CommonArgs) -> Result<Outcome, CliError> {
    let s = setup(config)?;
    let seed = args.seed.unwrap_or(config.mc.master_seed);
    let rec = run_path(&s.model, &s.grid, &s.noise, &config.time_spec(), seed)?;
    let name = format!("path_{seed}.csv");
    let files = write(&config.output, vec![(name.clone(), path_csv(&rec))])?;
    let last = rec.last();
    let message = aligned(&[
        ("seed".into(), seed.to_string()),
        ("dt".into(), real(rec.dt)),
        ("rows".into(), rec.rows.len().to_string()),
        ("t_final".into(), real(last.t)),
        ("blown_up".into(), flag(rec.blown_up).into()),
        ("t_blow".into(), rec.t_blow.map(real).unwrap_or_else(|| "absent".into())),
        ("output".into(), config.output.join(name).display().to_string()),
    ]);
    Ok(Outcome {
        exit_code: EXIT_OK,
        files,
        message,
    })
}

pub fn ensemble_csv(stats: &EnsembleStats) -> String {
    let mut csv = Csv::new(ENSEMBLE_HEADER);
    for k in 0..stats.times.len() {
        csv.push(vec![
            real(stats.times[k]),
            opt_real(stats.phi[k]),
            opt_real(stats.phi_ci[k]),
            opt_real(stats.psi[k]),
            real(stats.frac_blown[k]),
            stats.n_alive[k].to_string(),
            opt_real(stats.mean_energy[k]),
        ]);
    }
    csv.render()
}

pub fn paths_csv(records: &[PathRecord]) -> String {
    let mut csv = Csv::new(PATHS_HEADER);
    for (i, rec) in records.iter().enumerate() {
        csv.push(vec![
            i.to_string(),
            rec.seed.to_string(),
            bit(rec.blown_up).into(),
            opt_real(rec.t_blow),
        ]);
    }
    csv.render()
}

fn summary_text(config: &Config, stats: &EnsembleStats, summary: &ExplosionSummary, report: &ConditionReport) -> String {
    let text = |v: Option<f64>| v.map(real).unwrap_or_else(|| "absent".into());
    let lower_bound = stats.frac_blown.iter().any(|&f| f > 0.0);
    aligned(&[
        ("n_paths".into(), summary.n_paths.to_string()),
        ("master_seed".into(), config.mc.master_seed.to_string()),
        ("T0".into(), text(summary.t0)),
        ("conditions_pass".into(), flag(report.all_pass()).into()),
        ("n_blown".into(), summary.n_blown.to_string()),
        ("t_blow_min".into(), text(summary.t_blow_min)),
        ("t_blow_median".into(), text(summary.t_blow_median)),
        ("t_blow_max".into(), text(summary.t_blow_max)),
        ("frac_blown_final".into(), real(summary.frac_blown_final)),
        ("margin".into(), real(summary.margin)),
        ("within_bound".into(), flag(summary.within_bound).into()),
        ("extrapolated_blowup_time".into(), text(stats.extrapolated_blowup_time())),
        (
            "phi_note".into(),
            if lower_bound {
                "phi excludes blown paths once frac_blown > 0 and is then a lower bound".into()
            } else {
                "no path blew up".into()
            },
        ),
    ])
}

fn cmd_ensemble(config: &Config, args: &CommonArgs) -> Result<Outcome, CliError> {
    let s = setup(config)?;
    let mut es = config.ensemble_spec();
    if let Some(seed) = args.seed {
        es.master_seed = seed;
    }
    let report = check_conditions(&s.model, &s.grid, &s.noise_spec, Some(&s.noise))?;
    let (records, stats) = run_ensemble(&s.model, &s.grid, &s.noise, &config.time_spec(), &es)?;
    let summary = explosion_summary(&stats, report.t0, DEFAULT_BOUND_MARGIN);
    let mut shown = config.clone();
    shown.mc.master_seed = es.master_seed;
    let text = summary_text(&shown, &stats, &summary, &report);
    let files = write(
        &config.output,
        vec![
            ("ensemble.csv".into(), ensemble_csv(&stats)),
            ("paths.csv".into(), paths_csv(&records)),
            ("summary.txt".into(), text.clone()),
        ],
    )?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        files,
        message: text,
    })
}

fn cmd_reproduce_example(config: &Config, _: &CommonArgs) -> Result<Outcome, CliError> {
    let params = config.example_params()?;
    let grid = build_grid(config.grid_spec())?;
    let rows = closed_form_table(&params, &grid)?;
    let mut csv = Csv::new(TABLE_HEADER);
    let mut lines = Vec::with_capacity(rows.len());
    for row in &rows {
        csv.push(vec![
            row.quantity.into(),
            real(row.closed_form),
            real(row.quadrature),
            real(row.rel_err),
        ]);
        lines.push((
            row.quantity.to_string(),
            format!("{:.10} vs {:.10} (rel_err {:.2e})", row.closed_form, row.quadrature, row.rel_err),
        ));
    }
    let files = write(&config.output, vec![("example_table.csv".into(), csv.render())])?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        files,
        message: aligned(&lines),
    })
}
