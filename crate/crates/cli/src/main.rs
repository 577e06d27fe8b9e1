use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use elasto_cli::experiment::{run_forward, run_phantom, single_seed};
use elasto_cli::io::{ensure_dir, read_column, write_text};
use elasto_cli::raster::{export_raster, ColorScale};
use elasto_cli::{run_single, run_sweep, CliError, ExperimentConfig, SolverKind};
use elasto_core::load_mesh;
use serde_json::json;

#[derive(Parser)]
#[command(name = "elasto", version, about = "Synthetic elastography experiments")]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (render: output file or directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the configured noise seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Statistical,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the mesh.
    Mesh,
    /// Mesh plus ground-truth modulus field.
    Phantom,
    /// Phantom plus one noisy acquisition.
    Forward,
    /// Full pipeline for one seed.
    Reconstruct {
        /// Runs both solvers when omitted.
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
    },
    /// Every sweep value, seed and solver.
    Sweep,
    /// Rasterize a nodal field from CSV.
    Render {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "modulus")]
        column: String,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.noise.seeds = vec![seed];
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn render_target(out: Option<&Path>, field: &Path) -> Result<PathBuf, CliError> {
    let stem = field.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    match out {
        Some(p) if p.extension().is_some_and(|e| e == "png") => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                ensure_dir(parent)?;
            }
            Ok(p.to_path_buf())
        }
        Some(dir) => {
            ensure_dir(dir)?;
            Ok(dir.join(format!("{stem}.png")))
        }
        None => Ok(field.with_extension("png")),
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let config = load_config(cli)?;
    let dir = config.output.dir.clone();
    match &cli.command {
        Command::Mesh => {
            ensure_dir(&dir)?;
            let mesh = elasto_cli::experiment::build_mesh(&config)?;
            let path = dir.join("mesh.txt");
            write_text(&path, &mesh.to_text())?;
            Ok(json!({
                "status": "ok",
                "mesh": path,
                "nodes": mesh.node_count(),
                "elements": mesh.element_count(),
            }))
        }
        Command::Phantom => {
            let manifest = run_phantom(&config)?;
            Ok(json!({ "status": "ok", "dir": dir, "scenario": manifest["scenario"] }))
        }
        Command::Forward => {
            let manifest = run_forward(&config)?;
            Ok(json!({ "status": "ok", "dir": dir, "acquisition": manifest["acquisition"] }))
        }
        Command::Reconstruct { solver } => {
            let kinds = match solver {
                Some(SolverArg::Statistical) => vec![SolverKind::Statistical],
                Some(SolverArg::Baseline) => vec![SolverKind::Baseline],
                None => SolverKind::ALL.to_vec(),
            };
            let report = run_single(&config, &kinds)?;
            let results: Vec<_> = report
                .outcomes
                .iter()
                .map(|o| {
                    json!({
                        "solver": o.kind,
                        "lambda": o.lambda,
                        "status": o.status(),
                        "error": o.result.as_ref().err(),
                        "metrics": o.metrics(),
                    })
                })
                .collect();
            let status = if report.outcomes.iter().all(|o| o.result.is_ok()) { "ok" } else { "partial" };
            Ok(json!({
                "status": status,
                "dir": report.dir,
                "seed": single_seed(&config),
                "snr_db": report.acquisition.snr_db,
                "delta_lat": report.acquisition.delta_lat,
                "delta_ax": report.acquisition.delta_ax,
                "reconstructions": results,
            }))
        }
        Command::Sweep => {
            let report = run_sweep(&config)?;
            let failures = report.rows.iter().filter(|r| r.status != "ok").count();
            Ok(json!({
                "status": if failures == 0 { "ok" } else { "partial" },
                "dir": report.dir,
                "rows": report.rows.len(),
                "failures": failures,
                "lambda_selection": report.lambda_selection,
                "summary": report.summary,
            }))
        }
        Command::Render { field, mesh, column } => {
            let mesh = load_mesh(mesh)?;
            let values = read_column(field, column)?;
            let path = render_target(cli.out.as_deref(), field)?;
            let scale = ColorScale {
                min: config.output.scale[0],
                max: config.output.scale[1],
                colormap: config.output.colormap,
            };
            export_raster(&values, &mesh, &path, &scale, config.output.raster_size)?;
            Ok(json!({
                "status": "ok",
                "raster": path,
                "colormap": config.output.colormap.name(),
                "scale": config.output.scale,
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
