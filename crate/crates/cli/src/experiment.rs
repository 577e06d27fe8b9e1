//! Phantom → observations → reconstruction → metrics → files.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use elasto_core::synth::directional_noise_levels;
use elasto_core::{
    assemble_psi, baseline_lsq, bottom_clamp, calibrate_noise, calibrate_noise_snr,
    calibrate_traction, cnr, forward_solve, generate_mesh, make_phantom, observe, reconstruct,
    rms_error, snr_db, ForwardSolution, InverseError, InverseProblem, Loading, Mesh, NoiseModel,
    Observations, Phantom, PsiTensor, Reconstruction, Region, RegionLabels, SolverTrace,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, NoiseTarget, Objective, SweepAxis, SweepValue};
use crate::error::CliError;
use crate::io::{ensure_dir, write_csv, write_json, write_text};
use crate::raster::{export_raster, ColorScale};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Statistical,
    Baseline,
}

impl SolverKind {
    pub const ALL: [SolverKind; 2] = [SolverKind::Statistical, SolverKind::Baseline];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Statistical => "statistical",
            SolverKind::Baseline => "baseline",
        }
    }
}

impl FromStr for SolverKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "statistical" => Ok(SolverKind::Statistical),
            "baseline" | "baseline_lsq" => Ok(SolverKind::Baseline),
            other => Err(CliError::Usage(format!("unknown solver {other:?}"))),
        }
    }
}

pub const BOUNDARY_CONDITIONS: &str = "bottom edge clamped (both displacement components zero); \
uniform downward traction on the top edge, lumped to nodes; left and right edges free. \
The clamp is an assumption that removes rigid-body modes.";

pub fn metric_definitions() -> serde_json::Value {
    json!({
        "rms": "||E_hat - E_true||_2 / ||E_true||_2 over all nodes",
        "cnr": "2 (mean_inc - mean_bg)^2 / (var_inc + var_bg), population variances of nodal values \
                in each region; reported as +inf with cnr_degenerate = true when both variances vanish",
        "snr_db": "10 log10(||u||^2 / ||u_m - u||^2) over all DOFs",
        "delta": "||u_m - u|| / ||u_m|| evaluated separately on lateral and axial components",
        "inclusion_mean": "mean of E_hat over nodes inside the inclusion disk",
    })
}

/// Mesh, operator and noiseless forward solution for one phantom.
pub struct Scenario {
    pub mesh: Mesh,
    pub psi: PsiTensor,
    pub phantom: Phantom,
    pub labels: RegionLabels,
    pub load: Loading,
    pub forward: ForwardSolution,
}

pub fn build_mesh(config: &ExperimentConfig) -> Result<Mesh, CliError> {
    Ok(generate_mesh(&config.mesh.params())?)
}

pub fn build_scenario(config: &ExperimentConfig, inclusion: f64) -> Result<Scenario, CliError> {
    let mesh = build_mesh(config)?;
    let p = &config.phantom;
    let psi = assemble_psi(&mesh, p.poisson, &bottom_clamp(&mesh))?;
    let (lo, hi) = mesh.bounds();
    let center = p.center.unwrap_or([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]);
    let phantom = make_phantom(&mesh, p.background, inclusion, center, p.radius)?;
    let labels = phantom.labels(&mesh);
    let load = calibrate_traction(&psi, &mesh, &phantom.modulus, p.compression)?;
    let forward = forward_solve(&psi, &phantom.modulus, &load)?;
    Ok(Scenario {
        mesh,
        psi,
        phantom,
        labels,
        load,
        forward,
    })
}

/// One noisy realization and its realized noise statistics.
pub struct Acquisition {
    pub observations: Observations,
    pub delta_lat: f64,
    pub delta_ax: f64,
    pub snr_db: f64,
}

pub fn noise_model(
    scenario: &Scenario,
    target: NoiseTarget,
    force_fraction: f64,
    seed: u64,
) -> Result<NoiseModel, CliError> {
    let (psi, u) = (&scenario.psi, &scenario.forward.u);
    let model = match target {
        NoiseTarget::Levels { lateral, axial } => calibrate_noise(psi, u, lateral, axial, seed)?,
        NoiseTarget::Snr { db, lateral_to_axial } => calibrate_noise_snr(psi, u, db, lateral_to_axial, seed)?,
        NoiseTarget::Sigma { lateral, axial } => NoiseModel {
            sigma_lat: lateral,
            sigma_ax: axial,
            sigma_f: 0.0,
            seed,
        },
    };
    Ok(model.with_force_fraction(&scenario.forward.f_true, force_fraction))
}

pub fn acquire(
    scenario: &Scenario,
    target: NoiseTarget,
    force_fraction: f64,
    seed: u64,
) -> Result<Acquisition, CliError> {
    let noise = noise_model(scenario, target, force_fraction, seed)?;
    let observations = observe(&scenario.psi, &scenario.forward, &noise);
    let (delta_lat, delta_ax) = directional_noise_levels(&observations.um, &observations.u)?;
    let snr = snr_db(&observations.u, &observations.um).value;
    Ok(Acquisition {
        observations,
        delta_lat,
        delta_ax,
        snr_db: snr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldMetrics {
    pub rms: f64,
    pub cnr: f64,
    pub cnr_degenerate: bool,
    pub inclusion_mean: f64,
    pub background_mean: f64,
}

pub fn field_metrics(scenario: &Scenario, estimate: &[f64]) -> Result<FieldMetrics, CliError> {
    let c = cnr(estimate, &scenario.labels)?;
    Ok(FieldMetrics {
        rms: rms_error(estimate, &scenario.phantom.modulus)?,
        cnr: c.value,
        cnr_degenerate: c.degenerate,
        inclusion_mean: scenario.labels.mean(estimate, Region::Inclusion)?,
        background_mean: scenario.labels.mean(estimate, Region::Background)?,
    })
}

/// Result of one reconstruction. A solver failure is data, not an error.
pub struct Outcome {
    pub kind: SolverKind,
    pub lambda: f64,
    pub seconds: f64,
    pub result: Result<(Reconstruction, FieldMetrics), String>,
    /// Trace up to the failure, when the solver returned one.
    pub partial_trace: Option<SolverTrace>,
}

impl Outcome {
    pub fn status(&self) -> &'static str {
        if self.result.is_ok() {
            "ok"
        } else {
            "failed"
        }
    }

    pub fn metrics(&self) -> Option<&FieldMetrics> {
        self.result.as_ref().ok().map(|(_, m)| m)
    }

    pub fn trace(&self) -> Option<&SolverTrace> {
        match &self.result {
            Ok((r, _)) => Some(&r.trace),
            Err(_) => self.partial_trace.as_ref(),
        }
    }
}

pub fn solve(
    config: &ExperimentConfig,
    scenario: &Scenario,
    acquisition: &Acquisition,
    kind: SolverKind,
    lambda: f64,
) -> Outcome {
    let start = Instant::now();
    let obs = &acquisition.observations;
    let solver = config.solver.core(lambda);
    let run = || -> Result<Reconstruction, InverseError> {
        let problem = InverseProblem::new(&scenario.mesh, &scenario.psi, &obs.f, &obs.um)?;
        match kind {
            SolverKind::Statistical => reconstruct(&problem, &obs.noise, &solver),
            SolverKind::Baseline => baseline_lsq(&problem, &solver),
        }
    };
    let (result, partial_trace) = match run() {
        Ok(r) => match field_metrics(scenario, &r.modulus) {
            Ok(m) => (Ok((r, m)), None),
            Err(e) => (Err(e.to_string()), Some(r.trace)),
        },
        Err(InverseError::Diverged { outer, cost, limit, trace }) => (
            Err(format!("objective diverged at outer iteration {outer} (cost {cost:e} > {limit:e})")),
            Some(*trace),
        ),
        Err(e) => (Err(e.to_string()), None),
    };
    Outcome {
        kind,
        lambda,
        seconds: start.elapsed().as_secs_f64(),
        result,
        partial_trace,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaSelection {
    pub solver: SolverKind,
    pub objective: Objective,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Mean objective per grid value; failed runs count as `+inf`.
    pub scores: Vec<f64>,
    pub chosen: f64,
}

fn objective_value(objective: Objective, scenario: &Scenario, outcome: &Outcome) -> f64 {
    match (objective, outcome.metrics()) {
        (_, None) => f64::INFINITY,
        (Objective::Rms, Some(m)) => m.rms,
        (Objective::InclusionMean, Some(m)) => (m.inclusion_mean / scenario.phantom.inclusion.modulus - 1.0).abs(),
    }
}

/// Picks λ for each solver by averaging the objective over tuning seeds and sweep points.
fn select_lambdas(
    config: &ExperimentConfig,
    points: &[(Scenario, NoiseTarget)],
    kinds: &[SolverKind],
) -> Result<Vec<LambdaSelection>, CliError> {
    let Some(search) = &config.solver.lambda_search else {
        return Ok(Vec::new());
    };
    let acquisitions = points
        .iter()
        .map(|(s, t)| {
            search
                .seeds
                .iter()
                .map(|&seed| acquire(s, *t, config.noise.force_fraction, seed))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut tasks = Vec::new();
    for &kind in kinds {
        for (gi, &lambda) in search.grid.iter().enumerate() {
            for pi in 0..points.len() {
                for ai in 0..search.seeds.len() {
                    tasks.push((kind, gi, lambda, pi, ai));
                }
            }
        }
    }
    let scores: Vec<(SolverKind, usize, f64)> = tasks
        .par_iter()
        .map(|&(kind, gi, lambda, pi, ai)| {
            let scenario = &points[pi].0;
            let outcome = solve(config, scenario, &acquisitions[pi][ai], kind, lambda);
            (kind, gi, objective_value(search.objective, scenario, &outcome))
        })
        .collect();
    let per_value = (points.len() * search.seeds.len()) as f64;
    Ok(kinds
        .iter()
        .map(|&kind| {
            let mut totals = vec![0.0; search.grid.len()];
            for &(k, gi, v) in &scores {
                if k == kind {
                    totals[gi] += v / per_value;
                }
            }
            let best = (0..totals.len())
                .min_by(|&a, &b| totals[a].total_cmp(&totals[b]))
                .unwrap_or(0);
            LambdaSelection {
                solver: kind,
                objective: search.objective,
                grid: search.grid.clone(),
                seeds: search.seeds.clone(),
                chosen: search.grid[best],
                scores: totals,
            }
        })
        .collect())
}

fn configured_lambda(config: &ExperimentConfig, kind: SolverKind) -> f64 {
    match kind {
        SolverKind::Statistical => config.solver.lambda,
        SolverKind::Baseline => config.solver.baseline_lambda.unwrap_or(config.solver.lambda),
    }
}

fn lambda_for(config: &ExperimentConfig, selections: &[LambdaSelection], kind: SolverKind) -> f64 {
    selections
        .iter()
        .find(|s| s.solver == kind)
        .map(|s| s.chosen)
        .unwrap_or_else(|| configured_lambda(config, kind))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn color_scale(config: &ExperimentConfig) -> ColorScale {
    ColorScale {
        min: config.output.scale[0],
        max: config.output.scale[1],
        colormap: config.output.colormap,
    }
}

fn render(config: &ExperimentConfig, mesh: &Mesh, field: &[f64], path: &Path) -> Result<(), CliError> {
    if config.output.rasters {
        export_raster(field, mesh, path, &color_scale(config), config.output.raster_size)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NodeRow {
    node: usize,
    x: f64,
    y: f64,
    modulus: f64,
}

#[derive(Serialize)]
struct TruthRow {
    node: usize,
    x: f64,
    y: f64,
    modulus: f64,
    inclusion: bool,
}

#[derive(Serialize)]
struct ObservationRow {
    dof: usize,
    node: usize,
    component: &'static str,
    fixed: bool,
    u: f64,
    um: f64,
    f_true: f64,
    f: f64,
    n: f64,
    w: f64,
}

#[derive(Serialize)]
struct InnerRow {
    outer: usize,
    inner: usize,
    g: f64,
    tv: f64,
    cost: f64,
    step: f64,
    rel_change: f64,
    halvings: usize,
    restarted: bool,
}

/// Outer-iteration record without the wall-clock column, so the file is reproducible.
#[derive(Serialize)]
struct OuterRow {
    outer: usize,
    log_det: f64,
    gamma_jittered: bool,
    lipschitz: f64,
    lipschitz_converged: bool,
    step: f64,
    inner_iterations: usize,
    cost_start: f64,
    cost_end: f64,
    stalled: bool,
}

fn write_field(path: &Path, mesh: &Mesh, field: &[f64]) -> Result<(), CliError> {
    write_csv(
        path,
        mesh.nodes().iter().zip(field).enumerate().map(|(node, (p, &modulus))| NodeRow {
            node,
            x: p[0],
            y: p[1],
            modulus,
        }),
    )
}

pub fn write_truth(dir: &Path, config: &ExperimentConfig, scenario: &Scenario) -> Result<(), CliError> {
    let mesh = &scenario.mesh;
    write_text(&dir.join("mesh.txt"), &mesh.to_text())?;
    let labels = scenario.labels.labels();
    write_csv(
        &dir.join("truth.csv"),
        mesh.nodes().iter().enumerate().map(|(node, p)| TruthRow {
            node,
            x: p[0],
            y: p[1],
            modulus: scenario.phantom.modulus[node],
            inclusion: labels[node] == Region::Inclusion,
        }),
    )?;
    render(config, mesh, &scenario.phantom.modulus, &dir.join("truth.png"))
}

pub fn write_observations(dir: &Path, scenario: &Scenario, acquisition: &Acquisition) -> Result<(), CliError> {
    let o = &acquisition.observations;
    write_csv(
        &dir.join("observations.csv"),
        (0..o.u.len()).map(|dof| ObservationRow {
            dof,
            node: dof / 2,
            component: if dof % 2 == 0 { "lateral" } else { "axial" },
            fixed: scenario.psi.is_fixed(dof),
            u: o.u[dof],
            um: o.um[dof],
            f_true: o.f_true[dof],
            f: o.f[dof],
            n: o.n[dof],
            w: o.w[dof],
        }),
    )
}

fn write_trace(dir: &Path, suffix: &str, trace: &SolverTrace) -> Result<(), CliError> {
    write_csv(
        &dir.join(format!("trace{suffix}.csv")),
        trace.inner.iter().map(|r| InnerRow {
            outer: r.outer,
            inner: r.inner,
            g: r.g,
            tv: r.tv,
            cost: r.cost,
            step: r.step,
            rel_change: r.rel_change,
            halvings: r.halvings,
            restarted: r.restarted,
        }),
    )?;
    write_csv(
        &dir.join(format!("outer{suffix}.csv")),
        trace.outer.iter().map(|r| OuterRow {
            outer: r.outer,
            log_det: r.log_det,
            gamma_jittered: r.gamma_jittered,
            lipschitz: r.lipschitz,
            lipschitz_converged: r.lipschitz_converged,
            step: r.step,
            inner_iterations: r.inner_iterations,
            cost_start: r.cost_start,
            cost_end: r.cost_end,
            stalled: r.stalled,
        }),
    )
}

/// Estimate, traces and raster for one outcome; `suffix` distinguishes solvers sharing a directory.
fn write_outcome(
    dir: &Path,
    suffix: &str,
    config: &ExperimentConfig,
    scenario: &Scenario,
    outcome: &Outcome,
) -> Result<(), CliError> {
    if let Ok((r, _)) = &outcome.result {
        write_field(&dir.join(format!("estimate{suffix}.csv")), &scenario.mesh, &r.modulus)?;
        render(config, &scenario.mesh, &r.modulus, &dir.join(format!("estimate{suffix}.png")))?;
    }
    if let Some(trace) = outcome.trace() {
        write_trace(dir, suffix, trace)?;
    }
    Ok(())
}

fn outcome_json(outcome: &Outcome) -> serde_json::Value {
    let trace = outcome.trace();
    json!({
        "solver": outcome.kind,
        "lambda": outcome.lambda,
        "status": outcome.status(),
        "error": outcome.result.as_ref().err(),
        "metrics": outcome.metrics(),
        "initial_modulus": trace.map(|t| t.initial_modulus),
        "outer_iterations": trace.map(|t| t.outer.len()),
        "inner_iterations": trace.map(|t| t.inner.len()),
        "gamma_seconds": trace.map(|t| t.outer.iter().map(|o| o.gamma_seconds).collect::<Vec<_>>()),
        "seconds": outcome.seconds,
    })
}

fn acquisition_json(acquisition: &Acquisition) -> serde_json::Value {
    let n = &acquisition.observations.noise;
    json!({
        "seed": n.seed,
        "sigma_lat": n.sigma_lat,
        "sigma_ax": n.sigma_ax,
        "sigma_f": n.sigma_f,
        "delta_lat": acquisition.delta_lat,
        "delta_ax": acquisition.delta_ax,
        "snr_db": acquisition.snr_db,
    })
}

fn scenario_json(scenario: &Scenario) -> serde_json::Value {
    let inc = &scenario.phantom.inclusion;
    json!({
        "nodes": scenario.mesh.node_count(),
        "elements": scenario.mesh.element_count(),
        "background": scenario.phantom.background,
        "inclusion": inc.modulus,
        "center": inc.center,
        "radius": inc.radius,
        "inclusion_nodes": scenario.labels.count(Region::Inclusion),
        "traction": scenario.load.traction,
        "forward_residual": scenario.forward.residual,
        "boundary_conditions": BOUNDARY_CONDITIONS,
    })
}

fn manifest_base(command: &str, config: &ExperimentConfig) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "metrics": metric_definitions(),
        "colormap": config.output.colormap.name(),
        "color_scale": config.output.scale,
    })
}

fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
}

/// Returns the seed a single run uses.
pub fn single_seed(config: &ExperimentConfig) -> u64 {
    config.noise.seeds[0]
}

pub struct SingleReport {
    pub dir: PathBuf,
    pub acquisition: Acquisition,
    pub outcomes: Vec<Outcome>,
    pub lambda_selection: Vec<LambdaSelection>,
}

/// Mesh and phantom artifacts only.
pub fn run_phantom(config: &ExperimentConfig) -> Result<serde_json::Value, CliError> {
    let dir = &config.output.dir;
    ensure_dir(dir)?;
    let scenario = build_scenario(config, config.phantom.inclusion)?;
    write_truth(dir, config, &scenario)?;
    let mut manifest = manifest_base("phantom", config);
    merge(&mut manifest, json!({ "scenario": scenario_json(&scenario) }));
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Phantom plus one noisy acquisition.
pub fn run_forward(config: &ExperimentConfig) -> Result<serde_json::Value, CliError> {
    let dir = &config.output.dir;
    ensure_dir(dir)?;
    let scenario = build_scenario(config, config.phantom.inclusion)?;
    let acquisition = acquire(&scenario, config.noise.target(), config.noise.force_fraction, single_seed(config))?;
    write_truth(dir, config, &scenario)?;
    write_observations(dir, &scenario, &acquisition)?;
    let mut manifest = manifest_base("forward", config);
    merge(
        &mut manifest,
        json!({
            "scenario": scenario_json(&scenario),
            "noise_target": config.noise.target(),
            "acquisition": acquisition_json(&acquisition),
        }),
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Full pipeline for the first seed, one reconstruction per requested solver.
pub fn run_single(config: &ExperimentConfig, kinds: &[SolverKind]) -> Result<SingleReport, CliError> {
    let start = Instant::now();
    let dir = config.output.dir.clone();
    ensure_dir(&dir)?;
    let scenario = build_scenario(config, config.phantom.inclusion)?;
    let target = config.noise.target();
    let acquisition = acquire(&scenario, target, config.noise.force_fraction, single_seed(config))?;
    write_truth(&dir, config, &scenario)?;
    write_observations(&dir, &scenario, &acquisition)?;

    let pool = pool(config.workers)?;
    let points = [(scenario, target)];
    let lambda_selection = pool.install(|| select_lambdas(config, &points, kinds))?;
    let [(scenario, _)] = points;
    let outcomes: Vec<Outcome> = pool.install(|| {
        kinds
            .par_iter()
            .map(|&kind| solve(config, &scenario, &acquisition, kind, lambda_for(config, &lambda_selection, kind)))
            .collect()
    });
    for outcome in &outcomes {
        write_outcome(&dir, &format!("_{}", outcome.kind.name()), config, &scenario, outcome)?;
    }

    let mut manifest = manifest_base("reconstruct", config);
    merge(
        &mut manifest,
        json!({
            "scenario": scenario_json(&scenario),
            "noise_target": target,
            "acquisition": acquisition_json(&acquisition),
            "lambda_selection": lambda_selection,
            "reconstructions": outcomes.iter().map(outcome_json).collect::<Vec<_>>(),
            "seconds": start.elapsed().as_secs_f64(),
        }),
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(SingleReport {
        dir,
        acquisition,
        outcomes,
        lambda_selection,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub value_index: usize,
    pub seed: u64,
    pub solver: SolverKind,
    pub lambda: f64,
    pub inclusion_true: f64,
    pub target_lat: Option<f64>,
    pub target_ax: Option<f64>,
    pub delta_lat: Option<f64>,
    pub delta_ax: Option<f64>,
    pub snr_db: Option<f64>,
    pub cnr: Option<f64>,
    pub cnr_degenerate: Option<bool>,
    pub rms: Option<f64>,
    pub inclusion_mean: Option<f64>,
    pub background_mean: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub value: String,
    pub value_index: usize,
    pub solver: SolverKind,
    pub runs: usize,
    pub failures: usize,
    pub rms_mean: f64,
    pub rms_std: f64,
    pub cnr_mean: f64,
    pub cnr_std: f64,
    pub inclusion_mean_mean: f64,
    pub inclusion_mean_std: f64,
    pub snr_db_mean: f64,
    pub delta_lat_mean: f64,
    pub delta_ax_mean: f64,
}

pub struct SweepReport {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub lambda_selection: Vec<LambdaSelection>,
}

/// Mean and sample standard deviation of the finite-or-infinite entries; `NaN` when empty.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, SolverKind, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, k, _)| *v == r.value_index && *k == r.solver) {
            keys.push((r.value_index, r.solver, r.value.clone()));
        }
    }
    keys.into_iter()
        .map(|(vi, kind, value)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.value_index == vi && r.solver == kind).collect();
            let col = |f: fn(&SweepRow) -> Option<f64>| group.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let (rms_mean, rms_std) = mean_std(&col(|r| r.rms));
            let (cnr_mean, cnr_std) = mean_std(&col(|r| r.cnr));
            let (inc_mean, inc_std) = mean_std(&col(|r| r.inclusion_mean));
            SummaryRow {
                value,
                value_index: vi,
                solver: kind,
                runs: group.len(),
                failures: group.iter().filter(|r| r.status != "ok").count(),
                rms_mean,
                rms_std,
                cnr_mean,
                cnr_std,
                inclusion_mean_mean: inc_mean,
                inclusion_mean_std: inc_std,
                snr_db_mean: mean_std(&col(|r| r.snr_db)).0,
                delta_lat_mean: mean_std(&col(|r| r.delta_lat)).0,
                delta_ax_mean: mean_std(&col(|r| r.delta_ax)).0,
            }
        })
        .collect()
}

fn sweep_target(config: &ExperimentConfig, axis: SweepAxis, value: SweepValue) -> NoiseTarget {
    match (axis, value) {
        (SweepAxis::Noise, SweepValue::Level(d)) => NoiseTarget::Levels { lateral: d, axial: d },
        (SweepAxis::Noise, SweepValue::Pair([lateral, axial])) => NoiseTarget::Levels { lateral, axial },
        (SweepAxis::Contrast, _) => config.noise.target(),
    }
}

fn sweep_inclusion(config: &ExperimentConfig, axis: SweepAxis, value: SweepValue) -> f64 {
    match (axis, value) {
        (SweepAxis::Contrast, SweepValue::Level(e)) => e,
        _ => config.phantom.inclusion,
    }
}

struct PointOutput {
    row: SweepRow,
    meta: serde_json::Value,
}

fn run_point(
    config: &ExperimentConfig,
    dir: &Path,
    vi: usize,
    value: SweepValue,
    seed: u64,
    kind: SolverKind,
    lambda: f64,
    scenario: &Scenario,
    target: NoiseTarget,
) -> PointOutput {
    let mut row = SweepRow {
        value: value.label(),
        value_index: vi,
        seed,
        solver: kind,
        lambda,
        inclusion_true: scenario.phantom.inclusion.modulus,
        target_lat: None,
        target_ax: None,
        delta_lat: None,
        delta_ax: None,
        snr_db: None,
        cnr: None,
        cnr_degenerate: None,
        rms: None,
        inclusion_mean: None,
        background_mean: None,
        status: "failed".into(),
    };
    if let NoiseTarget::Levels { lateral, axial } = target {
        row.target_lat = Some(lateral);
        row.target_ax = Some(axial);
    }
    let point_dir = dir.join("points").join(format!("v{vi:02}_s{seed}_{}", kind.name()));
    let mut meta = json!({ "value": value.label(), "value_index": vi, "seed": seed, "solver": kind, "dir": point_dir });
    let result = (|| -> Result<serde_json::Value, CliError> {
        ensure_dir(&point_dir)?;
        let acquisition = acquire(scenario, target, config.noise.force_fraction, seed)?;
        row.delta_lat = Some(acquisition.delta_lat);
        row.delta_ax = Some(acquisition.delta_ax);
        row.snr_db = Some(acquisition.snr_db);
        let outcome = solve(config, scenario, &acquisition, kind, lambda);
        if let Some(m) = outcome.metrics() {
            row.cnr = Some(m.cnr);
            row.cnr_degenerate = Some(m.cnr_degenerate);
            row.rms = Some(m.rms);
            row.inclusion_mean = Some(m.inclusion_mean);
            row.background_mean = Some(m.background_mean);
        }
        row.status = outcome.status().into();
        write_outcome(&point_dir, "", config, scenario, &outcome)?;
        let mut point = json!({ "acquisition": acquisition_json(&acquisition) });
        merge(&mut point, outcome_json(&outcome));
        write_json(&point_dir.join("point.json"), &point)?;
        Ok(point)
    })();
    match result {
        Ok(point) => merge(&mut meta, point),
        Err(e) => {
            row.status = "failed".into();
            merge(&mut meta, json!({ "status": "failed", "error": e.to_json() }));
        }
    }
    PointOutput { row, meta }
}

/// Every (sweep value, seed, solver) combination; individual failures are recorded and skipped.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport, CliError> {
    let start = Instant::now();
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("no [sweep] section".into()))?;
    let dir = config.output.dir.clone();
    ensure_dir(&dir)?;
    let points = sweep
        .values
        .iter()
        .map(|&v| {
            Ok((
                build_scenario(config, sweep_inclusion(config, sweep.axis, v))?,
                sweep_target(config, sweep.axis, v),
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_truth(&dir, config, &points[0].0)?;

    let pool = pool(config.workers)?;
    let search_start = Instant::now();
    let lambda_selection = pool.install(|| select_lambdas(config, &points, &SolverKind::ALL))?;
    let search_seconds = search_start.elapsed().as_secs_f64();

    let mut tasks = Vec::new();
    for (vi, &value) in sweep.values.iter().enumerate() {
        for &seed in &config.noise.seeds {
            for kind in SolverKind::ALL {
                tasks.push((vi, value, seed, kind));
            }
        }
    }
    let outputs: Vec<PointOutput> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(vi, value, seed, kind)| {
                let (scenario, target) = &points[vi];
                let lambda = lambda_for(config, &lambda_selection, kind);
                run_point(config, &dir, vi, value, seed, kind, lambda, scenario, *target)
            })
            .collect()
    });

    let rows: Vec<SweepRow> = outputs.iter().map(|o| o.row.clone()).collect();
    let summary = summarize(&rows);
    write_csv(&dir.join("sweep.csv"), rows.iter())?;
    write_csv(&dir.join("summary.csv"), summary.iter())?;
    let mut manifest = manifest_base("sweep", config);
    merge(
        &mut manifest,
        json!({
            "scenarios": points.iter().map(|(s, t)| json!({ "scenario": scenario_json(s), "noise_target": t })).collect::<Vec<_>>(),
            "lambda_selection": lambda_selection,
            "points": outputs.iter().map(|o| &o.meta).collect::<Vec<_>>(),
            "lambda_search_seconds": search_seconds,
            "seconds": start.elapsed().as_secs_f64(),
        }),
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(SweepReport {
        dir,
        rows,
        summary,
        lambda_selection,
    })
}
