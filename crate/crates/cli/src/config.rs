//! Experiment configuration, read from TOML.
//!
//! Every field has a default, and the resolved struct is written back into each run's
//! manifest.

use std::path::{Path, PathBuf};

use elasto_core::{InitialModulus, MeshParams, ProxComposition, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Threads used for sweep points and the λ search.
    pub workers: usize,
    pub mesh: MeshSection,
    pub phantom: PhantomSection,
    pub noise: NoiseSection,
    pub solver: SolverSection,
    pub sweep: Option<SweepSection>,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            mesh: MeshSection::default(),
            phantom: PhantomSection::default(),
            noise: NoiseSection::default(),
            solver: SolverSection::default(),
            sweep: None,
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub width: f64,
    pub height: f64,
    pub target_nodes: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            width: 1.0,
            height: 1.0,
            target_nodes: 300,
            jitter: 0.2,
            seed: 1,
        }
    }
}

impl MeshSection {
    pub fn params(&self) -> MeshParams {
        MeshParams {
            width: self.width,
            height: self.height,
            target_nodes: self.target_nodes,
            jitter: self.jitter,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    /// Pa.
    pub background: f64,
    /// Pa.
    pub inclusion: f64,
    /// Defaults to the domain center.
    pub center: Option<[f64; 2]>,
    pub radius: f64,
    pub poisson: f64,
    /// Peak axial displacement as a fraction of the domain height.
    pub compression: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            background: 1e4,
            inclusion: 5e4,
            center: None,
            radius: 0.2,
            poisson: 0.495,
            compression: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Target lateral noise level Δ_lat.
    pub lateral: f64,
    /// Target axial noise level Δ_ax.
    pub axial: f64,
    /// Overrides `lateral`/`axial` with levels in the ratio `lateral_to_axial`.
    pub snr_db: Option<f64>,
    pub lateral_to_axial: f64,
    /// Explicit `[σ_lat, σ_ax]`; overrides every level setting.
    pub sigma: Option<[f64; 2]>,
    /// `σ_f` as a fraction of the largest applied nodal force.
    pub force_fraction: f64,
    pub seeds: Vec<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            lateral: 0.09,
            axial: 0.03,
            snr_db: None,
            lateral_to_axial: 3.0,
            sigma: None,
            force_fraction: 0.01,
            seeds: vec![0],
        }
    }
}

/// How the displacement noise of one acquisition is specified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    Levels { lateral: f64, axial: f64 },
    Snr { db: f64, lateral_to_axial: f64 },
    Sigma { lateral: f64, axial: f64 },
}

impl NoiseSection {
    pub fn target(&self) -> NoiseTarget {
        if let Some([lateral, axial]) = self.sigma {
            NoiseTarget::Sigma { lateral, axial }
        } else if let Some(db) = self.snr_db {
            NoiseTarget::Snr {
                db,
                lateral_to_axial: self.lateral_to_axial,
            }
        } else {
            NoiseTarget::Levels {
                lateral: self.lateral,
                axial: self.axial,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    Composed,
    Dykstra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub lambda: f64,
    /// Defaults to `lambda`.
    pub baseline_lambda: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub tv_inner_iters: usize,
    pub tv_tolerance: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub power_seed: u64,
    /// Uniform starting modulus; the homogeneous fit is used when absent.
    pub initial: Option<f64>,
    pub composition: Composition,
    pub dykstra_iters: usize,
    pub accelerated: bool,
    pub max_halvings: usize,
    pub lambda_search: Option<LambdaSearch>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let core = SolverConfig::default();
        Self {
            lambda: 5e-4,
            baseline_lambda: None,
            outer_iters: core.outer_iters,
            inner_iters: core.inner_iters,
            tv_inner_iters: core.tv_inner_iters,
            tv_tolerance: core.tv_tolerance,
            tolerance: core.tolerance,
            floor: core.floor,
            power_seed: core.power_seed,
            initial: None,
            composition: Composition::Composed,
            dykstra_iters: 50,
            accelerated: core.accelerated,
            max_halvings: core.max_halvings,
            lambda_search: None,
        }
    }
}

impl SolverSection {
    pub fn core(&self, lambda: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            tv_inner_iters: self.tv_inner_iters,
            tv_tolerance: self.tv_tolerance,
            tolerance: self.tolerance,
            initial: match self.initial {
                Some(v) => InitialModulus::Uniform(v),
                None => InitialModulus::Auto,
            },
            floor: self.floor,
            power_seed: self.power_seed,
            composition: match self.composition {
                Composition::Composed => ProxComposition::Composed,
                Composition::Dykstra => ProxComposition::Dykstra {
                    iterations: self.dykstra_iters,
                },
            },
            max_halvings: self.max_halvings,
            accelerated: self.accelerated,
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean normalized RMS error.
    Rms,
    /// Mean relative error of the inclusion-region mean.
    InclusionMean,
}

/// Grid search for λ on tuning seeds, run separately for each solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaSearch {
    pub grid: Vec<f64>,
    pub objective: Objective,
    pub seeds: Vec<u64>,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            grid: vec![1e-5, 1e-4, 2e-4, 5e-4, 1e-3, 1e-2, 1e-1],
            objective: Objective::Rms,
            seeds: vec![100, 101],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Values are noise levels; a scalar applies to both directions.
    Noise,
    /// Values are inclusion moduli in Pa.
    Contrast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Level(f64),
    Pair([f64; 2]),
}

impl SweepValue {
    pub fn label(&self) -> String {
        match self {
            SweepValue::Level(v) => format!("{v}"),
            SweepValue::Pair([a, b]) => format!("{a}/{b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Jet,
    Gray,
}

impl Colormap {
    pub fn name(&self) -> &'static str {
        match self {
            Colormap::Jet => "jet",
            Colormap::Gray => "gray",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// `[width, height]` in pixels.
    pub raster_size: [usize; 2],
    pub colormap: Colormap,
    /// Color-bar limits in Pa.
    pub scale: [f64; 2],
    pub rasters: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            raster_size: [256, 256],
            colormap: Colormap::Jet,
            scale: [0.0, 1e5],
            rasters: true,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_level(name: &str, v: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&v) {
        return Err(invalid(format!("{name} must lie in [0, 1), got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks what the core modules do not check themselves.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        let p = &self.phantom;
        if !(p.poisson > 0.0 && p.poisson < 0.5) {
            return Err(invalid(format!("poisson must lie in (0, 0.5), got {}", p.poisson)));
        }
        if !(p.compression > 0.0) {
            return Err(invalid("compression must be positive"));
        }
        let n = &self.noise;
        if n.seeds.is_empty() {
            return Err(invalid("noise.seeds must not be empty"));
        }
        check_level("noise.lateral", n.lateral)?;
        check_level("noise.axial", n.axial)?;
        if !(n.force_fraction >= 0.0) {
            return Err(invalid("noise.force_fraction must be nonnegative"));
        }
        if let Some([a, b]) = n.sigma {
            if !(a >= 0.0 && b >= 0.0) {
                return Err(invalid("noise.sigma entries must be nonnegative"));
            }
        }
        if !(n.lateral_to_axial > 0.0) {
            return Err(invalid("noise.lateral_to_axial must be positive"));
        }
        self.solver.core(self.solver.lambda).validate()?;
        if let Some(lb) = self.solver.baseline_lambda {
            self.solver.core(lb).validate()?;
        }
        if let Some(search) = &self.solver.lambda_search {
            if search.grid.is_empty() || search.seeds.is_empty() {
                return Err(invalid("lambda_search grid and seeds must not be empty"));
            }
            if search.grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                return Err(invalid("lambda_search grid values must be finite and nonnegative"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values must not be empty"));
            }
            for v in &sweep.values {
                match (sweep.axis, v) {
                    (SweepAxis::Noise, SweepValue::Level(d)) => check_level("sweep value", *d)?,
                    (SweepAxis::Noise, SweepValue::Pair([a, b])) => {
                        check_level("sweep value", *a)?;
                        check_level("sweep value", *b)?;
                    }
                    (SweepAxis::Contrast, SweepValue::Level(e)) if *e > 0.0 => {}
                    (SweepAxis::Contrast, other) => {
                        return Err(invalid(format!(
                            "contrast sweep values must be positive moduli, got {}",
                            other.label()
                        )))
                    }
                }
            }
        }
        let o = &self.output;
        if o.raster_size[0] == 0 || o.raster_size[1] == 0 {
            return Err(invalid("output.raster_size must be positive"));
        }
        if !(o.scale[1] > o.scale[0]) {
            return Err(invalid("output.scale must be increasing"));
        }
        Ok(())
    }
}
