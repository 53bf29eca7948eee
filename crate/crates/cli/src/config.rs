//! JSON run configuration.
//!
//! A run is a pure function of `(RunConfig, code version)`: the document
//! fixes the model, grid, solver tolerances, simulation protocol, and
//! verification selection. Every section except `model` has complete
//! defaults, and `model` may name a built-in preset instead of spelling out
//! coefficients.
//!
//! Serialized mode indices are 1-based (`from`/`to`/`mode0`, and the `mode`
//! columns of emitted CSVs) to match the usual α ∈ {1, …, m} notation;
//! the in-memory API is 0-based throughout.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use swdiff::error::{Error, Result};

/// Configuration-shape error with the offending key path.
fn param(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
use swdiff::grid::TorusGrid;
use swdiff::homogenize::SolverOptions;
use swdiff::linsolve::LinearSolver;
use swdiff::model::{FieldSpec, ModeCoefficients, SwitchingModel};
use swdiff::presets;
use swdiff::simulate::SimConfig;

/// Top-level run configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub verify: VerifySection,
    /// Where output files go; overridden by `--out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// A configuration whose model is the named preset and whose every other
    /// section is the default.
    pub fn for_preset(name: &str) -> Result<Self> {
        presets::preset(name)?; // validate the name early
        Ok(RunConfig {
            model: ModelConfig {
                preset: Some(name.to_string()),
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        })
    }

    pub fn build_model(&self) -> Result<SwitchingModel> {
        self.model.build()
    }

    pub fn build_grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(&self.grid.n)
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        self.solver.to_options()
    }

    /// The simulation configuration for a model of dimension `d` with
    /// `num_modes` modes, converting the 1-based `mode0` and filling the
    /// default start position.
    pub fn sim_config(&self, model: &SwitchingModel) -> Result<SimConfig> {
        self.sim.to_sim_config(model)
    }
}

/// Model section: either a preset name or explicit coefficients.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of the built-in benchmarks; excludes the explicit fields below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Spatial dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Brownian driving dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    /// Per-mode drift and diffusion coefficients.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeConfig>,
    /// Off-diagonal switching intensities (1-based mode indices).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub switching: Vec<SwitchConfig>,
}

/// Coefficients of one mode: `drift` has `d` fields, `sigma` has `d·r`
/// fields in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub drift: Vec<FieldSpec>,
    pub sigma: Vec<FieldSpec>,
}

/// One switching intensity `q_{from → to}` with 1-based mode indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub from: usize,
    pub to: usize,
    pub rate: FieldSpec,
}

impl ModelConfig {
    pub fn build(&self) -> Result<SwitchingModel> {
        if let Some(name) = &self.preset {
            if self.d.is_some()
                || self.r.is_some()
                || !self.modes.is_empty()
                || !self.switching.is_empty()
            {
                return Err(param(
                    "model.preset",
                    "a preset excludes explicit model fields",
                ));
            }
            return presets::preset(name);
        }
        let d = self
            .d
            .ok_or_else(|| param("model.d", "required without a preset"))?;
        let r = self
            .r
            .ok_or_else(|| param("model.r", "required without a preset"))?;
        if self.modes.is_empty() {
            return Err(param("model.modes", "at least one mode is required"));
        }
        let modes = self
            .modes
            .iter()
            .map(|m| ModeCoefficients {
                drift: m.drift.clone(),
                sigma: m.sigma.clone(),
            })
            .collect();
        let mut intensities = Vec::with_capacity(self.switching.len());
        for s in &self.switching {
            if s.from == 0 || s.to == 0 {
                return Err(param(
                    "model.switching",
                    "mode indices are 1-based; 0 is not a mode",
                ));
            }
            intensities.push((s.from - 1, s.to - 1, s.rate.clone()));
        }
        SwitchingModel::new(d, r, modes, intensities)
    }
}

/// Grid section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis.
    #[serde(default = "default_grid_n")]
    pub n: Vec<usize>,
    /// Number of dyadic refinements for the convergence study.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: default_grid_n(),
            refinements: default_refinements(),
        }
    }
}

fn default_grid_n() -> Vec<usize> {
    vec![64]
}

fn default_refinements() -> usize {
    3
}

/// Solver tolerances; defaults match the library's.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_density_tol")]
    pub density_tol: f64,
    #[serde(default = "default_cell_tol")]
    pub cell_tol: f64,
    #[serde(default = "default_centering_tol")]
    pub centering_tol: f64,
    #[serde(default = "default_fredholm_tol")]
    pub fredholm_tol: f64,
    /// One of "auto", "direct", "gmres".
    #[serde(default = "default_linear_solver")]
    pub linear_solver: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            density_tol: default_density_tol(),
            cell_tol: default_cell_tol(),
            centering_tol: default_centering_tol(),
            fredholm_tol: default_fredholm_tol(),
            linear_solver: default_linear_solver(),
        }
    }
}

fn default_density_tol() -> f64 {
    SolverOptions::default().density_tol
}

fn default_cell_tol() -> f64 {
    SolverOptions::default().cell_tol
}

fn default_centering_tol() -> f64 {
    SolverOptions::default().centering_tol
}

fn default_fredholm_tol() -> f64 {
    SolverOptions::default().fredholm_tol
}

fn default_linear_solver() -> String {
    "auto".to_string()
}

impl SolverConfig {
    pub fn to_options(&self) -> Result<SolverOptions> {
        let linear_solver = match self.linear_solver.as_str() {
            "auto" => LinearSolver::Auto,
            "direct" => LinearSolver::Direct,
            "gmres" => LinearSolver::Gmres,
            other => {
                return Err(param(
                    "solver.linear_solver",
                    format!("unknown choice {other:?}; use auto, direct, or gmres"),
                ))
            }
        };
        Ok(SolverOptions {
            density_tol: self.density_tol,
            cell_tol: self.cell_tol,
            centering_tol: self.centering_tol,
            fredholm_tol: self.fredholm_tol,
            linear_solver,
        })
    }
}

/// Simulation section (`mode0` is 1-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_t_horizon")]
    pub t_horizon: f64,
    #[serde(default = "default_h_micro")]
    pub h_micro: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Initial position; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial mode, 1-based.
    #[serde(default = "default_mode0")]
    pub mode0: usize,
    /// Recording stride in micro steps; absent means initial + final only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    /// Emit paths.csv from the simulate command.
    #[serde(default)]
    pub write_paths: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            epsilon: default_epsilon(),
            t_horizon: default_t_horizon(),
            h_micro: default_h_micro(),
            n_paths: default_n_paths(),
            seed: default_seed(),
            x0: None,
            mode0: default_mode0(),
            record_stride: None,
            write_paths: false,
        }
    }
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_t_horizon() -> f64 {
    1.0
}

fn default_h_micro() -> f64 {
    0.01
}

fn default_n_paths() -> usize {
    1000
}

fn default_seed() -> u64 {
    1
}

fn default_mode0() -> usize {
    1
}

impl SimSection {
    pub fn to_sim_config(&self, model: &SwitchingModel) -> Result<SimConfig> {
        if self.mode0 == 0 {
            return Err(param(
                "sim.mode0",
                "mode indices are 1-based; 0 is not a mode",
            ));
        }
        let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; model.dim()]);
        let mut config = SimConfig {
            epsilon: self.epsilon,
            t_horizon: self.t_horizon,
            h_micro: self.h_micro,
            n_paths: self.n_paths,
            seed: self.seed,
            x0,
            mode0: self.mode0 - 1,
            record_stride: 1,
        };
        config.record_stride = match self.record_stride {
            Some(s) => s,
            None => config.n_steps().max(1),
        };
        config.validate(model)?;
        Ok(config)
    }
}

/// Verification section: which statistical tests run and their tolerances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Subset of "covariance", "crossvariation", "ergodic-scaling".
    #[serde(default = "default_tests")]
    pub tests: Vec<String>,
    /// Halving sequence for the ergodic-scaling test.
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_cov_tol")]
    pub covariance_rel_tol: f64,
    #[serde(default = "default_crossvar_tol")]
    pub crossvar_rel_tol: f64,
    #[serde(default = "default_martingale_sigmas")]
    pub martingale_sigmas: f64,
    #[serde(default = "default_ratio_min")]
    pub ratio_min: f64,
    #[serde(default = "default_ratio_max")]
    pub ratio_max: f64,
    /// Observable for the ergodic test; defaults to the (1,1) diffusion
    /// entry `a_11(x, α)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableConfig>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            tests: default_tests(),
            epsilons: default_epsilons(),
            covariance_rel_tol: default_cov_tol(),
            crossvar_rel_tol: default_crossvar_tol(),
            martingale_sigmas: default_martingale_sigmas(),
            ratio_min: default_ratio_min(),
            ratio_max: default_ratio_max(),
            observable: None,
        }
    }
}

fn default_tests() -> Vec<String> {
    VALID_TESTS.iter().map(|s| s.to_string()).collect()
}

/// Test names accepted in `verify.tests`.
pub const VALID_TESTS: [&str; 3] = ["covariance", "crossvariation", "ergodic-scaling"];

fn default_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_cov_tol() -> f64 {
    0.10
}

fn default_crossvar_tol() -> f64 {
    0.05
}

fn default_martingale_sigmas() -> f64 {
    4.0
}

fn default_ratio_min() -> f64 {
    1.4
}

fn default_ratio_max() -> f64 {
    2.9
}

impl VerifySection {
    pub fn check_tests(&self) -> Result<()> {
        for t in &self.tests {
            if !VALID_TESTS.contains(&t.as_str()) {
                return Err(param(
                    "verify.tests",
                    format!("unknown test {t:?}; available: {}", VALID_TESTS.join(", ")),
                ));
            }
        }
        if self.tests.is_empty() {
            return Err(param("verify.tests", "select at least one test"));
        }
        Ok(())
    }
}

/// Ergodic-test observable `g(x, α)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `g = a_{row,col}(x, α)` (1-based entries of the diffusion matrix).
    DiffusionEntry { row: usize, col: usize },
    /// `g = 1{α = mode}` (1-based).
    ModeIndicator { mode: usize },
    /// A mode-independent scalar field `g = f(x)`.
    Field { field: FieldSpec },
}

impl ObservableConfig {
    /// Bake the observable into a callable closure over `(x, mode)`.
    pub fn build(
        &self,
        model: &SwitchingModel,
    ) -> Result<Box<dyn Fn(&[f64], usize) -> f64 + Sync + Send>> {
        let d = model.dim();
        let r = model.brownian_dim();
        let m = model.num_modes();
        match self {
            ObservableConfig::DiffusionEntry { row, col } => {
                if *row == 0 || *col == 0 || *row > d || *col > d {
                    return Err(param(
                        "verify.observable",
                        format!("diffusion entry ({row},{col}) outside 1..={d}"),
                    ));
                }
                let (i, j) = (row - 1, col - 1);
                // Clone the σ rows so evaluation allocates nothing per call.
                let rows: Vec<(Vec<FieldSpec>, Vec<FieldSpec>)> = (0..m)
                    .map(|alpha| {
                        let mode = model.mode(alpha);
                        let row_i: Vec<FieldSpec> =
                            (0..r).map(|l| mode.sigma[i * r + l].clone()).collect();
                        let row_j: Vec<FieldSpec> =
                            (0..r).map(|l| mode.sigma[j * r + l].clone()).collect();
                        (row_i, row_j)
                    })
                    .collect();
                Ok(Box::new(move |x, alpha| {
                    let (row_i, row_j) = &rows[alpha];
                    row_i
                        .iter()
                        .zip(row_j)
                        .map(|(si, sj)| si.eval(x) * sj.eval(x))
                        .sum()
                }))
            }
            ObservableConfig::ModeIndicator { mode } => {
                if *mode == 0 || *mode > m {
                    return Err(param(
                        "verify.observable",
                        format!("mode {mode} outside 1..={m}"),
                    ));
                }
                let target = mode - 1;
                Ok(Box::new(
                    move |_, alpha| {
                        if alpha == target {
                            1.0
                        } else {
                            0.0
                        }
                    },
                ))
            }
            ObservableConfig::Field { field } => {
                field.check_dim(d, "verify.observable")?;
                let f = field.clone();
                Ok(Box::new(move |x, _| f.eval(x)))
            }
        }
    }
}
