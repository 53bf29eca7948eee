//! Output documents: JSON reports and CSV tables.
//!
//! Every file embeds the SHA-256 of the run configuration and the seed, so
//! artifacts are traceable to the exact inputs that produced them; re-running
//! the same configuration reproduces the files byte for byte.
//!
//! Mode indices are written 1-based (matching the configuration format);
//! node indices are the 0-based row-major grid enumeration, accompanied by
//! the node coordinates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use swdiff::error::Result;
use swdiff::grid::TorusGrid;
use swdiff::homogenize::HomogenizeResult;
use swdiff::model::{ValidationReport, Violation};
use swdiff::simulate::PathSample;
use swdiff::verify::{CovarianceEstimate, CrossvariationReport, ErgodicScaling};

use crate::config::RunConfig;

/// Hex SHA-256 of the configuration bytes (the raw file when `--config` is
/// used, the canonical JSON serialization for preset-only runs).
pub fn config_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Write a serializable document as pretty-printed JSON with a trailing
/// newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// A dense matrix as a list of rows for JSON output.
pub fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// validation.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ValidationOutput {
    pub config_sha256: String,
    pub seed: u64,
    pub accepted: bool,
    pub grid_n: Vec<usize>,
    pub ellipticity_min: f64,
    pub intensity_min: f64,
    pub irreducible_everywhere: bool,
    pub max_total_rate: f64,
    pub total_violations: usize,
    pub violations: Vec<ViolationOutput>,
}

/// One standing-assumption violation; `mode`, `from`, `to` are 1-based.
#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ViolationOutput {
    NonElliptic {
        node_index: usize,
        coords: Vec<f64>,
        mode: usize,
        min_eig: f64,
    },
    NegativeIntensity {
        node_index: usize,
        coords: Vec<f64>,
        from: usize,
        to: usize,
        value: f64,
    },
    NotIrreducible {
        node_index: usize,
        coords: Vec<f64>,
    },
}

impl ValidationOutput {
    pub fn new(
        report: &ValidationReport,
        grid: &TorusGrid,
        config_sha256: String,
        seed: u64,
    ) -> Self {
        let violations = report
            .violations
            .iter()
            .map(|v| match *v {
                Violation::NonElliptic {
                    node,
                    mode,
                    min_eig,
                } => ViolationOutput::NonElliptic {
                    node_index: node,
                    coords: grid.node_coords(node),
                    mode: mode + 1,
                    min_eig,
                },
                Violation::NegativeIntensity {
                    node,
                    from,
                    to,
                    value,
                } => ViolationOutput::NegativeIntensity {
                    node_index: node,
                    coords: grid.node_coords(node),
                    from: from + 1,
                    to: to + 1,
                    value,
                },
                Violation::NotIrreducible { node } => ViolationOutput::NotIrreducible {
                    node_index: node,
                    coords: grid.node_coords(node),
                },
            })
            .collect();
        ValidationOutput {
            config_sha256,
            seed,
            accepted: report.accepted(),
            grid_n: report.grid_n.clone(),
            ellipticity_min: report.ellipticity_min,
            intensity_min: report.intensity_min,
            irreducible_everywhere: report.irreducible_everywhere,
            max_total_rate: report.max_total_rate,
            total_violations: report.total_violations,
            violations,
        }
    }
}

// ---------------------------------------------------------------------------
// effective.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct EffectiveOutput {
    pub config_sha256: String,
    pub seed: u64,
    pub grid_n: Vec<usize>,
    pub b_bar: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub diffusive_part: Vec<Vec<f64>>,
    pub switching_part: Vec<Vec<f64>>,
    pub covariance_min_eig: f64,
    pub integrand_min_eig: f64,
    pub density: DensityDiagnostics,
    pub corrector: CorrectorDiagnostics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct DensityDiagnostics {
    pub residual_inf: f64,
    pub relative_residual: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub used_fallback: bool,
}

#[derive(Debug, Serialize)]
pub struct CorrectorDiagnostics {
    pub multipliers: Vec<f64>,
    pub residuals: Vec<f64>,
    pub relative_residuals: Vec<f64>,
    pub centerings: Vec<f64>,
}

impl EffectiveOutput {
    pub fn new(
        result: &HomogenizeResult,
        grid: &TorusGrid,
        config_sha256: String,
        seed: u64,
    ) -> Self {
        EffectiveOutput {
            config_sha256,
            seed,
            grid_n: grid.shape().to_vec(),
            b_bar: result.effective.b_bar.clone(),
            covariance: matrix_rows(&result.effective.covariance),
            diffusive_part: matrix_rows(&result.effective.diffusive_part),
            switching_part: matrix_rows(&result.effective.switching_part),
            covariance_min_eig: result.effective.covariance_min_eig,
            integrand_min_eig: result.effective.integrand_min_eig,
            density: DensityDiagnostics {
                residual_inf: result.density.residual_inf,
                relative_residual: result.density.relative_residual,
                min_value: result.density.min_value,
                max_value: result.density.max_value,
                used_fallback: result.density.used_fallback,
            },
            corrector: CorrectorDiagnostics {
                multipliers: result.corrector.multipliers.clone(),
                residuals: result.corrector.residuals.clone(),
                relative_residuals: result.corrector.relative_residuals.clone(),
                centerings: result.corrector.centerings.clone(),
            },
            warnings: result.warnings.clone(),
        }
    }
}

/// Corrector table: one row per (node, mode) with all `d` components.
///
/// Columns: `node_index, x_1, …, x_d, mode, phi_1, …, phi_d` (mode 1-based).
pub fn write_corrector_csv<W: Write>(
    result: &HomogenizeResult,
    grid: &TorusGrid,
    mut w: W,
    metadata: &[(&str, String)],
) -> Result<()> {
    let d = grid.dim();
    let components = &result.corrector.components;
    let num_modes = components
        .first()
        .map(|c| c.num_modes())
        .unwrap_or_default();
    for (key, value) in metadata {
        writeln!(w, "# {key}={value}")?;
    }
    write!(w, "node_index")?;
    for j in 1..=d {
        write!(w, ",x_{j}")?;
    }
    write!(w, ",mode")?;
    for k in 1..=d {
        write!(w, ",phi_{k}")?;
    }
    writeln!(w)?;
    let mut x = vec![0.0; d];
    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        for mode in 0..num_modes {
            write!(w, "{node}")?;
            for xj in &x {
                write!(w, ",{xj:.17e}")?;
            }
            write!(w, ",{}", mode + 1)?;
            for comp in components {
                write!(w, ",{:.17e}", comp.get(node, mode))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate summary + paths.csv
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub epsilon: f64,
    pub t_horizon: f64,
    pub h_micro: f64,
    pub n_paths: usize,
    /// Effective drift used to compensate the displacement.
    pub b_bar: Vec<f64>,
    /// Mean of `Y = X^ε(T) − b̄T/ε` over the ensemble.
    pub displacement_mean: Vec<f64>,
    pub displacement_mean_stderr: Vec<f64>,
    /// Sample covariance of `Y` per unit time (the effective-covariance
    /// estimate).
    pub covariance: Vec<Vec<f64>>,
    pub covariance_stderr: Vec<Vec<f64>>,
}

impl SimulateSummary {
    pub fn new(
        estimate: &CovarianceEstimate,
        b_bar: &[f64],
        epsilon: f64,
        h_micro: f64,
        config_sha256: String,
        seed: u64,
    ) -> Self {
        SimulateSummary {
            config_sha256,
            seed,
            epsilon,
            t_horizon: estimate.t_horizon,
            h_micro,
            n_paths: estimate.n_paths,
            b_bar: b_bar.to_vec(),
            displacement_mean: estimate.mean.clone(),
            displacement_mean_stderr: estimate.mean_stderr.clone(),
            covariance: matrix_rows(&estimate.covariance),
            covariance_stderr: matrix_rows(&estimate.stderr),
        }
    }
}

/// Path table: one row per recorded state, ordered by path then time.
///
/// Columns: `path, time, mode, x_1, …, x_d` (mode 1-based; macro
/// coordinates when the samples were rescaled).
pub fn write_paths_csv<W: Write>(
    paths: &[PathSample],
    mut w: W,
    metadata: &[(&str, String)],
) -> Result<()> {
    for (key, value) in metadata {
        writeln!(w, "# {key}={value}")?;
    }
    let d = paths.first().map(|p| p.dim()).unwrap_or_default();
    write!(w, "path,time,mode")?;
    for j in 1..=d {
        write!(w, ",x_{j}")?;
    }
    writeln!(w)?;
    for path in paths {
        for i in 0..path.num_samples() {
            write!(
                w,
                "{},{:.17e},{}",
                path.path_id,
                path.time(i),
                path.mode(i) + 1
            )?;
            for xj in path.position(i) {
                write!(w, ",{xj:.17e}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify.json
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct VerifyOutput {
    pub config_sha256: String,
    pub seed: u64,
    /// Echo of the run configuration the statistics were computed from.
    pub config: RunConfig,
    pub b_bar: Vec<f64>,
    /// Effective covariance from the homogenization solve.
    pub c_target: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossvariation: Option<CrossvariationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodic_scaling: Option<ErgodicSection>,
    pub all_pass: bool,
}

#[derive(Debug, Serialize)]
pub struct CovarianceSection {
    pub n_paths: usize,
    pub c_hat: Vec<Vec<f64>>,
    pub mc_stderr: Vec<Vec<f64>>,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CovarianceSection {
    pub fn new(estimate: &CovarianceEstimate, rel_error: f64, tolerance: f64) -> Self {
        CovarianceSection {
            n_paths: estimate.n_paths,
            c_hat: matrix_rows(&estimate.covariance),
            mc_stderr: matrix_rows(&estimate.stderr),
            rel_error,
            tolerance,
            pass: rel_error <= tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CrossvariationSection {
    pub n_paths: usize,
    pub realized: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub rel_error: f64,
    pub tolerance: f64,
    pub martingale_mean: Vec<f64>,
    pub martingale_stderr: Vec<f64>,
    pub martingale_sigmas: f64,
    pub martingale_mean_ok: bool,
    pub pass: bool,
}

impl CrossvariationSection {
    pub fn new(report: &CrossvariationReport, tolerance: f64, sigmas: f64) -> Self {
        let mean_ok = report.martingale_mean_ok(sigmas);
        let pass = report.rel_error <= tolerance && mean_ok;
        CrossvariationSection {
            n_paths: report.n_paths,
            realized: matrix_rows(&report.realized),
            predicted: matrix_rows(&report.predicted),
            rel_error: report.rel_error,
            tolerance,
            martingale_mean: report.martingale_mean.clone(),
            martingale_stderr: report.martingale_stderr.clone(),
            martingale_sigmas: sigmas,
            martingale_mean_ok: mean_ok,
            pass,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErgodicSection {
    pub epsilons: Vec<f64>,
    pub rms_errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Space-mode average of the observable under the invariant density.
    pub g_bar: f64,
    /// Ensemble-mean time average at each ε.
    pub mean_averages: Vec<f64>,
    /// All RMS errors at roundoff: the observable's time average is exact
    /// (e.g. a constant observable), so there is no decay to measure.
    pub degenerate: bool,
    pub pass: bool,
}

impl ErgodicSection {
    pub fn new(scaling: &ErgodicScaling, ratio_min: f64, ratio_max: f64) -> Self {
        let ratios = scaling.ratios();
        // Errors this small carry no O(ε) signal; the averages already agree
        // with ḡ to roundoff and the decay check is vacuous.
        let floor = 1e-12 * (1.0 + scaling.g_bar.abs());
        let degenerate = scaling.rms_errors.iter().all(|&e| e <= floor);
        let pass = degenerate || ratios.iter().all(|&r| r >= ratio_min && r <= ratio_max);
        ErgodicSection {
            epsilons: scaling.epsilons.clone(),
            rms_errors: scaling.rms_errors.clone(),
            ratios,
            ratio_min,
            ratio_max,
            g_bar: scaling.g_bar,
            mean_averages: scaling.mean_averages.clone(),
            degenerate,
            pass,
        }
    }
}

// ---------------------------------------------------------------------------
// convergence.csv
// ---------------------------------------------------------------------------

/// One refinement level of the convergence study.
pub struct ConvergenceRow {
    pub n: Vec<usize>,
    pub h_max: f64,
    pub b_bar: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Frobenius distance of `covariance` to the previous level.
    pub delta_c: Option<f64>,
    /// `log2` of the ratio of successive deltas.
    pub order: Option<f64>,
}

/// Refinement table. Columns: `n` (×-joined shape), `h_max`, the `b̄`
/// components, the row-major `C` entries, the successive Frobenius
/// difference, and the observed order (blank where undefined).
pub fn write_convergence_csv<W: Write>(
    rows: &[ConvergenceRow],
    d: usize,
    mut w: W,
    metadata: &[(&str, String)],
) -> Result<()> {
    for (key, value) in metadata {
        writeln!(w, "# {key}={value}")?;
    }
    write!(w, "n,h_max")?;
    for j in 1..=d {
        write!(w, ",b_bar_{j}")?;
    }
    for i in 1..=d {
        for j in 1..=d {
            write!(w, ",c_{i}{j}")?;
        }
    }
    writeln!(w, ",delta_c,order")?;
    for row in rows {
        let shape = row
            .n
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("x");
        write!(w, "{shape},{:.17e}", row.h_max)?;
        for b in &row.b_bar {
            write!(w, ",{b:.17e}")?;
        }
        for i in 0..d {
            for j in 0..d {
                write!(w, ",{:.17e}", row.covariance[(i, j)])?;
            }
        }
        match row.delta_c {
            Some(delta) => write!(w, ",{delta:.17e}")?,
            None => write!(w, ",")?,
        }
        match row.order {
            Some(order) => writeln!(w, ",{order:.6}")?,
            None => writeln!(w, ",")?,
        }
    }
    Ok(())
}
