//! Invariant density, cell problems, and effective coefficients.
//!
//! Everything here operates on the assembled discrete generator `A` of
//! [`crate::operators`] and its exact transpose `Aᵀ`.
//!
//! **Invariant density.** The discrete stationary equation is `Aᵀ m = 0`
//! with the normalization `w Σ m = 1` (`w` the nodal quadrature weight).
//! Because constants span the kernel of `A` on a connected grid with
//! irreducible switching, the kernel of `Aᵀ` is one-dimensional, so we
//! replace the last row of `Aᵀ` with the normalization row and solve the
//! resulting nonsingular system directly. If the residual of that solve on
//! the *original* `Aᵀ` fails the tolerance, we fall back to inverse power
//! iteration with a tiny shift, which converges to the kernel direction from
//! any starting vector with nonzero kernel component.
//!
//! **Cell problems.** The corrector equation `A Φ_k = b_k − b̄_k` is solvable
//! exactly when the right-hand side has zero mean against `m` (Fredholm).
//! Rather than deflate by hand we solve the bordered system
//!
//! ```text
//! [ A   m ] [ Φ_k ]   [ b_k − b̄_k ]
//! [ wᵀ  0 ] [ λ_k ] = [     0      ]
//! ```
//!
//! whose multiplier `λ_k` *measures* the compatibility defect: for a
//! consistent right-hand side `λ_k` vanishes to solver precision, and a
//! genuinely incompatible right-hand side is rejected because `|λ_k|`
//! exceeds its threshold. The constraint row pins the additive constant of
//! `Φ_k` to zero mean.
//!
//! **Effective coefficients.** With `G = I − DΦ` (centered-difference
//! gradient), the covariance is the state-space average
//!
//! ```text
//! C = Σ_α w Σ_i [ G a Gᵀ + 𝒬(Φ, Φ) ](x_i, α) m(x_i, α),
//! ```
//!
//! accumulated with compensated sums in a fixed order so results are
//! bit-reproducible. The pointwise integrand is positive semidefinite
//! whenever `m ≥ 0`, `a = σσᵀ`, and the intensities are nonnegative; we track
//! its smallest eigenvalue as a numerical certificate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, CompensatedAcc, GridFunction, TorusGrid};
use crate::linsolve::{factorize, Factorization, LinearSolver};
use crate::model::{sym_min_eig, SwitchingModel};
use crate::operators::{assemble_generator, centered_gradient, CsrMatrix, DiscreteOperator};

/// Tolerances and backend selection for the stationary solves.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual `‖Aᵀm‖∞ / (‖A‖∞ ‖m‖∞)` accepted for the density.
    pub density_tol: f64,
    /// Relative residual accepted for each cell problem.
    pub cell_tol: f64,
    /// Bound on `|w Σ Φ_k|` after re-centering.
    pub centering_tol: f64,
    /// Bound on the bordered multiplier `|λ_k|` certifying compatibility.
    pub fredholm_tol: f64,
    pub linear_solver: LinearSolver,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            density_tol: 1e-10,
            cell_tol: 1e-8,
            centering_tol: 1e-9,
            fredholm_tol: 1e-8,
            linear_solver: LinearSolver::Auto,
        }
    }
}

/// Discrete invariant density with solve diagnostics.
#[derive(Debug, Clone)]
pub struct InvariantDensity {
    /// Nodal density values, normalized to `w Σ m = 1`.
    pub density: GridFunction,
    /// `‖Aᵀ m‖∞` after normalization.
    pub residual_inf: f64,
    /// `‖Aᵀ m‖∞ / (‖A‖∞ ‖m‖∞)`.
    pub relative_residual: f64,
    /// Smallest nodal value (theory predicts strict positivity).
    pub min_value: f64,
    pub max_value: f64,
    /// `w Σ m` recomputed after normalization (should be 1 to rounding).
    pub normalization: f64,
    /// Whether the inverse-power fallback produced the result.
    pub used_fallback: bool,
}

/// One cell-problem solve.
#[derive(Debug, Clone)]
pub struct CellSolve {
    /// The mean-zero solution.
    pub solution: GridFunction,
    /// Bordered multiplier; compatible right-hand sides give `≈ 0`.
    pub multiplier: f64,
    /// `‖A Φ − rhs‖∞`.
    pub residual_inf: f64,
    /// Residual relative to `‖rhs‖∞` (absolute when the rhs vanishes).
    pub relative_residual: f64,
    /// `|w Σ Φ|` after re-centering.
    pub centering: f64,
}

/// The vector corrector `Φ = (Φ_1, …, Φ_d)` and its gradient fields.
#[derive(Debug, Clone)]
pub struct Corrector {
    /// `components[k]` solves `A Φ_k = b_k − b̄_k`.
    pub components: Vec<GridFunction>,
    /// `gradients[k][j]` is the centered difference `∂_j Φ_k`.
    pub gradients: Vec<Vec<GridFunction>>,
    pub multipliers: Vec<f64>,
    pub residuals: Vec<f64>,
    pub relative_residuals: Vec<f64>,
    pub centerings: Vec<f64>,
}

/// Effective drift and covariance with their decomposition and PSD
/// certificates.
#[derive(Debug, Clone)]
pub struct EffectiveCoefficients {
    pub b_bar: Vec<f64>,
    /// `C = diffusive_part + switching_part`, symmetrized.
    pub covariance: DMatrix<f64>,
    /// Average of `(I − DΦ) a (I − DΦ)ᵀ` against the density.
    pub diffusive_part: DMatrix<f64>,
    /// Average of the switching carré du champ `𝒬(Φ_k, Φ_l)`.
    pub switching_part: DMatrix<f64>,
    /// Smallest eigenvalue of `C`.
    pub covariance_min_eig: f64,
    /// Smallest eigenvalue of the pointwise integrand over all nodes/modes.
    pub integrand_min_eig: f64,
}

/// Full output of the homogenization pipeline.
#[derive(Debug, Clone)]
pub struct HomogenizeResult {
    pub density: InvariantDensity,
    pub corrector: Corrector,
    pub effective: EffectiveCoefficients,
    /// Discretization warnings inherited from assembly.
    pub warnings: Vec<String>,
}

/// Solve `Aᵀ m = 0`, `w Σ m = 1` for the discrete invariant density.
pub fn solve_invariant_density(
    op: &DiscreteOperator,
    opts: &SolverOptions,
) -> Result<InvariantDensity> {
    let size = op.size();
    let w = op.grid().weight();
    let a_norm = op.matrix().inf_norm();

    // Primary attempt: replace the last adjoint row by the normalization row.
    let mut trips: Vec<(usize, usize, f64)> = op
        .adjoint()
        .iter()
        .filter(|(i, _, _)| *i != size - 1)
        .collect();
    for j in 0..size {
        trips.push((size - 1, j, w));
    }
    let modified = CsrMatrix::from_triplets(size, size, trips);
    let mut rhs = vec![0.0; size];
    rhs[size - 1] = 1.0;

    let attempt =
        factorize(&modified, opts.linear_solver).and_then(|f| f.solve_refined(&modified, &rhs, 1));

    let (mut values, mut used_fallback) = match attempt {
        Ok(v) => {
            let rel = density_relative_residual(op, &v, a_norm);
            if rel.is_finite() && rel <= opts.density_tol {
                (v, false)
            } else {
                (inverse_power_density(op, Some(v), a_norm, opts)?, true)
            }
        }
        Err(_) => (inverse_power_density(op, None, a_norm, opts)?, true),
    };

    // Exact normalization; a negative mass flips the kernel orientation.
    let mass = w * compensated_sum(values.iter().copied());
    let value_scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !mass.is_finite() || mass.abs() < 1e-14 * value_scale.max(1e-300) {
        return Err(Error::Singular {
            context: "invariant density normalization (kernel vector has no mass)".into(),
        });
    }
    for v in &mut values {
        *v /= mass;
    }

    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min_value < -1e-10 * max_value.max(0.0) {
        return Err(Error::DensitySign {
            min: min_value,
            max: max_value,
        });
    }

    let residual = op.adjoint().matvec(&values);
    let residual_inf = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let relative_residual = residual_inf / (a_norm * max_value.abs().max(f64::MIN_POSITIVE));
    if !(relative_residual <= opts.density_tol) {
        // Only reachable when even the fallback's certified result degraded
        // under normalization, which means the kernel is ill-conditioned.
        used_fallback = true;
    }

    let normalization = w * compensated_sum(values.iter().copied());
    let density = GridFunction::from_values(values, op.grid().num_nodes(), op.num_modes())?;
    Ok(InvariantDensity {
        density,
        residual_inf,
        relative_residual,
        min_value,
        max_value,
        normalization,
        used_fallback,
    })
}

fn density_relative_residual(op: &DiscreteOperator, v: &[f64], a_norm: f64) -> f64 {
    let r = op.adjoint().matvec(v);
    let r_inf = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let v_inf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    r_inf / (a_norm * v_inf.max(f64::MIN_POSITIVE))
}

/// Inverse power iteration on `Aᵀ − δI` with `δ = 1e-12 ‖A‖∞`: the kernel
/// direction is the dominant eigenvector of the inverse. Exposed for tests.
pub(crate) fn inverse_power_density(
    op: &DiscreteOperator,
    start: Option<Vec<f64>>,
    a_norm: f64,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let size = op.size();
    let delta = 1e-12 * a_norm;
    let mut trips: Vec<(usize, usize, f64)> = op.adjoint().iter().collect();
    for i in 0..size {
        trips.push((i, i, -delta));
    }
    let shifted = CsrMatrix::from_triplets(size, size, trips);
    let fact = factorize(&shifted, opts.linear_solver)?;

    let mut v = start.unwrap_or_else(|| vec![1.0; size]);
    normalize_inf(&mut v);
    let mut best = v.clone();
    let mut best_rel = f64::INFINITY;
    const MAX_ITERS: usize = 100;
    for iter in 0..MAX_ITERS {
        let mut y = fact.solve(&v)?;
        // Orient toward positive total mass so the density comes out with
        // the right sign when it exists.
        if compensated_sum(y.iter().copied()) < 0.0 {
            for t in &mut y {
                *t = -*t;
            }
        }
        normalize_inf(&mut y);
        v = y;
        let rel = density_relative_residual(op, &v, a_norm);
        if rel < best_rel {
            best_rel = rel;
            best.copy_from_slice(&v);
        }
        if rel <= opts.density_tol {
            return Ok(v);
        }
        // The iteration converges in one or two steps for a simple kernel;
        // give up if many more do not help.
        if iter >= 10 && rel > 1e3 * best_rel {
            break;
        }
    }
    if best_rel <= opts.density_tol {
        Ok(best)
    } else {
        Err(Error::IterationFailure {
            context: "inverse power iteration for the invariant density".into(),
            iterations: MAX_ITERS,
            residual: best_rel,
        })
    }
}

fn normalize_inf(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        for x in v.iter_mut() {
            *x /= scale;
        }
    }
}

/// Effective drift `b̄_k = w Σ_{i,α} b_k(x_i, α) m(x_i, α)`.
pub fn effective_drift(
    model: &SwitchingModel,
    grid: &TorusGrid,
    density: &GridFunction,
) -> Result<Vec<f64>> {
    if model.dim() != grid.dim() {
        return Err(Error::dim(
            "model vs grid dimension",
            grid.dim(),
            model.dim(),
        ));
    }
    if density.num_nodes() != grid.num_nodes() || density.num_modes() != model.num_modes() {
        return Err(Error::size(
            "density",
            grid.num_nodes() * model.num_modes(),
            density.len(),
        ));
    }
    let d = model.dim();
    let m = model.num_modes();
    let mut acc = vec![CompensatedAcc::new(); d];
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        for alpha in 0..m {
            model.eval_drift_into(&x, alpha, &mut b);
            let dens = density.get(node, alpha);
            for k in 0..d {
                acc[k].add(b[k] * dens);
            }
        }
    }
    Ok(acc.iter().map(|a| grid.weight() * a.value()).collect())
}

/// Fredholm pairing `w Σ rhs · m`: the amount by which a right-hand side
/// fails the solvability condition for the cell problem.
pub fn check_solvability(
    grid: &TorusGrid,
    density: &GridFunction,
    rhs: &GridFunction,
) -> Result<f64> {
    if rhs.len() != density.len() {
        return Err(Error::size("solvability operand", density.len(), rhs.len()));
    }
    let mut acc = CompensatedAcc::new();
    for (r, m) in rhs.values().iter().zip(density.values()) {
        acc.add(r * m);
    }
    Ok(grid.weight() * acc.value())
}

/// Bordered matrix `[[A, m], [wᵀ, 0]]` used by the cell-problem solves.
fn bordered_matrix(op: &DiscreteOperator, density: &GridFunction) -> CsrMatrix {
    let size = op.size();
    let w = op.grid().weight();
    let mut trips: Vec<(usize, usize, f64)> = op.matrix().iter().collect();
    trips.reserve(2 * size + 1);
    for (g, &mg) in density.values().iter().enumerate() {
        trips.push((g, size, mg));
    }
    for j in 0..size {
        trips.push((size, j, w));
    }
    trips.push((size, size, 0.0));
    CsrMatrix::from_triplets(size + 1, size + 1, trips)
}

fn solve_bordered(
    op: &DiscreteOperator,
    bordered: &CsrMatrix,
    fact: &Factorization,
    rhs: &GridFunction,
    opts: &SolverOptions,
    component: usize,
) -> Result<CellSolve> {
    let size = op.size();
    let w = op.grid().weight();
    let mut ext = Vec::with_capacity(size + 1);
    ext.extend_from_slice(rhs.values());
    ext.push(0.0);
    let mut sol = fact.solve_refined(bordered, &ext, 1)?;
    let multiplier = sol.pop().expect("bordered solution has size+1 entries");

    let rhs_norm = rhs.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if multiplier.abs() > opts.fredholm_tol * rhs_norm.max(1.0) {
        return Err(Error::FredholmCompatibility {
            component,
            lambda: multiplier,
            threshold: opts.fredholm_tol,
        });
    }

    // Pin the additive constant exactly: subtract the quadrature mean.
    let mean = w * compensated_sum(sol.iter().copied());
    let shift = mean / (w * size as f64);
    for v in &mut sol {
        *v -= shift;
    }
    let centering = (w * compensated_sum(sol.iter().copied())).abs();
    if centering > opts.centering_tol {
        return Err(Error::IterationFailure {
            context: format!("re-centering of cell solution {component}"),
            iterations: 1,
            residual: centering,
        });
    }

    let av = op.matrix().matvec(&sol);
    let residual_inf = av
        .iter()
        .zip(rhs.values())
        .map(|(a, r)| (a - r).abs())
        .fold(0.0f64, f64::max);
    let relative_residual = if rhs_norm > 0.0 {
        residual_inf / rhs_norm
    } else {
        residual_inf
    };
    if relative_residual > opts.cell_tol {
        return Err(Error::IterationFailure {
            context: format!("cell problem {component} residual"),
            iterations: 1,
            residual: relative_residual,
        });
    }

    let solution = GridFunction::from_values(sol, op.grid().num_nodes(), op.num_modes())?;
    Ok(CellSolve {
        solution,
        multiplier,
        residual_inf,
        relative_residual,
        centering,
    })
}

/// Solve one cell problem `A Φ = rhs` with the bordered formulation.
///
/// Rejects right-hand sides that violate the Fredholm condition (multiplier
/// above tolerance); this is the entry point for deliberately uncentered
/// right-hand sides in diagnostics.
pub fn solve_cell_problem(
    op: &DiscreteOperator,
    density: &InvariantDensity,
    rhs: &GridFunction,
    opts: &SolverOptions,
) -> Result<CellSolve> {
    if rhs.len() != op.size() {
        return Err(Error::size("cell problem rhs", op.size(), rhs.len()));
    }
    let bordered = bordered_matrix(op, &density.density);
    let fact = factorize(&bordered, opts.linear_solver)?;
    solve_bordered(op, &bordered, &fact, rhs, opts, 0)
}

/// Solve the `d` corrector problems `A Φ_k = b_k − b̄_k`, sharing one
/// factorization of the bordered matrix.
pub fn solve_corrector(
    model: &SwitchingModel,
    op: &DiscreteOperator,
    density: &InvariantDensity,
    b_bar: &[f64],
    opts: &SolverOptions,
) -> Result<Corrector> {
    if model.dim() != op.grid().dim() {
        return Err(Error::dim(
            "model vs operator dimension",
            op.grid().dim(),
            model.dim(),
        ));
    }
    if b_bar.len() != model.dim() {
        return Err(Error::size("effective drift", model.dim(), b_bar.len()));
    }
    let grid = op.grid().clone();
    let m = model.num_modes();
    let bordered = bordered_matrix(op, &density.density);
    let fact = factorize(&bordered, opts.linear_solver)?;

    let mut components = Vec::with_capacity(model.dim());
    let mut gradients = Vec::with_capacity(model.dim());
    let mut multipliers = Vec::new();
    let mut residuals = Vec::new();
    let mut relative_residuals = Vec::new();
    let mut centerings = Vec::new();

    for k in 0..model.dim() {
        let rhs = GridFunction::tabulate(&grid, m, |x, alpha| {
            model.mode(alpha).drift[k].eval(x) - b_bar[k]
        });
        let cell = solve_bordered(op, &bordered, &fact, &rhs, opts, k)?;
        gradients.push(centered_gradient(&grid, &cell.solution));
        components.push(cell.solution);
        multipliers.push(cell.multiplier);
        residuals.push(cell.residual_inf);
        relative_residuals.push(cell.relative_residual);
        centerings.push(cell.centering);
    }

    Ok(Corrector {
        components,
        gradients,
        multipliers,
        residuals,
        relative_residuals,
        centerings,
    })
}

/// Average the corrected diffusion and switching integrands against the
/// density to produce the effective covariance and its decomposition.
pub fn effective_covariance(
    model: &SwitchingModel,
    grid: &TorusGrid,
    density: &InvariantDensity,
    corrector: &Corrector,
    b_bar: &[f64],
) -> Result<EffectiveCoefficients> {
    let d = model.dim();
    let m = model.num_modes();
    if corrector.components.len() != d {
        return Err(Error::size(
            "corrector components",
            d,
            corrector.components.len(),
        ));
    }
    let w = grid.weight();

    let mut diff_acc = vec![CompensatedAcc::new(); d * d];
    let mut sw_acc = vec![CompensatedAcc::new(); d * d];
    let mut integrand_min_eig = f64::INFINITY;

    let mut x = vec![0.0; d];
    let mut point = DMatrix::<f64>::zeros(d, d);
    let mut g_mat = DMatrix::<f64>::zeros(d, d);

    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        for alpha in 0..m {
            let dens = density.density.get(node, alpha);
            let a = model.diffusion_matrix(&x, alpha);

            // G = I − DΦ at this state.
            for k in 0..d {
                for j in 0..d {
                    let dkj = corrector.gradients[k][j].get(node, alpha);
                    g_mat[(k, j)] = if k == j { 1.0 - dkj } else { -dkj };
                }
            }
            let diff = &g_mat * &a * g_mat.transpose();

            // Switching part: Σ_β q_αβ ΔΦ_k ΔΦ_l.
            point.fill(0.0);
            for beta in 0..m {
                if beta == alpha {
                    continue;
                }
                if let Some(field) = model.intensity(alpha, beta) {
                    let q = field.eval(&x);
                    if q == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        let dk = corrector.components[k].get(node, beta)
                            - corrector.components[k].get(node, alpha);
                        for l in 0..d {
                            let dl = corrector.components[l].get(node, beta)
                                - corrector.components[l].get(node, alpha);
                            point[(k, l)] += q * dk * dl;
                        }
                    }
                }
            }

            for k in 0..d {
                for l in 0..d {
                    diff_acc[k * d + l].add(diff[(k, l)] * dens);
                    sw_acc[k * d + l].add(point[(k, l)] * dens);
                }
            }

            point += &diff;
            integrand_min_eig = integrand_min_eig.min(sym_min_eig(&point));
        }
    }

    let mut diffusive_part = DMatrix::<f64>::zeros(d, d);
    let mut switching_part = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            diffusive_part[(k, l)] = w * diff_acc[k * d + l].value();
            switching_part[(k, l)] = w * sw_acc[k * d + l].value();
        }
    }
    // Enforce exact symmetry (accumulation order differs across (k,l)/(l,k)).
    let diffusive_part = 0.5 * (&diffusive_part + diffusive_part.transpose());
    let switching_part = 0.5 * (&switching_part + switching_part.transpose());
    let covariance = &diffusive_part + &switching_part;
    let covariance_min_eig = sym_min_eig(&covariance);

    Ok(EffectiveCoefficients {
        b_bar: b_bar.to_vec(),
        covariance,
        diffusive_part,
        switching_part,
        covariance_min_eig,
        integrand_min_eig,
    })
}

/// Run the whole pipeline: assemble, invariant density, effective drift,
/// corrector, covariance.
pub fn homogenize(
    model: &SwitchingModel,
    grid: &TorusGrid,
    opts: &SolverOptions,
) -> Result<HomogenizeResult> {
    let op = assemble_generator(model, grid)?;
    let density = solve_invariant_density(&op, opts)?;
    let b_bar = effective_drift(model, grid, &density.density)?;
    let corrector = solve_corrector(model, &op, &density, &b_bar, opts)?;
    let effective = effective_covariance(model, grid, &density, &corrector, &b_bar)?;
    Ok(HomogenizeResult {
        density,
        corrector,
        effective,
        warnings: op.warnings().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FieldSpec, ModeCoefficients};
    use approx::assert_relative_eq;

    fn telegraph(q: f64, sigma2: f64, speed: f64) -> SwitchingModel {
        SwitchingModel::new(
            1,
            1,
            vec![
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(speed)],
                    sigma: vec![FieldSpec::uniform(sigma2.sqrt())],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(-speed)],
                    sigma: vec![FieldSpec::uniform(sigma2.sqrt())],
                },
            ],
            vec![(0, 1, FieldSpec::uniform(q)), (1, 0, FieldSpec::uniform(q))],
        )
        .unwrap()
    }

    /// d = 1 model with a(x) = 2 + sin(2πx), written as a sum of two squares
    /// (a 1×2 diffusion coefficient), zero drift, one mode. The effective
    /// diffusivity is the harmonic mean 1/∫(1/a) = √3 and the invariant
    /// density is proportional to 1/a.
    fn harmonic_mean_model() -> SwitchingModel {
        let r0 = (1.0 + 3.0f64.sqrt()) / 2.0;
        let r1 = (3.0f64.sqrt() - 1.0) / 2.0;
        SwitchingModel::new(
            1,
            2,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::uniform(0.0)],
                sigma: vec![
                    FieldSpec::with_term(r0, vec![1], 0.0, r1),
                    FieldSpec::with_term(0.0, vec![1], -r1, 0.0),
                ],
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn constant_single_mode_reproduces_its_coefficients() {
        let model = SwitchingModel::new(
            1,
            1,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::uniform(0.5)],
                sigma: vec![FieldSpec::uniform(1.1)],
            }],
            vec![],
        )
        .unwrap();
        let grid = TorusGrid::new(&[16]).unwrap();
        let result = homogenize(&model, &grid, &SolverOptions::default()).unwrap();
        for node in 0..16 {
            assert_relative_eq!(result.density.density.get(node, 0), 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(result.effective.b_bar[0], 0.5, epsilon = 1e-12);
        assert!(result.corrector.components[0].max_abs() <= 1e-10);
        assert_relative_eq!(
            result.effective.covariance[(0, 0)],
            1.1 * 1.1,
            epsilon = 1e-12
        );
        assert!(!result.density.used_fallback);
    }

    #[test]
    fn symmetric_two_mode_density_is_uniform_half() {
        let model = telegraph(1.0, 0.1, 1.0);
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let density = solve_invariant_density(&op, &SolverOptions::default()).unwrap();
        for node in 0..16 {
            for alpha in 0..2 {
                assert_relative_eq!(density.density.get(node, alpha), 0.5, epsilon = 1e-12);
            }
        }
        assert_relative_eq!(density.normalization, 1.0, epsilon = 1e-12);
        assert!(density.min_value > 0.0);
    }

    #[test]
    fn telegraph_corrector_and_covariance_match_closed_form() {
        // ℒΦ = ±1 with switching rate q has Φ(·, 0) = -1/(2q), Φ(·, 1) = +1/(2q);
        // C = σ² + speed²/q = 0.1 + 1.0.
        let model = telegraph(1.0, 0.1, 1.0);
        let grid = TorusGrid::new(&[16]).unwrap();
        let result = homogenize(&model, &grid, &SolverOptions::default()).unwrap();
        assert_relative_eq!(result.effective.b_bar[0], 0.0, epsilon = 1e-12);
        for node in 0..16 {
            assert_relative_eq!(
                result.corrector.components[0].get(node, 0),
                -0.5,
                epsilon = 1e-8
            );
            assert_relative_eq!(
                result.corrector.components[0].get(node, 1),
                0.5,
                epsilon = 1e-8
            );
        }
        assert_relative_eq!(result.effective.diffusive_part[(0, 0)], 0.1, epsilon = 1e-8);
        assert_relative_eq!(result.effective.switching_part[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(result.effective.covariance[(0, 0)], 1.1, epsilon = 1e-8);
        assert!(result.corrector.multipliers[0].abs() <= 1e-10);
        assert!(result.effective.covariance_min_eig > 0.0);
        assert!(result.effective.integrand_min_eig >= -1e-10);
    }

    #[test]
    fn harmonic_mean_model_recovers_reciprocal_density_and_sqrt3() {
        let model = harmonic_mean_model();
        let grid = TorusGrid::new(&[64]).unwrap();
        let result = homogenize(&model, &grid, &SolverOptions::default()).unwrap();
        let sqrt3 = 3.0f64.sqrt();
        // m(x) = √3 / a(x) nodally (the discrete kernel is exactly c/a).
        for node in 0..64 {
            let x = grid.node_coords(node);
            let a = 2.0 + (std::f64::consts::TAU * x[0]).sin();
            assert_relative_eq!(
                result.density.density.get(node, 0),
                sqrt3 / a,
                epsilon = 1e-9
            );
        }
        assert_relative_eq!(result.effective.b_bar[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(result.effective.covariance[(0, 0)], sqrt3, epsilon = 1e-12);
        // Zero drift means a vanishing corrector: all of C is diffusive.
        assert!(result.corrector.components[0].max_abs() <= 1e-10);
        assert_relative_eq!(
            result.effective.switching_part[(0, 0)],
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn effective_drift_is_grid_converged_for_smooth_models() {
        // b(x) = sin(2πx), σ = 1: no closed form needed, two resolutions
        // of the same average must agree closely.
        let model = SwitchingModel::new(
            1,
            1,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::with_term(0.0, vec![1], 0.0, 1.0)],
                sigma: vec![FieldSpec::uniform(1.0)],
            }],
            vec![],
        )
        .unwrap();
        let opts = SolverOptions::default();
        let mut values = Vec::new();
        for n in [128usize, 256] {
            let grid = TorusGrid::new(&[n]).unwrap();
            let op = assemble_generator(&model, &grid).unwrap();
            let density = solve_invariant_density(&op, &opts).unwrap();
            let b_bar = effective_drift(&model, &grid, &density.density).unwrap();
            values.push(b_bar[0]);
        }
        assert!(
            (values[0] - values[1]).abs() <= 1e-4,
            "drift at 128 vs 256: {} vs {}",
            values[0],
            values[1]
        );
    }

    #[test]
    fn solvability_pairing_matches_normalization() {
        let model = telegraph(1.0, 0.1, 1.0);
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let density = solve_invariant_density(&op, &SolverOptions::default()).unwrap();
        // rhs ≡ 1 pairs to exactly the normalization.
        let ones = GridFunction::from_fn(&grid, 2, |_, _| 1.0);
        let defect = check_solvability(&grid, &density.density, &ones).unwrap();
        assert_relative_eq!(defect, 1.0, epsilon = 1e-12);
        // A centered rhs pairs to ~0.
        let b_bar = effective_drift(&model, &grid, &density.density).unwrap();
        let centered = GridFunction::tabulate(&grid, 2, |x, alpha| {
            model.mode(alpha).drift[0].eval(x) - b_bar[0]
        });
        let defect = check_solvability(&grid, &density.density, &centered).unwrap();
        assert!(defect.abs() <= 1e-12);
    }

    #[test]
    fn uncentered_rhs_is_rejected_with_fredholm_error() {
        // Nonzero effective drift makes the raw drift incompatible.
        let model = SwitchingModel::new(
            1,
            1,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::uniform(0.5)],
                sigma: vec![FieldSpec::uniform(1.0)],
            }],
            vec![],
        )
        .unwrap();
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let opts = SolverOptions::default();
        let density = solve_invariant_density(&op, &opts).unwrap();
        let raw = GridFunction::tabulate(&grid, 1, |x, _| model.mode(0).drift[0].eval(x));
        let err = solve_cell_problem(&op, &density, &raw, &opts).unwrap_err();
        match err {
            Error::FredholmCompatibility { lambda, .. } => {
                assert_relative_eq!(lambda, 0.5, epsilon = 1e-10);
            }
            other => panic!("expected Fredholm error, got {other:?}"),
        }
    }

    #[test]
    fn inverse_power_fallback_finds_the_kernel() {
        let model = telegraph(1.0, 0.1, 1.0);
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let opts = SolverOptions::default();
        let a_norm = op.matrix().inf_norm();
        // Start far from the kernel to exercise the iteration.
        let start: Vec<f64> = (0..op.size()).map(|i| (i as f64 * 0.7).sin()).collect();
        let v = inverse_power_density(&op, Some(start), a_norm, &opts).unwrap();
        // Kernel of the adjoint is uniform for this model.
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for vi in &v {
            assert_relative_eq!(*vi, mean, epsilon = 1e-9 * mean.abs());
        }
    }

    #[test]
    fn gmres_backend_reproduces_direct_results() {
        let model = telegraph(1.0, 0.1, 1.0);
        let grid = TorusGrid::new(&[32]).unwrap();
        let direct = homogenize(
            &model,
            &grid,
            &SolverOptions {
                linear_solver: LinearSolver::Direct,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        let gmres = homogenize(
            &model,
            &grid,
            &SolverOptions {
                linear_solver: LinearSolver::Gmres,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(
            direct.effective.covariance[(0, 0)],
            gmres.effective.covariance[(0, 0)],
            epsilon = 1e-9
        );
    }
}
