//! Sparse linear solvers for the discrete cell problems.
//!
//! Two interchangeable backends sit behind [`Factorization`]:
//!
//! * a direct sparse LU (the `faer` implementation), the default for the
//!   moderate sizes produced by cell problems;
//! * restarted GMRES with an ILU(0) preconditioner for systems too large to
//!   factorize comfortably.
//!
//! [`LinearSolver::Auto`] switches between them on problem size. Both paths
//! are deterministic: the direct factorization is single-valued and GMRES
//! runs serially with a fixed iteration order, so repeated solves of the same
//! system return bit-identical vectors.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::operators::CsrMatrix;

/// Backend selection for sparse solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Direct below [`AUTO_DIRECT_LIMIT`] unknowns, iterative above.
    #[default]
    Auto,
    /// Sparse LU, always.
    Direct,
    /// ILU(0)-preconditioned restarted GMRES, always.
    Gmres,
}

/// Size threshold at which [`LinearSolver::Auto`] stops factorizing.
pub const AUTO_DIRECT_LIMIT: usize = 200_000;

/// GMRES iteration parameters.
#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    /// Krylov subspace dimension per restart cycle.
    pub restart: usize,
    /// Cap on the total number of preconditioned matrix applications.
    pub max_iters: usize,
    /// Convergence threshold on the relative residual `‖b − Ax‖ / ‖b‖`.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 60,
            max_iters: 20_000,
            tol: 1e-12,
        }
    }
}

enum Backend {
    Direct(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Gmres {
        matrix: CsrMatrix,
        precond: Ilu0,
        opts: GmresOptions,
    },
}

/// A prepared solver for one square sparse matrix.
pub struct Factorization {
    backend: Backend,
    size: usize,
}

/// Prepare a solver for `a` according to `choice`.
pub fn factorize(a: &CsrMatrix, choice: LinearSolver) -> Result<Factorization> {
    if a.nrows() != a.ncols() {
        return Err(Error::size("square matrix", a.nrows(), a.ncols()));
    }
    let use_direct = match choice {
        LinearSolver::Direct => true,
        LinearSolver::Gmres => false,
        LinearSolver::Auto => a.nrows() <= AUTO_DIRECT_LIMIT,
    };
    let backend = if use_direct {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            a.iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let mat =
            SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows(), a.ncols(), &triplets)
                .map_err(|_| Error::Singular {
                    context: "sparse matrix construction".into(),
                })?;
        let lu = mat.sp_lu().map_err(|_| Error::Singular {
            context: "sparse LU factorization".into(),
        })?;
        Backend::Direct(lu)
    } else {
        Backend::Gmres {
            matrix: a.clone(),
            precond: Ilu0::factor(a)?,
            opts: GmresOptions::default(),
        }
    };
    Ok(Factorization {
        backend,
        size: a.nrows(),
    })
}

impl Factorization {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.size {
            return Err(Error::size("right-hand side", self.size, rhs.len()));
        }
        let x = match &self.backend {
            Backend::Direct(lu) => {
                let b = faer::Mat::from_fn(self.size, 1, |i, _| rhs[i]);
                let sol = lu.solve(&b);
                (0..self.size).map(|i| sol[(i, 0)]).collect::<Vec<f64>>()
            }
            Backend::Gmres {
                matrix,
                precond,
                opts,
            } => gmres(matrix, precond, rhs, *opts)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular {
                context: "sparse solve (non-finite solution)".into(),
            });
        }
        Ok(x)
    }

    /// Solve with a few steps of iterative refinement against the exact
    /// matrix, tightening the residual toward machine precision.
    pub fn solve_refined(&self, a: &CsrMatrix, rhs: &[f64], steps: usize) -> Result<Vec<f64>> {
        let mut x = self.solve(rhs)?;
        let mut residual = vec![0.0; self.size];
        for _ in 0..steps {
            a.matvec_into(&x, &mut residual);
            for i in 0..self.size {
                residual[i] = rhs[i] - residual[i];
            }
            let correction = self.solve(&residual)?;
            for i in 0..self.size {
                x[i] += correction[i];
            }
        }
        Ok(x)
    }
}

/// Convenience one-shot solve.
pub fn solve(a: &CsrMatrix, rhs: &[f64], choice: LinearSolver) -> Result<Vec<f64>> {
    factorize(a, choice)?.solve(rhs)
}

// ---------------------------------------------------------------------------
// ILU(0)
// ---------------------------------------------------------------------------

/// Incomplete LU factorization on the sparsity pattern of the input matrix.
/// `L` has unit diagonal and shares the strictly-lower pattern; `U` holds the
/// diagonal and strictly-upper pattern. Zero pivots are replaced by a small
/// multiple of the matrix norm — the result is only a preconditioner, so
/// nonsingularity matters more than accuracy there.
struct Ilu0 {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn factor(a: &CsrMatrix) -> Result<Ilu0> {
        let n = a.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(a.nnz());
        let mut values = Vec::with_capacity(a.nnz());
        indptr.push(0);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            // Pattern must include the diagonal for the pivoting below.
            if !cols.contains(&i) {
                let pos = cols.partition_point(|&c| c < i);
                indices.extend_from_slice(&cols[..pos]);
                indices.push(i);
                indices.extend_from_slice(&cols[pos..]);
                values.extend_from_slice(&vals[..pos]);
                values.push(0.0);
                values.extend_from_slice(&vals[pos..]);
            } else {
                indices.extend_from_slice(cols);
                values.extend_from_slice(vals);
            }
            indptr.push(indices.len());
        }
        let mut diag = vec![0usize; n];
        for i in 0..n {
            diag[i] = indptr[i]
                + indices[indptr[i]..indptr[i + 1]]
                    .iter()
                    .position(|&c| c == i)
                    .expect("diagonal inserted above");
        }

        let pivot_floor = 1e-12 * a.inf_norm().max(1.0);
        for i in 0..n {
            let row_start = indptr[i];
            let row_end = indptr[i + 1];
            let mut idx = row_start;
            // Eliminate columns k < i in ascending order.
            while idx < row_end && indices[idx] < i {
                let k = indices[idx];
                let mut ukk = values[diag[k]];
                if ukk == 0.0 {
                    ukk = pivot_floor;
                }
                let lik = values[idx] / ukk;
                values[idx] = lik;
                // Subtract lik * U(k, j) for j > k wherever row i has pattern.
                let mut p = diag[k] + 1;
                let mut q = idx + 1;
                while p < indptr[k + 1] && q < row_end {
                    let ck = indices[p];
                    let ci = indices[q];
                    if ck == ci {
                        values[q] -= lik * values[p];
                        p += 1;
                        q += 1;
                    } else if ck < ci {
                        p += 1;
                    } else {
                        q += 1;
                    }
                }
                idx += 1;
            }
        }
        Ok(Ilu0 {
            indptr,
            indices,
            values,
            diag,
        })
    }

    /// Apply `M⁻¹` (forward substitution with unit-L, then back substitution
    /// with U).
    fn apply_into(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.diag.len();
        out.copy_from_slice(rhs);
        for i in 0..n {
            let mut s = out[i];
            for idx in self.indptr[i]..self.diag[i] {
                s -= self.values[idx] * out[self.indices[idx]];
            }
            out[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = out[i];
            for idx in (self.diag[i] + 1)..self.indptr[i + 1] {
                s -= self.values[idx] * out[self.indices[idx]];
            }
            let mut ukk = self.values[self.diag[i]];
            if ukk == 0.0 {
                ukk = 1.0;
            }
            out[i] = s / ukk;
        }
    }
}

// ---------------------------------------------------------------------------
// GMRES
// ---------------------------------------------------------------------------

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Right-preconditioned restarted GMRES. Returns the solution or an
/// iteration-failure error carrying the best residual reached.
fn gmres(a: &CsrMatrix, precond: &Ilu0, b: &[f64], opts: GmresOptions) -> Result<Vec<f64>> {
    let n = a.nrows();
    let m = opts.restart.max(1);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let target = opts.tol * b_norm;

    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut total_iters = 0usize;
    let mut best_residual = f64::INFINITY;

    // Krylov basis and Hessenberg factors, reused across restarts.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut hess = vec![0.0; (m + 1) * m]; // column-major: h(i, j) = hess[j*(m+1)+i]
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];

    'restart: loop {
        a.matvec_into(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        best_residual = best_residual.min(beta);
        if beta <= target {
            return Ok(x);
        }
        if total_iters >= opts.max_iters {
            break 'restart;
        }

        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;

        let mut j_used = 0;
        for j in 0..m {
            total_iters += 1;
            // w = A M⁻¹ v_j
            precond.apply_into(&basis[j], &mut z);
            a.matvec_into(&z, &mut w);
            // Modified Gram-Schmidt.
            for i in 0..=j {
                let hij: f64 = w.iter().zip(&basis[i]).map(|(a, b)| a * b).sum();
                hess[j * (m + 1) + i] = hij;
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * vk;
                }
            }
            let hjj = norm2(&w);
            hess[j * (m + 1) + j + 1] = hjj;

            // Apply accumulated Givens rotations to the new column.
            for i in 0..j {
                let h0 = hess[j * (m + 1) + i];
                let h1 = hess[j * (m + 1) + i + 1];
                hess[j * (m + 1) + i] = cs[i] * h0 + sn[i] * h1;
                hess[j * (m + 1) + i + 1] = -sn[i] * h0 + cs[i] * h1;
            }
            let h0 = hess[j * (m + 1) + j];
            let h1 = hess[j * (m + 1) + j + 1];
            let denom = (h0 * h0 + h1 * h1).sqrt();
            if denom == 0.0 {
                // Exact breakdown: the Krylov space is invariant.
                j_used = j + 1;
                break;
            }
            cs[j] = h0 / denom;
            sn[j] = h1 / denom;
            hess[j * (m + 1) + j] = denom;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            j_used = j + 1;

            let res = g[j + 1].abs();
            best_residual = best_residual.min(res);
            if res <= target || hjj == 0.0 || total_iters >= opts.max_iters {
                break;
            }
            for v in &mut w {
                *v /= hjj;
            }
            basis.push(w.clone());
        }

        // Back-substitution for the least-squares coefficients.
        let mut y = vec![0.0; j_used];
        for i in (0..j_used).rev() {
            let mut s = g[i];
            for k in (i + 1)..j_used {
                s -= hess[k * (m + 1) + i] * y[k];
            }
            y[i] = s / hess[i * (m + 1) + i];
        }
        // x += M⁻¹ (V y)
        let mut vy = vec![0.0; n];
        for (k, yk) in y.iter().enumerate() {
            for (t, vt) in vy.iter_mut().zip(&basis[k]) {
                *t += yk * vt;
            }
        }
        precond.apply_into(&vy, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
    }

    // Final residual check after exhausting the budget.
    a.matvec_into(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let res = norm2(&r);
    if res <= target {
        Ok(x)
    } else {
        Err(Error::IterationFailure {
            context: "GMRES".into(),
            iterations: total_iters,
            residual: res / b_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::model::{FieldSpec, ModeCoefficients, SwitchingModel};
    use crate::operators::assemble_generator;
    use approx::assert_relative_eq;

    fn small_system() -> (CsrMatrix, Vec<f64>, Vec<f64>) {
        // [[2,1,0],[0,3,1],[1,0,4]] x = [4,7,9] has solution x = (29,42,49)/25.
        let a = CsrMatrix::from_triplets(
            3,
            3,
            vec![
                (0, 0, 2.0),
                (0, 1, 1.0),
                (1, 1, 3.0),
                (1, 2, 1.0),
                (2, 0, 1.0),
                (2, 2, 4.0),
            ],
        );
        let rhs = vec![4.0, 7.0, 9.0];
        let expect = vec![29.0 / 25.0, 42.0 / 25.0, 49.0 / 25.0];
        (a, rhs, expect)
    }

    #[test]
    fn direct_solves_small_system() {
        let (a, rhs, expect) = small_system();
        let x = solve(&a, &rhs, LinearSolver::Direct).unwrap();
        for (xi, ei) in x.iter().zip(&expect) {
            assert_relative_eq!(xi, ei, epsilon = 1e-14);
        }
    }

    #[test]
    fn gmres_solves_small_system() {
        let (a, rhs, expect) = small_system();
        let x = solve(&a, &rhs, LinearSolver::Gmres).unwrap();
        for (xi, ei) in x.iter().zip(&expect) {
            assert_relative_eq!(xi, ei, epsilon = 1e-10);
        }
    }

    /// A nonsingular shift of an assembled generator, as a realistic pattern.
    fn shifted_generator() -> (CsrMatrix, Vec<f64>) {
        let model = SwitchingModel::new(
            1,
            1,
            vec![
                ModeCoefficients {
                    drift: vec![FieldSpec::with_term(0.5, vec![1], 0.0, 0.3)],
                    sigma: vec![FieldSpec::with_term(1.0, vec![1], 0.2, 0.0)],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(-0.5)],
                    sigma: vec![FieldSpec::uniform(0.9)],
                },
            ],
            vec![
                (0, 1, FieldSpec::uniform(1.0)),
                (1, 0, FieldSpec::with_term(1.5, vec![1], 0.0, 0.5)),
            ],
        )
        .unwrap();
        let grid = TorusGrid::new(&[64]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let mut trips: Vec<(usize, usize, f64)> = op.matrix().iter().collect();
        for i in 0..op.size() {
            trips.push((i, i, -1.0)); // A - I is safely nonsingular
        }
        let a = CsrMatrix::from_triplets(op.size(), op.size(), trips);
        let rhs: Vec<f64> = (0..op.size()).map(|i| ((i as f64) * 0.37).sin()).collect();
        (a, rhs)
    }

    #[test]
    fn gmres_agrees_with_direct_on_generator_pattern() {
        let (a, rhs) = shifted_generator();
        let xd = solve(&a, &rhs, LinearSolver::Direct).unwrap();
        let xg = solve(&a, &rhs, LinearSolver::Gmres).unwrap();
        let scale = xd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (d, g) in xd.iter().zip(&xg) {
            assert!((d - g).abs() <= 1e-9 * scale, "direct {d} vs gmres {g}");
        }
    }

    #[test]
    fn refinement_tightens_the_residual() {
        let (a, rhs) = shifted_generator();
        let f = factorize(&a, LinearSolver::Direct).unwrap();
        let x = f.solve_refined(&a, &rhs, 2).unwrap();
        let mut r = vec![0.0; rhs.len()];
        a.matvec_into(&x, &mut r);
        let resid = r
            .iter()
            .zip(&rhs)
            .map(|(ax, b)| (ax - b).abs())
            .fold(0.0f64, f64::max);
        assert!(resid <= 1e-12 * a.inf_norm());
    }

    #[test]
    fn auto_uses_direct_for_small_problems() {
        let (a, rhs, expect) = small_system();
        let f = factorize(&a, LinearSolver::Auto).unwrap();
        let x = f.solve(&rhs).unwrap();
        assert_relative_eq!(x[0], expect[0], epsilon = 1e-14);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let (a, rhs) = shifted_generator();
        for choice in [LinearSolver::Direct, LinearSolver::Gmres] {
            let x1 = solve(&a, &rhs, choice).unwrap();
            let x2 = solve(&a, &rhs, choice).unwrap();
            assert_eq!(x1, x2);
        }
    }
}
