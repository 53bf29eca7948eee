//! Finite-difference discretization of the switching-diffusion generator
//!
//! ```text
//! (ℒf)(x, α) = Σ_j b_j(x, α) ∂_j f(x, α)
//!            + ½ Σ_{j,k} a_{jk}(x, α) ∂²_{jk} f(x, α)
//!            + Σ_{β≠α} q_{αβ}(x) [f(x, β) − f(x, α)]
//! ```
//!
//! on a periodic tensor grid. First derivatives use centered differences,
//! second derivatives the standard three-point stencil, and mixed derivatives
//! the four-point cross stencil
//! `(f_{++} + f_{--} - f_{+-} - f_{-+}) / (4 h_j h_k)`, all wrapping
//! periodically. The switching part couples the `m` mode values at a node
//! through the exact intensity matrix `Q(x_i)`, so every row of the assembled
//! matrix sums to zero up to rounding and constants are annihilated.
//!
//! The discrete adjoint is *defined* as the matrix transpose: the discrete
//! duality `⟨Aᵀv, u⟩ = ⟨v, Au⟩` then holds exactly, which is what the
//! invariant-density solver in [`crate::homogenize`] relies on.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::model::{sym_min_eig, SwitchingModel};

/// Compressed sparse row matrix with `f64` entries.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            debug_assert!(r < nrows && c < ncols);
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            y[i] = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Transpose via counting sort; entry order within a row is by column.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut indptr = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let slot = indptr[*c];
                indices[slot] = i;
                values[slot] = *v;
                indptr[*c] += 1;
            }
        }
        // indptr was advanced while scattering; shift it back.
        let mut shifted = vec![0usize; self.ncols + 1];
        shifted[1..].copy_from_slice(&indptr[..self.ncols]);
        shifted[0] = 0;
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: shifted,
            indices,
            values,
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Iterate over stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(c, v)| (i, *c, *v))
        })
    }

    /// Write the coordinate text format: one `row col value` line per stored
    /// entry, preceded by `#` metadata lines and a size header.
    pub fn write_coo<W: Write>(&self, mut w: W, metadata: &[(&str, String)]) -> Result<()> {
        for (key, value) in metadata {
            writeln!(w, "# {key}={value}")?;
        }
        writeln!(
            w,
            "# rows={} cols={} nnz={}",
            self.nrows,
            self.ncols,
            self.nnz()
        )?;
        for (i, j, v) in self.iter() {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }
}

/// The assembled generator of a model on a grid, together with its exact
/// transpose and any discretization-quality warnings.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    matrix: CsrMatrix,
    adjoint: CsrMatrix,
    grid: TorusGrid,
    num_modes: usize,
    warnings: Vec<String>,
}

impl DiscreteOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// The discrete adjoint `Aᵀ` (cached transpose of [`Self::matrix`]).
    pub fn adjoint(&self) -> &CsrMatrix {
        &self.adjoint
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    /// Number of unknowns, `num_nodes * num_modes`.
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Non-fatal discretization warnings (cell Péclet, anisotropy).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Apply the discrete generator: `(Af)` as a grid function.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check_operand(f)?;
        let out = self.matrix.matvec(f.values());
        GridFunction::from_values(out, self.grid.num_nodes(), self.num_modes)
    }

    /// Apply the discrete adjoint: `(Aᵀv)` as a grid function.
    pub fn apply_adjoint(&self, v: &GridFunction) -> Result<GridFunction> {
        self.check_operand(v)?;
        let out = self.adjoint.matvec(v.values());
        GridFunction::from_values(out, self.grid.num_nodes(), self.num_modes)
    }

    fn check_operand(&self, f: &GridFunction) -> Result<()> {
        if f.len() != self.size() || f.num_modes() != self.num_modes {
            return Err(Error::size("operator operand", self.size(), f.len()));
        }
        Ok(())
    }
}

/// Assemble the discrete generator of `model` on `grid`.
///
/// Entries are produced in a fixed deterministic order, so repeated assembly
/// is bit-identical. Fails if the model and grid dimensions differ.
pub fn assemble_generator(model: &SwitchingModel, grid: &TorusGrid) -> Result<DiscreteOperator> {
    if model.dim() != grid.dim() {
        return Err(Error::dim(
            "model vs grid dimension",
            grid.dim(),
            model.dim(),
        ));
    }
    let d = grid.dim();
    let m = model.num_modes();
    let n_nodes = grid.num_nodes();
    let size = n_nodes * m;
    let h = grid.spacing().to_vec();

    let per_row = 1 + 4 * d + 2 * d * d.saturating_sub(1) + m.saturating_sub(1);
    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(size * per_row);

    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];

    // Discretization-quality tracking.
    let mut max_drift_step: f64 = 0.0; // max_j |b_j| h_j
    let mut a_min_eig = f64::INFINITY;
    let mut dominance_ok = true;

    for node in 0..n_nodes {
        grid.node_coords_into(node, &mut x);
        for alpha in 0..m {
            let row = node * m + alpha;
            let mut diag = 0.0;

            model.eval_drift_into(&x, alpha, &mut b);
            let a = model.diffusion_matrix(&x, alpha);
            a_min_eig = a_min_eig.min(sym_min_eig(&a));

            for j in 0..d {
                let plus = grid.neighbor(node, j, 1) * m + alpha;
                let minus = grid.neighbor(node, j, -1) * m + alpha;

                // b_j ∂_j: centered difference.
                let cb = b[j] / (2.0 * h[j]);
                if cb != 0.0 {
                    trips.push((row, plus, cb));
                    trips.push((row, minus, -cb));
                }
                max_drift_step = max_drift_step.max(b[j].abs() * h[j]);

                // ½ a_jj ∂²_jj: three-point stencil.
                let cd = a[(j, j)] / (2.0 * h[j] * h[j]);
                if cd != 0.0 {
                    trips.push((row, plus, cd));
                    trips.push((row, minus, cd));
                    diag -= 2.0 * cd;
                }

                // Diagonal dominance of the second-order part; violations
                // mean the cross stencil can produce off-sign entries.
                let mut cross_mass = 0.0;
                for k in 0..d {
                    if k != j {
                        cross_mass += a[(j, k)].abs() / (h[j] * h[k]);
                    }
                }
                if a[(j, j)] / (h[j] * h[j]) + 1e-14 < cross_mass {
                    dominance_ok = false;
                }
            }

            // a_jk ∂²_jk for j < k: four-point cross stencil.
            for j in 0..d {
                for k in (j + 1)..d {
                    let ajk = a[(j, k)];
                    if ajk == 0.0 {
                        continue;
                    }
                    let c = ajk / (4.0 * h[j] * h[k]);
                    let pp = grid.neighbor(grid.neighbor(node, j, 1), k, 1) * m + alpha;
                    let mm = grid.neighbor(grid.neighbor(node, j, -1), k, -1) * m + alpha;
                    let pm = grid.neighbor(grid.neighbor(node, j, 1), k, -1) * m + alpha;
                    let mp = grid.neighbor(grid.neighbor(node, j, -1), k, 1) * m + alpha;
                    trips.push((row, pp, c));
                    trips.push((row, mm, c));
                    trips.push((row, pm, -c));
                    trips.push((row, mp, -c));
                }
            }

            // Switching block: the exact Q(x_i) couples modes at this node.
            for beta in 0..m {
                if beta == alpha {
                    continue;
                }
                let q = model.eval_intensity(&x, alpha, beta);
                if q != 0.0 {
                    trips.push((row, node * m + beta, q));
                }
                diag -= q;
            }

            trips.push((row, row, diag));
        }
    }

    let matrix = CsrMatrix::from_triplets(size, size, trips);
    let adjoint = matrix.transpose();

    let mut warnings = Vec::new();
    if a_min_eig > 0.0 {
        let peclet = max_drift_step / a_min_eig;
        if peclet > 2.0 {
            warnings.push(format!(
                "cell Péclet number {peclet:.2} exceeds 2: centered convection may lose \
                 positivity; consider refining the grid"
            ));
        }
    }
    if !dominance_ok {
        warnings.push(
            "strongly anisotropic diffusion: the cross-derivative stencil violates diagonal \
             dominance at some nodes, so stencil positivity is not guaranteed"
                .to_string(),
        );
    }

    Ok(DiscreteOperator {
        matrix,
        adjoint,
        grid: grid.clone(),
        num_modes: m,
        warnings,
    })
}

/// Centered-difference gradient of a grid function: one grid function per
/// axis, `(∂_j f)(x_i, α) ≈ [f(x_{i+e_j}, α) − f(x_{i−e_j}, α)] / (2 h_j)`,
/// wrapping periodically. Second-order accurate for smooth periodic data.
pub fn centered_gradient(grid: &TorusGrid, f: &GridFunction) -> Vec<GridFunction> {
    assert_eq!(f.num_nodes(), grid.num_nodes());
    let m = f.num_modes();
    let d = grid.dim();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let inv2h = 1.0 / (2.0 * grid.spacing()[j]);
        let mut g = GridFunction::zeros(grid, m);
        for node in 0..grid.num_nodes() {
            let plus = grid.neighbor(node, j, 1);
            let minus = grid.neighbor(node, j, -1);
            for mode in 0..m {
                g.set(node, mode, (f.get(plus, mode) - f.get(minus, mode)) * inv2h);
            }
        }
        out.push(g);
    }
    out
}

/// The switching carré du champ
///
/// ```text
/// 𝒬(f, g)(x, α) = Σ_{β≠α} q_{αβ}(x) [f(x, β) − f(x, α)] [g(x, β) − g(x, α)]
/// ```
///
/// evaluated nodewise. Symmetric in `f, g`; nonnegative along the diagonal
/// `f = g` whenever the intensities are nonnegative.
pub fn carre_du_champ(
    model: &SwitchingModel,
    grid: &TorusGrid,
    f: &GridFunction,
    g: &GridFunction,
) -> Result<GridFunction> {
    let m = model.num_modes();
    if model.dim() != grid.dim() {
        return Err(Error::dim(
            "model vs grid dimension",
            grid.dim(),
            model.dim(),
        ));
    }
    if f.num_nodes() != grid.num_nodes() || f.num_modes() != m {
        return Err(Error::size(
            "carré du champ operand f",
            grid.num_nodes() * m,
            f.len(),
        ));
    }
    if g.num_nodes() != grid.num_nodes() || g.num_modes() != m {
        return Err(Error::size(
            "carré du champ operand g",
            grid.num_nodes() * m,
            g.len(),
        ));
    }
    let mut out = GridFunction::zeros(grid, m);
    let mut x = vec![0.0; grid.dim()];
    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        for alpha in 0..m {
            let mut s = 0.0;
            for beta in 0..m {
                if beta == alpha {
                    continue;
                }
                if let Some(field) = model.intensity(alpha, beta) {
                    let q = field.eval(&x);
                    if q != 0.0 {
                        let df = f.get(node, beta) - f.get(node, alpha);
                        let dg = g.get(node, beta) - g.get(node, alpha);
                        s += q * df * dg;
                    }
                }
            }
            out.set(node, alpha, s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FieldSpec, ModeCoefficients, SwitchingModel};
    use approx::assert_relative_eq;

    fn single_mode_1d(b: FieldSpec, sigma: FieldSpec) -> SwitchingModel {
        SwitchingModel::new(
            1,
            1,
            vec![ModeCoefficients {
                drift: vec![b],
                sigma: vec![sigma],
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn pure_diffusion_row_matches_hand_stencil() {
        // b = 0, a = 2 on 4 nodes: h = 1/4, coefficient a/(2h²) = 16.
        let model = single_mode_1d(FieldSpec::uniform(0.0), FieldSpec::uniform(2.0f64.sqrt()));
        let grid = TorusGrid::new(&[4]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let (cols, vals) = op.matrix().row(0);
        assert_eq!(cols, &[0, 1, 3]);
        assert_relative_eq!(vals[0], -32.0, epsilon = 1e-9);
        assert_relative_eq!(vals[1], 16.0, epsilon = 1e-9);
        assert_relative_eq!(vals[2], 16.0, epsilon = 1e-9);
    }

    #[test]
    fn drift_uses_centered_differences() {
        // b = 1, σ = 1 on 4 nodes: drift coefficient 1/(2h) = 2.
        let model = single_mode_1d(FieldSpec::uniform(1.0), FieldSpec::uniform(1.0));
        let grid = TorusGrid::new(&[4]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let (cols, vals) = op.matrix().row(2);
        // neighbors of node 2 are 1 and 3: diffusion 8, drift ±2.
        assert_eq!(cols, &[1, 2, 3]);
        assert_relative_eq!(vals[0], 8.0 - 2.0, epsilon = 1e-9);
        assert_relative_eq!(vals[1], -16.0, epsilon = 1e-9);
        assert_relative_eq!(vals[2], 8.0 + 2.0, epsilon = 1e-9);
    }

    #[test]
    fn switching_block_is_the_intensity_matrix() {
        let q01 = FieldSpec::with_term(1.5, vec![1], 0.0, 0.5);
        let q10 = FieldSpec::uniform(2.0);
        let model = SwitchingModel::new(
            1,
            1,
            vec![
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(1.0)],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(1.0)],
                },
            ],
            vec![(0, 1, q01.clone()), (1, 0, q10.clone())],
        )
        .unwrap();
        let grid = TorusGrid::new(&[8]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        for node in 0..grid.num_nodes() {
            let x = grid.node_coords(node);
            let expect = q01.eval(&x);
            let (cols, vals) = op.matrix().row(node * 2);
            let pos = cols.iter().position(|&c| c == node * 2 + 1).unwrap();
            assert_relative_eq!(vals[pos], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn pure_jump_generator_is_the_q_matrix() {
        // No spatial motion at all: σ must still be given, but set b = σ = 0
        // so only the jump block remains (assembly does not validate
        // ellipticity; that is validate_model's job).
        let model = SwitchingModel::new(
            1,
            1,
            vec![
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(0.0)],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(0.0)],
                },
            ],
            vec![
                (0, 1, FieldSpec::uniform(1.0)),
                (1, 0, FieldSpec::uniform(1.0)),
            ],
        )
        .unwrap();
        let grid = TorusGrid::new(&[4]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let (cols, vals) = op.matrix().row(0);
        assert_eq!(cols, &[0, 1]);
        assert_eq!(vals, &[-1.0, 1.0]);
        let (cols, vals) = op.matrix().row(1);
        assert_eq!(cols, &[0, 1]);
        assert_eq!(vals, &[1.0, -1.0]);
    }

    #[test]
    fn rows_sum_to_zero_and_constants_are_annihilated() {
        let model = SwitchingModel::new(
            2,
            2,
            vec![
                ModeCoefficients {
                    drift: vec![
                        FieldSpec::with_term(0.5, vec![1, 0], 0.0, 0.2),
                        FieldSpec::with_term(-0.3, vec![0, 1], 0.4, 0.0),
                    ],
                    sigma: vec![
                        FieldSpec::with_term(1.0, vec![1, 0], 0.0, 0.2),
                        FieldSpec::uniform(0.3),
                        FieldSpec::uniform(0.0),
                        FieldSpec::with_term(0.9, vec![0, 1], 0.1, 0.0),
                    ],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(-1.0), FieldSpec::uniform(0.25)],
                    sigma: vec![
                        FieldSpec::uniform(0.8),
                        FieldSpec::uniform(0.0),
                        FieldSpec::uniform(0.1),
                        FieldSpec::uniform(1.1),
                    ],
                },
            ],
            vec![
                (0, 1, FieldSpec::with_term(1.0, vec![1, 0], 0.0, 0.5)),
                (1, 0, FieldSpec::uniform(2.0)),
            ],
        )
        .unwrap();
        let grid = TorusGrid::new(&[8, 8]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let scale = op.matrix().inf_norm();
        for i in 0..op.size() {
            let (_, vals) = op.matrix().row(i);
            let sum: f64 = vals.iter().sum();
            assert!(sum.abs() <= 1e-13 * scale, "row {i} sums to {sum:.3e}");
        }
        let ones = GridFunction::from_fn(op.grid(), 2, |_, _| 1.0);
        let af = op.apply(&ones).unwrap();
        assert!(af.max_abs() <= 1e-11 * scale);
    }

    #[test]
    fn generator_is_second_order_consistent() {
        // Smooth band-limited test function with a different profile per
        // mode; the analytic ℒf is assembled from exact derivatives.
        let f0 = FieldSpec::new(
            0.0,
            vec![
                crate::model::FieldTerm {
                    k: vec![1, 1],
                    cos: 0.0,
                    sin: 0.5,
                },
                crate::model::FieldTerm {
                    k: vec![1, -1],
                    cos: 0.0,
                    sin: 0.5,
                },
            ],
        );
        let f1 = FieldSpec::with_term(0.3, vec![1, -2], 1.0, 0.0);
        let fields = [f0, f1];

        let model = SwitchingModel::new(
            2,
            2,
            vec![
                ModeCoefficients {
                    drift: vec![
                        FieldSpec::with_term(0.5, vec![1, 1], 0.0, 0.2),
                        FieldSpec::with_term(0.0, vec![0, 1], 0.3, 0.0),
                    ],
                    sigma: vec![
                        FieldSpec::with_term(1.0, vec![1, 0], 0.0, 0.2),
                        FieldSpec::uniform(0.3),
                        FieldSpec::uniform(0.0),
                        FieldSpec::with_term(0.9, vec![0, 1], 0.1, 0.0),
                    ],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(-0.4), FieldSpec::uniform(0.25)],
                    sigma: vec![
                        FieldSpec::uniform(0.8),
                        FieldSpec::uniform(0.1),
                        FieldSpec::uniform(0.0),
                        FieldSpec::uniform(1.1),
                    ],
                },
            ],
            vec![
                (0, 1, FieldSpec::with_term(1.0, vec![1, 0], 0.0, 0.5)),
                (1, 0, FieldSpec::with_term(2.0, vec![0, 1], 0.5, 0.0)),
            ],
        )
        .unwrap();

        let err_at = |n: usize| -> f64 {
            let grid = TorusGrid::new(&[n, n]).unwrap();
            let op = assemble_generator(&model, &grid).unwrap();
            let f = GridFunction::tabulate(&grid, 2, |x, mode| fields[mode].eval(x));
            let af = op.apply(&f).unwrap();
            let mut worst = 0.0f64;
            let mut grad = [0.0; 2];
            let mut hess = [0.0; 4];
            let mut b = [0.0; 2];
            for node in 0..grid.num_nodes() {
                let x = grid.node_coords(node);
                for alpha in 0..2 {
                    fields[alpha].gradient_into(&x, &mut grad);
                    fields[alpha].hessian_into(&x, &mut hess);
                    model.eval_drift_into(&x, alpha, &mut b);
                    let a = model.diffusion_matrix(&x, alpha);
                    let mut lf = 0.0;
                    for j in 0..2 {
                        lf += b[j] * grad[j];
                        for k in 0..2 {
                            lf += 0.5 * a[(j, k)] * hess[j * 2 + k];
                        }
                    }
                    let beta = 1 - alpha;
                    lf += model.eval_intensity(&x, alpha, beta)
                        * (fields[beta].eval(&x) - fields[alpha].eval(&x));
                    worst = worst.max((af.get(node, alpha) - lf).abs());
                }
            }
            worst
        };

        let e32 = err_at(32);
        let e64 = err_at(64);
        let order = (e32 / e64).log2();
        assert!(
            (1.6..=2.4).contains(&order),
            "observed consistency order {order:.3} (errors {e32:.3e}, {e64:.3e})"
        );
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        let model = single_mode_1d(
            FieldSpec::with_term(0.5, vec![1], 0.3, 0.0),
            FieldSpec::with_term(1.0, vec![1], 0.0, 0.25),
        );
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        for (i, j, v) in op.matrix().iter() {
            let (cols, vals) = op.adjoint().row(j);
            let pos = cols.iter().position(|&c| c == i).unwrap();
            assert_eq!(vals[pos], v); // bitwise: transpose moves entries only
        }
    }

    #[test]
    fn apply_rejects_wrong_shape() {
        let model = single_mode_1d(FieldSpec::uniform(0.0), FieldSpec::uniform(1.0));
        let grid = TorusGrid::new(&[8]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let bad = GridFunction::from_fn(&grid, 2, |_, _| 0.0);
        assert!(op.apply(&bad).is_err());
    }

    #[test]
    fn peclet_warning_fires_for_drift_dominated_models() {
        let model = single_mode_1d(FieldSpec::uniform(10.0), FieldSpec::uniform(0.1));
        let grid = TorusGrid::new(&[8]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        assert!(op.warnings().iter().any(|w| w.contains("Péclet")));

        let mild = single_mode_1d(FieldSpec::uniform(0.1), FieldSpec::uniform(1.0));
        let op = assemble_generator(&mild, &grid).unwrap();
        assert!(op.warnings().is_empty());
    }

    #[test]
    fn carre_du_champ_matches_hand_computation() {
        let model = SwitchingModel::new(
            1,
            1,
            vec![
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(1.0)],
                },
                ModeCoefficients {
                    drift: vec![FieldSpec::uniform(0.0)],
                    sigma: vec![FieldSpec::uniform(1.0)],
                },
            ],
            vec![
                (0, 1, FieldSpec::uniform(2.0)),
                (1, 0, FieldSpec::uniform(3.0)),
            ],
        )
        .unwrap();
        let grid = TorusGrid::new(&[4]).unwrap();
        // f constant per mode: f(·, 0) = 1, f(·, 1) = 4.
        let f = GridFunction::from_fn(&grid, 2, |_, mode| 1.0 + 3.0 * mode as f64);
        let q = carre_du_champ(&model, &grid, &f, &f).unwrap();
        for node in 0..4 {
            assert_relative_eq!(q.get(node, 0), 2.0 * 9.0, epsilon = 1e-14);
            assert_relative_eq!(q.get(node, 1), 3.0 * 9.0, epsilon = 1e-14);
        }
        // Bilinearity with a second function.
        let g = GridFunction::from_fn(&grid, 2, |_, mode| -2.0 * mode as f64);
        let qfg = carre_du_champ(&model, &grid, &f, &g).unwrap();
        assert_relative_eq!(qfg.get(0, 0), 2.0 * 3.0 * (-2.0), epsilon = 1e-14);
        assert_relative_eq!(qfg.get(0, 1), 3.0 * (-3.0) * 2.0, epsilon = 1e-14);
    }
}
