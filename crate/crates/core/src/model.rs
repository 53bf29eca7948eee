//! Model definition: trigonometric coefficient fields on the unit torus,
//! per-mode drift and diffusion coefficients, switching intensity fields, and
//! the standing-assumption checks (uniform ellipticity, nonnegative
//! intensities, irreducible switching) that every solver in this crate
//! relies on.
//!
//! All spatial coefficients are real trigonometric polynomials
//!
//! ```text
//! f(x) = c + Σ_t [ cos_t · cos(2π k_t · x) + sin_t · sin(2π k_t · x) ]
//! ```
//!
//! with integer wavevectors `k_t ∈ ℤ^d`, so they are smooth and exactly
//! 1-periodic in every coordinate, and their partial derivatives are available
//! in closed form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

/// Default threshold above which an intensity evaluation counts as a usable
/// edge when checking irreducibility of the switching graph.
pub const DEFAULT_IRREDUCIBILITY_TOL: f64 = 1e-12;

/// Map a coordinate to its canonical representative in `[0, 1)`.
///
/// Values that round up to exactly `1.0` (e.g. tiny negative inputs) are
/// folded back to `0.0` so the result is always strictly below one.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let mut w = x - x.floor();
    if w >= 1.0 {
        w = 0.0;
    }
    w
}

/// Wrap every coordinate of a point into `[0, 1)` in place.
#[inline]
pub fn wrap_slice(x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi = wrap(*xi);
    }
}

/// One Fourier term `cos_coef · cos(2π k·x) + sin_coef · sin(2π k·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    /// Integer wavevector; its length fixes the spatial dimension the term
    /// applies to.
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real trigonometric polynomial on the unit torus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<FieldTerm>,
}

impl FieldSpec {
    /// A spatially constant field.
    pub fn uniform(c: f64) -> Self {
        FieldSpec {
            constant: c,
            terms: Vec::new(),
        }
    }

    /// Field with a constant part plus explicit Fourier terms.
    pub fn new(constant: f64, terms: Vec<FieldTerm>) -> Self {
        FieldSpec { constant, terms }
    }

    /// Convenience for a single-term field `c + a·cos(2πk·x) + b·sin(2πk·x)`.
    pub fn with_term(constant: f64, k: Vec<i64>, cos: f64, sin: f64) -> Self {
        FieldSpec {
            constant,
            terms: vec![FieldTerm { k, cos, sin }],
        }
    }

    /// Do all wavevectors have length `d`?
    pub fn dim_ok(&self, d: usize) -> bool {
        self.terms.iter().all(|t| t.k.len() == d)
    }

    /// Check wavevector dimensions, reporting which context failed.
    pub fn check_dim(&self, d: usize, context: &str) -> Result<()> {
        for t in &self.terms {
            if t.k.len() != d {
                return Err(Error::dim(context, d, t.k.len()));
            }
        }
        Ok(())
    }

    /// Evaluate the field at `x`. Coordinates outside `[0, 1)` are wrapped
    /// first, so the evaluation is exactly periodic.
    ///
    /// Panics if a term's wavevector length differs from `x.len()`; models
    /// validate this at construction time.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            assert_eq!(t.k.len(), x.len(), "wavevector/point dimension mismatch");
            let theta = TAU * phase(&t.k, x);
            if t.cos != 0.0 {
                v += t.cos * theta.cos();
            }
            if t.sin != 0.0 {
                v += t.sin * theta.sin();
            }
        }
        v
    }

    /// Exact gradient `∇f(x)`, written into `out` (length `d`).
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), x.len());
        out.fill(0.0);
        for t in &self.terms {
            assert_eq!(t.k.len(), x.len(), "wavevector/point dimension mismatch");
            let theta = TAU * phase(&t.k, x);
            // d/dx_j [cos(2πk·x)] = -2π k_j sin(2πk·x), and symmetrically.
            let ds = theta.cos();
            let dc = -theta.sin();
            for (j, &kj) in t.k.iter().enumerate() {
                out[j] += TAU * kj as f64 * (t.cos * dc + t.sin * ds);
            }
        }
    }

    /// Exact Hessian `∇²f(x)`, written into `out` (row-major `d × d`).
    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        assert_eq!(out.len(), d * d);
        out.fill(0.0);
        for t in &self.terms {
            assert_eq!(t.k.len(), d, "wavevector/point dimension mismatch");
            let theta = TAU * phase(&t.k, x);
            // Second derivatives flip the sign of the original oscillation.
            let s = -(t.cos * theta.cos() + t.sin * theta.sin());
            for j in 0..d {
                for l in 0..d {
                    out[j * d + l] += TAU * TAU * (t.k[j] * t.k[l]) as f64 * s;
                }
            }
        }
    }
}

/// Phase `k · wrap(x)` of one Fourier term.
#[inline]
fn phase(k: &[i64], x: &[f64]) -> f64 {
    let mut p = 0.0;
    for (kj, xj) in k.iter().zip(x) {
        p += *kj as f64 * wrap(*xj);
    }
    p
}

/// Drift and diffusion coefficients of a single mode.
///
/// `drift` has one field per spatial component; `sigma` is the `d × r`
/// diffusion coefficient stored row-major (`sigma[i*r + l]` is `σ_{il}`).
#[derive(Debug, Clone)]
pub struct ModeCoefficients {
    pub drift: Vec<FieldSpec>,
    pub sigma: Vec<FieldSpec>,
}

/// A periodic switching diffusion on `𝕋^d × {0, …, m-1}`.
///
/// Mode indices are 0-based throughout the API; serialized formats label
/// modes starting from 1.
#[derive(Debug, Clone)]
pub struct SwitchingModel {
    d: usize,
    r: usize,
    modes: Vec<ModeCoefficients>,
    /// Off-diagonal intensity fields, `m × m` row-major by `(from, to)`.
    /// Diagonal slots stay `None`: `q_αα(x) = -Σ_{β≠α} q_αβ(x)` is computed
    /// on demand so row sums vanish identically.
    intensities: Vec<Option<FieldSpec>>,
}

impl SwitchingModel {
    /// Build and shape-check a model.
    ///
    /// `intensities` lists the off-diagonal entries as `(from, to, field)`
    /// with 0-based mode indices; unlisted pairs are identically zero.
    pub fn new(
        d: usize,
        r: usize,
        modes: Vec<ModeCoefficients>,
        intensities: Vec<(usize, usize, FieldSpec)>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidModel("spatial dimension must be >= 1".into()));
        }
        if r == 0 {
            return Err(Error::InvalidModel(
                "Brownian dimension must be >= 1".into(),
            ));
        }
        if modes.is_empty() {
            return Err(Error::InvalidModel("at least one mode is required".into()));
        }
        let m = modes.len();
        for (alpha, mode) in modes.iter().enumerate() {
            if mode.drift.len() != d {
                return Err(Error::size(
                    &format!("drift of mode {alpha}"),
                    d,
                    mode.drift.len(),
                ));
            }
            if mode.sigma.len() != d * r {
                return Err(Error::size(
                    &format!("sigma of mode {alpha}"),
                    d * r,
                    mode.sigma.len(),
                ));
            }
            for (j, f) in mode.drift.iter().enumerate() {
                f.check_dim(d, &format!("drift component {j} of mode {alpha}"))?;
            }
            for (idx, f) in mode.sigma.iter().enumerate() {
                f.check_dim(d, &format!("sigma entry {idx} of mode {alpha}"))?;
            }
        }
        let mut table: Vec<Option<FieldSpec>> = vec![None; m * m];
        for (from, to, field) in intensities {
            if from >= m || to >= m {
                return Err(Error::InvalidModel(format!(
                    "intensity ({from}, {to}) references a mode outside 0..{m}"
                )));
            }
            if from == to {
                return Err(Error::InvalidModel(format!(
                    "diagonal intensity ({from}, {to}) may not be specified; it is derived"
                )));
            }
            field.check_dim(d, &format!("intensity ({from}, {to})"))?;
            if table[from * m + to].is_some() {
                return Err(Error::InvalidModel(format!(
                    "intensity ({from}, {to}) specified twice"
                )));
            }
            table[from * m + to] = Some(field);
        }
        Ok(SwitchingModel {
            d,
            r,
            modes,
            intensities: table,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of independent Brownian driving directions.
    pub fn brownian_dim(&self) -> usize {
        self.r
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, alpha: usize) -> &ModeCoefficients {
        &self.modes[alpha]
    }

    /// The intensity field `q_{αβ}`, if the pair was specified.
    pub fn intensity(&self, from: usize, to: usize) -> Option<&FieldSpec> {
        self.intensities[from * self.num_modes() + to].as_ref()
    }

    /// Drift vector `b(x, α)`, written into `out` (length `d`).
    pub fn eval_drift_into(&self, x: &[f64], alpha: usize, out: &mut [f64]) {
        for (j, f) in self.modes[alpha].drift.iter().enumerate() {
            out[j] = f.eval(x);
        }
    }

    /// Diffusion coefficient `σ(x, α)`, written into `out` (row-major `d × r`).
    pub fn eval_sigma_into(&self, x: &[f64], alpha: usize, out: &mut [f64]) {
        for (idx, f) in self.modes[alpha].sigma.iter().enumerate() {
            out[idx] = f.eval(x);
        }
    }

    /// Covariance coefficient `a(x, α) = σ σᵀ` as a dense `d × d` matrix.
    pub fn diffusion_matrix(&self, x: &[f64], alpha: usize) -> DMatrix<f64> {
        let (d, r) = (self.d, self.r);
        let mut sigma = vec![0.0; d * r];
        self.eval_sigma_into(x, alpha, &mut sigma);
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let mut s = 0.0;
                for l in 0..r {
                    s += sigma[i * r + l] * sigma[j * r + l];
                }
                a[(i, j)] = s;
                a[(j, i)] = s;
            }
        }
        a
    }

    /// Intensity `q_{αβ}(x)`. Off-diagonal pairs that were never specified
    /// evaluate to zero; the diagonal returns `-Σ_{β≠α} q_{αβ}(x)` so that
    /// every row of `Q(x)` sums to zero exactly.
    pub fn eval_intensity(&self, x: &[f64], from: usize, to: usize) -> f64 {
        if from == to {
            return -self.total_exit_rate(x, from);
        }
        match self.intensity(from, to) {
            Some(f) => f.eval(x),
            None => 0.0,
        }
    }

    /// Total exit rate `q̄(x, α) = Σ_{β≠α} q_{αβ}(x)`.
    pub fn total_exit_rate(&self, x: &[f64], alpha: usize) -> f64 {
        let m = self.num_modes();
        let mut s = 0.0;
        for beta in 0..m {
            if beta != alpha {
                if let Some(f) = self.intensity(alpha, beta) {
                    s += f.eval(x);
                }
            }
        }
        s
    }
}

/// A single assumption violation found by [`validate_model`].
#[derive(Debug, Clone)]
pub enum Violation {
    /// `a(x, α)` has a non-positive eigenvalue at a grid node.
    NonElliptic {
        node: usize,
        mode: usize,
        min_eig: f64,
    },
    /// An off-diagonal intensity evaluates negative at a grid node.
    NegativeIntensity {
        node: usize,
        from: usize,
        to: usize,
        value: f64,
    },
    /// The switching graph at a node is not strongly connected.
    NotIrreducible { node: usize },
}

/// Outcome of checking the standing assumptions on a grid.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Smallest eigenvalue of `a(x_i, α)` over all nodes and modes.
    pub ellipticity_min: f64,
    /// Smallest off-diagonal intensity over all nodes and ordered pairs
    /// (zero when `m = 1`, where the check is vacuous).
    pub intensity_min: f64,
    /// Whether the switching graph is strongly connected at every node.
    pub irreducible_everywhere: bool,
    /// Largest total exit rate over all nodes and modes; simulation step
    /// constraints are expressed against this.
    pub max_total_rate: f64,
    /// Threshold used when deciding whether an intensity counts as an edge.
    pub irreducibility_tol: f64,
    /// Grid shape the checks were evaluated on.
    pub grid_n: Vec<usize>,
    /// Violations found, capped at [`ValidationReport::MAX_LISTED`] entries.
    pub violations: Vec<Violation>,
    /// Total number of violations (may exceed `violations.len()`).
    pub total_violations: usize,
}

impl ValidationReport {
    /// Cap on the number of individually listed violations.
    pub const MAX_LISTED: usize = 1000;

    /// The model satisfies all standing assumptions on this grid.
    pub fn accepted(&self) -> bool {
        self.ellipticity_min > 0.0 && self.intensity_min >= 0.0 && self.irreducible_everywhere
    }
}

/// Check uniform ellipticity, intensity nonnegativity, and irreducibility of
/// the switching graph at every node of `grid`, with the default edge
/// threshold [`DEFAULT_IRREDUCIBILITY_TOL`].
pub fn validate_model(model: &SwitchingModel, grid: &TorusGrid) -> Result<ValidationReport> {
    validate_model_with_tol(model, grid, DEFAULT_IRREDUCIBILITY_TOL)
}

/// [`validate_model`] with an explicit irreducibility threshold.
pub fn validate_model_with_tol(
    model: &SwitchingModel,
    grid: &TorusGrid,
    irreducibility_tol: f64,
) -> Result<ValidationReport> {
    if model.dim() != grid.dim() {
        return Err(Error::dim(
            "model vs grid dimension",
            grid.dim(),
            model.dim(),
        ));
    }
    let d = model.dim();
    let m = model.num_modes();
    let mut x = vec![0.0; d];
    let mut ellipticity_min = f64::INFINITY;
    let mut intensity_min = if m > 1 { f64::INFINITY } else { 0.0 };
    let mut max_total_rate: f64 = 0.0;
    let mut irreducible_everywhere = true;
    let mut violations = Vec::new();
    let mut total_violations = 0usize;
    let push = |violations: &mut Vec<Violation>, total: &mut usize, v: Violation| {
        *total += 1;
        if violations.len() < ValidationReport::MAX_LISTED {
            violations.push(v);
        }
    };

    let mut edges = vec![false; m * m];
    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        edges.fill(false);
        for alpha in 0..m {
            let a = model.diffusion_matrix(&x, alpha);
            let min_eig = sym_min_eig(&a);
            ellipticity_min = ellipticity_min.min(min_eig);
            if min_eig <= 0.0 {
                push(
                    &mut violations,
                    &mut total_violations,
                    Violation::NonElliptic {
                        node,
                        mode: alpha,
                        min_eig,
                    },
                );
            }
            let mut total_rate = 0.0;
            for beta in 0..m {
                if beta == alpha {
                    continue;
                }
                let q = model.eval_intensity(&x, alpha, beta);
                intensity_min = intensity_min.min(q);
                total_rate += q;
                if q < 0.0 {
                    push(
                        &mut violations,
                        &mut total_violations,
                        Violation::NegativeIntensity {
                            node,
                            from: alpha,
                            to: beta,
                            value: q,
                        },
                    );
                }
                if q > irreducibility_tol {
                    edges[alpha * m + beta] = true;
                }
            }
            max_total_rate = max_total_rate.max(total_rate);
        }
        if !strongly_connected(&edges, m) {
            irreducible_everywhere = false;
            push(
                &mut violations,
                &mut total_violations,
                Violation::NotIrreducible { node },
            );
        }
    }

    Ok(ValidationReport {
        ellipticity_min,
        intensity_min,
        irreducible_everywhere,
        max_total_rate,
        irreducibility_tol,
        grid_n: grid.shape().to_vec(),
        violations,
        total_violations,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn sym_min_eig(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &e| acc.min(e))
}

/// Strong connectivity of a directed graph on `m` vertices given a dense
/// adjacency table: every vertex reachable from vertex 0 and vertex 0
/// reachable from every vertex.
fn strongly_connected(edges: &[bool], m: usize) -> bool {
    if m <= 1 {
        return true;
    }
    let reach = |transpose: bool| -> bool {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for w in 0..m {
                let e = if transpose {
                    edges[w * m + v]
                } else {
                    edges[v * m + w]
                };
                if e && !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == m
    };
    reach(false) && reach(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn field_2_plus_sin() -> FieldSpec {
        FieldSpec::with_term(2.0, vec![1], 0.0, 1.0)
    }

    #[test]
    fn eval_matches_closed_form() {
        let f = field_2_plus_sin();
        assert_relative_eq!(f.eval(&[0.75]), 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.eval(&[0.25]), 3.0, epsilon = 1e-14);
        assert_relative_eq!(f.eval(&[0.0]), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn eval_wraps_exactly_on_integer_shifts() {
        let f = FieldSpec::with_term(0.3, vec![3], 0.7, -0.4);
        // Dyadic points shift by integers without rounding, so wrapped
        // evaluation must agree bit for bit.
        for i in 0..64 {
            let x = i as f64 / 64.0;
            assert_eq!(f.eval(&[x]), f.eval(&[x + 2.0]));
            assert_eq!(f.eval(&[x]), f.eval(&[x - 5.0]));
        }
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        for &x in &[-1e-18, -0.0, 0.0, 1.0, -3.25, 7.75, 1.0 - 1e-16] {
            let w = wrap(x);
            assert!((0.0..1.0).contains(&w), "wrap({x}) = {w}");
        }
        assert_eq!(wrap(-3.25), 0.75);
        assert_eq!(wrap(7.75), 0.75);
    }

    #[test]
    fn gradient_matches_closed_form() {
        let f = FieldSpec::with_term(0.0, vec![1], 0.0, 1.0); // sin(2πx)
        let mut g = [0.0];
        f.gradient_into(&[0.0], &mut g);
        assert_relative_eq!(g[0], TAU, epsilon = 1e-13);
        f.gradient_into(&[0.25], &mut g);
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn hessian_matches_closed_form() {
        // f = sin(4πx) => f'' = -(4π)² sin(4πx)
        let f = FieldSpec::with_term(0.0, vec![2], 0.0, 1.0);
        let mut h = [0.0];
        f.hessian_into(&[0.1], &mut h);
        let expect = -(2.0 * TAU) * (2.0 * TAU) * (2.0 * TAU * 0.1).sin();
        assert_relative_eq!(h[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn hessian_cross_terms_in_two_dimensions() {
        // f = sin(2π(x+2y)): ∂²f/∂x∂y = -2(2π)² sin(2π(x+2y))
        let f = FieldSpec::with_term(0.0, vec![1, 2], 0.0, 1.0);
        let mut h = [0.0; 4];
        let x = [0.3, 0.45];
        f.hessian_into(&x, &mut h);
        let s = (TAU * (x[0] + 2.0 * x[1])).sin();
        assert_relative_eq!(h[1], -2.0 * TAU * TAU * s, epsilon = 1e-10);
        assert_eq!(h[1], h[2]);
        assert_relative_eq!(h[3], -4.0 * TAU * TAU * s, epsilon = 1e-10);
    }

    fn constant_mode(_d: usize, _r: usize, b: &[f64], sigma: &[f64]) -> ModeCoefficients {
        ModeCoefficients {
            drift: b.iter().map(|&c| FieldSpec::uniform(c)).collect(),
            sigma: sigma.iter().map(|&c| FieldSpec::uniform(c)).collect(),
        }
    }

    fn two_mode_constant(q12: f64, q21: f64, sigma: f64) -> SwitchingModel {
        SwitchingModel::new(
            1,
            1,
            vec![
                constant_mode(1, 1, &[1.0], &[sigma]),
                constant_mode(1, 1, &[-1.0], &[sigma]),
            ],
            vec![
                (0, 1, FieldSpec::uniform(q12)),
                (1, 0, FieldSpec::uniform(q21)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        let bad_sigma = SwitchingModel::new(
            2,
            1,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::uniform(0.0); 2],
                sigma: vec![FieldSpec::uniform(1.0); 1], // needs d*r = 2
            }],
            vec![],
        );
        assert!(matches!(bad_sigma, Err(Error::SizeMismatch { .. })));

        let bad_wavevector = SwitchingModel::new(
            2,
            1,
            vec![ModeCoefficients {
                drift: vec![
                    FieldSpec::with_term(0.0, vec![1], 1.0, 0.0), // k has length 1, d = 2
                    FieldSpec::uniform(0.0),
                ],
                sigma: vec![FieldSpec::uniform(1.0); 2],
            }],
            vec![],
        );
        assert!(matches!(
            bad_wavevector,
            Err(Error::DimensionMismatch { .. })
        ));

        let diag = SwitchingModel::new(
            1,
            1,
            vec![constant_mode(1, 1, &[0.0], &[1.0]); 2],
            vec![(0, 0, FieldSpec::uniform(1.0))],
        );
        assert!(matches!(diag, Err(Error::InvalidModel(_))));

        let out_of_range = SwitchingModel::new(
            1,
            1,
            vec![constant_mode(1, 1, &[0.0], &[1.0]); 2],
            vec![(0, 5, FieldSpec::uniform(1.0))],
        );
        assert!(matches!(out_of_range, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn diagonal_intensity_balances_row() {
        let model = SwitchingModel::new(
            1,
            1,
            vec![constant_mode(1, 1, &[0.0], &[1.0]); 3],
            vec![
                (0, 1, FieldSpec::uniform(1.0)),
                (0, 2, FieldSpec::uniform(2.0)),
                (1, 0, FieldSpec::uniform(0.5)),
                (2, 0, FieldSpec::uniform(0.5)),
            ],
        )
        .unwrap();
        let x = [0.3];
        assert_eq!(model.eval_intensity(&x, 0, 0), -3.0);
        assert_eq!(model.total_exit_rate(&x, 0), 3.0);
        assert_eq!(model.eval_intensity(&x, 0, 2), 2.0);
        assert_eq!(model.eval_intensity(&x, 2, 1), 0.0); // unspecified pair
        let row_sum: f64 = (0..3).map(|b| model.eval_intensity(&x, 0, b)).sum();
        assert_eq!(row_sum, 0.0);
    }

    #[test]
    fn diffusion_matrix_is_sigma_sigma_t() {
        // d = 1, r = 2: a = σ₁² + σ₂².
        let model = SwitchingModel::new(
            1,
            2,
            vec![ModeCoefficients {
                drift: vec![FieldSpec::uniform(0.0)],
                sigma: vec![FieldSpec::uniform(0.6), FieldSpec::uniform(0.8)],
            }],
            vec![],
        )
        .unwrap();
        let a = model.diffusion_matrix(&[0.0], 0);
        assert_relative_eq!(a[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn validate_accepts_elliptic_irreducible_model() {
        let model = two_mode_constant(1.0, 1.0, 0.1);
        let grid = TorusGrid::new(&[16]).unwrap();
        let report = validate_model(&model, &grid).unwrap();
        assert!(report.accepted());
        assert_relative_eq!(report.ellipticity_min, 0.01, epsilon = 1e-15);
        assert_relative_eq!(report.intensity_min, 1.0, epsilon = 1e-15);
        assert_relative_eq!(report.max_total_rate, 1.0, epsilon = 1e-15);
        assert!(report.irreducible_everywhere);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn validate_flags_reducible_switching() {
        // Only 1 -> 0 is possible: no path out of mode 0.
        let model = SwitchingModel::new(
            1,
            1,
            vec![constant_mode(1, 1, &[0.0], &[1.0]); 2],
            vec![(1, 0, FieldSpec::uniform(1.0))],
        )
        .unwrap();
        let grid = TorusGrid::new(&[8]).unwrap();
        let report = validate_model(&model, &grid).unwrap();
        assert!(!report.irreducible_everywhere);
        assert!(!report.accepted());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotIrreducible { .. })));
    }

    #[test]
    fn validate_flags_negative_intensity() {
        let model = SwitchingModel::new(
            1,
            1,
            vec![constant_mode(1, 1, &[0.0], &[1.0]); 2],
            vec![
                // dips to -0.4 on part of the cell
                (0, 1, FieldSpec::with_term(0.1, vec![1], 0.0, 0.5)),
                (1, 0, FieldSpec::uniform(1.0)),
            ],
        )
        .unwrap();
        let grid = TorusGrid::new(&[64]).unwrap();
        let report = validate_model(&model, &grid).unwrap();
        assert!(report.intensity_min < 0.0);
        assert!(!report.accepted());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NegativeIntensity { .. })));
    }

    #[test]
    fn validate_flags_degenerate_diffusion() {
        let model =
            SwitchingModel::new(1, 1, vec![constant_mode(1, 1, &[1.0], &[0.0])], vec![]).unwrap();
        let grid = TorusGrid::new(&[8]).unwrap();
        let report = validate_model(&model, &grid).unwrap();
        assert_eq!(report.ellipticity_min, 0.0);
        assert!(!report.accepted());
    }

    #[test]
    fn validate_rejects_dimension_mismatch() {
        let model = two_mode_constant(1.0, 1.0, 0.5);
        let grid = TorusGrid::new(&[8, 8]).unwrap();
        assert!(matches!(
            validate_model(&model, &grid),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
