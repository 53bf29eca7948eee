//! Uniform tensor grids on the unit torus and functions tabulated on them.
//!
//! Axis `j` carries `n_j` nodes `x_j = i/n_j`, `i = 0, …, n_j - 1`; the point
//! `x_j = 1` is identified with `x_j = 0`. Nodes are enumerated row-major
//! (last axis fastest). A [`GridFunction`] attaches `m` mode values to every
//! node, stored modes-fastest, so the global unknown index of `(node, mode)`
//! is `node * m + mode` — the layout every discrete operator in
//! [`crate::operators`] assumes.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{wrap, SwitchingModel};

/// A uniform periodic grid on `[0, 1)^d`.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    n: Vec<usize>,
    h: Vec<f64>,
    /// Row-major strides: node = Σ_j i_j · stride_j, last axis contiguous.
    strides: Vec<usize>,
    num_nodes: usize,
    /// Quadrature weight of one node, `Π_j h_j`.
    weight: f64,
}

impl TorusGrid {
    /// Build a grid with `n[j]` nodes along axis `j`. Each axis needs at
    /// least 4 nodes so that centered second differences cannot alias.
    pub fn new(n: &[usize]) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::param("grid.n", "at least one axis is required"));
        }
        for (axis, &nj) in n.iter().enumerate() {
            if nj < 4 {
                return Err(Error::GridTooCoarse { axis, n: nj });
            }
        }
        let mut num_nodes = 1usize;
        for &nj in n {
            num_nodes = num_nodes
                .checked_mul(nj)
                .ok_or_else(|| Error::param("grid.n", "node count overflows usize"))?;
        }
        let d = n.len();
        let h: Vec<f64> = n.iter().map(|&nj| 1.0 / nj as f64).collect();
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * n[j + 1];
        }
        let weight = h.iter().product();
        Ok(TorusGrid {
            n: n.to_vec(),
            h,
            strides,
            num_nodes,
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    /// Nodes per axis.
    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    /// Mesh widths `h_j = 1/n_j`.
    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Quadrature weight `w = Π_j h_j` shared by all nodes.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Multi-index of a node along each axis.
    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        debug_assert!(node < self.num_nodes);
        self.strides
            .iter()
            .zip(&self.n)
            .map(|(&s, &nj)| (node / s) % nj)
            .collect()
    }

    /// Coordinates of a node, written into `out` (length `d`).
    pub fn node_coords_into(&self, node: usize, out: &mut [f64]) {
        debug_assert!(node < self.num_nodes);
        for (j, (&s, &nj)) in self.strides.iter().zip(&self.n).enumerate() {
            out[j] = ((node / s) % nj) as f64 * self.h[j];
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords_into(node, &mut x);
        x
    }

    /// Row-major stride of an axis (in nodes).
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Index of the node reached by stepping `offset` cells along `axis`,
    /// wrapping periodically.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> usize {
        let nj = self.n[axis] as isize;
        let s = self.strides[axis];
        let i = ((node / s) % self.n[axis]) as isize;
        let wrapped = (i + offset).rem_euclid(nj) as usize;
        node - (i as usize) * s + wrapped * s
    }
}

/// Values attached to every `(node, mode)` pair of a grid, modes fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    num_nodes: usize,
    num_modes: usize,
}

impl GridFunction {
    pub fn zeros(grid: &TorusGrid, num_modes: usize) -> Self {
        assert!(num_modes >= 1);
        GridFunction {
            values: vec![0.0; grid.num_nodes() * num_modes],
            num_nodes: grid.num_nodes(),
            num_modes,
        }
    }

    /// Build from a closure of the global layout, `f(node, mode)`.
    pub fn from_fn(
        grid: &TorusGrid,
        num_modes: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut gf = GridFunction::zeros(grid, num_modes);
        for node in 0..gf.num_nodes {
            for mode in 0..num_modes {
                gf.values[node * num_modes + mode] = f(node, mode);
            }
        }
        gf
    }

    /// Tabulate a function of position and mode at the grid nodes.
    pub fn tabulate(
        grid: &TorusGrid,
        num_modes: usize,
        mut f: impl FnMut(&[f64], usize) -> f64,
    ) -> Self {
        let mut gf = GridFunction::zeros(grid, num_modes);
        let mut x = vec![0.0; grid.dim()];
        for node in 0..gf.num_nodes {
            grid.node_coords_into(node, &mut x);
            for mode in 0..num_modes {
                gf.values[node * num_modes + mode] = f(&x, mode);
            }
        }
        gf
    }

    /// Wrap an existing flat vector laid out modes-fastest.
    pub fn from_values(values: Vec<f64>, num_nodes: usize, num_modes: usize) -> Result<Self> {
        if values.len() != num_nodes * num_modes {
            return Err(Error::size(
                "grid function values",
                num_nodes * num_modes,
                values.len(),
            ));
        }
        Ok(GridFunction {
            values,
            num_nodes,
            num_modes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    /// Total number of unknowns, `num_nodes * num_modes`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Global unknown index of `(node, mode)`.
    #[inline]
    pub fn index(&self, node: usize, mode: usize) -> usize {
        debug_assert!(node < self.num_nodes && mode < self.num_modes);
        node * self.num_modes + mode
    }

    #[inline]
    pub fn get(&self, node: usize, mode: usize) -> f64 {
        self.values[self.index(node, mode)]
    }

    #[inline]
    pub fn set(&mut self, node: usize, mode: usize, v: f64) {
        let i = self.index(node, mode);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation at an arbitrary point (wrapped into the unit
    /// cell) for a fixed mode.
    pub fn interpolate(&self, grid: &TorusGrid, x: &[f64], mode: usize) -> f64 {
        assert_eq!(x.len(), grid.dim());
        assert_eq!(self.num_nodes, grid.num_nodes());
        let d = grid.dim();
        // Base node index and fractional offset along each axis.
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "interpolation supports up to 8 dimensions");
        for j in 0..d {
            let nj = grid.shape()[j];
            let pos = wrap(x[j]) * nj as f64;
            let mut i0 = pos.floor() as usize;
            if i0 >= nj {
                i0 = nj - 1; // guards pos == nj from wrap rounding
            }
            base[j] = i0;
            frac[j] = pos - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut node = 0usize;
            let mut w = 1.0;
            for j in 0..d {
                let nj = grid.shape()[j];
                let up = (corner >> j) & 1 == 1;
                let idx = if up { (base[j] + 1) % nj } else { base[j] };
                node += idx * grid.stride(j);
                w *= if up { frac[j] } else { 1.0 - frac[j] };
            }
            if w != 0.0 {
                acc += w * self.get(node, mode);
            }
        }
        acc
    }

    /// Write the standard CSV layout: `node_index, x_1..x_d, mode, value`,
    /// with modes labeled from 1. Lines starting with `#` carry metadata.
    pub fn write_csv<W: Write>(
        &self,
        grid: &TorusGrid,
        mut w: W,
        metadata: &[(&str, String)],
    ) -> Result<()> {
        if self.num_nodes != grid.num_nodes() {
            return Err(Error::size(
                "grid function vs grid",
                grid.num_nodes(),
                self.num_nodes,
            ));
        }
        for (key, value) in metadata {
            writeln!(w, "# {key}={value}")?;
        }
        write!(w, "node_index")?;
        for j in 1..=grid.dim() {
            write!(w, ",x_{j}")?;
        }
        writeln!(w, ",mode,value")?;
        let mut x = vec![0.0; grid.dim()];
        for node in 0..self.num_nodes {
            grid.node_coords_into(node, &mut x);
            for mode in 0..self.num_modes {
                write!(w, "{node}")?;
                for xj in &x {
                    write!(w, ",{xj}")?;
                }
                writeln!(w, ",{},{}", mode + 1, self.get(node, mode))?;
            }
        }
        Ok(())
    }
}

/// Running compensated (Neumaier) sum: exact to within one rounding of the
/// true sum even under heavy cancellation, and deterministic because callers
/// feed it serially in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedAcc {
    sum: f64,
    comp: f64,
}

impl CompensatedAcc {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated (Neumaier) summation of an iterator.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedAcc::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Quadrature of a grid function over the whole state space
/// `𝕋^d × {modes}`: `w · Σ_{node, mode} f(node, mode)` with the uniform
/// weight `w = Π h_j`. Second-order accurate (it is the periodic trapezoid
/// rule), and exact for band-limited trigonometric integrands.
pub fn quadrature(grid: &TorusGrid, f: &GridFunction) -> Result<f64> {
    if f.num_nodes() != grid.num_nodes() {
        return Err(Error::size(
            "quadrature operand",
            grid.num_nodes(),
            f.num_nodes(),
        ));
    }
    Ok(grid.weight() * compensated_sum(f.values().iter().copied()))
}

/// Which scalar coefficient of a model to tabulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientSelector {
    /// Drift component `b_j(·, α)`.
    Drift { mode: usize, component: usize },
    /// Entry `σ_{jl}(·, α)` of the diffusion coefficient.
    Sigma { mode: usize, row: usize, col: usize },
    /// Entry `a_{jk}(·, α)` of `a = σσᵀ`.
    Diffusion { mode: usize, row: usize, col: usize },
    /// Intensity `q_{αβ}` (`from ≠ to`), or the diagonal `q_{αα}` for
    /// `from == to`.
    Intensity { from: usize, to: usize },
}

/// Tabulate one scalar coefficient of the model on the grid as a
/// single-mode [`GridFunction`].
pub fn sample_field(
    grid: &TorusGrid,
    model: &SwitchingModel,
    selector: CoefficientSelector,
) -> Result<GridFunction> {
    if model.dim() != grid.dim() {
        return Err(Error::dim(
            "model vs grid dimension",
            grid.dim(),
            model.dim(),
        ));
    }
    let d = model.dim();
    let r = model.brownian_dim();
    let m = model.num_modes();
    let check_mode = |mode: usize| -> Result<()> {
        if mode >= m {
            return Err(Error::param(
                "selector.mode",
                format!("mode {mode} out of 0..{m}"),
            ));
        }
        Ok(())
    };
    let mut out = GridFunction::zeros(grid, 1);
    let mut x = vec![0.0; d];
    for node in 0..grid.num_nodes() {
        grid.node_coords_into(node, &mut x);
        let v = match selector {
            CoefficientSelector::Drift { mode, component } => {
                check_mode(mode)?;
                if component >= d {
                    return Err(Error::param(
                        "selector.component",
                        format!("{component} >= d = {d}"),
                    ));
                }
                model.mode(mode).drift[component].eval(&x)
            }
            CoefficientSelector::Sigma { mode, row, col } => {
                check_mode(mode)?;
                if row >= d || col >= r {
                    return Err(Error::param(
                        "selector",
                        format!("sigma index ({row},{col}) out of {d}x{r}"),
                    ));
                }
                model.mode(mode).sigma[row * r + col].eval(&x)
            }
            CoefficientSelector::Diffusion { mode, row, col } => {
                check_mode(mode)?;
                if row >= d || col >= d {
                    return Err(Error::param(
                        "selector",
                        format!("diffusion index ({row},{col}) out of {d}x{d}"),
                    ));
                }
                model.diffusion_matrix(&x, mode)[(row, col)]
            }
            CoefficientSelector::Intensity { from, to } => {
                check_mode(from)?;
                check_mode(to)?;
                model.eval_intensity(&x, from, to)
            }
        };
        out.set(node, 0, v);
    }
    Ok(out)
}
