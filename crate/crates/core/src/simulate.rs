//! Euler–Maruyama simulation of the micro-scale switching diffusion.
//!
//! One micro step of size `h` from state `(X, α)` does, in this order:
//!
//! 1. diffuse: `X ← X + b(wrap(X), α) h + σ(wrap(X), α) √h ξ` with standard
//!    normal `ξ ∈ ℝ^r`;
//! 2. switch: with one uniform draw `u`, jump to mode `β` if `u` lands in the
//!    interval of width `q_{αβ}(wrap(X⁻)) h` assigned to `β` (consecutive
//!    left-closed right-open intervals in increasing `β` order, intensities
//!    frozen at the pre-step position), otherwise stay.
//!
//! The first-order interval construction is accurate when
//! `h · max_total_rate ≤ 0.1`, which [`SimConfig::validate`] enforces.
//!
//! Positions evolve on the real line (unwrapped); coefficients only ever see
//! the wrapped point. Each path draws from its own counter-derived RNG
//! stream — `ChaCha12` keyed by the run seed with the path id as the stream
//! counter — so path `p` of seed `s` is bit-reproducible regardless of how
//! many threads execute the ensemble, and distinct paths never share draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{wrap, SwitchingModel};

/// Parameters of one simulation ensemble.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Macro/micro scale separation; the micro horizon is `t_horizon / ε²`.
    pub epsilon: f64,
    /// Macro time horizon.
    pub t_horizon: f64,
    /// Micro step size.
    pub h_micro: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial (unwrapped) position, length `d`.
    pub x0: Vec<f64>,
    /// Initial mode (0-based).
    pub mode0: usize,
    /// Record every `record_stride`-th step (1 = every step); the initial
    /// and final states are always recorded.
    pub record_stride: usize,
}

impl SimConfig {
    /// Number of micro steps needed to cover the micro horizon.
    pub fn n_steps(&self) -> usize {
        let micro_horizon = self.t_horizon / (self.epsilon * self.epsilon);
        (micro_horizon / self.h_micro).ceil() as usize
    }

    /// Check parameter ranges and the switching step constraint
    /// `h · max_total_rate ≤ 0.1` (via a rigorous coefficient bound on the
    /// total exit rate).
    pub fn validate(&self, model: &SwitchingModel) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::param("epsilon", "must lie in (0, 1]"));
        }
        if !(self.t_horizon >= 0.0) {
            return Err(Error::param("t_horizon", "must be nonnegative"));
        }
        if !(self.h_micro > 0.0) {
            return Err(Error::param("h_micro", "must be positive"));
        }
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride", "must be at least 1"));
        }
        if self.x0.len() != model.dim() {
            return Err(Error::dim("x0", model.dim(), self.x0.len()));
        }
        if self.mode0 >= model.num_modes() {
            return Err(Error::param(
                "mode0",
                format!("mode {} out of 0..{}", self.mode0, model.num_modes()),
            ));
        }
        if model.num_modes() > u16::MAX as usize {
            return Err(Error::param("model", "more than 65535 modes"));
        }
        let rate_bound = max_total_rate_bound(model);
        let product = self.h_micro * rate_bound;
        if product > 0.1 {
            return Err(Error::StepConstraint {
                product,
                suggested: 0.1 / rate_bound,
            });
        }
        Ok(())
    }
}

/// Upper bound on the total exit rate over all positions and modes, from the
/// coefficient sums of the intensity fields.
pub fn max_total_rate_bound(model: &SwitchingModel) -> f64 {
    let m = model.num_modes();
    let mut worst: f64 = 0.0;
    for alpha in 0..m {
        let mut total = 0.0;
        for beta in 0..m {
            if beta == alpha {
                continue;
            }
            if let Some(f) = model.intensity(alpha, beta) {
                let mut bound = f.constant;
                for t in &f.terms {
                    bound += t.cos.abs() + t.sin.abs();
                }
                total += bound.max(0.0);
            }
        }
        worst = worst.max(total);
    }
    worst
}

/// A recorded micro trajectory.
///
/// `positions` is row-major `(sample, coordinate)` and holds *unwrapped*
/// positions; `modes` holds 0-based mode indices. Times are strictly
/// increasing multiples of the micro step.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub path_id: u64,
    d: usize,
    times: Vec<f64>,
    positions: Vec<f64>,
    modes: Vec<u16>,
}

impl PathSample {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn mode(&self, i: usize) -> usize {
        self.modes[i] as usize
    }

    /// Final recorded time.
    pub fn last_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("paths always hold the initial state")
    }

    /// Diffusively rescale: times by `ε²`, positions by `ε`, modes copied.
    /// Fails when the rescaled path does not reach `t_horizon`.
    pub fn rescale(&self, epsilon: f64, t_horizon: f64) -> Result<PathSample> {
        let eps2 = epsilon * epsilon;
        let have = self.last_time() * eps2;
        // Tolerate one step of floating slack at the horizon.
        if have < t_horizon * (1.0 - 1e-12) {
            return Err(Error::HorizonShortfall {
                have,
                need: t_horizon,
            });
        }
        Ok(PathSample {
            path_id: self.path_id,
            d: self.d,
            times: self.times.iter().map(|t| t * eps2).collect(),
            positions: self.positions.iter().map(|x| x * epsilon).collect(),
            modes: self.modes.clone(),
        })
    }
}

/// The per-path RNG of the splittable-stream contract: one master seed, the
/// path id as stream counter.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// First-order switching decision for one step.
///
/// The unit interval is cut into consecutive left-closed right-open pieces of
/// width `q_{αβ}(x) h` in increasing `β` order (skipping `β = α`); the draw
/// `u` selects the piece it falls into, or keeps `α` beyond the total width.
/// Negative widths (invalid models) are clamped to zero rather than shifting
/// later intervals.
pub fn sample_switch(model: &SwitchingModel, x: &[f64], alpha: usize, h: f64, u: f64) -> usize {
    debug_assert!((0.0..1.0).contains(&u));
    let m = model.num_modes();
    let mut upper = 0.0;
    for beta in 0..m {
        if beta == alpha {
            continue;
        }
        if let Some(field) = model.intensity(alpha, beta) {
            let width = (field.eval(x) * h).max(0.0);
            upper += width;
            if u < upper {
                return beta;
            }
        }
    }
    alpha
}

/// Simulate one micro path over `t_horizon / ε²`.
pub fn simulate_micro_path(
    model: &SwitchingModel,
    config: &SimConfig,
    path_id: u64,
) -> Result<PathSample> {
    config.validate(model)?;
    simulate_micro_path_unchecked(model, config, path_id)
}

fn simulate_micro_path_unchecked(
    model: &SwitchingModel,
    config: &SimConfig,
    path_id: u64,
) -> Result<PathSample> {
    let d = model.dim();
    let r = model.brownian_dim();
    let h = config.h_micro;
    let sqrt_h = h.sqrt();
    let n_steps = config.n_steps();
    let stride = config.record_stride;

    let mut rng = path_rng(config.seed, path_id);
    let mut x = config.x0.clone();
    let mut alpha = config.mode0;

    let mut xw = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * r];
    let mut xi = vec![0.0; r];

    let capacity = n_steps / stride + 2;
    let mut times = Vec::with_capacity(capacity);
    let mut positions = Vec::with_capacity(capacity * d);
    let mut modes = Vec::with_capacity(capacity);
    let mut record = |step: usize, x: &[f64], alpha: usize| {
        times.push(step as f64 * h);
        positions.extend_from_slice(x);
        modes.push(alpha as u16);
    };
    record(0, &x, alpha);

    for step in 0..n_steps {
        // Coefficients see the wrapped pre-step position.
        for j in 0..d {
            xw[j] = wrap(x[j]);
        }
        model.eval_drift_into(&xw, alpha, &mut b);
        model.eval_sigma_into(&xw, alpha, &mut sigma);
        for l in 0..r {
            xi[l] = rng.sample(StandardNormal);
        }
        for j in 0..d {
            let mut noise = 0.0;
            for l in 0..r {
                noise += sigma[j * r + l] * xi[l];
            }
            x[j] += b[j] * h + sqrt_h * noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { path_id, step });
        }
        // One uniform per step decides the switch (drawn even when it
        // cannot fire, to keep the stream layout model-independent).
        let u: f64 = rng.gen();
        alpha = sample_switch(model, &xw, alpha, h, u);

        let s = step + 1;
        if s % stride == 0 || s == n_steps {
            record(s, &x, alpha);
        }
    }

    Ok(PathSample {
        path_id,
        d,
        times,
        positions,
        modes,
    })
}

/// Simulate `n_paths` micro paths in parallel and map each through `f`
/// immediately (so full-resolution paths never accumulate in memory).
/// Results come back ordered by path id; the path-wise RNG streams make the
/// ensemble independent of the thread schedule.
pub fn run_paths<T, F>(model: &SwitchingModel, config: &SimConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(PathSample) -> Result<T> + Sync,
{
    config.validate(model)?;
    (0..config.n_paths as u64)
        .into_par_iter()
        .map(|path_id| simulate_micro_path_unchecked(model, config, path_id).and_then(&f))
        .collect()
}
