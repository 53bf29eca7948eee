//! Monte Carlo verification of the homogenized limit.
//!
//! The solver side of the library predicts an effective drift `b̄` and
//! covariance `C`; this module checks those predictions against simulated
//! ensembles in four independent ways:
//!
//! * **terminal covariance** — the rescaled displacement
//!   `Y = X^ε_T − b̄T/ε` has covariance `≈ C·T`
//!   ([`estimate_covariance`]);
//! * **ergodic averages** — time averages of an observable `g(x, α)` along a
//!   micro path converge to the invariant-measure average
//!   `ḡ = Σ_α ∫ g(·,α) m_α` ([`ergodic_average`]);
//! * **cross-variation** — the martingale part
//!   `M^ε_t = (X^ε_t − b̄t/ε) − X^ε_0 − ε[Φ(X^ε_t/ε, I_t) − Φ(X^ε_0/ε, I_0)]`
//!   has realized covariation matching the time integral of
//!   `(I−DΦ)a(I−DΦ)ᵀ + 𝒬(Φ_k, Φ_l)` along the path
//!   ([`crossvariation_check`]);
//! * **scaling** — the L² ergodic error decays like `O(ε)` as `ε` halves
//!   ([`ergodic_scaling_test`]).
//!
//! All statistics are deterministic given `(seed, config)`: paths draw from
//! per-path RNG streams and ensemble reductions run in path-id order with
//! compensated summation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{CompensatedAcc, TorusGrid};
use crate::homogenize::Corrector;
use crate::model::SwitchingModel;
use crate::simulate::{run_paths, PathSample, SimConfig};

/// An observable `g(x, α)` over the torus × mode space, `x` wrapped.
pub type Observable<'a> = &'a (dyn Fn(&[f64], usize) -> f64 + Sync);

/// Terminal-displacement covariance estimate.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub n_paths: usize,
    pub t_horizon: f64,
    /// Ensemble mean of `Y = X^ε_T − b̄T/ε` per component.
    pub mean: Vec<f64>,
    /// Standard error of `mean`.
    pub mean_stderr: Vec<f64>,
    /// Sample covariance of `{Y_p}` divided by `T`.
    pub covariance: DMatrix<f64>,
    /// Statistical error of each covariance entry from the Gaussian
    /// fourth-moment formula `Var[Ĉ_kl] ≈ (Ĉ_kk·Ĉ_ll + Ĉ_kl²)/n`.
    pub stderr: DMatrix<f64>,
}

/// Estimate the effective covariance from rescaled (macro-time) paths.
///
/// Every path must start at the origin so that `X^ε_0 = 0`, and must cover
/// `[0, t_horizon]`. The drift compensation uses each path's actual terminal
/// time (within one micro step of `t_horizon`).
pub fn estimate_covariance(
    paths: &[PathSample],
    b_bar: &[f64],
    epsilon: f64,
    t_horizon: f64,
) -> Result<CovarianceEstimate> {
    if paths.len() < 2 {
        return Err(Error::TooFewPaths {
            got: paths.len(),
            need: 2,
        });
    }
    if !(t_horizon > 0.0) {
        return Err(Error::param("t_horizon", "must be positive"));
    }
    let d = paths[0].dim();
    if b_bar.len() != d {
        return Err(Error::dim("b_bar", d, b_bar.len()));
    }
    let n = paths.len();

    let mut displacements = vec![0.0; n * d];
    for (p, path) in paths.iter().enumerate() {
        let start_norm: f64 = path.position(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        if start_norm > 1e-14 {
            return Err(Error::NonzeroStart { norm: start_norm });
        }
        let t_end = path.last_time();
        if t_end < t_horizon * (1.0 - 1e-12) {
            return Err(Error::HorizonShortfall {
                have: t_end,
                need: t_horizon,
            });
        }
        let x_end = path.position(path.num_samples() - 1);
        for k in 0..d {
            displacements[p * d + k] = x_end[k] - b_bar[k] * t_end / epsilon;
        }
    }

    let mut mean = vec![0.0; d];
    for (k, mk) in mean.iter_mut().enumerate() {
        let mut acc = CompensatedAcc::default();
        for p in 0..n {
            acc.add(displacements[p * d + k]);
        }
        *mk = acc.value() / n as f64;
    }

    let mut cov = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in k..d {
            let mut acc = CompensatedAcc::default();
            for p in 0..n {
                acc.add(
                    (displacements[p * d + k] - mean[k]) * (displacements[p * d + l] - mean[l]),
                );
            }
            let c = acc.value() / ((n - 1) as f64 * t_horizon);
            cov[(k, l)] = c;
            cov[(l, k)] = c;
        }
    }

    let mut stderr = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let var = (cov[(k, k)] * cov[(l, l)] + cov[(k, l)] * cov[(k, l)]) / n as f64;
            stderr[(k, l)] = var.max(0.0).sqrt();
        }
    }
    let mean_stderr = (0..d)
        .map(|k| (cov[(k, k)].max(0.0) * t_horizon / n as f64).sqrt())
        .collect();

    Ok(CovarianceEstimate {
        n_paths: n,
        t_horizon,
        mean,
        mean_stderr,
        covariance: cov,
        stderr,
    })
}

/// Simulate an ensemble, rescale diffusively, and estimate the covariance.
///
/// Only the initial and final states are recorded per path, so arbitrarily
/// long micro horizons stay memory-light.
pub fn covariance_experiment(
    model: &SwitchingModel,
    config: &SimConfig,
    b_bar: &[f64],
) -> Result<CovarianceEstimate> {
    let mut cfg = config.clone();
    cfg.record_stride = cfg.n_steps().max(1);
    let macro_paths = run_paths(model, &cfg, |p| p.rescale(cfg.epsilon, cfg.t_horizon))?;
    estimate_covariance(&macro_paths, b_bar, cfg.epsilon, cfg.t_horizon)
}

/// Left-endpoint time average of `g` along a micro path over `[0, t_micro]`.
///
/// Uses the recorded increments `g(X_s, I_s)·(s' − s)` normalized by the
/// covered time, so constants average to themselves to roundoff; with
/// `record_stride = 1` this is the rule at the simulation step.
pub fn ergodic_average(path: &PathSample, g: Observable, t_micro: f64) -> Result<f64> {
    if !(t_micro > 0.0) {
        return Err(Error::param("t_micro", "must be positive"));
    }
    if path.last_time() < t_micro * (1.0 - 1e-12) {
        return Err(Error::HorizonShortfall {
            have: path.last_time(),
            need: t_micro,
        });
    }
    let cutoff = t_micro * (1.0 + 1e-12);
    let mut num = CompensatedAcc::default();
    let mut den = CompensatedAcc::default();
    for i in 0..path.num_samples() - 1 {
        let t_next = path.time(i + 1);
        if t_next > cutoff {
            break;
        }
        let dt = t_next - path.time(i);
        num.add(g(path.position(i), path.mode(i)) * dt);
        den.add(dt);
    }
    if den.value() <= 0.0 {
        return Err(Error::param("t_micro", "shorter than one recorded step"));
    }
    Ok(num.value() / den.value())
}

/// Cross-variation comparison over an ensemble.
#[derive(Debug, Clone)]
pub struct CrossvariationReport {
    pub n_paths: usize,
    /// Ensemble mean of the realized covariation `Σ ΔM ΔMᵀ` over `[0, T]`.
    pub realized: DMatrix<f64>,
    /// Ensemble mean of the predicted covariation
    /// `∫ (I−DΦ)a(I−DΦ)ᵀ + 𝒬(Φ,Φ) dt` along the same paths.
    pub predicted: DMatrix<f64>,
    /// Frobenius-relative difference of the two ensemble means.
    pub rel_error: f64,
    /// Ensemble mean of the terminal martingale `M^ε_T` per component.
    pub martingale_mean: Vec<f64>,
    /// Standard error of `martingale_mean`.
    pub martingale_stderr: Vec<f64>,
}

impl CrossvariationReport {
    /// Is each component of the terminal martingale mean within
    /// `sigmas` standard errors of zero?
    pub fn martingale_mean_ok(&self, sigmas: f64) -> bool {
        self.martingale_mean
            .iter()
            .zip(&self.martingale_stderr)
            .all(|(m, se)| m.abs() <= sigmas * se)
    }
}

/// Per-path realized/predicted covariation and terminal martingale value.
struct PathCovariation {
    realized: Vec<f64>,
    predicted: Vec<f64>,
    m_terminal: Vec<f64>,
}

fn path_covariation(
    path: &PathSample,
    model: &SwitchingModel,
    grid: &TorusGrid,
    corrector: &Corrector,
    b_bar: &[f64],
    epsilon: f64,
) -> PathCovariation {
    let d = model.dim();
    let r = model.brownian_dim();
    let m = model.num_modes();
    let eps2 = epsilon * epsilon;
    let n = path.num_samples();

    let mut phi = vec![0.0; d * m]; // phi[k·m + β] = Φ_k at (x, β)
    let mut phi0 = vec![0.0; d];
    let mut sigma = vec![0.0; d * r];
    let mut a = vec![0.0; d * d];
    let mut imd = vec![0.0; d * d]; // I − DΦ at (x, α)
    let mut m_prev = vec![0.0; d];
    let mut m_curr = vec![0.0; d];
    let mut realized = vec![0.0; d * d];
    let mut predicted = vec![0.0; d * d];

    let x0 = path.position(0).to_vec();
    for i in 0..n {
        let x = path.position(i);
        let alpha = path.mode(i);
        let s = path.time(i);

        for k in 0..d {
            for beta in 0..m {
                phi[k * m + beta] = corrector.components[k].interpolate(grid, x, beta);
            }
        }
        if i == 0 {
            for k in 0..d {
                phi0[k] = phi[k * m + alpha];
            }
        }
        // M^ε at macro time ε²s, written in micro variables:
        // M = ε[(X_s − X_0) − b̄ s − (Φ(X_s, I_s) − Φ(X_0, I_0))].
        for k in 0..d {
            m_curr[k] = epsilon * ((x[k] - x0[k]) - b_bar[k] * s - (phi[k * m + alpha] - phi0[k]));
        }
        if i > 0 {
            for k in 0..d {
                for l in 0..d {
                    realized[k * d + l] += (m_curr[k] - m_prev[k]) * (m_curr[l] - m_prev[l]);
                }
            }
        }
        m_prev.copy_from_slice(&m_curr);

        if i + 1 == n {
            break;
        }
        // Predicted covariation rate at the left endpoint:
        // (I−DΦ) a (I−DΦ)ᵀ + Σ_β q_{αβ} ΔΦ_k ΔΦ_l, integrated in macro time.
        let dt_macro = eps2 * (path.time(i + 1) - s);
        model.eval_sigma_into(x, alpha, &mut sigma);
        for j in 0..d {
            for jj in 0..d {
                let mut s_jj = 0.0;
                for l in 0..r {
                    s_jj += sigma[j * r + l] * sigma[jj * r + l];
                }
                a[j * d + jj] = s_jj;
            }
        }
        for k in 0..d {
            for j in 0..d {
                let dkj = corrector.gradients[k][j].interpolate(grid, x, alpha);
                imd[k * d + j] = if k == j { 1.0 - dkj } else { -dkj };
            }
        }
        for k in 0..d {
            for l in 0..d {
                let mut diff = 0.0;
                for j in 0..d {
                    for jj in 0..d {
                        diff += imd[k * d + j] * a[j * d + jj] * imd[l * d + jj];
                    }
                }
                let mut jump = 0.0;
                for beta in 0..m {
                    if beta == alpha {
                        continue;
                    }
                    let q = model.eval_intensity(x, alpha, beta);
                    if q != 0.0 {
                        jump += q
                            * (phi[k * m + beta] - phi[k * m + alpha])
                            * (phi[l * m + beta] - phi[l * m + alpha]);
                    }
                }
                predicted[k * d + l] += (diff + jump) * dt_macro;
            }
        }
    }

    PathCovariation {
        realized,
        predicted,
        m_terminal: m_curr,
    }
}

/// Frobenius-relative difference `‖a − b‖_F / ‖b‖_F`, zero when both vanish.
pub fn frobenius_rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale <= 1e-14 {
        if diff <= 1e-14 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

/// Simulate an ensemble at full resolution and compare realized against
/// predicted covariation of the martingale part.
///
/// Needs `record_stride = 1`: the realized covariation is a sum over every
/// micro step.
pub fn crossvariation_check(
    model: &SwitchingModel,
    grid: &TorusGrid,
    corrector: &Corrector,
    b_bar: &[f64],
    config: &SimConfig,
) -> Result<CrossvariationReport> {
    if config.record_stride != 1 {
        return Err(Error::param(
            "record_stride",
            "cross-variation needs every micro step recorded (record_stride = 1)",
        ));
    }
    if b_bar.len() != model.dim() {
        return Err(Error::dim("b_bar", model.dim(), b_bar.len()));
    }
    if corrector.components.len() != model.dim() {
        return Err(Error::dim(
            "corrector",
            model.dim(),
            corrector.components.len(),
        ));
    }
    let d = model.dim();
    let stats = run_paths(model, config, |p| {
        Ok(path_covariation(
            &p,
            model,
            grid,
            corrector,
            b_bar,
            config.epsilon,
        ))
    })?;
    let n = stats.len();

    let mut realized = DMatrix::zeros(d, d);
    let mut predicted = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let mut racc = CompensatedAcc::default();
            let mut pacc = CompensatedAcc::default();
            for s in &stats {
                racc.add(s.realized[k * d + l]);
                pacc.add(s.predicted[k * d + l]);
            }
            realized[(k, l)] = racc.value() / n as f64;
            predicted[(k, l)] = pacc.value() / n as f64;
        }
    }
    // Both sides are symmetric up to roundoff; enforce it exactly.
    realized = (&realized + realized.transpose()) * 0.5;
    predicted = (&predicted + predicted.transpose()) * 0.5;

    let mut martingale_mean = vec![0.0; d];
    let mut martingale_stderr = vec![0.0; d];
    for k in 0..d {
        let mut acc = CompensatedAcc::default();
        for s in &stats {
            acc.add(s.m_terminal[k]);
        }
        let mu = acc.value() / n as f64;
        let mut var = CompensatedAcc::default();
        for s in &stats {
            var.add((s.m_terminal[k] - mu) * (s.m_terminal[k] - mu));
        }
        martingale_mean[k] = mu;
        martingale_stderr[k] = (var.value() / ((n - 1).max(1) as f64 * n as f64)).sqrt();
    }

    Ok(CrossvariationReport {
        n_paths: n,
        rel_error: frobenius_rel_error(&realized, &predicted),
        realized,
        predicted,
        martingale_mean,
        martingale_stderr,
    })
}

/// RMS ergodic errors across a halving sequence of scale separations.
#[derive(Debug, Clone)]
pub struct ErgodicScaling {
    pub epsilons: Vec<f64>,
    /// RMS over paths of the time-average error at each ε.
    pub rms_errors: Vec<f64>,
    /// Ensemble mean of the time averages at each ε.
    pub mean_averages: Vec<f64>,
    /// The invariant-measure average the time averages converge to.
    pub g_bar: f64,
}

impl ErgodicScaling {
    /// Successive RMS ratios `rms[i] / rms[i+1]`; `O(ε)` decay gives ≈ 2.
    pub fn ratios(&self) -> Vec<f64> {
        self.rms_errors.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

/// For each ε in a halving sequence, simulate `base.n_paths` paths over the
/// macro horizon `base.t_horizon` and measure the RMS deviation of the time
/// average of `g` from `g_bar`.
///
/// The same master seed is reused across ε values (common random numbers),
/// which sharpens the RMS ratios without biasing them.
pub fn ergodic_scaling_test(
    model: &SwitchingModel,
    g: Observable,
    g_bar: f64,
    epsilons: &[f64],
    base: &SimConfig,
) -> Result<ErgodicScaling> {
    if epsilons.len() < 2 {
        return Err(Error::param("epsilons", "need at least two values"));
    }
    for w in epsilons.windows(2) {
        if (w[1] - 0.5 * w[0]).abs() > 1e-9 * w[0] {
            return Err(Error::param(
                "epsilons",
                "each value must halve the previous",
            ));
        }
    }
    let mut rms_errors = Vec::with_capacity(epsilons.len());
    let mut mean_averages = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut cfg = base.clone();
        cfg.epsilon = eps;
        cfg.record_stride = 1;
        let t_micro = cfg.t_horizon / (eps * eps);
        let averages: Vec<f64> = run_paths(model, &cfg, |p| ergodic_average(&p, g, t_micro))?;
        let mut sq = CompensatedAcc::default();
        let mut mean = CompensatedAcc::default();
        for &avg in &averages {
            sq.add((avg - g_bar) * (avg - g_bar));
            mean.add(avg);
        }
        rms_errors.push((sq.value() / averages.len() as f64).sqrt());
        mean_averages.push(mean.value() / averages.len() as f64);
    }
    Ok(ErgodicScaling {
        epsilons: epsilons.to_vec(),
        rms_errors,
        mean_averages,
        g_bar,
    })
}
