//! Effective dynamics of spatially periodic switching diffusions.
//!
//! The object of study is a pair `(X_t, I_t)` where `X_t ∈ ℝ^d` diffuses with
//! mode-dependent drift `b(x, α)` and diffusion `σ(x, α)`, and the mode
//! `I_t ∈ {1, …, m}` jumps between regimes with position-dependent intensities
//! `q_{αβ}(x)`. All coefficients are 1-periodic in `x`, so under diffusive
//! rescaling `X^ε_t = ε X_{t/ε²}` the process homogenizes: there is a constant
//! effective drift `b̄` and covariance `C` such that `X^ε_t − b̄ t/ε` converges
//! to a Brownian motion with covariance `C`.
//!
//! This crate computes `b̄` and `C` by solving two linear problems posed on the
//! flat torus `𝕋^d × {1, …, m}`:
//!
//! * the invariant density `m(x, α)` of the generator adjoint, `ℒ* m = 0`;
//! * the cell problem `ℒ Φ_k = b_k − b̄_k` for the corrector `Φ`.
//!
//! Both are discretized with second-order periodic finite differences
//! ([`operators`]), solved sparsely ([`linsolve`], [`homogenize`]), and the
//! resulting coefficients can be checked against direct Monte Carlo simulation
//! of the rescaled process ([`simulate`], [`verify`]). Ready-made benchmark
//! models with known closed forms live in [`presets`].

pub mod error;
pub mod grid;
pub mod homogenize;
pub mod linsolve;
pub mod model;
pub mod operators;
pub mod presets;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
