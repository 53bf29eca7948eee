//! Built-in benchmark models.
//!
//! Each preset is a small switching diffusion whose effective behavior is
//! either known in closed form (the first three) or pinned by grid
//! refinement (the last):
//!
//! * [`constant`] — one mode, constant coefficients; `m` uniform, `Φ = 0`,
//!   `b̄ = b`, `C = σσᵀ`.
//! * [`harmonic_mean`] — one mode, `b = 0`, `a(x) = 2 + sin(2πx)`;
//!   `m = √3/a` and `C = (∫ 1/a)⁻¹ = √3`, the classical harmonic-mean
//!   diffusivity.
//! * [`telegraph`] — two modes with opposite unit drifts, constant switching
//!   at rate 1 and small diffusion `a = 0.1`; the corrector is `∓1/2` and
//!   `C = 0.1 + 1.0` splits into diffusive and switching parts.
//! * [`two_mode_periodic`] — two modes with spatially varying drift,
//!   diffusion, and intensities; no closed form, used for refinement
//!   self-consistency and positivity structure.

use crate::error::{Error, Result};
use crate::model::{FieldSpec, ModeCoefficients, SwitchingModel};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = [
    "constant",
    "harmonic-mean",
    "telegraph",
    "two-mode-periodic",
];

/// Look up a preset by its kebab-case name.
pub fn preset(name: &str) -> Result<SwitchingModel> {
    match name {
        "constant" => Ok(constant()),
        "harmonic-mean" => Ok(harmonic_mean()),
        "telegraph" => Ok(telegraph()),
        "two-mode-periodic" => Ok(two_mode_periodic()),
        other => Err(Error::param(
            "preset",
            format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            ),
        )),
    }
}

/// Single mode, `b = 0.5`, `σ = 1.1` in one dimension.
pub fn constant() -> SwitchingModel {
    SwitchingModel::new(
        1,
        1,
        vec![ModeCoefficients {
            drift: vec![FieldSpec::uniform(0.5)],
            sigma: vec![FieldSpec::uniform(1.1)],
        }],
        vec![],
    )
    .expect("constant preset is well-formed")
}

/// Single mode, zero drift, `a(x) = 2 + sin(2πx)`.
///
/// The trinomial `2 + sin` is not the square of any real trigonometric
/// polynomial, so the diffusion is written with two Brownian driving
/// directions: `σ(x) = [r₀ + r₁ sin(2πx), −r₁ cos(2πx)]` with
/// `r₀ = (1+√3)/2`, `r₁ = (√3−1)/2`. Then `r₀² + r₁² = 2` and `2r₀r₁ = 1`,
/// giving `σσᵀ = 2 + sin(2πx)` exactly.
pub fn harmonic_mean() -> SwitchingModel {
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
    .expect("harmonic-mean preset is well-formed")
}

/// Two modes, drifts `±1`, diffusion `a = 0.1`, switching at constant rate 1
/// in both directions.
pub fn telegraph() -> SwitchingModel {
    let sigma = 0.1f64.sqrt();
    SwitchingModel::new(
        1,
        1,
        vec![
            ModeCoefficients {
                drift: vec![FieldSpec::uniform(1.0)],
                sigma: vec![FieldSpec::uniform(sigma)],
            },
            ModeCoefficients {
                drift: vec![FieldSpec::uniform(-1.0)],
                sigma: vec![FieldSpec::uniform(sigma)],
            },
        ],
        vec![
            (0, 1, FieldSpec::uniform(1.0)),
            (1, 0, FieldSpec::uniform(1.0)),
        ],
    )
    .expect("telegraph preset is well-formed")
}

/// Two modes with fully position-dependent coefficients.
///
/// Mode 0: `b = 0.5 + 0.3 sin(2πx)`, `σ = 1 + 0.25 sin(2πx)`.
/// Mode 1: `b = −0.5 + 0.3 cos(2πx)`, `σ = 0.9 − 0.2 cos(2πx)`.
/// Intensities `q₀₁ = 1 + 0.5 sin(2πx)`, `q₁₀ = 1.2 − 0.4 cos(2πx)`.
///
/// Every coefficient stays strictly positive (σ ≥ 0.7, q ≥ 0.5), so the
/// model passes validation on any grid; there is no closed form for its
/// effective coefficients.
pub fn two_mode_periodic() -> SwitchingModel {
    SwitchingModel::new(
        1,
        1,
        vec![
            ModeCoefficients {
                drift: vec![FieldSpec::with_term(0.5, vec![1], 0.0, 0.3)],
                sigma: vec![FieldSpec::with_term(1.0, vec![1], 0.0, 0.25)],
            },
            ModeCoefficients {
                drift: vec![FieldSpec::with_term(-0.5, vec![1], 0.3, 0.0)],
                sigma: vec![FieldSpec::with_term(0.9, vec![1], -0.2, 0.0)],
            },
        ],
        vec![
            (0, 1, FieldSpec::with_term(1.0, vec![1], 0.0, 0.5)),
            (1, 0, FieldSpec::with_term(1.2, vec![1], -0.4, 0.0)),
        ],
    )
    .expect("two-mode-periodic preset is well-formed")
}
