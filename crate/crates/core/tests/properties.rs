//! Property tests for the structural invariants the solvers rely on:
//! periodicity of coefficient fields, conservation (zero row sums) of the
//! generator, exact discrete duality of the adjoint, symmetry and positivity
//! of the carré du champ, and well-formedness of simulated paths.

use proptest::prelude::*;

use swdiff::grid::{compensated_sum, GridFunction, TorusGrid};
use swdiff::model::{wrap, FieldSpec, FieldTerm, ModeCoefficients, SwitchingModel};
use swdiff::operators::{assemble_generator, carre_du_champ};
use swdiff::simulate::{simulate_micro_path, SimConfig};

/// A field with constant part in `constant` and at most two low-wavenumber
/// terms of amplitude below `max_amp`.
fn field_strategy(
    d: usize,
    constant: std::ops::Range<f64>,
    max_amp: f64,
) -> impl Strategy<Value = FieldSpec> {
    let term = (
        prop::collection::vec(-2i64..=2, d),
        -max_amp..max_amp,
        -max_amp..max_amp,
    )
        .prop_map(|(k, c, s)| FieldTerm { k, cos: c, sin: s });
    (constant, prop::collection::vec(term, 0..=2)).prop_map(|(c, terms)| FieldSpec::new(c, terms))
}

/// A strictly positive field: constant well above the total term amplitude.
fn positive_field(d: usize) -> impl Strategy<Value = FieldSpec> {
    field_strategy(d, 0.5..2.0, 0.2)
}

/// A small well-posed switching model: uniformly elliptic, positive
/// intensities, fully coupled modes.
fn model_strategy(d: usize, m: usize) -> impl Strategy<Value = SwitchingModel> {
    let mode = (
        prop::collection::vec(field_strategy(d, -1.0..1.0, 0.5), d),
        prop::collection::vec(positive_field(d), d),
    )
        .prop_map(|(drift, sigma)| ModeCoefficients { drift, sigma });
    let intensities = prop::collection::vec(positive_field(d), m * (m - 1));
    (prop::collection::vec(mode, m), intensities).prop_map(move |(modes, q)| {
        let mut pairs = Vec::new();
        let mut it = q.into_iter();
        for alpha in 0..m {
            for beta in 0..m {
                if alpha != beta {
                    pairs.push((alpha, beta, it.next().unwrap()));
                }
            }
        }
        SwitchingModel::new(d, d, modes, pairs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fields_are_periodic(
        f in field_strategy(2, -3.0..3.0, 3.0),
        x in prop::collection::vec(-4.0f64..4.0, 2),
        shift in prop::collection::vec(-3i64..=3, 2),
    ) {
        let shifted: Vec<f64> = x.iter().zip(&shift).map(|(xi, k)| xi + *k as f64).collect();
        let scale = 1.0 + f.eval(&x).abs();
        prop_assert!((f.eval(&x) - f.eval(&shifted)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn field_gradients_match_finite_differences(
        f in field_strategy(2, -2.0..2.0, 2.0),
        x in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let mut grad = [0.0; 2];
        f.gradient_into(&x, &mut grad);
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
            prop_assert!(
                (grad[j] - fd).abs() <= 1e-4 * (1.0 + grad[j].abs()),
                "axis {}: analytic {} vs fd {}", j, grad[j], fd
            );
        }
    }

    #[test]
    fn intensity_rows_sum_to_zero(
        model in model_strategy(1, 3),
        x in prop::collection::vec(0.0f64..1.0, 1),
    ) {
        for alpha in 0..3 {
            let total: f64 = (0..3).map(|beta| model.eval_intensity(&x, alpha, beta)).sum();
            let scale = model.total_exit_rate(&x, alpha).abs() + 1.0;
            prop_assert!(total.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn generator_rows_sum_to_zero(model in model_strategy(1, 2)) {
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let a = op.matrix();
        let scale = a.inf_norm().max(1.0);
        for i in 0..a.nrows() {
            let row_sum = compensated_sum(a.row(i).1.iter().copied());
            prop_assert!(row_sum.abs() <= 1e-11 * scale, "row {i}: {row_sum}");
        }
    }

    #[test]
    fn wrapping_is_idempotent_and_periodic(x in -50.0f64..50.0, k in -5i64..=5) {
        let w = wrap(x);
        prop_assert!((0.0..1.0).contains(&w));
        prop_assert_eq!(wrap(w), w);
        // Compare as points on the circle: 0 and 1−ulp are neighbors.
        let shifted = wrap(x + k as f64);
        let dist = (shifted - w).abs();
        prop_assert!(dist.min(1.0 - dist) <= 1e-10, "wrap({x}) = {w} vs wrap(+{k}) = {shifted}");
    }

    #[test]
    fn carre_du_champ_is_symmetric_and_nonnegative(
        model in model_strategy(1, 2),
        seed in any::<u64>(),
    ) {
        let grid = TorusGrid::new(&[8]).unwrap();
        // Deterministic pseudo-random grid functions from the seed.
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let f = GridFunction::from_fn(&grid, 2, |_, _| next());
        let g = GridFunction::from_fn(&grid, 2, |_, _| next());
        let qfg = carre_du_champ(&model, &grid, &f, &g).unwrap();
        let qgf = carre_du_champ(&model, &grid, &g, &f).unwrap();
        let qff = carre_du_champ(&model, &grid, &f, &f).unwrap();
        for i in 0..qfg.len() {
            prop_assert!((qfg.values()[i] - qgf.values()[i]).abs() <= 1e-12);
            prop_assert!(qff.values()[i] >= -1e-15);
        }
    }

    #[test]
    fn adjoint_satisfies_exact_duality(
        model in model_strategy(1, 2),
        seed in any::<u64>(),
    ) {
        let grid = TorusGrid::new(&[16]).unwrap();
        let op = assemble_generator(&model, &grid).unwrap();
        let mut state = seed | 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let u = GridFunction::from_fn(&grid, 2, |_, _| next());
        let v = GridFunction::from_fn(&grid, 2, |_, _| next());
        let au = op.apply(&u).unwrap();
        let atv = op.apply_adjoint(&v).unwrap();
        let lhs = compensated_sum(au.values().iter().zip(v.values()).map(|(a, b)| a * b));
        let rhs = compensated_sum(u.values().iter().zip(atv.values()).map(|(a, b)| a * b));
        let scale = lhs.abs().max(rhs.abs()).max(1e-30);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "⟨Au,v⟩ = {lhs} vs ⟨u,Aᵀv⟩ = {rhs}");
    }

    #[test]
    fn interpolation_reproduces_nodal_values(
        n in 4usize..12,
        seed in any::<u64>(),
    ) {
        let grid = TorusGrid::new(&[n]).unwrap();
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let f = GridFunction::from_fn(&grid, 2, |_, _| next());
        let mut x = vec![0.0; 1];
        for node in 0..grid.num_nodes() {
            grid.node_coords_into(node, &mut x);
            for mode in 0..2 {
                let interp = f.interpolate(&grid, &x, mode);
                prop_assert!((interp - f.get(node, mode)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simulated_paths_are_well_formed(
        seed in any::<u64>(),
        stride in 1usize..=7,
    ) {
        let model = swdiff::presets::telegraph();
        let cfg = SimConfig {
            epsilon: 1.0,
            t_horizon: 0.5,
            h_micro: 0.01,
            n_paths: 1,
            seed,
            x0: vec![0.0],
            mode0: 0,
            record_stride: stride,
        };
        let path = simulate_micro_path(&model, &cfg, 0).unwrap();
        prop_assert_eq!(path.time(0), 0.0);
        for i in 1..path.num_samples() {
            prop_assert!(path.time(i) > path.time(i - 1));
            prop_assert!(path.mode(i) < 2);
        }
        prop_assert!(path.last_time() >= 0.5 - 1e-12);
    }

    #[test]
    fn compensated_sums_survive_cancellation(
        smalls in prop::collection::vec(-1.0f64..1.0, 1..40),
        big in 1e12f64..1e15,
    ) {
        let mut xs = vec![big];
        xs.extend_from_slice(&smalls);
        xs.push(-big);
        let total = compensated_sum(xs.iter().copied());
        let reference: f64 = compensated_sum(smalls.iter().copied());
        prop_assert!(
            (total - reference).abs() <= 1e-9 * (1.0 + reference.abs()),
            "compensated {total} vs reference {reference}"
        );
    }
}
