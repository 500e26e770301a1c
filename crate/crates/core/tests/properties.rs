use proptest::prelude::*;

use tsfc::fuzzy::{build_vertex_models, compute_bounds, scheduling_values, StateRanges, TsModel};
use tsfc::numerics::{cholesky, rk4_step, sym_eigen, Matrix, SymMatrix, DEFAULT_EIGEN_TOL};
use tsfc::plant::{friction_coefficient, friction_torque, FrictionParams, Plant, RobotState};

fn sym_from(order: usize, seed: &[f64]) -> SymMatrix {
    let mut data = vec![0.0; order * order];
    let mut k = 0;
    for i in 0..order {
        for j in i..order {
            data[i * order + j] = seed[k];
            data[j * order + i] = seed[k];
            k += 1;
        }
    }
    SymMatrix::new(order, data).unwrap()
}

fn sym_strategy() -> impl Strategy<Value = SymMatrix> {
    (2usize..=6).prop_flat_map(|n| {
        prop::collection::vec(-10.0f64..10.0, n * (n + 1) / 2).prop_map(move |v| sym_from(n, &v))
    })
}

fn default_model() -> (Plant, TsModel) {
    let plant = Plant::default();
    let bounds = compute_bounds(&StateRanges::default(), &plant).unwrap().bounds;
    let model = build_vertex_models(&bounds, &plant).unwrap();
    (plant, model)
}

fn in_box_state() -> impl Strategy<Value = RobotState> {
    let r = StateRanges::default();
    let p = r.position[0]..r.position[1];
    let v = r.velocity[0]..r.velocity[1];
    (p.clone(), p.clone(), p, v.clone(), v.clone(), v).prop_map(|(a, b, c, d, e, f)| RobotState([a, b, c, d, e, f]))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eigen_decomposition_reconstructs(s in sym_strategy()) {
        let n = s.order();
        let e = sym_eigen(&s, DEFAULT_EIGEN_TOL).unwrap();
        let v = &e.vectors;
        let rebuilt = v.matmul(&Matrix::diag(&e.values)).matmul(&v.transpose());
        let scale = 1.0 + s.as_matrix().max_abs();
        prop_assert!(rebuilt.sub(s.as_matrix()).max_abs() <= 1e-9 * scale);
        prop_assert!(v.transpose().matmul(v).sub(&Matrix::identity(n)).max_abs() <= 1e-10);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cholesky_succeeds_iff_positive_definite(s in sym_strategy(), shift in -5.0f64..5.0) {
        let n = s.order();
        let shifted = SymMatrix::from_matrix(&s.as_matrix().add(&Matrix::identity(n).scale(shift))).unwrap();
        let lmin = sym_eigen(&shifted, DEFAULT_EIGEN_TOL).unwrap().min();
        let scale = shifted.as_matrix().max_abs();
        // skip the numerically ambiguous band around singularity
        prop_assume!(lmin.abs() > 1e-8 * scale);
        match cholesky(&shifted) {
            Ok(l) => {
                prop_assert!(lmin > 0.0);
                prop_assert!(l.matmul(&l.transpose()).sub(shifted.as_matrix()).max_abs() <= 1e-10 * (1.0 + scale));
            }
            Err(_) => prop_assert!(lmin < 0.0),
        }
    }

    #[test]
    fn state_dependent_matrix_is_exact(x in in_box_state(), tau in -1e3f64..1e3) {
        let plant = Plant::default();
        let f = plant.dynamics(&x, tau);
        let mut lin = plant.a_matrix(&x).mul_vec(&x.0);
        lin[3] += plant.input_column()[(3, 0)] * tau;
        let diff: Vec<f64> = lin.iter().zip(f).map(|(a, b)| a - b).collect();
        prop_assert!(inf_norm(&diff) <= 1e-9 * (1.0 + inf_norm(&f)));
    }

    #[test]
    fn fuzzy_blend_reconstructs_dynamics(x in in_box_state(), tau in -1e3f64..1e3) {
        let (plant, model) = default_model();
        let f = plant.dynamics(&x, tau);
        let mut lin = model.blend(&x, &plant).mul_vec(&x.0);
        lin[3] += model.input_column[(3, 0)] * tau;
        let diff: Vec<f64> = lin.iter().zip(f).map(|(a, b)| a - b).collect();
        prop_assert!(inf_norm(&diff) <= 1e-9 * (1.0 + inf_norm(&f)));
    }

    #[test]
    fn weights_partition_unity(x in in_box_state()) {
        let (plant, model) = default_model();
        let w = model.weights(&x, &plant);
        prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(w.0.iter().all(|v| *v >= -1e-15));
        prop_assert!(model.bounds.contains(&scheduling_values(&x, &plant), 1e-12));
    }

    #[test]
    fn friction_is_odd_and_secant_consistent(omega in -50.0f64..50.0) {
        let fp = FrictionParams::default();
        prop_assert_eq!(friction_torque(-omega, &fp), -friction_torque(omega, &fp));
        prop_assert_eq!(friction_coefficient(-omega, &fp), friction_coefficient(omega, &fp));
        let t = friction_torque(omega, &fp);
        prop_assert!((friction_coefficient(omega, &fp) * omega - t).abs() <= 1e-12 * (1.0 + t.abs()));
    }

    #[test]
    fn lossless_plant_conserves_energy(x in in_box_state()) {
        let mut plant = Plant::default();
        plant.params.d_gb = 0.0;
        plant.params.d_arm = 0.0;
        plant.friction = FrictionParams {
            coulomb_level: 0.0,
            static_level: 0.0,
            viscous_coeff: 0.0,
            ..FrictionParams::default()
        };
        // keep the spring moderate so a fixed step resolves it
        let x = RobotState(x.0.map(|v| v * 0.05));
        let e0 = plant.mechanical_energy(&x);
        let mut y = x.0.to_vec();
        for _ in 0..2000 {
            y = rk4_step(|s| plant.dynamics(&RobotState::from_slice(s), 0.0).to_vec(), &y, 1e-5).unwrap();
        }
        let e1 = plant.mechanical_energy(&RobotState::from_slice(&y));
        prop_assert!((e1 - e0).abs() <= 1e-6 * (1.0 + e0));
    }
}

#[test]
fn rk4_is_fourth_order_on_decay() {
    let err = |h: f64| {
        let steps = (1.0 / h).round() as usize;
        let mut x = vec![1.0];
        for _ in 0..steps {
            x = rk4_step(|y| vec![-y[0]], &x, h).unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    };
    let (e1, e2, e3) = (err(0.1), err(0.05), err(0.025));
    for ratio in [e1 / e2, e2 / e3] {
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }
}
