mod common;

use common::oracle::seeded;
use nalgebra::{DVector, Matrix4};
use proptest::prelude::*;
use rand::Rng;
use sotbt::kinematics::{finite_difference_jacobian, ManipulatorModel};

fn random_q(model: &ManipulatorModel, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        model.dof(),
        model.joints().iter().map(|j| rng.random_range(j.lower..j.upper)),
    )
}

/// Max entry error scaled by the largest reference entry.
fn relative_error(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-12)
}

fn models() -> Vec<ManipulatorModel> {
    vec![
        ManipulatorModel::panda(),
        ManipulatorModel::planar(&[0.8]).unwrap(),
        ManipulatorModel::planar(&[0.6, 0.4]).unwrap(),
        ManipulatorModel::planar(&[1.0, 1.0, 0.5]).unwrap(),
    ]
}

/// Plain 4x4 homogeneous product for a z-axis planar chain.
fn planar_oracle(lengths: &[f64], q: &[f64]) -> [f64; 3] {
    let mut t = Matrix4::<f64>::identity();
    for (i, &theta) in q.iter().enumerate() {
        let shift = if i == 0 { 0.0 } else { lengths[i - 1] };
        let (s, c) = theta.sin_cos();
        let link = Matrix4::new(
            c, -s, 0.0, shift, //
            s, c, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        t *= link;
    }
    let tip = t * nalgebra::Vector4::new(*lengths.last().unwrap(), 0.0, 0.0, 1.0);
    [tip.x, tip.y, tip.z]
}

#[test]
fn planar_arm_matches_transform_chain() {
    let lengths = [1.0, 1.0, 0.5];
    let model = ManipulatorModel::planar(&lengths).unwrap();
    let q = [0.3, -0.2, 0.1];
    let pose = model.forward_kinematics(&DVector::from_row_slice(&q)).unwrap();
    let expected = planar_oracle(&lengths, &q);
    for k in 0..3 {
        assert!((pose.position[k] - expected[k]).abs() < 1e-14);
    }
    // closed form as a second check
    let x = 1.0 * 0.3f64.cos() + 1.0 * 0.1f64.cos() + 0.5 * 0.2f64.cos();
    assert!((pose.position.x - x).abs() < 1e-14);
}

#[test]
fn analytic_jacobians_match_central_differences() {
    let mut rng = seeded(7);
    for model in models() {
        for _ in 0..100 {
            let q = random_q(&model, &mut rng);
            let analytic = model.position_jacobian(&q).unwrap();
            let numeric = finite_difference_jacobian(
                |x| DVector::from_column_slice(model.forward_kinematics(x).unwrap().position.as_slice()),
                &q,
                1e-6,
            )
            .unwrap();
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-5, "{}: relative error {err:.3e}", model.name());
        }
    }
}

#[test]
fn angular_rows_match_orientation_rate() {
    let model = ManipulatorModel::panda();
    let mut rng = seeded(8);
    for _ in 0..50 {
        let q = random_q(&model, &mut rng);
        let jac = model.geometric_jacobian(&q).unwrap();
        let base = model.forward_kinematics(&q).unwrap().orientation;
        let h = 1e-6;
        for j in 0..model.dof() {
            let mut qp = q.clone();
            qp[j] += h;
            let mut qm = q.clone();
            qm[j] -= h;
            let rp = model.forward_kinematics(&qp).unwrap().orientation * base.inverse();
            let rm = model.forward_kinematics(&qm).unwrap().orientation * base.inverse();
            let omega = (rp.scaled_axis() - rm.scaled_axis()) / (2.0 * h);
            for k in 0..3 {
                assert!((jac[(3 + k, j)] - omega[k]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn model_round_trip_is_bit_exact() {
    let mut rng = seeded(9);
    for model in models() {
        let text = model.to_toml().unwrap();
        let reloaded = ManipulatorModel::from_toml(&text).unwrap();
        for _ in 0..10 {
            let q = random_q(&model, &mut rng);
            let a = model.forward_kinematics(&q).unwrap();
            let b = reloaded.forward_kinematics(&q).unwrap();
            assert_eq!(a.position, b.position);
            assert_eq!(a.orientation, b.orientation);
        }
    }
}

#[test]
fn model_file_rejects_unknown_keys() {
    let text = ManipulatorModel::panda().to_toml().unwrap();
    let bad = text.replacen("name = \"panda\"", "name = \"panda\"\ncolour = \"white\"", 1);
    assert!(ManipulatorModel::from_toml(&bad).is_err());
    let bad_joint = text.replacen("velocity = 2.175", "velocity = 2.175\nmass = 3.0", 1);
    assert!(ManipulatorModel::from_toml(&bad_joint).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_kinematics_is_lipschitz(
        seed in any::<u64>(),
        delta in prop::collection::vec(-1.0f64..1.0, 7),
        scale in 1e-6f64..1e-3,
    ) {
        let model = ManipulatorModel::panda();
        let mut rng = seeded(seed);
        let q = random_q(&model, &mut rng);
        let d = DVector::from_vec(delta);
        let d = if d.norm() > 0.0 { d.normalize() * scale } else { d };
        let jac = model.position_jacobian(&q).unwrap();
        // spectral norm: the max column norm does not bound |J d| / |d|
        let gain = jac.singular_values().max();
        let x0 = model.forward_kinematics(&q).unwrap().position;
        let x1 = model.forward_kinematics(&(&q + &d)).unwrap().position;
        prop_assert!((x1 - x0).norm() <= (gain + 0.1) * d.norm());
    }
}
