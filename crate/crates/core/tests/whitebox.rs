use graybox::linalg::C64;
use graybox::pulses::{AMPLITUDE_MAX, PULSE_COUNT};
use graybox::whitebox::{
    assemble_vo, chi_of_unitary, control_unitary, expectation, ideal_expectations, process_fidelity, reconstruct_chi,
    OBSERVABLE_COUNT, PREP_COUNT,
};
use graybox::{Mat2, PulseTrain, VOParams};
use proptest::prelude::*;

fn vo_params() -> impl Strategy<Value = VOParams> {
    (0.0..=1.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64)
        .prop_map(|(mu, theta, psi, delta)| VOParams { mu, theta, psi, delta })
}

/// q₀·1 − i(q·σ) for a unit quaternion q.
fn su2() -> impl Strategy<Value = Mat2> {
    prop::array::uniform4(-1.0..1.0f64)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let [a, b, c, d] = q.map(|v| v / n);
            Mat2([[C64::new(a, -d), C64::new(-c, -b)], [C64::new(c, -b), C64::new(a, d)]])
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vo_is_a_contraction(p in vo_params(), o in 0..OBSERVABLE_COUNT) {
        prop_assert!(assemble_vo(&p, o).unwrap().operator_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn expectations_bounded(p in vo_params(), u in su2()) {
        for o in 0..OBSERVABLE_COUNT {
            let vo = assemble_vo(&p, o).unwrap();
            for prep in 0..PREP_COUNT {
                let e = expectation(&vo, &u, prep, o);
                prop_assert!(e.abs() <= 1.0 + 1e-9, "{e}");
            }
        }
    }

    #[test]
    fn chi_round_trip_of_unitary_channels(u in su2()) {
        prop_assert!(u.unitarity_error() < 1e-12);
        let chi = reconstruct_chi(&ideal_expectations(&u));
        let target = chi_of_unitary(&u);
        let f = process_fidelity(&chi, &target);
        prop_assert!((f - 1.0).abs() < 1e-9, "fidelity {f}");
    }

    #[test]
    fn single_axis_control_reverses_under_negation(x in prop::array::uniform5(-AMPLITUDE_MAX..=AMPLITUDE_MAX)) {
        let forward = PulseTrain::new(x, [0.0; PULSE_COUNT]).unwrap();
        let backward = PulseTrain::new(x.map(|a| -a), [0.0; PULSE_COUNT]).unwrap();
        let u = control_unitary(&forward, 500).unwrap();
        let v = control_unitary(&backward, 500).unwrap();
        prop_assert!(v.max_abs_diff(&u.adjoint()) < 1e-10);
    }
}

