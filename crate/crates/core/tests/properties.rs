mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sdemor::diagnostics::{GapMetric, LipschitzSign};
use sdemor::linalg::{smat, svec};
use sdemor::lyapunov::LyapunovOperator;
use sdemor::Nonlinearity;

fn sym_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        &m + m.transpose()
    })
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0f64..2.0, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_linear_and_symmetric(x in sym_matrix(4), y in sym_matrix(4), a in -3.0f64..3.0) {
        let sys = diffusion(4, Nonlinearity::f2());
        let op = LyapunovOperator::new(&sys, 0.3);
        let lhs = op.apply(&(&x * a + &y));
        let rhs = op.apply(&x) * a + op.apply(&y);
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        prop_assert!((&lhs - lhs.transpose()).norm() <= 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn svec_is_an_isometry(x in sym_matrix(5), y in sym_matrix(5)) {
        let (vx, vy) = (svec(&x), svec(&y));
        prop_assert_eq!(vx.len(), 15);
        prop_assert!((smat(&vx, 5) - &x).norm() <= 1e-14 * (1.0 + x.norm()));
        let inner = x.component_mul(&y).sum();
        prop_assert!((vx.dot(&vy) - inner).abs() <= 1e-12 * (1.0 + inner.abs()));
    }

    #[test]
    fn plus_gap_on_the_diagonal_is_four_times_monotonicity(x in vector(3), c2 in -1.0f64..2.0) {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        for f in [Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()] {
            for inv in [false, true] {
                let g = GapMetric::new(&m, inv).unwrap();
                let mono = g.monotonicity(&f, &x, c2);
                let plus = g.lipschitz(&f, LipschitzSign::Plus, &x, &x, c2);
                prop_assert!((plus - 4.0 * mono).abs() <= 1e-12 * (1.0 + mono.abs()));
                prop_assert_eq!(g.lipschitz(&f, LipschitzSign::Minus, &x, &x, c2), 0.0);
            }
        }
    }

    #[test]
    fn minus_form_holds_for_builtins(x in vector(3), z in vector(3)) {
        let g = GapMetric::new(&DMatrix::identity(3, 3), false).unwrap();
        for f in [Nonlinearity::f1(0.1), Nonlinearity::f2(), Nonlinearity::f3()] {
            let c = f.c_lip_minus.unwrap();
            let d = (&x - &z).norm_squared();
            prop_assert!(g.lipschitz(&f, LipschitzSign::Minus, &x, &z, c) <= 1e-12 * (1.0 + d));
        }
    }
}
