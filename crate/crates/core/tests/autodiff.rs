mod common;

use dagoffload::autodiff::{AdError, Checkpoint, Graph, ParamId, Tensor, TensorSet};
use proptest::prelude::*;

use common::{fd_check, primitive_cases, test_matrix};

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, inputs, f) in primitive_cases() {
        let err = fd_check(&inputs, 1e-5, f.as_ref());
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn composite_attention_block_matches_finite_differences() {
    let inputs = vec![test_matrix(4, 6, 1), test_matrix(6, 6, 2), test_matrix(6, 6, 3)];
    let err = fd_check(&inputs, 1e-5, &|g: &mut Graph, v| {
        let q = g.matmul(v[0], v[1])?;
        let k = g.matmul(v[0], v[2])?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, 0.4)?;
        let w = g.softmax(s, 1)?;
        let o = g.matmul(w, v[0])?;
        let o = g.add(o, v[0])?;
        g.layer_norm(o, 1, 1e-5)
    });
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn softmax_survives_large_logits() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1000.0, 999.0, -1e30]).unwrap());
    let y = g.softmax(x, 1).unwrap();
    let l = g.log_softmax(x, 1).unwrap();
    assert!(g.value(y).all_finite());
    assert!((g.value(y).data()[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!(g.value(l).data()[..2].iter().all(|v| v.is_finite()));
}

#[test]
fn division_by_zero_is_reported() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1.0));
    let b = g.constant(Tensor::scalar(0.0));
    assert!(matches!(g.div(a, b), Err(AdError::NonFinite(_))));
}

#[test]
fn checkpoint_preserves_values_bitwise() {
    let t = Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap();
    let ck = Checkpoint { meta: "{\"k\":1}".into(), sections: vec![("s".into(), TensorSet { entries: vec![("t".into(), t.clone())] })] };
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let got = back.section("s").unwrap().get("t").unwrap();
    assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.meta, ck.meta);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_gradient_is_outer_product(rows in 1usize..5, inner in 1usize..5, cols in 1usize..5, salt in any::<u64>()) {
        // d sum(A B) / dA = 1 B^T
        let a = test_matrix(rows, inner, salt);
        let b = test_matrix(inner, cols, salt ^ 1);
        let mut g = Graph::new();
        let av = g.param(ParamId(0), &a);
        let bv = g.constant(b.clone());
        let p = g.matmul(av, bv).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        let ga = grads.param(ParamId(0)).unwrap();
        for r in 0..rows {
            for k in 0..inner {
                let expect: f64 = (0..cols).map(|c| b.at(k, c)).sum();
                prop_assert!((ga.at(r, k) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..6, salt in any::<u64>()) {
        let mut g = Graph::new();
        let x = g.constant(test_matrix(rows, cols, salt));
        let y = g.softmax(x, 1).unwrap();
        for r in 0..rows {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(salt in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x0 = test_matrix(2, 3, salt);
        let grad = |wa: f64, wb: f64| {
            let mut g = Graph::new();
            let x = g.param(ParamId(0), &x0);
            let e = g.exp(x).unwrap();
            let f = g.sum(e).unwrap();
            let n = g.layer_norm(x, 1, 1e-5).unwrap();
            let sq = g.mul(n, n).unwrap();
            let h = g.sum(sq).unwrap();
            let fa = g.scale(f, wa).unwrap();
            let hb = g.scale(h, wb).unwrap();
            let t = g.add(fa, hb).unwrap();
            g.backward(t).unwrap().param(ParamId(0)).unwrap().clone()
        };
        let (c, gf, gh) = (grad(a, b), grad(1.0, 0.0), grad(0.0, 1.0));
        for i in 0..6 {
            prop_assert!((c.data()[i] - (a * gf.data()[i] + b * gh.data()[i])).abs() < 1e-9);
        }
    }
}
