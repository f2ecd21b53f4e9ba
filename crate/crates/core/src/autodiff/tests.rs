use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

#[test]
fn sigmoid_of_zero() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn softmax_of_equal_entries() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::row(vec![0.0, 0.0]));
    let y = g.softmax(x, Axis::Cols);
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn matmul_value() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::row(vec![1.0, 2.0]));
    let b = g.input(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::zeros(2, 3));
    let b = g.input(Tensor::zeros(2, 3));
    let err = g.matmul(a, b).unwrap_err();
    match err {
        Error::Dimension { op, lhs, rhs } => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.input(Tensor::zeros(3, 2));
    assert!(matches!(g.add(a, c), Err(Error::Dimension { op: "add", .. })));
}

#[test]
fn square_gradient() {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::row(vec![1.0, 2.0]), true).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param("x").unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get("x").unwrap().data(), &[2.0, 4.0]);
    assert_eq!(g.adjoint(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn tanh_gradient_at_zero() {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::scalar(0.0), true).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param("x").unwrap();
    let y = g.tanh(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get("x").unwrap().item(), 1.0);
}

#[test]
fn backward_requires_scalar_seed_and_runs_once() {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::row(vec![1.0, 2.0]), true).unwrap();
    let mut g = Graph::new(&store);
    let x = g.param("x").unwrap();
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Contract(_))));
}

#[test]
fn unreachable_and_frozen_parameters() {
    let mut store = ParamStore::new();
    store.insert("used", Tensor::scalar(3.0), true).unwrap();
    store.insert("unused", Tensor::zeros(2, 2), true).unwrap();
    store.insert("frozen", Tensor::scalar(5.0), false).unwrap();
    let mut g = Graph::new(&store);
    let a = g.param("used").unwrap();
    let b = g.param("frozen").unwrap();
    let p = g.mul(a, b).unwrap();
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.get("used").unwrap().item(), 5.0);
    assert_eq!(grads.get("unused").unwrap(), &Tensor::zeros(2, 2));
    assert!(grads.get("frozen").is_none());
    assert!(g.adjoint(b).is_none());
}

#[test]
fn logsumexp_is_overflow_safe() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::row(vec![1000.0, 1000.0]));
    let y = g.logsumexp(x, Axis::Cols);
    assert!((g.value(y).item() - (1000.0 + 2f64.ln())).abs() < 1e-9);
}

#[test]
fn dropout_rate_zero_is_identity() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = g.input(Tensor::row(vec![1.0, -2.0, 3.0]));
    let y = g.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(g.value(x), g.value(y));
    assert!(g.dropout(x, 1.0, &mut rng).is_err());
}

/// Builds `sum(op(inputs) * weights)` for a random weight tensor so every
/// output entry contributes to the checked scalar.
fn check_op<F>(shapes: &[(usize, usize)], seed: u64, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        store
            .insert(format!("p{i}"), rand_tensor(&mut rng, r, c), true)
            .unwrap();
    }
    let probe = {
        let mut g = Graph::new(&store);
        let vars: Vec<Var> = (0..shapes.len()).map(|i| g.param(&format!("p{i}")).unwrap()).collect();
        let out = op(&mut g, &vars);
        let (r, c) = (g.value(out).rows(), g.value(out).cols());
        rand_tensor(&mut rng, r, c)
    };
    // the double-double shadow must compute the same function
    {
        let mut g = Graph::precise(&store);
        let vars: Vec<Var> = (0..shapes.len()).map(|i| g.param(&format!("p{i}")).unwrap()).collect();
        let out = op(&mut g, &vars);
        let wide = g.precise_value(out).unwrap();
        for (&v, w) in g.value(out).data().iter().zip(wide) {
            assert!((w.to_f64() - v).abs() <= 1e-14 * v.abs().max(1.0), "{v} vs {w:?}");
        }
    }
    let report = grad_check(&mut store, 1e-5, |g| {
        let vars: Vec<Var> = (0..shapes.len()).map(|i| g.param(&format!("p{i}")).unwrap()).collect();
        let out = op(g, &vars);
        let w = g.input(probe.clone());
        let weighted = g.mul(out, w)?;
        Ok(g.sum(weighted))
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-6, "{report:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..5 {
        check_op(&[(3, 4), (4, 2)], seed, |g, v| g.matmul(v[0], v[1]).unwrap());
        check_op(&[(3, 4), (1, 4)], seed, |g, v| g.add(v[0], v[1]).unwrap());
        check_op(&[(3, 4), (3, 1)], seed, |g, v| g.mul(v[0], v[1]).unwrap());
        check_op(&[(2, 3)], seed, |g, v| g.scale(v[0], -1.7));
        check_op(&[(2, 3)], seed, |g, v| g.sigmoid(v[0]));
        check_op(&[(2, 3)], seed, |g, v| g.tanh(v[0]));
        check_op(&[(3, 4)], seed, |g, v| g.softmax(v[0], Axis::Cols));
        check_op(&[(3, 4)], seed, |g, v| g.softmax(v[0], Axis::Rows));
        check_op(&[(3, 4)], seed, |g, v| g.logsumexp(v[0], Axis::Cols));
        check_op(&[(3, 4)], seed, |g, v| g.logsumexp(v[0], Axis::Rows));
        check_op(&[(3, 4)], seed, |g, v| g.mean(v[0], Axis::Rows));
        check_op(&[(3, 4)], seed, |g, v| g.mean(v[0], Axis::Cols));
        check_op(&[(3, 4)], seed, |g, v| g.sum(v[0]));
        check_op(&[(2, 3), (2, 2)], seed, |g, v| {
            g.concat(&[v[0], v[1]], Axis::Cols).unwrap()
        });
        check_op(&[(2, 3), (1, 3)], seed, |g, v| {
            g.concat(&[v[0], v[1]], Axis::Rows).unwrap()
        });
        check_op(&[(4, 3)], seed, |g, v| g.slice(v[0], Axis::Rows, 1, 2).unwrap());
        check_op(&[(4, 3)], seed, |g, v| g.slice(v[0], Axis::Cols, 1, 2).unwrap());
        check_op(&[(5, 3)], seed, |g, v| g.lookup(v[0], &[4, 0, 4]).unwrap());
        check_op(&[(5, 3)], seed, |g, v| g.max_over_time(v[0]));
        check_op(&[(2, 3)], seed, |g, v| {
            g.dropout_with_mask(v[0], vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0]).unwrap()
        });
        check_op(&[(2, 3)], seed, |g, v| g.transpose(v[0]));
        check_op(&[(2, 3)], seed, |g, v| g.reshape(v[0], 3, 2).unwrap());
        check_op(&[(2, 3)], seed, |g, v| g.pick(v[0], &[5, 0, 5]).unwrap());
    }
}

#[test]
fn dropout_mask_is_inverted_bernoulli() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = g.input(Tensor::filled(1, 1000, 1.0));
    let y = g.dropout(x, 0.5, &mut rng).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
}

proptest! {
    #[test]
    fn softmax_is_a_simplex(values in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::row(values));
        let y = g.softmax(x, Axis::Cols);
        let out = g.value(y);
        prop_assert!(out.data().iter().all(|&p| p >= 0.0));
        prop_assert!((out.data().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn forward_ops_stay_finite(values in proptest::collection::vec(-700.0f64..700.0, 6)) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::new(vec![2, 3], values).unwrap());
        let outs = [
            g.sigmoid(x),
            g.tanh(x),
            g.softmax(x, Axis::Rows),
            g.logsumexp(x, Axis::Cols),
            g.mean(x, Axis::Rows),
        ];
        for o in outs {
            prop_assert!(g.value(o).is_finite());
        }
    }
}
