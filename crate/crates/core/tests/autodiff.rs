use kvmn_core::tensor::{grad_check, DEFAULT_EPS};
use kvmn_core::{Error, Graph, NodeId, Result, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// Reduces any node to a scalar with a fixed, non-symmetric weighting so that
/// every output entry gets a distinct gradient.
fn reduce(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let n = g.value(x).len();
    let dims = g.value(x).dims().to_vec();
    let w = g.constant(Tensor::new(dims, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?)?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn check(params: &[Tensor], build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>) -> f64 {
    grad_check(params, DEFAULT_EPS, |g, p| {
        let out = build(g, p)?;
        reduce(g, out)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_matrix_vector(a in vec_of(12), x in vec_of(4)) {
        let p = [Tensor::matrix(3, 4, a).unwrap(), Tensor::vector(x).unwrap()];
        prop_assert!(check(&p, |g, p| g.matmul(p[0], p[1])) < TOL);
    }

    #[test]
    fn matmul_matrix_matrix(a in vec_of(6), b in vec_of(6)) {
        let p = [Tensor::matrix(2, 3, a).unwrap(), Tensor::matrix(3, 2, b).unwrap()];
        prop_assert!(check(&p, |g, p| g.matmul(p[0], p[1])) < TOL);
    }

    #[test]
    fn matmul_row_vector(a in vec_of(3), b in vec_of(6)) {
        let p = [Tensor::vector(a).unwrap(), Tensor::matrix(3, 2, b).unwrap()];
        prop_assert!(check(&p, |g, p| g.matmul(p[0], p[1])) < TOL);
    }

    #[test]
    fn add_and_broadcast(a in vec_of(6), b in vec_of(6), c in vec_of(3)) {
        let p = [Tensor::matrix(2, 3, a).unwrap(), Tensor::matrix(2, 3, b).unwrap(), Tensor::vector(c).unwrap()];
        let err = check(&p, |g, p| {
            let s = g.add(p[0], p[1])?;
            g.add(s, p[2])
        });
        prop_assert!(err < TOL);
    }

    #[test]
    fn elementwise(a in vec_of(5), b in vec_of(5)) {
        let p = [Tensor::vector(a).unwrap(), Tensor::vector(b).unwrap()];
        prop_assert!(check(&p, |g, p| g.mul(p[0], p[1])) < TOL);
        prop_assert!(check(&p, |g, p| g.tanh(p[0])) < TOL);
        prop_assert!(check(&p, |g, p| g.sigmoid(p[1])) < TOL);
        prop_assert!(check(&p, |g, p| g.neg(p[0])) < TOL);
        prop_assert!(check(&p, |g, p| g.scale(p[0], -1.7)) < TOL);
    }

    #[test]
    fn log_of_positive(a in prop::collection::vec(0.2f64..3.0, 5)) {
        let p = [Tensor::vector(a).unwrap()];
        prop_assert!(check(&p, |g, p| g.log(p[0])) < TOL);
    }

    #[test]
    fn softmax_grad(a in vec_of(6)) {
        let p = [Tensor::vector(a.clone()).unwrap()];
        prop_assert!(check(&p, |g, p| g.softmax(p[0])) < TOL);
        let m = [Tensor::matrix(2, 3, a).unwrap()];
        prop_assert!(check(&m, |g, p| g.softmax(p[0])) < TOL);
    }

    #[test]
    fn reductions(a in vec_of(6)) {
        let p = [Tensor::matrix(3, 2, a).unwrap()];
        prop_assert!(check(&p, |g, p| g.sum(p[0])) < TOL);
        prop_assert!(check(&p, |g, p| g.mean(p[0])) < TOL);
    }

    #[test]
    fn concat_and_weighted_sum(a in vec_of(3), b in vec_of(3), c in vec_of(3), w in vec_of(3)) {
        let p = [a, b, c, w].map(|v| Tensor::vector(v).unwrap());
        prop_assert!(check(&p, |g, p| g.concat(&p[..3])) < TOL);
        prop_assert!(check(&p, |g, p| g.weighted_sum(p[3], &p[..3])) < TOL);
    }

    #[test]
    fn row_and_xent(t in vec_of(12), target in 0usize..4) {
        let p = [Tensor::matrix(4, 3, t.clone()).unwrap()];
        prop_assert!(check(&p, |g, p| g.row(p[0], target.min(3))) < TOL);
        let l = [Tensor::vector(t[..4].to_vec()).unwrap()];
        let err = grad_check(&l, DEFAULT_EPS, |g, p| g.softmax_xent(p[0], target)).unwrap();
        prop_assert!(err < TOL);
    }

    #[test]
    fn softmax_simplex_and_shift(a in vec_of(7), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(a.clone()).unwrap()).unwrap();
        let y = g.softmax(x).unwrap();
        let shifted = g.constant(Tensor::vector(a.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        let ys = g.softmax(shifted).unwrap();
        let p = g.value(y).data().to_vec();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        for (u, v) in p.iter().zip(g.value(ys).data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_splits_gradient(a in vec_of(2), b in vec_of(3)) {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(a).unwrap()).unwrap();
        let y = g.param(Tensor::vector(b).unwrap()).unwrap();
        let c = g.concat(&[x, y]).unwrap();
        let l = reduce(&mut g, c).unwrap();
        g.backward(l).unwrap();
        let w: Vec<f64> = (0..5).map(|i| 0.3 + 0.17 * i as f64).collect();
        prop_assert_eq!(g.grad(x).unwrap(), &w[..2]);
        prop_assert_eq!(g.grad(y).unwrap(), &w[2..]);
    }
}

#[test]
fn softmax_survives_large_logits() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1000.0, 999.0, -1000.0]).unwrap()).unwrap();
    let y = g.softmax(x).unwrap();
    let p = g.value(y).data();
    assert!(p.iter().all(|v| v.is_finite()));
    assert!((p[0] / p[1] - std::f64::consts::E).abs() < 1e-9);
}

#[test]
fn backward_twice_needs_reset() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::State(_))));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn non_finite_output_names_the_node() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0]).unwrap()).unwrap();
    match g.log(x) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("node 1") && msg.contains("log"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn shape_mismatch_rejected() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
    let b = g.constant(Tensor::vector(vec![0.0; 2]).unwrap()).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    assert!(matches!(g.add(b, a), Err(Error::Shape(_))));
}

#[test]
fn linear_toy_grad_check_is_tight() {
    let p = [Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap(), Tensor::vector(vec![1.0, -3.0]).unwrap()];
    let err = grad_check(&p, DEFAULT_EPS, |g, p| {
        let y = g.matmul(p[0], p[1])?;
        g.sum(y)
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn grad_check_rejects_bad_step() {
    let p = [Tensor::vector(vec![1.0]).unwrap()];
    assert!(grad_check(&p, 0.0, |g, p| g.sum(p[0])).is_err());
}
