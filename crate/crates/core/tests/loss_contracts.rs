use difex::losses::{self, Exploration};
use difex::{Graph, Tensor};
use proptest::prelude::*;

fn eval<F>(build: F) -> f64
where
    F: FnOnce(&mut Graph) -> difex::diffcore::Var,
{
    let mut g = Graph::new();
    let v = build(&mut g);
    g.value(v).item()
}

fn coral(x: &Tensor, domains: &[usize]) -> f64 {
    eval(|g| {
        let v = g.constant(x.clone());
        losses::coral_loss(g, v, domains).unwrap()
    })
}

fn explore(kind: Exploration, a: &Tensor, b: &Tensor) -> f64 {
    eval(|g| {
        let x = g.constant(a.clone());
        let y = g.constant(b.clone());
        losses::exploration(g, kind, x, y).unwrap()
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

/// Stacks the rows of `a` then `b`, with domain ids 0 then 1.
fn stack(a: &Tensor, b: &Tensor) -> (Tensor, Vec<usize>) {
    let data = [a.data(), b.data()].concat();
    let dom = (0..a.rows()).map(|_| 0).chain((0..b.rows()).map(|_| 1)).collect();
    (Tensor::matrix(a.rows() + b.rows(), a.cols(), data).unwrap(), dom)
}

#[test]
fn covariance_hand_oracle() {
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let c = {
        let mut g = Graph::new();
        let v = g.constant(x);
        let c = losses::covariance(&mut g, v).unwrap();
        g.value(c).clone()
    };
    assert_eq!(c.shape(), &[2, 2]);
    assert_eq!(c.data(), &[2.0, 2.0, 2.0, 2.0]);
}

#[test]
fn norm_l1_reaches_its_bound_on_opposite_rows() {
    // z2 = -z1 with a single non-zero entry per row: distance 2 exactly.
    let a = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![-3.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!((explore(Exploration::NormL1, &a, &b) + 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn coral_nonnegative_symmetric_and_zero_on_copies(a in matrix(5, 3), b in matrix(4, 3)) {
        let (ab, dom_ab) = stack(&a, &b);
        let (ba, dom_ba) = stack(&b, &a);
        let l_ab = coral(&ab, &dom_ab);
        prop_assert!(l_ab >= 0.0);
        prop_assert!((l_ab - coral(&ba, &dom_ba)).abs() <= 1e-12 * l_ab.max(1.0));
        let (aa, dom_aa) = stack(&a, &a);
        prop_assert!(coral(&aa, &dom_aa).abs() < 1e-12);
    }

    #[test]
    fn exploration_nonpositive_and_zero_at_equality(a in matrix(4, 3), b in matrix(4, 3)) {
        for kind in [Exploration::L2, Exploration::NormL1] {
            prop_assert!(explore(kind, &a, &b) <= 0.0);
            prop_assert!(explore(kind, &a, &a).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_l1_lower_bound(k in 1usize..6, seed in prop::collection::vec(-3.0f64..3.0, 60)) {
        let a = Tensor::matrix(5, k, seed[..5 * k].to_vec()).unwrap();
        let b = Tensor::matrix(5, k, seed[30..30 + 5 * k].to_vec()).unwrap();
        let v = explore(Exploration::NormL1, &a, &b);
        prop_assert!(v >= -2.0 * (k as f64).sqrt() - 1e-12);
    }
}
