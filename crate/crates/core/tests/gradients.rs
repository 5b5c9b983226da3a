//! Reverse-mode gradients of every loss term and of the combined objective
//! against central finite differences.

use difex::diffcore::{finite_difference_grad, relative_error, Var};
use difex::losses::{self, Exploration, LossWeights, ObjectiveInputs};
use difex::model::Architecture;
use difex::{Graph, StudentModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const CASES: u64 = 24;

struct Micro {
    rows: usize,
    head: usize,
    domains: Vec<usize>,
    labels: Vec<usize>,
    rng: ChaCha8Rng,
}

fn micro(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..=3);
    let per = rng.random_range(2..=4);
    let head = rng.random_range(1..=3);
    let domains: Vec<usize> = (0..m * per).map(|i| i % m).collect();
    let labels = (0..m * per).map(|_| rng.random_range(0..3)).collect();
    Micro {
        rows: m * per,
        head,
        domains,
        labels,
        rng,
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Checks d loss / d x for a loss built from a single matrix input.
fn check_unary<F>(name: &str, seed: u64, x: &Tensor, build: F)
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let loss = build(&mut g, v);
    let analytic = g.backward(loss).unwrap().wrt(&g, v);
    let numeric = finite_difference_grad(
        |t: &Tensor| {
            let mut g = Graph::new();
            let v = g.param(t.clone());
            let l = build(&mut g, v);
            g.value(l).item()
        },
        x,
        H,
    );
    let err = relative_error(&analytic, &numeric, 1e-8);
    assert!(err < TOL, "{name} seed {seed}: relative error {err}");
}

#[test]
fn mse_distillation_gradient() {
    for seed in 0..CASES {
        let mut c = micro(seed);
        let z = rand_matrix(&mut c.rng, c.rows, c.head);
        let t = rand_matrix(&mut c.rng, c.rows, c.head);
        check_unary("mse", seed, &z, |g, v| losses::mse_distill(g, v, &t).unwrap());
    }
}

#[test]
fn coral_gradient() {
    for seed in 0..CASES {
        let mut c = micro(seed);
        let z = rand_matrix(&mut c.rng, c.rows, c.head);
        let d = c.domains.clone();
        check_unary("coral", seed, &z, |g, v| losses::coral_loss(g, v, &d).unwrap());
    }
}

fn check_exploration(kind: Exploration) {
    for seed in 0..CASES {
        let mut c = micro(seed);
        let z1 = rand_matrix(&mut c.rng, c.rows, c.head);
        let z2 = rand_matrix(&mut c.rng, c.rows, c.head);
        // Gradient with respect to both halves, the other held fixed.
        let fixed2 = z2.clone();
        check_unary("exploration z1", seed, &z1, |g, v| {
            let o = g.constant(fixed2.clone());
            losses::exploration(g, kind, v, o).unwrap()
        });
        let fixed1 = z1.clone();
        check_unary("exploration z2", seed, &z2, |g, v| {
            let o = g.constant(fixed1.clone());
            losses::exploration(g, kind, o, v).unwrap()
        });
    }
}

#[test]
fn l2_exploration_gradient() {
    check_exploration(Exploration::L2);
}

#[test]
fn norm_l1_exploration_gradient() {
    check_exploration(Exploration::NormL1);
}

fn objective_value(
    model: &StudentModel,
    x: &Tensor,
    c: &Micro,
    teacher: &Tensor,
    w: &LossWeights,
    grads: bool,
) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = model.forward(&mut g, xv, true).unwrap();
    let inputs = ObjectiveInputs {
        logits: out.logits,
        labels: &c.labels,
        z1: out.z1,
        z2: out.z2,
        domains: &c.domains,
        teacher: Some(teacher),
    };
    let obj = losses::total_objective(&mut g, &inputs, w).unwrap();
    let value = g.value(obj.total).item();
    if !grads {
        return (value, Vec::new());
    }
    let gr = g.backward(obj.total).unwrap();
    (value, out.params.iter().map(|&p| gr.wrt(&g, p)).collect())
}

#[test]
fn full_objective_gradient_over_all_parameters() {
    for seed in 0..CASES {
        let mut c = micro(100 + seed);
        let arch = Architecture {
            input: 4,
            hidden: 5,
            features: 2 * c.head,
            classes: 3,
        };
        let model = StudentModel::init(arch, &mut c.rng).unwrap();
        let x = rand_matrix(&mut c.rng, c.rows, arch.input);
        let teacher = rand_matrix(&mut c.rng, c.rows, c.head);
        let w = LossWeights {
            lambda1: c.rng.random_range(0.1..2.0),
            lambda2: c.rng.random_range(0.1..2.0),
            lambda3: c.rng.random_range(0.01..1.0),
            exploration: if seed % 2 == 0 {
                Exploration::L2
            } else {
                Exploration::NormL1
            },
        };
        let (_, analytic) = objective_value(&model, &x, &c, &teacher, &w, true);
        for (k, a) in analytic.iter().enumerate() {
            let numeric = finite_difference_grad(
                |t: &Tensor| {
                    let mut m = model.clone();
                    *m.params_mut()[k] = t.clone();
                    objective_value(&m, &x, &c, &teacher, &w, false).0
                },
                model.params()[k],
                H,
            );
            let err = relative_error(a, &numeric, 1e-8);
            assert!(err < TOL, "objective seed {seed} param {k}: relative error {err}");
        }
    }
}
