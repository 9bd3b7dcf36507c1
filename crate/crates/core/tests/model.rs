mod oracles;

use drago_core::dualprox::{Penalty, UncertaintySet, UncertaintySpec};
use drago_core::model::*;
use drago_core::Error;
use oracles::{finite_diff, linf};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cvar(theta: f64) -> UncertaintySpec {
    UncertaintySpec::cvar(theta, Penalty::Chi2Half).unwrap()
}

fn regression(x: Vec<f64>, n: usize, d: usize, y: Vec<f64>, set: UncertaintySpec, mu: f64, nu: f64) -> ProblemSpec {
    let data = DatasetMatrix::regression(x, n, d, y).unwrap();
    ProblemSpec::new(data, LossKind::SquaredError, set, mu, nu).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng, classify: bool, set: UncertaintySpec) -> ProblemSpec {
    let n = rng.random_range(2..=10);
    let d = rng.random_range(1..=4);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu = rng.random_range(0.0..1.0);
    let nu = rng.random_range(0.1..2.0);
    if classify {
        let classes = 2;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let data = DatasetMatrix::classification(x, n, d, labels, classes).unwrap();
        ProblemSpec::new(data, LossKind::MultinomialCrossEntropy { classes }, set, mu, nu).unwrap()
    } else {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        regression(x, n, d, y, set, mu, nu)
    }
}

#[test]
fn squared_error_examples() {
    let p = regression(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 1.0], cvar(1.0), 0.0, 0.0);
    let (l, g) = component_loss_grad(&p, 0, &[0.0, 0.0]).unwrap();
    assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
    let p = regression(vec![1.0, 0.0], 1, 2, vec![1.0], cvar(1.0), 0.0, 0.0);
    let (l, g) = component_loss_grad(&p, 0, &[0.0, 0.0]).unwrap();
    assert_eq!(l, 0.5);
    assert_eq!(g, vec![-1.0, 0.0]);
}

#[test]
fn cross_entropy_example() {
    let data = DatasetMatrix::classification(vec![1.0], 1, 1, vec![0], 2).unwrap();
    let p = ProblemSpec::new(data, LossKind::MultinomialCrossEntropy { classes: 2 }, cvar(1.0), 0.0, 0.0).unwrap();
    assert_eq!(p.p(), 2);
    let (l, g) = component_loss_grad(&p, 0, &[0.0, 0.0]).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(linf(&g, &[-0.5, 0.5]) < 1e-15);
}

#[test]
fn non_finite_w_is_rejected() {
    let p = regression(vec![1.0], 1, 1, vec![1.0], cvar(1.0), 0.0, 0.0);
    assert!(matches!(component_loss_grad(&p, 0, &[f64::NAN]), Err(Error::InvalidInput(_))));
}

#[test]
fn smoothness_constants() {
    let data = DatasetMatrix::regression(vec![3.0, 4.0], 1, 2, vec![1.0]).unwrap();
    assert_eq!(estimate_constants(&data, LossKind::SquaredError).unwrap().1, 25.0);
    let data = DatasetMatrix::regression(vec![1.0, 0.0, 0.0, 2.0], 2, 2, vec![1.0, 1.0]).unwrap();
    let (g, l) = estimate_constants(&data, LossKind::SquaredError).unwrap();
    assert_eq!(l, 4.0);
    // twice the largest |y_i| ‖x_i‖ at the origin
    assert_eq!(g, 4.0);
    let data = DatasetMatrix::regression(vec![0.0, 0.0], 2, 1, vec![1.0, 2.0]).unwrap();
    assert!(estimate_constants(&data, LossKind::SquaredError).is_err());
    let data = DatasetMatrix::classification(vec![3.0, 4.0], 1, 2, vec![1], 3).unwrap();
    let (g, l) = estimate_constants(&data, LossKind::MultinomialCrossEntropy { classes: 3 }).unwrap();
    assert_eq!(l, 12.5);
    assert!((g - 5.0 * 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn dataset_validation() {
    assert!(DatasetMatrix::regression(vec![1.0, f64::INFINITY], 2, 1, vec![0.0, 0.0]).is_err());
    assert!(DatasetMatrix::regression(vec![1.0], 1, 0, vec![0.0]).is_err());
    assert!(DatasetMatrix::classification(vec![1.0, 2.0], 2, 1, vec![0, 2], 2).is_err());
    assert!(DatasetMatrix::regression(vec![1.0, 2.0, 3.0], 2, 1, vec![0.0, 0.0]).is_err());
}

#[test]
fn full_objective_examples() {
    let x = vec![1.0, 2.0, -1.0, 0.5, 0.0, 1.0];
    let y = vec![0.3, -1.0, 2.0];
    let p = regression(x.clone(), 3, 2, y.clone(), cvar(0.5), 0.7, 1.3);
    let w0 = [0.0, 0.0];
    let mean: f64 = y.iter().map(|v| 0.5 * v * v).sum::<f64>() / 3.0;
    assert!((full_objective(&p, &w0, &[1.0 / 3.0; 3]).unwrap() - mean).abs() < 1e-15);

    // one-hot weights need a set that contains them
    let p0 = regression(x.clone(), 3, 2, y.clone(), cvar(1.0 / 3.0), 0.0, 0.0);
    let w = [0.4, -0.2];
    let (l1, _) = component_loss_grad(&p0, 1, &w).unwrap();
    assert!((full_objective(&p0, &w, &[0.0, 1.0, 0.0]).unwrap() - l1).abs() < 1e-15);

    // term by term
    let q = [0.5, 0.1, 0.4];
    let losses: Vec<f64> = (0..3)
        .map(|i| {
            let r = y[i] - x[2 * i] * w[0] - x[2 * i + 1] * w[1];
            0.5 * r * r
        })
        .collect();
    let penalty = 0.5 * q.iter().map(|v| (v - 1.0 / 3.0) * (v - 1.0 / 3.0)).sum::<f64>();
    let expected = q.iter().zip(&losses).map(|(a, b)| a * b).sum::<f64>() - 1.3 * penalty
        + 0.35 * (w[0] * w[0] + w[1] * w[1]);
    assert!((full_objective(&p, &w, &q).unwrap() - expected).abs() < 1e-14);

    assert!(matches!(full_objective(&p, &w, &[1.0, 0.0, 0.0]), Err(Error::Infeasible(_))));
    assert!(matches!(full_objective(&p, &w, &[0.5, 0.5, 0.5]), Err(Error::Infeasible(_))));
}

#[test]
fn uniform_weights_carry_no_penalty() {
    for penalty in [Penalty::Chi2Half, Penalty::Kl] {
        let set = UncertaintySpec::cvar(0.5, penalty).unwrap();
        let p = regression(vec![1.0, -1.0, 2.0, 0.5], 4, 1, vec![1.0, 0.0, 1.0, 2.0], set, 0.0, 10.0);
        let w = [0.3];
        let mean: f64 = p.losses(&w).iter().sum::<f64>() / 4.0;
        assert!((full_objective(&p, &w, &[0.25; 4]).unwrap() - mean).abs() < 1e-15);
    }
}

#[test]
fn primal_gradient_examples() {
    let p = regression(vec![1.0, 2.0], 1, 2, vec![0.5], cvar(1.0), 0.3, 1.0);
    let w = [0.2, -0.1];
    let e = primal_value_and_gradient(&p, &w).unwrap();
    let (_, g) = component_loss_grad(&p, 0, &w).unwrap();
    assert_eq!(e.q, vec![1.0]);
    assert!(linf(&e.grad, &[g[0] + 0.3 * w[0], g[1] + 0.3 * w[1]]) < 1e-15);

    let p = regression(vec![1.0, 2.0, -1.0, 0.0, 0.5, 3.0], 3, 2, vec![0.5, 1.0, -2.0], cvar(1.0), 0.3, 1.0);
    let e = primal_value_and_gradient(&p, &w).unwrap();
    assert!(linf(&e.q, &[1.0 / 3.0; 3]) < 1e-15);
    let mut mean = vec![0.3 * w[0], 0.3 * w[1]];
    for i in 0..3 {
        let (_, g) = component_loss_grad(&p, i, &w).unwrap();
        mean[0] += g[0] / 3.0;
        mean[1] += g[1] / 3.0;
    }
    assert!(linf(&e.grad, &mean) < 1e-14);
}

#[test]
fn primal_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sets = [
        UncertaintySpec::cvar(0.5, Penalty::Chi2Half).unwrap(),
        UncertaintySpec::cvar(0.3, Penalty::Kl).unwrap(),
        UncertaintySpec::new(UncertaintySet::Chi2Ball { rho: 0.05 }, Penalty::Chi2Half).unwrap(),
    ];
    for case in 0..20 {
        let p = random_problem(&mut rng, case % 2 == 1, sets[case % 3].clone());
        let w: Vec<f64> = (0..p.p()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = primal_value_and_gradient(&p, &w).unwrap();
        // the ball value carries bisection noise near 1e-10, so keep h coarse
        let fd = finite_diff(|v| p.primal_value(v).unwrap(), &w, 1e-4);
        let err = linf(&e.grad, &fd) / (1.0 + fd.iter().map(|x| x.abs()).fold(0.0, f64::max));
        assert!(err <= 1e-5, "case {case}: relative error {err:e}");
    }
}

#[test]
fn kappa_examples() {
    assert_eq!(kappa_q(&cvar(0.5), 10), 2.0);
    let ball = |rho| UncertaintySpec::new(UncertaintySet::Chi2Ball { rho }, Penalty::Chi2Half).unwrap();
    assert_eq!(kappa_q(&ball(0.0), 7), 1.0);
    let spectral = UncertaintySpec::new(UncertaintySet::Spectral { sigma: vec![0.0, 0.0, 0.2, 0.8] }, Penalty::Chi2Half)
        .unwrap();
    assert!((kappa_q(&spectral, 4) - 3.2).abs() < 1e-15);
    // a ball that contains the simplex
    assert_eq!(kappa_q(&ball(10.0), 5), 5.0);
}

proptest! {
    #[test]
    fn kappa_at_least_one(theta in 0.01f64..=1.0, rho in 0.0f64..3.0, n in 1usize..200) {
        prop_assert!(kappa_q(&cvar(theta), n) >= 1.0);
        let ball = UncertaintySpec::new(UncertaintySet::Chi2Ball { rho }, Penalty::Chi2Half).unwrap();
        prop_assert!(kappa_q(&ball, n) >= 1.0);
    }

    #[test]
    fn component_gradients_are_l_smooth(seed in any::<u64>(), classify in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, classify, cvar(1.0));
        let l = p.loss().l;
        for _ in 0..100 {
            let i = rng.random_range(0..p.n());
            let a: Vec<f64> = (0..p.p()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..p.p()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, ga) = component_loss_grad(&p, i, &a).unwrap();
            let (_, gb) = component_loss_grad(&p, i, &b).unwrap();
            let lhs: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let rhs: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            prop_assert!(lhs <= l * rhs * (1.0 + 1e-12) + 1e-14);
        }
    }
}

