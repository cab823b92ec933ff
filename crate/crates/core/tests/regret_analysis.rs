use std::sync::Arc;

use gomkl::analysis::{self, batch_oracle, batch_value, BoundInputs};
use gomkl::data::{make_synthetic, partition};
use gomkl::graph::TopologyKind;
use gomkl::learner::{sigmoid, Klr, Label};
use gomkl::protocol::{run_simulation, SimulationConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Newton's method on the mean of ln(1 + exp(−y θᵀz)) + λ‖θ‖².
fn newton(samples: &[(Vec<f64>, Label)], lambda: f64) -> Vec<f64> {
    let d = samples[0].0.len();
    let n = samples.len() as f64;
    let mut theta = DVector::zeros(d);
    for _ in 0..50 {
        let mut g = &theta * (2.0 * lambda);
        let mut h = DMatrix::identity(d, d) * (2.0 * lambda);
        for (z, y) in samples {
            let z = DVector::from_column_slice(z);
            let y = y.sign();
            let m = y * theta.dot(&z);
            let s = sigmoid(-m);
            g -= &z * (y * s / n);
            h += &z * z.transpose() * (s * (1.0 - s) / n);
        }
        let step = h.lu().solve(&g).unwrap();
        theta -= &step;
        if step.norm() < 1e-14 {
            break;
        }
    }
    theta.iter().copied().collect()
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<(Vec<f64>, Label)> {
    let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let score: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3 * (rng.random::<f64>() - 0.5);
            (z, if score > 0.0 { Label::Pos } else { Label::Neg })
        })
        .collect()
}

#[test]
fn batch_oracle_agrees_with_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n, d, lambda) in [(200, 5, 1e-3), (500, 12, 1e-2), (50, 3, 0.5)] {
        let samples = random_samples(&mut rng, n, d);
        let loss = Klr::new(lambda);
        let opt = batch_oracle(&loss, &samples, 1e-9, 100_000).unwrap();
        let reference = newton(&samples, lambda);
        let err = opt.theta.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "n={n} d={d}: max deviation {err}");
        assert!((opt.objective - batch_value(&loss, &samples, &reference)).abs() < 1e-12);
    }
}

#[test]
fn batch_optimum_beats_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples = random_samples(&mut rng, 300, 8);
    let loss = Klr::new(1e-3);
    let opt = batch_oracle(&loss, &samples, 1e-9, 100_000).unwrap();
    assert!(opt.objective < batch_value(&loss, &samples, &vec![0.0; 8]));
    for _ in 0..100 {
        let probe: Vec<f64> = opt.theta.iter().map(|t| t + 0.01 * (rng.random::<f64>() - 0.5)).collect();
        assert!(opt.objective < batch_value(&loss, &samples, &probe));
    }
}

#[test]
fn regret_report_of_a_short_run() {
    let (nodes, rounds) = (4, 120);
    let ds = Arc::new(make_synthetic(nodes * rounds, 2, 2.0, 3).unwrap().standardized());
    let part = partition(ds, nodes, 3).unwrap();
    let cfg = SimulationConfig {
        nodes,
        rounds: Some(rounds),
        sigmas: vec![1.0, 3.0],
        topology: TopologyKind::Ring,
        ..SimulationConfig::default()
    };
    let out = run_simulation(&cfg, &part).unwrap();
    let loss = Klr::new(cfg.lambda);
    let map = &out.network.protocol().maps[0];
    let samples = analysis::embed_partition(&part, rounds, map).unwrap();
    let opt = batch_oracle(&loss, &samples, 1e-9, 100_000).unwrap();
    let comparator = analysis::comparator_losses(&loss, &part, rounds, map, &opt.theta).unwrap();
    // the comparator sums per round are the batch objective scaled back up
    let total: f64 = comparator.iter().sum();
    assert!((total / (nodes * rounds) as f64 - opt.objective).abs() < 1e-12);

    let inputs = BoundInputs {
        nodes,
        rounds,
        eta: cfg.eta,
        theta_star_norm: opt.theta.iter().map(|t| t * t).sum::<f64>().sqrt(),
        grad_bound: out.metrics.max_grad_norm,
        kernels: 2,
        c: 1e-3,
    };
    let report = analysis::regret_report("kernel 0", &out.metrics, &comparator, inputs).unwrap();
    assert!(report.within_bound());
    assert!(out.metrics.max_grad_norm > 0.0 && out.metrics.max_grad_norm <= 1.0 + 1e-9 + 2.0 * cfg.lambda * 10.0);
    let text = report.to_text();
    assert!(text.contains("regret <= bound: true"));
    let mut csv = Vec::new();
    report.write_series_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), rounds + 1);
}

fn bound_inputs() -> impl Strategy<Value = BoundInputs> {
    (1usize..50, 1usize..5000, 1e-4f64..0.9, 0.0f64..10.0, 0.01f64..5.0, 1usize..8, 1e-6f64..1.0).prop_map(
        |(nodes, rounds, eta, theta_star_norm, grad_bound, kernels, c)| BoundInputs {
            nodes,
            rounds,
            eta,
            theta_star_norm,
            grad_bound,
            kernels,
            c,
        },
    )
}

proptest! {
    #[test]
    fn bound_is_monotone(b in bound_inputs()) {
        let base = analysis::theorem_bound(&b);
        prop_assert!(base > 0.0);
        let bigger = [
            BoundInputs { rounds: b.rounds + 1, ..b },
            BoundInputs { nodes: b.nodes + 1, ..b },
            BoundInputs { grad_bound: b.grad_bound * 1.1, ..b },
            BoundInputs { c: b.c * 0.9, ..b },
            BoundInputs { theta_star_norm: b.theta_star_norm + 0.1, ..b },
        ];
        for other in bigger {
            prop_assert!(analysis::theorem_bound(&other) > base);
        }
    }

    #[test]
    fn consensus_bound_scales(eta in 1e-4f64..0.5, nodes in 1usize..40, l in 0.1f64..3.0, c in 1e-4f64..1.0) {
        let v = analysis::consensus_bound(eta, nodes, l, c);
        let doubled = analysis::consensus_bound(2.0 * eta, nodes, l, c);
        prop_assert!((doubled / v - 4.0).abs() < 1e-9);
    }
}
