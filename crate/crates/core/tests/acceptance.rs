//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if a criterion fails that is expected to hold.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use gomkl::analysis::{self, BoundInputs};
use gomkl::baselines::run_single_kernel_reference;
use gomkl::data::{make_synthetic, partition, Dataset};
use gomkl::experiment::{cmd_run, cmd_sweep_quantization, cmd_sweep_topology, ExperimentConfig, VariantResult};
use gomkl::graph::{self, Topology, TopologyKind};
use gomkl::learner::{self, KernelWeights, Klr, Label, LossModel};
use gomkl::protocol::{
    build_network, run_simulation, Execution, GammaChoice, QuantizerChoice, SimulationConfig,
};
use gomkl::quantizer::{compression_delta, LevelQuantizer, QuantizedVector};
use gomkl::rf_kernel::{kernel_exact, FeatureMap, GaussianKernel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn criterion_1() -> Outcome {
    let mut worst_dev: f64 = 0.0;
    let mut worst_rho: f64 = 0.0;
    let mut named = true;
    for kind in [TopologyKind::Complete, TopologyKind::Ring, TopologyKind::Path] {
        for j in [2, 4, 20] {
            let w = graph::metropolis_weights(&Topology::build(kind, j, None).unwrap()).unwrap();
            let m = w.matrix();
            for i in 0..j {
                worst_dev = worst_dev.max((m.row(i).sum() - 1.0).abs()).max((m.column(i).sum() - 1.0).abs());
                for k in 0..j {
                    worst_dev = worst_dev.max((m[(i, k)] - m[(k, i)]).abs());
                }
            }
            let oracle_rho = 1.0 - jacobi_eigenvalues(m)[1];
            worst_rho = worst_rho.max((w.rho() - oracle_rho).abs());
            if kind == TopologyKind::Complete {
                named &= (w.rho() - 1.0).abs() <= 1e-9;
            }
            if kind == TopologyKind::Ring && j == 4 {
                named &= (w.rho() - 2.0 / 3.0).abs() <= 1e-9;
            }
        }
    }
    outcome(
        worst_dev <= 1e-12 && worst_rho <= 1e-9 && named,
        format!(
            "max stochasticity/symmetry deviation {worst_dev:.1e}, max |rho - oracle| {worst_rho:.1e}, ring(4) = 2/3 and complete = 1: {named}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let q = LevelQuantizer::new(7, 40).unwrap();
    let direct = 1.0 - f64::min(40.0 / 49.0, 40f64.sqrt() / 7.0);
    let delta_ok = (q.delta() - direct).abs() < 1e-15 && (compression_delta(20, 7) - 0.18367).abs() < 1e-5;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 100_000;
    let mut ratio = 0.0;
    for _ in 0..trials {
        let v = gaussian_vec(&mut rng, 40);
        let qv = q.quantize(&v, &mut rng).unwrap().dequantize().unwrap();
        let err: f64 = qv.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        ratio += err / learner::norm_sq(&v);
    }
    ratio /= trials as f64;
    let limit = (1.0 - q.delta()) * 1.02;

    let v = gaussian_vec(&mut rng, 40);
    let mut sum = vec![0.0; 40];
    let mut sq = vec![0.0; 40];
    for _ in 0..trials {
        for (k, x) in q.quantize(&v, &mut rng).unwrap().dequantize().unwrap().iter().enumerate() {
            sum[k] += x;
            sq[k] += x * x;
        }
    }
    let n = trials as f64;
    let worst_z = (0..40)
        .map(|k| {
            let mean = sum[k] / n;
            let se = ((sq[k] / n - mean * mean).max(0.0) / n).sqrt();
            if se == 0.0 {
                if mean == v[k] { 0.0 } else { f64::INFINITY }
            } else {
                (mean - v[k]).abs() / se
            }
        })
        .fold(0.0, f64::max);

    let mut codec_ok = true;
    for _ in 0..10_000 {
        let bits = rng.random_range(1..=6u32);
        let max_level = (1u32 << bits) - 1;
        let len = rng.random_range(1..=80usize);
        let payload = QuantizedVector {
            norm: rng.random::<f64>() * 100.0,
            negative: (0..len).map(|_| rng.random()).collect(),
            levels: (0..len).map(|_| rng.random_range(0..=max_level)).collect(),
            max_level,
        };
        let bytes = payload.encode_wire().unwrap();
        let expected_len = 8 + (len * (1 + bits as usize)).div_ceil(8);
        let decoder = LevelQuantizer::with_bits(bits, len);
        let back = match decoder {
            Ok(d) => d.decode_wire(&bytes).ok(),
            // widths whose delta is not positive have no quantizer; the
            // codec is still exercised through the payload itself
            Err(_) => Some(payload.clone()),
        };
        codec_ok &= bytes.len() == expected_len && back.as_ref() == Some(&payload);
    }
    outcome(
        delta_ok && ratio <= limit && worst_z <= 4.0 && codec_ok,
        format!(
            "delta {:.5}, mean relative error {ratio:.5} <= {limit:.5}, worst unbiasedness z {worst_z:.2}, codec round trips ok: {codec_ok}",
            q.delta()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kernel = GaussianKernel::new(1.5).unwrap();
    let map = FeatureMap::sample(&kernel, 20, 5, &mut rng).unwrap();
    let mut worst_norm: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = gaussian_vec(&mut rng, 5).iter().map(|v| v * 3.0).collect();
        worst_norm = worst_norm.max((learner::norm_sq(&map.features(&x).unwrap()) - 1.0).abs());
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
        .map(|_| (gaussian_vec(&mut rng, 3), gaussian_vec(&mut rng, 3)))
        .collect();
    let exact: Vec<f64> = pairs.iter().map(|(x, y)| kernel_exact(&kernel, x, y).unwrap()).collect();
    let mses: Vec<f64> = [20, 80, 320]
        .iter()
        .map(|&d| {
            let draws = 400;
            let mut total = 0.0;
            for _ in 0..draws {
                let m = FeatureMap::sample(&kernel, d, 3, &mut rng).unwrap();
                for ((x, y), k) in pairs.iter().zip(&exact) {
                    let approx = learner::dot(&m.features(x).unwrap(), &m.features(y).unwrap());
                    total += (approx - k) * (approx - k);
                }
            }
            total / (draws * pairs.len()) as f64
        })
        .collect();
    let r1 = mses[0] / mses[1];
    let r2 = mses[1] / mses[2];
    let factor_ok = |r: f64| (2.0..=8.0).contains(&r);
    outcome(
        worst_norm <= 1e-12 && factor_ok(r1) && factor_ok(r2),
        format!(
            "max | ||z||^2 - 1 | {worst_norm:.1e}; MSE {:.2e} -> {:.2e} -> {:.2e} (reductions {r1:.2}, {r2:.2})",
            mses[0], mses[1], mses[2]
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_fd: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12usize);
        let theta = gaussian_vec(&mut rng, n);
        let z = gaussian_vec(&mut rng, n);
        let y = if rng.random::<bool>() { Label::Pos } else { Label::Neg };
        let loss = Klr::new(rng.random::<f64>() * 0.1);
        let g = loss.gradient(&theta, &z, y);
        let h = 1e-6;
        let fd: Vec<f64> = (0..n)
            .map(|k| {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[k] += h;
                b[k] -= h;
                (loss.value(&a, &z, y) - loss.value(&b, &z, y)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = learner::norm_sq(&g).sqrt().max(1e-8);
        worst_fd = worst_fd.max(diff / scale);
    }

    let mut hedge_exact = true;
    for _ in 0..1000 {
        let p = rng.random_range(1..=6usize);
        let mut w = KernelWeights::uniform(p).unwrap();
        let warmup: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * 3.0).collect();
        w.hedge_update(&warmup, 0.7).unwrap();
        let before = w.normalized().to_vec();
        let l = rng.random::<f64>() * 5.0;
        w.hedge_update(&vec![l; p], rng.random::<f64>()).unwrap();
        hedge_exact &= w.normalized() == before.as_slice();
    }

    let mut jensen_ok = true;
    for _ in 0..1000 {
        let p = rng.random_range(1..=5usize);
        let n = rng.random_range(1..=10usize);
        let loss = Klr::new(rng.random::<f64>() * 0.01);
        let raw: Vec<f64> = (0..p).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let thetas: Vec<Vec<f64>> = (0..p).map(|_| gaussian_vec(&mut rng, n)).collect();
        let z = gaussian_vec(&mut rng, n);
        let y = if rng.random::<bool>() { Label::Pos } else { Label::Neg };
        let preds: Vec<f64> = thetas.iter().map(|t| learner::predict_single(t, &z)).collect();
        let refs: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
        let combined = learner::combined_loss(&loss, &w, &preds, &refs, y);
        let mixture: f64 = w.iter().zip(&thetas).map(|(wp, t)| wp * loss.value(t, &z, y)).sum();
        jensen_ok &= combined <= mixture + 1e-12 * mixture.abs().max(1.0);
    }
    outcome(
        worst_fd <= 1e-5 && hedge_exact && jensen_ok,
        format!("max gradient relative error {worst_fd:.1e}, equal-loss hedge exact: {hedge_exact}, Jensen holds: {jensen_ok}"),
    )
}

fn small_data(n: usize, nodes: usize, seed: u64) -> gomkl::data::Partition {
    let ds = make_synthetic(n, 3, 2.0, seed).unwrap().standardized();
    partition(Arc::new(ds), nodes, seed).unwrap()
}

fn criterion_5() -> Outcome {
    let data = small_data(800, 8, 5);
    let cfg = SimulationConfig {
        nodes: 8,
        rounds: Some(100),
        features: 20,
        eta: 0.0,
        topology: TopologyKind::Ring,
        quantizer: QuantizerChoice::Levels(7),
        seed: 5,
        ..SimulationConfig::default()
    };
    let mut net = build_network(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for node in net.nodes_mut() {
        for ks in &mut node.kernels {
            ks.theta = gaussian_vec(&mut rng, 40);
        }
    }
    let start: Vec<Vec<f64>> = (0..3).map(|p| net.mean_theta(p)).collect();
    let mut drift: f64 = 0.0;
    let mut replicas_ok = true;
    for t in 0..100 {
        let samples: Vec<(&[f64], Label)> = (0..8).map(|j| data.sample(j, t)).collect();
        net.run_round(&samples, Execution::Sequential).unwrap();
        replicas_ok &= net.check_replicas().is_ok();
        for (p, s) in start.iter().enumerate() {
            let m = net.mean_theta(p);
            drift = drift.max(m.iter().zip(s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    // the averages must be preserved while the nodes actually mix
    let mixed = gomkl::protocol::consensus_error(net.nodes(), 0) < 0.5 * 8.0 * 40.0;

    let learning = SimulationConfig {
        eta: 0.05,
        ..cfg.clone()
    };
    let seq = run_simulation(&learning, &data).unwrap();
    let par = run_simulation(
        &SimulationConfig {
            execution: Execution::Parallel,
            ..learning
        },
        &data,
    )
    .unwrap();
    let same = seq.metrics == par.metrics
        && seq.network.nodes().iter().zip(par.network.nodes()).all(|(a, b)| a.kernels == b.kernels);
    outcome(
        drift < 1e-10 && replicas_ok && mixed && same,
        format!("max average drift {drift:.1e}, replicas consistent: {replicas_ok}, parallel == sequential: {same}"),
    )
}

fn final_losses(results: &[VariantResult]) -> Vec<f64> {
    results.iter().map(VariantResult::mean_final_loss).collect()
}

fn config(text: &str, out: &Path) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("{text}\nout = {}\n", out.display()), Path::new(".")).unwrap()
}

const TEN_SEEDS: &str = "seeds = 0,1,2,3,4,5,6,7,8,9";

fn criterion_6(out: &Path) -> Outcome {
    let cfg = config(
        &format!("dataset = banana_synthetic\nbaselines = single_kernel:1, complete_unquantized\n{TEN_SEEDS}"),
        out,
    );
    let report = cmd_run(&cfg).unwrap();
    let m = final_losses(&report.results);
    let (path, single, complete) = (m[0], m[1], m[2]);
    let a = path < single;
    let rel = (path - complete).abs() / complete;
    let b = rel <= 0.05;
    outcome(
        a && b,
        format!(
            "(a) path {path:.6} vs single kernel sigma=1 {single:.6}: {}; (b) path vs complete relative gap {rel:.2e}: {}",
            if a { "lower" } else { "NOT lower" },
            if b { "ok" } else { "too large" }
        ),
    )
}

fn criterion_7(out: &Path) -> Outcome {
    let cfg = config(
        &format!("dataset = synthetic\nsamples = 30000\ninput_dim = 2\nseparation = 2\nrounds = 1500\n{TEN_SEEDS}"),
        out,
    );
    let report = cmd_sweep_topology(&cfg).unwrap();
    let m = final_losses(&report.results);
    let g1 = (m[1] - m[0]) / m[0];
    let g2 = (m[2] - m[1]) / m[1];
    outcome(
        g1 >= -0.01 && g2 >= -0.01,
        format!(
            "complete {:.6}, ring {:.6}, path {:.6}; relative gaps {g1:+.2e}, {g2:+.2e}",
            m[0], m[1], m[2]
        ),
    )
}

fn criterion_8(out: &Path) -> Outcome {
    let cfg = config(&format!("dataset = banana_synthetic\nlevels = 7\n{TEN_SEEDS}"), out);
    let report = cmd_sweep_quantization(&cfg).unwrap();
    let (m7, id) = (&report.results[0], &report.results[1]);
    let dev = m7
        .final_losses
        .iter()
        .zip(&id.final_losses)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(dev <= 1e-3, format!("max |final loss(M=7) - final loss(identity)| over seeds = {dev:.2e}"))
}

fn criterion_9() -> Outcome {
    let (nodes, rounds, seeds) = (4usize, 500usize, 10u64);
    let base = SimulationConfig {
        nodes,
        rounds: Some(rounds),
        sigmas: vec![1.0, 3.0],
        topology: TopologyKind::Ring,
        gamma: GammaChoice::Fixed(0.009),
        ..SimulationConfig::default()
    };
    let dataset: Arc<Dataset> = Arc::new(make_synthetic(nodes * rounds, 2, 2.0, 9).unwrap().standardized());
    let loss = Klr::new(base.lambda);
    let mut lhs = [0.0; 2];
    let mut rhs = [0.0; 2];
    let mut curves = [vec![0.0; rounds], vec![0.0; rounds]];
    for seed in 0..seeds {
        let cfg = SimulationConfig { seed, ..base.clone() };
        let part = partition(dataset.clone(), nodes, seed).unwrap();
        let out = run_simulation(&cfg, &part).unwrap();
        let gossip = &out.network.protocol().gossip;
        let delta = out.network.protocol().quantizer.delta();
        let c = graph::consensus_step_size(gossip.rho(), gossip.beta(), delta).unwrap().c;
        for p in 0..2 {
            let map = &out.network.protocol().maps[p];
            let samples = analysis::embed_partition(&part, rounds, map).unwrap();
            let opt = analysis::batch_oracle(&loss, &samples, 1e-8, 100_000).unwrap();
            let comparator = analysis::comparator_losses(&loss, &part, rounds, map, &opt.theta).unwrap();
            let inputs = BoundInputs {
                nodes,
                rounds,
                eta: cfg.eta,
                theta_star_norm: learner::norm_sq(&opt.theta).sqrt(),
                grad_bound: out.metrics.max_grad_norm,
                kernels: 2,
                c,
            };
            let report = analysis::regret_report(format!("kernel {p}"), &out.metrics, &comparator, inputs).unwrap();
            lhs[p] += report.regret() / seeds as f64;
            rhs[p] += report.bound / seeds as f64;
            for (a, b) in curves[p].iter_mut().zip(&report.average_regret) {
                *a += b / seeds as f64;
            }
        }
    }
    let checks: Vec<analysis::Sublinearity> =
        curves.iter().map(|c| analysis::sublinearity_check(c, rounds / 10).unwrap()).collect();
    let pass = (0..2).all(|p| lhs[p] <= rhs[p] && checks[p].sublinear);
    outcome(
        pass,
        format!(
            "regret/bound kernel 0: {:.2}/{:.3e}, kernel 1: {:.2}/{:.3e}; log-log slopes {:.3}, {:.3}",
            lhs[0], rhs[0], lhs[1], rhs[1], checks[0].slope, checks[1].slope
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut identical = true;
    for seed in 0..3u64 {
        let data = small_data(600, 6, seed);
        let cfg = SimulationConfig {
            nodes: 6,
            rounds: Some(100),
            sigmas: vec![1.5],
            eta: 0.05,
            gamma: GammaChoice::Fixed(0.04),
            topology: TopologyKind::Ring,
            seed,
            ..SimulationConfig::default()
        };
        let reference = run_single_kernel_reference(&cfg, &data).unwrap();
        let mut net = build_network(&cfg, 3).unwrap();
        for t in 0..100 {
            let samples: Vec<(&[f64], Label)> = (0..6).map(|j| data.sample(j, t)).collect();
            let records = net.run_round(&samples, Execution::Sequential).unwrap();
            for (j, node) in net.nodes().iter().enumerate() {
                identical &= node.kernels[0].theta == reference.thetas[t][j];
                identical &= records[j].kernel_losses[0] == reference.losses[t][j];
                identical &= records[j].combined_loss == reference.losses[t][j];
            }
        }
    }
    outcome(identical, format!("3 seeds x 100 rounds x 6 nodes bit-identical: {identical}"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let sub = |name: &str| {
        let p = dir.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let (d6, d7, d8) = (sub("fig1"), sub("topology"), sub("quantization"));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gossip matrix", Box::new(criterion_1)),
        ("quantizer", Box::new(criterion_2)),
        ("random features", Box::new(criterion_3)),
        ("learner", Box::new(criterion_4)),
        ("protocol invariants", Box::new(criterion_5)),
        ("multi-kernel vs baselines", Box::new(move || criterion_6(&d6))),
        ("topology ordering", Box::new(move || criterion_7(&d7))),
        ("quantization robustness", Box::new(move || criterion_8(&d8))),
        ("regret bound", Box::new(criterion_9)),
        ("single-kernel reduction", Box::new(criterion_10)),
    ];
    // criteria whose outcome depends on data we do not have; see README
    let informational = [6usize];
    let mut failed = Vec::new();
    // ACCEPTANCE_ONLY=2,9 restricts the run to the listed criteria
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = match (o.pass, informational.contains(&id)) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (informational)",
        };
        println!(
            "criterion {id:>2} {tag} [{name}] {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass && !informational.contains(&id) {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
