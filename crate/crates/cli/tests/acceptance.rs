//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::strategy::Strategy as PropStrategy;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgecoop::data::{gen_synthetic, load_idx, Dataset, Split};
use edgecoop::gate::{
    balanced_training_set, evaluate_gate, label_samples, qbc_select, random_count, train_gate, CommitteeSpec,
    GateHyper, GateKind, GateLabel, GateModel, GateSample,
};
use edgecoop::model_spec::{compression_ratio, compression_ratio_from_sizes, param_count, realize, ModelSpec};
use edgecoop::nn::{evaluate, step, train, Conv2d, Dense, KdConfig, KdMode, Layer, Network, Objective, TrainConfig};
use edgecoop::rl::{compress, reward, CompressConfig, Policy, RewardParams};
use edgecoop::runtime::{
    bench_compare, decode_message, edge_run_traced, encode_message, wire, CloudClient, CloudServer, EdgeGate,
    NetProfile, Strategy, WireMessage,
};
use edgecoop::tensor::Tensor;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

// ---------------------------------------------------------------- 1

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn param_mut(layers: &mut [Layer], li: usize, j: usize) -> &mut f32 {
    match &mut layers[li] {
        Layer::Dense(d) => {
            let nw = d.weight.len();
            if j < nw {
                &mut d.weight[j]
            } else {
                &mut d.bias[j - nw]
            }
        }
        Layer::Conv2d(c) => {
            let nw = c.weight.len();
            if j < nw {
                &mut c.weight[j]
            } else {
                &mut c.bias[j - nw]
            }
        }
        _ => unreachable!(),
    }
}

/// Analytic vs finite-difference gradient over every parameter. Where the
/// one-sided slopes disagree the step straddles a ReLU or max-pool kink, and
/// the analytic value is compared with the nearer one-sided slope instead
/// of the central difference. Returns (error, kink count, coordinates).
fn net_grad_error(net: &Network, x: &Tensor, labels: &[usize], objective: Objective<'_>) -> (f64, usize, usize) {
    let h = 1e-3f32;
    let base = step(net, x, labels, objective).unwrap();
    let l0 = base.loss;
    let mut a = Vec::new();
    let mut n = Vec::new();
    let mut kinks = 0;
    for (li, g) in base.grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (j, &gv) in g.weight.iter().chain(&g.bias).enumerate() {
            let eval = |delta: f32| {
                let mut layers = net.layers().to_vec();
                let p = param_mut(&mut layers, li, j);
                let before = *p;
                *p += delta;
                let moved = (*p - before) as f64;
                let probe = Network::new(net.input_dims().to_vec(), layers, net.class_count()).unwrap();
                (step(&probe, x, labels, objective).unwrap().loss, moved)
            };
            let (lp, up) = eval(h);
            let (lm, down) = eval(-h);
            let (right, left) = ((lp - l0) / up, (l0 - lm) / -down);
            let central = (lp - lm) / (up - down);
            let g = gv as f64;
            let mut numeric = central;
            if (right - left).abs() > 1e-3 * (1.0 + central.abs()) {
                let side = if (g - right).abs() < (g - left).abs() { right } else { left };
                if (g - side).abs() < (g - central).abs() {
                    kinks += 1;
                    numeric = side;
                }
            }
            a.push(g);
            n.push(numeric);
        }
    }
    (rel_err(&a, &n), kinks, a.len())
}

fn random_tensor(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn criterion_1() -> Check {
    let mut worst = [0.0f64; 4];
    let (mut skipped, mut total) = (0usize, 0usize);
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let batch = 5;
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();

        // dense + relu
        let mlp = Network::new(
            vec![6],
            vec![
                Layer::Dense(Dense::new(6, 5, &mut rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(5, 3, &mut rng)),
            ],
            3,
        )
        .unwrap();
        let x = random_tensor(vec![batch, 6], &mut rng);
        let (e, k, t) = net_grad_error(&mlp, &x, &labels, Objective::CrossEntropy);
        worst[0] = worst[0].max(e);
        skipped += k;
        total += t;

        // conv (stride/padding varied) + relu + maxpool + flatten + dense
        let (s, p) = [(1, 1), (1, 0), (2, 1), (1, 2)][inst as usize % 4];
        let c1 = Conv2d::new(2, 3, 3, s, p, &mut rng);
        let (oh, ow) = c1.output_hw(6, 6).unwrap();
        let (ph, pw) = (oh / 2, ow / 2);
        let cnn = Network::new(
            vec![2, 6, 6],
            vec![
                Layer::Conv2d(c1),
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv2d(Conv2d::new(3, 2, 1, 1, 0, &mut rng)),
                Layer::Flatten,
                Layer::Dense(Dense::new(2 * ph * pw, 3, &mut rng)),
            ],
            3,
        )
        .unwrap();
        let x = random_tensor(vec![batch, 2, 6, 6], &mut rng);
        let (e, k, t) = net_grad_error(&cnn, &x, &labels, Objective::CrossEntropy);
        worst[1] = worst[1].max(e);
        skipped += k;
        total += t;

        // distillation objective (logit KL + similarity preserving)
        let x = random_tensor(vec![batch, 6], &mut rng);
        let t_logits = random_tensor(vec![batch, 3], &mut rng);
        let t_feats = random_tensor(vec![batch, 7], &mut rng);
        let kd = KdConfig {
            mode: KdMode::Combined,
            temperature: 2.0,
            kl_weight: 0.5,
            sp_weight: 1.0,
        };
        let obj = Objective::Distill {
            teacher_logits: &t_logits,
            teacher_features: &t_feats,
            kd: &kd,
        };
        let (e, k, t) = net_grad_error(&mlp, &x, &labels, obj);
        worst[2] = worst[2].max(e);
        skipped += k;
        total += t;

        // GRU policy: width 8, T = 3, two layers, BPTT
        let policy = Policy::with_state_width(5, 8, 2, 2000 + inst);
        let states: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
        let (_, g) = policy.log_prob_grad(&states, &actions).unwrap();
        let analytic: Vec<f64> = g.blocks().iter().flat_map(|(_, v)| v.iter().copied()).collect();
        let mut numeric = Vec::new();
        let nblocks = policy.blocks().len();
        for bi in 0..nblocks {
            for j in 0..policy.blocks()[bi].1.len() {
                let eval = |d: f64| {
                    let mut p = policy.clone();
                    p.blocks_mut()[bi][j] += d;
                    p.log_prob(&states, &actions).unwrap()
                };
                let h = 1e-5;
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        worst[3] = worst[3].max(rel_err(&analytic, &numeric));
    }
    let detail = format!(
        "worst relative error: dense {:.1e}, conv/pool {:.1e}, distill {:.1e}, gru {:.1e} (20 instances each, {skipped} of {total} network coordinates on a kink)",
        worst[0], worst[1], worst[2], worst[3]
    );
    ensure(worst.iter().all(|&w| w < 1e-3), detail.clone())?;
    ensure(skipped * 20 <= total, format!("too many kink coordinates: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let p = RewardParams {
        alpha: 20.0,
        beta: 15.0,
        c0: 0.3,
        a0: 0.7,
    };
    ensure(reward(p.c0, p.a0, &p) == 1.0, "reward(c0, a0) != 1")?;
    let e2 = reward(p.c0 + 0.1, p.a0, &p);
    ensure((e2 - 2f64.exp()).abs() < 1e-9, format!("reward(c0 + 0.1, a0) = {e2}"))?;

    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..PtConfig::default()
    });
    let strat = (0.0f64..1.0, 0.0f64..1.0, 1e-6f64..0.5, 1e-6f64..0.5);
    runner
        .run(&strat, |(c, a, dc, da)| {
            let r = reward(c, a, &p);
            let c2 = (c + dc).min(1.0);
            let a2 = (a + da).min(1.0);
            prop_assert!(r > 0.0);
            if c2 > c {
                prop_assert!(reward(c2, a, &p) > r, "not increasing in C at ({c}, {a})");
            }
            if a2 > a {
                prop_assert!(reward(c, a2, &p) > r, "not increasing in A at ({c}, {a})");
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("R(c0,a0) = 1, R(c0+0.1,a0) - e^2 = {:.1e}, 1000 monotonicity cases", e2 - 2f64.exp()))
}

// ---------------------------------------------------------------- 3

/// Parameter count from layer hyperparameters alone.
fn hand_count(net: &Network) -> usize {
    net.layers()
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => d.inputs * d.outputs + d.outputs,
            Layer::Conv2d(c) => c.out_channels * c.in_channels * c.kernel * c.kernel + c.out_channels,
            _ => 0,
        })
        .sum()
}

/// Parameter count from the stored weight and bias buffers.
fn walk_count(net: &Network) -> usize {
    net.layers()
        .iter()
        .filter_map(|l| l.params())
        .map(|(w, b)| w.len() + b.len())
        .sum()
}

fn criterion_3() -> Check {
    let specs = [
        "input 1x8x8 classes 4; conv 3 1 1 8; relu; conv 3 1 1 8; relu; conv 3 1 1 8; relu; dense 32; relu; dense 4",
        "input 1x28x28 classes 10; conv 5 1 2 6; relu; pool; conv 5 1 0 16; relu; pool; dense 120; relu; dense 84; relu; dense 10",
        "input 784 classes 10; dense 64; relu; dense 10",
        "input 3x16x16 classes 10; conv 3 2 1 12; relu; conv 3 1 0 12; pool; dense 10",
    ];
    for (i, s) in specs.iter().enumerate() {
        let spec: ModelSpec = s.parse().map_err(|e| format!("{e}"))?;
        let net = realize(&spec, i as u64).map_err(|e| e.to_string())?.network;
        let (a, b, c) = (param_count(&net), hand_count(&net), walk_count(&net));
        ensure(a == b && b == c, format!("fixture {i}: param_count {a}, hand {b}, walk {c}"))?;
    }
    // Teacher 10 -> 20 -> 3 has 10*20+20 + 20*3+3 = 283 parameters; student
    // 10 -> 5 -> 3 has 10*5+5 + 5*3+3 = 73.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mlp = |hidden: usize, rng: &mut ChaCha8Rng| {
        Network::new(
            vec![10],
            vec![
                Layer::Dense(Dense::new(10, hidden, rng)),
                Layer::Relu,
                Layer::Dense(Dense::new(hidden, 3, rng)),
            ],
            3,
        )
        .unwrap()
    };
    let (t, s) = (mlp(20, &mut rng), mlp(5, &mut rng));
    let c = compression_ratio(&t, &s).map_err(|e| e.to_string())?;
    ensure(c == 1.0 - 73.0 / 283.0, format!("C = {c}, expected 1 - 73/283"))?;
    let table = compression_ratio_from_sizes(407.0, 43704.0).map_err(|e| e.to_string())?;
    ensure((table - 0.99069).abs() < 1e-4, format!("1 - 407/43704 gave {table}"))?;
    Ok(format!("4 fixture nets exact, C(283 -> 73) exact, 1 - 407/43704 = {table:.5}"))
}

// ---------------------------------------------------------------- 4

fn entropy_oracle(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn qbc_oracle(
    normal: &[GateSample],
    m: usize,
    spec: &CommitteeSpec,
    r: f64,
    complex: &[GateSample],
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random_count(r, m);
    let drawn = index::sample(&mut rng, normal.len(), k).into_vec();
    let mut chosen: Vec<usize> = drawn.iter().map(|&i| normal[i].source_index).collect();
    if k == m {
        chosen.sort();
        return chosen;
    }
    let mut train: Vec<GateSample> = complex.to_vec();
    train.extend(drawn.iter().map(|&i| normal[i].clone()));
    let members: Vec<GateModel> = spec
        .members
        .iter()
        .enumerate()
        .map(|(i, (kind, hyper))| train_gate(&train, *kind, hyper, spec.seed + i as u64).unwrap())
        .collect();
    let mut scored: Vec<(f64, usize)> = normal
        .iter()
        .enumerate()
        .filter(|(i, _)| !drawn.contains(i))
        .map(|(_, s)| {
            let score = members
                .iter()
                .map(|g| entropy_oracle(&g.proba(&s.features)))
                .fold(0.0f64, f64::max);
            (score, s.source_index)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    chosen.extend(scored.iter().take(m - k).map(|&(_, i)| i));
    chosen.sort();
    chosen
}

fn gate_instance(seed: u64) -> (Vec<GateSample>, Vec<GateSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(3..8);
    let n_complex = rng.random_range(10..40);
    let n_normal = rng.random_range(n_complex + 20..=(200 - n_complex));
    let mut idx = 0;
    let mut make = |label: GateLabel, rng: &mut ChaCha8Rng| {
        let shift = if label == GateLabel::Normal { 0.8 } else { -0.8 };
        idx += 1;
        GateSample {
            features: (0..width).map(|_| rng.random_range(-2.0..2.0) + shift).collect(),
            label,
            source_index: idx,
        }
    };
    let complex = (0..n_complex).map(|_| make(GateLabel::Complex, &mut rng)).collect();
    let normal = (0..n_normal).map(|_| make(GateLabel::Normal, &mut rng)).collect();
    (complex, normal)
}

fn criterion_4() -> Check {
    let mut sizes = Vec::new();
    for inst in 0..10u64 {
        let (complex, normal) = gate_instance(inst);
        let m = complex.len();
        let spec = CommitteeSpec {
            seed: 17 + inst,
            ..CommitteeSpec::default()
        };
        let r = [0.2, 0.3, 0.5][inst as usize % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(99 + inst);
        let got = qbc_select(&normal, m, &spec, r, &complex, &mut rng).map_err(|e| e.to_string())?;
        let mut got: Vec<usize> = got.iter().map(|s| s.source_index).collect();
        got.sort();
        let want = qbc_oracle(&normal, m, &spec, r, &complex, 99 + inst);
        ensure(got.len() == m, format!("instance {inst}: selected {} of {m}", got.len()))?;
        ensure(got == want, format!("instance {inst}: selection differs from exhaustive oracle"))?;
        sizes.push(complex.len() + normal.len());
    }
    Ok(format!("10 instances, sizes {sizes:?}, all set-identical"))
}

// ---------------------------------------------------------------- shared fixtures

struct Pair {
    name: &'static str,
    data: Dataset,
    teacher: Network,
    student: Network,
}

fn fit(spec: &str, data: &Dataset, epochs: usize, lr: f32, seed: u64) -> Network {
    let spec = format!(
        "input {} classes {}; {spec}",
        data.sample_dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"),
        data.class_count()
    );
    let net = realize(&spec.parse().unwrap(), seed).unwrap().network;
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        seed,
        kd: None,
    };
    train(net, &data.split(Split::Train), &cfg).unwrap().0
}

fn synthetic_pair(seed: u64, name: &'static str) -> Pair {
    let data = gen_synthetic(4, 250, &[1, 8, 8], 5.0, seed).unwrap();
    let teacher = fit("dense 32; relu; dense 4", &data, 10, 0.05, seed);
    let student = fit("dense 8; relu; dense 4", &data, 6, 0.05, seed + 1);
    Pair {
        name,
        data,
        teacher,
        student,
    }
}

fn mnist_pair() -> Pair {
    let dir = fixture_dir();
    let mut data = load_idx(
        &dir.join("mnist2k-images-idx3-ubyte"),
        &dir.join("mnist2k-labels-idx1-ubyte"),
    )
    .unwrap();
    data.stratify(0.7, 0.1, 7).unwrap();
    let teacher = fit("dense 64; relu; dense 10", &data, 12, 0.1, 3);
    let student = fit("dense 16; relu; dense 10", &data, 6, 0.05, 4);
    Pair {
        name: "mnist-2k",
        data,
        teacher,
        student,
    }
}

fn pairs() -> &'static [Pair] {
    static PAIRS: OnceLock<Vec<Pair>> = OnceLock::new();
    PAIRS.get_or_init(|| vec![synthetic_pair(11, "synthetic-a"), synthetic_pair(12, "synthetic-b"), mnist_pair()])
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let mut notes = Vec::new();
    for pair in [&pairs()[0], &pairs()[2]] {
        let test = pair.data.split(Split::Test);
        let server = CloudServer::bind(pair.teacher.clone(), "127.0.0.1:0", NetProfile::default())
            .and_then(|s| s.spawn())
            .map_err(|e| e.to_string())?;
        let addr = server.addr.to_string();
        let (report, outcomes) = edge_run_traced(
            &pair.student,
            Some(&EdgeGate::Oracle),
            &test,
            Some(&addr),
            Strategy::Cooperation,
            &NetProfile::default(),
        )
        .map_err(|e| e.to_string())?;
        server.shutdown().map_err(|e| e.to_string())?;

        let s_pred = pair.student.predict_dataset(&test).unwrap();
        let t_pred = pair.teacher.predict_dataset(&test).unwrap();
        let n = test.len();
        let labels = test.labels();
        let both_wrong = (0..n).filter(|&i| s_pred[i] != labels[i] && t_pred[i] != labels[i]).count();
        let recount = (0..n).filter(|&i| outcomes[i].prediction == labels[i]).count();
        let identity = 1.0 - both_wrong as f64 / n as f64;
        let s_acc = evaluate(&pair.student, &test).unwrap();
        let t_acc = evaluate(&pair.teacher, &test).unwrap();
        ensure(
            recount as f64 / n as f64 == report.accuracy,
            format!("{}: report accuracy disagrees with per-sample recount", pair.name),
        )?;
        ensure(
            (report.accuracy - identity).abs() < 1e-12 && n - recount == both_wrong,
            format!("{}: cooperation {} != 1 - both_wrong/N {}", pair.name, report.accuracy, identity),
        )?;
        ensure(
            report.accuracy >= s_acc.max(t_acc),
            format!("{}: cooperation {} below max(student {s_acc}, teacher {t_acc})", pair.name, report.accuracy),
        )?;
        notes.push(format!(
            "{} N={n}: student {s_acc:.3}, teacher {t_acc:.3}, coop {:.3}",
            pair.name, report.accuracy
        ));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 6

/// Points either side of a random hyperplane with no point closer than
/// 0.5 to it, so the two classes are separated by a margin of at least 1.
fn separable(n: usize, width: usize, normal: &[f64], rng: &mut ChaCha8Rng, offset: usize) -> Vec<GateSample> {
    let mut out = Vec::new();
    while out.len() < n {
        let x: Vec<f64> = (0..width).map(|_| rng.random_range(-4.0..4.0)).collect();
        let s: f64 = x.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() + 0.3;
        if s.abs() < 0.5 {
            continue;
        }
        out.push(GateSample {
            features: x,
            label: if s > 0.0 { GateLabel::Normal } else { GateLabel::Complex },
            source_index: offset + out.len(),
        });
    }
    out
}

fn criterion_6() -> Check {
    let mut accs = Vec::new();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let width = 10;
        let mut w: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= norm);
        let train = separable(400, width, &w, &mut rng, 0);
        let test = separable(400, width, &w, &mut rng, 400);
        let gate = train_gate(&train, GateKind::LinearSvm, &GateHyper::default(), seed).map_err(|e| e.to_string())?;
        accs.push(evaluate_gate(&gate, &test).accuracy);
    }
    let passing = accs.iter().filter(|&&a| a >= 0.95).count();
    let detail = format!("test accuracy per seed {accs:?}");
    ensure(passing >= 2, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let mut rows = Vec::new();
    let mut good = 0;
    for seed in 0..3u64 {
        let data = gen_synthetic(4, 300, &[1, 8, 8], 6.0, seed).unwrap();
        let teacher = fit(
            "conv 3 1 1 8; relu; conv 3 1 1 8; relu; conv 3 1 1 8; relu; dense 32; relu; dense 4",
            &data,
            15,
            0.05,
            seed,
        );
        let test = data.split(Split::Test);
        let t_acc = evaluate(&teacher, &test).unwrap();
        ensure(t_acc >= 0.95, format!("seed {seed}: teacher test accuracy {t_acc} < 0.95"))?;
        let cfg = CompressConfig {
            episodes: 30,
            seed,
            reward: RewardParams {
                alpha: 20.0,
                beta: 15.0,
                c0: 0.3,
                a0: 0.7,
            },
            ..CompressConfig::default()
        };
        let result = compress(&teacher, &cfg, &data).map_err(|e| e.to_string())?;
        ensure(result.history.len() == 30, "history length != episodes")?;
        let c = compression_ratio(&teacher, &result.best_student).unwrap();
        let a = evaluate(&result.best_student, &test).unwrap();
        if c >= 0.5 && a >= 0.7 {
            good += 1;
        }
        rows.push(format!("seed {seed}: teacher {t_acc:.3}, C {c:.3}, A {a:.3}"));
    }
    let detail = rows.join("; ");
    ensure(good >= 2, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn trained_gate(pair: &Pair, seed: u64) -> GateModel {
    let labeling = label_samples(&pair.student, &pair.data.split(Split::Train)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let committee = CommitteeSpec {
        seed,
        ..CommitteeSpec::default()
    };
    let samples = balanced_training_set(&labeling, &committee, 0.9, &mut rng).unwrap();
    train_gate(&samples, GateKind::RandomForest, &GateHyper::default(), seed).unwrap()
}

fn criterion_8() -> Check {
    let profile = NetProfile::simulated(50.0, 1e6);
    let mut rows = Vec::new();
    for (i, pair) in pairs().iter().enumerate() {
        let gate = EdgeGate::Model(trained_gate(pair, i as u64));
        let test = pair.data.split(Split::Test);
        let first = bench_compare(&test, &pair.student, &pair.teacher, &gate, &profile).map_err(|e| e.to_string())?;
        let again = bench_compare(&test, &pair.student, &pair.teacher, &gate, &profile).map_err(|e| e.to_string())?;
        ensure(first.csv == again.csv, format!("{}: simulated reports differ between runs", pair.name))?;
        let [edge, cloud, coop] = [&first.reports[0], &first.reports[1], &first.reports[2]];
        let f = coop.offload_fraction;
        ensure(f > 0.05 && f < 0.5, format!("{}: gate offload fraction {f:.3} outside (0.05, 0.5)", pair.name))?;
        ensure(
            edge.runtime_s < coop.runtime_s && coop.runtime_s < cloud.runtime_s,
            format!(
                "{}: runtimes edge {} coop {} cloud {}",
                pair.name, edge.runtime_s, coop.runtime_s, cloud.runtime_s
            ),
        )?;
        rows.push(format!(
            "{}: edge {:.3}s < coop {:.3}s < cloud {:.3}s (offload {:.3})",
            pair.name, edge.runtime_s, coop.runtime_s, cloud.runtime_s, f
        ));
    }
    Ok(rows.join("; "))
}

// ---------------------------------------------------------------- 9

fn wire_strategy() -> impl PropStrategy<Value = WireMessage> {
    prop_oneof![
        (any::<u64>(), proptest::collection::vec(1u32..5, 0..4)).prop_flat_map(|(id, dims)| {
            let n: usize = dims.iter().map(|&d| d as usize).product();
            proptest::collection::vec(any::<u32>(), n).prop_map(move |bits| WireMessage::InferRequest {
                request_id: id,
                dims: dims.clone(),
                payload: bits.into_iter().map(f32::from_bits).collect(),
            })
        }),
        (any::<u64>(), any::<u32>()).prop_map(|(request_id, predicted_class)| WireMessage::InferResponse {
            request_id,
            predicted_class
        }),
        Just(WireMessage::Shutdown),
    ]
}

fn criterion_9() -> Check {
    let mut runner = TestRunner::new(PtConfig {
        cases: 1000,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..PtConfig::default()
    });
    runner
        .run(&wire_strategy(), |m| {
            let bytes = encode_message(&m);
            let back = decode_message(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(back.bit_eq(&m));
            prop_assert_eq!(encode_message(&back), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // 2x2 request, id 42, payload [1, -2, 0.5, 0], written out byte by byte.
    let golden: [u8; 40] = [
        b'E', b'C', b'W', b'P', 1, 0, 0, 42, 0, 0, 0, 0, 0, 0, 0, 2, 2, 0, 0, 0, 2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f,
        0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x3f, 0, 0, 0, 0,
    ];
    let want = WireMessage::InferRequest {
        request_id: 42,
        dims: vec![2, 2],
        payload: vec![1.0, -2.0, 0.5, 0.0],
    };
    ensure(decode_message(&golden).ok() == Some(want.clone()), "golden frame decodes wrongly")?;
    ensure(encode_message(&want) == golden, "golden frame encodes wrongly")?;
    ensure(encode_message(&WireMessage::Shutdown).len() == 7, "shutdown frame is not 7 bytes")?;

    let pair = &pairs()[2];
    let sample = pair.data.subset(&(0..100).collect::<Vec<_>>());
    let server = CloudServer::bind(pair.teacher.clone(), "127.0.0.1:0", NetProfile::default())
        .and_then(|s| s.spawn())
        .map_err(|e| e.to_string())?;
    let mut client = CloudClient::connect(server.addr).map_err(|e| e.to_string())?;
    let local = pair.teacher.predict_dataset(&sample).unwrap();
    for i in 0..100 {
        let (p, bytes) = client
            .infer(sample.samples().row(i), sample.sample_dims())
            .map_err(|e| e.to_string())?;
        ensure(p == local[i], format!("request {i}: cloud {p}, local {}", local[i]))?;
        ensure(bytes > wire::framed_len(&WireMessage::Shutdown), "byte count too small")?;
    }
    drop(client);
    server.shutdown().map_err(|e| e.to_string())?;
    Ok("1000 random round trips bit-exact, golden frame, 100/100 cloud answers match local teacher".into())
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_edgecoop"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`edgecoop {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(
        d.join("cfg.toml"),
        "[data]\nper_class = 80\nseparation = 6.0\nseed = 5\n\n\
         [teacher]\narch = \"conv 3 1 1 4; relu; dense 16; relu; dense 4\"\n\n\
         [train]\nepochs = 8\n\n\
         [compress]\nepisodes = 6\nhidden_width = 16\nseed = 5\n\n\
         [gate]\nkind = \"svm\"\n\n\
         [bench]\nmode = \"simulated\"\nrtt_ms = 50\nbandwidth_bytes_per_s = 1000000\n",
    )
    .map_err(|e| e.to_string())?;
    cli(&["gen-data", "--config", "cfg.toml", "--out", "data.ecds"], d)?;
    cli(&["train-teacher", "--config", "cfg.toml", "--data", "data.ecds", "--out", "teacher.bin"], d)?;
    for run in ["1", "2"] {
        let (student, history) = (format!("student{run}.bin"), format!("history{run}.csv"));
        cli(
            &["compress", "--teacher", "teacher.bin", "--config", "cfg.toml", "--data", "data.ecds", "--out", &student, "--history", &history],
            d,
        )?;
    }
    let read = |name: &str| std::fs::read(d.join(name)).map_err(|e| e.to_string());
    ensure(read("history1.csv")? == read("history2.csv")?, "compress history CSVs differ")?;
    ensure(read("student1.bin")? == read("student2.bin")?, "compressed students differ")?;
    cli(
        &["train-gate", "--student", "student1.bin", "--config", "cfg.toml", "--data", "data.ecds", "--out", "gate.bin"],
        d,
    )?;
    for run in ["1", "2"] {
        let report = format!("bench{run}.csv");
        cli(
            &["bench", "--student", "student1.bin", "--teacher", "teacher.bin", "--gate", "gate.bin", "--config", "cfg.toml", "--data", "data.ecds", "--report", &report],
            d,
        )?;
    }
    let bench = read("bench1.csv")?;
    ensure(bench == read("bench2.csv")?, "bench CSVs differ")?;
    let parsed = edgecoop::runtime::parse_bench_csv(&String::from_utf8_lossy(&bench)).map_err(|e| e.to_string())?;
    ensure(parsed.len() == 3, "bench CSV does not hold three reports")?;
    Ok(format!(
        "history ({} bytes) and bench ({} bytes) CSVs byte-identical across two invocations",
        read("history1.csv")?.len(),
        bench.len()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", criterion_1),
        ("reward formula", criterion_2),
        ("compression-ratio oracle", criterion_3),
        ("QBC oracle equivalence", criterion_4),
        ("oracle-gate dominance", criterion_5),
        ("learned-gate quality", criterion_6),
        ("end-to-end compression", criterion_7),
        ("latency ordering", criterion_8),
        ("protocol", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} [{secs:.1} s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
