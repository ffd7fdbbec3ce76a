//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use nbof_core::attention::{
    att_2da, att_csa, att_ctsa, att_tsa, self_attention_forward, Att2DAMode, Att2DAParams, Pass, SelfAttVariant,
};
use nbof_core::data::{
    decode_features, encode_features, gen_noisy_timestamps, gen_order_task, NoisyTaskParams, OrderTaskParams,
};
use nbof_core::model::{
    randomized_model, read_checkpoint, write_checkpoint, AttentionKind, FrontendConfig, Model, ModelConfig,
    ModelLossOp,
};
use nbof_core::nbof::{aggregate, quantize, Codebook};
use nbof_core::numerics::grad_check;
use nbof_core::train::{cross_validate, fit, holdout, TrainConfig};
use nbof_core::{rng, Error, Matrix};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const VARIANTS: [SelfAttVariant; 3] = [
    SelfAttVariant::CodewordTemporal,
    SelfAttVariant::Codeword,
    SelfAttVariant::Temporal,
];
const MODES: [Att2DAMode; 3] = [Att2DAMode::Input, Att2DAMode::Codeword, Att2DAMode::Temporal];

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (i, kind) in AttentionKind::ALL.into_iter().enumerate() {
        for heads in [1, 2] {
            let cfg = ModelConfig {
                codewords: 6,
                latent_dim: 5,
                heads,
                seed: 100 + i as u64,
                ..ModelConfig::desk(4, 8, 3, kind)
            };
            let mut r = rng::seeded(200 + 10 * i as u64 + heads as u64);
            let items: Vec<(Matrix, usize)> = (0..3).map(|c| (random_matrix(&mut r, 4, 8, 1.0), c)).collect();
            let samples: Vec<Matrix> = items.iter().map(|(x, _)| x.clone()).collect();
            let model = randomized_model(cfg, &samples, 300 + i as u64).unwrap();
            let point = model.parameter_values();
            let op = ModelLossOp::new(model, items).unwrap();
            let rep = grad_check(&op, &point, 1e-5).unwrap();
            worst = worst.max(rep.max_rel_err);
            if !rep.passed(1e-4) {
                failures.push(format!("{kind}/h{heads}={:.2e}", rep.max_rel_err));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(120),
        format!("14 configs, max rel err {worst:.2e}, {:.1}s {}", elapsed.as_secs_f64(), failures.join(" ")),
    )
}

fn simplex() -> Outcome {
    let mut r = rng::seeded(2);
    let (mut worst_sum, mut min_entry) = (0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let (d, n, k) = (r.random_range(1..=8), r.random_range(1..=16), r.random_range(1..=16));
        let scale = 10f64.powf(r.random_range(-2.0..3.0));
        let x = random_matrix(&mut r, d, n, scale);
        let cb = Codebook::new(random_matrix(&mut r, k, d, scale), random_matrix(&mut r, k, d, 4.0)).unwrap();
        let phi = quantize(&x, &cb).unwrap();
        for j in 0..n {
            let col = phi.col(j);
            worst_sum = worst_sum.max((col.iter().sum::<f64>() - 1.0).abs());
            min_entry = min_entry.min(col.iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }
    outcome(
        worst_sum <= 1e-9 && min_entry >= 0.0,
        format!("1000 calls, max |Σ−1| {worst_sum:.1e}, min entry {min_entry:.1e}"),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng::seeded(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (k, n) = (r.random_range(1..=8), r.random_range(1..=8));
        let phi = random_phi(&mut r, k, n);
        for mode in MODES {
            let size = mode.axis_len(k, n);
            let mut p = Att2DAParams::new(random_matrix(&mut r, size, size, 3.0), 0.0, mode).unwrap();
            p.alpha_raw = r.random_range(-3.0..3.0);
            let want = two_d(&grid(&phi), &grid(&p.w), p.alpha(), mode);
            worst = worst.max(max_abs_diff(&want, &att_2da(&phi, &p).unwrap()));
        }
        let (d, h) = (r.random_range(1..=8), r.random_range(1..=4));
        for variant in VARIANTS {
            let p = random_self_attention(&mut r, variant, k, n, d, h);
            let (attn, want) = self_attention(&grid(&phi), variant, &head_grids(&p));
            let got = match variant {
                SelfAttVariant::CodewordTemporal => att_ctsa(&phi, &p),
                SelfAttVariant::Codeword => att_csa(&phi, &p),
                SelfAttVariant::Temporal => att_tsa(&phi, &p),
            }
            .unwrap();
            worst = worst.max(max_abs_diff(&want, &got));
            let fwd = self_attention_forward(&phi, &p, Pass::Eval).unwrap();
            for (a, head) in attn.iter().zip(&fwd.heads) {
                worst = worst.max(max_abs_diff(a, &head.attention));
            }
        }
    }
    outcome(worst <= 1e-10, format!("100 instances x 6 operators, max abs diff {worst:.1e}"))
}

fn shuffled(n: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

fn equivariance() -> Outcome {
    let mut r = rng::seeded(4);
    let (mut tsa, mut csa, mut hist) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (k, n, d, h) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=6), r.random_range(1..=3));
        let phi = random_phi(&mut r, k, n);

        let p = random_self_attention(&mut r, SelfAttVariant::Temporal, k, n, d, h);
        let pi = shuffled(n, &mut r);
        let lhs = att_tsa(&permute_cols(&phi, &pi), &p).unwrap();
        tsa = tsa.max(lhs.max_abs_diff(&permute_cols(&att_tsa(&phi, &p).unwrap(), &pi)));

        let p = random_self_attention(&mut r, SelfAttVariant::Codeword, k, n, d, h);
        let pi = shuffled(k, &mut r);
        let lhs = att_csa(&permute_rows(&phi, &pi), &p).unwrap();
        let blocks: Vec<usize> = (0..h).flat_map(|b| pi.iter().map(move |&i| b * k + i)).collect();
        csa = csa.max(lhs.max_abs_diff(&permute_rows(&att_csa(&phi, &p).unwrap(), &blocks)));

        let dim = r.random_range(1..=6);
        let x = random_matrix(&mut r, dim, n, 2.0);
        let cb = Codebook::new(random_matrix(&mut r, k, dim, 2.0), random_matrix(&mut r, k, dim, 1.0)).unwrap();
        let pi = shuffled(n, &mut r);
        let a = aggregate(&quantize(&x, &cb).unwrap()).unwrap();
        let b = aggregate(&quantize(&permute_cols(&x, &pi), &cb).unwrap()).unwrap();
        hist = hist.max(a.max_abs_diff(&b));
    }

    let phi = Matrix::from_rows(&[[0.9, 0.1, 0.5], [0.1, 0.9, 0.5]]);
    let w = Matrix::from_rows(&[[0.0, 4.0, -2.0], [1.0, 0.0, 3.0], [-3.0, 2.0, 0.0]]);
    let mut p = Att2DAParams::new(w, 0.0, Att2DAMode::Temporal).unwrap();
    p.set_alpha(1.0);
    let pi = [2, 0, 1];
    let gap = att_2da(&permute_cols(&phi, &pi), &p)
        .unwrap()
        .max_abs_diff(&permute_cols(&att_2da(&phi, &p).unwrap(), &pi));

    outcome(
        tsa <= 1e-12 && csa <= 1e-12 && hist <= 1e-12 && gap >= 1e-3,
        format!("tsa {tsa:.1e}, csa {csa:.1e}, histogram {hist:.1e}, 2da-temporal counterexample gap {gap:.3e}"),
    )
}

fn order_task() -> Outcome {
    let start = Instant::now();
    let set = gen_order_task(OrderTaskParams { dim: 4, seq_len: 20, count: 400 }, 11).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 16,
        learning_rate: 0.01,
        seed: 11,
        ..TrainConfig::default()
    };
    let acc = |name: &str| {
        let mc = ModelConfig {
            codewords: 8,
            latent_dim: 8,
            ..ModelConfig::desk(4, 20, 2, name.parse().unwrap())
        };
        let report = holdout(&mc, &set, &cfg, 0.2).unwrap();
        assert_eq!(report.folds[0].val_items, 80);
        report.accuracy.mean
    };
    let (none, tsa, twod) = (acc("none"), acc("tsa"), acc("2da-temporal"));
    let elapsed = start.elapsed();
    let chance = 0.45..=0.55;
    outcome(
        chance.contains(&none) && chance.contains(&tsa) && twod >= 0.90 && elapsed < Duration::from_secs(300),
        format!(
            "none {none:.3}, tsa {tsa:.3}, 2da-temporal {twod:.3}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn denoising() -> Outcome {
    let set = gen_noisy_timestamps(
        NoisyTaskParams {
            classes: 3,
            dim: 8,
            seq_len: 20,
            signal_fraction: 0.1,
            snr: 2.0,
            count: 600,
        },
        7,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 32,
        learning_rate: 0.01,
        folds: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let acc = |name: &str| {
        let mc = ModelConfig {
            codewords: 16,
            latent_dim: 8,
            ..ModelConfig::desk(8, 20, 3, name.parse().unwrap())
        };
        cross_validate(&mc, &set, &cfg).unwrap().accuracy.mean
    };
    let base = acc("none");
    let variants: Vec<(&str, f64)> = ["tsa", "ctsa", "csa"].into_iter().map(|v| (v, acc(v))).collect();
    let none_worse = variants.iter().all(|(_, a)| *a >= base - 0.02);
    let one_better = variants.iter().any(|(_, a)| *a >= base + 0.03);
    let listed: Vec<String> = variants.iter().map(|(v, a)| format!("{v} {a:.3} ({:+.3})", a - base)).collect();
    outcome(
        none_worse && one_better,
        format!("baseline {base:.3}; {}", listed.join(", ")),
    )
}

fn reductions() -> Outcome {
    let mut r = rng::seeded(7);
    let mut exact = true;
    for _ in 0..50 {
        let (k, n, d, h) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=6), r.random_range(1..=4));
        let phi = random_phi(&mut r, k, n);
        let replicated = Matrix::vstack(&vec![phi.clone(); h]).unwrap();
        for variant in VARIANTS {
            let mut p = random_self_attention(&mut r, variant, k, n, d, h);
            for head in &mut p.heads {
                head.set_alpha(1.0);
            }
            let out = self_attention_forward(&phi, &p, Pass::Eval).unwrap().output;
            exact &= out == replicated;
        }
        for mode in MODES {
            let size = mode.axis_len(k, n);
            let mut p = Att2DAParams::new(random_matrix(&mut r, size, size, 3.0), 0.0, mode).unwrap();
            p.set_alpha(0.0);
            exact &= att_2da(&phi, &p).unwrap() == phi;
        }
    }
    outcome(exact, "50 instances, bitwise identity for ctsa/csa/tsa at α=1 and 2DA at α=0")
}

fn payload_region(bytes: &[u8]) -> std::ops::Range<usize> {
    let header = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    16 + header..bytes.len() - 4
}

fn corruption_trials(bytes: &[u8], decode: impl Fn(&[u8]) -> nbof_core::Result<()>, r: &mut impl Rng) -> usize {
    let region = payload_region(bytes);
    let mut detected = 0;
    for _ in 0..100 {
        let mut copy = bytes.to_vec();
        let at = r.random_range(region.clone());
        copy[at] ^= r.random_range(1..=255u8);
        if matches!(decode(&copy), Err(Error::Checksum { .. })) {
            detected += 1;
        }
    }
    detected
}

fn persistence() -> Outcome {
    let cfg = ModelConfig {
        frontend: FrontendConfig::TemporalConv { width: 3, channels: 4 },
        codewords: 6,
        latent_dim: 5,
        heads: 2,
        ..ModelConfig::desk(3, 8, 3, "ctsa".parse().unwrap())
    };
    let mut r = rng::seeded(8);
    let samples: Vec<Matrix> = (0..4).map(|_| random_matrix(&mut r, 3, 8, 1.0)).collect();
    let model = randomized_model(cfg, &samples, 8).unwrap();
    let ckpt = write_checkpoint(&model).unwrap();
    let back: Model = read_checkpoint(&ckpt).unwrap();
    let ckpt_ok = back == model && write_checkpoint(&back).unwrap() == ckpt;

    let set = gen_noisy_timestamps(
        NoisyTaskParams {
            classes: 3,
            dim: 8,
            seq_len: 20,
            signal_fraction: 0.1,
            snr: 2.0,
            count: 50,
        },
        7,
    )
    .unwrap();
    let features = encode_features(&set).unwrap();
    let set_back = decode_features(&features).unwrap();
    let features_ok = set_back == set && encode_features(&set_back).unwrap() == features;

    let c = corruption_trials(&ckpt, |b| read_checkpoint(b).map(|_| ()), &mut r);
    let f = corruption_trials(&features, |b| decode_features(b).map(|_| ()), &mut r);
    outcome(
        ckpt_ok && features_ok && c == 100 && f == 100,
        format!(
            "round trips bitwise: checkpoint {ckpt_ok}, features {features_ok}; corruption detected {c}/100 and {f}/100"
        ),
    )
}

fn determinism() -> Outcome {
    let set = gen_noisy_timestamps(
        NoisyTaskParams {
            classes: 3,
            dim: 4,
            seq_len: 8,
            signal_fraction: 0.25,
            snr: 2.0,
            count: 60,
        },
        9,
    )
    .unwrap();
    let mc = ModelConfig {
        codewords: 6,
        latent_dim: 4,
        heads: 2,
        dropout: 0.2,
        ..ModelConfig::desk(4, 8, 3, "ctsa".parse().unwrap())
    };
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let (m1, t1) = fit(&mc, &set, &cfg, 21).unwrap();
    let (m2, t2) = fit(&mc, &set, &cfg, 21).unwrap();
    let traces = t1.iter().map(|v| v.to_bits()).eq(t2.iter().map(|v| v.to_bits()));
    let ckpts = write_checkpoint(&m1).unwrap() == write_checkpoint(&m2).unwrap();
    outcome(traces && ckpts, format!("loss traces identical {traces}, checkpoints identical {ckpts}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradients),
        ("simplex invariant", simplex),
        ("oracle equivalence", oracle_equivalence),
        ("equivariance", equivariance),
        ("order task discrimination", order_task),
        ("denoising task", denoising),
        ("reductions", reductions),
        ("persistence", persistence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {}: {name}: {} ({})",
            i + 1,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
