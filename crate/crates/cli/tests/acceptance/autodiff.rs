//! Analytic gradients against central finite differences in f64.

use std::time::{Duration, Instant};

use cwgan_core::critic::PairBatch;
use cwgan_core::nn::{
    dropout, Activation, AttentionMask, DecoderLayer, EncoderLayer, FeedForward, InputEmbedding, LayerNorm,
    LinearLayer, Module, MultiHeadAttention, Rng,
};
use cwgan_core::text::TokenSequence;
use cwgan_core::{mle_loss, no_grad, CriticModel, GeneratorModel, ModelConfig, PositionalCombine, Tensor};
use rand::{Rng as _, SeedableRng};

use crate::Outcome;

pub const SEEDS: u64 = 100;
pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates probed per input tensor in the composite cases.
const PROBES: usize = 12;

type Forward = Box<dyn Fn(&[Tensor<f64>]) -> Tensor<f64>>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    forward: Forward,
}

struct GradTarget {
    name: &'static str,
    build: fn(&mut Rng) -> Case,
    /// GradTarget every coordinate instead of a sample.
    exhaustive: bool,
    /// Piecewise-linear somewhere inside: probes whose second difference
    /// shows a kink between `x - h` and `x + h` are skipped and counted.
    kinked: bool,
}

fn param(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    param(rng, shape, -1.0, 1.0)
}

/// Values bounded away from zero so relu never sits on its kink.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::parameter(data, shape).unwrap()
}

fn ids(rng: &mut Rng, n: usize, bound: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..bound)).collect()
}

fn case(inputs: Vec<Tensor<f64>>, f: impl Fn(&[Tensor<f64>]) -> Tensor<f64> + 'static) -> Case {
    Case {
        inputs,
        forward: Box::new(f),
    }
}

fn module_case<M: Module<f64> + 'static>(
    module: M,
    extra: Vec<Tensor<f64>>,
    f: impl Fn(&M, &[Tensor<f64>]) -> Tensor<f64> + 'static,
) -> Case {
    let n_extra = extra.len();
    let mut inputs: Vec<Tensor<f64>> = extra;
    inputs.extend(module.params().into_iter().map(|(_, p)| p));
    case(inputs, move |xs| f(&module, &xs[..n_extra]))
}

fn randomize<M: Module<f64>>(module: &M, rng: &mut Rng) {
    for (_, p) in module.params() {
        p.update_data(|d| d.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3)));
    }
}

fn padded_mask(rng: &mut Rng, b: usize, t: usize, causal: bool) -> AttentionMask {
    let lens: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=t)).collect();
    let mask = AttentionMask::padding(&lens, t, t);
    if causal {
        mask.combine(&AttentionMask::causal(b, t)).unwrap()
    } else {
        mask
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        embed_dim: 6,
        d_model: 4,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 6,
        max_len: 5,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn grad_targets() -> Vec<GradTarget> {
    macro_rules! op {
        ($name:expr, $build:expr) => {
            GradTarget { name: $name, build: $build, exhaustive: true, kinked: false }
        };
    }
    vec![
        op!("add", |r| case(vec![normal(r, &[2, 3]), normal(r, &[2, 3])], |x| x[0].add(&x[1]).unwrap())),
        op!("add (broadcast)", |r| case(vec![normal(r, &[2, 3, 4]), normal(r, &[4])], |x| {
            x[0].add(&x[1]).unwrap()
        })),
        op!("sub", |r| case(vec![normal(r, &[3, 4]), normal(r, &[2, 3, 4])], |x| x[0].sub(&x[1]).unwrap())),
        op!("mul", |r| case(vec![normal(r, &[2, 3, 4]), normal(r, &[3, 4])], |x| x[0].mul(&x[1]).unwrap())),
        op!("scale", |r| case(vec![normal(r, &[5])], |x| x[0].scale(-1.7))),
        op!("add_scalar", |r| case(vec![normal(r, &[5])], |x| x[0].add_scalar(0.3))),
        op!("log", |r| case(vec![param(r, &[6], 0.5, 2.0)], |x| x[0].log())),
        op!("exp", |r| case(vec![normal(r, &[6])], |x| x[0].exp())),
        op!("tanh", |r| case(vec![param(r, &[6], -2.0, 2.0)], |x| x[0].tanh())),
        op!("relu", |r| case(vec![off_zero(r, &[8])], |x| x[0].relu())),
        op!("sum", |r| case(vec![normal(r, &[2, 3])], |x| x[0].sum())),
        op!("mean", |r| case(vec![normal(r, &[2, 3])], |x| x[0].mean())),
        op!("softmax", |r| case(vec![param(r, &[3, 5], -2.0, 2.0)], |x| x[0].softmax())),
        op!("log_softmax", |r| case(vec![param(r, &[3, 5], -2.0, 2.0)], |x| x[0].log_softmax())),
        op!("layer_norm", |r| case(vec![normal(r, &[3, 6])], |x| x[0].layer_norm_core(1e-5))),
        op!("matmul", |r| case(vec![normal(r, &[3, 4]), normal(r, &[4, 2])], |x| x[0].matmul(&x[1]).unwrap())),
        op!("matmul (batched)", |r| case(vec![normal(r, &[2, 3, 4]), normal(r, &[2, 4, 2])], |x| {
            x[0].matmul(&x[1]).unwrap()
        })),
        op!("matmul (shared rhs)", |r| case(vec![normal(r, &[2, 3, 4]), normal(r, &[4, 2])], |x| {
            x[0].matmul(&x[1]).unwrap()
        })),
        op!("transpose", |r| case(vec![normal(r, &[2, 3, 4])], |x| x[0].transpose(0, 2).unwrap())),
        op!("reshape", |r| case(vec![normal(r, &[2, 6])], |x| x[0].reshape(&[3, 4]).unwrap())),
        op!("concat", |r| case(vec![normal(r, &[2, 1, 3]), normal(r, &[2, 2, 3])], |x| {
            Tensor::concat(&x[..2], 1).unwrap()
        })),
        op!("slice", |r| case(vec![normal(r, &[2, 5, 3])], |x| x[0].slice(1, 1, 4).unwrap())),
        op!("embedding", |r| {
            let rows = ids(r, 6, 4);
            case(vec![normal(r, &[4, 3])], move |x| Tensor::embedding(&x[0], &rows, &[2, 3]).unwrap())
        }),
        op!("gather_last", |r| {
            let picks = ids(r, 4, 5);
            case(vec![normal(r, &[4, 5])], move |x| x[0].gather_last(&picks).unwrap())
        }),
        op!("dropout", |r| {
            let seed = r.gen();
            case(vec![normal(r, &[4, 6])], move |x| {
                dropout(&x[0], 0.3, Some(&mut Rng::seed_from_u64(seed))).unwrap()
            })
        }),
        GradTarget {
            name: "linear (tanh)",
            build: |r| {
                let layer = LinearLayer::<f64>::new(4, 3, Activation::Tanh, r);
                module_case(layer, vec![normal(r, &[2, 4])], |m, x| m.forward(&x[0]).unwrap())
            },
            exhaustive: true,
            kinked: false,
        },
        GradTarget {
            name: "layer norm module",
            build: |r| {
                let norm = LayerNorm::<f64>::new(5);
                randomize(&norm, r);
                module_case(norm, vec![normal(r, &[2, 3, 5])], |m, x| m.forward(&x[0]).unwrap())
            },
            exhaustive: true,
            kinked: false,
        },
        GradTarget {
            name: "masked multi-head attention",
            build: |r| {
                let attn = MultiHeadAttention::<f64>::new(4, 2, 0.0, r).unwrap();
                let mask = padded_mask(r, 2, 3, true);
                module_case(attn, vec![normal(r, &[2, 3, 4])], move |m, x| {
                    m.forward(&x[0], &x[0], &mask, None).unwrap()
                })
            },
            exhaustive: true,
            kinked: false,
        },
        GradTarget {
            name: "feed-forward block",
            build: |r| {
                let ff = FeedForward::<f64>::new(4, 6, r);
                module_case(ff, vec![normal(r, &[2, 3, 4])], |m, x| m.forward(&x[0], 0.0, None).unwrap())
            },
            exhaustive: false,
            kinked: true,
        },
        GradTarget {
            name: "encoder layer",
            build: |r| {
                let layer = EncoderLayer::<f64>::new(4, 2, 6, 0.0, r).unwrap();
                randomize(&layer, r);
                let mask = padded_mask(r, 2, 3, false);
                module_case(layer, vec![normal(r, &[2, 3, 4])], move |m, x| {
                    m.forward(&x[0], &mask, None).unwrap()
                })
            },
            exhaustive: false,
            kinked: true,
        },
        GradTarget {
            name: "decoder layer",
            build: |r| {
                let layer = DecoderLayer::<f64>::new(4, 2, 6, 0.0, r).unwrap();
                randomize(&layer, r);
                let self_mask = padded_mask(r, 2, 3, true);
                let lens: Vec<usize> = (0..2).map(|_| r.gen_range(1..=4)).collect();
                let memory_mask = AttentionMask::padding(&lens, 3, 4);
                module_case(layer, vec![normal(r, &[2, 3, 4]), normal(r, &[2, 4, 4])], move |m, x| {
                    m.forward(&x[0], &x[1], &self_mask, &memory_mask, None).unwrap()
                })
            },
            exhaustive: false,
            kinked: true,
        },
        GradTarget {
            name: "input embedding (soft rows, concat positions)",
            build: |r| {
                let emb = InputEmbedding::<f64>::new(5, 3, 2, 4, PositionalCombine::Concat, r).unwrap();
                let rows = param(r, &[2, 3, 5], 0.0, 1.0).softmax();
                let rows = Tensor::parameter(rows.to_vec(), &[2, 3, 5]).unwrap();
                module_case(emb, vec![rows], |m, x| m.forward_rows(&x[0]).unwrap())
            },
            exhaustive: true,
            kinked: false,
        },
        GradTarget {
            name: "generator MLE loss",
            build: |r| {
                let gen = GeneratorModel::<f64>::new(tiny_model(), r.gen()).unwrap();
                let (questions, answers_in, targets) = toy_batch(r);
                module_case(gen, vec![], move |m, _| {
                    let logits = m.teacher_forced_logits(&questions, &answers_in, None).unwrap();
                    mle_loss(&logits, &targets).unwrap()
                })
            },
            exhaustive: false,
            kinked: true,
        },
        GradTarget {
            name: "critic score (straight-through rows)",
            build: |r| {
                let critic = CriticModel::<f64>::new(tiny_model(), r.gen()).unwrap();
                let hard_ids = [[5usize, 6], [7, 5]];
                let q: Vec<&[usize]> = vec![&[5, 7], &[6]];
                let a: Vec<&[usize]> = hard_ids.iter().map(|x| x.as_slice()).collect();
                let base = PairBatch::<f64>::real(&q, &a, 5).unwrap();
                let rows = one_hot_rows(&base, 8);
                module_case(critic, vec![rows], move |m, x| {
                    let batch = PairBatch {
                        rows: Some(x[0].clone()),
                        ..base.clone()
                    };
                    m.score_batch(&batch, None).unwrap()
                })
            },
            exhaustive: false,
            kinked: true,
        },
    ]
}

/// One-hot encoding of every pair's ids, as a differentiable leaf.
fn one_hot_rows(batch: &PairBatch<f64>, vocab: usize) -> Tensor<f64> {
    let width = batch.tokens[0].capacity();
    let mut data = vec![0.0; batch.len() * width * vocab];
    for (b, seq) in batch.tokens.iter().enumerate() {
        for (t, &id) in seq.ids().iter().enumerate() {
            data[(b * width + t) * vocab + id] = 1.0;
        }
    }
    Tensor::parameter(data, &[batch.len(), width, vocab]).unwrap()
}

fn toy_batch(r: &mut Rng) -> (Vec<TokenSequence>, Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut qs = Vec::new();
    let mut ins = Vec::new();
    let mut ts = Vec::new();
    for _ in 0..2 {
        let n = r.gen_range(1..=3);
        let q = ids(r, n, 3).iter().map(|i| i + 5).collect::<Vec<_>>();
        let n = r.gen_range(1..=3);
        let a = ids(r, n, 3).iter().map(|i| i + 5).collect::<Vec<_>>();
        let pair = cwgan_core::text::EncodedPair::from_ids(&q, &a, 5);
        qs.push(pair.question);
        ins.push(pair.answer_in);
        ts.push(pair.target);
    }
    (qs, ins, ts)
}

fn weighted(out: &Tensor<f64>, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

struct CheckResult {
    error: f64,
    probes: usize,
    kinks: usize,
}

fn check(probe: &GradTarget, seed: u64) -> CheckResult {
    let mut rng = Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(probe.name.len() as u64));
    let Case { inputs, forward } = (probe.build)(&mut rng);
    let out = forward(&inputs);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = out.mul(&Tensor::new(w.clone(), out.shape()).unwrap()).unwrap().sum();
    loss.backward().unwrap();

    let eval = || no_grad(|| weighted(&forward(&inputs), &w));
    let f0 = eval();
    let (mut diff2, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
    let (mut probes, mut kinks) = (0, 0);
    for x in &inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let coords: Vec<usize> = if probe.exhaustive || x.numel() <= PROBES {
            (0..x.numel()).collect()
        } else {
            (0..PROBES).map(|_| rng.gen_range(0..x.numel())).collect()
        };
        for j in coords {
            let original = x.data()[j];
            x.update_data(|d| d[j] = original + H);
            let up = eval();
            x.update_data(|d| d[j] = original - H);
            let down = eval();
            x.update_data(|d| d[j] = original);
            if probe.kinked && (up - 2.0 * f0 + down).abs() > 1e-7 * (1.0 + f0.abs()) {
                kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * H);
            diff2 += (analytic[j] - numeric).powi(2);
            norm_a += analytic[j].powi(2);
            norm_n += numeric.powi(2);
            probes += 1;
        }
    }
    let scale = norm_a.sqrt().max(norm_n.sqrt()).max(1e-10);
    CheckResult {
        error: diff2.sqrt() / scale,
        probes,
        kinks,
    }
}

/// Straight-through has no finite-difference gradient with respect to the
/// relaxed input (its forward value ignores it); its contract is that the
/// upstream gradient reaches `soft` unchanged.
fn straight_through_routes(seed: u64) -> bool {
    let mut rng = Rng::seed_from_u64(seed);
    let soft = param(&mut rng, &[3, 4], 0.0, 1.0);
    let hard = Tensor::new(vec![0.0; 12], &[3, 4]).unwrap();
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = Tensor::straight_through(&hard, &soft).unwrap();
    out.mul(&Tensor::new(w.clone(), &[3, 4]).unwrap()).unwrap().sum().backward().unwrap();
    out.to_vec() == hard.to_vec() && soft.grad().unwrap() == w
}

pub fn gradient_check() -> Outcome {
    let started = Instant::now();
    let targets = grad_targets();
    let mut worst = (0.0f64, "", 0u64);
    let mut failures = Vec::new();
    let (mut probes, mut kinks) = (0usize, 0usize);
    for target in &targets {
        for seed in 0..SEEDS {
            let r = check(target, seed);
            probes += r.probes;
            kinks += r.kinks;
            if r.error > worst.0 {
                worst = (r.error, target.name, seed);
            }
            if !(r.error < TOLERANCE) {
                failures.push(format!("{} seed {seed}: {:.2e}", target.name, r.error));
            }
        }
    }
    let st_ok = (0..SEEDS).all(straight_through_routes);
    let elapsed = started.elapsed();
    let summary = format!(
        "{} cases x {SEEDS} seeds, {probes} probes ({kinks} skipped at relu kinks), worst {:.2e} ({} seed {}), \
         straight-through routing {}, {:.1}s",
        targets.len(),
        worst.0,
        worst.1,
        worst.2,
        if st_ok { "exact" } else { "WRONG" },
        elapsed.as_secs_f64()
    );
    if !failures.is_empty() || !st_ok || elapsed > Duration::from_secs(120) {
        let shown: Vec<_> = failures.iter().take(5).cloned().collect();
        return Err(format!("{summary}; {} failures: {}", failures.len(), shown.join("; ")));
    }
    Ok(summary)
}
