//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use lslm::eval::{aggregate, classify_outcome, edit_distance, ConfusionCounts, Outcome};
use lslm::model::{context_ids, fdm_loss, Batch, FusionStrategy, Layout, LslmModel, ModelConfig, PROJ_B, PROJ_W};
use lslm::runtime::{run_offline, SamplerConfig, Stop, StopReason, PROB_FLOOR};
use lslm::server::{serve_tcp, ServerMessage, ServerState};
use lslm::tensor::{Tape, Tensor, Var};
use lslm::vocab::LISTEN_VOCAB;
use lslm::world::{find_command_windows, make_dataset, SampleRecord, Scenario, WorldConfig, WorldGen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

pub const FD_STEP: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

type TapeOp = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
type RefOp = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

/// One differentiable op: its tape form and an independent f64 reference.
pub struct GradCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub tape: TapeOp,
    pub reference: RefOp,
    /// Keep inputs at least this far from zero (for kinks at 0).
    pub min_abs: f32,
}

fn sample_inputs(case: &GradCase, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    case.shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let v: f32 = rng.random_range(-1.0..1.0);
                    if v.abs() >= case.min_abs {
                        break v;
                    }
                })
                .collect();
            Tensor::new(s.clone(), data).unwrap().with_grad()
        })
        .collect()
}

/// Largest relative error between tape gradients and central differences
/// of the reference, for `L = Σ w·out` with random weights `w`.
pub fn check_case(case: &GradCase, rng: &mut ChaCha8Rng) -> f64 {
    let inputs = sample_inputs(case, rng);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = (case.tape)(&mut tape, &vars);
    let n_out = tape.value(out).len();
    let w: Vec<f32> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wv = tape.constant(tape.shape(out).to_vec(), w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    let x64: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|&v| f64::from(v)).collect()).collect();
    let objective = |x: &[Vec<f64>]| -> f64 {
        (case.reference)(x).iter().zip(&w).map(|(o, &wi)| o * f64::from(wi)).sum()
    };
    assert_eq!((case.reference)(&x64).len(), n_out, "{}: reference output size", case.name);
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).expect("leaf gradient").to_vec();
        for j in 0..x64[i].len() {
            let mut xp = x64.clone();
            xp[i][j] += FD_STEP;
            let mut xm = x64.clone();
            xm[i][j] -= FD_STEP;
            let numeric = (objective(&xp) - objective(&xm)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(f64::from(g[j]), numeric));
        }
    }
    worst
}

// f64 references

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let d = g.len();
    x.chunks(d)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + 1e-5).sqrt();
            (0..d).map(move |i| (row[i] - mean) * rs * g[i] + b[i]).collect::<Vec<_>>()
        })
        .collect()
}

pub fn cross_entropy(logits: &[f64], v: usize, targets: &[usize], mask: &[bool]) -> f64 {
    logits
        .chunks(v)
        .zip(targets.iter().zip(mask))
        .filter(|(_, (_, m))| **m)
        .map(|(row, (&t, _))| -softmax(row)[t].ln())
        .sum()
}

fn attention(qkv: &[f64], t: usize, heads: usize, d: usize) -> Vec<f64> {
    let rows = qkv.len() / (3 * d);
    let hd = d / heads;
    let mut out = vec![0.0; rows * d];
    for b in 0..rows / t {
        for h in 0..heads {
            let at = |r: usize, part: usize, i: usize| qkv[(b * t + r) * 3 * d + part * d + h * hd + i];
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| (0..hd).map(|c| at(i, 0, c) * at(j, 1, c)).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let p = softmax(&scores);
                for c in 0..hd {
                    out[(b * t + i) * d + h * hd + c] = (0..=i).map(|j| p[j] * at(j, 2, c)).sum();
                }
            }
        }
    }
    out
}

/// Every differentiable tape op, plus a composed two-layer MLP loss.
pub fn grad_cases() -> Vec<GradCase> {
    let targets = vec![1usize, 5, 0, 3];
    let mask = vec![true, false, true, true];
    let (t2, m2) = (targets.clone(), mask.clone());
    let mlp_targets = vec![2usize, 0, 1];
    let mlp_t = mlp_targets.clone();
    let idx = vec![Some(2), None, Some(0), Some(2)];
    let idx2 = idx.clone();
    vec![
        GradCase {
            name: "matmul",
            shapes: vec![vec![3, 4], vec![4, 5]],
            tape: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            reference: Box::new(|x| matmul(&x[0], &x[1], 3, 4, 5)),
            min_abs: 0.0,
        },
        GradCase {
            name: "add",
            shapes: vec![vec![3, 4], vec![3, 4]],
            tape: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "add_row",
            shapes: vec![vec![3, 4], vec![4]],
            tape: Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
            reference: Box::new(|x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % 4]).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "mul",
            shapes: vec![vec![3, 4], vec![3, 4]],
            tape: Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "scale",
            shapes: vec![vec![2, 5]],
            tape: Box::new(|t, v| t.scale(v[0], 0.7)),
            reference: Box::new(|x| x[0].iter().map(|a| a * f64::from(0.7f32)).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "gelu",
            shapes: vec![vec![3, 4]],
            tape: Box::new(|t, v| t.gelu(v[0])),
            reference: Box::new(|x| x[0].iter().map(|&a| gelu(a)).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "relu",
            shapes: vec![vec![3, 4]],
            tape: Box::new(|t, v| t.relu(v[0])),
            reference: Box::new(|x| x[0].iter().map(|a| a.max(0.0)).collect()),
            min_abs: 0.01,
        },
        GradCase {
            name: "sum",
            shapes: vec![vec![3, 4]],
            tape: Box::new(|t, v| t.sum(v[0])),
            reference: Box::new(|x| vec![x[0].iter().sum()]),
            min_abs: 0.0,
        },
        GradCase {
            name: "softmax_lastdim",
            shapes: vec![vec![3, 5]],
            tape: Box::new(|t, v| t.softmax_lastdim(v[0]).unwrap()),
            reference: Box::new(|x| x[0].chunks(5).flat_map(softmax).collect()),
            min_abs: 0.0,
        },
        GradCase {
            name: "layer_norm",
            shapes: vec![vec![2, 5], vec![5], vec![5]],
            tape: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()),
            reference: Box::new(|x| layer_norm(&x[0], &x[1], &x[2])),
            min_abs: 0.0,
        },
        GradCase {
            name: "gather_rows",
            shapes: vec![vec![4, 3]],
            tape: Box::new(move |t, v| t.gather_rows(v[0], &idx).unwrap()),
            reference: Box::new(move |x| {
                idx2.iter().flat_map(|i| i.map_or(vec![0.0; 3], |i| x[0][i * 3..i * 3 + 3].to_vec())).collect()
            }),
            min_abs: 0.0,
        },
        GradCase {
            name: "causal_window",
            shapes: vec![vec![8, 3]],
            tape: Box::new(|t, v| t.causal_window(v[0], 4, 3).unwrap()),
            reference: Box::new(|x| {
                let mut out = vec![0.0; 8 * 9];
                for r in 0..8 {
                    for j in 0..3 {
                        let back = 2 - j;
                        if r % 4 >= back {
                            for c in 0..3 {
                                out[r * 9 + j * 3 + c] = x[0][(r - back) * 3 + c];
                            }
                        }
                    }
                }
                out
            }),
            min_abs: 0.0,
        },
        GradCase {
            name: "causal_attention",
            shapes: vec![vec![6, 12]],
            tape: Box::new(|t, v| t.causal_attention(v[0], 3, 2).unwrap()),
            reference: Box::new(|x| attention(&x[0], 3, 2, 4)),
            min_abs: 0.0,
        },
        GradCase {
            name: "cross_entropy",
            shapes: vec![vec![4, 6]],
            tape: Box::new(move |t, v| t.cross_entropy(v[0], &targets, &mask).unwrap()),
            reference: Box::new(move |x| vec![cross_entropy(&x[0], 6, &t2, &m2)]),
            min_abs: 0.0,
        },
        GradCase {
            name: "mlp_loss",
            shapes: vec![vec![3, 4], vec![4, 5], vec![5], vec![5, 3], vec![3]],
            tape: Box::new(move |t, v| {
                let h = t.matmul(v[0], v[1]).unwrap();
                let h = t.add_row(h, v[2]).unwrap();
                let h = t.gelu(h);
                let y = t.matmul(h, v[3]).unwrap();
                let y = t.add_row(y, v[4]).unwrap();
                t.cross_entropy(y, &mlp_targets, &[true; 3]).unwrap()
            }),
            reference: Box::new(move |x| {
                let h = matmul(&x[0], &x[1], 3, 4, 5);
                let h: Vec<f64> = h.iter().enumerate().map(|(i, v)| gelu(v + x[2][i % 5])).collect();
                let y = matmul(&h, &x[3], 3, 5, 3);
                let y: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + x[4][i % 3]).collect();
                vec![cross_entropy(&y, 3, &mlp_t, &[true; 3])]
            }),
            min_abs: 0.0,
        },
    ]
}

/// Worst relative error of each case over `trials` random draws.
pub fn all_grad_checks(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grad_cases()
        .iter()
        .map(|c| (c.name, (0..trials).map(|_| check_case(c, &mut rng)).fold(0.0, f64::max)))
        .collect()
}

/// Textbook recursive edit distance (no memoization).
pub fn edit_distance_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_distance_oracle(ra, rb) + usize::from(x != y);
            let del = edit_distance_oracle(ra, b) + 1;
            let ins = edit_distance_oracle(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every sequence over `0..alphabet` of length at most `max_len`.
pub fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in 0..alphabet {
                let mut t: Vec<usize> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// model-level probes

/// A few interrupted and uninterrupted records small enough for the tiny
/// configuration.
pub fn tiny_records(seed: u64) -> Vec<SampleRecord> {
    let world = WorldConfig {
        seed,
        context_len_min: 3,
        context_len_max: 6,
        train_size: 4,
        val_size: 0,
        test_size: 0,
        tts_test_size: 0,
        interrupt_prob: 0.5,
        ..WorldConfig::default()
    };
    make_dataset(&world).unwrap().train
}

/// The duplex loss recomputed in f64 from the model's logits, so that
/// finite differences are not limited by f32 resolution of the sum.
pub fn fdm_loss_f64(model: &LslmModel, records: &[&SampleRecord], mu: usize) -> f64 {
    let layouts: Vec<Layout> = records
        .iter()
        .map(|r| Layout::with_target(&context_ids(&r.context).unwrap(), &r.training_target(mu).unwrap(), 64).unwrap())
        .collect();
    let batch = Batch::new(layouts);
    let streams: Vec<Vec<usize>> = records.iter().map(|r| r.listen.clone()).collect();
    let mut tape = Tape::new();
    let l = model.forward(&mut tape, &batch, Some(&streams)).unwrap();
    let logits: Vec<f64> = tape.value(l).iter().map(|&x| f64::from(x)).collect();
    cross_entropy(&logits, lslm::vocab::SPEAK_VOCAB, &batch.targets, &batch.mask)
}

/// Directional finite-difference check of `fdm_loss` for every parameter
/// tensor, along that tensor's normalized analytic gradient. The step is
/// 1e-3 unless the gradient is small. Returns
/// `(name, relative error)`.
pub fn fdm_gradient_check(fusion: FusionStrategy, seed: u64) -> Vec<(String, f64)> {
    let mut model = LslmModel::new(ModelConfig::tiny().with_fusion(fusion).with_seed(seed)).unwrap();
    let records = tiny_records(seed);
    let refs: Vec<&SampleRecord> = records.iter().collect();
    assert!(refs.iter().any(|r| r.interrupted()));
    model.params.zero_grad();
    let out = fdm_loss(&model, &refs, 4).unwrap();
    out.backward_into(&mut model.params).unwrap();
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut result = Vec::new();
    for name in names {
        let g = model.params.get(&name).unwrap().grad.clone().unwrap();
        let norm = g.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            result.push((name, 0.0));
            continue;
        }
        let step = (1e-4 / norm).clamp(FD_STEP, 2e-2) as f32;
        let dir: Vec<f32> = g.iter().map(|v| (f64::from(*v) / norm) as f32).collect();
        let original = model.params.get(&name).unwrap().data().to_vec();
        let mut eval = |sign: f32| {
            let t = model.params.get_mut(&name).unwrap();
            for ((w, o), d) in t.data_mut().iter_mut().zip(&original).zip(&dir) {
                *w = o + sign * step * d;
            }
            fdm_loss_f64(&model, &refs, 4)
        };
        let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * f64::from(step));
        model.params.get_mut(&name).unwrap().data_mut().copy_from_slice(&original);
        result.push((name, rel_err(norm, numeric)));
    }
    result
}

pub fn random_layout(rng: &mut ChaCha8Rng, max_seq: usize) -> Layout {
    let ctx_len = rng.random_range(1..6);
    let ctx: Vec<usize> = (0..ctx_len).map(|_| rng.random_range(0..26)).collect();
    let n = rng.random_range(1..12);
    let speak: Vec<usize> = (0..n).map(|_| rng.random_range(0..64)).collect();
    Layout::new(&ctx, &speak, max_seq).unwrap()
}

pub fn random_stream(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..LISTEN_VOCAB)).collect()
}

pub fn logits(model: &LslmModel, layout: &Layout, stream: Option<&[usize]>) -> Vec<f32> {
    let batch = Batch::new(vec![layout.clone()]);
    let mut tape = Tape::new();
    let streams = stream.map(|s| vec![s.to_vec()]);
    let l = model.forward(&mut tape, &batch, streams.as_deref()).unwrap();
    tape.value(l).to_vec()
}

/// Counts of (probes, violations) where perturbing input position `p`
/// changed a logit row before `p`, or perturbing listening frame `f`
/// changed a row up to the speaking step that receives frame `f`.
/// Also reports how many perturbations reached some later row, so a
/// vacuous pass is visible.
#[derive(Debug, Default, Clone, Copy)]
pub struct CausalityReport {
    pub probes: usize,
    pub violations: usize,
    pub effective: usize,
}

pub fn causality_probes(fusion: FusionStrategy, n: usize, seed: u64) -> CausalityReport {
    let model = LslmModel::new(ModelConfig::tiny().with_fusion(fusion).with_seed(seed)).unwrap();
    let v = lslm::vocab::SPEAK_VOCAB;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = CausalityReport::default();
    for probe in 0..n {
        let layout = random_layout(&mut rng, 64);
        let stream = random_stream(&mut rng, layout.n_predictions());
        let base = logits(&model, &layout, Some(&stream));
        let (changed, protected_rows) = if probe % 2 == 0 {
            // token probe: change one input token
            let mut l2 = layout.clone();
            let p = rng.random_range(0..layout.len());
            if p < l2.prefix_len() {
                l2.prefix[p] = if p == 0 || p == l2.prefix_len() - 1 { l2.prefix[p] } else { (l2.prefix[p] + 1) % 26 };
            } else {
                let i = p - l2.prefix_len();
                l2.speak_inputs[i] = (l2.speak_inputs[i] + 1) % 64;
            }
            (logits(&model, &l2, Some(&stream)), p)
        } else {
            // frame probe: change one listening frame
            let f = rng.random_range(0..stream.len());
            let mut s2 = stream.clone();
            s2[f] = (s2[f] + 1 + rng.random_range(0..LISTEN_VOCAB - 1)) % LISTEN_VOCAB;
            // step j = f + 1 is the first to receive frame f
            (logits(&model, &layout, Some(&s2)), layout.prefix_len() + f + 1)
        };
        rep.probes += 1;
        if base[..protected_rows * v] != changed[..protected_rows * v] {
            rep.violations += 1;
        }
        if base[protected_rows * v..] != changed[protected_rows * v..] {
            rep.effective += 1;
        }
    }
    rep
}

/// Zeroes the projection and compares listening forward with vanilla
/// forward bitwise on `n` random inputs; returns the number of mismatches.
pub fn zero_listen_mismatches(fusion: FusionStrategy, n: usize, seed: u64) -> usize {
    let mut model = LslmModel::new(ModelConfig::tiny().with_fusion(fusion).with_seed(seed)).unwrap();
    for name in [PROJ_W, PROJ_B] {
        model.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let layout = random_layout(&mut rng, 64);
            let stream = random_stream(&mut rng, layout.n_predictions() + 3);
            logits(&model, &layout, None) != logits(&model, &layout, Some(&stream))
        })
        .count()
}

/// Largest |incremental − full| logit difference over `n` random sessions,
/// cycling through the fusion strategies.
pub fn streaming_max_diff(n: usize, seed: u64) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = lslm::vocab::SPEAK_VOCAB;
    let mut worst = 0.0f32;
    for i in 0..n {
        let fusion = FusionStrategy::ALL[i % 3];
        let model = LslmModel::new(ModelConfig::tiny().with_fusion(fusion).with_seed(seed + i as u64)).unwrap();
        let layout = random_layout(&mut rng, 64);
        let stream = random_stream(&mut rng, layout.n_predictions());
        let full = logits(&model, &layout, Some(&stream));
        let mut cache = model.new_cache();
        let mut ls = model.new_listener_state();
        let zeros = vec![0.0; model.config.d_model];
        for (pos, row) in layout.embed_rows().into_iter().enumerate() {
            let listen = if pos > layout.prefix_len() {
                let f = model.listen_step(&mut ls, stream[pos - layout.prefix_len() - 1]).unwrap();
                model.project_frame(&f).unwrap()
            } else {
                zeros.clone()
            };
            let step = model.decode_step(&mut cache, row, Some(&listen)).unwrap();
            for k in 0..v {
                worst = worst.max((step[k] - full[pos * v + k]).abs());
            }
        }
    }
    worst
}

// metrics and data contract

/// Pairs checked and mismatches between `edit_distance` and the recursive
/// oracle over all sequences of length ≤ `max_len` on `alphabet` symbols.
pub fn edit_distance_exhaustive(alphabet: usize, max_len: usize) -> (usize, usize) {
    let seqs = all_sequences(alphabet, max_len);
    let mut bad = 0;
    for a in &seqs {
        for b in &seqs {
            if edit_distance(a, b) != edit_distance_oracle(a, b) {
                bad += 1;
            }
        }
    }
    (seqs.len() * seqs.len(), bad)
}

fn stop(reason: StopReason, step: usize) -> Option<Stop> {
    Some(Stop { reason, step })
}

/// Hand-computed outcome and aggregate fixtures; returns the failing
/// fixture names.
pub fn metric_fixture_failures() -> Vec<&'static str> {
    use StopReason::{Eos, Irq, MaxLen};
    let outcomes: [(&str, bool, Option<usize>, Option<Stop>, Outcome); 10] = [
        ("irq at onset", true, Some(10), stop(Irq, 10), Outcome::Tp),
        ("irq inside window", true, Some(10), stop(Irq, 14), Outcome::Tp),
        ("irq at window end", true, Some(10), stop(Irq, 18), Outcome::Tp),
        ("irq after window", true, Some(10), stop(Irq, 19), Outcome::Fn),
        ("irq before onset", true, Some(10), stop(Irq, 9), Outcome::Fn),
        ("eos on interrupted", true, Some(10), stop(Eos, 30), Outcome::Fn),
        ("no stop on interrupted", true, Some(10), None, Outcome::Fn),
        ("irq on clean", false, None, stop(Irq, 3), Outcome::Fp),
        ("eos on clean", false, None, stop(Eos, 30), Outcome::Tn),
        ("cap on clean", false, None, stop(MaxLen, 40), Outcome::Tn),
    ];
    let mut failed = Vec::new();
    for (name, interrupted, onset, s, want) in outcomes {
        if classify_outcome(interrupted, onset, s, 8).ok() != Some(want) {
            failed.push(name);
        }
    }
    let close = |a: f32, b: f64| (f64::from(a) - b).abs() < 1e-6;
    let aggregates: [(&str, ConfusionCounts, [f64; 3], usize); 6] = [
        ("balanced", ConfusionCounts { tp: 8, fn_: 2, fp: 2, tn: 8 }, [0.8, 0.8, 0.8], 0),
        ("perfect", ConfusionCounts { tp: 5, fn_: 0, fp: 0, tn: 5 }, [1.0, 1.0, 1.0], 0),
        ("never fires", ConfusionCounts { tp: 0, fn_: 4, fp: 0, tn: 4 }, [0.0, 0.0, 0.0], 2),
        ("no positives", ConfusionCounts { tp: 0, fn_: 0, fp: 3, tn: 1 }, [0.0, 0.0, 0.0], 2),
        ("empty", ConfusionCounts::default(), [0.0, 0.0, 0.0], 3),
        ("one hit of four", ConfusionCounts { tp: 1, fn_: 3, fp: 0, tn: 0 }, [1.0, 0.25, 0.4], 0),
    ];
    for (name, counts, [p, r, f], flags) in aggregates {
        let m = aggregate(&counts);
        if !(close(m.precision, p) && close(m.recall, r) && close(m.f1, f) && m.flags.len() == flags) {
            failed.push(name);
        }
    }
    failed
}

/// Named pass/fail results of the corpus contract for one scenario.
pub fn data_contract(scenario: Scenario, seed: u64) -> Vec<(String, bool)> {
    let cfg = WorldConfig { scenario, seed, ..WorldConfig::default() };
    let ds = make_dataset(&cfg).unwrap();
    let gen = WorldGen::new(cfg.clone()).unwrap();
    let commands = gen.all_commands();
    let codebook = cfg.codebook();
    let mut out = Vec::new();
    let all = || ds.train.iter().chain(&ds.val).chain(&ds.test).chain(&ds.test_noise).chain(&ds.tts_test);

    let round_trip = all().all(|r| {
        codebook.synth(&r.context).unwrap() == r.speak_target && codebook.invert(&r.speak_target).0 == r.context
    });
    out.push(("codebook round trip".to_string(), round_trip));

    for (split, recs) in [("train", &ds.train), ("val", &ds.val)] {
        let n = recs.len() as f64;
        let bound = |p: f64| 3.0 * (p * (1.0 - p) / n).sqrt();
        let noise = recs.iter().filter(|r| r.noise).count() as f64 / n;
        let int = recs.iter().filter(|r| r.interrupted()).count() as f64 / n;
        out.push((format!("{split} noise rate {noise:.4} within 3σ of {}", cfg.noise_prob), (noise - cfg.noise_prob).abs() <= bound(cfg.noise_prob)));
        out.push((
            format!("{split} interruption rate {int:.4} within 3σ of {}", cfg.interrupt_prob),
            (int - cfg.interrupt_prob).abs() <= bound(cfg.interrupt_prob),
        ));
    }
    let half = ds.test.iter().filter(|r| r.interrupted()).count() == ds.test.len() / 2;
    out.push(("test set half interrupted".to_string(), half));

    let stray = all().filter(|r| !r.interrupted() && !find_command_windows(&r.listen, &commands).is_empty()).count();
    out.push((format!("{stray} stray command windows in uninterrupted streams"), stray == 0));
    let placed = all().filter(|r| r.interrupted()).all(|r| find_command_windows(&r.listen, &commands).contains(&r.onset.unwrap()));
    out.push(("every interruption has a command window at its onset".to_string(), placed));

    if scenario == Scenario::Voice {
        let train: std::collections::HashSet<_> = ds.train.iter().chain(&ds.val).filter_map(|r| r.speaker).collect();
        let test: std::collections::HashSet<_> = ds.test.iter().filter_map(|r| r.speaker).collect();
        out.push(("voice test speakers held out".to_string(), !test.is_empty() && train.is_disjoint(&test)));
    }
    out
}

// duplex server clients

pub struct Client {
    lines: tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>,
    w: tokio::net::tcp::OwnedWriteHalf,
}

impl Client {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Self { lines: BufReader::new(r).lines(), w }
    }

    pub async fn send(&mut self, line: &str) {
        self.w.write_all(line.as_bytes()).await.unwrap();
        self.w.write_all(b"\n").await.unwrap();
    }

    pub async fn recv(&mut self) -> Option<ServerMessage> {
        let line = self.lines.next_line().await.unwrap()?;
        Some(serde_json::from_str(&line).unwrap())
    }

    pub async fn recv_line(&mut self) -> Option<String> {
        self.lines.next_line().await.unwrap()
    }
}

pub fn start(context: &str, seed: u64, mode: &str) -> String {
    format!(r#"{{"type":"start","context":"{context}","seed":{seed},"mode":"{mode}","tick_ms":5}}"#)
}

/// Runs a lockstep session, sending one frame per step, and returns every
/// server line after `ready`.
pub async fn lockstep_lines(c: &mut Client, context: &str, seed: u64, frames: &[usize]) -> Vec<String> {
    c.send(&start(context, seed, "lockstep")).await;
    assert!(matches!(c.recv().await, Some(ServerMessage::Ready { .. })));
    let mut lines = Vec::new();
    let mut next = 0;
    loop {
        let line = c.recv_line().await.unwrap();
        let msg: ServerMessage = serde_json::from_str(&line).unwrap();
        lines.push(line);
        match msg {
            ServerMessage::Token { .. } => {
                let f = frames.get(next).copied().unwrap_or(0);
                next += 1;
                c.send(&format!(r#"{{"type":"listen","symbols":[{f}]}}"#)).await;
            }
            _ => return lines,
        }
    }
}

pub fn expected_lines(model: &Arc<LslmModel>, context: &str, seed: u64, frames: &[usize], world: &WorldConfig) -> Vec<String> {
    let r = run_offline(model, context, frames, SamplerConfig::default().with_seed(seed)).unwrap();
    let mut out: Vec<String> = r
        .tokens
        .iter()
        .zip(&r.irq_trace)
        .enumerate()
        .map(|(step, (&token, &p))| {
            ServerMessage::Token { step, token, irq_p: p, irq_log10: p.max(PROB_FLOOR).log10() }.to_line()
        })
        .collect();
    out.push(
        ServerMessage::Done {
            reason: r.stop.reason.name().into(),
            step: Some(r.stop.step),
            transcript: world.codebook().invert(r.speech()).0,
            latency_frames: None,
            dropped: 0,
        }
        .to_line(),
    );
    out
}

/// Runs `sessions` concurrent lockstep sessions against a fresh server and
/// counts those whose message lines differ from the offline oracle.
pub async fn lockstep_vs_offline(model: LslmModel, sessions: u64) -> usize {
    let state = Arc::new(ServerState::new(model, WorldConfig::default()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    tokio::spawn(serve_tcp(listener, Arc::clone(&state)));
    let mut tasks = Vec::new();
    for i in 0..sessions {
        let state = Arc::clone(&state);
        tasks.push(tokio::spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let ctx: String = (0..rng.random_range(3..9)).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect();
            let frames = random_stream(&mut rng, 128);
            let mut c = Client::connect(addr).await;
            let got = lockstep_lines(&mut c, &ctx, i, &frames).await;
            got != expected_lines(&state.model, &ctx, i, &frames, &state.world)
        }));
    }
    let mut bad = 0;
    for t in tasks {
        bad += usize::from(t.await.unwrap());
    }
    bad
}

/// Softmax rows sum to 1 within 1e-6 and lie in [0, 1]; layer norm with unit
/// gain and zero bias gives per-row mean 0 and variance 1 within 1e-4
/// (rows are drawn with spread well above ε).
/// Returns the number of failing trials.
pub fn norm_invariant_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let (rows, cols) = (rng.random_range(1..6), rng.random_range(2..12));
        let scale: f32 = [1.0, 10.0, 100.0][rng.random_range(0..3)];
        let mut x = Tensor::uniform(vec![rows, cols], -scale, scale, &mut rng);
        for r in x.data_mut().chunks_mut(cols) {
            r[0] = scale;
            r[1] = -scale;
        }
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let sm = tape.softmax_lastdim(v).unwrap();
        let ok_sm = tape.value(sm).chunks(cols).all(|r| {
            (r.iter().map(|&p| f64::from(p)).sum::<f64>() - 1.0).abs() <= 1e-6 && r.iter().all(|p| (0.0..=1.0).contains(p))
        });
        let g = tape.constant(vec![cols], vec![1.0; cols]);
        let b = tape.constant(vec![cols], vec![0.0; cols]);
        let ln = tape.layer_norm(v, g, b).unwrap();
        let ok_ln = tape.value(ln).chunks(cols).all(|r| {
            let n = cols as f64;
            let mean = r.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
            let var = r.iter().map(|&p| (f64::from(p) - mean).powi(2)).sum::<f64>() / n;
            mean.abs() <= 1e-4 && (var - 1.0).abs() <= 1e-4
        });
        failures += usize::from(!(ok_sm && ok_ln));
    }
    failures
}
