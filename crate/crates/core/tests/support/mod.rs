//! Brute-force reference implementations of both pruning phases, written
//! with plain nested loops and exhaustive sorting. They follow the same
//! precision contract as the engine (f32 storage, f64 accumulation, one
//! rounding per stored value) so index sets can be compared exactly.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechprune_core::{EmbeddingBundle, Matrix};

type Rows = Vec<Vec<f32>>;

fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

fn normalize(rows: &Rows, eps: f32) -> Rows {
    rows.iter()
        .map(|row| {
            let mut sq = 0.0f64;
            for &x in row {
                sq += x as f64 * x as f64;
            }
            let norm = sq.sqrt().max(eps as f64);
            row.iter().map(|&x| (x as f64 / norm) as f32).collect()
        })
        .collect()
}

fn reference_softmax(v: &[f32]) -> Vec<f32> {
    let mut max = f64::NEG_INFINITY;
    for &x in v {
        if (x as f64) > max {
            max = x as f64;
        }
    }
    let mut exps = Vec::new();
    for &x in v {
        exps.push((x as f64 - max).exp());
    }
    let mut sum = 0.0f64;
    for &e in &exps {
        sum += e;
    }
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// Indices of the `k` best scores: full insertion sort by (score desc,
/// index asc), then the head sorted by index.
fn reference_topk(scores: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let mut pos = order.len();
        while pos > 0 {
            let j = order[pos - 1];
            if scores[i] > scores[j] {
                pos -= 1;
            } else {
                break;
            }
        }
        order.insert(pos, i);
    }
    let mut head: Vec<usize> = order[..k].to_vec();
    head.sort();
    head
}

/// Floors clamped to capacity, then single tokens handed out by walking
/// frames in remainder order, wrapping around, skipping full frames.
pub fn reference_allocate(probs: &[f32], caps: &[usize], keep: usize) -> Vec<usize> {
    let m = probs.len();
    let quota: Vec<f64> = probs.iter().map(|&p| keep as f64 * p as f64).collect();
    let mut alloc: Vec<usize> = (0..m).map(|i| std::cmp::min(quota[i].floor() as usize, caps[i])).collect();

    // remainder order by selection sort
    let mut order: Vec<usize> = Vec::new();
    let mut used = vec![false; m];
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for i in 0..m {
            if used[i] {
                continue;
            }
            let r = quota[i] - quota[i].floor();
            match best {
                None => best = Some(i),
                Some(b) => {
                    let rb = quota[b] - quota[b].floor();
                    if r > rb {
                        best = Some(i);
                    }
                }
            }
        }
        let b = best.unwrap();
        used[b] = true;
        order.push(b);
    }

    let mut total: usize = alloc.iter().sum();
    let mut cursor = m;
    while total > keep {
        cursor = if cursor == 0 { m - 1 } else { cursor - 1 };
        let f = order[cursor];
        if alloc[f] > 0 {
            alloc[f] -= 1;
            total -= 1;
        }
    }
    let mut cursor = 0;
    while total < keep {
        let f = order[cursor % m];
        if alloc[f] < caps[f] {
            alloc[f] += 1;
            total += 1;
        }
        cursor += 1;
    }
    alloc
}

pub struct ReferencePhase1 {
    pub allocations: Vec<usize>,
    pub kept: Vec<usize>,
}

pub fn reference_phase1(speech: &Matrix, text: &Matrix, frame_size: usize, keep: usize, eps: f32) -> ReferencePhase1 {
    let s = normalize(&rows_of(speech), eps);
    let t = normalize(&rows_of(text), eps);
    let n = s.len();
    let l = t.len();

    let mut token_scores = vec![0f32; n];
    for i in 0..n {
        let mut acc = 0.0f64;
        for j in 0..l {
            let mut dot = 0.0f64;
            for d in 0..s[i].len() {
                dot += s[i][d] as f64 * t[j][d] as f64;
            }
            acc += (dot as f32) as f64;
        }
        token_scores[i] = (acc / l as f64) as f32;
    }

    let m = n.div_ceil(frame_size);
    let mut frame_scores = vec![0f32; m];
    let mut caps = vec![0usize; m];
    for f in 0..m {
        let mut acc = 0.0f64;
        for i in 0..n {
            if i / frame_size == f {
                acc += token_scores[i] as f64;
                caps[f] += 1;
            }
        }
        frame_scores[f] = acc as f32;
    }
    let probs = reference_softmax(&frame_scores);
    let allocations = reference_allocate(&probs, &caps, keep);

    let mut kept = Vec::new();
    for f in 0..m {
        let members: Vec<usize> = (0..n).filter(|i| i / frame_size == f).collect();
        let local: Vec<f32> = members.iter().map(|&i| token_scores[i]).collect();
        for p in reference_topk(&local, allocations[f]) {
            kept.push(members[p]);
        }
    }
    kept.sort();
    ReferencePhase1 { allocations, kept }
}

pub struct ReferencePhase2 {
    pub attention: Vec<Vec<f32>>,
    pub scores: Vec<f32>,
    pub kept: Vec<usize>,
}

pub fn reference_phase2(speech: &Matrix, wq: &Matrix, wk: &Matrix, keep: usize) -> ReferencePhase2 {
    let sign = |x: f32| if x < 0.0 { -1.0f64 } else { 1.0f64 };
    let n = speech.rows();
    let d = speech.cols();
    let dk = wq.cols();

    let mut q = vec![vec![0f64; dk]; n];
    let mut k = vec![vec![0f64; dk]; n];
    for i in 0..n {
        for c in 0..dk {
            for a in 0..d {
                q[i][c] += sign(speech.get(i, a)) * sign(wq.get(a, c));
                k[i][c] += sign(speech.get(i, a)) * sign(wk.get(a, c));
            }
        }
    }

    let mut attention = Vec::new();
    for i in 0..n {
        let mut logits = Vec::new();
        for j in 0..n {
            let mut dot = 0.0f64;
            for c in 0..dk {
                dot += q[i][c] * k[j][c];
            }
            logits.push((dot / (dk as f64).sqrt()) as f32);
        }
        attention.push(reference_softmax(&logits));
    }

    let mut scores = vec![0f32; n];
    for j in 0..n {
        let mut acc = 0.0f64;
        for row in &attention {
            acc += row[j] as f64;
        }
        scores[j] = (acc / n as f64) as f32;
    }
    let kept = reference_topk(&scores, keep);
    ReferencePhase2 { attention, scores, kept }
}

/// A small random pruning instance. About a third of the instances draw
/// from a coarse grid so that exact ties are common.
pub struct RandomCase {
    pub bundle: EmbeddingBundle,
    pub frame_size: usize,
    pub keep1: usize,
    pub keep2: usize,
}

pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=64usize);
    let d = rng.random_range(1..=16usize);
    let l = rng.random_range(1..=6usize);
    let dk = rng.random_range(1..=8usize);
    let frame_size = rng.random_range(1..=8usize);
    let coarse = rng.random_range(0..3) == 0;
    let mut draw = |r: usize, c: usize| {
        let data = (0..r * c)
            .map(|_| {
                if coarse {
                    rng.random_range(-2i32..=2) as f32
                } else {
                    rng.random_range(-1.0f32..1.0)
                }
            })
            .collect();
        Matrix::new(r, c, data).unwrap()
    };
    let speech = draw(n, d);
    let text = draw(l, d);
    let wq = draw(d, dk);
    let wk = draw(d, dk);
    let keep1 = rng.random_range(0..=n);
    let keep2 = rng.random_range(0..=n);
    let bundle = EmbeddingBundle::new(speech, text, wq, wk, frame_size).unwrap();
    RandomCase { bundle, frame_size, keep1, keep2 }
}
