//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::VecDeque;

use promptcd::backend::{RuleMatch, TableModelSpec, TableRule};
use rand::seq::SliceRandom;
use rand::Rng;

/// Softmax with the exponentials summed by Neumaier compensation, in the
/// order given, without max-subtraction. Only for moderate logits.
pub fn softmax_compensated(z: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = z.iter().map(|x| x.exp()).collect();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &e in &exps {
        let t = sum + e;
        if sum.abs() >= e.abs() {
            comp += (sum - t) + e;
        } else {
            comp += (e - t) + sum;
        }
        sum = t;
    }
    let total = sum + comp;
    exps.iter().map(|e| e / total).collect()
}

pub fn argmax_scan(z: &[f64]) -> usize {
    let mut best = 0;
    let mut i = 0;
    while i < z.len() {
        if z[i] > z[best] {
            best = i;
        }
        i += 1;
    }
    best
}

/// Rank by full sort: position of the first entry equal to `z[token]` in a
/// descending sort, plus one.
pub fn rank_by_sort(z: &[f64], token: usize) -> usize {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.iter().position(|&v| v == z[token]).unwrap() + 1
}

/// Straight-line knowledge-token capture: the discriminative token of each
/// answer, first occurrence, with its logit, rank and step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleCapture {
    pub p_cont: Option<f64>,
    pub p_para: Option<f64>,
    pub rank_cont: Option<usize>,
    pub rank_para: Option<usize>,
    pub position: Option<usize>,
}

pub fn capture_oracle(trace: &[Vec<f64>], vocab: &[String], s_cont: &str, s_para: &str) -> OracleCapture {
    let mut p_cont: Option<f64> = None;
    let mut p_para: Option<f64> = None;
    let mut r_cont: Option<usize> = None;
    let mut r_para: Option<usize> = None;
    let mut pos: Option<usize> = None;

    for (i, logits) in trace.iter().enumerate() {
        // greedy token: max logit, lowest id on ties
        let x = argmax_scan(logits);
        let xs = vocab[x].trim();
        if xs.is_empty() {
            continue;
        }
        let in_cont = s_cont.contains(xs);
        let in_para = s_para.contains(xs);
        if !in_cont && !in_para {
            continue;
        }
        // descending by logit by repeated selection, lowest id on ties
        let mut used = vec![false; logits.len()];
        for _ in 0..logits.len() {
            let mut j = usize::MAX;
            for k in 0..logits.len() {
                if !used[k] && (j == usize::MAX || logits[k] > logits[j]) {
                    j = k;
                }
            }
            used[j] = true;
            let s = vocab[j].trim();
            if s.is_empty() {
                continue;
            }
            let c = s_cont.contains(s);
            let p = s_para.contains(s);
            if c && p && p_cont.is_none() && p_para.is_none() {
                break;
            }
            let rank = 1 + logits.iter().filter(|&&o| o > logits[j]).count();
            if c && !p && p_cont.is_none() {
                p_cont = Some(logits[j]);
                r_cont = Some(rank);
                if pos.is_none() {
                    pos = Some(i);
                }
            }
            if p && !c && p_para.is_none() {
                p_para = Some(logits[j]);
                r_para = Some(rank);
                if pos.is_none() {
                    pos = Some(i);
                }
            }
        }
    }
    OracleCapture {
        p_cont,
        p_para,
        rank_cont: r_cont,
        rank_para: r_para,
        position: pos,
    }
}

/// 8-connected components by breadth-first flood fill, each as a sorted
/// list of row-major indices; the list of components is sorted too.
pub fn flood_fill_components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = q.pop_front() {
            comp.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        q.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort();
    out
}

/// Kept count for a top-p cut, with exact rational ceiling: p is given as
/// `num / den`.
pub fn keep_count_exact(num: usize, den: usize, n: usize) -> usize {
    (num * n).div_ceil(den).max(1)
}

/// Random table model: vocab of short distinct words, a few rules keyed on
/// vocab words, random logits.
pub fn random_table<R: Rng>(rng: &mut R, max_vocab: usize, max_steps: usize) -> TableModelSpec {
    let n = rng.gen_range(3..=max_vocab);
    let mut vocab: Vec<String> = vec!["<unk>".into()];
    while vocab.len() < n {
        let len = rng.gen_range(1..=3);
        let w: String = (0..len).map(|_| (b'a' + rng.gen_range(0..6u8)) as char).collect();
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    let steps = |rng: &mut R| -> Vec<Vec<f64>> {
        let k = rng.gen_range(1..=max_steps);
        (0..k)
            .map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect()
    };
    let rules = (0..rng.gen_range(0..4))
        .map(|_| TableRule {
            matcher: RuleMatch {
                prompt_contains: vocab[rng.gen_range(1..n)].clone(),
            },
            steps: steps(rng),
        })
        .collect();
    TableModelSpec {
        vocab,
        rules,
        default_steps: steps(rng),
        context_limit: None,
    }
}

/// Prompt text built from random vocabulary words.
pub fn random_text<R: Rng>(rng: &mut R, vocab: &[String], words: usize) -> String {
    (0..words)
        .map(|_| vocab[1..].choose(rng).unwrap().as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Stacks for the cancellation check: `neg = F-` drawn from `[r*eps, 10*r*eps]`,
/// `pos = F- * F+` with `F+` in `[0.1, 1]`. Returns `(pos, neg, F+)`.
pub fn cancellation_stacks<R: Rng>(
    rng: &mut R,
    r: f64,
    eps: f64,
    dims: (usize, usize, usize),
) -> (
    promptcd::attention::AttentionStack,
    promptcd::attention::AttentionStack,
    Vec<f64>,
) {
    use promptcd::attention::AttentionStack;
    let (l, h, w) = dims;
    let n = l * h * w;
    let fplus: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let fminus: Vec<f64> = (0..n).map(|_| rng.gen_range(r * eps..=10.0 * r * eps)).collect();
    let pos = fplus.iter().zip(&fminus).map(|(a, b)| a * b).collect();
    (
        AttentionStack::new(l, h, w, pos).unwrap(),
        AttentionStack::new(l, h, w, fminus).unwrap(),
        fplus,
    )
}

/// 64x64 image over a 16x16 token grid with 26 layers. The positive stack has
/// a flat 4x4 blob at cells x 6..10, y 5..9, a one-cell halo at half the blob
/// value and a faint varying background; the negative stack is uniform.
/// Returns `(pos, neg, image, blob box in pixels)`.
pub fn blob_fixture() -> (
    promptcd::attention::AttentionStack,
    promptcd::attention::AttentionStack,
    image::RgbImage,
    promptcd::attention::PixelBox,
) {
    use promptcd::attention::{AttentionStack, PixelBox};
    let (l, h, w) = (26, 16, 16);
    let cell = |x: usize, y: usize| -> f64 {
        let blob = (6..10).contains(&x) && (5..9).contains(&y);
        let halo = (5..11).contains(&x) && (4..10).contains(&y);
        if blob {
            1.0
        } else if halo {
            0.5
        } else {
            0.01 + ((x * 7 + y * 13) % 9) as f64 * 0.01
        }
    };
    let mut pos = Vec::with_capacity(l * h * w);
    for layer in 0..l {
        for y in 0..h {
            for x in 0..w {
                pos.push(cell(x, y) * (1.0 + 0.01 * layer as f64));
            }
        }
    }
    let img = image::RgbImage::from_fn(64, 64, |x, y| image::Rgb([(x * 4) as u8, (y * 4) as u8, 128]));
    (
        AttentionStack::new(l, h, w, pos).unwrap(),
        AttentionStack::new(l, h, w, vec![0.1; l * h * w]).unwrap(),
        img,
        PixelBox {
            x0: 24,
            y0: 20,
            x1: 40,
            y1: 36,
        },
    )
}

const WORDS: &[&str] = &[
    "Paris", "Rome", "the", "of", "Uni", "ted", "Fr", "ance", " ", "", "x", "Ro", "me", "a",
];

/// Random trace, vocabulary and answer pair for the capture oracle. Tokens
/// come from a small pool so answers often share or contain them.
pub fn random_capture_case<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<String>, String, String) {
    let n = rng.gen_range(2..=12);
    let vocab: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    let steps = rng.gen_range(1..=8);
    let trace = (0..steps)
        .map(|_| (0..n).map(|_| rng.gen_range(-4..5) as f64 * 0.5).collect())
        .collect();
    let answer = |rng: &mut R| -> String {
        (0..rng.gen_range(1..4))
            .map(|_| *WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let cont = answer(rng);
    let mut para = answer(rng);
    while para == cont {
        para = answer(rng);
    }
    (trace, vocab, cont, para)
}

/// Two distinct random prompts over the vocabulary.
pub fn random_pair<R: Rng>(rng: &mut R, vocab: &[String]) -> promptcd::PolarityPromptPair {
    let pos = random_text(rng, vocab, 2);
    let mut neg = random_text(rng, vocab, 2);
    while neg == pos {
        neg = random_text(rng, vocab, 2);
    }
    promptcd::PolarityPromptPair::new(pos, neg, "q").unwrap()
}
