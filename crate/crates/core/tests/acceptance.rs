//! Acceptance suite. Runs every criterion under its time budget and prints
//! one PASS/FAIL line each; exits nonzero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use promptcd::attention::{
    carve, connected_components, contrast_attention, percentile_threshold, AttentionStack, FusionSpec, Grid, Mask,
    RefineSpec,
};
use promptcd::backend::{
    conflict_scenario, conflict_vocabulary, DistributionProvider, RuleMatch, TableModelSpec, TableProvider, TableRule,
    CONTEXT_TOKEN, PARAMETRIC_TOKEN,
};
use promptcd::decoder::{
    adjusted_distribution, contrastive_scores, plausibility_head, read_trace_jsonl, ContrastiveConfig, DecodeStrategy,
    Decoder,
};
use promptcd::evaluation::capture_trace;
use promptcd::probe::{capture, classify_stubborn, BehaviorMetrics, ConflictRecord, StubbornClass};
use promptcd::{PolarityPromptPair, TokenDistribution, Vocabulary};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn pct(x: f64) -> f64 {
    x * 100.0
}

fn mr_formula() -> Outcome {
    let rows = [(43.35, 43.75, 50.24), (75.99, 6.39, 7.76)];
    let mut notes = Vec::new();
    let mut failed = Vec::new();
    for (con, par, want) in rows {
        let m = BehaviorMetrics::from_rates(con / 100.0, par / 100.0);
        let mr = pct(m.mr);
        let line = format!("ConR {con} ParR {par} -> MR {mr:.4} (table {want})");
        if (mr - want).abs() > 0.01 {
            failed.push(line);
        } else {
            notes.push(line);
        }
    }
    if failed.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!("off by more than 0.01: {}", failed.join("; ")))
    }
}

fn conflict_record() -> ConflictRecord {
    ConflictRecord {
        id: "stubborn".into(),
        question: "Which country?".into(),
        context: String::new(),
        answer_context: "United States".into(),
        answer_parametric: "France".into(),
    }
}

fn stubborn_flip() -> Outcome {
    let vocab = conflict_vocabulary(&[]);
    let (cont, para) = (
        vocab.id_of(CONTEXT_TOKEN).unwrap(),
        vocab.id_of(PARAMETRIC_TOKEN).unwrap(),
    );
    let p = TableProvider::new(conflict_scenario(cont, para, 0.516, 3.0, &vocab).unwrap()).unwrap();
    let pair = PolarityPromptPair::new("<pos>", "<neg>", "Which country?").unwrap();
    let mut cfg = ContrastiveConfig {
        gamma: 0.5,
        ..Default::default()
    };
    cfg.stop_tokens.insert(vocab.id_of("</s>").unwrap());
    let run = |vanilla: bool| {
        let mut d = Decoder::new(&p, cfg.clone()).unwrap();
        if vanilla {
            d.decode_vanilla(&pair).unwrap()
        } else {
            d.decode(&pair).unwrap()
        }
    };
    let (van, cd) = (run(true), run(false));
    ensure!(
        run(true).ids == van.ids && run(false).ids == cd.ids,
        "decoding is not deterministic"
    );
    ensure!(van.ids.first() == Some(&para), "vanilla emitted {:?}", van.text);
    ensure!(cd.ids.first() == Some(&cont), "contrastive emitted {:?}", cd.text);
    let rec = conflict_record();
    let (cv, cc) = (
        capture_trace(&van.trace, &vocab, &rec),
        capture_trace(&cd.trace, &vocab, &rec),
    );
    ensure!(
        classify_stubborn(&cv) == StubbornClass::Stubborn,
        "vanilla class {:?}",
        classify_stubborn(&cv)
    );
    ensure!(
        classify_stubborn(&cc) == StubbornClass::Flipped,
        "contrastive class {:?}",
        classify_stubborn(&cc)
    );
    Ok(format!(
        "vanilla {:?} (stubborn, cont rank {:?}), contrastive {:?} (flipped)",
        van.text, cv.rank_cont, cd.text
    ))
}

fn gamma_zero_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for case in 0..100 {
        let spec = common::random_table(&mut rng, 32, 16);
        let p = TableProvider::new(spec.clone()).unwrap();
        let pair = common::random_pair(&mut rng, &spec.vocab);
        let cfg = ContrastiveConfig {
            gamma: 0.0,
            max_tokens: rng.gen_range(1..=20),
            ..Default::default()
        };
        let cd = Decoder::new(&p, cfg.clone()).unwrap().decode(&pair).unwrap();
        let van = Decoder::new(&p, cfg).unwrap().decode_vanilla(&pair).unwrap();
        ensure!(cd.ids == van.ids, "case {case}: {:?} vs {:?}", cd.ids, van.ids);
    }
    Ok("100 random tables token-identical".into())
}

/// Whether every emitted token of a JSONL trace satisfies
/// `P+(x) >= ratio * max P+`, i.e. `z(x) - max z >= ln ratio`.
fn trace_respects_apc(jsonl: &[u8], ratio: f64) -> Result<bool, String> {
    let lines = read_trace_jsonl(jsonl).map_err(|e| e.to_string())?;
    Ok(lines.iter().all(|l| {
        let pairs = l.pos_logits.pairs();
        let top = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let z = l.pos_logits.get(l.selected).unwrap();
        z - top >= ratio.ln() - 1e-12
    }))
}

fn apc_contract() -> Outcome {
    let ratio = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut emitted = 0;
    for case in 0..100 {
        let spec = common::random_table(&mut rng, 24, 8);
        let p = TableProvider::new(spec.clone()).unwrap();
        let pair = common::random_pair(&mut rng, &spec.vocab);
        let cfg = ContrastiveConfig {
            gamma: rng.gen_range(0.0..3.0),
            apc_ratio: Some(ratio),
            max_tokens: 8,
            strategy: if case % 2 == 0 {
                DecodeStrategy::Greedy
            } else {
                DecodeStrategy::Sample { seed: case }
            },
            ..Default::default()
        };
        let out = Decoder::new(&p, cfg).unwrap().decode(&pair).unwrap();
        let mut buf = Vec::new();
        out.trace.write_jsonl(&mut buf, 8).unwrap();
        ensure!(
            trace_respects_apc(&buf, ratio)?,
            "case {case}: emitted token outside the head"
        );
        emitted += out.trace.len();
    }

    // adversarial negative: strongly disfavours an implausible token, which
    // then wins the contrast unless the head masks it
    let spec = TableModelSpec {
        vocab: ["<unk>", "P", "N", "x", "y", "z"].map(String::from).to_vec(),
        rules: vec![TableRule {
            matcher: RuleMatch {
                prompt_contains: "P".into(),
            },
            steps: vec![vec![-20.0, -20.0, -20.0, 5.0, 0.0, -10.0]],
        }],
        default_steps: vec![vec![-20.0, -20.0, -20.0, 5.0, 0.0, -30.0]],
        context_limit: None,
    };
    let p = TableProvider::new(spec).unwrap();
    let pair = PolarityPromptPair::new("P", "N", "q").unwrap();
    let mut cfg = ContrastiveConfig {
        apc_ratio: None,
        max_tokens: 3,
        ..Default::default()
    };
    let mut buf = Vec::new();
    let off = Decoder::new(&p, cfg.clone()).unwrap().decode(&pair).unwrap();
    off.trace.write_jsonl(&mut buf, 8).unwrap();
    ensure!(
        !trace_respects_apc(&buf, ratio)?,
        "disabled head still produced only plausible tokens"
    );
    cfg.apc_ratio = Some(ratio);
    let on = Decoder::new(&p, cfg).unwrap().decode(&pair).unwrap();
    buf.clear();
    on.trace.write_jsonl(&mut buf, 8).unwrap();
    ensure!(
        trace_respects_apc(&buf, ratio)?,
        "enabled head let an implausible token through"
    );
    Ok(format!(
        "{emitted} tokens over 100 tables in the head; adversarial: without head {:?}, with head {:?}",
        off.text, on.text
    ))
}

fn cancellation() -> Outcome {
    let eps = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut notes = Vec::new();
    for r in [10.0, 100.0, 1000.0] {
        let (pos, neg, fplus) = common::cancellation_stacks(&mut rng, r, eps, (6, 16, 16));
        let a = contrast_attention(&pos, &neg, eps).map_err(|e| e.to_string())?;
        let n = a.layer_len();
        let mut worst = 0.0f64;
        for l in 0..a.layers() {
            let al = a.layer(l);
            let fl = &fplus[l * n..(l + 1) * n];
            let (sa, sf): (f64, f64) = (al.iter().sum(), fl.iter().sum());
            for (x, y) in al.iter().zip(fl) {
                worst = worst.max(((x / sa) / (y / sf) - 1.0).abs());
            }
        }
        let bound = 1.0 / (1.0 + r);
        ensure!(worst <= bound + 1e-6, "r = {r}: deviation {worst:.3e} > {bound:.3e}");
        notes.push(format!("r={r}: {worst:.2e} <= {bound:.2e}"));
    }
    Ok(notes.join(", "))
}

fn components_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let scores = Grid::filled(32, 32, 1.0);
    for case in 0..500 {
        let density = rng.gen_range(0.05..0.75);
        let m = Mask::new(32, 32, (0..1024).map(|_| rng.gen_bool(density)).collect()).unwrap();
        let rs = connected_components(&m, &scores).map_err(|e| e.to_string())?;
        let mut got: Vec<Vec<usize>> = rs.components.into_iter().map(|c| c.pixels).collect();
        got.sort();
        ensure!(
            got == common::flood_fill_components(&m.data, 32, 32),
            "mask {case} differs"
        );
    }
    Ok("500 masks exact".into())
}

fn capture_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut captured = 0;
    for case in 0..200 {
        let (trace, vocab, cont, para) = common::random_capture_case(&mut rng);
        let v = Vocabulary::new(vocab.clone()).unwrap();
        let dists: Vec<TokenDistribution> = trace
            .iter()
            .map(|z| TokenDistribution::new(z.clone()).unwrap())
            .collect();
        let got = capture(&dists, &v, &cont, &para);
        let want = common::capture_oracle(&trace, &vocab, &cont, &para);
        ensure!(
            (got.p_cont, got.p_para, got.rank_cont, got.rank_para, got.position)
                == (want.p_cont, want.p_para, want.rank_cont, want.rank_para, want.position),
            "case {case}: {got:?} vs {want:?}"
        );
        captured += got.position.is_some() as usize;
    }
    Ok(format!("200 traces field-for-field ({captured} with a capture)"))
}

fn sampling_fidelity() -> Outcome {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let spec = common::random_table(&mut rng, 8, 1);
    let p = TableProvider::new(spec.clone()).unwrap();
    let pair = PolarityPromptPair::new("ab", "ba", "q").unwrap();
    let cfg = ContrastiveConfig {
        apc_ratio: Some(0.05),
        max_tokens: 1,
        strategy: DecodeStrategy::Sample { seed: 7 },
        ..Default::default()
    };
    let mut d = Decoder::new(&p, cfg).unwrap();
    let mut counts = vec![0usize; spec.vocab.len()];
    let mut probs = Vec::new();
    for _ in 0..n {
        let mut ctx = d.open(&pair).map_err(|e| e.to_string())?;
        let (tok, step) = d.step(&mut ctx).map_err(|e| e.to_string())?;
        counts[tok] += 1;
        probs = step.adjusted;
    }
    // cross-check the decoder's adjusted distribution from raw logits
    let ctx = d.open(&pair).unwrap();
    let pos = p
        .next_distribution(ctx.positive_seq(), ctx.positive_prompt_len())
        .unwrap();
    let neg = p
        .next_distribution(ctx.negative_seq(), ctx.negative_prompt_len())
        .unwrap();
    let head = plausibility_head(&pos, 0.05).unwrap();
    let want = adjusted_distribution(&contrastive_scores(&pos, &neg, 0.5, &head).unwrap()).unwrap();
    ensure!(
        want.iter().zip(&probs).all(|(a, b)| (a - b).abs() < 1e-12),
        "trace distribution differs from recomputation"
    );
    let mut worst = 0.0f64;
    for (i, (&c, &q)) in counts.iter().zip(&probs).enumerate() {
        if q == 0.0 {
            ensure!(c == 0, "token {i} outside the head drawn {c} times");
            continue;
        }
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        let z = (c as f64 - n as f64 * q).abs() / sigma.max(f64::MIN_POSITIVE);
        ensure!(
            z <= 3.0,
            "token {i}: {c} draws, expected {:.1} (z = {z:.2})",
            n as f64 * q
        );
        worst = worst.max(z);
    }
    Ok(format!("1e5 draws over {} tokens, max |z| = {worst:.2}", head.len()))
}

fn carve_fixture() -> Outcome {
    let (pos, neg, img, blob) = common::blob_fixture();
    let fusion = FusionSpec::ramp(20, 25).unwrap();
    let mut areas = Vec::new();
    for p in [0.6, 0.3, 0.1] {
        let mut spec = RefineSpec::new(32, 32);
        spec.top_p = p;
        let out = carve(&pos, &neg, &img, &fusion, &spec).map_err(|e| e.to_string())?;
        let crop = out.diagnostics.crop_box;
        ensure!(crop.contains(&blob), "p {p}: crop {crop:?} misses blob {blob:?}");
        areas.push(crop.area());
    }
    ensure!(areas.windows(2).all(|w| w[0] >= w[1]), "crop areas {areas:?} increase");
    Ok(format!("crop areas {areas:?} for p = 0.6, 0.3, 0.1"))
}

fn invariant_suite() -> Outcome {
    let cases = 1000;
    let run = |name: &str, f: &mut dyn FnMut(&mut TestRunner) -> Result<(), String>| -> Result<(), String> {
        let mut runner = TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        });
        f(&mut runner).map_err(|e| format!("{name}: {e}"))
    };
    let logits = || prop::collection::vec(-30.0f64..30.0, 2..48);

    run("shift invariance", &mut |r| {
        r.run(&(logits(), -1e3f64..1e3), |(z, c)| {
            let d = TokenDistribution::new(z).unwrap();
            let s = d.shifted(c).unwrap();
            for (a, b) in d.softmax().iter().zip(s.softmax()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    run("head nonempty", &mut |r| {
        r.run(&(logits(), 1e-6f64..=1.0), |(z, ratio)| {
            let d = TokenDistribution::new(z).unwrap();
            let head = plausibility_head(&d, ratio).unwrap();
            prop_assert!(head.contains(&d.argmax()));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    run("zero outside head", &mut |r| {
        r.run(
            &(logits(), logits(), 0.0f64..3.0, 1e-4f64..=1.0),
            |(zp, zn, gamma, ratio)| {
                let k = zp.len().min(zn.len());
                let pos = TokenDistribution::new(zp[..k].to_vec()).unwrap();
                let neg = TokenDistribution::new(zn[..k].to_vec()).unwrap();
                let head = plausibility_head(&pos, ratio).unwrap();
                let adj = adjusted_distribution(&contrastive_scores(&pos, &neg, gamma, &head).unwrap()).unwrap();
                for (i, p) in adj.iter().enumerate() {
                    if !head.contains(&i) {
                        prop_assert_eq!(*p, 0.0);
                    }
                }
                prop_assert!((adj.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
    })?;

    run("dual-context sync", &mut |r| {
        r.run(&(any::<u64>(), 1usize..10), |(seed, steps)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = common::random_table(&mut rng, 12, 6);
            let p = TableProvider::new(spec.clone()).unwrap();
            let pair = common::random_pair(&mut rng, &spec.vocab);
            let mut d = Decoder::new(&p, ContrastiveConfig::default()).unwrap();
            let mut ctx = d.open(&pair).unwrap();
            let (pp, np) = (ctx.positive_prompt().to_vec(), ctx.negative_prompt().to_vec());
            for _ in 0..steps {
                d.step(&mut ctx).unwrap();
                prop_assert!(ctx.is_synchronized());
                prop_assert_eq!(ctx.positive_prompt(), &pp[..]);
                prop_assert_eq!(ctx.negative_prompt(), &np[..]);
            }
            prop_assert_eq!(ctx.generated().len(), steps);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    run("percentile monotone transform", &mut |r| {
        let grid = (1usize..16, 1usize..16)
            .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.0f64..10.0, w * h)));
        r.run(
            &(grid, 0.01f64..=1.0, 0.1f64..5.0, -3.0f64..3.0),
            |((w, h, data), p, a, b)| {
                let g = Grid::new(w, h, data).unwrap();
                let t = g.map(|v| a * v.powi(3) + b);
                prop_assert_eq!(
                    percentile_threshold(&g, p).unwrap().1,
                    percentile_threshold(&t, p).unwrap().1
                );
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
    })?;

    run("fusion weights", &mut |r| {
        r.run(&(0usize..40, 0usize..12, 0.01f64..5.0), |(lo, span, c)| {
            let hi = lo + span;
            let f = FusionSpec::ramp(lo, hi).unwrap();
            let w = f.weights();
            prop_assert_eq!(w.len(), span + 1);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
            // a constant stack fuses to the same constant
            let stack = AttentionStack::new(hi + 1, 2, 2, vec![c; (hi + 1) * 4]).unwrap();
            let g = promptcd::attention::fuse_layers(&stack, &f).unwrap();
            prop_assert!(g.data.iter().all(|v| (v - c).abs() < 1e-9 * c.max(1.0)));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;

    Ok(format!("6 properties x {cases} cases"))
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let ms = Duration::from_millis;
    let criteria = [
        Criterion {
            id: "AC1",
            name: "memorization ratio formula",
            limit: ms(1),
            run: mr_formula,
        },
        Criterion {
            id: "AC2",
            name: "stubborn knowledge flip",
            limit: ms(1000),
            run: stubborn_flip,
        },
        Criterion {
            id: "AC3",
            name: "gamma = 0 reduction",
            limit: ms(5000),
            run: gamma_zero_reduction,
        },
        Criterion {
            id: "AC4",
            name: "plausibility head contract",
            limit: ms(5000),
            run: apc_contract,
        },
        Criterion {
            id: "AC5",
            name: "negative pattern cancellation",
            limit: ms(1000),
            run: cancellation,
        },
        Criterion {
            id: "AC6",
            name: "connected components oracle",
            limit: ms(2000),
            run: components_oracle,
        },
        Criterion {
            id: "AC7",
            name: "knowledge capture oracle",
            limit: ms(2000),
            run: capture_oracle,
        },
        Criterion {
            id: "AC8",
            name: "sampling fidelity",
            limit: ms(5000),
            run: sampling_fidelity,
        },
        Criterion {
            id: "AC9",
            name: "end-to-end carve",
            limit: ms(1000),
            run: carve_fixture,
        },
        Criterion {
            id: "AC10",
            name: "invariant suite",
            limit: Duration::MAX,
            run: invariant_suite,
        },
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(_) if took > c.limit => Err(format!("took {took:.2?}, budget {:.2?}", c.limit)),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:<5} {:<32} {:>10.2?}  {detail}", c.id, c.name, took);
    }
    println!("{} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
