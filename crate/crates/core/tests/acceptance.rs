//! Acceptance criteria 1–9. Runs as a plain binary so every criterion prints
//! exactly one `PASS`/`FAIL` line; the process fails if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use javagen::corpus::{self, load_code_lines, load_split, CleaningRules, Dataset, RemovalReason, Sample, Split};
use javagen::denoise::{corrupt, reconstruct, NoiseConfig};
use javagen::java;
use javagen::metrics::{corpus_bleu, evaluate, evaluate_file, CodeBleuWeights};
use javagen::model::{init, loss_and_grad, param_count, ModelConfig, ModelParams};
use javagen::rng::Rng;
use javagen::tokenizer::{Vocabulary, NUM_SENTINELS};
use javagen::train::{discard, finetune, generate, pretrain, run_grid, Checkpoint, Mode, Start, TrainEvent, TrainingRunConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

/// Parameter accounting of the two named presets.
fn c1_parameter_accounting() -> String {
    let base = param_count(&ModelConfig::base()).unwrap() as f64;
    let large = param_count(&ModelConfig::large()).unwrap() as f64;
    assert!(within(base, 220e6, 0.05), "base has {base} parameters");
    assert!(within(large, 770e6, 0.05), "large has {large} parameters");
    format!("base {base} (target 220M), large {large} (target 770M)")
}

/// Independent BLEU: n-grams as owned vectors, clipping by linear scans.
fn oracle_bleu(cands: &[Vec<u8>], refs: &[Vec<u8>]) -> f64 {
    let grams = |s: &[u8], n: usize| -> Vec<Vec<u8>> {
        if s.len() < n {
            return Vec::new();
        }
        (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
    };
    let (mut c_len, mut r_len) = (0.0, 0.0);
    let mut log_sum = 0.0;
    let mut orders = 0;
    let mut num = [0.0; 4];
    let mut den = [0.0; 4];
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            let cg = grams(c, n);
            let mut rg = grams(r, n);
            den[n - 1] += cg.len() as f64;
            for g in cg {
                if let Some(pos) = rg.iter().position(|x| *x == g) {
                    rg.swap_remove(pos);
                    num[n - 1] += 1.0;
                }
            }
        }
    }
    if c_len == 0.0 {
        return 0.0;
    }
    for n in 0..4 {
        if den[n] > 0.0 {
            let p = if num[n] > 0.0 { num[n] / den[n] } else { 0.5 / den[n] };
            log_sum += p.ln();
            orders += 1;
        }
    }
    if orders == 0 {
        return 0.0;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    100.0 * bp * (log_sum / orders as f64).exp()
}

/// BLEU against a brute-force oracle, then the hand-scored five-pair file.
fn c2_metric_oracles() -> String {
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pairs = 1 + rng.below(4) as usize;
        let seq = |rng: &mut Rng| -> Vec<u8> { (0..rng.below(9)).map(|_| rng.below(4) as u8).collect() };
        let cands: Vec<Vec<u8>> = (0..pairs).map(|_| seq(&mut rng)).collect();
        let refs: Vec<Vec<u8>> = (0..pairs).map(|_| seq(&mut rng)).collect();
        let got = corpus_bleu(&cands, &refs, 4).unwrap();
        worst = worst.max((got - oracle_bleu(&cands, &refs)).abs());
    }
    assert!(worst <= 1e-9, "largest BLEU deviation {worst}");

    // Pairs: "return a ;" exact, "int x = 1 ;" exact, "x = y ;" exact,
    // "x = c ;" for "x = b ;", "int z = 2 ;" for "int y = 2 ;".
    // Clipped matches / candidate n-grams per order, summed over pairs:
    //   1-grams 3+5+4+3+4 / 3+5+4+4+5   = 19/21
    //   2-grams 2+4+3+1+2 / 2+4+3+3+4   = 12/16
    //   3-grams 1+3+2+0+1 / 1+3+2+2+3   = 7/11
    //   4-grams 0+2+1+0+0 / 0+2+1+1+2   = 3/6
    // Candidate and reference lengths are both 21, so no brevity penalty.
    let ngram = (19.0 / 21.0 * 12.0 / 16.0 * 7.0 / 11.0 * 3.0 / 6.0f64).powf(0.25);
    // Same counts with n-grams starting at `return`/`int` weighted 5:
    //   1-grams (7+9+4+3+8)/(7+9+4+4+9) = 31/33
    //   2-grams (6+8+3+1+2)/(6+8+3+3+8) = 20/28
    //   3-grams (5+7+2+0+1)/(5+7+2+2+7) = 15/23
    //   4-grams (0+6+1+0+0)/(0+6+1+1+6) = 7/14
    let weighted = (31.0 / 33.0 * 20.0 / 28.0 * 15.0 / 23.0 * 7.0 / 14.0f64).powf(0.25);
    // Subtree overlap: 1, 1, 1, then 0 of 2 and 1 of 3 (only the `int` type node).
    let ast = (1.0 + 1.0 + 1.0 + 0.0 + 1.0 / 3.0) / 5.0;
    // Only pairs 3 and 4 have def-use edges; both match after renaming.
    let dataflow = 1.0;
    let codebleu = 100.0 * 0.25 * (ngram + weighted + ast + dataflow);

    let dir = fixtures().join("hand_scored");
    let r = evaluate_file(&dir.join("pred.txt"), &dir.join("ref.jsonl"), &CodeBleuWeights::default()).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(r.bleu, 100.0 * ngram), "BLEU {} vs {}", r.bleu, 100.0 * ngram);
    assert_eq!(r.em, 60.0);
    assert!(close(r.components.weighted_ngram, weighted), "weighted {} vs {weighted}", r.components.weighted_ngram);
    assert!(close(r.components.ast.unwrap(), ast), "AST {:?} vs {ast}", r.components.ast);
    assert_eq!(r.components.dataflow, Some(dataflow));
    assert!(close(r.codebleu, codebleu), "CodeBLEU {} vs {codebleu}", r.codebleu);
    format!("max BLEU deviation {worst:.1e} over 1000 instances; hand fixture BLEU {:.4} EM {:.1} CodeBLEU {:.4}", r.bleu, r.em, r.codebleu)
}

/// Predictions equal to references over the 100-record fixture.
fn c3_perfect_candidates() -> String {
    let samples = load_split(&fixtures().join("concode_100.jsonl"), Split::Test).unwrap();
    assert_eq!(samples.len(), 100);
    let cands: Vec<&str> = samples.iter().map(|s| s.code.as_str()).collect();
    let refs: Vec<Vec<&str>> = cands.iter().map(|c| vec![*c]).collect();
    let r = evaluate(&cands, &refs, &CodeBleuWeights::default()).unwrap();
    assert_eq!((r.bleu, r.em, r.codebleu), (100.0, 100.0, 100.0));
    let c = r.components;
    assert_eq!((c.ngram, c.weighted_ngram, c.ast, c.dataflow), (1.0, 1.0, Some(1.0), Some(1.0)));
    "BLEU = EM = CodeBLEU = 100, components all 1".into()
}

/// Span corruption is invertible and hits the configured rate.
fn c4_denoising_inverse() -> String {
    let vocab_size = 512;
    let first_sentinel = (vocab_size - NUM_SENTINELS) as u64;
    let cfg = NoiseConfig { rate: 0.15, mean_span: 3.0 };
    let mut rng = Rng::new(4);
    for i in 0..10_000u64 {
        let len = rng.below(300) as usize;
        let ids: Vec<u32> = (0..len).map(|_| (3 + rng.below(first_sentinel - 3)) as u32).collect();
        let ex = corrupt(&ids, vocab_size, &cfg, i).unwrap();
        assert_eq!(reconstruct(&ex, vocab_size).unwrap(), ids, "sequence {i}");
    }
    let mut masked = 0usize;
    for seed in 0..1000u64 {
        let ids: Vec<u32> = (0..200).map(|k| 3 + (k * 7 + seed as u32) % 400).collect();
        let ex = corrupt(&ids, vocab_size, &cfg, seed).unwrap();
        let sentinels = ex.target.iter().filter(|&&t| t as u64 >= first_sentinel).count();
        masked += ex.target.len() - sentinels - 1;
    }
    let frac = masked as f64 / (200.0 * 1000.0);
    assert!((0.13..=0.17).contains(&frac), "corruption fraction {frac}");
    format!("10000 round trips exact; corruption fraction {frac:.4}")
}

/// Analytic gradients against central differences in double precision.
fn c5_gradient_check() -> String {
    let cfg = ModelConfig { num_layers: 2, d_model: 8, num_heads: 2, d_ff: 12, vocab_size: 16, num_rel_buckets: 8, max_rel_distance: 16, dropout: 0.0 };
    let mut m: ModelParams<f64> = init(&cfg, 5).unwrap();
    let mut rng = Rng::new(55);
    // Move norm gains off 1 so their gradients are not special.
    for x in m.data.iter_mut() {
        *x += 0.05 * rng.normal();
    }
    let enc = vec![vec![3, 4, 5, 6, 7, 1], vec![8, 9, 1, 0, 0, 0]];
    let dec = vec![vec![0, 10, 11, 12], vec![0, 13, 14, 0]];
    let tgt = vec![vec![10, 11, 12, 1], vec![13, 14, 1, 0]];
    let analytic = loss_and_grad(&m, &enc, &dec, &tgt).unwrap().grad;
    let loss_at = |m: &ModelParams<f64>| loss_and_grad(m, &enc, &dec, &tgt).unwrap().loss;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let i = rng.below(m.data.len() as u64) as usize;
        let orig = m.data[i];
        m.data[i] = orig + h;
        let up = loss_at(&m);
        m.data[i] = orig - h;
        let down = loss_at(&m);
        m.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
    format!("worst relative error {worst:.2e} over 100 coordinates")
}

struct Memorized {
    vocab: Vocabulary,
    pairs: Vec<Sample>,
    pretrained: Checkpoint,
}

const FT_INPUT: usize = 16;
const FT_TARGET: usize = 24;

fn memorization_setup() -> (Memorized, String) {
    let docs = load_code_lines(&fixtures().join("code_docs_64.txt")).unwrap();
    let pairs = load_split(&fixtures().join("pairs_32.jsonl"), Split::Train).unwrap();
    assert_eq!((docs.len(), pairs.len()), (64, 32));
    let mut texts = docs.clone();
    texts.extend(pairs.iter().flat_map(|p| [p.nl.clone(), p.code.clone()]));
    let vocab = Vocabulary::train(&texts, 512).unwrap();
    let mut cfg = TrainingRunConfig::new(Mode::Pretrain, 200, 8, 64, 32, 7);
    cfg.model = Some(ModelConfig::toy(vocab.len()));
    let pre = pretrain(&cfg, &vocab, &docs, Start::Fresh, &mut discard).unwrap();
    assert!(pre.summary.final_loss < pre.summary.initial_loss, "pretraining loss {} -> {}", pre.summary.initial_loss, pre.summary.final_loss);
    let note = format!("pretrain loss {:.3} -> {:.3}", pre.summary.initial_loss, pre.summary.final_loss);
    (Memorized { vocab, pairs, pretrained: pre.checkpoint }, note)
}

fn finetune_cfg(steps: u64, target_len: usize) -> TrainingRunConfig {
    TrainingRunConfig::new(Mode::Finetune, steps, 8, FT_INPUT, target_len, 7)
}

/// Toy pretraining, transfer, then memorization of the 32 pairs.
fn c6_overfit(mem: &Memorized, pre_note: &str) -> String {
    let out = finetune(&finetune_cfg(500, FT_TARGET), &mem.vocab, &mem.pairs, Start::Transfer(mem.pretrained.clone()), &mut discard).unwrap();
    assert_eq!(out.summary.samples_truncated, 0);
    let inputs: Vec<String> = mem.pairs.iter().map(|p| p.nl.clone()).collect();
    let preds = generate(&out.checkpoint.params, &mem.vocab, &inputs, FT_INPUT, FT_TARGET).unwrap();
    let refs: Vec<Vec<String>> = mem.pairs.iter().map(|p| vec![p.code.clone()]).collect();
    let em = evaluate(&preds, &refs, &CodeBleuWeights::default()).unwrap().em;
    assert!(out.summary.final_loss < 0.1, "final loss {}", out.summary.final_loss);
    assert!(em >= 90.0, "training-set EM {em}");
    format!("{pre_note}; fine-tune loss {:.4} -> {:.4}; training EM {em:.2}", out.summary.initial_loss, out.summary.final_loss)
}

/// Targets cut below every gold length can never match exactly.
fn c7_truncation(mem: &Memorized) -> String {
    // Strictly shorter than every gold token sequence, so content is cut and
    // not just the end-of-sequence token.
    let shortest = mem.pairs.iter().map(|p| mem.vocab.encode(&p.code).len()).min().unwrap();
    let short = shortest - 1;
    assert!(short >= 2);
    let cells = [finetune_cfg(500, short), finetune_cfg(500, FT_TARGET)];
    let g = run_grid(&cells, &mem.vocab, &mem.pairs, &mem.pairs, Some(&mem.pretrained), &CodeBleuWeights::default()).unwrap();
    let (cut, full) = (&g.rows[0], &g.rows[1]);
    assert_eq!(cut.truncated_samples, mem.pairs.len());
    assert_eq!(cut.truncated_em, Some(0.0));
    assert_eq!(full.truncated_samples, 0);
    assert!(full.em > 0.0, "full-length EM {}", full.em);
    format!("target_len {short}: EM on {} truncated samples {:.1}; target_len {FT_TARGET}: EM {:.2}", cut.truncated_samples, cut.truncated_em.unwrap(), full.em)
}

/// Bit reproducibility, resume equivalence and step-0 transfer.
fn c8_determinism(mem: &Memorized) -> String {
    let cfg = finetune_cfg(40, FT_TARGET);
    let run = |start: Start| finetune(&cfg, &mem.vocab, &mem.pairs, start, &mut discard).unwrap().checkpoint;
    let (a, b) = (run(Start::Fresh), run(Start::Fresh));
    assert_eq!(a.to_bytes(), b.to_bytes(), "same seed, different checkpoints");

    let dir = tempfile::tempdir().unwrap();
    let mut saved = BTreeMap::new();
    finetune(&cfg, &mem.vocab, &mem.pairs, Start::Fresh, &mut |ev| {
        if let TrainEvent::Checkpoint(c) = ev {
            let path = dir.path().join(format!("{}.ckpt", c.global_step));
            c.save(&path).unwrap();
            saved.insert(c.global_step, path);
        }
        Ok(())
    })
    .unwrap();
    let mid = Checkpoint::load(&saved[&12]).unwrap();
    let resumed = run(Start::Resume(mid));
    assert_eq!(resumed.to_bytes(), a.to_bytes(), "resume diverged from the uninterrupted run");

    let zero = finetune(&finetune_cfg(0, FT_TARGET), &mem.vocab, &mem.pairs, Start::Transfer(a.clone()), &mut discard).unwrap();
    assert_eq!(zero.checkpoint.params, a.params);
    let inputs: Vec<String> = mem.pairs.iter().map(|p| p.nl.clone()).collect();
    let from_zero = generate(&zero.checkpoint.params, &mem.vocab, &inputs, FT_INPUT, FT_TARGET).unwrap();
    let from_a = generate(&a.params, &mem.vocab, &inputs, FT_INPUT, FT_TARGET).unwrap();
    assert_eq!(from_zero, from_a);
    format!("identical digests {}; resume from step 12 matches; step-0 transfer evaluates identically", &a.digest()[..12])
}

/// Cleaning bookkeeping on the 1/1000-scale split fixture.
fn c9_cleaning() -> String {
    // Published split sizes and removals; only the arithmetic is checked.
    let (orig, removed) = ([812_008usize, 40_468, 51_210], [2974usize, 235, 161]);
    assert_eq!(orig.iter().sum::<usize>() - removed.iter().sum::<usize>(), 900_316);

    let dir = fixtures().join("cleaning");
    let mut ds = Dataset::new();
    for split in [Split::Train, Split::Valid, Split::Test] {
        ds.insert(split, load_split(&dir.join(format!("{}.jsonl", split.name())), split).unwrap());
    }
    let sizes: Vec<usize> = ds.values().map(Vec::len).collect();
    assert_eq!(sizes, vec![812, 40, 51]);
    // Oracle: each sample checked on its own.
    let bad = |s: &Sample| s.code.trim().is_empty() || java::lex(&s.code).is_err();
    let expected: BTreeMap<Split, usize> = ds.iter().map(|(k, v)| (*k, v.iter().filter(|s| bad(s)).count())).collect();
    let original: usize = sizes.iter().sum();
    let (cleaned, report) = corpus::clean_dataset(ds, &CleaningRules::default());
    assert_eq!(report.removed_per_split, expected);
    assert_eq!(report.removed_per_split.values().copied().collect::<Vec<_>>(), vec![3, 0, 0]);
    assert_eq!(report.original_total, original);
    assert_eq!(report.retained_total, original - report.removed_total());
    let retained: Vec<usize> = cleaned.values().map(Vec::len).collect();
    assert_eq!(retained, vec![809, 40, 51]);
    assert_eq!(report.retained_total, 900);
    assert_eq!(report.removal_reasons, BTreeMap::from([(RemovalReason::EmptyCode, 1), (RemovalReason::LexFailure, 2)]));
    assert_eq!(corpus::build_pretraining_pool(&cleaned).len(), 900);
    "903 - 3 = 900 retained (809/40/51); published 903,686 - 3,370 = 900,316".into()
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    let mut report = |n: u32, budget: Duration, f: &mut dyn FnMut() -> String| {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let dt = t.elapsed();
        let over = if dt > budget { format!(" (over {}s budget)", budget.as_secs()) } else { String::new() };
        match result {
            Ok(detail) if dt <= budget => println!("criterion {n}: PASS [{:.1}s] {detail}", dt.as_secs_f64()),
            Ok(detail) => {
                failures += 1;
                println!("criterion {n}: FAIL [{:.1}s]{over} {detail}", dt.as_secs_f64());
            }
            Err(e) => {
                failures += 1;
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
                println!("criterion {n}: FAIL [{:.1}s]{over} {msg}", dt.as_secs_f64());
            }
        }
    };
    let secs = Duration::from_secs;
    report(1, secs(1), &mut c1_parameter_accounting);
    report(2, secs(10), &mut c2_metric_oracles);
    report(3, secs(10), &mut c3_perfect_candidates);
    report(4, secs(30), &mut c4_denoising_inverse);
    report(5, secs(60), &mut c5_gradient_check);

    let t = Instant::now();
    let setup = catch_unwind(AssertUnwindSafe(memorization_setup));
    let setup_time = t.elapsed();
    match setup {
        Ok((mem, note)) => {
            // Criteria 6 and 7 share one ten-minute budget, pretraining included.
            let t67 = Instant::now();
            let mut c6 = || c6_overfit(&mem, &note);
            report(6, secs(600).saturating_sub(setup_time), &mut c6);
            let left = secs(600).saturating_sub(setup_time + t67.elapsed());
            report(7, left, &mut || c7_truncation(&mem));
            report(8, secs(120), &mut || c8_determinism(&mem));
        }
        Err(_) => {
            for n in 6..=8 {
                report(n, secs(1), &mut || panic!("toy pretraining did not complete"));
            }
        }
    }
    report(9, secs(1), &mut c9_cleaning);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
