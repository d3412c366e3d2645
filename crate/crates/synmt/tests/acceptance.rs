//! Acceptance checks for the whole toolkit, one test per claim. Training
//! tests run at desk scale on the synthetic grammar and are sized for a
//! single core; everything is seeded.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use synmt::checkpoint::{self, TrainMeta};
use synmt::data::{
    build_vocab, make_batch, make_examples, tokenize, ExamplePair, Limits, Variant, Vocabulary,
    EOS,
};
use synmt::decode::{
    aligned_source_word, force_decode, score_sequence, translate, DecodeOptions,
};
use synmt::eval::{aer, bleu, phrase_continuity, rare_word_report, rot, GoldAlignment};
use synmt::model::{count_params_config, DecoderState, ModelConfig, ModelParams};
use synmt::tensor::{grad_check, Tape, Tensor};
use synmt::toy::{corpus_lines, main_task, natural_sample, probe_task, ToyPair};
use synmt::train::{AdaDelta, TrainOptions, Trainer};
use synmt::tree::{build_mixed, linearize, parse_bracketed, PhraseSpan};

fn vocabs(
    variant: Variant,
    src: &[String],
    trees: &[String],
    tgt: &[String],
) -> (Vocabulary, Vocabulary, Option<Vocabulary>) {
    let parsed: Vec<_> = trees.iter().map(|l| parse_bracketed(l).unwrap()).collect();
    let src_stream: Vec<Vec<String>> = if variant.needs_mixed() {
        parsed.iter().map(|t| build_mixed(t, false).tokens).collect()
    } else {
        src.iter().map(|l| tokenize(l)).collect()
    };
    let (sv, _) = build_vocab(&src_stream, 200, &[]).unwrap();
    let tstream: Vec<Vec<String>> = tgt.iter().map(|l| tokenize(l)).collect();
    let (tv, _) = build_vocab(&tstream, 200, &[]).unwrap();
    let lv = if variant.needs_labels() {
        let lstream: Vec<Vec<String>> =
            parsed.iter().map(|t| linearize(t, false).labels).collect();
        Some(build_vocab(&lstream, 60, &[]).unwrap().0)
    } else {
        None
    };
    (sv, tv, lv)
}

struct Trained {
    params: ModelParams,
    sv: Vocabulary,
    tv: Vocabulary,
    lv: Option<Vocabulary>,
    epoch1: f64,
    last: f64,
    epochs: usize,
}

/// Train one variant on toy pairs with the settings used throughout this
/// suite (batch 8, no clipping, AdaDelta); stops early once the per-token
/// loss falls below `stop_ratio` of epoch 1.
fn train_on(
    variant: Variant,
    pairs: &[ToyPair],
    dim: usize,
    max_epochs: usize,
    stop_ratio: Option<f64>,
    seed: u64,
) -> Trained {
    let (src, trees, tgt, _) = corpus_lines(pairs);
    let (sv, tv, lv) = vocabs(variant, &src, &trees, &tgt);
    let examples = make_examples(
        &src,
        Some(&trees),
        &tgt,
        &sv,
        &tv,
        lv.as_ref(),
        variant,
        &Limits::default(),
        false,
    )
    .unwrap();
    let cfg = ModelConfig {
        variant,
        word_emb_dim: dim,
        hidden_dim: dim,
        label_emb_dim: 16,
        label_hidden_dim: 16,
        source_vocab: sv.len(),
        target_vocab: tv.len(),
        label_vocab: lv.as_ref().map_or(3, |v| v.len()),
        dropout: 0.0,
    };
    let params = ModelParams::init(&cfg, seed).unwrap();
    let mut meta = TrainMeta::default();
    let mut epoch1 = f64::NAN;
    let mut last = f64::NAN;
    {
        let mut opt = AdaDelta::new(&params);
        let mut trainer = Trainer {
            params: &params,
            opt: &mut opt,
            src_vocab: &sv,
            tgt_vocab: &tv,
            label_vocab: lv.as_ref(),
        };
        while meta.epoch < max_epochs {
            let opts = TrainOptions {
                epochs: (meta.epoch + 5).min(max_epochs),
                batch_size: 8,
                clip_norm: 0.0,
                seed,
                log_every: 0,
                save_dir: None,
                run_config: None,
            };
            let report = trainer.run(&examples, &opts, meta, &mut |_| {}).unwrap();
            meta = report.meta;
            for e in &report.epochs {
                if e.epoch == 1 {
                    epoch1 = e.loss_per_token;
                }
                last = e.loss_per_token;
            }
            if let Some(r) = stop_ratio {
                if last < r * epoch1 {
                    break;
                }
            }
        }
    }
    Trained { params, sv, tv, lv, epoch1, last, epochs: meta.epoch }
}

fn heldout_bleu(t: &Trained, variant: Variant, pairs: &[ToyPair], beam: usize) -> f64 {
    let (src, trees, tgt, _) = corpus_lines(pairs);
    let examples = make_examples(
        &src,
        Some(&trees),
        &tgt,
        &t.sv,
        &t.tv,
        t.lv.as_ref(),
        variant,
        &Limits::default(),
        false,
    )
    .unwrap();
    let opts = DecodeOptions { beam, max_len: None, length_norm: true };
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for ex in &examples {
        let translation = translate(&t.params, ex, &opts).unwrap();
        hyps.push(t.tv.decode(&translation.tokens));
        refs.push(vec![tokenize(&tgt[ex.line])]);
    }
    bleu(&hyps, &refs, 4, true).unwrap().score
}

#[test]
fn parameter_deltas_match_the_reported_model_sizes() {
    let base = ModelConfig::default();
    let count =
        |variant: Variant| count_params_config(&ModelConfig { variant, ..base.clone() });
    let baseline = count(Variant::Baseline);
    let parallel = count(Variant::Parallel);
    let hierarchical = count(Variant::Hierarchical);
    let mixed = count(Variant::Mixed);

    assert_eq!(mixed, baseline, "mixed must add no parameters");
    let dp = parallel - baseline;
    let dh = hierarchical - baseline;
    assert!((940_000..=1_270_000).contains(&dp), "parallel delta {}", dp);
    assert!((1_020_000..=1_380_000).contains(&dh), "hierarchical delta {}", dh);
    println!(
        "PASS parameter deltas: baseline {}, parallel +{}, hierarchical +{}, mixed +0",
        baseline, dp, dh
    );
}

#[test]
fn gradients_match_central_differences_for_all_variants() {
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            word_emb_dim: 4,
            hidden_dim: 5,
            label_emb_dim: 3,
            label_hidden_dim: 3,
            source_vocab: 10,
            target_vocab: 9,
            label_vocab: 8,
            dropout: 0.0,
        };
        let params = ModelParams::init(&cfg, 7).unwrap();
        let example = ExamplePair {
            line: 0,
            src: vec![3, 4, 5, EOS],
            tgt: vec![3, 4, EOS],
            labels: variant.needs_labels().then(|| vec![3, 4, 5, 6, 7, EOS]),
            word_to_label: variant.needs_labels().then(|| vec![1, 2, 4]),
            mixed: variant.needs_mixed().then(|| vec![3, 6, 3, 7, 4, 8, 5, EOS]),
            word_positions: variant.needs_mixed().then(|| vec![2, 4, 6]),
        };
        let batch = make_batch(&[&example]).unwrap();
        let tensors: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t).collect();
        let err = grad_check(
            |tape| params.batch_loss(tape, &batch, false, &mut ChaCha8Rng::seed_from_u64(0)),
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{}: max relative error {:.3e}", variant, err);
        println!("PASS gradients {}: max relative error {:.3e}", variant, err);
    }
}

#[test]
fn linearization_reproduces_the_worked_example_and_length_ratio() {
    let tree = parse_bracketed("(S (NP (PRP I)) (VP (VBP love) (NP (NNS dogs))))").unwrap();
    let lin = linearize(&tree, false);
    let labels: Vec<&str> = lin.labels.iter().map(String::as_str).collect();
    assert_eq!(labels, ["S", "NP", "PRP", "VP", "VBP", "NP", "NNS"]);
    assert_eq!(lin.word_to_label, vec![2, 4, 6]);

    let mixed = build_mixed(&tree, false);
    let tokens: Vec<&str> = mixed.tokens.iter().map(String::as_str).collect();
    assert_eq!(tokens, ["S", "NP", "PRP", "I", "VP", "VBP", "love", "NP", "NNS", "dogs"]);
    assert_eq!(mixed.word_positions, vec![3, 6, 9]);

    let trees = natural_sample().unwrap();
    let mut words = 0usize;
    let mut mixed_tokens = 0usize;
    for t in &trees {
        let m = build_mixed(t, false);
        mixed_tokens += m.tokens.len();
        words += m.word_positions.len();
    }
    let ratio = mixed_tokens as f64 / words as f64;
    assert!((2.0..=4.0).contains(&ratio), "mixed/word ratio {:.3}", ratio);
    println!(
        "PASS linearization: worked example exact; mixed/word ratio {:.3} over {} natural trees",
        ratio,
        trees.len()
    );
}

#[derive(Deserialize)]
struct BleuFixture {
    max_n: usize,
    case_insensitive: bool,
    hypotheses: Vec<String>,
    references: Vec<Vec<String>>,
    expected_bleu: f64,
}

#[test]
fn metric_oracles_agree_with_hand_and_reference_values() {
    // corpus BLEU against the frozen output of an independent implementation
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bleu20.json");
    let fixture: BleuFixture =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let hyps: Vec<Vec<String>> = fixture.hypotheses.iter().map(|l| tokenize(l)).collect();
    let refs: Vec<Vec<Vec<String>>> = fixture
        .references
        .iter()
        .map(|rs| rs.iter().map(|l| tokenize(l)).collect())
        .collect();
    let got = bleu(&hyps, &refs, fixture.max_n, fixture.case_insensitive).unwrap().score;
    assert!(
        (got - fixture.expected_bleu).abs() < 0.001,
        "BLEU {:.10} vs reference {:.10}",
        got,
        fixture.expected_bleu
    );

    // over-translation worked example: one source word whose linked targets
    // read "hong kong hong kong" repeats two tokens, so t(w) = 2
    let rows = rot(
        &[vec!["NR".to_string()]],
        &[vec![(0, 0), (0, 1), (0, 2), (0, 3)]],
        &[vec!["hong".into(), "kong".into(), "hong".into(), "kong".into()]],
        &[],
    )
    .unwrap();
    let all = rows.last().unwrap();
    assert_eq!((all.words, all.over_translations), (1, 2));
    assert_eq!(all.rot, 2.0);

    // AER hand case: A = {(0,0)}, S = {(0,0),(1,1)}, P = S gives exactly 1/3
    let gold = GoldAlignment {
        sure: [(0, 0), (1, 1)].into_iter().collect(),
        possible: [(0, 0), (1, 1)].into_iter().collect(),
    };
    let got_aer = aer(&[vec![(0, 0)]], &[gold]).unwrap();
    assert!((got_aer - 1.0 / 3.0).abs() < 1e-12, "AER {}", got_aer);

    // phrase continuity vs a brute-force recount on random fixtures
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let cats = ["NP", "VP", "PP", "SBAR"];
    let mut spans_all: Vec<Vec<PhraseSpan>> = Vec::new();
    let mut links_all: Vec<Vec<(usize, usize)>> = Vec::new();
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=8);
        let mut spans = Vec::new();
        for _ in 0..rng.gen_range(0..=3) {
            let start = rng.gen_range(0..n);
            let end = rng.gen_range(start..n);
            let category = cats[rng.gen_range(0..cats.len())].to_string();
            spans.push(PhraseSpan { category, start, end });
        }
        let mut links = Vec::new();
        for _ in 0..rng.gen_range(0..=2 * n) {
            links.push((rng.gen_range(0..n), rng.gen_range(0..m)));
        }
        spans_all.push(spans);
        links_all.push(links);
    }
    let mut want: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut want_all = [0usize; 3];
    for (spans, links) in spans_all.iter().zip(&links_all) {
        for span in spans {
            let mut targets: Vec<usize> = links
                .iter()
                .filter(|(i, _)| span.start <= *i && *i <= span.end)
                .map(|(_, j)| *j)
                .collect();
            targets.sort_unstable();
            targets.dedup();
            let k = if targets.is_empty() {
                2
            } else if targets.windows(2).all(|w| w[1] == w[0] + 1) {
                0
            } else {
                1
            };
            want.entry(span.category.clone()).or_default()[k] += 1;
            want_all[k] += 1;
        }
    }
    let rows = phrase_continuity(&spans_all, &links_all).unwrap();
    assert_eq!(rows.len(), want.len() + 1);
    for row in &rows[..rows.len() - 1] {
        let w = want[&row.category];
        assert_eq!([row.continuous, row.discontinuous, row.unaligned], w, "{}", row.category);
    }
    let all_row = rows.last().unwrap();
    assert_eq!(all_row.category, "ALL");
    assert_eq!([all_row.continuous, all_row.discontinuous, all_row.unaligned], want_all);

    // rare-word classifier vs a brute-force recount on random fixtures
    let tags = ["NN", "VB", "JJ", "IN"];
    let groups: Vec<(String, Vec<String>)> = vec![
        ("noun".to_string(), vec!["NN".to_string()]),
        ("verb or adj".to_string(), vec!["VB".to_string(), "JJ".to_string()]),
    ];
    let mut src_unk_all: Vec<Vec<bool>> = Vec::new();
    let mut tgt_unk_all: Vec<Vec<bool>> = Vec::new();
    let mut tags_all: Vec<Vec<String>> = Vec::new();
    let mut rare_links_all: Vec<Vec<(usize, usize)>> = Vec::new();
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=8);
        src_unk_all.push((0..n).map(|_| rng.gen_bool(0.5)).collect());
        tgt_unk_all.push((0..m).map(|_| rng.gen_bool(0.5)).collect());
        tags_all.push((0..n).map(|_| tags[rng.gen_range(0..tags.len())].to_string()).collect());
        let mut links = Vec::new();
        for _ in 0..rng.gen_range(0..=2 * n) {
            links.push((rng.gen_range(0..n), rng.gen_range(0..m)));
        }
        rare_links_all.push(links);
    }
    let mut grp_want = vec![[0usize; 3]; groups.len()];
    let mut all_want = [0usize; 3];
    for s in 0..100 {
        for (i, &is_rare) in src_unk_all[s].iter().enumerate() {
            if !is_rare {
                continue;
            }
            let linked: Vec<bool> = rare_links_all[s]
                .iter()
                .filter(|(a, _)| *a == i)
                .map(|(_, j)| tgt_unk_all[s][*j])
                .collect();
            let k = if linked.is_empty() {
                2
            } else if linked.iter().any(|unk| !unk) {
                0
            } else {
                1
            };
            all_want[k] += 1;
            for (gi, (_, gtags)) in groups.iter().enumerate() {
                if gtags.iter().any(|t| *t == tags_all[s][i]) {
                    grp_want[gi][k] += 1;
                }
            }
        }
    }
    let rows =
        rare_word_report(&src_unk_all, &tgt_unk_all, &tags_all, &rare_links_all, &groups)
            .unwrap();
    assert_eq!(rows.len(), groups.len() + 1);
    for (gi, row) in rows[..groups.len()].iter().enumerate() {
        assert_eq!(row.group, groups[gi].0);
        assert_eq!([row.non_unk, row.unk, row.unaligned], grp_want[gi], "{}", row.group);
    }
    let last = rows.last().unwrap();
    assert_eq!(last.group, "ALL");
    assert_eq!([last.non_unk, last.unk, last.unaligned], all_want);

    println!(
        "PASS metric oracles: BLEU {:.6} (reference {:.6}), ROT 2, AER 1/3, \
         continuity and rare words exact on 100 random fixtures",
        got, fixture.expected_bleu
    );
}

#[test]
fn all_variants_learn_the_toy_corpus_end_to_end() {
    let t0 = Instant::now();
    let all = main_task(2120, 3);
    let (train, held) = all.split_at(2000);
    for variant in Variant::ALL {
        let trained = train_on(variant, train, 48, 30, Some(0.2), 1);
        let ratio = trained.last / trained.epoch1;
        assert!(
            ratio < 0.2,
            "{}: per-token loss only fell to {:.3} of epoch 1 after {} epochs",
            variant,
            ratio,
            trained.epochs
        );
        let score = heldout_bleu(&trained, variant, held, 10);
        assert!(score > 0.5, "{}: held-out BLEU {:.4}", variant, score);
        println!(
            "PASS end-to-end {}: loss ratio {:.3} in {} epochs, beam-10 held-out BLEU {:.4}",
            variant, ratio, trained.epochs, score
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 900.0, "end-to-end training took {:.0}s", secs);
    println!("PASS end-to-end runtime: {:.0}s for all four variants (budget 900s)", secs);
}

#[test]
fn mixed_variant_beats_baseline_on_the_attachment_probe() {
    let all = probe_task(700, 11);
    let (train, held) = all.split_at(600);
    let base = train_on(Variant::Baseline, train, 32, 25, None, 1);
    let mixed = train_on(Variant::Mixed, train, 32, 25, None, 1);
    let base_bleu = heldout_bleu(&base, Variant::Baseline, held, 10);
    let mixed_bleu = heldout_bleu(&mixed, Variant::Mixed, held, 10);
    assert!(
        mixed_bleu - base_bleu >= 0.05,
        "baseline {:.4}, mixed {:.4}",
        base_bleu,
        mixed_bleu
    );
    println!(
        "PASS attachment probe: baseline BLEU {:.4}, mixed BLEU {:.4}, gap {:.4} (needs 0.05)",
        base_bleu,
        mixed_bleu,
        mixed_bleu - base_bleu
    );
}

#[test]
fn training_and_translation_are_bit_identical_across_reruns() {
    let pairs = main_task(64, 13);
    let (src, trees, tgt, _) = corpus_lines(&pairs);
    let (sv, tv, lv) = vocabs(Variant::Mixed, &src, &trees, &tgt);
    let examples = make_examples(
        &src,
        Some(&trees),
        &tgt,
        &sv,
        &tv,
        lv.as_ref(),
        Variant::Mixed,
        &Limits::default(),
        false,
    )
    .unwrap();
    let cfg = ModelConfig {
        variant: Variant::Mixed,
        word_emb_dim: 16,
        hidden_dim: 16,
        label_emb_dim: 8,
        label_hidden_dim: 8,
        source_vocab: sv.len(),
        target_vocab: tv.len(),
        label_vocab: 3,
        dropout: 0.3,
    };
    let run = |dir: &Path| -> Vec<u8> {
        let params = ModelParams::init(&cfg, 5).unwrap();
        let mut opt = AdaDelta::new(&params);
        let mut trainer = Trainer {
            params: &params,
            opt: &mut opt,
            src_vocab: &sv,
            tgt_vocab: &tv,
            label_vocab: lv.as_ref(),
        };
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 8,
            clip_norm: 1.0,
            seed: 7,
            log_every: 0,
            save_dir: Some(dir.to_path_buf()),
            run_config: None,
        };
        trainer.run(&examples, &opts, TrainMeta::default(), &mut |_| {}).unwrap();
        fs::read(dir.join("epoch-002.ckpt")).unwrap()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let bytes_a = run(dir_a.path());
    let bytes_b = run(dir_b.path());
    assert!(bytes_a == bytes_b, "checkpoint bytes differ between identical runs");

    let (params, _opt, _meta) = checkpoint::load(&dir_a.path().join("epoch-002.ckpt"))
        .unwrap()
        .into_model()
        .unwrap();
    let opts = DecodeOptions { beam: 4, max_len: None, length_norm: true };
    for ex in examples.iter().take(10) {
        let first = translate(&params, ex, &opts).unwrap();
        let second = translate(&params, ex, &opts).unwrap();
        assert_eq!(first.tokens, second.tokens, "line {}", ex.line);
        assert_eq!(first.alignment, second.alignment, "line {}", ex.line);
        assert_eq!(first.score.to_bits(), second.score.to_bits(), "line {}", ex.line);
    }
    println!(
        "PASS determinism: {} checkpoint bytes identical across reruns; repeated decoding bit-identical",
        bytes_a.len()
    );
}

struct CopyModel {
    params: ModelParams,
    vocab_len: usize,
    test: Vec<ExamplePair>,
}

/// A trained copy task: target equals source over a small alphabet, so the
/// optimum output is known exactly. A tiny alphabet keeps exhaustive
/// enumeration cheap for the beam oracle; a larger one makes the decoder
/// depend on attention, since the state alone cannot carry the sentence.
fn copy_model(letter_count: usize, max_words: usize, dim: usize) -> CopyModel {
    let letters: Vec<String> =
        ('a'..='z').take(letter_count).map(|c| c.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let lines: Vec<String> = (0..420)
        .map(|_| {
            let n = rng.gen_range(2..=max_words);
            (0..n)
                .map(|_| letters[rng.gen_range(0..letters.len())].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let (train_lines, test_lines) = lines.split_at(400);
    let stream: Vec<Vec<String>> = train_lines.iter().map(|l| tokenize(l)).collect();
    let (vocab, _) = build_vocab(&stream, letter_count + 3, &[]).unwrap();
    let build = |ls: &[String]| {
        make_examples(ls, None, ls, &vocab, &vocab, None, Variant::Baseline, &Limits::default(), false)
            .unwrap()
    };
    let train_ex = build(train_lines);
    let test_ex = build(test_lines);
    let cfg = ModelConfig {
        variant: Variant::Baseline,
        word_emb_dim: dim,
        hidden_dim: dim,
        label_emb_dim: 4,
        label_hidden_dim: 4,
        source_vocab: vocab.len(),
        target_vocab: vocab.len(),
        label_vocab: 3,
        dropout: 0.0,
    };
    let params = ModelParams::init(&cfg, 29).unwrap();
    let last;
    {
        let mut opt = AdaDelta::new(&params);
        let mut trainer = Trainer {
            params: &params,
            opt: &mut opt,
            src_vocab: &vocab,
            tgt_vocab: &vocab,
            label_vocab: None,
        };
        let opts = TrainOptions {
            epochs: 60,
            batch_size: 4,
            clip_norm: 0.0,
            seed: 3,
            log_every: 0,
            save_dir: None,
            run_config: None,
        };
        let report = trainer.run(&train_ex, &opts, TrainMeta::default(), &mut |_| {}).unwrap();
        last = report.epochs.last().unwrap().loss_per_token;
    }
    assert!(last < 0.2, "copy task failed to converge: {:.3} per token", last);
    CopyModel { params, vocab_len: vocab.len(), test: test_ex }
}

/// Greedy decoding through the public step API; ties break toward the
/// lowest token id, matching the beam's tie rule.
fn greedy(params: &ModelParams, example: &ExamplePair, max_len: usize) -> Vec<usize> {
    let mut tape = Tape::no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = make_batch(&[example]).unwrap();
    let enc = params.encode(&mut tape, &batch).unwrap();
    let mut state = params.init_decoder(&mut tape, &enc).unwrap();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (next, logits, _alpha) =
            params.decoder_step(&mut tape, &state, &enc, false, &mut rng).unwrap();
        let row = logits.to_vec();
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        state = DecoderState { s: next.s, y_prev: vec![best] };
    }
    out
}

/// Score every EOS-terminated target with fewer than `max_len` tokens and
/// return the best under length normalization.
fn exhaustive_best(
    params: &ModelParams,
    example: &ExamplePair,
    max_len: usize,
    vocab: usize,
) -> (Vec<usize>, f64) {
    let alphabet: Vec<usize> = (0..vocab).filter(|&t| t != EOS).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let mut seq = prefix.clone();
        seq.push(EOS);
        let score = score_sequence(params, example, &seq).unwrap() / seq.len() as f64;
        if best.as_ref().map_or(true, |(_, s)| score > *s) {
            best = Some((prefix.clone(), score));
        }
        if prefix.len() + 1 < max_len {
            for &t in &alphabet {
                let mut longer = prefix.clone();
                longer.push(t);
                stack.push(longer);
            }
        }
    }
    best.unwrap()
}

#[test]
fn beam_one_equals_greedy_and_beam_ten_finds_the_optimum() {
    // beam = 1 against greedy, under an arbitrary untrained model so the
    // output distributions are in no way special
    let pairs = main_task(100, 17);
    let (src, _, tgt, _) = corpus_lines(&pairs);
    let src_stream: Vec<Vec<String>> = src.iter().map(|l| tokenize(l)).collect();
    let (sv, _) = build_vocab(&src_stream, 200, &[]).unwrap();
    let tgt_stream: Vec<Vec<String>> = tgt.iter().map(|l| tokenize(l)).collect();
    let (tv, _) = build_vocab(&tgt_stream, 200, &[]).unwrap();
    let examples = make_examples(
        &src,
        None,
        &tgt,
        &sv,
        &tv,
        None,
        Variant::Baseline,
        &Limits::default(),
        false,
    )
    .unwrap();
    assert_eq!(examples.len(), 100);
    let cfg = ModelConfig {
        variant: Variant::Baseline,
        word_emb_dim: 16,
        hidden_dim: 16,
        label_emb_dim: 4,
        label_hidden_dim: 4,
        source_vocab: sv.len(),
        target_vocab: tv.len(),
        label_vocab: 3,
        dropout: 0.0,
    };
    let params = ModelParams::init(&cfg, 23).unwrap();
    let opts = DecodeOptions { beam: 1, max_len: None, length_norm: true };
    for ex in &examples {
        let beamed = translate(&params, ex, &opts).unwrap();
        let greedily = greedy(&params, ex, 2 * ex.source_words() + 10);
        assert_eq!(beamed.tokens, greedily, "line {}", ex.line);
    }
    println!("PASS beam contract: beam=1 equals greedy on {} sentences", examples.len());

    // beam = 10 against exhaustive enumeration on the trained copy model
    let cm = copy_model(4, 5, 16);
    let opts = DecodeOptions { beam: 10, max_len: Some(5), length_norm: true };
    let mut checked = 0;
    for ex in cm.test.iter().filter(|e| e.source_words() <= 4).take(5) {
        let beamed = translate(&cm.params, ex, &opts).unwrap();
        let (oracle_tokens, oracle_score) = exhaustive_best(&cm.params, ex, 5, cm.vocab_len);
        assert_eq!(beamed.tokens, oracle_tokens, "line {}", ex.line);
        assert!(
            (beamed.score - oracle_score).abs() < 1e-9,
            "line {}: beam score {:.12} vs oracle {:.12}",
            ex.line,
            beamed.score,
            oracle_score
        );
        checked += 1;
    }
    assert!(checked >= 3, "too few short test sentences: {}", checked);
    println!(
        "PASS beam contract: beam=10 matches the exhaustive optimum on {} sentences",
        checked
    );
}

#[test]
fn forced_attention_tracks_the_diagonal_on_the_copy_task() {
    let cm = copy_model(16, 6, 24);
    let mut hits = 0usize;
    let mut total = 0usize;
    for ex in &cm.test {
        let alphas = force_decode(&cm.params, ex).unwrap();
        let words = ex.source_words();
        for (j, row) in alphas.iter().take(words).enumerate() {
            if aligned_source_word(row, words) == j {
                hits += 1;
            }
            total += 1;
        }
    }
    let frac = hits as f64 / total as f64;
    assert!(frac >= 0.9, "diagonal fraction {:.3} ({} of {})", frac, hits, total);
    println!(
        "PASS forced attention: {:.1}% of {} copy steps attend to the diagonal",
        100.0 * frac,
        total
    );
}

#[test]
fn vocab_coverage_matches_a_brute_force_recount() {
    let pairs = main_task(40, 9);
    let (src, _, _, _) = corpus_lines(&pairs);
    let mut stream: Vec<Vec<String>> = src.iter().map(|l| tokenize(l)).collect();
    stream.push(vec!["zz1".to_string(), "zz2".to_string(), "zz3".to_string()]);

    let limit = 10;
    let (vocab, stats) = build_vocab(&stream, limit, &[]).unwrap();

    // independent recount: frequency ranks with first-appearance tie break
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut appearance: Vec<&str> = Vec::new();
    let mut total = 0usize;
    for tok in stream.iter().flatten() {
        total += 1;
        let c = counts.entry(tok.as_str()).or_insert(0);
        if *c == 0 {
            appearance.push(tok.as_str());
        }
        *c += 1;
    }
    let rank_of: HashMap<&str, usize> =
        appearance.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut ranked: Vec<&str> = counts.keys().copied().collect();
    ranked.sort_by_key(|t| (std::cmp::Reverse(counts[t]), rank_of[t]));
    let kept: Vec<&str> = ranked.iter().copied().take(limit - 3).collect();
    let covered: usize = kept.iter().map(|t| counts[t]).sum();

    assert_eq!(stats.total_tokens, total);
    assert_eq!(stats.distinct, counts.len());
    assert_eq!(stats.kept, vocab.len());
    assert_eq!(vocab.len(), limit.min(3 + counts.len()));
    assert_eq!(stats.covered_tokens, covered);
    assert!((stats.coverage() - covered as f64 / total as f64).abs() < 1e-15);
    for t in &kept {
        assert!(vocab.contains(t), "{} should have been kept", t);
    }
    for t in ranked.iter().skip(limit - 3) {
        assert!(!vocab.contains(t), "{} should have been cut", t);
    }
    println!(
        "PASS vocab coverage: {} of {} types kept, coverage {:.4} matches recount",
        stats.kept - 3,
        stats.distinct,
        stats.coverage()
    );
}

#[test]
fn surviving_pairs_match_a_brute_force_filter() {
    let pairs = main_task(60, 5);
    let (clean_src, clean_trees, clean_tgt, _) = corpus_lines(&pairs);
    let (sv, tv, _) = vocabs(Variant::Baseline, &clean_src, &clean_trees, &clean_tgt);
    let lv = vocabs(Variant::Parallel, &clean_src, &clean_trees, &clean_tgt).2;

    let mut src = clean_src;
    let mut trees = clean_trees;
    let mut tgt = clean_tgt;
    // hand-broken rows: empty source, empty target, unparsable tree,
    // tree leaves that disagree with the source
    src.push(String::new());
    trees.push("(S (NN x))".to_string());
    tgt.push("y".to_string());
    src.push("a b".to_string());
    trees.push("(S (NN a) (NN b))".to_string());
    tgt.push(String::new());
    src.push("a b".to_string());
    trees.push("(S (NN a".to_string());
    tgt.push("y y".to_string());
    src.push("a b".to_string());
    trees.push("(S (NN a) (NN c))".to_string());
    tgt.push("y y".to_string());

    let limits = Limits {
        max_source_words: 6,
        max_target_words: 6,
        max_label_tokens: 14,
        max_mixed_tokens: 13,
    };
    for variant in Variant::ALL {
        let examples = make_examples(
            &src,
            Some(&trees),
            &tgt,
            &sv,
            &tv,
            lv.as_ref(),
            variant,
            &limits,
            false,
        )
        .unwrap();
        let got: Vec<usize> = examples.iter().map(|e| e.line).collect();

        let mut want = Vec::new();
        for i in 0..src.len() {
            let s = tokenize(&src[i]);
            let t = tokenize(&tgt[i]);
            if s.is_empty() || t.is_empty() {
                continue;
            }
            if s.len() > limits.max_source_words || t.len() > limits.max_target_words {
                continue;
            }
            let tree = match parse_bracketed(&trees[i]) {
                Ok(tree) => tree,
                Err(_) => continue,
            };
            if tree.words() != s {
                continue;
            }
            if variant.needs_labels()
                && linearize(&tree, false).labels.len() > limits.max_label_tokens
            {
                continue;
            }
            if variant.needs_mixed()
                && build_mixed(&tree, false).tokens.len() > limits.max_mixed_tokens
            {
                continue;
            }
            want.push(i);
        }
        assert!(!want.is_empty() && want.len() < src.len(), "filter did not discriminate");
        assert_eq!(got, want, "{}", variant);
        println!(
            "PASS surviving pairs {}: {} of {} kept, matching the brute-force filter",
            variant,
            got.len(),
            src.len()
        );
    }
}
