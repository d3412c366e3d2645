//! Corpus handling: vocabularies, numericalization, length filtering, and
//! batch assembly.
//!
//! Batches are time-major: step `t` of a batch is a vector of `B` token ids
//! (padded with [`PAD`]) plus a 0/1 mask. Every sequence carries a trailing
//! EOS that counts as a real position; padding is masked so that padded
//! steps contribute exactly zero to the loss and to attention.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree;

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const PAD: usize = 2;
pub const RESERVED: [&str; 3] = ["<unk>", "</s>", "<pad>"];

/// Model/data variant. Chosen here because it already shapes preprocessing:
/// parallel and hierarchical need a label sequence, mixed needs the
/// interleaved sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Parallel,
    Hierarchical,
    Mixed,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Baseline, Variant::Parallel, Variant::Hierarchical, Variant::Mixed];

    pub fn needs_labels(self) -> bool {
        matches!(self, Variant::Parallel | Variant::Hierarchical)
    }

    pub fn needs_mixed(self) -> bool {
        matches!(self, Variant::Mixed)
    }

    pub fn needs_trees(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Baseline => "baseline",
            Variant::Parallel => "parallel",
            Variant::Hierarchical => "hierarchical",
            Variant::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "parallel" => Ok(Variant::Parallel),
            "hierarchical" => Ok(Variant::Hierarchical),
            "mixed" => Ok(Variant::Mixed),
            other => Err(Error::usage(format!(
                "unknown variant '{}' (expected baseline|parallel|hierarchical|mixed)",
                other
            ))),
        }
    }
}

/// Token/id bijection with dense ids. Ids 0..3 are always `<unk>`, `</s>`,
/// `<pad>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

/// Corpus statistics reported by [`build_vocab`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VocabStats {
    pub kept: usize,
    pub distinct: usize,
    pub total_tokens: usize,
    pub covered_tokens: usize,
}

impl VocabStats {
    /// Fraction of corpus token instances that map to a non-UNK id.
    pub fn coverage(&self) -> f64 {
        self.covered_tokens as f64 / self.total_tokens as f64
    }
}

impl Vocabulary {
    fn with_reserved(extra: &[String]) -> Vocabulary {
        let mut v = Vocabulary { id_to_token: Vec::new(), token_to_id: HashMap::new() };
        for t in RESERVED {
            v.push(t.to_string());
        }
        for t in extra {
            if !v.token_to_id.contains_key(t) {
                v.push(t.clone());
            }
        }
        v
    }

    fn push(&mut self, token: String) {
        self.token_to_id.insert(token.clone(), self.id_to_token.len());
        self.id_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of a token, falling back to [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Rebuild from an id-ordered token list (as produced by [`tokens`](Self::tokens)).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        for (i, t) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*t) {
                return Err(Error::data(format!("reserved token {} missing at id {}", t, i)));
            }
        }
        let mut v = Vocabulary { id_to_token: Vec::new(), token_to_id: HashMap::new() };
        for (i, t) in tokens.into_iter().enumerate() {
            if v.token_to_id.contains_key(&t) {
                return Err(Error::data(format!("duplicate token '{}' at id {}", t, i)));
            }
            v.push(t);
        }
        Ok(v)
    }

    /// Numericalize without appending EOS.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }

    /// Write as `token<TAB>id` lines, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path)?;
        let mut v = Vocabulary { id_to_token: Vec::new(), token_to_id: HashMap::new() };
        for (lineno, line) in text.lines().enumerate() {
            let (tok, id) = line.split_once('\t').ok_or_else(|| {
                Error::data(format!("{}:{}: expected token<TAB>id", path.display(), lineno + 1))
            })?;
            let id: usize = id.parse().map_err(|_| {
                Error::data(format!("{}:{}: bad id '{}'", path.display(), lineno + 1, id))
            })?;
            if id != v.id_to_token.len() {
                return Err(Error::data(format!(
                    "{}:{}: ids must be dense, expected {} got {}",
                    path.display(),
                    lineno + 1,
                    v.id_to_token.len(),
                    id
                )));
            }
            v.push(tok.to_string());
        }
        for (i, t) in RESERVED.iter().enumerate() {
            if v.id_to_token.get(i).map(String::as_str) != Some(*t) {
                return Err(Error::data(format!(
                    "{}: reserved token {} missing at id {}",
                    path.display(),
                    t,
                    i
                )));
            }
        }
        Ok(v)
    }
}

/// Most frequent tokens up to `limit` total entries (reserved ids included).
/// Ties in frequency break by first occurrence in the corpus. `extra_reserved`
/// tokens (the structural labels, for the mixed variant) are seated before
/// frequency ranking fills the rest.
pub fn build_vocab(
    sentences: &[Vec<String>],
    limit: usize,
    extra_reserved: &[String],
) -> Result<(Vocabulary, VocabStats)> {
    let mut vocab = Vocabulary::with_reserved(extra_reserved);
    if limit < vocab.len() {
        return Err(Error::usage(format!(
            "vocab limit {} is below the {} reserved tokens",
            limit,
            vocab.len()
        )));
    }

    let mut freq: HashMap<&str, (usize, usize)> = HashMap::new(); // token -> (count, first pos)
    let mut order = 0usize;
    let mut total = 0usize;
    for sent in sentences {
        for tok in sent {
            total += 1;
            let e = freq.entry(tok.as_str()).or_insert((0, order));
            if e.0 == 0 {
                order += 1;
            }
            e.0 += 1;
        }
    }
    if total == 0 {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }

    let mut ranked: Vec<(&str, usize, usize)> =
        freq.iter().map(|(&t, &(c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    for (tok, _, _) in ranked {
        if vocab.len() >= limit {
            break;
        }
        if !vocab.contains(tok) {
            vocab.push(tok.to_string());
        }
    }

    let covered = sentences
        .iter()
        .flatten()
        .filter(|t| vocab.contains(t))
        .count();
    let stats = VocabStats {
        kept: vocab.len(),
        distinct: freq.len(),
        total_tokens: total,
        covered_tokens: covered,
    };
    Ok((vocab, stats))
}

/// Length caps applied during example construction. Word counts for source
/// and target, token counts for label and mixed sequences.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    pub max_source_words: usize,
    pub max_target_words: usize,
    pub max_label_tokens: usize,
    pub max_mixed_tokens: usize,
}

impl Default for Limits {
    fn default() -> Limits {
        Limits {
            max_source_words: 50,
            max_target_words: 50,
            max_label_tokens: 100,
            max_mixed_tokens: 150,
        }
    }
}

/// One numericalized sentence pair. All id sequences end with EOS. The
/// variant decides which optional fields are present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    /// 0-based line number in the original corpus, for joining back to trees.
    pub line: usize,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    /// Linearized label ids (parallel/hierarchical), EOS-terminated.
    pub labels: Option<Vec<usize>>,
    /// For source word i (EOS excluded), the index of its POS tag within
    /// `labels`.
    pub word_to_label: Option<Vec<usize>>,
    /// Interleaved label/word ids over the source vocabulary (mixed),
    /// EOS-terminated.
    pub mixed: Option<Vec<usize>>,
    /// For source word i (EOS excluded), its position within `mixed`.
    pub word_positions: Option<Vec<usize>>,
}

impl ExamplePair {
    /// Source word count excluding EOS.
    pub fn source_words(&self) -> usize {
        self.src.len() - 1
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Build numericalized pairs from line-aligned corpora. Pairs that exceed
/// the length caps, have empty sides, or carry unusable trees are dropped
/// with a warning; file-level misalignment is fatal.
#[allow(clippy::too_many_arguments)]
pub fn make_examples(
    src_lines: &[String],
    tree_lines: Option<&[String]>,
    tgt_lines: &[String],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    label_vocab: Option<&Vocabulary>,
    variant: Variant,
    limits: &Limits,
    closing_brackets: bool,
) -> Result<Vec<ExamplePair>> {
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::data(format!(
            "source has {} lines but target has {}",
            src_lines.len(),
            tgt_lines.len()
        )));
    }
    if let Some(trees) = tree_lines {
        if trees.len() != src_lines.len() {
            return Err(Error::data(format!(
                "source has {} lines but tree file has {}",
                src_lines.len(),
                trees.len()
            )));
        }
    }
    if variant.needs_trees() && tree_lines.is_none() {
        return Err(Error::usage(format!("variant {} requires a tree file", variant)));
    }
    if variant.needs_labels() && label_vocab.is_none() {
        return Err(Error::usage(format!("variant {} requires a label vocabulary", variant)));
    }

    let mut out = Vec::new();
    for i in 0..src_lines.len() {
        let src_tokens = tokenize(&src_lines[i]);
        let tgt_tokens = tokenize(&tgt_lines[i]);
        if src_tokens.is_empty() || tgt_tokens.is_empty() {
            warn!("line {}: empty side, pair dropped", i + 1);
            continue;
        }
        if src_tokens.len() > limits.max_source_words {
            continue;
        }
        if tgt_tokens.len() > limits.max_target_words {
            continue;
        }

        let tree = match tree_lines {
            Some(trees) => match tree::parse_bracketed(&trees[i]) {
                Ok(t) => {
                    if t.words() != src_tokens {
                        warn!("line {}: tree leaves disagree with source tokens, pair dropped", i + 1);
                        continue;
                    }
                    Some(t)
                }
                Err(e) => {
                    warn!("line {}: unusable tree ({}), pair dropped", i + 1, e);
                    continue;
                }
            },
            None => None,
        };

        let mut pair = ExamplePair {
            line: i,
            src: with_eos(src_vocab.encode(&src_tokens)),
            tgt: with_eos(tgt_vocab.encode(&tgt_tokens)),
            labels: None,
            word_to_label: None,
            mixed: None,
            word_positions: None,
        };

        if variant.needs_labels() {
            let tree = tree.as_ref().expect("checked above");
            let lin = tree::linearize(tree, closing_brackets);
            if lin.labels.len() > limits.max_label_tokens {
                continue;
            }
            let lv = label_vocab.expect("checked above");
            pair.labels = Some(with_eos(lv.encode(&lin.labels)));
            pair.word_to_label = Some(lin.word_to_label);
        }

        if variant.needs_mixed() {
            let tree = tree.as_ref().expect("checked above");
            let mixed = tree::build_mixed(tree, closing_brackets);
            if mixed.tokens.len() > limits.max_mixed_tokens {
                continue;
            }
            pair.mixed = Some(with_eos(src_vocab.encode(&mixed.tokens)));
            pair.word_positions = Some(mixed.word_positions);
        }

        out.push(pair);
    }
    Ok(out)
}

fn with_eos(mut ids: Vec<usize>) -> Vec<usize> {
    ids.push(EOS);
    ids
}

/// Time-major padded batch. Each `*_steps[t]` holds `size` ids; masks hold
/// 1.0 on real tokens (EOS included) and 0.0 on padding.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub src_steps: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<f64>>,
    pub tgt_steps: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<f64>>,
    pub label_steps: Option<Vec<Vec<usize>>>,
    pub label_mask: Option<Vec<Vec<f64>>>,
    /// For source step t and sentence b: position of the matching label in
    /// the label sequence (POS tag for words, label EOS for source EOS,
    /// 0 for padding).
    pub label_pos: Option<Vec<Vec<usize>>>,
    pub mixed_steps: Option<Vec<Vec<usize>>>,
    pub mixed_mask: Option<Vec<Vec<f64>>>,
    /// For source step t and sentence b: position of the word within the
    /// mixed sequence (mixed EOS for source EOS, 0 for padding).
    pub mixed_pos: Option<Vec<Vec<usize>>>,
    /// Real target token count across the batch (for per-token loss).
    pub target_tokens: usize,
}

fn pad_steps(seqs: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut steps = Vec::with_capacity(max);
    let mut masks = Vec::with_capacity(max);
    for t in 0..max {
        let mut ids = Vec::with_capacity(seqs.len());
        let mut mask = Vec::with_capacity(seqs.len());
        for s in seqs {
            if t < s.len() {
                ids.push(s[t]);
                mask.push(1.0);
            } else {
                ids.push(PAD);
                mask.push(0.0);
            }
        }
        steps.push(ids);
        masks.push(mask);
    }
    (steps, masks)
}

/// Assemble one padded batch from examples of one variant.
pub fn make_batch(examples: &[&ExamplePair]) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::usage("make_batch: empty batch"));
    }
    let srcs: Vec<&[usize]> = examples.iter().map(|e| e.src.as_slice()).collect();
    let tgts: Vec<&[usize]> = examples.iter().map(|e| e.tgt.as_slice()).collect();
    let (src_steps, src_mask) = pad_steps(&srcs);
    let (tgt_steps, tgt_mask) = pad_steps(&tgts);
    let target_tokens = examples.iter().map(|e| e.tgt.len()).sum();

    let mut batch = Batch {
        size: examples.len(),
        src_steps,
        src_mask,
        tgt_steps,
        tgt_mask,
        label_steps: None,
        label_mask: None,
        label_pos: None,
        mixed_steps: None,
        mixed_mask: None,
        mixed_pos: None,
        target_tokens,
    };

    let src_max = batch.src_steps.len();
    if examples.iter().all(|e| e.labels.is_some()) {
        let labels: Vec<&[usize]> = examples
            .iter()
            .map(|e| e.labels.as_deref().expect("checked"))
            .collect();
        let (steps, mask) = pad_steps(&labels);
        let mut pos = vec![vec![0usize; examples.len()]; src_max];
        for (b, e) in examples.iter().enumerate() {
            let map = e.word_to_label.as_ref().expect("labels imply map");
            let label_eos = e.labels.as_ref().expect("checked").len() - 1;
            for (t, row) in pos.iter_mut().enumerate() {
                row[b] = match t.cmp(&map.len()) {
                    std::cmp::Ordering::Less => map[t],
                    std::cmp::Ordering::Equal => label_eos, // source EOS step
                    std::cmp::Ordering::Greater => 0,       // padding
                };
            }
        }
        batch.label_steps = Some(steps);
        batch.label_mask = Some(mask);
        batch.label_pos = Some(pos);
    }

    if examples.iter().all(|e| e.mixed.is_some()) {
        let mixed: Vec<&[usize]> = examples
            .iter()
            .map(|e| e.mixed.as_deref().expect("checked"))
            .collect();
        let (steps, mask) = pad_steps(&mixed);
        let mut pos = vec![vec![0usize; examples.len()]; src_max];
        for (b, e) in examples.iter().enumerate() {
            let wp = e.word_positions.as_ref().expect("mixed implies positions");
            let mixed_eos = e.mixed.as_ref().expect("checked").len() - 1;
            for (t, row) in pos.iter_mut().enumerate() {
                row[b] = match t.cmp(&wp.len()) {
                    std::cmp::Ordering::Less => wp[t],
                    std::cmp::Ordering::Equal => mixed_eos,
                    std::cmp::Ordering::Greater => 0,
                };
            }
        }
        batch.mixed_steps = Some(steps);
        batch.mixed_mask = Some(mask);
        batch.mixed_pos = Some(pos);
    }

    Ok(batch)
}

/// One epoch's batches: shuffle, sort chunks of 20 batches by source length
/// to limit padding, cut, then shuffle batch order. Every example appears
/// exactly once.
pub fn batches(
    examples: &[ExamplePair],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::usage("batch_size must be >= 1"));
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(rng);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for chunk in idx.chunks(batch_size * 20) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| examples[i].src.len());
        for g in chunk.chunks(batch_size) {
            groups.push(g.to_vec());
        }
    }
    groups.shuffle(rng);
    groups
        .iter()
        .map(|g| {
            let refs: Vec<&ExamplePair> = g.iter().map(|&i| &examples[i]).collect();
            make_batch(&refs)
        })
        .collect()
}

/// Batches in corpus order, no shuffling (evaluation passes).
pub fn batches_in_order(examples: &[ExamplePair], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::usage("batch_size must be >= 1"));
    }
    examples
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&ExamplePair> = chunk.iter().collect();
            make_batch(&refs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn sents(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    fn strings(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn vocab_keeps_most_frequent_with_unk_fallback() {
        let corpus = sents(&["a a a b b c"]);
        let (v, stats) = build_vocab(&corpus, RESERVED.len() + 2, &[]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("c"), UNK);
        assert_eq!(stats.total_tokens, 6);
        assert_eq!(stats.covered_tokens, 5);
    }

    #[test]
    fn vocab_ties_break_by_first_occurrence() {
        let corpus = sents(&["z q z q m"]);
        let (v, _) = build_vocab(&corpus, RESERVED.len() + 2, &[]).unwrap();
        // z and q both occur twice; z came first
        assert_eq!(v.id("z"), 3);
        assert_eq!(v.id("q"), 4);
        assert_eq!(v.id("m"), UNK);
    }

    #[test]
    fn vocab_limit_above_distinct_keeps_all() {
        let corpus = sents(&["a b", "c"]);
        let (v, stats) = build_vocab(&corpus, 1000, &[]).unwrap();
        assert_eq!(v.len(), RESERVED.len() + 3);
        assert!((stats.coverage() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_rejects_empty_corpus_and_tiny_limit() {
        assert!(build_vocab(&[], 100, &[]).is_err());
        assert!(build_vocab(&sents(&[""]), 100, &[]).is_err());
        assert!(build_vocab(&sents(&["a"]), 2, &[]).is_err());
    }

    #[test]
    fn vocab_reserves_extra_tokens_before_frequency_fill() {
        let corpus = sents(&["w1 w1 w1 w2 w2 w3"]);
        let extra = strings(&["NP", "VP"]);
        let (v, _) = build_vocab(&corpus, RESERVED.len() + 4, &extra).unwrap();
        assert_eq!(v.id("NP"), 3);
        assert_eq!(v.id("VP"), 4);
        assert_eq!(v.id("w1"), 5);
        assert_eq!(v.id("w2"), 6);
        // the label slots squeezed w3 out
        assert_eq!(v.id("w3"), UNK);
        assert_eq!(v.len(), RESERVED.len() + 4);
    }

    #[test]
    fn encode_decode_roundtrip_in_vocab() {
        let corpus = sents(&["the cat sat on the mat"]);
        let (v, _) = build_vocab(&corpus, 100, &[]).unwrap();
        let tokens = tokenize("the mat sat");
        let ids = v.encode(&tokens);
        assert_eq!(v.decode(&ids), tokens);
    }

    #[test]
    fn vocab_save_load_roundtrip() {
        let corpus = sents(&["a b c b a a"]);
        let (v, _) = build_vocab(&corpus, 100, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, v);
    }

    fn toy_vocabs() -> (Vocabulary, Vocabulary, Vocabulary) {
        let src = sents(&["le chat dort bien", "chat le"]);
        let tgt = sents(&["the cat sleeps well", "cat the"]);
        let labels = sents(&["S NP VP NN DT VB RB"]);
        let (sv, _) = build_vocab(&src, 100, &[]).unwrap();
        let (tv, _) = build_vocab(&tgt, 100, &[]).unwrap();
        let (lv, _) = build_vocab(&labels, 100, &[]).unwrap();
        (sv, tv, lv)
    }

    #[test]
    fn make_examples_appends_eos_and_fills_variant_fields() {
        let (sv, tv, lv) = toy_vocabs();
        let src = strings(&["le chat dort"]);
        let trees = strings(&["(S (NP (DT le) (NN chat)) (VP (VB dort)))"]);
        let tgt = strings(&["the cat sleeps"]);

        let pairs = make_examples(
            &src, Some(&trees), &tgt, &sv, &tv, Some(&lv),
            Variant::Parallel, &Limits::default(), false,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        let p = &pairs[0];
        assert_eq!(*p.src.last().unwrap(), EOS);
        assert_eq!(*p.tgt.last().unwrap(), EOS);
        let labels = p.labels.as_ref().unwrap();
        // S NP DT NN VP VB + EOS
        assert_eq!(labels.len(), 7);
        assert_eq!(*labels.last().unwrap(), EOS);
        assert_eq!(p.word_to_label.as_ref().unwrap(), &vec![2, 3, 5]);
        assert!(p.mixed.is_none());

        let pairs = make_examples(
            &src, Some(&trees), &tgt, &sv, &tv, None,
            Variant::Mixed, &Limits::default(), false,
        )
        .unwrap();
        let p = &pairs[0];
        let mixed = p.mixed.as_ref().unwrap();
        // S NP DT le NN chat VP VB dort + EOS
        assert_eq!(mixed.len(), 10);
        assert_eq!(*mixed.last().unwrap(), EOS);
        assert_eq!(p.word_positions.as_ref().unwrap(), &vec![3, 5, 8]);
        // labels are not in this source vocab, so they map to UNK
        assert_eq!(mixed[0], UNK);
        assert!(p.labels.is_none());
    }

    #[test]
    fn make_examples_drops_overlong_and_empty_pairs() {
        let (sv, tv, _) = toy_vocabs();
        let long_src = vec!["le ".repeat(60).trim().to_string(), "le chat".into()];
        let tgt = strings(&["the", "the cat"]);
        let pairs = make_examples(
            &long_src, None, &tgt, &sv, &tv, None,
            Variant::Baseline, &Limits::default(), false,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].line, 1);

        let src = strings(&["", "le"]);
        let tgt = strings(&["the", "the"]);
        let pairs = make_examples(
            &src, None, &tgt, &sv, &tv, None,
            Variant::Baseline, &Limits::default(), false,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn make_examples_skips_bad_trees_and_leaf_mismatches() {
        let (sv, tv, lv) = toy_vocabs();
        let src = strings(&["le chat", "le chat", "le chat"]);
        let trees = strings(&[
            "(NP (DT le) (NN chat))",
            "(NP (DT le) (NN chien))", // leaves disagree
            "(NP (DT le",              // malformed
        ]);
        let tgt = strings(&["the cat", "the cat", "the cat"]);
        let pairs = make_examples(
            &src, Some(&trees), &tgt, &sv, &tv, Some(&lv),
            Variant::Hierarchical, &Limits::default(), false,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].line, 0);
    }

    #[test]
    fn make_examples_rejects_misaligned_files() {
        let (sv, tv, _) = toy_vocabs();
        let src = strings(&["le chat", "le"]);
        let tgt = strings(&["the cat"]);
        let err = make_examples(
            &src, None, &tgt, &sv, &tv, None,
            Variant::Baseline, &Limits::default(), false,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'), "{}", msg);
    }

    #[test]
    fn make_examples_enforces_label_limit() {
        let (sv, tv, lv) = toy_vocabs();
        let src = strings(&["le"]);
        let trees = strings(&["(S (NP (VP (NP (VP (DT le))))))"]); // 6 labels
        let tgt = strings(&["the"]);
        let tight = Limits { max_label_tokens: 5, ..Limits::default() };
        let pairs = make_examples(
            &src, Some(&trees), &tgt, &sv, &tv, Some(&lv),
            Variant::Parallel, &tight, false,
        )
        .unwrap();
        assert!(pairs.is_empty());
    }

    fn dummy_examples(n: usize) -> Vec<ExamplePair> {
        (0..n)
            .map(|i| ExamplePair {
                line: i,
                src: vec![3 + (i % 3), 4, EOS],
                tgt: vec![3, EOS],
                labels: None,
                word_to_label: None,
                mixed: None,
                word_positions: None,
            })
            .collect()
    }

    #[test]
    fn batches_cover_every_example_once_with_expected_sizes() {
        let examples = dummy_examples(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bs = batches(&examples, 2, &mut rng).unwrap();
        let mut sizes: Vec<usize> = bs.iter().map(|b| b.size).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2]);
        let total: usize = bs.iter().map(|b| b.size).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn batches_are_deterministic_for_a_seed() {
        let examples = dummy_examples(23);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            batches(&examples, 4, &mut rng)
                .unwrap()
                .iter()
                .map(|b| b.src_steps.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn batch_padding_and_masks() {
        let a = ExamplePair {
            line: 0,
            src: vec![3, 4, 5, EOS],
            tgt: vec![3, EOS],
            labels: Some(vec![3, 4, 5, 6, EOS]),
            word_to_label: Some(vec![1, 2, 3]),
            mixed: None,
            word_positions: None,
        };
        let b = ExamplePair {
            line: 1,
            src: vec![6, EOS],
            tgt: vec![4, 5, EOS],
            labels: Some(vec![3, 4, EOS]),
            word_to_label: Some(vec![1]),
            mixed: None,
            word_positions: None,
        };
        let batch = make_batch(&[&a, &b]).unwrap();
        assert_eq!(batch.size, 2);
        assert_eq!(batch.src_steps.len(), 4);
        assert_eq!(batch.src_steps[1], vec![4, EOS]);
        assert_eq!(batch.src_steps[2], vec![5, PAD]);
        assert_eq!(batch.src_mask[1], vec![1.0, 1.0]);
        assert_eq!(batch.src_mask[2], vec![1.0, 0.0]);
        assert_eq!(batch.target_tokens, 5);

        let pos = batch.label_pos.as_ref().unwrap();
        // sentence a: words at label positions 1,2,3 then EOS at 4
        // sentence b: word at 1, EOS at 2, then padding -> 0
        assert_eq!(pos[0], vec![1, 1]);
        assert_eq!(pos[1], vec![2, 2]); // b's source EOS maps to its label EOS
        assert_eq!(pos[2], vec![3, 0]);
        assert_eq!(pos[3], vec![4, 0]);
    }
}
