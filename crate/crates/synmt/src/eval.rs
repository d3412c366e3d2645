//! Corpus metrics and diagnostic analyses: BLEU (overall and by length
//! bucket), alignment error rate, phrase continuity, ratio of over
//! translation, and rare-word translation rates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::PhraseSpan;

/// Gold word alignments: sure links S and possible links P, with S ⊆ P.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub sure: BTreeSet<(usize, usize)>,
    pub possible: BTreeSet<(usize, usize)>,
}

fn parse_link(tok: &str, sep: char, lineno: usize) -> Result<(usize, usize)> {
    let (i, j) = tok.split_once(sep).expect("caller checked separator");
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| {
            Error::data(format!("line {}: bad alignment link '{}'", lineno, tok))
        })
    };
    Ok((parse(i)?, parse(j)?))
}

/// Parse gold alignments, one sentence per line: `i-j` marks a sure link
/// (also possible), `i?j` a possible-only link, 0-based.
pub fn parse_gold(text: &str) -> Result<Vec<GoldAlignment>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let mut gold = GoldAlignment::default();
        for tok in line.split_whitespace() {
            if tok.contains('-') {
                let link = parse_link(tok, '-', lineno)?;
                gold.sure.insert(link);
                gold.possible.insert(link);
            } else if tok.contains('?') {
                gold.possible.insert(parse_link(tok, '?', lineno)?);
            } else {
                return Err(Error::data(format!(
                    "line {}: alignment link '{}' is neither i-j nor i?j",
                    lineno, tok
                )));
            }
        }
        out.push(gold);
    }
    Ok(out)
}

/// Parse Pharaoh-format system alignments (`i-j` links only).
pub fn parse_pharaoh(text: &str) -> Result<Vec<Vec<(usize, usize)>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let mut links = Vec::new();
        for tok in line.split_whitespace() {
            if !tok.contains('-') {
                return Err(Error::data(format!(
                    "line {}: expected i-j link, found '{}'",
                    lineno, tok
                )));
            }
            links.push(parse_link(tok, '-', lineno)?);
        }
        out.push(links);
    }
    Ok(out)
}

/// Render links as one Pharaoh line.
pub fn format_pharaoh(links: &[(usize, usize)]) -> String {
    links
        .iter()
        .map(|(i, j)| format!("{}-{}", i, j))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Corpus BLEU with per-order match counts (kept so bucketed scores can be
/// checked against the corpus totals).
#[derive(Debug, Clone, Serialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// (clipped matches, hypothesis n-gram count) per order 1..=max_n.
    pub counts: Vec<(usize, usize)>,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

fn lowercased(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Corpus-level BLEU: clipped modified n-gram precision, geometric mean
/// over orders 1..=max_n, brevity penalty against the closest reference
/// length (ties to the shorter reference). No smoothing: any zero precision
/// zeroes the score.
pub fn bleu(
    hypotheses: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    max_n: usize,
    case_insensitive: bool,
) -> Result<BleuScore> {
    if hypotheses.is_empty() {
        return Err(Error::data("BLEU needs at least one hypothesis"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::data(format!(
            "BLEU: {} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::usage("BLEU max_n must be at least 1"));
    }

    let mut counts = vec![(0usize, 0usize); max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::data("BLEU: a sentence has no references"));
        }
        let hyp = if case_insensitive { lowercased(hyp) } else { hyp.clone() };
        let refs: Vec<Vec<String>> = refs
            .iter()
            .map(|r| if case_insensitive { lowercased(r) } else { r.clone() })
            .collect();

        hyp_len += hyp.len();
        let mut best = (usize::MAX, usize::MAX); // (distance, length)
        for r in &refs {
            let dist = r.len().abs_diff(hyp.len());
            if dist < best.0 || (dist == best.0 && r.len() < best.1) {
                best = (dist, r.len());
            }
        }
        ref_len += best.1;

        for (n, slot) in counts.iter_mut().enumerate() {
            let order = n + 1;
            let hyp_grams = ngram_counts(&hyp, order);
            let mut clip: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (gram, c) in ngram_counts(r, order) {
                    let e = clip.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (gram, c) in &hyp_grams {
                slot.0 += (*c).min(clip.get(gram).copied().unwrap_or(0));
                slot.1 += c;
            }
        }
    }

    let precisions: Vec<f64> = counts
        .iter()
        .map(|&(m, t)| if t > 0 { m as f64 / t as f64 } else { 0.0 })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore { score, precisions, brevity_penalty, hyp_len, ref_len, counts })
}

/// BLEU over one source-length bucket.
#[derive(Debug, Clone, Serialize)]
pub struct BucketScore {
    pub label: String,
    pub sentences: usize,
    pub bleu: BleuScore,
}

/// BLEU per source-length bucket; edges are inclusive upper bounds plus a
/// final open bucket. Empty buckets are omitted.
pub fn bleu_by_length(
    source_lengths: &[usize],
    hypotheses: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    edges: &[usize],
    case_insensitive: bool,
) -> Result<Vec<BucketScore>> {
    if source_lengths.len() != hypotheses.len() {
        return Err(Error::data(format!(
            "length buckets: {} source lengths but {} hypotheses",
            source_lengths.len(),
            hypotheses.len()
        )));
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::usage("bucket edges must be non-empty and strictly increasing"));
    }

    let label = |b: usize| {
        if b == edges.len() {
            format!(">{}", edges[edges.len() - 1])
        } else {
            let lo = if b == 0 { 1 } else { edges[b - 1] + 1 };
            format!("{}-{}", lo, edges[b])
        }
    };
    let mut groups: BTreeMap<usize, (Vec<Vec<String>>, Vec<Vec<Vec<String>>>)> = BTreeMap::new();
    for ((len, hyp), refs) in source_lengths.iter().zip(hypotheses).zip(references) {
        let bucket = edges.iter().position(|e| len <= e).unwrap_or(edges.len());
        let slot = groups.entry(bucket).or_default();
        slot.0.push(hyp.clone());
        slot.1.push(refs.clone());
    }
    groups
        .into_iter()
        .map(|(b, (hyps, refs))| {
            Ok(BucketScore {
                label: label(b),
                sentences: hyps.len(),
                bleu: bleu(&hyps, &refs, 4, case_insensitive)?,
            })
        })
        .collect()
}

/// Corpus alignment error rate: numerators and denominators are summed over
/// all sentences before dividing. An empty corpus (no hypothesis links and
/// no sure links anywhere) is defined as 0 with a warning.
pub fn aer(hypothesis: &[Vec<(usize, usize)>], gold: &[GoldAlignment]) -> Result<f64> {
    if hypothesis.len() != gold.len() {
        return Err(Error::data(format!(
            "AER: {} hypothesis sentences but {} gold sentences",
            hypothesis.len(),
            gold.len()
        )));
    }
    let mut num = 0usize;
    let mut den = 0usize;
    for (links, g) in hypothesis.iter().zip(gold) {
        let a: BTreeSet<(usize, usize)> = links.iter().copied().collect();
        num += a.intersection(&g.sure).count() + a.intersection(&g.possible).count();
        den += a.len() + g.sure.len();
    }
    if den == 0 {
        warn!("AER: no hypothesis or sure links anywhere; reporting 0");
        return Ok(0.0);
    }
    Ok(1.0 - num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpanOutcome {
    Continuous,
    Discontinuous,
    Unaligned,
}

/// Classify one source span (inclusive word range): the target indices
/// linked to any source word in the span either form an unbroken integer
/// interval (Cont.), a gapped set (Dis.), or are empty (Un.).
pub fn classify_span(span: &PhraseSpan, alignment: &[(usize, usize)]) -> SpanOutcome {
    let targets: BTreeSet<usize> = alignment
        .iter()
        .filter(|(i, _)| span.start <= *i && *i <= span.end)
        .map(|(_, j)| *j)
        .collect();
    match (targets.first(), targets.last()) {
        (None, _) => SpanOutcome::Unaligned,
        (Some(&lo), Some(&hi)) if hi - lo + 1 == targets.len() => SpanOutcome::Continuous,
        _ => SpanOutcome::Discontinuous,
    }
}

/// Continuity counts for one phrase category (or the ALL row).
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub category: String,
    pub continuous: usize,
    pub discontinuous: usize,
    pub unaligned: usize,
    pub continuous_pct: f64,
    pub discontinuous_pct: f64,
    pub unaligned_pct: f64,
}

impl ContinuityRow {
    fn new(category: String, cont: usize, dis: usize, un: usize) -> ContinuityRow {
        let total = (cont + dis + un).max(1) as f64;
        ContinuityRow {
            category,
            continuous: cont,
            discontinuous: dis,
            unaligned: un,
            continuous_pct: 100.0 * cont as f64 / total,
            discontinuous_pct: 100.0 * dis as f64 / total,
            unaligned_pct: 100.0 * un as f64 / total,
        }
    }
}

/// Per-category continuity over the corpus, with an ALL row last.
pub fn phrase_continuity(
    spans: &[Vec<PhraseSpan>],
    alignments: &[Vec<(usize, usize)>],
) -> Result<Vec<ContinuityRow>> {
    if spans.len() != alignments.len() {
        return Err(Error::data(format!(
            "continuity: {} span sentences but {} alignment sentences",
            spans.len(),
            alignments.len()
        )));
    }
    let mut per: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut all = [0usize; 3];
    for (sent_spans, alignment) in spans.iter().zip(alignments) {
        for span in sent_spans {
            let k = match classify_span(span, alignment) {
                SpanOutcome::Continuous => 0,
                SpanOutcome::Discontinuous => 1,
                SpanOutcome::Unaligned => 2,
            };
            per.entry(span.category.clone()).or_default()[k] += 1;
            all[k] += 1;
        }
    }
    let mut rows: Vec<ContinuityRow> = per
        .into_iter()
        .map(|(cat, c)| ContinuityRow::new(cat, c[0], c[1], c[2]))
        .collect();
    rows.push(ContinuityRow::new("ALL".to_string(), all[0], all[1], all[2]));
    Ok(rows)
}

/// Over-translation counts for one POS group (or the ALL row):
/// t(w) = |e| − |uniq(e)| over the target tokens aligned to w, and
/// ROT = Σ t(w) / |w| over the group's words.
#[derive(Debug, Clone, Serialize)]
pub struct RotRow {
    pub group: String,
    pub words: usize,
    pub over_translations: usize,
    pub rot: f64,
}

/// ROT per POS group plus an ALL row over every source word. Words whose
/// tag is in no group still count toward ALL.
pub fn rot(
    pos_tags: &[Vec<String>],
    alignments: &[Vec<(usize, usize)>],
    targets: &[Vec<String>],
    groups: &[(String, Vec<String>)],
) -> Result<Vec<RotRow>> {
    if pos_tags.len() != alignments.len() || pos_tags.len() != targets.len() {
        return Err(Error::data(format!(
            "ROT: {} tag sentences, {} alignment sentences, {} target sentences",
            pos_tags.len(),
            alignments.len(),
            targets.len()
        )));
    }
    let mut acc: BTreeMap<&str, (usize, usize)> = BTreeMap::new(); // (words, sum t)
    for (name, _) in groups {
        acc.insert(name.as_str(), (0, 0));
    }
    let mut all = (0usize, 0usize);
    for ((tags, alignment), target) in pos_tags.iter().zip(alignments).zip(targets) {
        for (i, tag) in tags.iter().enumerate() {
            // target positions aligned to word i, in target order
            let mut js: Vec<usize> = alignment
                .iter()
                .filter(|(s, _)| *s == i)
                .map(|(_, j)| *j)
                .collect();
            js.sort_unstable();
            js.dedup();
            let e: Vec<&str> = js
                .iter()
                .map(|&j| {
                    target.get(j).map(String::as_str).ok_or_else(|| {
                        Error::data(format!("ROT: alignment target index {} out of range", j))
                    })
                })
                .collect::<Result<_>>()?;
            let uniq: BTreeSet<&str> = e.iter().copied().collect();
            let t = e.len() - uniq.len();
            all.0 += 1;
            all.1 += t;
            for (name, tags_in_group) in groups {
                if tags_in_group.iter().any(|g| g == tag) {
                    let slot = acc.get_mut(name.as_str()).expect("group preset");
                    slot.0 += 1;
                    slot.1 += t;
                }
            }
        }
    }
    let row = |group: &str, (words, over): (usize, usize)| RotRow {
        group: group.to_string(),
        words,
        over_translations: over,
        rot: if words > 0 { over as f64 / words as f64 } else { 0.0 },
    };
    let mut rows: Vec<RotRow> = groups
        .iter()
        .map(|(name, _)| row(name, acc[name.as_str()]))
        .collect();
    rows.push(row("ALL", all));
    Ok(rows)
}

/// Rare-word translation counts for one POS group (or the ALL row).
#[derive(Debug, Clone, Serialize)]
pub struct RareWordRow {
    pub group: String,
    pub rare_words: usize,
    pub non_unk: usize,
    pub unk: usize,
    pub unaligned: usize,
    pub non_unk_pct: f64,
    pub unk_pct: f64,
    pub unaligned_pct: f64,
}

impl RareWordRow {
    fn new(group: String, non_unk: usize, unk: usize, un: usize) -> RareWordRow {
        let total = non_unk + unk + un;
        let denom = total.max(1) as f64;
        RareWordRow {
            group,
            rare_words: total,
            non_unk,
            unk,
            unaligned: un,
            non_unk_pct: 100.0 * non_unk as f64 / denom,
            unk_pct: 100.0 * unk as f64 / denom,
            unaligned_pct: 100.0 * un as f64 / denom,
        }
    }
}

/// How source rare words (UNK under the source vocabulary) come out in the
/// system output: translated to any non-UNK token, only to UNK, or left
/// unaligned. Per POS group plus an ALL row.
pub fn rare_word_report(
    src_is_unk: &[Vec<bool>],
    tgt_is_unk: &[Vec<bool>],
    pos_tags: &[Vec<String>],
    alignments: &[Vec<(usize, usize)>],
    groups: &[(String, Vec<String>)],
) -> Result<Vec<RareWordRow>> {
    let n = src_is_unk.len();
    if tgt_is_unk.len() != n || pos_tags.len() != n || alignments.len() != n {
        return Err(Error::data("rare words: per-sentence inputs are misaligned".to_string()));
    }
    let mut acc: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (name, _) in groups {
        acc.insert(name.as_str(), [0; 3]);
    }
    let mut all = [0usize; 3];
    for (((src, tgt), tags), alignment) in
        src_is_unk.iter().zip(tgt_is_unk).zip(pos_tags).zip(alignments)
    {
        for (i, &is_rare) in src.iter().enumerate() {
            if !is_rare {
                continue;
            }
            let mut any = false;
            let mut any_non_unk = false;
            for (s, j) in alignment {
                if *s != i {
                    continue;
                }
                let unk = *tgt.get(*j).ok_or_else(|| {
                    Error::data(format!("rare words: alignment target index {} out of range", j))
                })?;
                any = true;
                if !unk {
                    any_non_unk = true;
                }
            }
            let k = if !any {
                2
            } else if any_non_unk {
                0
            } else {
                1
            };
            all[k] += 1;
            let tag = &tags[i];
            for (name, tags_in_group) in groups {
                if tags_in_group.iter().any(|g| g == tag) {
                    acc.get_mut(name.as_str()).expect("group preset")[k] += 1;
                }
            }
        }
    }
    let mut rows: Vec<RareWordRow> = groups
        .iter()
        .map(|(name, _)| {
            let c = acc[name.as_str()];
            RareWordRow::new(name.clone(), c[0], c[1], c[2])
        })
        .collect();
    rows.push(RareWordRow::new("ALL".to_string(), all[0], all[1], all[2]));
    Ok(rows)
}

/// Everything the analyze command reports.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport {
    pub bleu: BleuScore,
    pub bleu_by_length: Vec<BucketScore>,
    pub aer: Option<f64>,
    pub continuity: Vec<ContinuityRow>,
    pub rot: Vec<RotRow>,
    pub rare_words: Vec<RareWordRow>,
}

impl DiagnosticReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable table block.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "BLEU: {:.4}  (BP {:.4}, lengths {}/{})\n",
            self.bleu.score, self.bleu.brevity_penalty, self.bleu.hyp_len, self.bleu.ref_len
        ));
        if !self.bleu_by_length.is_empty() {
            out.push_str("BLEU by source length:\n");
            for b in &self.bleu_by_length {
                out.push_str(&format!(
                    "  {:>6}  {:.4}  ({} sentences)\n",
                    b.label, b.bleu.score, b.sentences
                ));
            }
        }
        if let Some(a) = self.aer {
            out.push_str(&format!("AER: {:.4}\n", a));
        }
        if !self.continuity.is_empty() {
            out.push_str("Phrase continuity (Cont. / Dis. / Un. %):\n");
            for r in &self.continuity {
                out.push_str(&format!(
                    "  {:>6}  {:5.1} / {:5.1} / {:5.1}  ({} spans)\n",
                    r.category,
                    r.continuous_pct,
                    r.discontinuous_pct,
                    r.unaligned_pct,
                    r.continuous + r.discontinuous + r.unaligned
                ));
            }
        }
        if !self.rot.is_empty() {
            out.push_str("Ratio of over translation:\n");
            for r in &self.rot {
                out.push_str(&format!(
                    "  {:>6}  {:.4}  ({} words, {} over-translations)\n",
                    r.group, r.rot, r.words, r.over_translations
                ));
            }
        }
        if !self.rare_words.is_empty() {
            out.push_str("Rare words (non-UNK / UNK / Un. %):\n");
            for r in &self.rare_words {
                out.push_str(&format!(
                    "  {:>6}  {:5.1} / {:5.1} / {:5.1}  ({} rare words)\n",
                    r.group, r.non_unk_pct, r.unk_pct, r.unaligned_pct, r.rare_words
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let hyp = vec![toks("the cat sat on the mat")];
        let refs = vec![vec![toks("the cat sat on the mat")]];
        let s = bleu(&hyp, &refs, 4, true).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);

        let refs = vec![vec![toks("dogs bark loudly at night always")]];
        let s = bleu(&hyp, &refs, 4, true).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn bleu_matches_hand_computation() {
        let hyp = vec![toks("the cat sat on the mat")];
        let refs = vec![vec![toks("the cat sat on a mat")]];
        let s = bleu(&hyp, &refs, 4, true).unwrap();
        let want = (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
        assert!((s.score - want).abs() < 1e-12, "{} vs {}", s.score, want);
        assert_eq!(s.counts, vec![(5, 6), (3, 5), (2, 4), (1, 3)]);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_is_case_insensitive_by_default_flag() {
        let hyp = vec![toks("The CAT sat on the mat")];
        let refs = vec![vec![toks("the cat sat on the mat")]];
        assert!((bleu(&hyp, &refs, 4, true).unwrap().score - 1.0).abs() < 1e-12);
        assert!(bleu(&hyp, &refs, 4, false).unwrap().score < 1.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference_preferring_shorter() {
        // hyp length 4; references of lengths 3 and 5 tie on distance, the
        // shorter wins, so no penalty applies
        let hyp = vec![toks("a b c d")];
        let refs = vec![vec![toks("a b c"), toks("a b c d e")]];
        let s = bleu(&hyp, &refs, 1, true).unwrap();
        assert_eq!(s.ref_len, 3);
        assert_eq!(s.brevity_penalty, 1.0);

        // a single longer reference does penalize
        let refs = vec![vec![toks("a b c d e")]];
        let s = bleu(&hyp, &refs, 1, true).unwrap();
        assert!((s.brevity_penalty - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        let hyp = vec![toks("the the the the")];
        let refs = vec![vec![toks("the cat")]];
        let s = bleu(&hyp, &refs, 1, true).unwrap();
        assert_eq!(s.counts[0], (1, 4));
    }

    #[test]
    fn bleu_rejects_empty_and_misaligned_corpora() {
        assert!(bleu(&[], &[], 4, true).is_err());
        let hyp = vec![toks("a")];
        assert!(bleu(&hyp, &[], 4, true).is_err());
        let refs = vec![vec![]];
        assert!(bleu(&hyp, &refs, 4, true).is_err());
    }

    #[test]
    fn bleu_permutation_invariant_and_reference_removal_monotone() {
        let hyps = vec![toks("the cat sat"), toks("a dog ran away"), toks("birds fly")];
        let refs = vec![
            vec![toks("the cat sat down"), toks("the cat was seated")],
            vec![toks("a dog ran away"), toks("the dog fled")],
            vec![toks("birds fly high"), toks("the birds fly")],
        ];
        let full = bleu(&hyps, &refs, 2, true).unwrap().score;

        let perm = [2usize, 0, 1];
        let hyps2: Vec<_> = perm.iter().map(|&i| hyps[i].clone()).collect();
        let refs2: Vec<_> = perm.iter().map(|&i| refs[i].clone()).collect();
        let shuffled = bleu(&hyps2, &refs2, 2, true).unwrap().score;
        assert!((full - shuffled).abs() < 1e-12);

        let fewer: Vec<_> = refs.iter().map(|r| vec![r[0].clone()]).collect();
        let reduced = bleu(&hyps, &fewer, 2, true).unwrap().score;
        assert!(reduced <= full + 1e-12);
    }

    #[test]
    fn length_buckets_split_and_recompose_counts() {
        let srcs = [3usize, 12, 8, 30];
        let hyps = vec![toks("a b c"), toks("d e f g"), toks("h i"), toks("j k l m n")];
        let refs: Vec<Vec<Vec<String>>> = hyps.iter().map(|h| vec![h.clone()]).collect();

        // one huge bucket equals corpus BLEU
        let one = bleu_by_length(&srcs, &hyps, &refs, &[100], true).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].label, "1-100");
        let corpus = bleu(&hyps, &refs, 4, true).unwrap();
        assert!((one[0].bleu.score - corpus.score).abs() < 1e-12);

        // split buckets recompose the corpus match counts
        let split = bleu_by_length(&srcs, &hyps, &refs, &[10], true).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split[0].label, "1-10");
        assert_eq!(split[1].label, ">10");
        for n in 0..4 {
            let matches: usize = split.iter().map(|b| b.bleu.counts[n].0).sum();
            let totals: usize = split.iter().map(|b| b.bleu.counts[n].1).sum();
            assert_eq!((matches, totals), corpus.counts[n]);
        }

        // empty middle bucket is absent
        let sparse = bleu_by_length(&srcs, &hyps, &refs, &[15, 20, 25], true).unwrap();
        let labels: Vec<&str> = sparse.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, vec!["1-15", ">25"]);

        assert!(bleu_by_length(&srcs, &hyps, &refs, &[], true).is_err());
        assert!(bleu_by_length(&srcs, &hyps, &refs, &[10, 10], true).is_err());
    }

    #[test]
    fn aer_matches_hand_cases() {
        // A == S == P -> 0
        let gold = GoldAlignment {
            sure: [(0, 0), (1, 1)].into_iter().collect(),
            possible: [(0, 0), (1, 1)].into_iter().collect(),
        };
        assert_eq!(aer(&[vec![(0, 0), (1, 1)]], &[gold]).unwrap(), 0.0);

        // spec-style hand case: 1 - (1+1)/(2+1) = 1/3
        let gold = GoldAlignment {
            sure: [(1, 1)].into_iter().collect(),
            possible: [(1, 1), (2, 2)].into_iter().collect(),
        };
        let got = aer(&[vec![(1, 1), (2, 3)]], &[gold]).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);

        // disjoint from both -> 1
        let gold = GoldAlignment {
            sure: [(0, 0)].into_iter().collect(),
            possible: [(0, 0)].into_iter().collect(),
        };
        assert_eq!(aer(&[vec![(5, 5)]], &[gold]).unwrap(), 1.0);

        // empty everything -> 0 (warned)
        assert_eq!(aer(&[vec![]], &[GoldAlignment::default()]).unwrap(), 0.0);
    }

    #[test]
    fn aer_sums_over_corpus_before_dividing() {
        let g1 = GoldAlignment {
            sure: [(0, 0)].into_iter().collect(),
            possible: [(0, 0)].into_iter().collect(),
        };
        let g2 = GoldAlignment {
            sure: [(0, 0), (1, 1)].into_iter().collect(),
            possible: [(0, 0), (1, 1)].into_iter().collect(),
        };
        // sentence 1: hit; sentence 2: one hit one miss
        let hyp = vec![vec![(0, 0)], vec![(0, 0), (3, 3)]];
        // num = (1+1) + (1+1) = 4, den = (1+1) + (2+2) = 6
        let got = aer(&hyp, &[g1, g2]).unwrap();
        assert!((got - (1.0 - 4.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn gold_parsing_reads_sure_and_possible() {
        let parsed = parse_gold("0-0 1?2\n\n3-4").unwrap();
        assert_eq!(parsed.len(), 3);
        assert!(parsed[0].sure.contains(&(0, 0)));
        assert!(parsed[0].possible.contains(&(0, 0)));
        assert!(!parsed[0].sure.contains(&(1, 2)));
        assert!(parsed[0].possible.contains(&(1, 2)));
        assert!(parsed[1].sure.is_empty() && parsed[1].possible.is_empty());
        assert!(parsed[2].sure.contains(&(3, 4)));

        assert!(parse_gold("0-0 junk").is_err());
        assert!(parse_gold("0-x").is_err());
        let err = parse_gold("ok-line\n0~1").unwrap_err().to_string();
        assert!(err.contains("line 1") || err.contains("line 2"), "{}", err);
    }

    #[test]
    fn pharaoh_roundtrip() {
        let links = vec![(0, 1), (2, 0)];
        let line = format_pharaoh(&links);
        assert_eq!(line, "0-1 2-0");
        assert_eq!(parse_pharaoh(&line).unwrap(), vec![links]);
        assert!(parse_pharaoh("0?1").is_err());
    }

    #[test]
    fn span_classification_follows_interval_rule() {
        let span = PhraseSpan { category: "NP".to_string(), start: 1, end: 3 };
        // {5, 6} contiguous
        let a = vec![(1, 5), (2, 6)];
        assert_eq!(classify_span(&span, &a), SpanOutcome::Continuous);
        // {5, 7} gapped
        let a = vec![(1, 5), (2, 7)];
        assert_eq!(classify_span(&span, &a), SpanOutcome::Discontinuous);
        // no links touch words 1..=3
        let a = vec![(0, 0), (4, 2)];
        assert_eq!(classify_span(&span, &a), SpanOutcome::Unaligned);
        // duplicate targets collapse before the interval check
        let a = vec![(1, 5), (1, 6), (2, 6)];
        assert_eq!(classify_span(&span, &a), SpanOutcome::Continuous);
    }

    #[test]
    fn continuity_rows_sum_to_hundred() {
        let spans = vec![vec![
            PhraseSpan { category: "NP".into(), start: 0, end: 2 },
            PhraseSpan { category: "VP".into(), start: 2, end: 4 },
            PhraseSpan { category: "NP".into(), start: 3, end: 4 },
        ]];
        let alignments = vec![vec![(0, 0), (1, 2), (2, 3), (3, 4)]];
        let rows = phrase_continuity(&spans, &alignments).unwrap();
        assert_eq!(rows.last().unwrap().category, "ALL");
        for r in &rows {
            let sum = r.continuous_pct + r.discontinuous_pct + r.unaligned_pct;
            assert!((sum - 100.0).abs() < 0.1, "{}: {}", r.category, sum);
        }
        let all = rows.last().unwrap();
        assert_eq!(all.continuous + all.discontinuous + all.unaligned, 3);
    }

    #[test]
    fn rot_matches_paper_example_and_bijections_are_zero() {
        // one source word aligned to "hong kong hong kong"
        let tags = vec![vec!["NR".to_string()]];
        let aligns = vec![vec![(0, 0), (0, 1), (0, 2), (0, 3)]];
        let tgts = vec![toks("hong kong hong kong")];
        let groups = vec![("NR".to_string(), vec!["NR".to_string()])];
        let rows = rot(&tags, &aligns, &tgts, &groups).unwrap();
        assert_eq!(rows[0].over_translations, 2);
        assert!((rows[0].rot - 2.0).abs() < 1e-12);
        assert_eq!(rows.last().unwrap().group, "ALL");
        assert!((rows.last().unwrap().rot - 2.0).abs() < 1e-12);

        // bijective alignment: ROT 0
        let tags = vec![vec!["NN".to_string(), "VV".to_string()]];
        let aligns = vec![vec![(0, 1), (1, 0)]];
        let tgts = vec![toks("ran dog")];
        let rows = rot(&tags, &aligns, &tgts, &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].group, "ALL");
        assert_eq!(rows[0].rot, 0.0);
    }

    #[test]
    fn rare_word_rules() {
        // one sentence, three rare words: aligned to non-UNK, only UNK, none
        let src_unk = vec![vec![true, true, true, false]];
        let tgt_unk = vec![vec![false, true]];
        let tags = vec![vec!["NR".into(), "CD".into(), "NN".into(), "VV".into()]];
        let aligns = vec![vec![(0, 0), (0, 1), (1, 1)]];
        let groups = vec![
            ("NR".to_string(), vec!["NR".to_string()]),
            ("CD".to_string(), vec!["CD".to_string()]),
        ];
        let rows = rare_word_report(&src_unk, &tgt_unk, &tags, &aligns, &groups).unwrap();
        let by_group: BTreeMap<&str, &RareWordRow> =
            rows.iter().map(|r| (r.group.as_str(), r)).collect();
        assert_eq!(by_group["NR"].non_unk, 1); // mixed UNK + non-UNK counts as non-UNK
        assert_eq!(by_group["CD"].unk, 1);
        let all = by_group["ALL"];
        assert_eq!((all.non_unk, all.unk, all.unaligned), (1, 1, 1));
        let sum = all.non_unk_pct + all.unk_pct + all.unaligned_pct;
        assert!((sum - 100.0).abs() < 0.1);
    }

    #[test]
    fn report_serializes_and_renders() {
        let hyp = vec![toks("the cat sat")];
        let refs = vec![vec![toks("the cat sat")]];
        let b = bleu(&hyp, &refs, 4, true).unwrap();
        let report = DiagnosticReport {
            bleu: b,
            bleu_by_length: bleu_by_length(&[3], &hyp, &refs, &[10], true).unwrap(),
            aer: Some(0.25),
            continuity: phrase_continuity(&[], &[]).unwrap(),
            rot: rot(&[], &[], &[], &[]).unwrap(),
            rare_words: rare_word_report(&[], &[], &[], &[], &[]).unwrap(),
        };
        let json = report.to_json().unwrap();
        assert!(json.contains("\"bleu\""));
        assert!(json.contains("\"aer\""));
        let table = report.table();
        assert!(table.contains("BLEU"));
        assert!(table.contains("AER"));
    }
}
