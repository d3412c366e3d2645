//! Beam-search translation, forced decoding, and attention-based alignment.
//!
//! Scores are sums of token log-probabilities while the search runs;
//! length normalization (dividing by the token count, terminating EOS
//! included) is applied only when the finished hypotheses are ranked.
//! Each step keeps the top `beam` candidates; a candidate that emits EOS
//! retires its hypothesis along with the slot it claimed, and the search
//! runs until `max_len` or until every slot retired. Hypotheses still alive
//! at `max_len` are truncated; they enter the final ranking only if nothing
//! finished.

use crate::data::{make_batch, ExamplePair, EOS};
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderOutput, ModelParams};
use crate::tensor::{Tape, Tensor};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Hypothesis length ceiling; defaults to 2 * source words + 10.
    pub max_len: Option<usize>,
    /// Rank finished hypotheses by score / token count.
    pub length_norm: bool,
}

impl Default for DecodeOptions {
    fn default() -> DecodeOptions {
        DecodeOptions { beam: 10, max_len: None, length_norm: true }
    }
}

/// One decoded hypothesis, best first in [`beam_search`] output.
#[derive(Debug, Clone)]
pub struct Translation {
    /// Target ids, terminating EOS stripped.
    pub tokens: Vec<usize>,
    /// Aligned source word index for each entry of `tokens`.
    pub alignment: Vec<usize>,
    /// Final ranking score (normalized when `length_norm` is set).
    pub score: f64,
    /// Whether the hypothesis ended with EOS rather than truncation.
    pub finished: bool,
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<usize>,
    alignment: Vec<usize>,
    sum_logp: f64,
}

/// Stable per-row log-softmax of raw logits.
fn log_softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = logits.shape();
    let data = logits.to_vec();
    (0..r)
        .map(|i| {
            let row = &data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Argmax over the word positions of one attention row, ignoring the source
/// EOS position (and padding); ties break toward the lowest index.
pub fn aligned_source_word(alpha_row: &[f64], src_words: usize) -> usize {
    let mut best = 0usize;
    for (i, &v) in alpha_row.iter().enumerate().take(src_words).skip(1) {
        if v > alpha_row[best] {
            best = i;
        }
    }
    best
}

/// Replicate a single-sentence encoding for `k` beam rows.
fn expand_encoder(tape: &mut Tape, enc: &EncoderOutput, k: usize) -> Result<EncoderOutput> {
    if k == 1 {
        return Ok(enc.clone());
    }
    Ok(EncoderOutput {
        positions: enc.positions,
        batch: k,
        annotations: tape.repeat_rows(&enc.annotations, k)?,
        proj: tape.repeat_rows(&enc.proj, k)?,
        mask: tape.tile_rows(&enc.mask, k)?,
    })
}

/// All hypotheses for one example, best first.
pub fn beam_search(
    params: &ModelParams,
    example: &ExamplePair,
    opts: &DecodeOptions,
) -> Result<Vec<Translation>> {
    if opts.beam == 0 {
        return Err(Error::usage("beam width must be at least 1"));
    }
    let src_words = example.source_words();
    let max_len = opts.max_len.unwrap_or(2 * src_words + 10);
    if max_len == 0 {
        return Err(Error::usage("max_len must be at least 1"));
    }

    let mut tape = Tape::no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout is off outside training
    let batch = make_batch(&[example])?;
    let enc1 = params.encode(&mut tape, &batch)?;

    let mut live: Vec<Hyp> = vec![Hyp { tokens: Vec::new(), alignment: Vec::new(), sum_logp: 0.0 }];
    let mut state = {
        let enc = expand_encoder(&mut tape, &enc1, 1)?;
        params.init_decoder(&mut tape, &enc)?
    };
    let mut finished: Vec<Hyp> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let enc = expand_encoder(&mut tape, &enc1, live.len())?;
        let (next, logits, alpha) = params.decoder_step(&mut tape, &state, &enc, false, &mut rng)?;
        let logps = log_softmax_rows(&logits);
        let alphas = {
            let (r, c) = alpha.shape();
            let d = alpha.to_vec();
            (0..r).map(|i| d[i * c..(i + 1) * c].to_vec()).collect::<Vec<_>>()
        };

        // candidates (parent row, token, total score), best first; ties
        // break toward the lower parent row then the lower token id
        let mut cands: Vec<(usize, usize, f64)> = Vec::with_capacity(live.len() * logps[0].len());
        for (b, hyp) in live.iter().enumerate() {
            for (v, lp) in logps[b].iter().enumerate() {
                cands.push((b, v, hyp.sum_logp + lp));
            }
        }
        cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        // the top `beam` candidates overall advance; an EOS candidate
        // retires its hypothesis and the slot it claimed, so beam 1 stops
        // exactly where greedy stops
        let mut new_live: Vec<Hyp> = Vec::with_capacity(opts.beam);
        let mut parents: Vec<usize> = Vec::with_capacity(opts.beam);
        let mut chosen: Vec<usize> = Vec::with_capacity(opts.beam);
        for (b, v, score) in cands.into_iter().take(opts.beam) {
            let parent = &live[b];
            if v == EOS {
                let mut h = parent.clone();
                h.tokens.push(EOS);
                h.sum_logp = score;
                // the EOS step itself contributes no alignment entry
                finished.push(h);
                continue;
            }
            let mut h = parent.clone();
            h.tokens.push(v);
            h.alignment.push(aligned_source_word(&alphas[b], src_words));
            h.sum_logp = score;
            new_live.push(h);
            parents.push(b);
            chosen.push(v);
        }
        if new_live.is_empty() {
            live.clear();
            break;
        }
        let s = tape.rows(&next.s, &parents)?;
        state = DecoderState { s, y_prev: chosen };
        live = new_live;
    }

    // truncated hypotheses count only when nothing reached EOS
    let pool = if finished.is_empty() { live } else { finished };
    let mut out: Vec<Translation> = pool
        .into_iter()
        .map(|h| {
            let finished = h.tokens.last() == Some(&EOS);
            let mut tokens = h.tokens;
            if finished {
                tokens.pop();
            }
            let count = tokens.len() + usize::from(finished);
            let score = if opts.length_norm && count > 0 {
                h.sum_logp / count as f64
            } else {
                h.sum_logp
            };
            Translation { tokens, alignment: h.alignment, score, finished }
        })
        .collect();
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    out.truncate(opts.beam);
    if out.is_empty() {
        return Err(Error::usage("beam search produced no hypotheses"));
    }
    Ok(out)
}

/// Best translation for one example.
pub fn translate(
    params: &ModelParams,
    example: &ExamplePair,
    opts: &DecodeOptions,
) -> Result<Translation> {
    Ok(beam_search(params, example, opts)?.remove(0))
}

/// Teacher-forced pass over the example's own target; returns one attention
/// row per target step (the final EOS step included).
pub fn force_decode(params: &ModelParams, example: &ExamplePair) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = make_batch(&[example])?;
    let enc = params.encode(&mut tape, &batch)?;
    let mut state = params.init_decoder(&mut tape, &enc)?;
    let mut alphas = Vec::with_capacity(example.tgt.len());
    for ids in &batch.tgt_steps {
        let (next, _logits, alpha) = params.decoder_step(&mut tape, &state, &enc, false, &mut rng)?;
        alphas.push(alpha.to_vec());
        state = DecoderState { s: next.s, y_prev: ids.clone() };
    }
    Ok(alphas)
}

/// Sum of token log-probabilities for a given target (must end with EOS).
pub fn score_sequence(
    params: &ModelParams,
    example: &ExamplePair,
    target_with_eos: &[usize],
) -> Result<f64> {
    if target_with_eos.last() != Some(&EOS) {
        return Err(Error::usage("scored sequences must end with EOS"));
    }
    let mut scored = example.clone();
    scored.tgt = target_with_eos.to_vec();
    let mut tape = Tape::no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = params.sentence_loss(&mut tape, &scored, false, &mut rng)?;
    Ok(-loss.item())
}

/// Word alignments from forced-decode attention: one `(source, target)` pair
/// per target word, the EOS step dropped.
pub fn extract_alignment(alphas: &[Vec<f64>], src_words: usize) -> Vec<(usize, usize)> {
    let steps = alphas.len().saturating_sub(1); // drop the EOS prediction step
    (0..steps)
        .map(|j| (aligned_source_word(&alphas[j], src_words), j))
        .collect()
}
