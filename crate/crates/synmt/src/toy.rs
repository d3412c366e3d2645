//! Seeded synthetic parallel corpora with known parse trees and gold
//! alignments. Two tasks ship: a dictionary-translation task with one local
//! reorder rule (adjectives follow their noun on the target side), and an
//! attachment probe where the target order depends on a PP attachment that
//! is invisible in the source word sequence.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::format_pharaoh;
use crate::tree::{parse_bracketed, print_tree, ParseTree};

/// One generated sentence pair with its parse and gold alignment.
#[derive(Debug, Clone)]
pub struct ToyPair {
    pub source: Vec<String>,
    pub tree: ParseTree,
    pub target: Vec<String>,
    /// (source word index, target word index), one link per target word.
    pub alignment: Vec<(usize, usize)>,
    /// Preterminal tag of each source word.
    pub pos: Vec<String>,
}

type Entry = (&'static str, &'static str);

const DT: &[Entry] = &[("the", "le"), ("a", "un")];
const JJ: &[Entry] = &[("red", "rouge"), ("big", "grand"), ("old", "vieux"), ("small", "petit")];
const NN: &[Entry] = &[
    ("dog", "chien"),
    ("cat", "chat"),
    ("bird", "oiseau"),
    ("fish", "poisson"),
    ("house", "maison"),
    ("tree", "arbre"),
    ("car", "voiture"),
    ("book", "livre"),
    ("man", "homme"),
    ("woman", "femme"),
];
const PRP1: &[Entry] = &[("i", "je"), ("you", "tu")];
const PRP3: &[Entry] = &[("he", "il"), ("she", "elle")];
const NR: &[Entry] =
    &[("paris", "paris"), ("london", "londres"), ("tokyo", "tokyo"), ("rome", "rome")];
const VBP: &[Entry] = &[
    ("see", "vois"),
    ("like", "aime"),
    ("hate", "deteste"),
    ("find", "trouve"),
    ("chase", "poursuis"),
    ("buy", "achete"),
];
const VBZ: &[Entry] = &[
    ("sees", "voit"),
    ("likes", "adore"),
    ("hates", "hait"),
    ("finds", "repere"),
    ("chases", "poursuit"),
    ("buys", "prend"),
];
const IN: &[Entry] = &[("near", "pres"), ("under", "sous"), ("with", "avec")];

const TABLES: &[&[Entry]] = &[DT, JJ, NN, PRP1, PRP3, NR, VBP, VBZ, IN];

fn translate(word: &str) -> &'static str {
    for table in TABLES {
        for (src, tgt) in *table {
            if *src == word {
                return tgt;
            }
        }
    }
    panic!("toy lexicon has no entry for '{}'", word)
}

fn pick(rng: &mut ChaCha8Rng, table: &[Entry]) -> Entry {
    table[rng.gen_range(0..table.len())]
}

/// Source word indices in target order. Two reorder rules, both triggered
/// purely by tree shape: under a (DT JJ NN) noun phrase the adjective
/// follows the noun, and an NP built as (NP PP) emits the PP first.
fn emit_order(node: &ParseTree, next: &mut usize) -> Vec<usize> {
    if node.is_preterminal() {
        let i = *next;
        *next += 1;
        return vec![i];
    }
    let blocks: Vec<Vec<usize>> = node.children.iter().map(|c| emit_order(c, next)).collect();
    let labels: Vec<&str> = node.children.iter().map(|c| c.label.as_str()).collect();
    let perm: Vec<usize> = if labels == ["DT", "JJ", "NN"] {
        vec![0, 2, 1]
    } else if node.label == "NP" && labels == ["NP", "PP"] {
        vec![1, 0]
    } else {
        (0..blocks.len()).collect()
    };
    perm.into_iter().flat_map(|k| blocks[k].clone()).collect()
}

fn pair_from_tree(tree: ParseTree) -> ToyPair {
    let source = tree.words();
    let pos = tree.pos_tags();
    let mut next = 0;
    let order = emit_order(&tree, &mut next);
    let target: Vec<String> =
        order.iter().map(|&i| translate(&source[i]).to_string()).collect();
    let alignment: Vec<(usize, usize)> =
        order.iter().enumerate().map(|(j, &i)| (i, j)).collect();
    ToyPair { source, tree, target, alignment, pos }
}

fn simple_np(rng: &mut ChaCha8Rng) -> ParseTree {
    let roll: f64 = rng.gen();
    if roll < 0.2 {
        let (w, _) = pick(rng, NR);
        ParseTree::internal("NP", vec![ParseTree::preterminal("NR", w)])
    } else if roll < 0.6 {
        let (d, _) = pick(rng, DT);
        let (n, _) = pick(rng, NN);
        ParseTree::internal(
            "NP",
            vec![ParseTree::preterminal("DT", d), ParseTree::preterminal("NN", n)],
        )
    } else {
        let (d, _) = pick(rng, DT);
        let (j, _) = pick(rng, JJ);
        let (n, _) = pick(rng, NN);
        ParseTree::internal(
            "NP",
            vec![
                ParseTree::preterminal("DT", d),
                ParseTree::preterminal("JJ", j),
                ParseTree::preterminal("NN", n),
            ],
        )
    }
}

/// Dictionary-translation task: random subject/verb/object sentences with
/// an optional PP, adjectives swapping to post-nominal position.
pub fn main_task(count: usize, seed: u64) -> Vec<ToyPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let roll: f64 = rng.gen();
            let (subject, first_person) = if roll < 0.2 {
                let (w, _) = pick(&mut rng, PRP1);
                (ParseTree::internal("NP", vec![ParseTree::preterminal("PRP", w)]), true)
            } else if roll < 0.35 {
                let (w, _) = pick(&mut rng, PRP3);
                (ParseTree::internal("NP", vec![ParseTree::preterminal("PRP", w)]), false)
            } else {
                (simple_np(&mut rng), false)
            };
            let (verb, tag) = if first_person {
                (pick(&mut rng, VBP).0, "VBP")
            } else {
                (pick(&mut rng, VBZ).0, "VBZ")
            };
            let mut vp = vec![ParseTree::preterminal(tag, verb), simple_np(&mut rng)];
            if rng.gen::<f64>() < 0.35 {
                let (p, _) = pick(&mut rng, IN);
                vp.push(ParseTree::internal(
                    "PP",
                    vec![ParseTree::preterminal("IN", p), simple_np(&mut rng)],
                ));
            }
            let tree =
                ParseTree::internal("S", vec![subject, ParseTree::internal("VP", vp)]);
            pair_from_tree(tree)
        })
        .collect()
}

/// Attachment probe: every sentence reads DT NN VBZ DT NN IN DT NN, but a
/// fair coin attaches the PP to the verb phrase (target keeps source order)
/// or to the object noun phrase (target moves the PP before the object).
/// Only the parse tree reveals which transform applies.
pub fn probe_task(count: usize, seed: u64) -> Vec<ToyPair> {
    // a deliberately small lexicon so identical surfaces recur often enough
    // for both attachments to appear with the same word sequence
    let nn = &NN[..4];
    let vbz = &VBZ[..3];
    let inp = &IN[..2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let subj = {
                let (d, _) = pick(&mut rng, DT);
                let (n, _) = pick(&mut rng, nn);
                ParseTree::internal(
                    "NP",
                    vec![ParseTree::preterminal("DT", d), ParseTree::preterminal("NN", n)],
                )
            };
            let (verb, _) = pick(&mut rng, vbz);
            let obj = {
                let (d, _) = pick(&mut rng, DT);
                let (n, _) = pick(&mut rng, nn);
                ParseTree::internal(
                    "NP",
                    vec![ParseTree::preterminal("DT", d), ParseTree::preterminal("NN", n)],
                )
            };
            let pp = {
                let (p, _) = pick(&mut rng, inp);
                let (d, _) = pick(&mut rng, DT);
                let (n, _) = pick(&mut rng, nn);
                ParseTree::internal(
                    "PP",
                    vec![
                        ParseTree::preterminal("IN", p),
                        ParseTree::internal(
                            "NP",
                            vec![
                                ParseTree::preterminal("DT", d),
                                ParseTree::preterminal("NN", n),
                            ],
                        ),
                    ],
                )
            };
            let vp = if rng.gen::<f64>() < 0.5 {
                ParseTree::internal("VP", vec![ParseTree::preterminal("VBZ", verb), obj, pp])
            } else {
                ParseTree::internal(
                    "VP",
                    vec![
                        ParseTree::preterminal("VBZ", verb),
                        ParseTree::internal("NP", vec![obj, pp]),
                    ],
                )
            };
            let tree = ParseTree::internal("S", vec![subj, vp]);
            pair_from_tree(tree)
        })
        .collect()
}

/// Corpus files for a set of pairs: source, bracketed trees, target, and
/// gold alignment lines (all links sure).
pub fn corpus_lines(pairs: &[ToyPair]) -> (Vec<String>, Vec<String>, Vec<String>, Vec<String>) {
    let src = pairs.iter().map(|p| p.source.join(" ")).collect();
    let trees = pairs.iter().map(|p| print_tree(&p.tree)).collect();
    let tgt = pairs.iter().map(|p| p.target.join(" ")).collect();
    let align = pairs.iter().map(|p| format_pharaoh(&p.alignment)).collect();
    (src, trees, tgt, align)
}

/// Hand-written natural-language parses bundled with the crate, used to
/// sanity-check sequence-length ratios on realistic trees.
pub const NATURAL_SAMPLE: &str = include_str!("../data/sample/trees.txt");

pub fn natural_sample() -> Result<Vec<ParseTree>> {
    NATURAL_SAMPLE.lines().map(parse_bracketed).collect()
}
