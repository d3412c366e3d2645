//! Bracketed constituency trees: parsing, linearization, mixed word/label
//! sequences, and phrase-span extraction.
//!
//! Input is PTB-style, one tree per line: `(S (NP (PRP I)) (VP (VBP love)
//! (NP (NNS dogs))))`. An outer `ROOT`/`TOP`/empty-label wrapper is stripped,
//! and functional suffixes on node labels (`NP-SBJ`, `NP-2`) are cut at the
//! hyphen; labels that start with a hyphen (`-NONE-`, `-LRB-`) are kept
//! whole. Terminal words are never rewritten.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A constituency tree node. Exactly one of the two holds: `children` is
/// non-empty (internal node), or `word` is set (preterminal: a POS tag over
/// one terminal token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub label: String,
    pub children: Vec<ParseTree>,
    pub word: Option<String>,
}

impl ParseTree {
    pub fn preterminal(tag: impl Into<String>, word: impl Into<String>) -> ParseTree {
        ParseTree { label: tag.into(), children: Vec::new(), word: Some(word.into()) }
    }

    pub fn internal(label: impl Into<String>, children: Vec<ParseTree>) -> ParseTree {
        ParseTree { label: label.into(), children, word: None }
    }

    pub fn is_preterminal(&self) -> bool {
        self.word.is_some()
    }

    /// Sentence tokens, left to right.
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words(&self, out: &mut Vec<String>) {
        if let Some(w) = &self.word {
            out.push(w.clone());
        }
        for c in &self.children {
            c.collect_words(out);
        }
    }

    /// Total node count (internal nodes plus preterminals).
    pub fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(ParseTree::count_nodes).sum::<usize>()
    }

    /// Preterminal tag of each word, left to right.
    pub fn pos_tags(&self) -> Vec<String> {
        fn walk(node: &ParseTree, out: &mut Vec<String>) {
            if node.is_preterminal() {
                out.push(node.label.clone());
            }
            for c in &node.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

/// Depth-first pre-order label sequence with the word-to-POS-position map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedTree {
    /// Structural labels l_1..l_k in traversal order (phrase labels and POS
    /// tags; no words). With `closing_brackets`, a `")"` token follows each
    /// node's subtree.
    pub labels: Vec<String>,
    /// For word i (sentence order), the index into `labels` of its POS tag.
    pub word_to_label: Vec<usize>,
    pub words: Vec<String>,
}

/// Interleaved label/word sequence: each word immediately follows its POS tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSequence {
    pub tokens: Vec<String>,
    /// Indices into `tokens` that hold word tokens, in sentence order.
    pub word_positions: Vec<usize>,
}

/// An internal node's category and the inclusive word range its subtree
/// covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSpan {
    pub category: String,
    pub start: usize,
    pub end: usize,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::TreeParse { offset: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn token(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn node(&mut self) -> Result<ParseTree> {
        if self.peek() != Some('(') {
            return Err(self.err("expected '('"));
        }
        self.pos += 1;
        self.skip_ws();
        let label = self.token();
        self.skip_ws();

        let mut children = Vec::new();
        let mut word = None;
        loop {
            match self.peek() {
                None => return Err(self.err("unbalanced: missing ')'")),
                Some(')') => {
                    if children.is_empty() && word.is_none() {
                        return Err(self.err("node with no children"));
                    }
                    self.pos += 1;
                    break;
                }
                Some('(') => {
                    if word.is_some() {
                        return Err(self.err("node mixes words and subtrees"));
                    }
                    children.push(self.node()?);
                }
                Some(_) => {
                    if !children.is_empty() {
                        return Err(self.err("node mixes words and subtrees"));
                    }
                    if word.is_some() {
                        return Err(self.err("preterminal with multiple words"));
                    }
                    if label.is_empty() {
                        return Err(self.err("preterminal with empty label"));
                    }
                    word = Some(self.token());
                }
            }
            self.skip_ws();
        }
        Ok(ParseTree { label, children, word })
    }
}

fn strip_label(label: &str) -> String {
    // a leading hyphen marks a special token (-NONE-, -LRB-); keep it whole
    if label.starts_with('-') {
        return label.to_string();
    }
    match label.find('-') {
        Some(i) => label[..i].to_string(),
        None => label.to_string(),
    }
}

fn strip_labels(tree: &mut ParseTree) {
    tree.label = strip_label(&tree.label);
    for c in &mut tree.children {
        strip_labels(c);
    }
}

/// Parse one bracketed tree. Strips any outer `ROOT`/`TOP`/empty-label
/// wrapper and functional label suffixes. Errors carry the character offset.
pub fn parse_bracketed(line: &str) -> Result<ParseTree> {
    let mut p = Parser { chars: line.chars().collect(), pos: 0 };
    p.skip_ws();
    if p.peek().is_none() {
        return Err(p.err("empty line"));
    }
    let mut tree = p.node()?;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.err("trailing input after tree"));
    }

    while matches!(tree.label.as_str(), "" | "ROOT" | "TOP") && tree.word.is_none() {
        if tree.children.len() == 1 {
            tree = tree.children.remove(0);
        } else if tree.label.is_empty() {
            return Err(Error::TreeParse {
                offset: 0,
                msg: format!("unlabeled root with {} children", tree.children.len()),
            });
        } else {
            break;
        }
    }
    strip_labels(&mut tree);
    Ok(tree)
}

/// Render a tree back to one-line bracketed form.
pub fn print_tree(tree: &ParseTree) -> String {
    let mut s = String::new();
    write_tree(tree, &mut s);
    s
}

fn write_tree(tree: &ParseTree, out: &mut String) {
    out.push('(');
    out.push_str(&tree.label);
    if let Some(w) = &tree.word {
        out.push(' ');
        out.push_str(w);
    } else {
        for c in &tree.children {
            out.push(' ');
            write_tree(c, out);
        }
    }
    out.push(')');
}

/// Depth-first pre-order linearization. With `closing_brackets`, a `")"`
/// token is appended after every node's subtree.
pub fn linearize(tree: &ParseTree, closing_brackets: bool) -> LinearizedTree {
    let mut out = LinearizedTree {
        labels: Vec::new(),
        word_to_label: Vec::new(),
        words: Vec::new(),
    };
    walk_linear(tree, closing_brackets, &mut out);
    out
}

fn walk_linear(node: &ParseTree, closing: bool, out: &mut LinearizedTree) {
    let idx = out.labels.len();
    out.labels.push(node.label.clone());
    if let Some(w) = &node.word {
        out.word_to_label.push(idx);
        out.words.push(w.clone());
    } else {
        for c in &node.children {
            walk_linear(c, closing, out);
        }
    }
    if closing {
        out.labels.push(")".to_string());
    }
}

/// Interleaved traversal: each internal label on entry, each word right after
/// its POS tag.
pub fn build_mixed(tree: &ParseTree, closing_brackets: bool) -> MixedSequence {
    let mut out = MixedSequence { tokens: Vec::new(), word_positions: Vec::new() };
    walk_mixed(tree, closing_brackets, &mut out);
    out
}

fn walk_mixed(node: &ParseTree, closing: bool, out: &mut MixedSequence) {
    out.tokens.push(node.label.clone());
    if let Some(w) = &node.word {
        out.word_positions.push(out.tokens.len());
        out.tokens.push(w.clone());
    } else {
        for c in &node.children {
            walk_mixed(c, closing, out);
        }
    }
    if closing {
        out.tokens.push(")".to_string());
    }
}

/// All nodes whose label is in `categories`, with the inclusive word range
/// each subtree covers, in pre-order. Nested matches are all reported.
pub fn extract_spans(tree: &ParseTree, categories: &[&str]) -> Vec<PhraseSpan> {
    let mut spans = Vec::new();
    walk_spans(tree, categories, &mut 0, &mut spans);
    spans
}

fn walk_spans(
    node: &ParseTree,
    categories: &[&str],
    next_word: &mut usize,
    spans: &mut Vec<PhraseSpan>,
) {
    let start = *next_word;
    if node.word.is_some() {
        *next_word += 1;
    } else {
        for c in &node.children {
            walk_spans(c, categories, next_word, spans);
        }
    }
    let end = *next_word - 1;
    if categories.contains(&node.label.as_str()) {
        // pre-order position: insert before any spans produced by descendants
        let at = spans
            .iter()
            .position(|s| s.start >= start && s.end <= end)
            .unwrap_or(spans.len());
        spans.insert(at, PhraseSpan { category: node.label.clone(), start, end });
    }
}

/// Random well-formed tree over the given inventories. Drives round-trip and
/// span-oracle tests and the synthetic corpus generator.
pub fn random_tree(
    rng: &mut ChaCha8Rng,
    max_depth: usize,
    phrase_labels: &[&str],
    pos_tags: &[&str],
    vocab: &[&str],
) -> ParseTree {
    fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
        xs[(rng.next_u64() % xs.len() as u64) as usize]
    }
    fn gen(
        rng: &mut ChaCha8Rng,
        depth: usize,
        phrase_labels: &[&str],
        pos_tags: &[&str],
        vocab: &[&str],
    ) -> ParseTree {
        if depth == 0 || rng.next_u64() % 3 == 0 {
            return ParseTree::preterminal(pick(rng, pos_tags), pick(rng, vocab));
        }
        let n = 1 + (rng.next_u64() % 3) as usize;
        let children = (0..n)
            .map(|_| gen(rng, depth - 1, phrase_labels, pos_tags, vocab))
            .collect();
        ParseTree::internal(pick(rng, phrase_labels), children)
    }
    // top level is always a phrase
    let n = 1 + (rng.next_u64() % 3) as usize;
    let children = (0..n)
        .map(|_| gen(rng, max_depth.saturating_sub(1), phrase_labels, pos_tags, vocab))
        .collect();
    ParseTree::internal(pick(rng, phrase_labels), children)
}
