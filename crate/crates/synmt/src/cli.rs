//! Command-line interface: one binary, subcommand per pipeline stage.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::warn;

use crate::checkpoint::{self, Checkpoint, TrainMeta};
use crate::config::RunConfig;
use crate::data::{
    build_vocab, make_examples, tokenize, ExamplePair, Limits, Variant, Vocabulary, UNK,
};
use crate::decode::{extract_alignment, force_decode, translate, DecodeOptions};
use crate::error::{Error, Result};
use crate::eval::{
    aer, bleu, bleu_by_length, format_pharaoh, parse_gold, parse_pharaoh, phrase_continuity,
    rare_word_report, rot, DiagnosticReport,
};
use crate::model::ModelParams;
use crate::train::{AdaDelta, TrainOptions, Trainer};
use crate::tree::{build_mixed, extract_spans, linearize, parse_bracketed, ParseTree};

#[derive(Parser)]
#[command(name = "synmt", version, about = "Syntax-aware neural machine translation")]
pub struct Cli {
    /// JSON run configuration (defaults apply when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Encoder variant: baseline, parallel, hierarchical, or mixed
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Beam width for decoding
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Output directory for checkpoints, vocabularies, and reports
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies and numericalized examples from the training corpus
    Preprocess,
    /// Train a model, writing per-epoch and best checkpoints
    Train,
    /// Beam-decode a source file
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source sentences, one per line
        #[arg(long)]
        input: PathBuf,
        /// Bracketed parses, line-aligned with the input (tree variants)
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Translation file; stdout when omitted
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the decoder's own attention alignments here
        #[arg(long)]
        alignments: Option<PathBuf>,
    },
    /// Force-decode references and write attention alignments
    Align {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        trees: Option<PathBuf>,
        /// Reference translations to force through the decoder
        #[arg(long)]
        target: PathBuf,
        /// Alignment file; stdout when omitted
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score existing output files: BLEU, plus AER when alignments and gold are given
    Evaluate {
        #[arg(long)]
        hypotheses: PathBuf,
        /// One or more reference files, line-aligned with the hypotheses
        #[arg(long, num_args = 1.., required = true)]
        references: Vec<PathBuf>,
        /// Source file; enables BLEU by source length
        #[arg(long)]
        source: Option<PathBuf>,
        /// System alignments in Pharaoh format
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Gold alignments (i-j sure, i?j possible)
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Translate a test set and emit the full diagnostic report
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// Bracketed parses; required, the analyses read spans and POS tags
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Gold alignments; enables AER over forced-decode attention
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Report JSON path; defaults to <out>/report.json
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump linearization, mixed sequence, and spans for bracketed trees
    InspectTree {
        /// A bracketed tree given inline
        #[arg(long)]
        tree: Option<String>,
        /// File of bracketed trees, one per line
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init()
        .ok();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(variant) = cli.variant {
        cfg.variant = variant;
    }
    if let Some(beam) = cli.beam {
        cfg.beam = beam;
    }
    if let Some(epochs) = cli.epochs {
        cfg.epochs = epochs;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    eprintln!("resolved config: {}", serde_json::to_string(&cfg)?);

    match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Translate { checkpoint, input, trees, output, alignments } => cmd_translate(
            &cfg,
            &checkpoint,
            &input,
            trees.as_deref(),
            output.as_deref(),
            alignments.as_deref(),
        ),
        Command::Align { checkpoint, source, trees, target, output } => {
            cmd_align(&checkpoint, &source, trees.as_deref(), &target, output.as_deref())
        }
        Command::Evaluate { hypotheses, references, source, alignments, gold } => cmd_evaluate(
            &cfg,
            &hypotheses,
            &references,
            source.as_deref(),
            alignments.as_deref(),
            gold.as_deref(),
        ),
        Command::Analyze { checkpoint, source, trees, references, gold, output } => cmd_analyze(
            &cfg,
            &checkpoint,
            &source,
            &trees,
            &references,
            gold.as_deref(),
            output.as_deref(),
        ),
        Command::InspectTree { tree, input } => {
            cmd_inspect_tree(&cfg, tree.as_deref(), input.as_deref())
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {}", path.display(), e)))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<()> {
    let body = lines.join("\n") + "\n";
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            fs::write(p, body)?;
        }
        None => print!("{}", body),
    }
    Ok(())
}

/// Training corpus with its freshly built vocabularies.
struct Prepared {
    examples: Vec<ExamplePair>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    label_vocab: Option<Vocabulary>,
}

fn require<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .ok_or_else(|| Error::config(format!("{}: required for this command", name)))
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let src_lines = read_lines(require(&cfg.train_source, "train_source")?)?;
    let tgt_lines = read_lines(require(&cfg.train_target, "train_target")?)?;
    let tree_lines = match (&cfg.train_trees, cfg.variant.needs_trees()) {
        (Some(p), _) => Some(read_lines(p)?),
        (None, false) => None,
        (None, true) => {
            return Err(Error::config(format!(
                "train_trees: required for the {} variant",
                cfg.variant
            )))
        }
    };

    let trees: Vec<Option<ParseTree>> = match &tree_lines {
        Some(lines) => lines.iter().map(|l| parse_bracketed(l).ok()).collect(),
        None => Vec::new(),
    };

    // the mixed encoder reads interleaved label/word tokens through the
    // source vocabulary, so its vocabulary is built over that stream
    let src_stream: Vec<Vec<String>> = if cfg.variant.needs_mixed() {
        src_lines
            .iter()
            .enumerate()
            .map(|(i, line)| match trees.get(i).and_then(Option::as_ref) {
                Some(t) => build_mixed(t, cfg.closing_brackets).tokens,
                None => tokenize(line),
            })
            .collect()
    } else {
        src_lines.iter().map(|l| tokenize(l)).collect()
    };
    let (src_vocab, src_stats) = build_vocab(&src_stream, cfg.source_vocab, &[])?;
    eprintln!(
        "source vocab: {} of {} types kept, token coverage {:.2}%",
        src_stats.kept,
        src_stats.distinct,
        100.0 * src_stats.coverage()
    );

    let tgt_stream: Vec<Vec<String>> = tgt_lines.iter().map(|l| tokenize(l)).collect();
    let (tgt_vocab, tgt_stats) = build_vocab(&tgt_stream, cfg.target_vocab, &[])?;
    eprintln!(
        "target vocab: {} of {} types kept, token coverage {:.2}%",
        tgt_stats.kept,
        tgt_stats.distinct,
        100.0 * tgt_stats.coverage()
    );

    let label_vocab = if cfg.variant.needs_labels() {
        let label_stream: Vec<Vec<String>> = trees
            .iter()
            .map(|t| match t {
                Some(t) => linearize(t, cfg.closing_brackets).labels,
                None => Vec::new(),
            })
            .collect();
        let (v, stats) = build_vocab(&label_stream, cfg.label_vocab, &[])?;
        eprintln!(
            "label vocab: {} of {} types kept, token coverage {:.2}%",
            stats.kept,
            stats.distinct,
            100.0 * stats.coverage()
        );
        Some(v)
    } else {
        None
    };

    let examples = make_examples(
        &src_lines,
        tree_lines.as_deref(),
        &tgt_lines,
        &src_vocab,
        &tgt_vocab,
        label_vocab.as_ref(),
        cfg.variant,
        &cfg.limits,
        cfg.closing_brackets,
    )?;
    eprintln!("{} of {} pairs kept", examples.len(), src_lines.len());
    Ok(Prepared { examples, src_vocab, tgt_vocab, label_vocab })
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let prepared = prepare(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    prepared.src_vocab.save(&cfg.out_dir.join("src.vocab"))?;
    prepared.tgt_vocab.save(&cfg.out_dir.join("tgt.vocab"))?;
    if let Some(v) = &prepared.label_vocab {
        v.save(&cfg.out_dir.join("label.vocab"))?;
    }
    let mut f = fs::File::create(cfg.out_dir.join("examples.jsonl"))?;
    for ex in &prepared.examples {
        writeln!(f, "{}", serde_json::to_string(ex)?)?;
    }
    println!(
        "wrote {} examples and vocabularies to {}",
        prepared.examples.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let prepared = prepare(cfg)?;
    let model_cfg = cfg.model_config(
        prepared.src_vocab.len(),
        prepared.tgt_vocab.len(),
        prepared.label_vocab.as_ref().map_or(3, Vocabulary::len),
    );
    let params = ModelParams::init(&model_cfg, cfg.seed)?;
    eprintln!("{} parameters ({} variant)", params.count_params(), cfg.variant);
    let mut opt = AdaDelta::new(&params);
    let mut trainer = Trainer {
        params: &params,
        opt: &mut opt,
        src_vocab: &prepared.src_vocab,
        tgt_vocab: &prepared.tgt_vocab,
        label_vocab: prepared.label_vocab.as_ref(),
    };
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        clip_norm: cfg.clip_norm,
        seed: cfg.seed,
        log_every: 10,
        save_dir: Some(cfg.out_dir.clone()),
        run_config: Some(cfg.to_value()?),
    };
    let report = trainer.run(
        &prepared.examples,
        &opts,
        TrainMeta { seed: cfg.seed, ..TrainMeta::default() },
        &mut |line| println!("{}", line),
    )?;
    for e in &report.epochs {
        println!(
            "epoch {} done: loss/token {:.4}, {} updates, {} skipped",
            e.epoch, e.loss_per_token, e.updates, e.skipped
        );
    }
    println!("checkpoints in {}", cfg.out_dir.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(ModelParams, Checkpoint)> {
    let ckpt = checkpoint::load(path)?;
    let shell = Checkpoint {
        config: ckpt.config.clone(),
        run_config: ckpt.run_config.clone(),
        src_vocab: ckpt.src_vocab.clone(),
        tgt_vocab: ckpt.tgt_vocab.clone(),
        label_vocab: ckpt.label_vocab.clone(),
        meta: ckpt.meta.clone(),
        tensors: Vec::new(),
    };
    let (params, _opt, _meta) = ckpt.into_model()?;
    Ok((params, shell))
}

/// Build the single-sentence example for one corpus line, or None when the
/// pair is dropped (empty side, over limit, unusable tree).
fn line_example(
    lineno: usize,
    src: &str,
    tree: Option<&str>,
    tgt: &str,
    ckpt: &Checkpoint,
    limits: &Limits,
    closing_brackets: bool,
) -> Option<ExamplePair> {
    let src_lines = [src.to_string()];
    let tgt_lines = [tgt.to_string()];
    let tree_lines = tree.map(|t| [t.to_string()]);
    let mut made = make_examples(
        &src_lines,
        tree_lines.as_ref().map(|a| a.as_slice()),
        &tgt_lines,
        &ckpt.src_vocab,
        &ckpt.tgt_vocab,
        ckpt.label_vocab.as_ref(),
        ckpt.config.variant,
        limits,
        closing_brackets,
    )
    .ok()?;
    if made.is_empty() {
        warn!("line {}: pair dropped, emitting an empty line", lineno + 1);
        return None;
    }
    Some(made.remove(0))
}

fn need_trees(
    variant: Variant,
    trees: Option<&Path>,
    lines: usize,
) -> Result<Option<Vec<String>>> {
    match trees {
        Some(p) => {
            let t = read_lines(p)?;
            if t.len() != lines {
                return Err(Error::data(format!(
                    "tree file has {} lines but the source has {}",
                    t.len(),
                    lines
                )));
            }
            Ok(Some(t))
        }
        None if variant.needs_trees() => {
            Err(Error::usage(format!("--trees is required for the {} variant", variant)))
        }
        None => Ok(None),
    }
}

fn cmd_translate(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    trees: Option<&Path>,
    output: Option<&Path>,
    alignments: Option<&Path>,
) -> Result<()> {
    let (params, ckpt) = load_model(checkpoint)?;
    let src_lines = read_lines(input)?;
    let tree_lines = need_trees(ckpt.config.variant, trees, src_lines.len())?;
    let opts = DecodeOptions { beam: cfg.beam, max_len: None, length_norm: true };

    let mut out_lines = Vec::with_capacity(src_lines.len());
    let mut align_lines = Vec::with_capacity(src_lines.len());
    for (i, src) in src_lines.iter().enumerate() {
        let tree = tree_lines.as_ref().map(|t| t[i].as_str());
        match line_example(i, src, tree, "x", &ckpt, &cfg.limits, cfg.closing_brackets) {
            Some(ex) => {
                let t = translate(&params, &ex, &opts)?;
                out_lines.push(ckpt.tgt_vocab.decode(&t.tokens).join(" "));
                let links: Vec<(usize, usize)> =
                    t.alignment.iter().enumerate().map(|(j, &s)| (s, j)).collect();
                align_lines.push(format_pharaoh(&links));
            }
            None => {
                out_lines.push(String::new());
                align_lines.push(String::new());
            }
        }
    }
    write_lines(output, &out_lines)?;
    if let Some(p) = alignments {
        write_lines(Some(p), &align_lines)?;
    }
    Ok(())
}

fn cmd_align(
    checkpoint: &Path,
    source: &Path,
    trees: Option<&Path>,
    target: &Path,
    output: Option<&Path>,
) -> Result<()> {
    let (params, ckpt) = load_model(checkpoint)?;
    let src_lines = read_lines(source)?;
    let tgt_lines = read_lines(target)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::data(format!(
            "source has {} lines but target has {}",
            src_lines.len(),
            tgt_lines.len()
        )));
    }
    let tree_lines = need_trees(ckpt.config.variant, trees, src_lines.len())?;
    let limits = Limits::default();

    let mut out_lines = Vec::with_capacity(src_lines.len());
    for (i, (src, tgt)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let tree = tree_lines.as_ref().map(|t| t[i].as_str());
        match line_example(i, src, tree, tgt, &ckpt, &limits, false) {
            Some(ex) => {
                let alphas = force_decode(&params, &ex)?;
                let links = extract_alignment(&alphas, ex.source_words());
                out_lines.push(format_pharaoh(&links));
            }
            None => out_lines.push(String::new()),
        }
    }
    write_lines(output, &out_lines)
}

fn tokenized(lines: &[String]) -> Vec<Vec<String>> {
    lines.iter().map(|l| tokenize(l)).collect()
}

fn cmd_evaluate(
    cfg: &RunConfig,
    hypotheses: &Path,
    references: &[PathBuf],
    source: Option<&Path>,
    alignments: Option<&Path>,
    gold: Option<&Path>,
) -> Result<()> {
    let hyps = tokenized(&read_lines(hypotheses)?);
    let mut ref_files = Vec::new();
    for p in references {
        let lines = read_lines(p)?;
        if lines.len() != hyps.len() {
            return Err(Error::data(format!(
                "{} has {} lines but hypotheses have {}",
                p.display(),
                lines.len(),
                hyps.len()
            )));
        }
        ref_files.push(tokenized(&lines));
    }
    let refs: Vec<Vec<Vec<String>>> = (0..hyps.len())
        .map(|i| ref_files.iter().map(|f| f[i].clone()).collect())
        .collect();

    let score = bleu(&hyps, &refs, 4, cfg.case_insensitive_bleu)?;
    println!(
        "BLEU = {:.4} (precisions {}, BP {:.4}, hyp/ref {}/{})",
        score.score,
        score
            .precisions
            .iter()
            .map(|p| format!("{:.3}", p))
            .collect::<Vec<_>>()
            .join("/"),
        score.brevity_penalty,
        score.hyp_len,
        score.ref_len
    );

    if let Some(src) = source {
        let lens: Vec<usize> = read_lines(src)?.iter().map(|l| tokenize(l).len()).collect();
        if lens.len() != hyps.len() {
            return Err(Error::data(format!(
                "source has {} lines but hypotheses have {}",
                lens.len(),
                hyps.len()
            )));
        }
        let buckets =
            bleu_by_length(&lens, &hyps, &refs, &cfg.bucket_edges, cfg.case_insensitive_bleu)?;
        for b in buckets {
            println!(
                "  length {:>6}: BLEU {:.4} ({} sentences)",
                b.label, b.bleu.score, b.sentences
            );
        }
    }

    match (alignments, gold) {
        (Some(a), Some(g)) => {
            let hyp_links = parse_pharaoh(&fs::read_to_string(a)?)?;
            let gold_links = parse_gold(&fs::read_to_string(g)?)?;
            println!("AER = {:.4}", aer(&hyp_links, &gold_links)?);
        }
        (None, None) => {}
        _ => return Err(Error::usage("--alignments and --gold must be given together")),
    }
    Ok(())
}

fn cmd_analyze(
    cfg: &RunConfig,
    checkpoint: &Path,
    source: &Path,
    trees: &Path,
    references: &Path,
    gold: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let (params, ckpt) = load_model(checkpoint)?;
    let src_lines = read_lines(source)?;
    let tree_lines = read_lines(trees)?;
    let ref_lines = read_lines(references)?;
    if src_lines.len() != ref_lines.len() || src_lines.len() != tree_lines.len() {
        return Err(Error::data(format!(
            "line counts differ: {} source, {} trees, {} references",
            src_lines.len(),
            tree_lines.len(),
            ref_lines.len()
        )));
    }
    let gold_all = match gold {
        Some(g) => {
            let parsed = parse_gold(&fs::read_to_string(g)?)?;
            if parsed.len() != src_lines.len() {
                return Err(Error::data(format!(
                    "gold alignment has {} lines but the source has {}",
                    parsed.len(),
                    src_lines.len()
                )));
            }
            Some(parsed)
        }
        None => None,
    };

    let opts = DecodeOptions { beam: cfg.beam, max_len: None, length_norm: true };
    let categories: Vec<&str> = cfg.phrase_categories.iter().map(String::as_str).collect();
    let groups = cfg.pos_group_list();

    let mut src_lens = Vec::new();
    let mut hyps: Vec<Vec<String>> = Vec::new();
    let mut refs: Vec<Vec<Vec<String>>> = Vec::new();
    let mut own_links: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut forced_links: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut gold_kept = Vec::new();
    let mut spans = Vec::new();
    let mut pos_tags = Vec::new();
    let mut src_unk: Vec<Vec<bool>> = Vec::new();
    let mut hyp_unk: Vec<Vec<bool>> = Vec::new();

    for i in 0..src_lines.len() {
        let tree = match parse_bracketed(&tree_lines[i]) {
            Ok(t) => t,
            Err(e) => {
                warn!("line {}: unusable tree ({}), sentence skipped", i + 1, e);
                continue;
            }
        };
        let example = match line_example(
            i,
            &src_lines[i],
            Some(&tree_lines[i]),
            &ref_lines[i],
            &ckpt,
            &cfg.limits,
            cfg.closing_brackets,
        ) {
            Some(ex) => ex,
            None => continue,
        };

        let words = tokenize(&src_lines[i]);
        let translation = translate(&params, &example, &opts)?;
        let hyp_ids = translation.tokens.clone();
        let own: Vec<(usize, usize)> =
            translation.alignment.iter().enumerate().map(|(j, &s)| (s, j)).collect();

        // own-output attention drives the qualitative analyses; AER instead
        // compares forced-decode attention against the gold links
        if gold_all.is_some() {
            let alphas = force_decode(&params, &example)?;
            forced_links.push(extract_alignment(&alphas, example.source_words()));
            gold_kept.push(gold_all.as_ref().expect("checked")[i].clone());
        }

        src_lens.push(words.len());
        hyps.push(ckpt.tgt_vocab.decode(&hyp_ids));
        refs.push(vec![tokenize(&ref_lines[i])]);
        spans.push(extract_spans(&tree, &categories));
        pos_tags.push(tree.pos_tags());
        src_unk.push(words.iter().map(|w| ckpt.src_vocab.id(w) == UNK).collect());
        hyp_unk.push(hyp_ids.iter().map(|&id| id == UNK).collect());
        own_links.push(own);
    }
    if hyps.is_empty() {
        return Err(Error::data("no sentence survived preprocessing; nothing to analyze"));
    }

    let report = DiagnosticReport {
        bleu: bleu(&hyps, &refs, 4, cfg.case_insensitive_bleu)?,
        bleu_by_length: bleu_by_length(
            &src_lens,
            &hyps,
            &refs,
            &cfg.bucket_edges,
            cfg.case_insensitive_bleu,
        )?,
        aer: if gold_all.is_some() { Some(aer(&forced_links, &gold_kept)?) } else { None },
        continuity: phrase_continuity(&spans, &own_links)?,
        rot: rot(&pos_tags, &own_links, &hyps, &groups)?,
        rare_words: rare_word_report(&src_unk, &hyp_unk, &pos_tags, &own_links, &groups)?,
    };

    print!("{}", report.table());
    let json_path = match output {
        Some(p) => p.to_path_buf(),
        None => cfg.out_dir.join("report.json"),
    };
    if let Some(dir) = json_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&json_path, report.to_json()?)?;
    println!("report written to {}", json_path.display());
    Ok(())
}

fn cmd_inspect_tree(cfg: &RunConfig, tree: Option<&str>, input: Option<&Path>) -> Result<()> {
    let lines: Vec<String> = match (tree, input) {
        (Some(t), None) => vec![t.to_string()],
        (None, Some(p)) => read_lines(p)?,
        _ => return Err(Error::usage("give exactly one of --tree or --input")),
    };
    for (i, line) in lines.iter().enumerate() {
        if lines.len() > 1 {
            println!("# line {}", i + 1);
        }
        let tree = parse_bracketed(line)
            .map_err(|e| Error::data(format!("line {}: {}", i + 1, e)))?;
        let words = tree.words();
        let lin = linearize(&tree, cfg.closing_brackets);
        let mixed = build_mixed(&tree, cfg.closing_brackets);
        println!("words ({}): {}", words.len(), words.join(" "));
        println!("labels ({}): {}", lin.labels.len(), lin.labels.join(" "));
        println!(
            "word_to_label: {}",
            lin.word_to_label
                .iter()
                .enumerate()
                .map(|(w, l)| format!("{}->{}", w, l))
                .collect::<Vec<_>>()
                .join(" ")
        );
        println!("mixed ({}): {}", mixed.tokens.len(), mixed.tokens.join(" "));
        println!(
            "word_positions: {}",
            mixed
                .word_positions
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        );
        let categories: Vec<&str> =
            cfg.phrase_categories.iter().map(String::as_str).collect();
        let spans = extract_spans(&tree, &categories);
        println!(
            "spans: {}",
            spans
                .iter()
                .map(|s| format!("{}[{}..{}]", s.category, s.start, s.end))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(())
}
