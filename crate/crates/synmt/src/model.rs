//! Model parameters and forward computation: bidirectional GRU encoders
//! (baseline plus the parallel, hierarchical, and mixed syntax variants),
//! additive attention, and the GRU decoder with its output head.
//!
//! Annotation matrices are flat and time-major: position `t` of sentence `b`
//! in a batch of `B` lives at row `t * B + b`. That makes per-step attention
//! a handful of whole-matrix operations (tile, add, reshape) instead of
//! per-sentence loops.
//!
//! GRU formulation used throughout, for input x and state h:
//! z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
//! cand = tanh(x Wh + (r*h) Uh + bh), h' = h + z*(cand - h).
//! Batched sequences advance through masked steps, h' = h + m*(step(x,h) - h),
//! so padded positions carry the state through bit-identically.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Variant, EOS};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Architecture hyperparameters. Label dimensions are ignored by the
/// baseline and mixed variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub word_emb_dim: usize,
    pub hidden_dim: usize,
    pub label_emb_dim: usize,
    pub label_hidden_dim: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub label_vocab: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            variant: Variant::Baseline,
            word_emb_dim: 620,
            hidden_dim: 1000,
            label_emb_dim: 100,
            label_hidden_dim: 100,
            source_vocab: 16000,
            target_vocab: 16000,
            label_vocab: 51,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_emb_dim", self.word_emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("label_emb_dim", self.label_emb_dim),
            ("label_hidden_dim", self.label_hidden_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", name)));
            }
        }
        for (name, v) in [
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
        ] {
            if v < crate::data::RESERVED.len() {
                return Err(Error::Config(format!(
                    "{} must cover the {} reserved tokens",
                    name,
                    crate::data::RESERVED.len()
                )));
            }
        }
        if self.variant.needs_labels() && self.label_vocab < crate::data::RESERVED.len() {
            return Err(Error::Config("label_vocab must cover the reserved tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of one encoder annotation vector.
    pub fn annotation_dim(&self) -> usize {
        match self.variant {
            Variant::Parallel => 2 * self.hidden_dim + 2 * self.label_hidden_dim,
            _ => 2 * self.hidden_dim,
        }
    }

    /// Input width of the word-level encoder GRUs.
    pub fn word_input_dim(&self) -> usize {
        match self.variant {
            Variant::Hierarchical => self.word_emb_dim + 2 * self.label_hidden_dim,
            _ => self.word_emb_dim,
        }
    }

    /// Input width of the decoder-initialization layer (backward halves of
    /// the first annotation).
    pub fn init_input_dim(&self) -> usize {
        match self.variant {
            Variant::Parallel => self.hidden_dim + self.label_hidden_dim,
            _ => self.hidden_dim,
        }
    }

    /// Attention hidden width (tied to hidden_dim).
    pub fn attention_dim(&self) -> usize {
        self.hidden_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Uniform,
    Orthogonal,
    Zero,
}

/// One named parameter tensor's shape and initialization rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: InitKind,
}

fn gru_specs(prefix: &str, in_dim: usize, hidden: usize, out: &mut Vec<ParamSpec>) {
    for gate in ["z", "r", "h"] {
        out.push(ParamSpec {
            name: format!("{}.w{}", prefix, gate),
            rows: in_dim,
            cols: hidden,
            init: InitKind::Uniform,
        });
        out.push(ParamSpec {
            name: format!("{}.u{}", prefix, gate),
            rows: hidden,
            cols: hidden,
            init: InitKind::Orthogonal,
        });
        out.push(ParamSpec {
            name: format!("{}.b{}", prefix, gate),
            rows: 1,
            cols: hidden,
            init: InitKind::Zero,
        });
    }
}

/// Every parameter tensor the config implies, in construction order. This is
/// the single source of truth for shapes: initialization, parameter
/// counting, and checkpoints all follow it.
pub fn param_plan(config: &ModelConfig) -> Vec<ParamSpec> {
    let c = config;
    let ann = c.annotation_dim();
    let mut plan = Vec::new();
    let emb = |name: &str, rows: usize, cols: usize| ParamSpec {
        name: name.to_string(),
        rows,
        cols,
        init: InitKind::Uniform,
    };

    plan.push(emb("src_emb", c.source_vocab, c.word_emb_dim));
    plan.push(emb("tgt_emb", c.target_vocab, c.word_emb_dim));
    if c.variant.needs_labels() {
        plan.push(emb("label_emb", c.label_vocab, c.label_emb_dim));
    }
    let enc_in = match c.variant {
        Variant::Mixed => c.word_emb_dim,
        _ => c.word_input_dim(),
    };
    gru_specs("enc.fwd", enc_in, c.hidden_dim, &mut plan);
    gru_specs("enc.bwd", enc_in, c.hidden_dim, &mut plan);
    if c.variant.needs_labels() {
        gru_specs("label.fwd", c.label_emb_dim, c.label_hidden_dim, &mut plan);
        gru_specs("label.bwd", c.label_emb_dim, c.label_hidden_dim, &mut plan);
    }
    plan.push(emb("att.ws", c.hidden_dim, c.attention_dim()));
    plan.push(emb("att.ua", ann, c.attention_dim()));
    plan.push(emb("att.v", c.attention_dim(), 1));
    plan.push(ParamSpec {
        name: "att.ba".into(),
        rows: 1,
        cols: c.attention_dim(),
        init: InitKind::Zero,
    });
    gru_specs("dec", c.word_emb_dim + ann, c.hidden_dim, &mut plan);
    plan.push(emb("init.w", c.init_input_dim(), c.hidden_dim));
    plan.push(ParamSpec { name: "init.b".into(), rows: 1, cols: c.hidden_dim, init: InitKind::Zero });
    plan.push(emb("out.w1", c.hidden_dim + c.word_emb_dim + ann, c.word_emb_dim));
    plan.push(ParamSpec { name: "out.b1".into(), rows: 1, cols: c.word_emb_dim, init: InitKind::Zero });
    plan.push(emb("out.w2", c.word_emb_dim, c.target_vocab));
    plan.push(ParamSpec { name: "out.b2".into(), rows: 1, cols: c.target_vocab, init: InitKind::Zero });
    plan
}

/// Total parameter count implied by a config; pure shape arithmetic.
pub fn count_params_config(config: &ModelConfig) -> usize {
    param_plan(config).iter().map(|s| s.rows * s.cols).sum()
}

fn uniform_unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| (uniform_unit(rng) * 2.0 - 1.0) * scale)
        .collect();
    Tensor::new(rows, cols, data).expect("uniform shape")
}

/// Random orthogonal matrix via modified Gram-Schmidt on a random square
/// matrix.
fn orthogonal_tensor(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| uniform_unit(rng) * 2.0 - 1.0).collect())
        .collect();
    for j in 0..n {
        for i in 0..j {
            let dot: f64 = (0..n).map(|k| cols[i][k] * cols[j][k]).sum();
            for k in 0..n {
                cols[j][k] -= dot * cols[i][k];
            }
        }
        let norm: f64 = (0..n).map(|k| cols[j][k] * cols[j][k]).sum::<f64>().sqrt();
        if norm < 1e-9 {
            // essentially-degenerate draw; replace with a unit basis vector
            for k in 0..n {
                cols[j][k] = if k == j { 1.0 } else { 0.0 };
            }
            continue;
        }
        for k in 0..n {
            cols[j][k] /= norm;
        }
    }
    let mut data = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            data[k * n + j] = *v;
        }
    }
    Tensor::new(n, n, data).expect("orthogonal shape")
}

/// One GRU direction's weights.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

impl GruParams {
    fn take(map: &mut Vec<(String, Tensor)>, prefix: &str) -> GruParams {
        let mut get = |suffix: &str| {
            let name = format!("{}.{}", prefix, suffix);
            let at = map
                .iter()
                .position(|(n, _)| *n == name)
                .unwrap_or_else(|| panic!("plan is missing {}", name));
            map.remove(at).1
        };
        GruParams {
            wz: get("wz"),
            uz: get("uz"),
            bz: get("bz"),
            wr: get("wr"),
            ur: get("ur"),
            br: get("br"),
            wh: get("wh"),
            uh: get("uh"),
            bh: get("bh"),
        }
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        // declaration order must mirror gru_specs
        for (suffix, t) in [
            ("wz", &self.wz),
            ("uz", &self.uz),
            ("bz", &self.bz),
            ("wr", &self.wr),
            ("ur", &self.ur),
            ("br", &self.br),
            ("wh", &self.wh),
            ("uh", &self.uh),
            ("bh", &self.bh),
        ] {
            out.push((format!("{}.{}", prefix, suffix), t.clone()));
        }
    }

    /// One unmasked GRU update.
    pub fn step(&self, tape: &mut Tape, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let z = {
            let a = tape.matmul(x, &self.wz)?;
            let b = tape.matmul(h, &self.uz)?;
            let s = tape.add(&a, &b)?;
            let s = tape.add(&s, &self.bz)?;
            tape.sigmoid(&s)?
        };
        let r = {
            let a = tape.matmul(x, &self.wr)?;
            let b = tape.matmul(h, &self.ur)?;
            let s = tape.add(&a, &b)?;
            let s = tape.add(&s, &self.br)?;
            tape.sigmoid(&s)?
        };
        let cand = {
            let rh = tape.mul(&r, h)?;
            let a = tape.matmul(x, &self.wh)?;
            let b = tape.matmul(&rh, &self.uh)?;
            let s = tape.add(&a, &b)?;
            let s = tape.add(&s, &self.bh)?;
            tape.tanh(&s)?
        };
        let delta = tape.sub(&cand, h)?;
        let zd = tape.mul(&z, &delta)?;
        tape.add(h, &zd)
    }

    /// Masked update: rows with mask 0 keep their state bit-identically.
    pub fn masked_step(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        h: &Tensor,
        mask: &Tensor,
    ) -> Result<Tensor> {
        let hn = self.step(tape, x, h)?;
        blend(tape, h, &hn, mask)
    }
}

/// h + mask * (hn - h), the carry-through blend for padded rows.
pub fn blend(tape: &mut Tape, h: &Tensor, hn: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let d = tape.sub(hn, h)?;
    let md = tape.mul(&d, mask)?;
    tape.add(h, &md)
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub ws: Tensor,
    pub ua: Tensor,
    pub v: Tensor,
    pub ba: Tensor,
}

/// All trainable tensors for one model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub src_emb: Tensor,
    pub tgt_emb: Tensor,
    pub label_emb: Option<Tensor>,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub label_fwd: Option<GruParams>,
    pub label_bwd: Option<GruParams>,
    pub att: AttentionParams,
    pub dec: GruParams,
    pub init_w: Tensor,
    pub init_b: Tensor,
    pub out_w1: Tensor,
    pub out_b1: Tensor,
    pub out_w2: Tensor,
    pub out_b2: Tensor,
}

impl ModelParams {
    /// Initialize from the parameter plan: uniform(-0.01, 0.01) weights,
    /// orthogonal square recurrent matrices, zero biases. Deterministic for
    /// a seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: Vec<(String, Tensor)> = param_plan(config)
            .into_iter()
            .map(|spec| {
                let t = match spec.init {
                    InitKind::Uniform => uniform_tensor(&mut rng, spec.rows, spec.cols, 0.01),
                    InitKind::Orthogonal => {
                        debug_assert_eq!(spec.rows, spec.cols);
                        orthogonal_tensor(&mut rng, spec.rows)
                    }
                    InitKind::Zero => Tensor::zeros(spec.rows, spec.cols),
                };
                (spec.name, t)
            })
            .collect();
        ModelParams::from_named(config, tensors)
    }

    /// Rebuild from named tensors (a loaded checkpoint), verifying that
    /// exactly the planned tensors are present with the planned shapes.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<ModelParams> {
        config.validate()?;
        let plan = param_plan(config);
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut made = Vec::with_capacity(plan.len());
        for spec in &plan {
            let t = by_name.remove(&spec.name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {}", spec.name))
            })?;
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {}x{}, config implies {}x{}",
                    spec.name,
                    t.rows(),
                    t.cols(),
                    spec.rows,
                    spec.cols
                )));
            }
            made.push((spec.name.clone(), t.requires_grad()));
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {}", name)));
        }

        fn take(made: &mut Vec<(String, Tensor)>, name: &str) -> Tensor {
            let at = made
                .iter()
                .position(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("plan is missing {}", name));
            made.remove(at).1
        }
        let params = ModelParams {
            config: config.clone(),
            src_emb: take(&mut made, "src_emb"),
            tgt_emb: take(&mut made, "tgt_emb"),
            label_emb: config.variant.needs_labels().then(|| take(&mut made, "label_emb")),
            enc_fwd: GruParams::take(&mut made, "enc.fwd"),
            enc_bwd: GruParams::take(&mut made, "enc.bwd"),
            label_fwd: config.variant.needs_labels().then(|| GruParams::take(&mut made, "label.fwd")),
            label_bwd: config.variant.needs_labels().then(|| GruParams::take(&mut made, "label.bwd")),
            att: AttentionParams {
                ws: take(&mut made, "att.ws"),
                ua: take(&mut made, "att.ua"),
                v: take(&mut made, "att.v"),
                ba: take(&mut made, "att.ba"),
            },
            dec: GruParams::take(&mut made, "dec"),
            init_w: take(&mut made, "init.w"),
            init_b: take(&mut made, "init.b"),
            out_w1: take(&mut made, "out.w1"),
            out_b1: take(&mut made, "out.b1"),
            out_w2: take(&mut made, "out.w2"),
            out_b2: take(&mut made, "out.b2"),
        };
        debug_assert!(made.is_empty());
        Ok(params)
    }

    /// Named handles to every tensor, in plan order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("src_emb".to_string(), self.src_emb.clone()));
        out.push(("tgt_emb".to_string(), self.tgt_emb.clone()));
        if let Some(t) = &self.label_emb {
            out.push(("label_emb".to_string(), t.clone()));
        }
        self.enc_fwd.visit("enc.fwd", &mut out);
        self.enc_bwd.visit("enc.bwd", &mut out);
        if let Some(g) = &self.label_fwd {
            g.visit("label.fwd", &mut out);
        }
        if let Some(g) = &self.label_bwd {
            g.visit("label.bwd", &mut out);
        }
        out.push(("att.ws".to_string(), self.att.ws.clone()));
        out.push(("att.ua".to_string(), self.att.ua.clone()));
        out.push(("att.v".to_string(), self.att.v.clone()));
        out.push(("att.ba".to_string(), self.att.ba.clone()));
        self.dec.visit("dec", &mut out);
        out.push(("init.w".to_string(), self.init_w.clone()));
        out.push(("init.b".to_string(), self.init_b.clone()));
        out.push(("out.w1".to_string(), self.out_w1.clone()));
        out.push(("out.b1".to_string(), self.out_b1.clone()));
        out.push(("out.w2".to_string(), self.out_w2.clone()));
        out.push(("out.b2".to_string(), self.out_b2.clone()));
        out
    }

    /// Exact element count over all tensors.
    pub fn count_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named() {
            t.zero_grad();
        }
    }
}

/// Flat, time-major encoder output plus everything attention needs.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Word-position count per sentence dimension (source EOS included).
    pub positions: usize,
    pub batch: usize,
    /// `[positions * batch, annotation_dim]`, row `t * batch + b`.
    pub annotations: Tensor,
    /// Cached `annotations * Ua + ba`, `[positions * batch, attention_dim]`.
    pub proj: Tensor,
    /// `[batch, positions]` attention mask, 1.0 on real positions.
    pub mask: Tensor,
}

/// Decoder recurrent state between steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub s: Tensor,
    pub y_prev: Vec<usize>,
}

fn step_mask_tensor(mask: &[f64]) -> Tensor {
    Tensor::new(mask.len(), 1, mask.to_vec()).expect("mask shape")
}

/// `[B, m]` attention mask built from time-major step masks.
fn attention_mask(step_masks: &[Vec<f64>]) -> Tensor {
    let m = step_masks.len();
    let b = step_masks[0].len();
    let mut data = vec![0.0; b * m];
    for (t, row) in step_masks.iter().enumerate() {
        for (bi, &v) in row.iter().enumerate() {
            data[bi * m + t] = v;
        }
    }
    Tensor::new(b, m, data).expect("mask shape")
}

/// Run a bidirectional GRU over per-step inputs; returns per-position
/// `[B, 2*hidden]` annotations (forward half then backward half).
fn run_bigru(
    tape: &mut Tape,
    fwd: &GruParams,
    bwd: &GruParams,
    inputs: &[Tensor],
    masks: &[Tensor],
    batch: usize,
    hidden: usize,
) -> Result<Vec<Tensor>> {
    let m = inputs.len();
    let mut fstates = Vec::with_capacity(m);
    let mut h = Tensor::zeros(batch, hidden);
    for t in 0..m {
        h = fwd.masked_step(tape, &inputs[t], &h, &masks[t])?;
        fstates.push(h.clone());
    }
    let mut bstates = vec![Tensor::zeros(0, 0); m];
    let mut hb = Tensor::zeros(batch, hidden);
    for t in (0..m).rev() {
        hb = bwd.masked_step(tape, &inputs[t], &hb, &masks[t])?;
        bstates[t] = hb.clone();
    }
    (0..m)
        .map(|t| tape.concat(&[fstates[t].clone(), bstates[t].clone()], 1))
        .collect()
}

/// Gather rows `pos[b] * batch + b` from a flat time-major matrix.
fn gather_positions(
    tape: &mut Tape,
    flat: &Tensor,
    pos: &[usize],
    batch: usize,
) -> Result<Tensor> {
    let ids: Vec<usize> = pos.iter().enumerate().map(|(b, &p)| p * batch + b).collect();
    tape.rows(flat, &ids)
}

impl ModelParams {
    /// Encode a batch into per-word annotations (variant-specific).
    pub fn encode(&self, tape: &mut Tape, batch: &Batch) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let b = batch.size;
        let m = batch.src_steps.len();
        let src_masks: Vec<Tensor> = batch.src_mask.iter().map(|r| step_mask_tensor(r)).collect();

        let word_annots: Vec<Tensor> = match cfg.variant {
            Variant::Baseline | Variant::Parallel => {
                let inputs = self.embed_steps(tape, &self.src_emb, &batch.src_steps)?;
                run_bigru(tape, &self.enc_fwd, &self.enc_bwd, &inputs, &src_masks, b, cfg.hidden_dim)?
            }
            Variant::Hierarchical => {
                let label_flat = self.encode_labels(tape, batch)?;
                let label_pos = batch
                    .label_pos
                    .as_ref()
                    .ok_or_else(|| Error::usage("hierarchical variant needs label data in the batch"))?;
                let mut inputs = Vec::with_capacity(m);
                for t in 0..m {
                    let emb = tape.rows(&self.src_emb, &batch.src_steps[t])?;
                    let lab = gather_positions(tape, &label_flat, &label_pos[t], b)?;
                    inputs.push(tape.concat(&[emb, lab], 1)?);
                }
                run_bigru(tape, &self.enc_fwd, &self.enc_bwd, &inputs, &src_masks, b, cfg.hidden_dim)?
            }
            Variant::Mixed => {
                let mixed_steps = batch
                    .mixed_steps
                    .as_ref()
                    .ok_or_else(|| Error::usage("mixed variant needs mixed data in the batch"))?;
                let mixed_mask = batch.mixed_mask.as_ref().expect("mixed_steps implies mask");
                let mixed_pos = batch.mixed_pos.as_ref().expect("mixed_steps implies positions");
                let inputs = self.embed_steps(tape, &self.src_emb, mixed_steps)?;
                let masks: Vec<Tensor> = mixed_mask.iter().map(|r| step_mask_tensor(r)).collect();
                let annots =
                    run_bigru(tape, &self.enc_fwd, &self.enc_bwd, &inputs, &masks, b, cfg.hidden_dim)?;
                let flat = tape.concat(&annots, 0)?;
                let mut picked = Vec::with_capacity(m);
                for t in 0..m {
                    picked.push(gather_positions(tape, &flat, &mixed_pos[t], b)?);
                }
                picked
            }
        };

        let per_position: Vec<Tensor> = match cfg.variant {
            Variant::Parallel => {
                let label_flat = self.encode_labels(tape, batch)?;
                let label_pos = batch
                    .label_pos
                    .as_ref()
                    .ok_or_else(|| Error::usage("parallel variant needs label data in the batch"))?;
                let mut rows = Vec::with_capacity(m);
                for t in 0..m {
                    let lab = gather_positions(tape, &label_flat, &label_pos[t], b)?;
                    rows.push(tape.concat(&[word_annots[t].clone(), lab], 1)?);
                }
                rows
            }
            _ => word_annots,
        };

        let annotations = tape.concat(&per_position, 0)?;
        let proj = {
            let p = tape.matmul(&annotations, &self.att.ua)?;
            tape.add(&p, &self.att.ba)?
        };
        Ok(EncoderOutput {
            positions: m,
            batch: b,
            annotations,
            proj,
            mask: attention_mask(&batch.src_mask),
        })
    }

    fn embed_steps(
        &self,
        tape: &mut Tape,
        emb: &Tensor,
        steps: &[Vec<usize>],
    ) -> Result<Vec<Tensor>> {
        steps.iter().map(|ids| tape.rows(emb, ids)).collect()
    }

    /// Label bi-GRU over the linearized label sequence, flattened time-major.
    fn encode_labels(&self, tape: &mut Tape, batch: &Batch) -> Result<Tensor> {
        let label_emb = self
            .label_emb
            .as_ref()
            .ok_or_else(|| Error::usage("variant has no label embeddings"))?;
        let steps = batch
            .label_steps
            .as_ref()
            .ok_or_else(|| Error::usage("batch has no label sequence"))?;
        let mask = batch.label_mask.as_ref().expect("label_steps implies mask");
        let fwd = self.label_fwd.as_ref().expect("label params exist");
        let bwd = self.label_bwd.as_ref().expect("label params exist");
        let inputs = self.embed_steps(tape, label_emb, steps)?;
        let masks: Vec<Tensor> = mask.iter().map(|r| step_mask_tensor(r)).collect();
        let annots = run_bigru(
            tape,
            fwd,
            bwd,
            &inputs,
            &masks,
            batch.size,
            self.config.label_hidden_dim,
        )?;
        tape.concat(&annots, 0)
    }

    /// Additive attention over an encoded batch:
    /// e = v' tanh(Ws s_prev + Ua h + ba), alpha = masked softmax over
    /// positions, c = sum_j alpha_j h_j. Returns (`[B, m]` alpha, `[B, A]` c).
    pub fn attention(
        &self,
        tape: &mut Tape,
        s_prev: &Tensor,
        enc: &EncoderOutput,
    ) -> Result<(Tensor, Tensor)> {
        let (m, b) = (enc.positions, enc.batch);
        let ps = tape.matmul(s_prev, &self.att.ws)?;
        let tiled = tape.tile_rows(&ps, m)?;
        let summed = tape.add(&enc.proj, &tiled)?;
        let th = tape.tanh(&summed)?;
        let scores_flat = tape.matmul(&th, &self.att.v)?;
        let scores_mb = tape.reshape(&scores_flat, m, b)?;
        let scores = tape.transpose(&scores_mb)?;
        let alpha = tape.masked_softmax(&scores, &enc.mask)?;
        let alpha_t = tape.transpose(&alpha)?;
        let alpha_flat = tape.reshape(&alpha_t, m * b, 1)?;
        let weighted = tape.mul(&enc.annotations, &alpha_flat)?;
        let c = tape.sum_tiles(&weighted, b)?;
        Ok((alpha, c))
    }

    /// Initial decoder state from the backward halves of the first
    /// annotation position; y_prev starts at EOS.
    pub fn init_decoder(&self, tape: &mut Tape, enc: &EncoderOutput) -> Result<DecoderState> {
        let cfg = &self.config;
        let b = enc.batch;
        let first = tape.narrow(&enc.annotations, 0, 0, b)?;
        let bw = tape.narrow(&first, 1, cfg.hidden_dim, cfg.hidden_dim)?;
        let init_in = match cfg.variant {
            Variant::Parallel => {
                let lb = tape.narrow(
                    &first,
                    1,
                    2 * cfg.hidden_dim + cfg.label_hidden_dim,
                    cfg.label_hidden_dim,
                )?;
                tape.concat(&[bw, lb], 1)?
            }
            _ => bw,
        };
        let s = tape.matmul(&init_in, &self.init_w)?;
        let s = tape.add(&s, &self.init_b)?;
        let s = tape.tanh(&s)?;
        Ok(DecoderState { s, y_prev: vec![EOS; b] })
    }

    /// One decoder step: attention with the previous state, GRU update from
    /// [embedding(y_prev); c], logits from a tanh layer over
    /// (s_new, embedding, c). Dropout hits the pre-softmax layer at train
    /// time. Returns (new state, `[B, V]` logits, `[B, m]` alpha).
    pub fn decoder_step(
        &self,
        tape: &mut Tape,
        state: &DecoderState,
        enc: &EncoderOutput,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DecoderState, Tensor, Tensor)> {
        let emb = tape.rows(&self.tgt_emb, &state.y_prev)?;
        let (alpha, c) = self.attention(tape, &state.s, enc)?;
        let x = tape.concat(&[emb.clone(), c.clone()], 1)?;
        let s_new = self.dec.step(tape, &x, &state.s)?;

        let readout_in = tape.concat(&[s_new.clone(), emb, c], 1)?;
        let t1 = tape.matmul(&readout_in, &self.out_w1)?;
        let t1 = tape.add(&t1, &self.out_b1)?;
        let mut t1 = tape.tanh(&t1)?;
        if train && self.config.dropout > 0.0 {
            t1 = tape.dropout(&t1, self.config.dropout, rng)?;
        }
        let logits = tape.matmul(&t1, &self.out_w2)?;
        let logits = tape.add(&logits, &self.out_b2)?;

        let next = DecoderState { s: s_new, y_prev: state.y_prev.clone() };
        Ok((next, logits, alpha))
    }

    /// Teacher-forced negative log-likelihood summed over the batch's real
    /// target tokens (padded steps contribute exactly zero).
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let enc = self.encode(tape, batch)?;
        let mut state = self.init_decoder(tape, &enc)?;
        let mut step_losses = Vec::with_capacity(batch.tgt_steps.len());
        for (ids, mask) in batch.tgt_steps.iter().zip(&batch.tgt_mask) {
            let (next, logits, _alpha) = self.decoder_step(tape, &state, &enc, train, rng)?;
            let ce = tape.cross_entropy(&logits, ids)?;
            let mask_t = step_mask_tensor(mask);
            let masked = tape.mul(&ce, &mask_t)?;
            step_losses.push(tape.sum(&masked)?);

            // carry state through padded steps, feed the gold token forward
            state.s = blend(tape, &state.s, &next.s, &mask_t)?;
            state.y_prev = ids.clone();
        }
        let all = tape.concat(&step_losses, 0)?;
        tape.sum(&all)
    }

    /// Loss for a single example (batch of one).
    pub fn sentence_loss(
        &self,
        tape: &mut Tape,
        example: &crate::data::ExamplePair,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let batch = crate::data::make_batch(&[example])?;
        self.batch_loss(tape, &batch, train, rng)
    }
}
