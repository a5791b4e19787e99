//! Human language model: a user's documents are joined with INSEP tokens
//! into blocks, and a per-user state vector is read by every attention layer
//! as an extra key/value slot and updated recurrently after each block.
//!
//! The state update is a gated convex combination:
//!
//! ```text
//! g  = sigmoid(W_g [u; h̄] + b_g)
//! c  = tanh(W_c [u; h̄] + b_c)
//! u' = (1 − g) ⊙ u + g ⊙ c
//! ```
//!
//! where `h̄` is the block's mean final-layer hidden state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::seed;
use crate::toylm::checkpoint::Checkpoint;
use crate::toylm::model::{
    forward_on_tape, Family, HiddenStates, LossSum, ModelConfig, ParamStore, ToyLm,
};
use crate::toylm::tape::{Mat, Tape, Var};
use crate::toylm::train::{fit, TrainConfig, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockMode {
    ConcatBlocks,
    OneDocPerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HulmConfig {
    pub mode: BlockMode,
    pub block_size: usize,
    pub max_blocks: usize,
}

impl HulmConfig {
    /// Desk-scale defaults: 64-token blocks, 8 blocks when concatenating
    /// and 16 with one document per block.
    pub fn desk(mode: BlockMode) -> HulmConfig {
        HulmConfig {
            mode,
            block_size: 64,
            max_blocks: match mode {
                BlockMode::ConcatBlocks => 8,
                BlockMode::OneDocPerBlock => 16,
            },
        }
    }
}

/// One document of a user, already encoded to word ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDocument {
    pub doc_id: String,
    pub wave_id: u32,
    pub tokens: Vec<u32>,
}

/// The part of one document that landed in one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub wave_id: u32,
    /// Span of the document's words within the block.
    pub start: usize,
    pub len: usize,
    /// Block position of the INSEP closing the document, if it is here.
    pub insep: Option<usize>,
    /// Set on the last piece of a document that lost words to truncation.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub tokens: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl Block {
    /// Wave of the block's first document.
    pub fn wave_id(&self) -> u32 {
        self.segments[0].wave_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub user_id: String,
    pub blocks: Vec<Block>,
    pub mode: BlockMode,
    pub block_size: usize,
    pub max_blocks: usize,
    /// Documents that did not fit into `max_blocks` at all.
    pub dropped_docs: usize,
}

impl BlockPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Doc ids in block order, each listed once.
    pub fn doc_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for seg in self.blocks.iter().flat_map(|b| &b.segments) {
            if ids.last() != Some(&seg.doc_id.as_str()) {
                ids.push(&seg.doc_id);
            }
        }
        ids
    }
}

/// Packs a user's documents (in temporal order) into blocks.
pub fn assemble_blocks(
    user_id: &str,
    docs: &[UserDocument],
    cfg: &HulmConfig,
    insep: u32,
) -> Result<BlockPlan> {
    if docs.is_empty() {
        return Err(Error::Data(format!(
            "user `{user_id}` has no documents to assemble"
        )));
    }
    if cfg.block_size < 2 {
        return Err(Error::Config("block_size must be at least 2".into()));
    }
    if cfg.max_blocks == 0 {
        return Err(Error::Config("max_blocks must be at least 1".into()));
    }
    let mut blocks = Vec::new();
    let mut dropped = 0;
    match cfg.mode {
        BlockMode::OneDocPerBlock => {
            for doc in docs {
                if blocks.len() == cfg.max_blocks {
                    dropped += 1;
                    continue;
                }
                let keep = doc.tokens.len().min(cfg.block_size - 1);
                let mut tokens = doc.tokens[..keep].to_vec();
                tokens.push(insep);
                blocks.push(Block {
                    tokens,
                    segments: vec![Segment {
                        doc_id: doc.doc_id.clone(),
                        wave_id: doc.wave_id,
                        start: 0,
                        len: keep,
                        insep: Some(keep),
                        truncated: keep < doc.tokens.len(),
                    }],
                });
            }
        }
        BlockMode::ConcatBlocks => {
            let mut current = Block {
                tokens: Vec::new(),
                segments: Vec::new(),
            };
            let mut full = false;
            'docs: for doc in docs {
                if full {
                    dropped += 1;
                    continue;
                }
                let mut placed_any = false;
                let mut seg: Option<Segment> = None;
                // the document's words followed by its INSEP
                for (i, &tok) in doc.tokens.iter().chain(std::iter::once(&insep)).enumerate() {
                    if current.tokens.len() == cfg.block_size {
                        if let Some(s) = seg.take() {
                            current.segments.push(s);
                        }
                        if blocks.len() + 1 == cfg.max_blocks {
                            blocks.push(std::mem::replace(
                                &mut current,
                                Block {
                                    tokens: Vec::new(),
                                    segments: Vec::new(),
                                },
                            ));
                            full = true;
                            if placed_any {
                                if let Some(last) =
                                    blocks.last_mut().and_then(|b| b.segments.last_mut())
                                {
                                    last.truncated = true;
                                }
                            } else {
                                dropped += 1;
                            }
                            continue 'docs;
                        }
                        blocks.push(std::mem::replace(
                            &mut current,
                            Block {
                                tokens: Vec::new(),
                                segments: Vec::new(),
                            },
                        ));
                    }
                    let s = seg.get_or_insert_with(|| Segment {
                        doc_id: doc.doc_id.clone(),
                        wave_id: doc.wave_id,
                        start: current.tokens.len(),
                        len: 0,
                        insep: None,
                        truncated: false,
                    });
                    if i < doc.tokens.len() {
                        s.len += 1;
                    } else {
                        s.insep = Some(current.tokens.len());
                    }
                    current.tokens.push(tok);
                    placed_any = true;
                }
                if let Some(s) = seg.take() {
                    current.segments.push(s);
                }
            }
            if !current.tokens.is_empty() {
                blocks.push(current);
            }
        }
    }
    if dropped > 0 {
        log::warn!(
            "user `{user_id}`: {dropped} document(s) exceed {} blocks and were dropped",
            cfg.max_blocks
        );
    }
    Ok(BlockPlan {
        user_id: user_id.to_string(),
        blocks,
        mode: cfg.mode,
        block_size: cfg.block_size,
        max_blocks: cfg.max_blocks,
        dropped_docs: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub vector: Vec<f64>,
    /// Number of blocks processed to reach this state; 0 is the initial one.
    pub block_index: usize,
}

/// Parameters of the gated user-state recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RecurrenceIds {
    w_gate: usize,
    b_gate: usize,
    w_cand: usize,
    b_cand: usize,
    u0: usize,
}

/// Records one gated update of `u` given block summary `hbar` on `tape`.
fn record_update(tape: &mut Tape, vars: &[Var], rec: &RecurrenceIds, u: Var, hbar: Var) -> Var {
    let x = tape.concat_cols(u, hbar);
    let gz = tape.linear(x, vars[rec.w_gate], vars[rec.b_gate]);
    let gate = tape.sigmoid(gz);
    let cz = tape.linear(x, vars[rec.w_cand], vars[rec.b_cand]);
    let cand = tape.tanh(cz);
    tape.lerp(u, cand, gate)
}

/// Per-block outputs of one user pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HulmOutput {
    pub plan: BlockPlan,
    pub blocks: Vec<HiddenStates>,
    /// Post-update state of every block; `states[b].block_index == b + 1`.
    pub states: Vec<UserState>,
    /// `(doc_id, position)` of each INSEP closing a document, per block.
    pub insep_positions: Vec<Vec<(String, usize)>>,
}

/// Block selection for [`extract_user_representation`].
#[derive(Debug, Clone, PartialEq)]
pub enum Scope {
    All,
    /// Blocks whose first document belongs to this wave.
    Wave(u32),
    /// Explicit block indices.
    Blocks(Vec<usize>),
}

/// Hidden states of one document gathered across the blocks it spans.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentView {
    /// Rows: the document's words in order, then its INSEP if present.
    pub hidden: HiddenStates,
    pub insep_position: Option<usize>,
    pub truncated: bool,
    /// Block holding the document's closing INSEP.
    pub closing_block: Option<usize>,
}

impl HulmOutput {
    pub fn document_view(&self, doc_id: &str) -> Option<DocumentView> {
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); self.blocks.first()?.values.len()];
        let mut token_ids = Vec::new();
        let mut insep_row: Option<(usize, usize)> = None;
        let mut truncated = false;
        let mut found = false;
        let d = self.blocks[0].d_model();
        for (b, block) in self.plan.blocks.iter().enumerate() {
            for seg in block.segments.iter().filter(|s| s.doc_id == doc_id) {
                found = true;
                truncated |= seg.truncated;
                for pos in seg.start..seg.start + seg.len {
                    for (l, v) in values.iter_mut().enumerate() {
                        v.extend_from_slice(self.blocks[b].state(l, pos));
                    }
                    token_ids.push(block.tokens[pos]);
                }
                if let Some(p) = seg.insep {
                    insep_row = Some((b, p));
                }
            }
        }
        if !found {
            return None;
        }
        let mut insep_position = None;
        if let Some((b, p)) = insep_row {
            insep_position = Some(token_ids.len());
            for (l, v) in values.iter_mut().enumerate() {
                v.extend_from_slice(self.blocks[b].state(l, p));
            }
            token_ids.push(self.plan.blocks[b].tokens[p]);
        }
        let rows = token_ids.len();
        Some(DocumentView {
            hidden: HiddenStates {
                values: values
                    .into_iter()
                    .map(|v| Mat::from_vec(rows, d, v))
                    .collect(),
                attention_mask: vec![true; rows],
                token_ids,
            },
            insep_position,
            truncated,
            closing_block: insep_row.map(|(b, _)| b),
        })
    }

    /// Post-update state of the block that closes `doc_id`. Only meaningful
    /// with one document per block.
    pub fn document_state(&self, doc_id: &str) -> Option<&UserState> {
        self.insep_positions
            .iter()
            .position(|closing| closing.iter().any(|(d, _)| d == doc_id))
            .map(|b| &self.states[b])
    }
}

/// Mean of the post-update user states over the selected blocks.
pub fn extract_user_representation(out: &HulmOutput, scope: &Scope) -> Result<Vec<f64>> {
    let selected: Vec<usize> = match scope {
        Scope::All => (0..out.states.len()).collect(),
        Scope::Wave(w) => (0..out.states.len())
            .filter(|&b| out.plan.blocks[b].wave_id() == *w)
            .collect(),
        Scope::Blocks(bs) => {
            if let Some(&bad) = bs.iter().find(|&&b| b >= out.states.len()) {
                return Err(Error::Data(format!("block {bad} is out of range")));
            }
            bs.clone()
        }
    };
    if selected.is_empty() {
        return Err(Error::Data(format!(
            "scope {scope:?} selects no blocks of user `{}`",
            out.plan.user_id
        )));
    }
    let d = out.states[0].vector.len();
    let mut mean = vec![0.0; d];
    for &b in &selected {
        for (m, v) in mean.iter_mut().zip(&out.states[b].vector) {
            *m += v;
        }
    }
    let n = selected.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// A causal toy transformer plus the user-state recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Hulm {
    pub lm: ToyLm,
    pub hulm: HulmConfig,
    rec: RecurrenceIds,
}

impl Hulm {
    /// The transformer is always autoregressive; `config.family` is ignored.
    pub fn new(mut config: ModelConfig, hulm: HulmConfig) -> Result<Hulm> {
        config.family = Family::Autoregressive;
        let mut lm = ToyLm::new(config)?;
        let d = lm.config.d_model;
        let mut rng = seed::rng(lm.config.seed, "init.recurrence");
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, crate::toylm::model::INIT_STD).expect("positive std");
        let mut gaussian = |rows: usize, cols: usize| {
            Mat::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
            )
        };
        let w_gate = gaussian(2 * d, d);
        let w_cand = gaussian(2 * d, d);
        let u0 = gaussian(1, d);
        let p = &mut lm.params;
        let rec = RecurrenceIds {
            w_gate: p.push("recurrence.w_gate", w_gate),
            b_gate: p.push("recurrence.b_gate", Mat::zeros(1, d)),
            w_cand: p.push("recurrence.w_cand", w_cand),
            b_cand: p.push("recurrence.b_cand", Mat::zeros(1, d)),
            u0: p.push("recurrence.u0", u0),
        };
        Ok(Hulm { lm, hulm, rec })
    }

    pub fn from_params(config: ModelConfig, hulm: HulmConfig, params: ParamStore) -> Result<Hulm> {
        let d = config.d_model;
        let find = |name: &str, rows: usize, cols: usize| -> Result<usize> {
            let id = params
                .index_of(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor `{name}`")))?;
            let t = params.get(id);
            if (t.rows, t.cols) != (rows, cols) {
                return Err(Error::Data(format!("tensor `{name}` has the wrong shape")));
            }
            Ok(id)
        };
        let rec = RecurrenceIds {
            w_gate: find("recurrence.w_gate", 2 * d, d)?,
            b_gate: find("recurrence.b_gate", 1, d)?,
            w_cand: find("recurrence.w_cand", 2 * d, d)?,
            b_cand: find("recurrence.b_cand", 1, d)?,
            u0: find("recurrence.u0", 1, d)?,
        };
        let lm = ToyLm::from_params(config, params)?;
        if lm.config.family != Family::Autoregressive {
            return Err(Error::Data(
                "a HuLM checkpoint must be autoregressive".into(),
            ));
        }
        Ok(Hulm { lm, hulm, rec })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.lm.config
    }

    pub fn d_model(&self) -> usize {
        self.lm.config.d_model
    }

    pub fn initial_state(&self) -> UserState {
        UserState {
            vector: self.lm.params.get(self.rec.u0).data.clone(),
            block_index: 0,
        }
    }

    pub fn assemble(&self, user_id: &str, docs: &[UserDocument]) -> Result<BlockPlan> {
        assemble_blocks(user_id, docs, &self.hulm, self.lm.specials.insep)
    }

    fn check_block(&self, tokens: &[u32]) -> Result<()> {
        // one position is taken by the user-state memory slot
        self.lm
            .check_ids(tokens, self.lm.config.max_seq_len.saturating_sub(1))
    }

    /// One gated state update applied outside any user pass.
    pub fn update_user_state(&self, u: &UserState, block_summary: &[f64]) -> Result<UserState> {
        let d = self.d_model();
        if u.vector.len() != d || block_summary.len() != d {
            return Err(Error::Shape(format!(
                "state has {} and summary {} entries, expected {d}",
                u.vector.len(),
                block_summary.len()
            )));
        }
        if u.vector.iter().chain(block_summary).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "non-finite user state or block summary".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.lm.params.load_onto(&mut tape);
        let uv = tape.constant(Mat::from_vec(1, d, u.vector.clone()));
        let hv = tape.constant(Mat::from_vec(1, d, block_summary.to_vec()));
        let next = record_update(&mut tape, &vars, &self.rec, uv, hv);
        Ok(UserState {
            vector: tape.value(next).data.clone(),
            block_index: u.block_index + 1,
        })
    }

    /// Records the whole user pass. Returns per-block forward handles, the
    /// block summaries and the post-update states.
    fn record_pass(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        plan: &BlockPlan,
        start: Option<&[f64]>,
    ) -> Result<(Vec<crate::toylm::model::ForwardVars>, Vec<Var>, Vec<Var>)> {
        if plan.blocks.is_empty() {
            return Err(Error::Data(format!(
                "plan for user `{}` has no blocks",
                plan.user_id
            )));
        }
        let pad = self.lm.specials.pad;
        let n_layers = self.lm.config.n_layers;
        let mut u = match start {
            Some(v) => {
                if v.len() != self.d_model() {
                    return Err(Error::Shape("initial state has the wrong width".into()));
                }
                tape.constant(Mat::from_vec(1, v.len(), v.to_vec()))
            }
            None => vars[self.rec.u0],
        };
        let mut forwards = Vec::with_capacity(plan.blocks.len());
        let mut summaries = Vec::with_capacity(plan.blocks.len());
        let mut states = Vec::with_capacity(plan.blocks.len());
        for block in &plan.blocks {
            self.check_block(&block.tokens)?;
            let fw = forward_on_tape(
                &self.lm.config,
                &self.lm.layout,
                vars,
                tape,
                &block.tokens,
                pad,
                Some(u),
            );
            let rows: Vec<usize> = (0..block.tokens.len())
                .filter(|&t| block.tokens[t] != pad)
                .collect();
            let hbar = tape.mean_rows(fw.hidden[n_layers], &rows);
            u = record_update(tape, vars, &self.rec, u, hbar);
            forwards.push(fw);
            summaries.push(hbar);
            states.push(u);
        }
        Ok((forwards, summaries, states))
    }

    pub fn forward_user(&self, plan: &BlockPlan) -> Result<HulmOutput> {
        self.forward_user_from(plan, None)
    }

    /// User pass starting from an explicit prior state instead of `u₀`.
    pub fn forward_user_from(&self, plan: &BlockPlan, start: Option<&[f64]>) -> Result<HulmOutput> {
        let mut tape = Tape::new();
        let vars = self.lm.params.load_onto(&mut tape);
        let (forwards, _, states) = self.record_pass(&mut tape, &vars, plan, start)?;
        let pad = self.lm.specials.pad;
        let blocks = forwards
            .iter()
            .zip(&plan.blocks)
            .map(|(fw, b)| HiddenStates::from_tape(&tape, &fw.hidden, &b.tokens, pad))
            .collect();
        let states = states
            .iter()
            .enumerate()
            .map(|(b, &s)| UserState {
                vector: tape.value(s).data.clone(),
                block_index: b + 1,
            })
            .collect();
        let insep_positions = plan
            .blocks
            .iter()
            .map(|b| {
                b.segments
                    .iter()
                    .filter_map(|s| s.insep.map(|p| (s.doc_id.clone(), p)))
                    .collect()
            })
            .collect();
        Ok(HulmOutput {
            plan: plan.clone(),
            blocks,
            states,
            insep_positions,
        })
    }

    /// Block-wise next-token targets: position `t` predicts `tokens[t + 1]`.
    fn block_targets(&self, tokens: &[u32]) -> Vec<Option<usize>> {
        let pad = self.lm.specials.pad;
        (0..tokens.len())
            .map(|t| {
                let next = *tokens.get(t + 1)?;
                (tokens[t] != pad && next != pad).then_some(next as usize)
            })
            .collect()
    }

    fn user_loss(
        &self,
        plan: &BlockPlan,
        with_grad: bool,
    ) -> Result<(LossSum, Option<Vec<Option<Mat>>>)> {
        let mut tape = Tape::new();
        let vars = self.lm.params.load_onto(&mut tape);
        let (forwards, _, _) = self.record_pass(&mut tape, &vars, plan, None)?;
        let mut terms = Vec::with_capacity(forwards.len());
        let mut count = 0;
        for (fw, block) in forwards.iter().zip(&plan.blocks) {
            let targets = self.block_targets(&block.tokens);
            count += targets.iter().filter(|t| t.is_some()).count();
            terms.push(tape.cross_entropy_sum(fw.logits, &targets));
        }
        let total = tape.sum(&terms);
        let sum = tape.value(total).scalar();
        let grads = with_grad.then(|| tape.backward(total, self.lm.params.len()));
        Ok((LossSum { sum, count }, grads))
    }

    /// Mean within-block next-token cross-entropy over the plans.
    pub fn lm_loss(&self, plans: &[BlockPlan]) -> Result<f64> {
        let sums = par::map(plans, |p| self.user_loss(p, false).map(|r| r.0));
        let mut total = LossSum { sum: 0.0, count: 0 };
        for s in sums {
            let s = s?;
            total.sum += s.sum;
            total.count += s.count;
        }
        if total.count == 0 {
            return Err(Error::Data("plans have no predictable positions".into()));
        }
        Ok(total.sum / total.count as f64)
    }

    pub fn loss_and_grad(&self, plans: &[&BlockPlan]) -> Result<(f64, Vec<Mat>)> {
        self.loss_and_grad_with(Exec::default(), plans)
    }

    /// Users are differentiated independently and reduced in input order.
    pub fn loss_and_grad_with(&self, exec: Exec, plans: &[&BlockPlan]) -> Result<(f64, Vec<Mat>)> {
        if plans.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let results = par::map_with(exec, plans, |p| self.user_loss(p, true));
        let mut sum = 0.0;
        let mut count = 0;
        let mut grads: Vec<Mat> = self
            .lm
            .params
            .iter()
            .map(|(_, m)| Mat::zeros(m.rows, m.cols))
            .collect();
        for r in results {
            let (ls, g) = r?;
            sum += ls.sum;
            count += ls.count;
            for (acc, g) in grads.iter_mut().zip(g.expect("requested gradients")) {
                if let Some(g) = g {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
            }
        }
        if count == 0 {
            return Err(Error::Data("plans have no predictable positions".into()));
        }
        let n = count as f64;
        grads
            .iter_mut()
            .for_each(|g| g.data.iter_mut().for_each(|v| *v /= n));
        Ok((sum / n, grads))
    }

    /// Loss on a new document's words `doc[1..]` after the user's `history`,
    /// with the document as one extra block. Targets match
    /// [`ToyLm::document_loss`].
    pub fn conditional_document_loss(
        &self,
        history: Option<&BlockPlan>,
        doc: &[u32],
    ) -> Result<LossSum> {
        let state = match history {
            Some(plan) => self
                .forward_user(plan)?
                .states
                .last()
                .expect("non-empty plan")
                .vector
                .clone(),
            None => self.initial_state().vector,
        };
        let mut tokens = doc.to_vec();
        tokens.push(self.lm.specials.insep);
        self.check_block(&tokens)?;
        let mut tape = Tape::new();
        let vars = self.lm.params.load_onto(&mut tape);
        let u = tape.constant(Mat::from_vec(1, state.len(), state));
        let fw = forward_on_tape(
            &self.lm.config,
            &self.lm.layout,
            &vars,
            &mut tape,
            &tokens,
            self.lm.specials.pad,
            Some(u),
        );
        // position t predicts doc[t + 1]; the closing INSEP is not scored
        let targets: Vec<Option<usize>> = (0..tokens.len())
            .map(|t| (t + 1 < doc.len()).then(|| doc[t + 1] as usize))
            .collect();
        let ce = tape.cross_entropy_sum(fw.logits, &targets);
        Ok(LossSum {
            sum: tape.value(ce).scalar(),
            count: targets.iter().filter(|t| t.is_some()).count(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::to_value(&self.hulm).expect("hulm config serializes");
        Checkpoint::new("hulm", &self.lm.config, &self.lm.params, Some(extra)).save(path)
    }

    pub fn load(path: &Path) -> Result<Hulm> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "hulm" {
            return Err(Error::Data(format!(
                "checkpoint holds a `{}`, not a hulm",
                ck.kind
            )));
        }
        let hulm: HulmConfig = ck
            .extra
            .clone()
            .ok_or_else(|| Error::Data("hulm checkpoint lacks block settings".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Data(e.to_string())))?;
        Hulm::from_params(ck.config.clone(), hulm, ck.params()?)
    }
}

impl Trainable for Hulm {
    type Item = BlockPlan;

    fn params(&self) -> &ParamStore {
        &self.lm.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.lm.params
    }

    fn batch_loss_and_grad(
        &self,
        batch: &[&BlockPlan],
        _step_seed: u64,
    ) -> Result<(f64, Vec<Mat>)> {
        self.loss_and_grad(batch)
    }
}

/// Trains on whole-user plans; gradients run through the recurrence across
/// all blocks of a plan.
pub fn train_hulm(model: &mut Hulm, plans: &[BlockPlan], cfg: &TrainConfig) -> Result<Vec<f64>> {
    fit(model, plans, cfg)
}
