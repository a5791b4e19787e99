use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use super::tokenizer::SpecialIds;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Autoregressive,
    MaskedEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub family: Family,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.tensors[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Puts every parameter on `tape` and returns the leaf handles.
    pub fn load_onto(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t))
            .collect()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Where each transformer parameter lives in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerIds>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

pub const INIT_STD: f64 = 0.02;

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let normal = Normal::new(0.0, std).expect("positive std");
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(rng)).collect(),
    )
}

fn ones(cols: usize) -> Mat {
    Mat::from_vec(1, cols, vec![1.0; cols])
}

impl Layout {
    /// Appends freshly initialized transformer parameters to `store`.
    pub fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Layout {
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        // residual output projections are scaled down with depth
        let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        let tok_emb = store.push("tok_emb", gaussian(rng, v, d, INIT_STD));
        let pos_emb = store.push("pos_emb", gaussian(rng, cfg.max_seq_len, d, INIT_STD));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                ln1_g: store.push(p("ln1.gamma"), ones(d)),
                ln1_b: store.push(p("ln1.beta"), Mat::zeros(1, d)),
                wq: store.push(p("attn.wq"), gaussian(rng, d, d, INIT_STD)),
                bq: store.push(p("attn.bq"), Mat::zeros(1, d)),
                wk: store.push(p("attn.wk"), gaussian(rng, d, d, INIT_STD)),
                bk: store.push(p("attn.bk"), Mat::zeros(1, d)),
                wv: store.push(p("attn.wv"), gaussian(rng, d, d, INIT_STD)),
                bv: store.push(p("attn.bv"), Mat::zeros(1, d)),
                wo: store.push(p("attn.wo"), gaussian(rng, d, d, resid_std)),
                bo: store.push(p("attn.bo"), Mat::zeros(1, d)),
                ln2_g: store.push(p("ln2.gamma"), ones(d)),
                ln2_b: store.push(p("ln2.beta"), Mat::zeros(1, d)),
                w1: store.push(p("mlp.w1"), gaussian(rng, d, f, INIT_STD)),
                b1: store.push(p("mlp.b1"), Mat::zeros(1, f)),
                w2: store.push(p("mlp.w2"), gaussian(rng, f, d, resid_std)),
                b2: store.push(p("mlp.b2"), Mat::zeros(1, d)),
            });
        }
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: store.push("ln_f.gamma", ones(d)),
            lnf_b: store.push("ln_f.beta", Mat::zeros(1, d)),
            head_w: store.push("head.w", gaussian(rng, d, v, INIT_STD)),
            head_b: store.push("head.b", Mat::zeros(1, v)),
        }
    }

    /// Recovers the layout of a store built by [`Layout::init`].
    pub fn locate(cfg: &ModelConfig, store: &ParamStore) -> Result<Layout> {
        let find = |name: String, rows: usize, cols: usize| -> Result<usize> {
            let id = store
                .index_of(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor `{name}`")))?;
            let t = store.get(id);
            if (t.rows, t.cols) != (rows, cols) {
                return Err(Error::Data(format!(
                    "tensor `{name}` is {}x{}, expected {rows}x{cols}",
                    t.rows, t.cols
                )));
            }
            Ok(id)
        };
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                ln1_g: find(p("ln1.gamma"), 1, d)?,
                ln1_b: find(p("ln1.beta"), 1, d)?,
                wq: find(p("attn.wq"), d, d)?,
                bq: find(p("attn.bq"), 1, d)?,
                wk: find(p("attn.wk"), d, d)?,
                bk: find(p("attn.bk"), 1, d)?,
                wv: find(p("attn.wv"), d, d)?,
                bv: find(p("attn.bv"), 1, d)?,
                wo: find(p("attn.wo"), d, d)?,
                bo: find(p("attn.bo"), 1, d)?,
                ln2_g: find(p("ln2.gamma"), 1, d)?,
                ln2_b: find(p("ln2.beta"), 1, d)?,
                w1: find(p("mlp.w1"), d, f)?,
                b1: find(p("mlp.b1"), 1, f)?,
                w2: find(p("mlp.w2"), f, d)?,
                b2: find(p("mlp.b2"), 1, d)?,
            });
        }
        Ok(Layout {
            tok_emb: find("tok_emb".into(), v, d)?,
            pos_emb: find("pos_emb".into(), cfg.max_seq_len, d)?,
            layers,
            lnf_g: find("ln_f.gamma".into(), 1, d)?,
            lnf_b: find("ln_f.beta".into(), 1, d)?,
            head_w: find("head.w".into(), d, v)?,
            head_b: find("head.b".into(), 1, v)?,
        })
    }
}

/// Tape handles produced by one transformer pass.
pub struct ForwardVars {
    /// `n_layers + 1` entries: embedding output, then each block's output;
    /// the last entry is taken after the final layer norm.
    pub hidden: Vec<Var>,
    pub logits: Var,
}

/// Attention visibility: `causal` restricts queries to keys at or before
/// their own position, PAD keys are never visible, and an optional memory
/// slot at key index 0 is visible to every query.
pub fn visibility(ids: &[u32], pad: u32, causal: bool, memory: bool) -> Vec<bool> {
    let t_len = ids.len();
    let off = usize::from(memory);
    let s_len = t_len + off;
    let mut visible = vec![false; t_len * s_len];
    for t in 0..t_len {
        if memory {
            visible[t * s_len] = true;
        }
        for s in 0..t_len {
            if (!causal || s <= t) && ids[s] != pad {
                visible[t * s_len + s + off] = true;
            }
        }
        // a PAD query with no visible key (never in well-formed inputs) reads itself
        if !visible[t * s_len..(t + 1) * s_len].iter().any(|&v| v) {
            visible[t * s_len + t + off] = true;
        }
    }
    visible
}

/// Records a full transformer pass over `ids` on `tape`. `memory`, when
/// present, is a `1 × d_model` row prepended to every layer's keys and
/// values as a read-only slot.
pub fn forward_on_tape(
    cfg: &ModelConfig,
    layout: &Layout,
    params: &[Var],
    tape: &mut Tape,
    ids: &[u32],
    pad: u32,
    memory: Option<Var>,
) -> ForwardVars {
    let causal = cfg.family == Family::Autoregressive;
    let visible = visibility(ids, pad, causal, memory.is_some());
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather(params[layout.tok_emb], &idx);
    let pos = tape.gather(params[layout.pos_emb], &positions);
    let mut x = tape.add(tok, pos);
    let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
    hidden.push(x);
    for (l, ly) in layout.layers.iter().enumerate() {
        let h = tape.layer_norm(x, params[ly.ln1_g], params[ly.ln1_b]);
        let kv_in = match memory {
            Some(m) => tape.concat_rows(m, h),
            None => h,
        };
        let q = tape.linear(h, params[ly.wq], params[ly.bq]);
        let k = tape.linear(kv_in, params[ly.wk], params[ly.bk]);
        let v = tape.linear(kv_in, params[ly.wv], params[ly.bv]);
        let a = tape.attention(q, k, v, cfg.n_heads, &visible);
        let o = tape.linear(a, params[ly.wo], params[ly.bo]);
        x = tape.add(x, o);
        let h2 = tape.layer_norm(x, params[ly.ln2_g], params[ly.ln2_b]);
        let f1 = tape.linear(h2, params[ly.w1], params[ly.b1]);
        let f1 = tape.gelu(f1);
        let f2 = tape.linear(f1, params[ly.w2], params[ly.b2]);
        x = tape.add(x, f2);
        if l + 1 == cfg.n_layers {
            let out = tape.layer_norm(x, params[layout.lnf_g], params[layout.lnf_b]);
            hidden.push(out);
        } else {
            hidden.push(x);
        }
    }
    let last = *hidden.last().expect("at least one layer");
    let logits = tape.linear(last, params[layout.head_w], params[layout.head_b]);
    ForwardVars { hidden, logits }
}

/// Per-layer activations for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    /// `n_layers + 1` matrices of shape `seq_len × d_model`; index 0 is the
    /// embedding output and the last index the final (layer-normed) layer.
    pub values: Vec<Mat>,
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
}

impl HiddenStates {
    pub fn n_layers(&self) -> usize {
        self.values.len() - 1
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn d_model(&self) -> usize {
        self.values[0].cols
    }

    /// `[n_layers + 1, seq_len, d_model]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.values.len(), self.seq_len(), self.d_model()]
    }

    pub fn state(&self, layer: usize, position: usize) -> &[f64] {
        self.values[layer].row(position)
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|m| m.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn from_tape(tape: &Tape, hidden: &[Var], ids: &[u32], pad: u32) -> HiddenStates {
        HiddenStates {
            values: hidden.iter().map(|&v| tape.value(v).clone()).collect(),
            token_ids: ids.to_vec(),
            attention_mask: ids.iter().map(|&i| i != pad).collect(),
        }
    }
}

/// A toy transformer language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) layout: Layout,
    pub specials: SpecialIds,
}

/// Unnormalized loss of one item: summed cross-entropy and target count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSum {
    pub sum: f64,
    pub count: usize,
}

pub const MASK_RATE: f64 = 0.15;

impl ToyLm {
    pub fn new(config: ModelConfig) -> Result<ToyLm> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seed::rng(config.seed, "init");
        let layout = Layout::init(&config, &mut params, &mut rng);
        Ok(ToyLm {
            config,
            params,
            layout,
            specials: SpecialIds::DEFAULT,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<ToyLm> {
        config.validate()?;
        let layout = Layout::locate(&config, &params)?;
        Ok(ToyLm {
            config,
            params,
            layout,
            specials: SpecialIds::DEFAULT,
        })
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub(crate) fn check_ids(&self, ids: &[u32], limit: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        if ids.len() > limit {
            return Err(Error::Shape(format!(
                "sequence of {} tokens exceeds the limit of {limit}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn check_start(&self, ids: &[u32]) -> Result<()> {
        let (want, name) = match self.config.family {
            Family::Autoregressive => (self.specials.bos, "BOS"),
            Family::MaskedEncoder => (self.specials.cls, "CLS"),
        };
        if ids[0] != want {
            return Err(Error::Shape(format!(
                "{:?} inputs must start with {name}",
                self.config.family
            )));
        }
        Ok(())
    }

    /// Hidden states of every layer for one input sequence.
    pub fn forward_hidden_states(&self, ids: &[u32]) -> Result<HiddenStates> {
        self.check_ids(ids, self.config.max_seq_len)?;
        self.check_start(ids)?;
        let mut tape = Tape::new();
        let vars = self.params.load_onto(&mut tape);
        let fw = forward_on_tape(
            &self.config,
            &self.layout,
            &vars,
            &mut tape,
            ids,
            self.specials.pad,
            None,
        );
        Ok(HiddenStates::from_tape(
            &tape,
            &fw.hidden,
            ids,
            self.specials.pad,
        ))
    }

    /// Masked positions of item `item` under `mask_seed`: 15% of the word
    /// positions, at least one when any exists.
    pub fn mask_positions(&self, ids: &[u32], mask_seed: u64, item: u64) -> Vec<usize> {
        let s = self.specials;
        let candidates: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| ![s.pad, s.cls, s.sep, s.bos, s.insep, s.mask].contains(&id))
            .map(|(i, _)| i)
            .collect();
        let mut rng = seed::indexed_rng(mask_seed, "mask", item);
        let mut chosen: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|_| rng.random_bool(MASK_RATE))
            .collect();
        if chosen.is_empty() && !candidates.is_empty() {
            chosen.push(candidates[rng.random_range(0..candidates.len())]);
        }
        chosen
    }

    /// Inputs and per-position targets of one training item.
    pub fn training_targets(
        &self,
        ids: &[u32],
        mask_seed: u64,
        item: u64,
    ) -> (Vec<u32>, Vec<Option<usize>>) {
        let pad = self.specials.pad;
        match self.config.family {
            Family::Autoregressive => {
                let targets = (0..ids.len())
                    .map(|t| {
                        let next = *ids.get(t + 1)?;
                        (ids[t] != pad && next != pad).then_some(next as usize)
                    })
                    .collect();
                (ids.to_vec(), targets)
            }
            Family::MaskedEncoder => {
                let mut inputs = ids.to_vec();
                let mut targets = vec![None; ids.len()];
                for p in self.mask_positions(ids, mask_seed, item) {
                    targets[p] = Some(ids[p] as usize);
                    inputs[p] = self.specials.mask;
                }
                (inputs, targets)
            }
        }
    }

    fn item_loss(
        &self,
        ids: &[u32],
        mask_seed: u64,
        item: u64,
        with_grad: bool,
    ) -> Result<(LossSum, Option<Vec<Option<Mat>>>)> {
        self.check_ids(ids, self.config.max_seq_len)?;
        let (inputs, targets) = self.training_targets(ids, mask_seed, item);
        let count = targets.iter().filter(|t| t.is_some()).count();
        let mut tape = Tape::new();
        let vars = self.params.load_onto(&mut tape);
        let fw = forward_on_tape(
            &self.config,
            &self.layout,
            &vars,
            &mut tape,
            &inputs,
            self.specials.pad,
            None,
        );
        let ce = tape.cross_entropy_sum(fw.logits, &targets);
        let sum = tape.value(ce).scalar();
        let grads = with_grad.then(|| tape.backward(ce, self.params.len()));
        Ok((LossSum { sum, count }, grads))
    }

    /// Mean cross-entropy over the predictable positions of `batch`.
    pub fn lm_loss(&self, batch: &[Vec<u32>], mask_seed: u64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let items: Vec<(u64, &Vec<u32>)> = (0..).zip(batch).collect();
        let sums = par::map(&items, |(i, ids)| {
            self.item_loss(ids, mask_seed, *i, false).map(|r| r.0)
        });
        let mut total = LossSum { sum: 0.0, count: 0 };
        for s in sums {
            let s = s?;
            total.sum += s.sum;
            total.count += s.count;
        }
        if total.count == 0 {
            return Err(Error::Data("batch has no predictable positions".into()));
        }
        Ok(total.sum / total.count as f64)
    }

    /// Mean loss and its gradient for every parameter.
    pub fn loss_and_grad(&self, batch: &[Vec<u32>], mask_seed: u64) -> Result<(f64, Vec<Mat>)> {
        self.loss_and_grad_with(Exec::default(), batch, mask_seed)
    }

    /// [`ToyLm::loss_and_grad`] with an explicit execution mode. Items are
    /// differentiated independently and reduced in batch order.
    pub fn loss_and_grad_with(
        &self,
        exec: Exec,
        batch: &[Vec<u32>],
        mask_seed: u64,
    ) -> Result<(f64, Vec<Mat>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let items: Vec<(u64, &Vec<u32>)> = (0..).zip(batch).collect();
        let results = par::map_with(exec, &items, |(i, ids)| {
            self.item_loss(ids, mask_seed, *i, true)
        });
        let mut sum = 0.0;
        let mut count = 0;
        let mut grads: Vec<Mat> = self
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
            return Err(Error::Data("batch has no predictable positions".into()));
        }
        let n = count as f64;
        for g in &mut grads {
            g.data.iter_mut().for_each(|v| *v /= n);
        }
        Ok((sum / n, grads))
    }

    /// Loss of a single document's words `doc` given only the preceding
    /// words of the same document: targets are `doc[1..]`. Used to compare
    /// against a user-conditioned model on the same targets.
    pub fn document_loss(&self, doc: &[u32]) -> Result<LossSum> {
        if self.config.family != Family::Autoregressive {
            return Err(Error::Data(
                "document_loss needs an autoregressive model".into(),
            ));
        }
        let mut ids = Vec::with_capacity(doc.len() + 1);
        ids.push(self.specials.bos);
        ids.extend_from_slice(doc);
        // skip BOS → doc[0]
        self.sequence_loss(&ids, |t| t >= 1)
    }

    /// Summed next-token loss of `ids` over the positions `t` for which
    /// `scored(t)` holds; position `t` predicts `ids[t + 1]`. No framing is
    /// added or checked.
    pub fn sequence_loss(&self, ids: &[u32], scored: impl Fn(usize) -> bool) -> Result<LossSum> {
        self.check_ids(ids, self.config.max_seq_len)?;
        let targets: Vec<Option<usize>> = (0..ids.len())
            .map(|t| (t + 1 < ids.len() && scored(t)).then(|| ids[t + 1] as usize))
            .collect();
        let mut tape = Tape::new();
        let vars = self.params.load_onto(&mut tape);
        let fw = forward_on_tape(
            &self.config,
            &self.layout,
            &vars,
            &mut tape,
            ids,
            self.specials.pad,
            None,
        );
        let ce = tape.cross_entropy_sum(fw.logits, &targets);
        Ok(LossSum {
            sum: tape.value(ce).scalar(),
            count: targets.iter().filter(|t| t.is_some()).count(),
        })
    }

    /// Wraps word ids in the family's framing: `BOS w…` or `CLS w… SEP`.
    /// Words beyond the length limit are truncated; the flag reports it.
    pub fn frame(&self, words: &[u32]) -> (Vec<u32>, bool) {
        let s = self.specials;
        let reserve = match self.config.family {
            Family::Autoregressive => 1,
            Family::MaskedEncoder => 2,
        };
        let room = self.config.max_seq_len.saturating_sub(reserve);
        let truncated = words.len() > room;
        let words = &words[..words.len().min(room)];
        let mut ids = Vec::with_capacity(words.len() + reserve);
        match self.config.family {
            Family::Autoregressive => {
                ids.push(s.bos);
                ids.extend_from_slice(words);
            }
            Family::MaskedEncoder => {
                ids.push(s.cls);
                ids.extend_from_slice(words);
                ids.push(s.sep);
            }
        }
        (ids, truncated)
    }
}
