//! Transformer encoder whose self-attention is conditioned on a dependency graph.
//!
//! For every token pair the relation code `c_ij` (none / head-of / dependent-of) selects
//! a row of two learned `3 × d` matrices. The first is added to the key inside the score,
//! the second to the value inside the weighted sum:
//!
//! ```text
//! e_ij = (x_i Wq) · (x_j Wk + L1[c_ij]) / √d
//! z_i  = Σ_j α_ij (x_j Wv + L2[c_ij])
//! ```
//!
//! Both terms are computed without materializing per-pair vectors: the score term is a
//! lookup into `Q · L1ᵀ` and the value term is `A · L2` where `A[i][c]` sums the attention
//! mass row `i` puts on pairs with code `c`.

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

pub const REL_NONE: u8 = 0;
pub const REL_HEAD_OF: u8 = 1;
pub const REL_DEPENDENT_OF: u8 = 2;
/// Number of relation classes.
pub const NUM_RELATIONS: usize = 3;

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence of length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("{table} id {id} out of range ({size} rows)")]
    IdOutOfRange { table: &'static str, id: usize, size: usize },
}

/// Pairwise relation codes over an input sequence plus the label attached to each position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    n: usize,
    codes: Arc<Vec<u8>>,
    dep_labels: Vec<Option<usize>>,
}

impl RelationMatrix {
    pub fn empty(n: usize) -> RelationMatrix {
        RelationMatrix {
            n,
            codes: Arc::new(vec![REL_NONE; n * n]),
            dep_labels: vec![None; n],
        }
    }

    pub fn from_parts(n: usize, codes: Vec<u8>, dep_labels: Vec<Option<usize>>) -> RelationMatrix {
        assert_eq!(codes.len(), n * n);
        assert_eq!(dep_labels.len(), n);
        RelationMatrix {
            n,
            codes: Arc::new(codes),
            dep_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.n + j]
    }

    pub fn codes(&self) -> &Arc<Vec<u8>> {
        &self.codes
    }

    pub fn dep_labels(&self) -> &[Option<usize>] {
        &self.dep_labels
    }

    pub fn is_all_none(&self) -> bool {
        self.codes.iter().all(|&c| c == REL_NONE)
    }

    /// Checks the mirror and label invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        for i in 0..self.n {
            if self.code(i, i) != REL_NONE {
                return Err(format!("diagonal entry ({i},{i}) is not none"));
            }
            for j in 0..self.n {
                let (a, b) = (self.code(i, j), self.code(j, i));
                let ok = match a {
                    REL_NONE => b == REL_NONE,
                    REL_HEAD_OF => b == REL_DEPENDENT_OF,
                    REL_DEPENDENT_OF => b == REL_HEAD_OF,
                    _ => false,
                };
                if !ok {
                    return Err(format!("codes ({i},{j})={a} and ({j},{i})={b} are not mirrored"));
                }
            }
            let has_head = (0..self.n).any(|r| self.code(r, i) == REL_HEAD_OF);
            if has_head != self.dep_labels[i].is_some() {
                return Err(format!("position {i}: label presence disagrees with codes"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    /// Rows of the segment table; 0 disables segment embeddings.
    pub segment_count: usize,
    pub dropout: f64,
    pub graph_input: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 128,
            max_positions: 256,
            segment_count: 0,
            dropout: 0.05,
            graph_input: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(EncoderError::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.ff_dim == 0 || self.max_positions == 0 {
            return Err(EncoderError::Config("ff_dim and max_positions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-position inputs to the embedding layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InputAssembly {
    pub forms: Vec<usize>,
    pub upos: Vec<usize>,
    pub positions: Vec<usize>,
    /// Empty when the model has no segment embeddings.
    pub segments: Vec<usize>,
    pub dep_labels: Vec<Option<usize>>,
    /// `mask[i·n + j]`: may position `i` attend to `j`. Empty means everything is visible.
    pub mask: Vec<bool>,
}

impl InputAssembly {
    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }
}

pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

pub(crate) fn embedding_table(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let a = (3.0 / cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// Graph key and value matrices (`3 × d`), shared across the heads of the layer.
    pub graph: Option<(ParamId, ParamId)>,
    pub ln1: (ParamId, ParamId),
    pub ff1: (ParamId, ParamId),
    pub ff2: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
}

/// Embedding tables and transformer layers.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word: ParamId,
    pub upos: ParamId,
    pub position: ParamId,
    pub segment: Option<ParamId>,
    /// Dependency-label embeddings added to attached tokens (graph input only).
    pub label: Option<ParamId>,
    pub layers: Vec<LayerParams>,
}

impl Encoder {
    /// Registers all encoder parameters in `store` under `embed.*` and `encoder.*` names.
    pub fn init(
        config: EncoderConfig,
        num_forms: usize,
        num_upos: usize,
        num_labels: usize,
        store: &mut ParamStore,
        rng: &mut dyn RngCore,
    ) -> Result<Encoder, EncoderError> {
        config.validate()?;
        let m = config.model_dim;
        let d = config.head_dim();
        let word = store.add("embed.word", embedding_table(num_forms, m, rng));
        let upos = store.add("embed.upos", embedding_table(num_upos, m, rng));
        let position = store.add("embed.position", embedding_table(config.max_positions, m, rng));
        let segment = (config.segment_count > 0)
            .then(|| store.add("embed.segment", embedding_table(config.segment_count, m, rng)));
        let label = config
            .graph_input
            .then(|| store.add("embed.label", embedding_table(num_labels.max(1), m, rng)));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("encoder.{l}.{s}");
            let wq = store.add(p("attn.wq"), xavier(m, m, rng));
            let wk = store.add(p("attn.wk"), xavier(m, m, rng));
            let wv = store.add(p("attn.wv"), xavier(m, m, rng));
            let wo = store.add(p("attn.wo"), xavier(m, m, rng));
            let bo = store.add(p("attn.bo"), Tensor::zeros(1, m));
            let graph = config.graph_input.then(|| {
                (
                    store.add(p("graph.wl1"), xavier(NUM_RELATIONS, d, rng)),
                    store.add(p("graph.wl2"), xavier(NUM_RELATIONS, d, rng)),
                )
            });
            let ln1 = (
                store.add(p("ln1.gamma"), Tensor::filled(1, m, 1.0)),
                store.add(p("ln1.beta"), Tensor::zeros(1, m)),
            );
            let ff1 = (
                store.add(p("ff.w1"), xavier(m, config.ff_dim, rng)),
                store.add(p("ff.b1"), Tensor::zeros(1, config.ff_dim)),
            );
            let ff2 = (
                store.add(p("ff.w2"), xavier(config.ff_dim, m, rng)),
                store.add(p("ff.b2"), Tensor::zeros(1, m)),
            );
            let ln2 = (
                store.add(p("ln2.gamma"), Tensor::filled(1, m, 1.0)),
                store.add(p("ln2.beta"), Tensor::zeros(1, m)),
            );
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo,
                bo,
                graph,
                ln1,
                ff1,
                ff2,
                ln2,
            });
        }
        Ok(Encoder {
            config,
            word,
            upos,
            position,
            segment,
            label,
            layers,
        })
    }

    /// Re-attaches to parameters already present in `store` (e.g. after loading a checkpoint).
    pub fn bind(config: EncoderConfig, store: &ParamStore) -> Option<Encoder> {
        let id = |s: String| store.id(&s);
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let p = |s: &str| format!("encoder.{l}.{s}");
            let graph = if config.graph_input {
                Some((id(p("graph.wl1"))?, id(p("graph.wl2"))?))
            } else {
                None
            };
            layers.push(LayerParams {
                wq: id(p("attn.wq"))?,
                wk: id(p("attn.wk"))?,
                wv: id(p("attn.wv"))?,
                wo: id(p("attn.wo"))?,
                bo: id(p("attn.bo"))?,
                graph,
                ln1: (id(p("ln1.gamma"))?, id(p("ln1.beta"))?),
                ff1: (id(p("ff.w1"))?, id(p("ff.b1"))?),
                ff2: (id(p("ff.w2"))?, id(p("ff.b2"))?),
                ln2: (id(p("ln2.gamma"))?, id(p("ln2.beta"))?),
            });
        }
        Some(Encoder {
            word: id("embed.word".into())?,
            upos: id("embed.upos".into())?,
            position: id("embed.position".into())?,
            segment: if config.segment_count > 0 {
                Some(id("embed.segment".into())?)
            } else {
                None
            },
            label: if config.graph_input {
                Some(id("embed.label".into())?)
            } else {
                None
            },
            config,
            layers,
        })
    }

    /// `T_w = Emb(form) + Emb(upos)` for each position.
    pub fn token_embeddings(&self, tape: &mut Tape, forms: &[usize], upos: &[usize]) -> Result<Var, EncoderError> {
        let w = tape.param(self.word);
        let p = tape.param(self.upos);
        let wv = gather(tape, w, forms, "word")?;
        let pv = gather(tape, p, upos, "upos")?;
        Ok(tape.add(wv, pv)?)
    }

    /// Input vectors: `x_i = (C_i or T_i) + segment_i + position_i + label_i`.
    ///
    /// `composition[i]`, when present, replaces the token embedding of position `i`
    /// (each entry a `1 × m` row). The label term is skipped for unattached positions.
    pub fn embed(
        &self,
        tape: &mut Tape,
        input: &InputAssembly,
        composition: Option<&[Option<Var>]>,
    ) -> Result<Var, EncoderError> {
        let n = input.len();
        if n > self.config.max_positions {
            return Err(EncoderError::TooLong {
                len: n,
                max: self.config.max_positions,
            });
        }
        let mut x = self.token_embeddings(tape, &input.forms, &input.upos)?;
        if let Some(comp) = composition {
            if comp.iter().any(Option::is_some) {
                let mut rows = Vec::with_capacity(n);
                for i in 0..n {
                    rows.push(match comp[i] {
                        Some(c) => c,
                        None => tape.select_rows(x, &[i])?,
                    });
                }
                x = tape.concat_rows(&rows)?;
            }
        }
        let pos = tape.param(self.position);
        let pv = gather(tape, pos, &input.positions, "position")?;
        x = tape.add(x, pv)?;
        if let Some(seg) = self.segment {
            let s = tape.param(seg);
            let sv = gather(tape, s, &input.segments, "segment")?;
            x = tape.add(x, sv)?;
        }
        if let Some(label) = self.label {
            if input.dep_labels.iter().any(Option::is_some) {
                let l = tape.param(label);
                let lv = tape.gather_rows(l, &input.dep_labels)?;
                x = tape.add(x, lv)?;
            }
        }
        Ok(x)
    }

    /// Runs all layers over embedded inputs `x` (`n × m`).
    pub fn encode(
        &self,
        tape: &mut Tape,
        x: Var,
        relmat: &RelationMatrix,
        mask: &[bool],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, EncoderError> {
        let n = tape.value(x).rows();
        if n > self.config.max_positions {
            return Err(EncoderError::TooLong {
                len: n,
                max: self.config.max_positions,
            });
        }
        if relmat.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                left: tape.value(x).shape(),
                right: [relmat.len(), relmat.len()],
            }
            .into());
        }
        let mask = if mask.is_empty() { None } else { Some(mask) };
        let mut h = x;
        for layer in &self.layers {
            h = self.layer_forward(tape, layer, h, relmat, mask, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    fn head_slice(&self, tape: &mut Tape, w: ParamId, head: usize) -> Result<Var, EncoderError> {
        let d = self.config.head_dim();
        let wv = tape.param(w);
        Ok(tape.slice_cols(wv, head * d, d)?)
    }

    /// Graph-conditioned attention logits of one head (`n × n`).
    pub fn attention_scores(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        x: Var,
        relmat: &RelationMatrix,
        head: usize,
    ) -> Result<Var, EncoderError> {
        let d = self.config.head_dim();
        let wq = self.head_slice(tape, layer.wq, head)?;
        let wk = self.head_slice(tape, layer.wk, head)?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let kt = tape.transpose(k);
        let mut scores = tape.matmul(q, kt)?;
        if let Some((wl1, _)) = layer.graph {
            let l1 = tape.param(wl1);
            let l1t = tape.transpose(l1);
            let qr = tape.matmul(q, l1t)?;
            let rel = tape.code_gather(qr, relmat.codes())?;
            scores = tape.add(scores, rel)?;
        }
        Ok(tape.scale(scores, 1.0 / (d as f64).sqrt()))
    }

    /// Graph-conditioned attention output of one head (`n × d`) given weights `alpha`.
    pub fn attention_values(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        alpha: Var,
        x: Var,
        relmat: &RelationMatrix,
        head: usize,
    ) -> Result<Var, EncoderError> {
        let wv = self.head_slice(tape, layer.wv, head)?;
        let v = tape.matmul(x, wv)?;
        let mut z = tape.matmul(alpha, v)?;
        if let Some((_, wl2)) = layer.graph {
            let mass = tape.code_aggregate(alpha, relmat.codes(), NUM_RELATIONS)?;
            let l2 = tape.param(wl2);
            let rel = tape.matmul(mass, l2)?;
            z = tape.add(z, rel)?;
        }
        Ok(z)
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        x: Var,
        relmat: &RelationMatrix,
        mask: Option<&[bool]>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, EncoderError> {
        let rate = self.config.dropout;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let scores = self.attention_scores(tape, layer, x, relmat, h)?;
            let alpha = tape.softmax_rows(scores, mask)?;
            heads.push(self.attention_values(tape, layer, alpha, x, relmat, h)?);
        }
        let z = tape.concat_cols(&heads)?;
        let wo = tape.param(layer.wo);
        let bo = tape.param(layer.bo);
        let o = tape.matmul(z, wo)?;
        let mut o = tape.add_row(o, bo)?;
        if let Some(r) = rng.as_deref_mut() {
            o = tape.dropout(o, rate, r);
        }
        let res = tape.add(x, o)?;
        let h1 = affine_norm(tape, res, layer.ln1)?;

        let (w1, b1) = (tape.param(layer.ff1.0), tape.param(layer.ff1.1));
        let (w2, b2) = (tape.param(layer.ff2.0), tape.param(layer.ff2.1));
        let f = tape.matmul(h1, w1)?;
        let f = tape.add_row(f, b1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, w2)?;
        let mut f = tape.add_row(f, b2)?;
        if let Some(r) = rng {
            f = tape.dropout(f, rate, r);
        }
        let res = tape.add(h1, f)?;
        affine_norm(tape, res, layer.ln2)
    }
}

fn affine_norm(tape: &mut Tape, x: Var, (gamma, beta): (ParamId, ParamId)) -> Result<Var, EncoderError> {
    let n = tape.layer_norm_rows(x, LAYER_NORM_EPS);
    let g = tape.param(gamma);
    let b = tape.param(beta);
    let y = tape.mul_row(n, g)?;
    Ok(tape.add_row(y, b)?)
}

fn gather(tape: &mut Tape, table: Var, ids: &[usize], name: &'static str) -> Result<Var, EncoderError> {
    let size = tape.value(table).rows();
    if let Some(&id) = ids.iter().find(|&&id| id >= size) {
        return Err(EncoderError::IdOutOfRange { table: name, id, size });
    }
    Ok(tape.select_rows(table, ids)?)
}
