//! Transition classifiers on top of the graph-conditioned encoder.
//!
//! A [`ParserModel`] scores the four transition kinds from the encoded parser state
//! and, for arcs, the dependency label. Two encoder layouts are supported: the parser
//! state itself (stack, buffer and optionally deleted words as segments) or the whole
//! sentence with the state only selecting output rows. With graph input the partial
//! tree built so far conditions every attention layer.

mod assembly;
mod classifier;
mod composition;
mod history;
mod variant;

pub use assembly::{assemble, GraphMatrix, SentenceIds, Source, StateAssembly};
pub use classifier::Mlp;
pub use composition::{CompositionParams, CompositionState};
pub use history::{HistoryParams, HistoryState};
pub use variant::{Base, GraphOutput, ModelConfig, ModelVariant, PRESETS};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::transition::{oracle_sequence, Action, ActionKind, DepTree, ParserState, TransitionError};
use crate::treebank::AnnotatedSentence;
use crate::vocab::{self, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter store does not match the model layout: missing {0}")]
    MissingParam(String),
    #[error("parameters do not match the model configuration: {0}")]
    Layout(String),
    #[error("unknown dependency label {0:?}")]
    UnknownLabel(String),
    #[error("gold tree is invalid: {0}")]
    InvalidTree(String),
    #[error("parse did not terminate within {0} transitions")]
    NoProgress(usize),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Encoder(e.into())
    }
}

/// Parameter handles of every component, independent of the values.
#[derive(Clone, Debug)]
pub struct Network {
    pub encoder: Encoder,
    pub exist: Mlp,
    pub relation: Mlp,
    /// Stand-in for an absent s2/s1/b1 slot in token-pair mode.
    pub pad: Option<ParamId>,
    pub composition: Option<CompositionParams>,
    pub history: Option<HistoryParams>,
    pub variant: ModelVariant,
    pub dropout: f64,
    pub num_labels: usize,
}

/// Decoding state of one sentence on a tape.
#[derive(Clone, Debug)]
pub struct Trace {
    pub state: ParserState,
    pub graph: GraphMatrix,
    pub composition: Option<CompositionState>,
    pub history: Option<HistoryState>,
    /// Encoder output reused at every step when it does not depend on the state.
    pub encoded: Option<Var>,
}

/// Scores for one transition: exist logits over action kinds and label logits
/// (left-arc block first, then right-arc block).
#[derive(Clone, Copy, Debug)]
pub struct StepScores {
    pub exist: Var,
    pub relation: Var,
}

fn exist_input_width(variant: &ModelVariant, m: usize) -> usize {
    let base = match variant.graph_output {
        GraphOutput::TokenPair => 3 * m,
        GraphOutput::Cls => m,
    };
    base + if variant.history { m } else { 0 }
}

fn relation_input_width(variant: &ModelVariant, m: usize) -> usize {
    match variant.graph_output {
        GraphOutput::TokenPair => 2 * m,
        GraphOutput::Cls => m,
    }
}

impl Network {
    /// Registers freshly initialized parameters for `config` in `store`.
    pub fn init(
        config: &ModelConfig,
        vocab: &Vocabulary,
        store: &mut ParamStore,
        rng: &mut dyn RngCore,
    ) -> Result<Network, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let m = config.model_dim;
        let v = config.variant;
        let num_labels = vocab.num_labels();
        let encoder = Encoder::init(
            config.encoder_config(),
            vocab.forms.len(),
            vocab.upos.len(),
            num_labels,
            store,
            rng,
        )?;
        let composition = v
            .composition
            .then(|| CompositionParams::init(m, num_labels, config.max_positions, store, rng));
        let history = v.history.then(|| HistoryParams::init(m, num_labels, store, rng));
        let pad = (v.graph_output == GraphOutput::TokenPair)
            .then(|| store.add("classifier.pad", crate::encoder::embedding_table(1, m, rng)));
        let exist = Mlp::init("classifier.exist", exist_input_width(&v, m), config.exist_hidden, 4, store, rng);
        let relation = Mlp::init(
            "classifier.relation",
            relation_input_width(&v, m),
            config.relation_hidden,
            2 * num_labels.max(1),
            store,
            rng,
        );
        Ok(Network {
            encoder,
            exist,
            relation,
            pad,
            composition,
            history,
            variant: v,
            dropout: config.dropout,
            num_labels,
        })
    }

    /// Finds the parameters for `config` in an existing store.
    pub fn bind(config: &ModelConfig, num_labels: usize, store: &ParamStore) -> Result<Network, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let v = config.variant;
        let missing = |what: &str| ModelError::MissingParam(what.to_string());
        let encoder = Encoder::bind(config.encoder_config(), store).ok_or_else(|| missing("encoder"))?;
        let composition = if v.composition {
            Some(CompositionParams::bind(store, num_labels).ok_or_else(|| missing("comp"))?)
        } else {
            None
        };
        let history = if v.history {
            Some(HistoryParams::bind(store, config.model_dim, num_labels).ok_or_else(|| missing("history"))?)
        } else {
            None
        };
        let pad = if v.graph_output == GraphOutput::TokenPair {
            Some(store.id("classifier.pad").ok_or_else(|| missing("classifier.pad"))?)
        } else {
            None
        };
        Ok(Network {
            encoder,
            exist: Mlp::bind("classifier.exist", store).ok_or_else(|| missing("classifier.exist"))?,
            relation: Mlp::bind("classifier.relation", store).ok_or_else(|| missing("classifier.relation"))?,
            pad,
            composition,
            history,
            variant: v,
            dropout: config.dropout,
            num_labels,
        })
    }

    fn encode_state(
        &self,
        tape: &mut Tape,
        trace: &Trace,
        ids: &SentenceIds,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, StateAssembly), ModelError> {
        let asm = assemble(&trace.state, ids, &trace.graph, &self.variant);
        if let Some(encoded) = trace.encoded {
            return Ok((encoded, asm));
        }
        let comp_rows: Option<Vec<Option<Var>>> = trace.composition.as_ref().map(|c| {
            asm.sources
                .iter()
                .map(|s| match *s {
                    Source::Word(w) => Some(c.c[w]),
                    _ => None,
                })
                .collect()
        });
        let x = self.encoder.embed(tape, &asm.input, comp_rows.as_deref())?;
        let g = self.encoder.encode(tape, x, &asm.relations, &asm.input.mask, rng)?;
        Ok((g, asm))
    }

    /// Initial trace for a sentence.
    pub fn begin(&self, tape: &mut Tape, ids: &SentenceIds, rng: Option<&mut ChaCha8Rng>) -> Result<Trace, ModelError> {
        let n = ids.num_words();
        let composition = match self.composition {
            Some(_) => {
                let t = self.encoder.token_embeddings(tape, &ids.forms, &ids.upos)?;
                let mut rows = Vec::with_capacity(n + 1);
                for w in 0..=n {
                    rows.push(tape.select_rows(t, &[w])?);
                }
                Some(CompositionState::new(rows))
            }
            None => None,
        };
        let history = self.history.as_ref().map(|h| h.start(tape));
        let mut trace = Trace {
            state: ParserState::initial(n),
            graph: GraphMatrix::new(n),
            composition,
            history,
            encoded: None,
        };
        if self.variant.base == Base::Sentence && !self.variant.graph_input {
            let (g, _) = self.encode_state(tape, &trace, ids, rng)?;
            trace.encoded = Some(g);
        }
        Ok(trace)
    }

    fn slot(&self, tape: &mut Tape, g: Var, pos: Option<usize>) -> Result<Var, ModelError> {
        Ok(match pos {
            Some(p) => tape.select_rows(g, &[p])?,
            None => tape.param(self.pad.expect("token-pair mode has a pad vector")),
        })
    }

    /// Classifier logits for the current state of `trace`.
    pub fn scores(
        &self,
        tape: &mut Tape,
        trace: &Trace,
        ids: &SentenceIds,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepScores, ModelError> {
        let (g, asm) = self.encode_state(tape, trace, ids, rng.as_deref_mut())?;
        let (mut exist_parts, rel_in) = match self.variant.graph_output {
            GraphOutput::TokenPair => {
                let s2 = self.slot(tape, g, asm.s2)?;
                let s1 = self.slot(tape, g, asm.s1)?;
                let b1 = self.slot(tape, g, asm.b1)?;
                let rel = tape.concat_cols(&[s2, s1])?;
                (vec![s2, s1, b1], rel)
            }
            GraphOutput::Cls => {
                let cls = tape.select_rows(g, &[0])?;
                (vec![cls], cls)
            }
        };
        if let Some(h) = trace.history {
            exist_parts.push(h.h);
        }
        let exist_in = tape.concat_cols(&exist_parts)?;
        let rate = self.dropout;
        let exist = self
            .exist
            .forward(tape, exist_in, rng.as_deref_mut().map(|r| (rate, r)))?;
        let relation = self.relation.forward(tape, rel_in, rng.map(|r| (rate, r)))?;
        Ok(StepScores { exist, relation })
    }

    /// Applies `action` to the trace, updating graph, composition and history.
    pub fn advance(&self, tape: &mut Tape, trace: &mut Trace, action: Action) -> Result<(), ModelError> {
        let s1 = trace.state.s(1);
        let s2 = trace.state.s(2);
        trace.state.apply_mut(action)?;
        if let (Some(label), Some(s1), Some(s2)) = (action.label(), s1, s2) {
            let right = action.kind() == ActionKind::RightArc;
            let (head, dep) = if right { (s2, s1) } else { (s1, s2) };
            trace.graph.add_arc(head, dep, label);
            if let (Some(cp), Some(cs)) = (&self.composition, trace.composition.as_mut()) {
                let l = cp.arc_label(tape, label, right)?;
                cs.attach(head, dep, l);
            }
        }
        if let (Some(cp), Some(cs)) = (&self.composition, trace.composition.as_mut()) {
            // Sequence positions in the state layout: CLS, stack, SEP, buffer.
            let stack = trace.state.stack();
            let slots: Vec<(usize, usize)> = stack
                .iter()
                .enumerate()
                .map(|(k, &w)| (w, k + 1))
                .chain(trace.state.buffer().iter().enumerate().map(|(k, &w)| (w, stack.len() + 2 + k)))
                .collect();
            cp.update(tape, cs, &slots)?;
        }
        if let (Some(hp), Some(hs)) = (&self.history, trace.history) {
            trace.history = Some(hp.step(tape, &hs, action)?);
        }
        Ok(())
    }

    /// Index of `action` in the relation logits.
    pub fn relation_index(&self, action: Action) -> Option<usize> {
        let label = action.label()?;
        Some(match action.kind() {
            ActionKind::LeftArc => label,
            _ => self.num_labels + label,
        })
    }

    /// Summed teacher-forced loss over a gold transition sequence: masked cross-entropy
    /// over legal action kinds at every step, plus label cross-entropy on arc steps.
    pub fn sentence_loss(
        &self,
        tape: &mut Tape,
        ids: &SentenceIds,
        actions: &[Action],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let mut trace = self.begin(tape, ids, rng.as_deref_mut())?;
        let mut terms = Vec::with_capacity(actions.len() * 2);
        for &action in actions {
            let scores = self.scores(tape, &trace, ids, rng.as_deref_mut())?;
            let mask = trace.state.legal_mask();
            terms.push(tape.cross_entropy(scores.exist, action.kind().index(), Some(&mask))?);
            if let Some(r) = self.relation_index(action) {
                terms.push(tape.cross_entropy(scores.relation, r, None)?);
            }
            self.advance(tape, &mut trace, action)?;
        }
        let mut loss = tape.constant(Tensor::scalar(0.0));
        for t in terms {
            loss = tape.add(loss, t)?;
        }
        Ok(loss)
    }
}

/// Greedy choice: the best legal action kind, and the best label for arcs.
pub fn choose_action(exist: &Tensor, relation: &Tensor, mask: &[bool; 4], num_labels: usize) -> Option<Action> {
    let logits = exist.row(0);
    let mut best: Option<(usize, f64)> = None;
    for (k, &ok) in mask.iter().enumerate() {
        if ok && best.is_none_or(|(_, v)| logits[k] > v) {
            best = Some((k, logits[k]));
        }
    }
    let kind = ActionKind::from_index(best?.0)?;
    if !kind.is_arc() {
        return Some(Action::new(kind, 0));
    }
    let offset = if kind == ActionKind::LeftArc { 0 } else { num_labels };
    let block = &relation.row(0)[offset..offset + num_labels];
    let mut label = 0;
    for (i, &v) in block.iter().enumerate() {
        if v > block[label] {
            label = i;
        }
    }
    Some(Action::new(kind, label))
}

/// Tape-free snapshot of a [`Trace`], carried between per-step tapes during decoding.
#[derive(Clone, Debug)]
struct Carry {
    state: ParserState,
    graph: GraphMatrix,
    composition: Option<(Vec<Tensor>, Vec<Option<Tensor>>, Vec<Option<Tensor>>)>,
    history: Option<(Tensor, Tensor)>,
    encoded: Option<Tensor>,
}

impl Carry {
    fn export(tape: &Tape, trace: &Trace) -> Carry {
        let v = |x: Var| tape.value(x).clone();
        Carry {
            state: trace.state.clone(),
            graph: trace.graph.clone(),
            composition: trace.composition.as_ref().map(|c| {
                (
                    c.c.iter().map(|&x| v(x)).collect(),
                    c.omega.iter().map(|x| x.map(v)).collect(),
                    c.label.iter().map(|x| x.map(v)).collect(),
                )
            }),
            history: trace.history.map(|h| (v(h.h), v(h.c))),
            encoded: trace.encoded.map(v),
        }
    }

    fn import(&self, tape: &mut Tape) -> Trace {
        let mut k = |t: &Tensor| tape.constant(t.clone());
        let composition = self.composition.as_ref().map(|(c, o, l)| CompositionState {
            c: c.iter().map(&mut k).collect(),
            omega: o.iter().map(|x| x.as_ref().map(&mut k)).collect(),
            label: l.iter().map(|x| x.as_ref().map(&mut k)).collect(),
        });
        let history = self.history.as_ref().map(|(h, c)| HistoryState { h: k(h), c: k(c) });
        let encoded = self.encoded.as_ref().map(&mut k);
        Trace {
            state: self.state.clone(),
            graph: self.graph.clone(),
            composition,
            history,
            encoded,
        }
    }
}

/// A trained (or freshly initialized) parser.
#[derive(Clone, Debug)]
pub struct ParserModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub net: Network,
}

/// Output of parsing one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Parse {
    pub tree: DepTree,
    pub actions: Vec<Action>,
}

impl ParserModel {
    /// Initializes all parameters deterministically from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<ParserModel, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = Network::init(&config, &vocab, &mut params, &mut rng)?;
        Ok(ParserModel {
            config,
            vocab,
            params,
            net,
        })
    }

    /// Wraps an existing parameter store, e.g. one read from a checkpoint. The store must
    /// hold exactly the tensors (names and shapes) that `config` and `vocab` call for.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParamStore) -> Result<ParserModel, ModelError> {
        let mut expected = ParamStore::new();
        Network::init(&config, &vocab, &mut expected, &mut ChaCha8Rng::seed_from_u64(0))?;
        let layout = |s: &ParamStore| -> Vec<(String, [usize; 2])> {
            s.iter().map(|(_, n, t)| (n.to_string(), t.shape())).collect()
        };
        let (want, got) = (layout(&expected), layout(&params));
        if want != got {
            let diff = want
                .iter()
                .find(|w| !got.contains(w))
                .map(|(n, s)| format!("{n} {s:?}"))
                .or_else(|| got.iter().find(|g| !want.contains(g)).map(|(n, _)| format!("unexpected {n}")))
                .unwrap_or_else(|| "parameter order".into());
            return Err(ModelError::Layout(diff));
        }
        let net = Network::bind(&config, vocab.num_labels(), &params)?;
        Ok(ParserModel {
            config,
            vocab,
            params,
            net,
        })
    }

    pub fn sentence_ids(&self, sentence: &AnnotatedSentence) -> SentenceIds {
        SentenceIds {
            forms: std::iter::once(vocab::ROOT)
                .chain(sentence.tokens.iter().map(|t| self.vocab.form_id(&t.form)))
                .collect(),
            upos: std::iter::once(vocab::ROOT)
                .chain(sentence.tokens.iter().map(|t| self.vocab.upos_id(&t.upos)))
                .collect(),
        }
    }

    /// The gold tree of a sentence with labels mapped to vocabulary ids.
    pub fn gold_tree(&self, sentence: &AnnotatedSentence) -> Result<DepTree, ModelError> {
        sentence.validate().map_err(ModelError::InvalidTree)?;
        let heads: Vec<usize> = sentence.tokens.iter().map(|t| t.head).collect();
        let labels = sentence
            .tokens
            .iter()
            .map(|t| self.vocab.label_id(&t.deprel).ok_or_else(|| ModelError::UnknownLabel(t.deprel.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DepTree::new(&heads, &labels))
    }

    /// Gold transition sequence of a sentence.
    pub fn gold_actions(&self, sentence: &AnnotatedSentence) -> Result<Vec<Action>, ModelError> {
        Ok(oracle_sequence(&self.gold_tree(sentence)?))
    }

    /// Starts step-by-step greedy decoding of `sentence`.
    pub fn episode(&self, sentence: &AnnotatedSentence) -> Result<ParseEpisode<'_>, ModelError> {
        let ids = self.sentence_ids(sentence);
        let mut tape = Tape::new(&self.params);
        let trace = self.net.begin(&mut tape, &ids, None)?;
        let carry = Carry::export(&tape, &trace);
        Ok(ParseEpisode { model: self, ids, carry })
    }

    /// Greedy decoding with illegal transitions masked out.
    pub fn parse(&self, sentence: &AnnotatedSentence) -> Result<Parse, ModelError> {
        let mut ep = self.episode(sentence)?;
        let n = sentence.len();
        // Each pair of words can be swapped at most once.
        let limit = 2 * n + n * n + 1;
        let mut actions = Vec::new();
        while !ep.state().is_terminal() {
            if actions.len() >= limit {
                return Err(ModelError::NoProgress(limit));
            }
            let action = ep.predict()?;
            ep.advance(action)?;
            actions.push(action);
        }
        let tree = ep.state().to_tree().expect("terminal");
        Ok(Parse { tree, actions })
    }

    /// Copy of `sentence` carrying the predicted heads and labels.
    pub fn annotate(&self, sentence: &AnnotatedSentence) -> Result<AnnotatedSentence, ModelError> {
        let parse = self.parse(sentence)?;
        let heads = parse.tree.heads[1..].to_vec();
        let labels: Vec<String> = parse.tree.labels[1..].iter().map(|&l| self.vocab.label(l).to_string()).collect();
        Ok(sentence.with_analysis(&heads, &labels))
    }
}

/// Inference-time decoding of one sentence. Each step runs on a fresh tape; the
/// recurrent state is carried across steps as plain tensors.
pub struct ParseEpisode<'m> {
    model: &'m ParserModel,
    ids: SentenceIds,
    carry: Carry,
}

impl ParseEpisode<'_> {
    pub fn state(&self) -> &ParserState {
        &self.carry.state
    }

    pub fn graph(&self) -> &GraphMatrix {
        &self.carry.graph
    }

    /// The encoder input for the current state.
    pub fn assembly(&self) -> StateAssembly {
        assemble(&self.carry.state, &self.ids, &self.carry.graph, &self.model.net.variant)
    }

    /// Exist logits (`1 × 4`) and label logits (`1 × 2L`) for the current state.
    pub fn scores(&self) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new(&self.model.params);
        let trace = self.carry.import(&mut tape);
        let s = self.model.net.scores(&mut tape, &trace, &self.ids, None)?;
        Ok((tape.value(s.exist).clone(), tape.value(s.relation).clone()))
    }

    /// The greedy legal action for the current state.
    pub fn predict(&self) -> Result<Action, ModelError> {
        let (exist, relation) = self.scores()?;
        let mask = self.carry.state.legal_mask();
        choose_action(&exist, &relation, &mask, self.model.net.num_labels).ok_or(ModelError::NoProgress(self.carry.state.step()))
    }

    pub fn advance(&mut self, action: Action) -> Result<(), ModelError> {
        let mut tape = Tape::new(&self.model.params);
        let mut trace = self.carry.import(&mut tape);
        self.model.net.advance(&mut tape, &mut trace, action)?;
        self.carry = Carry::export(&tape, &trace);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
