//! Transition-based dependency parsing with a graph-conditioned transformer encoder.
//!
//! The pieces, bottom up: CoNLL-U reading and writing ([`treebank`], [`vocab`]), the
//! arc-standard + SWAP system with its static oracle ([`transition`]), a small
//! reverse-mode autodiff engine ([`tensor`]), the graph-aware encoder ([`encoder`]),
//! the parser variants ([`model`]), training and decoding ([`train`]), scoring and
//! error analysis ([`eval`]), checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod transition;
pub mod treebank;
pub mod vocab;

pub use checkpoint::CheckpointError;
pub use config::{ConfigError, RunConfig};
pub use eval::{analyze, relative_error_reduction, score, ErrorReport, PunctMode, Score};
pub use model::{ModelConfig, ModelError, ModelVariant, Parse, ParserModel};
pub use train::{parse_corpus, train, TrainConfig, TrainError, TrainReport};
pub use transition::{oracle_sequence, replay, Action, ActionKind, DepTree, ParserState};
pub use treebank::{read_conllu, write_conllu, AnnotatedSentence, TokenRecord, TreebankError};
pub use vocab::Vocabulary;
