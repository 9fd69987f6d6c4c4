//! Word-emphasis labeling: data formats, the Match_m metric, two neural
//! labelers built on `emph-tensor`, training with dev-based checkpoint
//! selection, and score-averaging ensembles.

pub mod data;
pub mod embeddings;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod predictions;
pub mod seq_model;
pub mod subword;
pub mod synthetic;
pub mod train;
pub mod transformer;
pub mod vocab;

pub use data::{parse_dataset, read_dataset, write_dataset, Instance, PosTag, Token};
pub use error::{CoreError, Result};
pub use ensemble::{ensemble_average, run_ensemble, EnsembleRun, MemberSpec};
pub use eval::{evaluate, match_m, top_m_set, MatchReport};
pub use model::{AnyModel, ArchConfig, Labeler};
pub use predictions::PredictionSet;
pub use seq_model::{SeqConfig, SeqLabeler};
pub use transformer::{TransformerConfig, TransformerLabeler};
pub use vocab::{build_vocab, Vocab};
pub use train::{train, train_arch, TrainConfig, TrainLog};
