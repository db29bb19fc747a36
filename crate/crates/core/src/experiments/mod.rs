//! Dataset assembly, evaluation and the ablation experiment drivers.

pub mod ablate;
pub mod data;
pub mod eval;

pub use ablate::{run, Ablation, AblationOutcome, AblationScale};
pub use data::{make_items, pair_item, prior_corpus, ItemOptions, PriorConfig};
pub use eval::{evaluate, predict_pairs, score_pairs, EvalSummary, PairScore};
