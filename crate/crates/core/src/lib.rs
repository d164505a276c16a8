//! Synthetic training data for few-shot biomedical NER.
//!
//! Few-shot sentences are expanded through a vocabulary hierarchy and
//! through LLM paraphrasing; taggers trained on the augmented corpora are
//! combined by ensembles and scored with strict entity-level metrics.

pub mod corpus;
pub mod ensemble;
pub mod eval;
pub mod generation;
pub mod knowledge;
pub mod pipeline;
pub mod tagger;

pub use corpus::{
    decode_spans, encode_spans, parse_conll, sample_few_shot, validate_iob, write_conll, Dataset,
    EntitySpan, IobPolicy, Sentence, Tag, Token,
};
pub use knowledge::{ExpansionLayer, ExpansionResult, KnowledgeStore};
pub use eval::{evaluate_strict, EvalReport, Scores};
pub use tagger::{fit, FeatureConfig, NnModel, PredictionSet};
pub use ensemble::{apply as apply_ensemble, intersect, select_best_ensemble, weighted_vote, EnsembleConfig, EnsembleMode};
pub use pipeline::{run_pipeline, run_stage, RunConfig, RunManifest, Stage};
