//! Structured answers to questions about contract clauses.
//!
//! The pipeline renders a prompt template over a clause and an option set,
//! sends it to a chat provider, maps the free-form response back onto option
//! identities and scores the result against gold labels. A zero-shot
//! embedding-similarity baseline runs through the same scoring path.

pub mod baseline;
pub mod canonicalize;
pub mod corpus;
pub mod eval;
pub mod pipeline;
pub mod providers;
pub mod registry;
pub mod report;
pub mod templating;

pub use baseline::{cosine, predict, run_baseline, BaselineError, SimilarityPrediction};
pub use canonicalize::{
    canonicalize, normalize, CanonicalAnswer, Canonicalizer, MatchStrategy, MatchTrace,
    SynonymTable,
};
pub use corpus::{
    load_dataset, validate_gold, Clause, CorpusError, Dataset, GoldLabel, Manifest, Question,
    QuestionMode,
};
pub use eval::{
    compute_metrics, consistency, score, score_lenient, score_single, ConsistencyReport, EvalError,
    EvalRecord, EvalRun, Metrics, RunFailure,
};
pub use pipeline::{run_generation, GenerationSetup, PipelineError};
pub use providers::{
    fingerprint, ChatProvider, ChatRequest, ChatResponse, Embedder, EmbeddingBackend,
    EmbeddingVector, ProviderError,
};
pub use registry::{Registry, RegistryError};
pub use report::{render_table, ArtifactHash, ConsistencyRunReport, RunReport};
pub use templating::{
    render, render_options, seed_with_examples, shuffle_options, AnswerOption, AnswerStyle,
    ChatMessage, ExampleSet, NumberingStyle, OptionSet, PromptTemplate, RenderedConversation, Role,
    SelectionMode, TemplateError,
};
