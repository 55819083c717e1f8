//! Batch generation: render, call the provider, canonicalize, score.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;
use tracing::{debug, warn};

use crate::canonicalize::{Canonicalizer, SynonymTable};
use crate::corpus::{Clause, Dataset, Question};
use crate::eval::{score, EvalError, EvalRecord, EvalRun, RunFailure};
use crate::providers::{ChatProvider, ChatRequest, ProviderError};
use crate::templating::{
    render, seed_with_examples, AnswerStyle, ExampleSet, OptionSet, PromptTemplate,
    RenderedConversation, SelectionMode, TemplateError,
};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("rendering clause {clause_id}: {source}")]
    Render {
        clause_id: String,
        #[source]
        source: TemplateError,
    },
    #[error("provider failed on clause {clause_id}: {source}")]
    Provider {
        clause_id: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Applies `f` to every item on up to `parallelism` threads. Results come
/// back in input order.
pub fn parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let out = f(item);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Everything a generation run needs besides the dataset and provider.
#[derive(Clone, Copy)]
pub struct GenerationSetup<'a> {
    pub template: &'a PromptTemplate,
    pub option_set: &'a OptionSet,
    pub question: &'a Question,
    pub synonyms: Option<&'a SynonymTable>,
    pub canonicalizer: &'a Canonicalizer,
    pub example_sets: &'a [ExampleSet],
    /// Where example clauses are looked up. Defaults to the evaluated dataset.
    pub example_corpus: Option<&'a Dataset>,
    pub answer_style: AnswerStyle,
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub parallelism: usize,
}

impl GenerationSetup<'_> {
    /// Renders the full conversation, examples included, for one clause.
    pub fn conversation(
        &self,
        clause: &Clause,
        dataset: &Dataset,
    ) -> Result<RenderedConversation, TemplateError> {
        let question = self.template.needs_question().then_some(self.question);
        let base = render(self.template, self.option_set, clause, question)?;
        seed_with_examples(
            &base,
            self.example_sets,
            self.template,
            self.option_set,
            self.example_corpus.unwrap_or(dataset),
            question,
            self.answer_style,
        )
    }

    pub fn request(&self, conversation: &RenderedConversation) -> ChatRequest {
        ChatRequest {
            model: self.model.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages: conversation.messages.clone(),
        }
    }

    /// Canonicalizes and scores one raw response.
    pub fn evaluate(
        &self,
        clause_id: &str,
        raw: String,
        gold: &crate::corpus::GoldLabel,
    ) -> Result<EvalRecord, EvalError> {
        let (answer, trace) = self.canonicalizer.canonicalize(
            &raw,
            self.option_set,
            &self.template.escape_phrases,
            self.synonyms,
            self.selection_mode(),
        );
        let correct = score(self.question, &answer, gold)?;
        Ok(EvalRecord {
            clause_id: clause_id.to_string(),
            raw,
            answer,
            trace,
            gold: gold.clone(),
            correct,
        })
    }

    fn selection_mode(&self) -> SelectionMode {
        self.template.selection_mode
    }
}

enum Outcome {
    Record(EvalRecord),
    Failure(RunFailure),
    Fatal(PipelineError),
    Skipped,
}

/// Runs every clause of `dataset` through the provider. Transient provider
/// errors are recorded as failures; fatal ones (auth, replay miss) abort.
pub fn run_generation(
    dataset: &Dataset,
    setup: &GenerationSetup<'_>,
    provider: &dyn ChatProvider,
) -> Result<EvalRun, PipelineError> {
    let stop = AtomicBool::new(false);
    let outcomes = parallel_map(dataset.clauses(), setup.parallelism, |clause| {
        if stop.load(Ordering::SeqCst) {
            return Outcome::Skipped;
        }
        let outcome = generate_one(dataset, setup, provider, clause);
        if matches!(outcome, Outcome::Fatal(_)) {
            stop.store(true, Ordering::SeqCst);
        }
        outcome
    });

    let mut run = EvalRun::default();
    for outcome in outcomes {
        match outcome {
            Outcome::Record(r) => run.records.push(r),
            Outcome::Failure(f) => run.failures.push(f),
            Outcome::Fatal(e) => return Err(e),
            Outcome::Skipped => {}
        }
    }
    Ok(run)
}

fn generate_one(
    dataset: &Dataset,
    setup: &GenerationSetup<'_>,
    provider: &dyn ChatProvider,
    clause: &Clause,
) -> Outcome {
    let Some(gold) = dataset.label(&clause.id, &setup.question.id) else {
        return Outcome::Failure(RunFailure {
            clause_id: clause.id.clone(),
            error: format!("no gold label for question {}", setup.question.id),
        });
    };
    let conversation = match setup.conversation(clause, dataset) {
        Ok(c) => c,
        Err(source) => {
            return Outcome::Fatal(PipelineError::Render {
                clause_id: clause.id.clone(),
                source,
            })
        }
    };
    let response = match provider.chat_complete(&setup.request(&conversation)) {
        Ok(r) => r,
        Err(source) if source.is_fatal() => {
            return Outcome::Fatal(PipelineError::Provider {
                clause_id: clause.id.clone(),
                source,
            })
        }
        Err(e) => {
            warn!(clause_id = %clause.id, error = %e, "generation failed");
            return Outcome::Failure(RunFailure {
                clause_id: clause.id.clone(),
                error: e.to_string(),
            });
        }
    };
    debug!(clause_id = %clause.id, raw = %response.text, "response");
    match setup.evaluate(&clause.id, response.text, gold) {
        Ok(record) => Outcome::Record(record),
        Err(e) => Outcome::Fatal(e.into()),
    }
}
