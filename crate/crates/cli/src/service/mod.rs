//! HTTP service for interactive prompt exploration.
//!
//! Every route sits behind a single bearer token when one is configured.
//! Bundled artifacts are read-only: edited templates and option sets sent
//! with a request are stored as session snapshots.

pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use caf_core::corpus::{Clause, Dataset, GoldLabel, Question};
use caf_core::report::{ESCAPE_SCORING_NOTE, LENIENT_SCORING_NOTE};
use caf_core::templating::{AnswerStyle, ExampleSet, PromptTemplate, RenderedConversation};
use caf_core::{
    run_generation, Canonicalizer, ChatProvider, ChatRequest, GenerationSetup, OptionSet,
    ProviderError, QuestionMode, Registry, RunReport, SynonymTable,
};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::ProviderConfig;
use crate::error::CliError;
use crate::runner::build_chat;
use store::{RunInfo, SessionHeader, Store, StoreError, Trial};

pub const ENV_SERVICE_TOKEN: &str = "CAF_SERVICE_TOKEN";

/// Everything the service needs at startup.
pub struct ServiceOptions {
    pub assets_dir: PathBuf,
    pub data_dir: PathBuf,
    /// Bearer token every request must carry. `None` leaves the API open.
    pub token: Option<String>,
    pub provider: ProviderConfig,
    /// Directory relative provider paths resolve against.
    pub base_dir: PathBuf,
}

struct Catalog {
    registry: Registry,
    /// Datasets by registry id, in id order.
    datasets: BTreeMap<String, Dataset>,
    /// Clause id to owning dataset id.
    clause_owner: HashMap<String, String>,
}

impl Catalog {
    fn load(assets_dir: &std::path::Path) -> Result<Self, CliError> {
        let registry = Registry::load(assets_dir)?;
        let mut datasets = BTreeMap::new();
        let mut clause_owner = HashMap::new();
        for id in registry.dataset_ids().map(String::from).collect::<Vec<_>>() {
            let ds = registry.dataset(&id)?;
            for c in ds.clauses() {
                if let Some(prev) = clause_owner.insert(c.id.clone(), id.clone()) {
                    return Err(CliError::Config(format!(
                        "clause id {} appears in datasets {prev} and {id}",
                        c.id
                    )));
                }
            }
            datasets.insert(id, ds);
        }
        Ok(Self {
            registry,
            datasets,
            clause_owner,
        })
    }

    fn clause(&self, id: &str) -> Result<(&Dataset, &Clause), ApiError> {
        let owner = self
            .clause_owner
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown clause {id}")))?;
        let ds = &self.datasets[owner];
        Ok((ds, ds.clause(id).expect("indexed clause exists")))
    }

    /// The dataset holding every clause an example set refers to.
    fn example_corpus(&self, set: &ExampleSet) -> Result<&Dataset, ApiError> {
        let first = set
            .examples
            .first()
            .ok_or_else(|| ApiError::unprocessable(format!("example set {} is empty", set.id)))?;
        let (ds, _) = self.clause(&first.clause_id)?;
        Ok(ds)
    }
}

struct Service {
    catalog: Catalog,
    store: Mutex<Store>,
    chat: Arc<dyn ChatProvider>,
    provider: ProviderConfig,
    token: Option<String>,
}

impl Service {
    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Clone)]
pub struct AppState(Arc<Service>);

impl AppState {
    pub fn new(opts: ServiceOptions) -> Result<Self, CliError> {
        let chat: Arc<dyn ChatProvider> = Arc::from(build_chat(&opts.provider, &opts.base_dir)?);
        Self::with_chat(opts, chat)
    }

    /// Builds the service around an already constructed chat backend.
    pub fn with_chat(opts: ServiceOptions, chat: Arc<dyn ChatProvider>) -> Result<Self, CliError> {
        let catalog = Catalog::load(&opts.assets_dir)?;
        let store = Store::open(&opts.data_dir).map_err(|e| CliError::Config(e.to_string()))?;
        info!(events = %store.path().display(), "session store opened");
        Ok(Self(Arc::new(Service {
            catalog,
            store: Mutex::new(store),
            chat,
            provider: opts.provider,
            token: opts.token,
        })))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/clauses", get(list_clauses))
        .route("/templates", get(list_templates))
        .route("/option-sets", get(list_option_sets))
        .route("/render", post(render_route))
        .route("/generate", post(generate))
        .route("/trials", post(create_trial))
        .route("/trials/{id}", patch(annotate_trial))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/runs", post(start_run))
        .route("/runs/{id}", get(get_run))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Binds `port` on localhost and serves until interrupted.
pub async fn serve(state: AppState, port: u16) -> Result<(), CliError> {
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
    info!(%addr, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io(PathBuf::from(addr.to_string()), e))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownSession(_) | StoreError::UnknownTrial(_) => StatusCode::NOT_FOUND,
            StoreError::BadRating(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Io { .. } | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<caf_core::RegistryError> for ApiError {
    fn from(e: caf_core::RegistryError) -> Self {
        match e {
            caf_core::RegistryError::Unknown { .. } => ApiError::not_found(e.to_string()),
            other => ApiError::unprocessable(other.to_string()),
        }
    }
}

impl From<caf_core::TemplateError> for ApiError {
    fn from(e: caf_core::TemplateError) -> Self {
        ApiError::unprocessable(e.to_string())
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        let status = match e {
            ProviderError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ProviderError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, format!("provider: {e}"))
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn require_token(
    State(state): State<AppState>,
    request: Request,
    next: Next,
) -> Result<Response, ApiError> {
    if let Some(token) = &state.0.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "missing or wrong bearer token",
            ));
        }
    }
    Ok(next.run(request).await)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

#[derive(Debug, Deserialize)]
struct ClauseQuery {
    #[serde(rename = "type")]
    clause_type: Option<String>,
}

#[derive(Debug, Serialize)]
struct ClauseEntry<'a> {
    #[serde(flatten)]
    clause: &'a Clause,
    dataset_id: &'a str,
    gold: Option<&'a GoldLabel>,
}

async fn list_clauses(
    State(state): State<AppState>,
    Query(q): Query<ClauseQuery>,
) -> Json<serde_json::Value> {
    let catalog = &state.0.catalog;
    let entries: Vec<ClauseEntry<'_>> = catalog
        .datasets
        .iter()
        .flat_map(|(id, ds)| {
            ds.clauses().iter().map(move |c| ClauseEntry {
                clause: c,
                dataset_id: id,
                gold: ds.label(&c.id, ds.question_id()),
            })
        })
        .filter(|e| {
            q.clause_type
                .as_deref()
                .is_none_or(|t| e.clause.clause_type == t)
        })
        .collect();
    Json(serde_json::to_value(entries).expect("clauses serialize"))
}

async fn list_templates(State(state): State<AppState>) -> Json<Vec<PromptTemplate>> {
    Json(state.0.catalog.registry.templates().cloned().collect())
}

async fn list_option_sets(State(state): State<AppState>) -> Json<Vec<OptionSet>> {
    Json(state.0.catalog.registry.option_sets().cloned().collect())
}

/// Which template and option set a request uses. Inline values are edits
/// and take precedence over registry ids.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct ArtifactChoice {
    template_id: Option<String>,
    template: Option<PromptTemplate>,
    option_set_id: Option<String>,
    option_set: Option<OptionSet>,
    example_set_ids: Vec<String>,
    answer_style: AnswerStyle,
}

struct Resolved {
    template: PromptTemplate,
    option_set: OptionSet,
    question: Question,
    synonyms: Option<SynonymTable>,
    example_sets: Vec<ExampleSet>,
    edited: bool,
}

impl ArtifactChoice {
    fn resolve(&self, catalog: &Catalog) -> Result<Resolved, ApiError> {
        let reg = &catalog.registry;
        let template = match (&self.template, &self.template_id) {
            (Some(t), _) => {
                t.validate()?;
                t.clone()
            }
            (None, Some(id)) => reg.template(id)?.clone(),
            (None, None) => return Err(ApiError::unprocessable("request names no template")),
        };
        let option_set = match (&self.option_set, &self.option_set_id) {
            (Some(o), _) => o.clone(),
            (None, Some(id)) => reg.option_set(id)?.clone(),
            (None, None) => return Err(ApiError::unprocessable("request names no option set")),
        };
        let question = reg.question(&option_set.question_id)?.clone();
        let synonyms = reg.synonyms_for(&option_set)?.cloned();
        let example_sets = self
            .example_set_ids
            .iter()
            .map(|id| reg.example_set(id).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Resolved {
            template,
            option_set,
            question,
            synonyms,
            example_sets,
            edited: self.template.is_some() || self.option_set.is_some(),
        })
    }
}

impl Resolved {
    fn render(
        &self,
        catalog: &Catalog,
        clause: &Clause,
        style: AnswerStyle,
    ) -> Result<RenderedConversation, ApiError> {
        let question = self.template.needs_question().then_some(&self.question);
        let mut conv = caf_core::render(&self.template, &self.option_set, clause, question)?;
        for set in &self.example_sets {
            let corpus = catalog.example_corpus(set)?;
            conv = caf_core::seed_with_examples(
                &conv,
                std::slice::from_ref(set),
                &self.template,
                &self.option_set,
                corpus,
                question,
                style,
            )?;
        }
        Ok(conv)
    }

    fn canonicalize(&self, raw: &str) -> (caf_core::CanonicalAnswer, caf_core::MatchTrace) {
        Canonicalizer::default().canonicalize(
            raw,
            &self.option_set,
            &self.template.escape_phrases,
            self.synonyms.as_ref(),
            self.template.selection_mode,
        )
    }
}

#[derive(Debug, Deserialize)]
struct RenderBody {
    clause_id: String,
    #[serde(flatten)]
    choice: ArtifactChoice,
}

async fn render_route(
    State(state): State<AppState>,
    Json(body): Json<RenderBody>,
) -> ApiResult<RenderedConversation> {
    let catalog = &state.0.catalog;
    let resolved = body.choice.resolve(catalog)?;
    let (_, clause) = catalog.clause(&body.clause_id)?;
    Ok(Json(resolved.render(
        catalog,
        clause,
        body.choice.answer_style,
    )?))
}

#[derive(Debug, Deserialize)]
struct GenerateBody {
    session_id: String,
    clause_id: String,
    #[serde(flatten)]
    choice: ArtifactChoice,
    model: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct TrialBody {
    session_id: String,
    clause_id: String,
    raw_response: String,
    #[serde(flatten)]
    choice: ArtifactChoice,
    rating: Option<u8>,
    notes: Option<String>,
}

/// Renders, canonicalizes and stores one trial. `respond` produces the raw
/// response for the rendered conversation.
fn record_trial(
    service: &Service,
    session_id: &str,
    clause_id: &str,
    choice: &ArtifactChoice,
    respond: impl FnOnce(&RenderedConversation) -> Result<String, ApiError>,
    rating: Option<u8>,
    notes: Option<String>,
) -> Result<Trial, ApiError> {
    let catalog = &service.catalog;
    if !service.store().has_session(session_id) {
        return Err(ApiError::not_found(format!("unknown session {session_id}")));
    }
    let resolved = choice.resolve(catalog)?;
    let (_, clause) = catalog.clause(clause_id)?;
    let conversation = resolved.render(catalog, clause, choice.answer_style)?;
    let raw_response = respond(&conversation)?;
    let (canonical, trace) = resolved.canonicalize(&raw_response);

    let mut store = service.store();
    let snapshot_version = if resolved.edited {
        Some(store.snapshot_for(session_id, &resolved.template, &resolved.option_set, now())?)
    } else {
        None
    };
    let trial = Trial {
        id: uuid::Uuid::new_v4().to_string(),
        session_id: session_id.to_string(),
        timestamp: now(),
        clause_id: clause.id.clone(),
        template_id: resolved.template.id.clone(),
        option_set_id: resolved.option_set.id.clone(),
        snapshot_version,
        conversation,
        raw_response,
        canonical,
        trace,
        rating,
        notes,
    };
    Ok(store.add_trial(trial)?)
}

async fn generate(
    State(state): State<AppState>,
    Json(body): Json<GenerateBody>,
) -> ApiResult<Trial> {
    let service = state.0.clone();
    let trial = blocking(move || {
        let provider = &service.provider;
        record_trial(
            &service,
            &body.session_id,
            &body.clause_id,
            &body.choice,
            |conv| {
                let request = ChatRequest {
                    model: body.model.clone().unwrap_or_else(|| provider.model.clone()),
                    temperature: body.temperature.unwrap_or(provider.temperature),
                    max_tokens: body.max_tokens.or(provider.max_tokens),
                    messages: conv.messages.clone(),
                };
                request.validate()?;
                Ok(service.chat.chat_complete(&request)?.text)
            },
            None,
            None,
        )
    })
    .await?;
    Ok(Json(trial))
}

async fn create_trial(
    State(state): State<AppState>,
    Json(body): Json<TrialBody>,
) -> Result<(StatusCode, Json<Trial>), ApiError> {
    let service = state.0.clone();
    let trial = blocking(move || {
        let raw = body.raw_response.clone();
        record_trial(
            &service,
            &body.session_id,
            &body.clause_id,
            &body.choice,
            |_| Ok(raw),
            body.rating,
            body.notes,
        )
    })
    .await?;
    Ok((StatusCode::CREATED, Json(trial)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateBody {
    rating: Option<u8>,
    notes: Option<String>,
}

async fn annotate_trial(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<AnnotateBody>,
) -> ApiResult<Trial> {
    if body.rating.is_none() && body.notes.is_none() {
        return Err(ApiError::unprocessable("nothing to annotate"));
    }
    Ok(Json(state.0.store().annotate(
        &id,
        body.rating,
        body.notes,
        now(),
    )?))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<store::SessionSummary>> {
    Json(state.0.store().sessions())
}

#[derive(Debug, Deserialize)]
struct SessionBody {
    author: String,
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<SessionBody>,
) -> Result<(StatusCode, Json<store::SessionView>), ApiError> {
    if body.author.trim().is_empty() {
        return Err(ApiError::unprocessable("author must not be empty"));
    }
    let header = SessionHeader {
        id: uuid::Uuid::new_v4().to_string(),
        author: body.author,
        created_at: now(),
    };
    let view = state.0.store().create_session(header)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<store::SessionView> {
    Ok(Json(state.0.store().session(&id)?))
}

#[derive(Debug, Deserialize)]
struct RunBody {
    session_id: String,
    dataset: String,
    /// Restricts the run to these clauses; all clauses otherwise.
    clause_ids: Option<Vec<String>>,
    #[serde(flatten)]
    choice: ArtifactChoice,
}

#[derive(Debug, Serialize)]
struct RunStarted {
    run_id: String,
    status: store::RunStatus,
}

async fn start_run(
    State(state): State<AppState>,
    Json(body): Json<RunBody>,
) -> Result<(StatusCode, Json<RunStarted>), ApiError> {
    let service = state.0.clone();
    let catalog = &service.catalog;
    let resolved = body.choice.resolve(catalog)?;
    let dataset = catalog
        .datasets
        .get(&body.dataset)
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset {}", body.dataset)))?;
    if dataset.question_id() != resolved.question.id {
        return Err(ApiError::unprocessable(format!(
            "dataset {} is labelled for {}, option set {} answers {}",
            body.dataset,
            dataset.question_id(),
            resolved.option_set.id,
            resolved.question.id
        )));
    }
    let dataset = match &body.clause_ids {
        Some(ids) => dataset
            .subset(ids)
            .map_err(|e| ApiError::unprocessable(e.to_string()))?,
        None => dataset.clone(),
    };
    let example_corpus = match resolved.example_sets.first() {
        Some(set) => Some(catalog.example_corpus(set)?.clone()),
        None => None,
    };

    let run_id = uuid::Uuid::new_v4().to_string();
    {
        let mut store = service.store();
        if !store.has_session(&body.session_id) {
            return Err(ApiError::not_found(format!(
                "unknown session {}",
                body.session_id
            )));
        }
        if let Some(active) = store.active_run(&body.session_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("session already has run {} in progress", active.info.id),
            ));
        }
        store.start_run(RunInfo {
            id: run_id.clone(),
            session_id: body.session_id.clone(),
            dataset_id: body.dataset.clone(),
            clause_ids: body.clause_ids.clone(),
            started_at: now(),
        })?;
    }

    let worker = service.clone();
    let id = run_id.clone();
    let answer_style = body.choice.answer_style;
    tokio::task::spawn_blocking(move || {
        let outcome = execute_run(
            &worker,
            &resolved,
            &dataset,
            example_corpus.as_ref(),
            answer_style,
        );
        if let Err(e) = &outcome {
            warn!(run = %id, error = %e, "run failed");
        }
        if let Err(e) = worker.store().finish_run(&id, outcome, now()) {
            warn!(run = %id, error = %e, "could not record run outcome");
        }
    });

    Ok((
        StatusCode::ACCEPTED,
        Json(RunStarted {
            run_id,
            status: store::RunStatus::Running,
        }),
    ))
}

fn execute_run(
    service: &Service,
    resolved: &Resolved,
    dataset: &Dataset,
    example_corpus: Option<&Dataset>,
    answer_style: AnswerStyle,
) -> Result<(RunReport, String), String> {
    let canonicalizer = Canonicalizer::default();
    let provider = &service.provider;
    let setup = GenerationSetup {
        template: &resolved.template,
        option_set: &resolved.option_set,
        question: &resolved.question,
        synonyms: resolved.synonyms.as_ref(),
        canonicalizer: &canonicalizer,
        example_sets: &resolved.example_sets,
        example_corpus,
        answer_style,
        model: &provider.model,
        temperature: provider.temperature,
        max_tokens: provider.max_tokens,
        parallelism: provider.parallelism,
    };
    let run = run_generation(dataset, &setup, service.chat.as_ref()).map_err(|e| e.to_string())?;
    let mut notes = vec![ESCAPE_SCORING_NOTE.to_string()];
    if resolved.question.mode == QuestionMode::MultiSelect {
        notes.push(LENIENT_SCORING_NOTE.to_string());
    }
    let config = serde_json::json!({
        "template": resolved.template,
        "option_set": resolved.option_set,
        "example_set_ids": resolved.example_sets.iter().map(|s| &s.id).collect::<Vec<_>>(),
        "answer_style": answer_style,
        "provider": provider,
    });
    let label = format!("{} {}", resolved.template.id, resolved.option_set.id);
    let report = RunReport::new(
        "generation",
        &label,
        config,
        Vec::new(),
        &resolved.question.id,
        &resolved.option_set,
        run,
        notes,
    );
    let table = report.table(&resolved.option_set);
    Ok((report, table))
}

async fn get_run(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<store::RunState> {
    state
        .0
        .store()
        .run(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown run {id}")))
}
