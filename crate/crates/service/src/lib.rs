//! HTTP session API over the pipeline, for the browser front end.
//!
//! A session holds one uploaded table and the configuration built up by the
//! client. Every response body is produced by the same serialisers as the
//! command-line artifacts, so a session exported here is byte-identical to a
//! batch run of its `session.json`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use anonpipe_core::config::{EmitFormat, InputSource, RunConfig, Source};
use anonpipe_core::deidentify::RuleSet;
use anonpipe_core::dimension::{DimensionError, FeasibilityConstraints, QidScope, SelectionPolicy};
use anonpipe_core::identify::Thresholds;
use anonpipe_core::mockgen::{generate, GeneratorSpec};
use anonpipe_core::pipeline::{
    artifact_files, execute_on, identify_table, prepare, report_bytes, Identification, PipelineError, RunArtifacts,
    ANONYMISED_CSV, AUDIT_LOG, DIMENSION_REPORT, DIMENSION_TEXT, IDENTIFICATION_REPORT, IDENTIFICATION_TEXT,
};
use anonpipe_core::table::{load_csv, MissingStat, Role, Schema, Table, DEFAULT_DROP_THRESHOLD};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use uuid::Uuid;

/// Largest accepted request body.
pub const MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

/// File name of the uploaded table inside a session's replayable config.
pub const UPLOAD_NAME: &str = "upload.csv";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is discarded.
    pub session_ttl: Duration,
    pub max_upload_bytes: usize,
    /// Static front-end files served for every non-API path.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_ttl: DEFAULT_SESSION_TTL,
            max_upload_bytes: MAX_UPLOAD_BYTES,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session '{0}'")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("request body exceeds the upload limit")]
    TooLarge,
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::Deidentify(_) => ApiError::Unprocessable(message),
            PipelineError::Dimension(DimensionError::InvalidConstraints(_)) => ApiError::BadRequest(message),
            PipelineError::Dimension(_) => ApiError::Unprocessable(message),
            PipelineError::Output { .. } | PipelineError::Aborted => ApiError::Internal(message),
            _ => ApiError::BadRequest(message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::TooLarge
        } else {
            ApiError::BadRequest(r.body_text())
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

struct Session {
    raw: Table,
    dropped: Vec<MissingStat>,
    config: RunConfig,
    identification: Option<Identification>,
    /// Full run for the config it was computed from.
    run: Option<(RunConfig, RunArtifacts)>,
    touched: Instant,
}

impl Session {
    fn new(raw: Table, config: RunConfig) -> Self {
        let dropped = prepare(&raw, config.drop_threshold).dropped;
        Self {
            raw,
            dropped,
            config,
            identification: None,
            run: None,
            touched: Instant::now(),
        }
    }

    fn identification(&mut self) -> Result<&Identification, ApiError> {
        if self.identification.is_none() {
            let prepared = prepare(&self.raw, self.config.drop_threshold);
            self.identification = Some(identify_table(
                &prepared.table,
                &self.config.thresholds,
                &self.config.overrides,
            )?);
        }
        Ok(self.identification.as_ref().expect("just filled"))
    }

    fn run(&mut self) -> Result<&RunArtifacts, ApiError> {
        let fresh = matches!(&self.run, Some((c, _)) if *c == self.config);
        if !fresh {
            let Source::Inline(rules) = &self.config.rules else {
                unreachable!("session rules are always inline")
            };
            let artifacts = execute_on(&self.raw, &self.config, rules)?;
            self.run = Some((self.config.clone(), artifacts));
        }
        Ok(&self.run.as_ref().expect("just filled").1)
    }

    fn invalidate(&mut self) {
        self.identification = None;
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<Uuid, Session>>>,
    ttl: Duration,
}

impl AppState {
    pub fn new(ttl: Duration) -> Self {
        Self {
            sessions: Arc::default(),
            ttl,
        }
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<Uuid, Session>> {
        // a panicked handler leaves sessions consistent: every mutation is a
        // plain field assignment
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let ttl = self.ttl;
        sessions.retain(|_, s| s.touched.elapsed() < ttl);
        sessions
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let key = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(id.to_string()))?;
        let mut sessions = self.lock();
        let session = sessions
            .get_mut(&key)
            .ok_or_else(|| ApiError::NotFound(id.to_string()))?;
        session.touched = Instant::now();
        f(session)
    }

    pub fn session_count(&self) -> usize {
        self.lock().len()
    }
}

pub fn router(config: &ServiceConfig) -> Router {
    router_with_state(AppState::new(config.session_ttl), config)
}

pub fn router_with_state(state: AppState, config: &ServiceConfig) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", axum::routing::post(create_session))
        .route("/sessions/{id}", get(session_summary).delete(delete_session))
        .route("/sessions/{id}/identification", get(identification))
        .route("/sessions/{id}/overrides", put(set_overrides))
        .route("/sessions/{id}/rules", put(set_rules))
        .route("/sessions/{id}/dimensions", get(dimensions))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/config", get(session_config))
        .layer(DefaultBodyLimit::max(config.max_upload_bytes))
        .with_state(state);
    let app = match &config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

/// Binds and serves until Ctrl-C.
pub async fn serve(addr: std::net::SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(&config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// CSV text with a header row; requires `schema`.
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub schema: Option<Schema>,
    /// Alternative to `csv`: generate the table from a spec.
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub drop_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SessionCreated {
    id: String,
    row_count: usize,
    attributes: Vec<String>,
    dropped: Vec<MissingStat>,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let (raw, input, schema) = match (req.csv, req.schema, req.generator) {
        (Some(csv), Some(schema), None) => {
            let table = load_csv("upload", csv.as_bytes(), &schema.attributes).map_err(PipelineError::from)?;
            (
                table,
                InputSource::Csv(UPLOAD_NAME.into()),
                Some(Source::Inline(schema)),
            )
        }
        (None, None, Some(spec)) => {
            let table = generate(&spec).map_err(PipelineError::from)?;
            (table, InputSource::Generator(Source::Inline(spec)), None)
        }
        (Some(_), None, None) => return Err(ApiError::BadRequest("csv upload requires a schema".into())),
        _ => return Err(ApiError::BadRequest("send either csv with schema, or generator".into())),
    };
    let config = RunConfig {
        input,
        schema,
        seed: None,
        thresholds: Thresholds::default(),
        drop_threshold: req.drop_threshold.unwrap_or(DEFAULT_DROP_THRESHOLD),
        overrides: BTreeMap::new(),
        rules: Source::Inline(RuleSet::default()),
        constraints: FeasibilityConstraints::default(),
        policy: SelectionPolicy::default(),
        qid_scope: QidScope::default(),
        output_dir: "out".into(),
        emit: vec![EmitFormat::Csv, EmitFormat::StructuredReport, EmitFormat::TextReport],
    };
    // full validation would look for the input file, which only exists once
    // the config is replayed
    if !(0.0..=1.0).contains(&config.drop_threshold) {
        return Err(ApiError::BadRequest(format!(
            "drop_threshold {} outside [0, 1]",
            config.drop_threshold
        )));
    }
    let session = Session::new(raw, config);
    let created = SessionCreated {
        id: String::new(),
        row_count: session.raw.row_count(),
        attributes: session.raw.attribute_names().iter().map(|s| s.to_string()).collect(),
        dropped: session.dropped.clone(),
    };
    let id = Uuid::new_v4();
    state.lock().insert(id, session);
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            id: id.to_string(),
            ..created
        }),
    ))
}

async fn session_summary(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    state.with_session(&id, |s| {
        Ok(Json(json!({
            "row_count": s.raw.row_count(),
            "attributes": s.raw.attribute_names(),
            "dropped": s.dropped,
            "thresholds": s.config.thresholds,
            "overrides": s.config.overrides,
            "rules": s.config.rules,
            "constraints": s.config.constraints,
            "policy": s.config.policy,
            "qid_scope": s.config.qid_scope,
        }))
        .into_response())
    })
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let key = Uuid::parse_str(&id).map_err(|_| ApiError::NotFound(id.clone()))?;
    match state.lock().remove(&key) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::NotFound(id)),
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentificationQuery {
    alpha: Option<f64>,
    beta: Option<f64>,
    #[serde(default)]
    format: Format,
}

/// Thresholds given here are stored on the session.
async fn identification(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<IdentificationQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    state.with_session(&id, |s| {
        let alpha = q.alpha.unwrap_or(s.config.thresholds.alpha_percent);
        let beta = q.beta.unwrap_or(s.config.thresholds.beta_percent);
        let thresholds = Thresholds::new(alpha, beta).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        if thresholds != s.config.thresholds {
            s.config.thresholds = thresholds;
            s.invalidate();
        }
        render_identification(s, q.format)
    })
}

fn render_identification(s: &mut Session, format: Format) -> Result<Response, ApiError> {
    let report = &s.identification()?.report;
    Ok(match format {
        Format::Json => json_bytes(report_bytes(report)),
        Format::Text => text(report.render_text()),
    })
}

/// Replaces the manual overrides; returns the re-rendered identification.
async fn set_overrides(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<BTreeMap<String, Role>>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(overrides) = body?;
    state.with_session(&id, |s| {
        let table = prepare(&s.raw, s.config.drop_threshold).table;
        if let Some(unknown) = overrides.keys().find(|a| table.index_of(a).is_err()) {
            return Err(ApiError::BadRequest(format!("unknown attribute '{unknown}'")));
        }
        s.config.overrides = overrides;
        s.invalidate();
        render_identification(s, Format::Json)
    })
}

async fn set_rules(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RuleSet>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(rules) = body?;
    rules.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
    state.with_session(&id, |s| {
        s.config.rules = Source::Inline(rules);
        Ok(json_bytes(report_bytes(&s.config.rules)))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionQuery {
    k_min: Option<usize>,
    l_min: Option<usize>,
    t_max: Option<f64>,
    policy: Option<String>,
    scope: Option<QidScope>,
    #[serde(default)]
    format: Format,
}

/// Constraints and policy given here are stored on the session.
async fn dimensions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<DimensionQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let policy = q
        .policy
        .as_deref()
        .map(str::parse::<SelectionPolicy>)
        .transpose()
        .map_err(ApiError::BadRequest)?;
    state.with_session(&id, |s| {
        let c = &mut s.config;
        let constraints = FeasibilityConstraints {
            k_min: q.k_min.unwrap_or(c.constraints.k_min),
            l_min: q.l_min.unwrap_or(c.constraints.l_min),
            t_max: q.t_max.unwrap_or(c.constraints.t_max),
        };
        constraints
            .validate()
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        c.constraints = constraints;
        c.policy = policy.unwrap_or(c.policy);
        c.qid_scope = q.scope.unwrap_or(c.qid_scope);
        let report = &s.run()?.dimensions.report;
        Ok(match q.format {
            Format::Json => json_bytes(report_bytes(report)),
            Format::Text => text(report.render_text()),
        })
    })
}

const ARTIFACTS: [&str; 6] = [
    ANONYMISED_CSV,
    IDENTIFICATION_REPORT,
    DIMENSION_REPORT,
    IDENTIFICATION_TEXT,
    DIMENSION_TEXT,
    AUDIT_LOG,
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    artifact: Option<String>,
}

/// One artifact of the current configuration, by its batch file name
/// (default `anonymised.csv`).
async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let wanted = q.artifact.unwrap_or_else(|| ANONYMISED_CSV.to_string());
    if !ARTIFACTS.contains(&wanted.as_str()) {
        return Err(ApiError::BadRequest(format!("unknown artifact '{wanted}'")));
    }
    state.with_session(&id, |s| {
        let config = s.config.clone();
        let files = artifact_files(s.run()?, &config);
        let (name, bytes) = files
            .into_iter()
            .find(|(name, _)| *name == wanted)
            .expect("sessions emit every artifact");
        let content_type = match name.rsplit('.').next() {
            Some("csv") => "text/csv; charset=utf-8",
            Some("report") => "application/json",
            Some("log") => "application/x-ndjson",
            _ => "text/plain; charset=utf-8",
        };
        Ok((
            [
                (header::CONTENT_TYPE, content_type.to_string()),
                (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}\"")),
            ],
            bytes,
        )
            .into_response())
    })
}

/// The replayable batch config of the session; CSV input refers to
/// [`UPLOAD_NAME`] next to the config.
async fn session_config(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    state.with_session(&id, |s| Ok(json_bytes(s.config.to_json().into_bytes())))
}
