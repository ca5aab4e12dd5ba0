//! HTTP interface for the web channel: browse and vote on published concepts,
//! read campaign statistics, and administer campaign lifecycles.
//!
//! Every campaign sits behind its own mutex, so writes to one campaign are
//! serialized while campaigns proceed independently. Work that may call an
//! operator backend runs on the blocking pool.

mod error;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration as StdDuration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{Duration, Utc};
use serde::Serialize;
use serde_json::{json, Value};

use ideaforge_core::analytics::{campaign_stats, CampaignStats};
use ideaforge_core::campaign::{Campaign, IngestOutcome};
use ideaforge_core::config::CampaignConfig;
use ideaforge_core::domain::{ConceptId, ConceptStatus, Vote};
use ideaforge_core::publish::WebChannel;
use ideaforge_core::state::VoteCounts;
use ideaforge_core::store::{events_from_bytes, read_log, Event, EventLog, StoreError};

pub use error::ApiError;
pub use session::{Session, COOKIE_NAME, TOKEN_HEADER};

pub const ADMIN_HEADER: &str = "x-admin-token";
/// Longest time a stats response may lag behind the log.
pub const STATS_TTL: StdDuration = StdDuration::from_secs(10);
/// Width of the evaluation timeline buckets.
pub const TIMELINE_BUCKET_MINUTES: i64 = 60;

type Shared = Arc<Mutex<Campaign>>;

struct CachedStats {
    seq: u64,
    at: Instant,
    stats: CampaignStats,
}

struct Inner {
    campaigns: Mutex<BTreeMap<String, Shared>>,
    stats: Mutex<HashMap<String, CachedStats>>,
    admin_token: Option<String>,
    data_dir: Option<PathBuf>,
    stats_ttl: StdDuration,
}

/// Shared application state. Cheap to clone.
#[derive(Clone)]
pub struct ApiState(Arc<Inner>);

impl ApiState {
    /// `admin_token: None` disables the admin endpoints. Without `data_dir`,
    /// campaigns created over HTTP keep their logs in memory.
    pub fn new(admin_token: Option<String>, data_dir: Option<PathBuf>) -> Self {
        Self::with_stats_ttl(admin_token, data_dir, STATS_TTL)
    }

    pub fn with_stats_ttl(admin_token: Option<String>, data_dir: Option<PathBuf>, stats_ttl: StdDuration) -> Self {
        Self(Arc::new(Inner {
            campaigns: Mutex::new(BTreeMap::new()),
            stats: Mutex::new(HashMap::new()),
            admin_token: admin_token.filter(|t| !t.is_empty()),
            data_dir,
            stats_ttl,
        }))
    }

    /// Serves an already running campaign.
    pub fn insert(&self, campaign: Campaign) {
        let id = campaign.id().to_string();
        self.0.campaigns.lock().expect("registry lock").insert(id, Arc::new(Mutex::new(campaign)));
    }

    /// Resumes every `*.ndjson` log in the data directory. Returns the campaign ids loaded.
    pub fn load_data_dir(&self) -> Result<Vec<String>, ApiError> {
        let Some(dir) = self.0.data_dir.clone() else { return Ok(Vec::new()) };
        let mut loaded = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(loaded),
            Err(e) => return Err(ApiError::internal(format!("{}: {e}", dir.display()))),
        };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|x| x == "ndjson")) {
            let (log, events) = EventLog::open(&path)?;
            let campaign = Campaign::resume(log, &events, Box::new(WebChannel), None, Utc::now())?;
            loaded.push(campaign.id().to_string());
            self.insert(campaign);
        }
        Ok(loaded)
    }

    fn campaign(&self, id: &str) -> Result<Shared, ApiError> {
        self.0
            .campaigns
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_campaign", format!("no campaign {id:?}")))
    }

    fn all(&self) -> Vec<Shared> {
        self.0.campaigns.lock().expect("registry lock").values().cloned().collect()
    }

    fn campaign_of(&self, concept: &ConceptId) -> Result<Shared, ApiError> {
        self.all()
            .into_iter()
            .find(|c| c.lock().expect("campaign lock").state().concepts.contains_key(concept))
            .ok_or_else(|| ApiError::not_found("unknown_concept", format!("no concept {concept}")))
    }

    fn check_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let presented = headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok());
        match (&self.0.admin_token, presented) {
            (Some(expected), Some(given)) if constant_time_eq(expected.as_bytes(), given.as_bytes()) => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }

    /// One scheduler step for every campaign.
    pub fn tick_all(&self) {
        for c in self.all() {
            let mut c = c.lock().expect("campaign lock");
            if let Err(e) = c.tick(Utc::now()) {
                log::error!("tick for {} failed: {e}", c.id());
            }
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/campaigns/{id}/concepts", get(list_concepts))
        .route("/campaigns/{id}/stats", get(stats))
        .route("/concepts/{id}/evaluations", post(evaluate))
        .route("/admin/campaigns", post(create_campaign))
        .route("/admin/campaigns/{id}/start", post(start_campaign))
        .route("/admin/campaigns/{id}/stop", post(stop_campaign))
        .with_state(state)
}

/// Serves until `shutdown` resolves, ticking every campaign each `tick` period.
pub async fn serve(
    state: ApiState,
    addr: SocketAddr,
    tick: StdDuration,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let ticker_state = state.clone();
    let ticker = tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        loop {
            interval.tick().await;
            let s = ticker_state.clone();
            if let Err(e) = tokio::task::spawn_blocking(move || s.tick_all()).await {
                log::error!("tick task failed: {e}");
            }
        }
    });
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    result
}

#[derive(Debug, Serialize)]
struct SectionView<'a> {
    label: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct Aggregates {
    positives: u64,
    neutrals: u64,
    negatives: u64,
    total: u64,
}

impl From<VoteCounts> for Aggregates {
    fn from(c: VoteCounts) -> Self {
        Self { positives: c.positives, neutrals: c.neutrals, negatives: c.negatives, total: c.total() }
    }
}

#[derive(Debug, Serialize)]
struct ConceptView<'a> {
    concept_id: &'a ConceptId,
    sections: Vec<SectionView<'a>>,
    status: ConceptStatus,
    my_vote: Option<Vote>,
    /// Present only once the caller has voted on this concept.
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregates: Option<Aggregates>,
}

async fn list_concepts(State(state): State<ApiState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let session = Session::from_headers(&headers);
    let campaign = state.campaign(&id)?;
    let campaign = campaign.lock().expect("campaign lock");
    let voter = campaign.voter_token(campaign.channel_name(), &session.token);
    let st = campaign.state();
    let views: Vec<ConceptView<'_>> = st
        .query_published()
        .into_iter()
        .map(|row| {
            let cid = &row.concept.concept_id;
            let voted = st.has_voted(cid, &voter);
            ConceptView {
                concept_id: cid,
                sections: row.concept.sections.iter().map(|s| SectionView { label: &s.label, text: &s.text }).collect(),
                status: row.concept.status,
                my_vote: st.my_vote(cid, &voter),
                aggregates: voted.then(|| row.counts.into()),
            }
        })
        .collect();
    Ok((session.response_headers(), Json(views)).into_response())
}

fn parse_vote(body: &[u8]) -> Result<Option<Vote>, ApiError> {
    let bad = |m: &str| ApiError::bad_request("bad_value", m.to_string());
    let v: Value = serde_json::from_slice(body).map_err(|_| bad("body must be JSON like {\"value\": 1}"))?;
    match v.get("value") {
        None => Err(bad("missing field value")),
        Some(Value::Null) => Ok(None),
        Some(x) => x.as_i64().and_then(Vote::from_value).map(Some).ok_or_else(|| bad("value must be -1, 0 or 1")),
    }
}

async fn evaluate(State(state): State<ApiState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let session = Session::from_headers(&headers);
    let value = parse_vote(&body)?;
    let concept = ConceptId::new(id);
    let campaign = state.campaign_of(&concept)?;
    let user = session.token.clone();
    let outcome = blocking(move || {
        let mut c = campaign.lock().expect("campaign lock");
        let now = Utc::now();
        let outcome = c.ingest_vote(&user, &concept, value, now)?;
        if let IngestOutcome::Rejected(r) = outcome {
            return Err(ApiError::rejected(r));
        }
        // The vote is recorded either way; a failed activation is retried on the next tick.
        if let Err(e) = c.maybe_activate(now).and_then(|_| c.publish_due(now)) {
            log::error!("post-vote step for {} failed: {e}", c.id());
        }
        Ok(outcome)
    })
    .await?;
    Ok((session.response_headers(), Json(outcome)).into_response())
}

fn read_events(campaign: &Campaign) -> Result<Vec<Event>, StoreError> {
    match (campaign.log().path(), campaign.log().memory_bytes()) {
        (Some(path), _) => read_log(path),
        (None, Some(bytes)) => events_from_bytes(bytes),
        (None, None) => Ok(Vec::new()),
    }
}

async fn stats(State(state): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let campaign = state.campaign(&id)?;
    let st = state.clone();
    let stats = blocking(move || {
        let c = campaign.lock().expect("campaign lock");
        let seq = c.state().last_seq;
        let mut cache = st.0.stats.lock().expect("stats lock");
        if let Some(hit) = cache.get(&id).filter(|h| h.seq == seq || h.at.elapsed() < st.0.stats_ttl) {
            return Ok(hit.stats.clone());
        }
        let events = read_events(&c)?;
        let stats = campaign_stats(c.state(), &events, Duration::minutes(TIMELINE_BUCKET_MINUTES))?;
        cache.insert(id, CachedStats { seq, at: Instant::now(), stats: stats.clone() });
        Ok(stats)
    })
    .await?;
    Ok(Json(stats).into_response())
}

fn valid_campaign_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn log_path(dir: &FsPath, id: &str) -> PathBuf {
    dir.join(format!("{id}.ndjson"))
}

async fn create_campaign(State(state): State<ApiState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    state.check_admin(&headers)?;
    let mut config: CampaignConfig =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_config", format!("unreadable config: {e}")))?;
    let id = config
        .campaign_id
        .clone()
        .unwrap_or_else(|| format!("c-{}", &ideaforge_core::campaign::random_token(&mut rand::rng())[..8]));
    if !valid_campaign_id(&id) {
        return Err(ApiError::bad_request("invalid_config", "campaign_id may only contain letters, digits, '-' and '_'"));
    }
    config.campaign_id = Some(id.clone());
    config.log_path = None;
    let id = blocking(move || {
        // Holding the registry lock makes the existence check and insert atomic.
        let mut registry = state.0.campaigns.lock().expect("registry lock");
        if registry.contains_key(&id) {
            return Err(ApiError::conflict("campaign_exists", format!("campaign {id:?} already exists")));
        }
        let log = match &state.0.data_dir {
            Some(dir) => EventLog::create(&log_path(dir, &id))?,
            None => EventLog::in_memory(),
        };
        let campaign = Campaign::create(config, log, Box::new(WebChannel), None, None, Utc::now())?;
        registry.insert(id.clone(), Arc::new(Mutex::new(campaign)));
        Ok(id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "campaign_id": id }))).into_response())
}

#[derive(Debug, Serialize)]
struct Lifecycle {
    campaign_id: String,
    running: bool,
    iteration: u64,
    total_concepts: usize,
}

fn lifecycle(c: &Campaign) -> Lifecycle {
    Lifecycle {
        campaign_id: c.id().to_string(),
        running: c.state().running,
        iteration: c.state().population.iteration,
        total_concepts: c.state().concepts.len(),
    }
}

async fn start_campaign(State(state): State<ApiState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    state.check_admin(&headers)?;
    let campaign = state.campaign(&id)?;
    let view = blocking(move || {
        let mut c = campaign.lock().expect("campaign lock");
        let now = Utc::now();
        c.start(now)?;
        c.publish_due(now)?;
        Ok(lifecycle(&c))
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn stop_campaign(State(state): State<ApiState>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    state.check_admin(&headers)?;
    let campaign = state.campaign(&id)?;
    let view = blocking(move || {
        let mut c = campaign.lock().expect("campaign lock");
        c.stop(Utc::now())?;
        Ok(lifecycle(&c))
    })
    .await?;
    Ok(Json(view).into_response())
}
