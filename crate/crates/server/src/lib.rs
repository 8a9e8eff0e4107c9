//! HTTP front end for the virtual testbed.
//!
//! One testbed sits behind a mutex. Optimization runs on a private clone in a
//! blocking task while the shared copy is marked busy; readers keep seeing the
//! last committed state until the run swaps its clone in.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use ris_core::array::{Direction, PhaseConfig};
use ris_core::control::frame::from_hex;
use ris_core::control::{BlockAddress, ControlError};
use ris_core::optimizer::{ElementOrder, OptimizerSettings, TraceEntry};
use ris_core::scenario::{Scenario, ScenarioError};
use ris_core::testbed::{pattern_csv, RunStatus, Testbed, TestbedError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::watch;

/// One north-bound endpoint and the CLI subcommand that performs the same operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub method: &'static str,
    pub path: &'static str,
    pub cli: &'static str,
}

pub const ROUTES: &[Route] = &[
    Route { method: "GET", path: "/scenario", cli: "scenario show" },
    Route { method: "PUT", path: "/scenario", cli: "scenario validate" },
    Route { method: "GET", path: "/state", cli: "status" },
    Route { method: "POST", path: "/config", cli: "apply" },
    Route { method: "POST", path: "/steer", cli: "steer" },
    Route { method: "POST", path: "/optimize", cli: "optimize" },
    Route { method: "GET", path: "/trace", cli: "optimize" },
    Route { method: "POST", path: "/sweep", cli: "sweep" },
    Route { method: "GET", path: "/pattern", cli: "pattern" },
    Route { method: "GET", path: "/blocks", cli: "blocks" },
    Route { method: "POST", path: "/blocks/{address}/config", cli: "blocks" },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub context: Value,
}

impl ApiError {
    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: code.into(), message: message.into(), context: Value::Null }
    }

    fn with_context(mut self, context: Value) -> Self {
        self.context = context;
        self
    }
}

impl From<TestbedError> for ApiError {
    fn from(e: TestbedError) -> Self {
        let status = match &e {
            TestbedError::Busy(_) => StatusCode::CONFLICT,
            TestbedError::Scenario(ScenarioError::Parse(_)) => StatusCode::BAD_REQUEST,
            TestbedError::Scenario(_) => StatusCode::UNPROCESSABLE_ENTITY,
            TestbedError::Array(_) => StatusCode::BAD_REQUEST,
            TestbedError::Control(ControlError::MissingBlock(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let context = match &e {
            TestbedError::Busy(s) => json!({ "run_status": s }),
            TestbedError::ApplyFailed(a) => json!({ "blocks": a }),
            TestbedError::Optimize { probe, .. } => json!({ "probe": probe }),
            _ => Value::Null,
        };
        Self { status, code: e.code().into(), message: e.to_string(), context }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default)]
struct RunLog {
    run_id: u64,
    entries: Vec<TraceEntry>,
    done: bool,
    error: Option<String>,
}

struct Shared {
    bed: Mutex<Testbed>,
    log: Mutex<RunLog>,
    tick: watch::Sender<u64>,
    artifacts: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(bed: Testbed) -> Self {
        Self::with_artifacts(bed, None)
    }

    /// Sweep and optimization results are also written under `dir` when given.
    pub fn with_artifacts(bed: Testbed, dir: Option<PathBuf>) -> Self {
        let (tick, _) = watch::channel(0);
        let log = RunLog { done: true, ..Default::default() };
        Self(Arc::new(Shared { bed: Mutex::new(bed), log: Mutex::new(log), tick, artifacts: dir }))
    }

    fn bed(&self) -> MutexGuard<'_, Testbed> {
        self.0.bed.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn log(&self) -> MutexGuard<'_, RunLog> {
        self.0.log.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn notify(&self) {
        self.0.tick.send_modify(|t| *t += 1);
    }

    fn persist(&self, name: &str, text: &str) {
        if let Some(dir) = &self.0.artifacts {
            // artifacts are best effort; the response already carries the data
            let _ = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(name), text));
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/scenario", get(get_scenario).put(put_scenario))
        .route("/state", get(get_state))
        .route("/config", post(post_config))
        .route("/steer", post(post_steer))
        .route("/optimize", post(post_optimize))
        .route("/trace", get(get_trace))
        .route("/sweep", post(post_sweep))
        .route("/pattern", get(get_pattern))
        .route("/blocks", get(get_blocks))
        .route("/blocks/{address}/config", post(post_block_config))
        .with_state(state)
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("MALFORMED_REQUEST", e.to_string()))
}

fn parse_config(bed: &Testbed, hex: &str) -> ApiResult<PhaseConfig> {
    bed.parse_config(hex).map_err(|e| ApiError::from(e).with_context(json!({ "config_hex": hex })))
}

fn wants_csv(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/csv"))
}

fn csv_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv")], body).into_response()
}

async fn get_scenario(State(s): State<AppState>) -> Json<Scenario> {
    Json(s.bed().scenario().clone())
}

async fn put_scenario(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Scenario>> {
    let scenario = Scenario::from_json(&String::from_utf8_lossy(&body)).map_err(TestbedError::from)?;
    let mut bed = s.bed();
    bed.replace_scenario(scenario)?;
    let mut log = s.log();
    *log = RunLog { run_id: log.run_id, done: true, ..Default::default() };
    Ok(Json(bed.scenario().clone()))
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub run_status: RunStatus,
    pub current_power_db: f64,
    pub config_hex: String,
    pub rows: usize,
    pub cols: usize,
    pub final_config_hex: Option<String>,
}

async fn get_state(State(s): State<AppState>) -> Json<StateView> {
    let bed = s.bed();
    Json(StateView {
        run_status: bed.run_status(),
        current_power_db: bed.current_power_db(),
        config_hex: bed.current_config().to_hex(),
        rows: bed.scenario().geometry.rows(),
        cols: bed.scenario().geometry.cols(),
        final_config_hex: bed.final_config().map(|c| c.to_hex()),
    })
}

#[derive(Debug, Deserialize)]
struct ConfigRequest {
    config_hex: String,
}

async fn post_config(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: ConfigRequest = parse_body(&body)?;
    let mut bed = s.bed();
    let config = parse_config(&bed, &req.config_hex)?;
    Ok(Json(bed.apply_config(&config)?).into_response())
}

#[derive(Debug, Deserialize)]
struct SteerRequest {
    theta_deg: f64,
    #[serde(default)]
    phi_deg: f64,
}

async fn post_steer(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: SteerRequest = parse_body(&body)?;
    let dir = Direction::new(req.theta_deg, req.phi_deg).map_err(TestbedError::from)?;
    let mut bed = s.bed();
    Ok(Json(bed.steer(dir)?).into_response())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderName {
    #[default]
    RowMajor,
    Random,
}

#[derive(Debug, Deserialize)]
pub struct OptimizeRequest {
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default)]
    pub epsilon_db: f64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub order: OrderName,
}

fn default_passes() -> usize {
    OptimizerSettings::default().passes
}

impl OptimizeRequest {
    pub fn settings(&self) -> ApiResult<OptimizerSettings> {
        if self.epsilon_db.is_nan() || self.epsilon_db < 0.0 {
            return Err(ApiError::bad_request("INVALID_ARGUMENT", "epsilon_db must be >= 0"));
        }
        let element_order = match self.order {
            OrderName::RowMajor => ElementOrder::RowMajor,
            OrderName::Random => ElementOrder::Random { seed: self.seed.unwrap_or(0) },
        };
        Ok(OptimizerSettings { passes: self.passes, epsilon_db: self.epsilon_db, element_order })
    }
}

#[derive(Debug, Default, Deserialize)]
struct WaitQuery {
    #[serde(default)]
    wait: bool,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    run_id: u64,
    probes: usize,
    improvement_db: Option<f64>,
    final_power_db: f64,
    final_config_hex: Option<String>,
    error: Option<String>,
}

async fn post_optimize(State(s): State<AppState>, Query(q): Query<WaitQuery>, body: Bytes) -> ApiResult<Response> {
    let req: OptimizeRequest = parse_body(&body)?;
    let settings = req.settings()?;
    let (mut work, run_id) = {
        let mut bed = s.bed();
        if bed.run_status() != RunStatus::Idle {
            return Err(TestbedError::Busy(bed.run_status()).into());
        }
        let mut work = bed.clone();
        bed.set_run_status(RunStatus::Optimizing);
        let mut log = s.log();
        let run_id = log.run_id + 1;
        *log = RunLog { run_id, ..Default::default() };
        if let Some(seed) = req.seed {
            work.reseed_noise(seed);
        }
        (work, run_id)
    };
    s.notify();

    let state = s.clone();
    let task = tokio::task::spawn_blocking(move || {
        let observer_state = state.clone();
        let result = work.run_optimization(&settings, |e| {
            observer_state.log().entries.push(*e);
            observer_state.notify();
        });
        let summary = {
            let mut bed = state.bed();
            let error = match &result {
                Ok(trace) => {
                    state.persist("trace.csv", &trace.to_csv());
                    state.persist("final.hex", &format!("{}\n", work.current_config().to_hex()));
                    *bed = work;
                    None
                }
                Err(e) => {
                    bed.set_run_status(RunStatus::Idle);
                    Some(e.to_string())
                }
            };
            RunSummary {
                run_id,
                probes: state.log().entries.len(),
                improvement_db: result.as_ref().ok().and_then(|t| t.improvement_db().ok()),
                final_power_db: bed.current_power_db(),
                final_config_hex: bed.final_config().map(|c| c.to_hex()),
                error,
            }
        };
        {
            let mut log = state.log();
            log.done = true;
            log.error = summary.error.clone();
        }
        state.notify();
        summary
    });

    if q.wait {
        let summary = task.await.map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "RUN_PANICKED".into(),
            message: e.to_string(),
            context: Value::Null,
        })?;
        return Ok(Json(summary).into_response());
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id, "status": "started" }))).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct TraceQuery {
    #[serde(default)]
    snapshot: bool,
}

#[derive(Debug, Serialize)]
struct TraceSnapshot {
    run_id: u64,
    done: bool,
    error: Option<String>,
    entries: Vec<TraceEntry>,
}

async fn get_trace(State(s): State<AppState>, Query(q): Query<TraceQuery>, headers: HeaderMap) -> Response {
    if q.snapshot || wants_csv(&headers) {
        let log = s.log();
        if wants_csv(&headers) {
            let trace = ris_core::optimizer::PowerTrace { entries: log.entries.clone() };
            return csv_response(trace.to_csv());
        }
        return Json(TraceSnapshot {
            run_id: log.run_id,
            done: log.done,
            error: log.error.clone(),
            entries: log.entries.clone(),
        })
        .into_response();
    }
    Sse::new(trace_events(s)).keep_alive(KeepAlive::default()).into_response()
}

/// Replays the current run from its first probe, then follows it live until
/// it finishes or another run replaces it.
fn trace_events(s: AppState) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = s.0.tick.subscribe();
    let run_id = s.log().run_id;
    stream::unfold((s, rx, 0usize, false), move |(s, mut rx, idx, finished)| async move {
        if finished {
            return None;
        }
        loop {
            rx.borrow_and_update();
            let next = {
                let log = s.log();
                if log.run_id != run_id {
                    return None;
                }
                if let Some(e) = log.entries.get(idx) {
                    let ev = Event::default().event("probe").id(e.iteration.to_string()).json_data(e).ok()?;
                    Some((ev, idx + 1, false))
                } else if log.done {
                    let body = json!({ "run_id": run_id, "probes": log.entries.len(), "error": log.error });
                    Some((Event::default().event("done").data(body.to_string()), idx, true))
                } else {
                    None
                }
            };
            match next {
                Some((ev, idx, finished)) => return Some((Ok(ev), (s, rx, idx, finished))),
                None => {
                    if rx.changed().await.is_err() {
                        return None;
                    }
                }
            }
        }
    })
}

#[derive(Debug, Deserialize)]
struct SweepRequest {
    config_a_hex: String,
    config_b_hex: Option<String>,
}

async fn post_sweep(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req: SweepRequest = parse_body(&body)?;
    let table = {
        let mut bed = s.bed();
        let a = parse_config(&bed, &req.config_a_hex)?;
        let b = match &req.config_b_hex {
            Some(hex) => parse_config(&bed, hex)?,
            None => bed.scenario().geometry.empty_config(),
        };
        bed.run_sweep(&a, &b)?
    };
    let csv = table.to_csv();
    s.persist("sweep.csv", &csv);
    if wants_csv(&headers) {
        return Ok(csv_response(csv));
    }
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "freq_hz": r.freq_hz,
                "gain_db_config": r.gain_db_config,
                "gain_db_base": r.gain_db_base,
                "delta_db": r.delta_db(),
            })
        })
        .collect();
    Ok(Json(json!({ "rows": rows })).into_response())
}

#[derive(Debug, Deserialize)]
struct PatternQuery {
    #[serde(default = "theta_lo")]
    theta_min: f64,
    #[serde(default = "theta_hi")]
    theta_max: f64,
    #[serde(default = "theta_n")]
    n: usize,
    #[serde(default)]
    phi: f64,
}

fn theta_lo() -> f64 {
    -90.0
}

fn theta_hi() -> f64 {
    90.0
}

fn theta_n() -> usize {
    721
}

async fn get_pattern(State(s): State<AppState>, Query(q): Query<PatternQuery>, headers: HeaderMap) -> ApiResult<Response> {
    let points = s.bed().pattern(q.theta_min, q.theta_max, q.n, q.phi)?;
    if wants_csv(&headers) {
        return Ok(csv_response(pattern_csv(&points)));
    }
    Ok(Json(points).into_response())
}

async fn get_blocks(State(s): State<AppState>) -> Response {
    Json(s.bed().blocks()).into_response()
}

#[derive(Debug, Deserialize)]
struct BlockConfigRequest {
    surface_hex: String,
}

async fn post_block_config(State(s): State<AppState>, Path(address): Path<u8>, body: Bytes) -> ApiResult<Response> {
    let req: BlockConfigRequest = parse_body(&body)?;
    let address = BlockAddress::new(address)
        .ok()
        .filter(|a| !a.is_broadcast())
        .ok_or_else(|| ApiError::bad_request("BAD_ADDRESS", format!("{address} is not a block address")))?;
    let surface: [u8; 8] = from_hex(&req.surface_hex)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ApiError::bad_request("BAD_HEX", "surface_hex must be 16 hex digits"))?;
    let mut bed = s.bed();
    Ok(Json(bed.apply_block(address, surface)?).into_response())
}
