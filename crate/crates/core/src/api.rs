//! HTTP interface to the controller.
//!
//! All bodies are JSON. Errors come back as
//! `{"error": "<code>", "message": "..."}` with one of the codes listed in
//! [`ApiError`]. `GET /events` is a server-sent event stream: a `metrics`
//! snapshot on connect, then one event per change (`device`,
//! `device_deleted`, `dispatch`, `link`), preceded by the `frame` events
//! (transmissions, receptions, deferrals) the change caused and followed by
//! a fresh `metrics`.

use std::convert::Infallible;
use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::PathRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use crate::controller::{ActionRequest, Controller, ControllerError, DispatchOutcome, Targets};
use crate::metrics::MetricsReport;
use crate::node::Action;
use crate::registry::{DeviceRecord, DeviceUpdate, RegistryError};
use crate::sim::TraceEvent;
use crate::topology::Link;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ApiEvent {
    Device { device: DeviceRecord },
    DeviceDeleted { device_id: u32 },
    Dispatch { outcome: DispatchOutcome },
    Link { link: Link },
    Frame { trace: TraceEvent },
    Metrics { report: MetricsReport },
}

impl ApiEvent {
    fn name(&self) -> &'static str {
        match self {
            ApiEvent::Device { .. } => "device",
            ApiEvent::DeviceDeleted { .. } => "device_deleted",
            ApiEvent::Dispatch { .. } => "dispatch",
            ApiEvent::Link { .. } => "link",
            ApiEvent::Frame { .. } => "frame",
            ApiEvent::Metrics { .. } => "metrics",
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    controller: Arc<Mutex<Controller>>,
    events: broadcast::Sender<ApiEvent>,
    /// Trace events already published.
    published: Arc<AtomicUsize>,
}

impl AppState {
    pub fn new(controller: Controller) -> Self {
        let (events, _) = broadcast::channel(1024);
        let published = Arc::new(AtomicUsize::new(controller.sim().trace().len()));
        AppState {
            controller: Arc::new(Mutex::new(controller)),
            events,
            published,
        }
    }

    pub fn controller(&self) -> MutexGuard<'_, Controller> {
        self.controller.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ApiEvent> {
        self.events.subscribe()
    }

    fn publish(&self, event: ApiEvent, controller: &Controller) {
        // sending fails only when nobody is listening
        let trace = controller.sim().trace();
        let from = self.published.swap(trace.len(), Ordering::SeqCst).min(trace.len());
        if self.events.receiver_count() > 0 {
            for t in &trace[from..] {
                let _ = self.events.send(ApiEvent::Frame { trace: t.clone() });
            }
        }
        let _ = self.events.send(event);
        let _ = self.events.send(ApiEvent::Metrics {
            report: controller.metrics(),
        });
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        ApiError {
            status,
            code,
            message: message.to_string(),
        }
    }

    fn invalid_body(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, code) = match &e {
            RegistryError::DuplicateDeviceId(_) => (StatusCode::CONFLICT, "duplicate_device_id"),
            RegistryError::ReservedId => (StatusCode::BAD_REQUEST, "reserved_id"),
            RegistryError::InvalidCoordinates(..) => (StatusCode::BAD_REQUEST, "invalid_coordinates"),
            RegistryError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            RegistryError::Snapshot { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e)
    }
}

impl From<ControllerError> for ApiError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Registry(e) => e.into(),
            ControllerError::UnknownAction(_) => ApiError::new(StatusCode::BAD_REQUEST, "unknown_action", e),
            ControllerError::NoTargets => ApiError::new(StatusCode::BAD_REQUEST, "no_targets", e),
            ControllerError::GatewayDown(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "gateway_down", e),
            ControllerError::Topology(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_link", e),
            ControllerError::UnknownDispatch(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e),
        }
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_path", e.body_text())
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::invalid_body)
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/devices", post(register_device).get(list_devices))
        .route(
            "/devices/{id}",
            get(get_device).put(update_device).delete(delete_device),
        )
        .route("/devices/{id}/connectivity", get(connectivity))
        .route("/actions", post(dispatch))
        .route("/metrics", get(metrics))
        .route("/topology", get(topology))
        .route("/links/{a}/{b}", put(update_link))
        .route("/events", get(events))
        .with_state(state)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn register_device(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<DeviceRecord>)> {
    let record: DeviceRecord = parse(&body)?;
    let mut c = state.controller();
    let stored = c.register_device(record)?;
    state.publish(ApiEvent::Device { device: stored.clone() }, &c);
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn list_devices(State(state): State<AppState>) -> Json<Vec<DeviceRecord>> {
    Json(state.controller().list_devices())
}

async fn get_device(State(state): State<AppState>, id: Result<Path<u32>, PathRejection>) -> ApiResult<Json<DeviceRecord>> {
    let Path(id) = id?;
    Ok(Json(state.controller().get_device(id)?.clone()))
}

async fn update_device(
    State(state): State<AppState>,
    id: Result<Path<u32>, PathRejection>,
    body: Bytes,
) -> ApiResult<Json<DeviceRecord>> {
    let Path(id) = id?;
    let update: DeviceUpdate = parse(&body)?;
    let mut c = state.controller();
    let stored = c.update_device(id, update)?;
    state.publish(ApiEvent::Device { device: stored.clone() }, &c);
    Ok(Json(stored))
}

async fn delete_device(State(state): State<AppState>, id: Result<Path<u32>, PathRejection>) -> ApiResult<StatusCode> {
    let Path(id) = id?;
    let mut c = state.controller();
    c.delete_device(id)?;
    state.publish(ApiEvent::DeviceDeleted { device_id: id }, &c);
    Ok(StatusCode::NO_CONTENT)
}

async fn connectivity(State(state): State<AppState>, id: Result<Path<u32>, PathRejection>) -> ApiResult<Response> {
    let Path(id) = id?;
    let mut c = state.controller();
    let result = c.connectivity_check(id)?;
    state.publish(
        ApiEvent::Metrics {
            report: c.metrics(),
        },
        &c,
    );
    Ok(Json(result).into_response())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TargetsBody {
    One(u32),
    List(Vec<u32>),
    Keyword(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ActionBody {
    Id(u32),
    Name(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DispatchBody {
    targets: TargetsBody,
    action: ActionBody,
    timeout_s: Option<f64>,
    retries: Option<u32>,
}

impl DispatchBody {
    fn into_request(self) -> ApiResult<ActionRequest> {
        let targets = match self.targets {
            TargetsBody::One(id) => Targets::Device(id),
            TargetsBody::List(ids) => Targets::List(ids),
            TargetsBody::Keyword(k) if k.eq_ignore_ascii_case("all") => Targets::All,
            TargetsBody::Keyword(k) => {
                return Err(ApiError::invalid_body(format!(
                    "targets must be an ID, a list of IDs or \"all\", not {k:?}"
                )))
            }
        };
        let action = match self.action {
            ActionBody::Id(id) => Action::from_id(id).ok_or_else(|| ControllerError::UnknownAction(id.to_string()))?,
            ActionBody::Name(name) => name
                .parse::<Action>()
                .map_err(|_| ControllerError::UnknownAction(name))?,
        };
        let timeout = match self.timeout_s {
            None => None,
            Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
            Some(t) => return Err(ApiError::invalid_body(format!("timeout_s must be positive, got {t}"))),
        };
        Ok(ActionRequest {
            targets,
            action,
            timeout,
            retries: self.retries,
        })
    }
}

async fn dispatch(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<DispatchOutcome>> {
    let request = parse::<DispatchBody>(&body)?.into_request()?;
    let mut c = state.controller();
    let outcome = c.dispatch_action(&request)?;
    state.publish(ApiEvent::Dispatch { outcome: outcome.clone() }, &c);
    Ok(Json(outcome))
}

async fn metrics(State(state): State<AppState>) -> Json<MetricsReport> {
    Json(state.controller().metrics())
}

#[derive(Serialize)]
struct TopologyView {
    gateway: u32,
    nodes: Vec<u32>,
    links: Vec<Link>,
}

async fn topology(State(state): State<AppState>) -> Json<TopologyView> {
    let c = state.controller();
    let topo = c.sim().topology();
    Json(TopologyView {
        gateway: c.gateway(),
        nodes: topo.nodes().collect(),
        links: topo.links().copied().collect(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkBody {
    enabled: Option<bool>,
    p_err: Option<f64>,
}

async fn update_link(
    State(state): State<AppState>,
    ends: Result<Path<(u32, u32)>, PathRejection>,
    body: Bytes,
) -> ApiResult<Json<Link>> {
    let Path((a, b)) = ends?;
    let patch: LinkBody = parse(&body)?;
    let mut c = state.controller();
    let link = c.update_link(a, b, patch.p_err, patch.enabled)?;
    state.publish(ApiEvent::Link { link }, &c);
    Ok(Json(link))
}

fn to_sse(event: &ApiEvent) -> Event {
    Event::default()
        .event(event.name())
        .json_data(event)
        .expect("events serialize")
}

async fn events(State(state): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let first = ApiEvent::Metrics {
        report: state.controller().metrics(),
    };
    let updates = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(event) => return Some((to_sse(&event), rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("event stream lagged by {n}"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let stream = stream::once(async move { to_sse(&first) })
        .chain(updates)
        .map(Ok);
    Sse::new(stream).keep_alive(KeepAlive::default())
}
