//! HTTP/1.1 front end for the inference service.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bdaas_security::{Admission, ChainRequest};
use serde::{Deserialize, Serialize};

use crate::error::ServeError;
use crate::service::{InferenceRequest, InferenceResponse, InferenceService};

pub const CLIENT_ID_HEADER: &str = "x-client-id";
pub const RELOAD_ENDPOINT: &str = "/admin/model-reload";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferBody {
    #[serde(default)]
    pub id: Option<String>,
    pub records: Vec<Vec<f64>>,
}

/// One entry of the `/infer` reply, in record order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordResult {
    Ok(Box<serde_json::Value>),
    Err { id: String, error: serde_json::Value, status: u16 },
}

struct AppState {
    service: Arc<InferenceService>,
    next_id: AtomicU64,
}

pub fn router(service: Arc<InferenceService>) -> Router {
    let state = Arc::new(AppState {
        service,
        next_id: AtomicU64::new(0),
    });
    Router::new()
        .route("/infer", post(infer))
        .route("/healthz", get(healthz))
        .route("/readyz", get(readyz))
        .route("/metrics", get(metrics))
        .route(RELOAD_ENDPOINT, post(reload))
        .with_state(state)
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<InferenceService>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::to_string)
}

fn client_id(headers: &HeaderMap) -> String {
    headers
        .get(CLIENT_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("anonymous")
        .to_string()
}

fn error_json(status: u16, message: &str) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(serde_json::json!({ "error": message }))).into_response()
}

fn status_of(e: &ServeError) -> StatusCode {
    StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

async fn infer(State(st): State<Arc<AppState>>, headers: HeaderMap, body: axum::body::Bytes) -> Response {
    let received_at = Instant::now();
    let parsed: InferBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_json(400, &format!("invalid body: {e}")),
    };
    if parsed.records.is_empty() {
        return error_json(400, "records must not be empty");
    }
    let base = parsed
        .id
        .unwrap_or_else(|| format!("req-{}", st.next_id.fetch_add(1, Ordering::Relaxed)));
    let token = bearer(&headers);
    let client = client_id(&headers);
    let many = parsed.records.len() > 1;

    let mut pending = Vec::with_capacity(parsed.records.len());
    for (i, features) in parsed.records.into_iter().enumerate() {
        let id = if many { format!("{base}-{i}") } else { base.clone() };
        let mut req = InferenceRequest::new(id.clone(), features).with_client(client.clone());
        req.received_at = received_at;
        if let Some(t) = &token {
            req = req.with_bearer(t.clone());
        }
        pending.push((id, st.service.submit(req)));
    }

    let mut results = Vec::with_capacity(pending.len());
    let mut first_error: Option<StatusCode> = None;
    let mut any_ok = false;
    let mut retry_after = None;
    for (id, submitted) in pending {
        let reply: Result<InferenceResponse, ServeError> = match submitted {
            Ok(ticket) => ticket.recv().await,
            Err(e) => Err(e),
        };
        match reply {
            Ok(r) => {
                any_ok = true;
                results.push(RecordResult::Ok(Box::new(serde_json::to_value(r).unwrap_or_default())));
            }
            Err(e) => {
                first_error.get_or_insert(status_of(&e));
                if retry_after.is_none() {
                    retry_after = e.retry_after();
                }
                results.push(RecordResult::Err {
                    id,
                    status: e.status(),
                    error: serde_json::to_value(&e).unwrap_or_default(),
                });
            }
        }
    }
    let status = if any_ok {
        StatusCode::OK
    } else {
        first_error.unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    };
    let mut resp = (status, Json(results)).into_response();
    if let Some(d) = retry_after.filter(|_| !any_ok) {
        let secs = d.as_secs_f64().ceil().max(1.0) as u64;
        if let Ok(v) = secs.to_string().parse() {
            resp.headers_mut().insert(header::RETRY_AFTER, v);
        }
    }
    resp
}

async fn healthz(State(st): State<Arc<AppState>>) -> Response {
    let probe = st.service.probe();
    let code = if probe.live {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (code, Json(probe)).into_response()
}

async fn readyz(State(st): State<Arc<AppState>>) -> Response {
    let probe = st.service.probe();
    let code = if probe.ready {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (code, Json(probe)).into_response()
}

async fn metrics(State(st): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        st.service.render_metrics(),
    )
        .into_response()
}

async fn reload(State(st): State<Arc<AppState>>, headers: HeaderMap, body: axum::body::Bytes) -> Response {
    let token = bearer(&headers);
    let client = client_id(&headers);
    let req = ChainRequest {
        client_id: &client,
        bearer: token.as_deref(),
        endpoint: RELOAD_ENDPOINT,
        rows: None,
        body: &body,
    };
    let chain = st.service.chain();
    let version = st.service.model_version().unwrap_or_default();
    let (principal, mut timings) = match chain.admit(&req) {
        Admission::Admitted(a) => (a.principal, a.timings),
        Admission::Rejected(mut r) => {
            let outcome = format!("rejected by {}: {}", r.stage, r.reason);
            chain.record_outcome(&req, &r.principal, &outcome, &version, Default::default(), &mut r.timings);
            return error_json(r.status, &r.reason);
        }
    };
    let service = st.service.clone();
    let result = tokio::task::spawn_blocking(move || service.lifecycle().reload())
        .await
        .unwrap_or_else(|e| Err(e.to_string()));
    let version = st.service.model_version().unwrap_or_default();
    let outcome = match &result {
        Ok(()) => "reloaded".to_string(),
        Err(e) => format!("reload failed: {e}"),
    };
    chain.record_outcome(&req, &principal, &outcome, &version, Default::default(), &mut timings);
    match result {
        Ok(()) => (StatusCode::OK, Json(serde_json::json!({ "model_version": version }))).into_response(),
        Err(e) => error_json(503, &e),
    }
}
