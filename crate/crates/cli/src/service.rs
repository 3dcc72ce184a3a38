//! Reward service over stdio lines and HTTP.
//!
//! Both transports speak the reward wire contract: a request is
//! `{"instance_id":"…","response":"…"}` and a reply carries `reward`,
//! `format`, `answer`, `hidden_match`, `consistency` and `error`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use guidex_core::canon::{self, Obj};
use guidex_core::verifier::{score_batch, InstanceStore, RewardMode, RewardRequest, ScoreRecord};
use serde_json::Value as Json;

#[derive(Clone)]
pub struct Service {
    pub store: Arc<InstanceStore>,
    pub mode: RewardMode,
}

impl Service {
    pub fn new(store: InstanceStore, mode: RewardMode) -> Self {
        Service {
            store: Arc::new(store),
            mode,
        }
    }

    pub fn score(&self, req: &RewardRequest) -> ScoreRecord {
        ScoreRecord {
            instance_id: req.instance_id.clone(),
            result: self.store.score(&req.instance_id, &req.response, self.mode),
        }
    }

    pub fn score_many(&self, reqs: &[RewardRequest]) -> Vec<ScoreRecord> {
        let pairs: Vec<(String, String)> = reqs.iter().map(|r| (r.instance_id.clone(), r.response.clone())).collect();
        score_batch(&self.store, &pairs, self.mode)
    }

    pub fn health(&self) -> Json {
        Obj::new()
            .field("status", "ok")
            .field("trees", self.store.tree_count() as u64)
            .field("factual", self.store.factual_count() as u64)
            .field("counterfactual", self.store.counterfactual_count() as u64)
            .build()
    }

    /// Handles one stdio line: an object is a single request, an array a
    /// batch. Malformed input yields a `bad_request` reply.
    pub fn handle_line(&self, line: &str) -> String {
        let reply = match parse_body(line.as_bytes()) {
            Ok(Body::Single(req)) => self.score(&req).to_json(),
            Ok(Body::Batch(reqs)) => Json::Array(self.score_many(&reqs).iter().map(ScoreRecord::to_json).collect()),
            Err(message) => bad_request(&message),
        };
        canon::to_string(&reply)
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/reward", post(reward))
            .route("/reward/batch", post(reward_batch))
            .route("/healthz", get(healthz))
            .with_state(self)
    }
}

enum Body {
    Single(RewardRequest),
    Batch(Vec<RewardRequest>),
}

fn parse_body(bytes: &[u8]) -> Result<Body, String> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| format!("invalid JSON: {e}"))?;
    match &json {
        Json::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| RewardRequest::from_json(item).map_err(|e| format!("item {i}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Body::Batch),
        _ => RewardRequest::from_json(&json).map(Body::Single),
    }
}

fn bad_request(message: &str) -> Json {
    Obj::new()
        .field("error", "bad_request")
        .field("message", message.to_string())
        .build()
}

fn json_response(status: StatusCode, body: &Json) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], canon::to_string(body)).into_response()
}

async fn reward(State(svc): State<Service>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(Body::Single(req)) => {
            let record = svc.score(&req);
            let status = if record.result.is_ok() {
                StatusCode::OK
            } else {
                StatusCode::NOT_FOUND
            };
            json_response(status, &record.to_json())
        }
        Ok(Body::Batch(_)) => json_response(StatusCode::BAD_REQUEST, &bad_request("expected a single request object")),
        Err(message) => json_response(StatusCode::BAD_REQUEST, &bad_request(&message)),
    }
}

async fn reward_batch(State(svc): State<Service>, body: Bytes) -> Response {
    match parse_body(&body) {
        Ok(Body::Batch(reqs)) => {
            let records: Vec<Json> = svc.score_many(&reqs).iter().map(ScoreRecord::to_json).collect();
            json_response(StatusCode::OK, &Json::Array(records))
        }
        Ok(Body::Single(_)) => json_response(StatusCode::BAD_REQUEST, &bad_request("expected an array of requests")),
        Err(message) => json_response(StatusCode::BAD_REQUEST, &bad_request(&message)),
    }
}

async fn healthz(State(svc): State<Service>) -> Response {
    json_response(StatusCode::OK, &svc.health())
}

/// Serves until `shutdown` resolves.
pub async fn serve_http(
    listener: tokio::net::TcpListener,
    svc: Service,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, svc.router()).with_graceful_shutdown(shutdown).await
}

/// Line-delimited request/reply loop; returns at end of input.
pub fn serve_stdio(svc: &Service, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", svc.handle_line(&line))?;
        output.flush()?;
    }
    Ok(())
}
