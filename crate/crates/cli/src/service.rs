//! HTTP front end for the mix gateway and the bulletin feed.
//!
//! `POST /submit` and `GET /events` take the pipeline lock shared; `POST /fire`
//! takes it exclusively, so a reader sees a firing's records all or none.

use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cluster_notify::bulletin::BulletinRecord;
use cluster_notify::mix::SubmitReject;
use cluster_notify::model::{bucketize, CellRange, ClusterPolicy, TimeBucket};
use cluster_notify::pipeline::Pipeline;
use cluster_notify::wire::{SubmitRequest, SubmitResponse, WireFiring};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub type Clock = Arc<dyn Fn() -> TimeBucket + Send + Sync>;

pub struct ServiceState {
    pipeline: RwLock<Pipeline>,
    rng: Mutex<ChaCha8Rng>,
    clock: Clock,
}

impl ServiceState {
    pub fn new(pipeline: Pipeline, rng: ChaCha8Rng, clock: Clock) -> Arc<Self> {
        Arc::new(Self { pipeline: RwLock::new(pipeline), rng: Mutex::new(rng), clock })
    }

    /// Fires the mix and publishes whatever clusters result.
    pub fn fire(&self) -> anyhow::Result<WireFiring> {
        let mut pipe = self.pipeline.write().expect("pipeline lock");
        let mut rng = self.rng.lock().expect("rng lock");
        let report = pipe.fire_and_publish(&mut *rng)?;
        if !report.published.is_empty() {
            log::info!("firing {} published {} events", report.output.fire_index, report.published.len());
        }
        Ok(WireFiring::from(&report.output))
    }
}

/// Wall-clock bucket under `policy`.
pub fn system_clock(policy: &ClusterPolicy) -> Clock {
    let policy = policy.clone();
    Arc::new(move || {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
        bucketize(secs, &policy).unwrap_or(TimeBucket(0))
    })
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new().route("/submit", post(submit)).route("/fire", post(fire)).route("/events", get(events)).with_state(state)
}

fn reply(status: StatusCode, accepted: bool, reason: Option<String>, buffered: Option<usize>) -> Response {
    (status, Json(SubmitResponse { accepted, reason, buffered })).into_response()
}

async fn submit(State(state): State<Arc<ServiceState>>, body: String) -> Response {
    let req: SubmitRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return reply(StatusCode::BAD_REQUEST, false, Some(format!("malformed-request: {e}")), None),
    };
    let Ok(submission) = req.into_submission() else {
        return reply(StatusCode::BAD_REQUEST, false, Some("auth-invalid:malformed-token".into()), None);
    };
    let now = (state.clock)();
    let result = state.pipeline.read().expect("pipeline lock").submit(submission, now);
    match result {
        Ok(n) => reply(StatusCode::OK, true, None, Some(n)),
        Err(r) => {
            let status = match r {
                SubmitReject::MalformedBatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::FORBIDDEN,
            };
            reply(status, false, Some(r.code()), None)
        }
    }
}

async fn fire(State(state): State<Arc<ServiceState>>) -> Response {
    match state.fire() {
        Ok(f) => Json(f).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    since_seq: Option<u64>,
    cx0: Option<i64>,
    cy0: Option<i64>,
    cx1: Option<i64>,
    cy1: Option<i64>,
    b0: Option<u64>,
    b1: Option<u64>,
}

fn lines<'a>(records: impl IntoIterator<Item = &'a BulletinRecord>) -> Response {
    let body: String = records.into_iter().map(|r| r.to_line() + "\n").collect();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn events(State(state): State<Arc<ServiceState>>, Query(q): Query<EventsQuery>) -> Response {
    let pipe = state.pipeline.read().expect("pipeline lock");
    let bulletin = pipe.bulletin();
    let range = (q.cx0, q.cy0, q.cx1, q.cy1, q.b0, q.b1);
    match (q.since_seq, range) {
        (Some(seq), (None, None, None, None, None, None)) => lines(bulletin.since(seq)),
        (None, (None, None, None, None, None, None)) => lines(bulletin.since(0)),
        (None, (Some(cx0), Some(cy0), Some(cx1), Some(cy1), Some(b0), Some(b1))) => {
            match bulletin.query(&CellRange { cx0, cy0, cx1, cy1 }, TimeBucket(b0), TimeBucket(b1)) {
                Ok(records) => lines(records),
                Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
            }
        }
        _ => (StatusCode::BAD_REQUEST, "use since_seq alone or all of cx0,cy0,cx1,cy1,b0,b1").into_response(),
    }
}
