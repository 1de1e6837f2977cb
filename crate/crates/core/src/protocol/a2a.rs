//! `a2a_lite`: task submission between agents.
//!
//! `POST /a2a/tasks` with `{"task_id","message","metadata"}`. The answer is
//! `{"task_id","status":"completed","artifacts":[{"parts":[..]}]}` or
//! `{"task_id","status":"failed","error":{"code","message"}}`. A task id seen
//! before (from the same sender) gets the cached answer without invoking the
//! handler again.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    http::post_json_with, CodecError, RetryPolicy, Envelope, EnvelopeKind, HttpRequest, HttpResponse, IdempotencyCache, Message, Part,
    ProtocolError, Role, ENVELOPE_VERSION,
};

pub const TASKS_PATH: &str = "/a2a/tasks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2aMetadata {
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
    pub hops: u32,
    pub kind: EnvelopeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2aRequest {
    pub task_id: String,
    pub message: Message,
    pub metadata: A2aMetadata,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub code: String,
    pub message: String,
}

impl TaskError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Artifact {
    parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskResponse {
    task_id: String,
    status: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<TaskError>,
}

pub fn request_from_envelope(e: &Envelope) -> A2aRequest {
    A2aRequest {
        task_id: e.task_id(),
        message: e.payload.clone(),
        metadata: A2aMetadata {
            src: e.src.clone(),
            dst: e.dst.clone(),
            route: e.route.clone(),
            hops: e.hops,
            kind: e.kind,
        },
    }
}

pub fn envelope_from_request(rq: &A2aRequest) -> Result<Envelope, CodecError> {
    let (trace_id, seq) = rq
        .task_id
        .rsplit_once(':')
        .ok_or_else(|| CodecError::new("task_id", "expected <trace_id>:<seq>"))?;
    let seq: u64 = seq.parse().map_err(|_| CodecError::new("task_id", "seq must be a non-negative integer"))?;
    let envelope = Envelope {
        v: ENVELOPE_VERSION,
        kind: rq.metadata.kind,
        trace_id: trace_id.to_string(),
        seq,
        src: rq.metadata.src.clone(),
        dst: rq.metadata.dst.clone(),
        route: rq.metadata.route.clone(),
        hops: rq.metadata.hops,
        payload: rq.message.clone(),
    };
    envelope.check().map_err(|e| {
        let path = match e.path.as_str() {
            "trace_id" => "task_id".to_string(),
            p if p.starts_with("payload") => p.replacen("payload", "message", 1),
            p => format!("metadata.{p}"),
        };
        CodecError::new(path, e.message)
    })?;
    Ok(envelope)
}

pub type AgentHandler = Arc<dyn Fn(&Envelope) -> Result<Message, TaskError> + Send + Sync>;

/// Server side of `a2a_lite`: one handler per hosted agent plus the
/// idempotency cache.
pub struct A2aService {
    handlers: BTreeMap<String, AgentHandler>,
    fallback: Option<AgentHandler>,
    cache: IdempotencyCache<HttpResponse>,
    invocations: AtomicU64,
}

impl A2aService {
    pub fn new() -> Self {
        Self { handlers: BTreeMap::new(), fallback: None, cache: IdempotencyCache::new(), invocations: AtomicU64::new(0) }
    }

    pub fn register(&mut self, agent: &str, handler: AgentHandler) {
        self.handlers.insert(agent.to_string(), handler);
    }

    /// Handler for destinations without a dedicated one.
    pub fn register_fallback(&mut self, handler: AgentHandler) {
        self.fallback = Some(handler);
    }

    /// Number of times any handler actually ran.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    /// Parses and checks a request body without running anything.
    pub fn parse(body: &[u8]) -> Result<Envelope, HttpResponse> {
        let rq: A2aRequest = serde_json::from_slice(body)
            .map_err(|e| HttpResponse::error(422, "malformed", e.to_string()))?;
        envelope_from_request(&rq).map_err(|e| HttpResponse::error(422, "malformed", e.to_string()))
    }

    pub fn handle(&self, rq: &HttpRequest) -> HttpResponse {
        if rq.method != "POST" {
            return HttpResponse::error(405, "method_not_allowed", "use POST");
        }
        let envelope = match Self::parse(&rq.body) {
            Ok(e) => e,
            Err(resp) => return resp,
        };
        let Some(handler) = self.handlers.get(&envelope.dst).or(self.fallback.as_ref()) else {
            return HttpResponse::error(404, "unknown_agent", format!("no agent {}", envelope.dst));
        };
        let task_id = envelope.task_id();
        let key = format!("{task_id}|{}", envelope.src);
        self.cache.get_or_compute(&key, || {
            self.invocations.fetch_add(1, Ordering::SeqCst);
            let body = match handler(&envelope) {
                Ok(reply) if !reply.parts.is_empty() => TaskResponse {
                    task_id: task_id.clone(),
                    status: "completed".into(),
                    artifacts: vec![Artifact { parts: reply.parts }],
                    error: None,
                },
                Ok(_) => failed(&task_id, TaskError::new("empty_reply", "handler returned no parts")),
                Err(e) => failed(&task_id, e),
            };
            HttpResponse::json(200, &body)
        })
    }
}

/// A `completed` answer carrying `parts`.
pub fn completed_response(task_id: &str, parts: Vec<Part>) -> HttpResponse {
    HttpResponse::json(
        200,
        &TaskResponse { task_id: task_id.into(), status: "completed".into(), artifacts: vec![Artifact { parts }], error: None },
    )
}

fn failed(task_id: &str, error: TaskError) -> TaskResponse {
    TaskResponse { task_id: task_id.to_string(), status: "failed".into(), artifacts: Vec::new(), error: Some(error) }
}

impl Default for A2aService {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn base_url(endpoint: &str) -> String {
    if endpoint.starts_with("http://") {
        endpoint.trim_end_matches('/').to_string()
    } else {
        format!("http://{endpoint}")
    }
}

/// Client side: submit `e` and return the receiver's reply as a
/// `task_result` envelope addressed back to the sender.
pub fn submit_task(endpoint: &str, e: &Envelope) -> Result<Envelope, ProtocolError> {
    submit_task_with(endpoint, e, "", RetryPolicy::default())
}

pub fn submit_task_with(endpoint: &str, e: &Envelope, query: &str, policy: RetryPolicy) -> Result<Envelope, ProtocolError> {
    let body = crate::canonical::to_compact(&request_from_envelope(e));
    let url = super::rpc::with_query(format!("{}{TASKS_PATH}", base_url(endpoint)), query);
    let (status, reply) = post_json_with(&url, body.as_bytes(), policy)?;
    if status != 200 {
        return Err(ProtocolError::Status { status, body: String::from_utf8_lossy(&reply).into_owned() });
    }
    let resp: TaskResponse =
        serde_json::from_slice(&reply).map_err(|err| ProtocolError::Transport(format!("bad a2a response: {err}")))?;
    match resp.status.as_str() {
        "completed" => Ok(Envelope {
            kind: EnvelopeKind::TaskResult,
            src: e.dst.clone(),
            dst: e.src.clone(),
            route: None,
            payload: Message::new(Role::Assistant, resp.artifacts.into_iter().flat_map(|a| a.parts).collect()),
            ..e.clone()
        }),
        _ => {
            let err = resp.error.unwrap_or_else(|| TaskError::new("unknown", "task failed"));
            Err(ProtocolError::TaskFailed { code: err.code, message: err.message })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{post_json, HttpHandler, HttpServer};

    fn serve(service: Arc<A2aService>) -> HttpServer {
        let handler: HttpHandler = Arc::new(move |rq| match rq.path.as_str() {
            TASKS_PATH => service.handle(&rq),
            _ => HttpResponse::not_found(),
        });
        HttpServer::bind("127.0.0.1:0", 4, handler).unwrap()
    }

    fn news_service() -> Arc<A2aService> {
        let mut service = A2aService::new();
        service.register(
            "news",
            Arc::new(|e: &Envelope| Ok(Message::assistant_text(format!("news about {}", e.payload.render())))),
        );
        Arc::new(service)
    }

    fn weather_output() -> Envelope {
        Envelope::agent_msg("00000000000000000000000000000001", 0, "weather", "news", Message::assistant_text("sunny"))
    }

    #[test]
    fn weather_submits_to_news() {
        let service = news_service();
        let server = serve(Arc::clone(&service));
        let reply = submit_task(&server.addr().to_string(), &weather_output()).unwrap();
        assert_eq!(reply.kind, EnvelopeKind::TaskResult);
        assert_eq!((reply.src.as_str(), reply.dst.as_str()), ("news", "weather"));
        assert_eq!(reply.payload, Message::assistant_text("news about sunny"));
        let again = submit_task(&server.url(), &weather_output()).unwrap();
        assert_eq!(again, reply);
        assert_eq!(service.invocations(), 1);
    }

    #[test]
    fn unknown_agent_and_malformed() {
        let server = serve(news_service());
        let mut e = weather_output();
        e.dst = "ghost".into();
        let err = submit_task(&server.url(), &e).unwrap_err();
        assert!(matches!(err, ProtocolError::Status { status: 404, .. }), "{err}");
        let (status, _) = post_json(&format!("{}{TASKS_PATH}", server.url()), b"{\"task_id\":1}").unwrap();
        assert_eq!(status, 422);
        let mut rq = request_from_envelope(&weather_output());
        rq.task_id = "nocolon".into();
        let (status, _) = post_json(&format!("{}{TASKS_PATH}", server.url()), serde_json::to_vec(&rq).unwrap().as_slice()).unwrap();
        assert_eq!(status, 422);
    }

    #[test]
    fn handler_failure_is_reported() {
        let mut service = A2aService::new();
        service.register("news", Arc::new(|_: &Envelope| Err(TaskError::new("boom", "no news today"))));
        let server = serve(Arc::new(service));
        let err = submit_task(&server.url(), &weather_output()).unwrap_err();
        assert_eq!(err, ProtocolError::TaskFailed { code: "boom".into(), message: "no news today".into() });
    }

    #[test]
    fn request_round_trip() {
        let e = weather_output().with_route(Some("b")).with_hops(7);
        assert_eq!(envelope_from_request(&request_from_envelope(&e)).unwrap(), e);
    }
}
