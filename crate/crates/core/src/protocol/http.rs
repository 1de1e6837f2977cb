use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Serialize;

use super::ProtocolError;

/// Requests larger than this are answered with 413.
pub const MAX_BODY_BYTES: u64 = 8 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    /// Raw query string without the leading `?`.
    pub query: String,
    pub body: Vec<u8>,
}

impl HttpRequest {
    pub fn post(path: &str, body: Vec<u8>) -> Self {
        Self { method: "POST".into(), path: path.into(), query: String::new(), body }
    }

    /// Value of `key` in the query string, percent-decoding not needed for
    /// the plain tokens used here.
    pub fn query_param(&self, key: &str) -> Option<&str> {
        self.query.split('&').find_map(|kv| match kv.split_once('=') {
            Some((k, v)) if k == key => Some(v),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn json<T: Serialize + ?Sized>(status: u16, value: &T) -> Self {
        Self { status, body: crate::canonical::to_compact(value).into_bytes() }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self::json(status, &serde_json::json!({"error": {"code": code, "message": message.into()}}))
    }

    pub fn not_found() -> Self {
        Self::error(404, "not_found", "no such route")
    }
}

pub type HttpHandler = Arc<dyn Fn(HttpRequest) -> HttpResponse + Send + Sync>;

/// Small multi-threaded HTTP/1.1 server. Dropping it stops the workers.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServer {
    pub fn bind(addr: &str, workers: usize, handler: HttpHandler) -> Result<Self, ProtocolError> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| ProtocolError::Bind { addr: addr.to_string(), message: e.to_string() })?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| ProtocolError::Bind { addr: addr.to_string(), message: "not an IP listener".into() })?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let handler = Arc::clone(&handler);
                thread::spawn(move || worker(&server, &stop, &handler))
            })
            .collect();
        Ok(Self { server, addr: local, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn worker(server: &tiny_http::Server, stop: &AtomicBool, handler: &HttpHandler) {
    while !stop.load(Ordering::SeqCst) {
        let mut rq = match server.recv_timeout(Duration::from_millis(200)) {
            Ok(Some(rq)) => rq,
            Ok(None) => continue,
            Err(_) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                continue;
            }
        };
        let mut body = Vec::new();
        let read = rq.as_reader().take(MAX_BODY_BYTES + 1).read_to_end(&mut body);
        let response = if read.is_err() {
            HttpResponse::error(400, "bad_request", "cannot read request body")
        } else if body.len() as u64 > MAX_BODY_BYTES {
            HttpResponse::error(413, "too_large", "request body too large")
        } else {
            let (path, query) = match rq.url().split_once('?') {
                Some((p, q)) => (p.to_string(), q.to_string()),
                None => (rq.url().to_string(), String::new()),
            };
            handler(HttpRequest { method: rq.method().as_str().to_ascii_uppercase(), path, query, body })
        };
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        let reply = tiny_http::Response::from_data(response.body)
            .with_status_code(response.status)
            .with_header(header);
        let _ = rq.respond(reply);
    }
}

/// Exponential backoff: `attempts` tries, sleeping `initial`, `2·initial`, …
/// between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 5, initial: Duration::from_millis(100) }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_connect(Some(Duration::from_secs(2)))
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into()
}

fn transport(e: ureq::Error) -> ProtocolError {
    ProtocolError::Transport(e.to_string())
}

fn is_connect_failure(e: &ureq::Error) -> bool {
    matches!(e, ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Timeout(_))
}

fn read_body(mut resp: ureq::http::Response<ureq::Body>) -> Result<(u16, Vec<u8>), ProtocolError> {
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .with_config()
        .limit(MAX_BODY_BYTES)
        .read_to_vec()
        .map_err(transport)?;
    Ok((status, body))
}

/// Runs `op` under `policy`. Connection failures and 503 answers are retried;
/// anything else is returned as is.
pub fn with_retry<F>(endpoint: &str, policy: RetryPolicy, mut op: F) -> Result<(u16, Vec<u8>), ProtocolError>
where
    F: FnMut() -> Result<(u16, Vec<u8>), ProtocolError>,
{
    let mut delay = policy.initial;
    let mut last = String::new();
    for attempt in 0..policy.attempts.max(1) {
        if attempt > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        match op() {
            Ok((503, body)) => last = format!("503 {}", String::from_utf8_lossy(&body)),
            Ok(ok) => return Ok(ok),
            Err(ProtocolError::Connect { message, .. }) => last = message,
            Err(other) => return Err(other),
        }
    }
    Err(ProtocolError::Connect { endpoint: endpoint.to_string(), attempts: policy.attempts.max(1), message: last })
}

fn classify(endpoint: &str, e: ureq::Error) -> ProtocolError {
    if is_connect_failure(&e) {
        ProtocolError::Connect { endpoint: endpoint.to_string(), attempts: 1, message: e.to_string() }
    } else {
        transport(e)
    }
}

/// POST a JSON body with the default retry policy.
pub fn post_json(url: &str, body: &[u8]) -> Result<(u16, Vec<u8>), ProtocolError> {
    post_json_with(url, body, RetryPolicy::default())
}

pub fn post_json_with(url: &str, body: &[u8], policy: RetryPolicy) -> Result<(u16, Vec<u8>), ProtocolError> {
    let agent = agent();
    with_retry(url, policy, || {
        let resp = agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| classify(url, e))?;
        read_body(resp)
    })
}

pub fn get(url: &str) -> Result<(u16, Vec<u8>), ProtocolError> {
    get_with(url, RetryPolicy::default())
}

pub fn get_with(url: &str, policy: RetryPolicy) -> Result<(u16, Vec<u8>), ProtocolError> {
    let agent = agent();
    with_retry(url, policy, || {
        let resp = agent.get(url).call().map_err(|e| classify(url, e))?;
        read_body(resp)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_and_routes() {
        let handler: HttpHandler = Arc::new(|rq| match (rq.method.as_str(), rq.path.as_str()) {
            ("POST", "/echo") => HttpResponse { status: 200, body: rq.body },
            _ => HttpResponse::not_found(),
        });
        let server = HttpServer::bind("127.0.0.1:0", 2, handler).unwrap();
        let (status, body) = post_json(&format!("{}/echo", server.url()), b"{\"a\":1}").unwrap();
        assert_eq!((status, body.as_slice()), (200, b"{\"a\":1}".as_slice()));
        assert_eq!(get(&format!("{}/nope", server.url())).unwrap().0, 404);
        server.shutdown();
    }

    #[test]
    fn unbound_port_fails_after_all_attempts() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let policy = RetryPolicy { attempts: 5, initial: Duration::from_millis(1) };
        let err = post_json_with(&format!("http://127.0.0.1:{port}/rpc"), b"{}", policy).unwrap_err();
        assert!(matches!(err, ProtocolError::Connect { attempts: 5, .. }), "{err}");
    }
}
