//! The `dmasf unit` process: one engine behind an HTTP server.
//!
//! Routes: `GET /healthz`, `POST /control/{arm,begin,step,restore,shutdown}`
//! for the supervisor, `POST /rpc?step=N` and `POST /a2a/tasks?step=N` for
//! peers, and `GET /mcp/tools`, `POST /mcp/call` for tools. Agent traffic is
//! answered with 503 until the unit has been started or restored.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::engine::{AcceptError, BeginRequest, Checkpoint, Outbound, UnitEngine};
use super::tools::ToolRoute;
use crate::protocol::{
    completed_response, decode_envelope, deliver_rpc_with, A2aService, Envelope, HttpHandler,
    HttpRequest, HttpResponse, HttpServer, McpService, Part, ProtocolError, RetryPolicy, CALL_PATH, RPC_PATH,
    TASKS_PATH, TOOLS_PATH,
};
use crate::scaffold::UnitManifest;
use crate::spec::{AgentProtocol, ToolProtocol};

/// Exit status of a unit killed by its fault plan.
pub const CRASH_EXIT_CODE: i32 = 75;

/// Peer deliveries are retried briefly; the supervisor replays anything
/// that did not get through.
pub const PEER_RETRY: RetryPolicy = RetryPolicy { attempts: 3, initial: Duration::from_millis(50) };

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub step: u64,
    pub attempt: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmRequest {
    pub kill_after_activations: u64,
}

/// Environment of a unit process.
#[derive(Debug, Clone)]
pub struct UnitEnv {
    pub unit: String,
    pub port: u16,
    pub peers: BTreeMap<String, String>,
    pub manifest: UnitManifest,
}

impl UnitEnv {
    pub fn from_env() -> Result<Self, String> {
        let var = |k: &str| std::env::var(k).map_err(|_| format!("{k} is not set"));
        let unit = var("DMASF_UNIT")?;
        let port = var("DMASF_PORT")?.parse::<u16>().map_err(|e| format!("DMASF_PORT: {e}"))?;
        let peers: BTreeMap<String, String> = match std::env::var("DMASF_PEERS") {
            Ok(text) if !text.trim().is_empty() => {
                serde_json::from_str(&text).map_err(|e| format!("DMASF_PEERS: {e}"))?
            }
            _ => BTreeMap::new(),
        };
        let path = var("DMASF_SPEC")?;
        let manifest = load_manifest(Path::new(&path))?;
        if manifest.unit != unit {
            return Err(format!("DMASF_UNIT={unit} but manifest {path} is for unit {}", manifest.unit));
        }
        Ok(Self { unit, port, peers, manifest })
    }
}

pub fn load_manifest(path: &Path) -> Result<UnitManifest, String> {
    let text = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    crate::spec::typed_json(&text, "manifest").map_err(|e| format!("{}: {e}", path.display()))
}

/// Sends to peers, choosing a replica by task id when a peer lists several
/// comma-separated addresses.
struct PeerOutbound {
    peers: BTreeMap<String, Vec<String>>,
    protocol: AgentProtocol,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl Outbound for PeerOutbound {
    fn deliver(&self, unit: &str, step: u64, e: &Envelope) -> Result<(), ProtocolError> {
        let hosts = self.peers.get(unit).filter(|h| !h.is_empty()).ok_or_else(|| {
            ProtocolError::Transport(format!("no address for unit {unit}"))
        })?;
        let host = &hosts[(fnv1a(&e.task_id()) % hosts.len() as u64) as usize];
        let query = format!("step={step}");
        match self.protocol {
            AgentProtocol::A2aLite => {
                crate::protocol::submit_task_with(host, e, &query, PEER_RETRY).map(|_| ())
            }
            AgentProtocol::HttpRpc | AgentProtocol::Inmem => deliver_rpc_with(host, e, &query, PEER_RETRY),
        }
    }
}

fn peer_table(env: &UnitEnv) -> BTreeMap<String, Vec<String>> {
    let mut table = BTreeMap::new();
    for (peer, entry) in &env.manifest.peers {
        let addrs = match env.peers.get(peer) {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => vec![format!("127.0.0.1:{}", entry.port)],
        };
        table.insert(peer.clone(), addrs);
    }
    table
}

fn step_of(rq: &HttpRequest) -> Result<u64, HttpResponse> {
    rq.query_param("step")
        .ok_or_else(|| HttpResponse::error(422, "malformed", "missing step query parameter"))?
        .parse()
        .map_err(|_| HttpResponse::error(422, "malformed", "step must be an integer"))
}

fn accept_error(e: AcceptError, dst: &str) -> HttpResponse {
    match e {
        AcceptError::NotReady => HttpResponse::error(503, "not_ready", "unit not started"),
        AcceptError::UnknownAgent => HttpResponse::error(404, "unknown_agent", format!("no agent {dst}")),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, HttpResponse> {
    serde_json::from_slice(body).map_err(|e| HttpResponse::error(422, "malformed", e.to_string()))
}

fn handle(engine: &UnitEngine, mcp: &McpService, stop: &AtomicBool, rq: HttpRequest) -> HttpResponse {
    let result = match (rq.method.as_str(), rq.path.as_str()) {
        ("GET", "/healthz") => Ok(HttpResponse::json(
            200,
            &json!({"unit": engine.manifest().unit, "agents": engine.manifest().members, "ready": engine.is_ready()}),
        )),
        ("POST", "/control/arm") => parse_json::<ArmRequest>(&rq.body).map(|a| {
            engine.arm(a.kill_after_activations);
            HttpResponse::json(200, &json!({"ok": true}))
        }),
        ("POST", "/control/begin") => {
            parse_json::<BeginRequest>(&rq.body).map(|b| HttpResponse::json(200, &engine.begin(&b)))
        }
        ("POST", "/control/restore") => parse_json::<Checkpoint>(&rq.body).map(|cp| {
            engine.restore(cp);
            HttpResponse::json(200, &json!({"ok": true}))
        }),
        ("POST", "/control/step") => parse_json::<StepRequest>(&rq.body).map(|s| match engine.step(s.step, s.attempt) {
            Ok(report) => HttpResponse::json(200, &report),
            Err(e) => HttpResponse::json(500, &json!({"error": e})),
        }),
        ("POST", "/control/shutdown") => {
            stop.store(true, Ordering::SeqCst);
            Ok(HttpResponse::json(200, &json!({"ok": true})))
        }
        ("POST", RPC_PATH) => (|| {
            let step = step_of(&rq)?;
            let e = decode_envelope(&rq.body).map_err(|e| HttpResponse::error(422, "malformed", e.to_string()))?;
            let dst = e.dst.clone();
            engine.accept(step, e).map_err(|err| accept_error(err, &dst))?;
            Ok(HttpResponse::json(200, &json!({"ok": true})))
        })(),
        ("POST", TASKS_PATH) => (|| {
            let step = step_of(&rq)?;
            let e = A2aService::parse(&rq.body)?;
            let (dst, task_id) = (e.dst.clone(), e.task_id());
            engine.accept(step, e).map_err(|err| accept_error(err, &dst))?;
            Ok(completed_response(&task_id, vec![Part::data(json!({"accepted": true}))]))
        })(),
        (_, TOOLS_PATH) | (_, CALL_PATH) => Ok(mcp.handle(&rq)),
        _ => Ok(HttpResponse::not_found()),
    };
    result.unwrap_or_else(|resp| resp)
}

/// Serves until SIGTERM/SIGINT or `/control/shutdown`, then returns.
pub fn serve(env: UnitEnv) -> Result<(), String> {
    let addr = format!("0.0.0.0:{}", env.port);
    let outbound = PeerOutbound { peers: peer_table(&env), protocol: env.manifest.protocols.agent_protocol };
    let route = match env.manifest.protocols.tool_protocol {
        ToolProtocol::Inproc => ToolRoute::Inproc,
        ToolProtocol::McpLite => ToolRoute::Mcp(format!("127.0.0.1:{}", env.port)),
    };
    let mcp = Arc::new(McpService::new(env.manifest.tools.clone()));
    let engine = Arc::new(UnitEngine::new(
        env.manifest.clone(),
        route,
        Box::new(outbound),
        Box::new(|| {
            log::warn!("fault plan reached, exiting");
            std::process::exit(CRASH_EXIT_CODE)
        }),
    ));
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, Arc::clone(&stop)).map_err(|e| format!("signal handler: {e}"))?;
    }
    let handler: HttpHandler = {
        let (engine, stop) = (Arc::clone(&engine), Arc::clone(&stop));
        Arc::new(move |rq| handle(&engine, &mcp, &stop, rq))
    };
    let server = HttpServer::bind(&addr, 8, handler).map_err(|e| e.to_string())?;
    log::info!("unit {} listening on {}", env.unit, server.addr());
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(20));
    }
    // Let the shutdown answer go out before the workers stop.
    std::thread::sleep(Duration::from_millis(50));
    server.shutdown();
    Ok(())
}
