//! Processes mode: one `dmasf unit` child per deployment unit, driven over
//! HTTP. A child that dies during a step is restarted from its last
//! checkpoint while the others wait at the barrier.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::engine::{BeginRequest, Checkpoint, StepReport};
use super::master::{Master, StepOutcome, UnitHandle};
use super::{trace_id_for, Fault, PortStrategy, RunError, RunFailure, RunOptions, Trace};
use crate::canonical::to_compact;
use crate::partition::partition_explicit;
use crate::protocol::{deliver_rpc_with, get_with, post_json_with, submit_task_with, Envelope, RetryPolicy};
use crate::scaffold::{compile, DeploymentPlan};
use crate::spec::{AgentProtocol, SpecDocument};

const HEALTH_TIMEOUT: Duration = Duration::from_secs(15);
const ONCE: RetryPolicy = RetryPolicy { attempts: 1, initial: Duration::ZERO };
const CONTROL: RetryPolicy = RetryPolicy { attempts: 5, initial: Duration::from_millis(20) };

fn unit_binary(opts: &RunOptions) -> Result<PathBuf, RunError> {
    if let Some(p) = &opts.unit_binary {
        return Ok(p.clone());
    }
    if let Some(p) = std::env::var_os("DMASF_UNIT_BIN") {
        return Ok(PathBuf::from(p));
    }
    std::env::current_exe().map_err(|e| RunError::Internal(format!("cannot locate unit binary: {e}")))
}

fn free_port() -> Result<u16, RunError> {
    let l = TcpListener::bind("127.0.0.1:0")
        .map_err(|e| RunError::BindError { addr: "127.0.0.1:0".into(), message: e.to_string() })?;
    l.local_addr().map(|a| a.port()).map_err(|e| RunError::Internal(e.to_string()))
}

fn check_port(port: u16) -> Result<(), RunError> {
    for host in ["0.0.0.0", "127.0.0.1"] {
        let addr = format!("{host}:{port}");
        TcpListener::bind(&addr).map_err(|e| RunError::BindError { addr, message: e.to_string() })?;
    }
    Ok(())
}

/// Maps fault-plan unit names to canonical unit names. Declared unit names,
/// canonical names and agent names (meaning the agent's unit) are accepted.
fn resolve_faults(spec: &SpecDocument, plan: &DeploymentPlan, faults: &[Fault]) -> Result<BTreeMap<String, Fault>, RunError> {
    let renames = match spec.deployment.units {
        Some(_) => partition_explicit(spec).map(|(_, r)| r).unwrap_or_default(),
        None => BTreeMap::new(),
    };
    let mut out = BTreeMap::new();
    for f in faults {
        let unit = renames
            .get(&f.unit)
            .cloned()
            .or_else(|| plan.partition.unit(&f.unit).map(|u| u.name.clone()))
            .or_else(|| plan.partition.unit_of(&f.unit).map(str::to_string))
            .ok_or_else(|| RunError::Plan(format!("fault plan names unknown unit {}", f.unit)))?;
        out.insert(unit.clone(), Fault { unit, ..f.clone() });
    }
    Ok(out)
}

struct ProcessUnit {
    name: String,
    binary: PathBuf,
    manifest_path: PathBuf,
    port: u16,
    peers: String,
    protocol: AgentProtocol,
    child: Option<Child>,
}

impl ProcessUnit {
    fn url(&self, path: &str) -> String {
        format!("http://127.0.0.1:{}{path}", self.port)
    }

    fn spawn(&mut self) -> Result<(), RunError> {
        let spawn_err = |message: String| RunError::UnitSpawnError { unit: self.name.clone(), message };
        let child = Command::new(&self.binary)
            .arg("unit")
            .env("DMASF_UNIT", &self.name)
            .env("DMASF_PORT", self.port.to_string())
            .env("DMASF_PEERS", &self.peers)
            .env("DMASF_SPEC", &self.manifest_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| spawn_err(format!("{}: {e}", self.binary.display())))?;
        self.child = Some(child);
        let deadline = Instant::now() + HEALTH_TIMEOUT;
        loop {
            if let Ok((200, _)) = get_with(&self.url("/healthz"), ONCE) {
                return Ok(());
            }
            if let Some(status) = self.child.as_mut().and_then(|c| c.try_wait().ok().flatten()) {
                self.child = None;
                return Err(spawn_err(format!("exited during startup with {status}")));
            }
            if Instant::now() > deadline {
                return Err(spawn_err("health check timed out".into()));
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    fn control<T: DeserializeOwned>(&self, path: &str, body: &Value) -> Result<T, RunError> {
        let (status, reply) = post_json_with(&self.url(path), to_compact(body).as_bytes(), CONTROL)
            .map_err(|e| RunError::Protocol(format!("unit {}: {e}", self.name)))?;
        if status != 200 {
            return Err(RunError::Protocol(format!(
                "unit {} answered {status} on {path}: {}",
                self.name,
                String::from_utf8_lossy(&reply)
            )));
        }
        serde_json::from_slice(&reply).map_err(|e| RunError::Protocol(format!("unit {} {path}: {e}", self.name)))
    }

    fn has_exited(&mut self, wait: Duration) -> bool {
        let deadline = Instant::now() + wait;
        loop {
            match self.child.as_mut().map(|c| c.try_wait()) {
                None | Some(Ok(Some(_))) | Some(Err(_)) => return true,
                Some(Ok(None)) if Instant::now() > deadline => return false,
                Some(Ok(None)) => std::thread::sleep(Duration::from_millis(10)),
            }
        }
    }

    fn stop(&mut self) {
        let Some(mut child) = self.child.take() else { return };
        let _ = post_json_with(&self.url("/control/shutdown"), b"{}", ONCE);
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let _ = child.kill();
        let _ = child.wait();
    }
}

impl Drop for ProcessUnit {
    fn drop(&mut self) {
        self.stop();
    }
}

impl UnitHandle for ProcessUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin(&mut self, rq: &BeginRequest) -> Result<Checkpoint, RunError> {
        self.control("/control/begin", &serde_json::to_value(rq).map_err(|e| RunError::Internal(e.to_string()))?)
    }

    fn step(&mut self, step: u64, attempt: u32) -> StepOutcome {
        let body = to_compact(&json!({"step": step, "attempt": attempt}));
        match post_json_with(&self.url("/control/step"), body.as_bytes(), ONCE) {
            Ok((200, reply)) => match serde_json::from_slice::<StepReport>(&reply) {
                Ok(r) => StepOutcome::Done(Box::new(r)),
                Err(e) => StepOutcome::Failed(RunError::Protocol(format!("unit {} step report: {e}", self.name))),
            },
            Ok((status, reply)) => {
                let error = serde_json::from_slice::<Value>(&reply)
                    .ok()
                    .and_then(|v| serde_json::from_value::<RunError>(v.get("error")?.clone()).ok());
                StepOutcome::Failed(error.unwrap_or_else(|| {
                    RunError::Protocol(format!("unit {} answered {status}: {}", self.name, String::from_utf8_lossy(&reply)))
                }))
            }
            Err(e) if self.has_exited(Duration::from_secs(5)) => {
                log::info!("unit {} died during step {step}: {e}", self.name);
                StepOutcome::Crashed
            }
            Err(e) => StepOutcome::Failed(RunError::Protocol(format!("unit {}: {e}", self.name))),
        }
    }

    fn recover(&mut self, cp: &Checkpoint) -> Result<(), RunError> {
        if let Some(mut old) = self.child.take() {
            let _ = old.kill();
            let _ = old.wait();
        }
        self.spawn()?;
        let value = serde_json::to_value(cp).map_err(|e| RunError::Internal(e.to_string()))?;
        let _: Value = self.control("/control/restore", &value)?;
        Ok(())
    }

    fn deliver(&mut self, step: u64, e: &Envelope) -> Result<(), RunError> {
        let addr = format!("127.0.0.1:{}", self.port);
        let query = format!("step={step}");
        let sent = match self.protocol {
            AgentProtocol::A2aLite => submit_task_with(&addr, e, &query, CONTROL).map(|_| ()),
            AgentProtocol::HttpRpc | AgentProtocol::Inmem => deliver_rpc_with(&addr, e, &query, CONTROL),
        };
        sent.map_err(|err| RunError::Protocol(format!("replay to unit {}: {err}", self.name)))
    }
}

fn write_manifests(plan: &DeploymentPlan, dir: &Path) -> Result<(), RunError> {
    for (rel, content) in &plan.artifacts {
        if rel.starts_with("units/") && rel.ends_with("/manifest.json") {
            let path = dir.join(rel);
            let io = |e: std::io::Error| RunError::Internal(format!("{}: {e}", path.display()));
            std::fs::create_dir_all(path.parent().expect("nested path")).map_err(io)?;
            std::fs::write(&path, content).map_err(io)?;
        }
    }
    Ok(())
}

pub(crate) fn run_processes(spec: &SpecDocument, input: &crate::protocol::Message, opts: &RunOptions) -> Result<Trace, RunFailure> {
    let plan = compile(spec).map_err(|e| RunError::Plan(e.to_string()))?;
    let faults = resolve_faults(spec, &plan, &opts.fault_plan)?;
    let binary = unit_binary(opts)?;
    let dir = tempfile::tempdir().map_err(|e| RunError::Internal(format!("temp dir: {e}")))?;
    write_manifests(&plan, dir.path())?;

    let mut ports = BTreeMap::new();
    for unit in &plan.partition.units {
        let port = match opts.ports {
            PortStrategy::Plan => {
                let port = plan.ports[&unit.name];
                check_port(port)?;
                port
            }
            PortStrategy::Ephemeral => free_port()?,
        };
        ports.insert(unit.name.clone(), port);
    }
    let protocol = spec.deployment.protocols.agent_protocol;
    let mut units: Vec<ProcessUnit> = Vec::new();
    for unit in &plan.partition.units {
        let manifest = plan.manifest(&unit.name).ok_or_else(|| RunError::Internal(format!("no manifest for {}", unit.name)))?;
        let peers: BTreeMap<&str, String> =
            manifest.peers.keys().map(|p| (p.as_str(), format!("127.0.0.1:{}", ports[p]))).collect();
        let mut u = ProcessUnit {
            name: unit.name.clone(),
            binary: binary.clone(),
            manifest_path: dir.path().join(format!("units/{}/manifest.json", unit.name)),
            port: ports[&unit.name],
            peers: to_compact(&peers),
            protocol,
            child: None,
        };
        u.spawn()?;
        units.push(u);
    }
    let mut restarts = BTreeMap::new();
    for u in &units {
        let fault = faults.get(&u.name);
        restarts.insert(u.name.clone(), fault.map_or(1, |f| f.restarts));
        if let Some(f) = fault {
            let _: Value = u.control("/control/arm", &json!({"kill_after_activations": f.kill_after_activations}))?;
        }
    }
    let begin = BeginRequest { trace_id: trace_id_for(spec, input), hop_budget: opts.hop_budget, input: input.clone() };
    let master = Master {
        units: units.into_iter().map(|u| Box::new(u) as Box<dyn UnitHandle>).collect(),
        assignment: plan.partition.assignment.clone(),
        restarts,
    };
    let result = master.run(&begin);
    drop(dir);
    result
}
