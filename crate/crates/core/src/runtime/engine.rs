//! One deployment unit's share of a bulk-synchronous execution.
//!
//! Every envelope produced in step `t` is consumed in step `t + 1`. A
//! non-barrier agent merges everything it receives in one step into a single
//! activation; a barrier agent keeps a FIFO per in-edge source and activates
//! once every source has something queued. Because the schedule depends only
//! on the workflow and not on which unit hosts an agent, every partition
//! produces the same activations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::invoke_model;
use super::tools::{ToolRoute, ToolRunner};
use super::trace::{Activation, FinalMessage, ToolExchange};
use super::RunError;
use crate::graph::{AgentDecl, EdgeKind, ModelDecl};
use crate::protocol::{Envelope, IdempotencyCache, Message, Part, ProtocolError, Role};
use crate::scaffold::UnitManifest;

/// Pseudo-source of the envelope carrying the run's input.
pub const INPUT_SRC: &str = "@input";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeginRequest {
    pub trace_id: String,
    pub hop_budget: u32,
    pub input: Message,
}

/// The whole restartable state of a unit between two steps. Deliveries from
/// other units are not part of it; after a restore they are sent again.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub next_step: u64,
    pub trace_id: String,
    pub hop_budget: u32,
    pub invocations: BTreeMap<String, u64>,
    pub seq: BTreeMap<String, u64>,
    pub joins: BTreeMap<String, BTreeMap<String, VecDeque<Envelope>>>,
    pub local: BTreeMap<u64, Vec<Envelope>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFailure {
    pub agent: String,
    pub error: RunError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepReport {
    pub unit: String,
    pub step: u64,
    pub activations: Vec<Activation>,
    pub edges: Vec<Envelope>,
    pub finals: Vec<FinalMessage>,
    pub error: Option<AgentFailure>,
    pub checkpoint: Checkpoint,
    /// Work queued locally for the next step.
    pub busy: bool,
    /// Envelopes handed to other units.
    pub sent: u64,
    pub undelivered: Vec<String>,
    /// Barrier agents holding a partial set of inputs.
    pub waiting: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptError {
    NotReady,
    UnknownAgent,
}

/// Hands an envelope for `step` to another unit.
pub trait Outbound: Send + Sync {
    fn deliver(&self, unit: &str, step: u64, envelope: &Envelope) -> Result<(), ProtocolError>;
}

/// For engines that host every agent.
pub struct NoOutbound;

impl Outbound for NoOutbound {
    fn deliver(&self, unit: &str, _: u64, _: &Envelope) -> Result<(), ProtocolError> {
        Err(ProtocolError::Transport(format!("no route to unit {unit}")))
    }
}

pub struct UnitEngine {
    manifest: UnitManifest,
    agents: BTreeMap<String, AgentDecl>,
    models: BTreeMap<String, ModelDecl>,
    tools: ToolRunner,
    state: Mutex<Option<Checkpoint>>,
    inbox: Mutex<BTreeMap<u64, Vec<Envelope>>>,
    seen: Mutex<IdempotencyCache<()>>,
    kill_after: Mutex<Option<u64>>,
    activations_done: AtomicU64,
    outbound: Box<dyn Outbound>,
    on_crash: Box<dyn Fn() + Send + Sync>,
}

fn now_ms() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64() * 1000.0)
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl UnitEngine {
    pub fn new(
        manifest: UnitManifest,
        tool_route: ToolRoute,
        outbound: Box<dyn Outbound>,
        on_crash: Box<dyn Fn() + Send + Sync>,
    ) -> Self {
        Self {
            agents: manifest.agents.iter().map(|a| (a.name.clone(), a.clone())).collect(),
            models: manifest.models.iter().map(|m| (m.name.clone(), m.clone())).collect(),
            tools: ToolRunner::new(manifest.tools.clone(), tool_route),
            manifest,
            state: Mutex::new(None),
            inbox: Mutex::new(BTreeMap::new()),
            seen: Mutex::new(IdempotencyCache::new()),
            kill_after: Mutex::new(None),
            activations_done: AtomicU64::new(0),
            outbound,
            on_crash,
        }
    }

    pub fn manifest(&self) -> &UnitManifest {
        &self.manifest
    }

    pub fn is_ready(&self) -> bool {
        lock(&self.state).is_some()
    }

    /// Crash (via `on_crash`) right after the `n`-th activation from now.
    pub fn arm(&self, n: u64) {
        *lock(&self.kill_after) = Some(self.activations_done.load(Ordering::SeqCst) + n);
    }

    pub fn begin(&self, rq: &BeginRequest) -> Checkpoint {
        let mut cp = Checkpoint {
            next_step: 0,
            trace_id: rq.trace_id.clone(),
            hop_budget: rq.hop_budget,
            ..Checkpoint::default()
        };
        if self.agents.contains_key(&self.manifest.entry) {
            let mut input = Envelope::agent_msg(&rq.trace_id, 0, "x", &self.manifest.entry, rq.input.clone())
                .with_hops(rq.hop_budget);
            input.src = INPUT_SRC.to_string();
            cp.local.insert(0, vec![input]);
        }
        self.restore(cp.clone());
        cp
    }

    pub fn restore(&self, cp: Checkpoint) {
        let mut state = lock(&self.state);
        let mut inbox = lock(&self.inbox);
        inbox.retain(|&step, _| step >= cp.next_step);
        *lock(&self.seen) = IdempotencyCache::new();
        *state = Some(cp);
    }

    /// Accepts an envelope from another unit for `step`. Duplicates of an
    /// already accepted `(task_id, src)` are ignored; envelopes for steps
    /// that already ran are dropped.
    pub fn accept(&self, step: u64, e: Envelope) -> Result<(), AcceptError> {
        if !self.agents.contains_key(&e.dst) {
            return Err(AcceptError::UnknownAgent);
        }
        let next = match lock(&self.state).as_ref() {
            Some(cp) => cp.next_step,
            None => return Err(AcceptError::NotReady),
        };
        if step < next {
            return Ok(());
        }
        let key = format!("{}|{}", e.task_id(), e.src);
        let seen = lock(&self.seen);
        let mut fresh = false;
        seen.get_or_compute(&key, || fresh = true);
        drop(seen);
        if fresh {
            let mut inbox = lock(&self.inbox);
            inbox.entry(step).or_default().push(e);
        }
        Ok(())
    }

    pub fn step(&self, step: u64, attempt: u32) -> Result<StepReport, RunError> {
        let mut guard = lock(&self.state);
        let cp = guard.as_mut().ok_or_else(|| RunError::Internal(format!("unit {} not started", self.manifest.unit)))?;
        if cp.next_step != step {
            return Err(RunError::Internal(format!(
                "unit {} asked for step {step} but is at {}",
                self.manifest.unit, cp.next_step
            )));
        }
        let mut incoming = cp.local.remove(&step).unwrap_or_default();
        {
            let mut inbox = lock(&self.inbox);
            incoming.extend(inbox.remove(&step).unwrap_or_default());
            inbox.retain(|&s, _| s > step);
        }
        let mut by_agent: BTreeMap<String, Vec<Envelope>> = BTreeMap::new();
        for e in incoming {
            by_agent.entry(e.dst.clone()).or_default().push(e);
        }

        let mut batches: Vec<(String, Vec<Envelope>)> = Vec::new();
        for (agent, mut envs) in by_agent {
            envs.sort_by(|a, b| (&a.src, a.seq).cmp(&(&b.src, b.seq)));
            match self.manifest.joins.get(&agent) {
                Some(sources) => {
                    let queues = cp.joins.entry(agent.clone()).or_default();
                    for e in envs {
                        if sources.contains(&e.src) {
                            queues.entry(e.src.clone()).or_default().push_back(e);
                        } else {
                            batches.push((agent.clone(), vec![e]));
                        }
                    }
                    while sources.iter().all(|s| queues.get(s).is_some_and(|q| !q.is_empty())) {
                        let round = sources.iter().filter_map(|s| queues.get_mut(s).and_then(VecDeque::pop_front)).collect();
                        batches.push((agent.clone(), round));
                    }
                    queues.retain(|_, q| !q.is_empty());
                    if queues.is_empty() {
                        cp.joins.remove(&agent);
                    }
                }
                None => batches.push((agent, envs)),
            }
        }

        let mut report = StepReport {
            unit: self.manifest.unit.clone(),
            step,
            activations: Vec::new(),
            edges: Vec::new(),
            finals: Vec::new(),
            error: None,
            checkpoint: Checkpoint::default(),
            busy: false,
            sent: 0,
            undelivered: Vec::new(),
            waiting: Vec::new(),
        };
        let mut remote: Vec<(String, Envelope)> = Vec::new();
        let mut errors: Vec<AgentFailure> = Vec::new();
        for (agent, inputs) in batches {
            let started = now_ms();
            let hops = inputs.iter().map(|e| e.hops).min().unwrap_or(0);
            let input = Message::new(Role::User, inputs.iter().flat_map(|e| e.payload.parts.iter().cloned()).collect());
            let outcome = self.activate(cp, &agent, &input);
            let (output, tool_calls) = match outcome {
                Ok(done) => done,
                Err(error) => {
                    errors.push(AgentFailure { agent, error });
                    continue;
                }
            };
            report.activations.push(Activation {
                node: agent.clone(),
                step,
                input,
                output: output.clone(),
                tool_calls,
                started_ms: started,
                finished_ms: now_ms().max(started),
                attempt,
            });
            let done = self.activations_done.fetch_add(1, Ordering::SeqCst) + 1;
            if lock(&self.kill_after).is_some_and(|n| done >= n) {
                (self.on_crash)();
                *lock(&self.kill_after) = None;
            }
            match self.dispatch(cp, &agent, &output, hops, step) {
                Ok(Dispatch::Final) => report.finals.push(FinalMessage { node: agent, step, message: output }),
                Ok(Dispatch::Sent(envs)) => {
                    for e in envs {
                        let unit = self.manifest.assignment.get(&e.dst).cloned().unwrap_or_default();
                        report.edges.push(e.clone());
                        if unit == self.manifest.unit {
                            cp.local.entry(step + 1).or_default().push(e);
                        } else {
                            remote.push((unit, e));
                        }
                    }
                }
                Err(error) => errors.push(AgentFailure { agent, error }),
            }
        }
        cp.next_step = step + 1;
        report.error = errors.into_iter().min_by(|a, b| a.agent.cmp(&b.agent));
        report.busy = cp.local.values().any(|v| !v.is_empty());
        report.waiting = cp.joins.iter().filter(|(_, q)| q.values().any(|q| !q.is_empty())).map(|(j, _)| j.clone()).collect();
        report.checkpoint = cp.clone();
        // Peers may call back into this unit while we deliver.
        drop(guard);

        let mut undelivered = BTreeSet::new();
        for (unit, e) in &remote {
            if let Err(err) = self.outbound.deliver(unit, step + 1, e) {
                log::warn!("unit {}: delivery to {unit} failed: {err}", self.manifest.unit);
                undelivered.insert(unit.clone());
            }
        }
        report.sent = remote.len() as u64;
        report.undelivered = undelivered.into_iter().collect();
        Ok(report)
    }

    fn context(prompt: &str, texts: impl Iterator<Item = String>) -> String {
        let mut lines: Vec<String> = Vec::new();
        if !prompt.is_empty() {
            lines.push(prompt.to_string());
        }
        lines.extend(texts);
        lines.join("\n")
    }

    fn invoke(&self, cp: &mut Checkpoint, agent: &AgentDecl, context: &str) -> Result<(Message, u64), RunError> {
        let model = self
            .models
            .get(&agent.model)
            .ok_or_else(|| RunError::Internal(format!("model {} missing from unit manifest", agent.model)))?;
        let counter = cp.invocations.entry(agent.name.clone()).or_insert(0);
        let index = *counter;
        *counter += 1;
        Ok((invoke_model(model, &agent.name, index, context)?, index))
    }

    /// Model call plus at most one tool round.
    fn activate(&self, cp: &mut Checkpoint, name: &str, input: &Message) -> Result<(Message, Vec<ToolExchange>), RunError> {
        let agent = self.agents.get(name).ok_or_else(|| RunError::Internal(format!("agent {name} not hosted here")))?;
        let context = Self::context(&agent.prompt, input.texts().map(str::to_string));
        let (first, index) = self.invoke(cp, agent, &context)?;
        let Some(request) = first.data_field("tool_call") else { return Ok((first, Vec::new())) };
        let tool = request.get("tool").and_then(Value::as_str).unwrap_or_default().to_string();
        let arguments = request.get("arguments").cloned().unwrap_or_else(|| Value::Object(Default::default()));
        let call_id = format!("{name}#{index}");
        let (call, result) = self.tools.invoke(agent, &tool, &arguments, &call_id);
        let rendered = Message::new(Role::Tool, result.content.clone()).render();
        let follow_up = format!("{context}\n[tool:{tool}] {rendered}");
        let (second, _) = self.invoke(cp, agent, &follow_up)?;
        Ok((second, vec![ToolExchange { call, result }]))
    }

    fn dispatch(&self, cp: &mut Checkpoint, agent: &str, output: &Message, hops: u32, _step: u64) -> Result<Dispatch, RunError> {
        let edges: Vec<_> = self.manifest.routes.iter().filter(|e| e.from == agent).collect();
        if edges.is_empty() {
            return Ok(Dispatch::Final);
        }
        if hops == 0 {
            return Err(RunError::BudgetExhausted { node: agent.to_string(), budget: cp.hop_budget });
        }
        let chosen: Vec<_> = match edges[0].kind {
            EdgeKind::Sequential | EdgeKind::Parallel => edges,
            EdgeKind::Conditional => {
                let label = output.data_field("route").and_then(Value::as_str).map(str::to_string);
                let hit: Vec<_> = edges.into_iter().filter(|e| label.is_some() && e.label == label).collect();
                if hit.is_empty() {
                    return Err(RunError::RouteMissing { node: agent.to_string(), label });
                }
                hit
            }
        };
        let mut out = Vec::new();
        for e in chosen {
            let counter = cp.seq.entry(agent.to_string()).or_insert(0);
            let seq = *counter;
            *counter += 1;
            let route = if e.kind == EdgeKind::Conditional { e.label.as_deref() } else { None };
            out.push(
                Envelope::agent_msg(&cp.trace_id, seq, agent, &e.to, output.clone())
                    .with_route(route)
                    .with_hops(hops - 1),
            );
        }
        Ok(Dispatch::Sent(out))
    }
}

enum Dispatch {
    Final,
    Sent(Vec<Envelope>),
}

/// Text and data of several inputs in one message, for callers that need to
/// build activation inputs the same way the engine does.
pub fn merge_inputs(parts: impl IntoIterator<Item = Part>) -> Message {
    Message::new(Role::User, parts.into_iter().collect())
}
