//! The bulk-synchronous driver shared by both run modes.

use std::collections::{BTreeMap, BTreeSet};

use super::engine::{BeginRequest, Checkpoint, StepReport};
use super::trace::{Trace, TraceEvent};
use super::{RunError, RunFailure};
use crate::protocol::Envelope;

pub(crate) enum StepOutcome {
    Done(Box<StepReport>),
    Crashed,
    Failed(RunError),
}

pub(crate) trait UnitHandle: Send {
    fn name(&self) -> &str;
    fn begin(&mut self, rq: &BeginRequest) -> Result<Checkpoint, RunError>;
    fn step(&mut self, step: u64, attempt: u32) -> StepOutcome;
    /// Brings a crashed unit back in the state `cp` describes.
    fn recover(&mut self, cp: &Checkpoint) -> Result<(), RunError>;
    fn deliver(&mut self, step: u64, e: &Envelope) -> Result<(), RunError>;
}

pub(crate) struct Master<'a> {
    pub units: Vec<Box<dyn UnitHandle + 'a>>,
    pub assignment: BTreeMap<String, String>,
    pub restarts: BTreeMap<String, u32>,
}

fn fail(error: RunError, trace: &Trace) -> RunFailure {
    let mut trace = trace.clone();
    trace.final_messages.sort_by(|a, b| (&a.node, a.step).cmp(&(&b.node, b.step)));
    RunFailure { error, trace }
}

impl Master<'_> {
    pub fn run(mut self, begin: &BeginRequest) -> Result<Trace, RunFailure> {
        let mut trace = Trace::new(&begin.trace_id);
        let mut checkpoints: BTreeMap<String, Checkpoint> = BTreeMap::new();
        for u in &mut self.units {
            let cp = u.begin(begin).map_err(|e| fail(e, &trace))?;
            checkpoints.insert(u.name().to_string(), cp);
        }
        let limit = u64::from(begin.hop_budget) + 2;
        let mut step = 0u64;
        loop {
            if step > limit {
                return Err(fail(RunError::Internal(format!("no quiescence after {step} steps")), &trace));
            }
            let outcomes: Vec<StepOutcome> = std::thread::scope(|s| {
                let handles: Vec<_> = self.units.iter_mut().map(|u| s.spawn(move || u.step(step, 1))).collect();
                handles.into_iter().map(|h| h.join().unwrap_or(StepOutcome::Failed(RunError::Internal("unit thread panicked".into())))).collect()
            });

            let mut reports: BTreeMap<String, StepReport> = BTreeMap::new();
            let mut crashed: Vec<usize> = Vec::new();
            for (i, outcome) in outcomes.into_iter().enumerate() {
                match outcome {
                    StepOutcome::Done(r) => {
                        reports.insert(self.units[i].name().to_string(), *r);
                    }
                    StepOutcome::Crashed => crashed.push(i),
                    StepOutcome::Failed(e) => return Err(fail(e, &trace)),
                }
            }
            let crashed_names: BTreeSet<String> = crashed.iter().map(|&i| self.units[i].name().to_string()).collect();
            for r in reports.values() {
                if let Some(u) = r.undelivered.iter().find(|u| !crashed_names.contains(*u)) {
                    return Err(fail(RunError::Protocol(format!("unit {} could not reach unit {u}", r.unit)), &trace));
                }
            }
            for r in reports.values() {
                record(&mut trace, r);
            }

            for &i in &crashed {
                let report = self.recover(i, step, &checkpoints, &mut trace)?;
                record(&mut trace, &report);
                reports.insert(report.unit.clone(), report);
            }

            let mut failures: Vec<_> = reports.values().filter_map(|r| r.error.clone()).collect();
            failures.sort_by(|a, b| a.agent.cmp(&b.agent));
            if let Some(first) = failures.into_iter().next() {
                return Err(fail(first.error, &trace));
            }
            for (u, r) in &reports {
                checkpoints.insert(u.clone(), r.checkpoint.clone());
            }
            let pending = reports.values().any(|r| r.busy || r.sent > 0);
            if !pending {
                let waiting: BTreeSet<String> = reports.values().flat_map(|r| r.waiting.iter().cloned()).collect();
                if !waiting.is_empty() {
                    return Err(fail(RunError::Deadlock { nodes: waiting.into_iter().collect() }, &trace));
                }
                trace.final_messages.sort_by(|a, b| (&a.node, a.step).cmp(&(&b.node, b.step)));
                return Ok(trace);
            }
            step += 1;
        }
    }

    /// Restarts unit `i` from its checkpoint, replays everything other units
    /// sent it since, and re-runs `step` there.
    fn recover(
        &mut self,
        i: usize,
        step: u64,
        checkpoints: &BTreeMap<String, Checkpoint>,
        trace: &mut Trace,
    ) -> Result<StepReport, RunFailure> {
        let name = self.units[i].name().to_string();
        let mut attempt = 2;
        loop {
            trace.events.push(TraceEvent::UnitCrash { unit: name.clone() });
            let left = self.restarts.entry(name.clone()).or_insert(0);
            if *left == 0 {
                return Err(fail(RunError::UnitLost { unit: name }, trace));
            }
            *left -= 1;
            log::info!("restarting unit {name} at step {step} (attempt {attempt})");
            let cp = &checkpoints[&name];
            self.units[i].recover(cp).map_err(|e| fail(e, trace))?;
            let replay: Vec<(u64, Envelope)> = trace
                .events
                .iter()
                .filter_map(|e| match e {
                    TraceEvent::EdgeMsg { step: s, envelope } if s + 1 >= cp.next_step => Some((s + 1, envelope.clone())),
                    _ => None,
                })
                .filter(|(_, e)| {
                    self.assignment.get(&e.dst) == Some(&name) && self.assignment.get(&e.src) != Some(&name)
                })
                .collect();
            for (target, e) in &replay {
                self.units[i].deliver(*target, e).map_err(|err| fail(err, trace))?;
            }
            match self.units[i].step(step, attempt) {
                StepOutcome::Done(report) => {
                    let nodes: BTreeSet<&str> = report.activations.iter().map(|a| a.node.as_str()).collect();
                    for node in nodes {
                        trace.events.push(TraceEvent::Retry { node: node.to_string(), attempt });
                    }
                    return Ok(*report);
                }
                StepOutcome::Crashed => attempt += 1,
                StepOutcome::Failed(e) => return Err(fail(e, trace)),
            }
        }
    }
}

fn record(trace: &mut Trace, r: &StepReport) {
    for a in &r.activations {
        trace.events.push(TraceEvent::Activation(a.clone()));
    }
    for e in &r.edges {
        trace.events.push(TraceEvent::EdgeMsg { step: r.step, envelope: e.clone() });
    }
    trace.final_messages.extend(r.finals.iter().cloned());
}
