//! Monolith mode: every agent in one engine inside this process.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::engine::{AcceptError, BeginRequest, Checkpoint, NoOutbound, UnitEngine};
use super::master::{Master, StepOutcome, UnitHandle};
use super::tools::ToolRoute;
use super::{trace_id_for, RunError, RunFailure, RunOptions, Trace};
use crate::partition::Partition;
use crate::protocol::{Envelope, HttpHandler, HttpServer, McpService, Message};
use crate::scaffold::unit_manifest;
use crate::spec::{SpecDocument, ToolProtocol};

pub(crate) struct LocalUnit {
    name: String,
    engine: UnitEngine,
}

impl LocalUnit {
    pub fn new(engine: UnitEngine) -> Self {
        Self { name: engine.manifest().unit.clone(), engine }
    }
}

impl UnitHandle for LocalUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin(&mut self, rq: &BeginRequest) -> Result<Checkpoint, RunError> {
        Ok(self.engine.begin(rq))
    }

    fn step(&mut self, step: u64, attempt: u32) -> StepOutcome {
        match self.engine.step(step, attempt) {
            Ok(r) => StepOutcome::Done(Box::new(r)),
            Err(e) => StepOutcome::Failed(e),
        }
    }

    fn recover(&mut self, cp: &Checkpoint) -> Result<(), RunError> {
        self.engine.restore(cp.clone());
        Ok(())
    }

    fn deliver(&mut self, step: u64, e: &Envelope) -> Result<(), RunError> {
        self.engine.accept(step, e.clone()).map_err(|err| match err {
            AcceptError::NotReady => RunError::Internal(format!("unit {} not ready", self.name)),
            AcceptError::UnknownAgent => RunError::Internal(format!("unit {} does not host {}", self.name, e.dst)),
        })
    }
}

/// Runs the whole application in this process. Fault plans are ignored:
/// crashing would take the caller down with it.
pub(crate) fn run_monolith(spec: &SpecDocument, input: &Message, opts: &RunOptions) -> Result<Trace, RunFailure> {
    let partition = Partition::monolith(spec.workflow.agents.iter().map(|a| a.name.clone()));
    let manifest = unit_manifest(spec, &partition, "u0").ok_or_else(|| RunError::Plan("empty workflow".into()))?;
    if !opts.fault_plan.is_empty() {
        log::info!("fault plan ignored in monolith mode");
    }
    // The tool server lives as long as this function.
    let mut _mcp: Option<HttpServer> = None;
    let route = match spec.deployment.protocols.tool_protocol {
        ToolProtocol::Inproc => ToolRoute::Inproc,
        ToolProtocol::McpLite => {
            let service = Arc::new(McpService::new(manifest.tools.clone()));
            let handler: HttpHandler = Arc::new(move |rq| service.handle(&rq));
            let server = HttpServer::bind("127.0.0.1:0", 2, handler)
                .map_err(|e| RunError::BindError { addr: "127.0.0.1:0".into(), message: e.to_string() })?;
            let url = server.url();
            _mcp = Some(server);
            ToolRoute::Mcp(url)
        }
    };
    let engine = UnitEngine::new(manifest, route, Box::new(NoOutbound), Box::new(|| {}));
    let begin = BeginRequest {
        trace_id: trace_id_for(spec, input),
        hop_budget: opts.hop_budget,
        input: input.clone(),
    };
    let master = Master {
        units: vec![Box::new(LocalUnit::new(engine))],
        assignment: partition.assignment.clone(),
        restarts: BTreeMap::new(),
    };
    master.run(&begin)
}
