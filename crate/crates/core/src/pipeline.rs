//! End-to-end solving of one task: divergent agents, decision maker, and
//! execution of the chosen script.

use crate::agent_graph::{AgentGraph, AgentRole, EdaTask, GraphConfig, GraphError, Outcome};
use crate::decision::{decide, Decision, DecisionConfig, DecisionError};
use crate::demo_store::{DemoStore, Embedder};
use crate::divergent::{run_divergent, AgentFailure, DivergentConfig, DivergentContext, DivergentError};
use crate::llm_provider::ProviderRegistry;
use crate::prompt_factory::PromptTemplate;
use crate::simulator::{execute, ExecutionReport, PlatformSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// One divergent agent whose outcome is taken as is.
    SingleAgent,
    /// Every divergent agent, then the decision maker.
    MultiAgent,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Divergent(#[from] DivergentError),
    #[error("decision failed: {0}")]
    Decision(#[from] DecisionError),
    #[error("no provider named `{0}`")]
    MissingProvider(String),
}

/// Shared, read-only inputs of the system.
pub struct System<'a> {
    pub graph: GraphConfig,
    pub divergent: DivergentConfig,
    pub decision: DecisionConfig,
    pub store: &'a DemoStore,
    pub embedder: &'a dyn Embedder,
    pub template: &'a PromptTemplate,
    pub spec: &'a PlatformSpec,
    pub providers: &'a ProviderRegistry,
    pub metric_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TaskRun {
    pub candidates: Vec<Outcome>,
    pub decision: Option<Decision>,
    pub chosen: Outcome,
    pub report: ExecutionReport,
    pub failures: Vec<AgentFailure>,
}

impl System<'_> {
    /// The graph for `mode`: the configured one, or its first divergent
    /// agent alone when running single-agent.
    pub fn graph_for(&self, mode: Mode) -> Result<(AgentGraph, DivergentConfig), PipelineError> {
        let graph = AgentGraph::build(&self.graph)?;
        match mode {
            Mode::MultiAgent => {
                let config = DivergentConfig {
                    num_agents: graph.divergent_agents().count(),
                    ..self.divergent.clone()
                };
                Ok((graph, config))
            }
            Mode::SingleAgent => {
                let first = graph.divergent_agents().next().expect("validated graph").clone();
                let decider = graph.decision_maker().clone();
                let single = GraphConfig {
                    edges: vec![(first.id.clone(), decider.id.clone())],
                    agents: vec![first, decider],
                };
                let config = DivergentConfig {
                    num_agents: 1,
                    ..self.divergent.clone()
                };
                Ok((AgentGraph::build(&single)?, config))
            }
        }
    }

    pub fn run(&self, task: &EdaTask, mode: Mode) -> Result<TaskRun, PipelineError> {
        let (graph, config) = self.graph_for(mode)?;
        let ctx = DivergentContext {
            store: self.store,
            embedder: self.embedder,
            template: self.template,
            spec: self.spec,
            providers: self.providers,
        };
        let run = run_divergent(task, &config, &ctx, &graph)?;
        let decider = graph.decision_maker().clone();
        debug_assert_eq!(decider.role, AgentRole::DecisionMaking);
        graph.send(run.message)?;
        let message = graph
            .drain_inbox(&decider.id)
            .pop()
            .expect("message was just delivered");
        let decision = match mode {
            Mode::SingleAgent => None,
            Mode::MultiAgent => {
                let provider = self
                    .providers
                    .get(&decider.provider)
                    .ok_or_else(|| PipelineError::MissingProvider(decider.provider.clone()))?;
                Some(decide(task, &message, provider, self.template, &self.decision)?)
            }
        };
        let chosen = decision.as_ref().map_or(0, |d| d.chosen);
        let candidates = message.into_outcomes();
        let chosen = candidates[chosen].clone();
        let report = execute(chosen.script.ast(), self.spec, self.metric_seed);
        Ok(TaskRun {
            candidates,
            decision,
            chosen,
            report,
            failures: run.failures,
        })
    }
}
