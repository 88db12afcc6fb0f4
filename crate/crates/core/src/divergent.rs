//! Divergent thoughts: retrieve demos, build one distinct few-shot prompt per
//! agent, run the agents and collect their plan + script outcomes.

use crate::agent_graph::{AgentGraph, AgentId, AgentRole, EdaTask, Message, Outcome};
use crate::demo_store::{DemoInstance, DemoStore, Embedder, StoreError};
use crate::llm_provider::{GenerationRequest, ProviderRegistry};
use crate::prompt_factory::{
    render_few_shot, render_zero_shot, sample_demo_groups, PromptError, PromptTemplate, RenderedPrompt,
};
use crate::simulator::{render_api_document, PlatformSpec};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

/// Ordered, non-empty planning steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PlanSteps(Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has no steps")]
    Empty,
    #[error("plan step {0} is blank")]
    BlankStep(usize),
    #[error("plan step {0} spans several lines")]
    MultilineStep(usize),
}

impl PlanSteps {
    pub fn new(steps: Vec<String>) -> Result<Self, PlanError> {
        if steps.is_empty() {
            return Err(PlanError::Empty);
        }
        let steps: Vec<String> = steps.into_iter().map(|s| s.trim().to_string()).collect();
        for (i, s) in steps.iter().enumerate() {
            if s.is_empty() {
                return Err(PlanError::BlankStep(i));
            }
            if s.contains('\n') {
                return Err(PlanError::MultilineStep(i));
            }
        }
        Ok(Self(steps))
    }

    pub fn steps(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<String>> for PlanSteps {
    type Error = PlanError;

    fn try_from(steps: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(steps)
    }
}

impl From<PlanSteps> for Vec<String> {
    fn from(plan: PlanSteps) -> Self {
        plan.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergentConfig {
    /// Demos retrieved per task (K).
    pub top_k: usize,
    /// Demos per prompt (n).
    pub group_size: usize,
    /// Divergent agents, one prompt group each (g).
    pub num_agents: usize,
    pub seed: u64,
    /// Skip retrieval and give every agent the zero-shot prompt.
    pub zero_shot: bool,
    pub max_tokens: usize,
    pub temperature: f64,
}

impl Default for DivergentConfig {
    fn default() -> Self {
        Self {
            top_k: 8,
            group_size: 2,
            num_agents: 3,
            seed: 0,
            zero_shot: false,
            max_tokens: 1024,
            temperature: 0.0,
        }
    }
}

impl DivergentConfig {
    pub fn validate(&self) -> Result<(), DivergentError> {
        let bad = |why: String| Err(DivergentError::Config(why));
        if self.num_agents == 0 {
            return bad("num_agents must be at least 1".into());
        }
        if !self.zero_shot && (self.group_size == 0 || self.group_size > self.top_k) {
            return bad(format!("group_size {} must be in 1..={}", self.group_size, self.top_k));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OutcomeParseError {
    #[error("no plan section")]
    MissingPlanSection,
    #[error("no script section")]
    MissingScriptSection,
    #[error("script section precedes plan section")]
    ScriptBeforePlan,
    #[error("invalid plan: {0}")]
    Plan(#[from] PlanError),
}

static STEP_NUMBERING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(?:\d+[.)]|[-*])\s*").expect("numbering regex"));

/// Split generated text into plan steps and the raw script.
///
/// Markers are matched as whole (trimmed) lines. Plan steps are the nonblank
/// lines between the markers with list numbering removed; the script is
/// everything after the script marker, minus a surrounding code fence.
pub fn parse_outcome(text: &str, template: &PromptTemplate) -> Result<(PlanSteps, String), OutcomeParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let find = |marker: &str| lines.iter().position(|l| l.trim() == marker.trim());
    let plan_at = find(&template.plan_marker);
    let script_at = find(&template.script_marker);
    let (plan_at, script_at) = match (plan_at, script_at) {
        (None, _) => return Err(OutcomeParseError::MissingPlanSection),
        (_, None) => return Err(OutcomeParseError::MissingScriptSection),
        (Some(p), Some(s)) if s < p => return Err(OutcomeParseError::ScriptBeforePlan),
        (Some(p), Some(s)) => (p, s),
    };
    let steps: Vec<String> = lines[plan_at + 1..script_at]
        .iter()
        .map(|l| STEP_NUMBERING.replace(l.trim(), "").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if steps.is_empty() {
        return Err(OutcomeParseError::MissingPlanSection);
    }
    let mut body: Vec<&str> = lines[script_at + 1..].to_vec();
    if body.first().is_some_and(|l| l.trim_start().starts_with("```")) {
        body.remove(0);
        if let Some(end) = body.iter().position(|l| l.trim() == "```") {
            body.truncate(end);
        }
    }
    let script = body.join("\n").trim_matches('\n').trim_end().to_string();
    Ok((PlanSteps::new(steps)?, script))
}

#[derive(Debug, Error)]
pub enum DivergentError {
    #[error("invalid divergent configuration: {0}")]
    Config(String),
    #[error("no demos for platform `{0}`")]
    NoDemos(String),
    #[error("demo retrieval failed: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("graph has {found} divergent agents but {expected} are configured")]
    AgentCountMismatch { expected: usize, found: usize },
    #[error("no provider named `{0}`")]
    MissingProvider(String),
    #[error("every agent failed: {}", summarize(.0))]
    AllAgentsFailed(Vec<AgentFailure>),
}

fn summarize(failures: &[AgentFailure]) -> String {
    failures.iter().map(|f| format!("{}: {}", f.agent_id, f.reason)).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentFailure {
    pub agent_id: AgentId,
    pub reason: String,
}

/// Everything needed to build prompts for one platform.
#[derive(Clone, Copy)]
pub struct DivergentContext<'a> {
    pub store: &'a DemoStore,
    pub embedder: &'a dyn Embedder,
    pub template: &'a PromptTemplate,
    pub spec: &'a PlatformSpec,
    pub providers: &'a ProviderRegistry,
}

/// `(demo id, similarity)` pairs in retrieval order.
pub type Retrieved = Vec<(String, f64)>;

#[derive(Debug, Clone)]
pub struct DivergentRun {
    pub message: Message,
    /// One prompt per divergent agent, in agent order.
    pub prompts: Vec<RenderedPrompt>,
    /// Retrieved demo ids with their similarity, best first.
    pub retrieved: Retrieved,
    pub failures: Vec<AgentFailure>,
}

/// Build the per-agent prompts. Agent `i` receives the group labelled `i`.
pub fn build_prompts(
    task: &EdaTask,
    config: &DivergentConfig,
    ctx: &DivergentContext<'_>,
) -> Result<(Vec<RenderedPrompt>, Retrieved), DivergentError> {
    config.validate()?;
    let api_doc = render_api_document(ctx.spec);
    if config.zero_shot {
        let prompt = render_zero_shot(ctx.template, &api_doc, task)?;
        return Ok((vec![prompt; config.num_agents], Vec::new()));
    }
    let hits = ctx.store.search(ctx.embedder, &task.text, Some(&task.platform_id), config.top_k);
    let hits = match hits {
        Err(StoreError::EmptyIndex) => return Err(DivergentError::NoDemos(task.platform_id.clone())),
        other => other?,
    };
    let retrieved: Retrieved = hits.iter().map(|(d, s)| (d.id.clone(), *s)).collect();
    let pool: Vec<DemoInstance> = hits.into_iter().map(|(d, _)| d.clone()).collect();
    let groups = sample_demo_groups(&pool, config.group_size, config.num_agents, config.seed)?;
    let prompts = groups
        .iter()
        .map(|g| render_few_shot(ctx.template, &api_doc, g, task))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((prompts, retrieved))
}

/// Run every divergent agent of `graph` on `task` and package the parsed
/// outcomes into a message for the decision maker.
///
/// Provider calls run concurrently; outcomes keep agent order. Agents whose
/// call or output fails are dropped and reported in `failures`.
pub fn run_divergent(
    task: &EdaTask,
    config: &DivergentConfig,
    ctx: &DivergentContext<'_>,
    graph: &AgentGraph,
) -> Result<DivergentRun, DivergentError> {
    let agents: Vec<_> = graph.divergent_agents().collect();
    if agents.len() != config.num_agents {
        return Err(DivergentError::AgentCountMismatch {
            expected: config.num_agents,
            found: agents.len(),
        });
    }
    let providers = agents
        .iter()
        .map(|a| ctx.providers.get(&a.provider).ok_or_else(|| DivergentError::MissingProvider(a.provider.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let (prompts, retrieved) = build_prompts(task, config, ctx)?;

    let results: Vec<Result<Outcome, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = agents
            .iter()
            .zip(&providers)
            .zip(&prompts)
            .map(|((agent, provider), prompt)| {
                scope.spawn(move || {
                    let request = GenerationRequest {
                        prompt_text: prompt.text.clone(),
                        max_tokens: config.max_tokens,
                        temperature: config.temperature,
                        stop_sequences: Vec::new(),
                        seed: None,
                    };
                    let generated = provider.generate(&request).map_err(|e| e.to_string())?;
                    let (plan, script) = parse_outcome(&generated.text, ctx.template).map_err(|e| e.to_string())?;
                    Outcome::new(agent.id.clone(), prompt.group_id.clone(), plan, &script)
                        .map_err(|e| format!("script does not parse: {e}"))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("agent panicked".to_string())))
            .collect()
    });

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (agent, result) in agents.iter().zip(results) {
        match result {
            Ok(o) => outcomes.push(o),
            Err(reason) => failures.push(AgentFailure {
                agent_id: agent.id.clone(),
                reason,
            }),
        }
    }
    let Some(first) = outcomes.first() else {
        return Err(DivergentError::AllAgentsFailed(failures));
    };
    let sender = first.agent_id.clone();
    let receiver = graph.decision_maker().id.clone();
    debug_assert_eq!(graph.agent(&sender).map(|a| a.role), Some(AgentRole::DivergentThoughts));
    let message = Message::new(sender, receiver, outcomes).expect("at least one outcome");
    Ok(DivergentRun {
        message,
        prompts,
        retrieved,
        failures,
    })
}
