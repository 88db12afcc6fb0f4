//! Agents, the communication graph between them, and the messages they
//! exchange.
//!
//! A graph has any number of divergent-thoughts agents and exactly one
//! decision-making agent. Every divergent agent has an edge to the decision
//! maker; messages may only travel along declared edges.

use crate::divergent::PlanSteps;
use crate::flow_script::{EdaScript, ScriptError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    /// Generates candidate plan + script outcomes.
    DivergentThoughts,
    /// Selects one outcome among the candidates.
    DecisionMaking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role: AgentRole,
    /// Name of the provider configuration backing this agent.
    #[serde(default = "default_provider")]
    pub provider: String,
}

fn default_provider() -> String {
    "mock".to_string()
}

/// The `agents`/`edges` part of a system configuration file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub edges: Vec<(AgentId, AgentId)>,
}

impl GraphConfig {
    /// `divergent` R0 agents named `divergent-1..` wired to one `decision` agent.
    pub fn standard(divergent: usize, provider: &str) -> Self {
        let decision = AgentId::new("decision");
        let mut agents: Vec<AgentSpec> = (1..=divergent)
            .map(|i| AgentSpec {
                id: AgentId::new(format!("divergent-{i}")),
                role: AgentRole::DivergentThoughts,
                provider: provider.to_string(),
            })
            .collect();
        let edges = agents.iter().map(|a| (a.id.clone(), decision.clone())).collect();
        agents.push(AgentSpec {
            id: decision,
            role: AgentRole::DecisionMaking,
            provider: provider.to_string(),
        });
        Self { agents, edges }
    }
}

/// The natural-language task handed to the system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdaTask {
    pub text: String,
    pub platform_id: String,
}

impl EdaTask {
    pub fn new(text: impl Into<String>, platform_id: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            platform_id: platform_id.into(),
        }
    }
}

/// One agent's plan and script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub agent_id: AgentId,
    pub prompt_group_id: Option<String>,
    pub plan: PlanSteps,
    pub script: EdaScript,
}

impl Outcome {
    /// Builds an outcome, parsing the script text.
    pub fn new(
        agent_id: AgentId,
        prompt_group_id: Option<String>,
        plan: PlanSteps,
        script_text: &str,
    ) -> Result<Self, ScriptError> {
        Ok(Self {
            agent_id,
            prompt_group_id,
            plan,
            script: EdaScript::parse(script_text)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender_id: AgentId,
    pub receiver_id: AgentId,
    outcomes: Vec<Outcome>,
}

impl Message {
    pub fn new(sender_id: AgentId, receiver_id: AgentId, outcomes: Vec<Outcome>) -> Result<Self, GraphError> {
        if outcomes.is_empty() {
            return Err(GraphError::EmptyMessage);
        }
        Ok(Self {
            sender_id,
            receiver_id,
            outcomes,
        })
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn into_outcomes(self) -> Vec<Outcome> {
        self.outcomes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no decision-making agent")]
    ZeroDecisionMakers,
    #[error("graph has {0} decision-making agents; exactly one is allowed")]
    MultipleDecisionMakers(usize),
    #[error("graph has no divergent-thoughts agents")]
    NoDivergentAgents,
    #[error("edge {0} -> {1} references an unknown agent")]
    DanglingEdge(AgentId, AgentId),
    #[error("agent id `{0}` is declared twice")]
    DuplicateAgentId(AgentId),
    #[error("self edge on `{0}`")]
    SelfEdge(AgentId),
    #[error("divergent agent `{0}` has no edge to the decision maker")]
    Unwired(AgentId),
    #[error("no edge {0} -> {1}")]
    NoSuchEdge(AgentId, AgentId),
    #[error("message carries no outcomes")]
    EmptyMessage,
    #[error("invalid system configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub receiver_id: AgentId,
    /// Position of the message in the receiver's inbox at delivery.
    pub inbox_position: usize,
    pub outcome_count: usize,
}

/// Immutable agent topology plus per-agent in-memory inboxes.
#[derive(Debug)]
pub struct AgentGraph {
    agents: Vec<AgentSpec>,
    edges: BTreeSet<(AgentId, AgentId)>,
    inboxes: HashMap<AgentId, Mutex<VecDeque<Message>>>,
}

impl AgentGraph {
    pub fn build(config: &GraphConfig) -> Result<Self, GraphError> {
        let mut ids = HashSet::new();
        for agent in &config.agents {
            if !ids.insert(agent.id.clone()) {
                return Err(GraphError::DuplicateAgentId(agent.id.clone()));
            }
        }
        let deciders: Vec<&AgentSpec> = config
            .agents
            .iter()
            .filter(|a| a.role == AgentRole::DecisionMaking)
            .collect();
        match deciders.len() {
            0 => return Err(GraphError::ZeroDecisionMakers),
            1 => {}
            n => return Err(GraphError::MultipleDecisionMakers(n)),
        }
        if !config.agents.iter().any(|a| a.role == AgentRole::DivergentThoughts) {
            return Err(GraphError::NoDivergentAgents);
        }
        let mut edges = BTreeSet::new();
        for (from, to) in &config.edges {
            if !ids.contains(from) || !ids.contains(to) {
                return Err(GraphError::DanglingEdge(from.clone(), to.clone()));
            }
            if from == to {
                return Err(GraphError::SelfEdge(from.clone()));
            }
            edges.insert((from.clone(), to.clone()));
        }
        let decider = deciders[0].id.clone();
        for agent in &config.agents {
            if agent.role == AgentRole::DivergentThoughts && !edges.contains(&(agent.id.clone(), decider.clone())) {
                return Err(GraphError::Unwired(agent.id.clone()));
            }
        }
        let inboxes = config
            .agents
            .iter()
            .map(|a| (a.id.clone(), Mutex::new(VecDeque::new())))
            .collect();
        Ok(Self {
            agents: config.agents.clone(),
            edges,
            inboxes,
        })
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| &a.id == id)
    }

    /// Divergent-thoughts agents in declaration order.
    pub fn divergent_agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(|a| a.role == AgentRole::DivergentThoughts)
    }

    pub fn decision_maker(&self) -> &AgentSpec {
        self.agents
            .iter()
            .find(|a| a.role == AgentRole::DecisionMaking)
            .expect("validated at build")
    }

    pub fn edges(&self) -> impl Iterator<Item = &(AgentId, AgentId)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, from: &AgentId, to: &AgentId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    /// Deliver a message along an existing edge.
    pub fn send(&self, message: Message) -> Result<Delivery, GraphError> {
        if !self.has_edge(&message.sender_id, &message.receiver_id) {
            return Err(GraphError::NoSuchEdge(message.sender_id, message.receiver_id));
        }
        let receiver_id = message.receiver_id.clone();
        let outcome_count = message.outcomes.len();
        let mut inbox = self.inboxes[&receiver_id].lock().expect("inbox lock poisoned");
        inbox.push_back(message);
        Ok(Delivery {
            receiver_id,
            inbox_position: inbox.len() - 1,
            outcome_count,
        })
    }

    /// Remove and return every message queued for `receiver`, oldest first.
    pub fn drain_inbox(&self, receiver: &AgentId) -> Vec<Message> {
        self.inboxes
            .get(receiver)
            .map(|q| q.lock().expect("inbox lock poisoned").drain(..).collect())
            .unwrap_or_default()
    }
}
