//! Multi-agent generation of EDA flow scripts.
//!
//! Divergent agents each answer the task from a different retrieved set of
//! demos; a decision maker keeps the candidate it most believes solves the
//! task; a simulated EDA platform executes and grades the result.

pub mod agent_graph;
pub mod bench;
pub mod bundled;
pub mod decision;
pub mod demo_store;
pub mod divergent;
pub mod flow_script;
pub mod llm_provider;
pub mod pipeline;
pub mod prompt_factory;
pub mod simulator;
