//! Simulated EDA platforms.
//!
//! A [`PlatformSpec`] names the flow stages (with prerequisites) and the
//! methods each stage exposes. The same spec drives the API document shown to
//! the model ([`render_api_document`]) and the executor that validates and
//! runs generated scripts ([`execute`]).

mod apidoc;
mod exec;
mod spec;

pub use apidoc::{parse_api_document, render_api_document, API_DOC_HEADER};
pub use exec::{
    evaluate_metric, execute, ExecError, ExecErrorKind, ExecutionReport, FlowState, MetricError,
    TraceEntry, EVALUATE_STAGE, MAX_LOOP_ITERATIONS,
};
pub use spec::{load_platform_spec, MethodSpec, ParamSpec, ParamType, PlatformSpec, SpecError, StageSpec};

use crate::flow_script::ValueExpr;
use serde::{Deserialize, Serialize};

/// A fully resolved argument value (no variable references).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn to_expr(&self) -> ValueExpr {
        match self {
            Value::Bool(b) => ValueExpr::Bool(*b),
            Value::Number(n) => ValueExpr::Number(*n),
            Value::Str(s) => ValueExpr::Str(s.clone()),
            Value::List(items) => ValueExpr::ListOf(items.iter().map(Value::to_expr).collect()),
        }
    }

    /// Convert a literal expression; `None` if it contains a variable reference.
    pub fn from_literal(expr: &ValueExpr) -> Option<Value> {
        Some(match expr {
            ValueExpr::Bool(b) => Value::Bool(*b),
            ValueExpr::Number(n) => Value::Number(*n),
            ValueExpr::Str(s) => Value::Str(s.clone()),
            ValueExpr::ListOf(items) => {
                Value::List(items.iter().map(Value::from_literal).collect::<Option<_>>()?)
            }
            ValueExpr::VarRef(_) => return None,
        })
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&crate::flow_script::render_value(&self.to_expr()))
    }
}

#[cfg(test)]
mod tests;
