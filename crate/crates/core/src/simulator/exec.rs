use super::{PlatformSpec, Value};
use crate::flow_script::{Call, ScriptAst, Statement, ValueExpr};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Methods of this stage record a metric when called.
pub const EVALUATE_STAGE: &str = "evaluate";

/// Upper bound on loop iterations across one execution.
pub const MAX_LOOP_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub completed_stages: BTreeSet<String>,
    /// stage -> parameter -> most recently bound value
    pub bound_params: BTreeMap<String, BTreeMap<String, Value>>,
    pub metric_seed: u64,
    pub last_metric: Option<f64>,
}

impl FlowState {
    pub fn new(metric_seed: u64) -> Self {
        Self {
            metric_seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index of the top-level statement this call came from.
    pub statement_index: usize,
    pub method: String,
    pub stage: String,
    /// Resolved arguments including defaults, in declaration order.
    pub params: Vec<(String, Value)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
}

impl TraceEntry {
    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecErrorKind {
    UnknownMethod,
    UnknownParameter,
    BadValue,
    MissingParameter,
    StageOrderViolation,
    UnboundVariable,
    LoopBound,
}

impl ExecErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecErrorKind::UnknownMethod => "UnknownMethod",
            ExecErrorKind::UnknownParameter => "UnknownParameter",
            ExecErrorKind::BadValue => "BadValue",
            ExecErrorKind::MissingParameter => "MissingParameter",
            ExecErrorKind::StageOrderViolation => "StageOrderViolation",
            ExecErrorKind::UnboundVariable => "UnboundVariable",
            ExecErrorKind::LoopBound => "LoopBound",
        }
    }
}

impl std::fmt::Display for ExecErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub method: Option<String>,
    pub param: Option<String>,
    pub detail: String,
    pub statement_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub success: bool,
    pub trace: Vec<TraceEntry>,
    pub error: Option<ExecError>,
    pub final_state: FlowState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no stage has been run")]
    NoStagesRun,
}

/// Deterministic stand-in quality metric in `[0, 1)`.
///
/// A pure function of the metric seed and the sorted bound parameters.
pub fn evaluate_metric(state: &FlowState) -> Result<f64, MetricError> {
    if state.completed_stages.is_empty() {
        return Err(MetricError::NoStagesRun);
    }
    let mut hasher = Sha256::new();
    hasher.update(state.metric_seed.to_le_bytes());
    for (stage, params) in &state.bound_params {
        for (name, value) in params {
            hasher.update(stage.as_bytes());
            hasher.update([0x1f]);
            hasher.update(name.as_bytes());
            hasher.update([0x1f]);
            hasher.update(value.to_string().as_bytes());
            hasher.update([0x1e]);
        }
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    Ok((u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64)
}

/// Validate and run a script against a platform, halting at the first error.
pub fn execute(ast: &ScriptAst, spec: &PlatformSpec, metric_seed: u64) -> ExecutionReport {
    let mut run = Run {
        spec,
        state: FlowState::new(metric_seed),
        env: HashMap::new(),
        trace: Vec::new(),
        iterations: 0,
        top_index: 0,
    };
    let mut error = None;
    for (idx, stmt) in ast.statements.iter().enumerate() {
        run.top_index = idx;
        if let Err(e) = run.statement(stmt) {
            error = Some(e);
            break;
        }
    }
    ExecutionReport {
        success: error.is_none(),
        trace: run.trace,
        error,
        final_state: run.state,
    }
}

struct Run<'a> {
    spec: &'a PlatformSpec,
    state: FlowState,
    env: HashMap<String, Value>,
    trace: Vec<TraceEntry>,
    iterations: usize,
    top_index: usize,
}

impl Run<'_> {
    fn fail(&self, kind: ExecErrorKind, method: Option<&str>, param: Option<&str>, detail: String) -> ExecError {
        ExecError {
            kind,
            method: method.map(str::to_string),
            param: param.map(str::to_string),
            detail,
            statement_index: self.top_index,
        }
    }

    fn statement(&mut self, stmt: &Statement) -> Result<(), ExecError> {
        match stmt {
            Statement::Call(call) => self.call(call),
            Statement::Assign { name, value } => {
                let value = self.resolve(value, None, None)?;
                self.env.insert(name.clone(), value);
                Ok(())
            }
            Statement::ForLoop { var, values, body } => {
                let values = values
                    .iter()
                    .map(|v| self.resolve(v, None, None))
                    .collect::<Result<Vec<_>, _>>()?;
                let shadowed = self.env.remove(var);
                let mut result = Ok(());
                'outer: for value in values {
                    self.iterations += 1;
                    if self.iterations > MAX_LOOP_ITERATIONS {
                        result = Err(self.fail(
                            ExecErrorKind::LoopBound,
                            None,
                            None,
                            format!("loop expansion exceeds {MAX_LOOP_ITERATIONS} iterations"),
                        ));
                        break;
                    }
                    self.env.insert(var.clone(), value);
                    for inner in body {
                        if let Err(e) = self.statement(inner) {
                            result = Err(e);
                            break 'outer;
                        }
                    }
                }
                match shadowed {
                    Some(old) => self.env.insert(var.clone(), old),
                    None => self.env.remove(var),
                };
                result
            }
        }
    }

    fn resolve(&self, expr: &ValueExpr, method: Option<&str>, param: Option<&str>) -> Result<Value, ExecError> {
        Ok(match expr {
            ValueExpr::Number(n) => Value::Number(*n),
            ValueExpr::Str(s) => Value::Str(s.clone()),
            ValueExpr::Bool(b) => Value::Bool(*b),
            ValueExpr::ListOf(items) => Value::List(
                items
                    .iter()
                    .map(|i| self.resolve(i, method, param))
                    .collect::<Result<_, _>>()?,
            ),
            ValueExpr::VarRef(name) => self.env.get(name).cloned().ok_or_else(|| {
                self.fail(
                    ExecErrorKind::UnboundVariable,
                    method,
                    param,
                    format!("variable `{name}` is not bound"),
                )
            })?,
        })
    }

    fn call(&mut self, call: &Call) -> Result<(), ExecError> {
        let spec = self.spec;
        let name = call.method.as_str();
        if call.receiver != spec.receiver {
            return Err(self.fail(
                ExecErrorKind::UnknownMethod,
                Some(name),
                None,
                format!("unknown receiver `{}` (expected `{}`)", call.receiver, spec.receiver),
            ));
        }
        let Some(method) = spec.method(name) else {
            return Err(self.fail(
                ExecErrorKind::UnknownMethod,
                Some(name),
                None,
                format!("platform `{}` has no method `{name}`", spec.platform_id),
            ));
        };
        for (key, _) in &call.kwargs {
            if method.param(key).is_none() {
                return Err(self.fail(
                    ExecErrorKind::UnknownParameter,
                    Some(name),
                    Some(key),
                    format!("`{name}` does not have a parameter called `{key}`"),
                ));
            }
        }
        let mut given = HashMap::new();
        for (key, expr) in &call.kwargs {
            let value = self.resolve(expr, Some(name), Some(key))?;
            let param = method.param(key).expect("checked above");
            param
                .check(&value)
                .map_err(|why| self.fail(ExecErrorKind::BadValue, Some(name), Some(key), why))?;
            given.insert(key.as_str(), value);
        }
        let mut params = Vec::new();
        for param in &method.params {
            match given.remove(param.name.as_str()).or_else(|| param.default.clone()) {
                Some(value) => params.push((param.name.clone(), value)),
                None if param.required => {
                    return Err(self.fail(
                        ExecErrorKind::MissingParameter,
                        Some(name),
                        Some(&param.name),
                        format!("`{name}` requires parameter `{}`", param.name),
                    ))
                }
                None => {}
            }
        }
        let stage = spec.stage(&method.stage).expect("validated spec");
        let missing: Vec<&str> = stage
            .requires
            .iter()
            .filter(|r| !self.state.completed_stages.contains(*r))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(self.fail(
                ExecErrorKind::StageOrderViolation,
                Some(name),
                None,
                format!(
                    "`{name}` runs stage `{}` before its prerequisite(s) {}",
                    stage.name,
                    missing.join(", ")
                ),
            ));
        }

        self.state.completed_stages.insert(stage.name.clone());
        let bound = self.state.bound_params.entry(stage.name.clone()).or_default();
        for (k, v) in &params {
            bound.insert(k.clone(), v.clone());
        }
        let metric = if stage.name == EVALUATE_STAGE {
            let m = evaluate_metric(&self.state).expect("a stage just completed");
            self.state.last_metric = Some(m);
            Some(m)
        } else {
            None
        };
        self.trace.push(TraceEntry {
            statement_index: self.top_index,
            method: method.name.clone(),
            stage: stage.name.clone(),
            params,
            metric,
        });
        Ok(())
    }
}
