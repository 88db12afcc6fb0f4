use super::Value;
use crate::flow_script::is_identifier;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use thiserror::Error;

fn default_receiver() -> String {
    "chateda".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub platform_id: String,
    #[serde(default = "default_receiver")]
    pub receiver: String,
    pub stages: Vec<StageSpec>,
    pub methods: Vec<MethodSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    #[serde(default)]
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Number,
    String,
    Bool,
    List,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Number => "number",
            ParamType::String => "string",
            ParamType::Bool => "bool",
            ParamType::List => "list",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "number" => ParamType::Number,
            "string" => ParamType::String,
            "bool" => ParamType::Bool,
            "list" => ParamType::List,
            _ => return None,
        })
    }

    pub fn admits(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ParamType::Number, Value::Number(_))
                | (ParamType::String, Value::Str(_))
                | (ParamType::Bool, Value::Bool(_))
                | (ParamType::List, Value::List(_))
        )
    }
}

impl ParamSpec {
    /// Type and range check for one value.
    pub fn check(&self, value: &Value) -> Result<(), String> {
        if !self.kind.admits(value) {
            return Err(format!("`{}` expects a {}, got {value}", self.name, self.kind.as_str()));
        }
        if let (Some([lo, hi]), Value::Number(n)) = (self.range, value) {
            if !(lo..=hi).contains(n) {
                return Err(format!("`{}` = {value} is outside [{lo}, {hi}]", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read platform spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("platform spec parse error: {0}")]
    Parse(String),
    #[error("stage prerequisites form a cycle through `{0}`")]
    CyclicStages(String),
    #[error("duplicate method `{0}`")]
    DuplicateMethod(String),
    #[error("duplicate stage `{0}`")]
    DuplicateStage(String),
    #[error("`{owner}` refers to unknown stage `{stage}`")]
    UnknownStage { owner: String, stage: String },
    #[error("method `{method}`: invalid parameter `{param}`: {reason}")]
    BadParam {
        method: String,
        param: String,
        reason: String,
    },
}

impl PlatformSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let spec: PlatformSpec = serde_json::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.platform_id.trim().is_empty() {
            return Err(SpecError::Parse("empty platform_id".into()));
        }
        if !is_identifier(&self.receiver) {
            return Err(SpecError::Parse(format!("receiver `{}` is not an identifier", self.receiver)));
        }
        if self.stages.is_empty() {
            return Err(SpecError::Parse("no stages declared".into()));
        }
        let mut stage_names = HashSet::new();
        for stage in &self.stages {
            if !stage_names.insert(stage.name.as_str()) {
                return Err(SpecError::DuplicateStage(stage.name.clone()));
            }
        }
        for stage in &self.stages {
            for req in &stage.requires {
                if !stage_names.contains(req.as_str()) {
                    return Err(SpecError::UnknownStage {
                        owner: stage.name.clone(),
                        stage: req.clone(),
                    });
                }
            }
        }
        self.stage_order()?;

        let mut method_names = HashSet::new();
        for method in &self.methods {
            if !is_identifier(&method.name) {
                return Err(SpecError::Parse(format!("method `{}` is not an identifier", method.name)));
            }
            if !method_names.insert(method.name.as_str()) {
                return Err(SpecError::DuplicateMethod(method.name.clone()));
            }
            if !stage_names.contains(method.stage.as_str()) {
                return Err(SpecError::UnknownStage {
                    owner: method.name.clone(),
                    stage: method.stage.clone(),
                });
            }
            let mut param_names = HashSet::new();
            for param in &method.params {
                let bad = |reason: &str| SpecError::BadParam {
                    method: method.name.clone(),
                    param: param.name.clone(),
                    reason: reason.to_string(),
                };
                if !is_identifier(&param.name) {
                    return Err(bad("not an identifier"));
                }
                if !param_names.insert(param.name.as_str()) {
                    return Err(bad("declared twice"));
                }
                if param.required && param.default.is_some() {
                    return Err(bad("required parameters cannot have a default"));
                }
                if let Some([lo, hi]) = param.range {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(bad("range must be finite with min <= max"));
                    }
                    if param.kind != ParamType::Number {
                        return Err(bad("range is only allowed on number parameters"));
                    }
                }
                if let Some(default) = &param.default {
                    param.check(default).map_err(|e| bad(&format!("default: {e}")))?;
                }
            }
        }
        Ok(())
    }

    /// Stages in a topological order; ties keep declaration order.
    pub fn stage_order(&self) -> Result<Vec<&str>, SpecError> {
        let index: BTreeMap<&str, usize> = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let mut indegree: Vec<usize> = self.stages.iter().map(|s| s.requires.len()).collect();
        let mut done = vec![false; self.stages.len()];
        let mut order = Vec::with_capacity(self.stages.len());
        while order.len() < self.stages.len() {
            let Some(next) = (0..self.stages.len()).find(|&i| !done[i] && indegree[i] == 0) else {
                let stuck = (0..self.stages.len()).find(|&i| !done[i]).unwrap_or(0);
                return Err(SpecError::CyclicStages(self.stages[stuck].name.clone()));
            };
            done[next] = true;
            order.push(self.stages[next].name.as_str());
            for (i, stage) in self.stages.iter().enumerate() {
                if !done[i] {
                    indegree[i] -= stage
                        .requires
                        .iter()
                        .filter(|r| index.get(r.as_str()) == Some(&next))
                        .count();
                }
            }
        }
        Ok(order)
    }

    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn method(&self, name: &str) -> Option<&MethodSpec> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn methods_in_stage<'a>(&'a self, stage: &'a str) -> impl Iterator<Item = &'a MethodSpec> + 'a {
        self.methods.iter().filter(move |m| m.stage == stage)
    }
}

impl MethodSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn load_platform_spec(path: impl AsRef<Path>) -> Result<PlatformSpec, SpecError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PlatformSpec::from_json(&text)
}
