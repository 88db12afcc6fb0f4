//! Task suites, grading, and the single- vs multi-agent experiment runner.

use crate::agent_graph::{EdaTask, GraphConfig};
use crate::decision::DecisionConfig;
use crate::demo_store::{DemoStore, Embedder};
use crate::divergent::DivergentConfig;
use crate::llm_provider::ProviderRegistry;
use crate::pipeline::{Mode, System};
use crate::prompt_factory::PromptTemplate;
use crate::simulator::{ExecutionReport, PlatformSpec, Value, EVALUATE_STAGE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use thiserror::Error;

pub const BUNDLED_SUITE_SIZE: usize = 50;
/// SimpleFlow / ComplexFlow / ParameterTuner counts of a bundled suite.
pub const BUNDLED_SPLIT: [usize; 3] = [15, 15, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(alias = "simple_flow")]
    SimpleFlow,
    #[serde(alias = "complex_flow")]
    ComplexFlow,
    #[serde(alias = "parameter_tuner", alias = "ParameterFlow", alias = "parameter_flow")]
    ParameterTuner,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::SimpleFlow, Category::ComplexFlow, Category::ParameterTuner];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KwargCheck {
    Exact(Value),
    Range([f64; 2]),
    Any,
}

impl KwargCheck {
    fn admits(&self, value: Option<&Value>) -> bool {
        match (self, value) {
            (_, None) => false,
            (KwargCheck::Any, Some(_)) => true,
            (KwargCheck::Exact(want), Some(got)) => want == got,
            (KwargCheck::Range([lo, hi]), Some(got)) => got.as_number().is_some_and(|n| *lo <= n && n <= *hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallCheck {
    pub method: String,
    #[serde(default)]
    pub kwargs: BTreeMap<String, KwargCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCheck {
    pub method: String,
    pub param: String,
    /// Every value the parameter takes across the calls of `method`, as a multiset.
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckSpec {
    pub required_calls: Vec<CallCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_sweep: Option<SweepCheck>,
    /// Whether the trace must (true) or must not (false) reach the evaluate stage.
    pub require_evaluate: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub forbid_methods: Vec<String>,
}

impl CheckSpec {
    fn is_empty(&self) -> bool {
        self.required_calls.is_empty() && self.required_sweep.is_none() && !self.require_evaluate && self.forbid_methods.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTask {
    pub id: String,
    pub category: Category,
    pub instruction: String,
    pub platform: String,
    pub checks: CheckSpec,
}

impl BenchTask {
    pub fn task(&self) -> EdaTask {
        EdaTask::new(self.instruction.clone(), self.platform.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub tasks: Vec<BenchTask>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read suite: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid suite: {0}")]
    SuiteParseError(String),
    #[error("task `{task}` targets unknown platform `{platform}`")]
    UnknownPlatform { task: String, platform: String },
    #[error("bundled suite must hold {BUNDLED_SUITE_SIZE} tasks split {BUNDLED_SPLIT:?}, found {found:?} of {total}")]
    BadCategorySplit { found: [usize; 3], total: usize },
}

impl Suite {
    /// Parse and validate a suite against the known platforms.
    pub fn parse(text: &str, platforms: &[PlatformSpec]) -> Result<Self, BenchError> {
        let suite: Suite = serde_json::from_str(text).map_err(|e| BenchError::SuiteParseError(e.to_string()))?;
        suite.validate(platforms)?;
        Ok(suite)
    }

    pub fn validate(&self, platforms: &[PlatformSpec]) -> Result<(), BenchError> {
        let bad = |why: String| Err(BenchError::SuiteParseError(why));
        if self.tasks.is_empty() {
            return bad("suite has no tasks".into());
        }
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id.as_str()) {
                return bad(format!("duplicate task id `{}`", t.id));
            }
            if t.instruction.trim().is_empty() {
                return bad(format!("task `{}` has an empty instruction", t.id));
            }
            if t.checks.is_empty() {
                return bad(format!("task `{}` has no checks", t.id));
            }
            let Some(spec) = platforms.iter().find(|p| p.platform_id == t.platform) else {
                return Err(BenchError::UnknownPlatform {
                    task: t.id.clone(),
                    platform: t.platform.clone(),
                });
            };
            let sweep = t.checks.required_sweep.iter().map(|s| (&s.method, Some(&s.param)));
            let calls = t.checks.required_calls.iter().flat_map(|c| {
                std::iter::once((&c.method, None)).chain(c.kwargs.keys().map(move |k| (&c.method, Some(k))))
            });
            for (method, param) in calls.chain(sweep) {
                let Some(m) = spec.method(method) else {
                    return bad(format!("task `{}` checks unknown method `{method}`", t.id));
                };
                if let Some(p) = param {
                    if m.param(p).is_none() {
                        return bad(format!("task `{}` checks unknown parameter `{method}.{p}`", t.id));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn category_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for t in &self.tasks {
            counts[Category::ALL.iter().position(|c| *c == t.category).expect("known category")] += 1;
        }
        counts
    }

    /// The size and 30/30/40 split every bundled suite keeps.
    pub fn check_bundled_split(&self) -> Result<(), BenchError> {
        let found = self.category_counts();
        if self.tasks.len() != BUNDLED_SUITE_SIZE || found != BUNDLED_SPLIT {
            return Err(BenchError::BadCategorySplit {
                found,
                total: self.tasks.len(),
            });
        }
        Ok(())
    }
}

pub fn load_suite(path: impl AsRef<Path>, platforms: &[PlatformSpec]) -> Result<Suite, BenchError> {
    Suite::parse(&std::fs::read_to_string(path)?, platforms)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub pass: bool,
    pub reason: Option<String>,
}

impl CheckOutcome {
    fn pass() -> Self {
        Self { pass: true, reason: None }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Self {
            pass: false,
            reason: Some(reason.into()),
        }
    }
}

/// Grade one execution against a task's checks.
pub fn check_task(report: &ExecutionReport, checks: &CheckSpec) -> CheckOutcome {
    if let Some(err) = &report.error {
        return CheckOutcome::fail(err.kind.as_str());
    }
    for call in &checks.required_calls {
        let hit = report
            .trace
            .iter()
            .any(|t| t.method == call.method && call.kwargs.iter().all(|(k, c)| c.admits(t.param(k))));
        if !hit {
            return CheckOutcome::fail(format!("no call to `{}` satisfies its argument checks", call.method));
        }
    }
    if let Some(sweep) = &checks.required_sweep {
        let mut taken: Vec<&Value> = report
            .trace
            .iter()
            .filter(|t| t.method == sweep.method)
            .filter_map(|t| t.param(&sweep.param))
            .collect();
        let mut missing = false;
        for want in &sweep.values {
            match taken.iter().position(|v| *v == want) {
                Some(i) => {
                    taken.swap_remove(i);
                }
                None => missing = true,
            }
        }
        if missing || !taken.is_empty() {
            return CheckOutcome::fail(format!("`{}.{}` was not swept over the required values", sweep.method, sweep.param));
        }
    }
    let evaluated = report.trace.iter().any(|t| t.stage == EVALUATE_STAGE);
    if evaluated != checks.require_evaluate {
        return CheckOutcome::fail(if evaluated {
            "the flow was evaluated but should not be"
        } else {
            "the flow was not evaluated"
        });
    }
    if let Some(t) = report.trace.iter().find(|t| checks.forbid_methods.contains(&t.method)) {
        return CheckOutcome::fail(format!("forbidden method `{}` was called", t.method));
    }
    CheckOutcome::pass()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub category: Category,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub passed: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub mode: Mode,
    pub divergent_agents: usize,
    pub top_k: usize,
    pub group_size: usize,
    pub seed: u64,
    pub metric_seed: u64,
    pub zero_shot: bool,
    pub providers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_task: Vec<TaskResult>,
    pub passed: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_category: BTreeMap<Category, CategoryScore>,
    pub fingerprint: Fingerprint,
}

impl BenchReport {
    fn from_results(mut per_task: Vec<TaskResult>, fingerprint: Fingerprint) -> Self {
        per_task.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let score = |rs: &[&TaskResult]| {
            let passed = rs.iter().filter(|r| r.pass).count();
            CategoryScore {
                passed,
                total: rs.len(),
                accuracy: if rs.is_empty() { 0.0 } else { passed as f64 / rs.len() as f64 },
            }
        };
        let all: Vec<&TaskResult> = per_task.iter().collect();
        let overall = score(&all);
        let per_category = Category::ALL
            .iter()
            .filter_map(|c| {
                let rs: Vec<&TaskResult> = per_task.iter().filter(|r| r.category == *c).collect();
                (!rs.is_empty()).then(|| (*c, score(&rs)))
            })
            .collect();
        Self {
            per_task,
            passed: overall.passed,
            total: overall.total,
            accuracy: overall.accuracy,
            per_category,
            fingerprint,
        }
    }
}

/// Everything a suite run needs besides the suite.
pub struct BenchSetup<'a> {
    pub graph: GraphConfig,
    pub divergent: DivergentConfig,
    pub decision: DecisionConfig,
    pub store: &'a DemoStore,
    pub embedder: &'a dyn Embedder,
    pub template: &'a PromptTemplate,
    pub platforms: &'a [PlatformSpec],
    pub providers: &'a ProviderRegistry,
    pub metric_seed: u64,
}

impl BenchSetup<'_> {
    fn system<'s>(&'s self, spec: &'s PlatformSpec) -> System<'s> {
        System {
            graph: self.graph.clone(),
            divergent: self.divergent.clone(),
            decision: self.decision.clone(),
            store: self.store,
            embedder: self.embedder,
            template: self.template,
            spec,
            providers: self.providers,
            metric_seed: self.metric_seed,
        }
    }

    fn run_task(&self, task: &BenchTask, mode: Mode) -> TaskResult {
        let outcome = match self.platforms.iter().find(|p| p.platform_id == task.platform) {
            None => CheckOutcome::fail(format!("unknown platform `{}`", task.platform)),
            Some(spec) => match self.system(spec).run(&task.task(), mode) {
                Ok(run) => check_task(&run.report, &task.checks),
                Err(e) => CheckOutcome::fail(e.to_string()),
            },
        };
        TaskResult {
            task_id: task.id.clone(),
            category: task.category,
            pass: outcome.pass,
            failure_reason: outcome.reason,
        }
    }

    fn fingerprint(&self, mode: Mode) -> Fingerprint {
        let agents: Vec<_> = self
            .graph
            .agents
            .iter()
            .filter(|a| a.role == crate::agent_graph::AgentRole::DivergentThoughts)
            .collect();
        let divergent_agents = match mode {
            Mode::SingleAgent => agents.len().min(1),
            Mode::MultiAgent => agents.len(),
        };
        let providers = self
            .graph
            .agents
            .iter()
            .map(|a| {
                let described = self.providers.get(&a.provider).map_or_else(|| "missing".to_string(), |p| p.describe());
                (a.id.to_string(), described)
            })
            .collect();
        Fingerprint {
            mode,
            divergent_agents,
            top_k: self.divergent.top_k,
            group_size: self.divergent.group_size,
            seed: self.divergent.seed,
            metric_seed: self.metric_seed,
            zero_shot: self.divergent.zero_shot,
            providers,
        }
    }
}

/// Solve and grade every task; per-task pipeline errors count as failures.
/// Tasks run in parallel; the report is ordered by task id.
pub fn run_suite(suite: &Suite, mode: Mode, setup: &BenchSetup<'_>) -> BenchReport {
    let results: Vec<TaskResult> = suite.tasks.par_iter().map(|t| setup.run_task(t, mode)).collect();
    BenchReport::from_results(results, setup.fingerprint(mode))
}

/// Serial form of [`run_suite`], for checking that parallelism changes nothing.
pub fn run_suite_serial(suite: &Suite, mode: Mode, setup: &BenchSetup<'_>) -> BenchReport {
    let results: Vec<TaskResult> = suite.tasks.iter().map(|t| setup.run_task(t, mode)).collect();
    BenchReport::from_results(results, setup.fingerprint(mode))
}
