//! Rule-based task solver behind the mock provider.
//!
//! The solver reads parameter settings, sweeps and flow limits straight out
//! of the task text using the platform's own parameter names (underscores
//! read as spaces), then emits the stage-ordered script that satisfies them.

use crate::flow_script::{Call, ScriptAst, Statement, ValueExpr};
use crate::simulator::{execute, ParamSpec, ParamType, PlatformSpec, Value, EVALUATE_STAGE};
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::sync::{LazyLock, Mutex};

/// Failure modes the mock can inject into an otherwise correct script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InjectedError {
    /// A parameter attached to a method of the wrong stage.
    WrongStageParam,
    /// Every call of one prerequisite stage dropped.
    MissingStage,
    /// A call to a method the platform does not have.
    UnknownMethod,
    /// Two adjacent statements swapped so a stage runs before its prerequisite.
    WrongOrder,
}

impl InjectedError {
    pub const ALL: [InjectedError; 4] = [
        InjectedError::WrongStageParam,
        InjectedError::MissingStage,
        InjectedError::UnknownMethod,
        InjectedError::WrongOrder,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSolution {
    pub plan: Vec<String>,
    pub ast: ScriptAst,
}

#[derive(Debug, Clone)]
struct Setting {
    stage_pos: usize,
    method: String,
    param: String,
    value: Value,
}

fn phrase(name: &str) -> String {
    name.replace('_', " ")
}

/// Compiled once per pattern; specs reuse the same handful of names.
fn cached(pattern: String) -> Regex {
    static CACHE: LazyLock<Mutex<HashMap<String, Regex>>> = LazyLock::new(Default::default);
    let mut cache = CACHE.lock().expect("regex cache");
    if let Some(re) = cache.get(&pattern) {
        return re.clone();
    }
    let re = Regex::new(&pattern).expect("solver regex");
    cache.insert(pattern, re.clone());
    re
}

fn setting_regex(param: &str) -> Regex {
    let words: Vec<String> = phrase(param).split(' ').map(regex::escape).collect();
    cached(format!(
        r#"(?i)\b{}\b(?:\s*(?:=|:|\bto\b|\bof\b|\bat\b|\bas\b|\bover\b|\bacross\b|\bin\b|\bthrough\b|\bset\b|\bvalues\b|\bfrom\b))*\s*(\[[^\]]*\]|-?\d+(?:\.\d+)?(?:e[+-]?\d+)?|"[^"]*"|\btrue\b|\bfalse\b)"#,
        words.join(r"[\s_]+")
    ))
}

fn parse_value(text: &str) -> Option<Value> {
    let lowered = text.to_lowercase();
    match lowered.as_str() {
        "true" => return Some(Value::Bool(true)),
        "false" => return Some(Value::Bool(false)),
        _ => {}
    }
    if let Some(inner) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        let items = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_value)
            .collect::<Option<Vec<_>>>()?;
        return Some(Value::List(items));
    }
    if let Some(s) = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')) {
        return Some(Value::Str(s.to_string()));
    }
    text.parse::<f64>().ok().filter(|n| n.is_finite()).map(Value::Number)
}

/// Is `value` a sweep over `param` (a list of admissible scalars)?
fn as_sweep(param: &ParamSpec, value: &Value) -> Option<Vec<Value>> {
    match value {
        Value::List(items) if param.kind != ParamType::List && !items.is_empty() => {
            items.iter().all(|v| param.kind.admits(v)).then(|| items.clone())
        }
        _ => None,
    }
}

fn stage_mentioned(task: &str, patterns: &[&str], stage: &str) -> bool {
    let stage = regex::escape(&phrase(stage));
    patterns
        .iter()
        .any(|p| cached(format!(r"(?i){}\s+(?:the\s+)?{stage}\b", p)).is_match(task))
}

/// Solve `task` on `spec`.
pub fn canonical_solution(spec: &PlatformSpec, task: &str) -> CanonicalSolution {
    let order: Vec<String> = spec
        .stage_order()
        .expect("validated spec")
        .into_iter()
        .map(str::to_string)
        .collect();
    let pos = |stage: &str| order.iter().position(|s| s == stage).expect("known stage");

    // Which stages run.
    let mut last = order.len() - 1;
    if let Some(stop) = order
        .iter()
        .find(|s| stage_mentioned(task, &[r"\bstop(?:ping)?\s+after", r"\bup\s+to"], s))
    {
        last = pos(stop);
    }
    let mut included: BTreeSet<usize> = ancestors(spec, &order, last);
    included.insert(last);
    let skip_eval = cached(r"(?i)\b(?:without|skip|skipping|no)\s+(?:the\s+)?evaluation\b|\bdo\s+not\s+evaluate\b".into())
        .is_match(task);
    if skip_eval {
        if let Some(p) = order.iter().position(|s| s == EVALUATE_STAGE) {
            included.remove(&p);
        }
    }

    // Fixed values and sweeps mentioned in the task.
    let mut fixed = Vec::new();
    let mut sweeps = Vec::new();
    for method in &spec.methods {
        let stage_pos = pos(&method.stage);
        if !included.contains(&stage_pos) {
            continue;
        }
        for param in &method.params {
            let Some(value) = setting_regex(&param.name)
                .captures_iter(task)
                .filter_map(|c| parse_value(c.get(1)?.as_str()))
                .find(|v| param.check(v).is_ok() || as_sweep(param, v).is_some())
            else {
                continue;
            };
            let setting = Setting {
                stage_pos,
                method: method.name.clone(),
                param: param.name.clone(),
                value,
            };
            match as_sweep(param, &setting.value) {
                Some(_) => sweeps.push(setting),
                None => fixed.push(setting),
            }
        }
    }
    sweeps.sort_by_key(|s| s.stage_pos);
    // Loops nest at most two deep; further sweeps keep their first value.
    for extra in sweeps.split_off(sweeps.len().min(2)) {
        if let Value::List(items) = &extra.value {
            fixed.push(Setting {
                value: items[0].clone(),
                ..extra
            });
        }
    }

    // One call per included stage (more when several methods are configured).
    let stages: Vec<usize> = included.iter().copied().collect();
    let calls_for = |stage_pos: usize| -> Vec<Statement> {
        let stage = &order[stage_pos];
        let configured: Vec<&str> = fixed
            .iter()
            .chain(&sweeps)
            .filter(|s| s.stage_pos == stage_pos)
            .map(|s| s.method.as_str())
            .collect();
        let methods: Vec<_> = spec.methods_in_stage(stage).collect();
        let chosen: Vec<_> = if configured.is_empty() {
            methods.into_iter().take(1).collect()
        } else {
            methods.into_iter().filter(|m| configured.contains(&m.name.as_str())).collect()
        };
        chosen
            .into_iter()
            .map(|m| {
                let mut call = Call::new(spec.receiver.clone(), m.name.clone());
                for p in &m.params {
                    if let Some(s) = sweeps.iter().find(|s| s.method == m.name && s.param == p.name) {
                        call.kwargs.push((p.name.clone(), ValueExpr::VarRef(s.param.clone())));
                    } else if let Some(s) = fixed.iter().find(|s| s.method == m.name && s.param == p.name) {
                        call.kwargs.push((p.name.clone(), s.value.to_expr()));
                    }
                }
                Statement::Call(call)
            })
            .collect()
    };
    let run = |range: &[usize]| -> Vec<Statement> { range.iter().flat_map(|&s| calls_for(s)).collect() };
    let sweep_loop = |s: &Setting, body: Vec<Statement>| -> Statement {
        let Value::List(items) = &s.value else { unreachable!("sweep holds a list") };
        Statement::ForLoop {
            var: s.param.clone(),
            values: items.iter().map(Value::to_expr).collect(),
            body,
        }
    };
    let split = |at: usize| stages.iter().position(|&s| s >= at).unwrap_or(stages.len());

    let statements = match sweeps.as_slice() {
        [] => run(&stages),
        [one] => {
            let i = split(one.stage_pos);
            let mut out = run(&stages[..i]);
            out.push(sweep_loop(one, run(&stages[i..])));
            out
        }
        [outer, inner, ..] => {
            let i = split(outer.stage_pos);
            let j = split(inner.stage_pos).max(i);
            let mut out = run(&stages[..i]);
            let mut outer_body = run(&stages[i..j]);
            outer_body.push(sweep_loop(inner, run(&stages[j..])));
            out.push(sweep_loop(outer, outer_body));
            out
        }
    };

    let mut plan = Vec::new();
    for &s in &stages {
        let stage = &order[s];
        let settings: Vec<String> = fixed
            .iter()
            .filter(|f| f.stage_pos == s)
            .map(|f| format!("{}={}", f.param, f.value))
            .collect();
        let mut step = format!("Run the {} stage", phrase(stage));
        if !settings.is_empty() {
            step.push_str(&format!(" with {}", settings.join(", ")));
        }
        for sw in sweeps.iter().filter(|sw| sw.stage_pos == s) {
            step.push_str(&format!(
                ", sweeping {} over {} and repeating every later stage for each value",
                sw.param, sw.value
            ));
        }
        plan.push(step);
    }
    plan.push("Check that every call succeeded and report the results".to_string());

    CanonicalSolution {
        plan,
        ast: ScriptAst::new(statements),
    }
}

fn ancestors(spec: &PlatformSpec, order: &[String], of: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = vec![of];
    while let Some(s) = stack.pop() {
        let stage = spec.stage(&order[s]).expect("known stage");
        for req in &stage.requires {
            let p = order.iter().position(|o| o == req).expect("known stage");
            if out.insert(p) {
                stack.push(p);
            }
        }
    }
    out
}

type Path = Vec<usize>;

fn call_paths(stmts: &[Statement], prefix: &mut Path, out: &mut Vec<Path>) {
    for (i, stmt) in stmts.iter().enumerate() {
        prefix.push(i);
        match stmt {
            Statement::Call(_) => out.push(prefix.clone()),
            Statement::ForLoop { body, .. } => call_paths(body, prefix, out),
            Statement::Assign { .. } => {}
        }
        prefix.pop();
    }
}

fn call_at_mut<'a>(stmts: &'a mut [Statement], path: &[usize]) -> &'a mut Call {
    match (&mut stmts[path[0]], path.len()) {
        (Statement::Call(call), 1) => call,
        (Statement::ForLoop { body, .. }, _) => call_at_mut(body, &path[1..]),
        _ => panic!("path does not lead to a call"),
    }
}

fn fails(ast: &ScriptAst, spec: &PlatformSpec) -> bool {
    !execute(ast, spec, 0).success
}

/// Corrupt `ast` with one error of `kind`. `None` if the kind does not apply
/// to this script or the mutation would not fail on `spec`.
pub fn inject_error(
    spec: &PlatformSpec,
    ast: &ScriptAst,
    kind: InjectedError,
    rng: &mut impl Rng,
) -> Option<ScriptAst> {
    let mut paths = Vec::new();
    call_paths(&ast.statements, &mut Vec::new(), &mut paths);
    if paths.is_empty() {
        return None;
    }
    let calls: Vec<Call> = {
        let mut tmp = ast.clone();
        paths.iter().map(|p| call_at_mut(&mut tmp.statements, p).clone()).collect()
    };
    let mut candidates: Vec<ScriptAst> = Vec::new();
    match kind {
        InjectedError::WrongStageParam => {
            // Prefer moving an explicit argument onto another method's call.
            for (i, from) in calls.iter().enumerate() {
                for (k, (key, _)) in from.kwargs.iter().enumerate() {
                    for (j, to) in calls.iter().enumerate() {
                        let target = spec.method(&to.method);
                        if to.method == from.method || target.is_none_or(|m| m.param(key).is_some()) || to.kwarg(key).is_some() {
                            continue;
                        }
                        let mut out = ast.clone();
                        let moved = call_at_mut(&mut out.statements, &paths[i]).kwargs.remove(k);
                        call_at_mut(&mut out.statements, &paths[j]).kwargs.push(moved);
                        candidates.push(out);
                    }
                }
            }
            if candidates.is_empty() {
                for (j, to) in calls.iter().enumerate() {
                    let Some(target) = spec.method(&to.method) else { continue };
                    for other in spec.methods.iter().filter(|m| m.stage != target.stage) {
                        for p in &other.params {
                            if target.param(&p.name).is_some() {
                                continue;
                            }
                            let Some(default) = &p.default else { continue };
                            let mut out = ast.clone();
                            call_at_mut(&mut out.statements, &paths[j])
                                .kwargs
                                .push((p.name.clone(), default.to_expr()));
                            candidates.push(out);
                        }
                    }
                }
            }
        }
        InjectedError::MissingStage => {
            let present: BTreeSet<&str> = calls
                .iter()
                .filter_map(|c| spec.method(&c.method).map(|m| m.stage.as_str()))
                .collect();
            for stage in &present {
                let needed = present
                    .iter()
                    .any(|t| spec.stage(t).is_some_and(|s| s.requires.iter().any(|r| r == stage)));
                if !needed {
                    continue;
                }
                let mut out = ast.clone();
                if remove_stage(&mut out.statements, spec, stage) {
                    candidates.push(out);
                }
            }
        }
        InjectedError::UnknownMethod => {
            let j = rng.gen_range(0..calls.len());
            let name = &calls[j].method;
            let fake = [format!("{name}_run"), format!("run_{name}"), format!("{name}_design")]
                .into_iter()
                .find(|n| spec.method(n).is_none())?;
            let mut out = ast.clone();
            call_at_mut(&mut out.statements, &paths[j]).method = fake;
            candidates.push(out);
        }
        InjectedError::WrongOrder => {
            swap_candidates(&ast.statements, &mut Vec::new(), ast, &mut candidates);
        }
    }
    candidates.retain(|c| fails(c, spec));
    candidates.choose(rng).cloned()
}

/// Remove every call of `stage`, dropping loops left empty. Returns false if
/// that would leave an empty script.
fn remove_stage(stmts: &mut Vec<Statement>, spec: &PlatformSpec, stage: &str) -> bool {
    stmts.retain_mut(|stmt| match stmt {
        Statement::Call(call) => spec.method(&call.method).is_none_or(|m| m.stage != stage),
        Statement::ForLoop { body, .. } => remove_stage(body, spec, stage),
        Statement::Assign { .. } => true,
    });
    !stmts.is_empty()
}

fn swap_candidates(stmts: &[Statement], prefix: &mut Path, root: &ScriptAst, out: &mut Vec<ScriptAst>) {
    for i in 0..stmts.len() {
        if i + 1 < stmts.len() {
            let mut mutated = root.clone();
            block_at_mut(&mut mutated.statements, prefix).swap(i, i + 1);
            out.push(mutated);
        }
        if let Statement::ForLoop { body, .. } = &stmts[i] {
            prefix.push(i);
            swap_candidates(body, prefix, root, out);
            prefix.pop();
        }
    }
}

fn block_at_mut<'a>(stmts: &'a mut Vec<Statement>, path: &[usize]) -> &'a mut Vec<Statement> {
    match path.split_first() {
        None => stmts,
        Some((&i, rest)) => match &mut stmts[i] {
            Statement::ForLoop { body, .. } => block_at_mut(body, rest),
            _ => panic!("path does not lead to a loop"),
        },
    }
}
