//! Prompt construction: zero-shot and few-shot plan-then-script prompts,
//! demo-group sampling, and the yes/no judgment prompt for the decision maker.

use crate::agent_graph::{EdaTask, Outcome};
use crate::demo_store::DemoInstance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

pub const API_DOC_PLACEHOLDER: &str = "{{API_DOC}}";
pub const DEMOS_PLACEHOLDER: &str = "{{DEMOS}}";
pub const TASK_PLACEHOLDER: &str = "{{TASK}}";

/// Line prefix carrying the platform id inside every task section.
pub const PLATFORM_LINE_PREFIX: &str = "Platform: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub preamble: String,
    /// Heading placed above the API document.
    pub api_doc_slot: String,
    /// Heading placed above the demo blocks.
    pub demos_slot: String,
    /// Heading that opens every task section (demo tasks and the real task).
    pub task_slot: String,
    pub plan_marker: String,
    pub script_marker: String,
    /// Zero-shot instruction; must name both markers.
    pub instruction: String,
    pub judgment_preamble: String,
    /// Ends exactly where a single `yes`/`no` token answers it.
    pub judgment_suffix: String,
    pub judgment_includes_plan: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let plan_marker = "### PLAN".to_string();
        let script_marker = "### SCRIPT".to_string();
        Self {
            preamble: "You are an expert in EDA flow automation. Decompose the user's EDA task into \
                       ordered planning steps according to the API document, then write a script \
                       that calls the platform APIs to carry out the plan."
                .to_string(),
            api_doc_slot: "### API".to_string(),
            demos_slot: "### EXAMPLES".to_string(),
            task_slot: "### TASK".to_string(),
            instruction: format!(
                "First list the numbered planning steps under a line `{plan_marker}`, \
                 then write the script under a line `{script_marker}`."
            ),
            plan_marker,
            script_marker,
            judgment_preamble: "You are reviewing a generated EDA script for the task below.".to_string(),
            judgment_suffix: "Analyze and judge whether the generated EDA scripts can solve the EDA task. \
                              Answer yes or no.\nAnswer:"
                .to_string(),
            judgment_includes_plan: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("API document is empty")]
    EmptyApiDoc,
    #[error("group size {group_size} must be between 1 and the pool size {pool}")]
    BadGroupSize { group_size: usize, pool: usize },
    #[error("at least one group is required")]
    NoGroups,
    #[error("only {available} distinct ordered groups of size {group_size} exist, {requested} requested")]
    Infeasible {
        available: u128,
        group_size: usize,
        requested: usize,
    },
    #[error("cannot read template: {0}")]
    Io(#[from] std::io::Error),
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |why: &str| Err(PromptError::InvalidTemplate(why.to_string()));
        if self.plan_marker.trim().is_empty() || self.script_marker.trim().is_empty() {
            return bad("markers must be non-empty");
        }
        if self.plan_marker == self.script_marker {
            return bad("plan and script markers must differ");
        }
        if self.plan_marker.contains('\n') || self.script_marker.contains('\n') || self.task_slot.contains('\n') {
            return bad("markers and headings must be single lines");
        }
        if self.preamble.contains(&self.plan_marker) || self.preamble.contains(&self.script_marker) {
            return bad("preamble must not contain the plan or script marker");
        }
        if !self.instruction.contains(&self.plan_marker) || !self.instruction.contains(&self.script_marker) {
            return bad("instruction must name both markers");
        }
        if self.task_slot.trim().is_empty() {
            return bad("task heading must be non-empty");
        }
        if self.judgment_suffix.trim().is_empty() {
            return bad("judgment suffix must be non-empty");
        }
        Ok(())
    }

    /// Parse a template file: a JSON object, or plain text with the
    /// `{{API_DOC}}`, `{{DEMOS}}` and `{{TASK}}` placeholders in that order.
    ///
    /// In the plain-text form the last line before each placeholder is that
    /// slot's heading, text above the first heading is the preamble, and text
    /// after `{{TASK}}` is the zero-shot instruction.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let template = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| PromptError::InvalidTemplate(e.to_string()))?
        } else {
            Self::from_layout(text)?
        };
        template.validate()?;
        Ok(template)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn from_layout(text: &str) -> Result<Self, PromptError> {
        let missing = |p: &str| PromptError::InvalidTemplate(format!("missing placeholder {p}"));
        let (head, rest) = text.split_once(API_DOC_PLACEHOLDER).ok_or_else(|| missing(API_DOC_PLACEHOLDER))?;
        let (between_doc_demos, rest) = rest.split_once(DEMOS_PLACEHOLDER).ok_or_else(|| missing(DEMOS_PLACEHOLDER))?;
        let (between_demos_task, tail) = rest.split_once(TASK_PLACEHOLDER).ok_or_else(|| missing(TASK_PLACEHOLDER))?;
        let last_line = |s: &str| -> (String, String) {
            let trimmed = s.trim_end();
            match trimmed.rsplit_once('\n') {
                Some((before, line)) => (before.trim().to_string(), line.trim().to_string()),
                None => (String::new(), trimmed.trim().to_string()),
            }
        };
        let (preamble, api_doc_slot) = last_line(head);
        let (_, demos_slot) = last_line(between_doc_demos);
        let (_, task_slot) = last_line(between_demos_task);
        let defaults = Self::default();
        let instruction = match tail.trim() {
            "" => defaults.instruction.clone(),
            s => s.to_string(),
        };
        Ok(Self {
            preamble,
            api_doc_slot,
            demos_slot,
            task_slot,
            instruction,
            ..defaults
        })
    }

    fn task_section(&self, task_text: &str, platform_id: &str) -> String {
        format!(
            "{}\n{PLATFORM_LINE_PREFIX}{}\n{}\n",
            self.task_slot,
            platform_id,
            task_text.trim()
        )
    }

    /// Plan and script sections exactly as a model is expected to emit them.
    pub fn outcome_block(&self, plan: &[String], script: &str) -> String {
        let mut out = format!("{}\n", self.plan_marker);
        for (i, step) in plan.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, step));
        }
        out.push_str(&format!("{}\n{}\n", self.script_marker, script.trim_end()));
        out
    }

    fn header(&self, api_doc: &str) -> String {
        let mut out = String::new();
        if !self.preamble.is_empty() {
            out.push_str(&self.preamble);
            out.push_str("\n\n");
        }
        out.push_str(&format!("{}\n{}\n\n", self.api_doc_slot, api_doc.trim_end()));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptKind {
    ZeroShot,
    FewShot,
    Judgment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub group_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoGroup {
    pub group_id: String,
    pub demos: Vec<DemoInstance>,
}

impl DemoGroup {
    pub fn size(&self) -> usize {
        self.demos.len()
    }
}

/// `A`, `B`, ..., `Z`, `AA`, `AB`, ...
pub fn group_label(mut index: usize) -> String {
    let mut label = Vec::new();
    loop {
        label.push(b'A' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    label.reverse();
    String::from_utf8(label).expect("ascii")
}

/// Number of ordered size-`n` sequences of distinct items from `k`, saturating.
fn ordered_sequences(k: usize, n: usize) -> u128 {
    (0..n).fold(1u128, |acc, i| acc.saturating_mul((k - i) as u128))
}

/// Draw `num_groups` pairwise-distinct ordered demo groups from `pool`.
///
/// Groups are drawn one after another from a single seeded stream, so the
/// first groups do not depend on how many are requested.
pub fn sample_demo_groups(
    pool: &[DemoInstance],
    group_size: usize,
    num_groups: usize,
    seed: u64,
) -> Result<Vec<DemoGroup>, PromptError> {
    if group_size == 0 || group_size > pool.len() {
        return Err(PromptError::BadGroupSize {
            group_size,
            pool: pool.len(),
        });
    }
    if num_groups == 0 {
        return Err(PromptError::NoGroups);
    }
    let available = ordered_sequences(pool.len(), group_size);
    if available < num_groups as u128 {
        return Err(PromptError::Infeasible {
            available,
            group_size,
            requested: num_groups,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut groups = Vec::with_capacity(num_groups);
    while groups.len() < num_groups {
        let picks = rand::seq::index::sample(&mut rng, pool.len(), group_size).into_vec();
        if seen.insert(picks.clone()) {
            groups.push(DemoGroup {
                group_id: group_label(groups.len()),
                demos: picks.into_iter().map(|i| pool[i].clone()).collect(),
            });
        }
    }
    Ok(groups)
}

pub fn render_few_shot(
    template: &PromptTemplate,
    api_doc: &str,
    group: &DemoGroup,
    task: &EdaTask,
) -> Result<RenderedPrompt, PromptError> {
    if api_doc.trim().is_empty() {
        return Err(PromptError::EmptyApiDoc);
    }
    let mut text = template.header(api_doc);
    text.push_str(&format!("{}\n\n", template.demos_slot));
    for demo in &group.demos {
        text.push_str(&template.task_section(&demo.task, &demo.platform));
        text.push_str(&template.outcome_block(&demo.plan, &demo.script));
        text.push('\n');
    }
    text.push_str(&template.task_section(&task.text, &task.platform_id));
    Ok(RenderedPrompt {
        text,
        kind: PromptKind::FewShot,
        group_id: Some(group.group_id.clone()),
    })
}

pub fn render_zero_shot(template: &PromptTemplate, api_doc: &str, task: &EdaTask) -> Result<RenderedPrompt, PromptError> {
    if api_doc.trim().is_empty() {
        return Err(PromptError::EmptyApiDoc);
    }
    let mut text = template.header(api_doc);
    text.push_str(&format!("{}\n\n", template.instruction));
    text.push_str(&template.task_section(&task.text, &task.platform_id));
    Ok(RenderedPrompt {
        text,
        kind: PromptKind::ZeroShot,
        group_id: None,
    })
}

/// A judgment prompt split at the point where candidates diverge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgmentParts {
    /// Identical for every candidate of the same task.
    pub shared_prefix: String,
    /// Candidate plan and script followed by the judgment suffix.
    pub candidate_block: String,
}

pub fn judgment_parts(template: &PromptTemplate, task: &EdaTask, candidate: &Outcome) -> JudgmentParts {
    let mut shared_prefix = String::new();
    if !template.judgment_preamble.is_empty() {
        shared_prefix.push_str(&template.judgment_preamble);
        shared_prefix.push_str("\n\n");
    }
    shared_prefix.push_str(&template.task_section(&task.text, &task.platform_id));
    shared_prefix.push('\n');
    let plan: &[String] = if template.judgment_includes_plan {
        candidate.plan.steps()
    } else {
        &[]
    };
    let mut candidate_block = if plan.is_empty() {
        format!("{}\n{}\n", template.script_marker, candidate.script.source().trim_end())
    } else {
        template.outcome_block(plan, candidate.script.source())
    };
    candidate_block.push('\n');
    candidate_block.push_str(&template.judgment_suffix);
    JudgmentParts {
        shared_prefix,
        candidate_block,
    }
}

pub fn render_judgment(template: &PromptTemplate, task: &EdaTask, candidate: &Outcome) -> RenderedPrompt {
    let parts = judgment_parts(template, task, candidate);
    RenderedPrompt {
        text: parts.shared_prefix + &parts.candidate_block,
        kind: PromptKind::Judgment,
        group_id: candidate.prompt_group_id.clone(),
    }
}
