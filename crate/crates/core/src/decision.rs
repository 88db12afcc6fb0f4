//! The decision maker: score every candidate by the probability of answering
//! `yes` to the judgment question and keep the best one.

use crate::agent_graph::{EdaTask, Message, Outcome};
use crate::llm_provider::{GenerationRequest, LanguageModel, ProviderError};
use crate::prompt_factory::{judgment_parts, PromptTemplate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const YES: &str = "yes";
pub const NO: &str = "no";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("message carries no outcomes")]
    EmptyMessage,
    #[error("provider does not expose continuation scores")]
    ScoringUnsupported,
    #[error("non-finite logit")]
    NonFiniteLogit,
    #[error("provider returned no score for `{0}`")]
    MissingScore(&'static str),
    #[error("provider returned {got} score sets for {want} candidates")]
    ScoreCount { want: usize, got: usize },
    #[error(transparent)]
    Provider(ProviderError),
}

impl From<ProviderError> for DecisionError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::ScoringUnsupported => Self::ScoringUnsupported,
            other => Self::Provider(other),
        }
    }
}

/// Two-way softmax `exp(yes) / (exp(yes) + exp(no))`, stable at any finite magnitude.
pub fn yes_probability(score_yes: f64, score_no: f64) -> Result<f64, DecisionError> {
    if !score_yes.is_finite() || !score_no.is_finite() {
        return Err(DecisionError::NonFiniteLogit);
    }
    let m = score_yes.max(score_no);
    let ey = (score_yes - m).exp();
    let en = (score_no - m).exp();
    Ok(ey / (ey + en))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Let the model write this many tokens of analysis before the answer is scored.
    pub analysis_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Index of the chosen outcome in the message.
    pub chosen: usize,
    /// `(outcome index, yes probability)` for every outcome, by index.
    pub scores: Vec<(usize, f64)>,
    /// Analysis text per outcome, when analysis generation is enabled.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub analyses: Vec<String>,
}

impl Decision {
    pub fn chosen_outcome<'a>(&self, message: &'a Message) -> &'a Outcome {
        &message.outcomes()[self.chosen]
    }
}

/// Score each candidate of `message` and pick the highest yes probability,
/// the lowest index winning ties.
pub fn decide(
    task: &EdaTask,
    message: &Message,
    provider: &dyn LanguageModel,
    template: &PromptTemplate,
    config: &DecisionConfig,
) -> Result<Decision, DecisionError> {
    decide_outcomes(task, message.outcomes(), provider, template, config)
}

pub fn decide_outcomes(
    task: &EdaTask,
    outcomes: &[Outcome],
    provider: &dyn LanguageModel,
    template: &PromptTemplate,
    config: &DecisionConfig,
) -> Result<Decision, DecisionError> {
    if outcomes.is_empty() {
        return Err(DecisionError::EmptyMessage);
    }
    let parts: Vec<_> = outcomes.iter().map(|o| judgment_parts(template, task, o)).collect();
    let shared_prefix = parts[0].shared_prefix.clone();
    debug_assert!(parts.iter().all(|p| p.shared_prefix == shared_prefix));
    let mut blocks: Vec<String> = parts.into_iter().map(|p| p.candidate_block).collect();

    let mut analyses = Vec::new();
    if let Some(tokens) = config.analysis_tokens {
        let answer_line = template.judgment_suffix.lines().last().unwrap_or("").to_string();
        for block in &mut blocks {
            let mut request = GenerationRequest::new(format!("{shared_prefix}{block}"));
            request.max_tokens = tokens.max(1);
            request.stop_sequences = vec![answer_line.clone()];
            let analysis = provider.generate(&request)?.text.trim().to_string();
            block.push_str(&format!(" {analysis}\n{answer_line}"));
            analyses.push(analysis);
        }
    }

    let continuations = [YES.to_string(), NO.to_string()];
    let scored = provider.batch_score_shared_prefix(&shared_prefix, &blocks, &continuations)?;
    if scored.len() != outcomes.len() {
        return Err(DecisionError::ScoreCount {
            want: outcomes.len(),
            got: scored.len(),
        });
    }
    let mut scores = Vec::with_capacity(scored.len());
    for (i, s) in scored.iter().enumerate() {
        let yes = s.get(YES).ok_or(DecisionError::MissingScore(YES))?;
        let no = s.get(NO).ok_or(DecisionError::MissingScore(NO))?;
        scores.push((i, yes_probability(yes, no)?));
    }
    let mut chosen = 0;
    for &(i, p) in &scores {
        if p > scores[chosen].1 {
            chosen = i;
        }
    }
    Ok(Decision {
        chosen,
        scores,
        analyses,
    })
}
