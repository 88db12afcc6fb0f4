use super::canonical::{canonical_solution, inject_error, InjectedError};
use super::{
    check_continuations, normalize_answer, ContinuationScores, FinishReason, GenerationRequest, GenerationResult,
    LanguageModel, ProviderError,
};
use crate::bundled;
use crate::flow_script::{parse_script, render_script};
use crate::prompt_factory::{PromptTemplate, PLATFORM_LINE_PREFIX};
use crate::simulator::{execute, parse_api_document, PlatformSpec, API_DOC_HEADER};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Logit gap between the right and wrong answer.
const VERDICT_GAP: f64 = 5.0;
/// Logit for anything that is neither `yes` nor `no`.
const OTHER_LOGIT: f64 = -10.0;
/// Noise stays strictly inside half the gap, so verdicts never flip.
const NOISE_BOUND: f64 = 0.49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockProviderConfig {
    pub seed: u64,
    pub error_rate: f64,
    pub error_kinds: Vec<InjectedError>,
}

impl Default for MockProviderConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            error_rate: 0.0,
            error_kinds: InjectedError::ALL.to_vec(),
        }
    }
}

impl MockProviderConfig {
    pub fn new(seed: u64, error_rate: f64) -> Self {
        Self {
            seed,
            error_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(ProviderError::InvalidRequest(format!(
                "error_rate {} outside [0, 1]",
                self.error_rate
            )));
        }
        if self.error_rate > 0.0 && self.error_kinds.is_empty() {
            return Err(ProviderError::InvalidRequest("error_rate > 0 needs at least one error kind".into()));
        }
        Ok(())
    }
}

/// Deterministic simulator-backed model.
///
/// Generation reads the API document and the last task section out of the
/// prompt, solves the task with the canonical rule-based solver and, with
/// probability `error_rate`, corrupts the script. Scoring executes the last
/// script in the prefix and favours `yes` exactly when it runs cleanly.
#[derive(Debug, Clone)]
pub struct MockProvider {
    config: MockProviderConfig,
    template: PromptTemplate,
    platforms: Vec<PlatformSpec>,
}

impl MockProvider {
    pub fn new(config: MockProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            config,
            template: PromptTemplate::default(),
            platforms: bundled::platforms(),
        })
    }

    /// Use the markers of `template` to read prompts.
    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    /// Register a platform the scorer can execute against (replaces one with the same id).
    pub fn with_platform(mut self, spec: PlatformSpec) -> Self {
        self.platforms.retain(|p| p.platform_id != spec.platform_id);
        self.platforms.push(spec);
        self
    }

    pub fn config(&self) -> &MockProviderConfig {
        &self.config
    }

    fn platform(&self, id: &str) -> Option<&PlatformSpec> {
        self.platforms.iter().find(|p| p.platform_id == id)
    }

    /// Platform named by the last `Platform:` line of `text`.
    fn platform_in<'a>(&'a self, text: &str) -> Option<&'a PlatformSpec> {
        let id = text
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix(PLATFORM_LINE_PREFIX))?
            .trim();
        self.platform(id)
    }

    /// Task text of the last task section in `prompt`.
    fn task_text<'a>(&self, prompt: &'a str) -> Option<&'a str> {
        let slot = format!("\n{}\n", self.template.task_slot);
        let start = prompt.rfind(&slot)? + slot.len();
        let section = &prompt[start..];
        let body = match section.strip_prefix(PLATFORM_LINE_PREFIX) {
            Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
            None => section,
        };
        Some(body.trim())
    }

    /// Is the last script in `text` valid on the platform named before it?
    fn verdict(&self, text: &str) -> Result<(), String> {
        let marker = format!("{}\n", self.template.script_marker);
        let at = text.rfind(&marker).ok_or("no script found")?;
        let mut script = &text[at + marker.len()..];
        if let Some(end) = script.find(self.template.judgment_suffix.as_str()) {
            script = &script[..end];
        }
        let spec = self.platform_in(&text[..at]).ok_or("unknown platform")?;
        let ast = parse_script(script).map_err(|e| e.to_string())?;
        let report = execute(&ast, spec, self.config.seed);
        match report.error {
            None => Ok(()),
            Some(e) => Err(format!("{}: {}", e.kind.as_str(), e.detail)),
        }
    }

    fn rng_for(&self, request: &GenerationRequest) -> ChaCha8Rng {
        let digest = Sha256::new()
            .chain_update(self.config.seed.to_le_bytes())
            .chain_update(request.seed.map_or([0xff; 9], |s| {
                let mut b = [0u8; 9];
                b[1..].copy_from_slice(&s.to_le_bytes());
                b
            }))
            .chain_update(request.prompt_text.as_bytes())
            .finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn solve(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let spec = match prompt.find(API_DOC_HEADER).map(|i| parse_api_document(&prompt[i..])) {
            Some(Ok(spec)) => spec,
            _ => self.platform_in(prompt)?.clone(),
        };
        let task = self.task_text(prompt)?;
        let solution = canonical_solution(&spec, task);
        let mut ast = solution.ast;
        if rng.gen::<f64>() < self.config.error_rate {
            let first = *self.config.error_kinds.choose(rng)?;
            let order = std::iter::once(first)
                .chain(self.config.error_kinds.iter().copied())
                .chain([InjectedError::UnknownMethod]);
            for kind in order {
                if let Some(bad) = inject_error(&spec, &ast, kind, rng) {
                    ast = bad;
                    break;
                }
            }
        }
        Some(self.template.outcome_block(&solution.plan, &render_script(&ast)))
    }

    fn logit(&self, valid: bool, continuation: &str, noise: f64) -> f64 {
        let base = match (normalize_answer(continuation).as_str(), valid) {
            ("yes", true) | ("no", false) => 0.0,
            ("yes", false) | ("no", true) => -VERDICT_GAP,
            _ => OTHER_LOGIT,
        };
        base + noise
    }

    fn prefix_hasher(&self) -> Sha256 {
        Sha256::new().chain_update(self.config.seed.to_le_bytes())
    }

    /// Noise in `(-NOISE_BOUND, NOISE_BOUND)` from a hasher that has seen the full prefix.
    fn noise(hasher: &Sha256, continuation: &str) -> f64 {
        let digest = hasher
            .clone()
            .chain_update([0xff])
            .chain_update(continuation.as_bytes())
            .chain_update((continuation.len() as u64).to_le_bytes())
            .finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let unit = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * unit - 1.0) * NOISE_BOUND
    }

    fn scores(&self, text: &str, hasher: &Sha256, continuations: &[String]) -> Result<ContinuationScores, ProviderError> {
        let valid = self.verdict(text).is_ok();
        ContinuationScores::new(
            continuations
                .iter()
                .map(|c| (c.clone(), self.logit(valid, c, Self::noise(hasher, c))))
                .collect(),
        )
    }
}

/// Cut `text` at the first stop sequence and at `max_tokens` whitespace-separated tokens.
fn finish(mut text: String, request: &GenerationRequest) -> GenerationResult {
    if let Some(cut) = request.stop_sequences.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min() {
        text.truncate(cut);
    }
    let words: Vec<(usize, &str)> = text.split_whitespace().map(|w| (w.as_ptr() as usize - text.as_ptr() as usize, w)).collect();
    if words.len() > request.max_tokens {
        let (start, word) = words[request.max_tokens - 1];
        text.truncate(start + word.len());
        return GenerationResult {
            text,
            finish_reason: FinishReason::Length,
        };
    }
    GenerationResult {
        text,
        finish_reason: FinishReason::Stop,
    }
}

impl LanguageModel for MockProvider {
    fn describe(&self) -> String {
        let kinds: Vec<String> = self.config.error_kinds.iter().map(|k| format!("{k:?}")).collect();
        format!(
            "mock(seed={}, error_rate={}, error_kinds=[{}])",
            self.config.seed,
            self.config.error_rate,
            kinds.join(",")
        )
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        request.validate()?;
        let prompt = &request.prompt_text;
        if prompt.trim_end().ends_with(self.template.judgment_suffix.trim_end()) {
            let analysis = match self.verdict(prompt) {
                Ok(()) => "The script calls every stage after its prerequisites with declared parameters.".to_string(),
                Err(why) => format!("The script would fail: {why}."),
            };
            return Ok(finish(analysis, request));
        }
        let mut rng = self.rng_for(request);
        Ok(match self.solve(prompt, &mut rng) {
            Some(text) => finish(text, request),
            None => GenerationResult {
                text: String::new(),
                finish_reason: FinishReason::ProviderError,
            },
        })
    }

    fn score_continuations(&self, prompt_prefix: &str, continuations: &[String]) -> Result<ContinuationScores, ProviderError> {
        check_continuations(continuations)?;
        let hasher = self.prefix_hasher().chain_update(prompt_prefix.as_bytes());
        self.scores(prompt_prefix, &hasher, continuations)
    }

    /// Hashes the shared prefix once and forks the hasher per block.
    fn batch_score_shared_prefix(
        &self,
        shared_prefix: &str,
        candidate_blocks: &[String],
        continuations: &[String],
    ) -> Result<Vec<ContinuationScores>, ProviderError> {
        if candidate_blocks.is_empty() {
            return Err(ProviderError::InvalidRequest("no candidate blocks".into()));
        }
        check_continuations(continuations)?;
        let shared = self.prefix_hasher().chain_update(shared_prefix.as_bytes());
        candidate_blocks
            .iter()
            .map(|block| {
                let hasher = shared.clone().chain_update(block.as_bytes());
                self.scores(&format!("{shared_prefix}{block}"), &hasher, continuations)
            })
            .collect()
    }
}
