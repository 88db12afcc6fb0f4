use flowagent_core::agent_graph::{AgentId, EdaTask, Outcome};
use flowagent_core::bundled;
use flowagent_core::divergent::{parse_outcome, PlanSteps};
use flowagent_core::flow_script::parse_script;
use flowagent_core::llm_provider::{
    ContinuationScores, GenerationRequest, InjectedError, LanguageModel, MockProvider, MockProviderConfig,
    ProviderError,
};
use flowagent_core::prompt_factory::{judgment_parts, render_few_shot, render_zero_shot, sample_demo_groups, PromptTemplate};
use flowagent_core::simulator::{execute, render_api_document, ExecErrorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mock(seed: u64, error_rate: f64) -> MockProvider {
    MockProvider::new(MockProviderConfig::new(seed, error_rate)).unwrap()
}

fn few_shot_prompt(task: &EdaTask, seed: u64) -> String {
    let spec = bundled::platform(&task.platform_id).unwrap();
    let store = bundled::demo_store();
    let pool: Vec<_> = store.demos().iter().filter(|d| d.platform == task.platform_id).take(6).cloned().collect();
    let group = sample_demo_groups(&pool, 2, 1, seed).unwrap().remove(0);
    render_few_shot(&PromptTemplate::default(), &render_api_document(&spec), &group, task)
        .unwrap()
        .text
}

fn yes_no() -> Vec<String> {
    vec!["yes".to_string(), "no".to_string()]
}

#[test]
fn generation_is_deterministic() {
    let task = EdaTask::new("Run the full flow with core utilization 0.6, then evaluate the result.", "openroad_like");
    let prompt = few_shot_prompt(&task, 1);
    let m = mock(4, 0.5);
    let a = m.generate(&GenerationRequest::new(prompt.clone())).unwrap();
    let b = m.generate(&GenerationRequest::new(prompt.clone())).unwrap();
    assert_eq!(a, b);
    let other = mock(4, 0.5);
    assert_eq!(other.generate(&GenerationRequest::new(prompt)).unwrap(), a);
}

#[test]
fn perfect_mock_writes_runnable_scripts_for_every_bundled_task() {
    let template = PromptTemplate::default();
    let m = mock(0, 0.0);
    for id in ["openroad_like", "ieda_like"] {
        let spec = bundled::platform(id).unwrap();
        for t in bundled::suite(id).unwrap().tasks {
            let prompt = few_shot_prompt(&t.task(), 0);
            let out = m.generate(&GenerationRequest::new(prompt)).unwrap();
            assert!(out.text.contains(&template.plan_marker) && out.text.contains(&template.script_marker));
            let (plan, script) = parse_outcome(&out.text, &template).unwrap();
            assert!(plan.len() >= 2);
            let report = execute(&parse_script(&script).unwrap(), &spec, 0);
            assert!(report.success, "{}: {:?}", t.id, report.error);
        }
    }
}

#[test]
fn zero_shot_prompts_are_understood_too() {
    let task = EdaTask::new("Sweep target density over [0.6, 0.8], then evaluate the result.", "ieda_like");
    let prompt = render_zero_shot(&PromptTemplate::default(), &render_api_document(&bundled::ieda_like()), &task).unwrap();
    let out = mock(0, 0.0).generate(&GenerationRequest::new(prompt.text)).unwrap();
    let (_, script) = parse_outcome(&out.text, &PromptTemplate::default()).unwrap();
    assert!(script.contains("for target_density in [0.6, 0.8]:"), "{script}");
}

#[test]
fn wrong_stage_param_injection() {
    let m = MockProvider::new(MockProviderConfig {
        seed: 2,
        error_rate: 1.0,
        error_kinds: vec![InjectedError::WrongStageParam],
    })
    .unwrap();
    let spec = bundled::openroad_like();
    for t in bundled::suite("openroad_like").unwrap().tasks {
        let out = m.generate(&GenerationRequest::new(few_shot_prompt(&t.task(), 3))).unwrap();
        let (_, script) = parse_outcome(&out.text, &PromptTemplate::default()).unwrap();
        let report = execute(&parse_script(&script).unwrap(), &spec, 0);
        let err = report.error.expect("injected error");
        assert_eq!(err.kind, ExecErrorKind::UnknownParameter, "{}: {script}", t.id);
        // The offending parameter belongs to some other method of the platform.
        let param = err.param.unwrap();
        let method = err.method.unwrap();
        assert!(spec.method(&method).unwrap().param(&param).is_none());
        assert!(spec.methods.iter().any(|m| m.param(&param).is_some()));
    }
}

#[test]
fn error_rate_is_respected_statistically() {
    let m = mock(8, 0.4);
    let spec = bundled::openroad_like();
    let tasks = bundled::suite("openroad_like").unwrap().tasks;
    let mut failures = 0;
    let mut total = 0;
    for seed in 0..12 {
        for t in &tasks {
            let out = m.generate(&GenerationRequest::new(few_shot_prompt(&t.task(), seed))).unwrap();
            let (_, script) = parse_outcome(&out.text, &PromptTemplate::default()).unwrap();
            failures += usize::from(!execute(&parse_script(&script).unwrap(), &spec, 0).success);
            total += 1;
        }
    }
    let rate = failures as f64 / total as f64;
    // 600 draws: 4 standard deviations is about 0.08.
    assert!((rate - 0.4).abs() < 0.08, "observed {rate}");
}

fn judgment(script: &str) -> (String, String) {
    let task = EdaTask::new("Run the full flow with default parameters.", "openroad_like");
    let outcome = Outcome::new(
        AgentId::new("a"),
        None,
        PlanSteps::new(vec!["run".into(), "check".into()]).unwrap(),
        script,
    )
    .unwrap();
    let parts = judgment_parts(&PromptTemplate::default(), &task, &outcome);
    (parts.shared_prefix, parts.candidate_block)
}

const VALID: &str = "chateda.run_synthesis()\nchateda.floorplan()";
const INVALID: &str = "chateda.run_synthesis()\nchateda.global_route(macro_place_channel=20)";

#[test]
fn scorer_follows_the_simulator() {
    let m = mock(0, 0.0);
    for seed in 0..20 {
        let m = mock(seed, 0.0);
        let (p, b) = judgment(VALID);
        let s = m.score_continuations(&format!("{p}{b}"), &yes_no()).unwrap();
        assert!(s.get("yes").unwrap() > s.get("no").unwrap());
        let (p, b) = judgment(INVALID);
        let s = m.score_continuations(&format!("{p}{b}"), &yes_no()).unwrap();
        assert!(s.get("yes").unwrap() < s.get("no").unwrap());
    }
    let (p, b) = judgment(VALID);
    let one = m.score_continuations(&format!("{p}{b}"), &["yes".to_string()]).unwrap();
    assert_eq!(one.len(), 1);
    let spaced = m.score_continuations(&format!("{p}{b}"), &[" Yes".to_string(), "maybe".to_string()]).unwrap();
    assert!(spaced.entries()[0].1 > spaced.entries()[1].1);
    assert!(matches!(m.score_continuations("x", &[]), Err(ProviderError::InvalidRequest(_))));
    assert!(matches!(
        m.score_continuations("x", &["yes".to_string(), "yes".to_string()]),
        Err(ProviderError::InvalidRequest(_))
    ));
}

#[test]
fn batch_equals_per_call() {
    let m = mock(3, 0.0);
    let (prefix, b1) = judgment(VALID);
    let (_, b2) = judgment(INVALID);
    let (_, b3) = judgment("chateda.placement()");
    let blocks = vec![b2.clone(), b1.clone(), b3.clone()];
    let batch = m.batch_score_shared_prefix(&prefix, &blocks, &yes_no()).unwrap();
    let serial: Vec<ContinuationScores> = blocks
        .iter()
        .map(|b| m.score_continuations(&format!("{prefix}{b}"), &yes_no()).unwrap())
        .collect();
    assert_eq!(batch, serial);
    assert!(batch[1].get("yes").unwrap() > batch[0].get("yes").unwrap());
    assert_eq!(m.batch_score_shared_prefix(&prefix, &blocks[..1], &yes_no()).unwrap().len(), 1);
    assert!(m.batch_score_shared_prefix(&prefix, &[], &yes_no()).is_err());
}

#[test]
fn random_batches_match_serial_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scripts = [VALID, INVALID, "chateda.placement()", "chateda.run_synthesis()\nchateda.floorplan(core_utilization=0.6)"];
    for case in 0..40 {
        let m = mock(rng.gen(), 0.0);
        let n = rng.gen_range(1..=4);
        let (prefix, _) = judgment(VALID);
        let blocks: Vec<String> = (0..n).map(|_| judgment(scripts[rng.gen_range(0..scripts.len())]).1).collect();
        let batch = m.batch_score_shared_prefix(&prefix, &blocks, &yes_no()).unwrap();
        for (b, got) in blocks.iter().zip(&batch) {
            assert_eq!(&m.score_continuations(&format!("{prefix}{b}"), &yes_no()).unwrap(), got, "case {case}");
        }
    }
}

#[test]
fn concurrent_generation_matches_serial() {
    let m = mock(6, 0.5);
    let tasks = bundled::suite("ieda_like").unwrap().tasks;
    let prompts: Vec<String> = tasks.iter().take(12).map(|t| few_shot_prompt(&t.task(), 2)).collect();
    let serial: Vec<_> = prompts.iter().map(|p| m.generate(&GenerationRequest::new(p.clone())).unwrap()).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = prompts
            .iter()
            .map(|p| s.spawn(|| m.generate(&GenerationRequest::new(p.clone())).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

#[test]
fn request_validation_and_limits() {
    let m = mock(0, 0.0);
    assert!(matches!(m.generate(&GenerationRequest::new("  ")), Err(ProviderError::InvalidRequest(_))));
    let mut r = GenerationRequest::new("x");
    r.temperature = f64::NAN;
    assert!(m.generate(&r).is_err());
    assert!(MockProvider::new(MockProviderConfig::new(0, 1.5)).is_err());

    let task = EdaTask::new("Run the full flow with default parameters, then evaluate the result.", "openroad_like");
    let mut r = GenerationRequest::new(few_shot_prompt(&task, 0));
    r.max_tokens = 3;
    let out = m.generate(&r).unwrap();
    assert_eq!(out.finish_reason, flowagent_core::llm_provider::FinishReason::Length);
    assert_eq!(out.text.split_whitespace().count(), 3);
    r.max_tokens = 1024;
    r.stop_sequences = vec!["### SCRIPT".into()];
    let out = m.generate(&r).unwrap();
    assert!(!out.text.contains("### SCRIPT") && out.text.starts_with("### PLAN"));

    // A prompt with no task section yields no text.
    let out = m.generate(&GenerationRequest::new("hello there")).unwrap();
    assert_eq!(out.finish_reason, flowagent_core::llm_provider::FinishReason::ProviderError);
    assert!(out.text.is_empty());
}
