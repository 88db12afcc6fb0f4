//! `flowagent`: run a task, run a bench, manage the demo database, or judge
//! candidate scripts.
//!
//! Exit codes: 0 success, 1 task or judgment failure, 2 configuration or
//! parse error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowagent_core::agent_graph::{AgentId, AgentRole, AgentSpec, EdaTask, GraphConfig, Outcome};
use flowagent_core::bench::{load_suite, run_suite, BenchSetup, Suite};
use flowagent_core::bundled;
use flowagent_core::decision::{decide_outcomes, DecisionConfig};
use flowagent_core::demo_store::{DemoInstance, DemoStore, HashingEmbedder};
use flowagent_core::divergent::{DivergentConfig, PlanSteps};
use flowagent_core::flow_script::{parse_script, render_script};
use flowagent_core::llm_provider::{
    HttpProvider, HttpProviderConfig, LanguageModel, MockProvider, MockProviderConfig, ProviderRegistry,
};
use flowagent_core::pipeline::{Mode, System};
use flowagent_core::prompt_factory::PromptTemplate;
use flowagent_core::simulator::{load_platform_spec, PlatformSpec};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(name = "flowagent", version, about = "Multi-agent EDA flow script generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// System configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Provider backing the agents when the config does not name one.
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// Endpoint of the HTTP provider.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Seed for demo sampling, the mock provider and the metric.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Platform spec file, or the id of a bundled platform.
    #[arg(long, global = true)]
    platform: Option<String>,
    /// Demo database (JSON lines).
    #[arg(long, global = true)]
    demos: Option<PathBuf>,
    /// Prompt template file.
    #[arg(long, global = true)]
    template: Option<PathBuf>,
    /// Number of divergent agents.
    #[arg(long, global = true)]
    agents: Option<usize>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    /// Also write the result as JSON to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run one agent without the decision maker.
    #[arg(long, global = true)]
    single: bool,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Probability that the mock provider writes a faulty script.
    #[arg(long, global = true)]
    error_rate: Option<f64>,
    /// Print the rendered prompts as well.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ProviderKind {
    Mock,
    Http,
}

impl ProviderKind {
    fn name(self) -> &'static str {
        match self {
            ProviderKind::Mock => "mock",
            ProviderKind::Http => "http",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate, select and execute a script for one task.
    Run {
        #[arg(long, conflicts_with = "task_file", required_unless_present = "task_file")]
        task: Option<String>,
        #[arg(long)]
        task_file: Option<PathBuf>,
    },
    /// Run a benchmark suite and print the report.
    Bench {
        /// Suite file; defaults to the bundled suite of the platform.
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Manage the demo database.
    Demos {
        #[command(subcommand)]
        action: DemosAction,
    },
    /// Score candidate scripts for a task and pick one.
    Judge {
        task_file: PathBuf,
        #[arg(required = true, num_args = 1..)]
        candidates: Vec<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DemosAction {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        task: String,
        /// One plan step; repeat for more.
        #[arg(long = "plan", required = true)]
        plan: Vec<String>,
        #[arg(long)]
        script_file: PathBuf,
    },
    List,
    Search {
        #[arg(long)]
        task: String,
        #[arg(short, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Debug)]
enum CliError {
    /// Bad flags, files or configuration.
    Config(String),
    /// The task or judgment itself failed.
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ProviderSpec {
    Mock(MockProviderConfig),
    Http(HttpProviderConfig),
}

/// Shape of the `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    agents: Vec<AgentSpec>,
    edges: Vec<(AgentId, AgentId)>,
    providers: BTreeMap<String, ProviderSpec>,
    divergent: Option<DivergentConfig>,
    decision: Option<DecisionConfig>,
    platform: Option<String>,
    demos: Option<PathBuf>,
    template: Option<PathBuf>,
    metric_seed: Option<u64>,
}

/// Everything a command needs, after merging the config file and flags.
struct Resolved {
    graph: GraphConfig,
    divergent: DivergentConfig,
    decision: DecisionConfig,
    spec: PlatformSpec,
    demos: Option<PathBuf>,
    template: PromptTemplate,
    providers: ProviderRegistry,
    metric_seed: u64,
    mode: Mode,
}

impl Resolved {
    fn from_flags(c: &Common) -> Result<Self, CliError> {
        let file = match &c.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let spec = match c.platform.as_ref().or(file.platform.as_ref()) {
            Some(p) => load_platform(p)?,
            None => bundled::platform(bundled::DEFAULT_PLATFORM).expect("bundled platform"),
        };
        let template = match c.template.as_ref().or(file.template.as_ref()) {
            Some(p) => PromptTemplate::load(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => PromptTemplate::default(),
        };

        let mut divergent = file.divergent.clone().unwrap_or_default();
        if let Some(seed) = c.seed {
            divergent.seed = seed;
        }
        if let Some(k) = c.top_k {
            divergent.top_k = k;
        }
        if let Some(n) = c.group_size {
            divergent.group_size = n;
        }
        divergent.validate().map_err(config_err)?;

        let selected = c.provider.unwrap_or(ProviderKind::Mock).name();
        let graph = match c.agents {
            None if !file.agents.is_empty() => GraphConfig {
                agents: file.agents.clone(),
                edges: file.edges.clone(),
            },
            agents => GraphConfig::standard(agents.unwrap_or(3), selected),
        };

        flowagent_core::agent_graph::AgentGraph::build(&graph).map_err(config_err)?;

        let mut specs = file.providers.clone();
        let entry = specs.entry(selected.to_string()).or_insert_with(|| match c.provider.unwrap_or(ProviderKind::Mock) {
            ProviderKind::Mock => ProviderSpec::Mock(MockProviderConfig::default()),
            ProviderKind::Http => ProviderSpec::Http(HttpProviderConfig::new("")),
        });
        match entry {
            ProviderSpec::Mock(m) => {
                if let Some(seed) = c.seed {
                    m.seed = seed;
                }
                if let Some(rate) = c.error_rate {
                    m.error_rate = rate;
                }
            }
            ProviderSpec::Http(h) => {
                if let Some(url) = &c.endpoint {
                    h.endpoint = url.clone();
                }
                if c.error_rate.is_some() {
                    return Err(config_err("--error-rate applies to the mock provider only"));
                }
            }
        }
        let mut providers = ProviderRegistry::new();
        for (name, spec_entry) in specs {
            let provider: Arc<dyn LanguageModel> = match spec_entry {
                ProviderSpec::Mock(m) => Arc::new(
                    MockProvider::new(m)
                        .map_err(|e| config_err(format!("provider `{name}`: {e}")))?
                        .with_template(template.clone())
                        .with_platform(spec.clone()),
                ),
                ProviderSpec::Http(h) => {
                    Arc::new(HttpProvider::new(h).map_err(|e| config_err(format!("provider `{name}`: {e}")))?)
                }
            };
            providers.insert(name, provider);
        }
        for agent in &graph.agents {
            if providers.get(&agent.provider).is_none() {
                return Err(config_err(format!("agent `{}` names unknown provider `{}`", agent.id, agent.provider)));
            }
        }

        let demos = c.demos.clone().or(file.demos.clone());
        let mode = match (c.single, c.mode) {
            (true, Some(ModeArg::Multi)) => return Err(config_err("--single contradicts --mode multi")),
            (true, _) | (false, Some(ModeArg::Single)) => Mode::SingleAgent,
            _ => Mode::MultiAgent,
        };
        Ok(Self {
            graph,
            divergent,
            decision: file.decision.clone().unwrap_or_default(),
            spec,
            demos,
            template,
            providers,
            metric_seed: c.seed.or(file.metric_seed).unwrap_or(0),
            mode,
        })
    }

    /// The demo database; the bundled one when no path is configured.
    fn store(&self) -> Result<DemoStore, CliError> {
        match &self.demos {
            Some(path) => {
                if !path.exists() {
                    return Err(config_err(format!("{}: no such demo database", path.display())));
                }
                DemoStore::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
            }
            None => Ok(bundled::demo_store()),
        }
    }
}

fn load_platform(arg: &str) -> Result<PlatformSpec, CliError> {
    if !Path::new(arg).exists() {
        if let Some(spec) = bundled::platform(arg) {
            return Ok(spec);
        }
    }
    load_platform_spec(arg).map_err(|e| config_err(format!("{arg}: {e}")))
}

fn write_out(path: &Option<PathBuf>, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(value).expect("json value serializes");
        std::fs::write(path, text + "\n").map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn cmd_run(common: &Common, task: Option<String>, task_file: Option<PathBuf>) -> Result<(), CliError> {
    let r = Resolved::from_flags(common)?;
    let text = match (task, task_file) {
        (Some(t), _) => t,
        (None, Some(path)) => read_text(&path)?.trim().to_string(),
        (None, None) => unreachable!("clap requires one of them"),
    };
    if text.trim().is_empty() {
        return Err(config_err("empty task"));
    }
    let task = EdaTask::new(text, r.spec.platform_id.clone());
    let store = r.store()?;
    let embedder = HashingEmbedder::default();
    let system = System {
        graph: r.graph.clone(),
        divergent: r.divergent.clone(),
        decision: r.decision.clone(),
        store: &store,
        embedder: &embedder,
        template: &r.template,
        spec: &r.spec,
        providers: &r.providers,
        metric_seed: r.metric_seed,
    };
    if common.verbose {
        let (_, config) = system.graph_for(r.mode).map_err(config_err)?;
        let ctx = flowagent_core::divergent::DivergentContext {
            store: &store,
            embedder: &embedder,
            template: &r.template,
            spec: &r.spec,
            providers: &r.providers,
        };
        if let Ok((prompts, _)) = flowagent_core::divergent::build_prompts(&task, &config, &ctx) {
            for (i, p) in prompts.iter().enumerate() {
                println!("=== prompt {} ===\n{}", i + 1, p.text);
            }
        }
    }
    let run = system.run(&task, r.mode).map_err(|e| CliError::Failure(e.to_string()))?;

    for f in &run.failures {
        println!("agent {} dropped: {}", f.agent_id, f.reason);
    }
    if let Some(d) = &run.decision {
        println!("== scores ==");
        for (i, p) in &d.scores {
            println!("candidate {i} ({}): {p:.6}", run.candidates[*i].agent_id);
        }
        println!("chosen: {}", d.chosen);
    }
    println!("== plan ==");
    for (i, step) in run.chosen.plan.steps().iter().enumerate() {
        println!("{}. {step}", i + 1);
    }
    println!("== script ==");
    println!("{}", render_script(run.chosen.script.ast()));
    println!("== report ==");
    println!("{}", serde_json::to_string_pretty(&run.report).expect("report serializes"));

    write_out(
        &common.out,
        &serde_json::json!({
            "task": task,
            "mode": format!("{:?}", r.mode),
            "candidates": run.candidates,
            "decision": run.decision,
            "chosen": run.chosen,
            "report": run.report,
        }),
    )?;
    if run.report.success {
        Ok(())
    } else {
        let why = run.report.error.map(|e| format!("{}: {}", e.kind, e.detail)).unwrap_or_default();
        Err(CliError::Failure(format!("script failed: {why}")))
    }
}

fn cmd_bench(common: &Common, suite_path: Option<PathBuf>) -> Result<(), CliError> {
    let r = Resolved::from_flags(common)?;
    let mut platforms = bundled::platforms();
    platforms.retain(|p| p.platform_id != r.spec.platform_id);
    platforms.push(r.spec.clone());
    let suite: Suite = match suite_path {
        Some(path) => load_suite(&path, &platforms).map_err(|e| config_err(format!("{}: {e}", path.display())))?,
        None => bundled::suite(&r.spec.platform_id)
            .ok_or_else(|| config_err(format!("no bundled suite for `{}`; pass --suite", r.spec.platform_id)))?,
    };
    let store = r.store()?;
    let embedder = HashingEmbedder::default();
    let setup = BenchSetup {
        graph: r.graph.clone(),
        divergent: r.divergent.clone(),
        decision: r.decision.clone(),
        store: &store,
        embedder: &embedder,
        template: &r.template,
        platforms: &platforms,
        providers: &r.providers,
        metric_seed: r.metric_seed,
    };
    let report = run_suite(&suite, r.mode, &setup);
    let value = serde_json::to_value(&report).expect("report serializes");
    println!("{}", serde_json::to_string_pretty(&value).expect("json value serializes"));
    write_out(&common.out, &value)
}

fn cmd_demos(common: &Common, action: DemosAction) -> Result<(), CliError> {
    let r = Resolved::from_flags(common)?;
    match action {
        DemosAction::Add {
            id,
            task,
            plan,
            script_file,
        } => {
            let path = r.demos.clone().ok_or_else(|| config_err("demos add needs --demos PATH"))?;
            // A new database file is created on first add.
            let mut store = DemoStore::load(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            let script = read_text(&script_file)?;
            let ast = parse_script(&script).map_err(|e| CliError::Failure(format!("script does not parse: {e}")))?;
            let demo = DemoInstance {
                id,
                task,
                plan,
                script: render_script(&ast),
                platform: r.spec.platform_id.clone(),
            };
            store.append(&path, demo).map_err(|e| CliError::Failure(e.to_string()))?;
            println!("added; {} demos", store.len());
        }
        DemosAction::List => {
            for d in r.store()?.demos() {
                println!("{}\t{}\t{}", d.id, d.platform, d.task);
            }
        }
        DemosAction::Search { task, k } => {
            if k == 0 {
                return Err(config_err("k must be positive"));
            }
            let store = r.store()?;
            let embedder = HashingEmbedder::default();
            let platform = common.platform.as_ref().map(|_| r.spec.platform_id.as_str());
            let hits = store
                .search(&embedder, &task, platform, k)
                .map_err(|e| CliError::Failure(e.to_string()))?;
            for (demo, score) in hits {
                println!("{}\t{score:.6}", demo.id);
            }
        }
    }
    Ok(())
}

fn cmd_judge(common: &Common, task_file: PathBuf, candidates: Vec<PathBuf>) -> Result<(), CliError> {
    let r = Resolved::from_flags(common)?;
    let task = EdaTask::new(read_text(&task_file)?.trim(), r.spec.platform_id.clone());
    // Candidates come without plans, so the judgment shows only the script.
    let template = PromptTemplate {
        judgment_includes_plan: false,
        ..r.template.clone()
    };
    let placeholder = PlanSteps::new(vec!["(not given)".to_string()]).expect("non-empty plan");
    let outcomes = candidates
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let script = read_text(path)?;
            Outcome::new(AgentId::new(format!("candidate-{i}")), None, placeholder.clone(), &script)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let decider = r
        .graph
        .agents
        .iter()
        .find(|a| a.role == AgentRole::DecisionMaking)
        .ok_or_else(|| config_err("no decision-making agent configured"))?;
    let provider = r.providers.get(&decider.provider).expect("checked when resolving");
    let decision = decide_outcomes(&task, &outcomes, provider, &template, &r.decision)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    for (i, p) in &decision.scores {
        println!("candidate {i} ({}): {p:.6}", candidates[*i].display());
    }
    println!("chosen: {}", decision.chosen);
    write_out(&common.out, &serde_json::to_value(&decision).expect("decision serializes"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { task, task_file } => cmd_run(&cli.common, task, task_file),
        Command::Bench { suite } => cmd_bench(&cli.common, suite),
        Command::Demos { action } => cmd_demos(&cli.common, action),
        Command::Judge { task_file, candidates } => cmd_judge(&cli.common, task_file, candidates),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Config(msg) | CliError::Failure(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
