//! Rebuild the bundled demo databases from the demo task lists in `tools/`.
//!
//! Each demo pairs a task with the canonical plan and script for it.

use flowagent_core::bundled;
use flowagent_core::demo_store::{DemoInstance, DemoStore};
use flowagent_core::flow_script::render_script;
use flowagent_core::llm_provider::canonical_solution;
use flowagent_core::simulator::execute;
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    for spec in bundled::platforms() {
        let id = &spec.platform_id;
        let tasks = std::fs::read_to_string(root.join(format!("../../tools/{id}_demo_tasks.txt"))).expect("demo task list");
        let mut store = DemoStore::new();
        for (i, task) in tasks.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let solution = canonical_solution(&spec, task);
            assert!(execute(&solution.ast, &spec, 0).success, "demo {i} does not run: {task}");
            store
                .insert(DemoInstance {
                    id: format!("{id}-demo-{:02}", i + 1),
                    task: task.to_string(),
                    plan: solution.plan,
                    script: render_script(&solution.ast),
                    platform: id.clone(),
                })
                .expect("valid demo");
        }
        let out = root.join(format!("data/{id}_demos.jsonl"));
        std::fs::write(&out, store.to_jsonl()).expect("write demos");
        println!("{}: {} demos", out.display(), store.len());
    }
}
