//! Platform specs, bench suites, demo databases and the prompt template that
//! ship with the crate.

use crate::bench::Suite;
use crate::demo_store::DemoStore;
use crate::simulator::PlatformSpec;

pub const OPENROAD_LIKE_SPEC: &str = include_str!("../data/openroad_like.json");
pub const IEDA_LIKE_SPEC: &str = include_str!("../data/ieda_like.json");
pub const OPENROAD_LIKE_DEMOS: &str = include_str!("../data/openroad_like_demos.jsonl");
pub const IEDA_LIKE_DEMOS: &str = include_str!("../data/ieda_like_demos.jsonl");
pub const OPENROAD_LIKE_BENCH: &str = include_str!("../data/openroad_like_bench.json");
pub const IEDA_LIKE_BENCH: &str = include_str!("../data/ieda_like_bench.json");

pub const DEFAULT_PLATFORM: &str = "openroad_like";

pub fn openroad_like() -> PlatformSpec {
    PlatformSpec::from_json(OPENROAD_LIKE_SPEC).expect("bundled openroad_like spec is valid")
}

pub fn ieda_like() -> PlatformSpec {
    PlatformSpec::from_json(IEDA_LIKE_SPEC).expect("bundled ieda_like spec is valid")
}

/// Every bundled platform, keyed by platform id.
pub fn platforms() -> Vec<PlatformSpec> {
    vec![openroad_like(), ieda_like()]
}

pub fn platform(platform_id: &str) -> Option<PlatformSpec> {
    platforms().into_iter().find(|p| p.platform_id == platform_id)
}

/// Demo database covering every bundled platform.
pub fn demo_store() -> DemoStore {
    let mut store = DemoStore::from_jsonl(OPENROAD_LIKE_DEMOS).expect("bundled openroad_like demos are valid");
    for demo in DemoStore::from_jsonl(IEDA_LIKE_DEMOS).expect("bundled ieda_like demos are valid").demos() {
        store.insert(demo.clone()).expect("bundled demo ids are unique");
    }
    store
}

/// The 50-task suite of a bundled platform.
pub fn suite(platform_id: &str) -> Option<Suite> {
    let text = match platform_id {
        "openroad_like" => OPENROAD_LIKE_BENCH,
        "ieda_like" => IEDA_LIKE_BENCH,
        _ => return None,
    };
    let suite = Suite::parse(text, &platforms()).expect("bundled suite is valid");
    suite.check_bundled_split().expect("bundled suite keeps its category split");
    Some(suite)
}
