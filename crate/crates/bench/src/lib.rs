//! Shared inputs for the benchmarks under `benches/`.

use lease_audit_core::scenario::fixture;
use lease_audit_core::{
    build_pools, default_max_steps, generate, CandidatePools, EpisodeConfig, MatchLevel,
    RewardParams,
};

/// Pools and episode settings for the first department of a built-in fixture.
pub fn fixture_grid(name: &str) -> (CandidatePools, EpisodeConfig) {
    let f = fixture(name).unwrap_or_else(|| panic!("unknown fixture {name}"));
    let (entries, _) = generate(&f.spec).expect("fixture generates");
    let pools = build_pools(&entries, "D01").expect("fixture has D01");
    let (w, h) = pools.dims();
    let cfg = EpisodeConfig {
        level: MatchLevel::Exchange,
        max_steps: default_max_steps(w, h),
        reward_params: RewardParams::default(),
    };
    (pools, cfg)
}
