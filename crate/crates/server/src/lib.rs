//! Teleoperation service, wire protocol and headless benchmark for the
//! tabletop grasping simulator.

pub mod bench;
pub mod live;
pub mod protocol;

use anyhow::{Context, Result};
use riso_core::{scenarios, Scenario};

/// Resolves `canonical`, `study` (laid out by `seed`) or a scenario file.
pub fn load_scenario(name: &str, seed: u64) -> Result<Scenario> {
    let s = match name {
        "canonical" => scenarios::canonical(),
        "study" => scenarios::study(seed),
        path => Scenario::load(path).with_context(|| format!("loading {path}"))?,
    };
    s.validate().with_context(|| format!("scenario {name}"))?;
    Ok(s)
}

/// Seed from `SIM_SEED` when set, else `fallback`.
pub fn env_seed(fallback: u64) -> Result<u64> {
    match std::env::var("SIM_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("SIM_SEED={v}")),
        Err(_) => Ok(fallback),
    }
}
