//! TOML configuration files. Every key is optional and falls back to its
//! default, so a file only needs the values it changes.

use std::path::Path;

use aimsight_core::experiment::ExperimentPlan;
use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::realtime::SessionConfig;

pub fn from_toml<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    Ok(toml::from_str(text)?)
}

pub fn to_toml<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(toml::to_string_pretty(value)?)
}

fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_plan(path: &Path) -> anyhow::Result<ExperimentPlan> {
    let plan: ExperimentPlan = load(path)?;
    plan.validate()?;
    Ok(plan)
}

pub fn load_session(path: &Path) -> anyhow::Result<SessionConfig> {
    let config: SessionConfig = load(path)?;
    config.validate()?;
    Ok(config)
}
