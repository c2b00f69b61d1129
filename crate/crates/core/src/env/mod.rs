//! Environment abstraction: a deterministic simulated GUI for desk-scale runs
//! plus a length-prefixed wire adapter for remote environments.
//!
//! Initialization maps a (category, asset pool, seed) configuration onto a
//! non-trivial initial state; stepping applies the app's transition table.
//! With `noise_amplitude` 0 the whole observation sequence is a pure function
//! of the configuration and action sequence.

mod fixtures;
mod remote;
mod sim;

pub use fixtures::{chain_app, dead_region_app, editor_app, hub_app, two_panel_app};
pub use remote::{serve_env_connection, RemoteEnvironment};
pub use sim::{screen_tag, BBox, SimAppSpec, SimEnvironment, Transition, Widget, WidgetKind};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, Observation};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown category '{got}' (environment hosts '{expected}')")]
    UnknownCategory { got: String, expected: String },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("unresolvable asset reference: {0}")]
    Asset(String),
    #[error("sim app spec violation: {0}")]
    Spec(String),
    #[error("environment has not been reset")]
    NotReset,
    #[error("TERMINATE is an engine-level action and cannot be stepped")]
    EngineLevelAction,
    #[error("invalid action: {0}")]
    Action(#[from] crate::model::ModelError),
    #[error("transport failure: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

impl Default for RenderSpec {
    /// 64x64 grayscale keeps desk-scale runs fast; the RMS replay gate is
    /// resolution independent.
    fn default() -> Self {
        RenderSpec { width: 64, height: 64, channels: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Image,
    Document,
    Account,
    Configuration,
}

/// One entry of the pre-configured asset pool. The payload is an opaque
/// reference; the simulator realizes injection by pre-seeding a state
/// variable named after the asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub name: String,
    pub kind: AssetKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub category: String,
    #[serde(default)]
    pub asset_manifest: Vec<AssetEntry>,
    pub seed: u64,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub render: RenderSpec,
}

impl EnvironmentConfig {
    pub fn new(category: impl Into<String>, seed: u64) -> Self {
        EnvironmentConfig {
            category: category.into(),
            asset_manifest: Vec::new(),
            seed,
            noise_amplitude: 0.0,
            render: RenderSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.render.width == 0 || self.render.height == 0 {
            return Err(EnvError::Config("render dimensions must be positive".into()));
        }
        if !matches!(self.render.channels, 1 | 3) {
            return Err(EnvError::Config("channels must be 1 or 3".into()));
        }
        if self.noise_amplitude.is_nan() || self.noise_amplitude < 0.0 {
            return Err(EnvError::Config("noise_amplitude must be >= 0".into()));
        }
        if self.noise_amplitude > 100.0 {
            return Err(EnvError::Config("noise_amplitude above 100 is not supported".into()));
        }
        Ok(())
    }
}

/// A steppable GUI environment. One instance is exclusively owned by one
/// worker at a time; instances are cheap to construct.
pub trait Environment: Send {
    fn reset(&mut self, config: &EnvironmentConfig) -> Result<Observation, EnvError>;

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError>;

    /// Current state re-rendered with seeded per-pixel perturbation when the
    /// active config has `noise_amplitude > 0`; the clean render otherwise.
    fn render_noisy(&mut self, step_index: u64) -> Result<Observation, EnvError>;
}
