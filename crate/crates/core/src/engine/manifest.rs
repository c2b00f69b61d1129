//! Run manifest: the operator-facing description of one exploration run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{AssetEntry, RenderSpec};

use super::{BranchingPolicy, ReplayPolicy};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySection {
    pub max_depth: u32,
    pub phase_bounds: [u32; 2],
    pub phase_widths: [u32; 3],
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = BranchingPolicy::default();
        PolicySection {
            max_depth: p.max_depth,
            phase_bounds: [p.phase_bounds.0, p.phase_bounds.1],
            phase_widths: [p.phase_widths.0, p.phase_widths.1, p.phase_widths.2],
        }
    }
}

impl PolicySection {
    pub fn to_policy(&self) -> BranchingPolicy {
        BranchingPolicy::new(
            self.max_depth,
            (self.phase_bounds[0], self.phase_bounds[1]),
            (self.phase_widths[0], self.phase_widths[1], self.phase_widths[2]),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorySection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub prefix_length: u32,
    pub similarity_threshold: f64,
}

fn default_true() -> bool {
    true
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection { enabled: true, prefix_length: 3, similarity_threshold: 0.8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySection {
    pub epsilon: f64,
    pub max_restore_attempts: u32,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let p = ReplayPolicy::default();
        ReplaySection { epsilon: p.epsilon, max_restore_attempts: p.max_restore_attempts }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopSection {
    pub max_consecutive_failures: u32,
}

impl Default for StopSection {
    fn default() -> Self {
        StopSection { max_consecutive_failures: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub category: String,
    /// Path to a SimAppSpec JSON file; relative paths resolve against the
    /// manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_spec: Option<PathBuf>,
    /// host:port of a remote environment speaking the wire protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_env: Option<String>,
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub n_workers: usize,
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub memory: MemorySection,
    #[serde(default)]
    pub replay: ReplaySection,
    #[serde(default)]
    pub stop: StopSection,
    #[serde(default = "default_persona")]
    pub persona: String,
    /// Remote agent endpoint; the REMOTE_AGENT_URL environment variable
    /// overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_knowledge: Option<String>,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub render: RenderSpec,
    #[serde(default)]
    pub assets: Vec<AssetEntry>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_interval: usize,
}

fn default_workers() -> usize {
    1
}

fn default_trees() -> usize {
    1
}

fn default_persona() -> String {
    "diverse".to_string()
}

fn default_checkpoint() -> usize {
    50
}

impl RunManifest {
    pub fn minimal(category: impl Into<String>, sim_spec: PathBuf, seed: u64) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA_VERSION,
            category: category.into(),
            sim_spec: Some(sim_spec),
            remote_env: None,
            seed: Some(seed),
            n_workers: 1,
            trees: 1,
            policy: PolicySection::default(),
            memory: MemorySection::default(),
            replay: ReplaySection::default(),
            stop: StopSection::default(),
            persona: "diverse".into(),
            agent_endpoint: None,
            world_knowledge: None,
            noise_amplitude: 0.0,
            render: RenderSpec::default(),
            assets: Vec::new(),
            checkpoint_interval: 50,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("manifest parse error: {e}"))
    }

    /// Field-level validation problems; empty when the manifest is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.schema != MANIFEST_SCHEMA_VERSION {
            problems.push(format!(
                "schema: expected version {MANIFEST_SCHEMA_VERSION}, got {}",
                self.schema
            ));
        }
        if self.category.trim().is_empty() {
            problems.push("category: must be nonempty".into());
        }
        if self.seed.is_none() {
            problems.push("seed: required".into());
        }
        if self.sim_spec.is_none() && self.remote_env.is_none() {
            problems.push("sim_spec/remote_env: exactly one environment source is required".into());
        }
        if self.sim_spec.is_some() && self.remote_env.is_some() {
            problems.push("sim_spec/remote_env: provide only one environment source".into());
        }
        if self.n_workers == 0 {
            problems.push("n_workers: must be >= 1".into());
        }
        if self.trees == 0 {
            problems.push("trees: must be >= 1".into());
        }
        if let Err(e) = self.policy.to_policy().validate() {
            problems.push(format!("policy: {e}"));
        }
        if self.memory.prefix_length == 0 {
            problems.push("memory.prefix_length: must be >= 1".into());
        }
        if !(self.memory.similarity_threshold > 0.0 && self.memory.similarity_threshold <= 1.0) {
            problems.push("memory.similarity_threshold: must lie in (0, 1]".into());
        }
        if self.replay.epsilon < 0.0 {
            problems.push("replay.epsilon: must be >= 0".into());
        }
        if self.replay.max_restore_attempts == 0 {
            problems.push("replay.max_restore_attempts: must be >= 1".into());
        }
        if self.stop.max_consecutive_failures == 0 {
            problems.push("stop.max_consecutive_failures: must be >= 1".into());
        }
        if crate::agents::Persona::parse(&self.persona).is_none() && self.agent_endpoint.is_none()
        {
            problems.push(format!(
                "persona: '{}' is not a scripted persona (biased|diverse) and no agent_endpoint is set",
                self.persona
            ));
        }
        if self.noise_amplitude < 0.0 {
            problems.push("noise_amplitude: must be >= 0".into());
        }
        if self.checkpoint_interval == 0 {
            problems.push("checkpoint_interval: must be >= 1".into());
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_validates() {
        let m = RunManifest::minimal("editor", PathBuf::from("app.json"), 7);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn missing_seed_is_a_field_error() {
        let mut m = RunManifest::minimal("editor", PathBuf::from("app.json"), 7);
        m.seed = None;
        let problems = m.validate();
        assert!(problems.iter().any(|p| p.starts_with("seed:")));
    }

    #[test]
    fn manifest_round_trips_with_defaults() {
        let json = r#"{
            "schema": 1,
            "category": "editor",
            "sim_spec": "app.json",
            "seed": 3
        }"#;
        let m: RunManifest = serde_json::from_str(json).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.n_workers, 1);
        assert_eq!(m.policy.max_depth, 20);
        assert_eq!(m.replay.epsilon, 5.0);
        assert!(m.memory.enabled);
        assert_eq!(m.checkpoint_interval, 50);
    }

    #[test]
    fn bad_sections_are_reported_per_field() {
        let mut m = RunManifest::minimal("editor", PathBuf::from("app.json"), 7);
        m.policy.phase_bounds = [9, 3];
        m.memory.similarity_threshold = 2.0;
        m.persona = "chaotic".into();
        let problems = m.validate();
        assert!(problems.iter().any(|p| p.starts_with("policy:")));
        assert!(problems.iter().any(|p| p.starts_with("memory.similarity_threshold:")));
        assert!(problems.iter().any(|p| p.starts_with("persona:")));
    }
}
