//! Pluggable interfaces for the five pipeline agents — exploration,
//! verification, summary, evaluation, reasoning — with deterministic scripted
//! implementations for desk-scale runs and an HTTP gateway for remote models.
//!
//! Scripted agents are pure functions of their inputs plus a fixed seed:
//! equal inputs produce byte-equal outputs.

mod remote;
mod scripted;

pub use remote::{RemoteAgentConfig, RemoteAgentGateway};
pub use scripted::{
    Persona, ScriptedEvaluator, ScriptedExplorer, ScriptedReasoner, ScriptedSummarizer,
    ScriptedVerifier,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::SimAppSpec;
use crate::model::{
    ActionKind, ExplorationTuple, Observation, ResultType, Trajectory, VerificationResult,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("trajectory has no successful steps to summarize")]
    EmptySummary,
    #[error("invalid context: {0}")]
    InvalidContext(String),
}

/// Textual component of one executed step, as exposed to agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step_goal: String,
    pub action_kind: ActionKind,
    pub result_type: ResultType,
}

/// Everything the exploration agent sees when proposing candidate edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationContext {
    pub observation: Observation,
    pub history: Vec<HistoryEntry>,
    pub world_knowledge: String,
    /// Step goals already recorded under this (category, depth, history) key.
    pub prefix_memory_view: Vec<String>,
    pub k_max: usize,
}

/// Four 0-3 rubric dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScore {
    pub utility: u8,
    pub efficiency: u8,
    pub consistency: u8,
    pub coherence: u8,
}

impl QualityScore {
    pub fn new(utility: u8, efficiency: u8, consistency: u8, coherence: u8) -> Self {
        let clamp = |v: u8| v.min(3);
        QualityScore {
            utility: clamp(utility),
            efficiency: clamp(efficiency),
            consistency: clamp(consistency),
            coherence: clamp(coherence),
        }
    }

    pub fn total(&self) -> u8 {
        self.utility + self.efficiency + self.consistency + self.coherence
    }

    pub fn min_dimension(&self) -> u8 {
        self.utility.min(self.efficiency).min(self.consistency).min(self.coherence)
    }

    pub fn in_range(&self) -> bool {
        [self.utility, self.efficiency, self.consistency, self.coherence]
            .iter()
            .all(|&v| v <= 3)
    }
}

/// Hindsight reasoning chain: four required sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub observation: String,
    pub progress: String,
    pub plan: String,
    pub impact: String,
}

impl ReasoningChain {
    pub fn is_complete(&self) -> bool {
        ![&self.observation, &self.progress, &self.plan, &self.impact]
            .iter()
            .any(|s| s.trim().is_empty())
    }
}

/// One contiguous span of trajectory steps expressing a single intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSpan {
    pub start: usize,
    /// Inclusive end index.
    pub end: usize,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub global_instruction: String,
    pub sub_spans: Vec<SubSpan>,
}

/// Inputs to hindsight reasoning synthesis for one step.
#[derive(Debug, Clone)]
pub struct ReasoningInput<'a> {
    /// The trajectory's final task instruction.
    pub goal: &'a str,
    pub observation_digest: u64,
    pub tuple: &'a ExplorationTuple,
    pub history: &'a [HistoryEntry],
    /// Step goals of the valid subsequent steps.
    pub future: &'a [String],
}

pub trait ExplorationAgent: Send + Sync {
    /// Synthesizes 1..k_max candidate edges for the current state.
    fn propose(&self, ctx: &ExplorationContext) -> Result<Vec<ExplorationTuple>, AgentError>;
}

pub trait VerificationAgent: Send + Sync {
    /// Judges whether the executed transition matched the tuple's expectation.
    fn verify(
        &self,
        prev: &Observation,
        tuple: &ExplorationTuple,
        actual: &Observation,
    ) -> Result<VerificationResult, AgentError>;
}

pub trait SummaryAgent: Send + Sync {
    fn summarize(&self, trajectory: &Trajectory) -> Result<TaskSummary, AgentError>;
}

pub trait EvaluationAgent: Send + Sync {
    fn evaluate(&self, trajectory: &Trajectory, instruction: &str)
        -> Result<QualityScore, AgentError>;
}

pub trait ReasoningAgent: Send + Sync {
    fn synthesize_reasoning(&self, input: &ReasoningInput<'_>)
        -> Result<ReasoningChain, AgentError>;
}

/// The five agent roles bundled for the engine and post-processing stages.
#[derive(Clone)]
pub struct AgentSuite {
    pub exploration: Arc<dyn ExplorationAgent>,
    pub verification: Arc<dyn VerificationAgent>,
    pub summary: Arc<dyn SummaryAgent>,
    pub evaluation: Arc<dyn EvaluationAgent>,
    pub reasoning: Arc<dyn ReasoningAgent>,
}

impl AgentSuite {
    /// Deterministic scripted suite bound to a sim app spec.
    pub fn scripted(spec: Arc<SimAppSpec>, persona: Persona, seed: u64) -> Self {
        Self::from_explorer(ScriptedExplorer::new(spec, persona, seed))
    }

    pub fn from_explorer(explorer: ScriptedExplorer) -> Self {
        AgentSuite {
            exploration: Arc::new(explorer),
            verification: Arc::new(ScriptedVerifier),
            summary: Arc::new(ScriptedSummarizer::default()),
            evaluation: Arc::new(ScriptedEvaluator),
            reasoning: Arc::new(ScriptedReasoner),
        }
    }

    /// All five roles backed by one remote HTTP gateway.
    pub fn remote(config: RemoteAgentConfig) -> Self {
        let gateway = Arc::new(RemoteAgentGateway::new(config));
        AgentSuite {
            exploration: gateway.clone(),
            verification: gateway.clone(),
            summary: gateway.clone(),
            evaluation: gateway.clone(),
            reasoning: gateway,
        }
    }
}
