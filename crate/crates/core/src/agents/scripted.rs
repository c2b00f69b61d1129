//! Deterministic scripted agents for desk-scale runs. Each one is a pure
//! function of its inputs plus a fixed seed; none of them holds mutable state.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::normalize_text;
use crate::env::{screen_tag, SimAppSpec, Transition, Widget, WidgetKind};
use crate::model::{
    fnv1a64, Action, Expectation, ExplorationTuple, Observation, ResultType, StatePredicate,
    Trajectory, VerificationResult,
};

use super::{
    AgentError, EvaluationAgent, ExplorationAgent, ExplorationContext, QualityScore,
    ReasoningAgent, ReasoningChain, ReasoningInput, SubSpan, SummaryAgent, TaskSummary,
    VerificationAgent,
};

/// Exploration temperament.
///
/// `Biased` mimics a model that keeps reaching for visually prominent
/// elements: candidates are drawn with probability proportional to the square
/// of widget area, and the prefix memory view is ignored. `Diverse` rotates
/// through widgets by seed and avoids goals already present in the memory
/// view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Persona {
    Biased,
    Diverse,
}

impl Persona {
    pub fn parse(name: &str) -> Option<Persona> {
        match name.to_ascii_lowercase().as_str() {
            "biased" => Some(Persona::Biased),
            "diverse" => Some(Persona::Diverse),
            _ => None,
        }
    }
}

pub struct ScriptedExplorer {
    spec: Arc<SimAppSpec>,
    persona: Persona,
    seed: u64,
    /// Once the history reaches this length, one TERMINATE candidate is
    /// offered alongside the widget candidates. `None` terminates only on
    /// widget-less screens.
    terminate_after: Option<u32>,
}

impl ScriptedExplorer {
    pub fn new(spec: Arc<SimAppSpec>, persona: Persona, seed: u64) -> Self {
        ScriptedExplorer { spec, persona, seed, terminate_after: None }
    }

    pub fn with_terminate_after(mut self, depth: u32) -> Self {
        self.terminate_after = Some(depth);
        self
    }

    fn rng_for(&self, ctx: &ExplorationContext) -> ChaCha8Rng {
        let mut buf = Vec::with_capacity(24);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&ctx.observation.digest.to_le_bytes());
        buf.extend_from_slice(&(ctx.history.len() as u64).to_le_bytes());
        ChaCha8Rng::seed_from_u64(fnv1a64(&buf))
    }

    fn screen_of(&self, obs: &Observation) -> Result<usize, AgentError> {
        let tag = *obs.pixels.first().ok_or_else(|| {
            AgentError::InvalidContext("observation has no pixels".to_string())
        })?;
        (0..self.spec.screens.len()).find(|&i| screen_tag(i) == tag).ok_or_else(|| {
            AgentError::InvalidContext(format!("screen tag {tag} matches no known screen"))
        })
    }

    fn tuple_for(&self, screen_idx: usize, widget: &Widget, wk: &str) -> ExplorationTuple {
        let screen = &self.spec.screens[screen_idx];
        let (action, verb) = match widget.kind {
            WidgetKind::Button | WidgetKind::Link | WidgetKind::Toggle => {
                let (x, y) = widget.bbox.center();
                (Action::click(x, y), "click")
            }
            WidgetKind::Field => (Action::type_text(format!("note for {}", widget.id)), "type into"),
            WidgetKind::Hotkey => (Action::key(widget.id.clone()), "press"),
            WidgetKind::Scrollable => {
                let (x, y) = widget.bbox.center();
                (Action::scroll(x, y), "scroll")
            }
        };
        let step_goal = format!("{verb} '{}' on screen '{screen}'", widget.id);
        let expected_observation = match &widget.transition {
            Transition::Goto { target } => {
                let target_idx = self.spec.screen_index(target).unwrap_or(screen_idx);
                Expectation::screen_tag(
                    format!("screen '{target}' becomes visible"),
                    screen_tag(target_idx),
                )
            }
            Transition::Mutate { var, .. } => Expectation::screen_tag(
                format!("screen '{screen}' stays active and '{var}' updates"),
                screen_tag(screen_idx),
            ),
        };
        let rationale = match self.persona {
            Persona::Biased => format!(
                "'{}' is the most prominent remaining element ({} px)",
                widget.id,
                widget.bbox.area()
            ),
            Persona::Diverse => {
                format!("'{}' has not been tried under this prefix yet", widget.id)
            }
        };
        ExplorationTuple {
            action,
            step_goal: step_goal.clone(),
            final_goal_hypothesis: format!("complete a {wk} workflow that includes: {step_goal}"),
            expected_observation,
            rationale,
        }
    }

    fn terminate_tuple(&self, wk: &str) -> ExplorationTuple {
        ExplorationTuple {
            action: Action::terminate(),
            step_goal: "terminate: the explored flow is complete".to_string(),
            final_goal_hypothesis: format!("conclude the current {wk} workflow"),
            expected_observation: Expectation::text_only("exploration ends here"),
            rationale: "a coherent task loop has been completed".to_string(),
        }
    }

    /// Weighted sample without replacement, weight = (area + 1)^2.
    fn biased_order(widgets: &[Widget], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut remaining: Vec<usize> = (0..widgets.len()).collect();
        let mut order = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let weights: Vec<f64> = remaining
                .iter()
                .map(|&i| {
                    let a = widgets[i].bbox.area() as f64 + 1.0;
                    a * a
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.random_range(0.0..total);
            let mut picked = remaining.len() - 1;
            for (slot, w) in weights.iter().enumerate() {
                if draw < *w {
                    picked = slot;
                    break;
                }
                draw -= w;
            }
            order.push(remaining.remove(picked));
        }
        order
    }

    fn diverse_order(
        widgets: &[Widget],
        seen: &HashSet<String>,
        goals: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Vec<usize> {
        let mut order: Vec<usize> = (0..widgets.len()).collect();
        // Seeded rotation plus Fisher-Yates for variety across trees.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        // Unseen goals first, preserving the shuffled order within each class.
        let (unseen, rest): (Vec<usize>, Vec<usize>) =
            order.into_iter().partition(|&i| !seen.contains(&normalize_text(&goals[i])));
        unseen.into_iter().chain(rest).collect()
    }
}

impl ExplorationAgent for ScriptedExplorer {
    fn propose(&self, ctx: &ExplorationContext) -> Result<Vec<ExplorationTuple>, AgentError> {
        if ctx.k_max == 0 {
            return Err(AgentError::InvalidContext("k_max must be >= 1".to_string()));
        }
        let screen_idx = self.screen_of(&ctx.observation)?;
        let screen = &self.spec.screens[screen_idx];
        let widgets = self.spec.widgets_of(screen);
        let mut rng = self.rng_for(ctx);
        let wk = if ctx.world_knowledge.trim().is_empty() {
            "general".to_string()
        } else {
            ctx.world_knowledge.split_whitespace().take(3).collect::<Vec<_>>().join(" ")
        };

        let depth = ctx.history.len() as u32;
        let offer_terminate = !ctx.history.is_empty()
            && (widgets.is_empty() || self.terminate_after.is_some_and(|d| depth >= d));

        let goals: Vec<String> =
            widgets.iter().map(|w| self.tuple_for(screen_idx, w, &wk).step_goal).collect();
        let order = match self.persona {
            Persona::Biased => Self::biased_order(widgets, &mut rng),
            Persona::Diverse => {
                let seen: HashSet<String> =
                    ctx.prefix_memory_view.iter().map(|g| normalize_text(g)).collect();
                Self::diverse_order(widgets, &seen, &goals, &mut rng)
            }
        };

        let widget_budget = if offer_terminate { ctx.k_max.saturating_sub(1) } else { ctx.k_max };
        let mut tuples: Vec<ExplorationTuple> = order
            .into_iter()
            .take(widget_budget)
            .map(|i| self.tuple_for(screen_idx, &widgets[i], &wk))
            .collect();
        if offer_terminate {
            tuples.push(self.terminate_tuple(&wk));
        }
        if tuples.is_empty() {
            // Widget-less screen at the root: waiting is the only legal move.
            tuples.push(ExplorationTuple {
                action: Action::wait(1.0),
                step_goal: format!("wait on screen '{screen}'"),
                final_goal_hypothesis: format!("observe the {wk} app settle"),
                expected_observation: Expectation::screen_tag(
                    format!("screen '{screen}' stays active"),
                    screen_tag(screen_idx),
                ),
                rationale: "no actionable widgets are visible".to_string(),
            });
        }
        Ok(tuples)
    }
}

/// Digest-equality and predicate rule verifier.
pub struct ScriptedVerifier;

impl VerificationAgent for ScriptedVerifier {
    fn verify(
        &self,
        prev: &Observation,
        tuple: &ExplorationTuple,
        actual: &Observation,
    ) -> Result<VerificationResult, AgentError> {
        if prev.digest == actual.digest {
            return Ok(VerificationResult::new(
                ResultType::NoChange,
                format!("the interface did not change (digest {:016x})", actual.digest),
            ));
        }
        match &tuple.expected_observation.predicate {
            Some(StatePredicate::ScreenTag { tag }) => {
                let actual_tag = actual.pixels.first().copied().unwrap_or(0);
                if actual_tag == *tag {
                    Ok(VerificationResult::new(
                        ResultType::Success,
                        format!(
                            "state changed as predicted: {}",
                            tuple.expected_observation.text
                        ),
                    ))
                } else {
                    Ok(VerificationResult::new(
                        ResultType::UnexpectedChange,
                        format!(
                            "expected screen tag {tag} but the interface shows tag {actual_tag}"
                        ),
                    ))
                }
            }
            None => Ok(VerificationResult::new(
                ResultType::Success,
                format!("the interface changed: {}", tuple.expected_observation.text),
            )),
        }
    }
}

/// Joins SUCCESS step goals bottom-up into a task instruction and reports
/// maximal SUCCESS runs as sub-spans.
pub struct ScriptedSummarizer {
    pub min_span_len: usize,
}

impl Default for ScriptedSummarizer {
    fn default() -> Self {
        ScriptedSummarizer { min_span_len: 1 }
    }
}

impl ScriptedSummarizer {
    pub fn new(min_span_len: usize) -> Self {
        ScriptedSummarizer { min_span_len: min_span_len.max(1) }
    }
}

/// Maximal contiguous runs of SUCCESS results with length >= min_len, as
/// (start, inclusive end) pairs.
pub fn success_runs(results: &[ResultType], min_len: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, r) in results.iter().enumerate() {
        match (r, start) {
            (ResultType::Success, None) => start = Some(i),
            (ResultType::Success, Some(_)) => {}
            (_, Some(s)) => {
                if i - s >= min_len {
                    runs.push((s, i - 1));
                }
                start = None;
            }
            (_, None) => {}
        }
    }
    if let Some(s) = start {
        if results.len() - s >= min_len {
            runs.push((s, results.len() - 1));
        }
    }
    runs
}

impl SummaryAgent for ScriptedSummarizer {
    fn summarize(&self, trajectory: &Trajectory) -> Result<TaskSummary, AgentError> {
        let goals: Vec<&str> = trajectory
            .steps
            .iter()
            .filter(|s| s.verification.is_success())
            .map(|s| s.tuple.step_goal.as_str())
            .collect();
        if goals.is_empty() {
            return Err(AgentError::EmptySummary);
        }
        let results = trajectory.result_types();
        let sub_spans = success_runs(&results, self.min_span_len)
            .into_iter()
            .map(|(start, end)| SubSpan {
                start,
                end,
                intent: trajectory.steps[start..=end]
                    .iter()
                    .map(|s| s.tuple.step_goal.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
            .collect();
        Ok(TaskSummary { global_instruction: goals.join(", "), sub_spans })
    }
}

/// Deterministic four-dimension rubric.
///
/// Efficiency loses ceil(6 * fraction of NO_CHANGE steps); consistency the
/// same for UNEXPECTED_CHANGE; coherence loses one point per A->B->A digest
/// oscillation; utility is the instruction-token coverage by step goals,
/// scaled to 0-3.
pub struct ScriptedEvaluator;

impl EvaluationAgent for ScriptedEvaluator {
    fn evaluate(
        &self,
        trajectory: &Trajectory,
        instruction: &str,
    ) -> Result<QualityScore, AgentError> {
        let n = trajectory.steps.len();
        if n == 0 {
            return Ok(QualityScore::new(0, 0, 0, 0));
        }
        let penalty = |count: usize| -> u8 {
            let frac = count as f64 / n as f64;
            let lost = (6.0 * frac).ceil().min(3.0) as u8;
            3 - lost
        };
        let no_change =
            trajectory.steps.iter().filter(|s| s.verification.result_type == ResultType::NoChange).count();
        let unexpected = trajectory
            .steps
            .iter()
            .filter(|s| s.verification.result_type == ResultType::UnexpectedChange)
            .count();

        let digests: Vec<u64> = trajectory.steps.iter().map(|s| s.observation_digest).collect();
        let oscillations = (2..digests.len())
            .filter(|&i| digests[i] == digests[i - 2] && digests[i] != digests[i - 1])
            .count();
        let coherence = 3u8.saturating_sub(oscillations.min(3) as u8);

        let instr_tokens = crate::analytics::tokenize(instruction);
        let goal_tokens: HashSet<String> = trajectory
            .steps
            .iter()
            .flat_map(|s| crate::analytics::tokenize(&s.tuple.step_goal))
            .collect();
        let utility = if instr_tokens.is_empty() {
            0
        } else {
            let covered = instr_tokens.iter().filter(|t| goal_tokens.contains(*t)).count();
            ((covered as f64 / instr_tokens.len() as f64) * 3.0).round() as u8
        };

        Ok(QualityScore::new(utility, penalty(no_change), penalty(unexpected), coherence))
    }
}

/// Template-fills the four reasoning sections from the hindsight inputs.
pub struct ScriptedReasoner;

impl ReasoningAgent for ScriptedReasoner {
    fn synthesize_reasoning(
        &self,
        input: &ReasoningInput<'_>,
    ) -> Result<ReasoningChain, AgentError> {
        let observation = format!(
            "The current interface renders state {:016x}; the pending action is {} aimed at: {}.",
            input.observation_digest, input.tuple.action.kind, input.tuple.step_goal
        );
        let progress = if input.history.is_empty() {
            "This is the first step of the task.".to_string()
        } else {
            let last = input.history.last().expect("nonempty");
            format!(
                "{} step(s) completed so far; most recently '{}' finished with {}.",
                input.history.len(),
                last.step_goal,
                last.result_type
            )
        };
        let plan = if input.future.is_empty() {
            format!("Executing '{}' completes the task; no further steps remain.", input.tuple.step_goal)
        } else {
            format!(
                "Execute '{}', then continue with '{}'{}.",
                input.tuple.step_goal,
                input.future[0],
                if input.future.len() > 1 {
                    format!(" and {} more step(s)", input.future.len() - 1)
                } else {
                    String::new()
                }
            )
        };
        let impact = format!(
            "Expected outcome: {}. This advances the overall goal '{}'.",
            input.tuple.expected_observation.text, input.goal
        );
        Ok(ReasoningChain { observation, progress, plan, impact })
    }
}

#[cfg(test)]
mod tests {
    use super::super::HistoryEntry;
    use super::*;
    use crate::env::{
        editor_app, hub_app, two_panel_app, Environment, EnvironmentConfig, SimEnvironment,
    };
    use crate::model::{ActionKind, NodeId, TrajectoryStep};

    fn context(obs: Observation, history: Vec<HistoryEntry>, k_max: usize) -> ExplorationContext {
        ExplorationContext {
            observation: obs,
            history,
            world_knowledge: "code editing".to_string(),
            prefix_memory_view: Vec::new(),
            k_max,
        }
    }

    fn editor_obs(seed: u64) -> Observation {
        let mut env = SimEnvironment::new("editor", editor_app());
        env.reset(&EnvironmentConfig::new("editor", seed)).unwrap()
    }

    fn explorer(persona: Persona) -> ScriptedExplorer {
        ScriptedExplorer::new(Arc::new(editor_app()), persona, 9)
    }

    #[test]
    fn propose_targets_distinct_widgets() {
        let agent = explorer(Persona::Diverse);
        let tuples = agent.propose(&context(editor_obs(1), vec![], 3)).unwrap();
        assert_eq!(tuples.len(), 3, "editor home has exactly 3 widgets");
        let mut pairs: Vec<(ActionKind, String)> = tuples
            .iter()
            .map(|t| {
                (
                    t.action.kind,
                    format!("{:?}{:?}", t.action.coordinate, t.action.text),
                )
            })
            .collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 3, "no repeated (kind, target) pairs");
        for t in &tuples {
            t.validate().unwrap();
        }
    }

    #[test]
    fn propose_respects_k_max_one() {
        let agent = explorer(Persona::Biased);
        let tuples = agent.propose(&context(editor_obs(1), vec![], 1)).unwrap();
        assert_eq!(tuples.len(), 1);
    }

    #[test]
    fn propose_is_deterministic_and_bounded_over_random_contexts() {
        let spec = Arc::new(hub_app(8, 4, 64, 64));
        let agent = ScriptedExplorer::new(spec.clone(), Persona::Diverse, 3);
        let mut env = SimEnvironment::new("hub", (*spec).clone());
        for i in 0..1000u64 {
            let obs = env.reset(&EnvironmentConfig::new("hub", i)).unwrap();
            let k_max = (i % 5 + 1) as usize;
            let history = (0..(i % 4))
                .map(|j| HistoryEntry {
                    step_goal: format!("goal {j}"),
                    action_kind: ActionKind::Click,
                    result_type: ResultType::Success,
                })
                .collect::<Vec<_>>();
            let ctx = context(obs, history, k_max);
            let a = agent.propose(&ctx).unwrap();
            let b = agent.propose(&ctx).unwrap();
            assert_eq!(a, b, "scripted propose must be pure");
            assert!(!a.is_empty() && a.len() <= k_max);
            assert!(a.iter().filter(|t| t.action.kind == ActionKind::Terminate).count() <= 1);
        }
    }

    #[test]
    fn terminate_only_with_history() {
        let spec = Arc::new(crate::env::chain_app(1, 64, 64));
        let mut env = SimEnvironment::new("chain", (*spec).clone());
        env.reset(&EnvironmentConfig::new("chain", 1)).unwrap();
        // stage_1 has no widgets
        let obs = env.step(&Action::click(30, 26)).unwrap();

        let agent = ScriptedExplorer::new(spec, Persona::Diverse, 1);
        let with_history = agent
            .propose(&context(
                obs.clone(),
                vec![HistoryEntry {
                    step_goal: "click 'next_0' on screen 'stage_0'".into(),
                    action_kind: ActionKind::Click,
                    result_type: ResultType::Success,
                }],
                2,
            ))
            .unwrap();
        assert_eq!(with_history.len(), 1);
        assert_eq!(with_history[0].action.kind, ActionKind::Terminate);

        let no_history = agent.propose(&context(obs, vec![], 2)).unwrap();
        assert!(no_history.iter().all(|t| t.action.kind != ActionKind::Terminate));
    }

    #[test]
    fn diverse_persona_avoids_memorized_goals() {
        let agent = explorer(Persona::Diverse);
        let obs = editor_obs(1);
        let plain = agent.propose(&context(obs.clone(), vec![], 1)).unwrap();
        let first_goal = plain[0].step_goal.clone();

        let mut ctx = context(obs, vec![], 1);
        ctx.prefix_memory_view = vec![first_goal.clone()];
        let avoided = agent.propose(&ctx).unwrap();
        assert_ne!(avoided[0].step_goal, first_goal);
    }

    #[test]
    fn verify_reference_outcomes() {
        let spec = two_panel_app();
        let mut env = SimEnvironment::new("apps", spec.clone());
        let start = env.reset(&EnvironmentConfig::new("apps", 5)).unwrap();

        // Correctly predicted navigation -> SUCCESS.
        let to_b = ExplorationTuple {
            action: Action::click(12, 16),
            step_goal: "click 'to_b' on screen 'a'".into(),
            final_goal_hypothesis: "visit panel b".into(),
            expected_observation: Expectation::screen_tag("screen 'b' becomes visible", screen_tag(1)),
            rationale: "test".into(),
        };
        let actual = env.step(&to_b.action).unwrap();
        let verdict = ScriptedVerifier.verify(&start, &to_b, &actual).unwrap();
        assert_eq!(verdict.result_type, ResultType::Success);
        assert!(!verdict.feedback.is_empty());

        // Dead click -> NO_CHANGE.
        let before = actual.clone();
        let dead = ExplorationTuple {
            action: Action::click(60, 60),
            step_goal: "click empty space".into(),
            final_goal_hypothesis: "nothing".into(),
            expected_observation: Expectation::screen_tag("screen 'b' stays", screen_tag(1)),
            rationale: "test".into(),
        };
        let after = env.step(&dead.action).unwrap();
        let verdict = ScriptedVerifier.verify(&before, &dead, &after).unwrap();
        assert_eq!(verdict.result_type, ResultType::NoChange);

        // Predicted screen b, landed on screen c -> UNEXPECTED_CHANGE.
        let start = env.reset(&EnvironmentConfig::new("apps", 5)).unwrap();
        let lies = ExplorationTuple {
            action: Action::click(38, 16), // actually goes to c
            step_goal: "click 'to_c' believing it opens b".into(),
            final_goal_hypothesis: "visit panel b".into(),
            expected_observation: Expectation::screen_tag("screen 'b' becomes visible", screen_tag(1)),
            rationale: "test".into(),
        };
        let actual = env.step(&lies.action).unwrap();
        let verdict = ScriptedVerifier.verify(&start, &lies, &actual).unwrap();
        assert_eq!(verdict.result_type, ResultType::UnexpectedChange);
    }

    fn trajectory_of(results: &[ResultType]) -> Trajectory {
        let steps = results
            .iter()
            .enumerate()
            .map(|(i, &r)| TrajectoryStep {
                tuple: ExplorationTuple {
                    action: Action::click(i as u32 + 1, 1),
                    step_goal: format!("goal {i}"),
                    final_goal_hypothesis: "h".into(),
                    expected_observation: Expectation::text_only("x"),
                    rationale: "r".into(),
                },
                verification: VerificationResult::new(r, "v"),
                observation_digest: 1000 + i as u64,
            })
            .collect();
        Trajectory {
            tree_id: "t".into(),
            node_ids: (1..=results.len() as u64).map(NodeId).collect(),
            steps,
            instruction: None,
        }
    }

    #[test]
    fn summarize_spans_reference_case() {
        use ResultType::*;
        let traj = trajectory_of(&[Success, Success, UnexpectedChange, Success, Success]);
        let summary = ScriptedSummarizer::new(2).summarize(&traj).unwrap();
        let spans: Vec<(usize, usize)> =
            summary.sub_spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(0, 1), (3, 4)]);
        assert_eq!(summary.global_instruction, "goal 0, goal 1, goal 3, goal 4");
    }

    #[test]
    fn summarize_single_success() {
        let traj = trajectory_of(&[ResultType::Success]);
        let summary = ScriptedSummarizer::default().summarize(&traj).unwrap();
        assert_eq!(summary.global_instruction, "goal 0");
        assert_eq!(summary.sub_spans.len(), 1);
    }

    #[test]
    fn summarize_all_failed_errors() {
        let traj = trajectory_of(&[ResultType::NoChange, ResultType::UnexpectedChange]);
        assert!(matches!(
            ScriptedSummarizer::default().summarize(&traj),
            Err(AgentError::EmptySummary)
        ));
    }

    #[test]
    fn evaluate_reference_scores() {
        use ResultType::*;
        // All-success, goals covered by the instruction, no oscillation.
        let traj = trajectory_of(&[Success, Success, Success]);
        let instruction = "goal 0, goal 1, goal 2";
        let score = ScriptedEvaluator.evaluate(&traj, instruction).unwrap();
        assert_eq!(score, QualityScore::new(3, 3, 3, 3));

        // A third NO_CHANGE steps caps efficiency at 1.
        let traj = trajectory_of(&[Success, Success, NoChange, Success, NoChange, Success]);
        let score = ScriptedEvaluator.evaluate(&traj, "goal 0").unwrap();
        assert!(score.efficiency <= 1, "efficiency {} should be <= 1", score.efficiency);

        // Token-disjoint instruction zeroes utility.
        let traj = trajectory_of(&[Success]);
        let score = ScriptedEvaluator.evaluate(&traj, "unrelated words entirely").unwrap();
        assert_eq!(score.utility, 0);
    }

    #[test]
    fn evaluate_detects_oscillation() {
        let mut traj = trajectory_of(&[ResultType::Success; 4]);
        traj.steps[2].observation_digest = traj.steps[0].observation_digest;
        traj.steps[3].observation_digest = traj.steps[1].observation_digest;
        let score = ScriptedEvaluator.evaluate(&traj, "goal 0 goal 1 goal 2 goal 3").unwrap();
        assert!(score.coherence < 3);
    }

    #[test]
    fn evaluate_always_in_range() {
        use ResultType::*;
        let cases: Vec<Vec<ResultType>> = vec![
            vec![NoChange; 9],
            vec![UnexpectedChange; 5],
            vec![Success, NoChange, UnexpectedChange],
            vec![Success],
        ];
        for results in cases {
            let traj = trajectory_of(&results);
            let score = ScriptedEvaluator.evaluate(&traj, "goal").unwrap();
            assert!(score.in_range());
        }
    }

    #[test]
    fn reasoning_sections_reference_cases() {
        let traj = trajectory_of(&[ResultType::Success]);
        let input = ReasoningInput {
            goal: "finish the editor task",
            observation_digest: 7,
            tuple: &traj.steps[0].tuple,
            history: &[],
            future: &[],
        };
        let chain = ScriptedReasoner.synthesize_reasoning(&input).unwrap();
        assert!(chain.is_complete());
        assert!(chain.progress.contains("first step"));
        assert!(chain.plan.contains("completes the task"));

        let future = vec!["open settings".to_string(), "toggle wrap".to_string()];
        let history = vec![HistoryEntry {
            step_goal: "open editor".into(),
            action_kind: ActionKind::Click,
            result_type: ResultType::Success,
        }];
        let input = ReasoningInput {
            goal: "finish the editor task",
            observation_digest: 7,
            tuple: &traj.steps[0].tuple,
            history: &history,
            future: &future,
        };
        let chain = ScriptedReasoner.synthesize_reasoning(&input).unwrap();
        assert!(chain.plan.contains("open settings"), "plan must reference the future");
        assert!(!chain.progress.contains("first step"));
    }
}
