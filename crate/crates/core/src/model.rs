//! Canonical data types shared by every pipeline stage.
//!
//! All types here are plain values: cheap to clone, safe to move between
//! worker threads, and serializable. Tree mutation is owned by the engine
//! coordinator; everything else treats trees as immutable.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("node {0} not found in tree")]
    NodeNotFound(NodeId),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid tuple: {0}")]
    InvalidTuple(String),
    #[error("observation pixel buffer has length {got}, expected {expected}")]
    PixelLength { got: usize, expected: usize },
}

/// 64-bit FNV-1a, used for content digests and seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Monotonically increasing per-tree node identifier, assigned at creation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Click,
    DoubleClick,
    Key,
    TypeText,
    Scroll,
    Wait,
    Terminate,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionKind::Click => "CLICK",
            ActionKind::DoubleClick => "DOUBLE_CLICK",
            ActionKind::Key => "KEY",
            ActionKind::TypeText => "TYPE_TEXT",
            ActionKind::Scroll => "SCROLL",
            ActionKind::Wait => "WAIT",
            ActionKind::Terminate => "TERMINATE",
        };
        f.write_str(s)
    }
}

/// One interface action. Payload fields are kind-dependent; see [`Action::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl Action {
    pub fn click(x: u32, y: u32) -> Self {
        Action { kind: ActionKind::Click, coordinate: Some((x, y)), text: None, duration: None }
    }

    pub fn double_click(x: u32, y: u32) -> Self {
        Action {
            kind: ActionKind::DoubleClick,
            coordinate: Some((x, y)),
            text: None,
            duration: None,
        }
    }

    pub fn scroll(x: u32, y: u32) -> Self {
        Action { kind: ActionKind::Scroll, coordinate: Some((x, y)), text: None, duration: None }
    }

    pub fn key(chord: impl Into<String>) -> Self {
        Action { kind: ActionKind::Key, coordinate: None, text: Some(chord.into()), duration: None }
    }

    pub fn type_text(text: impl Into<String>) -> Self {
        Action {
            kind: ActionKind::TypeText,
            coordinate: None,
            text: Some(text.into()),
            duration: None,
        }
    }

    pub fn wait(seconds: f64) -> Self {
        Action { kind: ActionKind::Wait, coordinate: None, text: None, duration: Some(seconds) }
    }

    pub fn terminate() -> Self {
        Action { kind: ActionKind::Terminate, coordinate: None, text: None, duration: None }
    }

    /// Enforces the per-kind payload rules: CLICK/DOUBLE_CLICK/SCROLL require a
    /// coordinate, KEY/TYPE_TEXT require text, WAIT requires a positive
    /// duration, TERMINATE carries no payload.
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |msg: &str| Err(ModelError::InvalidAction(format!("{}: {msg}", self.kind)));
        match self.kind {
            ActionKind::Click | ActionKind::DoubleClick | ActionKind::Scroll => {
                if self.coordinate.is_none() {
                    return err("coordinate required");
                }
            }
            ActionKind::Key | ActionKind::TypeText => {
                if self.text.as_deref().map_or(true, str::is_empty) {
                    return err("text required");
                }
            }
            ActionKind::Wait => {
                if !self.duration.is_some_and(|d| d > 0.0) {
                    return err("duration must be > 0");
                }
            }
            ActionKind::Terminate => {
                if self.coordinate.is_some() || self.text.is_some() || self.duration.is_some() {
                    return err("carries no payload");
                }
            }
        }
        Ok(())
    }
}

/// A rendered frame: row-major 8-bit intensities, `width * height * channels`
/// values, with a content digest derived purely from the pixel data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    pub digest: u64,
}

impl Observation {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, ModelError> {
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ModelError::PixelLength { got: pixels.len(), expected });
        }
        let digest = Self::digest_of(width, height, channels, &pixels);
        Ok(Observation { width, height, channels, pixels, digest })
    }

    pub fn digest_of(width: u32, height: u32, channels: u8, pixels: &[u8]) -> u64 {
        let mut buf = Vec::with_capacity(9 + pixels.len());
        buf.extend_from_slice(&width.to_le_bytes());
        buf.extend_from_slice(&height.to_le_bytes());
        buf.push(channels);
        buf.extend_from_slice(pixels);
        fnv1a64(&buf)
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// Structured stand-in for the free-text expected observation, checkable by
/// the scripted verifier without a vision model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePredicate {
    /// The next frame carries this screen tag byte at the origin pixel.
    ScreenTag { tag: u8 },
}

/// Predicted outcome of an action: prose for remote agents plus an optional
/// machine-checkable predicate for scripted verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<StatePredicate>,
}

impl Expectation {
    pub fn text_only(text: impl Into<String>) -> Self {
        Expectation { text: text.into(), predicate: None }
    }

    pub fn screen_tag(text: impl Into<String>, tag: u8) -> Self {
        Expectation { text: text.into(), predicate: Some(StatePredicate::ScreenTag { tag }) }
    }
}

/// One candidate edge: the action plus the intent annotations attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTuple {
    pub action: Action,
    pub step_goal: String,
    pub final_goal_hypothesis: String,
    pub expected_observation: Expectation,
    pub rationale: String,
}

impl ExplorationTuple {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.action.validate()?;
        if self.step_goal.trim().is_empty() {
            return Err(ModelError::InvalidTuple("step_goal must be nonempty".into()));
        }
        if self.action.kind != ActionKind::Terminate
            && self.expected_observation.text.trim().is_empty()
        {
            return Err(ModelError::InvalidTuple(
                "expected_observation must be nonempty unless the action is TERMINATE".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResultType {
    Success,
    NoChange,
    UnexpectedChange,
}

impl fmt::Display for ResultType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ResultType::Success => "SUCCESS",
            ResultType::NoChange => "NO_CHANGE",
            ResultType::UnexpectedChange => "UNEXPECTED_CHANGE",
        };
        f.write_str(s)
    }
}

/// Ternary step-verification outcome with the verifier's feedback text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub result_type: ResultType,
    pub feedback: String,
}

impl VerificationResult {
    pub fn new(result_type: ResultType, feedback: impl Into<String>) -> Self {
        VerificationResult { result_type, feedback: feedback.into() }
    }

    pub fn is_success(&self) -> bool {
        self.result_type == ResultType::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Root,
    Unexplored,
    Explored,
    Terminal,
    Corrupted,
    Pruned,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeStatus::Root => "ROOT",
            NodeStatus::Unexplored => "UNEXPLORED",
            NodeStatus::Explored => "EXPLORED",
            NodeStatus::Terminal => "TERMINAL",
            NodeStatus::Corrupted => "CORRUPTED",
            NodeStatus::Pruned => "PRUNED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incoming: Option<ExplorationTuple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_digest: Option<u64>,
}

/// Persistent exploration topology. Node ids are unique and monotone within
/// the tree; the root always has id 0 when built through [`ExplorationTree::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTree {
    pub tree_id: String,
    pub category_id: String,
    pub seed: u64,
    #[serde(with = "node_list")]
    pub nodes: BTreeMap<NodeId, TreeNode>,
}

/// The `nodes` field serializes as an id-ordered array, not a map.
mod node_list {
    use super::{NodeId, TreeNode};
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        nodes: &BTreeMap<NodeId, TreeNode>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        ser.collect_seq(nodes.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<NodeId, TreeNode>, D::Error> {
        let list = Vec::<TreeNode>::deserialize(de)?;
        let mut map = BTreeMap::new();
        for node in list {
            let id = node.id;
            if map.insert(id, node).is_some() {
                return Err(D::Error::custom(format!("duplicate node id {id}")));
            }
        }
        Ok(map)
    }
}

impl ExplorationTree {
    /// Creates a tree containing only the root node (id 0, status ROOT).
    pub fn new(
        tree_id: impl Into<String>,
        category_id: impl Into<String>,
        seed: u64,
    ) -> Self {
        let root = TreeNode {
            id: NodeId(0),
            parent: None,
            depth: 0,
            incoming: None,
            status: NodeStatus::Root,
            verification: None,
            observation_digest: None,
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId(0), root);
        ExplorationTree { tree_id: tree_id.into(), category_id: category_id.into(), seed, nodes }
    }

    pub fn root_id(&self) -> NodeId {
        self.nodes
            .values()
            .find(|n| n.status == NodeStatus::Root)
            .map(|n| n.id)
            .unwrap_or(NodeId(0))
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, ModelError> {
        self.nodes.get(&id).ok_or(ModelError::NodeNotFound(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut TreeNode, ModelError> {
        self.nodes.get_mut(&id).ok_or(ModelError::NodeNotFound(id))
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.last_key_value().map_or(0, |(k, _)| k.0 + 1))
    }

    /// Appends a child under `parent` with the next monotone id.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        incoming: ExplorationTuple,
        status: NodeStatus,
    ) -> Result<NodeId, ModelError> {
        let parent_depth = self.node(parent)?.depth;
        let id = self.next_id();
        let node = TreeNode {
            id,
            parent: Some(parent),
            depth: parent_depth + 1,
            incoming: Some(incoming),
            status,
            verification: None,
            observation_digest: None,
        };
        self.nodes.insert(id, node);
        Ok(id)
    }

    /// Child ids per node, in id order.
    pub fn child_index(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut index: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            index.entry(node.id).or_default();
            if let Some(parent) = node.parent {
                index.entry(parent).or_default().push(node.id);
            }
        }
        index
    }

    /// Actions on the incoming edges from the root to `node`, in execution
    /// order. Empty for the root.
    pub fn path_to(&self, node: NodeId) -> Result<Vec<Action>, ModelError> {
        Ok(self
            .path_nodes(node)?
            .into_iter()
            .filter_map(|id| self.nodes[&id].incoming.as_ref().map(|t| t.action.clone()))
            .collect())
    }

    /// Node ids from the root to `node` inclusive.
    pub fn path_nodes(&self, node: NodeId) -> Result<Vec<NodeId>, ModelError> {
        let mut path = Vec::new();
        let mut cursor = Some(node);
        let mut hops = 0usize;
        while let Some(id) = cursor {
            let n = self.node(id)?;
            path.push(id);
            cursor = n.parent;
            hops += 1;
            if hops > self.nodes.len() {
                // parent links form a cycle; validate() reports it
                return Err(ModelError::NodeNotFound(node));
            }
        }
        path.reverse();
        Ok(path)
    }

    /// All nodes with no children, sorted by id.
    pub fn leaves(&self) -> Vec<NodeId> {
        let index = self.child_index();
        self.nodes
            .keys()
            .copied()
            .filter(|id| index.get(id).map_or(true, Vec::is_empty))
            .collect()
    }

    /// Structural invariant check; empty iff the tree is well formed.
    pub fn validate(&self) -> Vec<TreeViolation> {
        let mut violations = Vec::new();
        fn push(violations: &mut Vec<TreeViolation>, node: Option<NodeId>, rule: impl Into<String>) {
            violations.push(TreeViolation { node, rule: rule.into() });
        }

        let roots: Vec<&TreeNode> =
            self.nodes.values().filter(|n| n.status == NodeStatus::Root).collect();
        match roots.len() {
            0 => push(&mut violations, None, "tree has no ROOT node"),
            1 => {}
            _ => {
                for r in &roots[1..] {
                    push(&mut violations, Some(r.id), "multiple ROOT nodes");
                }
            }
        }

        for (key, node) in &self.nodes {
            if *key != node.id {
                push(&mut violations, Some(node.id), "node id does not match its map key");
            }
            let is_root = node.status == NodeStatus::Root;
            if is_root {
                if node.depth != 0 {
                    push(&mut violations, Some(node.id), "root must have depth 0");
                }
                if node.parent.is_some() {
                    push(&mut violations, Some(node.id), "root must have no parent");
                }
                if node.incoming.is_some() {
                    push(&mut violations, Some(node.id), "root must have no incoming tuple");
                }
            } else {
                match node.parent {
                    None => push(&mut violations, Some(node.id), "non-root node must have a parent"),
                    Some(pid) => match self.nodes.get(&pid) {
                        None => {
                            push(&mut violations, Some(node.id), "parent id not present in tree")
                        }
                        Some(parent) => {
                            if node.depth != parent.depth + 1 {
                                push(
                                    &mut violations,
                                    Some(node.id),
                                    "depth must equal parent depth + 1",
                                );
                            }
                        }
                    },
                }
                match &node.incoming {
                    None => push(
                        &mut violations,
                        Some(node.id),
                        "non-root node must have an incoming tuple",
                    ),
                    Some(tuple) => {
                        if let Err(e) = tuple.validate() {
                            push(
                                &mut violations,
                                Some(node.id),
                                format!("invalid incoming tuple: {e}"),
                            );
                        }
                    }
                }
            }
            if matches!(node.status, NodeStatus::Explored | NodeStatus::Terminal) {
                if node.verification.is_none() {
                    push(
                        &mut violations,
                        Some(node.id),
                        "EXPLORED/TERMINAL node must carry a verification",
                    );
                }
                if node.observation_digest.is_none() {
                    push(
                        &mut violations,
                        Some(node.id),
                        "EXPLORED/TERMINAL node must carry an observation digest",
                    );
                }
            }
        }

        // Connectivity and acyclicity: every node must reach the root.
        if roots.len() == 1 {
            let root = roots[0].id;
            for id in self.nodes.keys() {
                match self.path_nodes(*id) {
                    Ok(path) if path.first() == Some(&root) => {}
                    _ => push(
                        &mut violations,
                        Some(*id),
                        "node does not reach the root through parent links",
                    ),
                }
            }
        }

        // Unique action histories: siblings must not repeat an action.
        let mut sibling_actions: BTreeMap<NodeId, Vec<(&Action, NodeId)>> = BTreeMap::new();
        for node in self.nodes.values() {
            if let (Some(parent), Some(tuple)) = (node.parent, &node.incoming) {
                sibling_actions.entry(parent).or_default().push((&tuple.action, node.id));
            }
        }
        for actions in sibling_actions.values() {
            for (i, (action, _)) in actions.iter().enumerate() {
                for (other, id) in actions.iter().skip(i + 1) {
                    if action == other {
                        push(
                            &mut violations,
                            Some(*id),
                            "sibling repeats an action, making the action history ambiguous",
                        );
                    }
                }
            }
        }

        violations
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeViolation {
    pub node: Option<NodeId>,
    pub rule: String,
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(id) => write!(f, "node {id}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

/// One root-to-leaf path plus its per-step records, root-exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tree_id: String,
    pub node_ids: Vec<NodeId>,
    pub steps: Vec<TrajectoryStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub tuple: ExplorationTuple,
    pub verification: VerificationResult,
    pub observation_digest: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn result_types(&self) -> Vec<ResultType> {
        self.steps.iter().map(|s| s.verification.result_type).collect()
    }
}
