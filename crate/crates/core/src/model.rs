//! The time-independent transition system: agent states, atomic mode
//! transitions, the occupancy predicate, request-cycle (deadlock)
//! detection, termination predicates, and structural invariant checks.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::graph::{Graph, Instance, NodeId};

/// Identifier of an agent; dense in `[0, agent_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub u32);

impl AgentId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The three agent modes. An agent occupies its tail, and additionally
/// its head while extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Contracted,
    Requesting,
    Extended,
}

impl Mode {
    /// Single-letter form used by trace files.
    pub fn letter(self) -> char {
        match self {
            Mode::Contracted => 'c',
            Mode::Requesting => 'r',
            Mode::Extended => 'e',
        }
    }
}

/// Per-agent fixed tie-break, a rational in (0, 1). Agents are created
/// with `(i + 1) / (n + 1)` so no two priorities ever compare equal.
#[derive(Debug, Clone, Copy)]
pub struct Tiebreak {
    pub num: u32,
    pub den: u32,
}

impl PartialEq for Tiebreak {
    fn eq(&self, other: &Self) -> bool {
        self.num as u64 * other.den as u64 == other.num as u64 * self.den as u64
    }
}
impl Eq for Tiebreak {}
impl PartialOrd for Tiebreak {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Tiebreak {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }
}

/// Total-ordered agent priority: lexicographic on `(epoch, tiebreak)`.
/// Epochs start at 0; reaching the goal drops the epoch below every
/// agent that has not yet reached its own goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Priority {
    pub epoch: i64,
    pub tiebreak: Tiebreak,
}

impl Priority {
    pub fn initial(agent: usize, agent_count: usize) -> Priority {
        Priority {
            epoch: 0,
            tiebreak: Tiebreak {
                num: agent as u32 + 1,
                den: agent_count as u32 + 1,
            },
        }
    }
}

/// Offline-plan hint carried by an agent: the stay-compressed path and
/// the agent's private clock into it.
#[derive(Debug, Clone, PartialEq)]
pub struct HintState {
    pub path: Vec<NodeId>,
    pub clock: usize,
}

/// Full state of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub mode: Mode,
    pub tail: NodeId,
    pub head: Option<NodeId>,
    pub parent: AgentId,
    pub children: BTreeSet<AgentId>,
    /// Candidate next nodes, always within `Neigh(tail) ∪ {tail}`.
    pub candidates: BTreeSet<NodeId>,
    /// Nodes already searched by the tree this agent belongs to.
    pub searched: BTreeSet<NodeId>,
    pub pori: Priority,
    pub ptmp: Priority,
    pub goal: NodeId,
    pub hint: Option<HintState>,
}

impl AgentState {
    /// The agent rests contracted on its goal.
    pub fn at_goal(&self) -> bool {
        self.mode == Mode::Contracted && self.tail == self.goal
    }
}

/// What a node is claimed as, in the derived occupancy view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Tail(AgentId),
    ExtendedHead(AgentId),
}

/// One of the four legal single-agent transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    Request(NodeId),
    Revert,
    Extend,
    Finish,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("illegal transition for agent {agent}: {msg}")]
    IllegalTransition { agent: AgentId, msg: String },
}

/// Global configuration: the tuple of all agent states. The agent array
/// is the single source of truth; occupancy is always derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    agents: Vec<AgentState>,
    /// Monotone counter backing the goal-drop priority rule.
    epoch_counter: u64,
}

impl Configuration {
    /// Initial configuration for an instance: all agents contracted on
    /// their starts with fresh candidate sets and index-ranked priorities.
    pub fn initial(instance: &Instance) -> Configuration {
        let n = instance.agent_count();
        let agents = (0..n)
            .map(|i| {
                let tail = instance.starts[i];
                let mut candidates: BTreeSet<NodeId> =
                    instance.graph.neighbors(tail).iter().copied().collect();
                candidates.insert(tail);
                let pori = Priority::initial(i, n);
                AgentState {
                    id: AgentId(i as u32),
                    mode: Mode::Contracted,
                    tail,
                    head: None,
                    parent: AgentId(i as u32),
                    children: BTreeSet::new(),
                    candidates,
                    searched: BTreeSet::new(),
                    pori,
                    ptmp: pori,
                    goal: instance.goals[i],
                    hint: None,
                }
            })
            .collect();
        Configuration {
            agents,
            epoch_counter: 0,
        }
    }

    /// Builds a configuration directly from agent states, without any
    /// validation. Intended for tests and tools that need to construct
    /// broken configurations on purpose.
    pub fn from_agent_states(agents: Vec<AgentState>) -> Configuration {
        Configuration {
            agents,
            epoch_counter: 0,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, i: AgentId) -> &AgentState {
        &self.agents[i.idx()]
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub(crate) fn agent_mut(&mut self, i: AgentId) -> &mut AgentState {
        &mut self.agents[i.idx()]
    }

    /// Claims the next goal-drop epoch; strictly below all epochs handed
    /// out so far and below the initial 0.
    pub(crate) fn next_drop_epoch(&mut self) -> i64 {
        self.epoch_counter += 1;
        -(self.epoch_counter as i64)
    }

    /// True iff `v` is claimed by some tail, or by the head of an
    /// extended agent. Requesting heads do not claim their target.
    pub fn occupied(&self, v: NodeId) -> bool {
        self.agents
            .iter()
            .any(|a| a.tail == v || (a.mode == Mode::Extended && a.head == Some(v)))
    }

    /// Derived occupancy view, one claim per node when consistent.
    pub fn occupancy(&self) -> HashMap<NodeId, Vec<Claim>> {
        let mut map: HashMap<NodeId, Vec<Claim>> = HashMap::new();
        for a in &self.agents {
            map.entry(a.tail).or_default().push(Claim::Tail(a.id));
            if a.mode == Mode::Extended {
                if let Some(h) = a.head {
                    map.entry(h).or_default().push(Claim::ExtendedHead(a.id));
                }
            }
        }
        map
    }

    /// Applies one atomic single-agent transition, enforcing the mode
    /// preconditions. All other agents are untouched.
    pub fn apply_transition(
        &mut self,
        graph: &Graph,
        agent: AgentId,
        kind: TransitionKind,
    ) -> Result<(), ModelError> {
        let illegal = |msg: String| ModelError::IllegalTransition { agent, msg };
        let (mode, tail, head) = {
            let a = self.agent(agent);
            (a.mode, a.tail, a.head)
        };
        match kind {
            TransitionKind::Request(u) => {
                if mode != Mode::Contracted {
                    return Err(illegal(format!("request from {mode:?}")));
                }
                if !graph.neighbors(tail).contains(&u) {
                    return Err(illegal(format!("request target {u} not adjacent to {tail}")));
                }
                let a = self.agent_mut(agent);
                a.head = Some(u);
                a.mode = Mode::Requesting;
            }
            TransitionKind::Revert => {
                if mode != Mode::Requesting {
                    return Err(illegal(format!("revert from {mode:?}")));
                }
                let a = self.agent_mut(agent);
                a.head = None;
                a.mode = Mode::Contracted;
            }
            TransitionKind::Extend => {
                if mode != Mode::Requesting {
                    return Err(illegal(format!("extend from {mode:?}")));
                }
                let h = head.expect("requesting agent has a head");
                if self.occupied(h) {
                    return Err(illegal(format!("extend onto occupied node {h}")));
                }
                self.agent_mut(agent).mode = Mode::Extended;
            }
            TransitionKind::Finish => {
                if mode != Mode::Extended {
                    return Err(illegal(format!("finish from {mode:?}")));
                }
                let a = self.agent_mut(agent);
                a.tail = a.head.take().expect("extended agent has a head");
                a.mode = Mode::Contracted;
            }
        }
        Ok(())
    }

    /// Finds a request cycle: agents all requesting, each head on the
    /// next agent's tail. Returns the cycle in link order.
    pub fn detect_request_cycle(&self) -> Option<Vec<AgentId>> {
        // Requesting agents form a functional graph: tails are distinct,
        // so each head targets at most one tail owner.
        let mut tail_owner: HashMap<NodeId, AgentId> = HashMap::new();
        for a in &self.agents {
            if a.mode == Mode::Requesting {
                tail_owner.insert(a.tail, a.id);
            }
        }
        let successor = |i: AgentId| -> Option<AgentId> {
            let a = self.agent(i);
            if a.mode != Mode::Requesting {
                return None;
            }
            tail_owner.get(&a.head.expect("requesting head")).copied()
        };

        // 0 = unvisited, 1 = on current walk, 2 = done.
        let mut color = vec![0u8; self.agents.len()];
        for start in 0..self.agents.len() {
            if color[start] != 0 {
                continue;
            }
            let mut walk = Vec::new();
            let mut cur = AgentId(start as u32);
            loop {
                if color[cur.idx()] == 1 {
                    let pos = walk.iter().position(|&a| a == cur).unwrap();
                    return Some(walk[pos..].to_vec());
                }
                if color[cur.idx()] == 2 {
                    break;
                }
                color[cur.idx()] = 1;
                walk.push(cur);
                match successor(cur) {
                    Some(next) => cur = next,
                    None => break,
                }
            }
            for a in walk {
                color[a.idx()] = 2;
            }
        }
        None
    }

    /// Strong termination: every agent contracted on its goal.
    pub fn strong_termination(&self) -> bool {
        self.agents.iter().all(|a| a.at_goal())
    }
}

/// Weak termination given the simulator-maintained per-agent flags.
pub fn weak_termination(visited_goal: &[bool]) -> bool {
    visited_goal.iter().all(|&f| f)
}

/// A structural invariant violation, as data.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateTail { node: NodeId, agents: (AgentId, AgentId) },
    HeadClaimClash { node: NodeId, extended: AgentId, other: AgentId },
    HeadWithoutRequest { agent: AgentId },
    MissingHead { agent: AgentId },
    HeadNotAdjacent { agent: AgentId },
    ParentChildAsymmetry { parent: AgentId, child: AgentId },
    ParentForestCycle { agent: AgentId },
    TmpBelowOriginal { agent: AgentId },
    DuplicateOriginalPriority { agents: (AgentId, AgentId) },
    CandidateSearchOverlap { agent: AgentId, node: NodeId },
    CandidateOutsideNeighborhood { agent: AgentId, node: NodeId },
    HintClockOutOfRange { agent: AgentId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateTail { node, agents } => {
                write!(f, "duplicate tail: agents {} and {} on node {node}", agents.0, agents.1)
            }
            Violation::HeadClaimClash { node, extended, other } => write!(
                f,
                "node {node} claimed by extended head of {extended} and by {other}"
            ),
            Violation::HeadWithoutRequest { agent } => {
                write!(f, "contracted agent {agent} carries a head")
            }
            Violation::MissingHead { agent } => {
                write!(f, "non-contracted agent {agent} has void head")
            }
            Violation::HeadNotAdjacent { agent } => {
                write!(f, "head of agent {agent} not adjacent to its tail")
            }
            Violation::ParentChildAsymmetry { parent, child } => {
                write!(f, "parent/children mismatch between {parent} and {child}")
            }
            Violation::ParentForestCycle { agent } => {
                write!(f, "H not a forest: parent cycle through agent {agent}")
            }
            Violation::TmpBelowOriginal { agent } => {
                write!(f, "ptmp below pori for agent {agent}")
            }
            Violation::DuplicateOriginalPriority { agents } => {
                write!(f, "agents {} and {} share pori", agents.0, agents.1)
            }
            Violation::CandidateSearchOverlap { agent, node } => {
                write!(f, "agent {agent}: node {node} in both C and S")
            }
            Violation::CandidateOutsideNeighborhood { agent, node } => {
                write!(f, "agent {agent}: candidate {node} outside Neigh(tail) ∪ {{tail}}")
            }
            Violation::HintClockOutOfRange { agent } => {
                write!(f, "agent {agent}: hint clock out of range")
            }
        }
    }
}

/// Checks every structural invariant and returns all violations found.
/// An empty list means the configuration is consistent.
pub fn check_config_invariants(config: &Configuration, graph: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();
    let agents = config.agents();

    // Tail uniqueness and head-claim consistency.
    let mut tail_of: HashMap<NodeId, AgentId> = HashMap::new();
    for a in agents {
        if let Some(&prev) = tail_of.get(&a.tail) {
            out.push(Violation::DuplicateTail {
                node: a.tail,
                agents: (prev, a.id),
            });
        } else {
            tail_of.insert(a.tail, a.id);
        }
    }
    let mut ext_head_of: HashMap<NodeId, AgentId> = HashMap::new();
    for a in agents {
        if a.mode == Mode::Extended {
            let h = match a.head {
                Some(h) => h,
                None => continue, // reported below as MissingHead
            };
            if let Some(&owner) = tail_of.get(&h) {
                if owner != a.id {
                    out.push(Violation::HeadClaimClash {
                        node: h,
                        extended: a.id,
                        other: owner,
                    });
                }
            }
            if let Some(&prev) = ext_head_of.get(&h) {
                out.push(Violation::HeadClaimClash {
                    node: h,
                    extended: a.id,
                    other: prev,
                });
            } else {
                ext_head_of.insert(h, a.id);
            }
        }
    }

    // Mode/head coupling and adjacency.
    for a in agents {
        match (a.mode, a.head) {
            (Mode::Contracted, Some(_)) => out.push(Violation::HeadWithoutRequest { agent: a.id }),
            (Mode::Requesting | Mode::Extended, None) => {
                out.push(Violation::MissingHead { agent: a.id })
            }
            (_, Some(h)) => {
                if !graph.neighbors(a.tail).contains(&h) {
                    out.push(Violation::HeadNotAdjacent { agent: a.id });
                }
            }
            _ => {}
        }
    }

    // Parent/children mutual consistency.
    for a in agents {
        if a.parent != a.id {
            let p = config.agent(a.parent);
            if !p.children.contains(&a.id) {
                out.push(Violation::ParentChildAsymmetry {
                    parent: a.parent,
                    child: a.id,
                });
            }
        }
        for &c in &a.children {
            if config.agent(c).parent != a.id {
                out.push(Violation::ParentChildAsymmetry {
                    parent: a.id,
                    child: c,
                });
            }
        }
    }

    // The parent-child graph over non-extended agents must be a forest:
    // following parent links from any agent must reach a self-parented
    // root without revisiting.
    let mut state = vec![0u8; agents.len()]; // 0 unseen, 1 on path, 2 ok
    for a in agents {
        if state[a.id.idx()] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = a.id;
        loop {
            if state[cur.idx()] == 1 {
                out.push(Violation::ParentForestCycle { agent: cur });
                break;
            }
            if state[cur.idx()] == 2 {
                break;
            }
            state[cur.idx()] = 1;
            path.push(cur);
            let parent = config.agent(cur).parent;
            if parent == cur {
                break;
            }
            cur = parent;
        }
        for v in path {
            state[v.idx()] = 2;
        }
    }

    // Priorities.
    for a in agents {
        if a.ptmp < a.pori {
            out.push(Violation::TmpBelowOriginal { agent: a.id });
        }
    }
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            if a.pori == b.pori {
                out.push(Violation::DuplicateOriginalPriority {
                    agents: (a.id, b.id),
                });
            }
        }
    }

    // Candidate/searched sets. The agent's own tail is searched (for
    // propagation) yet stays selectable, so it is exempt from the
    // disjointness requirement.
    for a in agents {
        if let Some(&node) = a
            .candidates
            .intersection(&a.searched)
            .find(|&&v| v != a.tail)
        {
            out.push(Violation::CandidateSearchOverlap { agent: a.id, node });
        }
        for &c in &a.candidates {
            if c != a.tail && !graph.neighbors(a.tail).contains(&c) {
                out.push(Violation::CandidateOutsideNeighborhood { agent: a.id, node: c });
            }
        }
        if let Some(h) = &a.hint {
            if !h.path.is_empty() && h.clock > h.path.len() - 1 {
                out.push(Violation::HintClockOutOfRange { agent: a.id });
            }
        }
    }

    out
}

/// Coarse label of what an activation did, for activation logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Request,
    Revert,
    Extend,
    Finish,
    Reset,
    Backtrack,
    Noop,
}

impl ActionKind {
    pub fn label(self) -> &'static str {
        match self {
            ActionKind::Request => "request",
            ActionKind::Revert => "revert",
            ActionKind::Extend => "extend",
            ActionKind::Finish => "finish",
            ActionKind::Reset => "reset",
            ActionKind::Backtrack => "backtrack",
            ActionKind::Noop => "noop",
        }
    }
}

/// One line of the activation log: the activated agent and its state
/// right after the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub agent: AgentId,
    pub kind: ActionKind,
    pub tail: NodeId,
    pub head: Option<NodeId>,
    pub mode: Mode,
}

impl fmt::Display for ActivationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.agent,
            self.kind.label(),
            self.tail,
            match self.head {
                Some(h) => h.to_string(),
                None => "-".to_string(),
            },
            self.mode.letter()
        )
    }
}
