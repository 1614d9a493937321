//! Per-activation decision logic: Greedy, Causal-PIBT, and the
//! plan-hinted Causal-PIBT variant.
//!
//! Every function here is a deterministic function of the configuration
//! and the activated agent; the scheduler owns all randomness. One call
//! to [`PlannerKind::activate`] is one atomic activation and may update
//! other agents' states (an interaction).

use std::collections::BTreeSet;

use crate::graph::{Graph, NodeId, UNREACHABLE};
use crate::model::{
    ActionKind, ActivationRecord, AgentId, AgentState, Configuration, HintState, Mode, Priority,
};
use crate::offline::Plan;

/// Which decision rule drives activations.
#[derive(Debug, Clone)]
pub enum PlannerKind {
    /// Basic actions only: request the neighbor nearest to the goal,
    /// extend when free, finish. With `faithful` the agent keeps
    /// requesting even while resting on its goal (and so oscillates);
    /// by default a contracted agent at its goal does nothing, which
    /// makes strong termination reachable.
    Greedy { faithful: bool },
    CausalPibt,
    /// Causal-PIBT following a stay-compressed offline plan whenever
    /// possible. Requires hints installed via [`install_hints`].
    CausalPibtHinted(Plan),
}

impl PlannerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlannerKind::Greedy { .. } => "greedy",
            PlannerKind::CausalPibt => "causal_pibt",
            PlannerKind::CausalPibtHinted(_) => "causal_pibt_plus",
        }
    }

    /// Runs one atomic activation of agent `i`.
    pub fn activate(&self, graph: &Graph, config: &mut Configuration, i: AgentId) -> Activation {
        match self {
            PlannerKind::Greedy { faithful } => greedy_activate(graph, config, i, *faithful),
            PlannerKind::CausalPibt => causal_pibt_activate(graph, config, i, false),
            PlannerKind::CausalPibtHinted(_) => causal_pibt_activate(graph, config, i, true),
        }
    }
}

/// Result of one activation: whether any agent state changed, and the
/// log record of what the activated agent did.
#[derive(Debug, Clone)]
pub struct Activation {
    pub changed: bool,
    pub record: ActivationRecord,
}

fn record_for(config: &Configuration, i: AgentId, kind: ActionKind) -> ActivationRecord {
    let a = config.agent(i);
    ActivationRecord {
        agent: i,
        kind,
        tail: a.tail,
        head: a.head,
        mode: a.mode,
    }
}

fn neighborhood(graph: &Graph, tail: NodeId) -> BTreeSet<NodeId> {
    let mut set: BTreeSet<NodeId> = graph.neighbors(tail).iter().copied().collect();
    set.insert(tail);
    set
}

/// Installs stay-compressed hint paths from `plan` into every agent.
pub fn install_hints(config: &mut Configuration, plan: &Plan) {
    for i in 0..config.agent_count() {
        let path = compress_plan(&plan.paths[i]);
        config.agent_mut(AgentId(i as u32)).hint = Some(HintState { path, clock: 0 });
    }
}

/// Removes consecutive duplicate nodes, keeping order: the stay action
/// is meaningless without a global clock.
pub fn compress_plan(path: &[NodeId]) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(path.len());
    for &v in path {
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Candidate in `set` nearest to `goal`; ties broken by smaller node id.
pub fn nearest_to_goal(graph: &Graph, set: &BTreeSet<NodeId>, goal: NodeId) -> NodeId {
    let table = graph.distance_table(goal);
    *set.iter()
        .min_by_key(|v| (table[v.idx()], v.0))
        .expect("nonempty candidate set")
}

/// Hinted node selection: follow the compressed path when possible,
/// otherwise steer toward the nearest node on its remainder; falls back
/// to the plain nearest-to-goal rule once the path is exhausted.
pub fn hinted_select_node(graph: &Graph, agent: &AgentState) -> NodeId {
    let hint = agent.hint.as_ref().expect("hinted agent carries a hint");
    let path = &hint.path;
    if path.is_empty() || hint.clock >= path.len() - 1 {
        return nearest_to_goal(graph, &agent.candidates, agent.goal);
    }
    let next = path[hint.clock + 1];
    if agent.tail == path[hint.clock] && agent.candidates.contains(&next) {
        return next;
    }
    // Nearest candidate to any node on the rest of the path; ties broken
    // by distance to the goal, then node id.
    let remainder = &path[hint.clock + 1..];
    let candidates: Vec<NodeId> = agent.candidates.iter().copied().collect();
    let mut best_cost = vec![UNREACHABLE; candidates.len()];
    for &u in remainder {
        let table = graph.distance_table(u);
        for (slot, v) in best_cost.iter_mut().zip(&candidates) {
            *slot = (*slot).min(table[v.idx()]);
        }
    }
    let goal_table = graph.distance_table(agent.goal);
    let best = candidates
        .iter()
        .enumerate()
        .min_by_key(|(k, v)| (best_cost[*k], goal_table[v.idx()], v.0))
        .expect("nonempty candidate set");
    *best.1
}

/// Advances a hinted agent's internal clock to the earliest remaining
/// plan position matching its head; leaves it alone otherwise.
pub fn advance_hint_clock(agent: &mut AgentState) {
    let Some(head) = agent.head else { return };
    let Some(hint) = agent.hint.as_mut() else { return };
    if hint.clock + 1 >= hint.path.len() {
        return;
    }
    if let Some(off) = hint.path[hint.clock + 1..].iter().position(|&v| v == head) {
        hint.clock += 1 + off;
    }
}

// ---------------------------------------------------------------------------
// Greedy
// ---------------------------------------------------------------------------

fn greedy_activate(
    graph: &Graph,
    config: &mut Configuration,
    i: AgentId,
    faithful: bool,
) -> Activation {
    match config.agent(i).mode {
        Mode::Contracted => {
            let (tail, goal) = (config.agent(i).tail, config.agent(i).goal);
            if !faithful && tail == goal {
                return Activation {
                    changed: false,
                    record: record_for(config, i, ActionKind::Noop),
                };
            }
            let neigh: BTreeSet<NodeId> = graph.neighbors(tail).iter().copied().collect();
            if neigh.is_empty() {
                return Activation {
                    changed: false,
                    record: record_for(config, i, ActionKind::Noop),
                };
            }
            let u = nearest_to_goal(graph, &neigh, goal);
            let a = config.agent_mut(i);
            a.head = Some(u);
            a.mode = Mode::Requesting;
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Request),
            }
        }
        Mode::Requesting => {
            let head = config.agent(i).head.expect("requesting head");
            if config.occupied(head) {
                return Activation {
                    changed: false,
                    record: record_for(config, i, ActionKind::Noop),
                };
            }
            config.agent_mut(i).mode = Mode::Extended;
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Extend),
            }
        }
        Mode::Extended => {
            let a = config.agent_mut(i);
            a.tail = a.head.take().expect("extended head");
            a.mode = Mode::Contracted;
            reset(graph, config, i);
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Finish),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Causal-PIBT
// ---------------------------------------------------------------------------

/// Clears the searched set, refills candidates from the current tail's
/// neighborhood, and restores the temporal priority.
pub fn reset(graph: &Graph, config: &mut Configuration, i: AgentId) -> bool {
    let fresh = neighborhood(graph, config.agent(i).tail);
    let a = config.agent_mut(i);
    let changed = !a.searched.is_empty() || a.candidates != fresh || a.ptmp != a.pori;
    a.searched.clear();
    a.candidates = fresh;
    a.ptmp = a.pori;
    changed
}

/// Detaches every child of `i`, making each its own root.
pub fn release_children(config: &mut Configuration, i: AgentId) -> bool {
    let children: Vec<AgentId> = config.agent(i).children.iter().copied().collect();
    if children.is_empty() {
        return false;
    }
    config.agent_mut(i).children.clear();
    for c in children {
        config.agent_mut(c).parent = c;
    }
    true
}

/// Key realizing the total order used by winner determination and
/// priority inheritance target selection.
fn ptmp_key(a: &AgentState) -> (Priority, Priority, AgentId) {
    (a.ptmp, a.pori, a.id)
}

/// If some requester targets this agent's tail with a strictly higher
/// temporal priority, joins that requester's tree: inherits its priority
/// and searched set, and reinitializes the candidate set.
pub fn priority_inheritance(graph: &Graph, config: &mut Configuration, i: AgentId) -> bool {
    let tail = config.agent(i).tail;
    let requester = config
        .agents()
        .iter()
        .filter(|a| a.mode == Mode::Requesting && a.head == Some(tail))
        .max_by_key(|a| ptmp_key(a))
        .map(|a| a.id);
    let Some(k) = requester else { return false };
    if config.agent(k).ptmp <= config.agent(i).ptmp {
        return false;
    }

    release_children(config, i);
    let old_parent = config.agent(i).parent;
    config.agent_mut(old_parent).children.remove(&i);
    config.agent_mut(i).parent = k;
    config.agent_mut(k).children.insert(i);

    let inherited_ptmp = config.agent(k).ptmp;
    let mut searched = config.agent(k).searched.clone();
    let fresh = neighborhood(graph, tail);
    let a = config.agent_mut(i);
    if let Some(h) = a.head {
        searched.insert(h);
    }
    a.ptmp = inherited_ptmp;
    a.candidates = fresh.difference(&searched).copied().collect();
    a.searched = searched;
    true
}

fn causal_pibt_activate(
    graph: &Graph,
    config: &mut Configuration,
    i: AgentId,
    hinted: bool,
) -> Activation {
    let mut changed = false;
    match config.agent(i).mode {
        Mode::Contracted => {
            // Relay release: a stuck root is freed when its parent moved
            // away; pass the release on to the children and reinitialize.
            if config.agent(i).candidates.is_empty() && config.agent(i).parent == i {
                changed |= release_children(config, i);
                changed |= reset(graph, config, i);
            }
            changed |= priority_inheritance(graph, config, i);
            if config.agent(i).candidates.is_empty() {
                // Backtracking: revert the parent to contracted while
                // propagating the searched nodes.
                let j = config.agent(i).parent;
                let tail = config.agent(i).tail;
                if config.agent(j).head == Some(tail) {
                    let searched = config.agent(i).searched.clone();
                    let parent = config.agent_mut(j);
                    parent.searched.extend(searched);
                    parent.candidates = parent
                        .candidates
                        .difference(&parent.searched)
                        .copied()
                        .collect();
                    parent.head = None;
                    parent.mode = Mode::Contracted;
                    return Activation {
                        changed: true,
                        record: record_for(config, i, ActionKind::Backtrack),
                    };
                }
                return Activation {
                    changed,
                    record: record_for(config, i, ActionKind::Noop),
                };
            }
            let u = if hinted {
                hinted_select_node(graph, config.agent(i))
            } else {
                nearest_to_goal(graph, &config.agent(i).candidates, config.agent(i).goal)
            };
            if u == config.agent(i).tail {
                changed |= release_children(config, i);
                changed |= reset(graph, config, i);
                return Activation {
                    changed,
                    record: record_for(config, i, ActionKind::Reset),
                };
            }
            let a = config.agent_mut(i);
            a.searched.insert(u);
            // The tail joins the searched set for propagation through the
            // tree, but stays selectable locally: picking it later resets
            // the agent, which is how a blocked agent waits and retries.
            a.searched.insert(a.tail);
            a.candidates.remove(&u);
            a.head = Some(u);
            a.mode = Mode::Requesting;
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Request),
            }
        }
        Mode::Requesting => {
            changed |= priority_inheritance(graph, config, i);
            let head = config.agent(i).head.expect("requesting head");
            let parent = config.agent(i).parent;
            // Deadlock resolution: the request closes a circle once the
            // head shows up in the parent's searched set.
            if parent != i && config.agent(parent).searched.contains(&head) {
                let a = config.agent_mut(i);
                a.head = None;
                a.mode = Mode::Contracted;
                return Activation {
                    changed: true,
                    record: record_for(config, i, ActionKind::Revert),
                };
            }
            if config.occupied(head) {
                return Activation {
                    changed,
                    record: record_for(config, i, ActionKind::Noop),
                };
            }
            // Winner determination among all requesters of this head.
            let winner = config
                .agents()
                .iter()
                .filter(|a| a.mode == Mode::Requesting && a.head == Some(head))
                .max_by_key(|a| ptmp_key(a))
                .map(|a| a.id)
                .expect("requesters include the activated agent");
            let losers: Vec<AgentId> = config
                .agents()
                .iter()
                .filter(|a| {
                    a.mode == Mode::Requesting && a.head == Some(head) && a.id != winner
                })
                .map(|a| a.id)
                .collect();
            for j in losers {
                let a = config.agent_mut(j);
                a.head = None;
                a.mode = Mode::Contracted;
                changed = true;
            }
            if winner != i {
                return Activation {
                    changed,
                    record: record_for(config, i, ActionKind::Revert),
                };
            }
            // Prepare the move: isolate from the tree, then extend.
            let parent = config.agent(i).parent;
            config.agent_mut(parent).children.remove(&i);
            config.agent_mut(i).parent = i;
            release_children(config, i);
            config.agent_mut(i).mode = Mode::Extended;
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Extend),
            }
        }
        Mode::Extended => {
            if hinted {
                let a = config.agent_mut(i);
                advance_hint_clock(a);
            }
            let a = config.agent_mut(i);
            a.tail = a.head.take().expect("extended head");
            a.mode = Mode::Contracted;
            if config.agent(i).tail == config.agent(i).goal {
                let epoch = config.next_drop_epoch();
                config.agent_mut(i).pori.epoch = epoch;
            }
            reset(graph, config, i);
            Activation {
                changed: true,
                record: record_for(config, i, ActionKind::Finish),
            }
        }
    }
}
