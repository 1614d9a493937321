//! Baseline execution policies for offline MAPF plans under stochastic
//! delays: FSP advances the whole team in lockstep over plan steps; MCP
//! executes the plan while preserving its internal and per-node
//! temporal dependencies.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::graph::NodeId;
use crate::model::{AgentId, Mode};
use crate::offline::Plan;
use crate::simulator::{
    compute_metrics, AgentSnap, DelayModel, ExecutionTrace, Metrics, Termination,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy input error: {0}")]
    Invalid(String),
    #[error("plan breaks node-visit ordering: {0}")]
    Dependency(String),
}

/// Metrics plus the full trace of one policy execution.
#[derive(Debug, Clone)]
pub struct PolicyOutcome {
    pub metrics: Metrics,
    pub trace: ExecutionTrace,
}

/// Default timestep cap for policy runs: generous against the expected
/// slowdown at high delay bounds.
pub fn default_policy_bound(plan: &Plan) -> u64 {
    10 * plan.horizon().max(1) as u64 * plan.agent_count().max(1) as u64
}

/// Index of the last move in a path: the step after which it only rests.
fn last_move(path: &[NodeId]) -> usize {
    let last = *path.last().expect("nonempty path");
    match path.iter().rposition(|&v| v != last) {
        Some(t) => t + 1,
        None => 0,
    }
}

struct TraceBuilder {
    steps: Vec<Vec<AgentSnap>>,
    goal_first_visit: Vec<Option<usize>>,
    attempts: u64,
    goals: Vec<NodeId>,
}

impl TraceBuilder {
    fn new(positions: &[NodeId], goals: Vec<NodeId>) -> TraceBuilder {
        let mut b = TraceBuilder {
            steps: Vec::new(),
            goal_first_visit: vec![None; positions.len()],
            attempts: 0,
            goals,
        };
        b.record(positions, 0);
        b
    }

    fn record(&mut self, positions: &[NodeId], t: usize) {
        self.steps.push(
            positions
                .iter()
                .map(|&p| AgentSnap {
                    mode: Mode::Contracted,
                    tail: p,
                    head: None,
                })
                .collect(),
        );
        for (i, &p) in positions.iter().enumerate() {
            if p == self.goals[i] && self.goal_first_visit[i].is_none() {
                self.goal_first_visit[i] = Some(t);
            }
        }
    }

    fn finish(self, terminated: Termination, seed: u64, p_bar: f64) -> PolicyOutcome {
        let goals = self.goals.clone();
        let trace = ExecutionTrace {
            steps: self.steps,
            activations_total: self.attempts,
            goal_first_visit: self.goal_first_visit,
            terminated,
        };
        let metrics = compute_metrics(&trace, &goals, seed, p_bar);
        PolicyOutcome { metrics, trace }
    }
}

/// Fully synchronized execution: plan step `s + 1` begins only after
/// every agent has completed step `s`; each attempted move succeeds with
/// probability `1 - p_i` per timestep.
pub fn fsp_run(
    plan: &Plan,
    delays: &DelayModel,
    rng: &mut impl Rng,
    bound: u64,
    seed: u64,
) -> Result<PolicyOutcome, PolicyError> {
    let n = plan.agent_count();
    if delays.p.len() != n {
        return Err(PolicyError::Invalid(format!(
            "delay model covers {} agents, plan has {n}",
            delays.p.len()
        )));
    }
    let rest_after: Vec<usize> = plan.paths.iter().map(|p| last_move(p)).collect();
    let mut completed = vec![0usize; n];
    let mut positions: Vec<NodeId> = plan.starts();
    let mut builder = TraceBuilder::new(&positions, plan.goals());

    let done = |completed: &[usize]| -> bool {
        completed
            .iter()
            .zip(&rest_after)
            .all(|(&k, &m)| k >= m)
    };
    if done(&completed) {
        return Ok(builder.finish(Termination::Strong, seed, delays.p_bar));
    }

    for t in 1..=bound {
        let barrier = completed
            .iter()
            .zip(&rest_after)
            .filter(|(&k, &m)| k < m)
            .map(|(&k, _)| k)
            .min()
            .expect("some agent is still active");
        for i in 0..n {
            if completed[i] >= rest_after[i] || completed[i] != barrier {
                continue;
            }
            let step = completed[i] + 1;
            let (from, to) = (plan.paths[i][step - 1], plan.paths[i][step]);
            if from == to {
                completed[i] = step;
                continue;
            }
            builder.attempts += 1;
            if rng.random::<f64>() >= delays.p[i] {
                positions[i] = to;
                completed[i] = step;
            }
        }
        builder.record(&positions, t as usize);
        if done(&completed) {
            return Ok(builder.finish(Termination::Strong, seed, delays.p_bar));
        }
    }
    let weak = builder.goal_first_visit.iter().all(|v| v.is_some());
    Ok(builder.finish(
        if weak { Termination::WeakOnly } else { Termination::Failed },
        seed,
        delays.p_bar,
    ))
}

/// Temporal dependencies extracted from a plan: per-node visit queues in
/// plan-entry order, plus each agent's compressed visit sequence.
#[derive(Debug, Clone)]
pub struct DependencyTable {
    /// node -> visits `(agent, plan entry timestep)` in execution order.
    pub queues: BTreeMap<NodeId, Vec<(AgentId, u32)>>,
    /// Per agent: the visit sequence `(node, plan entry timestep)` with
    /// consecutive stays collapsed.
    pub visits: Vec<Vec<(NodeId, u32)>>,
}

/// Builds the dependency table, collapsing stays: an agent occupying a
/// node over consecutive steps enqueues once.
pub fn mcp_build(plan: &Plan) -> Result<DependencyTable, PolicyError> {
    if plan.paths.is_empty() {
        return Err(PolicyError::Invalid("plan has no agents".into()));
    }
    let horizon = plan.paths[0].len();
    if plan.paths.iter().any(|p| p.len() != horizon) || horizon == 0 {
        return Err(PolicyError::Invalid("ragged or empty plan".into()));
    }
    let mut visits: Vec<Vec<(NodeId, u32)>> = Vec::with_capacity(plan.paths.len());
    for path in &plan.paths {
        let mut seq = vec![(path[0], 0u32)];
        for (t, &v) in path.iter().enumerate().skip(1) {
            if v != seq.last().unwrap().0 {
                seq.push((v, t as u32));
            }
        }
        visits.push(seq);
    }

    // Visit intervals per node: entry time and exit time (entry of the
    // agent's next visit; final visits never exit).
    let mut queues: BTreeMap<NodeId, Vec<(AgentId, u32)>> = BTreeMap::new();
    let mut intervals: BTreeMap<NodeId, Vec<(u32, Option<u32>, AgentId)>> = BTreeMap::new();
    for (i, seq) in visits.iter().enumerate() {
        for (k, &(node, entry)) in seq.iter().enumerate() {
            let exit = seq.get(k + 1).map(|&(_, e)| e);
            intervals.entry(node).or_default().push((entry, exit, AgentId(i as u32)));
        }
    }
    for (node, mut list) in intervals {
        list.sort();
        for pair in list.windows(2) {
            let (entry_a, exit_a, agent_a) = pair[0];
            let (entry_b, _, agent_b) = pair[1];
            match exit_a {
                None => {
                    return Err(PolicyError::Dependency(format!(
                        "agent {agent_a} rests on node {node} before agent {agent_b} visits it"
                    )));
                }
                Some(exit_a) if entry_b <= exit_a => {
                    return Err(PolicyError::Dependency(format!(
                        "visits of node {node} by {agent_a} (t={entry_a}) and {agent_b} \
                         (t={entry_b}) violate following order"
                    )));
                }
                _ => {}
            }
        }
        queues.insert(node, list.into_iter().map(|(e, _, a)| (a, e)).collect());
    }
    Ok(DependencyTable { queues, visits })
}

/// Executes the plan preserving its temporal dependencies: an agent
/// attempts its next move only once every earlier visitor of the target
/// node has come and gone (departure move completed).
pub fn mcp_run(
    plan: &Plan,
    delays: &DelayModel,
    rng: &mut impl Rng,
    bound: u64,
    seed: u64,
) -> Result<PolicyOutcome, PolicyError> {
    let n = plan.agent_count();
    if delays.p.len() != n {
        return Err(PolicyError::Invalid(format!(
            "delay model covers {} agents, plan has {n}",
            delays.p.len()
        )));
    }
    let table = mcp_build(plan)?;

    // Rank of each visit within its node queue.
    let rank: Vec<Vec<usize>> = table
        .visits
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            seq.iter()
                .map(|&(node, entry)| {
                    table.queues[&node]
                        .iter()
                        .position(|&(a, e)| a == AgentId(i as u32) && e == entry)
                        .expect("every visit is queued")
                })
                .collect()
        })
        .collect();

    let mut released: BTreeMap<NodeId, usize> = table.queues.keys().map(|&v| (v, 0)).collect();
    let mut at_visit = vec![0usize; n];
    let mut positions: Vec<NodeId> = plan.starts();
    let mut builder = TraceBuilder::new(&positions, plan.goals());

    let done = |at_visit: &[usize]| -> bool {
        at_visit
            .iter()
            .zip(&table.visits)
            .all(|(&q, s)| q + 1 == s.len())
    };
    if done(&at_visit) {
        return Ok(builder.finish(Termination::Strong, seed, delays.p_bar));
    }

    for t in 1..=bound {
        // Eligibility from the start-of-timestep state; releases take
        // effect next timestep.
        let eligible: Vec<usize> = (0..n)
            .filter(|&i| {
                at_visit[i] + 1 < table.visits[i].len() && {
                    let (target, _) = table.visits[i][at_visit[i] + 1];
                    rank[i][at_visit[i] + 1] == released[&target]
                }
            })
            .collect();
        let mut departures: Vec<NodeId> = Vec::new();
        for i in eligible {
            builder.attempts += 1;
            if rng.random::<f64>() >= delays.p[i] {
                let from = table.visits[i][at_visit[i]].0;
                at_visit[i] += 1;
                positions[i] = table.visits[i][at_visit[i]].0;
                departures.push(from);
            }
        }
        for node in departures {
            *released.get_mut(&node).expect("departed node is queued") += 1;
        }
        builder.record(&positions, t as usize);
        if done(&at_visit) {
            return Ok(builder.finish(Termination::Strong, seed, delays.p_bar));
        }
    }
    let weak = builder.goal_first_visit.iter().all(|v| v.is_some());
    Ok(builder.finish(
        if weak { Termination::WeakOnly } else { Termination::Failed },
        seed,
        delays.p_bar,
    ))
}
