//! Exhaustive state-space exploration for tiny instances: enumerates
//! every configuration reachable under any activation order, then checks
//! goal reachability from everywhere, persistence of request cycles
//! along fair schedules, and the structural invariants.
//!
//! Configurations are deduplicated up to an order-isomorphism of their
//! priority values: all planner decisions compare priorities, never read
//! their magnitudes, so ranking them keeps the explored system finite
//! even though goal-drop epochs decrease without bound.

use std::collections::{HashMap, VecDeque};

use crate::graph::Instance;
use crate::model::{
    check_config_invariants, AgentId, Configuration, Mode, Priority, Violation,
};
use crate::planners::{install_hints, PlannerKind};
use crate::simulator::SimError;

/// Outcome of an exhaustive exploration.
#[derive(Debug, Clone)]
pub struct ExploreReport {
    /// False when `max_configs` cut the enumeration short; the other
    /// findings are then only partial.
    pub complete: bool,
    pub configs: usize,
    /// Every reachable configuration can still reach, for every agent, a
    /// configuration with that agent contracted on its goal.
    pub reachability_ok: bool,
    pub agents_without_witness: Vec<AgentId>,
    /// Agents of a request cycle that can persist forever under some
    /// fair activation schedule, if any.
    pub persistent_deadlock: Option<Vec<AgentId>>,
    pub invariant_violations: usize,
    pub forest_violations: usize,
    /// Largest number of activations needed, from any configuration
    /// containing a request cycle, to reach one without any cycle.
    pub max_recovery_activations: Option<u64>,
}

impl ExploreReport {
    pub fn clean(&self) -> bool {
        self.complete
            && self.reachability_ok
            && self.persistent_deadlock.is_none()
            && self.invariant_violations == 0
    }
}

/// Canonical byte encoding of a configuration with priorities replaced
/// by dense ranks.
fn canonical_key(config: &Configuration) -> Vec<u8> {
    let mut priorities: Vec<Priority> = Vec::with_capacity(config.agent_count() * 2);
    for a in config.agents() {
        priorities.push(a.pori);
        priorities.push(a.ptmp);
    }
    priorities.sort();
    priorities.dedup();
    let rank = |p: Priority| priorities.binary_search(&p).unwrap() as u32;

    let mut key = Vec::with_capacity(config.agent_count() * 32);
    let mut push = |v: u32| key.extend_from_slice(&v.to_le_bytes());
    for a in config.agents() {
        push(match a.mode {
            Mode::Contracted => 0,
            Mode::Requesting => 1,
            Mode::Extended => 2,
        });
        push(a.tail.0);
        push(a.head.map_or(u32::MAX, |h| h.0));
        push(a.parent.0);
        push(a.children.len() as u32);
        for c in &a.children {
            push(c.0);
        }
        push(a.candidates.len() as u32);
        for v in &a.candidates {
            push(v.0);
        }
        push(a.searched.len() as u32);
        for v in &a.searched {
            push(v.0);
        }
        push(rank(a.pori));
        push(rank(a.ptmp));
        push(a.hint.as_ref().map_or(u32::MAX, |h| h.clock as u32));
    }
    key
}

/// All request cycles of a configuration, each as a sorted list of
/// `(agent, head)` pairs. Cycles in the requesting-successor graph are
/// vertex-disjoint because tails are distinct.
fn request_cycles(config: &Configuration) -> Vec<Vec<(AgentId, u32)>> {
    let mut tail_owner: HashMap<u32, AgentId> = HashMap::new();
    for a in config.agents() {
        if a.mode == Mode::Requesting {
            tail_owner.insert(a.tail.0, a.id);
        }
    }
    let successor = |i: AgentId| -> Option<AgentId> {
        let a = config.agent(i);
        if a.mode != Mode::Requesting {
            return None;
        }
        tail_owner.get(&a.head.expect("requesting head").0).copied()
    };
    let n = config.agent_count();
    let mut color = vec![0u8; n];
    let mut cycles = Vec::new();
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut walk = Vec::new();
        let mut cur = AgentId(start as u32);
        loop {
            if color[cur.idx()] == 1 {
                if let Some(pos) = walk.iter().position(|&a| a == cur) {
                    let mut cycle: Vec<(AgentId, u32)> = walk[pos..]
                        .iter()
                        .map(|&a| (a, config.agent(a).head.unwrap().0))
                        .collect();
                    cycle.sort();
                    cycles.push(cycle);
                }
                break;
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
    cycles
}

const UNEXPANDED: u32 = u32::MAX;

/// Breadth-first enumeration of every configuration reachable by any
/// single-agent activation order; move completions branch like any other
/// activation, which abstracts the delay model. States carry the
/// per-agent visited-goal flags, since weak termination is a property of
/// the history, not of the configuration alone.
pub fn exhaustive_explore(
    instance: &Instance,
    planner: &PlannerKind,
    max_configs: usize,
) -> Result<ExploreReport, SimError> {
    let graph = instance.graph.as_ref();
    let n = instance.agent_count();
    let mut initial = Configuration::initial(instance);
    if let PlannerKind::CausalPibtHinted(plan) = planner {
        if !plan.matches_instance(instance) {
            return Err(SimError::PlanMismatch(
                "plan starts/goals differ from the instance".into(),
            ));
        }
        install_hints(&mut initial, plan);
    }

    let visited_now = |config: &Configuration, mut flags: u8| -> u8 {
        for a in config.agents() {
            if a.at_goal() {
                flags |= 1 << a.id.idx();
            }
        }
        flags
    };
    let initial_flags = visited_now(&initial, 0);

    let mut ids: HashMap<(Vec<u8>, u8), u32> = HashMap::new();
    let mut configs: Vec<Configuration> = Vec::new();
    let mut flags: Vec<u8> = Vec::new();
    let mut successors: Vec<Vec<u32>> = Vec::new();
    let mut queue: VecDeque<u32> = VecDeque::new();
    let mut complete = true;

    ids.insert((canonical_key(&initial), initial_flags), 0);
    configs.push(initial);
    flags.push(initial_flags);
    successors.push(vec![UNEXPANDED; n]);
    queue.push_back(0);

    while let Some(idx) = queue.pop_front() {
        for agent in 0..n {
            let mut next = configs[idx as usize].clone();
            planner.activate(graph, &mut next, AgentId(agent as u32));
            let next_flags = visited_now(&next, flags[idx as usize]);
            let key = (canonical_key(&next), next_flags);
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    if configs.len() >= max_configs {
                        complete = false;
                        continue;
                    }
                    let id = configs.len() as u32;
                    ids.insert(key, id);
                    configs.push(next);
                    flags.push(next_flags);
                    successors.push(vec![UNEXPANDED; n]);
                    queue.push_back(id);
                    id
                }
            };
            successors[idx as usize][agent] = id;
        }
    }

    // Structural invariants on every reachable configuration.
    let mut invariant_violations = 0;
    let mut forest_violations = 0;
    for c in &configs {
        for v in check_config_invariants(c, graph) {
            invariant_violations += 1;
            if matches!(v, Violation::ParentForestCycle { .. }) {
                forest_violations += 1;
            }
        }
    }

    if !complete {
        return Ok(ExploreReport {
            complete,
            configs: configs.len(),
            reachability_ok: false,
            agents_without_witness: Vec::new(),
            persistent_deadlock: None,
            invariant_violations,
            forest_violations,
            max_recovery_activations: None,
        });
    }

    let total = configs.len();
    let mut reverse: Vec<Vec<u32>> = vec![Vec::new(); total];
    for (from, succ) in successors.iter().enumerate() {
        for &to in succ {
            reverse[to as usize].push(from as u32);
        }
    }
    let backward_closure = |seeds: Vec<u32>| -> Vec<bool> {
        let mut marked = vec![false; total];
        let mut queue: VecDeque<u32> = VecDeque::new();
        for s in seeds {
            if !marked[s as usize] {
                marked[s as usize] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &p in &reverse[v as usize] {
                if !marked[p as usize] {
                    marked[p as usize] = true;
                    queue.push_back(p);
                }
            }
        }
        marked
    };

    // Reachability witness: from every reachable state, some state with
    // every visited-goal flag set must stay reachable. Agents listed are
    // those whose missing flag blocks some stuck state.
    let all_flags: u8 = (1u8 << n) - 1;
    let weak_states: Vec<u32> = (0..total as u32)
        .filter(|&i| flags[i as usize] == all_flags)
        .collect();
    let marked = backward_closure(weak_states);
    let mut agents_without_witness = Vec::new();
    for agent in 0..n {
        if (0..total).any(|i| !marked[i] && flags[i] & (1 << agent) == 0) {
            agents_without_witness.push(AgentId(agent as u32));
        }
    }
    let reachability_ok = marked.iter().all(|&m| m);

    // Deadlock persistence, per concrete cycle: a fair schedule can keep
    // the cycle alive forever iff some strongly connected component of
    // the cycle-preserving subgraph contains an activation edge of every
    // agent.
    let per_config_cycles: Vec<Vec<Vec<(AgentId, u32)>>> =
        configs.iter().map(request_cycles).collect();
    let mut signatures: HashMap<Vec<(AgentId, u32)>, Vec<u32>> = HashMap::new();
    for (i, cycles) in per_config_cycles.iter().enumerate() {
        for cycle in cycles {
            signatures.entry(cycle.clone()).or_default().push(i as u32);
        }
    }
    let mut persistent_deadlock = None;
    'outer: for (signature, members) in &signatures {
        let member_set: Vec<bool> = {
            let mut v = vec![false; total];
            for &m in members {
                v[m as usize] = true;
            }
            v
        };
        for scc in sccs_within(&successors, &member_set) {
            let in_scc = {
                let mut v = vec![false; total];
                for &m in &scc {
                    v[m as usize] = true;
                }
                v
            };
            let fair = (0..n).all(|agent| {
                scc.iter()
                    .any(|&u| in_scc[successors[u as usize][agent] as usize])
            });
            if fair {
                persistent_deadlock = Some(signature.iter().map(|&(a, _)| a).collect());
                break 'outer;
            }
        }
    }

    // Recovery depth: activations needed to shed all request cycles.
    let cycle_free: Vec<u32> = (0..total as u32)
        .filter(|&i| per_config_cycles[i as usize].is_empty())
        .collect();
    let max_recovery_activations = {
        let mut dist = vec![u64::MAX; total];
        let mut queue: VecDeque<u32> = VecDeque::new();
        for &s in &cycle_free {
            dist[s as usize] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize];
            for &p in &reverse[v as usize] {
                if dist[p as usize] == u64::MAX {
                    dist[p as usize] = d + 1;
                    queue.push_back(p);
                }
            }
        }
        if dist.iter().any(|&d| d == u64::MAX) {
            None
        } else {
            dist.iter().copied().max()
        }
    };

    Ok(ExploreReport {
        complete,
        configs: total,
        reachability_ok,
        agents_without_witness,
        persistent_deadlock,
        invariant_violations,
        forest_violations,
        max_recovery_activations,
    })
}

/// Strongly connected components of the subgraph induced by `member`,
/// via iterative Tarjan. Singleton components count only when they carry
/// a self-loop.
fn sccs_within(successors: &[Vec<u32>], member: &[bool]) -> Vec<Vec<u32>> {
    let total = successors.len();
    let mut index = vec![u32::MAX; total];
    let mut low = vec![0u32; total];
    let mut on_stack = vec![false; total];
    let mut stack: Vec<u32> = Vec::new();
    let mut counter = 0u32;
    let mut out = Vec::new();

    for root in 0..total {
        if !member[root] || index[root] != u32::MAX {
            continue;
        }
        // (node, edge cursor)
        let mut call: Vec<(u32, usize)> = vec![(root as u32, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root as u32);
        on_stack[root] = true;

        while let Some(&(v, cursor)) = call.last() {
            let succ = &successors[v as usize];
            if cursor < succ.len() {
                call.last_mut().unwrap().1 += 1;
                let w = succ[cursor];
                if !member[w as usize] {
                    continue;
                }
                if index[w as usize] == u32::MAX {
                    index[w as usize] = counter;
                    low[w as usize] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    call.push((w, 0));
                } else if on_stack[w as usize] {
                    low[v as usize] = low[v as usize].min(index[w as usize]);
                }
            } else {
                call.pop();
                if let Some(&(p, _)) = call.last() {
                    low[p as usize] = low[p as usize].min(low[v as usize]);
                }
                if low[v as usize] == index[v as usize] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w as usize] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    if component.len() > 1
                        || successors[v as usize]
                            .iter()
                            .any(|&w| w == v)
                    {
                        out.push(component);
                    }
                }
            }
        }
    }
    out
}
