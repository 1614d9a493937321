//! Shared test support: an independent joint-state-space optimum oracle
//! and fixture helpers. The oracle never touches the solver code paths
//! it is used to check.

use std::collections::{BinaryHeap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use tisim_core::graph::{load_map, load_scenario, Graph, Instance, NodeId};
use tisim_core::offline::ConflictMode;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_fixture(map: &str, scen: &str, n: usize) -> Instance {
    let text = std::fs::read_to_string(fixture_path(map)).expect("fixture map");
    let graph = Arc::new(load_map(&text, map.trim_end_matches(".map")).expect("parse map"));
    let scen_text = std::fs::read_to_string(fixture_path(scen)).expect("fixture scen");
    load_scenario(&scen_text, &graph, n).expect("parse scenario")
}

/// Exact minimal sum-of-cost over the joint configuration space, by
/// Dijkstra over `(positions, resting-flags)` states. An agent may stop
/// paying only by flipping to rest on its goal, which pins it there for
/// good; flips are zero-cost edges. Suitable for a handful of agents on
/// a handful of nodes.
pub fn joint_optimal_soc(instance: &Instance, mode: ConflictMode) -> Option<u64> {
    let graph: &Graph = &instance.graph;
    let n = instance.agent_count();
    assert!(n <= 4, "oracle is exponential in the agent count");

    type State = (Vec<u32>, u8);
    let start: State = (instance.starts.iter().map(|v| v.0).collect(), 0);
    let all_done: u8 = (1u8 << n) - 1;

    let mut dist: HashMap<State, u64> = HashMap::new();
    let mut heap: BinaryHeap<(std::cmp::Reverse<u64>, State)> = BinaryHeap::new();
    dist.insert(start.clone(), 0);
    heap.push((std::cmp::Reverse(0), start));

    while let Some((std::cmp::Reverse(d), state)) = heap.pop() {
        if dist.get(&state) != Some(&d) {
            continue;
        }
        let (ref positions, done) = state;
        if done == all_done {
            return Some(d);
        }

        let mut push = |next: State, cost: u64, dist: &mut HashMap<State, u64>,
                        heap: &mut BinaryHeap<(std::cmp::Reverse<u64>, State)>| {
            let nd = d + cost;
            if dist.get(&next).is_none_or(|&old| nd < old) {
                dist.insert(next.clone(), nd);
                heap.push((std::cmp::Reverse(nd), next));
            }
        };

        // Zero-cost flips: an agent standing on its goal may settle.
        for i in 0..n {
            if done & (1 << i) == 0 && positions[i] == instance.goals[i].0 {
                push(
                    (positions.clone(), done | (1 << i)),
                    0,
                    &mut dist,
                    &mut heap,
                );
            }
        }

        // One synchronous timestep: every unfinished agent stays or
        // moves; finished agents are pinned.
        let options: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                if done & (1 << i) != 0 {
                    vec![positions[i]]
                } else {
                    let mut opts = vec![positions[i]];
                    opts.extend(graph.neighbors(NodeId(positions[i])).iter().map(|v| v.0));
                    opts
                }
            })
            .collect();
        let active = (0..n).filter(|i| done & (1 << i) == 0).count() as u64;

        let mut choice = vec![0usize; n];
        'joint: loop {
            let next: Vec<u32> = (0..n).map(|i| options[i][choice[i]]).collect();
            let mut valid = true;
            'check: for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    if next[i] == next[j] {
                        valid = false;
                        break 'check;
                    }
                    match mode {
                        ConflictMode::Following => {
                            if next[i] == positions[j] {
                                valid = false;
                                break 'check;
                            }
                        }
                        ConflictMode::Swap => {
                            if next[i] == positions[j]
                                && next[j] == positions[i]
                                && next[i] != positions[i]
                            {
                                valid = false;
                                break 'check;
                            }
                        }
                    }
                }
            }
            if valid {
                push((next, done), active, &mut dist, &mut heap);
            }
            // Advance the mixed-radix counter over joint moves.
            let mut k = 0;
            loop {
                if k == n {
                    break 'joint;
                }
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }
    None
}

/// Every ordered placement of `agents` distinct starts and goals on a
/// graph with `nodes` nodes, as index tuples.
pub fn placements(nodes: u32, agents: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(agents);
    fn recurse(nodes: u32, agents: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if current.len() == agents {
            out.push(current.clone());
            return;
        }
        for v in 0..nodes {
            if !current.contains(&v) {
                current.push(v);
                recurse(nodes, agents, current, out);
                current.pop();
            }
        }
    }
    recurse(nodes, agents, &mut current, &mut out);
    out
}
