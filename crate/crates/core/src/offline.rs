//! Offline MAPF solving: optimal CBS and bounded-suboptimal ECBS with
//! selectable conflict semantics, plan validation, plan metrics, and the
//! plan file format consumed by the execution policies and hint planner.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::graph::{Graph, Instance, NodeId, UNREACHABLE};

/// Which conflicts a plan must avoid. Following semantics forbid
/// strictly more than swap semantics: an agent may never enter a node
/// that any other agent occupied on the previous timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictMode {
    Swap,
    Following,
}

impl ConflictMode {
    pub fn label(self) -> &'static str {
        match self {
            ConflictMode::Swap => "swap",
            ConflictMode::Following => "following",
        }
    }
}

impl std::str::FromStr for ConflictMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "swap" => Ok(ConflictMode::Swap),
            "following" => Ok(ConflictMode::Following),
            other => Err(format!("unknown conflict mode `{other}`")),
        }
    }
}

/// A timed joint plan: one node sequence per agent, all padded to a
/// common horizon by repeating the goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub paths: Vec<Vec<NodeId>>,
}

impl Plan {
    /// Pads per-agent paths to a common horizon with goal stays.
    pub fn from_paths(mut paths: Vec<Vec<NodeId>>) -> Plan {
        let horizon = paths.iter().map(|p| p.len()).max().unwrap_or(1);
        for p in &mut paths {
            let last = *p.last().expect("nonempty path");
            p.resize(horizon, last);
        }
        Plan { paths }
    }

    pub fn agent_count(&self) -> usize {
        self.paths.len()
    }

    /// Padded horizon T: every path holds T + 1 nodes.
    pub fn horizon(&self) -> usize {
        self.paths.first().map_or(0, |p| p.len() - 1)
    }

    pub fn starts(&self) -> Vec<NodeId> {
        self.paths.iter().map(|p| p[0]).collect()
    }

    pub fn goals(&self) -> Vec<NodeId> {
        self.paths.iter().map(|p| *p.last().unwrap()).collect()
    }

    /// Checks that the plan starts at the instance's starts and ends at
    /// its goals.
    pub fn matches_instance(&self, instance: &Instance) -> bool {
        self.agent_count() == instance.agent_count()
            && self.starts() == instance.starts
            && self.goals() == instance.goals
    }
}

/// First violation found by [`validate_plan`], or a structural defect.
#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("vertex conflict: agents {a} and {b} at node {node}, t={time}")]
    VertexConflict { a: usize, b: usize, node: NodeId, time: usize },
    #[error("swap conflict: agents {a} and {b} across an edge, t={time}")]
    SwapConflict { a: usize, b: usize, time: usize },
    #[error("following conflict: agent {a} enters node {node} at t={time} occupied by {b} at t={}", time - 1)]
    FollowingConflict { a: usize, b: usize, node: NodeId, time: usize },
}

/// Validates plan structure and conflict-freedom under `mode`.
pub fn validate_plan(plan: &Plan, graph: &Graph, mode: ConflictMode) -> Result<(), PlanError> {
    if plan.paths.is_empty() {
        return Err(PlanError::Structural("plan has no agents".into()));
    }
    let horizon = plan.paths[0].len();
    if horizon == 0 {
        return Err(PlanError::Structural("empty path".into()));
    }
    for (i, p) in plan.paths.iter().enumerate() {
        if p.len() != horizon {
            return Err(PlanError::Structural(format!(
                "agent {i} has path length {} but agent 0 has {horizon}",
                p.len()
            )));
        }
        for &v in p {
            if !graph.contains(v) {
                return Err(PlanError::Structural(format!(
                    "agent {i} visits unknown node {v}"
                )));
            }
        }
        for w in p.windows(2) {
            if w[0] != w[1] && !graph.neighbors(w[0]).contains(&w[1]) {
                return Err(PlanError::Structural(format!(
                    "agent {i} jumps {} -> {} (not adjacent)",
                    w[0], w[1]
                )));
            }
        }
    }
    let n = plan.paths.len();
    for t in 0..horizon {
        for i in 0..n {
            for j in i + 1..n {
                if plan.paths[i][t] == plan.paths[j][t] {
                    return Err(PlanError::VertexConflict {
                        a: i,
                        b: j,
                        node: plan.paths[i][t],
                        time: t,
                    });
                }
            }
        }
        if t + 1 == horizon {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let entered = plan.paths[i][t + 1];
                if entered != plan.paths[j][t] {
                    continue;
                }
                match mode {
                    ConflictMode::Following => {
                        return Err(PlanError::FollowingConflict {
                            a: i,
                            b: j,
                            node: entered,
                            time: t + 1,
                        });
                    }
                    ConflictMode::Swap => {
                        if plan.paths[j][t + 1] == plan.paths[i][t]
                            && plan.paths[i][t] != plan.paths[i][t + 1]
                        {
                            return Err(PlanError::SwapConflict {
                                a: i.min(j),
                                b: i.max(j),
                                time: t,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Earliest timestep after which the path rests on its final node.
fn earliest_rest(path: &[NodeId]) -> usize {
    let last = *path.last().expect("nonempty path");
    match path.iter().rposition(|&v| v != last) {
        Some(t) => t + 1,
        None => 0,
    }
}

/// Sum of cost: Σ over agents of the earliest timestep after which the
/// agent rests at its goal through the horizon.
pub fn soc(plan: &Plan) -> u64 {
    plan.paths.iter().map(|p| earliest_rest(p) as u64).sum()
}

/// Horizon after trimming trailing all-goal padding.
pub fn makespan(plan: &Plan) -> usize {
    plan.paths.iter().map(|p| earliest_rest(p)).max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Plan file format
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("plan file error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Writes the plan file format: a header `agents <n> horizon <T>`, then
/// one line per agent with T + 1 space-separated node references —
/// `x,y` cell pairs on grid maps, raw node ids otherwise.
pub fn write_plan(plan: &Plan, graph: &Graph) -> String {
    let mut out = format!("agents {} horizon {}\n", plan.agent_count(), plan.horizon());
    for path in &plan.paths {
        let mut fields = Vec::with_capacity(path.len());
        for &v in path {
            match graph.coords(v) {
                Some((x, y)) => fields.push(format!("{x},{y}")),
                None => fields.push(v.to_string()),
            }
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the plan file format produced by [`write_plan`].
pub fn parse_plan(text: &str, graph: &Graph) -> Result<Plan, PlanFileError> {
    let mut lines = text.lines().enumerate();
    let (hline, header) = lines.next().ok_or(PlanFileError::Parse {
        line: 1,
        msg: "empty plan file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "agents" || fields[2] != "horizon" {
        return Err(PlanFileError::Parse {
            line: hline + 1,
            msg: "expected header `agents <n> horizon <T>`".into(),
        });
    }
    let n: usize = fields[1].parse().map_err(|_| PlanFileError::Parse {
        line: hline + 1,
        msg: format!("bad agent count `{}`", fields[1]),
    })?;
    let horizon: usize = fields[3].parse().map_err(|_| PlanFileError::Parse {
        line: hline + 1,
        msg: format!("bad horizon `{}`", fields[3]),
    })?;

    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, row) = lines.next().ok_or(PlanFileError::Parse {
            line: 0,
            msg: format!("expected {n} agent rows"),
        })?;
        let mut path = Vec::with_capacity(horizon + 1);
        for field in row.split_whitespace() {
            let node = if let Some((xs, ys)) = field.split_once(',') {
                let x: u32 = xs.parse().map_err(|_| PlanFileError::Parse {
                    line: i + 1,
                    msg: format!("bad cell `{field}`"),
                })?;
                let y: u32 = ys.parse().map_err(|_| PlanFileError::Parse {
                    line: i + 1,
                    msg: format!("bad cell `{field}`"),
                })?;
                graph.node_at(x, y).ok_or(PlanFileError::Parse {
                    line: i + 1,
                    msg: format!("cell `{field}` is blocked or out of bounds"),
                })?
            } else {
                let id: u32 = field.parse().map_err(|_| PlanFileError::Parse {
                    line: i + 1,
                    msg: format!("bad node id `{field}`"),
                })?;
                if id >= graph.node_count() {
                    return Err(PlanFileError::Parse {
                        line: i + 1,
                        msg: format!("node id {id} out of range"),
                    });
                }
                NodeId(id)
            };
            path.push(node);
        }
        if path.len() != horizon + 1 {
            return Err(PlanFileError::Parse {
                line: i + 1,
                msg: format!("expected {} entries, found {}", horizon + 1, path.len()),
            });
        }
        paths.push(path);
    }
    Ok(Plan { paths })
}

// ---------------------------------------------------------------------------
// Conflict-based search
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("instance is unsolvable under the given conflict semantics")]
    Unsolvable,
    #[error("node-expansion budget exceeded")]
    BudgetExceeded,
    #[error("invalid solver input: {0}")]
    Invalid(String),
}

/// Search budgets for the constraint-tree solvers.
#[derive(Debug, Clone, Copy)]
pub struct SearchLimits {
    pub max_expansions: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_expansions: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Constraint {
    /// The agent may not occupy `node` at `time`.
    Vertex { node: NodeId, time: u32 },
    /// The agent may not traverse `from -> to` arriving at `arrive`.
    Edge { from: NodeId, to: NodeId, arrive: u32 },
}

#[derive(Default)]
struct ConstraintIndex {
    vertex: HashSet<(NodeId, u32)>,
    edge: HashSet<(NodeId, NodeId, u32)>,
    latest_at_goal: u32,
}

impl ConstraintIndex {
    fn build(constraints: &[Constraint], goal: NodeId) -> ConstraintIndex {
        let mut idx = ConstraintIndex::default();
        for &c in constraints {
            match c {
                Constraint::Vertex { node, time } => {
                    idx.vertex.insert((node, time));
                    if node == goal {
                        idx.latest_at_goal = idx.latest_at_goal.max(time);
                    }
                }
                Constraint::Edge { from, to, arrive } => {
                    idx.edge.insert((from, to, arrive));
                }
            }
        }
        idx
    }
}

/// Position of agent path `p` at time `t`, resting on its final node
/// past the end.
#[inline]
fn pos_at(p: &[NodeId], t: usize) -> NodeId {
    p[t.min(p.len() - 1)]
}

/// Space-time A* for one agent. With `focal`, runs as bounded-suboptimal
/// focal search minimizing conflicts against `focal.1` within factor
/// `focal.0` of the best f-value. Returns the path and the search's
/// final lower bound on the optimal cost.
fn space_time_astar(
    graph: &Graph,
    start: NodeId,
    goal: NodeId,
    constraints: &ConstraintIndex,
    horizon: u32,
    mode: ConflictMode,
    focal: Option<(f64, &[&[NodeId]])>,
) -> Option<(Vec<NodeId>, u32)> {
    let dist = graph.distance_table(goal);
    if dist[start.idx()] == UNREACHABLE {
        return None;
    }
    if constraints.vertex.contains(&(start, 0)) {
        return None;
    }

    struct Arena {
        node: Vec<NodeId>,
        time: Vec<u32>,
        parent: Vec<u32>,
        f: Vec<u32>,
        conf: Vec<u32>,
    }
    let mut arena = Arena {
        node: vec![start],
        time: vec![0],
        parent: vec![u32::MAX],
        f: vec![dist[start.idx()]],
        conf: vec![0],
    };

    // Conflict count incurred by arriving at `u` at `t` having been at `v`.
    let step_conflicts = |v: NodeId, u: NodeId, t: u32| -> u32 {
        let others = match focal {
            Some((_, cat)) => cat,
            None => return 0,
        };
        let mut c = 0;
        let t = t as usize;
        for p in others {
            if pos_at(p, t) == u {
                c += 1;
            }
            match mode {
                ConflictMode::Following => {
                    if pos_at(p, t - 1) == u {
                        c += 1;
                    }
                    if pos_at(p, t) == v {
                        c += 1;
                    }
                }
                ConflictMode::Swap => {
                    if pos_at(p, t - 1) == u && pos_at(p, t) == v {
                        c += 1;
                    }
                }
            }
        }
        c
    };

    // OPEN ordered by (f, seq); FOCAL by (conflicts, f, seq) restricted to
    // f ≤ w · f_min(OPEN). States are keyed by (node, time) so g is fixed
    // at first insertion and no reopening ever happens. f_min(OPEN) is
    // non-decreasing, so FOCAL membership only ever widens.
    let mut open: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut focal_set: BTreeSet<(u32, u32, u32)> = BTreeSet::new();
    let mut seen: HashSet<(NodeId, u32)> = HashSet::new();
    let w = focal.map(|(w, _)| w);

    open.insert((arena.f[0], 0));
    seen.insert((start, 0));
    let mut synced_bound: Option<u32> = None;

    loop {
        // Bring FOCAL up to date with the current lower bound.
        if let Some(w) = w {
            let f_min = match open.iter().next() {
                Some(&(f, _)) => f,
                None => return None,
            };
            let bound = (w * (f_min as f64) + 1e-9) as u32;
            let from = match synced_bound {
                Some(b) if b >= bound => None,
                Some(b) => Some(b + 1),
                None => Some(0),
            };
            if let Some(from) = from {
                for &(of, oidx) in open.range((from, 0)..=(bound, u32::MAX)) {
                    focal_set.insert((arena.conf[oidx as usize], of, oidx));
                }
                synced_bound = Some(bound);
            }
        }

        let idx = if w.is_some() {
            let &(conf, f, idx) = focal_set.iter().next()?;
            focal_set.remove(&(conf, f, idx));
            idx
        } else {
            let &(f, idx) = open.iter().next()?;
            open.remove(&(f, idx));
            idx
        };
        let (node, time, f, conf) = (
            arena.node[idx as usize],
            arena.time[idx as usize],
            arena.f[idx as usize],
            arena.conf[idx as usize],
        );
        if w.is_some() {
            open.remove(&(f, idx));
        }

        // Lower bound on the optimal cost: the smallest f still expandable.
        let f_min = open.iter().next().map_or(f, |&(of, _)| of.min(f));

        if node == goal && time >= constraints.latest_at_goal {
            let mut path = Vec::new();
            let mut cur = idx;
            while cur != u32::MAX {
                path.push(arena.node[cur as usize]);
                cur = arena.parent[cur as usize];
            }
            path.reverse();
            return Some((path, f_min));
        }

        let t_next = time + 1;
        if t_next > horizon {
            continue;
        }
        let mut push = |u: NodeId| {
            if seen.contains(&(u, t_next)) {
                return;
            }
            if constraints.vertex.contains(&(u, t_next)) {
                return;
            }
            if constraints.edge.contains(&(node, u, t_next)) {
                return;
            }
            let h = dist[u.idx()];
            if h == UNREACHABLE {
                return;
            }
            seen.insert((u, t_next));
            let nf = t_next + h;
            let nconf = conf + step_conflicts(node, u, t_next);
            let nidx = arena.node.len() as u32;
            arena.node.push(u);
            arena.time.push(t_next);
            arena.parent.push(idx);
            arena.f.push(nf);
            arena.conf.push(nconf);
            open.insert((nf, nidx));
            if let Some(b) = synced_bound {
                if nf <= b {
                    focal_set.insert((nconf, nf, nidx));
                }
            }
        };
        push(node);
        for &u in graph.neighbors(node) {
            push(u);
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Conflict {
    Vertex { a: usize, b: usize, node: NodeId, time: u32 },
    Swap { a: usize, b: usize, a_from: NodeId, a_to: NodeId, time: u32 },
    Following { mover: usize, occupant: usize, node: NodeId, time: u32 },
}

/// First conflict in time order, scanning vertex clashes at `t` before
/// transition clashes into `t + 1`.
fn first_conflict(paths: &[Vec<NodeId>], mode: ConflictMode) -> Option<Conflict> {
    let n = paths.len();
    let horizon = paths.iter().map(|p| p.len()).max()?;
    for t in 0..horizon {
        for i in 0..n {
            for j in i + 1..n {
                if pos_at(&paths[i], t) == pos_at(&paths[j], t) {
                    return Some(Conflict::Vertex {
                        a: i,
                        b: j,
                        node: pos_at(&paths[i], t),
                        time: t as u32,
                    });
                }
            }
        }
        if t + 1 == horizon {
            break;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let to = pos_at(&paths[i], t + 1);
                if to != pos_at(&paths[j], t) {
                    continue;
                }
                match mode {
                    ConflictMode::Following => {
                        return Some(Conflict::Following {
                            mover: i,
                            occupant: j,
                            node: to,
                            time: t as u32 + 1,
                        });
                    }
                    ConflictMode::Swap => {
                        if pos_at(&paths[j], t + 1) == pos_at(&paths[i], t)
                            && pos_at(&paths[i], t) != to
                        {
                            return Some(Conflict::Swap {
                                a: i,
                                b: j,
                                a_from: pos_at(&paths[i], t),
                                a_to: to,
                                time: t as u32 + 1,
                            });
                        }
                    }
                }
            }
        }
    }
    None
}

/// Number of agent pairs in conflict, the focal heuristic.
fn conflicting_pairs(paths: &[Vec<NodeId>], mode: ConflictMode) -> u32 {
    let n = paths.len();
    let horizon = match paths.iter().map(|p| p.len()).max() {
        Some(h) => h,
        None => return 0,
    };
    let mut count = 0;
    for i in 0..n {
        'pair: for j in i + 1..n {
            for t in 0..horizon {
                let (pi, pj) = (pos_at(&paths[i], t), pos_at(&paths[j], t));
                if pi == pj {
                    count += 1;
                    continue 'pair;
                }
                if t + 1 < horizon {
                    let (ni, nj) = (pos_at(&paths[i], t + 1), pos_at(&paths[j], t + 1));
                    let clash = match mode {
                        ConflictMode::Following => ni == pj || nj == pi,
                        ConflictMode::Swap => ni == pj && nj == pi && pi != ni,
                    };
                    if clash {
                        count += 1;
                        continue 'pair;
                    }
                }
            }
        }
    }
    count
}

/// Constraint pair produced by splitting a conflict: `(agent, constraint)`.
fn branch(conflict: Conflict) -> [(usize, Constraint); 2] {
    match conflict {
        Conflict::Vertex { a, b, node, time } => [
            (a, Constraint::Vertex { node, time }),
            (b, Constraint::Vertex { node, time }),
        ],
        Conflict::Swap { a, b, a_from, a_to, time } => [
            (a, Constraint::Edge { from: a_from, to: a_to, arrive: time }),
            (b, Constraint::Edge { from: a_to, to: a_from, arrive: time }),
        ],
        Conflict::Following { mover, occupant, node, time } => [
            (mover, Constraint::Vertex { node, time }),
            (occupant, Constraint::Vertex { node, time: time - 1 }),
        ],
    }
}

struct CtNode {
    constraints: Vec<Vec<Constraint>>,
    paths: Vec<Vec<NodeId>>,
    costs: Vec<u32>,
    /// Per-agent lower bounds from the low level (equal to costs when
    /// the low level runs optimally).
    bounds: Vec<u32>,
    conflicts: u32,
}

impl CtNode {
    fn soc(&self) -> u64 {
        self.costs.iter().map(|&c| c as u64).sum()
    }
    fn lb(&self) -> u64 {
        self.bounds.iter().map(|&c| c as u64).sum()
    }
}

struct CtSearch<'a> {
    graph: &'a Graph,
    instance: &'a Instance,
    mode: ConflictMode,
    suboptimality: Option<f64>,
    base_horizon: u32,
}

impl<'a> CtSearch<'a> {
    fn new(instance: &'a Instance, mode: ConflictMode, suboptimality: Option<f64>) -> CtSearch<'a> {
        let graph = instance.graph.as_ref();
        let total_dist: u64 = instance
            .starts
            .iter()
            .zip(&instance.goals)
            .map(|(&s, &g)| {
                let d = graph.distance(s, g);
                if d == UNREACHABLE {
                    0
                } else {
                    d as u64
                }
            })
            .sum();
        // Horizon cap guaranteeing termination detection; constraints can
        // push individual searches beyond it, handled per call.
        let base_horizon = (graph.node_count() as u64 + total_dist).min(u32::MAX as u64) as u32;
        CtSearch {
            graph,
            instance,
            mode,
            suboptimality,
            base_horizon,
        }
    }

    fn replan(&self, node: &CtNode, agent: usize) -> Option<(Vec<NodeId>, u32)> {
        let idx = ConstraintIndex::build(&node.constraints[agent], self.instance.goals[agent]);
        let horizon = self.base_horizon;
        let others: Vec<&[NodeId]> = (0..node.paths.len())
            .filter(|&j| j != agent && !node.paths[j].is_empty())
            .map(|j| node.paths[j].as_slice())
            .collect();
        let focal = self.suboptimality.map(|w| (w, others.as_slice()));
        space_time_astar(
            self.graph,
            self.instance.starts[agent],
            self.instance.goals[agent],
            &idx,
            horizon,
            self.mode,
            focal,
        )
    }

    fn root(&self) -> Result<CtNode, SolveError> {
        let n = self.instance.agent_count();
        let mut node = CtNode {
            constraints: vec![Vec::new(); n],
            paths: vec![Vec::new(); n],
            costs: vec![0; n],
            bounds: vec![0; n],
            conflicts: 0,
        };
        for agent in 0..n {
            let (path, bound) = self.replan(&node, agent).ok_or(SolveError::Unsolvable)?;
            node.costs[agent] = path.len() as u32 - 1;
            node.bounds[agent] = bound;
            node.paths[agent] = path;
        }
        node.conflicts = conflicting_pairs(&node.paths, self.mode);
        Ok(node)
    }

    fn child(&self, parent: &CtNode, agent: usize, constraint: Constraint) -> Option<CtNode> {
        let mut constraints = parent.constraints.clone();
        constraints[agent].push(constraint);
        let mut node = CtNode {
            constraints,
            paths: parent.paths.clone(),
            costs: parent.costs.clone(),
            bounds: parent.bounds.clone(),
            conflicts: 0,
        };
        let (path, bound) = self.replan(&node, agent)?;
        node.costs[agent] = path.len() as u32 - 1;
        node.bounds[agent] = bound;
        node.paths[agent] = path;
        node.conflicts = conflicting_pairs(&node.paths, self.mode);
        Some(node)
    }
}

fn build_plan(node: &CtNode) -> Plan {
    Plan::from_paths(node.paths.clone())
}

/// Optimal (sum-of-cost) conflict-based search under the given conflict
/// semantics. High level: best-first on SOC; low level: space-time A*.
pub fn cbs_solve(
    instance: &Instance,
    mode: ConflictMode,
    limits: SearchLimits,
) -> Result<Plan, SolveError> {
    let search = CtSearch::new(instance, mode, None);
    let root = search.root()?;

    let mut nodes: HashMap<u64, CtNode> = HashMap::new();
    let mut open: BTreeSet<(u64, u32, u64)> = BTreeSet::new();
    let mut next_id = 0u64;
    open.insert((root.soc(), root.conflicts, next_id));
    nodes.insert(next_id, root);
    next_id += 1;

    let mut expansions = 0usize;
    while let Some(&key) = open.iter().next() {
        open.remove(&key);
        let node = nodes.remove(&key.2).expect("open node exists");
        let conflict = match first_conflict(&node.paths, mode) {
            None => return Ok(build_plan(&node)),
            Some(c) => c,
        };
        expansions += 1;
        if expansions > limits.max_expansions {
            return Err(SolveError::BudgetExceeded);
        }
        for (agent, constraint) in branch(conflict) {
            if let Some(child) = search.child(&node, agent, constraint) {
                open.insert((child.soc(), child.conflicts, next_id));
                nodes.insert(next_id, child);
                next_id += 1;
            }
        }
    }
    Err(SolveError::Unsolvable)
}

/// Bounded-suboptimal ECBS: focal search at both levels, guaranteeing
/// SOC ≤ `w` × optimal SOC.
pub fn ecbs_solve(
    instance: &Instance,
    w: f64,
    mode: ConflictMode,
    limits: SearchLimits,
) -> Result<Plan, SolveError> {
    if !(w >= 1.0) {
        return Err(SolveError::Invalid(format!("suboptimality {w} < 1")));
    }
    let search = CtSearch::new(instance, mode, Some(w));
    let root = search.root()?;

    let mut nodes: HashMap<u64, CtNode> = HashMap::new();
    // OPEN by lower bound; FOCAL by conflict count among nodes whose SOC
    // is within w of the best lower bound. The bound is non-decreasing,
    // so FOCAL membership only ever widens.
    let mut open: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut focal: BTreeSet<(u32, u64, u64)> = BTreeSet::new();
    let mut in_focal: HashSet<u64> = HashSet::new();
    let mut next_id = 0u64;
    let mut synced_bound: Option<u64> = None;

    open.insert((root.lb(), next_id));
    nodes.insert(next_id, root);
    next_id += 1;

    let mut expansions = 0usize;
    while let Some(&(lb_min, _)) = open.iter().next() {
        let bound = (w * lb_min as f64 + 1e-9) as u64;
        if synced_bound != Some(bound) {
            for &(_, id) in open.iter() {
                if in_focal.contains(&id) {
                    continue;
                }
                let n = &nodes[&id];
                if n.soc() <= bound {
                    focal.insert((n.conflicts, n.soc(), id));
                    in_focal.insert(id);
                }
            }
            synced_bound = Some(bound);
        }

        let &(conf, soc, id) = focal.iter().next().expect("best-bound node is in focal");
        focal.remove(&(conf, soc, id));
        in_focal.remove(&id);
        let node = nodes.remove(&id).expect("focal node exists");
        open.remove(&(node.lb(), id));

        let conflict = match first_conflict(&node.paths, mode) {
            None => return Ok(build_plan(&node)),
            Some(c) => c,
        };
        expansions += 1;
        if expansions > limits.max_expansions {
            return Err(SolveError::BudgetExceeded);
        }
        for (agent, constraint) in branch(conflict) {
            if let Some(child) = search.child(&node, agent, constraint) {
                if child.soc() <= synced_bound.unwrap_or(0) {
                    focal.insert((child.conflicts, child.soc(), next_id));
                    in_focal.insert(next_id);
                }
                open.insert((child.lb(), next_id));
                nodes.insert(next_id, child);
                next_id += 1;
            }
        }
    }
    Err(SolveError::Unsolvable)
}
