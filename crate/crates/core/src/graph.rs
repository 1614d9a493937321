//! Environment graphs: construction from MovingAI benchmark files,
//! adjacency, cached shortest-path distances, and structural predicates.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Distance value returned for disconnected pairs; orders above every
/// finite hop count.
pub const UNREACHABLE: u32 = u32::MAX;

/// Identifier of a graph node. Ids are dense in `[0, node_count)`;
/// for grid maps they are assigned row-major over passable cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("map parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario error at line {line}: {msg}")]
    Scenario { line: usize, msg: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("biconnectivity is undefined for graphs with fewer than 3 nodes")]
    TooSmall,
}

/// Undirected environment graph. Read-only after construction; the
/// distance cache is populated lazily behind a mutex so a `Graph` can be
/// shared across concurrently running simulations.
pub struct Graph {
    name: String,
    adjacency: Vec<Vec<NodeId>>,
    grid_shape: Option<(u32, u32)>,
    node_coords: Option<Vec<(u32, u32)>>,
    cell_index: Option<Vec<Option<NodeId>>>,
    dist_cache: Mutex<HashMap<NodeId, Arc<Vec<u32>>>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("name", &self.name)
            .field("nodes", &self.node_count())
            .field("grid_shape", &self.grid_shape)
            .finish()
    }
}

impl Graph {
    /// Builds a graph from an explicit edge list. Edges are symmetrized;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(
        name: &str,
        node_count: u32,
        edges: &[(u32, u32)],
    ) -> Result<Graph, GraphError> {
        let mut adjacency: Vec<Vec<NodeId>> = vec![Vec::new(); node_count as usize];
        for &(u, v) in edges {
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop at node {u}")));
            }
            if u >= node_count || v >= node_count {
                return Err(GraphError::Invalid(format!("edge ({u},{v}) out of range")));
            }
            if !adjacency[u as usize].contains(&NodeId(v)) {
                adjacency[u as usize].push(NodeId(v));
                adjacency[v as usize].push(NodeId(u));
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph {
            name: name.to_string(),
            adjacency,
            grid_shape: None,
            node_coords: None,
            cell_index: None,
            dist_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Path graph `P_n`: nodes `0..n` in a line.
    pub fn path_graph(n: u32) -> Graph {
        let edges: Vec<(u32, u32)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Graph::from_edges(&format!("P{n}"), n, &edges).expect("path graph is valid")
    }

    /// Cycle graph `C_n`.
    pub fn cycle_graph(n: u32) -> Graph {
        assert!(n >= 3, "cycle needs at least 3 nodes");
        let mut edges: Vec<(u32, u32)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        edges.push((n - 1, 0));
        Graph::from_edges(&format!("C{n}"), n, &edges).expect("cycle graph is valid")
    }

    /// Open `width x height` grid with the given blocked cells, 4-connected.
    pub fn grid(name: &str, width: u32, height: u32, blocked: &[(u32, u32)]) -> Graph {
        let mut rows = Vec::with_capacity(height as usize);
        for y in 0..height {
            let mut row = String::with_capacity(width as usize);
            for x in 0..width {
                row.push(if blocked.contains(&(x, y)) { '@' } else { '.' });
            }
            rows.push(row);
        }
        let text = format!(
            "type octile\nheight {height}\nwidth {width}\nmap\n{}\n",
            rows.join("\n")
        );
        load_map(&text, name).expect("generated grid text is well-formed")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> u32 {
        self.adjacency.len() as u32
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.idx()]
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.idx() < self.adjacency.len()
    }

    pub fn grid_shape(&self) -> Option<(u32, u32)> {
        self.grid_shape
    }

    /// Cell coordinates `(x, y)` of a node on grid-derived graphs.
    pub fn coords(&self, v: NodeId) -> Option<(u32, u32)> {
        self.node_coords.as_ref().map(|c| c[v.idx()])
    }

    /// Node at grid cell `(x, y)`, if the cell is passable.
    pub fn node_at(&self, x: u32, y: u32) -> Option<NodeId> {
        let (w, h) = self.grid_shape?;
        if x >= w || y >= h {
            return None;
        }
        self.cell_index.as_ref()?[(y * w + x) as usize]
    }

    /// Maximum degree Δ(G).
    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).max().unwrap_or(0)
    }

    /// Full table of hop distances to `target`, computed by breadth-first
    /// search and cached. Unreachable nodes hold [`UNREACHABLE`].
    pub fn distance_table(&self, target: NodeId) -> Arc<Vec<u32>> {
        {
            let cache = self.dist_cache.lock().unwrap();
            if let Some(t) = cache.get(&target) {
                return Arc::clone(t);
            }
        }
        let table = Arc::new(self.bfs_from(target));
        let mut cache = self.dist_cache.lock().unwrap();
        Arc::clone(cache.entry(target).or_insert(table))
    }

    /// Exact unweighted shortest-path hop count, or [`UNREACHABLE`].
    pub fn distance(&self, u: NodeId, v: NodeId) -> u32 {
        self.distance_table(v)[u.idx()]
    }

    /// Pre-populates the distance cache for the given targets, so later
    /// concurrent readers never contend on cache misses.
    pub fn prepopulate_distances(&self, targets: &[NodeId]) {
        for &t in targets {
            self.distance_table(t);
        }
    }

    fn bfs_from(&self, source: NodeId) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.adjacency.len()];
        let mut queue = VecDeque::new();
        dist[source.idx()] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.idx()];
            for &w in self.neighbors(u) {
                if dist[w.idx()] == UNREACHABLE {
                    dist[w.idx()] = d + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let table = self.bfs_from(NodeId(0));
        table.iter().all(|&d| d != UNREACHABLE)
    }

    /// True iff the graph is connected and has no articulation point.
    ///
    /// Uses the standard iterative lowlink computation; graphs with fewer
    /// than 3 nodes are a domain error.
    pub fn is_biconnected(&self) -> Result<bool, GraphError> {
        let n = self.adjacency.len();
        if n < 3 {
            return Err(GraphError::TooSmall);
        }
        if !self.is_connected() {
            return Ok(false);
        }

        // Iterative DFS computing lowlink values and articulation points.
        let mut disc = vec![u32::MAX; n];
        let mut low = vec![u32::MAX; n];
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut timer = 0u32;
        let mut root_children = 0usize;
        // (node, neighbor cursor)
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        disc[0] = 0;
        low[0] = 0;
        timer += 1;

        while !stack.is_empty() {
            let (v, cursor) = {
                let top = stack.last_mut().unwrap();
                let out = (top.0, top.1);
                top.1 += 1;
                out
            };
            if cursor < self.adjacency[v].len() {
                let w = self.adjacency[v][cursor].idx();
                if disc[w] == u32::MAX {
                    parent[w] = Some(v);
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    if v == 0 {
                        root_children += 1;
                    }
                    stack.push((w, 0));
                } else if parent[v] != Some(w) {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    // Non-root p is an articulation point if some child's
                    // subtree cannot reach above p.
                    if p != 0 && low[v] >= disc[p] {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(root_children < 2)
    }
}

/// Parses MovingAI grid map text: header `type ...`, `height H`,
/// `width W`, `map`, then `H` rows of `W` cells. `.` and `G` are
/// passable; `@`, `T`, and `O` are blocked.
pub fn load_map(text: &str, name: &str) -> Result<Graph, GraphError> {
    let mut lines = text.lines().enumerate();
    let mut expect = |key: &str| -> Result<(usize, String), GraphError> {
        match lines.next() {
            Some((i, line)) => {
                let line = line.trim_end();
                if key.is_empty() {
                    return Ok((i + 1, line.to_string()));
                }
                match line.strip_prefix(key) {
                    Some(rest) => Ok((i + 1, rest.trim().to_string())),
                    None => Err(GraphError::Parse {
                        line: i + 1,
                        msg: format!("expected `{key}...`, found `{line}`"),
                    }),
                }
            }
            None => Err(GraphError::Parse {
                line: 0,
                msg: format!("missing `{key}` header line"),
            }),
        }
    };

    expect("type")?;
    let (hline, hval) = expect("height")?;
    let height: u32 = hval.parse().map_err(|_| GraphError::Parse {
        line: hline,
        msg: format!("bad height `{hval}`"),
    })?;
    let (wline, wval) = expect("width")?;
    let width: u32 = wval.parse().map_err(|_| GraphError::Parse {
        line: wline,
        msg: format!("bad width `{wval}`"),
    })?;
    expect("map")?;

    let mut passable = vec![false; (width * height) as usize];
    let mut consumed = 0u32;
    for (i, raw) in lines {
        if consumed == height {
            if raw.trim().is_empty() {
                continue;
            }
            return Err(GraphError::Parse {
                line: i + 1,
                msg: "unexpected content after map rows".into(),
            });
        }
        let row = raw.trim_end();
        if row.chars().count() != width as usize {
            return Err(GraphError::Parse {
                line: i + 1,
                msg: format!(
                    "row has {} cells, expected {width}",
                    row.chars().count()
                ),
            });
        }
        for (x, ch) in row.chars().enumerate() {
            let open = match ch {
                '.' | 'G' => true,
                '@' | 'T' | 'O' => false,
                other => {
                    return Err(GraphError::Parse {
                        line: i + 1,
                        msg: format!("unknown cell character `{other}`"),
                    })
                }
            };
            passable[(consumed * width) as usize + x] = open;
        }
        consumed += 1;
    }
    if consumed != height {
        return Err(GraphError::Parse {
            line: 0,
            msg: format!("expected {height} map rows, found {consumed}"),
        });
    }

    // Row-major node ids over passable cells.
    let mut cell_index: Vec<Option<NodeId>> = vec![None; passable.len()];
    let mut node_coords = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let c = (y * width + x) as usize;
            if passable[c] {
                cell_index[c] = Some(NodeId(node_coords.len() as u32));
                node_coords.push((x, y));
            }
        }
    }
    let mut adjacency: Vec<Vec<NodeId>> = vec![Vec::new(); node_coords.len()];
    for (id, &(x, y)) in node_coords.iter().enumerate() {
        let mut push = |nx: u32, ny: u32| {
            if let Some(other) = cell_index[(ny * width + nx) as usize] {
                adjacency[id].push(other);
            }
        };
        if x > 0 {
            push(x - 1, y);
        }
        if x + 1 < width {
            push(x + 1, y);
        }
        if y > 0 {
            push(x, y - 1);
        }
        if y + 1 < height {
            push(x, y + 1);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }

    Ok(Graph {
        name: name.to_string(),
        adjacency,
        grid_shape: Some((width, height)),
        node_coords: Some(node_coords),
        cell_index: Some(cell_index),
        dist_cache: Mutex::new(HashMap::new()),
    })
}

/// A MAPF instance: a shared graph plus pairwise-distinct starts and goals.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: Arc<Graph>,
    pub starts: Vec<NodeId>,
    pub goals: Vec<NodeId>,
}

impl Instance {
    pub fn new(
        graph: Arc<Graph>,
        starts: Vec<NodeId>,
        goals: Vec<NodeId>,
    ) -> Result<Instance, GraphError> {
        if starts.len() != goals.len() {
            return Err(GraphError::Invalid(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        for (i, &s) in starts.iter().enumerate() {
            if !graph.contains(s) {
                return Err(GraphError::Invalid(format!("start {i} out of range")));
            }
            if starts[..i].contains(&s) {
                return Err(GraphError::Invalid(format!("duplicate start node {s}")));
            }
        }
        for (i, &g) in goals.iter().enumerate() {
            if !graph.contains(g) {
                return Err(GraphError::Invalid(format!("goal {i} out of range")));
            }
            if goals[..i].contains(&g) {
                return Err(GraphError::Invalid(format!("duplicate goal node {g}")));
            }
        }
        Ok(Instance {
            graph,
            starts,
            goals,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.starts.len()
    }

    /// True iff the reachability guarantee's structural preconditions hold:
    /// a biconnected graph with strictly fewer agents than nodes.
    pub fn reachability_preconditions(&self) -> Result<bool, GraphError> {
        Ok((self.agent_count() as u32) < self.graph.node_count()
            && self.graph.is_biconnected()?)
    }
}

/// Parses MovingAI scenario text and takes the first `n` rows as agents.
///
/// Rows are whitespace-separated: `bucket map width height sx sy gx gy dist`;
/// only the start/goal cells are used.
pub fn load_scenario(text: &str, graph: &Arc<Graph>, n: usize) -> Result<Instance, GraphError> {
    let mut starts = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_start().starts_with("version") => {}
        Some((i, _)) => {
            return Err(GraphError::Scenario {
                line: i + 1,
                msg: "missing `version` header".into(),
            })
        }
        None => {
            return Err(GraphError::Scenario {
                line: 1,
                msg: "empty scenario".into(),
            })
        }
    }
    for (i, raw) in lines {
        if starts.len() == n {
            break;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 {
            return Err(GraphError::Scenario {
                line: i + 1,
                msg: format!("expected at least 8 fields, found {}", fields.len()),
            });
        }
        let coord = |s: &str| -> Result<u32, GraphError> {
            s.parse().map_err(|_| GraphError::Scenario {
                line: i + 1,
                msg: format!("bad coordinate `{s}`"),
            })
        };
        let (sx, sy) = (coord(fields[4])?, coord(fields[5])?);
        let (gx, gy) = (coord(fields[6])?, coord(fields[7])?);
        let start = graph.node_at(sx, sy).ok_or(GraphError::Scenario {
            line: i + 1,
            msg: format!("start cell ({sx},{sy}) is blocked or out of bounds"),
        })?;
        let goal = graph.node_at(gx, gy).ok_or(GraphError::Scenario {
            line: i + 1,
            msg: format!("goal cell ({gx},{gy}) is blocked or out of bounds"),
        })?;
        starts.push(start);
        goals.push(goal);
    }
    if starts.len() < n {
        return Err(GraphError::Scenario {
            line: 0,
            msg: format!("scenario has {} rows, {n} requested", starts.len()),
        });
    }
    Instance::new(Arc::clone(graph), starts, goals)
}
