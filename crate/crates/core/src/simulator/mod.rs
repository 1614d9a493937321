//! The stochastic-delay experiment engine: delay models, the two-phase
//! activation protocol with a fair randomized scheduler, stability
//! detection, execution traces, and metrics.
//!
//! One timestep pairs a stabilization sweep over contracted/requesting
//! agents with a completion phase in which every extended agent finishes
//! its move independently with probability `1 - p_i`. Snapshots are taken
//! after the completion phase, so a perfect execution (`p̄ = 0`) of an
//! offline plan reproduces the plan's timing exactly.

pub mod explore;

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{Instance, NodeId};
use crate::model::{
    check_config_invariants, ActivationRecord, AgentId, Configuration, Mode,
};
use crate::planners::{install_hints, PlannerKind};

/// Per-agent move-failure probabilities, drawn uniformly from `[0, p̄]`.
#[derive(Debug, Clone)]
pub struct DelayModel {
    pub p: Vec<f64>,
    pub p_bar: f64,
}

impl DelayModel {
    /// All-zero delays: every move completes on its first attempt.
    pub fn perfect(n: usize) -> DelayModel {
        DelayModel {
            p: vec![0.0; n],
            p_bar: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("p_bar {0} outside [0, 1]")]
    BadDelayBound(f64),
    #[error("delay model covers {got} agents, instance has {want}")]
    DelayMismatch { got: usize, want: usize },
    #[error("hint plan does not cover the instance: {0}")]
    PlanMismatch(String),
    #[error("livelock within timestep {timestep}: {cap} activations without stabilizing")]
    Livelock { timestep: usize, cap: u64 },
    #[error("invariant violation after activation `{after}`: {violations:?}")]
    InvariantViolation {
        after: String,
        violations: Vec<String>,
    },
}

/// Draws `n` independent delay probabilities uniformly from `[0, p_bar]`.
pub fn sample_delays(
    n: usize,
    p_bar: f64,
    rng: &mut impl Rng,
) -> Result<DelayModel, SimError> {
    if !(0.0..=1.0).contains(&p_bar) {
        return Err(SimError::BadDelayBound(p_bar));
    }
    let p = (0..n).map(|_| rng.random::<f64>() * p_bar).collect();
    Ok(DelayModel { p, p_bar })
}

/// Per-agent state snapshot within a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSnap {
    pub mode: Mode,
    pub tail: NodeId,
    pub head: Option<NodeId>,
}

/// How a run ended: strong termination, the activation bound with every
/// goal visited at least once, or the bound with some goal never seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Strong,
    WeakOnly,
    Failed,
}

/// Timestep-indexed execution history.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    /// One snapshot per timestep; index 0 is the initial configuration.
    pub steps: Vec<Vec<AgentSnap>>,
    pub activations_total: u64,
    pub goal_first_visit: Vec<Option<usize>>,
    pub terminated: Termination,
}

/// Scalar outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub success: bool,
    pub weak: bool,
    pub soc: Option<u64>,
    pub makespan: Option<u64>,
    pub activations: u64,
    pub seed: u64,
    pub p_bar: f64,
}

/// Knobs for one execution.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub activation_bound: u64,
    /// Check all structural invariants after every activation.
    pub check_invariants: bool,
    /// Keep per-activation records in the output.
    pub collect_log: bool,
    /// Seed stamped into the metrics row.
    pub seed: u64,
    /// Per-timestep stabilization cap factor; the cap is
    /// `factor * n * Δ(G)` activations.
    pub phase_cap_factor: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            activation_bound: 10_000,
            check_invariants: false,
            collect_log: false,
            seed: 0,
            phase_cap_factor: 50,
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub trace: ExecutionTrace,
    pub activation_log: Vec<ActivationRecord>,
}

fn snapshot(config: &Configuration) -> Vec<AgentSnap> {
    config
        .agents()
        .iter()
        .map(|a| AgentSnap {
            mode: a.mode,
            tail: a.tail,
            head: a.head,
        })
        .collect()
}

struct RunState<'a> {
    run: &'a RunConfig,
    activations: u64,
    visited: Vec<bool>,
    log: Vec<ActivationRecord>,
}

impl RunState<'_> {
    /// Bookkeeping after one activation; breaks when the activation
    /// budget is exhausted.
    fn after_activation(
        &mut self,
        graph: &crate::graph::Graph,
        config: &Configuration,
        record: &ActivationRecord,
    ) -> Result<ControlFlow<()>, SimError> {
        self.activations += 1;
        if self.run.collect_log {
            self.log.push(record.clone());
        }
        for a in config.agents() {
            if a.at_goal() {
                self.visited[a.id.idx()] = true;
            }
        }
        if self.run.check_invariants {
            let violations = check_config_invariants(config, graph);
            if !violations.is_empty() {
                return Err(SimError::InvariantViolation {
                    after: record.to_string(),
                    violations: violations.iter().map(|v| v.to_string()).collect(),
                });
            }
        }
        if self.activations >= self.run.activation_bound {
            return Ok(ControlFlow::Break(()));
        }
        Ok(ControlFlow::Continue(()))
    }
}

/// One stabilization sweep: repeatedly runs full randomized passes over
/// all contracted/requesting agents until a complete pass changes no
/// state. Returns the number of activations spent.
///
/// Sound as a fixed-point test because activations of non-extended
/// agents are deterministic in the configuration.
pub fn phase2_until_stable(
    graph: &crate::graph::Graph,
    config: &mut Configuration,
    planner: &PlannerKind,
    rng: &mut impl Rng,
) -> Result<u64, SimError> {
    let cap = RunConfig::default().phase_cap_factor
        * config.agent_count() as u64
        * graph.max_degree().max(1) as u64;
    let mut spent = 0;
    let flow = stabilize(graph, config, planner, rng, cap, 0, &mut spent, &mut |_, _| {
        Ok(ControlFlow::Continue(()))
    })?;
    debug_assert!(matches!(flow, ControlFlow::Continue(())));
    Ok(spent)
}

#[allow(clippy::too_many_arguments)]
fn stabilize(
    graph: &crate::graph::Graph,
    config: &mut Configuration,
    planner: &PlannerKind,
    rng: &mut impl Rng,
    cap: u64,
    timestep: usize,
    spent: &mut u64,
    on_activation: &mut dyn FnMut(
        &Configuration,
        &ActivationRecord,
    ) -> Result<ControlFlow<()>, SimError>,
) -> Result<ControlFlow<()>, SimError> {
    loop {
        let mut pool: Vec<AgentId> = config
            .agents()
            .iter()
            .filter(|a| a.mode != Mode::Extended)
            .map(|a| a.id)
            .collect();
        if pool.is_empty() {
            return Ok(ControlFlow::Continue(()));
        }
        pool.shuffle(rng);
        let mut changed_any = false;
        for i in pool {
            // Winners of earlier activations in this pass are extended
            // now and belong to the completion phase.
            if config.agent(i).mode == Mode::Extended {
                continue;
            }
            let act = planner.activate(graph, config, i);
            *spent += 1;
            if *spent > cap {
                return Err(SimError::Livelock { timestep, cap });
            }
            changed_any |= act.changed;
            if on_activation(config, &act.record)?.is_break() {
                return Ok(ControlFlow::Break(()));
            }
        }
        if !changed_any {
            return Ok(ControlFlow::Continue(()));
        }
    }
}

/// Runs one full time-independent execution under the two-phase
/// activation protocol, stopping at strong termination or at the
/// activation bound.
pub fn run_time_independent(
    instance: &Instance,
    planner: &PlannerKind,
    delays: &DelayModel,
    rng: &mut impl Rng,
    run: &RunConfig,
) -> Result<RunOutput, SimError> {
    let n = instance.agent_count();
    if delays.p.len() != n {
        return Err(SimError::DelayMismatch {
            got: delays.p.len(),
            want: n,
        });
    }
    let graph = instance.graph.as_ref();
    let mut config = Configuration::initial(instance);
    match planner {
        PlannerKind::CausalPibtHinted(plan) => {
            if !plan.matches_instance(instance) {
                return Err(SimError::PlanMismatch(
                    "plan starts/goals differ from the instance".into(),
                ));
            }
            install_hints(&mut config, plan);
            // Warm the distance cache for every node a hinted selection
            // can query, so shared graphs never contend mid-run.
            let mut targets: Vec<NodeId> = instance.goals.clone();
            for path in &plan.paths {
                targets.extend(path.iter().copied());
            }
            targets.sort_unstable();
            targets.dedup();
            graph.prepopulate_distances(&targets);
        }
        _ => graph.prepopulate_distances(&instance.goals),
    }

    let mut state = RunState {
        run,
        activations: 0,
        visited: vec![false; n],
        log: Vec::new(),
    };
    for a in config.agents() {
        if a.at_goal() {
            state.visited[a.id.idx()] = true;
        }
    }
    let mut goal_first_visit: Vec<Option<usize>> = state
        .visited
        .iter()
        .map(|&v| if v { Some(0) } else { None })
        .collect();
    let mut steps = vec![snapshot(&config)];
    let cap = run.phase_cap_factor * n as u64 * graph.max_degree().max(1) as u64;

    let mut terminated = if config.strong_termination() {
        Some(Termination::Strong)
    } else {
        None
    };

    let mut timestep = 0usize;
    while terminated.is_none() {
        timestep += 1;

        // Stabilization phase over contracted/requesting agents.
        let mut out_of_budget = {
            let mut spent = 0u64;
            let flow = stabilize(
                graph,
                &mut config,
                planner,
                rng,
                cap,
                timestep,
                &mut spent,
                &mut |cfg, rec| state.after_activation(graph, cfg, rec),
            )?;
            flow.is_break()
        };

        // Completion phase: sample all extended agents independently,
        // then apply the successful finishes in agent-id order.
        if !out_of_budget {
            let extended: Vec<AgentId> = config
                .agents()
                .iter()
                .filter(|a| a.mode == Mode::Extended)
                .map(|a| a.id)
                .collect();
            let fired: Vec<AgentId> = extended
                .into_iter()
                .filter(|i| rng.random::<f64>() >= delays.p[i.idx()])
                .collect();
            for i in fired {
                let act = planner.activate(graph, &mut config, i);
                if state
                    .after_activation(graph, &config, &act.record)?
                    .is_break()
                {
                    out_of_budget = true;
                    break;
                }
            }
        }

        steps.push(snapshot(&config));
        for (i, visited) in state.visited.iter().enumerate() {
            if *visited && goal_first_visit[i].is_none() {
                goal_first_visit[i] = Some(timestep);
            }
        }

        if config.strong_termination() {
            terminated = Some(Termination::Strong);
        } else if out_of_budget {
            terminated = Some(if state.visited.iter().all(|&v| v) {
                Termination::WeakOnly
            } else {
                Termination::Failed
            });
        }
    }

    let trace = ExecutionTrace {
        steps,
        activations_total: state.activations,
        goal_first_visit,
        terminated: terminated.unwrap(),
    };
    let metrics = compute_metrics(&trace, &instance.goals, run.seed, delays.p_bar);
    Ok(RunOutput {
        metrics,
        trace,
        activation_log: state.log,
    })
}

/// Earliest timestep after which the agent stays contracted on its goal
/// through the end of the trace, if it does.
fn earliest_rest(steps: &[Vec<AgentSnap>], agent: usize, goal: NodeId) -> Option<usize> {
    let at_goal =
        |s: &AgentSnap| s.mode == Mode::Contracted && s.tail == goal && s.head.is_none();
    if !at_goal(&steps.last().expect("nonempty trace")[agent]) {
        return None;
    }
    let mut t = steps.len() - 1;
    while t > 0 && at_goal(&steps[t - 1][agent]) {
        t -= 1;
    }
    Some(t)
}

/// Fills metrics from a finished trace: SOC and makespan under the
/// earliest-rest cost, success from the termination flag.
pub fn compute_metrics(
    trace: &ExecutionTrace,
    goals: &[NodeId],
    seed: u64,
    p_bar: f64,
) -> Metrics {
    let rests: Vec<Option<usize>> = goals
        .iter()
        .enumerate()
        .map(|(i, &g)| earliest_rest(&trace.steps, i, g))
        .collect();
    let (soc, makespan) = if rests.iter().all(|r| r.is_some()) {
        let costs: Vec<u64> = rests.iter().map(|r| r.unwrap() as u64).collect();
        (
            Some(costs.iter().sum()),
            Some(costs.iter().copied().max().unwrap_or(0)),
        )
    } else {
        (None, None)
    };
    Metrics {
        success: trace.terminated == Termination::Strong,
        weak: trace.goal_first_visit.iter().all(|v| v.is_some()),
        soc,
        makespan,
        activations: trace.activations_total,
        seed,
        p_bar,
    }
}

/// Renders the trace text format: a header then one line per agent per
/// timestep, `t agent mode tail head` with `-` for a void head.
pub fn write_trace(trace: &ExecutionTrace) -> String {
    let agents = trace.steps.first().map_or(0, |s| s.len());
    let mut out = format!(
        "timesteps {} agents {}\n",
        trace.steps.len().saturating_sub(1),
        agents
    );
    for (t, snaps) in trace.steps.iter().enumerate() {
        for (i, s) in snaps.iter().enumerate() {
            out.push_str(&format!(
                "{t} {i} {} {} {}\n",
                s.mode.letter(),
                s.tail,
                match s.head {
                    Some(h) => h.to_string(),
                    None => "-".into(),
                }
            ));
        }
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Stable 64-bit FNV-1a, used to derive independent seed streams per
/// experiment cell.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for one run: the cell descriptor decorrelates
/// streams across campaign cells, the seed indexes repetitions.
pub fn run_rng(cell: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a64(cell) ^ splitmix64(seed))
}
