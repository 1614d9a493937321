//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N (<name>): PASS` line (visible with `--nocapture`).
//!
//! Criterion 5's plan-hinted clause is expected to fail; see the README
//! section on known limitations. The hinted planner has no notion of
//! plan time, so it departs early wherever the offline plan contains
//! waits, and the resulting interactions cost extra timesteps that no
//! faithful reading of the selection rule avoids.

mod common;

use std::sync::Arc;

use common::{fixture_path, joint_optimal_soc, load_fixture, placements};
use tisim_core::graph::{Graph, Instance, NodeId};
use tisim_core::model::{AgentId, AgentState, Configuration, Mode, Priority};
use tisim_core::offline::{
    cbs_solve, ecbs_solve, soc, validate_plan, ConflictMode, Plan, SearchLimits,
};
use tisim_core::planners::PlannerKind;
use tisim_core::policies::{fsp_run, mcp_run};
use tisim_core::simulator::explore::exhaustive_explore;
use tisim_core::simulator::{
    run_rng, run_time_independent, sample_delays, write_trace, DelayModel, RunConfig,
};

fn benchmark_a() -> Instance {
    load_fixture("benchmark-A.map", "benchmark-A.scen", 8)
}

fn benchmark_b() -> Instance {
    load_fixture("benchmark-B.map", "benchmark-B.scen", 6)
}

fn p2_swap() -> Instance {
    load_fixture("p2.map", "p2-swap.scen", 2)
}

fn following_plan(instance: &Instance) -> Plan {
    let plan = cbs_solve(instance, ConflictMode::Following, SearchLimits::default())
        .expect("benchmark instances are solvable");
    assert_eq!(
        validate_plan(&plan, &instance.graph, ConflictMode::Following),
        Ok(())
    );
    plan
}

fn cycle_instance(nodes: u32, agents: usize, shift: u32) -> Instance {
    let g = Arc::new(Graph::cycle_graph(nodes));
    let starts: Vec<NodeId> = (0..agents as u32).map(NodeId).collect();
    let goals: Vec<NodeId> = (0..agents as u32)
        .map(|i| NodeId((i + shift) % nodes))
        .collect();
    Instance::new(g, starts, goals).unwrap()
}

/// Criterion 1: zero structural-invariant violations at every activation
/// across seeded runs of each planner on both benchmarks at
/// p̄ in {0, 0.5, 0.9}.
#[test]
fn criterion_1_safety_suite() {
    let benches = [
        ("benchmark-A", benchmark_a()),
        ("benchmark-B", benchmark_b()),
    ];
    for (name, inst) in benches {
        let plan = following_plan(&inst);
        let planners = [
            PlannerKind::Greedy { faithful: false },
            PlannerKind::CausalPibt,
            PlannerKind::CausalPibtHinted(plan),
        ];
        for planner in &planners {
            for p_bar in [0.0, 0.5, 0.9] {
                for seed in 0..100u64 {
                    let cell = format!("safety|{name}|{}|{p_bar}", planner.label());
                    let mut rng = run_rng(&cell, seed);
                    let delays = sample_delays(inst.agent_count(), p_bar, &mut rng).unwrap();
                    let run = RunConfig {
                        check_invariants: true,
                        seed,
                        ..RunConfig::default()
                    };
                    run_time_independent(&inst, planner, &delays, &mut rng, &run)
                        .unwrap_or_else(|e| {
                            panic!("{name} {} p̄={p_bar} seed {seed}: {e}", planner.label())
                        });
                }
            }
        }
    }
    println!("criterion 1 (safety suite): PASS");
}

/// Criterion 2: Greedy deadlocks on the two-agent swap in every run with
/// a persistent request 2-cycle, and practically never completes the
/// crossing benchmark even without delays.
#[test]
fn criterion_2_greedy_deadlock() {
    let inst = p2_swap();
    let planner = PlannerKind::Greedy { faithful: false };
    for seed in 0..100u64 {
        let mut rng = run_rng("p2-greedy", seed);
        let delays = DelayModel::perfect(2);
        let out = run_time_independent(&inst, &planner, &delays, &mut rng, &RunConfig::default())
            .unwrap();
        assert!(!out.metrics.success, "seed {seed} unexpectedly succeeded");
        assert_eq!(out.metrics.activations, 10_000, "seed {seed}");

        // The 2-cycle forms and never dissolves.
        let two_cycle = |snaps: &[tisim_core::simulator::AgentSnap]| {
            snaps[0].mode == Mode::Requesting
                && snaps[1].mode == Mode::Requesting
                && snaps[0].head == Some(snaps[1].tail)
                && snaps[1].head == Some(snaps[0].tail)
        };
        let first = out.trace.steps.iter().position(|s| two_cycle(s));
        let first = first.unwrap_or_else(|| panic!("seed {seed}: no cycle ever formed"));
        assert!(
            out.trace.steps[first..].iter().all(|s| two_cycle(s)),
            "seed {seed}: cycle dissolved"
        );

        // The model-level detector agrees on the final configuration.
        let last = out.trace.steps.last().unwrap();
        let agents: Vec<AgentState> = last
            .iter()
            .enumerate()
            .map(|(i, s)| AgentState {
                id: AgentId(i as u32),
                mode: s.mode,
                tail: s.tail,
                head: s.head,
                parent: AgentId(i as u32),
                children: Default::default(),
                candidates: Default::default(),
                searched: Default::default(),
                pori: Priority::initial(i, 2),
                ptmp: Priority::initial(i, 2),
                goal: inst.goals[i],
                hint: None,
            })
            .collect();
        let cfg = Configuration::from_agent_states(agents);
        assert_eq!(cfg.detect_request_cycle().map(|c| c.len()), Some(2));
    }

    let inst = benchmark_a();
    let mut successes = 0;
    for seed in 0..100u64 {
        let mut rng = run_rng("bench-a-greedy", seed);
        let delays = DelayModel::perfect(8);
        let out = run_time_independent(&inst, &planner, &delays, &mut rng, &RunConfig::default())
            .unwrap();
        if out.metrics.success {
            successes += 1;
        }
    }
    assert!(successes <= 5, "greedy succeeded {successes}/100 on benchmark-A");
    println!("criterion 2 (greedy deadlock): PASS ({successes}/100 greedy successes on benchmark-A)");
}

/// Criterion 3: Causal-PIBT reaches weak termination in every run on a
/// seven-agent ring and on the crossing benchmark, for all delay bounds.
#[test]
fn criterion_3_reachability() {
    let ring = cycle_instance(8, 7, 4);
    assert!(ring.reachability_preconditions().unwrap());
    let bench = benchmark_a();
    assert!(bench.reachability_preconditions().unwrap());

    for (name, inst) in [("C8/7", ring), ("benchmark-A/8", bench)] {
        for p_bar in [0.0, 0.3, 0.6, 0.9] {
            for seed in 0..100u64 {
                let mut rng = run_rng(&format!("reach|{name}|{p_bar}"), seed);
                let delays = sample_delays(inst.agent_count(), p_bar, &mut rng).unwrap();
                let out = run_time_independent(
                    &inst,
                    &PlannerKind::CausalPibt,
                    &delays,
                    &mut rng,
                    &RunConfig::default(),
                )
                .unwrap();
                assert!(
                    out.metrics.weak,
                    "{name} p̄={p_bar} seed {seed}: no weak termination within 10000 activations"
                );
            }
        }
    }
    println!("criterion 3 (reachability): PASS");
}

/// Criterion 4: on the fixed 20-instance corpus, the exhaustive explorer
/// finds no fair schedule along which a request cycle persists, and a
/// weak-termination witness stays reachable from every reachable state.
#[test]
fn criterion_4_deadlock_recovery() {
    let c4 = || Arc::new(Graph::cycle_graph(4));
    let c5 = || Arc::new(Graph::cycle_graph(5));
    let g3 = || Arc::new(Graph::grid("3x3", 3, 3, &[]));
    let inst = |g: Arc<Graph>, starts: &[u32], goals: &[u32]| {
        Instance::new(
            g,
            starts.iter().map(|&v| NodeId(v)).collect(),
            goals.iter().map(|&v| NodeId(v)).collect(),
        )
        .unwrap()
    };
    let corpus: Vec<(&str, Instance)> = vec![
        ("c4-adjacent-swap", inst(c4(), &[0, 1], &[1, 0])),
        ("c4-opposite-swap", inst(c4(), &[0, 2], &[2, 0])),
        ("c4-rotation", inst(c4(), &[0, 1, 2], &[1, 2, 0])),
        ("c4-counter-rotation", inst(c4(), &[0, 1, 2], &[2, 0, 1])),
        ("c4-outer-swap", inst(c4(), &[0, 1, 2], &[2, 1, 0])),
        ("c4-disjoint", inst(c4(), &[0, 1], &[2, 3])),
        ("c5-adjacent-swap", inst(c5(), &[0, 1], &[1, 0])),
        ("c5-skip-swap", inst(c5(), &[0, 2], &[2, 0])),
        ("c5-rotation", inst(c5(), &[0, 1, 2], &[1, 2, 0])),
        ("c5-reversal", inst(c5(), &[0, 1, 2], &[2, 1, 0])),
        ("c5-spread", inst(c5(), &[0, 2, 4], &[4, 0, 2])),
        ("g3-single", inst(g3(), &[0], &[8])),
        ("g3-corner-swap", inst(g3(), &[0, 8], &[8, 0])),
        ("g3-adjacent-swap", inst(g3(), &[0, 1], &[1, 0])),
        ("g3-center-swap", inst(g3(), &[0, 4], &[4, 0])),
        ("g3-row-reversal", inst(g3(), &[0, 1, 2], &[2, 1, 0])),
        ("g3-diagonal-rotation", inst(g3(), &[0, 4, 8], &[8, 0, 4])),
        ("g3-corner-cycle", inst(g3(), &[0, 2, 6], &[8, 6, 2])),
        ("g3-column-reversal", inst(g3(), &[0, 3, 6], &[6, 3, 0])),
        ("g3-mixed", inst(g3(), &[0, 8, 2], &[6, 1, 7])),
    ];
    assert_eq!(corpus.len(), 20);
    for (name, instance) in corpus {
        let report = exhaustive_explore(&instance, &PlannerKind::CausalPibt, 4_000_000)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(report.complete, "{name}: exploration hit the cap");
        assert_eq!(
            report.persistent_deadlock, None,
            "{name}: a request cycle can persist under a fair schedule"
        );
        assert!(
            report.reachability_ok,
            "{name}: weak termination unreachable from some state \
             (blocked agents: {:?})",
            report.agents_without_witness
        );
        assert_eq!(report.invariant_violations, 0, "{name}");
        assert_eq!(report.forest_violations, 0, "{name}");
        assert!(
            report.max_recovery_activations.is_some(),
            "{name}: some deadlock cannot be shed"
        );
    }
    println!("criterion 4 (deadlock recovery): PASS");
}

/// Criterion 5: with p̄ = 0 and an optimal following-semantics plan,
/// each policy reproduces the plan's SOC exactly.
///
/// The FSP and MCP clauses hold structurally. The Causal-PIBT+ clause is
/// implemented faithfully and fails: with stays compressed away, hinted
/// agents depart ahead of the plan's schedule whenever the plan waits,
/// and the resulting priority interactions cost extra timesteps.
#[test]
fn criterion_5_perfect_execution_equivalence() {
    let mut detail = String::new();
    let mut fsp_bad = 0u32;
    let mut mcp_bad = 0u32;
    let mut hinted_bad = 0u32;
    for (name, inst) in [
        ("benchmark-A", benchmark_a()),
        ("benchmark-B", benchmark_b()),
    ] {
        let plan = following_plan(&inst);
        let plan_soc = soc(&plan);
        let n = inst.agent_count();
        let mut hinted_socs: Vec<u64> = Vec::new();
        for seed in 0..100u64 {
            let delays = DelayModel::perfect(n);

            let mut rng = run_rng(&format!("fsp|{name}"), seed);
            let out = fsp_run(&plan, &delays, &mut rng, 10_000, seed).unwrap();
            if out.metrics.soc != Some(plan_soc) {
                fsp_bad += 1;
            }

            let mut rng = run_rng(&format!("mcp|{name}"), seed);
            let out = mcp_run(&plan, &delays, &mut rng, 10_000, seed).unwrap();
            if out.metrics.soc != Some(plan_soc) {
                mcp_bad += 1;
            }

            let mut rng = run_rng(&format!("plus|{name}"), seed);
            let out = run_time_independent(
                &inst,
                &PlannerKind::CausalPibtHinted(plan.clone()),
                &delays,
                &mut rng,
                &RunConfig::default(),
            )
            .unwrap();
            if out.metrics.soc != Some(plan_soc) {
                hinted_bad += 1;
            }
            if let Some(s) = out.metrics.soc {
                hinted_socs.push(s);
            }
        }
        let lo = hinted_socs.iter().min().unwrap();
        let hi = hinted_socs.iter().max().unwrap();
        detail.push_str(&format!(
            " [{name}: plan soc {plan_soc}, causal_pibt_plus soc {lo}..{hi}]"
        ));
    }
    assert_eq!(fsp_bad, 0, "FSP diverged from plan SOC in {fsp_bad} runs");
    assert_eq!(mcp_bad, 0, "MCP diverged from plan SOC in {mcp_bad} runs");
    if hinted_bad == 0 {
        println!("criterion 5 (perfect-execution equivalence): PASS");
    } else {
        println!(
            "criterion 5 (perfect-execution equivalence): FAIL — \
             causal_pibt_plus diverged in {hinted_bad}/200 runs{detail}; \
             FSP and MCP matched in all 200"
        );
    }
    assert_eq!(
        hinted_bad, 0,
        "causal_pibt_plus does not reproduce plan SOC at p̄=0:{detail} — \
         hinted agents cannot reproduce plan waits (stays are compressed \
         away), so plans with slack execute with extra interactions; see \
         README, Known limitations"
    );
}

/// Criterion 6: CBS matches the joint-state-space optimum exactly, and
/// ECBS(w = 1.1) stays within factor 1.1 of it, over the small-instance
/// corpus.
#[test]
fn criterion_6_solver_optimality() {
    struct Case {
        graph: fn() -> Graph,
        agents: usize,
        stride: usize,
    }
    let cases = [
        Case { graph: || Graph::path_graph(3), agents: 2, stride: 1 },
        Case { graph: || Graph::cycle_graph(4), agents: 2, stride: 1 },
        Case { graph: || Graph::cycle_graph(4), agents: 3, stride: 1 },
        Case { graph: || Graph::cycle_graph(5), agents: 2, stride: 1 },
        Case { graph: || Graph::grid("3x3", 3, 3, &[]), agents: 2, stride: 11 },
        Case { graph: || Graph::grid("3x3", 3, 3, &[]), agents: 3, stride: 509 },
    ];
    let mut checked = 0usize;
    for case in &cases {
        let graph = Arc::new((case.graph)());
        let slots = placements(graph.node_count(), case.agents);
        let mut index = 0usize;
        for (si, starts) in slots.iter().enumerate() {
            for (gi, goals) in slots.iter().enumerate() {
                index += 1;
                if (si * slots.len() + gi) % case.stride != 0 {
                    continue;
                }
                let inst = Instance::new(
                    Arc::clone(&graph),
                    starts.iter().map(|&v| NodeId(v)).collect(),
                    goals.iter().map(|&v| NodeId(v)).collect(),
                )
                .unwrap();
                for mode in [ConflictMode::Swap, ConflictMode::Following] {
                    let oracle = joint_optimal_soc(&inst, mode);
                    match cbs_solve(&inst, mode, SearchLimits::default()) {
                        Ok(plan) => {
                            assert_eq!(validate_plan(&plan, &graph, mode), Ok(()));
                            assert_eq!(
                                Some(soc(&plan)),
                                oracle,
                                "{} #{index} {mode:?} starts {starts:?} goals {goals:?}",
                                graph.name()
                            );
                            let optimum = oracle.unwrap();
                            let bounded =
                                ecbs_solve(&inst, 1.1, mode, SearchLimits::default()).unwrap();
                            assert!(
                                soc(&bounded) as f64 <= 1.1 * optimum as f64 + 1e-9,
                                "{} #{index} {mode:?}: ecbs soc {} vs optimum {optimum}",
                                graph.name(),
                                soc(&bounded)
                            );
                        }
                        Err(_) => {
                            assert_eq!(
                                oracle, None,
                                "{} #{index} {mode:?}: solver gave up on a solvable instance",
                                graph.name()
                            );
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    println!("criterion 6 (solver optimality): PASS ({checked} instance/mode checks)");
}

/// Criterion 7: paired-seed comparison of the baselines at p̄ = 0.5 on
/// benchmark-A; FSP's global synchronization must cost more than MCP's
/// dependency preservation, at 95% one-sided confidence.
#[test]
fn criterion_7_baseline_ordering() {
    let inst = benchmark_a();
    let plan = following_plan(&inst);
    let bound = 10 * plan.horizon() as u64 * plan.agent_count() as u64;
    let mut diffs: Vec<f64> = Vec::new();
    for seed in 0..100u64 {
        let mut rng = run_rng("pair-fsp", seed);
        let delays = sample_delays(8, 0.5, &mut rng).unwrap();
        let fsp = fsp_run(&plan, &delays, &mut rng, bound.max(10_000), seed).unwrap();
        assert!(fsp.metrics.success, "fsp seed {seed} failed");

        let mut rng = run_rng("pair-fsp", seed);
        let delays = sample_delays(8, 0.5, &mut rng).unwrap();
        let mcp = mcp_run(&plan, &delays, &mut rng, bound.max(10_000), seed).unwrap();
        assert!(mcp.metrics.success, "mcp seed {seed} failed");

        diffs.push(fsp.metrics.soc.unwrap() as f64 - mcp.metrics.soc.unwrap() as f64);
    }
    let k = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let t = mean / (var.sqrt() / k.sqrt());
    // One-sided t critical value at 95%, 99 degrees of freedom.
    assert!(
        mean > 0.0 && t > 1.6604,
        "FSP vs MCP: mean diff {mean:.2}, t = {t:.2}"
    );
    println!(
        "criterion 7 (baseline ordering): PASS (mean SOC diff {mean:.2}, t = {t:.2})"
    );
}

/// Criterion 8: offline hints reduce mean SOC on the random 32x32 grid
/// with 35 agents at p̄ = 0.5.
#[test]
fn criterion_8_hint_benefit() {
    let inst = load_fixture("random-32-32-10.map", "random-32-32-10.scen", 35);
    let plan = ecbs_solve(&inst, 1.1, ConflictMode::Following, SearchLimits::default())
        .expect("random grid instance is solvable");
    assert_eq!(
        validate_plan(&plan, &inst.graph, ConflictMode::Following),
        Ok(())
    );

    let run = RunConfig {
        activation_bound: 1_000_000,
        ..RunConfig::default()
    };
    let mut means = Vec::new();
    for (label, planner) in [
        ("causal_pibt", PlannerKind::CausalPibt),
        ("causal_pibt_plus", PlannerKind::CausalPibtHinted(plan)),
    ] {
        let mut total = 0u64;
        for seed in 0..50u64 {
            let mut rng = run_rng(&format!("hint|{label}"), seed);
            let delays = sample_delays(35, 0.5, &mut rng).unwrap();
            let out = run_time_independent(&inst, &planner, &delays, &mut rng, &run).unwrap();
            assert!(out.metrics.success, "{label} seed {seed} failed");
            total += out.metrics.soc.unwrap();
        }
        means.push((label, total as f64 / 50.0));
    }
    let (plain, plus) = (means[0].1, means[1].1);
    assert!(
        plus < plain,
        "hints did not help: plain {plain:.1} vs hinted {plus:.1}"
    );
    println!(
        "criterion 8 (hint benefit): PASS (mean SOC {plain:.1} plain vs {plus:.1} hinted)"
    );
}

/// Criterion 9: identical run tuples reproduce byte-identical metrics
/// and traces.
#[test]
fn criterion_9_determinism() {
    let bench = benchmark_a();
    let plan = following_plan(&bench);
    let cases: Vec<(&str, PlannerKind, f64, u64)> = vec![
        ("greedy", PlannerKind::Greedy { faithful: false }, 0.0, 0),
        ("causal_pibt", PlannerKind::CausalPibt, 0.5, 3),
        (
            "causal_pibt_plus",
            PlannerKind::CausalPibtHinted(plan.clone()),
            0.5,
            7,
        ),
    ];
    for (label, planner, p_bar, seed) in cases {
        let run_once = || {
            let mut rng = run_rng(&format!("det|{label}|{p_bar}"), seed);
            let delays = sample_delays(bench.agent_count(), p_bar, &mut rng).unwrap();
            let out = run_time_independent(
                &bench,
                &planner,
                &delays,
                &mut rng,
                &RunConfig {
                    seed,
                    ..RunConfig::default()
                },
            )
            .unwrap();
            (format!("{:?}", out.metrics), write_trace(&out.trace))
        };
        assert_eq!(run_once(), run_once(), "{label} not deterministic");
    }
    for (label, policy) in [("fsp", true), ("mcp", false)] {
        let run_once = || {
            let mut rng = run_rng(&format!("det|{label}"), 5);
            let delays = sample_delays(bench.agent_count(), 0.5, &mut rng).unwrap();
            let out = if policy {
                fsp_run(&plan, &delays, &mut rng, 10_000, 5).unwrap()
            } else {
                mcp_run(&plan, &delays, &mut rng, 10_000, 5).unwrap()
            };
            (format!("{:?}", out.metrics), write_trace(&out.trace))
        };
        assert_eq!(run_once(), run_once(), "{label} not deterministic");
    }
    println!("criterion 9 (determinism): PASS");

    // The two fixture maps also parse to the documented shapes.
    let g = load_fixture("random-32-32-10.map", "random-32-32-10.scen", 35);
    assert_eq!(g.graph.grid_shape(), Some((32, 32)));
    assert_eq!(g.agent_count(), 35);
    assert!(fixture_path("benchmark-A.map").exists());
}
