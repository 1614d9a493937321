//! Time-independent execution of multi-agent path finding (MAPF).
//!
//! Agents move on an undirected graph by flipping through three modes
//! (`contracted`, `requesting`, `extended`) under atomic, asynchronously
//! scheduled activations. The crate provides:
//!
//! - [`graph`]: environment graphs, MovingAI `.map`/`.scen` ingestion,
//!   shortest-path distances, and structural predicates.
//! - [`model`]: the transition system itself — agent states, legal mode
//!   transitions, occupancy, deadlock detection, and invariant checking.
//! - [`planners`]: per-activation decision rules — Greedy, Causal-PIBT,
//!   and the plan-hinted Causal-PIBT variant.
//! - [`offline`]: CBS / ECBS solvers with selectable conflict semantics,
//!   plan validation and metrics, and the plan file format.
//! - [`policies`]: the FSP and MCP baseline execution policies for plans
//!   under stochastic delays.
//! - [`simulator`]: the delay-probability experiment engine, fair random
//!   schedulers, metrics, traces, and an exhaustive state-space explorer.

pub mod graph;
pub mod model;
pub mod offline;
pub mod planners;
pub mod policies;
pub mod simulator;

pub use graph::{Graph, Instance, NodeId};
pub use model::{AgentId, Configuration, Mode};
