//! Engine for a self-evolving, help-seeking research agent.
//!
//! The central agent runs a minimal loop: reason over the task, emit
//! natural-language help requests inside `<help>` tags when it hits a
//! knowledge gap, and close with `<answer>` once the evidence suffices.
//! Help requests are delegated to a tool router that picks concrete tool
//! calls (web search, code execution, knowledge-base retrieval), executes
//! them, and returns distilled, provenance-tagged knowledge. After each
//! task the agent reflects: gold-free self-reflection can trigger a retry,
//! and gold-aware verified reflection distills reusable lessons into a
//! versioned experience state rendered into every later task context.
//! All raw tool output is accumulated in a persistent, deduplicated,
//! embedding-indexed knowledge base that becomes routable as its own tool
//! after a warm-up stage.
//!
//! Everything is testable offline: scripted chat providers, a hashed
//! term-frequency embedding, a fixture web corpus, and a rule-based
//! router make whole runs deterministic.
//!
//! Data-parallel inner loops (chunk scoring, embedding, corpus search,
//! call fan-out) use rayon when the default `parallel` feature is on and
//! fall back to sequential code without it; results are identical either
//! way.

pub mod backends;
pub mod kb;
pub mod orchestrator;
pub mod provider;
pub mod reflection;
pub mod router;
pub mod trace;
pub mod types;

pub use orchestrator::{Engine, SolveReport, SolveStatus};
pub use types::{RunConfig, Task, Trajectory, TrajectoryEvent};
