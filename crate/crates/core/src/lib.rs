pub mod backends;
pub mod dev;
pub mod eval;
pub mod memory;
pub mod model;
pub mod planner;
pub mod prompts;
pub mod reasoning;
pub mod session;
pub mod orchestrator;

pub use backends::{Landscape, SyntheticWorld};

pub type LandscapeF64 = Landscape<f64>;
pub type LandscapeF32 = Landscape<f32>;
pub use memory::KernelParams;
pub use model::{BranchId, ExplorationGraph, Hypothesis, Node, NodeId, ScoreRecord, TaskSpec};
pub use orchestrator::{resume, run, OrchestratorError, RunConfig, RunOptions, RunOutcome};

pub type KernelParamsF64 = KernelParams<f64>;
pub type KernelParamsF32 = KernelParams<f32>;
