//! File formats shared by the `milqg` binary and its tests: the problem
//! document and the solution artifact.

pub mod artifact;
pub mod problem;

pub use artifact::{ChannelArtifact, ControllerArtifact, SolutionArtifact};
pub use problem::{ProblemFile, SimOverrides, SolverOverrides};
