//! Penalty-barrier finite element transcription of optimal control problems,
//! classical collocation baselines and a primal-dual interior-point solver.

pub mod error;
pub mod fem;
pub mod harness;
pub mod ocp;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
pub use fem::{Mesh, TrajectorySpace};
pub use ocp::{Bound, Dims, OcpProblem, Trajectory};
pub use solver::{solve, KktState, SolveOptions, SolveReport, Termination};
pub use transcription::{transcribe, Method, Mode, TranscribedNlp};
