//! Multi-rate nonlinear MPC for combined car following and pack cooling.

pub mod controller;
pub mod grid;
pub mod limits;
pub mod rollout;
pub mod solver;
pub mod strategy;

pub use controller::{solve_step, warm_start_shift, ControlSequence, MpcConfig, MpcSolution, PenaltyOptions, StepContext};
pub use grid::HorizonGrid;
pub use limits::{idm_min_spacing, ControlLimits, SpacingPolicy};
pub use rollout::{HorizonPreview, Trajectory};
pub use solver::{nlp_minimize, BoxRateSet, SolverDiagnostics, SolverOptions};
pub use strategy::{objective_value, Strategy, StrategyKind, Weights};
