//! Closed-loop experiments: driving cycles, the simulation loop, metrics and sweeps.

pub mod cycle;
pub mod harness;
pub mod sweep;

pub use cycle::{desk_composite, load_cycle, synth_cycle, DrivingCycle, ProfileKind, Segment, SlopeKind};
pub use harness::{run_closed_loop, InitialConditions, Metrics, RunLog, RunRow, Scenario, RUNLOG_HEADER};
pub use sweep::{apply_axis, sweep, SweepAxis, SweepRow};
