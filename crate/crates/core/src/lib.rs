//! Method-of-lines discretization of optimal control for the one-phase
//! inverse Stefan problem.

pub mod analysis;
pub mod cli;
pub mod control;
pub mod cost;
pub mod error;
pub mod expr;
pub mod fem;
pub mod optimize;
pub mod problem;
pub mod quadrature;
pub mod state;
pub mod util;
pub mod verify;

pub use analysis::{convergence_sweep, energy_report, quarter_norm, weak_residual, EnergyReport, SweepTable};
pub use control::{lift_pn, sample_qn, ContinuousControl, DiscreteControl};
pub use cost::{continuous_cost_estimate, discrete_cost, CostBreakdown, TraceData};
pub use error::{Error, ExprError, Result};
pub use expr::{parse_expression, FunctionSpec, Signature};
pub use fem::stability_threshold;
pub use optimize::{minimize, minimize_against, Method, OptOptions, OptResult};
pub use problem::{validate_data, ProblemData, ProblemSpec};
pub use state::{solve_state, DiscreteStateVector};
