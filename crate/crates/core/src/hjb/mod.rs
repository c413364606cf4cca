//! Grid solution of the HJB equation, a brute-force dynamic-programming
//! oracle, and viscosity / extended-solution checks.

mod checks;
mod grid;
mod oracle;
mod scheme;

pub use checks::{
    check_extended_solution, check_extended_solution_with, check_viscosity, check_viscosity_with,
    grid_points, CheckOptions, PointOutcome, Property, SolutionPropertyReport, TerminalCheck,
    CHECK_TOL,
};
pub use grid::{GridAxis, GridValueFunction, SchemeMetadata};
pub use oracle::dp_value_oracle;
pub use scheme::{
    grid_error, max_speed, min_time_steps, solve_hjb, solve_hjb_with, GridError,
    NumericalHamiltonian, SolveOptions, TerminalFn, CFL_FACTOR, MIN_NODES,
};
