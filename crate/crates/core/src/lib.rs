//! Numerical laboratory for finite-horizon Lagrange optimal control problems.
//!
//! A problem is solved two independent ways and the answers are compared:
//!
//! * dynamic programming: the Hamilton–Jacobi–Bellman equation is solved on a
//!   grid ([`hjb::solve_hjb`]) and cross-checked against a brute-force
//!   backward recursion ([`hjb::dp_value_oracle`]);
//! * the maximum principle: extremals of the control Hamiltonian system are
//!   flowed backward from terminal states ([`pmp::flow_backward`]), shot to
//!   match initial data ([`pmp::shoot_pmp`]) and scanned for shocks.
//!
//! [`semidiff`] supplies the nonsmooth analysis (super- and subdifferential
//! estimates, semiconcavity tests) used to decide whether a candidate value
//! function is a viscosity or an extended solution, and [`hypotheses`]
//! assembles everything into reproducible verdict reports.
//!
//! Sign convention: the HJB equation is `-v_t + sup_u H(x, -v_x, u, t) = 0`
//! with `H(x, p, u, t) = <p, f(x, u, t)> - F(x, u, t)` throughout.

pub mod error;
pub mod hamiltonian;
pub mod hjb;
pub mod hypotheses;
pub mod ode;
pub mod pmp;
pub mod problems;
pub mod report;
pub mod semidiff;

pub use error::{Error, Result};
pub use hamiltonian::{ArgmaxSet, DifferentiabilityDiagnosis, Wrt};
pub use hjb::{GridAxis, GridValueFunction, SolutionPropertyReport};
pub use hypotheses::{HypothesisReport, Verdict};
pub use pmp::{Extremal, Flow, ShockWitness};
pub use problems::{
    simulate, ControlDomain, ControlSignal, ProblemSpec, ReferenceControl, Trajectory,
    WitnessFamily,
};
pub use semidiff::{ScalarField, SemidiffEstimate, SemidiffKind, Side};
