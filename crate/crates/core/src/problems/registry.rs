//! The four worked problems, addressable by id, with closed-form values and
//! optimal controls.

use serde::Serialize;

use super::{
    ControlDomain, ControlSignal, ProblemSpec, QuadraticControlStructure, ReferenceControl,
    WitnessFamily,
};
use crate::error::{Error, Result};

pub const REGISTERED_IDS: [&str; 4] = ["ex22", "ex23", "ex31", "ex32"];

/// Constant running cost of `ex31`.
pub const EX31_COST: f64 = 1.0;

/// `|x|` below this is treated as the kink of `F = |x|` when differentiating.
pub const ABS_DEAD_ZONE: f64 = 1e-9;

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![lo], vec![hi])
    }
}

/// A registered problem plus the boxes its experiments run on.
#[derive(Clone, Debug)]
pub struct RegisteredProblem {
    pub id: &'static str,
    pub spec: ProblemSpec,
    /// Spatial box of the grid solver; `None` for unbounded control domains.
    pub hjb_box: Option<Bounds>,
    /// State box of initial data used by hypothesis experiments.
    pub initial_states: Bounds,
    /// Range of initial times used by hypothesis experiments.
    pub initial_times: (f64, f64),
    /// Terminal-state search box for shooting.
    pub xi_box: Bounds,
}

pub fn registered(id: &str) -> Result<RegisteredProblem> {
    match id {
        "ex22" => Ok(RegisteredProblem {
            id: "ex22",
            spec: ex22()?,
            hjb_box: Some(Bounds::interval(-0.9, 2.0)),
            initial_states: Bounds::interval(-0.9, 2.0),
            initial_times: (0.0, 0.99),
            xi_box: Bounds::interval(-4.0, 6.0),
        }),
        "ex23" => Ok(RegisteredProblem {
            id: "ex23",
            spec: ex23()?,
            hjb_box: Some(Bounds::interval(-2.0, 2.0)),
            initial_states: Bounds::interval(-1.5, 1.5),
            initial_times: (0.0, 0.9),
            xi_box: Bounds::interval(-3.0, 3.0),
        }),
        "ex31" => Ok(RegisteredProblem {
            id: "ex31",
            spec: ex31()?,
            hjb_box: Some(Bounds::interval(-2.0, 2.0)),
            initial_states: Bounds::interval(-1.0, 1.0),
            initial_times: (0.0, 0.9),
            xi_box: Bounds::interval(-3.0, 3.0),
        }),
        "ex32" => Ok(RegisteredProblem {
            id: "ex32",
            spec: ex32()?,
            hjb_box: None,
            initial_states: Bounds::interval(-1.0, 1.0),
            initial_times: (0.0, 0.9),
            xi_box: Bounds::interval(-3.0, 3.0),
        }),
        other => Err(unknown(other)),
    }
}

pub fn problem(id: &str) -> Result<ProblemSpec> {
    registered(id).map(|r| r.spec)
}

fn unknown(id: &str) -> Error {
    Error::NotFound(format!(
        "unknown problem id `{id}` (registered: {})",
        REGISTERED_IDS.join(", ")
    ))
}

/// Closed-form value of a registered problem.
pub fn reference_value(id: &str, x: &[f64], tau: f64) -> Result<f64> {
    let value = match id {
        "ex22" => value_ex22,
        "ex23" => value_ex23,
        "ex31" => value_ex31,
        "ex32" => value_ex32,
        other => return Err(unknown(other)),
    };
    if x.len() != 1 {
        return Err(Error::Domain(format!(
            "`{id}` has a scalar state, got {x:?}"
        )));
    }
    Ok(value(x, tau))
}

/// Closed-form optimal control (or the reason there is no single one).
pub fn reference_optimal_control(id: &str, x0: &[f64], tau: f64) -> Result<ReferenceControl> {
    match id {
        "ex22" => control_ex22(x0, tau),
        "ex23" => control_ex23(x0, tau),
        "ex31" => Ok(ReferenceControl::NonUnique {
            family: WitnessFamily::AnyControl,
        }),
        "ex32" => Ok(ReferenceControl::NonUnique {
            family: WitnessFamily::KernelMultiple { u0: vec![0.0, 1.0] },
        }),
        other => Err(unknown(other)),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Domain(format!("initial time {tau} outside [0, 1)")))
    }
}

fn value_ex22(x: &[f64], tau: f64) -> f64 {
    let x = x[0];
    let growth = (1.0 - tau).exp();
    if x >= 0.0 {
        x * (growth - 1.0)
    } else if (1.0 + x) * growth <= 1.0 {
        (1.0 - tau) + (1.0 + x) * (1.0 - growth)
    } else {
        x - x.ln_1p()
    }
}

fn control_ex22(x0: &[f64], tau: f64) -> Result<ReferenceControl> {
    check_tau(tau)?;
    let x0 = x0[0];
    let control = if x0 >= 0.0 {
        ControlSignal::constant(tau, 1.0, vec![0.0])?
    } else if (1.0 + x0) * (1.0 - tau).exp() <= 1.0 {
        ControlSignal::constant(tau, 1.0, vec![1.0])?
    } else {
        // push up to the origin, then rest there
        let switch = tau - x0.ln_1p();
        ControlSignal::new(vec![tau, switch, 1.0], vec![vec![1.0], vec![0.0]])?
    };
    Ok(ReferenceControl::Unique { control })
}

fn value_ex23(x: &[f64], tau: f64) -> f64 {
    // symmetric in x; the outer branch runs all the way to T toward 0
    let a = x[0].abs();
    let reach = a - (1.0 - tau);
    if reach >= 0.0 {
        (a.powi(3) - reach.powi(3)) / 3.0 + tau - 1.0
    } else {
        a.powi(3) / 3.0 + tau - 1.0
    }
}

fn control_ex23(x0: &[f64], tau: f64) -> Result<ReferenceControl> {
    check_tau(tau)?;
    let x0 = x0[0];
    if x0.abs() + tau < 1.0 {
        Ok(ReferenceControl::NoneExists)
    } else {
        Ok(ReferenceControl::Unique {
            control: ControlSignal::constant(tau, 1.0, vec![-x0.signum()])?,
        })
    }
}

fn value_ex31(_x: &[f64], tau: f64) -> f64 {
    EX31_COST * (1.0 - tau)
}

fn value_ex32(_x: &[f64], _tau: f64) -> f64 {
    0.0
}

fn ex22() -> Result<ProblemSpec> {
    Ok(ProblemSpec::new(
        "ex22",
        1,
        ControlDomain::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        },
        0.0,
        1.0,
        |x, u, _t, out| out[0] = x[0] + u[0],
        |x, _u, _t| x[0].abs(),
    )?
    .with_jacobians(
        |_x, _u, _t, out| out[0] = 1.0,
        |x, _u, _t, out| {
            out[0] = if x[0].abs() <= ABS_DEAD_ZONE {
                0.0
            } else {
                x[0].signum()
            }
        },
    )
    .with_reference_value(value_ex22)
    .with_reference_control(control_ex22)
    .with_nonnegative_cost())
}

fn ex23() -> Result<ProblemSpec> {
    Ok(ProblemSpec::new(
        "ex23",
        1,
        ControlDomain::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        },
        0.0,
        1.0,
        |_x, u, _t, out| out[0] = u[0],
        |x, u, _t| x[0] * x[0] - u[0] * u[0],
    )?
    .with_jacobians(
        |_x, _u, _t, out| out[0] = 0.0,
        |x, _u, _t, out| out[0] = 2.0 * x[0],
    )
    .with_reference_value(value_ex23)
    .with_reference_control(control_ex23))
}

fn ex31() -> Result<ProblemSpec> {
    Ok(ProblemSpec::new(
        "ex31",
        1,
        ControlDomain::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        },
        0.0,
        1.0,
        |x, u, _t, out| out[0] = -x[0] + u[0],
        |_x, _u, _t| EX31_COST,
    )?
    .with_jacobians(
        |_x, _u, _t, out| out[0] = -1.0,
        |_x, _u, _t, out| out[0] = 0.0,
    )
    .with_reference_value(value_ex31)
    .with_reference_control(|_x, _tau| {
        Ok(ReferenceControl::NonUnique {
            family: WitnessFamily::AnyControl,
        })
    })
    .with_nonnegative_cost())
}

fn ex32() -> Result<ProblemSpec> {
    Ok(ProblemSpec::new(
        "ex32",
        1,
        ControlDomain::EuclideanSpace { dim: 2 },
        0.0,
        1.0,
        |x, u, _t, out| out[0] = -x[0] + u[0],
        |_x, u, _t| u[0] * u[0],
    )?
    .with_jacobians(
        |_x, _u, _t, out| out[0] = -1.0,
        |_x, _u, _t, out| out[0] = 0.0,
    )
    .with_reference_value(value_ex32)
    .with_reference_control(|_x, _tau| {
        Ok(ReferenceControl::NonUnique {
            family: WitnessFamily::KernelMultiple { u0: vec![0.0, 1.0] },
        })
    })
    .with_quadratic_structure(QuadraticControlStructure {
        input_matrix: vec![1.0, 0.0],
        penalty_diag: vec![1.0, 0.0],
        kernel_vector: Some(vec![0.0, 1.0]),
    })
    .with_nonnegative_cost())
}
