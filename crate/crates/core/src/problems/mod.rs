//! Optimal control problem definitions, admissible controls and trajectory
//! simulation.
//!
//! A [`ProblemSpec`] bundles the dynamics `f`, the running cost `F`, the
//! control domain `U` and the horizon `[t0, T]`. Evaluators are pure and
//! thread-safe, so a spec can be shared freely across worker threads.

mod config;
pub mod registry;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, rk4_step};

pub use config::{load_problem_config, CostForm, DynamicsForm, ProblemConfig};
pub use registry::{reference_optimal_control, reference_value, Bounds, RegisteredProblem};

/// Points of a finite control set closer than this are considered equal.
pub const POINT_TOL: f64 = 1e-12;

pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;
pub type CostFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;
pub type ValueFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type ControlFn = Arc<dyn Fn(&[f64], f64) -> Result<ReferenceControl> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlDomain {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    FiniteSet {
        points: Vec<Vec<f64>>,
    },
    /// All of `R^m`. Only operations with an analytic maximizer accept it.
    EuclideanSpace {
        dim: usize,
    },
}

impl ControlDomain {
    pub fn validate(&self) -> Result<()> {
        match self {
            ControlDomain::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Domain(
                        "box bounds must be nonempty and of equal length".into(),
                    ));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
                {
                    return Err(Error::Domain("box requires finite lower <= upper".into()));
                }
            }
            ControlDomain::FiniteSet { points } => {
                let Some(first) = points.first() else {
                    return Err(Error::Domain("finite control set is empty".into()));
                };
                if first.is_empty() || points.iter().any(|p| p.len() != first.len()) {
                    return Err(Error::Domain("finite control set has ragged points".into()));
                }
                for (i, a) in points.iter().enumerate() {
                    for b in &points[i + 1..] {
                        if ode::max_abs_diff(a, b) <= POINT_TOL {
                            return Err(Error::Domain(format!(
                                "duplicate control point {a:?} in finite set"
                            )));
                        }
                    }
                }
            }
            ControlDomain::EuclideanSpace { dim } => {
                if *dim == 0 {
                    return Err(Error::Domain("control dimension must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlDomain::Box { lower, .. } => lower.len(),
            ControlDomain::FiniteSet { points } => points[0].len(),
            ControlDomain::EuclideanSpace { dim } => *dim,
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        if u.len() != self.dim() || u.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ControlDomain::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, h))| *v >= l - POINT_TOL && *v <= h + POINT_TOL),
            ControlDomain::FiniteSet { points } => {
                points.iter().any(|p| ode::max_abs_diff(p, u) <= POINT_TOL)
            }
            ControlDomain::EuclideanSpace { .. } => true,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            ControlDomain::FiniteSet { points } => points.len() == 1,
            _ => true,
        }
    }

    /// Draws a point of the domain. Unbounded domains sample `[-1, 1]^m`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ControlDomain::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, h)| if l == h { *l } else { rng.gen_range(*l..=*h) })
                .collect(),
            ControlDomain::FiniteSet { points } => points[rng.gen_range(0..points.len())].clone(),
            ControlDomain::EuclideanSpace { dim } => {
                (0..*dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
            }
        }
    }
}

/// Control-affine dynamics with a quadratic control penalty,
/// `f = a(x, t) + B u`, `F = g(x, t) + u^T S u` with `S` diagonal and
/// positive semidefinite. Carried by problems on unbounded control domains so
/// the Hamiltonian maximizer can be written down in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticControlStructure {
    /// `B`, row-major `n x m`.
    pub input_matrix: Vec<f64>,
    /// Diagonal of `S`.
    pub penalty_diag: Vec<f64>,
    /// A nonzero `u0` with `u0^T S u0 = 0`, if `S` is singular.
    pub kernel_vector: Option<Vec<f64>>,
}

/// Family of controls when optimal controls are not unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WitnessFamily {
    /// Every admissible control is optimal.
    AnyControl,
    /// `u(t) = k u0` is optimal for every real `k`.
    KernelMultiple { u0: Vec<f64> },
}

impl WitnessFamily {
    /// A member of the family on `[tau, t_final]`. For [`WitnessFamily::AnyControl`]
    /// this is a random piecewise-constant control drawn with `rng`.
    pub fn member<R: Rng + ?Sized>(
        &self,
        spec: &ProblemSpec,
        tau: f64,
        k: f64,
        rng: &mut R,
    ) -> Result<ControlSignal> {
        match self {
            WitnessFamily::AnyControl => random_control(spec, tau, 5, rng),
            WitnessFamily::KernelMultiple { u0 } => {
                ControlSignal::constant(tau, spec.t_final(), u0.iter().map(|v| k * v).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceControl {
    Unique { control: ControlSignal },
    NoneExists,
    NonUnique { family: WitnessFamily },
}

/// A complete problem instance.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    state_dim: usize,
    control_domain: ControlDomain,
    t0: f64,
    t_final: f64,
    dynamics: DynamicsFn,
    running_cost: CostFn,
    dynamics_jac_x: Option<DynamicsFn>,
    cost_grad_x: Option<DynamicsFn>,
    reference_value: Option<ValueFn>,
    reference_control: Option<ControlFn>,
    quadratic_structure: Option<QuadraticControlStructure>,
    nonnegative_cost: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_domain", &self.control_domain)
            .field("t0", &self.t0)
            .field("t_final", &self.t_final)
            .field("has_jacobians", &self.has_jacobians())
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn new<D, C>(
        name: impl Into<String>,
        state_dim: usize,
        control_domain: ControlDomain,
        t0: f64,
        t_final: f64,
        dynamics: D,
        running_cost: C,
    ) -> Result<Self>
    where
        D: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
        C: Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        if state_dim == 0 {
            return Err(Error::Domain("state dimension must be positive".into()));
        }
        if !(t0 < t_final) || !t0.is_finite() || !t_final.is_finite() {
            return Err(Error::Domain(format!(
                "horizon requires finite t0 < T, got [{t0}, {t_final}]"
            )));
        }
        control_domain.validate()?;
        Ok(Self {
            name: name.into(),
            state_dim,
            control_domain,
            t0,
            t_final,
            dynamics: Arc::new(dynamics),
            running_cost: Arc::new(running_cost),
            dynamics_jac_x: None,
            cost_grad_x: None,
            reference_value: None,
            reference_control: None,
            quadratic_structure: None,
            nonnegative_cost: false,
        })
    }

    /// Attaches `df/dx` (row-major, `out[i * n + j] = df_i/dx_j`) and `dF/dx`.
    pub fn with_jacobians<J, G>(mut self, jac_x: J, grad_x: G) -> Self
    where
        J: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.dynamics_jac_x = Some(Arc::new(jac_x));
        self.cost_grad_x = Some(Arc::new(grad_x));
        self
    }

    pub fn with_reference_value<V>(mut self, value: V) -> Self
    where
        V: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        self.reference_value = Some(Arc::new(value));
        self
    }

    pub fn with_reference_control<R>(mut self, control: R) -> Self
    where
        R: Fn(&[f64], f64) -> Result<ReferenceControl> + Send + Sync + 'static,
    {
        self.reference_control = Some(Arc::new(control));
        self
    }

    pub fn with_quadratic_structure(mut self, structure: QuadraticControlStructure) -> Self {
        self.quadratic_structure = Some(structure);
        self
    }

    /// Declares `F >= 0`, which makes accumulated cost monotone.
    pub fn with_nonnegative_cost(mut self) -> Self {
        self.nonnegative_cost = true;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn control_dim(&self) -> usize {
        self.control_domain.dim()
    }
    pub fn control_domain(&self) -> &ControlDomain {
        &self.control_domain
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn quadratic_structure(&self) -> Option<&QuadraticControlStructure> {
        self.quadratic_structure.as_ref()
    }
    pub fn nonnegative_cost(&self) -> bool {
        self.nonnegative_cost
    }
    pub fn has_jacobians(&self) -> bool {
        self.dynamics_jac_x.is_some() && self.cost_grad_x.is_some()
    }
    pub fn has_reference_value(&self) -> bool {
        self.reference_value.is_some()
    }

    pub fn dynamics_into(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        (self.dynamics)(x, u, t, out)
    }

    pub fn dynamics(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        (self.dynamics)(x, u, t, &mut out);
        out
    }

    pub fn running_cost(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        (self.running_cost)(x, u, t)
    }

    /// `df/dx`, row-major `n x n`.
    pub fn dynamics_jac_x(&self, x: &[f64], u: &[f64], t: f64) -> Option<Vec<f64>> {
        self.dynamics_jac_x.as_ref().map(|jac| {
            let mut out = vec![0.0; self.state_dim * self.state_dim];
            jac(x, u, t, &mut out);
            out
        })
    }

    pub fn cost_grad_x(&self, x: &[f64], u: &[f64], t: f64) -> Option<Vec<f64>> {
        self.cost_grad_x.as_ref().map(|grad| {
            let mut out = vec![0.0; self.state_dim];
            grad(x, u, t, &mut out);
            out
        })
    }

    /// Closed-form value, when the problem carries one.
    pub fn reference_value(&self, x: &[f64], tau: f64) -> Option<f64> {
        self.reference_value.as_ref().map(|v| v(x, tau))
    }

    pub fn reference_value_fn(&self) -> Option<ValueFn> {
        self.reference_value.clone()
    }

    pub fn reference_control(&self, x0: &[f64], tau: f64) -> Option<Result<ReferenceControl>> {
        self.reference_control.as_ref().map(|c| c(x0, tau))
    }

    pub(crate) fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Domain(format!(
                "state has dimension {}, problem `{}` expects {}",
                x.len(),
                self.name,
                self.state_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state {x:?}")));
        }
        Ok(())
    }

    pub(crate) fn check_control(&self, u: &[f64]) -> Result<()> {
        if self.control_domain.contains(u) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "control {u:?} lies outside the control domain of `{}`",
                self.name
            )))
        }
    }

    /// Compares the supplied derivatives with central differences at random
    /// points of `[-2, 2]^n x U x [t0, T]`. Returns the worst relative error,
    /// or `None` when the problem carries no derivatives.
    pub fn derivative_check<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Option<f64> {
        if !self.has_jacobians() {
            return None;
        }
        let n = self.state_dim;
        let h = 1e-6;
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..=2.0)).collect();
            let u = self.control_domain.sample(rng);
            let t = rng.gen_range(self.t0..=self.t_final);
            let jac = self.dynamics_jac_x(&x, &u, t).unwrap();
            let grad = self.cost_grad_x(&x, &u, t).unwrap();
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fp = self.dynamics(&xp, &u, t);
                let fm = self.dynamics(&xm, &u, t);
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    let exact = jac[i * n + j];
                    worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
                }
                let fd =
                    (self.running_cost(&xp, &u, t) - self.running_cost(&xm, &u, t)) / (2.0 * h);
                worst = worst.max((fd - grad[j]).abs() / (1.0 + grad[j].abs()));
            }
        }
        Some(worst)
    }
}

/// Piecewise-constant control: `values[k]` holds on `[breakpoints[k], breakpoints[k + 1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(Error::Domain(format!(
                "control needs K + 1 breakpoints for K values, got {} and {}",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain(
                "control breakpoints must increase strictly".into(),
            ));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|v| v.len() != m) {
            return Err(Error::Domain(
                "control values must share a positive dimension".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn constant(start: f64, end: f64, value: Vec<f64>) -> Result<Self> {
        Self::new(vec![start, end], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }
    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Right-continuous evaluation; the last value is used at the end point.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let idx = self.breakpoints[1..].partition_point(|&b| b <= t);
        &self.values[idx.min(self.values.len() - 1)]
    }

    pub fn validate_in(&self, domain: &ControlDomain) -> Result<()> {
        match self.values.iter().find(|v| !domain.contains(v)) {
            Some(v) => Err(Error::Domain(format!(
                "control value {v:?} outside the control domain"
            ))),
            None => Ok(()),
        }
    }

    /// Merges adjacent intervals carrying equal values.
    pub fn simplified(&self) -> Self {
        let mut bps = vec![self.breakpoints[0]];
        let mut vals: Vec<Vec<f64>> = Vec::new();
        for (k, v) in self.values.iter().enumerate() {
            if vals.last() != Some(v) {
                if !vals.is_empty() {
                    bps.push(self.breakpoints[k]);
                }
                vals.push(v.clone());
            }
        }
        bps.push(self.end());
        Self {
            breakpoints: bps,
            values: vals,
        }
    }
}

/// Random piecewise-constant admissible control with `pieces` equal intervals.
pub fn random_control<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    tau: f64,
    pieces: usize,
    rng: &mut R,
) -> Result<ControlSignal> {
    let pieces = pieces.max(1);
    let bps = ode::linspace(tau, spec.t_final(), pieces + 1);
    let vals = (0..pieces)
        .map(|_| spec.control_domain().sample(rng))
        .collect();
    ControlSignal::new(bps, vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Running integral of the cost from `tau` to each sample time.
    pub accumulated_cost: Vec<f64>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        *self.accumulated_cost.last().unwrap()
    }
    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }
}

/// Integrates the state equation under `control` from `x(tau) = x0` to `T`
/// with fixed-step RK4, accumulating the running cost as an extra state.
/// Integration restarts at every control breakpoint, and roughly `steps`
/// steps are spread over the segments in proportion to their length.
pub fn simulate(
    spec: &ProblemSpec,
    x0: &[f64],
    tau: f64,
    control: &ControlSignal,
    steps: usize,
) -> Result<Trajectory> {
    spec.check_state(x0)?;
    let t_final = spec.t_final();
    if !(tau >= spec.t0() && tau < t_final) {
        return Err(Error::Domain(format!(
            "tau = {tau} outside [{}, {t_final})",
            spec.t0()
        )));
    }
    if steps == 0 {
        return Err(Error::Usage("simulate needs at least one step".into()));
    }
    if control.start() > tau || control.end() < t_final {
        return Err(Error::Domain(format!(
            "control defined on [{}, {}] does not cover [{tau}, {t_final}]",
            control.start(),
            control.end()
        )));
    }
    if control.dim() != spec.control_dim() {
        return Err(Error::Domain(
            "control dimension does not match the problem".into(),
        ));
    }
    control.validate_in(spec.control_domain())?;

    let n = spec.state_dim();
    let mut segment_ends: Vec<f64> = control
        .breakpoints()
        .iter()
        .copied()
        .filter(|&b| b > tau && b < t_final)
        .collect();
    segment_ends.push(t_final);

    let span = t_final - tau;
    let mut times = vec![tau];
    let mut states = vec![x0.to_vec()];
    let mut costs = vec![0.0];
    let mut y: Vec<f64> = x0.iter().copied().chain(std::iter::once(0.0)).collect();
    let mut start = tau;
    for end in segment_ends {
        let u = control.value_at(start).to_vec();
        let seg_steps = ((steps as f64 * (end - start) / span).round() as usize).max(1);
        let h = (end - start) / seg_steps as f64;
        let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| {
            spec.dynamics_into(&y[..n], &u, t, &mut out[..n]);
            out[n] = spec.running_cost(&y[..n], &u, t);
        };
        for k in 0..seg_steps {
            let t = start + h * k as f64;
            y = rk4_step(&mut rhs, t, &y, h);
            let t_next = if k + 1 == seg_steps { end } else { t + h };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    time: t_next,
                    detail: format!("non-finite state while simulating `{}`", spec.name()),
                });
            }
            times.push(t_next);
            states.push(y[..n].to_vec());
            costs.push(y[n]);
        }
        start = end;
    }
    Ok(Trajectory {
        times,
        states,
        accumulated_cost: costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(id: &str) -> ProblemSpec {
        registry::problem(id).unwrap()
    }

    #[test]
    fn constant_cost_accumulates_exactly() {
        let spec = ex("ex31");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for tau in [0.0, 0.25, 0.7] {
            let control = random_control(&spec, tau, 4, &mut rng).unwrap();
            let traj = simulate(&spec, &[0.3], tau, &control, 50).unwrap();
            assert!((traj.total_cost() - (1.0 - tau)).abs() <= 1e-12);
        }
    }

    #[test]
    fn equilibrium_of_linear_problem() {
        let spec = ex("ex22");
        let control = ControlSignal::constant(0.0, 1.0, vec![0.0]).unwrap();
        let traj = simulate(&spec, &[0.0], 0.0, &control, 20).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        assert_eq!(traj.total_cost(), 0.0);
    }

    #[test]
    fn unit_speed_trajectory_cost() {
        let spec = ex("ex23");
        let control = ControlSignal::constant(0.0, 1.0, vec![1.0]).unwrap();
        let traj = simulate(&spec, &[0.0], 0.0, &control, 10).unwrap();
        assert!((traj.final_state()[0] - 1.0).abs() < 1e-14);
        assert!((traj.total_cost() + 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn initial_state_is_kept_exactly() {
        let spec = ex("ex22");
        let control = ControlSignal::constant(0.0, 1.0, vec![1.0]).unwrap();
        let x0 = [0.1 + 0.2];
        let traj = simulate(&spec, &x0, 0.0, &control, 7).unwrap();
        assert_eq!(traj.states[0], x0.to_vec());
        assert_eq!(traj.accumulated_cost[0], 0.0);
    }

    #[test]
    fn nonnegative_cost_accumulates_monotonically() {
        let spec = ex("ex22");
        assert!(spec.nonnegative_cost());
        let control = ControlSignal::new(vec![0.0, 0.4, 1.0], vec![vec![1.0], vec![0.0]]).unwrap();
        let traj = simulate(&spec, &[-0.7], 0.0, &control, 100).unwrap();
        assert!(traj.accumulated_cost.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn breakpoints_are_integration_nodes() {
        let spec = ex("ex22");
        let control = ControlSignal::new(vec![0.0, 0.37, 1.0], vec![vec![1.0], vec![0.0]]).unwrap();
        let traj = simulate(&spec, &[-0.5], 0.0, &control, 10).unwrap();
        assert!(traj.times.contains(&0.37));
    }

    #[test]
    fn uncovered_horizon_is_rejected() {
        let spec = ex("ex22");
        let control = ControlSignal::constant(0.2, 1.0, vec![0.0]).unwrap();
        assert!(matches!(
            simulate(&spec, &[0.0], 0.0, &control, 10),
            Err(Error::Domain(_))
        ));
        let short = ControlSignal::constant(0.0, 0.9, vec![0.0]).unwrap();
        assert!(matches!(
            simulate(&spec, &[0.0], 0.0, &short, 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn out_of_domain_control_is_rejected() {
        let spec = ex("ex22");
        let control = ControlSignal::constant(0.0, 1.0, vec![2.0]).unwrap();
        assert!(matches!(
            simulate(&spec, &[0.0], 0.0, &control, 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn divergence_names_the_time() {
        let spec = ProblemSpec::new(
            "blowup",
            1,
            ControlDomain::Box {
                lower: vec![0.0],
                upper: vec![0.0],
            },
            0.0,
            1.0,
            |x, _u, _t, out| out[0] = x[0] * x[0],
            |_x, _u, _t| 0.0,
        )
        .unwrap();
        let control = ControlSignal::constant(0.0, 1.0, vec![0.0]).unwrap();
        match simulate(&spec, &[1e200], 0.0, &control, 10) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0 && time <= 1.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn control_signal_validation() {
        assert!(ControlSignal::new(vec![0.0, 0.0], vec![vec![1.0]]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0], vec![]).is_err());
        let c = ControlSignal::new(
            vec![0.0, 0.5, 0.7, 1.0],
            vec![vec![1.0], vec![1.0], vec![0.0]],
        )
        .unwrap();
        assert_eq!(c.value_at(0.5), &[1.0]);
        assert_eq!(c.value_at(0.7), &[0.0]);
        assert_eq!(c.value_at(1.0), &[0.0]);
        let s = c.simplified();
        assert_eq!(s.breakpoints(), &[0.0, 0.7, 1.0]);
    }

    #[test]
    fn domain_validation() {
        assert!(ControlDomain::Box {
            lower: vec![1.0],
            upper: vec![0.0]
        }
        .validate()
        .is_err());
        assert!(ControlDomain::FiniteSet { points: vec![] }
            .validate()
            .is_err());
        assert!(ControlDomain::FiniteSet {
            points: vec![vec![0.0], vec![1e-13]]
        }
        .validate()
        .is_err());
        let set = ControlDomain::FiniteSet {
            points: vec![vec![-1.0], vec![1.0]],
        };
        assert!(set.validate().is_ok());
        assert!(set.contains(&[1.0]));
        assert!(!set.contains(&[0.0]));
        assert!(!set.is_convex());
    }

    #[test]
    fn registered_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in registry::REGISTERED_IDS {
            let spec = ex(id);
            let worst = spec.derivative_check(200, &mut rng).unwrap();
            assert!(worst < 1e-5, "{id}: relative derivative error {worst}");
        }
    }

    #[test]
    fn horizon_must_be_ordered() {
        let res = ProblemSpec::new(
            "bad",
            1,
            ControlDomain::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            1.0,
            1.0,
            |_x, _u, _t, out| out[0] = 0.0,
            |_x, _u, _t| 0.0,
        );
        assert!(matches!(res, Err(Error::Domain(_))));
    }
}
