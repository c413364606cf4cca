//! Backward integration of the Hamiltonian system with branching at ties of
//! the maximum condition.

use serde::Serialize;

use super::{assemble_extremal, Extremal};
use crate::error::{Error, Result};
use crate::hamiltonian::{control_hamiltonian_unchecked, ControlMesh, Maximizer, CLUSTER_TOL};
use crate::ode::{dist, rk4_step};
use crate::problems::{ControlDomain, ProblemSpec};

/// Branches allowed per terminal state before the flow is declared
/// chattering-dominated.
pub const BRANCH_CAP: usize = 64;
/// Relative gap under which two controls tie while flowing. Much tighter than
/// the argmax tolerance so that `O(h^2)` preferences still decide.
pub const TIE_REL: f64 = 1e-12;
/// Points per control dimension when the Hamiltonian is flat in `u`.
const FLAT_MESH: usize = 11;

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub branch_cap: usize,
    /// Overrides the default maximization mesh.
    pub control_mesh: Option<usize>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            branch_cap: BRANCH_CAP,
            control_mesh: None,
        }
    }
}

/// All branches flowed backward from one terminal state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flow {
    pub xi: Vec<f64>,
    /// Sorted by branch signature.
    pub branches: Vec<Extremal>,
    /// Some step found every control maximal and consistent.
    pub any_control: bool,
    /// The branch cap was hit; `branches` is incomplete.
    pub exploded: bool,
    pub notes: Vec<String>,
}

impl Flow {
    /// Times at which any branch split, sorted and deduplicated.
    pub fn branch_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self
            .branches
            .iter()
            .flat_map(|b| b.branch_times.iter().copied())
            .collect();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        ts
    }
}

/// Flows `(x, p)(T) = (xi, 0)` backward to `t0` in `nt` RK4 steps.
pub fn flow_backward(spec: &ProblemSpec, xi: &[f64], nt: usize) -> Result<Flow> {
    flow_backward_with(spec, xi, spec.t0(), nt, &FlowOptions::default())
}

/// As [`flow_backward`], stopping at `t_end`.
pub fn flow_backward_with(
    spec: &ProblemSpec,
    xi: &[f64],
    t_end: f64,
    nt: usize,
    options: &FlowOptions,
) -> Result<Flow> {
    let p_zero = vec![0.0; spec.state_dim()];
    flow_from(spec, xi, &p_zero, spec.t_final(), t_end, nt, options)
}

/// Flows the Hamiltonian system backward from `(x, p)(t_start)` to `t_end`.
/// Over-cap flows come back as [`Error::BranchExplosion`] carrying the
/// branches completed so far.
pub fn flow_from(
    spec: &ProblemSpec,
    x_start: &[f64],
    p_start: &[f64],
    t_start: f64,
    t_end: f64,
    nt: usize,
    options: &FlowOptions,
) -> Result<Flow> {
    spec.check_state(x_start)?;
    spec.check_state(p_start)?;
    if !spec.has_jacobians() {
        return Err(Error::Usage(format!(
            "problem `{}` carries no state derivatives; the costate equation needs them",
            spec.name()
        )));
    }
    if nt == 0 {
        return Err(Error::Usage("flow needs at least one time step".into()));
    }
    if !(t_end >= spec.t0() && t_end < t_start && t_start <= spec.t_final()) {
        return Err(Error::Domain(format!(
            "flow interval [{t_end}, {t_start}] outside [{}, {}]",
            spec.t0(),
            spec.t_final()
        )));
    }
    let stepper = Stepper::new(spec, options.control_mesh)?;
    let times: Vec<f64> = (0..=nt)
        .map(|k| match k {
            0 => t_end,
            k if k == nt => t_start,
            k => t_end + (t_start - t_end) * k as f64 / nt as f64,
        })
        .collect();

    let mut y0 = x_start.to_vec();
    y0.extend_from_slice(p_start);
    y0.push(0.0);
    let mut stack = vec![Partial {
        k: nt,
        ys: vec![y0],
        us: Vec::new(),
        signature: Vec::new(),
        branch_times: Vec::new(),
        any_control: false,
        free_directions: Vec::new(),
        notes: Vec::new(),
    }];
    let mut done: Vec<Partial> = Vec::new();
    let mut exploded = false;

    while let Some(mut b) = stack.pop() {
        while b.k > 0 {
            let t = times[b.k];
            let h = times[b.k - 1] - t;
            let y = b.ys.last().unwrap().clone();
            let choice = stepper.choose(&y, t, h)?;
            if let Some(note) = choice.note {
                b.notes.push(note);
            }
            if choice.any_control {
                b.any_control = true;
            }
            if !choice.free_directions.is_empty() && b.free_directions.is_empty() {
                b.free_directions = choice.free_directions;
            }
            if choice.controls.len() > 1 {
                b.branch_times.push(t);
                let live = done.len() + stack.len() + 1;
                if live + choice.controls.len() - 1 > options.branch_cap {
                    exploded = true;
                } else {
                    for i in (1..choice.controls.len()).rev() {
                        let mut sib = b.clone();
                        sib.signature.push(i);
                        sib.advance(&stepper, &choice.controls[i], t, h)?;
                        stack.push(sib);
                    }
                }
                b.signature.push(0);
            }
            b.advance(&stepper, &choice.controls[0], t, h)?;
        }
        done.push(b);
    }

    let xi = x_start.to_vec();
    let mut branches = done
        .into_iter()
        .map(|b| b.finish(&stepper.maximizer, &times, &xi))
        .collect::<Result<Vec<_>>>()?;
    branches.sort_by(|a, b| a.signature.cmp(&b.signature));
    let any_control = branches.iter().any(|b| b.any_control);
    let mut notes: Vec<String> = branches.iter().flat_map(|b| b.notes.clone()).collect();
    notes.sort();
    notes.dedup();
    let flow = Flow {
        xi: xi.clone(),
        branches,
        any_control,
        exploded,
        notes,
    };
    if exploded {
        Err(Error::BranchExplosion {
            xi,
            cap: options.branch_cap,
            partial: Box::new(flow),
        })
    } else {
        Ok(flow)
    }
}

/// A branch under construction, integrated from the latest index `k` down.
#[derive(Clone)]
struct Partial {
    k: usize,
    /// `[x, p, cost-to-go]` from `t_start` backward.
    ys: Vec<Vec<f64>>,
    /// Control held on each step, in the same order.
    us: Vec<Vec<f64>>,
    signature: Vec<usize>,
    branch_times: Vec<f64>,
    any_control: bool,
    free_directions: Vec<Vec<f64>>,
    notes: Vec<String>,
}

impl Partial {
    fn advance(&mut self, stepper: &Stepper, u: &[f64], t: f64, h: f64) -> Result<()> {
        let y = stepper.step(self.ys.last().unwrap(), u, t, h);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: t + h,
                detail: "non-finite state or costate in the backward flow".into(),
            });
        }
        self.ys.push(y);
        self.us.push(u.to_vec());
        self.k -= 1;
        Ok(())
    }

    fn finish(self, maximizer: &Maximizer, times: &[f64], xi: &[f64]) -> Result<Extremal> {
        let n = maximizer.spec().state_dim();
        let mut states = Vec::with_capacity(self.ys.len());
        let mut costates = Vec::with_capacity(self.ys.len());
        let mut cost_to_go = Vec::with_capacity(self.ys.len());
        for y in self.ys.iter().rev() {
            states.push(y[..n].to_vec());
            costates.push(y[n..2 * n].to_vec());
            cost_to_go.push(y[2 * n]);
        }
        let mut us = self.us;
        us.reverse();
        let mut ext = assemble_extremal(
            maximizer,
            times.to_vec(),
            states,
            costates,
            us,
            cost_to_go,
            xi.to_vec(),
        )?;
        ext.signature = self.signature;
        ext.branch_times = self.branch_times;
        ext.any_control = self.any_control;
        ext.free_directions = self.free_directions;
        ext.notes.extend(self.notes);
        Ok(ext)
    }
}

/// The control (or controls, at a branch point) held over one backward step.
struct Choice {
    controls: Vec<Vec<f64>>,
    any_control: bool,
    free_directions: Vec<Vec<f64>>,
    note: Option<String>,
}

impl Choice {
    fn single(u: Vec<f64>) -> Self {
        Self {
            controls: vec![u],
            any_control: false,
            free_directions: Vec::new(),
            note: None,
        }
    }
}

pub(crate) struct Stepper<'a> {
    pub(crate) maximizer: Maximizer<'a>,
    flat_pool: Option<Vec<Vec<f64>>>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(spec: &'a ProblemSpec, control_mesh: Option<usize>) -> Result<Self> {
        let flat_pool = match spec.control_domain() {
            ControlDomain::EuclideanSpace { .. } => None,
            d => Some(ControlMesh::new(d, FLAT_MESH)?.points().to_vec()),
        };
        Ok(Self {
            maximizer: Maximizer::new(spec, control_mesh)?,
            flat_pool,
        })
    }

    fn spec(&self) -> &'a ProblemSpec {
        self.maximizer.spec()
    }

    /// One RK4 step of `[x, p, c]` under the held control `u`.
    pub(crate) fn step(&self, y: &[f64], u: &[f64], t: f64, h: f64) -> Vec<f64> {
        let spec = self.spec();
        let n = spec.state_dim();
        let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| {
            let (x, p) = (&y[..n], &y[n..2 * n]);
            spec.dynamics_into(x, u, t, &mut out[..n]);
            let jac = spec
                .dynamics_jac_x(x, u, t)
                .expect("jacobians checked before flowing");
            let grad = spec
                .cost_grad_x(x, u, t)
                .expect("jacobians checked before flowing");
            for j in 0..n {
                let jtp: f64 = (0..n).map(|i| jac[i * n + j] * p[i]).sum();
                out[n + j] = -jtp + grad[j];
            }
            out[2 * n] = -spec.running_cost(x, u, t);
        };
        rk4_step(&mut rhs, t, y, h)
    }

    fn ham(&self, y: &[f64], u: &[f64], t: f64) -> f64 {
        let n = self.spec().state_dim();
        control_hamiltonian_unchecked(self.spec(), &y[..n], &y[n..2 * n], u, t)
    }

    /// Picks the control(s) for the step from `t` to `t + h` (`h < 0`).
    ///
    /// Exact ties are resolved by a trial step: a tied control survives if it
    /// is still maximal among the tied pool after being held for one step.
    fn choose(&self, y: &[f64], t: f64, h: f64) -> Result<Choice> {
        let n = self.spec().state_dim();
        let (x, p) = (&y[..n], &y[n..2 * n]);
        let (_, arg) = self.maximizer.sup(x, p, t)?;
        if !arg.attained {
            return Err(Error::Domain(format!(
                "the Hamiltonian is unbounded in u at t = {t}, x = {x:?}, p = {p:?}"
            )));
        }
        if !arg.free_directions.is_empty() {
            return Ok(Choice {
                free_directions: arg.free_directions.clone(),
                ..Choice::single(arg.candidates[0].u.clone())
            });
        }
        let pool: Vec<Vec<f64>> = match (&self.flat_pool, arg.flat) {
            (Some(points), true) => points.clone(),
            _ => arg.clusters(CLUSTER_TOL),
        };
        let ties = exact_ties(&pool, |u| self.ham(y, u, t));
        if ties.len() == 1 {
            return Ok(Choice::single(ties[0].clone()));
        }

        let mut defects = Vec::with_capacity(ties.len());
        for u in &ties {
            let y1 = self.step(y, u, t, h);
            let own = self.ham(&y1, u, t + h);
            let best = pool
                .iter()
                .map(|v| self.ham(&y1, v, t + h))
                .fold(f64::NEG_INFINITY, f64::max);
            defects.push((best - own, best));
        }
        let consistent: Vec<Vec<f64>> = ties
            .iter()
            .zip(&defects)
            .filter(|(_, (d, best))| *d <= TIE_REL * (1.0 + best.abs()))
            .map(|(u, _)| u.clone())
            .collect();

        if consistent.is_empty() {
            let i = (0..ties.len())
                .min_by(|&a, &b| defects[a].0.total_cmp(&defects[b].0))
                .unwrap();
            return Ok(Choice {
                note: Some(
                    "no tied control stayed maximal over a trial step; kept the least defective"
                        .into(),
                ),
                ..Choice::single(ties[i].clone())
            });
        }
        if arg.flat && consistent.len() == pool.len() {
            return Ok(Choice {
                any_control: true,
                ..Choice::single(canonical(&consistent))
            });
        }
        Ok(Choice {
            controls: consistent,
            any_control: false,
            free_directions: Vec::new(),
            note: None,
        })
    }
}

/// Pool members within [`TIE_REL`] of the best value, in pool order.
fn exact_ties(pool: &[Vec<f64>], mut value: impl FnMut(&[f64]) -> f64) -> Vec<Vec<f64>> {
    let values: Vec<f64> = pool.iter().map(|u| value(u)).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_REL * (1.0 + best.abs());
    pool.iter()
        .zip(&values)
        .filter(|(_, v)| **v >= best - tol)
        .map(|(u, _)| u.clone())
        .collect()
}

/// The point closest to the centroid of `points` (first on ties).
fn canonical(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points[0].len();
    let center: Vec<f64> = (0..m)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / points.len() as f64)
        .collect();
    points
        .iter()
        .min_by(|a, b| dist(a, &center).total_cmp(&dist(b, &center)))
        .unwrap()
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::hamiltonian;
    use crate::problems::registry::problem;

    #[test]
    fn ex31_costate_vanishes_and_any_control_is_marked() {
        let spec = problem("ex31").unwrap();
        let flow = flow_backward(&spec, &[0.7], 100).unwrap();
        assert_eq!(flow.branches.len(), 1);
        assert!(flow.any_control);
        let b = &flow.branches[0];
        assert!(b.costates.iter().all(|p| p[0] == 0.0));
        // canonical control is the midpoint of U
        assert!(b.control.values().iter().all(|u| u[0] == 0.0));
        assert!((b.cost_to_go[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ex22_positive_terminal_state_gives_one_branch_with_u_zero() {
        let spec = problem("ex22").unwrap();
        let flow = flow_backward(&spec, &[2.0], 400).unwrap();
        assert_eq!(flow.branches.len(), 1);
        let b = &flow.branches[0];
        assert!(b.control.values().iter().all(|u| u[0] == 0.0));
        assert!((b.states[0][0] - 2.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert!(b.costates.last().unwrap()[0].abs() < 1e-12);
        assert!(b.max_violation <= 1e-6);
        // forward check against the closed-form control at the initial point
        let reference = spec.reference_control(&b.states[0], 0.0).unwrap().unwrap();
        match reference {
            crate::ReferenceControl::Unique { control } => {
                assert!(control.values().iter().all(|u| u[0] == 0.0))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ex22_negative_terminal_state_pushes_up() {
        let spec = problem("ex22").unwrap();
        let flow = flow_backward(&spec, &[-0.5], 200).unwrap();
        assert_eq!(flow.branches.len(), 1);
        assert!(flow.branches[0]
            .control
            .values()
            .iter()
            .all(|u| u[0] == 1.0));
    }

    #[test]
    fn ex23_branches_immediately_at_the_kink() {
        let spec = problem("ex23").unwrap();
        let flow = flow_backward(&spec, &[0.0], 200).unwrap();
        assert_eq!(flow.branches.len(), 2);
        assert_eq!(flow.branch_times(), vec![1.0]);
        let starts: Vec<f64> = flow.branches.iter().map(|b| b.states[0][0]).collect();
        assert!((starts[0] - 1.0).abs() < 1e-9 && (starts[1] + 1.0).abs() < 1e-9);
        // p = -(1 - t)^2 on the first branch
        assert!((flow.branches[0].costates[0][0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn ex23_fine_steps_do_not_rebranch() {
        let spec = problem("ex23").unwrap();
        let flow = flow_backward(&spec, &[0.0], 2000).unwrap();
        assert_eq!(flow.branches.len(), 2);
        let single = flow_backward(&spec, &[0.3], 2000).unwrap();
        assert_eq!(single.branches.len(), 1);
    }

    #[test]
    fn ex22_dwell_at_the_origin_explodes_with_partial_branches() {
        let spec = problem("ex22").unwrap();
        match flow_backward(&spec, &[0.0], 200) {
            Err(Error::BranchExplosion { cap, partial, .. }) => {
                assert_eq!(cap, BRANCH_CAP);
                assert!(partial.exploded);
                assert!(partial.branches.len() <= BRANCH_CAP);
                let dwell = &partial.branches[0];
                assert!(dwell.states.iter().all(|x| x[0] == 0.0));
                assert_eq!(dwell.cost_to_go[0], 0.0);
            }
            other => panic!("expected explosion, got {other:?}"),
        }
    }

    #[test]
    fn hamiltonian_is_a_first_integral_on_smooth_branches() {
        for (id, xi) in [("ex22", 1.3), ("ex22", -0.4), ("ex23", 0.6), ("ex31", -1.0)] {
            let spec = problem(id).unwrap();
            let flow = flow_backward(&spec, &[xi], 400).unwrap();
            for b in &flow.branches {
                let hs: Vec<f64> = b
                    .times
                    .iter()
                    .zip(&b.states)
                    .zip(&b.costates)
                    .map(|((t, x), p)| hamiltonian(&spec, x, p, *t, 201).unwrap().0)
                    .collect();
                let spread = hs.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v))
                    - hs.iter().fold(f64::INFINITY, |a, v| a.min(*v));
                assert!(spread < 1e-6, "{id} xi={xi}: spread {spread}");
            }
        }
    }

    #[test]
    fn ex32_uses_the_analytic_maximizer_with_a_free_direction() {
        let spec = problem("ex32").unwrap();
        let flow = flow_backward(&spec, &[0.5], 50).unwrap();
        assert_eq!(flow.branches.len(), 1);
        assert_eq!(flow.branches[0].free_directions, vec![vec![0.0, 1.0]]);
        assert!(flow.branches[0].costates.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn bad_intervals_are_rejected() {
        let spec = problem("ex22").unwrap();
        let opts = FlowOptions::default();
        assert!(matches!(
            flow_from(&spec, &[0.0], &[0.0], 1.0, 1.0, 10, &opts),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            flow_backward(&spec, &[0.0], 0),
            Err(Error::Usage(_))
        ));
    }
}
