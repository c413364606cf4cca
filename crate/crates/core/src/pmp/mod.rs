//! Maximum-principle machinery: extremals of the control Hamiltonian system,
//! the maximum condition, backward characteristic flows, shooting, shocks,
//! value reconstruction and a completeness probe.
//!
//! The costate equation is integrated in the explicit form
//! `p' = -f_x^T p + F_x` with `u` supplied pointwise by the maximizer. Where
//! `F` has a kink (ex22's `|x|` at 0) the problem's own convention for `F_x`
//! is used, and extremals resting on the kink carry a note.

mod flow;
mod probe;
mod shock;
mod shoot;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{control_hamiltonian_unchecked, Maximizer};
use crate::problems::{simulate, ControlSignal, ProblemSpec};

pub use flow::{flow_backward, flow_backward_with, flow_from, Flow, FlowOptions, BRANCH_CAP, TIE_REL};
pub use probe::{probe_completeness, CompletenessProbe, ProbeEntry, PROBE_LABEL};
pub use shock::{
    detect_shock, detect_shock_with, reconstruct_value, ReconstructedValues, ShockOptions,
    ShockWitness, ValueSample, SEPARATION_TOL,
};
pub use shoot::{shoot_pmp, shoot_pmp_with, NearestMiss, ShootOptions, ShootResult, MATCH_TOL};

/// Relative tolerance of the maximum condition.
pub const MAX_CONDITION_REL: f64 = 1e-6;

/// State, costate and control sampled on `[tau, T]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Extremal {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub control: ControlSignal,
    /// `x(T)`.
    pub terminal_state: Vec<f64>,
    /// Largest shortfall of `H(x, p, u(t), t)` below `sup_u H` over the samples.
    pub max_violation: f64,
    /// `int_t^T F` at every sample.
    pub cost_to_go: Vec<f64>,
    /// Choice index taken at each branch point, in backward order.
    pub signature: Vec<usize>,
    pub branch_times: Vec<f64>,
    /// Every control was maximal somewhere along the way; `control` is one
    /// canonical pick.
    pub any_control: bool,
    /// Directions in `U` that leave the Hamiltonian unchanged.
    pub free_directions: Vec<Vec<f64>>,
    /// Samples sitting on a kink of the running cost in `x`.
    pub kink_samples: usize,
    pub notes: Vec<String>,
}

impl Extremal {
    /// Cost of the extremal from its first sample time.
    pub fn cost(&self) -> f64 {
        self.cost_to_go[0]
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn initial_costate(&self) -> &[f64] {
        &self.costates[0]
    }

    /// Control attributed to sample `i`: the one held on the interval ending
    /// there, or the first interval at the initial time.
    pub fn control_at_sample(&self, i: usize) -> &[f64] {
        control_at(&self.control, self.times[i], i == 0)
    }

    /// Linear interpolation of `(x, p)` at `t`, clamped to the samples.
    pub fn state_costate_at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let ts = &self.times;
        let j = ts.partition_point(|&s| s < t).clamp(1, ts.len() - 1);
        let w = ((t - ts[j - 1]) / (ts[j] - ts[j - 1])).clamp(0.0, 1.0);
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(u, v)| u + w * (v - u)).collect()
        };
        (
            lerp(&self.states[j - 1], &self.states[j]),
            lerp(&self.costates[j - 1], &self.costates[j]),
        )
    }

    /// CSV with one row per sample: time, states, costates, controls, running
    /// cost and cost-to-go.
    pub fn write_csv(&self, spec: &ProblemSpec, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.states[0].len();
        let m = self.control.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("running_cost".into());
        header.push("cost_to_go".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.times.len() {
            let u = self.control_at_sample(i);
            let t = self.times[i];
            let mut row = vec![t];
            row.extend_from_slice(&self.states[i]);
            row.extend_from_slice(&self.costates[i]);
            row.extend_from_slice(u);
            row.push(spec.running_cost(&self.states[i], u, t));
            row.push(self.cost_to_go[i]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn control_at(control: &ControlSignal, t: f64, first: bool) -> &[f64] {
    if first {
        return control.value_at(t);
    }
    let idx = control.breakpoints()[1..].partition_point(|&b| b < t);
    &control.values()[idx.min(control.values().len() - 1)]
}

/// Builds an extremal from samples; `us[i]` is held on `[times[i], times[i + 1])`.
fn assemble_extremal(
    maximizer: &Maximizer,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    costates: Vec<Vec<f64>>,
    us: Vec<Vec<f64>>,
    cost_to_go: Vec<f64>,
    terminal_state: Vec<f64>,
) -> Result<Extremal> {
    let control = ControlSignal::new(times.clone(), us)?;
    let spec = maximizer.spec();
    let kink_samples = states
        .iter()
        .enumerate()
        .filter(|(i, x)| on_cost_kink(spec, x, control_at(&control, times[*i], *i == 0), times[*i]))
        .count();
    let mut ext = Extremal {
        times,
        states,
        costates,
        control,
        terminal_state,
        max_violation: 0.0,
        cost_to_go,
        signature: Vec::new(),
        branch_times: Vec::new(),
        any_control: false,
        free_directions: Vec::new(),
        kink_samples,
        notes: Vec::new(),
    };
    if kink_samples > 1 {
        ext.notes.push(format!(
            "rests on a kink of the running cost at {kink_samples} samples; the costate there uses the problem's one-sided convention (measurable-selection caveat)"
        ));
    }
    ext.max_violation = violation_profile(maximizer, &ext)?.0;
    Ok(ext)
}

/// One-sided difference quotients of `F` in some `x_j` disagree.
fn on_cost_kink(spec: &ProblemSpec, x: &[f64], u: &[f64], t: f64) -> bool {
    const H: f64 = 1e-7;
    let f0 = spec.running_cost(x, u, t);
    (0..x.len()).any(|j| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += H;
        xm[j] -= H;
        let right = (spec.running_cost(&xp, u, t) - f0) / H;
        let left = (f0 - spec.running_cost(&xm, u, t)) / H;
        (right - left).abs() > 0.5
    })
}

/// `(max violation, worst time, largest |H|)` over the samples.
fn violation_profile(maximizer: &Maximizer, ext: &Extremal) -> Result<(f64, f64, f64)> {
    let spec = maximizer.spec();
    let mut worst = (0.0_f64, ext.times[0], 0.0_f64);
    for i in 0..ext.times.len() {
        let (x, p, t) = (&ext.states[i], &ext.costates[i], ext.times[i]);
        let u = ext.control_at_sample(i);
        let sup = maximizer.value(x, p, t)?;
        let here = control_hamiltonian_unchecked(spec, x, p, u, t);
        let v = (sup - here).max(0.0);
        worst.2 = worst.2.max(sup.abs());
        if v > worst.0 {
            worst.0 = v;
            worst.1 = t;
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximumConditionCheck {
    pub passes: bool,
    pub max_violation: f64,
    pub worst_time: f64,
    pub tolerance: f64,
}

/// Re-maximizes the Hamiltonian at every sample of `extremal` and compares
/// with the value at the extremal's own control.
pub fn check_maximum_condition(
    spec: &ProblemSpec,
    extremal: &Extremal,
) -> Result<MaximumConditionCheck> {
    let maximizer = Maximizer::new(spec, None)?;
    let (max_violation, worst_time, h_scale) = violation_profile(&maximizer, extremal)?;
    let tolerance = MAX_CONDITION_REL * (1.0 + h_scale);
    Ok(MaximumConditionCheck {
        passes: max_violation <= tolerance,
        max_violation,
        worst_time,
        tolerance,
    })
}

/// The extremal generated by a given control: the state forward from
/// `x(tau) = x0`, then the costate backward from `p(T) = 0`.
pub fn extremal_for_control(
    spec: &ProblemSpec,
    x0: &[f64],
    tau: f64,
    control: &ControlSignal,
    nt: usize,
) -> Result<Extremal> {
    if !spec.has_jacobians() {
        return Err(Error::Usage(format!(
            "problem `{}` carries no state derivatives",
            spec.name()
        )));
    }
    let traj = simulate(spec, x0, tau, control, nt)?;
    let stepper = flow::Stepper::new(spec, None)?;
    let n = spec.state_dim();
    let last = traj.times.len() - 1;
    let mut y = traj.states[last].clone();
    y.extend(std::iter::repeat_n(0.0, n));
    y.push(0.0);
    let mut costates = vec![Vec::new(); last + 1];
    let mut cost_to_go = vec![0.0; last + 1];
    costates[last] = vec![0.0; n];
    let mut us = vec![Vec::new(); last];
    for i in (0..last).rev() {
        let u = control.value_at(traj.times[i]).to_vec();
        y = stepper.step(&y, &u, traj.times[i + 1], traj.times[i] - traj.times[i + 1]);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: traj.times[i],
                detail: "non-finite costate".into(),
            });
        }
        costates[i] = y[n..2 * n].to_vec();
        cost_to_go[i] = y[2 * n];
        us[i] = u;
    }
    let terminal = traj.states[last].clone();
    assemble_extremal(
        &stepper.maximizer,
        traj.times,
        traj.states,
        costates,
        us,
        cost_to_go,
        terminal,
    )
}

/// Controls within `tol` of each other in `L1` (sup norm in `u`, integrated
/// over the common interval). A switch misplaced by one integration step
/// costs about one step, a wrong control level costs its full duration.
pub fn controls_match(a: &ControlSignal, b: &ControlSignal, tol: f64) -> bool {
    let end = a.end().min(b.end());
    let start = a.start().max(b.start());
    let mut ts: Vec<f64> = a
        .breakpoints()
        .iter()
        .chain(b.breakpoints())
        .copied()
        .filter(|&t| t > start && t < end)
        .chain([start, end])
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let distance: f64 = ts
        .windows(2)
        .map(|w| {
            let gap = a
                .value_at(w[0])
                .iter()
                .zip(b.value_at(w[0]))
                .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
            gap * (w[1] - w[0])
        })
        .sum();
    distance <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry::{problem, reference_optimal_control};
    use crate::problems::{random_control, ReferenceControl};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unique(id: &str, x0: f64, tau: f64) -> ControlSignal {
        match reference_optimal_control(id, &[x0], tau).unwrap() {
            ReferenceControl::Unique { control } => control,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ex22_reference_controls_satisfy_the_maximum_condition() {
        let spec = problem("ex22").unwrap();
        for (x0, tau) in [(1.0, 0.0), (-0.8, 0.0), (-0.3, 0.2), (0.0, 0.5)] {
            let control = unique("ex22", x0, tau);
            let ext = extremal_for_control(&spec, &[x0], tau, &control, 2000).unwrap();
            let check = check_maximum_condition(&spec, &ext).unwrap();
            assert!(check.passes, "x0={x0} tau={tau}: {check:?}");
            assert!(check.max_violation <= 1e-6);
            assert!(ext.costates.last().unwrap()[0].abs() < 1e-9);
            let v = spec.reference_value(&[x0], tau).unwrap();
            assert!((ext.cost() - v).abs() < 1e-6, "cost {} vs {v}", ext.cost());
        }
    }

    #[test]
    fn ex31_random_controls_pass_exactly() {
        let spec = problem("ex31").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let control = random_control(&spec, 0.0, 7, &mut rng).unwrap();
            let ext = extremal_for_control(&spec, &[0.4], 0.0, &control, 300).unwrap();
            let check = check_maximum_condition(&spec, &ext).unwrap();
            assert!(check.passes && check.max_violation <= 1e-12);
        }
    }

    #[test]
    fn ex23_zero_control_violates_by_at_least_one() {
        let spec = problem("ex23").unwrap();
        let control = ControlSignal::constant(0.0, 1.0, vec![0.0]).unwrap();
        let ext = extremal_for_control(&spec, &[0.0], 0.0, &control, 100).unwrap();
        let check = check_maximum_condition(&spec, &ext).unwrap();
        assert!(!check.passes);
        let p_max = ext.costates.iter().fold(0.0_f64, |a, p| a.max(p[0].abs()));
        assert!(check.max_violation >= 1.0 - p_max - 1e-12);
    }

    #[test]
    fn dwell_on_the_kink_is_noted() {
        let spec = problem("ex22").unwrap();
        let control = unique("ex22", -0.3, 0.2);
        let ext = extremal_for_control(&spec, &[-0.3], 0.2, &control, 400).unwrap();
        assert!(ext.kink_samples > 1);
        assert!(ext.notes.iter().any(|n| n.contains("kink")));
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let spec = problem("ex22").unwrap();
        let ext = flow_backward(&spec, &[1.0], 20).unwrap().branches.remove(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        ext.write_csv(&spec, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,p1,u1,running_cost,cost_to_go");
        assert_eq!(lines.count(), 21);
    }

    #[test]
    fn interpolation_hits_samples() {
        let spec = problem("ex23").unwrap();
        let ext = flow_backward(&spec, &[0.5], 10).unwrap().branches.remove(0);
        let (x, p) = ext.state_costate_at(ext.times[4]);
        assert_eq!(x, ext.states[4]);
        assert_eq!(p, ext.costates[4]);
    }

    #[test]
    fn control_matching_is_integrated() {
        let a = ControlSignal::new(vec![0.0, 0.5, 1.0], vec![vec![1.0], vec![0.0]]).unwrap();
        let late = ControlSignal::new(vec![0.0, 0.5004, 1.0], vec![vec![1.0], vec![0.0]]).unwrap();
        let wrong = ControlSignal::new(vec![0.0, 0.6, 1.0], vec![vec![1.0], vec![0.0]]).unwrap();
        assert!(controls_match(&a, &late, 1e-3));
        assert!(!controls_match(&a, &wrong, 1e-3));
        assert!(controls_match(&a, &a, 0.0));
    }
}
