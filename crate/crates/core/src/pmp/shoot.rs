//! Shooting over terminal states to hit prescribed initial data.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use super::flow::{flow_backward_with, Flow, FlowOptions};
use super::{check_maximum_condition, Extremal};
use crate::error::{Error, Result};
use crate::ode::{dist, linspace, max_abs_diff, solve_dense};
use crate::problems::{Bounds, ProblemSpec};

/// Largest state mismatch at `tau` accepted as a hit.
pub const MATCH_TOL: f64 = 1e-3;
/// Newton starts kept per shooting run, best first.
const MAX_STARTS: usize = 256;
const NEWTON_ITERS: usize = 30;

#[derive(Clone, Debug)]
pub struct ShootOptions {
    pub flow: FlowOptions,
    pub match_tol: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            flow: FlowOptions::default(),
            match_tol: MATCH_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearestMiss {
    pub xi: Vec<f64>,
    pub signature: Vec<usize>,
    pub state_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShootResult {
    /// Distinct extremals through the initial data, sorted by terminal state
    /// then signature.
    pub extremals: Vec<Extremal>,
    /// Some matching flow found every control admissible.
    pub any_control: bool,
    /// Free control directions met by some matching flow.
    pub free_directions: Vec<Vec<f64>>,
    /// Closest approach over everything flowed, hits included.
    pub nearest_miss: Option<NearestMiss>,
    pub flows: usize,
    pub exploded_flows: usize,
    pub notes: Vec<String>,
}

/// Shoots from an `n_shoot`-per-dimension mesh of terminal states in
/// `xi_box`, refines promising branches by Newton's method and keeps those
/// reaching `x0` at `tau`. Hits whose initial costates agree within the
/// match tolerance are one extremal.
pub fn shoot_pmp(
    spec: &ProblemSpec,
    x0: &[f64],
    tau: f64,
    xi_box: &Bounds,
    n_shoot: usize,
    nt: usize,
) -> Result<ShootResult> {
    shoot_pmp_with(spec, x0, tau, xi_box, n_shoot, nt, &ShootOptions::default())
}

pub fn shoot_pmp_with(
    spec: &ProblemSpec,
    x0: &[f64],
    tau: f64,
    xi_box: &Bounds,
    n_shoot: usize,
    nt: usize,
    options: &ShootOptions,
) -> Result<ShootResult> {
    spec.check_state(x0)?;
    let n = spec.state_dim();
    if xi_box.lower.len() != n || xi_box.upper.len() != n {
        return Err(Error::Usage(format!(
            "terminal-state box has dimension {}, the state has {n}",
            xi_box.lower.len()
        )));
    }
    if n_shoot == 0 {
        return Err(Error::Usage("shooting needs at least one terminal state".into()));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if n_shoot == 1 {
                vec![0.5 * (xi_box.lower[i] + xi_box.upper[i])]
            } else {
                linspace(xi_box.lower[i], xi_box.upper[i], n_shoot)
            }
        })
        .collect();
    let mesh = cartesian(&axes);
    let flows: Vec<Flow> = mesh
        .par_iter()
        .map(|xi| lenient_flow(spec, xi, tau, nt, &options.flow))
        .collect::<Result<_>>()?;
    let ctx = Shooter {
        spec,
        x0,
        tau,
        nt,
        xi_box,
        options,
        cache: Mutex::new(HashMap::new()),
    };

    let mut notes = Vec::new();
    let exploded_flows = flows.iter().filter(|f| f.exploded).count();
    if exploded_flows > 0 {
        notes.push(format!(
            "{exploded_flows} terminal state(s) exceeded the branch cap; their partial branches were used"
        ));
    }

    // (mesh index, branch index, gap)
    let mut scored: Vec<(usize, usize, f64)> = Vec::new();
    for (i, f) in flows.iter().enumerate() {
        for (j, b) in f.branches.iter().enumerate() {
            scored.push((i, j, dist(&b.states[0], x0)));
        }
    }
    let starts = pick_starts(&flows, &scored, &axes, x0, options.match_tol);

    let refined: Vec<(Extremal, f64)> = starts
        .par_iter()
        .map(|&(i, j)| ctx.refine(&mesh[i], &flows[i].branches[j]))
        .collect::<Result<_>>()?;

    let mut nearest: Option<NearestMiss> = None;
    let mut consider = |xi: &[f64], sig: &[usize], gap: f64| {
        if nearest.as_ref().is_none_or(|m| gap < m.state_gap) {
            nearest = Some(NearestMiss {
                xi: xi.to_vec(),
                signature: sig.to_vec(),
                state_gap: gap,
            });
        }
    };
    for &(i, j, gap) in &scored {
        consider(&mesh[i], &flows[i].branches[j].signature, gap);
    }
    for (e, gap) in &refined {
        consider(&e.terminal_state, &e.signature, *gap);
    }

    // best residual first, so an unconverged near-copy of an exact hit is the
    // one discarded as a duplicate
    let mut refined: Vec<(Extremal, f64)> = refined
        .into_iter()
        .filter(|(_, gap)| *gap <= options.match_tol)
        .collect();
    refined.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut hits: Vec<Extremal> = Vec::new();
    let mut rejected = 0;
    for (e, _) in refined {
        if !check_maximum_condition(spec, &e)?.passes {
            rejected += 1;
            continue;
        }
        let duplicate = hits.iter().any(|h| {
            max_abs_diff(&h.costates[0], &e.costates[0])
                <= options.match_tol
                    * (1.0 + e.costates[0].iter().fold(0.0_f64, |a, v| a.max(v.abs())))
        });
        if !duplicate {
            hits.push(e);
        }
    }
    if rejected > 0 {
        notes.push(format!(
            "{rejected} matching branch(es) violated the maximum condition and were dropped"
        ));
    }
    hits.sort_by(|a, b| {
        lex(&a.terminal_state, &b.terminal_state).then_with(|| a.signature.cmp(&b.signature))
    });
    let any_control = hits.iter().any(|e| e.any_control);
    let mut free_directions: Vec<Vec<f64>> = Vec::new();
    for e in &hits {
        for d in &e.free_directions {
            if !free_directions.contains(d) {
                free_directions.push(d.clone());
            }
        }
    }
    Ok(ShootResult {
        extremals: hits,
        any_control,
        free_directions,
        nearest_miss: nearest,
        flows: flows.len(),
        exploded_flows,
        notes,
    })
}

/// A flow to `tau`, keeping partial results of over-cap flows.
pub(crate) fn lenient_flow(
    spec: &ProblemSpec,
    xi: &[f64],
    tau: f64,
    nt: usize,
    options: &FlowOptions,
) -> Result<Flow> {
    match flow_backward_with(spec, xi, tau, nt, options) {
        Err(Error::BranchExplosion { partial, .. }) => Ok(*partial),
        other => other,
    }
}

/// Newton starts: mesh hits, plus branches whose gap is a local minimum
/// among mesh neighbours with the same signature.
fn pick_starts(
    flows: &[Flow],
    scored: &[(usize, usize, f64)],
    axes: &[Vec<f64>],
    x0: &[f64],
    match_tol: f64,
) -> Vec<(usize, usize)> {
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let gap_of = |i: usize, sig: &[usize]| -> f64 {
        flows[i]
            .branches
            .iter()
            .find(|b| b.signature == sig)
            .map_or(f64::INFINITY, |b| dist(&b.states[0], x0))
    };
    let mut picked: Vec<(usize, usize, f64)> = scored
        .iter()
        .filter(|&&(i, j, gap)| {
            if gap <= match_tol {
                return true;
            }
            let sig = &flows[i].branches[j].signature;
            neighbours(i, &dims).all(|k| gap_of(k, sig) >= gap)
        })
        .copied()
        .collect();
    picked.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    picked.truncate(MAX_STARTS);
    picked.into_iter().map(|(i, j, _)| (i, j)).collect()
}

/// Flat indices of the mesh points one step away along each axis.
fn neighbours(i: usize, dims: &[usize]) -> impl Iterator<Item = usize> + '_ {
    let mut stride = 1;
    let mut out = Vec::new();
    for &d in dims {
        let c = (i / stride) % d;
        if c > 0 {
            out.push(i - stride);
        }
        if c + 1 < d {
            out.push(i + stride);
        }
        stride *= d;
    }
    out.into_iter()
}

struct Shooter<'a> {
    spec: &'a ProblemSpec,
    x0: &'a [f64],
    tau: f64,
    nt: usize,
    xi_box: &'a Bounds,
    options: &'a ShootOptions,
    /// Flows keyed by the bits of their terminal state; Newton starts from
    /// one branched flow all perturb the same point.
    cache: Mutex<HashMap<Vec<u64>, Arc<Flow>>>,
}

impl Shooter<'_> {
    /// The branch with `signature` flowed from `xi`, if it exists.
    fn branch(&self, xi: &[f64], signature: &[usize]) -> Result<Option<Extremal>> {
        let key: Vec<u64> = xi.iter().map(|v| v.to_bits()).collect();
        let cached = self.cache.lock().unwrap().get(&key).cloned();
        let flow = match cached {
            Some(f) => f,
            None => {
                let f = Arc::new(lenient_flow(
                    self.spec,
                    xi,
                    self.tau,
                    self.nt,
                    &self.options.flow,
                )?);
                self.cache.lock().unwrap().insert(key, f.clone());
                f
            }
        };
        Ok(flow.branches.iter().find(|b| b.signature == signature).cloned())
    }

    fn residual(&self, e: &Extremal) -> Vec<f64> {
        e.states[0].iter().zip(self.x0).map(|(a, b)| a - b).collect()
    }

    /// Damped Newton on `xi -> x(tau) - x0` along one branch signature.
    fn refine(&self, xi: &[f64], start: &Extremal) -> Result<(Extremal, f64)> {
        let n = xi.len();
        let sig = start.signature.clone();
        let mut xi = xi.to_vec();
        let mut best = start.clone();
        let mut gap = dist(&best.states[0], self.x0);
        let done = 1e-11 * (1.0 + self.x0.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        for _ in 0..NEWTON_ITERS {
            if gap <= done {
                break;
            }
            let r = self.residual(&best);
            let mut jac = vec![0.0; n * n];
            let mut ok = true;
            for j in 0..n {
                let eta = 1e-6 * (1.0 + xi[j].abs());
                let mut xj = xi.clone();
                xj[j] += eta;
                match self.branch(&xj, &sig)? {
                    Some(e) => {
                        let rj = self.residual(&e);
                        for i in 0..n {
                            jac[i * n + j] = (rj[i] - r[i]) / eta;
                        }
                    }
                    None => ok = false,
                }
            }
            if !ok {
                break;
            }
            let Some(step) = solve_dense(&jac, &r.iter().map(|v| -v).collect::<Vec<_>>(), 1e-14)
            else {
                break;
            };
            let mut improved = false;
            let mut scale = 1.0;
            for _ in 0..8 {
                let trial: Vec<f64> = (0..n)
                    .map(|i| {
                        (xi[i] + scale * step[i]).clamp(self.xi_box.lower[i], self.xi_box.upper[i])
                    })
                    .collect();
                if let Some(e) = self.branch(&trial, &sig)? {
                    let g = dist(&e.states[0], self.x0);
                    if g < gap {
                        xi = trial;
                        best = e;
                        gap = g;
                        improved = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((best, gap))
    }
}

/// Mesh points with dimension 0 varying fastest.
fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    (0..total)
        .map(|flat| {
            let mut rest = flat;
            dims.iter()
                .zip(axes)
                .map(|(&d, a)| {
                    let c = rest % d;
                    rest /= d;
                    a[c]
                })
                .collect()
        })
        .collect()
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmp::controls_match;
    use crate::problems::registry::{problem, reference_optimal_control, registered};
    use crate::problems::ReferenceControl;

    fn xi_box(id: &str) -> Bounds {
        registered(id).unwrap().xi_box
    }

    #[test]
    fn ex22_from_one_has_a_single_zero_control_extremal() {
        let spec = problem("ex22").unwrap();
        let r = shoot_pmp(&spec, &[1.0], 0.0, &xi_box("ex22"), 41, 400).unwrap();
        assert_eq!(r.extremals.len(), 1);
        let e = &r.extremals[0];
        assert!(e.control.values().iter().all(|u| u[0].abs() <= 1e-3));
        assert!((e.terminal_state[0] - std::f64::consts::E).abs() < 1e-6);
        assert!((e.cost() - (std::f64::consts::E - 1.0)).abs() < 1e-9);
        match reference_optimal_control("ex22", &[1.0], 0.0).unwrap() {
            ReferenceControl::Unique { control } => {
                assert!(controls_match(&e.control, &control, 1e-3))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ex31_shooting_carries_the_any_control_marker() {
        let spec = problem("ex31").unwrap();
        let r = shoot_pmp(&spec, &[0.3], 0.2, &xi_box("ex31"), 21, 200).unwrap();
        assert!(r.any_control);
        assert!(!r.extremals.is_empty());
        assert!((r.extremals[0].cost() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ex32_reports_the_kernel_direction() {
        let spec = problem("ex32").unwrap();
        let r = shoot_pmp(&spec, &[0.5], 0.0, &xi_box("ex32"), 21, 100).unwrap();
        assert_eq!(r.extremals.len(), 1);
        assert_eq!(r.free_directions, vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn ex23_from_the_origin_finds_no_extremal_and_reports_the_miss() {
        let spec = problem("ex23").unwrap();
        let r = shoot_pmp(&spec, &[0.0], 0.0, &xi_box("ex23"), 41, 200).unwrap();
        assert!(r.extremals.is_empty());
        let miss = r.nearest_miss.unwrap();
        assert!((miss.state_gap - 1.0).abs() < 1e-6, "{miss:?}");
    }

    #[test]
    fn ex23_outside_the_cone_has_one_extremal() {
        let spec = problem("ex23").unwrap();
        let r = shoot_pmp(&spec, &[1.5], 0.0, &xi_box("ex23"), 41, 200).unwrap();
        assert_eq!(r.extremals.len(), 1);
        assert!((r.extremals[0].terminal_state[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn neighbours_follow_the_mesh_layout() {
        let mut got: Vec<usize> = neighbours(4, &[3, 3]).collect();
        got.sort();
        assert_eq!(got, vec![1, 3, 5, 7]);
        let mesh = cartesian(&[vec![0.0, 1.0], vec![5.0, 6.0, 7.0]]);
        assert_eq!(mesh[1], vec![1.0, 5.0]);
        assert_eq!(mesh[2], vec![0.0, 6.0]);
    }
}
