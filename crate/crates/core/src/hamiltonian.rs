//! The control Hamiltonian `H(x, p, u, t) = <p, f> - F`, its supremum over the
//! control domain, maximizer sets, and differentiability of the maximized
//! Hamiltonian.
//!
//! Bounded domains are maximized on a mesh with one local refinement pass.
//! `R^m` is only handled for control-affine dynamics with a diagonal quadratic
//! penalty, where the maximizer is written down directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{dist, dot, linspace};
use crate::problems::{Bounds, ControlDomain, ProblemSpec, QuadraticControlStructure};

/// Distinct maximizers closer than this are the same control.
pub const CLUSTER_TOL: f64 = 1e-3;
/// Relative gap under which a mesh value counts as maximal.
pub const GAP_REL: f64 = 1e-6;
/// Coarse maximizers that get a refinement patch.
const MAX_REFINED: usize = 8;
const REFINE_POINTS: usize = 21;

/// Default mesh points per control dimension.
pub fn default_control_mesh(m: usize) -> usize {
    match m {
        1 => 201,
        2 => 41,
        _ => 15,
    }
}

pub fn gap_tolerance(value: f64) -> f64 {
    GAP_REL * (1.0 + value.abs())
}

/// `<p, f(x, u, t)> - F(x, u, t)`, rejecting controls outside `U`.
pub fn control_hamiltonian(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    u: &[f64],
    t: f64,
) -> Result<f64> {
    spec.check_control(u)?;
    Ok(control_hamiltonian_unchecked(spec, x, p, u, t))
}

pub(crate) fn control_hamiltonian_unchecked(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    u: &[f64],
    t: f64,
) -> f64 {
    dot(p, &spec.dynamics(x, u, t)) - spec.running_cost(x, u, t)
}

/// Discretization of a bounded control domain.
#[derive(Clone, Debug)]
pub struct ControlMesh {
    points: Vec<Vec<f64>>,
    /// Box bounds and spacing, when the domain is a box.
    grid: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl ControlMesh {
    pub fn new(domain: &ControlDomain, per_dim: usize) -> Result<Self> {
        match domain {
            ControlDomain::Box { lower, upper } => {
                if per_dim < 2 {
                    return Err(Error::Usage(
                        "control mesh needs at least 2 points per dimension".into(),
                    ));
                }
                let axes: Vec<Vec<f64>> = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| {
                        if l == u {
                            vec![*l]
                        } else {
                            linspace(*l, *u, per_dim)
                        }
                    })
                    .collect();
                let spacing = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| (u - l) / (per_dim - 1) as f64)
                    .collect();
                Ok(Self {
                    points: cartesian(&axes),
                    grid: Some((lower.clone(), upper.clone(), spacing)),
                })
            }
            ControlDomain::FiniteSet { points } => Ok(Self {
                points: points.clone(),
                grid: None,
            }),
            ControlDomain::EuclideanSpace { .. } => Err(Error::Unsupported(
                "mesh maximization over an unbounded control domain".into(),
            )),
        }
    }

    pub fn for_spec(spec: &ProblemSpec) -> Result<Self> {
        Self::new(
            spec.control_domain(),
            default_control_mesh(spec.control_dim()),
        )
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Visits the refinement patch around `center` through a reused buffer.
    fn for_each_patch_point(
        &self,
        center: &[f64],
        buf: &mut Vec<f64>,
        mut visit: impl FnMut(&[f64]),
    ) {
        let Some((lower, upper, spacing)) = &self.grid else {
            return;
        };
        let m = center.len();
        buf.resize(m, 0.0);
        let span: Vec<(f64, f64, usize)> = (0..m)
            .map(|i| {
                if spacing[i] == 0.0 {
                    (center[i], center[i], 1)
                } else {
                    let lo = (center[i] - spacing[i]).max(lower[i]);
                    let hi = (center[i] + spacing[i]).min(upper[i]);
                    (lo, hi, REFINE_POINTS)
                }
            })
            .collect();
        let mut idx = vec![0usize; m];
        loop {
            for i in 0..m {
                let (lo, hi, k) = span[i];
                buf[i] = if k == 1 || idx[i] + 1 == k {
                    if k == 1 {
                        lo
                    } else {
                        hi
                    }
                } else {
                    lo + (hi - lo) / (k - 1) as f64 * idx[i] as f64
                };
            }
            visit(buf);
            let mut i = 0;
            loop {
                if i == m {
                    return;
                }
                idx[i] += 1;
                if idx[i] < span[i].2 {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxCandidate {
    pub u: Vec<f64>,
    pub value: f64,
}

/// Controls attaining the supremum, up to `gap_tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxSet {
    /// Sorted lexicographically by control.
    pub candidates: Vec<ArgmaxCandidate>,
    pub gap_tolerance: f64,
    pub attained: bool,
    /// Every mesh point is maximal: the Hamiltonian does not depend on `u`.
    pub flat: bool,
    /// Directions along which every multiple of the maximizer stays maximal.
    pub free_directions: Vec<Vec<f64>>,
}

impl ArgmaxSet {
    /// One maximizer per group of candidates within `tol` of the group's
    /// first member, in candidate order. Each group is represented by its
    /// best-valued member.
    pub fn clusters(&self, tol: f64) -> Vec<Vec<f64>> {
        let mut groups: Vec<(&[f64], &ArgmaxCandidate)> = Vec::new();
        for c in &self.candidates {
            match groups.iter_mut().find(|(first, _)| dist(first, &c.u) <= tol) {
                Some(g) => {
                    if c.value > g.1.value {
                        g.1 = c;
                    }
                }
                None => groups.push((&c.u, c)),
            }
        }
        groups.into_iter().map(|(_, best)| best.u.clone()).collect()
    }

    /// One maximizer up to clustering and no free directions.
    pub fn is_singleton(&self) -> bool {
        self.attained && self.free_directions.is_empty() && self.clusters(CLUSTER_TOL).len() == 1
    }

    /// The candidate with the largest value (first on ties).
    pub fn best(&self) -> Option<&ArgmaxCandidate> {
        self.candidates
            .iter()
            .fold(None, |b: Option<&ArgmaxCandidate>, c| match b {
                Some(b) if b.value >= c.value => Some(b),
                _ => Some(c),
            })
    }
}

/// `sup_u H(x, p, u, t)` with the maximizer set, on the default mesh.
pub fn hamiltonian(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    t: f64,
    control_mesh: usize,
) -> Result<(f64, ArgmaxSet)> {
    if let ControlDomain::EuclideanSpace { .. } = spec.control_domain() {
        return analytic_argmax(spec, x, p, t);
    }
    let mesh = ControlMesh::new(spec.control_domain(), control_mesh)?;
    hamiltonian_on(spec, &mesh, x, p, t)
}

/// As [`hamiltonian`] with a prebuilt mesh (ignored for unbounded domains).
pub fn hamiltonian_on(
    spec: &ProblemSpec,
    mesh: &ControlMesh,
    x: &[f64],
    p: &[f64],
    t: f64,
) -> Result<(f64, ArgmaxSet)> {
    if let ControlDomain::EuclideanSpace { .. } = spec.control_domain() {
        return analytic_argmax(spec, x, p, t);
    }
    let mut f = vec![0.0; x.len()];
    let mut ham = |u: &[f64]| {
        spec.dynamics_into(x, u, t, &mut f);
        dot(p, &f) - spec.running_cost(x, u, t)
    };
    let values: Vec<f64> = mesh.points.iter().map(|u| ham(u)).collect();
    let coarse_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !coarse_max.is_finite() {
        return Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ));
    }
    let coarse_tol = gap_tolerance(coarse_max);
    let flat = values.iter().all(|v| *v >= coarse_max - coarse_tol);
    // the final maximum is at least the coarse one, so nothing below this
    // floor can end up in the argmax
    let floor = coarse_max - coarse_tol;
    let mut evaluated: Vec<ArgmaxCandidate> = mesh
        .points
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v >= floor)
        .map(|(u, v)| ArgmaxCandidate {
            u: u.clone(),
            value: *v,
        })
        .collect();
    if !flat && mesh.grid.is_some() {
        let mut buf = Vec::new();
        for center in center_indices(&mesh.points, &values, mesh) {
            mesh.for_each_patch_point(&mesh.points[center], &mut buf, |u| {
                let value = ham(u);
                if value >= floor {
                    evaluated.push(ArgmaxCandidate {
                        u: u.to_vec(),
                        value,
                    });
                }
            });
        }
    }
    let value = max_value(&evaluated)?;
    let tol = gap_tolerance(value);
    let mut candidates: Vec<ArgmaxCandidate> = evaluated
        .into_iter()
        .filter(|c| c.value >= value - tol)
        .collect();
    candidates.sort_by(|a, b| lex_cmp(&a.u, &b.u));
    candidates.dedup_by(|a, b| a.u == b.u);
    Ok((
        value,
        ArgmaxSet {
            candidates,
            gap_tolerance: tol,
            attained: true,
            flat,
            free_directions: Vec::new(),
        },
    ))
}

/// Maximization over a problem's control domain: a prebuilt mesh for bounded
/// domains, the analytic maximizer for `R^m`.
#[derive(Clone, Debug)]
pub struct Maximizer<'a> {
    spec: &'a ProblemSpec,
    mesh: Option<ControlMesh>,
}

impl<'a> Maximizer<'a> {
    /// `per_dim` overrides the default mesh size.
    pub fn new(spec: &'a ProblemSpec, per_dim: Option<usize>) -> Result<Self> {
        let mesh = match spec.control_domain() {
            ControlDomain::EuclideanSpace { .. } => None,
            d => Some(ControlMesh::new(d, per_dim.unwrap_or_else(|| default_control_mesh(spec.control_dim())))?),
        };
        Ok(Self { spec, mesh })
    }

    pub fn spec(&self) -> &'a ProblemSpec {
        self.spec
    }

    pub fn mesh(&self) -> Option<&ControlMesh> {
        self.mesh.as_ref()
    }

    pub fn sup(&self, x: &[f64], p: &[f64], t: f64) -> Result<(f64, ArgmaxSet)> {
        match &self.mesh {
            Some(m) => hamiltonian_on(self.spec, m, x, p, t),
            None => analytic_argmax(self.spec, x, p, t),
        }
    }

    pub fn value(&self, x: &[f64], p: &[f64], t: f64) -> Result<f64> {
        match &self.mesh {
            Some(m) => hamiltonian_value(self.spec, m, x, p, t),
            None => analytic_argmax(self.spec, x, p, t).map(|(v, _)| v),
        }
    }
}

/// Only the supremum; cheaper than [`hamiltonian_on`] because no set is kept.
/// Same maximization and refinement, without allocating per control.
pub fn hamiltonian_value(
    spec: &ProblemSpec,
    mesh: &ControlMesh,
    x: &[f64],
    p: &[f64],
    t: f64,
) -> Result<f64> {
    if let ControlDomain::EuclideanSpace { .. } = spec.control_domain() {
        return analytic_argmax(spec, x, p, t).map(|(v, _)| v);
    }
    let mut f = vec![0.0; x.len()];
    maximize_on_mesh(mesh, |u| {
        spec.dynamics_into(x, u, t, &mut f);
        dot(p, &f) - spec.running_cost(x, u, t)
    })
}

/// Supremum of an arbitrary objective over a bounded mesh, with the same
/// flatness test and local refinement as the Hamiltonian maximization.
pub fn maximize_on_mesh(
    mesh: &ControlMesh,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let values: Vec<f64> = mesh.points.iter().map(|u| objective(u)).collect();
    let coarse_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !coarse_max.is_finite() {
        return Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ));
    }
    let tol = gap_tolerance(coarse_max);
    if values.iter().all(|v| *v >= coarse_max - tol) || mesh.grid.is_none() {
        return Ok(coarse_max);
    }
    let mut best = coarse_max;
    let mut u = Vec::new();
    for center in center_indices(&mesh.points, &values, mesh) {
        mesh.for_each_patch_point(&mesh.points[center], &mut u, |v| {
            best = best.max(objective(v))
        });
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ))
    }
}

/// The supremum and, per state dimension, the largest `|f_i|` over the
/// near-maximizers. By Danskin's theorem the latter bounds `|dH/dp_i|` at `p`.
pub fn hamiltonian_with_speeds(
    spec: &ProblemSpec,
    mesh: &ControlMesh,
    x: &[f64],
    p: &[f64],
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::with_capacity(mesh.points.len());
    let eval = |u: &[f64], rows: &mut Vec<(f64, Vec<f64>)>| {
        let f = spec.dynamics(x, u, t);
        let v = dot(p, &f) - spec.running_cost(x, u, t);
        rows.push((v, f));
    };
    for u in &mesh.points {
        eval(u, &mut rows);
    }
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let coarse_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !coarse_max.is_finite() {
        return Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ));
    }
    let flat = values
        .iter()
        .all(|v| *v >= coarse_max - gap_tolerance(coarse_max));
    if !flat && mesh.grid.is_some() {
        let mut buf = Vec::new();
        for center in center_indices(&mesh.points, &values, mesh) {
            mesh.for_each_patch_point(&mesh.points[center], &mut buf, |u| eval(u, &mut rows));
        }
    }
    let value = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    if !value.is_finite() {
        return Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ));
    }
    let tol = gap_tolerance(value);
    let mut speeds = vec![0.0_f64; n];
    for (v, f) in &rows {
        if *v >= value - tol {
            for (s, fi) in speeds.iter_mut().zip(f) {
                *s = s.max(fi.abs());
            }
        }
    }
    Ok((value, speeds))
}

fn max_value(c: &[ArgmaxCandidate]) -> Result<f64> {
    let m = c.iter().map(|c| c.value).fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Estimation(
            "control Hamiltonian is not finite on the mesh".into(),
        ))
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Up to `MAX_REFINED` near-maximal coarse points, best first, pairwise more
/// than one and a half cells apart.
fn center_indices(points: &[Vec<f64>], values: &[f64], mesh: &ControlMesh) -> Vec<usize> {
    let (_, _, spacing) = mesh.grid.as_ref().unwrap();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = values.iter().map(|v| max - v).fold(0.0, f64::max);
    // a cell's worth of slack: the true maximum may sit between mesh points
    let slack = gap_tolerance(max).max(1e-2 * spread);
    let mut order: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] >= max - slack)
        .collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut centers: Vec<usize> = Vec::new();
    for i in order {
        if centers.len() == MAX_REFINED {
            break;
        }
        let far = centers.iter().all(|&z| {
            points[z]
                .iter()
                .zip(&points[i])
                .zip(spacing)
                .any(|((a, b), h)| (a - b).abs() > 1.5 * h)
        });
        if far {
            centers.push(i);
        }
    }
    centers
}

fn analytic_argmax(spec: &ProblemSpec, x: &[f64], p: &[f64], t: f64) -> Result<(f64, ArgmaxSet)> {
    let Some(QuadraticControlStructure {
        input_matrix,
        penalty_diag,
        ..
    }) = spec.quadratic_structure()
    else {
        return Err(Error::Unsupported(format!(
            "problem `{}` has an unbounded control domain without analytic maximizer",
            spec.name()
        )));
    };
    let n = spec.state_dim();
    let m = penalty_diag.len();
    // B^T p
    let c: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| input_matrix[i * m + j] * p[i]).sum())
        .collect();
    let zero = vec![0.0; m];
    let base = control_hamiltonian_unchecked(spec, x, p, &zero, t);
    let c_scale = 1.0 + c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut u = vec![0.0; m];
    let mut value = base;
    let mut free = Vec::new();
    let mut attained = true;
    for j in 0..m {
        let s = penalty_diag[j];
        if s > 0.0 {
            u[j] = c[j] / (2.0 * s);
            value += c[j] * c[j] / (4.0 * s);
        } else if c[j].abs() <= 1e-12 * c_scale {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            free.push(e);
        } else {
            attained = false;
        }
    }
    if !attained {
        return Ok((
            f64::INFINITY,
            ArgmaxSet {
                candidates: Vec::new(),
                gap_tolerance: f64::INFINITY,
                attained: false,
                flat: false,
                free_directions: Vec::new(),
            },
        ));
    }
    Ok((
        value,
        ArgmaxSet {
            candidates: vec![ArgmaxCandidate { u, value }],
            gap_tolerance: gap_tolerance(value),
            attained: true,
            flat: false,
            free_directions: free,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    P,
    X,
}

/// `f(x, u, t)` for `Wrt::P`, `(df/dx)^T p - dF/dx` for `Wrt::X`.
pub fn derived_vector(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    u: &[f64],
    t: f64,
    wrt: Wrt,
) -> Result<Vec<f64>> {
    match wrt {
        Wrt::P => Ok(spec.dynamics(x, u, t)),
        Wrt::X => {
            let (Some(jac), Some(grad)) = (spec.dynamics_jac_x(x, u, t), spec.cost_grad_x(x, u, t))
            else {
                return Err(Error::Usage(format!(
                    "problem `{}` has no state derivatives",
                    spec.name()
                )));
            };
            let n = spec.state_dim();
            Ok((0..n)
                .map(|j| (0..n).map(|i| jac[i * n + j] * p[i]).sum::<f64>() - grad[j])
                .collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosisWitness {
    /// The common derived vector.
    Single { vector: Vec<f64> },
    /// Two maximizers with distinct derived vectors.
    Pair {
        controls: [Vec<f64>; 2],
        vectors: [Vec<f64>; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentiabilityDiagnosis {
    pub wrt: Wrt,
    pub differentiable: bool,
    pub witness: DiagnosisWitness,
    pub spread: f64,
    pub clustering_tolerance: f64,
    /// Clustered maximizers.
    pub argmax: Vec<Vec<f64>>,
}

/// Controls whose derived vectors span the argmax: candidates plus, for free
/// directions, unit steps along them.
fn argmax_probe_controls(set: &ArgmaxSet) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = set.candidates.iter().map(|c| c.u.clone()).collect();
    if let Some(first) = set.candidates.first() {
        for e in &set.free_directions {
            for s in [1.0, -1.0] {
                out.push(first.u.iter().zip(e).map(|(a, b)| a + s * b).collect());
            }
        }
    }
    out
}

pub fn diagnose_differentiability(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    t: f64,
    wrt: Wrt,
) -> Result<DifferentiabilityDiagnosis> {
    if wrt == Wrt::X && !spec.has_jacobians() {
        return Err(Error::Usage(format!(
            "problem `{}` has no state derivatives",
            spec.name()
        )));
    }
    let (_, set) = hamiltonian(spec, x, p, t, default_control_mesh(spec.control_dim()))?;
    if !set.attained {
        return Err(Error::Estimation(
            "supremum of the control Hamiltonian is not attained".into(),
        ));
    }
    let controls = argmax_probe_controls(&set);
    let vectors: Vec<Vec<f64>> = controls
        .iter()
        .map(|u| derived_vector(spec, x, p, u, t, wrt))
        .collect::<Result<_>>()?;
    let mut spread = 0.0;
    let mut pair = (0, 0);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d = dist(&vectors[i], &vectors[j]);
            if d > spread {
                spread = d;
                pair = (i, j);
            }
        }
    }
    let differentiable = spread <= CLUSTER_TOL;
    let witness = if differentiable {
        DiagnosisWitness::Single {
            vector: vectors[0].clone(),
        }
    } else {
        DiagnosisWitness::Pair {
            controls: [controls[pair.0].clone(), controls[pair.1].clone()],
            vectors: [vectors[pair.0].clone(), vectors[pair.1].clone()],
        }
    };
    Ok(DifferentiabilityDiagnosis {
        wrt,
        differentiable,
        witness,
        spread,
        clustering_tolerance: CLUSTER_TOL,
        argmax: set.clusters(CLUSTER_TOL),
    })
}

/// Directional derivative of the maximized Hamiltonian: the largest
/// `<derived vector, v>` over the maximizers.
pub fn directional_derivative_of_max(
    spec: &ProblemSpec,
    x: &[f64],
    p: &[f64],
    t: f64,
    wrt: Wrt,
    v: &[f64],
) -> Result<f64> {
    if v.len() != spec.state_dim() {
        return Err(Error::Usage("direction has the wrong dimension".into()));
    }
    if v.iter().all(|c| *c == 0.0) {
        return Ok(0.0);
    }
    let (_, set) = hamiltonian(spec, x, p, t, default_control_mesh(spec.control_dim()))?;
    if !set.attained {
        return Err(Error::Estimation(
            "supremum of the control Hamiltonian is not attained".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    for u in argmax_probe_controls(&set) {
        best = best.max(dot(&derived_vector(spec, x, p, &u, t, wrt)?, v));
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityCheck {
    pub holds: bool,
    pub worst_defect: f64,
    pub tolerance: f64,
    /// `(p1, p2, lambda)` of the worst defect.
    pub worst_pair: Option<(Vec<f64>, Vec<f64>, f64)>,
}

pub const CONVEXITY_TOL: f64 = 1e-6;

/// Checks `H(x, lp1 + (1-l)p2) <= l H(x, p1) + (1-l) H(x, p2)` over all pairs of samples.
pub fn check_convexity_in_p(
    spec: &ProblemSpec,
    x: &[f64],
    t: f64,
    p_samples: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<ConvexityCheck> {
    if p_samples.len() < 2 {
        return Err(Error::Usage("need at least two p samples".into()));
    }
    let mesh_size = default_control_mesh(spec.control_dim());
    let h = |p: &[f64]| hamiltonian(spec, x, p, t, mesh_size).map(|(v, _)| v);
    let values: Vec<f64> = p_samples.iter().map(|p| h(p)).collect::<Result<_>>()?;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = None;
    for i in 0..p_samples.len() {
        for j in i + 1..p_samples.len() {
            for &l in lambdas {
                let mid: Vec<f64> = p_samples[i]
                    .iter()
                    .zip(&p_samples[j])
                    .map(|(a, b)| l * a + (1.0 - l) * b)
                    .collect();
                let defect = if l == 0.0 || l == 1.0 {
                    // endpoint identity holds exactly
                    0.0
                } else {
                    h(&mid)? - l * values[i] - (1.0 - l) * values[j]
                };
                if defect > worst {
                    worst = defect;
                    worst_pair = Some((p_samples[i].clone(), p_samples[j].clone(), l));
                }
            }
        }
    }
    Ok(ConvexityCheck {
        holds: worst <= CONVEXITY_TOL,
        worst_defect: worst,
        tolerance: CONVEXITY_TOL,
        worst_pair,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcavityCheck {
    pub holds: bool,
    pub worst_defect: f64,
    pub tolerance: f64,
    /// `((x1, u1), (x2, u2), lambda)` as joint vectors.
    pub witness: Option<(Vec<f64>, Vec<f64>, f64)>,
}

/// Midpoint-combination test of joint concavity of `(x, u) -> H(x, p, u, t)`
/// over `region` (an `n + m` box), on random pairs.
pub fn check_concavity_in_xu(
    spec: &ProblemSpec,
    p: &[f64],
    t: f64,
    region: &Bounds,
    samples: usize,
    lambdas: &[f64],
    seed: u64,
) -> Result<ConcavityCheck> {
    if let ControlDomain::FiniteSet { .. } = spec.control_domain() {
        return Err(Error::Usage(
            "concavity in (x, u) needs a convex control domain".into(),
        ));
    }
    let n = spec.state_dim();
    let m = spec.control_dim();
    if region.lower.len() != n + m || region.upper.len() != n + m {
        return Err(Error::Usage(format!(
            "region must have dimension {}",
            n + m
        )));
    }
    if samples == 0 || lambdas.is_empty() {
        return Err(Error::Usage("need samples and lambdas".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |z: &[f64]| control_hamiltonian(spec, &z[..n], p, &z[n..], t);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut scale = 0.0_f64;
    for _ in 0..samples {
        let mut draw = || -> Vec<f64> {
            (0..n + m)
                .map(|k| {
                    let (l, u) = (region.lower[k], region.upper[k]);
                    if l == u {
                        l
                    } else {
                        rng.gen_range(l..=u)
                    }
                })
                .collect()
        };
        let z1 = draw();
        let z2 = draw();
        let (h1, h2) = (eval(&z1)?, eval(&z2)?);
        for &l in lambdas {
            let mid: Vec<f64> = z1
                .iter()
                .zip(&z2)
                .map(|(a, b)| l * a + (1.0 - l) * b)
                .collect();
            let hm = eval(&mid)?;
            scale = scale.max(h1.abs()).max(h2.abs()).max(hm.abs());
            let defect = l * h1 + (1.0 - l) * h2 - hm;
            if defect > worst {
                worst = defect;
                witness = Some((z1.clone(), z2.clone(), l));
            }
        }
    }
    let tolerance = 1e-9 * (1.0 + scale);
    Ok(ConcavityCheck {
        holds: worst <= tolerance,
        worst_defect: worst,
        tolerance,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry::problem;

    #[test]
    fn speeds_follow_the_maximizer() {
        let spec = problem("ex22").unwrap();
        let mesh = ControlMesh::for_spec(&spec).unwrap();
        // p < 0 picks u = 0, so the speed is |x|
        let (v, s) = hamiltonian_with_speeds(&spec, &mesh, &[0.3], &[-0.5], 0.0).unwrap();
        assert!((v - (-0.15 - 0.3)).abs() < 1e-12);
        assert!((s[0] - 0.3).abs() < 1e-12);
        // p = 0 leaves every control maximal
        let (_, s) = hamiltonian_with_speeds(&spec, &mesh, &[0.3], &[0.0], 0.0).unwrap();
        assert!((s[0] - 1.3).abs() < 1e-12);
    }

    #[test]
    fn value_path_matches_full_maximization() {
        for id in ["ex22", "ex23", "ex31"] {
            let spec = problem(id).unwrap();
            let mesh = ControlMesh::for_spec(&spec).unwrap();
            for (x, p) in [
                (0.3, 0.7),
                (-0.5, -1.2),
                (0.0, 0.0),
                (1.1, 0.004),
                (-0.2, 1e-9),
            ] {
                let (full, _) = hamiltonian_on(&spec, &mesh, &[x], &[p], 0.2).unwrap();
                let fast = hamiltonian_value(&spec, &mesh, &[x], &[p], 0.2).unwrap();
                assert_eq!(full, fast, "{id} {x} {p}");
            }
        }
    }

    #[test]
    fn control_hamiltonian_examples() {
        let ex23 = problem("ex23").unwrap();
        assert_eq!(
            control_hamiltonian(&ex23, &[0.0], &[0.0], &[1.0], 0.0).unwrap(),
            1.0
        );
        let ex22 = problem("ex22").unwrap();
        assert_eq!(
            control_hamiltonian(&ex22, &[1.0], &[2.0], &[0.5], 0.0).unwrap(),
            2.0
        );
        let ex31 = problem("ex31").unwrap();
        for u in [-1.0, 0.0, 0.7] {
            assert_eq!(
                control_hamiltonian(&ex31, &[0.4], &[0.0], &[u], 0.2).unwrap(),
                -1.0
            );
        }
        assert!(matches!(
            control_hamiltonian(&ex22, &[0.0], &[0.0], &[1.5], 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ex23_maximum_and_argmax() {
        let spec = problem("ex23").unwrap();
        for (x, p) in [(0.3, 0.7), (-1.0, -0.2), (0.5, 0.0), (0.0, 2.5)] {
            let (v, set) = hamiltonian(&spec, &[x], &[p], 0.0, 201).unwrap();
            assert!((v - (p.abs() - x * x + 1.0)).abs() < 1e-12);
            let clusters = set.clusters(CLUSTER_TOL);
            if p == 0.0 {
                assert_eq!(clusters, vec![vec![-1.0], vec![1.0]]);
            } else {
                assert_eq!(clusters, vec![vec![p.signum()]]);
            }
        }
    }

    #[test]
    fn constant_cost_argmax_is_the_whole_mesh() {
        let spec = problem("ex31").unwrap();
        let (v, set) = hamiltonian(&spec, &[0.3], &[0.0], 0.0, 201).unwrap();
        assert_eq!(v, -1.0);
        assert!(set.flat);
        assert_eq!(set.candidates.len(), 201);
    }

    #[test]
    fn ex22_linear_in_control() {
        let spec = problem("ex22").unwrap();
        let (v, set) = hamiltonian(&spec, &[0.0], &[-1.0], 0.0, 201).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(set.clusters(CLUSTER_TOL), vec![vec![0.0]]);
    }

    #[test]
    fn refinement_finds_interior_maximizer() {
        // H = -(u - 0.123456)^2 has its peak between mesh points
        let spec = ProblemSpec::new(
            "peak",
            1,
            ControlDomain::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            0.0,
            1.0,
            |_x, _u, _t, out| out[0] = 0.0,
            |_x, u, _t| (u[0] - 0.123456).powi(2),
        )
        .unwrap();
        let (v, set) = hamiltonian(&spec, &[0.0], &[0.0], 0.0, 201).unwrap();
        assert!(v > -1e-6);
        for c in set.clusters(CLUSTER_TOL) {
            assert!((c[0] - 0.123456).abs() < 2e-3);
        }
    }

    #[test]
    fn finite_set_domain() {
        let spec = ProblemSpec::new(
            "bang",
            1,
            ControlDomain::FiniteSet {
                points: vec![vec![-1.0], vec![1.0]],
            },
            0.0,
            1.0,
            |_x, u, _t, out| out[0] = u[0],
            |_x, _u, _t| 0.0,
        )
        .unwrap();
        let (v, set) = hamiltonian(&spec, &[0.0], &[0.5], 0.0, 201).unwrap();
        assert_eq!(v, 0.5);
        assert!(set.is_singleton());
        let samples: Vec<Vec<f64>> = (-5..=5).map(|k| vec![k as f64 / 3.0]).collect();
        let c = check_convexity_in_p(&spec, &[0.0], 0.0, &samples, &[0.3, 0.5]).unwrap();
        assert!(c.holds);
        assert!(matches!(
            check_concavity_in_xu(
                &spec,
                &[1.0],
                0.0,
                &Bounds::new(vec![0.0, -1.0], vec![1.0, 1.0]),
                10,
                &[0.5],
                0
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn unbounded_domain_uses_the_analytic_maximizer() {
        let spec = problem("ex32").unwrap();
        let (v, set) = hamiltonian(&spec, &[0.5], &[0.8], 0.0, 201).unwrap();
        // H = p(-x + u1) - u1^2, maximized at u1 = p / 2
        assert!((v - (0.8 * -0.5 + 0.16)).abs() < 1e-14);
        assert_eq!(set.candidates[0].u, vec![0.4, 0.0]);
        assert_eq!(set.free_directions, vec![vec![0.0, 1.0]]);
        let d = diagnose_differentiability(&spec, &[0.5], &[0.8], 0.0, Wrt::P).unwrap();
        assert!(d.differentiable);
    }

    #[test]
    fn unbounded_domain_without_structure_is_unsupported() {
        let spec = ProblemSpec::new(
            "free",
            1,
            ControlDomain::EuclideanSpace { dim: 1 },
            0.0,
            1.0,
            |_x, u, _t, out| out[0] = u[0],
            |_x, u, _t| u[0] * u[0],
        )
        .unwrap();
        assert!(matches!(
            hamiltonian(&spec, &[0.0], &[1.0], 0.0, 201),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ex23_differentiability() {
        let spec = problem("ex23").unwrap();
        let d = diagnose_differentiability(&spec, &[0.0], &[0.0], 0.0, Wrt::P).unwrap();
        assert!(!d.differentiable);
        assert_eq!(d.spread, 2.0);
        assert_eq!(d.argmax, vec![vec![-1.0], vec![1.0]]);
        let d = diagnose_differentiability(&spec, &[0.0], &[0.5], 0.0, Wrt::P).unwrap();
        assert!(d.differentiable);
        assert_eq!(d.witness, DiagnosisWitness::Single { vector: vec![1.0] });
        let d = diagnose_differentiability(&spec, &[0.3], &[0.5], 0.0, Wrt::X).unwrap();
        assert!(d.differentiable);
    }

    #[test]
    fn directional_derivative_examples() {
        let spec = problem("ex23").unwrap();
        assert_eq!(
            directional_derivative_of_max(&spec, &[0.0], &[0.0], 0.0, Wrt::P, &[1.0]).unwrap(),
            1.0
        );
        assert_eq!(
            directional_derivative_of_max(&spec, &[0.0], &[0.0], 0.0, Wrt::P, &[-1.0]).unwrap(),
            1.0
        );
        assert_eq!(
            directional_derivative_of_max(&spec, &[0.0], &[0.0], 0.0, Wrt::P, &[0.0]).unwrap(),
            0.0
        );
        let h = |p: f64| hamiltonian(&spec, &[0.0], &[p], 0.0, 201).unwrap().0;
        let fd = (h(1e-6) - h(0.0)) / 1e-6;
        assert!((fd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn convexity_in_p_on_registered_problems() {
        let samples: Vec<Vec<f64>> = (-6..=6).map(|k| vec![k as f64 * 0.4]).collect();
        for id in crate::problems::registry::REGISTERED_IDS {
            let spec = problem(id).unwrap();
            let c =
                check_convexity_in_p(&spec, &[0.3], 0.2, &samples, &[0.0, 0.25, 0.5, 1.0]).unwrap();
            assert!(c.holds && c.worst_defect <= 1e-6, "{id}: {c:?}");
        }
    }

    #[test]
    fn concavity_in_state_and_control() {
        let region = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let ex23 = problem("ex23").unwrap();
        let c = check_concavity_in_xu(&ex23, &[0.3], 0.0, &region, 200, &[0.5], 1).unwrap();
        assert!(!c.holds && c.worst_defect > 0.1);
        let ex22 = problem("ex22").unwrap();
        let region = Bounds::new(vec![-1.0, 0.0], vec![1.0, 1.0]);
        for p in [-2.0, 0.0, 1.5] {
            let c = check_concavity_in_xu(&ex22, &[p], 0.0, &region, 200, &[0.5, 0.3], 2).unwrap();
            assert!(c.holds, "p = {p}: {c:?}");
        }
    }
}
