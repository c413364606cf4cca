//! Explicit Lax–Friedrichs marching for `-v_t + sup_u H(x, -v_x, u, t) = 0`.
//!
//! With one-sided differences `D+`, `D-` and their mean `c`, a step back is
//! `v(t - dt) = v(t) - dt Hn` where the numerical Hamiltonian `Hn` is one of
//!
//! * control-wise (default): `sup_u [ H(x, -c, u) - sum_i |f_i(x, u)|/2 (D+_i - D-_i) ]`,
//!   the Lax–Friedrichs flux of each `H(x, ., u)` with its own Lipschitz
//!   constant `|f_i|`, maximized afterwards. Per control this is the upwind
//!   difference, so a node whose maximizer does not move keeps its value;
//! * local: `H(x, -c) - sum_i alpha_i/2 (D+_i - D-_i)` with `alpha_i` bounding
//!   `|dH/dp_i|` between the one-sided costates (Osher–Shu). `H` is convex in
//!   `p`, so the bound is attained at the interval ends and equals the largest
//!   `|f_i|` over the maximizers there.
//!
//! Both are monotone when `dt sum_i max|f_i| / dx_i <= 1`; the CFL check uses
//! factor 0.9. Ghost nodes outside the box copy their boundary neighbour.

use std::sync::Arc;

use rayon::prelude::*;

use super::grid::{GridAxis, GridValueFunction, SchemeMetadata};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    default_control_mesh, hamiltonian_value, hamiltonian_with_speeds, maximize_on_mesh, ControlMesh,
};
use crate::problems::{Bounds, ControlDomain, ProblemSpec};

pub const CFL_FACTOR: f64 = 0.9;
pub const MIN_NODES: usize = 16;
/// Times at which the speed bound `max_u |f_i|` is sampled.
const SPEED_SAMPLES: usize = 5;

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalHamiltonian {
    #[default]
    ControlWise,
    Local,
}

impl NumericalHamiltonian {
    fn label(self) -> &'static str {
        match self {
            Self::ControlWise => "control-wise Lax-Friedrichs, explicit Euler",
            Self::Local => "local Lax-Friedrichs, explicit Euler",
        }
    }
}

#[derive(Clone, Default)]
pub struct SolveOptions {
    pub flux: NumericalHamiltonian,
    /// Control mesh points per dimension; the default depends on `m`.
    pub control_mesh: Option<usize>,
    /// Terminal data in place of zero, for scheme diagnostics.
    pub terminal: Option<TerminalFn>,
}

struct Setup {
    axes: Vec<GridAxis>,
    mesh: ControlMesh,
    mesh_points: usize,
    /// Per node, per dimension bound on `max_u |f_i|`.
    alpha: Vec<f64>,
    /// Global `sum_i max alpha_i / dx_i`.
    rate: f64,
}

fn setup(
    spec: &ProblemSpec,
    space_box: &Bounds,
    nx: usize,
    control_mesh: Option<usize>,
) -> Result<Setup> {
    let n = spec.state_dim();
    if let ControlDomain::EuclideanSpace { .. } = spec.control_domain() {
        return Err(Error::Unsupported(
            "the grid solver needs a bounded control domain".into(),
        ));
    }
    if n > 3 {
        return Err(Error::Unsupported(
            "the grid solver handles state dimension at most 3".into(),
        ));
    }
    if space_box.lower.len() != n || space_box.upper.len() != n {
        return Err(Error::Usage(format!("space box must be {n}-dimensional")));
    }
    if nx < MIN_NODES {
        return Err(Error::Usage(format!(
            "nx must be at least {MIN_NODES}, got {nx}"
        )));
    }
    let axes = space_box
        .lower
        .iter()
        .zip(&space_box.upper)
        .map(|(l, u)| GridAxis::new(*l, *u, nx))
        .collect::<Result<Vec<_>>>()?;
    let mesh_points = control_mesh.unwrap_or_else(|| default_control_mesh(spec.control_dim()));
    let mesh = ControlMesh::new(spec.control_domain(), mesh_points)?;
    let total: usize = axes.iter().map(|a| a.count).product();
    let times: Vec<f64> = (0..SPEED_SAMPLES)
        .map(|i| spec.t0() + (spec.t_final() - spec.t0()) * i as f64 / (SPEED_SAMPLES - 1) as f64)
        .collect();
    let alpha: Vec<f64> = (0..total)
        .into_par_iter()
        .flat_map_iter(|j| {
            let x = node_point(&axes, j);
            let mut a = vec![0.0_f64; n];
            let mut f = vec![0.0; n];
            for &t in &times {
                for u in mesh.points() {
                    spec.dynamics_into(&x, u, t, &mut f);
                    for i in 0..n {
                        a[i] = a[i].max(f[i].abs());
                    }
                }
            }
            a
        })
        .collect();
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Divergence {
            time: spec.t_final(),
            detail: "dynamics are not finite on the grid".into(),
        });
    }
    let rate = (0..n)
        .map(|i| {
            let amax = (0..total).map(|j| alpha[j * n + i]).fold(0.0, f64::max);
            amax / axes[i].spacing()
        })
        .sum();
    Ok(Setup {
        axes,
        mesh,
        mesh_points,
        alpha,
        rate,
    })
}

fn node_point(axes: &[GridAxis], j: usize) -> Vec<f64> {
    let mut rest = j;
    axes.iter()
        .map(|a| {
            let i = rest % a.count;
            rest /= a.count;
            a.node(i)
        })
        .collect()
}

fn min_steps_for(rate: f64, horizon: f64) -> usize {
    ((horizon * rate / CFL_FACTOR) * (1.0 + 1e-12))
        .ceil()
        .max(1.0) as usize
}

/// Smallest `nt` meeting the CFL condition for this box and `nx`.
pub fn min_time_steps(spec: &ProblemSpec, space_box: &Bounds, nx: usize) -> Result<usize> {
    let s = setup(spec, space_box, nx, None)?;
    Ok(min_steps_for(s.rate, spec.t_final() - spec.t0()))
}

/// Solves the HJB equation backward from `v(., T) = 0` on `space_box` with
/// `nx` nodes per dimension and `nt` time steps.
pub fn solve_hjb(
    spec: &ProblemSpec,
    space_box: &Bounds,
    nx: usize,
    nt: usize,
) -> Result<GridValueFunction> {
    solve_hjb_with(spec, space_box, nx, nt, &SolveOptions::default())
}

pub fn solve_hjb_with(
    spec: &ProblemSpec,
    space_box: &Bounds,
    nx: usize,
    nt: usize,
    opts: &SolveOptions,
) -> Result<GridValueFunction> {
    let s = setup(spec, space_box, nx, opts.control_mesh)?;
    let n = spec.state_dim();
    let horizon = spec.t_final() - spec.t0();
    let min_nt = min_steps_for(s.rate, horizon);
    if nt == 0 {
        return Err(Error::Usage(format!(
            "nt must be positive; the CFL condition needs nt >= {min_nt}"
        )));
    }
    let dt = horizon / nt as f64;
    let cfl = dt * s.rate;
    if cfl > CFL_FACTOR * (1.0 + 1e-12) {
        return Err(Error::Usage(format!(
            "nt = {nt} violates the CFL condition (ratio {cfl:.4} > {CFL_FACTOR}); use nt >= {min_nt}"
        )));
    }
    let time_axis = GridAxis::new(spec.t0(), spec.t_final(), nt + 1)?;
    let total: usize = s.axes.iter().map(|a| a.count).product();
    let counts: Vec<usize> = s.axes.iter().map(|a| a.count).collect();
    let strides: Vec<usize> = counts
        .iter()
        .scan(1, |acc, c| {
            let st = *acc;
            *acc *= c;
            Some(st)
        })
        .collect();
    let dx: Vec<f64> = s.axes.iter().map(|a| a.spacing()).collect();
    let points: Vec<Vec<f64>> = (0..total).map(|j| node_point(&s.axes, j)).collect();

    let mut values = vec![0.0; total * (nt + 1)];
    if let Some(term) = &opts.terminal {
        for (j, p) in points.iter().enumerate() {
            values[nt * total + j] = term(p);
        }
    }
    for k in (0..nt).rev() {
        let t = time_axis.node(k + 1);
        let (head, tail) = values.split_at_mut((k + 1) * total);
        let prev = &tail[..total];
        let next: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|j| {
                let mut p = [0.0; 3];
                let mut ends = [[0.0; 2]; 3];
                let mut rest = j;
                for i in 0..n {
                    let idx = rest % counts[i];
                    rest /= counts[i];
                    let here = prev[j];
                    let left = if idx == 0 { here } else { prev[j - strides[i]] };
                    let right = if idx + 1 == counts[i] {
                        here
                    } else {
                        prev[j + strides[i]]
                    };
                    let dp = (right - here) / dx[i];
                    let dm = (here - left) / dx[i];
                    // costate argument is -v_x
                    p[i] = -0.5 * (dp + dm);
                    ends[i] = [dp, dm];
                }
                let x = &points[j];
                let step = || -> Result<f64> {
                    let hn = match opts.flux {
                        NumericalHamiltonian::ControlWise => {
                            let mut f = [0.0; 3];
                            maximize_on_mesh(&s.mesh, |u| {
                                spec.dynamics_into(x, u, t, &mut f[..n]);
                                let mut h = -spec.running_cost(x, u, t);
                                for i in 0..n {
                                    let [dp, dm] = ends[i];
                                    h += f[i] * p[i] - 0.5 * f[i].abs() * (dp - dm);
                                }
                                h
                            })?
                        }
                        NumericalHamiltonian::Local => {
                            let mut hn = hamiltonian_value(spec, &s.mesh, x, &p[..n], t)?;
                            for i in 0..n {
                                let [dp, dm] = ends[i];
                                if dp == dm {
                                    continue;
                                }
                                let mut alpha = 0.0_f64;
                                for d in [dp, dm] {
                                    let mut q = p;
                                    q[i] = -d;
                                    alpha = alpha.max(
                                        hamiltonian_with_speeds(spec, &s.mesh, x, &q[..n], t)?.1[i],
                                    );
                                }
                                hn -= 0.5 * alpha * (dp - dm);
                            }
                            hn
                        }
                    };
                    Ok(prev[j] - dt * hn)
                };
                step().unwrap_or(f64::NAN)
            })
            .collect();
        if let Some(j) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: time_axis.node(k),
                detail: format!("non-finite value at x = {:?}", points[j]),
            });
        }
        head[k * total..].copy_from_slice(&next);
    }

    let dissipation = (0..n)
        .map(|i| 0.5 * (0..total).map(|j| s.alpha[j * n + i]).fold(0.0, f64::max))
        .collect();
    GridValueFunction::new(
        s.axes,
        time_axis,
        values,
        SchemeMetadata {
            scheme: opts.flux.label().into(),
            problem: spec.name().to_string(),
            dissipation,
            cfl_ratio: cfl,
            control_mesh: s.mesh_points,
        },
    )
}

/// Largest `|f_i|` over the box corners, a box grid and the control mesh,
/// used as the boundary influence speed.
pub fn max_speed(spec: &ProblemSpec, space_box: &Bounds) -> Result<f64> {
    let s = setup(spec, space_box, MIN_NODES, None)?;
    Ok(s.alpha.iter().copied().fold(0.0, f64::max))
}

/// Sup-norm error of `grid` against `reference` over nodes farther than
/// `speed (T - t)` from the box boundary.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GridError {
    pub sup_error: f64,
    pub nodes_compared: usize,
    pub worst_point: Vec<f64>,
    pub worst_time: f64,
}

pub fn grid_error(
    grid: &GridValueFunction,
    reference: &dyn Fn(&[f64], f64) -> f64,
    speed: f64,
) -> GridError {
    let t_final = grid.time_axis.upper;
    let mut out = GridError {
        sup_error: 0.0,
        nodes_compared: 0,
        worst_point: Vec::new(),
        worst_time: t_final,
    };
    let points: Vec<Vec<f64>> = (0..grid.space_nodes())
        .map(|j| grid.space_point(j))
        .collect();
    for k in 0..grid.time_axis.count {
        let t = grid.time_axis.node(k);
        let margin = speed * (t_final - t);
        for (j, x) in points.iter().enumerate() {
            let inside = x
                .iter()
                .zip(&grid.space_axes)
                .all(|(v, a)| v - a.lower >= margin && a.upper - v >= margin);
            if !inside {
                continue;
            }
            out.nodes_compared += 1;
            let e = (grid.value_at_node(k, j) - reference(x, t)).abs();
            if e > out.sup_error {
                out.sup_error = e;
                out.worst_point = x.clone();
                out.worst_time = t;
            }
        }
    }
    out
}
