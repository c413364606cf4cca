//! Brute-force dynamic programming over piecewise-constant controls.
//!
//! Deliberately shares nothing with the grid solver: the state grid covers
//! only the box reachable from the query point, each stage is a minimum over
//! control-mesh values held for one step, and transitions are integrated by a
//! local RK4 on the cost-augmented state.

use crate::error::{Error, Result};
use crate::problems::{ControlDomain, ProblemSpec};

/// Node caps per dimension for the stage grids, by state dimension.
fn node_cap(n: usize) -> usize {
    match n {
        1 => 4001,
        2 => 201,
        _ => 41,
    }
}

/// Sample points per dimension when bounding speeds over a box.
const BOUND_SAMPLES: usize = 5;

struct Stage {
    lower: Vec<f64>,
    step: Vec<f64>,
    count: Vec<usize>,
    values: Vec<f64>,
}

impl Stage {
    fn nodes(&self) -> usize {
        self.count.iter().product()
    }

    fn point(&self, mut j: usize) -> Vec<f64> {
        (0..self.count.len())
            .map(|d| {
                let i = j % self.count[d];
                j /= self.count[d];
                self.lower[d] + self.step[d] * i as f64
            })
            .collect()
    }

    /// Multilinear interpolation, clamped to the stage box.
    fn value(&self, y: &[f64]) -> f64 {
        let n = y.len();
        let mut cell = vec![(0usize, 0.0f64); n];
        for d in 0..n {
            if self.count[d] == 1 {
                continue;
            }
            let s = ((y[d] - self.lower[d]) / self.step[d]).clamp(0.0, (self.count[d] - 1) as f64);
            let i = (s.floor() as usize).min(self.count[d] - 2);
            cell[d] = (i, s - i as f64);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut j = 0;
            let mut stride = 1;
            for d in 0..n {
                let up = corner >> d & 1;
                let (i, frac) = cell[d];
                if self.count[d] == 1 {
                    if up == 1 {
                        w = 0.0;
                    }
                } else {
                    w *= if up == 1 { frac } else { 1.0 - frac };
                    j += (i + up) * stride;
                }
                stride *= self.count[d];
            }
            if w != 0.0 {
                total += w * self.values[j];
            }
        }
        total
    }
}

fn controls(domain: &ControlDomain, mesh: usize) -> Result<Vec<Vec<f64>>> {
    match domain {
        ControlDomain::Box { lower, upper } => {
            if mesh < 2 {
                return Err(Error::Usage("control mesh needs at least 2 points".into()));
            }
            let mut out = vec![Vec::new()];
            for (l, u) in lower.iter().zip(upper) {
                let k = if l == u { 1 } else { mesh };
                let mut grown = Vec::with_capacity(out.len() * k);
                for prefix in &out {
                    for i in 0..k {
                        let mut p: Vec<f64> = prefix.clone();
                        p.push(if k == 1 {
                            *l
                        } else {
                            l + (u - l) * i as f64 / (k - 1) as f64
                        });
                        grown.push(p);
                    }
                }
                out = grown;
            }
            Ok(out)
        }
        ControlDomain::FiniteSet { points } => Ok(points.clone()),
        ControlDomain::EuclideanSpace { .. } => Err(Error::Unsupported(
            "the dynamic-programming oracle needs a bounded control domain".into(),
        )),
    }
}

/// One RK4 step of `(x, cost)` under a held control; returns the end state
/// and the stage cost.
fn transition(spec: &ProblemSpec, x: &[f64], u: &[f64], t: f64, h: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let rhs = |y: &[f64], s: f64| -> (Vec<f64>, f64) {
        (spec.dynamics(y, u, s), spec.running_cost(y, u, s))
    };
    let shift = |k: &[f64], c: f64| -> Vec<f64> { (0..n).map(|i| x[i] + c * k[i]).collect() };
    let (k1, c1) = rhs(x, t);
    let (k2, c2) = rhs(&shift(&k1, 0.5 * h), t + 0.5 * h);
    let (k3, c3) = rhs(&shift(&k2, 0.5 * h), t + 0.5 * h);
    let (k4, c4) = rhs(&shift(&k3, h), t + h);
    let end = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    (end, h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4))
}

/// Largest `|f_i|` over sample points of `[lo, hi]` and all controls.
fn speed_bound(
    spec: &ProblemSpec,
    lo: &[f64],
    hi: &[f64],
    us: &[Vec<f64>],
    t0: f64,
    t1: f64,
) -> Vec<f64> {
    let n = lo.len();
    let mut bound = vec![0.0_f64; n];
    let per: Vec<usize> = (0..n)
        .map(|d| if hi[d] > lo[d] { BOUND_SAMPLES } else { 1 })
        .collect();
    let total: usize = per.iter().product();
    for mut j in 0..total {
        let y: Vec<f64> = (0..n)
            .map(|d| {
                let i = j % per[d];
                j /= per[d];
                if per[d] == 1 {
                    lo[d]
                } else {
                    lo[d] + (hi[d] - lo[d]) * i as f64 / (per[d] - 1) as f64
                }
            })
            .collect();
        for t in [t0, 0.5 * (t0 + t1), t1] {
            for u in us {
                for (b, f) in bound.iter_mut().zip(spec.dynamics(&y, u, t)) {
                    *b = b.max(f.abs());
                }
            }
        }
    }
    bound
}

/// `inf` of the cost over controls constant on each of `nt` equal steps of
/// `[tau, T]`, taking values in the control mesh.
pub fn dp_value_oracle(
    spec: &ProblemSpec,
    x: &[f64],
    tau: f64,
    nt: usize,
    control_mesh: usize,
) -> Result<f64> {
    let n = spec.state_dim();
    if x.len() != n {
        return Err(Error::Usage(format!(
            "state has dimension {}, problem has {n}",
            x.len()
        )));
    }
    if !(tau >= spec.t0() && tau <= spec.t_final()) {
        return Err(Error::Domain(format!("tau = {tau} is outside [t0, T]")));
    }
    if nt == 0 {
        return Err(Error::Usage("nt must be positive".into()));
    }
    let us = controls(spec.control_domain(), control_mesh)?;
    if tau == spec.t_final() {
        return Ok(0.0);
    }
    let h = (spec.t_final() - tau) / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|k| tau + h * k as f64).collect();

    // forward sweep of reachable boxes; the speed bound is taken over the
    // box grown by a first guess so that one step cannot leave it
    let mut boxes: Vec<(Vec<f64>, Vec<f64>)> = vec![(x.to_vec(), x.to_vec())];
    let mut steps: Vec<Vec<f64>> = Vec::with_capacity(nt);
    for k in 0..nt {
        let (lo, hi) = boxes[k].clone();
        let v0 = speed_bound(spec, &lo, &hi, &us, times[k], times[k + 1]);
        let glo: Vec<f64> = (0..n).map(|d| lo[d] - 1.1 * h * v0[d]).collect();
        let ghi: Vec<f64> = (0..n).map(|d| hi[d] + 1.1 * h * v0[d]).collect();
        let v = speed_bound(spec, &glo, &ghi, &us, times[k], times[k + 1]);
        if v.iter().any(|s| !s.is_finite()) {
            return Err(Error::Divergence {
                time: times[k],
                detail: "dynamics are not finite on the reachable box".into(),
            });
        }
        let grow: Vec<f64> = (0..n).map(|d| 1.1 * h * v[d].max(v0[d])).collect();
        boxes.push((
            (0..n).map(|d| lo[d] - grow[d]).collect(),
            (0..n).map(|d| hi[d] + grow[d]).collect(),
        ));
        steps.push(v);
    }

    let cap = node_cap(n);
    let stage_for = |k: usize| -> Stage {
        let (lo, hi) = &boxes[k];
        let mut step = vec![1.0; n];
        let mut count = vec![1usize; n];
        for d in 0..n {
            let width = hi[d] - lo[d];
            if width > 0.0 {
                // about one cell per step of travel
                let target = if k > 0 { h * steps[k - 1][d] } else { width };
                let cells = if target > 0.0 {
                    (width / target).ceil() as usize
                } else {
                    1
                };
                count[d] = (cells + 1).clamp(2, cap);
                step[d] = width / (count[d] - 1) as f64;
            }
        }
        Stage {
            lower: lo.clone(),
            step,
            count,
            values: Vec::new(),
        }
    };

    let mut next = stage_for(nt);
    next.values = vec![0.0; next.nodes()];
    for k in (0..nt).rev() {
        let mut stage = stage_for(k);
        let mut values = Vec::with_capacity(stage.nodes());
        for j in 0..stage.nodes() {
            let y = stage.point(j);
            let mut best = f64::INFINITY;
            for u in &us {
                let (end, cost) = transition(spec, &y, u, times[k], h);
                let total = cost + next.value(&end);
                if total < best {
                    best = total;
                }
            }
            if !best.is_finite() {
                return Err(Error::Divergence {
                    time: times[k],
                    detail: format!("non-finite stage value at x = {y:?}"),
                });
            }
            values.push(best);
        }
        stage.values = values;
        next = stage;
    }
    Ok(next.value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry;

    #[test]
    fn ex22_from_one() {
        let spec = registry::problem("ex22").unwrap();
        let v = dp_value_oracle(&spec, &[1.0], 0.0, 200, 21).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() <= 0.02, "{v}");
    }

    #[test]
    fn ex23_origin_stays_above_infimum() {
        let spec = registry::problem("ex23").unwrap();
        let mut last = f64::INFINITY;
        for nt in [10, 20, 40, 80] {
            let v = dp_value_oracle(&spec, &[0.0], 0.0, nt, 21).unwrap();
            assert!(v > -1.0, "{nt}: {v}");
            assert!(v <= last + 1e-12, "{nt}: {v} after {last}");
            last = v;
        }
        assert!(last < -0.99, "{last}");
    }

    #[test]
    fn terminal_time_is_zero() {
        for id in ["ex22", "ex23", "ex31"] {
            let spec = registry::problem(id).unwrap();
            assert_eq!(
                dp_value_oracle(&spec, &[0.4], spec.t_final(), 10, 5).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn constant_cost() {
        let spec = registry::problem("ex31").unwrap();
        let v = dp_value_oracle(&spec, &[0.2], 0.25, 30, 5).unwrap();
        assert!((v - 0.75 * registry::EX31_COST).abs() < 1e-12);
    }

    #[test]
    fn unbounded_domain_is_rejected() {
        let spec = registry::problem("ex32").unwrap();
        assert!(matches!(
            dp_value_oracle(&spec, &[0.0], 0.0, 10, 5),
            Err(Error::Unsupported(_))
        ));
    }
}
