//! A falsification probe for uniqueness and continuity of the backward flow.
//! A pass only means nothing suspicious was seen at the sampled resolution.

use rayon::prelude::*;
use serde::Serialize;

use super::flow::{flow_from, Flow, FlowOptions};
use super::Extremal;
use crate::error::{Error, Result};
use crate::hamiltonian::Maximizer;
use crate::problems::ProblemSpec;

/// Every completeness report carries this label.
pub const PROBE_LABEL: &str = "probe";
/// Divergences below this are treated as integration noise.
const NOISE_FLOOR: f64 = 1e-8;
/// A control held one step too long moves the flow by about one step's worth
/// of motion; divergences within this many steps are below the time
/// resolution and never flagged.
const RESOLUTION_STEPS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub xi: Vec<f64>,
    pub branches: usize,
    pub branch_points: usize,
    /// Divergence per unit perturbation at `delta`, `delta / 2`, `delta / 4`,
    /// worst over anchors.
    pub uniqueness_ratios: [f64; 3],
    /// Distance to flows from `xi + delta / 2^k`.
    pub continuity_distances: [f64; 3],
    pub uniqueness_ok: bool,
    pub continuity_ok: bool,
    pub flagged: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletenessProbe {
    pub label: String,
    pub perturbation: f64,
    pub entries: Vec<ProbeEntry>,
}

impl CompletenessProbe {
    pub fn flagged(&self) -> usize {
        self.entries.iter().filter(|e| e.flagged).count()
    }
}

/// For each terminal state: (i) perturbs `(x, p)` by `delta` at the terminal
/// point and at an interior point of every branch, re-flows, and flags when
/// the divergence of costate and maximized Hamiltonian does not shrink in
/// proportion to the perturbation; (ii) flows from `xi + delta / 2^k` and
/// flags when those flows do not approach the original ones.
///
/// States are not compared: where the Hamiltonian is flat in `u` they depend
/// on the selected control rather than on the data.
pub fn probe_completeness(
    spec: &ProblemSpec,
    xi_samples: &[Vec<f64>],
    perturbation: f64,
    nt: usize,
) -> Result<CompletenessProbe> {
    if !(perturbation > 0.0 && perturbation.is_finite()) {
        return Err(Error::Usage(format!(
            "perturbation must be positive, got {perturbation}"
        )));
    }
    let entries = xi_samples
        .par_iter()
        .map(|xi| probe_one(spec, xi, perturbation, nt))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompletenessProbe {
        label: PROBE_LABEL.into(),
        perturbation,
        entries,
    })
}

fn lenient(result: Result<Flow>) -> Result<Flow> {
    match result {
        Err(Error::BranchExplosion { partial, .. }) => Ok(*partial),
        other => other,
    }
}

fn probe_one(spec: &ProblemSpec, xi: &[f64], delta: f64, nt: usize) -> Result<ProbeEntry> {
    let opts = FlowOptions::default();
    let (t0, t_final) = (spec.t0(), spec.t_final());
    let n = xi.len();
    let zero = vec![0.0; n];
    let base = lenient(flow_from(spec, xi, &zero, t_final, t0, nt, &opts))?;
    let maximizer = Maximizer::new(spec, None)?;
    let profile = |e: &Extremal| -> Result<Vec<(Vec<f64>, f64)>> {
        e.times
            .iter()
            .zip(&e.states)
            .zip(&e.costates)
            .map(|((t, x), p)| Ok((p.clone(), maximizer.value(x, p, *t)?)))
            .collect()
    };
    let base_profiles: Vec<Vec<(Vec<f64>, f64)>> =
        base.branches.iter().map(&profile).collect::<Result<_>>()?;
    let scales = [delta, delta / 2.0, delta / 4.0];

    // (i) uniqueness: anchors at T and at the middle sample of each branch
    let mut ratios = [0.0_f64; 3];
    for (b, prof) in base.branches.iter().zip(&base_profiles) {
        let mid = b.times.len() / 2;
        for anchor in [b.times.len() - 1, mid] {
            if anchor == 0 {
                continue;
            }
            for (k, &d) in scales.iter().enumerate() {
                let x: Vec<f64> = b.states[anchor].iter().map(|v| v + d).collect();
                let p: Vec<f64> = b.costates[anchor].iter().map(|v| v + d).collect();
                let flow = lenient(flow_from(spec, &x, &p, b.times[anchor], t0, anchor, &opts))?;
                // the perturbed branch closest to this one
                let mut best = f64::INFINITY;
                for e in &flow.branches {
                    best = best.min(divergence(&profile(e)?, &prof[..=anchor]));
                }
                ratios[k] = ratios[k].max(best / d);
            }
        }
    }
    let step_motion = base
        .branches
        .iter()
        .flat_map(|b| {
            (1..b.times.len()).map(move |i| {
                let dx = b.states[i]
                    .iter()
                    .zip(&b.states[i - 1])
                    .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
                let dp = b.costates[i]
                    .iter()
                    .zip(&b.costates[i - 1])
                    .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
                b.times[i] - b.times[i - 1] + dx + dp
            })
        })
        .fold(0.0_f64, f64::max);
    let floor = NOISE_FLOOR.max(RESOLUTION_STEPS * step_motion);
    let uniqueness_ok = !(ratios[2] * delta / 4.0 > floor && ratios[2] > 2.0 * ratios[0]);

    // (ii) continuity: flows from converging terminal states
    let mut distances = [0.0_f64; 3];
    for (k, &d) in scales.iter().enumerate() {
        let xk: Vec<f64> = xi.iter().map(|v| v + d).collect();
        let flow = lenient(flow_from(spec, &xk, &zero, t_final, t0, nt, &opts))?;
        for e in &flow.branches {
            let pe = profile(e)?;
            let nearest = base_profiles
                .iter()
                .map(|bp| divergence(&pe, bp))
                .fold(f64::INFINITY, f64::min);
            distances[k] = distances[k].max(nearest);
        }
    }
    let continuity_ok = distances[2] <= NOISE_FLOOR.max(0.5 * distances[0]);

    let branch_points = base.branch_times().len();
    let flagged = !(uniqueness_ok && continuity_ok) || branch_points > 0;
    let mut detail = Vec::new();
    if branch_points > 0 {
        detail.push(format!(
            "flow branches at {branch_points} time(s), first at t = {}",
            base.branch_times()[0]
        ));
    }
    if !uniqueness_ok {
        detail.push(format!(
            "divergence per unit perturbation grows from {:.3e} to {:.3e}",
            ratios[0], ratios[2]
        ));
    }
    if !continuity_ok {
        detail.push(format!(
            "flows from nearby terminal states stay {:.3e} away",
            distances[2]
        ));
    }
    if base.exploded {
        detail.push("branch cap exceeded".into());
    }
    Ok(ProbeEntry {
        xi: xi.to_vec(),
        branches: base.branches.len(),
        branch_points,
        uniqueness_ratios: ratios,
        continuity_distances: distances,
        uniqueness_ok,
        continuity_ok,
        flagged,
        detail: if detail.is_empty() {
            "no divergence beyond Lipschitz growth".into()
        } else {
            detail.join("; ")
        },
    })
}

/// Max over shared samples of `|p_a - p_b|_inf + |H_a - H_b|`.
fn divergence(a: &[(Vec<f64>, f64)], b: &[(Vec<f64>, f64)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|((pa, ha), (pb, hb))| {
            pa.iter()
                .zip(pb)
                .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()))
                + (ha - hb).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry::problem;

    #[test]
    fn ex31_passes() {
        let spec = problem("ex31").unwrap();
        let r = probe_completeness(&spec, &[vec![-0.5], vec![0.0], vec![0.8]], 1e-3, 100).unwrap();
        assert_eq!(r.label, "probe");
        assert_eq!(r.flagged(), 0, "{:?}", r.entries);
    }

    #[test]
    fn ex22_passes_away_from_the_origin() {
        let spec = problem("ex22").unwrap();
        let r = probe_completeness(&spec, &[vec![0.5], vec![2.0], vec![-0.5]], 1e-3, 200).unwrap();
        assert_eq!(r.flagged(), 0, "{:?}", r.entries);
    }

    #[test]
    fn ex23_is_flagged_at_the_kink_only() {
        let spec = problem("ex23").unwrap();
        let r = probe_completeness(&spec, &[vec![0.0], vec![0.7]], 1e-3, 200).unwrap();
        assert!(r.entries[0].flagged, "{:?}", r.entries[0]);
        assert!(!r.entries[1].flagged, "{:?}", r.entries[1]);
    }

    #[test]
    fn nonpositive_perturbation_is_rejected() {
        let spec = problem("ex31").unwrap();
        assert!(probe_completeness(&spec, &[vec![0.0]], 0.0, 10).is_err());
    }
}
