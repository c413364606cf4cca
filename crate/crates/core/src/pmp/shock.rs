//! Shocks between characteristics and value reconstruction along them.

use rayon::prelude::*;
use serde::Serialize;

use super::flow::{Flow, FlowOptions};
use super::shoot::{lenient_flow, MATCH_TOL};
use super::Extremal;
use crate::error::{Error, Result};
use crate::ode::{dist, linspace};
use crate::problems::ProblemSpec;

/// Smallest costate separation that counts as a shock.
pub const SEPARATION_TOL: f64 = 1e-2;
/// Times scanned for shocks while reconstructing values.
const RECONSTRUCT_SCAN: usize = 11;

#[derive(Clone, Debug)]
pub struct ShockOptions {
    pub flow: FlowOptions,
    pub match_tol: f64,
    pub separation: f64,
}

impl Default for ShockOptions {
    fn default() -> Self {
        Self {
            flow: FlowOptions::default(),
            match_tol: MATCH_TOL,
            separation: SEPARATION_TOL,
        }
    }
}

/// Two characteristics meeting in state with distinct costates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShockWitness {
    pub tau: f64,
    /// The canonically smaller of the pair (terminal state, then signature).
    pub extremal_a: Extremal,
    pub extremal_b: Extremal,
    pub state_gap: f64,
    pub costate_gap: f64,
}

pub fn detect_shock(
    spec: &ProblemSpec,
    xi_samples: &[Vec<f64>],
    nt: usize,
    tau_grid: &[f64],
) -> Result<Vec<ShockWitness>> {
    detect_shock_with(spec, xi_samples, nt, tau_grid, &ShockOptions::default())
}

/// Flows every sample (all branches) back to `t0` and reports, for each time
/// in `tau_grid`, every pair whose states agree within `match_tol` while the
/// costates differ by more than `separation`. Sorted by time, latest first.
pub fn detect_shock_with(
    spec: &ProblemSpec,
    xi_samples: &[Vec<f64>],
    nt: usize,
    tau_grid: &[f64],
    options: &ShockOptions,
) -> Result<Vec<ShockWitness>> {
    let flows = flows_for(spec, xi_samples, nt, &options.flow)?;
    let mut branches: Vec<Extremal> = flows.into_iter().flat_map(|f| f.branches).collect();
    sort_canonically(&mut branches);
    Ok(scan(spec, &branches, tau_grid, options))
}

fn flows_for(
    spec: &ProblemSpec,
    xi_samples: &[Vec<f64>],
    nt: usize,
    options: &FlowOptions,
) -> Result<Vec<Flow>> {
    xi_samples
        .par_iter()
        .map(|xi| lenient_flow(spec, xi, spec.t0(), nt, options))
        .collect()
}

fn sort_canonically(branches: &mut [Extremal]) {
    branches.sort_by(|a, b| {
        a.terminal_state
            .iter()
            .zip(&b.terminal_state)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.signature.cmp(&b.signature))
    });
}

fn scan(
    spec: &ProblemSpec,
    branches: &[Extremal],
    tau_grid: &[f64],
    options: &ShockOptions,
) -> Vec<ShockWitness> {
    let mut taus: Vec<f64> = tau_grid
        .iter()
        .map(|t| t.clamp(spec.t0(), spec.t_final()))
        .collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    taus.dedup();
    let mut out = Vec::new();
    for &tau in &taus {
        let at: Vec<(Vec<f64>, Vec<f64>)> =
            branches.iter().map(|b| b.state_costate_at(tau)).collect();
        for i in 0..branches.len() {
            for j in i + 1..branches.len() {
                let state_gap = dist(&at[i].0, &at[j].0);
                if state_gap > options.match_tol {
                    continue;
                }
                let costate_gap = dist(&at[i].1, &at[j].1);
                if costate_gap > options.separation {
                    out.push(ShockWitness {
                        tau,
                        extremal_a: branches[i].clone(),
                        extremal_b: branches[j].clone(),
                        state_gap,
                        costate_gap,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValueSample {
    pub x: Vec<f64>,
    pub tau: f64,
    /// Running cost from `tau` to `T` along the characteristic.
    pub value: f64,
    pub xi: Vec<f64>,
    pub signature: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructedValues {
    pub samples: Vec<ValueSample>,
    /// Shock witnesses found on the same flows over a coarse time scan.
    pub shocks: usize,
    pub warnings: Vec<String>,
}

impl ReconstructedValues {
    /// Largest `|value - reference(x, tau)|` over the samples passing `keep`.
    pub fn max_deviation(
        &self,
        reference: impl Fn(&[f64], f64) -> f64,
        keep: impl Fn(&ValueSample) -> bool,
    ) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| keep(s))
            .map(|s| (s.value - reference(&s.x, s.tau)).abs())
            .fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }
}

/// Tabulates `(x(t), t) -> int_t^T F` along every branch flowed from the
/// samples. All sheets are returned; shocks and branching are reported as
/// warnings since the values may then be multivalued.
pub fn reconstruct_value(
    spec: &ProblemSpec,
    xi_samples: &[Vec<f64>],
    nt: usize,
) -> Result<ReconstructedValues> {
    if xi_samples.is_empty() {
        return Err(Error::Usage("value reconstruction needs terminal states".into()));
    }
    let options = ShockOptions::default();
    let flows = flows_for(spec, xi_samples, nt, &options.flow)?;
    let mut warnings = Vec::new();
    for f in &flows {
        if f.exploded {
            warnings.push(format!(
                "flow from xi = {:?} exceeded the branch cap; only its partial branches are tabulated",
                f.xi
            ));
        } else if f.branches.len() > 1 {
            warnings.push(format!(
                "flow from xi = {:?} branched into {} sheets",
                f.xi,
                f.branches.len()
            ));
        }
    }
    let mut branches: Vec<Extremal> = flows.into_iter().flat_map(|f| f.branches).collect();
    sort_canonically(&mut branches);
    let scan_times = linspace(spec.t0(), spec.t_final(), RECONSTRUCT_SCAN);
    let shocks = scan(spec, &branches, &scan_times, &options).len();
    if shocks > 0 {
        warnings.push(format!(
            "{shocks} shock witness(es) on these flows: values may be multivalued"
        ));
    }
    let samples = branches
        .iter()
        .flat_map(|b| {
            (0..b.times.len()).map(move |i| ValueSample {
                x: b.states[i].clone(),
                tau: b.times[i],
                value: b.cost_to_go[i],
                xi: b.terminal_state.clone(),
                signature: b.signature.clone(),
            })
        })
        .collect();
    Ok(ReconstructedValues {
        samples,
        shocks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry::{problem, reference_value};

    fn xis(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        linspace(lo, hi, n).into_iter().map(|v| vec![v]).collect()
    }

    #[test]
    fn ex31_has_no_shock_and_reconstructs_exactly() {
        let spec = problem("ex31").unwrap();
        let taus = linspace(0.0, 1.0, 11);
        assert!(detect_shock(&spec, &xis(-1.0, 1.0, 21), 100, &taus)
            .unwrap()
            .is_empty());
        let r = reconstruct_value(&spec, &xis(0.0, 1.0, 5), 100).unwrap();
        let dev = r.max_deviation(|_, t| 1.0 - t, |_| true).unwrap();
        assert!(dev < 1e-12);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn single_sample_single_branch_is_empty() {
        let spec = problem("ex22").unwrap();
        let w = detect_shock(&spec, &[vec![1.0]], 100, &[0.0, 0.5]).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn ex22_positive_sheet_matches_the_closed_form() {
        let spec = problem("ex22").unwrap();
        let r = reconstruct_value(&spec, &xis(0.01, 3.0, 30), 2000).unwrap();
        let dev = r
            .max_deviation(
                |x, t| reference_value("ex22", x, t).unwrap(),
                |s| s.x[0] >= 0.0,
            )
            .unwrap();
        assert!(dev < 1e-3, "{dev}");
    }

    #[test]
    fn ex22_zero_terminal_state_gives_zero_value_on_the_dwell() {
        let spec = problem("ex22").unwrap();
        let r = reconstruct_value(&spec, &[vec![0.0]], 100).unwrap();
        assert!(!r.warnings.is_empty());
        let dwell: Vec<&ValueSample> = r
            .samples
            .iter()
            .filter(|s| s.signature.iter().all(|&c| c == 0))
            .collect();
        assert!(!dwell.is_empty());
        assert!(dwell.iter().all(|s| s.value == 0.0));
    }

    #[test]
    fn witnesses_are_invariant_under_sample_permutation() {
        // crossing characteristics: ex23 sheets from both sides of the kink
        let spec = problem("ex23").unwrap();
        let a = xis(-1.0, 1.0, 9);
        let mut b = a.clone();
        b.reverse();
        let taus = linspace(0.0, 1.0, 6);
        let wa = detect_shock(&spec, &a, 100, &taus).unwrap();
        let wb = detect_shock(&spec, &b, 100, &taus).unwrap();
        assert_eq!(wa, wb);
    }
}
