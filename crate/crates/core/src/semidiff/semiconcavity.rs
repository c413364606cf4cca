//! Empirical semiconcavity test.
//!
//! For a pair `xi, eta` at gap `D` and weight `lambda` the defect is
//! `lambda phi(xi) + (1 - lambda) phi(eta) - phi(lambda xi + (1 - lambda) eta)`.
//! Semiconcavity asks that `defect / (lambda (1 - lambda) D)` is bounded by a
//! modulus vanishing with `D`. Gaps are halved level by level and half of each
//! level's pairs are placed along the worst pair of the previous level, so a
//! convex kink, once hit, keeps being hit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ScalarField;
use crate::error::{Error, Result};
use crate::ode::norm;
use crate::problems::registry::Bounds;

const LEVELS: usize = 8;
/// Normalized defects below this count as zero.
pub const SEMICONCAVITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusSample {
    /// Largest norm among the points of the level's worst pair.
    pub radius: f64,
    pub gap: f64,
    /// Largest raw defect at this gap (the modulus taken as zero).
    pub worst_violation: f64,
    /// Largest normalized defect `defect / (lambda (1 - lambda) D)`.
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairWitness {
    /// Joint points `(x, t)`.
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: f64,
    pub defect: f64,
    pub ratio: f64,
}

impl PairWitness {
    /// Whether the segment crosses the hyperplane `x_coord = value`.
    pub fn straddles(&self, coord: usize, value: f64) -> bool {
        (self.xi[coord] - value) * (self.eta[coord] - value) <= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusEstimate {
    pub samples: Vec<ModulusSample>,
    pub is_semiconcave_verdict: bool,
    pub tolerance: f64,
    /// Worst pair at the finest gap.
    pub witness: Option<PairWitness>,
}

struct Pair {
    xi: Vec<f64>,
    eta: Vec<f64>,
    lambda: f64,
}

/// Tests semiconcavity of `field` jointly in `(x, t)` over `region`
/// (an `n + 1` dimensional box whose last coordinate is time).
pub fn test_semiconcavity(
    field: &ScalarField,
    region: &Bounds,
    pair_samples: usize,
    lambdas: &[f64],
    seed: u64,
) -> Result<ModulusEstimate> {
    let n = field.dim();
    let d = n + 1;
    if region.lower.len() != d || region.upper.len() != d {
        return Err(Error::Usage(format!(
            "region must be {d}-dimensional (state and time)"
        )));
    }
    let sides: Vec<f64> = region
        .lower
        .iter()
        .zip(&region.upper)
        .map(|(l, u)| u - l)
        .collect();
    if sides.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Usage("region has zero volume".into()));
    }
    let (t0, t1) = field.time_range();
    let inside_field = (0..n)
        .all(|i| region.lower[i] >= field.lower()[i] && region.upper[i] <= field.upper()[i])
        && region.lower[n] >= t0
        && region.upper[n] <= t1;
    if !inside_field {
        return Err(Error::Domain("region leaves the field's domain".into()));
    }
    if pair_samples < 100 {
        return Err(Error::Usage("at least 100 pair samples are needed".into()));
    }
    let lambdas: Vec<f64> = lambdas
        .iter()
        .copied()
        .filter(|l| *l > 0.0 && *l < 1.0)
        .collect();
    if lambdas.is_empty() {
        return Err(Error::Usage(
            "need at least one lambda strictly between 0 and 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_level = pair_samples.div_ceil(LEVELS);
    let gap0 = 0.25 * sides.iter().copied().fold(f64::INFINITY, f64::min);
    let inside = |p: &[f64]| {
        p.iter()
            .zip(region.lower.iter().zip(&region.upper))
            .all(|(v, (l, u))| v >= l && v <= u)
    };

    let mut samples = Vec::with_capacity(LEVELS);
    let mut previous: Option<PairWitness> = None;
    let mut first_ratio = 0.0;
    for level in 0..LEVELS {
        let gap = gap0 / f64::powi(2.0, level as i32);
        let mut pairs = Vec::with_capacity(per_level);
        for i in 0..per_level {
            let lambda = lambdas[rng.gen_range(0..lambdas.len())];
            let zoom = previous.as_ref().filter(|_| i % 2 == 1);
            let mut pair = None;
            for _ in 0..32 {
                let (center, dir) = match zoom {
                    Some(w) => {
                        let s: f64 = rng.gen();
                        let center: Vec<f64> =
                            w.xi.iter()
                                .zip(&w.eta)
                                .map(|(a, b)| a + s * (b - a))
                                .collect();
                        let diff: Vec<f64> = w.eta.iter().zip(&w.xi).map(|(a, b)| a - b).collect();
                        let len = norm(&diff);
                        (
                            center,
                            diff.into_iter().map(|v| v / len).collect::<Vec<_>>(),
                        )
                    }
                    None => {
                        let center: Vec<f64> = (0..d)
                            .map(|k| rng.gen_range(region.lower[k]..=region.upper[k]))
                            .collect();
                        (center, random_unit(&mut rng, d))
                    }
                };
                let xi: Vec<f64> = center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c - (1.0 - lambda) * gap * v)
                    .collect();
                let eta: Vec<f64> = center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + lambda * gap * v)
                    .collect();
                if inside(&xi) && inside(&eta) {
                    pair = Some(Pair { xi, eta, lambda });
                    break;
                }
            }
            if let Some(p) = pair {
                pairs.push(p);
            }
        }
        if pairs.is_empty() {
            return Err(Error::Estimation(format!(
                "no admissible pairs at gap {gap:e}"
            )));
        }

        let defects: Vec<f64> = pairs
            .par_iter()
            .map(|p| {
                let mid: Vec<f64> =
                    p.xi.iter()
                        .zip(&p.eta)
                        .map(|(a, b)| p.lambda * a + (1.0 - p.lambda) * b)
                        .collect();
                let e = |z: &[f64]| field.eval_checked(&z[..n], z[n]);
                Ok(p.lambda * e(&p.xi)? + (1.0 - p.lambda) * e(&p.eta)? - e(&mid)?)
            })
            .collect::<Result<_>>()?;

        let mut best: Option<PairWitness> = None;
        let mut worst_violation = f64::NEG_INFINITY;
        for (p, &defect) in pairs.iter().zip(&defects) {
            worst_violation = worst_violation.max(defect);
            let ratio = defect / (p.lambda * (1.0 - p.lambda) * gap);
            if best.as_ref().is_none_or(|b| ratio > b.ratio) {
                best = Some(PairWitness {
                    xi: p.xi.clone(),
                    eta: p.eta.clone(),
                    lambda: p.lambda,
                    defect,
                    ratio,
                });
            }
        }
        let best = best.unwrap();
        if level == 0 {
            first_ratio = best.ratio;
        }
        samples.push(ModulusSample {
            radius: norm(&best.xi).max(norm(&best.eta)),
            gap,
            worst_violation,
            worst_ratio: best.ratio,
        });
        previous = Some(best);
    }

    let fine = samples.last().unwrap();
    let decay = (fine.gap / samples[0].gap).sqrt();
    let verdict = fine.worst_ratio <= SEMICONCAVITY_TOL || fine.worst_ratio <= first_ratio * decay;
    Ok(ModulusEstimate {
        samples,
        is_semiconcave_verdict: verdict,
        tolerance: SEMICONCAVITY_TOL,
        witness: previous,
    })
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let l = norm(&v);
        if l > 0.1 && l <= 1.0 {
            return v.into_iter().map(|c| c / l).collect();
        }
    }
}
