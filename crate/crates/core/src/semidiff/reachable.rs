//! Convex hull of gradients reachable from nearby differentiability points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::polytope::{hull_2d, merge_close};
use super::ScalarField;
use crate::error::{Error, Result};

/// Finite-difference gradients `(phi_x, phi_t)` at `samples` random points
/// within `radius` of `(x, tau)`, clustered and reduced to their convex hull.
/// In joint dimension above two the cluster centers are returned unreduced.
pub fn reachable_gradient_hull(
    field: &ScalarField,
    x: &[f64],
    tau: f64,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = field.dim();
    if x.len() != n {
        return Err(Error::Usage(
            "point dimension does not match the field".into(),
        ));
    }
    if samples < 10 {
        return Err(Error::Usage("at least 10 samples are needed".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Usage("radius must be positive".into()));
    }
    let h = radius * 1e-3;
    let (t0, t1) = field.time_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads = Vec::new();
    for _ in 0..samples {
        let z: Vec<f64> = (0..n)
            .map(|i| {
                (x[i] + radius * rng.gen_range(-1.0..=1.0))
                    .clamp(field.lower()[i] + h, field.upper()[i] - h)
            })
            .collect();
        let t = (tau + radius * rng.gen_range(-1.0..=1.0)).clamp(t0 + h, t1 - h);
        let mut g = Vec::with_capacity(n + 1);
        for i in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            g.push((field.eval(&zp, t) - field.eval(&zm, t)) / (2.0 * h));
        }
        g.push((field.eval(&z, t + h) - field.eval(&z, t - h)) / (2.0 * h));
        if g.iter().all(|v| v.is_finite()) {
            grads.push(g);
        }
    }
    if grads.is_empty() {
        return Err(Error::Estimation("no finite sample gradient".into()));
    }
    let centers = merge_close(&grads, 20.0 * h);
    Ok(if n + 1 == 2 {
        hull_2d(&centers)
    } else {
        centers
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry;

    #[test]
    fn smooth_field_hull_is_small() {
        let f = ScalarField::new(|x, t| x[0] * x[0] + t, vec![-1.0], vec![1.0], 0.0, 1.0).unwrap();
        let hull = reachable_gradient_hull(&f, &[0.3], 0.5, 50, 1e-3, 2).unwrap();
        for g in &hull {
            // Hessian bound 2
            assert!((g[0] - 0.6).abs() <= 10.0 * 1e-3 * 2.0);
            assert!((g[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concave_kink_hull_spans_both_slopes() {
        let f = ScalarField::new(|x, _| -x[0].abs(), vec![-1.0], vec![1.0], 0.0, 1.0).unwrap();
        let hull = reachable_gradient_hull(&f, &[0.0], 0.5, 40, 1e-2, 3).unwrap();
        let lo = hull.iter().map(|g| g[0]).fold(f64::INFINITY, f64::min);
        let hi = hull.iter().map(|g| g[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ex22_kink_gradients() {
        let spec = registry::problem("ex22").unwrap();
        let f = ScalarField::from_reference(&spec, vec![-0.9], vec![2.0]).unwrap();
        let hull = reachable_gradient_hull(&f, &[0.0], 0.5, 60, 1e-3, 4).unwrap();
        let lo = hull.iter().map(|g| g[0]).fold(f64::INFINITY, f64::min);
        let hi = hull.iter().map(|g| g[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 2e-3, "{lo}");
        assert!((hi - (0.5_f64.exp() - 1.0)).abs() < 3e-3, "{hi}");
    }

    #[test]
    fn too_few_samples() {
        let f = ScalarField::new(|x, _| x[0], vec![-1.0], vec![1.0], 0.0, 1.0).unwrap();
        assert!(matches!(
            reachable_gradient_hull(&f, &[0.0], 0.5, 5, 1e-2, 0),
            Err(Error::Usage(_))
        ));
    }
}
