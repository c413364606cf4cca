//! Small dense polytopes `{g : a_k . g >= b_k}` in dimension at most four.
//! Vertices by brute-force enumeration of active sets, which is plenty for the
//! few dozen constraints produced by direction sampling.

use crate::ode::{dist, dot, solve_dense};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HalfSpaces {
    pub dim: usize,
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl HalfSpaces {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            normals: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn push(&mut self, normal: Vec<f64>, offset: f64) {
        debug_assert_eq!(normal.len(), self.dim);
        self.normals.push(normal);
        self.offsets.push(offset);
    }

    /// Adds `|g_i| <= bound` for every coordinate.
    pub fn push_box(&mut self, bound: f64) {
        for i in 0..self.dim {
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; self.dim];
                a[i] = s;
                self.push(a, -bound);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Largest shortfall `b_k - a_k . g` over all constraints (<= 0 inside).
    pub fn violation(&self, g: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| b - dot(a, g))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, g: &[f64], slack: f64) -> bool {
        self.violation(g) <= slack
    }

    /// All vertices, feasible up to `margin * (1 + |b_k|)`, deduplicated.
    pub fn vertices(&self, margin: f64) -> Vec<Vec<f64>> {
        let d = self.dim;
        let m = self.len();
        let mut out: Vec<Vec<f64>> = Vec::new();
        if m < d {
            return out;
        }
        let mut idx: Vec<usize> = (0..d).collect();
        let mut mat = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        loop {
            for (r, &k) in idx.iter().enumerate() {
                mat[r * d..(r + 1) * d].copy_from_slice(&self.normals[k]);
                rhs[r] = self.offsets[k];
            }
            if let Some(g) = solve_dense(&mat, &rhs, 1e-12) {
                let feasible = self
                    .normals
                    .iter()
                    .zip(&self.offsets)
                    .all(|(a, b)| dot(a, &g) >= b - margin * (1.0 + b.abs()));
                if feasible
                    && !out
                        .iter()
                        .any(|v| dist(v, &g) <= 1e-12 * (1.0 + crate::ode::norm(&g)))
                {
                    out.push(g);
                }
            }
            // next combination in lexicographic order
            let mut i = d;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] < m - d + i {
                    idx[i] += 1;
                    for j in i + 1..d {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
}

/// Greedy clustering in input order; each cluster is replaced by its mean.
pub fn merge_close(points: &[Vec<f64>], radius: f64) -> Vec<Vec<f64>> {
    let mut clusters: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
    for p in points {
        match clusters
            .iter_mut()
            .find(|(seed, _, _)| dist(seed, p) <= radius)
        {
            Some((_, sum, count)) => {
                for (s, v) in sum.iter_mut().zip(p) {
                    *s += v;
                }
                *count += 1;
            }
            None => clusters.push((p.clone(), p.clone(), 1)),
        }
    }
    clusters
        .into_iter()
        .map(|(_, sum, count)| sum.into_iter().map(|s| s / count as f64).collect())
        .collect()
}

/// Convex hull vertices of planar points, counter-clockwise from the
/// lowest-leftmost point. Collinear points are dropped.
pub fn hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts.into_iter().map(|p| p.to_vec()).collect();
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull.into_iter().map(|p| p.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_vertices() {
        let mut hs = HalfSpaces::new(2);
        hs.push_box(1.0);
        let mut v = hs.vertices(1e-9);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], vec![-1.0, -1.0]);
        assert_eq!(v[3], vec![1.0, 1.0]);
    }

    #[test]
    fn infeasible_interval_has_no_vertices() {
        let mut hs = HalfSpaces::new(1);
        hs.push(vec![1.0], 0.6);
        hs.push(vec![-1.0], 0.0); // g <= 0
        assert!(hs.vertices(1e-9).is_empty());
    }

    #[test]
    fn touching_constraints_count_as_feasible() {
        let mut hs = HalfSpaces::new(1);
        hs.push(vec![1.0], 0.5);
        hs.push(vec![-1.0], -0.5);
        assert_eq!(hs.vertices(1e-9), vec![vec![0.5]]);
    }

    #[test]
    fn merging_averages_clusters() {
        let pts = vec![vec![0.0], vec![0.002], vec![1.0]];
        let merged = merge_close(&pts, 0.01);
        assert_eq!(merged.len(), 2);
        assert!((merged[0][0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![0.5, 0.0],
        ];
        assert_eq!(hull_2d(&pts).len(), 4);
    }
}
