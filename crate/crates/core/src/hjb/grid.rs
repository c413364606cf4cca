//! Value samples on a uniform space-time grid.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semidiff::ScalarField;

/// Relative distance to a node under which a query snaps onto it.
const SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    /// Number of nodes, at least 2.
    pub count: usize,
}

impl GridAxis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if !(lower < upper) || count < 2 || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Usage(format!(
                "grid axis needs finite lower < upper and at least 2 nodes, got [{lower}, {upper}] with {count}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            count,
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    /// Node coordinate; the last node is exactly `upper`.
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.upper
        } else {
            self.lower + self.spacing() * i as f64
        }
    }

    /// Cell index and weight of the right node, snapped to nodes and clamped
    /// to the axis.
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.lower) / self.spacing()).clamp(0.0, (self.count - 1) as f64);
        let mut i = (s.floor() as usize).min(self.count - 2);
        let mut w = s - i as f64;
        if w < SNAP {
            w = 0.0;
        } else if w > 1.0 - SNAP {
            i += 1;
            w = 0.0;
        }
        (i, w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeMetadata {
    pub scheme: String,
    pub problem: String,
    /// Largest `alpha_i / 2` per space dimension.
    pub dissipation: Vec<f64>,
    /// `dt * sum_i alpha_i / dx_i`, at most 0.9.
    pub cfl_ratio: f64,
    pub control_mesh: usize,
}

/// Values `v(x, t)` stored time-major (time index outermost), space nodes
/// ordered with the first dimension fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValueFunction {
    pub space_axes: Vec<GridAxis>,
    pub time_axis: GridAxis,
    pub values: Vec<f64>,
    pub metadata: SchemeMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    space_axes: Vec<GridAxis>,
    time_axis: GridAxis,
    metadata: SchemeMetadata,
}

impl GridValueFunction {
    pub fn new(
        space_axes: Vec<GridAxis>,
        time_axis: GridAxis,
        values: Vec<f64>,
        metadata: SchemeMetadata,
    ) -> Result<Self> {
        let g = Self {
            space_axes,
            time_axis,
            values,
            metadata,
        };
        if g.space_axes.is_empty() || g.values.len() != g.space_nodes() * g.time_axis.count {
            return Err(Error::Parse(format!(
                "grid holds {} values, axes need {}",
                g.values.len(),
                g.space_nodes() * g.time_axis.count
            )));
        }
        if let Some(v) = g.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("grid value {v} is not finite")));
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.space_axes.len()
    }

    pub fn space_nodes(&self) -> usize {
        self.space_axes.iter().map(|a| a.count).product()
    }

    /// Coordinates of the flat space index `j`.
    pub fn space_point(&self, j: usize) -> Vec<f64> {
        let mut rest = j;
        self.space_axes
            .iter()
            .map(|a| {
                let i = rest % a.count;
                rest /= a.count;
                a.node(i)
            })
            .collect()
    }

    /// Per-dimension indices of the flat space index `j`.
    pub fn space_multi_index(&self, j: usize) -> Vec<usize> {
        let mut rest = j;
        self.space_axes
            .iter()
            .map(|a| {
                let i = rest % a.count;
                rest /= a.count;
                i
            })
            .collect()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.space_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn value_at_node(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.space_nodes() + j]
    }

    /// Multilinear interpolation in space and time. Queries outside the grid
    /// are clamped onto it; queries at nodes return the stored value exactly.
    pub fn interpolate(&self, x: &[f64], t: f64) -> f64 {
        let (k, wt) = self.time_axis.locate(t);
        let located: Vec<(usize, f64)> = self
            .space_axes
            .iter()
            .zip(x)
            .map(|(a, v)| a.locate(*v))
            .collect();
        let mut total = 0.0;
        for (dk, tw) in [(0, 1.0 - wt), (1, wt)] {
            if tw == 0.0 {
                continue;
            }
            total += tw * self.interpolate_slice(k + dk, &located);
        }
        total
    }

    fn interpolate_slice(&self, k: usize, located: &[(usize, f64)]) -> f64 {
        let n = self.dim();
        let base = k * self.space_nodes();
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut j = 0;
            let mut stride = 1;
            for (d, &(i, w)) in located.iter().enumerate() {
                let up = corner >> d & 1 == 1;
                let wd = if up { w } else { 1.0 - w };
                if wd == 0.0 {
                    weight = 0.0;
                    break;
                }
                weight *= wd;
                j += (i + up as usize) * stride;
                stride *= self.space_axes[d].count;
            }
            if weight != 0.0 {
                total += weight * self.values[base + j];
            }
        }
        total
    }

    /// The interpolant as a field over the grid's box and time range.
    pub fn to_field(&self) -> Result<ScalarField> {
        let grid = Arc::new(self.clone());
        ScalarField::new(
            move |x, t| grid.interpolate(x, t),
            self.space_axes.iter().map(|a| a.lower).collect(),
            self.space_axes.iter().map(|a| a.upper).collect(),
            self.time_axis.lower,
            self.time_axis.upper,
        )
    }

    /// Path of the JSON header that accompanies a CSV file.
    pub fn header_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes `path` (CSV: coordinates, time, value) and its JSON header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = Header {
            space_axes: self.space_axes.clone(),
            time_axis: self.time_axis.clone(),
            metadata: self.metadata.clone(),
        };
        fs::write(
            Self::header_path(path),
            serde_json::to_string_pretty(&header)? + "\n",
        )?;
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let names: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},t,value", names.join(","))?;
        let n = self.space_nodes();
        let points: Vec<Vec<f64>> = (0..n).map(|j| self.space_point(j)).collect();
        for k in 0..self.time_axis.count {
            let t = self.time_axis.node(k);
            for (j, p) in points.iter().enumerate() {
                for c in p {
                    write!(out, "{c:.16e},")?;
                }
                writeln!(out, "{t:.16e},{:.16e}", self.values[k * n + j])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&fs::read_to_string(Self::header_path(path))?)?;
        let n: usize = header.space_axes.iter().map(|a| a.count).product();
        let dim = header.space_axes.len();
        let mut reader = csv::Reader::from_path(path)?;
        let mut values = Vec::with_capacity(n * header.time_axis.count);
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != dim + 2 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    record.len(),
                    dim + 2
                )));
            }
            let v: f64 = record[dim + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            values.push(v);
        }
        Self::new(header.space_axes, header.time_axis, values, header.metadata)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridValueFunction {
        let axes = vec![
            GridAxis::new(-1.0, 2.0, 7).unwrap(),
            GridAxis::new(0.0, 1.0, 5).unwrap(),
        ];
        let time = GridAxis::new(0.0, 1.0, 4).unwrap();
        let mut values = Vec::new();
        for k in 0..4 {
            for j in 0..35 {
                values.push(((k * 35 + j) as f64 * 0.731).sin() / 3.0);
            }
        }
        let meta = SchemeMetadata {
            scheme: "test".into(),
            problem: "none".into(),
            dissipation: vec![0.5, 0.25],
            cfl_ratio: 0.9,
            control_mesh: 3,
        };
        GridValueFunction::new(axes, time, values, meta).unwrap()
    }

    #[test]
    fn nodes_interpolate_exactly() {
        let g = sample();
        for k in 0..g.time_axis.count {
            for j in 0..g.space_nodes() {
                let x = g.space_point(j);
                assert_eq!(
                    g.interpolate(&x, g.time_axis.node(k)),
                    g.value_at_node(k, j)
                );
            }
        }
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let axes = vec![GridAxis::new(0.0, 1.0, 3).unwrap()];
        let time = GridAxis::new(0.0, 1.0, 2).unwrap();
        let meta = sample().metadata;
        let g =
            GridValueFunction::new(axes, time, vec![0.0, 1.0, 4.0, 0.0, 0.0, 0.0], meta).unwrap();
        assert!((g.interpolate(&[0.25], 0.0) - 0.5).abs() < 1e-15);
        assert!((g.interpolate(&[0.75], 0.5) - 1.25).abs() < 1e-15);
        // clamped outside
        assert_eq!(g.interpolate(&[5.0], 0.0), 4.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        g.write_csv(&path).unwrap();
        let back = GridValueFunction::read_csv(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn wrong_value_count_is_rejected() {
        let g = sample();
        let r = GridValueFunction::new(
            g.space_axes.clone(),
            g.time_axis.clone(),
            vec![0.0; 3],
            g.metadata.clone(),
        );
        assert!(matches!(r, Err(Error::Parse(_))));
    }
}
