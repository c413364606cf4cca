//! User problems from JSON. Dynamics and cost come from a small catalog of
//! parametric forms; no expression parsing.

use std::path::Path;

use serde::Deserialize;

use super::{ControlDomain, ProblemSpec, QuadraticControlStructure};
use crate::error::{Error, Result};

/// `f = A x + B u + c`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsForm {
    AffineInControl {
        /// `n x n`, one inner vector per row.
        a: Vec<Vec<f64>>,
        /// `n x m`.
        b: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
    },
}

/// `F = x^T Q x + u^T R u + q.x + r.u + w.|x| + constant`, with `|x|` taken
/// componentwise. Missing terms are zero.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostForm {
    Polynomial {
        #[serde(default)]
        state_quadratic: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        control_quadratic: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        state_linear: Option<Vec<f64>>,
        #[serde(default)]
        control_linear: Option<Vec<f64>>,
        #[serde(default)]
        state_abs: Option<Vec<f64>>,
        #[serde(default)]
        constant: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    /// `[t0, T]`.
    pub horizon: [f64; 2],
    pub control_domain: ControlDomain,
    pub dynamics: DynamicsForm,
    pub cost: CostForm,
}

pub fn load_problem_config(path: &Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Usage(format!(
            "cannot read problem config {}: {e}",
            path.display()
        ))
    })?;
    ProblemConfig::from_json(&text)?.into_spec()
}

fn matrix(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Vec<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("`{name}` must be {r} x {c}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("`{name}` has non-finite entries")));
    }
    Ok(flat)
}

fn vector(name: &str, v: Option<&Vec<f64>>, len: usize) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![0.0; len]),
        Some(v) if v.len() == len && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
        Some(_) => Err(Error::Parse(format!(
            "`{name}` must have {len} finite entries"
        ))),
    }
}

fn square(name: &str, m: Option<&Vec<Vec<f64>>>, dim: usize) -> Result<Vec<f64>> {
    match m {
        None => Ok(vec![0.0; dim * dim]),
        Some(rows) => matrix(name, rows, dim, dim),
    }
}

fn quad_form(m: &[f64], v: &[f64]) -> f64 {
    let d = v.len();
    (0..d)
        .map(|i| (0..d).map(|j| v[i] * m[i * d + j] * v[j]).sum::<f64>())
        .sum()
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("problem config: {e}")))
    }

    pub fn into_spec(self) -> Result<ProblemSpec> {
        self.control_domain.validate()?;
        let m = self.control_domain.dim();
        let DynamicsForm::AffineInControl { a, b, c } = &self.dynamics;
        let n = a.len();
        if n == 0 || n > 3 {
            return Err(Error::Parse(format!("state dimension {n} outside 1..=3")));
        }
        let a = matrix("a", a, n, n)?;
        let b = matrix("b", b, n, m)?;
        let c = vector("c", c.as_ref(), n)?;

        let CostForm::Polynomial {
            state_quadratic,
            control_quadratic,
            state_linear,
            control_linear,
            state_abs,
            constant,
        } = &self.cost;
        let q = square("state_quadratic", state_quadratic.as_ref(), n)?;
        let r = square("control_quadratic", control_quadratic.as_ref(), m)?;
        let ql = vector("state_linear", state_linear.as_ref(), n)?;
        let rl = vector("control_linear", control_linear.as_ref(), m)?;
        let wa = vector("state_abs", state_abs.as_ref(), n)?;
        let k = *constant;
        if !k.is_finite() {
            return Err(Error::Parse("cost constant must be finite".into()));
        }

        let structure = if let ControlDomain::EuclideanSpace { .. } = self.control_domain {
            Some(quadratic_structure(&b, &r, &rl, m)?)
        } else {
            None
        };

        let nonneg = quad_nonneg(&q, n)
            && quad_nonneg(&r, m)
            && ql.iter().chain(&rl).all(|v| *v == 0.0)
            && wa.iter().all(|w| *w >= 0.0)
            && k >= 0.0;
        let (a1, b1, c1) = (a.clone(), b.clone(), c.clone());
        let dynamics = move |x: &[f64], u: &[f64], _t: f64, out: &mut [f64]| {
            for i in 0..n {
                let mut s = c1[i];
                for j in 0..n {
                    s += a1[i * n + j] * x[j];
                }
                for j in 0..m {
                    s += b1[i * m + j] * u[j];
                }
                out[i] = s;
            }
        };
        let (q1, r1, ql1, rl1, wa1) = (q.clone(), r.clone(), ql.clone(), rl.clone(), wa.clone());
        let cost = move |x: &[f64], u: &[f64], _t: f64| {
            let lin: f64 = (0..n)
                .map(|i| ql1[i] * x[i] + wa1[i] * x[i].abs())
                .sum::<f64>()
                + (0..m).map(|j| rl1[j] * u[j]).sum::<f64>();
            quad_form(&q1, x) + quad_form(&r1, u) + lin + k
        };
        let jac = move |_x: &[f64], _u: &[f64], _t: f64, out: &mut [f64]| out.copy_from_slice(&a);
        let grad = move |x: &[f64], _u: &[f64], _t: f64, out: &mut [f64]| {
            for i in 0..n {
                let mut s = ql[i];
                for j in 0..n {
                    s += (q[i * n + j] + q[j * n + i]) * x[j];
                }
                if x[i].abs() > super::registry::ABS_DEAD_ZONE {
                    s += wa[i] * x[i].signum();
                }
                out[i] = s;
            }
        };

        let mut spec = ProblemSpec::new(
            self.name,
            n,
            self.control_domain,
            self.horizon[0],
            self.horizon[1],
            dynamics,
            cost,
        )?
        .with_jacobians(jac, grad);
        if let Some(s) = structure {
            spec = spec.with_quadratic_structure(s);
        }
        if nonneg {
            spec = spec.with_nonnegative_cost();
        }
        Ok(spec)
    }
}

/// Diagonal with nonnegative entries; a cheap sufficient test.
fn quad_nonneg(m: &[f64], d: usize) -> bool {
    (0..d).all(|i| {
        (0..d).all(|j| {
            if i == j {
                m[i * d + j] >= 0.0
            } else {
                m[i * d + j] == 0.0
            }
        })
    })
}

fn quadratic_structure(
    b: &[f64],
    r: &[f64],
    rl: &[f64],
    m: usize,
) -> Result<QuadraticControlStructure> {
    if rl.iter().any(|v| *v != 0.0) || !quad_nonneg(r, m) {
        return Err(Error::Unsupported(
            "an unbounded control domain needs a diagonal nonnegative control penalty \
             without linear control terms"
                .into(),
        ));
    }
    let diag: Vec<f64> = (0..m).map(|i| r[i * m + i]).collect();
    let kernel_vector = diag.iter().position(|s| *s == 0.0).map(|k| {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        e
    });
    Ok(QuadraticControlStructure {
        input_matrix: b.to_vec(),
        penalty_diag: diag,
        kernel_vector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX22_LIKE: &str = r#"{
        "name": "linear-abs",
        "horizon": [0.0, 1.0],
        "control_domain": {"kind": "box", "lower": [0.0], "upper": [1.0]},
        "dynamics": {"form": "affine_in_control", "a": [[1.0]], "b": [[1.0]]},
        "cost": {"form": "polynomial", "state_abs": [1.0]}
    }"#;

    #[test]
    fn config_reproduces_registered_problem() {
        let spec = ProblemConfig::from_json(EX22_LIKE)
            .unwrap()
            .into_spec()
            .unwrap();
        let reg = super::super::registry::problem("ex22").unwrap();
        for (x, u) in [(-0.5, 0.2), (1.3, 0.9), (0.0, 0.0)] {
            assert_eq!(
                spec.dynamics(&[x], &[u], 0.3),
                reg.dynamics(&[x], &[u], 0.3)
            );
            assert_eq!(
                spec.running_cost(&[x], &[u], 0.3),
                reg.running_cost(&[x], &[u], 0.3)
            );
        }
        assert!(spec.nonnegative_cost());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = EX22_LIKE.replace("\"name\"", "\"nmae\"");
        assert!(matches!(
            ProblemConfig::from_json(&bad),
            Err(Error::Parse(_))
        ));
        let extra = EX22_LIKE.replace("\"state_abs\"", "\"state_cubic\"");
        assert!(ProblemConfig::from_json(&extra).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let bad = EX22_LIKE.replace("\"b\": [[1.0]]", "\"b\": [[1.0, 2.0]]");
        let cfg = ProblemConfig::from_json(&bad).unwrap();
        assert!(matches!(cfg.into_spec(), Err(Error::Parse(_))));
    }

    #[test]
    fn euclidean_domain_gets_quadratic_structure() {
        let text = r#"{
            "name": "kernel",
            "horizon": [0.0, 1.0],
            "control_domain": {"kind": "euclidean_space", "dim": 2},
            "dynamics": {"form": "affine_in_control", "a": [[-1.0]], "b": [[1.0, 0.0]]},
            "cost": {"form": "polynomial", "control_quadratic": [[1.0, 0.0], [0.0, 0.0]]}
        }"#;
        let spec = ProblemConfig::from_json(text).unwrap().into_spec().unwrap();
        let s = spec.quadratic_structure().unwrap();
        assert_eq!(s.kernel_vector, Some(vec![0.0, 1.0]));
    }

    #[test]
    fn config_derivatives_are_consistent() {
        use rand::SeedableRng;
        let text = r#"{
            "name": "quad2",
            "horizon": [0.0, 2.0],
            "control_domain": {"kind": "box", "lower": [-1.0], "upper": [1.0]},
            "dynamics": {"form": "affine_in_control", "a": [[0.0, 1.0], [-1.0, 0.5]], "b": [[0.0], [1.0]], "c": [0.1, 0.0]},
            "cost": {"form": "polynomial", "state_quadratic": [[1.0, 0.3], [0.0, 2.0]], "state_linear": [0.5, -1.0], "constant": 0.2}
        }"#;
        let spec = ProblemConfig::from_json(text).unwrap().into_spec().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        assert!(spec.derivative_check(50, &mut rng).unwrap() < 1e-6);
    }
}
