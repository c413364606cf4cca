//! Numerical nonsmooth analysis of scalar fields `phi(x, t)`.
//!
//! Super- and subdifferentials are estimated by sampling difference quotients
//! along a fixed set of directions at a schedule of shrinking radii. At the
//! finest radius the defining limsup/liminf inequality becomes a finite family
//! of linear constraints on the generalized gradient; the estimate is the
//! polytope they cut out, inflated by a slack proportional to the local
//! Lipschitz constant.

pub mod polytope;
mod reachable;
mod semiconcavity;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{ProblemSpec, ValueFn};
use polytope::{merge_close, HalfSpaces};

pub use reachable::reachable_gradient_hull;
pub use semiconcavity::{test_semiconcavity, ModulusEstimate, ModulusSample, PairWitness};

/// Relative slack of the feasibility problems.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_RADII: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_DIRECTIONS: usize = 16;
/// Margin used when testing vertex feasibility.
pub const FEASIBILITY_MARGIN: f64 = 1e-9;
/// Generalized gradients are searched inside `|g_i| <= BOX_FACTOR * max(1, L)`.
const BOX_FACTOR: f64 = 100.0;

/// A continuous function on `box x [t0, t1]`.
#[derive(Clone)]
pub struct ScalarField {
    eval: ValueFn,
    lower: Vec<f64>,
    upper: Vec<f64>,
    t0: f64,
    t1: f64,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .finish_non_exhaustive()
    }
}

impl ScalarField {
    pub fn new<F>(eval: F, lower: Vec<f64>, upper: Vec<f64>, t0: f64, t1: f64) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_arc(Arc::new(eval), lower, upper, t0, t1)
    }

    pub fn from_arc(
        eval: ValueFn,
        lower: Vec<f64>,
        upper: Vec<f64>,
        t0: f64,
        t1: f64,
    ) -> Result<Self> {
        if lower.is_empty()
            || lower.len() != upper.len()
            || lower.iter().zip(&upper).any(|(l, u)| !(l < u))
        {
            return Err(Error::Usage(
                "field box needs lower < upper in every dimension".into(),
            ));
        }
        if !(t0 < t1) {
            return Err(Error::Usage("field time range needs t0 < t1".into()));
        }
        Ok(Self {
            eval,
            lower,
            upper,
            t0,
            t1,
        })
    }

    /// The closed-form value of `spec` over the given state box and its horizon.
    pub fn from_reference(spec: &ProblemSpec, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let eval = spec.reference_value_fn().ok_or_else(|| {
            Error::Usage(format!(
                "problem `{}` has no closed-form value",
                spec.name()
            ))
        })?;
        Self::from_arc(eval, lower, upper, spec.t0(), spec.t_final())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn time_range(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    pub(crate) fn eval_checked(&self, x: &[f64], t: f64) -> Result<f64> {
        let v = (self.eval)(x, t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Estimation(format!(
                "field is not finite at x = {x:?}, t = {t}"
            )))
        }
    }

    /// `c * phi`.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            eval: Arc::new(move |x, t| c * inner(x, t)),
            ..self.clone()
        }
    }
}

/// Which time directions a joint or time estimate may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Interior,
    /// `t` decreases to `tau` from above only.
    Right,
    /// `t` increases to `tau` from below only.
    Left,
}

impl Side {
    fn allows(self, dt: f64) -> bool {
        match self {
            Side::Interior => true,
            Side::Right => dt >= 0.0,
            Side::Left => dt <= 0.0,
        }
    }

    /// The side to use at `tau` on `[t0, t1]`.
    pub fn for_time(tau: f64, t0: f64, t1: f64) -> Side {
        if tau <= t0 {
            Side::Right
        } else if tau >= t1 {
            Side::Left
        } else {
            Side::Interior
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "side", rename_all = "snake_case")]
pub enum SemidiffKind {
    SuperX,
    SubX,
    SuperT(Side),
    SuperXt(Side),
    SubXt(Side),
}

impl SemidiffKind {
    fn is_super(self) -> bool {
        matches!(
            self,
            SemidiffKind::SuperX | SemidiffKind::SuperT(_) | SemidiffKind::SuperXt(_)
        )
    }

    fn side(self) -> Option<Side> {
        match self {
            SemidiffKind::SuperT(s) | SemidiffKind::SuperXt(s) | SemidiffKind::SubXt(s) => Some(s),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        let side = |s: Side| match s {
            Side::Interior => "",
            Side::Right => "_right",
            Side::Left => "_left",
        };
        match self {
            SemidiffKind::SuperX => "super_x".into(),
            SemidiffKind::SubX => "sub_x".into(),
            SemidiffKind::SuperT(s) => format!("super_t{}", side(s)),
            SemidiffKind::SuperXt(s) => format!("super_xt{}", side(s)),
            SemidiffKind::SubXt(s) => format!("sub_xt{}", side(s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetVerdict {
    Empty,
    NonEmpty,
}

/// Sampling parameters of an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemidiffOptions {
    /// Strictly decreasing positive radii; the last one decides.
    pub radii: Vec<f64>,
    pub directions: usize,
    /// Relative slack; the absolute slack is `tolerance * max(1, L)`.
    pub tolerance: f64,
}

impl Default for SemidiffOptions {
    fn default() -> Self {
        Self {
            radii: DEFAULT_RADII.to_vec(),
            directions: DEFAULT_DIRECTIONS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SemidiffEstimate {
    pub kind: SemidiffKind,
    pub verdict: SetVerdict,
    pub hull_vertices: Vec<Vec<f64>>,
    pub radius_schedule: Vec<f64>,
    /// Absolute slack used in the constraints.
    pub tolerance: f64,
    /// Largest difference quotient seen over all radii.
    pub lipschitz: f64,
    /// Search box half-width. Coordinates at the box mean the set is
    /// unbounded in that direction.
    pub bound: f64,
    pub unbounded: bool,
    pub notes: Vec<String>,
    #[serde(skip)]
    constraints: HalfSpaces,
}

impl SemidiffEstimate {
    pub fn is_empty(&self) -> bool {
        self.verdict == SetVerdict::Empty
    }

    /// Whether `g` satisfies every sampled constraint up to `slack`.
    pub fn contains(&self, g: &[f64], slack: f64) -> bool {
        !self.is_empty() && self.constraints.contains(g, slack)
    }

    /// Constraint shortfall at `g` (<= 0 inside).
    pub fn violation(&self, g: &[f64]) -> f64 {
        self.constraints.violation(g)
    }

    /// `[min, max]` of a coordinate over the vertices, with coordinates at the
    /// search box replaced by infinities.
    pub fn interval(&self, coord: usize) -> Option<(f64, f64)> {
        if self.is_empty() {
            return None;
        }
        let vals = self.hull_vertices.iter().map(|v| v[coord]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        let edge = self.bound * (1.0 - 1e-9);
        Some((
            if lo <= -edge { f64::NEG_INFINITY } else { lo },
            if hi >= edge { f64::INFINITY } else { hi },
        ))
    }
}

pub fn estimate_superdifferential_x(
    field: &ScalarField,
    x: &[f64],
    tau: f64,
    radii: &[f64],
    directions: usize,
) -> Result<SemidiffEstimate> {
    estimate(
        field,
        SemidiffKind::SuperX,
        x,
        tau,
        &options(radii, directions),
    )
}

pub fn estimate_subdifferential_x(
    field: &ScalarField,
    x: &[f64],
    tau: f64,
    radii: &[f64],
    directions: usize,
) -> Result<SemidiffEstimate> {
    estimate(
        field,
        SemidiffKind::SubX,
        x,
        tau,
        &options(radii, directions),
    )
}

pub fn estimate_superdifferential_xt(
    field: &ScalarField,
    x: &[f64],
    tau: f64,
    radii: &[f64],
    directions: usize,
    side: Side,
) -> Result<SemidiffEstimate> {
    estimate(
        field,
        SemidiffKind::SuperXt(side),
        x,
        tau,
        &options(radii, directions),
    )
}

fn options(radii: &[f64], directions: usize) -> SemidiffOptions {
    SemidiffOptions {
        radii: radii.to_vec(),
        directions,
        tolerance: DEFAULT_TOLERANCE,
    }
}

/// Estimates the set of the given kind at `(x, tau)`.
pub fn estimate(
    field: &ScalarField,
    kind: SemidiffKind,
    x: &[f64],
    tau: f64,
    opts: &SemidiffOptions,
) -> Result<SemidiffEstimate> {
    let n = field.dim();
    if x.len() != n {
        return Err(Error::Usage(format!(
            "point has dimension {}, field has {n}",
            x.len()
        )));
    }
    validate_radii(&opts.radii)?;
    if !(opts.tolerance > 0.0) {
        return Err(Error::Usage("tolerance must be positive".into()));
    }
    let r_max = opts.radii[0];
    let dirs = directions_for(kind, n, opts.directions)?;
    check_room(field, kind, x, tau, r_max)?;

    let base = field.eval_checked(x, tau)?;
    let quotients = |r: f64| -> Result<Vec<f64>> {
        dirs.iter()
            .map(|(dy, dt)| {
                let y: Vec<f64> = x.iter().zip(dy).map(|(a, d)| a + r * d).collect();
                Ok((field.eval_checked(&y, tau + r * dt.unwrap_or(0.0))? - base) / r)
            })
            .collect()
    };

    let mut lipschitz = 0.0_f64;
    let mut finest = Vec::new();
    for &r in &opts.radii {
        finest = quotients(r)?;
        lipschitz = finest.iter().fold(lipschitz, |m, q| m.max(q.abs()));
    }
    let mut radius_schedule = opts.radii.clone();
    let eps = opts.tolerance * lipschitz.max(1.0);
    let bound = BOX_FACTOR * lipschitz.max(1.0);
    let d = match kind {
        SemidiffKind::SuperT(_) => 1,
        SemidiffKind::SuperX | SemidiffKind::SubX => n,
        _ => n + 1,
    };

    let mut hs = constraints(kind, &dirs, &finest, eps, bound, d);
    let mut vertices = hs.vertices(FEASIBILITY_MARGIN);
    let mut notes = Vec::new();
    if vertices.is_empty() {
        // an empty set must stay empty at half the finest radius
        let half = opts.radii.last().unwrap() / 2.0;
        radius_schedule.push(half);
        let q = quotients(half)?;
        let hs_half = constraints(kind, &dirs, &q, eps, bound, d);
        let v_half = hs_half.vertices(FEASIBILITY_MARGIN);
        if !v_half.is_empty() {
            notes.push(format!(
                "empty at r = {:e} but not at r = {half:e}; reported nonempty",
                opts.radii.last().unwrap()
            ));
            hs = hs_half;
            vertices = v_half;
        }
    }
    if matches!(kind.side(), Some(Side::Right | Side::Left)) {
        notes.push(format!("one-sided in time ({})", kind.label()));
    }

    let (verdict, hull_vertices) = if vertices.is_empty() {
        (SetVerdict::Empty, Vec::new())
    } else {
        (SetVerdict::NonEmpty, merge_close(&vertices, 4.0 * eps))
    };
    let edge = bound * (1.0 - 1e-9);
    let unbounded = hull_vertices.iter().flatten().any(|c| c.abs() >= edge);
    Ok(SemidiffEstimate {
        kind,
        verdict,
        hull_vertices,
        radius_schedule,
        tolerance: eps,
        lipschitz,
        bound,
        unbounded,
        notes,
        constraints: hs,
    })
}

fn validate_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty()
        || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite())
        || radii.windows(2).any(|w| !(w[0] > w[1]))
    {
        return Err(Error::Usage(
            "radii must be positive and strictly decreasing".into(),
        ));
    }
    Ok(())
}

type Direction = (Vec<f64>, Option<f64>);

fn constraints(
    kind: SemidiffKind,
    dirs: &[Direction],
    quotients: &[f64],
    eps: f64,
    bound: f64,
    d: usize,
) -> HalfSpaces {
    let mut hs = HalfSpaces::new(d);
    let sup = kind.is_super();
    for ((dy, dt), q) in dirs.iter().zip(quotients) {
        let mut a = match kind {
            SemidiffKind::SuperT(_) => vec![],
            _ => dy.clone(),
        };
        if let Some(dt) = dt {
            a.push(*dt);
        }
        if sup {
            // phi(z + r d) - phi(z) - r <g, d> <= eps r
            hs.push(a, q - eps);
        } else {
            hs.push(a.into_iter().map(|v| -v).collect(), -q - eps);
        }
    }
    hs.push_box(bound);
    hs
}

fn check_room(field: &ScalarField, kind: SemidiffKind, x: &[f64], tau: f64, r: f64) -> Result<()> {
    let (t0, t1) = field.time_range();
    if !(t0..=t1).contains(&tau) {
        return Err(Error::Domain(format!("tau = {tau} outside [{t0}, {t1}]")));
    }
    if !matches!(kind, SemidiffKind::SuperT(_)) {
        let room = x
            .iter()
            .zip(field.lower().iter().zip(field.upper()))
            .all(|(v, (l, u))| v - r >= *l && v + r <= *u);
        if !room {
            return Err(Error::Domain(format!(
                "x = {x:?} is within {r} of the field box boundary"
            )));
        }
    }
    if let Some(side) = kind.side() {
        match side {
            Side::Interior if tau <= t0 || tau >= t1 => {
                return Err(Error::Usage(format!(
                    "tau = {tau} is an endpoint; use a one-sided estimate"
                )))
            }
            Side::Right if tau >= t1 => {
                return Err(Error::Usage("right estimate needs tau < t1".into()))
            }
            Side::Left if tau <= t0 => {
                return Err(Error::Usage("left estimate needs tau > t0".into()))
            }
            _ => {}
        }
        let lo_ok = side == Side::Right || tau - r >= t0;
        let hi_ok = side == Side::Left || tau + r <= t1;
        if !(lo_ok && hi_ok) {
            return Err(Error::Domain(format!(
                "tau = {tau} is within {r} of the time range boundary"
            )));
        }
    }
    Ok(())
}

/// Deterministic unit directions. Spatial ones are Euclidean unit vectors;
/// joint ones are normalized so that `|dt| + |dy| = 1`.
fn directions_for(kind: SemidiffKind, n: usize, count: usize) -> Result<Vec<Direction>> {
    match kind {
        SemidiffKind::SuperX | SemidiffKind::SubX => {
            if count < 2 * n {
                return Err(Error::Usage(format!("need at least {} directions", 2 * n)));
            }
            Ok(spatial_directions(n, count)
                .into_iter()
                .map(|d| (d, None))
                .collect())
        }
        SemidiffKind::SuperT(side) => Ok([1.0, -1.0]
            .into_iter()
            .filter(|dt| side.allows(*dt))
            .map(|dt| (vec![0.0; n], Some(dt)))
            .collect()),
        SemidiffKind::SuperXt(side) | SemidiffKind::SubXt(side) => {
            if count < 2 * (n + 1) {
                return Err(Error::Usage(format!(
                    "need at least {} directions",
                    2 * (n + 1)
                )));
            }
            let raw = if n == 1 {
                let k = count.max(8);
                (0..k)
                    .map(|i| {
                        let th = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                        vec![round_tiny(th.cos()), round_tiny(th.sin())]
                    })
                    .collect()
            } else {
                spatial_directions(n + 1, count.max(8 * (n + 1)))
            };
            Ok(raw
                .into_iter()
                .filter(|d| side.allows(d[n]))
                .map(|d| {
                    let s: f64 = d[..n].iter().map(|v| v * v).sum::<f64>().sqrt() + d[n].abs();
                    (d[..n].iter().map(|v| v / s).collect(), Some(d[n] / s))
                })
                .collect())
        }
    }
}

fn round_tiny(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// `+-e_i` followed by Halton points pushed to the unit sphere.
fn spatial_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    if d == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            out.push(e);
        }
    }
    const PRIMES: [u64; 4] = [2, 3, 5, 7];
    let mut k = 1u64;
    while out.len() < count {
        let p: Vec<f64> = (0..d).map(|j| 2.0 * halton(k, PRIMES[j]) - 1.0).collect();
        k += 1;
        let nrm = crate::ode::norm(&p);
        if nrm > 0.2 {
            out.push(p.iter().map(|v| v / nrm).collect());
        }
    }
    out
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::registry;

    fn field_1d<F>(f: F) -> ScalarField
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        ScalarField::new(f, vec![-2.0], vec![2.0], 0.0, 1.0).unwrap()
    }

    fn ex_field(id: &str) -> ScalarField {
        let spec = registry::problem(id).unwrap();
        ScalarField::from_reference(&spec, vec![-2.0], vec![2.0]).unwrap()
    }

    fn default_x(field: &ScalarField, kind: SemidiffKind, x: f64, tau: f64) -> SemidiffEstimate {
        estimate(field, kind, &[x], tau, &SemidiffOptions::default()).unwrap()
    }

    #[test]
    fn linear_field_has_singleton_gradient() {
        let f = field_1d(|x, _| 0.7 * x[0]);
        for kind in [SemidiffKind::SuperX, SemidiffKind::SubX] {
            let e = default_x(&f, kind, 0.3, 0.5);
            assert_eq!(e.hull_vertices.len(), 1, "{kind:?}: {:?}", e.hull_vertices);
            assert!((e.hull_vertices[0][0] - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_field_in_two_dimensions() {
        let f = ScalarField::new(
            |x, _| 0.5 * x[0] - 1.5 * x[1],
            vec![-1.0; 2],
            vec![1.0; 2],
            0.0,
            1.0,
        )
        .unwrap();
        let e = estimate(
            &f,
            SemidiffKind::SuperX,
            &[0.1, 0.2],
            0.5,
            &SemidiffOptions::default(),
        )
        .unwrap();
        assert_eq!(e.hull_vertices.len(), 1, "{:?}", e.hull_vertices);
        assert!((e.hull_vertices[0][0] - 0.5).abs() < 3e-3);
        assert!((e.hull_vertices[0][1] + 1.5).abs() < 3e-3);
    }

    #[test]
    fn concave_kink_superdifferential_is_the_slope_interval() {
        let f = field_1d(|x, _| -x[0].abs());
        let e = default_x(&f, SemidiffKind::SuperX, 0.0, 0.5);
        let (lo, hi) = e.interval(0).unwrap();
        assert!(
            (lo + 1.0).abs() < 1e-2 && (hi - 1.0).abs() < 1e-2,
            "[{lo}, {hi}]"
        );
        // brute force over a coarse p grid
        for k in -15..=15 {
            let p = k as f64 / 10.0;
            assert_eq!(
                e.contains(&[p], 0.0),
                p.abs() <= 1.0 + e.tolerance,
                "p = {p}"
            );
        }
        assert!(default_x(&f, SemidiffKind::SubX, 0.0, 0.5).is_empty());
    }

    #[test]
    fn convex_kink_subdifferential() {
        let f = field_1d(|x, _| x[0].abs());
        let e = default_x(&f, SemidiffKind::SubX, 0.0, 0.5);
        let (lo, hi) = e.interval(0).unwrap();
        assert!((lo + 1.0).abs() < 1e-2 && (hi - 1.0).abs() < 1e-2);
        assert!(default_x(&f, SemidiffKind::SuperX, 0.0, 0.5).is_empty());
    }

    #[test]
    fn ex22_value_at_the_kink() {
        let f = ex_field("ex22");
        let sup = default_x(&f, SemidiffKind::SuperX, 0.0, 0.5);
        assert!(sup.is_empty());
        assert_eq!(sup.radius_schedule.len(), 4);
        let sub = default_x(&f, SemidiffKind::SubX, 0.0, 0.5);
        let (lo, hi) = sub.interval(0).unwrap();
        assert!(lo.abs() < 0.01, "{lo}");
        assert!((hi - (0.5_f64.exp() - 1.0)).abs() < 0.01, "{hi}");
        let joint = default_x(&f, SemidiffKind::SuperXt(Side::Interior), 0.0, 0.5);
        assert!(joint.is_empty());
    }

    #[test]
    fn ex23_value_is_differentiable_at_origin() {
        let f = ex_field("ex23");
        let joint = default_x(&f, SemidiffKind::SuperXt(Side::Interior), 0.0, 0.5);
        assert_eq!(joint.hull_vertices.len(), 1, "{:?}", joint.hull_vertices);
        let v = &joint.hull_vertices[0];
        assert!(v[0].abs() < 3e-3 && (v[1] - 1.0).abs() < 3e-3, "{v:?}");
    }

    #[test]
    fn constant_field_joint_estimate() {
        let f = field_1d(|_, _| 3.0);
        let e = default_x(&f, SemidiffKind::SuperXt(Side::Interior), 0.5, 0.5);
        assert_eq!(e.hull_vertices.len(), 1);
        assert!(e.hull_vertices[0].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn one_sided_time_estimates_are_half_lines() {
        let f = field_1d(|_, t| 2.0 * t);
        let e = default_x(&f, SemidiffKind::SuperT(Side::Right), 0.0, 0.0);
        assert!(e.unbounded);
        let (lo, hi) = e.interval(0).unwrap();
        assert!((lo - 2.0).abs() < 1e-2 && hi == f64::INFINITY);
        let e = default_x(&f, SemidiffKind::SuperT(Side::Left), 0.0, 1.0);
        let (lo, hi) = e.interval(0).unwrap();
        assert!(lo == f64::NEG_INFINITY && (hi - 2.0).abs() < 1e-2);
    }

    #[test]
    fn side_must_match_endpoint() {
        let f = field_1d(|_, t| t);
        let r = estimate(
            &f,
            SemidiffKind::SuperXt(Side::Interior),
            &[0.0],
            0.0,
            &SemidiffOptions::default(),
        );
        assert!(matches!(r, Err(Error::Usage(_))));
        let r = estimate(
            &f,
            SemidiffKind::SuperXt(Side::Left),
            &[0.0],
            0.0,
            &SemidiffOptions::default(),
        );
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn boundary_points_are_rejected() {
        let f = field_1d(|x, _| x[0]);
        let r = estimate(
            &f,
            SemidiffKind::SuperX,
            &[1.995],
            0.5,
            &SemidiffOptions::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn radii_must_decrease() {
        let f = field_1d(|x, _| x[0]);
        let r = estimate_superdifferential_x(&f, &[0.0], 0.5, &[1e-3, 1e-2], 2);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn direction_sets_are_normalized() {
        for d in directions_for(SemidiffKind::SuperXt(Side::Interior), 2, 24).unwrap() {
            let s = crate::ode::norm(&d.0) + d.1.unwrap().abs();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let right = directions_for(SemidiffKind::SubXt(Side::Right), 1, 16).unwrap();
        assert!(right.iter().all(|d| d.1.unwrap() >= 0.0));
        assert_eq!(spatial_directions(3, 24).len(), 24);
    }
}
