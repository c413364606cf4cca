use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use ocplab::hjb::{
    check_extended_solution, check_viscosity, grid_error, grid_points, max_speed, min_time_steps,
    solve_hjb_with, NumericalHamiltonian, SolutionPropertyReport, SolveOptions,
};
use ocplab::hypotheses::{
    run_hypothesis1_with, run_hypothesis2_with, run_hypothesis3_with, HypothesisOptions, Verdict,
};
use ocplab::ode::linspace;
use ocplab::pmp::{detect_shock, flow_backward_with, reconstruct_value, Flow, FlowOptions};
use ocplab::problems::registry::{registered, RegisteredProblem, REGISTERED_IDS};
use ocplab::problems::{load_problem_config, Bounds, ControlDomain, ProblemSpec};
use ocplab::report::{property_summary, write_hypothesis_report, write_json, write_text};
use ocplab::semidiff::{test_semiconcavity, ScalarField};
use ocplab::Error;

use crate::config::{
    parse_range, positive, ExpectProperty, ExpectVerdict, Flux, PropertyArg, Source,
};
use crate::CliError;

pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    fn dir(&self, sub: &str) -> Result<PathBuf, CliError> {
        let d = self.out.join(sub);
        fs::create_dir_all(&d)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", d.display())))?;
        Ok(d)
    }
}

enum Problem {
    Registered(RegisteredProblem),
    Custom(ProblemSpec),
}

impl Problem {
    fn resolve(arg: Option<String>) -> Result<Self, CliError> {
        let Some(arg) = arg else {
            return Err(CliError::Usage(
                "no problem given (use --problem or the config file)".into(),
            ));
        };
        match registered(&arg) {
            Ok(r) => Ok(Problem::Registered(r)),
            Err(Error::NotFound(_)) => {
                let path = Path::new(&arg);
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "`{arg}` is neither a registered problem ({}) nor an existing file",
                        REGISTERED_IDS.join(", ")
                    )));
                }
                Ok(Problem::Custom(load_problem_config(path)?))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn spec(&self) -> &ProblemSpec {
        match self {
            Problem::Registered(r) => &r.spec,
            Problem::Custom(s) => s,
        }
    }

    /// File-name stem.
    fn stem(&self) -> String {
        self.spec()
            .name()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect()
    }

    /// State box: flags first, then the registered grid box.
    fn state_box(
        &self,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
    ) -> Result<Bounds, CliError> {
        let n = self.spec().state_dim();
        let b = match (lower, upper, self) {
            (Some(l), Some(u), _) => Bounds::new(l, u),
            (None, None, Problem::Registered(r)) => match &r.hjb_box {
                Some(b) => b.clone(),
                None => r.initial_states.clone(),
            },
            (None, None, Problem::Custom(_)) => {
                return Err(CliError::Usage(
                    "a problem file needs a state box (--lower and --upper)".into(),
                ))
            }
            _ => return Err(CliError::Usage("give both --lower and --upper".into())),
        };
        if b.lower.len() != n || b.upper.len() != n {
            return Err(CliError::Usage(format!("the state box must have {n} coordinates")));
        }
        if b.lower.iter().zip(&b.upper).any(|(l, u)| !(l < u)) {
            return Err(CliError::Usage("the state box is empty".into()));
        }
        Ok(b)
    }

    /// Initial data box and time range used for test points.
    fn initial_data(&self, state_box: &Bounds) -> (Bounds, (f64, f64)) {
        match self {
            Problem::Registered(r) => (r.initial_states.clone(), r.initial_times),
            Problem::Custom(s) => {
                let shrink = |l: &f64, u: &f64, side: f64| 0.5 * (l + u) + side * 0.375 * (u - l);
                let b = Bounds::new(
                    state_box.lower.iter().zip(&state_box.upper).map(|(l, u)| shrink(l, u, -1.0)).collect(),
                    state_box.lower.iter().zip(&state_box.upper).map(|(l, u)| shrink(l, u, 1.0)).collect(),
                );
                (b, (s.t0(), s.t0() + 0.9 * (s.t_final() - s.t0())))
            }
        }
    }
}

fn reference_fn(spec: &ProblemSpec) -> Option<impl Fn(&[f64], f64) -> f64 + '_> {
    spec.has_reference_value()
        .then_some(move |x: &[f64], t: f64| spec.reference_value(x, t).unwrap_or(f64::NAN))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn list_problems() -> Result<(), CliError> {
    println!("id    n  m  horizon      controls         reference  state box");
    for id in REGISTERED_IDS {
        let r = registered(id)?;
        let s = &r.spec;
        let controls = match s.control_domain() {
            ControlDomain::Box { lower, upper } => format!("box {lower:?}..{upper:?}"),
            ControlDomain::FiniteSet { points } => format!("{} points", points.len()),
            ControlDomain::EuclideanSpace { dim } => format!("R^{dim}"),
        };
        println!(
            "{id:<5} {:<2} {:<2} [{}, {}]  {controls:<16} {:<10} {:?}..{:?}",
            s.state_dim(),
            s.control_dim(),
            s.t0(),
            s.t_final(),
            if s.has_reference_value() { "yes" } else { "no" },
            r.initial_states.lower,
            r.initial_states.upper,
        );
    }
    Ok(())
}

pub struct SolveParams {
    pub problem: Option<String>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub refine: usize,
    pub flux: Flux,
    pub control_mesh: Option<usize>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Level {
    nx: usize,
    nt: usize,
    grid: String,
    sup_error: Option<f64>,
    nodes_compared: Option<usize>,
    order: Option<f64>,
}

pub fn solve(ctx: &Context, p: SolveParams) -> Result<(), CliError> {
    let problem = Problem::resolve(p.problem)?;
    let spec = problem.spec();
    let space = problem.state_box(p.lower, p.upper)?;
    let nx = positive("nx", p.nx.unwrap_or(160))?;
    let opts = SolveOptions {
        flux: match p.flux {
            Flux::ControlWise => NumericalHamiltonian::ControlWise,
            Flux::Local => NumericalHamiltonian::Local,
        },
        control_mesh: p.control_mesh,
        ..Default::default()
    };
    let dir = ctx.dir("solve")?;
    let stem = problem.stem();
    let reference = reference_fn(spec);
    let speed = max_speed(spec, &space)?;
    let mut levels: Vec<Level> = Vec::new();
    for k in 0..=p.refine {
        let nx_k = nx << k;
        let nt_k = match p.nt {
            Some(nt) => positive("nt", nt)? << k,
            None => min_time_steps(spec, &space, nx_k)?,
        };
        let g = solve_hjb_with(spec, &space, nx_k, nt_k, &opts)?;
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!(
                "the HJB solution at nx = {nx_k} is not finite"
            )));
        }
        let path = dir.join(format!("{stem}_nx{nx_k}.csv"));
        g.write_csv(&path)?;
        let err = reference.as_ref().map(|r| grid_error(&g, r, speed));
        let order = match (levels.last().and_then(|l| l.sup_error), &err) {
            (Some(prev), Some(e)) if e.sup_error > 0.0 => Some((prev / e.sup_error).log2()),
            _ => None,
        };
        levels.push(Level {
            nx: nx_k,
            nt: nt_k,
            grid: display(&path),
            sup_error: err.as_ref().map(|e| e.sup_error),
            nodes_compared: err.as_ref().map(|e| e.nodes_compared),
            order,
        });
    }
    if reference.is_some() {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_errors.csv")))?;
        w.write_record(["nx", "nt", "sup_error", "nodes_compared", "order"])?;
        for l in &levels {
            w.write_record([
                l.nx.to_string(),
                l.nt.to_string(),
                format!("{:e}", l.sup_error.unwrap_or(f64::NAN)),
                l.nodes_compared.unwrap_or(0).to_string(),
                l.order.map_or(String::new(), |o| format!("{o}")),
            ])?;
        }
        w.flush()?;
    }
    write_json(
        &json!({
            "problem": spec.name(),
            "box": {"lower": space.lower, "upper": space.upper},
            "flux": p.flux,
            "levels": levels,
        }),
        &dir.join(format!("{stem}_summary.json")),
    )?;
    println!("{:>6} {:>7} {:>12} {:>7}", "nx", "nt", "sup_error", "order");
    for l in &levels {
        println!(
            "{:>6} {:>7} {:>12} {:>7}",
            l.nx,
            l.nt,
            l.sup_error.map_or("-".into(), |e| format!("{e:.3e}")),
            l.order.map_or("-".into(), |o| format!("{o:.2}")),
        );
    }
    Ok(())
}

pub struct VerifyParams {
    pub problem: Option<String>,
    pub property: PropertyArg,
    pub expect: Option<ExpectProperty>,
    pub source: Source,
    pub grid: usize,
    pub kink: f64,
    pub nx: usize,
}

fn property_name(p: PropertyArg) -> &'static str {
    match p {
        PropertyArg::Viscosity => "viscosity",
        PropertyArg::Extended => "extended",
        PropertyArg::Semiconcavity => "semiconcavity",
    }
}

pub fn verify(ctx: &Context, p: VerifyParams) -> Result<(), CliError> {
    let problem = Problem::resolve(p.problem)?;
    let spec = problem.spec();
    let space = problem.state_box(None, None).map_err(|_| CliError::Usage(
            "verify needs a registered problem with a state box".into(),
        ))?;
    let grid = positive("grid", p.grid)?;
    // Padded so that test points on the box edge keep a full stencil.
    let space = Bounds::new(
        space.lower.iter().map(|l| l - 0.25).collect(),
        space.upper.iter().map(|u| u + 0.25).collect(),
    );
    let field = match p.source {
        Source::Reference => {
            if !spec.has_reference_value() {
                return Err(CliError::Usage(format!(
                    "problem `{}` has no closed-form value; use --source hjb",
                    spec.name()
                )));
            }
            ScalarField::from_reference(spec, space.lower.clone(), space.upper.clone())?
        }
        Source::Hjb => {
            let nt = min_time_steps(spec, &space, p.nx)?;
            solve_hjb_with(spec, &space, p.nx, nt, &SolveOptions::default())?.to_field()?
        }
    };
    let (init, (t_lo, t_hi)) = problem.initial_data(&problem.state_box(None, None)?);
    let n = spec.state_dim();
    // The viscosity inequalities are two-sided in time, so the initial time is skipped.
    let t_first = if p.property == PropertyArg::Viscosity && t_lo <= spec.t0() {
        t_lo + (t_hi - t_lo) / grid as f64
    } else {
        t_lo
    };
    let mut points = grid_points(&init.lower, &init.upper, t_first, t_hi, grid, grid);
    let kink_inside = (0..n).all(|i| init.lower[i] <= p.kink && p.kink <= init.upper[i]);
    if kink_inside {
        for t in linspace(t_first, t_hi, grid) {
            let pt = (vec![p.kink; n], t);
            if !points.contains(&pt) {
                points.push(pt);
            }
        }
    }
    let on_kink = |x: &[f64]| x.iter().any(|c| (c - p.kink).abs() <= 1e-12);
    let (passes, at_kink, body, summary) = match p.property {
        PropertyArg::Viscosity | PropertyArg::Extended => {
            let r: SolutionPropertyReport = if p.property == PropertyArg::Viscosity {
                check_viscosity(&field, spec, &points)?
            } else {
                check_extended_solution(&field, spec, &points)?
            };
            let at_kink =
                !r.failures.is_empty() && r.failures.iter().all(|f| on_kink(&f.point[..n]));
            let summary = property_summary(&r);
            (r.all_pass(), at_kink, serde_json::to_value(&r).unwrap_or_default(), summary)
        }
        PropertyArg::Semiconcavity => {
            // Pairs are drawn near the kink when it is inside the box, and away
            // from both ends of the time range.
            let (lo, hi): (Vec<f64>, Vec<f64>) = if kink_inside {
                (0..n)
                    .map(|i| {
                        ((p.kink - 0.5).max(init.lower[i]), (p.kink + 0.5).min(init.upper[i]))
                    })
                    .unzip()
            } else {
                (init.lower.clone(), init.upper.clone())
            };
            let span = t_hi - t_lo;
            let region = Bounds::new(
                lo.into_iter().chain([t_lo + 0.2 * span]).collect(),
                hi.into_iter().chain([t_hi - 0.2 * span]).collect(),
            );
            let m = test_semiconcavity(&field, &region, 800, &[0.5, 0.3], ctx.seed)?;
            let at_kink = m
                .witness
                .as_ref()
                .is_some_and(|w| (0..n).any(|i| w.straddles(i, p.kink)));
            let summary = format!(
                "semiconcave: {} (tolerance {}){}\n",
                m.is_semiconcave_verdict,
                m.tolerance,
                m.witness
                    .as_ref()
                    .map_or(String::new(), |w| format!(
                        "\n  worst pair {:?} -- {:?}, ratio {:.3e}",
                        w.xi, w.eta, w.ratio
                    ))
            );
            (
                m.is_semiconcave_verdict,
                at_kink,
                serde_json::to_value(&m).unwrap_or_default(),
                summary,
            )
        }
    };
    let matched = p.expect.map(|e| match e {
        ExpectProperty::Pass => passes,
        ExpectProperty::Fail => !passes,
        ExpectProperty::FailAtKink => !passes && at_kink,
    });
    let dir = ctx.dir("verify")?;
    let stem = format!("{}_{}", problem.stem(), property_name(p.property));
    write_json(
        &json!({
            "problem": spec.name(),
            "property": p.property,
            "source": p.source,
            "passes": passes,
            "fails_only_at_kink": at_kink,
            "kink": p.kink,
            "expect": p.expect,
            "matched": matched,
            "report": body,
        }),
        &dir.join(format!("{stem}.json")),
    )?;
    write_text(&summary, &dir.join(format!("{stem}.txt")))?;
    print!("{summary}");
    match matched {
        Some(false) => Err(CliError::Unexpected(format!(
            "{} check {} but {:?} was expected",
            property_name(p.property),
            if passes { "passed" } else { "failed" },
            p.expect.unwrap()
        ))),
        _ => Ok(()),
    }
}

pub struct FlowParams {
    pub problem: Option<String>,
    pub xi_range: Option<String>,
    pub nt: usize,
    pub taus: usize,
}

#[derive(Serialize)]
struct FlowEntry {
    xi: Vec<f64>,
    branches: usize,
    branch_times: Vec<f64>,
    exploded: bool,
    any_control: bool,
    files: Vec<String>,
    notes: Vec<String>,
}

fn cartesian(axis: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn flow(ctx: &Context, p: FlowParams) -> Result<(), CliError> {
    let problem = Problem::resolve(p.problem)?;
    let spec = problem.spec();
    let range = p
        .xi_range
        .ok_or_else(|| CliError::Usage("flow needs --xi-range lo:hi:n".into()))?;
    let (lo, hi, count) = parse_range(&range)?;
    let nt = positive("nt", p.nt)?;
    let taus = positive("taus", p.taus)?;
    let xis = cartesian(&linspace(lo, hi, count), spec.state_dim());
    let stem = problem.stem();
    let dir = ctx.dir("flow")?;
    let ext_dir = dir.join(&stem);
    if ext_dir.exists() {
        fs::remove_dir_all(&ext_dir)?;
    }
    fs::create_dir_all(&ext_dir)?;

    let opts = FlowOptions::default();
    let mut entries = Vec::new();
    let mut files = 0;
    for (k, xi) in xis.iter().enumerate() {
        let (flow, exploded): (Flow, bool) =
            match flow_backward_with(spec, xi, spec.t0(), nt, &opts) {
                Ok(f) => (f, false),
                Err(Error::BranchExplosion { partial, .. }) => (*partial, true),
                Err(e) => return Err(e.into()),
            };
        let mut paths = Vec::new();
        for (j, b) in flow.branches.iter().enumerate() {
            let path = ext_dir.join(format!("xi{k:04}_b{j:02}.csv"));
            b.write_csv(spec, &path)?;
            paths.push(display(&path));
        }
        files += paths.len();
        entries.push(FlowEntry {
            xi: xi.clone(),
            branches: flow.branches.len(),
            branch_times: flow.branch_times(),
            exploded,
            any_control: flow.any_control,
            files: paths,
            notes: flow.notes.clone(),
        });
    }

    let tau_grid = linspace(spec.t0(), spec.t_final(), taus);
    let shocks = detect_shock(spec, &xis, nt, &tau_grid)?;
    let shock_rows: Vec<_> = shocks
        .iter()
        .map(|w| {
            json!({
                "tau": w.tau,
                "xi_a": w.extremal_a.terminal_state,
                "signature_a": w.extremal_a.signature,
                "xi_b": w.extremal_b.terminal_state,
                "signature_b": w.extremal_b.signature,
                "state_gap": w.state_gap,
                "costate_gap": w.costate_gap,
            })
        })
        .collect();

    let rec = reconstruct_value(spec, &xis, nt)?;
    let reference = reference_fn(spec);
    let mut max_dev: Option<f64> = None;
    let values_path = dir.join(format!("{stem}_values.csv"));
    {
        let mut w = csv::Writer::from_path(&values_path)?;
        let n = spec.state_dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["tau", "value", "reference", "abs_error"].map(String::from));
        header.extend((1..=n).map(|i| format!("xi{i}")));
        header.push("signature".into());
        w.write_record(&header)?;
        for s in &rec.samples {
            let r = reference.as_ref().map(|f| f(&s.x, s.tau));
            let err = r.map(|r| (s.value - r).abs());
            if let Some(e) = err {
                max_dev = Some(max_dev.map_or(e, |m: f64| m.max(e)));
            }
            let mut row: Vec<String> = s.x.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", s.tau));
            row.push(format!("{:e}", s.value));
            row.push(r.map_or(String::new(), |v| format!("{v:e}")));
            row.push(err.map_or(String::new(), |v| format!("{v:e}")));
            row.extend(s.xi.iter().map(|v| format!("{v:e}")));
            row.push(
                s.signature
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let branched: Vec<&FlowEntry> = entries
        .iter()
        .filter(|e| e.branches > 1 || e.exploded)
        .collect();
    write_json(
        &json!({
            "problem": spec.name(),
            "xi_range": range,
            "nt": nt,
            "flows": entries,
            "branched_flows": branched.len(),
            "shocks": shock_rows,
            "reconstruction": {
                "values": display(&values_path),
                "samples": rec.samples.len(),
                "max_deviation": max_dev,
                "warnings": rec.warnings,
            },
        }),
        &dir.join(format!("{stem}_report.json")),
    )?;
    println!("{} terminal states, {files} extremal files", xis.len());
    println!("{} branched or over-cap flows", branched.len());
    for e in &branched {
        println!(
            "  xi = {:?}: {} branches{}",
            e.xi,
            e.branches,
            if e.exploded { " (branch cap hit)" } else { "" }
        );
    }
    println!("{} shock witnesses", shocks.len());
    if let Some(d) = max_dev {
        println!("max |value - reference| along extremals: {d:.3e}");
    }
    for w in &rec.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

pub struct ReportParams {
    pub problem: Option<String>,
    pub hypothesis: Option<u8>,
    pub expect: Option<ExpectVerdict>,
    pub grid: Option<usize>,
    pub n_shoot: Option<usize>,
    pub nt: Option<usize>,
}

pub fn report(ctx: &Context, p: ReportParams) -> Result<(), CliError> {
    let id = p
        .problem
        .ok_or_else(|| CliError::Usage("no problem given (use --problem)".into()))?;
    let h = p
        .hypothesis
        .ok_or_else(|| CliError::Usage("report needs --hypothesis 1, 2 or 3".into()))?;
    let defaults = HypothesisOptions::default();
    let opts = HypothesisOptions {
        seed: ctx.seed,
        grid: positive("grid", p.grid.unwrap_or(defaults.grid))?,
        n_shoot: positive("n_shoot", p.n_shoot.unwrap_or(defaults.n_shoot))?,
        nt: positive("nt", p.nt.unwrap_or(defaults.nt))?,
        ..defaults
    };
    let mut r = match h {
        1 => run_hypothesis1_with(&id, &opts),
        2 => run_hypothesis2_with(&id, &opts),
        3 => run_hypothesis3_with(&id, &opts),
        _ => return Err(CliError::Usage(format!("no hypothesis {h}"))),
    }?;
    let dir = ctx.dir("report")?;
    if !r.census.is_empty() {
        let path = dir.join(format!("hypothesis{}_{}_census.csv", r.hypothesis, r.problem));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "x0",
            "tau",
            "class",
            "extremals",
            "any_control",
            "free_directions",
            "nearest_miss",
            "exploded_flows",
        ])?;
        for c in &r.census {
            w.write_record([
                c.x0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                c.tau.to_string(),
                serde_json::to_value(c.class)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                c.extremals.to_string(),
                c.any_control.to_string(),
                c.free_directions.to_string(),
                c.nearest_miss.map_or(String::new(), |m| m.to_string()),
                c.exploded_flows.to_string(),
            ])?;
        }
        w.flush()?;
        for e in r.evidence.iter_mut().filter(|e| e.checker == "pmp::shoot_pmp") {
            e.artifacts.push(display(&path));
        }
    }
    let written = write_hypothesis_report(&r, &dir)?;
    print!("{}", ocplab::report::hypothesis_summary(&r));
    println!(
        "\nwrote {}",
        written.iter().map(|p| display(p)).collect::<Vec<_>>().join(", ")
    );
    let want = p.expect.map(|e| match e {
        ExpectVerdict::Supports => Verdict::Supports,
        ExpectVerdict::Refutes => Verdict::Refutes,
        ExpectVerdict::Inconclusive => Verdict::Inconclusive,
    });
    match want {
        Some(v) if v != r.verdict => Err(CliError::Unexpected(format!(
            "verdict {:?}, expected {v:?}",
            r.verdict
        ))),
        _ => Ok(()),
    }
}
