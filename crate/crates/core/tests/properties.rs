//! Randomized invariants across the modules.

use std::sync::Arc;

use proptest::prelude::*;

use ocplab::hamiltonian::{
    control_hamiltonian, default_control_mesh, diagnose_differentiability,
    directional_derivative_of_max, hamiltonian, ControlMesh, DiagnosisWitness, Maximizer, Wrt,
};
use ocplab::hjb::{solve_hjb, solve_hjb_with, min_time_steps, SolveOptions};
use ocplab::hypotheses::{run_hypothesis1_with, HypothesisOptions, Verdict};
use ocplab::ode::linspace;
use ocplab::pmp::{check_maximum_condition, detect_shock, flow_backward, reconstruct_value, shoot_pmp};
use ocplab::problems::registry::{
    problem, reference_optimal_control, reference_value, registered, REGISTERED_IDS,
};
use ocplab::problems::{simulate, ReferenceControl};
use ocplab::semidiff::{estimate, ScalarField, SemidiffKind, SemidiffOptions, Side};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

fn field(id: &str, lo: f64, hi: f64) -> ScalarField {
    ScalarField::from_reference(&problem(id).unwrap(), vec![lo], vec![hi]).unwrap()
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn ex22_reference_control_attains_the_value(x in -0.9..2.0_f64, tau in 0.0..0.99_f64) {
        let spec = problem("ex22").unwrap();
        let ReferenceControl::Unique { control } = reference_optimal_control("ex22", &[x], tau).unwrap()
        else { panic!("ex22 control is unique") };
        let cost = simulate(&spec, &[x], tau, &control, 1000).unwrap().total_cost();
        let v = reference_value("ex22", &[x], tau).unwrap();
        prop_assert!((cost - v).abs() <= 1e-4, "{cost} vs {v}");
    }

    #[test]
    fn ex22_branches_meet_on_the_switching_curve(tau in 0.0..0.99_f64) {
        // (1 + x) e^(1 - tau) = 1
        let x = (tau - 1.0).exp() - 1.0;
        let below = reference_value("ex22", &[x - 1e-13], tau).unwrap();
        let above = reference_value("ex22", &[x + 1e-13], tau).unwrap();
        prop_assert!((below - above).abs() <= 1e-12);
        prop_assert!((1.0 + x - tau - (x - (1.0 + x).ln())).abs() <= 1e-12);
    }

    #[test]
    fn simulate_is_bit_reproducible(x in -2.0..2.0_f64, seed in any::<u64>()) {
        use rand::SeedableRng;
        let spec = problem("ex23").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = ocplab::problems::random_control(&spec, 0.0, 5, &mut rng).unwrap();
        let a = simulate(&spec, &[x], 0.0, &c, 64).unwrap();
        let b = simulate(&spec, &[x], 0.0, &c, 64).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_a_field_scales_its_semidifferentials(
        x in -0.5..1.5_f64, tau in 0.1..0.9_f64, c in 0.5..4.0_f64,
    ) {
        let f = field("ex22", -0.9, 2.0);
        let g = f.scaled(c);
        let opts = SemidiffOptions::default();
        for kind in [SemidiffKind::SuperX, SemidiffKind::SubX] {
            let a = estimate(&f, kind, &[x], tau, &opts).unwrap();
            let b = estimate(&g, kind, &[x], tau, &opts).unwrap();
            prop_assert_eq!(a.is_empty(), b.is_empty());
            if let (Some((alo, ahi)), Some((blo, bhi))) = (a.interval(0), b.interval(0)) {
                let slack = 2.0 * b.tolerance;
                prop_assert!((c * alo - blo).abs() <= slack, "{alo} {blo}");
                prop_assert!((c * ahi - bhi).abs() <= slack, "{ahi} {bhi}");
            }
        }
    }

    #[test]
    fn two_sided_differentials_coincide(x in -0.5..1.5_f64, tau in 0.1..0.9_f64) {
        let f = field("ex22", -0.9, 2.0);
        let opts = SemidiffOptions::default();
        let sup = estimate(&f, SemidiffKind::SuperX, &[x], tau, &opts).unwrap();
        let sub = estimate(&f, SemidiffKind::SubX, &[x], tau, &opts).unwrap();
        if let (Some((a, b)), Some((c, d))) = (sup.interval(0), sub.interval(0)) {
            let tol = 2.0 * sup.tolerance.max(sub.tolerance);
            prop_assert!((b - a).abs() <= tol && (d - c).abs() <= tol);
            prop_assert!((a - c).abs() <= tol, "{a} vs {c}");
        }
    }

    #[test]
    fn empty_verdicts_survive_a_finer_radius(x in -0.3..0.3_f64, tau in 0.1..0.9_f64) {
        let f = field("ex22", -0.9, 2.0);
        let opts = SemidiffOptions::default();
        let mut finer = opts.clone();
        finer.radii.push(0.5 * opts.radii.last().unwrap());
        for kind in [SemidiffKind::SuperX, SemidiffKind::SubX] {
            if estimate(&f, kind, &[x], tau, &opts).unwrap().is_empty() {
                prop_assert!(estimate(&f, kind, &[x], tau, &finer).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn joint_superdifferential_projects_into_the_partial_ones(
        x in -1.5..1.5_f64, tau in 0.1..0.9_f64,
    ) {
        let f = field("ex23", -2.0, 2.0);
        let opts = SemidiffOptions::default();
        let joint = estimate(&f, SemidiffKind::SuperXt(Side::Interior), &[x], tau, &opts).unwrap();
        if !joint.is_empty() {
            let sx = estimate(&f, SemidiffKind::SuperX, &[x], tau, &opts).unwrap();
            let st = estimate(&f, SemidiffKind::SuperT(Side::Interior), &[x], tau, &opts).unwrap();
            let slack = 2.0 * joint.tolerance.max(sx.tolerance).max(st.tolerance);
            for w in &joint.hull_vertices {
                prop_assert!(sx.contains(&[w[0]], slack), "{w:?} vs {:?}", sx.hull_vertices);
                prop_assert!(st.contains(&[w[1]], slack), "{w:?} vs {:?}", st.hull_vertices);
            }
        }
    }
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn maximized_hamiltonian_dominates_the_mesh(
        k in 0..3usize, x in -1.5..1.5_f64, p in -2.0..2.0_f64, t in 0.0..1.0_f64,
    ) {
        let spec = problem(["ex22", "ex23", "ex31"][k]).unwrap();
        let (h, _) = hamiltonian(&spec, &[x], &[p], t, default_control_mesh(1)).unwrap();
        let mesh = ControlMesh::for_spec(&spec).unwrap();
        for u in mesh.points() {
            prop_assert!(h >= control_hamiltonian(&spec, &[x], &[p], u, t).unwrap() - 1e-12);
        }
    }

    #[test]
    fn one_sided_differences_match_the_directional_derivative(
        k in 0..4usize, x in -1.5..1.5_f64, p in -2.0..2.0_f64, v in -1.0..1.0_f64,
    ) {
        let id = REGISTERED_IDS[k];
        let spec = problem(id).unwrap();
        let n = spec.state_dim();
        let (xs, ps, vs) = (vec![x; n], vec![p; n], vec![v; n]);
        let d = directional_derivative_of_max(&spec, &xs, &ps, 0.2, Wrt::P, &vs).unwrap();
        let s = 1e-6;
        let shifted: Vec<f64> = ps.iter().zip(&vs).map(|(a, b)| a + s * b).collect();
        let h = |q: &[f64]| hamiltonian(&spec, &xs, q, 0.2, default_control_mesh(spec.control_dim())).unwrap().0;
        let fd = (h(&shifted) - h(&ps)) / s;
        prop_assert!((fd - d).abs() <= 1e-3 * (1.0 + d.abs()), "{id}: {fd} vs {d}");
    }

    #[test]
    fn differentiable_verdicts_have_the_witness_as_gradient(
        k in 0..4usize, x in -1.5..1.5_f64, p in -2.0..2.0_f64,
    ) {
        let id = REGISTERED_IDS[k];
        let spec = problem(id).unwrap();
        let n = spec.state_dim();
        let (xs, ps) = (vec![x; n], vec![p; n]);
        let d = diagnose_differentiability(&spec, &xs, &ps, 0.2, Wrt::P).unwrap();
        if let DiagnosisWitness::Single { vector } = &d.witness {
            let s = 1e-5;
            let h = |q: &[f64]| hamiltonian(&spec, &xs, q, 0.2, default_control_mesh(spec.control_dim())).unwrap().0;
            for i in 0..n {
                let (mut a, mut b) = (ps.clone(), ps.clone());
                a[i] += s;
                b[i] -= s;
                let g = (h(&a) - h(&b)) / (2.0 * s);
                prop_assert!((g - vector[i]).abs() <= 1e-3, "{id}: {g} vs {}", vector[i]);
            }
        }
    }

    #[test]
    fn hamiltonian_is_a_first_integral(k in 0..3usize, xi in -1.5..1.5_f64) {
        let id = ["ex22", "ex23", "ex31"][k];
        // away from the ex22 dwell at the origin
        prop_assume!(id != "ex22" || xi.abs() > 0.2);
        let spec = problem(id).unwrap();
        let flow = flow_backward(&spec, &[xi], 400).unwrap();
        let m = Maximizer::new(&spec, None).unwrap();
        for b in &flow.branches {
            let hs: Vec<f64> = (0..b.times.len())
                .map(|i| m.value(&b.states[i], &b.costates[i], b.times[i]).unwrap())
                .collect();
            let lo = hs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(hi - lo <= 1e-6, "{id} xi={xi}: spread {}", hi - lo);
        }
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn raising_terminal_data_never_lowers_the_solution(k in 0..3usize, eps in 1e-3..0.5_f64) {
        let reg = registered(["ex22", "ex23", "ex31"][k]).unwrap();
        let b = reg.hjb_box.clone().unwrap();
        let nt = min_time_steps(&reg.spec, &b, 40).unwrap();
        let base = solve_hjb(&reg.spec, &b, 40, nt).unwrap();
        let opts = SolveOptions { terminal: Some(Arc::new(move |_: &[f64]| eps)), ..Default::default() };
        let raised = solve_hjb_with(&reg.spec, &b, 40, nt, &opts).unwrap();
        for (r, v) in raised.values.iter().zip(&base.values) {
            prop_assert!(*r >= *v - 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_nodes(k in 0..3usize, node in any::<prop::sample::Index>()) {
        let reg = registered(["ex22", "ex23", "ex31"][k]).unwrap();
        let b = reg.hjb_box.clone().unwrap();
        let nt = min_time_steps(&reg.spec, &b, 20).unwrap();
        let g = solve_hjb(&reg.spec, &b, 20, nt).unwrap();
        let j = node.index(g.space_nodes());
        let kt = node.index(g.time_axis.count);
        let v = g.interpolate(&g.space_point(j), g.time_axis.node(kt));
        prop_assert_eq!(v, g.value_at_node(kt, j));
    }

    #[test]
    fn shooting_returns_only_maximum_principle_extremals(
        k in 0..2usize, x0 in -1.5..1.5_f64, tau in 0.0..0.9_f64,
    ) {
        let reg = registered(["ex22", "ex23"][k]).unwrap();
        let x0 = x0.max(reg.initial_states.lower[0]);
        let r = shoot_pmp(&reg.spec, &[x0], tau, &reg.xi_box, 21, 100).unwrap();
        for e in &r.extremals {
            prop_assert!(check_maximum_condition(&reg.spec, e).unwrap().passes);
        }
    }

    #[test]
    fn shock_witnesses_ignore_sample_order(
        xis in Just(linspace(-1.2, 1.2, 9)).prop_shuffle(),
    ) {
        let spec = problem("ex23").unwrap();
        let sorted: Vec<Vec<f64>> = linspace(-1.2, 1.2, 9).into_iter().map(|v| vec![v]).collect();
        let shuffled: Vec<Vec<f64>> = xis.into_iter().map(|v| vec![v]).collect();
        let taus = linspace(0.0, 1.0, 6);
        prop_assert_eq!(
            detect_shock(&spec, &sorted, 80, &taus).unwrap(),
            detect_shock(&spec, &shuffled, 80, &taus).unwrap()
        );
    }

    #[test]
    fn hypothesis_reports_are_reproducible(seed in any::<u64>()) {
        let opts = HypothesisOptions { seed, grid: 3, n_shoot: 11, nt: 60, ..Default::default() };
        let a = run_hypothesis1_with("ex31", &opts).unwrap();
        let b = run_hypothesis1_with("ex31", &opts).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn refutations_rest_on_two_rows() {
    let opts = HypothesisOptions {
        grid: 3,
        n_shoot: 21,
        nt: 100,
        probe_samples: 3,
        shock_samples: 5,
        ..Default::default()
    };
    for id in REGISTERED_IDS {
        for run in [run_hypothesis1_with, ocplab::hypotheses::run_hypothesis2_with] {
            let r = run(id, &opts).unwrap();
            if r.verdict == Verdict::Refutes {
                assert!(r.evidence.len() >= 2, "{id}: {r:?}");
                assert!(r.evidence.iter().any(|e| e.contradicts));
            }
        }
    }
}

#[test]
fn reconstruction_agrees_with_the_hjb_grid_off_the_dwell() {
    let reg = registered("ex22").unwrap();
    let b = reg.hjb_box.clone().unwrap();
    let nt = min_time_steps(&reg.spec, &b, 160).unwrap();
    let g = solve_hjb(&reg.spec, &b, 160, nt).unwrap();
    let speed = ocplab::hjb::max_speed(&reg.spec, &b).unwrap();
    let xis: Vec<Vec<f64>> = linspace(0.05, 3.0, 20).into_iter().map(|v| vec![v]).collect();
    let rec = reconstruct_value(&reg.spec, &xis, 400).unwrap();
    let mut compared = 0;
    for s in &rec.samples {
        let margin = speed * (reg.spec.t_final() - s.tau);
        if s.x[0] - b.lower[0] < margin || b.upper[0] - s.x[0] < margin {
            continue;
        }
        compared += 1;
        let h = g.interpolate(&s.x, s.tau);
        assert!((h - s.value).abs() <= 0.05, "{s:?} vs {h}");
    }
    assert!(compared > 0);
}
