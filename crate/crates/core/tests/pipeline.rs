use std::f64::consts::PI;

use proptest::prelude::*;

use vmf_core::blowup::{analyze, AnalysisOptions};
use vmf_core::io::{read_field_csv, to_json, write_field_csv};
use vmf_core::measure::MeasureKind;
use vmf_core::scenario::Scenario;
use vmf_core::solver::{continuation, residual, solve_newton, SeedPolicy, Variant};
use vmf_core::{Domain, Field, Grid};

#[test]
fn scenario_to_solution_to_report() {
    let s = Scenario::parse(
        "domain = disk\nn = 48\nmeasure = liouville\nlambda = 2*pi + 2*pi  # mu = 1\npeak_threshold = 0.5\n",
    )
    .unwrap();
    let spec = s.problem(s.require_lambda().unwrap()).unwrap();
    assert_eq!(spec.variant(), Variant::Neri);
    let r = solve_newton(&spec, &s.seed.initial_guess(spec.grid(), None), s.solve).unwrap();
    assert!(r.converged);
    assert!(residual(&spec, &r.v).unwrap().max_abs() < 1e-8);

    let mut buf = Vec::new();
    write_field_csv(&r.v, &mut buf).unwrap();
    let back = read_field_csv(spec.grid(), buf.as_slice()).unwrap();
    assert_eq!(back.values(), r.v.values());

    let report = analyze(&spec, &back, &s.analysis).unwrap();
    assert_eq!(report.peaks.len(), 1);
    let p = &report.peaks[0];
    // ball mass of the exact profile: 8π μr²/(1 + μr²)
    let rb = p.ball_radius;
    let exact = 8.0 * PI * rb * rb / (1.0 + rb * rb);
    assert!((p.m_plus - exact).abs() / exact < 2e-2, "{} vs {exact}", p.m_plus);
    let json = to_json(&report).unwrap();
    assert_eq!(json, to_json(&analyze(&spec, &back, &s.analysis).unwrap()).unwrap());
}

#[test]
fn atomic_measure_and_ss_variant() {
    let s = Scenario::parse(
        "domain = disk\nn = 32\nmeasure = atomic[(1, 0.6), (-0.5, 0.4)]\nvariant = ss\nlambda_list = [2, 4, 6]\nseed = previous\n",
    )
    .unwrap();
    let lambdas = s.require_lambda_list().unwrap();
    let base = s.problem(lambdas[0]).unwrap();
    assert_eq!(base.measure().kind(), MeasureKind::Atomic);
    let trace = continuation(&base, lambdas, s.seed, s.solve).unwrap();
    assert!(trace.completed());
    assert_eq!(trace.solutions.len(), 3);
    // positive net intensity pushes v up
    assert!(trace.solutions.iter().all(|v| v.max() > 0.0));
}

#[test]
fn torus_bump_seed_is_periodic() {
    let grid = Grid::build(Domain::FlatTorus { period_x: 1.0, period_y: 1.0 }, 32).unwrap();
    let seed = SeedPolicy::PreviousPlusBump {
        center: [0.0, 0.0],
        amplitude: 1.0,
        width: 0.1,
    };
    let v = seed.initial_guess(&grid, None);
    let corner = v.value_at([0.0, 0.0]).unwrap();
    let wrapped = v.value_at([1.0 - grid.h(), 0.0]).unwrap();
    let inside = v.value_at([grid.h(), 0.0]).unwrap();
    assert!((corner - 1.0).abs() < 1e-12);
    assert!((wrapped - inside).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 8usize..24) {
        let grid = Grid::build(Domain::Rectangle { width: 1.0, height: 0.5 }, n).unwrap();
        let f = Field::from_fn(grid.clone(), |p| a * p[0].exp() + b * (7.0 * p[1]).sin() / 3.0);
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let back = read_field_csv(&grid, buf.as_slice()).unwrap();
        prop_assert_eq!(back.values(), f.values());
    }

    #[test]
    fn lambda_expressions_evaluate(k in 1u32..50, m in 1u32..9) {
        let s = Scenario::parse(&format!("domain = disk\nn = 16\nmeasure = sinh\nlambda = {k}*pi/{m}\n")).unwrap();
        let expect = k as f64 * PI / m as f64;
        prop_assert!((s.require_lambda().unwrap() - expect).abs() <= 1e-15 * expect);
    }
}

#[test]
fn analysis_options_defaults_are_stable() {
    let o = AnalysisOptions::default();
    assert_eq!(o.peak_threshold, 6.0);
    assert_eq!(o.rv_radius, 0.3);
    assert!(o.ball_radius.is_none());
}

#[test]
fn load_resolves_paths_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cfg");
    std::fs::create_dir_all(&sub).unwrap();
    let path = sub.join("a.cfg");
    std::fs::write(&path, "domain = disk\nn = 16\nmeasure = sinh\ninput = ../runs/x\nout = \"/abs/out\"\n").unwrap();
    let s = Scenario::load(&path).unwrap();
    assert_eq!(s.input.as_deref(), Some(sub.join("../runs/x").as_path()));
    assert_eq!(s.out.as_deref(), Some(std::path::Path::new("/abs/out")));
    assert!(Scenario::load(&sub.join("missing.cfg")).is_err());
}
