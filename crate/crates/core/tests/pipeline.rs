use collab_core::evaluate::fixed_point_value;
use collab_core::iterate::run;
use collab_core::simulate::estimate;
use collab_core::verify::{check_dominates, check_envelope, check_supersolution, default_residual_tol};
use collab_core::*;

fn asymmetric() -> ModelParams {
    ModelParams::new(1.0, 1.5, 2.0, 1.0, ClaimLaw::exponential(3.0), ClaimLaw::exponential(2.0), 0.1, 0.4).unwrap()
}

fn sampled_exponential(rate: f64) -> ClaimLaw {
    ClaimLaw::Numeric(NumericCdf::sample_fn(12.0, 6000, |s| 1.0 - (-rate * s).exp()).unwrap())
}

fn options(step: f64, extent: f64, n_max: usize) -> IterateOptions {
    let mut o = IterateOptions::new(Grid2D::square(step, extent).unwrap());
    o.n_max = n_max;
    o
}

#[test]
fn symmetric_run_is_monotone_symmetric_and_enveloped() {
    let p = ModelParams::symmetric_example();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let r = run(&p, &pay, &options(0.1, 4.0, 8)).unwrap();
    let mut prev = &r.v0;
    for s in &r.states {
        assert!(check_dominates(&s.value, prev, 1e-8).pass, "step {}", s.n);
        assert!(check_envelope(&s.value, &p).pass, "step {}", s.n);
        assert_eq!(s.value.symmetry_gap(), 0.0);
        assert_eq!(s.spec.vertex.0, s.spec.vertex.1);
        assert_eq!(s.spec.mirror_gap(), 0.0);
        assert!(!s.fallback);
        prev = &s.value;
    }
    // the vertex moves outwards with the iteration
    let xs: Vec<f64> = r.states.iter().map(|s| s.spec.vertex.0).collect();
    assert!(xs.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{xs:?}");
}

#[test]
fn asymmetric_run_stays_admissible() {
    let p = asymmetric();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let r = run(&p, &pay, &options(0.1, 5.0, 6)).unwrap();
    assert_eq!(r.states.len(), 6);
    let mut prev = &r.v0;
    for s in &r.states {
        assert!(check_envelope(&s.value, &p).pass, "step {}", s.n);
        assert!(s.min_delta > -1e-8, "step {}: {}", s.n, s.min_delta);
        assert!(check_dominates(&s.value, prev, 1e-8).pass);
        prev = &s.value;
    }
    let spec = r.final_spec().unwrap();
    assert!(spec.vertex.0 != spec.vertex.1);
}

#[test]
fn sampled_law_reproduces_closed_form_pipeline() {
    let exact = ModelParams::symmetric_example();
    let mut sampled = exact.clone();
    sampled.law1 = sampled_exponential(3.0);
    sampled.law2 = sampled_exponential(3.0);
    let go = |p: &ModelParams| {
        let pay = BoundaryPayoffs::standalone(p).unwrap();
        run(p, &pay, &options(0.1, 3.0, 3)).unwrap()
    };
    let a = go(&exact);
    let b = go(&sampled);
    assert!(a.final_value().sup_diff(b.final_value()) < 5e-3, "{}", a.final_value().sup_diff(b.final_value()));
    let (sa, sb) = (a.final_spec().unwrap(), b.final_spec().unwrap());
    assert!((sa.vertex.0 - sb.vertex.0).abs() < 0.05);
}

#[test]
fn curve_value_matches_simulation_off_the_shipped_model() {
    let p = asymmetric();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let g = Grid2D::square(0.05, 5.0).unwrap();
    let mut o = IterateOptions::new(g);
    o.n_max = 4;
    let spec = run(&p, &pay, &o).unwrap().final_spec().unwrap().clone();
    let v = fixed_point_value(&spec, &p, &pay, g, &FixedPointOptions::default()).unwrap().value;
    let policy = StrategyPolicy::Curve(spec.clone());
    for (x, y) in [spec.vertex, (0.3, 0.2), (3.0, 0.5), (2.5, 2.5)] {
        let e = estimate(&p, &pay, &policy, x, y, 40_000, 17);
        // grid bias at this step is a few 1e-3
        let gap = (e.mean - v.value(x, y)).abs();
        assert!(gap < 4.0 * e.std_error + 5e-3, "({x}, {y}): {} vs {} ± {}", v.value(x, y), e.mean, e.std_error);
    }
}

#[test]
fn converged_value_is_a_supersolution_and_take_and_run_is_not() {
    let p = ModelParams::symmetric_example();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let g = Grid2D::square(0.05, 5.0).unwrap();
    let mut o = IterateOptions::new(g);
    o.n_max = 10;
    let r = run(&p, &pay, &o).unwrap();
    let spec = r.final_spec().unwrap();
    let v = fixed_point_value(spec, &p, &pay, g, &FixedPointOptions::default()).unwrap().value;
    let rep = check_supersolution(&v, &p, &pay, default_residual_tol(&v, &p), Some(spec));
    assert!(rep.pass, "{rep}");
    let rep0 = check_supersolution(&r.v0, &p, &pay, default_residual_tol(&r.v0, &p), None);
    assert!(!rep0.pass);
}

#[test]
fn no_claims_value_is_exact() {
    let law = ClaimLaw::exponential(3.0);
    let p = ModelParams::new(1.0, 2.0, 0.0, 0.0, law.clone(), law, 0.1, 0.3).unwrap();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let g = Grid2D::square(0.1, 2.0).unwrap();
    let r = run(&p, &pay, &IterateOptions::new(g)).unwrap();
    let spec = r.final_spec().unwrap();
    assert_eq!(spec.vertex, (0.0, 0.0));
    let fp = fixed_point_value(spec, &p, &pay, g, &FixedPointOptions::default()).unwrap();
    let exact = GridFunction::from_fn(g, |x, y| 0.3 * x + 0.7 * y + 17.0);
    assert!(fp.value.sup_diff(&exact) < 1e-12);
    let e = estimate(&p, &pay, &StrategyPolicy::Curve(spec.clone()), 1.0, 1.0, 50, 0);
    assert!((e.mean - 18.0).abs() < 1e-12 && e.std_error < 1e-12);
}
