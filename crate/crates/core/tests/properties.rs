use collab_core::evaluate::one_step_value;
use collab_core::field::integral_field;
use collab_core::simulate::{simulate_path, PathOutcome};
use collab_core::verify::{check_envelope, check_lipschitz, check_monotone};
use collab_core::*;
use proptest::prelude::*;

fn law() -> impl Strategy<Value = ClaimLaw> {
    (0.5f64..5.0).prop_map(ClaimLaw::exponential)
}

/// Valid models with enough net profit for quick runs.
fn model() -> impl Strategy<Value = ModelParams> {
    (0.5f64..2.0, 0.5f64..2.0, 0.0f64..3.0, 0.0f64..3.0, law(), law(), 0.05f64..0.3, 0.1f64..0.9).prop_filter_map(
        "net profit",
        |(p1, p2, l1, l2, f1, f2, d, a1)| ModelParams::new(p1, p2, l1, l2, f1, f2, d, a1).ok(),
    )
}

/// Quadratic arms wide enough that both coordinates move monotonically along them.
fn quadratic_spec(p: &ModelParams, xb: f64, yb: f64, w1: f64, w2: f64) -> CurveSpec {
    let r = p.p1 / p.p2;
    let (w1, w2) = (w1 + 2.0 * r * yb, w2 + 2.0 * xb / r);
    let ub = xb - r * yb;
    let xi1 = MonotoneCurve::from_fn(ub, ub + w1, 30, |u| yb * (1.0 - ((u - ub) / w1).powi(2))).unwrap();
    let vb = yb - xb / r;
    let xi2 = MonotoneCurve::from_fn(vb, vb + w2, 30, |v| xb * (1.0 - ((v - vb) / w2).powi(2))).unwrap();
    CurveSpec::new((xb, yb), xi1, xi2, p).unwrap()
}

fn grid_for(spec: &CurveSpec) -> Grid2D {
    let reach = spec.xi1.end().max(spec.xi2.end()).max(spec.vertex.0).max(spec.vertex.1);
    Grid2D::square(0.1, (reach + 2.0).ceil()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn validate_is_idempotent(p in model()) {
        prop_assert_eq!(p.validate(), p.validate());
        prop_assert!(p.validate().is_empty());
        prop_assert!(p.swapped().validate().is_empty());
    }

    #[test]
    fn integral_operator_is_positive_and_linear(p in model(), a in -2.0f64..2.0, b in 0.0f64..3.0) {
        let g = Grid2D::square(0.25, 3.0).unwrap();
        let w1 = GridFunction::from_fn(g, |x, y| x * y + 1.0);
        let w2 = GridFunction::from_fn(g, |x, y| (x - y).abs() + 0.5);
        let lhs = integral_field(&p, &w1.zip_with(&w2, |u, v| a * u + b * v));
        let rhs = integral_field(&p, &w1).zip_with(&integral_field(&p, &w2), |u, v| a * u + b * v);
        prop_assert!(lhs.sup_diff(&rhs) <= 1e-10 * (1.0 + rhs.sup_abs()));
        prop_assert!(integral_field(&p, &w2).min() >= 0.0);
    }

    #[test]
    fn one_step_operator_is_monotone_and_contracting(p in model(), xb in 0.2f64..1.0, yb in 0.2f64..1.0, shift in 0.0f64..2.0) {
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let spec = quadratic_spec(&p, xb, yb, 1.0, 1.0);
        let g = grid_for(&spec);
        let w = GridFunction::from_fn(g, |x, y| p.a1 * x + p.a2() * y);
        let w_up = GridFunction::from_fn(g, |x, y| p.a1 * x + p.a2() * y + shift * (1.0 + (x * y).sin().abs()));
        let t = one_step_value(&spec, &p, &pay, &w).unwrap();
        let t_up = one_step_value(&spec, &p, &pay, &w_up).unwrap();
        let diff = t_up.zip_with(&t, |a, b| a - b);
        prop_assert!(diff.min() >= -1e-12);
        prop_assert!(t_up.sup_diff(&t) <= p.lambda() / p.decay() * w_up.sup_diff(&w) + 1e-12);
    }

    #[test]
    fn one_step_values_stay_in_the_envelope(p in model(), xb in 0.2f64..1.0, yb in 0.2f64..1.0) {
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let spec = quadratic_spec(&p, xb, yb, 1.5, 0.8);
        let g = grid_for(&spec);
        let w = GridFunction::from_fn(g, |x, y| p.a1 * x + p.a2() * y);
        let v = one_step_value(&spec, &p, &pay, &w).unwrap();
        let upper = GridFunction::from_fn(g, |x, y| p.a1 * x + p.a2() * y + p.premium() / p.delta);
        prop_assert!(upper.zip_with(&v, |u, v| u - v).min() >= -1e-9);
    }

    #[test]
    fn paths_are_admissible_and_bounded(p in model(), x in 0.0f64..3.0, y in 0.0f64..3.0, seed in 0u64..1000) {
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let spec = quadratic_spec(&p, 0.6, 0.4, 1.2, 0.9);
        let bound = p.a1 * x + p.a2() * y + p.premium() / p.delta;
        for policy in [
            StrategyPolicy::Curve(spec),
            StrategyPolicy::MergerBarrier { level: 1.5 },
            StrategyPolicy::Barrier { level: 1.0, company: 2 },
            StrategyPolicy::PayNothing,
            StrategyPolicy::TakeMoneyAndRun,
        ] {
            for i in 0..20 {
                let o: PathOutcome = simulate_path(&p, &pay, &policy, x, y, seed, i);
                prop_assert!(o.payoff >= 0.0 && !o.capped);
                // the ruin payoff adds at most the survivor's discounted value
                let slack = if o.ruined { pay.v1(x + y).max(pay.v2(x + y)) } else { 0.0 };
                prop_assert!(o.payoff <= bound + slack + 1e-9, "{:?} {} > {}", policy, o.payoff, bound);
            }
        }
    }

    #[test]
    fn path_depends_only_on_seed_and_index(seed in 0u64..1000, i in 0u64..50) {
        let p = ModelParams::symmetric_example();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let policy = StrategyPolicy::MergerBarrier { level: 2.77 };
        let a = simulate_path(&p, &pay, &policy, 0.7, 1.1, seed, i);
        let b = simulate_path(&p, &pay, &policy, 0.7, 1.1, seed, i);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn first_iterate_satisfies_growth_and_lipschitz_bounds() {
    let p = ModelParams::symmetric_example();
    let pay = BoundaryPayoffs::standalone(&p).unwrap();
    let mut o = IterateOptions::new(Grid2D::square(0.05, 4.0).unwrap());
    o.n_max = 2;
    let r = collab_core::iterate::run(&p, &pay, &o).unwrap();
    for s in &r.states {
        assert!(check_envelope(&s.value, &p).pass);
        assert!(check_lipschitz(&s.value, &p).pass, "{}", check_lipschitz(&s.value, &p));
        assert!(check_monotone(&s.value, 1e-9).pass);
    }
}
