//! Monte Carlo oracle for the controlled pair of surpluses.
//!
//! Claims arrive on the merged Poisson clock of rate `λ` and hit Company One
//! with probability `λ₁/λ`. Between claims every policy moves the state
//! deterministically, so dividends are integrated in closed form and only
//! claim times are random. Path `i` of an estimate draws from a ChaCha8
//! stream `i` under the estimate's seed, so results do not depend on the
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::curve::{CurveSpec, RegionLabel};
use crate::field::BoundaryPayoffs;
use crate::model::{ClaimLaw, ModelParams};

/// Paths are cut once the discounted upper bound on what is left falls below this.
const TRUNCATION: f64 = 1e-6;
/// Claims after which a path is abandoned and flagged.
const EVENT_CAP: usize = 1_000_000;
/// Distance within which the simulated state counts as lying on a curve.
const SNAP: f64 = 1e-9;

/// A stationary dividend strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyPolicy {
    Curve(CurveSpec),
    /// Company `company` (1 or 2) pays by a barrier at `level`, the other pays nothing.
    Barrier { level: f64, company: u8 },
    /// Both companies act as one with a barrier on `x + y`; excess over the
    /// barrier is paid in proportion to the current surpluses.
    MergerBarrier { level: f64 },
    PayNothing,
    TakeMoneyAndRun,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    pub seed: u64,
    /// Paths abandoned at the event cap.
    pub capped: usize,
}

impl SimEstimate {
    /// `|value − mean| / std_error`.
    pub fn z_score(&self, value: f64) -> f64 {
        (value - self.mean).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

/// Payoff of a single path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub payoff: f64,
    pub claims: usize,
    pub ruined: bool,
    pub capped: bool,
}

/// Where the state sits relative to a curve spec.
#[derive(Debug, Clone, Copy)]
enum Pos {
    Free,
    OnA1(f64),
    OnA2(f64),
    Vertex,
}

struct Path<'a> {
    params: &'a ModelParams,
    x: f64,
    y: f64,
    t: f64,
    disc: f64,
    total: f64,
}

impl Path<'_> {
    fn pay_lump(&mut self, l1: f64, l2: f64) {
        debug_assert!(l1 <= self.x + 1e-9 && l2 <= self.y + 1e-9, "dividend exceeds surplus");
        self.total += self.disc * (self.params.a1 * l1 + self.params.a2() * l2);
        self.x -= l1;
        self.y -= l2;
    }

    /// Advances time by `dt`, paying constant rates `(r1, r2)`.
    fn pay_rates(&mut self, r1: f64, r2: f64, dt: f64) {
        let d = self.params.delta;
        let rate = self.params.a1 * r1 + self.params.a2() * r2;
        if rate != 0.0 {
            let f = if dt.is_finite() { -(-d * dt).exp_m1() / d } else { 1.0 / d };
            self.total += self.disc * rate * f;
        }
        self.t += dt;
        self.disc = if dt.is_finite() { self.disc * (-d * dt).exp() } else { 0.0 };
    }

    fn drift(&mut self, dt: f64) {
        self.x += self.params.p1 * dt;
        self.y += self.params.p2 * dt;
        self.pay_rates(0.0, 0.0, dt);
    }

    fn upper_bound(&self) -> f64 {
        self.params.a1 * self.x + self.params.a2() * self.y + self.params.premium() / self.params.delta
    }
}

fn interarrival<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// Snaps the state onto the strategy's curves after paying any lump sum.
fn settle(spec: &CurveSpec, path: &mut Path<'_>) -> Pos {
    let s = spec.clone().with_tolerance(SNAP);
    match s.classify(path.x, path.y) {
        RegionLabel::A0 => {
            (path.x, path.y) = spec.vertex;
            Pos::Vertex
        }
        RegionLabel::B0 => {
            let (l1, l2) = ((path.x - spec.vertex.0).max(0.0), (path.y - spec.vertex.1).max(0.0));
            path.pay_lump(l1, l2);
            (path.x, path.y) = spec.vertex;
            Pos::Vertex
        }
        RegionLabel::A1 | RegionLabel::B1 => {
            let xc = spec.a1_abscissa(path.y);
            path.pay_lump((path.x - xc).max(0.0), 0.0);
            path.x = xc;
            Pos::OnA1(spec.xi1.inverse(path.y))
        }
        RegionLabel::A2 | RegionLabel::B2 => {
            let yc = spec.a2_ordinate(path.x);
            path.pay_lump(0.0, (path.y - yc).max(0.0));
            path.y = yc;
            Pos::OnA2(spec.xi2.inverse(path.x))
        }
        RegionLabel::C => Pos::Free,
    }
}

/// Moves along `𝒜₁` from coordinate `u` towards the vertex for at most `rem`.
/// Returns the new position and the time used.
fn climb_a1(spec: &CurveSpec, params: &ModelParams, path: &mut Path<'_>, u: f64, rem: f64) -> (Pos, f64) {
    let c = &spec.xi1;
    let us = c.abscissae();
    let zs = c.values();
    if u <= us[0] || c.is_degenerate() {
        (path.x, path.y) = spec.vertex;
        return (Pos::Vertex, 0.0);
    }
    // segment [u_s, u_{s+1}] with u_s < u
    let s = us.partition_point(|&v| v < u) - 1;
    let z = c.value(u);
    let du = u - us[s];
    let dz = zs[s] - z;
    let t_seg = dz / params.p2;
    let rate = if t_seg > 0.0 { du / t_seg } else { 0.0 };
    if t_seg <= rem {
        path.pay_rates(rate, 0.0, t_seg);
        let pos = if s == 0 {
            (path.x, path.y) = spec.vertex;
            Pos::Vertex
        } else {
            (path.x, path.y) = spec.a1_point(us[s]);
            Pos::OnA1(us[s])
        };
        (pos, t_seg)
    } else {
        path.pay_rates(rate, 0.0, rem);
        let frac = rem / t_seg;
        let u_new = u - frac * du;
        let z_new = z + params.p2 * rem;
        path.y = z_new;
        path.x = u_new + spec.ratio * z_new;
        (Pos::OnA1(u_new), rem)
    }
}

/// Mirror of [`climb_a1`] along `𝒜₂`.
fn climb_a2(spec: &CurveSpec, params: &ModelParams, path: &mut Path<'_>, v: f64, rem: f64) -> (Pos, f64) {
    let c = &spec.xi2;
    let vs = c.abscissae();
    let zs = c.values();
    if v <= vs[0] || c.is_degenerate() {
        (path.x, path.y) = spec.vertex;
        return (Pos::Vertex, 0.0);
    }
    let s = vs.partition_point(|&w| w < v) - 1;
    let z = c.value(v);
    let dv = v - vs[s];
    let dz = zs[s] - z;
    let t_seg = dz / params.p1;
    let rate = if t_seg > 0.0 { dv / t_seg } else { 0.0 };
    if t_seg <= rem {
        path.pay_rates(0.0, rate, t_seg);
        let pos = if s == 0 {
            (path.x, path.y) = spec.vertex;
            Pos::Vertex
        } else {
            (path.x, path.y) = spec.a2_point(vs[s]);
            Pos::OnA2(vs[s])
        };
        (pos, t_seg)
    } else {
        path.pay_rates(0.0, rate, rem);
        let frac = rem / t_seg;
        let v_new = v - frac * dv;
        let z_new = z + params.p1 * rem;
        path.x = z_new;
        path.y = v_new + z_new / spec.ratio;
        (Pos::OnA2(v_new), rem)
    }
}

/// Follows the curve strategy for a time `dt` without claims.
fn follow_curve(spec: &CurveSpec, params: &ModelParams, path: &mut Path<'_>, dt: f64) {
    let mut pos = settle(spec, path);
    let mut rem = dt;
    let mut guard = 0usize;
    while rem > 0.0 {
        guard += 1;
        if guard > 10_000_000 {
            break;
        }
        match pos {
            Pos::Vertex => {
                path.pay_rates(params.p1, params.p2, rem);
                return;
            }
            Pos::OnA1(u) => {
                let (p, used) = climb_a1(spec, params, path, u, rem);
                pos = p;
                rem -= used;
            }
            Pos::OnA2(v) => {
                let (p, used) = climb_a2(spec, params, path, v, rem);
                pos = p;
                rem -= used;
            }
            Pos::Free => {
                let (x, y) = (path.x, path.y);
                let (s_hit, target) = if spec.in_o1(x, y) {
                    let u = x - spec.ratio * y;
                    ((spec.xi1.value(u) - y) / params.p2, Pos::OnA1(u))
                } else {
                    let v = y - x / spec.ratio;
                    ((spec.xi2.value(v) - x) / params.p1, Pos::OnA2(v))
                };
                if s_hit >= rem {
                    path.drift(rem);
                    return;
                }
                let s_hit = s_hit.max(0.0);
                path.drift(s_hit);
                rem -= s_hit;
                match target {
                    Pos::OnA1(u) => (path.x, path.y) = spec.a1_point(u),
                    Pos::OnA2(v) => (path.x, path.y) = spec.a2_point(v),
                    _ => unreachable!(),
                }
                pos = target;
            }
        }
    }
}

/// Follows a barrier on the surplus of `company` for `dt`.
fn follow_barrier(params: &ModelParams, path: &mut Path<'_>, level: f64, company: u8, dt: f64) {
    let (s, p) = if company == 1 { (path.x, params.p1) } else { (path.y, params.p2) };
    if s > level {
        if company == 1 {
            path.pay_lump(s - level, 0.0);
        } else {
            path.pay_lump(0.0, s - level);
        }
    }
    let s = s.min(level);
    let t_hit = (level - s) / p;
    if t_hit >= dt {
        path.drift(dt);
        return;
    }
    path.drift(t_hit);
    if company == 1 {
        path.x = level;
        path.y += params.p2 * (dt - t_hit);
        path.pay_rates(params.p1, 0.0, dt - t_hit);
    } else {
        path.y = level;
        path.x += params.p1 * (dt - t_hit);
        path.pay_rates(0.0, params.p2, dt - t_hit);
    }
}

fn follow_merger(params: &ModelParams, path: &mut Path<'_>, level: f64, dt: f64) {
    let s = path.x + path.y;
    if s > level {
        let f = (s - level) / s;
        path.pay_lump(f * path.x, f * path.y);
    }
    let s = (path.x + path.y).min(level);
    let t_hit = (level - s) / (params.p1 + params.p2);
    if t_hit >= dt {
        path.drift(dt);
        return;
    }
    path.drift(t_hit);
    path.pay_rates(params.p1, params.p2, dt - t_hit);
}

fn follow(policy: &StrategyPolicy, params: &ModelParams, path: &mut Path<'_>, dt: f64) {
    match policy {
        StrategyPolicy::Curve(spec) => follow_curve(spec, params, path, dt),
        StrategyPolicy::Barrier { level, company } => follow_barrier(params, path, *level, *company, dt),
        StrategyPolicy::MergerBarrier { level } => follow_merger(params, path, *level, dt),
        StrategyPolicy::PayNothing => path.drift(dt),
        StrategyPolicy::TakeMoneyAndRun => {
            let (x, y) = (path.x, path.y);
            path.pay_lump(x, y);
            path.x = 0.0;
            path.y = 0.0;
            path.pay_rates(params.p1, params.p2, dt);
        }
    }
}

/// Simulates one path from `(x0, y0)` with the given generator.
pub fn simulate_path_with<R: Rng>(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    policy: &StrategyPolicy,
    x0: f64,
    y0: f64,
    rng: &mut R,
) -> PathOutcome {
    let lam = params.lambda();
    let share1 = if lam > 0.0 { params.lambda1 / lam } else { 0.0 };
    let mut path = Path { params, x: x0, y: y0, t: 0.0, disc: 1.0, total: 0.0 };
    let mut claims = 0;
    loop {
        let dt = interarrival(lam, rng);
        follow(policy, params, &mut path, dt);
        // curve points are reconstructed as u + r·z, which can undershoot zero by rounding
        path.x = path.x.max(0.0);
        path.y = path.y.max(0.0);
        if !dt.is_finite() || path.disc * path.upper_bound() < TRUNCATION {
            return PathOutcome { payoff: path.total, claims, ruined: false, capped: false };
        }
        claims += 1;
        if claims > EVENT_CAP {
            return PathOutcome { payoff: path.total, claims, ruined: false, capped: true };
        }
        let hit_one = rng.random::<f64>() < share1;
        let law: &ClaimLaw = if hit_one { &params.law1 } else { &params.law2 };
        let size = law.sample(rng);
        let (own, other) = if hit_one { (&mut path.x, &mut path.y) } else { (&mut path.y, &mut path.x) };
        *own -= size;
        if *own < 0.0 {
            if *own + *other >= 0.0 {
                *other += *own;
                *own = 0.0;
            } else {
                // ruin: the survivor keeps its surplus, the ruined value is zero
                let end = params.a1 * payoffs.v1(path.x) + params.a2() * payoffs.v2(path.y);
                path.total += path.disc * end;
                return PathOutcome { payoff: path.total, claims, ruined: true, capped: false };
            }
        }
        debug_assert!(path.x >= 0.0 && path.y >= 0.0, "state ({}, {}) after claim {claims}", path.x, path.y);
    }
}

/// Generator of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates path `index` under `seed`.
pub fn simulate_path(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    policy: &StrategyPolicy,
    x0: f64,
    y0: f64,
    seed: u64,
    index: u64,
) -> PathOutcome {
    simulate_path_with(params, payoffs, policy, x0, y0, &mut path_rng(seed, index))
}

fn reduce(outcomes: &[(f64, bool)], seed: u64) -> SimEstimate {
    let n = outcomes.len();
    let mean = outcomes.iter().map(|o| o.0).sum::<f64>() / n as f64;
    let var = outcomes.iter().map(|o| (o.0 - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    SimEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        paths: n,
        seed,
        capped: outcomes.iter().filter(|o| o.1).count(),
    }
}

/// Mean discounted payoff over `paths` independent paths.
pub fn estimate(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    policy: &StrategyPolicy,
    x0: f64,
    y0: f64,
    paths: usize,
    seed: u64,
) -> SimEstimate {
    let outcomes: Vec<(f64, bool)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let o = simulate_path(params, payoffs, policy, x0, y0, seed, i);
            (o.payoff, o.capped)
        })
        .collect();
    reduce(&outcomes, seed)
}

/// Barrier strategy of a single company without a partner; ruin ends the
/// payoff.
#[allow(clippy::too_many_arguments)]
pub fn estimate_barrier_1d(
    premium: f64,
    intensity: f64,
    law: &ClaimLaw,
    discount: f64,
    level: f64,
    x0: f64,
    paths: usize,
    seed: u64,
) -> SimEstimate {
    let outcomes: Vec<(f64, bool)> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            let mut disc = 1.0;
            let mut total = 0.0;
            for _ in 0..EVENT_CAP {
                if x > level {
                    total += disc * (x - level);
                    x = level;
                }
                let dt = interarrival(intensity, &mut rng);
                let t_hit = (level - x) / premium;
                if t_hit < dt {
                    let d_hit = disc * (-discount * t_hit).exp();
                    let rest = dt - t_hit;
                    let f = if rest.is_finite() { -(-discount * rest).exp_m1() / discount } else { 1.0 / discount };
                    total += d_hit * premium * f;
                    x = level;
                } else {
                    x += premium * dt;
                }
                if !dt.is_finite() {
                    return (total, false);
                }
                disc *= (-discount * dt).exp();
                x -= law.sample(&mut rng);
                if x < 0.0 || disc * (x.max(0.0) + premium / discount) < TRUNCATION {
                    return (total, false);
                }
            }
            (total, true)
        })
        .collect();
    reduce(&outcomes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::MonotoneCurve;

    fn sec9() -> ModelParams {
        ModelParams::symmetric_example()
    }

    fn quiet() -> ModelParams {
        let law = ClaimLaw::exponential(3.0);
        ModelParams::new(1.0, 2.0, 0.0, 0.0, law.clone(), law, 0.1, 0.3).unwrap()
    }

    #[test]
    fn take_money_and_run_without_claims() {
        let p = quiet();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let o = simulate_path(&p, &pay, &StrategyPolicy::TakeMoneyAndRun, 2.0, 1.0, 7, 0);
        let exact = 0.3 * 2.0 + 0.7 * 1.0 + p.premium() / p.delta;
        assert!((o.payoff - exact).abs() < 1e-12);
        let e = estimate(&p, &pay, &StrategyPolicy::TakeMoneyAndRun, 2.0, 1.0, 100, 7);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn take_money_and_run_with_claims() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let e = estimate(&p, &pay, &StrategyPolicy::TakeMoneyAndRun, 1.0, 0.5, 40_000, 3);
        let c = p.decay();
        let exact = 0.75 + p.premium() / c + p.lambda() * 0.5 * pay.v1(0.0) / c;
        assert!(e.z_score(exact) < 4.0, "{e:?} vs {exact}");
    }

    #[test]
    fn pay_nothing_stays_below_envelope() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let bound = 0.5 * (1.0 + 1.0) + p.premium() / p.delta;
        for i in 0..200 {
            let o = simulate_path(&p, &pay, &StrategyPolicy::PayNothing, 1.0, 1.0, 11, i);
            assert!(o.payoff <= bound);
        }
    }

    #[test]
    fn same_seed_same_estimate() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let pol = StrategyPolicy::MergerBarrier { level: 2.77 };
        let a = estimate(&p, &pay, &pol, 1.0, 1.0, 500, 42);
        let b = estimate(&p, &pay, &pol, 1.0, 1.0, 500, 42);
        assert_eq!(a, b);
        let c = estimate(&p, &pay, &pol, 1.0, 1.0, 500, 43);
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn barrier_1d_matches_closed_form() {
        let law = ClaimLaw::exponential(3.0);
        let v = crate::univariate::solve_standalone(1.0, 20.0 / 9.0, &law, 0.1).unwrap();
        let e = estimate_barrier_1d(1.0, 20.0 / 9.0, &law, 0.1, v.barrier, 0.5, 40_000, 5);
        assert!(e.z_score(v.value(0.5)) < 4.0, "{e:?} vs {}", v.value(0.5));
    }

    #[test]
    fn curve_path_stays_admissible() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let xi = MonotoneCurve::from_fn(0.0, 2.0, 100, |u| 1.0 - (u / 2.0).powi(2)).unwrap();
        let spec = CurveSpec::new((1.0, 1.0), xi.clone(), xi, &p).unwrap();
        let pol = StrategyPolicy::Curve(spec);
        let bound = 0.5 * 8.0 + p.premium() / p.delta;
        for i in 0..300 {
            let o = simulate_path(&p, &pay, &pol, 5.0, 3.0, 1, i);
            assert!(o.payoff.is_finite() && o.payoff <= bound);
            assert!(!o.capped);
        }
    }

    #[test]
    fn curve_without_claims_pays_premiums_at_vertex() {
        let p = quiet();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let r = p.p1 / p.p2;
        let (xb, yb) = (1.0, 1.0);
        let ub = xb - r * yb;
        let xi1 = MonotoneCurve::from_fn(ub, ub + 2.0, 40, |u| yb * (1.0 - (u - ub) / 2.0)).unwrap();
        let vb = yb - xb / r;
        let xi2 = MonotoneCurve::from_fn(vb, vb + 1.0, 40, |v| xb * (1.0 - (v - vb))).unwrap();
        let spec = CurveSpec::new((xb, yb), xi1, xi2, &p).unwrap();
        // from the vertex: premiums forever
        let o = simulate_path(&p, &pay, &StrategyPolicy::Curve(spec.clone()), xb, yb, 0, 0);
        assert!((o.payoff - p.premium() / p.delta).abs() < 1e-12);
        // from B0: the excess first
        let o = simulate_path(&p, &pay, &StrategyPolicy::Curve(spec), 3.0, 2.0, 0, 0);
        assert!((o.payoff - (0.3 * 2.0 + 0.7 * 1.0 + p.premium() / p.delta)).abs() < 1e-12);
    }

    #[test]
    fn doubling_paths_shrinks_error() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let pol = StrategyPolicy::MergerBarrier { level: 2.77 };
        let a = estimate(&p, &pay, &pol, 1.0, 1.0, 4000, 9);
        let b = estimate(&p, &pay, &pol, 1.0, 1.0, 16_000, 9);
        let ratio = b.std_error / a.std_error;
        assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }
}
