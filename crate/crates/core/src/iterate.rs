//! The n-step scheme.
//!
//! `Vⁿ` is the best value when the strategy may be chosen until the n-th
//! claim and the companies take the money and run afterwards. Each step looks
//! for the best one-step curve strategy with continuation `Vⁿ⁻¹`: the vertex
//! maximises `H/(δ+λ) − a₁x − a₂y` and the curves solve the Euler-Lagrange
//! conditions `∂ₓH = a₁(δ+λ)` along `𝒜₁` and `∂_yH = a₂(δ+λ)` along `𝒜₂`.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::curve::{CurveSpec, MonotoneCurve};
use crate::error::{CurveError, Error, Result};
use crate::evaluate::{one_step_value_from_h, HField};
use crate::field::{overflow_field, BoundaryPayoffs, Grid2D, GridFunction};
use crate::model::ModelParams;
use crate::quad::bisect;
use crate::verify::{check_supersolution_h, residual_tol, ResidualReport};

/// Which weights multiply the survivor's value in the take-the-money-and-run
/// payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V0Convention {
    /// The survivor's value is weighted by the survivor's own dividend weight.
    #[default]
    Payoff,
    /// `λ₁` pairs with `a₁V₂⁰(0)` and `λ₂` with `a₂V₁⁰(0)`.
    Paper,
}

impl std::str::FromStr for V0Convention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "payoff" => Ok(Self::Payoff),
            "paper" => Ok(Self::Paper),
            other => Err(format!("unknown V0 convention '{other}', expected 'payoff' or 'paper'")),
        }
    }
}

impl std::fmt::Display for V0Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Payoff => "payoff",
            Self::Paper => "paper",
        })
    }
}

/// Constant part of the take-the-money-and-run value.
pub fn take_run_constant(params: &ModelParams, payoffs: &BoundaryPayoffs, convention: V0Convention) -> f64 {
    let lam = params.lambda();
    let p = params.premium();
    if lam == 0.0 {
        return p / params.delta;
    }
    let c = params.decay();
    let (s1, s2) = (payoffs.v1(0.0), payoffs.v2(0.0));
    match convention {
        V0Convention::Payoff => p / c + (params.lambda1 * params.a2() * s2 + params.lambda2 * params.a1 * s1) / c,
        V0Convention::Paper => {
            params.lambda1 / c * (p / lam + params.a1 * s2) + params.lambda2 / c * (p / lam + params.a2() * s1)
        }
    }
}

/// `V⁰(x, y) = a₁x + a₂y + const`.
pub fn take_run_value(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    grid: Grid2D,
    convention: V0Convention,
) -> GridFunction {
    let k = take_run_constant(params, payoffs, convention);
    GridFunction::from_fn(grid, |x, y| params.a1 * x + params.a2() * y + k)
}

/// `H_{n−1} = 𝓘(Vⁿ⁻¹) + U` and its partials.
pub fn build_h(params: &ModelParams, payoffs: &BoundaryPayoffs, prev: &GridFunction) -> HField {
    HField::build(params, payoffs, prev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSearch {
    pub vertex: (f64, f64),
    /// Lattice node maximising `G`.
    pub lattice: (usize, usize),
    pub interior: bool,
    pub refined: bool,
}

/// Maximises `G = H/(δ+λ) − a₁x − a₂y` over lattice nodes (ties to the
/// lexicographically smallest node) and refines with the critical-point
/// system `∂ₓH = a₁(δ+λ)`, `∂_yH = a₂(δ+λ)`. With `diagonal` the search is
/// restricted to `x = y`.
pub fn find_vertex(hf: &HField, params: &ModelParams, diagonal: bool) -> VertexSearch {
    let g = hf.grid();
    let c = params.decay();
    let objective = |i: usize, j: usize| {
        let (x, y) = g.coords(i, j);
        hf.h.at(i, j) / c - params.a1 * x - params.a2() * y
    };
    let mut best = ((0usize, 0usize), f64::NEG_INFINITY);
    let better = |v: f64, b: f64| b == f64::NEG_INFINITY || v > b + 1e-12 * (1.0 + b.abs());
    if diagonal {
        for i in 0..=g.nx.min(g.ny) {
            let v = objective(i, i);
            if better(v, best.1) {
                best = ((i, i), v);
            }
        }
    } else {
        for i in 0..=g.nx {
            for j in 0..=g.ny {
                let v = objective(i, j);
                if better(v, best.1) {
                    best = ((i, j), v);
                }
            }
        }
    }
    let (i, j) = best.0;
    let lattice_pt = g.coords(i, j);
    let interior = i > 0 && j > 0 && i < g.nx && j < g.ny;
    let mut out = VertexSearch { vertex: lattice_pt, lattice: (i, j), interior, refined: false };
    if !interior {
        if (i, j) != (0, 0) {
            warn!("vertex not interior; critical-point system skipped");
        }
        return out;
    }
    let h = g.step;
    let tx = params.a1 * c;
    let ty = params.a2() * c;
    if diagonal {
        let f = |t: f64| hf.hx.value(t, t) - tx;
        let (x0, _) = lattice_pt;
        let root = bisect(f, x0 - h, x0 + h, 1e-12).or_else(|| bisect(f, x0 - h, x0, 1e-12));
        if let Some(t) = root {
            out.vertex = (t, t);
            out.refined = true;
        }
        return out;
    }
    // damped Newton on the interpolated partials, confined to the adjacent cells
    let (x0, y0) = lattice_pt;
    let (mut x, mut y) = lattice_pt;
    let eps = 1e-3 * h;
    for _ in 0..50 {
        let fx = hf.hx.value(x, y) - tx;
        let fy = hf.hy.value(x, y) - ty;
        if fx.abs().max(fy.abs()) < 1e-10 {
            out.vertex = (x, y);
            out.refined = true;
            break;
        }
        let j11 = (hf.hx.value(x + eps, y) - hf.hx.value(x - eps, y)) / (2.0 * eps);
        let j12 = (hf.hx.value(x, y + eps) - hf.hx.value(x, y - eps)) / (2.0 * eps);
        let j21 = (hf.hy.value(x + eps, y) - hf.hy.value(x - eps, y)) / (2.0 * eps);
        let j22 = (hf.hy.value(x, y + eps) - hf.hy.value(x, y - eps)) / (2.0 * eps);
        let det = j11 * j22 - j12 * j21;
        if !(det.abs() > 0.0) {
            break;
        }
        let dx = (j22 * fx - j12 * fy) / det;
        let dy = (j11 * fy - j21 * fx) / det;
        x = (x - dx).clamp(x0 - h, x0 + h);
        y = (y - dy).clamp(y0 - h, y0 + h);
    }
    out
}

/// Diagnostics of an Euler-Lagrange curve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveDiagnostics {
    /// Samples where more than one root was found in `(0, ȳ]`.
    pub multi_root_samples: usize,
    pub max_multiplicity: usize,
    /// Samples moved onto the y-axis to keep the curve in the quadrant.
    pub axis_samples: usize,
}

/// Solves `∂ₓH(u + r z, z) = a₁(δ+λ)` for the largest root `z ∈ (0, z_top]`
/// on lattice-spaced `u ≥ ū` until the root reaches zero.
fn euler_lagrange_curve(
    hf: &HField,
    params: &ModelParams,
    vertex: (f64, f64),
    tol: f64,
) -> std::result::Result<(MonotoneCurve, CurveDiagnostics), CurveError> {
    let g = hf.grid();
    let h = g.step;
    let r = params.p1 / params.p2;
    let target = params.a1 * params.decay();
    let (xb, yb) = vertex;
    let ub = xb - r * yb;
    let mut diag = CurveDiagnostics::default();
    if yb <= 0.0 {
        return Ok((MonotoneCurve::new(vec![ub], vec![0.0])?, diag));
    }
    let phi = |u: f64, z: f64| hf.hx.value(u + r * z, z) - target;
    let mut us = vec![ub];
    let mut zs = vec![yb];
    let scan = 0.25 * h;
    let n_scan = ((yb / scan).ceil() as usize).max(4);
    let mut k = 1usize;
    loop {
        let u = ub + k as f64 * h;
        let z_prev = *zs.last().unwrap();
        if u + r * z_prev > g.x_max() + 1e-9 {
            return Err(CurveError::Construction(format!("curve leaves the grid at u = {u}")));
        }
        // scan down from ȳ, collecting sign changes
        let mut roots = Vec::new();
        let mut z_hi = yb;
        let mut f_hi = phi(u, z_hi);
        for m in 1..=n_scan {
            let z_lo = (yb - m as f64 * yb / n_scan as f64).max(0.0);
            let f_lo = phi(u, z_lo);
            if f_hi == 0.0 || f_lo.signum() != f_hi.signum() {
                let root = bisect(|z| phi(u, z), z_lo, z_hi, tol).unwrap_or(z_hi);
                if root > 0.0 {
                    roots.push(root);
                }
            }
            z_hi = z_lo;
            f_hi = f_lo;
        }
        if roots.len() > 1 {
            diag.multi_root_samples += 1;
        }
        diag.max_multiplicity = diag.max_multiplicity.max(roots.len());
        // the curve may not leave the quadrant: below z = −u/r it follows the y-axis
        let floor = (-u / r).max(0.0);
        match roots.first().copied() {
            Some(z) if z.max(floor) < z_prev => {
                if z < floor {
                    diag.axis_samples += 1;
                }
                us.push(u);
                zs.push(z.max(floor));
            }
            Some(_) => return Err(CurveError::NotDecreasing { at: u }),
            None if floor > 0.0 => {
                diag.axis_samples += 1;
                us.push(u);
                zs.push(floor);
            }
            None => {
                // the root left (0, ȳ]: locate M where it reaches the axis
                let u_prev = *us.last().unwrap();
                let m = bisect(|v| phi(v, 0.0), u_prev, u, tol).ok_or_else(|| {
                    CurveError::Construction(format!("no root bracketed between u = {u_prev} and u = {u}"))
                })?;
                let m = m.max(0.0);
                let m = if m <= u_prev { u_prev + 1e-9 * h } else { m };
                us.push(m);
                zs.push(0.0);
                break;
            }
        }
        k += 1;
        if k > 100 * (g.nx + g.ny) {
            return Err(CurveError::Construction("curve did not reach the axis".into()));
        }
    }
    Ok((MonotoneCurve::new(us, zs)?, diag))
}

/// Euler-Lagrange curves for a given vertex; `ξ₂` is obtained from the
/// problem with the companies exchanged.
pub fn solve_euler_lagrange(
    hf: &HField,
    params: &ModelParams,
    vertex: (f64, f64),
    tol: f64,
) -> std::result::Result<(CurveSpec, CurveDiagnostics), CurveError> {
    let (xi1, d1) = euler_lagrange_curve(hf, params, vertex, tol)?;
    let (xi2, d2) = euler_lagrange_curve(&hf.transpose(), &params.swapped(), (vertex.1, vertex.0), tol)?;
    let spec = CurveSpec::new(vertex, xi1, xi2, params)?.with_tolerance(0.5 * hf.grid().step);
    let diag = CurveDiagnostics {
        multi_root_samples: d1.multi_root_samples + d2.multi_root_samples,
        max_multiplicity: d1.max_multiplicity.max(d2.max_multiplicity),
        axis_samples: d1.axis_samples + d2.axis_samples,
    };
    Ok((spec, diag))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateOptions {
    pub grid: Grid2D,
    pub n_max: usize,
    /// Stop early once `‖Vⁿ − Vⁿ⁻¹‖∞ ≤ tol`.
    pub tol: f64,
    /// Bisection tolerance of the Euler-Lagrange roots.
    pub root_tol: f64,
    pub convention: V0Convention,
    /// Restrict the vertex to the diagonal; `None` decides from the model.
    pub diagonal: Option<bool>,
    /// The per-step supersolution check uses `residual_factor·h·(1 + sup|V|)·δ`.
    pub residual_factor: f64,
}

impl IterateOptions {
    pub fn new(grid: Grid2D) -> Self {
        Self {
            grid,
            n_max: 20,
            tol: 0.0,
            root_tol: 1e-8,
            convention: V0Convention::Payoff,
            diagonal: None,
            residual_factor: 5.0,
        }
    }
}

/// One recorded step of the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub n: usize,
    pub value: GridFunction,
    pub spec: CurveSpec,
    pub sup_delta: f64,
    /// Smallest `Vⁿ − Vⁿ⁻¹` over nodes.
    pub min_delta: f64,
    pub residual_report: ResidualReport,
    /// Distance to the previous step's spec.
    pub curve_distance: Option<f64>,
    pub vertex_refined: bool,
    /// The Euler-Lagrange construction failed and the previous spec was used.
    pub fallback: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRun {
    pub v0: GridFunction,
    /// `V⁰(0, 0)` under both conventions, `(payoff, paper)`.
    pub v0_at_origin: (f64, f64),
    pub states: Vec<IterationState>,
}

impl IterationRun {
    pub fn final_value(&self) -> &GridFunction {
        self.states.last().map_or(&self.v0, |s| &s.value)
    }

    pub fn final_spec(&self) -> Option<&CurveSpec> {
        self.states.last().map(|s| &s.spec)
    }
}

/// A strategy paying everything at once and the premiums until the first claim.
fn take_run_spec(params: &ModelParams) -> CurveSpec {
    let xi = MonotoneCurve::new(vec![0.0], vec![0.0]).expect("degenerate curve");
    CurveSpec::new((0.0, 0.0), xi.clone(), xi, params).expect("origin spec")
}

/// Runs the scheme for up to `n_max` steps.
pub fn run(params: &ModelParams, payoffs: &BoundaryPayoffs, opts: &IterateOptions) -> Result<IterationRun> {
    if opts.n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let grid = opts.grid;
    let diagonal = opts.diagonal.unwrap_or_else(|| params.is_symmetric());
    let v0 = take_run_value(params, payoffs, grid, opts.convention);
    let v0_at_origin = (
        take_run_constant(params, payoffs, V0Convention::Payoff),
        take_run_constant(params, payoffs, V0Convention::Paper),
    );
    info!("V0(0,0): payoff convention {:.10}, paper convention {:.10}", v0_at_origin.0, v0_at_origin.1);
    let u = overflow_field(params, payoffs, grid);
    let mut states: Vec<IterationState> = Vec::with_capacity(opts.n_max);
    let mut prev = v0.clone();
    for n in 1..=opts.n_max {
        let hf = HField::build_with_overflow(params, &u, &prev);
        let mut diagnostics = Vec::new();
        let search = find_vertex(&hf, params, diagonal);
        if !search.interior && search.lattice != (0, 0) {
            diagnostics.push("vertex not interior; critical-point system skipped".to_string());
        }
        let built = solve_euler_lagrange(&hf, params, search.vertex, opts.root_tol);
        let (spec, fallback) = match built {
            Ok((spec, d)) => {
                if d.multi_root_samples > 0 {
                    diagnostics.push(format!(
                        "{} curve samples had multiple roots (max {}); largest taken",
                        d.multi_root_samples, d.max_multiplicity
                    ));
                }
                if d.axis_samples > 0 {
                    diagnostics.push(format!("{} curve samples clamped to the boundary axis", d.axis_samples));
                }
                (spec, false)
            }
            Err(e) => {
                let prior = states.last().map(|s| s.spec.clone()).unwrap_or_else(|| take_run_spec(params));
                warn!("step {n}: curve construction failed ({e}); reusing previous spec");
                diagnostics.push(format!("curve construction failed: {e}; previous spec reused"));
                (prior, true)
            }
        };
        let value = one_step_value_from_h(&spec, params, &hf)?;
        let sup_delta = value.sup_diff(&prev);
        let min_delta = value
            .samples()
            .iter()
            .zip(prev.samples())
            .fold(f64::INFINITY, |m, (a, b)| m.min(a - b));
        let tol = residual_tol(&value, params, opts.residual_factor);
        let residual_report = check_supersolution_h(&value, params, &hf.h, tol, Some(&spec));
        let curve_distance = states.last().map(|s| s.spec.distance(&spec));
        info!(
            "step {n}: vertex ({:.6}, {:.6}), M1 {:.6}, M2 {:.6}, sup delta {:.3e}",
            spec.vertex.0,
            spec.vertex.1,
            spec.xi1.end(),
            spec.xi2.end(),
            sup_delta
        );
        states.push(IterationState {
            n,
            value: value.clone(),
            spec,
            sup_delta,
            min_delta,
            residual_report,
            curve_distance,
            vertex_refined: search.refined,
            fallback,
            diagnostics,
        });
        prev = value;
        if sup_delta <= opts.tol {
            break;
        }
    }
    Ok(IterationRun { v0, v0_at_origin, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClaimLaw;

    fn sec9() -> ModelParams {
        ModelParams::symmetric_example()
    }

    #[test]
    fn take_run_no_claims() {
        let law = ClaimLaw::exponential(3.0);
        let p = ModelParams::new(1.0, 2.0, 0.0, 0.0, law.clone(), law, 0.1, 0.3).unwrap();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let g = Grid2D::square(0.1, 2.0).unwrap();
        for conv in [V0Convention::Payoff, V0Convention::Paper] {
            let v = take_run_value(&p, &pay, g, conv);
            assert!((v.value(1.0, 1.0) - (0.3 + 0.7 + p.premium() / 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn take_run_conventions() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let c = p.decay();
        let s = pay.v1(0.0);
        let payoff = 1.0 / c + (20.0 / 9.0) * 0.5 * s * 2.0 / c;
        assert!((take_run_constant(&p, &pay, V0Convention::Payoff) - payoff).abs() < 1e-12);
        // the conventions coincide in the symmetric case
        assert!(
            (take_run_constant(&p, &pay, V0Convention::Payoff) - take_run_constant(&p, &pay, V0Convention::Paper))
                .abs()
                < 1e-12
        );
        let mut q = p.clone();
        q.a1 = 0.3;
        q.lambda2 = 1.0;
        let pay_q = BoundaryPayoffs::standalone(&q).unwrap();
        let a = take_run_constant(&q, &pay_q, V0Convention::Payoff);
        let b = take_run_constant(&q, &pay_q, V0Convention::Paper);
        assert!((a - b).abs() > 1e-3);
        // affine with slopes (a₁, a₂)
        let g = Grid2D::square(0.1, 2.0).unwrap();
        let v = take_run_value(&q, &pay_q, g, V0Convention::Payoff);
        assert!((v.at(3, 0) - v.at(2, 0) - 0.3 * 0.1).abs() < 1e-12);
        assert!((v.at(0, 3) - v.at(0, 2) - 0.7 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn h_of_zero_and_constants() {
        let p = sec9();
        let law = ClaimLaw::exponential(3.0);
        let quiet = ModelParams::new(1.0, 1.0, 0.0, 0.0, law.clone(), law, 0.1, 0.5).unwrap();
        let pay = BoundaryPayoffs::standalone(&quiet).unwrap();
        let g = Grid2D::square(0.1, 2.0).unwrap();
        assert_eq!(build_h(&quiet, &pay, &GridFunction::constant(g, 0.0)).h.sup_abs(), 0.0);
        // zero payoffs through zero weights on the survivor terms
        let mut q = p.clone();
        q.a1 = 0.0;
        q.lambda2 = 0.0;
        let pay_q = BoundaryPayoffs::standalone(&q).unwrap();
        let hf = build_h(&q, &pay_q, &GridFunction::constant(g, 2.0));
        for &(i, j) in &[(0, 0), (5, 7), (20, 20)] {
            let (x, y) = g.coords(i, j);
            let expect = 2.0 * q.lambda1 * q.law1.cdf(x + y)
                + q.lambda1 * q.a2() * pay_q.v2(y) * q.law1.tail(x + y).unwrap();
            assert!((hf.h.at(i, j) - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn vertex_of_concave_quadratic() {
        let p = sec9();
        let c = p.decay();
        let g = Grid2D::square(0.02, 3.0).unwrap();
        // ∇H = c(a₁, a₂) exactly at (1.2345, 0.8765)
        let (xs, ys) = (1.2345, 0.8765);
        let hfun = |x: f64, y: f64| c * (0.5 * x + 0.5 * y) - (x - xs).powi(2) - 0.7 * (y - ys).powi(2) - 0.3 * (x - xs) * (y - ys);
        let hf = HField::from_values(GridFunction::from_fn(g, hfun));
        let v = find_vertex(&hf, &p, false);
        assert!(v.interior && v.refined, "{v:?} {} {}", hf.hx.value(xs, ys) - 0.5 * c, hf.hy.value(xs, ys) - 0.5 * c);
        // central differences of a quadratic are exact, bilinear interpolation of
        // the partials is exact for affine partials
        assert!((v.vertex.0 - xs).abs() < 1e-6 && (v.vertex.1 - ys).abs() < 1e-6, "{:?}", v.vertex);
    }

    #[test]
    fn vertex_tie_break() {
        let p = sec9();
        let c = p.decay();
        let g = Grid2D::square(0.1, 1.0).unwrap();
        let hf = HField::from_values(GridFunction::from_fn(g, |x, y| c * (0.5 * x + 0.5 * y)));
        let v = find_vertex(&hf, &p, false);
        assert_eq!(v.lattice, (0, 0));
        assert!(!v.interior);
    }

    #[test]
    fn flat_euler_lagrange_fails() {
        // ∂ₓH = a₁c·e^{ȳ−y}: the root is z = ȳ at every u, so the curve is not decreasing
        let p = sec9();
        let c = p.decay();
        let g = Grid2D::square(0.02, 4.0).unwrap();
        let yb = 1.0;
        let hx = GridFunction::from_fn(g, |_, y| 0.5 * c * (yb - y).exp());
        let hf = HField { h: GridFunction::constant(g, 0.0), hx: hx.clone(), hy: hx.transpose() };
        let r = solve_euler_lagrange(&hf, &p, (1.0, yb), 1e-8);
        assert!(matches!(r, Err(CurveError::NotDecreasing { .. })), "{r:?}");
    }

    #[test]
    fn euler_lagrange_on_synthetic_field() {
        // ∂ₓH(x, y) = a₁c(1 + (x + y − 2)): the curve is the segment x + y = 2
        let p = sec9();
        let c = p.decay();
        let g = Grid2D::square(0.02, 4.0).unwrap();
        let hx = GridFunction::from_fn(g, |x, y| 0.5 * c * (1.0 + (x + y - 2.0)));
        let hf = HField { h: GridFunction::constant(g, 0.0), hx: hx.clone(), hy: hx.transpose() };
        let (spec, d) = solve_euler_lagrange(&hf, &p, (1.0, 1.0), 1e-10).unwrap();
        assert_eq!(d.multi_root_samples, 0);
        assert!((spec.xi1.end() - 2.0).abs() < 1e-8);
        for (&u, &z) in spec.xi1.abscissae().iter().zip(spec.xi1.values()) {
            assert!((u + 2.0 * z - 2.0).abs() < 1e-8, "u={u} z={z}");
        }
        assert!(spec.mirror_gap() < 1e-12);
    }

    #[test]
    fn single_step_dominates_v0() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let g = Grid2D::square(0.1, 4.0).unwrap();
        let mut opts = IterateOptions::new(g);
        opts.n_max = 1;
        let run = run(&p, &pay, &opts).unwrap();
        assert_eq!(run.states.len(), 1);
        assert!(run.states[0].min_delta >= -1e-12);
    }
}
