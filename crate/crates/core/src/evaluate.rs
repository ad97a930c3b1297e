//! Value of curve strategies.
//!
//! Until the first claim the controlled process is deterministic, so the value
//! of following a curve strategy up to the first claim and a continuation
//! `W₀` afterwards is an explicit integral of `H = 𝓘(W₀) + U` along the
//! trajectory. On `𝒪₁` the trajectory drifts with slope `p₂/p₁` up to `𝒜₁`
//! and then climbs the curve towards the vertex; `k(u)` is the value of a
//! state on `𝒜₁`. The side `𝒪₂` is handled by exchanging the companies.
//! Iterating the one-step map from `a₁x + a₂y` converges to the value of the
//! curve strategy itself.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::CurveSpec;
use crate::error::{Error, Result};
use crate::field::{integral_field, overflow_field, BoundaryPayoffs, Grid2D, GridFunction};
use crate::model::ModelParams;
use crate::quad::exp_linear_weights;

/// `H = 𝓘(W₀) + U` with its central-difference partials.
#[derive(Debug, Clone, PartialEq)]
pub struct HField {
    pub h: GridFunction,
    pub hx: GridFunction,
    pub hy: GridFunction,
}

impl HField {
    pub fn build(params: &ModelParams, payoffs: &BoundaryPayoffs, w0: &GridFunction) -> Self {
        let u = overflow_field(params, payoffs, w0.grid);
        Self::build_with_overflow(params, &u, w0)
    }

    /// As [`HField::build`] with a precomputed `U` field.
    pub fn build_with_overflow(params: &ModelParams, u: &GridFunction, w0: &GridFunction) -> Self {
        let i = integral_field(params, w0);
        Self::from_values(i.zip_with(u, |a, b| a + b))
    }

    pub fn from_values(h: GridFunction) -> Self {
        let hx = h.dx_field();
        let hy = h.dy_field();
        Self { h, hx, hy }
    }

    /// The field seen after exchanging the companies.
    pub fn transpose(&self) -> Self {
        Self { h: self.h.transpose(), hx: self.hy.transpose(), hy: self.hx.transpose() }
    }

    pub fn grid(&self) -> Grid2D {
        self.h.grid
    }
}

/// Value `k(u)` of the state `(u + rξ₁(u), ξ₁(u))` on `𝒜₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct KProfile {
    pub u: Vec<f64>,
    pub k: Vec<f64>,
    z: Vec<f64>,
    h_at: Vec<f64>,
    decay: f64,
    a1: f64,
    p2: f64,
    ratio: f64,
}

impl KProfile {
    /// `k` at the vertex coordinate `ū`.
    pub fn at_vertex(&self) -> f64 {
        self.k[0]
    }

    fn step(&self, k_a: f64, du: f64, dz: f64, h_a: f64, h_b: f64) -> f64 {
        // travel time from b up to a is dz / p₂; dividends paid equal du
        let t = dz / self.p2;
        let (wb, wa) = exp_linear_weights(self.decay, t);
        let e = (-self.decay * t).exp();
        let pay = if t > 0.0 { self.a1 * du * (1.0 - e) / (self.decay * t) } else { self.a1 * du };
        e * k_a + pay + wb * h_b + wa * h_a
    }

    /// `k(u)` for `u` in the curve domain, by a partial step from the sample
    /// below `u`.
    pub fn value(&self, u: f64, hf: &HField) -> f64 {
        let n = self.u.len();
        if n == 1 || u <= self.u[0] {
            return self.k[0];
        }
        let s = self.u.partition_point(|&v| v <= u).saturating_sub(1).min(n - 2);
        if u == self.u[s] {
            return self.k[s];
        }
        let t = ((u - self.u[s]) / (self.u[s + 1] - self.u[s])).min(1.0);
        let z = self.z[s] + t * (self.z[s + 1] - self.z[s]);
        let hb = hf.h.value(u + self.ratio * z, z);
        self.step(self.k[s], u - self.u[s], self.z[s] - z, self.h_at[s], hb)
    }
}

/// Sampled `k` on the abscissae of `ξ₁`.
pub fn k_profile(spec: &CurveSpec, params: &ModelParams, hf: &HField) -> Result<KProfile> {
    let g = hf.grid();
    let c = params.decay();
    let curve = &spec.xi1;
    let u = curve.abscissae().to_vec();
    let z = curve.values().to_vec();
    let mut h_at = Vec::with_capacity(u.len());
    for (&uk, &zk) in u.iter().zip(&z) {
        let (x, y) = (uk + spec.ratio * zk, zk);
        if !g.contains(x, y) {
            return Err(Error::Domain(format!(
                "curve point ({x}, {y}) outside the grid [0, {}] x [0, {}]",
                g.x_max(),
                g.y_max()
            )));
        }
        h_at.push(hf.h.value(x, y));
    }
    let mut prof = KProfile {
        u,
        k: Vec::with_capacity(z.len()),
        z,
        h_at,
        decay: c,
        a1: params.a1,
        p2: params.p2,
        ratio: spec.ratio,
    };
    prof.k.push((params.premium() + prof.h_at[0]) / c);
    for s in 1..prof.u.len() {
        let next = prof.step(
            prof.k[s - 1],
            prof.u[s] - prof.u[s - 1],
            prof.z[s - 1] - prof.z[s],
            prof.h_at[s - 1],
            prof.h_at[s],
        );
        prof.k.push(next);
    }
    Ok(prof)
}

/// `∫_0^s e^{−cw} H(x + p₁w, y + p₂w) dw` with equal substeps no longer than
/// `h / max(p₁, p₂)` and exact exponential weights on each.
fn characteristic_integral(params: &ModelParams, hf: &HField, x: f64, y: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let c = params.decay();
    let dt = hf.grid().step / params.p1.max(params.p2);
    let n = (s / dt).ceil().max(1.0) as usize;
    let d = s / n as f64;
    let (wa, wb) = exp_linear_weights(c, d);
    let e = (-c * d).exp();
    let mut total = 0.0;
    let mut disc = 1.0;
    let mut ha = hf.h.value(x, y);
    for m in 1..=n {
        let w = m as f64 * d;
        let hb = hf.h.value(x + params.p1 * w, y + params.p2 * w);
        total += disc * (wa * ha + wb * hb);
        disc *= e;
        ha = hb;
    }
    total
}

/// One-step value at a point of `𝒪₁`.
fn value_o1(spec: &CurveSpec, params: &ModelParams, hf: &HField, prof: &KProfile, x: f64, y: f64) -> f64 {
    let (xb, yb) = spec.vertex;
    if y >= yb {
        return params.a1 * (x - xb) + params.a2() * (y - yb) + prof.at_vertex();
    }
    let xc = spec.a1_abscissa(y);
    if x >= xc {
        return params.a1 * (x - xc) + prof.value(spec.xi1.inverse(y), hf);
    }
    let u = x - spec.ratio * y;
    let s_hit = (spec.xi1.value(u) - y) / params.p2;
    let ku = prof.value(u, hf);
    (-params.decay() * s_hit).exp() * ku + characteristic_integral(params, hf, x, y, s_hit)
}

/// Assembles the one-step value from a prebuilt `H`.
pub fn one_step_value_from_h(spec: &CurveSpec, params: &ModelParams, hf: &HField) -> Result<GridFunction> {
    let g = hf.grid();
    if g.nx != g.ny {
        return Err(Error::Grid("one-step assembly needs a square grid".into()));
    }
    let prof1 = k_profile(spec, params, hf)?;
    let spec2 = spec.mirrored();
    let params2 = params.swapped();
    let hf2 = hf.transpose();
    let prof2 = k_profile(&spec2, &params2, &hf2)?;
    Ok(GridFunction::from_index_fn(g, |i, j| {
        let (x, y) = g.coords(i, j);
        if spec.in_o1(x, y) {
            value_o1(spec, params, hf, &prof1, x, y)
        } else {
            value_o1(&spec2, &params2, &hf2, &prof2, y, x)
        }
    }))
}

/// Value of following `spec` until the first claim and `w0` afterwards.
pub fn one_step_value(
    spec: &CurveSpec,
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    w0: &GridFunction,
) -> Result<GridFunction> {
    one_step_value_from_h(spec, params, &HField::build(params, payoffs, w0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointOptions {
    /// Stop when the sup-difference falls below `tol_rel · (1 + sup|w|)`.
    pub tol_rel: f64,
    pub max_sweeps: usize,
    /// Allowed excess of the observed ratio over `λ/(δ+λ)`.
    pub ratio_slack: f64,
    /// Consecutive excess ratios that abort the iteration.
    pub ratio_patience: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol_rel: 1e-6, max_sweeps: 10_000, ratio_slack: 0.05, ratio_patience: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub value: GridFunction,
    pub sweeps: usize,
    /// `‖w_{n+1} − w_n‖∞` for every sweep.
    pub sup_diffs: Vec<f64>,
    /// `λ / (δ + λ)`.
    pub ratio_bound: f64,
}

impl FixedPointResult {
    /// Successive ratios `d_{n+1} / d_n` with `d_n` above `floor`.
    pub fn ratios(&self, floor: f64) -> Vec<f64> {
        self.sup_diffs
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Value `V^ξ̄` of the curve strategy on `grid`, starting from `a₁x + a₂y`.
pub fn fixed_point_value(
    spec: &CurveSpec,
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    grid: Grid2D,
    opts: &FixedPointOptions,
) -> Result<FixedPointResult> {
    let w0 = GridFunction::from_fn(grid, |x, y| params.a1 * x + params.a2() * y);
    fixed_point_from(spec, params, payoffs, w0, opts)
}

/// As [`fixed_point_value`] from a caller-supplied starting function.
pub fn fixed_point_from(
    spec: &CurveSpec,
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    w0: GridFunction,
    opts: &FixedPointOptions,
) -> Result<FixedPointResult> {
    let u = overflow_field(params, payoffs, w0.grid);
    let bound = params.lambda() / params.decay();
    let mut w = w0;
    let mut diffs = Vec::new();
    let mut strikes = 0;
    for sweep in 1..=opts.max_sweeps {
        let next = one_step_value_from_h(spec, params, &HField::build_with_overflow(params, &u, &w))?;
        let d = next.sup_diff(&w);
        let scale = 1.0 + next.sup_abs();
        if let Some(&prev) = diffs.last() {
            let prev: f64 = prev;
            // ratios are meaningless once differences reach rounding level
            if prev > 1e-10 * scale && d / prev > bound + opts.ratio_slack {
                strikes += 1;
                if strikes >= opts.ratio_patience {
                    return Err(Error::Instability(format!(
                        "contraction ratio {:.4} exceeds {:.4} at sweep {sweep}",
                        d / prev,
                        bound + opts.ratio_slack
                    )));
                }
            } else {
                strikes = 0;
            }
        }
        diffs.push(d);
        w = next;
        if d <= opts.tol_rel * scale {
            debug!("fixed point reached after {sweep} sweeps, last difference {d:e}");
            return Ok(FixedPointResult { value: w, sweeps: sweep, sup_diffs: diffs, ratio_bound: bound });
        }
    }
    Err(Error::NotConverged(format!(
        "fixed point not reached in {} sweeps, last difference {:e}",
        opts.max_sweeps,
        diffs.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Value of a curve strategy at an arbitrary in-grid point of a computed
/// `V^ξ̄`; lattice values are returned verbatim.
pub fn curve_value_at(value: &GridFunction, x: f64, y: f64) -> f64 {
    value.value(x, y)
}

/// One-step values at several points, computed from the same `H`.
pub fn one_step_at_points(
    spec: &CurveSpec,
    params: &ModelParams,
    hf: &HField,
    points: &[(f64, f64)],
) -> Result<Vec<f64>> {
    let prof1 = k_profile(spec, params, hf)?;
    let spec2 = spec.mirrored();
    let params2 = params.swapped();
    let hf2 = hf.transpose();
    let prof2 = k_profile(&spec2, &params2, &hf2)?;
    Ok(points
        .par_iter()
        .map(|&(x, y)| {
            if spec.in_o1(x, y) {
                value_o1(spec, params, hf, &prof1, x, y)
            } else {
                value_o1(&spec2, &params2, &hf2, &prof2, y, x)
            }
        })
        .collect())
}
