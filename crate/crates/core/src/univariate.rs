//! The one-company de Finetti problem under barrier strategies.
//!
//! With exponential claims the value of the barrier `b` is `h(x)/h'(b)` below
//! the barrier, where `h` is a two-exponential solution of the integro-
//! differential equation, and the optimal barrier minimises `h'`. For numeric
//! claim laws the same construction is carried out with `h` obtained by
//! integrating the Volterra form of the equation on a fine grid.

use crate::error::UnivariateError;
use crate::model::{ClaimLaw, ModelParams};
use crate::quad::golden_section_min;

/// Grid step of the Volterra integration used for numeric claim laws.
const NUMERIC_STEP: f64 = 2e-3;
/// Tolerance of the golden-section refinement of the barrier.
const BARRIER_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
enum Profile {
    /// `V(x) = x + offset`.
    Linear { offset: f64 },
    /// `V(x) = h(x)/h'(b)` with `h(x) = (θ₁+μ)e^{θ₁x} − (θ₂+μ)e^{θ₂x}`.
    TwoExp { theta1: f64, theta2: f64, mu: f64, scale: f64 },
    /// Values on `[0, b]` at a uniform step.
    Sampled { step: f64, values: Vec<f64> },
}

/// Value function of a barrier strategy for one company.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateValue {
    pub barrier: f64,
    pub premium: f64,
    pub intensity: f64,
    pub law: ClaimLaw,
    pub discount: f64,
    /// Right end of the computed range; `value` extends linearly beyond it.
    pub x_max: f64,
    /// False when only barrier strategies were searched (numeric laws).
    pub globally_optimal: bool,
    profile: Profile,
    at_barrier: f64,
}

impl UnivariateValue {
    /// Value at surplus `x`; zero for negative surplus.
    pub fn value(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x >= self.barrier {
            return self.at_barrier + (x - self.barrier);
        }
        self.below_barrier(x)
    }

    fn below_barrier(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Linear { offset } => x + offset,
            Profile::TwoExp { theta1, theta2, mu, scale } => {
                ((theta1 + mu) * (theta1 * x).exp() - (theta2 + mu) * (theta2 * x).exp()) / scale
            }
            Profile::Sampled { step, values } => {
                let t = x / step;
                let k = (t.floor() as usize).min(values.len() - 2);
                let f = t - k as f64;
                values[k] + f * (values[k + 1] - values[k])
            }
        }
    }

    /// `(x, V(x))` on a uniform grid over `[0, x_max]`.
    pub fn samples(&self, step: f64) -> Vec<(f64, f64)> {
        let n = (self.x_max / step).round().max(1.0) as usize;
        (0..=n)
            .map(|k| {
                let x = k as f64 * step;
                (x, self.value(x))
            })
            .collect()
    }

    /// Label reported in outputs.
    pub fn optimality(&self) -> &'static str {
        if self.globally_optimal {
            "optimal"
        } else {
            "barrier-optimal"
        }
    }
}

/// Roots `θ₁ > 0 > θ₂` of `pθ² + (pμ − λ − δ)θ − δμ = 0`.
pub fn characteristic_roots(premium: f64, intensity: f64, rate: f64, discount: f64) -> (f64, f64) {
    let a = premium;
    let b = premium * rate - intensity - discount;
    let c = -discount * rate;
    let disc = (b * b - 4.0 * a * c).sqrt();
    // stable form: avoid cancellation in the root of smaller magnitude
    let q = -0.5 * (b + b.signum() * disc);
    let (r1, r2) = (q / a, c / q);
    if r1 > r2 {
        (r1, r2)
    } else {
        (r2, r1)
    }
}

/// Optimal barrier for exponential claims, `0` when `h'` is increasing on `[0, ∞)`.
pub fn exponential_barrier(theta1: f64, theta2: f64, mu: f64) -> f64 {
    let ratio = theta2 * theta2 * (theta2 + mu) / (theta1 * theta1 * (theta1 + mu));
    (ratio.ln() / (theta1 - theta2)).max(0.0)
}

/// Solves the barrier problem for one company.
pub fn solve_standalone(
    premium: f64,
    intensity: f64,
    law: &ClaimLaw,
    discount: f64,
) -> Result<UnivariateValue, UnivariateError> {
    solve_standalone_with(premium, intensity, law, discount, None)
}

/// As [`solve_standalone`] with an explicit computed range `[0, x_max]`.
pub fn solve_standalone_with(
    premium: f64,
    intensity: f64,
    law: &ClaimLaw,
    discount: f64,
    x_max: Option<f64>,
) -> Result<UnivariateValue, UnivariateError> {
    if !(premium > 0.0) || !(discount > 0.0) || !(intensity >= 0.0) {
        return Err(UnivariateError::Invalid(format!(
            "premium {premium} and discount {discount} must be positive, intensity {intensity} nonnegative"
        )));
    }
    let mean = law.mean();
    let loading = intensity * mean;
    if intensity > 0.0 && !(premium > loading) {
        return Err(UnivariateError::NetProfit { premium, loading });
    }
    let base = UnivariateValue {
        barrier: 0.0,
        premium,
        intensity,
        law: law.clone(),
        discount,
        x_max: 0.0,
        globally_optimal: true,
        profile: Profile::Linear { offset: premium / discount },
        at_barrier: premium / discount,
    };
    if intensity == 0.0 {
        return Ok(UnivariateValue { x_max: x_max.unwrap_or(5.0 * mean), ..base });
    }

    // barrier estimate from the exponential law with the same mean
    let (e1, e2) = characteristic_roots(premium, intensity, 1.0 / mean, discount);
    let b_est = exponential_barrier(e1, e2, 1.0 / mean);
    let x_max = x_max.unwrap_or(5.0 * b_est.max(mean));

    match law {
        ClaimLaw::Exponential { rate } => {
            let mu = *rate;
            let (t1, t2) = characteristic_roots(premium, intensity, mu, discount);
            let b = exponential_barrier(t1, t2, mu);
            if b > x_max {
                return Err(UnivariateError::NotBracketed {
                    x_max,
                    detail: format!("closed-form barrier {b} exceeds the range"),
                });
            }
            let scale = (t1 + mu) * t1 * (t1 * b).exp() - (t2 + mu) * t2 * (t2 * b).exp();
            let mut v = UnivariateValue {
                barrier: b,
                x_max,
                profile: Profile::TwoExp { theta1: t1, theta2: t2, mu, scale },
                ..base
            };
            v.at_barrier = v.below_barrier(b);
            Ok(v)
        }
        ClaimLaw::Numeric(_) => numeric_barrier(base, x_max),
    }
}

/// Integrates `p g' = (δ+λ) g − λ ∫_0^x g(x−α) dF(α)`, `g(0) = 1`, by the
/// trapezoidal rule with exact weights for `g` linear between nodes.
/// Returns `(g, g')` at the nodes `k·dx`.
fn volterra_solution(p: f64, lambda: f64, law: &ClaimLaw, delta: f64, dx: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = delta + lambda;
    let weights: Vec<(f64, f64)> = (0..n).map(|j| law.linear_weights(j as f64 * dx, dx)).collect();
    let mut g = Vec::with_capacity(n + 1);
    let mut gp = Vec::with_capacity(n + 1);
    g.push(1.0);
    gp.push(c / p);
    let (a0, b0) = weights[0];
    for k in 1..=n {
        // ∫ over α ∈ [j dx, (j+1) dx] of g(x_k − α): A_j g_{k−j} + B_j g_{k−j−1}
        let mut rest = b0 * g[k - 1];
        for (j, &(aj, bj)) in weights.iter().enumerate().take(k).skip(1) {
            rest += aj * g[k - j] + bj * g[k - j - 1];
        }
        let coeff = (c - lambda * a0) / p;
        let gk = (g[k - 1] + 0.5 * dx * (gp[k - 1] - lambda * rest / p)) / (1.0 - 0.5 * dx * coeff);
        gp.push(coeff * gk - lambda * rest / p);
        g.push(gk);
    }
    (g, gp)
}

fn numeric_barrier(base: UnivariateValue, x_max: f64) -> Result<UnivariateValue, UnivariateError> {
    let dx = NUMERIC_STEP;
    let n = (x_max / dx).ceil() as usize + 2;
    let (g, gp) = volterra_solution(base.premium, base.intensity, &base.law, base.discount, dx, n);

    // bracket the minimum of g' via the sign change of g''
    let k_min = match (1..n).find(|&k| gp[k + 1] - gp[k] >= 0.0) {
        Some(k) => k,
        None => {
            return Err(UnivariateError::NotBracketed {
                x_max,
                detail: "g'' stays negative on the computed range".into(),
            })
        }
    };
    let b = if k_min == 1 && gp[1] >= gp[0] {
        0.0
    } else {
        let (x0, x1, x2) = ((k_min - 1) as f64 * dx, k_min as f64 * dx, (k_min + 1) as f64 * dx);
        let (f0, f1, f2) = (gp[k_min - 1], gp[k_min], gp[k_min + 1]);
        let quad = |x: f64| {
            f0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
                + f1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
                + f2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
        };
        golden_section_min(quad, x0, x2, BARRIER_TOL)
    };
    let gp_b = interp(&gp, dx, b);
    let kb = ((b / dx).ceil() as usize + 1).min(n);
    let values: Vec<f64> = g[..=kb].iter().map(|v| v / gp_b).collect();
    let mut v = UnivariateValue {
        barrier: b,
        x_max,
        globally_optimal: false,
        profile: Profile::Sampled { step: dx, values },
        ..base
    };
    v.at_barrier = v.below_barrier(b);
    Ok(v)
}

fn interp(v: &[f64], dx: f64, x: f64) -> f64 {
    let t = x / dx;
    let k = (t.floor() as usize).min(v.len() - 2);
    let f = t - k as f64;
    v[k] + f * (v[k + 1] - v[k])
}

/// Value of the merged company `(p₁+p₂, λ₁+λ₂, (λ₁F¹+λ₂F²)/λ, δ)`; evaluate at `x + y`.
pub fn merger_value(params: &ModelParams) -> Result<UnivariateValue, UnivariateError> {
    let law = ClaimLaw::mixture(params.lambda1, &params.law1, params.lambda2, &params.law2);
    solve_standalone(params.p1 + params.p2, params.lambda(), &law, params.delta)
}

/// Stand-alone values `(V₁⁰, V₂⁰)` of the two companies.
pub fn standalone_pair(params: &ModelParams) -> Result<(UnivariateValue, UnivariateValue), UnivariateError> {
    Ok((
        solve_standalone(params.p1, params.lambda1, &params.law1, params.delta)?,
        solve_standalone(params.p2, params.lambda2, &params.law2, params.delta)?,
    ))
}
