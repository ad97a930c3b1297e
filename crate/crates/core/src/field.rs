//! Grid functions on a uniform lattice over `[0, nx·h] × [0, ny·h]` and the
//! integro-differential operators `𝓘`, `U`, `𝓛` of the bivariate problem.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ClaimLaw, ModelParams};
use crate::univariate::UnivariateValue;

/// Uniform lattice with origin at `(0, 0)`; `nx`, `ny` count cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(step: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Grid(format!("step must be positive, got {step}")));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Grid("grid needs at least one cell per axis".into()));
        }
        Ok(Self { step, nx, ny })
    }

    /// Square lattice covering `[0, extent]²`, rounding the cell count.
    pub fn square(step: f64, extent: f64) -> Result<Self> {
        let n = (extent / step).round();
        if !(n >= 1.0) {
            return Err(Error::Grid(format!("extent {extent} smaller than step {step}")));
        }
        Self::new(step, n as usize, n as usize)
    }

    pub fn x_max(&self) -> f64 {
        self.nx as f64 * self.step
    }

    pub fn y_max(&self) -> f64 {
        self.ny as f64 * self.step
    }

    pub fn len(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.step, j as f64 * self.step)
    }

    pub fn transpose(&self) -> Self {
        Self { step: self.step, nx: self.ny, ny: self.nx }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-12 * self.step;
        x >= -eps && y >= -eps && x <= self.x_max() + eps && y <= self.y_max() + eps
    }
}

/// Samples on a [`Grid2D`], stored row by row in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid2D,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(grid: Grid2D, f: F) -> Self {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % (grid.nx + 1), k / (grid.nx + 1));
                let (x, y) = grid.coords(i, j);
                f(x, y)
            })
            .collect();
        Self { grid, data }
    }

    /// Builds from node indices rather than coordinates.
    pub fn from_index_fn<F: Fn(usize, usize) -> f64 + Sync>(grid: Grid2D, f: F) -> Self {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|k| f(k % (grid.nx + 1), k / (grid.nx + 1)))
            .collect();
        Self { grid, data }
    }

    pub fn from_samples(grid: Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Grid(format!("expected {} samples, got {}", grid.len(), data.len())));
        }
        Ok(Self { grid, data })
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self { grid, data: vec![c; grid.len()] }
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    /// Bilinear interpolant, clamped to the lattice.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (i, tx) = cell(x, g.step, g.nx);
        let (j, ty) = cell(y, g.step, g.ny);
        let f00 = self.at(i, j);
        let f10 = self.at(i + 1, j);
        let f01 = self.at(i, j + 1);
        let f11 = self.at(i + 1, j + 1);
        // grouped so that transposed data at transposed points agrees bitwise
        f00 + (tx * (f10 - f00) + ty * (f01 - f00)) + tx * ty * ((f11 + f00) - (f10 + f01))
    }

    pub fn transpose(&self) -> Self {
        let g = self.grid.transpose();
        Self::from_index_fn(g, |i, j| self.at(j, i))
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        Self { grid: self.grid, data: self.data.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &Self, f: F) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self {
            grid: self.grid,
            data: self.data.par_iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Central difference in `x`, one-sided at the edges.
    pub fn central_dx(&self, i: usize, j: usize) -> f64 {
        let (n, h) = (self.grid.nx, self.grid.step);
        if i == 0 {
            (self.at(1, j) - self.at(0, j)) / h
        } else if i == n {
            (self.at(n, j) - self.at(n - 1, j)) / h
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        }
    }

    /// Central difference in `y`, one-sided at the edges.
    pub fn central_dy(&self, i: usize, j: usize) -> f64 {
        let (n, h) = (self.grid.ny, self.grid.step);
        if j == 0 {
            (self.at(i, 1) - self.at(i, 0)) / h
        } else if j == n {
            (self.at(i, n) - self.at(i, n - 1)) / h
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        }
    }

    pub fn dx_field(&self) -> Self {
        Self::from_index_fn(self.grid, |i, j| self.central_dx(i, j))
    }

    pub fn dy_field(&self) -> Self {
        Self::from_index_fn(self.grid, |i, j| self.central_dy(i, j))
    }

    /// `max |self − other|` over nodes.
    pub fn sup_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|f(i, j) − f(j, i)|` over the common square.
    pub fn symmetry_gap(&self) -> f64 {
        let n = self.grid.nx.min(self.grid.ny);
        let mut gap: f64 = 0.0;
        for j in 0..=n {
            for i in 0..=n {
                gap = gap.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        gap
    }
}

#[inline]
fn cell(x: f64, h: f64, n: usize) -> (usize, f64) {
    let mut t = (x / h).clamp(0.0, n as f64);
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        t = r;
    }
    let i = (t.floor() as usize).min(n - 1);
    (i, t - i as f64)
}

/// Ruin payoffs `V₁⁰`, `V₂⁰` of the surviving company.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPayoffs {
    pub v1: UnivariateValue,
    pub v2: UnivariateValue,
}

impl BoundaryPayoffs {
    pub fn new(v1: UnivariateValue, v2: UnivariateValue) -> Self {
        Self { v1, v2 }
    }

    /// Stand-alone optimal values of both companies.
    pub fn standalone(params: &ModelParams) -> Result<Self> {
        let (v1, v2) = crate::univariate::standalone_pair(params)?;
        Ok(Self { v1, v2 })
    }

    pub fn v1(&self, x: f64) -> f64 {
        self.v1.value(x)
    }

    pub fn v2(&self, y: f64) -> f64 {
        self.v2.value(y)
    }

    pub fn swapped(&self) -> Self {
        Self { v1: self.v2.clone(), v2: self.v1.clone() }
    }
}

/// `λ₁a₂V₂⁰(y)(1 − F¹(x+y)) + λ₂a₁V₁⁰(x)(1 − F²(x+y))`.
pub fn overflow_term_u(params: &ModelParams, payoffs: &BoundaryPayoffs, x: f64, y: f64) -> f64 {
    let s = (x + y).max(0.0);
    params.lambda1 * params.a2() * payoffs.v2(y) * params.law1.tail_unchecked(s)
        + params.lambda2 * params.a1 * payoffs.v1(x) * params.law2.tail_unchecked(s)
}

/// `U` at every node.
pub fn overflow_field(params: &ModelParams, payoffs: &BoundaryPayoffs, grid: Grid2D) -> GridFunction {
    GridFunction::from_fn(grid, |x, y| overflow_term_u(params, payoffs, x, y))
}

/// `∫_{α∈[lo,hi]} g(c − α) dF(α)` for `g` piecewise linear with kinks at
/// multiples of `h`; exact up to rounding for such `g`.
fn reflected_integral<G: Fn(f64) -> f64>(law: &ClaimLaw, c: f64, lo: f64, hi: f64, h: f64, g: G) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut total = 0.0;
    let mut a = lo;
    let mut s_a = c - a;
    let mut ga = g(s_a);
    while a < hi {
        // next lattice value of s strictly below s_a
        let mut m = (s_a / h).ceil() - 1.0;
        if s_a - m * h < 1e-12 * h {
            m -= 1.0;
        }
        let b = (c - m * h).min(hi);
        let len = b - a;
        if len > 1e-14 * h {
            let gb = g(c - b);
            let (wa, wb) = law.linear_weights(a, len);
            total += wa * ga + wb * gb;
            ga = gb;
        }
        a = b;
        s_a = c - a;
    }
    total
}

/// `𝓘(w)(x, y)` at an arbitrary in-domain point. Pieces are aligned with the
/// lattice lines of the integrand so bilinear `w` is integrated exactly.
pub fn integral_operator_i(params: &ModelParams, w: &GridFunction, x: f64, y: f64) -> f64 {
    let h = w.grid.step;
    let s = x + y;
    let mut t12 = 0.0;
    if params.lambda1 > 0.0 {
        t12 = reflected_integral(&params.law1, x, 0.0, x, h, |u| w.value(u, y))
            + reflected_integral(&params.law1, s, x, s, h, |v| w.value(0.0, v));
    }
    let mut t34 = 0.0;
    if params.lambda2 > 0.0 {
        t34 = reflected_integral(&params.law2, y, 0.0, y, h, |v| w.value(x, v))
            + reflected_integral(&params.law2, s, y, s, h, |u| w.value(u, 0.0));
    }
    params.lambda1 * t12 + params.lambda2 * t34
}

/// Per-law weights `(A_k, B_k)` on `[kh, (k+1)h]`.
fn lattice_weights(law: &ClaimLaw, h: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|k| law.linear_weights(k as f64 * h, h)).collect()
}

/// `𝓘(w)` at every node by direct summation over lattice-aligned intervals.
pub fn integral_field_direct(params: &ModelParams, w: &GridFunction) -> GridFunction {
    let g = w.grid;
    let n = g.nx + g.ny + 1;
    let wt1 = lattice_weights(&params.law1, g.step, n);
    let wt2 = lattice_weights(&params.law2, g.step, n);
    GridFunction::from_index_fn(g, |i, j| {
        let mut t1 = 0.0;
        for (k, &(a, b)) in wt1.iter().enumerate().take(i) {
            t1 += a * w.at(i - k, j) + b * w.at(i - k - 1, j);
        }
        let mut t2 = 0.0;
        for k in i..i + j {
            let (a, b) = wt1[k];
            t2 += a * w.at(0, i + j - k) + b * w.at(0, i + j - k - 1);
        }
        let mut t3 = 0.0;
        for (k, &(a, b)) in wt2.iter().enumerate().take(j) {
            t3 += a * w.at(i, j - k) + b * w.at(i, j - k - 1);
        }
        let mut t4 = 0.0;
        for k in j..i + j {
            let (a, b) = wt2[k];
            t4 += a * w.at(i + j - k, 0) + b * w.at(i + j - k - 1, 0);
        }
        params.lambda1 * (t1 + t2) + params.lambda2 * (t3 + t4)
    })
}

/// Returns `S[m] = Σ_{k<m} r^k (A₀ v[m−k] + B₀ v[m−k−1])` for a line of samples.
fn geometric_sums(v: impl Fn(usize) -> f64, len: usize, a0: f64, b0: f64, r: f64) -> Vec<f64> {
    let mut s = vec![0.0; len];
    for m in 1..len {
        s[m] = a0 * v(m) + b0 * v(m - 1) + r * s[m - 1];
    }
    s
}

/// `𝓘(w)` at every node. Exponential laws use an `O(1)` recursion per node;
/// other laws fall back to [`integral_field_direct`].
pub fn integral_field(params: &ModelParams, w: &GridFunction) -> GridFunction {
    let (mu1, mu2) = match (&params.law1, &params.law2) {
        (ClaimLaw::Exponential { rate: a }, ClaimLaw::Exponential { rate: b }) => (*a, *b),
        _ => return integral_field_direct(params, w),
    };
    let g = w.grid;
    let h = g.step;
    let (a1w, b1w) = params.law1.linear_weights(0.0, h);
    let (a2w, b2w) = params.law2.linear_weights(0.0, h);
    let r1 = (-mu1 * h).exp();
    let r2 = (-mu2 * h).exp();
    let decay1: Vec<f64> = (0..=g.nx).map(|i| (-mu1 * i as f64 * h).exp()).collect();
    let decay2: Vec<f64> = (0..=g.ny).map(|j| (-mu2 * j as f64 * h).exp()).collect();

    // T1 along rows, T3 along columns
    let rows: Vec<Vec<f64>> = (0..=g.ny)
        .into_par_iter()
        .map(|j| geometric_sums(|i| w.at(i, j), g.nx + 1, a1w, b1w, r1))
        .collect();
    let cols: Vec<Vec<f64>> = (0..=g.nx)
        .into_par_iter()
        .map(|i| geometric_sums(|j| w.at(i, j), g.ny + 1, a2w, b2w, r2))
        .collect();
    // T2 and T4 only need the sums along the axes
    let col0 = geometric_sums(|j| w.at(0, j), g.ny + 1, a1w, b1w, r1);
    let row0 = geometric_sums(|i| w.at(i, 0), g.nx + 1, a2w, b2w, r2);

    GridFunction::from_index_fn(g, |i, j| {
        let t1 = rows[j][i];
        let t2 = decay1[i] * col0[j];
        let t3 = cols[i][j];
        let t4 = decay2[j] * row0[i];
        params.lambda1 * (t1 + t2) + params.lambda2 * (t3 + t4)
    })
}

/// `𝓛(w)(x, y) = p₁w_x + p₂w_y − (δ+λ)w + 𝓘(w) + U` with caller-supplied partials.
pub fn generator_l(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    w: &GridFunction,
    x: f64,
    y: f64,
    wx: f64,
    wy: f64,
) -> f64 {
    params.p1 * wx + params.p2 * wy - params.decay() * w.value(x, y)
        + integral_operator_i(params, w, x, y)
        + overflow_term_u(params, payoffs, x, y)
}

/// The three components of the HJB operator and their maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbResidual {
    pub l_part: f64,
    pub dx_part: f64,
    pub dy_part: f64,
    pub max_part: f64,
}

impl HjbResidual {
    pub fn new(l_part: f64, dx_part: f64, dy_part: f64) -> Self {
        Self { l_part, dx_part, dy_part, max_part: l_part.max(dx_part).max(dy_part) }
    }
}

/// HJB residual at node `(i, j)` with central differences.
pub fn hjb_residual(
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    w: &GridFunction,
    i: usize,
    j: usize,
) -> HjbResidual {
    let (x, y) = w.grid.coords(i, j);
    let wx = w.central_dx(i, j);
    let wy = w.central_dy(i, j);
    let l = generator_l(params, payoffs, w, x, y, wx, wy);
    HjbResidual::new(l, params.a1 - wx, params.a2() - wy)
}
