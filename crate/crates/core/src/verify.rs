//! Numeric checks of computed value functions: growth envelope, Lipschitz
//! bounds, monotonicity, symmetry, HJB supersolution residuals and the
//! comparison with stand-alone and merged companies.

use std::collections::BTreeMap;
use std::fmt;

use crate::curve::{CurveSpec, RegionLabel};
use crate::error::{Error, Result};
use crate::field::{integral_field, overflow_field, BoundaryPayoffs, GridFunction};
use crate::model::ModelParams;
use crate::univariate::UnivariateValue;

/// Result of a single node-wise check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub violations: usize,
    /// Node with the largest excess over the tolerance, and that excess.
    pub worst: Option<((usize, usize), f64)>,
    pub tol: f64,
}

impl CheckOutcome {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, pass: true, violations: 0, worst: None, tol }
    }

    /// Records `excess = measured − allowed`; positive excess is a violation.
    fn record(&mut self, node: (usize, usize), excess: f64) {
        if excess > 0.0 || excess.is_nan() {
            self.pass = false;
            self.violations += 1;
        }
        if self.worst.is_none_or(|(_, e)| excess > e) {
            self.worst = Some((node, excess));
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, if self.pass { "pass" } else { "FAIL" })?;
        if let Some(((i, j), e)) = self.worst {
            write!(f, " (violations {}, worst excess {e:.3e} at node ({i}, {j}), tol {:.3e})", self.violations, self.tol)?;
        }
        Ok(())
    }
}

fn scale(value: &GridFunction) -> f64 {
    1.0 + value.sup_abs()
}

/// `a₁x + a₂y + p/(δ+λ) ≤ V ≤ a₁x + a₂y + p/δ` at every node.
pub fn check_envelope(value: &GridFunction, params: &ModelParams) -> CheckOutcome {
    check_envelope_tol(value, params, 1e-6 * scale(value))
}

pub fn check_envelope_tol(value: &GridFunction, params: &ModelParams, tol: f64) -> CheckOutcome {
    let g = value.grid;
    let lo_c = params.premium() / params.decay();
    let hi_c = params.premium() / params.delta;
    let mut out = CheckOutcome::new("envelope", tol);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let (x, y) = g.coords(i, j);
            let base = params.a1 * x + params.a2() * y;
            let v = value.at(i, j);
            out.record((i, j), (base + lo_c - v).max(v - base - hi_c) - tol);
        }
    }
    out
}

/// `a₁h ≤ V(x+h,y) − V(x,y) ≤ (e^{(δ+λ)h/p₁} − 1) V(x,y)` and the same in `y`,
/// up to `h²(1 + sup|V|)/100`.
pub fn check_lipschitz(value: &GridFunction, params: &ModelParams) -> CheckOutcome {
    let h = value.grid.step;
    check_lipschitz_tol(value, params, 1e-2 * h * h * scale(value))
}

/// [`check_lipschitz`] with an explicit tolerance.
pub fn check_lipschitz_tol(value: &GridFunction, params: &ModelParams, tol: f64) -> CheckOutcome {
    let g = value.grid;
    let h = g.step;
    let gx = (params.decay() * h / params.p1).exp_m1();
    let gy = (params.decay() * h / params.p2).exp_m1();
    let mut out = CheckOutcome::new("lipschitz", tol);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let v = value.at(i, j);
            if i < g.nx {
                let d = value.at(i + 1, j) - v;
                out.record((i, j), (params.a1 * h - d).max(d - gx * v) - tol);
            }
            if j < g.ny {
                let d = value.at(i, j + 1) - v;
                out.record((i, j), (params.a2() * h - d).max(d - gy * v) - tol);
            }
        }
    }
    out
}

/// Non-decreasing along every lattice line.
pub fn check_monotone(value: &GridFunction, tol: f64) -> CheckOutcome {
    let g = value.grid;
    let mut out = CheckOutcome::new("monotone", tol);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let v = value.at(i, j);
            if i < g.nx {
                out.record((i, j), v - value.at(i + 1, j) - tol);
            }
            if j < g.ny {
                out.record((i, j), v - value.at(i, j + 1) - tol);
            }
        }
    }
    out
}

/// `next ≥ prev − tol` at every node.
pub fn check_dominates(next: &GridFunction, prev: &GridFunction, tol: f64) -> CheckOutcome {
    let g = next.grid;
    let mut out = CheckOutcome::new("dominates", tol);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            out.record((i, j), prev.at(i, j) - next.at(i, j) - tol);
        }
    }
    out
}

/// `max |V(x,y) − V(y,x)| ≤ tol`.
pub fn check_symmetry(value: &GridFunction, tol: f64) -> CheckOutcome {
    let g = value.grid;
    let n = g.nx.min(g.ny);
    let mut out = CheckOutcome::new("symmetry", tol);
    for j in 0..=n {
        for i in 0..j {
            out.record((i, j), (value.at(i, j) - value.at(j, i)).abs() - tol);
        }
    }
    out
}

/// Worst HJB components over interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub max_l_residual: f64,
    pub max_dx_residual: f64,
    pub max_dy_residual: f64,
    pub worst_l_node: (usize, usize),
    pub tol: f64,
    pub pass: bool,
    /// Interior nodes where some component exceeds `tol`, by region.
    pub offending: BTreeMap<&'static str, usize>,
    pub envelope: Option<CheckOutcome>,
    pub lipschitz: Option<CheckOutcome>,
    pub monotone: Option<CheckOutcome>,
    pub symmetry_max_gap: f64,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.max_l_residual.max(self.max_dx_residual).max(self.max_dy_residual)
    }

    /// Attaches growth, Lipschitz and monotonicity checks.
    pub fn with_shape_checks(mut self, value: &GridFunction, params: &ModelParams) -> Self {
        self.envelope = Some(check_envelope(value, params));
        self.lipschitz = Some(check_lipschitz(value, params));
        self.monotone = Some(check_monotone(value, 1e-9 * scale(value)));
        self
    }

    pub fn all_pass(&self) -> bool {
        self.pass
            && [&self.envelope, &self.lipschitz, &self.monotone]
                .iter()
                .all(|c| c.as_ref().is_none_or(|c| c.pass))
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "supersolution: {} (tol {:.4e})",
            if self.pass { "pass" } else { "FAIL" },
            self.tol
        )?;
        writeln!(
            f,
            "  max L {:.4e} at node {:?}, max a1-Vx {:.4e}, max a2-Vy {:.4e}",
            self.max_l_residual, self.worst_l_node, self.max_dx_residual, self.max_dy_residual
        )?;
        for (label, n) in &self.offending {
            writeln!(f, "  offending nodes in {label}: {n}")?;
        }
        writeln!(f, "  symmetry gap {:.3e}", self.symmetry_max_gap)?;
        for c in [&self.envelope, &self.lipschitz, &self.monotone].into_iter().flatten() {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// Residual tolerance `factor·h·(1 + sup|V|)·δ`.
pub fn residual_tol(value: &GridFunction, params: &ModelParams, factor: f64) -> f64 {
    factor * value.grid.step * scale(value) * params.delta
}

/// Default residual tolerance `5·h·(1 + sup|V|)·δ`.
pub fn default_residual_tol(value: &GridFunction, params: &ModelParams) -> f64 {
    residual_tol(value, params, 5.0)
}

/// Supersolution check of the stationary equation, `H = 𝓘(V) + U`.
pub fn check_supersolution(
    value: &GridFunction,
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    tol: f64,
    spec: Option<&CurveSpec>,
) -> ResidualReport {
    let u = overflow_field(params, payoffs, value.grid);
    let h = integral_field(params, value).zip_with(&u, |a, b| a + b);
    check_supersolution_h(value, params, &h, tol, spec)
}

/// Supersolution check of `max{p₁V_x + p₂V_y − (δ+λ)V + H, a₁ − V_x, a₂ − V_y} ≤ 0`
/// with a fixed field `H`. Given a spec, nodes next to a region boundary use the
/// one-sided difference from their own region.
pub fn check_supersolution_h(
    value: &GridFunction,
    params: &ModelParams,
    h: &GridFunction,
    tol: f64,
    spec: Option<&CurveSpec>,
) -> ResidualReport {
    let g = value.grid;
    let step = g.step;
    let labels: Option<Vec<RegionLabel>> = spec.map(|s| {
        let s = s.clone().with_tolerance(0.5 * step);
        (0..g.len())
            .map(|k| {
                let (x, y) = g.coords(k % (g.nx + 1), k / (g.nx + 1));
                s.classify(x, y)
            })
            .collect()
    });
    let label = |i: usize, j: usize| labels.as_ref().map(|l| l[g.idx(i, j)]);
    let c = params.decay();
    let mut rep = ResidualReport {
        max_l_residual: f64::NEG_INFINITY,
        max_dx_residual: f64::NEG_INFINITY,
        max_dy_residual: f64::NEG_INFINITY,
        worst_l_node: (0, 0),
        tol,
        pass: true,
        offending: BTreeMap::new(),
        envelope: None,
        lipschitz: None,
        monotone: None,
        symmetry_max_gap: value.symmetry_gap(),
    };
    for j in 1..g.ny {
        for i in 1..g.nx {
            let here = label(i, j);
            let diff = |fwd: f64, bwd: f64, n_fwd: Option<RegionLabel>, n_bwd: Option<RegionLabel>| {
                match (here, n_fwd == here, n_bwd == here) {
                    (Some(_), true, false) => fwd,
                    (Some(_), false, true) => bwd,
                    _ => 0.5 * (fwd + bwd),
                }
            };
            let v = value.at(i, j);
            let vx = diff(
                (value.at(i + 1, j) - v) / step,
                (v - value.at(i - 1, j)) / step,
                label(i + 1, j),
                label(i - 1, j),
            );
            let vy = diff(
                (value.at(i, j + 1) - v) / step,
                (v - value.at(i, j - 1)) / step,
                label(i, j + 1),
                label(i, j - 1),
            );
            let l = params.p1 * vx + params.p2 * vy - c * v + h.at(i, j);
            let dx = params.a1 - vx;
            let dy = params.a2() - vy;
            if l > rep.max_l_residual {
                rep.max_l_residual = l;
                rep.worst_l_node = (i, j);
            }
            rep.max_dx_residual = rep.max_dx_residual.max(dx);
            rep.max_dy_residual = rep.max_dy_residual.max(dy);
            if l > tol || dx > tol || dy > tol {
                rep.pass = false;
                let name = here.map_or("interior", |l| l.as_str());
                *rep.offending.entry(name).or_insert(0) += 1;
            }
        }
    }
    rep
}

/// One row of the three-way comparison, each value minus `(x + y)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleRow {
    pub x: f64,
    pub y: f64,
    pub collaboration: f64,
    pub standalone: f64,
    pub merger_half: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleComparison {
    pub rows: Vec<TripleRow>,
    /// `min (V − V_M/2)` over nodes; dominance requires `> 0`.
    pub min_margin_merger: f64,
    pub worst_merger_node: (f64, f64),
    /// `min (V − V_S)` over nodes.
    pub min_margin_standalone: f64,
    pub worst_standalone_node: (f64, f64),
    /// Nodes with `V < V_S`.
    pub standalone_negative: usize,
}

impl TripleComparison {
    pub fn merger_dominated(&self) -> bool {
        self.min_margin_merger > 0.0
    }

    pub fn standalone_dominated(&self) -> bool {
        self.min_margin_standalone >= 0.0
    }
}

/// `V`, `V_S = (V₁⁰(x) + V₂⁰(y))/2` and `V_M(x+y)/2` for equally weighted dividends.
pub fn compare_triple(
    value: &GridFunction,
    params: &ModelParams,
    payoffs: &BoundaryPayoffs,
    merger: &UnivariateValue,
) -> Result<TripleComparison> {
    if params.a1 != 0.5 {
        return Err(Error::Domain(format!("comparison needs a1 = 1/2, got {}", params.a1)));
    }
    let g = value.grid;
    let mut out = TripleComparison {
        rows: Vec::with_capacity(g.len()),
        min_margin_merger: f64::INFINITY,
        worst_merger_node: (0.0, 0.0),
        min_margin_standalone: f64::INFINITY,
        worst_standalone_node: (0.0, 0.0),
        standalone_negative: 0,
    };
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let (x, y) = g.coords(i, j);
            let base = 0.5 * (x + y);
            let v = value.at(i, j);
            let vs = 0.5 * (payoffs.v1(x) + payoffs.v2(y));
            let vm = 0.5 * merger.value(x + y);
            if v - vm < out.min_margin_merger {
                out.min_margin_merger = v - vm;
                out.worst_merger_node = (x, y);
            }
            if v - vs < out.min_margin_standalone {
                out.min_margin_standalone = v - vs;
                out.worst_standalone_node = (x, y);
            }
            if v < vs {
                out.standalone_negative += 1;
            }
            out.rows.push(TripleRow {
                x,
                y,
                collaboration: v - base,
                standalone: vs - base,
                merger_half: vm - base,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid2D;

    fn sec9() -> ModelParams {
        ModelParams::symmetric_example()
    }

    fn envelope_fn(params: &ModelParams, g: Grid2D, c: f64) -> GridFunction {
        GridFunction::from_fn(g, |x, y| params.a1 * x + params.a2() * y + c)
    }

    #[test]
    fn envelope_constants() {
        let p = sec9();
        assert!((p.premium() / p.decay() - 0.220_049).abs() < 1e-6);
        assert!((p.premium() / p.delta - 10.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_edges() {
        let p = sec9();
        let g = Grid2D::square(0.1, 3.0).unwrap();
        let lower = envelope_fn(&p, g, p.premium() / p.decay());
        assert!(check_envelope(&lower, &p).pass);
        let above = envelope_fn(&p, g, p.premium() / p.delta + 1.0);
        let out = check_envelope(&above, &p);
        assert!(!out.pass);
        assert_eq!(out.violations, g.len());
        assert!(out.worst.unwrap().1 > 0.99);
    }

    #[test]
    fn lipschitz_edges() {
        let p = sec9();
        let g = Grid2D::square(0.1, 3.0).unwrap();
        assert!(check_lipschitz(&envelope_fn(&p, g, 1.0), &p).pass);
        // slope below a₁ breaks the lower bound
        let flat = GridFunction::from_fn(g, |x, y| 0.2 * x + 0.5 * y + 1.0);
        assert!(!check_lipschitz(&flat, &p).pass);
        // an explosive jump breaks the upper bound
        let steep = GridFunction::from_fn(g, |x, y| if x > 1.5 { 50.0 + y } else { 1.0 + 0.5 * (x + y) });
        assert!(!check_lipschitz(&steep, &p).pass);
    }

    #[test]
    fn symmetry_and_dominance() {
        let g = Grid2D::square(0.1, 1.0).unwrap();
        let f = GridFunction::from_fn(g, |x, y| x * y + x + y);
        assert!(check_symmetry(&f, 1e-12).pass);
        let h = GridFunction::from_fn(g, |x, y| x * y + x);
        assert!(!check_symmetry(&h, 1e-12).pass);
        assert!(check_dominates(&f, &h, 0.0).pass);
        assert!(!check_dominates(&h, &f, 0.0).pass);
    }

    #[test]
    fn upper_envelope_is_a_supersolution_of_l() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let g = Grid2D::square(0.05, 4.0).unwrap();
        let up = envelope_fn(&p, g, p.premium() / p.delta);
        let rep = check_supersolution(&up, &p, &pay, 1e-9, None);
        assert!(rep.max_l_residual <= 0.0, "{}", rep.max_l_residual);
        assert!(rep.max_dx_residual.abs() < 1e-9 && rep.max_dy_residual.abs() < 1e-9);
        assert!(rep.pass);
    }

    #[test]
    fn comparison_basics() {
        let p = sec9();
        let pay = BoundaryPayoffs::standalone(&p).unwrap();
        let m = crate::univariate::merger_value(&p).unwrap();
        let g = Grid2D::square(0.1, 3.0).unwrap();
        let vs = GridFunction::from_fn(g, |x, y| 0.5 * (pay.v1(x) + pay.v2(y)));
        let t = compare_triple(&vs, &p, &pay, &m).unwrap();
        assert_eq!(t.min_margin_standalone, 0.0);
        assert!(t.standalone_dominated());
        assert_eq!(t.rows.len(), g.len());
        let mut q = p.clone();
        q.a1 = 0.3;
        assert!(compare_triple(&vs, &q, &pay, &m).is_err());
    }
}
