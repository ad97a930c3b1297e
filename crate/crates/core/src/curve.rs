//! Curve strategies.
//!
//! A strategy is fixed by a vertex `(x̄, ȳ)` and two strictly decreasing curves
//! `ξ₁ : [ū, M₁] → [0, ȳ]` and `ξ₂ : [v̄, M₂] → [0, x̄]`, where
//! `ū = x̄ − r ȳ`, `v̄ = ȳ − x̄ / r` and `r = p₁ / p₂`. In the coordinate
//! `u = x − r y` the characteristics of the uncontrolled drift are vertical,
//! so the curve `𝒜₁ = {(u + r ξ₁(u), ξ₁(u))}` is reached by drifting up.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CurveError;
use crate::model::ModelParams;

/// Strictly decreasing, piecewise-linear curve ending at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveSamples", into = "CurveSamples")]
pub struct MonotoneCurve {
    u: Vec<f64>,
    z: Vec<f64>,
    slope: Vec<f64>,
}

/// Serialized form of a [`MonotoneCurve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSamples {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
}

impl TryFrom<CurveSamples> for MonotoneCurve {
    type Error = CurveError;

    fn try_from(c: CurveSamples) -> Result<Self, CurveError> {
        MonotoneCurve::new(c.u, c.z)
    }
}

impl From<MonotoneCurve> for CurveSamples {
    fn from(c: MonotoneCurve) -> Self {
        CurveSamples { u: c.u, z: c.z }
    }
}

impl MonotoneCurve {
    /// Validates the samples. A single sample `(u, 0)` is a degenerate curve.
    pub fn new(u: Vec<f64>, z: Vec<f64>) -> Result<Self, CurveError> {
        if u.is_empty() || u.len() != z.len() {
            return Err(CurveError::Construction("need matching, nonempty samples".into()));
        }
        for w in u.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CurveError::BadAbscissae { at: w[1] });
            }
        }
        if let Some(&bad) = z.iter().find(|v| !(**v >= 0.0)) {
            return Err(CurveError::Negative(bad));
        }
        for (k, w) in z.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(CurveError::NotDecreasing { at: u[k + 1] });
            }
        }
        let last = *z.last().unwrap();
        if last != 0.0 {
            return Err(CurveError::NonZeroEnd(last));
        }
        let n = u.len();
        let slope = if n == 1 {
            vec![f64::NEG_INFINITY]
        } else {
            (0..n)
                .map(|k| {
                    let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                    (z[b] - z[a]) / (u[b] - u[a])
                })
                .collect()
        };
        Ok(Self { u, z, slope })
    }

    /// Samples `f` at `n + 1` equally spaced points of `[u0, m]`; the final
    /// value is forced to zero.
    pub fn from_fn<F: Fn(f64) -> f64>(u0: f64, m: f64, n: usize, f: F) -> Result<Self, CurveError> {
        if m <= u0 || n == 0 {
            return Self::new(vec![u0], vec![0.0]);
        }
        let u: Vec<f64> = (0..=n).map(|k| u0 + (m - u0) * k as f64 / n as f64).collect();
        let mut z: Vec<f64> = u.iter().map(|&v| f(v)).collect();
        *z.last_mut().unwrap() = 0.0;
        Self::new(u, z)
    }

    pub fn start(&self) -> f64 {
        self.u[0]
    }

    /// Right end `M` where the curve reaches zero.
    pub fn end(&self) -> f64 {
        *self.u.last().unwrap()
    }

    /// `ξ(start)`.
    pub fn top(&self) -> f64 {
        self.z[0]
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.u
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_degenerate(&self) -> bool {
        self.u.len() == 1
    }

    /// Index `k` of the segment `[u_k, u_{k+1}]` containing `u` (clamped).
    pub fn segment(&self, u: f64) -> usize {
        let n = self.u.len();
        if n < 2 {
            return 0;
        }
        let k = self.u.partition_point(|&v| v <= u);
        k.saturating_sub(1).min(n - 2)
    }

    /// `ξ(u)`, clamped to the domain.
    pub fn value(&self, u: f64) -> f64 {
        if self.is_degenerate() || u <= self.u[0] {
            return self.z[0];
        }
        if u >= self.end() {
            return 0.0;
        }
        let k = self.segment(u);
        let t = (u - self.u[k]) / (self.u[k + 1] - self.u[k]);
        self.z[k] + t * (self.z[k + 1] - self.z[k])
    }

    pub fn try_value(&self, u: f64) -> Result<f64, CurveError> {
        let (lo, hi) = (self.start(), self.end());
        let eps = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if u < lo - eps || u > hi + eps {
            return Err(CurveError::OutOfDomain { arg: u, lo, hi });
        }
        Ok(self.value(u))
    }

    /// `ξ⁻¹(z)` for `z ∈ [0, ξ(start)]`, clamped.
    pub fn inverse(&self, z: f64) -> f64 {
        if self.is_degenerate() || z >= self.z[0] {
            return self.u[0];
        }
        if z <= 0.0 {
            return self.end();
        }
        // values decrease: first index with z_k < z
        let k = self.z.partition_point(|&v| v >= z);
        let (a, b) = (k - 1, k);
        let t = (self.z[a] - z) / (self.z[a] - self.z[b]);
        self.u[a] + t * (self.u[b] - self.u[a])
    }

    /// Derivative: linear interpolation of central-difference node slopes.
    pub fn derivative(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            return self.slope[0];
        }
        let k = self.segment(u);
        let t = ((u - self.u[k]) / (self.u[k + 1] - self.u[k])).clamp(0.0, 1.0);
        self.slope[k] + t * (self.slope[k + 1] - self.slope[k])
    }

    /// Largest `|ξ(u) − other(u)|` over the union of sample points lying in
    /// both domains.
    pub fn sup_distance(&self, other: &MonotoneCurve) -> f64 {
        let lo = self.start().max(other.start());
        let hi = self.end().min(other.end());
        self.u
            .iter()
            .chain(other.u.iter())
            .filter(|&&u| u >= lo && u <= hi)
            .fold(0.0, |m: f64, &u| m.max((self.value(u) - other.value(u)).abs()))
    }
}

/// One of the seven sets partitioning the quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    C,
    A0,
    A1,
    A2,
    B0,
    B1,
    B2,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 7] = [
        RegionLabel::C,
        RegionLabel::A0,
        RegionLabel::A1,
        RegionLabel::A2,
        RegionLabel::B0,
        RegionLabel::B1,
        RegionLabel::B2,
    ];

    /// The label after exchanging the companies.
    pub fn mirrored(self) -> Self {
        match self {
            RegionLabel::A1 => RegionLabel::A2,
            RegionLabel::A2 => RegionLabel::A1,
            RegionLabel::B1 => RegionLabel::B2,
            RegionLabel::B2 => RegionLabel::B1,
            other => other,
        }
    }

    pub fn is_curve(self) -> bool {
        matches!(self, RegionLabel::A0 | RegionLabel::A1 | RegionLabel::A2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::C => "C",
            RegionLabel::A0 => "A0",
            RegionLabel::A1 => "A1",
            RegionLabel::A2 => "A2",
            RegionLabel::B0 => "B0",
            RegionLabel::B1 => "B1",
            RegionLabel::B2 => "B2",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A curve strategy together with the premium ratio it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub vertex: (f64, f64),
    pub xi1: MonotoneCurve,
    pub xi2: MonotoneCurve,
    /// `p₁ / p₂`.
    pub ratio: f64,
    /// Distance within which a point counts as lying on a curve.
    pub tol: f64,
}

/// Serialized form of a [`CurveSpec`]; the ratio comes from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSpecData {
    pub vertex: [f64; 2],
    pub xi1: MonotoneCurve,
    pub xi2: MonotoneCurve,
}

impl CurveSpec {
    pub fn new(
        vertex: (f64, f64),
        xi1: MonotoneCurve,
        xi2: MonotoneCurve,
        params: &ModelParams,
    ) -> Result<Self, CurveError> {
        Self::with_ratio(vertex, xi1, xi2, params.p1 / params.p2)
    }

    pub fn with_ratio(
        vertex: (f64, f64),
        xi1: MonotoneCurve,
        xi2: MonotoneCurve,
        ratio: f64,
    ) -> Result<Self, CurveError> {
        let (xb, yb) = vertex;
        if !(xb >= 0.0 && yb >= 0.0) {
            return Err(CurveError::VertexMismatch(format!("vertex ({xb}, {yb}) outside the quadrant")));
        }
        let ub = xb - ratio * yb;
        let vb = yb - xb / ratio;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        if !close(xi1.start(), ub) || !close(xi1.top(), yb) {
            return Err(CurveError::VertexMismatch(format!(
                "xi1 starts at ({}, {}), expected ({ub}, {yb})",
                xi1.start(),
                xi1.top()
            )));
        }
        if !close(xi2.start(), vb) || !close(xi2.top(), xb) {
            return Err(CurveError::VertexMismatch(format!(
                "xi2 starts at ({}, {}), expected ({vb}, {xb})",
                xi2.start(),
                xi2.top()
            )));
        }
        Ok(Self { vertex, xi1, xi2, ratio, tol: 0.0 })
    }

    pub fn from_data(data: CurveSpecData, params: &ModelParams) -> Result<Self, CurveError> {
        Self::new((data.vertex[0], data.vertex[1]), data.xi1, data.xi2, params)
    }

    pub fn to_data(&self) -> CurveSpecData {
        CurveSpecData { vertex: [self.vertex.0, self.vertex.1], xi1: self.xi1.clone(), xi2: self.xi2.clone() }
    }

    /// Sets the curve-membership tolerance, typically half a lattice step.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// `ū = x̄ − r ȳ`.
    pub fn u_bar(&self) -> f64 {
        self.vertex.0 - self.ratio * self.vertex.1
    }

    /// `v̄ = ȳ − x̄ / r`.
    pub fn v_bar(&self) -> f64 {
        self.vertex.1 - self.vertex.0 / self.ratio
    }

    /// Abscissa of `𝒜₁` at height `y ≤ ȳ`.
    pub fn a1_abscissa(&self, y: f64) -> f64 {
        self.xi1.inverse(y) + self.ratio * y
    }

    /// Ordinate of `𝒜₂` at abscissa `x ≤ x̄`.
    pub fn a2_ordinate(&self, x: f64) -> f64 {
        self.xi2.inverse(x) + x / self.ratio
    }

    /// Point of `𝒜₁` with coordinate `u`.
    pub fn a1_point(&self, u: f64) -> (f64, f64) {
        let z = self.xi1.value(u);
        (u + self.ratio * z, z)
    }

    /// Point of `𝒜₂` with coordinate `v`.
    pub fn a2_point(&self, v: f64) -> (f64, f64) {
        let z = self.xi2.value(v);
        (z, v + z / self.ratio)
    }

    /// True when `(x, y)` lies on the side `𝒪₁ = {x − r y ≥ ū}`.
    pub fn in_o1(&self, x: f64, y: f64) -> bool {
        x - self.ratio * y >= self.u_bar()
    }

    pub fn classify(&self, x: f64, y: f64) -> RegionLabel {
        let (xb, yb) = self.vertex;
        let tol = self.tol;
        if (x - xb).abs() <= tol && (y - yb).abs() <= tol {
            return RegionLabel::A0;
        }
        let in_a1_band = y <= yb;
        let in_a2_band = x <= xb;
        let xc = if in_a1_band { self.a1_abscissa(y) } else { f64::NAN };
        let yc = if in_a2_band { self.a2_ordinate(x) } else { f64::NAN };
        if in_a1_band && (x - xc).abs() <= tol {
            return RegionLabel::A1;
        }
        if in_a2_band && (y - yc).abs() <= tol {
            return RegionLabel::A2;
        }
        if x >= xb && y >= yb {
            return RegionLabel::B0;
        }
        if in_a1_band && x > xc {
            return RegionLabel::B1;
        }
        if in_a2_band && y > yc {
            return RegionLabel::B2;
        }
        RegionLabel::C
    }

    /// Dividend rate of Company One on `𝒜₁`, `−p₂ / ξ₁′(x − r y)`.
    pub fn rate_on_a1(&self, params: &ModelParams, x: f64, y: f64) -> Result<f64, CurveError> {
        let u = x - self.ratio * y;
        let d = self.xi1.derivative(u);
        if !(d < 0.0) {
            return Err(CurveError::NonNegativeSlope { at: u, slope: d });
        }
        Ok(-params.p2 / d)
    }

    /// Dividend rate of Company Two on `𝒜₂`, `−p₁ / ξ₂′(y − x / r)`.
    pub fn rate_on_a2(&self, params: &ModelParams, x: f64, y: f64) -> Result<f64, CurveError> {
        let v = y - x / self.ratio;
        let d = self.xi2.derivative(v);
        if !(d < 0.0) {
            return Err(CurveError::NonNegativeSlope { at: v, slope: d });
        }
        Ok(-params.p1 / d)
    }

    /// Lump sums `(ΔL₁, ΔL₂)` paid in the regions `ℬ₀`, `ℬ₁`, `ℬ₂`.
    pub fn lump_sum(&self, x: f64, y: f64) -> Result<(f64, f64), CurveError> {
        match self.classify(x, y) {
            RegionLabel::B0 => Ok(((x - self.vertex.0).max(0.0), (y - self.vertex.1).max(0.0))),
            RegionLabel::B1 => Ok(((x - self.a1_abscissa(y)).max(0.0), 0.0)),
            RegionLabel::B2 => Ok((0.0, (y - self.a2_ordinate(x)).max(0.0))),
            _ => Err(CurveError::NotInPaymentRegion { x, y }),
        }
    }

    /// Lump sums owed at `(x, y)`, zero outside the `ℬ` regions.
    pub fn payout(&self, x: f64, y: f64) -> (f64, f64) {
        self.lump_sum(x, y).unwrap_or((0.0, 0.0))
    }

    /// The strategy with the companies exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            vertex: (self.vertex.1, self.vertex.0),
            xi1: self.xi2.clone(),
            xi2: self.xi1.clone(),
            ratio: 1.0 / self.ratio,
            tol: self.tol,
        }
    }

    /// Distance between this spec and its mirror image: vertex offset and
    /// curve gaps on the common domain, plus the mismatch of the end points.
    pub fn mirror_gap(&self) -> f64 {
        let v = (self.vertex.0 - self.vertex.1).abs();
        let c = self.xi1.sup_distance(&self.xi2);
        let e = (self.xi1.end() - self.xi2.end()).abs().max((self.xi1.start() - self.xi2.start()).abs());
        v.max(c).max(e)
    }

    /// Curve convergence metric: vertex distance and sup-distance of both
    /// curves on their overlapping domains.
    pub fn distance(&self, other: &CurveSpec) -> f64 {
        let dv = (self.vertex.0 - other.vertex.0).abs().max((self.vertex.1 - other.vertex.1).abs());
        dv.max(self.xi1.sup_distance(&other.xi1)).max(self.xi2.sup_distance(&other.xi2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClaimLaw;
    use proptest::prelude::*;

    fn unit_params() -> ModelParams {
        let law = ClaimLaw::exponential(3.0);
        ModelParams::new(1.0, 1.0, 20.0 / 9.0, 20.0 / 9.0, law.clone(), law, 0.1, 0.5).unwrap()
    }

    pub(crate) fn figure_spec() -> CurveSpec {
        let xi1 = MonotoneCurve::from_fn(-1.0, 4.0, 5000, |u| 2.0 * (u - 4.0) * (u - 6.0) / 35.0).unwrap();
        let xi2 = MonotoneCurve::from_fn(1.0, 3.0, 2000, |v| (v - 3.0) * (v - 6.0) / 10.0).unwrap();
        CurveSpec::new((1.0, 2.0), xi1, xi2, &unit_params()).unwrap()
    }

    #[test]
    fn figure_point_in_b1() {
        let spec = figure_spec();
        let inv = (10.0 - 74f64.sqrt()) / 2.0;
        assert!((spec.xi1.inverse(1.0) - inv).abs() < 1e-6);
        assert!((inv - 0.698_838).abs() < 1e-6);
        assert_eq!(spec.classify(5.0, 1.0), RegionLabel::B1);
        let (l1, l2) = spec.lump_sum(5.0, 1.0).unwrap();
        assert!((l1 - (4.0 - inv)).abs() < 1e-6 && l2 == 0.0);
        assert!((l1 - 3.301_162).abs() < 1e-6);
        let after = spec.with_tolerance(1e-6);
        assert_eq!(after.classify(5.0 - l1, 1.0), RegionLabel::A1);
    }

    #[test]
    fn vertex_and_b0() {
        let spec = figure_spec().with_tolerance(0.01);
        assert_eq!(spec.classify(1.0, 2.0), RegionLabel::A0);
        assert_eq!(spec.classify(2.0, 3.0), RegionLabel::B0);
        assert_eq!(spec.lump_sum(3.0, 5.0).unwrap(), (2.0, 3.0));
        assert_eq!(spec.classify(0.2, 0.2), RegionLabel::C);
        assert!(spec.lump_sum(0.2, 0.2).is_err());
        // above A2, left of the vertex
        assert_eq!(spec.classify(0.5, 3.5), RegionLabel::B2);
    }

    #[test]
    fn rate_on_figure_curve() {
        let spec = figure_spec();
        let u = (10.0 - 74f64.sqrt()) / 2.0;
        let (x, y) = spec.a1_point(u);
        let r = spec.rate_on_a1(&unit_params(), x, y).unwrap();
        let d = (4.0 * u - 20.0) / 35.0;
        assert!((d + 0.491_561).abs() < 1e-6);
        assert!((r - 2.034_34).abs() < 1e-4, "rate {r}");
        // steeper curve, smaller rate
        let (x2, y2) = spec.a1_point(-0.5);
        assert!(spec.rate_on_a1(&unit_params(), x2, y2).unwrap() < r);
    }

    #[test]
    fn straight_segment_pays_both_premiums() {
        // ξ₁ with slope −p₂/(p₁+p₂) is the segment x + y = K; rate p₁ + p₂
        let law = ClaimLaw::exponential(3.0);
        let params = ModelParams::new(1.5, 0.5, 0.1, 0.1, law.clone(), law, 0.1, 0.5).unwrap();
        let r = 3.0;
        let (xb, yb) = (1.0, 1.0);
        let ub = xb - r * yb;
        let s = -params.p2 / (params.p1 + params.p2);
        let m = ub - yb / s;
        let xi1 = MonotoneCurve::from_fn(ub, m, 50, |u| yb + s * (u - ub)).unwrap();
        let vb = yb - xb / r;
        let xi2 = MonotoneCurve::from_fn(vb, vb + 1.0, 10, |v| xb * (1.0 - (v - vb))).unwrap();
        let spec = CurveSpec::new((xb, yb), xi1, xi2, &params).unwrap();
        let (x, y) = spec.a1_point(ub + 0.3 * (m - ub));
        assert!((x + y - 2.0).abs() < 1e-12);
        assert!((spec.rate_on_a1(&params, x, y).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn curve_validation() {
        assert!(matches!(MonotoneCurve::new(vec![0.0, 1.0], vec![1.0, 0.5]), Err(CurveError::NonZeroEnd(_))));
        assert!(matches!(
            MonotoneCurve::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]),
            Err(CurveError::NotDecreasing { .. })
        ));
        assert!(MonotoneCurve::new(vec![0.0, 0.0], vec![1.0, 0.0]).is_err());
        assert!(MonotoneCurve::new(vec![2.0], vec![0.0]).unwrap().is_degenerate());
        let c = MonotoneCurve::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!(c.try_value(1.5).is_err());
        let xi2 = MonotoneCurve::from_fn(1.0, 3.0, 20, |v| (v - 3.0) * (v - 6.0) / 10.0).unwrap();
        let bad = MonotoneCurve::from_fn(-1.0, 4.0, 20, |u| 2.5 * (u - 4.0) * (u - 6.0) / 35.0).unwrap();
        assert!(matches!(
            CurveSpec::new((1.0, 2.0), bad, xi2, &unit_params()),
            Err(CurveError::VertexMismatch(_))
        ));
    }

    #[test]
    fn mirrored_spec_mirrors_labels() {
        let spec = figure_spec().with_tolerance(0.01);
        let m = spec.mirrored();
        for &(x, y) in &[(5.0, 1.0), (0.5, 3.5), (0.2, 0.2), (2.0, 3.0), (1.0, 2.0)] {
            assert_eq!(m.classify(y, x), spec.classify(x, y).mirrored());
        }
        assert_eq!(m.mirrored(), spec);
    }

    #[test]
    fn serde_roundtrip() {
        let spec = figure_spec();
        let json = serde_json::to_string(&spec.to_data()).unwrap();
        let back: CurveSpecData = serde_json::from_str(&json).unwrap();
        assert_eq!(CurveSpec::from_data(back, &unit_params()).unwrap(), spec);
    }

    proptest! {
        #[test]
        fn inverse_roundtrip_and_total_classification(x in 0.0f64..8.0, y in 0.0f64..8.0, k in 0usize..5001) {
            let spec = figure_spec().with_tolerance(0.01);
            let u = spec.xi1.abscissae()[k];
            prop_assert!((spec.xi1.inverse(spec.xi1.value(u)) - u).abs() <= 1e-9);
            let label = spec.classify(x, y);
            prop_assert!(RegionLabel::ALL.contains(&label));
            if matches!(label, RegionLabel::B0 | RegionLabel::B1 | RegionLabel::B2) {
                let (l1, l2) = spec.lump_sum(x, y).unwrap();
                prop_assert!(l1 >= 0.0 && l2 >= 0.0);
                prop_assert!(spec.classify(x - l1, y - l2).is_curve());
            }
        }

        #[test]
        fn symmetric_spec_labels_mirror(x in 0.0f64..5.0, y in 0.0f64..5.0) {
            let xi = MonotoneCurve::from_fn(0.0, 2.5, 250, |u| 1.0 - u * u / 6.25).unwrap();
            let spec = CurveSpec::new((1.0, 1.0), xi.clone(), xi, &unit_params()).unwrap().with_tolerance(0.01);
            prop_assert_eq!(spec.classify(y, x), spec.classify(x, y).mirrored());
        }
    }
}
