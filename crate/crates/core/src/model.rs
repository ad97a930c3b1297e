//! Model parameters for two Cramér–Lundberg surpluses and their claim laws.
//!
//! Company `k` collects premium at rate `p_k` and pays i.i.d. claims arriving
//! at Poisson rate `λ_k`. Dividends of Company One are weighted by `a₁` and
//! those of Company Two by `a₂ = 1 - a₁`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Claim-size distribution of one company.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimLaw {
    /// Exponential claims with the given rate (mean `1/rate`).
    Exponential { rate: f64 },
    /// Piecewise-linear cdf through sampled points. Beyond the last sample the
    /// cdf is held at its last value (no tail extrapolation).
    Numeric(NumericCdf),
}

/// A cdf sampled on a strictly increasing grid starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCdf", into = "RawCdf")]
pub struct NumericCdf {
    s: Vec<f64>,
    f: Vec<f64>,
    /// `∫_0^{s_k} F`, used for exact integrals of the interpolant.
    cum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCdf {
    points: Vec<[f64; 2]>,
}

impl TryFrom<RawCdf> for NumericCdf {
    type Error = ModelError;

    fn try_from(raw: RawCdf) -> Result<Self, Self::Error> {
        let (s, f) = raw.points.iter().map(|p| (p[0], p[1])).unzip();
        NumericCdf::new(s, f)
    }
}

impl From<NumericCdf> for RawCdf {
    fn from(c: NumericCdf) -> Self {
        RawCdf {
            points: c.s.iter().zip(&c.f).map(|(&s, &f)| [s, f]).collect(),
        }
    }
}

impl NumericCdf {
    pub fn new(s: Vec<f64>, f: Vec<f64>) -> Result<Self, ModelError> {
        if s.len() != f.len() || s.len() < 2 {
            return Err(ModelError::InvalidCdf(
                "need at least two (s, F) points of equal length".into(),
            ));
        }
        if s[0] != 0.0 || f[0] != 0.0 {
            return Err(ModelError::InvalidCdf("cdf must start at F(0) = 0".into()));
        }
        for w in s.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(ModelError::InvalidCdf(format!(
                    "abscissae not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        for w in f.windows(2) {
            if w[1] < w[0] || !(0.0..=1.0).contains(&w[1]) {
                return Err(ModelError::InvalidCdf(format!(
                    "cdf values must be non-decreasing in [0, 1], found {}",
                    w[1]
                )));
            }
        }
        let mut cum = Vec::with_capacity(s.len());
        cum.push(0.0);
        for k in 1..s.len() {
            let prev = cum[k - 1];
            cum.push(prev + 0.5 * (f[k] + f[k - 1]) * (s[k] - s[k - 1]));
        }
        Ok(Self { s, f, cum })
    }

    /// Samples a closed-form cdf on a uniform grid over `[0, s_max]`.
    pub fn sample_fn<F: Fn(f64) -> f64>(s_max: f64, n: usize, cdf: F) -> Result<Self, ModelError> {
        let n = n.max(1);
        let s: Vec<f64> = (0..=n).map(|k| s_max * k as f64 / n as f64).collect();
        let mut f: Vec<f64> = s.iter().map(|&x| cdf(x).clamp(0.0, 1.0)).collect();
        f[0] = 0.0;
        for k in 1..f.len() {
            if f[k] < f[k - 1] {
                f[k] = f[k - 1];
            }
        }
        Self::new(s, f)
    }

    pub fn last_abscissa(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn segment(&self, x: f64) -> usize {
        match self.s.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(self.s.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.s.len() - 2),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let last = self.s.len() - 1;
        if x >= self.s[last] {
            return self.f[last];
        }
        let k = self.segment(x);
        let t = (x - self.s[k]) / (self.s[k + 1] - self.s[k]);
        self.f[k] + t * (self.f[k + 1] - self.f[k])
    }

    /// `∫_0^x F(s) ds` for the interpolant.
    fn cdf_primitive(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let last = self.s.len() - 1;
        if x >= self.s[last] {
            return self.cum[last] + self.f[last] * (x - self.s[last]);
        }
        let k = self.segment(x);
        let fx = self.cdf(x);
        self.cum[k] + 0.5 * (self.f[k] + fx) * (x - self.s[k])
    }

    fn quantile(&self, u: f64) -> f64 {
        let last = self.s.len() - 1;
        if u >= self.f[last] {
            return self.s[last];
        }
        // first k with f[k+1] > u
        let mut lo = 0;
        let mut hi = last;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.f[mid] > u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let df = self.f[hi] - self.f[lo];
        if df <= 0.0 {
            return self.s[hi];
        }
        self.s[lo] + (u - self.f[lo]) / df * (self.s[hi] - self.s[lo])
    }

    fn mean(&self) -> f64 {
        let last = self.s.len() - 1;
        self.s[last] - self.cum[last]
    }
}

impl ClaimLaw {
    pub fn exponential(rate: f64) -> Self {
        ClaimLaw::Exponential { rate }
    }

    /// Mean claim size. For numeric laws this is `∫ (1 - F)` over the sampled range.
    pub fn mean(&self) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => 1.0 / rate,
            ClaimLaw::Numeric(c) => c.mean(),
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => {
                if s <= 0.0 {
                    0.0
                } else {
                    -(-rate * s).exp_m1()
                }
            }
            ClaimLaw::Numeric(c) => c.cdf(s),
        }
    }

    /// `1 - F(s)`. Numeric laws clamp to the last sampled tail value beyond
    /// their grid.
    pub fn tail(&self, s: f64) -> Result<f64, ModelError> {
        if s < 0.0 || s.is_nan() {
            return Err(ModelError::NegativeArgument(s));
        }
        Ok(self.tail_unchecked(s))
    }

    pub(crate) fn tail_unchecked(&self, s: f64) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => (-rate * s.max(0.0)).exp(),
            ClaimLaw::Numeric(c) => 1.0 - c.cdf(s),
        }
    }

    /// Weights `(A, B)` such that for `g` linear on `[a, a + len]`,
    /// `∫ g dF = A·g(a) + B·g(a + len)`.
    pub fn linear_weights(&self, a: f64, len: f64) -> (f64, f64) {
        if len <= 0.0 {
            return (0.0, 0.0);
        }
        match self {
            ClaimLaw::Exponential { rate } => {
                let x = rate * len;
                let q = crate::quad::one_minus_exp_over(x);
                let ea = (-rate * a).exp();
                (ea * (1.0 - q), ea * (q - (-x).exp()))
            }
            ClaimLaw::Numeric(c) => {
                let b = a + len;
                let mean_f = (c.cdf_primitive(b) - c.cdf_primitive(a)) / len;
                ((mean_f - c.cdf(a)).max(0.0), (c.cdf(b) - mean_f).max(0.0))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ClaimLaw::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            ClaimLaw::Numeric(c) => c.quantile(rng.random::<f64>()),
        }
    }

    /// The law `(w1·F1 + w2·F2) / (w1 + w2)`. Identical laws (or a zero weight)
    /// return the surviving law unchanged; anything else is sampled numerically.
    pub fn mixture(w1: f64, law1: &ClaimLaw, w2: f64, law2: &ClaimLaw) -> ClaimLaw {
        if w2 == 0.0 || law1 == law2 {
            return law1.clone();
        }
        if w1 == 0.0 {
            return law2.clone();
        }
        let tot = w1 + w2;
        let reach = |law: &ClaimLaw| match law {
            ClaimLaw::Exponential { rate } => 30.0 / rate,
            ClaimLaw::Numeric(c) => c.last_abscissa(),
        };
        let s_max = reach(law1).max(reach(law2));
        let cdf = |s: f64| (w1 * law1.cdf(s) + w2 * law2.cdf(s)) / tot;
        ClaimLaw::Numeric(NumericCdf::sample_fn(s_max, 20_000, cdf).expect("mixture cdf is valid"))
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite(&'static str),
    PremiumNotPositive { company: u8 },
    IntensityNegative { company: u8 },
    InvalidLaw { company: u8, reason: String },
    NetProfit { company: u8, premium: f64, loading: f64 },
    DiscountNotPositive,
    WeightOutOfRange(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite(name) => write!(f, "{name} is not finite"),
            Violation::PremiumNotPositive { company } => {
                write!(f, "premium company {company} must be positive")
            }
            Violation::IntensityNegative { company } => {
                write!(f, "intensity company {company} must be nonnegative")
            }
            Violation::InvalidLaw { company, reason } => {
                write!(f, "claim law company {company}: {reason}")
            }
            Violation::NetProfit { company, premium, loading } => write!(
                f,
                "net profit company {company}: premium {premium} <= expected claims {loading}"
            ),
            Violation::DiscountNotPositive => write!(f, "discount rate must be positive"),
            Violation::WeightOutOfRange(a) => write!(f, "weight a1 = {a} outside [0, 1]"),
        }
    }
}

/// Parameters of the two-company model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p1: f64,
    pub p2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub law1: ClaimLaw,
    pub law2: ClaimLaw,
    pub delta: f64,
    pub a1: f64,
}

impl ModelParams {
    /// Builds and validates a parameter set.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p1: f64,
        p2: f64,
        lambda1: f64,
        lambda2: f64,
        law1: ClaimLaw,
        law2: ClaimLaw,
        delta: f64,
        a1: f64,
    ) -> Result<Self, ModelError> {
        let params = Self { p1, p2, lambda1, lambda2, law1, law2, delta, a1 };
        params.ensure_valid()?;
        Ok(params)
    }

    /// The symmetric, equally weighted example with exponential(3) claims,
    /// unit premiums, `λ₁ = λ₂ = 20/9` and `δ = 0.1`.
    pub fn symmetric_example() -> Self {
        let law = ClaimLaw::exponential(3.0);
        Self::new(1.0, 1.0, 20.0 / 9.0, 20.0 / 9.0, law.clone(), law, 0.1, 0.5)
            .expect("example parameters are valid")
    }

    pub fn a2(&self) -> f64 {
        1.0 - self.a1
    }

    /// Total claim intensity `λ = λ₁ + λ₂`.
    pub fn lambda(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    /// Weighted premium `p = a₁p₁ + a₂p₂`.
    pub fn premium(&self) -> f64 {
        self.a1 * self.p1 + self.a2() * self.p2
    }

    /// `δ + λ`, the decay rate of the first-claim discount.
    pub fn decay(&self) -> f64 {
        self.delta + self.lambda()
    }

    /// Every violated invariant; empty when the parameters are admissible.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let scalars = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("delta", self.delta),
            ("a1", self.a1),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                out.push(Violation::NonFinite(name));
            }
        }
        for (company, p, lam, law) in [
            (1u8, self.p1, self.lambda1, &self.law1),
            (2u8, self.p2, self.lambda2, &self.law2),
        ] {
            if !(p > 0.0) {
                out.push(Violation::PremiumNotPositive { company });
            }
            if !(lam >= 0.0) {
                out.push(Violation::IntensityNegative { company });
            }
            if let ClaimLaw::Exponential { rate } = law {
                if !(*rate > 0.0) || !rate.is_finite() {
                    out.push(Violation::InvalidLaw {
                        company,
                        reason: format!("exponential rate {rate} must be positive"),
                    });
                    continue;
                }
            }
            let loading = lam * law.mean();
            if lam > 0.0 && !(p > loading) {
                out.push(Violation::NetProfit { company, premium: p, loading });
            }
        }
        if !(self.delta > 0.0) {
            out.push(Violation::DiscountNotPositive);
        }
        if !(0.0..=1.0).contains(&self.a1) {
            out.push(Violation::WeightOutOfRange(self.a1));
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    /// True when swapping the companies leaves the problem unchanged.
    pub fn is_symmetric(&self) -> bool {
        self.p1 == self.p2
            && self.lambda1 == self.lambda2
            && self.law1 == self.law2
            && self.a1 == self.a2()
    }

    /// The same model with the roles of the two companies exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
            lambda1: self.lambda2,
            lambda2: self.lambda1,
            law1: self.law2.clone(),
            law2: self.law1.clone(),
            delta: self.delta,
            a1: self.a2(),
        }
    }
}
