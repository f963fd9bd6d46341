//! Problem data: gravity, wave speed, flux, streamline density ρ(p) and
//! Bernoulli function β, together with the admissibility quantities derived
//! from them (B, B_min, ‖ρ′‖∞, ε0, the size condition).

use std::f64::consts::PI;

use crate::interp::MonotoneCubic;
use crate::quad;

/// Number of uniform samples used for ‖ρ′‖∞ and B_min.
pub const SAMPLES: usize = 2048;

/// Slack allowed when an evaluation point lies just outside `[p0, 0]`.
const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("invalid flow parameter: {0}")]
    InvalidParams(String),
    #[error("density is not positive at p = {p} (rho = {value})")]
    NonPositiveDensity { p: f64, value: f64 },
    #[error("density increases with p at p = {p} (rho_p = {slope})")]
    IncreasingDensity { p: f64, slope: f64 },
    #[error("table does not cover [{lo}, {hi}]")]
    TableRange { lo: f64, hi: f64 },
    #[error("bad profile table: {0}")]
    BadTable(String),
    #[error("profile is not finite at {0}")]
    NotFinite(f64),
}

/// Scalar parameters. The period is fixed to 2π by scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub g: f64,
    pub c: f64,
    pub p0: f64,
}

impl FlowParams {
    pub fn new(g: f64, c: f64, p0: f64) -> Result<Self, ProfileError> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(ProfileError::InvalidParams(format!("g must be positive, got {g}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(ProfileError::InvalidParams(format!("c must be positive, got {c}")));
        }
        if !(p0 < 0.0 && p0.is_finite()) {
            return Err(ProfileError::InvalidParams(format!("p0 must be negative, got {p0}")));
        }
        Ok(Self { g, c, p0 })
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI
    }
}

/// A scalar function of one variable: polynomial coefficients (lowest degree
/// first) or a shape-preserving cubic through tabulated samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Poly(Vec<f64>),
    Table(MonotoneCubic),
}

impl Shape {
    pub fn poly(coeffs: &[f64]) -> Self {
        let mut c = coeffs.to_vec();
        if c.is_empty() {
            c.push(0.0);
        }
        Shape::Poly(c)
    }

    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self, ProfileError> {
        MonotoneCubic::new(x, y)
            .map(Shape::Table)
            .ok_or_else(|| ProfileError::BadTable("need at least two strictly increasing finite nodes".into()))
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Shape::Poly(c) => {
                let mut v = 0.0;
                let mut dv = 0.0;
                for &a in c.iter().rev() {
                    dv = dv * x + v;
                    v = v * x + a;
                }
                (v, dv)
            }
            Shape::Table(m) => m.eval(x),
        }
    }

    // ∫_0^x of the shape.
    fn integral(&self, x: f64) -> f64 {
        match self {
            Shape::Poly(c) => {
                let mut v = 0.0;
                for (k, &a) in c.iter().enumerate().rev() {
                    v = v * x + a / (k + 1) as f64;
                }
                v * x
            }
            Shape::Table(m) => m.integral(x) - m.integral(0.0),
        }
    }

    fn covers(&self, lo: f64, hi: f64) -> Result<(), ProfileError> {
        if let Shape::Table(m) = self {
            let (a, b) = m.domain();
            let slack = 1e-9 * (hi - lo).abs().max(1.0);
            if a > lo + slack || b < hi - slack {
                return Err(ProfileError::TableRange { lo, hi });
            }
        }
        Ok(())
    }

    fn is_constant(&self) -> bool {
        match self {
            Shape::Poly(c) => c.iter().skip(1).all(|&a| a == 0.0),
            Shape::Table(m) => m.values().windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// Streamline density ρ(p) on `[p0, 0]`, extended by constants outside.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    shape: Shape,
    p0: f64,
}

impl DensityProfile {
    pub fn new(shape: Shape, p0: f64) -> Result<Self, ProfileError> {
        shape.covers(p0, 0.0)?;
        Ok(Self { shape, p0 })
    }

    pub fn constant(rho: f64, p0: f64) -> Result<Self, ProfileError> {
        Self::new(Shape::poly(&[rho]), p0)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// (ρ, ρ_p) at `p`. Inside `[p0, 0]` (with 1e-12 slack) this is the
    /// representation itself; further out the end value is held and ρ_p = 0.
    pub fn eval(&self, p: f64) -> (f64, f64) {
        if p < self.p0 - CLAMP_TOL {
            (self.shape.eval(self.p0).0, 0.0)
        } else if p > CLAMP_TOL {
            (self.shape.eval(0.0).0, 0.0)
        } else {
            self.shape.eval(p.clamp(self.p0, 0.0))
        }
    }

    pub fn rho(&self, p: f64) -> f64 {
        self.eval(p).0
    }

    pub fn rho_p(&self, p: f64) -> f64 {
        self.eval(p).1
    }

    pub fn is_constant(&self) -> bool {
        self.shape.is_constant()
    }

    /// ρ_p at the nearest point of `[p0, 0]`. Integrators that may probe a
    /// little past an endpoint use this so the right-hand side has no kink there.
    pub fn rho_p_held(&self, p: f64) -> f64 {
        self.shape.eval(p.clamp(self.p0, 0.0)).1
    }
}

/// Bernoulli function β(s) on `[0, |p0|]` and its antiderivative
/// B(p) = ∫₀ᵖ β(−s) ds on `[p0, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliProfile {
    shape: Shape,
    p0: f64,
    b_min: f64,
    b_min_at: f64,
}

impl BernoulliProfile {
    pub fn new(shape: Shape, p0: f64) -> Result<Self, ProfileError> {
        shape.covers(0.0, -p0)?;
        let mut out = Self { shape, p0, b_min: 0.0, b_min_at: 0.0 };
        let (at, val) = out.locate_min();
        out.b_min = val;
        out.b_min_at = at;
        Ok(out)
    }

    pub fn zero(p0: f64) -> Self {
        Self::new(Shape::poly(&[0.0]), p0).expect("zero profile is valid")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// β(s), held constant outside `[0, |p0|]`.
    pub fn beta(&self, s: f64) -> f64 {
        self.shape.eval(s.clamp(0.0, -self.p0)).0
    }

    /// B(p); constant outside `[p0, 0]`.
    pub fn b(&self, p: f64) -> f64 {
        let p = p.clamp(self.p0, 0.0);
        -self.shape.integral(-p)
    }

    /// B′(p) = β(−p) inside `[p0, 0]`, zero outside.
    pub fn b_prime(&self, p: f64) -> f64 {
        if p < self.p0 - CLAMP_TOL || p > CLAMP_TOL {
            0.0
        } else {
            self.beta(-p)
        }
    }

    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    /// Location of the minimum of B.
    pub fn b_min_at(&self) -> f64 {
        self.b_min_at
    }

    fn locate_min(&self) -> (f64, f64) {
        let n = SAMPLES;
        let step = -self.p0 / (n - 1) as f64;
        let mut best = (0.0, 0.0);
        let mut k_best = n - 1;
        for k in 0..n {
            let p = self.p0 + step * k as f64;
            let v = self.b(p);
            if v < best.1 {
                best = (p, v);
                k_best = k;
            }
        }
        // polish inside the neighbouring sample cells
        let lo = (self.p0 + step * k_best.saturating_sub(1) as f64).max(self.p0);
        let hi = (self.p0 + step * (k_best + 1) as f64).min(0.0);
        let (mut a, mut b) = (lo, hi);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if self.b(x1) < self.b(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let x = 0.5 * (a + b);
        let v = self.b(x);
        if v < best.1 {
            (x, v)
        } else {
            best
        }
    }
}

/// The full problem data with cached derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBundle {
    pub params: FlowParams,
    pub rho: DensityProfile,
    pub beta: BernoulliProfile,
    rho_prime_max: f64,
    eps0: f64,
}

/// Result of the explicit size test on (p0, ρ, β).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SizeCondition {
    pub holds: bool,
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl ProfileBundle {
    pub fn new(params: FlowParams, rho: DensityProfile, beta: BernoulliProfile) -> Result<Self, ProfileError> {
        let p0 = params.p0;
        if rho.p0 != p0 || beta.p0 != p0 {
            return Err(ProfileError::InvalidParams("profiles built for a different p0".into()));
        }
        let nodes = match rho.shape() {
            Shape::Table(m) => m.nodes().len(),
            Shape::Poly(_) => 0,
        };
        let n = (10 * nodes).max(SAMPLES);
        let mut rho_prime_max: f64 = 0.0;
        for k in 0..n {
            let p = p0 * (1.0 - k as f64 / (n - 1) as f64);
            let (r, rp) = rho.eval(p);
            if !r.is_finite() || !rp.is_finite() {
                return Err(ProfileError::NotFinite(p));
            }
            if r <= 0.0 {
                return Err(ProfileError::NonPositiveDensity { p, value: r });
            }
            if rp > 1e-12 * r.abs().max(1.0) {
                return Err(ProfileError::IncreasingDensity { p, slope: rp });
            }
            rho_prime_max = rho_prime_max.max(rp.abs());
        }
        for k in 0..SAMPLES {
            let p = p0 * (1.0 - k as f64 / (SAMPLES - 1) as f64);
            if !beta.b(p).is_finite() || !beta.beta(-p).is_finite() {
                return Err(ProfileError::NotFinite(p));
            }
        }
        if rho.is_constant() {
            rho_prime_max = 0.0;
        }
        let rho0 = rho.rho(0.0);
        let eps0 = epsilon0_from(params.g, p0, rho0, rho_prime_max);
        Ok(Self { params, rho, beta, rho_prime_max, eps0 })
    }

    pub fn g(&self) -> f64 {
        self.params.g
    }

    pub fn p0(&self) -> f64 {
        self.params.p0
    }

    pub fn rho0(&self) -> f64 {
        self.rho.rho(0.0)
    }

    pub fn eval_density(&self, p: f64) -> (f64, f64) {
        self.rho.eval(p)
    }

    pub fn eval_b(&self, p: f64) -> f64 {
        self.beta.b(p)
    }

    pub fn b_min(&self) -> f64 {
        self.beta.b_min()
    }

    /// ‖ρ′‖∞ over `[p0, 0]`, by dense sampling.
    pub fn rho_prime_max(&self) -> f64 {
        self.rho_prime_max
    }

    pub fn epsilon0(&self) -> f64 {
        self.eps0
    }

    pub fn is_constant_density(&self) -> bool {
        self.rho_prime_max == 0.0
    }

    /// Lower end of the λ-range on which laminar flows are admitted:
    /// −2B_min + ε0.
    pub fn lambda_lower(&self) -> f64 {
        -2.0 * self.b_min() + self.eps0
    }

    /// Evaluates the explicit sufficient condition for (L-B); `margin` is
    /// LHS − RHS with the period normalized to 2π.
    pub fn check_size_condition(&self) -> SizeCondition {
        let g = self.g();
        let p0 = self.p0();
        let bmin = self.b_min();
        let e0 = self.eps0;
        let lhs = g * self.rho0() * p0 * p0;
        let integrand = |p: f64| {
            let w = (2.0 * self.beta.b(p) - 2.0 * bmin + 2.0 * e0).max(0.0);
            let rp = self.rho.rho_p(p);
            w.powf(1.5) + (p - p0).powi(2) * (w.sqrt() + g * rp)
        };
        let rhs = quad::integrate(integrand, p0, 0.0, 1e-13);
        let margin = lhs - rhs;
        SizeCondition { holds: margin > 0.0, margin, lhs, rhs }
    }
}

/// The four candidates whose maximum is ε0, for given g, p0, ρ(0) and ‖ρ′‖∞.
pub fn epsilon0_terms(g: f64, p0: f64, rho0: f64, rho_prime_max: f64) -> [f64; 4] {
    let r = rho_prime_max;
    [
        (2.0 * g * r * p0 * p0 * p0.abs().exp()).powf(2.0 / 3.0),
        (2.0 * g * r).powi(2),
        (4.0 * r).powi(2),
        (8.0 * g * p0.abs() * rho0).powf(2.0 / 3.0),
    ]
}

/// ε0 with the homogeneous convention: zero when ρ′ vanishes identically.
pub fn epsilon0_from(g: f64, p0: f64, rho0: f64, rho_prime_max: f64) -> f64 {
    if rho_prime_max == 0.0 {
        return 0.0;
    }
    epsilon0_terms(g, p0, rho0, rho_prime_max).into_iter().fold(0.0, f64::max)
}

/// Convenience constructor for polynomial data.
pub fn poly_bundle(g: f64, c: f64, p0: f64, rho: &[f64], beta: &[f64]) -> Result<ProfileBundle, ProfileError> {
    let params = FlowParams::new(g, c, p0)?;
    let rho = DensityProfile::new(Shape::poly(rho), p0)?;
    let beta = BernoulliProfile::new(Shape::poly(beta), p0)?;
    ProfileBundle::new(params, rho, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_evaluation() {
        let s = Shape::poly(&[1.0, -0.2, 0.5]);
        let (v, dv) = s.eval(-1.0);
        assert!((v - 1.7).abs() < 1e-15);
        assert!((dv - (-0.2 - 1.0)).abs() < 1e-15);
        // ∫_0^{-1} (1 - 0.2x + 0.5x²) dx = -1 - 0.1 - 1/6
        assert!((s.integral(-1.0) - (-1.0 - 0.1 - 1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn epsilon0_examples() {
        assert!((epsilon0_from(1.0, -1.0, 1.0, 0.2) - 4.0).abs() < 1e-12);
        assert!((epsilon0_from(1.0, -1.0, 1.0, 10.0) - 1600.0).abs() < 1e-9);
        assert_eq!(epsilon0_from(1.0, -1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn b_min_of_linear_beta() {
        let b = BernoulliProfile::new(Shape::poly(&[0.5]), -2.0).unwrap();
        assert!((b.b_min() + 1.0).abs() < 1e-14);
        assert_eq!(b.b_min_at(), -2.0);
        let b = BernoulliProfile::new(Shape::poly(&[-0.5]), -2.0).unwrap();
        assert_eq!(b.b_min(), 0.0);
    }

    #[test]
    fn interior_b_min_is_polished() {
        // β(s) = 0.5 - s on [0, 1]: B(p) = p²/2 + p/2, minimum -1/8 at p = -1/2
        let b = BernoulliProfile::new(Shape::poly(&[0.5, -1.0]), -1.0).unwrap();
        assert!((b.b_min() + 0.125).abs() < 1e-14, "{}", b.b_min() + 0.125);
        assert!((b.b_min_at() + 0.5).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_density() {
        let params = FlowParams::new(1.0, 1.0, -1.0).unwrap();
        let r = DensityProfile::new(Shape::poly(&[1.0, 0.3]), -1.0).unwrap();
        let e = ProfileBundle::new(params, r, BernoulliProfile::zero(-1.0)).unwrap_err();
        assert!(matches!(e, ProfileError::IncreasingDensity { .. }));
        let r = DensityProfile::new(Shape::poly(&[-0.1, -0.5]), -1.0).unwrap();
        let e = ProfileBundle::new(params, r, BernoulliProfile::zero(-1.0)).unwrap_err();
        assert!(matches!(e, ProfileError::NonPositiveDensity { .. }));
    }
}
