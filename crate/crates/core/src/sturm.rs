//! The linearized problem along the laminar family.
//!
//! For each λ the principal eigenpair of
//!
//! ```text
//! −(a³ M′)′ = μ (k² a + g ρ′) M,   M(p0) = 0,   a³ M′(0) = g ρ(0) M(0)
//! ```
//!
//! with `a = H_p⁻¹` is computed; λ* is the value where μ = −1. The pencil is
//! discretized with linear elements and a lumped (trapezoid) mass matrix, so
//! the discrete Rayleigh quotient is exactly the one minimized.

use rayon::prelude::*;

use crate::laminar::{self, Admissibility, Lambda0, LaminarError, LaminarFlow, LaminarOptions};
use crate::ode::{self, OdeError, OdeOptions};
use crate::profiles::ProfileBundle;
use crate::roots::brent;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SturmError {
    #[error("Rayleigh denominator is not positive at lambda = {lambda} (node {node})")]
    DegenerateDenominator { lambda: f64, node: usize },
    #[error("(L-B) fails: inf of mu over the sweep is {inf_estimate} >= -1")]
    LbViolated { inf_estimate: f64 },
    #[error("shooting found no sign change of M(p0) near lambda = {lambda}")]
    ShootingBracket { lambda: f64 },
    #[error(transparent)]
    Laminar(#[from] LaminarError),
    #[error("integrator failure: {0}")]
    Integrator(#[from] OdeError),
}

#[derive(Debug, Clone, Copy)]
pub struct SturmOptions {
    /// Grid nodes on [p0, 0], endpoints included.
    pub np: usize,
    /// Horizontal wavenumber.
    pub k: f64,
    pub sweep_points: usize,
    pub rtol: f64,
    pub admissibility: Admissibility,
}

impl Default for SturmOptions {
    fn default() -> Self {
        Self { np: 256, k: 1.0, sweep_points: 64, rtol: 1e-13, admissibility: Admissibility::Strict }
    }
}

impl SturmOptions {
    pub fn with_np(mut self, np: usize) -> Self {
        self.np = np;
        self
    }

    pub fn with_admissibility(mut self, a: Admissibility) -> Self {
        self.admissibility = a;
        self
    }

    pub fn laminar(&self) -> LaminarOptions {
        LaminarOptions { np: self.np, rtol: self.rtol, admissibility: self.admissibility, s_budget: None }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EigenResult {
    pub lambda: f64,
    pub mu: f64,
    pub p: Vec<f64>,
    /// Eigenfunction on the grid, max|M| = 1 and M(0) > 0.
    pub m: Vec<f64>,
}

/// Outcome of the (L-B) sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LbCheck {
    pub holds: bool,
    pub inf_estimate: f64,
    pub lambdas: Vec<f64>,
    /// μ at each λ; `None` where the pencil was not definite or the laminar
    /// solve failed.
    pub mus: Vec<Option<f64>>,
}

/// Seven-term transversality sum and its rewritten form.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct XiReport {
    /// Grid evaluation with the stored eigenfunction normalization.
    pub xi: f64,
    pub terms: [f64; 7],
    /// −½Ξ1 − (3/2)∫∫a(1+Ġ)(φ*_p)² + ½Ξ6 on the grid.
    pub identity: f64,
    /// Both values divided by M(0)², comparable across normalizations.
    pub xi_per_m0: f64,
    pub identity_per_m0: f64,
}

/// Ξ and the identity from a single high-accuracy integration in p.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AccurateXi {
    /// λ with M(p0) = 0 for μ = −1, located by shooting.
    pub lambda_star: f64,
    /// Ξ with M(0) = 1.
    pub xi: f64,
    pub identity: f64,
    pub terms: [f64; 7],
}

impl AccurateXi {
    pub fn identity_gap(&self) -> f64 {
        ((self.xi - self.identity) / self.identity).abs()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BifurcationPoint {
    pub lambda_star: f64,
    pub q_star: f64,
    pub eigen: EigenResult,
    #[serde(skip)]
    pub laminar: LaminarFlow,
    pub gdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub qdot: f64,
    pub lambda0: Option<Lambda0>,
    /// λ* < λ0; `None` if λ0 could not be located.
    pub below_lambda0: Option<bool>,
    /// Number of sign changes of μ + 1 seen on the sweep.
    pub crossings: usize,
    pub sweep: LbCheck,
    pub xi: f64,
    pub xi_report: XiReport,
    pub accurate: AccurateXi,
}

/// Symmetric tridiagonal pencil in the unknowns at nodes 1..np−1.
struct Pencil {
    /// Stiffness diagonal and off-diagonal.
    kd: Vec<f64>,
    ke: Vec<f64>,
    /// Lumped mass diagonal.
    md: Vec<f64>,
}

fn pencil(bundle: &ProfileBundle, flow: &LaminarFlow, k: f64) -> Result<Pencil, SturmError> {
    let n = flow.np();
    let hs = flow.hp_step();
    let a = flow.a();
    let g = bundle.g();
    let kappa: Vec<f64> = (0..n - 1).map(|c| 0.5 * (a[c].powi(3) + a[c + 1].powi(3)) / hs).collect();
    let m = n - 1;
    let mut kd = vec![0.0; m];
    let mut ke = vec![0.0; m.saturating_sub(1)];
    let mut md = vec![0.0; m];
    for i in 0..m {
        let j = i + 1;
        let top = j == n - 1;
        kd[i] = kappa[j - 1] + if top { -g * bundle.rho0() } else { kappa[j] };
        if !top {
            ke[i] = -kappa[j];
        }
        let w = if top { 0.5 * hs } else { hs };
        md[i] = w * (k * k * a[j] + g * bundle.rho.rho_p(flow.p[j]));
        if !(md[i] > 0.0) {
            return Err(SturmError::DegenerateDenominator { lambda: flow.lambda, node: j });
        }
    }
    Ok(Pencil { kd, ke, md })
}

/// Number of eigenvalues of the tridiagonal (d, e) below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] / q };
        q = d[i] - x - off;
        if q == 0.0 {
            q = -f64::EPSILON * (d[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenpair of the symmetric tridiagonal (d, e).
fn smallest_eigenpair(d: &[f64], e: &[f64]) -> (f64, Vec<f64>) {
    let n = d.len();
    let radius = |i: usize| {
        let l = if i > 0 { e[i - 1].abs() } else { 0.0 };
        let r = if i + 1 < n { e[i].abs() } else { 0.0 };
        l + r
    };
    let mut lo = (0..n).map(|i| d[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| d[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    while hi - lo > 4.0 * f64::EPSILON * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(d, e, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // inverse iteration with a shift just below the eigenvalue keeps the
    // shifted matrix positive definite, so elimination needs no pivoting
    let sigma = lo - 64.0 * f64::EPSILON * scale;
    let mut x = vec![1.0; n];
    for _ in 0..3 {
        x = thomas_shifted(d, e, sigma, &x);
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
    }
    let mut num = 0.0;
    for i in 0..n {
        let mut tx = d[i] * x[i];
        if i > 0 {
            tx += e[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            tx += e[i] * x[i + 1];
        }
        num += x[i] * tx;
    }
    (num, x)
}

fn thomas_shifted(d: &[f64], e: &[f64], sigma: f64, rhs: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut c = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut piv = d[0] - sigma;
    c[0] = if n > 1 { e[0] / piv } else { 0.0 };
    y[0] = rhs[0] / piv;
    for i in 1..n {
        piv = d[i] - sigma - e[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = e[i] / piv;
        }
        y[i] = (rhs[i] - e[i - 1] * y[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        y[i] -= c[i] * y[i + 1];
    }
    y
}

/// Principal eigenpair for an already computed laminar flow.
pub fn principal_eigen_for(bundle: &ProfileBundle, flow: &LaminarFlow, k: f64) -> Result<EigenResult, SturmError> {
    let pen = pencil(bundle, flow, k)?;
    let s: Vec<f64> = pen.md.iter().map(|v| v.sqrt()).collect();
    let d: Vec<f64> = (0..s.len()).map(|i| pen.kd[i] / pen.md[i]).collect();
    let e: Vec<f64> = (0..pen.ke.len()).map(|i| pen.ke[i] / (s[i] * s[i + 1])).collect();
    let (mu, y) = smallest_eigenpair(&d, &e);
    let mut m = vec![0.0];
    m.extend(y.iter().zip(&s).map(|(v, w)| v / w));
    let top = m[m.len() - 1];
    let big = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let scale = if top < 0.0 { -1.0 / big } else { 1.0 / big };
    m.iter_mut().for_each(|v| *v *= scale);
    Ok(EigenResult { lambda: flow.lambda, mu, p: flow.p.clone(), m })
}

/// Principal eigenvalue μ(λ) and eigenfunction.
pub fn principal_eigen(bundle: &ProfileBundle, lambda: f64, opts: &SturmOptions) -> Result<EigenResult, SturmError> {
    let flow = laminar::solve_laminar(bundle, lambda, &opts.laminar())?;
    principal_eigen_for(bundle, &flow, opts.k)
}

pub fn mu_of_lambda(bundle: &ProfileBundle, lambda: f64, opts: &SturmOptions) -> Result<f64, SturmError> {
    principal_eigen(bundle, lambda, opts).map(|e| e.mu)
}

/// Discrete Rayleigh quotient of `phi` (values on the flow's grid, φ(p0) = 0).
///
/// `∫a³φ_p²` uses cellwise difference quotients with trapezoidal averages of
/// a³; the denominator uses trapezoid weights. This is the quotient the
/// eigen-solve minimizes.
pub fn rayleigh_for(bundle: &ProfileBundle, flow: &LaminarFlow, phi: &[f64], k: f64) -> Result<f64, SturmError> {
    assert_eq!(phi.len(), flow.np(), "phi must live on the flow grid");
    let n = flow.np();
    let hs = flow.hp_step();
    let a = flow.a();
    let g = bundle.g();
    let mut num = -g * bundle.rho0() * phi[n - 1] * phi[n - 1];
    for c in 0..n - 1 {
        let dphi = phi[c + 1] - phi[c];
        num += 0.5 * (a[c].powi(3) + a[c + 1].powi(3)) * dphi * dphi / hs;
    }
    let mut den = 0.0;
    for j in 0..n {
        let w = if j == 0 || j == n - 1 { 0.5 * hs } else { hs };
        let wt = k * k * a[j] + g * bundle.rho.rho_p(flow.p[j]);
        if j > 0 && !(wt > 0.0) {
            return Err(SturmError::DegenerateDenominator { lambda: flow.lambda, node: j });
        }
        den += w * wt * phi[j] * phi[j];
    }
    if !(den > 0.0) {
        return Err(SturmError::DegenerateDenominator { lambda: flow.lambda, node: 0 });
    }
    Ok(num / den)
}

/// Rayleigh quotient at `lambda` on a grid of `phi.len()` nodes.
pub fn rayleigh(bundle: &ProfileBundle, lambda: f64, phi: &[f64], opts: &SturmOptions) -> Result<f64, SturmError> {
    let flow = laminar::solve_laminar(bundle, lambda, &opts.laminar().with_np(phi.len()))?;
    rayleigh_for(bundle, &flow, phi, opts.k)
}

/// Scale of the admissible λ-range, 1 − 2B_min + ε0.
fn sweep_scale(bundle: &ProfileBundle) -> f64 {
    1.0 - 2.0 * bundle.b_min() + bundle.epsilon0()
}

fn log_points(left: f64, upper: f64, scale: f64, n: usize) -> Vec<f64> {
    let t0 = 1e-4 * scale;
    let t1 = (upper - left).max(2.0 * t0);
    (0..n)
        .map(|i| left + t0 * (t1 / t0).powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// (L-B): is inf_λ μ(λ) < −1 over a logarithmic sweep of the admissible range?
///
/// The sweep runs from the left end to 50·(1 − 2B_min + ε0); while μ at the
/// top is still below −1 the range is stretched ×4, at most twice.
pub fn check_lb_condition(bundle: &ProfileBundle, opts: &SturmOptions) -> LbCheck {
    let left = laminar::admissible_left(bundle, opts.admissibility);
    let scale = sweep_scale(bundle);
    let mut upper = 50.0 * scale;
    let mut lambdas = Vec::new();
    let mut mus = Vec::new();
    for round in 0..3 {
        let pts = log_points(left, upper, scale, opts.sweep_points);
        let lo = lambdas.last().copied().unwrap_or(f64::NEG_INFINITY);
        let fresh: Vec<f64> = pts.into_iter().filter(|&l| l > lo).collect();
        let vals: Vec<Option<f64>> = fresh.par_iter().map(|&l| mu_of_lambda(bundle, l, opts).ok()).collect();
        lambdas.extend(fresh);
        mus.extend(vals);
        let top = mus.iter().rev().find_map(|m| *m);
        if round == 2 || !matches!(top, Some(m) if m < -1.0) {
            break;
        }
        upper *= 4.0;
    }
    let inf_estimate = mus.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    LbCheck { holds: inf_estimate < -1.0, inf_estimate, lambdas, mus }
}

/// Locates λ* with μ(λ*) = −1 and evaluates everything attached to it.
pub fn find_lambda_star(bundle: &ProfileBundle, opts: &SturmOptions) -> Result<BifurcationPoint, SturmError> {
    let sweep = check_lb_condition(bundle, opts);
    let pts: Vec<(f64, f64)> = sweep.lambdas.iter().zip(&sweep.mus).filter_map(|(l, m)| m.map(|m| (*l, m + 1.0))).collect();
    let mut crossings = 0;
    let mut bracket = None;
    for w in pts.windows(2) {
        if w[0].1 < 0.0 && w[1].1 >= 0.0 {
            crossings += 1;
            bracket.get_or_insert((w[0], w[1]));
        } else if w[0].1 >= 0.0 && w[1].1 < 0.0 {
            crossings += 1;
        }
    }
    let Some(((la, fa), (lb, fb))) = bracket else {
        return Err(SturmError::LbViolated { inf_estimate: sweep.inf_estimate });
    };
    let f = |l: f64| mu_of_lambda(bundle, l, opts).map(|m| m + 1.0);
    let lambda_star = brent(f, la, lb, fa, fb, 1e-15 * lb.abs().max(1.0))?.expect("bracket has a sign change");
    let flow = laminar::solve_laminar(bundle, lambda_star, &opts.laminar())?;
    let eigen = principal_eigen_for(bundle, &flow, opts.k)?;
    let (gdot, ydot, qdot) = laminar::volterra_derivatives(bundle, &flow);
    let lambda_max = *sweep.lambdas.last().expect("sweep is nonempty");
    let lambda0 = laminar::find_lambda0(bundle, lambda_max, &opts.laminar()).ok();
    let below_lambda0 = lambda0.map(|l0| lambda_star < l0.lambda0);
    let xi_report = transversality_xi(bundle, &flow, &gdot, &ydot, &eigen);
    let accurate = accurate_xi(bundle, lambda_star, opts)?;
    Ok(BifurcationPoint {
        lambda_star,
        q_star: flow.q,
        eigen,
        gdot,
        ydot,
        qdot,
        lambda0,
        below_lambda0,
        crossings,
        sweep,
        xi: xi_report.xi,
        xi_report,
        accurate,
        laminar: flow,
    })
}

/// Grid derivative: centered inside, second-order one-sided at the ends.
fn grid_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    for j in 1..n - 1 {
        d[j] = (v[j + 1] - v[j - 1]) / (2.0 * h);
    }
    d
}

fn trapezoid(f: &[f64], h: f64) -> f64 {
    let n = f.len();
    h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n - 1]))
}

/// Ξ = Ξ1 + … + Ξ7 for φ* = M(p) cos q on the grid. Area integrals over one
/// period reduce to π times p-integrals.
pub fn transversality_xi(
    bundle: &ProfileBundle,
    flow: &LaminarFlow,
    gdot: &[f64],
    ydot: &[f64],
    eigen: &EigenResult,
) -> XiReport {
    let pi = std::f64::consts::PI;
    let n = flow.np();
    let hs = flow.hp_step();
    let g = bundle.g();
    let a = flow.a();
    let m = &eigen.m;
    let mp = grid_derivative(m, hs);
    let rp: Vec<f64> = flow.p.iter().map(|&p| bundle.rho.rho_p(p)).collect();
    let bt: Vec<f64> = flow.p.iter().map(|&p| bundle.beta.beta(-p)).collect();
    let term = |f: &dyn Fn(usize) -> f64| pi * trapezoid(&(0..n).map(f).collect::<Vec<_>>(), hs);
    let one = |j: usize| 1.0 + gdot[j];
    let x1 = term(&|j| one(j) * m[j] * m[j] / a[j]);
    let x2 = term(&|j| -3.0 * one(j) * bt[j] * m[j] * mp[j] / a[j]);
    let x3 = term(&|j| -3.0 * g * ydot[j] * a[j] * rp[j] * m[j] * mp[j]);
    let x4 = term(&|j| 3.0 * g * flow.y[j] * one(j) * rp[j] * m[j] * mp[j] / a[j]);
    let x5 = term(&|j| 1.5 * g * one(j) * rp[j] * m[j] * m[j] / (a[j] * a[j]));
    let top = n - 1;
    let x6 = -2.0 * pi * g * bundle.rho0() * m[top] * m[top] / (a[top] * a[top]);
    let x7 = -0.5 * pi * a[top] * m[top] * mp[top];
    let terms = [x1, x2, x3, x4, x5, x6, x7];
    let xi: f64 = terms.iter().sum();
    let grad = term(&|j| a[j] * one(j) * mp[j] * mp[j]);
    let identity = -0.5 * x1 - 1.5 * grad + 0.5 * x6;
    let m0 = m[top] * m[top];
    XiReport { xi, terms, identity, xi_per_m0: xi / m0, identity_per_m0: identity / m0 }
}

const SHOT: usize = 12;

/// Integrates laminar quantities, λ-derivatives, the eigenfunction (with
/// μ = −1) and the transversality integrands from p = 0 down to p0.
fn shoot_eigen(bundle: &ProfileBundle, lambda: f64, k: f64, rtol: f64) -> Result<[f64; SHOT], SturmError> {
    let g = bundle.g();
    let p0 = bundle.p0();
    // τ = −p; state Y, G, M, N = a³M_p, Ẏ, Ġ, then five Ξ integrands and ∫a(1+Ġ)M_p²
    let rhs = |tau: f64, s: &[f64; SHOT]| {
        let p = -tau;
        let (y, gg, m, nn, yd, gd) = (s[0], s[1], s[2], s[3], s[4], s[5]);
        let a = (lambda + gg).max(f64::MIN_POSITIVE).sqrt();
        let a3 = a * a * a;
        let rp = bundle.rho.rho_p_held(p);
        let bt = bundle.beta.beta(-p);
        let mp = nn / a3;
        let one = 1.0 + gd;
        [
            -1.0 / a,
            -(2.0 * bt - 2.0 * g * y * rp),
            -mp,
            -(k * k * a + g * rp) * m,
            0.5 * one / a3,
            2.0 * g * yd * rp,
            one * m * m / a,
            -3.0 * one * bt * m * mp / a,
            -3.0 * g * yd * a * rp * m * mp,
            3.0 * g * y * one * rp * m * mp / a,
            1.5 * g * one * rp * m * m / (a * a),
            a * one * mp * mp,
        ]
    };
    let mut y0 = [0.0; SHOT];
    y0[2] = 1.0;
    y0[3] = g * bundle.rho0();
    let o = OdeOptions { rtol, atol: rtol * 1e-2, ..OdeOptions::default() };
    let sol = ode::integrate(rhs, 0.0, y0, -p0, &o, None::<fn(f64, &[f64; SHOT]) -> f64>)?;
    Ok(sol.trajectory.steps.last().expect("at least one step").y1)
}

/// λ* and Ξ from shooting in p, independent of the grid discretization.
///
/// Starts from the grid estimate `lambda_guess` and widens a bracket for the
/// sign change of M(p0).
pub fn accurate_xi(bundle: &ProfileBundle, lambda_guess: f64, opts: &SturmOptions) -> Result<AccurateXi, SturmError> {
    let floor = laminar::lambda_floor(bundle, Admissibility::Relaxed);
    let rtol = opts.rtol.max(1e-13);
    let f = |l: f64| shoot_eigen(bundle, l, opts.k, rtol).map(|s| s[2]);
    let mut width = 1e-3 * (lambda_guess - floor).abs().max(1e-6);
    let mut found = None;
    for _ in 0..40 {
        let lo = (lambda_guess - width).max(floor + 0.5 * (lambda_guess - floor));
        let hi = lambda_guess + width;
        let (flo, fhi) = (f(lo)?, f(hi)?);
        if flo.signum() != fhi.signum() {
            found = Some((lo, hi, flo, fhi));
            break;
        }
        width *= 2.0;
    }
    let Some((lo, hi, flo, fhi)) = found else {
        return Err(SturmError::ShootingBracket { lambda: lambda_guess });
    };
    let lambda_star = brent(f, lo, hi, flo, fhi, 1e-15 * hi.abs().max(1.0))?.expect("bracket has a sign change");
    let s = shoot_eigen(bundle, lambda_star, opts.k, rtol)?;
    let pi = std::f64::consts::PI;
    let x6 = -2.0 * pi * bundle.g() * bundle.rho0() / lambda_star;
    // a(0) M(0) M_p(0) = g ρ(0) / λ
    let x7 = -0.5 * pi * bundle.g() * bundle.rho0() / lambda_star;
    let terms = [pi * s[6], pi * s[7], pi * s[8], pi * s[9], pi * s[10], x6, x7];
    let xi = terms.iter().sum();
    let identity = -0.5 * terms[0] - 1.5 * pi * s[11] + 0.5 * x6;
    Ok(AccurateXi { lambda_star, xi, identity, terms })
}
