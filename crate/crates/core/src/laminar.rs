//! The laminar family H(p; λ): flat-surface shear flows, their depth d(λ) and
//! head Q(λ), and the λ-derivatives Ġ, Ẏ, Q̇, Q̈.
//!
//! Each flow is found by integrating
//!
//! ```text
//! dp/ds = √(λ + 2F),   dF/ds = (B′(p) − g s ρ′(p)) √(λ + 2F)
//! ```
//!
//! downward from the surface `(s, p, F) = (0, 0, 0)` until `p = p0`; the
//! depth is `d = −s` there. The vertical coordinate `Y(p)` follows by
//! inverting the monotone map `s ↦ p(s)`.

use rayon::prelude::*;

use crate::ode::{self, OdeError, OdeOptions};
use crate::profiles::ProfileBundle;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LaminarError {
    #[error("lambda = {lambda} is below the admissible bound {lower}")]
    Inadmissible { lambda: f64, lower: f64 },
    #[error("bed not reached within s-budget {budget} at lambda = {lambda}")]
    NoBedReached { lambda: f64, budget: f64 },
    #[error("dp/ds lost positivity near s = {s} at lambda = {lambda}")]
    NonMonotone { lambda: f64, s: f64 },
    #[error("Q has no interior minimum below lambda_max = {lambda_max} (slope {slope} < 0)")]
    NoMinimumInRange { lambda_max: f64, slope: f64 },
    #[error("integrator failure: {0}")]
    Integrator(#[from] OdeError),
}

/// Which lower bound on λ a solve enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admissibility {
    /// λ ≥ −2B_min + ε0.
    #[default]
    Strict,
    /// λ > −2B_min only; the ε0 margin is waived.
    Relaxed,
}

#[derive(Debug, Clone, Copy)]
pub struct LaminarOptions {
    /// Number of nodes of the uniform p-grid, endpoints included.
    pub np: usize,
    pub rtol: f64,
    pub admissibility: Admissibility,
    /// Maximal depth explored before giving up; `None` derives one from the
    /// a-priori bound d ≤ |p0|/√(λ + 2B_min).
    pub s_budget: Option<f64>,
}

impl Default for LaminarOptions {
    fn default() -> Self {
        Self { np: 256, rtol: 1e-13, admissibility: Admissibility::Strict, s_budget: None }
    }
}

impl LaminarOptions {
    pub fn with_np(mut self, np: usize) -> Self {
        self.np = np;
        self
    }

    pub fn with_admissibility(mut self, a: Admissibility) -> Self {
        self.admissibility = a;
        self
    }
}

/// One laminar flow sampled on a uniform grid of `p` from `p0` to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LaminarFlow {
    pub lambda: f64,
    pub p: Vec<f64>,
    /// Height relative to the surface, Y ≤ 0.
    pub y: Vec<f64>,
    /// Height above the bed, H = Y + d.
    pub h: Vec<f64>,
    pub h_p: Vec<f64>,
    pub f: Vec<f64>,
    /// G = 2F.
    pub g: Vec<f64>,
    pub d: f64,
    pub q: f64,
    /// |p(−d) − p0| at the located bed.
    pub endpoint_residual: f64,
}

impl LaminarFlow {
    pub fn np(&self) -> usize {
        self.p.len()
    }

    pub fn hp_step(&self) -> f64 {
        self.p[1] - self.p[0]
    }

    /// a = H_p⁻¹ = √(λ + G).
    pub fn a(&self) -> Vec<f64> {
        self.h_p.iter().map(|v| 1.0 / v).collect()
    }
}

/// λ-derivatives along the laminar family.
#[derive(Debug, Clone, PartialEq)]
pub struct LaminarDiagnostics {
    pub lambda: f64,
    pub gdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub qdot: f64,
    pub qddot: f64,
}

/// Result of the Q-minimization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Lambda0 {
    pub lambda0: f64,
    pub q0: f64,
    /// Q is increasing at the left end of the range, so the minimum sits there.
    pub boundary_minimum: bool,
}

/// Smallest λ admitted under `mode`. In relaxed mode the open bound −2B_min
/// is returned; solves must stay strictly above it.
pub fn lambda_floor(bundle: &ProfileBundle, mode: Admissibility) -> f64 {
    match mode {
        Admissibility::Strict => bundle.lambda_lower(),
        Admissibility::Relaxed => -2.0 * bundle.b_min(),
    }
}

fn check_lambda(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<(), LaminarError> {
    let open = -2.0 * bundle.b_min();
    let ok = match opts.admissibility {
        Admissibility::Strict => lambda >= bundle.lambda_lower() && lambda > open,
        Admissibility::Relaxed => lambda > open,
    };
    if ok && lambda.is_finite() {
        Ok(())
    } else {
        Err(LaminarError::Inadmissible { lambda, lower: lambda_floor(bundle, opts.admissibility) })
    }
}

struct Shot {
    traj: ode::Trajectory<2>,
    d: f64,
    f_bed: f64,
    endpoint_residual: f64,
}

fn shoot(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<Shot, LaminarError> {
    check_lambda(bundle, lambda, opts)?;
    let p0 = bundle.p0();
    let g = bundle.g();
    let floor = (lambda + 2.0 * bundle.b_min()).max(f64::MIN_POSITIVE);
    let budget = opts.s_budget.unwrap_or_else(|| (10.0 * p0.abs() / floor.sqrt()).min(1e8));
    // τ = −s runs forward; state (p, F)
    let rhs = |tau: f64, y: &[f64; 2]| {
        let r = (lambda + 2.0 * y[1]).sqrt();
        let rho_p = bundle.rho.rho_p_held(y[0]);
        [-r, -(bundle.beta.beta(-y[0]) + g * tau * rho_p) * r]
    };
    let ode_opts = OdeOptions { rtol: opts.rtol, atol: opts.rtol * 1e-2, ..OdeOptions::default() };
    let sol = match ode::integrate(rhs, 0.0, [0.0, 0.0], budget, &ode_opts, Some(|_t: f64, y: &[f64; 2]| y[0] - p0)) {
        Ok(s) => s,
        Err(OdeError::StepSizeUnderflow { t }) => return Err(LaminarError::NonMonotone { lambda, s: -t }),
        Err(e) => return Err(e.into()),
    };
    for st in &sol.trajectory.steps {
        if !(lambda + 2.0 * st.y1[1] > 0.0) {
            return Err(LaminarError::NonMonotone { lambda, s: -st.t1() });
        }
    }
    let Some((tau, y)) = sol.event else {
        return Err(LaminarError::NoBedReached { lambda, budget });
    };
    Ok(Shot { traj: sol.trajectory, d: tau, f_bed: y[1], endpoint_residual: (y[0] - p0).abs() })
}

/// Depth and head at `lambda` without resampling onto a grid.
pub fn depth_and_head(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<(f64, f64), LaminarError> {
    let shot = shoot(bundle, lambda, opts)?;
    Ok((shot.d, lambda + 2.0 * bundle.g() * bundle.rho0() * shot.d))
}

/// Solves for the laminar flow at `lambda` and samples it on `opts.np` nodes.
pub fn solve_laminar(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<LaminarFlow, LaminarError> {
    assert!(opts.np >= 3, "need at least three grid nodes");
    let shot = shoot(bundle, lambda, opts)?;
    let p0 = bundle.p0();
    let g = bundle.g();
    let n = opts.np;
    let dp = -p0 / (n - 1) as f64;
    let mut rhs = |tau: f64, y: &[f64; 2]| {
        let r = (lambda + 2.0 * y[1]).sqrt();
        let rho_p = bundle.rho.rho_p_held(y[0]);
        [-r, -(bundle.beta.beta(-y[0]) + g * tau * rho_p) * r]
    };
    let steps = &shot.traj.steps;
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut f = vec![0.0; n];
    for j in 0..n {
        p[j] = if j == n - 1 { 0.0 } else { p0 + dp * j as f64 };
    }
    y[0] = -shot.d;
    f[0] = shot.f_bed;
    for j in 1..n - 1 {
        let target = p[j];
        // p decreases along the trajectory
        let k = steps.partition_point(|s| s.y1[0] > target).min(steps.len() - 1);
        let st = &steps[k];
        let mut tau = if st.y0[0] == st.y1[0] {
            st.t0
        } else {
            st.t0 + st.h * (st.y0[0] - target) / (st.y0[0] - st.y1[0])
        };
        for _ in 0..6 {
            let s = st.dense(tau);
            let slope = -(lambda + 2.0 * s[1]).sqrt();
            let dt = (s[0] - target) / slope;
            tau = (tau - dt).clamp(st.t0, st.t1());
            if dt.abs() <= 1e-15 * st.h.abs().max(1.0) {
                break;
            }
        }
        let mut state = shot.traj.exact_at(&mut rhs, tau);
        for _ in 0..3 {
            let slope = -(lambda + 2.0 * state[1]).sqrt();
            let dt = (state[0] - target) / slope;
            if dt == 0.0 {
                break;
            }
            tau -= dt;
            state = shot.traj.exact_at(&mut rhs, tau);
            if dt.abs() <= 1e-16 * tau.abs().max(1.0) {
                break;
            }
        }
        y[j] = -tau;
        f[j] = state[1];
    }
    let d = shot.d;
    let gg: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
    let h: Vec<f64> = y.iter().map(|v| v + d).collect();
    let h_p: Vec<f64> = gg.iter().map(|v| 1.0 / (lambda + v).sqrt()).collect();
    let mut h = h;
    h[0] = 0.0;
    h[n - 1] = d;
    Ok(LaminarFlow {
        lambda,
        p,
        y,
        h,
        h_p,
        f,
        g: gg,
        d,
        q: lambda + 2.0 * g * bundle.rho0() * d,
        endpoint_residual: shot.endpoint_residual,
    })
}

/// Ġ and Ẏ from the Volterra equation for 1 + Ġ; Q̇ from Ẏ(p0).
pub fn volterra_derivatives(bundle: &ProfileBundle, flow: &LaminarFlow) -> (Vec<f64>, Vec<f64>, f64) {
    let n = flow.np();
    let hs = flow.hp_step();
    let g = bundle.g();
    let lam = flow.lambda;
    let rho: Vec<f64> = flow.p.iter().map(|&p| bundle.rho.rho(p)).collect();
    let w: Vec<f64> = flow.g.iter().map(|gv| (lam + gv).powf(-1.5)).collect();
    // phi = 1 + Ġ; k(p_j, p_m) = g (ρ_m − ρ_j) w_m vanishes on the diagonal,
    // so the trapezoidal product rule is explicit from the surface down.
    let mut phi = vec![1.0; n];
    for j in (0..n - 1).rev() {
        let mut acc = 0.5 * g * (rho[n - 1] - rho[j]) * w[n - 1] * phi[n - 1];
        for m in j + 1..n - 1 {
            acc += g * (rho[m] - rho[j]) * w[m] * phi[m];
        }
        phi[j] = 1.0 + hs * acc;
    }
    let mut ydot = vec![0.0; n];
    for j in (0..n - 1).rev() {
        ydot[j] = ydot[j + 1] + 0.25 * hs * (w[j] * phi[j] + w[j + 1] * phi[j + 1]);
    }
    let gdot: Vec<f64> = phi.iter().map(|v| v - 1.0).collect();
    let qdot = 1.0 - 2.0 * g * bundle.rho0() * ydot[0];
    (gdot, ydot, qdot)
}

/// Full diagnostics at `lambda`: Ġ, Ẏ, Q̇ and Q̈ (centered differences of Q̇
/// with step 1e-4·max(1, λ); one-sided when λ − step is inadmissible).
pub fn g_dot(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<LaminarDiagnostics, LaminarError> {
    let flow = solve_laminar(bundle, lambda, opts)?;
    Ok(g_dot_for(bundle, &flow, opts)?)
}

/// As [`g_dot`] for an already computed flow.
pub fn g_dot_for(bundle: &ProfileBundle, flow: &LaminarFlow, opts: &LaminarOptions) -> Result<LaminarDiagnostics, LaminarError> {
    let (gdot, ydot, qdot) = volterra_derivatives(bundle, flow);
    let lambda = flow.lambda;
    let step = 1e-4 * lambda.abs().max(1.0);
    let qd = |l: f64| -> Result<f64, LaminarError> {
        let fl = solve_laminar(bundle, l, opts)?;
        Ok(volterra_derivatives(bundle, &fl).2)
    };
    let qddot = if check_lambda(bundle, lambda - step, opts).is_ok() {
        (qd(lambda + step)? - qd(lambda - step)?) / (2.0 * step)
    } else {
        (-3.0 * qdot + 4.0 * qd(lambda + step)? - qd(lambda + 2.0 * step)?) / (2.0 * step)
    };
    Ok(LaminarDiagnostics { lambda, gdot, ydot, qdot, qddot })
}

/// Q̈ from the second Volterra equation for Ÿ, an independent route to the
/// finite-difference value in [`LaminarDiagnostics::qddot`].
pub fn q_ddot_integral(bundle: &ProfileBundle, flow: &LaminarFlow, gdot: &[f64]) -> f64 {
    let n = flow.np();
    let hs = flow.hp_step();
    let g = bundle.g();
    let lam = flow.lambda;
    let w3: Vec<f64> = flow.g.iter().map(|gv| (lam + gv).powf(-1.5)).collect();
    let w5: Vec<f64> = flow.g.iter().map(|gv| (lam + gv).powf(-2.5)).collect();
    let rho_p: Vec<f64> = flow.p.iter().map(|&p| bundle.rho.rho_p(p)).collect();
    // C(p) = ∫_{p0}^{p} (λ+G)^{-3/2}
    let mut cum = vec![0.0; n];
    for j in 1..n {
        cum[j] = cum[j - 1] + 0.5 * hs * (w3[j] + w3[j - 1]);
    }
    // ℓ(p) = −¾ ∫_p^0 (1+Ġ)² (λ+G)^{-5/2}
    let mut ell = vec![0.0; n];
    for j in (0..n - 1).rev() {
        let a = (1.0 + gdot[j]).powi(2) * w5[j];
        let b = (1.0 + gdot[j + 1]).powi(2) * w5[j + 1];
        ell[j] = ell[j + 1] - 0.75 * 0.5 * hs * (a + b);
    }
    let kern = |j: usize, m: usize| g * rho_p[m] * (cum[m] - cum[j]);
    let mut ydd = vec![0.0; n];
    ydd[n - 1] = ell[n - 1];
    for j in (0..n - 1).rev() {
        let mut acc = 0.5 * kern(j, n - 1) * ydd[n - 1];
        for m in j + 1..n - 1 {
            acc += kern(j, m) * ydd[m];
        }
        ydd[j] = ell[j] + hs * acc;
    }
    -2.0 * g * bundle.rho0() * ydd[0]
}

/// Q̇ from centered differences of the depth, accurate to integrator precision.
pub fn q_slope(bundle: &ProfileBundle, lambda: f64, opts: &LaminarOptions) -> Result<f64, LaminarError> {
    let step = 1e-4 * lambda.abs().max(1.0);
    let q = |l: f64| depth_and_head(bundle, l, opts).map(|v| v.1);
    if check_lambda(bundle, lambda - step, opts).is_ok() {
        Ok((q(lambda + step)? - q(lambda - step)?) / (2.0 * step))
    } else {
        Ok((-3.0 * q(lambda)? + 4.0 * q(lambda + step)? - q(lambda + 2.0 * step)?) / (2.0 * step))
    }
}

/// Minimizer of the convex function Q(λ) on `[floor, lambda_max]`.
///
/// Golden-section search narrows the bracket; the last digits come from a
/// bisection on the sign of Q̇, since Q is too flat near its minimum for
/// value comparisons to resolve λ0 to 1e-10.
pub fn find_lambda0(bundle: &ProfileBundle, lambda_max: f64, opts: &LaminarOptions) -> Result<Lambda0, LaminarError> {
    let left = admissible_left(bundle, opts.admissibility);
    let q = |l: f64| depth_and_head(bundle, l, opts).map(|v| v.1);
    if q_slope(bundle, left, opts)? >= 0.0 {
        return Ok(Lambda0 { lambda0: left, q0: q(left)?, boundary_minimum: true });
    }
    let s_max = q_slope(bundle, lambda_max, opts)?;
    if s_max < 0.0 {
        return Err(LaminarError::NoMinimumInRange { lambda_max, slope: s_max });
    }
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (left, lambda_max);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (q(x1)?, q(x2)?);
    while b - a > 1e-4 * b.abs().max(1.0) {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = q(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = q(x2)?;
        }
    }
    // widen until the slope changes sign across the bracket
    let mut width = b - a;
    let (mut lo, mut hi) = (a, b);
    for _ in 0..60 {
        let slo = if lo <= left { -1.0 } else { q_slope(bundle, lo, opts)? };
        let shi = q_slope(bundle, hi, opts)?;
        if slo < 0.0 && shi >= 0.0 {
            break;
        }
        if slo >= 0.0 {
            lo = (lo - width).max(left);
        }
        if shi < 0.0 {
            hi = (hi + width).min(lambda_max);
        }
        width *= 2.0;
    }
    while hi - lo > 1e-10 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if q_slope(bundle, mid, opts)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda0 = 0.5 * (lo + hi);
    Ok(Lambda0 { lambda0, q0: q(lambda0)?, boundary_minimum: false })
}

/// Left end of the admissible λ-range used by sweeps and searches. Where that
/// end is the open bound −2B_min (relaxed mode, or ε0 = 0) it is nudged inward
/// by 1e-6 of the natural scale 1 − 2B_min.
pub fn admissible_left(bundle: &ProfileBundle, mode: Admissibility) -> f64 {
    let open = -2.0 * bundle.b_min();
    let nudged = open + 1e-6 * (1.0 - 2.0 * bundle.b_min());
    match mode {
        Admissibility::Strict if bundle.lambda_lower() > open => bundle.lambda_lower(),
        _ => nudged,
    }
}

/// (d, Q) over a list of λ values, evaluated in parallel; order is preserved.
pub fn sweep(bundle: &ProfileBundle, lambdas: &[f64], opts: &LaminarOptions) -> Vec<Result<(f64, f64), LaminarError>> {
    lambdas.par_iter().map(|&l| depth_and_head(bundle, l, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::poly_bundle;

    #[test]
    fn constant_density_closed_form() {
        let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
        let fl = solve_laminar(&b, 4.0, &LaminarOptions::default().with_np(33)).unwrap();
        assert!((fl.d - 0.5).abs() < 1e-12);
        assert!((fl.q - 5.0).abs() < 1e-12);
        for j in 0..33 {
            assert!((fl.h[j] - (fl.p[j] + 1.0) / 2.0).abs() < 1e-12);
            assert!((fl.h_p[j] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_inadmissible_lambda() {
        let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.0]).unwrap();
        let e = solve_laminar(&b, 1.0, &LaminarOptions::default()).unwrap_err();
        assert!(matches!(e, LaminarError::Inadmissible { .. }));
        let relaxed = LaminarOptions::default().with_admissibility(Admissibility::Relaxed);
        assert!(solve_laminar(&b, 1.0, &relaxed).is_ok());
    }
}
