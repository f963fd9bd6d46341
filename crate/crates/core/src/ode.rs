//! Dormand–Prince 5(4) with dense output and scalar event location.
//!
//! Integration always runs forward in the independent variable; callers that
//! march downward reparametrize (τ = −s and so on).

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    MaxSteps { t: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-14, h_init: None, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 4],
}

impl<const N: usize> Step<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Fourth-order dense output at `t` inside the step.
    pub fn dense(&self, t: f64) -> [f64; N] {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let [r2, r3, r4, r5] = [self.rcont[0][i], self.rcont[1][i], self.rcont[2][i], self.rcont[3][i]];
            out[i] = self.y0[i] + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
        }
        out
    }
}

/// The accepted steps of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    pub steps: Vec<Step<N>>,
}

impl<const N: usize> Trajectory<N> {
    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t1())
    }

    /// Index of the step containing `t` (clamped to the covered range).
    pub fn step_index(&self, t: f64) -> usize {
        let k = self.steps.partition_point(|s| s.t1() < t);
        k.min(self.steps.len() - 1)
    }

    pub fn dense(&self, t: f64) -> [f64; N] {
        self.steps[self.step_index(t)].dense(t)
    }

    /// State at `t` from a single Runge–Kutta step taken from the start of the
    /// containing step; fifth order, sharper than the dense interpolant.
    pub fn exact_at<F>(&self, f: &mut F, t: f64) -> [f64; N]
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let s = &self.steps[self.step_index(t)];
        let k1 = f(s.t0, &s.y0);
        rk_step(f, s.t0, &s.y0, &k1, t - s.t0).0
    }
}

/// Result of an integration: the trajectory and, if an event fired, its
/// location and the state there.
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub trajectory: Trajectory<N>,
    pub event: Option<(f64, [f64; N])>,
}

#[allow(clippy::type_complexity)]
fn rk_step<const N: usize, F>(
    f: &mut F,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> ([f64; N], [f64; N], [[f64; N]; 7])
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let comb = |ks: &[(&[f64; N], f64)]| {
        let mut out = *y;
        for i in 0..N {
            let mut acc = 0.0;
            for (k, a) in ks {
                acc += a * k[i];
            }
            out[i] += h * acc;
        }
        out
    };
    let k2 = f(t + C2 * h, &comb(&[(k1, A21)]));
    let k3 = f(t + C3 * h, &comb(&[(k1, A31), (&k2, A32)]));
    let k4 = f(t + C4 * h, &comb(&[(k1, A41), (&k2, A42), (&k3, A43)]));
    let k5 = f(t + C5 * h, &comb(&[(k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]));
    let k6 = f(t + h, &comb(&[(k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]));
    let y1 = comb(&[(k1, A71), (&k3, A73), (&k4, A74), (&k5, A75), (&k6, A76)]);
    let k7 = f(t + h, &y1);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y1, err, [*k1, k2, k3, k4, k5, k6, k7])
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end > t0`.
///
/// If `event` is given, integration stops at the first sign change of
/// `event(t, y)`, located to near machine precision.
pub fn integrate<const N: usize, F, G>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
    mut event: Option<G>,
) -> Result<Solution<N>, OdeError>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    G: FnMut(f64, &[f64; N]) -> f64,
{
    assert!(t_end > t0, "integration must run forward");
    let span = t_end - t0;
    let mut h = opts.h_init.unwrap_or(1e-3 * span).min(opts.h_max).min(span);
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut steps = Vec::new();
    let mut g_prev = event.as_mut().map(|g| g(t, &y));
    let mut n = 0usize;
    while t < t_end {
        n += 1;
        if n > opts.max_steps {
            return Err(OdeError::MaxSteps { t });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let (y1, err, ks) = rk_step(&mut f, t, &y, &k1, h);
        let mut e2 = 0.0;
        let mut finite = true;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            let r = err[i] / sc;
            if !r.is_finite() || !y1[i].is_finite() {
                finite = false;
            }
            e2 += r * r;
        }
        let e = (e2 / N as f64).sqrt();
        if !finite || e > 1.0 {
            let fac = if finite { (0.9 * e.powf(-0.2)).clamp(0.2, 0.9) } else { 0.25 };
            h *= fac;
            if h < 1e-14 * t.abs().max(span) {
                return Err(OdeError::StepSizeUnderflow { t });
            }
            continue;
        }
        let step = build_step(t, h, y, y1, &ks);
        let t_new = if last { t_end } else { t + h };
        if let (Some(g), Some(gp)) = (event.as_mut(), g_prev) {
            let g_new = g(t_new, &y1);
            if gp == 0.0 || gp.signum() != g_new.signum() {
                steps.push(step);
                let (te, ye) = locate_event(&mut f, g, &steps[steps.len() - 1], gp, g_new);
                let last_step = steps.last_mut().expect("pushed");
                // truncate the final step at the event
                let keep = te - last_step.t0;
                if keep > 0.0 && keep < last_step.h {
                    let k1s = f(last_step.t0, &last_step.y0);
                    let (yt, _, kt) = rk_step(&mut f, last_step.t0, &last_step.y0, &k1s, keep);
                    *last_step = build_step(last_step.t0, keep, last_step.y0, yt, &kt);
                }
                return Ok(Solution { trajectory: Trajectory { steps }, event: Some((te, ye)) });
            }
            g_prev = Some(g_new);
        }
        steps.push(step);
        t = t_new;
        y = y1;
        k1 = ks[6];
        let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * fac).min(opts.h_max);
    }
    Ok(Solution { trajectory: Trajectory { steps }, event: None })
}

fn build_step<const N: usize>(t0: f64, h: f64, y0: [f64; N], y1: [f64; N], ks: &[[f64; N]; 7]) -> Step<N> {
    let mut rcont = [[0.0; N]; 4];
    for i in 0..N {
        let r2 = y1[i] - y0[i];
        let r3 = h * ks[0][i] - r2;
        let r4 = r2 - h * ks[6][i] - r3;
        let r5 = h * (D1 * ks[0][i] + D3 * ks[2][i] + D4 * ks[3][i] + D5 * ks[4][i] + D6 * ks[5][i] + D7 * ks[6][i]);
        rcont[0][i] = r2;
        rcont[1][i] = r3;
        rcont[2][i] = r4;
        rcont[3][i] = r5;
    }
    Step { t0, h, y0, y1, rcont }
}

// Illinois regula falsi on the dense output, then secant polishing with
// single-step states.
fn locate_event<const N: usize, F, G>(f: &mut F, g: &mut G, step: &Step<N>, g0: f64, g1: f64) -> (f64, [f64; N])
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    G: FnMut(f64, &[f64; N]) -> f64,
{
    let (mut a, mut b) = (step.t0, step.t1());
    let (mut ga, mut gb) = (g0, g1);
    if ga == 0.0 {
        return (a, step.y0);
    }
    let mut side = 0i32;
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let gc = g(c, &step.dense(c));
        if gc == 0.0 {
            a = c;
            b = c;
            break;
        }
        if gc.signum() == gb.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    let k1 = f(step.t0, &step.y0);
    let state = |t: f64, f: &mut F| rk_step(f, step.t0, &step.y0, &k1, t - step.t0).0;
    let mut t1 = 0.5 * (a + b);
    let mut y1 = state(t1, f);
    let mut v1 = g(t1, &y1);
    let tol = 1e-3 * step.h.abs();
    let mut t0 = t1 - 1e-6 * step.h;
    let mut v0 = g(t0, &state(t0, f));
    for _ in 0..8 {
        if v1 == 0.0 || v1 == v0 {
            break;
        }
        let t2 = t1 - v1 * (t1 - t0) / (v1 - v0);
        if !t2.is_finite() || (t2 - t1).abs() > tol {
            break;
        }
        t0 = t1;
        v0 = v1;
        t1 = t2;
        y1 = state(t1, f);
        v1 = g(t1, &y1);
        if (t1 - t0).abs() <= 2.0 * f64::EPSILON * t1.abs().max(1.0) {
            break;
        }
    }
    (t1, y1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let opts = OdeOptions::default();
        let sol = integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 2.0, &opts, None::<fn(f64, &[f64; 1]) -> f64>)
            .unwrap();
        let end = sol.trajectory.steps.last().unwrap().y1[0];
        assert!((end - 2f64.exp()).abs() < 1e-10 * 2f64.exp());
        for &t in &[0.123, 0.77, 1.5, 1.999] {
            let v = sol.trajectory.dense(t)[0];
            assert!((v - t.exp()).abs() < 1e-10 * t.exp(), "dense at {t}: {}", v - t.exp());
        }
    }

    #[test]
    fn harmonic_event() {
        // y = (cos t, -sin t); first zero of cos at π/2
        let opts = OdeOptions::default();
        let sol = integrate(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            10.0,
            &opts,
            Some(|_t: f64, y: &[f64; 2]| y[0]),
        )
        .unwrap();
        let (te, ye) = sol.event.unwrap();
        assert!((te - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(ye[0].abs() < 1e-13);
        assert!((sol.trajectory.t_end() - te).abs() < 1e-12);
    }
}
