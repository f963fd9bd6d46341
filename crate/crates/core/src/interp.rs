//! Shape-preserving piecewise cubic Hermite interpolation.

/// Piecewise cubic Hermite interpolant with Fritsch–Butland slopes.
///
/// Monotone data produce a monotone interpolant, so a nonincreasing table
/// never acquires a positive derivative between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    // running integral from x[0] to x[k]
    cum: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. `x` must be strictly increasing with at least two nodes.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Option<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return None;
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (a, b) = (delta[k - 1], delta[k]);
                if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
                    d[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / a + w2 / b);
                }
            }
            d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        let mut cum = vec![0.0; n];
        for k in 0..n - 1 {
            cum[k + 1] = cum[k] + h[k] * (0.5 * (y[k] + y[k + 1]) + h[k] * (d[k] - d[k + 1]) / 12.0);
        }
        Some(Self { x, y, d, cum })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Value and first derivative. Outside the node range the end value is held
    /// constant and the derivative is zero.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (lo, hi) = self.domain();
        if t <= lo {
            return (self.y[0], if t == lo { self.d[0] } else { 0.0 });
        }
        if t >= hi {
            let n = self.x.len();
            return (self.y[n - 1], if t == hi { self.d[n - 1] } else { 0.0 });
        }
        let k = self.locate(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + h * d0 * (s3 - 2.0 * s2 + s)
            + y1 * (-2.0 * s3 + 3.0 * s2)
            + h * d1 * (s3 - s2);
        let dv = (y0 - y1) * (6.0 * s2 - 6.0 * s) / h
            + d0 * (3.0 * s2 - 4.0 * s + 1.0)
            + d1 * (3.0 * s2 - 2.0 * s);
        (v, dv)
    }

    /// Integral of the (constantly extended) interpolant from `x[0]` to `t`.
    pub fn integral(&self, t: f64) -> f64 {
        let (lo, hi) = self.domain();
        let n = self.x.len();
        if t <= lo {
            return self.y[0] * (t - lo);
        }
        if t >= hi {
            return self.cum[n - 1] + self.y[n - 1] * (t - hi);
        }
        let k = self.locate(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let part = self.y[k] * (0.5 * s4 - s3 + s)
            + h * self.d[k] * (0.25 * s4 - 2.0 * s3 / 3.0 + 0.5 * s2)
            + self.y[k + 1] * (-0.5 * s4 + s3)
            + h * self.d[k + 1] * (0.25 * s4 - s3 / 3.0);
        self.cum[k] + h * part
    }
}

// Three-point end slope, limited so the end interval stays monotone.
fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}
