//! Physical variables from a height-equation solution, and residual checks
//! of the steady Euler system in the moving frame.
//!
//! Fields are sampled on the image of the `(q, p)` grid, reflected to the full
//! period `x ∈ [−π, π]`. With `y = h − d`,
//!
//! ```text
//! u = c − 1/(√ρ h_p),   v = −h_q/(√ρ h_p),   ψ = −p,   ρ = ρ(p)
//! P = E(p) − ½ρ((u − c)² + v²) − gρy,   E(p) = Q/2 − gρ(0)d + B(p)
//! ```
//!
//! with the atmospheric pressure taken as zero. `h_p` and `h_q` use
//! fourth-order differences so that one further centered difference in the
//! residuals keeps the total error second order.

use std::io::Write;

use rayon::prelude::*;

use crate::heightpde::{mean_top, HeightField};
use crate::interp::MonotoneCubic;
use crate::profiles::ProfileBundle;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("h_p is not positive (min {min_hp}); the flow would stagnate")]
    StagnationGuard { min_hp: f64 },
    #[error("invalid field: {0}")]
    InvalidField(String),
}

/// Largest |h| accepted on the bed row.
pub const BED_TOL: f64 = 1e-12;

/// Physical fields on a streamline-fitted mesh over one period.
///
/// Node `(k, j)` is column `k` (x ascending) and streamline `j` (bed first),
/// stored at `k * np + j`. Columns 0 and `nx − 1` are the same physical
/// column at x = ∓π.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub nx: usize,
    pub np: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
    pub pressure: Vec<f64>,
    pub eta: Vec<f64>,
    /// ψ on each streamline.
    pub psi: Vec<f64>,
    /// β(ψ) on each streamline.
    pub beta: Vec<f64>,
    /// ρ′(−ψ) on each streamline.
    pub rho_p: Vec<f64>,
    pub g: f64,
    pub c: f64,
    pub p0: f64,
    pub q: f64,
    pub d: f64,
    pub dx: f64,
    pub dp: f64,
}

impl PhysicalField {
    pub fn idx(&self, k: usize, j: usize) -> usize {
        k * self.np + j
    }

    /// Periodic trapezoid mean of η.
    pub fn mean_eta(&self) -> f64 {
        let n = self.nx - 1;
        self.eta[..n].iter().sum::<f64>() / n as f64
    }

    pub fn max_u(&self) -> f64 {
        self.u.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }
}

// Fourth-order first derivative of samples f at index j, spacing h.
fn d4(f: &[f64], j: usize, h: f64) -> f64 {
    let n = f.len();
    let s = 12.0 * h;
    if j == 0 {
        (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / s
    } else if j == 1 {
        (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / s
    } else if j == n - 2 {
        (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / s
    } else if j == n - 1 {
        (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) / s
    } else {
        (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / s
    }
}

/// h_p and h_q at every half-grid node, fourth order.
fn derivatives4(field: &HeightField) -> (Vec<f64>, Vec<f64>) {
    let g = field.grid;
    let (nq, np) = (g.nq, g.np);
    let mut hp = vec![0.0; g.n_nodes()];
    let mut hq = vec![0.0; g.n_nodes()];
    for i in 0..nq {
        let col = &field.h[g.node(i, 0)..g.node(i, 0) + np];
        for j in 0..np {
            hp[g.node(i, j)] = d4(col, j, g.hp());
        }
    }
    // even reflection in q
    let refl = |i: isize| -> usize {
        let m = (nq - 1) as isize;
        let r = if i < 0 { -i } else if i > m { 2 * m - i } else { i };
        r as usize
    };
    let s = 12.0 * g.hq();
    // zero on the q-edges by symmetry
    for i in 1..nq - 1 {
        for j in 0..np {
            let at = |k: isize| field.at(refl(i as isize + k), j);
            hq[g.node(i, j)] = (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / s;
        }
    }
    (hp, hq)
}

/// Maps a height field to physical variables on the full period.
pub fn to_physical(field: &HeightField, bundle: &ProfileBundle) -> Result<PhysicalField, ReconstructError> {
    let g = field.grid;
    let (nq, np) = (g.nq, g.np);
    if field.h.len() != g.n_nodes() {
        return Err(ReconstructError::InvalidField(format!("expected {} heights, got {}", g.n_nodes(), field.h.len())));
    }
    if field.h.iter().any(|v| !v.is_finite()) || !field.q.is_finite() {
        return Err(ReconstructError::InvalidField("non-finite height or head".into()));
    }
    if let Some(i) = (0..nq).find(|&i| field.at(i, 0).abs() > BED_TOL) {
        return Err(ReconstructError::InvalidField(format!("bed row is not zero at column {i}: h = {}", field.at(i, 0))));
    }
    let (hp, hq) = derivatives4(field);
    let min_hp = hp.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(min_hp > 0.0) {
        return Err(ReconstructError::StagnationGuard { min_hp });
    }

    let grav = bundle.g();
    let c = bundle.params.c;
    let d = mean_top(field);
    let rho0 = bundle.rho0();
    let e_surface = 0.5 * field.q - grav * rho0 * d;
    let p: Vec<f64> = (0..np).map(|j| g.p(j)).collect();
    let rho_row: Vec<f64> = p.iter().map(|&p| bundle.rho.rho(p)).collect();
    let rho_p: Vec<f64> = p.iter().map(|&p| bundle.rho.rho_p(p)).collect();
    let beta: Vec<f64> = p.iter().map(|&p| bundle.beta.b_prime(p)).collect();
    let e_row: Vec<f64> = p.iter().map(|&p| e_surface + bundle.eval_b(p)).collect();

    let nx = 2 * (nq - 1) + 1;
    let mid = nq - 1;
    let columns: Vec<_> = (0..nx)
        .into_par_iter()
        .map(|k| {
            let i = k.abs_diff(mid);
            let sign = if k < mid { -1.0 } else { 1.0 };
            let mut col = Vec::with_capacity(np);
            for j in 0..np {
                let n = g.node(i, j);
                let sr = rho_row[j].sqrt();
                let y = field.h[n] - d;
                let h_q = sign * hq[n];
                let u = c - 1.0 / (sr * hp[n]);
                let v = -h_q / (sr * hp[n]);
                let kinetic = 0.5 * (1.0 + h_q * h_q) / (hp[n] * hp[n]);
                let pr = e_row[j] - kinetic - grav * rho_row[j] * y;
                col.push((y, u, v, pr));
            }
            col
        })
        .collect();

    let n = nx * np;
    let (mut y, mut u, mut v, mut pressure) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut rho = vec![0.0; n];
    for (k, col) in columns.iter().enumerate() {
        for (j, &(yy, uu, vv, pp)) in col.iter().enumerate() {
            let ix = k * np + j;
            y[ix] = yy;
            u[ix] = uu;
            v[ix] = vv;
            pressure[ix] = pp;
            rho[ix] = rho_row[j];
        }
    }
    let dx = g.hq();
    let x: Vec<f64> = (0..nx).map(|k| if k == nx - 1 { std::f64::consts::PI } else { -std::f64::consts::PI + k as f64 * dx }).collect();
    let eta: Vec<f64> = (0..nx).map(|k| y[k * np + np - 1]).collect();
    Ok(PhysicalField {
        nx,
        np,
        x,
        y,
        u,
        v,
        rho,
        pressure,
        eta,
        psi: p.iter().map(|p| -p).collect(),
        beta,
        rho_p,
        g: grav,
        c,
        p0: g.p0,
        q: field.q,
        d,
        dx,
        dp: g.hp(),
    })
}

/// Max-norm residuals of the steady Euler system and its boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VerificationReport {
    /// u_x + v_y
    pub incompressibility: f64,
    /// (u − c)ρ_x + vρ_y
    pub mass_transport: f64,
    /// (u − c)u_x + v u_y + P_x/ρ
    pub momentum_x: f64,
    /// (u − c)v_x + v v_y + P_y/ρ + g
    pub momentum_y: f64,
    /// v − (u − c)η_x on the surface
    pub kinematic: f64,
    /// P − P_atm on the surface
    pub surface_pressure: f64,
    /// v on the bed
    pub bed_velocity: f64,
    /// max over columns of |∫√ρ(u − c)dy − p0|
    pub flux: f64,
    /// |∇ψ|² + 2gρ(η + d) − Q on the surface
    pub bernoulli: f64,
    /// Δψ + β(ψ) − g y ρ′(−ψ)
    pub yih: f64,
    pub mean_eta: f64,
    pub dx: f64,
    pub dp: f64,
}

impl VerificationReport {
    /// Largest residual entry (spacings and mean η excluded).
    pub fn max_residual(&self) -> f64 {
        [
            self.incompressibility,
            self.mass_transport,
            self.momentum_x,
            self.momentum_y,
            self.kinematic,
            self.surface_pressure,
            self.bed_velocity,
            self.flux,
            self.bernoulli,
            self.yih,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

// Second-order differences on the mesh: periodic centered in x-index,
// centered / one-sided in p-index.
struct Mesh<'a> {
    pf: &'a PhysicalField,
    yq: Vec<f64>,
    yp: Vec<f64>,
}

impl<'a> Mesh<'a> {
    fn new(pf: &'a PhysicalField) -> Self {
        let mut m = Self { pf, yq: Vec::new(), yp: Vec::new() };
        m.yq = m.dq(&pf.y);
        m.yp = m.dp(&pf.y);
        m
    }

    fn dq(&self, f: &[f64]) -> Vec<f64> {
        let (nx, np) = (self.pf.nx, self.pf.np);
        let mut out = vec![0.0; f.len()];
        for k in 0..nx {
            let left = if k == 0 { nx - 2 } else { k - 1 };
            let right = if k == nx - 1 { 1 } else { k + 1 };
            for j in 0..np {
                out[k * np + j] = (f[right * np + j] - f[left * np + j]) / (2.0 * self.pf.dx);
            }
        }
        out
    }

    fn dp(&self, f: &[f64]) -> Vec<f64> {
        let (nx, np) = (self.pf.nx, self.pf.np);
        let h = self.pf.dp;
        let mut out = vec![0.0; f.len()];
        for k in 0..nx {
            let c = &f[k * np..(k + 1) * np];
            for j in 0..np {
                out[k * np + j] = if j == 0 {
                    (-3.0 * c[0] + 4.0 * c[1] - c[2]) / (2.0 * h)
                } else if j == np - 1 {
                    (3.0 * c[np - 1] - 4.0 * c[np - 2] + c[np - 3]) / (2.0 * h)
                } else {
                    (c[j + 1] - c[j - 1]) / (2.0 * h)
                };
            }
        }
        out
    }

    /// (f_x, f_y) via ∂x = ∂q − (y_q/y_p)∂p, ∂y = ∂p / y_p.
    fn grad(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fq = self.dq(f);
        let fp = self.dp(f);
        let fx = (0..f.len()).map(|n| fq[n] - self.yq[n] / self.yp[n] * fp[n]).collect();
        let fy = (0..f.len()).map(|n| fp[n] / self.yp[n]).collect();
        (fx, fy)
    }
}

fn max_abs(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |m, v| m.max(v.abs()))
}

/// Centered-difference residuals of the field equations and boundary
/// conditions, and the trapezoid flux per column.
pub fn euler_residual(pf: &PhysicalField) -> VerificationReport {
    let mesh = Mesh::new(pf);
    let (nx, np) = (pf.nx, pf.np);
    let n = nx * np;
    let (ux, uy) = mesh.grad(&pf.u);
    let (vx, vy) = mesh.grad(&pf.v);
    let (rx, ry) = mesh.grad(&pf.rho);
    let (px, py) = mesh.grad(&pf.pressure);
    let w: Vec<f64> = (0..n).map(|m| pf.u[m] - pf.c).collect();

    let incompressibility = max_abs((0..n).map(|m| ux[m] + vy[m]));
    let mass_transport = max_abs((0..n).map(|m| w[m] * rx[m] + pf.v[m] * ry[m]));
    let momentum_x = max_abs((0..n).map(|m| w[m] * ux[m] + pf.v[m] * uy[m] + px[m] / pf.rho[m]));
    let momentum_y = max_abs((0..n).map(|m| w[m] * vx[m] + pf.v[m] * vy[m] + py[m] / pf.rho[m] + pf.g));

    let top = |k: usize| k * np + np - 1;
    let eta_x: Vec<f64> = (0..nx)
        .map(|k| {
            let left = if k == 0 { nx - 2 } else { k - 1 };
            let right = if k == nx - 1 { 1 } else { k + 1 };
            (pf.eta[right] - pf.eta[left]) / (2.0 * pf.dx)
        })
        .collect();
    let kinematic = max_abs((0..nx).map(|k| pf.v[top(k)] - w[top(k)] * eta_x[k]));
    let surface_pressure = max_abs((0..nx).map(|k| pf.pressure[top(k)]));
    let bed_velocity = max_abs((0..nx).map(|k| pf.v[k * np]));

    let flux = max_abs((0..nx).map(|k| {
        let f = |j: usize| pf.rho[k * np + j].sqrt() * w[k * np + j];
        let integral: f64 = (0..np - 1).map(|j| 0.5 * (f(j) + f(j + 1)) * (pf.y[k * np + j + 1] - pf.y[k * np + j])).sum();
        integral - pf.p0
    }));

    // ψ_x = −√ρ v, ψ_y = √ρ(u − c)
    let psi_x: Vec<f64> = (0..n).map(|m| -pf.rho[m].sqrt() * pf.v[m]).collect();
    let psi_y: Vec<f64> = (0..n).map(|m| pf.rho[m].sqrt() * w[m]).collect();
    let bernoulli = max_abs((0..nx).map(|k| {
        let m = top(k);
        psi_x[m] * psi_x[m] + psi_y[m] * psi_y[m] + 2.0 * pf.g * pf.rho[m] * (pf.eta[k] + pf.d) - pf.q
    }));
    let (psi_xx, _) = mesh.grad(&psi_x);
    let (_, psi_yy) = mesh.grad(&psi_y);
    let yih = max_abs((0..n).map(|m| {
        let j = m % np;
        psi_xx[m] + psi_yy[m] + pf.beta[j] - pf.g * pf.y[m] * pf.rho_p[j]
    }));

    VerificationReport {
        incompressibility,
        mass_transport,
        momentum_x,
        momentum_y,
        kinematic,
        surface_pressure,
        bed_velocity,
        flux,
        bernoulli,
        yih,
        mean_eta: pf.mean_eta().abs(),
        dx: pf.dx,
        dp: pf.dp,
    }
}

/// Outcome of the independent reconstruction of ψ along one column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StreamCheck {
    pub column: usize,
    /// max over nodes of |ψ(y_j) + p_j|
    pub psi_deviation: f64,
    /// |y0 + d| where ψ(y0) = −p0
    pub bed_error: f64,
}

/// Integrates ψ_y = −F(−ψ), F = 1/h_p interpolated in p, down from ψ = 0 on
/// the surface of half-grid column `i`, and compares ψ with the labels.
pub fn stream_consistency_at(field: &HeightField, i: usize) -> Result<StreamCheck, ReconstructError> {
    let g = field.grid;
    if i >= g.nq {
        return Err(ReconstructError::InvalidField(format!("column {i} out of range")));
    }
    let (hp, _) = derivatives4(field);
    let np = g.np;
    let p: Vec<f64> = (0..np).map(|j| g.p(j)).collect();
    let f: Vec<f64> = (0..np).map(|j| hp[g.node(i, j)]).collect();
    let min_hp = f.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(min_hp > 0.0) {
        return Err(ReconstructError::StagnationGuard { min_hp });
    }
    let inv: Vec<f64> = f.iter().map(|v| 1.0 / v).collect();
    let spline = MonotoneCubic::new(p.clone(), inv).ok_or_else(|| ReconstructError::InvalidField("bad column".into()))?;
    let rhs = |psi: f64| -spline.eval(-psi).0;
    let d = mean_top(field);
    let y: Vec<f64> = (0..np).map(|j| field.at(i, j) - d).collect();

    const SUB: usize = 8;
    let rk4 = |psi: f64, dy: f64| {
        let k1 = rhs(psi);
        let k2 = rhs(psi + 0.5 * dy * k1);
        let k3 = rhs(psi + 0.5 * dy * k2);
        let k4 = rhs(psi + dy * k3);
        psi + dy / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let mut psi = 0.0;
    let mut dev = 0.0f64;
    for j in (0..np - 1).rev() {
        let dy = (y[j] - y[j + 1]) / SUB as f64;
        for _ in 0..SUB {
            psi = rk4(psi, dy);
        }
        dev = dev.max((psi + p[j]).abs());
    }
    // bed row: ψ should equal −p0 at y = −d; step to where it does
    let mut y0 = y[0];
    for _ in 0..3 {
        let slope = rhs(psi);
        let dy = (-p[0] - psi) / slope;
        psi = rk4(psi, dy);
        y0 += dy;
    }
    Ok(StreamCheck { column: i, psi_deviation: dev, bed_error: (y0 + d).abs() })
}

/// The worst stream check over all half-grid columns.
pub fn stream_consistency(field: &HeightField) -> Result<StreamCheck, ReconstructError> {
    let checks: Result<Vec<StreamCheck>, _> = (0..field.grid.nq).into_par_iter().map(|i| stream_consistency_at(field, i)).collect();
    let checks = checks?;
    let mut worst = checks[0];
    for c in checks {
        if c.psi_deviation.max(c.bed_error) > worst.psi_deviation.max(worst.bed_error) {
            worst = c;
        }
    }
    Ok(worst)
}

/// Fields resampled onto a uniform Cartesian `(x, y)` grid from −d to
/// max η; nodes above the surface are NaN. Linear in y along each column.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// per field, `values[k * ny + m]`
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
    pub pressure: Vec<f64>,
}

pub fn resample_cartesian(pf: &PhysicalField, ny: usize) -> CartesianGrid {
    let ny = ny.max(2);
    let top = pf.eta.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let y: Vec<f64> = (0..ny).map(|m| -pf.d + (top + pf.d) * m as f64 / (ny - 1) as f64).collect();
    let n = pf.nx * ny;
    let mut out = CartesianGrid { x: pf.x.clone(), y: y.clone(), u: vec![f64::NAN; n], v: vec![f64::NAN; n], rho: vec![f64::NAN; n], pressure: vec![f64::NAN; n] };
    let np = pf.np;
    for k in 0..pf.nx {
        let col = &pf.y[k * np..(k + 1) * np];
        for (m, &yy) in y.iter().enumerate() {
            if yy > col[np - 1] + 1e-14 {
                continue;
            }
            let j = col.partition_point(|v| *v <= yy).clamp(1, np - 1);
            let t = ((yy - col[j - 1]) / (col[j] - col[j - 1])).clamp(0.0, 1.0);
            let lerp = |f: &[f64]| f[k * np + j - 1] * (1.0 - t) + f[k * np + j] * t;
            out.u[k * ny + m] = lerp(&pf.u);
            out.v[k * ny + m] = lerp(&pf.v);
            out.rho[k * ny + m] = lerp(&pf.rho);
            out.pressure[k * ny + m] = lerp(&pf.pressure);
        }
    }
    out
}

/// CSV `x,y,u,v,rho,P`, one row per mesh node, columns in x order.
pub fn write_field_csv<W: Write>(pf: &PhysicalField, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "u", "v", "rho", "P"])?;
    for k in 0..pf.nx {
        for j in 0..pf.np {
            let m = pf.idx(k, j);
            wr.serialize((pf.x[k], pf.y[m], pf.u[m], pf.v[m], pf.rho[m], pf.pressure[m]))?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// CSV `x,eta`.
pub fn write_surface_csv<W: Write>(pf: &PhysicalField, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "eta"])?;
    for k in 0..pf.nx {
        wr.serialize((pf.x[k], pf.eta[k]))?;
    }
    wr.flush()?;
    Ok(())
}

/// Legacy ASCII structured-grid file: point coordinates followed by the
/// point arrays u, v, rho, P.
pub fn write_vtk<W: Write>(pf: &PhysicalField, mut w: W) -> std::io::Result<()> {
    let n = pf.nx * pf.np;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "strataflow wave")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_GRID")?;
    // x varies fastest in the file
    writeln!(w, "DIMENSIONS {} {} 1", pf.nx, pf.np)?;
    writeln!(w, "POINTS {n} double")?;
    for j in 0..pf.np {
        for k in 0..pf.nx {
            writeln!(w, "{} {} 0", pf.x[k], pf.y[pf.idx(k, j)])?;
        }
    }
    writeln!(w, "POINT_DATA {n}")?;
    for (name, f) in [("u", &pf.u), ("v", &pf.v), ("rho", &pf.rho), ("P", &pf.pressure)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for j in 0..pf.np {
            for k in 0..pf.nx {
                writeln!(w, "{}", f[pf.idx(k, j)])?;
            }
        }
    }
    Ok(())
}
