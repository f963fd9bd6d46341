//! The discrete height equation on the half-period rectangle.
//!
//! Interior nodes carry
//!
//! ```text
//! R1 = (1 + h_q²) h_pp + h_qq h_p² − 2 h_q h_p h_pq − g (h − d) h_p³ ρ_p + h_p³ β(−p)
//! ```
//!
//! and top nodes carry `R2 = 1 + h_q² + h_p² (2 g ρ(0) h − Q)`, where
//! `d = mean_top(h)`. All derivatives are second-order differences; `h` is
//! even in `q`, so the q-edges are handled by reflection. The bottom row is
//! fixed at `h = 0` and is not an unknown.
//!
//! Unknowns are ordered with `p` fastest, `(i, j) ↦ i (Np − 1) + j − 1`, which
//! keeps the Jacobian bandwidth at `Np`.

use crate::laminar::LaminarFlow;
use crate::profiles::ProfileBundle;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("grid needs at least 16 nodes per direction (got {nq} x {np})")]
    InvalidGrid { nq: usize, np: usize },
    #[error("h_p is not positive (min {min_hp}); the flow would stagnate")]
    StagnationGuard { min_hp: f64 },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("linear solve is singular (pivot {pivot:e} at column {column})")]
    SingularJacobian { column: usize, pivot: f64 },
    #[error("size mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    pub nq: usize,
    pub np: usize,
    pub p0: f64,
}

impl Grid {
    pub fn new(nq: usize, np: usize, p0: f64) -> Result<Self, PdeError> {
        if nq < 16 || np < 16 {
            return Err(PdeError::InvalidGrid { nq, np });
        }
        Ok(Self { nq, np, p0 })
    }

    pub fn hq(&self) -> f64 {
        std::f64::consts::PI / (self.nq - 1) as f64
    }

    pub fn hp(&self) -> f64 {
        -self.p0 / (self.np - 1) as f64
    }

    pub fn q(&self, i: usize) -> f64 {
        if i == self.nq - 1 {
            std::f64::consts::PI
        } else {
            i as f64 * self.hq()
        }
    }

    pub fn p(&self, j: usize) -> f64 {
        if j == self.np - 1 {
            0.0
        } else {
            self.p0 + j as f64 * self.hp()
        }
    }

    /// Storage index of node (i, j).
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.np + j
    }

    pub fn n_nodes(&self) -> usize {
        self.nq * self.np
    }

    /// Unknown index of node (i, j), j ≥ 1.
    pub fn unknown(&self, i: usize, j: usize) -> usize {
        i * (self.np - 1) + j - 1
    }

    pub fn n_unknowns(&self) -> usize {
        self.nq * (self.np - 1)
    }

    /// Trapezoid weights of the full-period mean of a top-row function stored
    /// on the half period.
    pub fn mean_weights(&self) -> Vec<f64> {
        let m = (self.nq - 1) as f64;
        (0..self.nq).map(|i| if i == 0 || i == self.nq - 1 { 0.5 / m } else { 1.0 / m }).collect()
    }

    fn reflect(&self, i: isize) -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= self.nq {
            2 * (self.nq - 1) - i as usize
        } else {
            i as usize
        }
    }
}

/// Height values on the half-period grid together with the head Q.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub grid: Grid,
    pub h: Vec<f64>,
    pub q: f64,
}

impl HeightField {
    /// The laminar flow replicated across q; the flow grid must match `np`.
    pub fn from_laminar(grid: Grid, flow: &LaminarFlow) -> Result<Self, PdeError> {
        if flow.np() != grid.np {
            return Err(PdeError::DimensionMismatch { expected: grid.np, got: flow.np() });
        }
        let mut h = vec![0.0; grid.n_nodes()];
        for i in 0..grid.nq {
            for j in 0..grid.np {
                h[grid.node(i, j)] = flow.h[j];
            }
        }
        Ok(Self { grid, h, q: flow.q })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.h[self.grid.node(i, j)]
    }

    /// h_p at a node: centered inside, second-order one-sided on the top and
    /// bottom rows.
    pub fn h_p(&self, i: usize, j: usize) -> f64 {
        let hp = self.grid.hp();
        let n = self.grid.np;
        let v = |j: usize| self.at(i, j);
        if j == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * hp)
        } else if j == n - 1 {
            (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * hp)
        } else {
            (v(j + 1) - v(j - 1)) / (2.0 * hp)
        }
    }

    /// h_q at a node, centered with even reflection (zero on the q-edges).
    pub fn h_q(&self, i: usize, j: usize) -> f64 {
        let g = &self.grid;
        if i == 0 || i == g.nq - 1 {
            return 0.0;
        }
        (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * g.hq())
    }

    pub fn hp_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.grid.nq {
            for j in 0..self.grid.np {
                let v = self.h_p(i, j);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn max_abs_hq(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.grid.nq {
            for j in 0..self.grid.np {
                m = m.max(self.h_q(i, j).abs());
            }
        }
        m
    }

    pub fn top(&self) -> Vec<f64> {
        (0..self.grid.nq).map(|i| self.at(i, self.grid.np - 1)).collect()
    }

    /// Unknown vector (bottom row dropped).
    pub fn unknowns(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut x = vec![0.0; g.n_unknowns()];
        for i in 0..g.nq {
            for j in 1..g.np {
                x[g.unknown(i, j)] = self.at(i, j);
            }
        }
        x
    }

    pub fn set_unknowns(&mut self, x: &[f64]) {
        let g = self.grid;
        for i in 0..g.nq {
            for j in 1..g.np {
                self.h[g.node(i, j)] = x[g.unknown(i, j)];
            }
        }
    }

    pub fn scale(&self) -> f64 {
        let hmax = self.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        1f64.max(self.q.abs()).max(hmax)
    }
}

/// Full-period trapezoid mean of h over the surface.
pub fn mean_top(field: &HeightField) -> f64 {
    let g = &field.grid;
    g.mean_weights().iter().enumerate().map(|(i, w)| w * field.at(i, g.np - 1)).sum()
}

/// Residual in unknown ordering: R1 at rows with j < Np − 1, R2 on the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Residual {
    pub fn r1(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.unknown(i, j)]
    }

    pub fn r2(&self, i: usize) -> f64 {
        self.values[self.grid.unknown(i, self.grid.np - 1)]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn r1_norm(&self) -> f64 {
        let g = &self.grid;
        let mut m = 0.0f64;
        for i in 0..g.nq {
            for j in 1..g.np - 1 {
                m = m.max(self.r1(i, j).abs());
            }
        }
        m
    }

    pub fn r2_norm(&self) -> f64 {
        (0..self.grid.nq).fold(0.0f64, |m, i| m.max(self.r2(i).abs()))
    }
}

/// Right-hand side subtracted from the residual (manufactured solutions).
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    /// In unknown ordering, like [`Residual::values`].
    pub values: Vec<f64>,
}

/// The height equation for one profile bundle on one grid.
#[derive(Debug, Clone)]
pub struct HeightProblem<'a> {
    pub bundle: &'a ProfileBundle,
    pub grid: Grid,
    rho_p: Vec<f64>,
    beta: Vec<f64>,
    pub forcing: Option<Forcing>,
}

/// Local derivatives at an interior node.
struct Stencil {
    h: f64,
    a: f64,
    bp: f64,
    hpp: f64,
    hqq: f64,
    hpq: f64,
}

impl<'a> HeightProblem<'a> {
    pub fn new(bundle: &'a ProfileBundle, grid: Grid) -> Self {
        let rho_p = (0..grid.np).map(|j| bundle.rho.rho_p(grid.p(j))).collect();
        let beta = (0..grid.np).map(|j| bundle.beta.beta(-grid.p(j))).collect();
        Self { bundle, grid, rho_p, beta, forcing: None }
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    fn check(&self, field: &HeightField) -> Result<(), PdeError> {
        if field.h.len() != self.grid.n_nodes() {
            return Err(PdeError::DimensionMismatch { expected: self.grid.n_nodes(), got: field.h.len() });
        }
        let (min_hp, _) = field.hp_range();
        if !(min_hp > 0.0) {
            return Err(PdeError::StagnationGuard { min_hp });
        }
        Ok(())
    }

    fn stencil(&self, f: &HeightField, i: usize, j: usize) -> Stencil {
        let g = &self.grid;
        let (hq, hp) = (g.hq(), g.hp());
        let v = |di: isize, dj: isize| f.at(g.reflect(i as isize + di), (j as isize + dj) as usize);
        let c = v(0, 0);
        Stencil {
            h: c,
            a: (v(1, 0) - v(-1, 0)) / (2.0 * hq),
            bp: (v(0, 1) - v(0, -1)) / (2.0 * hp),
            hpp: (v(0, 1) - 2.0 * c + v(0, -1)) / (hp * hp),
            hqq: (v(1, 0) - 2.0 * c + v(-1, 0)) / (hq * hq),
            hpq: (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * hq * hp),
        }
    }

    fn top_terms(&self, f: &HeightField, i: usize) -> (f64, f64, f64) {
        let g = &self.grid;
        let n = g.np;
        let v = |di: isize, j: usize| f.at(g.reflect(i as isize + di), j);
        let a = (v(1, n - 1) - v(-1, n - 1)) / (2.0 * g.hq());
        let bp = (3.0 * v(0, n - 1) - 4.0 * v(0, n - 2) + v(0, n - 3)) / (2.0 * g.hp());
        (v(0, n - 1), a, bp)
    }

    /// Residual with the nonlocal mean replaced by `sigma`.
    pub fn frozen_residual(&self, field: &HeightField, sigma: f64) -> Result<Residual, PdeError> {
        self.check(field)?;
        let g = &self.grid;
        let grav = self.bundle.g();
        let rho0 = self.bundle.rho0();
        let mut values = vec![0.0; g.n_unknowns()];
        for i in 0..g.nq {
            for j in 1..g.np - 1 {
                let s = self.stencil(field, i, j);
                let bp3 = s.bp * s.bp * s.bp;
                values[g.unknown(i, j)] = (1.0 + s.a * s.a) * s.hpp + s.hqq * s.bp * s.bp
                    - 2.0 * s.a * s.bp * s.hpq
                    - grav * (s.h - sigma) * bp3 * self.rho_p[j]
                    + bp3 * self.beta[j];
            }
            let (h, a, bp) = self.top_terms(field, i);
            values[g.unknown(i, g.np - 1)] = 1.0 + a * a + bp * bp * (2.0 * grav * rho0 * h - field.q);
        }
        if let Some(fc) = &self.forcing {
            values.iter_mut().zip(&fc.values).for_each(|(r, f)| *r -= f);
        }
        Ok(Residual { grid: *g, values })
    }

    pub fn residual(&self, field: &HeightField) -> Result<Residual, PdeError> {
        self.frozen_residual(field, mean_top(field))
    }

    /// Discrete Fréchet derivative at `field`.
    pub fn jacobian(&self, field: &HeightField) -> Result<JacobianSystem, PdeError> {
        self.check(field)?;
        let g = self.grid;
        let (hq, hp) = (g.hq(), g.hp());
        let grav = self.bundle.g();
        let rho0 = self.bundle.rho0();
        let sigma = mean_top(field);
        let n = g.n_unknowns();
        let bw = g.np;
        let mut band = BandMatrix::new(n, bw, bw);
        let mut u = vec![0.0; n];
        let mut dq = vec![0.0; n];
        let add = |row: usize, i: usize, di: isize, j: usize, dj: isize, val: f64, band: &mut BandMatrix| {
            let jj = (j as isize + dj) as usize;
            if jj == 0 {
                return;
            }
            let ii = g.reflect(i as isize + di);
            band.add(row, g.unknown(ii, jj), val);
        };
        for i in 0..g.nq {
            for j in 1..g.np - 1 {
                let row = g.unknown(i, j);
                let s = self.stencil(field, i, j);
                let (rp, bt) = (self.rho_p[j], self.beta[j]);
                let bp2 = s.bp * s.bp;
                let d_a = 2.0 * s.a * s.hpp - 2.0 * s.bp * s.hpq;
                let d_bp = 2.0 * s.hqq * s.bp - 2.0 * s.a * s.hpq - 3.0 * grav * (s.h - sigma) * bp2 * rp + 3.0 * bp2 * bt;
                let c_pp = 1.0 + s.a * s.a;
                let c_qq = bp2;
                let c_pq = -2.0 * s.a * s.bp;
                let centre = -2.0 * c_pp / (hp * hp) - 2.0 * c_qq / (hq * hq) - grav * bp2 * s.bp * rp;
                add(row, i, 0, j, 0, centre, &mut band);
                add(row, i, 0, j, 1, c_pp / (hp * hp) + d_bp / (2.0 * hp), &mut band);
                add(row, i, 0, j, -1, c_pp / (hp * hp) - d_bp / (2.0 * hp), &mut band);
                add(row, i, 1, j, 0, c_qq / (hq * hq) + d_a / (2.0 * hq), &mut band);
                add(row, i, -1, j, 0, c_qq / (hq * hq) - d_a / (2.0 * hq), &mut band);
                let x = c_pq / (4.0 * hq * hp);
                add(row, i, 1, j, 1, x, &mut band);
                add(row, i, 1, j, -1, -x, &mut band);
                add(row, i, -1, j, 1, -x, &mut band);
                add(row, i, -1, j, -1, x, &mut band);
                u[row] = grav * bp2 * s.bp * rp;
            }
            let top = g.np - 1;
            let row = g.unknown(i, top);
            let (h, a, bp) = self.top_terms(field, i);
            let k = 2.0 * grav * rho0 * h - field.q;
            let d_bp = 2.0 * bp * k;
            add(row, i, 1, top, 0, a / hq, &mut band);
            add(row, i, -1, top, 0, -a / hq, &mut band);
            add(row, i, 0, top, 0, 1.5 * d_bp / hp + 2.0 * grav * rho0 * bp * bp, &mut band);
            add(row, i, 0, top, -1, -2.0 * d_bp / hp, &mut band);
            add(row, i, 0, top, -2, 0.5 * d_bp / hp, &mut band);
            dq[row] = -bp * bp;
        }
        let mut w = vec![0.0; n];
        for (i, wi) in g.mean_weights().into_iter().enumerate() {
            w[g.unknown(i, g.np - 1)] = wi;
        }
        Ok(JacobianSystem { band, u, w, dq })
    }
}

/// Jacobian J = band + u wᵀ, plus the column ∂R/∂Q.
#[derive(Debug, Clone)]
pub struct JacobianSystem {
    pub band: BandMatrix,
    pub u: Vec<f64>,
    /// Mean weights on top-row columns, zero elsewhere.
    pub w: Vec<f64>,
    pub dq: Vec<f64>,
}

impl JacobianSystem {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.band.matvec(x);
        let s: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum();
        y.iter_mut().zip(&self.u).for_each(|(yi, ui)| *yi += ui * s);
        y
    }

    pub fn factor(&self) -> Result<FactoredJacobian, PdeError> {
        let lu = self.band.factor()?;
        let z = lu.solve(&self.u);
        let denom = 1.0 + dot(&self.w, &z);
        let scale = 1.0 + dot(&self.w, &self.w).sqrt() * norm2(&z);
        if denom.abs() <= 1e-14 * scale {
            return Err(PdeError::SingularJacobian { column: self.n(), pivot: denom });
        }
        Ok(FactoredJacobian { sys: self.clone(), lu, z, denom })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// LU of the band part with the Sherman–Morrison data for the rank-one term.
#[derive(Debug, Clone)]
pub struct FactoredJacobian {
    sys: JacobianSystem,
    lu: BandLu,
    z: Vec<f64>,
    denom: f64,
}

/// A linear constraint `row · x + q_coef · δQ = rhs` bordering the Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct Border {
    pub row: Vec<f64>,
    pub q_coef: f64,
}

impl FactoredJacobian {
    pub fn system(&self) -> &JacobianSystem {
        &self.sys
    }

    /// Solves J x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(b);
        let t = dot(&self.sys.w, &y) / self.denom;
        y.iter_mut().zip(&self.z).for_each(|(yi, zi)| *yi -= t * zi);
        y
    }

    /// Solves the bordered system
    /// `[J, ∂R/∂Q; row, q_coef] (x, δQ) = (b, beta)` by block elimination
    /// followed by two steps of iterative refinement.
    pub fn solve_bordered(&self, border: &Border, b: &[f64], beta: f64) -> Result<(Vec<f64>, f64), PdeError> {
        let zc = self.solve(&self.sys.dq);
        let schur = border.q_coef - dot(&border.row, &zc);
        let scale = border.q_coef.abs() + norm2(&border.row) * norm2(&zc);
        if schur.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(PdeError::SingularJacobian { column: self.sys.n(), pivot: schur });
        }
        let elim = |b: &[f64], beta: f64| {
            let y = self.solve(b);
            let t = (beta - dot(&border.row, &y)) / schur;
            let x: Vec<f64> = y.iter().zip(&zc).map(|(yi, zi)| yi - t * zi).collect();
            (x, t)
        };
        let (mut x, mut t) = elim(b, beta);
        for _ in 0..2 {
            let mut r = self.sys.matvec(&x);
            r.iter_mut().zip(&self.sys.dq).zip(b).for_each(|((ri, ci), bi)| *ri = bi - *ri - ci * t);
            let rb = beta - dot(&border.row, &x) - border.q_coef * t;
            let (dx, dt) = elim(&r, rb);
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            t += dt;
        }
        Ok((x, t))
    }
}

/// General band matrix in LAPACK band layout, with room for the fill-in of
/// partial pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, ab: vec![0.0; ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn pos(&self, r: usize, c: usize) -> usize {
        c * self.ldab + self.kl + self.ku + r - c
    }

    fn in_band(&self, r: usize, c: usize) -> bool {
        r <= c + self.kl && c <= r + self.ku
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if self.in_band(r, c) {
            self.ab[self.pos(r, c)]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry (r, c), which must lie inside the band.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(self.in_band(r, c), "entry ({r}, {c}) outside the band");
        let k = self.pos(r, c);
        self.ab[k] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let lo = c.saturating_sub(self.ku);
            let hi = (c + self.kl).min(self.n - 1);
            for r in lo..=hi {
                y[r] += self.ab[self.pos(r, c)] * x[c];
            }
        }
        y
    }

    /// LU with partial pivoting.
    pub fn factor(&self) -> Result<BandLu, PdeError> {
        let mut a = self.clone();
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut ipiv = vec![0; n];
        let amax = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = j;
            let mut best = a.ab[a.pos(j, j)].abs();
            for r in j + 1..=j + km {
                let v = a.ab[a.pos(r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            ipiv[j] = p;
            if best <= f64::EPSILON * 1e-2 * amax || best == 0.0 {
                return Err(PdeError::SingularJacobian { column: j, pivot: best });
            }
            let cmax = (j + kl + ku).min(n - 1);
            if p != j {
                for c in j..=cmax {
                    let (x, y) = (a.pos(j, c), a.pos(p, c));
                    a.ab.swap(x, y);
                }
            }
            let piv = a.ab[a.pos(j, j)];
            for r in j + 1..=j + km {
                let k = a.pos(r, j);
                a.ab[k] /= piv;
            }
            for c in j + 1..=cmax {
                let t = a.ab[a.pos(j, c)];
                if t == 0.0 {
                    continue;
                }
                for r in j + 1..=j + km {
                    let l = a.ab[a.pos(r, j)];
                    let k = a.pos(r, c);
                    a.ab[k] -= l * t;
                }
            }
        }
        Ok(BandLu { a, ipiv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.a;
        let n = a.n;
        let mut x = b.to_vec();
        for j in 0..n {
            x.swap(j, self.ipiv[j]);
            let km = a.kl.min(n - 1 - j);
            let xj = x[j];
            if xj != 0.0 {
                for r in j + 1..=j + km {
                    x[r] -= a.ab[a.pos(r, j)] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= a.ab[a.pos(j, j)];
            let xj = x[j];
            let lo = j.saturating_sub(a.kl + a.ku);
            for r in lo..j {
                x[r] -= a.ab[a.pos(r, j)] * xj;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Residual tolerance relative to [`HeightField::scale`].
    pub tol: f64,
    /// Step-size tolerance relative to the same scale.
    pub step_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 30, tol: 1e-10, step_tol: 1e-12 }
    }
}

/// Which unknowns Newton iterates on.
#[derive(Debug, Clone, PartialEq)]
pub enum NewtonMode {
    /// Q is held fixed.
    FixedQ,
    /// Q is an unknown, closed by `row · h + q_coef · Q = rhs` (h in unknown
    /// ordering).
    Bordered { border: Border, rhs: f64 },
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub field: HeightField,
    pub iterations: usize,
    pub residual: f64,
    pub step: f64,
}

/// Damped Newton iteration.
///
/// Converged when ‖R‖∞ ≤ tol·scale and either the last step was below
/// step_tol·scale or the residual is already at the 1e-4·tol·scale level
/// (where further steps only move round-off). Steps are halved until
/// min h_p stays positive.
pub fn newton_solve(
    problem: &HeightProblem,
    h0: &HeightField,
    mode: &NewtonMode,
    opts: &NewtonOptions,
) -> Result<NewtonReport, PdeError> {
    let mut field = h0.clone();
    let constraint = |f: &HeightField| match mode {
        NewtonMode::FixedQ => 0.0,
        NewtonMode::Bordered { border, rhs } => dot(&border.row, &f.unknowns()) + border.q_coef * f.q - rhs,
    };
    let mut last_step = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let res = problem.residual(&field)?;
        let rn = res.norm_inf().max(constraint(&field).abs());
        let scale = field.scale();
        if rn <= opts.tol * scale && (it == 0 || last_step <= opts.step_tol * scale || rn <= 1e-4 * opts.tol * scale) {
            return Ok(NewtonReport { field, iterations: it, residual: rn, step: if it == 0 { 0.0 } else { last_step } });
        }
        if it == opts.max_iter {
            return Err(PdeError::NoConvergence { iterations: it, residual: rn });
        }
        let fj = problem.jacobian(&field)?.factor()?;
        let rhs: Vec<f64> = res.values.iter().map(|v| -v).collect();
        let (dx, dq) = match mode {
            NewtonMode::FixedQ => (fj.solve(&rhs), 0.0),
            NewtonMode::Bordered { border, .. } => fj.solve_bordered(border, &rhs, -constraint(&field))?,
        };
        let x0 = field.unknowns();
        let q0 = field.q;
        let mut alpha = 1.0;
        loop {
            let x: Vec<f64> = x0.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            let mut trial = field.clone();
            trial.set_unknowns(&x);
            trial.q = q0 + alpha * dq;
            let (min_hp, _) = trial.hp_range();
            if min_hp > 0.0 && trial.h.iter().all(|v| v.is_finite()) {
                field = trial;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Err(PdeError::StagnationGuard { min_hp });
            }
        }
        last_step = alpha * dx.iter().fold(dq.abs(), |m, v| m.max(v.abs()));
    }
    unreachable!("loop returns on the final iteration")
}
