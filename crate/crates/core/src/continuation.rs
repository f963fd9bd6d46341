//! Branch switching at λ* and pseudo-arclength continuation of the wave branch.
//!
//! States are pairs (h, Q). Distances use the product norm
//! `‖(δh, δQ)‖² = ‖δh‖²_{H¹} + δQ²`, with the H¹ norm taken over the full
//! period (the half period doubled) by trapezoid weights and cell differences.

use crate::heightpde::{mean_top, newton_solve, Border, Grid, HeightField, HeightProblem, NewtonMode, NewtonOptions, PdeError};
use crate::sturm::BifurcationPoint;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ContinuationError {
    #[error("bifurcation point grid has {got} p-nodes, the problem grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("step failed with ds = {ds:e} below ds_min: {source}")]
    StepFailure { ds: f64, source: PdeError },
    #[error(transparent)]
    Pde(#[from] PdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepBudget,
    BoundaryOfODelta,
    LaminarReturn,
    UnboundedQ,
    Stagnation,
    LeftwardBlowup,
    StepFailure,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::StepBudget => "step_budget",
            StopReason::BoundaryOfODelta => "boundary_of_O_delta",
            StopReason::LaminarReturn => "laminar_return",
            StopReason::UnboundedQ => "unbounded_Q",
            StopReason::Stagnation => "stagnation",
            StopReason::LeftwardBlowup => "leftward_blowup",
            StopReason::StepFailure => "step_failure",
        }
    }
}

/// Sign conditions of the nodal pattern on the half period. Each entry is
/// (holds, margin) with margin > 0 when the condition holds strictly.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NodalFlags {
    /// h_q < 0 inside and on the top edge.
    pub hq_negative: (bool, f64),
    /// h_qp < 0 on the bottom edge.
    pub bottom_hqp: (bool, f64),
    /// h_qq < 0 on the crest edge q = 0.
    pub left_hqq: (bool, f64),
    /// h_qq > 0 on the trough edge q = π.
    pub right_hqq: (bool, f64),
    /// h_qqp(0, p0) < 0 and h_qqp(π, p0) > 0.
    pub bottom_corners: (bool, f64),
    /// h_qq(0, 0) < 0 and h_qq(π, 0) > 0.
    pub top_corners: (bool, f64),
}

impl NodalFlags {
    pub fn all_ok(&self) -> bool {
        [self.hq_negative, self.bottom_hqp, self.left_hqq, self.right_hqq, self.bottom_corners, self.top_corners]
            .iter()
            .all(|c| c.0)
    }
}

const NODAL_TOL: f64 = 1e-12;

fn check(margin: f64) -> (bool, f64) {
    (margin > NODAL_TOL, margin)
}

/// Discrete nodal-pattern check; one-sided second-order p-differences on the
/// bottom edge.
pub fn nodal_check(field: &HeightField) -> NodalFlags {
    let g = field.grid;
    let (nq, np) = (g.nq, g.np);
    let (hq, hp) = (g.hq(), g.hp());
    let h = |i: usize, j: usize| field.at(i, j);
    // h_qq on the edges by reflection
    let hqq = |i: usize, j: usize| {
        if i == 0 {
            2.0 * (h(1, j) - h(0, j)) / (hq * hq)
        } else if i == nq - 1 {
            2.0 * (h(nq - 2, j) - h(nq - 1, j)) / (hq * hq)
        } else {
            (h(i + 1, j) - 2.0 * h(i, j) + h(i - 1, j)) / (hq * hq)
        }
    };
    let dp0 = |f: &dyn Fn(usize) -> f64| (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * hp);

    let mut m_hq = f64::INFINITY;
    for i in 1..nq - 1 {
        for j in 1..np {
            m_hq = m_hq.min(-field.h_q(i, j));
        }
    }
    let mut m_b = f64::INFINITY;
    for i in 1..nq - 1 {
        m_b = m_b.min(-dp0(&|j| field.h_q(i, j)));
    }
    let mut m_l = f64::INFINITY;
    let mut m_r = f64::INFINITY;
    for j in 1..np - 1 {
        m_l = m_l.min(-hqq(0, j));
        m_r = m_r.min(hqq(nq - 1, j));
    }
    let m_bc = (-dp0(&|j| hqq(0, j))).min(dp0(&|j| hqq(nq - 1, j)));
    let m_tc = (-hqq(0, np - 1)).min(hqq(nq - 1, np - 1));
    NodalFlags {
        hq_negative: check(m_hq),
        bottom_hqp: check(m_b),
        left_hqq: check(m_l),
        right_hqq: check(m_r),
        bottom_corners: check(m_bc),
        top_corners: check(m_tc),
    }
}

/// Per-point quantities, always recomputed from the field.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Diagnostics {
    /// max η − min η.
    pub amplitude: f64,
    pub max_hp: f64,
    pub min_hp: f64,
    /// min over the grid of c − u = 1/(√ρ h_p).
    pub min_c_minus_u: f64,
    pub d: f64,
    pub max_hq: f64,
    pub nodal_ok: bool,
    /// min over the surface of Q − 2gρ(0)h.
    pub surface_gap: f64,
    /// Mean of η over the full period.
    pub mean_eta: f64,
    /// 1/min_hp² + 2gρ(0)|p0| max_hp, the a-priori bound on Q.
    pub q_bound: f64,
}

pub fn diagnostics(problem: &HeightProblem, field: &HeightField) -> Diagnostics {
    let g = field.grid;
    let b = problem.bundle;
    let d = mean_top(field);
    let top = field.top();
    let eta_max = top.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - d;
    let eta_min = top.iter().fold(f64::INFINITY, |m, v| m.min(*v)) - d;
    let (min_hp, max_hp) = field.hp_range();
    let mut min_cu = f64::INFINITY;
    for i in 0..g.nq {
        for j in 0..g.np {
            let v = 1.0 / (b.rho.rho(g.p(j)).sqrt() * field.h_p(i, j));
            min_cu = min_cu.min(v);
        }
    }
    let gap = top.iter().map(|h| field.q - 2.0 * b.g() * b.rho0() * h).fold(f64::INFINITY, f64::min);
    Diagnostics {
        amplitude: eta_max - eta_min,
        max_hp,
        min_hp,
        min_c_minus_u: min_cu,
        d,
        max_hq: field.max_abs_hq(),
        nodal_ok: nodal_check(field).all_ok(),
        surface_gap: gap,
        mean_eta: mean_top(field) - d,
        q_bound: 1.0 / (min_hp * min_hp) + 2.0 * b.g() * b.rho0() * b.p0().abs() * max_hp,
    }
}

/// Thresholds for the global alternatives.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Monitors {
    /// The O_δ threshold on h_p and on the surface gap.
    pub delta: f64,
    pub q_max: f64,
    pub hp_max: f64,
    /// ‖h_q‖∞ below which a point counts as laminar.
    pub hq_tol: f64,
    /// Relative distance of the λ-estimate from λ* that marks a different
    /// laminar flow.
    pub lambda_rel_tol: f64,
    /// min_hp ≤ factor·δ (but above δ) flags fast leftward particles.
    pub blowup_factor: f64,
    pub lambda_star: f64,
}

impl Monitors {
    /// Defaults relative to the laminar flow at λ*.
    pub fn for_bifurcation(bp: &BifurcationPoint) -> Self {
        let hp = &bp.laminar.h_p;
        let min_hp = hp.iter().copied().fold(f64::INFINITY, f64::min);
        let max_hp = hp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            delta: 1e-3 * min_hp,
            q_max: 1e3 * bp.q_star.abs().max(1.0),
            hp_max: 1e3 * max_hp,
            hq_tol: 1e-8,
            lambda_rel_tol: 1e-3,
            blowup_factor: 10.0,
            lambda_star: bp.lambda_star,
        }
    }
}

/// Which alternatives a point is close to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct AlternativeFlags {
    pub unbounded_q: bool,
    pub stagnation: bool,
    pub leftward_blowup: bool,
    pub boundary_of_o_delta: bool,
    pub laminar_return: bool,
}

impl AlternativeFlags {
    pub fn count(&self) -> usize {
        [self.unbounded_q, self.stagnation, self.leftward_blowup, self.boundary_of_o_delta, self.laminar_return]
            .iter()
            .filter(|f| **f)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MonitorStatus {
    pub flags: AlternativeFlags,
    /// First triggered alternative in the order O_δ boundary, laminar return,
    /// unbounded Q, stagnation, leftward blow-up.
    pub stop: Option<StopReason>,
    pub lambda_estimate: f64,
    pub q_bound: f64,
}

pub fn alternative_monitor(problem: &HeightProblem, field: &HeightField, mon: &Monitors) -> MonitorStatus {
    let dg = diagnostics(problem, field);
    let g = field.grid;
    let top_hp: f64 = g.mean_weights().iter().enumerate().map(|(i, w)| w * field.h_p(i, g.np - 1)).sum();
    let lambda_estimate = 1.0 / (top_hp * top_hp);
    let flags = AlternativeFlags {
        boundary_of_o_delta: dg.min_hp <= mon.delta || dg.surface_gap <= mon.delta,
        laminar_return: dg.max_hq <= mon.hq_tol
            && (lambda_estimate - mon.lambda_star).abs() > mon.lambda_rel_tol * mon.lambda_star.abs(),
        unbounded_q: field.q.abs() > mon.q_max,
        stagnation: dg.max_hp >= mon.hp_max,
        leftward_blowup: dg.min_hp > mon.delta && dg.min_hp <= mon.blowup_factor * mon.delta,
    };
    let order = [
        (flags.boundary_of_o_delta, StopReason::BoundaryOfODelta),
        (flags.laminar_return, StopReason::LaminarReturn),
        (flags.unbounded_q, StopReason::UnboundedQ),
        (flags.stagnation, StopReason::Stagnation),
        (flags.leftward_blowup, StopReason::LeftwardBlowup),
    ];
    let stop = order.iter().find(|(f, _)| *f).map(|(_, r)| *r);
    MonitorStatus { flags, stop, lambda_estimate, q_bound: dg.q_bound }
}

/// Gram operator of the H¹ part of the product norm, on unknown vectors.
pub fn gram_apply(grid: &Grid, x: &[f64]) -> Vec<f64> {
    let (nq, np) = (grid.nq, grid.np);
    let (hq, hp) = (grid.hq(), grid.hp());
    let tw = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let area = 2.0 * hq * hp;
    let v = |i: usize, j: usize| if j == 0 { 0.0 } else { x[grid.unknown(i, j)] };
    let mut out = vec![0.0; x.len()];
    let acc = |i: usize, j: usize, val: f64, out: &mut Vec<f64>| {
        if j > 0 {
            out[grid.unknown(i, j)] += val;
        }
    };
    for i in 0..nq {
        for j in 1..np {
            acc(i, j, area * tw(i, nq) * tw(j, np) * v(i, j), &mut out);
        }
    }
    for j in 0..np {
        let w = area * tw(j, np) / (hq * hq);
        for i in 0..nq - 1 {
            let d = v(i + 1, j) - v(i, j);
            acc(i + 1, j, w * d, &mut out);
            acc(i, j, -w * d, &mut out);
        }
    }
    for i in 0..nq {
        let w = area * tw(i, nq) / (hp * hp);
        for j in 0..np - 1 {
            let d = v(i, j + 1) - v(i, j);
            acc(i, j + 1, w * d, &mut out);
            acc(i, j, -w * d, &mut out);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Product-norm distance between two states on the same grid.
pub fn product_distance(a: &HeightField, b: &HeightField) -> f64 {
    let dx: Vec<f64> = a.unknowns().iter().zip(b.unknowns()).map(|(x, y)| x - y).collect();
    let dq = a.q - b.q;
    (dot(&dx, &gram_apply(&a.grid, &dx)) + dq * dq).sqrt()
}

/// φ* = M(p) cos q on the grid, in unknown ordering.
pub fn kernel_field(grid: &Grid, bp: &BifurcationPoint) -> Result<Vec<f64>, ContinuationError> {
    if bp.eigen.m.len() != grid.np {
        return Err(ContinuationError::GridMismatch { expected: grid.np, got: bp.eigen.m.len() });
    }
    let mut x = vec![0.0; grid.n_unknowns()];
    for i in 0..grid.nq {
        // cos(π − q) = −cos q exactly on the mirrored node
        let c = if 2 * i + 1 == grid.nq { 0.0 } else { grid.q(i).cos() };
        for j in 1..grid.np {
            x[grid.unknown(i, j)] = bp.eigen.m[j] * c;
        }
    }
    Ok(x)
}

/// The state h → h(π − q): crest and trough exchanged.
pub fn mirror(field: &HeightField) -> HeightField {
    let g = field.grid;
    let mut out = field.clone();
    for i in 0..g.nq {
        for j in 0..g.np {
            out.h[g.node(i, j)] = field.at(g.nq - 1 - i, j);
        }
    }
    out
}

/// First branch point: predictor H* + s0 φ*, corrected by bordered Newton
/// under ⟨φ*, h − H*⟩ / ⟨φ*, φ*⟩ = s0 with Q free. `s0 = 0` returns the
/// laminar state.
pub fn initial_tangent(
    problem: &HeightProblem,
    bp: &BifurcationPoint,
    s0: f64,
    newton: &NewtonOptions,
) -> Result<(HeightField, Border, f64), ContinuationError> {
    let lam = HeightField::from_laminar(problem.grid, &bp.laminar)?;
    let phi = kernel_field(&problem.grid, bp)?;
    let pp = dot(&phi, &phi);
    let row: Vec<f64> = phi.iter().map(|v| v / pp).collect();
    let base = dot(&row, &lam.unknowns());
    let border = Border { row, q_coef: 0.0 };
    let rhs = base + s0;
    if s0 == 0.0 {
        return Ok((lam, border, rhs));
    }
    let mut start = lam.clone();
    let x: Vec<f64> = lam.unknowns().iter().zip(&phi).map(|(h, f)| h + s0 * f).collect();
    start.set_unknowns(&x);
    let mode = NewtonMode::Bordered { border: border.clone(), rhs };
    let rep = newton_solve(problem, &start, &mode, newton)?;
    Ok((rep.field, border, rhs))
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    /// Initial arclength step; also the default cap.
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub steps: usize,
    /// +1 follows the branch with a crest at q = 0, −1 the mirror branch.
    pub direction: f64,
    /// Amplitude of the first corrected point; defaults to 1e-2·d.
    pub s0: Option<f64>,
    pub newton: NewtonOptions,
    /// Newton iterations at or below which a step counts as easy.
    pub easy_iterations: usize,
}

impl ContinuationOptions {
    pub fn new(ds: f64, steps: usize) -> Self {
        Self {
            ds,
            ds_min: 1e-4 * ds,
            ds_max: ds,
            steps,
            direction: 1.0,
            s0: None,
            newton: NewtonOptions::default(),
            easy_iterations: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    /// Accumulated product-norm arclength from the laminar point.
    pub s: f64,
    pub field: HeightField,
    pub diagnostics: Diagnostics,
    pub monitor: MonitorStatus,
    pub newton_iterations: usize,
    pub residual: f64,
    /// Pseudo-arclength constraint residual at acceptance (0 for the first
    /// point, which uses the amplitude constraint).
    pub constraint_residual: f64,
    pub ds: f64,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub lambda_star: f64,
    pub monitors: Monitors,
    pub points: Vec<BranchPoint>,
    pub stop_reason: StopReason,
}

/// Stateful continuation driver: the laminar origin, the accepted points and
/// the current step length.
pub struct Continuation<'a> {
    problem: &'a HeightProblem<'a>,
    opts: ContinuationOptions,
    monitors: Monitors,
    prev: HeightField,
    pub branch: Branch,
    ds: f64,
    easy_streak: usize,
}

impl<'a> Continuation<'a> {
    /// Corrects the first point off the laminar branch.
    pub fn start(
        problem: &'a HeightProblem<'a>,
        bp: &BifurcationPoint,
        opts: ContinuationOptions,
        monitors: Monitors,
    ) -> Result<Self, ContinuationError> {
        let s0 = opts.direction.signum() * opts.s0.unwrap_or(1e-2 * bp.laminar.d).abs();
        let lam = HeightField::from_laminar(problem.grid, &bp.laminar)?;
        let (field, _, _) = initial_tangent(problem, bp, s0, &opts.newton)?;
        let res = problem.residual(&field)?.norm_inf();
        let first = BranchPoint {
            s: product_distance(&field, &lam),
            diagnostics: diagnostics(problem, &field),
            monitor: alternative_monitor(problem, &field, &monitors),
            newton_iterations: 0,
            residual: res,
            constraint_residual: 0.0,
            ds: 0.0,
            field,
        };
        let stop = first.monitor.stop.unwrap_or(StopReason::StepBudget);
        let branch = Branch { lambda_star: bp.lambda_star, monitors, points: vec![first], stop_reason: stop };
        Ok(Self { problem, opts, monitors, prev: lam, branch, ds: opts.ds, easy_streak: 0 })
    }

    pub fn stopped(&self) -> bool {
        self.branch.points.last().is_some_and(|p| p.monitor.stop.is_some())
    }

    /// One secant-predictor, pseudo-arclength-corrector step with step-size
    /// control. Returns the monitor stop, if any.
    pub fn step(&mut self) -> Result<Option<StopReason>, ContinuationError> {
        let cur = self.branch.points.last().expect("branch has a first point").field.clone();
        let grid = cur.grid;
        let dx: Vec<f64> = cur.unknowns().iter().zip(self.prev.unknowns()).map(|(a, b)| a - b).collect();
        let dq = cur.q - self.prev.q;
        let gdx = gram_apply(&grid, &dx);
        let nrm = (dot(&dx, &gdx) + dq * dq).sqrt();
        let t: Vec<f64> = dx.iter().map(|v| v / nrm).collect();
        let tq = dq / nrm;
        let row: Vec<f64> = gdx.iter().map(|v| v / nrm).collect();
        let border = Border { row, q_coef: tq };
        loop {
            let ds = self.ds;
            let mut pred = cur.clone();
            let x: Vec<f64> = cur.unknowns().iter().zip(&t).map(|(a, b)| a + ds * b).collect();
            pred.set_unknowns(&x);
            pred.q = cur.q + ds * tq;
            let rhs = dot(&border.row, &x) + tq * pred.q;
            let mode = NewtonMode::Bordered { border: border.clone(), rhs };
            match newton_solve(self.problem, &pred, &mode, &self.opts.newton) {
                Ok(rep) => {
                    let cres = dot(&border.row, &rep.field.unknowns()) + tq * rep.field.q - rhs;
                    let s = self.branch.points.last().map(|p| p.s).unwrap_or(0.0) + product_distance(&rep.field, &cur);
                    let point = BranchPoint {
                        s,
                        diagnostics: diagnostics(self.problem, &rep.field),
                        monitor: alternative_monitor(self.problem, &rep.field, &self.monitors),
                        newton_iterations: rep.iterations,
                        residual: rep.residual,
                        constraint_residual: cres.abs(),
                        ds,
                        field: rep.field,
                    };
                    if rep.iterations <= self.opts.easy_iterations {
                        self.easy_streak += 1;
                        if self.easy_streak >= 2 {
                            self.ds = (1.3 * self.ds).min(self.opts.ds_max);
                            self.easy_streak = 0;
                        }
                    } else {
                        self.easy_streak = 0;
                    }
                    let stop = point.monitor.stop;
                    self.prev = cur;
                    self.branch.points.push(point);
                    return Ok(stop);
                }
                Err(e) => {
                    self.easy_streak = 0;
                    self.ds *= 0.5;
                    if self.ds < self.opts.ds_min {
                        return Err(ContinuationError::StepFailure { ds: self.ds, source: e });
                    }
                }
            }
        }
    }

    /// Steps until the budget is spent or a monitor stops the branch. A step
    /// failure ends the branch with [`StopReason::StepFailure`].
    pub fn run(mut self) -> (Branch, Option<ContinuationError>) {
        if let Some(r) = self.branch.points[0].monitor.stop {
            self.branch.stop_reason = r;
            return (self.branch, None);
        }
        for _ in 0..self.opts.steps {
            match self.step() {
                Ok(Some(r)) => {
                    self.branch.stop_reason = r;
                    return (self.branch, None);
                }
                Ok(None) => {}
                Err(e) => {
                    self.branch.stop_reason = StopReason::StepFailure;
                    return (self.branch, Some(e));
                }
            }
        }
        self.branch.stop_reason = StopReason::StepBudget;
        (self.branch, None)
    }
}

/// Continues the branch bifurcating at `bp` on `grid`.
pub fn continue_branch(
    problem: &HeightProblem,
    bp: &BifurcationPoint,
    opts: ContinuationOptions,
) -> Result<(Branch, Option<ContinuationError>), ContinuationError> {
    let monitors = Monitors::for_bifurcation(bp);
    let c = Continuation::start(problem, bp, opts, monitors)?;
    Ok(c.run())
}
