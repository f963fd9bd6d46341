//! Pipeline stages. Each writes its artifacts under the output directory and
//! returns a JSON summary, which `main` also prints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use strataflow::continuation::{Continuation, ContinuationOptions, Monitors, StopReason};
use strataflow::heightpde::{Grid, HeightProblem, NewtonOptions};
use strataflow::io::{read_snapshot, write_snapshot};
use strataflow::laminar::{g_dot_for, solve_laminar};
use strataflow::profiles::{epsilon0_terms, ProfileBundle};
use strataflow::reconstruct::{euler_residual, stream_consistency, to_physical, write_field_csv, write_surface_csv, write_vtk, StreamCheck, VerificationReport};
use strataflow::sturm::{check_lb_condition, find_lambda_star, BifurcationPoint, SturmOptions};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(String),
    #[error("{stage}: {msg}")]
    Solver { stage: &'static str, msg: String },
    #[error("{path}: {msg}")]
    Output { path: PathBuf, msg: String },
}

impl CliError {
    /// 2 for bad configuration or input files, 3 when a computation fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Solver { .. } | CliError::Output { .. } => 3,
        }
    }

    fn solver(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Solver { stage, msg: e.to_string() }
    }
}

/// A loaded configuration with the directory its table paths are relative to.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Context {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let config = RunConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(config, base))
    }

    /// Output paths are relative to the config directory unless absolute.
    pub fn new(config: RunConfig, base: PathBuf) -> Self {
        let out = base.join(&config.output);
        Self { config, base, out }
    }

    pub fn bundle(&self) -> Result<ProfileBundle, CliError> {
        Ok(self.config.bundle(&self.base)?)
    }

    fn sturm(&self) -> SturmOptions {
        SturmOptions::default().with_np(self.config.np).with_admissibility(self.config.admissibility)
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions { max_iter: self.config.max_iter, tol: self.config.tol, step_tol: self.config.step_tol }
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Output { path: self.out.clone(), msg: e.to_string() })?;
        Ok(self.out.join(name))
    }
}

/// Number of worker threads: STRATAFLOW_THREADS, then the config knob, then
/// the rayon default.
pub fn thread_count(config: &RunConfig) -> Result<Option<usize>, CliError> {
    match std::env::var("STRATAFLOW_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(ConfigError::Invalid { key: "STRATAFLOW_THREADS", msg: format!("expected a positive integer, found {v:?}") })),
        },
        Err(_) => Ok(config.threads),
    }
}

/// Runs `f` on a pool sized by [`thread_count`].
pub fn with_threads<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(config)? {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::solver("threads", e))?;
    Ok(pool.install(f))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Output { path: path.into(), msg: e.to_string() })?;
    fs::write(path, text + "\n").map_err(|e| CliError::Output { path: path.into(), msg: e.to_string() })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Output { path: path.into(), msg: e.to_string() })
}

fn out_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output { path: path.into(), msg: e.to_string() }
}

/// ε0, the size condition and the (L-B) sweep.
pub fn check(ctx: &Context) -> Result<Value, CliError> {
    let b = ctx.bundle()?;
    let size = b.check_size_condition();
    let lb = check_lb_condition(&b, &ctx.sturm());
    let eps_terms = if b.is_constant_density() { None } else { Some(epsilon0_terms(b.g(), b.p0(), b.rho0(), b.rho_prime_max())) };
    let v = json!({
        "epsilon0": b.epsilon0(),
        "epsilon0_terms": eps_terms,
        "rho_prime_max": b.rho_prime_max(),
        "b_min": b.b_min(),
        "lambda_lower": b.lambda_lower(),
        "size_condition": size,
        "lb": lb,
    });
    write_json(&ctx.path("check.json")?, &v)?;
    Ok(v)
}

/// One laminar flow: CSV p,H,H_p,F,G,Gdot and JSON {lambda, d, Q, Qdot}.
pub fn laminar(ctx: &Context, lambda: Option<f64>) -> Result<Value, CliError> {
    let b = ctx.bundle()?;
    let lambda = lambda
        .or(ctx.config.lambda)
        .ok_or_else(|| CliError::Config(ConfigError::Invalid { key: "lambda", msg: "needed by `laminar` (config key or --lambda)".into() }))?;
    let opts = ctx.sturm().laminar();
    let flow = solve_laminar(&b, lambda, &opts).map_err(|e| CliError::solver("laminar", e))?;
    let diag = g_dot_for(&b, &flow, &opts).map_err(|e| CliError::solver("laminar", e))?;
    let path = ctx.path("laminar.csv")?;
    let mut wr = csv_writer(&path)?;
    wr.write_record(["p", "H", "H_p", "F", "G", "Gdot"]).map_err(out_err(&path))?;
    for j in 0..flow.np() {
        wr.serialize((flow.p[j], flow.h[j], flow.h_p[j], flow.f[j], flow.g[j], diag.gdot[j])).map_err(out_err(&path))?;
    }
    wr.flush().map_err(|e| CliError::Output { path: path.clone(), msg: e.to_string() })?;
    let v = json!({ "lambda": flow.lambda, "d": flow.d, "Q": flow.q, "Qdot": diag.qdot });
    write_json(&ctx.path("laminar.json")?, &v)?;
    Ok(v)
}

fn bifurcation_point(ctx: &Context, b: &ProfileBundle) -> Result<BifurcationPoint, CliError> {
    find_lambda_star(b, &ctx.sturm()).map_err(|e| CliError::solver("bifurcate", e))
}

fn write_bifurcation(ctx: &Context, bp: &BifurcationPoint) -> Result<Value, CliError> {
    let mu_path = ctx.path("mu_curve.csv")?;
    let mut wr = csv_writer(&mu_path)?;
    wr.write_record(["lambda", "mu"]).map_err(out_err(&mu_path))?;
    for (l, m) in bp.sweep.lambdas.iter().zip(&bp.sweep.mus) {
        wr.serialize((l, m)).map_err(out_err(&mu_path))?;
    }
    wr.flush().map_err(|e| CliError::Output { path: mu_path.clone(), msg: e.to_string() })?;

    let m_path = ctx.path("eigenfunction.csv")?;
    let mut wr = csv_writer(&m_path)?;
    wr.write_record(["p", "M"]).map_err(out_err(&m_path))?;
    for (p, m) in bp.eigen.p.iter().zip(&bp.eigen.m) {
        wr.serialize((p, m)).map_err(out_err(&m_path))?;
    }
    wr.flush().map_err(|e| CliError::Output { path: m_path.clone(), msg: e.to_string() })?;

    let v = json!({
        "lambda_star": bp.lambda_star,
        "lambda_star_accurate": bp.accurate.lambda_star,
        "Q_star": bp.q_star,
        "lambda0": bp.lambda0.map(|l| l.lambda0),
        "below_lambda0": bp.below_lambda0,
        "crossings": bp.crossings,
        "mu_curve_csv": "mu_curve.csv",
        "eigenfunction_csv": "eigenfunction.csv",
        "xi": bp.xi,
        "xi_accurate": bp.accurate.xi,
        "identity_gap": bp.accurate.identity_gap(),
        "d_star": bp.laminar.d,
    });
    write_json(&ctx.path("bifurcation.json")?, &v)?;
    Ok(v)
}

/// λ*, the μ(λ) sweep and the eigenfunction.
pub fn bifurcate(ctx: &Context) -> Result<Value, CliError> {
    let b = ctx.bundle()?;
    let bp = bifurcation_point(ctx, &b)?;
    write_bifurcation(ctx, &bp)
}

/// Outcome of a continuation run as written to disk.
#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub lambda_star: f64,
    pub stop_reason: Option<String>,
    pub points: usize,
    pub snapshots: Vec<String>,
    pub error: Option<String>,
}

fn run_branch(ctx: &Context, b: &ProfileBundle, bp: &BifurcationPoint, steps: usize) -> Result<BranchSummary, CliError> {
    let cfg = &ctx.config;
    let log_path = ctx.path("branch.csv")?;
    let mut log = csv_writer(&log_path)?;
    log.write_record(["s", "Q", "amplitude", "d", "max_hp", "min_hp", "nodal_ok", "stop_reason"]).map_err(out_err(&log_path))?;
    let mut summary = BranchSummary { lambda_star: bp.lambda_star, stop_reason: None, points: 0, snapshots: Vec::new(), error: None };
    if steps > 0 {
        let grid = Grid::new(cfg.nq, cfg.np, cfg.p0).map_err(|e| CliError::Config(ConfigError::Invalid { key: "nq/np", msg: e.to_string() }))?;
        let problem = HeightProblem::new(b, grid);
        let mut opts = ContinuationOptions::new(cfg.ds.unwrap_or(0.02 * bp.laminar.d), steps);
        opts.direction = cfg.direction;
        opts.s0 = cfg.s0;
        opts.newton = ctx.newton();
        let mut mon = Monitors::for_bifurcation(bp);
        if let Some(d) = cfg.delta {
            mon.delta = d;
        }
        let start = Continuation::start(&problem, bp, opts, mon).map_err(|e| CliError::solver("continue", e))?;
        let (branch, err) = start.run();
        let snap_dir = ctx.path("snapshots")?;
        fs::create_dir_all(&snap_dir).map_err(|e| CliError::Output { path: snap_dir.clone(), msg: e.to_string() })?;
        let last = branch.points.len() - 1;
        for (k, p) in branch.points.iter().enumerate() {
            let stop = if k == last { branch.stop_reason.as_str() } else { "" };
            let d = &p.diagnostics;
            log.serialize((p.s, p.field.q, d.amplitude, d.d, d.max_hp, d.min_hp, d.nodal_ok, stop)).map_err(out_err(&log_path))?;
            let name = format!("snapshots/point_{k:04}.csv");
            write_snapshot(&p.field, &ctx.out.join(&name)).map_err(|e| CliError::Output { path: ctx.out.join(&name), msg: e.to_string() })?;
            summary.snapshots.push(name);
        }
        summary.points = branch.points.len();
        summary.stop_reason = Some(branch.stop_reason.as_str().to_string());
        summary.error = err.as_ref().map(|e| e.to_string());
        if branch.stop_reason == StopReason::StepFailure {
            log.flush().map_err(|e| CliError::Output { path: log_path.clone(), msg: e.to_string() })?;
            write_json(&ctx.path("branch.json")?, &summary)?;
            return Err(CliError::solver("continue", err.map(|e| e.to_string()).unwrap_or_else(|| "step failure".into())));
        }
    }
    log.flush().map_err(|e| CliError::Output { path: log_path.clone(), msg: e.to_string() })?;
    write_json(&ctx.path("branch.json")?, &summary)?;
    Ok(summary)
}

/// Bifurcation point, then the branch: branch.csv, branch.json, snapshots.
pub fn continue_cmd(ctx: &Context, steps: Option<usize>) -> Result<Value, CliError> {
    let b = ctx.bundle()?;
    let bp = bifurcation_point(ctx, &b)?;
    let s = run_branch(ctx, &b, &bp, steps.unwrap_or(ctx.config.steps))?;
    Ok(serde_json::to_value(s).expect("summary serializes"))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VerifyOutput {
    #[serde(flatten)]
    pub report: VerificationReport,
    pub stream: StreamCheck,
}

fn verify_field(b: &ProfileBundle, snapshot: &Path) -> Result<(VerifyOutput, strataflow::reconstruct::PhysicalField), CliError> {
    let field = read_snapshot(snapshot).map_err(|e| CliError::Input(e.to_string()))?;
    if field.grid.p0 != b.p0() {
        return Err(CliError::Input(format!("snapshot p0 = {} but config p0 = {}", field.grid.p0, b.p0())));
    }
    let pf = to_physical(&field, b).map_err(|e| match e {
        strataflow::reconstruct::ReconstructError::InvalidField(m) => CliError::Input(format!("InvalidField: {m}")),
        other => CliError::solver("verify", other),
    })?;
    let stream = stream_consistency(&field).map_err(|e| CliError::solver("verify", e))?;
    Ok((VerifyOutput { report: euler_residual(&pf), stream }, pf))
}

fn stem(snapshot: &Path) -> String {
    snapshot.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "snapshot".into())
}

/// Reconstructs a snapshot and writes `<stem>.verify.json`.
pub fn verify(ctx: &Context, snapshot: &Path) -> Result<VerifyOutput, CliError> {
    let b = ctx.bundle()?;
    let (out, _) = verify_field(&b, snapshot)?;
    write_json(&ctx.path(&format!("{}.verify.json", stem(snapshot)))?, &out)?;
    Ok(out)
}

/// Physical fields of a snapshot: `<stem>.field.csv`, `<stem>.surface.csv`,
/// `<stem>.vtk` and the verification report.
pub fn export(ctx: &Context, snapshot: &Path) -> Result<Value, CliError> {
    let b = ctx.bundle()?;
    let (out, pf) = verify_field(&b, snapshot)?;
    let s = stem(snapshot);
    let field_path = ctx.path(&format!("{s}.field.csv"))?;
    let f = fs::File::create(&field_path).map_err(|e| CliError::Output { path: field_path.clone(), msg: e.to_string() })?;
    write_field_csv(&pf, std::io::BufWriter::new(f)).map_err(out_err(&field_path))?;
    let surf_path = ctx.path(&format!("{s}.surface.csv"))?;
    let f = fs::File::create(&surf_path).map_err(|e| CliError::Output { path: surf_path.clone(), msg: e.to_string() })?;
    write_surface_csv(&pf, std::io::BufWriter::new(f)).map_err(out_err(&surf_path))?;
    let vtk_path = ctx.path(&format!("{s}.vtk"))?;
    let f = fs::File::create(&vtk_path).map_err(|e| CliError::Output { path: vtk_path.clone(), msg: e.to_string() })?;
    write_vtk(&pf, std::io::BufWriter::new(f)).map_err(|e| CliError::Output { path: vtk_path.clone(), msg: e.to_string() })?;
    write_json(&ctx.path(&format!("{s}.verify.json"))?, &out)?;
    Ok(json!({
        "field_csv": format!("{s}.field.csv"),
        "surface_csv": format!("{s}.surface.csv"),
        "vtk": format!("{s}.vtk"),
        "report": out,
    }))
}

/// check → bifurcate → continue → verify. Refuses to go past `check` when
/// (L-B) fails unless `force` is set.
pub fn run(ctx: &Context, steps: Option<usize>, force: bool) -> Result<Value, CliError> {
    let checked = check(ctx)?;
    let lb_holds = checked["lb"]["holds"].as_bool().unwrap_or(false);
    if !lb_holds && !force {
        return Err(CliError::solver("check", "(L-B) fails for this bundle; rerun with --force or admissibility = relaxed"));
    }
    let b = ctx.bundle()?;
    let bp = bifurcation_point(ctx, &b)?;
    let bif = write_bifurcation(ctx, &bp)?;
    let branch = run_branch(ctx, &b, &bp, steps.unwrap_or(ctx.config.steps))?;

    let vpath = ctx.path("verification.csv")?;
    let mut wr = csv_writer(&vpath)?;
    wr.write_record(["snapshot", "max_residual", "flux", "bernoulli", "yih", "psi_deviation", "mean_eta"]).map_err(out_err(&vpath))?;
    let mut worst = 0.0f64;
    for name in &branch.snapshots {
        let (v, _) = verify_field(&b, &ctx.out.join(name))?;
        worst = worst.max(v.report.max_residual());
        wr.serialize((name, v.report.max_residual(), v.report.flux, v.report.bernoulli, v.report.yih, v.stream.psi_deviation, v.report.mean_eta))
            .map_err(out_err(&vpath))?;
    }
    wr.flush().map_err(|e| CliError::Output { path: vpath.clone(), msg: e.to_string() })?;

    let v = json!({
        "lambda_star": bif["lambda_star"],
        "lambda_star_accurate": bif["lambda_star_accurate"],
        "Q_star": bif["Q_star"],
        "xi": bif["xi"],
        "lb_holds": lb_holds,
        "stop_reason": branch.stop_reason,
        "points": branch.points,
        "max_euler_residual": worst,
    });
    write_json(&ctx.path("summary.json")?, &v)?;
    Ok(v)
}
