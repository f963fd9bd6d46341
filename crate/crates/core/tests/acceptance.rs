//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! `cargo test --release --test acceptance` runs it on its own; the 128² branch
//! in criterion 8 dominates the runtime.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strataflow::continuation::{
    alternative_monitor, continue_branch, nodal_check, ContinuationOptions, Monitors, StopReason,
};
use strataflow::heightpde::{Grid, HeightField, HeightProblem};
use strataflow::laminar::{
    admissible_left, find_lambda0, g_dot, solve_laminar, sweep, Admissibility, LaminarOptions,
};
use strataflow::profiles::{poly_bundle, ProfileBundle};
use strataflow::reconstruct::{euler_residual, to_physical};
use strataflow::sturm::{check_lb_condition, find_lambda_star, SturmOptions};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn dispersion_root(g: f64, rho0: f64, p0: f64) -> f64 {
    let f = |l: f64| l - g * rho0 * (p0.abs() / l.sqrt()).tanh();
    let (mut lo, mut hi) = (1e-12, g * rho0 + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// (g, ρ0, p0, β) for the constant-density regression bundles
const REGRESSION: [(f64, f64, f64, f64); 4] = [(1.0, 1.0, -1.0, 0.0), (100.0, 1.0, -1.0, 0.0), (1.0, 2.0, -0.5, 0.0), (1.0, 1.0, -1.0, 0.5)];

fn regression_bundles() -> Vec<ProfileBundle> {
    REGRESSION.iter().map(|&(g, rho0, p0, beta)| poly_bundle(g, 1.0, p0, &[rho0], &[beta]).unwrap()).collect()
}

fn stratified_bundles() -> Vec<(&'static str, ProfileBundle)> {
    [
        ("linear 0.05", vec![1.0, -0.05]),
        ("linear 0.2", vec![1.0, -0.2]),
        ("linear 0.5", vec![1.0, -0.5]),
        ("quadratic 0.2", vec![1.0, -0.1, 0.05]),
        ("quadratic 0.5", vec![1.0, -0.5, -0.1]),
    ]
    .into_iter()
    .map(|(name, rho)| (name, poly_bundle(1.0, 1.0, -1.0, &rho, &[0.0]).unwrap()))
    .collect()
}

fn geometric(left: f64, scale: f64, n: usize) -> Vec<f64> {
    let (a, z) = (1e-3 * scale, 50.0 * scale);
    (0..n).map(|k| left + a * (z / a).powf(k as f64 / (n - 1) as f64)).collect()
}

fn closed_form() -> Outcome {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let mut worst = 0.0f64;
    for lambda in [1.0f64, 4.0] {
        let fl = solve_laminar(&b, lambda, &LaminarOptions::default()).map_err(|e| e.to_string())?;
        let sl = lambda.sqrt();
        for (p, h) in fl.p.iter().zip(&fl.h) {
            worst = worst.max((h - (p + 1.0) / sl).abs());
        }
        worst = worst.max((fl.d - 1.0 / sl).abs()).max((fl.q - (lambda + 2.0 / sl)).abs());
    }
    ensure!(worst <= 1e-10, "max error {worst:.2e}");
    Ok(format!("max error {worst:.2e}"))
}

fn dispersion() -> Outcome {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let exact = dispersion_root(1.0, 1.0, -1.0);
    let mut errs = Vec::new();
    for np in [128, 256, 512] {
        let bp = find_lambda_star(&b, &SturmOptions::default().with_np(np)).map_err(|e| e.to_string())?;
        errs.push((bp.lambda_star - exact).abs() / exact);
    }
    ensure!(errs[2] <= 1e-6, "relative error {:.2e} at Np=512", errs[2]);
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    ensure!(ratios.iter().all(|r| (3.5..4.5).contains(r)), "ratios {ratios:?}");
    Ok(format!("rel error {:.2e} at Np=512, ratios {:.3} {:.3}", errs[2], ratios[0], ratios[1]))
}

fn gdot_bound() -> Outcome {
    let opts = LaminarOptions::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (name, b) in stratified_bundles() {
        let left = admissible_left(&b, opts.admissibility);
        let scale = 1.0 - 2.0 * b.b_min() + b.epsilon0();
        for lambda in geometric(left, scale, 32) {
            let d = g_dot(&b, lambda, &opts).map_err(|e| format!("{name} at λ={lambda}: {e}"))?;
            for v in &d.gdot {
                lo = lo.min(*v);
                hi = hi.max(*v);
                ensure!(*v >= -0.5 - 1e-8 && *v <= 1e-8, "{name} at λ={lambda}: Ġ = {v}");
            }
        }
    }
    Ok(format!("Ġ in [{lo:.4}, {hi:.2e}] over 5 bundles × 32 λ"))
}

// Minimizer of Q by successively narrower 64-point sweeps, finished with a
// parabola through the best three samples.
fn sweep_minimizer(b: &ProfileBundle, opts: &LaminarOptions, mut a: f64, mut z: f64) -> Result<f64, String> {
    let left = a;
    for _ in 0..12 {
        let lam: Vec<f64> = (0..64).map(|k| a + (z - a) * k as f64 / 63.0).collect();
        let qs: Vec<f64> = sweep(b, &lam, opts).into_iter().map(|r| r.map(|v| v.1)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let k = (0..64).min_by(|&i, &j| qs[i].total_cmp(&qs[j])).unwrap();
        if k == 0 && a == left {
            return Ok(left);
        }
        let k = k.clamp(1, 62);
        let h = lam[1] - lam[0];
        if h < 1e-6 * lam[k].abs().max(1.0) {
            let (y0, y1, y2) = (qs[k - 1], qs[k], qs[k + 1]);
            return Ok(lam[k] + 0.5 * h * (y0 - y2) / (y0 - 2.0 * y1 + y2));
        }
        a = (lam[k] - 2.0 * h).max(left);
        z = lam[k] + 2.0 * h;
    }
    Err("sweep did not narrow".into())
}

fn convexity() -> Outcome {
    let opts = LaminarOptions::default().with_admissibility(Admissibility::Relaxed);
    let mut bundles = regression_bundles();
    bundles.extend(stratified_bundles().into_iter().map(|(_, b)| b));
    let mut worst_dev = 0.0f64;
    let mut worst_conv = f64::INFINITY;
    for b in &bundles {
        let left = admissible_left(b, opts.admissibility);
        let scale = 1.0 - 2.0 * b.b_min();
        let top = left + 50.0 * scale.max(b.g() * b.rho0());
        let lam: Vec<f64> = (0..64).map(|k| left + (top - left) * k as f64 / 63.0).collect();
        let qs: Vec<f64> = sweep(b, &lam, &opts).into_iter().map(|r| r.map(|v| v.1)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        for k in 1..63 {
            let d2 = qs[k - 1] - 2.0 * qs[k] + qs[k + 1];
            worst_conv = worst_conv.min(d2 / qs[k].abs());
            ensure!(d2 >= -1e-8 * qs[k].abs(), "second difference {d2:.3e} at λ={}", lam[k]);
        }
        let l0 = find_lambda0(b, top, &opts).map_err(|e| e.to_string())?;
        let sw = sweep_minimizer(b, &opts, left, top)?;
        let dev = (l0.lambda0 - sw).abs() / sw.abs().max(1.0);
        worst_dev = worst_dev.max(dev);
        ensure!(dev <= 1e-6, "λ0 {} vs sweep {sw}", l0.lambda0);
    }
    Ok(format!("min Δ²Q/|Q| {worst_conv:.2e}, λ0 deviation {worst_dev:.2e} on {} bundles", bundles.len()))
}

fn monotone_mu() -> Outcome {
    let mut worst_gap = f64::INFINITY;
    for b in regression_bundles() {
        let opts = SturmOptions::default();
        let lb = check_lb_condition(&b, &opts);
        ensure!(lb.holds, "(L-B) fails on a regression bundle");
        let pts: Vec<(f64, f64)> = lb.lambdas.iter().zip(&lb.mus).filter_map(|(l, m)| m.map(|m| (*l, m))).collect();
        for j in 0..pts.len() {
            if pts[j].1 >= 0.0 {
                continue;
            }
            for i in 0..j {
                worst_gap = worst_gap.min(pts[j].1 - pts[i].1);
                ensure!(pts[i].1 < pts[j].1, "μ({}) = {} ≥ μ({}) = {}", pts[i].0, pts[i].1, pts[j].0, pts[j].1);
            }
        }
        let changes = pts.windows(2).filter(|w| (w[0].1 + 1.0).signum() != (w[1].1 + 1.0).signum()).count();
        ensure!(changes == 1, "{changes} sign changes of μ+1");
        let bp = find_lambda_star(&b, &opts).map_err(|e| e.to_string())?;
        ensure!(bp.crossings == 1, "crossings {}", bp.crossings);
        let l0 = find_lambda0(&b, 100.0 * (1.0 + b.g() * b.rho0()), &opts.laminar()).map_err(|e| e.to_string())?;
        ensure!(bp.lambda_star < l0.lambda0, "λ* {} ≥ λ0 {}", bp.lambda_star, l0.lambda0);
    }
    Ok(format!("4 bundles, smallest increment {worst_gap:.2e}"))
}

// Seeds for the randomized sufficiency family; each seeds one bundle.
const SEEDS: [u64; 20] = [
    3, 17, 29, 41, 58, 73, 97, 101, 137, 149, 163, 181, 199, 211, 227, 239, 251, 263, 277, 293,
];

fn random_bundle(seed: u64) -> ProfileBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rng.gen_range(0.2..5.0);
    let p0 = -rng.gen_range(0.3..2.0);
    let rho0 = rng.gen_range(0.5..2.0);
    let rho = match rng.gen_range(0..3) {
        0 => vec![rho0],
        1 => vec![rho0, -rng.gen_range(0.0..0.05)],
        _ => {
            let a: f64 = -rng.gen_range(0.0..0.03);
            vec![rho0, a, rng.gen_range(0.0..0.01)]
        }
    };
    let beta = if rng.gen_bool(0.5) { vec![rng.gen_range(-0.3..0.3)] } else { vec![0.0] };
    poly_bundle(g, 1.0, p0, &rho, &beta).unwrap()
}

fn sufficiency() -> Outcome {
    let opts = SturmOptions::default().with_np(128);
    let mut with_size = 0;
    for seed in SEEDS {
        let b = random_bundle(seed);
        if b.check_size_condition().holds {
            with_size += 1;
            ensure!(check_lb_condition(&b, &opts).holds, "seed {seed}: size condition holds, (L-B) fails");
        }
    }
    ensure!(with_size > 0, "no bundle satisfies the size condition");
    Ok(format!("{with_size}/20 bundles satisfy the size condition, all pass (L-B)"))
}

fn fd_error(pb: &HeightProblem, f: &HeightField, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let sys = pb.jacobian(f).map_err(|e| e.to_string())?;
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dir: Vec<f64> = (0..sys.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dq: f64 = rng.gen_range(-1.0..1.0);
        let shift = |s: f64| {
            let mut g = f.clone();
            let x: Vec<f64> = f.unknowns().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            g.set_unknowns(&x);
            g.q += s * dq;
            pb.residual(&g).map(|r| r.values).map_err(|e| e.to_string())
        };
        let (up, dn) = (shift(eps)?, shift(-eps)?);
        let jv = sys.matvec(&dir);
        for k in 0..sys.n() {
            let an = jv[k] + sys.dq[k] * dq;
            worst = worst.max(((up[k] - dn[k]) / (2.0 * eps) - an).abs() / (1.0 + an.abs()));
        }
    }
    Ok(worst)
}

fn jacobian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 24;
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.3], &[0.1]).unwrap();
    let opts = SturmOptions::default().with_np(n).with_admissibility(Admissibility::Relaxed);
    let bp = find_lambda_star(&b, &opts).map_err(|e| e.to_string())?;
    let pb = HeightProblem::new(&b, Grid::new(n, n, -1.0).unwrap());
    let lam = HeightField::from_laminar(pb.grid, &bp.laminar).map_err(|e| e.to_string())?;
    let (br, err) = continue_branch(&pb, &bp, ContinuationOptions::new(0.05 * bp.laminar.d, 6)).map_err(|e| e.to_string())?;
    ensure!(err.is_none(), "branch failed: {err:?}");
    let wave = &br.points.last().unwrap().field;
    ensure!(wave.max_abs_hq() > 1e-3, "branch point has no amplitude");
    let e_lam = fd_error(&pb, &lam, &mut rng)?;
    let e_wave = fd_error(&pb, wave, &mut rng)?;
    ensure!(e_lam <= 1e-6 && e_wave <= 1e-6, "directional errors {e_lam:.2e} {e_wave:.2e}");

    let sys = pb.jacobian(wave).map_err(|e| e.to_string())?;
    ensure!(sys.u.iter().any(|v| *v != 0.0), "rank-one part is zero");
    let m = sys.n();
    let a = DMatrix::from_fn(m, m, |r, c| sys.band.get(r, c) + sys.u[r] * sys.w[c]);
    let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xd = a.lu().solve(&DVector::from_vec(rhs.clone())).ok_or("dense LU singular")?;
    let x = sys.factor().map_err(|e| e.to_string())?.solve(&rhs);
    let err = (0..m).map(|k| (x[k] - xd[k]).abs()).fold(0.0, f64::max) / xd.amax().max(1.0);
    ensure!(err <= 1e-10, "Sherman–Morrison vs dense {err:.2e}");
    Ok(format!("directional {e_lam:.2e} (laminar) {e_wave:.2e} (wave), solve {err:.2e}"))
}

fn branch_equivalence() -> Outcome {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let run = |n: usize| -> Result<Vec<f64>, String> {
        let bp = find_lambda_star(&b, &SturmOptions::default().with_np(n)).map_err(|e| e.to_string())?;
        let pb = HeightProblem::new(&b, Grid::new(n, n, -1.0).unwrap());
        let (br, err) = continue_branch(&pb, &bp, ContinuationOptions::new(0.02 * bp.laminar.d, 25)).map_err(|e| e.to_string())?;
        ensure!(err.is_none() && br.stop_reason == StopReason::StepBudget, "n={n}: {:?} {err:?}", br.stop_reason);
        let mut res = Vec::new();
        for p in &br.points {
            ensure!(p.residual <= 1e-10 * p.field.scale(), "n={n} s={}: residual {:.2e}", p.s, p.residual);
            ensure!(nodal_check(&p.field).all_ok(), "n={n} s={}: nodal check", p.s);
            let pf = to_physical(&p.field, &b).map_err(|e| e.to_string())?;
            ensure!(pf.mean_eta().abs() <= 1e-10, "n={n} s={}: mean η {:.2e}", p.s, pf.mean_eta());
            res.push(euler_residual(&pf).max_residual());
        }
        Ok(res)
    };
    let t = Instant::now();
    let coarse = run(64)?;
    let t64 = t.elapsed();
    let fine = run(128)?;
    ensure!(coarse.len() == fine.len(), "branch lengths differ");
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    // the first point is laminar, where both residuals vanish to round-off
    for (k, (c, f)) in coarse.iter().zip(&fine).enumerate().skip(1) {
        let r = c / f;
        lo = lo.min(r);
        hi = hi.max(r);
        ensure!((3.5..=4.5).contains(&r), "point {k}: ratio {r:.3} ({c:.3e} vs {f:.3e})");
    }
    Ok(format!("26 points, ratio in [{lo:.3}, {hi:.3}], 64² branch {:.1} s", t64.as_secs_f64()))
}

fn transversality() -> Outcome {
    let mut worst = 0.0f64;
    for b in regression_bundles() {
        let bp = find_lambda_star(&b, &SturmOptions::default()).map_err(|e| e.to_string())?;
        ensure!(bp.xi < 0.0 && bp.accurate.xi < 0.0, "Ξ = {} / {}", bp.xi, bp.accurate.xi);
        worst = worst.max(bp.accurate.identity_gap());
        ensure!(bp.accurate.identity_gap() <= 1e-8, "identity gap {:.2e}", bp.accurate.identity_gap());
    }
    Ok(format!("Ξ < 0 on 4 bundles, identity gap ≤ {worst:.2e}"))
}

fn piecewise(grid: Grid, q: f64, slopes: &[f64]) -> HeightField {
    let mut col = vec![0.0; grid.np];
    for j in 1..grid.np {
        col[j] = col[j - 1] + slopes[j - 1] * grid.hp();
    }
    let mut h = vec![0.0; grid.n_nodes()];
    for i in 0..grid.nq {
        for j in 0..grid.np {
            h[grid.node(i, j)] = col[j];
        }
    }
    HeightField { grid, h, q }
}

fn monitors() -> Outcome {
    let n = 32;
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let bp = find_lambda_star(&b, &SturmOptions::default().with_np(n)).map_err(|e| e.to_string())?;
    let grid = Grid::new(n, n, -1.0).unwrap();
    let pb = HeightProblem::new(&b, grid);
    let mon = Monitors::for_bifurcation(&bp);
    let lam = HeightField::from_laminar(grid, &bp.laminar).unwrap();
    let flat = vec![1.0 / bp.lambda_star.sqrt(); n - 1];
    let g2 = 2.0 * b.g() * b.rho0();

    let mut cases = Vec::new();
    let mut s = flat.clone();
    s[10..14].iter_mut().for_each(|v| *v = 0.5 * mon.delta);
    cases.push(("streamlines touching", piecewise(grid, bp.q_star, &s), StopReason::BoundaryOfODelta));
    let mut touching = lam.clone();
    touching.q = g2 * bp.laminar.d;
    cases.push(("surface at Q/2gρ0", touching, StopReason::BoundaryOfODelta));
    let other = solve_laminar(&b, 1.5 * bp.lambda_star, &LaminarOptions::default().with_np(n)).map_err(|e| e.to_string())?;
    cases.push(("other laminar flow", HeightField::from_laminar(grid, &other).unwrap(), StopReason::LaminarReturn));
    let mut big = lam.clone();
    big.q = 2.0 * mon.q_max;
    cases.push(("Q past bound", big, StopReason::UnboundedQ));
    let mut s = flat.clone();
    s[12..14].iter_mut().for_each(|v| *v = 2.0 * mon.hp_max);
    let mut f = piecewise(grid, 0.0, &s);
    f.q = g2 * f.at(0, n - 1) + 1.0;
    cases.push(("h_p blowing up", f, StopReason::Stagnation));
    let mut s = flat;
    s[10..14].iter_mut().for_each(|v| *v = 5.0 * mon.delta);
    cases.push(("h_p small above δ", piecewise(grid, bp.q_star, &s), StopReason::LeftwardBlowup));

    let reference = alternative_monitor(&pb, &lam, &mon);
    ensure!(reference.stop.is_none() && reference.flags.count() == 0, "laminar reference flagged: {reference:?}");
    for (name, field, want) in &cases {
        let st = alternative_monitor(&pb, field, &mon);
        ensure!(st.stop == Some(*want) && st.flags.count() == 1, "{name}: {st:?}");
    }
    Ok(format!("{} synthetic fields, each flags exactly its alternative", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("constant-density laminar closed form", closed_form),
        ("dispersion oracle and O(Np⁻²) convergence", dispersion),
        ("Ġ bound on stratified bundles", gdot_bound),
        ("convexity of Q and λ0", convexity),
        ("μ monotone, unique crossing, λ* < λ0", monotone_mu),
        ("size condition implies (L-B)", sufficiency),
        ("Jacobian exactness and Sherman–Morrison", jacobian),
        ("branch and Euler equivalence", branch_equivalence),
        ("transversality and identity", transversality),
        ("monitor correctness", monitors),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(detail) => println!("criterion {:2} PASS  {name}: {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
