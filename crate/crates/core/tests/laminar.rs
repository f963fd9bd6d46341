use strataflow::laminar::{
    depth_and_head, find_lambda0, g_dot, q_ddot_integral, solve_laminar, volterra_derivatives, Admissibility,
    LaminarError, LaminarOptions,
};
use strataflow::profiles::poly_bundle;

// Fixed-point iteration of Y(p) = −∫_p^0 (λ + 2F)^{-1/2},
// F(p) = B(p) + ∫_p^0 g Y ρ_p, on a uniform trapezoid grid.
fn picard_depth(lambda: f64, g: f64, p0: f64, rho_p: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = -p0 / (n - 1) as f64;
    let p: Vec<f64> = (0..n).map(|k| p0 + h * k as f64).collect();
    let mut y = vec![0.0; n];
    for _ in 0..200 {
        let mut f = vec![0.0; n];
        let mut acc = 0.0;
        for j in (0..n - 1).rev() {
            acc += 0.5 * h * (g * y[j] * rho_p(p[j]) + g * y[j + 1] * rho_p(p[j + 1]));
            f[j] = b(p[j]) + acc;
        }
        let mut next = vec![0.0; n];
        let mut acc = 0.0;
        for j in (0..n - 1).rev() {
            acc += 0.5 * h * ((lambda + 2.0 * f[j]).powf(-0.5) + (lambda + 2.0 * f[j + 1]).powf(-0.5));
            next[j] = -acc;
        }
        let change = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        y = next;
        if change < 1e-15 {
            break;
        }
    }
    -y[0]
}

#[test]
fn constant_density_matches_closed_form() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    for lambda in [1.0, 4.0] {
        let fl = solve_laminar(&b, lambda, &LaminarOptions::default()).unwrap();
        let sl = lambda.sqrt();
        assert!((fl.d - 1.0 / sl).abs() < 1e-10);
        assert!((fl.q - (lambda + 2.0 / sl)).abs() < 1e-10);
        for j in 0..fl.np() {
            assert!((fl.h[j] - (fl.p[j] + 1.0) / sl).abs() < 1e-10);
            assert!((fl.h_p[j] - 1.0 / sl).abs() < 1e-10);
            assert!(fl.g[j].abs() < 1e-12);
        }
        assert!(fl.endpoint_residual <= 1e-10);
    }
}

#[test]
fn stratified_depth_matches_picard_oracle() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.0]).unwrap();
    let (d, q) = depth_and_head(&b, 5.0, &LaminarOptions::default()).unwrap();
    let d_oracle = picard_depth(5.0, 1.0, -1.0, |_| -0.2, |_| 0.0, 10_001);
    assert!((d - d_oracle).abs() < 1e-8, "{d} vs {d_oracle}");
    assert!((q - (5.0 + 2.0 * d_oracle)).abs() < 1e-8);
}

#[test]
fn vorticity_depth_matches_picard_oracle() {
    // β(s) = 0.3 + 0.5 s: B(p) = 0.3 p − 0.25 p²
    let b = poly_bundle(2.0, 1.0, -0.8, &[1.3, -0.3, -0.1], &[0.3, 0.5]).unwrap();
    let lambda = b.lambda_lower() + 0.7;
    let (d, _) = depth_and_head(&b, lambda, &LaminarOptions::default()).unwrap();
    let d_oracle = picard_depth(lambda, 2.0, -0.8, |p| -0.3 - 0.2 * p, |p| 0.3 * p - 0.25 * p * p, 10_001);
    assert!((d - d_oracle).abs() < 1e-8, "{d} vs {d_oracle}");
}

#[test]
fn flow_invariants_hold() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.4]).unwrap();
    let lambda = b.lambda_lower() + 0.5;
    let fl = solve_laminar(&b, lambda, &LaminarOptions::default()).unwrap();
    let n = fl.np();
    assert_eq!(fl.y[n - 1], 0.0);
    assert_eq!(fl.h[0], 0.0);
    assert!((fl.y[0] + fl.d).abs() < 1e-15);
    assert!((fl.q - (lambda + 2.0 * b.g() * b.rho0() * fl.d)).abs() < 1e-14);
    assert!(fl.endpoint_residual <= 1e-10);
    for j in 0..n {
        assert!(fl.h_p[j] > 0.0);
        assert!(lambda + fl.g[j] >= lambda + 2.0 * b.b_min() - 1e-12);
        assert!((fl.h_p[j] - (lambda + fl.g[j]).powf(-0.5)).abs() < 1e-15);
    }
    // H is increasing and its grid slope agrees with H_p
    for j in 1..n - 1 {
        let fd = (fl.h[j + 1] - fl.h[j - 1]) / (2.0 * fl.hp_step());
        assert!((fd - fl.h_p[j]).abs() < 1e-4);
    }
}

#[test]
fn tolerance_halving_moves_depth_below_1e9() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.5, 0.1], &[0.2, -0.1]).unwrap();
    let lambda = b.lambda_lower() + 1.0;
    let o1 = LaminarOptions { rtol: 1e-11, ..LaminarOptions::default() };
    let o2 = LaminarOptions { rtol: 5e-12, ..LaminarOptions::default() };
    let d1 = depth_and_head(&b, lambda, &o1).unwrap().0;
    let d2 = depth_and_head(&b, lambda, &o2).unwrap().0;
    assert!(((d1 - d2) / d2).abs() < 1e-9);
}

#[test]
fn constant_density_derivatives() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let lambda = 2.0;
    let dg = g_dot(&b, lambda, &LaminarOptions::default().with_np(65)).unwrap();
    let fl = solve_laminar(&b, lambda, &LaminarOptions::default().with_np(65)).unwrap();
    for j in 0..65 {
        assert_eq!(dg.gdot[j], 0.0);
        assert!((dg.ydot[j] + fl.p[j] / (2.0 * lambda.powf(1.5))).abs() < 1e-14);
    }
    assert!((dg.qdot - (1.0 - lambda.powf(-1.5))).abs() < 1e-13);
    // Q = λ + 2λ^{-1/2}: Q'' = 1.5 λ^{-5/2}
    assert!((dg.qddot - 1.5 * lambda.powf(-2.5)).abs() < 1e-7);
}

#[test]
fn gdot_matches_finite_differences_of_g() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.0]).unwrap();
    let opts = LaminarOptions::default();
    let lambda = 5.0;
    let dg = g_dot(&b, lambda, &opts).unwrap();
    let h = 1e-5 * lambda;
    let up = solve_laminar(&b, lambda + h, &opts).unwrap();
    let dn = solve_laminar(&b, lambda - h, &opts).unwrap();
    for j in 0..dg.gdot.len() {
        let fd = (up.g[j] - dn.g[j]) / (2.0 * h);
        assert!((fd - dg.gdot[j]).abs() < 1e-5, "node {j}: {fd} vs {}", dg.gdot[j]);
        assert!(dg.gdot[j] <= 0.0 && dg.gdot[j] >= -0.5);
    }
    assert_eq!(dg.gdot[dg.gdot.len() - 1], 0.0);
    assert_eq!(dg.ydot[dg.ydot.len() - 1], 0.0);
}

#[test]
fn second_volterra_route_agrees_with_finite_differences() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.5], &[0.1]).unwrap();
    let opts = LaminarOptions::default().with_np(1025);
    let lambda = b.lambda_lower() + 0.3;
    let fl = solve_laminar(&b, lambda, &opts).unwrap();
    let dg = g_dot(&b, lambda, &opts).unwrap();
    let integral = q_ddot_integral(&b, &fl, &dg.gdot);
    assert!((integral - dg.qddot).abs() < 1e-5 * dg.qddot.abs().max(1.0), "{integral} vs {}", dg.qddot);
    let (_, _, qdot) = volterra_derivatives(&b, &fl);
    assert_eq!(qdot, dg.qdot);
}

#[test]
fn lambda0_constant_density() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let l0 = find_lambda0(&b, 50.0, &LaminarOptions::default()).unwrap();
    assert!(!l0.boundary_minimum);
    assert!((l0.lambda0 - 1.0).abs() < 1e-8);
    assert!((l0.q0 - 3.0).abs() < 1e-12);

    let b = poly_bundle(100.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let l0 = find_lambda0(&b, 50.0, &LaminarOptions::default()).unwrap();
    assert!((l0.lambda0 - 100f64.powf(2.0 / 3.0)).abs() < 1e-7 * 21.5);
}

#[test]
fn lambda0_matches_dense_sweep() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.0]).unwrap();
    let opts = LaminarOptions::default().with_admissibility(Admissibility::Relaxed);
    let l0 = find_lambda0(&b, 50.0, &opts).unwrap();
    // dense sweep around the answer, refined by a parabola through the best three
    let (a, z) = (0.8 * l0.lambda0, 1.2 * l0.lambda0);
    let n = 10_000;
    let lam: Vec<f64> = (0..n).map(|k| a + (z - a) * k as f64 / (n - 1) as f64).collect();
    let qs: Vec<f64> = lam.iter().map(|&l| depth_and_head(&b, l, &opts).unwrap().1).collect();
    let k = (1..n - 1).min_by(|&i, &j| qs[i].total_cmp(&qs[j])).unwrap();
    let (x0, x1, x2) = (lam[k - 1], lam[k], lam[k + 1]);
    let (y0, y1, y2) = (qs[k - 1], qs[k], qs[k + 1]);
    let hstep = x1 - x0;
    let vertex = x1 + 0.5 * hstep * (y0 - y2) / (y0 - 2.0 * y1 + y2);
    let _ = x2;
    assert!(((l0.lambda0 - vertex) / vertex).abs() < 1e-6, "{} vs {vertex}", l0.lambda0);
}

#[test]
fn lambda0_reports_missing_minimum() {
    let b = poly_bundle(100.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let e = find_lambda0(&b, 10.0, &LaminarOptions::default()).unwrap_err();
    assert!(matches!(e, LaminarError::NoMinimumInRange { .. }));
}

#[test]
fn lambda0_boundary_minimum() {
    // strong stratification pushes ε0 above the unconstrained minimizer
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.5], &[0.0]).unwrap();
    let l0 = find_lambda0(&b, 200.0, &LaminarOptions::default()).unwrap();
    assert!(l0.boundary_minimum);
    assert_eq!(l0.lambda0, b.lambda_lower());
}
