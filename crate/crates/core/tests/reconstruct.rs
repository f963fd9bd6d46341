use strataflow::continuation::{continue_branch, ContinuationOptions};
use strataflow::heightpde::{Grid, HeightField, HeightProblem};
use strataflow::laminar::{solve_laminar, Admissibility, LaminarOptions};
use strataflow::profiles::{poly_bundle, ProfileBundle};
use strataflow::reconstruct::{
    euler_residual, resample_cartesian, stream_consistency, to_physical, write_field_csv, write_surface_csv,
    write_vtk, ReconstructError,
};
use strataflow::sturm::{find_lambda_star, SturmOptions};

fn laminar_field(b: &ProfileBundle, n: usize, lambda: f64) -> HeightField {
    let opts = LaminarOptions::default().with_np(n).with_admissibility(Admissibility::Relaxed);
    let flow = solve_laminar(b, lambda, &opts).unwrap();
    HeightField::from_laminar(Grid::new(n, n, b.p0()).unwrap(), &flow).unwrap()
}

#[test]
fn constant_density_laminar_is_exact_shear() {
    let c = 3.0;
    let b = poly_bundle(1.0, c, -1.0, &[2.0], &[0.0]).unwrap();
    let lambda = 1.7;
    let pf = to_physical(&laminar_field(&b, 33, lambda), &b).unwrap();
    let u_exact = c - lambda.sqrt() / 2f64.sqrt();
    assert!(pf.u.iter().all(|u| (u - u_exact).abs() < 1e-10));
    assert!(pf.v.iter().all(|v| v.abs() < 1e-12));
    assert!(pf.eta.iter().all(|e| e.abs() < 1e-12));
    let r = euler_residual(&pf);
    assert!(r.max_residual() <= 1e-9, "{r:?}");
    assert!(r.mean_eta <= 1e-12);
    assert_eq!(r.dp, 1.0 / 32.0);
}

#[test]
fn laminar_stream_reconstruction_is_exact() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let s = stream_consistency(&laminar_field(&b, 33, 2.0)).unwrap();
    assert!(s.psi_deviation <= 1e-9 && s.bed_error <= 1e-9, "{s:?}");
}

// ∫ρ g dy over the water column, trapezoid on a fine laminar grid
fn column_weight(b: &ProfileBundle, lambda: f64) -> f64 {
    let opts = LaminarOptions::default().with_np(8193).with_admissibility(Admissibility::Relaxed);
    let flow = solve_laminar(b, lambda, &opts).unwrap();
    let w: f64 = (0..flow.np() - 1)
        .map(|j| 0.5 * (b.rho.rho(flow.p[j]) + b.rho.rho(flow.p[j + 1])) * (flow.y[j + 1] - flow.y[j]))
        .sum();
    b.g() * w
}

#[test]
fn stratified_laminar_bed_pressure_is_hydrostatic() {
    let b = poly_bundle(1.0, 2.0, -1.0, &[1.0, -0.3, 0.1], &[0.4]).unwrap();
    let lambda = 2.0;
    let weight = column_weight(&b, lambda);
    let errs: Vec<f64> = [17, 33, 65]
        .iter()
        .map(|&n| {
            let pf = to_physical(&laminar_field(&b, n, lambda), &b).unwrap();
            assert!(pf.v.iter().all(|v| v.abs() < 1e-12));
            let bed = (0..pf.nx).map(|k| pf.pressure[pf.idx(k, 0)]).fold(0.0f64, |m, p| m.max((p - weight).abs()));
            let top = (0..pf.nx).map(|k| pf.pressure[pf.idx(k, pf.np - 1)].abs()).fold(0.0, f64::max);
            bed.max(top)
        })
        .collect();
    assert!(errs[2] < 1e-5, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
}

#[test]
fn stratified_laminar_residuals_converge() {
    let b = poly_bundle(1.0, 2.0, -1.0, &[1.0, -0.3, 0.1], &[0.4]).unwrap();
    let r: Vec<f64> = [33, 65].iter().map(|&n| euler_residual(&to_physical(&laminar_field(&b, n, 2.0), &b).unwrap()).max_residual()).collect();
    assert!(r[1] < 1e-4 && r[0] / r[1] > 3.5, "{r:?}");
}

#[test]
fn corrupted_bed_row_is_rejected() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let mut f = laminar_field(&b, 17, 1.0);
    f.h[f.grid.node(3, 0)] = 1e-3;
    assert!(matches!(to_physical(&f, &b), Err(ReconstructError::InvalidField(_))));
}

#[test]
fn folded_streamlines_hit_the_stagnation_guard() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0], &[0.0]).unwrap();
    let mut f = laminar_field(&b, 17, 1.0);
    for i in 0..17 {
        let n = f.grid.node(i, 8);
        f.h[n] = f.h[f.grid.node(i, 6)];
    }
    assert!(matches!(to_physical(&f, &b), Err(ReconstructError::StagnationGuard { .. })));
    assert!(matches!(stream_consistency(&f), Err(ReconstructError::StagnationGuard { .. })));
}

fn wave(b: &ProfileBundle, n: usize, steps: usize) -> HeightField {
    let bp = find_lambda_star(b, &SturmOptions::default().with_np(n)).unwrap();
    let pb = HeightProblem::new(b, Grid::new(n, n, b.p0()).unwrap());
    let (br, err) = continue_branch(&pb, &bp, ContinuationOptions::new(0.05 * bp.laminar.d, steps)).unwrap();
    assert!(err.is_none());
    br.points.last().unwrap().field.clone()
}

#[test]
fn wave_residuals_converge_at_second_order() {
    let b = poly_bundle(1.0, 1.5, -1.0, &[1.0], &[0.0]).unwrap();
    let fields: Vec<HeightField> = [32, 64].iter().map(|&n| wave(&b, n, 4)).collect();
    let pfs: Vec<_> = fields.iter().map(|f| to_physical(f, &b).unwrap()).collect();
    let r: Vec<_> = pfs.iter().map(euler_residual).collect();
    let ratio = r[0].max_residual() / r[1].max_residual();
    assert!((3.5..4.5).contains(&ratio), "{r:?}");
    assert!((3.0..5.0).contains(&(r[0].flux / r[1].flux)), "{r:?}");
    assert!(r[1].flux < 1e-3 * b.p0().abs());
    assert!(r[1].mean_eta < 1e-10);
    assert_eq!(r[1].bed_velocity, 0.0);

    let s: Vec<_> = fields.iter().map(|f| stream_consistency(f).unwrap()).collect();
    assert!(s[1].psi_deviation < s[0].psi_deviation && s[1].bed_error < 1e-6 * fields[1].q.abs().max(1.0), "{s:?}");

    // u, ρ, η even and v odd about x = 0
    let pf = &pfs[1];
    let mid = (pf.nx - 1) / 2;
    for k in 0..=mid {
        assert_eq!(pf.eta[mid - k], pf.eta[mid + k]);
        for j in 0..pf.np {
            let (a, c) = (pf.idx(mid - k, j), pf.idx(mid + k, j));
            assert_eq!(pf.u[a], pf.u[c]);
            assert_eq!(pf.rho[a], pf.rho[c]);
            assert_eq!(pf.v[a], -pf.v[c]);
        }
    }
    assert!(pf.max_u() < pf.c);
    assert!(pf.v.iter().any(|v| v.abs() > 1e-3));
}

#[test]
fn export_formats() {
    let b = poly_bundle(1.0, 1.0, -1.0, &[1.0, -0.2], &[0.0]).unwrap();
    let pf = to_physical(&laminar_field(&b, 17, 2.0), &b).unwrap();
    let mut buf = Vec::new();
    write_field_csv(&pf, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,u,v,rho,P"));
    assert_eq!(lines.count(), pf.nx * pf.np);

    let mut buf = Vec::new();
    write_surface_csv(&pf, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,eta\n"));
    assert_eq!(text.lines().count(), pf.nx + 1);

    let mut buf = Vec::new();
    write_vtk(&pf, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains(&format!("DIMENSIONS {} {} 1", pf.nx, pf.np)));
    assert_eq!(text.matches("SCALARS").count(), 4);
    assert_eq!(text.lines().count(), 6 + pf.nx * pf.np * 5 + 1 + 4 * 2);

    let cart = resample_cartesian(&pf, 9);
    assert_eq!(cart.y.len(), 9);
    // flat surface: every Cartesian node is inside the fluid
    assert!(cart.u.iter().all(|u| u.is_finite()));
    let k = 3;
    assert!((cart.rho[k * 9] - pf.rho[pf.idx(k, 0)]).abs() < 1e-12);
}
