use super::*;
use crate::geometry::ConeParams;
use crate::linalg::eigen::ShiftInvertOptions;
use crate::mesh::{generate_disk_mesh, generate_rect_mesh};
use std::f64::consts::PI;

/// First squared roots of the Bessel-derivative functions: the Neumann
/// Laplacian eigenvalues of the unit disk (frozen from the root solver in
/// the oracle module; the dipole modes are double).
const DISK_NU: [f64; 3] = [3.389_958_6, 3.389_958_6, 9.328_363_4];

fn disk_ops(target_h: f64, cone: ConeParams) -> DiscreteOperators {
    let mesh = generate_disk_mesh(target_h).unwrap();
    assemble(&mesh, Surface::Cone(cone)).unwrap()
}

#[test]
fn stiffness_kernel_contains_constants() {
    for cone in [
        ConeParams::flat_disk(),
        ConeParams::new(1.0, 1.0).unwrap(),
        ConeParams::new(2.0, 1.3).unwrap(),
    ] {
        let ops = disk_ops(0.2, cone);
        let ones = vec![1.0; ops.n_nodes()];
        let k1 = ops.stiffness.apply(&ones);
        let worst = k1.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(worst <= 1e-10, "K row sums {worst:.2e}");
    }
}

#[test]
fn mass_sum_equals_surface_area() {
    // boundary-polygon deficit scales as 1/K^2; 0.015 brings it under 1e-4
    let ops = disk_ops(0.015, ConeParams::new(1.0, 1.0).unwrap());
    assert!(
        (ops.area - PI * 2.0f64.sqrt()).abs() < 1e-4,
        "area {} vs {}",
        ops.area,
        PI * 2.0f64.sqrt()
    );
    // flat disk: area matches the inscribed-polygon area, close to pi
    let flat = disk_ops(0.05, ConeParams::flat_disk());
    assert!((flat.area - PI).abs() < 1e-3);
}

#[test]
fn matrices_are_symmetric_and_definite() {
    let ops = disk_ops(0.25, ConeParams::new(1.5, 1.2).unwrap());
    let n = ops.n_nodes();
    for i in 0..n {
        for k in ops.pattern.row_ptr[i]..ops.pattern.row_ptr[i + 1] {
            let j = ops.pattern.col_idx[k];
            assert!((ops.stiffness.get(i, j) - ops.stiffness.get(j, i)).abs() < 1e-13);
            assert!((ops.mass.get(i, j) - ops.mass.get(j, i)).abs() < 1e-14);
        }
    }
    // quadratic forms: K PSD, M PD on a few random vectors
    let mut s = 99u64;
    let mut rand = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..5 {
        let v: Vec<f64> = (0..n).map(|_| rand()).collect();
        let kv = ops.stiffness.apply(&v);
        let mv = ops.mass.apply(&v);
        let vkv: f64 = v.iter().zip(kv.iter()).map(|(a, b)| a * b).sum();
        let vmv: f64 = v.iter().zip(mv.iter()).map(|(a, b)| a * b).sum();
        assert!(vkv >= -1e-12);
        assert!(vmv > 0.0);
    }
}

/// Neumann eigenvalues of the flat unit disk against the Bessel-root oracle.
#[test]
fn flat_disk_neumann_spectrum() {
    let ops = disk_ops(0.06, ConeParams::flat_disk());
    let shift = -0.5;
    let mut shifted = crate::linalg::CsrMatrix::zeros(ops.pattern.clone());
    shifted.set_linear_combination(1.0, &ops.stiffness, -shift, &ops.mass);
    let solver = factor_bordered(&shifted, &ops, vec![], vec![], nalgebra::DMatrix::zeros(0, 0))
        .unwrap();
    let pairs = shift_invert_smallest(
        &ops.stiffness,
        &ops.mass,
        Some(&ops.mass_vec),
        &solver,
        shift,
        3,
        None,
        &ShiftInvertOptions::default(),
    )
    .unwrap();
    for (i, &expect) in DISK_NU.iter().enumerate() {
        let rel = (pairs.values[i] - expect).abs() / expect;
        assert!(rel < 0.02, "nu_{i}: {} vs {expect}", pairs.values[i]);
    }
}

#[test]
fn trivial_branch_residual_vanishes() {
    let ops = disk_ops(0.2, ConeParams::new(1.0, 1.05).unwrap());
    let m = 0.4;
    let u = vec![m; ops.n_nodes()];
    let lambda = m * m * m - m;
    let (field, q) = residual(&u, lambda, m, 0.15, &ops).unwrap();
    assert!(residual_norm(&field, q, &ops) <= 1e-10);

    // pure phase
    let u1 = vec![1.0; ops.n_nodes()];
    let (field, q) = residual(&u1, 0.0, 1.0, 0.15, &ops).unwrap();
    assert!(residual_norm(&field, q, &ops) <= 1e-10);
}

/// gamma3 equivariance is exact in floating point: negating `(u, lambda, m)`
/// negates the residual bitwise.
#[test]
fn gamma3_equivariance_exact() {
    let ops = disk_ops(0.25, ConeParams::new(1.0, 1.05).unwrap());
    let mut s = 7u64;
    let mut rand = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..3 {
        let u: Vec<f64> = (0..ops.n_nodes()).map(|_| rand()).collect();
        let (lambda, m, eps) = (rand(), rand(), 0.15);
        let (f1, q1) = residual(&u, lambda, m, eps, &ops).unwrap();
        let un: Vec<f64> = u.iter().map(|v| -v).collect();
        let (f2, q2) = residual(&un, -lambda, -m, eps, &ops).unwrap();
        assert!(f1.iter().zip(f2.iter()).all(|(a, b)| *a == -*b));
        assert_eq!(q1, -q2);
    }
}

/// gamma1/gamma2: reflecting the field across an axis reflects the residual.
#[test]
fn mirror_equivariance() {
    let mesh = generate_disk_mesh(0.25).unwrap();
    let ops = assemble(&mesh, Surface::Cone(ConeParams::new(1.0, 1.05).unwrap())).unwrap();
    // mirror node map over the y axis
    let norm0 = |v: f64| if v == 0.0 { 0.0 } else { v };
    let lookup: std::collections::HashMap<(u64, u64), usize> = mesh
        .nodes
        .iter()
        .enumerate()
        .map(|(i, p)| ((norm0(p[0]).to_bits(), norm0(p[1]).to_bits()), i))
        .collect();
    let mirror: Vec<usize> = mesh
        .nodes
        .iter()
        .map(|p| lookup[&(norm0(-p[0]).to_bits(), norm0(p[1]).to_bits())])
        .collect();
    let u: Vec<f64> = mesh.nodes.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
    let (f, q) = residual(&u, 0.2, 0.1, 0.15, &ops).unwrap();
    let um: Vec<f64> = (0..u.len()).map(|i| u[mirror[i]]).collect();
    let (fm, qm) = residual(&um, 0.2, 0.1, 0.15, &ops).unwrap();
    let worst = (0..u.len())
        .map(|i| (fm[i] - f[mirror[i]]).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-13, "mirror residual deviation {worst:.2e}");
    assert!((q - qm).abs() < 1e-13);
}

#[test]
fn jacobian_matches_finite_differences() {
    let ops = disk_ops(0.3, ConeParams::new(1.0, 1.05).unwrap());
    let n = ops.n_nodes();
    let mut s = 31u64;
    let mut rand = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let u: Vec<f64> = (0..n).map(|_| 0.5 * rand()).collect();
    let v: Vec<f64> = (0..n).map(|_| rand()).collect();
    let (eps, lambda, m) = (0.15, 0.1, 0.0);
    let a = hessian(&u, eps, &ops).unwrap();
    let av = a.apply(&v);
    let delta = 1e-6;
    let up: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a + delta * b).collect();
    let (fp, _) = residual(&up, lambda, m, eps, &ops).unwrap();
    let (f0, _) = residual(&u, lambda, m, eps, &ops).unwrap();
    let worst = (0..n)
        .map(|i| ((fp[i] - f0[i]) / delta - av[i]).abs())
        .fold(0.0f64, f64::max);
    assert!(worst <= 1e-5, "FD mismatch {worst:.2e}");
}

/// At `u = m` the constrained Hessian eigenvalues are
/// `eps^2 nu_k + 3 m^2 - 1` for the Neumann eigenvalues `nu_k`.
#[test]
fn linearization_spectrum_at_homogeneous_state() {
    let ops = disk_ops(0.07, ConeParams::flat_disk());
    let (m, eps) = (0.3, 0.4);
    let u = vec![m; ops.n_nodes()];
    let pairs = constrained_hessian_eigs(&u, eps, &ops, 3, None).unwrap();
    for (i, &nu) in DISK_NU.iter().enumerate() {
        let expect = eps * eps * nu + 3.0 * m * m - 1.0;
        assert!(
            (pairs.values[i] - expect).abs() < 0.02 * (1.0 + expect.abs()),
            "theta_{i}: {} vs {expect}",
            pairs.values[i]
        );
    }
}

#[test]
fn bordered_jacobian_row_column_symmetry() {
    // the constraint row equals the lambda column up to sign and 1/area
    let ops = disk_ops(0.3, ConeParams::new(1.0, 1.05).unwrap());
    let col: Vec<f64> = ops.mass_vec.iter().map(|v| -v).collect();
    let row: Vec<f64> = ops.mass_vec.iter().map(|v| v / ops.area).collect();
    for i in 0..ops.n_nodes() {
        assert!((row[i] * ops.area + col[i]).abs() < 1e-14);
    }
}

#[test]
fn energy_of_pure_phases_is_zero() {
    let ops = disk_ops(0.3, ConeParams::new(1.0, 1.0).unwrap());
    for v in [-1.0, 1.0] {
        let u = vec![v; ops.n_nodes()];
        let e = energy(&u, 0.1, &ops).unwrap();
        assert!(e.abs() < 1e-12);
        assert!(e >= 0.0);
    }
}

#[test]
fn energy_of_zero_state_matches_closed_form() {
    let ops = disk_ops(0.05, ConeParams::new(1.0, 1.0).unwrap());
    let u = vec![0.0; ops.n_nodes()];
    let e = energy(&u, 0.1, &ops).unwrap();
    // area * W(0) / (2 sigma eps); the assembled area stands in for pi sqrt2
    let expect = ops.area * 0.25 / (2.0 * SIGMA * 0.1);
    assert!((e - expect).abs() < 1e-10 * expect, "{e} vs {expect}");
    let analytic = PI * 2.0f64.sqrt() * 0.25 / (2.0 * SIGMA * 0.1);
    assert!((e - analytic).abs() < 1e-3 * analytic, "{e} vs {analytic}");
}

/// Graded x-coordinates for the flat-square interface tests: fine spacing
/// near the interface at x = 1/2.
pub fn graded_unit_interval(h_fine: f64, half_width: f64, h_coarse: f64) -> Vec<f64> {
    let mut xs = vec![0.0];
    let push_ramp = |xs: &mut Vec<f64>, from: f64, to: f64, h: f64| {
        let n = ((to - from) / h).ceil().max(1.0) as usize;
        for i in 1..=n {
            xs.push(from + (to - from) * i as f64 / n as f64);
        }
    };
    push_ramp(&mut xs, 0.0, 0.5 - half_width, h_coarse);
    push_ramp(&mut xs, 0.5 - half_width, 0.5 + half_width, h_fine);
    push_ramp(&mut xs, 0.5 + half_width, 1.0, h_coarse);
    xs
}

/// Modica-Mortola normalization: a straight unit-length interface on the
/// flat unit square has energy 1 in the limit.
#[test]
fn tanh_interface_energy_near_one() {
    let eps = 0.02;
    let xs = graded_unit_interval(eps / 6.0, 0.25, 0.05);
    let ys: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
    let mesh = generate_rect_mesh(&xs, &ys);
    let ops = assemble(&mesh, Surface::Flat).unwrap();
    let u: Vec<f64> = mesh
        .nodes
        .iter()
        .map(|p| ((p[0] - 0.5) / (2.0f64.sqrt() * eps)).tanh())
        .collect();
    let e = energy(&u, eps, &ops).unwrap();
    assert!((e - 1.0).abs() < 0.02, "E = {e}");
}

#[test]
fn newton_recovers_trivial_state_from_noise() {
    let ops = disk_ops(0.25, ConeParams::new(1.0, 1.05).unwrap());
    let m = 0.7;
    let mut s = 5u64;
    let mut rand = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let u0: Vec<f64> = (0..ops.n_nodes()).map(|_| m + 0.01 * rand()).collect();
    let (u, lambda, _) =
        newton_fixed_mass(&u0, 0.0, m, 0.15, &ops, &NewtonOptions::default()).unwrap();
    let worst = u.iter().map(|v| (v - m).abs()).fold(0.0f64, f64::max);
    assert!(worst < 1e-7, "max |u - m| = {worst:.2e}");
    assert!((lambda - (m * m * m - m)).abs() < 1e-7);
}

#[test]
fn newton_solves_square_interface_and_energy_approaches_one() {
    // solved critical point at m = 0 on the unit square
    for (eps, tol) in [(0.05, 0.02), (0.1, 0.05)] {
        let xs = graded_unit_interval(eps / 6.0, 0.25, 0.05);
        let ys: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let mesh = generate_rect_mesh(&xs, &ys);
        let ops = assemble(&mesh, Surface::Flat).unwrap();
        let u0: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| ((p[0] - 0.5) / (2.0f64.sqrt() * eps)).tanh())
            .collect();
        let (u, _, _) =
            newton_fixed_mass(&u0, 0.0, 0.0, eps, &ops, &NewtonOptions::default()).unwrap();
        let e = energy(&u, eps, &ops).unwrap();
        assert!((e - 1.0).abs() < tol, "eps={eps}: E = {e}");
    }
}

#[test]
fn morse_index_of_stable_homogeneous_state() {
    // eps^2 nu_1 > 1 makes u = 0 a constrained minimizer
    let ops = disk_ops(0.15, ConeParams::flat_disk());
    let eps = 0.6; // eps^2 * 3.39 = 1.22 > 1
    let state = State {
        u: vec![0.0; ops.n_nodes()],
        lambda: 0.0,
        m: 0.0,
        eps,
        cone: ConeParams::flat_disk(),
    };
    assert_eq!(morse_index(&state, &ops, 1e-6).unwrap(), 0);
    // and unstable below the first bifurcation: the double dipole mode
    // has crossed, so the index is exactly 2
    let state2 = State { eps: 0.5, ..state };
    assert_eq!(morse_index(&state2, &ops, 1e-6).unwrap(), 2);
}

#[test]
fn degenerate_triangle_rejected() {
    let mesh = crate::mesh::Mesh {
        nodes: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        triangles: vec![[0, 1, 2]],
        boundary_nodes: vec![0, 1, 2],
        generation: 0,
    };
    assert!(matches!(
        assemble(&mesh, Surface::Flat),
        Err(FemError::DegenerateTriangle(0))
    ));
}
