//! Exact geometry of the truncated elliptic cone.
//!
//! The cone of height `h` over the elliptic base with semi axes `a >= 1`
//! and `1` is parameterized over the closed unit disk by
//!
//! ```text
//!   phi(x, y) = (a x,  y,  h (1 - sqrt(x^2 + y^2))),
//! ```
//!
//! so the tip sits over the origin and the base circle maps to the ellipse
//! in the plane `z = 0`. All quantities below are derived from `phi`: the
//! first fundamental form, its determinant, the total surface area, and the
//! angle of the conical singularity at the tip. The metric coefficients are
//! bounded but discontinuous at the origin; they are only ever evaluated at
//! points strictly inside triangles, never at the tip itself.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point ({0}, {1}) lies outside the closed unit disk")]
    OutsideDomain(f64, f64),
    #[error("metric requested at the tip (origin) where it is singular")]
    MetricAtOrigin,
    #[error("invalid cone parameters: h = {h}, a = {a} (need h >= 0, a >= 1)")]
    InvalidParams { h: f64, a: f64 },
}

/// Geometry of the truncated elliptic cone: height `h` and long semi axis `a`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConeParams {
    pub h: f64,
    pub a: f64,
}

impl ConeParams {
    pub fn new(h: f64, a: f64) -> Result<Self, GeometryError> {
        if !(h >= 0.0) || !(a >= 1.0) {
            return Err(GeometryError::InvalidParams { h, a });
        }
        Ok(Self { h, a })
    }

    /// Flat unit disk (`h = 0`, `a = 1`).
    pub fn flat_disk() -> Self {
        Self { h: 0.0, a: 1.0 }
    }

    pub fn is_circular(&self) -> bool {
        self.a == 1.0
    }
}

/// First fundamental form of the cone parameterization at one point.
#[derive(Debug, Clone, Copy)]
pub struct MetricSample {
    pub e: f64,
    pub f: f64,
    pub g: f64,
    /// `E*G - F^2 = a^2 + h^2 (x^2 + a^2 y^2) / r^2`.
    pub det: f64,
}

impl MetricSample {
    pub fn sqrt_det(&self) -> f64 {
        self.det.sqrt()
    }

    /// Metric length of the parameter-plane displacement `(dx, dy)`.
    pub fn length_of(&self, dx: f64, dy: f64) -> f64 {
        (self.e * dx * dx + 2.0 * self.f * dx * dy + self.g * dy * dy).sqrt()
    }
}

/// Embedding map of the cone. Rejects points outside the closed unit disk.
pub fn cone_map(p: &ConeParams, x: f64, y: f64) -> Result<[f64; 3], GeometryError> {
    let r2 = x * x + y * y;
    if r2 > 1.0 + 1e-12 {
        return Err(GeometryError::OutsideDomain(x, y));
    }
    Ok([p.a * x, y, p.h * (1.0 - r2.sqrt())])
}

/// First fundamental form at `(x, y)`, `0 < x^2 + y^2 <= 1`.
///
/// With `r^2 = x^2 + y^2`:
///
/// ```text
///   E = a^2 + h^2 x^2 / r^2,   F = h^2 x y / r^2,   G = 1 + h^2 y^2 / r^2.
/// ```
pub fn metric(p: &ConeParams, x: f64, y: f64) -> Result<MetricSample, GeometryError> {
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return Err(GeometryError::MetricAtOrigin);
    }
    if r2 > 1.0 + 1e-12 {
        return Err(GeometryError::OutsideDomain(x, y));
    }
    let h2 = p.h * p.h;
    let e = p.a * p.a + h2 * x * x / r2;
    let f = h2 * x * y / r2;
    let g = 1.0 + h2 * y * y / r2;
    Ok(MetricSample {
        e,
        f,
        g,
        det: e * g - f * f,
    })
}

/// Total surface area of the truncated cone.
///
/// In polar coordinates the metric determinant depends only on the angle,
/// `det = a^2 + h^2 (cos^2 t + a^2 sin^2 t)`, so the area reduces to the
/// one-dimensional integral `1/2 * int_0^{2pi} sqrt(det(t)) dt`, evaluated
/// by doubling the composite trapezoid rule until convergence (the
/// integrand is smooth and periodic).
pub fn surface_area(p: &ConeParams) -> f64 {
    let h2 = p.h * p.h;
    let a2 = p.a * p.a;
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        (a2 + h2 * (c * c + a2 * s * s)).sqrt()
    };
    0.5 * periodic_integral(f, 1e-12)
}

/// Angle of the conical singularity at the tip, in radians.
///
/// For a circular cone the closed form `2 pi / sqrt(1 + h^2)` is returned.
/// For `a > 1` the angle is computed numerically: the image of the circle
/// `x^2 + y^2 = r^2` is normalized pointwise by its geodesic distance from
/// the tip (radial lines of the cone are straight segments in 3-space, so
/// that distance is the chord length), its arc length is integrated, and
/// the result is Richardson-extrapolated over shrinking `r`. Tolerance 1e-8.
///
/// Always `< 2 pi` for `h > 0`.
pub fn cone_angle(p: &ConeParams) -> f64 {
    if p.is_circular() {
        return 2.0 * std::f64::consts::PI / (1.0 + p.h * p.h).sqrt();
    }
    if p.h == 0.0 {
        return std::f64::consts::TAU;
    }
    let l1 = link_length(p, 1e-3);
    let l2 = link_length(p, 5e-4);
    // Richardson in r; the surface is an exact cone so the two values agree
    // to quadrature accuracy already.
    (4.0 * l2 - l1) / 3.0
}

/// Arc length of the tip link at parameter radius `r`: the image of the
/// circle of radius `r`, with each point divided by its geodesic distance
/// from the tip.
fn link_length(p: &ConeParams, r: f64) -> f64 {
    let tip = [0.0, 0.0, p.h];
    let gamma_hat = |t: f64| -> [f64; 3] {
        let (s, c) = t.sin_cos();
        let q = cone_map(p, r * c, r * s).expect("circle inside disk");
        let d = [q[0] - tip[0], q[1] - tip[1], q[2] - tip[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    };
    // Speed |d gamma_hat / dt| by central differences, integrated with the
    // trapezoid rule (spectrally accurate on periodic integrands).
    let dt = 1e-5;
    let speed = |t: f64| {
        let a = gamma_hat(t + dt);
        let b = gamma_hat(t - dt);
        let v = [
            (a[0] - b[0]) / (2.0 * dt),
            (a[1] - b[1]) / (2.0 * dt),
            (a[2] - b[2]) / (2.0 * dt),
        ];
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    };
    periodic_integral(speed, 1e-10)
}

/// Trapezoid rule over `[0, 2 pi]` with doubling until two successive
/// refinements agree to `tol`.
fn periodic_integral(f: impl Fn(f64) -> f64, tol: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut n = 64usize;
    let mut prev = f64::NAN;
    loop {
        let h = tau / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            s += f(i as f64 * h);
        }
        s *= h;
        if (s - prev).abs() < tol || n >= 1 << 20 {
            return s;
        }
        prev = s;
        n *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn cone_map_base_and_tip() {
        let p = ConeParams::new(1.0, 1.0).unwrap();
        assert_eq!(cone_map(&p, 1.0, 0.0).unwrap(), [1.0, 0.0, 0.0]);
        let p = ConeParams::new(3.0, 2.0).unwrap();
        assert_eq!(cone_map(&p, 0.0, 0.0).unwrap(), [0.0, 0.0, 3.0]);
        let p = ConeParams::new(1.0, 2.0).unwrap();
        assert_eq!(cone_map(&p, 0.0, 1.0).unwrap(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn cone_map_rejects_outside() {
        let p = ConeParams::new(1.0, 1.0).unwrap();
        assert!(matches!(
            cone_map(&p, 1.1, 0.0),
            Err(GeometryError::OutsideDomain(_, _))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ConeParams::new(-0.1, 1.0).is_err());
        assert!(ConeParams::new(1.0, 0.9).is_err());
        assert!(ConeParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn metric_direct_substitution() {
        let p = ConeParams::new(1.0, 1.0).unwrap();
        let m = metric(&p, 1.0, 0.0).unwrap();
        assert_close(m.e, 2.0, 1e-15);
        assert_close(m.f, 0.0, 1e-15);
        assert_close(m.g, 1.0, 1e-15);
        assert_close(m.det, 2.0, 1e-15);
    }

    #[test]
    fn metric_flat_ellipse() {
        let p = ConeParams::new(0.0, 1.7).unwrap();
        for &(x, y) in &[(0.3, 0.4), (-0.5, 0.1), (0.0, 0.9)] {
            let m = metric(&p, x, y).unwrap();
            assert_close(m.e, 1.7 * 1.7, 1e-15);
            assert_close(m.f, 0.0, 1e-15);
            assert_close(m.g, 1.0, 1e-15);
            assert_close(m.det, 1.7 * 1.7, 1e-14);
        }
    }

    #[test]
    fn metric_at_origin_is_an_error() {
        let p = ConeParams::new(1.0, 1.0).unwrap();
        assert!(matches!(
            metric(&p, 0.0, 0.0),
            Err(GeometryError::MetricAtOrigin)
        ));
    }

    /// det must agree with the Gram determinant of finite-difference tangent
    /// vectors of `cone_map` (an oracle independent of the closed form).
    #[test]
    fn metric_matches_finite_difference_gram() {
        let p = ConeParams::new(1.3, 1.4).unwrap();
        let dh = 1e-6;
        let mut rng = 123456789u64;
        let mut next = || {
            // xorshift; test-only generator
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let t = next() * std::f64::consts::TAU;
            let r = 0.05 + 0.9 * next();
            let (x, y) = (r * t.cos(), r * t.sin());
            let fd = |dx: f64, dy: f64| {
                let a = cone_map(&p, x + dx, y + dy).unwrap();
                let b = cone_map(&p, x - dx, y - dy).unwrap();
                [
                    (a[0] - b[0]) / (2.0 * dh),
                    (a[1] - b[1]) / (2.0 * dh),
                    (a[2] - b[2]) / (2.0 * dh),
                ]
            };
            let tx = fd(dh, 0.0);
            let ty = fd(0.0, dh);
            let dot = |u: &[f64; 3], v: &[f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            let (e, f, g) = (dot(&tx, &tx), dot(&tx, &ty), dot(&ty, &ty));
            let m = metric(&p, x, y).unwrap();
            assert_close(m.det, e * g - f * f, 1e-6);
            assert_close(m.e, e, 1e-6);
            assert_close(m.f, f, 1e-6);
            assert_close(m.g, g, 1e-6);
        }
    }

    #[test]
    fn metric_mirror_symmetry() {
        let p = ConeParams::new(2.0, 1.3).unwrap();
        for &(x, y) in &[(0.3, 0.4), (0.7, -0.2), (-0.1, 0.6)] {
            let m = metric(&p, x, y).unwrap();
            let mx = metric(&p, -x, y).unwrap();
            let my = metric(&p, x, -y).unwrap();
            for r in [&mx, &my] {
                assert_close(r.e, m.e, 1e-15);
                assert_close(r.g, m.g, 1e-15);
                assert_close(r.det, m.det, 1e-14);
                assert_close(r.f, -m.f, 1e-15);
            }
        }
    }

    #[test]
    fn surface_area_known_values() {
        assert_close(surface_area(&ConeParams::new(0.0, 1.0).unwrap()), PI, 1e-10);
        assert_close(
            surface_area(&ConeParams::new(0.0, 2.0).unwrap()),
            2.0 * PI,
            1e-10,
        );
        // Lateral area of the right circular cone: pi * 1 * sqrt(1 + h^2).
        assert_close(
            surface_area(&ConeParams::new(1.0, 1.0).unwrap()),
            PI * 2.0f64.sqrt(),
            1e-10,
        );
    }

    #[test]
    fn cone_angle_circular() {
        assert_close(
            cone_angle(&ConeParams::new(0.0, 1.0).unwrap()),
            2.0 * PI,
            1e-12,
        );
        assert_close(
            cone_angle(&ConeParams::new(1.0, 1.0).unwrap()),
            2.0 * PI / 2.0f64.sqrt(),
            1e-12,
        );
    }

    #[test]
    fn cone_angle_elliptic_bounds() {
        // Slightly elliptic cone: angle between the circular value and its
        // a-scaled upper bound, and below 2 pi.
        let alpha = cone_angle(&ConeParams::new(1.0, 1.05).unwrap());
        let circ = 2.0 * PI / 2.0f64.sqrt();
        assert!(alpha > circ && alpha < circ * 1.05, "alpha = {alpha}");
        assert!(alpha < 2.0 * PI);
        for &(h, a) in &[(0.5, 1.2), (1.0, 2.0), (3.0, 1.5)] {
            let alpha = cone_angle(&ConeParams::new(h, a).unwrap());
            assert!(alpha < 2.0 * PI, "alpha({h},{a}) = {alpha}");
        }
    }

    /// The numeric link-length route must agree with the circular closed
    /// form when evaluated on a circular cone.
    #[test]
    fn link_length_matches_circular_closed_form() {
        let p = ConeParams::new(1.7, 1.0).unwrap();
        let exact = 2.0 * PI / (1.0 + 1.7f64 * 1.7).sqrt();
        assert_close(link_length(&p, 1e-3), exact, 1e-8);
    }

    /// Flattened-sector cross-check: area = alpha * S^2 / 2 for a = 1.
    #[test]
    fn flattened_sector_area() {
        for &h in &[0.5, 1.0, 2.0, 3.0] {
            let p = ConeParams::new(h, 1.0).unwrap();
            let s2 = 1.0 + h * h;
            let expect = cone_angle(&p) * s2 / 2.0;
            assert_close(surface_area(&p), expect, 1e-6);
        }
    }
}
