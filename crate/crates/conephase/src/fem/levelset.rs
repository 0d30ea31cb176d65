//! Marching-triangles extraction of level sets `{u_h = c}` with lengths
//! measured through the surface metric.
//!
//! Each crossed triangle contributes one straight segment in parameter
//! space; segment lengths use the metric at the segment midpoint. Segments
//! are chained into polylines through their edge keys, which supports both
//! the interface classifier (winding, tip passage) and contour export.

use super::Surface;
use crate::mesh::Mesh;

/// Extracted level set: total metric length and the chained polylines in
/// parameter coordinates.
#[derive(Debug, Clone, Default)]
pub struct LevelSet {
    pub length: f64,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl LevelSet {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    /// Winding number of each closed polyline around the origin; open
    /// polylines contribute `None`.
    pub fn winding_around_origin(&self) -> Vec<Option<i32>> {
        self.polylines
            .iter()
            .map(|p| {
                let closed = p.len() > 2 && dist(p[0], p[p.len() - 1]) < 1e-9;
                if !closed {
                    return None;
                }
                let mut total = 0.0;
                for w in p.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    total += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
                }
                Some((total / std::f64::consts::TAU).round() as i32)
            })
            .collect()
    }

    /// Smallest distance from any polyline vertex to the origin.
    pub fn min_distance_to_origin(&self) -> f64 {
        self.polylines
            .iter()
            .flatten()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Endpoints of open polylines (boundary crossings).
    pub fn open_endpoints(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for p in &self.polylines {
            let closed = p.len() > 2 && dist(p[0], p[p.len() - 1]) < 1e-9;
            if !closed && p.len() >= 2 {
                out.push(p[0]);
                out.push(*p.last().unwrap());
            }
        }
        out
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Extract `{u = c}` and measure its metric length. An empty level set
/// yields zero length and no polylines.
pub fn level_set_length(u: &[f64], c: f64, mesh: &Mesh, surface: &Surface) -> LevelSet {
    assert_eq!(u.len(), mesh.n_nodes(), "field length mismatch");
    // nodal values exactly at the level are nudged to the positive side so
    // level sets through nodes come out as clean near-node crossings
    let side = |v: f64| {
        let s = v - c;
        if s == 0.0 {
            f64::MIN_POSITIVE
        } else {
            s
        }
    };

    // chaining key: the crossing point quantized to ~1e-12, so segments
    // meeting at a shared node (not just a shared edge) still connect
    #[derive(Clone, Copy, PartialEq, Eq, Hash)]
    struct PointKey(i64, i64);
    let key = |p: [f64; 2]| {
        let s = (1u64 << 40) as f64;
        PointKey((p[0] * s).round() as i64, (p[1] * s).round() as i64)
    };

    let mut segments: Vec<([f64; 2], [f64; 2], PointKey, PointKey)> = Vec::new();
    let mut length = 0.0;
    for t in &mesh.triangles {
        let s = [side(u[t[0]]), side(u[t[1]]), side(u[t[2]])];
        let mut cross = Vec::with_capacity(2);
        for k in 0..3 {
            let (i, j) = (t[k], t[(k + 1) % 3]);
            let (si, sj) = (s[k], s[(k + 1) % 3]);
            if (si > 0.0) != (sj > 0.0) {
                let tt = si / (si - sj);
                let (pi, pj) = (mesh.nodes[i], mesh.nodes[j]);
                cross.push([
                    pi[0] + tt * (pj[0] - pi[0]),
                    pi[1] + tt * (pj[1] - pi[1]),
                ]);
            }
        }
        if cross.len() == 2 {
            let (p0, p1) = (cross[0], cross[1]);
            // level sets through a node produce degenerate slivers there
            if dist(p0, p1) < 1e-14 {
                continue;
            }
            let seg_len = metric_segment_length(p0, p1, surface);
            length += seg_len;
            segments.push((p0, p1, key(p0), key(p1)));
        }
    }
    if segments.is_empty() {
        return LevelSet::default();
    }

    // chain segments into polylines through shared edge keys
    let mut by_key: std::collections::HashMap<PointKey, Vec<(usize, bool)>> =
        std::collections::HashMap::new();
    for (i, seg) in segments.iter().enumerate() {
        by_key.entry(seg.2).or_default().push((i, false));
        by_key.entry(seg.3).or_default().push((i, true));
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        // walk both directions from the starting segment
        let mut line = std::collections::VecDeque::new();
        used[start] = true;
        line.push_back(segments[start].0);
        line.push_back(segments[start].1);
        for (dir_key_sel, front) in [(true, false), (false, true)] {
            let mut cur = start;
            let mut cur_key = if dir_key_sel {
                segments[start].3
            } else {
                segments[start].2
            };
            loop {
                let next = by_key
                    .get(&cur_key)
                    .and_then(|v| v.iter().find(|(i, _)| *i != cur && !used[*i]))
                    .copied();
                let Some((ni, enters_at_end)) = next else {
                    break;
                };
                used[ni] = true;
                let seg = &segments[ni];
                let (push_pt, next_key) = if enters_at_end {
                    (seg.0, seg.2)
                } else {
                    (seg.1, seg.3)
                };
                if front {
                    line.push_front(push_pt);
                } else {
                    line.push_back(push_pt);
                }
                cur = ni;
                cur_key = next_key;
            }
        }
        // close the loop geometrically if ends meet
        let v: Vec<[f64; 2]> = line.into_iter().collect();
        polylines.push(v);
    }
    LevelSet { length, polylines }
}

/// Metric length of the parameter-space segment, metric evaluated at the
/// midpoint (nudged off the origin where the metric is discontinuous).
fn metric_segment_length(p0: [f64; 2], p1: [f64; 2], surface: &Surface) -> f64 {
    let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
    if dx * dx + dy * dy < 1e-30 {
        return 0.0;
    }
    let mut mid = [(p0[0] + p1[0]) / 2.0, (p0[1] + p1[1]) / 2.0];
    if mid[0] * mid[0] + mid[1] * mid[1] == 0.0 {
        // segment centered on the tip: sample off-center instead
        mid = [
            p0[0] + 0.45 * (p1[0] - p0[0]),
            p0[1] + 0.45 * (p1[1] - p0[1]),
        ];
    }
    let m = surface.metric_sample(mid[0], mid[1]);
    m.length_of(dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConeParams;
    use crate::mesh::generate_disk_mesh;

    #[test]
    fn diameter_on_flat_disk() {
        let mesh = generate_disk_mesh(0.1).unwrap();
        let u: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let ls = level_set_length(&u, 0.0, &mesh, &Surface::Flat);
        assert!((ls.length - 2.0).abs() < 1e-3, "length {}", ls.length);
    }

    #[test]
    fn slant_diameter_on_cones() {
        for &h in &[0.5, 1.0, 2.0, 3.0] {
            let mesh = generate_disk_mesh(0.1).unwrap();
            let u: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
            let cone = Surface::Cone(ConeParams::new(h, 1.0).unwrap());
            let ls = level_set_length(&u, 0.0, &mesh, &cone);
            let exact = 2.0 * (1.0 + h * h).sqrt();
            assert!(
                (ls.length - exact).abs() < 1e-2 * exact,
                "h={h}: {} vs {exact}",
                ls.length
            );
        }
    }

    #[test]
    fn circle_level_set_on_flat_disk() {
        let mesh = generate_disk_mesh(0.05).unwrap();
        let u: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| p[0] * p[0] + p[1] * p[1] - 0.5)
            .collect();
        let ls = level_set_length(&u, 0.0, &mesh, &Surface::Flat);
        let exact = std::f64::consts::TAU * 0.5f64.sqrt();
        assert!(
            (ls.length - exact).abs() < 1e-2 * exact,
            "{} vs {exact}",
            ls.length
        );
        // one closed loop winding once around the origin
        let w = ls.winding_around_origin();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].map(i32::abs), Some(1));
    }

    #[test]
    fn empty_level_set() {
        let mesh = generate_disk_mesh(0.3).unwrap();
        let u = vec![0.3; mesh.n_nodes()];
        let ls = level_set_length(&u, 0.0, &mesh, &Surface::Flat);
        assert_eq!(ls.length, 0.0);
        assert!(ls.is_empty());
    }

    #[test]
    fn tip_interface_polyline_passes_origin() {
        let mesh = generate_disk_mesh(0.12).unwrap();
        let u: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let ls = level_set_length(&u, 0.0, &mesh, &Surface::Flat);
        assert!(ls.min_distance_to_origin() < 1e-9);
        let ends = ls.open_endpoints();
        assert_eq!(ends.len(), 2, "one open chain crossing the disk");
    }
}
