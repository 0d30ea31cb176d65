//! Triangulations of the unit-disk parameter domain.
//!
//! The generator builds concentric rings of nodes (ring `i` of `K` carries
//! `8 i` nodes) so the origin is always a mesh vertex and the node set is
//! exactly symmetric under both axis reflections: first-quadrant coordinates
//! are computed once and mirrored by sign flips, which are exact in floating
//! point. Refinement is Rivara longest-edge bisection with conformity
//! closure; new boundary nodes are projected to the unit circle. Field
//! transfer between meshes is piecewise-linear interpolation with a
//! nearest-triangle fallback for the slivers between a coarse boundary
//! polygon and a finer one.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("target mesh size {0} outside (0, 1)")]
    InvalidTargetH(f64),
    #[error("mesh would exceed the element cap ({got} > {cap})")]
    ElementCap { got: usize, cap: usize },
    #[error("indicator length {got} does not match triangle count {want}")]
    IndicatorLength { got: usize, want: usize },
    #[error("refinement fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("field length {got} does not match node count {want}")]
    FieldLength { got: usize, want: usize },
}

pub const DEFAULT_ELEMENT_CAP: usize = 200_000;

#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted indices of nodes on the domain boundary.
    pub boundary_nodes: Vec<usize>,
    /// Refinement-level counter.
    pub generation: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub element_cap: usize,
    /// Project new boundary-edge midpoints onto the unit circle. Disabled
    /// for flat rectangular meshes and for exact-area bisection tests.
    pub project_to_circle: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            element_cap: DEFAULT_ELEMENT_CAP,
            project_to_circle: true,
        }
    }
}

/// Conforming triangulation of the unit disk with max edge length
/// `<= target_h`, origin node, and exact mirror symmetry in both axes.
pub fn generate_disk_mesh(target_h: f64) -> Result<Mesh, MeshError> {
    generate_disk_mesh_capped(target_h, DEFAULT_ELEMENT_CAP)
}

pub fn generate_disk_mesh_capped(target_h: f64, cap: usize) -> Result<Mesh, MeshError> {
    if !(target_h > 0.0 && target_h < 1.0) {
        return Err(MeshError::InvalidTargetH(target_h));
    }
    // worst edge is the band diagonal, about 1.28 / K
    let rings = ((1.28 / target_h).ceil() as usize).max(1);
    let n_tri = 8 * rings * rings;
    if n_tri > cap {
        return Err(MeshError::ElementCap { got: n_tri, cap });
    }

    let mut nodes: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; rings + 1];
    for i in 1..=rings {
        ring_start[i] = nodes.len();
        let r = i as f64 / rings as f64;
        let m = 8 * i; // nodes on ring i
        for j in 0..m {
            nodes.push(ring_node(r, j, i));
        }
    }

    let mut triangles = Vec::with_capacity(n_tri);
    // innermost fan around the origin
    for j in 0..8 {
        triangles.push([ring_start[1] + j, ring_start[1] + (j + 1) % 8, 0]);
    }
    for i in 2..=rings {
        let outer = ring_start[i];
        let inner = ring_start[i - 1];
        let (mo, mi) = (8 * i, 8 * (i - 1));
        for q in 0..8 {
            // sector q: outer local t = 0..=i, inner local t = 0..=i-1
            let o = |t: usize| outer + (q * i + t) % mo;
            let ii = |t: usize| inner + (q * (i - 1) + t) % mi;
            for t in 0..i {
                triangles.push([o(t), o(t + 1), ii(t)]);
            }
            for t in 0..i.saturating_sub(1) {
                triangles.push([o(t + 1), ii(t + 1), ii(t)]);
            }
        }
    }

    let boundary_nodes: Vec<usize> = (ring_start[rings]..nodes.len()).collect();
    let mesh = Mesh {
        nodes,
        triangles,
        boundary_nodes,
        generation: 0,
    };
    debug_assert!(mesh.triangles.iter().all(|t| mesh.signed_area(t) > 0.0));
    Ok(mesh)
}

/// Node `j` of `8 i` on the ring of radius `r`, with coordinates mirrored
/// from the first quadrant so axis reflections are exact.
fn ring_node(r: f64, j: usize, i: usize) -> [f64; 2] {
    let m = 8 * i;
    let (jq, sx, sy) = if j <= 2 * i {
        (j, 1.0, 1.0)
    } else if j <= 4 * i {
        (4 * i - j, -1.0, 1.0)
    } else if j <= 6 * i {
        (j - 4 * i, -1.0, -1.0)
    } else {
        (m - j, 1.0, -1.0)
    };
    let (x, y) = if jq == 0 {
        (r, 0.0)
    } else if jq == 2 * i {
        (0.0, r)
    } else {
        let t = std::f64::consts::PI * jq as f64 / (4 * i) as f64;
        (r * t.cos(), r * t.sin())
    };
    [sx * x, sy * y]
}

/// Tensor-product triangulation of a rectangle from sorted coordinate
/// arrays (the flat auxiliary domain for interface-profile calibration).
pub fn generate_rect_mesh(xs: &[f64], ys: &[f64]) -> Mesh {
    let (nx, ny) = (xs.len(), ys.len());
    assert!(nx >= 2 && ny >= 2);
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            nodes.push([xs[i], ys[j]]);
        }
    }
    let id = |i: usize, j: usize| j * nx + i;
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut boundary_nodes: Vec<usize> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                boundary_nodes.push(id(i, j));
            }
        }
    }
    boundary_nodes.sort_unstable();
    Mesh {
        nodes,
        triangles,
        boundary_nodes,
        generation: 0,
    }
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.signed_area(t)).sum()
    }

    pub fn boundary_flags(&self) -> Vec<bool> {
        let mut f = vec![false; self.n_nodes()];
        for &i in &self.boundary_nodes {
            f[i] = true;
        }
        f
    }

    pub fn longest_edge_of(&self, t: &[usize; 3]) -> f64 {
        (0..3)
            .map(|k| self.edge_len(t[k], t[(k + 1) % 3]))
            .fold(0.0, f64::max)
    }

    fn edge_len(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }

    /// Edges incident to exactly one triangle, i.e. the domain boundary.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = ordered(t[k], t[(k + 1) % 3]);
                *count.entry((a, b)).or_insert(0) += 1;
            }
        }
        let mut v: Vec<(usize, usize)> = count
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect();
        v.sort_unstable();
        v
    }
}

#[inline]
fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Rivara longest-edge bisection of the top `fraction` of triangles by
/// `indicator`, with conformity closure. New boundary-edge midpoints are
/// projected onto the unit circle (see [`RefineOptions`]).
pub fn refine(mesh: &Mesh, indicator: &[f64], fraction: f64) -> Result<Mesh, MeshError> {
    refine_with_options(mesh, indicator, fraction, RefineOptions::default())
}

pub fn refine_with_options(
    mesh: &Mesh,
    indicator: &[f64],
    fraction: f64,
    opts: RefineOptions,
) -> Result<Mesh, MeshError> {
    if indicator.len() != mesh.n_triangles() {
        return Err(MeshError::IndicatorLength {
            got: indicator.len(),
            want: mesh.n_triangles(),
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MeshError::InvalidFraction(fraction));
    }
    if mesh.n_triangles() >= opts.element_cap {
        return Err(MeshError::ElementCap {
            got: mesh.n_triangles(),
            cap: opts.element_cap,
        });
    }

    let n_mark =
        ((fraction * mesh.n_triangles() as f64).ceil() as usize).clamp(1, mesh.n_triangles());
    let mut order: Vec<usize> = (0..mesh.n_triangles()).collect();
    order.sort_by(|&i, &j| {
        indicator[j]
            .partial_cmp(&indicator[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut r = Refiner::new(mesh, opts);
    for &t in order.iter().take(n_mark) {
        r.bisect_conforming(t);
    }
    Ok(r.finish(mesh.generation + 1))
}

struct Refiner {
    nodes: Vec<[f64; 2]>,
    tris: Vec<Option<[usize; 3]>>,
    boundary: Vec<bool>,
    /// live triangle ids incident to each undirected edge
    edge_tris: HashMap<(usize, usize), Vec<usize>>,
    /// midpoint node of an edge once split
    midpoints: HashMap<(usize, usize), usize>,
    on_circle: bool,
}

impl Refiner {
    fn new(mesh: &Mesh, opts: RefineOptions) -> Self {
        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                edge_tris
                    .entry(ordered(t[k], t[(k + 1) % 3]))
                    .or_default()
                    .push(ti);
            }
        }
        Self {
            nodes: mesh.nodes.clone(),
            tris: mesh.triangles.iter().map(|t| Some(*t)).collect(),
            boundary: mesh.boundary_flags(),
            edge_tris,
            midpoints: HashMap::new(),
            on_circle: opts.project_to_circle,
        }
    }

    /// Longest edge under a global total order (length, then node pair):
    /// exact ties are frequent on structured meshes, and a consistent order
    /// is what makes longest-edge propagation paths terminate.
    fn longest_edge(&self, t: &[usize; 3]) -> (usize, usize) {
        let mut best = (ordered(t[0], t[1]), self.len2(t[0], t[1]));
        for k in 1..3 {
            let e = ordered(t[k], t[(k + 1) % 3]);
            let l = self.len2(e.0, e.1);
            if l > best.1 || (l == best.1 && e > best.0) {
                best = (e, l);
            }
        }
        best.0
    }

    fn len2(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
    }

    fn neighbor_across(&mut self, t_id: usize, e: (usize, usize)) -> Option<usize> {
        let tris = &self.tris;
        let list = self.edge_tris.get_mut(&e)?;
        list.retain(|&ti| {
            tris[ti].is_some_and(|t| (0..3).any(|k| ordered(t[k], t[(k + 1) % 3]) == e))
        });
        list.iter().copied().find(|&ti| ti != t_id)
    }

    /// Longest-edge bisection with propagation along the longest-edge path.
    fn bisect_conforming(&mut self, t0: usize) {
        let mut stack = vec![t0];
        while let Some(&t_id) = stack.last() {
            let Some(t) = self.tris[t_id] else {
                stack.pop();
                continue;
            };
            let e = self.longest_edge(&t);
            match self.neighbor_across(t_id, e) {
                None => {
                    let m = self.split_edge(e, true);
                    self.bisect_one(t_id, e, m);
                    stack.pop();
                }
                Some(n_id) => {
                    let nt = self.tris[n_id].unwrap();
                    if self.longest_edge(&nt) == e {
                        let m = self.split_edge(e, false);
                        self.bisect_one(t_id, e, m);
                        self.bisect_one(n_id, e, m);
                        stack.pop();
                    } else {
                        assert!(stack.len() <= 10_000, "refinement propagation stuck");
                        stack.push(n_id);
                    }
                }
            }
        }
    }

    fn split_edge(&mut self, e: (usize, usize), is_boundary_edge: bool) -> usize {
        if let Some(&m) = self.midpoints.get(&e) {
            return m;
        }
        let (p, q) = (self.nodes[e.0], self.nodes[e.1]);
        let mut mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        let mut on_boundary = false;
        if is_boundary_edge && self.boundary[e.0] && self.boundary[e.1] {
            on_boundary = true;
            if self.on_circle {
                let r = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
                if r > 0.0 {
                    mid = [mid[0] / r, mid[1] / r];
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(mid);
        self.boundary.push(on_boundary);
        self.midpoints.insert(e, id);
        id
    }

    fn bisect_one(&mut self, t_id: usize, e: (usize, usize), m: usize) {
        let t = self.tris[t_id].take().unwrap();
        // rotate so that the split edge is (t[k], t[k+1])
        let k = (0..3)
            .find(|&k| ordered(t[k], t[(k + 1) % 3]) == e)
            .expect("edge belongs to triangle");
        let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
        for child in [[a, m, c], [m, b, c]] {
            let id = self.tris.len();
            self.tris.push(Some(child));
            for kk in 0..3 {
                self.edge_tris
                    .entry(ordered(child[kk], child[(kk + 1) % 3]))
                    .or_default()
                    .push(id);
            }
        }
    }

    fn finish(self, generation: u32) -> Mesh {
        let triangles: Vec<[usize; 3]> = self.tris.into_iter().flatten().collect();
        let boundary_nodes: Vec<usize> = self
            .boundary
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        Mesh {
            nodes: self.nodes,
            triangles,
            boundary_nodes,
            generation,
        }
    }
}

/// Uniform grid over the mesh bounding box for point location.
pub struct TriangleLocator<'m> {
    mesh: &'m Mesh,
    cells: Vec<Vec<usize>>,
    nx: usize,
    ny: usize,
    min: [f64; 2],
    inv_cell: [f64; 2],
}

impl<'m> TriangleLocator<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &mesh.nodes {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        let pad = 1e-9 + 1e-9 * (max[0] - min[0]).abs();
        min[0] -= pad;
        min[1] -= pad;
        max[0] += pad;
        max[1] += pad;
        let n_cells = (mesh.n_triangles() as f64).sqrt().ceil() as usize + 1;
        let (nx, ny) = (n_cells, n_cells);
        let inv_cell = [nx as f64 / (max[0] - min[0]), ny as f64 / (max[1] - min[1])];
        let mut cells = vec![Vec::new(); nx * ny];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in t {
                for d in 0..2 {
                    lo[d] = lo[d].min(mesh.nodes[v][d]);
                    hi[d] = hi[d].max(mesh.nodes[v][d]);
                }
            }
            let cx0 = (((lo[0] - min[0]) * inv_cell[0]) as usize).min(nx - 1);
            let cx1 = (((hi[0] - min[0]) * inv_cell[0]) as usize).min(nx - 1);
            let cy0 = (((lo[1] - min[1]) * inv_cell[1]) as usize).min(ny - 1);
            let cy1 = (((hi[1] - min[1]) * inv_cell[1]) as usize).min(ny - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * nx + cx].push(ti);
                }
            }
        }
        Self {
            mesh,
            cells,
            nx,
            ny,
            min,
            inv_cell,
        }
    }

    fn barycentric(&self, ti: usize, p: [f64; 2]) -> [f64; 3] {
        let t = &self.mesh.triangles[ti];
        let [a, b, c] = [
            self.mesh.nodes[t[0]],
            self.mesh.nodes[t[1]],
            self.mesh.nodes[t[2]],
        ];
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
        let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Containing triangle and barycentric coordinates; falls back to the
    /// nearest triangle (smallest barycentric deficit) when `p` lies outside
    /// every triangle, which extends the source field linearly.
    pub fn locate(&self, p: [f64; 2]) -> (usize, [f64; 3]) {
        let cx = (((p[0] - self.min[0]) * self.inv_cell[0]) as isize).clamp(0, self.nx as isize - 1);
        let cy = (((p[1] - self.min[1]) * self.inv_cell[1]) as isize).clamp(0, self.ny as isize - 1);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        let max_ring = self.nx.max(self.ny) as isize;
        for ring in 0..=max_ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= self.nx as isize || y >= self.ny as isize {
                        continue;
                    }
                    for &ti in &self.cells[y as usize * self.nx + x as usize] {
                        let l = self.barycentric(ti, p);
                        let deficit = -l[0].min(l[1]).min(l[2]).min(0.0);
                        if deficit <= 1e-12 {
                            return (ti, l);
                        }
                        if best.as_ref().is_none_or(|(d, _, _)| deficit < *d) {
                            best = Some((deficit, ti, l));
                        }
                    }
                }
            }
            // search one extra ring past the first candidate
            if let Some((d, _, _)) = best {
                if ring >= 1 && d < 0.5 {
                    break;
                }
            }
        }
        let (_, ti, l) = best.expect("locator found no triangle");
        (ti, l)
    }
}

/// Piecewise-linear transfer of a nodal field from one mesh to another.
/// Exact on fields linear per source triangle; points outside all source
/// triangles use the nearest triangle's linear extension.
pub fn transfer(u: &[f64], from: &Mesh, to: &Mesh) -> Result<Vec<f64>, MeshError> {
    if u.len() != from.n_nodes() {
        return Err(MeshError::FieldLength {
            got: u.len(),
            want: from.n_nodes(),
        });
    }
    let loc = TriangleLocator::new(from);
    let mut out = Vec::with_capacity(to.n_nodes());
    for &p in &to.nodes {
        let (ti, l) = loc.locate(p);
        let t = &from.triangles[ti];
        // anchored form keeps constants exact
        out.push(u[t[0]] + l[1] * (u[t[1]] - u[t[0]]) + l[2] * (u[t[2]] - u[t[0]]));
    }
    Ok(out)
}

/// Per-triangle P1 gradient in parameter coordinates.
pub fn p1_gradient(mesh: &Mesh, t: &[usize; 3], u: &[f64]) -> [f64; 2] {
    let [a, b, c] = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let gx = (u[t[1]] - u[t[0]]) * (c[1] - a[1]) - (u[t[2]] - u[t[0]]) * (b[1] - a[1]);
    let gy = (u[t[2]] - u[t[0]]) * (b[0] - a[0]) - (u[t[1]] - u[t[0]]) * (c[0] - a[0]);
    [gx / det, gy / det]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disk_mesh_basic_invariants() {
        let mesh = generate_disk_mesh(0.5).unwrap();
        assert!(mesh.triangles.iter().all(|t| mesh.signed_area(t) > 0.0));
        assert!(mesh.nodes.iter().any(|p| p[0] == 0.0 && p[1] == 0.0));
        for &b in &mesh.boundary_nodes {
            let p = mesh.nodes[b];
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() <= 1e-12);
        }
        // conforming: every edge has one or two incident triangles
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                *count.entry(ordered(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        assert!(count.values().all(|&c| c == 1 || c == 2));
    }

    #[test]
    fn disk_mesh_max_edge_below_target() {
        for &h in &[0.5, 0.2, 0.1] {
            let mesh = generate_disk_mesh(h).unwrap();
            let max_edge = mesh
                .triangles
                .iter()
                .map(|t| mesh.longest_edge_of(t))
                .fold(0.0, f64::max);
            assert!(max_edge <= h + 1e-12, "h={h}: max edge {max_edge}");
        }
    }

    #[test]
    fn disk_mesh_area_close_to_pi() {
        let mesh = generate_disk_mesh(0.05).unwrap();
        let area = mesh.total_area();
        // inscribed-polygon area for the boundary ring
        let n_bd = mesh.boundary_nodes.len() as f64;
        let poly = n_bd / 2.0 * (2.0 * PI / n_bd).sin();
        assert!((area - poly).abs() < 1e-10, "{area} vs polygon {poly}");
        assert!((area - PI).abs() < 1e-3, "{area} vs pi");
    }

    #[test]
    fn disk_mesh_element_count_scaling() {
        // calibration constant h0 = 0.25 for the ring construction
        let h0 = 0.25f64;
        let mesh = generate_disk_mesh(0.1).unwrap();
        let lower = (6000.0 * (0.1 / h0) * (0.1 / h0)) as usize;
        assert!(
            mesh.n_triangles() >= lower && mesh.n_triangles() <= DEFAULT_ELEMENT_CAP,
            "count {} not in [{lower}, cap]",
            mesh.n_triangles()
        );
    }

    #[test]
    fn disk_mesh_exactly_mirror_symmetric() {
        let mesh = generate_disk_mesh(0.3).unwrap();
        use std::collections::HashSet;
        let norm = |v: f64| if v == 0.0 { 0.0f64 } else { v };
        let set: HashSet<(u64, u64)> = mesh
            .nodes
            .iter()
            .map(|p| (norm(p[0]).to_bits(), norm(p[1]).to_bits()))
            .collect();
        for p in &mesh.nodes {
            for q in [[-p[0], p[1]], [p[0], -p[1]]] {
                assert!(
                    set.contains(&(norm(q[0]).to_bits(), norm(q[1]).to_bits())),
                    "mirror of {p:?} missing"
                );
            }
        }
    }

    #[test]
    fn element_cap_enforced() {
        assert!(matches!(
            generate_disk_mesh_capped(0.005, 1000),
            Err(MeshError::ElementCap { .. })
        ));
    }

    #[test]
    fn uniform_bisection_conserves_area_without_projection() {
        let mesh = generate_disk_mesh(0.4).unwrap();
        let ind = vec![1.0; mesh.n_triangles()];
        let opts = RefineOptions {
            project_to_circle: false,
            ..Default::default()
        };
        let fine = refine_with_options(&mesh, &ind, 1.0, opts).unwrap();
        assert!(fine.n_triangles() > mesh.n_triangles());
        assert!((fine.total_area() - mesh.total_area()).abs() < 1e-12);
        assert_eq!(fine.generation, mesh.generation + 1);
    }

    #[test]
    fn projection_grows_area_towards_disk() {
        // Two uniform passes: the first halves the radial edges, the second
        // then splits the boundary chords, whose midpoints get projected.
        let mesh = generate_disk_mesh(0.4).unwrap();
        let mid = refine(&mesh, &vec![1.0; mesh.n_triangles()], 1.0).unwrap();
        let fine = refine(&mid, &vec![1.0; mid.n_triangles()], 1.0).unwrap();
        assert!(fine.boundary_nodes.len() > mesh.boundary_nodes.len());
        assert!(fine.total_area() > mesh.total_area());
        assert!(fine.total_area() < PI);
        for &b in &fine.boundary_nodes {
            let p = fine.nodes[b];
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn refinement_keeps_old_nodes_and_conformity() {
        let mesh = generate_disk_mesh(0.3).unwrap();
        let ind: Vec<f64> = (0..mesh.n_triangles()).map(|i| (i % 7) as f64).collect();
        let fine = refine(&mesh, &ind, 0.25).unwrap();
        for (i, p) in mesh.nodes.iter().enumerate() {
            assert_eq!(&fine.nodes[i], p, "node {i} moved");
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &fine.triangles {
            assert!(fine.signed_area(t) > 0.0);
            for k in 0..3 {
                *count.entry(ordered(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        assert!(count.values().all(|&c| c <= 2), "hanging nodes present");
        let grow = fine.n_triangles() as f64 / mesh.n_triangles() as f64;
        assert!((1.2..=2.2).contains(&grow), "growth factor {grow}");
    }

    #[test]
    fn gradient_indicator_concentrates_new_nodes_at_interface() {
        let mesh = generate_disk_mesh(0.1).unwrap();
        let eps = 0.1;
        let u: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| (p[0] / (eps * 2f64.sqrt())).tanh())
            .collect();
        let ind: Vec<f64> = mesh
            .triangles
            .iter()
            .map(|t| {
                let g = p1_gradient(&mesh, t, &u);
                (g[0] * g[0] + g[1] * g[1]) * mesh.signed_area(t)
            })
            .collect();
        let fine = refine(&mesh, &ind, 0.2).unwrap();
        let new_nodes = &fine.nodes[mesh.n_nodes()..];
        let near = new_nodes.iter().filter(|p| p[0].abs() <= 4.0 * eps).count();
        let frac = near as f64 / new_nodes.len() as f64;
        assert!(frac >= 0.8, "only {frac:.2} of new nodes near interface");
    }

    #[test]
    fn transfer_reproduces_constants_and_linears() {
        let coarse = generate_disk_mesh(0.3).unwrap();
        let ind = vec![1.0; coarse.n_triangles()];
        let fine = refine(&coarse, &ind, 1.0).unwrap();

        let c = vec![0.3; coarse.n_nodes()];
        let tc = transfer(&c, &coarse, &fine).unwrap();
        assert!(tc.iter().all(|&v| v == 0.3));

        let lin: Vec<f64> = coarse.nodes.iter().map(|p| p[0] + 2.0 * p[1]).collect();
        let tl = transfer(&lin, &coarse, &fine).unwrap();
        for (i, p) in fine.nodes.iter().enumerate() {
            assert!(
                (tl[i] - (p[0] + 2.0 * p[1])).abs() < 1e-13,
                "node {i}: {} vs {}",
                tl[i],
                p[0] + 2.0 * p[1]
            );
        }
    }

    #[test]
    fn transfer_roundtrip_drift_is_second_order() {
        let coarse = generate_disk_mesh(0.2).unwrap();
        let ind = vec![1.0; coarse.n_triangles()];
        let fine = refine(&coarse, &ind, 1.0).unwrap();
        let u: Vec<f64> = coarse.nodes.iter().map(|p| (p[0] / 0.3).tanh()).collect();
        let there = transfer(&u, &coarse, &fine).unwrap();
        let back = transfer(&there, &fine, &coarse).unwrap();
        let drift = u
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // interpolation error bound O(h^2): h = 0.2, |u''| <= 2/0.3^2
        assert!(drift <= 0.5 * 0.2f64.powi(2) * 2.0 / 0.09, "drift {drift}");
    }

    #[test]
    fn transfer_respects_range_hull_up_to_sliver_extrapolation() {
        let coarse = generate_disk_mesh(0.25).unwrap();
        let ind = vec![1.0; coarse.n_triangles()];
        let fine = refine(&coarse, &ind, 1.0).unwrap();
        let u: Vec<f64> = coarse
            .nodes
            .iter()
            .map(|p| p[1].sin() + 0.2 * p[0])
            .collect();
        let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| {
            (a.0.min(v), a.1.max(v))
        });
        let t = transfer(&u, &coarse, &fine).unwrap();
        let slack = 0.25f64.powi(2); // boundary slivers extrapolate by O(h^2)
        for &v in &t {
            assert!(v >= lo - slack && v <= hi + slack);
        }
    }

    /// Mass changes at most O(h^2) under transfer (measured by the planar
    /// mean over each mesh).
    #[test]
    fn transfer_mass_drift_second_order() {
        let coarse = generate_disk_mesh(0.2).unwrap();
        let ind = vec![1.0; coarse.n_triangles()];
        let fine = refine(&coarse, &ind, 1.0).unwrap();
        let u: Vec<f64> = coarse.nodes.iter().map(|p| (2.0 * p[0]).sin()).collect();
        let mean = |mesh: &Mesh, u: &[f64]| {
            let mut s = 0.0;
            for t in &mesh.triangles {
                s += mesh.signed_area(t) * (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0;
            }
            s / mesh.total_area()
        };
        let tu = transfer(&u, &coarse, &fine).unwrap();
        let drift = (mean(&coarse, &u) - mean(&fine, &tu)).abs();
        assert!(drift < 0.2f64.powi(2), "mass drift {drift}");
    }

    #[test]
    fn rect_mesh_covers_square() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let ys = xs.clone();
        let mesh = generate_rect_mesh(&xs, &ys);
        assert_eq!(mesh.n_triangles(), 200);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
        assert!(mesh.triangles.iter().all(|t| mesh.signed_area(t) > 0.0));
        assert_eq!(mesh.boundary_nodes.len(), 40);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(matches!(
            generate_disk_mesh(0.0),
            Err(MeshError::InvalidTargetH(_))
        ));
        let mesh = generate_disk_mesh(0.5).unwrap();
        assert!(matches!(
            refine(&mesh, &[1.0], 0.5),
            Err(MeshError::IndicatorLength { .. })
        ));
        let ind = vec![1.0; mesh.n_triangles()];
        assert!(matches!(
            refine(&mesh, &ind, 0.0),
            Err(MeshError::InvalidFraction(_))
        ));
        assert!(matches!(
            transfer(&[1.0], &mesh, &mesh),
            Err(MeshError::FieldLength { .. })
        ));
    }
}
