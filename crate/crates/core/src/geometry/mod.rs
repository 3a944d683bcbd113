//! Triangle surface meshes, marching-cubes extraction from a scalar field,
//! and per-element quadrature data consumed by the BEM and gradient modules.

mod mc_tables;

use nalgebra::Vector3;
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("field has uniform sign on all grid nodes, no zero level set")]
    NoSurface,
    #[error("zero level set exits the grid: {0} boundary nodes are inside the surface")]
    OpenSurface(usize),
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("grid spec invalid: {0}")]
    BadGrid(String),
    #[error("OBJ parse error at line {line}: {msg}")]
    ParseObj { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned Cartesian sampling lattice for implicit-surface extraction.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub h: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: [-1.0; 3],
            upper: [1.0; 3],
            h: 0.06,
        }
    }
}

impl GridSpec {
    pub fn new(lower: [f64; 3], upper: [f64; 3], h: f64) -> Result<Self, GeometryError> {
        let g = Self { lower, upper, h };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.h > 0.0) {
            return Err(GeometryError::BadGrid(format!("spacing h={} not > 0", self.h)));
        }
        for a in 0..3 {
            if !(self.upper[a] > self.lower[a]) {
                return Err(GeometryError::BadGrid(format!(
                    "upper {:?} not > lower {:?} componentwise",
                    self.upper, self.lower
                )));
            }
        }
        Ok(())
    }

    /// Node counts per axis (cells + 1).
    pub fn dims(&self) -> [usize; 3] {
        let mut n = [0usize; 3];
        for a in 0..3 {
            n[a] = ((self.upper[a] - self.lower[a]) / self.h).ceil() as usize + 1;
        }
        n
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.lower[0] + i as f64 * self.h,
            self.lower[1] + j as f64 * self.h,
            self.lower[2] + k as f64 * self.h,
        )
    }

    /// Iterate all node positions in k-fastest order.
    pub fn nodes(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.dims();
        let mut out = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    out.push(self.node(i, j, k));
                }
            }
        }
        out
    }
}

/// Watertight triangulated surface with per-face geometry cache.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    centroids: Vec<Vec3>,
    areas: Vec<f64>,
    normals: Vec<Vec3>,
}

impl TriangleMesh {
    /// Build the per-face cache. Rejects zero-area faces and out-of-range indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let mut centroids = Vec::with_capacity(faces.len());
        let mut areas = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(GeometryError::DegenerateMesh(format!(
                        "face {fi} references vertex {v} out of {}",
                        vertices.len()
                    )));
                }
            }
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let n2 = (b - a).cross(&(c - a));
            let area = 0.5 * n2.norm();
            if area <= 0.0 {
                return Err(GeometryError::DegenerateMesh(format!(
                    "face {fi} has zero area"
                )));
            }
            centroids.push((a + b + c) / 3.0);
            areas.push(area);
            normals.push(n2 / n2.norm());
        }
        Ok(Self {
            vertices,
            faces,
            centroids,
            areas,
            normals,
        })
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn centroid(&self, f: usize) -> Vec3 {
        self.centroids[f]
    }

    pub fn area(&self, f: usize) -> f64 {
        self.areas[f]
    }

    pub fn normal(&self, f: usize) -> Vec3 {
        self.normals[f]
    }

    pub fn face_vertices(&self, f: usize) -> (Vec3, Vec3, Vec3) {
        let [i, j, k] = self.faces[f];
        (self.vertices[i], self.vertices[j], self.vertices[k])
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Mean edge length over all faces.
    pub fn mean_edge_length(&self) -> f64 {
        let mut s = 0.0;
        for f in &self.faces {
            let (a, b, c) = (
                self.vertices[f[0]],
                self.vertices[f[1]],
                self.vertices[f[2]],
            );
            s += (b - a).norm() + (c - b).norm() + (a - c).norm();
        }
        s / (3.0 * self.faces.len() as f64)
    }

    /// Number of boundary edges (edges not shared by exactly two faces).
    pub fn boundary_edge_count(&self) -> usize {
        let mut edges: HashMap<(usize, usize), i64> = HashMap::new();
        for f in &self.faces {
            for e in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                // +1 for the canonical direction, -1 for the reverse
                *edges.entry(key).or_insert(0) += if e.0 < e.1 { 1 } else { -1 };
            }
        }
        edges.values().filter(|&&c| c != 0).count()
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_edge_count() == 0
    }

    /// Flip the orientation of every face.
    pub fn flipped(&self) -> Self {
        let faces = self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
        Self::new(self.vertices.clone(), faces).expect("flip preserves validity")
    }

    /// Point-in-mesh test by ray parity. The mesh must be closed. The ray
    /// direction is fixed and irrational so it cannot lie in the plane of a
    /// grid-aligned triangle or pass exactly through shared edges.
    pub fn contains(&self, p: &Vec3) -> bool {
        let dir = Vec3::new(
            0.577_350_269_189_625_8,
            0.211_324_865_405_187_1,
            0.788_675_134_594_812_9,
        )
        .normalize();
        let mut crossings = 0usize;
        for f in 0..self.faces.len() {
            let (a, b, c) = self.face_vertices(f);
            if ray_hits_triangle(p, &dir, &a, &b, &c) {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }
}

// Moller-Trumbore, counting strictly-forward hits.
fn ray_hits_triangle(orig: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tvec = orig - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = e2.dot(&qvec) * inv;
    t > 0.0
}

/// Signed volume via the divergence theorem; positive for outward orientation.
pub fn mesh_volume(mesh: &TriangleMesh) -> f64 {
    let mut vol = 0.0;
    for f in &mesh.faces {
        let (a, b, c) = (
            mesh.vertices[f[0]],
            mesh.vertices[f[1]],
            mesh.vertices[f[2]],
        );
        vol += a.dot(&b.cross(&c)) / 6.0;
    }
    vol
}

/// Symmetric quadrature rule on the reference triangle, barycentric points
/// with weights normalized to sum to one.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// 3-point rule, exact for polynomials up to degree 2.
    pub fn order2() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            order: 2,
        }
    }

    /// 6-point Dunavant rule, exact for polynomials up to degree 4.
    pub fn order4() -> Self {
        let w1 = 0.223381589678011;
        let a1 = 0.108103018168070;
        let b1 = 0.445948490915965;
        let w2 = 0.109951743655322;
        let a2 = 0.816847572980459;
        let b2 = 0.091576213509771;
        Self {
            points: vec![
                [a1, b1, b1],
                [b1, a1, b1],
                [b1, b1, a1],
                [a2, b2, b2],
                [b2, a2, b2],
                [b2, b2, a2],
            ],
            weights: vec![w1, w1, w1, w2, w2, w2],
            order: 4,
        }
    }

    /// Map to physical points and weights on one face; weights sum to the face area.
    pub fn on_face(&self, mesh: &TriangleMesh, f: usize) -> Vec<(Vec3, f64)> {
        let (a, b, c) = mesh.face_vertices(f);
        let area = mesh.area(f);
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| (a * p[0] + b * p[1] + c * p[2], w * area))
            .collect()
    }
}

/// Physical quadrature points and weights over every face of the mesh.
pub fn quadrature_points(mesh: &TriangleMesh, rule: &QuadratureRule) -> Vec<Vec<(Vec3, f64)>> {
    (0..mesh.num_faces()).map(|f| rule.on_face(mesh, f)).collect()
}

// Corner offsets (x,y,z) and edge endpoints matching the case tables.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [1, 0, 0],
    [0, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
    [1, 0, 1],
];
const EDGE_ENDS: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extract the zero level set of `field` on `grid` as a closed, outward-
/// oriented triangle mesh. Sign convention: negative inside.
pub fn marching_cubes<F>(field: F, grid: &GridSpec) -> Result<TriangleMesh, GeometryError>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    grid.validate()?;
    let [nx, ny, nz] = grid.dims();
    let idx = |i: usize, j: usize, k: usize| (i * ny + j) * nz + k;

    let mut values: Vec<f64> = (0..nx * ny * nz)
        .into_par_iter()
        .map(|lin| {
            let i = lin / (ny * nz);
            let j = (lin / nz) % ny;
            let k = lin % nz;
            field(&grid.node(i, j, k))
        })
        .collect();

    // Snap near-zero node values to the level set: crossings on incident
    // edges then land exactly on the node and the weld pass collapses the
    // sliver triangles they would otherwise create. Deciding per node keeps
    // the cube classification consistent across neighbouring cells.
    const SNAP: f64 = 0.01;
    let mut snapped = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let n = idx(i, j, k);
                let mut max_diff = 0.0f64;
                if i > 0 {
                    max_diff = max_diff.max((values[n] - values[idx(i - 1, j, k)]).abs());
                }
                if i + 1 < nx {
                    max_diff = max_diff.max((values[n] - values[idx(i + 1, j, k)]).abs());
                }
                if j > 0 {
                    max_diff = max_diff.max((values[n] - values[idx(i, j - 1, k)]).abs());
                }
                if j + 1 < ny {
                    max_diff = max_diff.max((values[n] - values[idx(i, j + 1, k)]).abs());
                }
                if k > 0 {
                    max_diff = max_diff.max((values[n] - values[idx(i, j, k - 1)]).abs());
                }
                if k + 1 < nz {
                    max_diff = max_diff.max((values[n] - values[idx(i, j, k + 1)]).abs());
                }
                if values[n].abs() < SNAP * max_diff {
                    snapped.push(n);
                }
            }
        }
    }
    for n in snapped {
        values[n] = 0.0;
    }

    if values.iter().all(|&v| v >= 0.0) || values.iter().all(|&v| v < 0.0) {
        return Err(GeometryError::NoSurface);
    }
    // Inside nodes on the grid boundary mean the zero set is clipped.
    let mut clipped = 0usize;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let on_boundary =
                    i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if on_boundary && values[idx(i, j, k)] < 0.0 {
                    clipped += 1;
                }
            }
        }
    }
    if clipped > 0 {
        return Err(GeometryError::OpenSurface(clipped));
    }

    // Vertices are shared between cells; key them by (lower node, axis).
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for ci in 0..nx - 1 {
        for cj in 0..ny - 1 {
            for ck in 0..nz - 1 {
                let mut corner_vals = [0.0f64; 8];
                let mut corner_idx = [0usize; 8];
                for c in 0..8 {
                    let [dx, dy, dz] = CORNER[c];
                    corner_idx[c] = idx(ci + dx, cj + dy, ck + dz);
                    corner_vals[c] = values[corner_idx[c]];
                }
                let mut cube = 0usize;
                for c in 0..8 {
                    if corner_vals[c] < 0.0 {
                        cube |= 1 << c;
                    }
                }
                let edge_mask = mc_tables::EDGE_TABLE[cube];
                if edge_mask == 0 {
                    continue;
                }
                let mut vert_of_edge = [usize::MAX; 12];
                for e in 0..12 {
                    if edge_mask & (1 << e) == 0 {
                        continue;
                    }
                    let [c0, c1] = EDGE_ENDS[e];
                    let n0 = corner_idx[c0];
                    let n1 = corner_idx[c1];
                    let key = (n0.min(n1), if n1 > n0 { axis_of(n0, n1, ny, nz) } else { axis_of(n1, n0, ny, nz) });
                    let vid = *edge_vertex.entry(key).or_insert_with(|| {
                        let f0 = corner_vals[c0];
                        let f1 = corner_vals[c1];
                        let t = (f0 / (f0 - f1)).clamp(0.0, 1.0);
                        let [dx0, dy0, dz0] = CORNER[c0];
                        let [dx1, dy1, dz1] = CORNER[c1];
                        let p0 = grid.node(ci + dx0, cj + dy0, ck + dz0);
                        let p1 = grid.node(ci + dx1, cj + dy1, ck + dz1);
                        vertices.push(p0 + (p1 - p0) * t);
                        vertices.len() - 1
                    });
                    vert_of_edge[e] = vid;
                }
                let tri = &mc_tables::TRI_TABLE[cube];
                let mut t = 0;
                while tri[t] >= 0 {
                    faces.push([
                        vert_of_edge[tri[t] as usize],
                        vert_of_edge[tri[t + 1] as usize],
                        vert_of_edge[tri[t + 2] as usize],
                    ]);
                    t += 3;
                }
            }
        }
    }

    let (vertices, faces) = cleanup(vertices, faces, grid.h);
    if faces.is_empty() {
        return Err(GeometryError::NoSurface);
    }
    let mut mesh = TriangleMesh::new(vertices, faces)?;
    if mesh_volume(&mesh) < 0.0 {
        mesh = mesh.flipped();
    }
    if !mesh.is_closed() {
        return Err(GeometryError::DegenerateMesh(format!(
            "{} boundary edges after extraction",
            mesh.boundary_edge_count()
        )));
    }
    Ok(mesh)
}

fn axis_of(n0: usize, n1: usize, ny: usize, nz: usize) -> usize {
    let d = n1 - n0;
    if d == ny * nz {
        0
    } else if d == nz {
        1
    } else {
        2
    }
}

// Weld coincident vertices (edge collapse for slivers created when a grid
// node sits exactly on the zero set) and drop zero-area faces.
fn cleanup(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, h: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let tol = 1e-9 * h;
    let quant = |p: &Vec3| {
        (
            (p.x / tol).round() as i64,
            (p.y / tol).round() as i64,
            (p.z / tol).round() as i64,
        )
    };
    let mut remap = vec![0usize; vertices.len()];
    let mut keep: Vec<Vec3> = Vec::new();
    let mut seen: HashMap<(i64, i64, i64), usize> = HashMap::new();
    for (i, v) in vertices.iter().enumerate() {
        let key = quant(v);
        remap[i] = *seen.entry(key).or_insert_with(|| {
            keep.push(*v);
            keep.len() - 1
        });
    }
    let area_min = 1e-12 * h * h;
    let out_faces = faces
        .into_iter()
        .filter_map(|f| {
            let g = [remap[f[0]], remap[f[1]], remap[f[2]]];
            if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
                return None;
            }
            let (a, b, c) = (keep[g[0]], keep[g[1]], keep[g[2]]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area < area_min {
                return None;
            }
            Some(g)
        })
        .collect();
    (keep, out_faces)
}

/// Write the mesh in OBJ text format with 1-based face indices.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), GeometryError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Read a mesh from OBJ text format (only `v` and `f` records are honored).
pub fn load_obj(path: &Path) -> Result<TriangleMesh, GeometryError> {
    let file = std::fs::File::open(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for x in p.iter_mut() {
                    *x = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or(GeometryError::ParseObj {
                            line: ln + 1,
                            msg: "bad vertex".into(),
                        })?;
                }
                vertices.push(Vec3::new(p[0], p[1], p[2]));
            }
            Some("f") => {
                let mut f = [0usize; 3];
                for x in f.iter_mut() {
                    let tok = it.next().ok_or(GeometryError::ParseObj {
                        line: ln + 1,
                        msg: "bad face".into(),
                    })?;
                    // tolerate v/vt/vn syntax
                    let v: usize = tok
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or(GeometryError::ParseObj {
                            line: ln + 1,
                            msg: "bad face index".into(),
                        })?;
                    *x = v - 1;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere_sdf(r: f64) -> impl Fn(&Vec3) -> f64 + Sync {
        move |x: &Vec3| x.norm() - r
    }

    #[test]
    fn sphere_mesh_area_h006() {
        let grid = GridSpec::default();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        let exact = std::f64::consts::PI; // 4 pi r^2, r = 0.5
        assert!((mesh.total_area() - exact).abs() / exact < 0.03);
        assert!(mesh.is_closed());
        assert!(mesh_volume(&mesh) > 0.0);
    }

    #[test]
    fn uniform_sign_is_no_surface() {
        let grid = GridSpec::default();
        let err = marching_cubes(|_x| 1.0, &grid).unwrap_err();
        assert!(matches!(err, GeometryError::NoSurface));
    }

    #[test]
    fn clipped_surface_is_open() {
        let grid = GridSpec::default();
        let err = marching_cubes(|x: &Vec3| x.norm() - 1.5, &grid).unwrap_err();
        assert!(matches!(err, GeometryError::OpenSurface(_)));
    }

    #[test]
    fn refinement_reduces_area_error() {
        let exact = std::f64::consts::PI;
        let coarse = marching_cubes(
            sphere_sdf(0.5),
            &GridSpec::new([-1.0; 3], [1.0; 3], 0.06).unwrap(),
        )
        .unwrap();
        let fine = marching_cubes(
            sphere_sdf(0.5),
            &GridSpec::new([-1.0; 3], [1.0; 3], 0.03).unwrap(),
        )
        .unwrap();
        let e_coarse = (coarse.total_area() - exact).abs();
        let e_fine = (fine.total_area() - exact).abs();
        assert!(e_fine < e_coarse, "e_fine={e_fine} e_coarse={e_coarse}");
    }

    #[test]
    fn sphere_vertices_within_h_of_radius() {
        let grid = GridSpec::default();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        for v in &mesh.vertices {
            assert!((v.norm() - 0.5).abs() <= grid.h);
        }
    }

    #[test]
    fn sphere_volume() {
        let grid = GridSpec::default();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((mesh_volume(&mesh) - exact).abs() / exact < 0.05);
        // inverted orientation negates the value
        assert_relative_eq!(mesh_volume(&mesh.flipped()), -mesh_volume(&mesh), epsilon = 1e-12);
    }

    #[test]
    fn ellipsoid_volume() {
        let (a, b, c) = (0.5, 0.4, 0.3);
        let grid = GridSpec::default();
        let mesh = marching_cubes(
            |x: &Vec3| (Vec3::new(x.x / a, x.y / b, x.z / c).norm() - 1.0) * (a * b * c).cbrt(),
            &grid,
        )
        .unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * a * b * c;
        assert!((mesh_volume(&mesh) - exact).abs() / exact < 0.05);
    }

    #[test]
    fn quadrature_exactness_on_reference_triangle() {
        // integrate x^p y^q over the reference triangle {x,y>=0, x+y<=1}
        let exact = |p: u32, q: u32| {
            // p! q! / (p+q+2)!
            let fact = |n: u32| (1..=n).map(|i| i as f64).product::<f64>().max(1.0);
            fact(p) * fact(q) / fact(p + q + 2)
        };
        for rule in [QuadratureRule::order2(), QuadratureRule::order4()] {
            for p in 0..=rule.order as u32 {
                for q in 0..=(rule.order as u32 - p) {
                    // reference-triangle area is 1/2; weights sum to 1
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(bc, w)| {
                            let x = bc[1];
                            let y = bc[2];
                            0.5 * w * x.powi(p as i32) * y.powi(q as i32)
                        })
                        .sum();
                    assert!(
                        (num - exact(p, q)).abs() < 1e-12,
                        "order {} monomial x^{p} y^{q}: {num} vs {}",
                        rule.order,
                        exact(p, q)
                    );
                }
            }
        }
    }

    #[test]
    fn face_quadrature_weights_sum_to_area() {
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.12).unwrap();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        let rule = QuadratureRule::order2();
        let pts = quadrature_points(&mesh, &rule);
        for (f, fq) in pts.iter().enumerate() {
            let s: f64 = fq.iter().map(|(_, w)| w).sum();
            assert_relative_eq!(s, mesh.area(f), max_relative = 1e-12);
        }
    }

    #[test]
    fn quadrature_surface_integral_converges() {
        // integral of |x|^2 over sphere of radius r is 4 pi r^4
        let exact = 4.0 * std::f64::consts::PI * 0.5f64.powi(4);
        let rule = QuadratureRule::order2();
        let mut errs = Vec::new();
        for h in [0.12, 0.06] {
            let mesh =
                marching_cubes(sphere_sdf(0.5), &GridSpec::new([-1.0; 3], [1.0; 3], h).unwrap())
                    .unwrap();
            let total: f64 = quadrature_points(&mesh, &rule)
                .iter()
                .flatten()
                .map(|(p, w)| p.norm_squared() * w)
                .sum();
            errs.push((total - exact).abs());
        }
        assert!(errs[1] < errs[0]);
        assert!(errs[1] / exact < 0.03);
    }

    #[test]
    fn obj_round_trip() {
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.2).unwrap();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        save_obj(&mesh, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back.num_faces(), mesh.num_faces());
        assert!(back.is_closed());
        assert_relative_eq!(back.total_area(), mesh.total_area(), max_relative = 1e-9);
    }

    #[test]
    fn contains_agrees_with_sdf_sign() {
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.1).unwrap();
        let mesh = marching_cubes(sphere_sdf(0.5), &grid).unwrap();
        assert!(mesh.contains(&Vec3::new(0.0, 0.1, 0.0)));
        assert!(!mesh.contains(&Vec3::new(0.8, 0.0, 0.0)));
        assert!(!mesh.contains(&Vec3::new(0.0, 0.0, 0.9)));
    }
}
