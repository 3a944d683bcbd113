//! Sound-soft exterior Helmholtz solver: Burton-Miller combined boundary
//! integral equation with piecewise-constant Galerkin elements, dense
//! assembly, GMRES solution, and far-field evaluation.
//!
//! The unknown is the normal derivative v of the total field on the surface.
//! It satisfies v + K'v - ik S v = 2 du_i/dnu - 2ik u_i, where S and K' are
//! the single-layer operator and its normal-derivative transpose. The
//! scattered field is u_s(x) = -int Phi(x,y) v(y) ds and the far field
//! u_inf(x_hat) = -(1/4pi) int exp(-ik x_hat.y) v(y) ds.

use crate::geometry::{QuadratureRule, TriangleMesh, Vec3};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("GMRES did not converge in {iters} iterations, final residual {residual:e}")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("density has {got} coefficients for a mesh with {want} faces")]
    DimensionMismatch { got: usize, want: usize },
}

/// Incident field: a plane wave or a weighted superposition of plane waves
/// (the adjoint source is a superposition with directions -x_hat_m).
#[derive(Debug, Clone)]
pub struct IncidentWave {
    pub k: f64,
    /// (complex amplitude, unit direction) pairs
    pub terms: Vec<(Complex64, Vec3)>,
}

impl IncidentWave {
    pub fn plane(k: f64, d: Vec3) -> Self {
        debug_assert!((d.norm() - 1.0).abs() < 1e-12);
        Self {
            k,
            terms: vec![(Complex64::new(1.0, 0.0), d)],
        }
    }

    pub fn superposition(k: f64, terms: Vec<(Complex64, Vec3)>) -> Self {
        debug_assert!(terms.iter().all(|(_, d)| (d.norm() - 1.0).abs() < 1e-12));
        Self { k, terms }
    }

    pub fn value(&self, y: &Vec3) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, d)| c * Complex64::new(0.0, self.k * d.dot(y)).exp())
            .sum()
    }

    pub fn normal_derivative(&self, y: &Vec3, nu: &Vec3) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, d)| {
                c * Complex64::new(0.0, self.k * d.dot(nu))
                    * Complex64::new(0.0, self.k * d.dot(y)).exp()
            })
            .sum()
    }

    /// Scale all amplitudes by a complex factor.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            k: self.k,
            terms: self.terms.iter().map(|(c, d)| (c * factor, *d)).collect(),
        }
    }
}

/// Piecewise-constant surface density (one complex coefficient per face).
#[derive(Debug, Clone)]
pub struct SurfaceDensity {
    pub coeffs: Vec<Complex64>,
}

impl SurfaceDensity {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

/// Assembled dense Burton-Miller operator for one mesh and wavenumber.
pub struct BemSystem<'a> {
    pub mesh: &'a TriangleMesh,
    pub k: f64,
    matrix: Vec<Complex64>,
    n: usize,
}

fn green(k: f64, x: &Vec3, y: &Vec3) -> Complex64 {
    let r = (x - y).norm();
    Complex64::new(0.0, k * r).exp() / (4.0 * std::f64::consts::PI * r)
}

// d/dnu(x) of the fundamental solution.
fn green_dnu_x(k: f64, x: &Vec3, y: &Vec3, nu: &Vec3) -> Complex64 {
    let rv = x - y;
    let r = rv.norm();
    let cosf = rv.dot(nu) / r;
    Complex64::new(0.0, k * r).exp() * (Complex64::new(-1.0, k * r) / (r * r))
        * cosf
        / (4.0 * std::f64::consts::PI)
}

const GL8_NODES: [f64; 8] = [
    0.019_855_071_751_231_86,
    0.101_666_761_293_186_64,
    0.237_233_795_041_835_5,
    0.408_282_678_752_175_1,
    0.591_717_321_247_824_9,
    0.762_766_204_958_164_5,
    0.898_333_238_706_813_4,
    0.980_144_928_248_768_1,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.050_614_268_145_188_13,
    0.111_190_517_226_687_23,
    0.156_853_322_938_943_65,
    0.181_341_891_689_181_0,
    0.181_341_891_689_181_0,
    0.156_853_322_938_943_65,
    0.111_190_517_226_687_23,
    0.050_614_268_145_188_13,
];

const GL4_NODES: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_9,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.173_927_422_568_727,
    0.326_072_577_431_273,
    0.326_072_577_431_273,
    0.173_927_422_568_727,
];

// Physical quadrature points of an explicit triangle.
fn tri_points(a: &Vec3, b: &Vec3, c: &Vec3, rule: &QuadratureRule) -> Vec<(Vec3, f64)> {
    let area = 0.5 * (b - a).cross(&(c - a)).norm();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| (a * p[0] + b * p[1] + c * p[2], w * area))
        .collect()
}

// Quadrature points after `levels` uniform 4-way subdivisions.
#[cfg(test)]
fn subdivided_points(
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
    rule: &QuadratureRule,
    levels: usize,
) -> Vec<(Vec3, f64)> {
    if levels == 0 {
        return tri_points(a, b, c, rule);
    }
    let ab = (a + b) / 2.0;
    let bc = (b + c) / 2.0;
    let ca = (c + a) / 2.0;
    let mut out = Vec::new();
    for (p, q, r) in [
        (*a, ab, ca),
        (ab, *b, bc),
        (ca, bc, *c),
        (ab, bc, ca),
    ] {
        out.extend(subdivided_points(&p, &q, &r, rule, levels - 1));
    }
    out
}

// Integral of Phi(x, .) over the triangle (a,b,c) with the 1/r singularity
// at x inside the triangle: split about x and apply the Duffy transform on
// each subtriangle with a 4x4 tensor Gauss rule.
fn duffy_single_layer(k: f64, x: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (p1, p2) in [(a, b), (b, c), (c, a)] {
        let area2 = (p1 - x).cross(&(p2 - x)).norm(); // 2 * subtriangle area
        if area2 < 1e-300 {
            continue;
        }
        for (iu, &u) in GL4_NODES.iter().enumerate() {
            for (iv, &v) in GL4_NODES.iter().enumerate() {
                // y = x + u * ((1-v) p1 + v p2 - x); Jacobian = u * area2
                let q = p1 * (1.0 - v) + p2 * v;
                let y = x + (q - x) * u;
                let w = GL4_WEIGHTS[iu] * GL4_WEIGHTS[iv] * u * area2;
                total += green(k, x, &y) * w;
            }
        }
    }
    total
}

// Euclidean distance from p to the closed triangle (a,b,c).
fn point_tri_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a));
    let nn = n.norm_squared();
    if nn > 1e-300 {
        let q = p - n * (n.dot(&(p - a)) / nn);
        // barycentric test for the projection
        let v0 = b - a;
        let v1 = c - a;
        let v2 = q - a;
        let d00 = v0.dot(&v0);
        let d01 = v0.dot(&v1);
        let d11 = v1.dot(&v1);
        let d20 = v2.dot(&v0);
        let d21 = v2.dot(&v1);
        let den = d00 * d11 - d01 * d01;
        let v = (d11 * d20 - d01 * d21) / den;
        let w = (d00 * d21 - d01 * d20) / den;
        if v >= 0.0 && w >= 0.0 && v + w <= 1.0 {
            return (p - q).norm();
        }
    }
    let seg = |s: &Vec3, e: &Vec3| -> f64 {
        let d = e - s;
        let t = (d.dot(&(p - s)) / d.norm_squared()).clamp(0.0, 1.0);
        (p - (s + d * t)).norm()
    };
    seg(a, b).min(seg(b, c)).min(seg(c, a))
}

// Quadrature on (a,b,c) graded toward the triangle `tgt`: subtriangles are
// split while their diameter exceeds theta times their distance to tgt.
#[allow(clippy::too_many_arguments)]
fn graded_points(
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
    tgt: &(Vec3, Vec3, Vec3),
    rule: &QuadratureRule,
    theta: f64,
    depth: usize,
    out: &mut Vec<(Vec3, f64)>,
) {
    let diam = (a - b).norm().max((b - c).norm()).max((c - a).norm());
    let cen = (a + b + c) / 3.0;
    let dist = point_tri_distance(&cen, &tgt.0, &tgt.1, &tgt.2);
    if depth > 0 && diam > theta * dist {
        let ab = (a + b) * 0.5;
        let bc = (b + c) * 0.5;
        let ca = (c + a) * 0.5;
        for (p, q, r) in [(*a, ab, ca), (ab, *b, bc), (ca, bc, *c), (ab, bc, ca)] {
            graded_points(&p, &q, &r, tgt, rule, theta, depth - 1, out);
        }
    } else {
        out.extend(tri_points(a, b, c, rule));
    }
}

// Outer quadrature for a test face sharing the edge (p,q) with the trial
// face: the integrand has a logarithmic layer along that edge, removed by
// the substitution u = v^3 in the direction of the opposite vertex r.
fn edge_layer_points(p: &Vec3, q: &Vec3, r: &Vec3) -> Vec<(Vec3, f64)> {
    let area2 = (q - p).cross(&(r - p)).norm();
    let mut out = Vec::with_capacity(64);
    for (is, &s) in GL8_NODES.iter().enumerate() {
        let base = p + (q - p) * s;
        for (iv, &v) in GL8_NODES.iter().enumerate() {
            let u = v * v * v;
            let x = base * (1.0 - u) + r * u;
            let w = GL8_WEIGHTS[is] * GL8_WEIGHTS[iv] * 3.0 * v * v * (1.0 - u) * area2;
            out.push((x, w));
        }
    }
    out
}

// Outer quadrature for a test face sharing only the vertex v0 with the
// trial face: Duffy map about v0 with the radial substitution u = v^2.
fn vertex_layer_points(v0: &Vec3, b: &Vec3, c: &Vec3) -> Vec<(Vec3, f64)> {
    let area2 = (b - v0).cross(&(c - v0)).norm();
    let mut out = Vec::with_capacity(64);
    for (is, &s) in GL8_NODES.iter().enumerate() {
        let dir = (b - v0) * (1.0 - s) + (c - v0) * s;
        for (iv, &v) in GL8_NODES.iter().enumerate() {
            let u = v * v;
            let x = v0 + dir * u;
            let w = GL8_WEIGHTS[is] * GL8_WEIGHTS[iv] * 2.0 * v * u * area2;
            out.push((x, w));
        }
    }
    out
}

// Exact static integrals over the flat triangle (a,b,c):
//   I = int 1/R ds(y),  G = int (x - y)/R^3 ds(y),  R = |x - y|.
// Edge-wise closed forms (logs along the edges plus a solid-angle part).
fn tri_static_potentials(a: &Vec3, b: &Vec3, c: &Vec3, x: &Vec3) -> (f64, Vec3) {
    let n = (b - a).cross(&(c - a)).normalize();
    let d = n.dot(&(x - a));
    let p0 = x - n * d;
    let verts = [a, b, c];
    let mut i1 = 0.0;
    let mut beta = 0.0;
    let mut gt = Vec3::zeros();
    for e in 0..3 {
        let pm = verts[e];
        let pp = verts[(e + 1) % 3];
        let s = (pp - pm).normalize();
        let m = s.cross(&n);
        let p0i = m.dot(&(pm - p0));
        let lp = s.dot(&(pp - p0));
        let lm = s.dot(&(pm - p0));
        let rp = (x - pp).norm();
        let rm = (x - pm).norm();
        let r0sq = p0i * p0i + d * d;
        if r0sq + lp * lp < 1e-300 || r0sq + lm * lm < 1e-300 {
            continue; // x coincides with an endpoint; edge contributes nothing
        }
        // (R + l)(R - l) = R0^2 on both ends: pick the well-conditioned quotient
        let f2 = if rm + lm > rp - lp {
            ((rp + lp) / (rm + lm)).ln()
        } else {
            ((rm - lm) / (rp - lp)).ln()
        };
        let bi = (p0i * lp).atan2(r0sq + d.abs() * rp) - (p0i * lm).atan2(r0sq + d.abs() * rm);
        i1 += p0i * f2 - d.abs() * bi;
        beta += bi;
        gt += m * f2;
    }
    (i1, gt + n * (d.signum() * beta))
}

// Inner integrals of Phi and dPhi/dnu(x) over face (a,b,c) by singularity
// subtraction: exact static part plus quadrature of the smooth remainder.
fn subtracted_inner(
    k: f64,
    x: &Vec3,
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
    nu: &Vec3,
    rule: &QuadratureRule,
) -> (Complex64, Complex64) {
    let inv4pi = 1.0 / (4.0 * std::f64::consts::PI);
    let (i1, g) = tri_static_potentials(a, b, c, x);
    let mut s = Complex64::new(i1 * inv4pi, 0.0);
    let mut kp = Complex64::new(-nu.dot(&g) * inv4pi, 0.0);
    for (y, w) in tri_points(a, b, c, rule) {
        let r = (x - y).norm();
        if r < 1e-14 {
            s += Complex64::new(0.0, k * inv4pi) * w;
            continue;
        }
        let eikr = Complex64::new(0.0, k * r).exp();
        // (e^{ikr} - 1)/(4 pi r): bounded remainder of the single layer
        s += (eikr - 1.0) * (inv4pi / r) * w;
        // remainder of dPhi/dnu(x); e^{ikr}(ikr - 1) + 1 = O(r^2)
        let q = eikr * Complex64::new(-1.0, k * r) + 1.0;
        kp += q * (nu.dot(&(x - y)) * inv4pi / (r * r * r)) * w;
    }
    (s, kp)
}

/// Galerkin pair integrals (single layer, K') of test face i against trial
/// face j, with singular and near-singular handling.
pub(crate) fn pair_integrals(
    mesh: &TriangleMesh,
    k: f64,
    i: usize,
    j: usize,
    near_threshold: f64,
    rule_far: &QuadratureRule,
    rule_near: &QuadratureRule,
) -> (Complex64, Complex64) {
    let nu = mesh.normal(i);
    let (ai, bi, ci) = mesh.face_vertices(i);
    let (aj, bj, cj) = mesh.face_vertices(j);
    if i == j {
        // K' vanishes on a flat element; single layer via Duffy per outer node.
        let outer = tri_points(&ai, &bi, &ci, rule_near);
        let mut s = Complex64::new(0.0, 0.0);
        for (x, wx) in outer {
            s += duffy_single_layer(k, &x, &aj, &bj, &cj) * wx;
        }
        return (s, Complex64::new(0.0, 0.0));
    }
    let dist = (mesh.centroid(i) - mesh.centroid(j)).norm();
    if dist < near_threshold {
        // inner integral by singularity subtraction, exact in the static
        // part; outer rule adapted to where the trial face touches face i
        let fi = mesh.faces[i];
        let fj = mesh.faces[j];
        let shared: Vec<usize> = fi.iter().copied().filter(|v| fj.contains(v)).collect();
        let verts = [ai, bi, ci];
        let outer = match shared.len() {
            2 => {
                // rotate so the shared edge comes first
                let mut idx = [0usize; 3];
                let mut n_sh = 0;
                let mut free = 0;
                for (t, v) in fi.iter().enumerate() {
                    if shared.contains(v) {
                        idx[n_sh] = t;
                        n_sh += 1;
                    } else {
                        free = t;
                    }
                }
                edge_layer_points(&verts[idx[0]], &verts[idx[1]], &verts[free])
            }
            1 => {
                let t0 = fi.iter().position(|v| *v == shared[0]).unwrap();
                vertex_layer_points(&verts[t0], &verts[(t0 + 1) % 3], &verts[(t0 + 2) % 3])
            }
            _ => {
                let mut pts = Vec::new();
                graded_points(&ai, &bi, &ci, &(aj, bj, cj), rule_near, 1.0, 4, &mut pts);
                pts
            }
        };
        let mut s = Complex64::new(0.0, 0.0);
        let mut kp = Complex64::new(0.0, 0.0);
        for (x, wx) in outer {
            let (si, ki) = subtracted_inner(k, &x, &aj, &bj, &cj, &nu, rule_near);
            s += si * wx;
            kp += ki * wx;
        }
        return (s, kp);
    }
    let (outer, inner) = if dist < 3.0 * near_threshold {
        // mid band: smooth but still rapidly varying kernel
        (
            tri_points(&ai, &bi, &ci, rule_near),
            tri_points(&aj, &bj, &cj, rule_near),
        )
    } else {
        (
            tri_points(&ai, &bi, &ci, rule_far),
            tri_points(&aj, &bj, &cj, rule_far),
        )
    };
    let mut s = Complex64::new(0.0, 0.0);
    let mut kp = Complex64::new(0.0, 0.0);
    for (x, wx) in &outer {
        for (y, wy) in &inner {
            let w = wx * wy;
            s += green(k, x, y) * w;
            kp += green_dnu_x(k, x, y, &nu) * w;
        }
    }
    (s, kp)
}

/// Assemble the dense Galerkin matrix of I + K' - ik S on the mesh.
pub fn assemble(mesh: &TriangleMesh, k: f64) -> Result<BemSystem<'_>, BemError> {
    assert!(k > 0.0);
    let n = mesh.num_faces();
    if n == 0 {
        return Err(BemError::DegenerateMesh("mesh has no faces".into()));
    }
    let near_threshold = 2.0 * mesh.mean_edge_length();
    let rule_far = QuadratureRule::order2();
    let rule_near = QuadratureRule::order4();
    let ik = Complex64::new(0.0, k);
    let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
    matrix
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, e) in row.iter_mut().enumerate() {
                let (s, kp) = pair_integrals(mesh, k, i, j, near_threshold, &rule_far, &rule_near);
                // the layer operators here carry no factor 2, so the combined
                // second-kind equation reads v + 2 K'v - 2ik Sv = rhs
                *e = (kp - ik * s) * 2.0;
                if i == j {
                    *e += Complex64::new(mesh.area(i), 0.0);
                }
            }
        });
    Ok(BemSystem { mesh, k, matrix, n })
}

impl BemSystem<'_> {
    pub fn num_unknowns(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.matrix
            .par_chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Galerkin right-hand side 2 du_i/dnu - 2ik u_i tested against the
    /// indicator of each face.
    pub fn rhs(&self, wave: &IncidentWave) -> Vec<Complex64> {
        let rule = QuadratureRule::order2();
        let two_ik = Complex64::new(0.0, 2.0 * self.k);
        (0..self.n)
            .into_par_iter()
            .map(|f| {
                let nu = self.mesh.normal(f);
                rule.on_face(self.mesh, f)
                    .into_iter()
                    .map(|(x, w)| {
                        (wave.normal_derivative(&x, &nu) * 2.0 - two_ik * wave.value(&x)) * w
                    })
                    .sum()
            })
            .collect()
    }
}

/// Solve the assembled system for the surface density with GMRES
/// (restart-free, up to 500 iterations).
pub fn solve_density(
    system: &BemSystem<'_>,
    wave: &IncidentWave,
    tol: f64,
) -> Result<SurfaceDensity, BemError> {
    assert!(tol > 0.0);
    let b = system.rhs(wave);
    let x = gmres(|v| system.matvec(v), &b, tol, 500)?;
    Ok(SurfaceDensity { coeffs: x })
}

/// Dense GMRES with modified Gram-Schmidt and Givens rotations.
pub fn gmres<F>(matvec: F, b: &[Complex64], tol: f64, max_iters: usize) -> Result<Vec<Complex64>, BemError>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let mut basis: Vec<Vec<Complex64>> = vec![b.iter().map(|v| v / bnorm).collect()];
    let m = max_iters.min(n);
    let mut h = vec![vec![Complex64::new(0.0, 0.0); m]; m + 1];
    let mut cs = vec![Complex64::new(0.0, 0.0); m];
    let mut sn = vec![Complex64::new(0.0, 0.0); m];
    let mut g = vec![Complex64::new(0.0, 0.0); m + 1];
    g[0] = Complex64::new(bnorm, 0.0);
    let mut iters = 0;
    let mut residual = 1.0;
    for j in 0..m {
        iters = j + 1;
        let mut w = matvec(&basis[j]);
        for i in 0..=j {
            let hij: Complex64 = basis[i]
                .iter()
                .zip(&w)
                .map(|(v, wv)| v.conj() * wv)
                .sum();
            h[i][j] = hij;
            for (wv, v) in w.iter_mut().zip(&basis[i]) {
                *wv -= hij * v;
            }
        }
        let wnorm = norm(&w);
        h[j + 1][j] = Complex64::new(wnorm, 0.0);
        // apply previous Givens rotations to the new column
        for i in 0..j {
            let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
            h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
            h[i][j] = t;
        }
        // new rotation to kill h[j+1][j]
        let (c, s) = givens(h[j][j], h[j + 1][j]);
        cs[j] = c;
        sn[j] = s;
        h[j][j] = c.conj() * h[j][j] + s.conj() * h[j + 1][j];
        h[j + 1][j] = Complex64::new(0.0, 0.0);
        g[j + 1] = -s * g[j];
        g[j] = c.conj() * g[j];
        residual = g[j + 1].norm() / bnorm;
        if residual <= tol || wnorm < 1e-300 {
            // back substitution on the j+1 x j+1 triangular system
            let dim = j + 1;
            let mut y = vec![Complex64::new(0.0, 0.0); dim];
            for r in (0..dim).rev() {
                let mut acc = g[r];
                for c2 in r + 1..dim {
                    acc -= h[r][c2] * y[c2];
                }
                y[r] = acc / h[r][r];
            }
            let mut x = vec![Complex64::new(0.0, 0.0); n];
            for (r, yr) in y.iter().enumerate() {
                for (xi, vi) in x.iter_mut().zip(&basis[r]) {
                    *xi += yr * vi;
                }
            }
            return Ok(x);
        }
        basis.push(w.iter().map(|v| v / wnorm).collect());
    }
    Err(BemError::NoConvergence { iters, residual })
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn givens(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
    }
    let t = (na * na + nb * nb).sqrt();
    let c = Complex64::new(na / t, 0.0);
    let s = (a / na) * (b.conj() / t);
    (c, s.conj())
}

/// Far-field pattern u_inf(x_hat) = -(1/4pi) int exp(-ik x_hat.y) v(y) ds.
pub fn far_field(
    mesh: &TriangleMesh,
    density: &SurfaceDensity,
    k: f64,
    directions: &[Vec3],
) -> Vec<Complex64> {
    let rule = QuadratureRule::order2();
    let quads: Vec<Vec<(Vec3, f64)>> =
        (0..mesh.num_faces()).map(|f| rule.on_face(mesh, f)).collect();
    directions
        .par_iter()
        .map(|xh| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (f, fq) in quads.iter().enumerate() {
                let mut phase = Complex64::new(0.0, 0.0);
                for (y, w) in fq {
                    phase += Complex64::new(0.0, -k * xh.dot(y)).exp() * *w;
                }
                acc += density.coeffs[f] * phase;
            }
            -acc / (4.0 * std::f64::consts::PI)
        })
        .collect()
}

/// Scattered field u_s(x) = -int Phi(x,y) v(y) ds at exterior points.
pub fn scattered_field_at(
    mesh: &TriangleMesh,
    density: &SurfaceDensity,
    k: f64,
    points: &[Vec3],
) -> Vec<Complex64> {
    let near = 2.0 * mesh.mean_edge_length();
    let rule_far = QuadratureRule::order2();
    let rule_near = QuadratureRule::order4();
    points
        .par_iter()
        .map(|x| {
            let mut acc = Complex64::new(0.0, 0.0);
            for f in 0..mesh.num_faces() {
                let (a, b, c) = mesh.face_vertices(f);
                let dist = (x - mesh.centroid(f)).norm();
                let phi = if dist < near {
                    // singularity subtraction keeps this exact arbitrarily
                    // close to (and on) the surface
                    subtracted_inner(k, x, &a, &b, &c, &mesh.normal(f), &rule_near).0
                } else {
                    let mut p = Complex64::new(0.0, 0.0);
                    for (y, w) in tri_points(&a, &b, &c, &rule_far) {
                        p += green(k, x, &y) * w;
                    }
                    p
                };
                acc += density.coeffs[f] * phi;
            }
            -acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic_oracle::{mie_far_field, mie_scattered_field, SphereScatterer};
    use crate::geometry::{marching_cubes, GridSpec};
    use crate::measurement::fibonacci_directions;

    fn sphere_mesh(r: f64, h: f64) -> TriangleMesh {
        marching_cubes(
            |x: &Vec3| x.norm() - r,
            &GridSpec::new([-1.0; 3], [1.0; 3], h).unwrap(),
        )
        .unwrap()
    }

    fn two_far_triangles(dist: f64) -> TriangleMesh {
        // two unit-area triangles separated along z
        let s = (2.0f64).sqrt(); // right triangle with legs s has area 1
        let vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(s, 0.0, 0.0),
            Vec3::new(0.0, s, 0.0),
            Vec3::new(0.0, 0.0, dist),
            Vec3::new(s, 0.0, dist),
            Vec3::new(0.0, s, dist),
        ];
        let faces = vec![[0, 1, 2], [3, 4, 5]];
        TriangleMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn static_potentials_match_brute_force() {
        let a = Vec3::new(0.1, -0.2, 0.0);
        let b = Vec3::new(0.9, 0.1, 0.05);
        let c = Vec3::new(0.3, 0.8, -0.1);
        let rule = QuadratureRule::order4();
        for x in [
            Vec3::new(0.4, 0.2, 0.7),   // above the face
            Vec3::new(0.4, 0.2, -0.6),  // below
            Vec3::new(2.0, 1.5, 0.3),   // off to the side
            Vec3::new(0.95, 0.12, 0.3), // close to an edge
        ] {
            let (i1, g) = tri_static_potentials(&a, &b, &c, &x);
            let mut i1_q = 0.0;
            let mut g_q = Vec3::zeros();
            for (y, w) in subdivided_points(&a, &b, &c, &rule, 5) {
                let r = x - y;
                let rn = r.norm();
                i1_q += w / rn;
                g_q += r * (w / (rn * rn * rn));
            }
            assert!((i1 - i1_q).abs() < 1e-6 * i1_q.abs(), "{i1} vs {i1_q}");
            assert!((g - g_q).norm() < 1e-5 * g_q.norm(), "{g:?} vs {g_q:?} at {x:?}");
        }
    }

    #[test]
    fn single_layer_static_limit() {
        // k -> 0: Phi -> 1/(4 pi r); entry ~ area^2 / (4 pi dist)
        let dist = 50.0;
        let mesh = two_far_triangles(dist);
        let (s, _) = pair_integrals(
            &mesh,
            1e-6,
            0,
            1,
            0.0,
            &QuadratureRule::order2(),
            &QuadratureRule::order4(),
        );
        let expect = 1.0 / (4.0 * std::f64::consts::PI * dist);
        assert!((s.re - expect).abs() / expect < 1e-3, "{} vs {expect}", s.re);
        assert!(s.im.abs() < 1e-4 * expect.abs() + 1e-4);
    }

    #[test]
    fn kprime_vanishes_for_coplanar_faces() {
        // both triangles in the plane z = 0
        let s = (2.0f64).sqrt();
        let vertices = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(s, 0.0, 0.0),
            Vec3::new(0.0, s, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(10.0 + s, 0.0, 0.0),
            Vec3::new(10.0, s, 0.0),
        ];
        let mesh = TriangleMesh::new(vertices, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let (_, kp) = pair_integrals(
            &mesh,
            2.0,
            0,
            1,
            0.0,
            &QuadratureRule::order2(),
            &QuadratureRule::order4(),
        );
        assert!(kp.norm() < 1e-14);
    }

    #[test]
    fn assembly_matches_refined_quadrature() {
        // row sums of the coarse assembly vs a heavily refined oracle
        let mesh = sphere_mesh(0.5, 0.3);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let n = system.num_unknowns();
        let ones = vec![Complex64::new(1.0, 0.0); n];
        let sums = system.matvec(&ones);
        let near = 2.0 * mesh.mean_edge_length();
        let rule = QuadratureRule::order4();
        let ik = Complex64::new(0.0, k);
        for i in 0..n.min(12) {
            let mut oracle = Complex64::new(mesh.area(i), 0.0);
            for j in 0..n {
                if i == j {
                    let (s, kp) =
                        pair_integrals(&mesh, k, i, j, near, &rule, &rule);
                    oracle += (kp - ik * s) * 2.0;
                    continue;
                }
                // refined oracle: near pairs get a deeper outer rule over the
                // exact-static inner integral, far pairs heavy tensor rules
                let (ai, bi, ci) = mesh.face_vertices(i);
                let (aj, bj, cj) = mesh.face_vertices(j);
                let nu = mesh.normal(i);
                let dist = (mesh.centroid(i) - mesh.centroid(j)).norm();
                let mut s = Complex64::new(0.0, 0.0);
                let mut kp = Complex64::new(0.0, 0.0);
                if dist < near {
                    let mut outer = Vec::new();
                    graded_points(&ai, &bi, &ci, &(aj, bj, cj), &rule, 0.3, 11, &mut outer);
                    for (x, wx) in outer {
                        let (si, ki) = subtracted_inner(k, &x, &aj, &bj, &cj, &nu, &rule);
                        s += si * wx;
                        kp += ki * wx;
                    }
                } else {
                    let outer = subdivided_points(&ai, &bi, &ci, &rule, 2);
                    let inner = subdivided_points(&aj, &bj, &cj, &rule, 2);
                    for (x, wx) in &outer {
                        for (y, wy) in &inner {
                            s += green(k, x, y) * (wx * wy);
                            kp += green_dnu_x(k, x, y, &nu) * (wx * wy);
                        }
                    }
                }
                oracle += (kp - ik * s) * 2.0;
            }
            let rel = (sums[i] - oracle).norm() / oracle.norm();
            assert!(rel < 1e-4, "row {i}: {} vs {}", sums[i], oracle);
        }
    }

    #[test]
    fn sphere_far_field_matches_mie() {
        let mesh = sphere_mesh(0.5, 0.12);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let d = Vec3::new(0.0, 0.0, 1.0);
        let density = solve_density(&system, &IncidentWave::plane(k, d), 1e-5).unwrap();
        let dirs = fibonacci_directions(100).unwrap();
        let ff = far_field(&mesh, &density, k, &dirs);
        let sphere = SphereScatterer::new(0.5, Vec3::zeros());
        let mut num = 0.0;
        let mut den = 0.0;
        for (xh, v) in dirs.iter().zip(&ff) {
            let exact = mie_far_field(&sphere, k, &d, xh).unwrap();
            num += (v - exact).norm_sqr();
            den += exact.norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.08, "relative L2 error {rel}");
    }

    #[test]
    fn gmres_residual_contract() {
        let mesh = sphere_mesh(0.5, 0.25);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let wave = IncidentWave::plane(k, Vec3::new(1.0, 0.0, 0.0));
        let b = system.rhs(&wave);
        let bnorm = norm(&b);
        for tol in [1e-1, 1e-5] {
            let x = solve_density(&system, &wave, tol).unwrap();
            let ax = system.matvec(&x.coeffs);
            let res: f64 = ax
                .iter()
                .zip(&b)
                .map(|(a, bb)| (a - bb).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / bnorm;
            assert!(res <= tol, "residual {res} exceeds tol {tol}");
        }
    }

    #[test]
    fn solution_point_symmetry() {
        // the sphere is invariant under x -> -x, so the far fields for
        // incident directions d and -d are point reflections of each other:
        // u_inf(d; xh) = u_inf(-d; -xh).  The discrete surfaces for the two
        // cases coincide, only the triangulation breaks the symmetry.
        let mesh = sphere_mesh(0.5, 0.125);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let d = Vec3::new(0.0, 0.0, 1.0);
        let vp = solve_density(&system, &IncidentWave::plane(k, d), 1e-8).unwrap();
        let vm = solve_density(&system, &IncidentWave::plane(k, -d), 1e-8).unwrap();
        let dirs = fibonacci_directions(64).unwrap();
        let neg: Vec<Vec3> = dirs.iter().map(|x| -x).collect();
        let fp = far_field(&mesh, &vp, k, &dirs);
        let fm = far_field(&mesh, &vm, k, &neg);
        let num: f64 = fp.iter().zip(&fm).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = fp.iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 0.02, "asymmetry {}", (num / den).sqrt());
    }

    #[test]
    fn density_linear_in_incident_amplitude() {
        let mesh = sphere_mesh(0.5, 0.25);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let d1 = Vec3::new(1.0, 0.0, 0.0);
        let d2 = Vec3::new(0.0, 1.0, 0.0);
        let c1 = Complex64::new(0.7, -0.3);
        let c2 = Complex64::new(-0.2, 1.1);
        let tol = 1e-13;
        let v1 = solve_density(&system, &IncidentWave::plane(k, d1), tol).unwrap();
        let v2 = solve_density(&system, &IncidentWave::plane(k, d2), tol).unwrap();
        let vc = solve_density(
            &system,
            &IncidentWave::superposition(k, vec![(c1, d1), (c2, d2)]),
            tol,
        )
        .unwrap();
        let scale: f64 = vc.coeffs.iter().map(|v| v.norm()).sum();
        for i in 0..mesh.num_faces() {
            let lin = c1 * v1.coeffs[i] + c2 * v2.coeffs[i];
            assert!((vc.coeffs[i] - lin).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn zero_density_zero_fields() {
        let mesh = sphere_mesh(0.5, 0.25);
        let density = SurfaceDensity::zeros(mesh.num_faces());
        let dirs = fibonacci_directions(5).unwrap();
        for v in far_field(&mesh, &density, 1.0, &dirs) {
            assert_eq!(v, Complex64::new(0.0, 0.0));
        }
        for v in scattered_field_at(&mesh, &density, 1.0, &[Vec3::new(2.0, 0.0, 0.0)]) {
            assert_eq!(v, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn scattered_field_matches_mie_at_exterior_point() {
        let mesh = sphere_mesh(0.5, 0.12);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let d = Vec3::new(1.0, 0.0, 0.0);
        let density = solve_density(&system, &IncidentWave::plane(k, d), 1e-5).unwrap();
        let sphere = SphereScatterer::new(0.5, Vec3::zeros());
        for p in [Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, -2.0, 1.5)] {
            let got = scattered_field_at(&mesh, &density, k, &[p])[0];
            let exact = mie_scattered_field(&sphere, k, &d, &p).unwrap();
            assert!(
                (got - exact).norm() / exact.norm() < 0.05,
                "{got} vs {exact}"
            );
        }
    }

    #[test]
    fn total_field_small_on_boundary() {
        let mesh = sphere_mesh(0.5, 0.12);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let wave = IncidentWave::plane(k, Vec3::new(0.0, 1.0, 0.0));
        let density = solve_density(&system, &wave, 1e-5).unwrap();
        // centroids pushed slightly outward
        let pts: Vec<Vec3> = (0..mesh.num_faces())
            .step_by(17)
            .map(|f| mesh.centroid(f) + mesh.normal(f) * (0.01 * mesh.mean_edge_length()))
            .collect();
        let us = scattered_field_at(&mesh, &density, k, &pts);
        let mut worst: f64 = 0.0;
        for (p, s) in pts.iter().zip(&us) {
            let ui = wave.value(p);
            worst = worst.max((ui + s).norm() / ui.norm());
        }
        assert!(worst < 0.05, "total field on boundary {worst}");
    }

    #[test]
    fn reciprocity_on_bem_far_field() {
        let mesh = sphere_mesh(0.5, 0.125);
        let k = std::f64::consts::PI;
        let system = assemble(&mesh, k).unwrap();
        let d = Vec3::new(1.0, 2.0, -0.5).normalize();
        let xh = Vec3::new(0.3, -1.0, 0.8).normalize();
        let v1 = solve_density(&system, &IncidentWave::plane(k, d), 1e-8).unwrap();
        let a = far_field(&mesh, &v1, k, &[xh])[0];
        let v2 = solve_density(&system, &IncidentWave::plane(k, -xh), 1e-8).unwrap();
        let b = far_field(&mesh, &v2, k, &[-d])[0];
        assert!((a - b).norm() / a.norm() < 0.04, "{a} vs {b}");
    }
}
