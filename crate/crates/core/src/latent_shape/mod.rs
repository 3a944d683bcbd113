//! Latent implicit-surface representation f(z, x): an analytic
//! ellipsoid/superquadric family and a small learned decoder share one
//! interface for evaluation, spatial/latent gradients, and marching-cubes
//! surface extraction.

mod mlp;

pub use mlp::{
    load_codes, load_dataset, load_weights, save_codes, save_dataset, save_weights,
    train_decoder, DecoderWeights, TrainOptions,
};

use crate::geometry::{marching_cubes, GeometryError, GridSpec, TriangleMesh, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("latent dimension mismatch: decoder expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero level set is empty or outside the grid: {0}")]
    NoSurface(String),
    #[error("extracted surface is irregular: |grad f| = {grad_norm:.3e} < {g_min:.3e} at a vertex")]
    IrregularSurface { grad_norm: f64, g_min: f64 },
    #[error("empty training dataset")]
    EmptyDataset,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("weight file malformed: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The latent code z, the sole unknown of the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub z: Vec<f64>,
}

impl LatentVector {
    pub fn new(z: Vec<f64>) -> Self {
        assert!(z.iter().all(|v| v.is_finite()));
        LatentVector { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn zeros(dim: usize) -> Self {
        LatentVector { z: vec![0.0; dim] }
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Concrete shape parameters decoded from z by the analytic backend.
///
/// center_i = 0.2 tanh(z_i), semi_axes_i = 0.15 + 0.65 sigmoid(z_{3+i}),
/// exponent p = 2 + tanh(z_7); the zero set therefore always stays inside
/// (-1,1)^3 and p ranges over (1,3) with p=2 at z_7=0.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFamilyParams {
    pub center: Vec3,
    pub semi_axes: [f64; 3],
    pub exponent: f64,
}

pub const ANALYTIC_DIM: usize = 7;
const CENTER_SCALE: f64 = 0.2;
const AXIS_MIN: f64 = 0.15;
const AXIS_MAX: f64 = 0.8;

impl ShapeFamilyParams {
    pub fn from_latent(z: &LatentVector) -> Result<Self, LatentError> {
        if z.dim() != ANALYTIC_DIM {
            return Err(LatentError::DimensionMismatch {
                expected: ANALYTIC_DIM,
                got: z.dim(),
            });
        }
        let c = Vec3::new(
            CENTER_SCALE * z.z[0].tanh(),
            CENTER_SCALE * z.z[1].tanh(),
            CENTER_SCALE * z.z[2].tanh(),
        );
        let ax = |t: f64| AXIS_MIN + (AXIS_MAX - AXIS_MIN) * sigmoid(t);
        Ok(ShapeFamilyParams {
            center: c,
            semi_axes: [ax(z.z[3]), ax(z.z[4]), ax(z.z[5])],
            exponent: 2.0 + z.z[6].tanh(),
        })
    }

    /// Latent code that decodes to the given ellipsoid with p = 2.
    /// Panics if center or axes fall outside the family's range.
    pub fn encode_ellipsoid(center: &Vec3, semi_axes: &[f64; 3]) -> LatentVector {
        let mut z = vec![0.0; ANALYTIC_DIM];
        for i in 0..3 {
            let t = center[i] / CENTER_SCALE;
            assert!(t.abs() < 1.0, "center outside the analytic family");
            z[i] = t.atanh();
            let u = (semi_axes[i] - AXIS_MIN) / (AXIS_MAX - AXIS_MIN);
            assert!(u > 0.0 && u < 1.0, "semi-axis outside the analytic family");
            z[3 + i] = (u / (1.0 - u)).ln();
        }
        LatentVector::new(z)
    }

    pub fn encode_sphere(radius: f64, center: &Vec3) -> LatentVector {
        Self::encode_ellipsoid(center, &[radius; 3])
    }

    /// Scaled-implicit superquadric signed distance:
    /// s = (N - 1) (a1 a2 a3)^{1/3} with N = (sum |x~_i|^p)^{1/p},
    /// x~ = (x - c)/a. Exact for spheres, approximate otherwise.
    pub fn sdf(&self, x: &Vec3) -> f64 {
        let m = (self.semi_axes[0] * self.semi_axes[1] * self.semi_axes[2]).cbrt();
        (self.pnorm(x) - 1.0) * m
    }

    fn pnorm(&self, x: &Vec3) -> f64 {
        let p = self.exponent;
        let mut g = 0.0;
        for i in 0..3 {
            let t = ((x[i] - self.center[i]) / self.semi_axes[i]).abs();
            g += t.powf(p);
        }
        g.powf(1.0 / p)
    }
}

/// A latent-to-SDF decoder: either the analytic family or a trained MLP.
#[derive(Debug, Clone)]
pub enum Decoder {
    Analytic,
    Learned(DecoderWeights),
}

impl Decoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Analytic => ANALYTIC_DIM,
            Decoder::Learned(w) => w.latent_dim,
        }
    }

    fn check_dim(&self, z: &LatentVector) -> Result<(), LatentError> {
        if z.dim() != self.latent_dim() {
            return Err(LatentError::DimensionMismatch {
                expected: self.latent_dim(),
                got: z.dim(),
            });
        }
        Ok(())
    }

    /// f(z, x).
    pub fn evaluate(&self, z: &LatentVector, x: &Vec3) -> Result<f64, LatentError> {
        self.check_dim(z)?;
        match self {
            Decoder::Analytic => Ok(ShapeFamilyParams::from_latent(z)?.sdf(x)),
            Decoder::Learned(w) => Ok(w.forward(&z.z, x)),
        }
    }

    /// Spatial gradient d f / d x (exact, not finite differences).
    pub fn grad_x(&self, z: &LatentVector, x: &Vec3) -> Result<Vec3, LatentError> {
        self.check_dim(z)?;
        match self {
            Decoder::Analytic => Ok(analytic_grads(z, x)?.1),
            Decoder::Learned(w) => {
                let g = w.grad_input(&z.z, x);
                let n = w.latent_dim;
                Ok(Vec3::new(g[n], g[n + 1], g[n + 2]))
            }
        }
    }

    /// Latent gradient d f / d z (exact, not finite differences).
    pub fn grad_z(&self, z: &LatentVector, x: &Vec3) -> Result<Vec<f64>, LatentError> {
        self.check_dim(z)?;
        match self {
            Decoder::Analytic => Ok(analytic_grads(z, x)?.0),
            Decoder::Learned(w) => {
                let mut g = w.grad_input(&z.z, x);
                g.truncate(w.latent_dim);
                Ok(g)
            }
        }
    }
}

// Both gradients of the analytic family at once.
fn analytic_grads(z: &LatentVector, x: &Vec3) -> Result<(Vec<f64>, Vec3), LatentError> {
    let sp = ShapeFamilyParams::from_latent(z)?;
    let p = sp.exponent;
    let m = (sp.semi_axes[0] * sp.semi_axes[1] * sp.semi_axes[2]).cbrt();
    let mut xt = [0.0; 3];
    let mut g = 0.0; // sum |x~|^p
    let mut dg_dp = 0.0; // sum |x~|^p ln|x~|
    for i in 0..3 {
        xt[i] = (x[i] - sp.center[i]) / sp.semi_axes[i];
        let a = xt[i].abs();
        if a > 0.0 {
            let ap = a.powf(p);
            g += ap;
            dg_dp += ap * a.ln();
        }
    }
    if g < 1e-300 {
        // the family's distance is not differentiable at the center
        return Ok((vec![0.0; ANALYTIC_DIM], Vec3::zeros()));
    }
    let n = g.powf(1.0 / p); // p-norm of x~
    // dN/dx~_i
    let dn_dxt = |i: usize| -> f64 {
        let a = xt[i].abs();
        if a == 0.0 {
            0.0
        } else {
            g.powf(1.0 / p - 1.0) * a.powf(p - 1.0) * xt[i].signum()
        }
    };
    let mut gx = Vec3::zeros();
    let mut gz = vec![0.0; ANALYTIC_DIM];
    for i in 0..3 {
        let d = dn_dxt(i);
        gx[i] = m * d / sp.semi_axes[i];
        // center: x~_i = (x_i - c_i)/a_i, dc/dz = 0.2 (1 - tanh^2)
        let dc = CENTER_SCALE * (1.0 - z.z[i].tanh().powi(2));
        gz[i] = -m * d / sp.semi_axes[i] * dc;
        // semi-axis: dx~_i/da_i = -x~_i/a_i and dm/da_i = m/(3 a_i)
        let s = sigmoid(z.z[3 + i]);
        let da = (AXIS_MAX - AXIS_MIN) * s * (1.0 - s);
        gz[3 + i] = (m * d * (-xt[i] / sp.semi_axes[i]) + (n - 1.0) * m / (3.0 * sp.semi_axes[i]))
            * da;
    }
    // exponent: dN/dp = N (dG/dp / (p G) - ln G / p^2)
    let dn_dp = n * (dg_dp / (p * g) - g.ln() / (p * p));
    gz[6] = m * dn_dp * (1.0 - z.z[6].tanh().powi(2));
    Ok((gz, gx))
}

/// Marching-cubes extraction of {f(z, .) = 0} with a regularity check
/// |grad_x f| >= g_min at every output vertex.
pub fn extract_surface(
    decoder: &Decoder,
    z: &LatentVector,
    grid: &GridSpec,
) -> Result<TriangleMesh, LatentError> {
    extract_surface_with(decoder, z, grid, 1e-6)
}

pub fn extract_surface_with(
    decoder: &Decoder,
    z: &LatentVector,
    grid: &GridSpec,
    g_min: f64,
) -> Result<TriangleMesh, LatentError> {
    decoder.check_dim(z)?;
    let mesh = marching_cubes(
        |x: &Vec3| decoder.evaluate(z, x).expect("dimension checked above"),
        grid,
    )
    .map_err(|e| match e {
        GeometryError::NoSurface => LatentError::NoSurface("level set empty on grid".into()),
        GeometryError::OpenSurface(n) => {
            LatentError::NoSurface(format!("level set leaves the grid ({n} boundary hits)"))
        }
        other => LatentError::Geometry(other),
    })?;
    for v in &mesh.vertices {
        let gn = decoder.grad_x(z, v)?.norm();
        if gn < g_min {
            return Err(LatentError::IrregularSurface {
                grad_norm: gn,
                g_min,
            });
        }
    }
    Ok(mesh)
}

/// Labeled SDF samples for one shape.
#[derive(Debug, Clone)]
pub struct SdfSampleSet {
    pub samples: Vec<(Vec3, f64)>,
}

/// Draw `n_points` samples for an analytic shape: a near-surface fraction
/// offset by an isotropic Gaussian of width `sigma`, the rest uniform in
/// the cube (-1,1)^3; labels are the family's signed distance.
pub fn sample_sdf(
    shape: &ShapeFamilyParams,
    n_points: usize,
    sigma: f64,
    uniform_fraction: f64,
    seed: u64,
) -> SdfSampleSet {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    assert!(n_points > 0);
    assert!((0.0..=1.0).contains(&uniform_fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_uniform = (n_points as f64 * uniform_fraction).round() as usize;
    let mut samples = Vec::with_capacity(n_points);
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    for i in 0..n_points {
        let x = if i < n_uniform {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        } else {
            // surface point along a random direction (the family is
            // star-shaped about its center), then a Gaussian offset
            let mut d = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
            if d.norm() < 1e-12 {
                d = Vec3::new(1.0, 0.0, 0.0);
            }
            d.normalize_mut();
            // t with pnorm(c + t d) = 1
            let p = shape.exponent;
            let mut s = 0.0;
            for j in 0..3 {
                s += (d[j] / shape.semi_axes[j]).abs().powf(p);
            }
            let t = 1.0 / s.powf(1.0 / p);
            let xs = shape.center + d * t;
            Vec3::new(
                (xs.x + sigma * normal(&mut rng)).clamp(-1.0, 1.0),
                (xs.y + sigma * normal(&mut rng)).clamp(-1.0, 1.0),
                (xs.z + sigma * normal(&mut rng)).clamp(-1.0, 1.0),
            )
        };
        samples.push((x, shape.sdf(&x)));
    }
    SdfSampleSet { samples }
}
