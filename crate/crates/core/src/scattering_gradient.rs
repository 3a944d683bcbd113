//! Loss evaluation and latent-gradient assembly: least-squares and
//! phaseless losses, the adjoint source, the shape-derivative gradient with
//! respect to the latent code, and its backscattering closed form.

use crate::geometry::{TriangleMesh, Vec3};
use crate::helmholtz_bem::{self, BemError, IncidentWave, SurfaceDensity};
use crate::latent_shape::{Decoder, LatentError, LatentVector};
use crate::measurement::{
    phaseless_transform, FarFieldData, MeasurementError, MeasurementMode,
};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradientError {
    #[error("far-field data configurations do not match")]
    ConfigMismatch,
    #[error("phaseless smoothing epsilon must be positive")]
    NonPositiveEpsilon,
    #[error("operation not defined in {0} mode")]
    ModeMismatch(MeasurementMode),
    #[error("surface is irregular for the gradient: |grad_x f| = {0:.3e}")]
    IrregularSurface(f64),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Bem(#[from] BemError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

const G_MIN: f64 = 1e-6;

/// Per-entry data misfit for the current candidate, plus everything the
/// adjoint source needs (observation directions; raw candidate far field in
/// phaseless mode).
#[derive(Debug, Clone)]
pub struct Residuals {
    /// values[l][m]; real (imaginary part zero) in phaseless mode.
    pub values: Vec<Vec<Complex64>>,
    pub mode: MeasurementMode,
    pub eps: f64,
    /// observation directions per incident index.
    pub directions: Vec<Vec<Vec3>>,
    /// raw (complex) candidate far field, kept in phaseless mode.
    sim: Option<Vec<Vec<Complex64>>>,
}

impl Residuals {
    /// Misfit between the candidate's raw far field and observed data. The
    /// observed values are already modulus-transformed in phaseless mode;
    /// the candidate's are transformed here.
    pub fn compute(
        sim_raw: &[Vec<Complex64>],
        obs: &FarFieldData,
    ) -> Result<Self, GradientError> {
        let cfg = &obs.config;
        if sim_raw.len() != obs.values.len()
            || sim_raw
                .iter()
                .zip(&obs.values)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(GradientError::ConfigMismatch);
        }
        if cfg.mode == MeasurementMode::Phaseless && !(cfg.phaseless_eps > 0.0) {
            return Err(GradientError::NonPositiveEpsilon);
        }
        let values = sim_raw
            .iter()
            .zip(&obs.values)
            .map(|(srow, orow)| {
                srow.iter()
                    .zip(orow)
                    .map(|(s, o)| match cfg.mode {
                        MeasurementMode::Phaseless => Complex64::new(
                            phaseless_transform(*s, cfg.phaseless_eps) - o.re,
                            0.0,
                        ),
                        _ => s - o,
                    })
                    .collect()
            })
            .collect();
        let directions = (0..cfg.num_incident())
            .map(|l| cfg.observations_for(l))
            .collect();
        Ok(Residuals {
            values,
            mode: cfg.mode,
            eps: cfg.phaseless_eps,
            directions,
            sim: if cfg.mode == MeasurementMode::Phaseless {
                Some(sim_raw.to_vec())
            } else {
                None
            },
        })
    }

    /// (1/2LM) sum |residual|^2.
    pub fn loss(&self) -> f64 {
        let l = self.values.len();
        let m = self.values.first().map_or(0, |r| r.len());
        if l == 0 || m == 0 {
            return 0.0;
        }
        let s: f64 = self
            .values
            .iter()
            .flat_map(|row| row.iter().map(|v| v.norm_sqr()))
            .sum();
        s / (2.0 * l as f64 * m as f64)
    }
}

/// (1/2LM) sum |sim - obs|^2 over matching data sets.
pub fn loss(sim: &FarFieldData, obs: &FarFieldData) -> Result<f64, GradientError> {
    sim.check_compatible(obs)
        .map_err(|_| GradientError::ConfigMismatch)?;
    let l = sim.values.len() as f64;
    let m = sim.values[0].len() as f64;
    let s: f64 = sim
        .values
        .iter()
        .zip(&obs.values)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()))
        .sum();
    Ok(s / (2.0 * l * m))
}

/// Phaseless loss on raw complex far fields:
/// (1/2LM) sum |g(u) - g(u*)|^2 with g(u) = |u|^2 / sqrt(|u|^2 + eps).
pub fn phaseless_loss(
    sim: &FarFieldData,
    obs: &FarFieldData,
    eps: f64,
) -> Result<f64, GradientError> {
    if !(eps > 0.0) {
        return Err(GradientError::NonPositiveEpsilon);
    }
    sim.check_compatible(obs)
        .map_err(|_| GradientError::ConfigMismatch)?;
    let l = sim.values.len() as f64;
    let m = sim.values[0].len() as f64;
    let s: f64 = sim
        .values
        .iter()
        .zip(&obs.values)
        .flat_map(|(a, b)| {
            a.iter().zip(b).map(move |(x, y)| {
                let d = phaseless_transform(*x, eps) - phaseless_transform(*y, eps);
                d * d
            })
        })
        .sum();
    Ok(s / (2.0 * l * m))
}

/// Default phaseless smoothing: 1e-8 of the mean squared data magnitude.
pub fn default_phaseless_eps(raw: &[Vec<Complex64>]) -> f64 {
    let n: usize = raw.iter().map(|r| r.len()).sum();
    if n == 0 {
        return 1e-8;
    }
    let mean: f64 = raw
        .iter()
        .flat_map(|r| r.iter().map(|v| v.norm_sqr()))
        .sum::<f64>()
        / n as f64;
    1e-8 * mean.max(f64::MIN_POSITIVE)
}

/// The adjoint incident superposition w_l^i: coefficients against plane
/// waves with directions -x_m.
#[derive(Debug, Clone)]
pub struct AdjointSource {
    pub terms: Vec<(Complex64, Vec3)>,
}

impl AdjointSource {
    pub fn wave(&self, k: f64) -> IncidentWave {
        IncidentWave::superposition(k, self.terms.clone())
    }
}

/// Adjoint source for incident index l:
/// c_m = (1/4 pi M) conj(r_ml) in full mode; the phaseless variant carries
/// the smoothed-modulus chain factor and conj(u) of the candidate field.
pub fn adjoint_source(res: &Residuals, l: usize) -> Result<AdjointSource, GradientError> {
    if res.mode == MeasurementMode::Backscatter {
        return Err(GradientError::ModeMismatch(res.mode));
    }
    let m = res.values[l].len() as f64;
    let scale = 1.0 / (4.0 * std::f64::consts::PI * m);
    let terms = res.values[l]
        .iter()
        .zip(&res.directions[l])
        .enumerate()
        .map(|(mi, (r, xh))| {
            let c = match res.mode {
                MeasurementMode::Phaseless => {
                    let u = res.sim.as_ref().expect("raw field kept in phaseless mode")[l][mi];
                    let m2 = u.norm_sqr();
                    let chain = (m2 + 2.0 * res.eps) / (m2 + res.eps).powf(1.5);
                    r.re * chain * u.conj() * scale
                }
                _ => r.conj() * scale,
            };
            (c, -xh)
        })
        .collect();
    Ok(AdjointSource { terms })
}

// Common reduction: (1/L) Re sum_l sum_faces q_l(face) * area *
// grad_z f / |grad_x f| at face centroids.
fn surface_reduce(
    decoder: &Decoder,
    z: &LatentVector,
    mesh: &TriangleMesh,
    face_weights: impl Fn(usize) -> Complex64,
    l_total: usize,
) -> Result<Vec<f64>, GradientError> {
    let dim = decoder.latent_dim();
    let mut g = vec![0.0; dim];
    for f in 0..mesh.num_faces() {
        let c = mesh.centroid(f);
        let gx = decoder.grad_x(z, &c)?.norm();
        if gx < G_MIN {
            return Err(GradientError::IrregularSurface(gx));
        }
        let gz = decoder.grad_z(z, &c)?;
        let w = face_weights(f) * mesh.area(f);
        for (gi, gzi) in g.iter_mut().zip(&gz) {
            *gi += w.re * gzi / gx / l_total as f64;
        }
    }
    Ok(g)
}

/// Adjoint-state latent gradient: u_l and w_l are the forward and adjoint
/// normal-derivative densities on the same mesh,
/// grad L(z) = (1/L) Re sum_l int (du_l/dnu)(dw_l/dnu) grad_z f / |grad_x f| ds.
pub fn latent_gradient(
    decoder: &Decoder,
    z: &LatentVector,
    mesh: &TriangleMesh,
    forward: &[SurfaceDensity],
    adjoint: &[SurfaceDensity],
    l_total: usize,
) -> Result<Vec<f64>, GradientError> {
    assert_eq!(forward.len(), adjoint.len());
    for d in forward.iter().chain(adjoint) {
        assert_eq!(d.coeffs.len(), mesh.num_faces(), "density not on this mesh");
    }
    surface_reduce(
        decoder,
        z,
        mesh,
        |f| {
            forward
                .iter()
                .zip(adjoint)
                .map(|(u, w)| u.coeffs[f] * w.coeffs[f])
                .sum()
        },
        l_total,
    )
}

/// Backscattering closed form (no adjoint solve):
/// grad L(z) = (1/4 pi L) Re sum_l conj(r_l) int (du_l/dnu)^2 grad_z f / |grad_x f| ds.
pub fn backscatter_gradient(
    decoder: &Decoder,
    z: &LatentVector,
    mesh: &TriangleMesh,
    forward: &[SurfaceDensity],
    residuals: &[Complex64],
    l_total: usize,
) -> Result<Vec<f64>, GradientError> {
    assert_eq!(forward.len(), residuals.len());
    let scale = 1.0 / (4.0 * std::f64::consts::PI);
    surface_reduce(
        decoder,
        z,
        mesh,
        |f| {
            forward
                .iter()
                .zip(residuals)
                .map(|(u, r)| r.conj() * u.coeffs[f] * u.coeffs[f] * scale)
                .sum()
        },
        l_total,
    )
}

/// Forward solves on a candidate mesh: densities and raw far-field rows.
pub fn forward_fields(
    mesh: &TriangleMesh,
    cfg: &crate::measurement::MeasurementConfig,
    gmres_tol: f64,
) -> Result<(Vec<SurfaceDensity>, Vec<Vec<Complex64>>), GradientError> {
    let system = helmholtz_bem::assemble(mesh, cfg.k)?;
    let mut densities = Vec::with_capacity(cfg.num_incident());
    let mut rows = Vec::with_capacity(cfg.num_incident());
    for (l, d) in cfg.incident.iter().enumerate() {
        let wave = IncidentWave::plane(cfg.k, *d);
        let density = helmholtz_bem::solve_density(&system, &wave, gmres_tol)?;
        rows.push(helmholtz_bem::far_field(
            mesh,
            &density,
            cfg.k,
            &cfg.observations_for(l),
        ));
        densities.push(density);
    }
    Ok((densities, rows))
}

/// Loss and latent gradient of the candidate (decoder, z) surface `mesh`
/// against observed data, dispatching on the data mode. One assembly, L
/// forward solves, and (except in backscatter mode) L adjoint solves.
pub fn loss_and_gradient(
    decoder: &Decoder,
    z: &LatentVector,
    mesh: &TriangleMesh,
    obs: &FarFieldData,
    gmres_tol: f64,
) -> Result<(f64, Vec<f64>), GradientError> {
    let cfg = &obs.config;
    let system = helmholtz_bem::assemble(mesh, cfg.k)?;
    let mut densities = Vec::with_capacity(cfg.num_incident());
    let mut rows = Vec::with_capacity(cfg.num_incident());
    for (l, d) in cfg.incident.iter().enumerate() {
        let wave = IncidentWave::plane(cfg.k, *d);
        let density = helmholtz_bem::solve_density(&system, &wave, gmres_tol)?;
        rows.push(helmholtz_bem::far_field(
            mesh,
            &density,
            cfg.k,
            &cfg.observations_for(l),
        ));
        densities.push(density);
    }
    let res = Residuals::compute(&rows, obs)?;
    let loss = res.loss();
    let l_total = cfg.num_incident();
    let grad = match cfg.mode {
        MeasurementMode::Backscatter => {
            let diag: Vec<Complex64> = res.values.iter().map(|r| r[0]).collect();
            backscatter_gradient(decoder, z, mesh, &densities, &diag, l_total)?
        }
        _ => {
            let mut adjoints = Vec::with_capacity(l_total);
            for l in 0..l_total {
                let src = adjoint_source(&res, l)?;
                adjoints.push(helmholtz_bem::solve_density(
                    &system,
                    &src.wave(cfg.k),
                    gmres_tol,
                )?);
            }
            latent_gradient(decoder, z, mesh, &densities, &adjoints, l_total)?
        }
    };
    Ok((loss, grad))
}

/// Stochastic coordinate masking: keep each coordinate with probability p
/// and scale kept ones by 1/p, so the masked gradient is unbiased.
pub fn mask_gradient(g: &mut [f64], p: f64, rng: &mut impl Rng) {
    assert!(p > 0.0 && p <= 1.0);
    if p >= 1.0 {
        return;
    }
    for v in g.iter_mut() {
        if rng.gen::<f64>() < p {
            *v /= p;
        } else {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::latent_shape::{extract_surface, ShapeFamilyParams};
    use crate::measurement::{fibonacci_directions, simulate_data, MeasurementConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn full_config(k: f64, l: usize, m: usize) -> MeasurementConfig {
        MeasurementConfig::new(
            k,
            fibonacci_directions(l).unwrap(),
            fibonacci_directions(m).unwrap(),
            MeasurementMode::Full,
            0.0,
        )
        .unwrap()
    }

    fn data_with(cfg: &MeasurementConfig, values: Vec<Vec<Complex64>>) -> FarFieldData {
        FarFieldData {
            config: cfg.clone(),
            values,
            delta: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn loss_formula() {
        let cfg = full_config(std::f64::consts::PI, 4, 100);
        let unit = vec![vec![Complex64::new(0.6, 0.8); 100]; 4];
        let zero = vec![vec![Complex64::new(0.0, 0.0); 100]; 4];
        let a = data_with(&cfg, unit.clone());
        let b = data_with(&cfg, zero);
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
        // all residuals of modulus 1
        assert!((loss(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        // random arrays vs elementwise reference
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rnd = || {
            (0..4)
                .map(|_| {
                    (0..100)
                        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        let va = rnd();
        let vb = rnd();
        let mut reference = 0.0;
        for l in 0..4 {
            for m in 0..100 {
                reference += (va[l][m] - vb[l][m]).norm_sqr();
            }
        }
        reference /= 2.0 * 4.0 * 100.0;
        let got = loss(&data_with(&cfg, va), &data_with(&cfg, vb)).unwrap();
        assert!((got - reference).abs() < 1e-14);
    }

    #[test]
    fn loss_rejects_mismatched_configs() {
        let a = data_with(&full_config(1.0, 2, 3), vec![vec![Complex64::new(0.0, 0.0); 3]; 2]);
        let b = data_with(&full_config(2.0, 2, 3), vec![vec![Complex64::new(0.0, 0.0); 3]; 2]);
        assert!(matches!(loss(&a, &b), Err(GradientError::ConfigMismatch)));
    }

    #[test]
    fn phaseless_loss_properties() {
        let cfg = full_config(1.0, 1, 4);
        let base = vec![vec![
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.3, 0.1),
            Complex64::new(0.0, 2.0),
            Complex64::new(0.7, -0.7),
        ]];
        let a = data_with(&cfg, base.clone());
        assert_eq!(phaseless_loss(&a, &a, 1e-3).unwrap(), 0.0);
        // global phase rotation leaves the loss at zero
        let rot = Complex64::from_polar(1.0, 1.234);
        let b = data_with(
            &cfg,
            base.iter()
                .map(|r| r.iter().map(|v| v * rot).collect())
                .collect(),
        );
        assert!(phaseless_loss(&a, &b, 1e-3).unwrap() < 1e-28);
        assert!(matches!(
            phaseless_loss(&a, &b, 0.0),
            Err(GradientError::NonPositiveEpsilon)
        ));
        // single-entry hand computation: |u| = 2, |u*| = 1, eps = 1e-3
        let cfg1 = full_config(1.0, 1, 1);
        let u = data_with(&cfg1, vec![vec![Complex64::new(2.0, 0.0)]]);
        let v = data_with(&cfg1, vec![vec![Complex64::new(0.0, 1.0)]]);
        let eps = 1e-3;
        let gu = 4.0 / (4.0f64 + eps).sqrt();
        let gv = 1.0 / (1.0f64 + eps).sqrt();
        let want = 0.5 * (gu - gv) * (gu - gv);
        assert!((phaseless_loss(&u, &v, eps).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn adjoint_source_coefficients() {
        let cfg = full_config(1.0, 2, 5);
        let mut sim = vec![vec![Complex64::new(0.0, 0.0); 5]; 2];
        let obs = data_with(&cfg, sim.clone());
        // zero residuals -> zero coefficients
        let res = Residuals::compute(&sim, &obs).unwrap();
        let src = adjoint_source(&res, 0).unwrap();
        assert_eq!(src.terms.len(), 5);
        assert!(src.terms.iter().all(|(c, _)| c.norm() == 0.0));
        // one nonzero residual rho at (l=1, m=3)
        let rho = Complex64::new(0.4, -1.1);
        sim[1][3] = rho;
        let res = Residuals::compute(&sim, &obs).unwrap();
        let src = adjoint_source(&res, 1).unwrap();
        let want = rho.conj() / (4.0 * std::f64::consts::PI * 5.0);
        assert!((src.terms[3].0 - want).norm() < 1e-16);
        assert!((src.terms[3].1 - (-cfg.observation[3])).norm() < 1e-15);
        for m in [0, 1, 2, 4] {
            assert_eq!(src.terms[m].0, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn phaseless_adjoint_source_vanishes_on_equal_moduli() {
        let eps = 1e-4;
        let cfg = MeasurementConfig::new(
            1.0,
            fibonacci_directions(1).unwrap(),
            fibonacci_directions(3).unwrap(),
            MeasurementMode::Phaseless,
            eps,
        )
        .unwrap();
        let raw = vec![vec![
            Complex64::new(0.6, 0.8),
            Complex64::new(0.0, -1.3),
            Complex64::new(0.2, 0.0),
        ]];
        // observed data: same moduli, different phases, already transformed
        let obs_vals = vec![raw[0]
            .iter()
            .map(|v| Complex64::new(phaseless_transform(v * Complex64::i(), eps), 0.0))
            .collect()];
        let obs = data_with(&cfg, obs_vals);
        let res = Residuals::compute(&raw, &obs).unwrap();
        let src = adjoint_source(&res, 0).unwrap();
        assert!(src.terms.iter().all(|(c, _)| c.norm() < 1e-16));
    }

    #[test]
    fn backscatter_has_no_adjoint_source() {
        let cfg = MeasurementConfig::new(
            1.0,
            fibonacci_directions(3).unwrap(),
            vec![],
            MeasurementMode::Backscatter,
            0.0,
        )
        .unwrap();
        let sim = vec![vec![Complex64::new(1.0, 0.0)]; 3];
        let obs = data_with(&cfg, sim.clone());
        let res = Residuals::compute(&sim, &obs).unwrap();
        assert!(matches!(
            adjoint_source(&res, 0),
            Err(GradientError::ModeMismatch(MeasurementMode::Backscatter))
        ));
    }

    #[test]
    fn zero_adjoint_zero_gradient() {
        let z = ShapeFamilyParams::encode_sphere(0.5, &Vec3::zeros());
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.2).unwrap();
        let mesh = extract_surface(&Decoder::Analytic, &z, &grid).unwrap();
        let n = mesh.num_faces();
        let u = vec![SurfaceDensity {
            coeffs: vec![Complex64::new(1.0, 1.0); n],
        }];
        let w = vec![SurfaceDensity {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }];
        let g = latent_gradient(&Decoder::Analytic, &z, &mesh, &u, &w, 1).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let g = backscatter_gradient(
            &Decoder::Analytic,
            &z,
            &mesh,
            &u,
            &[Complex64::new(0.0, 0.0)],
            1,
        )
        .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backscatter_matches_restricted_full_gradient() {
        // with w_l = c u_l the two formulas must agree to rounding
        let z = ShapeFamilyParams::encode_sphere(0.4, &Vec3::zeros());
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.25).unwrap();
        let mesh = extract_surface(&Decoder::Analytic, &z, &grid).unwrap();
        let k = std::f64::consts::PI;
        let system = helmholtz_bem::assemble(&mesh, k).unwrap();
        let d = Vec3::new(0.0, 0.0, 1.0);
        let u = helmholtz_bem::solve_density(&system, &IncidentWave::plane(k, d), 1e-8).unwrap();
        let r = Complex64::new(0.37, -0.21);
        let c = r.conj() / (4.0 * std::f64::consts::PI);
        let w = SurfaceDensity {
            coeffs: u.coeffs.iter().map(|v| v * c).collect(),
        };
        let full = latent_gradient(
            &Decoder::Analytic,
            &z,
            &mesh,
            std::slice::from_ref(&u),
            &[w],
            1,
        )
        .unwrap();
        let bs =
            backscatter_gradient(&Decoder::Analytic, &z, &mesh, std::slice::from_ref(&u), &[r], 1)
                .unwrap();
        let norm: f64 = full.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in full.iter().zip(&bs) {
            assert!((a - b).abs() <= 1e-10 * norm, "{a} vs {b}");
        }
    }

    #[test]
    fn full_mode_single_backscatter_direction_equals_backscatter_loss() {
        let z = ShapeFamilyParams::encode_sphere(0.45, &Vec3::zeros());
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.2).unwrap();
        let mesh = extract_surface(&Decoder::Analytic, &z, &grid).unwrap();
        let zt = ShapeFamilyParams::encode_sphere(0.55, &Vec3::zeros());
        let target = extract_surface(&Decoder::Analytic, &zt, &grid).unwrap();
        let k = std::f64::consts::PI;
        let d = Vec3::new(1.0, 0.0, 0.0);
        let bs_cfg =
            MeasurementConfig::new(k, vec![d], vec![], MeasurementMode::Backscatter, 0.0).unwrap();
        let full_cfg =
            MeasurementConfig::new(k, vec![d], vec![-d], MeasurementMode::Full, 0.0).unwrap();
        let tol = 1e-8;
        let bs_obs = simulate_data(&target, &bs_cfg, tol).unwrap();
        let full_obs = simulate_data(&target, &full_cfg, tol).unwrap();
        let (_, bs_rows) = forward_fields(&mesh, &bs_cfg, tol).unwrap();
        let (_, full_rows) = forward_fields(&mesh, &full_cfg, tol).unwrap();
        let lb = Residuals::compute(&bs_rows, &bs_obs).unwrap().loss();
        let lf = Residuals::compute(&full_rows, &full_obs).unwrap().loss();
        assert_eq!(lb, lf);
    }

    #[test]
    fn full_mode_gradient_matches_loss_finite_differences() {
        // sphere target vs radially perturbed candidate, L=1, M=50
        let k = std::f64::consts::PI;
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.1).unwrap();
        let cfg = full_config(k, 1, 50);
        let target = extract_surface(
            &Decoder::Analytic,
            &ShapeFamilyParams::encode_sphere(0.5, &Vec3::zeros()),
            &grid,
        )
        .unwrap();
        let obs = simulate_data(&target, &cfg, 1e-8).unwrap();
        let mut z = ShapeFamilyParams::encode_sphere(0.42, &Vec3::zeros());
        z.z[0] += 0.2; // break symmetry so all coordinates matter
        z.z[6] += 0.15;
        let tol = 1e-8;
        let loss_at = |zz: &LatentVector| -> f64 {
            let mesh = extract_surface(&Decoder::Analytic, zz, &grid).unwrap();
            let (_, rows) = forward_fields(&mesh, &cfg, tol).unwrap();
            Residuals::compute(&rows, &obs).unwrap().loss()
        };
        let mesh = extract_surface(&Decoder::Analytic, &z, &grid).unwrap();
        let (_, grad) = loss_and_gradient(&Decoder::Analytic, &z, &mesh, &obs, tol).unwrap();
        let dz = 1e-3;
        let mut fd = vec![0.0; 7];
        for i in 0..7 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.z[i] += dz;
            zm.z[i] -= dz;
            fd[i] = (loss_at(&zp) - loss_at(&zm)) / (2.0 * dz);
        }
        let dot: f64 = grad.iter().zip(&fd).map(|(a, b)| a * b).sum();
        let na: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = dot / (na * nb);
        assert!(cos >= 0.99, "cosine similarity {cos}; grad {grad:?} fd {fd:?}");
        for i in 0..7 {
            let scale = fd[i].abs().max(0.05 * nb);
            assert!(
                (grad[i] - fd[i]).abs() / scale <= 0.05,
                "coord {i}: {} vs fd {}",
                grad[i],
                fd[i]
            );
        }
    }

    #[test]
    fn gradient_is_descent_direction() {
        let k = std::f64::consts::PI;
        let grid = GridSpec::new([-1.0; 3], [1.0; 3], 0.15).unwrap();
        let cfg = full_config(k, 1, 10);
        let target = extract_surface(
            &Decoder::Analytic,
            &ShapeFamilyParams::encode_sphere(0.5, &Vec3::zeros()),
            &grid,
        )
        .unwrap();
        let obs = simulate_data(&target, &cfg, 1e-6).unwrap();
        let tol = 1e-6;
        let loss_at = |zz: &LatentVector| -> f64 {
            let mesh = extract_surface(&Decoder::Analytic, zz, &grid).unwrap();
            let (_, rows) = forward_fields(&mesh, &cfg, tol).unwrap();
            Residuals::compute(&rows, &obs).unwrap().loss()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut successes = 0;
        let trials = 20;
        for _ in 0..trials {
            let z = LatentVector::new(
                (0..7)
                    .map(|i| {
                        if i < 3 {
                            rng.gen_range(-0.3..0.3)
                        } else {
                            rng.gen_range(-0.5..0.5)
                        }
                    })
                    .collect(),
            );
            let mesh = extract_surface(&Decoder::Analytic, &z, &grid).unwrap();
            let (l0, g) = loss_and_gradient(&Decoder::Analytic, &z, &mesh, &obs, tol).unwrap();
            let gn: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let zn: f64 = z.z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            let alpha = 1e-3 * zn / gn.max(1e-300);
            let z1 = LatentVector::new(
                z.z.iter().zip(&g).map(|(zi, gi)| zi - alpha * gi).collect(),
            );
            if loss_at(&z1) < l0 {
                successes += 1;
            }
        }
        assert!(successes * 100 >= trials * 95, "{successes}/{trials} descents");
    }

    #[test]
    fn masking_is_unbiased_and_scales() {
        let g0 = vec![1.0, -2.0, 3.0, -4.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = 0.4;
        let mut mean = vec![0.0; 5];
        let reps = 20_000;
        for _ in 0..reps {
            let mut g = g0.clone();
            mask_gradient(&mut g, p, &mut rng);
            for ((m, v), orig) in mean.iter_mut().zip(&g).zip(&g0) {
                *m += v / reps as f64;
                assert!(*v == 0.0 || (*v - orig / p).abs() < 1e-15);
            }
        }
        for (m, v) in mean.iter().zip(&g0) {
            assert!((m - v).abs() < 0.05 * v.abs().max(1.0), "{m} vs {v}");
        }
        // p = 1 leaves the gradient untouched
        let mut g = g0.clone();
        mask_gradient(&mut g, 1.0, &mut rng);
        assert_eq!(g, g0);
    }
}
