//! The iterative latent reconstruction loop and its run configuration:
//! config schema, data simulation entry point, per-iteration records,
//! checkpointing, and run-directory artifacts.

use crate::geometry::{save_obj, GeometryError, GridSpec, TriangleMesh};
use crate::helmholtz_bem::BemError;
use crate::latent_shape::{
    extract_surface, load_codes, load_weights, Decoder, LatentError, LatentVector,
    ShapeFamilyParams, ANALYTIC_DIM,
};
use crate::measurement::{
    add_noise, indicator_error, simulate_data, FarFieldData, MeasurementConfig,
    MeasurementError, MeasurementMode,
};
use crate::optimizer::{adam_step, schedule_from_kind, should_stop, AdamState, OptimizerError};
use crate::scattering_gradient::{loss_and_gradient, mask_gradient, GradientError};
use crate::geometry::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Bem(#[from] BemError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReconError {
    /// Process exit code: 2 config, 3 solver non-convergence, 4 surface
    /// degeneracy, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReconError::Config(_) | ReconError::Optimizer(_) => 2,
            ReconError::Bem(BemError::NoConvergence { .. }) => 3,
            ReconError::Gradient(GradientError::Bem(BemError::NoConvergence { .. })) => 3,
            ReconError::Latent(LatentError::NoSurface(_))
            | ReconError::Latent(LatentError::IrregularSurface { .. })
            | ReconError::Gradient(GradientError::Latent(_))
            | ReconError::Gradient(GradientError::IrregularSurface(_))
            | ReconError::Geometry(_) => 4,
            _ => 1,
        }
    }
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub initial: ShapeSpec,
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub seeds: Seeds,
    /// Ground-truth shape: required by `simulate`, optional for the
    /// indicator-error column during reconstruction.
    #[serde(default)]
    pub target: Option<ShapeSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    /// "analytic" or "learned".
    pub backend: String,
    /// Weights file (learned backend).
    pub weights: Option<PathBuf>,
    /// Training codes file (learned backend; used for the default initial
    /// latent draw).
    pub codes: Option<PathBuf>,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            backend: "analytic".into(),
            weights: None,
            codes: None,
        }
    }
}

impl DecoderSection {
    pub fn load(&self) -> Result<(Decoder, Option<Vec<LatentVector>>), ReconError> {
        match self.backend.as_str() {
            "analytic" => Ok((Decoder::Analytic, None)),
            "learned" => {
                let path = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| ReconError::Config("learned backend needs weights".into()))?;
                let w = load_weights(path)?;
                let codes = match &self.codes {
                    Some(p) => Some(load_codes(p)?),
                    None => None,
                };
                Ok((Decoder::Learned(w), codes))
            }
            other => Err(ReconError::Config(format!("unknown backend '{other}'"))),
        }
    }
}

/// A shape given either by an explicit latent vector or by sphere
/// parameters (encoded analytically).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub latent: Option<Vec<f64>>,
    pub radius: Option<f64>,
    #[serde(default)]
    pub center: [f64; 3],
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec {
            latent: None,
            radius: None,
            center: [0.0; 3],
        }
    }
}

impl ShapeSpec {
    /// Resolve to a latent vector for `decoder`; falls back to a stored
    /// training code (seeded draw) for the learned backend, or a centered
    /// mid-size sphere for the analytic one.
    pub fn resolve(
        &self,
        decoder: &Decoder,
        codes: Option<&[LatentVector]>,
        seed: u64,
    ) -> Result<LatentVector, ReconError> {
        if let Some(z) = &self.latent {
            if z.len() != decoder.latent_dim() {
                return Err(ReconError::Config(format!(
                    "latent has dimension {}, decoder expects {}",
                    z.len(),
                    decoder.latent_dim()
                )));
            }
            return Ok(LatentVector::new(z.clone()));
        }
        if let Some(r) = self.radius {
            if decoder.latent_dim() != ANALYTIC_DIM {
                return Err(ReconError::Config(
                    "sphere shape spec requires the analytic backend".into(),
                ));
            }
            let c = Vec3::new(self.center[0], self.center[1], self.center[2]);
            return Ok(ShapeFamilyParams::encode_sphere(r, &c));
        }
        match codes {
            Some(cs) if !cs.is_empty() => {
                use rand::Rng;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(cs[rng.gen_range(0..cs.len())].clone())
            }
            _ if decoder.latent_dim() == ANALYTIC_DIM => {
                Ok(ShapeFamilyParams::encode_sphere(0.4, &Vec3::zeros()))
            }
            _ => Err(ReconError::Config(
                "no latent, no sphere parameters, and no training codes to draw from".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub k: f64,
    pub num_incident: usize,
    #[serde(default)]
    pub num_observation: usize,
    #[serde(default = "default_mode")]
    pub mode: MeasurementMode,
    /// Phaseless smoothing; 0 means derive it from the simulated data.
    #[serde(default)]
    pub phaseless_eps: f64,
    /// Relative noise level applied by `simulate`.
    #[serde(default)]
    pub delta: f64,
}

fn default_mode() -> MeasurementMode {
    MeasurementMode::Full
}

impl MeasurementSection {
    pub fn to_config(&self, eps: f64) -> Result<MeasurementConfig, ReconError> {
        let incident = crate::measurement::fibonacci_directions(self.num_incident)?;
        let observation = if self.mode == MeasurementMode::Backscatter {
            vec![]
        } else {
            crate::measurement::fibonacci_directions(self.num_observation)?
        };
        Ok(MeasurementConfig::new(
            self.k,
            incident,
            observation,
            self.mode,
            eps,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub h: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            lower: [-1.0; 3],
            upper: [1.0; 3],
            h: 0.1,
        }
    }
}

impl GridSection {
    pub fn to_grid(&self) -> Result<GridSpec, ReconError> {
        Ok(GridSpec::new(self.lower, self.upper, self.h)?)
    }

    fn refined(&self) -> Result<GridSpec, ReconError> {
        Ok(GridSpec::new(self.lower, self.upper, self.h / 2.0)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// "constant" or "decay".
    pub schedule: String,
    pub alpha: f64,
    pub period: u64,
    pub max_iters: usize,
    pub patience: usize,
    pub rel_improve: f64,
    /// Coordinate-mask keep probability (1 = no masking).
    pub mask_p: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            schedule: "constant".into(),
            alpha: 0.01,
            period: 500,
            max_iters: 100,
            patience: 30,
            rel_improve: 1e-3,
            mask_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub noise: u64,
    pub mask: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            noise: 0,
            mask: 1,
            init: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub gmres_tol: f64,
    /// Mesh logging cadence; 0 means ceil(max_iters / 8).
    pub mesh_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("run"),
            gmres_tol: 1e-5,
            mesh_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ReconError> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| ReconError::Config(e.to_string()))?;
        if cfg.version != 1 {
            return Err(ReconError::Config(format!(
                "unsupported config version {}",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ReconError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if self.measurement.k <= 0.0 {
            return Err(ReconError::Config("k must be positive".into()));
        }
        if self.measurement.num_incident == 0 {
            return Err(ReconError::Config("num_incident must be >= 1".into()));
        }
        if self.measurement.mode != MeasurementMode::Backscatter
            && self.measurement.num_observation == 0
        {
            return Err(ReconError::Config("num_observation must be >= 1".into()));
        }
        if !(self.output.gmres_tol > 0.0) {
            return Err(ReconError::Config("gmres_tol must be positive".into()));
        }
        if !(self.optimizer.mask_p > 0.0 && self.optimizer.mask_p <= 1.0) {
            return Err(ReconError::Config("mask_p must be in (0, 1]".into()));
        }
        schedule_from_kind(&self.optimizer.schedule, self.optimizer.alpha, self.optimizer.period)?;
        self.grid.to_grid()?;
        Ok(())
    }
}

/// Simulate far-field data for the configured target on a refined grid
/// (half the reconstruction spacing) and apply the configured noise.
pub fn simulate_run(cfg: &RunConfig) -> Result<FarFieldData, ReconError> {
    let target = cfg
        .target
        .as_ref()
        .ok_or_else(|| ReconError::Config("simulate needs a [target] section".into()))?;
    let z = target.resolve(&Decoder::Analytic, None, cfg.seeds.init)?;
    let mesh = extract_surface(&Decoder::Analytic, &z, &cfg.grid.refined()?)?;
    let eps = if cfg.measurement.mode == MeasurementMode::Phaseless
        && cfg.measurement.phaseless_eps == 0.0
    {
        // derive the smoothing scale from an exact full-mode simulation
        let full = MeasurementSection {
            mode: MeasurementMode::Full,
            ..cfg.measurement.clone()
        };
        let raw = simulate_data(&mesh, &full.to_config(0.0)?, cfg.output.gmres_tol)?;
        crate::scattering_gradient::default_phaseless_eps(&raw.values)
    } else {
        cfg.measurement.phaseless_eps
    };
    let mcfg = cfg.measurement.to_config(eps)?;
    let data = simulate_data(&mesh, &mcfg, cfg.output.gmres_tol)?;
    Ok(add_noise(&data, cfg.measurement.delta, cfg.seeds.noise)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub loss: f64,
    pub indicator: Option<usize>,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub faces: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    iter: usize,
    z: Vec<f64>,
    adam: AdamState,
    losses: Vec<f64>,
}

#[derive(Debug)]
pub struct ReconResult {
    pub latent: LatentVector,
    pub mesh: TriangleMesh,
    pub records: Vec<IterationRecord>,
}

// Exclusive run-directory lock, released on drop.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, ReconError> {
        let path = dir.join("lock");
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|_| {
                ReconError::Config(format!(
                    "run directory {} is locked by another process (remove `lock` if stale)",
                    dir.display()
                ))
            })?;
        Ok(DirLock(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn write_records(dir: &Path, records: &[IterationRecord]) -> Result<(), ReconError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("records.csv"))?);
    writeln!(w, "n,loss,indicator,grad_norm,step_norm,faces,wall_s")?;
    for r in records {
        writeln!(
            w,
            "{},{:.17e},{},{:.17e},{:.17e},{},{:.3}",
            r.n,
            r.loss,
            r.indicator.map_or(String::new(), |v| v.to_string()),
            r.grad_norm,
            r.step_norm,
            r.faces,
            r.wall_s
        )?;
    }
    Ok(())
}

fn write_latent(path: &Path, z: &LatentVector) -> Result<(), ReconError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &z.z {
        writeln!(w, "{v:.17e}")?;
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Run the reconstruction loop against observed data, persisting records,
/// logged meshes, checkpoints, and the final latent into the run directory.
/// With `resume`, continues from the last checkpoint if one exists.
pub fn reconstruct(
    cfg: &RunConfig,
    observed: &FarFieldData,
    resume: bool,
) -> Result<ReconResult, ReconError> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    std::fs::create_dir_all(dir.join("meshes"))?;
    let _lock = DirLock::acquire(dir)?;
    std::fs::write(
        dir.join("config.toml"),
        toml::to_string_pretty(cfg).map_err(|e| ReconError::Config(e.to_string()))?,
    )?;

    let (decoder, codes) = cfg.decoder.load()?;
    let grid = cfg.grid.to_grid()?;
    let schedule =
        schedule_from_kind(&cfg.optimizer.schedule, cfg.optimizer.alpha, cfg.optimizer.period)?;
    let truth = match &cfg.target {
        Some(t) => Some(t.resolve(&Decoder::Analytic, None, cfg.seeds.init)?),
        None => None,
    };

    let ckpt_path = dir.join("checkpoint.toml");
    let (mut z, mut adam, mut losses, start) = if resume && ckpt_path.exists() {
        let c: Checkpoint = toml::from_str(&std::fs::read_to_string(&ckpt_path)?)
            .map_err(|e| ReconError::Config(format!("bad checkpoint: {e}")))?;
        let adam = c.adam;
        (LatentVector::new(c.z), adam, c.losses, c.iter)
    } else {
        let z = cfg.initial.resolve(&decoder, codes.as_deref(), cfg.seeds.init)?;
        (z.clone(), AdamState::with_defaults(z.dim()), Vec::new(), 0)
    };

    let mesh_every = if cfg.output.mesh_every > 0 {
        cfg.output.mesh_every
    } else {
        cfg.optimizer.max_iters.div_ceil(8).max(1)
    };

    let mut records: Vec<IterationRecord> = Vec::new();
    if cfg.optimizer.max_iters == 0 {
        let mesh = extract_surface(&decoder, &z, &grid)?;
        write_latent(&dir.join("latent_final.csv"), &z)?;
        write_records(dir, &records)?;
        return Ok(ReconResult {
            latent: z,
            mesh,
            records,
        });
    }

    let mut final_mesh = None;
    let t0 = std::time::Instant::now();
    for n in start.. {
        let mesh = extract_surface(&decoder, &z, &grid)?;
        let (loss, mut grad) =
            loss_and_gradient(&decoder, &z, &mesh, observed, cfg.output.gmres_tol)?;
        let grad_norm = norm(&grad);
        let indicator = truth.as_ref().map(|zt| {
            indicator_error(
                |p| decoder.evaluate(&z, p).map_or(false, |v| v < 0.0),
                |p| Decoder::Analytic.evaluate(zt, p).map_or(false, |v| v < 0.0),
                &grid,
            )
        });
        if cfg.optimizer.mask_p < 1.0 {
            // per-iteration stream so a resumed run masks identically
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.mask.wrapping_add(n as u64));
            mask_gradient(&mut grad, cfg.optimizer.mask_p, &mut rng);
        }
        let z_prev = z.z.clone();
        let alpha = schedule.at(adam.n);
        adam_step(&mut adam, &mut z.z, &grad, alpha)?;
        let step_norm = z
            .z
            .iter()
            .zip(&z_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        losses.push(loss);
        records.push(IterationRecord {
            n,
            loss,
            indicator,
            grad_norm,
            step_norm,
            faces: mesh.num_faces(),
            wall_s: t0.elapsed().as_secs_f64(),
        });
        write_records(dir, &records)?;
        if n % mesh_every == 0 {
            save_obj(&mesh, &dir.join(format!("meshes/iter_{n:04}.obj")))?;
        }
        let ckpt = Checkpoint {
            iter: n + 1,
            z: z.z.clone(),
            adam: adam.clone(),
            losses: losses.clone(),
        };
        std::fs::write(
            &ckpt_path,
            toml::to_string(&ckpt).map_err(|e| ReconError::Config(e.to_string()))?,
        )?;
        let done = should_stop(
            &losses[..],
            cfg.optimizer.max_iters + start,
            cfg.optimizer.patience,
            cfg.optimizer.rel_improve,
        );
        if done {
            let last = extract_surface(&decoder, &z, &grid)?;
            save_obj(&mesh, &dir.join(format!("meshes/iter_{n:04}.obj")))?;
            save_obj(&last, &dir.join("meshes/final.obj"))?;
            final_mesh = Some(last);
            break;
        }
    }
    write_latent(&dir.join("latent_final.csv"), &z)?;
    Ok(ReconResult {
        latent: z,
        mesh: final_mesh.expect("loop sets the final mesh before breaking"),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{load_far_field, save_far_field};
    use tempfile::tempdir;

    fn base_config(dir: &Path) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            r#"
version = 1

[measurement]
k = 3.141592653589793
num_incident = 2
num_observation = 10

[grid]
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]
h = 0.2

[optimizer]
schedule = "constant"
alpha = 0.02
period = 500
max_iters = 3
patience = 30
rel_improve = 1e-3
mask_p = 1.0

[target]
radius = 0.5

[initial]
radius = 0.35

[output]
dir = "{}"
gmres_tol = 1e-5
mesh_every = 0
"#,
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_version() {
        let err = RunConfig::from_toml_str(
            "version = 1\nnonsense = 2\n[measurement]\nk = 1.0\nnum_incident = 1\nnum_observation = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, ReconError::Config(_)));
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::from_toml_str(
            "version = 7\n[measurement]\nk = 1.0\nnum_incident = 1\nnum_observation = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, ReconError::Config(_)));
    }

    #[test]
    fn config_roundtrip_and_defaults() {
        let tmp = tempdir().unwrap();
        let cfg = base_config(tmp.path());
        assert_eq!(cfg.optimizer.max_iters, 3);
        assert_eq!(cfg.seeds.noise, 0);
        assert_eq!(cfg.decoder.backend, "analytic");
        let s = toml::to_string_pretty(&cfg).unwrap();
        let cfg2 = RunConfig::from_toml_str(&s).unwrap();
        assert_eq!(cfg2.measurement.num_observation, 10);
    }

    #[test]
    fn max_iters_zero_returns_initial_latent() {
        let tmp = tempdir().unwrap();
        let mut cfg = base_config(&tmp.path().join("run"));
        cfg.optimizer.max_iters = 0;
        let data = simulate_run(&cfg).unwrap();
        let out = reconstruct(&cfg, &data, false).unwrap();
        assert!(out.records.is_empty());
        let want = cfg
            .initial
            .resolve(&Decoder::Analytic, None, cfg.seeds.init)
            .unwrap();
        assert_eq!(out.latent.z, want.z);
        assert!(cfg.output.dir.join("latent_final.csv").exists());
    }

    #[test]
    fn short_run_descends_and_persists_artifacts() {
        let tmp = tempdir().unwrap();
        let cfg = base_config(&tmp.path().join("run"));
        let data = simulate_run(&cfg).unwrap();
        let path = tmp.path().join("data.csv");
        save_far_field(&data, &path).unwrap();
        let data = load_far_field(&path).unwrap();
        let out = reconstruct(&cfg, &data, false).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records[2].loss < out.records[0].loss);
        assert!(out.records.iter().all(|r| r.indicator.is_some()));
        assert!(cfg.output.dir.join("records.csv").exists());
        assert!(cfg.output.dir.join("config.toml").exists());
        assert!(cfg.output.dir.join("meshes/iter_0000.obj").exists());
        assert!(cfg.output.dir.join("meshes/final.obj").exists());
        assert!(cfg.output.dir.join("checkpoint.toml").exists());
        assert!(!cfg.output.dir.join("lock").exists());
        // every persisted mesh reloads as a valid closed mesh
        let reload = crate::geometry::load_obj(&cfg.output.dir.join("meshes/final.obj")).unwrap();
        assert!(reload.is_closed());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let tmp = tempdir().unwrap();
        let mut cfg_a = base_config(&tmp.path().join("a"));
        cfg_a.optimizer.max_iters = 4;
        cfg_a.optimizer.mask_p = 0.8;
        let data = simulate_run(&cfg_a).unwrap();
        let full = reconstruct(&cfg_a, &data, false).unwrap();

        let mut cfg_b = cfg_a.clone();
        cfg_b.output.dir = tmp.path().join("b");
        cfg_b.optimizer.max_iters = 2;
        reconstruct(&cfg_b, &data, false).unwrap();
        cfg_b.optimizer.max_iters = 2; // two more on resume
        let resumed = reconstruct(&cfg_b, &data, true).unwrap();

        let za = &full.latent.z;
        let zb = &resumed.latent.z;
        for (a, b) in za.iter().zip(zb) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert_eq!(resumed.records.last().unwrap().n, 3);
    }

    #[test]
    fn lock_excludes_second_process() {
        let tmp = tempdir().unwrap();
        let cfg = base_config(&tmp.path().join("run"));
        std::fs::create_dir_all(&cfg.output.dir).unwrap();
        std::fs::write(cfg.output.dir.join("lock"), b"").unwrap();
        let data_cfg = base_config(&tmp.path().join("other"));
        let data = simulate_run(&data_cfg).unwrap();
        let err = reconstruct(&cfg, &data, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn running_min_loss_is_nonincreasing() {
        let tmp = tempdir().unwrap();
        let mut cfg = base_config(&tmp.path().join("run"));
        cfg.optimizer.max_iters = 5;
        let data = simulate_run(&cfg).unwrap();
        let out = reconstruct(&cfg, &data, false).unwrap();
        let mut best = f64::INFINITY;
        let mins: Vec<f64> = out
            .records
            .iter()
            .map(|r| {
                best = best.min(r.loss);
                best
            })
            .collect();
        for w in mins.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
