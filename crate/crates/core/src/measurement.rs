//! Measurement geometry, synthetic data generation, noise injection, and
//! the inside/outside indicator error used to score reconstructions.

use crate::geometry::{GridSpec, TriangleMesh, Vec3};
use crate::helmholtz_bem::{self, BemError, IncidentWave};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("direction count must be positive")]
    NonPositiveN,
    #[error("noise level must be nonnegative, got {0}")]
    NegativeDelta(f64),
    #[error("measurement configurations do not match")]
    ConfigMismatch,
    #[error("direction {0:?} is not unit norm")]
    NotUnit(Vec3),
    #[error("phaseless smoothing epsilon must be positive")]
    NonPositiveEpsilon,
    #[error("far-field file malformed at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Solver(#[from] BemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Quasi-uniform directions on the unit sphere by the Fibonacci lattice:
/// x3 = (2n-1)/N - 1 and azimuth 2 pi n phi with phi the golden ratio,
/// for n = 1..N.
pub fn fibonacci_directions(n: usize) -> Result<Vec<Vec3>, MeasurementError> {
    if n == 0 {
        return Err(MeasurementError::NonPositiveN);
    }
    let phi = (5.0f64.sqrt() + 1.0) / 2.0;
    Ok((1..=n)
        .map(|i| {
            let x3 = (2 * i - 1) as f64 / n as f64 - 1.0;
            let rho = (1.0 - x3 * x3).max(0.0).sqrt();
            let ang = 2.0 * std::f64::consts::PI * i as f64 * phi;
            Vec3::new(rho * ang.cos(), rho * ang.sin(), x3)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    Full,
    Backscatter,
    Phaseless,
}

impl std::fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Full => write!(f, "full"),
            Self::Backscatter => write!(f, "backscatter"),
            Self::Phaseless => write!(f, "phaseless"),
        }
    }
}

impl std::str::FromStr for MeasurementMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "backscatter" => Ok(Self::Backscatter),
            "phaseless" => Ok(Self::Phaseless),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Incident directions, observation directions, wavenumber, and data mode.
#[derive(Debug, Clone)]
pub struct MeasurementConfig {
    pub k: f64,
    pub incident: Vec<Vec3>,
    pub observation: Vec<Vec3>,
    pub mode: MeasurementMode,
    pub phaseless_eps: f64,
}

impl MeasurementConfig {
    pub fn new(
        k: f64,
        incident: Vec<Vec3>,
        observation: Vec<Vec3>,
        mode: MeasurementMode,
        phaseless_eps: f64,
    ) -> Result<Self, MeasurementError> {
        let observation = if mode == MeasurementMode::Backscatter {
            incident.iter().map(|d| -d).collect()
        } else {
            observation
        };
        let cfg = Self {
            k,
            incident,
            observation,
            mode,
            phaseless_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        for v in self.incident.iter().chain(&self.observation) {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(MeasurementError::NotUnit(*v));
            }
        }
        if self.incident.is_empty() || self.observation.is_empty() {
            return Err(MeasurementError::NonPositiveN);
        }
        if self.mode == MeasurementMode::Phaseless && !(self.phaseless_eps > 0.0) {
            return Err(MeasurementError::NonPositiveEpsilon);
        }
        Ok(())
    }

    pub fn num_incident(&self) -> usize {
        self.incident.len()
    }

    pub fn num_observation(&self) -> usize {
        self.observation.len()
    }

    /// Observation directions for incident index l. Backscatter mode has a
    /// single direction -d_l; the other modes share the full set.
    pub fn observations_for(&self, l: usize) -> Vec<Vec3> {
        match self.mode {
            MeasurementMode::Backscatter => vec![-self.incident[l]],
            _ => self.observation.clone(),
        }
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.k == other.k
            && self.mode == other.mode
            && self.incident.len() == other.incident.len()
            && self.observation.len() == other.observation.len()
            && self
                .incident
                .iter()
                .zip(&other.incident)
                .all(|(a, b)| (a - b).norm() < 1e-12)
            && self
                .observation
                .iter()
                .zip(&other.observation)
                .all(|(a, b)| (a - b).norm() < 1e-12)
    }
}

/// Smoothed modulus transform used for phaseless data.
pub fn phaseless_transform(u: Complex64, eps: f64) -> f64 {
    let m2 = u.norm_sqr();
    m2 / (m2 + eps).sqrt()
}

/// Far-field values, one row per incident direction. In phaseless mode the
/// stored values are the real smoothed-modulus transforms (imaginary part 0).
#[derive(Debug, Clone)]
pub struct FarFieldData {
    pub config: MeasurementConfig,
    pub values: Vec<Vec<Complex64>>,
    pub delta: f64,
    pub seed: u64,
}

impl FarFieldData {
    pub fn check_compatible(&self, other: &Self) -> Result<(), MeasurementError> {
        if !self.config.same_geometry(&other.config)
            || self.values.len() != other.values.len()
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(MeasurementError::ConfigMismatch);
        }
        Ok(())
    }
}

/// Solve one forward problem per incident direction on the target mesh and
/// evaluate the far field at every observation direction.
pub fn simulate_data(
    mesh: &TriangleMesh,
    config: &MeasurementConfig,
    gmres_tol: f64,
) -> Result<FarFieldData, MeasurementError> {
    config.validate()?;
    let system = helmholtz_bem::assemble(mesh, config.k)?;
    let values = config
        .incident
        .par_iter()
        .enumerate()
        .map(|(l, d)| {
            let wave = IncidentWave::plane(config.k, *d);
            let density = helmholtz_bem::solve_density(&system, &wave, gmres_tol)?;
            let dirs = config.observations_for(l);
            let mut row = helmholtz_bem::far_field(mesh, &density, config.k, &dirs);
            if config.mode == MeasurementMode::Phaseless {
                for v in row.iter_mut() {
                    *v = Complex64::new(phaseless_transform(*v, config.phaseless_eps), 0.0);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, BemError>>()?;
    Ok(FarFieldData {
        config: config.clone(),
        values,
        delta: 0.0,
        seed: 0,
    })
}

/// Multiplicative Gaussian noise u -> (1 + delta xi) u with one real standard
/// normal draw per entry.
pub fn add_noise(data: &FarFieldData, delta: f64, seed: u64) -> Result<FarFieldData, MeasurementError> {
    if delta < 0.0 {
        return Err(MeasurementError::NegativeDelta(delta));
    }
    if delta == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for row in out.values.iter_mut() {
        for v in row.iter_mut() {
            let xi = standard_normal(&mut rng);
            *v *= 1.0 + delta * xi;
        }
    }
    out.delta = delta;
    out.seed = seed;
    Ok(out)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Count grid nodes whose inside/outside classification differs between two
/// shapes, each given as an inside-predicate.
pub fn indicator_error<A, B>(inside_a: A, inside_b: B, grid: &GridSpec) -> usize
where
    A: Fn(&Vec3) -> bool + Sync,
    B: Fn(&Vec3) -> bool + Sync,
{
    grid.nodes()
        .par_iter()
        .filter(|p| inside_a(p) != inside_b(p))
        .count()
}

/// Indicator error between two closed meshes via ray-parity classification.
pub fn indicator_error_meshes(a: &TriangleMesh, b: &TriangleMesh, grid: &GridSpec) -> usize {
    indicator_error(|p| a.contains(p), |p| b.contains(p), grid)
}

/// Write far-field data: a header line `L M k mode delta seed` followed by
/// one CSV row per entry: l, m, d xyz, x_hat xyz, re, im.
pub fn save_far_field(data: &FarFieldData, path: &Path) -> Result<(), MeasurementError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let c = &data.config;
    writeln!(
        w,
        "{} {} {} {} {} {}",
        c.num_incident(),
        c.num_observation(),
        c.k,
        c.mode,
        data.delta,
        data.seed
    )?;
    if c.mode == MeasurementMode::Phaseless {
        writeln!(w, "# eps {}", c.phaseless_eps)?;
    }
    for (l, row) in data.values.iter().enumerate() {
        let dirs = c.observations_for(l);
        for (m, v) in row.iter().enumerate() {
            let d = c.incident[l];
            let x = dirs[m];
            if c.mode == MeasurementMode::Phaseless {
                writeln!(
                    w,
                    "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    l, m, d.x, d.y, d.z, x.x, x.y, x.z, v.re
                )?;
            } else {
                writeln!(
                    w,
                    "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    l, m, d.x, d.y, d.z, x.x, x.y, x.z, v.re, v.im
                )?;
            }
        }
    }
    Ok(())
}

pub fn load_far_field(path: &Path) -> Result<FarFieldData, MeasurementError> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(MeasurementError::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 6 {
        return Err(MeasurementError::Parse {
            line: 1,
            msg: format!("expected 6 header fields, got {}", tok.len()),
        });
    }
    let parse_err = |line: usize, msg: &str| MeasurementError::Parse {
        line,
        msg: msg.into(),
    };
    let l_count: usize = tok[0].parse().map_err(|_| parse_err(1, "bad L"))?;
    let m_count: usize = tok[1].parse().map_err(|_| parse_err(1, "bad M"))?;
    let k: f64 = tok[2].parse().map_err(|_| parse_err(1, "bad k"))?;
    let mode: MeasurementMode = tok[3].parse().map_err(|_| parse_err(1, "bad mode"))?;
    let delta: f64 = tok[4].parse().map_err(|_| parse_err(1, "bad delta"))?;
    let seed: u64 = tok[5].parse().map_err(|_| parse_err(1, "bad seed"))?;

    // backscatter stores one value per incident direction
    let cols = if mode == MeasurementMode::Backscatter {
        1
    } else {
        m_count
    };
    let mut eps = 1e-8;
    let mut incident = vec![Vec3::zeros(); l_count];
    let mut observation = vec![Vec3::zeros(); m_count];
    let mut values = vec![vec![Complex64::new(0.0, 0.0); cols]; l_count];
    let mut ln = 1usize;
    for line in lines {
        let line = line?;
        ln += 1;
        if let Some(rest) = line.strip_prefix("# eps ") {
            eps = rest.trim().parse().map_err(|_| parse_err(ln, "bad eps"))?;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let want = if mode == MeasurementMode::Phaseless { 9 } else { 10 };
        if f.len() != want {
            return Err(parse_err(ln, "wrong field count"));
        }
        let l: usize = f[0].parse().map_err(|_| parse_err(ln, "bad l"))?;
        let m: usize = f[1].parse().map_err(|_| parse_err(ln, "bad m"))?;
        if l >= l_count || m >= cols {
            return Err(parse_err(ln, "index out of range"));
        }
        let num = |i: usize| -> Result<f64, MeasurementError> {
            f[i].parse().map_err(|_| parse_err(ln, "bad number"))
        };
        incident[l] = Vec3::new(num(2)?, num(3)?, num(4)?);
        observation[m] = Vec3::new(num(5)?, num(6)?, num(7)?);
        values[l][m] = if mode == MeasurementMode::Phaseless {
            Complex64::new(num(8)?, 0.0)
        } else {
            Complex64::new(num(8)?, num(9)?)
        };
    }
    // backscatter files store x_hat = -d_l in the direction columns
    let observation = if mode == MeasurementMode::Backscatter {
        incident.iter().map(|d| -d).collect()
    } else {
        observation
    };
    let config = MeasurementConfig::new(k, incident, observation, mode, eps)?;
    Ok(FarFieldData {
        config,
        values,
        delta,
        seed,
    })
}
