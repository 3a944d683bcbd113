//! Closed-form partial-wave solutions for the sound-soft sphere, used as
//! ground truth for validating the BEM solver and the gradient pipeline.

use crate::geometry::Vec3;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("partial-wave series did not converge within {0} terms")]
    SeriesNotConverged(usize),
    #[error("evaluation point lies inside the sphere")]
    PointInside,
}

/// Sound-soft sphere scatterer.
#[derive(Debug, Clone, Copy)]
pub struct SphereScatterer {
    pub radius: f64,
    pub center: Vec3,
}

impl SphereScatterer {
    pub fn new(radius: f64, center: Vec3) -> Self {
        assert!(radius > 0.0);
        Self { radius, center }
    }
}

const MAX_TERMS: usize = 300;
const TERM_TOL: f64 = 1e-14;

/// Spherical Bessel functions j_0..j_n at x via downward (Miller) recurrence.
pub fn spherical_jn(n: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; n + 1];
        out[0] = 1.0;
        return out;
    }
    let start = n + (x.abs().ceil() as usize) + 32;
    let mut jp = 0.0f64; // j_{k+1}
    let mut jc = 1e-30f64; // j_k
    let mut out = vec![0.0; n + 1];
    for k in (0..start).rev() {
        let jm = (2 * k + 3) as f64 / x * jc - jp;
        jp = jc;
        jc = jm;
        if k <= n {
            out[k] = jc;
        }
        // rescale to avoid overflow of the unnormalized recurrence
        if jc.abs() > 1e250 {
            jp /= 1e250;
            jc /= 1e250;
            for v in out.iter_mut() {
                *v /= 1e250;
            }
        }
    }
    // Normalize against whichever of j_0, j_1 is larger in magnitude; j_0
    // alone vanishes at the zeros of sin(x).
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() >= j1.abs() || n == 0 {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// Spherical Bessel functions y_0..y_n at x via upward recurrence.
pub fn spherical_yn(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    out[0] = -x.cos() / x;
    if n >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for k in 1..n {
        out[k + 1] = (2 * k + 1) as f64 / x * out[k] - out[k - 1];
    }
    out
}

/// Derivative from the recurrence f_n' = f_{n-1} - (n+1)/x f_n.
pub fn bessel_derivative(f: &[f64], n: usize, x: f64) -> f64 {
    if n == 0 {
        // j_0' = -j_1 style relation does not apply to a generic table;
        // use f_0' = -f_1 which holds for both j and y families.
        -f[1]
    } else {
        f[n - 1] - (n + 1) as f64 / x * f[n]
    }
}

fn hankel1(j: &[f64], y: &[f64], n: usize) -> Complex64 {
    Complex64::new(j[n], y[n])
}

/// Legendre polynomials P_0..P_n at t by the three-term recurrence.
pub fn legendre(n: usize, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    out[0] = 1.0;
    if n >= 1 {
        out[1] = t;
    }
    for k in 1..n {
        out[k + 1] = ((2 * k + 1) as f64 * t * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
    }
    out
}

/// Far-field pattern of the sound-soft sphere for an incident plane wave.
///
/// For a centered sphere the series depends on d and x_hat only through
/// their inner product; a center offset contributes the translation phase
/// exp(ik (d - x_hat) . c).
pub fn mie_far_field(
    sphere: &SphereScatterer,
    k: f64,
    d: &Vec3,
    x_hat: &Vec3,
) -> Result<Complex64, OracleError> {
    let ka = k * sphere.radius;
    let n_min = (ka.ceil() as usize) + 10;
    let j = spherical_jn(MAX_TERMS, ka);
    let y = spherical_yn(MAX_TERMS, ka);
    let p = legendre(MAX_TERMS, d.dot(x_hat).clamp(-1.0, 1.0));
    let mut sum = Complex64::new(0.0, 0.0);
    let mut converged = false;
    for n in 0..=MAX_TERMS {
        let term = (2 * n + 1) as f64 * (Complex64::new(j[n], 0.0) / hankel1(&j, &y, n)) * p[n];
        sum += term;
        if n >= n_min && term.norm() < TERM_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::SeriesNotConverged(MAX_TERMS));
    }
    let phase = Complex64::new(0.0, k * (d - x_hat).dot(&sphere.center)).exp();
    Ok(Complex64::new(0.0, 1.0 / k) * sum * phase)
}

/// Scattered field of the sound-soft sphere at an exterior point.
pub fn mie_scattered_field(
    sphere: &SphereScatterer,
    k: f64,
    d: &Vec3,
    x: &Vec3,
) -> Result<Complex64, OracleError> {
    let rel = x - sphere.center;
    let r = rel.norm();
    if r <= sphere.radius {
        return Err(OracleError::PointInside);
    }
    let ka = k * sphere.radius;
    let kr = k * r;
    let n_min = (ka.ceil() as usize) + 10;
    let ja = spherical_jn(MAX_TERMS, ka);
    let ya = spherical_yn(MAX_TERMS, ka);
    let jr = spherical_jn(MAX_TERMS, kr);
    let yr = spherical_yn(MAX_TERMS, kr);
    let cos_theta = (rel.dot(d) / r).clamp(-1.0, 1.0);
    let p = legendre(MAX_TERMS, cos_theta);
    let i = Complex64::new(0.0, 1.0);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut converged = false;
    for n in 0..=MAX_TERMS {
        let coeff = Complex64::new(ja[n], 0.0) / hankel1(&ja, &ya, n);
        let term =
            (2 * n + 1) as f64 * i.powu(n as u32) * coeff * hankel1(&jr, &yr, n) * p[n];
        sum -= term;
        if n >= n_min && term.norm() < TERM_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::SeriesNotConverged(MAX_TERMS));
    }
    // incident-wave phase picked up by translating the expansion center
    let phase = Complex64::new(0.0, k * d.dot(&sphere.center)).exp();
    Ok(sum * phase)
}
