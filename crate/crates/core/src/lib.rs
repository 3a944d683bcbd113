//! Inverse obstacle scattering with a latent implicit-surface prior.
//!
//! The library contains the full pipeline: triangle-mesh geometry and
//! marching-cubes extraction, a latent signed-distance representation with
//! analytic and learned decoder backends, a sound-soft exterior Helmholtz
//! solver based on the Burton-Miller boundary integral equation, the
//! adjoint-based latent shape gradient, the ADAM update rule, measurement
//! simulation, and the reconstruction driver used by the CLI.

pub mod analytic_oracle;
pub mod geometry;
pub mod helmholtz_bem;
pub mod latent_shape;
pub mod measurement;
pub mod optimizer;
pub mod recon;
pub mod scattering_gradient;

pub use geometry::{GridSpec, QuadratureRule, TriangleMesh};


