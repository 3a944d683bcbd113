//! Command-line driver: data simulation, reconstruction runs, forward
//! solves, gradient checks, decoder training, and the Mie reference.

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use scatter_recon::analytic_oracle::{mie_far_field, SphereScatterer};
use scatter_recon::geometry::{load_obj, Vec3};
use scatter_recon::latent_shape::{
    extract_surface, load_dataset, save_codes, save_weights, train_decoder, LatentVector,
    TrainOptions,
};
use scatter_recon::measurement::{
    fibonacci_directions, load_far_field, save_far_field, simulate_data, FarFieldData,
    MeasurementConfig, MeasurementMode,
};
use scatter_recon::optimizer::Schedule;
use scatter_recon::recon::{reconstruct, simulate_run, ReconError, RunConfig};
use scatter_recon::scattering_gradient::{forward_fields, Residuals};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "scatter-recon", version, about = "Inverse obstacle scattering by latent implicit surfaces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate far-field data for the configured target shape.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reconstruction loop against a data file.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Continue from the run directory's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// One forward solve: far field of the initial shape (or an OBJ mesh).
    Forward {
        #[arg(long)]
        config: PathBuf,
        /// Solve on this mesh instead of the configured initial shape.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the adjoint latent gradient against finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-3)]
        dz: f64,
    },
    /// Fit decoder weights and per-shape codes to an SDF sample dataset.
    TrainDecoder {
        /// Directory of shape_NNN.bin sample files.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        latent_dim: usize,
        #[arg(long, default_value_t = 400)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5e-4)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        log_every: usize,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
        /// Output codes file.
        #[arg(long)]
        codes: PathBuf,
    },
    /// Far field of a sound-soft sphere from the series solution.
    Mie {
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        num_incident: usize,
        #[arg(long, default_value_t = 100)]
        num_observation: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cmd: Cmd) -> Result<(), ReconError> {
    match cmd {
        Cmd::Simulate { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let data = simulate_run(&cfg)?;
            save_far_field(&data, &out)?;
            println!(
                "wrote {} ({} incident x {} values, mode {})",
                out.display(),
                data.values.len(),
                data.values[0].len(),
                data.config.mode
            );
        }
        Cmd::Reconstruct {
            config,
            data,
            resume,
        } => {
            let cfg = RunConfig::from_file(&config)?;
            let observed = load_far_field(&data)?;
            let result = reconstruct(&cfg, &observed, resume)?;
            let last = result.records.last();
            println!(
                "finished after {} iterations; final loss {}",
                result.records.len(),
                last.map_or(f64::NAN, |r| r.loss)
            );
            println!("artifacts in {}", cfg.output.dir.display());
        }
        Cmd::Forward { config, mesh, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let mesh = match mesh {
                Some(p) => load_obj(&p)?,
                None => {
                    let (decoder, codes) = cfg.decoder.load()?;
                    let z = cfg
                        .initial
                        .resolve(&decoder, codes.as_deref(), cfg.seeds.init)?;
                    extract_surface(&decoder, &z, &cfg.grid.to_grid()?)?
                }
            };
            let mcfg = cfg.measurement.to_config(cfg.measurement.phaseless_eps.max(
                if cfg.measurement.mode == MeasurementMode::Phaseless {
                    1e-12
                } else {
                    0.0
                },
            ))?;
            let data = simulate_data(&mesh, &mcfg, cfg.output.gmres_tol)?;
            save_far_field(&data, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Gradcheck { config, dz } => gradcheck(&config, dz)?,
        Cmd::TrainDecoder {
            dataset,
            latent_dim,
            epochs,
            batch_size,
            lambda,
            seed,
            alpha,
            log_every,
            out,
            codes,
        } => {
            let sets = load_dataset(&dataset)?;
            let opts = TrainOptions {
                epochs,
                batch_size,
                seed,
                lambda,
                schedule: Schedule::Decay {
                    alpha0: alpha,
                    period: 500,
                },
                log_every,
            };
            let (weights, fitted, losses) = train_decoder(&sets, latent_dim, &opts)?;
            save_weights(&weights, &out)?;
            save_codes(&fitted, &codes)?;
            println!(
                "trained on {} shapes for {} epochs; final loss {:.6e}",
                sets.len(),
                epochs,
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Mie {
            radius,
            k,
            num_incident,
            num_observation,
            out,
        } => {
            let incident = fibonacci_directions(num_incident)?;
            let observation = fibonacci_directions(num_observation)?;
            let sphere = SphereScatterer::new(radius, Vec3::zeros());
            let mut values = Vec::with_capacity(num_incident);
            for d in &incident {
                let row: Result<Vec<Complex64>, _> = observation
                    .iter()
                    .map(|x| mie_far_field(&sphere, k, d, x))
                    .collect();
                values.push(row.map_err(|e| ReconError::Config(e.to_string()))?);
            }
            let config =
                MeasurementConfig::new(k, incident, observation, MeasurementMode::Full, 0.0)?;
            let data = FarFieldData {
                config,
                values,
                delta: 0.0,
                seed: 0,
            };
            save_far_field(&data, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn gradcheck(config: &PathBuf, dz: f64) -> Result<(), ReconError> {
    let cfg = RunConfig::from_file(config)?;
    let observed = simulate_run(&cfg)?;
    let (decoder, codes) = cfg.decoder.load()?;
    let grid = cfg.grid.to_grid()?;
    let z = cfg
        .initial
        .resolve(&decoder, codes.as_deref(), cfg.seeds.init)?;
    let tol = cfg.output.gmres_tol;
    let loss_at = |zz: &LatentVector| -> Result<f64, ReconError> {
        let mesh = extract_surface(&decoder, zz, &grid)?;
        let (_, rows) = forward_fields(&mesh, &observed.config, tol)?;
        Ok(Residuals::compute(&rows, &observed)?.loss())
    };
    let mesh = extract_surface(&decoder, &z, &grid)?;
    let (loss, grad) =
        scatter_recon::scattering_gradient::loss_and_gradient(&decoder, &z, &mesh, &observed, tol)?;
    println!("loss at initial latent: {loss:.6e}");
    println!("{:>5} {:>14} {:>14} {:>10}", "coord", "adjoint", "fd", "rel");
    let mut fd = vec![0.0; z.dim()];
    for i in 0..z.dim() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp.z[i] += dz;
        zm.z[i] -= dz;
        fd[i] = (loss_at(&zp)? - loss_at(&zm)?) / (2.0 * dz);
        let rel = (grad[i] - fd[i]).abs() / fd[i].abs().max(1e-300);
        println!("{i:>5} {:>14.6e} {:>14.6e} {rel:>10.3e}", grad[i], fd[i]);
    }
    let dot: f64 = grad.iter().zip(&fd).map(|(a, b)| a * b).sum();
    let na: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos = dot / (na * nb).max(1e-300);
    println!("cosine similarity: {cos:.6}");
    if cos < 0.99 {
        eprintln!("gradient check failed (cosine < 0.99)");
        std::process::exit(3);
    }
    Ok(())
}
