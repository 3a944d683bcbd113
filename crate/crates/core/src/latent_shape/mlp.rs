//! Small fully connected SDF decoder: 4 tanh hidden layers of width 128,
//! linear scalar output, hand-rolled forward and reverse passes, an
//! ADAM-based trainer for the joint (weights, codes) objective, and flat
//! binary/CSV serialization.

use super::{LatentError, LatentVector, SdfSampleSet};
use crate::geometry::Vec3;
use crate::optimizer::{adam_step, AdamState, Schedule};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

const HIDDEN: [usize; 4] = [128, 128, 128, 128];
const MAGIC: &[u8; 4] = b"SDFD";
const VERSION: u32 = 1;

/// Weights of the decoder MLP. Layer l maps dims[l] -> dims[l+1] with
/// dims = [Z+3, 128, 128, 128, 128, 1]; tanh on hidden layers, linear output.
#[derive(Debug, Clone)]
pub struct DecoderWeights {
    pub latent_dim: usize,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl DecoderWeights {
    pub fn dims(latent_dim: usize) -> Vec<usize> {
        let mut d = vec![latent_dim + 3];
        d.extend_from_slice(&HIDDEN);
        d.push(1);
        d
    }

    /// Xavier-uniform initialization.
    pub fn random(latent_dim: usize, seed: u64) -> Self {
        let dims = Self::dims(latent_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (nin, nout) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (nin + nout) as f64).sqrt();
            weights.push(DMatrix::from_fn(nout, nin, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(DVector::zeros(nout));
        }
        DecoderWeights {
            latent_dim,
            weights,
            biases,
        }
    }

    fn input(&self, z: &[f64], x: &Vec3) -> DVector<f64> {
        let mut v = DVector::zeros(self.latent_dim + 3);
        v.as_mut_slice()[..self.latent_dim].copy_from_slice(z);
        v[self.latent_dim] = x.x;
        v[self.latent_dim + 1] = x.y;
        v[self.latent_dim + 2] = x.z;
        v
    }

    /// f(z, x).
    pub fn forward(&self, z: &[f64], x: &Vec3) -> f64 {
        let mut a = self.input(z, x);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if l < last {
                a.apply(|t| *t = t.tanh());
            }
        }
        a[0]
    }

    /// d f / d input, length Z+3 (latent part first, then x).
    pub fn grad_input(&self, z: &[f64], x: &Vec3) -> Vec<f64> {
        let mut a = self.input(z, x);
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(last); // post-activation per hidden layer
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w * a + b;
            if l < last {
                a.apply(|t| *t = t.tanh());
                acts.push(a.clone());
            }
        }
        // reverse pass: delta through linear output, then tanh layers
        let mut delta: DVector<f64> = self.weights[last].row(0).transpose();
        for l in (0..last).rev() {
            // through tanh: multiply by 1 - a^2, then by W^T
            let h = &acts[l];
            for i in 0..delta.len() {
                delta[i] *= 1.0 - h[i] * h[i];
            }
            delta = self.weights[l].transpose() * delta;
        }
        delta.as_slice().to_vec()
    }

    fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }
}

// Batched forward keeping intermediate activations (columns = samples).
fn forward_batch(w: &DecoderWeights, input: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let last = w.weights.len() - 1;
    let mut acts = Vec::with_capacity(last);
    let mut a = input.clone();
    for l in 0..=last {
        let mut p = &w.weights[l] * &a;
        for mut col in p.column_iter_mut() {
            col += &w.biases[l];
        }
        if l < last {
            p.apply(|t| *t = t.tanh());
            acts.push(p.clone());
        }
        a = p;
    }
    (acts, a)
}

// Backward pass for d(sum_j out_j * dout_j)/d(theta, input): returns weight
// and bias gradients plus the gradient wrt each input column.
fn backward_batch(
    w: &DecoderWeights,
    input: &DMatrix<f64>,
    acts: &[DMatrix<f64>],
    dout: &DMatrix<f64>,
) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>, DMatrix<f64>) {
    let last = w.weights.len() - 1;
    let mut dw: Vec<DMatrix<f64>> = w.weights.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
    let mut db: Vec<DVector<f64>> = w.biases.iter().map(|b| DVector::zeros(b.len())).collect();
    let mut delta = dout.clone(); // 1 x B at the output
    for l in (0..=last).rev() {
        let below = if l == 0 { input } else { &acts[l - 1] };
        dw[l] = &delta * below.transpose();
        for i in 0..db[l].len() {
            db[l][i] = delta.row(i).sum();
        }
        if l > 0 {
            let mut d = w.weights[l].transpose() * delta;
            let h = &acts[l - 1];
            d.zip_apply(h, |t, a| *t *= 1.0 - a * a);
            delta = d;
        } else {
            delta = w.weights[0].transpose() * delta;
        }
    }
    (dw, db, delta)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight on the per-shape code regularizer ||z_S||^2.
    pub lambda: f64,
    pub schedule: Schedule,
    /// Print loss every this many epochs (0 = silent).
    pub log_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 400,
            batch_size: 256,
            seed: 0,
            lambda: 1e-4,
            schedule: Schedule::decay_default(),
            log_every: 0,
        }
    }
}

/// Jointly fit decoder weights and one latent code per shape by stochastic
/// gradient descent (ADAM steps) on the l1 regression loss plus the code
/// regularizer. Returns the weights, the codes, and the per-epoch losses.
pub fn train_decoder(
    dataset: &[SdfSampleSet],
    latent_dim: usize,
    opts: &TrainOptions,
) -> Result<(DecoderWeights, Vec<LatentVector>, Vec<f64>), LatentError> {
    if dataset.is_empty() || dataset.iter().any(|s| s.samples.is_empty()) {
        return Err(LatentError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w = DecoderWeights::random(latent_dim, opts.seed.wrapping_add(1));
    let mut codes: Vec<Vec<f64>> = (0..dataset.len())
        .map(|_| (0..latent_dim).map(|_| rng.gen_range(-0.1..0.1)).collect())
        .collect();
    let mut theta_state = AdamState::with_defaults(w.num_params());
    let mut code_states: Vec<AdamState> = codes
        .iter()
        .map(|_| AdamState::with_defaults(latent_dim))
        .collect();
    // flat index list of (shape, sample)
    let mut order: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(s, set)| (0..set.samples.len()).map(move |i| (s, i)))
        .collect();
    let n_total = order.len() as f64;
    let mut losses = Vec::with_capacity(opts.epochs);
    let in_dim = latent_dim + 3;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let alpha = opts.schedule.at(epoch as u64);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let bsz = chunk.len();
            let mut input = DMatrix::zeros(in_dim, bsz);
            let mut labels = Vec::with_capacity(bsz);
            for (col, &(s, i)) in chunk.iter().enumerate() {
                let (x, sdf) = dataset[s].samples[i];
                for d in 0..latent_dim {
                    input[(d, col)] = codes[s][d];
                }
                input[(latent_dim, col)] = x.x;
                input[(latent_dim + 1, col)] = x.y;
                input[(latent_dim + 2, col)] = x.z;
                labels.push(sdf);
            }
            let (acts, out) = forward_batch(&w, &input);
            let mut dout = DMatrix::zeros(1, bsz);
            for (col, &sdf) in labels.iter().enumerate() {
                let r = out[(0, col)] - sdf;
                epoch_loss += r.abs();
                dout[(0, col)] = r.signum() / bsz as f64;
            }
            let (dw, db, dinput) = backward_batch(&w, &input, &acts, &dout);
            // flatten parameter gradient and step
            let mut theta = Vec::with_capacity(w.num_params());
            let mut grad = Vec::with_capacity(w.num_params());
            for l in 0..w.weights.len() {
                theta.extend_from_slice(w.weights[l].as_slice());
                grad.extend_from_slice(dw[l].as_slice());
                theta.extend_from_slice(w.biases[l].as_slice());
                grad.extend_from_slice(db[l].as_slice());
            }
            adam_step(&mut theta_state, &mut theta, &grad, alpha)
                .expect("parameter dimensions fixed");
            let mut off = 0;
            for l in 0..w.weights.len() {
                let nw = w.weights[l].len();
                w.weights[l].as_mut_slice().copy_from_slice(&theta[off..off + nw]);
                off += nw;
                let nb = w.biases[l].len();
                w.biases[l].as_mut_slice().copy_from_slice(&theta[off..off + nb]);
                off += nb;
            }
            // code gradients: sum over batch columns of each shape, plus the
            // regularizer scaled by the shape's share of the batch
            let mut code_grads: std::collections::HashMap<usize, (Vec<f64>, usize)> =
                std::collections::HashMap::new();
            for (col, &(s, _)) in chunk.iter().enumerate() {
                let e = code_grads
                    .entry(s)
                    .or_insert_with(|| (vec![0.0; latent_dim], 0));
                for d in 0..latent_dim {
                    e.0[d] += dinput[(d, col)];
                }
                e.1 += 1;
            }
            for (s, (mut g, count)) in code_grads {
                let reg = 2.0 * opts.lambda * count as f64 / dataset[s].samples.len() as f64;
                for d in 0..latent_dim {
                    g[d] += reg * codes[s][d];
                }
                adam_step(&mut code_states[s], &mut codes[s], &g, alpha)
                    .expect("code dimensions fixed");
            }
        }
        let reg: f64 = codes
            .iter()
            .map(|c| opts.lambda * c.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let loss = epoch_loss / n_total + reg;
        if opts.log_every > 0 && epoch % opts.log_every == 0 {
            eprintln!("epoch {epoch}: loss {loss:.5} (alpha {alpha:.2e})");
        }
        losses.push(loss);
    }
    let codes = codes.into_iter().map(LatentVector::new).collect();
    Ok((w, codes, losses))
}

/// Binary weight file: magic, version, Z, layer count, per-layer (rows,
/// cols), then per layer the row-major weight matrix and the bias vector,
/// all little-endian f64.
pub fn save_weights(w: &DecoderWeights, path: &Path) -> Result<(), LatentError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(w.latent_dim as u32).to_le_bytes())?;
    f.write_all(&(w.weights.len() as u32).to_le_bytes())?;
    for m in &w.weights {
        f.write_all(&(m.nrows() as u32).to_le_bytes())?;
        f.write_all(&(m.ncols() as u32).to_le_bytes())?;
    }
    for (m, b) in w.weights.iter().zip(&w.biases) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                f.write_all(&m[(r, c)].to_le_bytes())?;
            }
        }
        for v in b.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<DecoderWeights, LatentError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut m4 = [0u8; 4];
    f.read_exact(&mut m4)?;
    if &m4 != MAGIC {
        return Err(LatentError::BadWeights("bad magic".into()));
    }
    let mut u = [0u8; 4];
    f.read_exact(&mut u)?;
    if u32::from_le_bytes(u) != VERSION {
        return Err(LatentError::BadWeights("unsupported version".into()));
    }
    f.read_exact(&mut u)?;
    let latent_dim = u32::from_le_bytes(u) as usize;
    f.read_exact(&mut u)?;
    let layers = u32::from_le_bytes(u) as usize;
    if layers == 0 || layers > 64 {
        return Err(LatentError::BadWeights(format!("layer count {layers}")));
    }
    let mut shapes = Vec::with_capacity(layers);
    for _ in 0..layers {
        f.read_exact(&mut u)?;
        let rows = u32::from_le_bytes(u) as usize;
        f.read_exact(&mut u)?;
        let cols = u32::from_le_bytes(u) as usize;
        shapes.push((rows, cols));
    }
    if shapes[0].1 != latent_dim + 3 || shapes[layers - 1].0 != 1 {
        return Err(LatentError::BadWeights("dimension chain broken".into()));
    }
    for win in shapes.windows(2) {
        if win[1].1 != win[0].0 {
            return Err(LatentError::BadWeights("dimension chain broken".into()));
        }
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    let mut f8 = [0u8; 8];
    for &(rows, cols) in &shapes {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                f.read_exact(&mut f8)?;
                m[(r, c)] = f64::from_le_bytes(f8);
            }
        }
        let mut b = DVector::zeros(rows);
        for r in 0..rows {
            f.read_exact(&mut f8)?;
            b[r] = f64::from_le_bytes(f8);
        }
        if m.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(LatentError::BadWeights("non-finite weights".into()));
        }
        weights.push(m);
        biases.push(b);
    }
    Ok(DecoderWeights {
        latent_dim,
        weights,
        biases,
    })
}

/// Latent codes as CSV, one code per row.
pub fn save_codes(codes: &[LatentVector], path: &Path) -> Result<(), LatentError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in codes {
        let row: Vec<String> = c.z.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<Vec<LatentVector>, LatentError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let z: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let z = z.map_err(|e| LatentError::BadWeights(format!("bad code CSV: {e}")))?;
        out.push(LatentVector::new(z));
    }
    Ok(out)
}

/// Training set manifest: a directory of per-shape binary sample files
/// (count u64, then x, y, z, sdf as f64 records, little-endian).
pub fn save_dataset(dataset: &[SdfSampleSet], dir: &Path) -> Result<(), LatentError> {
    std::fs::create_dir_all(dir)?;
    for (i, set) in dataset.iter().enumerate() {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(dir.join(format!("shape_{i:03}.bin")))?);
        f.write_all(&(set.samples.len() as u64).to_le_bytes())?;
        for (x, s) in &set.samples {
            for v in [x.x, x.y, x.z, *s] {
                f.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SdfSampleSet>, LatentError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let mut f = std::io::BufReader::new(std::fs::File::open(&p)?);
        let mut u8buf = [0u8; 8];
        f.read_exact(&mut u8buf)?;
        let n = u64::from_le_bytes(u8buf) as usize;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut rec = [0.0f64; 4];
            for r in rec.iter_mut() {
                f.read_exact(&mut u8buf)?;
                *r = f64::from_le_bytes(u8buf);
            }
            samples.push((Vec3::new(rec[0], rec[1], rec[2]), rec[3]));
        }
        out.push(SdfSampleSet { samples });
    }
    if out.is_empty() {
        return Err(LatentError::EmptyDataset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_shape::Decoder;

    #[test]
    fn forward_matches_straight_line_reference() {
        // independent re-implementation with plain nested loops
        let w = DecoderWeights::random(5, 99);
        let z = [0.3, -0.7, 0.1, 0.0, 1.2];
        let x = Vec3::new(0.2, -0.4, 0.6);
        let mut a: Vec<f64> = z.to_vec();
        a.extend_from_slice(&[x.x, x.y, x.z]);
        for l in 0..w.weights.len() {
            let m = &w.weights[l];
            let mut next = vec![0.0; m.nrows()];
            for (r, n) in next.iter_mut().enumerate() {
                let mut acc = w.biases[l][r];
                for (c, av) in a.iter().enumerate() {
                    acc += m[(r, c)] * av;
                }
                *n = if l < w.weights.len() - 1 { acc.tanh() } else { acc };
            }
            a = next;
        }
        let got = w.forward(&z, &x);
        assert!((got - a[0]).abs() <= 1e-12, "{got} vs {}", a[0]);
    }

    #[test]
    fn learned_gradients_match_finite_differences() {
        let w = DecoderWeights::random(4, 3);
        let d = Decoder::Learned(w);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let step = 1e-5;
        for _ in 0..20 {
            let z = LatentVector::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let x = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let gz = d.grad_z(&z, &x).unwrap();
            let gx = d.grad_x(&z, &x).unwrap();
            for i in 0..4 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp.z[i] += step;
                zm.z[i] -= step;
                let fd = (d.evaluate(&zp, &x).unwrap() - d.evaluate(&zm, &x).unwrap())
                    / (2.0 * step);
                assert!((gz[i] - fd).abs() / fd.abs().max(1e-4) < 1e-5, "{} vs {fd}", gz[i]);
            }
            for i in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += step;
                xm[i] -= step;
                let fd = (d.evaluate(&z, &xp).unwrap() - d.evaluate(&z, &xm).unwrap())
                    / (2.0 * step);
                assert!((gx[i] - fd).abs() / fd.abs().max(1e-4) < 1e-5, "{} vs {fd}", gx[i]);
            }
        }
    }

    #[test]
    fn zero_final_layer_kills_latent_gradient() {
        let mut w = DecoderWeights::random(4, 5);
        let last = w.weights.len() - 1;
        w.weights[last].fill(0.0);
        let d = Decoder::Learned(w);
        let g = d
            .grad_z(
                &LatentVector::new(vec![0.1, 0.2, 0.3, 0.4]),
                &Vec3::new(0.5, 0.0, -0.5),
            )
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weights_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.bin");
        let w = DecoderWeights::random(6, 12);
        save_weights(&w, &path).unwrap();
        let r = load_weights(&path).unwrap();
        assert_eq!(r.latent_dim, 6);
        for l in 0..w.weights.len() {
            assert_eq!(w.weights[l], r.weights[l]);
            assert_eq!(w.biases[l], r.biases[l]);
        }
        // corrupt the magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_weights(&path), Err(LatentError::BadWeights(_))));
    }

    #[test]
    fn codes_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.csv");
        let codes = vec![
            LatentVector::new(vec![0.25, -1.5, 3e-7]),
            LatentVector::new(vec![1.0, 2.0, 3.0]),
        ];
        save_codes(&codes, &path).unwrap();
        let r = load_codes(&path).unwrap();
        assert_eq!(codes, r);
    }

    #[test]
    fn dataset_roundtrip() {
        use crate::latent_shape::{sample_sdf, ShapeFamilyParams};
        let dir = tempfile::tempdir().unwrap();
        let sp = ShapeFamilyParams {
            center: Vec3::new(0.1, 0.0, -0.1),
            semi_axes: [0.3, 0.4, 0.5],
            exponent: 2.0,
        };
        let sets = vec![
            sample_sdf(&sp, 37, 0.02, 0.5, 1),
            sample_sdf(&sp, 11, 0.02, 0.5, 2),
        ];
        save_dataset(&sets, dir.path()).unwrap();
        let r = load_dataset(dir.path()).unwrap();
        assert_eq!(r.len(), 2);
        for (a, b) in sets.iter().zip(&r) {
            assert_eq!(a.samples.len(), b.samples.len());
            for ((xa, sa), (xb, sb)) in a.samples.iter().zip(&b.samples) {
                assert_eq!(xa, xb);
                assert_eq!(sa, sb);
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_decoder(&[], 8, &TrainOptions::default()),
            Err(LatentError::EmptyDataset)
        ));
    }

    #[test]
    fn huge_lambda_shrinks_codes() {
        use crate::latent_shape::{sample_sdf, ShapeFamilyParams};
        let sp = ShapeFamilyParams {
            center: Vec3::zeros(),
            semi_axes: [0.5, 0.5, 0.5],
            exponent: 2.0,
        };
        let data = vec![sample_sdf(&sp, 200, 0.02, 0.5, 3)];
        let opts = TrainOptions {
            epochs: 40,
            batch_size: 64,
            lambda: 1e6,
            ..TrainOptions::default()
        };
        let (_, codes, _) = train_decoder(&data, 8, &opts).unwrap();
        let norm: f64 = codes[0].z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-2, "code norm {norm}");
    }

    #[test]
    fn training_loss_decreases_on_single_sphere() {
        use crate::latent_shape::{sample_sdf, ShapeFamilyParams};
        let sp = ShapeFamilyParams {
            center: Vec3::zeros(),
            semi_axes: [0.5, 0.5, 0.5],
            exponent: 2.0,
        };
        let data = vec![sample_sdf(&sp, 1500, 0.02, 0.5, 4)];
        let opts = TrainOptions {
            epochs: 120,
            batch_size: 128,
            schedule: Schedule::Decay {
                alpha0: 2e-3,
                period: 500,
            },
            ..TrainOptions::default()
        };
        let (w, codes, losses) = train_decoder(&data, 8, &opts).unwrap();
        // moving-average non-increasing overall: compare first and last fifths
        let n = losses.len();
        let head: f64 = losses[..n / 5].iter().sum::<f64>() / (n / 5) as f64;
        let tail: f64 = losses[n - n / 5..].iter().sum::<f64>() / (n / 5) as f64;
        assert!(tail < head, "head {head}, tail {tail}");
        // held-out l1
        let held = sample_sdf(&sp, 400, 0.02, 0.5, 77);
        let mean_l1: f64 = held
            .samples
            .iter()
            .map(|(x, s)| (w.forward(&codes[0].z, x) - s).abs())
            .sum::<f64>()
            / held.samples.len() as f64;
        assert!(mean_l1 <= 0.02, "held-out l1 {mean_l1}");
    }
}
