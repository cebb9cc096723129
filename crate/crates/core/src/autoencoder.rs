//! Dense autoencoders: MLP per-point variant and the conv downsampling
//! variant for whole-grid frames, plus the `.dae` file format.
//!
//! Both variants encode flat cloud rows `[N, D]` to `[N, latent_dim]` and
//! decode back; the conv variant unflattens rows to `[h, w, c]` internally,
//! so the public API is uniform.

use ndarray::{Array1, Array2, Array4};

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{self, Act, Layer, Value};
use crate::optim::{OptimizerKind, TensorOptimizer};
use crate::rng::{mix, stream, StreamRng};
use crate::trainer::LossLog;

const NCAD_MAGIC: &[u8; 4] = b"NCAD";
const NCAD_VERSION: u32 = 1;

pub const DEFAULT_LATENT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AeArchitecture {
    /// Fully-connected encoder with the given hidden widths (decoder
    /// mirrors them). `linear: true` drops every activation, which is the
    /// configuration whose optimum coincides with PCA.
    Mlp { hidden: Vec<usize>, linear: bool },
    /// Conv encoder for grid-shaped points: `stages` rounds of
    /// conv/activation/2x2-average-pool, then a dense map to the latent.
    /// Rows of the input are unflattened to `[h, w, c]`.
    ConvSpatial {
        h: usize,
        w: usize,
        c: usize,
        stages: usize,
        stage_channels: usize,
    },
}

impl AeArchitecture {
    pub fn linear_mlp() -> Self {
        AeArchitecture::Mlp {
            hidden: vec![],
            linear: true,
        }
    }

    /// The grid variant with the default three downsampling stages.
    pub fn conv_default(h: usize, w: usize, c: usize) -> Self {
        AeArchitecture::ConvSpatial {
            h,
            w,
            c,
            stages: 3,
            stage_channels: 16,
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            AeArchitecture::Mlp { hidden, .. } => {
                if hidden.iter().any(|&w| w == 0) {
                    return Err(Error::Validation("zero-width hidden layer".into()));
                }
                Ok(())
            }
            AeArchitecture::ConvSpatial { h, w, c, stages, stage_channels } => {
                if h * w * c != input_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "conv architecture expects {h}x{w}x{c} = {} inputs, cloud has {input_dim}",
                        h * w * c
                    )));
                }
                if *stages == 0 || *stage_channels == 0 {
                    return Err(Error::Validation("conv architecture needs stages >= 1 and channels >= 1".into()));
                }
                // Every stage must leave at least one pixel.
                let (mut hh, mut ww) = (*h, *w);
                for _ in 0..*stages {
                    hh = hh.div_ceil(2);
                    ww = ww.div_ceil(2);
                }
                if hh == 0 || ww == 0 {
                    return Err(Error::Validation("too many downsampling stages for the grid".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseAeModel {
    arch: AeArchitecture,
    input_dim: usize,
    latent_dim: usize,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate decays geometrically to this value by the final epoch.
    pub final_learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for AeTrainOptions {
    fn default() -> Self {
        AeTrainOptions {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-2,
            final_learning_rate: 1e-4,
            rng_seed: 0,
        }
    }
}

impl AeTrainOptions {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(self.final_learning_rate.is_finite() && self.final_learning_rate > 0.0)
        {
            return Err(Error::Validation("learning rates must be positive and finite".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (self.final_learning_rate / self.learning_rate).powf(t)
    }
}

fn build_layers(arch: &AeArchitecture, input_dim: usize, latent_dim: usize, seed: u64) -> (Vec<Layer>, Vec<Layer>) {
    let mut rng = StreamRng::new(seed, stream::INIT);
    match arch {
        AeArchitecture::Mlp { hidden, linear } => {
            let mut encoder = Vec::new();
            let mut widths = vec![input_dim];
            widths.extend_from_slice(hidden);
            widths.push(latent_dim);
            for pair in widths.windows(2) {
                encoder.push(nn::dense_glorot(pair[0], pair[1], &mut rng));
                if !linear {
                    encoder.push(Layer::Act(Act::LeakyRelu));
                }
            }
            if !linear {
                encoder.pop(); // latent itself stays linear
            }
            let mut decoder = Vec::new();
            let mut rev: Vec<usize> = widths;
            rev.reverse();
            for (i, pair) in rev.windows(2).enumerate() {
                decoder.push(nn::dense_glorot(pair[0], pair[1], &mut rng));
                let last = i + 2 == rev.len();
                if !linear && !last {
                    decoder.push(Layer::Act(Act::LeakyRelu));
                }
            }
            (encoder, decoder)
        }
        AeArchitecture::ConvSpatial { h, w, c, stages, stage_channels } => {
            let sc = *stage_channels;
            let mut encoder = vec![Layer::Unflatten { h: *h, w: *w, c: *c }];
            let mut dims = vec![(*h, *w)];
            let mut ch = *c;
            for _ in 0..*stages {
                encoder.push(nn::conv_glorot(ch, sc, &mut rng));
                encoder.push(Layer::Act(Act::LeakyRelu));
                encoder.push(Layer::AvgPool2);
                let (ph, pw) = *dims.last().unwrap();
                dims.push((ph.div_ceil(2), pw.div_ceil(2)));
                ch = sc;
            }
            let (bh, bw) = *dims.last().unwrap();
            encoder.push(Layer::Flatten);
            encoder.push(nn::dense_glorot(bh * bw * sc, latent_dim, &mut rng));

            let mut decoder = vec![
                nn::dense_glorot(latent_dim, bh * bw * sc, &mut rng),
                Layer::Act(Act::LeakyRelu),
                Layer::Unflatten { h: bh, w: bw, c: sc },
            ];
            for stage in (0..*stages).rev() {
                let (th, tw) = dims[stage];
                let out_ch = if stage == 0 { *c } else { sc };
                decoder.push(Layer::UpsampleTo { h: th, w: tw });
                decoder.push(nn::conv_glorot(sc, out_ch, &mut rng));
                if stage != 0 {
                    decoder.push(Layer::Act(Act::LeakyRelu));
                }
            }
            decoder.push(Layer::Flatten);
            (encoder, decoder)
        }
    }
}

impl DenseAeModel {
    pub fn arch(&self) -> &AeArchitecture {
        &self.arch
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn check_input(&self, pts: &Array2<f64>) -> Result<()> {
        if pts.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input dims, points have {}",
                self.input_dim,
                pts.ncols()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, pts: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(pts)?;
        let trace = nn::forward_trace(&self.encoder, Value::Flat(pts.clone()))?;
        Ok(trace.last().unwrap().as_flat()?.clone())
    }

    pub fn decode(&self, coords: &Array2<f64>) -> Result<Array2<f64>> {
        if coords.ncols() != self.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "model has {} latent dims, coords have {}",
                self.latent_dim,
                coords.ncols()
            )));
        }
        let trace = nn::forward_trace(&self.decoder, Value::Flat(coords.clone()))?;
        Ok(trace.last().unwrap().as_flat()?.clone())
    }

    pub fn reconstruct(&self, pts: &Array2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(pts)?)
    }

    /// Mean squared reconstruction error over all entries.
    pub fn reconstruction_mse(&self, pts: &Array2<f64>) -> Result<f64> {
        let rec = self.reconstruct(pts)?;
        let n = pts.len() as f64;
        Ok(pts.iter().zip(rec.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// For a purely linear single-dense decoder, the rows of its weight
    /// matrix span the model's reconstruction subspace; used to compare
    /// against PCA components.
    pub fn linear_decoder_subspace(&self) -> Option<Array2<f64>> {
        match (&self.arch, self.decoder.as_slice()) {
            (AeArchitecture::Mlp { linear: true, .. }, [Layer::Dense { w, .. }]) => Some(w.clone()),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(NCAD_MAGIC);
        w.u32(NCAD_VERSION);
        w.u32(self.input_dim as u32);
        w.u32(self.latent_dim as u32);
        match &self.arch {
            AeArchitecture::Mlp { hidden, linear } => {
                w.u8(0);
                w.u8(*linear as u8);
                w.u32(hidden.len() as u32);
                for &hw in hidden {
                    w.u32(hw as u32);
                }
            }
            AeArchitecture::ConvSpatial { h, w: gw, c, stages, stage_channels } => {
                w.u8(1);
                w.u8(0);
                w.u32(*h as u32);
                w.u32(*gw as u32);
                w.u32(*c as u32);
                w.u32(*stages as u32);
                w.u32(*stage_channels as u32);
            }
        }
        for stack in [&self.encoder, &self.decoder] {
            w.u32(stack.len() as u32);
            for layer in stack {
                write_layer(&mut w, layer);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(NCAD_MAGIC)?;
        r.expect_version(NCAD_VERSION)?;
        let input_dim = r.u32("input dim")? as usize;
        let latent_dim = r.u32("latent dim")? as usize;
        let arch = match r.u8("architecture tag")? {
            0 => {
                let linear = r.u8("linear flag")? != 0;
                let n = r.u32("hidden count")? as usize;
                let mut hidden = Vec::with_capacity(n);
                for _ in 0..n {
                    hidden.push(r.u32("hidden width")? as usize);
                }
                AeArchitecture::Mlp { hidden, linear }
            }
            1 => {
                r.u8("reserved")?;
                AeArchitecture::ConvSpatial {
                    h: r.u32("grid height")? as usize,
                    w: r.u32("grid width")? as usize,
                    c: r.u32("grid channels")? as usize,
                    stages: r.u32("stages")? as usize,
                    stage_channels: r.u32("stage channels")? as usize,
                }
            }
            other => return Err(r.corrupt(format!("unknown architecture tag {other}"))),
        };
        let mut stacks = Vec::with_capacity(2);
        for name in ["encoder", "decoder"] {
            let n = r.u32(&format!("{name} layer count"))? as usize;
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                layers.push(read_layer(&mut r)?);
            }
            stacks.push(layers);
        }
        r.finish()?;
        let decoder = stacks.pop().unwrap();
        let encoder = stacks.pop().unwrap();
        let model = DenseAeModel {
            arch,
            input_dim,
            latent_dim,
            encoder,
            decoder,
        };
        // Cheap structural check: round-trip shapes on a single zero row.
        let probe = Array2::zeros((1, model.input_dim));
        let rec = model.reconstruct(&probe)?;
        if rec.dim() != probe.dim() {
            return Err(Error::ShapeMismatch("loaded model does not preserve input shape".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }
}

fn write_layer(w: &mut Writer, layer: &Layer) {
    match layer {
        Layer::Dense { w: wt, b } => {
            w.u8(0);
            w.u32(wt.nrows() as u32);
            w.u32(wt.ncols() as u32);
            w.f64_slice(wt.iter().copied());
            w.f64_slice(b.iter().copied());
        }
        Layer::Conv3x3 { w: wt, b } => {
            let (_, _, ci, co) = wt.dim();
            w.u8(1);
            w.u32(ci as u32);
            w.u32(co as u32);
            w.f64_slice(wt.iter().copied());
            w.f64_slice(b.iter().copied());
        }
        Layer::AvgPool2 => w.u8(2),
        Layer::UpsampleTo { h, w: tw } => {
            w.u8(3);
            w.u32(*h as u32);
            w.u32(*tw as u32);
        }
        Layer::Act(a) => {
            w.u8(4);
            w.u8(a.as_u8());
        }
        Layer::Flatten => w.u8(5),
        Layer::Unflatten { h, w: uw, c } => {
            w.u8(6);
            w.u32(*h as u32);
            w.u32(*uw as u32);
            w.u32(*c as u32);
        }
    }
}

fn read_layer(r: &mut Reader) -> Result<Layer> {
    Ok(match r.u8("layer tag")? {
        0 => {
            let rows = r.u32("dense rows")? as usize;
            let cols = r.u32("dense cols")? as usize;
            let w = Array2::from_shape_vec((rows, cols), r.f64_vec(rows * cols, "dense weights")?)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let b = Array1::from_vec(r.f64_vec(cols, "dense bias")?);
            Layer::Dense { w, b }
        }
        1 => {
            let ci = r.u32("conv in channels")? as usize;
            let co = r.u32("conv out channels")? as usize;
            let w = Array4::from_shape_vec((3, 3, ci, co), r.f64_vec(9 * ci * co, "conv weights")?)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let b = Array1::from_vec(r.f64_vec(co, "conv bias")?);
            Layer::Conv3x3 { w, b }
        }
        2 => Layer::AvgPool2,
        3 => Layer::UpsampleTo {
            h: r.u32("upsample h")? as usize,
            w: r.u32("upsample w")? as usize,
        },
        4 => Layer::Act(Act::from_u8(r.u8("activation")?)?),
        5 => Layer::Flatten,
        6 => Layer::Unflatten {
            h: r.u32("unflatten h")? as usize,
            w: r.u32("unflatten w")? as usize,
            c: r.u32("unflatten c")? as usize,
        },
        other => return Err(r.corrupt(format!("unknown layer tag {other}"))),
    })
}

/// Fit an autoencoder by Adam on mean squared reconstruction error.
///
/// Latent dimension defaults to [`DEFAULT_LATENT_DIM`] via [`ae_fit`];
/// this variant makes it explicit.
pub fn ae_fit_with_latent(
    points: &Array2<f64>,
    arch: &AeArchitecture,
    latent_dim: usize,
    opts: &AeTrainOptions,
) -> Result<(DenseAeModel, LossLog)> {
    opts.validate()?;
    let (n, d) = points.dim();
    if n == 0 || d == 0 {
        return Err(Error::Validation("empty training cloud".into()));
    }
    if latent_dim == 0 {
        return Err(Error::Validation("latent_dim must be at least 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("training cloud contains non-finite values".into()));
    }
    arch.validate(d)?;

    let (encoder, decoder) = build_layers(arch, d, latent_dim, opts.rng_seed);
    let mut layers: Vec<Layer> = encoder;
    let boundary = layers.len();
    layers.extend(decoder);

    let mut opt_states: Vec<Option<TensorOptimizer>> = Vec::with_capacity(layers.len());
    for layer in &layers {
        let len = layer.param_len();
        opt_states.push(if len > 0 {
            Some(TensorOptimizer::new(OptimizerKind::default(), opts.learning_rate, len)?)
        } else {
            None
        });
    }

    let mut log = LossLog::default();
    for epoch in 0..opts.epochs {
        let started = std::time::Instant::now();
        let lr = opts.lr_at(epoch);
        let mut rng = StreamRng::new(mix(&[opts.rng_seed, epoch as u64]), stream::BATCH);
        let order = rng.choose_indices(n, n);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size.min(n)) {
            let mut batch = Array2::zeros((chunk.len(), d));
            for (bi, &src) in chunk.iter().enumerate() {
                batch.row_mut(bi).assign(&points.row(src));
            }
            let target = Value::Flat(batch.clone());
            let trace = nn::forward_trace(&layers, Value::Flat(batch))?;
            let (loss, gloss) = nn::mse_and_grad(trace.last().unwrap(), &target)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += loss;
            batches += 1;
            let (grads, _) = nn::backward_trace(&layers, &trace, gloss)?;
            for (li, grad) in grads.iter().enumerate() {
                let Some(flat_grad) = grad.flat() else { continue };
                let opt = opt_states[li].as_mut().unwrap();
                opt.set_lr(lr);
                let mut params = layers[li].flat_params();
                opt.step(params.view_mut(), &flat_grad)?;
                layers[li].set_flat_params(&params)?;
            }
        }
        log.push(epoch_loss / batches as f64, started.elapsed().as_secs_f64());
    }

    let decoder = layers.split_off(boundary);
    Ok((
        DenseAeModel {
            arch: arch.clone(),
            input_dim: d,
            latent_dim,
            encoder: layers,
            decoder,
        },
        log,
    ))
}

/// [`ae_fit_with_latent`] at the standard 2-D latent.
pub fn ae_fit(points: &Array2<f64>, arch: &AeArchitecture, opts: &AeTrainOptions) -> Result<(DenseAeModel, LossLog)> {
    ae_fit_with_latent(points, arch, DEFAULT_LATENT_DIM, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_principal_angle;
    use crate::pca::pca_fit;
    use crate::PointCloud;

    /// Rank-2 data in `d` dims: two fixed orthogonal directions with
    /// decaying strengths plus optional isotropic noise.
    fn rank2_points(n: usize, d: usize, noise: f64, seed: u64) -> Array2<f64> {
        let mut rng = StreamRng::new(seed, stream::DATA);
        let mut basis = Array2::zeros((2, d));
        basis[(0, 0)] = 1.0;
        basis[(1, 1)] = 1.0;
        let mut pts = Array2::zeros((n, d));
        for i in 0..n {
            let a = 3.0 * rng.normal_f64();
            let b = 1.5 * rng.normal_f64();
            for j in 0..d {
                pts[(i, j)] = a * basis[(0, j)] + b * basis[(1, j)] + noise * rng.normal_f64();
            }
        }
        pts
    }

    #[test]
    fn linear_ae_latent_subspace_matches_pca_top2() {
        let pts = rank2_points(200, 8, 0.02, 1);
        let opts = AeTrainOptions {
            epochs: 400,
            batch_size: 50,
            learning_rate: 2e-2,
            final_learning_rate: 1e-5,
            rng_seed: 5,
        };
        let (model, log) = ae_fit(&pts, &AeArchitecture::linear_mlp(), &opts).unwrap();
        assert!(log.losses().last().unwrap() < &0.01);

        let cloud = PointCloud::from_points(pts.clone()).unwrap();
        let basis = pca_fit(&cloud, 2).unwrap();
        let decoder_rows = model.linear_decoder_subspace().unwrap();
        let angle = max_principal_angle(&decoder_rows, &basis.components).unwrap();
        assert!(angle < 0.05, "principal angle {angle}");
    }

    #[test]
    fn identity_width_linear_ae_drives_error_to_zero() {
        let pts = rank2_points(60, 4, 0.5, 2);
        let opts = AeTrainOptions {
            epochs: 2500,
            batch_size: 60,
            learning_rate: 3e-2,
            final_learning_rate: 1e-7,
            rng_seed: 3,
        };
        let (model, _) = ae_fit_with_latent(&pts, &AeArchitecture::linear_mlp(), 4, &opts).unwrap();
        let mse = model.reconstruction_mse(&pts).unwrap();
        assert!(mse < 1e-6, "mse = {mse}");
    }

    #[test]
    fn constant_dataset_reconstructs_and_collapses_latent() {
        let mut pts = Array2::zeros((20, 5));
        pts.fill(0.7);
        let opts = AeTrainOptions {
            epochs: 600,
            batch_size: 20,
            learning_rate: 1e-2,
            final_learning_rate: 1e-6,
            rng_seed: 4,
        };
        let (model, _) = ae_fit(&pts, &AeArchitecture::Mlp { hidden: vec![4], linear: false }, &opts).unwrap();
        let mse = model.reconstruction_mse(&pts).unwrap();
        assert!(mse < 1e-8, "mse = {mse}");
        let z = model.encode(&pts).unwrap();
        for i in 1..z.nrows() {
            assert_eq!(z.row(i), z.row(0));
        }
    }

    #[test]
    fn encode_decode_encode_is_idempotent_after_convergence() {
        let pts = rank2_points(120, 6, 0.0, 6);
        let opts = AeTrainOptions {
            epochs: 8000,
            batch_size: 120,
            learning_rate: 3e-2,
            final_learning_rate: 3e-6,
            rng_seed: 7,
        };
        let (model, _) = ae_fit(&pts, &AeArchitecture::linear_mlp(), &opts).unwrap();
        let z = model.encode(&pts).unwrap();
        let z2 = model.encode(&model.decode(&z).unwrap()).unwrap();
        let max_dev = z.iter().zip(z2.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev < 1e-5, "max deviation {max_dev}");
    }

    #[test]
    fn conv_ae_preserves_shape_and_reduces_loss() {
        // 24 frames of 12x12x3 with smooth structure.
        let mut rng = StreamRng::new(8, stream::DATA);
        let (h, w, c) = (12, 12, 3);
        let mut pts = Array2::zeros((24, h * w * c));
        for mut row in pts.rows_mut() {
            let cx = rng.range_f64(3.0, 9.0);
            let cy = rng.range_f64(3.0, 9.0);
            for i in 0..h {
                for j in 0..w {
                    let dist2 = ((i as f64 - cx).powi(2) + (j as f64 - cy).powi(2)) / 8.0;
                    for ch in 0..c {
                        row[(i * w + j) * c + ch] = (-dist2).exp() * (1.0 + 0.2 * ch as f64);
                    }
                }
            }
        }
        let arch = AeArchitecture::ConvSpatial { h, w, c, stages: 2, stage_channels: 6 };
        let opts = AeTrainOptions {
            epochs: 60,
            batch_size: 8,
            learning_rate: 3e-3,
            final_learning_rate: 3e-4,
            rng_seed: 9,
        };
        let (model, log) = ae_fit(&pts, &arch, &opts).unwrap();
        let rec = model.reconstruct(&pts).unwrap();
        assert_eq!(rec.dim(), pts.dim());
        assert!(
            log.losses().last().unwrap() < &(log.losses()[0] * 0.5),
            "loss {} -> {}",
            log.losses()[0],
            log.losses().last().unwrap()
        );
        // Latent is 2-D as configured.
        assert_eq!(model.encode(&pts).unwrap().ncols(), 2);
    }

    #[test]
    fn exploding_learning_rate_aborts_with_numeric_error() {
        let pts = rank2_points(40, 4, 0.1, 10);
        let opts = AeTrainOptions {
            epochs: 50,
            batch_size: 10,
            learning_rate: 1e150,
            final_learning_rate: 1e150,
            rng_seed: 11,
        };
        match ae_fit(&pts, &AeArchitecture::linear_mlp(), &opts) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("non-finite loss")),
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn dae_file_round_trips() {
        let pts = rank2_points(30, 5, 0.1, 12);
        let opts = AeTrainOptions {
            epochs: 20,
            batch_size: 30,
            learning_rate: 1e-2,
            final_learning_rate: 1e-3,
            rng_seed: 13,
        };
        let (model, _) = ae_fit(&pts, &AeArchitecture::Mlp { hidden: vec![3], linear: false }, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dae");
        let path = path.to_str().unwrap();
        model.save(path).unwrap();
        let back = DenseAeModel::load(path).unwrap();
        assert_eq!(model, back);
        assert_eq!(model.encode(&pts).unwrap(), back.encode(&pts).unwrap());
    }

    #[test]
    fn wrong_input_dim_is_rejected() {
        let pts = rank2_points(30, 5, 0.1, 14);
        let opts = AeTrainOptions {
            epochs: 5,
            ..AeTrainOptions::default()
        };
        let (model, _) = ae_fit(&pts, &AeArchitecture::linear_mlp(), &opts).unwrap();
        let bad = Array2::zeros((3, 7));
        assert!(model.encode(&bad).is_err());
        // Conv arch refuses a cloud whose width does not factor.
        assert!(ae_fit(&pts, &AeArchitecture::conv_default(2, 2, 2), &opts).is_err());
    }
}
