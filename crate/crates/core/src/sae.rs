//! Sparse autoencoders: overcomplete dictionary with an L1 penalty on the
//! rectified codes, feature statistics, and the per-frame mean-feature
//! embedding. Model file format `.sae`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::cloud::{frame_colour, PointCloud, Provenance};
use crate::error::{Error, Result};
use crate::optim::{OptimizerKind, TensorOptimizer};
use crate::rng::{mix, stream, StreamRng};
use crate::trajectory::Trajectory;

const NCAS_MAGIC: &[u8; 4] = b"NCAS";
const NCAS_VERSION: u32 = 1;

/// Code entries at or below this count as inactive.
pub const DEFAULT_ACTIVATION_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `[input_dim, dict_size]`
    w_enc: Array2<f64>,
    /// `[dict_size]`
    b_enc: Array1<f64>,
    /// `[dict_size, input_dim]`; rows are the dictionary atoms, unit-norm.
    w_dec: Array2<f64>,
    /// `[input_dim]`
    b_dec: Array1<f64>,
    l1_coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeStats {
    pub reconstruction_mse: f64,
    pub mean_active_features: f64,
    pub dead_feature_fraction: f64,
    pub activation_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate decays geometrically to this value by the final epoch.
    pub final_learning_rate: f64,
    /// Fraction of the epochs after which the L1 pressure anneals linearly
    /// down to 30% of its value; 1.0 keeps it constant throughout.
    /// Annealing lets the chosen sparsity pattern settle while removing
    /// most of the coefficient shrinkage; the floor keeps noise activations
    /// pinned at zero.
    pub l1_hold_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SaeTrainOptions {
    fn default() -> Self {
        SaeTrainOptions {
            epochs: 400,
            batch_size: 64,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            l1_hold_fraction: 1.0,
            rng_seed: 0,
        }
    }
}

impl SaeTrainOptions {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(self.final_learning_rate.is_finite() && self.final_learning_rate > 0.0)
        {
            return Err(Error::Validation("learning rates must be positive and finite".into()));
        }
        if !(0.0..=1.0).contains(&self.l1_hold_fraction) {
            return Err(Error::Validation("l1_hold_fraction must lie in [0,1]".into()));
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

    fn l1_scale_at(&self, epoch: usize) -> f64 {
        const FLOOR: f64 = 0.3;
        let hold = (self.l1_hold_fraction * self.epochs as f64).floor() as usize;
        if epoch < hold || self.epochs <= hold {
            return 1.0;
        }
        let remaining = (self.epochs - hold) as f64;
        let t = (epoch - hold) as f64 / remaining;
        1.0 - (1.0 - FLOOR) * t
    }
}

impl SaeModel {
    pub fn input_dim(&self) -> usize {
        self.w_enc.nrows()
    }
    pub fn dict_size(&self) -> usize {
        self.w_enc.ncols()
    }
    pub fn l1_coefficient(&self) -> f64 {
        self.l1_coefficient
    }
    /// The dictionary atoms, one unit-norm row per feature.
    pub fn atoms(&self) -> &Array2<f64> {
        &self.w_dec
    }

    /// Nonnegative codes `[N, dict_size]`.
    pub fn encode(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "SAE expects {} input dims, points have {}",
                self.input_dim(),
                points.ncols()
            )));
        }
        let mut codes = points.dot(&self.w_enc) + &self.b_enc;
        codes.mapv_inplace(|v| v.max(0.0));
        Ok(codes)
    }

    pub fn decode(&self, codes: &Array2<f64>) -> Result<Array2<f64>> {
        if codes.ncols() != self.dict_size() {
            return Err(Error::ShapeMismatch(format!(
                "SAE has {} dictionary features, codes have {}",
                self.dict_size(),
                codes.ncols()
            )));
        }
        Ok(codes.dot(&self.w_dec) + &self.b_dec)
    }

    pub fn reconstruct(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(points)?)
    }

    /// Reconstruction and sparsity statistics on the given evaluation rows.
    pub fn stats(&self, eval: &Array2<f64>, activation_threshold: f64) -> Result<SaeStats> {
        if eval.nrows() == 0 {
            return Err(Error::Validation("empty evaluation slice".into()));
        }
        let codes = self.encode(eval)?;
        let rec = self.decode(&codes)?;
        let mse = eval
            .iter()
            .zip(rec.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / eval.len() as f64;
        let mut active_total = 0usize;
        let mut atom_ever_active = vec![false; self.dict_size()];
        for row in codes.rows() {
            for (j, &c) in row.iter().enumerate() {
                if c > activation_threshold {
                    active_total += 1;
                    atom_ever_active[j] = true;
                }
            }
        }
        let dead = atom_ever_active.iter().filter(|a| !**a).count();
        Ok(SaeStats {
            reconstruction_mse: mse,
            mean_active_features: active_total as f64 / codes.nrows() as f64,
            dead_feature_fraction: dead as f64 / self.dict_size() as f64,
            activation_threshold,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(NCAS_MAGIC);
        w.u32(NCAS_VERSION);
        w.u32(self.input_dim() as u32);
        w.u32(self.dict_size() as u32);
        w.f64(self.l1_coefficient);
        w.f64_slice(self.w_enc.iter().copied());
        w.f64_slice(self.b_enc.iter().copied());
        w.f64_slice(self.w_dec.iter().copied());
        w.f64_slice(self.b_dec.iter().copied());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(NCAS_MAGIC)?;
        r.expect_version(NCAS_VERSION)?;
        let input_dim = r.u32("input dim")? as usize;
        let dict = r.u32("dict size")? as usize;
        if input_dim == 0 || dict == 0 {
            return Err(r.corrupt(format!("degenerate dims {input_dim}x{dict}")));
        }
        let l1 = r.f64("l1 coefficient")?;
        let w_enc = Array2::from_shape_vec((input_dim, dict), r.f64_vec(input_dim * dict, "encoder weights")?)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let b_enc = Array1::from_vec(r.f64_vec(dict, "encoder bias")?);
        let w_dec = Array2::from_shape_vec((dict, input_dim), r.f64_vec(dict * input_dim, "decoder weights")?)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let b_dec = Array1::from_vec(r.f64_vec(input_dim, "decoder bias")?);
        r.finish()?;
        Ok(SaeModel {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            l1_coefficient: l1,
        })
    }

    pub fn save(&self, path: &str) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }
}

/// Fit a sparse autoencoder on the rows of `points`.
///
/// Minimises `‖x − x̂‖² + l1·‖code‖₁` (per sample) by Adam; after every step
/// the dictionary atoms are renormalised to unit length. Statistics are
/// computed on the last 10% of the rows with the default activation
/// threshold.
pub fn sae_fit(
    points: &Array2<f64>,
    expansion: usize,
    l1_coefficient: f64,
    opts: &SaeTrainOptions,
) -> Result<(SaeModel, SaeStats)> {
    opts.validate()?;
    let (n, d) = points.dim();
    if n < 2 || d == 0 {
        return Err(Error::Validation("SAE training needs at least 2 points".into()));
    }
    if expansion == 0 {
        return Err(Error::Validation("expansion must be at least 1".into()));
    }
    if !l1_coefficient.is_finite() || l1_coefficient < 0.0 {
        return Err(Error::Validation(format!("l1 coefficient {l1_coefficient} must be finite and >= 0")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("training cloud contains non-finite values".into()));
    }
    let dict = expansion * d;

    // Last 10% of the rows are held out for the statistics.
    let eval_start = n - (n / 10).max(1);
    let train_n = eval_start.max(1);

    // Atoms start as random unit vectors; the encoder starts as their
    // transpose so each feature initially detects its own atom.
    //
    // Without an L1 penalty the optimum is linear, and a linear exact
    // reconstruction is directly constructible: the first `d` atoms form
    // the standard basis, the encoder bias lifts every pre-activation above
    // the largest input norm (so the rectifier is in its linear regime on
    // the data), and the decoder bias cancels the lift. Starting there
    // means unpenalised fits begin at zero loss instead of grinding toward
    // it.
    let mut rng = StreamRng::new(opts.rng_seed, stream::INIT);
    let mut w_dec = Array2::from_shape_fn((dict, d), |_| rng.normal_f64());
    normalize_atoms(&mut w_dec)?;
    let mut model = if l1_coefficient == 0.0 {
        for j in 0..d {
            let mut row = w_dec.row_mut(j);
            row.fill(0.0);
            row[j] = 1.0;
        }
        let lift = 2.0 * points.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        let mut w_enc = Array2::zeros((d, dict));
        for j in 0..d {
            w_enc[(j, j)] = 1.0;
        }
        let b_dec = -lift * w_dec.sum_axis(Axis(0));
        SaeModel {
            w_enc,
            b_enc: Array1::from_elem(dict, lift),
            w_dec,
            b_dec,
            l1_coefficient,
        }
    } else {
        // Penalised fits start with a negative encoder bias so that only
        // strong atom matches fire at first. Starting with everything
        // firing lets several atoms split one data direction's coefficient
        // mass between them early on, and the L1 term is indifferent to
        // such splits (the sum of coefficients is unchanged), so they never
        // get pruned. A sparse start sidesteps that flat direction.
        let mean_norm = points
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .sum::<f64>()
            / n as f64;
        SaeModel {
            w_enc: w_dec.t().to_owned(),
            b_enc: Array1::from_elem(dict, -0.2 * mean_norm),
            w_dec,
            b_dec: Array1::zeros(d),
            l1_coefficient,
        }
    };

    let mut opt_enc_w = TensorOptimizer::new(OptimizerKind::default(), opts.learning_rate, d * dict)?;
    let mut opt_enc_b = TensorOptimizer::new(OptimizerKind::default(), opts.learning_rate, dict)?;
    let mut opt_dec_w = TensorOptimizer::new(OptimizerKind::default(), opts.learning_rate, dict * d)?;
    let mut opt_dec_b = TensorOptimizer::new(OptimizerKind::default(), opts.learning_rate, d)?;

    // When two atoms converge onto the same direction they share one
    // detector, and the L1 term cannot separate them (the coefficient sum
    // is unchanged however the mass is split). Standard dictionary-learning
    // hygiene: periodically silence the lesser-used atom of any
    // near-duplicate pair. Silenced atoms never fire again and count as
    // dead; nothing is resampled in their place.
    let prune_every = (opts.epochs / 16).max(1);
    let prune_window = (opts.l1_hold_fraction * opts.epochs as f64).floor() as usize;
    let silence = -1e3
        * (1.0
            + points
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt())
                .fold(0.0, f64::max));
    let mut mass = vec![0.0f64; dict];
    let mut gram: Array2<f64> = Array2::zeros((dict, dict));

    for epoch in 0..opts.epochs {
        let lr = opts.lr_at(epoch);
        let l1 = l1_coefficient * opts.l1_scale_at(epoch);
        let mut order_rng = StreamRng::new(mix(&[opts.rng_seed, epoch as u64]), stream::BATCH);
        let order = order_rng.choose_indices(train_n, train_n);
        mass.iter_mut().for_each(|m| *m = 0.0);
        gram.fill(0.0);
        for chunk in order.chunks(opts.batch_size.min(train_n)) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, d));
            for (bi, &src) in chunk.iter().enumerate() {
                x.row_mut(bi).assign(&points.row(src));
            }
            let pre = x.dot(&model.w_enc) + &model.b_enc;
            let code = pre.mapv(|v| v.max(0.0));
            let xhat = code.dot(&model.w_dec) + &model.b_dec;
            let diff = &xhat - &x;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / b as f64
                + l1 * code.iter().sum::<f64>() / b as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            for (j, m) in mass.iter_mut().enumerate() {
                *m += code.column(j).sum();
            }
            gram += &code.t().dot(&code);

            let g_xhat = diff.mapv(|v| 2.0 * v / b as f64);
            let dw_dec = code.t().dot(&g_xhat);
            let db_dec = g_xhat.sum_axis(Axis(0));
            let mut g_pre = g_xhat.dot(&model.w_dec.t()) + l1 / b as f64;
            g_pre.zip_mut_with(&pre, |g, p| {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            });
            let dw_enc = x.t().dot(&g_pre);
            let db_enc = g_pre.sum_axis(Axis(0));

            step_tensor(&mut opt_enc_w, lr, &mut model.w_enc, &dw_enc)?;
            step_vector(&mut opt_enc_b, lr, &mut model.b_enc, &db_enc)?;
            step_tensor(&mut opt_dec_w, lr, &mut model.w_dec, &dw_dec)?;
            step_vector(&mut opt_dec_b, lr, &mut model.b_dec, &db_dec)?;
            normalize_atoms(&mut model.w_dec)?;
        }

        if l1_coefficient > 0.0 && epoch < prune_window && (epoch + 1) % prune_every == 0 {
            prune_duplicate_atoms(&mut model, &mass, &gram, silence);
            recenter_atoms(&mut model, &points.slice(ndarray::s![..train_n, ..]).to_owned())?;
        }
    }

    let eval = points.slice(ndarray::s![eval_start.., ..]).to_owned();
    let stats = model.stats(&eval, DEFAULT_ACTIVATION_THRESHOLD)?;
    Ok((model, stats))
}

/// Exact coordinate-descent move on the dictionary: holding the codes
/// fixed, the unit atom minimising the reconstruction error is the
/// usage-weighted mean of the residuals of the samples that use it. Two
/// atoms that split one data direction between them both snap onto that
/// direction, which turns an unprunable angled split into an exact
/// duplicate pair.
fn recenter_atoms(model: &mut SaeModel, x: &Array2<f64>) -> Result<()> {
    let codes = model.encode(x)?;
    let xhat = model.decode(&codes)?;
    let residual = x - &xhat;
    for j in 0..model.dict_size() {
        let c = codes.column(j);
        let used_sq = c.dot(&c);
        if used_sq < 1e-12 {
            continue;
        }
        let mut v = residual.t().dot(&c);
        v.scaled_add(used_sq, &model.w_dec.row(j));
        let norm = v.dot(&v).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            continue;
        }
        model.w_dec.row_mut(j).assign(&(&v / norm));
    }
    Ok(())
}

/// Silence the lesser-used feature of every redundant pair: zero its
/// detector and drop its bias far below zero so the rectifier never opens
/// again. Redundancy is judged on the codes, not the atoms — two features
/// that split one data direction fire on the same samples (code columns
/// nearly collinear) long before their atom vectors coincide. Atom vectors
/// are left in place (they stay unit-norm and inert).
const DUPLICATE_CODE_COS: f64 = 0.9;

fn prune_duplicate_atoms(model: &mut SaeModel, mass: &[f64], gram: &Array2<f64>, silence: f64) {
    let dict = model.dict_size();
    for i in 0..dict {
        if model.b_enc[i] <= silence || gram[(i, i)] < 1e-12 {
            continue;
        }
        for j in (i + 1)..dict {
            if model.b_enc[j] <= silence || gram[(j, j)] < 1e-12 {
                continue;
            }
            let cos = gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt();
            if cos > DUPLICATE_CODE_COS {
                let loser = if mass[i] < mass[j] { i } else { j };
                model.w_enc.column_mut(loser).fill(0.0);
                model.b_enc[loser] = silence;
                if loser == i {
                    break;
                }
            }
        }
    }
}

fn normalize_atoms(w_dec: &mut Array2<f64>) -> Result<()> {
    for mut row in w_dec.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Numeric(format!("dictionary atom norm degenerated to {norm}")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

fn step_tensor(opt: &mut TensorOptimizer, lr: f64, params: &mut Array2<f64>, grad: &Array2<f64>) -> Result<()> {
    opt.set_lr(lr);
    let g: Array1<f64> = grad.iter().copied().collect();
    let mut flat: Array1<f64> = params.iter().copied().collect();
    opt.step(flat.view_mut(), &g)?;
    for (dst, src) in params.iter_mut().zip(flat.iter()) {
        *dst = *src;
    }
    Ok(())
}

fn step_vector(opt: &mut TensorOptimizer, lr: f64, params: &mut Array1<f64>, grad: &Array1<f64>) -> Result<()> {
    opt.set_lr(lr);
    opt.step(params.view_mut(), grad)?;
    Ok(())
}

/// One point per frame: the mean SAE code over that frame's cells (alive
/// cells only when `exclude_dead`). Colour is the frame's mean RGB.
pub fn per_frame_mean_features(model: &SaeModel, traj: &Trajectory, exclude_dead: bool) -> Result<PointCloud> {
    let c = traj.meta().channels;
    if model.input_dim() != c {
        return Err(Error::ShapeMismatch(format!(
            "SAE expects {} channels, trajectory has {c}",
            model.input_dim()
        )));
    }
    let threshold = traj.meta().alive_threshold;
    let mut points = Array2::zeros((traj.len(), model.dict_size()));
    let mut colours = Vec::with_capacity(traj.len());
    let mut provenance = Vec::with_capacity(traj.len());
    for (t, frame) in traj.frames().iter().enumerate() {
        let (h, w, _) = frame.values().dim();
        let mut rows: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for r in 0..h {
            for col in 0..w {
                if exclude_dead && !frame.cell_alive_raw(r, col, threshold) {
                    continue;
                }
                for ch in 0..c {
                    rows.push(frame.values()[(r, col, ch)] as f64);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Validation(format!(
                "frame {t} has no living cells; cannot average SAE features"
            )));
        }
        let cells = Array2::from_shape_vec((count, c), rows).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let codes = model.encode(&cells)?;
        let mean = codes.mean_axis(Axis(0)).unwrap();
        points.row_mut(t).assign(&mean);
        colours.push(frame_colour(frame, threshold));
        provenance.push(Provenance::MacroFrame(t));
    }
    PointCloud::new(points, colours, provenance)
}
