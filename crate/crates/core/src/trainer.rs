//! Backpropagation-through-time training of an [`NcaModel`] against fixed
//! or signal-switched targets, with a pool-based curriculum.
//!
//! The backward pass treats the stochastic fire mask and the life mask as
//! constant gates (both are flat almost everywhere), which is why analytic
//! gradients agree with central finite differences away from threshold
//! crossings. `finite_diff_gradient` exists purely to verify that claim.

use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis};
use rayon::prelude::*;

use crate::engine::{perceive, step_forward, StepAux};
use crate::error::{Error, Result};
use crate::grid::{GridState, Real};
use crate::model::NcaModel;
use crate::optim::{normalize_gradient, OptimizerKind, TensorOptimizer, GRAD_NORM_EPS};
use crate::rng::{self, stream, StreamRng};

/// Signal protocol for the two-target switching regime: a disc of
/// `+magnitude` (switch to target 1) or `-magnitude` (switch to target 0)
/// written into `channel` at a random centre at the start of a training
/// rollout.
#[derive(Debug, Clone)]
pub struct SwitchSignal {
    pub channel: usize,
    pub radius: f64,
    pub magnitude: f64,
    /// Probability that a training sample gets a switch signal.
    pub switch_prob: f64,
}

/// What the rollout end state is compared against.
#[derive(Debug, Clone)]
pub enum TrainTarget<T: Real> {
    /// One target image over the visible channels, `[h, w, c_vis]`.
    Fixed(Array3<T>),
    /// Two alternating targets; pool entries remember which one they are
    /// currently bound to and signals flip that binding.
    Switching {
        targets: [Array3<T>; 2],
        signal: SwitchSignal,
    },
}

impl<T: Real> TrainTarget<T> {
    fn target_for(&self, label: u8) -> &Array3<T> {
        match self {
            TrainTarget::Fixed(t) => t,
            TrainTarget::Switching { targets, .. } => &targets[label as usize],
        }
    }

    fn validate(&self, grid: &GridState<T>) -> Result<()> {
        let want = (
            grid.height(),
            grid.width(),
            grid.channel_mode().visible_channels(),
        );
        let check = |t: &Array3<T>| -> Result<()> {
            if t.dim() != want {
                return Err(Error::ShapeMismatch(format!(
                    "target shape {:?}, expected {:?}",
                    t.dim(),
                    want
                )));
            }
            if t.iter().any(|v| !v.as_f64().is_finite()) {
                return Err(Error::Validation("target contains non-finite values".into()));
            }
            Ok(())
        };
        match self {
            TrainTarget::Fixed(t) => check(t),
            TrainTarget::Switching { targets, signal } => {
                check(&targets[0])?;
                check(&targets[1])?;
                if signal.channel >= grid.channels() {
                    return Err(Error::Validation(format!(
                        "signal channel {} out of range for {} channels",
                        signal.channel,
                        grid.channels()
                    )));
                }
                if !(0.0..=1.0).contains(&signal.switch_prob) {
                    return Err(Error::Validation(format!(
                        "switch_prob must be in [0,1], got {}",
                        signal.switch_prob
                    )));
                }
                if !(signal.radius > 0.0) || !signal.magnitude.is_finite() {
                    return Err(Error::Validation(
                        "signal radius must be positive and magnitude finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps_min: usize,
    pub steps_max: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pool_size: usize,
    /// Replace the worst-loss batch entry with the canonical seed each epoch.
    pub pool_refresh: bool,
    pub optimizer: OptimizerKind,
    pub grad_norm_eps: f64,
    pub rng_seed: u64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 2e-3;

impl TrainConfig {
    pub fn for_epochs(epochs: usize) -> Self {
        TrainConfig {
            steps_min: 64,
            steps_max: 96,
            epochs,
            batch_size: 8,
            learning_rate: DEFAULT_LEARNING_RATE,
            pool_size: 32,
            pool_refresh: true,
            optimizer: OptimizerKind::default(),
            grad_norm_eps: GRAD_NORM_EPS,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_min == 0 || self.steps_min > self.steps_max {
            return Err(Error::Validation(format!(
                "need 1 <= steps_min <= steps_max, got {}..{}",
                self.steps_min, self.steps_max
            )));
        }
        if self.batch_size == 0 || self.pool_size < self.batch_size {
            return Err(Error::Validation(format!(
                "need batch_size >= 1 and pool_size >= batch_size, got batch {} pool {}",
                self.batch_size, self.pool_size
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Validation(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.grad_norm_eps > 0.0) {
            return Err(Error::Validation("grad_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean batch loss and wall time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    losses: Vec<f64>,
    seconds: Vec<f64>,
}

impl LossLog {
    pub fn push(&mut self, loss: f64, seconds: f64) {
        self.losses.push(loss);
        self.seconds.push(seconds);
    }
    pub fn len(&self) -> usize {
        self.losses.len()
    }
    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }
    pub fn seconds(&self) -> &[f64] {
        &self.seconds
    }

    /// Mean of the last `n` epoch losses (all of them if fewer).
    pub fn windowed_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n.max(1))..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn save_csv(&self, path: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(Error::from)?;
        wtr.write_record(["epoch", "loss", "seconds"])?;
        for (i, (l, s)) in self.losses.iter().zip(&self.seconds).enumerate() {
            wtr.write_record(&[format!("{i}"), format!("{l}"), format!("{s}")])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Root mean squared error between the grid's visible channels (RGBA in
/// `RgbaAlive` mode, RGB in `RgbPlain`) and `target`.
pub fn loss_rmse<T: Real>(grid: &GridState<T>, target: &Array3<T>) -> Result<f64> {
    let c_vis = grid.channel_mode().visible_channels();
    let (h, w, _) = grid.values().dim();
    if target.dim() != (h, w, c_vis) {
        return Err(Error::ShapeMismatch(format!(
            "target shape {:?}, expected {:?}",
            target.dim(),
            (h, w, c_vis)
        )));
    }
    let mut sum = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c_vis {
                let d = grid.values()[(y, x, ch)].as_f64() - target[(y, x, ch)].as_f64();
                sum += d * d;
            }
        }
    }
    Ok((sum / (h * w * c_vis) as f64).sqrt())
}

/// Gradients with the same shapes as the model's parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T: Real> {
    pub kernels: Array3<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
}

impl<T: Real> ModelGrads<T> {
    fn zeros_like(model: &NcaModel<T>) -> Self {
        ModelGrads {
            kernels: Array3::zeros(model.kernels.dim()),
            w1: Array2::zeros(model.w1.dim()),
            b1: Array1::zeros(model.b1.dim()),
            w2: Array2::zeros(model.w2.dim()),
        }
    }

    pub fn get(&self, coord: ParamCoord) -> T {
        match coord {
            ParamCoord::Kernels(i) => self.kernels.as_slice().expect("standard layout")[i],
            ParamCoord::W1(i) => self.w1.as_slice().expect("standard layout")[i],
            ParamCoord::B1(i) => self.b1.as_slice().expect("standard layout")[i],
            ParamCoord::W2(i) => self.w2.as_slice().expect("standard layout")[i],
        }
    }
}

/// A flat index into one of the model's parameter tensors (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCoord {
    Kernels(usize),
    W1(usize),
    B1(usize),
    W2(usize),
}

/// Every trainable coordinate of `model`, kernels included only when
/// `train_kernels` is set (their gradients are discarded otherwise).
pub fn all_param_coords<T: Real>(model: &NcaModel<T>) -> Vec<ParamCoord> {
    let mut coords = Vec::new();
    if model.train_kernels {
        coords.extend((0..model.kernels.len()).map(ParamCoord::Kernels));
    }
    coords.extend((0..model.w1.len()).map(ParamCoord::W1));
    coords.extend((0..model.b1.len()).map(ParamCoord::B1));
    coords.extend((0..model.w2.len()).map(ParamCoord::W2));
    coords
}

/// Add `delta` to one parameter coordinate in place.
pub fn perturb_param<T: Real>(model: &mut NcaModel<T>, coord: ParamCoord, delta: T) {
    let slot = match coord {
        ParamCoord::Kernels(i) => &mut model.kernels.as_slice_mut().expect("standard layout")[i],
        ParamCoord::W1(i) => &mut model.w1.as_slice_mut().expect("standard layout")[i],
        ParamCoord::B1(i) => &mut model.b1.as_slice_mut().expect("standard layout")[i],
        ParamCoord::W2(i) => &mut model.w2.as_slice_mut().expect("standard layout")[i],
    };
    *slot = *slot + delta;
}

/// Deterministic rollout loss: advance `steps` updates from `initial` with
/// fire draws keyed on `rng_seed`, then RMSE against `target`.
pub fn rollout_loss<T: Real>(
    model: &NcaModel<T>,
    initial: &GridState<T>,
    target: &Array3<T>,
    steps: usize,
    rng_seed: u64,
) -> Result<f64> {
    let mut state = initial.clone();
    for t in 0..steps {
        state = step_forward(&state, model, rng_seed, t as u64)?.0;
    }
    loss_rmse(&state, target)
}

/// Central finite difference of the rollout loss along one parameter
/// coordinate, step size 1e-5. 64-bit precision only; meant as the
/// verification oracle for [`bptt_gradient`].
pub fn finite_diff_gradient(
    model: &NcaModel<f64>,
    initial: &GridState<f64>,
    target: &Array3<f64>,
    steps: usize,
    rng_seed: u64,
    coord: ParamCoord,
) -> Result<f64> {
    let h = 1e-5;
    let mut plus = model.clone();
    perturb_param(&mut plus, coord, h);
    let mut minus = model.clone();
    perturb_param(&mut minus, coord, -h);
    let lp = rollout_loss(&plus, initial, target, steps, rng_seed)?;
    let lm = rollout_loss(&minus, initial, target, steps, rng_seed)?;
    Ok((lp - lm) / (2.0 * h))
}

/// Full BPTT pass: returns the loss, the analytic parameter gradients and
/// the rollout's end state.
pub fn bptt_gradient<T: Real>(
    model: &NcaModel<T>,
    initial: &GridState<T>,
    target: &Array3<T>,
    steps: usize,
    rng_seed: u64,
) -> Result<(f64, ModelGrads<T>, GridState<T>)> {
    let (h, w, c) = initial.values().dim();
    let hw = h * w;

    let mut grids: Vec<GridState<T>> = Vec::with_capacity(steps + 1);
    let mut auxes: Vec<StepAux<T>> = Vec::with_capacity(steps);
    grids.push(initial.clone());
    for t in 0..steps {
        let (next, aux) = step_forward(&grids[t], model, rng_seed, t as u64)?;
        grids.push(next);
        auxes.push(aux);
    }

    let final_grid = grids.last().expect("at least the initial state");
    let loss = loss_rmse(final_grid, target)?;
    let mut grads = ModelGrads::zeros_like(model);
    if loss == 0.0 || !loss.is_finite() {
        // Zero loss has zero gradient; non-finite loss is the caller's
        // abort signal and gradients would be garbage anyway.
        return Ok((loss, grads, final_grid.clone()));
    }

    let c_vis = initial.channel_mode().visible_channels();
    let n_vis = (hw * c_vis) as f64;
    let mut g_x: Array3<T> = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c_vis {
                let d = final_grid.values()[(y, x, ch)].as_f64() - target[(y, x, ch)].as_f64();
                g_x[(y, x, ch)] = T::from_f64(d / (n_vis * loss));
            }
        }
    }

    let circular = model.padding.is_circular();
    let pw = model.perception_width();
    let nk = model.n_kernels();
    for t in (0..steps).rev() {
        let aux = &auxes[t];
        let input = &grids[t];

        // Life masking zeroed dead cells; their gradients stop here.
        if let Some(alive) = &aux.alive {
            for y in 0..h {
                for x in 0..w {
                    if !alive[(y, x)] {
                        for ch in 0..c {
                            g_x[(y, x, ch)] = T::zero();
                        }
                    }
                }
            }
        }

        // Only fired cells received the ds increment.
        let mut g_ds: Array2<T> = Array2::zeros((hw, c));
        for y in 0..h {
            for x in 0..w {
                if aux.fire[(y, x)] {
                    for ch in 0..c {
                        g_ds[(y * w + x, ch)] = g_x[(y, x, ch)];
                    }
                }
            }
        }

        let a = aux.h1.mapv(Real::relu);
        grads.w2 = grads.w2 + a.t().dot(&g_ds);
        let g_a = g_ds.dot(&model.w2.t());
        let mut g_h1 = g_a;
        for (g, &pre) in g_h1.iter_mut().zip(aux.h1.iter()) {
            if pre <= T::zero() {
                *g = T::zero();
            }
        }

        let p = perceive(input, model)?;
        let p_flat = p
            .into_shape_with_order((hw, pw))
            .expect("perception tensor is contiguous");
        grads.w1 = grads.w1 + p_flat.t().dot(&g_h1);
        grads.b1 = grads.b1 + g_h1.sum_axis(Axis(0));
        let g_p = g_h1
            .dot(&model.w1.t())
            .into_shape_with_order((h, w, pw))
            .expect("fresh matmul output is contiguous");

        // The residual path dU/dX = I starts from the life-gated gradient;
        // the perception path scatters through the kernels (adjoint of the
        // forward gather, same padding rule).
        let mut g_prev = g_x;
        let gv = input.values();
        for y in 0..h {
            for x in 0..w {
                for dy in 0..3usize {
                    let sy = y as i64 + dy as i64 - 1;
                    let sy = if circular {
                        (sy + h as i64) % h as i64
                    } else if sy < 0 || sy >= h as i64 {
                        continue;
                    } else {
                        sy
                    } as usize;
                    for dx in 0..3usize {
                        let sx = x as i64 + dx as i64 - 1;
                        let sx = if circular {
                            (sx + w as i64) % w as i64
                        } else if sx < 0 || sx >= w as i64 {
                            continue;
                        } else {
                            sx
                        } as usize;
                        for k in 0..nk {
                            let kv = model.kernels[(k, dy, dx)];
                            for ch in 0..c {
                                let go = g_p[(y, x, k * c + ch)];
                                g_prev[(sy, sx, ch)] = g_prev[(sy, sx, ch)] + kv * go;
                                if model.train_kernels {
                                    grads.kernels[(k, dy, dx)] =
                                        grads.kernels[(k, dy, dx)] + gv[(sy, sx, ch)] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
        g_x = g_prev;
    }

    Ok((loss, grads, final_grid.clone()))
}

fn sample_seed(rng_seed: u64, epoch: usize, slot: usize) -> u64 {
    rng::mix(&[rng_seed, stream::STEPS, epoch as u64, slot as u64])
}

struct SampleSpec<T: Real> {
    pool_idx: usize,
    state: GridState<T>,
    label: u8,
    steps: usize,
    seed: u64,
}

/// Flat f64 master copies of the trainable tensors plus their optimizers.
struct ParamBank {
    w1: Array1<f64>,
    b1: Array1<f64>,
    w2: Array1<f64>,
    kernels: Option<Array1<f64>>,
    opts: Vec<TensorOptimizer>,
}

fn flat_f64<T: Real, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> Array1<f64> {
    Array1::from_iter(a.iter().map(|v| v.as_f64()))
}

fn write_flat<T: Real, D: ndarray::Dimension>(dst: &mut ndarray::Array<T, D>, src: &Array1<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = T::from_f64(*s);
    }
}

impl ParamBank {
    fn new<T: Real>(model: &NcaModel<T>, kind: OptimizerKind, lr: f64) -> Result<Self> {
        let w1 = flat_f64(&model.w1);
        let b1 = flat_f64(&model.b1);
        let w2 = flat_f64(&model.w2);
        let kernels = model.train_kernels.then(|| flat_f64(&model.kernels));
        let mut opts = vec![
            TensorOptimizer::new(kind, lr, w1.len())?,
            TensorOptimizer::new(kind, lr, b1.len())?,
            TensorOptimizer::new(kind, lr, w2.len())?,
        ];
        if let Some(k) = &kernels {
            opts.push(TensorOptimizer::new(kind, lr, k.len())?);
        }
        Ok(ParamBank {
            w1,
            b1,
            w2,
            kernels,
            opts,
        })
    }

    fn apply<T: Real>(
        &mut self,
        model: &mut NcaModel<T>,
        mean_grads: &[Array1<f64>],
        eps: f64,
    ) -> Result<()> {
        let mut grads = mean_grads.to_vec();
        for g in &mut grads {
            normalize_gradient(g.view_mut(), eps);
        }
        self.opts[0].step(self.w1.view_mut(), &grads[0])?;
        self.opts[1].step(self.b1.view_mut(), &grads[1])?;
        self.opts[2].step(self.w2.view_mut(), &grads[2])?;
        write_flat(&mut model.w1, &self.w1);
        write_flat(&mut model.b1, &self.b1);
        write_flat(&mut model.w2, &self.w2);
        if let Some(k) = &mut self.kernels {
            self.opts[3].step(k.view_mut(), &grads[3])?;
            write_flat(&mut model.kernels, k);
        }
        Ok(())
    }
}

/// Train with a callback invoked after every epoch (checkpointing, etc.).
pub fn train_with<T, F>(
    model: &NcaModel<T>,
    initial: &GridState<T>,
    target: &TrainTarget<T>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(NcaModel<T>, LossLog)>
where
    T: Real,
    F: FnMut(usize, f64, &NcaModel<T>) -> Result<()>,
{
    config.validate()?;
    crate::engine::check_compat(initial, model)?;
    target.validate(initial)?;

    let mut current = model.clone();
    let mut bank = ParamBank::new(&current, config.optimizer, config.learning_rate)?;
    let mut pool: Vec<(GridState<T>, u8)> = vec![(initial.clone(), 0); config.pool_size];
    let mut log = LossLog::default();
    let (h, w) = (initial.height(), initial.width());

    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        let mut rng = StreamRng::new(rng::mix(&[config.rng_seed, epoch as u64]), stream::BATCH);
        let batch = rng.choose_indices(config.pool_size, config.batch_size);

        if config.pool_refresh {
            let mut worst = (0usize, f64::NEG_INFINITY);
            for &idx in &batch {
                let (state, label) = &pool[idx];
                let l = loss_rmse(state, target.target_for(*label))?;
                if l > worst.1 {
                    worst = (idx, l);
                }
            }
            pool[worst.0] = (initial.clone(), 0);
        }

        let mut specs: Vec<SampleSpec<T>> = Vec::with_capacity(batch.len());
        for (slot, &pool_idx) in batch.iter().enumerate() {
            let (mut state, mut label) = pool[pool_idx].clone();
            if let TrainTarget::Switching { signal, .. } = target {
                if rng.unit_f64() < signal.switch_prob {
                    label = 1 - label;
                    let centre = (rng.below(h), rng.below(w));
                    let value = if label == 1 { signal.magnitude } else { -signal.magnitude };
                    state.apply_signal(centre, signal.radius, signal.channel, T::from_f64(value))?;
                }
            }
            let steps = rng.range_inclusive(config.steps_min, config.steps_max);
            specs.push(SampleSpec {
                pool_idx,
                state,
                label,
                steps,
                seed: sample_seed(config.rng_seed, epoch, slot),
            });
        }

        let results: Vec<Result<(f64, ModelGrads<T>, GridState<T>)>> = specs
            .par_iter()
            .map(|s| bptt_gradient(&current, &s.state, target.target_for(s.label), s.steps, s.seed))
            .collect();

        let mut mean_grads = vec![
            Array1::<f64>::zeros(current.w1.len()),
            Array1::<f64>::zeros(current.b1.len()),
            Array1::<f64>::zeros(current.w2.len()),
            Array1::<f64>::zeros(current.kernels.len()),
        ];
        let mut loss_sum = 0.0f64;
        let scale = 1.0 / config.batch_size as f64;
        for (spec, res) in specs.iter().zip(results) {
            let (loss, grads, end_state) =
                res.map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} (pool entry {})",
                    spec.pool_idx
                )));
            }
            loss_sum += loss;
            for (acc, g) in mean_grads[0].iter_mut().zip(grads.w1.iter()) {
                *acc += g.as_f64() * scale;
            }
            for (acc, g) in mean_grads[1].iter_mut().zip(grads.b1.iter()) {
                *acc += g.as_f64() * scale;
            }
            for (acc, g) in mean_grads[2].iter_mut().zip(grads.w2.iter()) {
                *acc += g.as_f64() * scale;
            }
            if current.train_kernels {
                for (acc, g) in mean_grads[3].iter_mut().zip(grads.kernels.iter()) {
                    *acc += g.as_f64() * scale;
                }
            }
            pool[spec.pool_idx] = (end_state, spec.label);
        }

        bank.apply(&mut current, &mean_grads, config.grad_norm_eps)?;

        let mean_loss = loss_sum / config.batch_size as f64;
        log.push(mean_loss, t0.elapsed().as_secs_f64());
        on_epoch(epoch, mean_loss, &current)?;
    }

    Ok((current, log))
}

/// BPTT training; see [`train_with`] for the checkpoint-callback variant.
pub fn train<T: Real>(
    model: &NcaModel<T>,
    initial: &GridState<T>,
    target: &TrainTarget<T>,
    config: &TrainConfig,
) -> Result<(NcaModel<T>, LossLog)> {
    train_with(model, initial, target, config, |_, _, _| Ok(()))
}
