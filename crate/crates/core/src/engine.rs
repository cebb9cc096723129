//! The NCA update engine: perception, stochastic update steps and rollouts.
//!
//! All stochasticity comes from a counter-based generator keyed on
//! `(rng_seed, step, row, col)`, so results are bit-identical for the same
//! inputs no matter how the work is scheduled.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::events::{apply_event, EventScript};
use crate::grid::{ChannelMode, GridState, Real, ALPHA_CHANNEL};
use crate::model::NcaModel;
use crate::rng::{self, stream};
use crate::trajectory::{Trajectory, TrajectoryMeta};

pub(crate) fn check_compat<T: Real>(grid: &GridState<T>, model: &NcaModel<T>) -> Result<()> {
    model.validate()?;
    if grid.channels() != model.channels() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} channels but model expects {}",
            grid.channels(),
            model.channels()
        )));
    }
    if grid.channel_mode() != model.channel_mode {
        return Err(Error::ShapeMismatch(format!(
            "grid mode {:?} != model mode {:?}",
            grid.channel_mode(),
            model.channel_mode
        )));
    }
    Ok(())
}

/// Depthwise 3x3 perception. Output is `[h, w, n_kernels * channels]` with
/// kernel-major feature layout: feature `k * channels + ch` is kernel `k`
/// correlated with channel `ch`. Boundary handling follows `model.padding`.
pub fn perceive<T: Real>(grid: &GridState<T>, model: &NcaModel<T>) -> Result<Array3<T>> {
    check_compat(grid, model)?;
    let (h, w, c) = grid.values().dim();
    let nk = model.n_kernels();
    let circular = model.padding.is_circular();
    let g = grid.values();
    let mut out = Array3::from_elem((h, w, nk * c), T::zero());
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
                        if kv == T::zero() {
                            continue;
                        }
                        for ch in 0..c {
                            out[(y, x, k * c + ch)] = out[(y, x, k * c + ch)] + kv * g[(sy, sx, ch)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 3x3 max-pool of the alpha channel compared against `threshold`.
/// With zero padding the outside counts as alpha 0.
pub fn alive_mask<T: Real>(grid: &GridState<T>, threshold: T, circular: bool) -> Array2<bool> {
    let (h, w, _) = grid.values().dim();
    let g = grid.values();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut m = if circular { T::neg_infinity() } else { T::zero() };
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                let (sy, sx) = if circular {
                    (((sy + h as i64) % h as i64) as usize, ((sx + w as i64) % w as i64) as usize)
                } else {
                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    (sy as usize, sx as usize)
                };
                m = m.max(g[(sy, sx, ALPHA_CHANNEL)]);
            }
        }
        m > threshold
    })
}

/// Per-cell Bernoulli(`fire_rate`) mask for one step, keyed on
/// `(rng_seed, step, row, col)`.
pub fn fire_mask(height: usize, width: usize, fire_rate: f64, rng_seed: u64, step: u64) -> Array2<bool> {
    Array2::from_shape_fn((height, width), |(r, c)| {
        rng::unit_f64(&[rng_seed, stream::FIRE, step, r as u64, c as u64]) < fire_rate
    })
}

/// Intermediates of one update step that the trainer's backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct StepAux<T: Real> {
    /// Pre-activation of the hidden layer, `[h*w, hidden]`.
    pub h1: Array2<T>,
    pub fire: Array2<bool>,
    /// Combined pre-and-post life mask (None in `RgbPlain` mode).
    pub alive: Option<Array2<bool>>,
}

pub(crate) fn step_forward<T: Real>(
    grid: &GridState<T>,
    model: &NcaModel<T>,
    rng_seed: u64,
    step: u64,
) -> Result<(GridState<T>, StepAux<T>)> {
    let (h, w, c) = grid.values().dim();
    let p = perceive(grid, model)?;
    let hw = h * w;
    let p_flat = p
        .into_shape_with_order((hw, model.perception_width()))
        .expect("perception tensor is contiguous");
    let mut h1 = p_flat.dot(&model.w1);
    h1 = h1 + &model.b1;
    let a = h1.mapv(Real::relu);
    let ds = a.dot(&model.w2);

    let fire = fire_mask(h, w, model.fire_rate, rng_seed, step);
    let mut out = grid.clone();
    {
        let values = out.values_mut();
        for y in 0..h {
            for x in 0..w {
                if fire[(y, x)] {
                    let row = y * w + x;
                    for ch in 0..c {
                        values[(y, x, ch)] = values[(y, x, ch)] + ds[(row, ch)];
                    }
                }
            }
        }
    }

    let alive = if model.channel_mode == ChannelMode::RgbaAlive {
        let thr = T::from_f64(model.alive_threshold);
        let circ = model.padding.is_circular();
        let pre = alive_mask(grid, thr, circ);
        let post = alive_mask(&out, thr, circ);
        let both = Array2::from_shape_fn((h, w), |i| pre[i] && post[i]);
        let values = out.values_mut();
        for y in 0..h {
            for x in 0..w {
                if !both[(y, x)] {
                    for ch in 0..c {
                        values[(y, x, ch)] = T::zero();
                    }
                }
            }
        }
        Some(both)
    } else {
        None
    };

    Ok((out, StepAux { h1, fire, alive }))
}

/// Advance one step. Stochastic fire draws are keyed on
/// `(rng_seed, step, row, col)`; in `RgbaAlive` mode cells failing the
/// pre-and-post life test have every channel zeroed.
pub fn update_step<T: Real>(
    grid: &GridState<T>,
    model: &NcaModel<T>,
    rng_seed: u64,
    step: u64,
) -> Result<GridState<T>> {
    step_forward(grid, model, rng_seed, step).map(|(out, _)| out)
}

/// Roll the model forward `steps` updates from `initial`, applying scripted
/// events at the start of their timestep and recording every
/// `record_every`-th state, state 0 included.
pub fn rollout(
    model: &NcaModel<f32>,
    initial: &GridState<f32>,
    steps: usize,
    events: &EventScript,
    rng_seed: u64,
    record_every: usize,
) -> Result<Trajectory> {
    if record_every == 0 {
        return Err(Error::Validation("record_every must be at least 1".into()));
    }
    check_compat(initial, model)?;
    events.validate(initial.height(), initial.width(), initial.channels())?;

    let mut frames = Vec::with_capacity(steps / record_every + 1);
    let mut state = initial.clone();
    for t in 0..=steps {
        for (idx, ev) in events.at(t) {
            apply_event(&mut state, ev, idx, rng_seed)?;
        }
        if t % record_every == 0 {
            frames.push(state.clone());
        }
        if t < steps {
            state = update_step(&state, model, rng_seed, t as u64)?;
            if !state.is_finite() {
                return Err(Error::Numeric(format!("non-finite state after step {t}")));
            }
        }
    }

    let meta = TrajectoryMeta {
        height: initial.height(),
        width: initial.width(),
        channels: initial.channels(),
        channel_mode: initial.channel_mode(),
        record_every,
        rng_seed,
        model_hash: model.content_hash(),
        alive_threshold: model.alive_threshold,
    };
    Trajectory::new(meta, frames, events.clone())
}
