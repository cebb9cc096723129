//! Grid state for a neural cellular automaton.

use ndarray::{Array3, ScalarOperand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point type the engine is generic over. The engine runs in `f32`
/// by default; gradient checking runs the identical code in `f64`.
pub trait Real:
    ndarray::LinalgScalar
    + ScalarOperand
    + num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    #[inline]
    fn relu(self) -> Self {
        self.max(Self::zero())
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// How the channel vector of a cell is interpreted.
///
/// `RgbaAlive`: channels 0..3 are RGB, channel 3 is alpha, and a cell counts
/// as alive when the 3x3 max-pool of alpha exceeds the model's threshold.
/// `RgbPlain`: channels 0..3 are RGB, there is no alive semantics and every
/// cell participates in every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    RgbaAlive,
    RgbPlain,
}

impl ChannelMode {
    pub fn as_u8(self) -> u8 {
        match self {
            ChannelMode::RgbaAlive => 0,
            ChannelMode::RgbPlain => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ChannelMode::RgbaAlive),
            1 => Ok(ChannelMode::RgbPlain),
            other => Err(Error::Validation(format!("unknown channel mode byte {other}"))),
        }
    }

    /// Channels that training losses and image export operate on:
    /// RGBA in `RgbaAlive` mode, RGB in `RgbPlain`.
    pub fn visible_channels(self) -> usize {
        match self {
            ChannelMode::RgbaAlive => 4,
            ChannelMode::RgbPlain => 3,
        }
    }

    /// Minimum channel count this mode makes sense with.
    pub fn min_channels(self) -> usize {
        match self {
            ChannelMode::RgbaAlive => 4,
            ChannelMode::RgbPlain => 3,
        }
    }
}

/// Index of the alpha channel in `RgbaAlive` mode.
pub const ALPHA_CHANNEL: usize = 3;

/// A `height x width x channels` grid of cell state vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState<T: Real> {
    values: Array3<T>,
    channel_mode: ChannelMode,
}

impl<T: Real> GridState<T> {
    /// All-zero grid. Dimensions must be at least 3x3 and the channel count
    /// must fit the mode.
    pub fn zeros(height: usize, width: usize, channels: usize, mode: ChannelMode) -> Result<Self> {
        validate_dims(height, width, channels, mode)?;
        Ok(GridState {
            values: Array3::from_elem((height, width, channels), T::zero()),
            channel_mode: mode,
        })
    }

    /// Wrap an existing value tensor.
    pub fn from_values(values: Array3<T>, mode: ChannelMode) -> Result<Self> {
        let (h, w, c) = values.dim();
        validate_dims(h, w, c, mode)?;
        Ok(GridState {
            values,
            channel_mode: mode,
        })
    }

    /// Canonical seed: zeros everywhere except the centre cell, whose
    /// non-RGB channels (alpha included, when present) are set to 1.
    pub fn seed(height: usize, width: usize, channels: usize, mode: ChannelMode) -> Result<Self> {
        let mut grid = Self::zeros(height, width, channels, mode)?;
        let (r, c) = (height / 2, width / 2);
        for ch in 3..channels {
            grid.values[(r, c, ch)] = T::from_f64(1.0);
        }
        Ok(grid)
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }
    pub fn width(&self) -> usize {
        self.values.dim().1
    }
    pub fn channels(&self) -> usize {
        self.values.dim().2
    }
    pub fn channel_mode(&self) -> ChannelMode {
        self.channel_mode
    }
    pub fn values(&self) -> &Array3<T> {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut Array3<T> {
        &mut self.values
    }
    pub fn into_values(self) -> Array3<T> {
        self.values
    }

    /// Whether the cell's own (un-pooled) alpha is above the threshold.
    /// In `RgbPlain` mode every cell counts as alive.
    pub fn cell_alive_raw(&self, row: usize, col: usize, threshold: f64) -> bool {
        match self.channel_mode {
            ChannelMode::RgbPlain => true,
            ChannelMode::RgbaAlive => self.values[(row, col, ALPHA_CHANNEL)].as_f64() > threshold,
        }
    }

    /// Overwrite every channel of every cell inside the half-open rectangle
    /// `[row0, row1) x [col0, col1)` with `fill`.
    pub fn apply_perturbation(&mut self, rect: (usize, usize, usize, usize), fill: T) -> Result<()> {
        let (r0, c0, r1, c1) = rect;
        if r0 > r1 || c0 > c1 {
            return Err(Error::Validation(format!(
                "perturbation rectangle has negative extent: ({r0},{c0},{r1},{c1})"
            )));
        }
        if r1 > self.height() || c1 > self.width() {
            return Err(Error::Validation(format!(
                "perturbation rectangle ({r0},{c0},{r1},{c1}) exceeds {}x{} grid",
                self.height(),
                self.width()
            )));
        }
        for r in r0..r1 {
            for c in c0..c1 {
                for ch in 0..self.channels() {
                    self.values[(r, c, ch)] = fill;
                }
            }
        }
        Ok(())
    }

    /// Write `value` into `channel` for every cell within Euclidean distance
    /// `radius` of `centre`.
    pub fn apply_signal(&mut self, centre: (usize, usize), radius: f64, channel: usize, value: T) -> Result<()> {
        if channel >= self.channels() {
            return Err(Error::Validation(format!(
                "signal channel {channel} out of range for {} channels",
                self.channels()
            )));
        }
        if centre.0 >= self.height() || centre.1 >= self.width() {
            return Err(Error::Validation(format!(
                "signal centre ({},{}) outside {}x{} grid",
                centre.0,
                centre.1,
                self.height(),
                self.width()
            )));
        }
        let r2 = radius * radius;
        for r in 0..self.height() {
            for c in 0..self.width() {
                let dr = r as f64 - centre.0 as f64;
                let dc = c as f64 - centre.1 as f64;
                if dr * dr + dc * dc <= r2 {
                    self.values[(r, c, channel)] = value;
                }
            }
        }
        Ok(())
    }

    /// Flatten to a row-major, channel-fastest vector of length `h*w*c`.
    pub fn flatten(&self) -> Vec<T> {
        self.values.iter().copied().collect()
    }

    /// Rebuild from a flat row-major channel-fastest vector.
    pub fn from_flat(flat: &[T], height: usize, width: usize, channels: usize, mode: ChannelMode) -> Result<Self> {
        if flat.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "flat state has {} values, expected {}x{}x{} = {}",
                flat.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        let values = Array3::from_shape_vec((height, width, channels), flat.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::from_values(values, mode)
    }

    pub fn map_precision<U: Real>(&self) -> GridState<U> {
        GridState {
            values: self.values.mapv(|v| U::from_f64(v.as_f64())),
            channel_mode: self.channel_mode,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.as_f64().is_finite())
    }

    /// Count of cells whose 3x3 max-pooled alpha exceeds `threshold`
    /// (every cell in `RgbPlain` mode). Pooling wraps when `circular`.
    pub fn alive_count_pooled(&self, threshold: f64, circular: bool) -> usize {
        match self.channel_mode {
            ChannelMode::RgbPlain => self.height() * self.width(),
            ChannelMode::RgbaAlive => {
                let mask = crate::engine::alive_mask(self, T::from_f64(threshold), circular);
                mask.iter().filter(|&&m| m).count()
            }
        }
    }
}

fn validate_dims(height: usize, width: usize, channels: usize, mode: ChannelMode) -> Result<()> {
    if height < 3 || width < 3 {
        return Err(Error::Validation(format!(
            "grid must be at least 3x3, got {height}x{width}"
        )));
    }
    if channels < mode.min_channels() {
        return Err(Error::Validation(format!(
            "{mode:?} needs at least {} channels, got {channels}",
            mode.min_channels()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_sets_only_centre_hidden_channels() {
        let g = GridState::<f32>::seed(5, 7, 6, ChannelMode::RgbaAlive).unwrap();
        let mut nonzero = 0;
        for r in 0..5 {
            for c in 0..7 {
                for ch in 0..6 {
                    let v = g.values()[(r, c, ch)];
                    if v != 0.0 {
                        nonzero += 1;
                        assert_eq!((r, c), (2, 3));
                        assert!(ch >= 3);
                        assert_eq!(v, 1.0);
                    }
                }
            }
        }
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn seed_alive_count_after_pooling_is_nine() {
        let g = GridState::<f32>::seed(9, 9, 5, ChannelMode::RgbaAlive).unwrap();
        assert_eq!(g.alive_count_pooled(0.1, true), 9);
    }

    #[test]
    fn dims_below_3x3_are_rejected() {
        assert!(GridState::<f32>::zeros(2, 5, 4, ChannelMode::RgbaAlive).is_err());
        assert!(GridState::<f32>::zeros(5, 2, 4, ChannelMode::RgbaAlive).is_err());
        assert!(GridState::<f32>::zeros(3, 3, 3, ChannelMode::RgbaAlive).is_err());
        assert!(GridState::<f32>::zeros(3, 3, 3, ChannelMode::RgbPlain).is_ok());
    }

    #[test]
    fn perturbation_rectangle_is_half_open() {
        let mut g = GridState::<f32>::seed(60, 60, 4, ChannelMode::RgbaAlive).unwrap();
        for r in 0..60 {
            for c in 0..60 {
                g.values_mut()[(r, c, 0)] = 0.7;
            }
        }
        g.apply_perturbation((20, 20, 40, 40), 0.0).unwrap();
        let zeroed = g
            .values()
            .indexed_iter()
            .filter(|((_, _, ch), v)| *ch == 0 && **v == 0.0)
            .count();
        assert_eq!(zeroed, 400);
    }

    #[test]
    fn empty_perturbation_is_identity() {
        let mut g = GridState::<f32>::seed(8, 8, 4, ChannelMode::RgbaAlive).unwrap();
        let before = g.clone();
        g.apply_perturbation((3, 3, 3, 6), 9.0).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn out_of_bounds_rectangle_is_rejected() {
        let mut g = GridState::<f32>::zeros(8, 8, 4, ChannelMode::RgbaAlive).unwrap();
        assert!(g.apply_perturbation((0, 0, 9, 4), 0.0).is_err());
    }

    #[test]
    fn flatten_is_row_major_channel_fastest() {
        let mut g = GridState::<f64>::zeros(3, 3, 3, ChannelMode::RgbPlain).unwrap();
        g.values_mut()[(0, 0, 0)] = 1.0;
        g.values_mut()[(0, 0, 2)] = 3.0;
        g.values_mut()[(0, 1, 0)] = 4.0;
        g.values_mut()[(1, 0, 0)] = 10.0;
        let flat = g.flatten();
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[2], 3.0);
        assert_eq!(flat[3], 4.0);
        assert_eq!(flat[9], 10.0);
        let back = GridState::from_flat(&flat, 3, 3, 3, ChannelMode::RgbPlain).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn signal_writes_a_disc() {
        let mut g = GridState::<f32>::zeros(9, 9, 5, ChannelMode::RgbPlain).unwrap();
        g.apply_signal((4, 4), 2.0, 4, 1.0).unwrap();
        let touched = g.values().indexed_iter().filter(|(_, v)| **v == 1.0).count();
        assert_eq!(touched, 13);
        assert_eq!(g.values()[(4, 4, 4)], 1.0);
        assert_eq!(g.values()[(4, 6, 4)], 1.0);
        assert_eq!(g.values()[(6, 6, 4)], 0.0);
    }
}
