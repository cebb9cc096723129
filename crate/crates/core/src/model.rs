//! NCA model parameters and the `.ncam` file format.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::grid::{ChannelMode, Real};
use crate::rng::{stream, StreamRng};

pub const DEFAULT_FIRE_RATE: f64 = 0.5;
pub const DEFAULT_ALIVE_THRESHOLD: f64 = 0.1;
const NCAM_MAGIC: &[u8; 4] = b"NCAM";
const NCAM_VERSION: u32 = 1;

/// Boundary handling for perception and alpha pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Wrap around (torus topology). The default.
    Circular,
    /// Treat everything outside the grid as zero.
    Zero,
}

impl Padding {
    pub fn as_u8(self) -> u8 {
        match self {
            Padding::Circular => 0,
            Padding::Zero => 1,
        }
    }
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Padding::Circular),
            1 => Ok(Padding::Zero),
            other => Err(Error::Validation(format!("unknown padding byte {other}"))),
        }
    }
    pub fn is_circular(self) -> bool {
        self == Padding::Circular
    }
}

/// Parameters of one NCA update rule.
///
/// Per step each cell perceives its 3x3 neighbourhood through `kernels`
/// (one 3x3 filter per kernel, applied to every channel), passes the
/// concatenated response through a two-layer network
/// `ds = w2 . relu(w1 . perception + b1)`, and adds `ds` where an
/// independent Bernoulli(`fire_rate`) draw fires.
#[derive(Debug, Clone, PartialEq)]
pub struct NcaModel<T: Real> {
    pub channel_mode: ChannelMode,
    pub padding: Padding,
    /// When false, kernel gradients are discarded during training.
    pub train_kernels: bool,
    /// `[n_kernels, 3, 3]`.
    pub kernels: Array3<T>,
    /// `[n_kernels * channels, hidden_width]`.
    pub w1: Array2<T>,
    /// `[hidden_width]`.
    pub b1: Array1<T>,
    /// `[hidden_width, channels]`.
    pub w2: Array2<T>,
    pub fire_rate: f64,
    pub alive_threshold: f64,
}

/// The classic fixed perception filters: identity, Sobel-x, Sobel-y.
pub fn default_kernels<T: Real>() -> Array3<T> {
    let raw: [[[f64; 3]; 3]; 3] = [
        [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]],
        [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
        [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
    ];
    Array3::from_shape_fn((3, 3, 3), |(k, r, c)| T::from_f64(raw[k][r][c]))
}

impl<T: Real> NcaModel<T> {
    /// Fresh model with the default identity/Sobel kernels, Glorot-uniform
    /// `w1` and zero `w2` (so the initial dynamics are close to identity).
    pub fn new_seeded(channels: usize, hidden_width: usize, mode: ChannelMode, seed: u64) -> Result<Self> {
        if channels < mode.min_channels() {
            return Err(Error::Validation(format!(
                "{mode:?} needs at least {} channels, got {channels}",
                mode.min_channels()
            )));
        }
        if hidden_width == 0 {
            return Err(Error::Validation("hidden width must be positive".into()));
        }
        let kernels = default_kernels::<T>();
        let n_kernels = kernels.dim().0;
        let fan_in = n_kernels * channels;
        let bound = (6.0 / (fan_in + hidden_width) as f64).sqrt();
        let mut rng = StreamRng::new(seed, stream::INIT);
        let w1 = Array2::from_shape_fn((fan_in, hidden_width), |_| T::from_f64(rng.range_f64(-bound, bound)));
        Ok(NcaModel {
            channel_mode: mode,
            padding: Padding::Circular,
            train_kernels: false,
            kernels,
            w1,
            b1: Array1::from_elem(hidden_width, T::zero()),
            w2: Array2::from_elem((hidden_width, channels), T::zero()),
            fire_rate: DEFAULT_FIRE_RATE,
            alive_threshold: DEFAULT_ALIVE_THRESHOLD,
        })
    }

    pub fn channels(&self) -> usize {
        self.w2.ncols()
    }
    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }
    pub fn n_kernels(&self) -> usize {
        self.kernels.dim().0
    }
    pub fn perception_width(&self) -> usize {
        self.n_kernels() * self.channels()
    }

    /// Internal consistency of the parameter shapes.
    pub fn validate(&self) -> Result<()> {
        let (k, kr, kc) = self.kernels.dim();
        if (kr, kc) != (3, 3) || k == 0 {
            return Err(Error::ShapeMismatch(format!("kernels must be [k,3,3], got [{k},{kr},{kc}]")));
        }
        if self.w1.nrows() != k * self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "w1 rows {} != n_kernels * channels = {}",
                self.w1.nrows(),
                k * self.channels()
            )));
        }
        if self.b1.len() != self.hidden_width() {
            return Err(Error::ShapeMismatch(format!(
                "b1 length {} != hidden width {}",
                self.b1.len(),
                self.hidden_width()
            )));
        }
        if self.w2.nrows() != self.hidden_width() {
            return Err(Error::ShapeMismatch(format!(
                "w2 rows {} != hidden width {}",
                self.w2.nrows(),
                self.hidden_width()
            )));
        }
        if !(0.0..=1.0).contains(&self.fire_rate) {
            return Err(Error::Validation(format!("fire_rate {} outside [0,1]", self.fire_rate)));
        }
        if self.channels() < self.channel_mode.min_channels() {
            return Err(Error::Validation(format!(
                "{:?} needs at least {} channels, got {}",
                self.channel_mode,
                self.channel_mode.min_channels(),
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn map_precision<U: Real>(&self) -> NcaModel<U> {
        NcaModel {
            channel_mode: self.channel_mode,
            padding: self.padding,
            train_kernels: self.train_kernels,
            kernels: self.kernels.mapv(|v| U::from_f64(v.as_f64())),
            w1: self.w1.mapv(|v| U::from_f64(v.as_f64())),
            b1: self.b1.mapv(|v| U::from_f64(v.as_f64())),
            w2: self.w2.mapv(|v| U::from_f64(v.as_f64())),
            fire_rate: self.fire_rate,
            alive_threshold: self.alive_threshold,
        }
    }

    /// Serialized `.ncam` bytes (parameters stored as f32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(NCAM_MAGIC);
        w.u32(NCAM_VERSION);
        w.u8(self.channel_mode.as_u8());
        w.u8(self.padding.as_u8());
        w.u8(self.train_kernels as u8);
        w.u8(0);
        w.u32(self.channels() as u32);
        w.u32(self.n_kernels() as u32);
        w.u32(self.hidden_width() as u32);
        w.f32_slice(self.kernels.iter().map(|v| v.as_f64() as f32));
        w.f32_slice(self.w1.iter().map(|v| v.as_f64() as f32));
        w.f32_slice(self.b1.iter().map(|v| v.as_f64() as f32));
        w.f32_slice(self.w2.iter().map(|v| v.as_f64() as f32));
        w.f64(self.fire_rate);
        w.f64(self.alive_threshold);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(NCAM_MAGIC)?;
        r.expect_version(NCAM_VERSION)?;
        let mode = ChannelMode::from_u8(r.u8("channel mode")?)?;
        let padding = Padding::from_u8(r.u8("padding")?)?;
        let train_kernels = r.u8("train_kernels flag")? != 0;
        r.u8("reserved")?;
        let channels = r.u32("channels")? as usize;
        let n_kernels = r.u32("n_kernels")? as usize;
        let hidden = r.u32("hidden width")? as usize;
        if channels == 0 || n_kernels == 0 || hidden == 0 {
            return Err(r.corrupt(format!(
                "degenerate dims: channels={channels} kernels={n_kernels} hidden={hidden}"
            )));
        }
        let kernels = r.f32_vec(n_kernels * 9, "kernels")?;
        let w1 = r.f32_vec(n_kernels * channels * hidden, "w1")?;
        let b1 = r.f32_vec(hidden, "b1")?;
        let w2 = r.f32_vec(hidden * channels, "w2")?;
        let fire_rate = r.f64("fire_rate")?;
        let alive_threshold = r.f64("alive_threshold")?;
        r.finish()?;
        let model = NcaModel {
            channel_mode: mode,
            padding,
            train_kernels,
            kernels: Array3::from_shape_vec((n_kernels, 3, 3), kernels)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?
                .mapv(|v| T::from_f64(v as f64)),
            w1: Array2::from_shape_vec((n_kernels * channels, hidden), w1)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?
                .mapv(|v| T::from_f64(v as f64)),
            b1: Array1::from_vec(b1).mapv(|v| T::from_f64(v as f64)),
            w2: Array2::from_shape_vec((hidden, channels), w2)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?
                .mapv(|v| T::from_f64(v as f64)),
            fire_rate,
            alive_threshold,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }

    /// Content hash of the serialized model, recorded in trajectories.
    pub fn content_hash(&self) -> u64 {
        binio::fnv1a64(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ncam");
        let path = path.to_str().unwrap();
        let mut model = NcaModel::<f32>::new_seeded(6, 24, ChannelMode::RgbaAlive, 11).unwrap();
        model.fire_rate = 0.75;
        model.train_kernels = true;
        model.padding = Padding::Zero;
        model.save(path).unwrap();
        let back = NcaModel::<f32>::load(path).unwrap();
        assert_eq!(model, back);
        assert_eq!(model.content_hash(), back.content_hash());
    }

    #[test]
    fn corrupt_truncated_and_wrong_version_are_distinct_errors() {
        let model = NcaModel::<f32>::new_seeded(4, 8, ChannelMode::RgbaAlive, 0).unwrap();
        let bytes = model.to_bytes();

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        match NcaModel::<f32>::from_bytes(&corrupt, "x.ncam") {
            Err(Error::CorruptHeader { .. }) => {}
            other => panic!("expected corrupt header, got {other:?}"),
        }

        let truncated = &bytes[..bytes.len() - 3];
        match NcaModel::<f32>::from_bytes(truncated, "x.ncam") {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected truncation, got {other:?}"),
        }

        let mut wrong_version = bytes.clone();
        wrong_version[4..8].copy_from_slice(&99u32.to_le_bytes());
        match NcaModel::<f32>::from_bytes(&wrong_version, "x.ncam") {
            Err(Error::VersionMismatch { found: 99, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn default_kernels_are_identity_and_sobel() {
        let k = default_kernels::<f64>();
        assert_eq!(k[(0, 1, 1)], 1.0);
        assert_eq!(k.index_axis(ndarray::Axis(0), 0).sum(), 1.0);
        // Sobel pair: x is the transpose of y.
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(k[(1, r, c)], k[(2, c, r)]);
            }
        }
        assert_eq!(k[(1, 1, 2)], 2.0);
    }

    #[test]
    fn seeded_init_is_reproducible_and_w2_is_zero() {
        let a = NcaModel::<f32>::new_seeded(8, 32, ChannelMode::RgbPlain, 5).unwrap();
        let b = NcaModel::<f32>::new_seeded(8, 32, ChannelMode::RgbPlain, 5).unwrap();
        let c = NcaModel::<f32>::new_seeded(8, 32, ChannelMode::RgbPlain, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.w1, c.w1);
        assert!(a.w2.iter().all(|&v| v == 0.0));
        a.validate().unwrap();
    }
}
