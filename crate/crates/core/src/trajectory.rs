//! Recorded rollouts and the `.ncat` file format.

use ndarray::Array3;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::events::EventScript;
use crate::grid::{ChannelMode, GridState};

const NCAT_MAGIC: &[u8; 4] = b"NCAT";
const NCAT_VERSION: u32 = 1;

/// Fixed-size portion of the `.ncat` header, in bytes. The full file is
/// `header + frame_count * h * w * c * 4` frame bytes followed by a
/// u32-length-prefixed JSON event log.
pub const NCAT_HEADER_BYTES: usize = 4 + 4 + 3 * 4 + 1 + 3 + 4 + 8 + 8 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub channel_mode: ChannelMode,
    pub record_every: usize,
    pub rng_seed: u64,
    /// Content hash of the model that produced the rollout.
    pub model_hash: u64,
    /// Alive threshold the model used; extraction reuses it to tell dead
    /// cells apart.
    pub alive_threshold: f64,
}

/// A sequence of recorded grid states plus the event script that was applied
/// during the rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    meta: TrajectoryMeta,
    frames: Vec<GridState<f32>>,
    events: EventScript,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta, frames: Vec<GridState<f32>>, events: EventScript) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Validation("trajectory needs at least one frame".into()));
        }
        if meta.record_every == 0 {
            return Err(Error::Validation("record_every must be at least 1".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.height() != meta.height || f.width() != meta.width || f.channels() != meta.channels {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} is {}x{}x{}, metadata says {}x{}x{}",
                    f.height(),
                    f.width(),
                    f.channels(),
                    meta.height,
                    meta.width,
                    meta.channels
                )));
            }
            if f.channel_mode() != meta.channel_mode {
                return Err(Error::ShapeMismatch(format!("frame {i} channel mode differs from metadata")));
            }
        }
        Ok(Trajectory { meta, frames, events })
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }
    pub fn len(&self) -> usize {
        self.frames.len()
    }
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
    pub fn frame(&self, i: usize) -> &GridState<f32> {
        &self.frames[i]
    }
    pub fn frames(&self) -> &[GridState<f32>] {
        &self.frames
    }
    pub fn events(&self) -> &EventScript {
        &self.events
    }
    /// Timestep a recorded frame index corresponds to.
    pub fn frame_timestep(&self, i: usize) -> usize {
        i * self.meta.record_every
    }
    /// Flattened state-space dimension of one frame.
    pub fn state_dim(&self) -> usize {
        self.meta.height * self.meta.width * self.meta.channels
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.magic(NCAT_MAGIC);
        w.u32(NCAT_VERSION);
        w.u32(self.meta.height as u32);
        w.u32(self.meta.width as u32);
        w.u32(self.meta.channels as u32);
        w.u8(self.meta.channel_mode.as_u8());
        w.u8(0);
        w.u8(0);
        w.u8(0);
        w.u32(self.meta.record_every as u32);
        w.u64(self.meta.rng_seed);
        w.u64(self.meta.model_hash);
        w.f64(self.meta.alive_threshold);
        w.u32(self.frames.len() as u32);
        for f in &self.frames {
            w.f32_slice(f.values().iter().copied());
        }
        let events = serde_json::to_vec(&self.events)?;
        w.prefixed_bytes(&events);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(NCAT_MAGIC)?;
        r.expect_version(NCAT_VERSION)?;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let channels = r.u32("channels")? as usize;
        let channel_mode = ChannelMode::from_u8(r.u8("channel mode")?)?;
        r.u8("reserved")?;
        r.u8("reserved")?;
        r.u8("reserved")?;
        let record_every = r.u32("record_every")? as usize;
        let rng_seed = r.u64("rng_seed")?;
        let model_hash = r.u64("model_hash")?;
        let alive_threshold = r.f64("alive_threshold")?;
        let frame_count = r.u32("frame count")? as usize;
        if height == 0 || width == 0 || channels == 0 || frame_count == 0 {
            return Err(r.corrupt(format!(
                "degenerate dims {height}x{width}x{channels}, {frame_count} frames"
            )));
        }
        let per_frame = height * width * channels;
        let mut frames = Vec::with_capacity(frame_count);
        for i in 0..frame_count {
            let flat = r.f32_vec(per_frame, &format!("frame {i}"))?;
            let values = Array3::from_shape_vec((height, width, channels), flat)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            frames.push(GridState::from_values(values, channel_mode)?);
        }
        let events: EventScript = serde_json::from_slice(r.prefixed_bytes("event log")?)?;
        r.finish()?;
        Trajectory::new(
            TrajectoryMeta {
                height,
                width,
                channels,
                channel_mode,
                record_every,
                rng_seed,
                model_hash,
                alive_threshold,
            },
            frames,
            events,
        )
    }

    pub fn save(&self, path: &str) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventKind};

    fn sample_traj(frames: usize, h: usize, w: usize, c: usize) -> Trajectory {
        let mut rng = crate::rng::StreamRng::new(1, crate::rng::stream::DATA);
        let frames: Vec<GridState<f32>> = (0..frames)
            .map(|_| {
                let mut g = GridState::zeros(h, w, c, ChannelMode::RgbaAlive).unwrap();
                g.values_mut().mapv_inplace(|_| rng.range_f64(-1.0, 1.0) as f32);
                g
            })
            .collect();
        let events = EventScript {
            events: vec![Event {
                timestep: 2,
                kind: EventKind::Signal {
                    centre: (h / 2, w / 2),
                    jitter_radius: 1,
                    channel: c - 1,
                    value: 1.0,
                    radius: 2.0,
                },
            }],
        };
        Trajectory::new(
            TrajectoryMeta {
                height: h,
                width: w,
                channels: c,
                channel_mode: ChannelMode::RgbaAlive,
                record_every: 1,
                rng_seed: 99,
                model_hash: 0xDEAD,
                alive_threshold: 0.1,
            },
            frames,
            events,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ncat");
        let path = path.to_str().unwrap();
        let traj = sample_traj(7, 6, 5, 4);
        traj.save(path).unwrap();
        let back = Trajectory::load(path).unwrap();
        assert_eq!(traj, back);
        // Bit-exact on disk too: save again and compare bytes.
        let b1 = traj.to_bytes().unwrap();
        let b2 = back.to_bytes().unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn file_size_matches_format_arithmetic() {
        let traj = sample_traj(5, 6, 4, 4);
        let bytes = traj.to_bytes().unwrap();
        let events_len = serde_json::to_vec(traj.events()).unwrap().len();
        assert_eq!(bytes.len(), NCAT_HEADER_BYTES + 5 * 6 * 4 * 4 * 4 + 4 + events_len);
    }

    #[test]
    fn corrupt_truncated_and_version_errors_are_distinct() {
        let traj = sample_traj(3, 5, 5, 4);
        let bytes = traj.to_bytes().unwrap();

        let mut corrupt = bytes.clone();
        corrupt[1] = b'?';
        assert!(matches!(
            Trajectory::from_bytes(&corrupt, "t.ncat"),
            Err(Error::CorruptHeader { .. })
        ));

        assert!(matches!(
            Trajectory::from_bytes(&bytes[..60], "t.ncat"),
            Err(Error::Truncated { .. })
        ));

        let mut versioned = bytes.clone();
        versioned[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Trajectory::from_bytes(&versioned, "t.ncat"),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn frame_timestep_accounts_for_stride() {
        let mut traj = sample_traj(4, 5, 5, 4);
        traj.meta.record_every = 5;
        assert_eq!(traj.frame_timestep(0), 0);
        assert_eq!(traj.frame_timestep(3), 15);
    }
}
