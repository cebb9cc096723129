//! Point clouds extracted from trajectories, and their CSV form.
//!
//! Macroscopic extraction flattens each recorded frame into one point of
//! dimension `h*w*c` (row-major, channel-fastest). Microscopic extraction
//! emits one point per cell with dimension `channels`. Colours are mean or
//! per-cell RGB, clamped to `[0,1]`, and every point carries a provenance
//! tag linking it back to its frame or cell.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::trajectory::Trajectory;

/// Where a point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Whole-frame point: the recorded frame index.
    MacroFrame(usize),
    /// Per-cell point: recorded frame index plus cell coordinates.
    MicroCell { t: usize, row: usize, col: usize },
    /// Standalone point (synthetic data, external CSV).
    Sample(usize),
}

impl Provenance {
    pub fn to_string_tag(&self) -> String {
        match self {
            Provenance::MacroFrame(t) => format!("frame:{t}"),
            Provenance::MicroCell { t, row, col } => format!("cell:{t}:{row}:{col}"),
            Provenance::Sample(i) => format!("sample:{i}"),
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        let parts: Vec<&str> = tag.split(':').collect();
        let bad = || Error::Validation(format!("unparseable provenance tag {tag:?}"));
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["frame", t] => Ok(Provenance::MacroFrame(num(t)?)),
            ["cell", t, r, c] => Ok(Provenance::MicroCell {
                t: num(t)?,
                row: num(r)?,
                col: num(c)?,
            }),
            ["sample", i] => Ok(Provenance::Sample(num(i)?)),
            _ => Err(bad()),
        }
    }
}

/// `n` points of dimension `d`, each with an RGB colour and a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    colours: Vec<[f64; 3]>,
    provenance: Vec<Provenance>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, colours: Vec<[f64; 3]>, provenance: Vec<Provenance>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::Validation("point cloud must contain at least one point".into()));
        }
        if points.ncols() == 0 {
            return Err(Error::Validation("points must have at least one dimension".into()));
        }
        if colours.len() != n || provenance.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} points, {} colours, {} provenance tags",
                n,
                colours.len(),
                provenance.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("point cloud contains non-finite coordinates".into()));
        }
        let colours = colours
            .into_iter()
            .map(|c| [c[0].clamp(0.0, 1.0), c[1].clamp(0.0, 1.0), c[2].clamp(0.0, 1.0)])
            .collect();
        Ok(PointCloud {
            points,
            colours,
            provenance,
        })
    }

    /// Convenience constructor with grey colour and `Sample` provenance.
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let colours = vec![[0.5, 0.5, 0.5]; n];
        let provenance = (0..n).map(Provenance::Sample).collect();
        PointCloud::new(points, colours, provenance)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }
    pub fn colours(&self) -> &[[f64; 3]] {
        &self.colours
    }
    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }
    pub fn point(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// New cloud with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        if indices.is_empty() {
            return Err(Error::Validation("selection must keep at least one point".into()));
        }
        let mut points = Array2::zeros((indices.len(), self.dim()));
        let mut colours = Vec::with_capacity(indices.len());
        let mut provenance = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Validation(format!("selection index {i} out of range")));
            }
            points.row_mut(row).assign(&self.points.row(i));
            colours.push(self.colours[i]);
            provenance.push(self.provenance[i]);
        }
        PointCloud::new(points, colours, provenance)
    }

    /// Replace coordinates (e.g. with a latent projection), keeping colours
    /// and provenance aligned.
    pub fn with_points(&self, points: Array2<f64>) -> Result<PointCloud> {
        if points.nrows() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "replacement has {} rows, cloud has {}",
                points.nrows(),
                self.len()
            )));
        }
        PointCloud::new(points, self.colours.clone(), self.provenance.clone())
    }

    pub fn save_csv(&self, path: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(Error::from)?;
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        header.extend(["r", "g", "b", "provenance"].map(String::from));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.points.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.colours[i][0]));
            rec.push(format!("{}", self.colours[i][1]));
            rec.push(format!("{}", self.colours[i][2]));
            rec.push(self.provenance[i].to_string_tag());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: &str) -> Result<PointCloud> {
        let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 5 {
            return Err(Error::Validation(format!(
                "{path}: point cloud CSV needs x0..,r,g,b,provenance columns"
            )));
        }
        let d = headers.len() - 4;
        for (i, name) in headers.iter().take(d).enumerate() {
            if name != format!("x{i}") {
                return Err(Error::Validation(format!(
                    "{path}: expected column x{i}, found {name:?}"
                )));
            }
        }
        let mut rows: Vec<f64> = Vec::new();
        let mut colours = Vec::new();
        let mut provenance = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 4 {
                return Err(Error::Validation(format!(
                    "{path}: row {line} has {} fields, expected {}",
                    rec.len(),
                    d + 4
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Validation(format!("{path}: row {line}: bad float {s:?}")))
            };
            for i in 0..d {
                rows.push(parse(&rec[i])?);
            }
            colours.push([parse(&rec[d])?, parse(&rec[d + 1])?, parse(&rec[d + 2])?]);
            provenance.push(Provenance::parse(&rec[d + 3])?);
        }
        let n = colours.len();
        if n == 0 {
            return Err(Error::Validation(format!("{path}: empty point cloud")));
        }
        let points =
            Array2::from_shape_vec((n, d), rows).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        PointCloud::new(points, colours, provenance)
    }
}

pub(crate) fn frame_colour(frame: &crate::grid::GridState<f32>, threshold: f64) -> [f64; 3] {
    let (h, w, _) = frame.values().dim();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            if frame.cell_alive_raw(r, c, threshold) {
                for ch in 0..3 {
                    sum[ch] += frame.values()[(r, c, ch)] as f64;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return [0.0; 3];
    }
    [sum[0] / count as f64, sum[1] / count as f64, sum[2] / count as f64]
}

/// One point per recorded frame: the whole flattened state. Colour is the
/// mean RGB over alive cells (all cells in `RgbPlain` mode), black when no
/// cell is alive.
pub fn extract_macroscopic(traj: &Trajectory) -> Result<PointCloud> {
    let d = traj.state_dim();
    let mut points = Array2::zeros((traj.len(), d));
    let mut colours = Vec::with_capacity(traj.len());
    let mut provenance = Vec::with_capacity(traj.len());
    for (t, frame) in traj.frames().iter().enumerate() {
        for (j, v) in frame.values().iter().enumerate() {
            points[(t, j)] = *v as f64;
        }
        colours.push(frame_colour(frame, traj.meta().alive_threshold));
        provenance.push(Provenance::MacroFrame(t));
    }
    PointCloud::new(points, colours, provenance)
}

/// One point per cell per frame (dimension = channel count). When
/// `exclude_dead` is set, cells whose own alpha is at or below the
/// trajectory's alive threshold are dropped (raw alpha, no pooling). If more
/// than `max_points` survive, a uniform random subset of exactly
/// `max_points` is kept, deterministically from `rng_seed`.
pub fn extract_microscopic(
    traj: &Trajectory,
    exclude_dead: bool,
    max_points: usize,
    rng_seed: u64,
) -> Result<PointCloud> {
    if max_points == 0 {
        return Err(Error::Validation("max_points must be at least 1".into()));
    }
    let meta = *traj.meta();
    let mut kept: Vec<(usize, usize, usize)> = Vec::new();
    for (t, frame) in traj.frames().iter().enumerate() {
        for r in 0..meta.height {
            for c in 0..meta.width {
                if !exclude_dead || frame.cell_alive_raw(r, c, meta.alive_threshold) {
                    kept.push((t, r, c));
                }
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::Validation(
            "no cells survive dead-cell filtering; nothing to extract".into(),
        ));
    }
    if kept.len() > max_points {
        let mut rng = StreamRng::new(rng_seed, stream::SUBSAMPLE);
        let mut idx = rng.choose_indices(kept.len(), max_points);
        idx.sort_unstable();
        kept = idx.into_iter().map(|i| kept[i]).collect();
    }

    let d = meta.channels;
    let mut points = Array2::zeros((kept.len(), d));
    let mut colours = Vec::with_capacity(kept.len());
    let mut provenance = Vec::with_capacity(kept.len());
    for (row, &(t, r, c)) in kept.iter().enumerate() {
        let frame = traj.frame(t);
        for ch in 0..d {
            points[(row, ch)] = frame.values()[(r, c, ch)] as f64;
        }
        colours.push([
            frame.values()[(r, c, 0)] as f64,
            frame.values()[(r, c, 1)] as f64,
            frame.values()[(r, c, 2)] as f64,
        ]);
        provenance.push(Provenance::MicroCell { t, row: r, col: c });
    }
    PointCloud::new(points, colours, provenance)
}

/// Per-cell points restricted to a spatial window and a frame range, both
/// half-open. Dead cells are kept; ranges are in recorded-frame indices.
pub fn window_subsample(
    traj: &Trajectory,
    rect: (usize, usize, usize, usize),
    frame_range: (usize, usize),
) -> Result<PointCloud> {
    let meta = *traj.meta();
    let (r0, c0, r1, c1) = rect;
    let (t0, t1) = frame_range;
    if r0 >= r1 || c0 >= c1 || r1 > meta.height || c1 > meta.width {
        return Err(Error::Validation(format!(
            "window ({r0},{c0},{r1},{c1}) invalid on {}x{} grid",
            meta.height, meta.width
        )));
    }
    if t0 >= t1 || t1 > traj.len() {
        return Err(Error::Validation(format!(
            "frame range [{t0},{t1}) invalid for {} recorded frames",
            traj.len()
        )));
    }
    let d = meta.channels;
    let n = (t1 - t0) * (r1 - r0) * (c1 - c0);
    let mut points = Array2::zeros((n, d));
    let mut colours = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    let mut row = 0usize;
    for t in t0..t1 {
        let frame = traj.frame(t);
        for r in r0..r1 {
            for c in c0..c1 {
                for ch in 0..d {
                    points[(row, ch)] = frame.values()[(r, c, ch)] as f64;
                }
                colours.push([
                    frame.values()[(r, c, 0)] as f64,
                    frame.values()[(r, c, 1)] as f64,
                    frame.values()[(r, c, 2)] as f64,
                ]);
                provenance.push(Provenance::MicroCell { t, row: r, col: c });
                row += 1;
            }
        }
    }
    PointCloud::new(points, colours, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelMode, GridState};
    use crate::trajectory::TrajectoryMeta;

    fn test_traj(frames: usize, h: usize, w: usize, c: usize, mode: ChannelMode) -> Trajectory {
        let mut rng = StreamRng::new(5, stream::DATA);
        let fs: Vec<GridState<f32>> = (0..frames)
            .map(|_| {
                let mut g = GridState::zeros(h, w, c, mode).unwrap();
                g.values_mut().mapv_inplace(|_| rng.unit_f64() as f32);
                g
            })
            .collect();
        Trajectory::new(
            TrajectoryMeta {
                height: h,
                width: w,
                channels: c,
                channel_mode: mode,
                record_every: 1,
                rng_seed: 0,
                model_hash: 0,
                alive_threshold: 0.1,
            },
            fs,
            crate::events::EventScript::empty(),
        )
        .unwrap()
    }

    #[test]
    fn macro_points_have_full_state_dim_and_frame_provenance() {
        let traj = test_traj(6, 4, 5, 4, ChannelMode::RgbaAlive);
        let cloud = extract_macroscopic(&traj).unwrap();
        assert_eq!(cloud.len(), 6);
        assert_eq!(cloud.dim(), 4 * 5 * 4);
        assert_eq!(cloud.provenance()[3], Provenance::MacroFrame(3));
        // Row-major channel-fastest flattening.
        assert_eq!(cloud.points()[(2, 0)], traj.frame(2).values()[(0, 0, 0)] as f64);
        assert_eq!(cloud.points()[(2, 4)], traj.frame(2).values()[(0, 1, 0)] as f64);
        for col in cloud.colours() {
            for v in col {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn macro_colour_averages_only_alive_cells() {
        let mut g = GridState::<f32>::zeros(4, 4, 4, ChannelMode::RgbaAlive).unwrap();
        // One alive cell with known colour, one dead-but-coloured cell.
        g.values_mut()[(0, 0, 0)] = 0.8;
        g.values_mut()[(0, 0, 3)] = 1.0;
        g.values_mut()[(2, 2, 0)] = 0.4;
        let traj = Trajectory::new(
            TrajectoryMeta {
                height: 4,
                width: 4,
                channels: 4,
                channel_mode: ChannelMode::RgbaAlive,
                record_every: 1,
                rng_seed: 0,
                model_hash: 0,
                alive_threshold: 0.1,
            },
            vec![g],
            crate::events::EventScript::empty(),
        )
        .unwrap();
        let cloud = extract_macroscopic(&traj).unwrap();
        assert_eq!(cloud.colours()[0], [0.8f32 as f64, 0.0, 0.0]);
    }

    #[test]
    fn micro_extraction_counts_and_dead_filtering() {
        let traj = test_traj(3, 4, 4, 4, ChannelMode::RgbaAlive);
        let all = extract_microscopic(&traj, false, usize::MAX, 0).unwrap();
        assert_eq!(all.len(), 3 * 16);
        assert_eq!(all.dim(), 4);

        // With a high threshold nothing is alive.
        let mut dead_meta = test_traj(2, 4, 4, 4, ChannelMode::RgbaAlive);
        for f in 0..dead_meta.len() {
            let _ = f;
        }
        let mut g = GridState::<f32>::zeros(4, 4, 4, ChannelMode::RgbaAlive).unwrap();
        g.values_mut()[(1, 1, 3)] = 0.9;
        dead_meta = Trajectory::new(*dead_meta.meta(), vec![g], crate::events::EventScript::empty()).unwrap();
        let alive_only = extract_microscopic(&dead_meta, true, usize::MAX, 0).unwrap();
        assert_eq!(alive_only.len(), 1);
        assert_eq!(alive_only.provenance()[0], Provenance::MicroCell { t: 0, row: 1, col: 1 });
    }

    #[test]
    fn micro_subsampling_is_deterministic_and_capped() {
        let traj = test_traj(5, 6, 6, 4, ChannelMode::RgbaAlive);
        let a = extract_microscopic(&traj, false, 40, 7).unwrap();
        let b = extract_microscopic(&traj, false, 40, 7).unwrap();
        let c = extract_microscopic(&traj, false, 40, 8).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn full_window_equals_unfiltered_micro_extraction() {
        let traj = test_traj(4, 5, 6, 4, ChannelMode::RgbaAlive);
        let win = window_subsample(&traj, (0, 0, 5, 6), (0, 4)).unwrap();
        let micro = extract_microscopic(&traj, false, usize::MAX, 0).unwrap();
        assert_eq!(win, micro);
    }

    #[test]
    fn window_arithmetic_matches_expected_counts() {
        let traj = test_traj(25, 8, 8, 4, ChannelMode::RgbaAlive);
        let win = window_subsample(&traj, (2, 2, 6, 6), (5, 25)).unwrap();
        assert_eq!(win.len(), 20 * 16);
        assert!(window_subsample(&traj, (2, 2, 2, 6), (0, 4)).is_err());
        assert!(window_subsample(&traj, (0, 0, 8, 8), (5, 26)).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        let path = path.to_str().unwrap();
        let traj = test_traj(3, 4, 4, 4, ChannelMode::RgbaAlive);
        let cloud = extract_microscopic(&traj, false, 20, 3).unwrap();
        cloud.save_csv(path).unwrap();
        let back = PointCloud::load_csv(path).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn provenance_tags_round_trip() {
        for p in [
            Provenance::MacroFrame(12),
            Provenance::MicroCell { t: 12, row: 3, col: 4 },
            Provenance::Sample(7),
        ] {
            assert_eq!(Provenance::parse(&p.to_string_tag()).unwrap(), p);
        }
        assert!(Provenance::parse("bogus:1").is_err());
    }
}
