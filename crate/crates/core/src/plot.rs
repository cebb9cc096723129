//! Static SVG emitters for latent scatters, persistence diagrams and vector
//! fields. Output is plain string assembly with fixed-precision coordinates,
//! so a given input always produces the same bytes.

use std::fmt::Write as _;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::homology::PersistenceDiagram;

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 44.0;

/// Arrow tips sit at `x + ARROW_SCALE * v` in data coordinates.
pub const ARROW_SCALE: f64 = 1.0;

/// Colour cycle per homology dimension (H0, H1, H2).
const DIM_COLOURS: [&str; 3] = ["#1f77b4", "#ff7f0e", "#2ca02c"];

/// Affine map from a data bounding box to the drawable canvas region.
struct Frame {
    min: [f64; 2],
    span: [f64; 2],
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0, 0.0];
            hi = [1.0, 1.0];
        }
        let mut span = [hi[0] - lo[0], hi[1] - lo[1]];
        for c in 0..2 {
            if span[c] < 1e-12 {
                lo[c] -= 0.5;
                span[c] = 1.0;
            }
        }
        Frame { min: lo, span }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.min[0]) / self.span[0] * (CANVAS - 2.0 * MARGIN)
    }

    /// SVG y grows downward; data y grows upward.
    fn py(&self, y: f64) -> f64 {
        CANVAS - MARGIN - (y - self.min[1]) / self.span[1] * (CANVAS - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS}\" height=\"{CANVAS}\" viewBox=\"0 0 {CANVAS} {CANVAS}\">"
    );
    let _ = writeln!(out, "<rect width=\"{CANVAS}\" height=\"{CANVAS}\" fill=\"white\"/>");
}

fn rgb(colour: &[f64; 3]) -> String {
    let b = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("rgb({},{},{})", b(colour[0]), b(colour[1]), b(colour[2]))
}

fn require_planar(cloud: &PointCloud) -> Result<()> {
    if cloud.dim() < 2 {
        return Err(Error::Validation(format!(
            "scatter needs at least 2-D points, got dim {}",
            cloud.dim()
        )));
    }
    Ok(())
}

fn scatter_markers(out: &mut String, cloud: &PointCloud, frame: &Frame, radius: f64) {
    for i in 0..cloud.len() {
        let p = cloud.points().row(i);
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{radius}\" fill=\"{}\"/>",
            frame.px(p[0]),
            frame.py(p[1]),
            rgb(&cloud.colours()[i])
        );
    }
}

fn write_svg(path: &str, body: String) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Scatter of the first two coordinates, coloured by the cloud's colours.
pub fn emit_scatter_svg(cloud: &PointCloud, path: &str) -> Result<()> {
    require_planar(cloud)?;
    let frame = Frame::fit((0..cloud.len()).map(|i| {
        let p = cloud.points().row(i);
        [p[0], p[1]]
    }));
    let mut out = String::new();
    svg_open(&mut out);
    scatter_markers(&mut out, cloud, &frame, 3.0);
    out.push_str("</svg>\n");
    write_svg(path, out)
}

/// Persistence diagram: birth on x, death on y, dashed diagonal, one colour
/// per dimension. Essential classes are drawn as hollow markers pinned to the
/// top edge (death beyond the filtration).
pub fn emit_diagram_svg(diagram: &PersistenceDiagram, path: &str) -> Result<()> {
    let top = diagram.max_radius() * 1.05;
    let frame = Frame::fit([[0.0, 0.0], [top, top]].into_iter());
    let mut out = String::new();
    svg_open(&mut out);
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        frame.px(0.0),
        frame.py(0.0),
        frame.px(top),
        frame.py(top)
    );
    for iv in diagram.intervals() {
        let colour = DIM_COLOURS[iv.dim.min(DIM_COLOURS.len() - 1)];
        let x = frame.px(iv.birth);
        if iv.is_essential() {
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
                frame.py(top)
            );
        } else {
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{colour}\"/>",
                frame.py(iv.death)
            );
        }
    }
    out.push_str("</svg>\n");
    write_svg(path, out)
}

/// Latent scatter with the field's displacement arrows on top. Invalid grid
/// points (beyond the data-free cutoff) are not drawn.
pub fn emit_field_svg(field: &VectorField, cloud: &PointCloud, path: &str) -> Result<()> {
    require_planar(cloud)?;
    let cloud_pts = (0..cloud.len()).map(|i| {
        let p = cloud.points().row(i);
        [p[0], p[1]]
    });
    let tips = (0..field.len()).filter(|&g| field.valid()[g]).flat_map(|g| {
        let x = field.grid()[(g, 0)];
        let y = field.grid()[(g, 1)];
        [
            [x, y],
            [
                x + ARROW_SCALE * field.vectors()[(g, 0)],
                y + ARROW_SCALE * field.vectors()[(g, 1)],
            ],
        ]
    });
    let frame = Frame::fit(cloud_pts.chain(tips));

    let mut out = String::new();
    svg_open(&mut out);
    scatter_markers(&mut out, cloud, &frame, 2.0);
    for g in 0..field.len() {
        if !field.valid()[g] {
            continue;
        }
        let x0 = frame.px(field.grid()[(g, 0)]);
        let y0 = frame.py(field.grid()[(g, 1)]);
        let x1 = frame.px(field.grid()[(g, 0)] + ARROW_SCALE * field.vectors()[(g, 0)]);
        let y1 = frame.py(field.grid()[(g, 1)] + ARROW_SCALE * field.vectors()[(g, 1)]);
        let _ = writeln!(
            out,
            "<line class=\"arrow\" x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"#333\" stroke-width=\"1\"/>"
        );
        // Arrowhead: two short barbs at 150 degrees either side of the shaft.
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len = (dx * dx + dy * dy).sqrt();
        if len > 1e-9 {
            let (ux, uy) = (dx / len, dy / len);
            for side in [-1.0, 1.0] {
                let (s, c) = (side * (std::f64::consts::PI / 6.0).sin(), -(std::f64::consts::PI / 6.0).cos());
                let bx = x1 + 5.0 * (c * ux - s * uy);
                let by = y1 + 5.0 * (s * ux + c * uy);
                let _ = writeln!(
                    out,
                    "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{bx:.2}\" y2=\"{by:.2}\" stroke=\"#333\" stroke-width=\"1\"/>"
                );
            }
        }
    }
    out.push_str("</svg>\n");
    write_svg(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Provenance;
    use crate::homology::{rips_persistence, DistanceMatrix};
    use ndarray::{array, Array2};

    fn read(path: &std::path::Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn single_point_scatter_has_one_marker() {
        let cloud = PointCloud::new(
            array![[0.3, -1.2]],
            vec![[0.2, 0.4, 0.9]],
            vec![Provenance::Sample(0)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        emit_scatter_svg(&cloud, path.to_str().unwrap()).unwrap();
        let text = read(&path);
        assert_eq!(text.matches("<circle").count(), 1);
        assert!(text.contains("rgb(51,102,230)"));
    }

    #[test]
    fn out_of_range_colours_are_clamped() {
        let cloud = PointCloud::new(
            array![[0.0, 0.0], [1.0, 1.0]],
            vec![[2.0, -0.5, 0.5], [-1.0, 1.5, 0.0]],
            vec![Provenance::Sample(0), Provenance::Sample(1)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        emit_scatter_svg(&cloud, path.to_str().unwrap()).unwrap();
        let text = read(&path);
        assert!(text.contains("rgb(255,0,128)"));
        assert!(text.contains("rgb(0,255,0)"));
    }

    #[test]
    fn scatter_is_byte_stable() {
        let cloud = PointCloud::from_points(array![[0.0, 0.5], [1.0, -0.25], [2.0, 0.125]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        emit_scatter_svg(&cloud, a.to_str().unwrap()).unwrap();
        emit_scatter_svg(&cloud, b.to_str().unwrap()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn low_dimensional_cloud_is_rejected() {
        let cloud = PointCloud::from_points(array![[1.0], [2.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        assert!(emit_scatter_svg(&cloud, path.to_str().unwrap()).is_err());
    }

    #[test]
    fn diagram_svg_shows_diagonal_dims_and_essentials() {
        let n = 24;
        let mut pts = Array2::zeros((n, 2));
        for i in 0..n {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            pts[(i, 0)] = a.cos();
            pts[(i, 1)] = a.sin();
        }
        let dist = DistanceMatrix::from_points(&pts).unwrap();
        let diag = rips_persistence(&dist, 1, 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.svg");
        emit_diagram_svg(&diag, path.to_str().unwrap()).unwrap();
        let text = read(&path);
        assert!(text.contains("stroke-dasharray"), "diagonal missing");
        assert!(text.contains("#1f77b4") && text.contains("#ff7f0e"));
        // The single connected component survives the filtration.
        assert!(text.contains("fill=\"none\""), "essential marker missing");

        let again = dir.path().join("diag2.svg");
        emit_diagram_svg(&diag, again.to_str().unwrap()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn field_svg_draws_one_arrow_per_valid_point() {
        let cloud = PointCloud::from_points(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let field = VectorField::new(
            array![[0.2, 0.2], [0.8, 0.8], [0.5, 0.5]],
            array![[0.1, 0.0], [0.0, -0.1], [0.3, 0.3]],
            vec![true, true, false],
            5,
            "softmax-knn(k=3)",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.svg");
        emit_field_svg(&field, &cloud, path.to_str().unwrap()).unwrap();
        let text = read(&path);
        assert_eq!(text.matches("class=\"arrow\"").count(), 2);
        assert_eq!(text.matches("<circle").count(), 3);
    }

    #[test]
    fn empty_field_renders_scatter_only() {
        let cloud = PointCloud::from_points(array![[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let field = VectorField::new(
            Array2::zeros((0, 2)),
            Array2::zeros((0, 2)),
            vec![],
            1,
            "softmax-knn(k=1)",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.svg");
        emit_field_svg(&field, &cloud, path.to_str().unwrap()).unwrap();
        let text = read(&path);
        assert_eq!(text.matches("class=\"arrow\"").count(), 0);
        assert_eq!(text.matches("<circle").count(), 2);
    }
}
