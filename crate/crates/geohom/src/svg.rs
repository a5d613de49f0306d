//! SVG rendering of meshes with scalar fills and tensor eigenvector glyphs.
//!
//! Output is deterministic byte-for-byte: a fixed 256-entry colormap is
//! embedded and all coordinates print with a fixed precision.

use std::fmt::Write as _;

use crate::mesh::Mesh2D;
use crate::{Point2, Tensor2};

/// Perceptually ordered dark-blue to yellow map, interpolated to 256 entries
/// from fixed anchor colors.
pub fn colormap() -> Vec<[u8; 3]> {
    const ANCHORS: [[u8; 3]; 9] = [
        [13, 8, 135],
        [84, 2, 163],
        [139, 10, 165],
        [185, 50, 137],
        [219, 92, 104],
        [244, 136, 73],
        [254, 188, 43],
        [240, 249, 33],
        [252, 255, 164],
    ];
    let mut table = Vec::with_capacity(256);
    for k in 0..256 {
        let t = k as f64 / 255.0 * (ANCHORS.len() - 1) as f64;
        let i = (t.floor() as usize).min(ANCHORS.len() - 2);
        let f = t - i as f64;
        let mix = |a: u8, b: u8| (a as f64 * (1.0 - f) + b as f64 * f).round() as u8;
        table.push([
            mix(ANCHORS[i][0], ANCHORS[i + 1][0]),
            mix(ANCHORS[i][1], ANCHORS[i + 1][1]),
            mix(ANCHORS[i][2], ANCHORS[i + 1][2]),
        ]);
    }
    table
}

/// What to draw on top of the wireframe.
pub enum Overlay<'a> {
    None,
    /// one value per triangle, filled with the colormap
    CellScalar(&'a [f64]),
    /// one tensor per triangle: principal-eigenvector segments scaled by the
    /// anisotropy strength |lmax - lmin| / tr
    CellTensor(&'a [Tensor2]),
}

pub fn render_svg(mesh: &Mesh2D, overlay: &Overlay, width_px: usize) -> String {
    let (mut lo, mut hi) = (
        Point2::new(f64::MAX, f64::MAX),
        Point2::new(f64::MIN, f64::MIN),
    );
    for p in mesh.vertices() {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
    let margin = 0.03 * span;
    let scale = width_px as f64 / (span + 2.0 * margin);
    let height_px = ((hi.y - lo.y + 2.0 * margin) * scale).ceil() as usize;
    // SVG y grows downward
    let tx = |p: Point2| -> (f64, f64) {
        (
            (p.x - lo.x + margin) * scale,
            ((hi.y - p.y) + margin) * scale,
        )
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width_px}\" height=\"{height_px}\" viewBox=\"0 0 {width_px} {height_px}\">"
    );
    let table = colormap();

    if let Overlay::CellScalar(values) = overlay {
        let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let vmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = (vmax - vmin).max(1e-300);
        for t in 0..mesh.num_triangles() {
            let [a, b, c] = mesh.triangle(t);
            let (x1, y1) = tx(mesh.vertex(a));
            let (x2, y2) = tx(mesh.vertex(b));
            let (x3, y3) = tx(mesh.vertex(c));
            let u = ((values[t] - vmin) / spread * 255.0).round().clamp(0.0, 255.0) as usize;
            let [r, g, bl] = table[u];
            let _ = writeln!(
                out,
                "<polygon points=\"{x1:.2},{y1:.2} {x2:.2},{y2:.2} {x3:.2},{y3:.2}\" fill=\"rgb({r},{g},{bl})\" stroke=\"none\"/>"
            );
        }
    }

    // wireframe
    for e in mesh.edges() {
        let (x1, y1) = tx(mesh.vertex(e.a));
        let (x2, y2) = tx(mesh.vertex(e.b));
        let _ = writeln!(
            out,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#404040\" stroke-width=\"0.5\"/>"
        );
    }

    if let Overlay::CellTensor(tensors) = overlay {
        // glyph length follows |lmax - lmin| / tr, direction the principal
        // eigenvector
        let mean_edge = {
            let mut s = 0.0;
            for e in mesh.edges() {
                s += (mesh.vertex(e.b) - mesh.vertex(e.a)).norm();
            }
            s / mesh.num_edges().max(1) as f64
        };
        for t in 0..mesh.num_triangles().min(tensors.len()) {
            let q = tensors[t];
            let (lmin, lmax) = q.eigenvalues();
            let strength = (lmax - lmin).abs() / q.trace().abs().max(1e-300);
            if strength < 1e-9 {
                continue;
            }
            let dir = q.max_eigenvector();
            let c = mesh.tri_centroid(t);
            let half = dir.scale(0.45 * mean_edge * strength.min(1.0));
            let (x1, y1) = tx(c - half);
            let (x2, y2) = tx(c + half);
            let _ = writeln!(
                out,
                "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#d02020\" stroke-width=\"1.2\"/>"
            );
        }
    }

    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid_mesh;

    #[test]
    fn deterministic_bytes() {
        let mesh = grid_mesh(0.0, 0.0, 1.0, 1.0, 3, 3);
        let values: Vec<f64> = (0..mesh.num_triangles()).map(|t| t as f64).collect();
        let a = render_svg(&mesh, &Overlay::CellScalar(&values), 400);
        let b = render_svg(&mesh, &Overlay::CellScalar(&values), 400);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn isotropic_tensors_draw_no_glyphs() {
        let mesh = grid_mesh(0.0, 0.0, 1.0, 1.0, 2, 2);
        let tensors = vec![Tensor2::iso(2.0); mesh.num_triangles()];
        let svg = render_svg(&mesh, &Overlay::CellTensor(&tensors), 200);
        // only wireframe lines: glyphs are drawn in the accent color
        assert!(!svg.contains("#d02020"));
        let aniso = vec![Tensor2::diag(0.1, 10.0); mesh.num_triangles()];
        let svg = render_svg(&mesh, &Overlay::CellTensor(&aniso), 200);
        assert!(svg.contains("#d02020"));
    }

    #[test]
    fn colormap_has_256_ordered_entries() {
        let t = colormap();
        assert_eq!(t.len(), 256);
        assert_eq!(t[0], [13, 8, 135]);
        assert_eq!(t[255], [252, 255, 164]);
    }
}
