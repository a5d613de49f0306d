//! Artifact file formats.
//!
//! Meshes travel as JSON ({"vertices", "triangles", "ghost"}); fields as CSV
//! with a per-entity id column; rasters as row-major CSV behind a one-line
//! geometry header; edge conductivities as (i, j, q) bound to their mesh by
//! a content hash; DtN maps as dense CSV with the boundary coordinates as
//! header rows. Every artifact starts with '#' comment lines carrying the
//! tool version, the config hash and the input hashes, so a run can be
//! reproduced from its outputs.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::eit::DtNMatrix;
use crate::fields::{RasterGrid, SField, TensorCarrier};
use crate::geom::v2;
use crate::homogenize::EdgeConductivities;
use crate::mesh::{Mesh2D, MeshFile};
use crate::{Point2, Tensor2};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("edge file bound to mesh hash {file:#x}, mesh has {mesh:#x}")]
    MeshHashMismatch { file: u64, mesh: u64 },
}

/// FNV-1a of a byte slice; the hash used in artifact headers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Header block for generated artifacts.
#[derive(Clone, Debug, Default)]
pub struct ArtifactMeta {
    pub config_hash: u64,
    pub inputs: Vec<(String, u64)>,
}

impl ArtifactMeta {
    pub fn header_lines(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# geohom {}", crate::VERSION);
        let _ = writeln!(s, "# config {:016x}", self.config_hash);
        for (name, hash) in &self.inputs {
            let _ = writeln!(s, "# input {name} {hash:016x}");
        }
        s
    }
}

fn parse_data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn write_mesh_json(path: &Path, mesh: &Mesh2D, meta: &ArtifactMeta) -> Result<(), IoError> {
    let mut file = MeshFile::from_mesh(mesh);
    file.meta = Some(serde_json::json!({
        "tool": format!("geohom {}", crate::VERSION),
        "config": format!("{:016x}", meta.config_hash),
        "inputs": meta
            .inputs
            .iter()
            .map(|(n, h)| serde_json::json!({"name": n, "hash": format!("{h:016x}")}))
            .collect::<Vec<_>>(),
    }));
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_mesh_json(path: &Path) -> Result<Mesh2D, IoError> {
    let text = std::fs::read_to_string(path)?;
    let file: MeshFile = serde_json::from_str(&text)?;
    Ok(file.into_mesh()?)
}

/// Per-cell (or per-vertex) tensor field: id, a11, a12, a22.
pub fn write_tensor_csv(
    path: &Path,
    values: &[Tensor2],
    meta: &ArtifactMeta,
) -> Result<(), IoError> {
    let mut out = meta.header_lines();
    out.push_str("id,a11,a12,a22\n");
    for (i, t) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.17e},{:.17e},{:.17e}", t.a11, t.a12, t.a22);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor_csv(path: &Path) -> Result<Vec<Tensor2>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (line, l) in parse_data_lines(&text) {
        if l.starts_with("id,") {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 4 {
            return Err(IoError::Parse {
                line,
                what: format!("expected 4 columns, got {}", parts.len()),
            });
        }
        let f = |s: &str| -> Result<f64, IoError> {
            s.trim().parse().map_err(|_| IoError::Parse {
                line,
                what: format!("bad number {s:?}"),
            })
        };
        values.push(Tensor2::new(f(parts[1])?, f(parts[2])?, f(parts[3])?));
    }
    Ok(values)
}

/// Scalar per-entity field: id, s.
pub fn write_scalar_csv(path: &Path, values: &[f64], meta: &ArtifactMeta) -> Result<(), IoError> {
    let mut out = meta.header_lines();
    out.push_str("id,s\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v:.17e}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scalar_csv(path: &Path) -> Result<Vec<f64>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (line, l) in parse_data_lines(&text) {
        if l.starts_with("id,") {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 2 {
            return Err(IoError::Parse {
                line,
                what: format!("expected 2 columns, got {}", parts.len()),
            });
        }
        values.push(parts[1].trim().parse().map_err(|_| IoError::Parse {
            line,
            what: format!("bad number {:?}", parts[1]),
        })?);
    }
    Ok(values)
}

/// Raster scalar: one geometry line (nx, ny, x0, y0, dx, dy), then row-major
/// values, one row per line.
pub fn write_raster_csv(
    path: &Path,
    grid: RasterGrid,
    values: &[f64],
    meta: &ArtifactMeta,
) -> Result<(), IoError> {
    let mut out = meta.header_lines();
    let _ = writeln!(
        out,
        "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
        grid.nx, grid.ny, grid.x0, grid.y0, grid.dx, grid.dy
    );
    for j in 0..grid.ny {
        let row: Vec<String> = (0..grid.nx)
            .map(|i| format!("{:.17e}", values[grid.idx(i, j)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_raster_csv(path: &Path) -> Result<(RasterGrid, Vec<f64>), IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = parse_data_lines(&text);
    let (line, head) = lines.next().ok_or(IoError::Parse {
        line: 0,
        what: "empty raster file".into(),
    })?;
    let parts: Vec<&str> = head.split(',').collect();
    if parts.len() != 6 {
        return Err(IoError::Parse {
            line,
            what: "raster header needs nx,ny,x0,y0,dx,dy".into(),
        });
    }
    let nx: usize = parts[0].trim().parse().map_err(|_| IoError::Parse {
        line,
        what: "bad nx".into(),
    })?;
    let ny: usize = parts[1].trim().parse().map_err(|_| IoError::Parse {
        line,
        what: "bad ny".into(),
    })?;
    let fnum = |s: &str| -> Result<f64, IoError> {
        s.trim().parse().map_err(|_| IoError::Parse {
            line,
            what: format!("bad number {s:?}"),
        })
    };
    let grid = RasterGrid {
        nx,
        ny,
        x0: fnum(parts[2])?,
        y0: fnum(parts[3])?,
        dx: fnum(parts[4])?,
        dy: fnum(parts[5])?,
    };
    let mut values = Vec::with_capacity(nx * ny);
    for (line, l) in lines {
        for s in l.split(',') {
            values.push(s.trim().parse().map_err(|_| IoError::Parse {
                line,
                what: format!("bad number {s:?}"),
            })?);
        }
    }
    if values.len() != nx * ny {
        return Err(IoError::Parse {
            line: 0,
            what: format!("expected {} values, got {}", nx * ny, values.len()),
        });
    }
    Ok((grid, values))
}

/// Edge conductivities: (i, j, q) rows bound to the mesh via content hash.
pub fn write_edges_csv(
    path: &Path,
    qh: &EdgeConductivities,
    meta: &ArtifactMeta,
) -> Result<(), IoError> {
    let mut out = meta.header_lines();
    let _ = writeln!(out, "# mesh {:016x}", qh.mesh_hash);
    out.push_str("i,j,q\n");
    for (a, b, q) in qh.populated() {
        let _ = writeln!(out, "{a},{b},{q:.17e}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_edges_csv(path: &Path, mesh: &Arc<Mesh2D>) -> Result<EdgeConductivities, IoError> {
    let text = std::fs::read_to_string(path)?;
    for l in text.lines() {
        if let Some(rest) = l.strip_prefix("# mesh ") {
            let file = u64::from_str_radix(rest.trim(), 16).unwrap_or(0);
            let mesh_hash = mesh.content_hash();
            if file != mesh_hash {
                return Err(IoError::MeshHashMismatch {
                    file,
                    mesh: mesh_hash,
                });
            }
        }
    }
    let mut qh = EdgeConductivities::empty(Arc::clone(mesh));
    for (line, l) in parse_data_lines(&text) {
        if l.starts_with("i,") {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 3 {
            return Err(IoError::Parse {
                line,
                what: format!("expected 3 columns, got {}", parts.len()),
            });
        }
        let a: usize = parts[0].trim().parse().map_err(|_| IoError::Parse {
            line,
            what: "bad i".into(),
        })?;
        let b: usize = parts[1].trim().parse().map_err(|_| IoError::Parse {
            line,
            what: "bad j".into(),
        })?;
        let q: f64 = parts[2].trim().parse().map_err(|_| IoError::Parse {
            line,
            what: "bad q".into(),
        })?;
        qh.set(a, b, q);
    }
    Ok(qh)
}

/// DtN matrix: boundary point coordinates as two header rows, then the
/// dense matrix.
pub fn write_dtn_csv(path: &Path, dtn: &DtNMatrix, meta: &ArtifactMeta) -> Result<(), IoError> {
    let mut out = meta.header_lines();
    let xs: Vec<String> = dtn.points.iter().map(|p| format!("{:.17e}", p.x)).collect();
    let ys: Vec<String> = dtn.points.iter().map(|p| format!("{:.17e}", p.y)).collect();
    let _ = writeln!(out, "x,{}", xs.join(","));
    let _ = writeln!(out, "y,{}", ys.join(","));
    let n = dtn.n();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", dtn.get(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dtn_csv(path: &Path) -> Result<DtNMatrix, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = parse_data_lines(&text);
    let parse_coords = |tag: &str, item: Option<(usize, &str)>| -> Result<Vec<f64>, IoError> {
        let (line, l) = item.ok_or(IoError::Parse {
            line: 0,
            what: "missing coordinate header".into(),
        })?;
        let mut parts = l.split(',');
        let first = parts.next().unwrap_or("");
        if first.trim() != tag {
            return Err(IoError::Parse {
                line,
                what: format!("expected row tag {tag:?}, got {first:?}"),
            });
        }
        parts
            .map(|s| {
                s.trim().parse().map_err(|_| IoError::Parse {
                    line,
                    what: format!("bad number {s:?}"),
                })
            })
            .collect()
    };
    let xs = parse_coords("x", lines.next())?;
    let ys = parse_coords("y", lines.next())?;
    let points: Vec<Point2> = xs.iter().zip(&ys).map(|(&x, &y)| v2(x, y)).collect();
    let n = points.len();
    let mut matrix = Vec::with_capacity(n * n);
    for (line, l) in lines {
        for s in l.split(',') {
            matrix.push(s.trim().parse().map_err(|_| IoError::Parse {
                line,
                what: format!("bad number {s:?}"),
            })?);
        }
    }
    if matrix.len() != n * n {
        return Err(IoError::Parse {
            line: 0,
            what: format!("expected {} entries, got {}", n * n, matrix.len()),
        });
    }
    Ok(DtNMatrix {
        points,
        matrix,
        provenance: "file".into(),
    })
}

/// Load an SField from a raster CSV.
pub fn read_sfield_raster(path: &Path) -> Result<SField, IoError> {
    let (grid, values) = read_raster_csv(path)?;
    Ok(SField::Raster { grid, values })
}

/// Load per-cell tensor values as a mesh-carried field.
pub fn read_mesh_tensor_field(path: &Path, mesh: &Arc<Mesh2D>) -> Result<TensorCarrier, IoError> {
    let values = read_tensor_csv(path)?;
    if values.len() != mesh.num_triangles() {
        return Err(IoError::Parse {
            line: 0,
            what: format!(
                "field has {} cells, mesh has {} triangles",
                values.len(),
                mesh.num_triangles()
            ),
        });
    }
    Ok(TensorCarrier::MeshCells {
        mesh: Arc::clone(mesh),
        values,
    })
}
