//! Minimal Wavefront OBJ reader/writer: `v` and `f` records only, triangles
//! only, 1-based indices. Normals/texcoords in `f` entries (`1/2/3`) are
//! accepted on read and ignored; comments and unknown records are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{GeometryError, TriangleMesh};
use crate::Real;

pub fn read_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>, GeometryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut vertices: Vec<Vector3<T>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [T::zero(); 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| GeometryError::Parse {
                        line: lineno,
                        reason: "vertex with fewer than 3 coordinates".into(),
                    })?;
                    let x: f64 = tok.parse().map_err(|_| GeometryError::Parse {
                        line: lineno,
                        reason: format!("bad coordinate {tok:?}"),
                    })?;
                    *c = T::of(x);
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(GeometryError::NonTriangular {
                        line: lineno,
                        arity: idx.len(),
                    });
                }
                let mut face = [0u32; 3];
                for (k, entry) in idx.iter().enumerate() {
                    let first = entry.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| GeometryError::Parse {
                        line: lineno,
                        reason: format!("bad face index {entry:?}"),
                    })?;
                    if i < 1 {
                        return Err(GeometryError::Parse {
                            line: lineno,
                            reason: format!("face index {i} is not positive (1-based indices)"),
                        });
                    }
                    face[k] = (i - 1) as u32;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_obj<T: Real>(
    mesh: &TriangleMesh<T>,
    path: impl AsRef<Path>,
) -> Result<(), GeometryError> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in mesh.vertices() {
        // 9 significant digits keep f32 round trips exact and f64 well
        // under a nanometre
        writeln!(
            out,
            "v {:.8e} {:.8e} {:.8e}",
            v[0].as_f64(),
            v[1].as_f64(),
            v[2].as_f64()
        )?;
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}
