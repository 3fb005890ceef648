//! Shape-model JSON files, schema version "1".

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ProcrustesMeta, ShapeModel, ShapeModelError};
use crate::Real;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema_version: String,
    bone_name: String,
    n_landmarks: usize,
    n_modes: usize,
    /// Flattened mean, xyz interleaved, length 3*n_landmarks.
    mean: Vec<f64>,
    /// One column per mode, each of length 3*n_landmarks.
    modes: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    faces: Vec<[u32; 3]>,
    procrustes: ProcrustesMeta,
}

pub fn save_model<T: Real>(
    model: &ShapeModel<T>,
    path: impl AsRef<Path>,
) -> Result<(), ShapeModelError> {
    let file = ModelFile {
        schema_version: "1".into(),
        bone_name: model.bone_name.clone(),
        n_landmarks: model.n_landmarks,
        n_modes: model.n_modes(),
        mean: model.mean.iter().map(|v| v.as_f64()).collect(),
        modes: (0..model.n_modes())
            .map(|k| model.modes.column(k).iter().map(|v| v.as_f64()).collect())
            .collect(),
        eigenvalues: model.eigenvalues.iter().map(|v| v.as_f64()).collect(),
        faces: model.faces.clone(),
        procrustes: model.procrustes,
    };
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ShapeModel<T>, ShapeModelError> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.schema_version != "1" {
        return Err(ShapeModelError::SchemaVersionMismatch {
            found: file.schema_version,
        });
    }
    let dim = 3 * file.n_landmarks;
    if file.mean.len() != dim {
        return Err(ShapeModelError::CorruptModel {
            reason: format!("mean length {} != 3*n_landmarks {}", file.mean.len(), dim),
        });
    }
    if file.modes.len() != file.n_modes {
        return Err(ShapeModelError::CorruptModel {
            reason: format!("{} mode columns, header says {}", file.modes.len(), file.n_modes),
        });
    }
    if file.eigenvalues.len() != file.n_modes {
        return Err(ShapeModelError::CorruptModel {
            reason: format!(
                "{} eigenvalues for {} modes",
                file.eigenvalues.len(),
                file.n_modes
            ),
        });
    }
    let mut modes = DMatrix::<T>::zeros(dim, file.n_modes);
    for (k, col) in file.modes.iter().enumerate() {
        if col.len() != dim {
            return Err(ShapeModelError::CorruptModel {
                reason: format!("mode {k} has length {} (expected {dim})", col.len()),
            });
        }
        for (r, &v) in col.iter().enumerate() {
            modes[(r, k)] = T::of(v);
        }
    }
    let model = ShapeModel {
        bone_name: file.bone_name,
        n_landmarks: file.n_landmarks,
        mean: DVector::from_iterator(dim, file.mean.iter().map(|&v| T::of(v))),
        modes,
        eigenvalues: DVector::from_iterator(
            file.n_modes,
            file.eigenvalues.iter().map(|&v| T::of(v)),
        ),
        faces: file.faces,
        procrustes: file.procrustes,
    };
    model.validate()?;
    Ok(model)
}
