//! Shared plumbing: error-to-exit-code mapping, report provenance, JSON and
//! model-set I/O, and the rayon thread cap.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ankle_reduce_core::casm_fit::{CoupledModelSet, ProximityConstraint};
use ankle_reduce_core::geometry::SimilarityTransform;
use ankle_reduce_core::shape_model::load_model;
use ankle_reduce_core::{Scalar, Transform};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_VERSION: &str = "1";

/// Environment variable capping the rayon pool; 0 or unset means automatic.
pub const THREADS_VAR: &str = "ANKLE_REDUCE_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or unreadable/invalid input: exit 2.
    Usage(String),
    /// The pipeline itself failed: exit 1.
    Computation(String),
    /// A plan was produced but does not meet its tolerance: exit 3.
    OutOfTolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Computation(_) => 1,
            CliError::OutOfTolerance(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Computation(m) | CliError::OutOfTolerance(m) => {
                f.write_str(m)
            }
        }
    }
}

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn compute(msg: impl fmt::Display) -> CliError {
    CliError::Computation(msg.to_string())
}

/// Applies the ANKLE_REDUCE_THREADS cap before any parallel work runs.
pub fn init_thread_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_VAR} must be a non-negative integer, got {raw:?}")))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| compute(format!("thread pool: {e}")))
}

/// Progress printer that honors --quiet.
pub struct Echo {
    quiet: bool,
}

impl Echo {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    pub fn artifact(&self, path: &Path) {
        if !self.quiet {
            println!("wrote {}", path.display());
        }
    }

    pub fn note(&self, msg: impl fmt::Display) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

/// SHA-256 of the canonical JSON serialization of the effective
/// configuration, stamped into every report for provenance.
pub fn config_sha256<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialization cannot fail");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        use fmt::Write as _;
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

pub fn read_json_file<D: DeserializeOwned>(path: &Path) -> Result<D, CliError> {
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| compute(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| compute(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n")
        .and_then(|()| out.flush())
        .map_err(|e| compute(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| compute(format!("{}: {e}", path.display())))
}

/// Row-major homogeneous matrix of a transform, the JSON exchange format.
pub fn transform_rows(t: &Transform) -> [[f64; 4]; 4] {
    t.to_matrix_rows()
}

/// Sidecar path: replaces the final extension, `report.json` → `report.txt`.
pub fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

/// On-disk description of a coupled model set. Model paths are resolved
/// relative to the manifest file; bones without a rest offset sit at the
/// identity.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSetManifest {
    pub models: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub constraints: Vec<ProximityConstraint>,
    #[serde(default)]
    pub rest_offsets: BTreeMap<String, [[f64; 4]; 4]>,
}

pub fn load_model_set(
    manifest_path: &Path,
) -> Result<(ModelSetManifest, CoupledModelSet<Scalar>), CliError> {
    let manifest: ModelSetManifest = read_json_file(manifest_path)?;
    if manifest.models.is_empty() {
        return Err(usage(format!(
            "{}: model set lists no bones",
            manifest_path.display()
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut models = BTreeMap::new();
    let mut rest_offsets = BTreeMap::new();
    for (bone, rel) in &manifest.models {
        let path = base.join(rel);
        let model = load_model::<Scalar>(&path)
            .map_err(|e| usage(format!("model for bone {bone} ({}): {e}", path.display())))?;
        models.insert(bone.clone(), model);
        let offset = match manifest.rest_offsets.get(bone) {
            Some(rows) => SimilarityTransform::from_matrix_rows(rows)
                .map_err(|e| usage(format!("rest offset for bone {bone}: {e}")))?,
            None => SimilarityTransform::identity(),
        };
        rest_offsets.insert(bone.clone(), offset);
    }
    for bone in manifest.rest_offsets.keys() {
        if !manifest.models.contains_key(bone) {
            return Err(usage(format!(
                "rest offset references unknown bone {bone}"
            )));
        }
    }
    let set = CoupledModelSet {
        models,
        constraints: manifest.constraints.clone(),
        rest_offsets,
    };
    Ok((manifest, set))
}
