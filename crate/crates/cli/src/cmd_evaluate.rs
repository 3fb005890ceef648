use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ankle_reduce_core::geometry::read_obj;
use ankle_reduce_core::Mesh;

use crate::args::EvaluateArgs;
use crate::support::{
    compute, config_sha256, usage, with_extension, write_json, CliError, Echo, SCHEMA_VERSION,
    TOOL_VERSION,
};

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    fitted: &'a str,
    truth: &'a str,
}

#[derive(Serialize)]
struct BoneStats {
    /// Corresponded vertex distances (mm): same landmark, fitted vs truth.
    mean: f64,
    rms: f64,
    max: f64,
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    config_sha256: &'a str,
    seed: Option<u64>,
    bones: &'a BTreeMap<String, BoneStats>,
}

/// Per-landmark distances; meaningful because fitted and truth meshes share
/// the model's vertex order.
fn corresponded_stats(name: &str, fitted: &Mesh, truth: &Mesh) -> Result<BoneStats, CliError> {
    if fitted.n_vertices() != truth.n_vertices() || fitted.faces() != truth.faces() {
        return Err(usage(format!(
            "topology mismatch for {name}: fitted has {} vertices, truth has {}",
            fitted.n_vertices(),
            truth.n_vertices()
        )));
    }
    let n = fitted.n_vertices() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut max: f64 = 0.0;
    for (a, b) in fitted.vertices().iter().zip(truth.vertices()) {
        let d = (a - b).norm();
        sum += d;
        sum_sq += d * d;
        max = max.max(d);
    }
    Ok(BoneStats {
        mean: sum / n,
        rms: (sum_sq / n).sqrt(),
        max,
    })
}

fn obj_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| compute(format!("{e}")))?.path();
        if path.extension().is_some_and(|e| e == "obj") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| usage(format!("unusable file name {}", path.display())))?
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn run(args: &EvaluateArgs, echo: &Echo) -> Result<(), CliError> {
    let fitted_files = obj_stems(&args.fitted)?;
    if fitted_files.is_empty() {
        return Err(usage(format!(
            "no .obj files in {}",
            args.fitted.display()
        )));
    }
    let hash = config_sha256(&EffectiveConfig {
        fitted: &args.fitted.display().to_string(),
        truth: &args.truth.display().to_string(),
    });

    let mut bones = BTreeMap::new();
    for (stem, fitted_path) in &fitted_files {
        let truth_path = args.truth.join(format!("{stem}.obj"));
        if !truth_path.exists() {
            return Err(usage(format!(
                "no truth counterpart for {stem}.obj in {}",
                args.truth.display()
            )));
        }
        let fitted: Mesh = read_obj(fitted_path)
            .map_err(|e| usage(format!("{}: {e}", fitted_path.display())))?;
        let truth: Mesh =
            read_obj(&truth_path).map_err(|e| usage(format!("{}: {e}", truth_path.display())))?;
        bones.insert(stem.clone(), corresponded_stats(stem, &fitted, &truth)?);
    }

    write_json(
        &args.out,
        &EvaluateReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_sha256: &hash,
            seed: None,
            bones: &bones,
        },
    )?;
    echo.artifact(&args.out);

    let name_width = bones.keys().map(|k| k.len()).max().unwrap_or(4).max(4);
    let mut table = String::new();
    writeln!(
        table,
        "{:<name_width$}  {:>10}  {:>10}  {:>10}",
        "bone", "mean", "rms", "max"
    )
    .unwrap();
    for (name, s) in &bones {
        writeln!(
            table,
            "{name:<name_width$}  {:>10.4}  {:>10.4}  {:>10.4}",
            s.mean, s.rms, s.max
        )
        .unwrap();
    }
    let table_path = with_extension(&args.out, "txt");
    std::fs::write(&table_path, &table)
        .map_err(|e| compute(format!("{}: {e}", table_path.display())))?;
    echo.artifact(&table_path);
    echo.note(table.trim_end());
    Ok(())
}
