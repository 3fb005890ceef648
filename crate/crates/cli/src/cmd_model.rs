use std::path::PathBuf;

use serde::Serialize;

use ankle_reduce_core::geometry::read_obj;
use ankle_reduce_core::shape_model::{
    build_model, generalized_procrustes, save_model, GpaConfig, ModeRule, ShapeModelError,
};
use ankle_reduce_core::{Mesh, Scalar};

use crate::args::BuildModelArgs;
use crate::support::{
    compute, config_sha256, usage, with_extension, write_json, CliError, Echo, SCHEMA_VERSION,
    TOOL_VERSION,
};

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum RuleRepr {
    Fixed(usize),
    VarianceFraction(f64),
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    inputs: &'a [String],
    rule: &'a RuleRepr,
    with_scale: bool,
}

#[derive(Serialize)]
struct ModeRow {
    mode: usize,
    eigenvalue: f64,
    cumulative_fraction: f64,
}

#[derive(Serialize)]
struct BuildReport<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    config_sha256: &'a str,
    seed: Option<u64>,
    inputs: &'a [String],
    n_shapes: usize,
    n_landmarks: usize,
    with_scale: bool,
    rule: &'a RuleRepr,
    n_modes: usize,
    /// Full spectrum with cumulative variance, not just the kept modes.
    spectrum: &'a [ModeRow],
}

pub fn run(args: &BuildModelArgs, echo: &Echo) -> Result<(), CliError> {
    let rule = match (args.modes, args.variance_fraction) {
        (Some(0), _) => return Err(usage("--modes must be ≥ 1")),
        (Some(n), _) => RuleRepr::Fixed(n),
        (None, Some(f)) if f > 0.0 && f <= 1.0 => RuleRepr::VarianceFraction(f),
        (None, Some(f)) => {
            return Err(usage(format!(
                "--variance-fraction must be in (0, 1], got {f}"
            )))
        }
        (None, None) => RuleRepr::VarianceFraction(0.95),
    };

    let mut paths: Vec<PathBuf> = Vec::new();
    let matches = glob::glob(&args.meshes)
        .map_err(|e| usage(format!("bad glob {:?}: {e}", args.meshes)))?;
    for entry in matches {
        let path = entry.map_err(|e| usage(format!("{e}")))?;
        paths.push(path);
    }
    paths.sort();
    if paths.len() < 2 {
        return Err(usage(format!(
            "need at least 2 training meshes, {:?} matches {}",
            args.meshes,
            paths.len()
        )));
    }
    let inputs: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let hash = config_sha256(&EffectiveConfig {
        inputs: &inputs,
        rule: &rule,
        with_scale: args.with_scale,
    });

    let mut meshes: Vec<Mesh> = Vec::with_capacity(paths.len());
    for path in &paths {
        meshes.push(read_obj(path).map_err(|e| usage(format!("{}: {e}", path.display())))?);
    }

    let gpa = GpaConfig {
        with_scale: args.with_scale,
        ..GpaConfig::default()
    };
    let aligned = generalized_procrustes(&meshes, &gpa).map_err(|e| match e {
        ShapeModelError::TopologyMismatch { index } => compute(format!(
            "{e} ({} does not match {})",
            paths[index].display(),
            paths[0].display()
        )),
        other => compute(other),
    })?;

    // the full spectrum for the report, then the requested truncation
    let full = build_model(&aligned, ModeRule::<Scalar>::Fixed(usize::MAX)).map_err(compute)?;
    let total: f64 = full.eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    let spectrum: Vec<ModeRow> = full
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &ev)| {
            cumulative += ev;
            ModeRow {
                mode: i + 1,
                eigenvalue: ev,
                cumulative_fraction: if total > 0.0 { cumulative / total } else { 1.0 },
            }
        })
        .collect();

    let core_rule = match rule {
        RuleRepr::Fixed(n) => ModeRule::Fixed(n),
        RuleRepr::VarianceFraction(f) => ModeRule::VarianceFraction(f),
    };
    let model = build_model(&aligned, core_rule).map_err(compute)?;
    save_model(&model, &args.out).map_err(compute)?;
    echo.artifact(&args.out);

    let report_path = with_extension(&args.out, "report.json");
    write_json(
        &report_path,
        &BuildReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_sha256: &hash,
            seed: None,
            inputs: &inputs,
            n_shapes: meshes.len(),
            n_landmarks: model.n_landmarks,
            with_scale: args.with_scale,
            rule: &rule,
            n_modes: model.n_modes(),
            spectrum: &spectrum,
        },
    )?;
    echo.artifact(&report_path);

    echo.note(format!(
        "kept {} of {} modes\n{:>4}  {:>14}  {:>10}",
        model.n_modes(),
        spectrum.len(),
        "mode",
        "eigenvalue",
        "cumulative"
    ));
    for row in &spectrum {
        echo.note(format!(
            "{:>4}  {:>14.6}  {:>10.6}",
            row.mode, row.eigenvalue, row.cumulative_fraction
        ));
    }
    Ok(())
}
