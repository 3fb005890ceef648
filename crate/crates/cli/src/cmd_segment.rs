use std::collections::BTreeMap;

use serde::Serialize;

use ankle_reduce_core::casm_fit::{fit_coupled, FitConfig, FitResult};
use ankle_reduce_core::geometry::{read_obj, surface_distance, write_obj};
use ankle_reduce_core::volume::read_nifti;
use ankle_reduce_core::{Scalar, Volume};

use crate::args::SegmentArgs;
use crate::support::{
    compute, config_sha256, ensure_dir, read_json_file, transform_rows, usage, write_json,
    CliError, Echo, ModelSetManifest, SCHEMA_VERSION, TOOL_VERSION,
};

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    fit: &'a FitConfig,
    model_set: &'a ModelSetManifest,
}

#[derive(Serialize)]
struct SurfaceMetrics {
    mean: f64,
    rms: f64,
    hausdorff: f64,
}

#[derive(Serialize)]
struct BoneReport {
    converged: bool,
    iterations: usize,
    /// RMS distance to the profile targets of the last iteration (mm).
    residual: Option<f64>,
    targeted_fraction: f64,
    failure: Option<String>,
    pose: [[f64; 4]; 4],
    coeffs: Vec<f64>,
    /// Present when ground truth was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<SurfaceMetrics>,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    config_sha256: &'a str,
    seed: Option<u64>,
    volume: String,
    bones: BTreeMap<String, BoneReport>,
    /// Mean vertex movement per iteration (mm).
    movement_log: &'a [f64],
}

pub fn run(args: &SegmentArgs, echo: &Echo) -> Result<(), CliError> {
    let config: FitConfig = match &args.config {
        Some(path) => read_json_file(path)?,
        None => FitConfig::default(),
    };
    config
        .validate()
        .map_err(|e| usage(format!("fit config: {e}")))?;
    let (manifest, set) = crate::support::load_model_set(&args.model_set)?;
    set.validate()
        .map_err(|e| usage(format!("{}: {e}", args.model_set.display())))?;
    let hash = config_sha256(&EffectiveConfig {
        fit: &config,
        model_set: &manifest,
    });

    let volume: Volume =
        read_nifti(&args.volume).map_err(|e| usage(format!("{}: {e}", args.volume.display())))?;

    let result: FitResult<Scalar> = fit_coupled(&set, &volume, &config).map_err(compute)?;
    if result.all_failed() {
        let detail = result
            .bones
            .values()
            .find_map(|b| b.failure.clone())
            .unwrap_or_else(|| "no bones fitted".into());
        return Err(compute(format!("every bone failed to fit: {detail}")));
    }

    ensure_dir(&args.out)?;
    let mut bones = BTreeMap::new();
    for (name, fit) in &result.bones {
        let mut metrics = None;
        if fit.failure.is_none() {
            let path = args.out.join(format!("{name}.obj"));
            write_obj(&fit.mesh, &path).map_err(compute)?;
            echo.artifact(&path);

            if let Some(truth_dir) = &args.truth {
                let truth_path = truth_dir.join(format!("{name}.obj"));
                let truth = read_obj(&truth_path)
                    .map_err(|e| usage(format!("{}: {e}", truth_path.display())))?;
                let stats = surface_distance(&fit.mesh, &truth, true).map_err(compute)?;
                metrics = Some(SurfaceMetrics {
                    mean: stats.mean,
                    rms: stats.rms,
                    hausdorff: stats.max,
                });
            }
        }
        bones.insert(
            name.clone(),
            BoneReport {
                converged: fit.converged,
                iterations: fit.iterations,
                residual: fit.residual,
                targeted_fraction: fit.targeted_fraction,
                failure: fit.failure.clone(),
                pose: transform_rows(&fit.pose),
                coeffs: fit.coeffs.clone(),
                metrics,
            },
        );
    }

    let report_path = args.out.join("segment_report.json");
    write_json(
        &report_path,
        &SegmentReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_sha256: &hash,
            seed: None,
            volume: args.volume.display().to_string(),
            bones,
            movement_log: &result.movement_log,
        },
    )?;
    echo.artifact(&report_path);

    for (name, fit) in &result.bones {
        match (&fit.failure, fit.residual) {
            (Some(why), _) => echo.note(format!("{name}: FAILED ({why})")),
            (None, Some(r)) => echo.note(format!(
                "{name}: residual {r:.3} mm, targeted {:.0}%, {} iterations{}",
                fit.targeted_fraction * 100.0,
                fit.iterations,
                if fit.converged { "" } else { " (not converged)" }
            )),
            (None, None) => {}
        }
    }
    Ok(())
}
