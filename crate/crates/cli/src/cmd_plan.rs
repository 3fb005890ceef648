use nalgebra::Vector3;
use serde::Serialize;

use ankle_reduce_core::geometry::read_obj;
use ankle_reduce_core::reduction::{plan_reduction, Provenance, ReductionConfig, ReductionError};
use ankle_reduce_core::{Mesh, Plane};

use crate::args::PlanArgs;
use crate::support::{
    compute, config_sha256, read_json_file, usage, write_json, CliError, Echo,
};

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    reduction: &'a ReductionConfig,
    mirror_x: f64,
}

pub fn run(args: &PlanArgs, echo: &Echo) -> Result<(), CliError> {
    let config: ReductionConfig = match &args.config {
        Some(path) => read_json_file(path)?,
        None => ReductionConfig::default(),
    };
    if !(config.tolerance_mm > 0.0) {
        return Err(usage(format!(
            "tolerance_mm must be > 0, got {}",
            config.tolerance_mm
        )));
    }
    let hash = config_sha256(&EffectiveConfig {
        reduction: &config,
        mirror_x: args.mirror_x,
    });

    let injured: Mesh =
        read_obj(&args.injured).map_err(|e| usage(format!("{}: {e}", args.injured.display())))?;
    let healthy: Mesh =
        read_obj(&args.healthy).map_err(|e| usage(format!("{}: {e}", args.healthy.display())))?;
    let plane = Plane::new(
        Vector3::new(args.mirror_x, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
    )
    .expect("unit normal");

    let mut plan = plan_reduction(&injured, &healthy, &plane, &config).map_err(|e| match e {
        // an unusable mesh is a failed computation, not a bad invocation
        ReductionError::EmptyMesh { .. } => compute(e),
        other => compute(other),
    })?;
    plan.provenance = Some(Provenance {
        inputs: vec![
            args.injured.display().to_string(),
            args.healthy.display().to_string(),
        ],
        config_sha256: hash,
    });

    write_json(&args.out, &plan)?;
    echo.artifact(&args.out);

    let t = plan.translation_mm;
    echo.note(format!(
        "translate {:.2} mm [{:.2}, {:.2}, {:.2}], rotate {:.2}° about [{:.3}, {:.3}, {:.3}]",
        t.norm(),
        t.x,
        t.y,
        t.z,
        plan.rotation_deg,
        plan.rotation_axis.x,
        plan.rotation_axis.y,
        plan.rotation_axis.z,
    ));
    echo.note(format!(
        "residual mean {:.3} mm, max {:.3} mm — {}",
        plan.residual.mean,
        plan.residual.max,
        if plan.within_tolerance {
            "within tolerance"
        } else {
            "OUT OF TOLERANCE"
        }
    ));

    if plan.within_tolerance {
        Ok(())
    } else {
        Err(CliError::OutOfTolerance(format!(
            "mean residual {:.3} mm exceeds tolerance {:.3} mm",
            plan.residual.mean, config.tolerance_mm
        )))
    }
}
