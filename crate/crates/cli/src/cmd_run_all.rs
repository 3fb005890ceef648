//! End-to-end synthetic case: population → model → healthy-side segmentation
//! → fracture scenario → reduction plan, with the ground-truth displacement
//! recorded so the plan can be judged against it.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use ankle_reduce_core::casm_fit::{fit_coupled, CoupledModelSet, FitConfig};
use ankle_reduce_core::geometry::{
    rotation_from_axis_angle, surface_distance, write_obj, SimilarityTransform,
};
use ankle_reduce_core::phantom::{
    apply_fracture, generate_population, synthesize_volume, BaseShape, FieldKind,
    FractureScenario, Fragment, ModeSpec, PhantomSpec, Quality,
};
use ankle_reduce_core::reduction::{
    plan_reduction, validate_plan, PlanValidation, Provenance, ReductionConfig, ReductionPlan,
};
use ankle_reduce_core::shape_model::{
    build_model, generalized_procrustes, save_model, GpaConfig, ModeRule,
};
use ankle_reduce_core::volume::{write_nifti, GridSpec};
use ankle_reduce_core::{Plane, Scalar};

use crate::args::RunAllArgs;
use crate::support::{
    compute, config_sha256, ensure_dir, read_json_file, transform_rows, usage, write_json,
    CliError, Echo, SCHEMA_VERSION, TOOL_VERSION,
};

/// The whole scenario in one reproducible knob set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunAllConfig {
    pub seed: u64,
    /// Training population size.
    pub population: usize,
    pub radius_mm: f64,
    pub half_length_mm: f64,
    pub n_landmarks: usize,
    pub bulge_variance: f64,
    pub bend_variance: f64,
    /// Healthy-bone mode coefficients in units of √λ of the built model
    /// (largest mode first). The strong bend keeps the bone's long-axis spin
    /// observable to registration.
    pub healthy_coeffs: [f64; 2],
    pub spacing_mm: f64,
    pub quality: Quality,
    /// Fracture plane height (mm, bone axis).
    pub cut_height_mm: f64,
    /// Ground-truth displacement of the distal fragment.
    pub displacement_mm: [f64; 3],
    pub rotation_axis: [f64; 3],
    pub rotation_deg: f64,
    pub fit: FitConfig,
    pub reduction: ReductionConfig,
}

impl Default for RunAllConfig {
    fn default() -> Self {
        Self {
            seed: 20260819,
            population: 12,
            radius_mm: 6.0,
            half_length_mm: 25.0,
            n_landmarks: 162,
            bulge_variance: 4.0,
            bend_variance: 25.0,
            healthy_coeffs: [2.0, 1.0],
            spacing_mm: 1.0,
            quality: Quality::High,
            cut_height_mm: -5.0,
            // |t| = 5 mm exactly; axis normalized at use
            displacement_mm: [3.0, 2.4, 3.2],
            rotation_axis: [1.0, 2.0, 2.0],
            rotation_deg: 8.0,
            fit: FitConfig {
                // phantom volumes are mostly background, so the informative
                // gradients sit far up the percentile scale
                gradient_threshold_percentile: 97.0,
                ..FitConfig::default()
            },
            reduction: ReductionConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct SurfaceMetrics {
    mean: f64,
    rms: f64,
    hausdorff: f64,
}

#[derive(Serialize)]
struct ModelStage {
    n_modes: usize,
    eigenvalues: Vec<f64>,
    healthy_coefficients: Vec<f64>,
}

#[derive(Serialize)]
struct SegmentStage {
    converged: bool,
    iterations: usize,
    residual: Option<f64>,
    targeted_fraction: f64,
    /// Fitted healthy surface vs the true healthy surface.
    metrics: SurfaceMetrics,
}

#[derive(Serialize)]
struct GroundTruth {
    /// The displacement T* applied to the distal fragment.
    displacement: [[f64; 4]; 4],
    cut_height_mm: f64,
    /// Rotation angle of plan.transform ∘ T* (0 for a perfect plan).
    composed_rotation_deg: f64,
    /// Translation norm of plan.transform ∘ T* (0 for a perfect plan).
    composed_translation_mm: f64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    config_sha256: &'a str,
    seed: u64,
    config: &'a RunAllConfig,
    model: ModelStage,
    segment: SegmentStage,
    plan: &'a ReductionPlan<Scalar>,
    ground_truth: GroundTruth,
    validation: &'a PlanValidation,
}

pub fn run(args: &RunAllArgs, echo: &Echo) -> Result<(), CliError> {
    let mut config: RunAllConfig = match &args.config {
        Some(path) => read_json_file(path)?,
        None => RunAllConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.population < 3 {
        return Err(usage(format!(
            "population must be ≥ 3 to support a 2-mode model, got {}",
            config.population
        )));
    }
    config
        .fit
        .validate()
        .map_err(|e| usage(format!("fit config: {e}")))?;
    if !(config.reduction.tolerance_mm > 0.0) {
        return Err(usage(format!(
            "tolerance_mm must be > 0, got {}",
            config.reduction.tolerance_mm
        )));
    }
    let hash = config_sha256(&config);

    // ---- stage 1: phantom population --------------------------------------
    let spec = PhantomSpec {
        base_shape: BaseShape::Tube {
            radius: config.radius_mm,
            half_length: config.half_length_mm,
        },
        n_landmarks: config.n_landmarks,
        modes: vec![
            ModeSpec {
                field: FieldKind::AxialBulge,
                variance: config.bulge_variance,
            },
            ModeSpec {
                field: FieldKind::Bend,
                variance: config.bend_variance,
            },
        ],
        joint_gap: 0.0,
        seed: config.seed,
    };
    let population =
        generate_population::<Scalar>(&spec, config.population).map_err(compute)?;
    let pop_dir = args.out.join("population");
    ensure_dir(&pop_dir)?;
    for (i, member) in population.members.iter().enumerate() {
        let path = pop_dir.join(format!("member_{i:03}.obj"));
        write_obj(member, &path).map_err(compute)?;
        echo.artifact(&path);
    }
    echo.note(format!(
        "[1/4] phantom: {} members, {} landmarks",
        population.members.len(),
        config.n_landmarks
    ));

    // ---- stage 2: shape model ----------------------------------------------
    let gpa = GpaConfig {
        with_scale: false, // keep eigenvalues in mm²
        ..GpaConfig::default()
    };
    let aligned = generalized_procrustes(&population.members, &gpa).map_err(compute)?;
    let model = build_model(&aligned, ModeRule::<Scalar>::Fixed(2)).map_err(compute)?;
    if model.n_modes() < 2 {
        return Err(compute(format!(
            "model kept only {} mode(s); population too degenerate",
            model.n_modes()
        )));
    }
    let model_path = args.out.join("model.json");
    save_model(&model, &model_path).map_err(compute)?;
    echo.artifact(&model_path);
    let eigenvalues: Vec<f64> = model.eigenvalues.iter().copied().collect();
    echo.note(format!(
        "[2/4] model: {} modes, eigenvalues [{:.2}, {:.2}] mm²",
        model.n_modes(),
        eigenvalues[0],
        eigenvalues[1]
    ));

    // ---- stage 3: healthy bone, volume, segmentation ----------------------
    let healthy_coeffs: Vec<Scalar> = config
        .healthy_coeffs
        .iter()
        .zip(eigenvalues.iter())
        .map(|(&k, &ev)| k * ev.sqrt())
        .collect();
    let healthy_true = model.synthesize(&healthy_coeffs).map_err(compute)?;
    let truth_dir = args.out.join("truth");
    let volume_dir = args.out.join("volumes");
    let fitted_dir = args.out.join("fitted");
    ensure_dir(&truth_dir)?;
    ensure_dir(&volume_dir)?;
    ensure_dir(&fitted_dir)?;
    let healthy_true_path = truth_dir.join("healthy.obj");
    write_obj(&healthy_true, &healthy_true_path).map_err(compute)?;
    echo.artifact(&healthy_true_path);

    let healthy_grid = GridSpec::enclosing(
        &[&healthy_true],
        config.spacing_mm,
        6.0 + config.spacing_mm,
    )
    .map_err(compute)?;
    let healthy_volume = synthesize_volume(
        std::slice::from_ref(&healthy_true),
        &healthy_grid,
        config.quality,
        config.seed.wrapping_add(1),
    )
    .map_err(compute)?;
    let healthy_volume_path = volume_dir.join("healthy.nii");
    write_nifti(&healthy_volume, &healthy_volume_path).map_err(compute)?;
    echo.artifact(&healthy_volume_path);

    let set = CoupledModelSet {
        models: BTreeMap::from([("fibula".to_string(), model.clone())]),
        constraints: Vec::new(),
        rest_offsets: BTreeMap::from([("fibula".to_string(), SimilarityTransform::identity())]),
    };
    let fit_result = fit_coupled(&set, &healthy_volume, &config.fit).map_err(compute)?;
    let fibula = &fit_result.bones["fibula"];
    if let Some(why) = &fibula.failure {
        return Err(compute(format!("healthy-side segmentation failed: {why}")));
    }
    let fitted_path = fitted_dir.join("fibula.obj");
    write_obj(&fibula.mesh, &fitted_path).map_err(compute)?;
    echo.artifact(&fitted_path);
    let fit_metrics = surface_distance(&fibula.mesh, &healthy_true, true).map_err(compute)?;
    echo.note(format!(
        "[3/4] segment: mean surface error {:.3} mm (hausdorff {:.3} mm), {} iterations{}",
        fit_metrics.mean,
        fit_metrics.max,
        fibula.iterations,
        if fibula.converged {
            ""
        } else {
            " (not converged)"
        }
    ));

    // ---- stage 4: fracture scenario and reduction plan --------------------
    let injured_intact = healthy_true.mirrored(&Plane::yz());
    let injured_intact_path = truth_dir.join("injured_intact.obj");
    write_obj(&injured_intact, &injured_intact_path).map_err(compute)?;
    echo.artifact(&injured_intact_path);

    let axis = Vector3::from(config.rotation_axis);
    let t_star = SimilarityTransform::rigid(
        rotation_from_axis_angle(&axis, config.rotation_deg.to_radians()),
        Vector3::from(config.displacement_mm),
    )
    .map_err(|e| usage(format!("rotation_axis: {e}")))?;
    let fracture = apply_fracture(
        &injured_intact,
        &FractureScenario {
            cut_height: config.cut_height_mm,
            displacement: t_star.clone(),
            fragment: Fragment::Distal,
        },
    )
    .map_err(compute)?;
    let proximal_path = truth_dir.join("proximal.obj");
    let distal_path = truth_dir.join("distal_displaced.obj");
    write_obj(&fracture.proximal, &proximal_path).map_err(compute)?;
    write_obj(&fracture.distal, &distal_path).map_err(compute)?;
    echo.artifact(&proximal_path);
    echo.artifact(&distal_path);

    let injured_meshes = [fracture.proximal.clone(), fracture.distal.clone()];
    let injured_grid =
        GridSpec::enclosing(&[&injured_meshes[0], &injured_meshes[1]], config.spacing_mm, 6.0 + config.spacing_mm)
            .map_err(compute)?;
    let injured_volume = synthesize_volume(
        &injured_meshes,
        &injured_grid,
        config.quality,
        config.seed.wrapping_add(2),
    )
    .map_err(compute)?;
    let injured_volume_path = volume_dir.join("injured.nii");
    write_nifti(&injured_volume, &injured_volume_path).map_err(compute)?;
    echo.artifact(&injured_volume_path);

    // crop the fitted healthy bone at the same height so the plan compares
    // fragment against fragment (whole-bone surface would drown the residual)
    let healthy_crop = apply_fracture(
        &fibula.mesh,
        &FractureScenario {
            cut_height: config.cut_height_mm,
            displacement: SimilarityTransform::identity(),
            fragment: Fragment::Distal,
        },
    )
    .map_err(compute)?
    .distal;
    let healthy_crop_path = fitted_dir.join("fibula_distal.obj");
    write_obj(&healthy_crop, &healthy_crop_path).map_err(compute)?;
    echo.artifact(&healthy_crop_path);

    let mut plan = plan_reduction(
        &fracture.distal,
        &healthy_crop,
        &Plane::yz(),
        &config.reduction,
    )
    .map_err(compute)?;
    // relative to the output directory, so runs differing only in --out
    // stay byte-identical
    plan.provenance = Some(Provenance {
        inputs: vec![
            "truth/distal_displaced.obj".into(),
            "fitted/fibula_distal.obj".into(),
        ],
        config_sha256: hash.clone(),
    });
    let plan_path = args.out.join("plan.json");
    write_json(&plan_path, &plan)?;
    echo.artifact(&plan_path);

    let composed = plan.transform.compose(&t_star);
    let composed_rotation_deg = composed.rotation_angle().to_degrees();
    let composed_translation_mm = composed.translation().norm();
    let validation = validate_plan(&plan, config.reduction.tolerance_mm);

    let report_path = args.out.join("run_report.json");
    write_json(
        &report_path,
        &RunReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_sha256: &hash,
            seed: config.seed,
            config: &config,
            model: ModelStage {
                n_modes: model.n_modes(),
                eigenvalues: eigenvalues.clone(),
                healthy_coefficients: healthy_coeffs.clone(),
            },
            segment: SegmentStage {
                converged: fibula.converged,
                iterations: fibula.iterations,
                residual: fibula.residual,
                targeted_fraction: fibula.targeted_fraction,
                metrics: SurfaceMetrics {
                    mean: fit_metrics.mean,
                    rms: fit_metrics.rms,
                    hausdorff: fit_metrics.max,
                },
            },
            plan: &plan,
            ground_truth: GroundTruth {
                displacement: transform_rows(&t_star),
                cut_height_mm: config.cut_height_mm,
                composed_rotation_deg,
                composed_translation_mm,
            },
            validation: &validation,
        },
    )?;
    echo.artifact(&report_path);

    echo.note(format!(
        "[4/4] plan: translate {:.2} mm, rotate {:.2}°; residual mean {:.3} mm",
        plan.translation_mm.norm(),
        plan.rotation_deg,
        plan.residual.mean
    ));
    echo.note(format!(
        "plan ∘ true displacement: {composed_rotation_deg:.3}° / {composed_translation_mm:.3} mm from identity"
    ));
    echo.note(format!(
        "validation: {}",
        if validation.passed { "PASS" } else { "FAIL" }
    ));

    if !plan.within_tolerance {
        return Err(CliError::OutOfTolerance(format!(
            "plan residual mean {:.3} mm exceeds tolerance {:.3} mm",
            plan.residual.mean, config.reduction.tolerance_mm
        )));
    }
    if !validation.passed {
        return Err(CliError::OutOfTolerance(format!(
            "plan failed validation: {}",
            validation.reasons.join("; ")
        )));
    }
    Ok(())
}
