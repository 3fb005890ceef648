use serde::Serialize;

use ankle_reduce_core::geometry::write_obj;
use ankle_reduce_core::phantom::{
    generate_population, synthesize_volume, PhantomError, PhantomSpec, Quality,
};
use ankle_reduce_core::volume::{write_nifti, GridSpec};
use ankle_reduce_core::Scalar;

use crate::args::{PhantomArgs, QualityArg};
use crate::support::{
    compute, config_sha256, ensure_dir, read_json_file, usage, write_json, CliError, Echo,
    SCHEMA_VERSION, TOOL_VERSION,
};

/// Everything that determines the output, hashed into the truth file.
#[derive(Serialize)]
struct EffectiveConfig<'a> {
    spec: &'a PhantomSpec,
    count: usize,
    quality: Quality,
    spacing_mm: f64,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    config_sha256: &'a str,
    seed: u64,
    count: usize,
    quality: Quality,
    spacing_mm: f64,
    /// True mode coefficients per member (mm).
    coefficients: &'a [Vec<Scalar>],
    /// Sampling attempts consumed per member (1 = accepted first draw).
    attempts: &'a [u64],
}

pub fn run(args: &PhantomArgs, echo: &Echo) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(usage("count must be ≥ 1"));
    }
    if !(args.spacing > 0.0) {
        return Err(usage(format!("spacing must be > 0, got {}", args.spacing)));
    }
    let mut spec: PhantomSpec = read_json_file(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let quality = match args.quality {
        QualityArg::High => Quality::High,
        QualityArg::Low => Quality::Low,
    };
    let hash = config_sha256(&EffectiveConfig {
        spec: &spec,
        count: args.count,
        quality,
        spacing_mm: args.spacing,
    });

    let population = generate_population::<Scalar>(&spec, args.count).map_err(|e| match e {
        PhantomError::InvalidSpec { .. } => usage(e),
        other => compute(other),
    })?;

    let mesh_dir = args.out.join("meshes");
    let volume_dir = args.out.join("volumes");
    ensure_dir(&mesh_dir)?;
    ensure_dir(&volume_dir)?;

    // one grid for the whole population keeps the volumes comparable
    let refs: Vec<_> = population.members.iter().collect();
    let grid = GridSpec::enclosing(&refs, args.spacing, 6.0).map_err(compute)?;

    for (i, member) in population.members.iter().enumerate() {
        let mesh_path = mesh_dir.join(format!("member_{i:03}.obj"));
        write_obj(member, &mesh_path).map_err(compute)?;
        echo.artifact(&mesh_path);

        let volume = synthesize_volume(
            std::slice::from_ref(member),
            &grid,
            quality,
            spec.seed.wrapping_add(1 + i as u64),
        )
        .map_err(compute)?;
        let volume_path = volume_dir.join(format!("member_{i:03}.nii"));
        write_nifti(&volume, &volume_path).map_err(compute)?;
        echo.artifact(&volume_path);
    }

    let truth_path = args.out.join("truth.json");
    write_json(
        &truth_path,
        &TruthFile {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_sha256: &hash,
            seed: spec.seed,
            count: args.count,
            quality,
            spacing_mm: args.spacing,
            coefficients: &population.coefficients,
            attempts: &population.attempts,
        },
    )?;
    echo.artifact(&truth_path);
    Ok(())
}
