use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use vam_core::cohort::load_cohort;
use vam_core::comparison::SchoolFlags;
use vam_core::design::{build_design, canonical_specs};
use vam_core::effects::EffectTable;
use vam_core::error::{Result, VamError};
use vam_core::manifest::RunManifest;
use vam_core::pipeline::{self, FitSettings};
use vam_core::simulation::{generate_cohort, SimConfig};
use vam_core::{Cohort, Family, ModelSpec, PriorTreatment, VamConfig};

use crate::{CohortArgs, CompareArgs, FitArgs, ReportArgs, SimulateArgs};

fn invalid(msg: impl Into<String>) -> VamError {
    VamError::Validation(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<VamConfig> {
    match path {
        Some(p) => VamConfig::load(p),
        None => Ok(VamConfig::default()),
    }
}

fn manifest_for(command: &str, config: &VamConfig, seed: Option<u64>) -> Result<RunManifest> {
    Ok(RunManifest::new(command, &config.to_toml_string()?, seed))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VamError::io(dir, e))
}

/// Resolve `--model`, `--prior` and `--all` into grid order.
fn select_specs(model: Option<&str>, prior: Option<&str>, all: bool) -> Result<Vec<ModelSpec>> {
    let families: Vec<Family> = match (model, all) {
        (_, true) | (Some("all"), _) => Family::ALL.to_vec(),
        (Some(m), false) => vec![m.parse()?],
        (None, false) => return Err(invalid("choose specs with --model or --all")),
    };
    let whole_grid = all || model == Some("all");
    let treatments: Vec<PriorTreatment> = match prior {
        Some(p) => vec![p.parse()?],
        None if whole_grid => PriorTreatment::ALL.to_vec(),
        None => vec![PriorTreatment::Included],
    };
    Ok(canonical_specs()
        .into_iter()
        .map(|c| c.spec)
        .filter(|s| families.contains(&s.family) && treatments.contains(&s.prior_treatment))
        .collect())
}

fn load(args: &CohortArgs, config: &VamConfig) -> Result<Cohort> {
    load_cohort(&args.students, &args.schools, &config.ingest)
}

fn settings(args: &CohortArgs, config: &VamConfig, no_shrinkage: bool) -> FitSettings {
    FitSettings {
        shrinkage: config.run.shrinkage && !no_shrinkage,
        threads: args.threads.unwrap_or(config.run.threads).max(1),
    }
}

fn add_inputs(m: &mut RunManifest, args: &CohortArgs) -> Result<()> {
    m.add_input(&args.students)?;
    m.add_input(&args.schools)?;
    if let Some(c) = &args.config {
        m.add_input(c)?;
    }
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<()> {
    let config = load_config(args.cohort.config.as_deref())?;
    let specs = select_specs(args.model.as_deref(), args.prior.as_deref(), args.all)?;
    let mut manifest = manifest_for("fit", &config, None)?;
    add_inputs(&mut manifest, &args.cohort)?;
    let cohort = load(&args.cohort, &config)?;
    let outputs = pipeline::fit_specs(&cohort, &specs, settings(&args.cohort, &config, args.no_shrinkage))?;
    prepare_out(&args.out)?;
    pipeline::write_fit_outputs(&args.out, &outputs, &cohort)?;
    if args.dump_design {
        for out in outputs.iter().filter(|o| o.equivalent_to.is_none()) {
            let design = build_design(out.spec, &cohort)?;
            let path = args.out.join(out.spec.slug()).join("design.csv");
            let file = fs::File::create(&path).map_err(|e| VamError::io(&path, e))?;
            pipeline::write_design_csv(BufWriter::new(file), &design)?;
        }
    }
    let distinct = outputs.iter().filter(|o| o.equivalent_to.is_none()).count();
    info!("wrote {} output sets ({} distinct designs) to {}", outputs.len(), distinct, args.out.display());
    manifest.write(&args.out)?;
    Ok(())
}

/// Model spec from a directory name such as `cva-a_included`.
fn spec_from_slug(slug: &str) -> Option<ModelSpec> {
    let (f, t) = slug.rsplit_once('_')?;
    Some(ModelSpec::new(f.parse().ok()?, t.parse().ok()?))
}

fn effects_arg(arg: &str) -> Result<(ModelSpec, PathBuf)> {
    if let Some((label, path)) = arg.split_once('=') {
        return Ok((ModelSpec::parse_label(label)?, PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let slug = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let spec = spec_from_slug(&slug).ok_or_else(|| {
        invalid(format!(
            "cannot tell the model of `{arg}`; pass FAMILY:TREATMENT=PATH"
        ))
    })?;
    Ok((spec, path))
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let mut manifest = RunManifest::new("compare", "", None);
    let (tables, flags_path): (Vec<(String, EffectTable)>, Option<PathBuf>) = match &args.fits {
        Some(dir) => {
            let tables = pipeline::load_fit_tables(dir)?;
            for c in canonical_specs() {
                let p = dir.join(c.spec.slug()).join("effects.csv");
                if p.is_file() {
                    manifest.add_input(&p)?;
                }
            }
            let flags = args.flags.clone().or_else(|| {
                let p = dir.join(pipeline::FLAGS_FILE);
                p.is_file().then_some(p)
            });
            (tables, flags)
        }
        None => {
            if args.effects.len() < 2 {
                return Err(invalid("compare needs --fits DIR or at least two --effects"));
            }
            let mut tables = Vec::new();
            for arg in &args.effects {
                let (spec, path) = effects_arg(arg)?;
                manifest.add_input(&path)?;
                tables.push((spec.label(), pipeline::read_effects_csv(&path, spec)?));
            }
            (tables, args.flags.clone())
        }
    };
    let flags: BTreeMap<String, SchoolFlags> = match &flags_path {
        Some(p) => {
            manifest.add_input(p)?;
            pipeline::read_school_flags(p)?
        }
        None => BTreeMap::new(),
    };
    let report = pipeline::compare(&tables, &flags)?;
    prepare_out(&args.out)?;
    pipeline::write_comparison(&args.out, &report)?;
    manifest.write(&args.out)?;
    Ok(())
}

/// Parse `A..B` (inclusive) or a single seed.
fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || invalid(format!("--seeds expects A..B, got `{text}`"));
    match text.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![text.trim().parse().map_err(|_| bad())?]),
    }
}

fn simulate_one(config: &VamConfig, sim: &SimConfig, dir: &Path) -> Result<()> {
    let data = generate_cohort(sim, &config.ingest)?;
    prepare_out(dir)?;
    pipeline::write_simulation(dir, &data)?;
    let effective = VamConfig {
        simulation: sim.clone(),
        ..config.clone()
    };
    manifest_for("simulate", &effective, Some(sim.seed))?.write(dir)?;
    info!(
        "seed {}: {} students in {} schools -> {}",
        sim.seed,
        data.cohort.n_students(),
        data.cohort.n_schools(),
        dir.display()
    );
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let mut sim = match &args.preset {
        Some(p) => SimConfig::preset(p)?,
        None => config.simulation.clone(),
    };
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    sim.validate()?;
    match &args.seeds {
        Some(range) => {
            for seed in parse_seeds(range)? {
                let cfg = SimConfig { seed, ..sim.clone() };
                simulate_one(&config, &cfg, &args.out.join(format!("seed-{seed}")))?;
            }
            Ok(())
        }
        None => simulate_one(&config, &sim, &args.out),
    }
}

pub fn report(args: ReportArgs) -> Result<()> {
    let config = load_config(args.cohort.config.as_deref())?;
    let mut manifest = manifest_for("report", &config, None)?;
    add_inputs(&mut manifest, &args.cohort)?;
    let cohort = load(&args.cohort, &config)?;
    let specs: Vec<ModelSpec> = canonical_specs().into_iter().map(|c| c.spec).collect();
    let outputs = pipeline::fit_specs(&cohort, &specs, settings(&args.cohort, &config, false))?;
    prepare_out(&args.out)?;
    let fits_dir = args.out.join("fits");
    pipeline::write_fit_outputs(&fits_dir, &outputs, &cohort)?;
    // compare what was written, exactly as `vam compare` would read it
    let tables: Vec<(String, EffectTable)> = outputs
        .iter()
        .map(|o| (o.spec.label(), pipeline::exported_table(&o.effects.table)))
        .collect();
    let report = pipeline::compare(&tables, &pipeline::school_flags(&cohort))?;
    pipeline::write_comparison(&args.out.join("comparison"), &report)?;
    manifest.write(&args.out)?;
    Ok(())
}
