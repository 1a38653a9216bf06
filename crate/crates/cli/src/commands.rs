//! Implementations of the `mcorr` subcommands. Each one is a pure function
//! of (config file, flags, seed) to (files, exit code): all randomness is
//! seeded, all reductions ordered, and all artifacts hashed into a
//! manifest.

use std::path::Path;

use mcorr_core::config::RunConfig;
use mcorr_core::gradcheck::standard_checks;
use mcorr_core::image::{DomainTag, Image2D, MaskFeatureMap};
use mcorr_core::io::{
    read_image, read_mask, write_image, write_image_pgm16, write_image_preview, write_mask,
    write_sinogram,
};
use mcorr_core::mask::segment_from_prompts;
use mcorr_core::metrics::{evaluate_pair, MetricsReport, SsimConstants};
use mcorr_core::optim::{ablate_objectives, ablation_to_csv, optimize_correction};
use mcorr_core::tomo::{simulate_motion_scan, MotionScanOutput};
use mcorr_core::{Error, Result};

use crate::manifest::Manifest;
use crate::{AblateArgs, CorrectArgs, EvaluateArgs, GradcheckArgs, LossOverrides, SegmentArgs, SimulateArgs};

/// Loads a run configuration; any failure here (unreadable file, parse
/// error, invalid values) is a configuration error.
fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(|e| match e {
        e if e.is_config_or_usage() => e,
        e => Error::Config(format!("cannot load {}: {e}", path.display())),
    })
}

/// Flags win over config-file values.
fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, loss: &LossOverrides) {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(rho) = loss.rho {
        cfg.loss.rho = rho;
    }
    if let Some(ps) = loss.patch_size {
        cfg.loss.patch_size = ps;
    }
    if let Some(dt) = loss.dice_threshold {
        cfg.loss.dice_threshold = dt;
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn run_scan(cfg: &RunConfig) -> Result<MotionScanOutput> {
    let spec = cfg.phantom_spec()?;
    let geom = cfg.scan_geometry()?;
    let traj = cfg.motion_trajectory()?;
    let window = cfg.window_bounds()?;
    simulate_motion_scan(&spec, &geom, &traj, window)
}

/// Builds the region mask the way the pipeline uses it: segmenting the
/// corrupted image at the configured prompts. No prompts means no mask.
fn mask_from_config(cfg: &RunConfig, corrupted: &Image2D) -> Result<Option<MaskFeatureMap>> {
    if cfg.prompts.is_empty() {
        return Ok(None);
    }
    let prompts = cfg.prompt_set()?;
    let seg = cfg.segmenter_config()?;
    segment_from_prompts(corrupted, &prompts, &seg).map(Some)
}

pub fn simulate(args: SimulateArgs) -> Result<i32> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args.seed, &LossOverrides { rho: None, patch_size: None, dice_threshold: None });
    let out = run_scan(&cfg)?;

    let dir = &args.out;
    ensure_dir(dir)?;
    write_image(&out.reference, &dir.join("reference.i2d"))?;
    write_image(&out.corrupted, &dir.join("corrupted.i2d"))?;
    write_sinogram(&out.sino_reference, &dir.join("sino_reference.i2d"))?;
    write_sinogram(&out.sino_corrupted, &dir.join("sino_corrupted.i2d"))?;
    write_image_preview(&out.reference, &dir.join("reference.pgm"))?;
    write_image_preview(&out.corrupted, &dir.join("corrupted.pgm"))?;

    let mut manifest = Manifest::new();
    for name in [
        "reference.i2d",
        "corrupted.i2d",
        "sino_reference.i2d",
        "sino_reference.angles.json",
        "sino_corrupted.i2d",
        "sino_corrupted.angles.json",
        "reference.pgm",
        "corrupted.pgm",
    ] {
        manifest.add(dir, name)?;
    }
    manifest.write(dir)?;
    Ok(0)
}

pub fn segment(args: SegmentArgs) -> Result<i32> {
    let cfg = load_config(&args.config)?;
    let img = read_image(&args.image)?;
    let prompts = cfg.prompt_set()?;
    let seg = cfg.segmenter_config()?;
    let mask = segment_from_prompts(&img, &prompts, &seg)?;

    let dir = &args.out;
    ensure_dir(dir)?;
    write_mask(&mask, &dir.join("mask.pgm"))?;
    let mut manifest = Manifest::new();
    manifest.add(dir, "mask.pgm")?;
    manifest.write(dir)?;
    Ok(0)
}

pub fn correct(args: CorrectArgs) -> Result<i32> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args.seed, &args.loss);
    let corrupted = read_image(&args.corrupted)?;
    let gt = read_image(&args.gt)?;

    let mask = mask_from_config(&cfg, &corrupted)?;
    let loss_cfg = cfg.loss_config(mask)?;
    let opt = cfg.optimizer_config()?;
    let run = optimize_correction(&corrupted, &gt, &loss_cfg, &opt, &[])?;

    let dir = &args.out;
    ensure_dir(dir)?;
    write_image(&run.corrected, &dir.join("corrected.i2d"))?;
    write_text(dir, "trace.csv", &run.trace.to_csv())?;
    let mut manifest = Manifest::new();
    manifest.add(dir, "corrected.i2d")?;
    manifest.add(dir, "trace.csv")?;
    manifest.write(dir)?;
    Ok(0)
}

pub fn evaluate(args: EvaluateArgs) -> Result<i32> {
    let mut loss = match &args.config {
        Some(path) => load_config(path)?.loss,
        None => Default::default(),
    };
    if let Some(rho) = args.loss.rho {
        loss.rho = rho;
    }
    if let Some(ps) = args.loss.patch_size {
        loss.patch_size = ps;
    }
    if let Some(dt) = args.loss.dice_threshold {
        loss.dice_threshold = dt;
    }

    let gt = read_image(&args.gt)?;
    let test = read_image(&args.test)?;
    let mask = match &args.mask {
        Some(path) => {
            let m = read_mask(path)?;
            if m.is_empty() {
                // An empty mask is a signal, not an error: fall back to
                // unmasked selection.
                eprintln!("note: mask {} is empty; selecting without it", path.display());
                None
            } else {
                Some(m)
            }
        }
        None => None,
    };

    let case_id = args.case_id.clone().unwrap_or_else(|| {
        args.test
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("case")
            .to_string()
    });
    let consts = SsimConstants {
        k1: loss.k1,
        k2: loss.k2,
        ..SsimConstants::default()
    };
    let report = evaluate_pair(
        &case_id,
        &gt,
        &test,
        mask.as_ref(),
        loss.patch_size,
        loss.rho,
        loss.coverage_min,
        &consts,
        loss.dice_threshold,
    )?;

    let dir = &args.out;
    ensure_dir(dir)?;
    let csv = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.to_csv_row());
    write_text(dir, "report.csv", &csv)?;
    let mut json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    json.push('\n');
    write_text(dir, "report.json", &json)?;
    println!("{}", report.to_csv_row());
    Ok(0)
}

pub fn ablate(args: AblateArgs) -> Result<i32> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args.seed, &args.loss);
    let scan = run_scan(&cfg)?;

    let mask = mask_from_config(&cfg, &scan.corrupted)?;
    let loss_cfg = cfg.loss_config(mask)?;
    let opt = cfg.optimizer_config()?;
    let arms = ablate_objectives(
        &scan.corrupted,
        &scan.reference,
        &loss_cfg,
        &opt,
        cfg.loss.dice_threshold,
    )?;

    let dir = &args.out;
    ensure_dir(dir)?;
    write_text(dir, "ablation.csv", &ablation_to_csv(&arms))?;
    let mut manifest = Manifest::new();
    manifest.add(dir, "ablation.csv")?;
    for arm in &arms {
        // Signed difference against the reference, the visual record of
        // what each objective failed to recover.
        let diff: Vec<f64> = arm
            .corrected
            .data()
            .iter()
            .zip(scan.reference.data())
            .map(|(c, r)| c - r)
            .collect();
        let diff_img = Image2D::new(
            arm.corrected.width(),
            arm.corrected.height(),
            1,
            arm.corrected.spacing_mm(),
            DomainTag::Raw,
            diff,
        )?;
        let name = format!("diff_{}.pgm", arm.name);
        write_image_pgm16(&diff_img, -2.0, 2.0, &dir.join(&name))?;
        manifest.add(dir, &name)?;
    }
    manifest.write(dir)?;
    Ok(0)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<i32> {
    let config_seed = match &args.config {
        Some(path) => Some(load_config(path)?.seed),
        None => None,
    };
    let seed = args
        .seed
        .or(config_seed)
        .unwrap_or_else(|| RunConfig::standard_chest().seed);

    let lines = standard_checks(seed)?;
    let mut all_passed = true;
    for line in &lines {
        println!("{}", line.format_line());
        all_passed &= line.passed();
    }
    Ok(if all_passed { 0 } else { 1 })
}
