use std::fs;
use std::path::{Path, PathBuf};

use ptdet_core::data::{load_split, write_atomic, AnnotationFile, Sample};
use ptdet_core::geometry::{canonicalize, CanonicalMode, Orientation};
use ptdet_core::model::check::{full_model_gradcheck, layer_cases};
use ptdet_core::model::load_checkpoint;
use ptdet_core::tensor::gradcheck::{registry, run_cases, GradCase, DEFAULT_STEP};
use ptdet_core::train::synth::TRAIN_ROTATIONS;
use ptdet_core::train::{
    ablate, default_grid, derive_seed, evaluate, expand_rot_test_set, generate_scenes,
    prepare_all, train, AblationSplits, BaseSample, EvalSettings, LabelMode, LossWeights,
    SceneParams, TrainConfig, TrainData,
};
use ptdet_core::Error as CoreError;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};

/// Environment variable consulted for the seed when neither a flag nor a
/// config file sets one.
pub const SEED_ENV: &str = "PTDET_SEED";

/// Name under which the whole-model check appears in gradcheck reports.
pub const FULL_MODEL_CASE: &str = "full_model";

/// What a command did, for its manifest.
pub struct Outcome {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn is_empty_dir(p: &Path) -> CliResult<bool> {
    Ok(fs::read_dir(p)?.next().is_none())
}

/// Makes `out` an empty directory, refusing to clear existing content
/// unless `force` is set.
pub fn prepare_out_dir(out: &Path, force: bool) -> CliResult<()> {
    if out.exists() {
        if !out.is_dir() {
            if !force {
                return Err(CliError::Usage(format!("{} exists and is not a directory; pass --force to replace it", out.display())));
            }
            fs::remove_file(out)?;
        } else if !is_empty_dir(out)? {
            if !force {
                return Err(CliError::Usage(format!("{} is not empty; pass --force to overwrite", out.display())));
            }
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

pub fn check_out_file(out: &Path, force: bool) -> CliResult<()> {
    if out.is_dir() {
        return Err(CliError::Usage(format!("{} is a directory", out.display())));
    }
    if out.exists() && !force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", out.display())));
    }
    Ok(())
}

fn load_samples(dir: &Path) -> CliResult<Vec<Sample>> {
    load_split(dir).map_err(|e| match e {
        CoreError::Io(io) => CliError::Data(format!("{}: {io}", dir.display())),
        other => CliError::from(other),
    })
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<Outcome> {
    let mut params = match &a.params {
        Some(p) => serde_json::from_str::<SceneParams>(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SceneParams::default(),
    };
    if let Some(p) = a.inverse_prob {
        params.inverse_prob = p;
    }
    if let Some(p) = a.mirrored_prob {
        params.mirrored_prob = p;
    }
    if a.rotation == RotationSet::TrainSet {
        params.rotations = TRAIN_ROTATIONS.to_vec();
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut scenes = generate_scenes(seed, a.scenes, &params)?;
    if a.rotation == RotationSet::RotTestSet {
        scenes = expand_rot_test_set(&scenes);
    }
    let samples: Vec<Sample> = scenes.into_iter().map(|s| s.into_sample()).collect();
    let out = &a.output.out;
    prepare_out_dir(out, a.output.force)?;
    ptdet_core::data::save_split(out, &samples)?;
    let instances: usize = samples.iter().map(|s| s.annotations.len()).sum();
    let inverse = samples
        .iter()
        .flat_map(|s| &s.annotations)
        .filter(|a| a.orientation == Orientation::Inverse)
        .count();
    println!(
        "wrote {} images with {instances} instances ({inverse} inverse) to {}",
        samples.len(),
        out.display()
    );
    Ok(Outcome {
        config: json!({ "scene": params, "scenes": a.scenes, "rotation": format!("{:?}", a.rotation) }),
        seed: Some(seed),
        inputs: a.params.iter().cloned().collect(),
        outputs: vec![out.clone()],
    })
}

pub fn canonicalize_cmd(a: &CanonicalizeArgs) -> CliResult<Outcome> {
    let mut file = AnnotationFile::load(&a.input)?;
    let mode: CanonicalMode = a.mode.into();
    let (mut moved, mut skipped) = (0usize, 0usize);
    for (i, rec) in file.annotations.iter_mut().enumerate() {
        let result = rec.polygon().and_then(|p| canonicalize(&p, mode));
        match result {
            Ok(p) => {
                let pts: Vec<[f64; 2]> = p.points().iter().map(|q| [q.x, q.y]).collect();
                if pts.first() != rec.points.first() {
                    moved += 1;
                }
                rec.points = pts;
            }
            Err(CoreError::Degenerate(msg)) => {
                eprintln!("warning: annotation {i} (image {}) skipped: {msg}", rec.image_id);
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let out = &a.output.out;
    check_out_file(out, a.output.force)?;
    write_atomic(out, file.to_json()?.as_bytes())?;
    println!(
        "canonicalized {} polygons: {moved} start points moved, {skipped} skipped as degenerate",
        file.annotations.len() - skipped
    );
    Ok(Outcome {
        config: json!({ "mode": mode }),
        seed: None,
        inputs: vec![a.input.clone()],
        outputs: vec![out.clone()],
    })
}

/// A training configuration merged from its file and the command-line flags.
pub struct ResolvedConfig {
    pub config: TrainConfig,
    pub source: Option<PathBuf>,
}

fn describe(v: &serde_json::Value) -> String {
    v.to_string()
}

/// Loads `--config` (if any) and applies flag overrides. A flag that
/// disagrees with a value the file sets explicitly is an error unless
/// `--allow-override` is given. The seed comes from the flag, then the
/// file, then the environment.
pub fn resolve_config(a: &ConfigArgs, paths: &[(&str, &str, Option<&PathBuf>)]) -> CliResult<ResolvedConfig> {
    let mut value = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<serde_json::Value>(&text).map_err(|e| {
                CliError::Usage(format!("{}: line {} column {}: {e}", p.display(), e.line(), e.column()))
            })?
        }
        None => json!({}),
    };
    if !value.is_object() {
        return Err(CliError::Usage("configuration must be a JSON object".into()));
    }
    let file_sets = |v: &serde_json::Value, ptr: &str| v.pointer(ptr).cloned();
    let source = a.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();

    let mut overrides: Vec<(&str, &str, serde_json::Value)> = Vec::new();
    if let Some(q) = a.query_mode {
        overrides.push(("/model/query_mode", "--query-mode", serde_json::to_value(ptdet_core::model::QueryMode::from(q))?));
    }
    if let Some(e) = a.efsa {
        overrides.push(("/model/efsa_mode", "--efsa", serde_json::to_value(ptdet_core::model::EfsaMode::from(e))?));
    }
    if let Some(l) = a.label_mode {
        overrides.push(("/label_mode", "--label-mode", serde_json::to_value(LabelMode::from(l))?));
    }
    if let Some(r) = a.rotation {
        overrides.push(("/rotation_augment", "--rotation", json!(r == Switch::On)));
    }
    if let Some(n) = a.iterations {
        overrides.push(("/iterations", "--iterations", json!(n)));
    }
    if let Some(s) = a.seed {
        overrides.push(("/seed", "--seed", json!(s)));
    }
    for (key, flag, path) in paths {
        if let Some(p) = path {
            overrides.push((key, flag, json!(p)));
        }
    }

    let mut conflicts = Vec::new();
    for (ptr, flag, v) in &overrides {
        if let Some(old) = file_sets(&value, ptr) {
            if &old != v && !a.allow_override {
                conflicts.push(format!(
                    "{}: config file {source} sets {}, flag {flag} sets {}",
                    &ptr[1..],
                    describe(&old),
                    describe(v)
                ));
            }
        }
    }
    if !conflicts.is_empty() {
        return Err(CliError::Usage(format!(
            "configuration conflicts (pass --allow-override to let flags win):\n  {}",
            conflicts.join("\n  ")
        )));
    }

    let decay_explicit = value.pointer("/lr_decay_step").is_some();
    let seed_explicit = value.pointer("/seed").is_some();
    for (ptr, _, v) in overrides {
        set_pointer(&mut value, ptr, v);
    }
    if a.seed.is_none() && !seed_explicit {
        if let Some(s) = env_seed()? {
            set_pointer(&mut value, "/seed", json!(s));
        }
    }
    let mut config: TrainConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    if let (Some(n), false) = (a.iterations, decay_explicit) {
        config.lr_decay_step = n * 4 / 5;
    }
    config.validate()?;
    Ok(ResolvedConfig { config, source: a.config.clone() })
}

fn set_pointer(root: &mut serde_json::Value, ptr: &str, v: serde_json::Value) {
    let mut cur = root;
    let parts: Vec<&str> = ptr[1..].split('/').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().expect("configuration objects");
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), v);
            return;
        }
        cur = obj.entry((*part).to_string()).or_insert_with(|| json!({}));
    }
}

fn to_base(samples: &[Sample], n: usize) -> CliResult<Vec<BaseSample>> {
    Ok(samples.iter().map(|s| BaseSample::new(s, n)).collect::<Result<_, _>>()?)
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<Outcome> {
    let resolved = resolve_config(
        &a.config,
        &[("/train_data", "--train-data", a.train_data.as_ref()), ("/eval_data", "--eval-data", a.eval_data.as_ref())],
    )?;
    let cfg = resolved.config;
    let train_dir = cfg.train_data.clone().ok_or_else(|| CliError::Usage("no training data: pass --train-data".into()))?;
    let eval_dir = cfg.eval_data.clone().ok_or_else(|| CliError::Usage("no evaluation data: pass --eval-data".into()))?;
    let (size, n) = (cfg.model.image_size, cfg.model.num_points);
    let data = TrainData {
        train: to_base(&load_samples(&train_dir)?, n)?,
        eval: prepare_all(&load_samples(&eval_dir)?, size, n, cfg.label_mode)?,
        eval_split: "eval".into(),
    };
    let out = &a.output.out;
    prepare_out_dir(out, a.output.force)?;
    write_atomic(&out.join("config.json"), format!("{}\n", serde_json::to_string_pretty(&cfg)?).as_bytes())?;
    let outcome = train(&cfg, &data, Some(out))?;
    for r in &outcome.curve {
        println!(
            "iteration {:>6}  P {:.4}  R {:.4}  F {:.4}  loss {:.4}",
            r.iteration, r.precision, r.recall, r.f_measure, r.loss_total
        );
    }
    println!("best F {:.4} at iteration {}", outcome.curve.iter().map(|r| r.f_measure).fold(0.0, f64::max), outcome.best_iteration);
    let mut inputs = vec![train_dir, eval_dir];
    inputs.extend(resolved.source);
    Ok(Outcome { config: serde_json::to_value(&cfg)?, seed: Some(cfg.seed), inputs, outputs: vec![out.clone()] })
}

pub fn eval_cmd(a: &EvalArgs) -> CliResult<Outcome> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = ckpt.model;
    let settings = EvalSettings {
        score_threshold: a.score_threshold,
        iou_threshold: a.iou_threshold,
        iou_resolution: a.iou_resolution,
        ..EvalSettings::default()
    };
    settings.validate()?;
    let label: LabelMode = a.label_mode.into();
    let data = prepare_all(&load_samples(&a.data)?, model.config.image_size, model.config.num_points, label)?;
    let report = evaluate(&model, &data, &LossWeights::default(), &settings)?;
    let s = report.score;
    println!(
        "precision {:.4} recall {:.4} f_measure {:.4} ({} matched, {} detections, {} ground truth) loss {:.4}",
        s.precision,
        s.recall,
        s.f_measure,
        report.counts.true_positives,
        report.counts.predictions,
        report.counts.ground_truths,
        report.loss.total
    );
    let body = json!({
        "checkpoint": a.checkpoint,
        "data": a.data,
        "label_mode": label,
        "settings": settings,
        "counts": report.counts,
        "precision": s.precision,
        "recall": s.recall,
        "f_measure": s.f_measure,
        "loss": report.loss,
    });
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        check_out_file(out, a.force)?;
        write_atomic(out, format!("{}\n", serde_json::to_string_pretty(&body)?).as_bytes())?;
        outputs.push(out.clone());
    }
    Ok(Outcome {
        config: json!({ "label_mode": label, "settings": settings }),
        seed: None,
        inputs: vec![a.checkpoint.clone(), a.data.clone()],
        outputs,
    })
}

pub fn ablate_cmd(a: &AblateArgs) -> CliResult<Outcome> {
    let c = &a.config;
    if c.query_mode.is_some() || c.efsa.is_some() || c.label_mode.is_some() || c.rotation.is_some() {
        return Err(CliError::Usage(
            "--query-mode, --efsa, --label-mode and --rotation are set per row by the ablation grid".into(),
        ));
    }
    let resolved = resolve_config(c, &[])?;
    let mut grid = default_grid();
    if !a.only.is_empty() {
        let names: Vec<String> = grid.iter().map(|g| g.name()).collect();
        if let Some(bad) = a.only.iter().find(|o| !names.contains(o)) {
            return Err(CliError::Usage(format!("unknown configuration {bad:?}; the grid has: {}", names.join(", "))));
        }
        grid.retain(|g| a.only.contains(&g.name()));
    }
    let splits = AblationSplits {
        train: load_samples(&a.train_data)?,
        normal: load_samples(&a.normal_data)?,
        rotated: load_samples(&a.rotated_data)?,
        inverse: load_samples(&a.inverse_data)?,
    };
    let out = &a.output.out;
    prepare_out_dir(out, a.output.force)?;
    let report = ablate(&resolved.config, &grid, &a.seeds, &splits, Some(out))?;
    print!("{}", report.to_text());
    let mut inputs = vec![a.train_data.clone(), a.normal_data.clone(), a.rotated_data.clone(), a.inverse_data.clone()];
    inputs.extend(resolved.source);
    Ok(Outcome {
        config: json!({
            "base": resolved.config,
            "grid": grid,
            "seeds": a.seeds,
        }),
        seed: Some(resolved.config.seed),
        inputs,
        outputs: vec![out.clone()],
    })
}

/// Registered op and layer cases, in report order.
pub fn gradcheck_cases() -> Vec<GradCase> {
    let mut cases = registry();
    cases.extend(layer_cases());
    cases
}

pub fn gradcheck_names() -> Vec<String> {
    let mut names: Vec<String> = gradcheck_cases().into_iter().map(|c| c.name).collect();
    names.push(FULL_MODEL_CASE.into());
    names
}

pub fn gradcheck_cmd(a: &GradcheckArgs) -> CliResult<Outcome> {
    let names = gradcheck_names();
    let unknown = |n: &String| !names.contains(n);
    let all = a.ops.iter().any(|o| o == "all");
    if let Some(bad) = a.ops.iter().filter(|o| *o != "all").find(|o| unknown(o)) {
        return Err(CliError::Usage(format!("unknown op {bad:?}; registered: {}", names.join(", "))));
    }
    if let Some(f) = &a.inject_fault {
        if unknown(f) || f == FULL_MODEL_CASE {
            return Err(CliError::Usage(format!("cannot inject a fault into {f:?}; registered ops: {}", names[..names.len() - 1].join(", "))));
        }
    }
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let base = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| derive_seed(base, i)).collect();
    let wanted = |n: &str| all || a.ops.iter().any(|o| o == n);

    let cases: Vec<GradCase> = gradcheck_cases()
        .into_iter()
        .filter(|c| wanted(&c.name))
        .map(|c| if a.inject_fault.as_deref() == Some(c.name.as_str()) { c.corrupted() } else { c })
        .collect();
    let mut rows: Vec<(String, f64, f64, bool, Option<String>)> = run_cases(&cases, &seeds, DEFAULT_STEP, a.tolerance)
        .into_iter()
        .map(|r| (r.name, r.max_rel_err, a.tolerance, r.passed, r.error))
        .collect();
    if wanted(FULL_MODEL_CASE) {
        let mut worst = 0.0f64;
        let mut error = None;
        for &s in &seeds {
            match full_model_gradcheck(s, DEFAULT_STEP) {
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let passed = error.is_none() && worst < a.model_tolerance;
        rows.push((FULL_MODEL_CASE.into(), worst, a.model_tolerance, passed, error));
    }

    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for (name, err, tol, passed, error) in &rows {
        let status = if *passed { "PASS" } else { "FAIL" };
        match error {
            Some(e) => println!("{name:<width$}  {status}  error: {e}"),
            None => println!("{name:<width$}  {status}  max_rel_err {err:.3e}  (tolerance {tol:.0e})"),
        }
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.3).map(|r| r.0.as_str()).collect();
    println!("{} checked over {} seeds, {} failed", rows.len(), seeds.len(), failed.len());

    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        check_out_file(out, a.force)?;
        let body: Vec<serde_json::Value> = rows
            .iter()
            .map(|(name, err, tol, passed, error)| {
                json!({ "name": name, "max_rel_err": err, "tolerance": tol, "passed": passed, "error": error })
            })
            .collect();
        write_atomic(out, format!("{}\n", serde_json::to_string_pretty(&body)?).as_bytes())?;
        outputs.push(out.clone());
    }
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("gradient check failed for {}", failed.join(", "))));
    }
    Ok(Outcome {
        config: json!({ "ops": a.ops, "seeds": a.seeds, "tolerance": a.tolerance, "model_tolerance": a.model_tolerance, "inject_fault": a.inject_fault }),
        seed: Some(base),
        inputs: Vec::new(),
        outputs,
    })
}
