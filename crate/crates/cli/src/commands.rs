use std::fs;
use std::path::{Path, PathBuf};

use bsenergy::encoder::{EncodingPlan, PlanTemplate};
use bsenergy::evaluation::{
    evaluate, evaluate_predictions, paper_grid, parse_spec, run_ablation_with, write_report,
    write_results, AblationSpec, RunStatus,
};
use bsenergy::ingest::{
    join_challenge_layout, parse_canonical, read_manifest, split_by_manifest, write_canonical,
    write_manifest, ChallengeColumns,
};
use bsenergy::model::{write_embeddings_csv, EnergyModel};
use bsenergy::nn::AdamConfig;
use bsenergy::record::{Dataset, SplitManifest};
use bsenergy::selfcheck::{self, SelfCheckConfig};
use bsenergy::synthgen::{self, generate, write_ground_truth, SynthConfig};
use bsenergy::training::{prepare, train, write_history, TrainConfig};
use bsenergy::Error;

use crate::args::{
    AblateArgs, Command, DataArgs, EvalArgs, ExportArgs, GradcheckArgs, ImportArgs, RerunArgs,
    Subset, SynthArgs, TrainArgs, TrainingArgs,
};
use crate::error::CliError;
use crate::manifest::{sha256_file, RunManifest, FILE as MANIFEST};

pub const DATA: &str = "data.csv";
pub const SPLIT: &str = "split.csv";
pub const GROUND_TRUTH: &str = "ground_truth.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const PLAN: &str = "plan.sidecar";
pub const HISTORY: &str = "history.csv";
pub const REPORT: &str = "report.csv";
pub const EMBEDDINGS: &str = "embeddings.csv";

pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(command, a),
        Command::Import(a) => import(command, a),
        Command::Train(a) => train_cmd(command, a),
        Command::Eval(a) => eval(command, a),
        Command::Ablate(a) => ablate(command, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Export(a) => export(command, a),
        Command::Rerun(a) => rerun(a),
    }
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_data(
    args: &DataArgs,
    manifest: &mut RunManifest,
) -> Result<(Dataset, SplitManifest), CliError> {
    manifest.input("data", &args.data)?;
    manifest.input("manifest", &args.manifest)?;
    let data = parse_canonical(&args.data)?;
    let split = read_manifest(&args.manifest)?;
    Ok((data, split))
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch,
        mask_prob: t.mask_prob,
        mask_mode: t.mask_mode.into(),
        adam: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        seed: t.seed,
        selection: t.selection(),
        shuffle: true,
        timing: t.timing,
    }
}

fn synth(command: &Command, a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_bs: a.n_bs,
        n_rutypes: a.n_rutypes,
        days: a.days,
        cross_domain_fraction: a.cross_domain_fraction,
        noise_rel: a.noise,
        jitter: a.jitter,
        revisions: a.revisions,
        revision_spread: a.revision_spread,
        seed: a.seed,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    out_dir(&a.out)?;
    let (data, split, truth) = generate(&cfg)?;
    write_canonical(&data, a.out.join(DATA))?;
    write_manifest(&split, a.out.join(SPLIT))?;
    write_ground_truth(&truth, a.out.join(GROUND_TRUTH))?;
    let mut m = RunManifest::new(command, Some(a.seed));
    for name in [DATA, SPLIT, GROUND_TRUTH] {
        m.artifact(&a.out, name)?;
    }
    m.write(&a.out)?;
    println!(
        "{} records from {} stations ({} test-only) written to {}",
        data.len(),
        truth.stations.len(),
        split.test_cross_domain_ids.len(),
        a.out.display()
    );
    Ok(())
}

fn import(command: &Command, a: &ImportArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new(command, None);
    let columns = match &a.columns {
        Some(path) => {
            m.input("columns", path)?;
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => ChallengeColumns::default(),
    };
    m.input("bs_info", &a.bs_info)?;
    m.input("cell_data", &a.cell_data)?;
    m.input("energy_data", &a.energy_data)?;
    let (data, report) = join_challenge_layout(&a.bs_info, &a.cell_data, &a.energy_data, &columns)?;
    out_dir(&a.out)?;
    write_canonical(&data, a.out.join(DATA))?;
    m.artifact(&a.out, DATA)?;
    m.write(&a.out)?;
    println!(
        "{} records from {} stations written to {} ({} unmatched station-hours dropped)",
        data.len(),
        data.bs_ids().len(),
        a.out.join(DATA).display(),
        report.dropped
    );
    Ok(())
}

/// `--plan` as letters, `numerical`, or a JSON template file.
fn resolve_template(spec: &str, a: &TrainArgs) -> Result<PlanTemplate, CliError> {
    let mut template = match PlanTemplate::from_letters(spec, a.bsid.into()) {
        Ok(t) => t,
        Err(_) if Path::new(spec).is_file() => {
            let text = fs::read_to_string(spec).map_err(|e| Error::Io {
                path: spec.into(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: spec.into(),
                message: e.to_string(),
            })?
        }
        Err(_) => {
            return Err(CliError::Usage(format!(
            "--plan {spec:?} is neither a letter combination of a, b, f, `numerical`, nor a file"
        )))
        }
    };
    template.bsid_mode = a.bsid.into();
    Ok(template)
}

fn train_cmd(command: &Command, a: &TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&a.training);
    cfg.validate()?;
    let template = resolve_template(&a.plan, a)?;
    let mut m = RunManifest::new(command, Some(cfg.seed));
    if Path::new(&a.plan).is_file() {
        m.input("plan", Path::new(&a.plan))?;
    }
    let (data, split) = load_data(&a.data, &mut m)?;
    let (train_data, test_data) = split_by_manifest(&data, &split)?;
    out_dir(&a.out)?;

    let prepared = prepare(&template, &train_data, Some(&test_data), &cfg)?;
    let mut model_config = prepared.model_config.clone();
    model_config.hidden_dims = a.hidden.clone();
    model_config.arl_enabled = !a.no_arl;
    model_config.arl_bottleneck = a.bottleneck;
    let mut outcome = train(&prepared.fit, &prepared.selection, model_config, &cfg)?;
    outcome.model.attach_plan(PLAN, &prepared.plan);

    outcome.model.save(a.out.join(CHECKPOINT))?;
    prepared.plan.save_sidecar(a.out.join(PLAN))?;
    write_history(&outcome.history, a.out.join(HISTORY))?;
    for name in [CHECKPOINT, PLAN, HISTORY] {
        m.artifact(&a.out, name)?;
    }
    m.write(&a.out)?;

    let best = outcome.best();
    println!(
        "dim {} params {} | best epoch {} of {}: train {:.4}% selection {:.4}%",
        prepared.plan.dimension(),
        outcome.model.parameter_count(),
        best.epoch,
        outcome.history.len(),
        100.0 * best.train_mape,
        100.0 * best.selection_mape
    );
    Ok(())
}

/// The plan recorded beside a checkpoint, unless one is given explicitly.
fn plan_for(
    model: &EnergyModel,
    checkpoint: &Path,
    explicit: Option<&PathBuf>,
) -> Result<PathBuf, CliError> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    let recorded = model
        .plan_reference()
        .ok_or_else(|| CliError::Usage("checkpoint records no plan; pass --plan".into()))?;
    Ok(checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join(&recorded.file))
}

fn eval(command: &Command, a: &EvalArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new(command, None);
    let (data, split) = load_data(&a.data, &mut m)?;
    let (train_data, test_data) = split_by_manifest(&data, &split)?;
    let subset = match a.subset {
        Subset::Test => test_data,
        Subset::Train => train_data,
    };
    subset.ensure_non_empty()?;

    let report = if let Some(truth_path) = &a.oracle {
        m.input("oracle", truth_path)?;
        let truth = synthgen::read_ground_truth(truth_path)?;
        let predictions = subset
            .records
            .iter()
            .map(|r| synthgen::oracle_energy(&truth, r))
            .collect::<Result<Vec<_>, _>>()?;
        evaluate_predictions(&subset.records, &predictions, &split)?
    } else {
        let checkpoint = a
            .checkpoint
            .as_ref()
            .expect("clap requires --checkpoint without --oracle");
        m.input("checkpoint", checkpoint)?;
        let model = EnergyModel::load(checkpoint)?;
        let plan_path = plan_for(&model, checkpoint, a.plan.as_ref())?;
        m.input("plan", &plan_path)?;
        let plan = EncodingPlan::load_sidecar(&plan_path)?;
        evaluate(&model, &plan, &subset, &split)?
    };
    out_dir(&a.out)?;
    write_report(&report, a.out.join(REPORT))?;
    m.artifact(&a.out, REPORT)?;
    m.write(&a.out)?;
    println!("{report}");
    Ok(())
}

fn ablate(command: &Command, a: &AblateArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new(command, Some(a.training.seed));
    let runs = if a.spec == "paper-grid" {
        paper_grid()
    } else {
        let path = Path::new(&a.spec);
        m.input("spec", path)?;
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        parse_spec(&text)?
    };
    let spec = AblationSpec {
        runs,
        train: train_config(&a.training),
    };
    spec.validate()?;
    let (data, split) = load_data(&a.data, &mut m)?;
    let (train_data, test_data) = split_by_manifest(&data, &split)?;
    out_dir(&a.out)?;

    let total = spec.runs.len();
    let mut done = 0;
    let rows = run_ablation_with(&spec, &train_data, &test_data, &split, |row| {
        done += 1;
        match (&row.status, &row.report) {
            (RunStatus::Ok, Some(r)) => eprintln!("[{done}/{total}] {:<16} {r}", row.name),
            (RunStatus::Failed(msg), _) => {
                eprintln!("[{done}/{total}] {:<16} failed: {msg}", row.name)
            }
            _ => {}
        }
    })?;
    write_results(&rows, a.out.join(REPORT))?;
    m.artifact(&a.out, REPORT)?;
    m.write(&a.out)?;

    let ok = rows.iter().filter(|r| r.status == RunStatus::Ok).count();
    println!(
        "{ok} of {} runs succeeded; results in {}",
        rows.len(),
        a.out.join(REPORT).display()
    );
    if ok == 0 {
        return Err(Error::Config("no ablation run succeeded".into()).into());
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = SelfCheckConfig {
        seeds: (0..a.seeds).collect(),
        tolerance: a.tolerance,
        inject_fault: a.inject_fault,
    };
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let outcomes = selfcheck::run(&cfg)?;
    let mut failed = Vec::new();
    for name in selfcheck::CHECKS {
        let mine: Vec<_> = outcomes.iter().filter(|o| o.name == name).collect();
        let worst = mine
            .iter()
            .map(|o| o.report.max_rel_error())
            .fold(0.0, f64::max);
        let bad: Vec<u64> = mine
            .iter()
            .filter(|o| !o.passed())
            .map(|o| o.seed)
            .collect();
        println!(
            "{name:<12} seeds={} max_rel_err={worst:.3e} {}",
            mine.len(),
            if bad.is_empty() {
                "ok".to_string()
            } else {
                format!("FAIL (seeds {bad:?})")
            }
        );
        for o in &mine {
            if a.verbose || !o.passed() {
                println!("  seed {}:\n{}", o.seed, indent(&o.report.to_string()));
            }
        }
        if !bad.is_empty() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("PASS at tolerance {:e}", a.tolerance);
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed at tolerance {:e}: {}",
            a.tolerance,
            failed.join(", ")
        )))
    }
}

fn indent(s: &str) -> String {
    s.lines()
        .map(|l| format!("    {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn export(command: &Command, a: &ExportArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new(command, None);
    m.input("checkpoint", &a.checkpoint)?;
    let model = EnergyModel::load(&a.checkpoint)?;
    let plan_path = plan_for(&model, &a.checkpoint, a.plan.as_ref())?;
    m.input("plan", &plan_path)?;
    let plan = EncodingPlan::load_sidecar(&plan_path)?;
    model.check_plan(&plan)?;
    let rows = model.export_embeddings(&plan)?;
    out_dir(&a.out)?;
    write_embeddings_csv(&rows, a.out.join(EMBEDDINGS))?;
    m.artifact(&a.out, EMBEDDINGS)?;
    m.write(&a.out)?;
    println!(
        "{} embedding rows written to {}",
        rows.len(),
        a.out.join(EMBEDDINGS).display()
    );
    Ok(())
}

fn set_out(command: &mut Command, out: PathBuf) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => a.out = out,
        Command::Import(a) => a.out = out,
        Command::Train(a) => a.out = out,
        Command::Eval(a) => a.out = out,
        Command::Ablate(a) => a.out = out,
        Command::Export(a) => a.out = out,
        Command::Gradcheck(_) | Command::Rerun(_) => {
            return Err(CliError::Usage(
                "this command writes no run directory".into(),
            ))
        }
    }
    Ok(())
}

fn out_of(command: &Command) -> Option<&Path> {
    match command {
        Command::Synth(a) => Some(&a.out),
        Command::Import(a) => Some(&a.out),
        Command::Train(a) => Some(&a.out),
        Command::Eval(a) => Some(&a.out),
        Command::Ablate(a) => Some(&a.out),
        Command::Export(a) => Some(&a.out),
        Command::Gradcheck(_) | Command::Rerun(_) => None,
    }
}

/// Replays a manifest and compares every recorded digest.
fn rerun(a: &RerunArgs) -> Result<(), CliError> {
    let recorded = RunManifest::read(&a.manifest)?;
    let mut command = recorded.command.clone();
    if let Some(out) = &a.out {
        set_out(&mut command, out.clone())?;
    }
    for (role, path, digest) in &recorded.inputs {
        if &sha256_file(path)? != digest {
            return Err(CliError::CheckFailed(format!(
                "input {role} ({}) changed since the recorded run",
                path.display()
            )));
        }
    }
    run(&command)?;
    let dir = out_of(&command).expect("manifests come from commands with an output directory");
    let mut mismatched = Vec::new();
    for (name, digest) in &recorded.artifacts {
        if &sha256_file(&dir.join(name))? != digest {
            mismatched.push(name.as_str());
        }
    }
    if mismatched.is_empty() {
        println!(
            "reproduced {} artifacts identically",
            recorded.artifacts.len()
        );
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "artifacts differ from {}: {}",
            MANIFEST,
            mismatched.join(", ")
        )))
    }
}
