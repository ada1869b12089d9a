use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lumina_core::attribution::{cohort_attribution, top_edges, Target};
use lumina_core::connectome::{spectrum_report, Matrix};
use lumina_core::dataset::{cache_path, load_prepared, prepare_manifest, Manifest, PreparedSubject};
use lumina_core::io::{read_network_lookup, read_prepared, read_timeseries_csv, Checkpoint, NetworkLookup};
use lumina_core::model::Lumina;
use lumina_core::numerics::finite_difference_check;
use lumina_core::synth::{generate, write_dataset, SynthConfig};
use lumina_core::training::{
    ablation_sweep, cross_validate, fold_seed, metrics_csv, plan_for, summary_table, train_fold, FoldPlan,
    MetricsReport, SubjectLoss, TrainConfig,
};

use crate::config::{RunConfig, TargetKey};
use crate::error::CliError;
use crate::rundir::RunDir;

pub const CONFIG_ECHO: &str = "config.txt";

fn open(path: &Path, cfg: &RunConfig, force: bool) -> Result<RunDir, CliError> {
    let run = RunDir::open(path, force)?;
    run.write(CONFIG_ECHO, cfg.echo())?;
    Ok(run)
}

fn data_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.data
        .as_deref()
        .ok_or_else(|| CliError::Config("no dataset directory; pass --data DIR".into()))
}

fn manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    Ok(Manifest::load(&data_dir(cfg)?.join("manifest.csv"))?)
}

fn prepared_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    Ok(data_dir(cfg)?.join("prepared"))
}

fn prepared(cfg: &RunConfig, manifest: &Manifest) -> Result<Vec<PreparedSubject>, CliError> {
    let dir = prepared_dir(cfg)?;
    if !dir.is_dir() {
        return Err(CliError::MissingCache(format!(
            "no prepared cache at {}; run `lumina prepare --data {}` first",
            dir.display(),
            data_dir(cfg)?.display()
        )));
    }
    Ok(load_prepared(manifest, &dir)?)
}

fn folds_csv(plan: &FoldPlan) -> String {
    let mut s = String::from("subject_id,fold\n");
    for (id, f) in &plan.assignments {
        let _ = writeln!(s, "{id},{f}");
    }
    s
}

pub fn synth(cfg: &RunConfig, target: &Path, force: bool) -> Result<String, CliError> {
    let run = open(target, cfg, force)?;
    let subjects = generate(&cfg.synth)?;
    let m = write_dataset(run.path(), &subjects)?;
    Ok(format!(
        "wrote {} subjects ({} ROIs, {} time points, {} effect) to {}",
        m.len(),
        cfg.synth.n_rois,
        cfg.synth.n_timepoints,
        cfg.synth.effect,
        run.path().display()
    ))
}

pub fn prepare(cfg: &RunConfig, force: bool) -> Result<String, CliError> {
    let m = manifest(cfg)?;
    m.check_paths()?;
    let run = open(&prepared_dir(cfg)?, cfg, force)?;
    let subjects = prepare_manifest(&m, run.path())?;
    let n = subjects.first().map_or(0, PreparedSubject::n_rois);
    Ok(format!("prepared {} subjects (N = {n}) in {}", subjects.len(), run.path().display()))
}

pub fn train(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let m = manifest(cfg)?;
    let subjects = prepared(cfg, &m)?;
    let plan = plan_for(&m, &cfg.train)?;
    let run = open(out, cfg, force)?;
    let pick = |idx: Vec<usize>| -> Vec<PreparedSubject> { idx.into_iter().map(|i| subjects[i].clone()).collect() };
    let (train_set, val_set) = (pick(plan.train_indices(cfg.fold)), pick(plan.test_indices(cfg.fold)));
    let fold_cfg = TrainConfig {
        seed: fold_seed(cfg.train.seed, cfg.fold),
        ..cfg.train.clone()
    };
    let outcome = train_fold(&train_set, &val_set, &fold_cfg)?;

    Checkpoint {
        model: outcome.model.clone(),
        optimizer: Some(outcome.optimizer.clone()),
    }
    .save(&run.join("model.ckpt"))?;
    Checkpoint {
        model: outcome.best_model.clone(),
        optimizer: None,
    }
    .save(&run.join("best.ckpt"))?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        let _ = writeln!(loss, "{e},{l:.9e}");
    }
    run.write("loss.csv", loss)?;
    run.write("folds.csv", folds_csv(&plan))?;
    let report = MetricsReport {
        variant: cfg.train.switches.key(),
        folds: vec![outcome.metrics],
    };
    run.write("metrics.csv", metrics_csv(std::slice::from_ref(&report)))?;
    let mut text = report.to_text();
    let b = outcome.best_metrics;
    let _ = writeln!(
        text,
        "best_epoch: {}\nbest_accuracy: {:.6}\nbest_auc: {:.6}\nbest_f1: {:.6}",
        outcome.best_epoch, b.accuracy, b.auc, b.f1
    );
    run.write("metrics.txt", &text)?;
    Ok(format!(
        "trained {} on {} subjects, validated on fold {} ({} subjects): accuracy {:.2}%\nrun directory: {}",
        report.variant,
        train_set.len(),
        cfg.fold,
        val_set.len(),
        outcome.metrics.accuracy,
        run.path().display()
    ))
}

pub fn cv(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let m = manifest(cfg)?;
    let subjects = prepared(cfg, &m)?;
    let plan = plan_for(&m, &cfg.train)?;
    let run = open(out, cfg, force)?;
    let result = cross_validate(&subjects, &plan, &cfg.train)?;
    for (f, o) in result.outcomes.iter().enumerate() {
        Checkpoint {
            model: o.model.clone(),
            optimizer: None,
        }
        .save(&run.join(&format!("fold-{f}.ckpt")))?;
    }
    run.write("folds.csv", folds_csv(&plan))?;
    run.write("metrics.csv", metrics_csv(std::slice::from_ref(&result.report)))?;
    let mut text = result.report.to_text();
    let _ = writeln!(text, "best_fold: {}", result.best_fold());
    run.write("report.txt", &text)?;
    Ok(format!("{text}run directory: {}", run.path().display()))
}

pub fn ablate(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let m = manifest(cfg)?;
    let subjects = prepared(cfg, &m)?;
    let plan = plan_for(&m, &cfg.train)?;
    let run = open(out, cfg, force)?;
    let reports = ablation_sweep(&subjects, &plan, &cfg.train)?;
    run.write("folds.csv", folds_csv(&plan))?;
    run.write("metrics.csv", metrics_csv(&reports))?;
    let table = summary_table(&reports);
    let mut text = table.clone();
    for r in &reports {
        text.push('\n');
        text.push_str(&r.to_text());
    }
    run.write("report.txt", &text)?;
    Ok(format!("{table}run directory: {}", run.path().display()))
}

fn lookup_for(cfg: &RunConfig, m: &Manifest) -> Result<NetworkLookup, CliError> {
    if let Some(p) = &cfg.network_lookup {
        return Ok(read_network_lookup(p)?);
    }
    let mut lookup = NetworkLookup::default();
    if let Some(row) = m.rows.first() {
        let ts = read_timeseries_csv(&m.resolve(row))?;
        for (i, name) in ts.roi_names().unwrap_or_default().iter().enumerate() {
            lookup.insert(i, name.clone(), NetworkLookup::UNKNOWN);
        }
    }
    Ok(lookup)
}

fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.9e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn attribute(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let ckpt_path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Config("no checkpoint; pass --checkpoint FILE".into()))?;
    let model = Checkpoint::load(ckpt_path)?.model;
    let m = manifest(cfg)?;
    let mut subjects = prepared(cfg, &m)?;
    if let Some(id) = &cfg.subject {
        subjects.retain(|s| &s.subject_id == id);
        if subjects.is_empty() {
            return Err(CliError::Config(format!("subject {id:?} is not in the manifest")));
        }
    }
    let lookup = lookup_for(cfg, &m)?;
    let run = open(out, cfg, force)?;
    let target = match cfg.target {
        TargetKey::True => Target::TrueClass,
        TargetKey::Class(c) => Target::Class(c),
    };
    let cohort = cohort_attribution(&model, &subjects, cfg.ig_steps, target, cfg.train.threads)?;
    let edges = top_edges(&cohort.mean.ig, &cohort.mean_r, cfg.top_fraction, &lookup)?;
    run.write("edges.csv", edges.to_csv())?;
    run.write("ig_mean.csv", matrix_csv(&cohort.mean.ig))?;

    let mut text = String::new();
    let worst = cohort.completeness_errors.iter().fold(0.0f64, |a, &b| a.max(b));
    let _ = writeln!(text, "subjects: {}", subjects.len());
    let _ = writeln!(text, "steps: {}", cfg.ig_steps);
    let _ = writeln!(text, "target: {}", cfg.get("target"));
    let _ = writeln!(text, "baseline: {}", cohort.mean.baseline);
    let _ = writeln!(text, "edges: {}", edges.rows.len());
    let _ = writeln!(text, "max_completeness_error: {worst:.6e}");
    let _ = writeln!(text, "subject_id\tlabel\tcompleteness_error");
    for (s, e) in subjects.iter().zip(&cohort.completeness_errors) {
        let _ = writeln!(text, "{}\t{}\t{e:.6e}", s.subject_id, s.label);
    }
    run.write("attribution.txt", &text)?;
    Ok(format!(
        "attributed {} subjects with {} steps; {} edges written\nrun directory: {}",
        subjects.len(),
        cfg.ig_steps,
        edges.rows.len(),
        run.path().display()
    ))
}

pub fn spectra(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let m = manifest(cfg)?;
    let row = match &cfg.subject {
        Some(id) => m
            .rows
            .iter()
            .find(|r| &r.subject_id == id)
            .ok_or_else(|| CliError::Config(format!("subject {id:?} is not in the manifest")))?,
        None => m
            .rows
            .first()
            .ok_or_else(|| CliError::Config("manifest has no subjects".into()))?,
    };
    let cache = cache_path(&prepared_dir(cfg)?, &row.subject_id);
    if !cache.is_file() {
        return Err(CliError::MissingCache(format!(
            "no prepared cache {}; run `lumina prepare` first",
            cache.display()
        )));
    }
    let (_, quad) = read_prepared(&cache)?;
    let table = spectrum_report(&quad)?.to_table();
    let run = open(out, cfg, force)?;
    run.write("spectra.txt", format!("subject: {}\n{table}", row.subject_id))?;
    Ok(format!("subject: {}\n{table}run directory: {}", row.subject_id, run.path().display()))
}

pub fn gradcheck(cfg: &RunConfig, out: &Path, force: bool) -> Result<String, CliError> {
    let synth = SynthConfig {
        n_subjects: 2,
        n_rois: cfg.gradcheck_rois,
        n_timepoints: cfg.gradcheck_timepoints,
        ..cfg.synth.clone()
    };
    let subject = generate(&synth)?[0].prepare()?;
    let t = &cfg.train;
    let model = Lumina::init(t.hp.clone(), t.switches, cfg.gradcheck_rois, t.seed)?;
    let objective = SubjectLoss {
        model: &model,
        subject: &subject,
    };
    let report = finite_difference_check(
        &objective,
        model.params.values(),
        cfg.gradcheck_step,
        cfg.gradcheck_coords,
        t.seed,
    )?;
    let passed = report.passed(cfg.gradcheck_tolerance);
    let text = format!(
        "variant: {}\ncoords: {}\nstep: {:e}\nmax_rel_error: {:.6e}\ntolerance: {:e}\nstatus: {}\n",
        t.switches.key(),
        report.coords_checked,
        report.step,
        report.max_rel_error,
        cfg.gradcheck_tolerance,
        if passed { "PASS" } else { "FAIL" }
    );
    let run = open(out, cfg, force)?;
    run.write("gradcheck.txt", &text)?;
    if !passed {
        return Err(CliError::GradCheck(format!(
            "max relative error {:.3e} with step {:e} (tolerance {:e})",
            report.max_rel_error, report.step, cfg.gradcheck_tolerance
        )));
    }
    Ok(format!("{text}run directory: {}", run.path().display()))
}
