//! Cross-validated training, evaluation and ablation sweeps.

mod folds;
mod metrics;

pub use folds::{make_folds, FoldPlan};
pub use metrics::{
    accuracy_percent, binary_metrics, f1_score, metrics_csv, rank_auc, summary_table, FoldMetrics,
    MeanStd, MetricsReport, METRICS_CSV_HEADER,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::connectome::Matrix;
use crate::dataset::{Manifest, PreparedSubject};
use crate::error::{LuminaError, Result};
use crate::model::{AblationSwitches, HyperParams, Lumina, Variant};
use crate::numerics::{AdamWConfig, AdamWState, Objective};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub switches: AblationSwitches,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    /// Subjects per step; 0 means the whole training set.
    pub batch_size: usize,
    pub k_folds: usize,
    pub seed: u64,
    /// Worker threads for per-subject gradients; 0 runs on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            switches: AblationSwitches::default(),
            optimizer: AdamWConfig::default(),
            epochs: 200,
            batch_size: 0,
            k_folds: 5,
            seed: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        let o = &self.optimizer;
        let ok = o.lr >= 0.0
            && o.weight_decay >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0;
        if !ok {
            return Err(LuminaError::InvalidInput(format!("invalid optimizer settings {o:?}")));
        }
        if self.k_folds < 2 {
            return Err(LuminaError::InvalidInput("k_folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn with_switches(&self, switches: AblationSwitches) -> Self {
        Self {
            switches,
            ..self.clone()
        }
    }
}

/// Everything a finished fold produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last epoch.
    pub model: Lumina,
    pub optimizer: AdamWState,
    /// Model at the epoch with the highest validation accuracy (earliest wins).
    pub best_model: Lumina,
    pub best_epoch: usize,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Validation metrics of the final model.
    pub metrics: FoldMetrics,
    /// Validation metrics of the best model.
    pub best_metrics: FoldMetrics,
}

fn common_rois(subjects: &[PreparedSubject]) -> Result<usize> {
    let n = subjects
        .first()
        .ok_or_else(|| LuminaError::InvalidInput("empty training set".into()))?
        .n_rois();
    if let Some(s) = subjects.iter().find(|s| s.n_rois() != n) {
        return Err(LuminaError::ConfigMismatch(format!(
            "subject {} has {} ROIs, expected {n}",
            s.subject_id,
            s.n_rois()
        )));
    }
    Ok(n)
}

fn divergence(epoch: usize) -> impl Fn(LuminaError) -> LuminaError {
    move |e| match e {
        LuminaError::NonFiniteInput(_) | LuminaError::NonFiniteGradient(_) => {
            LuminaError::DivergenceDetected { epoch }
        }
        other => other,
    }
}

/// Mean loss and mean gradient over `batch`, reduced in batch order.
fn batch_gradient(
    model: &Lumina,
    params: &[Matrix],
    batch: &[&PreparedSubject],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Vec<Matrix>)> {
    let one = |s: &&PreparedSubject| model.loss_and_grads(params, s.r.as_matrix(), &s.quad, s.label as usize);
    let per_subject: Vec<Result<(f64, Vec<Matrix>)>> = match pool {
        Some(pool) => pool.install(|| batch.par_iter().map(one).collect()),
        None => batch.iter().map(one).collect(),
    };
    let mut loss = 0.0;
    let mut grads: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.dim())).collect();
    for result in per_subject {
        let (l, g) = result?;
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        *g *= scale;
    }
    Ok((loss * scale, grads))
}

/// Train one model on `train`, tracking validation accuracy on `val`.
pub fn train_fold(train: &[PreparedSubject], val: &[PreparedSubject], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = common_rois(train)?;
    let mut model = Lumina::init(cfg.hp.clone(), cfg.switches, n, cfg.seed)?;
    let mut opt = AdamWState::new(cfg.optimizer, model.params.values());
    let pool = match cfg.threads {
        0 => None,
        t => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| LuminaError::InvalidInput(format!("thread pool: {e}")))?,
        ),
    };
    let batch_size = match cfg.batch_size {
        0 => train.len(),
        b => b.min(train.len()),
    };
    let mut shuffle = rng_for(cfg.seed, "batches");
    let mut order: Vec<usize> = (0..train.len()).collect();

    let initial = if val.is_empty() { None } else { Some(evaluate(&model, val)?) };
    let mut best = (initial.map(|m| m.accuracy), 0, model.clone(), initial);
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if batch_size < train.len() {
            order.shuffle(&mut shuffle);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&PreparedSubject> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) =
                batch_gradient(&model, model.params.values(), &batch, pool.as_ref()).map_err(divergence(epoch))?;
            if !loss.is_finite() {
                return Err(LuminaError::DivergenceDetected { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(model.params.values_mut(), &grads)?;
            if model.params.values().iter().any(|p| p.iter().any(|x| !x.is_finite())) {
                return Err(LuminaError::DivergenceDetected { epoch });
            }
        }
        loss_history.push(epoch_loss / train.len() as f64);
        if !val.is_empty() {
            let m = evaluate(&model, val).map_err(divergence(epoch))?;
            if best.0.map_or(true, |b| m.accuracy > b) {
                best = (Some(m.accuracy), epoch, model.clone(), Some(m));
            }
        }
    }

    let metrics = if val.is_empty() {
        binary_metrics(&[], &[])
    } else {
        evaluate(&model, val)?
    };
    let (_, best_epoch, best_model, best_metrics) = best;
    Ok(TrainOutcome {
        best_metrics: best_metrics.unwrap_or(metrics),
        model,
        optimizer: opt,
        best_model,
        best_epoch,
        loss_history,
        metrics,
    })
}

/// Class-1 probability for every subject.
pub fn predict(model: &Lumina, subjects: &[PreparedSubject]) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| {
            if s.n_rois() != model.n_rois {
                return Err(LuminaError::ConfigMismatch(format!(
                    "model expects {} ROIs, subject {} has {}",
                    model.n_rois,
                    s.subject_id,
                    s.n_rois()
                )));
            }
            model.positive_probability(s.r.as_matrix(), &s.quad)
        })
        .collect()
}

pub fn evaluate(model: &Lumina, subjects: &[PreparedSubject]) -> Result<FoldMetrics> {
    let scores = predict(model, subjects)?;
    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    Ok(binary_metrics(&scores, &labels))
}

/// Subjects aligned with manifest rows, split by fold.
fn split(subjects: &[PreparedSubject], plan: &FoldPlan, f: usize) -> (Vec<PreparedSubject>, Vec<PreparedSubject>) {
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| subjects[i].clone()).collect::<Vec<_>>();
    (pick(plan.train_indices(f)), pick(plan.test_indices(f)))
}

/// Seed used for fold `f` of a run with master seed `seed`.
pub fn fold_seed(seed: u64, f: usize) -> u64 {
    derive_seed(seed, &format!("fold-{f}"))
}

/// Cross-validation outcome for one configuration.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub report: MetricsReport,
    pub outcomes: Vec<TrainOutcome>,
}

impl CvResult {
    /// Fold whose final model scored the highest held-out accuracy (earliest wins).
    pub fn best_fold(&self) -> usize {
        let mut best = 0;
        for (i, o) in self.outcomes.iter().enumerate() {
            if o.metrics.accuracy > self.outcomes[best].metrics.accuracy {
                best = i;
            }
        }
        best
    }
}

/// `subjects` must be in manifest order, matching `plan`.
pub fn cross_validate(subjects: &[PreparedSubject], plan: &FoldPlan, cfg: &TrainConfig) -> Result<CvResult> {
    if subjects.len() != plan.assignments.len() {
        return Err(LuminaError::InvalidInput(format!(
            "{} subjects but the fold plan covers {}",
            subjects.len(),
            plan.assignments.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let (train, test) = split(subjects, plan, f);
        let fold_cfg = TrainConfig {
            seed: fold_seed(cfg.seed, f),
            ..cfg.clone()
        };
        outcomes.push(train_fold(&train, &test, &fold_cfg)?);
    }
    Ok(CvResult {
        report: MetricsReport {
            variant: cfg.switches.key(),
            folds: outcomes.iter().map(|o| o.metrics).collect(),
        },
        outcomes,
    })
}

/// Baseline, w/o B/R, w/o D/L, w/o N/G and full, each over every fold.
pub fn ablation_sweep(subjects: &[PreparedSubject], plan: &FoldPlan, cfg: &TrainConfig) -> Result<Vec<MetricsReport>> {
    Variant::ALL
        .iter()
        .map(|v| Ok(cross_validate(subjects, plan, &cfg.with_switches(v.switches()))?.report))
        .collect()
}

/// Cross-entropy of one subject as a function of the model parameters.
pub struct SubjectLoss<'a> {
    pub model: &'a Lumina,
    pub subject: &'a PreparedSubject,
}

impl Objective for SubjectLoss<'_> {
    fn eval(&self, point: &[Matrix]) -> Result<f64> {
        Ok(self.eval_with_grad(point)?.0)
    }

    fn eval_with_grad(&self, point: &[Matrix]) -> Result<(f64, Vec<Matrix>)> {
        let s = self.subject;
        self.model.loss_and_grads(point, s.r.as_matrix(), &s.quad, s.label as usize)
    }
}

/// Folds for a manifest using the config's `k` and seed.
pub fn plan_for(manifest: &Manifest, cfg: &TrainConfig) -> Result<FoldPlan> {
    make_folds(manifest, cfg.k_folds, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::{prepare, TimeSeries};
    use crate::dataset::SubjectRecord;
    use rand::Rng;

    fn tiny_hp() -> HyperParams {
        HyperParams {
            d_in: 6,
            d_out: 6,
            d_hidden: 4,
            n_layers: 1,
            ..Default::default()
        }
    }

    fn subject(i: usize, label: u8, rng: &mut impl Rng) -> PreparedSubject {
        let ts = TimeSeries::new(Matrix::from_shape_fn((5, 12), |_| rng.random_range(-1.0..1.0)), None).unwrap();
        let (r, quad) = prepare(&ts).unwrap();
        PreparedSubject {
            subject_id: format!("s{i}"),
            label,
            site: "a".into(),
            r,
            quad,
        }
    }

    fn cohort(n: usize) -> Vec<PreparedSubject> {
        let mut rng = rng_for(5, "test-cohort");
        (0..n).map(|i| subject(i, (i % 2) as u8, &mut rng)).collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let data = cohort(6);
        let cfg = TrainConfig {
            hp: tiny_hp(),
            optimizer: AdamWConfig {
                lr: 0.0,
                ..Default::default()
            },
            epochs: 3,
            ..Default::default()
        };
        let out = train_fold(&data[..4], &data[4..], &cfg).unwrap();
        let init = Lumina::init(cfg.hp.clone(), cfg.switches, 5, cfg.seed).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.metrics, evaluate(&init, &data[4..]).unwrap());
    }

    #[test]
    fn same_seed_same_metrics_and_parameters() {
        let data = cohort(8);
        let cfg = TrainConfig {
            hp: tiny_hp(),
            epochs: 4,
            batch_size: 3,
            seed: 11,
            ..Default::default()
        };
        let a = train_fold(&data[..6], &data[6..], &cfg).unwrap();
        let b = train_fold(&data[..6], &data[6..], &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn threaded_gradients_match_sequential_bitwise() {
        let data = cohort(8);
        let cfg = TrainConfig {
            hp: tiny_hp(),
            epochs: 3,
            ..Default::default()
        };
        let seq = train_fold(&data[..6], &data[6..], &cfg).unwrap();
        let par = train_fold(&data[..6], &data[6..], &TrainConfig { threads: 2, ..cfg }).unwrap();
        assert_eq!(seq.model, par.model);
        assert_eq!(seq.optimizer, par.optimizer);
    }

    #[test]
    fn evaluate_is_pure() {
        let data = cohort(6);
        let model = Lumina::init(tiny_hp(), AblationSwitches::default(), 5, 2).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap(), evaluate(&model, &data).unwrap());
    }

    #[test]
    fn evaluate_rejects_foreign_roi_count() {
        let data = cohort(2);
        let model = Lumina::init(tiny_hp(), AblationSwitches::default(), 7, 2).unwrap();
        assert!(matches!(evaluate(&model, &data), Err(LuminaError::ConfigMismatch(_))));
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let data = cohort(4);
        let cfg = TrainConfig {
            hp: tiny_hp(),
            optimizer: AdamWConfig {
                lr: 1e300,
                ..Default::default()
            },
            epochs: 3,
            ..Default::default()
        };
        let err = train_fold(&data, &[], &cfg).unwrap_err();
        assert!(matches!(err, LuminaError::DivergenceDetected { .. }), "{err}");
    }

    #[test]
    fn sweep_has_five_variants_by_k_folds() {
        let data = cohort(10);
        let rows: Vec<SubjectRecord> = data
            .iter()
            .map(|s| SubjectRecord {
                subject_id: s.subject_id.clone(),
                path: "x.csv".into(),
                label: s.label,
                site: s.site.clone(),
            })
            .collect();
        let manifest = Manifest::new(rows, ".").unwrap();
        let cfg = TrainConfig {
            hp: tiny_hp(),
            epochs: 1,
            ..Default::default()
        };
        let plan = plan_for(&manifest, &cfg).unwrap();
        let reports = ablation_sweep(&data, &plan, &cfg).unwrap();
        let keys: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(keys, ["baseline", "no-br", "no-dl", "no-ng", "full"]);
        assert!(reports.iter().all(|r| r.folds.len() == 5));
        assert_eq!(metrics_csv(&reports).lines().count(), 1 + 25);
    }
}
