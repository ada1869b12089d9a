//! Integrated gradients over the connectivity input and ranked edge reports.
//!
//! The integrand rebuilds the priors from the scaled input on the tape, so
//! the path gradient passes through the bipolar split and normalization.
//! Baseline is the zero matrix; the path integral is a right-endpoint
//! Riemann sum over `m` steps.

use rayon::prelude::*;

use crate::connectome::Matrix;
use crate::dataset::PreparedSubject;
use crate::error::{LuminaError, Result};
use crate::io::NetworkLookup;
use crate::model::{Lumina, PriorSource};
use crate::numerics::Tape;

pub const MIN_STEPS: usize = 16;

/// Raw path integral before any post-processing.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIntegral {
    /// `(x - x') * mean_t grad F(x' + t/m (x - x'))`.
    pub ig: Matrix,
    pub f_input: f64,
    pub f_baseline: f64,
}

impl PathIntegral {
    /// `|sum IG - (F(x) - F(x'))| / |F(x) - F(x')|`.
    pub fn completeness_error(&self) -> f64 {
        let delta = self.f_input - self.f_baseline;
        (self.ig.sum() - delta).abs() / delta.abs()
    }
}

/// IG of any differentiable scalar function. `f` returns the value and the
/// gradient at a point.
pub fn integrated_gradients_with<F>(x: &Matrix, baseline: &Matrix, steps: usize, f: F) -> Result<PathIntegral>
where
    F: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    if steps < MIN_STEPS {
        return Err(LuminaError::InvalidInput(format!("need at least {MIN_STEPS} IG steps, got {steps}")));
    }
    if x.dim() != baseline.dim() {
        return Err(LuminaError::ShapeMismatch {
            op: "integrated_gradients",
            left: x.shape().to_vec(),
            right: baseline.shape().to_vec(),
        });
    }
    let diff = x - baseline;
    let mut acc = Matrix::zeros(x.dim());
    let mut f_input = 0.0;
    for t in 1..=steps {
        let alpha = t as f64 / steps as f64;
        let point = baseline + &(&diff * alpha);
        let (value, grad) = f(&point)?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(LuminaError::NonFiniteGradient(format!("IG step {t}: {bad}")));
        }
        acc += &grad;
        if t == steps {
            f_input = value;
        }
    }
    let (f_baseline, _) = f(baseline)?;
    Ok(PathIntegral {
        ig: diff * acc / steps as f64,
        f_input,
        f_baseline,
    })
}

/// Logit `class` and its gradient with respect to the connectivity input.
pub fn logit_and_input_gradient(model: &Lumina, r: &Matrix, class: usize) -> Result<(f64, Matrix)> {
    if class >= model.hp.n_classes {
        return Err(LuminaError::InvalidInput(format!("class {class} out of range")));
    }
    let mut tape = Tape::new();
    let x = tape.param(r.clone());
    let trace = model.forward_on_tape(&mut tape, model.params.values(), x, PriorSource::FromInput)?;
    let out = tape.element(trace.logits, 0, class)?;
    let grads = tape.backward(out)?;
    Ok((tape.scalar(out), grads.wrt(x)))
}

/// Which logit to attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Each subject's own label.
    TrueClass,
    /// A fixed class for every subject.
    Class(usize),
}

impl Target {
    fn class_for(self, label: u8) -> usize {
        match self {
            Target::TrueClass => label as usize,
            Target::Class(c) => c,
        }
    }
}

/// Post-processed attribution for one subject or a cohort mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `(IG + IG^T) / 2` with a zero diagonal.
    pub ig: Matrix,
    /// The unprocessed path integral (sum of single-subject maps for cohorts).
    pub raw: Matrix,
    pub baseline: &'static str,
    pub steps: usize,
    pub target: Target,
}

/// Symmetrize and zero the diagonal.
pub fn symmetrize(raw: &Matrix) -> Matrix {
    let mut s = (raw + &raw.t()) / 2.0;
    s.diag_mut().fill(0.0);
    s
}

/// IG of `model` for one connectivity matrix, zero baseline.
pub fn integrated_gradients(model: &Lumina, r: &Matrix, class: usize, steps: usize) -> Result<(AttributionMap, PathIntegral)> {
    if r.dim() != (model.n_rois, model.n_rois) {
        return Err(LuminaError::ConfigMismatch(format!(
            "model expects {n}x{n} input, got {:?}",
            r.shape(),
            n = model.n_rois
        )));
    }
    let path = integrated_gradients_with(r, &Matrix::zeros(r.dim()), steps, |p| {
        logit_and_input_gradient(model, p, class)
    })?;
    let map = AttributionMap {
        ig: symmetrize(&path.ig),
        raw: path.ig.clone(),
        baseline: "zero",
        steps,
        target: Target::Class(class),
    };
    Ok((map, path))
}

/// Elementwise mean of per-subject maps plus the cohort-mean connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortAttribution {
    pub mean: AttributionMap,
    pub mean_r: Matrix,
    pub subject_maps: Vec<AttributionMap>,
    /// Completeness error of each subject's path integral.
    pub completeness_errors: Vec<f64>,
}

pub fn cohort_attribution(
    model: &Lumina,
    subjects: &[PreparedSubject],
    steps: usize,
    target: Target,
    threads: usize,
) -> Result<CohortAttribution> {
    let n = model.n_rois;
    if subjects.is_empty() {
        return Err(LuminaError::InvalidInput("empty cohort".into()));
    }
    let one = |s: &PreparedSubject| {
        integrated_gradients(model, s.r.as_matrix(), target.class_for(s.label), steps)
            .map(|(m, p)| (m, p.completeness_error()))
    };
    let results: Vec<(AttributionMap, f64)> = if threads == 0 {
        subjects.iter().map(one).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| LuminaError::InvalidInput(format!("thread pool: {e}")))?
            .install(|| subjects.par_iter().map(one).collect::<Result<_>>())?
    };
    let (maps, completeness_errors): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut sum_ig = Matrix::zeros((n, n));
    let mut sum_raw = Matrix::zeros((n, n));
    let mut sum_r = Matrix::zeros((n, n));
    for (m, s) in maps.iter().zip(subjects) {
        sum_ig += &m.ig;
        sum_raw += &m.raw;
        sum_r += s.r.as_matrix();
    }
    let count = subjects.len() as f64;
    Ok(CohortAttribution {
        mean: AttributionMap {
            ig: sum_ig / count,
            raw: sum_raw / count,
            baseline: "zero",
            steps,
            target,
        },
        mean_r: sum_r / count,
        subject_maps: maps,
        completeness_errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub rank: usize,
    pub a: usize,
    pub b: usize,
    pub roi_a: String,
    pub roi_b: String,
    pub network_a: String,
    pub network_b: String,
    pub r_value: f64,
    pub ig_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReport {
    pub rows: Vec<EdgeRow>,
}

pub const EDGE_CSV_HEADER: [&str; 7] = ["rank", "roi_a", "roi_b", "network_a", "network_b", "r_value", "ig_value"];

/// Number of upper-triangle edges in the top `fraction`, rounded to nearest
/// and at least one.
pub fn top_edge_count(n_rois: usize, fraction: f64) -> usize {
    let total = n_rois * n_rois.saturating_sub(1) / 2;
    ((fraction * total as f64).round() as usize).clamp(1, total.max(1))
}

/// Rank upper-triangle edges by `|ig|` descending, ties by `(a, b)`.
pub fn top_edges(ig: &Matrix, r: &Matrix, fraction: f64, lookup: &NetworkLookup) -> Result<EdgeReport> {
    let n = ig.nrows();
    if ig.dim() != (n, n) || r.dim() != (n, n) {
        return Err(LuminaError::ShapeMismatch {
            op: "top_edges",
            left: ig.shape().to_vec(),
            right: r.shape().to_vec(),
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LuminaError::InvalidInput(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut edges: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    edges.sort_by(|&(a1, b1), &(a2, b2)| {
        ig[[a2, b2]]
            .abs()
            .total_cmp(&ig[[a1, b1]].abs())
            .then((a1, b1).cmp(&(a2, b2)))
    });
    let rows = edges
        .into_iter()
        .take(top_edge_count(n, fraction))
        .enumerate()
        .map(|(i, (a, b))| EdgeRow {
            rank: i + 1,
            a,
            b,
            roi_a: lookup.roi_name(a),
            roi_b: lookup.roi_name(b),
            network_a: lookup.network(a).to_owned(),
            network_b: lookup.network(b).to_owned(),
            r_value: r[[a, b]],
            ig_value: ig[[a, b]],
        })
        .collect();
    Ok(EdgeReport { rows })
}

impl EdgeReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EDGE_CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record([
                row.rank.to_string(),
                row.roi_a.clone(),
                row.roi_b.clone(),
                row.network_a.clone(),
                row.network_b.clone(),
                format!("{:.6}", row.r_value),
                format!("{:.9e}", row.ig_value),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
    }
}
