//! Synthetic cohorts with planted two-block structure.
//!
//! ROIs split into block A (first half) and block B (rest). Subjects come in
//! pairs sharing latent signals and noise:
//!
//! ```text
//! x_u(t) = s_A(t) + c s_shared(t) + sigma n_u(t)     u in A
//! x_u(t) = s_B(t) + c s_shared(t) + sigma n_u(t)     u in B
//! ```
//!
//! * `Sign`: the class-0 member is its class-1 partner with every B row
//!   negated. Inter-block correlations flip sign exactly and `|R|` is bitwise
//!   identical within a pair.
//! * `Magnitude`: the class-0 member uses a weaker shared coupling, so
//!   inter-block correlations keep their sign but shrink.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::connectome::{Matrix, TimeSeries};
use crate::dataset::{Manifest, PreparedSubject, SubjectRecord};
use crate::error::{LuminaError, Result};
use crate::io;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Sign,
    Magnitude,
}

impl Effect {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(Effect::Sign),
            "magnitude" => Ok(Effect::Magnitude),
            other => Err(LuminaError::InvalidInput(format!(
                "unknown effect {other:?}, expected sign or magnitude"
            ))),
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Effect::Sign => "sign",
            Effect::Magnitude => "magnitude",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Even; half per label.
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub effect: Effect,
    pub n_sites: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            n_rois: 16,
            n_timepoints: 64,
            effect: Effect::Sign,
            n_sites: 2,
            noise: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rois < 4 || self.n_timepoints < 8 {
            return Err(LuminaError::InvalidInput(format!(
                "synthesis needs N >= 4 and T >= 8, got N={} T={}",
                self.n_rois, self.n_timepoints
            )));
        }
        if self.n_subjects < 2 || self.n_subjects % 2 != 0 {
            return Err(LuminaError::InvalidInput(format!(
                "n_subjects must be even and at least 2, got {}",
                self.n_subjects
            )));
        }
        if self.n_sites == 0 || !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(LuminaError::InvalidInput("need n_sites >= 1 and a positive finite noise".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub record: SubjectRecord,
    pub ts: TimeSeries,
    /// Index of the pair this subject belongs to.
    pub pair: usize,
}

impl SynthSubject {
    pub fn prepare(&self) -> Result<PreparedSubject> {
        PreparedSubject::from_time_series(&self.record, &self.ts)
    }
}

/// Subject `2j` (label 1) and `2j + 1` (label 0) form pair `j`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSubject>> {
    cfg.validate()?;
    let (n, t) = (cfg.n_rois, cfg.n_timepoints);
    let half = n / 2;
    let mut rng = rng_for(cfg.seed, "synth");
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let mut out = Vec::with_capacity(cfg.n_subjects);
    for pair in 0..cfg.n_subjects / 2 {
        let s_a: Vec<f64> = (0..t).map(|_| normal()).collect();
        let s_b: Vec<f64> = (0..t).map(|_| normal()).collect();
        let s_shared: Vec<f64> = (0..t).map(|_| normal()).collect();
        let noise = Matrix::from_shape_fn((n, t), |_| normal());
        let coupling = 0.8 + 0.4 * (normal().tanh() + 1.0) / 2.0;
        let build = |c: f64| {
            Matrix::from_shape_fn((n, t), |(u, k)| {
                let own = if u < half { s_a[k] } else { s_b[k] };
                own + c * s_shared[k] + cfg.noise * noise[[u, k]]
            })
        };
        let (pos, neg) = match cfg.effect {
            Effect::Sign => {
                let pos = build(coupling);
                let neg = pos.indexed_iter().map(|((u, _), &x)| if u >= half { -x } else { x });
                let neg = Matrix::from_shape_vec((n, t), neg.collect()).expect("same shape");
                (pos, neg)
            }
            Effect::Magnitude => (build(coupling), build(0.25 * coupling)),
        };
        let site = format!("site{}", pair % cfg.n_sites);
        for (offset, (label, values)) in [(1u8, pos), (0u8, neg)].into_iter().enumerate() {
            let id = format!("sub-{:04}", 2 * pair + offset);
            out.push(SynthSubject {
                record: SubjectRecord {
                    path: format!("ts/{id}.csv").into(),
                    subject_id: id,
                    label,
                    site: site.clone(),
                },
                ts: TimeSeries::new(values, Some(roi_names(n)))?,
                pair,
            });
        }
    }
    Ok(out)
}

fn roi_names(n: usize) -> Vec<String> {
    (0..n).map(|u| format!("roi{u:03}")).collect()
}

/// Write every time series under `dir/ts/` plus `dir/manifest.csv`.
pub fn write_dataset(dir: &Path, subjects: &[SynthSubject]) -> Result<Manifest> {
    for s in subjects {
        io::write_timeseries_csv(&dir.join(&s.record.path), &s.ts)?;
    }
    let manifest = Manifest::new(subjects.iter().map(|s| s.record.clone()).collect(), dir)?;
    io::write_manifest(&dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::{absolute_adjacency, pearson_connectivity};

    fn small(effect: Effect) -> SynthConfig {
        SynthConfig {
            n_subjects: 10,
            n_rois: 6,
            n_timepoints: 20,
            effect,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn ten_subjects_five_per_label() {
        let subjects = generate(&small(Effect::Sign)).unwrap();
        assert_eq!(subjects.len(), 10);
        assert_eq!(subjects.iter().filter(|s| s.record.label == 1).count(), 5);
        let mut ids: Vec<&str> = subjects.iter().map(|s| s.record.subject_id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn sign_pairs_share_absolute_connectivity_bitwise() {
        let subjects = generate(&small(Effect::Sign)).unwrap();
        for pair in subjects.chunks(2) {
            let r1 = pearson_connectivity(&pair[0].ts).unwrap();
            let r0 = pearson_connectivity(&pair[1].ts).unwrap();
            assert_eq!(absolute_adjacency(&r1), absolute_adjacency(&r0));
            assert!(r1.as_matrix()[[0, 5]] * r0.as_matrix()[[0, 5]] < 0.0);
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        assert_eq!(generate(&small(Effect::Magnitude)).unwrap(), generate(&small(Effect::Magnitude)).unwrap());
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(generate(&SynthConfig { n_rois: 3, ..small(Effect::Sign) }).is_err());
        assert!(generate(&SynthConfig { n_timepoints: 7, ..small(Effect::Sign) }).is_err());
        assert!(generate(&SynthConfig { n_subjects: 9, ..small(Effect::Sign) }).is_err());
    }
}
