//! Cohort metadata and prepared per-subject tensors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::connectome::{self, ConnectivityMatrix, QuadLaplacians, TimeSeries};
use crate::error::{LuminaError, Result};
use crate::io;

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Time-series CSV, relative to the manifest directory unless absolute.
    pub path: PathBuf,
    pub label: u8,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<SubjectRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub const HEADER: [&'static str; 4] = ["subject_id", "path", "label", "site"];

    pub fn new(rows: Vec<SubjectRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            rows,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Unique ids, binary labels, both labels present.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.subject_id.as_str()) {
                return Err(LuminaError::InvalidInput(format!(
                    "duplicate subject_id {:?}",
                    row.subject_id
                )));
            }
            if row.label > 1 {
                return Err(LuminaError::InvalidInput(format!(
                    "subject {:?} has label {}, expected 0 or 1",
                    row.subject_id, row.label
                )));
            }
        }
        for label in [0u8, 1] {
            if !self.rows.iter().any(|r| r.label == label) {
                return Err(LuminaError::InvalidInput(format!("manifest has no label-{label} subjects")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, row: &SubjectRecord) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.base_dir.join(&row.path)
        }
    }

    /// Every referenced time-series file must exist.
    pub fn check_paths(&self) -> Result<()> {
        for row in &self.rows {
            let p = self.resolve(row);
            if !p.is_file() {
                return Err(LuminaError::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "time series missing"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_manifest(path)
    }
}

/// A subject ready for the model: `R` and its cached priors.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub label: u8,
    pub site: String,
    pub r: ConnectivityMatrix,
    pub quad: QuadLaplacians,
}

impl PreparedSubject {
    pub fn from_time_series(record: &SubjectRecord, ts: &TimeSeries) -> Result<Self> {
        let (r, quad) = connectome::prepare(ts)?;
        Ok(Self {
            subject_id: record.subject_id.clone(),
            label: record.label,
            site: record.site.clone(),
            r,
            quad,
        })
    }

    pub fn n_rois(&self) -> usize {
        self.r.n_rois()
    }
}

/// Cache file for a subject inside a prepared directory.
pub fn cache_path(prepared_dir: &Path, subject_id: &str) -> PathBuf {
    prepared_dir.join(format!("{subject_id}.lum"))
}

/// Compute and write the prepared cache for every manifest row.
pub fn prepare_manifest(manifest: &Manifest, prepared_dir: &Path) -> Result<Vec<PreparedSubject>> {
    std::fs::create_dir_all(prepared_dir).map_err(|e| LuminaError::io(prepared_dir, e))?;
    let mut out = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let ts = io::read_timeseries_csv(&manifest.resolve(row))?;
        let subject = PreparedSubject::from_time_series(row, &ts)?;
        io::write_prepared(&cache_path(prepared_dir, &row.subject_id), &subject.r, &subject.quad)?;
        out.push(subject);
    }
    Ok(out)
}

/// Load cached subjects; fails with an I/O error naming the first missing cache.
pub fn load_prepared(manifest: &Manifest, prepared_dir: &Path) -> Result<Vec<PreparedSubject>> {
    manifest
        .rows
        .iter()
        .map(|row| {
            let (r, quad) = io::read_prepared(&cache_path(prepared_dir, &row.subject_id))?;
            Ok(PreparedSubject {
                subject_id: row.subject_id.clone(),
                label: row.label,
                site: row.site.clone(),
                r,
                quad,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: u8) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            path: format!("{id}.csv").into(),
            label,
            site: "a".into(),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Manifest::new(vec![row("x", 0), row("x", 1)], ".").is_err());
    }

    #[test]
    fn both_labels_required() {
        assert!(Manifest::new(vec![row("x", 0), row("y", 0)], ".").is_err());
        assert!(Manifest::new(vec![row("x", 0), row("y", 1)], ".").is_ok());
    }

    #[test]
    fn bad_label_rejected() {
        assert!(Manifest::new(vec![row("x", 0), row("y", 2)], ".").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let m = Manifest::new(vec![row("x", 0), row("y", 1)], "/data/set").unwrap();
        assert_eq!(m.resolve(&m.rows[0]), PathBuf::from("/data/set/x.csv"));
    }
}
