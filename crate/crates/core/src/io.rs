//! On-disk formats.
//!
//! * Time series: CSV, T rows by N columns, optional single header row of ROI
//!   names. Loaded transposed to N x T.
//! * Manifest: CSV with header `subject_id,path,label,site`.
//! * Network lookup: CSV with header `roi_index,roi_name,network_name`
//!   (0-based `roi_index`).
//! * Prepared cache (`LUM1`): magic, `u32` N, then `R` and the four priors,
//!   each row-major little-endian `f64`.
//! * Checkpoint (`LUMCKPT1`): magic, architecture header, named parameter
//!   tensors, optional AdamW state. Writing a loaded checkpoint reproduces
//!   the original bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::connectome::{ConnectivityMatrix, Matrix, QuadLaplacians, TimeSeries};
use crate::dataset::{Manifest, SubjectRecord};
use crate::error::{LuminaError, Result};
use crate::model::{param_layout, AblationSwitches, HyperParams, Lumina, ModelParams};
use crate::numerics::{AdamWConfig, AdamWState};

pub const PREPARED_MAGIC: &[u8; 4] = b"LUM1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LUMCKPT1";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LuminaError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LuminaError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| LuminaError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> LuminaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LuminaError::io(path, io),
        other => LuminaError::format(path, format!("{other:?}")),
    }
}

// ---------------------------------------------------------------------------
// time series

pub fn read_timeseries_csv(path: &Path) -> Result<TimeSeries> {
    let text = fs::read_to_string(path).map_err(|e| LuminaError::io(path, e))?;
    parse_timeseries_csv(&text).map_err(|e| match e {
        LuminaError::Format { reason, .. } => LuminaError::format(path, reason),
        other => other,
    })
}

/// Parse CSV text (T rows by N columns) into an N x T series.
pub fn parse_timeseries_csv(text: &str) -> Result<TimeSeries> {
    let src = PathBuf::from("<csv>");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&src, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if i == 0 => names = Some(record.iter().map(str::to_owned).collect()),
            Err(e) => return Err(LuminaError::format(&src, format!("row {}: {e}", i + 1))),
        }
    }
    let t = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(LuminaError::format(&src, "ragged rows"));
    }
    let values = Matrix::from_shape_fn((n, t), |(roi, time)| rows[time][roi]);
    TimeSeries::new(values, names)
}

pub fn write_timeseries_csv(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut out = String::new();
    if let Some(names) = ts.roi_names() {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    let v = ts.values();
    for t in 0..ts.n_timepoints() {
        let row: Vec<String> = (0..ts.n_rois()).map(|u| format!("{}", v[[u, t]])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// manifest

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != Manifest::HEADER {
        return Err(LuminaError::format(
            path,
            format!("manifest header {cols:?}, expected {:?}", Manifest::HEADER),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let label = record[2]
            .parse::<u8>()
            .map_err(|e| LuminaError::format(path, format!("label {:?}: {e}", &record[2])))?;
        rows.push(SubjectRecord {
            subject_id: record[0].to_owned(),
            path: PathBuf::from(&record[1]),
            label,
            site: record[3].to_owned(),
        });
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::new(rows, base)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = Manifest::HEADER.join(",");
    out.push('\n');
    for r in &manifest.rows {
        out.push_str(&format!("{},{},{},{}\n", r.subject_id, r.path.display(), r.label, r.site));
    }
    write_bytes(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// network lookup

/// ROI index to `(roi_name, network_name)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetworkLookup {
    entries: BTreeMap<usize, (String, String)>,
}

impl NetworkLookup {
    pub const UNKNOWN: &'static str = "Unknown";

    pub fn insert(&mut self, roi: usize, roi_name: impl Into<String>, network: impl Into<String>) {
        self.entries.insert(roi, (roi_name.into(), network.into()));
    }

    pub fn roi_name(&self, roi: usize) -> String {
        self.entries
            .get(&roi)
            .map_or_else(|| format!("ROI{roi}"), |(name, _)| name.clone())
    }

    /// Network of `roi`, or `"Unknown"` when the lookup has no entry.
    pub fn network(&self, roi: usize) -> &str {
        self.entries.get(&roi).map_or(Self::UNKNOWN, |(_, net)| net.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn read_network_lookup(path: &Path) -> Result<NetworkLookup> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut lookup = NetworkLookup::default();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 3 {
            return Err(LuminaError::format(path, "expected roi_index,roi_name,network_name"));
        }
        let idx = record[0]
            .parse::<usize>()
            .map_err(|e| LuminaError::format(path, format!("roi_index {:?}: {e}", &record[0])))?;
        lookup.insert(idx, &record[1], &record[2]);
    }
    Ok(lookup)
}

// ---------------------------------------------------------------------------
// binary helpers

#[derive(Default)]
struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn matrix_data(&mut self, m: &Matrix) {
        for &x in m.iter() {
            self.f64(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LuminaError::format(self.path, format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_shape_vec((rows, cols), data).expect("length matches shape"))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| LuminaError::format(self.path, "non-UTF-8 name"))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(LuminaError::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// prepared cache

pub fn encode_prepared(r: &ConnectivityMatrix, quad: &QuadLaplacians) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.0.extend_from_slice(PREPARED_MAGIC);
    w.u32(r.n_rois());
    w.matrix_data(r.as_matrix());
    for l in &quad.l {
        w.matrix_data(l);
    }
    w.0
}

pub fn write_prepared(path: &Path, r: &ConnectivityMatrix, quad: &QuadLaplacians) -> Result<()> {
    write_bytes(path, &encode_prepared(r, quad))
}

pub fn read_prepared(path: &Path) -> Result<(ConnectivityMatrix, QuadLaplacians)> {
    let bytes = read_bytes(path)?;
    decode_prepared(&bytes, path)
}

pub fn decode_prepared(bytes: &[u8], path: &Path) -> Result<(ConnectivityMatrix, QuadLaplacians)> {
    let mut rd = ByteReader::new(bytes, path);
    if rd.take(4)? != PREPARED_MAGIC {
        return Err(LuminaError::format(path, "bad magic, expected LUM1"));
    }
    let n = rd.u32()?;
    let r = ConnectivityMatrix::new(rd.matrix(n, n)?)?;
    let l = [rd.matrix(n, n)?, rd.matrix(n, n)?, rd.matrix(n, n)?, rd.matrix(n, n)?];
    rd.finish()?;
    Ok((r, QuadLaplacians { l }))
}

// ---------------------------------------------------------------------------
// checkpoint

/// A model plus (optionally) the optimizer state that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Lumina,
    pub optimizer: Option<AdamWState>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = ByteWriter::default();
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(m.n_rois);
        w.u32(m.hp.d_in);
        w.u32(m.hp.d_out);
        w.u32(m.hp.d_hidden);
        w.u32(m.hp.n_layers);
        w.u32(m.hp.kernel_size);
        w.u32(m.hp.n_classes);
        w.u32(m.hp.dilations.len());
        for &d in &m.hp.dilations {
            w.u32(d);
        }
        w.u8(m.switches.bipolar_relu.into());
        w.u8(m.switches.dual_laplacian.into());
        w.u8(m.switches.neurograph_block.into());
        w.u32(m.params.len());
        for (name, value) in m.params.names().iter().zip(m.params.values()) {
            w.str(name);
            w.u32(2);
            w.u32(value.nrows());
            w.u32(value.ncols());
            w.matrix_data(value);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                let c = opt.config;
                for x in [c.lr, c.weight_decay, c.beta1, c.beta2, c.eps] {
                    w.f64(x);
                }
                w.u64(opt.step_count);
                for buf in opt.m.iter().chain(&opt.v) {
                    w.matrix_data(buf);
                }
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = ByteReader::new(bytes, path);
        if rd.take(8)? != CHECKPOINT_MAGIC {
            return Err(LuminaError::format(path, "bad magic, expected LUMCKPT1"));
        }
        let n_rois = rd.u32()?;
        let (d_in, d_out, d_hidden, n_layers) = (rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?);
        let (kernel_size, n_classes) = (rd.u32()?, rd.u32()?);
        let n_dil = rd.u32()?;
        let dilations = (0..n_dil).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        let flag = |b: u8| b != 0;
        let switches = AblationSwitches {
            bipolar_relu: flag(rd.u8()?),
            dual_laplacian: flag(rd.u8()?),
            neurograph_block: flag(rd.u8()?),
        };
        let hp = HyperParams {
            d_in,
            d_out,
            d_hidden,
            n_layers,
            dilations,
            kernel_size,
            n_classes,
        };
        hp.validate()?;
        let layout = param_layout(&hp, switches, n_rois);
        let count = rd.u32()?;
        if count != layout.len() {
            return Err(LuminaError::ConfigMismatch(format!(
                "checkpoint has {count} tensors, architecture needs {}",
                layout.len()
            )));
        }
        let mut names = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for spec in &layout {
            let name = rd.str()?;
            let ndim = rd.u32()?;
            if ndim != 2 {
                return Err(LuminaError::format(path, format!("{name}: {ndim}-d tensor")));
            }
            let shape = (rd.u32()?, rd.u32()?);
            if name != spec.name || shape != spec.shape {
                return Err(LuminaError::ConfigMismatch(format!(
                    "tensor {name} {shape:?} where architecture expects {} {:?}",
                    spec.name, spec.shape
                )));
            }
            values.push(rd.matrix(shape.0, shape.1)?);
            names.push(name);
        }
        let optimizer = match rd.u8()? {
            0 => None,
            1 => {
                let config = AdamWConfig {
                    lr: rd.f64()?,
                    weight_decay: rd.f64()?,
                    beta1: rd.f64()?,
                    beta2: rd.f64()?,
                    eps: rd.f64()?,
                };
                let step_count = rd.u64()?;
                let read_bufs = |rd: &mut ByteReader| {
                    values
                        .iter()
                        .map(|p| rd.matrix(p.nrows(), p.ncols()))
                        .collect::<Result<Vec<_>>>()
                };
                let m = read_bufs(&mut rd)?;
                let v = read_bufs(&mut rd)?;
                Some(AdamWState {
                    config,
                    step_count,
                    m,
                    v,
                })
            }
            b => return Err(LuminaError::format(path, format!("optimizer flag {b}"))),
        };
        rd.finish()?;
        Ok(Self {
            model: Lumina {
                hp,
                switches,
                n_rois,
                params: ModelParams::new(names, values)?,
            },
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_bytes(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectome::prepare;
    use crate::model::Variant;
    use ndarray::array;

    #[test]
    fn timeseries_header_detected_and_transposed() {
        let ts = parse_timeseries_csv("a,b\n1,4\n2,5\n3,7\n").unwrap();
        assert_eq!(ts.roi_names().unwrap(), ["a", "b"]);
        assert_eq!(ts.values(), &array![[1.0, 2.0, 3.0], [4.0, 5.0, 7.0]]);
    }

    #[test]
    fn timeseries_without_header() {
        let ts = parse_timeseries_csv("1,4\n2,5\n3,7\n").unwrap();
        assert!(ts.roi_names().is_none());
        assert_eq!(ts.n_rois(), 2);
        assert_eq!(ts.n_timepoints(), 3);
    }

    #[test]
    fn ragged_and_garbage_rows_rejected() {
        assert!(parse_timeseries_csv("1,4\n2\n3,7\n").is_err());
        assert!(parse_timeseries_csv("1,4\n2,x\n3,7\n").is_err());
    }

    #[test]
    fn prepared_cache_layout() {
        let ts = parse_timeseries_csv("1,4,0\n2,5,1\n3,7,-1\n4,1,2\n").unwrap();
        let (r, quad) = prepare(&ts).unwrap();
        let bytes = encode_prepared(&r, &quad);
        assert_eq!(&bytes[..4], b"LUM1");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 5 * 9 * 8);
        assert_eq!(&bytes[8..16], &r.as_matrix()[[0, 0]].to_le_bytes());
        assert_eq!(&bytes[16..24], &r.as_matrix()[[0, 1]].to_le_bytes());
        let (r2, q2) = decode_prepared(&bytes, Path::new("x")).unwrap();
        assert_eq!(r2, r);
        assert_eq!(q2, quad);
        assert!(decode_prepared(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn checkpoint_resave_is_byte_identical() {
        let hp = HyperParams {
            d_in: 4,
            d_out: 4,
            d_hidden: 3,
            n_layers: 2,
            ..Default::default()
        };
        for v in [Variant::Full, Variant::Baseline] {
            let model = Lumina::init(hp.clone(), v.switches(), 6, 1).unwrap();
            let mut opt = AdamWState::new(AdamWConfig::default(), model.params.values());
            opt.step_count = 3;
            opt.m[0][[0, 1]] = 0.25;
            for optimizer in [None, Some(opt)] {
                let ck = Checkpoint { model: model.clone(), optimizer };
                let bytes = ck.encode();
                assert_eq!(&bytes[..8], b"LUMCKPT1");
                let back = Checkpoint::decode(&bytes, Path::new("ck")).unwrap();
                assert_eq!(back, ck);
                assert_eq!(back.encode(), bytes);
            }
        }
    }

    #[test]
    fn checkpoint_with_foreign_switches_rejected() {
        let hp = HyperParams {
            d_in: 4,
            d_out: 4,
            d_hidden: 3,
            n_layers: 1,
            ..Default::default()
        };
        let model = Lumina::init(hp, Variant::Full.switches(), 5, 1).unwrap();
        let mut bytes = Checkpoint { model, optimizer: None }.encode();
        // flip the N/G flag: 8 magic + 8 u32 + 3 dilations u32, then B/R, D/L, N/G
        let ng = 8 + 4 * 8 + 4 * 3 + 2;
        bytes[ng] = 0;
        let err = Checkpoint::decode(&bytes, Path::new("ck")).unwrap_err();
        assert!(matches!(err, LuminaError::ConfigMismatch(_)), "{err}");
    }

    #[test]
    fn network_lookup_falls_back_to_unknown() {
        let mut l = NetworkLookup::default();
        l.insert(0, "Left Frontal Pole", "Limbic B");
        assert_eq!(l.network(0), "Limbic B");
        assert_eq!(l.network(5), "Unknown");
        assert_eq!(l.roi_name(5), "ROI5");
    }
}
