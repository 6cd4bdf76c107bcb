//! Per-second event probability matrices and their binarization into
//! "words" at a per-user percentile threshold.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

/// Classes distinguished by the upstream event classifier.
pub const N_CLASSES: usize = 521;
/// Rows (one per second) in each segment matrix.
pub const SEGMENT_SECONDS: usize = 60;
pub const DEFAULT_PERCENTILE: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub index: usize,
    pub class_id: String,
    pub display_name: String,
}

/// The classifier's class map, in output-column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventVocabulary {
    entries: Vec<VocabEntry>,
}

impl EventVocabulary {
    pub fn new(mut entries: Vec<VocabEntry>) -> Result<Self> {
        if entries.len() != N_CLASSES {
            return Err(Error::Validation(format!(
                "vocabulary has {} entries, expected {N_CLASSES}",
                entries.len()
            )));
        }
        entries.sort_by_key(|e| e.index);
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(Error::Validation(format!(
                    "vocabulary indices are not contiguous: expected {i}, found {}",
                    e.index
                )));
            }
        }
        let mut seen = HashSet::new();
        let dups: Vec<&str> = entries
            .iter()
            .filter(|e| !seen.insert(e.class_id.as_str()))
            .map(|e| e.class_id.as_str())
            .collect();
        if !dups.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate class ids in vocabulary: {}",
                dups.join(", ")
            )));
        }
        Ok(EventVocabulary { entries })
    }

    /// Reads a class map CSV with header `index,mid,display_name`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(io::open(path)?);
        let headers = rdr.headers()?.clone();
        let expected = ["index", "mid", "display_name"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::Parse(format!(
                "{}: expected header `index,mid,display_name`",
                path.display()
            )));
        }
        let mut entries = Vec::with_capacity(N_CLASSES);
        for rec in rdr.records() {
            let rec = rec?;
            let index = rec[0].trim().parse().map_err(|_| {
                Error::Parse(format!("{}: bad index `{}`", path.display(), &rec[0]))
            })?;
            entries.push(VocabEntry {
                index,
                class_id: rec[1].trim().to_string(),
                display_name: rec[2].to_string(),
            });
        }
        Self::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = io::csv_writer(path)?;
        w.write_record(["index", "mid", "display_name"])?;
        for e in &self.entries {
            w.write_record([e.index.to_string(), e.class_id.clone(), e.display_name.clone()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 over `index\tclass_id\n` lines, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(format!("{}\t{}\n", e.index, e.class_id).as_bytes());
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the segment manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub user_id: String,
    pub start: DateTime<Utc>,
    pub matrix_path: PathBuf,
}

/// Loads a JSON Lines manifest; relative matrix paths are resolved against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SegmentRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records: Vec<SegmentRecord> = io::read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &mut records {
        if !seen.insert(r.segment_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate segment id `{}` in {}",
                r.segment_id,
                path.display()
            )));
        }
        r.matrix_path = io::resolve(base, &r.matrix_path);
    }
    Ok(records)
}

/// 60×521 per-second class probabilities for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EventProbMatrix {
    pub segment_id: String,
    values: Array2<f64>,
}

impl EventProbMatrix {
    pub fn new(segment_id: impl Into<String>, values: Array2<f64>) -> Result<Self> {
        let segment_id = segment_id.into();
        if values.dim() != (SEGMENT_SECONDS, N_CLASSES) {
            return Err(Error::Shape(format!(
                "segment `{segment_id}`: matrix is {}x{}, expected {SEGMENT_SECONDS}x{N_CLASSES}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(((row, col), v)) = values
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Range(format!(
                "segment `{segment_id}`: value {v} at second {row}, class {col} outside [0, 1]"
            )));
        }
        Ok(EventProbMatrix { segment_id, values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = io::csv_writer(path)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| io::fmt_f64(*v)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `<segment_id>.csv`: 60 header-less rows of 521 decimal values.
pub fn load_prob_matrix(path: &Path) -> Result<EventProbMatrix> {
    let segment_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Input(format!("cannot derive segment id from {}", path.display())))?
        .to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(io::open(path)?);
    let mut data = Vec::with_capacity(SEGMENT_SECONDS * N_CLASSES);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != N_CLASSES {
            return Err(Error::Shape(format!(
                "{}: row {} has {} values, expected {N_CLASSES}",
                path.display(),
                rows + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("{}: row {}: bad value `{field}`", path.display(), rows + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows != SEGMENT_SECONDS {
        return Err(Error::Shape(format!(
            "{}: {rows} rows, expected {SEGMENT_SECONDS}",
            path.display()
        )));
    }
    let values = Array2::from_shape_vec((SEGMENT_SECONDS, N_CLASSES), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    EventProbMatrix::new(segment_id, values)
}

/// Linear-interpolation percentile over the pooled entries of all matrices:
/// position `h = (n - 1) * p / 100` on the ascending sort.
pub fn compute_threshold<'a, I>(matrices: I, percentile: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a EventProbMatrix>,
{
    let pooled: Vec<f64> = matrices
        .into_iter()
        .flat_map(|m| m.values.iter().copied())
        .collect();
    percentile_linear(pooled, percentile)
}

pub fn percentile_linear(mut values: Vec<f64>, percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("percentile of an empty population".into()));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Input(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    let h = (values.len() - 1) as f64 * percentile / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    let hi_val = upper.iter().copied().min_by(f64::total_cmp).unwrap_or(lo_val);
    Ok(lo_val + frac * (hi_val - lo_val))
}

/// 60×521 activations: 1 where the probability exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryEventMatrix {
    pub segment_id: String,
    values: Array2<u8>,
}

impl BinaryEventMatrix {
    pub fn new(segment_id: impl Into<String>, values: Array2<u8>) -> Result<Self> {
        let segment_id = segment_id.into();
        if values.dim() != (SEGMENT_SECONDS, N_CLASSES) {
            return Err(Error::Shape(format!(
                "segment `{segment_id}`: binary matrix is {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Range(format!("segment `{segment_id}`: non-binary entry")));
        }
        Ok(BinaryEventMatrix { segment_id, values })
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    /// Seconds each class is active, per class.
    pub fn active_seconds(&self) -> Vec<u32> {
        self.values
            .sum_axis(Axis(0))
            .iter()
            .map(|&v| v as u32)
            .collect()
    }

    /// Whether each class is active in at least one second.
    pub fn triggered(&self) -> Vec<bool> {
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().any(|&v| v == 1))
            .collect()
    }

    pub fn count_active(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = io::csv_writer(path)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Strict comparison: a probability equal to the threshold stays inactive.
pub fn binarize(m: &EventProbMatrix, threshold: f64) -> BinaryEventMatrix {
    BinaryEventMatrix {
        segment_id: m.segment_id.clone(),
        values: m.values.mapv(|p| u8::from(p > threshold)),
    }
}
