//! Per-segment 6×521 embedding: row 0 holds TF-IDF weights, rows 1..=5 the
//! class Node2Vec vectors, masked to the classes triggered in the segment.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{BinaryEventMatrix, N_CLASSES};
use crate::io;
use crate::tfidf::TfidfVector;

pub const EMBEDDING_ROWS: usize = 6;
pub const FLAT_DIM: usize = EMBEDDING_ROWS * N_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbedding {
    pub segment_id: String,
    matrix: Array2<f64>,
}

impl SegmentEmbedding {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Row-major flattening, row 0 first.
    pub fn flat(&self) -> Vec<f64> {
        self.matrix.iter().copied().collect()
    }

    pub fn from_flat(segment_id: impl Into<String>, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != FLAT_DIM {
            return Err(Error::Shape(format!(
                "flat embedding has {} values, expected {FLAT_DIM}",
                flat.len()
            )));
        }
        Ok(SegmentEmbedding {
            segment_id: segment_id.into(),
            matrix: Array2::from_shape_vec((EMBEDDING_ROWS, N_CLASSES), flat).expect("length checked"),
        })
    }

    pub fn nonzero_columns(&self) -> usize {
        self.matrix
            .columns()
            .into_iter()
            .filter(|c| c.iter().any(|&v| v != 0.0))
            .count()
    }
}

/// Assembles the masked 6×521 matrix. `class_vectors` is `5 × 521`.
pub fn build_segment_embedding(
    tfidf: &TfidfVector,
    class_vectors: &Array2<f64>,
    binary: &BinaryEventMatrix,
) -> Result<SegmentEmbedding> {
    if class_vectors.dim() != (EMBEDDING_ROWS - 1, N_CLASSES) {
        return Err(Error::Shape(format!(
            "class vectors are {}x{}, expected {}x{N_CLASSES}",
            class_vectors.nrows(),
            class_vectors.ncols(),
            EMBEDDING_ROWS - 1
        )));
    }
    if tfidf.weights.len() != N_CLASSES {
        return Err(Error::Shape(format!(
            "tf-idf vector has {} weights, expected {N_CLASSES}",
            tfidf.weights.len()
        )));
    }
    let mut matrix = Array2::zeros((EMBEDDING_ROWS, N_CLASSES));
    for (c, hit) in binary.triggered().into_iter().enumerate() {
        if !hit {
            continue;
        }
        matrix[[0, c]] = tfidf.weights[c];
        for d in 0..EMBEDDING_ROWS - 1 {
            matrix[[d + 1, c]] = class_vectors[[d, c]];
        }
    }
    Ok(SegmentEmbedding {
        segment_id: binary.segment_id.clone(),
        matrix,
    })
}

/// Per-dimension max-abs scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub scales: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        InputScaler {
            scales: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    /// Divides by the scale factors. Values outside the training range are
    /// not clipped.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scales).map(|(x, s)| x / s).collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.scales).map(|(x, s)| x * s).collect()
    }
}

/// `s_d = max |x_d|` over the training vectors, or 1 where that is 0.
pub fn fit_scaler<'a, I>(training: I) -> Result<InputScaler>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut scales: Option<Vec<f64>> = None;
    for v in training {
        let s = scales.get_or_insert_with(|| vec![0.0; v.len()]);
        if s.len() != v.len() {
            return Err(Error::Shape(format!(
                "training vectors of differing length ({} vs {})",
                s.len(),
                v.len()
            )));
        }
        for (m, x) in s.iter_mut().zip(v) {
            *m = m.max(x.abs());
        }
    }
    let mut scales = scales.ok_or_else(|| Error::Input("cannot fit a scaler on no data".into()))?;
    for s in &mut scales {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Ok(InputScaler { scales })
}

pub fn apply_scaler(scaler: &InputScaler, v: &[f64]) -> Vec<f64> {
    scaler.apply(v)
}

/// Writes `segment_id,f0,...` rows.
pub fn write_vectors_csv(path: &Path, prefix: &str, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut w = io::csv_writer(path)?;
    w.write_record(
        std::iter::once("segment_id".to_string()).chain((0..dim).map(|i| format!("{prefix}{i}"))),
    )?;
    for (id, v) in rows {
        if v.len() != dim {
            return Err(Error::Shape(format!("ragged vector for `{id}`")));
        }
        w.write_record(std::iter::once(id.clone()).chain(v.iter().map(|x| io::fmt_f64(*x))))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `segment_id,<values...>` file written by [`write_vectors_csv`].
pub fn read_vectors_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(io::open(path)?);
    let dim = rdr.headers()?.len().saturating_sub(1);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Shape(format!(
                "{}: row for `{}` has {} values, expected {dim}",
                path.display(),
                &rec[0],
                rec.len().saturating_sub(1)
            )));
        }
        let v = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("{}: bad value `{f}`", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

pub fn write_embeddings_csv(path: &Path, embeddings: &[SegmentEmbedding]) -> Result<()> {
    let rows: Vec<_> = embeddings
        .iter()
        .map(|e| (e.segment_id.clone(), e.flat()))
        .collect();
    write_vectors_csv(path, "f", &rows)
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<SegmentEmbedding>> {
    read_vectors_csv(path)?
        .into_iter()
        .map(|(id, v)| SegmentEmbedding::from_flat(id, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SEGMENT_SECONDS;
    use proptest::prelude::*;

    fn binary(active: &[usize]) -> BinaryEventMatrix {
        let mut v = Array2::zeros((SEGMENT_SECONDS, N_CLASSES));
        for &c in active {
            v[[c % SEGMENT_SECONDS, c]] = 1;
        }
        BinaryEventMatrix::new("seg", v).unwrap()
    }

    fn class_vectors() -> Array2<f64> {
        Array2::from_shape_fn((5, N_CLASSES), |(d, c)| 1.0 + d as f64 + c as f64 * 0.01)
    }

    fn tfidf_for(active: &[usize]) -> TfidfVector {
        let mut w = vec![0.0; N_CLASSES];
        for &c in active {
            w[c] = 0.5;
        }
        TfidfVector {
            segment_id: "seg".into(),
            weights: w,
        }
    }

    #[test]
    fn empty_segment_all_zero() {
        let e = build_segment_embedding(&tfidf_for(&[]), &class_vectors(), &binary(&[])).unwrap();
        assert!(e.matrix().iter().all(|&v| v == 0.0));
        assert_eq!(e.matrix().dim(), (6, 521));
        assert_eq!(e.flat().len(), 3126);
    }

    #[test]
    fn single_class_single_column() {
        let e = build_segment_embedding(&tfidf_for(&[17]), &class_vectors(), &binary(&[17])).unwrap();
        assert_eq!(e.nonzero_columns(), 1);
        assert_eq!(e.matrix()[[0, 17]], 0.5);
        assert_eq!(e.matrix()[[3, 17]], class_vectors()[[2, 17]]);
        // row-major: row r, column c sits at r * 521 + c
        assert_eq!(e.flat()[2 * N_CLASSES + 17], class_vectors()[[1, 17]]);
    }

    #[test]
    fn scaler_cases() {
        let a = vec![0.0, 2.0, -1.0];
        let b = vec![0.0, -1.0, 0.5];
        let s = fit_scaler([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(s.scales, vec![1.0, 2.0, 1.0]);
        for v in [&a, &b] {
            assert!(s.apply(v).iter().all(|x| x.abs() <= 1.0));
        }
        assert_eq!(s.apply(&[0.0; 3]), vec![0.0; 3]);
        assert_eq!(s.apply(&s.scales), vec![1.0; 3]);
        assert_eq!(s.apply(&[0.0, 10.0, 0.0])[1], 5.0);
        assert!(matches!(fit_scaler(std::iter::empty()), Err(Error::Input(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        let e = build_segment_embedding(&tfidf_for(&[1, 300]), &class_vectors(), &binary(&[1, 300])).unwrap();
        write_embeddings_csv(&p, &[e.clone()]).unwrap();
        assert_eq!(read_embeddings_csv(&p).unwrap(), vec![e]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sparsity_preserved(active in proptest::collection::btree_set(0usize..N_CLASSES, 0..40)) {
            let active: Vec<_> = active.into_iter().collect();
            let e = build_segment_embedding(&tfidf_for(&active), &class_vectors(), &binary(&active)).unwrap();
            prop_assert_eq!(e.nonzero_columns(), active.len());
            let back = SegmentEmbedding::from_flat("seg", e.flat()).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn scaler_inverse_and_order(rows in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 8), 1..10)) {
            let fwd = fit_scaler(rows.iter().map(|r| r.as_slice())).unwrap();
            let rev = fit_scaler(rows.iter().rev().map(|r| r.as_slice())).unwrap();
            prop_assert_eq!(&fwd, &rev);
            for r in &rows {
                let back = fwd.invert(&fwd.apply(r));
                for (x, y) in back.iter().zip(r) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
