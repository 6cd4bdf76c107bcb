//! TF-IDF over binarized segments: events are words, segments are documents.
//!
//! `tf(c)` is the number of active seconds of class `c`;
//! `idf(c) = ln((1 + N) / (1 + df(c))) + 1`; the product is L2-normalized.

use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{BinaryEventMatrix, N_CLASSES};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub n_docs: usize,
    /// Segments in which each class is active in at least one second.
    pub df: Vec<usize>,
}

impl CorpusStats {
    pub fn idf(&self, class: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[class] as f64)).ln() + 1.0
    }

    /// Combines statistics of two disjoint corpora.
    pub fn merge(mut self, other: &CorpusStats) -> CorpusStats {
        self.n_docs += other.n_docs;
        for (a, b) in self.df.iter_mut().zip(&other.df) {
            *a += b;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVector {
    pub segment_id: String,
    pub weights: Vec<f64>,
}

pub fn document_frequency<'a, I>(corpus: I) -> Result<CorpusStats>
where
    I: IntoIterator<Item = &'a BinaryEventMatrix>,
{
    let mut stats = CorpusStats {
        n_docs: 0,
        df: vec![0; N_CLASSES],
    };
    for m in corpus {
        stats.n_docs += 1;
        for (d, hit) in stats.df.iter_mut().zip(m.triggered()) {
            *d += usize::from(hit);
        }
    }
    if stats.n_docs == 0 {
        return Err(Error::Input("document frequency of an empty corpus".into()));
    }
    Ok(stats)
}

pub fn tfidf_vector(m: &BinaryEventMatrix, stats: &CorpusStats) -> TfidfVector {
    weigh_counts(&m.segment_id, &m.active_seconds(), stats)
}

/// TF-IDF of raw per-class counts.
pub fn weigh_counts(segment_id: &str, tf: &[u32], stats: &CorpusStats) -> TfidfVector {
    let mut weights: Vec<f64> = tf
        .iter()
        .enumerate()
        .map(|(c, &n)| n as f64 * stats.idf(c))
        .collect();
    let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        weights.iter_mut().for_each(|w| *w /= norm);
    }
    TfidfVector {
        segment_id: segment_id.to_string(),
        weights,
    }
}

/// Writes `segment_id,w0,...,w520`.
pub fn write_csv(path: &Path, vectors: &[TfidfVector]) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    let header = std::iter::once("segment_id".to_string())
        .chain((0..N_CLASSES).map(|i| format!("w{i}")));
    w.write_record(header)?;
    for v in vectors {
        w.write_record(
            std::iter::once(v.segment_id.clone()).chain(v.weights.iter().map(|x| io::fmt_f64(*x))),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SEGMENT_SECONDS;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn doc(id: &str, counts: &[(usize, usize)]) -> BinaryEventMatrix {
        let mut v = Array2::zeros((SEGMENT_SECONDS, N_CLASSES));
        for &(class, secs) in counts {
            for s in 0..secs {
                v[[s, class]] = 1;
            }
        }
        BinaryEventMatrix::new(id, v).unwrap()
    }

    #[test]
    fn df_counts() {
        let docs = [doc("1", &[(0, 3), (7, 1)]), doc("2", &[(0, 1)]), doc("3", &[(0, 2), (7, 60)])];
        let s = document_frequency(&docs).unwrap();
        assert_eq!(s.n_docs, 3);
        assert_eq!(s.df[0], 3);
        assert_eq!(s.df[7], 2);
        assert_eq!(s.df[1], 0);
        assert!(matches!(document_frequency(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn ubiquitous_class_has_unit_idf() {
        let docs = [doc("1", &[(4, 1)]), doc("2", &[(4, 9)])];
        let s = document_frequency(&docs).unwrap();
        assert_eq!(s.idf(4), 1.0);
    }

    #[test]
    fn empty_segment_gives_zero_vector() {
        let docs = [doc("1", &[]), doc("2", &[(0, 1)])];
        let s = document_frequency(&docs).unwrap();
        assert!(tfidf_vector(&docs[0], &s).weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn two_doc_corpus_by_hand() {
        // doc1 tf {A:2, B:1}; df {A:2, B:1}; N = 2.
        let docs = [doc("1", &[(0, 2), (1, 1)]), doc("2", &[(0, 5)])];
        let s = document_frequency(&docs).unwrap();
        let v = tfidf_vector(&docs[0], &s);
        let a = 2.0 * 1.0;
        let b = 1.0 * ((3.0f64 / 2.0).ln() + 1.0);
        let n = (a * a + b * b).sqrt();
        assert!((v.weights[0] - a / n).abs() < 1e-15);
        assert!((v.weights[1] - b / n).abs() < 1e-15);
        assert!(v.weights[2..].iter().all(|&w| w == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scaling_and_support(counts in proptest::collection::vec(0u32..30, N_CLASSES),
                               df in proptest::collection::vec(0usize..10, N_CLASSES),
                               k in 1u32..5) {
            let stats = CorpusStats { n_docs: 10, df };
            let a = weigh_counts("x", &counts, &stats);
            let scaled: Vec<u32> = counts.iter().map(|c| c * k).collect();
            let b = weigh_counts("x", &scaled, &stats);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for (w, &c) in a.weights.iter().zip(&counts) {
                prop_assert_eq!(*w > 0.0, c > 0);
            }
            let norm: f64 = a.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        }

        #[test]
        fn df_order_invariant(seed in proptest::collection::vec((0usize..N_CLASSES, 0usize..60), 0..40)) {
            let docs: Vec<_> = seed.chunks(4).enumerate()
                .map(|(i, c)| doc(&i.to_string(), c)).collect();
            prop_assume!(!docs.is_empty());
            let fwd = document_frequency(docs.iter()).unwrap();
            let rev = document_frequency(docs.iter().rev()).unwrap();
            prop_assert_eq!(fwd, rev);
        }
    }
}
