//! Latent-space structure: cosine distances grouped by pseudo-label and
//! exact t-SNE projections.

mod tsne;

pub use tsne::{tsne, write_tsne_csv, TsneConfig, TsneResult, TsneRow};

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// `1 - x·y / (‖x‖ ‖y‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Domain("cosine distance of a zero-norm vector".into()));
    }
    Ok((1.0 - xy / (xx * yy).sqrt()).clamp(0.0, 2.0))
}

/// Element-wise tanh, applied to latents before projection only.
pub fn latent_viz_transform(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.tanh()).collect()
}

/// Mean cosine distances between label groups. `values[a][b]` is `None`
/// for a diagonal entry whose label has fewer than two segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix<L> {
    pub labels: Vec<L>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl<L> DistanceMatrix<L> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.values[a][b]
    }

    fn mean_where(&self, diagonal: bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (a, row) in self.values.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                if (a == b) == diagonal {
                    if let Some(v) = v {
                        sum += v;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Mean of the defined diagonal entries.
    pub fn mean_diagonal(&self) -> Option<f64> {
        self.mean_where(true)
    }

    pub fn mean_off_diagonal(&self) -> Option<f64> {
        self.mean_where(false)
    }

    /// Mean off-diagonal over mean diagonal; `None` when either part is
    /// undefined or the diagonal mean is zero.
    pub fn contrast_ratio(&self) -> Option<f64> {
        let d = self.mean_diagonal()?;
        let o = self.mean_off_diagonal()?;
        (d > 0.0).then(|| o / d)
    }
}

impl<L: Display> DistanceMatrix<L> {
    /// Header row and first column carry the labels; absent entries are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = io::csv_writer(path)?;
        w.write_record(std::iter::once("label".to_string()).chain(self.labels.iter().map(|l| l.to_string())))?;
        for (l, row) in self.labels.iter().zip(&self.values) {
            w.write_record(
                std::iter::once(l.to_string())
                    .chain(row.iter().map(|v| v.map(io::fmt_f64).unwrap_or_default())),
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Groups labeled vectors by label; segments without a label are ignored.
fn group<'a, L: Ord + Clone>(
    vectors: &'a BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, L>,
) -> Result<BTreeMap<L, Vec<(&'a str, &'a [f64])>>> {
    let mut groups: BTreeMap<L, Vec<(&str, &[f64])>> = BTreeMap::new();
    for (id, label) in labels {
        let (key, v) = vectors
            .get_key_value(id)
            .ok_or_else(|| Error::Input(format!("labeled segment `{id}` has no vector")))?;
        groups.entry(label.clone()).or_default().push((key.as_str(), v.as_slice()));
    }
    Ok(groups)
}

fn pair_distance(a: (&str, &[f64]), b: (&str, &[f64])) -> Result<f64> {
    cosine_distance(a.1, b.1).map_err(|e| match e {
        Error::Domain(m) => Error::Domain(format!("{m} (segments `{}`, `{}`)", a.0, b.0)),
        other => other,
    })
}

/// Entry `(a, b)` is the mean cosine distance over all segment pairs with
/// labels `a` and `b`, excluding self-pairs on the diagonal.
pub fn label_distance_matrix<L: Ord + Clone>(
    vectors: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, L>,
) -> Result<DistanceMatrix<L>> {
    let groups = group(vectors, labels)?;
    let members: Vec<&Vec<(&str, &[f64])>> = groups.values().collect();
    let k = members.len();
    let mut values = vec![vec![None; k]; k];
    for a in 0..k {
        for b in a..k {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (i, &u) in members[a].iter().enumerate() {
                let start = if a == b { i + 1 } else { 0 };
                for &v in &members[b][start..] {
                    sum += pair_distance(u, v)?;
                    n += 1;
                }
            }
            let mean = (n > 0).then(|| sum / n as f64);
            values[a][b] = mean;
            values[b][a] = mean;
        }
    }
    Ok(DistanceMatrix {
        labels: groups.into_keys().collect(),
        values,
    })
}

/// Pair-weighted mean cosine distance within and between labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub within: Option<f64>,
    pub between: Option<f64>,
}

pub fn within_between<L: Ord + Clone>(
    vectors: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, L>,
) -> Result<PairSummary> {
    let groups = group(vectors, labels)?;
    let flat: Vec<(usize, (&str, &[f64]))> = groups
        .values()
        .enumerate()
        .flat_map(|(g, m)| m.iter().map(move |&x| (g, x)))
        .collect();
    let (mut ws, mut wn, mut bs, mut bn) = (0.0, 0usize, 0.0, 0usize);
    for (i, &(ga, u)) in flat.iter().enumerate() {
        for &(gb, v) in &flat[i + 1..] {
            let d = pair_distance(u, v)?;
            if ga == gb {
                ws += d;
                wn += 1;
            } else {
                bs += d;
                bn += 1;
            }
        }
    }
    Ok(PairSummary {
        within: (wn > 0).then(|| ws / wn as f64),
        between: (bn > 0).then(|| bs / bn as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map<V: Clone>(items: &[(&str, V)]) -> BTreeMap<String, V> {
        items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(cosine_distance(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn tanh_transform() {
        assert_eq!(latent_viz_transform(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!((latent_viz_transform(&[40.0])[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_give_zero_matrix() {
        let v = vec![0.3, -1.0, 2.0];
        let vectors = map(&[("a", v.clone()), ("b", v.clone()), ("c", v.clone()), ("d", v)]);
        let labels = map(&[("a", 1usize), ("b", 1), ("c", 2), ("d", 2)]);
        let m = label_distance_matrix(&vectors, &labels).unwrap();
        assert!(m.values.iter().flatten().all(|v| v.unwrap().abs() < 1e-15));
    }

    #[test]
    fn three_segments_two_labels_brute_force() {
        let vectors = map(&[("s1", vec![1.0, 0.0]), ("s2", vec![1.0, 1.0]), ("s3", vec![0.0, 1.0])]);
        let labels = map(&[("s1", "A"), ("s2", "A"), ("s3", "B")]);
        let m = label_distance_matrix(&vectors, &labels).unwrap();
        let d12 = 1.0 - 1.0 / 2f64.sqrt();
        let d13 = 1.0;
        let d23 = 1.0 - 1.0 / 2f64.sqrt();
        assert_eq!(m.labels, vec!["A", "B"]);
        assert!((m.get(0, 0).unwrap() - d12).abs() < 1e-15);
        assert!((m.get(0, 1).unwrap() - (d13 + d23) / 2.0).abs() < 1e-15);
        assert_eq!(m.get(1, 1), None);
        let s = within_between(&vectors, &labels).unwrap();
        assert!((s.within.unwrap() - d12).abs() < 1e-15);
    }

    #[test]
    fn unlabeled_and_missing() {
        let vectors = map(&[("a", vec![1.0])]);
        let empty: BTreeMap<String, usize> = BTreeMap::new();
        assert!(label_distance_matrix(&vectors, &empty).unwrap().is_empty());
        let labels = map(&[("zz", 0usize)]);
        assert!(matches!(label_distance_matrix(&vectors, &labels), Err(Error::Input(_))));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let m = DistanceMatrix {
            labels: vec![0usize, 3],
            values: vec![vec![Some(0.25), Some(1.0)], vec![Some(1.0), None]],
        };
        m.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "label,0,3\n0,0.25,1\n3,1,\n");
        assert_eq!(m.contrast_ratio(), Some(4.0));
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.1f64..2.0, 3)
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(x in vec_strategy(), y in vec_strategy(), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            let d = cosine_distance(&x, &y).unwrap();
            prop_assert!((cosine_distance(&xs, &ys).unwrap() - d).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d));
        }

        #[test]
        fn matrix_symmetric_and_bounded(rows in proptest::collection::vec((vec_strategy(), 0usize..4), 2..20)) {
            let vectors: BTreeMap<String, Vec<f64>> =
                rows.iter().enumerate().map(|(i, (v, _))| (format!("s{i:02}"), v.clone())).collect();
            let labels: BTreeMap<String, usize> =
                rows.iter().enumerate().map(|(i, (_, l))| (format!("s{i:02}"), *l)).collect();
            let m = label_distance_matrix(&vectors, &labels).unwrap();
            for a in 0..m.len() {
                for b in 0..m.len() {
                    prop_assert_eq!(m.get(a, b), m.get(b, a));
                    if let Some(v) = m.get(a, b) {
                        prop_assert!((0.0..=2.0).contains(&v));
                    }
                }
            }
        }
    }
}
