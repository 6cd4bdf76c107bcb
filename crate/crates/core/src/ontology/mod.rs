//! Sound-category ontology as an undirected graph, and Node2Vec class
//! embeddings learned over it.

mod skipgram;
mod walk;

pub use skipgram::{train_skipgram, NodeEmbeddings, SkipGramParams, SkipGramReport};
pub use walk::{generate_walks, transition_weights, WalkCorpus, WalkParams};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventVocabulary;
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyNode {
    pub id: String,
    pub name: String,
}

/// One record of the published ontology JSON; other fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OntologyRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub child_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct OntologyGraph {
    nodes: Vec<OntologyNode>,
    index: HashMap<String, usize>,
    /// Sorted neighbour lists.
    adjacency: Vec<Vec<usize>>,
}

impl OntologyGraph {
    /// Builds an undirected graph; self-loops are dropped and duplicate
    /// edges collapse to one.
    pub fn from_edges(nodes: Vec<OntologyNode>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate ontology node id `{}`", n.id)));
            }
        }
        let mut sets = vec![BTreeSet::new(); nodes.len()];
        for &(a, b) in edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::Validation(format!("edge ({a}, {b}) references a missing node")));
            }
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        Ok(OntologyGraph {
            nodes,
            index,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn from_records(records: &[OntologyRecord]) -> Result<Self> {
        let nodes: Vec<OntologyNode> = records
            .iter()
            .map(|r| OntologyNode {
                id: r.id.clone(),
                name: r.name.clone(),
            })
            .collect();
        let lookup: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut edges = Vec::new();
        let mut dangling = BTreeSet::new();
        for (parent, r) in records.iter().enumerate() {
            for child in &r.child_ids {
                match lookup.get(child.as_str()) {
                    Some(&c) => edges.push((parent, c)),
                    None => {
                        dangling.insert(format!("{} -> {child}", r.id));
                    }
                }
            }
        }
        if !dangling.is_empty() {
            return Err(Error::Validation(format!(
                "dangling child ids: {}",
                dangling.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Self::from_edges(nodes, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> &[OntologyNode] {
        &self.nodes
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }
}

/// Parses the ontology JSON (an array of objects with `id`, `name`, `child_ids`).
pub fn load_ontology(path: &Path) -> Result<OntologyGraph> {
    let records: Vec<OntologyRecord> = serde_json::from_reader(io::open(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    OntologyGraph::from_records(&records)
}

/// `dim × n_classes` matrix whose column `c` is the input embedding of
/// vocabulary class `c`.
pub fn class_matrix(
    emb: &NodeEmbeddings,
    graph: &OntologyGraph,
    vocab: &EventVocabulary,
) -> Result<Array2<f64>> {
    let missing: Vec<&str> = vocab
        .entries()
        .iter()
        .filter(|e| graph.index_of(&e.class_id).is_none())
        .map(|e| e.class_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "{} vocabulary classes missing from the ontology: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let dim = emb.dim();
    let mut out = Array2::zeros((dim, vocab.len()));
    for (c, entry) in vocab.entries().iter().enumerate() {
        let node = graph.index_of(&entry.class_id).expect("checked above");
        out.column_mut(c).assign(&emb.input.row(node));
    }
    Ok(out)
}

/// Writes `node_id,e0,...` with the input vectors.
pub fn write_embeddings_csv(path: &Path, emb: &NodeEmbeddings) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    let header =
        std::iter::once("node_id".to_string()).chain((0..emb.dim()).map(|i| format!("e{i}")));
    w.write_record(header)?;
    for (id, row) in emb.node_ids.iter().zip(emb.input.rows()) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| io::fmt_f64(*v))))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `node_id,e0,...` file back into a `dim × n_classes` class matrix.
pub fn read_class_matrix_csv(path: &Path, vocab: &EventVocabulary) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(io::open(path)?);
    let dim = rdr.headers()?.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Parse(format!("{}: no embedding columns", path.display())));
    }
    let mut vectors = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if v.len() != dim {
            return Err(Error::Shape(format!("{}: ragged row for `{}`", path.display(), &rec[0])));
        }
        vectors.insert(rec[0].to_string(), v);
    }
    let mut out = Array2::zeros((dim, vocab.len()));
    let mut missing = Vec::new();
    for (c, entry) in vocab.entries().iter().enumerate() {
        match vectors.get(&entry.class_id) {
            Some(v) => out
                .column_mut(c)
                .iter_mut()
                .zip(v)
                .for_each(|(o, x)| *o = *x),
            None => missing.push(entry.class_id.as_str()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "classes missing from {}: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{VocabEntry, N_CLASSES};

    fn rec(id: &str, children: &[&str]) -> OntologyRecord {
        OntologyRecord {
            id: id.into(),
            name: id.to_uppercase(),
            child_ids: children.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn single_link_one_edge() {
        let g = OntologyGraph::from_records(&[rec("a", &["b"]), rec("b", &[])]).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(g.are_adjacent(0, 1) && g.are_adjacent(1, 0));
    }

    #[test]
    fn duplicate_children_deduplicated() {
        let g = OntologyGraph::from_records(&[rec("a", &["b", "b"]), rec("b", &["a"]), rec("c", &[])])
            .unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.neighbors(2).is_empty());
    }

    #[test]
    fn self_loops_dropped() {
        let g = OntologyGraph::from_records(&[rec("a", &["a", "b"]), rec("b", &[])]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn dangling_children_listed() {
        let err = OntologyGraph::from_records(&[rec("a", &["x", "b"]), rec("b", &["y"])]).unwrap_err();
        match err {
            Error::Validation(msg) => {
                assert!(msg.contains("a -> x") && msg.contains("b -> y"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn loads_json_with_extra_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ontology.json");
        std::fs::write(
            &p,
            r#"[{"id":"/m/1","name":"Music","description":"x","child_ids":["/m/2"],"restrictions":[]},
                {"id":"/m/2","name":"Guitar","child_ids":[]}]"#,
        )
        .unwrap();
        let g = load_ontology(&p).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        std::fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_ontology(&p), Err(Error::Parse(_))));
    }

    fn vocab_with(ids: impl Fn(usize) -> String) -> EventVocabulary {
        EventVocabulary::new(
            (0..N_CLASSES)
                .map(|i| VocabEntry {
                    index: i,
                    class_id: ids(i),
                    display_name: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn embeddings_for(n: usize) -> (OntologyGraph, NodeEmbeddings) {
        let nodes: Vec<_> = (0..n)
            .map(|i| OntologyNode {
                id: format!("n{i}"),
                name: String::new(),
            })
            .collect();
        let g = OntologyGraph::from_edges(nodes, &[]).unwrap();
        let emb = NodeEmbeddings {
            node_ids: (0..n).map(|i| format!("n{i}")).collect(),
            input: Array2::from_shape_fn((n, 5), |(i, j)| (i * 10 + j) as f64),
            context: Array2::zeros((n, 5)),
        };
        (g, emb)
    }

    #[test]
    fn class_matrix_shape_and_order() {
        let (g, emb) = embeddings_for(N_CLASSES + 3);
        let vocab = vocab_with(|i| format!("n{}", i + 3));
        let m = class_matrix(&emb, &g, &vocab).unwrap();
        assert_eq!(m.dim(), (5, N_CLASSES));
        for c in 0..N_CLASSES {
            assert_eq!(m[[0, c]], ((c + 3) * 10) as f64);
        }
        // Permuting the vocabulary permutes the columns identically.
        let perm = |i: usize| (i * 7) % N_CLASSES;
        let vocab_p = vocab_with(|i| format!("n{}", perm(i) + 3));
        let mp = class_matrix(&emb, &g, &vocab_p).unwrap();
        for c in 0..N_CLASSES {
            assert_eq!(mp.column(c), m.column(perm(c)));
        }

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n2v.csv");
        write_embeddings_csv(&p, &emb).unwrap();
        assert_eq!(read_class_matrix_csv(&p, &vocab).unwrap(), m);
    }

    #[test]
    fn class_matrix_lists_missing() {
        let (g, emb) = embeddings_for(10);
        let vocab = vocab_with(|i| format!("n{i}"));
        match class_matrix(&emb, &g, &vocab) {
            Err(Error::Validation(msg)) => assert!(msg.contains("n10") && msg.starts_with("511")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
