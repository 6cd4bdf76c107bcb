//! Second-order biased random walks (return parameter `p`, in-out parameter `q`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OntologyGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            p: 1.0,
            q: 1.0,
            walk_length: 20,
            walks_per_node: 40,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Input(format!(
                "walk parameters p and q must be positive (p={}, q={})",
                self.p, self.q
            )));
        }
        if self.walk_length == 0 || self.walks_per_node == 0 {
            return Err(Error::Input("walk_length and walks_per_node must be positive".into()));
        }
        Ok(())
    }
}

/// Walks as node indices into the graph they were generated on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkCorpus {
    pub node_ids: Vec<String>,
    pub walks: Vec<Vec<usize>>,
}

/// Normalized transition distribution from `curr`, given the previous node.
///
/// Unnormalized weights are `1/p` back to `prev`, `1` to neighbours of
/// `prev`, and `1/q` otherwise. Without a previous node the step is
/// uniform. An isolated `curr` yields an empty distribution.
pub fn transition_weights(
    graph: &OntologyGraph,
    prev: Option<usize>,
    curr: usize,
    p: f64,
    q: f64,
) -> Vec<(usize, f64)> {
    let nbrs = graph.neighbors(curr);
    let raw: Vec<(usize, f64)> = nbrs
        .iter()
        .map(|&n| {
            let w = match prev {
                None => 1.0,
                Some(prev) if n == prev => 1.0 / p,
                Some(prev) if graph.are_adjacent(n, prev) => 1.0,
                Some(_) => 1.0 / q,
            };
            (n, w)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(|(n, w)| (n, w / total)).collect()
}

fn sample(dist: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(n, w) in dist {
        acc += w;
        if u < acc {
            return n;
        }
    }
    dist.last().expect("non-empty distribution").0
}

/// `walks_per_node` walks from every node. Walk `(round, node)` draws from
/// its own ChaCha stream, so the corpus depends only on the seed.
pub fn generate_walks(graph: &OntologyGraph, params: &WalkParams, seed: u64) -> Result<WalkCorpus> {
    params.validate()?;
    let n = graph.node_count();
    let mut walks = Vec::with_capacity(n * params.walks_per_node);
    for round in 0..params.walks_per_node {
        for start in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((round * n + start) as u64);
            let mut walk = Vec::with_capacity(params.walk_length);
            walk.push(start);
            while walk.len() < params.walk_length {
                let curr = walk[walk.len() - 1];
                let prev = walk.len().checked_sub(2).map(|i| walk[i]);
                let dist = transition_weights(graph, prev, curr, params.p, params.q);
                if dist.is_empty() {
                    break;
                }
                walk.push(sample(&dist, &mut rng));
            }
            walks.push(walk);
        }
    }
    Ok(WalkCorpus {
        node_ids: graph.nodes().iter().map(|n| n.id.clone()).collect(),
        walks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::OntologyNode;

    fn graph(n: usize, edges: &[(usize, usize)]) -> OntologyGraph {
        let nodes = (0..n)
            .map(|i| OntologyNode {
                id: format!("n{i}"),
                name: String::new(),
            })
            .collect();
        OntologyGraph::from_edges(nodes, edges).unwrap()
    }

    #[test]
    fn unbiased_is_uniform() {
        let g = graph(5, &[(0, 1), (1, 2), (1, 3), (3, 4), (2, 3)]);
        let d = transition_weights(&g, Some(0), 1, 1.0, 1.0);
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|(_, w)| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn path_graph_biased() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let d = transition_weights(&g, Some(0), 1, 2.0, 0.5);
        assert_eq!(d, vec![(0, 0.2), (2, 0.8)]);
    }

    #[test]
    fn first_step_uniform() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        let d = transition_weights(&g, None, 0, 3.0, 0.25);
        assert!(d.iter().all(|(_, w)| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn isolated_node_terminates() {
        let g = graph(3, &[(0, 1)]);
        assert!(transition_weights(&g, None, 2, 1.0, 1.0).is_empty());
        let c = generate_walks(&g, &WalkParams { walks_per_node: 3, ..Default::default() }, 1).unwrap();
        assert_eq!(c.walks.len(), 9);
        for w in c.walks.iter().filter(|w| w[0] == 2) {
            assert_eq!(w.len(), 1);
        }
        for w in c.walks.iter().filter(|w| w[0] != 2) {
            assert_eq!(w.len(), 20);
        }
    }

    #[test]
    fn walks_deterministic_and_adjacent() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        let params = WalkParams {
            p: 0.5,
            q: 2.0,
            walk_length: 15,
            walks_per_node: 5,
        };
        let a = generate_walks(&g, &params, 42).unwrap();
        let b = generate_walks(&g, &params, 42).unwrap();
        let c = generate_walks(&g, &params, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for w in &a.walks {
            for pair in w.windows(2) {
                assert!(g.are_adjacent(pair[0], pair[1]));
            }
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let g = graph(7, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (5, 6), (4, 6)]);
        for curr in 0..7 {
            for &prev in g.neighbors(curr) {
                let s: f64 = transition_weights(&g, Some(prev), curr, 0.3, 4.0)
                    .iter()
                    .map(|(_, w)| w)
                    .sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let g = graph(2, &[(0, 1)]);
        let bad = WalkParams { p: 0.0, ..Default::default() };
        assert!(matches!(generate_walks(&g, &bad, 0), Err(Error::Input(_))));
    }
}
