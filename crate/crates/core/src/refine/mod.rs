//! Per-stroke label smoothing by minimizing a Potts energy on the stroke
//! chains.
//!
//! Every stroke point is a node whose neighbors are the previous and next
//! points of the same stroke. A labeling pays `c_d` at each node whose label
//! differs from the label the network predicted there, and `c_s` at each
//! edge whose endpoints disagree. Because the graph is a union of paths the
//! minimum is found exactly by dynamic programming; alpha-expansion with
//! max-flow moves is kept as an independent solver.

mod alpha;
mod maxflow;

pub use alpha::{refine_alpha_expansion, AlphaResult};
pub use maxflow::FlowGraph;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sketch::{PointLabels, Sketch};

/// Node and label limits of [`brute_force_refine`].
pub const BRUTE_FORCE_MAX_NODES: usize = 12;
pub const BRUTE_FORCE_MAX_LABELS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("{got} point labels for a sketch with {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("point {node} has background label 0")]
    BackgroundLabel { node: usize },
    #[error("need at least one part label")]
    NoLabels,
    #[error("{nodes} nodes and {labels} labels exceed the exhaustive-search limit")]
    TooLarge { nodes: usize, labels: usize },
    #[error("labeling does not match the graph: {0}")]
    InvalidLabeling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Cost of disagreeing with the network's label at a node.
    pub c_d: f64,
    /// Cost of a label change between neighboring points.
    pub c_s: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self { c_d: 1.0, c_s: 88.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainNode {
    /// Label read from the segmentation map (argmax over part channels).
    pub queried: u32,
    /// Channel scores at the node, carried along but not used by the solvers.
    pub scores: Option<Vec<f32>>,
}

/// One chain per stroke. Part labels are `1..=label_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGraph {
    pub chains: Vec<Vec<ChainNode>>,
    pub label_count: usize,
}

/// One label per node, grouped by chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labeling {
    pub chains: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub labeling: Labeling,
    pub energy: f64,
}

impl Labeling {
    pub fn flat(&self) -> Vec<u32> {
        self.chains.iter().flatten().copied().collect()
    }
}

impl ChainGraph {
    /// Chains from per-chain queried labels, without scores.
    pub fn from_labels(chains: Vec<Vec<u32>>, label_count: usize) -> Self {
        Self {
            chains: chains
                .into_iter()
                .map(|c| c.into_iter().map(|q| ChainNode { queried: q, scores: None }).collect())
                .collect(),
            label_count,
        }
    }

    /// Graph over the points of a sampled segmentation, `k` counting the
    /// background.
    pub fn from_point_labels(points: &PointLabels, k: usize) -> Self {
        Self {
            chains: points
                .labels
                .iter()
                .zip(&points.scores)
                .map(|(ls, ss)| {
                    ls.iter()
                        .zip(ss)
                        .map(|(&q, s)| ChainNode {
                            queried: q,
                            scores: Some(s.clone()),
                        })
                        .collect()
                })
                .collect(),
            label_count: k.saturating_sub(1),
        }
    }

    pub fn node_count(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.chains.iter().map(|c| c.len().saturating_sub(1)).sum()
    }

    /// `(chain, i)` to `(chain, i + 1)` for every edge.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), (usize, usize))> + '_ {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(c, nodes)| (1..nodes.len()).map(move |i| ((c, i - 1), (c, i))))
    }

    /// The network's labels taken as a labeling.
    pub fn queried_labeling(&self) -> Labeling {
        Labeling {
            chains: self
                .chains
                .iter()
                .map(|c| c.iter().map(|n| n.queried).collect())
                .collect(),
        }
    }

    fn check(&self, labeling: &Labeling) -> Result<(), RefineError> {
        if labeling.chains.len() != self.chains.len()
            || labeling
                .chains
                .iter()
                .zip(&self.chains)
                .any(|(l, c)| l.len() != c.len())
        {
            return Err(RefineError::InvalidLabeling("chain lengths differ".into()));
        }
        Ok(())
    }
}

/// One chain per stroke of `sketch`, labeled with `point_labels` in stroke
/// and point order. `k` counts the background label.
pub fn build_chain_graph(
    sketch: &Sketch,
    point_labels: &[u32],
    k: usize,
) -> Result<ChainGraph, RefineError> {
    let expected = sketch.point_count();
    if point_labels.len() != expected {
        return Err(RefineError::LengthMismatch {
            expected,
            got: point_labels.len(),
        });
    }
    if let Some(node) = point_labels.iter().position(|&l| l == 0) {
        return Err(RefineError::BackgroundLabel { node });
    }
    let mut rest = point_labels;
    let chains = sketch
        .strokes
        .iter()
        .map(|s| {
            let (head, tail) = rest.split_at(s.len());
            rest = tail;
            head.to_vec()
        })
        .collect();
    Ok(ChainGraph::from_labels(chains, k.saturating_sub(1)))
}

/// Data plus smoothness cost of `labeling`.
pub fn energy(labeling: &Labeling, graph: &ChainGraph, params: &EnergyParams) -> f64 {
    let mut e = 0.0;
    for (labels, nodes) in labeling.chains.iter().zip(&graph.chains) {
        for (i, (&l, n)) in labels.iter().zip(nodes).enumerate() {
            if l != n.queried {
                e += params.c_d;
            }
            if i > 0 && labels[i - 1] != l {
                e += params.c_s;
            }
        }
    }
    e
}

/// Checked variant of [`energy`].
pub fn try_energy(
    labeling: &Labeling,
    graph: &ChainGraph,
    params: &EnergyParams,
) -> Result<f64, RefineError> {
    graph.check(labeling)?;
    Ok(energy(labeling, graph, params))
}

/// Exact minimizer: a Viterbi pass per chain where a Potts transition only
/// needs "stay" or "switch from the best previous label". Ties go to the
/// lowest label, both at the last node and at each backtracking step.
pub fn refine_dp(graph: &ChainGraph, params: &EnergyParams) -> Result<RefineResult, RefineError> {
    let labels = graph.label_count;
    if labels == 0 {
        return Err(RefineError::NoLabels);
    }
    let data = |n: &ChainNode, l: usize| if n.queried as usize == l + 1 { 0.0 } else { params.c_d };
    let mut out = Vec::with_capacity(graph.chains.len());
    let mut total = 0.0;
    for nodes in &graph.chains {
        if nodes.is_empty() {
            out.push(Vec::new());
            continue;
        }
        // cost[i * labels + l]: best energy of nodes 0..=i with node i at l.
        let mut cost = vec![0.0f64; nodes.len() * labels];
        for l in 0..labels {
            cost[l] = data(&nodes[0], l);
        }
        for i in 1..nodes.len() {
            let (prev, cur) = cost.split_at_mut(i * labels);
            let prev = &prev[(i - 1) * labels..];
            let best = prev.iter().copied().fold(f64::INFINITY, f64::min);
            for l in 0..labels {
                cur[l] = data(&nodes[i], l) + prev[l].min(best + params.c_s);
            }
        }
        let last = &cost[(nodes.len() - 1) * labels..];
        let mut l = argmin(last.iter().copied());
        total += last[l];
        let mut chain = vec![0u32; nodes.len()];
        chain[nodes.len() - 1] = l as u32 + 1;
        for i in (1..nodes.len()).rev() {
            let prev = &cost[(i - 1) * labels..i * labels];
            l = argmin(
                prev.iter()
                    .enumerate()
                    .map(|(lp, &c)| if lp == l { c } else { c + params.c_s }),
            );
            chain[i - 1] = l as u32 + 1;
        }
        out.push(chain);
    }
    Ok(RefineResult {
        labeling: Labeling { chains: out },
        energy: total,
    })
}

/// Index of the first minimum.
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Exhaustive search over every labeling; only for tiny graphs. Labelings
/// are visited in lexicographic order and the first minimum is kept.
pub fn brute_force_refine(
    graph: &ChainGraph,
    params: &EnergyParams,
) -> Result<RefineResult, RefineError> {
    let nodes = graph.node_count();
    let labels = graph.label_count;
    if nodes > BRUTE_FORCE_MAX_NODES || labels > BRUTE_FORCE_MAX_LABELS {
        return Err(RefineError::TooLarge { nodes, labels });
    }
    if labels == 0 && nodes > 0 {
        return Err(RefineError::NoLabels);
    }
    let queried: Vec<u32> = graph.chains.iter().flatten().map(|n| n.queried).collect();
    // linked[i]: node i has an edge to node i - 1.
    let linked: Vec<bool> = graph
        .chains
        .iter()
        .flat_map(|c| (0..c.len()).map(|i| i > 0))
        .collect();
    let flat_energy = |digits: &[u32]| {
        let mut e = 0.0;
        for i in 0..digits.len() {
            if digits[i] != queried[i] {
                e += params.c_d;
            }
            if linked[i] && digits[i - 1] != digits[i] {
                e += params.c_s;
            }
        }
        e
    };
    let mut digits = vec![1u32; nodes];
    let mut best = digits.clone();
    let mut best_e = flat_energy(&digits);
    'search: loop {
        // Odometer increment, last digit fastest.
        let mut i = nodes;
        loop {
            if i == 0 {
                break 'search;
            }
            i -= 1;
            if (digits[i] as usize) < labels {
                digits[i] += 1;
                break;
            }
            digits[i] = 1;
        }
        let e = flat_energy(&digits);
        if e < best_e {
            best.copy_from_slice(&digits);
            best_e = e;
        }
    }
    let mut rest = best.as_slice();
    let chains = graph
        .chains
        .iter()
        .map(|c| {
            let (head, tail) = rest.split_at(c.len());
            rest = tail;
            head.to_vec()
        })
        .collect();
    Ok(RefineResult {
        labeling: Labeling { chains },
        energy: best_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point2, Stroke};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: EnergyParams = EnergyParams { c_d: 1.0, c_s: 88.0 };

    fn sketch_with(lens: &[usize]) -> Sketch {
        let mut s = Sketch::new("t", 100.0, 100.0);
        for &n in lens {
            s.strokes.push(Stroke::new(
                (0..n).map(|i| Point2::new(i as f64, 0.0)).collect(),
            ));
        }
        s
    }

    fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, max_labels: usize) -> ChainGraph {
        let labels = rng.random_range(1..=max_labels);
        let mut left = rng.random_range(0..=max_nodes);
        let mut chains = Vec::new();
        while left > 0 {
            let n = rng.random_range(1..=left);
            left -= n;
            chains.push((0..n).map(|_| rng.random_range(1..=labels as u32)).collect());
        }
        ChainGraph::from_labels(chains, labels)
    }

    #[test]
    fn graph_counts() {
        let g = build_chain_graph(&sketch_with(&[5, 3]), &[1; 8], 3).unwrap();
        assert_eq!((g.chains.len(), g.node_count(), g.edge_count()), (2, 8, 6));
        let g = build_chain_graph(&sketch_with(&[1]), &[2], 3).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(
            build_chain_graph(&sketch_with(&[2]), &[1], 3),
            Err(RefineError::LengthMismatch { expected: 2, got: 1 })
        );
        assert_eq!(
            build_chain_graph(&sketch_with(&[2]), &[1, 0], 3),
            Err(RefineError::BackgroundLabel { node: 1 })
        );
    }

    #[test]
    fn edges_stay_inside_strokes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_graph(&mut rng, 30, 3);
            let mut n = 0;
            for ((c0, i0), (c1, i1)) in g.edges() {
                assert_eq!(c0, c1);
                assert_eq!(i0 + 1, i1);
                assert!(i1 < g.chains[c0].len());
                n += 1;
            }
            assert_eq!(n, g.edge_count());
        }
    }

    #[test]
    fn hand_evaluated_energies() {
        let mut q = vec![1u32; 10];
        q[4] = 2;
        let g = ChainGraph::from_labels(vec![q.clone()], 2);
        let all_a = Labeling { chains: vec![vec![1; 10]] };
        assert_eq!(energy(&all_a, &g, &P), 1.0);
        assert_eq!(energy(&g.queried_labeling(), &g, &P), 176.0);
        let uniform = ChainGraph::from_labels(vec![vec![2; 4], vec![1; 3]], 2);
        assert_eq!(energy(&uniform.queried_labeling(), &uniform, &P), 0.0);
    }

    #[test]
    fn energy_matches_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g = random_graph(&mut rng, 20, 4);
            let labeling = Labeling {
                chains: g
                    .chains
                    .iter()
                    .map(|c| c.iter().map(|_| rng.random_range(1..=g.label_count as u32)).collect())
                    .collect(),
            };
            let p = EnergyParams {
                c_d: rng.random_range(0.0..5.0),
                c_s: rng.random_range(0.0..5.0),
            };
            let flat_l = labeling.flat();
            let flat_q: Vec<u32> = g.chains.iter().flatten().map(|n| n.queried).collect();
            let mut want: f64 = flat_l
                .iter()
                .zip(&flat_q)
                .filter(|(a, b)| a != b)
                .count() as f64
                * p.c_d;
            for ((c0, i0), (c1, i1)) in g.edges() {
                if labeling.chains[c0][i0] != labeling.chains[c1][i1] {
                    want += p.c_s;
                }
            }
            assert!((energy(&labeling, &g, &p) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_flip_is_smoothed() {
        let g = ChainGraph::from_labels(vec![vec![1, 1, 2, 1, 1]], 2);
        let r = refine_dp(&g, &P).unwrap();
        assert_eq!(r.labeling.chains[0], [1; 5]);
        assert_eq!(r.energy, 1.0);
        assert_eq!(brute_force_refine(&g, &P).unwrap().energy, 1.0);
    }

    #[test]
    fn long_run_survives() {
        let mut q = vec![1u32; 400];
        q[100..300].iter_mut().for_each(|v| *v = 2);
        let g = ChainGraph::from_labels(vec![q.clone()], 2);
        let r = refine_dp(&g, &P).unwrap();
        assert_eq!(r.labeling.chains[0], q);
        assert_eq!(r.energy, 176.0);
        // Scaled-down twin by full enumeration of a 20-node, 2-label chain:
        // a run of 10 survives exactly when 2·c_s < 10·c_d.
        let mut q = vec![1u32; 20];
        q[5..15].iter_mut().for_each(|v| *v = 2);
        let g = ChainGraph::from_labels(vec![q.clone()], 2);
        for (c_s, survives) in [(4.4, true), (8.8, false)] {
            let p = EnergyParams { c_d: 1.0, c_s };
            let mut best = (f64::INFINITY, 0u32);
            for mask in 0u32..1 << 20 {
                let l = Labeling {
                    chains: vec![(0..20).map(|i| 1 + (mask >> (19 - i) & 1)).collect()],
                };
                let e = energy(&l, &g, &p);
                if e < best.0 {
                    best = (e, mask);
                }
            }
            let dp = refine_dp(&g, &p).unwrap();
            assert!((dp.energy - best.0).abs() < 1e-9);
            assert_eq!(dp.labeling.chains[0] == q, survives);
        }
    }

    #[test]
    fn zero_smoothness_keeps_queried() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EnergyParams { c_d: 1.0, c_s: 0.0 };
        for _ in 0..50 {
            let g = random_graph(&mut rng, 40, 5);
            let r = refine_dp(&g, &p).unwrap();
            assert_eq!(r.labeling, g.queried_labeling());
            assert_eq!(r.energy, 0.0);
        }
    }

    #[test]
    fn zero_data_cost_gives_uniform_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = EnergyParams { c_d: 0.0, c_s: 1.0 };
        for _ in 0..50 {
            let g = random_graph(&mut rng, 40, 5);
            let r = refine_dp(&g, &p).unwrap();
            for c in &r.labeling.chains {
                assert!(c.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn brute_force_limits_and_trivia() {
        let empty = ChainGraph::from_labels(vec![], 3);
        let r = brute_force_refine(&empty, &P).unwrap();
        assert_eq!((r.labeling.chains.len(), r.energy), (0, 0.0));
        let one = ChainGraph::from_labels(vec![vec![3]], 4);
        let r = brute_force_refine(&one, &P).unwrap();
        assert_eq!((r.labeling.chains[0][0], r.energy), (3, 0.0));
        let big = ChainGraph::from_labels(vec![vec![1; 13]], 2);
        assert!(matches!(brute_force_refine(&big, &P), Err(RefineError::TooLarge { .. })));
        let wide = ChainGraph::from_labels(vec![vec![1; 2]], 5);
        assert!(matches!(brute_force_refine(&wide, &P), Err(RefineError::TooLarge { .. })));
        assert_eq!(refine_dp(&ChainGraph::from_labels(vec![vec![1]], 0), &P), Err(RefineError::NoLabels));
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 12, 4);
            let p = EnergyParams { c_d: rng.random_range(0.0..100.0), c_s: rng.random_range(0.0..100.0) };
            let dp = refine_dp(&g, &p).unwrap();
            let bf = brute_force_refine(&g, &p).unwrap();
            prop_assert!((dp.energy - bf.energy).abs() <= 1e-9 * bf.energy.max(1.0));
            prop_assert!((energy(&dp.labeling, &g, &p) - dp.energy).abs() <= 1e-9 * dp.energy.max(1.0));
        }

        #[test]
        fn never_worse_than_queried(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 200, 8);
            let dp = refine_dp(&g, &P).unwrap();
            prop_assert!(dp.energy <= energy(&g.queried_labeling(), &g, &P));
        }

        #[test]
        fn chains_are_independent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 60, 4);
            let r = refine_dp(&g, &P).unwrap();
            let mut rev = g.clone();
            rev.chains.reverse();
            let rr = refine_dp(&rev, &P).unwrap();
            let mut back = rr.labeling.chains.clone();
            back.reverse();
            prop_assert_eq!(back, r.labeling.chains);
        }
    }
}
