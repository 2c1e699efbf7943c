use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{energy, ChainGraph, EnergyParams, FlowGraph, Labeling, RefineError};

/// Alpha-expansion output with the energy after every accepted move.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaResult {
    pub labeling: Labeling,
    pub energy: f64,
    /// Starting energy followed by the energy after each improving move.
    pub trace: Vec<f64>,
    pub cycles: usize,
}

/// Multi-label minimization by expansion moves, each solved exactly as a
/// binary min-cut. Starts from the network's labels and cycles over the
/// labels in a seeded order until a full cycle brings no decrease.
pub fn refine_alpha_expansion(
    graph: &ChainGraph,
    params: &EnergyParams,
    seed: u64,
) -> Result<AlphaResult, RefineError> {
    let labels = graph.label_count;
    if labels == 0 {
        return Err(RefineError::NoLabels);
    }
    let mut order: Vec<u32> = (1..=labels as u32).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Start from a valid labeling: out-of-range queried labels become 1.
    let mut current = graph.queried_labeling();
    for l in current.chains.iter_mut().flatten() {
        if *l == 0 || *l as usize > labels {
            *l = 1;
        }
    }
    let mut e = energy(&current, graph, params);
    let mut trace = vec![e];
    let mut cycles = 0;
    loop {
        cycles += 1;
        let mut improved = false;
        for &alpha in &order {
            let cand = expansion_move(graph, params, &current, alpha);
            let ce = energy(&cand, graph, params);
            if ce < e - 1e-12 * e.abs().max(1.0) {
                current = cand;
                e = ce;
                trace.push(e);
                improved = true;
            }
        }
        if !improved {
            return Ok(AlphaResult {
                labeling: current,
                energy: e,
                trace,
                cycles,
            });
        }
    }
}

/// Best labeling reachable from `current` by switching any subset of nodes
/// to `alpha`. Source side keeps the current label, sink side takes `alpha`.
fn expansion_move(
    graph: &ChainGraph,
    params: &EnergyParams,
    current: &Labeling,
    alpha: u32,
) -> Labeling {
    let offsets: Vec<usize> = graph
        .chains
        .iter()
        .scan(0, |acc, c| {
            let o = *acc;
            *acc += c.len();
            Some(o)
        })
        .collect();
    let n = graph.node_count();
    let mut g = FlowGraph::new(n);
    let (s, t) = (g.source(), g.sink());
    // Unary costs per node: [keep, switch].
    let mut unary = vec![[0.0f64; 2]; n];
    for (c, nodes) in graph.chains.iter().enumerate() {
        for (i, node) in nodes.iter().enumerate() {
            let d = |l: u32| if l == node.queried { 0.0 } else { params.c_d };
            unary[offsets[c] + i] = [d(current.chains[c][i]), d(alpha)];
        }
    }
    let potts = |a: u32, b: u32| if a == b { 0.0 } else { params.c_s };
    for ((c, i), (_, j)) in graph.edges() {
        let (p, q) = (offsets[c] + i, offsets[c] + j);
        let (fp, fq) = (current.chains[c][i], current.chains[c][j]);
        let a = potts(fp, fq);
        let b = potts(fp, alpha);
        let cc = potts(alpha, fq);
        let d = potts(alpha, alpha);
        // E = A + (C - A) x_p + (D - C) x_q + (B + C - A - D)(1 - x_p) x_q
        unary[p][1] += cc - a;
        unary[q][1] += d - cc;
        g.add_edge(p, q, (b + cc - a - d).max(0.0));
    }
    for (p, u) in unary.iter().enumerate() {
        let [keep, switch] = *u;
        // Cutting s -> p puts p on the sink side (switch).
        if switch > keep {
            g.add_edge(s, p, switch - keep);
        } else {
            g.add_edge(p, t, keep - switch);
        }
    }
    g.max_flow();
    let keep = g.source_side();
    let mut next = current.clone();
    for (c, chain) in next.chains.iter_mut().enumerate() {
        for (i, l) in chain.iter_mut().enumerate() {
            if !keep[offsets[c] + i] {
                *l = alpha;
            }
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::{brute_force_refine, refine_dp};
    use rand::Rng;

    #[test]
    fn single_label() {
        let g = ChainGraph::from_labels(vec![vec![1, 1, 1], vec![1]], 1);
        let r = refine_alpha_expansion(&g, &EnergyParams::default(), 0).unwrap();
        assert_eq!(r.labeling.chains, vec![vec![1, 1, 1], vec![1]]);
        assert_eq!(r.energy, 0.0);
        // Queried labels outside the label set always pay the data cost.
        let g = ChainGraph::from_labels(vec![vec![1, 2, 2, 1]], 1);
        let r = refine_alpha_expansion(&g, &EnergyParams::default(), 0).unwrap();
        assert_eq!(r.labeling.chains[0], [1; 4]);
        assert_eq!(r.energy, 2.0);
    }

    #[test]
    fn isolated_flip() {
        let g = ChainGraph::from_labels(vec![vec![1, 1, 2, 1, 1]], 2);
        let r = refine_alpha_expansion(&g, &EnergyParams::default(), 3).unwrap();
        assert_eq!(r.labeling.chains[0], [1; 5]);
        assert_eq!(r.trace, [176.0, 1.0]);
    }

    #[test]
    fn bounds_against_exact_solvers() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut equal = 0;
        for trial in 0..300 {
            let labels = rng.random_range(1..=4usize);
            let n = rng.random_range(1..=10usize);
            let mut chains = vec![Vec::new()];
            for _ in 0..n {
                if rng.random::<f64>() < 0.2 {
                    chains.push(Vec::new());
                }
                chains.last_mut().unwrap().push(rng.random_range(1..=labels as u32));
            }
            chains.retain(|c| !c.is_empty());
            let g = ChainGraph::from_labels(chains, labels);
            let p = EnergyParams {
                c_d: rng.random_range(0.0..100.0),
                c_s: rng.random_range(0.0..100.0),
            };
            let opt = refine_dp(&g, &p).unwrap().energy;
            assert!((brute_force_refine(&g, &p).unwrap().energy - opt).abs() < 1e-9);
            let r = refine_alpha_expansion(&g, &p, trial).unwrap();
            assert!(r.energy >= opt - 1e-9, "{} < {opt}", r.energy);
            assert!(r.energy <= 2.0 * opt + 1e-9, "{} > 2 * {opt}", r.energy);
            assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!((energy(&r.labeling, &g, &p) - r.energy).abs() < 1e-9);
            if (r.energy - opt).abs() < 1e-9 {
                equal += 1;
            }
        }
        assert!(equal >= 285, "{equal}");
    }
}
