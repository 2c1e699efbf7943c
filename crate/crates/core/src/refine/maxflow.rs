use std::collections::VecDeque;

/// Residual capacities below this count as saturated.
const CAP_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
}

/// Directed graph with a source and a sink, solved by shortest augmenting
/// paths (Edmonds–Karp).
#[derive(Debug, Clone)]
pub struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl FlowGraph {
    /// `n` inner nodes; the terminals get indices `n` and `n + 1`.
    pub fn new(n: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); n + 2],
            source: n,
            sink: n + 1,
        }
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// Arc `from -> to` with capacity `cap` (and a zero reverse arc).
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        debug_assert!(cap >= 0.0, "negative capacity {cap}");
        if cap <= 0.0 {
            return;
        }
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc { to: from, cap: 0.0 });
    }

    /// Saturates the graph; returns the flow value.
    pub fn max_flow(&mut self) -> f64 {
        let n = self.adj.len();
        let mut total = 0.0;
        loop {
            let mut via = vec![usize::MAX; n];
            let mut queue = VecDeque::from([self.source]);
            via[self.source] = usize::MAX - 1;
            while let Some(u) = queue.pop_front() {
                if u == self.sink {
                    break;
                }
                for &a in &self.adj[u] {
                    let v = self.arcs[a].to;
                    if via[v] == usize::MAX && self.arcs[a].cap > CAP_EPS {
                        via[v] = a;
                        queue.push_back(v);
                    }
                }
            }
            if via[self.sink] == usize::MAX {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = self.sink;
            while v != self.source {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = self.sink;
            while v != self.source {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                v = self.arcs[a ^ 1].to;
            }
            total += push;
        }
    }

    /// After [`FlowGraph::max_flow`]: nodes still reachable from the source.
    pub fn source_side(&self) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        let mut queue = VecDeque::from([self.source]);
        seen[self.source] = true;
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let v = self.arcs[a].to;
                if !seen[v] && self.arcs[a].cap > CAP_EPS {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}
