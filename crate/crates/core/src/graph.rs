//! Undirected weighted graphs in compressed adjacency form and Dijkstra
//! shortest paths with predecessor tracking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Undirected graph with nonnegative edge weights.
#[derive(Debug, Clone, Default)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

/// Incremental edge list used to assemble a [`WeightedGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl GraphBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, edges: Vec::new() }
    }

    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        debug_assert!(a < self.n && b < self.n);
        if a != b {
            self.edges.push((a, b, w));
        }
    }

    pub fn build(self) -> WeightedGraph {
        let mut degree = vec![0usize; self.n + 1];
        for &(a, b, _) in &self.edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; self.n + 1];
        for i in 0..self.n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let m = offsets[self.n];
        let mut targets = vec![0usize; m];
        let mut weights = vec![0.0; m];
        for &(a, b, w) in &self.edges {
            targets[fill[a]] = b;
            weights[fill[a]] = w;
            fill[a] += 1;
            targets[fill[b]] = a;
            weights[fill[b]] = w;
            fill[b] += 1;
        }
        WeightedGraph { offsets, targets, weights }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    cost: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties broken by node index for determinism
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Result of a single- or multi-source shortest path run.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl ShortestPaths {
    /// Node sequence from the source that reached `target` to `target`.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.pred[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }
}

impl WeightedGraph {
    pub fn node_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    /// Dijkstra from a set of seeded sources `(node, initial cost)`.
    ///
    /// Path costs are accumulated left to right along each path, so the
    /// label of a node is the minimum over paths of the sequential sum.
    /// Stops early once `stop_at` is settled.
    pub fn dijkstra_seeded(&self, seeds: &[(usize, f64)], stop_at: Option<usize>) -> ShortestPaths {
        self.dijkstra_avoiding(seeds, stop_at, &[])
    }

    /// As [`Self::dijkstra_seeded`], treating the `avoid` nodes as removed.
    pub fn dijkstra_avoiding(&self, seeds: &[(usize, f64)], stop_at: Option<usize>, avoid: &[usize]) -> ShortestPaths {
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &v in avoid {
            done[v] = true;
        }
        for &(s, c) in seeds {
            if c < dist[s] && !done[s] {
                dist[s] = c;
                heap.push(Entry { cost: c, node: s });
            }
        }
        while let Some(Entry { cost, node }) = heap.pop() {
            if done[node] || cost > dist[node] {
                continue;
            }
            done[node] = true;
            if Some(node) == stop_at {
                break;
            }
            for (next, w) in self.neighbors(node) {
                if done[next] {
                    continue;
                }
                let cand = cost + w;
                if cand < dist[next] {
                    dist[next] = cand;
                    pred[next] = Some(node);
                    heap.push(Entry { cost: cand, node: next });
                }
            }
        }
        ShortestPaths { dist, pred }
    }

    pub fn dijkstra(&self, source: usize, stop_at: Option<usize>) -> ShortestPaths {
        self.dijkstra_seeded(&[(source, 0.0)], stop_at)
    }

    /// Connected component label of every node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(v) = stack.pop() {
                for (u, _) in self.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(n: usize, edges: &[(usize, usize, f64)], s: usize, t: usize) -> f64 {
        fn rec(
            cur: usize,
            t: usize,
            acc: f64,
            seen: &mut Vec<bool>,
            edges: &[(usize, usize, f64)],
            best: &mut f64,
        ) {
            if cur == t {
                *best = best.min(acc);
                return;
            }
            for &(a, b, w) in edges {
                let next = if a == cur {
                    b
                } else if b == cur {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    rec(next, t, acc + w, seen, edges, best);
                    seen[next] = false;
                }
            }
        }
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut best = f64::INFINITY;
        rec(s, t, 0.0, &mut seen, edges, &mut best);
        best
    }

    #[test]
    fn dijkstra_matches_path_enumeration() {
        let edges = [
            (0, 1, 1.5),
            (1, 2, 0.25),
            (0, 3, 2.0),
            (3, 2, 0.125),
            (2, 4, 3.0),
            (1, 4, 5.0),
            (4, 5, 0.5),
            (3, 5, 7.0),
        ];
        let mut b = GraphBuilder::new(6);
        for &(a, c, w) in &edges {
            b.add_edge(a, c, w);
        }
        let g = b.build();
        for s in 0..6 {
            let sp = g.dijkstra(s, None);
            for t in 0..6 {
                assert_eq!(sp.dist[t], brute_force(6, &edges, s, t), "{s}->{t}");
            }
        }
    }

    #[test]
    fn path_reconstruction_and_components() {
        let mut b = GraphBuilder::new(5);
        b.add_edge(0, 1, 1.0);
        b.add_edge(1, 2, 1.0);
        b.add_edge(3, 4, 1.0);
        let g = b.build();
        let sp = g.dijkstra(0, None);
        assert_eq!(sp.path_to(2), Some(vec![0, 1, 2]));
        assert_eq!(sp.path_to(4), None);
        let c = g.components();
        assert_eq!(c[0], c[2]);
        assert_ne!(c[0], c[3]);
    }
}
