//! Grid connectivity of a 2D fabric and graph queries over alive links.
//!
//! Links are enumerated layer by layer. Within a layer, the downward column
//! links (boundary layers only) come first, then the links into layer `l + 1`
//! grouped by target scale. Every link goes from a node that precedes its
//! target in layer-major, scale-ascending order, so that order is a
//! topological order of the grid.
//!
//! The queries take an `alive` slice indexed by link id rather than reading
//! the fabric, so pruning can test hypothetical removal sets.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub layer: usize,
    pub scale: usize,
}

impl NodeId {
    pub fn new(layer: usize, scale: usize) -> Self {
        Self { layer, scale }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.layer, self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Next layer, same scale.
    Same,
    /// Next layer, one scale coarser (stride-2 conv).
    Down,
    /// Next layer, one scale finer (conv then ×2 bilinear upsample).
    Up,
    /// Same boundary layer, one scale coarser (stride-2 conv).
    ColumnDown,
}

impl Direction {
    pub fn stride(self) -> usize {
        match self {
            Direction::Down | Direction::ColumnDown => 2,
            Direction::Same | Direction::Up => 1,
        }
    }

    pub fn upsamples(self) -> bool {
        self == Direction::Up
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Same => "same",
            Direction::Down => "down",
            Direction::Up => "up",
            Direction::ColumnDown => "column_down",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub direction: Direction,
}

/// Expected number of links in a full `layers × scales` grid.
pub fn full_link_count(layers: usize, scales: usize) -> usize {
    (layers - 1) * (3 * scales - 2) + 2 * (scales - 1)
}

/// All links of the full grid, in link-id order.
pub fn enumerate_edges(layers: usize, scales: usize) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(full_link_count(layers, scales));
    for l in 0..layers {
        if l == 0 || l == layers - 1 {
            for s in 0..scales - 1 {
                edges.push(Edge {
                    from: NodeId::new(l, s),
                    to: NodeId::new(l, s + 1),
                    direction: Direction::ColumnDown,
                });
            }
        }
        if l + 1 < layers {
            for s in 0..scales {
                let to = NodeId::new(l + 1, s);
                if s > 0 {
                    edges.push(Edge {
                        from: NodeId::new(l, s - 1),
                        to,
                        direction: Direction::Down,
                    });
                }
                edges.push(Edge {
                    from: NodeId::new(l, s),
                    to,
                    direction: Direction::Same,
                });
                if s + 1 < scales {
                    edges.push(Edge {
                        from: NodeId::new(l, s + 1),
                        to,
                        direction: Direction::Up,
                    });
                }
            }
        }
    }
    edges
}

/// Adjacency of the full grid; liveness is supplied per query.
#[derive(Debug, Clone)]
pub struct Grid {
    pub layers: usize,
    pub scales: usize,
    pub edges: Vec<Edge>,
    in_links: Vec<Vec<LinkId>>,
    out_links: Vec<Vec<LinkId>>,
}

impl Grid {
    pub fn new(layers: usize, scales: usize) -> Self {
        let edges = enumerate_edges(layers, scales);
        let n = layers * scales;
        let mut in_links = vec![Vec::new(); n];
        let mut out_links = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out_links[e.from.layer * scales + e.from.scale].push(LinkId(i));
            in_links[e.to.layer * scales + e.to.scale].push(LinkId(i));
        }
        Self {
            layers,
            scales,
            edges,
            in_links,
            out_links,
        }
    }

    pub fn node_count(&self) -> usize {
        self.layers * self.scales
    }

    pub fn index(&self, n: NodeId) -> usize {
        n.layer * self.scales + n.scale
    }

    pub fn node(&self, index: usize) -> NodeId {
        NodeId::new(index / self.scales, index % self.scales)
    }

    pub fn input(&self) -> NodeId {
        NodeId::new(0, 0)
    }

    pub fn output(&self) -> NodeId {
        NodeId::new(self.layers - 1, self.scales - 1)
    }

    pub fn in_links(&self, n: NodeId) -> &[LinkId] {
        &self.in_links[self.index(n)]
    }

    pub fn out_links(&self, n: NodeId) -> &[LinkId] {
        &self.out_links[self.index(n)]
    }

    /// Nodes reachable from the input over alive links.
    pub fn reachable_from_input(&self, alive: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let start = self.index(self.input());
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &l in &self.out_links[u] {
                if !alive[l.0] {
                    continue;
                }
                let v = self.index(self.edges[l.0].to);
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Nodes from which the output is reachable over alive links.
    pub fn reaching_output(&self, alive: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let start = self.index(self.output());
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &l in &self.in_links[u] {
                if !alive[l.0] {
                    continue;
                }
                let v = self.index(self.edges[l.0].from);
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Whether a directed path of alive links joins input to output.
    pub fn connected(&self, alive: &[bool]) -> bool {
        self.reachable_from_input(alive)[self.index(self.output())]
    }

    /// Fixpoint removal of links made useless by earlier removals: a
    /// non-output node with no alive out-link loses its in-links, and a
    /// non-input node with no alive in-link loses its out-links. Updates
    /// `alive` and returns the killed links in the order they died.
    pub fn cascade(&self, alive: &mut [bool]) -> Vec<LinkId> {
        let input = self.index(self.input());
        let output = self.index(self.output());
        let mut killed = Vec::new();
        loop {
            let before = killed.len();
            for u in 0..self.node_count() {
                let has_in = self.in_links[u].iter().any(|l| alive[l.0]);
                let has_out = self.out_links[u].iter().any(|l| alive[l.0]);
                if u != output && !has_out {
                    for &l in &self.in_links[u] {
                        if alive[l.0] {
                            alive[l.0] = false;
                            killed.push(l);
                        }
                    }
                }
                if u != input && !has_in {
                    for &l in &self.out_links[u] {
                        if alive[l.0] {
                            alive[l.0] = false;
                            killed.push(l);
                        }
                    }
                }
            }
            if killed.len() == before {
                return killed;
            }
        }
    }

    /// Alive links that do not lie on any alive input-to-output path.
    pub fn dangling(&self, alive: &[bool]) -> Vec<LinkId> {
        let fwd = self.reachable_from_input(alive);
        let bwd = self.reaching_output(alive);
        self.edges
            .iter()
            .enumerate()
            .filter(|&(i, e)| alive[i] && !(fwd[self.index(e.from)] && bwd[self.index(e.to)]))
            .map(|(i, _)| LinkId(i))
            .collect()
    }

    /// Length in links of the longest alive input-to-output chain whose
    /// resolution never increases (no `Up` links), i.e. the longest plain
    /// downsampling CNN embedded in the fabric. Zero if no such chain is alive.
    pub fn longest_linear_path(&self, alive: &[bool]) -> usize {
        let mut dist: Vec<Option<usize>> = vec![None; self.node_count()];
        dist[self.index(self.input())] = Some(0);
        // Node index order is topological.
        for u in 0..self.node_count() {
            let Some(d) = dist[u] else { continue };
            for &l in &self.out_links[u] {
                let e = &self.edges[l.0];
                if !alive[l.0] || e.direction == Direction::Up {
                    continue;
                }
                let v = self.index(e.to);
                dist[v] = Some(dist[v].map_or(d + 1, |x| x.max(d + 1)));
            }
        }
        dist[self.index(self.output())].unwrap_or(0)
    }

    /// Length of the longest alive input-to-output path with no direction
    /// restriction, or zero when disconnected.
    pub fn longest_path(&self, alive: &[bool]) -> usize {
        let mut dist: Vec<Option<usize>> = vec![None; self.node_count()];
        dist[self.index(self.input())] = Some(0);
        for u in 0..self.node_count() {
            let Some(d) = dist[u] else { continue };
            for &l in &self.out_links[u] {
                if !alive[l.0] {
                    continue;
                }
                let v = self.index(self.edges[l.0].to);
                dist[v] = Some(dist[v].map_or(d + 1, |x| x.max(d + 1)));
            }
        }
        dist[self.index(self.output())].unwrap_or(0)
    }
}
