//! Depth-limited k-d tree with exact branch-and-bound search.

use super::entry::{EntryStore, Hit, TopM};
use super::IndexEntry;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEPTH: usize = 6;
pub const DEFAULT_LEAF_TARGET: usize = 40;

#[derive(Debug, Clone)]
enum Node {
    /// Left subtree holds values `<= threshold` on `dim`, right holds values `>= threshold`.
    Split {
        dim: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf {
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    store: EntryStore,
    nodes: Vec<Node>,
    /// Entry indices grouped by leaf; leaves own contiguous ranges.
    order: Vec<usize>,
    max_depth: usize,
    leaf_target: usize,
}

impl KdTree {
    pub fn build(entries: Vec<IndexEntry>, max_depth: usize, leaf_target: usize) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.embedding.dim())
            .ok_or(Error::EmptyIndex)?;
        Self::from_store(
            EntryStore::from_entries(dim, entries)?,
            max_depth,
            leaf_target,
        )
    }

    pub fn from_store(store: EntryStore, max_depth: usize, leaf_target: usize) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if leaf_target == 0 {
            return Err(Error::InvalidArgument(
                "leaf_target must be positive".into(),
            ));
        }
        let mut tree = KdTree {
            order: (0..store.len()).collect(),
            store,
            nodes: Vec::new(),
            max_depth,
            leaf_target,
        };
        let n = tree.order.len();
        tree.build_node(0, n, 0);
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        let n = end - start;
        if n <= self.leaf_target || depth >= self.max_depth {
            return id;
        }
        let Some(dim) = self.max_variance_dim(start, end) else {
            return id;
        };
        let store = &self.store;
        self.order[start..end].sort_by(|&a, &b| {
            store.vector(a)[dim]
                .total_cmp(&store.vector(b)[dim])
                .then(a.cmp(&b))
        });
        // Lower median goes left.
        let mid = start + (n - 1) / 2;
        let threshold = self.store.vector(self.order[mid])[dim];
        let left = self.build_node(start, mid + 1, depth + 1);
        let right = self.build_node(mid + 1, end, depth + 1);
        self.nodes[id] = Node::Split {
            dim,
            threshold,
            left,
            right,
        };
        id
    }

    /// Highest-variance dimension (lowest index on ties), or `None` when all points coincide.
    fn max_variance_dim(&self, start: usize, end: usize) -> Option<usize> {
        let dim = self.store.dim();
        let n = (end - start) as f64;
        let mut mean = vec![0.0f64; dim];
        for &i in &self.order[start..end] {
            for (m, v) in mean.iter_mut().zip(self.store.vector(i)) {
                *m += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for &i in &self.order[start..end] {
            for ((s, v), m) in var.iter_mut().zip(self.store.vector(i)).zip(&mean) {
                let d = *v as f64 - m;
                *s += d * d;
            }
        }
        let (best, &best_var) =
            var.iter().enumerate().fold(
                (0, &var[0]),
                |acc, (d, v)| if *v > *acc.1 { (d, v) } else { acc },
            );
        (best_var > 0.0).then_some(best)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn store(&self) -> &EntryStore {
        &self.store
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn leaf_target(&self) -> usize {
        self.leaf_target
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Entry counts of every leaf, left to right.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        fn walk(nodes: &[Node], id: usize, out: &mut Vec<usize>) {
            match nodes[id] {
                Node::Leaf { start, end } => out.push(end - start),
                Node::Split { left, right, .. } => {
                    walk(nodes, left, out);
                    walk(nodes, right, out);
                }
            }
        }
        walk(&self.nodes, 0, &mut out);
        out
    }

    /// Exact `m` nearest neighbours under the canonical tie-break.
    pub fn search(&self, q: &[f32], m: usize) -> Result<Vec<Hit>> {
        self.store.check_query(q)?;
        let mut top = TopM::new(m);
        if m > 0 {
            self.search_node(0, q, &mut top);
        }
        Ok(top.into_sorted())
    }

    fn search_node(&self, id: usize, q: &[f32], top: &mut TopM) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    top.offer(self.store.hit(i, q));
                }
            }
            Node::Split {
                dim,
                threshold,
                left,
                right,
            } => {
                let diff = q[dim] as f64 - threshold as f64;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_node(near, q, top);
                // Ties at the bound may still beat the worst hit on id order, so visit on equality.
                if diff * diff <= top.worst() {
                    self.search_node(far, q, top);
                }
            }
        }
    }
}
