//! Molecular graphs and the lazy random-walk diffusion operator.
//!
//! A molecule is a simple undirected graph over heavy atoms: a binary
//! adjacency matrix, one atom-alphabet label per node, and an optional map
//! of named real-valued properties. The walk operator is
//! `P = (I + W D^{-1}) / 2`, column-stochastic by construction; isolated
//! nodes get the identity column so P stays stochastic on disconnected
//! inputs.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on node count; keeps dense n x n math cheap everywhere.
pub const MAX_NODES: usize = 256;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge endpoint {node} out of range for {n} nodes")]
    OutOfRangeNode { node: usize, n: usize },
    #[error("self-loop on node {0} is not allowed")]
    SelfLoop(usize),
    #[error("graph has {n} nodes, exceeding the limit {max}")]
    TooLarge { n: usize, max: usize },
    #[error("label index {label} out of range for alphabet of size {len}")]
    UnknownLabel { label: usize, len: usize },
    #[error("expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("permutation is not a bijection on 0..{0}")]
    InvalidPermutation(usize),
    #[error("cannot pad {n} nodes into n_max = {n_max}")]
    PadTooSmall { n: usize, n_max: usize },
}

/// Ordered set of atom symbols; label signals and feature channels follow
/// this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomAlphabet {
    symbols: Vec<String>,
}

impl AtomAlphabet {
    /// Organic-subset default: C, N, O, S, F, Cl, Br, I, P, B.
    pub fn standard() -> Self {
        Self::new(["C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B"])
    }

    pub fn new<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        assert!(!symbols.is_empty(), "alphabet must not be empty");
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// Simple undirected heavy-atom graph with alphabet labels and properties.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    adjacency: Array2<f64>,
    labels: Vec<usize>,
    /// Named molecule-level properties (targets for regression); ordered map
    /// so serialization is deterministic.
    pub properties: BTreeMap<String, f64>,
    /// Bond multiplicities keyed by (min, max) node pair. Metadata only:
    /// never enters the adjacency or the walk operator.
    pub bond_orders: BTreeMap<(usize, usize), u8>,
}

impl MolecularGraph {
    /// Builds a graph from an edge list. Duplicate edges collapse to one;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        alphabet: &AtomAlphabet,
    ) -> Result<Self, GraphError> {
        if n > MAX_NODES {
            return Err(GraphError::TooLarge { n, max: MAX_NODES });
        }
        if labels.len() != n {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        for &l in &labels {
            if l >= alphabet.len() {
                return Err(GraphError::UnknownLabel {
                    label: l,
                    len: alphabet.len(),
                });
            }
        }
        let mut adjacency = Array2::zeros((n, n));
        for &(u, v) in edges {
            if u >= n {
                return Err(GraphError::OutOfRangeNode { node: u, n });
            }
            if v >= n {
                return Err(GraphError::OutOfRangeNode { node: v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            adjacency[[u, v]] = 1.0;
            adjacency[[v, u]] = 1.0;
        }
        Ok(Self {
            adjacency,
            labels,
            properties: BTreeMap::new(),
            bond_orders: BTreeMap::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.adjacency.row(node).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.adjacency[[u, v]] > 0.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// One indicator vector per alphabet symbol: entry v of signal i is 1
    /// iff node v carries label i. Signals partition the constant vector.
    pub fn label_signals(&self, alphabet: &AtomAlphabet) -> Vec<Array1<f64>> {
        let n = self.n();
        let mut signals = vec![Array1::zeros(n); alphabet.len()];
        for (v, &l) in self.labels.iter().enumerate() {
            signals[l][v] = 1.0;
        }
        signals
    }

    /// Relabels nodes by `perm`: new index `perm[u]` holds old node `u`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n();
        if perm.len() != n {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                got: perm.len(),
            });
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(GraphError::InvalidPermutation(n));
            }
            seen[p] = true;
        }
        let mut adjacency = Array2::zeros((n, n));
        for u in 0..n {
            for v in 0..n {
                adjacency[[perm[u], perm[v]]] = self.adjacency[[u, v]];
            }
        }
        let mut labels = vec![0; n];
        for (u, &l) in self.labels.iter().enumerate() {
            labels[perm[u]] = l;
        }
        let bond_orders = self
            .bond_orders
            .iter()
            .map(|(&(u, v), &o)| {
                let (a, b) = (perm[u], perm[v]);
                ((a.min(b), a.max(b)), o)
            })
            .collect();
        Ok(Self {
            adjacency,
            labels,
            properties: self.properties.clone(),
            bond_orders,
        })
    }

    /// Adjacency embedded in the top-left block of an n_max x n_max matrix;
    /// padding rows/columns are zero.
    pub fn pad_adjacency(&self, n_max: usize) -> Result<Array2<f64>, GraphError> {
        let n = self.n();
        if n > n_max {
            return Err(GraphError::PadTooSmall { n, n_max });
        }
        let mut out = Array2::zeros((n_max, n_max));
        out.slice_mut(ndarray::s![..n, ..n]).assign(&self.adjacency);
        Ok(out)
    }

    pub(crate) fn set_bond_order(&mut self, u: usize, v: usize, order: u8) {
        self.bond_orders.insert((u.min(v), u.max(v)), order);
    }
}

/// Lazy random-walk operator with a cache of integer matrix powers.
///
/// Columns of P sum to 1; repeated application models lazy diffusion of mass
/// placed on nodes. The cache is filled explicitly via
/// [`DiffusionOperator::ensure_powers`], after which the operator is
/// immutable and safe to share across threads.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    /// powers[t] = P^t; powers[0] = I. Extended by `ensure_powers`.
    powers: Vec<Array2<f64>>,
}

impl DiffusionOperator {
    /// Builds `P = (I + W D^{-1}) / 2` from the graph's adjacency. Columns
    /// of isolated nodes are identity columns.
    pub fn lazy_walk(graph: &MolecularGraph) -> Self {
        let n = graph.n();
        let w = graph.adjacency();
        let mut p = Array2::zeros((n, n));
        for j in 0..n {
            let deg: f64 = w.column(j).sum();
            if deg == 0.0 {
                p[[j, j]] = 1.0;
            } else {
                for i in 0..n {
                    p[[i, j]] = 0.5 * w[[i, j]] / deg;
                }
                p[[j, j]] += 0.5;
            }
        }
        Self {
            powers: vec![Array2::eye(n), p],
        }
    }

    pub fn n(&self) -> usize {
        self.powers[0].nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.powers[1]
    }

    /// Extends the power cache so that `P^t` is available for 0 <= t <=
    /// t_max. Powers are built by sequential multiplication with P.
    pub fn ensure_powers(&mut self, t_max: usize) {
        while self.powers.len() <= t_max {
            let next = self.powers.last().unwrap().dot(&self.powers[1]);
            self.powers.push(next);
        }
    }

    /// Cached `P^t`; panics if `ensure_powers(t)` has not been called.
    pub fn power(&self, t: usize) -> &Array2<f64> {
        &self.powers[t]
    }

    pub fn max_cached_power(&self) -> usize {
        self.powers.len() - 1
    }

    /// `P^t x` by repeated application (or a single cached-power multiply
    /// when available). t = 0 returns x unchanged.
    pub fn diffuse(&self, x: &Array1<f64>, t: usize) -> Result<Array1<f64>, GraphError> {
        if x.len() != self.n() {
            return Err(GraphError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        if t < self.powers.len() {
            return Ok(self.powers[t].dot(x));
        }
        let mut y = x.clone();
        for _ in 0..t {
            y = self.powers[1].dot(&y);
        }
        Ok(y)
    }
}
