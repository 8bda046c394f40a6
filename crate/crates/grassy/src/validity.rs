//! Structural validity checks for generated adjacencies.
//!
//! A soft adjacency is discretized by strict thresholding (edge iff the
//! entry exceeds tau) and restricted to its largest connected component,
//! with ties broken toward the component containing the lowest node index.
//! The component is then judged on three rules: it must have more than
//! `min_atoms` nodes, no ring in a minimum cycle basis may exceed
//! `max_ring_size` nodes, and no vertex degree may exceed `max_degree`.
//!
//! Ring perception uses a minimum cycle basis (the chemistry convention:
//! fused six-rings count as {6, 6}, not as their ten-node outer circuit),
//! computed with Horton's method: shortest-path cycle candidates from every
//! root, sorted by length, greedily reduced over GF(2) until the cyclomatic
//! number is reached. A strict mode judges every simple circuit instead;
//! circuit enumeration is exponential in the worst case, so it is opt-in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ndarray::Array2;

use crate::graph::MolecularGraph;

#[derive(Debug, Error)]
pub enum ValidityError {
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("invalid validity config: {0}")]
    InvalidConfig(String),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
}

/// Validity rule thresholds. `min_atoms` varies by dataset tranche; ring
/// and degree bounds default to the usual chemical limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_atoms")]
    pub min_atoms: usize,
    #[serde(default = "default_max_ring_size")]
    pub max_ring_size: usize,
    #[serde(default = "default_max_degree")]
    pub max_degree: usize,
    /// Judge every simple circuit instead of a minimum cycle basis.
    /// Exponential in the worst case; meant for small graphs.
    #[serde(default)]
    pub strict_circuits: bool,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_min_atoms() -> usize {
    5
}
fn default_max_ring_size() -> usize {
    10
}
fn default_max_degree() -> usize {
    5
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            min_atoms: default_min_atoms(),
            max_ring_size: default_max_ring_size(),
            max_degree: default_max_degree(),
            strict_circuits: false,
        }
    }
}

impl ValidityConfig {
    pub fn validate(&self) -> Result<(), ValidityError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ValidityError::InvalidConfig(format!(
                "threshold must lie strictly inside (0, 1), got {}",
                self.threshold
            )));
        }
        if self.min_atoms == 0 {
            return Err(ValidityError::InvalidConfig(
                "min_atoms must be >= 1".into(),
            ));
        }
        if self.max_ring_size < 3 {
            return Err(ValidityError::InvalidConfig(
                "max_ring_size must be >= 3".into(),
            ));
        }
        if self.max_degree == 0 {
            return Err(ValidityError::InvalidConfig(
                "max_degree must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Unlabeled simple graph with sorted neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGraph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
}

impl BinaryGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, ValidityError> {
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(ValidityError::EdgeOutOfRange(u, v, n));
            }
            if !neighbors[u].contains(&v) {
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for adj in &mut neighbors {
            adj.sort_unstable();
        }
        Ok(Self { n, neighbors })
    }

    /// Topology of a labeled molecular graph.
    pub fn from_molecular(g: &MolecularGraph) -> Self {
        Self::from_edges(g.n(), &g.edges()).expect("molecular graphs are simple")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    /// Edges as (u, v) with u < v, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for &v in &self.neighbors[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([start]);
            seen[start] = true;
            let mut comp = Vec::new();
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Thresholds a soft adjacency (edge iff entry > tau, strictly) and keeps
/// the largest connected component, breaking size ties toward the
/// component containing the lowest node index. Nodes are relabeled
/// 0..size-1 in ascending original order.
pub fn discretize(soft: &Array2<f64>, tau: f64) -> BinaryGraph {
    let n = soft.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if soft[[i, j]] > tau {
                edges.push((i, j));
            }
        }
    }
    let full = BinaryGraph::from_edges(n, &edges).expect("indices in range by construction");
    if n == 0 {
        return full;
    }
    let components = full.components();
    let best = components
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .expect("n > 0 gives at least one component");
    let mut relabel = vec![usize::MAX; n];
    for (new, &old) in best.iter().enumerate() {
        relabel[old] = new;
    }
    let sub_edges: Vec<(usize, usize)> = full
        .edges()
        .into_iter()
        .filter(|&(u, v)| relabel[u] != usize::MAX && relabel[v] != usize::MAX)
        .map(|(u, v)| (relabel[u], relabel[v]))
        .collect();
    BinaryGraph::from_edges(best.len(), &sub_edges).expect("relabeled indices in range")
}

type EdgeSet = Vec<u64>;

fn set_bit(set: &mut EdgeSet, bit: usize) {
    set[bit / 64] |= 1 << (bit % 64);
}

fn xor_into(dst: &mut EdgeSet, src: &EdgeSet) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn lowest_set(set: &EdgeSet) -> Option<usize> {
    for (w, word) in set.iter().enumerate() {
        if *word != 0 {
            return Some(w * 64 + word.trailing_zeros() as usize);
        }
    }
    None
}

/// Ring lengths of a minimum cycle basis, ascending. The basis has
/// exactly |E| - |V| + components entries.
pub fn ring_sizes(g: &BinaryGraph) -> Vec<usize> {
    let edges = g.edges();
    let m = edges.len();
    let components = g.components().len();
    let rank = (m + components).saturating_sub(g.n());
    if rank == 0 {
        return Vec::new();
    }
    let mut edge_id = std::collections::BTreeMap::new();
    for (id, &e) in edges.iter().enumerate() {
        edge_id.insert(e, id);
    }
    let id_of = |u: usize, v: usize| edge_id[&(u.min(v), u.max(v))];
    let words = m.div_ceil(64);

    // Horton candidates: for every root r and edge (x, y), the cycle made
    // of shortest paths r->x, r->y plus (x, y), kept when the paths meet
    // only at r.
    let mut candidates: std::collections::BTreeSet<(usize, EdgeSet)> =
        std::collections::BTreeSet::new();
    for root in 0..g.n() {
        let mut dist = vec![usize::MAX; g.n()];
        let mut path_edges: Vec<EdgeSet> = vec![vec![0; words]; g.n()];
        let mut path_verts: Vec<Vec<u64>> = vec![vec![0; g.n().div_ceil(64)]; g.n()];
        let mut queue = std::collections::VecDeque::from([root]);
        dist[root] = 0;
        set_bit(&mut path_verts[root], root);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    path_edges[v] = path_edges[u].clone();
                    set_bit(&mut path_edges[v], id_of(u, v));
                    path_verts[v] = path_verts[u].clone();
                    set_bit(&mut path_verts[v], v);
                    queue.push_back(v);
                }
            }
        }
        for &(x, y) in &edges {
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            let shared: u64 = path_verts[x]
                .iter()
                .zip(&path_verts[y])
                .map(|(a, b)| (a & b).count_ones() as u64)
                .sum();
            if shared != 1 {
                continue;
            }
            let eid = id_of(x, y);
            if path_edges[x][eid / 64] & (1 << (eid % 64)) != 0
                || path_edges[y][eid / 64] & (1 << (eid % 64)) != 0
            {
                continue;
            }
            let mut cycle = path_edges[x].clone();
            xor_into(&mut cycle, &path_edges[y]);
            set_bit(&mut cycle, eid);
            candidates.insert((dist[x] + dist[y] + 1, cycle));
        }
    }

    // Greedy GF(2) reduction in ascending length order.
    let mut basis: Vec<(usize, EdgeSet)> = Vec::new();
    let mut lengths = Vec::with_capacity(rank);
    for (len, cycle) in candidates {
        let mut reduced = cycle;
        for (pivot, vec) in &basis {
            if reduced[pivot / 64] & (1 << (pivot % 64)) != 0 {
                xor_into(&mut reduced, vec);
            }
        }
        if let Some(pivot) = lowest_set(&reduced) {
            basis.push((pivot, reduced));
            basis.sort_by_key(|(p, _)| *p);
            lengths.push(len);
            if lengths.len() == rank {
                break;
            }
        }
    }
    debug_assert_eq!(lengths.len(), rank, "cycle basis incomplete");
    lengths.sort_unstable();
    lengths
}

/// Lengths of every simple circuit, ascending. Exponential in the worst
/// case; used by the strict validity mode.
pub fn all_circuit_sizes(g: &BinaryGraph) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut path = Vec::new();
    let mut on_path = vec![false; g.n()];
    for start in 0..g.n() {
        path.push(start);
        on_path[start] = true;
        circuits_from(g, start, start, &mut path, &mut on_path, &mut lengths);
        on_path[start] = false;
        path.pop();
    }
    lengths.sort_unstable();
    lengths
}

fn circuits_from(
    g: &BinaryGraph,
    start: usize,
    u: usize,
    path: &mut Vec<usize>,
    on_path: &mut Vec<bool>,
    lengths: &mut Vec<usize>,
) {
    for &v in g.neighbors(u) {
        if v == start && path.len() >= 3 {
            // Each circuit is anchored at its smallest vertex and traversed
            // once by requiring the second vertex below the last.
            if path[1] < path[path.len() - 1] {
                lengths.push(path.len());
            }
        } else if v > start && !on_path[v] {
            path.push(v);
            on_path[v] = true;
            circuits_from(g, start, v, path, on_path, lengths);
            on_path[v] = false;
            path.pop();
        }
    }
}

/// A validity rule a component failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidityRule {
    TooSmall,
    RingTooLarge,
    DegreeTooHigh,
}

/// Outcome of the three validity rules on one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    pub failed_rules: Vec<ValidityRule>,
    pub component_size: usize,
    /// Longest ring considered (basis or circuit, per config); 0 if
    /// acyclic.
    pub largest_ring: usize,
    pub max_degree_found: usize,
}

/// Judges a discretized component: size must strictly exceed `min_atoms`,
/// rings must not exceed `max_ring_size`, degrees must not exceed
/// `max_degree`.
pub fn check_validity(g: &BinaryGraph, cfg: &ValidityConfig) -> ValidityVerdict {
    let rings = if cfg.strict_circuits {
        all_circuit_sizes(g)
    } else {
        ring_sizes(g)
    };
    let largest_ring = rings.last().copied().unwrap_or(0);
    let max_degree_found = (0..g.n()).map(|u| g.degree(u)).max().unwrap_or(0);
    let mut failed_rules = Vec::new();
    if g.n() <= cfg.min_atoms {
        failed_rules.push(ValidityRule::TooSmall);
    }
    if largest_ring > cfg.max_ring_size {
        failed_rules.push(ValidityRule::RingTooLarge);
    }
    if max_degree_found > cfg.max_degree {
        failed_rules.push(ValidityRule::DegreeTooHigh);
    }
    ValidityVerdict {
        valid: failed_rules.is_empty(),
        failed_rules,
        component_size: g.n(),
        largest_ring,
        max_degree_found,
    }
}

/// Discretizes one soft adjacency and judges the surviving component.
pub fn check_sample(soft: &Array2<f64>, cfg: &ValidityConfig) -> (BinaryGraph, ValidityVerdict) {
    let g = discretize(soft, cfg.threshold);
    let verdict = check_validity(&g, cfg);
    (g, verdict)
}

/// Fraction of valid verdicts.
pub fn validity_fraction(verdicts: &[ValidityVerdict]) -> Result<f64, ValidityError> {
    if verdicts.is_empty() {
        return Err(ValidityError::EmptySampleSet);
    }
    let valid = verdicts.iter().filter(|v| v.valid).count();
    Ok(valid as f64 / verdicts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AtomAlphabet;
    use crate::smiles::parse_smiles;
    use proptest::prelude::*;

    fn soft_from(n: usize, hot: &[(usize, usize)], lo: f64, hi: f64) -> Array2<f64> {
        let mut w = Array2::from_elem((n, n), lo);
        for i in 0..n {
            w[[i, i]] = 0.0;
        }
        for &(u, v) in hot {
            w[[u, v]] = hi;
            w[[v, u]] = hi;
        }
        w
    }

    fn cycle_graph(n: usize) -> BinaryGraph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        BinaryGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn all_low_entries_leave_a_single_node() {
        let w = soft_from(4, &[], 0.4, 0.9);
        let g = discretize(&w, 0.5);
        assert_eq!(g.n(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn one_strong_edge_survives_as_k2() {
        let w = soft_from(4, &[(0, 1)], 0.1, 0.9);
        let g = discretize(&w, 0.5);
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn threshold_is_strict() {
        let w = soft_from(3, &[(0, 1)], 0.2, 0.5);
        let g = discretize(&w, 0.5);
        assert_eq!(g.n(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn equal_components_tie_breaks_to_lowest_node_index() {
        let w = soft_from(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)], 0.1, 0.9);
        let g = discretize(&w, 0.5);
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        let w2 = soft_from(6, &[(3, 4), (4, 5), (5, 3), (1, 2)], 0.1, 0.9);
        let g2 = discretize(&w2, 0.5);
        assert_eq!(g2.n(), 3);
    }

    #[test]
    fn trees_have_no_rings() {
        let g = BinaryGraph::from_edges(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        assert!(ring_sizes(&g).is_empty());
        assert!(all_circuit_sizes(&g).is_empty());
    }

    #[test]
    fn cyclohexane_is_one_six_ring() {
        let alphabet = AtomAlphabet::standard();
        let g = parse_smiles("C1CCCCC1", &alphabet).unwrap();
        let rings = ring_sizes(&BinaryGraph::from_molecular(&g));
        assert_eq!(rings, vec![6]);
    }

    #[test]
    fn fused_six_rings_are_perceived_as_two_hexagons() {
        let alphabet = AtomAlphabet::standard();
        let g = parse_smiles("c1ccc2ccccc2c1", &alphabet).unwrap();
        assert_eq!(g.n(), 10);
        assert_eq!(g.edges().len(), 11);
        let rings = ring_sizes(&BinaryGraph::from_molecular(&g));
        assert_eq!(rings, vec![6, 6]);
    }

    #[test]
    fn complete_graph_basis_is_all_triangles() {
        let edges: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
            .collect();
        let g = BinaryGraph::from_edges(4, &edges).unwrap();
        assert_eq!(ring_sizes(&g), vec![3, 3, 3]);
    }

    #[test]
    fn petersen_graph_basis_is_six_pentagons() {
        let outer: Vec<(usize, usize)> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        let inner: Vec<(usize, usize)> = (0..5).map(|i| (5 + i, 5 + (i + 2) % 5)).collect();
        let spokes: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 5)).collect();
        let edges: Vec<(usize, usize)> =
            outer.into_iter().chain(inner).chain(spokes).collect();
        let g = BinaryGraph::from_edges(10, &edges).unwrap();
        assert_eq!(ring_sizes(&g), vec![5, 5, 5, 5, 5, 5]);
    }

    #[test]
    fn six_cycle_with_low_threshold_is_valid() {
        let cfg = ValidityConfig::default();
        let verdict = check_validity(&cycle_graph(6), &cfg);
        assert!(verdict.valid);
        assert_eq!(verdict.component_size, 6);
        assert_eq!(verdict.largest_ring, 6);
        assert_eq!(verdict.max_degree_found, 2);
    }

    #[test]
    fn star_center_fails_the_degree_rule() {
        let edges: Vec<(usize, usize)> = (1..=6).map(|i| (0, i)).collect();
        let g = BinaryGraph::from_edges(7, &edges).unwrap();
        let verdict = check_validity(&g, &ValidityConfig::default());
        assert!(!verdict.valid);
        assert_eq!(verdict.failed_rules, vec![ValidityRule::DegreeTooHigh]);
        assert_eq!(verdict.max_degree_found, 6);
    }

    #[test]
    fn twelve_ring_fails_the_ring_rule() {
        let verdict = check_validity(&cycle_graph(12), &ValidityConfig::default());
        assert!(!verdict.valid);
        assert_eq!(verdict.failed_rules, vec![ValidityRule::RingTooLarge]);
        assert_eq!(verdict.largest_ring, 12);
    }

    #[test]
    fn size_rule_reads_must_exceed_strictly() {
        let path5 = BinaryGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let cfg = ValidityConfig {
            min_atoms: 5,
            ..ValidityConfig::default()
        };
        let verdict = check_validity(&path5, &cfg);
        assert_eq!(verdict.failed_rules, vec![ValidityRule::TooSmall]);
        let cfg4 = ValidityConfig {
            min_atoms: 4,
            ..ValidityConfig::default()
        };
        assert!(check_validity(&path5, &cfg4).valid);
    }

    #[test]
    fn strict_circuit_mode_sees_the_fused_perimeter() {
        // A 6-ring and a 7-ring sharing one edge: basis rings are 6 and 7,
        // but the perimeter circuit has 11 nodes.
        let mut edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
        edges.extend([(0, 6), (6, 7), (7, 8), (8, 9), (9, 10), (10, 1)]);
        let g = BinaryGraph::from_edges(11, &edges).unwrap();
        assert_eq!(ring_sizes(&g), vec![6, 7]);
        assert_eq!(all_circuit_sizes(&g), vec![6, 7, 11]);
        let basis_cfg = ValidityConfig {
            min_atoms: 5,
            ..ValidityConfig::default()
        };
        assert!(check_validity(&g, &basis_cfg).valid);
        let strict_cfg = ValidityConfig {
            strict_circuits: true,
            ..basis_cfg
        };
        let verdict = check_validity(&g, &strict_cfg);
        assert!(!verdict.valid);
        assert_eq!(verdict.failed_rules, vec![ValidityRule::RingTooLarge]);
        assert_eq!(verdict.largest_ring, 11);
    }

    #[test]
    fn validity_fraction_averages_verdicts() {
        assert!(matches!(
            validity_fraction(&[]),
            Err(ValidityError::EmptySampleSet)
        ));
        let cfg = ValidityConfig::default();
        let valid = check_validity(&cycle_graph(6), &cfg);
        let invalid = check_validity(&cycle_graph(12), &cfg);
        let frac = validity_fraction(&[valid.clone(), invalid, valid]).unwrap();
        assert!((frac - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        let mut cfg = ValidityConfig {
            threshold: 0.0,
            ..ValidityConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.threshold = 0.5;
        cfg.min_atoms = 0;
        assert!(cfg.validate().is_err());
        cfg.min_atoms = 5;
        assert!(cfg.validate().is_ok());
    }

    proptest! {
        #[test]
        fn raising_the_threshold_never_adds_edges(
            entries in proptest::collection::vec(0.0f64..1.0, 15),
            lo in 0.05f64..0.9,
            gap in 0.01f64..0.1,
        ) {
            let n = 6;
            let mut w = Array2::zeros((n, n));
            let mut it = entries.into_iter();
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = it.next().unwrap();
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                }
            }
            let hi = (lo + gap).min(0.999);
            let g_lo = discretize(&w, lo);
            let g_hi = discretize(&w, hi);
            // Compare against the full thresholded edge sets, before the
            // largest-component restriction.
            let edges_at = |tau: f64| {
                let mut e = std::collections::BTreeSet::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if w[[i, j]] > tau {
                            e.insert((i, j));
                        }
                    }
                }
                e
            };
            let at_lo = edges_at(lo);
            let at_hi = edges_at(hi);
            prop_assert!(at_hi.is_subset(&at_lo));
            prop_assert!(g_hi.n() <= n && g_lo.n() <= n);
        }

        #[test]
        fn basis_size_is_the_cyclomatic_number(
            edge_bits in proptest::collection::vec(any::<bool>(), 28),
        ) {
            let n = 8;
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    if edge_bits[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            let g = BinaryGraph::from_edges(n, &edges).unwrap();
            let components = {
                let mut seen = vec![false; n];
                let mut count = 0;
                for s in 0..n {
                    if seen[s] {
                        continue;
                    }
                    count += 1;
                    let mut stack = vec![s];
                    seen[s] = true;
                    while let Some(u) = stack.pop() {
                        for &v in g.neighbors(u) {
                            if !seen[v] {
                                seen[v] = true;
                                stack.push(v);
                            }
                        }
                    }
                }
                count
            };
            let expected = g.edge_count() + components - n;
            prop_assert_eq!(ring_sizes(&g).len(), expected);
        }
    }
}
