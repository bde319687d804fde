//! Undirected, unweighted communication topologies.
//!
//! Nodes are 0-based inside the crate. Scenario files use 1-based indices and
//! are converted through [`Topology::from_one_based`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::numerics::{self, Matrix, Tolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a topology needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    OutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from 0-based unordered pairs.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut neighbors = vec![Vec::new(); node_count];
        let mut canonical = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= node_count || j >= node_count {
                return Err(GraphError::OutOfRange(i + 1, j + 1, node_count));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i + 1));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(i + 1, j + 1));
            }
            canonical.push(key);
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: canonical,
            neighbors,
        })
    }

    /// Builds a topology from 1-based pairs as written in scenario files.
    pub fn from_one_based(node_count: usize, edges: &[[usize; 2]]) -> Result<Self, GraphError> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &[i, j] in edges {
            if i == 0 || j == 0 {
                return Err(GraphError::OutOfRange(i, j, node_count));
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(node_count, &zero_based)
    }

    pub fn ring(node_count: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = match node_count {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::new(node_count, &edges)
    }

    pub fn path(node_count: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..node_count).map(|i| (i - 1, i)).collect();
        Self::new(node_count, &edges)
    }

    pub fn complete(node_count: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 0..node_count {
            for j in (i + 1)..node_count {
                edges.push((i, j));
            }
        }
        Self::new(node_count, &edges)
    }

    /// Node 0 is the hub.
    pub fn star(node_count: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..node_count).map(|i| (0, i)).collect();
        Self::new(node_count, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges as 0-based pairs with the smaller index first.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.node_count, self.node_count);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// `D - A`.
    pub fn laplacian(&self) -> Matrix {
        let mut l = -self.adjacency();
        for i in 0..self.node_count {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.node_count];
        let mut components = 0;
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Second-smallest Laplacian eigenvalue. A single node has no positive
    /// Laplacian eigenvalue; it is reported as 0.
    pub fn algebraic_connectivity(&self) -> Result<f64, GraphError> {
        let components = self.component_count();
        if components != 1 {
            return Err(GraphError::Disconnected { components });
        }
        if self.node_count == 1 {
            return Ok(0.0);
        }
        let ev = numerics::symmetric_eigenvalues(&self.laplacian(), &Tolerance::default())
            .expect("Laplacian is symmetric");
        Ok(ev[1])
    }

    /// Copy with one more edge.
    pub fn with_edge(&self, i: usize, j: usize) -> Result<Self, GraphError> {
        let mut edges = self.edges.clone();
        edges.push((i, j));
        Self::new(self.node_count, &edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn connectivity_examples() {
        assert!(Topology::new(1, &[]).unwrap().is_connected());
        assert!(!Topology::new(4, &[(0, 1), (2, 3)]).unwrap().is_connected());
        assert!(Topology::ring(4).unwrap().is_connected());
    }

    #[test]
    fn algebraic_connectivity_examples() {
        assert_abs_diff_eq!(
            Topology::path(2).unwrap().algebraic_connectivity().unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            Topology::complete(4)
                .unwrap()
                .algebraic_connectivity()
                .unwrap(),
            4.0,
            epsilon = 1e-12
        );
        // Path P4: eigenvalues 2 - 2 cos(k pi / 4).
        assert_abs_diff_eq!(
            Topology::path(4).unwrap().algebraic_connectivity().unwrap(),
            2.0 - 2.0_f64.sqrt(),
            epsilon = 1e-9
        );
        assert!(matches!(
            Topology::new(4, &[(0, 1), (2, 3)])
                .unwrap()
                .algebraic_connectivity(),
            Err(GraphError::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn laplacian_and_degrees() {
        let k2 = Topology::complete(2).unwrap();
        assert_eq!(
            k2.laplacian(),
            Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        let ring = Topology::ring(4).unwrap();
        assert!((0..4).all(|i| ring.degree(i) == 2));
        assert_eq!(Topology::star(4).unwrap().degree(0), 3);
    }

    #[test]
    fn rejects_bad_edges() {
        assert_eq!(Topology::new(3, &[(1, 1)]), Err(GraphError::SelfLoop(2)));
        assert_eq!(
            Topology::new(3, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(2, 1))
        );
        assert!(matches!(
            Topology::new(3, &[(0, 3)]),
            Err(GraphError::OutOfRange(..))
        ));
        assert!(matches!(
            Topology::from_one_based(3, &[[0, 1]]),
            Err(GraphError::OutOfRange(..))
        ));
        assert_eq!(Topology::new(0, &[]), Err(GraphError::Empty));
    }

    #[test]
    fn one_based_conversion() {
        let g = Topology::from_one_based(4, &[[1, 2], [2, 3], [3, 4], [4, 1]]).unwrap();
        assert_eq!(g, Topology::ring(4).unwrap());
        assert_eq!(g.neighbors(0), &[1, 3]);
    }

    fn random_graph() -> impl Strategy<Value = Topology> {
        (1usize..=8).prop_flat_map(|n| {
            proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |mask| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if mask[k] {
                            edges.push((i, j));
                        }
                        k += 1;
                    }
                }
                Topology::new(n, &edges).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn laplacian_annihilates_ones(g in random_graph()) {
            let ones = crate::Vector::from_element(g.node_count(), 1.0);
            prop_assert!((g.laplacian() * ones).norm() == 0.0);
        }

        #[test]
        fn lambda2_positive_iff_connected(g in random_graph()) {
            prop_assume!(g.node_count() > 1);
            let ev = numerics::symmetric_eigenvalues(&g.laplacian(), &Tolerance::default()).unwrap();
            prop_assert_eq!(ev[1] > 1e-9, g.component_count() == 1);
        }

        #[test]
        fn adding_an_edge_never_lowers_lambda2(g in random_graph(), pick in any::<u32>()) {
            let n = g.node_count();
            prop_assume!(n > 1);
            let missing: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .filter(|e| !g.edges().contains(e))
                .collect();
            prop_assume!(!missing.is_empty());
            let (i, j) = missing[pick as usize % missing.len()];
            let before = numerics::symmetric_eigenvalues(&g.laplacian(), &Tolerance::default()).unwrap()[1];
            let h = g.with_edge(i, j).unwrap();
            let after = numerics::symmetric_eigenvalues(&h.laplacian(), &Tolerance::default()).unwrap()[1];
            prop_assert!(after >= before - 1e-12);
        }
    }
}
