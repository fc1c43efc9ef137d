//! Follower communication graph, leader attachment and the Laplacians
//! derived from them.
//!
//! Agents are indexed from zero internally; config files and CSV headers use
//! one-based agent numbers.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Undirected follower graph plus the diagonal leader-link matrix `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    adjacency: DMatrix<f64>,
    leader_links: DVector<f64>,
    weighted: bool,
}

/// `L + B` together with its extreme eigenvalues.
#[derive(Clone, Debug)]
pub struct GroundedLaplacian {
    pub matrix: DMatrix<f64>,
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Outcome of the connectivity / leader-reachability check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub holds: bool,
    pub connected: bool,
    pub leader_linked: bool,
    pub diagnostic: String,
}

const SYMMETRY_TOL: f64 = 0.0;

impl Topology {
    /// Builds a binary topology. Entries must be exactly 0 or 1.
    pub fn new(adjacency: DMatrix<f64>, leader_links: DVector<f64>) -> Result<Self> {
        Self::build(adjacency, leader_links, false)
    }

    /// Builds a topology with nonnegative real edge weights and leader gains.
    pub fn new_weighted(adjacency: DMatrix<f64>, leader_links: DVector<f64>) -> Result<Self> {
        Self::build(adjacency, leader_links, true)
    }

    fn build(adjacency: DMatrix<f64>, leader_links: DVector<f64>, weighted: bool) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::InvalidTopology(
                "at least one agent is required".into(),
            ));
        }
        if adjacency.ncols() != n {
            return Err(Error::InvalidTopology(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if leader_links.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: leader_links.len(),
            });
        }
        let admissible = |v: f64| {
            if weighted {
                v.is_finite() && v >= 0.0
            } else {
                v == 0.0 || v == 1.0
            }
        };
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::SelfLoop(i + 1));
            }
            for j in 0..n {
                let (aij, aji) = (adjacency[(i, j)], adjacency[(j, i)]);
                if !admissible(aij) {
                    return Err(Error::InvalidTopology(format!(
                        "edge weight a[{}][{}] = {} is not admissible",
                        i + 1,
                        j + 1,
                        aij
                    )));
                }
                if (aij - aji).abs() > SYMMETRY_TOL {
                    return Err(Error::AsymmetricAdjacency {
                        i: i + 1,
                        j: j + 1,
                        aij,
                        aji,
                    });
                }
            }
            if !admissible(leader_links[i]) {
                return Err(Error::InvalidTopology(format!(
                    "leader link b[{}] = {} is not admissible",
                    i + 1,
                    leader_links[i]
                )));
            }
        }
        Ok(Topology {
            adjacency,
            leader_links,
            weighted,
        })
    }

    /// Binary topology from a zero-based undirected edge list and the set
    /// of agents that observe the leader.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], leader_agents: &[usize]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({}, {}) references an agent outside 1..={}",
                    i + 1,
                    j + 1,
                    n
                )));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
        }
        let mut leader_links = DVector::zeros(n);
        for &i in leader_agents {
            if i >= n {
                return Err(Error::InvalidTopology(format!(
                    "leader link references agent {} outside 1..={}",
                    i + 1,
                    n
                )));
            }
            leader_links[i] = 1.0;
        }
        Self::new(adjacency, leader_links)
    }

    /// Four followers with edges 1-3, 2-3, 2-4; agents 1 and 2 see the leader.
    pub fn benchmark() -> Self {
        Self::from_edges(4, &[(0, 2), (1, 2), (1, 3)], &[0, 1]).expect("static topology is valid")
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn leader_links(&self) -> &DVector<f64> {
        &self.leader_links
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// Agents `j` with `a_ij > 0`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[(i, j)] > 0.0)
            .count()
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > 1 && self.edge_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        Ok(l)
    }

    /// `L + B` with its spectrum; fails unless positive definite.
    pub fn grounded_laplacian(&self) -> Result<GroundedLaplacian> {
        let mut matrix = self.laplacian()?;
        for i in 0..self.n() {
            matrix[(i, i)] += self.leader_links[i];
        }
        let eigenvalues = sorted_eigenvalues(&matrix);
        let lambda_min = eigenvalues[0];
        let lambda_max = *eigenvalues.last().unwrap();
        // relative tolerance of the eigensolver
        if lambda_min <= 1e-10 * lambda_max.abs().max(1.0) {
            return Err(Error::NotPositiveDefinite { lambda_min });
        }
        Ok(GroundedLaplacian {
            matrix,
            eigenvalues,
            lambda_min,
            lambda_max,
        })
    }

    /// Connectivity of the follower graph (breadth-first traversal) and
    /// existence of at least one leader link.
    pub fn check_connectivity(&self) -> ConnectivityReport {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        let connected = reached == n;
        let leader_linked = self.leader_links.iter().any(|&b| b > 0.0);
        let diagnostic = match (connected, leader_linked) {
            (true, true) => "follower graph connected and leader linked".to_string(),
            (false, _) => {
                let missing: Vec<String> = (0..n)
                    .filter(|&i| !seen[i])
                    .map(|i| (i + 1).to_string())
                    .collect();
                format!(
                    "follower graph not connected: agents {} unreachable from agent 1",
                    missing.join(", ")
                )
            }
            (true, false) => "no follower is linked to the leader".to_string(),
        };
        ConnectivityReport {
            holds: connected && leader_linked,
            connected,
            leader_linked,
            diagnostic,
        }
    }
}

impl GroundedLaplacian {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Smallest eigenvalue of the inverse, `1 / lambda_max`.
    pub fn inverse_lambda_min(&self) -> f64 {
        1.0 / self.lambda_max
    }

    /// Largest eigenvalue of the inverse, `1 / lambda_min`.
    pub fn inverse_lambda_max(&self) -> f64 {
        1.0 / self.lambda_min
    }
}

pub(crate) fn sorted_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::try_new(matrix.clone(), 1e-14, 0)
        .expect("symmetric eigendecomposition converges");
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn two_agent_laplacian() {
        let t = Topology::from_edges(2, &[(0, 1)], &[0]).unwrap();
        assert_eq!(t.laplacian().unwrap(), dmatrix![1.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn benchmark_laplacian_degrees() {
        let l = Topology::benchmark().laplacian().unwrap();
        let diag: Vec<f64> = l.diagonal().iter().copied().collect();
        assert_eq!(diag, vec![1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn empty_edges_rejected() {
        let t = Topology::from_edges(3, &[], &[0]).unwrap();
        assert!(matches!(t.laplacian(), Err(Error::EmptyGraph)));
        assert!(t.grounded_laplacian().is_err());
    }

    #[test]
    fn benchmark_grounded_laplacian_exact() {
        let g = Topology::benchmark().grounded_laplacian().unwrap();
        let expected = dmatrix![
            2.0, 0.0, -1.0, 0.0;
            0.0, 3.0, -1.0, -1.0;
            -1.0, -1.0, 2.0, 0.0;
            0.0, -1.0, 0.0, 1.0
        ];
        assert_eq!(g.matrix, expected);
        assert!(g.lambda_min > 0.0);
    }

    #[test]
    fn single_agent() {
        let t = Topology::from_edges(1, &[], &[0]).unwrap();
        let g = t.grounded_laplacian().unwrap();
        assert_eq!(g.matrix, dmatrix![1.0]);
        assert_eq!(g.lambda_min, 1.0);
        assert!(t.check_connectivity().holds);
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let a = dmatrix![0.0, 1.0; 0.0, 0.0];
        let err = Topology::new(a, DVector::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("adjacency not symmetric"));
    }

    #[test]
    fn self_loop_rejected() {
        let a = dmatrix![1.0, 1.0; 1.0, 0.0];
        assert!(matches!(
            Topology::new(a, DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::SelfLoop(1))
        ));
    }

    #[test]
    fn non_binary_weight_needs_weighted_flag() {
        let a = dmatrix![0.0, 0.5; 0.5, 0.0];
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert!(Topology::new(a.clone(), b.clone()).is_err());
        let t = Topology::new_weighted(a, b).unwrap();
        assert!(t.grounded_laplacian().unwrap().lambda_min > 0.0);
    }

    #[test]
    fn connectivity_cases() {
        assert!(Topology::benchmark().check_connectivity().holds);

        let split = Topology::from_edges(4, &[(0, 1), (2, 3)], &[0]).unwrap();
        let r = split.check_connectivity();
        assert!(!r.holds && !r.connected && r.leader_linked);

        let chain = Topology::from_edges(3, &[(0, 1), (1, 2)], &[]).unwrap();
        let r = chain.check_connectivity();
        assert!(!r.holds && r.connected && !r.leader_linked);
    }

    #[test]
    fn unlinked_grounded_laplacian_not_positive_definite() {
        let chain = Topology::from_edges(3, &[(0, 1), (1, 2)], &[]).unwrap();
        assert!(matches!(
            chain.grounded_laplacian(),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
