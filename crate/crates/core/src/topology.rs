//! Doubly stochastic mixing matrices.
//!
//! Entry `c_ji` is the weight node `i` puts on node `j`'s model when
//! averaging. All matrices built here are symmetric, so rows and columns are
//! interchangeable.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyKind {
    /// Circulant ring: `self_weight` on the diagonal, the rest split evenly
    /// between the two neighbours.
    Ring { self_weight: f64 },
    /// `C = J`, everyone averages with everyone.
    Complete,
    /// `C = I`, no communication.
    Disconnected,
    /// Undirected edge list with Metropolis-Hastings weights.
    Custom { edges: Vec<(usize, usize)> },
    /// Like `Custom`, with the edges read from an edge-list file.
    EdgeList { path: std::path::PathBuf },
}

impl TopologyKind {
    /// Uniform-weight ring, whose ten-node instance has `ζ ≈ 0.8727`.
    pub fn uniform_ring() -> Self {
        TopologyKind::Ring { self_weight: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    zeta: f64,
    connected: bool,
}

impl MixingMatrix {
    /// Wraps a matrix after checking it is doubly stochastic.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        let report = validate_doubly_stochastic(&entries);
        if !report.passed() {
            return Err(Error::invalid(format!("mixing matrix is not doubly stochastic: {report:?}")));
        }
        let connected = support_connected(&entries);
        let zeta = compute_zeta(&entries, connected);
        Ok(Self { entries, zeta, connected })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// `c_ji`: the weight receiver `i` gives sender `j`.
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.entries[(from, to)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// False when the communication graph splits into several components
    /// (then `ζ = 1`).
    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Nodes `j ≠ i` with `c_ji ≠ 0`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| j != i && self.entries[(j, i)] != 0.0).collect()
    }

    /// Directed edges `(from, to)` that carry traffic.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        (0..self.n())
            .flat_map(|to| self.neighbors(to).into_iter().map(move |from| (from, to)))
            .collect()
    }
}

pub fn build_mixing(kind: &TopologyKind, n: usize) -> Result<MixingMatrix> {
    if n < 2 {
        return Err(Error::invalid("a topology needs at least two nodes"));
    }
    let entries = match kind {
        TopologyKind::Complete => DMatrix::from_element(n, n, 1.0 / n as f64),
        TopologyKind::Disconnected => DMatrix::identity(n, n),
        TopologyKind::Ring { self_weight } => {
            let w = *self_weight;
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::invalid("ring self_weight must lie in (0, 1)"));
            }
            let side = (1.0 - w) / 2.0;
            let mut c = DMatrix::zeros(n, n);
            for i in 0..n {
                c[(i, i)] += w;
                c[(i, (i + 1) % n)] += side;
                c[(i, (i + n - 1) % n)] += side;
            }
            c
        }
        TopologyKind::Custom { edges } => metropolis_hastings(edges, n)?,
        TopologyKind::EdgeList { path } => metropolis_hastings(&read_edge_list(path)?, n)?,
    };
    MixingMatrix::from_matrix(entries)
}

fn metropolis_hastings(edges: &[(usize, usize)], n: usize) -> Result<DMatrix<f64>> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::invalid(format!("edge ({a}, {b}) names a node >= {n}")));
        }
        if a != b {
            adj[a][b] = true;
            adj[b][a] = true;
        }
    }
    let degree: Vec<usize> = adj.iter().map(|row| row.iter().filter(|&&x| x).count()).collect();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adj[i][j] {
                c[(i, j)] = 1.0 / (1 + degree[i].max(degree[j])) as f64;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| c[(i, j)]).sum();
        c[(i, i)] = 1.0 - off;
    }
    Ok(c)
}

/// Reads an edge list: one `i j` pair per line, zero-based. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match fields.as_slice() {
            [a, b] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        let edge = parsed.ok_or_else(|| {
            Error::Format(format!("line {}: expected `i j`, got `{line}`", lineno + 1))
        })?;
        edges.push(edge);
    }
    Ok(edges)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

/// Worst violation of each doubly-stochastic condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StochasticityReport {
    pub square: bool,
    pub max_row_sum_error: f64,
    pub max_col_sum_error: f64,
    pub max_asymmetry: f64,
    /// Most negative entry, or 0 when all entries are nonnegative.
    pub worst_negative: f64,
    pub all_finite: bool,
}

impl StochasticityReport {
    pub fn rows_ok(&self) -> bool {
        self.max_row_sum_error <= ROW_SUM_TOL
    }

    pub fn cols_ok(&self) -> bool {
        self.max_col_sum_error <= ROW_SUM_TOL
    }

    pub fn symmetric(&self) -> bool {
        self.max_asymmetry <= SYMMETRY_TOL
    }

    pub fn nonnegative(&self) -> bool {
        self.worst_negative >= 0.0
    }

    pub fn passed(&self) -> bool {
        self.square && self.all_finite && self.rows_ok() && self.cols_ok() && self.symmetric() && self.nonnegative()
    }
}

pub fn validate_doubly_stochastic(c: &DMatrix<f64>) -> StochasticityReport {
    let square = c.nrows() == c.ncols() && c.nrows() > 0;
    let all_finite = c.iter().all(|x| x.is_finite());
    let max_row_sum_error = c.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let max_col_sum_error = c.column_iter().map(|col| (col.sum() - 1.0).abs()).fold(0.0, f64::max);
    let max_asymmetry = if square {
        (0..c.nrows())
            .flat_map(|i| (0..c.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (c[(i, j)] - c[(j, i)]).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let worst_negative = c.iter().copied().fold(0.0, f64::min);
    StochasticityReport { square, max_row_sum_error, max_col_sum_error, max_asymmetry, worst_negative, all_finite }
}

/// Second-largest absolute eigenvalue of a valid mixing matrix.
pub fn zeta(c: &MixingMatrix) -> f64 {
    c.zeta
}

fn support_connected(c: &DMatrix<f64>) -> bool {
    let n = c.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && (c[(i, j)] != 0.0 || c[(j, i)] != 0.0) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// `‖C - J‖₂`, the largest absolute eigenvalue of `C - J`. A disconnected
/// support graph repeats the eigenvalue 1, so `ζ = 1` exactly.
fn compute_zeta(c: &DMatrix<f64>, connected: bool) -> f64 {
    if !connected {
        return 1.0;
    }
    let n = c.nrows();
    let centered = c - DMatrix::from_element(n, n, 1.0 / n as f64);
    let sym = (&centered + centered.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().map(|x| x.abs()).fold(0.0, f64::max).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph() {
        let c = build_mixing(&TopologyKind::Complete, 4).unwrap();
        assert!(c.entries().iter().all(|&x| x == 0.25));
        assert_eq!(c.zeta(), 0.0);
        assert_eq!(c.neighbors(0), vec![1, 2, 3]);
    }

    #[test]
    fn identity() {
        let c = build_mixing(&TopologyKind::Disconnected, 5).unwrap();
        assert_eq!(c.entries(), &DMatrix::identity(5, 5));
        assert_eq!(c.zeta(), 1.0);
        assert!(!c.is_connected());
        assert!(c.neighbors(2).is_empty());
    }

    #[test]
    fn ten_node_ring() {
        let c = build_mixing(&TopologyKind::uniform_ring(), 10).unwrap();
        let closed = (1.0 + 2.0 * (std::f64::consts::PI / 5.0).cos()) / 3.0;
        assert!((c.zeta() - closed).abs() < 1e-10);
        assert!((c.zeta() - 0.8727).abs() < 1e-4);
        assert_eq!(c.neighbors(0), vec![1, 9]);
    }

    #[test]
    fn two_node_ring_folds_neighbours() {
        let c = build_mixing(&TopologyKind::Ring { self_weight: 0.5 }, 2).unwrap();
        assert_eq!(c.entries()[(0, 1)], 0.5);
        assert!(c.zeta().abs() < 1e-12);
    }

    #[test]
    fn validation_diagnostics() {
        let j = DMatrix::from_element(3, 3, 1.0 / 3.0);
        assert!(validate_doubly_stochastic(&j).passed());

        let row_only = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        let r = validate_doubly_stochastic(&row_only);
        assert!(r.rows_ok());
        assert!(!r.symmetric());
        assert!(!r.passed());

        let mut bumped = DMatrix::from_element(4, 4, 0.25);
        bumped[(1, 2)] += 1e-3;
        let r = validate_doubly_stochastic(&bumped);
        assert!(!r.rows_ok());
        assert!((r.max_row_sum_error - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn custom_graph_metropolis() {
        // path 0-1-2 plus a pendant 3 on 1
        let c = build_mixing(&TopologyKind::Custom { edges: vec![(0, 1), (1, 2), (1, 3)] }, 4).unwrap();
        assert!(validate_doubly_stochastic(c.entries()).passed());
        assert_eq!(c.weight(0, 1), 0.25);
        assert!(c.zeta() < 1.0);
    }

    #[test]
    fn disconnected_custom_graph_flags() {
        let c = build_mixing(&TopologyKind::Custom { edges: vec![(0, 1), (2, 3)] }, 4).unwrap();
        assert!(!c.is_connected());
        assert_eq!(c.zeta(), 1.0);
    }

    #[test]
    fn edge_list_parsing() {
        let edges = parse_edge_list("# ring\n0 1\n1 2\n\n2 0\n").unwrap();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 0)]);
        assert!(parse_edge_list("0 x\n").is_err());
        assert!(build_mixing(&TopologyKind::Custom { edges: vec![(0, 7)] }, 3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
            (3usize..9).prop_flat_map(|n| {
                // a spanning path keeps the graph connected
                let extra = proptest::collection::vec((0..n, 0..n), 0..12);
                extra.prop_map(move |mut e| {
                    e.extend((1..n).map(|i| (i - 1, i)));
                    (n, e)
                })
            })
        }

        proptest! {
            #[test]
            fn custom_graphs_validate_and_contract(
                (n, edges) in random_graph(),
                x in proptest::collection::vec(-5.0f64..5.0, 3 * 8),
            ) {
                let c = build_mixing(&TopologyKind::Custom { edges }, n).unwrap();
                prop_assert!(validate_doubly_stochastic(c.entries()).passed());
                let z = c.zeta();
                prop_assert!((0.0..1.0).contains(&z));

                let x = DMatrix::from_row_slice(3, n, &x[..3 * n]);
                let centering = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
                let base = (&x * &centering).norm();
                let mut xk = x.clone();
                for k in 1..=20 {
                    xk = &xk * c.entries();
                    let lhs = (&xk * &centering).norm();
                    prop_assert!(lhs <= z.powi(k) * base + 1e-9, "k={k} {lhs} > {}", z.powi(k) * base);
                }
            }

            #[test]
            fn ring_zeta_in_unit_interval(n in 2usize..30, w in 0.01f64..0.99) {
                let c = build_mixing(&TopologyKind::Ring { self_weight: w }, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&c.zeta()));
            }
        }
    }
}
