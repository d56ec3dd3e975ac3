//! Graph and geometry kernel: edge lengths, the scaled rigidity matrix and
//! infinitesimal-rigidity tests.
//!
//! Vertices are 0-based here. File formats and the CLI use 1-based ids and
//! convert at the boundary with [`FrameworkGraph::from_one_based`].

use std::collections::BTreeSet;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::linalg::numeric_rank;
use crate::{Error, Result};

/// Relative singular-value threshold below which a singular value of the
/// rigidity matrix counts as zero.
pub const RIGIDITY_RANK_TOL: f64 = 1e-8;

/// Robot topology: `n` vertices, an ordered list of undirected edges, ambient dimension.
///
/// The position of an edge in `edges` is its index `k` in every length vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkGraph {
    n: usize,
    dim: usize,
    edges: Vec<[usize; 2]>,
}

impl FrameworkGraph {
    pub fn new(n: usize, dim: usize, edges: Vec<[usize; 2]>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGraph(format!("dimension must be 2 or 3, got {dim}")));
        }
        let mut seen = BTreeSet::new();
        for (k, &[i, j]) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge {k} references vertex outside 0..{n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("edge {k} is a self-loop at vertex {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("edge {k} duplicates {{{i},{j}}}")));
            }
        }
        Ok(Self { n, dim, edges })
    }

    /// Builds a graph from 1-based vertex pairs.
    pub fn from_one_based(n: usize, dim: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut zero = Vec::with_capacity(edges.len());
        for (k, &[i, j]) in edges.iter().enumerate() {
            if i == 0 || j == 0 {
                return Err(Error::InvalidGraph(format!("edge {k} uses vertex 0 in 1-based input")));
            }
            zero.push([i - 1, j - 1]);
        }
        Self::new(n, dim, zero)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Length of the stacked configuration vector, `n * d`.
    pub fn state_dim(&self) -> usize {
        self.n * self.dim
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&[a, b]| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|i| self.neighbors(i)).collect()
    }

    /// Indices of the edges incident to vertex `i`, in edge-list order.
    pub fn incident_edges(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e[0] == i || e[1] == i)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|&[a, b]| (a == i && b == j) || (a == j && b == i))
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.neighbor_lists())
    }

    /// Minimum number of edges of an infinitesimally rigid framework: `d n - d(d+1)/2`.
    pub fn rigid_edge_count(&self) -> usize {
        let t = self.dim * (self.dim + 1) / 2;
        (self.dim * self.n).saturating_sub(t)
    }
}

/// Breadth-first connectivity check over adjacency lists.
pub fn is_connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if j < adj.len() && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Stacked vertex positions `x = [p_1; ...; p_n]` in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dim: usize,
    coords: DVector<f64>,
}

impl Configuration {
    pub fn new(dim: usize, coords: DVector<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "configuration length must be a multiple of the dimension",
                expected: dim,
                actual: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "point dimension",
                    expected: dim,
                    actual: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { dim, coords: DVector::from_vec(coords) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn point(&self, i: usize) -> DVectorView<'_, f64> {
        self.coords.rows(i * self.dim, self.dim)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.point(i).iter().copied().collect()).collect()
    }

    pub fn centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        for i in 0..self.n() {
            c += self.point(i);
        }
        c / self.n().max(1) as f64
    }

    /// Checks that this configuration has one point per vertex of `g`.
    pub fn check_conforms(&self, g: &FrameworkGraph) -> Result<()> {
        if self.dim != g.dim() {
            return Err(Error::DimensionMismatch {
                what: "configuration dimension",
                expected: g.dim(),
                actual: self.dim,
            });
        }
        if self.coords.len() != g.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "configuration length",
                expected: g.state_dim(),
                actual: self.coords.len(),
            });
        }
        Ok(())
    }

    /// Mean over vertices of the Euclidean distance to `other`.
    pub fn mean_point_distance(&self, other: &Configuration) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| (self.point(i) - other.point(i)).norm())
            .sum::<f64>()
            / n.max(1) as f64
    }
}

/// Edge lengths in edge-list order, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLengthVector(pub DVector<f64>);

impl Deref for EdgeLengthVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl EdgeLengthVector {
    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// `L_k = ||p_i - p_j||` for every edge `{i, j}`.
pub fn edge_lengths(g: &FrameworkGraph, x: &Configuration) -> Result<EdgeLengthVector> {
    x.check_conforms(g)?;
    Ok(EdgeLengthVector(DVector::from_iterator(
        g.edge_count(),
        g.edges().iter().map(|&[i, j]| (x.point(i) - x.point(j)).norm()),
    )))
}

/// Row `k` of the scaled rigidity matrix: the gradient of `L_k` with respect to `x`.
///
/// Writes `(p_i - p_j)/L_k` into the block of vertex `i` and its negation into
/// the block of vertex `j`.
pub fn rigidity_row(g: &FrameworkGraph, x: &Configuration, k: usize) -> Result<DVector<f64>> {
    let &[i, j] = g.edges().get(k).ok_or(Error::UnknownEdge(k))?;
    let d = g.dim();
    let diff = x.point(i) - x.point(j);
    let len = diff.norm();
    if len == 0.0 {
        return Err(Error::SingularEdge { edge: k });
    }
    let u = diff / len;
    let mut row = DVector::zeros(g.state_dim());
    row.rows_mut(i * d, d).copy_from(&u);
    row.rows_mut(j * d, d).copy_from(&(-u));
    Ok(row)
}

/// The scaled rigidity matrix `R(x)` (`|E| x n d`) with `L_dot = R(x) x_dot`.
pub fn rigidity_matrix(g: &FrameworkGraph, x: &Configuration) -> Result<DMatrix<f64>> {
    x.check_conforms(g)?;
    let d = g.dim();
    let mut r = DMatrix::zeros(g.edge_count(), g.state_dim());
    for (k, &[i, j]) in g.edges().iter().enumerate() {
        let diff = x.point(i) - x.point(j);
        let len = diff.norm();
        if len == 0.0 {
            return Err(Error::SingularEdge { edge: k });
        }
        for a in 0..d {
            r[(k, i * d + a)] = diff[a] / len;
            r[(k, j * d + a)] = -diff[a] / len;
        }
    }
    Ok(r)
}

pub fn is_infinitesimally_rigid(g: &FrameworkGraph, x: &Configuration) -> Result<bool> {
    is_infinitesimally_rigid_with_tol(g, x, RIGIDITY_RANK_TOL)
}

/// True iff `rank R(x) = n d - d(d+1)/2`, with singular values below
/// `rel_tol * sigma_max` treated as zero.
pub fn is_infinitesimally_rigid_with_tol(g: &FrameworkGraph, x: &Configuration, rel_tol: f64) -> Result<bool> {
    let r = rigidity_matrix(g, x)?;
    Ok(numeric_rank(&r, rel_tol) == g.rigid_edge_count())
}

/// Edge-length rates `L_dot = R(x) x_dot`.
pub fn edge_rate_map(g: &FrameworkGraph, x: &Configuration, xdot: &DVector<f64>) -> Result<DVector<f64>> {
    if xdot.len() != g.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "node velocity vector",
            expected: g.state_dim(),
            actual: xdot.len(),
        });
    }
    Ok(rigidity_matrix(g, x)? * xdot)
}

/// Columns spanning the infinitesimal rigid motions at `x`: `d` translations
/// followed by `d(d-1)/2` rotations about the origin.
pub fn rigid_motion_basis(x: &Configuration) -> DMatrix<f64> {
    let d = x.dim();
    let n = x.n();
    let rot = d * (d - 1) / 2;
    let mut m = DMatrix::zeros(n * d, d + rot);
    for i in 0..n {
        for a in 0..d {
            m[(i * d + a, a)] = 1.0;
        }
        let p = x.point(i);
        if d == 2 {
            m[(i * d, 2)] = -p[1];
            m[(i * d + 1, 2)] = p[0];
        } else {
            // omega x p for omega = e_x, e_y, e_z
            m[(i * d + 1, 3)] = -p[2];
            m[(i * d + 2, 3)] = p[1];
            m[(i * d, 4)] = p[2];
            m[(i * d + 2, 4)] = -p[0];
            m[(i * d, 5)] = -p[1];
            m[(i * d + 1, 5)] = p[0];
        }
    }
    m
}
