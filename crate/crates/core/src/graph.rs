//! Sensor graphs, Gaussian-kernel adjacency and graph convolution.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;

/// Settings for turning distances into kernel weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Kernel width. `None` uses the standard deviation of the off-diagonal
    /// distances.
    pub sigma: Option<f64>,
    /// Weights below this value are dropped.
    pub threshold: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma: None,
            threshold: 0.0,
        }
    }
}

/// A set of sensors with pairwise distances and row-normalized adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorGraph {
    pub ids: Vec<String>,
    pub coords: Option<Vec<[f64; 2]>>,
    pub dist: Matrix,
    /// Kernel adjacency with self-loops, before normalization.
    pub kernel: Matrix,
    pub adj_fwd: Matrix,
    /// Reverse-direction adjacency; equals `adj_fwd` for undirected graphs.
    pub adj_bwd: Matrix,
    pub directed: bool,
    pub sigma: f64,
}

impl SensorGraph {
    pub fn from_distances(
        ids: Vec<String>,
        coords: Option<Vec<[f64; 2]>>,
        dist: Matrix,
        kernel: &KernelConfig,
        directed: bool,
    ) -> Result<Self> {
        let n = ids.len();
        if dist.shape() != (n, n) {
            return Err(Error::Data(format!(
                "distance matrix is {}x{} but there are {n} sensors",
                dist.rows(),
                dist.cols()
            )));
        }
        if let Some(c) = &coords {
            if c.len() != n {
                return Err(Error::Data(format!(
                    "{} coordinates for {n} sensors",
                    c.len()
                )));
            }
        }
        validate_distances(&dist, directed)?;
        let sigma = match kernel.sigma {
            Some(s) => s,
            None => default_sigma(&dist),
        };
        let a = gaussian_kernel_adjacency(&dist, sigma, kernel.threshold)?;
        Self::from_kernel(ids, coords, dist, a, directed, sigma)
    }

    fn from_kernel(
        ids: Vec<String>,
        coords: Option<Vec<[f64; 2]>>,
        dist: Matrix,
        kernel: Matrix,
        directed: bool,
        sigma: f64,
    ) -> Result<Self> {
        let adj_fwd = normalize(&kernel)?;
        let adj_bwd = if directed {
            normalize(&kernel.transpose())?
        } else {
            adj_fwd.clone()
        };
        Ok(SensorGraph {
            ids,
            coords,
            dist,
            kernel,
            adj_fwd,
            adj_bwd,
            directed,
            sigma,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    /// Induced subgraph on `node_ids`, with adjacency re-normalized.
    pub fn restrict(&self, node_ids: &[usize]) -> Result<SensorGraph> {
        if let Some(&bad) = node_ids.iter().find(|&&i| i >= self.n_nodes()) {
            return Err(Error::InvalidArgument(format!(
                "node {bad} out of range for a {}-node graph",
                self.n_nodes()
            )));
        }
        let ids = node_ids.iter().map(|&i| self.ids[i].clone()).collect();
        let coords = self
            .coords
            .as_ref()
            .map(|c| node_ids.iter().map(|&i| c[i]).collect());
        Self::from_kernel(
            ids,
            coords,
            self.dist.select(node_ids),
            self.kernel.select(node_ids),
            self.directed,
            self.sigma,
        )
    }

    /// Adjacency supports in direction order (forward, then backward when directed).
    pub fn supports(&self) -> Vec<&Matrix> {
        if self.directed {
            vec![&self.adj_fwd, &self.adj_bwd]
        } else {
            vec![&self.adj_fwd]
        }
    }

    pub fn n_directions(&self) -> usize {
        if self.directed {
            2
        } else {
            1
        }
    }
}

/// Nodes of a parent graph picked for one training instance, with the
/// known/unknown partition used for masking.
#[derive(Clone, Debug)]
pub struct SubgraphSample {
    pub node_ids: Vec<usize>,
    pub known_mask: Vec<bool>,
    pub graph: SensorGraph,
}

fn validate_distances(dist: &Matrix, directed: bool) -> Result<()> {
    let n = dist.rows();
    for i in 0..n {
        if dist.get(i, i) != 0.0 {
            return Err(Error::Data(format!(
                "distance from node {i} to itself is not zero"
            )));
        }
        for j in 0..n {
            let d = dist.get(i, j);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Data(format!("invalid distance {d} at ({i}, {j})")));
            }
            if !directed && (d - dist.get(j, i)).abs() > SYMMETRY_TOL * d.abs().max(1.0) {
                return Err(Error::Data(format!(
                    "undirected graph has asymmetric distances at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Population standard deviation of off-diagonal distances; 1 when undefined.
pub fn default_sigma(dist: &Matrix) -> f64 {
    let n = dist.rows();
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| dist.get(i, j))
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let sd = var.sqrt();
    if sd > 0.0 {
        sd
    } else if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// `A_ij = exp(-d_ij^2 / sigma^2)`, thresholded, with unit self-loops.
pub fn gaussian_kernel_adjacency(dist: &Matrix, sigma: f64, threshold: f64) -> Result<Matrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    if dist.rows() != dist.cols() {
        return Err(Error::shape(
            "gaussian_kernel_adjacency",
            dist.shape(),
            dist.shape(),
        ));
    }
    let s2 = sigma * sigma;
    let mut a = dist.map(|d| {
        let w = (-(d * d) / s2).exp();
        if w < threshold {
            0.0
        } else {
            w
        }
    });
    for i in 0..a.rows() {
        a.set(i, i, 1.0);
    }
    Ok(a)
}

/// Sets every diagonal entry to 1.
pub fn add_self_loops(adj: &Matrix) -> Matrix {
    let mut a = adj.clone();
    for i in 0..a.rows().min(a.cols()) {
        a.set(i, i, 1.0);
    }
    a
}

/// Row normalization `D^-1 A`. An all-zero row becomes a one-hot self-loop.
pub fn normalize(adj: &Matrix) -> Result<Matrix> {
    if adj.rows() != adj.cols() {
        return Err(Error::shape("normalize", adj.shape(), adj.shape()));
    }
    if let Some(x) = adj.as_slice().iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "adjacency entries must be nonnegative, found {x}"
        )));
    }
    let mut out = adj.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let deg: f64 = row.iter().sum();
        if deg > 0.0 {
            row.iter_mut().for_each(|x| *x /= deg);
        } else {
            row[i] = 1.0;
        }
    }
    Ok(out)
}

/// Linear part of a multi-support graph convolution:
/// `sum_s sum_{l=1..L} A_s^l X W[s][l-1]`, powers applied by repeated products.
pub fn diffusion(tape: &mut Tape, x: Var, supports: &[Var], weights: &[Vec<Var>]) -> Result<Var> {
    if supports.len() != weights.len() || supports.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} supports but {} weight stacks",
            supports.len(),
            weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&a, stack) in supports.iter().zip(weights) {
        if stack.is_empty() {
            return Err(Error::InvalidArgument(
                "graph convolution order must be at least 1".into(),
            ));
        }
        let mut propagated = x;
        for &w in stack {
            propagated = tape.matmul(a, propagated)?;
            let term = tape.matmul(propagated, w)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("at least one term"))
}

/// `ReLU(sum_l A^l X W_l)`.
pub fn graph_conv(tape: &mut Tape, x: Var, adj: Var, weights: &[Var]) -> Result<Var> {
    let z = diffusion(tape, x, &[adj], &[weights.to_vec()])?;
    Ok(tape.relu(z))
}

/// `ReLU(sum_l A^l X Wp_l + Ahat^l X Wd_l)`; gradients reach `adaptive_adj`.
pub fn adaptive_graph_conv(
    tape: &mut Tape,
    x: Var,
    adj: Var,
    adaptive_adj: Var,
    weights_p: &[Var],
    weights_d: &[Var],
) -> Result<Var> {
    if weights_p.len() != weights_d.len() {
        return Err(Error::InvalidArgument(
            "pre-defined and adaptive weight stacks differ in order".into(),
        ));
    }
    let z = diffusion(
        tape,
        x,
        &[adj, adaptive_adj],
        &[weights_p.to_vec(), weights_d.to_vec()],
    )?;
    Ok(tape.relu(z))
}
