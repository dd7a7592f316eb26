//! Diffusion-map re-parametrization of a point cloud.
//!
//! Given pairwise distances `d(i, j)` the kernel is `W = exp(-d^2 / eps^2)`,
//! `N` holds its row sums, and the symmetric matrix `N^-1/2 W N^-1/2` is
//! diagonalised. Coordinates are `u_k = lambda_k N^-1/2 v_k`; the constant
//! first coordinate is dropped, small eigenvalues are truncated, and any
//! remaining coordinate that is a function of the coordinates kept before it
//! is pruned with a local linear regression test.
//!
//! Points may carry integer multiplicities. A point of weight `w` behaves
//! exactly like `w` identical copies of it, which lets callers collapse
//! repeated delay vectors before building the (dense) kernel.

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this magnitude never produce coordinates.
const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Kernel weights below this are treated as an extrapolation failure.
const WEIGHT_UNDERFLOW: f64 = 1e-300;

/// Tricube support as a multiple of the farthest neighbour distance.
const TRICUBE_REACH: f64 = 1.0001;

/// Slope ridge relative to the global variance of each regressor column.
const SLOPE_RIDGE: f64 = 1e-6;

/// Bandwidth policy for the Gaussian kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum KernelConfig {
    Fixed { epsilon: f64 },
    /// `epsilon = factor * median of the nonzero pairwise distances`.
    MedianScaled { factor: f64 },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::MedianScaled { factor: 1.0 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelConfig::Fixed { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")))
            }
            KernelConfig::MedianScaled { factor } if !(factor > 0.0 && factor.is_finite()) => {
                Err(Error::InvalidConfig(format!("median factor must be positive, got {factor}")))
            }
            _ => Ok(()),
        }
    }

    /// Resolve the bandwidth for a concrete distance matrix.
    ///
    /// Without any nonzero distance the median policy falls back to 1.
    pub fn resolve(&self, dist: &DistanceMatrix, weights: Option<&[f64]>) -> f64 {
        match *self {
            KernelConfig::Fixed { epsilon } => epsilon,
            KernelConfig::MedianScaled { factor } => {
                weighted_median_distance(dist, weights).map_or(1.0, |m| factor * m)
            }
        }
    }
}

/// Truncation and pruning thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Keep eigenpairs with `|lambda_k| >= lambda_ratio * |lambda_2|`.
    pub lambda_ratio: f64,
    /// Prune a coordinate whose normalized local-regression residual is below this.
    pub dependency_residual: f64,
    /// Neighbourhood size of the local regression.
    pub neighbors: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            lambda_ratio: 1e-3,
            dependency_residual: 0.2,
            neighbors: 10,
        }
    }
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_ratio must lie in (0,1), got {}",
                self.lambda_ratio
            )));
        }
        if !(self.dependency_residual > 0.0 && self.dependency_residual < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dependency_residual must lie in (0,1), got {}",
                self.dependency_residual
            )));
        }
        if self.neighbors < 2 {
            return Err(Error::InvalidConfig("dependency test needs at least 2 neighbors".into()));
        }
        Ok(())
    }
}

/// Dense symmetric matrix of Euclidean distances, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                    context: format!("distance matrix row {i}"),
                });
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn pairwise_distances(points: &[Vec<f64>]) -> DistanceMatrix {
    let n = points.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for j in 0..n {
            if j != i {
                row[j] = euclidean(&points[i], &points[j]);
            }
        }
    });
    // make exact symmetry independent of summation order
    for i in 0..n {
        for j in 0..i {
            data[j * n + i] = data[i * n + j];
        }
    }
    DistanceMatrix { n, data }
}

fn weighted_median_distance(dist: &DistanceMatrix, weights: Option<&[f64]>) -> Option<f64> {
    let n = dist.n();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let wi = weights.map_or(1.0, |w| w[i]);
        for j in i + 1..n {
            let d = dist.get(i, j);
            if d > 0.0 {
                pairs.push((d, wi * weights.map_or(1.0, |w| w[j])));
            }
        }
    }
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(d, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return Some(d);
        }
    }
    pairs.last().map(|p| p.0)
}

/// Outcome of the dependency test for one candidate eigenvector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    /// Position in the |lambda|-sorted spectrum (0 is the constant eigenvector).
    pub index: usize,
    pub eigenvalue: f64,
    /// Normalized local-regression residual against the coordinates kept before it;
    /// `None` for the first candidate.
    pub residual: Option<f64>,
    pub kept: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionCoordinates {
    epsilon: f64,
    /// Full spectrum sorted by decreasing magnitude.
    eigenvalues: Vec<f64>,
    kept: Vec<usize>,
    /// Row `i` holds the retained coordinates of point `i`.
    coordinates: Vec<Vec<f64>>,
    weights: Vec<f64>,
    candidates: Vec<CandidateReport>,
    #[serde(default)]
    nodes: Vec<Vec<f64>>,
}

impl DiffusionCoordinates {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Spectrum positions of the retained eigenpairs.
    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn kept_eigenvalues(&self) -> Vec<f64> {
        self.kept.iter().map(|&k| self.eigenvalues[k]).collect()
    }

    pub fn dimension(&self) -> usize {
        self.kept.len()
    }

    pub fn coordinates(&self) -> &[Vec<f64>] {
        &self.coordinates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn candidates(&self) -> &[CandidateReport] {
        &self.candidates
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    /// Attach the points the map was built from, enabling [`nystrom_extend`].
    pub fn with_nodes(mut self, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() != self.coordinates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coordinates.len(),
                found: nodes.len(),
                context: "diffusion-map nodes".into(),
            });
        }
        self.nodes = nodes;
        Ok(self)
    }
}

/// Compute distances and coordinates, keeping the points for out-of-sample use.
pub fn fit_diffusion_map(
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    kernel: &KernelConfig,
    truncation: &Truncation,
) -> Result<DiffusionCoordinates> {
    let dist = pairwise_distances(points);
    build_coordinates(&dist, weights, kernel, truncation)?.with_nodes(points.to_vec())
}

pub fn build_coordinates(
    dist: &DistanceMatrix,
    weights: Option<&[f64]>,
    kernel: &KernelConfig,
    truncation: &Truncation,
) -> Result<DiffusionCoordinates> {
    kernel.validate()?;
    truncation.validate()?;
    let n = dist.n();
    if n == 0 {
        return Err(Error::TooFewNodes { found: 0, required: 1 });
    }
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
                context: "point weights".into(),
            })
        }
        Some(w) if w.iter().any(|v| !(*v > 0.0)) => {
            return Err(Error::InvalidConfig("point weights must be positive".into()))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let epsilon = kernel.resolve(dist, Some(&weights));
    let eps2 = epsilon * epsilon;

    let mut kernel_matrix = Mat::<f64>::from_fn(n, n, |i, j| {
        let d = dist.get(i, j);
        (-d * d / eps2).exp()
    });
    let row_sums: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kernel_matrix[(i, j)] * weights[j]).sum())
        .collect();
    let scale: Vec<f64> = (0..n).map(|i| (weights[i] / row_sums[i]).sqrt()).collect();
    for j in 0..n {
        for i in 0..n {
            kernel_matrix[(i, j)] *= scale[i] * scale[j];
        }
    }

    let evd = kernel_matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(b.cmp(&a)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }

    let lambda2 = eigenvalues.get(1).map_or(0.0, |v| v.abs());
    let threshold = (truncation.lambda_ratio * lambda2).max(EIGENVALUE_FLOOR);
    let mut coordinate_columns: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut candidates = Vec::new();
    let mut neighbors: Option<Vec<Vec<usize>>> = None;
    let measure: Vec<f64> = (0..n).map(|i| weights[i] * row_sums[i]).collect();

    if lambda2 > EIGENVALUE_FLOOR {
        for (pos, &col) in order.iter().enumerate().skip(1) {
            let lambda = values[col];
            if lambda.abs() < threshold {
                break;
            }
            let full: Vec<f64> = (0..n).map(|i| vectors[(i, col)] / weights[i].sqrt()).collect();
            let sign = sign_of_largest(&full);
            let u: Vec<f64> = (0..n)
                .map(|i| sign * lambda * full[i] / row_sums[i].sqrt())
                .collect();
            if !has_variance(&u, &weights) {
                candidates.push(CandidateReport {
                    index: pos,
                    eigenvalue: lambda,
                    residual: None,
                    kept: false,
                });
                continue;
            }
            let residual = if coordinate_columns.is_empty() {
                None
            } else {
                let nb = neighbors.get_or_insert_with(|| {
                    nearest_neighbors(&coordinate_columns, dist, truncation.neighbors)
                });
                Some(local_linear_residual(&coordinate_columns, nb, &u, &measure))
            };
            let keep = residual.is_none_or(|r| r >= truncation.dependency_residual);
            candidates.push(CandidateReport {
                index: pos,
                eigenvalue: lambda,
                residual,
                kept: keep,
            });
            if keep {
                coordinate_columns.push(u);
                kept.push(pos);
                neighbors = None;
            }
        }
    }
    if kept.is_empty() {
        log::warn!("diffusion map retained no nontrivial coordinates (d = 0)");
    }

    let coordinates = (0..n)
        .map(|i| coordinate_columns.iter().map(|c| c[i]).collect())
        .collect();
    Ok(DiffusionCoordinates {
        epsilon,
        eigenvalues,
        kept,
        coordinates,
        weights,
        candidates,
        nodes: Vec::new(),
    })
}

/// +1 or -1 such that the entry of largest magnitude becomes positive.
/// Near-ties resolve to the lowest index.
fn sign_of_largest(v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let pick = v
        .iter()
        .find(|x| x.abs() >= max * (1.0 - 1e-10))
        .copied()
        .unwrap_or(1.0);
    if pick < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn has_variance(u: &[f64], weights: &[f64]) -> bool {
    let total: f64 = weights.iter().sum();
    let mean = u.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = u.iter().zip(weights).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
    let scale = u.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    scale > 0.0 && var.sqrt() > 1e-10 * scale
}

/// `count` nearest neighbours of every point in the space spanned by `columns`,
/// excluding the point itself and exact copies of it in the original space.
fn nearest_neighbors(columns: &[Vec<f64>], dist: &DistanceMatrix, count: usize) -> Vec<Vec<usize>> {
    let n = columns[0].len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i && dist.get(i, j) > 0.0)
                .map(|j| {
                    let d2: f64 = columns.iter().map(|c| (c[i] - c[j]).powi(2)).sum();
                    (d2, j)
                })
                .collect();
            let k = count.min(cand.len());
            if k < cand.len() {
                cand.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(k);
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Local linear regression of `target` on `columns` over each point's
/// neighbourhood (the point itself plus `neighbors[i]`, tricube weights),
/// evaluated at the point. Squared errors and the spread of `target` are
/// weighted by `measure`. Values near zero mean `target` is locally a
/// function of the columns.
fn local_linear_residual(
    columns: &[Vec<f64>],
    neighbors: &[Vec<usize>],
    target: &[f64],
    measure: &[f64],
) -> f64 {
    let n = target.len();
    let total: f64 = measure.iter().sum();
    let mean = target.iter().zip(measure).map(|(t, m)| t * m).sum::<f64>() / total;
    let spread: f64 = target
        .iter()
        .zip(measure)
        .map(|(t, m)| m * (t - mean).powi(2))
        .sum();
    if !(spread > 0.0) {
        return 0.0;
    }
    let p = columns.len() + 1;
    let column_var: Vec<f64> = columns
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let sse: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let nb = &neighbors[i];
            let d: Vec<f64> = nb
                .iter()
                .map(|&j| columns.iter().map(|c| (c[j] - c[i]).powi(2)).sum::<f64>().sqrt())
                .collect();
            let reach = d.iter().copied().fold(0.0, f64::max) * TRICUBE_REACH;
            let mut ata = vec![0.0; p * p];
            let mut atb = vec![0.0; p];
            ata[0] = 1.0;
            atb[0] = target[i];
            let mut row = vec![0.0; p];
            for (&j, &dj) in nb.iter().zip(&d) {
                let w = if reach > 0.0 { (1.0 - (dj / reach).powi(3)).powi(3) } else { 1.0 };
                row[0] = 1.0;
                for (c, col) in columns.iter().enumerate() {
                    row[c + 1] = col[j] - col[i];
                }
                for a in 0..p {
                    atb[a] += w * row[a] * target[j];
                    for b in 0..p {
                        ata[a * p + b] += w * row[a] * row[b];
                    }
                }
            }
            // slopes along columns that are locally constant to rounding stay near zero
            let wsum = ata[0];
            for a in 1..p {
                ata[a * p + a] += SLOPE_RIDGE * wsum * column_var[a - 1];
            }
            let prediction = solve_small(&mut ata, &mut atb, p).map_or(target[i], |x| x[0]);
            measure[i] * (target[i] - prediction).powi(2)
        })
        .sum();
    (sse / spread).sqrt()
}

/// Gaussian elimination with partial pivoting on a tiny dense system.
pub(crate) fn solve_small(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Kernel-weighted out-of-sample extension of the retained coordinates.
///
/// Exact at the nodes the map was built from.
pub fn nystrom_extend(coords: &DiffusionCoordinates, query: &[f64]) -> Result<Vec<f64>> {
    if coords.nodes.is_empty() {
        return Err(Error::InvalidConfig(
            "diffusion coordinates carry no nodes; build them with fit_diffusion_map".into(),
        ));
    }
    let dim = coords.nodes[0].len();
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: query.len(),
            context: "Nystrom query".into(),
        });
    }
    let eps2 = coords.epsilon * coords.epsilon;
    let mut total = 0.0;
    let mut acc = vec![0.0; coords.dimension()];
    let mut max_weight = 0.0_f64;
    for (i, node) in coords.nodes.iter().enumerate() {
        let d = euclidean(node, query);
        let w = (-d * d / eps2).exp();
        max_weight = max_weight.max(w);
        let w = w * coords.weights[i];
        total += w;
        for (a, u) in acc.iter_mut().zip(&coords.coordinates[i]) {
            *a += w * u;
        }
    }
    if max_weight < WEIGHT_UNDERFLOW {
        return Err(Error::Extrapolation(WEIGHT_UNDERFLOW));
    }
    Ok(acc
        .iter()
        .zip(coords.kept_eigenvalues())
        .map(|(a, lambda)| a / (lambda * total))
        .collect())
}
