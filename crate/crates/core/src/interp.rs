//! Scattered-data interpolation on nodes in `R^p` with values in `R^q`.
//!
//! Four methods are available: nearest node, Shepard inverse-distance
//! weighting over the `k` nearest nodes, an inverse-distance weighted local
//! affine fit over the `k` nearest nodes, and Gaussian radial basis functions
//! with an affine tail. Nodes closer than [`MERGE_TOLERANCE`] are merged
//! before fitting.

use std::sync::OnceLock;

use faer::linalg::solvers::DenseSolveCore;
use faer::prelude::*;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes closer than this are treated as one node.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// Relative disagreement tolerated between values of merged nodes.
pub const CONFLICT_TOLERANCE: f64 = 1e-6;

/// Required relative residual of the RBF linear system.
pub const RBF_RESIDUAL: f64 = 1e-8;

/// Gaussian kernel values with `(r / length)^2` beyond this are zero.
const RBF_CUTOFF: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Nearest,
    /// Inverse-distance weighting with weights `d_i^-power` over the
    /// `neighbors` nearest nodes; `None` means `min(2 (p + 1), n)`.
    Shepard {
        neighbors: Option<usize>,
        power: f64,
    },
    /// Affine least-squares fit around the query over the `neighbors` nearest
    /// nodes with weights `d_i^-power`; `None` means `min(4 (p + 1), n)`.
    /// Each output is limited to the range of the neighbour values. Reproduces
    /// node values exactly, and affine data wherever that limit is inactive.
    LocalLinear {
        neighbors: Option<usize>,
        power: f64,
    },
    /// Gaussian kernel `exp(-(r / l)^2)` with `l = shape * h`, where `h` is the
    /// median distance from a node to its nearest neighbour.
    RbfGaussian { shape: f64, ridge: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Shepard {
            neighbors: None,
            power: 2.0,
        }
    }
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::Nearest => Ok(()),
            Method::Shepard { neighbors, power } => check_weighting("shepard", neighbors, power),
            Method::LocalLinear { neighbors, power } => check_weighting("local_linear", neighbors, power),
            Method::RbfGaussian { shape, ridge } => {
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(Error::InvalidConfig(format!("rbf shape must be positive, got {shape}")));
                }
                if !(ridge >= 0.0 && ridge.is_finite()) {
                    return Err(Error::InvalidConfig(format!("rbf ridge must be nonnegative, got {ridge}")));
                }
                Ok(())
            }
        }
    }
}

fn check_weighting(name: &str, neighbors: Option<usize>, power: f64) -> Result<()> {
    if neighbors == Some(0) {
        return Err(Error::InvalidConfig(format!("{name} needs at least one neighbor")));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidConfig(format!("{name} power must be positive, got {power}")));
    }
    Ok(())
}

/// Node positions sorted along the coordinate axis of largest spread.
#[derive(Clone, Debug)]
struct SortedIndex {
    axis: usize,
    keys: Vec<f64>,
    order: Vec<usize>,
}

impl SortedIndex {
    fn new(nodes: &[Vec<f64>]) -> Self {
        let p = nodes[0].len();
        let spread = |a: usize| {
            let (lo, hi) = nodes
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[a]), hi.max(x[a])));
            hi - lo
        };
        let mut axis = 0;
        for a in 1..p {
            if spread(a) > spread(axis) {
                axis = a;
            }
        }
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&i, &j| nodes[i][axis].total_cmp(&nodes[j][axis]).then(i.cmp(&j)));
        let keys = order.iter().map(|&i| nodes[i][axis]).collect();
        Self { axis, keys, order }
    }

    /// The `k` nearest nodes as `(squared distance, index)`, ascending, ties by index.
    fn nearest(&self, nodes: &[Vec<f64>], q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let qa = q[self.axis];
        let pos = self.keys.partition_point(|&x| x < qa);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut left = pos;
        let mut right = pos;
        let worst = |best: &Vec<(f64, usize)>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[k - 1].0
            }
        };
        loop {
            let gap_l = (left > 0).then(|| (qa - self.keys[left - 1]).powi(2));
            let gap_r = (right < self.keys.len()).then(|| (self.keys[right] - qa).powi(2));
            let take_left = match (gap_l, gap_r) {
                (None, None) => break,
                (Some(l), None) => {
                    if l > worst(&best) {
                        break;
                    }
                    true
                }
                (None, Some(r)) => {
                    if r > worst(&best) {
                        break;
                    }
                    false
                }
                (Some(l), Some(r)) => {
                    if l.min(r) > worst(&best) {
                        break;
                    }
                    l <= r
                }
            };
            let idx = if take_left {
                left -= 1;
                self.order[left]
            } else {
                right += 1;
                self.order[right - 1]
            };
            if Some(idx) == exclude {
                continue;
            }
            let d2 = dist2(&nodes[idx], q);
            let entry = (d2, idx);
            if best.len() < k || cmp_entry(&entry, &best[k - 1]).is_lt() {
                let at = best.partition_point(|e| cmp_entry(e, &entry).is_lt());
                best.insert(at, entry);
                best.truncate(k);
            }
        }
        best
    }

    /// Indices of all nodes whose axis coordinate lies within `radius` of the query's.
    fn window(&self, q: &[f64], radius: f64) -> &[usize] {
        let qa = q[self.axis];
        let lo = self.keys.partition_point(|&x| x < qa - radius);
        let hi = self.keys.partition_point(|&x| x <= qa + radius);
        &self.order[lo..hi]
    }
}

fn cmp_entry(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Coefficients of a fitted Gaussian RBF interpolant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RbfFit {
    length: f64,
    /// Kernel coefficients, one row per node.
    coefficients: Vec<Vec<f64>>,
    center: Vec<f64>,
    /// Scaled principal directions spanning the node cloud.
    directions: Vec<Vec<f64>>,
    /// Tail coefficients, row 0 constant, row `1 + j` for direction `j`.
    tail: Vec<Vec<f64>>,
    residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Interpolant {
    method: Method,
    nodes: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    /// Median distance from a node to its nearest other node (0 for one node).
    spacing: f64,
    rbf: Option<RbfFit>,
    #[serde(skip)]
    index: OnceLock<SortedIndex>,
}

impl PartialEq for Interpolant {
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.nodes == other.nodes
            && self.values == other.values
            && self.spacing == other.spacing
            && self.rbf == other.rbf
    }
}

impl Interpolant {
    pub fn fit(nodes: &[Vec<f64>], values: &[Vec<f64>], method: Method) -> Result<Self> {
        method.validate()?;
        if nodes.is_empty() {
            return Err(Error::TooFewNodes { found: 0, required: 1 });
        }
        if nodes.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                found: values.len(),
                context: "interpolant values".into(),
            });
        }
        let p = nodes[0].len();
        let q = values[0].len();
        if p == 0 || q == 0 {
            return Err(Error::InvalidConfig("interpolant dimensions must be positive".into()));
        }
        for (i, (x, v)) in nodes.iter().zip(values).enumerate() {
            if x.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: x.len(),
                    context: format!("interpolant node {i}"),
                });
            }
            if v.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: v.len(),
                    context: format!("interpolant value {i}"),
                });
            }
            if x.iter().chain(v).any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite interpolation data at node {i}")));
            }
        }
        let (nodes, values) = merge_duplicates(nodes, values)?;
        let mut out = Self {
            method,
            nodes,
            values,
            spacing: 0.0,
            rbf: None,
            index: OnceLock::new(),
        };
        out.spacing = out.median_spacing();
        if let Method::RbfGaussian { shape, ridge } = method {
            let length = if out.spacing > 0.0 { shape * out.spacing } else { shape };
            out.rbf = Some(fit_rbf(&out.nodes, &out.values, length, ridge)?);
        }
        Ok(out)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Nodes after merging duplicates.
    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Kernel length of an RBF interpolant.
    pub fn rbf_length(&self) -> Option<f64> {
        self.rbf.as_ref().map(|r| r.length)
    }

    /// Relative residual reached by the RBF solve.
    pub fn rbf_residual(&self) -> Option<f64> {
        self.rbf.as_ref().map(|r| r.residual)
    }

    fn index(&self) -> &SortedIndex {
        self.index.get_or_init(|| SortedIndex::new(&self.nodes))
    }

    fn median_spacing(&self) -> f64 {
        if self.nodes.len() < 2 {
            return 0.0;
        }
        let mut d: Vec<f64> = (0..self.nodes.len())
            .map(|i| self.index().nearest(&self.nodes, &self.nodes[i], 1, Some(i))[0].0.sqrt())
            .collect();
        let mid = d.len() / 2;
        *d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: query.len(),
                context: "interpolant query".into(),
            });
        }
        Ok(())
    }

    /// Distance from `query` to the closest node.
    pub fn nearest_distance(&self, query: &[f64]) -> Result<f64> {
        self.check_query(query)?;
        Ok(self.index().nearest(&self.nodes, query, 1, None)[0].0.sqrt())
    }

    /// True when the closest node is farther than `factor` node spacings.
    pub fn is_extrapolating(&self, query: &[f64], factor: f64) -> Result<bool> {
        Ok(self.nearest_distance(query)? > factor * self.spacing)
    }

    pub fn eval(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(self.eval_excluding(query, None))
    }

    fn eval_excluding(&self, query: &[f64], exclude: Option<usize>) -> Vec<f64> {
        match self.method {
            Method::Nearest => {
                let hit = self.index().nearest(&self.nodes, query, 1, exclude);
                self.values[hit[0].1].clone()
            }
            Method::Shepard { neighbors, power } => {
                let available = self.nodes.len() - usize::from(exclude.is_some());
                let k = neighbors
                    .unwrap_or(2 * (self.input_dim() + 1))
                    .min(available)
                    .max(1);
                let near = self.index().nearest(&self.nodes, query, k, exclude);
                shepard_blend(&near, &self.values, power)
            }
            Method::LocalLinear { neighbors, power } => {
                let available = self.nodes.len() - usize::from(exclude.is_some());
                let k = neighbors
                    .unwrap_or(4 * (self.input_dim() + 1))
                    .min(available)
                    .max(1);
                let near = self.index().nearest(&self.nodes, query, k, exclude);
                local_linear(&near, &self.nodes, &self.values, query, power)
            }
            Method::RbfGaussian { .. } => {
                let rbf = self.rbf.as_ref().expect("rbf interpolant carries its fit");
                self.eval_rbf(rbf, query)
            }
        }
    }

    fn eval_rbf(&self, rbf: &RbfFit, query: &[f64]) -> Vec<f64> {
        let q = self.output_dim();
        let mut out = rbf.tail[0].clone();
        for (j, dir) in rbf.directions.iter().enumerate() {
            let t = project(dir, &rbf.center, query);
            for (o, c) in out.iter_mut().zip(&rbf.tail[1 + j]) {
                *o += t * c;
            }
        }
        let inv = 1.0 / (rbf.length * rbf.length);
        let radius = rbf.length * RBF_CUTOFF.sqrt();
        for &i in self.index().window(query, radius) {
            let s = dist2(&self.nodes[i], query) * inv;
            if s <= RBF_CUTOFF {
                let k = (-s).exp();
                for c in 0..q {
                    out[c] += k * rbf.coefficients[i][c];
                }
            }
        }
        out
    }

    /// Leave-one-out estimate of the maximum interpolation error: the largest
    /// max-norm deviation at a node when the interpolant is built without it.
    pub fn loo_error(&self) -> Result<f64> {
        let n = self.nodes.len();
        if n < 3 {
            return Err(Error::TooFewNodes { found: n, required: 3 });
        }
        match (&self.method, &self.rbf) {
            (Method::RbfGaussian { ridge, .. }, Some(rbf)) => rippa_loo(&self.nodes, rbf, *ridge),
            _ => Ok((0..n)
                .map(|i| {
                    let est = self.eval_excluding(&self.nodes[i], Some(i));
                    max_abs_diff(&est, &self.values[i])
                })
                .fold(0.0, f64::max)),
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn shepard_blend(near: &[(f64, usize)], values: &[Vec<f64>], power: f64) -> Vec<f64> {
    let (d0, i0) = near[0];
    if d0 == 0.0 {
        return values[i0].clone();
    }
    let dmin = d0.sqrt();
    let mut out = vec![0.0; values[i0].len()];
    let mut total = 0.0;
    for &(d2, i) in near {
        // scaled by the closest distance so the weights stay in (0, 1]
        let w = (dmin / d2.sqrt()).powf(power);
        total += w;
        for (o, v) in out.iter_mut().zip(&values[i]) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// Weighted affine fit `v ~ a + b (x - c)` over `near`, with `c` the weighted
/// centroid, evaluated at `query`. Centring decouples `a` from the slopes, and
/// the slopes come from a truncated eigen pseudo-inverse, so directions the
/// neighbours do not span get zero slope.
fn local_linear(near: &[(f64, usize)], nodes: &[Vec<f64>], values: &[Vec<f64>], query: &[f64], power: f64) -> Vec<f64> {
    let (d0, i0) = near[0];
    if d0 == 0.0 || near.len() < 2 {
        return values[i0].clone();
    }
    let p = query.len();
    let q = values[i0].len();
    let dmin = d0.sqrt();
    let dmax = near[near.len() - 1].0.sqrt();
    // scaled by the closest distance so the weights stay in (0, 1]
    let w: Vec<f64> = near.iter().map(|&(d2, _)| (dmin / d2.sqrt()).powf(power)).collect();
    let total: f64 = w.iter().sum();
    let mut centroid = vec![0.0; p];
    let mut mean = vec![0.0; q];
    for (&wi, &(_, i)) in w.iter().zip(near) {
        for (c, x) in centroid.iter_mut().zip(&nodes[i]) {
            *c += wi * x / total;
        }
        for (m, v) in mean.iter_mut().zip(&values[i]) {
            *m += wi * v / total;
        }
    }
    let mut gram = Mat::<f64>::zeros(p, p);
    let mut moments = vec![vec![0.0; q]; p];
    let mut row = vec![0.0; p];
    for (&wi, &(_, i)) in w.iter().zip(near) {
        for a in 0..p {
            row[a] = (nodes[i][a] - centroid[a]) / dmax;
        }
        for a in 0..p {
            for b in 0..=a {
                gram[(a, b)] += wi * row[a] * row[b];
            }
            for c in 0..q {
                moments[a][c] += wi * row[a] * (values[i][c] - mean[c]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let Ok(evd) = gram.self_adjoint_eigen(faer::Side::Lower) else {
        return shepard_blend(near, values, power);
    };
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let top = (0..p).map(|k| vals[k]).fold(0.0_f64, f64::max);
    let offset: Vec<f64> = (0..p).map(|a| (query[a] - centroid[a]) / dmax).collect();
    let mut out = mean;
    for k in 0..p {
        if !(vals[k] > 1e-12 * top) {
            continue;
        }
        let along: f64 = (0..p).map(|a| vecs[(a, k)] * offset[a]).sum::<f64>() / vals[k];
        for (c, o) in out.iter_mut().enumerate() {
            let proj: f64 = (0..p).map(|a| vecs[(a, k)] * moments[a][c]).sum();
            *o += along * proj;
        }
    }
    // limited to the neighbour value range so queries off the data cannot run away
    for (c, o) in out.iter_mut().enumerate() {
        let (lo, hi) = near
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, i)| (lo.min(values[i][c]), hi.max(values[i][c])));
        *o = o.clamp(lo, hi);
    }
    out
}

fn merge_duplicates(nodes: &[Vec<f64>], values: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let index = SortedIndex::new(nodes);
    let mut group = vec![usize::MAX; nodes.len()];
    let mut merged_nodes = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for i in 0..nodes.len() {
        if group[i] != usize::MAX {
            continue;
        }
        let g = merged_nodes.len();
        merged_nodes.push(nodes[i].clone());
        sums.push(vec![0.0; values[i].len()]);
        counts.push(0.0);
        for &j in index.window(&nodes[i], MERGE_TOLERANCE) {
            if group[j] != usize::MAX || dist2(&nodes[i], &nodes[j]).sqrt() > MERGE_TOLERANCE {
                continue;
            }
            for (a, b) in values[i].iter().zip(&values[j]) {
                let difference = (a - b).abs();
                if difference > CONFLICT_TOLERANCE * 1f64.max(a.abs()).max(b.abs()) {
                    return Err(Error::ConflictingDuplicates { index: j, difference });
                }
            }
            group[j] = g;
            for (s, v) in sums[g].iter_mut().zip(&values[j]) {
                *s += v;
            }
            counts[g] += 1.0;
        }
    }
    let merged_values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c).collect())
        .collect();
    Ok((merged_nodes, merged_values))
}

fn project(dir: &[f64], center: &[f64], x: &[f64]) -> f64 {
    dir.iter().zip(center).zip(x).map(|((d, c), v)| d * (v - c)).sum()
}

/// Centre and scaled principal directions of the node cloud. Directions with
/// negligible spread are dropped so collinear nodes keep the tail solvable.
fn principal_directions(nodes: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = nodes.len() as f64;
    let p = nodes[0].len();
    let mut center = vec![0.0; p];
    for x in nodes {
        for (c, v) in center.iter_mut().zip(x) {
            *c += v / n;
        }
    }
    let cov = Mat::<f64>::from_fn(p, p, |a, b| {
        nodes.iter().map(|x| (x[a] - center[a]) * (x[b] - center[b])).sum::<f64>() / n
    });
    let Ok(evd) = cov.self_adjoint_eigen(faer::Side::Lower) else {
        return (center, Vec::new());
    };
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let top = (0..p).map(|k| vals[k]).fold(0.0_f64, f64::max);
    let mut dirs = Vec::new();
    for k in (0..p).rev() {
        if top > 0.0 && vals[k] > 1e-12 * top {
            let scale = 1.0 / vals[k].sqrt();
            dirs.push((0..p).map(|a| vecs[(a, k)] * scale).collect());
        }
    }
    (center, dirs)
}

/// Augmented kernel system `[K + ridge I, P; P^T, 0]`.
fn rbf_system(nodes: &[Vec<f64>], length: f64, ridge: f64, center: &[f64], dirs: &[Vec<f64>]) -> Mat<f64> {
    let n = nodes.len();
    let r = dirs.len() + 1;
    let inv = 1.0 / (length * length);
    let mut a = Mat::<f64>::zeros(n + r, n + r);
    for i in 0..n {
        for j in 0..=i {
            let s = dist2(&nodes[i], &nodes[j]) * inv;
            let k = if s <= RBF_CUTOFF { (-s).exp() } else { 0.0 };
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        a[(i, i)] += ridge;
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
        for (t, dir) in dirs.iter().enumerate() {
            let v = project(dir, center, &nodes[i]);
            a[(i, n + 1 + t)] = v;
            a[(n + 1 + t, i)] = v;
        }
    }
    a
}

fn fit_rbf(nodes: &[Vec<f64>], values: &[Vec<f64>], length: f64, ridge: f64) -> Result<RbfFit> {
    let n = nodes.len();
    let q = values[0].len();
    let (center, directions) = principal_directions(nodes);
    let r = directions.len() + 1;
    let a = rbf_system(nodes, length, ridge, &center, &directions);
    let rhs = Mat::<f64>::from_fn(n + r, q, |i, c| if i < n { values[i][c] } else { 0.0 });
    let lu = a.partial_piv_lu();
    let mut x = rhs.clone();
    lu.solve_in_place(x.as_mut());
    let scale = (0..n)
        .flat_map(|i| values[i].iter())
        .fold(1.0_f64, |m, v| m.max(v.abs()));
    for _ in 0..3 {
        let res = &rhs - &a * &x;
        let residual = max_entry(&res) / scale;
        if !residual.is_finite() || residual < 1e-14 {
            break;
        }
        let mut dx = res;
        lu.solve_in_place(dx.as_mut());
        x += &dx;
    }
    let res = &rhs - &a * &x;
    let residual = max_entry(&res) / scale;
    if !(residual < RBF_RESIDUAL) {
        return Err(Error::SingularSystem { residual });
    }
    Ok(RbfFit {
        length,
        coefficients: (0..n).map(|i| (0..q).map(|c| x[(i, c)]).collect()).collect(),
        center,
        directions,
        tail: (0..r).map(|t| (0..q).map(|c| x[(n + t, c)]).collect()).collect(),
        residual,
    })
}

fn max_entry(m: &Mat<f64>) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)].abs();
            if v.is_nan() {
                return f64::NAN;
            }
            best = best.max(v);
        }
    }
    best
}

/// Leave-one-out errors of an RBF fit from its coefficients and the diagonal
/// of the inverse system matrix, `e_i = c_i / (A^-1)_ii`.
fn rippa_loo(nodes: &[Vec<f64>], rbf: &RbfFit, ridge: f64) -> Result<f64> {
    let n = nodes.len();
    let a = rbf_system(nodes, rbf.length, ridge, &rbf.center, &rbf.directions);
    let inv = a.partial_piv_lu().inverse();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let diag = inv[(i, i)];
        if diag == 0.0 || !diag.is_finite() {
            return Err(Error::SingularSystem { residual: f64::INFINITY });
        }
        for c in &rbf.coefficients[i] {
            worst = worst.max((c / diag).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_nodes(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| vec![*x]).collect()
    }

    fn rbf() -> Method {
        Method::RbfGaussian { shape: 3.0, ridge: 0.0 }
    }

    fn local(k: usize) -> Method {
        Method::LocalLinear {
            neighbors: Some(k),
            power: 2.0,
        }
    }

    #[test]
    fn single_node_is_constant() {
        for m in [Method::Nearest, Method::default(), local(8), rbf()] {
            let f = Interpolant::fit(&[vec![0.3, 0.1]], &[vec![2.0]], m).unwrap();
            assert_eq!(f.eval(&[5.0, -4.0]).unwrap(), vec![2.0]);
        }
    }

    #[test]
    fn shepard_exact_at_nodes_and_midpoint_mean() {
        let m = Method::Shepard {
            neighbors: Some(2),
            power: 2.0,
        };
        let f = Interpolant::fit(&scalar_nodes(&[0.0, 1.0]), &[vec![0.0], vec![1.0]], m).unwrap();
        assert_eq!(f.eval(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(f.eval(&[1.0]).unwrap(), vec![1.0]);
        assert!((f.eval(&[0.5]).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn local_linear_affine_exact_in_plane() {
        let nodes: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i as f64 * 0.618034).fract(), (i as f64 * 0.754878).fract()])
            .collect();
        let vals: Vec<Vec<f64>> = nodes.iter().map(|x| vec![1.5 * x[0] - 2.0 * x[1] + 0.25, -x[1]]).collect();
        let f = Interpolant::fit(&nodes, &vals, local(12)).unwrap();
        for (x, v) in nodes.iter().zip(&vals) {
            assert_eq!(&f.eval(x).unwrap(), v);
        }
        for q in [[0.3, 0.4], [0.71, 0.12], [0.5, 0.5]] {
            let got = f.eval(&q).unwrap();
            assert!((got[0] - (1.5 * q[0] - 2.0 * q[1] + 0.25)).abs() < 1e-12, "{got:?}");
            assert!((got[1] + q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn local_linear_stays_in_neighbour_range() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let vals: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x]).collect();
        let f = Interpolant::fit(&scalar_nodes(&xs), &vals, local(4)).unwrap();
        assert_eq!(f.eval(&[30.0]).unwrap(), vec![18.0]);
        assert_eq!(f.eval(&[-5.0]).unwrap(), vec![0.0]);
        // neighbours on a line leave the normal direction flat
        let line: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x, 0.0]).collect();
        let g = Interpolant::fit(&line, &vals, local(4)).unwrap();
        assert!((g.eval(&[4.5, 3.0]).unwrap()[0] - 9.0).abs() < 1e-12);
        assert!(Method::LocalLinear { neighbors: Some(0), power: 2.0 }.validate().is_err());
        assert!(Method::LocalLinear { neighbors: None, power: 0.0 }.validate().is_err());
    }

    #[test]
    fn nearest_picks_closest() {
        let f = Interpolant::fit(&scalar_nodes(&[0.0, 1.0, 3.0]), &[vec![1.0], vec![2.0], vec![3.0]], Method::Nearest)
            .unwrap();
        assert_eq!(f.eval(&[1.9]).unwrap(), vec![2.0]);
        assert_eq!(f.eval(&[2.1]).unwrap(), vec![3.0]);
        assert!((f.nearest_distance(&[2.1]).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn duplicates_merge_or_conflict() {
        let nodes = scalar_nodes(&[0.0, 0.0, 1.0]);
        let f = Interpolant::fit(&nodes, &[vec![1.0], vec![1.0 + 1e-9], vec![3.0]], Method::default()).unwrap();
        assert_eq!(f.len(), 2);
        match Interpolant::fit(&nodes, &[vec![1.0], vec![1.5], vec![3.0]], Method::default()) {
            Err(Error::ConflictingDuplicates { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rbf_node_residual_on_sine() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.61803).fract() * 6.0).collect();
        let vals: Vec<Vec<f64>> = xs.iter().map(|x| vec![x.sin()]).collect();
        let f = Interpolant::fit(&scalar_nodes(&xs), &vals, rbf()).unwrap();
        for (x, v) in xs.iter().zip(&vals) {
            assert!((f.eval(&[*x]).unwrap()[0] - v[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_function_accuracy() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let vals: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x - 0.5]).collect();
        let bracket = Method::Shepard {
            neighbors: Some(2),
            power: 1.0,
        };
        let shep = Interpolant::fit(&scalar_nodes(&xs), &vals, bracket).unwrap();
        let r = Interpolant::fit(&scalar_nodes(&xs), &vals, rbf()).unwrap();
        let mut es: f64 = 0.0;
        let mut er: f64 = 0.0;
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let truth = 2.0 * x - 0.5;
            es = es.max((shep.eval(&[x]).unwrap()[0] - truth).abs());
            er = er.max((r.eval(&[x]).unwrap()[0] - truth).abs());
        }
        assert!(es < 1e-3, "{es}");
        assert!(er < 1e-6, "{er}");
    }

    #[test]
    fn collinear_nodes_in_plane() {
        let nodes: Vec<Vec<f64>> = (0..20).map(|i| vec![0.0, 1.0 + i as f64 * 0.1]).collect();
        let vals: Vec<Vec<f64>> = nodes.iter().map(|x| vec![x[1] * x[1]]).collect();
        let f = Interpolant::fit(&nodes, &vals, rbf()).unwrap();
        let line: Vec<Vec<f64>> = nodes.iter().map(|x| vec![x[1]]).collect();
        let g = Interpolant::fit(&line, &vals, rbf()).unwrap();
        for y in [1.0, 1.05, 1.55, 2.33, 2.9] {
            let v = f.eval(&[0.0, y]).unwrap()[0];
            assert!((v - g.eval(&[y]).unwrap()[0]).abs() < 1e-10, "{y}: {v}");
        }
        for y in [1.55, 2.33] {
            assert!((f.eval(&[0.0, y]).unwrap()[0] - y * y).abs() < 1e-4);
        }
    }

    #[test]
    fn loo_of_linear_and_constant_data() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let lin: Vec<Vec<f64>> = xs.iter().map(|x| vec![3.0 * x + 1.0]).collect();
        let f = Interpolant::fit(&scalar_nodes(&xs), &lin, rbf()).unwrap();
        assert!(f.loo_error().unwrap() < 1e-6);
        let constant = vec![vec![4.0]; xs.len()];
        for m in [Method::Nearest, Method::default(), local(8), rbf()] {
            let f = Interpolant::fit(&scalar_nodes(&xs), &constant, m).unwrap();
            assert!(f.loo_error().unwrap() < 1e-12);
        }
        let small = Interpolant::fit(&scalar_nodes(&[0.0, 1.0]), &[vec![0.0], vec![1.0]], Method::Nearest).unwrap();
        assert!(matches!(small.loo_error(), Err(Error::TooFewNodes { .. })));
    }

    #[test]
    fn rippa_matches_explicit_refit() {
        let xs: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let vals: Vec<Vec<f64>> = xs.iter().map(|x| vec![(1.3 * x).cos(), x * x]).collect();
        let nodes = scalar_nodes(&xs);
        let m = Method::RbfGaussian { shape: 2.0, ridge: 1e-6 };
        let f = Interpolant::fit(&nodes, &vals, m).unwrap();
        // refits use the full fit's kernel length, which Rippa's formula assumes
        let length = f.rbf_length().unwrap();
        let mut worst = 0.0_f64;
        for i in 0..xs.len() {
            let keep: Vec<usize> = (0..xs.len()).filter(|&j| j != i).collect();
            let sub_n: Vec<Vec<f64>> = keep.iter().map(|&j| nodes[j].clone()).collect();
            let sub_v: Vec<Vec<f64>> = keep.iter().map(|&j| vals[j].clone()).collect();
            let refit = fit_rbf(&sub_n, &sub_v, length, 1e-6).unwrap();
            let g = Interpolant {
                method: m,
                nodes: sub_n,
                values: sub_v,
                spacing: f.spacing,
                rbf: Some(refit),
                index: OnceLock::new(),
            };
            worst = worst.max(max_abs_diff(&g.eval(&nodes[i]).unwrap(), &vals[i]));
        }
        let loo = f.loo_error().unwrap();
        assert!((loo - worst).abs() <= 1e-6 * worst.max(1e-12), "{loo} vs {worst}");
    }

    #[test]
    fn knn_matches_brute_force() {
        let nodes: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 1.7).sin(), (i as f64 * 0.9).cos()])
            .collect();
        let idx = SortedIndex::new(&nodes);
        let q = [0.1, -0.2];
        let got = idx.nearest(&nodes, &q, 6, Some(3));
        let mut all: Vec<(f64, usize)> = (0..40).filter(|&i| i != 3).map(|i| (dist2(&nodes[i], &q), i)).collect();
        all.sort_by(cmp_entry);
        assert_eq!(got, all[..6].to_vec());
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let vals: Vec<Vec<f64>> = xs.iter().map(|x| vec![x.sqrt()]).collect();
        let f = Interpolant::fit(&scalar_nodes(&xs), &vals, rbf()).unwrap();
        let back: Interpolant = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(f, back);
        assert_eq!(f.eval(&[2.5]).unwrap(), back.eval(&[2.5]).unwrap());
    }
}
