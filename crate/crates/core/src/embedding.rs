//! Forward time-delay vectors.
//!
//! The delay vector at index `k` of a trajectory concatenates the next
//! `horizon` observations, `(y_k, y_{k+1}, .., y_{k+T-1})`, block by time.
//! Consecutive vectors of the same trajectory are linked so that the pairs
//! `(h_k, h_{k+1})` sample the dynamics on the delay manifold.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dmaps::{self, KernelConfig, Truncation};
use crate::error::{Error, Result};
use crate::timeseries::TrajectoryBundle;

/// Default embedding horizon.
pub const DEFAULT_HORIZON: usize = 5;

/// Delay vectors closer than this, relative to the largest entry, are one point.
pub const DEDUP_RESOLUTION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DelayVector {
    pub values: Vec<f64>,
    pub trajectory: usize,
    pub k: usize,
}

#[derive(Clone, Debug)]
pub struct DelayVectorSet {
    vectors: Vec<DelayVector>,
    horizon: usize,
    m: usize,
    dt: f64,
    successor: Vec<Option<usize>>,
    predecessor: Vec<Option<usize>>,
    /// Index of the first vector of each trajectory.
    trajectory_start: Vec<usize>,
}

impl DelayVectorSet {
    pub fn vectors(&self) -> &[DelayVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn successor(&self, i: usize) -> Option<usize> {
        self.successor[i]
    }

    pub fn predecessor(&self, i: usize) -> Option<usize> {
        self.predecessor[i]
    }

    /// Index of the `k = 0` vector of trajectory `traj`.
    pub fn first_of(&self, traj: usize) -> usize {
        self.trajectory_start[traj]
    }

    pub fn trajectory_count(&self) -> usize {
        self.trajectory_start.len()
    }

    /// The observation `y_k` at the head of vector `i`.
    pub fn head(&self, i: usize) -> &[f64] {
        &self.vectors[i].values[..self.m]
    }

    /// Collapse vectors that agree to [`DEDUP_RESOLUTION`] relative to the
    /// largest entry of the set.
    ///
    /// Returns the distinct vectors in order of first occurrence, their
    /// multiplicities, and for every vector the index of its distinct copy.
    pub fn deduplicate(&self) -> Deduplicated {
        let scale = self
            .vectors
            .iter()
            .flat_map(|v| v.values.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()));
        let quantum = if scale > 0.0 { DEDUP_RESOLUTION * scale } else { 1.0 };
        let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut unique = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut index = Vec::with_capacity(self.vectors.len());
        for v in &self.vectors {
            let key: Vec<i64> = v.values.iter().map(|x| (x / quantum).round() as i64).collect();
            let id = *seen.entry(key).or_insert_with(|| {
                unique.push(v.values.clone());
                weights.push(0.0);
                unique.len() - 1
            });
            weights[id] += 1.0;
            index.push(id);
        }
        Deduplicated {
            points: unique,
            weights,
            index,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Deduplicated {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub index: Vec<usize>,
}

/// Build the forward delay vectors of every trajectory with horizon `horizon`.
pub fn delay_embed(bundle: &TrajectoryBundle, horizon: usize) -> Result<DelayVectorSet> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("delay horizon must be at least 1".into()));
    }
    let m = bundle.m();
    let mut vectors = Vec::new();
    let mut successor = Vec::new();
    let mut predecessor = Vec::new();
    let mut trajectory_start = Vec::with_capacity(bundle.len());
    for (ti, traj) in bundle.trajectories().iter().enumerate() {
        let len = traj.len();
        if len < horizon + 1 {
            return Err(Error::TooShort {
                trajectory: ti,
                length: len,
                required: horizon + 1,
            });
        }
        let count = len - horizon + 1;
        let start = vectors.len();
        trajectory_start.push(start);
        for k in 0..count {
            let mut values = Vec::with_capacity(horizon * m);
            for obs in &traj.observations()[k..k + horizon] {
                values.extend_from_slice(obs);
            }
            vectors.push(DelayVector {
                values,
                trajectory: ti,
                k,
            });
            successor.push((k + 1 < count).then_some(start + k + 1));
            predecessor.push((k > 0).then(|| start + k - 1));
        }
    }
    Ok(DelayVectorSet {
        vectors,
        horizon,
        m,
        dt: bundle.dt(),
        successor,
        predecessor,
        trajectory_start,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanEntry {
    pub horizon: usize,
    pub eigenvalues: Vec<f64>,
    pub dimension: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingScan {
    pub entries: Vec<ScanEntry>,
    /// Smallest horizon from which the retained dimension no longer changes.
    pub stable_horizon: Option<usize>,
}

/// Diffusion-map spectrum and retained dimension for each candidate horizon.
///
/// This is a diagnostic; it does not choose a horizon for the model.
pub fn embedding_scan(
    bundle: &TrajectoryBundle,
    horizons: &[usize],
    kernel: &KernelConfig,
    truncation: &Truncation,
) -> Result<EmbeddingScan> {
    let mut sorted = horizons.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut entries = Vec::with_capacity(sorted.len());
    for &horizon in &sorted {
        let set = delay_embed(bundle, horizon)?;
        let dedup = set.deduplicate();
        let dist = dmaps::pairwise_distances(&dedup.points);
        let coords = dmaps::build_coordinates(&dist, Some(&dedup.weights), kernel, truncation)?;
        entries.push(ScanEntry {
            horizon,
            eigenvalues: coords.eigenvalues().to_vec(),
            dimension: coords.dimension(),
        });
    }
    let stable_horizon = entries.last().map(|last| {
        let dim = last.dimension;
        let first_stable = entries
            .iter()
            .rposition(|e| e.dimension != dim)
            .map_or(0, |i| i + 1);
        entries[first_stable].horizon
    });
    Ok(EmbeddingScan {
        entries,
        stable_horizon,
    })
}
