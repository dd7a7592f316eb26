//! The deployable numerical model: an input map onto the closed-observable
//! coordinates, an increment map advancing them, and an observer reading
//! observations back off them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmaps::{self, DiffusionCoordinates, KernelConfig, Truncation};
use crate::embedding::{self, DelayVectorSet, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::interp::{Interpolant, Method};
use crate::timeseries::{self, InputPoint, TrajectoryBundle};

/// Identifier written into every model file.
pub const MODEL_FORMAT: &str = "closedobs-model/1";

/// Number of leading spectrum entries stored in a model file.
const STORED_SPECTRUM: usize = 32;

/// Finite-difference stencil for the increment training values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `phi_{n+1} - phi_n` at every point with a successor.
    #[default]
    OneSided,
    /// `(phi_{n+1} - phi_{n-1}) / 2` at every point with both neighbours.
    Central,
}

/// How the increment map advances the state by one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `phi_{n+1} = phi_n + dG(phi_n)`.
    #[default]
    Increment,
    /// Integrate `dphi/ds = dG(phi)` over one unit of `s` with classical RK4.
    Flow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub horizon: usize,
    pub kernel: KernelConfig,
    pub truncation: Truncation,
    pub scheme: Scheme,
    pub step_rule: StepRule,
    /// RK4 substeps per model step under [`StepRule::Flow`].
    pub flow_substeps: usize,
    pub input_method: Method,
    pub dynamic_method: Method,
    pub observer_method: Method,
    /// Build the diffusion map on every `landmark_stride`-th distinct delay
    /// vector and extend it to the rest.
    pub landmark_stride: usize,
    /// A query is flagged when its closest node is farther than this many node spacings.
    pub extrapolation_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            kernel: KernelConfig::default(),
            truncation: Truncation::default(),
            scheme: Scheme::OneSided,
            step_rule: StepRule::Increment,
            flow_substeps: 1,
            input_method: Method::default(),
            dynamic_method: Method::default(),
            observer_method: Method::default(),
            landmark_stride: 1,
            extrapolation_factor: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("delay horizon must be at least 1".into()));
        }
        if self.flow_substeps == 0 {
            return Err(Error::InvalidConfig("flow_substeps must be at least 1".into()));
        }
        if self.landmark_stride == 0 {
            return Err(Error::InvalidConfig("landmark_stride must be at least 1".into()));
        }
        if !(self.extrapolation_factor > 0.0) {
            return Err(Error::InvalidConfig("extrapolation_factor must be positive".into()));
        }
        self.kernel.validate()?;
        self.truncation.validate()?;
        self.input_method.validate()?;
        self.dynamic_method.validate()?;
        self.observer_method.validate()
    }
}

/// Closed-observable coordinates of every delay vector of a bundle.
#[derive(Clone, Debug)]
pub struct Reparametrization {
    pub delays: DelayVectorSet,
    /// Row `i` holds the coordinates of delay vector `i`.
    pub coordinates: Vec<Vec<f64>>,
    pub diffusion: DiffusionCoordinates,
    pub unique_vectors: usize,
    pub landmarks: usize,
}

impl Reparametrization {
    pub fn dimension(&self) -> usize {
        self.diffusion.dimension()
    }
}

/// Delay-embed the bundle and compute diffusion coordinates for every delay vector.
pub fn reparametrize(bundle: &TrajectoryBundle, config: &ModelConfig) -> Result<Reparametrization> {
    config.validate()?;
    let delays = embedding::delay_embed(bundle, config.horizon)?;
    let dedup = delays.deduplicate();
    let stride = config.landmark_stride;
    let landmark_ids: Vec<usize> = (0..dedup.points.len()).step_by(stride).collect();
    let points: Vec<Vec<f64>> = landmark_ids.iter().map(|&i| dedup.points[i].clone()).collect();
    let weights: Vec<f64> = landmark_ids.iter().map(|&i| dedup.weights[i]).collect();
    let diffusion = dmaps::fit_diffusion_map(&points, Some(&weights), &config.kernel, &config.truncation)?;
    if diffusion.dimension() == 0 {
        return Err(Error::Degenerate(
            "no nontrivial diffusion coordinate survived truncation".into(),
        ));
    }
    let unique_coords: Vec<Vec<f64>> = if stride == 1 {
        diffusion.coordinates().to_vec()
    } else {
        (0..dedup.points.len())
            .into_par_iter()
            .map(|i| {
                if i % stride == 0 {
                    Ok(diffusion.coordinates()[i / stride].clone())
                } else {
                    dmaps::nystrom_extend(&diffusion, &dedup.points[i])
                }
            })
            .collect::<Result<_>>()?
    };
    let coordinates = dedup.index.iter().map(|&g| unique_coords[g].clone()).collect();
    Ok(Reparametrization {
        delays,
        coordinates,
        unique_vectors: dedup.points.len(),
        landmarks: landmark_ids.len(),
        diffusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the training bundle.
    pub bundle_hash: String,
    pub trajectories: usize,
    pub delay_vectors: usize,
    pub unique_vectors: usize,
    pub landmarks: usize,
    pub epsilon: f64,
    /// Leading diffusion-map spectrum, by decreasing magnitude.
    pub spectrum: Vec<f64>,
    pub kept_indices: Vec<usize>,
    pub kept_eigenvalues: Vec<f64>,
    /// Largest `|G(a) - G(b)| / |a - b|` over pairs of dynamic nodes, with `G = id + dG`.
    pub lipschitz_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericalModel {
    pub format: String,
    pub config: ModelConfig,
    pub d: usize,
    pub m: usize,
    pub n0: usize,
    pub dt: f64,
    pub input_map: Interpolant,
    pub dynamic: Interpolant,
    pub observer: Interpolant,
    pub provenance: Provenance,
}

/// Full pipeline: delay embedding, diffusion coordinates, and the three interpolants.
pub fn build_model(bundle: &TrajectoryBundle, config: &ModelConfig) -> Result<NumericalModel> {
    if config.scheme == Scheme::Central {
        let required = config.horizon + 2;
        if let Some((i, t)) = bundle.trajectories().iter().enumerate().find(|(_, t)| t.len() < required) {
            return Err(Error::TooShort {
                trajectory: i,
                length: t.len(),
                required,
            });
        }
    }
    let reparam = reparametrize(bundle, config)?;
    assemble(bundle, &reparam, config)
}

/// Fit the interpolants on precomputed coordinates.
///
/// `reparam` must come from [`reparametrize`] on the same bundle and horizon;
/// the scheme, step rule, and interpolation methods of `config` may differ.
pub fn assemble(bundle: &TrajectoryBundle, reparam: &Reparametrization, config: &ModelConfig) -> Result<NumericalModel> {
    config.validate()?;
    let delays = &reparam.delays;
    if delays.horizon() != config.horizon || delays.trajectory_count() != bundle.len() {
        return Err(Error::InvalidConfig("coordinates were computed for a different embedding".into()));
    }
    let phi = &reparam.coordinates;
    let d = reparam.dimension();

    let inputs: Vec<Vec<f64>> = bundle.trajectories().iter().map(|t| t.input().coords().to_vec()).collect();
    let starts: Vec<Vec<f64>> = (0..bundle.len()).map(|t| phi[delays.first_of(t)].clone()).collect();
    let input_map = Interpolant::fit(&inputs, &starts, config.input_method)?;

    let mut dyn_nodes = Vec::new();
    let mut dyn_values = Vec::new();
    for i in 0..delays.len() {
        let Some(next) = delays.successor(i) else { continue };
        let value: Vec<f64> = match config.scheme {
            Scheme::OneSided => (0..d).map(|c| phi[next][c] - phi[i][c]).collect(),
            Scheme::Central => {
                let Some(prev) = delays.predecessor(i) else { continue };
                (0..d).map(|c| 0.5 * (phi[next][c] - phi[prev][c])).collect()
            }
        };
        dyn_nodes.push(phi[i].clone());
        dyn_values.push(value);
    }
    if dyn_nodes.is_empty() {
        return Err(Error::TooFewNodes { found: 0, required: 1 });
    }
    let dynamic = Interpolant::fit(&dyn_nodes, &dyn_values, config.dynamic_method)?;

    let heads: Vec<Vec<f64>> = (0..delays.len()).map(|i| delays.head(i).to_vec()).collect();
    let observer = Interpolant::fit(phi, &heads, config.observer_method)?;

    let spectrum = reparam.diffusion.eigenvalues();
    let provenance = Provenance {
        bundle_hash: timeseries::content_hash(bundle)?,
        trajectories: bundle.len(),
        delay_vectors: delays.len(),
        unique_vectors: reparam.unique_vectors,
        landmarks: reparam.landmarks,
        epsilon: reparam.diffusion.epsilon(),
        spectrum: spectrum[..spectrum.len().min(STORED_SPECTRUM)].to_vec(),
        kept_indices: reparam.diffusion.kept_indices().to_vec(),
        kept_eigenvalues: reparam.diffusion.kept_eigenvalues(),
        lipschitz_estimate: lipschitz_estimate(dynamic.nodes(), dynamic.values()),
    };
    Ok(NumericalModel {
        format: MODEL_FORMAT.to_string(),
        config: config.clone(),
        d,
        m: bundle.m(),
        n0: bundle.n0(),
        dt: bundle.dt(),
        input_map,
        dynamic,
        observer,
        provenance,
    })
}

fn lipschitz_estimate(nodes: &[Vec<f64>], increments: &[Vec<f64>]) -> f64 {
    (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0_f64;
            for j in 0..i {
                let mut dx = 0.0;
                let mut dg = 0.0;
                for c in 0..nodes[i].len() {
                    let a = nodes[i][c] - nodes[j][c];
                    let b = a + increments[i][c] - increments[j][c];
                    dx += a * a;
                    dg += b * b;
                }
                if dx > 0.0 {
                    worst = worst.max((dg / dx).sqrt());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    /// Step `k` is flagged when any interpolant queried for it left the node support.
    pub extrapolation_flags: Vec<bool>,
}

impl SimulationResult {
    pub fn any_extrapolation(&self) -> bool {
        self.extrapolation_flags.iter().any(|f| *f)
    }
}

impl NumericalModel {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn check_input(&self, x0: &InputPoint) -> Result<()> {
        if x0.dim() != self.n0 {
            return Err(Error::DimensionMismatch {
                expected: self.n0,
                found: x0.dim(),
                context: "initial input".into(),
            });
        }
        Ok(())
    }

    fn increment(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.dynamic.eval(phi)
    }

    /// One model step from `phi`.
    pub fn step(&self, phi: &[f64]) -> Result<Vec<f64>> {
        match self.config.step_rule {
            StepRule::Increment => {
                let g = self.increment(phi)?;
                Ok(phi.iter().zip(&g).map(|(a, b)| a + b).collect())
            }
            StepRule::Flow => {
                let h = 1.0 / self.config.flow_substeps as f64;
                let mut x = phi.to_vec();
                for _ in 0..self.config.flow_substeps {
                    let at = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
                        base.iter().zip(k).map(|(a, b)| a + s * b).collect()
                    };
                    let k1 = self.increment(&x)?;
                    let k2 = self.increment(&at(&x, &k1, 0.5 * h))?;
                    let k3 = self.increment(&at(&x, &k2, 0.5 * h))?;
                    let k4 = self.increment(&at(&x, &k3, h))?;
                    for c in 0..x.len() {
                        x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                    }
                }
                Ok(x)
            }
        }
    }

    /// Closed-observable coordinates of an initial input.
    pub fn initial_state(&self, x0: &InputPoint) -> Result<Vec<f64>> {
        self.check_input(x0)?;
        self.input_map.eval(x0.coords())
    }

    /// Run the model for `n_steps` steps from input `x0`.
    pub fn simulate(&self, x0: &InputPoint, n_steps: usize) -> Result<SimulationResult> {
        self.check_input(x0)?;
        let factor = self.config.extrapolation_factor;
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut observations = Vec::with_capacity(n_steps + 1);
        let mut flags = Vec::with_capacity(n_steps + 1);
        let mut phi = self.input_map.eval(x0.coords())?;
        let mut flag = self.input_map.is_extrapolating(x0.coords(), factor)?;
        for k in 0..=n_steps {
            flag |= self.observer.is_extrapolating(&phi, factor)?;
            observations.push(self.observer.eval(&phi)?);
            if k < n_steps {
                flag |= self.dynamic.is_extrapolating(&phi, factor)?;
                let next = self.step(&phi)?;
                states.push(std::mem::replace(&mut phi, next));
            } else {
                states.push(phi.clone());
            }
            flags.push(flag);
            flag = false;
        }
        Ok(SimulationResult {
            dt: self.dt,
            states,
            observations,
            extrapolation_flags: flags,
        })
    }

    /// Observations only, skipping extrapolation bookkeeping.
    pub fn predict(&self, x0: &InputPoint, n_steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut phi = self.initial_state(x0)?;
        let mut out = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            out.push(self.observer.eval(&phi)?);
            if k < n_steps {
                phi = self.step(&phi)?;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(format!("model file: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            Some(other) => {
                return Err(Error::Version {
                    found: other.to_string(),
                    expected: MODEL_FORMAT.to_string(),
                })
            }
            None => return Err(Error::Corrupt("model file has no format field".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("model file: {e}")))
    }
}

pub fn save_model(model: &NumericalModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<NumericalModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NumericalModel::from_json(&bytes)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::timeseries::Trajectory;

    /// Scalar decay `y_k = y0 * r^k` for several `y0`.
    fn decay_bundle(starts: &[f64], len: usize, rate: f64) -> TrajectoryBundle {
        let trajs = starts
            .iter()
            .map(|&y0| {
                let obs = (0..len).map(|k| vec![y0 * rate.powi(k as i32)]).collect();
                Trajectory::new(InputPoint::new(vec![y0]).unwrap(), 0.1, obs).unwrap()
            })
            .collect();
        TrajectoryBundle::new(trajs, BTreeMap::new()).unwrap()
    }

    #[test]
    fn constant_bundle_is_degenerate() {
        let trajs = (0..3)
            .map(|i| Trajectory::new(InputPoint::new(vec![i as f64]).unwrap(), 0.1, vec![vec![1.0]; 10]).unwrap())
            .collect();
        let b = TrajectoryBundle::new(trajs, BTreeMap::new()).unwrap();
        assert!(matches!(build_model(&b, &ModelConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn training_trajectory_is_reproduced() {
        let starts: Vec<f64> = (0..41).map(|i| 1.0 + 0.05 * i as f64).collect();
        let b = decay_bundle(&starts, 20, 0.9);
        let cfg = ModelConfig {
            horizon: 3,
            ..ModelConfig::default()
        };
        let model = build_model(&b, &cfg).unwrap();
        assert!(model.d >= 1);
        let sim = model.simulate(&InputPoint::new(vec![1.5]).unwrap(), 19).unwrap();
        assert_eq!(sim.observations.len(), 20);
        for (k, o) in sim.observations.iter().enumerate().take(20 - cfg.horizon + 1) {
            let truth = 1.5 * 0.9f64.powi(k as i32);
            assert!((o[0] - truth).abs() <= 1e-9 * truth, "step {k}: {} vs {truth}", o[0]);
        }
        assert!(!sim.extrapolation_flags[0]);
    }

    #[test]
    fn zero_dynamics_keeps_state() {
        let starts: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let b = decay_bundle(&starts, 12, 0.8);
        let mut model = build_model(&b, &ModelConfig { horizon: 2, ..ModelConfig::default() }).unwrap();
        let zeros: Vec<Vec<f64>> = model.dynamic.nodes().iter().map(|_| vec![0.0; model.d]).collect();
        model.dynamic = Interpolant::fit(model.dynamic.nodes(), &zeros, Method::default()).unwrap();
        let sim = model.simulate(&InputPoint::new(vec![3.0]).unwrap(), 5).unwrap();
        assert!(sim.states.windows(2).all(|w| w[0] == w[1]));
        assert!(sim.observations.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn central_scheme_needs_longer_series() {
        let b = decay_bundle(&[1.0, 2.0, 3.0], 6, 0.9);
        let cfg = ModelConfig {
            horizon: 5,
            scheme: Scheme::Central,
            ..ModelConfig::default()
        };
        assert!(matches!(build_model(&b, &cfg), Err(Error::TooShort { .. })));
    }

    #[test]
    fn json_roundtrip_and_version_check() {
        let starts: Vec<f64> = (0..6).map(|i| 1.0 + 0.5 * i as f64).collect();
        let b = decay_bundle(&starts, 15, 0.85);
        let model = build_model(&b, &ModelConfig { horizon: 3, ..ModelConfig::default() }).unwrap();
        let bytes = model.to_json().unwrap();
        let back = NumericalModel::from_json(&bytes).unwrap();
        assert_eq!(model, back);
        let x0 = InputPoint::new(vec![2.2]).unwrap();
        assert_eq!(model.simulate(&x0, 10).unwrap(), back.simulate(&x0, 10).unwrap());

        assert!(matches!(
            NumericalModel::from_json(&bytes[..bytes.len() / 2]),
            Err(Error::Corrupt(_))
        ));
        let text = String::from_utf8(bytes).unwrap().replace(MODEL_FORMAT, "closedobs-model/0");
        assert!(matches!(NumericalModel::from_json(text.as_bytes()), Err(Error::Version { .. })));
    }

    #[test]
    fn wrong_input_dimension() {
        let b = decay_bundle(&[1.0, 2.0, 3.0, 4.0], 10, 0.9);
        let model = build_model(&b, &ModelConfig { horizon: 2, ..ModelConfig::default() }).unwrap();
        assert!(model.simulate(&InputPoint::new(vec![1.0, 2.0]).unwrap(), 3).is_err());
    }
}
