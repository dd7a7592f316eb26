//! Quantitative checks of a built model: convergence orders, storage
//! accounting, the error-bound audit, held-out prediction error, and the
//! egress chance analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmaps::Truncation;
use crate::error::{Error, Result};
use crate::generators::{self, SpiralConfig};
use crate::interp::Method;
use crate::model::{self, ModelConfig, NumericalModel, Scheme, StepRule};
use crate::timeseries::{InputPoint, TrajectoryBundle};

/// Relative slack when checking a fitted bound against measured deviations.
const BOUND_SLACK: f64 = 1e-12;

/// Largest admissible fitted constant in the error-bound audit.
pub const BOUND_CONSTANT_LIMIT: f64 = 10.0;

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// Spiral convergence study over the number of sampling steps in `[0, t_end]`.
///
/// Query initial values are `(query_x, y)` with `y` uniform in `query_y`.
/// Training trajectories start at `training_inputs` points `(query_x, y)`
/// spread uniformly over `training_y` and run `training_duration` plus one
/// delay horizon. Every observed radius decays at rate 1, so short runs from
/// uniformly spread starts sample the delay ray with nearly uniform density;
/// long runs from the query segment alone pile nodes up at small radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub step_counts: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub query_x: f64,
    pub query_y: [f64; 2],
    pub t_end: f64,
    pub trials: usize,
    pub seed: u64,
    pub training_inputs: usize,
    pub training_y: [f64; 2],
    pub training_duration: f64,
    /// Scheme is overwritten per run; everything else is used as given.
    pub model: ModelConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        let rbf = Method::RbfGaussian { shape: 20.0, ridge: 1e-10 };
        Self {
            step_counts: vec![20, 40, 100, 200],
            schemes: vec![Scheme::OneSided, Scheme::Central],
            query_x: 0.0,
            query_y: [1.0, 3.0],
            t_end: 2.0,
            trials: 1000,
            seed: 0,
            training_inputs: 60,
            training_y: [0.05, 5.0],
            training_duration: 0.5,
            model: ModelConfig {
                step_rule: StepRule::Flow,
                flow_substeps: 1,
                truncation: Truncation {
                    lambda_ratio: 1e-2,
                    ..Truncation::default()
                },
                input_method: rbf,
                dynamic_method: rbf,
                observer_method: rbf,
                ..ModelConfig::default()
            },
        }
    }
}

impl ConvergenceConfig {
    fn validate(&self) -> Result<()> {
        let mut counts = self.step_counts.clone();
        counts.sort_unstable();
        counts.dedup();
        if counts.len() < 3 || counts[0] == 0 {
            return Err(Error::InvalidConfig("need at least 3 distinct positive step counts".into()));
        }
        if (counts[counts.len() - 1] as f64) < 10.0 * counts[0] as f64 {
            return Err(Error::InvalidConfig("step counts must span at least one decade".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no scheme selected".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.training_inputs < 2 {
            return Err(Error::InvalidConfig("training_inputs must be at least 2".into()));
        }
        if !(self.query_y[0] <= self.query_y[1] && self.t_end > 0.0) {
            return Err(Error::InvalidConfig("invalid query range or t_end".into()));
        }
        if !(self.training_y[0] < self.training_y[1] && self.training_duration > 0.0) {
            return Err(Error::InvalidConfig("invalid training range or duration".into()));
        }
        self.model.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub scheme: Scheme,
    pub steps: usize,
    pub dt: f64,
    /// Largest `|y - y_model| / |y|` over query values and times in `[0, t_end]`.
    pub max_error: f64,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSlope {
    pub scheme: Scheme,
    /// Least-squares slope of `ln(max_error)` against `ln(dt)`.
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceConfig,
    pub points: Vec<ConvergencePoint>,
    pub slopes: Vec<SchemeSlope>,
}

/// Least-squares slope and intercept of `y` against `x`; needs 3 finite pairs.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} finite error points, need 3", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all step sizes coincide".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Training bundle for one step count.
pub fn convergence_training(cfg: &ConvergenceConfig, steps: usize) -> Result<TrajectoryBundle> {
    let dt = cfg.t_end / steps as f64;
    let length = (cfg.training_duration / dt).ceil() as usize + cfg.model.horizon + 1;
    let spiral = SpiralConfig {
        x_range: [cfg.query_x, cfg.query_x],
        y_range: cfg.training_y,
        nx: 1,
        ny: cfg.training_inputs,
        dt,
        t_end: length as f64 * dt,
    };
    generators::gen_spiral(&spiral)
}

/// Query values of the study; depend only on the seed and trial count.
pub fn convergence_queries(cfg: &ConvergenceConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.trials).map(|_| rng.random_range(cfg.query_y[0]..=cfg.query_y[1])).collect()
}

fn spiral_max_error(model: &NumericalModel, cfg: &ConvergenceConfig, queries: &[f64], steps: usize) -> Result<f64> {
    let dt = cfg.t_end / steps as f64;
    let errors: Result<Vec<f64>> = queries
        .par_iter()
        .map(|&y| {
            let a0 = [cfg.query_x, y];
            let predicted = model.predict(&InputPoint::new(a0.to_vec())?, steps)?;
            let mut worst = 0.0_f64;
            for (k, p) in predicted.iter().enumerate() {
                let a = generators::spiral_state(a0, k as f64 * dt);
                let exact = a[0].hypot(a[1]);
                worst = worst.max(((exact - p[0]) / exact).abs());
            }
            Ok(worst)
        })
        .collect();
    Ok(errors?.into_iter().fold(0.0, f64::max))
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let queries = convergence_queries(cfg);
    let mut points = Vec::new();
    for &steps in &cfg.step_counts {
        let bundle = convergence_training(cfg, steps)?;
        let reparam = model::reparametrize(&bundle, &cfg.model)?;
        for &scheme in &cfg.schemes {
            let config = ModelConfig {
                scheme,
                ..cfg.model.clone()
            };
            let model = model::assemble(&bundle, &reparam, &config)?;
            let max_error = spiral_max_error(&model, cfg, &queries, steps)?;
            log::info!("convergence {scheme:?} steps={steps} d={} error={max_error:e}", model.d);
            points.push(ConvergencePoint {
                scheme,
                steps,
                dt: cfg.t_end / steps as f64,
                max_error,
                d: model.d,
            });
        }
    }
    let mut slopes = Vec::new();
    for &scheme in &cfg.schemes {
        let (dts, errs): (Vec<f64>, Vec<f64>) =
            points.iter().filter(|p| p.scheme == scheme).map(|p| (p.dt, p.max_error)).unzip();
        let (slope, intercept) = loglog_fit(&dts, &errs)?;
        slopes.push(SchemeSlope {
            scheme,
            slope,
            intercept,
        });
    }
    Ok(ConvergenceReport {
        config: cfg.clone(),
        points,
        slopes,
    })
}

// ---------------------------------------------------------------------------
// Storage accounting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageAccount {
    pub d: u32,
    pub m: u32,
    pub n0: u32,
    pub nodes_per_axis: u64,
    /// `(d + m) N^d + d N^n0`: dynamic and observer grids over the coordinates
    /// plus the input map over the input grid.
    pub new_model_nodes: u128,
    /// `m N^(n0 + 1)`: every observation at `N` times for every grid input.
    pub naive_nodes: u128,
    /// `d < n0 + 1`.
    pub reduction_holds: bool,
    /// `naive_nodes / new_model_nodes`.
    pub ratio: f64,
}

/// Closed-form node counts; saturates at `u128::MAX`.
pub fn storage_account(d: u32, m: u32, n0: u32, nodes_per_axis: u64) -> StorageAccount {
    let n = nodes_per_axis as u128;
    let pow = |e: u32| n.checked_pow(e).unwrap_or(u128::MAX);
    let new_model_nodes = (d as u128 + m as u128)
        .saturating_mul(pow(d))
        .saturating_add((d as u128).saturating_mul(pow(n0)));
    let naive_nodes = (m as u128).saturating_mul(pow(n0 + 1));
    StorageAccount {
        d,
        m,
        n0,
        nodes_per_axis,
        new_model_nodes,
        naive_nodes,
        reduction_holds: d < n0 + 1,
        ratio: naive_nodes as f64 / new_model_nodes as f64,
    }
}

// ---------------------------------------------------------------------------
// Error-bound audit
// ---------------------------------------------------------------------------

/// Injected interpolation errors of the synthetic contraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedErrors {
    pub dynamic: f64,
    pub input: f64,
    pub observer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub contraction: f64,
    pub errors: InjectedErrors,
    pub n_max: usize,
    pub trials: usize,
    /// Largest `|exact - perturbed|` over trials, per step `n = 0..=n_max`.
    pub observed_max_deviation: Vec<f64>,
    pub bound_value: Vec<f64>,
    /// Fitted multipliers of the dynamic, input, and observer terms; each at least 1.
    pub constants: [f64; 3],
    pub satisfied: bool,
}

/// `[(1 - M^(n+1)) / (1 - M), M^n, 1]`: the three terms of the bound at step `n`.
fn bound_terms(m: f64, n: usize) -> [f64; 3] {
    let mn = m.powi(n as i32);
    [(1.0 - mn * m) / (1.0 - m), mn, 1.0]
}

/// Largest deviation per step between `phi -> M phi` observed by the identity
/// and the same system with every interpolant shifted by its full error.
fn contraction_deviation(m: f64, errors: InjectedErrors, n_max: usize, starts: &[f64]) -> Vec<f64> {
    let per_start: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&a| {
            let mut exact = a;
            let mut perturbed = a + errors.input;
            let mut dev = Vec::with_capacity(n_max + 1);
            for n in 0..=n_max {
                if n > 0 {
                    exact *= m;
                    perturbed = m * perturbed + errors.dynamic;
                }
                dev.push((exact - (perturbed + errors.observer)).abs());
            }
            dev
        })
        .collect();
    (0..=n_max)
        .map(|n| per_start.iter().map(|d| d[n]).fold(0.0, f64::max))
        .collect()
}

/// Smallest multiplier `>= 1` with `deviation(n) <= c * scale * term(n)` for all `n`.
fn fit_constant(deviation: &[f64], scale: f64, m: f64, which: usize) -> f64 {
    if scale == 0.0 {
        return 1.0;
    }
    deviation
        .iter()
        .enumerate()
        .map(|(n, dev)| dev / (scale * bound_terms(m, n)[which]))
        .fold(1.0, f64::max)
}

pub fn bound_audit(m: f64, errors: InjectedErrors, n_max: usize, trials: usize, seed: u64) -> Result<BoundAudit> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidConfig(format!("contraction must lie in (0,1), got {m}")));
    }
    let scales = [errors.dynamic, errors.input, errors.observer];
    if scales.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidConfig("injected errors must be nonnegative".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<f64> = (0..trials).map(|_| rng.random_range(-1.0..=1.0)).collect();

    // each term is fitted on a run that injects only its own error
    let mut constants = [1.0; 3];
    for (which, c) in constants.iter_mut().enumerate() {
        let mut single = [0.0; 3];
        single[which] = scales[which];
        let isolated = InjectedErrors {
            dynamic: single[0],
            input: single[1],
            observer: single[2],
        };
        let dev = contraction_deviation(m, isolated, n_max, &starts);
        *c = fit_constant(&dev, scales[which], m, which);
    }

    let observed = contraction_deviation(m, errors, n_max, &starts);
    let bound_value: Vec<f64> = (0..=n_max)
        .map(|n| {
            let t = bound_terms(m, n);
            (0..3).map(|k| constants[k] * t[k] * scales[k]).sum()
        })
        .collect();
    let holds = observed
        .iter()
        .zip(&bound_value)
        .all(|(o, b)| *o <= b * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE);
    Ok(BoundAudit {
        contraction: m,
        errors,
        n_max,
        trials,
        observed_max_deviation: observed,
        bound_value,
        constants,
        satisfied: holds && constants.iter().all(|c| *c <= BOUND_CONSTANT_LIMIT),
    })
}

// ---------------------------------------------------------------------------
// Held-out prediction error
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepError {
    pub step: usize,
    pub t: f64,
    /// Largest `|O - P|_inf / |O|_inf` over the truth trajectories reaching this step.
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub series: Vec<StepError>,
    pub max_epsilon: f64,
    /// Maximum over steps that leave at least one full delay horizon of
    /// observations after them; later steps lack training successors.
    pub max_epsilon_supported: f64,
    pub horizon: usize,
}

fn relative_error(observed: &[f64], predicted: &[f64]) -> f64 {
    let diff = observed.iter().zip(predicted).map(|(o, p)| (o - p).abs()).fold(0.0, f64::max);
    let scale = observed.iter().map(|o| o.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn holdout_error(model: &NumericalModel, truth: &TrajectoryBundle) -> Result<HoldoutReport> {
    if truth.m() != model.m {
        return Err(Error::DimensionMismatch {
            expected: model.m,
            found: truth.m(),
            context: "truth observations".into(),
        });
    }
    if truth.n0() != model.n0 {
        return Err(Error::DimensionMismatch {
            expected: model.n0,
            found: truth.n0(),
            context: "truth inputs".into(),
        });
    }
    if (truth.dt() - model.dt).abs() > 1e-9 * model.dt {
        return Err(Error::InvalidConfig(format!(
            "truth dt {} differs from model dt {}",
            truth.dt(),
            model.dt
        )));
    }
    let per_traj: Vec<Vec<f64>> = truth
        .trajectories()
        .par_iter()
        .map(|traj| {
            let predicted = model.predict(traj.input(), traj.len() - 1)?;
            Ok(traj
                .observations()
                .iter()
                .zip(&predicted)
                .map(|(o, p)| relative_error(o, p))
                .collect())
        })
        .collect::<Result<_>>()?;
    let longest = truth.trajectories().iter().map(|t| t.len()).max().unwrap_or(0);
    let series: Vec<StepError> = (0..longest)
        .map(|k| StepError {
            step: k,
            t: k as f64 * truth.dt(),
            epsilon: per_traj.iter().filter_map(|e| e.get(k)).copied().fold(0.0, f64::max),
        })
        .collect();
    let horizon = model.horizon();
    let max_epsilon_supported = per_traj
        .iter()
        .flat_map(|e| e[..e.len().saturating_sub(horizon)].iter().copied())
        .fold(0.0, f64::max);
    Ok(HoldoutReport {
        max_epsilon: series.iter().map(|s| s.epsilon).fold(0.0, f64::max),
        series,
        max_epsilon_supported,
        horizon,
    })
}

// ---------------------------------------------------------------------------
// Egress chance analysis
// ---------------------------------------------------------------------------

/// Evaluation grid of the chance analysis; observations are `(N_T, N_P)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChanceConfig {
    /// Horizons in model steps.
    pub horizons: Vec<usize>,
    pub train_counts: Vec<f64>,
    pub platform_counts: Vec<f64>,
}

impl Default for ChanceConfig {
    fn default() -> Self {
        Self {
            horizons: vec![25, 50],
            train_counts: linspace(10.0, 50.0, 20),
            platform_counts: linspace(0.0, 200.0, 20),
        }
    }
}

/// Model settings for run-averaged egress data. Local affine maps keep the
/// chance surfaces monotone where Shepard's flat spots near the exit states
/// stall trajectories short of an empty train.
pub fn egress_model_config() -> ModelConfig {
    let local = |k| Method::LocalLinear {
        neighbors: Some(k),
        power: 2.0,
    };
    ModelConfig {
        horizon: 10,
        input_method: local(12),
        dynamic_method: local(64),
        observer_method: local(64),
        ..ModelConfig::default()
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChancePoint {
    pub train0: f64,
    pub platform0: f64,
    /// `c(n)` per configured horizon.
    pub chance: Vec<f64>,
    /// Largest `|N_T + N_P - N_T0 - N_P0|` along the prediction.
    pub conservation_error: f64,
    /// Whether a negative predicted `N_T` was raised to 0.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChanceReport {
    pub config: ChanceConfig,
    /// Ordered by train count, then platform count.
    pub points: Vec<ChancePoint>,
    pub clamped_points: usize,
}

impl ChanceReport {
    /// Largest rise `c(p_k) - c(p_j)`, `j < k`, along the platform axis at a
    /// fixed train count, for horizon index `h`; 0 for a nonincreasing surface.
    pub fn max_rise(&self, h: usize) -> f64 {
        let width = self.config.platform_counts.len();
        self.points
            .chunks(width)
            .map(|row| {
                let mut lowest_so_far = f64::INFINITY;
                let mut rise = 0.0_f64;
                for p in row {
                    let c = p.chance[h];
                    rise = rise.max(c - lowest_so_far);
                    lowest_so_far = lowest_so_far.min(c);
                }
                rise
            })
            .fold(0.0, f64::max)
    }

    pub fn max_conservation_error(&self) -> f64 {
        self.points.iter().map(|p| p.conservation_error).fold(0.0, f64::max)
    }
}

/// `c(n) = 1 - min_{t <= n} N_T(t) / N_T(0)` with `N_T(0)` the grid value.
pub fn chance_of_exit(train: &[f64], train0: f64, horizon: usize) -> f64 {
    let lowest = train[..=horizon.min(train.len() - 1)].iter().copied().fold(f64::INFINITY, f64::min);
    1.0 - lowest.max(0.0) / train0
}

pub fn egress_analysis(model: &NumericalModel, cfg: &ChanceConfig) -> Result<ChanceReport> {
    if model.m != 2 || model.n0 != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: if model.m != 2 { model.m } else { model.n0 },
            context: "egress model needs (N_T, N_P) inputs and observations".into(),
        });
    }
    if cfg.horizons.is_empty() || cfg.platform_counts.is_empty() {
        return Err(Error::InvalidConfig("empty horizon or platform grid".into()));
    }
    if cfg.train_counts.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidConfig("train counts must be positive".into()));
    }
    let steps = *cfg.horizons.iter().max().expect("nonempty horizons");
    let pairs: Vec<(f64, f64)> = cfg
        .train_counts
        .iter()
        .flat_map(|&t| cfg.platform_counts.iter().map(move |&p| (t, p)))
        .collect();
    let points: Vec<ChancePoint> = pairs
        .par_iter()
        .map(|&(train0, platform0)| {
            let predicted = model.predict(&InputPoint::new(vec![train0, platform0])?, steps)?;
            let train: Vec<f64> = predicted.iter().map(|o| o[0]).collect();
            let total = train0 + platform0;
            Ok(ChancePoint {
                train0,
                platform0,
                chance: cfg.horizons.iter().map(|&h| chance_of_exit(&train, train0, h)).collect(),
                conservation_error: predicted.iter().map(|o| (o[0] + o[1] - total).abs()).fold(0.0, f64::max),
                clamped: train.iter().any(|t| *t < 0.0),
            })
        })
        .collect::<Result<_>>()?;
    let clamped_points = points.iter().filter(|p| p.clamped).count();
    if clamped_points > 0 {
        log::warn!("{clamped_points} chance predictions had negative train counts raised to 0");
    }
    Ok(ChanceReport {
        config: cfg.clone(),
        points,
        clamped_points,
    })
}
