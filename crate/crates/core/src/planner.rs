//! The interaction-aware MPPI loop: draw control samples around the spline
//! priors and the warm-started mean, roll out the ego, predict the reaction
//! of surrounding vehicles per sample, evaluate the objective, weight, and
//! update the sampling mean with the weighted control average.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{local_goal, objective, CostWeights, LaneContext};
use crate::dynamics::{self, ControlBounds, ControlInput, VehicleGeometry, VehicleState};
use crate::prediction::{
    ConditionedPrediction, Predictor, PredictorKind, PredictorParams, TrajectoryHistory,
};
use crate::sampler::{
    build_spline, draw_samples, track_spline, LaneSide, SampleSource, SamplingConfig, SplinePrior,
};
use crate::{mix_seed, Error, Result};

/// How sample weights are computed from costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Importance-sampling weights with the mean-correction terms, valid for
    /// a single Gaussian sampling distribution.
    Standard,
    /// Pure cost softmax, valid for arbitrary sampling distributions
    /// (required once spline priors make the distribution non-Gaussian).
    Biased,
}

/// Full planner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Planning horizon H (steps).
    pub horizon: usize,
    /// Prediction horizon H_pred (steps), at most `horizon`.
    pub horizon_pred: usize,
    /// Temperature.
    pub lambda: f64,
    /// Weight normalizer as printed in the weight formula. The implementation
    /// normalizes weights to sum to one, which makes this entry vacuous; it
    /// is kept so configs can state it explicitly.
    pub eta: f64,
    pub weight_rule: WeightRule,
    pub predictor: PredictorKind,
    pub sampling: SamplingConfig,
    pub weights: CostWeights,
    pub lane: LaneContext,
    pub predictor_params: PredictorParams,
    pub geom: VehicleGeometry,
    pub bounds: ControlBounds,
    pub dt: f64,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if self.horizon_pred > self.horizon {
            return Err(Error::config("prediction horizon must not exceed horizon"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("lambda must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        self.sampling.validate()?;
        self.weights.validate()?;
        self.lane.validate()?;
        self.geom.validate()?;
        self.bounds.validate()
    }
}

/// Warm-start state carried between planning steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerState {
    /// Sampling mean, time-shifted from the previous optimal sequence.
    pub mean: Vec<ControlInput>,
    /// Last emitted control.
    pub last: Option<ControlInput>,
    /// Planning step counter; also salts the per-step sampling streams.
    pub step_idx: u64,
}

impl PlannerState {
    pub fn new(horizon: usize) -> Self {
        Self {
            mean: vec![ControlInput::ZERO; horizon],
            last: None,
            step_idx: 0,
        }
    }
}

/// One evaluated candidate: controls, rollout, conditioned predictions, cost
/// and normalized weight.
#[derive(Debug, Clone)]
pub struct ControlSample {
    pub controls: Vec<ControlInput>,
    pub rollout: Vec<VehicleState>,
    pub prediction: ConditionedPrediction,
    pub cost: f64,
    pub weight: f64,
    pub source: SampleSource,
}

/// Per-step planner diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cost_min: f64,
    pub cost_mean: f64,
    pub cost_weighted: f64,
    /// Effective sample size `1 / sum(w^2)`.
    pub ess: f64,
    pub degenerate: bool,
    /// Normalized weight mass per provenance `[left, right, nominal]`.
    pub source_mass: [f64; 3],
    /// Provenance of the highest-weighted sample.
    pub best_source: SampleSource,
    /// Number of spline priors built this step.
    pub n_priors: usize,
}

/// Unnormalized importance-sampling weight with the Gaussian mean-correction
/// terms. `sigma` holds the per-dimension variances of the diagonal per-step
/// covariance, ordered `(steer, accel)`.
pub fn standard_weight(
    cost: f64,
    controls: &[ControlInput],
    mean: &[ControlInput],
    sigma: (f64, f64),
    lambda: f64,
    eta: f64,
) -> f64 {
    standard_log_weight(cost, controls, mean, sigma, lambda).exp() / eta
}

fn standard_log_weight(
    cost: f64,
    controls: &[ControlInput],
    mean: &[ControlInput],
    sigma: (f64, f64),
    lambda: f64,
) -> f64 {
    let (inv_steer, inv_accel) = (1.0 / sigma.0, 1.0 / sigma.1);
    let mut mean_quad = 0.0;
    let mut cross = 0.0;
    for (mu, u) in mean.iter().zip(controls) {
        mean_quad += mu.delta * inv_steer * mu.delta + mu.a * inv_accel * mu.a;
        cross += mu.delta * inv_steer * u.delta + mu.a * inv_accel * u.a;
    }
    -cost / lambda + 0.5 * mean_quad - cross
}

/// Normalized softmax weights of `-cost / lambda`.
///
/// Non-finite costs get zero weight; if every cost is non-finite the weights
/// are degenerate and an error is returned.
pub fn biased_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let max_logit = costs
        .iter()
        .filter(|c| c.is_finite())
        .map(|c| -c / lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_logit.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut weights: Vec<f64> = costs
        .iter()
        .map(|c| {
            if c.is_finite() {
                (-c / lambda - max_logit).exp()
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// `1 / sum(w^2)` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|lw| lw.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut weights: Vec<f64> = log_weights
        .iter()
        .map(|lw| if lw.is_finite() { (lw - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

pub struct Planner {
    cfg: PlannerConfig,
    predictor: Predictor,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Result<Self> {
        cfg.validate()?;
        let predictor = Predictor::new(cfg.predictor, cfg.predictor_params.clone())?;
        Ok(Self { cfg, predictor })
    }

    /// Planner with a learned external one-step model plugged into the
    /// predictor slot.
    pub fn with_external(
        cfg: PlannerConfig,
        model: std::sync::Arc<dyn crate::prediction::OneStepModel>,
    ) -> Result<Self> {
        cfg.validate()?;
        let predictor = Predictor::with_external(cfg.predictor_params.clone(), model);
        Ok(Self { cfg, predictor })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    /// Lane context with `y_lane` snapped to the ego's current lane.
    fn effective_context(&self, ego: &VehicleState) -> LaneContext {
        self.cfg.lane.relocated(ego.y)
    }

    /// Spline priors for the neighbor lanes that exist on the road, left
    /// lane first. Recomputed every planning step from the current state.
    fn build_priors(&self, ego: &VehicleState, ctx: &LaneContext) -> Result<Vec<SplinePrior>> {
        if self.cfg.sampling.m_per_lane == 0 {
            return Ok(Vec::new());
        }
        let lanes = ctx.lanes();
        let mut priors = Vec::new();
        for (side, target_y) in [
            (LaneSide::Left, ctx.y_lane + ctx.lane_width),
            (LaneSide::Right, ctx.y_lane - ctx.lane_width),
        ] {
            if !lanes.iter().any(|&l| (l - target_y).abs() < 1e-9) {
                continue;
            }
            let waypoints = build_spline(ego, target_y, ctx.v_ref, self.cfg.horizon, self.cfg.dt);
            let reference = track_spline(
                ego,
                &waypoints,
                &self.cfg.geom,
                &self.cfg.bounds,
                ctx.v_ref,
                &self.cfg.sampling.tracking,
                self.cfg.dt,
            )?;
            priors.push(SplinePrior { side, reference });
        }
        Ok(priors)
    }

    /// One full planning step. Emits the first control of the weighted mean
    /// sequence and shifts the mean for the next step's warm start.
    pub fn plan_step(
        &self,
        ego: &VehicleState,
        history: &TrajectoryHistory,
        state: &mut PlannerState,
    ) -> Result<(ControlInput, Diagnostics)> {
        let (u, diag, _) = self.plan_step_detailed(ego, history, state)?;
        Ok((u, diag))
    }

    /// `plan_step` variant that also returns every evaluated sample.
    pub fn plan_step_detailed(
        &self,
        ego: &VehicleState,
        history: &TrajectoryHistory,
        state: &mut PlannerState,
    ) -> Result<(ControlInput, Diagnostics, Vec<ControlSample>)> {
        let cfg = &self.cfg;
        if state.mean.len() != cfg.horizon {
            return Err(Error::invalid_input("warm-start mean length mismatch"));
        }
        let ctx = self.effective_context(ego);
        let goal = local_goal(ego, &ctx, cfg.horizon, cfg.dt);
        let priors = self.build_priors(ego, &ctx)?;
        let step_seed = mix_seed(cfg.sampling.seed, state.step_idx);
        let (control_seqs, sources) =
            draw_samples(&state.mean, &priors, &cfg.sampling, &cfg.bounds, step_seed)?;

        // rollout + conditioned prediction + objective, independent per sample
        let mut samples: Vec<ControlSample> = control_seqs
            .into_par_iter()
            .zip(sources.into_par_iter())
            .map(|(controls, source)| -> Result<ControlSample> {
                let rollout = dynamics::rollout(ego, &controls, &cfg.geom, cfg.dt)?;
                let prediction =
                    self.predictor
                        .predict_conditioned(history, &rollout, cfg.horizon_pred)?;
                let breakdown = objective(
                    &rollout,
                    &controls,
                    &prediction,
                    &cfg.weights,
                    &ctx,
                    &goal,
                    &cfg.geom,
                )?;
                let total = breakdown.total();
                let cost = if total.is_finite() { total } else { f64::INFINITY };
                Ok(ControlSample {
                    controls,
                    rollout,
                    prediction,
                    cost,
                    weight: 0.0,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let costs: Vec<f64> = samples.iter().map(|s| s.cost).collect();
        let weight_result = match cfg.weight_rule {
            WeightRule::Biased => biased_weights(&costs, cfg.lambda),
            WeightRule::Standard => {
                let log_weights: Vec<f64> = samples
                    .iter()
                    .map(|s| {
                        standard_log_weight(
                            s.cost,
                            &s.controls,
                            &state.mean,
                            (cfg.sampling.sigma_steer, cfg.sampling.sigma_accel),
                            cfg.lambda,
                        )
                    })
                    .collect();
                normalize_log_weights(&log_weights)
            }
        };

        let (weights, degenerate) = match weight_result {
            Ok(w) => (w, false),
            Err(Error::DegenerateWeights) => {
                // fall back to the minimum-cost sample with full weight
                let argmin = costs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map_or(0, |(i, _)| i);
                let mut w = vec![0.0; samples.len()];
                w[argmin] = 1.0;
                (w, true)
            }
            Err(e) => return Err(e),
        };
        for (s, w) in samples.iter_mut().zip(&weights) {
            s.weight = *w;
        }

        // Monte-Carlo mean over the whole sequence, reduced in sample order
        let mut optimal = vec![ControlInput::ZERO; cfg.horizon];
        for s in &samples {
            for (o, u) in optimal.iter_mut().zip(&s.controls) {
                o.delta += s.weight * u.delta;
                o.a += s.weight * u.a;
            }
        }

        let emitted = cfg.bounds.clamp(optimal[0]);
        // warm start: shift left, repeat the final element
        let mut mean = optimal[1..].to_vec();
        mean.push(*optimal.last().expect("non-empty horizon"));
        state.mean = mean;
        state.last = Some(emitted);
        state.step_idx += 1;

        let finite_costs: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let cost_min = finite_costs.iter().copied().fold(f64::INFINITY, f64::min);
        let cost_mean = if finite_costs.is_empty() {
            f64::INFINITY
        } else {
            finite_costs.iter().sum::<f64>() / finite_costs.len() as f64
        };
        let cost_weighted = samples
            .iter()
            .map(|s| if s.weight > 0.0 { s.weight * s.cost } else { 0.0 })
            .sum();
        let mut source_mass = [0.0; 3];
        for s in &samples {
            let slot = match s.source {
                SampleSource::SplineLeft => 0,
                SampleSource::SplineRight => 1,
                SampleSource::Nominal => 2,
            };
            source_mass[slot] += s.weight;
        }
        let best_source = samples
            .iter()
            .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap_or(std::cmp::Ordering::Equal))
            .map_or(SampleSource::Nominal, |s| s.source);

        let diag = Diagnostics {
            cost_min,
            cost_mean,
            cost_weighted,
            ess: effective_sample_size(&weights),
            degenerate,
            source_mass,
            best_source,
            n_priors: priors.len(),
        };
        Ok((emitted, diag, samples))
    }
}
