//! Experiment configuration: one TOML file covers every module's parameters,
//! with defaults matching the nominal merge scenario.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{CostWeights, LaneContext};
use crate::dynamics::{ControlBounds, VehicleGeometry};
use crate::planner::{PlannerConfig, WeightRule};
use crate::prediction::{PredictorKind, PredictorParams};
use crate::sampler::{PidGains, SamplingConfig, TrackingConfig};
use crate::traffic::{BehaviorModel, IdmParams, ScenarioConfig, YieldZones};
use crate::{mix_seed, Error, Result};

/// Behavior variant without its parameters; `p_yield` comes from the traffic
/// section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Probabilistic,
    Uncooperative,
    Cooperative,
}

impl BehaviorKind {
    pub fn to_model(self, p_yield: f64) -> BehaviorModel {
        match self {
            BehaviorKind::Probabilistic => BehaviorModel::Probabilistic { p_yield },
            BehaviorKind::Uncooperative => BehaviorModel::Uncooperative,
            BehaviorKind::Cooperative => BehaviorModel::Cooperative,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "probabilistic" => Ok(BehaviorKind::Probabilistic),
            "uncooperative" => Ok(BehaviorKind::Uncooperative),
            "cooperative" => Ok(BehaviorKind::Cooperative),
            other => Err(Error::config(format!("unknown behavior '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BehaviorKind::Probabilistic => "probabilistic",
            BehaviorKind::Uncooperative => "uncooperative",
            BehaviorKind::Cooperative => "cooperative",
        }
    }
}

pub fn parse_predictor(s: &str) -> Result<PredictorKind> {
    match s {
        "cv" | "constant_velocity" => Ok(PredictorKind::ConstantVelocity),
        "idm" | "always_yield_idm" => Ok(PredictorKind::AlwaysYieldIdm),
        "interactive" | "interactive_idm" => Ok(PredictorKind::InteractiveIdm),
        other => Err(Error::config(format!("unknown predictor '{other}'"))),
    }
}

pub fn predictor_name(kind: PredictorKind) -> &'static str {
    match kind {
        PredictorKind::ConstantVelocity => "cv",
        PredictorKind::AlwaysYieldIdm => "always_yield_idm",
        PredictorKind::InteractiveIdm => "interactive_idm",
        PredictorKind::External => "external",
    }
}

/// One experiment-grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub behavior: BehaviorKind,
    pub predictor: PredictorKind,
    pub spline_prior: bool,
}

impl CellSpec {
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}",
            self.behavior.name(),
            predictor_name(self.predictor),
            if self.spline_prior { "prior" } else { "noprior" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    pub l_f: f64,
    pub l_r: f64,
    pub length: f64,
    pub width: f64,
    /// Steering bounds (rad); the published bound row is interpreted as
    /// steering, not heading.
    pub steer_bounds: [f64; 2],
    /// Acceleration bounds a_min, a_max (m/s^2).
    pub accel_bounds: [f64; 2],
    /// Time step Delta t (s).
    pub dt: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            l_f: 0.7,
            l_r: 0.7,
            length: 2.5,
            width: 1.2,
            steer_bounds: [-0.1, 0.1],
            accel_bounds: [-0.5, 0.5],
            dt: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// Planning horizon H (steps).
    pub horizon: usize,
    /// Prediction horizon H_pred (steps).
    pub prediction_horizon: usize,
    /// Temperature lambda.
    pub lambda: f64,
    /// Weight normalizer eta (vacuous: weights are normalized to sum to 1).
    pub eta: f64,
    pub weight_rule: WeightRule,
    pub predictor: PredictorKind,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            horizon: 17,
            prediction_horizon: 8,
            lambda: 1.0,
            eta: 1.0,
            weight_rule: WeightRule::Biased,
            predictor: PredictorKind::InteractiveIdm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Sample count K.
    pub samples: usize,
    /// Samples M per lane-change prior.
    pub m_per_lane: usize,
    /// Nominal covariance Sigma = diag(sigma_accel, sigma_steer); variances.
    pub sigma_steer: f64,
    pub sigma_accel: f64,
    /// Spline covariance Sigma_spline; variances.
    pub sigma_spline_steer: f64,
    pub sigma_spline_accel: f64,
    pub pid: PidGains,
    pub stanley_gain: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            samples: s.k_total,
            m_per_lane: s.m_per_lane,
            sigma_steer: s.sigma_steer,
            sigma_accel: s.sigma_accel,
            sigma_spline_steer: s.sigma_spline_steer,
            sigma_spline_accel: s.sigma_spline_accel,
            pid: PidGains::default(),
            stanley_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub lanes: Vec<f64>,
    pub boundaries: [f64; 2],
    pub lane_width: f64,
    pub ego_lane: usize,
    pub target_lane: usize,
    /// Surrounding vehicle count N_veh.
    pub n_veh: usize,
    /// Nominal center-to-center agent spacing (m). Omit for the assigned
    /// behavior's car-following equilibrium (desired gap + vehicle length),
    /// so cooperative traffic starts with the larger gaps it maintains.
    pub spacing: Option<f64>,
    /// Nominal x of the rearmost agent (m). Omit to center the ego beside
    /// the platoon's middle slot, where overtaking or falling behind the
    /// whole platoon takes much longer than nudging in.
    pub first_agent_offset: Option<f64>,
    /// Reference speed v_ref (m/s).
    pub v_ref: f64,
    /// Initial-position noise delta x_init ~ U(range) (m).
    pub x_init_noise: [f64; 2],
    /// Initial-speed noise delta v_init ~ U(range) (m/s).
    pub v_init_noise: [f64; 2],
    /// Reference-speed noise delta v_ref ~ U(range) (m/s).
    pub v_ref_noise: [f64; 2],
    pub behavior: BehaviorKind,
    /// Per-step yield probability in the probabilistic zone.
    pub p_yield: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub idm_max_accel: f64,
    pub idm_comfort_decel: f64,
    pub coop_factor: f64,
    pub sensing_range: f64,
    /// Neighborhood distance d (m).
    pub neighborhood_d: f64,
    pub max_steps: usize,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            lanes: vec![0.0, 3.5],
            boundaries: [-1.75, 5.25],
            lane_width: 3.5,
            ego_lane: 0,
            target_lane: 1,
            n_veh: 5,
            spacing: None,
            first_agent_offset: None,
            v_ref: 2.5,
            x_init_noise: [-1.0, 1.0],
            v_init_noise: [-1.0, 1.0],
            v_ref_noise: [-1.0, 1.0],
            behavior: BehaviorKind::Probabilistic,
            p_yield: 0.5,
            time_headway: 0.6,
            min_gap: 1.0,
            idm_max_accel: 0.5,
            idm_comfort_decel: 0.5,
            coop_factor: 2.0,
            sensing_range: 100.0,
            neighborhood_d: 100.0,
            max_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Monte-Carlo runs per grid cell.
    pub runs: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Grid cells; when empty, a single cell is formed from the traffic
    /// behavior and planner predictor with the spline prior on.
    pub cells: Vec<CellSpec>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            runs: 40,
            base_seed: 42,
            out_dir: PathBuf::from("runs/exp"),
            cells: Vec::new(),
        }
    }
}

/// Root configuration covering every module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub dynamics: DynamicsSection,
    pub planner: PlannerSection,
    pub sampler: SamplerSection,
    pub cost: CostWeights,
    pub traffic: TrafficSection,
    pub experiment: ExperimentSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: AppConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        self.bounds().validate()?;
        if self.planner.prediction_horizon > self.planner.horizon {
            return Err(Error::config("prediction_horizon must not exceed horizon"));
        }
        if self.experiment.runs == 0 {
            return Err(Error::config("runs must be positive"));
        }
        self.scenario(self.traffic.behavior, 0).validate()?;
        Ok(())
    }

    pub fn geometry(&self) -> VehicleGeometry {
        VehicleGeometry {
            l_f: self.dynamics.l_f,
            l_r: self.dynamics.l_r,
            length: self.dynamics.length,
            width: self.dynamics.width,
        }
    }

    pub fn bounds(&self) -> ControlBounds {
        ControlBounds {
            steer: (self.dynamics.steer_bounds[0], self.dynamics.steer_bounds[1]),
            accel: (self.dynamics.accel_bounds[0], self.dynamics.accel_bounds[1]),
        }
    }

    pub fn idm_params(&self) -> IdmParams {
        IdmParams {
            v0: self.traffic.v_ref,
            time_headway: self.traffic.time_headway,
            min_gap: self.traffic.min_gap,
            max_accel: self.traffic.idm_max_accel,
            comfort_decel: self.traffic.idm_comfort_decel,
            coop_factor: self.traffic.coop_factor,
            vehicle_length: self.dynamics.length,
            sensing_range: self.traffic.sensing_range,
            accel_bounds: (self.dynamics.accel_bounds[0], self.dynamics.accel_bounds[1]),
        }
    }

    pub fn scenario(&self, behavior: BehaviorKind, seed: u64) -> ScenarioConfig {
        let t = &self.traffic;
        let idm = behavior.to_model(t.p_yield).idm_for(&self.idm_params());
        // equilibrium car-following spacing for the assigned behavior
        let spacing = t
            .spacing
            .unwrap_or(idm.min_gap + t.v_ref * idm.time_headway + self.dynamics.length);
        // middle slot of the platoon: slot k sits between agents k-1 and k
        let middle_slot = 0.5 * t.n_veh as f64;
        ScenarioConfig {
            lanes: t.lanes.clone(),
            boundaries: (t.boundaries[0], t.boundaries[1]),
            lane_width: t.lane_width,
            ego_lane: t.ego_lane,
            target_lane: t.target_lane,
            n_veh: t.n_veh,
            spacing,
            first_agent_offset: t.first_agent_offset.unwrap_or(-middle_slot * spacing),
            v_ref: t.v_ref,
            x_init_noise: (t.x_init_noise[0], t.x_init_noise[1]),
            v_init_noise: (t.v_init_noise[0], t.v_init_noise[1]),
            v_ref_noise: (t.v_ref_noise[0], t.v_ref_noise[1]),
            behavior: behavior.to_model(t.p_yield),
            idm: self.idm_params(),
            neighborhood_d: t.neighborhood_d,
            max_steps: t.max_steps,
            seed,
            dt: self.dynamics.dt,
        }
    }

    /// Planner configuration for one episode. `v_ref` is the randomized
    /// episode reference speed; `seed` salts the sampling streams.
    pub fn planner_config(
        &self,
        predictor: PredictorKind,
        spline_prior: bool,
        v_ref: f64,
        seed: u64,
    ) -> PlannerConfig {
        let t = &self.traffic;
        let geom = self.geometry();
        let mut idm = self.idm_params();
        idm.v0 = v_ref;
        let lane = LaneContext {
            y_lane: t.lanes[t.ego_lane],
            y_target_lane: t.lanes[t.target_lane],
            y_boundary: (t.boundaries[0], t.boundaries[1]),
            v_ref,
            lane_width: t.lane_width,
        };
        PlannerConfig {
            horizon: self.planner.horizon,
            horizon_pred: self.planner.prediction_horizon,
            lambda: self.planner.lambda,
            eta: self.planner.eta,
            // the mixed spline distribution requires the biased rule; the
            // no-prior ablation falls back to the standard weights
            weight_rule: if spline_prior {
                self.planner.weight_rule
            } else {
                WeightRule::Standard
            },
            predictor,
            sampling: SamplingConfig {
                k_total: self.sampler.samples,
                m_per_lane: if spline_prior { self.sampler.m_per_lane } else { 0 },
                sigma_steer: self.sampler.sigma_steer,
                sigma_accel: self.sampler.sigma_accel,
                sigma_spline_steer: self.sampler.sigma_spline_steer,
                sigma_spline_accel: self.sampler.sigma_spline_accel,
                seed: mix_seed(seed, 0x5a4d),
                tracking: TrackingConfig {
                    pid: self.sampler.pid,
                    stanley_gain: self.sampler.stanley_gain,
                },
            },
            weights: self.cost,
            lane,
            predictor_params: PredictorParams {
                dt: self.dynamics.dt,
                neighborhood_d: t.neighborhood_d,
                lanes: t.lanes.clone(),
                idm,
                zones: YieldZones::from_road(t.lane_width, &geom),
                p_yield: t.p_yield,
            },
            geom,
            bounds: self.bounds(),
            dt: self.dynamics.dt,
        }
    }

    /// Resolved grid cells.
    pub fn cells(&self) -> Vec<CellSpec> {
        if self.experiment.cells.is_empty() {
            vec![CellSpec {
                behavior: self.traffic.behavior,
                predictor: self.planner.predictor,
                spline_prior: self.sampler.m_per_lane > 0,
            }]
        } else {
            self.experiment.cells.clone()
        }
    }
}

/// Parse a `behaviors:predictors:priors` grid expression into cells, e.g.
/// `probabilistic,cooperative:cv,interactive_idm:on,off`.
pub fn parse_grid(expr: &str) -> Result<Vec<CellSpec>> {
    let parts: Vec<&str> = expr.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::config(
            "grid must be 'behaviors:predictors:priors' with comma-separated entries",
        ));
    }
    let behaviors: Vec<BehaviorKind> = parts[0]
        .split(',')
        .map(|s| BehaviorKind::parse(s.trim()))
        .collect::<Result<_>>()?;
    let predictors: Vec<PredictorKind> = parts[1]
        .split(',')
        .map(|s| parse_predictor(s.trim()))
        .collect::<Result<_>>()?;
    let priors: Vec<bool> = parts[2]
        .split(',')
        .map(|s| match s.trim() {
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            other => Err(Error::config(format!("unknown prior flag '{other}'"))),
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &behavior in &behaviors {
        for &predictor in &predictors {
            for &spline_prior in &priors {
                cells.push(CellSpec {
                    behavior,
                    predictor,
                    spline_prior,
                });
            }
        }
    }
    Ok(cells)
}
