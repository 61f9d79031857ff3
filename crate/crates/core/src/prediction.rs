//! Ego-conditioned prediction of surrounding vehicles.
//!
//! Realizes the interaction function used by the planner: given the joint
//! trajectory history and one candidate ego trajectory, produce the future
//! trajectories of all nearby agents by sequentially composing one-step
//! predictions, appending each prediction and the matching ego candidate
//! state to the conditioning context.
//!
//! Predictors are immutable after construction and safe to call concurrently
//! across MPPI samples; all per-call state lives in [`PredictionContext`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlInput, VehicleState};
use crate::traffic::{idm_accel, nearest_lane, IdmParams, YieldZones};
use crate::{Error, Result};

/// Which prediction model the planner conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Non-interactive baseline: agents keep their current velocity.
    ConstantVelocity,
    /// Agents always yield to an ego that intrudes into their lane corridor.
    AlwaysYieldIdm,
    /// Mirrors the simulator's probabilistic yield logic with the yield
    /// probability replaced by its expectation (deterministic partial
    /// yielding).
    InteractiveIdm,
    /// Slot for a learned one-step model registered via
    /// [`Predictor::with_external`].
    External,
}

/// Aligned per-agent state history up to the current time.
///
/// Agents are identified by their index, which stays stable for the whole
/// episode; the ego track is kept separate. All tracks share identical
/// timestamps. Only the most recent `window` steps are retained.
#[derive(Debug, Clone)]
pub struct TrajectoryHistory {
    window: usize,
    ego: Vec<VehicleState>,
    agents: Vec<Vec<VehicleState>>,
}

impl TrajectoryHistory {
    pub fn new(window: usize, n_agents: usize) -> Self {
        assert!(window >= 1, "history window must be at least 1");
        Self {
            window,
            ego: Vec::with_capacity(window + 1),
            agents: vec![Vec::with_capacity(window + 1); n_agents],
        }
    }

    /// Append one synchronized step of states.
    pub fn push(&mut self, ego: VehicleState, agents: &[VehicleState]) {
        assert_eq!(agents.len(), self.agents.len(), "agent roster changed");
        self.ego.push(ego);
        if self.ego.len() > self.window {
            self.ego.remove(0);
        }
        for (track, state) in self.agents.iter_mut().zip(agents) {
            track.push(*state);
            if track.len() > self.window {
                track.remove(0);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.ego.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn latest_ego(&self) -> Option<&VehicleState> {
        self.ego.last()
    }

    pub fn latest_agent(&self, id: usize) -> Option<&VehicleState> {
        self.agents[id].last()
    }

    pub fn ego_track(&self) -> &[VehicleState] {
        &self.ego
    }

    pub fn agent_track(&self, id: usize) -> &[VehicleState] {
        &self.agents[id]
    }
}

/// Conditioning context handed to one-step models: the base history plus the
/// partial prediction and the ego candidate states appended so far.
pub struct PredictionContext<'a> {
    base: &'a TrajectoryHistory,
    /// Agent indices in the neighborhood set; prediction rows follow this order.
    neighborhood: Vec<usize>,
    /// Per-step predicted agent states (rows of `neighborhood.len()`).
    predicted: Vec<Vec<VehicleState>>,
    /// Ego candidate states appended alongside the prediction rows.
    ego_appended: Vec<VehicleState>,
}

impl<'a> PredictionContext<'a> {
    pub fn neighborhood(&self) -> &[usize] {
        &self.neighborhood
    }

    /// Latest state of neighborhood slot `j` (not agent id).
    pub fn latest_agent(&self, j: usize) -> VehicleState {
        match self.predicted.last() {
            Some(row) => row[j],
            None => *self
                .base
                .latest_agent(self.neighborhood[j])
                .expect("non-empty history"),
        }
    }

    pub fn latest_ego(&self) -> VehicleState {
        match self.ego_appended.last() {
            Some(s) => *s,
            None => *self.base.latest_ego().expect("non-empty history"),
        }
    }

    /// Full ego track: history followed by appended candidate states.
    pub fn ego_states(&self) -> Vec<VehicleState> {
        let mut track = self.base.ego_track().to_vec();
        track.extend_from_slice(&self.ego_appended);
        track
    }

    /// Full track for neighborhood slot `j`: history followed by predictions.
    pub fn agent_states(&self, j: usize) -> Vec<VehicleState> {
        let mut track = self.base.agent_track(self.neighborhood[j]).to_vec();
        track.extend(self.predicted.iter().map(|row| row[j]));
        track
    }

    fn push(&mut self, row: Vec<VehicleState>, ego: VehicleState) {
        debug_assert_eq!(row.len(), self.neighborhood.len());
        self.predicted.push(row);
        self.ego_appended.push(ego);
    }
}

/// Per-agent predictions conditioned on one ego candidate trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedPrediction {
    /// Agent indices (into the history roster) present in the neighborhood.
    pub agent_ids: Vec<usize>,
    /// One trajectory of exactly the prediction horizon per neighborhood agent.
    pub agents: Vec<Vec<VehicleState>>,
    /// The ego candidate prefix the prediction was conditioned on.
    pub ego_candidate: Vec<VehicleState>,
}

impl ConditionedPrediction {
    pub fn horizon(&self) -> usize {
        self.agents.first().map_or(0, |t| t.len())
    }
}

/// Adapter interface for learned one-step models: one call consumes the
/// context (history windows plus partial prediction and ego candidate) and
/// returns the next state of every neighborhood agent, in neighborhood order.
/// Implementations must be stateless between calls.
pub trait OneStepModel: Send + Sync {
    fn predict(&self, ctx: &PredictionContext<'_>, dt: f64) -> Vec<VehicleState>;
}

/// Parameters shared by the built-in predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub dt: f64,
    /// Agents beyond this distance from the ego are excluded.
    pub neighborhood_d: f64,
    pub lanes: Vec<f64>,
    pub idm: IdmParams,
    pub zones: YieldZones,
    /// Expected per-step yield probability used by the interactive variant.
    pub p_yield: f64,
}

/// Pluggable trajectory predictor.
pub struct Predictor {
    kind: PredictorKind,
    params: PredictorParams,
    external: Option<Arc<dyn OneStepModel>>,
}

impl Predictor {
    pub fn new(kind: PredictorKind, params: PredictorParams) -> Result<Self> {
        if kind == PredictorKind::External {
            return Err(Error::config(
                "external predictor requires a model; use Predictor::with_external",
            ));
        }
        params.idm.validate()?;
        params.zones.validate()?;
        Ok(Self {
            kind,
            params,
            external: None,
        })
    }

    pub fn with_external(params: PredictorParams, model: Arc<dyn OneStepModel>) -> Self {
        Self {
            kind: PredictorKind::External,
            params,
            external: Some(model),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    /// Build the conditioning context, fixing the neighborhood set from the
    /// latest history states.
    pub fn context<'a>(&self, history: &'a TrajectoryHistory) -> Result<PredictionContext<'a>> {
        let ego = history
            .latest_ego()
            .ok_or_else(|| Error::invalid_input("empty trajectory history"))?;
        let neighborhood = (0..history.n_agents())
            .filter(|&i| {
                history
                    .latest_agent(i)
                    .map_or(false, |s| s.distance_to(ego) <= self.params.neighborhood_d)
            })
            .collect();
        Ok(PredictionContext {
            base: history,
            neighborhood,
            predicted: Vec::new(),
            ego_appended: Vec::new(),
        })
    }

    /// One-step joint prediction of all neighborhood agents from the latest
    /// context states.
    pub fn predict_one_step(&self, ctx: &PredictionContext<'_>) -> Vec<VehicleState> {
        match self.kind {
            PredictorKind::ConstantVelocity => self.cv_step(ctx),
            PredictorKind::AlwaysYieldIdm | PredictorKind::InteractiveIdm => self.idm_step(ctx),
            PredictorKind::External => self
                .external
                .as_ref()
                .expect("external predictor constructed with a model")
                .predict(ctx, self.params.dt),
        }
    }

    /// H-step prediction conditioned on `ego_candidate`, composed of exactly
    /// `horizon` sequential one-step predictions.
    pub fn predict_conditioned(
        &self,
        history: &TrajectoryHistory,
        ego_candidate: &[VehicleState],
        horizon: usize,
    ) -> Result<ConditionedPrediction> {
        if ego_candidate.len() < horizon {
            return Err(Error::invalid_input(format!(
                "ego candidate covers {} steps, prediction horizon is {horizon}",
                ego_candidate.len()
            )));
        }
        let mut ctx = self.context(history)?;
        let n = ctx.neighborhood.len();
        let mut agents: Vec<Vec<VehicleState>> = vec![Vec::with_capacity(horizon); n];
        for k in 0..horizon {
            let row = self.predict_one_step(&ctx);
            for (track, s) in agents.iter_mut().zip(&row) {
                track.push(*s);
            }
            ctx.push(row, ego_candidate[k]);
        }
        Ok(ConditionedPrediction {
            agent_ids: ctx.neighborhood,
            agents,
            ego_candidate: ego_candidate[..horizon].to_vec(),
        })
    }

    fn cv_step(&self, ctx: &PredictionContext<'_>) -> Vec<VehicleState> {
        let dt = self.params.dt;
        (0..ctx.neighborhood.len())
            .map(|j| {
                let s = ctx.latest_agent(j);
                let (sin_psi, cos_psi) = s.psi.sin_cos();
                VehicleState::new(s.x + s.v * cos_psi * dt, s.y + s.v * sin_psi * dt, s.psi, s.v)
            })
            .collect()
    }

    fn idm_step(&self, ctx: &PredictionContext<'_>) -> Vec<VehicleState> {
        let p = &self.params;
        let ego = ctx.latest_ego();
        let n = ctx.neighborhood.len();
        let latest: Vec<VehicleState> = (0..n).map(|j| ctx.latest_agent(j)).collect();
        latest
            .iter()
            .enumerate()
            .map(|(j, agent)| {
                let lane_y = nearest_lane(&p.lanes, agent.y);
                let mut leader: Option<VehicleState> = None;
                for (i, other) in latest.iter().enumerate() {
                    if i == j || nearest_lane(&p.lanes, other.y) != lane_y {
                        continue;
                    }
                    let ahead = other.x - agent.x;
                    if ahead <= 0.0 || ahead > p.idm.sensing_range {
                        continue;
                    }
                    if leader.map_or(true, |l| other.x < l.x) {
                        leader = Some(*other);
                    }
                }
                let with_ego = if leader.map_or(true, |l| ego.x < l.x) {
                    Some(ego)
                } else {
                    leader
                };

                let a = match self.kind {
                    PredictorKind::AlwaysYieldIdm => {
                        let yields = p.zones.in_probabilistic(agent, lane_y, &ego);
                        idm_accel(agent, if yields { with_ego } else { leader }.as_ref(), &p.idm)
                    }
                    PredictorKind::InteractiveIdm => {
                        if p.zones.in_forced(agent, lane_y, &ego) {
                            idm_accel(agent, with_ego.as_ref(), &p.idm)
                        } else if p.zones.in_probabilistic(agent, lane_y, &ego) {
                            // expectation over the per-step yield draw
                            let yielding = idm_accel(agent, with_ego.as_ref(), &p.idm);
                            let nominal = idm_accel(agent, leader.as_ref(), &p.idm);
                            p.p_yield * yielding + (1.0 - p.p_yield) * nominal
                        } else {
                            idm_accel(agent, leader.as_ref(), &p.idm)
                        }
                    }
                    _ => unreachable!("idm_step used for IDM-family predictors only"),
                };
                dynamics::step(agent, &ControlInput::new(0.0, a), &self.geom_proxy(), p.dt)
                    .expect("finite predicted state")
            })
            .collect()
    }

    /// Lane-locked agents only need `l_r` for the (zero) slip term; length
    /// and width play no role in straight-line stepping.
    fn geom_proxy(&self) -> dynamics::VehicleGeometry {
        dynamics::VehicleGeometry {
            l_f: 0.7,
            l_r: 0.7,
            length: self.params.idm.vehicle_length,
            width: 1.2,
        }
    }
}
