//! Closed-loop merge environment.
//!
//! Surrounding vehicles are lane-locked and driven by one of three IDM
//! behavior variants with yield zones; the ego advances with externally
//! supplied controls. Collision detection uses a three-circle approximation
//! of each vehicle footprint.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlBounds, ControlInput, VehicleGeometry, VehicleState};
use crate::{Error, Result};

/// Car-following parameters for the IDM family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired (free-road) speed v0 (m/s).
    pub v0: f64,
    /// Time headway T (s).
    pub time_headway: f64,
    /// Minimum standstill gap s0 (m).
    pub min_gap: f64,
    /// Maximum acceleration (m/s^2).
    pub max_accel: f64,
    /// Comfortable deceleration b (m/s^2, positive).
    pub comfort_decel: f64,
    /// Multiplier on `min_gap` and `time_headway` for the cooperative variant.
    pub coop_factor: f64,
    /// Vehicle length used for bumper-to-bumper gap computation (m).
    pub vehicle_length: f64,
    /// Leaders beyond this distance are ignored (m).
    pub sensing_range: f64,
    /// Output acceleration clamp `(min, max)` (m/s^2).
    pub accel_bounds: (f64, f64),
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 2.5,
            time_headway: 0.6,
            min_gap: 1.0,
            max_accel: 0.5,
            comfort_decel: 0.5,
            coop_factor: 2.0,
            vehicle_length: 2.5,
            sensing_range: 100.0,
            accel_bounds: (-0.5, 0.5),
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.v0,
            self.time_headway,
            self.min_gap,
            self.max_accel,
            self.comfort_decel,
            self.coop_factor,
            self.vehicle_length,
            self.sensing_range,
        ];
        if positive.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::config("IDM parameters must be positive"));
        }
        Ok(())
    }

    /// Copy with the cooperative gap enlargement applied.
    pub fn with_coop_spacing(&self) -> IdmParams {
        IdmParams {
            min_gap: self.min_gap * self.coop_factor,
            time_headway: self.time_headway * self.coop_factor,
            ..*self
        }
    }
}

/// Behavior variant assigned to surrounding vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorModel {
    /// Yields in the forced zone; yields in the probabilistic zone with
    /// per-step probability `p_yield`.
    Probabilistic { p_yield: f64 },
    /// Yields only in the forced zone.
    Uncooperative,
    /// Yields in both zones and keeps enlarged spacing from lead vehicles.
    Cooperative,
}

impl BehaviorModel {
    pub fn validate(&self) -> Result<()> {
        if let BehaviorModel::Probabilistic { p_yield } = self {
            if !(0.0..=1.0).contains(p_yield) {
                return Err(Error::config("p_yield must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Effective IDM parameters for this variant.
    pub fn idm_for(&self, base: &IdmParams) -> IdmParams {
        match self {
            BehaviorModel::Cooperative => base.with_coop_spacing(),
            _ => *base,
        }
    }
}

/// Yield-zone extents around a surrounding vehicle, expressed relative to the
/// vehicle position (longitudinal, ahead only) and its lane centerline
/// (lateral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldZones {
    pub forced_ahead: f64,
    pub forced_half_width: f64,
    pub prob_ahead: f64,
    pub prob_half_width: f64,
}

impl YieldZones {
    /// Zone extents derived from lane width and vehicle geometry. The forced
    /// zone means "directly in the vehicle's path": ahead by up to 1.5
    /// lengths with overlapping footprints (three quarters of a width covers
    /// body overlap plus a skim margin). The probabilistic zone reaches 4
    /// lengths ahead and laterally to the lane boundary plus half a width,
    /// i.e. an ego that is nearby and attempting to merge.
    pub fn from_road(lane_width: f64, geom: &VehicleGeometry) -> Self {
        Self {
            forced_ahead: 1.5 * geom.length,
            forced_half_width: 0.75 * geom.width,
            prob_ahead: 4.0 * geom.length,
            prob_half_width: 0.5 * lane_width + 0.5 * geom.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prob_ahead < self.forced_ahead || self.prob_half_width < self.forced_half_width {
            return Err(Error::config(
                "probabilistic yield zone must contain the forced zone",
            ));
        }
        Ok(())
    }

    /// Ego directly in the agent's path, just ahead.
    pub fn in_forced(&self, agent: &VehicleState, lane_center_y: f64, ego: &VehicleState) -> bool {
        let ahead = ego.x - agent.x;
        ahead >= 0.0 && ahead <= self.forced_ahead && (ego.y - lane_center_y).abs() <= self.forced_half_width
    }

    /// Ego nearby and attempting to merge (contains the forced zone).
    pub fn in_probabilistic(
        &self,
        agent: &VehicleState,
        lane_center_y: f64,
        ego: &VehicleState,
    ) -> bool {
        let ahead = ego.x - agent.x;
        ahead >= 0.0 && ahead <= self.prob_ahead && (ego.y - lane_center_y).abs() <= self.prob_half_width
    }
}

/// Lane centerline nearest to a lateral position.
pub fn nearest_lane(lanes: &[f64], y: f64) -> f64 {
    let mut best = lanes[0];
    for &lane in &lanes[1..] {
        if (y - lane).abs() < (y - best).abs() {
            best = lane;
        }
    }
    best
}

/// Intelligent Driver Model acceleration, clamped to `accel_bounds`.
///
/// A non-positive bumper gap yields the emergency deceleration bound (the
/// collision detector is expected to fire in that case).
pub fn idm_accel(
    follower: &VehicleState,
    leader: Option<&VehicleState>,
    p: &IdmParams,
) -> f64 {
    let v = follower.v;
    let free = p.max_accel * (1.0 - (v / p.v0).powi(4));
    let accel = match leader {
        None => free,
        Some(lead) => {
            let gap = lead.x - follower.x - p.vehicle_length;
            if gap <= 0.0 {
                return p.accel_bounds.0;
            }
            let approach = v - lead.v;
            let desired_gap = p.min_gap
                + v * p.time_headway
                + v * approach / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            free - p.max_accel * (desired_gap / gap).powi(2)
        }
    };
    accel.clamp(p.accel_bounds.0, p.accel_bounds.1)
}

/// Pick the vehicle a surrounding agent follows.
///
/// The nearest same-lane vehicle ahead is the default leader; the ego becomes
/// a leader candidate when it is inside the forced zone (all variants), or
/// inside the probabilistic zone for the cooperative variant (always) and the
/// probabilistic variant (per-step Bernoulli draw).
pub fn select_leader<R: Rng>(
    agent: &VehicleState,
    others: &[VehicleState],
    ego: &VehicleState,
    lanes: &[f64],
    zones: &YieldZones,
    behavior: &BehaviorModel,
    sensing_range: f64,
    rng: &mut R,
) -> Option<VehicleState> {
    let lane_y = nearest_lane(lanes, agent.y);
    let mut leader: Option<VehicleState> = None;
    for other in others {
        if nearest_lane(lanes, other.y) != lane_y {
            continue;
        }
        let ahead = other.x - agent.x;
        if ahead <= 0.0 || ahead > sensing_range {
            continue;
        }
        if leader.map_or(true, |l| other.x < l.x) {
            leader = Some(*other);
        }
    }

    let ego_yield = if zones.in_forced(agent, lane_y, ego) {
        true
    } else if zones.in_probabilistic(agent, lane_y, ego) {
        match behavior {
            BehaviorModel::Cooperative => true,
            BehaviorModel::Uncooperative => false,
            BehaviorModel::Probabilistic { p_yield } => rng.gen_bool(*p_yield),
        }
    } else {
        false
    };

    if ego_yield && leader.map_or(true, |l| ego.x < l.x) {
        leader = Some(*ego);
    }
    leader
}

/// Scenario description: road geometry, agent roster, randomization ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Lane centerline lateral coordinates (m).
    pub lanes: Vec<f64>,
    /// Road boundary lateral coordinates `(low, high)` (m).
    pub boundaries: (f64, f64),
    pub lane_width: f64,
    /// Index into `lanes` of the ego's starting lane.
    pub ego_lane: usize,
    /// Index into `lanes` of the merge target lane.
    pub target_lane: usize,
    /// Number of surrounding vehicles.
    pub n_veh: usize,
    /// Nominal center-to-center spacing between consecutive agents (m).
    pub spacing: f64,
    /// Nominal x of the rearmost agent relative to the ego start (m).
    pub first_agent_offset: f64,
    /// Nominal reference speed before per-episode randomization (m/s).
    pub v_ref: f64,
    /// Uniform noise range added to each agent's initial x (m).
    pub x_init_noise: (f64, f64),
    /// Uniform noise range added to each agent's initial speed (m/s).
    pub v_init_noise: (f64, f64),
    /// Uniform noise range added to the episode reference speed (m/s).
    pub v_ref_noise: (f64, f64),
    pub behavior: BehaviorModel,
    pub idm: IdmParams,
    /// Neighborhood distance d: agents farther than this from the ego are
    /// excluded from prediction and risk evaluation (m).
    pub neighborhood_d: f64,
    /// Episode step limit.
    pub max_steps: usize,
    /// Default seed for single-episode runs; the experiment harness derives
    /// one seed per run.
    pub seed: u64,
    pub dt: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lanes: vec![0.0, 3.5],
            boundaries: (-1.75, 5.25),
            lane_width: 3.5,
            ego_lane: 0,
            target_lane: 1,
            n_veh: 5,
            spacing: 9.0,
            first_agent_offset: -9.0,
            v_ref: 2.5,
            x_init_noise: (-1.0, 1.0),
            v_init_noise: (-1.0, 1.0),
            v_ref_noise: (-1.0, 1.0),
            behavior: BehaviorModel::Probabilistic { p_yield: 0.5 },
            idm: IdmParams::default(),
            neighborhood_d: 100.0,
            max_steps: 200,
            seed: 0,
            dt: 0.3,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lanes.is_empty() {
            return Err(Error::config("at least one lane required"));
        }
        if self.ego_lane >= self.lanes.len() || self.target_lane >= self.lanes.len() {
            return Err(Error::config("lane indices out of range"));
        }
        let (lo, hi) = self.boundaries;
        if self.lanes.iter().any(|&y| y <= lo || y >= hi) {
            return Err(Error::config("boundaries must bracket all lane centerlines"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        self.behavior.validate()?;
        self.idm.validate()
    }

    pub fn target_lane_y(&self) -> f64 {
        self.lanes[self.target_lane]
    }

    pub fn ego_lane_y(&self) -> f64 {
        self.lanes[self.ego_lane]
    }
}

/// Mutable world state stepped by the simulator.
#[derive(Debug, Clone)]
pub struct World {
    pub ego: VehicleState,
    pub agents: Vec<VehicleState>,
    pub t: f64,
    pub step_idx: usize,
    /// Reference speed after episode randomization; agents use it as their
    /// IDM desired speed and the planner tracks it.
    pub v_ref: f64,
    pub behavior: BehaviorModel,
    pub idm: IdmParams,
    pub zones: YieldZones,
    pub lanes: Vec<f64>,
    pub geom: VehicleGeometry,
    pub bounds: ControlBounds,
    pub dt: f64,
}

impl World {
    /// Build the initial world from a scenario, drawing placement noise and
    /// the episode reference speed from `rng`.
    pub fn from_scenario<R: Rng>(
        cfg: &ScenarioConfig,
        geom: &VehicleGeometry,
        bounds: &ControlBounds,
        rng: &mut R,
    ) -> Result<World> {
        cfg.validate()?;
        geom.validate()?;
        let uni = |rng: &mut R, range: (f64, f64)| {
            if range.0 == range.1 {
                range.0
            } else {
                rng.gen_range(range.0..range.1)
            }
        };
        let v_ref = (cfg.v_ref + uni(rng, cfg.v_ref_noise)).max(0.1);
        let target_y = cfg.target_lane_y();
        let mut agents = Vec::with_capacity(cfg.n_veh);
        for i in 0..cfg.n_veh {
            let x = cfg.first_agent_offset + i as f64 * cfg.spacing + uni(rng, cfg.x_init_noise);
            let v = (v_ref + uni(rng, cfg.v_init_noise)).max(0.0);
            agents.push(VehicleState::new(x, target_y, 0.0, v));
        }
        let ego = VehicleState::new(0.0, cfg.ego_lane_y(), 0.0, v_ref);

        let mut idm = cfg.idm;
        idm.v0 = v_ref;
        idm.vehicle_length = geom.length;

        let world = World {
            ego,
            agents,
            t: 0.0,
            step_idx: 0,
            v_ref,
            behavior: cfg.behavior,
            idm,
            zones: YieldZones::from_road(cfg.lane_width, geom),
            lanes: cfg.lanes.clone(),
            geom: *geom,
            bounds: *bounds,
            dt: cfg.dt,
        };
        if detect_collision(&world.ego, &world.agents, geom) {
            return Err(Error::config("agents must start collision-free"));
        }
        Ok(world)
    }

    /// States of all agents except index `i`.
    fn others(&self, i: usize) -> Vec<VehicleState> {
        self.agents
            .iter()
            .enumerate()
            .filter_map(|(j, s)| (j != i).then_some(*s))
            .collect()
    }
}

/// Advance the world one step: the ego moves under `ego_control` (clamped),
/// every agent moves lane-locked (zero steering) under its IDM acceleration.
///
/// Decisions are synchronous: all accelerations and yield draws are computed
/// against the pre-step world, then every vehicle advances. Yield decisions
/// are re-drawn each step from the episode RNG stream.
pub fn sim_step<R: Rng>(world: &mut World, ego_control: ControlInput, rng: &mut R) -> Result<()> {
    let idm = world.behavior.idm_for(&world.idm);
    let mut accels = Vec::with_capacity(world.agents.len());
    for i in 0..world.agents.len() {
        let others = world.others(i);
        let leader = select_leader(
            &world.agents[i],
            &others,
            &world.ego,
            &world.lanes,
            &world.zones,
            &world.behavior,
            idm.sensing_range,
            rng,
        );
        accels.push(idm_accel(&world.agents[i], leader.as_ref(), &idm));
    }
    for (agent, a) in world.agents.iter_mut().zip(accels) {
        *agent = dynamics::step(agent, &ControlInput::new(0.0, a), &world.geom, world.dt)?;
    }
    let clamped = world.bounds.clamp(ego_control);
    world.ego = dynamics::step(&world.ego, &clamped, &world.geom, world.dt)?;
    world.t += world.dt;
    world.step_idx += 1;
    Ok(())
}

/// Circle centers of the three-circle footprint, spaced along the heading.
pub fn circle_centers(s: &VehicleState, geom: &VehicleGeometry) -> [(f64, f64); 3] {
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    let d = geom.length / 3.0;
    [
        (s.x - d * cos_psi, s.y - d * sin_psi),
        (s.x, s.y),
        (s.x + d * cos_psi, s.y + d * sin_psi),
    ]
}

/// Radius covering one third of the vehicle rectangle.
pub fn circle_radius(geom: &VehicleGeometry) -> f64 {
    ((geom.length / 6.0).powi(2) + (geom.width / 2.0).powi(2)).sqrt()
}

/// Three-circle collision test between the ego and any agent.
pub fn detect_collision(ego: &VehicleState, agents: &[VehicleState], geom: &VehicleGeometry) -> bool {
    let r2 = 2.0 * circle_radius(geom);
    let ego_circles = circle_centers(ego, geom);
    for agent in agents {
        let agent_circles = circle_centers(agent, geom);
        for (ex, ey) in &ego_circles {
            for (ax, ay) in &agent_circles {
                if (ex - ax).powi(2) + (ey - ay).powi(2) <= r2 * r2 {
                    return true;
                }
            }
        }
    }
    false
}

/// Terminal status of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    /// Ego held the target-lane window; `merge_step` is the first step of it.
    Success { merge_step: usize },
    Collision { step: usize },
    Timeout,
}

/// All vehicle states at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub ego: VehicleState,
    pub agents: Vec<VehicleState>,
}

/// Planner diagnostics kept with each logged step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiag {
    pub cost_best: f64,
    pub cost_weighted: f64,
    pub ess: f64,
    pub degenerate: bool,
    /// Planning wall time for this step (s). Excluded from deterministic
    /// summaries.
    pub plan_time: f64,
}

/// One executed step: the control applied at the step's start and the
/// resulting world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub control: ControlInput,
    pub after: Snapshot,
    pub diag: StepDiag,
}

/// Full per-episode log: the unit of persistence and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub v_ref: f64,
    pub dt: f64,
    pub initial: Snapshot,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
}
