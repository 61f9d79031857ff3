//! Planning objective: goal proximity, lane centering, velocity tracking,
//! control effort and smoothness, road-boundary proximity, and Gaussian
//! overlap risk against predicted neighbors.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleGeometry, VehicleState};
use crate::prediction::ConditionedPrediction;
use crate::{Error, Result};

/// Objective weights. All terms are weighted sums over the planning horizon;
/// the risk term runs only over the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Goal-proximity indicator weight (per axis, per step).
    pub lambda_goal: f64,
    /// Lane-centering weight.
    pub lambda_lane: f64,
    /// Velocity-tracking weight.
    pub lambda_vel: f64,
    /// Steering-magnitude weight.
    pub lambda_steer: f64,
    /// Acceleration-magnitude weight.
    pub lambda_accel: f64,
    /// Steering-rate weight.
    pub lambda_steer_rate: f64,
    /// Acceleration-rate (jerk) weight.
    pub lambda_jerk: f64,
    /// Road-boundary proximity weight.
    pub lambda_boundary: f64,
    /// Safety-risk weight.
    pub lambda_risk: f64,
    /// Threshold on the squared goal distance for the indicator terms (m^2).
    pub epsilon: f64,
    /// When true (default) the goal indicator is a reward: being within
    /// `epsilon` of the goal subtracts `lambda_goal`. When false it adds, as
    /// literally printed in the objective.
    pub goal_reward: bool,
    /// Footprint covariance scale along the vehicle length.
    pub beta_l: f64,
    /// Footprint covariance scale along the vehicle width.
    pub beta_w: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_goal: 2.0,
            lambda_lane: 0.5,
            lambda_vel: 0.5,
            lambda_steer: 1.0,
            lambda_accel: 0.1,
            lambda_steer_rate: 1.0,
            lambda_jerk: 0.1,
            lambda_boundary: 1.0,
            lambda_risk: 500.0,
            epsilon: 1.0,
            goal_reward: true,
            beta_l: 0.7,
            beta_w: 0.5,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_goal,
            self.lambda_lane,
            self.lambda_vel,
            self.lambda_steer,
            self.lambda_accel,
            self.lambda_steer_rate,
            self.lambda_jerk,
            self.lambda_boundary,
            self.lambda_risk,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("cost weights must be non-negative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.beta_l > 0.0 && self.beta_w > 0.0) {
            return Err(Error::config("footprint scales must be positive"));
        }
        Ok(())
    }
}

/// Road context the objective is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneContext {
    /// Centerline of the lane the ego currently occupies (m); drives the
    /// choice of neighbor lanes for the spline priors.
    pub y_lane: f64,
    /// Centerline of the merge target lane (m).
    pub y_target_lane: f64,
    /// Road boundary lateral coordinates `(low, high)` (m).
    pub y_boundary: (f64, f64),
    /// Reference speed (m/s).
    pub v_ref: f64,
    pub lane_width: f64,
}

impl LaneContext {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.y_boundary;
        if !(lo < hi) {
            return Err(Error::config("boundaries must be ordered"));
        }
        for y in [self.y_lane, self.y_target_lane] {
            if y <= lo || y >= hi {
                return Err(Error::config("boundaries must bracket lane centerlines"));
            }
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::config("lane width must be positive"));
        }
        Ok(())
    }

    /// All lane centerlines implied by the target lane, lane width and
    /// boundaries (lanes are parallel and evenly spaced).
    pub fn lanes(&self) -> Vec<f64> {
        let (lo, hi) = self.y_boundary;
        let mut lanes = Vec::new();
        // walk down from the target lane, then up
        let mut y = self.y_target_lane;
        while y > lo {
            lanes.push(y);
            y -= self.lane_width;
        }
        lanes.reverse();
        y = self.y_target_lane + self.lane_width;
        while y < hi {
            lanes.push(y);
            y += self.lane_width;
        }
        lanes
    }

    /// Copy with `y_lane` snapped to the centerline nearest `y`.
    pub fn relocated(&self, y: f64) -> LaneContext {
        LaneContext {
            y_lane: crate::traffic::nearest_lane(&self.lanes(), y),
            ..*self
        }
    }
}

impl Default for LaneContext {
    fn default() -> Self {
        Self {
            y_lane: 0.0,
            y_target_lane: 3.5,
            y_boundary: (-1.75, 5.25),
            v_ref: 2.5,
            lane_width: 3.5,
        }
    }
}

/// Local planning goal, recomputed from the current ego state every planning
/// step: hold the reference speed, head for the target-lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalGoal {
    pub x_goal: f64,
    pub y_goal: f64,
}

pub fn local_goal(ego: &VehicleState, ctx: &LaneContext, horizon: usize, dt: f64) -> LocalGoal {
    LocalGoal {
        x_goal: ego.x + ctx.v_ref * horizon as f64 * dt,
        y_goal: ctx.y_target_lane,
    }
}

/// Gaussian risk footprint of one vehicle: position mean and a covariance
/// shaped by heading rotation of the scaled body dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFootprint {
    pub p: Vector2<f64>,
    pub sigma: Matrix2<f64>,
}

/// `Sigma = R(psi) * diag(beta_l * L, beta_w * W) * R(psi)^T`.
pub fn footprint(
    state: &VehicleState,
    geom: &VehicleGeometry,
    beta_l: f64,
    beta_w: f64,
) -> GaussianFootprint {
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    let r = Matrix2::new(cos_psi, -sin_psi, sin_psi, cos_psi);
    let d = Matrix2::new(beta_l * geom.length, 0.0, 0.0, beta_w * geom.width);
    GaussianFootprint {
        p: Vector2::new(state.x, state.y),
        sigma: r * d * r.transpose(),
    }
}

/// Overlap integral of two Gaussian footprints: the density of
/// `N(0, Sigma_a + Sigma_b)` evaluated at `p_a - p_b`.
pub fn gaussian_risk(a: &GaussianFootprint, b: &GaussianFootprint) -> Result<f64> {
    let sigma = a.sigma + b.sigma;
    let det = sigma.determinant();
    if !(det > f64::MIN_POSITIVE) || !det.is_finite() {
        return Err(Error::Numeric(format!(
            "covariance sum is singular (det = {det})"
        )));
    }
    let d = a.p - b.p;
    let inv = Matrix2::new(sigma[(1, 1)], -sigma[(0, 1)], -sigma[(1, 0)], sigma[(0, 0)]) / det;
    let quad = (d.transpose() * inv * d)[(0, 0)];
    Ok((-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

/// Per-term decomposition of the objective. `total` is the planning cost;
/// `total - risk` is the planning-cost metric reported by the harness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub goal_x: f64,
    pub goal_y: f64,
    pub lane: f64,
    pub velocity: f64,
    pub steer: f64,
    pub accel: f64,
    pub steer_rate: f64,
    pub jerk: f64,
    pub boundary: f64,
    pub risk: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.without_risk() + self.risk
    }

    pub fn without_risk(&self) -> f64 {
        self.goal_x
            + self.goal_y
            + self.lane
            + self.velocity
            + self.steer
            + self.accel
            + self.steer_rate
            + self.jerk
            + self.boundary
    }
}

/// Stage terms for one post-step state (everything except control terms and
/// risk). Shared by the planner objective and the realized-cost metric.
///
/// The lane-centering term references the centerline of the lane the state
/// occupies at that step (`lanes` holds all centerlines): rollouts that cross
/// into another lane are scored against the lane they end up in, which keeps
/// lane changes finishable within a horizon.
pub fn state_stage_terms(
    state: &VehicleState,
    weights: &CostWeights,
    ctx: &LaneContext,
    goal: &LocalGoal,
    lanes: &[f64],
) -> CostBreakdown {
    let mut b = CostBreakdown::default();
    let goal_sign = if weights.goal_reward { -1.0 } else { 1.0 };
    if (state.x - goal.x_goal).powi(2) < weights.epsilon {
        b.goal_x = goal_sign * weights.lambda_goal;
    }
    if (state.y - goal.y_goal).powi(2) < weights.epsilon {
        b.goal_y = goal_sign * weights.lambda_goal;
    }
    let y_lane = crate::traffic::nearest_lane(lanes, state.y);
    b.lane = weights.lambda_lane * (y_lane - state.y).powi(2);
    b.velocity = weights.lambda_vel * (ctx.v_ref - state.v).powi(2);
    let (lo, hi) = ctx.y_boundary;
    b.boundary = weights.lambda_boundary
        * ((1.0 + (-(state.y - lo).powi(2)).exp()).ln() + (1.0 + (-(state.y - hi).powi(2)).exp()).ln());
    b
}

/// Full objective over one ego rollout and its conditioned predictions.
///
/// State terms run over all `H` post-step states, control terms over all `H`
/// controls, rate terms over consecutive control pairs, and the risk term
/// over the first `H_pred` steps (the prediction horizon) and all neighbors.
pub fn objective(
    ego_states: &[VehicleState],
    ego_controls: &[ControlInput],
    predictions: &ConditionedPrediction,
    weights: &CostWeights,
    ctx: &LaneContext,
    goal: &LocalGoal,
    geom: &VehicleGeometry,
) -> Result<CostBreakdown> {
    if ego_states.len() != ego_controls.len() {
        return Err(Error::invalid_input("state/control length mismatch"));
    }
    let h_pred = predictions.horizon();
    if h_pred > ego_states.len() {
        return Err(Error::invalid_input(
            "prediction horizon exceeds rollout length",
        ));
    }

    let mut b = CostBreakdown::default();
    let lanes = ctx.lanes();
    for s in ego_states {
        let stage = state_stage_terms(s, weights, ctx, goal, &lanes);
        b.goal_x += stage.goal_x;
        b.goal_y += stage.goal_y;
        b.lane += stage.lane;
        b.velocity += stage.velocity;
        b.boundary += stage.boundary;
    }
    for u in ego_controls {
        b.steer += weights.lambda_steer * u.delta.powi(2);
        b.accel += weights.lambda_accel * u.a.powi(2);
    }
    for w in ego_controls.windows(2) {
        b.steer_rate += weights.lambda_steer_rate * (w[0].delta - w[1].delta).powi(2);
        b.jerk += weights.lambda_jerk * (w[0].a - w[1].a).powi(2);
    }
    for track in &predictions.agents {
        for (k, agent_state) in track.iter().enumerate() {
            let ego_fp = footprint(&ego_states[k], geom, weights.beta_l, weights.beta_w);
            let agent_fp = footprint(agent_state, geom, weights.beta_l, weights.beta_w);
            b.risk += weights.lambda_risk * gaussian_risk(&ego_fp, &agent_fp)?;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn no_neighbors() -> ConditionedPrediction {
        ConditionedPrediction {
            agent_ids: vec![],
            agents: vec![],
            ego_candidate: vec![],
        }
    }

    #[test]
    fn local_goal_examples() {
        let ctx = LaneContext::default();
        let ego = VehicleState::new(0.0, 0.0, 0.0, 2.5);
        let g = local_goal(&ego, &ctx, 17, 0.3);
        assert!((g.x_goal - 12.75).abs() < 1e-12);
        assert_eq!(g.y_goal, 3.5);

        let still = LaneContext { v_ref: 0.0, ..ctx };
        assert_eq!(local_goal(&ego, &still, 17, 0.3).x_goal, ego.x);

        let keep = LaneContext {
            y_target_lane: 0.0,
            ..ctx
        };
        assert_eq!(local_goal(&ego, &keep, 17, 0.3).y_goal, 0.0);
    }

    fn sedan() -> VehicleGeometry {
        VehicleGeometry {
            l_f: 1.4,
            l_r: 1.4,
            length: 4.5,
            width: 1.8,
        }
    }

    #[test]
    fn footprint_identity_rotation() {
        let geom = sedan();
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let fp = footprint(&s, &geom, 1.0, 0.7);
        assert!((fp.sigma[(0, 0)] - 4.5).abs() < 1e-15);
        assert!((fp.sigma[(1, 1)] - 0.7 * 1.8).abs() < 1e-15);
        assert!(fp.sigma[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn footprint_quarter_turn_swaps_axes() {
        let geom = sedan();
        let s = VehicleState::new(0.0, 0.0, PI / 2.0, 0.0);
        let fp = footprint(&s, &geom, 1.0, 0.7);
        assert!((fp.sigma[(0, 0)] - 0.7 * 1.8).abs() < 1e-12);
        assert!((fp.sigma[(1, 1)] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn footprint_matches_explicit_matrix_product() {
        // independent 2x2 product for psi = 0.3, L = 4.5, W = 1.8, betas = 1
        let geom = sedan();
        let s = VehicleState::new(0.0, 0.0, 0.3, 0.0);
        let fp = footprint(&s, &geom, 1.0, 1.0);
        // R diag(a, b) R^T expanded by hand:
        // [c -s; s c] [a 0; 0 b] [c s; -s c] = [c^2 a + s^2 b, cs(a - b); cs(a - b), s^2 a + c^2 b]
        let (c, sn) = (0.3f64.cos(), 0.3f64.sin());
        let want = [
            [c * 4.5 * c + sn * 1.8 * sn, c * 4.5 * sn - sn * 1.8 * c],
            [sn * 4.5 * c - c * 1.8 * sn, sn * 4.5 * sn + c * 1.8 * c],
        ];
        assert!((fp.sigma[(0, 0)] - want[0][0]).abs() < 1e-12);
        assert!((fp.sigma[(0, 1)] - want[0][1]).abs() < 1e-12);
        assert!((fp.sigma[(1, 0)] - want[1][0]).abs() < 1e-12);
        assert!((fp.sigma[(1, 1)] - want[1][1]).abs() < 1e-12);
    }

    #[test]
    fn risk_identical_unit_footprints() {
        let fp = GaussianFootprint {
            p: Vector2::new(0.0, 0.0),
            sigma: Matrix2::identity(),
        };
        let v = gaussian_risk(&fp, &fp).unwrap();
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn risk_far_field_vanishes() {
        let a = GaussianFootprint {
            p: Vector2::new(0.0, 0.0),
            sigma: Matrix2::identity(),
        };
        let b = GaussianFootprint {
            p: Vector2::new(100.0, 0.0),
            sigma: Matrix2::identity(),
        };
        assert!(gaussian_risk(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn risk_closed_form_value() {
        // frozen from an adaptive 2-D quadrature oracle
        let a = GaussianFootprint {
            p: Vector2::new(0.0, 0.0),
            sigma: Matrix2::new(2.0, 0.0, 0.0, 1.0),
        };
        let b = GaussianFootprint {
            p: Vector2::new(2.0, 1.0),
            sigma: Matrix2::new(2.0, 0.0, 0.0, 1.0),
        };
        let v = gaussian_risk(&a, &b).unwrap();
        assert!((v - 0.026579957164976357).abs() < 1e-9);
    }

    #[test]
    fn risk_singular_sum_is_numeric_error() {
        let degenerate = GaussianFootprint {
            p: Vector2::new(0.0, 0.0),
            sigma: Matrix2::zeros(),
        };
        assert!(matches!(
            gaussian_risk(&degenerate, &degenerate),
            Err(Error::Numeric(_))
        ));
    }

    fn straight_states(y: f64, v: f64, n: usize) -> Vec<VehicleState> {
        (1..=n)
            .map(|k| VehicleState::new(v * 0.3 * k as f64, y, 0.0, v))
            .collect()
    }

    #[test]
    fn on_centerline_only_boundary_term_remains() {
        let geom = VehicleGeometry::default();
        let weights = CostWeights::default();
        // ego exactly on the target-lane centerline at v_ref, zero controls
        let ctx = LaneContext {
            y_lane: 3.5,
            ..LaneContext::default()
        };
        let states = straight_states(3.5, 2.5, 17);
        let controls = vec![ControlInput::ZERO; 17];
        // goal indicators off: park the goal far away
        let goal = LocalGoal {
            x_goal: 1e6,
            y_goal: 1e6,
        };
        let b = objective(&states, &controls, &no_neighbors(), &weights, &ctx, &goal, &geom).unwrap();
        let per_step = (1.0 + (-(3.5f64 - -1.75).powi(2)).exp()).ln()
            + (1.0 + (-(3.5f64 - 5.25).powi(2)).exp()).ln();
        assert!((b.total() - 17.0 * per_step).abs() < 1e-12);
        assert_eq!(b.lane, 0.0);
        assert_eq!(b.velocity, 0.0);
        assert_eq!(b.steer_rate, 0.0);
        assert_eq!(b.jerk, 0.0);
    }

    #[test]
    fn velocity_term_linear_in_weight() {
        let geom = VehicleGeometry::default();
        let ctx = LaneContext::default();
        let goal = LocalGoal {
            x_goal: 1e6,
            y_goal: 1e6,
        };
        let states = straight_states(0.0, 1.5, 17);
        let controls = vec![ControlInput::ZERO; 17];
        let w1 = CostWeights::default();
        let w2 = CostWeights {
            lambda_vel: 2.0 * w1.lambda_vel,
            ..w1
        };
        let b1 = objective(&states, &controls, &no_neighbors(), &w1, &ctx, &goal, &geom).unwrap();
        let b2 = objective(&states, &controls, &no_neighbors(), &w2, &ctx, &goal, &geom).unwrap();
        assert!((b2.velocity - 2.0 * b1.velocity).abs() < 1e-12);
        assert!((b2.lane - b1.lane).abs() < 1e-15);
    }

    /// Term-by-term recomputation with independent loops, spreadsheet style.
    #[test]
    fn nine_term_evaluation_matches_independent_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let geom = VehicleGeometry::default();
        let weights = CostWeights::default();
        let ctx = LaneContext::default();
        let h = 17;
        let h_pred = 8;

        let states: Vec<VehicleState> = (0..h)
            .map(|_| {
                VehicleState::new(
                    rng.gen_range(-5.0..15.0),
                    rng.gen_range(-1.0..4.5),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.0..4.0),
                )
            })
            .collect();
        let controls: Vec<ControlInput> = (0..h)
            .map(|_| ControlInput::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.5..0.5)))
            .collect();
        let pred = ConditionedPrediction {
            agent_ids: vec![0, 1],
            agents: (0..2)
                .map(|_| {
                    (0..h_pred)
                        .map(|_| {
                            VehicleState::new(
                                rng.gen_range(-5.0..15.0),
                                3.5,
                                0.0,
                                rng.gen_range(0.0..4.0),
                            )
                        })
                        .collect()
                })
                .collect(),
            ego_candidate: states[..h_pred].to_vec(),
        };
        let goal = LocalGoal {
            x_goal: 6.0,
            y_goal: 3.5,
        };

        let got = objective(&states, &controls, &pred, &weights, &ctx, &goal, &geom).unwrap();

        // independent recomputation
        let mut expect = 0.0;
        for s in &states {
            if (s.x - goal.x_goal).powi(2) < weights.epsilon {
                expect -= weights.lambda_goal;
            }
            if (s.y - goal.y_goal).powi(2) < weights.epsilon {
                expect -= weights.lambda_goal;
            }
            let y_lane = if (s.y - 0.0).abs() <= (s.y - 3.5).abs() { 0.0 } else { 3.5 };
            expect += weights.lambda_lane * (y_lane - s.y).powi(2);
            expect += weights.lambda_vel * (ctx.v_ref - s.v).powi(2);
            expect += weights.lambda_boundary
                * ((1.0 + (-(s.y - ctx.y_boundary.0).powi(2)).exp()).ln()
                    + (1.0 + (-(s.y - ctx.y_boundary.1).powi(2)).exp()).ln());
        }
        for u in &controls {
            expect += weights.lambda_steer * u.delta * u.delta + weights.lambda_accel * u.a * u.a;
        }
        for k in 0..h - 1 {
            expect += weights.lambda_steer_rate * (controls[k].delta - controls[k + 1].delta).powi(2);
            expect += weights.lambda_jerk * (controls[k].a - controls[k + 1].a).powi(2);
        }
        for track in &pred.agents {
            for (k, a) in track.iter().enumerate() {
                let e = &states[k];
                // overlap of the two rotated Gaussians, expanded by hand
                let build = |s: &VehicleState| {
                    let (sn, c) = s.psi.sin_cos();
                    let (l, w) = (weights.beta_l * geom.length, weights.beta_w * geom.width);
                    [
                        [c * c * l + sn * sn * w, c * sn * l - sn * c * w],
                        [sn * c * l - c * sn * w, sn * sn * l + c * c * w],
                    ]
                };
                let (ma, mb) = (build(e), build(a));
                let m = [
                    [ma[0][0] + mb[0][0], ma[0][1] + mb[0][1]],
                    [ma[1][0] + mb[1][0], ma[1][1] + mb[1][1]],
                ];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let d = [e.x - a.x, e.y - a.y];
                let quad =
                    (d[0] * (m[1][1] * d[0] - m[0][1] * d[1]) + d[1] * (-m[1][0] * d[0] + m[0][0] * d[1]))
                        / det;
                expect +=
                    weights.lambda_risk * (-0.5 * quad).exp() / (2.0 * PI * det.sqrt());
            }
        }
        assert!(
            (got.total() - expect).abs() < 1e-9,
            "{} vs {expect}",
            got.total()
        );
    }

    #[test]
    fn removing_neighbors_removes_exactly_the_risk_term() {
        let geom = VehicleGeometry::default();
        let weights = CostWeights::default();
        let ctx = LaneContext::default();
        let states = straight_states(1.0, 2.0, 17);
        let controls = vec![ControlInput::new(0.05, 0.2); 17];
        let goal = LocalGoal {
            x_goal: 12.75,
            y_goal: 3.5,
        };
        let pred = ConditionedPrediction {
            agent_ids: vec![0],
            agents: vec![straight_states(3.5, 2.5, 8)],
            ego_candidate: states[..8].to_vec(),
        };
        let with = objective(&states, &controls, &pred, &weights, &ctx, &goal, &geom).unwrap();
        let without =
            objective(&states, &controls, &no_neighbors(), &weights, &ctx, &goal, &geom).unwrap();
        assert!(with.risk > 0.0);
        assert!((with.total() - without.total() - with.risk).abs() < 1e-12);
        assert_eq!(without.risk, 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let geom = VehicleGeometry::default();
        let states = straight_states(0.0, 2.0, 17);
        let controls = vec![ControlInput::ZERO; 16];
        let r = objective(
            &states,
            &controls,
            &no_neighbors(),
            &CostWeights::default(),
            &LaneContext::default(),
            &LocalGoal {
                x_goal: 0.0,
                y_goal: 0.0,
            },
            &geom,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lanes_enumeration_covers_road() {
        let ctx = LaneContext::default();
        assert_eq!(ctx.lanes(), vec![0.0, 3.5]);
        assert_eq!(ctx.relocated(0.9).y_lane, 0.0);
        assert_eq!(ctx.relocated(2.1).y_lane, 3.5);
    }

    proptest! {
        #[test]
        fn risk_symmetric_positive_decreasing(
            ax in -3.0..3.0f64, ay in -3.0..3.0f64,
            psi_a in -1.5..1.5f64, psi_b in -1.5..1.5f64,
            scale in 0.2..3.0f64,
        ) {
            let geom = VehicleGeometry::default();
            let a = footprint(&VehicleState::new(0.0, 0.0, psi_a, 0.0), &geom, 1.0, 0.7);
            let near = footprint(&VehicleState::new(ax, ay, psi_b, 0.0), &geom, 1.0, 0.7);
            let far = footprint(
                &VehicleState::new(ax * (1.0 + scale), ay * (1.0 + scale), psi_b, 0.0),
                &geom,
                1.0,
                0.7,
            );
            let v_near = gaussian_risk(&a, &near).unwrap();
            let v_far = gaussian_risk(&a, &far).unwrap();
            let v_sym = gaussian_risk(&near, &a).unwrap();
            prop_assert!(v_near > 0.0);
            prop_assert!((v_near - v_sym).abs() <= 1e-15 * v_near.max(1.0));
            // strictly decreasing along the ray away from a (unless colocated)
            if ax != 0.0 || ay != 0.0 {
                prop_assert!(v_far < v_near);
            }
        }

        #[test]
        fn objective_translation_invariant(
            dx in -50.0..50.0f64,
            dy in -20.0..20.0f64,
            seed in 0u64..200,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let geom = VehicleGeometry::default();
            let weights = CostWeights::default();
            let ctx = LaneContext::default();
            let states: Vec<VehicleState> = (0..10)
                .map(|_| VehicleState::new(
                    rng.gen_range(-5.0..15.0),
                    rng.gen_range(-1.0..4.0),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.0..4.0),
                ))
                .collect();
            let controls: Vec<ControlInput> = (0..10)
                .map(|_| ControlInput::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.5..0.5)))
                .collect();
            let pred = ConditionedPrediction {
                agent_ids: vec![0],
                agents: vec![(0..8).map(|k| VehicleState::new(k as f64, 3.5, 0.0, 2.0)).collect()],
                ego_candidate: states[..8].to_vec(),
            };
            let goal = LocalGoal { x_goal: 7.0, y_goal: 3.5 };
            let base = objective(&states, &controls, &pred, &weights, &ctx, &goal, &geom).unwrap();

            let shift_state = |s: &VehicleState| VehicleState::new(s.x + dx, s.y + dy, s.psi, s.v);
            let states2: Vec<VehicleState> = states.iter().map(shift_state).collect();
            let pred2 = ConditionedPrediction {
                agent_ids: pred.agent_ids.clone(),
                agents: vec![pred.agents[0].iter().map(shift_state).collect()],
                ego_candidate: states2[..8].to_vec(),
            };
            let ctx2 = LaneContext {
                y_lane: ctx.y_lane + dy,
                y_target_lane: ctx.y_target_lane + dy,
                y_boundary: (ctx.y_boundary.0 + dy, ctx.y_boundary.1 + dy),
                ..ctx
            };
            let goal2 = LocalGoal { x_goal: goal.x_goal + dx, y_goal: goal.y_goal + dy };
            let shifted = objective(&states2, &controls, &pred2, &weights, &ctx2, &goal2, &geom).unwrap();
            prop_assert!((base.total() - shifted.total()).abs() < 1e-9);
        }

        #[test]
        fn rate_terms_vanish_for_constant_controls(
            delta in -0.1..0.1f64,
            a in -0.5..0.5f64,
        ) {
            let geom = VehicleGeometry::default();
            let states = straight_states(0.0, 2.0, 12);
            let controls = vec![ControlInput::new(delta, a); 12];
            let b = objective(
                &states,
                &controls,
                &no_neighbors(),
                &CostWeights::default(),
                &LaneContext::default(),
                &LocalGoal { x_goal: 1e6, y_goal: 1e6 },
                &geom,
            ).unwrap();
            prop_assert_eq!(b.steer_rate, 0.0);
            prop_assert_eq!(b.jerk, 0.0);
        }
    }
}
