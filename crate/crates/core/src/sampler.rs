//! Control-sequence sampling: cubic Hermite lane-change priors tracked with
//! PID speed + Stanley steering control, and the mixed sampling distribution
//! that centers part of the sample budget on each prior and the rest on the
//! warm-started mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlBounds, ControlInput, VehicleGeometry, VehicleState};
use crate::{mix_seed, Error, Result};

/// PID gains for the speed loop of the spline tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.0,
            kd: 0.1,
        }
    }
}

/// Spline-tracking controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub pid: PidGains,
    /// Stanley cross-track gain.
    pub stanley_gain: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            pid: PidGains::default(),
            stanley_gain: 0.5,
        }
    }
}

/// Sampling distribution parameters. Covariances are diagonal per control
/// step; fields hold the per-dimension variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Total samples K per planning step.
    pub k_total: usize,
    /// Samples M drawn around each available lane-change prior.
    pub m_per_lane: usize,
    /// Nominal steering variance (rad^2).
    pub sigma_steer: f64,
    /// Nominal acceleration variance ((m/s^2)^2).
    pub sigma_accel: f64,
    /// Spline-prior steering variance (rad^2).
    pub sigma_spline_steer: f64,
    /// Spline-prior acceleration variance ((m/s^2)^2).
    pub sigma_spline_accel: f64,
    /// Base seed; per-step and per-sample substreams are derived from it.
    pub seed: u64,
    pub tracking: TrackingConfig,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k_total: 1500,
            m_per_lane: 150,
            sigma_steer: 1e-3,
            sigma_accel: 0.1,
            sigma_spline_steer: 5e-4,
            sigma_spline_accel: 0.1,
            seed: 0,
            tracking: TrackingConfig::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_total == 0 {
            return Err(Error::config("K must be positive"));
        }
        let vars = [
            self.sigma_steer,
            self.sigma_accel,
            self.sigma_spline_steer,
            self.sigma_spline_accel,
        ];
        if vars.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("sampling variances must be non-negative"));
        }
        Ok(())
    }
}

/// Which neighbor lane a spline prior targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneSide {
    Left,
    Right,
}

/// Provenance of one control sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    SplineLeft,
    SplineRight,
    Nominal,
}

impl From<LaneSide> for SampleSource {
    fn from(side: LaneSide) -> Self {
        match side {
            LaneSide::Left => SampleSource::SplineLeft,
            LaneSide::Right => SampleSource::SplineRight,
        }
    }
}

/// A tracked lane-change reference: the achieved waypoints and the control
/// sequence that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineReference {
    pub waypoints: Vec<(f64, f64)>,
    pub controls: Vec<ControlInput>,
}

/// A spline reference tagged with the lane it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePrior {
    pub side: LaneSide,
    pub reference: SplineReference,
}

/// Cubic Hermite lane-change curve sampled at `h` points.
///
/// Runs from the ego position (tangent along the current velocity vector) to
/// a point `ego.v * h * dt` ahead on the target lateral offset (tangent
/// lane-aligned at the reference speed). The returned waypoints exclude the
/// start point and include the endpoint.
pub fn build_spline(
    ego: &VehicleState,
    target_y: f64,
    v_ref: f64,
    h: usize,
    dt: f64,
) -> Vec<(f64, f64)> {
    let span = h as f64 * dt;
    let p0 = (ego.x, ego.y);
    let p1 = (ego.x + ego.v * span, target_y);
    let (sin_psi, cos_psi) = ego.psi.sin_cos();
    let m0 = (ego.v * cos_psi * span, ego.v * sin_psi * span);
    let m1 = (v_ref * span, 0.0);
    (1..=h)
        .map(|i| {
            let s = i as f64 / h as f64;
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            (
                h00 * p0.0 + h10 * m0.0 + h01 * p1.0 + h11 * m1.0,
                h00 * p0.1 + h10 * m0.1 + h01 * p1.1 + h11 * m1.1,
            )
        })
        .collect()
}

/// Track a waypoint sequence with the bicycle model: PID on the speed error
/// against `v_ref`, Stanley steering on heading and cross-track error, both
/// clamped to the control bounds.
pub fn track_spline(
    ego: &VehicleState,
    waypoints: &[(f64, f64)],
    geom: &VehicleGeometry,
    bounds: &ControlBounds,
    v_ref: f64,
    tracking: &TrackingConfig,
    dt: f64,
) -> Result<SplineReference> {
    if waypoints.is_empty() {
        return Err(Error::invalid_input("empty waypoint sequence"));
    }
    let mut state = *ego;
    let mut achieved = Vec::with_capacity(waypoints.len());
    let mut controls = Vec::with_capacity(waypoints.len());
    let mut integral = 0.0;
    let mut prev_err: Option<f64> = None;
    let mut prev_point = (ego.x, ego.y);
    for &(tx, ty) in waypoints {
        let path_heading = (ty - prev_point.1).atan2(tx - prev_point.0);
        let heading_err = path_heading - state.psi;
        let (sin_psi, cos_psi) = state.psi.sin_cos();
        // signed cross-track error: positive when the path lies left of the ego
        let cross = sin_psi * (state.x - tx) - cos_psi * (state.y - ty);
        let delta = heading_err + (tracking.stanley_gain * cross).atan2(state.v.max(1e-6));

        let err = v_ref - state.v;
        integral += err * dt;
        let deriv = prev_err.map_or(0.0, |p| (err - p) / dt);
        prev_err = Some(err);
        let accel = tracking.pid.kp * err + tracking.pid.ki * integral + tracking.pid.kd * deriv;

        let u = bounds.clamp(ControlInput::new(delta, accel));
        state = dynamics::step(&state, &u, geom, dt)?;
        achieved.push((state.x, state.y));
        controls.push(u);
        prev_point = (tx, ty);
    }
    Ok(SplineReference {
        waypoints: achieved,
        controls,
    })
}

/// Draw the K control samples for one planning step.
///
/// The first M samples perturb the left-lane prior, the next M the right-lane
/// prior, and the remainder the warm-started mean; a missing neighbor lane
/// reallocates its budget to the nominal distribution. Every control is
/// clamped to bounds (truncation, not rejection). Per-sample RNG substreams
/// are derived from `seed`, so the sample set is reproducible independent of
/// evaluation order or thread count.
pub fn draw_samples(
    mean: &[ControlInput],
    priors: &[SplinePrior],
    cfg: &SamplingConfig,
    bounds: &ControlBounds,
    seed: u64,
) -> Result<(Vec<Vec<ControlInput>>, Vec<SampleSource>)> {
    cfg.validate()?;
    let h = mean.len();
    if h == 0 {
        return Err(Error::invalid_input("empty mean control sequence"));
    }
    for prior in priors {
        if prior.reference.controls.len() != h {
            return Err(Error::invalid_input("prior length differs from mean"));
        }
    }
    let prior_total = cfg.m_per_lane * priors.len();
    if cfg.k_total < 2 * prior_total {
        return Err(Error::config(format!(
            "K = {} cannot host 2x the prior budget {prior_total}",
            cfg.k_total
        )));
    }

    let sd_steer = cfg.sigma_steer.sqrt();
    let sd_accel = cfg.sigma_accel.sqrt();
    let sd_sp_steer = cfg.sigma_spline_steer.sqrt();
    let sd_sp_accel = cfg.sigma_spline_accel.sqrt();

    let mut samples = Vec::with_capacity(cfg.k_total);
    let mut sources = Vec::with_capacity(cfg.k_total);
    for k in 0..cfg.k_total {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
        let slot = k / cfg.m_per_lane.max(1);
        let (center, source, sd) = if k < prior_total {
            let prior = &priors[slot.min(priors.len() - 1)];
            (
                prior.reference.controls.as_slice(),
                SampleSource::from(prior.side),
                (sd_sp_steer, sd_sp_accel),
            )
        } else {
            (mean, SampleSource::Nominal, (sd_steer, sd_accel))
        };
        let seq: Vec<ControlInput> = center
            .iter()
            .map(|u| {
                let z_delta: f64 = StandardNormal.sample(&mut rng);
                let z_a: f64 = StandardNormal.sample(&mut rng);
                bounds.clamp(ControlInput::new(u.delta + sd.0 * z_delta, u.a + sd.1 * z_a))
            })
            .collect();
        samples.push(seq);
        sources.push(source);
    }
    Ok((samples, sources))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_ego() -> VehicleState {
        VehicleState::new(0.0, 0.0, 0.0, 2.5)
    }

    #[test]
    fn degenerate_spline_is_straight() {
        let ego = nominal_ego();
        let wps = build_spline(&ego, 0.0, 2.5, 17, 0.3);
        assert_eq!(wps.len(), 17);
        for (_, y) in &wps {
            assert!(y.abs() < 1e-12);
        }
        // x advances monotonically to the endpoint
        assert!((wps.last().unwrap().0 - 2.5 * 17.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn lane_change_spline_hits_endpoints_monotonically() {
        let ego = nominal_ego();
        let wps = build_spline(&ego, 3.5, 2.5, 17, 0.3);
        assert!((wps.last().unwrap().1 - 3.5).abs() < 1e-12);
        let mut prev = 0.0;
        for (_, y) in &wps {
            assert!(*y >= prev - 1e-12, "lateral motion not monotone");
            prev = *y;
        }
    }

    #[test]
    fn hermite_midpoint_halfway_for_zero_end_tangents() {
        // start tangent has zero lateral component (psi = 0), end tangent is
        // lane-aligned, so y(0.5) = h01(0.5) * 3.5 = 1.75
        let ego = nominal_ego();
        let h = 16; // even, so s = 0.5 is sampled exactly
        let wps = build_spline(&ego, 3.5, 2.5, h, 0.3);
        let mid = wps[h / 2 - 1];
        assert!((mid.1 - 1.75).abs() < 1e-12, "midpoint y = {}", mid.1);
    }

    #[test]
    fn tracking_straight_path_at_speed_is_quiet() {
        let ego = nominal_ego();
        let wps = build_spline(&ego, 0.0, 2.5, 17, 0.3);
        let reference = track_spline(
            &ego,
            &wps,
            &VehicleGeometry::default(),
            &ControlBounds::default(),
            2.5,
            &TrackingConfig::default(),
            0.3,
        )
        .unwrap();
        for u in &reference.controls {
            assert!(u.delta.abs() < 1e-3);
            assert!(u.a.abs() < 1e-3);
        }
    }

    #[test]
    fn nominal_lane_change_tracking_regression() {
        // closed-loop tracking of the nominal lane-change spline at v = 2.5;
        // end point frozen from one rollout, final lateral error under 0.3 m
        let ego = nominal_ego();
        let wps = build_spline(&ego, 3.5, 2.5, 17, 0.3);
        let reference = track_spline(
            &ego,
            &wps,
            &VehicleGeometry::default(),
            &ControlBounds::default(),
            2.5,
            &TrackingConfig::default(),
            0.3,
        )
        .unwrap();
        let (x, y) = *reference.waypoints.last().unwrap();
        assert!((3.5 - y).abs() < 0.3, "final y = {y}");
        assert!((y - 3.4021).abs() < 1e-3, "final y = {y}");
        assert!((x - 12.1903).abs() < 1e-3, "final x = {x}");
        // every control respects bounds; the early transit rides the rail
        let bounds = ControlBounds::default();
        assert!(reference.controls.iter().all(|u| bounds.contains(*u)));
        assert!(reference.controls.iter().filter(|u| u.delta == 0.1).count() >= 4);
    }

    #[test]
    fn stanley_steers_toward_the_path() {
        // ego offset 0.5 m above a straight spline: first command steers down
        let ego = VehicleState::new(0.0, 0.5, 0.0, 2.5);
        let wps: Vec<(f64, f64)> = (1..=17).map(|i| (0.75 * i as f64, 0.0)).collect();
        let reference = track_spline(
            &ego,
            &wps,
            &VehicleGeometry::default(),
            &ControlBounds::default(),
            2.5,
            &TrackingConfig::default(),
            0.3,
        )
        .unwrap();
        assert!(reference.controls[0].delta < 0.0);

        // mirrored offset steers up
        let ego2 = VehicleState::new(0.0, -0.5, 0.0, 2.5);
        let reference2 = track_spline(
            &ego2,
            &wps,
            &VehicleGeometry::default(),
            &ControlBounds::default(),
            2.5,
            &TrackingConfig::default(),
            0.3,
        )
        .unwrap();
        assert!(reference2.controls[0].delta > 0.0);
    }

    #[test]
    fn zero_covariance_reproduces_means() {
        let cfg = SamplingConfig {
            k_total: 20,
            m_per_lane: 5,
            sigma_steer: 0.0,
            sigma_accel: 0.0,
            sigma_spline_steer: 0.0,
            sigma_spline_accel: 0.0,
            ..SamplingConfig::default()
        };
        let mean = vec![ControlInput::new(0.01, 0.2); 17];
        let prior_controls = vec![ControlInput::new(0.05, -0.1); 17];
        let priors = vec![SplinePrior {
            side: LaneSide::Left,
            reference: SplineReference {
                waypoints: vec![(0.0, 0.0); 17],
                controls: prior_controls.clone(),
            },
        }];
        let (samples, sources) =
            draw_samples(&mean, &priors, &cfg, &ControlBounds::default(), 7).unwrap();
        assert_eq!(samples.len(), 20);
        for (seq, src) in samples.iter().zip(&sources) {
            match src {
                SampleSource::SplineLeft => assert_eq!(seq, &prior_controls),
                SampleSource::Nominal => assert_eq!(seq, &mean),
                SampleSource::SplineRight => panic!("no right prior supplied"),
            }
        }
        assert_eq!(
            sources.iter().filter(|s| **s == SampleSource::SplineLeft).count(),
            5
        );
    }

    #[test]
    fn fixed_seed_reproduces_sample_set() {
        let cfg = SamplingConfig {
            k_total: 64,
            m_per_lane: 8,
            ..SamplingConfig::default()
        };
        let mean = vec![ControlInput::ZERO; 17];
        let run = || draw_samples(&mean, &[], &cfg, &ControlBounds::default(), 99).unwrap();
        assert_eq!(run(), run());
        // different seed differs
        let other = draw_samples(&mean, &[], &cfg, &ControlBounds::default(), 100).unwrap();
        assert_ne!(run().0, other.0);
    }

    #[test]
    fn provenance_partition_with_two_and_one_lanes() {
        let cfg = SamplingConfig {
            k_total: 100,
            m_per_lane: 20,
            ..SamplingConfig::default()
        };
        let mean = vec![ControlInput::ZERO; 5];
        let reference = SplineReference {
            waypoints: vec![(0.0, 0.0); 5],
            controls: vec![ControlInput::ZERO; 5],
        };
        let both = [
            SplinePrior {
                side: LaneSide::Left,
                reference: reference.clone(),
            },
            SplinePrior {
                side: LaneSide::Right,
                reference: reference.clone(),
            },
        ];
        let (_, sources) = draw_samples(&mean, &both, &cfg, &ControlBounds::default(), 1).unwrap();
        let count = |s: SampleSource| sources.iter().filter(|x| **x == s).count();
        assert_eq!(count(SampleSource::SplineLeft), 20);
        assert_eq!(count(SampleSource::SplineRight), 20);
        assert_eq!(count(SampleSource::Nominal), 60);
        // first M left, next M right, remainder nominal
        assert!(sources[..20].iter().all(|s| *s == SampleSource::SplineLeft));
        assert!(sources[20..40].iter().all(|s| *s == SampleSource::SplineRight));
        assert!(sources[40..].iter().all(|s| *s == SampleSource::Nominal));

        // missing right lane: its budget goes to the nominal distribution
        let left_only = [SplinePrior {
            side: LaneSide::Left,
            reference,
        }];
        let (_, one_lane) =
            draw_samples(&mean, &left_only, &cfg, &ControlBounds::default(), 1).unwrap();
        let count1 = |s: SampleSource| one_lane.iter().filter(|x| **x == s).count();
        assert_eq!(count1(SampleSource::SplineLeft), 20);
        assert_eq!(count1(SampleSource::SplineRight), 0);
        assert_eq!(count1(SampleSource::Nominal), 80);
    }

    #[test]
    fn oversized_prior_budget_is_config_error() {
        let cfg = SamplingConfig {
            k_total: 30,
            m_per_lane: 20,
            ..SamplingConfig::default()
        };
        let mean = vec![ControlInput::ZERO; 5];
        let reference = SplineReference {
            waypoints: vec![(0.0, 0.0); 5],
            controls: vec![ControlInput::ZERO; 5],
        };
        let priors = [SplinePrior {
            side: LaneSide::Left,
            reference,
        }];
        assert!(matches!(
            draw_samples(&mean, &priors, &cfg, &ControlBounds::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn samples_respect_bounds() {
        let cfg = SamplingConfig {
            k_total: 200,
            m_per_lane: 0,
            ..SamplingConfig::default()
        };
        let bounds = ControlBounds::default();
        let mean = vec![ControlInput::new(0.09, 0.45); 17];
        let (samples, _) = draw_samples(&mean, &[], &cfg, &bounds, 5).unwrap();
        for seq in &samples {
            for u in seq {
                assert!(bounds.contains(*u));
            }
        }
    }

    #[test]
    fn sample_noise_matches_configured_covariance() {
        // statistical check on the raw (unclamped) noise: open bounds
        let cfg = SamplingConfig {
            k_total: 6250, // 6250 samples x 16 steps = 1e5 draws per dimension
            m_per_lane: 0,
            ..SamplingConfig::default()
        };
        let wide = ControlBounds {
            steer: (-1e9, 1e9),
            accel: (-1e9, 1e9),
        };
        let mean = vec![ControlInput::ZERO; 16];
        let (samples, _) = draw_samples(&mean, &[], &cfg, &wide, 123).unwrap();
        let mut n = 0usize;
        let (mut sum_d, mut sum_d2, mut sum_a, mut sum_a2) = (0.0, 0.0, 0.0, 0.0);
        for seq in &samples {
            for u in seq {
                n += 1;
                sum_d += u.delta;
                sum_d2 += u.delta * u.delta;
                sum_a += u.a;
                sum_a2 += u.a * u.a;
            }
        }
        let nf = n as f64;
        let sd_delta = (sum_d2 / nf - (sum_d / nf).powi(2)).sqrt();
        let sd_a = (sum_a2 / nf - (sum_a / nf).powi(2)).sqrt();
        assert!(
            (sd_delta - 1e-3f64.sqrt()).abs() / 1e-3f64.sqrt() < 0.02,
            "steer sd {sd_delta}"
        );
        assert!(
            (sd_a - 0.1f64.sqrt()).abs() / 0.1f64.sqrt() < 0.02,
            "accel sd {sd_a}"
        );
    }
}


