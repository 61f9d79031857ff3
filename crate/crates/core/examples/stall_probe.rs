//! Diagnostic probe: run one episode and dump the planner's view at chosen
//! steps (weight mass per source, top samples' terminal state and cost
//! split). Not part of the test suite.

use mppi_merge::config::{AppConfig, BehaviorKind, CellSpec};
use mppi_merge::cost::{local_goal, objective};
use mppi_merge::planner::{Planner, PlannerState};
use mppi_merge::prediction::TrajectoryHistory;
use mppi_merge::traffic::{sim_step, World};
use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let config_path = args.get(1).expect("usage: stall_probe <config> [seed] [dump_steps...]");
    let seed: u64 = args.get(2).map_or(7, |s| s.parse().unwrap());
    let dump_at: Vec<usize> = args[3..].iter().map(|s| s.parse().unwrap()).collect();

    let cfg = AppConfig::load(std::path::Path::new(config_path)).unwrap();
    let cell = CellSpec {
        behavior: BehaviorKind::Cooperative,
        predictor: mppi_merge::prediction::PredictorKind::InteractiveIdm,
        spline_prior: true,
    };
    let scenario = cfg.scenario(cell.behavior, seed);
    let geom = cfg.geometry();
    let bounds = cfg.bounds();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::from_scenario(&scenario, &geom, &bounds, &mut rng).unwrap();
    println!("v_ref = {:.3}", world.v_ref);

    let pcfg = cfg.planner_config(cell.predictor, cell.spline_prior, world.v_ref, seed);
    let planner = Planner::new(pcfg.clone()).unwrap();
    let mut pstate = PlannerState::new(cfg.planner.horizon);
    let mut history = TrajectoryHistory::new(cfg.planner.prediction_horizon, world.agents.len());
    history.push(world.ego, &world.agents);

    for step in 0..scenario.max_steps {
        let (u, diag, samples) = planner
            .plan_step_detailed(&world.ego, &history, &mut pstate)
            .unwrap();
        if dump_at.contains(&step) {
            println!(
                "--- step {step} ego y={:.2} v={:.2} | mass L/R/N = {:.3}/{:.3}/{:.3} ess={:.0}",
                world.ego.y, world.ego.v, diag.source_mass[0], diag.source_mass[1], diag.source_mass[2], diag.ess
            );
            let mut by_weight: Vec<_> = samples.iter().collect();
            by_weight.sort_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap());
            let ctx = pcfg.lane.relocated(world.ego.y);
            let goal = local_goal(&world.ego, &ctx, pcfg.horizon, pcfg.dt);
            for s in by_weight.iter().take(4) {
                let b = objective(&s.rollout, &s.controls, &s.prediction, &pcfg.weights, &ctx, &goal, &pcfg.geom).unwrap();
                let end = s.rollout.last().unwrap();
                println!(
                    "  w={:.4} {:?} end(y={:5.2} v={:4.2}) cost={:8.2} [lane {:6.2} goalY {:6.2} goalX {:6.2} vel {:5.2} risk {:7.2} steer {:4.2}]",
                    s.weight, s.source, end.y, end.v, s.cost, b.lane, b.goal_y, b.goal_x, b.velocity, b.risk, b.steer
                );
            }
            // best lane-change sample regardless of weight
            if let Some(best_left) = samples
                .iter()
                .filter(|s| s.source == mppi_merge::sampler::SampleSource::SplineLeft)
                .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
            {
                let b = objective(&best_left.rollout, &best_left.controls, &best_left.prediction, &pcfg.weights, &ctx, &goal, &pcfg.geom).unwrap();
                let end = best_left.rollout.last().unwrap();
                println!(
                    "  best-left w={:.5} end(y={:5.2} v={:4.2}) cost={:8.2} [lane {:6.2} goalY {:6.2} goalX {:6.2} vel {:5.2} risk {:7.2}]",
                    best_left.weight, end.y, end.v, best_left.cost, b.lane, b.goal_y, b.goal_x, b.velocity, b.risk
                );
            }
        }
        sim_step(&mut world, u, &mut rng).unwrap();
        history.push(world.ego, &world.agents);
        if (world.ego.y - scenario.target_lane_y()).abs() < 0.3 {
            println!("merged at step {step} (t = {:.1}s)", (step + 1) as f64 * 0.3);
            break;
        }
    }
    println!("final ego y = {:.2}", world.ego.y);
}
