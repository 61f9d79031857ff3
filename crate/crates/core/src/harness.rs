//! Experiment harness: seeded Monte-Carlo batches over scenario x predictor
//! x prior grids, per-episode metrics, JSON-lines episode logs and a
//! deterministic summary.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, CellSpec};
use crate::cost::{state_stage_terms, CostWeights, LaneContext};
use crate::dynamics::ControlInput;
use crate::planner::{Planner, PlannerState};
use crate::prediction::TrajectoryHistory;
use crate::traffic::{
    detect_collision, sim_step, EpisodeRecord, Outcome, Snapshot, StepDiag, StepRecord, World,
};
use crate::{mix_seed, Error, Result};

/// Lateral tolerance and dwell defining a completed merge.
pub const MERGE_TOLERANCE: f64 = 0.3;
pub const MERGE_WINDOW: usize = 5;

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Metrics of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub outcome: Outcome,
    pub steps: usize,
    /// Realized objective excluding the risk term, averaged per step.
    pub planning_cost: f64,
    /// Seconds until the merge window opened; absent on timeout/collision.
    pub merge_time: Option<f64>,
    pub mean_abs_accel: f64,
    /// Mean |delta_k - delta_{k-1}| / dt.
    pub mean_abs_steer_rate: f64,
    /// Mean per-step planning wall time (s); non-deterministic.
    pub plan_time_mean: f64,
}

/// Deterministic per-cell aggregate written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub planning_cost: MeanStd,
    /// Over successful episodes only.
    pub merge_time: MeanStd,
    pub merge_count: usize,
    pub mean_abs_accel: MeanStd,
    pub mean_abs_steer_rate: MeanStd,
}

/// Wall-time aggregate, written to `timing.json` so the summary stays
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub plan_time: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub spec: CellSpec,
    pub metrics: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub base_seed: u64,
    pub runs_per_cell: usize,
    pub cells: Vec<CellSummary>,
}

/// One line of an episode JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
pub enum RecordLine {
    Meta {
        cell: String,
        run: usize,
        seed: u64,
        v_ref: f64,
        dt: f64,
        initial: Snapshot,
    },
    Step {
        i: usize,
        control: ControlInput,
        after: Snapshot,
        diag: StepDiag,
    },
    End {
        outcome: Outcome,
        metrics: EpisodeMetrics,
    },
}

/// Run one closed-loop episode: plan, step the world, log, and stop on
/// success, collision, or timeout.
pub fn run_episode(cfg: &AppConfig, cell: &CellSpec, seed: u64) -> Result<EpisodeRecord> {
    let scenario = cfg.scenario(cell.behavior, seed);
    let geom = cfg.geometry();
    let bounds = cfg.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::from_scenario(&scenario, &geom, &bounds, &mut rng)?;

    let planner_cfg = cfg.planner_config(cell.predictor, cell.spline_prior, world.v_ref, seed);
    let planner = Planner::new(planner_cfg)?;
    let mut pstate = PlannerState::new(cfg.planner.horizon);

    let mut history = TrajectoryHistory::new(cfg.planner.prediction_horizon.max(1), world.agents.len());
    history.push(world.ego, &world.agents);

    let target_y = scenario.target_lane_y();
    let initial = Snapshot {
        ego: world.ego,
        agents: world.agents.clone(),
    };
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut streak = usize::from((world.ego.y - target_y).abs() < MERGE_TOLERANCE);
    let mut outcome = Outcome::Timeout;
    if streak >= MERGE_WINDOW {
        outcome = Outcome::Success { merge_step: 0 };
    } else {
        for step_idx in 0..scenario.max_steps {
            let started = Instant::now();
            let (control, diag) = planner.plan_step(&world.ego, &history, &mut pstate)?;
            let plan_time = started.elapsed().as_secs_f64();
            sim_step(&mut world, control, &mut rng)?;
            history.push(world.ego, &world.agents);
            steps.push(StepRecord {
                control,
                after: Snapshot {
                    ego: world.ego,
                    agents: world.agents.clone(),
                },
                diag: StepDiag {
                    cost_best: diag.cost_min,
                    cost_weighted: diag.cost_weighted,
                    ess: diag.ess,
                    degenerate: diag.degenerate,
                    plan_time,
                },
            });
            if detect_collision(&world.ego, &world.agents, &geom) {
                outcome = Outcome::Collision { step: step_idx + 1 };
                break;
            }
            if (world.ego.y - target_y).abs() < MERGE_TOLERANCE {
                streak += 1;
            } else {
                streak = 0;
            }
            if streak >= MERGE_WINDOW {
                // the window's first state index; state k is reached after k steps
                outcome = Outcome::Success {
                    merge_step: step_idx + 2 - MERGE_WINDOW,
                };
                break;
            }
        }
    }

    Ok(EpisodeRecord {
        seed,
        v_ref: world.v_ref,
        dt: scenario.dt,
        initial,
        steps,
        outcome,
    })
}

/// Per-episode metrics from a record: realized per-step planning cost
/// (objective terms minus risk), merge time, and comfort statistics.
pub fn compute_metrics(
    record: &EpisodeRecord,
    weights: &CostWeights,
    lane_base: &LaneContext,
    horizon: usize,
) -> EpisodeMetrics {
    let dt = record.dt;
    let lane_base = LaneContext {
        v_ref: record.v_ref,
        ..*lane_base
    };
    let mut cost_total = 0.0;
    let mut abs_accel = 0.0;
    let mut abs_steer_rate = 0.0;
    let mut plan_time = 0.0;
    let mut prev_ego = record.initial.ego;
    let mut prev_control: Option<ControlInput> = None;
    let lanes = lane_base.lanes();
    for step in &record.steps {
        // context and local goal as the planner saw them at decision time
        let ctx = lane_base.relocated(prev_ego.y);
        let goal = crate::cost::local_goal(&prev_ego, &ctx, horizon, dt);
        let stage = state_stage_terms(&step.after.ego, weights, &ctx, &goal, &lanes);
        cost_total += stage.goal_x + stage.goal_y + stage.lane + stage.velocity + stage.boundary;
        cost_total += weights.lambda_steer * step.control.delta.powi(2)
            + weights.lambda_accel * step.control.a.powi(2);
        if let Some(prev) = prev_control {
            cost_total += weights.lambda_steer_rate * (step.control.delta - prev.delta).powi(2)
                + weights.lambda_jerk * (step.control.a - prev.a).powi(2);
            abs_steer_rate += (step.control.delta - prev.delta).abs() / dt;
        }
        abs_accel += step.control.a.abs();
        plan_time += step.diag.plan_time;
        prev_ego = step.after.ego;
        prev_control = Some(step.control);
    }
    let n = record.steps.len();
    let merge_time = match record.outcome {
        Outcome::Success { merge_step } => Some(merge_step as f64 * dt),
        _ => None,
    };
    EpisodeMetrics {
        outcome: record.outcome,
        steps: n,
        planning_cost: if n > 0 { cost_total / n as f64 } else { 0.0 },
        merge_time,
        mean_abs_accel: if n > 0 { abs_accel / n as f64 } else { 0.0 },
        mean_abs_steer_rate: if n > 1 {
            abs_steer_rate / (n - 1) as f64
        } else {
            0.0
        },
        plan_time_mean: if n > 0 { plan_time / n as f64 } else { 0.0 },
    }
}

/// Aggregate one cell's episode metrics (in run order).
pub fn summarize(metrics: &[EpisodeMetrics]) -> (MetricsSummary, TimingSummary) {
    let runs = metrics.len();
    let count = |f: &dyn Fn(&EpisodeMetrics) -> bool| metrics.iter().filter(|m| f(m)).count();
    let successes = count(&|m| matches!(m.outcome, Outcome::Success { .. }));
    let collisions = count(&|m| matches!(m.outcome, Outcome::Collision { .. }));
    let timeouts = count(&|m| matches!(m.outcome, Outcome::Timeout));
    let pct = |c: usize| 100.0 * c as f64 / runs.max(1) as f64;
    let merge_times: Vec<f64> = metrics.iter().filter_map(|m| m.merge_time).collect();
    let summary = MetricsSummary {
        runs,
        success_rate: pct(successes),
        collision_rate: pct(collisions),
        timeout_rate: pct(timeouts),
        planning_cost: MeanStd::from_values(
            &metrics.iter().map(|m| m.planning_cost).collect::<Vec<_>>(),
        ),
        merge_time: MeanStd::from_values(&merge_times),
        merge_count: merge_times.len(),
        mean_abs_accel: MeanStd::from_values(
            &metrics.iter().map(|m| m.mean_abs_accel).collect::<Vec<_>>(),
        ),
        mean_abs_steer_rate: MeanStd::from_values(
            &metrics.iter().map(|m| m.mean_abs_steer_rate).collect::<Vec<_>>(),
        ),
    };
    let timing = TimingSummary {
        plan_time: MeanStd::from_values(
            &metrics.iter().map(|m| m.plan_time_mean).collect::<Vec<_>>(),
        ),
    };
    (summary, timing)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn episode_path(dir: &Path, cell: &str, run: usize) -> PathBuf {
    dir.join(format!("episode_{cell}_{run:03}.jsonl"))
}

pub fn write_episode(
    path: &Path,
    cell: &str,
    run: usize,
    record: &EpisodeRecord,
    metrics: &EpisodeMetrics,
) -> Result<()> {
    let mut out = Vec::new();
    let meta = RecordLine::Meta {
        cell: cell.to_string(),
        run,
        seed: record.seed,
        v_ref: record.v_ref,
        dt: record.dt,
        initial: record.initial.clone(),
    };
    let to_line =
        |l: &RecordLine| serde_json::to_string(l).map_err(|e| Error::Serialization(e.to_string()));
    out.extend_from_slice(to_line(&meta)?.as_bytes());
    out.push(b'\n');
    for (i, step) in record.steps.iter().enumerate() {
        let line = RecordLine::Step {
            i,
            control: step.control,
            after: step.after.clone(),
            diag: step.diag,
        };
        out.extend_from_slice(to_line(&line)?.as_bytes());
        out.push(b'\n');
    }
    let end = RecordLine::End {
        outcome: record.outcome,
        metrics: *metrics,
    };
    out.extend_from_slice(to_line(&end)?.as_bytes());
    out.push(b'\n');
    write_atomic(path, &out)
}

/// Episode file parsed back into a record plus its metadata.
pub struct StoredEpisode {
    pub cell: String,
    pub run: usize,
    pub record: EpisodeRecord,
    pub metrics: EpisodeMetrics,
}

pub fn read_episode(path: &Path) -> Result<StoredEpisode> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut cell = String::new();
    let mut run = 0;
    let mut record = EpisodeRecord {
        seed: 0,
        v_ref: 0.0,
        dt: 0.0,
        initial: Snapshot {
            ego: crate::dynamics::VehicleState::new(0.0, 0.0, 0.0, 0.0),
            agents: vec![],
        },
        steps: vec![],
        outcome: Outcome::Timeout,
    };
    let mut metrics: Option<EpisodeMetrics> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::Serialization(e.to_string()))?;
        match parsed {
            RecordLine::Meta {
                cell: c,
                run: r,
                seed,
                v_ref,
                dt,
                initial,
            } => {
                cell = c;
                run = r;
                record.seed = seed;
                record.v_ref = v_ref;
                record.dt = dt;
                record.initial = initial;
            }
            RecordLine::Step {
                control,
                after,
                diag,
                ..
            } => {
                record.steps.push(StepRecord {
                    control,
                    after,
                    diag,
                });
            }
            RecordLine::End { outcome, metrics: m } => {
                record.outcome = outcome;
                metrics = Some(m);
            }
        }
    }
    let metrics = metrics.ok_or_else(|| Error::Serialization("episode file missing end line".into()))?;
    Ok(StoredEpisode {
        cell,
        run,
        record,
        metrics,
    })
}

/// Run the full experiment grid. Episodes run in parallel with per-run seeds
/// derived from the base seed, so the summary is identical regardless of
/// batch parallelism. Writes `config_echo.toml`, per-episode JSONL files,
/// `summary.json` (deterministic) and `timing.json` (wall times).
pub fn run_experiment(cfg: &AppConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out_dir = &cfg.experiment.out_dir;
    fs::create_dir_all(out_dir)?;
    write_atomic(
        &out_dir.join("config_echo.toml"),
        cfg.to_toml_string()?.as_bytes(),
    )?;

    let cells = cfg.cells();
    let runs = cfg.experiment.runs;
    let base_seed = cfg.experiment.base_seed;
    let lane_base = base_lane_context(cfg);

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|ci| (0..runs).map(move |r| (ci, r)))
        .collect();
    let episodes: Vec<(usize, usize, EpisodeMetrics)> = jobs
        .into_par_iter()
        .map(|(ci, run)| -> Result<(usize, usize, EpisodeMetrics)> {
            let cell = &cells[ci];
            let seed = mix_seed(mix_seed(base_seed, ci as u64), run as u64);
            let record = run_episode(cfg, cell, seed)?;
            let metrics = compute_metrics(&record, &cfg.cost, &lane_base, cfg.planner.horizon);
            write_episode(
                &episode_path(out_dir, &cell.name(), run),
                &cell.name(),
                run,
                &record,
                &metrics,
            )?;
            Ok((ci, run, metrics))
        })
        .collect::<Result<Vec<_>>>()?;

    // aggregate in (cell, run) order regardless of completion order
    let mut per_cell: Vec<Vec<Option<EpisodeMetrics>>> = vec![vec![None; runs]; cells.len()];
    for (ci, run, m) in episodes {
        per_cell[ci][run] = Some(m);
    }
    let mut summaries = Vec::with_capacity(cells.len());
    let mut timings = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let ms: Vec<EpisodeMetrics> = per_cell[ci].iter().map(|m| m.expect("all runs done")).collect();
        let (summary, timing) = summarize(&ms);
        summaries.push(CellSummary {
            cell: cell.name(),
            spec: *cell,
            metrics: summary,
        });
        timings.push((cell.name(), timing));
    }

    let experiment = ExperimentSummary {
        base_seed,
        runs_per_cell: runs,
        cells: summaries,
    };
    let summary_json = serde_json::to_string_pretty(&experiment)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    write_atomic(&out_dir.join("summary.json"), summary_json.as_bytes())?;
    let timing_json = serde_json::to_string_pretty(
        &timings
            .iter()
            .map(|(cell, t)| serde_json::json!({ "cell": cell, "plan_time": t.plan_time }))
            .collect::<Vec<_>>(),
    )
    .map_err(|e| Error::Serialization(e.to_string()))?;
    write_atomic(&out_dir.join("timing.json"), timing_json.as_bytes())?;
    Ok(experiment)
}

/// The static part of the lane context (the per-step `y_lane` snapping and
/// the episode `v_ref` are applied where they are known).
pub fn base_lane_context(cfg: &AppConfig) -> LaneContext {
    let t = &cfg.traffic;
    LaneContext {
        y_lane: t.lanes[t.ego_lane],
        y_target_lane: t.lanes[t.target_lane],
        y_boundary: (t.boundaries[0], t.boundaries[1]),
        v_ref: t.v_ref,
        lane_width: t.lane_width,
    }
}

/// Recompute per-cell summaries from the episode files on disk; the stored
/// summary must always be derivable from the records.
pub fn recompute_summary(dir: &Path) -> Result<ExperimentSummary> {
    let cfg = AppConfig::load(&dir.join("config_echo.toml"))?;
    let lane_base = base_lane_context(&cfg);
    let mut stored: Vec<StoredEpisode> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("episode_") && name.ends_with(".jsonl") {
            stored.push(read_episode(&path)?);
        }
    }
    let cells = cfg.cells();
    let runs = cfg.experiment.runs;
    let mut summaries = Vec::new();
    for cell in &cells {
        let name = cell.name();
        let mut ms: Vec<(usize, EpisodeMetrics)> = stored
            .iter()
            .filter(|s| s.cell == name)
            .map(|s| {
                (
                    s.run,
                    compute_metrics(&s.record, &cfg.cost, &lane_base, cfg.planner.horizon),
                )
            })
            .collect();
        ms.sort_by_key(|(run, _)| *run);
        let metrics: Vec<EpisodeMetrics> = ms.into_iter().map(|(_, m)| m).collect();
        if metrics.len() != runs {
            return Err(Error::config(format!(
                "cell {name}: found {} episode files, expected {runs}",
                metrics.len()
            )));
        }
        let (summary, _) = summarize(&metrics);
        summaries.push(CellSummary {
            cell: name,
            spec: *cell,
            metrics: summary,
        });
    }
    Ok(ExperimentSummary {
        base_seed: cfg.experiment.base_seed,
        runs_per_cell: runs,
        cells: summaries,
    })
}

/// Print a per-step console trace of one stored episode.
pub fn replay(path: &Path) -> Result<()> {
    let stored = read_episode(path)?;
    println!(
        "episode {} run {} seed {} v_ref {:.3}",
        stored.cell, stored.run, stored.record.seed, stored.record.v_ref
    );
    let fmt_state = |s: &crate::dynamics::VehicleState| {
        format!("x {:7.2} y {:5.2} psi {:6.3} v {:5.2}", s.x, s.y, s.psi, s.v)
    };
    println!("  t 0.0s ego [{}]", fmt_state(&stored.record.initial.ego));
    for (i, step) in stored.record.steps.iter().enumerate() {
        let t = (i + 1) as f64 * stored.record.dt;
        println!(
            "  t {t:5.1}s ego [{}] u [{:6.3} {:6.3}] ess {:7.1} cost {:8.3}",
            fmt_state(&step.after.ego),
            step.control.delta,
            step.control.a,
            step.diag.ess,
            step.diag.cost_weighted,
        );
    }
    println!("outcome: {:?}", stored.record.outcome);
    println!(
        "metrics: cost {:.3} merge {:?} |a| {:.3} |d'| {:.3}",
        stored.metrics.planning_cost,
        stored.metrics.merge_time,
        stored.metrics.mean_abs_accel,
        stored.metrics.mean_abs_steer_rate
    );
    Ok(())
}
