//! Guided Euler integration in both time directions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Condition, Direction, Latent, TimeGrid, VelocityField};
use crate::nti::NullSchedule;

/// Any coordinate beyond this magnitude aborts integration.
pub const EXPLOSION_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub guidance: f64,
    pub steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            guidance: 5.0,
            steps: 50,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config(
                "guidance config needs at least one step".into(),
            ));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub latent: Latent,
    /// Dimension-normalized norm of the guided velocity used for the step
    /// leaving this record; `None` on the final record.
    pub velocity_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub direction: Direction,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len() - 1
    }

    pub fn first(&self) -> &Latent {
        &self.records[0].latent
    }

    pub fn last(&self) -> &Latent {
        &self.records.last().expect("trajectory has records").latent
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Per-step velocity norms (length = steps).
    pub fn velocity_norms(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.velocity_norm)
            .collect()
    }
}

/// `v_u + w (v_c - v_u)`.
pub(crate) fn cfg_combine(v_uncond: &[f64], v_cond: &[f64], w: f64) -> Vec<f64> {
    v_uncond
        .iter()
        .zip(v_cond)
        .map(|(u, c)| u + w * (c - u))
        .collect()
}

/// Classifier-free guided velocity. The unconditional branch is evaluated on
/// `uncond_embedding` (table row 0 or an optimized null embedding).
pub fn guided_velocity(
    field: &VelocityField,
    z: &Latent,
    t: f64,
    cond: &Condition,
    uncond_embedding: &[f64],
    w: f64,
) -> Result<Latent> {
    field.check_inputs(z.as_slice(), &cond.embedding)?;
    field.check_inputs(z.as_slice(), uncond_embedding)?;
    let v_u = field.eval_raw(z.as_slice(), t, uncond_embedding);
    let v_c = field.eval_raw(z.as_slice(), t, &cond.embedding);
    Ok(Latent::from_vec_unchecked(cfg_combine(&v_u, &v_c, w)))
}

/// `z + (t_next - t) v`.
pub fn euler_step(z: &Latent, t: f64, t_next: f64, v: &Latent) -> Latent {
    let dt = t_next - t;
    Latent::from_vec_unchecked(
        z.as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| a + dt * b)
            .collect(),
    )
}

pub(crate) fn check_explosion(z: &Latent, direction: Direction, step: usize, t: f64) -> Result<()> {
    if z.as_slice()
        .iter()
        .any(|v| !v.is_finite() || v.abs() > EXPLOSION_THRESHOLD)
    {
        return Err(Error::LatentExplosion {
            direction: direction.as_str(),
            step,
            t,
        });
    }
    Ok(())
}

pub(crate) fn check_finite_velocity(
    v: &Latent,
    direction: Direction,
    step: usize,
    t: f64,
) -> Result<()> {
    if v.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::LatentExplosion {
            direction: direction.as_str(),
            step,
            t,
        });
    }
    Ok(())
}

fn integrate<'a>(
    field: &VelocityField,
    start: &Latent,
    cond: &Condition,
    w: f64,
    grid: &TimeGrid,
    uncond_for_step: impl Fn(usize) -> &'a [f64],
) -> Result<Trajectory> {
    field.check_inputs(start.as_slice(), &cond.embedding)?;
    let direction = grid.direction();
    check_explosion(start, direction, 0, grid.points()[0])?;
    let mut records = Vec::with_capacity(grid.steps() + 1);
    let mut z = start.clone();
    for (i, (t, t_next)) in grid.intervals().enumerate() {
        let v = guided_velocity(field, &z, t, cond, uncond_for_step(i), w)?;
        check_finite_velocity(&v, direction, i, t)?;
        let next = euler_step(&z, t, t_next, &v);
        check_explosion(&next, direction, i + 1, t_next)?;
        records.push(TrajectoryRecord {
            t,
            latent: std::mem::replace(&mut z, next),
            velocity_norm: Some(v.normalized_norm()),
        });
    }
    records.push(TrajectoryRecord {
        t: *grid.points().last().unwrap(),
        latent: z,
        velocity_norm: None,
    });
    Ok(Trajectory { direction, records })
}

/// Integrates `t: 0 -> 1` from a data latent to its noise latent.
pub fn invert(
    field: &VelocityField,
    z0: &Latent,
    cond: &Condition,
    cfg: &GuidanceConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = TimeGrid::uniform(cfg.steps, Direction::Forward)?;
    let null = field.null_embedding();
    integrate(field, z0, cond, cfg.guidance, &grid, |_| null)
}

/// Integrates `t: 1 -> 0`. With a null schedule, step `i` uses its `i`-th
/// embedding in the unconditional slot; otherwise table row 0.
pub fn sample(
    field: &VelocityField,
    z1: &Latent,
    cond: &Condition,
    cfg: &GuidanceConfig,
    null_schedule: Option<&NullSchedule>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = TimeGrid::uniform(cfg.steps, Direction::Backward)?;
    match null_schedule {
        Some(schedule) => {
            if schedule.len() != cfg.steps {
                return Err(Error::shape("null schedule", cfg.steps, schedule.len()));
            }
            integrate(field, z1, cond, cfg.guidance, &grid, |i| {
                schedule.embeddings[i].as_slice()
            })
        }
        None => {
            let null = field.null_embedding();
            integrate(field, z1, cond, cfg.guidance, &grid, |_| null)
        }
    }
}

/// Writes `(run_id, direction, step, t, velocity_norm)` rows. The final record
/// of each trajectory has an empty norm cell.
pub fn write_trajectory_csv(path: &Path, runs: &[(&str, &Trajectory)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run_id", "direction", "step", "t", "velocity_norm"])?;
    for (run_id, traj) in runs {
        for (step, rec) in traj.records.iter().enumerate() {
            w.write_record([
                run_id.to_string(),
                traj.direction.as_str().to_string(),
                step.to_string(),
                rec.t.to_string(),
                rec.velocity_norm.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct LatentDumpEntry<'a> {
    run_id: &'a str,
    step: usize,
    t: f64,
    latent: &'a [f64],
}

/// Sidecar JSON with one entry per `(run_id, step)`.
pub fn write_latent_dump(path: &Path, runs: &[(&str, &Trajectory)]) -> Result<()> {
    let entries: Vec<LatentDumpEntry<'_>> = runs
        .iter()
        .flat_map(|(run_id, traj)| {
            traj.records
                .iter()
                .enumerate()
                .map(move |(step, rec)| LatentDumpEntry {
                    run_id,
                    step,
                    t: rec.t,
                    latent: rec.latent.as_slice(),
                })
        })
        .collect();
    let text = serde_json::to_string_pretty(&entries)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
