//! Null-embedding optimization along a recorded inversion trajectory.
//!
//! Sampling runs `t: 1 -> 0` from the inversion's noise latent. At each step
//! the unconditional embedding is tuned with a few Adam iterations so that
//! the guided Euler prediction lands on the reference latent, then the step
//! is taken with the tuned embedding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_loss_wrt_embedding, step_loss, AdamState, StepObjective};
use crate::checkpoint::{read_container, write_container};
use crate::error::{Error, Result};
use crate::field::{Condition, Direction, Latent, VelocityField};
use crate::sampler::{
    check_explosion, check_finite_velocity, euler_step, guided_velocity, Trajectory,
    TrajectoryRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtiConfig {
    pub inner_steps: usize,
    pub lr: f64,
    pub guidance: f64,
}

impl Default for NtiConfig {
    fn default() -> Self {
        NtiConfig {
            inner_steps: 10,
            lr: 1e-4,
            guidance: 5.0,
        }
    }
}

impl NtiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "NTI learning rate {} must be positive",
                self.lr
            )));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        Ok(())
    }
}

/// Per-step optimized unconditional embeddings, in sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSchedule {
    pub embeddings: Vec<Vec<f64>>,
    /// Step loss before the inner optimization.
    pub initial_losses: Vec<f64>,
    /// Step loss after the inner optimization.
    pub final_losses: Vec<f64>,
}

impl NullSchedule {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ScheduleHeader {
            kind: SCHEDULE_KIND.into(),
            steps: self.len(),
            cond_dim: self.embeddings.first().map_or(0, Vec::len),
        };
        let mut values: Vec<f64> = self.embeddings.iter().flatten().copied().collect();
        values.extend_from_slice(&self.initial_losses);
        values.extend_from_slice(&self.final_losses);
        write_container(path, &header, &values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, values): (ScheduleHeader, Vec<f64>) = read_container(path)?;
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if header.kind != SCHEDULE_KIND {
            return Err(corrupt(format!(
                "expected a null schedule, found '{}'",
                header.kind
            )));
        }
        let n = header.steps;
        if values.len() != n * (header.cond_dim + 2) {
            return Err(corrupt("value block does not match header shape".into()));
        }
        let (emb, losses) = values.split_at(n * header.cond_dim);
        let embeddings = if header.cond_dim == 0 {
            vec![Vec::new(); n]
        } else {
            emb.chunks_exact(header.cond_dim)
                .map(<[f64]>::to_vec)
                .collect()
        };
        Ok(NullSchedule {
            embeddings,
            initial_losses: losses[..n].to_vec(),
            final_losses: losses[n..].to_vec(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleHeader {
    kind: String,
    steps: usize,
    cond_dim: usize,
}

const SCHEDULE_KIND: &str = "null_schedule";

#[derive(Debug, Clone)]
pub struct NtiOutcome {
    pub schedule: NullSchedule,
    pub reconstruction: Latent,
    pub trajectory: Trajectory,
}

/// Runs null-embedding optimization against a forward (inversion)
/// trajectory. `cond` occupies the conditional slot throughout.
pub fn nti_optimize(
    field: &VelocityField,
    reference: &Trajectory,
    cond: &Condition,
    config: &NtiConfig,
) -> Result<NtiOutcome> {
    config.validate()?;
    if reference.direction != Direction::Forward {
        return Err(Error::Config(
            "NTI reference must be an inversion trajectory".into(),
        ));
    }
    let n = reference.steps();
    if n == 0 {
        return Err(Error::Config("NTI reference has no steps".into()));
    }
    // Sampling step i goes from reference record n - i to n - i - 1.
    let at = |i: usize| &reference.records[n - i];

    let mut z = reference.last().clone();
    let mut embedding = field.null_embedding().to_vec();
    let mut schedule = NullSchedule {
        embeddings: Vec::with_capacity(n),
        initial_losses: Vec::with_capacity(n),
        final_losses: Vec::with_capacity(n),
    };
    let mut records = Vec::with_capacity(n + 1);

    for i in 0..n {
        let t = at(i).t;
        let t_next = at(i + 1).t;
        let objective = StepObjective {
            cond_embedding: &cond.embedding,
            t_next,
            target: &at(i + 1).latent,
            guidance: config.guidance,
        };
        let mut adam = AdamState::new(embedding.len(), config.lr);
        let initial = step_loss(field, &z, t, &embedding, &objective)
            .map_err(|_| Error::Nti { step: i, inner: 0 })?;
        for inner in 0..config.inner_steps {
            let (_, grad) = grad_loss_wrt_embedding(field, &z, t, &embedding, &objective)
                .map_err(|_| Error::Nti { step: i, inner })?;
            adam.step(&mut embedding, &grad)?;
        }
        let last = if config.inner_steps == 0 {
            initial
        } else {
            step_loss(field, &z, t, &embedding, &objective).map_err(|_| Error::Nti {
                step: i,
                inner: config.inner_steps,
            })?
        };

        let v = guided_velocity(field, &z, t, cond, &embedding, config.guidance)?;
        check_finite_velocity(&v, Direction::Backward, i, t)?;
        let next = euler_step(&z, t, t_next, &v);
        check_explosion(&next, Direction::Backward, i + 1, t_next)?;
        records.push(TrajectoryRecord {
            t,
            latent: std::mem::replace(&mut z, next),
            velocity_norm: Some(v.normalized_norm()),
        });
        schedule.embeddings.push(embedding.clone());
        schedule.initial_losses.push(initial);
        schedule.final_losses.push(last);
    }
    records.push(TrajectoryRecord {
        t: at(n).t,
        latent: z.clone(),
        velocity_norm: None,
    });
    Ok(NtiOutcome {
        schedule,
        reconstruction: z,
        trajectory: Trajectory {
            direction: Direction::Backward,
            records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldSpec, InitOptions};
    use crate::sampler::{invert, sample, GuidanceConfig};

    fn small_field(seed: u64) -> VelocityField {
        VelocityField::init(
            FieldSpec {
                latent_dim: 3,
                cond_dim: 4,
                vocab: 4,
                hidden: vec![8, 8],
            },
            seed,
            InitOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_inner_steps_equals_plain_sampling() {
        let field = small_field(1);
        let cfg = GuidanceConfig {
            guidance: 5.0,
            steps: 12,
        };
        let z0 = Latent::new(vec![0.5, -0.3, 1.1]).unwrap();
        let cond = field.embed_condition(2).unwrap();
        let reference = invert(&field, &z0, &cond, &cfg).unwrap();
        let config = NtiConfig {
            inner_steps: 0,
            ..NtiConfig::default()
        };
        let out = nti_optimize(&field, &reference, &cond, &config).unwrap();
        let plain = sample(&field, reference.last(), &cond, &cfg, None).unwrap();
        assert_eq!(out.trajectory, plain);
        assert_eq!(out.schedule.len(), 12);
        assert_eq!(out.schedule.initial_losses, out.schedule.final_losses);
    }

    #[test]
    fn schedule_length_matches_grid() {
        let field = small_field(2);
        let z0 = Latent::new(vec![0.5, -0.3, 1.1]).unwrap();
        let cond = field.empty_condition();
        for steps in [1, 3, 9] {
            let cfg = GuidanceConfig {
                guidance: 5.0,
                steps,
            };
            let reference = invert(&field, &z0, &cond, &cfg).unwrap();
            let out = nti_optimize(&field, &reference, &cond, &NtiConfig::default()).unwrap();
            assert_eq!(out.schedule.len(), steps);
            assert_eq!(out.trajectory.records.len(), steps + 1);
        }
    }

    #[test]
    fn optimized_schedule_reproduces_reconstruction() {
        let field = small_field(3);
        let cfg = GuidanceConfig {
            guidance: 5.0,
            steps: 10,
        };
        let z0 = Latent::new(vec![0.5, -0.3, 1.1]).unwrap();
        let cond = field.embed_condition(1).unwrap();
        let reference = invert(&field, &z0, &cond, &cfg).unwrap();
        let config = NtiConfig {
            lr: 1e-2,
            ..NtiConfig::default()
        };
        let out = nti_optimize(&field, &reference, &cond, &config).unwrap();
        let replay = sample(&field, reference.last(), &cond, &cfg, Some(&out.schedule)).unwrap();
        assert_eq!(replay.last(), &out.reconstruction);
    }

    #[test]
    fn schedule_round_trips_through_file() {
        let schedule = NullSchedule {
            embeddings: vec![vec![0.1, -0.2], vec![1e-300, 3.5]],
            initial_losses: vec![1.0, 2.0],
            final_losses: vec![0.5, 0.25],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("null_schedule.finv");
        schedule.save(&path).unwrap();
        assert_eq!(NullSchedule::load(&path).unwrap(), schedule);
    }

    #[test]
    fn rejects_sampling_reference() {
        let field = small_field(1);
        let cfg = GuidanceConfig {
            guidance: 5.0,
            steps: 4,
        };
        let z = Latent::new(vec![0.5, -0.3, 1.1]).unwrap();
        let traj = sample(&field, &z, &field.empty_condition(), &cfg, None).unwrap();
        assert!(nti_optimize(
            &field,
            &traj,
            &field.empty_condition(),
            &NtiConfig::default()
        )
        .is_err());
    }
}
