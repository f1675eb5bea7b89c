//! Diversity, reconstruction and velocity-norm measurements.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ConditionKind, Latent};
use crate::sampler::Trajectory;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean of `1 - cos(v_i, v_j)` over all ordered pairs `i != j`.
pub fn avg_pairwise_cosine_distance(vectors: &[Vec<f64>]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Metric(format!("need at least 2 vectors, got {n}")));
    }
    let dim = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::shape("embedding", dim, v.len()));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Metric(format!("vector {i} has zero norm")));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += 1.0 - cosine(&vectors[i], &vectors[j]);
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub anchor: String,
    pub delta_vis: f64,
    pub delta_txt: f64,
    /// `delta_vis / delta_txt`; absent when the prompts are degenerate.
    pub ratio: Option<f64>,
    pub n: usize,
    pub degenerate_prompts: bool,
}

/// Output diversity relative to prompt diversity. Entry `i` of both lists
/// belongs to the same generated sample.
pub fn diversity_ratio(
    anchor: &str,
    vis_embeddings: &[Vec<f64>],
    txt_embeddings: &[Vec<f64>],
) -> Result<DiversityReport> {
    if vis_embeddings.len() != txt_embeddings.len() {
        return Err(Error::shape(
            "text embedding list",
            vis_embeddings.len(),
            txt_embeddings.len(),
        ));
    }
    let delta_vis = avg_pairwise_cosine_distance(vis_embeddings)?;
    let delta_txt = avg_pairwise_cosine_distance(txt_embeddings)?;
    let degenerate = delta_txt <= f64::EPSILON;
    Ok(DiversityReport {
        anchor: anchor.to_string(),
        delta_vis,
        delta_txt,
        ratio: (!degenerate).then(|| delta_vis / delta_txt),
        n: vis_embeddings.len(),
        degenerate_prompts: degenerate,
    })
}

/// Mean absolute coordinate difference.
pub fn l1_reconstruction(x_hat: &Latent, x_ref: &Latent) -> Result<f64> {
    if x_hat.dim() != x_ref.dim() {
        return Err(Error::shape("reconstruction", x_ref.dim(), x_hat.dim()));
    }
    Ok(x_hat
        .as_slice()
        .iter()
        .zip(x_ref.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x_hat.dim() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub trajectories: usize,
}

/// Velocity-norm statistics per condition kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormTraceStats {
    pub groups: BTreeMap<ConditionKind, NormSummary>,
}

impl NormTraceStats {
    pub fn get(&self, kind: ConditionKind) -> Option<&NormSummary> {
        self.groups.get(&kind)
    }
}

/// Summarizes the per-step normalized velocity norms of each group.
pub fn norm_trace_stats(groups: &[(ConditionKind, Vec<&Trajectory>)]) -> Result<NormTraceStats> {
    let mut out = BTreeMap::new();
    for (kind, trajectories) in groups {
        if trajectories.is_empty() {
            return Err(Error::Metric(format!(
                "no trajectories for kind {}",
                kind.as_str()
            )));
        }
        let mut norms: Vec<f64> = trajectories
            .iter()
            .flat_map(|t| t.velocity_norms())
            .collect();
        if norms.is_empty() {
            return Err(Error::Metric(format!(
                "no velocity norms for kind {}",
                kind.as_str()
            )));
        }
        norms.sort_by(f64::total_cmp);
        let n = norms.len();
        let median = if n % 2 == 1 {
            norms[n / 2]
        } else {
            0.5 * (norms[n / 2 - 1] + norms[n / 2])
        };
        out.insert(
            *kind,
            NormSummary {
                mean: norms.iter().sum::<f64>() / n as f64,
                median,
                max: norms[n - 1],
                trajectories: trajectories.len(),
            },
        );
    }
    Ok(NormTraceStats { groups: out })
}

/// Mean and sample standard deviation; `(NaN, NaN)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldSpec, VelocityField};
    use crate::sampler::{invert, GuidanceConfig};
    use proptest::prelude::*;

    #[test]
    fn cosine_distance_hand_cases() {
        let same = vec![vec![0.3, -1.2, 2.0]; 4];
        assert_eq!(avg_pairwise_cosine_distance(&same).unwrap(), 0.0);
        let anti = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(avg_pairwise_cosine_distance(&anti).unwrap(), 2.0);
        let ortho = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(avg_pairwise_cosine_distance(&ortho).unwrap(), 1.0);
    }

    #[test]
    fn cosine_distance_guards() {
        assert!(matches!(
            avg_pairwise_cosine_distance(&[vec![1.0, 0.0]]),
            Err(Error::Metric(_))
        ));
        assert!(matches!(
            avg_pairwise_cosine_distance(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn sink_signature_has_zero_ratio() {
        let vis = vec![vec![1.0, 2.0, 3.0]; 3];
        let txt = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let r = diversity_ratio("a", &vis, &txt).unwrap();
        assert_eq!(r.delta_vis, 0.0);
        assert_eq!(r.ratio, Some(0.0));
    }

    #[test]
    fn degenerate_prompts_have_no_ratio() {
        let vis = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let txt = vec![vec![0.5, 0.5]; 2];
        let r = diversity_ratio("a", &vis, &txt).unwrap();
        assert_eq!(r.delta_txt, 0.0);
        assert!(r.ratio.is_none());
        assert!(r.degenerate_prompts);
    }

    #[test]
    fn ratio_of_table_means() {
        // Only the ratio of the two means is computed; 0.196 / 0.377.
        let r = 0.196f64 / 0.377;
        assert!((r - 0.520).abs() < 5e-4);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            diversity_ratio("a", &a, &b),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn l1_cases() {
        let a = Latent::new(vec![1.0, 1.0]).unwrap();
        let b = Latent::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(l1_reconstruction(&a, &b).unwrap(), 1.0);
        assert_eq!(l1_reconstruction(&a, &a).unwrap(), 0.0);
        assert!(l1_reconstruction(&a, &Latent::zeros(3)).is_err());
    }

    #[test]
    fn constant_field_norm_stats() {
        let spec = FieldSpec {
            latent_dim: 4,
            cond_dim: 2,
            vocab: 3,
            hidden: vec![3],
        };
        let c = [1.0, -2.0, 0.5, 0.0];
        let field = VelocityField::constant(spec, &c).unwrap();
        let cfg = GuidanceConfig {
            guidance: 5.0,
            steps: 6,
        };
        let z = Latent::zeros(4);
        let t1 = invert(&field, &z, &field.empty_condition(), &cfg).unwrap();
        let t2 = invert(&field, &z, &field.embed_condition(2).unwrap(), &cfg).unwrap();
        let stats = norm_trace_stats(&[
            (ConditionKind::Empty, vec![&t1]),
            (ConditionKind::Ood, vec![&t2, &t1]),
        ])
        .unwrap();
        let expected = (1.0f64 + 4.0 + 0.25).sqrt() / 2.0;
        for s in stats.groups.values() {
            for v in [s.mean, s.median, s.max] {
                assert!((v - expected).abs() < 1e-12);
            }
        }
        assert!(norm_trace_stats(&[(ConditionKind::True, vec![])]).is_err());
    }

    #[test]
    fn single_trajectory_stats_are_its_own() {
        let spec = FieldSpec {
            latent_dim: 2,
            cond_dim: 2,
            vocab: 2,
            hidden: vec![5],
        };
        let field = VelocityField::init(spec, 8, Default::default()).unwrap();
        let cfg = GuidanceConfig {
            guidance: 3.0,
            steps: 5,
        };
        let traj = invert(
            &field,
            &Latent::new(vec![0.4, 0.9]).unwrap(),
            &field.embed_condition(1).unwrap(),
            &cfg,
        )
        .unwrap();
        let norms = traj.velocity_norms();
        let stats = norm_trace_stats(&[(ConditionKind::True, vec![&traj])]).unwrap();
        let s = stats.get(ConditionKind::True).unwrap();
        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(s.median, sorted[2]);
        assert_eq!(s.max, sorted[4]);
        assert!((s.mean - norms.iter().sum::<f64>() / 5.0).abs() < 1e-15);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..7, 2usize..5).prop_flat_map(|(n, d)| {
            prop::collection::vec(
                prop::collection::vec(-5.0f64..5.0, d)
                    .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6),
                n,
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_distance_bounded_and_permutation_invariant(vs in vec_strategy(), rot in 0usize..7) {
            let d = avg_pairwise_cosine_distance(&vs).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            let mut perm = vs.clone();
            let k = rot % perm.len();
            perm.rotate_left(k);
            perm.reverse();
            let dp = avg_pairwise_cosine_distance(&perm).unwrap();
            prop_assert!((d - dp).abs() < 1e-12);
        }

        #[test]
        fn ratio_is_scale_invariant(vs in vec_strategy(), s1 in 0.01f64..100.0, s2 in 0.01f64..100.0) {
            let txt: Vec<Vec<f64>> = vs.iter().rev().cloned().collect();
            let base = diversity_ratio("a", &vs, &txt).unwrap();
            let scaled_vis: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * s1).collect()).collect();
            let scaled_txt: Vec<Vec<f64>> = txt.iter().map(|v| v.iter().map(|x| x * s2).collect()).collect();
            let other = diversity_ratio("a", &scaled_vis, &scaled_txt).unwrap();
            prop_assert!((base.delta_vis - other.delta_vis).abs() < 1e-9);
            if let (Some(a), Some(b)) = (base.ratio, other.ratio) {
                prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn l1_is_symmetric(a in prop::collection::vec(-10.0f64..10.0, 5), b in prop::collection::vec(-10.0f64..10.0, 5)) {
            let (la, lb) = (Latent::new(a).unwrap(), Latent::new(b).unwrap());
            prop_assert_eq!(l1_reconstruction(&la, &lb).unwrap(), l1_reconstruction(&lb, &la).unwrap());
        }
    }
}
