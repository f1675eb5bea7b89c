//! Synthetic conditional datasets with "sink" and "diverse" anchor classes.
//!
//! A diverse anchor maps each of its tokens to its own Gaussian mode; a sink
//! anchor maps all of its tokens to a single shared mode, so prompt changes
//! within it cannot change the output.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{standard_normal_latent, ConditionKind, Latent, EMPTY_TOKEN};
use crate::rng::{self, Stream};

/// An isotropic Gaussian target mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl Mode {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Latent {
        Latent::from_vec_unchecked(
            self.mean
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + self.std * e
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub name: String,
    pub sink: bool,
    pub tokens: Vec<u32>,
    pub modes: Vec<Mode>,
    /// `mode_of[k]` is the index into `modes` of `tokens[k]`.
    pub mode_of: Vec<usize>,
}

impl Anchor {
    pub fn mode_for(&self, token: u32) -> Option<&Mode> {
        let k = self.tokens.iter().position(|&t| t == token)?;
        Some(&self.modes[self.mode_of[k]])
    }

    fn distinct_modes(&self) -> usize {
        let mut used: Vec<usize> = self.mode_of.clone();
        used.sort_unstable();
        used.dedup();
        used.len()
    }
}

/// Identifies one mode: `(anchor index, mode index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeId {
    pub anchor: usize,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub latent_dim: usize,
    pub vocab: usize,
    pub anchors: Vec<Anchor>,
    /// Tokens with table rows that never appear in training.
    pub ood_tokens: Vec<u32>,
    /// Probability of replacing a token by the empty token.
    pub p_uncond: f64,
    pub seed: u64,
}

/// One flow-matching training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x0: Latent,
    pub token: u32,
    pub x1: Latent,
}

impl DatasetSpec {
    /// Two diverse anchors (8 tokens, 8 modes each), two sink anchors (8
    /// tokens, 1 mode each), modes on a radius-3 sphere with stddev 0.25, and
    /// 6 OOD tokens.
    pub fn default_toy(latent_dim: usize, seed: u64) -> Self {
        const TOKENS_PER_ANCHOR: u32 = 8;
        const RADIUS: f64 = 3.0;
        const STD: f64 = 0.25;
        let mut rng = rng::stream(seed, Stream::Dataset, 0);
        let mut sphere_point = || {
            let dir = standard_normal_latent(latent_dim, &mut rng);
            let n = dir.l2_norm();
            Mode {
                mean: dir.as_slice().iter().map(|v| RADIUS * v / n).collect(),
                std: STD,
            }
        };
        let layout = [
            ("diverse-a", false),
            ("diverse-b", false),
            ("sink-a", true),
            ("sink-b", true),
        ];
        let mut next_token = 1u32;
        let anchors = layout
            .iter()
            .map(|&(name, sink)| {
                let tokens: Vec<u32> = (next_token..next_token + TOKENS_PER_ANCHOR).collect();
                next_token += TOKENS_PER_ANCHOR;
                let n_modes = if sink { 1 } else { TOKENS_PER_ANCHOR as usize };
                let modes = (0..n_modes).map(|_| sphere_point()).collect();
                let mode_of = (0..TOKENS_PER_ANCHOR as usize)
                    .map(|k| if sink { 0 } else { k })
                    .collect();
                Anchor {
                    name: name.to_string(),
                    sink,
                    tokens,
                    modes,
                    mode_of,
                }
            })
            .collect();
        let ood_tokens: Vec<u32> = (next_token..next_token + 6).collect();
        let vocab = (next_token + 6) as usize;
        DatasetSpec {
            latent_dim,
            vocab,
            anchors,
            ood_tokens,
            p_uncond: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("dataset latent dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Config(format!(
                "p_uncond {} not in [0, 1]",
                self.p_uncond
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut claim = |token: u32| -> Result<()> {
            if token == EMPTY_TOKEN {
                return Err(Error::Config(
                    "token 0 is reserved for the empty condition".into(),
                ));
            }
            if token as usize >= self.vocab {
                return Err(Error::TokenRange {
                    token,
                    vocab: self.vocab,
                });
            }
            if !seen.insert(token) {
                return Err(Error::Config(format!("token {token} assigned twice")));
            }
            Ok(())
        };
        for anchor in &self.anchors {
            for &t in &anchor.tokens {
                claim(t)?;
            }
            if anchor.mode_of.len() != anchor.tokens.len() {
                return Err(Error::Config(format!(
                    "anchor {}: mode map length",
                    anchor.name
                )));
            }
            if anchor.mode_of.iter().any(|&m| m >= anchor.modes.len()) {
                return Err(Error::Config(format!(
                    "anchor {}: mode index out of range",
                    anchor.name
                )));
            }
            for mode in &anchor.modes {
                if mode.mean.len() != self.latent_dim {
                    return Err(Error::shape("mode mean", self.latent_dim, mode.mean.len()));
                }
                if !(mode.std >= 0.0 && mode.std.is_finite())
                    || mode.mean.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Config(format!(
                        "anchor {}: invalid mode",
                        anchor.name
                    )));
                }
            }
            if anchor.tokens.len() < 4 {
                return Err(Error::Config(format!(
                    "anchor {} needs at least 4 tokens",
                    anchor.name
                )));
            }
            let distinct = anchor.distinct_modes();
            if anchor.sink && distinct != 1 {
                return Err(Error::Config(format!(
                    "sink anchor {} must share one mode",
                    anchor.name
                )));
            }
            if !anchor.sink && distinct < 4 {
                return Err(Error::Config(format!(
                    "diverse anchor {} needs at least 4 distinct modes",
                    anchor.name
                )));
            }
        }
        for &t in &self.ood_tokens {
            claim(t)?;
        }
        Ok(())
    }

    /// Every token that appears in training, in anchor order.
    pub fn trained_tokens(&self) -> Vec<u32> {
        self.anchors
            .iter()
            .flat_map(|a| a.tokens.iter().copied())
            .collect()
    }

    pub fn anchor_of(&self, token: u32) -> Option<usize> {
        self.anchors.iter().position(|a| a.tokens.contains(&token))
    }

    pub fn anchor_by_name(&self, name: &str) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.name == name)
    }

    pub fn mode_id(&self, token: u32) -> Option<ModeId> {
        let anchor = self.anchor_of(token)?;
        let a = &self.anchors[anchor];
        let k = a.tokens.iter().position(|&t| t == token)?;
        Some(ModeId {
            anchor,
            mode: a.mode_of[k],
        })
    }

    pub fn mode(&self, id: ModeId) -> &Mode {
        &self.anchors[id.anchor].modes[id.mode]
    }

    pub fn mode_for(&self, token: u32) -> Option<&Mode> {
        self.mode_id(token).map(|id| self.mode(id))
    }

    /// All modes, in anchor order.
    pub fn modes(&self) -> Vec<(ModeId, &Mode)> {
        self.anchors
            .iter()
            .enumerate()
            .flat_map(|(ai, a)| {
                a.modes.iter().enumerate().map(move |(mi, m)| {
                    (
                        ModeId {
                            anchor: ai,
                            mode: mi,
                        },
                        m,
                    )
                })
            })
            .collect()
    }

    /// The mode whose mean is closest (Euclidean) to `z`.
    pub fn nearest_mode(&self, z: &Latent) -> ModeId {
        self.modes()
            .into_iter()
            .map(|(id, m)| (id, squared_distance(&m.mean, z.as_slice())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id)
            .expect("dataset has modes")
    }

    /// Token kinds for a field's registry.
    pub fn registry(&self) -> Vec<ConditionKind> {
        let mut kinds = vec![ConditionKind::Ood; self.vocab];
        kinds[0] = ConditionKind::Empty;
        for t in self.trained_tokens() {
            kinds[t as usize] = ConditionKind::True;
        }
        kinds
    }

    /// A near-but-wrong trained token for a sample of `token`: in a diverse
    /// anchor, a token of the same anchor with a different mode; in a sink
    /// anchor, a token from another anchor.
    pub fn approximate_token<R: Rng + ?Sized>(&self, token: u32, rng: &mut R) -> Result<u32> {
        let ai = self
            .anchor_of(token)
            .ok_or_else(|| Error::Config(format!("token {token} is not a trained token")))?;
        let anchor = &self.anchors[ai];
        let candidates: Vec<u32> = if anchor.sink {
            self.anchors
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ai)
                .flat_map(|(_, a)| a.tokens.iter().copied())
                .collect()
        } else {
            let own = self.mode_id(token).expect("token in anchor").mode;
            anchor
                .tokens
                .iter()
                .zip(&anchor.mode_of)
                .filter(|(_, &m)| m != own)
                .map(|(&t, _)| t)
                .collect()
        };
        candidates
            .choose(rng)
            .copied()
            .ok_or_else(|| Error::Config(format!("no approximate token for {token}")))
    }

    /// Draws a data latent from `token`'s mode.
    pub fn sample_from_token<R: Rng + ?Sized>(&self, token: u32, rng: &mut R) -> Result<Latent> {
        let mode = self
            .mode_for(token)
            .ok_or_else(|| Error::Config(format!("token {token} has no mode")))?;
        Ok(mode.sample(rng))
    }

    /// Draws `(x0, token, x1)`: a uniformly chosen trained token, a data point
    /// from its mode, standard-normal noise, and token dropout to empty with
    /// probability `p_uncond`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainingPair {
        let tokens = self.trained_tokens();
        let token = *tokens.choose(rng).expect("validated spec has tokens");
        let x0 = self.mode_for(token).expect("trained token").sample(rng);
        let x1 = standard_normal_latent(self.latent_dim, rng);
        let drop = rng.random::<f64>() < self.p_uncond;
        TrainingPair {
            x0,
            token: if drop { EMPTY_TOKEN } else { token },
            x1,
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
