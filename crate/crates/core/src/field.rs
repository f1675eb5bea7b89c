//! Latents, conditions, time grids and the conditional velocity network.
//!
//! The network is a plain MLP over the concatenation `[z, t, embedding]` with
//! tanh hidden layers and a linear output of the latent dimension. Condition
//! embeddings live in a lookup table owned by the field; row 0 is the reserved
//! empty (null) condition.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// The reserved token of the empty condition.
pub const EMPTY_TOKEN: u32 = 0;

/// A point in the model's latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(Vec<f64>);

impl Latent {
    /// Builds a latent, rejecting non-finite coordinates.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("latent coordinate {i}"),
            });
        }
        Ok(Latent(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Latent(vec![0.0; dim])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Latent(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// L2 norm divided by `sqrt(dim)`, comparable across dimensions.
    pub fn normalized_norm(&self) -> f64 {
        self.l2_norm() / (self.0.len() as f64).sqrt()
    }
}

impl AsRef<[f64]> for Latent {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// t: 0 -> 1 (data to noise, inversion).
    Forward,
    /// t: 1 -> 0 (noise to data, sampling).
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "inversion",
            Direction::Backward => "sampling",
        }
    }
}

/// Time points `t_0..t_N` with exact endpoints 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    direction: Direction,
}

impl TimeGrid {
    /// A uniform grid of `steps` intervals. Forward and backward grids of the
    /// same size are exact mirror images of each other.
    pub fn uniform(steps: usize, direction: Direction) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        let n = steps as f64;
        let points = (0..=steps)
            .map(|i| match direction {
                Direction::Forward => i as f64 / n,
                Direction::Backward => (steps - i) as f64 / n,
            })
            .collect();
        Ok(TimeGrid { points, direction })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Consecutive `(t_i, t_{i+1})` pairs.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Empty,
    True,
    Approximate,
    Ood,
    Raw,
}

impl ConditionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::Empty => "empty",
            ConditionKind::True => "true",
            ConditionKind::Approximate => "approximate",
            ConditionKind::Ood => "ood",
            ConditionKind::Raw => "raw",
        }
    }
}

/// A conditioning signal: a table token (or none for raw embeddings), its
/// embedding and the role it plays.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub token: Option<u32>,
    pub embedding: Vec<f64>,
    pub kind: ConditionKind,
}

impl Condition {
    /// A condition carrying an explicit embedding with no table entry.
    pub fn raw(embedding: Vec<f64>) -> Result<Self> {
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "raw condition embedding".into(),
            });
        }
        Ok(Condition {
            token: None,
            embedding,
            kind: ConditionKind::Raw,
        })
    }

    /// Relabels the condition, e.g. a trained token used as an approximate
    /// prompt for a sample from another mode.
    pub fn with_kind(mut self, kind: ConditionKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.token == Some(EMPTY_TOKEN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub vocab: usize,
    pub hidden: Vec<usize>,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            latent_dim: 8,
            cond_dim: 16,
            vocab: 39,
            hidden: vec![64, 64],
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.cond_dim == 0 {
            return Err(Error::Config(
                "latent and condition dims must be positive".into(),
            ));
        }
        if self.vocab == 0 {
            return Err(Error::Config(
                "vocabulary must contain the empty token".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + 1 + self.cond_dim
    }

    /// `(inputs, outputs)` of every dense layer, first to last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim());
        widths.extend_from_slice(&self.hidden);
        widths.push(self.latent_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total number of scalars, embedding table included.
    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum::<usize>()
            + self.vocab * self.cond_dim
    }
}

/// A dense layer with row-major weights (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub(crate) fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x)),
        );
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InitOptions {
    /// Zero the output layer so the field is identically zero.
    pub zero_final_layer: bool,
}

/// The conditional velocity network `v(z, t, c)` and its embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub spec: FieldSpec,
    pub activation: Activation,
    pub layers: Vec<DenseLayer>,
    /// `vocab x cond_dim`, row-major.
    pub embeddings: Vec<f64>,
    /// Kind of each token; index 0 is always `Empty`.
    pub registry: Vec<ConditionKind>,
}

impl VelocityField {
    /// Seeded initialization: uniform weights in `±1/sqrt(fan_in)`, zero
    /// biases, standard-normal embeddings.
    pub fn init(spec: FieldSpec, seed: u64, options: InitOptions) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let shapes = spec.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(li, &(inputs, outputs))| {
                let mut layer = DenseLayer::zeros(inputs, outputs);
                if !(options.zero_final_layer && li == last) {
                    let bound = 1.0 / (inputs as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    for w in &mut layer.weights {
                        *w = dist.sample(&mut rng);
                    }
                }
                layer
            })
            .collect();
        let embeddings = (0..spec.vocab * spec.cond_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut registry = vec![ConditionKind::Ood; spec.vocab];
        registry[0] = ConditionKind::Empty;
        Ok(VelocityField {
            spec,
            activation: Activation::Tanh,
            layers,
            embeddings,
            registry,
        })
    }

    /// A field that returns `c` everywhere: all weights zero, output bias `c`.
    pub fn constant(spec: FieldSpec, c: &[f64]) -> Result<Self> {
        if c.len() != spec.latent_dim {
            return Err(Error::shape("constant velocity", spec.latent_dim, c.len()));
        }
        let mut field = VelocityField::init(spec, 0, InitOptions::default())?;
        for layer in &mut field.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        field
            .layers
            .last_mut()
            .expect("at least one layer")
            .bias
            .copy_from_slice(c);
        Ok(field)
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.spec.cond_dim
    }

    pub fn vocab(&self) -> usize {
        self.spec.vocab
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + self.embeddings.len()
    }

    pub fn embedding(&self, token: u32) -> Result<&[f64]> {
        let t = token as usize;
        if t >= self.spec.vocab {
            return Err(Error::TokenRange {
                token,
                vocab: self.spec.vocab,
            });
        }
        let d_c = self.spec.cond_dim;
        Ok(&self.embeddings[t * d_c..(t + 1) * d_c])
    }

    /// The embedding of the empty condition (table row 0).
    pub fn null_embedding(&self) -> &[f64] {
        &self.embeddings[..self.spec.cond_dim]
    }

    /// Looks up a token's condition; its kind comes from the token registry.
    pub fn embed_condition(&self, token: u32) -> Result<Condition> {
        let embedding = self.embedding(token)?.to_vec();
        let kind = if token == EMPTY_TOKEN {
            ConditionKind::Empty
        } else {
            self.registry[token as usize]
        };
        Ok(Condition {
            token: Some(token),
            embedding,
            kind,
        })
    }

    pub fn empty_condition(&self) -> Condition {
        self.embed_condition(EMPTY_TOKEN).expect("vocab >= 1")
    }

    pub fn eval_velocity(&self, z: &Latent, t: f64, c: &Condition) -> Result<Latent> {
        self.check_inputs(z.as_slice(), &c.embedding)?;
        Ok(Latent::from_vec_unchecked(self.eval_raw(
            z.as_slice(),
            t,
            &c.embedding,
        )))
    }

    pub(crate) fn check_inputs(&self, z: &[f64], embedding: &[f64]) -> Result<()> {
        if z.len() != self.spec.latent_dim {
            return Err(Error::shape("latent", self.spec.latent_dim, z.len()));
        }
        if embedding.len() != self.spec.cond_dim {
            return Err(Error::shape(
                "condition embedding",
                self.spec.cond_dim,
                embedding.len(),
            ));
        }
        Ok(())
    }

    /// Forward pass without shape checks.
    pub(crate) fn eval_raw(&self, z: &[f64], t: f64, embedding: &[f64]) -> Vec<f64> {
        let mut x = self.assemble_input(z, t, embedding);
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&x, &mut y);
            if li != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut x, &mut y);
        }
        x
    }

    pub(crate) fn assemble_input(&self, z: &[f64], t: f64, embedding: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.spec.input_dim());
        x.extend_from_slice(z);
        x.push(t);
        x.extend_from_slice(embedding);
        x
    }

    /// All parameters in storage order: each layer's weights then bias, then
    /// the embedding table.
    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(&self.embeddings);
        out
    }

    /// Inverse of [`flatten_parameters`](Self::flatten_parameters).
    pub fn from_parameters(
        spec: FieldSpec,
        registry: Vec<ConditionKind>,
        params: &[f64],
    ) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::shape(
                "parameter block",
                spec.parameter_count(),
                params.len(),
            ));
        }
        if registry.len() != spec.vocab {
            return Err(Error::shape("token registry", spec.vocab, registry.len()));
        }
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(inputs, outputs)| DenseLayer {
                inputs,
                outputs,
                weights: take(inputs * outputs),
                bias: take(outputs),
            })
            .collect();
        let embeddings = take(spec.vocab * spec.cond_dim);
        let field = VelocityField {
            spec,
            activation: Activation::Tanh,
            layers,
            embeddings,
            registry,
        };
        field.validate()?;
        Ok(field)
    }

    /// Checks shapes and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::shape("layer count", shapes.len(), self.layers.len()));
        }
        for (layer, (inputs, outputs)) in self.layers.iter().zip(shapes) {
            if layer.inputs != inputs || layer.outputs != outputs {
                return Err(Error::shape("layer inputs", inputs, layer.inputs));
            }
            if layer.weights.len() != inputs * outputs {
                return Err(Error::shape(
                    "layer weights",
                    inputs * outputs,
                    layer.weights.len(),
                ));
            }
            if layer.bias.len() != outputs {
                return Err(Error::shape("layer bias", outputs, layer.bias.len()));
            }
        }
        if self.registry.first() != Some(&ConditionKind::Empty) {
            return Err(Error::Config("token 0 must be registered as empty".into()));
        }
        if self.flatten_parameters().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "velocity field parameters".into(),
            });
        }
        Ok(())
    }
}

/// Draws a standard-normal latent.
pub fn standard_normal_latent<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Latent {
    Latent((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> FieldSpec {
        FieldSpec {
            latent_dim: 3,
            cond_dim: 2,
            vocab: 5,
            hidden: vec![4],
        }
    }

    #[test]
    fn empty_token_is_row_zero() {
        let field = VelocityField::init(small_spec(), 1, InitOptions::default()).unwrap();
        let c = field.embed_condition(0).unwrap();
        assert_eq!(c.kind, ConditionKind::Empty);
        assert_eq!(c.embedding, &field.embeddings[..2]);
    }

    #[test]
    fn lookup_returns_exact_row() {
        let mut field = VelocityField::init(small_spec(), 1, InitOptions::default()).unwrap();
        field.embeddings[6] = 0.1;
        field.embeddings[7] = -0.7;
        let c = field.embed_condition(3).unwrap();
        assert_eq!(c.embedding[0].to_bits(), 0.1f64.to_bits());
        assert_eq!(c.embedding[1].to_bits(), (-0.7f64).to_bits());
    }

    #[test]
    fn token_out_of_range() {
        let field = VelocityField::init(small_spec(), 1, InitOptions::default()).unwrap();
        assert!(matches!(
            field.embed_condition(5),
            Err(Error::TokenRange { token: 5, vocab: 5 })
        ));
    }

    #[test]
    fn zero_final_layer_gives_zero_velocity() {
        let field = VelocityField::init(
            small_spec(),
            9,
            InitOptions {
                zero_final_layer: true,
            },
        )
        .unwrap();
        let c = field.embed_condition(2).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let z = Latent::new(vec![1.5, -2.0, 0.25]).unwrap();
            let v = field.eval_velocity(&z, t, &c).unwrap();
            assert!(v.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn one_hidden_unit_matches_hand_computation() {
        // d = 1, d_c = 1, one hidden unit: input [z, t, e].
        let spec = FieldSpec {
            latent_dim: 1,
            cond_dim: 1,
            vocab: 2,
            hidden: vec![1],
        };
        let mut field = VelocityField::init(spec, 0, InitOptions::default()).unwrap();
        field.layers[0].weights = vec![0.5, -1.0, 2.0];
        field.layers[0].bias = vec![0.1];
        field.layers[1].weights = vec![3.0];
        field.layers[1].bias = vec![-0.2];
        let c = Condition::raw(vec![0.25]).unwrap();
        let z = Latent::new(vec![0.4]).unwrap();
        let v = field.eval_velocity(&z, 0.3, &c).unwrap();
        // pre = 0.5*0.4 - 0.3 + 2*0.25 + 0.1 = 0.5; out = 3*tanh(0.5) - 0.2
        let expected = 3.0 * 0.5f64.tanh() - 0.2;
        assert!((v.as_slice()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let field = VelocityField::init(small_spec(), 4, InitOptions::default()).unwrap();
        let c = field.embed_condition(1).unwrap();
        let z = Latent::new(vec![0.1, 0.2, 0.3]).unwrap();
        let a = field.eval_velocity(&z, 0.5, &c).unwrap();
        let b = field.eval_velocity(&z, 0.5, &c).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let field = VelocityField::init(small_spec(), 4, InitOptions::default()).unwrap();
        let c = field.embed_condition(1).unwrap();
        let z = Latent::new(vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            field.eval_velocity(&z, 0.5, &c),
            Err(Error::Shape {
                expected: 3,
                got: 2,
                ..
            })
        ));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = VelocityField::init(FieldSpec::default(), 11, InitOptions::default()).unwrap();
        let b = VelocityField::init(FieldSpec::default(), 11, InitOptions::default()).unwrap();
        let bits = |f: &VelocityField| {
            f.flatten_parameters()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = VelocityField::init(FieldSpec::default(), 12, InitOptions::default()).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn default_parameter_count() {
        let spec = FieldSpec::default();
        let v = spec.vocab;
        let expected = (8 + 1 + 16) * 64 + 64 + 64 * 64 + 64 + 64 * 8 + 8 + v * 16;
        assert_eq!(spec.parameter_count(), expected);
        let field = VelocityField::init(spec, 0, InitOptions::default()).unwrap();
        assert_eq!(field.parameter_count(), expected);
        assert_eq!(field.flatten_parameters().len(), expected);
    }

    #[test]
    fn zero_dims_rejected() {
        let spec = FieldSpec {
            latent_dim: 0,
            ..FieldSpec::default()
        };
        assert!(matches!(
            VelocityField::init(spec, 0, InitOptions::default()),
            Err(Error::Config(_))
        ));
        let spec = FieldSpec {
            hidden: vec![64, 0],
            ..FieldSpec::default()
        };
        assert!(VelocityField::init(spec, 0, InitOptions::default()).is_err());
    }

    #[test]
    fn parameter_flattening_round_trips() {
        let field = VelocityField::init(small_spec(), 3, InitOptions::default()).unwrap();
        let back = VelocityField::from_parameters(
            field.spec.clone(),
            field.registry.clone(),
            &field.flatten_parameters(),
        )
        .unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn grids_are_mirror_images() {
        for n in [1, 7, 50] {
            let f = TimeGrid::uniform(n, Direction::Forward).unwrap();
            let b = TimeGrid::uniform(n, Direction::Backward).unwrap();
            assert_eq!(f.points()[0], 0.0);
            assert_eq!(f.points()[n], 1.0);
            assert_eq!(b.points()[0], 1.0);
            assert_eq!(b.points()[n], 0.0);
            let mut rev = b.points().to_vec();
            rev.reverse();
            assert_eq!(rev, f.points());
            assert!(f.points().windows(2).all(|w| w[1] > w[0]));
        }
        assert!(TimeGrid::uniform(0, Direction::Forward).is_err());
    }
}
