//! The three networks of the training architecture: embedding encoder `f`,
//! embedding classifier `g` (so the full classifier is `h = g ∘ f`), and the
//! domain discriminator `D` fed through gradient reversal.
//!
//! All are plain feed-forward stacks with ReLU between layers and a linear
//! final layer; the classifier adds a row softmax, the discriminator a
//! sigmoid. The encoder is shared: the same parameters process source,
//! target, and mixed samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Layer widths for one model bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Encoder hidden widths; the encoder maps input -> hidden* -> embedding.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub class_count: usize,
    /// Discriminator hidden width (embedding -> disc_hidden -> 1).
    pub disc_hidden: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.extend_from_slice(&[self.embedding_dim, self.class_count, self.disc_hidden]);
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "model spec has a zero-width layer: {self:?}"
            )));
        }
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }
}

/// Fully-connected layer `y = x W + b`, weight stored `[in, out]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Fan-in-scaled uniform init, `U(±sqrt(3/fan_in))`, which has variance
    /// `1/fan_in`. Biases start at zero.
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("shape"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

/// Feed-forward stack; ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    fn init(dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }
}

/// Identity forward, `-coeff` scaled gradient backward. Wrapping the
/// discriminator input in this is what turns the min-max game into a single
/// descent step.
#[derive(Debug, Clone, Copy)]
pub struct GradientReversal<T> {
    pub coeff: T,
}

impl<T: Scalar> GradientReversal<T> {
    pub fn new(coeff: T) -> Self {
        GradientReversal { coeff }
    }

    pub fn apply(&self, tape: &mut Tape<T>, v: Var) -> Var {
        tape.grad_reverse(v, self.coeff)
    }
}

/// Encoder, classifier and discriminator with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub spec: ModelSpec,
    pub encoder: Mlp<T>,
    pub classifier: Mlp<T>,
    pub discriminator: Mlp<T>,
}

impl<T: Scalar> ModelBundle<T> {
    /// Deterministic init from a seed.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, StreamTag::ParamInit, 0);
        let encoder = Mlp::init(&spec.encoder_dims(), &mut rng);
        let classifier = Mlp::init(&[spec.embedding_dim, spec.class_count], &mut rng);
        let discriminator = Mlp::init(&[spec.embedding_dim, spec.disc_hidden, 1], &mut rng);
        Ok(ModelBundle {
            spec,
            encoder,
            classifier,
            discriminator,
        })
    }

    fn nets(&self) -> [(&'static str, &Mlp<T>); 3] {
        [
            ("encoder", &self.encoder),
            ("classifier", &self.classifier),
            ("discriminator", &self.discriminator),
        ]
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (net, mlp) in self.nets() {
            for i in 0..mlp.layers.len() {
                names.push(format!("{net}.{i}.weight"));
                names.push(format!("{net}.{i}.bias"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for (_, mlp) in self.nets() {
            for l in &mlp.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for mlp in [
            &mut self.encoder,
            &mut self.classifier,
            &mut self.discriminator,
        ] {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// Lift all parameters onto a tape as gradient leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel<T> {
        let vars: Vec<Var> = self.params().iter().map(|t| tape.param((*t).clone())).collect();
        Self::bound_from_vars(&self.spec, &vars)
    }

    /// Lift all parameters as constants; used for evaluation-only forwards.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> BoundModel<T> {
        let vars: Vec<Var> = self
            .params()
            .iter()
            .map(|t| tape.constant((*t).clone()))
            .collect();
        Self::bound_from_vars(&self.spec, &vars)
    }

    /// Assemble a bound model from externally lifted vars, in `params()`
    /// order. The finite-difference checker lifts parameters itself and
    /// rebuilds the network from them.
    pub fn bound_from_vars(spec: &ModelSpec, vars: &[Var]) -> BoundModel<T> {
        let enc_layers = spec.encoder_dims().len() - 1;
        let mut it = vars.iter().copied();
        let mut take = |n: usize| -> Vec<BoundLinear> {
            (0..n)
                .map(|_| BoundLinear {
                    weight: it.next().expect("var count"),
                    bias: it.next().expect("var count"),
                })
                .collect()
        };
        BoundModel {
            encoder: BoundMlp {
                layers: take(enc_layers),
            },
            classifier: BoundMlp { layers: take(1) },
            discriminator: BoundMlp { layers: take(2) },
            _marker: std::marker::PhantomData,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    // ── Value-level forwards (scratch tape under the hood) ──────────────

    /// Class probabilities for a sample batch.
    pub fn classify_values(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let p = bound.classify(&mut tape, xv)?;
        Ok(tape.value(p).clone())
    }

    pub fn embed_values(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let z = bound.embed(&mut tape, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Argmax class per sample.
    pub fn predict_labels(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.classify_values(x)?.argmax_rows())
    }
}

/// A [`Linear`] whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

impl BoundMlp {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let lin = tape.matmul(x, layer.weight)?;
            x = tape.add_row(lin, layer.bias)?;
            if i < last {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Tape-resident view of a [`ModelBundle`]; all forwards are differentiable.
#[derive(Debug, Clone)]
pub struct BoundModel<T> {
    pub encoder: BoundMlp,
    pub classifier: BoundMlp,
    pub discriminator: BoundMlp,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BoundModel<T> {
    /// Parameter vars in [`ModelBundle::params`] order, for gradient
    /// extraction after backward.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut vars = Vec::new();
        for mlp in [&self.encoder, &self.classifier, &self.discriminator] {
            for l in &mlp.layers {
                vars.push(l.weight);
                vars.push(l.bias);
            }
        }
        vars
    }

    /// `f(x)`: embedding batch for a sample batch.
    pub fn embed(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.encoder.forward(tape, x)
    }

    /// `g(z)` followed by softmax: class probabilities from embeddings.
    pub fn classify_embedding(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        let logits = self.classifier.forward(tape, z)?;
        tape.softmax_rows(logits)
    }

    /// `h(x) = g(f(x))`: class probabilities for a sample batch.
    pub fn classify(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let z = self.embed(tape, x)?;
        self.classify_embedding(tape, z)
    }

    /// `D(GRL_mu(z))`: per-sample probability that `z` came from a
    /// source-dominant mix. The reversal leaves the forward value untouched
    /// and flips the gradient flowing back into the encoder, scaled by `mu`.
    pub fn discriminate(&self, tape: &mut Tape<T>, z: Var, mu: T) -> Result<Var> {
        let reversed = GradientReversal::new(mu).apply(tape, z);
        let logit = self.discriminator.forward(tape, reversed)?;
        tape.sigmoid(logit)
    }
}
