//! Named parameter traversal, the two-layer feed-forward head shared by all
//! classifiers, and the optimizers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of named tensors that can be read and updated by name.
pub trait Parameters {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every tensor out, keyed by name.
    fn state_dict(&self) -> BTreeMap<String, Tensor> {
        self.named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Overwrites every tensor from `state`; names and shapes must match exactly.
    fn load_state_dict(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut named = self.named_mut();
        if named.len() != state.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                named.len(),
                state.len()
            )));
        }
        for (name, tensor) in named.iter_mut() {
            let src = state
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    tensor.shape()
                )));
            }
            **tensor = src.clone();
        }
        Ok(())
    }
}

/// `(x · W1 + b1) · W2 + b2`, applied row-wise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub(crate) fn init_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl FeedForwardHead {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        FeedForwardHead {
            w1: Tensor::randn(input, hidden, init_std(input), rng),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::randn(hidden, output, init_std(hidden), rng),
            b2: Tensor::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        FeedForwardHead {
            w1: Tensor::zeros(input, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, output),
            b2: Tensor::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = self.w1.shape();
        let ok = self.b1.shape() == (1, h)
            && self.w2.rows() == h
            && self.b2.shape() == (1, self.w2.cols());
        if !ok {
            return Err(Error::Shape(format!(
                "inconsistent head: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                (d, h),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )));
        }
        Ok(())
    }

    /// Output logits for every row of `x`.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, prefix: &str, x: Var) -> Result<Var> {
        self.validate()?;
        if g.value(x).cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "head expects width {}, got {}",
                self.input_dim(),
                g.value(x).cols()
            )));
        }
        let w1 = g.param(format!("{prefix}w1"), &self.w1);
        let b1 = g.param(format!("{prefix}b1"), &self.b1);
        let w2 = g.param(format!("{prefix}w2"), &self.w2);
        let b2 = g.param(format!("{prefix}b2"), &self.b2);
        let hidden = g.affine(x, w1, b1);
        Ok(g.affine(hidden, w2, b2))
    }

    pub(crate) fn named_with<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        vec![
            (format!("{prefix}w1"), &self.w1),
            (format!("{prefix}b1"), &self.b1),
            (format!("{prefix}w2"), &self.w2),
            (format!("{prefix}b2"), &self.b2),
        ]
    }

    pub(crate) fn named_mut_with<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
        vec![
            (format!("{prefix}w1"), &mut self.w1),
            (format!("{prefix}b1"), &mut self.b1),
            (format!("{prefix}w2"), &mut self.w2),
            (format!("{prefix}b2"), &mut self.b2),
        ]
    }
}

impl Parameters for FeedForwardHead {
    fn named(&self) -> Vec<(String, &Tensor)> {
        self.named_with("")
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.named_mut_with("")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}, expected sgd or adam"))),
        }
    }
}

/// Plain SGD or Adam over named parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        for (name, tensor) in params.named_mut() {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => tensor.add_scaled(grad, -self.learning_rate),
                OptimizerKind::Adam => {
                    let (m, v) = self.moments.entry(name).or_insert_with(|| {
                        (
                            Tensor::zeros(grad.rows(), grad.cols()),
                            Tensor::zeros(grad.rows(), grad.cols()),
                        )
                    });
                    let bc1 = 1.0 - BETA1.powi(t);
                    let bc2 = 1.0 - BETA2.powi(t);
                    let data = tensor.data_mut();
                    let md = m.data_mut();
                    let vd = v.data_mut();
                    for (i, g) in grad.data().iter().enumerate() {
                        md[i] = BETA1 * md[i] + (1.0 - BETA1) * g;
                        vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * g * g;
                        let m_hat = md[i] / bc1;
                        let v_hat = vd[i] / bc2;
                        data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn head_rejects_wrong_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let head = FeedForwardHead::new(4, 4, 3, &mut rng);
        let x = Tensor::zeros(2, 5);
        let mut g = Graph::new();
        let xv = g.constant(x);
        assert!(matches!(head.forward(&mut g, "", xv), Err(Error::Shape(_))));
    }

    #[test]
    fn state_dict_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = FeedForwardHead::new(3, 3, 1, &mut rng);
        let mut b = FeedForwardHead::zeros(3, 3, 1);
        b.load_state_dict(&a.state_dict()).unwrap();
        assert_eq!(a, b);
        let mut c = FeedForwardHead::zeros(3, 2, 1);
        assert!(c.load_state_dict(&a.state_dict()).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut head = FeedForwardHead::zeros(1, 1, 1);
        head.b2 = Tensor::row_vector(vec![1.0]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 1));
        let out = head.forward(&mut g, "", x).unwrap();
        let grads = g.backward(out);
        drop(g);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(&mut head, &grads);
        assert_eq!(head.b2.data(), &[0.5]);
    }
}
