//! Dense Q-network with a plain or dueling head.
//!
//! Layers are stored in a single list in parameter order: trunk layers
//! first, then either the plain output layer or the value branch followed
//! by the advantage branch. Each layer contributes its weights (row-major,
//! `out x in`) then its bias. Checkpoints and optimiser state follow the
//! same order.

mod adam;
mod checkpoint;
mod real;

pub use adam::Adam;
pub use checkpoint::{
    load, load_expecting, read_checkpoint, save, write_checkpoint, CheckpointError, CheckpointHeader,
    TrainingMetadata, FORMAT_VERSION, MAGIC,
};
pub use real::Real;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Action;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QNetError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    #[serde(default)]
    pub dropout: f32,
}

impl HiddenLayer {
    pub fn new(width: usize, dropout: f32) -> Self {
        Self { width, dropout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Plain,
    Dueling {
        value_hidden: Vec<usize>,
        advantage_hidden: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub n_actions: usize,
    pub trunk: Vec<HiddenLayer>,
    pub head: Head,
}

impl Architecture {
    /// `input -> 1024 -> 512 -> 256 -> 9`, dropout 0.2 after the first two.
    pub fn plain(input_dim: usize) -> Self {
        Self {
            input_dim,
            n_actions: Action::COUNT,
            trunk: vec![
                HiddenLayer::new(1024, 0.2),
                HiddenLayer::new(512, 0.2),
                HiddenLayer::new(256, 0.0),
            ],
            head: Head::Plain,
        }
    }

    /// Shared `input -> 1024 -> 512` trunk, then `512 -> 256 -> 1` value and
    /// `512 -> 256 -> 9` advantage branches.
    pub fn dueling(input_dim: usize) -> Self {
        Self {
            input_dim,
            n_actions: Action::COUNT,
            trunk: vec![HiddenLayer::new(1024, 0.2), HiddenLayer::new(512, 0.0)],
            head: Head::Dueling {
                value_hidden: vec![256],
                advantage_hidden: vec![256],
            },
        }
    }

    pub fn is_dueling(&self) -> bool {
        matches!(self.head, Head::Dueling { .. })
    }

    /// `(in, out, relu, dropout)` for every layer in parameter order.
    fn layer_plan(&self) -> Vec<(usize, usize, bool, f32)> {
        let mut plan = Vec::new();
        let mut prev = self.input_dim;
        for h in &self.trunk {
            plan.push((prev, h.width, true, h.dropout));
            prev = h.width;
        }
        let branch = |hidden: &[usize], out: usize, plan: &mut Vec<_>| {
            let mut p = prev;
            for &w in hidden {
                plan.push((p, w, true, 0.0));
                p = w;
            }
            plan.push((p, out, false, 0.0));
        };
        match &self.head {
            Head::Plain => branch(&[], self.n_actions, &mut plan),
            Head::Dueling {
                value_hidden,
                advantage_hidden,
            } => {
                branch(value_hidden, 1, &mut plan);
                branch(advantage_hidden, self.n_actions, &mut plan);
            }
        }
        plan
    }

    pub fn validate(&self) -> Result<(), QNetError> {
        let bad = self.input_dim == 0
            || self.n_actions == 0
            || self.trunk.iter().any(|h| h.width == 0 || !(0.0..1.0).contains(&h.dropout))
            || match &self.head {
                Head::Plain => false,
                Head::Dueling {
                    value_hidden,
                    advantage_hidden,
                } => value_hidden.iter().chain(advantage_hidden).any(|&w| w == 0),
            };
        if bad {
            return Err(QNetError::ShapeMismatch(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    relu: bool,
    dropout: f32,
}

impl<F: Real> Dense<F> {
    fn zeros(in_dim: usize, out_dim: usize, relu: bool, dropout: f32) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
            relu,
            dropout,
        }
    }

    /// `y = x W^T + b` for a row-major `batch x in` input.
    fn affine(&self, x: &[F], batch: usize) -> Vec<F> {
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias);
        }
        real::gemm(
            batch,
            self.in_dim,
            self.out_dim,
            x,
            (self.in_dim as isize, 1),
            &self.weights,
            (1, self.in_dim as isize),
            F::one(),
            &mut y,
            (self.out_dim as isize, 1),
        );
        y
    }
}

/// Parameter gradients, aligned layer-for-layer with a [`QNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<F> {
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
}

impl<F: Real> GradientSet<F> {
    pub fn zeros_like(net: &QNetwork<F>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![F::zero(); l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![F::zero(); l.bias.len()]).collect(),
        }
    }

    /// Flat views in parameter order.
    pub fn slices(&self) -> impl Iterator<Item = &[F]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn max_abs(&self) -> F {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }
}

struct LayerTape<F> {
    input: Vec<F>,
    /// post-activation, pre-dropout
    output: Vec<F>,
    mask: Option<Vec<F>>,
}

struct Tape<F> {
    batch: usize,
    layers: Vec<LayerTape<F>>,
    q: Vec<F>,
}

pub struct QNetwork<F: Real = f32> {
    arch: Architecture,
    layers: Vec<Dense<F>>,
    tape: Option<Tape<F>>,
}

impl<F: Real> Clone for QNetwork<F> {
    /// Deep copy of the parameters; a recorded forward pass is not carried over.
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            tape: None,
        }
    }
}

impl<F: Real> std::fmt::Debug for QNetwork<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QNetwork")
            .field("arch", &self.arch)
            .field("params", &self.param_count())
            .finish()
    }
}

impl<F: Real> PartialEq for QNetwork<F> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers
    }
}

impl<F: Real> QNetwork<F> {
    pub fn zeros(arch: Architecture) -> Result<Self, QNetError> {
        arch.validate()?;
        let layers = arch
            .layer_plan()
            .into_iter()
            .map(|(i, o, relu, p)| Dense::zeros(i, o, relu, p))
            .collect();
        Ok(Self { arch, layers, tape: None })
    }

    /// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, QNetError> {
        let mut net = Self::zeros(arch)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = F::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn n_actions(&self) -> usize {
        self.arch.n_actions
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &[F]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Deep copy used as the target network.
    pub fn copy_into_target(&self) -> Self {
        self.clone()
    }

    fn check_input(&self, states: &[F], batch: usize) -> Result<(), QNetError> {
        let expected = batch * self.arch.input_dim;
        if states.len() != expected || batch == 0 {
            return Err(QNetError::DimensionMismatch {
                expected,
                actual: states.len(),
            });
        }
        Ok(())
    }

    fn trunk_len(&self) -> usize {
        self.arch.trunk.len()
    }

    /// Index ranges of the head branches within `layers`.
    fn head_ranges(&self) -> (std::ops::Range<usize>, Option<std::ops::Range<usize>>) {
        let t = self.trunk_len();
        match &self.arch.head {
            Head::Plain => (t..t + 1, None),
            Head::Dueling { value_hidden, .. } => {
                let v_end = t + value_hidden.len() + 1;
                (t..v_end, Some(v_end..self.layers.len()))
            }
        }
    }

    fn run_chain<R: Rng + ?Sized>(
        &self,
        range: std::ops::Range<usize>,
        mut x: Vec<F>,
        batch: usize,
        mut dropout_rng: Option<&mut R>,
        mut tape: Option<&mut Vec<LayerTape<F>>>,
    ) -> Vec<F> {
        for layer in &self.layers[range] {
            let mut y = layer.affine(&x, batch);
            if layer.relu {
                y.iter_mut().for_each(|v| *v = v.max(F::zero()));
            }
            let mut mask = None;
            let mut out = y.clone();
            if let Some(rng) = dropout_rng.as_deref_mut() {
                if layer.dropout > 0.0 {
                    let keep = F::from_f64(1.0 / (1.0 - f64::from(layer.dropout)));
                    let m: Vec<F> = (0..y.len())
                        .map(|_| if rng.gen::<f32>() < layer.dropout { F::zero() } else { keep })
                        .collect();
                    out.iter_mut().zip(&m).for_each(|(o, k)| *o = *o * *k);
                    mask = Some(m);
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(LayerTape {
                    input: x,
                    output: y,
                    mask,
                });
            }
            x = out;
        }
        x
    }

    fn run<R: Rng + ?Sized>(
        &self,
        states: &[F],
        batch: usize,
        mut dropout_rng: Option<&mut R>,
        mut tape: Option<&mut Vec<LayerTape<F>>>,
    ) -> (Vec<F>, Option<(Vec<F>, Vec<F>)>) {
        let h = self.run_chain(
            0..self.trunk_len(),
            states.to_vec(),
            batch,
            dropout_rng.as_deref_mut(),
            tape.as_deref_mut(),
        );
        let (first, second) = self.head_ranges();
        match second {
            None => (self.run_chain(first, h, batch, dropout_rng, tape), None),
            Some(adv_range) => {
                let value = self.run_chain(first, h.clone(), batch, dropout_rng.as_deref_mut(), tape.as_deref_mut());
                let adv = self.run_chain(adv_range, h, batch, dropout_rng, tape);
                let n = self.arch.n_actions;
                let inv_n = F::from_f64(1.0 / n as f64);
                let mut q = Vec::with_capacity(batch * n);
                for b in 0..batch {
                    let row = &adv[b * n..(b + 1) * n];
                    let mean = row.iter().copied().fold(F::zero(), |a, v| a + v) * inv_n;
                    q.extend(row.iter().map(|&a| value[b] + a - mean));
                }
                (q, Some((value, adv)))
            }
        }
    }

    /// Inference forward pass: no dropout, nothing recorded. Returns
    /// `batch x n_actions` Q-values, row-major.
    pub fn predict(&self, states: &[F], batch: usize) -> Result<Vec<F>, QNetError> {
        self.check_input(states, batch)?;
        Ok(self.run::<rand::rngs::ThreadRng>(states, batch, None, None).0)
    }

    pub fn predict_one(&self, state: &[F]) -> Result<Vec<F>, QNetError> {
        self.predict(state, 1)
    }

    /// Value and advantage streams of a dueling network (`None` for plain).
    pub fn dueling_streams(&self, states: &[F], batch: usize) -> Result<Option<(Vec<F>, Vec<F>)>, QNetError> {
        self.check_input(states, batch)?;
        Ok(self.run::<rand::rngs::ThreadRng>(states, batch, None, None).1)
    }

    /// Forward pass that records activations for [`QNetwork::backward`].
    /// Dropout is applied only when `training` is set.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        states: &[F],
        batch: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<F>, QNetError> {
        self.check_input(states, batch)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let rng = if training { Some(rng) } else { None };
        let (q, _) = self.run(states, batch, rng, Some(&mut layers));
        self.tape = Some(Tape {
            batch,
            layers,
            q: q.clone(),
        });
        Ok(q)
    }

    fn backward_chain(
        &self,
        range: std::ops::Range<usize>,
        tapes: &[LayerTape<F>],
        mut d_out: Vec<F>,
        batch: usize,
        grads: &mut GradientSet<F>,
        need_input_grad: bool,
    ) -> Option<Vec<F>> {
        let start = range.start;
        for (offset, layer) in self.layers[range].iter().enumerate().rev() {
            let idx = start + offset;
            let tape = &tapes[idx];
            if let Some(mask) = &tape.mask {
                d_out.iter_mut().zip(mask).for_each(|(d, m)| *d = *d * *m);
            }
            if layer.relu {
                d_out
                    .iter_mut()
                    .zip(&tape.output)
                    .for_each(|(d, a)| {
                        if *a <= F::zero() {
                            *d = F::zero();
                        }
                    });
            }
            let (o, i) = (layer.out_dim, layer.in_dim);
            // dW = dZ^T X
            real::gemm(
                o,
                batch,
                i,
                &d_out,
                (1, o as isize),
                &tape.input,
                (i as isize, 1),
                F::zero(),
                &mut grads.weights[idx],
                (i as isize, 1),
            );
            let db = &mut grads.biases[idx];
            db.iter_mut().for_each(|v| *v = F::zero());
            for row in d_out.chunks(o) {
                db.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
            }
            if offset == 0 && !need_input_grad {
                return None;
            }
            let mut d_in = vec![F::zero(); batch * i];
            real::gemm(
                batch,
                o,
                i,
                &d_out,
                (o as isize, 1),
                &layer.weights,
                (i as isize, 1),
                F::zero(),
                &mut d_in,
                (i as isize, 1),
            );
            d_out = d_in;
        }
        Some(d_out)
    }

    /// Gradients of the mean squared TD error over the recorded batch, where
    /// only the output of each sample's taken action contributes. Returns the
    /// gradients and the loss. Consumes the recorded pass.
    pub fn backward(&mut self, actions: &[usize], targets: &[F]) -> Result<(GradientSet<F>, F), QNetError> {
        let tape = self.tape.take().ok_or(QNetError::NoForwardPass)?;
        let batch = tape.batch;
        let n = self.arch.n_actions;
        if actions.len() != batch || targets.len() != batch {
            return Err(QNetError::DimensionMismatch {
                expected: batch,
                actual: actions.len().min(targets.len()),
            });
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n) {
            return Err(QNetError::ShapeMismatch(format!("action index {a} >= {n}")));
        }

        let inv_b = F::from_f64(1.0 / batch as f64);
        let two = F::from_f64(2.0);
        let mut d_q = vec![F::zero(); batch * n];
        let mut loss = F::zero();
        for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = tape.q[b * n + a] - y;
            loss = loss + err * err * inv_b;
            d_q[b * n + a] = two * err * inv_b;
        }

        let mut grads = GradientSet::zeros_like(self);
        let (first, second) = self.head_ranges();
        let d_trunk = match second {
            None => self
                .backward_chain(first, &tape.layers, d_q, batch, &mut grads, true)
                .expect("input grad requested"),
            Some(adv_range) => {
                let inv_n = F::from_f64(1.0 / n as f64);
                let mut d_v = vec![F::zero(); batch];
                let mut d_a = vec![F::zero(); batch * n];
                for b in 0..batch {
                    let row = &d_q[b * n..(b + 1) * n];
                    let sum = row.iter().copied().fold(F::zero(), |acc, v| acc + v);
                    d_v[b] = sum;
                    for j in 0..n {
                        d_a[b * n + j] = row[j] - sum * inv_n;
                    }
                }
                let mut h_v = self
                    .backward_chain(first, &tape.layers, d_v, batch, &mut grads, true)
                    .expect("input grad requested");
                let h_a = self
                    .backward_chain(adv_range, &tape.layers, d_a, batch, &mut grads, true)
                    .expect("input grad requested");
                h_v.iter_mut().zip(&h_a).for_each(|(a, b)| *a = *a + *b);
                h_v
            }
        };
        if self.trunk_len() > 0 {
            self.backward_chain(0..self.trunk_len(), &tape.layers, d_trunk, batch, &mut grads, false);
        }
        Ok((grads, loss))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
