//! Replay memory, exploration and the DQN-family training rules.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::AgentState;
use crate::geometry::Action;
use crate::qnet::{argmax, Adam, Architecture, QNetError, QNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("need {requested} samples, buffer holds {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] QNetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: usize,
    pub reward: f32,
    pub done: bool,
    pub next_state: AgentState,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// slot the next push overwrites once full
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Raw slot contents and the slot the next push overwrites; together
    /// with [`ReplayBuffer::from_parts`] this reproduces sampling exactly.
    pub fn parts(&self) -> (&[Transition], usize) {
        (&self.items, self.next)
    }

    pub fn from_parts(capacity: usize, items: Vec<Transition>, next: usize) -> Result<Self, AgentError> {
        if capacity == 0 || items.len() > capacity || (items.len() < capacity && next != 0) || next >= capacity.max(1) {
            return Err(AgentError::InvalidConfig(format!(
                "replay layout: {} items, capacity {capacity}, next slot {next}",
                items.len()
            )));
        }
        Ok(Self { capacity, items, next })
    }

    /// Transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.next);
        older.iter().chain(newer.iter())
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>, AgentError> {
        if batch > self.items.len() || batch == 0 {
            return Err(AgentError::InsufficientSamples {
                requested: batch,
                available: self.items.len(),
            });
        }
        Ok((0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentVariant {
    Dqn,
    Ddqn,
    #[serde(alias = "dueling-dqn", alias = "duelingdqn")]
    Dueling,
    D3qn,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 4] = [AgentVariant::Dqn, AgentVariant::Ddqn, AgentVariant::Dueling, AgentVariant::D3qn];

    pub fn name(self) -> &'static str {
        match self {
            AgentVariant::Dqn => "dqn",
            AgentVariant::Ddqn => "ddqn",
            AgentVariant::Dueling => "dueling",
            AgentVariant::D3qn => "d3qn",
        }
    }

    pub fn is_dueling(self) -> bool {
        matches!(self, AgentVariant::Dueling | AgentVariant::D3qn)
    }

    /// Whether the bootstrap action is chosen by the online network.
    pub fn is_double(self) -> bool {
        matches!(self, AgentVariant::Ddqn | AgentVariant::D3qn)
    }

    pub fn architecture(self, input_dim: usize) -> Architecture {
        if self.is_dueling() {
            Architecture::dueling(input_dim)
        } else {
            Architecture::plain(input_dim)
        }
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentVariant {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(AgentVariant::Dqn),
            "ddqn" | "double" => Ok(AgentVariant::Ddqn),
            "dueling" | "dueling-dqn" | "duelingdqn" => Ok(AgentVariant::Dueling),
            "d3qn" => Ok(AgentVariant::D3qn),
            other => Err(AgentError::InvalidConfig(format!(
                "unknown agent `{other}` (expected dqn, ddqn, dueling, d3qn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplorationMode {
    Random,
    Guided,
}

impl ExplorationMode {
    pub fn name(self) -> &'static str {
        match self {
            ExplorationMode::Random => "random",
            ExplorationMode::Guided => "guided",
        }
    }
}

impl FromStr for ExplorationMode {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(ExplorationMode::Random),
            "guided" => Ok(ExplorationMode::Guided),
            other => Err(AgentError::InvalidConfig(format!(
                "unknown exploration mode `{other}` (expected random or guided)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    pub gamma: f64,
    pub learning_rate: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay: f64,
    pub capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub target_sync: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: AgentVariant::Dqn,
            gamma: 0.9,
            learning_rate: 1e-4,
            eps_start: 1.0,
            eps_end: 0.01,
            eps_decay: 0.999,
            capacity: 10_000,
            batch_size: 64,
            warmup: 1_000,
            target_sync: 1_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: String| Err(AgentError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) || self.eps_end > self.eps_start {
            return fail(format!("need 0 <= eps_end ({}) <= eps_start ({}) <= 1", self.eps_end, self.eps_start));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return fail(format!("eps_decay {} outside (0, 1)", self.eps_decay));
        }
        if self.capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return fail("capacity, batch_size and target_sync must be positive".into());
        }
        if self.learning_rate < 0.0 {
            return fail("learning_rate must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub episodes: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay: f64) -> Self {
        Self {
            start,
            end,
            decay,
            epsilon: start,
            episodes: 0,
        }
    }

    pub fn from_config(c: &AgentConfig) -> Self {
        Self::new(c.eps_start, c.eps_end, c.eps_decay)
    }

    /// Called once per finished episode.
    pub fn decay(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.end);
        self.episodes += 1;
    }
}

/// Epsilon-greedy choice. With probability `1 - epsilon` the greedy action
/// (lowest index on ties); otherwise a uniform pick over all actions, or in
/// guided mode over `positive` when it is non-empty.
pub fn select_action<R: Rng + ?Sized>(
    q_values: &[f32],
    epsilon: f64,
    mode: ExplorationMode,
    positive: Option<&[Action]>,
    rng: &mut R,
) -> Action {
    if rng.gen::<f64>() >= epsilon {
        return Action::from_index(argmax(q_values)).unwrap_or(Action::Trigger);
    }
    match (mode, positive) {
        (ExplorationMode::Guided, Some(set)) if !set.is_empty() => *set.choose(rng).expect("non-empty"),
        _ => Action::ALL[rng.gen_range(0..Action::COUNT)],
    }
}

/// Bootstrap targets for a batch. Terminal samples get `r`; otherwise
/// DQN-style variants use `r + gamma * max_a Q(s', a; target)` and
/// double variants `r + gamma * Q(s', argmax_a Q(s', a; online); target)`.
pub fn compute_targets(
    batch: &[&Transition],
    online: &QNetwork<f32>,
    target: &QNetwork<f32>,
    variant: AgentVariant,
    gamma: f64,
) -> Result<Vec<f32>, AgentError> {
    if online.architecture() != target.architecture() {
        return Err(AgentError::ShapeMismatch("online and target networks differ".into()));
    }
    let dim = online.input_dim();
    let n = online.n_actions();
    let mut next = Vec::with_capacity(batch.len() * dim);
    for t in batch {
        if t.next_state.len() != dim {
            return Err(AgentError::ShapeMismatch(format!(
                "next state has {} values, network expects {dim}",
                t.next_state.len()
            )));
        }
        next.extend_from_slice(t.next_state.as_slice());
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let q_target = target.predict(&next, batch.len())?;
    let q_online = if variant.is_double() {
        Some(online.predict(&next, batch.len())?)
    } else {
        None
    };
    let gamma = gamma as f32;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            if t.done {
                return t.reward;
            }
            let row = &q_target[b * n..(b + 1) * n];
            let bootstrap = match &q_online {
                Some(q) => row[argmax(&q[b * n..(b + 1) * n])],
                None => row.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            };
            t.reward + gamma * bootstrap
        })
        .collect())
}

/// An online/target network pair with its optimiser, replay memory and
/// exploration schedule.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub online: QNetwork<f32>,
    pub target: QNetwork<f32>,
    pub optimizer: Adam<f32>,
    pub buffer: ReplayBuffer,
    pub schedule: EpsilonSchedule,
    pub train_steps: u64,
    pub since_sync: u64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, input_dim: usize, init_rng: &mut R) -> Result<Self, AgentError> {
        let net = QNetwork::new(config.variant.architecture(input_dim), init_rng)?;
        Self::from_network(config, net)
    }

    pub fn from_network(config: AgentConfig, online: QNetwork<f32>) -> Result<Self, AgentError> {
        config.validate()?;
        let target = online.copy_into_target();
        let optimizer = Adam::new(&online, config.learning_rate);
        Ok(Self {
            buffer: ReplayBuffer::new(config.capacity),
            schedule: EpsilonSchedule::from_config(&config),
            config,
            online,
            target,
            optimizer,
            train_steps: 0,
            since_sync: 0,
        })
    }

    pub fn q_values(&self, state: &AgentState) -> Result<Vec<f32>, AgentError> {
        Ok(self.online.predict_one(state.as_slice())?)
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.epsilon
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.copy_into_target();
        self.since_sync = 0;
    }

    pub fn end_episode(&mut self) {
        self.schedule.decay();
    }

    /// One gradient step on a sampled batch. Returns `None` until the
    /// buffer has reached the warm-up size.
    pub fn train_step<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        sample_rng: &mut R,
        dropout_rng: &mut D,
    ) -> Result<Option<f32>, AgentError> {
        if self.buffer.len() < self.config.warmup.max(self.config.batch_size) {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, sample_rng)?;
        let targets = compute_targets(&batch, &self.online, &self.target, self.config.variant, self.config.gamma)?;
        let dim = self.online.input_dim();
        let mut states = Vec::with_capacity(batch.len() * dim);
        let mut actions = Vec::with_capacity(batch.len());
        for t in &batch {
            states.extend_from_slice(t.state.as_slice());
            actions.push(t.action);
        }
        self.online.forward(&states, batch.len(), true, dropout_rng)?;
        let (grads, loss) = self.online.backward(&actions, &targets)?;
        self.optimizer.step(&mut self.online, &grads)?;
        self.train_steps += 1;
        self.since_sync += 1;
        if self.since_sync >= self.config.target_sync {
            self.sync_target();
        }
        Ok(Some(loss))
    }
}
