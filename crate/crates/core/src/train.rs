//! Per-category training loop, metrics and resumable snapshots.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    select_action, AgentConfig, AgentError, AgentVariant, DqnAgent, EpsilonSchedule, ExplorationMode, ReplayBuffer,
    Transition,
};
use crate::data::Sample;
use crate::env::{positive_actions, save_frame, ActionLogger, EnvConfig, EnvError, EnvMode, Environment, LogRecord};
use crate::features::{AgentState, FeatureExtractor};
use crate::geometry::BoundingBox;
use crate::qnet::{self, CheckpointError, QNetwork, TrainingMetadata};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training image contains category `{0}`")]
    EmptyCategory(String),
    #[error("cannot write {path}: {message}")]
    CheckpointWriteFailure { path: PathBuf, message: String },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("resume snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneChoice {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub category: String,
    pub variant: AgentVariant,
    pub exploration: ExplorationMode,
    pub backbone: BackboneChoice,
    pub feature_service: Option<String>,
    pub sara_trained: bool,
    pub sara_inference: bool,
    pub epochs: usize,
    pub seed: u64,
    /// environment steps per gradient step
    pub train_every: usize,
    /// stop after this many episodes even mid-epoch
    pub max_episodes: Option<usize>,
    pub agent: AgentConfig,
    pub env: EnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            category: String::new(),
            variant: AgentVariant::D3qn,
            exploration: ExplorationMode::Random,
            backbone: BackboneChoice::Builtin,
            feature_service: None,
            sara_trained: false,
            sara_inference: false,
            epochs: 15,
            seed: 0,
            train_every: 1,
            max_episodes: None,
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |message: String| TrainError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Agent parameters with the top-level variant applied.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            variant: self.variant,
            ..self.agent.clone()
        }
    }

    /// Environment parameters for training or inference.
    pub fn env_config(&self, mode: EnvMode) -> EnvConfig {
        EnvConfig {
            use_sara_initial_box: match mode {
                EnvMode::Train => self.sara_trained,
                EnvMode::Eval => self.sara_inference,
            },
            ..self.env.clone()
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}_sara{}",
            self.category,
            self.variant,
            self.exploration.name(),
            if self.sara_trained { "on" } else { "off" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epoch: usize,
    pub category: String,
    pub total_reward: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub mean_loss: Option<f64>,
    pub final_iou: f64,
    pub triggered: bool,
}

pub const METRICS_HEADER: &str = "episode,epoch,category,total_reward,steps,epsilon,mean_loss,final_iou,triggered";

pub fn write_metrics_row<W: Write>(out: &mut W, r: &EpisodeRecord) -> std::io::Result<()> {
    let loss = r.mean_loss.map(|l| format!("{l:.6}")).unwrap_or_default();
    writeln!(
        out,
        "{},{},{},{:.6},{},{:.6},{},{:.6},{}",
        r.episode,
        r.epoch,
        r.category,
        r.total_reward,
        r.steps,
        r.epsilon,
        loss,
        r.final_iou,
        u8::from(r.triggered)
    )
}

pub fn write_metrics_csv<W: Write>(records: &[EpisodeRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        write_metrics_row(&mut out, r)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub config: ExperimentConfig,
    pub episodes: Vec<EpisodeRecord>,
    pub duration_secs: f64,
    pub final_checkpoint: Option<PathBuf>,
    pub agent: DqnAgent,
}

impl TrainingReport {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_reward).collect()
    }
}

/// Where training writes its artefacts. Everything is optional so the loop
/// can also run purely in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub action_log: Option<PathBuf>,
    /// one PNG per step, named `ep{E}_step{T}.png`
    pub frames_dir: Option<PathBuf>,
    /// snapshot written by an earlier run to continue from
    pub resume_from: Option<PathBuf>,
}

pub fn checkpoint_name(category: &str, variant: AgentVariant, epoch: usize) -> String {
    format!("{category}_{variant}_ep{epoch}.qnet")
}

pub fn snapshot_name(category: &str, variant: AgentVariant, epoch: usize) -> String {
    format!("{category}_{variant}_ep{epoch}.resume")
}

/// Independent generators derived from the experiment seed. Epoch `e` uses
/// its own streams so a resumed run replays the same randomness.
struct Streams {
    shuffle: ChaCha8Rng,
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, 0)
}

fn epoch_streams(seed: u64, epoch: usize) -> Streams {
    let base = 1 + 4 * epoch as u64;
    Streams {
        shuffle: stream(seed, base),
        explore: stream(seed, base + 1),
        replay: stream(seed, base + 2),
        dropout: stream(seed, base + 3),
    }
}

fn write_failure(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::CheckpointWriteFailure {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Trains a class-specific agent on every sample containing
/// `config.category`: one episode per image per epoch, images shuffled
/// each epoch.
pub fn train_category<E: FeatureExtractor>(
    samples: &[Sample],
    config: &ExperimentConfig,
    extractor: E,
    outputs: &TrainOutputs,
) -> Result<TrainingReport, TrainError> {
    let started = Instant::now();
    let pool: Vec<(&Sample, Vec<BoundingBox>)> = samples
        .iter()
        .map(|s| (s, s.annotation.boxes_for(&config.category)))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    if pool.is_empty() {
        return Err(TrainError::EmptyCategory(config.category.clone()));
    }

    let mut env = Environment::new(config.env_config(EnvMode::Train), extractor)?;
    let backbone = env.extractor().descriptor().clone();
    let agent_config = config.agent_config();
    let (mut agent, mut episodes, first_epoch) = match &outputs.resume_from {
        Some(path) => {
            let snap = read_snapshot(path, &agent_config)?;
            (snap.agent, snap.episodes, snap.epochs_done)
        }
        None => {
            let mut rng = init_rng(config.seed);
            (DqnAgent::new(agent_config, backbone.state_dim(), &mut rng)?, Vec::new(), 0)
        }
    };

    // the initial box depends only on the image, so compute it once
    let starts: Vec<BoundingBox> = pool
        .iter()
        .map(|(s, _)| env.initial_box(&s.image))
        .collect::<Result<_, _>>()?;

    if let Some(dir) = &outputs.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| write_failure(dir, e))?;
    }
    let mut logger = match &outputs.action_log {
        Some(p) => Some(ActionLogger::new(BufWriter::new(
            fs::File::create(p).map_err(|e| write_failure(p, e))?,
        ))),
        None => None,
    };

    let train_every = config.train_every.max(1);
    let mut env_steps: u64 = episodes.iter().map(|e: &EpisodeRecord| e.steps as u64).sum();
    let mut final_checkpoint = None;
    let limit = config.max_episodes.unwrap_or(usize::MAX);

    'epochs: for epoch in first_epoch..config.epochs {
        if episodes.len() >= limit {
            break;
        }
        let mut rngs = epoch_streams(config.seed, epoch);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rngs.shuffle);
        for &i in &order {
            if episodes.len() >= limit {
                break 'epochs;
            }
            let (sample, gts) = &pool[i];
            let episode_index = episodes.len();
            let (mut ep, mut state) = env.reset_from(&sample.image, gts, starts[i], EnvMode::Train)?;
            if let Some(dir) = &outputs.frames_dir {
                save_frame(&ep, episode_index, dir)?;
            }
            let epsilon = agent.epsilon();
            let mut losses = Vec::new();
            loop {
                let q = agent.q_values(&state)?;
                let positive = match config.exploration {
                    ExplorationMode::Guided => Some(positive_actions(&ep, &env.config)?),
                    ExplorationMode::Random => None,
                };
                let action = select_action(&q, epsilon, config.exploration, positive.as_deref(), &mut rngs.explore);
                let outcome = env.step(&mut ep, action)?;
                if let Some(dir) = &outputs.frames_dir {
                    save_frame(&ep, episode_index, dir)?;
                }
                if let Some(l) = logger.as_mut() {
                    l.log(&LogRecord::from_outcome(episode_index, &outcome))
                        .map_err(|e| write_failure(outputs.action_log.as_deref().unwrap_or(Path::new("")), e))?;
                }
                let next_state: AgentState = outcome.state.clone();
                agent.remember(Transition {
                    state,
                    action: action.index(),
                    reward: outcome.reward,
                    done: outcome.done,
                    next_state: next_state.clone(),
                });
                env_steps += 1;
                if env_steps % train_every as u64 == 0 {
                    if let Some(loss) = agent.train_step(&mut rngs.replay, &mut rngs.dropout)? {
                        losses.push(f64::from(loss));
                    }
                }
                state = next_state;
                if outcome.done {
                    break;
                }
            }
            agent.end_episode();
            episodes.push(EpisodeRecord {
                episode: episode_index,
                epoch,
                category: config.category.clone(),
                total_reward: ep.cumulative_reward,
                steps: ep.t,
                epsilon,
                mean_loss: if losses.is_empty() {
                    None
                } else {
                    Some(losses.iter().sum::<f64>() / losses.len() as f64)
                },
                final_iou: ep.iou(),
                triggered: ep.triggered,
            });
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            let path = dir.join(checkpoint_name(&config.category, config.variant, epoch + 1));
            let meta = TrainingMetadata {
                category: config.category.clone(),
                variant: config.variant.name().to_string(),
                epoch: epoch + 1,
                episodes: episodes.len(),
                seed: config.seed,
            };
            qnet::save(&agent.online, &backbone, &meta, &path)?;
            let snap_path = dir.join(snapshot_name(&config.category, config.variant, epoch + 1));
            write_snapshot(&snap_path, &agent, &episodes, epoch + 1)?;
            final_checkpoint = Some(path);
        }
    }

    if let Some(l) = logger {
        l.into_inner().flush().map_err(|e| write_failure(Path::new("action log"), e))?;
    }
    if let Some(path) = &outputs.metrics_csv {
        let file = fs::File::create(path).map_err(|e| write_failure(path, e))?;
        write_metrics_csv(&episodes, BufWriter::new(file)).map_err(|e| write_failure(path, e))?;
    }
    Ok(TrainingReport {
        config: config.clone(),
        episodes,
        duration_secs: started.elapsed().as_secs_f64(),
        final_checkpoint,
        agent,
    })
}

/// Trailing moving average; the first `window - 1` points average over
/// what is available.
pub fn reward_curve(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallClockRow {
    pub config: String,
    pub seconds: f64,
}

pub fn wall_clock_report(reports: &[TrainingReport]) -> Vec<WallClockRow> {
    reports
        .iter()
        .map(|r| WallClockRow {
            config: r.config.label(),
            seconds: r.duration_secs,
        })
        .collect()
}

pub fn write_wall_clock_csv<W: Write>(rows: &[WallClockRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "config,seconds")?;
    for r in rows {
        writeln!(out, "{},{:.3}", r.config, r.seconds)?;
    }
    Ok(())
}

// Resume snapshots: everything needed to continue a run bit-exactly.
//
//   "SRLVRSUM" | u32 header_len | JSON header | f32/u8 body | crc32(body)

const SNAPSHOT_MAGIC: &[u8; 8] = b"SRLVRSUM";

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    epochs_done: usize,
    architecture: crate::qnet::Architecture,
    schedule: EpsilonSchedule,
    train_steps: u64,
    since_sync: u64,
    adam_step: u64,
    buffer_capacity: usize,
    buffer_len: usize,
    buffer_next: usize,
    episodes: Vec<EpisodeRecord>,
}

struct Snapshot {
    agent: DqnAgent,
    episodes: Vec<EpisodeRecord>,
    epochs_done: usize,
}

fn put_f32s(body: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        body.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_snapshot(path: &Path, agent: &DqnAgent, episodes: &[EpisodeRecord], epochs_done: usize) -> Result<(), TrainError> {
    let (items, next) = agent.buffer.parts();
    let header = SnapshotHeader {
        epochs_done,
        architecture: agent.online.architecture().clone(),
        schedule: agent.schedule,
        train_steps: agent.train_steps,
        since_sync: agent.since_sync,
        adam_step: agent.optimizer.steps(),
        buffer_capacity: agent.buffer.capacity(),
        buffer_len: items.len(),
        buffer_next: next,
        episodes: episodes.to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| write_failure(path, e))?;
    let mut body = Vec::new();
    for p in agent.online.params().chain(agent.target.params()) {
        put_f32s(&mut body, p);
    }
    let (m, v) = agent.optimizer.moments();
    for p in m.iter().chain(v) {
        put_f32s(&mut body, p);
    }
    for t in items {
        put_f32s(&mut body, t.state.as_slice());
        put_f32s(&mut body, t.next_state.as_slice());
        body.push(t.action as u8);
        body.extend_from_slice(&t.reward.to_le_bytes());
        body.push(u8::from(t.done));
    }
    let mut out = Vec::with_capacity(body.len() + json.len() + 16);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    fs::write(path, out).map_err(|e| write_failure(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Some(a)
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Some(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn fill(&mut self, dst: &mut [f32]) -> Option<()> {
        let v = self.f32s(dst.len())?;
        dst.copy_from_slice(&v);
        Some(())
    }
}

fn read_snapshot(path: &Path, config: &AgentConfig) -> Result<Snapshot, TrainError> {
    let fail = |message: String| TrainError::Snapshot {
        path: path.to_path_buf(),
        message,
    };
    let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
    let mut r = Reader { buf: &bytes };
    if r.take(8) != Some(SNAPSHOT_MAGIC.as_slice()) {
        return Err(fail("not a resume snapshot".into()));
    }
    let len = r
        .take(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| fail("truncated".into()))?;
    let header: SnapshotHeader =
        serde_json::from_slice(r.take(len).ok_or_else(|| fail("truncated header".into()))?).map_err(|e| fail(e.to_string()))?;
    if r.buf.len() < 4 {
        return Err(fail("truncated".into()));
    }
    let (body, crc) = r.buf.split_at(r.buf.len() - 4);
    if crc32fast::hash(body).to_le_bytes() != crc {
        return Err(fail("checksum mismatch".into()));
    }
    if header.architecture != config.variant.architecture(header.architecture.input_dim) {
        return Err(fail(format!("snapshot was taken with a different agent than `{}`", config.variant)));
    }
    let truncated = || fail("truncated body".into());
    let mut r = Reader { buf: body };
    let mut online = QNetwork::<f32>::zeros(header.architecture.clone()).map_err(|e| fail(e.to_string()))?;
    let mut target = online.clone();
    for p in online.params_mut() {
        r.fill(p).ok_or_else(truncated)?;
    }
    for p in target.params_mut() {
        r.fill(p).ok_or_else(truncated)?;
    }
    let shapes: Vec<usize> = online.params().map(<[f32]>::len).collect();
    let mut moments = Vec::with_capacity(2 * shapes.len());
    for &n in shapes.iter().chain(&shapes) {
        moments.push(r.f32s(n).ok_or_else(truncated)?);
    }
    let v = moments.split_off(shapes.len());
    let dim = header.architecture.input_dim;
    let mut items = Vec::with_capacity(header.buffer_len);
    for _ in 0..header.buffer_len {
        let state = AgentState(r.f32s(dim).ok_or_else(truncated)?);
        let next_state = AgentState(r.f32s(dim).ok_or_else(truncated)?);
        let action = r.take(1).ok_or_else(truncated)?[0] as usize;
        let reward = r.f32s(1).ok_or_else(truncated)?[0];
        let done = r.take(1).ok_or_else(truncated)?[0] != 0;
        items.push(Transition {
            state,
            action,
            reward,
            done,
            next_state,
        });
    }
    if !r.buf.is_empty() {
        return Err(fail("trailing bytes".into()));
    }
    let mut agent = DqnAgent::from_network(config.clone(), online)?;
    agent.target = target;
    agent.optimizer.restore(header.adam_step, moments, v).map_err(AgentError::from)?;
    agent.buffer = ReplayBuffer::from_parts(header.buffer_capacity, items, header.buffer_next)?;
    agent.schedule = header.schedule;
    agent.train_steps = header.train_steps;
    agent.since_sync = header.since_sync;
    Ok(Snapshot {
        agent,
        episodes: header.episodes,
        epochs_done: header.epochs_done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average() {
        assert_eq!(reward_curve(&[1.0, 5.0, -2.0], 1), vec![1.0, 5.0, -2.0]);
        assert_eq!(reward_curve(&[4.0; 6], 3), vec![4.0; 6]);
        assert_eq!(reward_curve(&[0.0, 2.0], 2), vec![0.0, 1.0]);
        assert_eq!(reward_curve(&[], 5), Vec::<f64>::new());
    }

    #[test]
    fn config_from_toml() {
        let c = ExperimentConfig::from_toml_str(
            r#"
category = "dog"
variant = "ddqn"
exploration = "guided"
epochs = 3
seed = 11
sara_trained = true

[agent]
batch_size = 16
warmup = 32

[env]
eta = 2.5

[env.sara]
threshold = 0.4
"#,
        )
        .unwrap();
        assert_eq!(c.category, "dog");
        assert_eq!(c.agent_config().variant, AgentVariant::Ddqn);
        assert_eq!(c.agent.batch_size, 16);
        assert_eq!(c.agent.capacity, 10_000);
        assert_eq!(c.env.eta, 2.5);
        assert_eq!(c.env.sara.threshold, 0.4);
        assert!(c.env_config(EnvMode::Train).use_sara_initial_box);
        assert!(!c.env_config(EnvMode::Eval).use_sara_initial_box);
        assert!(ExperimentConfig::from_toml_str("categroy = \"x\"").is_err());
    }

    #[test]
    fn metrics_format() {
        let r = EpisodeRecord {
            episode: 3,
            epoch: 0,
            category: "block".into(),
            total_reward: 2.5,
            steps: 7,
            epsilon: 0.997003,
            mean_loss: None,
            final_iou: 0.625,
            triggered: true,
        };
        let mut out = Vec::new();
        write_metrics_csv(&[r], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{METRICS_HEADER}\n3,0,block,2.500000,7,0.997003,,0.625000,1\n")
        );
    }

    #[test]
    fn wall_clock_rows() {
        assert!(wall_clock_report(&[]).is_empty());
        let mut out = Vec::new();
        write_wall_clock_csv(
            &[WallClockRow {
                config: "a".into(),
                seconds: 1.5,
            }],
            &mut out,
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "config,seconds\na,1.500\n");
    }
}
