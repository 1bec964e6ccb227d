//! The bounding-box MDP.
//!
//! An episode starts from the full image (or a saliency proposal) and the
//! agent moves the box with the eight transforms until it fires TRIGGER or
//! runs out of steps.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{assemble_state, ActionHistory, AgentState, FeatureError, FeatureExtractor};
use crate::geometry::{apply_transform, iou, recall, Action, BoundingBox};
use crate::saliency::{initial_box, SaliencyError, SaraConfig};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("no ground-truth box for the target category")]
    NoGroundTruth,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error("render output {path}: {message}")]
    Render { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub alpha: f64,
    pub max_steps: usize,
    pub eta: f64,
    pub tau_train: f64,
    pub tau_eval: f64,
    pub zero_change_penalty: f64,
    pub use_sara_initial_box: bool,
    pub sara: SaraConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            max_steps: 40,
            eta: 3.0,
            tau_train: 0.6,
            tau_eval: 0.5,
            zero_change_penalty: -1.0,
            use_sara_initial_box: false,
            sara: SaraConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        for (name, tau) in [("tau_train", self.tau_train), ("tau_eval", self.tau_eval)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("{name} {tau} outside (0, 1]"));
            }
        }
        if self.eta <= 0.0 {
            return bad(format!("eta {} must be positive", self.eta));
        }
        self.sara.validate()?;
        Ok(())
    }

    pub fn tau(&self, mode: EnvMode) -> f64 {
        match mode {
            EnvMode::Train => self.tau_train,
            EnvMode::Eval => self.tau_eval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvMode {
    Train,
    Eval,
}

/// Trigger reward: `2 * eta * iou` when `iou >= tau`, otherwise `-eta`.
pub fn trigger_reward(iou: f64, tau: f64, eta: f64) -> f32 {
    if iou >= tau {
        (eta * 2.0 * iou) as f32
    } else {
        (-eta) as f32
    }
}

/// Transform reward from an IoU change.
pub fn transform_reward(before: f64, after: f64, zero_change_penalty: f64) -> f32 {
    let delta = after - before;
    if delta > 0.0 {
        1.0
    } else if delta < 0.0 {
        -1.0
    } else {
        zero_change_penalty as f32
    }
}

fn closest_index(b: &BoundingBox, gts: &[BoundingBox]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gts.iter().enumerate() {
        let v = iou(b, g);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub image: &'a RgbImage,
    pub ground_truth: Vec<BoundingBox>,
    pub mode: EnvMode,
    pub current: BoundingBox,
    pub closest: Option<usize>,
    pub t: usize,
    pub history: ActionHistory,
    pub done: bool,
    pub triggered: bool,
    pub cumulative_reward: f64,
}

impl<'a> Episode<'a> {
    pub fn closest_gt(&self) -> Option<&BoundingBox> {
        self.closest.map(|i| &self.ground_truth[i])
    }

    pub fn iou(&self) -> f64 {
        self.closest_gt().map_or(0.0, |g| iou(&self.current, g))
    }

    pub fn recall(&self) -> f64 {
        self.closest_gt().map_or(0.0, |g| recall(&self.current, g))
    }

    /// Box and reward that `action` would produce, without mutating.
    pub fn simulate(&self, action: Action, config: &EnvConfig) -> (BoundingBox, f32) {
        let iou_now = self.iou();
        if action.is_trigger() {
            return (self.current, trigger_reward(iou_now, config.tau(self.mode), config.eta));
        }
        let (w, h) = self.image.dimensions();
        let next = apply_transform(&self.current, action, config.alpha, w, h).expect("transform action");
        let after = self.closest_gt().map_or(0.0, |g| iou(&next, g));
        (next, transform_reward(iou_now, after, config.zero_change_penalty))
    }
}

/// Transforms whose simulated reward is +1, plus TRIGGER when the current
/// IoU clears the mode's threshold.
pub fn positive_actions(ep: &Episode, config: &EnvConfig) -> Result<Vec<Action>, EnvError> {
    if ep.ground_truth.is_empty() {
        return Err(EnvError::NoGroundTruth);
    }
    let mut out: Vec<Action> = Action::TRANSFORMS
        .iter()
        .copied()
        .filter(|&a| ep.simulate(a, config).1 > 0.0)
        .collect();
    if ep.iou() >= config.tau(ep.mode) {
        out.push(Action::Trigger);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    pub t: usize,
    pub action: Action,
    pub iou: f64,
    pub recall: f64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: AgentState,
    pub reward: f32,
    pub done: bool,
    pub info: StepInfo,
}

pub struct Environment<E> {
    pub config: EnvConfig,
    extractor: E,
}

impl<E: FeatureExtractor> Environment<E> {
    pub fn new(config: EnvConfig, extractor: E) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config, extractor })
    }

    pub fn extractor(&self) -> &E {
        &self.extractor
    }

    pub fn extractor_mut(&mut self) -> &mut E {
        &mut self.extractor
    }

    pub fn state_dim(&self) -> usize {
        self.extractor.descriptor().state_dim()
    }

    /// Initial box for `image` under the current configuration.
    pub fn initial_box(&self, image: &RgbImage) -> Result<BoundingBox, EnvError> {
        if self.config.use_sara_initial_box {
            Ok(initial_box(image, &self.config.sara)?)
        } else {
            Ok(BoundingBox::full_image(image.width(), image.height()))
        }
    }

    pub fn reset<'a>(
        &mut self,
        image: &'a RgbImage,
        ground_truth: &[BoundingBox],
        mode: EnvMode,
    ) -> Result<(Episode<'a>, AgentState), EnvError> {
        let start = self.initial_box(image)?;
        self.reset_from(image, ground_truth, start, mode)
    }

    /// Like [`Environment::reset`] with an explicitly supplied start box.
    pub fn reset_from<'a>(
        &mut self,
        image: &'a RgbImage,
        ground_truth: &[BoundingBox],
        start: BoundingBox,
        mode: EnvMode,
    ) -> Result<(Episode<'a>, AgentState), EnvError> {
        if ground_truth.is_empty() && mode == EnvMode::Train {
            return Err(EnvError::NoGroundTruth);
        }
        let ep = Episode {
            image,
            ground_truth: ground_truth.to_vec(),
            mode,
            current: start,
            closest: closest_index(&start, ground_truth),
            t: 0,
            history: ActionHistory::new(),
            done: false,
            triggered: false,
            cumulative_reward: 0.0,
        };
        let state = self.observe(&ep)?;
        Ok((ep, state))
    }

    pub fn observe(&mut self, ep: &Episode) -> Result<AgentState, EnvError> {
        let features = self.extractor.extract(ep.image, &ep.current)?;
        Ok(assemble_state(&features, &ep.history.encode(), self.extractor.descriptor())?)
    }

    pub fn step(&mut self, ep: &mut Episode, action: Action) -> Result<StepOutcome, EnvError> {
        if ep.done {
            return Err(EnvError::EpisodeFinished);
        }
        let (next, reward) = ep.simulate(action, &self.config);
        ep.current = next;
        ep.closest = closest_index(&next, &ep.ground_truth);
        ep.t += 1;
        ep.history.push(action);
        ep.cumulative_reward += f64::from(reward);
        if action.is_trigger() {
            ep.triggered = true;
            ep.done = true;
        }
        if ep.t >= self.config.max_steps {
            ep.done = true;
        }
        let state = self.observe(ep)?;
        Ok(StepOutcome {
            state,
            reward,
            done: ep.done,
            info: StepInfo {
                t: ep.t,
                action,
                iou: ep.iou(),
                recall: ep.recall(),
                bbox: ep.current,
            },
        })
    }
}

/// One line of the JSON action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub episode: usize,
    pub t: usize,
    pub action: Action,
    pub iou: f64,
    pub recall: f64,
    pub reward: f32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub done: bool,
}

impl LogRecord {
    pub fn from_outcome(episode: usize, outcome: &StepOutcome) -> Self {
        Self {
            episode,
            t: outcome.info.t,
            action: outcome.info.action,
            iou: outcome.info.iou,
            recall: outcome.info.recall,
            reward: outcome.reward,
            bbox: outcome.info.bbox.as_array(),
            done: outcome.done,
        }
    }
}

pub struct ActionLogger<W: Write> {
    out: W,
}

impl<W: Write> ActionLogger<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn log(&mut self, record: &LogRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

const CURRENT_COLOUR: Rgb<u8> = Rgb([255, 40, 40]);
const GT_COLOUR: Rgb<u8> = Rgb([40, 220, 40]);

fn draw_rect(img: &mut RgbImage, b: &BoundingBox, colour: Rgb<u8>) {
    let (x0, y0, x1, y1) = b.to_pixel_rect(img.width(), img.height());
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    for x in x0..x1 {
        img.put_pixel(x, y0, colour);
        img.put_pixel(x, y1 - 1, colour);
    }
    for y in y0..y1 {
        img.put_pixel(x0, y, colour);
        img.put_pixel(x1 - 1, y, colour);
    }
}

/// Black plus-shaped inhibition-of-return marker through the box centre.
fn draw_cross(img: &mut RgbImage, b: &BoundingBox) {
    let (x0, y0, x1, y1) = b.to_pixel_rect(img.width(), img.height());
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let (w, h) = (x1 - x0, y1 - y0);
    let tx = (w / 6).max(1);
    let ty = (h / 6).max(1);
    let (cx, cy) = (x0 + w / 2, y0 + h / 2);
    for y in y0..y1 {
        for x in x0..x1 {
            let on_vertical = x + tx / 2 >= cx && x < cx + tx - tx / 2;
            let on_horizontal = y + ty / 2 >= cy && y < cy + ty - ty / 2;
            if on_vertical || on_horizontal {
                img.put_pixel(x, y, Rgb([0, 0, 0]));
            }
        }
    }
}

/// Frame with the current box, the closest ground truth and, after a
/// trigger, the marker over the detected region.
pub fn render_frame(ep: &Episode) -> RgbImage {
    let mut img = ep.image.clone();
    if ep.triggered {
        draw_cross(&mut img, &ep.current);
    }
    if let Some(g) = ep.closest_gt() {
        draw_rect(&mut img, g, GT_COLOUR);
    }
    draw_rect(&mut img, &ep.current, CURRENT_COLOUR);
    img
}

pub fn frame_file_name(episode: usize, t: usize) -> String {
    format!("ep{episode}_step{t}.png")
}

pub fn save_frame(ep: &Episode, episode: usize, dir: &Path) -> Result<(), EnvError> {
    let path = dir.join(frame_file_name(episode, ep.t));
    render_frame(ep).save(&path).map_err(|e| EnvError::Render {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{BuiltinExtractor, BUILTIN_DIM, HISTORY_DIM};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn env() -> Environment<BuiltinExtractor> {
        Environment::new(EnvConfig::default(), BuiltinExtractor::new()).unwrap()
    }

    #[test]
    fn reward_rules() {
        assert_eq!(trigger_reward(0.5, 0.5, 3.0), 3.0);
        assert_eq!(trigger_reward(0.8, 0.5, 3.0), 4.8);
        assert_eq!(trigger_reward(0.4, 0.5, 3.0), -3.0);
        assert_eq!(trigger_reward(0.6, 0.6, 3.0), 3.6);
        assert_eq!(transform_reward(0.30, 0.42, -1.0), 1.0);
        assert_eq!(transform_reward(0.42, 0.30, -1.0), -1.0);
        assert_eq!(transform_reward(0.3, 0.3, -1.0), -1.0);
    }

    #[test]
    fn reset_semantics() {
        let img = RgbImage::new(500, 400);
        let mut e = env();
        let (ep, s) = e.reset(&img, &[bx(10.0, 10.0, 50.0, 50.0)], EnvMode::Train).unwrap();
        assert_eq!(ep.current, bx(0.0, 0.0, 500.0, 400.0));
        assert_eq!(s.len(), BUILTIN_DIM + HISTORY_DIM);
        let gts = [bx(10.0, 10.0, 50.0, 50.0), bx(0.0, 0.0, 500.0, 400.0)];
        let (ep, _) = e.reset(&img, &gts, EnvMode::Train).unwrap();
        assert_eq!(ep.closest, Some(1));
        assert!(matches!(e.reset(&img, &[], EnvMode::Train), Err(EnvError::NoGroundTruth)));
        assert!(e.reset(&img, &[], EnvMode::Eval).is_ok());

        let mut config = EnvConfig::default();
        config.use_sara_initial_box = true;
        config.sara.threshold = 1.0;
        let mut e = Environment::new(config, BuiltinExtractor::new()).unwrap();
        let (ep, _) = e.reset(&img, &gts, EnvMode::Train).unwrap();
        assert_eq!(ep.current, bx(0.0, 0.0, 500.0, 400.0));
    }

    #[test]
    fn positive_set_examples() {
        let img = RgbImage::new(200, 200);
        let mut e = env();
        let g = bx(20.0, 20.0, 80.0, 80.0);
        let (ep, _) = e.reset_from(&img, &[g], g, EnvMode::Train).unwrap();
        assert!(positive_actions(&ep, &e.config).unwrap().contains(&Action::Trigger));

        let (ep, _) = e.reset_from(&img, &[bx(50.0, 20.0, 110.0, 80.0)], g, EnvMode::Train).unwrap();
        let pos = positive_actions(&ep, &e.config).unwrap();
        assert!(pos.contains(&Action::Right));
        assert!(!pos.contains(&Action::Trigger));

        // disjoint and far away: no transform changes IoU from 0
        let (ep, _) = e
            .reset_from(&img, &[bx(180.0, 180.0, 200.0, 200.0)], bx(0.0, 0.0, 20.0, 20.0), EnvMode::Train)
            .unwrap();
        assert!(positive_actions(&ep, &e.config).unwrap().is_empty());

        let (ep, _) = e.reset_from(&img, &[], g, EnvMode::Eval).unwrap();
        assert!(matches!(positive_actions(&ep, &e.config), Err(EnvError::NoGroundTruth)));
    }

    #[test]
    fn episode_termination() {
        let img = RgbImage::new(100, 100);
        let mut e = env();
        let (mut ep, _) = e.reset(&img, &[bx(10.0, 10.0, 60.0, 60.0)], EnvMode::Train).unwrap();
        let mut steps = 0;
        loop {
            let out = e.step(&mut ep, Action::Left).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 40);
        assert!(!ep.triggered);
        assert!(matches!(e.step(&mut ep, Action::Left), Err(EnvError::EpisodeFinished)));

        let (mut ep, _) = e.reset(&img, &[bx(0.0, 0.0, 100.0, 100.0)], EnvMode::Eval).unwrap();
        let out = e.step(&mut ep, Action::Trigger).unwrap();
        assert!(out.done && ep.triggered);
        assert_eq!(out.reward, 6.0);
    }

    #[test]
    fn log_replay_matches_cumulative_reward() {
        let img = RgbImage::from_pixel(120, 90, Rgb([30, 30, 30]));
        let mut e = env();
        let gts = [bx(60.0, 10.0, 110.0, 60.0)];
        let (mut ep, _) = e.reset(&img, &gts, EnvMode::Train).unwrap();
        let plan = [Action::Smaller, Action::Right, Action::Up, Action::Up, Action::Fatter, Action::Trigger];
        let mut logger = ActionLogger::new(Vec::new());
        for a in plan {
            let out = e.step(&mut ep, a).unwrap();
            logger.log(&LogRecord::from_outcome(0, &out)).unwrap();
        }
        let text = String::from_utf8(logger.into_inner()).unwrap();
        let records: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), plan.len());
        assert!(text.lines().next().unwrap().contains("\"action\":\"SMALLER\""));
        let replayed: f64 = records.iter().map(|r| f64::from(r.reward)).sum();
        assert_eq!(replayed, ep.cumulative_reward);
        assert!(records.last().unwrap().done);

        // re-running the log reproduces every step exactly
        let (mut again, _) = e.reset(&img, &gts, EnvMode::Train).unwrap();
        for r in &records {
            let out = e.step(&mut again, r.action).unwrap();
            assert_eq!(LogRecord::from_outcome(0, &out), *r);
        }
    }

    #[test]
    fn frames() {
        let img = RgbImage::from_pixel(80, 60, Rgb([200, 200, 200]));
        let mut e = env();
        let g = bx(20.0, 10.0, 60.0, 50.0);
        let (mut ep, _) = e.reset_from(&img, &[g], g, EnvMode::Eval).unwrap();
        let before = render_frame(&ep);
        assert_eq!(before.dimensions(), (80, 60));
        assert!(!before.pixels().any(|p| *p == Rgb([0, 0, 0])));
        e.step(&mut ep, Action::Trigger).unwrap();
        let after = render_frame(&ep);
        assert_eq!(*after.get_pixel(40, 30), Rgb([0, 0, 0]));
        assert_eq!(*after.get_pixel(5, 5), Rgb([200, 200, 200]));
        assert_eq!(frame_file_name(2, 7), "ep2_step7.png");
    }
}
