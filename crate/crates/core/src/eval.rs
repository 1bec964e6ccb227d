//! Greedy detection and VOC-style precision/recall/AP.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::env::{EnvError, EnvMode, Environment, LogRecord};
use crate::features::FeatureExtractor;
use crate::geometry::{iou, Action, BoundingBox};
use crate::qnet::{argmax, QNetError, QNetwork};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mean average precision over an empty class list")]
    EmptyClassList,
    #[error("checkpoint does not fit the configured backbone: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] QNetError),
    #[error("worker failed: {0}")]
    Worker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: String,
    pub category: String,
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

mod box_array {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::geometry::BoundingBox;

    pub fn serialize<S: Serializer>(b: &BoundingBox, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(b.as_array())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BoundingBox, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        BoundingBox::new(x1, y1, x2, y2).map_err(D::Error::custom)
    }
}

/// A finished greedy episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub detection: Detection,
    pub triggered: bool,
    pub steps: usize,
    /// IoU with the closest ground truth, 0 when none was supplied
    pub final_iou: f64,
    pub log: Vec<LogRecord>,
}

/// Runs one greedy episode. The confidence is the TRIGGER Q-value of the
/// state the final box was judged from: the state where TRIGGER fired, or
/// the last state on timeout.
pub fn detect<E: FeatureExtractor>(
    env: &mut Environment<E>,
    net: &QNetwork<f32>,
    image: &Sample,
    category: &str,
) -> Result<DetectionRun, EvalError> {
    if net.input_dim() != env.state_dim() {
        return Err(EvalError::CheckpointMismatch(format!(
            "network expects {} inputs, extractor produces {}",
            net.input_dim(),
            env.state_dim()
        )));
    }
    let gts = image.annotation.boxes_for(category);
    let (mut ep, mut state) = env.reset(&image.image, &gts, EnvMode::Eval)?;
    let mut log = Vec::new();
    let confidence = loop {
        let q = net.predict_one(state.as_slice())?;
        let trigger_q = f64::from(q[Action::Trigger.index()]);
        let action = Action::from_index(argmax(&q)).unwrap_or(Action::Trigger);
        let outcome = env.step(&mut ep, action)?;
        log.push(LogRecord::from_outcome(0, &outcome));
        if action.is_trigger() {
            break trigger_q;
        }
        if outcome.done {
            let q = net.predict_one(outcome.state.as_slice())?;
            break f64::from(q[Action::Trigger.index()]);
        }
        state = outcome.state;
    };
    Ok(DetectionRun {
        detection: Detection {
            image: image.annotation.id.clone(),
            category: category.to_string(),
            bbox: ep.current,
            confidence,
        },
        triggered: ep.triggered,
        steps: ep.t,
        final_iou: ep.iou(),
        log,
    })
}

/// Ground truth as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BoundingBox,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// detection confidences in processing order (descending)
    pub confidences: Vec<f64>,
    /// TP flag per processed detection
    pub true_positive: Vec<bool>,
    pub n_ground_truth: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positive.iter().filter(|&&t| t).count()
    }

    pub fn fp(&self) -> usize {
        self.true_positive.len() - self.tp()
    }
}

/// Greedy VOC matching for one category. Detections go in descending
/// confidence; each takes its closest unmatched ground truth and is a TP when
/// that IoU reaches `threshold`. Difficult objects take no part.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &HashMap<String, Vec<GroundTruth>>,
    threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut used: HashMap<&str, Vec<bool>> = ground_truth
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();
    let n_ground_truth = ground_truth.values().flatten().filter(|g| !g.difficult).count();
    let mut true_positive = Vec::with_capacity(order.len());
    let mut confidences = Vec::with_capacity(order.len());
    for &i in &order {
        let d = &detections[i];
        confidences.push(d.confidence);
        let mut hit = false;
        if let (Some(gts), Some(flags)) = (ground_truth.get(&d.image), used.get_mut(d.image.as_str())) {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if g.difficult || flags[j] {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                if v >= threshold {
                    flags[j] = true;
                    hit = true;
                }
            }
        }
        true_positive.push(hit);
    }
    let tp = true_positive.iter().filter(|&&t| t).count();
    MatchResult {
        confidences,
        true_positive,
        n_ground_truth,
        false_negatives: n_ground_truth - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PRCurve {
    /// (recall, precision), one point per distinct confidence level
    pub points: Vec<(f64, f64)>,
}

impl PRCurve {
    /// Detections sharing a confidence are admitted together, so the curve
    /// is the same for every ordering of ties.
    pub fn from_matches(m: &MatchResult) -> Self {
        if m.n_ground_truth == 0 {
            return Self::default();
        }
        let n = m.true_positive.len();
        let total = m.n_ground_truth as f64;
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut points = Vec::new();
        for k in 0..n {
            if m.true_positive[k] {
                tp += 1;
            } else {
                fp += 1;
            }
            let group_end = k + 1 == n || m.confidences[k + 1] != m.confidences[k];
            if group_end {
                points.push((tp as f64 / total, tp as f64 / (tp + fp) as f64));
            }
        }
        Self { points }
    }
}

/// Sum over points of (R_k − R_{k−1})·P_k with R_0 = 0.
pub fn average_precision(curve: &PRCurve) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for &(r, p) in &curve.points {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::EmptyClassList);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryResult {
    pub category: String,
    pub ap: f64,
    pub runs: Vec<DetectionRun>,
    pub matches: MatchResult,
}

/// Ground-truth table for one category over `samples`.
pub fn ground_truth_for(samples: &[Sample], category: &str) -> HashMap<String, Vec<GroundTruth>> {
    samples
        .iter()
        .map(|s| {
            let g = s
                .annotation
                .objects
                .iter()
                .filter(|o| o.category == category)
                .map(|o| GroundTruth {
                    bbox: o.bbox,
                    difficult: o.difficult,
                })
                .collect();
            (s.annotation.id.clone(), g)
        })
        .collect()
}

/// Detects on every evaluation image of `category` and scores the result.
/// By default only images containing the category are used; with
/// `all_images` every sample gets a detection.
///
/// Work is split over `jobs` threads, each with its own environment from
/// `make_env`. Results are independent of `jobs`.
pub fn evaluate_category<E, F>(
    make_env: F,
    net: &QNetwork<f32>,
    samples: &[Sample],
    category: &str,
    all_images: bool,
    jobs: usize,
) -> Result<CategoryResult, EvalError>
where
    E: FeatureExtractor,
    F: Fn() -> Result<Environment<E>, EvalError> + Sync,
{
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| all_images || s.annotation.objects.iter().any(|o| o.category == category))
        .collect();
    let jobs = jobs.max(1).min(selected.len().max(1));
    let chunk = selected.len().div_ceil(jobs).max(1);
    let runs: Vec<DetectionRun> = std::thread::scope(|scope| {
        let handles: Vec<_> = selected
            .chunks(chunk)
            .map(|part| {
                let make_env = &make_env;
                scope.spawn(move || -> Result<Vec<DetectionRun>, EvalError> {
                    let mut env = make_env()?;
                    part.iter().map(|s| detect(&mut env, net, s, category)).collect()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(selected.len());
        for h in handles {
            let part = h.join().map_err(|_| EvalError::Worker("detection thread panicked".into()))??;
            all.extend(part);
        }
        Ok::<_, EvalError>(all)
    })?;
    let detections: Vec<Detection> = runs.iter().map(|r| r.detection.clone()).collect();
    let gt = ground_truth_for(samples, category);
    let matches = match_detections(&detections, &gt, 0.5);
    let ap = average_precision(&PRCurve::from_matches(&matches));
    Ok(CategoryResult {
        category: category.to_string(),
        ap,
        runs,
        matches,
    })
}

pub fn write_ap_csv<W: Write>(results: &[(String, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "category,AP")?;
    for (c, ap) in results {
        writeln!(out, "{c},{ap:.6}")?;
    }
    let aps: Vec<f64> = results.iter().map(|(_, a)| *a).collect();
    if let Ok(m) = mean_average_precision(&aps) {
        writeln!(out, "mAP,{m:.6}")?;
    }
    Ok(())
}

pub fn write_detections_jsonl<W: Write>(detections: &[Detection], mut out: W) -> std::io::Result<()> {
    for d in detections {
        serde_json::to_writer(&mut out, d).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
