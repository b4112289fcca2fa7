//! Evaluation: 5-way next-image prediction, storyline recovery against
//! planted truth, transition-graph export and the story-length sweep.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fi_predict, nn_predict, BaselineError, ClusterRnn};
use crate::data::synthetic::AlbumTruth;
use crate::data::{Album, Dataset, PlantedTruth};
use crate::numerics::{squared_distance, RngStream};
use crate::rnn::{forward_step, init_params, score_future, RnnError, TrainConfig};
use crate::srnn::{train, Mode, SrnnError, SrnnModel, StorySample, ZPrior};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Srnn(#[from] SrnnError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("no ground-truth summary for album {0}")]
    MissingTruth(String),
    #[error("unknown album {0}")]
    UnknownAlbum(String),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    /// Next entry of the album's summary.
    Long,
    /// Literal next image of the album.
    Short,
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Horizon::Long => "long",
            Horizon::Short => "short",
        })
    }
}

impl std::str::FromStr for Horizon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "long" => Ok(Horizon::Long),
            "short" => Ok(Horizon::Short),
            other => Err(format!("unknown horizon `{other}` (expected long or short)")),
        }
    }
}

pub const NUM_DISTRACTORS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub album: String,
    pub given: usize,
    pub truth: usize,
    pub distractors: Vec<usize>,
    pub horizon: Horizon,
    /// `truth` and the distractors in presentation order.
    pub candidates: Vec<usize>,
}

impl PredictionInstance {
    pub fn answer_position(&self) -> usize {
        self.candidates
            .iter()
            .position(|&c| c == self.truth)
            .expect("truth is among the candidates")
    }
}

/// One instance per consecutive `(given, next)` pair: summary neighbours
/// for [`Horizon::Long`], album neighbours for [`Horizon::Short`].
/// Distractors come uniformly from the rest of the same album; albums too
/// small to supply them are skipped.
pub fn build_prediction_set(
    ds: &Dataset,
    truth: Option<&PlantedTruth>,
    horizon: Horizon,
    rng: &RngStream,
) -> Result<Vec<PredictionInstance>, EvalError> {
    let mut out = Vec::new();
    for (a, album) in ds.albums.iter().enumerate() {
        let pairs: Vec<(usize, usize)> = match horizon {
            Horizon::Short => (1..album.len()).map(|t| (t - 1, t)).collect(),
            Horizon::Long => {
                let t = truth
                    .and_then(|t| t.get(&album.id))
                    .ok_or_else(|| EvalError::MissingTruth(album.id.clone()))?;
                t.summary.windows(2).map(|w| (w[0], w[1])).collect()
            }
        };
        if album.len() < NUM_DISTRACTORS + 2 {
            if !pairs.is_empty() {
                warn!("album {} too small for {NUM_DISTRACTORS} distractors; skipped", album.id);
            }
            continue;
        }
        let mut rng = rng.substream(a as u64);
        for (given, next) in pairs {
            let picks = index::sample(&mut rng, album.len() - 2, NUM_DISTRACTORS);
            let (lo, hi) = (given.min(next), given.max(next));
            let distractors: Vec<usize> = picks
                .iter()
                .map(|mut i| {
                    if i >= lo {
                        i += 1;
                    }
                    if i >= hi {
                        i += 1;
                    }
                    i
                })
                .collect();
            let mut candidates = distractors.clone();
            candidates.push(next);
            candidates.shuffle(&mut rng);
            out.push(PredictionInstance {
                album: album.id.clone(),
                given,
                truth: next,
                distractors,
                horizon,
                candidates,
            });
        }
    }
    Ok(out)
}

/// Picks one of the candidate images as the successor of `given`; returns a
/// position in `candidates`.
pub trait Predictor: Sync {
    fn name(&self) -> String;

    fn choose(&self, album: &Album, given: usize, candidates: &[usize], rng: &mut RngStream) -> Result<usize, EvalError>;
}

pub struct RandomPredictor;

impl Predictor for RandomPredictor {
    fn name(&self) -> String {
        "random".into()
    }

    fn choose(&self, _: &Album, _: usize, candidates: &[usize], rng: &mut RngStream) -> Result<usize, EvalError> {
        Ok(rng.gen_range(0..candidates.len()))
    }
}

fn candidate_rows<'a>(album: &'a Album, candidates: &[usize]) -> Vec<&'a [f64]> {
    candidates.iter().map(|&c| album.feature(c)).collect()
}

/// Nearest neighbour in cosine similarity.
pub struct NnPredictor;

impl Predictor for NnPredictor {
    fn name(&self) -> String {
        "nn".into()
    }

    fn choose(&self, album: &Album, given: usize, candidates: &[usize], _: &mut RngStream) -> Result<usize, EvalError> {
        Ok(nn_predict(album.feature(given), &candidate_rows(album, candidates))?)
    }
}

/// Furthest image in cosine similarity.
pub struct FiPredictor;

impl Predictor for FiPredictor {
    fn name(&self) -> String {
        "fi".into()
    }

    fn choose(&self, album: &Album, given: usize, candidates: &[usize], _: &mut RngStream) -> Result<usize, EvalError> {
        Ok(fi_predict(album.feature(given), &candidate_rows(album, candidates))?)
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One forward step on the given image from `h_0`, then the softmax over
/// the candidates.
pub struct SrnnPredictor<'a> {
    pub model: &'a SrnnModel,
    pub label: String,
}

impl<'a> SrnnPredictor<'a> {
    pub fn new(model: &'a SrnnModel) -> Self {
        let label = match model.mode {
            Mode::Skip => "s-rnn".to_string(),
            Mode::NoSkip => "s-rnn-".to_string(),
            Mode::Diverse => "d-rnn".to_string(),
        };
        Self { model, label }
    }
}

impl Predictor for SrnnPredictor<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn choose(&self, album: &Album, given: usize, candidates: &[usize], _: &mut RngStream) -> Result<usize, EvalError> {
        let p = &self.model.params;
        let out = forward_step(p, album.feature(given), &vec![0.0; p.hidden()])?;
        let block: Vec<f64> = candidates
            .iter()
            .flat_map(|&c| album.feature(c).iter().copied())
            .collect();
        Ok(argmax_lowest(&score_future(&out.y, &block)?))
    }
}

/// Predicts the most likely next cluster, then the candidate closest to
/// that cluster's center.
pub struct ClusterRnnPredictor<'a> {
    pub model: &'a ClusterRnn,
}

impl Predictor for ClusterRnnPredictor<'_> {
    fn name(&self) -> String {
        "rnn".into()
    }

    fn choose(&self, album: &Album, given: usize, candidates: &[usize], _: &mut RngStream) -> Result<usize, EvalError> {
        let c = self.model.kmeans.assign(album.feature(given));
        let next = self.model.predict_next(&[c])?;
        let center = &self.model.kmeans.centers[next];
        let dists: Vec<f64> = candidates
            .iter()
            .map(|&i| -squared_distance(album.feature(i), center))
            .collect();
        Ok(argmax_lowest(&dists))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub task: String,
    pub metrics: Vec<Metric>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// Aligned plain-text table, one row per report and metric.
pub fn format_reports(reports: &[EvalReport]) -> String {
    let mut rows = vec![[
        "method".to_string(),
        "task".to_string(),
        "metric".to_string(),
        "value".to_string(),
        "count".to_string(),
    ]];
    for r in reports {
        for m in &r.metrics {
            rows.push([
                r.method.clone(),
                r.task.clone(),
                m.name.clone(),
                format!("{:.4}", m.value),
                m.count.to_string(),
            ]);
        }
    }
    let widths: Vec<usize> = (0..5)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i >= 3 { format!("{cell:>w$}") } else { format!("{cell:<w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Fraction of instances where the predictor picks the true successor.
/// Instance `i` draws from `rng.substream(i)`.
pub fn eval_prediction(
    method: &dyn Predictor,
    instances: &[PredictionInstance],
    ds: &Dataset,
    rng: &RngStream,
) -> Result<EvalReport, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Empty("no prediction instances".into()));
    }
    let index: HashMap<&str, &Album> = ds.albums.iter().map(|a| (a.id.as_str(), a)).collect();
    let hits: Vec<bool> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let album = index
                .get(inst.album.as_str())
                .ok_or_else(|| EvalError::UnknownAlbum(inst.album.clone()))?;
            let pos = method.choose(album, inst.given, &inst.candidates, &mut rng.substream(i as u64))?;
            Ok(pos == inst.answer_position())
        })
        .collect::<Result<_, EvalError>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    let horizon = instances[0].horizon;
    Ok(EvalReport {
        method: method.name(),
        task: format!("predict-{horizon}"),
        metrics: vec![Metric {
            name: "accuracy".into(),
            value: correct as f64 / instances.len() as f64,
            count: instances.len(),
        }],
        config: serde_json::Value::Null,
        seed: rng.seed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// Distinct planted states hit, over `L`.
    pub coverage: f64,
    /// Fraction of state pairs (by first occurrence) in planted order;
    /// `None` with fewer than two states hit.
    pub order_accuracy: Option<f64>,
}

/// Score selected album positions against the planted labels.
pub fn storyline_recovery(selection: &[usize], truth: &AlbumTruth, num_states: usize) -> RecoveryMetrics {
    let mut first_seen: Vec<usize> = Vec::new();
    for &i in selection {
        let s = truth.labels.get(i).copied().unwrap_or(0);
        if s != 0 && !first_seen.contains(&s) {
            first_seen.push(s);
        }
    }
    let coverage = if num_states == 0 {
        0.0
    } else {
        first_seen.len() as f64 / num_states as f64
    };
    let mut pairs = 0usize;
    let mut ordered = 0usize;
    for i in 0..first_seen.len() {
        for j in i + 1..first_seen.len() {
            pairs += 1;
            if first_seen[i] < first_seen[j] {
                ordered += 1;
            }
        }
    }
    RecoveryMetrics {
        coverage,
        order_accuracy: (pairs > 0).then(|| ordered as f64 / pairs as f64),
    }
}

pub fn eval_storyline_recovery(sample: &StorySample, truth: &PlantedTruth) -> Result<RecoveryMetrics, EvalError> {
    let t = truth
        .get(&sample.album)
        .ok_or_else(|| EvalError::MissingTruth(sample.album.clone()))?;
    Ok(storyline_recovery(sample.z.as_slice(), t, truth.num_states))
}

/// Mean coverage and order accuracy of per-album selections.
pub fn summarize_recovery(
    method: &str,
    selections: &[(String, Vec<usize>)],
    truth: &PlantedTruth,
) -> Result<EvalReport, EvalError> {
    if selections.is_empty() {
        return Err(EvalError::Empty(format!("no selections for {method}")));
    }
    let mut cov = 0.0;
    let mut ord = 0.0;
    let mut ord_n = 0usize;
    for (album, sel) in selections {
        let t = truth
            .get(album)
            .ok_or_else(|| EvalError::MissingTruth(album.clone()))?;
        let m = storyline_recovery(sel, t, truth.num_states);
        cov += m.coverage;
        if let Some(o) = m.order_accuracy {
            ord += o;
            ord_n += 1;
        }
    }
    let n = selections.len();
    Ok(EvalReport {
        method: method.to_string(),
        task: "storyline".into(),
        metrics: vec![
            Metric {
                name: "coverage".into(),
                value: cov / n as f64,
                count: n,
            },
            Metric {
                name: "order".into(),
                value: if ord_n == 0 { 0.0 } else { ord / ord_n as f64 },
                count: ord_n,
            },
        ],
        config: serde_json::Value::Null,
        seed: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    /// `(image id, selection count)` in output order.
    pub nodes: Vec<(String, usize)>,
    /// `(from, to, count)` sorted by endpoints.
    pub edges: Vec<(String, String, usize)>,
    /// Sum of all transition counts before truncation to the top nodes.
    pub total_transitions: usize,
}

pub const DEFAULT_GRAPH_NODES: usize = 10;

/// Count selections and consecutive transitions over stories, keeping the
/// `max_nodes` most selected images (ties by image id).
pub fn transition_graph(stories: &[StorySample], ds: &Dataset, max_nodes: usize) -> Result<TransitionGraph, EvalError> {
    if stories.is_empty() {
        return Err(EvalError::Empty("no stories to export".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut total = 0;
    for s in stories {
        let album = ds
            .album(&s.album)
            .ok_or_else(|| EvalError::UnknownAlbum(s.album.clone()))?;
        let ids: Vec<&str> = s
            .z
            .as_slice()
            .iter()
            .map(|&i| album.items[i].image_id.as_str())
            .collect();
        for id in &ids {
            *counts.entry(id.to_string()).or_default() += 1;
        }
        for w in ids.windows(2) {
            *edges.entry((w[0].to_string(), w[1].to_string())).or_default() += 1;
            total += 1;
        }
    }
    let mut nodes: Vec<(String, usize)> = counts.into_iter().collect();
    nodes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    nodes.truncate(max_nodes);
    let keep: std::collections::HashSet<&str> = nodes.iter().map(|(n, _)| n.as_str()).collect();
    let edges = edges
        .into_iter()
        .filter(|((a, b), _)| keep.contains(a.as_str()) && keep.contains(b.as_str()))
        .map(|((a, b), c)| (a, b, c))
        .collect();
    Ok(TransitionGraph {
        nodes,
        edges,
        total_transitions: total,
    })
}

fn dot_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl TransitionGraph {
    pub fn to_dot(&self, name: &str) -> String {
        self.to_dot_with_comment(name, None)
    }

    /// DOT text with an optional graph-level `comment` attribute.
    pub fn to_dot_with_comment(&self, name: &str, comment: Option<&str>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", dot_quote(name));
        if let Some(c) = comment {
            let _ = writeln!(out, "  comment={};", dot_quote(c));
        }
        let _ = writeln!(out, "  node [shape=box];");
        for (id, count) in &self.nodes {
            let _ = writeln!(
                out,
                "  {} [label={}, count={count}];",
                dot_quote(id),
                dot_quote(&format!("{id} ({count})"))
            );
        }
        for (a, b, c) in &self.edges {
            let _ = writeln!(
                out,
                "  {} -> {} [weight={c}, penwidth={c}, label=\"{c}\"];",
                dot_quote(a),
                dot_quote(b)
            );
        }
        out.push_str("}\n");
        out
    }
}

pub fn export_transition_graph(
    stories: &[StorySample],
    ds: &Dataset,
    max_nodes: usize,
    out: &std::path::Path,
) -> Result<TransitionGraph, EvalError> {
    let g = transition_graph(stories, ds, max_nodes)?;
    std::fs::write(out, g.to_dot(&ds.concept))?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub long_accuracy: Option<f64>,
    pub long_count: usize,
    pub short_accuracy: f64,
    pub short_count: usize,
    pub final_val_score: Option<f64>,
}

/// Train one skip model per story length on identical seeds and report
/// long- and short-term prediction accuracy on `val`.
pub fn n_sweep(
    train_ds: &Dataset,
    val: &Dataset,
    truth: Option<&PlantedTruth>,
    ns: &[usize],
    prior: ZPrior,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<Vec<SweepRow>, EvalError> {
    let long = match truth {
        Some(t) => Some(build_prediction_set(val, Some(t), Horizon::Long, &rng.substream(10))?),
        None => None,
    };
    let short = build_prediction_set(val, None, Horizon::Short, &rng.substream(11))?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let params = init_params(train_ds.dim, cfg.hidden, &mut rng.substream(20));
        let mut model = SrnnModel::new(params, n, Mode::Skip, train_ds.concept.clone())?.with_prior(prior);
        let history = train(&mut model, train_ds, val, cfg, &rng.substream(21))?;
        let predictor = SrnnPredictor::new(&model);
        let eval_rng = rng.substream(30);
        let long_report = match &long {
            Some(inst) if !inst.is_empty() => Some(eval_prediction(&predictor, inst, val, &eval_rng)?),
            _ => None,
        };
        let short_report = eval_prediction(&predictor, &short, val, &eval_rng)?;
        info!("N={n}: trained {} epochs", history.epochs.len());
        rows.push(SweepRow {
            n,
            long_accuracy: long_report.as_ref().and_then(|r| r.metric("accuracy")),
            long_count: long.as_ref().map_or(0, Vec::len),
            short_accuracy: short_report.metric("accuracy").unwrap_or(0.0),
            short_count: short.len(),
            final_val_score: history.epochs.last().map(|e| e.val_score),
        });
    }
    Ok(rows)
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:>9}  {:>6}  {:>9}  {:>6}", "N", "long_acc", "long_n", "short_acc", "short_n");
    for r in rows {
        let long = r.long_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            out,
            "{:>4}  {:>9}  {:>6}  {:>9.4}  {:>6}",
            r.n, long, r.long_count, r.short_accuracy, r.short_count
        );
    }
    out
}
