//! Elman recurrent network with a softmax loss over a per-step candidate
//! set, exact backpropagation through time and momentum SGD.
//!
//! One step of the network is
//!
//! ```text
//! h_t = sigmoid(W_I x_t + W_R h_{t-1})
//! y_t = W_O h_t
//! ```
//!
//! and the likelihood of the next item is a softmax of `y_t · c` over the
//! candidate rows `c`. There are no bias terms and `h_0 = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Album;
use crate::numerics::{
    matvec, matvec_transposed, log_sum_exp, row_dots, sigmoid, stable_softmax, Matrix, NumericsError, RngStream,
};
use crate::story::{StoryError, StoryIndices};

#[derive(Debug, Error)]
pub enum RnnError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// `H × D`
    pub input: Matrix,
    /// `H × H`
    pub recurrent: Matrix,
    /// `D × H`
    pub output: Matrix,
}

/// Same layout as [`RnnParams`].
pub type Gradients = RnnParams;

impl RnnParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            input: Matrix::zeros(hidden, dim),
            recurrent: Matrix::zeros(hidden, hidden),
            output: Matrix::zeros(dim, hidden),
        }
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn hidden(&self) -> usize {
        self.input.rows()
    }

    pub fn num_params(&self) -> usize {
        let (d, h) = (self.dim(), self.hidden());
        2 * d * h + h * h
    }

    /// Concatenation of `W_I`, `W_R`, `W_O`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.input.as_slice());
        v.extend_from_slice(self.recurrent.as_slice());
        v.extend_from_slice(self.output.as_slice());
        v
    }

    pub fn from_flat(dim: usize, hidden: usize, flat: &[f64]) -> Result<Self, RnnError> {
        let (a, b) = (hidden * dim, hidden * hidden);
        if flat.len() != 2 * a + b {
            return Err(RnnError::Shape(format!(
                "expected {} values, got {}",
                2 * a + b,
                flat.len()
            )));
        }
        Ok(Self {
            input: Matrix::from_vec(hidden, dim, flat[..a].to_vec())?,
            recurrent: Matrix::from_vec(hidden, hidden, flat[a..a + b].to_vec())?,
            output: Matrix::from_vec(dim, hidden, flat[a + b..].to_vec())?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.input.is_finite() && self.recurrent.is_finite() && self.output.is_finite()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.input.rows() == other.input.rows()
            && self.input.cols() == other.input.cols()
            && self.output.rows() == other.output.rows()
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.input, &mut self.recurrent, &mut self.output]
    }

    fn matrices(&self) -> [&Matrix; 3] {
        [&self.input, &self.recurrent, &self.output]
    }
}

/// Entries i.i.d. uniform on (−0.1, 0.1).
pub fn init_params(dim: usize, hidden: usize, rng: &mut RngStream) -> RnnParams {
    let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-0.1..0.1));
    let input = draw(hidden, dim);
    let recurrent = draw(hidden, hidden);
    let output = draw(dim, hidden);
    RnnParams {
        input,
        recurrent,
        output,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub grad_clip: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    /// Stories sampled per validation album when scoring an epoch.
    pub validation_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-7,
            hidden: 50,
            grad_clip: 5.0,
            plateau_patience: 3,
            lr_decay_factor: 0.5,
            max_epochs: 50,
            validation_samples: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const MIN_LEARNING_RATE: f64 = 1e-5;

    /// Returns the offending field name on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(("learning_rate", "must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(("momentum", "must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(("weight_decay", "must be nonnegative".into()));
        }
        if self.hidden == 0 {
            return Err(("hidden", "must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(("grad_clip", "must be positive".into()));
        }
        if self.plateau_patience == 0 {
            return Err(("plateau_patience", "must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(("lr_decay_factor", "must lie in (0, 1)".into()));
        }
        if self.validation_samples == 0 {
            return Err(("validation_samples", "must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocity: RnnParams,
}

impl MomentumState {
    pub fn new(params: &RnnParams) -> Self {
        Self {
            velocity: RnnParams::zeros(params.dim(), params.hidden()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub h: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn forward_step(p: &RnnParams, x: &[f64], h_prev: &[f64]) -> Result<StepOutput, RnnError> {
    let mut pre = matvec(&p.input, x)?;
    let rec = matvec(&p.recurrent, h_prev)?;
    for (a, r) in pre.iter_mut().zip(&rec) {
        *a += r;
    }
    let h = sigmoid(&pre);
    let y = matvec(&p.output, &h)?;
    Ok(StepOutput { h, y })
}

/// Softmax of `y · c` over candidate rows, given as a flat row-major block
/// of width `y.len()`.
pub fn score_future(y: &[f64], candidates: &[f64]) -> Result<Vec<f64>, RnnError> {
    if y.is_empty() || !candidates.len().is_multiple_of(y.len()) {
        return Err(NumericsError::DimensionMismatch {
            expected: y.len(),
            actual: candidates.len(),
        }
        .into());
    }
    if candidates.is_empty() {
        return Err(NumericsError::Empty.into());
    }
    Ok(stable_softmax(&row_dots(candidates, y))?)
}

/// One supervised step: feed `input`, then predict `target` among the
/// rows of `candidates`.
#[derive(Debug, Clone, Copy)]
pub struct Step<'a> {
    pub input: &'a [f64],
    pub candidates: &'a [f64],
    pub target: usize,
}

/// Steps for a story: step `n` consumes `x[z_n]` and predicts `x[z_{n+1}]`
/// among every album image after `z_n`.
pub fn story_steps<'a>(album: &'a Album, z: &StoryIndices) -> Result<Vec<Step<'a>>, RnnError> {
    let t = album.len();
    if let Some(&last) = z.as_slice().last() {
        if last >= t {
            return Err(StoryError::OutOfBounds { index: last, len: t }.into());
        }
    }
    Ok(z.as_slice()
        .windows(2)
        .map(|w| Step {
            input: album.feature(w[0]),
            candidates: album.features.row_block(w[0] + 1, t),
            target: w[1] - w[0] - 1,
        })
        .collect())
}

struct Trace {
    /// `hs[0]` is `h_0`; `hs[n + 1]` is the state after step `n`.
    hs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    nll: f64,
}

fn check_step(p: &RnnParams, step: &Step<'_>) -> Result<(), RnnError> {
    let d = p.dim();
    if step.input.len() != d || !step.candidates.len().is_multiple_of(d) {
        return Err(NumericsError::DimensionMismatch {
            expected: d,
            actual: step.input.len(),
        }
        .into());
    }
    let count = step.candidates.len() / d;
    if step.target >= count {
        return Err(RnnError::Shape(format!(
            "target {} outside candidate set of {count}",
            step.target
        )));
    }
    Ok(())
}

fn run_forward(p: &RnnParams, steps: &[Step<'_>]) -> Result<Trace, RnnError> {
    let mut hs = Vec::with_capacity(steps.len() + 1);
    hs.push(vec![0.0; p.hidden()]);
    let mut probs = Vec::with_capacity(steps.len());
    let mut nll = 0.0;
    for step in steps {
        check_step(p, step)?;
        let out = forward_step(p, step.input, hs.last().unwrap())?;
        let scores = row_dots(step.candidates, &out.y);
        let lse = log_sum_exp(&scores)?;
        nll += lse - scores[step.target];
        let pr: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
        hs.push(out.h);
        probs.push(pr);
    }
    Ok(Trace { hs, probs, nll })
}

/// Negative log-likelihood summed over steps.
pub fn steps_nll(p: &RnnParams, steps: &[Step<'_>]) -> Result<f64, RnnError> {
    Ok(run_forward(p, steps)?.nll)
}

/// Exact gradient of [`steps_nll`] by full backpropagation through time.
pub fn steps_grads(p: &RnnParams, steps: &[Step<'_>]) -> Result<(f64, Gradients), RnnError> {
    let trace = run_forward(p, steps)?;
    let mut g = RnnParams::zeros(p.dim(), p.hidden());
    let mut dh_next = vec![0.0; p.hidden()];
    for (n, step) in steps.iter().enumerate().rev() {
        let h = &trace.hs[n + 1];
        let h_prev = &trace.hs[n];
        // d nll / d score_j = p_j − [j = target]
        let mut dscore = trace.probs[n].clone();
        dscore[step.target] -= 1.0;
        let mut dy = vec![0.0; p.dim()];
        for (row, &w) in step.candidates.chunks_exact(p.dim()).zip(&dscore) {
            for (o, &c) in dy.iter_mut().zip(row) {
                *o += w * c;
            }
        }
        g.output.add_outer(1.0, &dy, h);
        let mut dh = matvec_transposed(&p.output, &dy)?;
        for (a, b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let da: Vec<f64> = dh
            .iter()
            .zip(h)
            .map(|(d, hv)| d * hv * (1.0 - hv))
            .collect();
        g.input.add_outer(1.0, &da, step.input);
        g.recurrent.add_outer(1.0, &da, h_prev);
        dh_next = matvec_transposed(&p.recurrent, &da)?;
    }
    Ok((trace.nll, g))
}

/// `−Σ log P(x_{z_{n+1}} | x_{z_1..z_n})` with candidates all images after
/// `z_n`.
pub fn sequence_nll(p: &RnnParams, album: &Album, z: &StoryIndices) -> Result<f64, RnnError> {
    steps_nll(p, &story_steps(album, z)?)
}

pub fn bptt_grads(p: &RnnParams, album: &Album, z: &StoryIndices) -> Result<Gradients, RnnError> {
    Ok(steps_grads(p, &story_steps(album, z)?)?.1)
}

/// Momentum SGD step on a loss to minimize:
/// `v ← μ·v − lr·(clip(g) + λ·w)`, `w ← w + v`.
pub fn sgd_update(
    p: &mut RnnParams,
    g: &Gradients,
    lr: f64,
    cfg: &TrainConfig,
    state: &mut MomentumState,
) -> Result<(), RnnError> {
    if !p.same_shape(g) || !p.same_shape(&state.velocity) {
        return Err(RnnError::Shape("gradient or velocity shape differs from params".into()));
    }
    const NAMES: [&str; 3] = ["W_I", "W_R", "W_O"];
    for (gm, name) in g.matrices().iter().zip(NAMES) {
        if !gm.is_finite() {
            return Err(RnnError::NonFiniteGradient(name));
        }
    }
    let clip = cfg.grad_clip;
    for ((w, v), gm) in p
        .matrices_mut()
        .into_iter()
        .zip(state.velocity.matrices_mut())
        .zip(g.matrices())
    {
        for ((wi, vi), &gi) in w
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(gm.as_slice())
        {
            let step = gi.clamp(-clip, clip) + cfg.weight_decay * *wi;
            *vi = cfg.momentum * *vi - lr * step;
            *wi += *vi;
        }
    }
    Ok(())
}

/// Halves the learning rate when the validation score stalls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub learning_rate: f64,
    best: Option<f64>,
    stalled: usize,
    patience: usize,
    factor: f64,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            best: None,
            stalled: 0,
            patience: cfg.plateau_patience,
            factor: cfg.lr_decay_factor,
        }
    }

    /// Record a validation score (higher is better). Returns `false` once
    /// the learning rate has decayed below the floor.
    pub fn observe(&mut self, score: f64) -> bool {
        match self.best {
            Some(b) if score <= b => {
                self.stalled += 1;
                if self.stalled >= self.patience {
                    self.learning_rate *= self.factor;
                    self.stalled = 0;
                }
            }
            _ => {
                self.best = Some(score);
                self.stalled = 0;
            }
        }
        self.learning_rate >= TrainConfig::MIN_LEARNING_RATE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_nll: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation score of the initial parameters.
    pub initial_val_score: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub skipped_albums: Vec<String>,
}

pub const MODEL_MAGIC: &[u8; 4] = b"SRNM";
pub const MODEL_VERSION: u32 = 1;

/// `SRNM` model file: magic, version, `D`, `H`, then `W_I`, `W_O`, `W_R`
/// as little-endian `f64`, then a JSON trailer.
pub fn encode_model<T: Serialize>(p: &RnnParams, trailer: &T) -> Result<Vec<u8>, RnnError> {
    let mut out = Vec::with_capacity(16 + 8 * p.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [p.dim(), p.hidden()] {
        let v = u32::try_from(v).map_err(|_| RnnError::Format("dimension exceeds u32".into()))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in [&p.input, &p.output, &p.recurrent] {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(trailer).map_err(|e| RnnError::Format(e.to_string()))?;
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn decode_model<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(RnnParams, T), RnnError> {
    if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
        return Err(RnnError::Format("missing SRNM header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4);
    if version != MODEL_VERSION as usize {
        return Err(RnnError::Format(format!("unsupported version {version}")));
    }
    let (d, h) = (word(8), word(12));
    if d == 0 || h == 0 {
        return Err(RnnError::Format("zero dimension".into()));
    }
    let sizes = [h * d, d * h, h * h];
    let body: usize = sizes.iter().sum::<usize>() * 8;
    if bytes.len() < 16 + body {
        return Err(RnnError::Format("truncated weights".into()));
    }
    let mut offset = 16;
    let mut take = |n: usize| {
        let v: Vec<f64> = bytes[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        offset += 8 * n;
        v
    };
    let input = Matrix::from_vec(h, d, take(sizes[0]))?;
    let output = Matrix::from_vec(d, h, take(sizes[1]))?;
    let recurrent = Matrix::from_vec(h, h, take(sizes[2]))?;
    let params = RnnParams {
        input,
        recurrent,
        output,
    };
    if !params.is_finite() {
        return Err(RnnError::Format("non-finite weight".into()));
    }
    let trailer = serde_json::from_slice(&bytes[16 + body..])
        .map_err(|e| RnnError::Format(format!("trailer: {e}")))?;
    Ok((params, trailer))
}
