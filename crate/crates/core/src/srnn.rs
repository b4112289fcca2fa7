//! The skipping RNN: model-guided sampling of ordered subsets, stochastic
//! EM training over those subsets, and best-of-K story extraction.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{kmeans_pp_seeds, BaselineError};
use crate::data::{Album, Dataset};
use crate::numerics::{log_sum_exp, row_dots, sample_weighted, RngStream};
use crate::rnn::{
    decode_model, encode_model, forward_step, sequence_nll, sgd_update, steps_grads, story_steps,
    MomentumState, PlateauSchedule, RnnError, RnnParams, TrainConfig, TrainHistory, EpochRecord,
};
use crate::story::{StoryError, StoryIndices};

#[derive(Debug, Error)]
pub enum SrnnError {
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("album {album} has {len} images, fewer than story length {n}")]
    AlbumTooShort { album: String, len: usize, n: usize },
    #[error("no feasible next index after position {position} at step {step} (N={n}, T={t})")]
    Infeasible {
        position: usize,
        step: usize,
        n: usize,
        t: usize,
    },
    #[error("{0} subsets exceed the enumeration bound")]
    TooManySubsets(u128),
    #[error("no training album has at least {0} images")]
    NoTrainableAlbums(usize),
    #[error("story length must be at least 2, got {0}")]
    StoryLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Full S-RNN: subsets sampled from the model every epoch.
    Skip,
    /// S-RNN-: always the first N images.
    NoSkip,
    /// D-RNN: a fixed k-means++ subset per album.
    Diverse,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Skip => "skip",
            Mode::NoSkip => "noskip",
            Mode::Diverse => "diverse",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "skip" => Ok(Mode::Skip),
            "noskip" => Ok(Mode::NoSkip),
            "diverse" => Ok(Mode::Diverse),
            other => Err(format!("unknown mode `{other}` (expected skip, noskip or diverse)")),
        }
    }
}

/// Prior over skip indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZPrior {
    /// Uniform over all ordered N-subsets of the album, sampled through its
    /// exact sequential conditionals.
    #[default]
    Subset,
    /// Uniform first pick over `0..=T−N`, then uniform within each
    /// feasible window.
    Window,
}

impl fmt::Display for ZPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZPrior::Subset => "subset",
            ZPrior::Window => "window",
        })
    }
}

impl FromStr for ZPrior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subset" => Ok(ZPrior::Subset),
            "window" => Ok(ZPrior::Window),
            other => Err(format!("unknown prior `{other}` (expected subset or window)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnnModel {
    pub params: RnnParams,
    /// Story length.
    pub n: usize,
    pub mode: Mode,
    pub prior: ZPrior,
    pub concept: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySample {
    pub album: String,
    #[serde(rename = "indices")]
    pub z: StoryIndices,
    pub loglik: f64,
}

/// JSON trailer of a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrailer {
    pub concept: String,
    pub n: usize,
    pub mode: Mode,
    #[serde(default)]
    pub prior: ZPrior,
    pub config: TrainConfig,
    pub history: TrainHistory,
}

impl SrnnModel {
    pub fn new(params: RnnParams, n: usize, mode: Mode, concept: impl Into<String>) -> Result<Self, SrnnError> {
        if n < 2 {
            return Err(SrnnError::StoryLength(n));
        }
        Ok(Self {
            params,
            n,
            mode,
            prior: ZPrior::default(),
            concept: concept.into(),
        })
    }

    pub fn with_prior(mut self, prior: ZPrior) -> Self {
        self.prior = prior;
        self
    }

    pub fn to_bytes(&self, config: &TrainConfig, history: &TrainHistory) -> Result<Vec<u8>, SrnnError> {
        let trailer = ModelTrailer {
            concept: self.concept.clone(),
            n: self.n,
            mode: self.mode,
            prior: self.prior,
            config: config.clone(),
            history: history.clone(),
        };
        Ok(encode_model(&self.params, &trailer)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, ModelTrailer), SrnnError> {
        let (params, trailer): (RnnParams, ModelTrailer) = decode_model(bytes)?;
        let model = SrnnModel::new(params, trailer.n, trailer.mode, trailer.concept.clone())?.with_prior(trailer.prior);
        Ok((model, trailer))
    }

    fn check_album(&self, album: &Album) -> Result<(), SrnnError> {
        if album.len() < self.n {
            return Err(SrnnError::AlbumTooShort {
                album: album.id.clone(),
                len: album.len(),
                n: self.n,
            });
        }
        Ok(())
    }
}

/// Inclusive window of positions the pick after `position` may take so
/// that the story can still reach `n` picks. `step` is the 0-based index
/// of the pick at `position`; all positions are 0-based.
pub fn feasible_range(position: usize, step: usize, n: usize, t: usize) -> Result<(usize, usize), SrnnError> {
    let infeasible = SrnnError::Infeasible { position, step, n, t };
    if step + 1 >= n || position >= t {
        return Err(infeasible);
    }
    let lo = position + 1;
    // picks after the next one still to be placed: n − step − 2
    let hi = match (t + step + 1).checked_sub(n) {
        Some(hi) => hi,
        None => return Err(infeasible),
    };
    if lo > hi {
        return Err(infeasible);
    }
    Ok((lo, hi))
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// Unnormalized log prior weights of the next pick over `lo..=hi`, where
/// `picks_after` picks must still follow it. Under [`ZPrior::Subset`] a
/// position's weight is its number of completions, `C(T−j−1, picks_after)`.
fn prior_log_weights(prior: ZPrior, lo: usize, hi: usize, picks_after: usize, t: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(hi - lo + 1, 0.0);
    if prior == ZPrior::Window {
        return;
    }
    // walk down from hi, where exactly picks_after positions remain
    let r = picks_after as f64;
    let mut acc = 0.0;
    for j in (lo..hi).rev() {
        let m = (t - j - 1) as f64;
        acc += (m / (m - r)).ln();
        out[j - lo] = acc;
    }
}

/// `log P(z)` under the given prior on ordered subsets of an album of
/// length `t`.
pub fn log_prior(z: &StoryIndices, t: usize, prior: ZPrior) -> Result<f64, SrnnError> {
    let n = z.len();
    if t < n {
        return Err(SrnnError::StoryLength(n));
    }
    if z.as_slice()[n - 1] >= t {
        return Ok(f64::NEG_INFINITY);
    }
    match prior {
        ZPrior::Subset => Ok(-ln_binomial(t, n)),
        ZPrior::Window => {
            let mut lp = -((t - n + 1) as f64).ln();
            for (step, w) in z.as_slice().windows(2).enumerate() {
                let (lo, hi) = feasible_range(w[0], step, n, t)?;
                if w[1] < lo || w[1] > hi {
                    return Ok(f64::NEG_INFINITY);
                }
                lp -= ((hi - lo + 1) as f64).ln();
            }
            Ok(lp)
        }
    }
}

fn draw_log_weights(logw: &[f64], buf: &mut Vec<f64>, rng: &mut RngStream) -> usize {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    buf.clear();
    buf.extend(logw.iter().map(|w| (w - max).exp()));
    let total: f64 = buf.iter().sum();
    sample_weighted(buf, total, rng)
}

/// Draw a story from the E-step distribution and return it together with
/// its model log-likelihood, computed in the same forward pass.
pub fn sample_story_scored(
    model: &SrnnModel,
    album: &Album,
    rng: &mut RngStream,
) -> Result<(StoryIndices, f64), SrnnError> {
    model.check_album(album)?;
    let (n, t) = (model.n, album.len());
    let p = &model.params;
    let mut z = Vec::with_capacity(n);
    let mut logw = Vec::with_capacity(t);
    let mut weights = Vec::with_capacity(t);
    prior_log_weights(model.prior, 0, t - n, n - 1, t, &mut logw);
    z.push(draw_log_weights(&logw, &mut weights, rng));
    let mut h = vec![0.0; p.hidden()];
    let mut loglik = 0.0;
    for step in 0..n - 1 {
        let cur = z[step];
        let out = forward_step(p, album.feature(cur), &h)?;
        let (lo, hi) = feasible_range(cur, step, n, t)?;
        // scores over the whole future; the window is a prefix of it
        let scores = row_dots(album.features.row_block(cur + 1, t), &out.y);
        prior_log_weights(model.prior, lo, hi, n - step - 2, t, &mut logw);
        for (w, s) in logw.iter_mut().zip(&scores) {
            *w += s;
        }
        let pick = draw_log_weights(&logw, &mut weights, rng);
        loglik += scores[pick] - log_sum_exp(&scores).map_err(RnnError::from)?;
        z.push(lo + pick);
        h = out.h;
    }
    Ok((StoryIndices::new(z, t)?, loglik))
}

/// One E-step sample of skip indices (the model's mode is ignored).
pub fn estep_sample_z(model: &SrnnModel, album: &Album, rng: &mut RngStream) -> Result<StoryIndices, SrnnError> {
    Ok(sample_story_scored(model, album, rng)?.0)
}

/// Best of `count` sampled stories by model log-likelihood; ties go to the
/// lexicographically smallest indices.
pub fn sample_storylines(
    model: &SrnnModel,
    album: &Album,
    count: usize,
    rng: &mut RngStream,
) -> Result<StorySample, SrnnError> {
    let mut best: Option<(StoryIndices, f64)> = None;
    for _ in 0..count.max(1) {
        let (z, ll) = sample_story_scored(model, album, rng)?;
        let better = match &best {
            None => true,
            Some((bz, bll)) => ll > *bll || (ll == *bll && z < *bz),
        };
        if better {
            best = Some((z, ll));
        }
    }
    let (z, loglik) = best.expect("at least one sample");
    Ok(StorySample {
        album: album.id.clone(),
        z,
        loglik,
    })
}

/// [`sample_storylines`] for every album of length ≥ N, each on the stream
/// `rng.substream(album position)`; parallel across albums.
pub fn sample_dataset_storylines(
    model: &SrnnModel,
    ds: &Dataset,
    count: usize,
    rng: &RngStream,
) -> Result<Vec<StorySample>, SrnnError> {
    ds.albums
        .par_iter()
        .enumerate()
        .filter(|(_, a)| a.len() >= model.n)
        .map(|(i, a)| sample_storylines(model, a, count, &mut rng.substream(i as u64)))
        .collect()
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub const MAX_ENUMERATED_SUBSETS: u128 = 100_000;

/// Visit every strictly increasing `n`-subset of `0..t` in lexicographic
/// order.
pub fn for_each_subset(t: usize, n: usize, mut f: impl FnMut(&[usize])) {
    if n == 0 || n > t {
        return;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        f(&idx);
        let mut i = n;
        while i > 0 && idx[i - 1] == t - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// `log Σ_z P(x_z; M) P(z)` by exhaustive enumeration.
pub fn marginal_loglik_bruteforce(model: &SrnnModel, album: &Album, n: usize) -> Result<f64, SrnnError> {
    let t = album.len();
    if n < 2 {
        return Err(SrnnError::StoryLength(n));
    }
    if t < n {
        return Err(SrnnError::AlbumTooShort {
            album: album.id.clone(),
            len: t,
            n,
        });
    }
    let count = binomial(t, n);
    if count > MAX_ENUMERATED_SUBSETS {
        return Err(SrnnError::TooManySubsets(count));
    }
    let mut terms = Vec::with_capacity(count as usize);
    let mut err = None;
    for_each_subset(t, n, |idx| {
        if err.is_some() {
            return;
        }
        let z = StoryIndices::new(idx.to_vec(), t).expect("enumerated subsets are valid");
        match (sequence_nll(&model.params, album, &z), log_prior(&z, t, model.prior)) {
            (Ok(nll), Ok(lp)) => terms.push(lp - nll),
            (Err(e), _) => err = Some(SrnnError::from(e)),
            (_, Err(e)) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(log_sum_exp(&terms).map_err(RnnError::from)?)
}

/// k-means++ seeds on the album's features as a sorted index set.
pub fn diverse_subset(album: &Album, k: usize, rng: &mut RngStream) -> Result<StoryIndices, SrnnError> {
    if album.len() < k {
        return Err(SrnnError::AlbumTooShort {
            album: album.id.clone(),
            len: album.len(),
            n: k,
        });
    }
    let mut seeds = kmeans_pp_seeds(&album.features, k, rng)?;
    seeds.sort_unstable();
    Ok(StoryIndices::new(seeds, album.len())?)
}

const SHUFFLE_TAG: u64 = 1;
const VALIDATION_TAG: u64 = 2;
const DIVERSE_TAG: u64 = 3;

/// Mean best-of-`samples` story log-likelihood over the albums that fit
/// the model. Uses the same streams on every call so successive epochs are
/// compared on common random numbers.
pub fn validation_score(model: &SrnnModel, val: &Dataset, samples: usize, rng: &RngStream) -> Result<Option<f64>, SrnnError> {
    let stories = sample_dataset_storylines(model, val, samples, rng)?;
    if stories.is_empty() {
        return Ok(None);
    }
    Ok(Some(stories.iter().map(|s| s.loglik).sum::<f64>() / stories.len() as f64))
}

/// Stochastic EM: per epoch, one story per training album (sampled,
/// prefix or diverse according to the mode), one BPTT gradient and one
/// momentum step per album.
pub fn train(
    model: &mut SrnnModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainHistory, SrnnError> {
    let mut history = TrainHistory::default();
    let usable: Vec<&Album> = train
        .albums
        .iter()
        .filter(|a| {
            let ok = a.len() >= model.n;
            if !ok {
                warn!("skipping album {} ({} images < N={})", a.id, a.len(), model.n);
                history.skipped_albums.push(a.id.clone());
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(SrnnError::NoTrainableAlbums(model.n));
    }

    let fixed: Vec<Option<StoryIndices>> = match model.mode {
        Mode::Skip => vec![None; usable.len()],
        Mode::NoSkip => usable
            .iter()
            .map(|a| StoryIndices::prefix(model.n, a.len()).map(Some))
            .collect::<Result<_, _>>()?,
        Mode::Diverse => {
            let base = rng.substream(DIVERSE_TAG);
            usable
                .iter()
                .enumerate()
                .map(|(i, a)| diverse_subset(a, model.n, &mut base.substream(i as u64)).map(Some))
                .collect::<Result<_, _>>()?
        }
    };

    let val_rng = rng.substream(VALIDATION_TAG);
    let score = |m: &SrnnModel, mean_train_nll: f64| -> Result<f64, SrnnError> {
        Ok(validation_score(m, val, cfg.validation_samples, &val_rng)?.unwrap_or(-mean_train_nll))
    };
    if cfg.max_epochs == 0 {
        return Ok(history);
    }
    history.initial_val_score = Some(score(model, f64::INFINITY)?);

    let mut schedule = PlateauSchedule::new(cfg);
    let mut momentum = MomentumState::new(&model.params);
    let shuffle_base = rng.substream(SHUFFLE_TAG);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.learning_rate;
        let mut epoch_rng = shuffle_base.substream(epoch as u64);
        order.shuffle(&mut epoch_rng);
        let mut total_nll = 0.0;
        for &i in &order {
            let album = usable[i];
            let z = match &fixed[i] {
                Some(z) => z.clone(),
                None => estep_sample_z(model, album, &mut epoch_rng)?,
            };
            let (nll, grads) = steps_grads(&model.params, &story_steps(album, &z)?)?;
            total_nll += nll;
            sgd_update(&mut model.params, &grads, lr, cfg, &mut momentum)?;
        }
        let train_nll = total_nll / usable.len() as f64;
        let val_score = score(model, train_nll)?;
        debug!("epoch {epoch}: lr {lr:.2e} train nll {train_nll:.4} val {val_score:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_nll,
            val_score,
        });
        if !schedule.observe(val_score) {
            info!("learning rate fell below {:.0e}; stopping after epoch {epoch}", TrainConfig::MIN_LEARNING_RATE);
            break;
        }
    }
    Ok(history)
}
