//! Comparison methods: uniform sampling, k-means summaries, nearest and
//! furthest image predictors, and an RNN over k-means cluster ids.

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Album, Dataset};
use crate::numerics::{cosine, sample_weighted, squared_distance, stable_softmax, Matrix, RngStream};
use crate::rnn::{
    forward_step, init_params, sgd_update, steps_grads, EpochRecord, MomentumState,
    PlateauSchedule, RnnError, RnnParams, Step, TrainConfig, TrainHistory,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least {needed} points, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("zero vector at candidate {0}")]
    ZeroVector(usize),
    #[error("zero query vector")]
    ZeroQuery,
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("feature dimension {actual} does not match model dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

/// `k` distinct draws from `pool` without replacement, returned ascending.
pub fn sample_uniform(pool: &[usize], k: usize, rng: &mut RngStream) -> Result<Vec<usize>, BaselineError> {
    if pool.len() < k {
        return Err(BaselineError::TooFewPoints {
            needed: k,
            have: pool.len(),
        });
    }
    let mut picked: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
    picked.sort_unstable();
    Ok(picked)
}

/// k-means++ seeding: row indices of `points`, in the order chosen.
pub fn kmeans_pp_seeds(points: &Matrix, k: usize, rng: &mut RngStream) -> Result<Vec<usize>, BaselineError> {
    let n = points.rows();
    if k == 0 {
        return Err(BaselineError::ZeroK);
    }
    if n < k {
        return Err(BaselineError::TooFewPoints { needed: k, have: n });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    while chosen.len() < k {
        let weights: Vec<f64> = d2
            .iter()
            .zip(&taken)
            .map(|(&d, &t)| if t { 0.0 } else { d })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            sample_weighted(&weights, total, rng)
        } else {
            // only duplicates of chosen points remain
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (d, p) in d2.iter_mut().zip(points.iter_rows()) {
            *d = d.min(squared_distance(p, points.row(next)));
        }
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub model: KMeansModel,
    /// Distortion after each assignment pass.
    pub distortions: Vec<f64>,
    pub iterations: usize,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Nearest center by Euclidean distance, lowest index on ties.
    pub fn assign(&self, x: &[f64]) -> usize {
        nearest(self.centers.iter().map(Vec::as_slice), x).0
    }

    pub fn distortion(&self, points: &Matrix) -> f64 {
        points
            .iter_rows()
            .map(|p| squared_distance(p, &self.centers[self.assign(p)]))
            .sum()
    }
}

fn nearest<'a>(rows: impl Iterator<Item = &'a [f64]>, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, r) in rows.enumerate() {
        let d = squared_distance(r, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment
/// stops changing or `max_iters` passes. An empty cluster is moved to the
/// point farthest from its current center.
pub fn kmeans_fit(points: &Matrix, k: usize, rng: &mut RngStream, max_iters: usize) -> Result<KMeansFit, BaselineError> {
    let seeds = kmeans_pp_seeds(points, k, rng)?;
    let mut centers: Vec<Vec<f64>> = seeds.iter().map(|&i| points.row(i).to_vec()).collect();
    let dim = points.cols();
    let n = points.rows();
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut distortions = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (i, p) in points.iter_rows().enumerate() {
            let (c, d) = nearest(centers.iter().map(Vec::as_slice), p);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        distortions.push(dists.iter().sum());
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut claimed = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| !claimed[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= k leaves an unclaimed point");
                claimed[far] = true;
                debug!("re-seeding empty cluster {c} at point {far}");
                centers[c] = points.row(far).to_vec();
            }
        }
    }
    Ok(KMeansFit {
        model: KMeansModel { centers },
        distortions,
        iterations,
    })
}

/// Nearest pool row for each center, deduplicated and ascending.
pub fn kmeans_select(model: &KMeansModel, pool: &Matrix) -> Vec<usize> {
    if pool.rows() == 0 {
        return Vec::new();
    }
    let mut picked: Vec<usize> = model
        .centers
        .iter()
        .map(|c| nearest(pool.iter_rows(), c).0)
        .collect();
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Stack every album's features into one matrix.
pub fn stack_features(ds: &Dataset) -> Matrix {
    let data: Vec<f64> = ds
        .albums
        .iter()
        .flat_map(|a| a.features.as_slice().iter().copied())
        .collect();
    Matrix::from_vec(ds.total_items(), ds.dim, data).expect("albums share one dimension")
}

/// Summary from k-means on the album alone, with `k` clusters.
pub fn local_kmeans_select(album: &Album, k: usize, rng: &mut RngStream, max_iters: usize) -> Result<Vec<usize>, BaselineError> {
    let fit = kmeans_fit(&album.features, k, rng, max_iters)?;
    Ok(kmeans_select(&fit.model, &album.features))
}

fn cosine_scan(query: &[f64], candidates: &[&[f64]], furthest: bool) -> Result<usize, BaselineError> {
    if candidates.is_empty() {
        return Err(BaselineError::EmptyCandidates);
    }
    if query.iter().all(|&v| v == 0.0) {
        return Err(BaselineError::ZeroQuery);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = cosine(query, c).ok_or(BaselineError::ZeroVector(i))?;
        let s = if furthest { -s } else { s };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    Ok(best.unwrap().0)
}

/// Candidate with the highest cosine similarity to `query`.
pub fn nn_predict(query: &[f64], candidates: &[&[f64]]) -> Result<usize, BaselineError> {
    cosine_scan(query, candidates, false)
}

/// Candidate with the lowest cosine similarity to `query`.
pub fn fi_predict(query: &[f64], candidates: &[&[f64]]) -> Result<usize, BaselineError> {
    cosine_scan(query, candidates, true)
}

/// Elman network over k-means cluster ids: one-hot inputs, softmax over
/// all `K` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRnn {
    pub kmeans: KMeansModel,
    pub params: RnnParams,
    pub history: TrainHistory,
}

fn one_hot_block(k: usize) -> Matrix {
    Matrix::identity(k)
}

fn cluster_steps<'a>(ids: &[usize], basis: &'a Matrix) -> Vec<Step<'a>> {
    ids.windows(2)
        .map(|w| Step {
            input: basis.row(w[0]),
            candidates: basis.as_slice(),
            target: w[1],
        })
        .collect()
}

impl ClusterRnn {
    pub fn quantize(&self, album: &Album) -> Vec<usize> {
        album.features.iter_rows().map(|r| self.kmeans.assign(r)).collect()
    }

    pub fn k(&self) -> usize {
        self.kmeans.k()
    }

    /// Mean per-step negative log-likelihood of next-cluster prediction.
    pub fn mean_step_nll(&self, ds: &Dataset) -> Result<f64, BaselineError> {
        let basis = one_hot_block(self.k());
        let mut total = 0.0;
        let mut steps = 0usize;
        for album in &ds.albums {
            let ids = self.quantize(album);
            let s = cluster_steps(&ids, &basis);
            steps += s.len();
            total += crate::rnn::steps_nll(&self.params, &s)?;
        }
        Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
    }

    /// Most likely next cluster after feeding `ids`.
    pub fn predict_next(&self, ids: &[usize]) -> Result<usize, BaselineError> {
        let probs = self.next_distribution(ids)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    fn next_distribution(&self, ids: &[usize]) -> Result<Vec<f64>, BaselineError> {
        let basis = one_hot_block(self.k());
        let mut h = vec![0.0; self.params.hidden()];
        let mut y = vec![0.0; self.k()];
        for &c in ids {
            let out = forward_step(&self.params, basis.row(c), &h)?;
            h = out.h;
            y = out.y;
        }
        Ok(stable_softmax(&y).map_err(RnnError::from)?)
    }
}

pub const CLUSTER_RNN_KMEANS_ITERS: usize = 50;

pub fn cluster_rnn_train(train: &Dataset, k: usize, cfg: &TrainConfig, rng: &RngStream) -> Result<ClusterRnn, BaselineError> {
    let points = stack_features(train);
    let fit = kmeans_fit(&points, k, &mut rng.substream(0), CLUSTER_RNN_KMEANS_ITERS)?;
    let params = init_params(k, cfg.hidden, &mut rng.substream(1));
    let mut model = ClusterRnn {
        kmeans: fit.model,
        params,
        history: TrainHistory::default(),
    };
    let sequences: Vec<Vec<usize>> = train.albums.iter().map(|a| model.quantize(a)).collect();
    train_cluster_sequences(&mut model, &sequences, cfg, rng)?;
    Ok(model)
}

/// Fit the network to already-quantized sequences.
pub fn train_cluster_sequences(
    model: &mut ClusterRnn,
    sequences: &[Vec<usize>],
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(), BaselineError> {
    let basis = one_hot_block(model.k());
    let usable: Vec<&Vec<usize>> = sequences.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() || cfg.max_epochs == 0 {
        return Ok(());
    }
    let mut schedule = PlateauSchedule::new(cfg);
    let mut momentum = MomentumState::new(&model.params);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let shuffle = rng.substream(2);
    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.learning_rate;
        order.shuffle(&mut shuffle.substream(epoch as u64));
        let mut total = 0.0;
        let mut count = 0usize;
        for &i in &order {
            let steps = cluster_steps(usable[i], &basis);
            let (nll, g) = steps_grads(&model.params, &steps)?;
            total += nll;
            count += steps.len();
            sgd_update(&mut model.params, &g, lr, cfg, &mut momentum)?;
        }
        let train_nll = total / count as f64;
        model.history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_nll,
            val_score: -train_nll,
        });
        if !schedule.observe(-train_nll) {
            break;
        }
    }
    Ok(())
}

const MAX_RESAMPLES: usize = 10;

/// Sample `k` clusters along the network's chain without replacement,
/// starting from the cluster of the album's first image, and map each to
/// the unused album image of that cluster nearest its center.
pub fn cluster_rnn_select(model: &ClusterRnn, album: &Album, k: usize, rng: &mut RngStream) -> Result<Vec<usize>, BaselineError> {
    if album.dim() != model.kmeans.centers.first().map_or(0, Vec::len) {
        return Err(BaselineError::Dimension {
            expected: model.kmeans.centers.first().map_or(0, Vec::len),
            actual: album.dim(),
        });
    }
    if album.len() < k {
        return Err(BaselineError::TooFewPoints {
            needed: k,
            have: album.len(),
        });
    }
    let kk = model.k();
    let ids = model.quantize(album);
    let basis = one_hot_block(kk);
    let mut used_image = vec![false; album.len()];
    let mut used_cluster = vec![false; kk];
    let mut picked = Vec::with_capacity(k);
    let mut h = vec![0.0; model.params.hidden()];
    let mut cluster = ids[0];

    let nearest_unused = |c: usize, used: &[bool], same_cluster: bool| -> Option<usize> {
        (0..album.len())
            .filter(|&i| !used[i] && (!same_cluster || ids[i] == c))
            .min_by(|&a, &b| {
                squared_distance(album.feature(a), &model.kmeans.centers[c])
                    .total_cmp(&squared_distance(album.feature(b), &model.kmeans.centers[c]))
            })
    };

    loop {
        used_cluster[cluster] = true;
        let img = nearest_unused(cluster, &used_image, true)
            .or_else(|| nearest_unused(cluster, &used_image, false))
            .expect("album holds at least k images");
        used_image[img] = true;
        picked.push(img);
        if picked.len() == k {
            break;
        }
        if used_cluster.iter().all(|&u| u) {
            used_cluster.iter_mut().for_each(|u| *u = false);
        }
        let out = forward_step(&model.params, basis.row(cluster), &h)?;
        h = out.h;
        let probs = stable_softmax(&out.y).map_err(RnnError::from)?;
        let mut excluded = used_cluster.clone();
        let mut next = None;
        for _ in 0..=MAX_RESAMPLES {
            let w: Vec<f64> = probs
                .iter()
                .zip(&excluded)
                .map(|(&p, &e)| if e { 0.0 } else { p })
                .collect();
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                break;
            }
            let c = sample_weighted(&w, total, rng);
            if (0..album.len()).any(|i| !used_image[i] && ids[i] == c) {
                next = Some(c);
                break;
            }
            excluded[c] = true;
            next.get_or_insert(c);
        }
        cluster = match next {
            Some(c) => c,
            None => (0..kk).find(|&c| !used_cluster[c]).unwrap_or(0),
        };
    }
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(rng: &mut RngStream, per: usize, sigma: f64) -> (Matrix, [Vec<f64>; 2]) {
        let centers = [vec![5.0, 5.0], vec![-5.0, -5.0]];
        let mut rows = Vec::new();
        for c in &centers {
            for _ in 0..per {
                rows.push(c.iter().map(|v| v + sigma * rng.gen_range(-1.0..1.0)).collect());
            }
        }
        (Matrix::from_rows(&rows).unwrap(), centers)
    }

    #[test]
    fn uniform_sampling_contracts() {
        let mut rng = RngStream::new(1, 0);
        let pool = [4, 9, 2, 7];
        assert_eq!(sample_uniform(&pool, 4, &mut rng).unwrap(), vec![2, 4, 7, 9]);
        for _ in 0..100 {
            let s = sample_uniform(&pool, 3, &mut rng).unwrap();
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(sample_uniform(&pool, 5, &mut rng).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]]).unwrap();
        let fit = kmeans_fit(&m, 1, &mut RngStream::new(0, 0), 100).unwrap();
        assert_eq!(fit.model.centers, vec![vec![2.0, 1.0]]);
    }

    #[test]
    fn kmeans_saturated_has_zero_distortion() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]).unwrap();
        let fit = kmeans_fit(&m, 4, &mut RngStream::new(2, 0), 100).unwrap();
        assert_eq!(*fit.distortions.last().unwrap(), 0.0);
        assert_eq!(kmeans_select(&fit.model, &m), vec![0, 1, 2, 3]);
        assert!(kmeans_fit(&m, 5, &mut RngStream::new(2, 0), 100).is_err());
    }

    #[test]
    fn kmeans_recovers_planted_blobs() {
        let mut rng = RngStream::new(3, 0);
        let sigma = 0.5;
        let (m, truth) = blobs(&mut rng, 50, sigma);
        let fit = kmeans_fit(&m, 2, &mut rng, 100).unwrap();
        for t in &truth {
            let c = &fit.model.centers[fit.model.assign(t)];
            assert!(squared_distance(c, t).sqrt() < sigma);
        }
        assert!(fit.distortions.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn select_collapses_duplicates_and_ignores_center_order() {
        let pool = Matrix::from_rows(&[vec![0.0], vec![10.0], vec![20.0]]).unwrap();
        let exact = KMeansModel {
            centers: vec![vec![20.0], vec![0.0]],
        };
        assert_eq!(kmeans_select(&exact, &pool), vec![0, 2]);
        let dup = KMeansModel {
            centers: vec![vec![9.0], vec![11.0]],
        };
        assert_eq!(kmeans_select(&dup, &pool), vec![1]);
        let swapped = KMeansModel {
            centers: vec![vec![0.0], vec![20.0]],
        };
        assert_eq!(kmeans_select(&swapped, &pool), kmeans_select(&exact, &pool));
    }

    #[test]
    fn nn_and_fi_examples() {
        let q = [1.0, 2.0];
        let cands: [&[f64]; 3] = [&[0.0, 1.0], &[1.0, 2.0], &[-1.0, -2.0]];
        assert_eq!(nn_predict(&q, &cands).unwrap(), 1);
        assert_eq!(fi_predict(&q, &cands).unwrap(), 2);
        assert_eq!(nn_predict(&[1.0, 0.0], &[&[0.0, 1.0], &[3.0, 0.0]]).unwrap(), 1);
        assert_eq!(fi_predict(&q, &[&[5.0, 5.0]]).unwrap(), 0);
        assert!(matches!(nn_predict(&[0.0, 0.0], &cands), Err(BaselineError::ZeroQuery)));
        assert!(matches!(
            nn_predict(&q, &[&[0.0, 0.0]]),
            Err(BaselineError::ZeroVector(0))
        ));
        // ties go to the lowest index
        assert_eq!(nn_predict(&q, &[&[2.0, 4.0], &[1.0, 2.0]]).unwrap(), 0);
    }

    #[test]
    fn untrained_cluster_rnn_is_uniform() {
        let k = 4;
        let model = ClusterRnn {
            kmeans: KMeansModel {
                centers: (0..k).map(|i| vec![i as f64]).collect(),
            },
            params: RnnParams::zeros(k, 3),
            history: TrainHistory::default(),
        };
        let album = Album::from_rows("a", &[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![0.1]]).unwrap();
        let ds = Dataset::new("c", vec![album]).unwrap();
        let nll = model.mean_step_nll(&ds).unwrap();
        assert!((nll.exp() - k as f64).abs() < 1e-9, "perplexity {}", nll.exp());
    }

    #[test]
    fn cluster_rnn_select_with_uniform_model_covers_all_clusters() {
        let k = 4;
        let model = ClusterRnn {
            kmeans: KMeansModel {
                centers: (0..k).map(|i| vec![i as f64 * 10.0]).collect(),
            },
            params: RnnParams::zeros(k, 3),
            history: TrainHistory::default(),
        };
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 4) as f64 * 10.0 + 0.1 * i as f64]).collect();
        let album = Album::from_rows("a", &rows).unwrap();
        for seed in 0..20 {
            let sel = cluster_rnn_select(&model, &album, k, &mut RngStream::new(seed, 0)).unwrap();
            assert!(sel.windows(2).all(|w| w[0] < w[1]));
            let mut clusters: Vec<usize> = sel.iter().map(|&i| model.kmeans.assign(album.feature(i))).collect();
            clusters.sort_unstable();
            assert_eq!(clusters, vec![0, 1, 2, 3]);
        }
        let a = cluster_rnn_select(&model, &album, 6, &mut RngStream::new(5, 5)).unwrap();
        let b = cluster_rnn_select(&model, &album, 6, &mut RngStream::new(5, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }
}
