mod common;

use common::{max_rel_err, uniform_vec};
use proptest::prelude::*;
use srnn_core::baselines::{
    cluster_rnn_select, cluster_rnn_train, fi_predict, kmeans_fit, kmeans_pp_seeds, nn_predict, sample_uniform,
    train_cluster_sequences, ClusterRnn, KMeansModel,
};
use srnn_core::numerics::finite_diff_grad;
use srnn_core::rnn::{init_params, steps_grads, steps_nll, Step, TrainConfig, TrainHistory};
use srnn_core::{Album, Dataset, Matrix, RngStream, RnnParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn scan_cosine(q: &[f64], cands: &[Vec<f64>]) -> Vec<f64> {
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    cands
        .iter()
        .map(|c| {
            let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / (nq * nc)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn nn_and_fi_equal_exhaustive_scan(seed in any::<u64>(), n in 1usize..9, d in 1usize..6) {
        let mut rng = RngStream::new(seed, 0);
        let q = uniform_vec(d, 1.0, &mut rng);
        let cands: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(d, 1.0, &mut rng)).collect();
        prop_assume!(q.iter().any(|v| *v != 0.0) && cands.iter().all(|c| c.iter().any(|v| *v != 0.0)));
        let refs: Vec<&[f64]> = cands.iter().map(Vec::as_slice).collect();
        let sims = scan_cosine(&q, &cands);
        let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = sims.iter().copied().fold(f64::INFINITY, f64::min);
        let nn = nn_predict(&q, &refs).unwrap();
        let fi = fi_predict(&q, &refs).unwrap();
        prop_assert!((sims[nn] - best).abs() < 1e-12);
        prop_assert!((sims[fi] - worst).abs() < 1e-12);
    }
}

#[test]
fn nn_breaks_ties_by_lowest_index() {
    let c = [vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
    let refs: Vec<&[f64]> = c.iter().map(Vec::as_slice).collect();
    assert_eq!(nn_predict(&[3.0, 0.0], &refs).unwrap(), 0);
    assert_eq!(fi_predict(&[0.0, 1.0], &refs).unwrap(), 0);
}

#[test]
fn kmeans_distortion_never_increases() {
    for seed in 0..30u64 {
        let mut rng = RngStream::new(seed, 0);
        let n = 20 + (seed as usize * 7) % 80;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(3, 1.0, &mut rng)).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let k = 1 + seed as usize % 9;
        let fit = kmeans_fit(&m, k, &mut rng, 100).unwrap();
        for w in fit.distortions.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "seed {seed}: {:?}", fit.distortions);
        }
        let last = *fit.distortions.last().unwrap();
        assert!((fit.model.distortion(&m) - last).abs() < 1e-9 * (1.0 + last));
    }
}

#[test]
fn kmeans_pp_seeds_are_distinct_even_with_duplicates() {
    let rows = vec![vec![1.0, 1.0]; 6];
    let m = Matrix::from_rows(&rows).unwrap();
    let mut s = kmeans_pp_seeds(&m, 6, &mut RngStream::new(1, 0)).unwrap();
    s.sort_unstable();
    assert_eq!(s, (0..6).collect::<Vec<_>>());
}

#[test]
fn uniform_sampling_has_uniform_inclusion() {
    let pool: Vec<usize> = (0..10).collect();
    let draws = 20_000;
    let mut counts = [0usize; 10];
    let mut rng = RngStream::new(6, 0);
    for _ in 0..draws {
        let s = sample_uniform(&pool, 3, &mut rng).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for i in s {
            counts[i] += 1;
        }
    }
    let e = draws as f64 * 3.0 / 10.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(stat < ChiSquared::new(9.0).unwrap().inverse_cdf(0.999), "chi-square {stat}");
}

#[test]
fn one_hot_cluster_gradients_match_finite_differences() {
    let k = 4;
    let basis = Matrix::identity(k);
    let ids = [0usize, 2, 1, 3, 3, 0];
    let steps: Vec<Step<'_>> = ids
        .windows(2)
        .map(|w| Step {
            input: basis.row(w[0]),
            candidates: basis.as_slice(),
            target: w[1],
        })
        .collect();
    let mut rng = RngStream::new(3, 0);
    let p = RnnParams::from_flat(k, 3, &uniform_vec(3 * k + 9 + k * 3, 1.0, &mut rng)).unwrap();
    let (_, g) = steps_grads(&p, &steps).unwrap();
    let fd = finite_diff_grad(
        |w| steps_nll(&RnnParams::from_flat(k, 3, w).unwrap(), &steps).unwrap(),
        &p.flatten(),
        1e-5,
    )
    .unwrap();
    assert!(max_rel_err(&g.flatten(), &fd) < 1e-4);
}

#[test]
fn cluster_rnn_learns_an_alternating_chain() {
    let model_km = KMeansModel {
        centers: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    let p = init_params(2, 8, &mut RngStream::new(1, 1));
    let mut model = ClusterRnn {
        kmeans: model_km,
        params: p,
        history: TrainHistory::default(),
    };
    let seqs: Vec<Vec<usize>> = (0..20).map(|i| (0..8).map(|t| (t + i) % 2).collect()).collect();
    let cfg = TrainConfig {
        hidden: 8,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    train_cluster_sequences(&mut model, &seqs, &cfg, &RngStream::new(1, 2)).unwrap();
    let mut correct = 0;
    let mut total = 0;
    for s in &seqs {
        for t in 1..s.len() {
            total += 1;
            if model.predict_next(&s[..t]).unwrap() == s[t] {
                correct += 1;
            }
        }
    }
    assert_eq!(correct, total);
}

#[test]
fn cluster_rnn_selection_is_valid_and_seeded() {
    let mut rng = RngStream::new(4, 0);
    let albums: Vec<Album> = (0..6)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..15).map(|_| uniform_vec(3, 1.0, &mut rng)).collect();
            Album::from_rows(format!("a{i}"), &rows).unwrap()
        })
        .collect();
    let ds = Dataset::new("c", albums).unwrap();
    let cfg = TrainConfig {
        hidden: 6,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let model = cluster_rnn_train(&ds, 5, &cfg, &RngStream::new(2, 0)).unwrap();
    for a in &ds.albums {
        let s = cluster_rnn_select(&model, a, 10, &mut RngStream::new(9, 0)).unwrap();
        let again = cluster_rnn_select(&model, a, 10, &mut RngStream::new(9, 0)).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(*s.last().unwrap() < a.len());
    }
}
