use proptest::prelude::*;
use srnn_core::numerics::{
    cosine, dot, finite_diff_grad, log_sum_exp, sample_categorical, stable_softmax, RngStream,
};
use srnn_core::rnn::score_future;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_critical(df: usize) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(0.999)
}

proptest! {
    #[test]
    fn softmax_sums_to_one(v in prop::collection::vec(-500.0f64..500.0, 1..40)) {
        let p = stable_softmax(&v).unwrap();
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(
        v in prop::collection::vec(-50.0f64..50.0, 1..20),
        c in -1e3f64..1e3,
    ) {
        let a = stable_softmax(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = stable_softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn log_sum_exp_bounds(v in prop::collection::vec(-300.0f64..300.0, 1..30)) {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&v).unwrap();
        prop_assert!(l >= m - 1e-12);
        prop_assert!(l <= m + (v.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn score_future_is_softmax_of_dot_products(
        d in 1usize..6,
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 0);
        let y: Vec<f64> = (0..d).map(|_| rng.uniform() - 0.5).collect();
        let rows: Vec<f64> = (0..d * n).map(|_| rng.uniform() - 0.5).collect();
        let p = score_future(&y, &rows).unwrap();
        prop_assert_eq!(p.len(), n);
        let e: Vec<f64> = (0..n).map(|j| dot(&y, &rows[j * d..(j + 1) * d]).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..n {
            prop_assert!((p[j] - e[j] / z).abs() < 1e-12);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_bounded(
        a in prop::collection::vec(-10.0f64..10.0, 3),
        b in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        if let Some(c) = cosine(&a, &b) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }
}

#[test]
fn categorical_frequencies_pass_chi_square() {
    let probs = [0.05, 0.1, 0.2, 0.25, 0.4];
    let draws = 100_000;
    let mut counts = [0usize; 5];
    let mut rng = RngStream::new(17, 0);
    for _ in 0..draws {
        counts[sample_categorical(&probs, &mut rng).unwrap()] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| {
            let e = p * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    assert!(stat < chi_square_critical(probs.len() - 1), "chi-square {stat}");
}

#[test]
fn categorical_never_draws_zero_mass() {
    let probs = [0.0, 0.5, 0.0, 0.5];
    let mut rng = RngStream::new(3, 1);
    for _ in 0..10_000 {
        let i = sample_categorical(&probs, &mut rng).unwrap();
        assert!(i == 1 || i == 3);
    }
}

#[test]
fn finite_differences_of_a_quadratic() {
    let g = finite_diff_grad(|x| x[0] * x[0] + 3.0 * x[0] * x[1], &[1.5, -2.0], 1e-5).unwrap();
    assert!((g[0] - (2.0 * 1.5 - 6.0)).abs() < 1e-8);
    assert!((g[1] - 4.5).abs() < 1e-8);
}

#[test]
fn substreams_are_reproducible_and_distinct() {
    let base = RngStream::new(99, 4);
    let a: Vec<f64> = {
        let mut r = base.substream(7);
        (0..5).map(|_| r.uniform()).collect()
    };
    let b: Vec<f64> = {
        let mut r = base.substream(7);
        (0..5).map(|_| r.uniform()).collect()
    };
    let c: Vec<f64> = {
        let mut r = base.substream(8);
        (0..5).map(|_| r.uniform()).collect()
    };
    assert_eq!(a, b);
    assert_ne!(a, c);
}
