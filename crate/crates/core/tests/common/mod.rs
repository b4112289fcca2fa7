#![allow(dead_code)]

use srnn_core::numerics::finite_diff_grad;
use srnn_core::rnn::{bptt_grads, sequence_nll};
use srnn_core::{Album, RngStream, RnnParams, StoryIndices};

pub fn uniform_vec(n: usize, scale: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()
}

pub fn random_album(t: usize, d: usize, rng: &mut RngStream) -> Album {
    let rows: Vec<Vec<f64>> = (0..t).map(|_| uniform_vec(d, 1.0, rng)).collect();
    Album::from_rows("rand", &rows).unwrap()
}

pub fn random_params(d: usize, h: usize, scale: f64, rng: &mut RngStream) -> RnnParams {
    let n = h * d + h * h + d * h;
    RnnParams::from_flat(d, h, &uniform_vec(n, scale, rng)).unwrap()
}

/// Uniformly random strictly increasing `n`-subset of `0..t`.
pub fn random_story(t: usize, n: usize, rng: &mut RngStream) -> StoryIndices {
    let mut pool: Vec<usize> = (0..t).collect();
    for i in 0..n {
        let j = i + (rng.uniform() * (t - i) as f64) as usize;
        pool.swap(i, j.min(t - 1));
    }
    let mut z = pool[..n].to_vec();
    z.sort_unstable();
    StoryIndices::new(z, t).unwrap()
}

/// Elementwise relative error with a floor on the denominator, so entries
/// that are exactly zero analytically are compared absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

/// Max relative error between BPTT and central differences of the
/// sequence nll.
pub fn gradient_check(p: &RnnParams, album: &Album, z: &StoryIndices, eps: f64) -> f64 {
    let analytic = bptt_grads(p, album, z).unwrap().flatten();
    let (d, h) = (p.dim(), p.hidden());
    let numeric = finite_diff_grad(
        |w| sequence_nll(&RnnParams::from_flat(d, h, w).unwrap(), album, z).unwrap(),
        &p.flatten(),
        eps,
    )
    .unwrap();
    max_rel_err(&analytic, &numeric)
}
