//! Synthetic concepts with a planted storyline.
//!
//! Every album walks through the same `L` latent states in order. Each
//! state is emitted as a run of noisy copies of its prototype, and random
//! distractor images are interleaved between rows.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Album, DataError, Dataset, ImageMeta};
use crate::numerics::{norm, squared_distance, Matrix, RngStream};

const PROTOTYPE_STREAM: u64 = 0;
const ALBUM_STREAM_BASE: u64 = 1 << 32;
const BASE_TIMESTAMP: i64 = 1_400_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_states: usize,
    /// Per-album Gaussian jitter applied to each concept prototype.
    pub prototype_noise: f64,
    /// Per-coordinate Gaussian noise on every emitted row.
    pub emission_noise: f64,
    pub repeats_min: usize,
    pub repeats_max: usize,
    pub distractor_prob: f64,
    pub num_albums: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_states: 10,
            prototype_noise: 0.0,
            emission_noise: 0.1,
            repeats_min: 5,
            repeats_max: 20,
            distractor_prob: 0.2,
            num_albums: 200,
            dim: 32,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field, reason: &str| {
            Err(DataError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        if self.num_states == 0 {
            return bad("num_states", "must be positive");
        }
        if self.repeats_min == 0 {
            return bad("repeats_min", "must be positive");
        }
        if self.repeats_min > self.repeats_max {
            return bad("repeats_min", "must not exceed repeats_max");
        }
        if !(self.prototype_noise >= 0.0 && self.prototype_noise.is_finite()) {
            return bad("prototype_noise", "must be finite and nonnegative");
        }
        if !(self.emission_noise >= 0.0 && self.emission_noise.is_finite()) {
            return bad("emission_noise", "must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.distractor_prob) {
            return bad("distractor_prob", "must lie in [0, 1)");
        }
        if self.num_albums == 0 {
            return bad("num_albums", "must be positive");
        }
        if self.dim == 0 {
            return bad("dim", "must be positive");
        }
        Ok(())
    }
}

/// Ground truth for one synthetic album.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbumTruth {
    /// Latent state per item: `1..=L`, or `0` for a distractor.
    pub labels: Vec<usize>,
    /// One representative (0-based item index) per state, in state order.
    pub summary: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlantedTruth {
    pub num_states: usize,
    pub albums: BTreeMap<String, AlbumTruth>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    num_states: usize,
    albums: BTreeMap<String, TruthEntry>,
}

#[derive(Serialize, Deserialize)]
struct TruthEntry {
    labels: Vec<usize>,
    /// 1-based
    summary: Vec<usize>,
}

impl PlantedTruth {
    pub fn get(&self, album_id: &str) -> Option<&AlbumTruth> {
        self.albums.get(album_id)
    }

    pub fn to_json(&self) -> String {
        let file = TruthFile {
            num_states: self.num_states,
            albums: self
                .albums
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        TruthEntry {
                            labels: v.labels.clone(),
                            summary: v.summary.iter().map(|i| i + 1).collect(),
                        },
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let file: TruthFile =
            serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        let mut albums = BTreeMap::new();
        for (k, v) in file.albums {
            if v.summary.contains(&0) {
                return Err(DataError::Manifest(format!(
                    "album {k}: summary indices are 1-based"
                )));
            }
            albums.insert(
                k,
                AlbumTruth {
                    labels: v.labels,
                    summary: v.summary.iter().map(|i| i - 1).collect(),
                },
            );
        }
        Ok(Self {
            num_states: file.num_states,
            albums,
        })
    }
}

fn random_unit(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Index (into `members`) of the row with minimum total distance to the
/// other rows; lowest position wins ties.
fn medoid(members: &[usize], rows: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (pos, &i) in members.iter().enumerate() {
        let total: f64 = members
            .iter()
            .map(|&j| squared_distance(&rows[i], &rows[j]).sqrt())
            .sum();
        if total < best.0 {
            best = (total, pos);
        }
    }
    members[best.1]
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, PlantedTruth), DataError> {
    spec.validate()?;
    let mut proto_rng = RngStream::new(spec.seed, PROTOTYPE_STREAM);
    let prototypes: Vec<Vec<f64>> = (0..spec.num_states)
        .map(|_| random_unit(spec.dim, &mut proto_rng))
        .collect();

    let mut albums = Vec::with_capacity(spec.num_albums);
    let mut truth = PlantedTruth {
        num_states: spec.num_states,
        albums: BTreeMap::new(),
    };
    for a in 0..spec.num_albums {
        let mut rng = RngStream::new(spec.seed, ALBUM_STREAM_BASE + a as u64);
        let album_protos: Vec<Vec<f64>> = prototypes
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&x| {
                        let jitter: f64 = rng.sample(StandardNormal);
                        x + spec.prototype_noise * jitter
                    })
                    .collect()
            })
            .collect();

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut runs: Vec<Vec<usize>> = vec![Vec::new(); spec.num_states];
        for (s, proto) in album_protos.iter().enumerate() {
            let repeats = rng.gen_range(spec.repeats_min..=spec.repeats_max);
            for _ in 0..repeats {
                while rng.uniform() < spec.distractor_prob {
                    rows.push(quantize(random_unit(spec.dim, &mut rng)));
                    labels.push(0);
                }
                let row = proto
                    .iter()
                    .map(|&x| {
                        let e: f64 = rng.sample(StandardNormal);
                        x + spec.emission_noise * e
                    })
                    .collect();
                runs[s].push(rows.len());
                rows.push(quantize(row));
                labels.push(s + 1);
            }
        }
        let summary = runs.iter().map(|members| medoid(members, &rows)).collect();

        let id = format!("album_{a:05}");
        let mut ts = BASE_TIMESTAMP + a as i64 * 1_000_000;
        let items = (0..rows.len())
            .map(|i| {
                ts += rng.gen_range(1..=120);
                ImageMeta {
                    image_id: format!("{id}_img_{i:04}"),
                    timestamp: ts,
                }
            })
            .collect();
        let features = Matrix::from_rows(&rows).expect("uniform row width");
        albums.push(Album::new(id.clone(), items, features)?);
        truth.albums.insert(id, AlbumTruth { labels, summary });
    }
    Ok((Dataset::new("synthetic", albums)?, truth))
}

/// Round through `f32` so the in-memory dataset equals what the feature
/// file stores.
fn quantize(row: Vec<f64>) -> Vec<f64> {
    row.into_iter().map(|v| f64::from(v as f32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            num_albums: 20,
            dim: 8,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn single_state_degenerate() {
        let (ds, truth) = gen_synthetic(&SyntheticSpec {
            num_states: 1,
            repeats_min: 5,
            repeats_max: 5,
            distractor_prob: 0.0,
            ..spec()
        })
        .unwrap();
        for album in &ds.albums {
            assert_eq!(album.len(), 5);
            let t = truth.get(&album.id).unwrap();
            assert_eq!(t.labels, vec![1; 5]);
            assert_eq!(t.summary.len(), 1);
        }
    }

    #[test]
    fn noiseless_rows_equal_prototypes() {
        let (ds, truth) = gen_synthetic(&SyntheticSpec {
            num_states: 4,
            distractor_prob: 0.0,
            emission_noise: 0.0,
            ..spec()
        })
        .unwrap();
        for album in &ds.albums {
            let distinct: HashSet<Vec<u64>> = album
                .features
                .iter_rows()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(distinct.len(), 4);
            let labels = &truth.get(&album.id).unwrap().labels;
            for i in 1..album.len() {
                if labels[i] == labels[i - 1] {
                    assert_eq!(album.feature(i), album.feature(i - 1));
                }
            }
        }
    }

    #[test]
    fn timestamps_strictly_increase_and_summary_is_ordered() {
        let (ds, truth) = gen_synthetic(&spec()).unwrap();
        for album in &ds.albums {
            assert!(album.items.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            let t = truth.get(&album.id).unwrap();
            assert_eq!(t.summary.len(), 10);
            assert!(t.summary.windows(2).all(|w| w[0] < w[1]));
            for (s, &i) in t.summary.iter().enumerate() {
                assert_eq!(t.labels[i], s + 1);
            }
        }
    }

    #[test]
    fn mean_album_length_matches_expectation() {
        let s = SyntheticSpec {
            num_albums: 200,
            ..spec()
        };
        let (ds, _) = gen_synthetic(&s).unwrap();
        let mean = ds.total_items() as f64 / ds.len() as f64;
        // E[T] = L · E[repeats] / (1 − p) = 10 · 12.5 / 0.8
        let expected = 156.25;
        // sd of one album length is about 20, so 200 albums give sd ≈ 1.4
        assert!((mean - expected).abs() < 6.0, "mean T {mean}");
        assert!((10.0 * 5.0 / 0.8..=10.0 * 20.0 / 0.8).contains(&mean));
    }

    #[test]
    fn medoid_is_the_central_row() {
        let rows = vec![vec![0.0], vec![10.0], vec![1.0], vec![2.0]];
        assert_eq!(medoid(&[0, 2, 3], &rows), 2);
        assert_eq!(medoid(&[0, 1], &rows), 0);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let err = gen_synthetic(&SyntheticSpec {
            repeats_min: 6,
            repeats_max: 5,
            ..spec()
        })
        .unwrap_err();
        assert!(err.to_string().contains("repeats_min"));
        assert!(gen_synthetic(&SyntheticSpec {
            distractor_prob: 1.0,
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn truth_json_round_trip() {
        let (_, truth) = gen_synthetic(&spec()).unwrap();
        let json = truth.to_json();
        assert_eq!(PlantedTruth::from_json(&json).unwrap(), truth);
    }
}
