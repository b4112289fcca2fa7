//! Albums, datasets and their on-disk representation.

pub mod format;
pub mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{cosine, norm, Matrix, RngStream};

pub use format::{decode_features, encode_features, read_features, write_features, FeatureBlock};
pub use synthetic::{gen_synthetic, AlbumTruth, PlantedTruth, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt feature file: {0}")]
    CorruptFormat(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("cannot parse timestamp for {image_id}: {value}")]
    TimestampParse { image_id: String, value: String },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("album {album}: row {row} out of range for feature file with {count} rows")]
    RowOutOfRange {
        album: String,
        row: usize,
        count: usize,
    },
    #[error("duplicate album id {0}")]
    DuplicateAlbum(String),
    #[error("album {0} has no items")]
    EmptyAlbum(String),
    #[error("need at least {needed} albums, have {have}")]
    TooFewAlbums { needed: usize, have: usize },
    #[error("invalid split ratio {0}; must lie in (0, 1)")]
    InvalidRatio(f64),
    #[error("zero feature vector at album {album}, item {item}")]
    ZeroVector { album: String, item: String },
    #[error("invalid synthetic spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
}

impl DataError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u32 {
        match self {
            DataError::Io(_) => 10,
            DataError::CorruptFormat(_) => 11,
            DataError::DimensionMismatch { .. } => 12,
            DataError::TimestampParse { .. } => 13,
            DataError::Manifest(_) => 14,
            DataError::RowOutOfRange { .. } => 15,
            DataError::DuplicateAlbum(_) => 16,
            DataError::EmptyAlbum(_) => 17,
            DataError::TooFewAlbums { .. } => 18,
            DataError::InvalidRatio(_) => 19,
            DataError::ZeroVector { .. } => 20,
            DataError::InvalidSpec { .. } => 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub timestamp: i64,
}

/// A photo stream: image metadata plus one feature row per image, in
/// timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct Album {
    pub id: String,
    pub items: Vec<ImageMeta>,
    pub features: Matrix,
}

impl Album {
    pub fn new(id: impl Into<String>, items: Vec<ImageMeta>, features: Matrix) -> Result<Self, DataError> {
        let id = id.into();
        if items.is_empty() {
            return Err(DataError::EmptyAlbum(id));
        }
        if items.len() != features.rows() {
            return Err(DataError::DimensionMismatch {
                context: format!("album {id} item count"),
                expected: items.len(),
                actual: features.rows(),
            });
        }
        Ok(Self { id, items, features })
    }

    /// Album with synthetic ids and timestamps `0, 1, 2, …`; mostly for tests.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let id = id.into();
        let features = Matrix::from_rows(rows).map_err(|_| DataError::DimensionMismatch {
            context: format!("album {id} rows"),
            expected: rows.first().map_or(0, Vec::len),
            actual: rows.iter().map(Vec::len).find(|&l| l != rows[0].len()).unwrap_or(0),
        })?;
        let items = (0..rows.len())
            .map(|i| ImageMeta {
                image_id: format!("{id}_{i:04}"),
                timestamp: i as i64,
            })
            .collect();
        Album::new(id, items, features)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub concept: String,
    pub albums: Vec<Album>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(concept: impl Into<String>, albums: Vec<Album>) -> Result<Self, DataError> {
        let dim = albums.first().map_or(0, Album::dim);
        let mut seen = HashSet::new();
        for album in &albums {
            if album.dim() != dim {
                return Err(DataError::DimensionMismatch {
                    context: format!("album {}", album.id),
                    expected: dim,
                    actual: album.dim(),
                });
            }
            if !seen.insert(album.id.as_str()) {
                return Err(DataError::DuplicateAlbum(album.id.clone()));
            }
        }
        Ok(Self {
            concept: concept.into(),
            albums,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.albums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.albums.is_empty()
    }

    pub fn album(&self, id: &str) -> Option<&Album> {
        self.albums.iter().find(|a| a.id == id)
    }

    pub fn total_items(&self) -> usize {
        self.albums.iter().map(Album::len).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub concept: String,
    pub albums: Vec<ManifestAlbum>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAlbum {
    pub id: String,
    pub feature_file: String,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub image_id: String,
    /// Epoch seconds, as a JSON integer or a decimal string.
    pub timestamp: serde_json::Value,
    pub row: usize,
}

fn parse_timestamp(item: &ManifestItem) -> Result<i64, DataError> {
    let parsed = match &item.timestamp {
        serde_json::Value::Number(n) => n.as_i64(),
        serde_json::Value::String(s) => s.trim().parse::<i64>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| DataError::TimestampParse {
        image_id: item.image_id.clone(),
        value: item.timestamp.to_string(),
    })
}

/// Load a manifest and the feature files it references (paths relative
/// to the manifest's directory). Items are stably sorted by timestamp.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut albums = Vec::with_capacity(manifest.albums.len());
    let mut dim: Option<usize> = None;
    for entry in &manifest.albums {
        let block = decode_features(&fs::read(base.join(&entry.feature_file))?)?;
        match dim {
            None => dim = Some(block.dim),
            Some(d) if d != block.dim => {
                return Err(DataError::DimensionMismatch {
                    context: format!("feature file {}", entry.feature_file),
                    expected: d,
                    actual: block.dim,
                })
            }
            Some(_) => {}
        }
        if entry.items.is_empty() {
            return Err(DataError::EmptyAlbum(entry.id.clone()));
        }

        let mut rows = Vec::with_capacity(entry.items.len());
        for item in &entry.items {
            let ts = parse_timestamp(item)?;
            if item.row >= block.rows.len() {
                return Err(DataError::RowOutOfRange {
                    album: entry.id.clone(),
                    row: item.row,
                    count: block.rows.len(),
                });
            }
            rows.push((ts, item));
        }
        // Vec::sort_by_key is stable: equal timestamps keep manifest order
        rows.sort_by_key(|(ts, _)| *ts);

        let mut items = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * block.dim);
        for (ts, item) in rows {
            items.push(ImageMeta {
                image_id: item.image_id.clone(),
                timestamp: ts,
            });
            data.extend(block.rows[item.row].iter().map(|&v| f64::from(v)));
        }
        let features = Matrix::from_vec(items.len(), block.dim, data)
            .expect("row lengths validated by decoder");
        albums.push(Album::new(entry.id.clone(), items, features)?);
    }
    Dataset::new(manifest.concept, albums)
}

/// Write a dataset as a manifest plus one feature file per album under
/// `dir`. Returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path, manifest_name: &str) -> Result<PathBuf, DataError> {
    let feature_dir = dir.join("features");
    fs::create_dir_all(&feature_dir)?;
    let mut entries = Vec::with_capacity(ds.albums.len());
    for (i, album) in ds.albums.iter().enumerate() {
        let rel = format!("features/album_{i:05}.srnf");
        let rows: Vec<Vec<f32>> = album
            .features
            .iter_rows()
            .map(|r| r.iter().map(|&v| v as f32).collect())
            .collect();
        fs::write(dir.join(&rel), encode_features(ds.dim, &rows)?)?;
        entries.push(ManifestAlbum {
            id: album.id.clone(),
            feature_file: rel,
            items: album
                .items
                .iter()
                .enumerate()
                .map(|(row, m)| ManifestItem {
                    image_id: m.image_id.clone(),
                    timestamp: serde_json::Value::from(m.timestamp),
                    row,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        concept: ds.concept.clone(),
        albums: entries,
    };
    let path = dir.join(manifest_name);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    fs::write(&path, json)?;
    Ok(path)
}

/// Random album-level split; the first part receives `round(ratio·count)`
/// albums, clamped so neither part is empty. Each part keeps the original
/// album order.
pub fn split_train_val(ds: &Dataset, ratio: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    let count = ds.albums.len();
    if count < 2 {
        return Err(DataError::TooFewAlbums { needed: 2, have: count });
    }
    let n_train = ((ratio * count as f64).round() as usize).clamp(1, count - 1);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| Dataset {
        concept: ds.concept.clone(),
        albums: idx.iter().map(|&i| ds.albums[i].clone()).collect(),
        dim: ds.dim,
    };
    Ok((pick(&train_idx), pick(&val_idx)))
}

pub fn l2_normalize(ds: &Dataset) -> Result<Dataset, DataError> {
    let mut out = ds.clone();
    for album in &mut out.albums {
        let dim = album.dim();
        for (i, row) in album.features.as_mut_slice().chunks_exact_mut(dim).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(DataError::ZeroVector {
                    album: album.id.clone(),
                    item: album.items[i].image_id.clone(),
                });
            }
            for v in row {
                *v /= n;
            }
        }
    }
    Ok(out)
}

/// Fraction of consecutive image pairs whose cosine similarity exceeds the
/// mean cosine similarity over all within-album pairs.
pub fn repetition_statistic(ds: &Dataset) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for album in &ds.albums {
        for i in 0..album.len() {
            for j in i + 1..album.len() {
                if let Some(c) = cosine(album.feature(i), album.feature(j)) {
                    total += c;
                    pairs += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return 0.0;
    }
    let mean = total / pairs as f64;
    let mut above = 0usize;
    let mut consecutive = 0usize;
    for album in &ds.albums {
        for i in 1..album.len() {
            if let Some(c) = cosine(album.feature(i - 1), album.feature(i)) {
                consecutive += 1;
                if c > mean {
                    above += 1;
                }
            }
        }
    }
    if consecutive == 0 {
        0.0
    } else {
        above as f64 / consecutive as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn album(id: &str, rows: &[Vec<f64>]) -> Album {
        Album::from_rows(id, rows).unwrap()
    }

    fn dataset(n: usize) -> Dataset {
        let albums = (0..n)
            .map(|i| album(&format!("a{i}"), &[vec![i as f64 + 1.0, 0.0]]))
            .collect();
        Dataset::new("c", albums).unwrap()
    }

    #[test]
    fn split_sizes() {
        let mut rng = RngStream::new(0, 0);
        let (tr, va) = split_train_val(&dataset(10), 0.9, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (9, 1));
        let (tr, va) = split_train_val(&dataset(2), 0.5, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
        assert!(matches!(
            split_train_val(&dataset(1), 0.5, &mut rng),
            Err(DataError::TooFewAlbums { .. })
        ));
        assert!(matches!(
            split_train_val(&dataset(4), 1.0, &mut rng),
            Err(DataError::InvalidRatio(_))
        ));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = dataset(17);
        let ids = |d: &Dataset| d.albums.iter().map(|a| a.id.clone()).collect::<Vec<_>>();
        let (a1, b1) = split_train_val(&ds, 0.7, &mut RngStream::new(42, 3)).unwrap();
        let (a2, b2) = split_train_val(&ds, 0.7, &mut RngStream::new(42, 3)).unwrap();
        assert_eq!(ids(&a1), ids(&a2));
        assert_eq!(ids(&b1), ids(&b2));
        let train: HashSet<_> = ids(&a1).into_iter().collect();
        assert!(ids(&b1).iter().all(|id| !train.contains(id)));
        assert_eq!(a1.len() + b1.len(), 17);
    }

    #[test]
    fn normalize_examples() {
        let ds = Dataset::new("c", vec![album("a", &[vec![3.0, 4.0], vec![0.0, 1.0]])]).unwrap();
        let out = l2_normalize(&ds).unwrap();
        assert!((out.albums[0].feature(0)[0] - 0.6).abs() < 1e-15);
        assert!((out.albums[0].feature(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(out.albums[0].feature(1), &[0.0, 1.0]);

        let bad = Dataset::new("c", vec![album("z", &[vec![1.0, 1.0], vec![0.0, 0.0]])]).unwrap();
        match l2_normalize(&bad) {
            Err(DataError::ZeroVector { album, item }) => {
                assert_eq!(album, "z");
                assert_eq!(item, "z_0001");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_mixed_dims_and_duplicates() {
        let a = album("a", &[vec![1.0, 2.0]]);
        let b = album("b", &[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            Dataset::new("c", vec![a.clone(), b]),
            Err(DataError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new("c", vec![a.clone(), a]),
            Err(DataError::DuplicateAlbum(_))
        ));
    }

    #[test]
    fn error_codes_are_distinct() {
        let errs = [
            DataError::CorruptFormat(String::new()),
            DataError::DimensionMismatch { context: String::new(), expected: 1, actual: 2 },
            DataError::TimestampParse { image_id: String::new(), value: String::new() },
        ];
        let codes: HashSet<u32> = errs.iter().map(DataError::code).collect();
        assert_eq!(codes.len(), errs.len());
    }
}
