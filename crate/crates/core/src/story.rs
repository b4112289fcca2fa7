use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoryError {
    #[error("story needs at least 2 indices, got {0}")]
    TooShort(usize),
    #[error("story indices must be strictly increasing: {0:?}")]
    NotIncreasing(Vec<usize>),
    #[error("story index {index} out of bounds for album of length {len}")]
    OutOfBounds { index: usize, len: usize },
}

/// Strictly increasing 0-based positions into an album, length ≥ 2.
///
/// Serialized and displayed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoryIndices(Vec<usize>);

impl StoryIndices {
    pub fn new(indices: Vec<usize>, album_len: usize) -> Result<Self, StoryError> {
        if indices.len() < 2 {
            return Err(StoryError::TooShort(indices.len()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StoryError::NotIncreasing(indices));
        }
        let last = *indices.last().unwrap();
        if last >= album_len {
            return Err(StoryError::OutOfBounds {
                index: last,
                len: album_len,
            });
        }
        Ok(Self(indices))
    }

    pub fn from_one_based(indices: &[usize], album_len: usize) -> Result<Self, StoryError> {
        if let Some(&i) = indices.iter().find(|&&i| i == 0) {
            return Err(StoryError::OutOfBounds { index: i, len: album_len });
        }
        Self::new(indices.iter().map(|i| i - 1).collect(), album_len)
    }

    /// `(0, 1, …, n-1)`.
    pub fn prefix(n: usize, album_len: usize) -> Result<Self, StoryError> {
        Self::new((0..n).collect(), album_len)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl std::ops::Index<usize> for StoryIndices {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl Serialize for StoryIndices {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StoryIndices {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        if raw.contains(&0) {
            return Err(serde::de::Error::custom("story indices are 1-based"));
        }
        let zero_based: Vec<usize> = raw.iter().map(|i| i - 1).collect();
        Self::new(zero_based, usize::MAX).map_err(serde::de::Error::custom)
    }
}
