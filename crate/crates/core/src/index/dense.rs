use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use super::embed::{dot, EmbeddingProvider, EmbeddingVector, EMBEDDING_DIM};
use super::{BuildError, IndexError, Scored};
use crate::ids::UnitId;

const PARALLEL_ROWS: usize = 4096;

/// Exhaustive inner-product index over unit vectors (inner product equals
/// cosine). Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseIndex {
    ids: Vec<UnitId>,
    matrix: Vec<f32>,
    rows: HashMap<UnitId, usize>,
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id))
}

/// Keeps the best `k` of `scored` under [`rank_order`], sorted.
pub(crate) fn select_top(mut scored: Vec<Scored>, k: usize) -> Vec<Scored> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

impl DenseIndex {
    pub fn from_vectors(entries: Vec<(UnitId, EmbeddingVector)>) -> Result<Self, IndexError> {
        let mut index = Self {
            ids: Vec::with_capacity(entries.len()),
            matrix: Vec::with_capacity(entries.len() * EMBEDDING_DIM),
            rows: HashMap::with_capacity(entries.len()),
        };
        for (id, v) in entries {
            if index.rows.insert(id, index.ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            index.ids.push(id);
            index.matrix.extend_from_slice(v.as_slice());
        }
        Ok(index)
    }

    /// Rebuilds from raw row-major storage, checking the unit-norm invariant.
    pub(crate) fn from_raw(ids: Vec<UnitId>, matrix: Vec<f32>) -> Result<Self, IndexError> {
        if matrix.len() != ids.len() * EMBEDDING_DIM {
            return Err(IndexError::Corrupt(format!(
                "{} floats for {} ids",
                matrix.len(),
                ids.len()
            )));
        }
        let entries = ids
            .into_iter()
            .zip(matrix.chunks_exact(EMBEDDING_DIM))
            .map(|(id, row)| EmbeddingVector::from_unit(row.to_vec()).map(|v| (id, v)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IndexError::Corrupt(e.to_string()))?;
        Self::from_vectors(entries)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[UnitId] {
        &self.ids
    }

    pub(crate) fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn vector(&self, id: UnitId) -> Option<&[f32]> {
        self.rows.get(&id).map(|&r| self.row(r))
    }

    fn row(&self, r: usize) -> &[f32] {
        &self.matrix[r * EMBEDDING_DIM..(r + 1) * EMBEDDING_DIM]
    }

    pub fn score(&self, q: &EmbeddingVector, id: UnitId) -> Option<f64> {
        self.vector(id).map(|row| dot(row, q.as_slice()))
    }

    /// The `min(k, N)` highest cosine scores.
    pub fn topk(&self, q: &EmbeddingVector, k: usize) -> Vec<Scored> {
        self.topk_where(q, k, |_| true)
    }

    /// Like [`topk`](Self::topk), restricted to ids accepted by `keep`.
    pub fn topk_where(&self, q: &EmbeddingVector, k: usize, keep: impl Fn(UnitId) -> bool + Sync) -> Vec<Scored> {
        let q = q.as_slice();
        let score_row = |(r, id): (usize, &UnitId)| keep(*id).then(|| Scored { id: *id, score: dot(self.row(r), q) });
        let scored: Vec<Scored> = if self.ids.len() >= PARALLEL_ROWS {
            self.ids.par_iter().enumerate().filter_map(score_row).collect()
        } else {
            self.ids.iter().enumerate().filter_map(score_row).collect()
        };
        select_top(scored, k)
    }
}

/// Embeds every unit and builds the flat index.
pub fn build_dense(units: &[(UnitId, &str)], provider: &dyn EmbeddingProvider) -> Result<DenseIndex, BuildError> {
    let mut seen = std::collections::HashSet::with_capacity(units.len());
    for (id, _) in units {
        if !seen.insert(*id) {
            return Err(BuildError::Index(IndexError::DuplicateId(*id)));
        }
    }
    let mut entries = Vec::with_capacity(units.len());
    for batch in units.chunks(256) {
        let texts: Vec<&str> = batch.iter().map(|(_, t)| *t).collect();
        let vectors = provider.embed_batch(&texts).map_err(|source| BuildError::Embedding {
            embedded: entries.len(),
            total: units.len(),
            source,
        })?;
        entries.extend(batch.iter().map(|(id, _)| *id).zip(vectors));
    }
    Ok(DenseIndex::from_vectors(entries)?)
}
