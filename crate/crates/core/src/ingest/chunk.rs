use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub size: usize,
    pub stride: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { size: 500, stride: 100 }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.size == 0 || self.stride == 0 || self.stride > self.size {
            return Err(IngestError::InvalidChunking { size: self.size, stride: self.stride });
        }
        Ok(())
    }
}

/// Token windows for a document of `len` tokens.
///
/// Full windows start at every multiple of `stride` up to `len - size`; when
/// that leaves a tail, one more window `[len - size, len)` is clamped to the
/// end. Documents no longer than `size` get a single window.
pub fn chunk_spans(len: usize, cfg: ChunkConfig) -> Result<Vec<Range<usize>>, IngestError> {
    cfg.validate()?;
    if len == 0 {
        return Ok(Vec::new());
    }
    if len <= cfg.size {
        return Ok(vec![0..len]);
    }
    let last_full = len - cfg.size;
    let mut spans: Vec<Range<usize>> = (0..=last_full)
        .step_by(cfg.stride)
        .map(|s| s..s + cfg.size)
        .collect();
    if last_full % cfg.stride != 0 {
        spans.push(last_full..len);
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(len: usize) -> Vec<Range<usize>> {
        chunk_spans(len, ChunkConfig::default()).unwrap()
    }

    #[test]
    fn boundary_cases() {
        assert_eq!(spans(500), vec![0..500]);
        assert_eq!(spans(50), vec![0..50]);
        assert!(spans(0).is_empty());
    }

    #[test]
    fn seven_hundred_tokens() {
        assert_eq!(spans(700), vec![0..500, 100..600, 200..700]);
    }

    #[test]
    fn clamped_tail() {
        // 650 - 500 = 150, not a multiple of 100: starts 0, 100, then tail at 150
        assert_eq!(spans(650), vec![0..500, 100..600, 150..650]);
    }

    #[test]
    fn bad_configs() {
        for (size, stride) in [(0, 1), (10, 0), (10, 11)] {
            assert!(chunk_spans(5, ChunkConfig { size, stride }).is_err());
        }
    }

    proptest! {
        #[test]
        fn coverage_and_count(len in 1usize..5000, size in 1usize..600, stride_frac in 0.01f64..=1.0) {
            let stride = ((size as f64 * stride_frac).ceil() as usize).clamp(1, size);
            let cfg = ChunkConfig { size, stride };
            let s = chunk_spans(len, cfg).unwrap();
            prop_assert_eq!(s.first().unwrap().start, 0);
            prop_assert_eq!(s.last().unwrap().end, len);
            for w in s.windows(2) {
                prop_assert!(w[1].start <= w[0].end, "gap");
                prop_assert!(w[1].start > w[0].start);
            }
            prop_assert!(s.iter().all(|r| r.len() <= size && !r.is_empty()));
            if len > size {
                let extra = usize::from((len - size) % stride != 0);
                prop_assert_eq!(s.len(), (len - size) / stride + 1 + extra);
            } else {
                prop_assert_eq!(s.len(), 1);
            }
        }
    }
}
