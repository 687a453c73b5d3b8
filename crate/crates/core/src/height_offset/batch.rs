//! Streaming collection of the tail statistics used by the pathology tests.
//!
//! A full sample on a deep ball is large, but the tests only need five
//! integers per replica: past and pinned-future height sums at the two top
//! radii, plus the distinguished edge increment. Replicas are therefore
//! generated, reduced, and discarded in parallel chunks; every replica's
//! draws are counter-derived, so the result is independent of chunk
//! scheduling.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::sampler::{heights_pinned_at_root, MeasureSampler, SampleBuf};
use crate::tree::TreeKind;

/// Per-replica reduction: integer height sums over the sphere parts at the
/// two retained radii (`r_max`, `r_max - 1`), all pinned at the root except
/// the future parts, which are pinned at the distinguished level-1 vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TailPoint {
    pub past_top: i32,
    pub past_prev: i32,
    pub future_top: i32,
    pub future_prev: i32,
    /// Increment along the root edge to the distinguished vertex.
    pub eta: i32,
}

/// Which of the two retained radii a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldLevel {
    /// Radius `r_max`.
    Top,
    /// Radius `r_max - 1`.
    Prev,
}

impl TailPoint {
    pub fn past(&self, level: FoldLevel) -> i64 {
        match level {
            FoldLevel::Top => i64::from(self.past_top),
            FoldLevel::Prev => i64::from(self.past_prev),
        }
    }

    pub fn future(&self, level: FoldLevel) -> i64 {
        match level {
            FoldLevel::Top => i64::from(self.future_top),
            FoldLevel::Prev => i64::from(self.future_prev),
        }
    }
}

/// Shape of a tail batch: branching number and the retained radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchGeometry {
    pub d: u32,
    pub r_max: u32,
}

impl BatchGeometry {
    pub fn radius(&self, level: FoldLevel) -> u32 {
        match level {
            FoldLevel::Top => self.r_max,
            FoldLevel::Prev => self.r_max - 1,
        }
    }

    /// Number of sphere vertices on the past side: `d^r`.
    pub fn past_count(&self, level: FoldLevel) -> f64 {
        f64::from(self.d).powi(self.radius(level) as i32)
    }

    /// Number of sphere vertices on the future side: `d^(r-1)`.
    pub fn future_count(&self, level: FoldLevel) -> f64 {
        f64::from(self.d).powi(self.radius(level) as i32 - 1)
    }

    pub fn past_avg(&self, p: &TailPoint, level: FoldLevel) -> f64 {
        p.past(level) as f64 / self.past_count(level)
    }

    pub fn future_avg(&self, p: &TailPoint, level: FoldLevel) -> f64 {
        p.future(level) as f64 / self.future_count(level)
    }

    /// Weighted past contribution `d/(d+1) * past_avg`.
    pub fn x(&self, p: &TailPoint, level: FoldLevel) -> f64 {
        let df = f64::from(self.d);
        df / (df + 1.0) * self.past_avg(p, level)
    }

    /// Edge-exterior part `Z = d/(d+1) * past_avg + 1/(d+1) * future_avg`.
    pub fn z(&self, p: &TailPoint, level: FoldLevel) -> f64 {
        let df = f64::from(self.d);
        self.x(p, level) + self.future_avg(p, level) / (df + 1.0)
    }

    /// Full sphere average `H = Z + eta/(d+1)`.
    pub fn h(&self, p: &TailPoint, level: FoldLevel) -> f64 {
        let df = f64::from(self.d);
        self.z(p, level) + f64::from(p.eta) / (df + 1.0)
    }
}

const CHUNK: u64 = 4096;

/// Reduces `n` replicas of the sampler's measure to tail points. The
/// sampler's ball depth must equal `r_max` (no wasted levels) and `r_max`
/// must be at least 2 so that both retained radii exist.
pub fn collect_tail_batch(
    sampler: &MeasureSampler,
    seed: u64,
    n: usize,
    r_max: u32,
) -> Result<(BatchGeometry, Vec<TailPoint>)> {
    let spec = *sampler.index().spec();
    if spec.kind != TreeKind::Cayley {
        return Err(CoreError::invalid("tail batches require a Cayley tree"));
    }
    if r_max < 2 {
        return Err(CoreError::invalid("r_max must be at least 2"));
    }
    if spec.depth != r_max {
        return Err(CoreError::invalid(format!(
            "sampler depth {} must equal r_max {r_max}",
            spec.depth
        )));
    }
    if n == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let index = sampler.index();
    let top_start = index.level_start(r_max) as usize;
    let top_size = index.level_size(r_max) as usize;
    let prev_start = index.level_start(r_max - 1) as usize;
    let prev_size = index.level_size(r_max - 1) as usize;
    // Future blocks of the distinguished vertex (level-1 child 0) lead each
    // level, so the block sums are prefix sums.
    let top_block = index.subtree_block_at_level(0, r_max);
    let prev_block = index.subtree_block_at_level(0, r_max - 1);
    let top_future = (top_block.1 - top_block.0) as usize;
    let prev_future = (prev_block.1 - prev_block.0) as usize;
    debug_assert_eq!(top_block.0 as usize, top_start);
    debug_assert_eq!(prev_block.0 as usize, prev_start);

    let chunks = n as u64 / CHUNK + u64::from(n as u64 % CHUNK != 0);
    let nested: Vec<Vec<TailPoint>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(n as u64);
            let mut buf = SampleBuf::new();
            let mut points = Vec::with_capacity((hi - lo) as usize);
            for replica in lo..hi {
                sampler.fill(seed, replica, &mut buf);
                heights_pinned_at_root(index, &buf.increments, &mut buf.heights);
                let h = &buf.heights;
                let eta = buf.increments[0];
                let sum = |range: std::ops::Range<usize>| -> i64 {
                    h[range].iter().map(|&x| i64::from(x)).sum()
                };
                let top_total = sum(top_start..top_start + top_size);
                let top_fut = sum(top_start..top_start + top_future);
                let prev_total = sum(prev_start..prev_start + prev_size);
                let prev_fut = sum(prev_start..prev_start + prev_future);
                points.push(TailPoint {
                    past_top: (top_total - top_fut) as i32,
                    past_prev: (prev_total - prev_fut) as i32,
                    future_top: (top_fut - top_future as i64 * i64::from(eta)) as i32,
                    future_prev: (prev_fut - prev_future as i64 * i64::from(eta)) as i32,
                    eta,
                });
            }
            points
        })
        .collect();

    let mut points = Vec::with_capacity(n);
    for chunk in nested {
        points.extend(chunk);
    }
    Ok((
        BatchGeometry {
            d: spec.d,
            r_max,
        },
        points,
    ))
}

/// Sphere averages at the requested radii for `n` replicas; row `k` holds
/// `H_r` for replica `k` at each radius in `rs`.
pub fn level_average_batch(
    sampler: &MeasureSampler,
    seed: u64,
    n: usize,
    rs: &[u32],
) -> Result<Vec<Vec<f64>>> {
    let index = sampler.index();
    let depth = index.spec().depth;
    if rs.is_empty() {
        return Err(CoreError::invalid("no radii requested"));
    }
    if rs.iter().any(|&r| r == 0 || r > depth) {
        return Err(CoreError::invalid(format!("radii must lie in 1..={depth}")));
    }
    if n == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let spans: Vec<(usize, usize)> = rs
        .iter()
        .map(|&r| (index.level_start(r) as usize, index.level_size(r) as usize))
        .collect();

    let chunks = n as u64 / CHUNK + u64::from(n as u64 % CHUNK != 0);
    let nested: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(n as u64);
            let mut buf = SampleBuf::new();
            let mut rows = Vec::with_capacity((hi - lo) as usize);
            for replica in lo..hi {
                sampler.fill(seed, replica, &mut buf);
                heights_pinned_at_root(index, &buf.increments, &mut buf.heights);
                rows.push(
                    spans
                        .iter()
                        .map(|&(start, size)| {
                            let s: i64 = buf.heights[start..start + size]
                                .iter()
                                .map(|&x| i64::from(x))
                                .sum();
                            s as f64 / size as f64
                        })
                        .collect(),
                );
            }
            rows
        })
        .collect();

    let mut rows = Vec::with_capacity(n);
    for chunk in nested {
        rows.extend(chunk);
    }
    Ok(rows)
}
