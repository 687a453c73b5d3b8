//! Height-offset observables: spherical averages, their martingale
//! structure, and the exact edge decomposition used by the empirical
//! pathology tests.
//!
//! With heights pinned to zero at the root, the sphere average
//! `H_r = |W_r|^{-1} sum_{v in W_r} sigma_v` is a martingale in `r` for any
//! centered edge law, and its second moment has a closed form obtained by
//! grouping vertex pairs by their split level. The decomposition splits
//! `H_r` across a fixed root edge into a past part, a future part pinned at
//! the far endpoint, and the edge increment with exact rational weights
//! `(d/(d+1), 1/(d+1), 1/(d+1))`.

pub mod batch;
pub mod stats;

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::sampler::{heights_pinned_at_root, GradientSample, IsingChainParams};
use crate::transfer::{EdgeDistribution, Parity, TransferOperator};
use crate::tree::{TreeIndex, TreeSpec, VertexId};

/// Sphere averages `H_1 .. H_r_max` of one sample, with successive gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct HovSeries {
    pub r_max: u32,
    /// `values[r - 1]` is `H_r`.
    pub values: Vec<f64>,
    /// `gaps[r - 1]` is `H_{r+1} - H_r`.
    pub gaps: Vec<f64>,
}

/// Average height over the sphere `W_r`, pinned at the root.
pub fn spherical_average(index: &TreeIndex, sample: &GradientSample, r: u32) -> Result<f64> {
    if r == 0 || r > index.spec().depth {
        return Err(CoreError::invalid(format!(
            "sphere radius {r} outside 1..={}",
            index.spec().depth
        )));
    }
    Ok(hov_series(index, sample, r)?.values[r as usize - 1])
}

/// All sphere averages up to `r_max` in one height sweep.
pub fn hov_series(index: &TreeIndex, sample: &GradientSample, r_max: u32) -> Result<HovSeries> {
    if sample.spec() != index.spec() {
        return Err(CoreError::invalid("sample and index describe different trees"));
    }
    if r_max == 0 || r_max > index.spec().depth {
        return Err(CoreError::invalid(format!(
            "r_max {r_max} outside 1..={}",
            index.spec().depth
        )));
    }
    let mut heights = Vec::new();
    heights_pinned_at_root(index, sample.increments(), &mut heights);
    let mut values = Vec::with_capacity(r_max as usize);
    for r in 1..=r_max {
        let start = index.level_start(r) as usize;
        let size = index.level_size(r) as usize;
        let sum: i64 = heights[start..start + size].iter().map(|&h| i64::from(h)).sum();
        values.push(sum as f64 / size as f64);
    }
    let gaps = values.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(HovSeries {
        r_max,
        values,
        gaps,
    })
}

/// Exact second moment `E[H_r^2]` for i.i.d. centered increments with
/// per-edge second moment `E[Y^2]`, via the split-level pair counts:
///
/// ```text
///     E[H_r^2] = E[Y^2] / |W_r| * sum_n n * count(d, r, n).
/// ```
pub fn exact_second_moment(dist: &EdgeDistribution, d: u32, r: u32) -> Result<f64> {
    if d < 2 {
        return Err(CoreError::invalid("branching number d must be at least 2"));
    }
    if r == 0 {
        return Err(CoreError::invalid("radius must be at least 1"));
    }
    let df = f64::from(d);
    // Pair-count ratios: count(n)/|W_r| is (d-1)/((d+1) d^n) for 1 <= n < r
    // and 1/((d+1) d^(r-1)) for n = r; the n = 0 block contributes nothing.
    let mut s = 0.0f64;
    let mut dn = df; // d^n
    for n in 1..r {
        s += f64::from(n) * (df - 1.0) / ((df + 1.0) * dn);
        dn *= df;
    }
    s += f64::from(r) * df / ((df + 1.0) * dn);
    Ok(dist.moment(2) * s)
}

/// Sup over `r` of the exact second moments, i.e. the limit
/// `E[Y^2] * d / (d^2 - 1)`.
pub fn second_moment_limit(dist: &EdgeDistribution, d: u32) -> Result<f64> {
    if d < 2 {
        return Err(CoreError::invalid("branching number d must be at least 2"));
    }
    let df = f64::from(d);
    Ok(dist.moment(2) * df / (df * df - 1.0))
}

/// Edge law for the one-step martingale check.
pub enum MartingaleLaw<'a> {
    /// I.i.d. increments from the given (centered, symmetric) law.
    Free(&'a EdgeDistribution),
    /// Parity-conditional increments over a sampled fuzzy chain.
    TwoPeriodic {
        q: &'a TransferOperator,
        params: &'a IsingChainParams,
    },
    /// Arbitrary integer law given as weights; not assumed centered. An
    /// asymmetric law serves as a negative control: the check must report
    /// its mean as the deviation.
    Custom(&'a BTreeMap<i64, f64>),
}

/// Result of the one-step martingale check.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleCheck {
    /// Largest `|E[H_{r+1} | level <= r data] - H_r|` over the sampled
    /// configurations.
    pub max_abs_deviation: f64,
    /// Largest one-edge mass missed by the summation window.
    pub mass_leak: f64,
    pub configs: usize,
}

/// Verifies `E[H_{r+1} | F_r] = H_r` by exact one-step averaging over
/// `configs` sampled level-`r` configurations.
///
/// The level-`r+1` increments are integrated out analytically over the
/// window `[-h_max, h_max]` (for the two-periodic law the conditioning
/// includes the fuzzy chain, which fixes each kernel's parity). Any window
/// clipping shows up in `mass_leak` and, for a clipped centered law, as a
/// deviation proportional to the clipped mass.
pub fn one_step_martingale_check(
    law: MartingaleLaw,
    tree: &TreeSpec,
    r: u32,
    h_max: u32,
    seed: u64,
    configs: usize,
) -> Result<MartingaleCheck> {
    if r == 0 || r + 1 > tree.depth {
        return Err(CoreError::invalid(format!(
            "need 1 <= r and r + 1 <= depth, got r = {r}, depth = {}",
            tree.depth
        )));
    }
    if configs == 0 {
        return Err(CoreError::invalid("at least one configuration is required"));
    }
    let index = TreeIndex::new(*tree);

    // Window moments of a pmf: (mass, mean) over [-h_max, h_max].
    let window = |pmf: &dyn Fn(i64) -> f64| -> (f64, f64) {
        let h = i64::from(h_max);
        let mut mass = 0.0;
        let mut mean = 0.0;
        for j in -h..=h {
            let p = pmf(j);
            mass += p;
            mean += j as f64 * p;
        }
        (mass, mean)
    };

    enum Laws {
        Shared { mass: f64, mean: f64, leak: f64 },
        PerParity { even: (f64, f64), odd: (f64, f64), leak: f64 },
    }
    let laws = match &law {
        MartingaleLaw::Free(dist) => {
            let (mass, mean) = window(&|j| dist.pmf(j));
            Laws::Shared {
                mass,
                mean,
                leak: (1.0 - mass).max(0.0),
            }
        }
        MartingaleLaw::TwoPeriodic { q, .. } => {
            let even_k = q.conditional_kernel(Parity::Even);
            let odd_k = q.conditional_kernel(Parity::Odd);
            let even = window(&|j| even_k.pmf(j));
            let odd = window(&|j| odd_k.pmf(j));
            Laws::PerParity {
                even,
                odd,
                leak: (1.0 - even.0.min(odd.0)).max(0.0),
            }
        }
        MartingaleLaw::Custom(weights) => {
            if weights.is_empty() || weights.values().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(CoreError::invalid(
                    "custom law needs nonnegative finite weights",
                ));
            }
            let total: f64 = weights.values().sum();
            if total <= 0.0 {
                return Err(CoreError::invalid("custom law has zero total mass"));
            }
            let (mass, mean) = window(&|j| weights.get(&j).copied().unwrap_or(0.0) / total);
            Laws::Shared {
                mass,
                mean,
                leak: (1.0 - mass).max(0.0),
            }
        }
    };

    let mut max_dev = 0.0f64;
    let mut heights = Vec::new();
    for c in 0..configs as u64 {
        // Sample one configuration of everything measurable at level r (for
        // the two-periodic law: the full fuzzy chain as well).
        let (increments, fuzzy) = match &law {
            MartingaleLaw::Free(dist) => {
                let s = crate::sampler::sample_free(tree, dist, seed, 1 + c as usize)?
                    .pop()
                    .unwrap();
                (s.increments().to_vec(), None)
            }
            MartingaleLaw::TwoPeriodic { q, params } => {
                let s = crate::sampler::sample_two_periodic(tree, q, params, seed, 1 + c as usize)?
                    .pop()
                    .unwrap();
                (s.increments().to_vec(), s.fuzzy().map(|f| f.to_vec()))
            }
            MartingaleLaw::Custom(weights) => {
                let table = crate::sampler::alias::AliasTable::from_weighted(
                    weights.keys().map(|&j| j as i32).collect(),
                    &weights.values().copied().collect::<Vec<_>>(),
                )?;
                let key = crate::sampler::rng::StreamKey::new(
                    seed,
                    crate::sampler::rng::Domain::EdgeIncrement,
                    c,
                );
                (
                    (0..index.edge_count())
                        .map(|e| table.sample(key.draw(u64::from(e))))
                        .collect(),
                    None,
                )
            }
        };
        heights_pinned_at_root(&index, &increments, &mut heights);

        let start_r = index.level_start(r) as usize;
        let size_r = index.level_size(r) as usize;
        let sum_r: f64 = heights[start_r..start_r + size_r]
            .iter()
            .map(|&h| f64::from(h))
            .sum();
        let h_r = sum_r / size_r as f64;

        // E[H_{r+1} | F_r]: each child contributes mass * sigma_parent + mean.
        let start_c = index.level_start(r + 1);
        let size_c = index.level_size(r + 1);
        let mut expect = 0.0f64;
        for off in 0..size_c {
            let v = start_c + off;
            let parent = index.parent(v).unwrap();
            let sigma_u = f64::from(heights[parent as usize]);
            let (mass, mean) = match &laws {
                Laws::Shared { mass, mean, .. } => (*mass, *mean),
                Laws::PerParity { even, odd, .. } => {
                    let f = fuzzy.as_ref().expect("two-periodic samples carry a chain");
                    if f[v as usize] == f[parent as usize] {
                        *even
                    } else {
                        *odd
                    }
                }
            };
            expect += mass * sigma_u + mean;
        }
        expect /= f64::from(size_c);
        max_dev = max_dev.max((expect - h_r).abs());
    }

    let leak = match laws {
        Laws::Shared { leak, .. } => leak,
        Laws::PerParity { leak, .. } => leak,
    };
    Ok(MartingaleCheck {
        max_abs_deviation: max_dev,
        mass_leak: leak,
        configs,
    })
}

/// Exact split of a sphere average across one root edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeDecomposition {
    pub d: u32,
    pub r: u32,
    /// Sum of root-pinned heights over the past part of `W_r`.
    pub past_sum: i64,
    /// Sum over the future part of `W_r` of heights re-pinned at the far
    /// edge endpoint (i.e. with the endpoint's own height subtracted).
    pub future_sum_pinned: i64,
    /// Increment along the distinguished edge.
    pub edge_increment: i32,
    pub past_count: u64,
    pub future_count: u64,
}

impl EdgeDecomposition {
    pub fn past_avg(&self) -> f64 {
        self.past_sum as f64 / self.past_count as f64
    }

    pub fn future_avg(&self) -> f64 {
        self.future_sum_pinned as f64 / self.future_count as f64
    }

    /// The exact convex weights `(past, future, edge)`.
    pub fn weights(&self) -> (f64, f64, f64) {
        let df = f64::from(self.d);
        (df / (df + 1.0), 1.0 / (df + 1.0), 1.0 / (df + 1.0))
    }

    /// Recombines the three parts; equals the sphere average exactly.
    pub fn reconstruct(&self) -> f64 {
        let (wp, wf, we) = self.weights();
        wp * self.past_avg() + wf * self.future_avg() + we * f64::from(self.edge_increment)
    }

    /// Integer form of the same identity: the total height sum over `W_r`.
    pub fn reconstruct_exact_sum(&self) -> i64 {
        self.past_sum
            + self.future_sum_pinned
            + self.future_count as i64 * i64::from(self.edge_increment)
    }
}

/// Splits `H_r` across the edge from the root to the level-1 vertex `v`.
///
/// Only Cayley trees carry the exact `(d/(d+1), 1/(d+1), 1/(d+1))` weights:
/// at radius `r` the past part of the sphere has `d^r` vertices and the
/// future part `d^(r-1)`.
pub fn decompose(
    index: &TreeIndex,
    sample: &GradientSample,
    v: &VertexId,
    r: u32,
) -> Result<EdgeDecomposition> {
    let spec = *index.spec();
    if sample.spec() != &spec {
        return Err(CoreError::invalid("sample and index describe different trees"));
    }
    if spec.kind != crate::tree::TreeKind::Cayley {
        return Err(CoreError::invalid("edge decomposition requires a Cayley tree"));
    }
    if v.level() != 1 {
        return Err(CoreError::invalid("decomposition vertex must neighbor the root"));
    }
    if r == 0 || r > spec.depth {
        return Err(CoreError::invalid(format!("radius {r} outside 1..={}", spec.depth)));
    }
    let mut heights = Vec::new();
    heights_pinned_at_root(index, sample.increments(), &mut heights);

    let k = u32::from(v.path()[0]);
    let eta = sample.increments()[index.index_of(v) as usize - 1];
    let start = index.level_start(r) as usize;
    let size = index.level_size(r) as usize;
    let (block_start, block_end) = index.subtree_block_at_level(k, r);
    let total: i64 = heights[start..start + size].iter().map(|&h| i64::from(h)).sum();
    let future: i64 = heights[block_start as usize..block_end as usize]
        .iter()
        .map(|&h| i64::from(h))
        .sum();
    let future_count = u64::from(block_end - block_start);
    Ok(EdgeDecomposition {
        d: spec.d,
        r,
        past_sum: total - future,
        future_sum_pinned: future - future_count as i64 * i64::from(eta),
        edge_increment: eta,
        past_count: size as u64 - future_count,
        future_count,
    })
}

/// Histogram of the integer parts of pinned-marginal observations, with a
/// near-integer diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalHistogram {
    pub r: u32,
    pub n_total: u64,
    /// Counts of `floor(value)`.
    pub counts: BTreeMap<i64, u64>,
    /// Observations within `1e-9` of an exact integer (floor ties are
    /// sensitive there).
    pub near_integer: u64,
}

impl MarginalHistogram {
    pub fn frequency(&self, cell: i64) -> f64 {
        *self.counts.get(&cell).unwrap_or(&0) as f64 / self.n_total as f64
    }
}

/// Bins a batch of real-valued marginal observations by integer part.
pub fn pinned_marginal(values: &[f64], r: u32) -> Result<MarginalHistogram> {
    if values.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let mut counts = BTreeMap::new();
    let mut near = 0u64;
    for &v in values {
        if !v.is_finite() {
            return Err(CoreError::invalid("non-finite marginal observation"));
        }
        *counts.entry(v.floor() as i64).or_insert(0) += 1;
        near += u64::from((v - v.round()).abs() < 1e-9);
    }
    Ok(MarginalHistogram {
        r,
        n_total: values.len() as u64,
        counts,
        near_integer: near,
    })
}
