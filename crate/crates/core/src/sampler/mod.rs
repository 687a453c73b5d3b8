//! Seeded samplers for gradient configurations on tree balls.
//!
//! Two measures are implemented. The *free* measure draws every root-outward
//! edge increment i.i.d. from a normalized edge law. The *two-periodic*
//! measure first samples a hidden parity chain (a two-state tree-indexed
//! Markov chain given by a root law and a keep probability), then draws each
//! increment from the parity-conditional kernel selected by whether the edge
//! flips the chain. Increments are stored in flat breadth-first edge order
//! (edge of vertex `v` at slot `v - 1`), and every random draw is
//! counter-derived from `(seed, replica, edge index)`, so batches are
//! reproducible draw-for-draw in any execution order.

pub mod alias;
pub mod boundary;
pub mod finite_volume;
pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::transfer::{EdgeDistribution, FuzzyOperator, Parity, TransferOperator};
use crate::tree::{OrientedEdge, TreeIndex, TreeSpec, VertexId};
use alias::AliasTable;
use rng::{Domain, StreamKey};

pub use boundary::{solve_boundary_law, BoundaryLawSolution};
pub use finite_volume::{finite_volume_check, FiniteVolumeReport, VolumeMeasure};

/// Provenance of one replica: which master seed and which replica index
/// produced it. Sufficient to regenerate the sample bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTag {
    pub seed: u64,
    pub replica: u64,
}

/// One sampled increment configuration on the root-outward edges of a ball,
/// optionally with the hidden parity chain that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    spec: TreeSpec,
    increments: Vec<i32>,
    fuzzy: Option<Vec<u8>>,
    seed_tag: SeedTag,
}

impl GradientSample {
    /// Assembles a sample from raw parts, enforcing the structural
    /// invariants: one increment per edge, one parity class per vertex when
    /// the fuzzy layer is present, and parity consistency (increment parity
    /// equals the mod-2 difference of the endpoint classes) on every edge.
    pub fn from_parts(
        spec: TreeSpec,
        increments: Vec<i32>,
        fuzzy: Option<Vec<u8>>,
        seed_tag: SeedTag,
    ) -> Result<GradientSample> {
        if increments.len() as u64 != spec.edge_count() {
            return Err(CoreError::invalid(format!(
                "expected {} increments, got {}",
                spec.edge_count(),
                increments.len()
            )));
        }
        if let Some(classes) = &fuzzy {
            if classes.len() as u64 != spec.ball_size() {
                return Err(CoreError::invalid(format!(
                    "expected {} parity classes, got {}",
                    spec.ball_size(),
                    classes.len()
                )));
            }
            if classes.iter().any(|&c| c > 1) {
                return Err(CoreError::invalid("parity classes must be 0 or 1"));
            }
            let index = TreeIndex::new(spec);
            for v in 1..index.ball_size() {
                let p = index.parent(v).unwrap();
                let edge_parity = (classes[v as usize] ^ classes[p as usize]) as i64;
                if Parity::of(i64::from(increments[v as usize - 1])) != Parity::of(edge_parity) {
                    return Err(CoreError::invalid(format!(
                        "increment parity on edge to vertex {v} contradicts the fuzzy chain"
                    )));
                }
            }
        }
        Ok(GradientSample {
            spec,
            increments,
            fuzzy,
            seed_tag,
        })
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    /// Flat edge-ordered increments; slot `v - 1` belongs to the edge whose
    /// child is flat vertex `v`.
    pub fn increments(&self) -> &[i32] {
        &self.increments
    }

    pub fn increment(&self, index: &TreeIndex, edge: &OrientedEdge) -> i32 {
        self.increments[index.index_of(&edge.child) as usize - 1]
    }

    pub fn fuzzy(&self) -> Option<&[u8]> {
        self.fuzzy.as_deref()
    }

    pub fn fuzzy_class(&self, index: &TreeIndex, v: &VertexId) -> Option<Parity> {
        self.fuzzy.as_ref().map(|classes| {
            if classes[index.index_of(v) as usize] == 0 {
                Parity::Even
            } else {
                Parity::Odd
            }
        })
    }

    pub fn seed_tag(&self) -> SeedTag {
        self.seed_tag
    }
}

/// Homogeneous two-state tree-indexed Markov chain for the hidden parity
/// layer: class 0 (even) at the root with probability `root_law`, and each
/// child keeping its parent's class with probability `p_same`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingChainParams {
    root_law: f64,
    p_same: f64,
}

impl IsingChainParams {
    pub fn new(root_law: f64, p_same: f64) -> Result<IsingChainParams> {
        for (name, v) in [("root_law", root_law), ("p_same", p_same)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(CoreError::invalid(format!(
                    "{name} must lie strictly inside (0, 1), got {v}"
                )));
            }
        }
        Ok(IsingChainParams { root_law, p_same })
    }

    /// Chain reproducing the free measure's parity layer: unbiased root,
    /// keep probability `q_even / ||Q||_1`. Sampling the two-periodic
    /// construction with these parameters is exactly the free measure.
    pub fn free_chain(fz: &FuzzyOperator) -> IsingChainParams {
        IsingChainParams {
            root_law: 0.5,
            p_same: fz.q_even / fz.total(),
        }
    }

    pub fn root_law(&self) -> f64 {
        self.root_law
    }

    pub fn p_same(&self) -> f64 {
        self.p_same
    }
}

/// Reusable per-worker buffers for streaming batch pipelines.
#[derive(Debug, Default, Clone)]
pub struct SampleBuf {
    pub increments: Vec<i32>,
    pub fuzzy: Option<Vec<u8>>,
    pub heights: Vec<i32>,
}

impl SampleBuf {
    pub fn new() -> SampleBuf {
        SampleBuf::default()
    }
}

/// Writes the parity chain of one replica into `out` (one class per flat
/// vertex).
fn fill_fuzzy(index: &TreeIndex, params: &IsingChainParams, seed: u64, replica: u64, out: &mut Vec<u8>) {
    let spec = *index.spec();
    out.clear();
    out.resize(index.ball_size() as usize, 0);
    let root_key = StreamKey::new(seed, Domain::RootClass, replica);
    out[0] = u8::from(root_key.uniform(0) >= params.root_law);
    let chain = StreamKey::new(seed, Domain::FuzzyChain, replica);
    for r in 1..=spec.depth {
        let start = index.level_start(r);
        let parent_start = index.level_start(r - 1);
        for off in 0..index.level_size(r) {
            let v = start + off;
            let parent = if r == 1 { 0 } else { parent_start + off / spec.d };
            let keep = chain.uniform(u64::from(v) - 1) < params.p_same;
            out[v as usize] = if keep {
                out[parent as usize]
            } else {
                1 - out[parent as usize]
            };
        }
    }
}

/// Sampler for the free measure: i.i.d. edge increments.
#[derive(Debug, Clone)]
pub struct FreeSampler {
    index: TreeIndex,
    table: AliasTable,
}

impl FreeSampler {
    pub fn new(spec: TreeSpec, dist: &EdgeDistribution) -> Result<FreeSampler> {
        Ok(FreeSampler {
            index: TreeIndex::new(spec),
            table: AliasTable::from_distribution(dist)?,
        })
    }

    pub fn index(&self) -> &TreeIndex {
        &self.index
    }

    pub fn fill_increments(&self, seed: u64, replica: u64, out: &mut Vec<i32>) {
        let edges = self.index.edge_count() as usize;
        out.clear();
        out.reserve(edges);
        let key = StreamKey::new(seed, Domain::EdgeIncrement, replica);
        for e in 0..edges as u64 {
            out.push(self.table.sample(key.draw(e)));
        }
    }

    pub fn sample(&self, seed: u64, replica: u64) -> GradientSample {
        let mut increments = Vec::new();
        self.fill_increments(seed, replica, &mut increments);
        GradientSample {
            spec: *self.index.spec(),
            increments,
            fuzzy: None,
            seed_tag: SeedTag { seed, replica },
        }
    }
}

/// Sampler for two-periodic measures: hidden parity chain first, then
/// parity-conditional increments.
#[derive(Debug, Clone)]
pub struct TwoPeriodicSampler {
    index: TreeIndex,
    even: AliasTable,
    odd: AliasTable,
    params: IsingChainParams,
}

impl TwoPeriodicSampler {
    pub fn new(spec: TreeSpec, q: &TransferOperator, params: IsingChainParams) -> Result<TwoPeriodicSampler> {
        Ok(TwoPeriodicSampler {
            index: TreeIndex::new(spec),
            even: AliasTable::from_distribution(&q.conditional_kernel(Parity::Even))?,
            odd: AliasTable::from_distribution(&q.conditional_kernel(Parity::Odd))?,
            params,
        })
    }

    pub fn index(&self) -> &TreeIndex {
        &self.index
    }

    pub fn params(&self) -> &IsingChainParams {
        &self.params
    }

    pub fn fill(&self, seed: u64, replica: u64, increments: &mut Vec<i32>, fuzzy: &mut Vec<u8>) {
        let spec = *self.index.spec();
        fill_fuzzy(&self.index, &self.params, seed, replica, fuzzy);
        let edges = self.index.edge_count() as usize;
        increments.clear();
        increments.reserve(edges);
        let key = StreamKey::new(seed, Domain::EdgeIncrement, replica);
        for r in 1..=spec.depth {
            let start = self.index.level_start(r);
            let parent_start = self.index.level_start(r - 1);
            for off in 0..self.index.level_size(r) {
                let v = start + off;
                let parent = if r == 1 { 0 } else { parent_start + off / spec.d };
                let table = if fuzzy[v as usize] == fuzzy[parent as usize] {
                    &self.even
                } else {
                    &self.odd
                };
                increments.push(table.sample(key.draw(u64::from(v) - 1)));
            }
        }
    }

    pub fn sample(&self, seed: u64, replica: u64) -> GradientSample {
        let mut increments = Vec::new();
        let mut fuzzy = Vec::new();
        self.fill(seed, replica, &mut increments, &mut fuzzy);
        GradientSample {
            spec: *self.index.spec(),
            increments,
            fuzzy: Some(fuzzy),
            seed_tag: SeedTag { seed, replica },
        }
    }
}

/// Either measure behind one interface, for batch pipelines that do not care
/// which they are driving.
#[derive(Debug, Clone)]
pub enum MeasureSampler {
    Free(FreeSampler),
    TwoPeriodic(TwoPeriodicSampler),
}

impl MeasureSampler {
    pub fn index(&self) -> &TreeIndex {
        match self {
            MeasureSampler::Free(s) => s.index(),
            MeasureSampler::TwoPeriodic(s) => s.index(),
        }
    }

    /// Fills `buf.increments` (and `buf.fuzzy` for the two-periodic case)
    /// with replica `replica`.
    pub fn fill(&self, seed: u64, replica: u64, buf: &mut SampleBuf) {
        match self {
            MeasureSampler::Free(s) => {
                s.fill_increments(seed, replica, &mut buf.increments);
                buf.fuzzy = None;
            }
            MeasureSampler::TwoPeriodic(s) => {
                let fuzzy = buf.fuzzy.get_or_insert_with(Vec::new);
                s.fill(seed, replica, &mut buf.increments, fuzzy);
            }
        }
    }

    pub fn sample(&self, seed: u64, replica: u64) -> GradientSample {
        match self {
            MeasureSampler::Free(s) => s.sample(seed, replica),
            MeasureSampler::TwoPeriodic(s) => s.sample(seed, replica),
        }
    }
}

/// Batch of free-measure samples; replica indices `0..n`.
pub fn sample_free(
    tree: &TreeSpec,
    dist: &EdgeDistribution,
    seed: u64,
    n: usize,
) -> Result<Vec<GradientSample>> {
    if n == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let sampler = FreeSampler::new(*tree, dist)?;
    Ok((0..n as u64).map(|k| sampler.sample(seed, k)).collect())
}

/// Batch of parity-chain configurations (one class per flat vertex).
pub fn sample_fuzzy_chain(
    tree: &TreeSpec,
    params: &IsingChainParams,
    seed: u64,
    n: usize,
) -> Result<Vec<Vec<u8>>> {
    if n == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let index = TreeIndex::new(*tree);
    Ok((0..n as u64)
        .map(|k| {
            let mut out = Vec::new();
            fill_fuzzy(&index, params, seed, k, &mut out);
            out
        })
        .collect())
}

/// Batch of two-periodic samples with their fuzzy chains retained.
pub fn sample_two_periodic(
    tree: &TreeSpec,
    q: &TransferOperator,
    params: &IsingChainParams,
    seed: u64,
    n: usize,
) -> Result<Vec<GradientSample>> {
    if n == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let sampler = TwoPeriodicSampler::new(*tree, q, *params)?;
    Ok((0..n as u64).map(|k| sampler.sample(seed, k)).collect())
}

/// Absolute heights obtained from a gradient sample by pinning one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedHeights {
    anchor: (VertexId, i32),
    heights: Vec<i32>,
}

impl PinnedHeights {
    pub fn anchor(&self) -> (&VertexId, i32) {
        (&self.anchor.0, self.anchor.1)
    }

    /// Heights in flat breadth-first vertex order.
    pub fn heights(&self) -> &[i32] {
        &self.heights
    }

    pub fn height(&self, index: &TreeIndex, v: &VertexId) -> i32 {
        self.heights[index.index_of(v) as usize]
    }
}

/// Writes root-pinned heights (`heights[root] = 0`) into `out` by a level
/// sweep of prefix sums.
pub fn heights_pinned_at_root(index: &TreeIndex, increments: &[i32], out: &mut Vec<i32>) {
    debug_assert_eq!(increments.len(), index.edge_count() as usize);
    let spec = *index.spec();
    out.clear();
    out.resize(index.ball_size() as usize, 0);
    for r in 1..=spec.depth {
        let start = index.level_start(r);
        let parent_start = index.level_start(r - 1);
        for off in 0..index.level_size(r) {
            let v = start + off;
            let parent = if r == 1 { 0 } else { parent_start + off / spec.d };
            out[v as usize] = out[parent as usize] + increments[v as usize - 1];
        }
    }
}

/// Turns a gradient sample into absolute heights with `heights(x) = s`.
pub fn pin(index: &TreeIndex, sample: &GradientSample, x: &VertexId, s: i32) -> Result<PinnedHeights> {
    if sample.spec() != index.spec() {
        return Err(CoreError::invalid("sample and index describe different trees"));
    }
    if x.level() > index.spec().depth {
        return Err(CoreError::invalid("pinning vertex lies outside the ball"));
    }
    let mut heights = Vec::new();
    heights_pinned_at_root(index, sample.increments(), &mut heights);
    let shift = s - heights[index.index_of(x) as usize];
    for h in &mut heights {
        *h += shift;
    }
    Ok(PinnedHeights {
        anchor: (x.clone(), s),
        heights,
    })
}

#[derive(Serialize)]
struct SampleLine<'a> {
    seed_tag: SeedTag,
    increments: Vec<(&'a [u8], i32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fuzzy: Option<Vec<(&'a [u8], u8)>>,
}

/// Exports a batch as JSON lines: one object per sample with the seed tag,
/// `[path, increment]` pairs for every root-outward edge (path of the child
/// vertex), and `[path, class]` pairs for the fuzzy chain when present.
pub fn export_jsonl<W: std::io::Write>(
    index: &TreeIndex,
    samples: &[GradientSample],
    out: &mut W,
) -> Result<()> {
    let paths: Vec<VertexId> = (0..index.ball_size()).map(|v| index.path_of(v)).collect();
    for sample in samples {
        if sample.spec() != index.spec() {
            return Err(CoreError::invalid("sample and index describe different trees"));
        }
        let line = SampleLine {
            seed_tag: sample.seed_tag(),
            increments: sample
                .increments()
                .iter()
                .enumerate()
                .map(|(e, &j)| (paths[e + 1].path(), j))
                .collect(),
            fuzzy: sample.fuzzy().map(|classes| {
                classes
                    .iter()
                    .enumerate()
                    .map(|(v, &c)| (paths[v].path(), c))
                    .collect()
            }),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sos_dist() -> EdgeDistribution {
        TransferOperator::sos(1.0, 60).unwrap().normalize()
    }

    fn sos_op() -> TransferOperator {
        TransferOperator::sos(1.0, 60).unwrap()
    }

    #[test]
    fn same_seed_reproduces_bit_identical_samples() {
        let spec = TreeSpec::cayley(2, 4).unwrap();
        let a = sample_free(&spec, &sos_dist(), 99, 3).unwrap();
        let b = sample_free(&spec, &sos_dist(), 99, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].increments(), a[1].increments());
        let c = sample_free(&spec, &sos_dist(), 100, 1).unwrap();
        assert_ne!(a[0].increments(), c[0].increments());
    }

    #[test]
    fn free_edge_marginal_matches_the_law() {
        let spec = TreeSpec::cayley(2, 2).unwrap();
        let dist = sos_dist();
        let n = 20_000usize;
        let samples = sample_free(&spec, &dist, 7, n).unwrap();
        let edges = spec.edge_count() as usize;
        let pooled = (n * edges) as f64;
        let mut counts = std::collections::BTreeMap::<i32, u64>::new();
        for s in &samples {
            for &j in s.increments() {
                *counts.entry(j).or_default() += 1;
            }
        }
        for j in -3i64..=3 {
            let p = dist.pmf(j);
            let freq = *counts.get(&(j as i32)).unwrap_or(&0) as f64 / pooled;
            let se = (p * (1.0 - p) / pooled).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "j={j}: {freq} vs {p}");
        }
    }

    #[test]
    fn disjoint_edges_are_uncorrelated() {
        let spec = TreeSpec::cayley(2, 2).unwrap();
        let n = 100_000usize;
        let sampler = FreeSampler::new(spec, &sos_dist()).unwrap();
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
        let mut buf = Vec::new();
        for k in 0..n as u64 {
            sampler.fill_increments(5, k, &mut buf);
            let (x, y) = (f64::from(buf[0]), f64::from(buf[4]));
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        // Correlation estimate of independent variables has SE ~ 1/sqrt(n).
        assert!(corr.abs() < 3.5 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn fuzzy_chain_degenerate_and_fair_cases() {
        let spec = TreeSpec::cayley(2, 4).unwrap();
        let constant = IsingChainParams::new(0.5, 1.0 - 1e-15).unwrap();
        let configs = sample_fuzzy_chain(&spec, &constant, 3, 5).unwrap();
        for cfg in &configs {
            assert!(cfg.iter().all(|&c| c == cfg[0]), "p_same ~ 1 must freeze the chain");
        }

        let fair = IsingChainParams::new(0.5, 0.5).unwrap();
        let index = TreeIndex::new(spec);
        let n = 2_000usize;
        let configs = sample_fuzzy_chain(&spec, &fair, 11, n).unwrap();
        let mut same = 0u64;
        let mut edges = 0u64;
        for cfg in &configs {
            for v in 1..index.ball_size() {
                let p = index.parent(v).unwrap();
                same += u64::from(cfg[v as usize] == cfg[p as usize]);
                edges += 1;
            }
        }
        let freq = same as f64 / edges as f64;
        // Keep decisions are i.i.d. across edges, so SE = 1/(2 sqrt(edges)).
        assert!((freq - 0.5).abs() < 4.0 / (2.0 * (edges as f64).sqrt()), "freq {freq}");
    }

    #[test]
    fn free_chain_params_match_parity_agreement_frequency() {
        let op = sos_op();
        let fz = op.fuzzy_project();
        let params = IsingChainParams::free_chain(&fz);
        let expect = fz.q_even / fz.total();
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let index = TreeIndex::new(spec);
        let n = 4_000usize;
        let configs = sample_fuzzy_chain(&spec, &params, 21, n).unwrap();
        let mut same = 0u64;
        let mut edges = 0u64;
        for cfg in &configs {
            for v in 1..index.ball_size() {
                let p = index.parent(v).unwrap();
                same += u64::from(cfg[v as usize] == cfg[p as usize]);
                edges += 1;
            }
        }
        let freq = same as f64 / edges as f64;
        let se = (expect * (1.0 - expect) / edges as f64).sqrt();
        assert!((freq - expect).abs() < 4.0 * se, "freq {freq} vs {expect}");
    }

    #[test]
    fn two_periodic_samples_satisfy_parity_consistency() {
        let op = sos_op();
        let params = IsingChainParams::new(0.3, 0.8).unwrap();
        let spec = TreeSpec::cayley(2, 4).unwrap();
        let index = TreeIndex::new(spec);
        let samples = sample_two_periodic(&spec, &op, &params, 17, 50).unwrap();
        for s in &samples {
            let fuzzy = s.fuzzy().expect("two-periodic samples carry their chain");
            for v in 1..index.ball_size() {
                let p = index.parent(v).unwrap();
                let edge_parity = fuzzy[v as usize] ^ fuzzy[p as usize];
                assert_eq!(
                    s.increments()[v as usize - 1].rem_euclid(2) as u8,
                    edge_parity,
                    "replica {} vertex {v}",
                    s.seed_tag().replica
                );
            }
            // from_parts re-validates the same invariant.
            assert!(GradientSample::from_parts(
                spec,
                s.increments().to_vec(),
                s.fuzzy().map(|f| f.to_vec()),
                s.seed_tag()
            )
            .is_ok());
        }
    }

    #[test]
    fn two_periodic_conditional_increment_means_vanish() {
        let op = sos_op();
        let params = IsingChainParams::new(0.4, 0.75).unwrap();
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let index = TreeIndex::new(spec);
        let samples = sample_two_periodic(&spec, &op, &params, 29, 8_000).unwrap();
        let mut same = (0.0f64, 0.0f64, 0u64); // sum, sum_sq, count
        let mut diff = (0.0f64, 0.0f64, 0u64);
        for s in &samples {
            let fuzzy = s.fuzzy().unwrap();
            for v in 1..index.ball_size() {
                let p = index.parent(v).unwrap();
                let j = f64::from(s.increments()[v as usize - 1]);
                let acc = if fuzzy[v as usize] == fuzzy[p as usize] {
                    &mut same
                } else {
                    &mut diff
                };
                acc.0 += j;
                acc.1 += j * j;
                acc.2 += 1;
            }
        }
        for (label, (sum, sum_sq, count)) in [("same", same), ("diff", diff)] {
            let n = count as f64;
            let mean = sum / n;
            let sd = (sum_sq / n - mean * mean).sqrt();
            assert!(
                mean.abs() < 3.0 * sd / n.sqrt(),
                "{label}-class mean {mean} exceeds 3 SE"
            );
        }
    }

    #[test]
    fn two_periodic_with_free_chain_reproduces_free_marginals() {
        let op = sos_op();
        let dist = op.normalize();
        let params = IsingChainParams::free_chain(&op.fuzzy_project());
        let spec = TreeSpec::cayley(2, 2).unwrap();
        let n = 20_000usize;
        let samples = sample_two_periodic(&spec, &op, &params, 31, n).unwrap();
        let pooled = (n as u64 * spec.edge_count()) as f64;
        let mut counts = std::collections::BTreeMap::<i32, u64>::new();
        for s in &samples {
            for &j in s.increments() {
                *counts.entry(j).or_default() += 1;
            }
        }
        for j in -3i64..=3 {
            let p = dist.pmf(j);
            let freq = *counts.get(&(j as i32)).unwrap_or(&0) as f64 / pooled;
            let se = (p * (1.0 - p) / pooled).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "j={j}: {freq} vs {p}");
        }
    }

    #[test]
    fn pinning_fixes_the_anchor_and_shifts_rigidly() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let index = TreeIndex::new(spec);
        let sample = sample_free(&spec, &sos_dist(), 13, 1).unwrap().remove(0);
        let root = VertexId::root();
        let x = VertexId::from_path(&spec, vec![1, 0]).unwrap();

        let at_root = pin(&index, &sample, &root, 0).unwrap();
        assert_eq!(at_root.height(&index, &root), 0);
        let at_x = pin(&index, &sample, &x, 5).unwrap();
        assert_eq!(at_x.height(&index, &x), 5);

        // Two pinnings differ by a constant everywhere.
        let delta = at_x.heights()[0] - at_root.heights()[0];
        for v in 0..index.ball_size() as usize {
            assert_eq!(at_x.heights()[v] - at_root.heights()[v], delta);
        }
        // That constant is (t - s) minus the increment sum along the path
        // from the old anchor to the new one.
        let path_sum: i32 = {
            let mut acc = 0;
            let mut cur = index.index_of(&x);
            while cur != 0 {
                acc += sample.increments()[cur as usize - 1];
                cur = index.parent(cur).unwrap();
            }
            acc
        };
        assert_eq!(delta, 5 - 0 - path_sum);

        // Increments are reproduced by height differences.
        for v in 1..index.ball_size() {
            let p = index.parent(v).unwrap();
            assert_eq!(
                at_x.heights()[v as usize] - at_x.heights()[p as usize],
                sample.increments()[v as usize - 1]
            );
        }
    }

    #[test]
    fn pinning_constant_field_from_zero_increments() {
        let spec = TreeSpec::cayley(2, 2).unwrap();
        let index = TreeIndex::new(spec);
        let zeros = GradientSample::from_parts(
            spec,
            vec![0; spec.edge_count() as usize],
            None,
            SeedTag { seed: 0, replica: 0 },
        )
        .unwrap();
        let pinned = pin(&index, &zeros, &VertexId::root(), 5).unwrap();
        assert!(pinned.heights().iter().all(|&h| h == 5));
    }

    #[test]
    fn from_parts_rejects_malformed_samples() {
        let spec = TreeSpec::cayley(2, 2).unwrap();
        let tag = SeedTag { seed: 0, replica: 0 };
        let edges = spec.edge_count() as usize;
        assert!(GradientSample::from_parts(spec, vec![0; edges - 1], None, tag).is_err());
        assert!(
            GradientSample::from_parts(spec, vec![0; edges], Some(vec![0; 3]), tag).is_err()
        );
        assert!(GradientSample::from_parts(
            spec,
            vec![0; edges],
            Some(vec![2; spec.ball_size() as usize]),
            tag
        )
        .is_err());
        // Odd increment on an edge whose endpoints share a class.
        let mut inc = vec![0i32; edges];
        inc[0] = 1;
        assert!(GradientSample::from_parts(
            spec,
            inc,
            Some(vec![0; spec.ball_size() as usize]),
            tag
        )
        .is_err());
    }

    #[test]
    fn invalid_chain_params_and_empty_batches_error() {
        assert!(IsingChainParams::new(0.0, 0.5).is_err());
        assert!(IsingChainParams::new(0.5, 1.0).is_err());
        assert!(IsingChainParams::new(f64::NAN, 0.5).is_err());
        let spec = TreeSpec::cayley(2, 2).unwrap();
        assert!(sample_free(&spec, &sos_dist(), 1, 0).is_err());
    }

    #[test]
    fn jsonl_export_golden_line() {
        let spec = TreeSpec::cayley(2, 1).unwrap();
        let index = TreeIndex::new(spec);
        let sample = GradientSample::from_parts(
            spec,
            vec![1, -2, 0],
            Some(vec![0, 1, 0, 0]),
            SeedTag { seed: 5, replica: 2 },
        )
        .unwrap();
        let mut buf = Vec::new();
        export_jsonl(&index, &[sample], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line,
            "{\"seed_tag\":{\"seed\":5,\"replica\":2},\
             \"increments\":[[[0],1],[[1],-2],[[2],0]],\
             \"fuzzy\":[[[],0],[[0],1],[[1],0],[[2],0]]}\n"
        );
    }
}
