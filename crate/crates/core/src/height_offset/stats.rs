//! Empirical pathology tests on tail batches: loss of translation
//! invariance and of the Markov property under the pinned measure, with
//! bootstrap standard errors and negative controls.
//!
//! Both tests reduce each replica to small integer cell coordinates at the
//! two retained radii and resample *category counts*: a bootstrap replicate
//! draws a multinomial over the observed (top, prev) category pairs via a
//! chain of conditional binomials, then assigns each resampled point to one
//! of the two radii with probability 1/2. The point estimate always uses
//! the top radius; the fold makes the reported SE include the sensitivity
//! of the statistic to the truncation radius. All resampling randomness is
//! counter-derived from the bootstrap seed, so reports are reproducible.

use std::collections::BTreeMap;

use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::height_offset::batch::{BatchGeometry, FoldLevel, TailPoint};
use crate::sampler::alias::AliasTable;
use crate::sampler::rng::{CounterRng, Domain, StreamKey};
use crate::transfer::EdgeDistribution;

/// Decision threshold certifying a pathology.
pub const SIGNIFICANT_Z: f64 = 5.0;
/// Ceiling a negative control must stay under.
pub const CONTROL_Z: f64 = 3.0;

/// Bootstrap resampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: u32,
    pub seed: u64,
    /// Cells with fewer observations than this are flagged undersized.
    pub min_cell: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            seed: 0x626f_6f74,
            min_cell: 25,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(CoreError::invalid("bootstrap needs at least 2 resamples"));
        }
        Ok(())
    }
}

/// Outcome classification of a statistic report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Significant,
    NotSignificant,
    Undersized,
}

/// Half-open interval `[lo, hi)` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Interval> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CoreError::invalid(format!(
                "interval [{lo}, {hi}) is not well formed"
            )));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }
}

/// Samples from `Binomial(n, p)` with the counter RNG, clamping `p` into
/// `[0, 1]` against floating-point drift of the conditional chain.
fn binomial(rng: &mut CounterRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    rand_distr::Binomial::new(n, p)
        .expect("clamped binomial parameters")
        .sample(rng)
}

/// Draws a multinomial resample of the category counts as a chain of
/// conditional binomials; the output sums to the input total exactly.
fn resample_categories(rng: &mut CounterRng, counts: &[u64]) -> Vec<u64> {
    let total: u64 = counts.iter().sum();
    let mut out = Vec::with_capacity(counts.len());
    let mut remaining = total;
    let mut mass_left = total;
    for &m in counts {
        let c = if remaining == 0 {
            0
        } else if m == mass_left {
            remaining
        } else {
            binomial(rng, remaining, m as f64 / mass_left as f64)
        };
        out.push(c);
        remaining -= c;
        mass_left -= m;
    }
    out
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One offset comparison of the translation test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TranslationRow {
    pub b: i64,
    /// Cell `-t - b`.
    pub cell_near: i64,
    /// Cell `-t - b * d`.
    pub cell_far: i64,
    pub count_near: u64,
    pub count_far: u64,
    pub p_near: f64,
    pub p_far: f64,
    pub diff: f64,
    pub se: f64,
    pub z: f64,
    pub undersized: bool,
}

/// Report of the translation-invariance test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationReport {
    pub t: i64,
    pub d: u32,
    pub n: u64,
    pub rows: Vec<TranslationRow>,
    /// Largest `|z|` over adequately sized rows.
    pub max_abs_z: f64,
    pub verdict: Verdict,
}

fn translation_core(
    d: u32,
    t: i64,
    pair_counts: &BTreeMap<(i64, i64), u64>,
    b_values: &[i64],
    cfg: &BootstrapConfig,
) -> Result<TranslationReport> {
    cfg.validate()?;
    if b_values.is_empty() {
        return Err(CoreError::invalid("no offsets requested"));
    }
    let n: u64 = pair_counts.values().sum();
    if n == 0 {
        return Err(CoreError::invalid("empty batch"));
    }

    let mut top_counts = BTreeMap::<i64, u64>::new();
    for (&(ct, _), &m) in pair_counts {
        *top_counts.entry(ct).or_default() += m;
    }
    let targets: Vec<(i64, i64)> = b_values
        .iter()
        .map(|&b| (-t - b, -t - b * i64::from(d)))
        .collect();
    let mut cells: Vec<i64> = targets.iter().flat_map(|&(a, b)| [a, b]).collect();
    cells.sort_unstable();
    cells.dedup();
    let cell_slot = |c: i64| cells.binary_search(&c).ok();

    let keys: Vec<(i64, i64)> = pair_counts.keys().copied().collect();
    let counts: Vec<u64> = pair_counts.values().copied().collect();
    let slots: Vec<(Option<usize>, Option<usize>)> = keys
        .iter()
        .map(|&(ct, cp)| (cell_slot(ct), cell_slot(cp)))
        .collect();

    // Per replicate: resample category counts, fold each point onto one of
    // the two radii, and read off the target-cell frequencies.
    let reps: Vec<Vec<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|rep| {
            let mut rng = CounterRng::new(cfg.seed, Domain::Bootstrap, u64::from(rep));
            let resampled = resample_categories(&mut rng, &counts);
            let mut folded = vec![0u64; cells.len()];
            for (i, &m) in resampled.iter().enumerate() {
                if m == 0 {
                    continue;
                }
                let (slot_top, slot_prev) = slots[i];
                if slot_top.is_none() && slot_prev.is_none() {
                    continue; // neither cell is tracked; the split is irrelevant
                }
                let k = binomial(&mut rng, m, 0.5);
                if let Some(s) = slot_top {
                    folded[s] += k;
                }
                if let Some(s) = slot_prev {
                    folded[s] += m - k;
                }
            }
            let nf = n as f64;
            targets
                .iter()
                .map(|&(near, far)| {
                    if near == far {
                        return 0.0;
                    }
                    let cn = folded[cell_slot(near).unwrap()] as f64;
                    let cf = folded[cell_slot(far).unwrap()] as f64;
                    (cn - cf) / nf
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(b_values.len());
    let mut max_abs_z = 0.0f64;
    let mut any_sized = false;
    for (bi, (&b, &(near, far))) in b_values.iter().zip(&targets).enumerate() {
        let count_near = *top_counts.get(&near).unwrap_or(&0);
        let count_far = *top_counts.get(&far).unwrap_or(&0);
        let p_near = count_near as f64 / n as f64;
        let p_far = count_far as f64 / n as f64;
        let diff = if near == far { 0.0 } else { p_near - p_far };
        let diffs: Vec<f64> = reps.iter().map(|r| r[bi]).collect();
        let (_, se) = mean_sd(&diffs);
        let undersized = count_near.min(count_far) < cfg.min_cell;
        let z = if near == far || se == 0.0 { 0.0 } else { diff / se };
        // An offset-0 row compares a cell with itself: a trivial but valid
        // comparison, so it counts as sized without contributing a z value.
        if !undersized {
            any_sized = true;
            if near != far {
                max_abs_z = max_abs_z.max(z.abs());
            }
        }
        rows.push(TranslationRow {
            b,
            cell_near: near,
            cell_far: far,
            count_near,
            count_far,
            p_near,
            p_far,
            diff,
            se,
            z,
            undersized,
        });
    }
    let verdict = if !any_sized {
        Verdict::Undersized
    } else if max_abs_z > SIGNIFICANT_Z {
        Verdict::Significant
    } else {
        Verdict::NotSignificant
    };
    Ok(TranslationReport {
        t,
        d,
        n,
        rows,
        max_abs_z,
        verdict,
    })
}

/// Tests translation invariance of the pinned measure: compares the
/// frequencies of `floor(Z) = -t - b` and `floor(Z) = -t - b d`, which a
/// translation-invariant limit would have to equate. `Z` is the
/// edge-exterior part of the sphere average at the batch's top radius.
pub fn translation_test(
    geo: &BatchGeometry,
    points: &[TailPoint],
    t: i64,
    b_values: &[i64],
    cfg: &BootstrapConfig,
) -> Result<TranslationReport> {
    if points.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let mut pair_counts = BTreeMap::<(i64, i64), u64>::new();
    for p in points {
        let ct = geo.z(p, FoldLevel::Top).floor() as i64;
        let cp = geo.z(p, FoldLevel::Prev).floor() as i64;
        *pair_counts.entry((ct, cp)).or_default() += 1;
    }
    translation_core(geo.d, t, &pair_counts, b_values, cfg)
}

/// Negative control: synthetic exchangeable `Z` cells drawn uniformly from
/// a window covering every target cell, identical at both radii. Any
/// significant difference here would indict the test machinery itself.
pub fn translation_negative_control(
    d: u32,
    n: usize,
    t: i64,
    b_values: &[i64],
    ctrl_seed: u64,
    cfg: &BootstrapConfig,
) -> Result<TranslationReport> {
    if n == 0 {
        return Err(CoreError::invalid("empty control batch"));
    }
    if b_values.is_empty() {
        return Err(CoreError::invalid("no offsets requested"));
    }
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for &b in b_values {
        for c in [-t - b, -t - b * i64::from(d)] {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    let (lo, hi) = (lo - 2, hi + 2);
    let width = (hi - lo + 1) as f64;
    let key = StreamKey::new(ctrl_seed, Domain::ControlExchangeable, 0);
    let mut pair_counts = BTreeMap::<(i64, i64), u64>::new();
    for i in 0..n as u64 {
        let cell = lo + (key.uniform(i) * width) as i64;
        *pair_counts.entry((cell, cell)).or_default() += 1;
    }
    translation_core(d, t, &pair_counts, b_values, cfg)
}

/// Report of the Markov-property test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovReport {
    pub t: i64,
    pub t_prime: i64,
    pub a1: Interval,
    pub a2: Interval,
    /// Factorization prefactor: the edge-kernel mass at `t' - t` (1 for the
    /// kernel-resampled control, whose estimate is a raw conditional).
    pub prefactor: f64,
    /// Top-radius numerator and denominator counts per interval.
    pub num: [u64; 2],
    pub den: [u64; 2],
    /// Estimates of the conditional probability given each interval.
    pub p: [f64; 2],
    pub diff: f64,
    pub se: f64,
    pub z: f64,
    pub skipped_resamples: u32,
    pub n: u64,
    pub verdict: Verdict,
}

mod flag {
    pub const IN_A1: u8 = 1;
    pub const IN_A2: u8 = 2;
    pub const NUM: u8 = 4;
    pub const DEN: u8 = 8;
}

fn markov_core(
    t: i64,
    t_prime: i64,
    a1: Interval,
    a2: Interval,
    prefactor: f64,
    pair_counts: &BTreeMap<(u8, u8), u64>,
    cfg: &BootstrapConfig,
) -> Result<MarkovReport> {
    cfg.validate()?;
    let n: u64 = pair_counts.values().sum();
    if n == 0 {
        return Err(CoreError::invalid("empty batch"));
    }
    let identical = a1 == a2;

    let tally = |flags: u8, member: u8, event: u8| -> bool {
        flags & member != 0 && flags & event != 0
    };
    let mut num = [0u64; 2];
    let mut den = [0u64; 2];
    for (&(top, _), &m) in pair_counts {
        for (i, member) in [flag::IN_A1, flag::IN_A2].into_iter().enumerate() {
            num[i] += m * u64::from(tally(top, member, flag::NUM));
            den[i] += m * u64::from(tally(top, member, flag::DEN));
        }
    }
    let undersized = den[0] < cfg.min_cell || den[1] < cfg.min_cell;
    let p = [
        if den[0] > 0 { prefactor * num[0] as f64 / den[0] as f64 } else { 0.0 },
        if den[1] > 0 { prefactor * num[1] as f64 / den[1] as f64 } else { 0.0 },
    ];
    let diff = if identical { 0.0 } else { p[0] - p[1] };

    let keys: Vec<(u8, u8)> = pair_counts.keys().copied().collect();
    let counts: Vec<u64> = pair_counts.values().copied().collect();
    let reps: Vec<Option<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|rep| {
            let mut rng = CounterRng::new(cfg.seed, Domain::Bootstrap, u64::from(rep));
            let resampled = resample_categories(&mut rng, &counts);
            let mut rnum = [0u64; 2];
            let mut rden = [0u64; 2];
            for (i, &m) in resampled.iter().enumerate() {
                if m == 0 {
                    continue;
                }
                let (top, prev) = keys[i];
                let k = binomial(&mut rng, m, 0.5);
                for (flags, cnt) in [(top, k), (prev, m - k)] {
                    for (j, member) in [flag::IN_A1, flag::IN_A2].into_iter().enumerate() {
                        rnum[j] += cnt * u64::from(tally(flags, member, flag::NUM));
                        rden[j] += cnt * u64::from(tally(flags, member, flag::DEN));
                    }
                }
            }
            if rden[0] == 0 || rden[1] == 0 {
                return None;
            }
            let p0 = prefactor * rnum[0] as f64 / rden[0] as f64;
            let p1 = prefactor * rnum[1] as f64 / rden[1] as f64;
            Some(p0 - p1)
        })
        .collect();
    let diffs: Vec<f64> = reps.iter().flatten().copied().collect();
    let skipped = (reps.len() - diffs.len()) as u32;
    let (se, z);
    if identical || diffs.len() < 2 {
        se = 0.0;
        z = 0.0;
    } else {
        let (_, sd) = mean_sd(&diffs);
        se = sd;
        z = if se > 0.0 { diff / se } else { 0.0 };
    }
    let verdict = if undersized || skipped > cfg.resamples / 100 || (diffs.len() < 2 && !identical)
    {
        Verdict::Undersized
    } else if z.abs() > SIGNIFICANT_Z {
        Verdict::Significant
    } else {
        Verdict::NotSignificant
    };
    Ok(MarkovReport {
        t,
        t_prime,
        a1,
        a2,
        prefactor,
        num,
        den,
        p,
        diff,
        se,
        z,
        skipped_resamples: skipped,
        n,
        verdict,
    })
}

fn markov_flags(
    geo: &BatchGeometry,
    p: &TailPoint,
    level: FoldLevel,
    t: i64,
    shift: f64,
    a1: Interval,
    a2: Interval,
) -> u8 {
    let x = geo.x(p, level);
    let z = geo.z(p, level);
    let h = geo.h(p, level);
    let mut f = 0u8;
    f |= flag::IN_A1 * u8::from(a1.contains(x));
    f |= flag::IN_A2 * u8::from(a2.contains(x));
    f |= flag::NUM * u8::from((z + shift).floor() as i64 == -t);
    f |= flag::DEN * u8::from(h.floor() as i64 == -t);
    f
}

/// Tests the Markov property of the pinned measure: estimates the
/// conditional probability that the distinguished neighbor sits at height
/// `t'` given the root sits at `t`, refined by which interval the past
/// statistic `X = d/(d+1) * past_avg` falls in. Under a Markov chain the
/// estimate could not depend on the interval; the factorized estimator is
///
/// ```text
///     pmf(t' - t) * #{floor(Z + (t'-t)/(d+1)) = -t, X in A}
///                 / #{floor(H) = -t, X in A}.
/// ```
pub fn markov_test(
    geo: &BatchGeometry,
    points: &[TailPoint],
    dist: &EdgeDistribution,
    t: i64,
    t_prime: i64,
    a1: Interval,
    a2: Interval,
    cfg: &BootstrapConfig,
) -> Result<MarkovReport> {
    if points.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let delta = t_prime - t;
    let mass = dist.pmf(delta);
    if mass <= 0.0 {
        return Err(CoreError::domain(format!(
            "edge kernel carries no mass at t' - t = {delta}"
        )));
    }
    let shift = delta as f64 / (f64::from(geo.d) + 1.0);
    let mut pair_counts = BTreeMap::<(u8, u8), u64>::new();
    for p in points {
        let top = markov_flags(geo, p, FoldLevel::Top, t, shift, a1, a2);
        let prev = markov_flags(geo, p, FoldLevel::Prev, t, shift, a1, a2);
        *pair_counts.entry((top, prev)).or_default() += 1;
    }
    markov_core(t, t_prime, a1, a2, mass, &pair_counts, cfg)
}

/// Negative control: the neighbor height is resampled from the one-edge
/// kernel, ignoring the past statistic. The resulting raw conditional
/// estimate equals the kernel mass at `t' - t` in both intervals, so any
/// significant difference would indict the machinery.
pub fn markov_negative_control(
    geo: &BatchGeometry,
    points: &[TailPoint],
    dist: &EdgeDistribution,
    t: i64,
    t_prime: i64,
    a1: Interval,
    a2: Interval,
    ctrl_seed: u64,
    cfg: &BootstrapConfig,
) -> Result<MarkovReport> {
    if points.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let delta = t_prime - t;
    if dist.pmf(delta) <= 0.0 {
        return Err(CoreError::domain(format!(
            "edge kernel carries no mass at t' - t = {delta}"
        )));
    }
    let table = AliasTable::from_distribution(dist)?;
    let key = StreamKey::new(ctrl_seed, Domain::ControlKernel, 0);
    let mut pair_counts = BTreeMap::<(u8, u8), u64>::new();
    for (i, p) in points.iter().enumerate() {
        let eta_new = i64::from(table.sample(key.draw(i as u64)));
        let mut levels = [0u8; 2];
        for (slot, level) in [(0usize, FoldLevel::Top), (1, FoldLevel::Prev)] {
            let x = geo.x(p, level);
            let h = geo.h(p, level);
            let den = h.floor() as i64 == -t;
            let mut f = 0u8;
            f |= flag::IN_A1 * u8::from(a1.contains(x));
            f |= flag::IN_A2 * u8::from(a2.contains(x));
            f |= flag::NUM * u8::from(den && eta_new == delta);
            f |= flag::DEN * u8::from(den);
            levels[slot] = f;
        }
        *pair_counts.entry((levels[0], levels[1])).or_default() += 1;
    }
    markov_core(t, t_prime, a1, a2, 1.0, &pair_counts, cfg)
}
