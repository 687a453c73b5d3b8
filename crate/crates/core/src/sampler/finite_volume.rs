//! Empirical finite-volume consistency checks.
//!
//! A measure sampled on a depth-1 ball (a star) is checked against the
//! defining local property of the model: conditionally on the boundary
//! heights, the center height must follow
//!
//! ```text
//!     gamma(h | B)  proportional to  prod_k Q(h - B_k)
//! ```
//!
//! with the product over the star's boundary vertices. The oracle is exact
//! (finite support, no truncation), so all discrepancies are purely
//! statistical and standardized cell scores stay bounded for a consistent
//! sampler while raw deviations shrink like `n^(-1/2)`.
//!
//! For two-periodic sampling the hidden chain is additionally checked
//! against its own defining law (root class, keep/flip, parity-conditional
//! increment) cell by cell. Note that the star check applied to an
//! *asymmetric* chain quantifies the documented approximation error of the
//! single keep probability; only symmetric chains reproduce the local
//! property exactly.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::sampler::{FreeSampler, IsingChainParams, MeasureSampler, SampleBuf, TwoPeriodicSampler};
use crate::transfer::{Parity, TransferOperator};
use crate::tree::TreeSpec;

/// Which measure to drive through the star check.
#[derive(Debug, Clone, Copy)]
pub enum VolumeMeasure<'a> {
    /// I.i.d. increments from the normalized operator row.
    Free,
    /// Hidden parity chain with the given parameters, increments from the
    /// parity-conditional kernels.
    TwoPeriodic(&'a IsingChainParams),
}

/// Outcome of the star consistency check.
#[derive(Debug, Clone)]
pub struct FiniteVolumeReport {
    pub n: usize,
    pub h_max: u32,
    /// Largest raw deviation of the empirical one-edge marginal from its
    /// analytic law on the window `[-h_max, h_max]`.
    pub one_edge_max_abs: f64,
    /// Largest standardized one-edge deviation.
    pub one_edge_max_z: f64,
    /// Analytic mass of the one-edge law outside the reporting window; a
    /// nonzero value warns that `h_max` clips the law.
    pub mass_leak: f64,
    /// Number of (boundary, center) cells that met the variance floor.
    pub star_cells: usize,
    pub star_max_z: f64,
    pub star_max_abs: f64,
    /// Chain-law cells and worst score (two-periodic only).
    pub chain_cells: Option<usize>,
    pub chain_max_z: Option<f64>,
}

const MIN_BOUNDARY_COUNT: u32 = 100;
const MIN_CELL_VARIANCE: f64 = 10.0;

/// Samples `n` stars of the requested measure and scores the empirical
/// conditional center law against the exact local oracle.
pub fn finite_volume_check(
    q: &TransferOperator,
    measure: VolumeMeasure,
    tree: &TreeSpec,
    h_max: u32,
    seed: u64,
    n: usize,
) -> Result<FiniteVolumeReport> {
    if n < 1000 {
        return Err(CoreError::invalid("star check needs at least 1000 samples"));
    }
    if h_max == 0 {
        return Err(CoreError::invalid("h_max must be at least 1"));
    }
    let star = TreeSpec::new(tree.kind, tree.d, 1)?;
    let deg = star.edge_count() as usize;

    let sampler = match measure {
        VolumeMeasure::Free => MeasureSampler::Free(FreeSampler::new(star, &q.normalize())?),
        VolumeMeasure::TwoPeriodic(params) => {
            MeasureSampler::TwoPeriodic(TwoPeriodicSampler::new(star, q, *params)?)
        }
    };

    // Analytic one-edge marginal on the root edge.
    let edge_law: Box<dyn Fn(i64) -> f64> = match measure {
        VolumeMeasure::Free => {
            let dist = q.normalize();
            Box::new(move |j| dist.pmf(j))
        }
        VolumeMeasure::TwoPeriodic(params) => {
            let keep = params.p_same();
            let even = q.conditional_kernel(Parity::Even);
            let odd = q.conditional_kernel(Parity::Odd);
            Box::new(move |j| keep * even.pmf(j) + (1.0 - keep) * odd.pmf(j))
        }
    };

    let mut edge_counts = BTreeMap::<i32, u32>::new();
    // Boundary configs keyed by the height differences to the anchor vertex.
    let mut star_counts = BTreeMap::<Vec<i32>, BTreeMap<i32, u32>>::new();
    let mut chain_counts = BTreeMap::<(u8, u8, i32), u32>::new();
    let mut buf = SampleBuf::new();
    for replica in 0..n as u64 {
        sampler.fill(seed, replica, &mut buf);
        let eta = &buf.increments;
        *edge_counts.entry(eta[0]).or_default() += 1;
        // Pin the first boundary vertex: sigma(x_k) = eta_k - eta_1 and
        // sigma(root) = -eta_1.
        let key: Vec<i32> = eta[1..deg].iter().map(|&e| e - eta[0]).collect();
        *star_counts.entry(key).or_default().entry(-eta[0]).or_default() += 1;
        if let Some(fuzzy) = &buf.fuzzy {
            debug_assert_eq!(
                eta[0].rem_euclid(2) as u8,
                fuzzy[1] ^ fuzzy[0],
                "parity consistency violated at replica {replica}"
            );
            *chain_counts.entry((fuzzy[0], fuzzy[1], eta[0])).or_default() += 1;
        }
    }

    // One-edge marginal scores.
    let nf = n as f64;
    let mut one_edge_max_abs = 0.0f64;
    let mut one_edge_max_z = 0.0f64;
    let mut window_mass = 0.0;
    let h = h_max as i64;
    for j in -h..=h {
        let p = edge_law(j);
        window_mass += p;
        let freq = f64::from(*edge_counts.get(&(j as i32)).unwrap_or(&0)) / nf;
        one_edge_max_abs = one_edge_max_abs.max((freq - p).abs());
        // Score only cells whose expected count variance clears the floor.
        if nf * p * (1.0 - p) >= MIN_CELL_VARIANCE {
            let var = p * (1.0 - p) / nf;
            one_edge_max_z = one_edge_max_z.max((freq - p).abs() / var.sqrt());
        }
    }
    let mass_leak = (1.0 - window_mass).max(0.0);

    // Star conditional scores against the exact oracle.
    let j_max = i64::from(q.j_max());
    let mut star_cells = 0usize;
    let mut star_max_z = 0.0f64;
    let mut star_max_abs = 0.0f64;
    for (boundary, centers) in &star_counts {
        let n_b: u32 = centers.values().sum();
        if n_b < MIN_BOUNDARY_COUNT {
            continue;
        }
        // Full boundary includes the anchor at height 0.
        let full: Vec<i64> = std::iter::once(0)
            .chain(boundary.iter().map(|&b| i64::from(b)))
            .collect();
        let lo = full.iter().max().unwrap() - j_max;
        let hi = full.iter().min().unwrap() + j_max;
        let weights: Vec<f64> = (lo..=hi)
            .map(|c| full.iter().map(|&b| q.weight(c - b)).product())
            .collect();
        let total: f64 = weights.iter().sum();
        for &center in centers.keys() {
            let c = i64::from(center);
            assert!(
                (lo..=hi).contains(&c),
                "center {c} outside the local support for boundary {boundary:?}"
            );
        }
        let nb = f64::from(n_b);
        for (offset, &w) in weights.iter().enumerate() {
            let gamma = w / total;
            if nb * gamma * (1.0 - gamma) < MIN_CELL_VARIANCE {
                continue;
            }
            let var = gamma * (1.0 - gamma) / nb;
            let center = (lo + offset as i64) as i32;
            let freq = f64::from(*centers.get(&center).unwrap_or(&0)) / nb;
            star_cells += 1;
            star_max_abs = star_max_abs.max((freq - gamma).abs());
            star_max_z = star_max_z.max((freq - gamma).abs() / var.sqrt());
        }
    }

    // Chain-law scores (two-periodic only).
    let (chain_cells, chain_max_z) = if let VolumeMeasure::TwoPeriodic(params) = measure {
        let even = q.conditional_kernel(Parity::Even);
        let odd = q.conditional_kernel(Parity::Odd);
        let mut cells = 0usize;
        let mut max_z = 0.0f64;
        for s_root in 0..2u8 {
            for s_child in 0..2u8 {
                let p_root = if s_root == 0 {
                    params.root_law()
                } else {
                    1.0 - params.root_law()
                };
                let p_step = if s_root == s_child {
                    params.p_same()
                } else {
                    1.0 - params.p_same()
                };
                let kernel = if s_root == s_child { &even } else { &odd };
                for j in -j_max..=j_max {
                    let p = p_root * p_step * kernel.pmf(j);
                    if nf * p * (1.0 - p) < MIN_CELL_VARIANCE {
                        continue;
                    }
                    let var = p * (1.0 - p) / nf;
                    let freq =
                        f64::from(*chain_counts.get(&(s_root, s_child, j as i32)).unwrap_or(&0))
                            / nf;
                    cells += 1;
                    max_z = max_z.max((freq - p).abs() / var.sqrt());
                }
            }
        }
        (Some(cells), Some(max_z))
    } else {
        (None, None)
    };

    Ok(FiniteVolumeReport {
        n,
        h_max,
        one_edge_max_abs,
        one_edge_max_z,
        mass_leak,
        star_cells,
        star_max_z,
        star_max_abs,
        chain_cells,
        chain_max_z,
    })
}
