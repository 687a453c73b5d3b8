//! Deterministic oracle checks: independent re-computations that the main
//! code paths must reproduce.
//!
//! Each oracle here deliberately avoids the library route it validates: the
//! depth-2 transform is summed term by term over every increment
//! assignment, the boundary fixed point is re-found by a blind grid scan,
//! and the one-edge law of the periodic state is tabulated straight from
//! its definition.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use gradtree_core::height_offset::{one_step_martingale_check, MartingaleLaw};
use gradtree_core::numeric::{even_deriv2_origin, even_deriv4_origin};
use gradtree_core::sampler::{solve_boundary_law, GradientSample, IsingChainParams};
use gradtree_core::transfer::{auto_j_max, sos_mgf_closed};
use gradtree_core::transforms::{tree_cumulant, ProductTransform};
use gradtree_core::{
    EdgeDistribution, ModelKind, Parity, TransferOperator, TreeIndex, TreeKind, TreeSpec,
};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Largest enumeration the product-formula oracle will attempt.
const MAX_ENUM_TERMS: f64 = 1.5e8;

/// `E exp(t H_2)` on the depth-2 Cayley ball by exhaustive enumeration of
/// every increment assignment over the law's full support.
///
/// A level-1 increment reaches all `d` of its subtree's sphere vertices and
/// a level-2 increment exactly one, so a term's height sum is
/// `d * sum(level 1) + sum(level 2)` over `|W_2| = (d + 1) d`.  The
/// odometer walks all `(2R+1)^edges` assignments keeping prefix products,
/// touching only the digits that changed.
pub fn enumerate_phi2(dist: &EdgeDistribution, d: u32, t: Complex64) -> Complex64 {
    let r = dist.support_radius() as i64;
    let m = (2 * r + 1) as usize;
    let e1 = (d + 1) as usize;
    let edges = e1 + e1 * d as usize;
    let w2 = f64::from((d + 1) * d);
    let table = |mult: f64| -> Vec<Complex64> {
        (-r..=r)
            .map(|j| (t * (mult * j as f64 / w2)).exp() * dist.pmf(j))
            .collect()
    };
    let level1 = table(f64::from(d));
    let level2 = table(1.0);
    let tables: Vec<&[Complex64]> = (0..edges)
        .map(|e| if e < e1 { level1.as_slice() } else { level2.as_slice() })
        .collect();

    let mut digits = vec![0usize; edges];
    let mut prefix = vec![Complex64::new(1.0, 0.0); edges + 1];
    for e in 0..edges {
        prefix[e + 1] = prefix[e] * tables[e][0];
    }
    // Kahan-compensated accumulator: plain summation of ~4e7 terms loses
    // ~1e-10 absolute, which would eat the comparison tolerance.
    let mut acc = Complex64::new(0.0, 0.0);
    let mut comp = Complex64::new(0.0, 0.0);
    loop {
        let y = prefix[edges] - comp;
        let s = acc + y;
        comp = (s - acc) - y;
        acc = s;
        let mut p = edges;
        loop {
            if p == 0 {
                return acc;
            }
            p -= 1;
            digits[p] += 1;
            if digits[p] < m {
                break;
            }
            digits[p] = 0;
        }
        for e in p..edges {
            prefix[e + 1] = prefix[e] * tables[e][digits[e]];
        }
    }
}

/// Number of terms [`enumerate_phi2`] would visit.
pub fn enum_terms(dist: &EdgeDistribution, d: u32) -> f64 {
    let m = 2.0 * dist.support_radius() as f64 + 1.0;
    let edges = (d + 1) * (d + 1);
    m.powi(edges as i32)
}

/// Restriction of a law to `|j| <= j_cap`, renormalized; the small-support
/// input the enumeration oracle needs.
pub fn truncate_law(dist: &EdgeDistribution, j_cap: i64) -> Result<EdgeDistribution> {
    let weights: Vec<f64> = (0..=j_cap).map(|j| dist.pmf(j)).collect();
    Ok(TransferOperator::from_weights(weights)?.normalize())
}

/// Blind re-solve of the boundary fixed point `g(x)^d = x`,
/// `g(x) = (a x + b)/(b x + a)`: scan a fine grid above 1 for a sign
/// change, then bisect it down to 1e-13.  Returns the asymmetric root, or
/// `None` when the scan sees none.
pub fn boundary_bisection_oracle(a: f64, b: f64, d: u32) -> Option<f64> {
    let di = d as i32;
    let g = |x: f64| (a * x + b) / (b * x + a);
    let h = |x: f64| g(x).powi(di) - x;
    let top = (a / b).powi(di) + 1.0;
    let grid = 20_000;
    let mut prev_x = 1.0 + 1e-9;
    let mut prev_h = h(prev_x);
    for k in 1..=grid {
        let x = 1.0 + (top - 1.0) * k as f64 / grid as f64;
        let hx = h(x);
        if prev_h > 0.0 && hx <= 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if h(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_h = hx;
    }
    None
}

/// Exact one-edge law of the periodic state straight from its definition:
/// root class from the root law, child class from the keep probability,
/// increment from the kernel whose parity matches the class pair.  Cells
/// whose parity contradicts the class pair never receive mass.
pub fn two_periodic_edge_joint(
    q: &TransferOperator,
    params: &IsingChainParams,
    j_cap: i64,
) -> BTreeMap<(u8, u8, i64), f64> {
    let even = q.conditional_kernel(Parity::Even);
    let odd = q.conditional_kernel(Parity::Odd);
    let mut out = BTreeMap::new();
    for c0 in 0u8..2 {
        let p0 = if c0 == 0 {
            params.root_law()
        } else {
            1.0 - params.root_law()
        };
        for c1 in 0u8..2 {
            let step = if c0 == c1 {
                params.p_same()
            } else {
                1.0 - params.p_same()
            };
            let kernel = if c0 == c1 { &even } else { &odd };
            for j in -j_cap..=j_cap {
                let p = p0 * step * kernel.pmf(j);
                if p > 0.0 {
                    out.insert((c0, c1, j), p);
                }
            }
        }
    }
    out
}

/// Counts edges whose increment parity contradicts the class change across
/// the edge; `None` for samples without a class layer.  The layered
/// construction makes any nonzero count a sampler bug.
pub fn parity_defects(index: &TreeIndex, sample: &GradientSample) -> Option<(u64, u64)> {
    let classes = sample.fuzzy()?;
    let mut bad = 0u64;
    for v in 1..index.ball_size() {
        let parent = index.parent(v).expect("non-root vertex");
        let j = sample.increments()[(v - 1) as usize];
        let same = classes[v as usize] == classes[parent as usize];
        if same != (j.rem_euclid(2) == 0) {
            bad += 1;
        }
    }
    Some((bad, u64::from(index.edge_count())))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductFormulaCheck {
    pub j_cap: i64,
    pub terms: f64,
    pub points: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleSummary {
    pub depth: u32,
    pub r: u32,
    pub h_max: u32,
    pub configs: usize,
    pub max_abs_deviation: f64,
    pub mass_leak: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CumulantCheck {
    pub kappa2_tree: f64,
    pub kappa4_tree: f64,
    pub d2_rel_error: f64,
    pub d4_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormCheck {
    pub beta: f64,
    pub s_max: f64,
    pub points: usize,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryLawCheck {
    pub coupling_ratio: f64,
    pub threshold: f64,
    pub xs: Vec<f64>,
    pub symmetric_present: bool,
    /// `|solver - oracle|` on the largest root when both find an
    /// asymmetric solution.
    pub oracle_abs_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParityCheck {
    pub samples: usize,
    pub edges_scanned: u64,
    pub defects: u64,
}

/// Everything the `checks` analysis writes; `None` fields were not
/// applicable to the configured model, tree, or measure.
#[derive(Debug, Clone, Serialize)]
pub struct ChecksReport {
    pub product_formula: Option<ProductFormulaCheck>,
    pub martingale: MartingaleSummary,
    pub cumulants: Option<CumulantCheck>,
    pub sos_closed_form: Option<ClosedFormCheck>,
    pub boundary_law: BoundaryLawCheck,
    pub parity: Option<ParityCheck>,
}

/// The acceptance grid for the depth-2 oracle: real points inside the strip
/// of convergence plus purely imaginary ones.
pub fn phi2_grid() -> Vec<Complex64> {
    let mut grid: Vec<Complex64> = [0.0, 0.3, -0.3, 0.6, -0.6]
        .iter()
        .map(|&s| Complex64::new(s, 0.0))
        .collect();
    grid.extend([0.5, 1.0, 2.0].iter().map(|&s| Complex64::new(0.0, s)));
    grid
}

/// Runs every applicable oracle for the configured experiment.
pub fn run_checks(cfg: &ExperimentConfig, q: &TransferOperator) -> Result<ChecksReport> {
    let dist = q.normalize();
    let d = cfg.tree.d;
    let spec = cfg.tree_spec()?;
    let cayley = spec.kind == TreeKind::Cayley;
    let chain = cfg.chain_params(q)?;

    let product_formula = if cayley {
        let j_cap = i64::from(dist.support_radius()).min(3);
        let small = truncate_law(&dist, j_cap)?;
        let terms = enum_terms(&small, d);
        if terms <= MAX_ENUM_TERMS {
            let pt = ProductTransform::free(small.clone(), d)?;
            let mut max_err = 0.0f64;
            let grid = phi2_grid();
            for &t in &grid {
                let lib = pt.phi_r(t, 2)?;
                let oracle = enumerate_phi2(&small, d, t);
                max_err = max_err.max((lib - oracle).norm());
            }
            Some(ProductFormulaCheck {
                j_cap,
                terms,
                points: grid.len(),
                max_abs_error: max_err,
            })
        } else {
            None
        }
    } else {
        None
    };

    let mart_spec = TreeSpec::new(spec.kind, d, 3)?;
    let law = match &chain {
        None => MartingaleLaw::Free(&dist),
        Some(params) => MartingaleLaw::TwoPeriodic { q, params },
    };
    let mc = one_step_martingale_check(
        law,
        &mart_spec,
        2,
        cfg.params.h_max,
        cfg.seed,
        cfg.batch.martingale,
    )?;
    let martingale = MartingaleSummary {
        depth: 3,
        r: 2,
        h_max: cfg.params.h_max,
        configs: mc.configs,
        max_abs_deviation: mc.max_abs_deviation,
        mass_leak: mc.mass_leak,
    };

    let cumulants = if cayley && cfg.is_free() {
        let pt = ProductTransform::free(dist.clone(), d)?;
        let log_phi = |s: f64| pt.phi_inf_real(s).unwrap().ln();
        let k2 = tree_cumulant(&dist, d, 2)?;
        let k4 = tree_cumulant(&dist, d, 4)?;
        // Same steps as the library's own calibration: the product value
        // carries ~1e-12 stop-rule noise that the fourth difference divides
        // by h^4, so that step stays large.
        let d2 = even_deriv2_origin(&log_phi, 0.01);
        let d4 = even_deriv4_origin(&log_phi, 0.1);
        Some(CumulantCheck {
            kappa2_tree: k2,
            kappa4_tree: k4,
            d2_rel_error: ((d2 - k2) / k2).abs(),
            d4_rel_error: ((d4 - k4) / k4).abs(),
        })
    } else {
        None
    };

    let sos_closed_form = if q.kind() == ModelKind::Sos {
        let beta = q.beta().expect("built-in model");
        // The series side must out-resolve the 1e-10 comparison: at
        // s = 0.9 beta the terms decay like e^{-0.1 beta j}.
        let j_series = ((250.0 / beta).ceil() as u32).max(auto_j_max(ModelKind::Sos, beta)?);
        let series = gradtree_core::make_model(ModelKind::Sos, beta, j_series)?.normalize();
        let s_max = 0.9 * beta;
        let points = 19;
        let mut max_err = 0.0f64;
        for k in 0..points {
            let s = s_max * (2.0 * k as f64 / (points - 1) as f64 - 1.0);
            let err = (sos_mgf_closed(beta, s)? - series.transform_real(s)?).abs();
            max_err = max_err.max(err);
        }
        Some(ClosedFormCheck {
            beta,
            s_max,
            points,
            max_abs_error: max_err,
        })
    } else {
        None
    };

    let fz = q.fuzzy_project();
    let sols = solve_boundary_law(&fz, d)?;
    let xs: Vec<f64> = sols.iter().map(|s| s.x).collect();
    let symmetric_present = xs.iter().any(|&x| (x - 1.0).abs() < 1e-12);
    let oracle_abs_error = if xs.len() > 1 {
        boundary_bisection_oracle(fz.q_even, fz.q_odd, d)
            .map(|x| (xs.last().unwrap() - x).abs())
    } else {
        None
    };
    let df = f64::from(d);
    let boundary_law = BoundaryLawCheck {
        coupling_ratio: fz.coupling_ratio(),
        threshold: (df + 1.0) / (df - 1.0),
        xs,
        symmetric_present,
        oracle_abs_error,
    };

    let parity = if chain.is_some() {
        let sampler = cfg.build_sampler(q, cfg.tree.depth)?;
        let index = sampler.index();
        let samples = cfg.batch.samples;
        let mut defects = 0;
        let mut edges = 0;
        for replica in 0..samples {
            let sample = sampler.sample(cfg.seed, replica as u64);
            let (bad, total) = parity_defects(index, &sample).expect("layered sample");
            defects += bad;
            edges += total;
        }
        Some(ParityCheck {
            samples,
            edges_scanned: edges,
            defects,
        })
    } else {
        None
    };

    Ok(ChecksReport {
        product_formula,
        martingale,
        cumulants,
        sos_closed_form,
        boundary_law,
        parity,
    })
}
