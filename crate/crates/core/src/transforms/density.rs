//! Density of the limiting height offset by Fourier inversion of the
//! product transform, plus the Monte Carlo kernel-density estimate used to
//! cross-check it and a positivity scan over shifted lattices.

use rayon::prelude::*;
use serde::Serialize;

use super::{CfBoundConstants, ProductTransform};
use crate::error::{CoreError, Result};

/// Target for the neglected characteristic-function tail `e^{-cT}/c`.
const CUTOFF_TARGET: f64 = 1e-8;
/// Hard cap on quadrature nodes; reached only for degenerate bound
/// constants.
const MAX_NODES: usize = 20_000_000;

/// Default window of the lattice positivity scan.
pub const DEFAULT_LATTICE_WINDOW: (f64, f64) = (-3.0, 3.0);
/// Default positivity floor of the lattice scan.
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-10;

/// Fourier-inversion density estimate on a fixed evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Quadrature cutoff `T`.
    pub cutoff: f64,
    /// Quadrature step.
    pub step: f64,
    /// Trapezoid mass over the evaluation grid.
    pub mass: f64,
}

impl DensityEstimate {
    /// Largest `|f(s) - f(-s)|` over grid points that have a mirror image on
    /// the grid (pairs matched within 1e-9).
    pub fn evenness_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        let mut j = self.grid.len();
        for (i, &s) in self.grid.iter().enumerate() {
            if s >= 0.0 {
                break;
            }
            let target = -s;
            while j > 0 && self.grid[j - 1] > target + 1e-9 {
                j -= 1;
            }
            if j > 0 && (self.grid[j - 1] - target).abs() <= 1e-9 {
                defect = defect.max((self.values[i] - self.values[j - 1]).abs());
            }
        }
        defect
    }

    /// Trapezoid integral of `s^2 f(s)` over the grid.
    pub fn second_moment(&self) -> f64 {
        trapezoid(&self.grid, |i| {
            self.grid[i] * self.grid[i] * self.values[i]
        })
    }
}

fn trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += (grid[i] - grid[i - 1]) * (f(i) + f(i - 1)) / 2.0;
    }
    acc
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(CoreError::invalid("evaluation grid is empty"));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::invalid("evaluation grid contains non-finite points"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::invalid("evaluation grid must be strictly increasing"));
    }
    Ok(())
}

/// Inverts the characteristic function of the limiting height offset on
/// `grid`: `f(s) = (1/pi) \int_0^T cos(s t) cf(t) dt` by composite trapezoid.
///
/// The cutoff satisfies `e^{-cT}/c < 1e-8` using the certified envelope, so
/// the neglected tail is below the quadrature tolerance.  The step keeps the
/// period `2 pi / step` of the implied discrete summation at least 40 beyond
/// the widest grid point; the aliased density images it folds in are smaller
/// than the tail bound at distance 40 and therefore negligible.
pub fn density(
    pt: &ProductTransform,
    bound: &CfBoundConstants,
    grid: &[f64],
) -> Result<DensityEstimate> {
    invert(pt, bound, grid, None)
}

/// Like [`density`], with the integrand mollified by
/// `exp(-bandwidth^2 t^2 / 2)`.  The result is the exact expectation of a
/// Gaussian kernel-density estimate with that bandwidth, which is the
/// comparable object for finite-sample KDE cross-checks.
pub fn density_smoothed(
    pt: &ProductTransform,
    bound: &CfBoundConstants,
    grid: &[f64],
    bandwidth: f64,
) -> Result<DensityEstimate> {
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(CoreError::invalid(format!(
            "mollifier bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    invert(pt, bound, grid, Some(bandwidth))
}

fn invert(
    pt: &ProductTransform,
    bound: &CfBoundConstants,
    grid: &[f64],
    mollify: Option<f64>,
) -> Result<DensityEstimate> {
    if pt.is_upper_bound() {
        return Err(CoreError::domain(
            "the parity-envelope transform only bounds the characteristic \
             function; no density can be inverted from it",
        ));
    }
    check_grid(grid)?;
    if !(bound.c > 0.0) || !bound.c.is_finite() {
        return Err(CoreError::invalid("bound constants carry no positive decay rate"));
    }

    let cutoff = (1.0 / (CUTOFF_TARGET * bound.c)).ln() / bound.c;
    let s_max = grid.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let step = 0.05f64.min(2.0 * std::f64::consts::PI / (s_max + 40.0));
    let nodes = (cutoff / step).ceil() as usize + 1;
    if nodes > MAX_NODES {
        return Err(CoreError::no_convergence(format!(
            "quadrature needs {nodes} nodes for cutoff {cutoff:.3e}; \
             the certified decay rate {:.3e} is too weak",
            bound.c
        )));
    }

    let cf: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * step;
            let mut v = pt.cf_inf(t)?;
            if let Some(b) = mollify {
                v *= (-b * b * t * t / 2.0).exp();
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = grid
        .par_iter()
        .map(|&s| {
            let mut acc = cf[0] / 2.0;
            for (k, &phi) in cf.iter().enumerate().skip(1) {
                let w = if k + 1 == nodes { 0.5 } else { 1.0 };
                acc += w * phi * (s * k as f64 * step).cos();
            }
            acc * step / std::f64::consts::PI
        })
        .collect();

    let mass = trapezoid(grid, |i| values[i]);
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        values,
        cutoff,
        step,
        mass,
    })
}

/// Result of the shifted-lattice positivity scan.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeReport {
    /// Lattice spacing that was scanned.
    pub delta: f64,
    /// Shift of the best lattice found.
    pub shift: f64,
    /// Smallest density value over the best lattice.
    pub min_value: f64,
    /// Grid points nearest to the best shifted lattice and their values.
    pub points: Vec<(f64, f64)>,
    /// Whether the best lattice clears the positivity floor.
    pub found: bool,
}

/// Scans shifts `a in [0, delta)` for a lattice `a + delta Z` whose nearest
/// grid values all exceed [`DEFAULT_POSITIVITY_FLOOR`] inside
/// [`DEFAULT_LATTICE_WINDOW`].
///
/// Absence of a verified lattice is reported, not raised: the scan can only
/// certify positivity, never refute it.
pub fn lattice_positivity(de: &DensityEstimate, delta_lattice: f64) -> Result<LatticeReport> {
    lattice_positivity_in(de, delta_lattice, DEFAULT_LATTICE_WINDOW, DEFAULT_POSITIVITY_FLOOR)
}

/// [`lattice_positivity`] with an explicit window and positivity floor.
pub fn lattice_positivity_in(
    de: &DensityEstimate,
    delta_lattice: f64,
    window: (f64, f64),
    floor: f64,
) -> Result<LatticeReport> {
    if !delta_lattice.is_finite() || delta_lattice <= 0.0 {
        return Err(CoreError::invalid(format!(
            "lattice spacing must be positive and finite, got {delta_lattice}"
        )));
    }
    if !(window.0 < window.1) {
        return Err(CoreError::invalid("lattice window must be a nonempty interval"));
    }
    if !floor.is_finite() || floor < 0.0 {
        return Err(CoreError::invalid("positivity floor must be nonnegative"));
    }

    let nearest = |x: f64| -> (f64, f64) {
        let i = de.grid.partition_point(|&g| g < x);
        let lo = i.saturating_sub(1);
        let hi = i.min(de.grid.len() - 1);
        let pick = if (de.grid[hi] - x).abs() < (x - de.grid[lo]).abs() {
            hi
        } else {
            lo
        };
        (de.grid[pick], de.values[pick])
    };

    let mut shifts: Vec<f64> = de
        .grid
        .iter()
        .copied()
        .filter(|&g| (0.0..delta_lattice).contains(&g))
        .collect();
    if shifts.is_empty() {
        shifts.push(0.0);
    }

    let lo = window.0.max(de.grid[0]);
    let hi = window.1.min(*de.grid.last().unwrap());
    let mut best: Option<LatticeReport> = None;
    for a in shifts {
        let k_min = ((lo - a) / delta_lattice).ceil() as i64;
        let k_max = ((hi - a) / delta_lattice).floor() as i64;
        if k_max < k_min {
            continue;
        }
        let points: Vec<(f64, f64)> = (k_min..=k_max)
            .map(|k| nearest(a + k as f64 * delta_lattice))
            .collect();
        let min_value = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| min_value > b.min_value) {
            best = Some(LatticeReport {
                delta: delta_lattice,
                shift: a,
                min_value,
                points,
                found: min_value > floor,
            });
        }
    }
    best.ok_or_else(|| {
        CoreError::invalid("no lattice point of any shift falls inside the window")
    })
}

/// Gaussian kernel-density estimate evaluated on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct KdeEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Pointwise standard error `sqrt(f R(K) / (n h))`, `R(K) = 1/(2 sqrt pi)`.
    pub se: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
}

/// Gaussian KDE with samples pre-binned at a tenth of the bandwidth, so
/// evaluation cost is independent of the sample count.  The binning widens
/// the kernel by under one part in a thousand of the bandwidth, far below
/// the estimate's own bias.
///
/// `bandwidth = None` applies Silverman's rule `1.06 sigma n^{-1/5}`.
pub fn gaussian_kde(
    samples: &[f64],
    grid: &[f64],
    bandwidth: Option<f64>,
) -> Result<KdeEstimate> {
    check_grid(grid)?;
    if samples.is_empty() {
        return Err(CoreError::invalid("kernel density estimate of an empty sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::invalid("samples contain non-finite values"));
    }
    let n = samples.len();
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => {
            return Err(CoreError::invalid(format!(
                "bandwidth must be positive and finite, got {h}"
            )))
        }
        None => {
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (n as f64 - 1.0).max(1.0);
            let sigma = var.sqrt();
            if sigma <= 0.0 {
                return Err(CoreError::invalid(
                    "degenerate sample (zero variance); pass an explicit bandwidth",
                ));
            }
            1.06 * sigma * (n as f64).powf(-0.2)
        }
    };

    let bin = h / 10.0;
    let x0 = samples.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let counts: Vec<(i64, u64)> = {
        let mut map = std::collections::BTreeMap::new();
        for &x in samples {
            *map.entry(((x - x0) / bin).floor() as i64).or_insert(0u64) += 1;
        }
        map.into_iter().collect()
    };

    let cut = 6.0 * h;
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&s| {
            let lo = counts.partition_point(|&(i, _)| x0 + (i as f64 + 0.5) * bin < s - cut);
            let mut acc = 0.0;
            for &(i, m) in &counts[lo..] {
                let center = x0 + (i as f64 + 0.5) * bin;
                if center > s + cut {
                    break;
                }
                let u = (s - center) / h;
                acc += m as f64 * (-u * u / 2.0).exp();
            }
            acc * norm
        })
        .collect();

    let r_k = 0.5 / std::f64::consts::PI.sqrt();
    let se = values
        .iter()
        .map(|&f| (f.max(0.0) * r_k / (n as f64 * h)).sqrt())
        .collect();
    Ok(KdeEstimate {
        grid: grid.to_vec(),
        values,
        se,
        bandwidth: h,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{cf_bound, tree_cumulant};
    use crate::transfer::{EdgeDistribution, TransferOperator};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn sos_dist() -> EdgeDistribution {
        TransferOperator::sos(1.0, 60).unwrap().normalize()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn sos_density(reach: f64, n: usize) -> DensityEstimate {
        let dist = sos_dist();
        let pt = ProductTransform::free(dist.clone(), 2).unwrap();
        let bound = cf_bound(&dist, 2).unwrap();
        density(&pt, &bound, &linspace(-reach, reach, n)).unwrap()
    }

    #[test]
    fn density_is_normalized_even_and_nonnegative() {
        let de = sos_density(8.0, 801);
        assert!((de.mass - 1.0).abs() < 1e-3, "mass = {}", de.mass);
        assert!(de.values.iter().all(|v| v.is_finite() && *v >= -1e-8));
        assert!(de.evenness_defect() <= 1e-12);
        assert!(de.cutoff > 0.0 && de.step > 0.0);

        // The peak sits at the origin for a symmetric unimodal law.
        let mid = de.values[400];
        assert!(de.values.iter().all(|&v| v <= mid + 1e-12));
    }

    #[test]
    fn density_second_moment_matches_tree_cumulant() {
        let de = sos_density(8.0, 801);
        let k2 = tree_cumulant(&sos_dist(), 2, 2).unwrap();
        assert_relative_eq!(de.second_moment(), k2, max_relative = 1e-3);
    }

    #[test]
    fn smoothed_density_adds_exactly_the_mollifier_variance() {
        let dist = sos_dist();
        let pt = ProductTransform::free(dist.clone(), 2).unwrap();
        let bound = cf_bound(&dist, 2).unwrap();
        let grid = linspace(-8.0, 8.0, 801);
        let b = 0.25;
        let de = density_smoothed(&pt, &bound, &grid, b).unwrap();
        let k2 = tree_cumulant(&dist, 2, 2).unwrap();
        assert!((de.mass - 1.0).abs() < 1e-3);
        assert_relative_eq!(de.second_moment(), k2 + b * b, max_relative = 1e-3);

        let raw = sos_density(8.0, 801);
        assert!(de.values[400] < raw.values[400]);
    }

    #[test]
    fn two_periodic_transform_cannot_be_inverted() {
        let q = TransferOperator::sos(1.0, 60).unwrap();
        let pt = ProductTransform::two_periodic(&q, 2).unwrap();
        let bound = cf_bound(&q.normalize(), 2).unwrap();
        assert!(matches!(
            density(&pt, &bound, &[0.0, 1.0]),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn lattice_scan_certifies_nested_lattices() {
        let de = sos_density(3.2, 641);
        for delta in [1.0, 0.5, 0.25] {
            let report = lattice_positivity(&de, delta).unwrap();
            assert!(report.found, "delta = {delta}: {report:?}");
            assert!(report.min_value > DEFAULT_POSITIVITY_FLOOR);
            assert!(!report.points.is_empty());
            assert!((0.0..delta).contains(&report.shift));
            for (s, _) in &report.points {
                assert!(
                    *s >= DEFAULT_LATTICE_WINDOW.0 - 1e-9 && *s <= DEFAULT_LATTICE_WINDOW.1 + 1e-9,
                    "snapped point {s} outside the window"
                );
            }
        }
    }

    #[test]
    fn lattice_scan_respects_floor_and_window() {
        let de = sos_density(3.2, 641);
        let strict = lattice_positivity_in(&de, 1.0, (-3.0, 3.0), 10.0).unwrap();
        assert!(!strict.found);

        let narrow = lattice_positivity_in(&de, 1.0, (-0.4, 0.4), 1e-10).unwrap();
        assert_eq!(narrow.points.len(), 1);

        assert!(lattice_positivity_in(&de, 1.0, (3.0, 3.0), 1e-10).is_err());
        assert!(lattice_positivity(&de, 0.0).is_err());
        assert!(lattice_positivity(&de, f64::NAN).is_err());
    }

    #[test]
    fn kde_matches_the_two_point_closed_form() {
        // Two samples at +-1 with h = 0.5: after binning at h/10 both sit
        // half a bin above their input, and the estimate is an explicit
        // two-Gaussian mixture there.
        let h = 0.5;
        let bin = h / 10.0;
        let kde = gaussian_kde(&[-1.0, 1.0], &linspace(-3.0, 3.0, 241), Some(h)).unwrap();
        let centers = [-1.0 + bin / 2.0, 1.0 + bin / 2.0];
        let norm = 1.0 / (2.0 * h * (2.0 * std::f64::consts::PI).sqrt());
        for (i, &s) in kde.grid.iter().enumerate() {
            let expect: f64 = centers
                .iter()
                .map(|&c| {
                    let u = (s - c) / h;
                    if u.abs() <= 6.0 {
                        norm * (-u * u / 2.0).exp()
                    } else {
                        0.0
                    }
                })
                .sum();
            // The kernel cutoff contributes at most norm * e^-18 at the
            // boundary, where rounding can flip inclusion.
            assert_abs_diff_eq!(kde.values[i], expect, epsilon = 1e-7);
        }
    }

    #[test]
    fn kde_mass_and_variance_track_the_sample() {
        // Deterministic spread-out sample; Gaussian KDE adds exactly h^2 to
        // the variance, up to binning (h^2/1200) and grid truncation.
        let n = 2000;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                2.0 * u - 1.0 + 0.1 * (13.0 * u).sin()
            })
            .collect();
        let grid = linspace(-2.5, 2.5, 1001);
        let kde = gaussian_kde(&samples, &grid, Some(0.12)).unwrap();

        let mass = super::trapezoid(&grid, |i| kde.values[i]);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);

        let mean = samples.iter().sum::<f64>() / n as f64;
        let m2 = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let kde_m2 = super::trapezoid(&grid, |i| {
            (kde.grid[i] - mean) * (kde.grid[i] - mean) * kde.values[i]
        });
        assert_abs_diff_eq!(kde_m2, m2 + 0.12 * 0.12, epsilon = 1e-4);

        let r_k = 0.5 / std::f64::consts::PI.sqrt();
        for i in [0, 250, 500, 750, 1000] {
            let expect = (kde.values[i].max(0.0) * r_k / (n as f64 * 0.12)).sqrt();
            assert_eq!(kde.se[i], expect);
        }
    }

    #[test]
    fn silverman_rule_is_the_default_bandwidth() {
        let samples: Vec<f64> = (0..500).map(|i| (i as f64 * 0.7).sin()).collect();
        let kde = gaussian_kde(&samples, &linspace(-2.0, 2.0, 11), None).unwrap();
        let mean = samples.iter().sum::<f64>() / 500.0;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 499.0;
        let expect = 1.06 * var.sqrt() * 500f64.powf(-0.2);
        assert_eq!(kde.bandwidth, expect);
    }

    #[test]
    fn input_validation() {
        let dist = sos_dist();
        let pt = ProductTransform::free(dist.clone(), 2).unwrap();
        let bound = cf_bound(&dist, 2).unwrap();

        assert!(matches!(density(&pt, &bound, &[]), Err(CoreError::InvalidArgument(_))));
        assert!(matches!(
            density(&pt, &bound, &[0.0, 0.0]),
            Err(CoreError::InvalidArgument(_))
        ));
        assert!(matches!(
            density(&pt, &bound, &[0.0, f64::NAN]),
            Err(CoreError::InvalidArgument(_))
        ));
        assert!(matches!(
            density_smoothed(&pt, &bound, &[0.0, 1.0], 0.0),
            Err(CoreError::InvalidArgument(_))
        ));
        assert!(matches!(
            gaussian_kde(&[], &[0.0, 1.0], None),
            Err(CoreError::InvalidArgument(_))
        ));
        assert!(matches!(
            gaussian_kde(&[1.0, 1.0], &[0.0, 1.0], None),
            Err(CoreError::InvalidArgument(_))
        ));
        assert!(matches!(
            gaussian_kde(&[1.0, 2.0], &[0.0, 1.0], Some(-1.0)),
            Err(CoreError::InvalidArgument(_))
        ));
    }
}
