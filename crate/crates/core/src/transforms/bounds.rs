//! Exponential bounds derived from the product transform: characteristic-
//! function decay constants and Markov tail bounds for the height offset and
//! the pinned single-site marginal.

use serde::Serialize;

use super::{ProductTransform, TransformGenerator};
use crate::error::{CoreError, Result};
use crate::transfer::{DecayRadius, EdgeDistribution};

/// Number of grid points of the decay-verification scan.
const SCAN_POINTS: usize = 10_000;
/// Upper end of the scanned radius range.
const SCAN_LIMIT: f64 = 4.0;
/// Smallest certified radius accepted as usable.
const MIN_DELTA: f64 = 1e-6;

/// Constants of the certified characteristic-function envelope
/// `|cf(s)| <= exp(-c |s|)` for `|s| >= delta (d + 1)`.
///
/// `c_bar` is a verified quadratic decay rate of one factor near the origin,
/// `delta` the grid-certified radius on which it holds, and `c` the linear
/// rate they induce for the infinite product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CfBoundConstants {
    pub c_bar: f64,
    pub delta: f64,
    pub c: f64,
    pub d: u32,
}

impl CfBoundConstants {
    /// Number of shallow levels whose factor argument still exceeds the
    /// verified radius at frequency `t`:
    /// `ceil(log_d(|t| / (delta (d+1))))`, clamped at zero.
    pub fn l_delta(&self, t: f64) -> u32 {
        let ratio = t.abs() / (self.delta * (f64::from(self.d) + 1.0));
        if ratio <= 1.0 {
            0
        } else {
            (ratio.ln() / f64::from(self.d).ln()).ceil() as u32
        }
    }

    /// The certified envelope `exp(-c |s|)`.
    pub fn envelope(&self, s: f64) -> f64 {
        (-self.c * s.abs()).exp()
    }
}

/// Certifies quadratic decay of one factor characteristic function near the
/// origin and converts it into a linear decay rate of the product.
///
/// The rate is `c_bar = kappa_2 / 4`: half the leading Taylor coefficient of
/// `-log cf`, leaving a factor-two margin for fourth-order terms.  The radius
/// `delta` is then the longest grid prefix of `(0, 4]` (10^4 points) on which
/// `0 < cf(s) <= exp(-c_bar s^2)` holds.  Levels deeper than `L_delta(t)`
/// have factor arguments inside the certified radius, and summing their
/// quadratic decay gives `|cf(t)| <= exp(-c |t|)` with
/// `c = c_bar delta / (d (d - 1))` beyond `|t| = delta (d + 1)`.
pub fn cf_bound(dist: &EdgeDistribution, d: u32) -> Result<CfBoundConstants> {
    if d < 2 {
        return Err(CoreError::invalid(format!("branching number d must be >= 2, got {d}")));
    }
    let kappa_2 = dist.moment(2);
    if !kappa_2.is_finite() || kappa_2 <= 0.0 {
        return Err(CoreError::invalid(
            "increment law has no variance; nothing to certify",
        ));
    }
    let c_bar = kappa_2 / 4.0;
    let mass = dist.total_mass();

    let mut delta = 0.0;
    for i in 1..=SCAN_POINTS {
        let s = SCAN_LIMIT * i as f64 / SCAN_POINTS as f64;
        let cf = dist.cf(s) / mass;
        if cf <= 0.0 || cf > (-c_bar * s * s).exp() {
            break;
        }
        delta = s;
    }
    if delta < MIN_DELTA {
        return Err(CoreError::domain(format!(
            "quadratic decay of the characteristic function could not be \
             certified on any radius >= {MIN_DELTA}"
        )));
    }
    let c = c_bar * delta / (f64::from(d) * (f64::from(d) - 1.0));
    Ok(CfBoundConstants { c_bar, delta, c, d })
}

/// Markov-inequality tail bound `nu(|H| >= s) <= 2 B e^{-A s}` on the height
/// offset, with `B` the product transform evaluated at `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    /// Exponent `A`.
    pub exponent: f64,
    /// Prefactor `B = phi_inf(A)`.
    pub prefactor: f64,
}

impl TailBound {
    /// Two-sided tail bound `2 B e^{-A s}` on `P(|H| >= s)`.
    pub fn bound(&self, s: f64) -> f64 {
        2.0 * self.prefactor * (-self.exponent * s).exp()
    }

    /// Chained bound on the pinned single-site marginal:
    /// `P(|sigma_rho| >= s) <= P(|H| >= s - 1)` because the height offset
    /// rounds the pinned spin to within one unit.
    pub fn marginal_bound(&self, s: f64) -> f64 {
        self.bound(s - 1.0)
    }
}

/// Evaluates the tail bound at exponent `a`.
///
/// `a` must lie strictly inside `(0, (d+1) R)` where `R` is the decay radius
/// of the increment law; the enlargement by `d + 1` is available because the
/// shallowest product factor sees the argument `a / (d + 1)`.  For custom
/// tables with unknown radius the per-level evaluation probes divergence
/// instead.
pub fn tail_bound(pt: &ProductTransform, a: f64) -> Result<TailBound> {
    if !a.is_finite() || a <= 0.0 {
        return Err(CoreError::domain(format!(
            "tail exponent must be positive and finite, got {a}"
        )));
    }
    let radius = match pt.generator() {
        TransformGenerator::Free(dist) => dist.decay_radius(),
        // Conditional kernels inherit the parent operator's radius.
        TransformGenerator::TwoPeriodic { even, .. } => even.decay_radius(),
    };
    if let DecayRadius::Finite(r) = radius {
        let limit = (f64::from(pt.d()) + 1.0) * r;
        if a >= limit {
            return Err(CoreError::domain(format!(
                "tail exponent {a} outside the open interval (0, {limit})"
            )));
        }
    }
    let prefactor = pt.phi_inf_real(a)?;
    Ok(TailBound { exponent: a, prefactor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{FreeSampler, MeasureSampler};
    use crate::transfer::TransferOperator;
    use crate::tree::TreeSpec;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn sos_dist() -> EdgeDistribution {
        TransferOperator::sos(1.0, 60).unwrap().normalize()
    }

    #[test]
    fn constants_match_the_closed_form_crossing() {
        // SOS beta = 1 has the closed-form characteristic function
        // (e-1)^2 / (e^2 - 2 e cos s + 1); delta must sit at its crossing
        // with exp(-c_bar s^2), located here by an independent bisection.
        let dist = sos_dist();
        let b = cf_bound(&dist, 2).unwrap();

        let m2 = dist.moment(2);
        assert_relative_eq!(b.c_bar, m2 / 4.0, max_relative = 1e-15);
        assert_eq!(b.d, 2);
        assert_relative_eq!(b.c, b.c_bar * b.delta / 2.0, max_relative = 1e-15);

        let closed_cf = |s: f64| (E - 1.0) * (E - 1.0) / (E * E - 2.0 * E * s.cos() + 1.0);
        let gap = |s: f64| (-b.c_bar * s * s).exp() - closed_cf(s);
        assert!(gap(1.0) > 0.0 && gap(2.0) < 0.0);
        let (mut lo, mut hi) = (1.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The scan works on a grid of step 4e-4 and reports the last passing
        // prefix point.
        assert!(b.delta <= lo && lo - b.delta <= 2.0 * 4e-4, "delta = {}, crossing = {lo}", b.delta);
    }

    #[test]
    fn grid_prefix_really_satisfies_the_quadratic_bound() {
        let dist = sos_dist();
        let b = cf_bound(&dist, 2).unwrap();
        for i in 1..=1000 {
            let s = b.delta * i as f64 / 1000.0;
            let cf = dist.cf(s) / dist.total_mass();
            assert!(cf > 0.0);
            assert!(cf <= (-b.c_bar * s * s).exp() * (1.0 + 1e-12), "s = {s}");
        }
    }

    #[test]
    fn envelope_consequence_holds_beyond_the_radius() {
        let dist = sos_dist();
        let b = cf_bound(&dist, 2).unwrap();
        let pt = ProductTransform::free(dist, 2).unwrap();
        let start = b.delta * 3.0;
        for i in 0..=120 {
            let s = start + (50.0 - start) * i as f64 / 120.0;
            let cf = pt.cf_inf(s).unwrap();
            assert!(
                cf.abs() <= b.envelope(s) + 1e-12,
                "s = {s}: |cf| = {} above envelope {}",
                cf.abs(),
                b.envelope(s)
            );
        }
    }

    #[test]
    fn l_delta_counts_uncovered_levels() {
        let b = cf_bound(&sos_dist(), 2).unwrap();
        let base = b.delta * 3.0;
        assert_eq!(b.l_delta(0.0), 0);
        assert_eq!(b.l_delta(base * 0.999), 0);
        assert_eq!(b.l_delta(base * 7.99), 3);
        assert_eq!(b.l_delta(base * 8.01), 4);
        assert_eq!(b.l_delta(-base * 8.01), 4);
    }

    #[test]
    fn tail_exponent_limits() {
        let pt = ProductTransform::free(sos_dist(), 2).unwrap();

        let tb = tail_bound(&pt, 2.0).unwrap();
        assert!(tb.prefactor.is_finite() && tb.prefactor > 1.0);
        assert_eq!(tb.exponent, 2.0);
        assert!(tb.bound(10.0) < 1e-7 * tb.bound(0.0));
        assert_eq!(tb.marginal_bound(3.0), tb.bound(2.0));

        // Vanishing exponent: prefactor tends to 1 and the bound to 2.
        let weak = tail_bound(&pt, 1e-8).unwrap();
        assert!((weak.prefactor - 1.0).abs() < 1e-6);
        assert!((weak.bound(5.0) - 2.0).abs() < 1e-5);

        // SOS beta = 1, d = 2: the enlarged radius is 3.
        assert!(matches!(tail_bound(&pt, 3.0), Err(CoreError::Domain(_))));
        assert!(matches!(tail_bound(&pt, 0.0), Err(CoreError::Domain(_))));
        assert!(matches!(tail_bound(&pt, f64::NAN), Err(CoreError::Domain(_))));
    }

    #[test]
    fn empirical_tail_stays_below_the_bound() {
        let dist = sos_dist();
        let pt = ProductTransform::free(dist.clone(), 2).unwrap();
        let tb = tail_bound(&pt, 2.0).unwrap();

        let spec = TreeSpec::cayley(2, 8).unwrap();
        let sampler = MeasureSampler::Free(FreeSampler::new(spec, &dist).unwrap());
        let n = 20_000;
        let averages = crate::height_offset::batch::level_average_batch(&sampler, 0x7461_696c, n, &[8]).unwrap();
        for s in [2.0, 3.0, 4.0] {
            let hits = averages.iter().filter(|row| row[0].abs() >= s).count();
            let p_hat = hits as f64 / n as f64;
            let bound = tb.bound(s);
            let se = (bound.min(1.0) * (1.0 - bound.min(1.0)).max(0.0) / n as f64).sqrt();
            assert!(
                p_hat <= bound + 3.0 * se,
                "s = {s}: empirical {p_hat} above bound {bound}"
            );
        }
    }

    #[test]
    fn degenerate_laws_are_rejected() {
        assert!(matches!(cf_bound(&sos_dist(), 1), Err(CoreError::InvalidArgument(_))));
    }
}
