//! Boundary laws for the hidden parity chain.
//!
//! The two-state projection of a transfer operator is summarized by the class
//! masses `a = q_even`, `b = q_odd`. Spatially homogeneous boundary laws are
//! ratios `x > 0` solving the consistency equation
//!
//! ```text
//!     x = g(x)^d,   g(x) = (a x + b) / (b x + a),
//! ```
//!
//! where `d` is the forward branching number. `x = 1` (the symmetric law) is
//! always a solution. Because `g(1/x) = 1/g(x)`, nontrivial solutions come in
//! reciprocal pairs `(x, 1/x)`; a pair exists exactly when the slope of
//! `g(x)^d` at the fixed point 1 exceeds one, i.e. when
//!
//! ```text
//!     a / b > (d + 1) / (d - 1).
//! ```
//!
//! Each solution is converted to sampling parameters for the chain. The
//! conversion is exact for the root marginal. For the edge kernel the true
//! chain keeps its class with probability `a x / (a x + b)` from the even
//! class and `a / (a + b x)` from the odd class; a single keep probability
//! cannot represent both, so `p_same` is taken from the symmetric edge joint
//! (the probability that a stationary edge keeps its class). The raw ratio
//! `x` is kept alongside the lossy two-parameter summary.

use crate::error::{CoreError, Result};
use crate::sampler::IsingChainParams;
use crate::transfer::FuzzyOperator;

/// One homogeneous boundary law: the raw ratio and its chain parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLawSolution {
    /// Fixed-point ratio of the two boundary-law components.
    pub x: f64,
    /// Chain parameters derived from `x` (exact root law, edge-averaged
    /// keep probability).
    pub params: IsingChainParams,
}

fn g(x: f64, a: f64, b: f64) -> f64 {
    (a * x + b) / (b * x + a)
}

/// `g(x)^d - x`: positive between 1 and the upper fixed point.
fn h(x: f64, a: f64, b: f64, d: i32) -> f64 {
    g(x, a, b).powi(d) - x
}

fn params_for(x: f64, a: f64, b: f64, d: u32) -> Result<IsingChainParams> {
    // Root marginal ratio: at a fixed point (ax+b)/(bx+a) = x^(1/d), and the
    // root sees d + 1 incoming laws, so the class-0 odds are x^((d+1)/d).
    let y = x.powf((f64::from(d) + 1.0) / f64::from(d));
    let root_law = y / (1.0 + y);
    // Keep probability of a stationary edge: joint mass on equal classes
    // over total mass, from the x-weighted edge joint.
    let same = a * (x * x + 1.0);
    let p_same = same / (same + 2.0 * b * x);
    IsingChainParams::new(root_law, p_same)
}

/// Finds every spatially homogeneous boundary law of the parity chain for
/// forward branching number `d` and returns them sorted by `x`.
///
/// The symmetric law `x = 1` is always returned. When the coupling ratio
/// exceeds `(d + 1)/(d - 1)` the reciprocal pair `(x_minus, x_plus)` is
/// found by bisecting the sign change of `g(x)^d - x` between `1` and the
/// a-priori upper bound `(a/b)^d`; `x_minus = 1/x_plus` exactly. Pairs
/// closer than about `1e-7` to the symmetric point (coupling ratio within
/// `~1e-6` of the threshold) are below the solver's resolution and are
/// reported as symmetric only.
pub fn solve_boundary_law(fz: &FuzzyOperator, d: u32) -> Result<Vec<BoundaryLawSolution>> {
    if d < 2 {
        return Err(CoreError::invalid("branching number d must be at least 2"));
    }
    if !(fz.q_even.is_finite() && fz.q_odd.is_finite()) || fz.q_even <= 0.0 || fz.q_odd <= 0.0 {
        return Err(CoreError::invalid("class masses must be positive and finite"));
    }
    let (a, b) = (fz.q_even, fz.q_odd);
    let di = d as i32;
    let symmetric = BoundaryLawSolution {
        x: 1.0,
        params: params_for(1.0, a, b, d)?,
    };

    // Slope of g(x)^d at x = 1 is d (a - b) / (a + b); subcritical or
    // critical slope leaves only the symmetric law.
    let slope = f64::from(d) * (a - b) / (a + b);
    if slope <= 1.0 + 1e-6 {
        return Ok(vec![symmetric]);
    }

    // (a/b)^d bounds every fixed point from above because g < a/b, and the
    // supercritical slope makes h positive just above 1, so the asymmetric
    // root is the unique sign change of h on this bracket.
    let hi0 = (a / b).powi(di);
    let mut lo = 1.0 + 1e-7;
    let mut hi = hi0;
    if h(hi, a, b, di) > 0.0 {
        return Err(CoreError::no_convergence(
            "no sign change up to the a-priori bound (a/b)^d",
        ));
    }
    if h(lo, a, b, di) <= 0.0 {
        // The pair hugs the symmetric point tighter than the bracket seed;
        // below the solver's resolution, so report the symmetric law only.
        return Ok(vec![symmetric]);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h(mid, a, b, di) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_plus = 0.5 * (lo + hi);
    let x_minus = 1.0 / x_plus;

    Ok(vec![
        BoundaryLawSolution {
            x: x_minus,
            params: params_for(x_minus, a, b, d)?,
        },
        symmetric,
        BoundaryLawSolution {
            x: x_plus,
            params: params_for(x_plus, a, b, d)?,
        },
    ])
}
