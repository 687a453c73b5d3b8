//! Integral transforms of the height-offset law.
//!
//! The height offset of the free measure is the limit of spherical averages,
//! and its moment-generating function factorizes over tree levels:
//! every edge between levels `l` and `l+1` contributes a factor
//! `psi(t / ((d+1) d^l))`, repeated once per edge.  [`ProductTransform`]
//! evaluates the finite products exactly and the infinite product with a
//! certified truncation rule.  On top of it sit the tree-cumulant map, an
//! exponential bound on the characteristic function, Fourier-inversion
//! density estimates, and exponential tail bounds.

pub mod bounds;
pub mod density;

pub use bounds::{cf_bound, tail_bound, CfBoundConstants, TailBound};
pub use density::{
    density, density_smoothed, gaussian_kde, lattice_positivity, lattice_positivity_in,
    DensityEstimate, KdeEstimate, LatticeReport,
};

use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::transfer::{EdgeDistribution, Parity, TransferOperator};

/// Default relative tolerance of the truncated infinite product.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Default maximum number of levels before the product is declared
/// non-convergent.
pub const DEFAULT_LEVEL_CAP: u32 = 200;

/// Per-level factor of the product: a single edge law, or the worst-parity
/// envelope of the two conditional laws of the hidden-class chain.
#[derive(Debug, Clone)]
pub enum TransformGenerator {
    /// Independent identically distributed increments.
    Free(EdgeDistribution),
    /// Parity-conditional increment laws; the product over their worst-case
    /// magnitudes dominates the transform of any hidden-class mixture, so
    /// every value derived from this generator is an upper bound.
    TwoPeriodic {
        even: EdgeDistribution,
        odd: EdgeDistribution,
    },
}

impl TransformGenerator {
    /// `Ln(psi(arg) / psi(0))`.
    ///
    /// The division pins the factor mass to exactly one: the raw table mass
    /// carries rounding of order `1e-16`, and multiplying its logarithm by a
    /// level multiplicity of `1e12` edges would otherwise swamp the genuine
    /// level terms.  Computed through `log1p` of the mass-centered transform
    /// so deep levels keep full relative precision.
    fn log_psi(&self, arg: Complex64) -> Result<Complex64> {
        match self {
            TransformGenerator::Free(dist) => {
                let z = dist.transform_m1(arg)? / dist.total_mass();
                ln_1p(z)
            }
            TransformGenerator::TwoPeriodic { even, odd } => {
                let e = norm_m1(even.transform_m1(arg)? / even.total_mass());
                let o = norm_m1(odd.transform_m1(arg)? / odd.total_mass());
                let worst = e.max(o);
                if worst <= -1.0 {
                    return Err(CoreError::domain(
                        "both parity-conditional transforms vanish; the product bound is undefined",
                    ));
                }
                Ok(Complex64::new(worst.ln_1p(), 0.0))
            }
        }
    }

    /// Lattice span of the increment support; the factor characteristic
    /// functions are `2 pi / span`-periodic.
    fn span(&self) -> u64 {
        match self {
            TransformGenerator::Free(dist) => dist.support_span(),
            TransformGenerator::TwoPeriodic { even, odd } => {
                let (mut a, mut b) = (even.support_span(), odd.support_span());
                while b != 0 {
                    (a, b) = (b, a % b);
                }
                a.max(1)
            }
        }
    }
}

/// `Ln(1 + z)` with a series fallback for small `z`, where forming `1 + z`
/// first would truncate `z` to the unit roundoff.
fn ln_1p(z: Complex64) -> Result<Complex64> {
    let w = Complex64::new(1.0, 0.0) + z;
    if w == Complex64::ZERO {
        return Err(CoreError::domain(
            "transform factor vanishes; its logarithm is undefined",
        ));
    }
    if z.norm() < 1e-4 {
        Ok(z * (Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 3.0 - z * z * z / 4.0))
    } else {
        Ok(w.ln())
    }
}

/// `|1 + z| - 1` without cancellation for small `z`.
fn norm_m1(z: Complex64) -> f64 {
    let q = 2.0 * z.re + z.re * z.re + z.im * z.im;
    q / ((1.0 + z.re).hypot(z.im) + 1.0)
}

/// Level-product transform of the height offset: finite products over tree
/// levels and their certified infinite limit.
#[derive(Debug, Clone)]
pub struct ProductTransform {
    generator: TransformGenerator,
    d: u32,
    tol: f64,
    level_cap: u32,
    span: f64,
}

impl ProductTransform {
    pub fn new(generator: TransformGenerator, d: u32, tol: f64) -> Result<Self> {
        if d < 2 {
            return Err(CoreError::invalid(format!("branching number d must be >= 2, got {d}")));
        }
        if !tol.is_finite() || tol <= 0.0 {
            return Err(CoreError::invalid(format!("tolerance must be positive and finite, got {tol}")));
        }
        let span = generator.span() as f64;
        Ok(ProductTransform { generator, d, tol, level_cap: DEFAULT_LEVEL_CAP, span })
    }

    /// Transform of the free measure built from i.i.d. edge increments.
    pub fn free(dist: EdgeDistribution, d: u32) -> Result<Self> {
        Self::new(TransformGenerator::Free(dist), d, DEFAULT_TOL)
    }

    pub fn free_with_tol(dist: EdgeDistribution, d: u32, tol: f64) -> Result<Self> {
        Self::new(TransformGenerator::Free(dist), d, tol)
    }

    /// Upper-bound transform for states with a hidden two-class layer: each
    /// level factor is the worst parity-conditional magnitude.
    pub fn two_periodic(q: &TransferOperator, d: u32) -> Result<Self> {
        let generator = TransformGenerator::TwoPeriodic {
            even: q.conditional_kernel(Parity::Even),
            odd: q.conditional_kernel(Parity::Odd),
        };
        Self::new(generator, d, DEFAULT_TOL)
    }

    pub fn with_level_cap(mut self, level_cap: u32) -> Result<Self> {
        if level_cap == 0 {
            return Err(CoreError::invalid("level cap must be at least 1"));
        }
        self.level_cap = level_cap;
        Ok(self)
    }

    pub fn generator(&self) -> &TransformGenerator {
        &self.generator
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn level_cap(&self) -> u32 {
        self.level_cap
    }

    /// `true` when values dominate rather than equal the underlying
    /// transform (the parity-envelope generator).
    pub fn is_upper_bound(&self) -> bool {
        matches!(self.generator, TransformGenerator::TwoPeriodic { .. })
    }

    /// Finite-volume transform `E[e^{t H_r}]`: the exact product over the
    /// first `r` levels.  For the parity-envelope generator the value is an
    /// upper bound on the transform magnitude instead.
    pub fn phi_r(&self, t: Complex64, r: u32) -> Result<Complex64> {
        let mut sum = Complex64::ZERO;
        let mut n_l = f64::from(self.d + 1);
        for _ in 0..r {
            sum += n_l * self.generator.log_psi(t / n_l)?;
            n_l *= f64::from(self.d);
        }
        Ok(sum.exp())
    }

    /// Infinite-product transform `E[e^{t H}]` of the limiting height
    /// offset, truncated once the remainder is certified below `tol`.
    ///
    /// A level is accepted as the last one when its term
    /// `n_l |Ln psi(t/n_l)|` falls below `tol (1 - 1/d)` — the remaining
    /// terms then sum below `tol/d` by the geometric decay of the quadratic
    /// regime — and two guards hold: the terms are locally decreasing, and
    /// `|t| * span <= n_l`.  The second guard keeps the rule out of the
    /// aliasing region: factor characteristic functions are
    /// `2 pi / span`-periodic, so a shallow level can report a spuriously
    /// tiny term at large `|t|` while deeper levels still contribute.
    pub fn phi_inf(&self, t: Complex64) -> Result<Complex64> {
        let gate = self.tol * (1.0 - 1.0 / f64::from(self.d));
        let guard = t.norm() * self.span;
        let mut sum = Complex64::ZERO;
        let mut n_l = f64::from(self.d + 1);
        let mut prev = f64::INFINITY;
        for _ in 0..self.level_cap {
            let term = n_l * self.generator.log_psi(t / n_l)?;
            sum += term;
            let size = term.norm();
            if size < gate && size <= prev && guard <= n_l {
                return Ok(sum.exp());
            }
            prev = size;
            n_l *= f64::from(self.d);
        }
        Err(CoreError::no_convergence(format!(
            "product transform at t = {t}: level term {prev:.3e} still above the \
             tolerance gate {gate:.3e} after {} levels",
            self.level_cap
        )))
    }

    /// `phi_inf` on the real axis.
    pub fn phi_inf_real(&self, s: f64) -> Result<f64> {
        Ok(self.phi_inf(Complex64::new(s, 0.0))?.re)
    }

    /// Characteristic function `E[e^{i s H}]` of the limiting height offset;
    /// real-valued because the law is symmetric.
    pub fn cf_inf(&self, s: f64) -> Result<f64> {
        let phi = self.phi_inf(Complex64::new(0.0, s))?;
        if phi.im.abs() > 1e-6 * phi.re.abs().max(1.0) {
            return Err(CoreError::domain(format!(
                "characteristic value at s = {s} has imaginary part {:.3e}; \
                 phase bookkeeping exceeded floating-point resolution",
                phi.im
            )));
        }
        Ok(phi.re)
    }
}

/// Cumulants of the limiting height offset: the edge cumulant scaled by the
/// level-sum factor `d^{n-1} / ((d^{n-1} - 1) (d+1)^{n-1})`.
///
/// Defined for even `n >= 2` only: odd cumulants vanish by symmetry and the
/// scale factor is singular at `n = 1`, so odd orders are rejected rather
/// than defined away.
pub fn tree_cumulant(dist: &EdgeDistribution, d: u32, n: u32) -> Result<f64> {
    if d < 2 {
        return Err(CoreError::invalid(format!("branching number d must be >= 2, got {d}")));
    }
    if n < 2 || n % 2 == 1 {
        return Err(CoreError::invalid(format!(
            "tree cumulant index must be even and >= 2, got {n}"
        )));
    }
    let kappa = dist
        .cumulants(n)?
        .kappa(n)
        .expect("cumulants(n) always covers order n");
    let dn = f64::from(d).powi(n as i32 - 1);
    let dp = (f64::from(d) + 1.0).powi(n as i32 - 1);
    Ok(kappa * dn / ((dn - 1.0) * dp))
}
