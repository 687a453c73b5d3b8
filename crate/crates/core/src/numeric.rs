//! Small numeric helpers shared by tests and diagnostics.
//!
//! The derivative routines target *even* functions at the origin (log
//! transforms of symmetric laws): evenness halves the number of evaluations
//! and kills every odd error term, so one Richardson step already gives
//! O(h^4) accuracy.

/// Second derivative at 0 of an even function with `f(0)` subtracted
/// internally: Richardson-extrapolated central difference
/// `D(h) = 2 (f(h) - f(0)) / h^2`, combined as `(4 D(h/2) - D(h)) / 3`.
pub fn even_deriv2_origin(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let f0 = f(0.0);
    let d = |h: f64| 2.0 * (f(h) - f0) / (h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Fourth derivative at 0 of an even function:
/// `D(h) = (2 f(2h) - 8 f(h) + 6 f(0)) / h^4` has leading error
/// `f^(6) h^2 / 6`, so the matching Richardson step is `(4 D(h/2) - D(h)) / 3`.
pub fn even_deriv4_origin(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let f0 = f(0.0);
    let d = |h: f64| (2.0 * f(2.0 * h) - 8.0 * f(h) + 6.0 * f0) / h.powi(4);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}
