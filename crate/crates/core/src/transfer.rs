//! Transfer operators for integer-increment models on trees.
//!
//! A model is a symmetric positive weight table `Q(j) = exp(-beta*U(j))` on
//! `|j| <= j_max` (`U(j) = |j|` for the SOS interaction, `U(j) = j^2` for the
//! discrete Gaussian, or explicit weights for custom models). Everything
//! downstream is derived from it:
//!
//! - the normalized edge-increment distribution `p(j) = Q(j)/||Q||_1`,
//! - its moment generating / characteristic function and cumulants,
//! - the parity projection `(q_even, q_odd)` driving the hidden two-state
//!   layer, and the parity-conditional increment kernels.
//!
//! Tables store only `j >= 0`; the `j < 0` half is implied by symmetry, which
//! makes odd moments vanish exactly rather than to rounding error.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{CoreError, Result};

/// Relative second-moment mass that may be lost to truncation for the
/// built-in models before construction is refused.
pub const TRUNCATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `Q(j) = exp(-beta*|j|)`
    Sos,
    /// `Q(j) = exp(-beta*j^2)`
    Gauss,
    /// Explicit weight table.
    Custom,
}

/// Size of the strip `|Re t| < R` on which the increment transform converges,
/// viewing the weight table as the truncation of an infinite decaying family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayRadius {
    Finite(f64),
    Infinite,
    /// Custom tables: no analytic tail, divergence is probed per call.
    Unknown,
}

/// Parity class of an integer (the two-element quotient driving the hidden
/// Ising layer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(j: i64) -> Parity {
        if j.rem_euclid(2) == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn index(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }
}

/// Symmetric positive weight table `Q` on `{-j_max, ..., j_max}`.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    weights: Vec<f64>, // index j = 0..=j_max; Q(-j) = Q(j)
    kind: ModelKind,
    beta: Option<f64>,
    truncation_error: Option<f64>,
}

/// Builds a built-in model with an explicit truncation radius.
///
/// Fails if `kind` is `Custom` (use [`TransferOperator::from_weights`] or the
/// JSON loader), if `beta <= 0`, if `j_max < 1`, or if `j_max` leaves more
/// than [`TRUNCATION_TOL`] of the relative second-moment mass outside the
/// table.
pub fn make_model(kind: ModelKind, beta: f64, j_max: u32) -> Result<TransferOperator> {
    if kind == ModelKind::Custom {
        return Err(CoreError::invalid(
            "custom models take explicit weights; use from_weights or the JSON loader",
        ));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(CoreError::invalid(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    if j_max < 1 {
        return Err(CoreError::invalid("j_max must be at least 1"));
    }
    let err = truncation_error(kind, beta, j_max);
    if err > TRUNCATION_TOL {
        return Err(CoreError::invalid(format!(
            "j_max = {j_max} leaves relative second-moment truncation error {err:.3e} > {TRUNCATION_TOL:.0e}"
        )));
    }
    let weights = (0..=j_max).map(|j| builtin_weight(kind, beta, j)).collect();
    Ok(TransferOperator {
        weights,
        kind,
        beta: Some(beta),
        truncation_error: Some(err),
    })
}

/// Smallest `j_max` whose relative second-moment truncation error is below
/// [`TRUNCATION_TOL`].
pub fn auto_j_max(kind: ModelKind, beta: f64) -> Result<u32> {
    if kind == ModelKind::Custom {
        return Err(CoreError::invalid("auto_j_max applies to built-in models"));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(CoreError::invalid(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    for j_max in 1..=100_000 {
        if truncation_error(kind, beta, j_max) <= TRUNCATION_TOL {
            return Ok(j_max);
        }
    }
    Err(CoreError::no_convergence(
        "no j_max <= 1e5 reaches the truncation tolerance",
    ))
}

fn builtin_weight(kind: ModelKind, beta: f64, j: u32) -> f64 {
    let j = f64::from(j);
    match kind {
        ModelKind::Sos => (-beta * j).exp(),
        ModelKind::Gauss => (-beta * j * j).exp(),
        ModelKind::Custom => unreachable!(),
    }
}

/// Relative second-moment mass beyond `j_max`: `sum_{|j|>j_max} j^2 Q(j)`
/// over `sum_j j^2 Q(j)`, both summed until terms vanish at double precision.
fn truncation_error(kind: ModelKind, beta: f64, j_max: u32) -> f64 {
    let mut kept = 0.0f64;
    let mut j = 1u32;
    let mut total = 0.0f64;
    loop {
        let term = f64::from(j) * f64::from(j) * builtin_weight(kind, beta, j);
        total += term;
        if j <= j_max {
            kept += term;
        }
        if j > j_max && (term <= total * 1e-22 || term == 0.0) {
            break;
        }
        j += 1;
        if j > 10_000_000 {
            break;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    (total - kept) / total
}

#[derive(Deserialize)]
struct CustomModelFile {
    weights: BTreeMap<String, f64>,
}

impl TransferOperator {
    /// SOS model `Q(j) = exp(-beta*|j|)`.
    pub fn sos(beta: f64, j_max: u32) -> Result<Self> {
        make_model(ModelKind::Sos, beta, j_max)
    }

    /// SOS model with automatically selected truncation radius.
    pub fn sos_auto(beta: f64) -> Result<Self> {
        make_model(ModelKind::Sos, beta, auto_j_max(ModelKind::Sos, beta)?)
    }

    /// Discrete Gaussian model `Q(j) = exp(-beta*j^2)`.
    pub fn gauss(beta: f64, j_max: u32) -> Result<Self> {
        make_model(ModelKind::Gauss, beta, j_max)
    }

    /// Discrete Gaussian model with automatically selected truncation radius.
    pub fn gauss_auto(beta: f64) -> Result<Self> {
        make_model(ModelKind::Gauss, beta, auto_j_max(ModelKind::Gauss, beta)?)
    }

    /// Custom model from the half table `weights[j] = Q(j)`, `j = 0..=j_max`.
    /// Every weight must be positive and finite and the table must reach at
    /// least `j_max = 1`.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(CoreError::invalid(
                "custom models need weights for at least j = 0 and j = 1",
            ));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "weight at j = {j} must be positive and finite, got {w}"
                )));
            }
        }
        Ok(TransferOperator {
            weights,
            kind: ModelKind::Custom,
            beta: None,
            truncation_error: None,
        })
    }

    /// Loads a custom model from the JSON schema
    /// `{"weights": {"0": w0, "1": w1, ...}}` listing `j >= 0` only.
    /// Keys must form the contiguous range `0..=j_max`; non-positive weights
    /// are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CustomModelFile =
            serde_json::from_str(text).map_err(|e| CoreError::ModelFile(e.to_string()))?;
        let mut table: BTreeMap<u32, f64> = BTreeMap::new();
        for (key, value) in &file.weights {
            let j: u32 = key.parse().map_err(|_| {
                CoreError::ModelFile(format!("weight key {key:?} is not a non-negative integer"))
            })?;
            if table.insert(j, *value).is_some() {
                return Err(CoreError::ModelFile(format!("duplicate weight key {key:?}")));
            }
        }
        let j_max = match table.keys().next_back() {
            Some(&m) => m,
            None => return Err(CoreError::ModelFile("empty weight table".into())),
        };
        let mut weights = Vec::with_capacity(j_max as usize + 1);
        for j in 0..=j_max {
            match table.get(&j) {
                Some(&w) => weights.push(w),
                None => {
                    return Err(CoreError::ModelFile(format!(
                        "weight table has a gap at j = {j}; keys must cover 0..={j_max}"
                    )))
                }
            }
        }
        Self::from_weights(weights).map_err(|e| CoreError::ModelFile(e.to_string()))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// Relative second-moment truncation error; `None` for custom tables.
    pub fn truncation_error(&self) -> Option<f64> {
        self.truncation_error
    }

    pub fn j_max(&self) -> u32 {
        (self.weights.len() - 1) as u32
    }

    /// `Q(j)`; zero outside the table.
    pub fn weight(&self, j: i64) -> f64 {
        match usize::try_from(j.unsigned_abs()) {
            Ok(a) if a < self.weights.len() => self.weights[a],
            _ => 0.0,
        }
    }

    /// `||Q||_1 = Q(0) + 2 sum_{j>=1} Q(j)`.
    pub fn l1_norm(&self) -> f64 {
        self.weights[0] + 2.0 * self.weights[1..].iter().sum::<f64>()
    }

    pub fn decay_radius(&self) -> DecayRadius {
        match self.kind {
            ModelKind::Sos => DecayRadius::Finite(self.beta.unwrap()),
            ModelKind::Gauss => DecayRadius::Infinite,
            ModelKind::Custom => DecayRadius::Unknown,
        }
    }

    /// Normalized edge-increment distribution `p(j) = Q(j)/||Q||_1`.
    pub fn normalize(&self) -> EdgeDistribution {
        let norm = self.l1_norm();
        EdgeDistribution {
            half: self.weights.iter().map(|w| w / norm).collect(),
            radius: self.decay_radius(),
        }
    }

    /// Splits `||Q||_1` into even and odd parity mass.
    pub fn fuzzy_project(&self) -> FuzzyOperator {
        let mut q = [0.0f64; 2];
        q[0] = self.weights[0];
        for (j, &w) in self.weights.iter().enumerate().skip(1) {
            q[j % 2] += 2.0 * w;
        }
        FuzzyOperator {
            q_even: q[0],
            q_odd: q[1],
        }
    }

    /// Increment law conditioned on a parity class:
    /// `p(j | parity) = 1{j = parity mod 2} * Q(j) / q_parity`.
    ///
    /// Symmetric by construction, so its mean vanishes exactly.
    pub fn conditional_kernel(&self, parity: Parity) -> EdgeDistribution {
        let fz = self.fuzzy_project();
        let mass = fz.class_mass(parity);
        let keep = match parity {
            Parity::Even => 0usize,
            Parity::Odd => 1usize,
        };
        let half = self
            .weights
            .iter()
            .enumerate()
            .map(|(j, &w)| if j % 2 == keep { w / mass } else { 0.0 })
            .collect();
        EdgeDistribution {
            half,
            radius: self.decay_radius(),
        }
    }
}

/// Worst-case parity-conditional transform magnitude
/// `max_parity |E[e^{t*eta} | parity]|`.
///
/// For purely imaginary `t` this dominates the conditional characteristic
/// function modulus of either hidden class, which is what the two-periodic
/// product bound consumes.
pub fn psi_star_per(q: &TransferOperator, t: Complex64) -> Result<f64> {
    let even = q.conditional_kernel(Parity::Even).transform(t)?;
    let odd = q.conditional_kernel(Parity::Odd).transform(t)?;
    Ok(even.norm().max(odd.norm()))
}

/// Closed-form increment transform of the SOS model,
/// `psi(s) = (e^beta - 1)^2 / (e^{2 beta} - 2 e^beta cosh(s) + 1)`,
/// valid on `|s| < beta`.
pub fn sos_mgf_closed(beta: f64, s: f64) -> Result<f64> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(CoreError::invalid(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    if s.abs() >= beta {
        return Err(CoreError::domain(format!(
            "SOS transform diverges for |s| >= beta (s = {s}, beta = {beta})"
        )));
    }
    let eb = beta.exp();
    Ok((eb - 1.0).powi(2) / ((2.0 * beta).exp() - 2.0 * eb * s.cosh() + 1.0))
}

/// Probability distribution of a single edge increment. Stores the `j >= 0`
/// half; `p(-j) = p(j)`.
#[derive(Debug, Clone)]
pub struct EdgeDistribution {
    half: Vec<f64>,
    radius: DecayRadius,
}

impl EdgeDistribution {
    /// Largest `j` carried by the table.
    pub fn support_radius(&self) -> u32 {
        (self.half.len() - 1) as u32
    }

    pub fn decay_radius(&self) -> DecayRadius {
        self.radius
    }

    pub fn pmf(&self, j: i64) -> f64 {
        match usize::try_from(j.unsigned_abs()) {
            Ok(a) if a < self.half.len() => self.half[a],
            _ => 0.0,
        }
    }

    /// `p(0) + 2 sum_{j>=1} p(j)`; equals 1 up to rounding of the
    /// normalization.
    pub fn total_mass(&self) -> f64 {
        self.half[0] + 2.0 * self.half[1..].iter().sum::<f64>()
    }

    /// `E[eta^k]`. Odd moments are exactly zero: the `+j`/`-j` contributions
    /// cancel by construction, so no floating-point noise enters.
    pub fn moment(&self, k: u32) -> f64 {
        if k == 0 {
            return self.total_mass();
        }
        if k % 2 == 1 {
            return 0.0;
        }
        self.half
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &p)| 2.0 * (j as f64).powi(k as i32) * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.moment(2)
    }

    fn check_domain(&self, re: f64) -> Result<()> {
        match self.radius {
            DecayRadius::Infinite => Ok(()),
            DecayRadius::Finite(r) => {
                if re.abs() >= r {
                    Err(CoreError::domain(format!(
                        "transform diverges: |Re t| = {} >= decay radius {r}",
                        re.abs()
                    )))
                } else {
                    Ok(())
                }
            }
            DecayRadius::Unknown => {
                // Truncated table of an unknown decaying family: if the last
                // terms e^{|re| j} p(j) grow with j, the truncated sum is
                // dominated by the cut and approximates nothing.
                let r = self.half.len() - 1;
                if r >= 3 {
                    let term = |j: usize| self.half[j] * (re.abs() * j as f64).exp();
                    let (a, b, c) = (term(r - 2), term(r - 1), term(r));
                    if c > b && b > a && c > 0.0 {
                        return Err(CoreError::domain(format!(
                            "transform tail grows at the truncation boundary for Re t = {re}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// `E[e^{t*eta}]` for complex `t`, summed over symmetric pairs so that
    /// purely imaginary arguments give exactly real values.
    pub fn transform(&self, t: Complex64) -> Result<Complex64> {
        self.check_domain(t.re)?;
        let mut acc = Complex64::new(self.half[0], 0.0);
        for (j, &p) in self.half.iter().enumerate().skip(1) {
            acc += 2.0 * p * (t * j as f64).cosh();
        }
        Ok(acc)
    }

    /// `E[e^{s*eta}]` for real `s`.
    pub fn transform_real(&self, s: f64) -> Result<f64> {
        Ok(self.transform(Complex64::new(s, 0.0))?.re)
    }

    /// `E[e^{t*eta}] - total_mass`, summed as `sum_j 4 p(j) sinh^2(t j / 2)`
    /// so that tiny arguments keep full relative precision instead of
    /// cancelling against the unit mass.  Exactly zero at `t = 0`.
    ///
    /// Products over many edges amplify any fixed-point error in the mass by
    /// the edge multiplicity; consumers divide by `total_mass` and work with
    /// `log1p` of this value instead.
    pub fn transform_m1(&self, t: Complex64) -> Result<Complex64> {
        self.check_domain(t.re)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &p) in self.half.iter().enumerate().skip(1) {
            let s = (t * (j as f64 / 2.0)).sinh();
            acc += 4.0 * p * s * s;
        }
        Ok(acc)
    }

    /// Greatest common divisor of the support `{j >= 1 : p(j) > 0}`;
    /// `1` for a point mass at zero.  The characteristic function is
    /// `2*pi/span`-periodic, which bounds how far product truncation rules
    /// may trust a small level term.
    pub fn support_span(&self) -> u64 {
        let mut g: u64 = 0;
        for (j, &p) in self.half.iter().enumerate().skip(1) {
            if p > 0.0 {
                let mut a = g;
                let mut b = j as u64;
                while b != 0 {
                    (a, b) = (b, a % b);
                }
                g = a;
            }
        }
        g.max(1)
    }

    /// Characteristic function `E[e^{i s eta}] = p(0) + 2 sum p(j) cos(sj)`;
    /// real valued and defined for every `s`.
    pub fn cf(&self, s: f64) -> f64 {
        let mut acc = self.half[0];
        for (j, &p) in self.half.iter().enumerate().skip(1) {
            acc += 2.0 * p * (s * j as f64).cos();
        }
        acc
    }

    /// Cumulants `kappa_1..kappa_n_max` via the moment recursion
    /// `kappa_n = m_n - sum_{k<n} C(n-1,k-1) kappa_k m_{n-k}`.
    /// Odd cumulants inherit exact zeros from the odd moments.
    pub fn cumulants(&self, n_max: u32) -> Result<CumulantTable> {
        if n_max < 2 {
            return Err(CoreError::invalid("cumulants need n_max >= 2"));
        }
        if n_max > 30 {
            return Err(CoreError::invalid("cumulants above order 30 are not supported"));
        }
        let n = n_max as usize;
        let moments: Vec<f64> = (0..=n as u32).map(|k| self.moment(k)).collect();
        let mut kappa = vec![0.0f64; n + 1];
        for order in 1..=n {
            let mut acc = moments[order];
            for k in 1..order {
                acc -= binomial(order - 1, k - 1) * kappa[k] * moments[order - k];
            }
            kappa[order] = acc;
        }
        Ok(CumulantTable {
            values: kappa[1..].to_vec(),
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Cumulants `kappa_1..kappa_n` of a single edge increment.
#[derive(Debug, Clone)]
pub struct CumulantTable {
    values: Vec<f64>,
}

impl CumulantTable {
    pub fn n_max(&self) -> u32 {
        self.values.len() as u32
    }

    /// `kappa_n`, 1-indexed.
    pub fn kappa(&self, n: u32) -> Option<f64> {
        if n == 0 {
            return None;
        }
        self.values.get(n as usize - 1).copied()
    }
}

/// Parity mass split of a transfer operator:
/// `q_even = sum_l Q(2l)`, `q_odd = sum_l Q(2l+1)` over the whole table.
#[derive(Debug, Clone, Copy)]
pub struct FuzzyOperator {
    pub q_even: f64,
    pub q_odd: f64,
}

impl FuzzyOperator {
    pub fn class_mass(&self, parity: Parity) -> f64 {
        match parity {
            Parity::Even => self.q_even,
            Parity::Odd => self.q_odd,
        }
    }

    pub fn total(&self) -> f64 {
        self.q_even + self.q_odd
    }

    /// `q_even / q_odd = exp(2J)` for the induced two-state coupling `J`.
    pub fn coupling_ratio(&self) -> f64 {
        self.q_even / self.q_odd
    }

    pub fn coupling(&self) -> f64 {
        0.5 * self.coupling_ratio().ln()
    }
}
