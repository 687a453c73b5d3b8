//! Experiment configuration: JSON schema, exhaustive validation, and
//! conversion into core model/tree/measure objects.
//!
//! Validation never stops at the first problem; every violated field is
//! reported in one pass so a config can be fixed in a single round.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gradtree_core::sampler::{FreeSampler, IsingChainParams, MeasureSampler, TwoPeriodicSampler};
use gradtree_core::sampler::boundary::solve_boundary_law;
use gradtree_core::{CoreError, ModelKind, TransferOperator, TreeKind, TreeSpec};

use crate::error::{CliError, Result};

/// Top-level experiment description; one JSON document per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub tree: TreeConfig,
    pub measure: MeasureConfig,
    pub seed: u64,
    #[serde(default)]
    pub batch: BatchSizes,
    pub analyses: Vec<Analysis>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub params: AnalysisParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "sos", "gauss", or "custom".
    pub kind: String,
    /// Inverse temperature; required for built-in kinds, forbidden for
    /// "custom".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Truncation radius for built-in kinds; omitted = smallest radius
    /// meeting the truncation tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<u32>,
    /// Weight-table JSON for "custom" models, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// "cayley" or "dary".
    pub kind: String,
    pub d: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// "free" or "two_periodic".
    pub kind: String,
    /// Chain parameters for "two_periodic": either explicit values or the
    /// string "boundary_law:auto" to take them from the boundary-law solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainConfig {
    Auto(String),
    Explicit { root_law: f64, p_same: f64 },
}

/// Replica counts per analysis family. Every field has a desk-scale default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    /// Depth-`depth` replicas reduced to tail points (density comparison,
    /// tails, translation and Markov tests).
    pub tail: usize,
    /// Replicas per radius for the second-moment comparison.
    pub variance: usize,
    /// Configurations for the one-step martingale check.
    pub martingale: usize,
    /// Stars for the finite-volume consistency check.
    pub finite_volume: usize,
    /// Full samples exported as JSON lines.
    pub samples: usize,
    /// Replicas for the spherical-average series export.
    pub hov: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes {
            tail: 100_000,
            variance: 20_000,
            martingale: 200,
            finite_volume: 40_000,
            samples: 25,
            hov: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Sample,
    Hov,
    SecondMoment,
    Transforms,
    Density,
    Tails,
    TranslationTest,
    MarkovTest,
    FiniteVolumeCheck,
    /// Deterministic oracle checks (product formula, closed forms,
    /// martingale identity, boundary-law solver, parity consistency).
    Checks,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Sample => "sample",
            Analysis::Hov => "hov",
            Analysis::SecondMoment => "second-moment",
            Analysis::Transforms => "transforms",
            Analysis::Density => "density",
            Analysis::Tails => "tails",
            Analysis::TranslationTest => "translation-test",
            Analysis::MarkovTest => "markov-test",
            Analysis::FiniteVolumeCheck => "finite-volume-check",
            Analysis::Checks => "checks",
        }
    }
}

/// Tunables for individual analyses; defaults reproduce the acceptance
/// configuration for SOS beta = 1, d = 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    /// Radii for the second-moment comparison.
    pub variance_levels: Vec<u32>,
    /// Tail-bound exponent A.
    pub tail_a: f64,
    /// Integer thresholds for the empirical tail comparison.
    pub tail_s: Vec<u32>,
    /// Density grid window and point count.
    pub density_window: [f64; 2],
    pub density_points: usize,
    /// Compare the inverted density against a KDE of the tail batch.
    pub density_compare_mc: bool,
    /// Lattice spacings scanned for strict positivity.
    pub lattice_deltas: Vec<f64>,
    /// Pinning height and offsets for the translation test.
    pub translation_t: i64,
    pub translation_b: Vec<i64>,
    /// Heights and conditioning intervals for the Markov test.
    pub markov_t: i64,
    pub markov_t_prime: i64,
    pub markov_a1: [f64; 2],
    pub markov_a2: [f64; 2],
    pub bootstrap_resamples: u32,
    /// One-edge reporting window for the finite-volume and martingale
    /// checks.
    pub h_max: u32,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            variance_levels: vec![2, 4, 6],
            tail_a: 2.0,
            tail_s: vec![1, 2, 3, 4, 5],
            density_window: [-8.0, 8.0],
            density_points: 801,
            density_compare_mc: false,
            lattice_deltas: vec![1.0, 0.5],
            translation_t: 0,
            translation_b: vec![1, 2],
            markov_t: 0,
            markov_t_prime: 3,
            markov_a1: [0.0, 1.0],
            markov_a2: [1.0, 2.0],
            bootstrap_resamples: 1000,
            h_max: 16,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file without validating it.
    pub fn load(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Ok((config, bytes))
    }

    /// Collects every validation problem; an empty list means the config is
    /// runnable. `base` resolves relative file references.
    pub fn validate(&self, base: &Path) -> Vec<String> {
        let mut errors = Vec::new();
        let mut err = |msg: String| errors.push(msg);

        match self.model.kind.as_str() {
            "sos" | "gauss" => {
                match self.model.beta {
                    None => err(format!("model.beta is required for kind \"{}\"", self.model.kind)),
                    Some(b) if !b.is_finite() || b <= 0.0 => {
                        err(format!("model.beta must be positive and finite, got {b}"))
                    }
                    Some(_) => {}
                }
                if self.model.j_max == Some(0) {
                    err("model.j_max must be at least 1".into());
                }
                if self.model.weights_file.is_some() {
                    err("model.weights_file applies only to kind \"custom\"".into());
                }
            }
            "custom" => {
                if self.model.beta.is_some() {
                    err("model.beta applies only to built-in kinds".into());
                }
                if self.model.j_max.is_some() {
                    err("model.j_max applies only to built-in kinds".into());
                }
                match &self.model.weights_file {
                    None => err("model.weights_file is required for kind \"custom\"".into()),
                    Some(f) => {
                        if !base.join(f).is_file() {
                            err(format!("model.weights_file {} does not exist", f.display()));
                        }
                    }
                }
            }
            other => err(format!(
                "model.kind must be \"sos\", \"gauss\", or \"custom\", got {other:?}"
            )),
        }

        let cayley = match self.tree.kind.as_str() {
            "cayley" => true,
            "dary" => false,
            other => {
                err(format!("tree.kind must be \"cayley\" or \"dary\", got {other:?}"));
                true
            }
        };
        if self.tree.d < 2 {
            err(format!("tree.d must be >= 2, got {}", self.tree.d));
        }
        if self.tree.depth < 2 {
            err(format!("tree.depth must be >= 2, got {}", self.tree.depth));
        }

        match (self.measure.kind.as_str(), &self.measure.chain) {
            ("free", None) => {}
            ("free", Some(_)) => err("measure.chain applies only to \"two_periodic\"".into()),
            ("two_periodic", None) => {
                err("measure.chain is required for \"two_periodic\" \
                     (explicit params or \"boundary_law:auto\")"
                    .into())
            }
            ("two_periodic", Some(ChainConfig::Auto(tag))) => {
                if tag != "boundary_law:auto" {
                    err(format!(
                        "measure.chain string form must be \"boundary_law:auto\", got {tag:?}"
                    ));
                }
            }
            ("two_periodic", Some(ChainConfig::Explicit { root_law, p_same })) => {
                for (name, v) in [("root_law", *root_law), ("p_same", *p_same)] {
                    if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                        err(format!("measure.chain.{name} must lie strictly in (0, 1), got {v}"));
                    }
                }
            }
            (other, _) => err(format!(
                "measure.kind must be \"free\" or \"two_periodic\", got {other:?}"
            )),
        }

        for (name, n) in [
            ("tail", self.batch.tail),
            ("variance", self.batch.variance),
            ("martingale", self.batch.martingale),
            ("finite_volume", self.batch.finite_volume),
            ("samples", self.batch.samples),
            ("hov", self.batch.hov),
        ] {
            if n == 0 {
                err(format!("batch.{name} must be at least 1"));
            }
        }

        if self.analyses.is_empty() {
            err("analyses must request at least one analysis".into());
        }
        let unique: BTreeSet<Analysis> = self.analyses.iter().copied().collect();
        if unique.len() != self.analyses.len() {
            err("analyses contains duplicates".into());
        }
        // The sphere-combinatorics formulas (product transform, closed-form
        // second moment, tail batches) are specific to the Cayley tree.
        let needs_cayley = [
            Analysis::SecondMoment,
            Analysis::Transforms,
            Analysis::Density,
            Analysis::Tails,
            Analysis::TranslationTest,
            Analysis::MarkovTest,
        ];
        if !cayley {
            for a in self.analyses.iter().filter(|a| needs_cayley.contains(a)) {
                err(format!("{} requires tree.kind \"cayley\"", a.name()));
            }
        }
        // The periodic state has no closed-form variance, its transform is
        // only an upper bound (so no envelope equality), and the Markov
        // estimator factorizes through the i.i.d. one-edge kernel.
        let needs_free = [
            Analysis::SecondMoment,
            Analysis::Transforms,
            Analysis::MarkovTest,
        ];
        if !self.is_free() {
            for a in self.analyses.iter().filter(|a| needs_free.contains(a)) {
                err(format!("{} requires measure.kind \"free\"", a.name()));
            }
            if self.analyses.contains(&Analysis::Density) && self.params.density_compare_mc {
                err("density_compare_mc applies only to the free measure \
                     (the periodic density is itself the MC estimate)"
                    .into());
            }
        }

        if self.output_dir.as_os_str().is_empty() {
            err("output_dir must not be empty".into());
        }

        // Params are checked only for the analyses that will read them, so
        // unused defaults can never invalidate a config.
        let p = &self.params;
        let wants = |a: Analysis| self.analyses.contains(&a);
        if wants(Analysis::SecondMoment) {
            if p.variance_levels.is_empty() {
                err("params.variance_levels must not be empty".into());
            }
            for &r in &p.variance_levels {
                if r == 0 || r > self.tree.depth {
                    err(format!(
                        "params.variance_levels entries must lie in 1..={}, got {r}",
                        self.tree.depth
                    ));
                }
            }
        }
        if wants(Analysis::Tails) {
            if !p.tail_a.is_finite() || p.tail_a <= 0.0 {
                err(format!("params.tail_a must be positive and finite, got {}", p.tail_a));
            }
            if p.tail_s.is_empty() {
                err("params.tail_s must not be empty".into());
            }
        }
        if wants(Analysis::Density) {
            if !(p.density_window[0].is_finite()
                && p.density_window[1].is_finite()
                && p.density_window[0] < p.density_window[1])
            {
                err(format!(
                    "params.density_window must be a finite increasing pair, got {:?}",
                    p.density_window
                ));
            }
            if p.density_points < 2 {
                err(format!("params.density_points must be at least 2, got {}", p.density_points));
            }
            for &delta in &p.lattice_deltas {
                if !delta.is_finite() || delta <= 0.0 {
                    err(format!("params.lattice_deltas entries must be positive, got {delta}"));
                }
            }
        }
        if wants(Analysis::TranslationTest) && p.translation_b.is_empty() {
            err("params.translation_b must not be empty".into());
        }
        if wants(Analysis::MarkovTest) {
            for (name, [lo, hi]) in [("markov_a1", p.markov_a1), ("markov_a2", p.markov_a2)] {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    err(format!(
                        "params.{name} must be a finite increasing pair, got [{lo}, {hi}]"
                    ));
                }
            }
        }
        if (wants(Analysis::TranslationTest) || wants(Analysis::MarkovTest))
            && p.bootstrap_resamples < 2
        {
            err(format!(
                "params.bootstrap_resamples must be at least 2, got {}",
                p.bootstrap_resamples
            ));
        }
        if p.h_max == 0 {
            err("params.h_max must be at least 1".into());
        }

        errors
    }

    /// Builds the transfer operator described by `model`.
    pub fn build_model(&self, base: &Path) -> Result<TransferOperator> {
        let op = match self.model.kind.as_str() {
            "sos" | "gauss" => {
                let kind = if self.model.kind == "sos" { ModelKind::Sos } else { ModelKind::Gauss };
                let beta = self.model.beta.expect("validated");
                match self.model.j_max {
                    Some(j) => gradtree_core::transfer::make_model(kind, beta, j)?,
                    None => match kind {
                        ModelKind::Sos => TransferOperator::sos_auto(beta)?,
                        _ => TransferOperator::gauss_auto(beta)?,
                    },
                }
            }
            "custom" => {
                let file = self.model.weights_file.as_ref().expect("validated");
                TransferOperator::from_json_file(base.join(file))?
            }
            _ => unreachable!("validated"),
        };
        Ok(op)
    }

    pub fn tree_spec(&self) -> Result<TreeSpec> {
        let kind = if self.tree.kind == "cayley" { TreeKind::Cayley } else { TreeKind::DAry };
        Ok(TreeSpec::new(kind, self.tree.d, self.tree.depth)?)
    }

    /// Resolves the chain parameters, consulting the boundary-law solver for
    /// the "boundary_law:auto" form (largest fixed point when an asymmetric
    /// pair exists, symmetric otherwise).
    pub fn chain_params(&self, q: &TransferOperator) -> Result<Option<IsingChainParams>> {
        match &self.measure.chain {
            None => Ok(None),
            Some(ChainConfig::Explicit { root_law, p_same }) => {
                Ok(Some(IsingChainParams::new(*root_law, *p_same)?))
            }
            Some(ChainConfig::Auto(_)) => {
                let sols = solve_boundary_law(&q.fuzzy_project(), self.tree.d)?;
                let chosen = sols.last().ok_or_else(|| {
                    CoreError::invalid("boundary-law solver returned no solutions")
                })?;
                Ok(Some(chosen.params))
            }
        }
    }

    /// Builds a sampler of the configured measure on a ball of the given
    /// depth (the configured depth unless an analysis needs a shallower
    /// ball).
    pub fn build_sampler(
        &self,
        q: &TransferOperator,
        depth: u32,
    ) -> Result<MeasureSampler> {
        let spec = TreeSpec::new(self.tree_spec()?.kind, self.tree.d, depth)?;
        match self.measure.kind.as_str() {
            "free" => Ok(MeasureSampler::Free(FreeSampler::new(spec, &q.normalize())?)),
            "two_periodic" => {
                let params = self
                    .chain_params(q)?
                    .ok_or_else(|| CoreError::invalid("two_periodic requires chain params"))?;
                Ok(MeasureSampler::TwoPeriodic(TwoPeriodicSampler::new(spec, q, params)?))
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn is_free(&self) -> bool {
        self.measure.kind == "free"
    }
}
