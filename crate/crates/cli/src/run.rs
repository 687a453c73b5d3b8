//! Analysis driver: executes the configured analyses in order, writes
//! their CSV/JSON outputs, and seals the run with an atomically renamed
//! manifest.
//!
//! Everything numerical is a pure function of (config, seed), so re-running
//! a config reproduces every output byte for byte; wall-clock times live
//! only in the manifest.  A failing analysis removes every file this run
//! has written so far, leaving no partial result to mistake for a run.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gradtree_core::height_offset::batch::{
    collect_tail_batch, level_average_batch, BatchGeometry, FoldLevel, TailPoint,
};
use gradtree_core::height_offset::stats::{
    markov_negative_control, markov_test, translation_negative_control, translation_test,
    BootstrapConfig, Interval, MarkovReport, TranslationReport,
};
use gradtree_core::height_offset::{
    exact_second_moment, hov_series, pinned_marginal, second_moment_limit,
};
use gradtree_core::sampler::{export_jsonl, finite_volume_check, VolumeMeasure};
use gradtree_core::transforms::{
    cf_bound, density, density_smoothed, gaussian_kde, lattice_positivity, tail_bound,
    tree_cumulant, LatticeReport, ProductTransform,
};
use gradtree_core::{CoreError, TransferOperator};

use crate::checks::run_checks;
use crate::config::{Analysis, ExperimentConfig};
use crate::error::{CliError, Result};

/// Bumped whenever an output file's schema changes shape.
pub const SCHEMA_VERSION: u32 = 1;

const MANIFEST_NAME: &str = "manifest.json";

/// Seed-derivation tags: every derived stream is the run seed xored with a
/// fixed tag so no two consumers share a stream.
const SEED_BOOTSTRAP: u64 = 0x626f_6f74;
const SEED_TRANSLATION_CTRL: u64 = 0x7472_616e;
const SEED_MARKOV_CTRL: u64 = 0x6d61_726b;

/// Record of one completed run; the `report` command renders it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Hash of the effective config (after CLI overrides), so runs with the
    /// same settings share an identity regardless of file formatting.
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    pub analyses: Vec<AnalysisRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub core: String,
    pub cli: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub analysis: String,
    /// File names relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub wall_ms: u64,
}

/// Top-level config fields the CLI may override.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Loads, validates, and executes a config file; returns the manifest and
/// the path it was written to.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<(RunManifest, PathBuf)> {
    let (mut cfg, _) = ExperimentConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = dir.clone();
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_config(&cfg, base)
}

/// Executes an already loaded config; `base` resolves relative file
/// references such as custom weight tables.
pub fn run_config(cfg: &ExperimentConfig, base: &Path) -> Result<(RunManifest, PathBuf)> {
    let errors = cfg.validate(base);
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    let q = cfg.build_model(base)?;

    fs::create_dir_all(&cfg.output_dir)?;
    // A stale manifest from a previous run must not survive a failed one.
    let manifest_path = cfg.output_dir.join(MANIFEST_NAME);
    let _ = fs::remove_file(&manifest_path);

    let mut tracker = OutputTracker {
        dir: cfg.output_dir.clone(),
        written: Vec::new(),
    };
    let mut cache = TailCache(None);
    let mut records = Vec::new();
    for &analysis in &cfg.analyses {
        let start = Instant::now();
        let result = dispatch(analysis, cfg, &q, &mut cache, &mut tracker);
        match result {
            Ok(outputs) => records.push(AnalysisRecord {
                analysis: analysis.name().to_string(),
                outputs,
                wall_ms: start.elapsed().as_millis() as u64,
            }),
            Err(e) => {
                tracker.cleanup();
                return Err(e);
            }
        }
    }

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        versions: Versions {
            core: gradtree_core::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        },
        analyses: records,
    };
    if let Err(e) = write_manifest(&manifest, &manifest_path) {
        tracker.cleanup();
        return Err(e);
    }
    Ok((manifest, manifest_path))
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct OutputTracker {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputTracker {
    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
        bytes.push(b'\n');
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn cleanup(&self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
    }
}

/// Lazily collected tail batch, shared by every analysis that reduces the
/// same depth-`depth` replicas (density comparison, tails, translation and
/// Markov tests).  Sharing changes nothing numerically: the batch is a
/// pure function of (config, seed).
struct TailCache(Option<(BatchGeometry, Vec<TailPoint>)>);

impl TailCache {
    fn get(
        &mut self,
        cfg: &ExperimentConfig,
        q: &TransferOperator,
    ) -> Result<(BatchGeometry, &[TailPoint])> {
        if self.0.is_none() {
            let sampler = cfg.build_sampler(q, cfg.tree.depth)?;
            self.0 = Some(collect_tail_batch(
                &sampler,
                cfg.seed,
                cfg.batch.tail,
                cfg.tree.depth,
            )?);
        }
        let (geo, points) = self.0.as_ref().expect("just filled");
        Ok((*geo, points))
    }
}

fn dispatch(
    analysis: Analysis,
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    match analysis {
        Analysis::Sample => run_sample(cfg, q, out),
        Analysis::Hov => run_hov(cfg, q, out),
        Analysis::SecondMoment => run_second_moment(cfg, q, out),
        Analysis::Transforms => run_transforms(cfg, q, out),
        Analysis::Density => run_density(cfg, q, cache, out),
        Analysis::Tails => run_tails(cfg, q, cache, out),
        Analysis::TranslationTest => run_translation(cfg, q, cache, out),
        Analysis::MarkovTest => run_markov(cfg, q, cache, out),
        Analysis::FiniteVolumeCheck => run_finite_volume(cfg, q, out),
        Analysis::Checks => {
            let report = run_checks(cfg, q)?;
            out.write_json("checks.json", &report)?;
            Ok(vec!["checks.json".into()])
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn run_sample(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let sampler = cfg.build_sampler(q, cfg.tree.depth)?;
    let samples: Vec<_> = (0..cfg.batch.samples)
        .map(|r| sampler.sample(cfg.seed, r as u64))
        .collect();
    let mut file = out.create("samples.jsonl")?;
    export_jsonl(sampler.index(), &samples, &mut file)?;
    file.flush()?;
    Ok(vec!["samples.jsonl".into()])
}

fn run_hov(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let sampler = cfg.build_sampler(q, cfg.tree.depth)?;
    let index = sampler.index();
    let mut file = out.create("hov_series.csv")?;
    writeln!(file, "replica,r,h,gap")?;
    for replica in 0..cfg.batch.hov {
        let sample = sampler.sample(cfg.seed, replica as u64);
        let series = hov_series(index, &sample, cfg.tree.depth)?;
        for (i, &h) in series.values.iter().enumerate() {
            match series.gaps.get(i) {
                Some(gap) => writeln!(file, "{replica},{},{h},{gap}", i + 1)?,
                None => writeln!(file, "{replica},{},{h},", i + 1)?,
            }
        }
    }
    file.flush()?;
    Ok(vec!["hov_series.csv".into()])
}

#[derive(Debug, Clone, Serialize)]
struct SecondMomentRow {
    r: u32,
    n: usize,
    mc_second_moment: f64,
    se: f64,
    exact: f64,
    z: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SecondMomentMeta {
    n: usize,
    rows: Vec<SecondMomentRow>,
    /// Closed-form upper bound on every exact value (also the r -> inf
    /// limit of the exact series).
    variance_bound: f64,
    tree_cumulant_2: f64,
    /// Gap between the largest-radius MC value and the limit, in SEs.
    limit_gap_se: f64,
}

fn run_second_moment(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let dist = q.normalize();
    let sampler = cfg.build_sampler(q, cfg.tree.depth)?;
    let n = cfg.batch.variance;
    let levels = &cfg.params.variance_levels;
    let batch = level_average_batch(&sampler, cfg.seed, n, levels)?;

    let mut rows = Vec::new();
    for (col, &r) in levels.iter().enumerate() {
        // The edge law is centered, so the raw second moment is the
        // variance; its SE comes from the delta method.
        let nf = n as f64;
        let m2 = batch.iter().map(|row| row[col] * row[col]).sum::<f64>() / nf;
        let m4 = batch.iter().map(|row| row[col].powi(4)).sum::<f64>() / nf;
        let se = ((m4 - m2 * m2) / nf).sqrt();
        let exact = exact_second_moment(&dist, cfg.tree.d, r)?;
        rows.push(SecondMomentRow {
            r,
            n,
            mc_second_moment: m2,
            se,
            exact,
            z: (m2 - exact) / se,
        });
    }
    let meta = SecondMomentMeta {
        n,
        variance_bound: second_moment_limit(&dist, cfg.tree.d)?,
        tree_cumulant_2: tree_cumulant(&dist, cfg.tree.d, 2)?,
        limit_gap_se: {
            let last = rows.last().expect("validated nonempty levels");
            (last.mc_second_moment - tree_cumulant(&dist, cfg.tree.d, 2)?).abs() / last.se
        },
        rows,
    };

    let mut file = out.create("second_moment.csv")?;
    writeln!(file, "r,n,mc_second_moment,se,exact,z")?;
    for row in &meta.rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            row.r, row.n, row.mc_second_moment, row.se, row.exact, row.z
        )?;
    }
    file.flush()?;
    out.write_json("second_moment.json", &meta)?;
    Ok(vec!["second_moment.csv".into(), "second_moment.json".into()])
}

#[derive(Debug, Clone, Serialize)]
struct TransformsMeta {
    c_bar: f64,
    delta: f64,
    c: f64,
    d: u32,
    /// Envelope comparison grid `[delta (d+1), 50]`.
    envelope_lo: f64,
    envelope_hi: f64,
    envelope_points: usize,
    /// Largest `|cf| / envelope`; at most 1 when the certified bound holds.
    max_ratio: f64,
    /// Product truncation depth at the widest grid point.
    l_at_hi: u32,
    tree_cumulant_2: f64,
}

fn run_transforms(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let dist = q.normalize();
    let d = cfg.tree.d;
    let pt = ProductTransform::free(dist.clone(), d)?;
    let cb = cf_bound(&dist, d)?;
    let lo = cb.delta * (f64::from(d) + 1.0);
    let hi = 50.0;
    if lo >= hi {
        return Err(CliError::Core(CoreError::domain(format!(
            "envelope window [{lo}, {hi}] is empty for this model"
        ))));
    }
    let points = 500;
    let grid = linspace(lo, hi, points);

    let mut file = out.create("cf_bound.csv")?;
    writeln!(file, "s,cf,bound")?;
    let mut max_ratio = 0.0f64;
    for &s in &grid {
        let cf = pt.cf_inf(s)?;
        let bound = cb.envelope(s);
        max_ratio = max_ratio.max(cf.abs() / bound);
        writeln!(file, "{s},{cf},{bound}")?;
    }
    file.flush()?;

    let meta = TransformsMeta {
        c_bar: cb.c_bar,
        delta: cb.delta,
        c: cb.c,
        d,
        envelope_lo: lo,
        envelope_hi: hi,
        envelope_points: points,
        max_ratio,
        l_at_hi: cb.l_delta(hi),
        tree_cumulant_2: tree_cumulant(&dist, d, 2)?,
    };
    out.write_json("transforms_meta.json", &meta)?;
    Ok(vec!["cf_bound.csv".into(), "transforms_meta.json".into()])
}

#[derive(Debug, Clone, Serialize)]
struct KdeMeta {
    n: usize,
    bandwidth: f64,
    compare_window: [f64; 2],
    /// Worst `(kde - inversion) / se` inside the comparison window, against
    /// the raw density and against the bandwidth-mollified one.
    max_abs_z_raw: f64,
    max_abs_z_smoothed: f64,
}

#[derive(Debug, Clone, Serialize)]
struct DensityMeta {
    method: &'static str,
    mass: f64,
    evenness_defect: f64,
    min_value: f64,
    /// Quadrature cutoff (inversion) or 6 bandwidths (KDE).
    t_cutoff: f64,
    step: f64,
    window: [f64; 2],
    points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    kde: Option<KdeMeta>,
}

/// The KDE cross-check window of the free-measure density.
const KDE_COMPARE_WINDOW: [f64; 2] = [-2.0, 2.0];

fn run_density(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let grid = linspace(
        cfg.params.density_window[0],
        cfg.params.density_window[1],
        cfg.params.density_points,
    );
    if cfg.is_free() {
        run_density_inversion(cfg, q, &grid, cache, out)
    } else {
        run_density_kde(cfg, q, &grid, cache, out)
    }
}

fn run_density_inversion(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    grid: &[f64],
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let dist = q.normalize();
    let d = cfg.tree.d;
    let pt = ProductTransform::free(dist.clone(), d)?;
    let cb = cf_bound(&dist, d)?;
    let de = density(&pt, &cb, grid)?;

    let mut file = out.create("density.csv")?;
    writeln!(file, "s,f")?;
    for (s, f) in de.grid.iter().zip(&de.values) {
        writeln!(file, "{s},{f}")?;
    }
    file.flush()?;
    let mut outputs = vec!["density.csv".to_string()];

    let lattices: Vec<LatticeReport> = cfg
        .params
        .lattice_deltas
        .iter()
        .map(|&delta| lattice_positivity(&de, delta))
        .collect::<gradtree_core::Result<_>>()?;
    out.write_json("lattice.json", &lattices)?;
    outputs.push("lattice.json".into());

    let kde_meta = if cfg.params.density_compare_mc {
        let (geo, points) = cache.get(cfg, q)?;
        let h: Vec<f64> = points.iter().map(|p| geo.h(p, FoldLevel::Top)).collect();
        let kde = gaussian_kde(&h, grid, None)?;
        let smoothed = density_smoothed(&pt, &cb, grid, kde.bandwidth)?;

        let mut file = out.create("density_kde.csv")?;
        writeln!(file, "s,f_kde,se,f_inv,f_inv_smoothed")?;
        let mut z_raw = 0.0f64;
        let mut z_smooth = 0.0f64;
        for i in 0..grid.len() {
            let s = grid[i];
            writeln!(
                file,
                "{s},{},{},{},{}",
                kde.values[i], kde.se[i], de.values[i], smoothed.values[i]
            )?;
            if (KDE_COMPARE_WINDOW[0]..=KDE_COMPARE_WINDOW[1]).contains(&s) && kde.se[i] > 0.0 {
                z_raw = z_raw.max((kde.values[i] - de.values[i]).abs() / kde.se[i]);
                z_smooth = z_smooth.max((kde.values[i] - smoothed.values[i]).abs() / kde.se[i]);
            }
        }
        file.flush()?;
        outputs.push("density_kde.csv".into());
        Some(KdeMeta {
            n: h.len(),
            bandwidth: kde.bandwidth,
            compare_window: KDE_COMPARE_WINDOW,
            max_abs_z_raw: z_raw,
            max_abs_z_smoothed: z_smooth,
        })
    } else {
        None
    };

    let meta = DensityMeta {
        method: "fourier_inversion",
        mass: de.mass,
        evenness_defect: de.evenness_defect(),
        min_value: de.values.iter().copied().fold(f64::INFINITY, f64::min),
        t_cutoff: de.cutoff,
        step: de.step,
        window: cfg.params.density_window,
        points: grid.len(),
        kde: kde_meta,
    };
    out.write_json("density_meta.json", &meta)?;
    outputs.push("density_meta.json".into());
    Ok(outputs)
}

/// The periodic transform is only an upper bound, so the periodic density
/// is estimated from samples instead of inverted.
fn run_density_kde(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    grid: &[f64],
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let (geo, points) = cache.get(cfg, q)?;
    let h: Vec<f64> = points.iter().map(|p| geo.h(p, FoldLevel::Top)).collect();
    let kde = gaussian_kde(&h, grid, None)?;

    let mut file = out.create("density.csv")?;
    writeln!(file, "s,f")?;
    for (s, f) in kde.grid.iter().zip(&kde.values) {
        writeln!(file, "{s},{f}")?;
    }
    file.flush()?;

    let mass = {
        let mut acc = 0.0;
        for i in 1..grid.len() {
            acc += (grid[i] - grid[i - 1]) * (kde.values[i] + kde.values[i - 1]) / 2.0;
        }
        acc
    };
    let meta = DensityMeta {
        method: "kde",
        mass,
        evenness_defect: f64::NAN,
        min_value: kde.values.iter().copied().fold(f64::INFINITY, f64::min),
        t_cutoff: 6.0 * kde.bandwidth,
        step: grid[1] - grid[0],
        window: cfg.params.density_window,
        points: grid.len(),
        kde: Some(KdeMeta {
            n: h.len(),
            bandwidth: kde.bandwidth,
            compare_window: [f64::NAN, f64::NAN],
            max_abs_z_raw: f64::NAN,
            max_abs_z_smoothed: f64::NAN,
        }),
    };
    out.write_json("density_meta.json", &meta)?;
    Ok(vec!["density.csv".into(), "density_meta.json".into()])
}

#[derive(Debug, Clone, Serialize)]
struct TailRow {
    s: u32,
    p_emp: f64,
    se: f64,
    bound: f64,
    p_marginal: f64,
    marginal_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TailsMeta {
    a: f64,
    b: f64,
    n: usize,
    /// Whether the transform behind `b` is itself an upper bound (periodic
    /// states); the tail bound stays valid either way.
    is_upper_bound: bool,
    all_below_bound: bool,
    marginal_all_below_bound: bool,
    rows: Vec<TailRow>,
}

fn run_tails(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let d = cfg.tree.d;
    let pt = if cfg.is_free() {
        ProductTransform::free(q.normalize(), d)?
    } else {
        ProductTransform::two_periodic(q, d)?
    };
    let tb = tail_bound(&pt, cfg.params.tail_a)?;

    let (geo, points) = cache.get(cfg, q)?;
    let h: Vec<f64> = points.iter().map(|p| geo.h(p, FoldLevel::Top)).collect();
    let hist = pinned_marginal(&h, cfg.tree.depth)?;
    let nf = h.len() as f64;

    let mut rows = Vec::new();
    for &s in &cfg.params.tail_s {
        let sf = f64::from(s);
        let p_emp = h.iter().filter(|&&x| x.abs() >= sf).count() as f64 / nf;
        let se = (p_emp * (1.0 - p_emp) / nf).sqrt();
        let p_marginal = hist
            .counts
            .iter()
            .filter(|(&cell, _)| cell.unsigned_abs() >= u64::from(s))
            .map(|(_, &count)| count as f64)
            .sum::<f64>()
            / nf;
        rows.push(TailRow {
            s,
            p_emp,
            se,
            bound: tb.bound(sf),
            p_marginal,
            marginal_bound: tb.marginal_bound(sf),
        });
    }
    let meta = TailsMeta {
        a: tb.exponent,
        b: tb.prefactor,
        n: h.len(),
        is_upper_bound: pt.is_upper_bound(),
        all_below_bound: rows.iter().all(|r| r.p_emp <= r.bound),
        marginal_all_below_bound: rows.iter().all(|r| r.p_marginal <= r.marginal_bound),
        rows,
    };

    let s_top = cfg.params.tail_s.iter().max().copied().unwrap_or(5) + 1;
    let mut file = out.create("tail_bound.csv")?;
    writeln!(file, "s,bound")?;
    for &s in linspace(0.0, f64::from(s_top), 20 * s_top as usize + 1).iter() {
        writeln!(file, "{s},{}", tb.bound(s))?;
    }
    file.flush()?;

    let mut file = out.create("tail_empirical.csv")?;
    writeln!(file, "s,p_emp,se,bound,p_marginal,marginal_bound")?;
    for r in &meta.rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            r.s, r.p_emp, r.se, r.bound, r.p_marginal, r.marginal_bound
        )?;
    }
    file.flush()?;
    out.write_json("tails.json", &meta)?;
    Ok(vec![
        "tail_bound.csv".into(),
        "tail_empirical.csv".into(),
        "tails.json".into(),
    ])
}

#[derive(Debug, Clone, Serialize)]
struct TranslationOutput {
    test: TranslationReport,
    control: TranslationReport,
}

fn bootstrap_config(cfg: &ExperimentConfig) -> BootstrapConfig {
    BootstrapConfig {
        resamples: cfg.params.bootstrap_resamples,
        seed: cfg.seed ^ SEED_BOOTSTRAP,
        ..BootstrapConfig::default()
    }
}

fn run_translation(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let (geo, points) = cache.get(cfg, q)?;
    let boot = bootstrap_config(cfg);
    let test = translation_test(
        &geo,
        points,
        cfg.params.translation_t,
        &cfg.params.translation_b,
        &boot,
    )?;
    let control = translation_negative_control(
        cfg.tree.d,
        points.len(),
        cfg.params.translation_t,
        &cfg.params.translation_b,
        cfg.seed ^ SEED_TRANSLATION_CTRL,
        &boot,
    )?;

    let mut file = out.create("translation.csv")?;
    writeln!(
        file,
        "kind,b,cell_near,cell_far,count_near,count_far,p_near,p_far,diff,se,z,undersized"
    )?;
    for (kind, report) in [("test", &test), ("control", &control)] {
        for r in &report.rows {
            writeln!(
                file,
                "{kind},{},{},{},{},{},{},{},{},{},{},{}",
                r.b,
                r.cell_near,
                r.cell_far,
                r.count_near,
                r.count_far,
                r.p_near,
                r.p_far,
                r.diff,
                r.se,
                r.z,
                r.undersized
            )?;
        }
    }
    file.flush()?;
    out.write_json("translation.json", &TranslationOutput { test, control })?;
    Ok(vec!["translation.csv".into(), "translation.json".into()])
}

#[derive(Debug, Clone, Serialize)]
struct MarkovOutput {
    test: MarkovReport,
    control: MarkovReport,
}

fn run_markov(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    cache: &mut TailCache,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let dist = q.normalize();
    let (geo, points) = cache.get(cfg, q)?;
    let a1 = Interval::new(cfg.params.markov_a1[0], cfg.params.markov_a1[1])?;
    let a2 = Interval::new(cfg.params.markov_a2[0], cfg.params.markov_a2[1])?;
    let boot = bootstrap_config(cfg);
    let test = markov_test(
        &geo,
        points,
        &dist,
        cfg.params.markov_t,
        cfg.params.markov_t_prime,
        a1,
        a2,
        &boot,
    )?;
    let control = markov_negative_control(
        &geo,
        points,
        &dist,
        cfg.params.markov_t,
        cfg.params.markov_t_prime,
        a1,
        a2,
        cfg.seed ^ SEED_MARKOV_CTRL,
        &boot,
    )?;

    let mut file = out.create("markov.csv")?;
    writeln!(
        file,
        "kind,t,t_prime,a1_lo,a1_hi,a2_lo,a2_hi,p1,p2,diff,se,z,verdict"
    )?;
    for (kind, r) in [("test", &test), ("control", &control)] {
        writeln!(
            file,
            "{kind},{},{},{},{},{},{},{},{},{},{},{},{:?}",
            r.t,
            r.t_prime,
            r.a1.lo,
            r.a1.hi,
            r.a2.lo,
            r.a2.hi,
            r.p[0],
            r.p[1],
            r.diff,
            r.se,
            r.z,
            r.verdict
        )?;
    }
    file.flush()?;
    out.write_json("markov.json", &MarkovOutput { test, control })?;
    Ok(vec!["markov.csv".into(), "markov.json".into()])
}

#[derive(Debug, Clone, Serialize)]
struct FiniteVolumeMeta {
    n: usize,
    h_max: u32,
    one_edge_max_abs: f64,
    one_edge_max_z: f64,
    mass_leak: f64,
    star_cells: usize,
    star_max_z: f64,
    star_max_abs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain_max_z: Option<f64>,
}

fn run_finite_volume(
    cfg: &ExperimentConfig,
    q: &TransferOperator,
    out: &mut OutputTracker,
) -> Result<Vec<String>> {
    let chain = cfg.chain_params(q)?;
    let measure = match &chain {
        None => VolumeMeasure::Free,
        Some(params) => VolumeMeasure::TwoPeriodic(params),
    };
    let report = finite_volume_check(
        q,
        measure,
        &cfg.tree_spec()?,
        cfg.params.h_max,
        cfg.seed,
        cfg.batch.finite_volume,
    )?;
    let meta = FiniteVolumeMeta {
        n: report.n,
        h_max: report.h_max,
        one_edge_max_abs: report.one_edge_max_abs,
        one_edge_max_z: report.one_edge_max_z,
        mass_leak: report.mass_leak,
        star_cells: report.star_cells,
        star_max_z: report.star_max_z,
        star_max_abs: report.star_max_abs,
        chain_cells: report.chain_cells,
        chain_max_z: report.chain_max_z,
    };
    out.write_json("finite_volume.json", &meta)?;
    Ok(vec!["finite_volume.json".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_both_ends_and_zero() {
        let grid = linspace(-8.0, 8.0, 801);
        assert_eq!(grid.len(), 801);
        assert_eq!(grid[0], -8.0);
        assert_eq!(grid[800], 8.0);
        assert_eq!(grid[400], 0.0);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {"kind": "sos", "beta": 1.0},
                "tree": {"kind": "cayley", "d": 2, "depth": 4},
                "measure": {"kind": "free"},
                "seed": 1,
                "analyses": ["hov"],
                "output_dir": "out"
            }"#,
        )
        .unwrap();
        let h1 = config_hash(&cfg);
        assert_eq!(h1, config_hash(&cfg));
        assert_eq!(h1.len(), 64);
        let mut other = cfg.clone();
        other.seed = 2;
        assert_ne!(h1, config_hash(&other));
    }
}
