//! Acceptance checklist: one test per criterion C01..C13 of the README.
//!
//! Tolerances are pinned in code next to each assertion.  Statistical
//! criteria run at a fixed seed so every number here is reproducible; the
//! heavyweight fixtures (the one-million-replica depth-10 tail batch) are
//! shared across criteria through lazy statics.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use gradtree_cli::checks::{
    boundary_bisection_oracle, enumerate_phi2, parity_defects, phi2_grid, truncate_law,
    two_periodic_edge_joint,
};
use gradtree_core::height_offset::batch::{
    collect_tail_batch, level_average_batch, BatchGeometry, FoldLevel, TailPoint,
};
use gradtree_core::height_offset::stats::{
    markov_negative_control, markov_test, translation_negative_control, translation_test,
    BootstrapConfig, Interval, Verdict,
};
use gradtree_core::height_offset::{
    exact_second_moment, one_step_martingale_check, pinned_marginal, MartingaleLaw,
};
use gradtree_core::numeric::{even_deriv2_origin, even_deriv4_origin};
use gradtree_core::sampler::{
    finite_volume_check, solve_boundary_law, FreeSampler, IsingChainParams, MeasureSampler,
    TwoPeriodicSampler, VolumeMeasure,
};
use gradtree_core::transfer::{auto_j_max, sos_mgf_closed};
use gradtree_core::transforms::{
    cf_bound, density, gaussian_kde, lattice_positivity, tail_bound, tree_cumulant,
    ProductTransform,
};
use gradtree_core::{EdgeDistribution, ModelKind, TransferOperator, TreeSpec};

const SEED: u64 = 20260801;
const D: u32 = 2;

static OP: LazyLock<TransferOperator> = LazyLock::new(|| TransferOperator::sos(1.0, 60).unwrap());
static DIST: LazyLock<EdgeDistribution> = LazyLock::new(|| OP.normalize());

/// Depth-10 free-measure tail batch at N = 10^6, shared by C07/C08/C10/C11.
static TAIL10: LazyLock<(BatchGeometry, Vec<TailPoint>)> = LazyLock::new(|| {
    let spec = TreeSpec::cayley(D, 10).unwrap();
    let sampler = MeasureSampler::Free(FreeSampler::new(spec, &DIST).unwrap());
    collect_tail_batch(&sampler, SEED, 1_000_000, 10).unwrap()
});

/// Sphere averages `H_10` of the shared batch.
static H10: LazyLock<Vec<f64>> = LazyLock::new(|| {
    let (geo, points) = &*TAIL10;
    points.iter().map(|p| geo.h(p, FoldLevel::Top)).collect()
});

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn bootstrap() -> BootstrapConfig {
    BootstrapConfig {
        resamples: 1000,
        seed: SEED ^ 0x626f_6f74,
        ..BootstrapConfig::default()
    }
}

#[test]
fn c01_one_edge_conditional_law() {
    // Analytic part: the sampler's edge law is the normalized kernel row,
    // cell by cell.
    let mass: f64 = (-60..=60i64).map(|j| OP.weight(j)).sum();
    for j in -60..=60i64 {
        let expect = OP.weight(j) / mass;
        assert!(
            (DIST.pmf(j) - expect).abs() <= 1e-15,
            "edge law at {j}: {} vs {expect}",
            DIST.pmf(j)
        );
    }

    // Empirical part at N = 10^5: one-edge marginal and the star conditional
    // against the exact local kernel product, every scored cell within 4 SE.
    let spec = TreeSpec::cayley(D, 5).unwrap();
    let report = finite_volume_check(&OP, VolumeMeasure::Free, &spec, 40, SEED, 100_000).unwrap();
    assert!(report.mass_leak < 1e-12, "window leak {}", report.mass_leak);
    assert!(
        report.one_edge_max_z <= 4.0,
        "one-edge z = {}",
        report.one_edge_max_z
    );
    assert!(report.star_cells >= 100, "only {} star cells scored", report.star_cells);
    assert!(report.star_max_z <= 4.0, "star z = {}", report.star_max_z);
}

#[test]
fn c02_product_formula_against_exhaustive_enumeration() {
    // Both sides use the same |j| <= 3 truncation (7^9 assignments); the
    // enumeration never touches the product code path.
    let small = truncate_law(&DIST, 3).unwrap();
    let pt = ProductTransform::free(small.clone(), D).unwrap();
    for t in phi2_grid() {
        let lib = pt.phi_r(t, 2).unwrap();
        let oracle = enumerate_phi2(&small, D, t);
        let err = (lib - oracle).norm();
        assert!(err < 1e-10, "t = {t}: |{lib} - {oracle}| = {err:.3e}");
    }
}

#[test]
fn c03_one_step_martingale_identity() {
    let spec = TreeSpec::cayley(D, 3).unwrap();
    let free = one_step_martingale_check(MartingaleLaw::Free(&DIST), &spec, 2, 40, SEED, 200)
        .unwrap();
    assert!(free.mass_leak < 1e-12, "free leak {}", free.mass_leak);
    assert!(
        free.max_abs_deviation <= 1e-12,
        "free deviation {}",
        free.max_abs_deviation
    );

    let params = IsingChainParams::new(0.55, 0.7).unwrap();
    let periodic = one_step_martingale_check(
        MartingaleLaw::TwoPeriodic { q: &OP, params: &params },
        &spec,
        2,
        40,
        SEED,
        200,
    )
    .unwrap();
    assert!(
        periodic.max_abs_deviation <= 1e-12,
        "two-periodic deviation {}",
        periodic.max_abs_deviation
    );
}

#[test]
fn c04_second_moment_law_and_limit() {
    // Closed-form ceiling 2d/(d^2-1) sum_{j>=1} j^2 Q(j)/|Q|, computed from
    // the raw kernel rather than through the library's moment helpers.
    let mass: f64 = (-60..=60i64).map(|j| OP.weight(j)).sum();
    let half_m2: f64 = (1..=60i64).map(|j| (j * j) as f64 * OP.weight(j)).sum::<f64>() / mass;
    let ceiling = 2.0 * f64::from(D) / (f64::from(D * D) - 1.0) * half_m2;

    let spec = TreeSpec::cayley(D, 6).unwrap();
    let sampler = MeasureSampler::Free(FreeSampler::new(spec, &DIST).unwrap());
    let levels = [2u32, 4, 6];
    let rows = level_average_batch(&sampler, SEED, 20_000, &levels).unwrap();
    let n = rows.len() as f64;

    let mut mc_top = 0.0;
    let mut se_top = 0.0;
    for (col, &r) in levels.iter().enumerate() {
        let m2 = rows.iter().map(|row| row[col] * row[col]).sum::<f64>() / n;
        let m4 = rows.iter().map(|row| row[col].powi(4)).sum::<f64>() / n;
        let se = ((m4 - m2 * m2) / n).sqrt();
        let exact = exact_second_moment(&DIST, D, r).unwrap();
        assert!(
            (m2 - exact).abs() <= 3.0 * se,
            "r = {r}: MC {m2} vs exact {exact} (se {se})"
        );
        assert!(exact <= ceiling * (1.0 + 1e-12), "r = {r}: exact {exact} above {ceiling}");
        (mc_top, se_top) = (m2, se);
    }

    let limit = tree_cumulant(&DIST, D, 2).unwrap();
    assert!(limit <= ceiling * (1.0 + 1e-12));
    assert!(
        (mc_top - limit).abs() <= se_top,
        "largest radius: MC {mc_top} vs limit {limit} (se {se_top})"
    );
}

#[test]
fn c05_cumulants_from_log_transform_derivatives() {
    let pt = ProductTransform::free(DIST.clone(), D).unwrap();
    let log_phi = |s: f64| pt.phi_inf_real(s).unwrap().ln();
    let k2 = tree_cumulant(&DIST, D, 2).unwrap();
    let k4 = tree_cumulant(&DIST, D, 4).unwrap();
    // The transform carries ~1e-12 stop-rule noise; the fourth difference
    // divides it by h^4, which pins the step sizes.
    let d2 = even_deriv2_origin(&log_phi, 0.01);
    let d4 = even_deriv4_origin(&log_phi, 0.1);
    let rel2 = ((d2 - k2) / k2).abs();
    let rel4 = ((d4 - k4) / k4).abs();
    assert!(rel2 <= 1e-6, "order 2: {d2} vs {k2}, rel {rel2:.2e}");
    assert!(rel4 <= 1e-4, "order 4: {d4} vs {k4}, rel {rel4:.2e}");
}

#[test]
fn c06_sos_closed_form_mgf() {
    let beta = 1.0;
    // The series side must out-resolve the comparison: with 250 terms the
    // neglected tail at s = 0.9 beta is below e^-25.
    let j_series = 250u32.max(auto_j_max(ModelKind::Sos, beta).unwrap());
    let series = gradtree_core::make_model(ModelKind::Sos, beta, j_series)
        .unwrap()
        .normalize();
    for k in 0..19 {
        let s = 0.9 * beta * (2.0 * k as f64 / 18.0 - 1.0);
        let closed = sos_mgf_closed(beta, s).unwrap();
        let summed = series.transform_real(s).unwrap();
        assert!(
            (closed - summed).abs() < 1e-10,
            "s = {s}: closed {closed} vs series {summed}"
        );
    }
}

#[test]
fn c07_cf_envelope_density_shape_and_kde_cross_check() {
    let pt = ProductTransform::free(DIST.clone(), D).unwrap();
    let bound = cf_bound(&DIST, D).unwrap();

    // Exponential envelope on 500 grid points of [delta (d+1), 50].
    let lo = bound.delta * (f64::from(D) + 1.0);
    for &s in linspace(lo, 50.0, 500).iter() {
        let cf = pt.cf_inf(s).unwrap();
        assert!(
            cf.abs() <= bound.envelope(s),
            "s = {s}: |cf| = {:.3e} above envelope {:.3e}",
            cf.abs(),
            bound.envelope(s)
        );
    }

    // Inverted density: unit mass, even, nonnegative to rounding.
    let de = density(&pt, &bound, &linspace(-8.0, 8.0, 801)).unwrap();
    assert!((de.mass - 1.0).abs() <= 1e-3, "mass {}", de.mass);
    assert!(de.evenness_defect() <= 1e-6, "evenness {}", de.evenness_defect());
    let min = de.values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    assert!(min >= -1e-8, "min value {min}");

    // KDE of the million H_10 samples vs the inversion, within 3 KDE SEs
    // pointwise on [-2, 2].
    let grid = linspace(-2.0, 2.0, 161);
    let kde = gaussian_kde(&H10, &grid, None).unwrap();
    let de_win = density(&pt, &bound, &grid).unwrap();
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        let z = (de_win.values[i] - kde.values[i]).abs() / kde.se[i];
        worst = worst.max(z);
        assert!(
            z <= 3.0,
            "s = {}: inversion {} vs kde {} ({} se)",
            grid[i],
            de_win.values[i],
            kde.values[i],
            z
        );
    }
    assert!(worst > 0.0, "degenerate comparison");
}

#[test]
fn c08_tail_bounds_on_height_offset_and_pinned_marginal() {
    // A = 2 sits inside (0, 3 beta) for SOS beta = 1, d = 2.
    let pt = ProductTransform::free(DIST.clone(), D).unwrap();
    let tb = tail_bound(&pt, 2.0).unwrap();
    let n = H10.len() as f64;
    let hist = pinned_marginal(&H10, 10).unwrap();
    for s in 1u32..=5 {
        let sf = f64::from(s);
        let p_emp = H10.iter().filter(|h| h.abs() >= sf).count() as f64 / n;
        assert!(
            p_emp <= tb.bound(sf),
            "s = {s}: empirical {p_emp} above bound {}",
            tb.bound(sf)
        );
        let p_marginal = hist
            .counts
            .iter()
            .filter(|(&cell, _)| cell.unsigned_abs() >= u64::from(s))
            .map(|(_, &c)| c as f64)
            .sum::<f64>()
            / n;
        assert!(
            p_marginal <= tb.marginal_bound(sf),
            "s = {s}: marginal {p_marginal} above chained bound {}",
            tb.marginal_bound(sf)
        );
    }
}

#[test]
fn c09_lattice_positivity_at_unit_and_half_spacing() {
    let pt = ProductTransform::free(DIST.clone(), D).unwrap();
    let bound = cf_bound(&DIST, D).unwrap();
    let de = density(&pt, &bound, &linspace(-3.2, 3.2, 641)).unwrap();
    for delta in [1.0, 0.5] {
        let report = lattice_positivity(&de, delta).unwrap();
        assert!(
            report.found && report.min_value > 0.0,
            "delta = {delta}: min {} at shift {}",
            report.min_value,
            report.shift
        );
    }
}

#[test]
fn c10_translation_invariance_fails_with_clean_control() {
    let (geo, points) = &*TAIL10;
    let cfg = bootstrap();
    let report = translation_test(geo, points, 0, &[1, 2], &cfg).unwrap();
    assert_eq!(report.verdict, Verdict::Significant);
    assert!(report.max_abs_z > 5.0, "max |z| = {}", report.max_abs_z);

    let control = translation_negative_control(
        D,
        points.len(),
        0,
        &[1, 2],
        SEED ^ 0x7472_616e,
        &cfg,
    )
    .unwrap();
    assert!(control.max_abs_z < 3.0, "control |z| = {}", control.max_abs_z);
}

#[test]
fn c11_markov_property_fails_with_clean_control() {
    let (geo, points) = &*TAIL10;
    let cfg = bootstrap();
    let a1 = Interval::new(0.0, 1.0).unwrap();
    let a2 = Interval::new(1.0, 2.0).unwrap();
    let report = markov_test(geo, points, &DIST, 0, 3, a1, a2, &cfg).unwrap();
    assert_eq!(report.verdict, Verdict::Significant);
    assert!(report.z.abs() > 5.0, "z = {}", report.z);

    let control = markov_negative_control(
        geo,
        points,
        &DIST,
        0,
        3,
        a1,
        a2,
        SEED ^ 0x6d61_726b,
        &cfg,
    )
    .unwrap();
    assert!(control.z.abs() < 3.0, "control z = {}", control.z);
}

#[test]
fn c12_two_periodic_state_construction() {
    // Supercritical chain: SOS beta = 2 has parity coupling cosh(2) > 3.
    let q = TransferOperator::sos_auto(2.0).unwrap();
    let fuzzy = q.fuzzy_project();
    let sols = solve_boundary_law(&fuzzy, D).unwrap();
    assert!(
        sols.iter().any(|s| (s.x - 1.0).abs() < 1e-12),
        "symmetric fixed point missing: {:?}",
        sols.iter().map(|s| s.x).collect::<Vec<_>>()
    );
    assert_eq!(sols.len(), 3, "expected both asymmetric fixed points");
    let oracle = boundary_bisection_oracle(fuzzy.q_even, fuzzy.q_odd, D)
        .expect("supercritical chain has an asymmetric root");
    let gap = (sols.last().unwrap().x - oracle).abs();
    assert!(gap <= 1e-10, "solver vs bisection oracle: {gap:.3e}");

    // Subcritical chain: only the symmetric fixed point.
    let sub = solve_boundary_law(&OP.fuzzy_project(), D).unwrap();
    assert_eq!(sub.len(), 1);
    assert!((sub[0].x - 1.0).abs() < 1e-12);

    // Single-edge joint law (root class, child class, increment) vs the
    // direct enumeration of the layered construction, 4 SE at N = 10^5.
    let params = sols.last().unwrap().params;
    let n = 100_000u64;
    let star = TwoPeriodicSampler::new(TreeSpec::cayley(D, 1).unwrap(), &q, params).unwrap();
    let mut counts = BTreeMap::<(u8, u8, i64), u64>::new();
    for replica in 0..n {
        let sample = star.sample(SEED, replica);
        let classes = sample.fuzzy().expect("two-periodic samples carry classes");
        let j = i64::from(sample.increments()[0]);
        *counts.entry((classes[0], classes[1], j)).or_default() += 1;
    }
    let joint = two_periodic_edge_joint(&q, &params, i64::from(q.j_max()));
    let nf = n as f64;
    let mut scored = 0;
    for (&cell, &p) in &joint {
        if nf * p * (1.0 - p) < 10.0 {
            continue;
        }
        let freq = *counts.get(&cell).unwrap_or(&0) as f64 / nf;
        let se = (p * (1.0 - p) / nf).sqrt();
        scored += 1;
        assert!(
            (freq - p).abs() <= 4.0 * se,
            "cell {cell:?}: {freq} vs {p} (se {se})"
        );
    }
    assert!(scored >= 10, "only {scored} joint cells scored");
    let observed_mass: u64 = counts
        .iter()
        .filter(|(cell, _)| joint.contains_key(cell))
        .map(|(_, &c)| c)
        .sum();
    assert_eq!(observed_mass, n, "sampler produced cells outside the joint law");

    // Parity consistency on every edge of full samples: hard assertion.
    let deep = TwoPeriodicSampler::new(TreeSpec::cayley(D, 6).unwrap(), &q, params).unwrap();
    for replica in 0..50 {
        let sample = deep.sample(SEED, replica);
        let (bad, total) = parity_defects(deep.index(), &sample).unwrap();
        assert_eq!(bad, 0, "replica {replica}: {bad} of {total} edges violate parity");
        assert_eq!(total, u64::from(deep.index().edge_count()));
    }
}

#[test]
fn c13_identical_rerun_reproduces_every_csv_byte() {
    let tmp = tempfile::TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let config = serde_json::json!({
        "model": {"kind": "sos", "beta": 1.0, "j_max": 60},
        "tree": {"kind": "cayley", "d": 2, "depth": 5},
        "measure": {"kind": "free"},
        "seed": SEED,
        "batch": {"tail": 20_000, "variance": 5000, "hov": 50},
        "analyses": ["hov", "second-moment", "density", "tails", "translation-test"],
        "output_dir": out_dir,
        "params": {
            "variance_levels": [2, 4, 5],
            "density_window": [-4.0, 4.0],
            "density_points": 161
        }
    });
    let path = tmp.path().join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let run = |label: &str| -> BTreeMap<String, Vec<u8>> {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_gradtree"))
            .arg("run")
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success(), "{label} run failed");
        let mut csvs = BTreeMap::new();
        for entry in std::fs::read_dir(&out_dir).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "csv") {
                csvs.insert(
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
        csvs
    };

    let first = run("first");
    assert!(first.len() >= 4, "expected several CSVs, got {:?}", first.keys());
    let second = run("second");
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "re-run changed the output set"
    );
    for (name, bytes) in &first {
        assert_eq!(bytes, &second[name], "{name} changed between identical runs");
    }
}
