//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `ACCEPTANCE_STRICT=1` is set, so that known, analysed shortfalls do not
//! block the regular test run.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use unfold_ci::constraints::{nonneg, ConstraintSetup, PolyhedralConstraints};
use unfold_ci::intervals::{
    ls_interval, minimax_halfwidth_bounds, osb_dual_interval, osb_interval, po_interval, po_rule,
    z_two_sided, FunctionalSpec, Method, Prior,
};
use unfold_ci::model::{Covariance, GaussianModel};
use unfold_ci::program::SolverSettings;
use unfold_ci::sim::{
    prepare, run_study, CoverageReport, CoverageRow, ExperimentConfig, RunOptions, StudyOutput,
};
use unfold_ci::stats::normal_quantile;

const ALPHA: f64 = 0.05;

type Check = Result<(bool, String), String>;

struct Suite {
    results: Vec<(String, bool, Duration)>,
}

impl Suite {
    fn run(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        let t = Instant::now();
        let outcome = f();
        let elapsed = t.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if let Some(limit) = limit {
            if elapsed > limit {
                pass = false;
                detail.push_str(&format!("; runtime {elapsed:.1?} exceeds {limit:?}"));
            }
        }
        println!(
            "{} {name} [{:.1}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.results.push((name.to_string(), pass, elapsed));
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.toml"));
    ExperimentConfig::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn study(cfg: &ExperimentConfig) -> Result<StudyOutput, String> {
    let prepared = prepare(cfg).map_err(|e| e.to_string())?;
    run_study(&prepared, &RunOptions::default()).map_err(|e| e.to_string())
}

fn rows<'a>(
    r: &'a CoverageReport,
    method: Method,
    constraints: &str,
    prior: &str,
) -> Result<Vec<&'a CoverageRow>, String> {
    let v = r.select(method, constraints, prior);
    if v.is_empty() {
        Err(format!("no rows for {method}/{constraints}/{prior}"))
    } else {
        Ok(v)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn white_model(k: DMatrix<f64>, y: Vec<f64>) -> GaussianModel {
    GaussianModel::new(k, DVector::from_vec(y), Covariance::Identity).expect("valid model")
}

fn endpoint_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

fn osb_ls_equivalence() -> Check {
    let settings = SolverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let m = rng.random_range(n..=20);
        let k = gaussian_matrix(&mut rng, m, n);
        let y = gaussian_vec(&mut rng, m);
        let h = FunctionalSpec::new(gaussian_vec(&mut rng, n), "h").map_err(|e| e.to_string())?;
        let model = white_model(k, y);
        let c = PolyhedralConstraints::unconstrained(n);
        let osb = osb_interval(&model, &h, &c, ALPHA, &settings).map_err(|e| e.to_string())?;
        let ls = ls_interval(&model, &h, ALPHA).map_err(|e| e.to_string())?;
        worst = worst
            .max(endpoint_gap(osb.lower, ls.lower))
            .max(endpoint_gap(osb.upper, ls.upper));
    }
    Ok((
        worst < 1e-5,
        format!("max endpoint discrepancy {worst:.3e} over 200 instances (< 1e-5)"),
    ))
}

fn po_ls_equivalence() -> Check {
    let settings = SolverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let k = gaussian_matrix(&mut rng, n, n) + DMatrix::identity(n, n) * 3.0;
        let y = gaussian_vec(&mut rng, n);
        let h = FunctionalSpec::new(gaussian_vec(&mut rng, n), "h").map_err(|e| e.to_string())?;
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let prior = Prior::new(
            gaussian_vec(&mut rng, n)
                .into_iter()
                .map(|v| v * scale)
                .collect(),
            "random",
        )
        .map_err(|e| e.to_string())?;
        let c = PolyhedralConstraints::unconstrained(n);
        let model = white_model(k, y);
        let rule =
            po_rule(&model.k, &h, &c, &prior, ALPHA, &settings).map_err(|e| e.to_string())?;
        let po = po_interval(&rule, model.y.as_slice()).map_err(|e| e.to_string())?;
        let ls = ls_interval(&model, &h, ALPHA).map_err(|e| e.to_string())?;
        worst = worst
            .max(endpoint_gap(po.lower, ls.lower))
            .max(endpoint_gap(po.upper, ls.upper));
    }
    Ok((
        worst < 1e-5,
        format!("max endpoint discrepancy {worst:.3e} over 100 instances (< 1e-5)"),
    ))
}

fn primal_dual_agreement() -> Check {
    let settings = SolverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let setups = [
        ConstraintSetup::N,
        ConstraintSetup::ND,
        ConstraintSetup::NDC,
    ];
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(3..=10);
        let m = rng.random_range(2..=20);
        let k = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..1.0));
        let (a, b, c0) = (
            rng.random_range(1.0..10.0),
            rng.random_range(0.1..1.0),
            rng.random_range(0.0..1.0),
        );
        let truth: Vec<f64> = (0..n).map(|j| a * (-b * j as f64).exp() + c0).collect();
        let mean = &k * DVector::from_column_slice(&truth);
        let y: Vec<f64> = mean
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let h = FunctionalSpec::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect(), "h")
            .map_err(|e| e.to_string())?;
        let c = setups[i % 3].build(n, None).map_err(|e| e.to_string())?;
        let model = white_model(k, y);
        let p =
            osb_interval(&model, &h, &c, ALPHA, &settings).map_err(|e| format!("primal: {e}"))?;
        let d = osb_dual_interval(&model, &h, &c, ALPHA, &settings)
            .map_err(|e| format!("dual: {e}"))?;
        worst = worst
            .max(endpoint_gap(p.lower, d.lower))
            .max(endpoint_gap(p.upper, d.upper));
    }
    Ok((
        worst < 1e-4,
        format!("max primal-dual endpoint gap {worst:.3e} over 100 instances (< 1e-4)"),
    ))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn widebin_undercoverage(out: &StudyOutput) -> Check {
    let ls = rows(&out.report, Method::Ls, "none", "")?;
    let cov: Vec<f64> = ls.iter().map(|r| r.coverage).collect();
    let under = cov.iter().filter(|&&c| c < 0.90).count();
    Ok((
        under >= 5,
        format!(
            "{under}/10 bins below 0.90 (need >= 5); coverage {}",
            fmt_list(&cov)
        ),
    ))
}

fn coverage_floor(rows: &[&CoverageRow], floor: f64) -> (bool, Vec<f64>) {
    let cov: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
    (cov.iter().all(|&c| c >= floor), cov)
}

fn aggregation_repair(out: &StudyOutput) -> Check {
    let floor = 0.95 - 3.0 * (0.05f64 * 0.95 / 1000.0).sqrt();
    let (ok, cov) = coverage_floor(&rows(&out.report, Method::Ls, "none", "")?, floor);
    Ok((
        ok,
        format!(
            "min {:.3} (need >= {floor:.3}); coverage {}",
            cov.iter().copied().fold(1.0, f64::min),
            fmt_list(&cov)
        ),
    ))
}

fn constrained_coverage(out: &StudyOutput) -> Check {
    let (ok_osb, osb) = coverage_floor(&rows(&out.report, Method::Osb, "N", "")?, 0.93);
    let (ok_po, po) = coverage_floor(&rows(&out.report, Method::Po, "N", "flat")?, 0.93);
    Ok((
        ok_osb && ok_po,
        format!("OSB {}; PO {}", fmt_list(&osb), fmt_list(&po)),
    ))
}

/// `a ≤ b` allowing one width standard error (the larger of the two).
fn le_within_se(a: &CoverageRow, b: &CoverageRow) -> bool {
    a.mean_width <= b.mean_width + a.width_se.max(b.width_se)
}

fn width_ordering(out: &StudyOutput) -> Check {
    let r = &out.report;
    let osb = rows(r, Method::Osb, "N", "")?;
    let po = rows(r, Method::Po, "N", "flat")?;
    let ssb = rows(r, Method::Ssb, "N", "")?;
    let ls = rows(r, Method::Ls, "none", "")?;
    let mut bad = Vec::new();
    for j in 0..osb.len() {
        if !le_within_se(osb[j], po[j]) {
            bad.push(format!(
                "bin {j}: OSB {:.3} > PO {:.3}",
                osb[j].mean_width, po[j].mean_width
            ));
        }
        if !le_within_se(po[j], ssb[j]) {
            bad.push(format!(
                "bin {j}: PO {:.3} > SSB {:.3}",
                po[j].mean_width, ssb[j].mean_width
            ));
        }
    }
    let interior = 1..osb.len() - 1;
    let total = interior.len();
    let shorter = interior
        .filter(|&j| osb[j].mean_width < ls[j].mean_width && po[j].mean_width < ls[j].mean_width)
        .count();
    let majority = 2 * shorter > total;
    let detail =
        format!(
        "ordering violations: {}; OSB and PO shorter than LS on {shorter}/{total} interior bins",
        if bad.is_empty() { "none".to_string() } else { bad.join(", ") }
    );
    Ok((bad.is_empty() && majority, detail))
}

fn rank_deficient(out: &StudyOutput) -> Check {
    let osb_rows = rows(&out.report, Method::Osb, "N", "")?;
    let po_rows = rows(&out.report, Method::Po, "N", "flat")?;
    let fails: usize = osb_rows
        .iter()
        .chain(&po_rows)
        .map(|r| r.failure_count)
        .sum();
    let (ok_osb, osb) = coverage_floor(&osb_rows, 0.93);
    let (ok_po, po) = coverage_floor(&po_rows, 0.93);
    Ok((
        ok_osb && ok_po,
        format!(
            "40x80 adversarial ansatz; solver failures {fails}; OSB {}; PO {}",
            fmt_list(&osb),
            fmt_list(&po)
        ),
    ))
}

fn width_sweep(reports: &BTreeMap<usize, CoverageReport>) -> Check {
    let (r160, r320) = match (reports.get(&160), reports.get(&320)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("sweep lacks n = 160 or n = 320".into()),
    };
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (method, prior) in [(Method::Osb, ""), (Method::Po, "flat")] {
        let a = rows(r160, method, "N", prior)?;
        let b = rows(r320, method, "N", prior)?;
        let ratios: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(a, b)| b.mean_width / a.mean_width)
            .collect();
        worst = ratios.iter().copied().fold(worst, f64::max);
        detail.push(format!("{method} ratios {}", fmt_list(&ratios)));
    }
    let widths: Vec<String> = reports
        .iter()
        .map(|(n, r)| {
            let w: f64 = r
                .select(Method::Osb, "N", "")
                .iter()
                .map(|x| x.mean_width)
                .sum::<f64>()
                / 10.0;
            format!("n={n}: {w:.2}")
        })
        .collect();
    Ok((
        worst < 1.25,
        format!(
            "max width(320)/width(160) {worst:.3} (< 1.25); {}; mean OSB width {}",
            detail.join("; "),
            widths.join(", ")
        ),
    ))
}

fn minimax(fullrank: &StudyOutput, adversarial_cfg: &ExperimentConfig) -> Check {
    let settings = SolverSettings::default();
    let mut notes = Vec::new();
    let mut ok = true;

    // Bracket ordering on the GMM study and on random full-rank instances.
    let mut bracket_bad = fullrank
        .report
        .minimax
        .iter()
        .filter(|r| !(r.lower <= r.upper))
        .count();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(n..=15);
        let k = gaussian_matrix(&mut rng, m, n);
        let h = FunctionalSpec::new(gaussian_vec(&mut rng, n), "h").map_err(|e| e.to_string())?;
        let c = nonneg(n).map_err(|e| e.to_string())?;
        let b = minimax_halfwidth_bounds(&k, &h, &c, ALPHA, 1.0, false, &settings)
            .map_err(|e| e.to_string())?;
        if !(b.lower <= b.upper) {
            bracket_bad += 1;
        }
    }
    ok &= bracket_bad == 0 && !fullrank.report.minimax.is_empty();
    notes.push(format!(
        "lower > upper on {bracket_bad} full-rank instances"
    ));

    // Closed form for K = I with non-negativity.
    let (z1, z2) = (
        normal_quantile(1.0 - ALPHA).unwrap(),
        z_two_sided(ALPHA).unwrap(),
    );
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let n = rng.random_range(1..=10);
        let h = FunctionalSpec::new(gaussian_vec(&mut rng, n), "h").map_err(|e| e.to_string())?;
        let norm = h.h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = nonneg(n).map_err(|e| e.to_string())?;
        let b = minimax_halfwidth_bounds(
            &DMatrix::identity(n, n),
            &h,
            &c,
            ALPHA,
            1.0,
            false,
            &settings,
        )
        .map_err(|e| e.to_string())?;
        worst = worst
            .max((b.lower - 2.0 * z1 * norm).abs())
            .max((b.upper - 2.0 * z2 * norm).abs());
    }
    ok &= worst < 1e-5;
    notes.push(format!("identity closed-form error {worst:.2e}"));

    // Aggregation functionals outside the row space of a wide matrix.
    let prepared = prepare(adversarial_cfg).map_err(|e| e.to_string())?;
    let mut finite = 0;
    for (_, c) in &prepared.constraints {
        for h in &prepared.aggregation.h_vectors {
            let b = minimax_halfwidth_bounds(&prepared.k_white, h, c, ALPHA, 1.0, false, &settings)
                .map_err(|e| e.to_string())?;
            if b.lower.is_finite() {
                finite += 1;
            }
        }
    }
    ok &= finite == 0;
    notes.push(format!(
        "{finite}/{} rank-deficient aggregation functionals with finite lower bound",
        prepared.aggregation.len() * prepared.constraints.len()
    ));
    Ok((ok, notes.join("; ")))
}

fn jet(out: &StudyOutput) -> Check {
    let r = &out.report;
    let methods = [(Method::Osb, ""), (Method::Po, "ansatz"), (Method::Ssb, "")];
    let setups = ["N", "ND", "NDC"];
    let mut bad = Vec::new();
    let mut min_cov: f64 = 1.0;
    let mut table = BTreeMap::new();
    for (m, p) in methods {
        for s in setups {
            let v = rows(r, m, s, p)?;
            for row in &v {
                min_cov = min_cov.min(row.coverage);
                if row.coverage < 0.93 {
                    bad.push(format!(
                        "{m}/{s} bin {} coverage {:.3}",
                        row.bin, row.coverage
                    ));
                }
            }
            table.insert((m.to_string(), s), v);
        }
    }
    for (m, _) in methods {
        let m = m.to_string();
        for pair in setups.windows(2) {
            for (a, b) in table[&(m.clone(), pair[1])]
                .iter()
                .zip(&table[&(m.clone(), pair[0])])
            {
                if !le_within_se(a, b) {
                    bad.push(format!(
                        "{m} bin {}: {} {:.3} > {} {:.3}",
                        a.bin, pair[1], a.mean_width, pair[0], b.mean_width
                    ));
                }
            }
        }
    }
    for s in setups {
        for pair in methods.windows(2) {
            let lo = &table[&(pair[0].0.to_string(), s)];
            let hi = &table[&(pair[1].0.to_string(), s)];
            for (a, b) in lo.iter().zip(hi) {
                if !le_within_se(a, b) {
                    bad.push(format!(
                        "{s} bin {}: {} {:.3} > {} {:.3}",
                        a.bin, pair[0].0, a.mean_width, pair[1].0, b.mean_width
                    ));
                }
            }
        }
    }
    Ok((
        bad.is_empty(),
        format!(
            "min coverage {min_cov:.3}; violations: {}",
            if bad.is_empty() {
                "none".into()
            } else {
                bad.join(", ")
            }
        ),
    ))
}

fn prior_robustness(out: &StudyOutput) -> Check {
    let r = &out.report;
    let correct = rows(r, Method::Po, "N", "correct")?;
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for other in ["flat", "misspecified", "adversarial"] {
        let v = rows(r, Method::Po, "N", other)?;
        for (c, o) in correct.iter().zip(&v) {
            let rel = (o.mean_width - c.mean_width).abs() / c.mean_width;
            worst = worst.max(rel);
            if rel >= 0.5 {
                bad.push(format!(
                    "{other} bin {}: {:.2} vs {:.2} ({:+.0}%)",
                    c.bin,
                    o.mean_width,
                    c.mean_width,
                    100.0 * (o.mean_width / c.mean_width - 1.0)
                ));
            }
            if c.mean_width > o.mean_width + c.width_se.max(o.width_se) {
                bad.push(format!("correct prior wider than {other} in bin {}", c.bin));
            }
        }
    }
    Ok((
        bad.is_empty(),
        format!(
            "max relative difference {:.0}%; violations: {}",
            100.0 * worst,
            if bad.is_empty() {
                "none".into()
            } else {
                bad.join(", ")
            }
        ),
    ))
}

fn main() -> ExitCode {
    let mut suite = Suite {
        results: Vec::new(),
    };
    let minute = Duration::from_secs(60);

    suite.run("osb_ls_equivalence", Some(minute), osb_ls_equivalence);
    suite.run("po_ls_equivalence", Some(minute), po_ls_equivalence);
    suite.run(
        "primal_dual_osb_agreement",
        Some(5 * minute),
        primal_dual_agreement,
    );

    let widebin = study(&config("gmm_widebin_ls"));
    suite.run("widebin_ls_undercoverage", None, || {
        widebin_undercoverage(widebin.as_ref()?)
    });

    let fullrank = study(&config("gmm_fullrank_40"));
    suite.run("aggregation_repair", None, || {
        aggregation_repair(fullrank.as_ref()?)
    });
    suite.run("constrained_coverage", None, || {
        constrained_coverage(fullrank.as_ref()?)
    });
    suite.run("expected_width_ordering", None, || {
        width_ordering(fullrank.as_ref()?)
    });

    let adversarial_cfg = config("gmm_adversarial_80");
    let adversarial = study(&adversarial_cfg);
    suite.run("rank_deficient_operation", None, || {
        rank_deficient(adversarial.as_ref()?)
    });

    suite.run("width_non_divergence", Some(60 * minute), || {
        let mut reports = BTreeMap::new();
        for c in config("gmm_bins_sweep").expand() {
            let n = c.grid.true_bins;
            reports.insert(n, study(&c)?.report);
        }
        width_sweep(&reports)
    });

    suite.run("minimax_bounds", None, || {
        minimax(fullrank.as_ref()?, &adversarial_cfg)
    });

    let jet_out = study(&config("jet_spectrum_ndc"));
    suite.run("jet_constraint_study", None, || jet(jet_out.as_ref()?));

    let priors = study(&config("gmm_prior_sweep"));
    suite.run("prior_robustness", None, || {
        prior_robustness(priors.as_ref()?)
    });

    let failed: Vec<&str> = suite
        .results
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    let total: Duration = suite.results.iter().map(|r| r.2).sum();
    println!(
        "acceptance: {} passed, {} failed{} in {:.0}s",
        suite.results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        },
        total.as_secs_f64()
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
