//! Interval constructions checked against independent computations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use unfold_ci::constraints::{nonneg, ConstraintSetup, PolyhedralConstraints};
use unfold_ci::intervals::{
    dual_feasibility_check, ls_interval, osb_dual_interval, osb_interval, po_interval, po_rule,
    ssb_interval, z_two_sided, FunctionalSpec, Prior,
};
use unfold_ci::model::{Covariance, GaussianModel};
use unfold_ci::program::SolverSettings;
use unfold_ci::stats::chi2_quantile;

fn normal_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn model(k: DMatrix<f64>, y: Vec<f64>) -> GaussianModel {
    GaussianModel::new(k, DVector::from_vec(y), Covariance::Identity).unwrap()
}

/// Smearing-like positive matrix with decaying true intensity as data.
fn positive_instance(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (GaussianModel, Vec<f64>) {
    let k = DMatrix::from_fn(m, n, |i, j| {
        let d = i as f64 / m as f64 - j as f64 / n as f64;
        (-d * d * 20.0).exp() + 0.01 * rng.random_range(0.0..1.0)
    });
    let truth: Vec<f64> = (0..n)
        .map(|j| 20.0 * (-0.3 * j as f64).exp() + 1.0)
        .collect();
    let mean = &k * DVector::from_column_slice(&truth);
    let y = mean
        .iter()
        .map(|v| v + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (model(k, y), truth)
}

#[test]
fn ls_matches_qr_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(n..=15);
        let k = normal_matrix(&mut rng, m, n);
        let y = normal_vec(&mut rng, m);
        let h = normal_vec(&mut rng, n);
        // Oracle: λ̂ from QR, variance hᵀ(KᵀK)⁻¹h = ‖R⁻ᵀh‖².
        let qr = k.clone().qr();
        let r = qr.r();
        let qty = qr.q().transpose() * DVector::from_vec(y.clone());
        let lambda = r.solve_upper_triangular(&qty).unwrap();
        let v = r
            .transpose()
            .solve_lower_triangular(&DVector::from_vec(h.clone()))
            .unwrap();
        let centre = DVector::from_vec(h.clone()).dot(&lambda);
        let half = z_two_sided(0.05).unwrap() * v.norm();
        let iv = ls_interval(&model(k, y), &FunctionalSpec::new(h, "h").unwrap(), 0.05).unwrap();
        assert!((iv.lower - (centre - half)).abs() < 1e-9 * (1.0 + centre.abs()));
        assert!((iv.upper - (centre + half)).abs() < 1e-9 * (1.0 + centre.abs()));
    }
}

#[test]
fn ssb_matches_chi_square_ball_for_unconstrained_full_rank() {
    // Without constraints the SSB set is the ellipsoid ‖Kλ − y‖² ≤ χ²_{n,1−α},
    // whose extent along h is hᵀλ̂ ± √(χ² − s²) ‖R⁻ᵀh‖.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let settings = SolverSettings::default();
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(n + 1..=10);
        let k = normal_matrix(&mut rng, m, n);
        // Small residual keeps the ball non-empty.
        let centre = &k * DVector::from_vec(normal_vec(&mut rng, n));
        let y: Vec<f64> = centre
            .iter()
            .map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let h = normal_vec(&mut rng, n);
        let qr = k.clone().qr();
        let r = qr.r();
        let lambda = r
            .solve_upper_triangular(&(qr.q().transpose() * DVector::from_vec(y.clone())))
            .unwrap();
        let s2 = (&k * &lambda - DVector::from_vec(y.clone())).norm_squared();
        let v = r
            .transpose()
            .solve_lower_triangular(&DVector::from_vec(h.clone()))
            .unwrap();
        let half = (chi2_quantile(n, 0.95).unwrap() - s2).sqrt() * v.norm();
        let centre = DVector::from_vec(h.clone()).dot(&lambda);
        let c = PolyhedralConstraints::unconstrained(n);
        let iv = ssb_interval(
            &model(k, y),
            &FunctionalSpec::new(h, "h").unwrap(),
            &c,
            0.05,
            &settings,
        )
        .unwrap();
        assert!(
            (iv.lower - (centre - half)).abs() < 1e-5,
            "{} vs {}",
            iv.lower,
            centre - half
        );
        assert!((iv.upper - (centre + half)).abs() < 1e-5);
    }
}

#[test]
fn osb_primal_and_dual_agree_on_shape_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let settings = SolverSettings::default();
    for setup in [
        ConstraintSetup::N,
        ConstraintSetup::ND,
        ConstraintSetup::NDC,
    ] {
        for _ in 0..5 {
            let (md, _) = positive_instance(&mut rng, 12, 8);
            let h = FunctionalSpec::new(
                (0..8).map(|j| if j < 3 { 1.0 } else { 0.0 }).collect(),
                "agg",
            )
            .unwrap();
            let c = setup.build(8, None).unwrap();
            let p = osb_interval(&md, &h, &c, 0.05, &settings).unwrap();
            let d = osb_dual_interval(&md, &h, &c, 0.05, &settings).unwrap();
            assert!(
                (p.lower - d.lower).abs() < 1e-5 && (p.upper - d.upper).abs() < 1e-5,
                "{setup}: {p:?} vs {d:?}"
            );
        }
    }
}

#[test]
fn osb_lies_inside_ssb() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = SolverSettings::default();
    let z2 = z_two_sided(0.05).unwrap().powi(2);
    let radius2 = chi2_quantile(10, 0.95).unwrap();
    let mut checked = 0;
    for _ in 0..20 {
        let (md, _) = positive_instance(&mut rng, 15, 10);
        let h = FunctionalSpec::unit(10, rng.random_range(0..10));
        let c = nonneg(10).unwrap();
        let osb = osb_interval(&md, &h, &c, 0.05, &settings).unwrap();
        // Nesting needs χ²_n ≥ z² + s²; otherwise the SSB set may be smaller or empty.
        if radius2 < z2 + osb.diagnostics.slack_s2.unwrap() {
            continue;
        }
        let ssb = ssb_interval(&md, &h, &c, 0.05, &settings).unwrap();
        assert!(ssb.lower <= osb.lower + 1e-6 && osb.upper <= ssb.upper + 1e-6);
        checked += 1;
    }
    assert!(
        checked >= 10,
        "only {checked} instances satisfied the nesting condition"
    );
}

/// Expected upper endpoint `wᵀKm + z‖w‖ + bᵀc` of a rule's upper half.
fn upper_risk(w: &DVector<f64>, k: &DMatrix<f64>, m: &DVector<f64>, z: f64) -> f64 {
    w.dot(&(k * m)) + z * w.norm()
}

#[test]
fn po_rule_beats_random_feasible_rules() {
    // With non-negativity the upper half of any rule with Kᵀw ≥ h is
    // feasible (c = Kᵀw − h); the PO rule must have the smallest risk.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let settings = SolverSettings::default();
    let z = z_two_sided(0.05).unwrap();
    for _ in 0..10 {
        let (md, truth) = positive_instance(&mut rng, 10, 6);
        let h = FunctionalSpec::new(
            (0..6)
                .map(|j| if (2..4).contains(&j) { 1.0 } else { 0.0 })
                .collect(),
            "agg",
        )
        .unwrap();
        let c = nonneg(6).unwrap();
        let prior = Prior::new(truth.clone(), "truth").unwrap();
        let rule = po_rule(&md.k, &h, &c, &prior, 0.05, &settings).unwrap();
        let feas = dual_feasibility_check(&rule, &md.k, &h, &c);
        assert!(feas.feasible, "max violation {}", feas.max_violation);
        let m = DVector::from_vec(truth);
        let best = upper_risk(&DVector::from_vec(rule.w_upper.clone()), &md.k, &m, z);
        for _ in 0..200 {
            let w = DVector::from_fn(10, |_, _| rng.random_range(-1.0..3.0));
            let kt = md.k.transpose() * &w;
            let shortfall =
                h.h.iter()
                    .zip(kt.iter())
                    .map(|(a, b)| a - b)
                    .fold(0.0, f64::max);
            // Shift along a positive direction until Kᵀw ≥ h holds.
            let ones = DVector::from_element(10, 1.0);
            let kt1 = md.k.transpose() * &ones;
            let t = shortfall / kt1.min() + 1e-9;
            let w = w + ones * t;
            assert!((md.k.transpose() * &w)
                .iter()
                .zip(&h.h)
                .all(|(a, b)| a >= b));
            assert!(upper_risk(&w, &md.k, &m, z) >= best - 1e-6);
        }
    }
}

#[test]
fn po_interval_is_affine_in_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (md, truth) = positive_instance(&mut rng, 10, 6);
    let h = FunctionalSpec::unit(6, 2);
    let rule = po_rule(
        &md.k,
        &h,
        &nonneg(6).unwrap(),
        &Prior::new(truth, "t").unwrap(),
        0.05,
        &SolverSettings::default(),
    )
    .unwrap();
    let y1 = normal_vec(&mut rng, 10);
    let y2 = normal_vec(&mut rng, 10);
    let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
    let (a, b, c) = (
        po_interval(&rule, &y1).unwrap(),
        po_interval(&rule, &y2).unwrap(),
        po_interval(&rule, &mid).unwrap(),
    );
    assert!((c.lower - 0.5 * (a.lower + b.lower)).abs() < 1e-9);
    assert!((c.upper - 0.5 * (a.upper + b.upper)).abs() < 1e-9);
}

#[test]
fn osb_covers_at_nominal_rate() {
    // Small constrained problem with the truth on the constraint boundary.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let settings = SolverSettings::default();
    let k = DMatrix::from_fn(6, 4, |i, j| (-((i as f64 / 1.5 - j as f64).powi(2))).exp());
    let truth = DVector::from_vec(vec![5.0, 2.0, 0.0, 0.0]);
    let h = FunctionalSpec::new(vec![0.0, 1.0, 1.0, 0.0], "agg").unwrap();
    let theta = h.value(truth.as_slice());
    let c = nonneg(4).unwrap();
    let reps = 400;
    let mut covered = 0;
    for _ in 0..reps {
        let y: Vec<f64> = (&k * &truth)
            .iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        if osb_interval(&model(k.clone(), y), &h, &c, 0.05, &settings)
            .unwrap()
            .covers(theta)
        {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    assert!(
        rate >= 0.95 - 3.0 * (0.05f64 * 0.95 / reps as f64).sqrt(),
        "coverage {rate}"
    );
}
