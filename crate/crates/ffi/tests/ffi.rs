use std::ffi::{CStr, CString};
use std::ptr;

use unfold_ci_ffi::*;

fn last_error() -> String {
    let p = uc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn identity_model(y: &[f64]) -> *mut UcModel {
    let n = y.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
    }
    let mut model = ptr::null_mut();
    let st = unsafe { uc_model_new(k.as_ptr(), n, n, y.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(st, UcStatus::Ok);
    model
}

#[test]
fn ls_interval_on_identity() {
    let model = identity_model(&[5.0]);
    let mut iv = UcInterval {
        lower: 0.0,
        upper: 0.0,
        slack_s2: 0.0,
        pathological: true,
    };
    let st = unsafe {
        uc_interval(
            model,
            ptr::null(),
            UcMethod::Ls,
            [1.0].as_ptr(),
            1,
            0.05,
            &mut iv,
        )
    };
    assert_eq!(st, UcStatus::Ok);
    assert!((iv.lower - 3.040036015459946).abs() < 1e-9);
    assert!((iv.upper - 6.959963984540054).abs() < 1e-9);
    assert!(iv.slack_s2.is_nan());
    assert!(!iv.pathological);
    unsafe { uc_model_free(model) };
}

#[test]
fn variances_whiten_the_data() {
    // y = 8 with variance 4 on K = [2]: LS interval for λ is 4 ± z.
    let (k, y, v) = ([2.0], [8.0], [4.0]);
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { uc_model_new(k.as_ptr(), 1, 1, y.as_ptr(), v.as_ptr(), &mut model) },
        UcStatus::Ok
    );
    let mut iv = UcInterval {
        lower: 0.0,
        upper: 0.0,
        slack_s2: 0.0,
        pathological: false,
    };
    assert_eq!(
        unsafe {
            uc_interval(
                model,
                ptr::null(),
                UcMethod::Ls,
                [1.0].as_ptr(),
                1,
                0.05,
                &mut iv,
            )
        },
        UcStatus::Ok
    );
    assert!((iv.lower - (4.0 - 1.959963984540054)).abs() < 1e-9);
    unsafe { uc_model_free(model) };
}

#[test]
fn osb_with_nonnegativity_clips_at_zero() {
    let model = identity_model(&[-3.0, 1.0]);
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { uc_constraints_setup(UcConstraintSetup::N, 2, &mut c) },
        UcStatus::Ok
    );
    let mut iv = UcInterval {
        lower: f64::NAN,
        upper: f64::NAN,
        slack_s2: f64::NAN,
        pathological: false,
    };
    let st = unsafe {
        uc_interval(
            model,
            c,
            UcMethod::Osb,
            [1.0, 0.0].as_ptr(),
            2,
            0.05,
            &mut iv,
        )
    };
    assert_eq!(st, UcStatus::Ok, "{}", last_error());
    assert!(iv.lower.abs() < 1e-6);
    assert!((iv.slack_s2 - 9.0).abs() < 1e-6);
    // ψ² = z² + 9 restricted to λ₁ ≥ 0 with λ₀ centred at -3.
    let psi2: f64 = 1.959963984540054f64.powi(2) + 9.0;
    assert!((iv.upper - (-3.0 + psi2.sqrt())).abs() < 1e-5);
    unsafe {
        uc_constraints_free(c);
        uc_model_free(model);
    }
}

#[test]
fn po_rule_round_trips_through_json() {
    let model = identity_model(&[2.0, 3.0]);
    let mut c = ptr::null_mut();
    let mut rule = ptr::null_mut();
    unsafe {
        assert_eq!(
            uc_constraints_setup(UcConstraintSetup::None, 2, &mut c),
            UcStatus::Ok
        );
        let st = uc_po_rule_new(
            model,
            c,
            [1.0, 1.0].as_ptr(),
            [1.0, 1.0].as_ptr(),
            2,
            0.05,
            &mut rule,
        );
        assert_eq!(st, UcStatus::Ok, "{}", last_error());
        let mut json = ptr::null_mut();
        assert_eq!(uc_po_rule_to_json(rule, &mut json), UcStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(uc_po_rule_from_json(json, &mut back), UcStatus::Ok);
        let y = [2.0, 3.0];
        let mut a = UcInterval {
            lower: 0.0,
            upper: 0.0,
            slack_s2: 0.0,
            pathological: false,
        };
        let mut b = a;
        assert_eq!(uc_po_rule_apply(rule, y.as_ptr(), 2, &mut a), UcStatus::Ok);
        assert_eq!(uc_po_rule_apply(back, y.as_ptr(), 2, &mut b), UcStatus::Ok);
        assert_eq!(
            (a.lower, a.upper, a.pathological),
            (b.lower, b.upper, b.pathological)
        );
        assert!(a.slack_s2.is_nan() && b.slack_s2.is_nan());
        // Unconstrained PO with invertible K is the LS interval.
        let half = 1.959963984540054 * 2f64.sqrt();
        assert!((a.lower - (5.0 - half)).abs() < 1e-6 && (a.upper - (5.0 + half)).abs() < 1e-6);
        uc_string_free(json);
        uc_po_rule_free(rule);
        uc_po_rule_free(back);
        uc_constraints_free(c);
        uc_model_free(model);
    }
}

#[test]
fn minimax_closed_form_for_identity() {
    let model = identity_model(&[0.0, 0.0, 0.0]);
    let mut c = ptr::null_mut();
    let (mut lo, mut hi) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            uc_constraints_setup(UcConstraintSetup::N, 3, &mut c),
            UcStatus::Ok
        );
        let st = uc_minimax_bounds(
            model,
            c,
            [3.0, 0.0, 4.0].as_ptr(),
            3,
            0.05,
            &mut lo,
            &mut hi,
        );
        assert_eq!(st, UcStatus::Ok, "{}", last_error());
        uc_constraints_free(c);
        uc_model_free(model);
    }
    assert!((lo - 2.0 * 1.6448536269514722 * 5.0).abs() < 1e-5);
    assert!((hi - 2.0 * 1.959963984540054 * 5.0).abs() < 1e-5);
}

#[test]
fn custom_constraints() {
    // λ ≤ 1 on a single bin.
    let model = identity_model(&[0.5]);
    let mut c = ptr::null_mut();
    let mut iv = UcInterval {
        lower: 0.0,
        upper: 0.0,
        slack_s2: 0.0,
        pathological: false,
    };
    unsafe {
        assert_eq!(
            uc_constraints_new([1.0].as_ptr(), 1, 1, [1.0].as_ptr(), &mut c),
            UcStatus::Ok
        );
        assert_eq!(
            uc_interval(
                model,
                c,
                UcMethod::OsbDual,
                [1.0].as_ptr(),
                1,
                0.05,
                &mut iv
            ),
            UcStatus::Ok
        );
        uc_constraints_free(c);
        uc_model_free(model);
    }
    assert!((iv.upper - 1.0).abs() < 1e-6);
    assert!((iv.lower - (0.5 - 1.959963984540054)).abs() < 1e-6);
}

#[test]
fn errors_set_status_and_message() {
    let mut model = ptr::null_mut();
    let st = unsafe { uc_model_new(ptr::null(), 1, 1, [1.0].as_ptr(), ptr::null(), &mut model) };
    assert_eq!(st, UcStatus::NullPointer);
    assert!(last_error().contains('k'));
    assert!(model.is_null());

    // Rank-deficient LS.
    let k = [1.0, 1.0];
    let st = unsafe { uc_model_new(k.as_ptr(), 1, 2, [1.0].as_ptr(), ptr::null(), &mut model) };
    assert_eq!(st, UcStatus::Ok);
    let mut iv = UcInterval {
        lower: 0.0,
        upper: 0.0,
        slack_s2: 0.0,
        pathological: false,
    };
    let st = unsafe {
        uc_interval(
            model,
            ptr::null(),
            UcMethod::Ls,
            [1.0, 0.0].as_ptr(),
            2,
            0.05,
            &mut iv,
        )
    };
    assert_eq!(st, UcStatus::Numerical);
    assert!(last_error().contains("rank"));

    let st = unsafe {
        uc_interval(
            model,
            ptr::null(),
            UcMethod::Ls,
            [1.0, 0.0].as_ptr(),
            2,
            1.5,
            &mut iv,
        )
    };
    assert_eq!(st, UcStatus::InvalidArgument);

    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { uc_constraints_setup(UcConstraintSetup::N, 3, &mut c) },
        UcStatus::Ok
    );
    let st = unsafe {
        uc_interval(
            model,
            c,
            UcMethod::Osb,
            [1.0, 0.0].as_ptr(),
            2,
            0.05,
            &mut iv,
        )
    };
    assert_eq!(st, UcStatus::Dimension);

    let bad = CString::new("{not json").unwrap();
    let mut rule = ptr::null_mut();
    assert_eq!(
        unsafe { uc_po_rule_from_json(bad.as_ptr(), &mut rule) },
        UcStatus::Config
    );
    unsafe {
        uc_constraints_free(c);
        uc_model_free(model);
        uc_model_free(ptr::null_mut());
    }
}

#[test]
fn version_is_available() {
    let v = unsafe { CStr::from_ptr(uc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/unfold_ci.h"))
            .unwrap();
    for name in [
        "uc_model_new",
        "uc_interval",
        "uc_po_rule_apply",
        "uc_last_error_message",
        "UC_STATUS_OK",
        "typedef struct UcModel UcModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
