use std::ffi::{CStr, CString};
use std::ptr;

use kolmo_ffi::*;

fn last_error() -> String {
    let p = kolmo_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn group_law_round_trip() {
    let p = [1.0, 2.0, 3.0, 4.0, 0.5];
    let mut inv = [0.0; 5];
    let mut out = [0.0; 5];
    unsafe {
        assert_eq!(kolmo_inverse(2, p.as_ptr(), inv.as_mut_ptr()), KolmoStatus::Ok);
        assert_eq!(
            kolmo_compose(2, p.as_ptr(), inv.as_ptr(), out.as_mut_ptr()),
            KolmoStatus::Ok
        );
    }
    assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    let q = [1.0, 0.0, 0.0];
    let o = [0.0, 0.0, 0.0];
    let mut d = 0.0;
    unsafe {
        assert_eq!(kolmo_quasi_distance(1, q.as_ptr(), o.as_ptr(), &mut d), KolmoStatus::Ok);
        assert_eq!(kolmo_dilate(1, 2.0, q.as_ptr(), out.as_mut_ptr()), KolmoStatus::Ok);
    }
    assert_eq!(d, 1.0);
    assert_eq!(out[0], 2.0);
}

#[test]
fn null_and_invalid_arguments_set_errors() {
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(
            kolmo_inverse(1, ptr::null(), out.as_mut_ptr()),
            KolmoStatus::NullPointer
        );
        assert!(last_error().contains("null"));
        let bad = [f64::NAN, 0.0, 0.0];
        assert_eq!(kolmo_inverse(1, bad.as_ptr(), out.as_mut_ptr()), KolmoStatus::Numerical);
        assert_eq!(
            kolmo_dilate(1, -1.0, [0.0; 3].as_ptr(), out.as_mut_ptr()),
            KolmoStatus::InvalidArgument
        );
        assert!(last_error().contains("dilation"));
    }
}

#[test]
fn field_handles_and_effective_matrix() {
    let json =
        CString::new(r#"{"m":1,"family":"laminate","axis":0,"diagonal":[{"mean":2,"amp":1}],"kappa":3}"#).unwrap();
    let mut f = ptr::null_mut();
    let mut a = [0.0];
    unsafe {
        assert_eq!(kolmo_field_from_json(json.as_ptr(), &mut f), KolmoStatus::Ok);
        assert_eq!(kolmo_effective_matrix(f, 256, a.as_mut_ptr()), KolmoStatus::Ok);
        kolmo_field_free(f);
    }
    assert!((a[0] - 3f64.sqrt()).abs() < 1e-3);
    let bad = CString::new(r#"{"m":1,"family":"constant","matrix":[[1]],"kappa":1,"extra":0}"#).unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(
            kolmo_field_from_json(bad.as_ptr(), &mut g),
            KolmoStatus::InvalidArgument
        );
    }
    assert!(g.is_null());
    assert!(last_error().contains("extra"));
}

#[test]
fn domain_handles() {
    let mut d = ptr::null_mut();
    let mut inside = -1;
    unsafe {
        assert_eq!(kolmo_domain_flat(2, &mut d), KolmoStatus::Ok);
        assert_eq!(kolmo_domain_dim(d), 2);
        assert_eq!(
            kolmo_domain_contains(d, [0.3, 0.1].as_ptr(), &mut inside),
            KolmoStatus::Ok
        );
        assert_eq!(inside, 1);
        assert_eq!(
            kolmo_domain_contains(d, [0.3, -0.1].as_ptr(), &mut inside),
            KolmoStatus::Ok
        );
        assert_eq!(inside, 0);
        kolmo_domain_free(d);
        kolmo_domain_free(ptr::null_mut());
        assert_eq!(kolmo_domain_dim(ptr::null()), 0);
    }
}

#[test]
fn solve_and_measure_handles() {
    let solve = CString::new(
        r#"{"domain":{"m":1,"psi":{"family":"flat"}},"field":{"m":1,"family":"constant","matrix":[[1]],"kappa":1},
            "solver":{"kind":"kolmogorov","box":{"x":[0,1],"y":[-1,1],"t":[0,0.5]},"hx":0.125,"hy":0.125},
            "data":{"family":"affine","coeffs":[1,0,0]}}"#,
    )
    .unwrap();
    let mut g = ptr::null_mut();
    let mut v = 0.0;
    let mut viol = 1.0;
    unsafe {
        assert_eq!(
            kolmo_solve_run(solve.as_ptr(), &mut g),
            KolmoStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(kolmo_grid_dims(g), 3);
        // Data x is itself a solution, so the grid reproduces it.
        assert_eq!(
            kolmo_grid_evaluate(g, [0.5, 0.25, 0.5].as_ptr(), &mut v),
            KolmoStatus::Ok
        );
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(kolmo_grid_max_principle_violation(g, &mut viol), KolmoStatus::Ok);
        assert!(viol <= 1e-12);
        assert_eq!(
            kolmo_grid_evaluate(g, [5.0, 0.0, 0.0].as_ptr(), &mut v),
            KolmoStatus::InvalidArgument
        );
        kolmo_grid_free(g);
    }
    let measure = CString::new(
        r#"{"domain":{"m":1,"psi":{"family":"flat"}},"field":{"m":1,"family":"constant","matrix":[[1]],"kappa":1},
            "pole":{"x":[1],"y":[0],"t":0},"kind":"E",
            "partition":{"partition":"bins","lo":[],"width":[],"count":[]},
            "sde":{"max_time":1000,"n_paths":200,"step":{"policy":"adaptive","dt_min":1e-6,"dt_max":10,"frac":0.1}},"seed":5}"#,
    )
    .unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        let status = kolmo_measure_run(measure.as_ptr(), &mut h);
        assert_eq!(status, KolmoStatus::Ok, "{}", last_error());
        assert_eq!(kolmo_histogram_len(h), 1);
        let (mut mass, mut se, mut cens) = (0.0, 0.0, 0.0);
        assert_eq!(kolmo_histogram_mass(h, 0, &mut mass, &mut se), KolmoStatus::Ok);
        assert_eq!(kolmo_histogram_censored(h, &mut cens), KolmoStatus::Ok);
        assert!((mass + cens - 1.0).abs() < 1e-12);
        let mut s = ptr::null_mut();
        assert_eq!(kolmo_histogram_to_json(h, &mut s), KolmoStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_owned();
        kolmo_string_free(s);
        assert!(text.contains("\"n_paths\":200"));
        assert_eq!(
            kolmo_histogram_mass(h, 3, &mut mass, ptr::null_mut()),
            KolmoStatus::InvalidArgument
        );
        kolmo_histogram_free(h);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(kolmo_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
