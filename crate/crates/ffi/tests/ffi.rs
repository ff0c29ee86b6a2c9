use std::ffi::CStr;
use std::ptr;

use cvxnn_ffi::*;

unsafe fn last_error() -> String {
    let p = cvxnn_last_error();
    if p.is_null() {
        String::new()
    } else {
        CStr::from_ptr(p).to_string_lossy().into_owned()
    }
}

unsafe fn toy() -> *mut CvxnnDataset {
    let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let y = [1.0, -1.0, 1.0, 1.0, -1.0];
    let mut ds = ptr::null_mut();
    assert_eq!(cvxnn_dataset_create(x.as_ptr(), 5, 1, y.as_ptr(), 1, 1, &mut ds), CvxnnStatus::Ok);
    ds
}

#[test]
fn example_one_through_the_c_api() {
    unsafe {
        let x = [2.0, 2.0, 3.0, 3.0, 1.0, 0.0];
        let mut ds = ptr::null_mut();
        assert_eq!(cvxnn_dataset_create(x.as_ptr(), 3, 2, ptr::null(), 0, 0, &mut ds), CvxnnStatus::Ok);
        let mut pats = ptr::null_mut();
        assert_eq!(cvxnn_enumerate(ds, &mut pats), CvxnnStatus::Ok);
        let mut count = 0;
        assert_eq!(cvxnn_patterns_count(pats, &mut count), CvxnnStatus::Ok);
        assert_eq!(count, 4);
        let mut seen = Vec::new();
        for i in 0..count {
            let mut bits = [9u8; 3];
            assert_eq!(cvxnn_patterns_get(pats, i, bits.as_mut_ptr(), 3), CvxnnStatus::Ok);
            seen.push(bits.iter().map(|b| char::from(b'0' + b)).collect::<String>());
        }
        assert_eq!(seen, ["000", "001", "110", "111"]);
        let mut small = [0u8; 2];
        assert_eq!(cvxnn_patterns_get(pats, 0, small.as_mut_ptr(), 2), CvxnnStatus::BufferTooSmall);
        assert_eq!(cvxnn_patterns_get(pats, 4, small.as_mut_ptr(), 3), CvxnnStatus::InvalidArgument);
        cvxnn_patterns_free(pats);
        cvxnn_dataset_free(ds);
    }
}

#[test]
fn count_bound_as_decimal_text() {
    unsafe {
        let mut needed = 0;
        assert_eq!(cvxnn_count_bound(3, 2, ptr::null_mut(), 0, &mut needed), CvxnnStatus::NullPointer);
        assert_eq!(needed, 2);
        let mut buf = [0 as std::ffi::c_char; 64];
        assert_eq!(cvxnn_count_bound(200, 40, buf.as_mut_ptr(), buf.len(), &mut needed), CvxnnStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(text, cvxnn::arrangements::count_bound(200, 40).to_string());
        assert_eq!(cvxnn_count_bound(200, 40, buf.as_mut_ptr(), 3, ptr::null_mut()), CvxnnStatus::BufferTooSmall);
    }
}

#[test]
fn training_and_prediction_match_the_library() {
    unsafe {
        let ds = toy();
        let mut pats = ptr::null_mut();
        assert_eq!(cvxnn_enumerate(ds, &mut pats), CvxnnStatus::Ok);
        let opts = cvxnn_train_options_default();
        let mut model = ptr::null_mut();
        assert_eq!(cvxnn_train(ds, pats, &opts, &mut model), CvxnnStatus::Ok, "{}", last_error());
        let mut obj = 0.0;
        assert_eq!(cvxnn_model_objective(model, &mut obj), CvxnnStatus::Ok);

        let x = nalgebra::DMatrix::from_column_slice(5, 1, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let data = cvxnn::DataMatrix::with_bias(x).unwrap();
        let labels = cvxnn::LabelData::scalar(&[1.0, -1.0, 1.0, 1.0, -1.0]).unwrap();
        let set = cvxnn::arrangements::enumerate_exact(&data).unwrap();
        let prog = cvxnn::program::ConvexProgram::builder(data.clone(), labels.clone(), set).beta(1e-3).build().unwrap();
        let (w, _) = cvxnn::solvers::solve_conic(&prog, &cvxnn::solvers::SolverConfig::exact()).unwrap();
        assert!((obj - prog.objective(&w)).abs() <= 1e-12 * (1.0 + obj));

        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let mut pred = [0.0; 5];
        assert_eq!(cvxnn_model_predict(model, xs.as_ptr(), 5, 1, pred.as_mut_ptr(), 5), CvxnnStatus::Ok);
        let residual: f64 = pred.iter().zip(labels.values().iter()).map(|(p, y)| (p - y).powi(2)).sum();
        let mut neurons = 0;
        cvxnn_model_neurons(model, &mut neurons);
        assert!(neurons > 0);
        assert!(0.5 * residual <= obj);
        assert_eq!(cvxnn_model_predict(model, xs.as_ptr(), 5, 1, pred.as_mut_ptr(), 4), CvxnnStatus::BufferTooSmall);
        cvxnn_model_free(model);
        cvxnn_patterns_free(pats);
        cvxnn_dataset_free(ds);
    }
}

#[test]
fn errors_set_a_status_and_a_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(cvxnn_dataset_create(ptr::null(), 3, 2, ptr::null(), 0, 0, &mut ds), CvxnnStatus::NullPointer);
        assert!(ds.is_null());
        assert!(last_error().contains("x is null"));

        let nan = [f64::NAN, 1.0];
        let xs = [1.0, 2.0];
        assert_eq!(cvxnn_dataset_create(xs.as_ptr(), 2, 1, nan.as_ptr(), 1, 0, &mut ds), CvxnnStatus::DataError);

        // Rank 9 exceeds the enumeration guardrail.
        let wide: Vec<f64> = (0..90).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        assert_eq!(cvxnn_dataset_create(wide.as_ptr(), 10, 9, ptr::null(), 0, 0, &mut ds), CvxnnStatus::Ok);
        let mut pats = ptr::null_mut();
        assert_eq!(cvxnn_enumerate(ds, &mut pats), CvxnnStatus::RankTooLarge);
        assert!(pats.is_null());
        assert!(last_error().contains("rank"));

        // Training without labels is a data error.
        assert_eq!(cvxnn_sample(ds, 50, 1, &mut pats), CvxnnStatus::Ok);
        assert!(last_error().is_empty());
        let mut model = ptr::null_mut();
        assert_eq!(cvxnn_train(ds, pats, ptr::null(), &mut model), CvxnnStatus::DataError);
        assert!(model.is_null());
        cvxnn_patterns_free(pats);
        cvxnn_dataset_free(ds);

        // Freeing null handles is a no-op.
        cvxnn_dataset_free(ptr::null_mut());
        cvxnn_patterns_free(ptr::null_mut());
        cvxnn_model_free(ptr::null_mut());
    }
}

#[test]
fn early_stop_still_returns_a_model() {
    unsafe {
        let ds = toy();
        let mut pats = ptr::null_mut();
        assert_eq!(cvxnn_enumerate(ds, &mut pats), CvxnnStatus::Ok);
        let mut opts = cvxnn_train_options_default();
        opts.solver = CvxnnSolver::Admm;
        opts.max_iters = 2;
        let mut model = ptr::null_mut();
        assert_eq!(cvxnn_train(ds, pats, &opts, &mut model), CvxnnStatus::NotConverged);
        assert!(!model.is_null());
        cvxnn_model_free(model);
        cvxnn_patterns_free(pats);
        cvxnn_dataset_free(ds);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cvxnn.h")).unwrap();
    for name in [
        "cvxnn_dataset_create",
        "cvxnn_enumerate",
        "cvxnn_sample",
        "cvxnn_count_bound",
        "cvxnn_train",
        "cvxnn_model_predict",
        "cvxnn_last_error",
        "CVXNN_STATUS_NOT_CONVERGED",
        "typedef struct CvxnnModel CvxnnModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
