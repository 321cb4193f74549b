//! Exercises the C surface the way a foreign caller would: raw pointers,
//! status codes, and the thread-local error message.

use std::ffi::{CStr, CString};
use std::ptr;

use agcm_ffi::*;

fn message() -> String {
    unsafe { CStr::from_ptr(agcm_last_error_message()) }.to_string_lossy().into_owned()
}

fn c_path(path: &std::path::Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn small_spec() -> AgcmDatasetSpec {
    AgcmDatasetSpec {
        dim: 8,
        n_base: 2,
        n_novel: 1,
        samples_per_class: 20,
        eval_per_class: 10,
        intra_sigma: 0.2,
        min_angle_deg: 30.0,
        background_rate: 0.1,
        confusable: ptr::null(),
        confusable_len: 0,
    }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(agcm_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn generate_train_adapt_predict_and_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (mut train, mut pool, mut eval) =
        (ptr::null_mut::<AgcmDataset>(), ptr::null_mut::<AgcmDataset>(), ptr::null_mut::<AgcmDataset>());
    unsafe {
        let st = agcm_dataset_generate(&spec, 42, &mut train, &mut pool, &mut eval);
        assert_eq!(st, AgcmStatus::Ok, "{}", message());

        let (mut rows, mut dim, mut classes) = (0usize, 0usize, 0usize);
        assert_eq!(agcm_dataset_shape(eval, &mut rows, &mut dim, &mut classes), AgcmStatus::Ok);
        assert_eq!(dim, 8);
        assert_eq!(classes, 3);
        assert!(rows > 0);

        let mut base = ptr::null_mut::<AgcmHead>();
        let mut base_loss = f64::NAN;
        let st = agcm_base_train(train, 1, 30, 16, 0.05, &mut base_loss, &mut base);
        assert_eq!(st, AgcmStatus::Ok, "{}", message());
        assert!(base_loss.is_finite());

        let mut shots = ptr::null_mut::<AgcmDataset>();
        assert_eq!(agcm_kshot_sample(pool, 4, 7, &mut shots), AgcmStatus::Ok, "{}", message());

        let mut adapted = ptr::null_mut::<AgcmHead>();
        let mut adapt_loss = f64::NAN;
        let st = agcm_few_shot_adapt(
            base, shots, 2, 40, 8, 0.05, 0.8, 0.2, AGCM_METRIC_COSINE, &mut adapt_loss, &mut adapted,
        );
        assert_eq!(st, AgcmStatus::Ok, "{}", message());
        assert!(adapt_loss.is_finite());

        let (mut d_in, mut d_feat, mut n_classes) = (0usize, 0usize, 0usize);
        assert_eq!(agcm_head_shape(adapted, &mut d_in, &mut d_feat, &mut n_classes), AgcmStatus::Ok);
        assert_eq!(d_in, 8);
        assert_eq!(n_classes, 4); // 2 base + 1 novel + background

        let mut x = vec![0.0f64; rows * dim];
        let mut labels = vec![0i64; rows];
        assert_eq!(agcm_dataset_features(eval, x.as_mut_ptr()), AgcmStatus::Ok);
        assert_eq!(agcm_dataset_labels(eval, labels.as_mut_ptr()), AgcmStatus::Ok);
        assert!(labels.iter().any(|&l| l >= 0));

        let mut classes_out = vec![0u32; rows];
        let mut cosines = vec![0.0f64; rows];
        let st = agcm_head_predict(adapted, x.as_ptr(), rows, classes_out.as_mut_ptr(), cosines.as_mut_ptr());
        assert_eq!(st, AgcmStatus::Ok, "{}", message());
        let hits = labels
            .iter()
            .zip(&classes_out)
            .filter(|(&l, &p)| l >= 0 && p as i64 == l)
            .count();
        let foreground = labels.iter().filter(|&&l| l >= 0).count();
        assert!(
            hits * 2 > foreground,
            "adapted head below chance through the C surface: {hits}/{foreground}"
        );

        // checkpoint across the boundary and verify identical predictions
        let path = c_path(&tmp.path().join("head.bin"));
        assert_eq!(agcm_head_save(adapted, path.as_ptr()), AgcmStatus::Ok, "{}", message());
        let mut reloaded = ptr::null_mut::<AgcmHead>();
        assert_eq!(agcm_head_load(path.as_ptr(), &mut reloaded), AgcmStatus::Ok, "{}", message());
        let mut again = vec![0u32; rows];
        assert_eq!(
            agcm_head_predict(reloaded, x.as_ptr(), rows, again.as_mut_ptr(), ptr::null_mut()),
            AgcmStatus::Ok
        );
        assert_eq!(classes_out, again, "reloaded head predicts differently");

        agcm_head_free(base);
        agcm_head_free(adapted);
        agcm_head_free(reloaded);
        agcm_dataset_free(train);
        agcm_dataset_free(pool);
        agcm_dataset_free(eval);
        agcm_dataset_free(shots);
    }
}

#[test]
fn dataset_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let mut eval = ptr::null_mut::<AgcmDataset>();
    unsafe {
        assert_eq!(
            agcm_dataset_generate(&spec, 9, ptr::null_mut(), ptr::null_mut(), &mut eval),
            AgcmStatus::Ok
        );
        let path = c_path(&tmp.path().join("eval.csv"));
        assert_eq!(agcm_dataset_save_csv(eval, path.as_ptr()), AgcmStatus::Ok, "{}", message());

        let mut back = ptr::null_mut::<AgcmDataset>();
        assert_eq!(
            agcm_dataset_load_csv(path.as_ptr(), AGCM_SPLIT_EVAL, &mut back),
            AgcmStatus::Ok,
            "{}",
            message()
        );
        let (mut rows_a, mut rows_b) = (0usize, 0usize);
        assert_eq!(agcm_dataset_shape(eval, &mut rows_a, ptr::null_mut(), ptr::null_mut()), AgcmStatus::Ok);
        assert_eq!(agcm_dataset_shape(back, &mut rows_b, ptr::null_mut(), ptr::null_mut()), AgcmStatus::Ok);
        assert_eq!(rows_a, rows_b);

        let mut xa = vec![0.0f64; rows_a * 8];
        let mut xb = vec![0.0f64; rows_a * 8];
        assert_eq!(agcm_dataset_features(eval, xa.as_mut_ptr()), AgcmStatus::Ok);
        assert_eq!(agcm_dataset_features(back, xb.as_mut_ptr()), AgcmStatus::Ok);
        assert!(
            xa.iter().zip(&xb).all(|(a, b)| a.to_bits() == b.to_bits()),
            "CSV round-trip changed the features"
        );
        agcm_dataset_free(eval);
        agcm_dataset_free(back);
    }
}

#[test]
fn numeric_kernels_match_the_library() {
    // 3 × 2 embeddings with distinct directions
    let e = [1.0, 0.1, -0.3, 0.9, 0.8, -0.5];
    unsafe {
        let mut weights = [0.0f64; 9];
        assert_eq!(
            agcm_attention_weights(e.as_ptr(), 3, 2, AGCM_METRIC_COSINE, weights.as_mut_ptr()),
            AgcmStatus::Ok
        );
        for i in 0..3 {
            assert_eq!(weights[i * 3 + i], 0.0, "diagonal must be zero");
            let sum: f64 = weights[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }

        // α = 1 passes the input through bit for bit
        let mut fused = [0.0f64; 6];
        assert_eq!(
            agcm_fuse(e.as_ptr(), 3, 2, AGCM_METRIC_COSINE, 1.0, fused.as_mut_ptr()),
            AgcmStatus::Ok
        );
        assert!(e.iter().zip(&fused).all(|(a, b)| a.to_bits() == b.to_bits()));

        // margin loss agrees with the library computed directly
        let w = [0.9, 0.2, -0.4, 0.8, 0.1, -0.9];
        let labels = [0u32, 1, 2];
        let mut loss = f64::NAN;
        assert_eq!(
            agcm_margin_loss(
                e.as_ptr(), 3, 2, w.as_ptr(), 3, labels.as_ptr(), 0.2, 20.0, 2, &mut loss,
            ),
            AgcmStatus::Ok,
            "{}",
            message()
        );
        let z = ndarray::arr2(&[[1.0, 0.1], [-0.3, 0.9], [0.8, -0.5]]);
        let wm = ndarray::arr2(&[[0.9, 0.2], [-0.4, 0.8], [0.1, -0.9]]);
        let cfg = agcm::margin_loss::MarginLossConfig { margin: 0.2, beta: 20.0, background_index: 2 };
        let table = agcm::margin_loss::class_cosines(z.view(), wm.view()).unwrap();
        let direct = agcm::margin_loss::loss_forward(&table, &[0, 1, 2], &cfg).unwrap();
        assert_eq!(loss.to_bits(), direct.to_bits(), "FFI loss diverges from the library");
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        let mut out = [0.0f64; 4];

        let st = agcm_fuse(ptr::null(), 2, 2, AGCM_METRIC_COSINE, 0.8, out.as_mut_ptr());
        assert_eq!(st, AgcmStatus::NullArgument);
        assert!(message().contains("embeddings"), "got: {}", message());

        let e = [1.0, 0.0, 0.0, 1.0];
        let st = agcm_fuse(e.as_ptr(), 2, 2, AGCM_METRIC_COSINE, 0.2, out.as_mut_ptr());
        assert_eq!(st, AgcmStatus::InvalidArgument);
        assert!(message().contains("alpha"), "got: {}", message());

        let st = agcm_fuse(e.as_ptr(), 2, 2, 99, 0.8, out.as_mut_ptr());
        assert_eq!(st, AgcmStatus::InvalidArgument);
        assert!(message().contains("metric"), "got: {}", message());

        let st = agcm_fuse(e.as_ptr(), 0, 2, AGCM_METRIC_COSINE, 0.8, out.as_mut_ptr());
        assert_eq!(st, AgcmStatus::InvalidArgument);

        // degenerate norm is a numeric failure, not a config one
        let z = [0.0, 0.0, 1.0, 0.0];
        let st = agcm_attention_weights(z.as_ptr(), 2, 2, AGCM_METRIC_COSINE, out.as_mut_ptr());
        assert_eq!(st, AgcmStatus::NumericFailure);

        let missing = CString::new("/definitely/not/here.bin").unwrap();
        let mut head = ptr::null_mut::<AgcmHead>();
        assert_eq!(agcm_head_load(missing.as_ptr(), &mut head), AgcmStatus::IoFailure);
        assert!(message().contains("here.bin"), "got: {}", message());

        let mut ds = ptr::null_mut::<AgcmDataset>();
        assert_eq!(
            agcm_dataset_load_csv(missing.as_ptr(), 9, &mut ds),
            AgcmStatus::InvalidArgument,
            "split selector must be validated before I/O"
        );

        // labels outside the class range
        let labels = [7u32, 0];
        let w = [1.0, 0.0, 0.0, 1.0];
        let mut loss = f64::NAN;
        let st = agcm_margin_loss(
            e.as_ptr(), 2, 2, w.as_ptr(), 2, labels.as_ptr(), 0.0, 20.0, 1, &mut loss,
        );
        assert_eq!(st, AgcmStatus::InvalidArgument);

        // a confusable pointer that contradicts its length
        let mut spec = small_spec();
        spec.confusable_len = 3;
        let st = agcm_dataset_generate(&spec, 1, &mut ds, ptr::null_mut(), ptr::null_mut());
        assert_eq!(st, AgcmStatus::NullArgument);
        assert!(message().contains("confusable"), "got: {}", message());
    }
}

#[test]
fn free_tolerates_null() {
    unsafe {
        agcm_dataset_free(ptr::null_mut());
        agcm_head_free(ptr::null_mut());
    }
}
