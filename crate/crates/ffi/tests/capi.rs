//! Exercises the C ABI end to end through the exported symbols: handle
//! lifecycles, likelihood agreement with the core crate, prediction calls,
//! and the error-reporting contract.

use std::ffi::{CStr, CString};

use icl_lab_ffi::*;

unsafe fn generate_default() -> *mut IclHmm {
    let mut hmm: *mut IclHmm = std::ptr::null_mut();
    let status = icl_hmm_generate(3, 3, 12, 0.3, 0.2, 0.95, 2, 0.7, 1, 5, &mut hmm);
    assert_eq!(status, IclStatus::Ok);
    assert!(!hmm.is_null());
    hmm
}

#[test]
fn version_is_a_c_string() {
    unsafe {
        let v = CStr::from_ptr(icl_version());
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn generate_inspect_free() {
    unsafe {
        let hmm = generate_default();
        assert_eq!(icl_hmm_num_states(hmm), 9);
        assert_eq!(icl_hmm_num_obs(hmm), 12);
        assert_eq!(icl_hmm_num_tasks(hmm), 3);
        assert_eq!(icl_hmm_delimiter(hmm), 0);
        let mut labels = [0u32; 8];
        let mut written = 0usize;
        assert_eq!(icl_hmm_label_set(hmm, labels.as_mut_ptr(), 8, &mut written), IclStatus::Ok);
        assert_eq!(written, 2);
        assert_eq!(&labels[..2], &[4, 5]);
        icl_hmm_free(hmm);
    }
}

#[test]
fn save_load_round_trip_matches_core_likelihoods() {
    unsafe {
        let hmm = generate_default();
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.txt").to_str().unwrap()).unwrap();
        assert_eq!(icl_hmm_save(hmm, path.as_ptr()), IclStatus::Ok);

        let mut loaded: *mut IclHmm = std::ptr::null_mut();
        assert_eq!(icl_hmm_load(path.as_ptr(), &mut loaded), IclStatus::Ok);

        // likelihood computed through the ABI equals the core crate's value
        let core_hmm = icl_lab::textfmt::load_hmm(&dir.path().join("m.txt")).unwrap();
        let tokens: Vec<u32> = vec![1, 4, 0, 2, 7];
        let mut via_ffi = 0.0f64;
        assert_eq!(
            icl_forward_likelihood(loaded, tokens.as_ptr(), tokens.len(), &mut via_ffi),
            IclStatus::Ok
        );
        let seq: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let direct =
            icl_lab::hmm::forward_likelihood(&core_hmm, core_hmm.pretrain_init(), &seq).unwrap();
        assert_eq!(via_ffi, direct);

        let mut op = 0.0f64;
        assert_eq!(
            icl_operator_likelihood(loaded, tokens.as_ptr(), tokens.len(), &mut op),
            IclStatus::Ok
        );
        assert!((op - direct).abs() <= 1e-12 * direct.max(1e-30));

        let mut logp = 0.0f64;
        assert_eq!(icl_log_likelihood(loaded, tokens.as_ptr(), tokens.len(), &mut logp), IclStatus::Ok);
        assert!((logp - direct.ln()).abs() < 1e-9);

        icl_hmm_free(loaded);
        icl_hmm_free(hmm);
    }
}

#[test]
fn text_serialization_through_abi() {
    unsafe {
        let hmm = generate_default();
        let mut text: *mut std::ffi::c_char = std::ptr::null_mut();
        assert_eq!(icl_hmm_to_text(hmm, &mut text), IclStatus::Ok);
        let as_str = CStr::from_ptr(text).to_str().unwrap().to_string();
        assert!(as_str.starts_with("icl-lab hmm v1"));

        let ctext = CString::new(as_str.clone()).unwrap();
        let mut parsed: *mut IclHmm = std::ptr::null_mut();
        assert_eq!(icl_hmm_parse(ctext.as_ptr(), &mut parsed), IclStatus::Ok);
        assert_eq!(icl_hmm_num_states(parsed), 9);
        icl_string_free(text);
        icl_hmm_free(parsed);
        icl_hmm_free(hmm);
    }
}

#[test]
fn prompt_and_predictions() {
    unsafe {
        let hmm = generate_default();
        let mut prompt: *mut IclPrompt = std::ptr::null_mut();
        assert_eq!(icl_build_prompt(hmm, 0, 8, 6, 77, &mut prompt), IclStatus::Ok);

        let count = icl_prompt_token_count(prompt);
        // 8 demos of (6 tokens + label + delimiter) plus the 6-token test input
        assert_eq!(count, 8 * 8 + 6);
        let mut tokens = vec![0u32; count];
        let mut written = 0usize;
        assert_eq!(
            icl_prompt_tokens(prompt, tokens.as_mut_ptr(), count, &mut written),
            IclStatus::Ok
        );
        assert_eq!(written, count);

        let mut label = 0u32;
        let mut scores = [0.0f64; 2];
        assert_eq!(
            icl_bayes_predict(hmm, prompt, &mut label, scores.as_mut_ptr(), 2),
            IclStatus::Ok
        );
        assert!(label == 4 || label == 5);
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        let mut klabel = 0u32;
        let mut kscores = [0.0f64; 2];
        assert_eq!(
            icl_kernel_predict(hmm, prompt, 3e-2, 5_000_000, &mut klabel, kscores.as_mut_ptr(), 2),
            IclStatus::Ok
        );
        assert!(klabel == 4 || klabel == 5);

        let mut sim = -1.0f64;
        assert_eq!(
            icl_prediction_similarity(hmm, tokens.as_ptr(), 3, tokens.as_ptr(), 3, &mut sim),
            IclStatus::Ok
        );
        assert!((1.0 / 12.0..=1.0).contains(&sim), "self-similarity in [1/m, 1], got {sim}");

        icl_prompt_free(prompt);
        icl_hmm_free(hmm);
    }
}

#[test]
fn error_paths_set_codes_and_messages() {
    unsafe {
        // null output pointer
        assert_eq!(
            icl_hmm_generate(3, 3, 12, 0.3, 0.2, 0.95, 2, 0.7, 1, 5, std::ptr::null_mut()),
            IclStatus::NullPointer
        );

        // infeasible spec surfaces as InvalidArgument with a message
        let mut hmm: *mut IclHmm = std::ptr::null_mut();
        let status = icl_hmm_generate(5, 3, 4, 0.3, 0.2, 0.95, 2, 0.7, 1, 5, &mut hmm);
        assert_eq!(status, IclStatus::InvalidArgument);
        let msg = CStr::from_ptr(icl_last_error_message()).to_str().unwrap();
        assert!(msg.contains("alphabet budget"), "{msg}");

        // io failure
        let bad = CString::new("/nonexistent/dir/model.txt").unwrap();
        let mut out: *mut IclHmm = std::ptr::null_mut();
        assert_eq!(icl_hmm_load(bad.as_ptr(), &mut out), IclStatus::Io);

        // buffer too small
        let hmm = generate_default();
        let mut labels = [0u32; 1];
        let mut written = 0usize;
        assert_eq!(
            icl_hmm_label_set(hmm, labels.as_mut_ptr(), 1, &mut written),
            IclStatus::BufferTooSmall
        );
        assert_eq!(written, 2, "required size is still reported");
        icl_hmm_free(hmm);
    }
}

#[test]
fn generated_header_exists_and_exports_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/icl_lab.h");
    let text = std::fs::read_to_string(&header)
        .unwrap_or_else(|e| panic!("cbindgen header missing at {}: {e}", header.display()));
    for symbol in [
        "icl_version",
        "icl_hmm_generate",
        "icl_hmm_load",
        "icl_forward_likelihood",
        "icl_build_prompt",
        "icl_bayes_predict",
        "icl_kernel_predict",
        "icl_last_error_message",
        "IclStatus",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
