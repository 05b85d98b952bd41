use std::ffi::{CStr, CString};
use std::ptr;

use voxrestore::generator::ModelConfig;
use voxrestore_ffi::*;

fn last_error() -> String {
    let p = vx_last_error();
    assert!(!p.is_null(), "failure without a message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_config() -> (tempfile::TempDir, CString) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.cfg");
    ModelConfig::toy().save(&path).unwrap();
    (dir, CString::new(path.to_str().unwrap()).unwrap())
}

fn tone(len: usize) -> Vec<f32> {
    (0..len).map(|i| 0.3 * (i as f32 * 0.05).sin()).collect()
}

#[test]
fn restore_round_trip_through_handles() {
    let (_dir, cfg) = toy_config();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(vx_model_new_random(cfg.as_ptr(), 3, &mut model), VxStatus::Ok);
        let sr = vx_model_sample_rate(model);
        assert_eq!(sr, ModelConfig::toy().sample_rate);
        let input = tone(4000);
        let mut out = ptr::null_mut();
        assert_eq!(vx_model_restore(model, input.as_ptr(), input.len(), sr, &mut out), VxStatus::Ok);
        assert_eq!(vx_audio_len(out), input.len());
        assert_eq!(vx_audio_sample_rate(out), sr);
        let data = std::slice::from_raw_parts(vx_audio_data(out), vx_audio_len(out));
        assert!(data.iter().all(|v| v.is_finite()));

        let mut again = ptr::null_mut();
        assert_eq!(vx_model_restore(model, input.as_ptr(), input.len(), sr, &mut again), VxStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(vx_audio_data(again), input.len()), data);

        let mut bad = ptr::null_mut();
        assert_eq!(vx_model_restore(model, input.as_ptr(), input.len(), sr + 1, &mut bad), VxStatus::SampleRate);
        assert!(bad.is_null());
        assert!(last_error().contains("sample rate"));

        vx_audio_free(out);
        vx_audio_free(again);
        vx_model_free(model);
    }
}

#[test]
fn null_and_missing_inputs_report_errors() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(vx_model_load(ptr::null(), ptr::null(), &mut model), VxStatus::NullPointer);
        assert!(last_error().contains("weights_path"));
        let missing = CString::new("/nonexistent/weights.bin").unwrap();
        assert_eq!(vx_model_load(missing.as_ptr(), ptr::null(), &mut model), VxStatus::Io);
        assert!(last_error().contains("/nonexistent/weights.bin"));
        assert!(model.is_null());
        assert_eq!(vx_model_restore(ptr::null(), ptr::null(), 0, 48000, ptr::null_mut()), VxStatus::NullPointer);
        // freeing null handles is a no-op
        vx_model_free(ptr::null_mut());
        vx_audio_free(ptr::null_mut());
        vx_string_free(ptr::null_mut());
        assert_eq!(vx_audio_len(ptr::null()), 0);
    }
    assert_eq!(unsafe { CStr::from_ptr(vx_status_name(5)) }.to_str().unwrap(), "sample rate mismatch");
    assert_eq!(unsafe { CStr::from_ptr(vx_status_name(99)) }.to_str().unwrap(), "unknown status");
}

#[test]
fn degrade_is_deterministic_and_traced() {
    let input = tone(16000);
    let run = || unsafe {
        let mut audio = ptr::null_mut();
        let mut trace = ptr::null_mut();
        let st = vx_degrade(input.as_ptr(), input.len(), 16000, ptr::null(), 42, &mut audio, &mut trace);
        assert_eq!(st, VxStatus::Ok, "{}", last_error());
        let samples = std::slice::from_raw_parts(vx_audio_data(audio), vx_audio_len(audio)).to_vec();
        let text = CStr::from_ptr(trace).to_str().unwrap().to_owned();
        vx_audio_free(audio);
        vx_string_free(trace);
        (samples, text)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a.len(), input.len());
    assert_eq!(a, b);
    assert_eq!(ta, tb);

    let off = CString::new("seed = 1\norder = clip\nclip.p = 0\n").unwrap();
    unsafe {
        let mut audio = ptr::null_mut();
        let st = vx_degrade(input.as_ptr(), input.len(), 16000, off.as_ptr(), 1, &mut audio, ptr::null_mut());
        assert_eq!(st, VxStatus::Ok, "{}", last_error());
        assert_eq!(std::slice::from_raw_parts(vx_audio_data(audio), input.len()), &input[..]);
        vx_audio_free(audio);
    }
}

#[test]
fn recon_losses_and_ranking() {
    let x = tone(20000);
    let mut l = VxReconLosses::default();
    unsafe {
        assert_eq!(vx_recon_losses(x.as_ptr(), x.len(), x.as_ptr(), x.len(), 48000, &mut l), VxStatus::Ok);
        assert_eq!(l, VxReconLosses::default());
        assert_eq!(
            vx_recon_losses(x.as_ptr(), x.len(), x.as_ptr(), x.len() - 1, 48000, &mut l),
            VxStatus::LengthMismatch
        );
    }

    let csv = CString::new("system_a,system_b,outcome,category\nA,B,a,\nA,B,a,\nA,B,a,\nA,B,b,\n").unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(vx_rank_csv(csv.as_ptr(), &mut json), VxStatus::Ok, "{}", last_error());
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        vx_string_free(json);
        let systems = report["categories"][0]["systems"].as_array().unwrap();
        let ratio = systems[0]["strength"].as_f64().unwrap() / systems[1]["strength"].as_f64().unwrap();
        assert_eq!(systems[0]["system"], "A");
        assert!((ratio - 3.0).abs() < 1e-6);
    }

    let split = CString::new("system_a,system_b,outcome,category\nA,B,a,\nB,A,a,\nC,D,a,\nD,C,a,\n").unwrap();
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(vx_rank_csv(split.as_ptr(), &mut json), VxStatus::Disconnected);
        assert!(json.is_null());
        assert!(last_error().contains("disconnected"));
    }
}
