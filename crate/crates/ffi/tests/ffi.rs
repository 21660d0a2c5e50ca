use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use dwnet::datagen::{gen_dataset, write_dataset, GeneratorConfig};
use dwnet::model::{ModelConfig, ModelParams};
use dwnet::training::{predict, save_model, Normalizer, TrainedModel};
use dwnet_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    model: PathBuf,
    data: PathBuf,
    trained: TrainedModel,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let samples = gen_dataset(&GeneratorConfig { node_count: 5, seed: 4, ..Default::default() }, 3).unwrap();
    let config = ModelConfig { state_dim: 6, rounds: 2, readout_hidden: 12, ..ModelConfig::default() };
    let trained = TrainedModel {
        params: ModelParams::init(&config, 5).unwrap(),
        normalizer: Normalizer::fit(&samples, config.target).unwrap(),
        config,
    };
    let model = dir.path().join("model.json");
    let data = dir.path().join("data.jsonl");
    save_model(&model, &trained).unwrap();
    write_dataset(&samples, &data).unwrap();
    Fixture { _dir: dir, model, data, trained }
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dwnet_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn load_read_and_predict_match_the_library() {
    let fx = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dwnet_model_load(c_path(&fx.model).as_ptr(), &mut model), DwnetStatus::Ok);
        assert_eq!(dwnet_model_target(model), 0);
        let mut data = ptr::null_mut();
        assert_eq!(dwnet_dataset_read(c_path(&fx.data).as_ptr(), &mut data), DwnetStatus::Ok);
        assert_eq!(dwnet_dataset_len(data), 3);

        let samples = dwnet::datagen::read_dataset(&fx.data).unwrap();
        let expected = predict(&fx.trained, &samples).unwrap();
        for (i, exp) in expected.iter().enumerate() {
            let mut n = 0;
            assert_eq!(dwnet_dataset_path_count(data, i, &mut n), DwnetStatus::Ok);
            let mut buf = vec![0.0; n];
            let mut written = 0;
            let st = dwnet_predict_sample(model, data, i, buf.as_mut_ptr(), buf.len(), &mut written);
            assert_eq!(st, DwnetStatus::Ok);
            assert_eq!(written, n);
            for (a, b) in buf.iter().zip(exp) {
                assert!((a - b).abs() <= 1e-9 * b.abs());
            }
        }
        dwnet_dataset_free(data);
        dwnet_model_free(model);
    }
}

#[test]
fn raw_arrays_match_dataset_prediction() {
    let fx = fixture();
    let samples = dwnet::datagen::read_dataset(&fx.data).unwrap();
    let s = &samples[0];
    let links = s.topology.links();
    let src: Vec<usize> = links.iter().map(|l| l.src).collect();
    let dst: Vec<usize> = links.iter().map(|l| l.dst).collect();
    let cap: Vec<f64> = links.iter().map(|l| l.capacity).collect();
    let mut offsets = vec![0];
    let mut flat = Vec::new();
    for p in s.routing.paths() {
        flat.extend_from_slice(&p.link_seq);
        offsets.push(flat.len());
    }
    let expected = predict(&fx.trained, std::slice::from_ref(s)).unwrap().remove(0);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dwnet_model_load(c_path(&fx.model).as_ptr(), &mut model), DwnetStatus::Ok);
        let mut out = vec![0.0; s.routing.n_paths()];
        let st = dwnet_predict_raw(
            model,
            s.topology.node_count(),
            links.len(),
            src.as_ptr(),
            dst.as_ptr(),
            cap.as_ptr(),
            s.routing.n_paths(),
            offsets.as_ptr(),
            flat.as_ptr(),
            s.traffic.demand().as_ptr(),
            out.as_mut_ptr(),
        );
        assert_eq!(st, DwnetStatus::Ok, "{}", last_error());
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
        // A path over an unknown link is rejected.
        let bad_flat: Vec<usize> = flat.iter().map(|_| 999).collect();
        let st = dwnet_predict_raw(
            model,
            s.topology.node_count(),
            links.len(),
            src.as_ptr(),
            dst.as_ptr(),
            cap.as_ptr(),
            s.routing.n_paths(),
            offsets.as_ptr(),
            bad_flat.as_ptr(),
            s.traffic.demand().as_ptr(),
            out.as_mut_ptr(),
        );
        assert_eq!(st, DwnetStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        dwnet_model_free(model);
    }
}

#[test]
fn errors_are_reported() {
    let fx = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(dwnet_model_load(missing.as_ptr(), &mut model), DwnetStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("/nonexistent/model.json"));
        assert_eq!(dwnet_model_load(ptr::null(), &mut model), DwnetStatus::NullPointer);
        assert_eq!(dwnet_model_target(ptr::null()), -1);
        assert_eq!(dwnet_dataset_len(ptr::null()), 0);
        dwnet_model_free(ptr::null_mut());
        dwnet_dataset_free(ptr::null_mut());

        let mut data = ptr::null_mut();
        assert_eq!(dwnet_dataset_read(c_path(&fx.data).as_ptr(), &mut data), DwnetStatus::Ok);
        assert_eq!(dwnet_model_load(c_path(&fx.model).as_ptr(), &mut model), DwnetStatus::Ok);
        assert!(last_error().is_empty());
        let mut written = 0;
        let mut one = [0.0];
        let st = dwnet_predict_sample(model, data, 0, one.as_mut_ptr(), 1, &mut written);
        assert_eq!(st, DwnetStatus::BufferTooSmall);
        assert!(written > 1);
        let st = dwnet_predict_sample(model, data, 99, one.as_mut_ptr(), 1, &mut written);
        assert_eq!(st, DwnetStatus::InvalidArgument);
        dwnet_dataset_free(data);
        dwnet_model_free(model);
    }
    let version = unsafe { CStr::from_ptr(dwnet_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

/// Directory holding the static library cargo built next to this test.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.parent()?.join("libdwnet_ffi.a"), deps.join("libdwnet_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
        .or_else(|| {
            std::fs::read_dir(deps).ok()?.filter_map(Result::ok).map(|e| e.path()).find(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("libdwnet_ffi") && name.ends_with(".a")
            })
        })
}

#[test]
fn c_program_links_against_the_header_and_static_library() {
    let Some(lib) = static_lib() else {
        panic!("libdwnet_ffi.a not found next to {:?}", std::env::current_exe());
    };
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("smoke.c");
    std::fs::write(
        &source,
        r#"
#include <stdio.h>
#include "dwnet.h"
int main(int argc, char **argv) {
    DwnetModel *model = NULL;
    DwnetDataset *data = NULL;
    if (dwnet_model_load(argv[1], &model) != DWNET_STATUS_OK) { fprintf(stderr, "%s\n", dwnet_last_error()); return 1; }
    if (dwnet_dataset_read(argv[2], &data) != DWNET_STATUS_OK) { fprintf(stderr, "%s\n", dwnet_last_error()); return 1; }
    double out[512];
    size_t written = 0;
    if (dwnet_predict_sample(model, data, 0, out, 512, &written) != DWNET_STATUS_OK) return 1;
    printf("%zu %.17g\n", written, out[0]);
    dwnet_dataset_free(data);
    dwnet_model_free(model);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&source)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let output = Command::new(&exe).arg(&fx.model).arg(&fx.data).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8(output.stdout).unwrap();
    let mut parts = text.split_whitespace();
    let n: usize = parts.next().unwrap().parse().unwrap();
    let first: f64 = parts.next().unwrap().parse().unwrap();
    let samples = dwnet::datagen::read_dataset(&fx.data).unwrap();
    let expected = predict(&fx.trained, &samples[..1]).unwrap().remove(0);
    assert_eq!(n, expected.len());
    assert!((first - expected[0]).abs() <= 1e-9 * expected[0].abs());
}
