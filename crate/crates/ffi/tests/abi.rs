use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use lineage_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(lineage_last_error()) }.to_string_lossy().into_owned()
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(lineage_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("d.lmx"));
    let values = [1.0f32, 2.0, -3.0, 0.5, 7.0, 8.25];
    let labels = [0u32, 5];
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(lineage_dataset_create(2, 3, values.as_ptr(), labels.as_ptr(), 1, &mut ds), LineageStatus::Ok);
        assert_eq!(lineage_dataset_save(ds, path.as_ptr()), LineageStatus::Ok);
        lineage_dataset_free(ds);

        let mut back = ptr::null_mut();
        assert_eq!(lineage_dataset_load(path.as_ptr(), &mut back), LineageStatus::Ok);
        let (mut r, mut c, mut t) = (0usize, 0usize, 9u8);
        assert_eq!(lineage_dataset_shape(back, &mut r, &mut c, &mut t), LineageStatus::Ok);
        assert_eq!((r, c, t), (2, 3, 1));
        let mut v = [0f32; 6];
        assert_eq!(lineage_dataset_values(back, v.as_mut_ptr(), 6), LineageStatus::Ok);
        assert_eq!(v, values);
        let mut l = [9u32; 2];
        assert_eq!(lineage_dataset_labels(back, l.as_mut_ptr(), 2), LineageStatus::Ok);
        assert_eq!(l, labels);

        // Wrong buffer length is rejected before anything is written.
        let mut short = [0f32; 5];
        assert_eq!(lineage_dataset_values(back, short.as_mut_ptr(), 5), LineageStatus::Invalid);
        assert!(last_error().contains("5"), "{}", last_error());
        assert_eq!(short, [0.0; 5]);
        lineage_dataset_free(back);
    }
}

#[test]
fn null_pointers_and_bad_arguments_map_to_status_codes() {
    let values = [1.0f32];
    let labels = [0u32];
    unsafe {
        assert_eq!(lineage_dataset_load(ptr::null(), &mut ptr::null_mut()), LineageStatus::NullPointer);
        assert!(last_error().contains("path"), "{}", last_error());
        let p = CString::new("x.lmx").unwrap();
        assert_eq!(lineage_dataset_load(p.as_ptr(), ptr::null_mut()), LineageStatus::NullPointer);
        assert_eq!(lineage_dataset_shape(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), LineageStatus::NullPointer);
        assert_eq!(lineage_classifier_num_classes(ptr::null(), ptr::null_mut()), LineageStatus::NullPointer);

        let mut ds = ptr::null_mut();
        assert_eq!(lineage_dataset_create(1, 1, values.as_ptr(), labels.as_ptr(), 7, &mut ds), LineageStatus::Invalid);
        assert!(last_error().contains("cell type"), "{}", last_error());
        assert!(ds.is_null());
        let bad_label = [7u32];
        assert_eq!(lineage_dataset_create(1, 1, values.as_ptr(), bad_label.as_ptr(), 0, &mut ds), LineageStatus::Invalid);
        assert_eq!(lineage_dataset_create(usize::MAX, 2, values.as_ptr(), labels.as_ptr(), 0, &mut ds), LineageStatus::Invalid);

        let missing = CString::new("/nonexistent/dir/file.lmx").unwrap();
        assert_eq!(lineage_dataset_load(missing.as_ptr(), &mut ds), LineageStatus::Io);

        // Freeing null is a no-op.
        lineage_dataset_free(ptr::null_mut());
        lineage_autoencoder_free(ptr::null_mut());
        lineage_classifier_free(ptr::null_mut());
    }
}

#[test]
fn synthesize_returns_three_populations() {
    let cfg = CString::new("genes = 30\nprogenitors = 50\nmonocytes = 20\nlymphocytes = 10\nseed = 4\n").unwrap();
    let mut out = [ptr::null_mut(); 3];
    unsafe {
        assert_eq!(lineage_synthesize(cfg.as_ptr(), out.as_mut_ptr()), LineageStatus::Ok);
        for (i, (&ds, rows)) in out.iter().zip([50, 20, 10]).enumerate() {
            let (mut r, mut c, mut t) = (0, 0, 9);
            assert_eq!(lineage_dataset_shape(ds, &mut r, &mut c, &mut t), LineageStatus::Ok);
            assert_eq!((r, c, t as usize), (rows, 30, i));
            lineage_dataset_free(ds);
        }
        let bad = CString::new("genes = \"many\"").unwrap();
        assert_eq!(lineage_synthesize(bad.as_ptr(), out.as_mut_ptr()), LineageStatus::Invalid);
        assert!(last_error().contains("invalid configuration"), "{}", last_error());
    }
}

#[test]
fn pipeline_checkpoints_load_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (cfg, out_c) = (cstr(&smoke_config()), cstr(&out));
    unsafe {
        assert_eq!(lineage_run_pipeline(cfg.as_ptr(), out_c.as_ptr()), LineageStatus::Ok, "{}", last_error());

        let mut ae = ptr::null_mut();
        let ae_path = cstr(&out.join("autoencoder/model.ckpt"));
        assert_eq!(lineage_autoencoder_load(ae_path.as_ptr(), &mut ae), LineageStatus::Ok);
        let (mut g, mut d) = (0, 0);
        assert_eq!(lineage_autoencoder_widths(ae, &mut g, &mut d), LineageStatus::Ok);

        let mut mono = ptr::null_mut();
        let mono_path = cstr(&out.join("data/monocyte.lmx"));
        assert_eq!(lineage_dataset_load(mono_path.as_ptr(), &mut mono), LineageStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        lineage_dataset_shape(mono, &mut rows, &mut cols, ptr::null_mut());
        assert_eq!(cols, g);

        let mut z = ptr::null_mut();
        assert_eq!(lineage_autoencoder_embed(ae, mono, &mut z), LineageStatus::Ok);
        let mut zc = 0;
        lineage_dataset_shape(z, ptr::null_mut(), &mut zc, ptr::null_mut());
        assert_eq!(zc, d);

        // Embedding through the handle matches the file the pipeline wrote.
        let mut stored = ptr::null_mut();
        let emb_path = cstr(&out.join("embeddings/monocyte.lmx"));
        assert_eq!(lineage_dataset_load(emb_path.as_ptr(), &mut stored), LineageStatus::Ok);
        let (mut a, mut b) = (vec![0f32; rows * d], vec![0f32; rows * d]);
        lineage_dataset_values(z, a.as_mut_ptr(), a.len());
        lineage_dataset_values(stored, b.as_mut_ptr(), b.len());
        assert_eq!(a, b);

        let mut clf = ptr::null_mut();
        let clf_path = cstr(&out.join("classifiers/ffn-progenitor/model.ckpt"));
        assert_eq!(lineage_classifier_load(clf_path.as_ptr(), &mut clf), LineageStatus::Ok);
        let mut k = 0;
        assert_eq!(lineage_classifier_num_classes(clf, &mut k), LineageStatus::Ok);
        assert_eq!(k, 7);
        let mut pred = vec![99u32; rows];
        assert_eq!(lineage_classifier_predict(clf, z, pred.as_mut_ptr(), rows), LineageStatus::Ok);
        assert!(pred.iter().all(|&p| p < 7));

        // Raw expression has the wrong width for the classifier.
        assert_eq!(lineage_classifier_predict(clf, mono, pred.as_mut_ptr(), rows), LineageStatus::Invalid);

        // A classifier checkpoint is not an autoencoder.
        let mut wrong = ptr::null_mut();
        assert_ne!(lineage_autoencoder_load(clf_path.as_ptr(), &mut wrong), LineageStatus::Ok);

        for ds in [mono, z, stored] {
            lineage_dataset_free(ds);
        }
        lineage_autoencoder_free(ae);
        lineage_classifier_free(clf);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lineage.h")
}

#[test]
fn header_declares_every_exported_function() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| &rest[..rest.find('(').unwrap()])
        .collect();
    assert!(exported.len() >= 19, "{exported:?}");
    for f in exported {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    for t in ["typedef struct LineageDataset", "typedef struct LineageAutoencoder", "typedef struct LineageClassifier"] {
        assert!(h.contains(t), "{t}");
    }
    assert!(h.contains("LINEAGE_STATUS_INTEGRITY = 3"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "lineage.h"

int main(void) {
    float v[4] = {1.0f, 2.0f, 3.0f, 4.0f};
    uint32_t l[2] = {0, 3};
    LineageDataset *ds = NULL;
    if (lineage_dataset_create(2, 2, v, l, 2, &ds) != LINEAGE_STATUS_OK) return 1;
    size_t rows = 0, cols = 0;
    uint8_t cell = 0;
    if (lineage_dataset_shape(ds, &rows, &cols, &cell) != LINEAGE_STATUS_OK) return 2;
    if (rows != 2 || cols != 2 || cell != 2) return 3;
    if (lineage_dataset_load(NULL, &ds) != LINEAGE_STATUS_NULL_POINTER) return 4;
    if (strstr(lineage_last_error(), "null") == NULL) return 5;
    lineage_dataset_free(ds);
    printf("%s\n", lineage_version());
    return 0;
}
"#;

/// Directory holding the library artifacts cargo built alongside this test.
fn artifact_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("liblineage_ffi.a").exists().then_some(dir)
}

#[test]
fn header_compiles_and_links_from_c() {
    let Ok(cc) = std::env::var("CC").or_else(|_| which_cc().ok_or(())) else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let include = header().parent().unwrap().to_path_buf();

    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(syntax.status.success(), "{}", String::from_utf8_lossy(&syntax.stderr));

    let Some(libs) = artifact_dir() else {
        eprintln!("static library not built next to the test binary; link step skipped");
        return;
    };
    let exe = dir.path().join("smoke");
    let link = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(libs.join("liblineage_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}

fn which_cc() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
}
