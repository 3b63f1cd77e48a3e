#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use tempfile::TempDir;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    pub fn json(&self) -> Value {
        assert_eq!(self.code, 0, "stderr: {}", self.stderr);
        serde_json::from_str(&self.stdout).expect("stdout is JSON")
    }
}

pub fn tridef(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_tridef")).args(args).output().unwrap();
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                map.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    map
}

pub fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

pub fn tiny_model() -> Value {
    json!({
        "z_dim": 6, "w_dim": 5, "r_dim": 4, "mapping_hidden": 7, "plane_resolution": 4,
        "plane_channels": 2, "decoder_hidden": 5, "align_width": 6, "align_blocks": 1,
        "u_dim": 4, "stem_widths": [3, 4], "camera_hidden": 5, "image_size": 8, "n_samples": 6
    })
}

pub fn tiny_morph() -> Value {
    json!({"seed": 3, "subdivisions": 1, "dims": {"shape": 2, "pose": 3, "expression": 2}})
}

pub fn tiny_pipeline(steps: usize) -> Value {
    json!({
        "model": tiny_model(),
        "scene": {"resolution": 8, "n_samples": 8, "n_blobs": 6},
        "morph": tiny_morph(),
        "train": {"batch_size": 2, "steps": steps, "seed": 11},
        "dataset_size": 4,
        "diagnostics_every": 2,
        "diversity_samples": 3,
        "sensitivity_probes": 2
    })
}

/// Runs `args` once per thread count into fresh output directories and
/// checks stdout and every written file are byte-identical.
pub fn assert_reproducible(args: &[&str]) -> Value {
    let mut reference: Option<(String, BTreeMap<PathBuf, Vec<u8>>)> = None;
    for threads in ["1", "1", "3"] {
        let out = TempDir::new().unwrap();
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--threads", threads, "--out", out.path().to_str().unwrap()]);
        let r = tridef(&full);
        assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
        let written = files(out.path());
        match &reference {
            None => reference = Some((r.stdout, written)),
            Some((stdout, prev)) => {
                assert_eq!(&r.stdout, stdout, "{args:?} stdout differs with {threads} threads");
                assert_eq!(prev.keys().collect::<Vec<_>>(), written.keys().collect::<Vec<_>>());
                for (k, v) in prev {
                    assert!(written[k] == *v, "{args:?}: {} differs with {threads} threads", k.display());
                }
            }
        }
    }
    serde_json::from_str(&reference.unwrap().0).unwrap()
}
