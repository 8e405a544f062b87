#![allow(dead_code)]

pub mod calib;
pub mod invariants;
pub mod oracles;

use std::path::{Path, PathBuf};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Copies the golden fixture's files into `dest`.
pub fn copy_golden(dest: &Path) {
    std::fs::create_dir_all(dest).expect("create dest");
    for entry in std::fs::read_dir(golden_dir()).expect("fixture dir") {
        let entry = entry.expect("entry");
        if entry.file_type().expect("type").is_file() {
            std::fs::copy(entry.path(), dest.join(entry.file_name())).expect("copy");
        }
    }
}

/// Report JSON with the run timestamp removed.
pub fn without_timestamp(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("generated_at");
    }
    v
}
