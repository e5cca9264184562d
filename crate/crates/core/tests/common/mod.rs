#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn load(sub: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(fixture_dir().join(sub))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .map(|p| (format!("{sub}/{}", p.file_stem().unwrap().to_string_lossy()), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// Every fixture, malformed ones included.
pub fn all_fixtures() -> Vec<(String, String)> {
    let mut out = load("paper");
    out.extend(load("responses"));
    out.extend(load("malformed"));
    out
}

/// Fixtures with syntactically valid annotations only.
pub fn valid_fixtures() -> Vec<(String, String)> {
    let mut out = load("paper");
    out.extend(load("responses"));
    out
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(format!("{name}.txt"))).unwrap()
}
