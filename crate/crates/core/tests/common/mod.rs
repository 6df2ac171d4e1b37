#![allow(dead_code)]

use std::path::PathBuf;

use blockprox::cli::{parse_problem, ProblemSpec};

pub const FAMILY_FIXTURES: [&str; 5] = [
    "linear",
    "separable_prox",
    "saddle_quadratic",
    "qp",
    "variational_inequality",
];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> ProblemSpec {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    parse_problem(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn all_fixture_names() -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "json")
                .then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
}

/// Prints the verdict line for one criterion and fails the test on FAIL.
pub fn verdict(criterion: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion} ({title}): {tag}: {detail}");
    assert!(ok, "criterion {criterion} ({title}) failed: {detail}");
}
