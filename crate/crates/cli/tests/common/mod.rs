#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use delius::dataio::{write_features, Dtype, FeatureFormat};
use delius::synthetic::{gaussian_blobs, BlobSpec, LabeledData};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_delius"));
    cmd.env_remove("DELIUS_THREADS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn small_blobs(seed: u64) -> LabeledData {
    gaussian_blobs(&BlobSpec {
        n: 60,
        d: 8,
        k: 3,
        separation: 30.0,
        sigma: 1.0,
        seed,
    })
}

/// Write blob features as DELF and a matching id,style,genre manifest.
pub fn write_fixture(dir: &Path, data: &LabeledData) -> (PathBuf, PathBuf) {
    let features = dir.join("features.delf");
    write_features(&data.features, &features, FeatureFormat::Binary(Dtype::F64)).unwrap();
    let labels = dir.join("labels.csv");
    let mut text = String::from("id,style,genre\n");
    for (id, l) in data.features.ids().iter().zip(&data.labels) {
        text.push_str(&format!("{id},s{l},g{}\n", l % 2));
    }
    std::fs::write(&labels, text).unwrap();
    (features, labels)
}

pub const FAST: &[&str] = &[
    "--encoder-dims",
    "16,3",
    "--epochs",
    "80",
    "--batch",
    "16",
    "--lr",
    "0.01",
    "--update-interval",
    "10",
    "--max-iterations",
    "300",
    "--restarts",
    "3",
];

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}
