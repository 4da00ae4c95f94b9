#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

/// Runs the built binary with `OHZ_OUT` cleared so only explicit flags count.
pub fn ohz<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    ohz_env(args, &[])
}

pub fn ohz_env<I, S>(args: I, env: &[(&str, &Path)]) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ohz"));
    cmd.args(args).env_remove("OHZ_OUT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn ohz")
}

/// Panics with stderr attached unless the run exited 0.
pub fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// SHA-256 of every file in `dir`, keyed by file name.
pub fn digest_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            let bytes = std::fs::read(entry.path()).unwrap();
            let hash = Sha256::digest(&bytes);
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            out.insert(entry.file_name().to_string_lossy().into_owned(), hex);
        }
    }
    out
}

pub fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Directories produced by one full pipeline run under `root`.
pub struct Pipeline {
    pub raw: PathBuf,
    pub split: PathBuf,
    pub model: PathBuf,
    pub scores: PathBuf,
    pub eval: PathBuf,
    pub fscil: PathBuf,
    pub report: PathBuf,
}

impl Pipeline {
    pub fn new(root: &Path) -> Self {
        Self {
            raw: root.join("raw"),
            split: root.join("split"),
            model: root.join("model"),
            scores: root.join("scores"),
            eval: root.join("eval"),
            fscil: root.join("fscil"),
            report: root.join("report"),
        }
    }

    pub fn synth(&self) {
        ok(ohz([
            "synth", "--classes", "10", "--dim", "16", "--train-per-class", "40",
            "--test-per-class", "30", "--seed", "3", "--out", &p(&self.raw),
        ]));
    }

    pub fn split(&self) {
        ok(ohz([
            "split", "--train", &p(&self.raw.join("train.ohfs")), "--test",
            &p(&self.raw.join("test.ohfs")), "--k", "6", "--out", &p(&self.split),
        ]));
    }

    pub fn probe_train(&self) {
        ok(ohz([
            "probe-train", "--train", &p(&self.split.join("id_train.ohfs")), "--epochs", "5",
            "--seed", "1", "--out", &p(&self.model),
        ]));
    }

    pub fn score(&self) {
        ok(ohz([
            "score", "--probe", &p(&self.model.join("probe.ohpm")), "--prep",
            &p(&self.model.join("prep.ohps")), "--train", &p(&self.split.join("id_train.ohfs")),
            "--id-test", &p(&self.split.join("id_test.ohfs")), "--ood-test",
            &p(&self.split.join("ood_test.ohfs")), "--out", &p(&self.scores),
        ]));
    }

    pub fn eval(&self) {
        ok(ohz(["eval", "--scores", &p(&self.scores), "--out", &p(&self.eval)]));
    }

    pub fn fscil(&self) {
        ok(ohz([
            "fscil", "--train", &p(&self.raw.join("train.ohfs")), "--test",
            &p(&self.raw.join("test.ohfs")), "--test-samples", "200", "--seed", "2",
            "--out", &p(&self.fscil),
        ]));
    }

    pub fn report(&self) {
        ok(ohz([
            "report", "--eval", &p(&self.eval), "--fscil", &p(&self.fscil), "--out",
            &p(&self.report),
        ]));
    }

    pub fn run_all(&self) {
        self.synth();
        self.split();
        self.probe_train();
        self.score();
        self.eval();
        self.fscil();
        self.report();
    }

    pub fn dirs(&self) -> [&Path; 7] {
        [&self.raw, &self.split, &self.model, &self.scores, &self.eval, &self.fscil, &self.report]
    }
}
