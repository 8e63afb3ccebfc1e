#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anysynth::pipeline::PipelineConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn transcripts_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/transcripts")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_anysynth")
}

/// Config text for a simulated run; `extra` lines go before the tables.
pub fn sim_config(images: u32, extra: &str, detectors: &[&str]) -> String {
    let dets: Vec<String> = detectors.iter().map(|d| format!("{d:?}")).collect();
    format!(
        "categories = [\"dog\", \"person\", \"car\", \"umbrella\"]\nimages = {images}\noutput = \"out\"\n{extra}\n\
         [backends]\ngenerator = \"sim:generator,noise=0.01,width=64,height=64\"\n\
         detectors = [{}]\nscorer = \"sim:scorer\"\n",
        dets.join(", ")
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

pub fn load(dir: &Path, text: &str) -> PipelineConfig {
    PipelineConfig::load(&write_config(dir, text)).unwrap()
}

/// Every file under `root`, keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for (rel, bytes) in tree(from) {
        let dst = to.join(rel);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::write(dst, bytes).unwrap();
    }
}
