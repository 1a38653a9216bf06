//! Helpers shared by the command-line test suites: a scaled-down run
//! configuration, process invocation, and artifact readers.

use std::path::{Path, PathBuf};
use std::process::Output;

use mcorr_core::config::RunConfig;

/// A small chest-like configuration that keeps subprocess tests fast.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::standard_chest();
    cfg.geometry.n_views = 90;
    cfg.geometry.n_detectors = 95;
    cfg.phantom.width = 64;
    cfg.phantom.height = 64;
    cfg.prompts[0].x = 32;
    cfg.prompts[0].y = 32;
    cfg.loss.patch_size = 8;
    cfg.optimizer.max_iters = 25;
    cfg
}

pub fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json_pretty()).unwrap();
    path
}

/// Runs the binary with the given arguments and returns the raw output.
pub fn mcorr(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_mcorr"))
        .args(args)
        .env_remove("MCORR_THREADS")
        .output()
        .expect("binary runs")
}

pub fn assert_exit(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

// Not every test target uses every helper.
#[allow(dead_code)]
pub fn stdout_line(out: &Output) -> String {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}
