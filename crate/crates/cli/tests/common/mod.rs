#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ticketgraph::ingest::write_jsonl;
use ticketgraph::synthetic::{login_fixture_tickets, LOGIN_FIXTURE_THETA};
use ticketgraph_cli::commands;
use ticketgraph_cli::Settings;

pub const REPRODUCE_QUERY: &str = "how to reproduce ENT-22970's issue";

pub fn settings(snapshot_dir: &Path) -> Settings {
    Settings {
        snapshot_dir: snapshot_dir.to_path_buf(),
        theta: LOGIN_FIXTURE_THETA,
        ..Settings::default()
    }
}

pub fn write_login_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("tickets.jsonl");
    write_jsonl(&path, &login_fixture_tickets()).unwrap();
    path
}

/// Builds the four-ticket fixture snapshot under `dir/snapshot`.
pub fn built_fixture(dir: &Path) -> Settings {
    let s = settings(&dir.join("snapshot"));
    commands::build(&s, &write_login_fixture(dir)).unwrap();
    s
}

/// Runs the binary with a clean `TICKETGRAPH_*` environment plus `env`.
pub fn run_cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ticketgraph"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TICKETGRAPH_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("RUST_LOG", "warn").args(args).envs(env.iter().copied());
    cmd.output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
