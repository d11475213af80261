//! Run ledger: one directory per run with the resolved config, the
//! environment, per-round metrics, checkpoints and the protocol summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Result, TrainError};
use crate::dataset::Split;

/// sha256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable config");
    hex::encode(Sha256::digest(&json))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| TrainError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunLedger {
    pub dir: PathBuf,
    pub config_hash: String,
}

#[derive(Serialize)]
struct ConfigFile<'a, C: Serialize> {
    config: &'a C,
    config_hash: &'a str,
    data_digest: &'a str,
    crate_version: &'static str,
}

#[derive(Serialize)]
struct EnvFile {
    base_seed: u64,
    round_seeds: Vec<u64>,
    device: &'static str,
    threads: usize,
    os: &'static str,
    arch: &'static str,
}

impl RunLedger {
    /// Creates `dir` and writes `config.json` and `env.json`.
    pub fn create<C: Serialize>(dir: &Path, config: &C, data_digest: &str, base_seed: u64, rounds: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let hash = config_hash(config);
        write_json(
            &dir.join("config.json"),
            &ConfigFile { config, config_hash: &hash, data_digest, crate_version: env!("CARGO_PKG_VERSION") },
        )?;
        let env = EnvFile {
            base_seed,
            round_seeds: (0..rounds as u64).map(|r| base_seed + r).collect(),
            device: "cpu",
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
        };
        write_json(&dir.join("env.json"), &env)?;
        Ok(Self { dir: dir.to_path_buf(), config_hash: hash })
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.dir.join(format!("round_{round}"))
    }

    pub fn write<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(name), value)
    }
}

/// Append-only `epoch,split,metric,value` log.
pub(crate) struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| TrainError::io(path, e))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "epoch,split,metric,value").map_err(|e| TrainError::io(path, e))?;
        Ok(Self { path: path.into(), out })
    }

    pub fn row(&mut self, epoch: usize, split: Split, metric: &str, value: f64) -> Result<()> {
        writeln!(self.out, "{epoch},{split},{metric},{value}").map_err(|e| TrainError::io(&self.path, e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| TrainError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_content() {
        assert_eq!(config_hash(&("a", 1)), config_hash(&("a", 1)));
        assert_ne!(config_hash(&("a", 1)), config_hash(&("a", 2)));
        assert_eq!(config_hash(&1).len(), 64);
    }

    #[test]
    fn ledger_files() {
        let dir = tempfile::tempdir().unwrap();
        let l = RunLedger::create(dir.path(), &serde_json::json!({"k": 1}), "d", 10, 3).unwrap();
        let env: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("env.json")).unwrap()).unwrap();
        assert_eq!(env["round_seeds"], serde_json::json!([10, 11, 12]));
        let cfg = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
        assert!(cfg.contains(&l.config_hash));
        let mut m = MetricsWriter::create(&dir.path().join("m.csv")).unwrap();
        m.row(0, Split::Val, "auc", 0.5).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("m.csv")).unwrap(), "epoch,split,metric,value\n0,VAL,auc,0.5\n");
    }
}
