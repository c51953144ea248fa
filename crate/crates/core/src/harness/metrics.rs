use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::HarnessError;

pub const METRICS_HEADER: &str =
    "env_step,episode,return_ma100,success_ma100,loss_vae,loss_dyn,critic_loss,actor_loss,bound_coverage";
pub const EVAL_HEADER: &str = "env_step,mean_return,success_rate";

/// One line of `metrics.csv`. Averages with nothing to average are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    /// Training episodes completed so far.
    pub episode: u64,
    pub return_ma100: f64,
    pub success_ma100: f64,
    pub loss_vae: f64,
    pub loss_dyn: f64,
    /// Mean critic loss since the previous row.
    pub critic_loss: f64,
    /// Mean actor loss since the previous row.
    pub actor_loss: f64,
    /// Fraction of executed policy outputs strictly inside the bounds since
    /// the previous row.
    pub bound_coverage: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.env_step,
            self.episode,
            self.return_ma100,
            self.success_ma100,
            self.loss_vae,
            self.loss_dyn,
            self.critic_loss,
            self.actor_loss,
            self.bound_coverage
        )
    }
}

/// Append-only CSV file; each row goes out in one write followed by a flush.
#[derive(Debug, Clone)]
pub struct CsvLog {
    path: PathBuf,
}

impl CsvLog {
    /// Truncates `path` and writes `header` plus any `rows` already recorded.
    pub fn create(path: &Path, header: &str, rows: &[String]) -> Result<Self, HarnessError> {
        let mut text = format!("{header}\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn append(&self, row: &str) -> Result<(), HarnessError> {
        let io = |e| HarnessError::io(&self.path, e);
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        f.write_all(format!("{row}\n").as_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Git-style object hash (`"blob <len>\0"` prefix) using SHA-256.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Blob hash of the running executable.
pub fn binary_hash() -> Result<String, HarnessError> {
    let exe = std::env::current_exe().map_err(|e| HarnessError::io(Path::new("<current exe>"), e))?;
    let bytes = std::fs::read(&exe).map_err(|e| HarnessError::io(&exe, e))?;
    Ok(git_blob_hash(&bytes))
}
