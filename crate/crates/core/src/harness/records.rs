use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const HEADER: &str =
    "run_id\tfingerprint\tdataset\tobjective\tencoder\tlocal_loss\tseed\tmetric\tvalue\twall_time\tcode_version";

/// One measured value of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub fingerprint: String,
    pub dataset: String,
    /// Model label without the local loss, e.g. `cmdim-p1`.
    pub objective: String,
    pub encoder: String,
    pub local_loss: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Seconds.
    pub wall_time: f64,
    pub code_version: String,
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl RunRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            clean(&self.run_id),
            clean(&self.fingerprint),
            clean(&self.dataset),
            clean(&self.objective),
            clean(&self.encoder),
            clean(&self.local_loss),
            self.seed,
            clean(&self.metric),
            self.value,
            self.wall_time,
            clean(&self.code_version)
        )
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 11 {
            return Err(format!("expected 11 fields, found {}", f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        Ok(Self {
            run_id: f[0].into(),
            fingerprint: f[1].into(),
            dataset: f[2].into(),
            objective: f[3].into(),
            encoder: f[4].into(),
            local_loss: f[5].into(),
            seed: f[6].parse().map_err(|e| format!("`{}`: {e}", f[6]))?,
            metric: f[7].into(),
            value: num(f[8])?,
            wall_time: num(f[9])?,
            code_version: f[10].into(),
        })
    }
}

/// Append-only tab-separated record file.
#[derive(Clone, Debug)]
pub struct ResultsStore {
    path: PathBuf,
}

impl ResultsStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `records` in one locked write.
    pub fn append(&self, records: &[RunRecord]) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.lock().map_err(|e| Error::io(&self.path, e))?;
        let empty = f.metadata().map_err(|e| Error::io(&self.path, e))?.len() == 0;
        let mut text = String::new();
        if empty {
            text.push_str(HEADER);
            text.push('\n');
        }
        for r in records {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        let res = f.write_all(text.as_bytes()).and_then(|_| f.flush());
        let _ = f.unlock();
        res.map_err(|e| Error::io(&self.path, e))
    }

    /// Every record in file order; a missing file reads as empty.
    pub fn read_all(&self) -> Result<Vec<RunRecord>> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && *l != HEADER)
            .map(|(i, l)| {
                RunRecord::parse_line(l).map_err(|msg| Error::Parse {
                    path: self.path.clone(),
                    line: i + 1,
                    msg,
                })
            })
            .collect()
    }
}

/// Run identifier from the fingerprint and the start time.
pub fn run_id(fingerprint: &str) -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("{}-{nanos:x}", &fingerprint[..fingerprint.len().min(12)])
}
