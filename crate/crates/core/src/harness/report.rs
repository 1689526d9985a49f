//! Line-delimited run reports.
//!
//! `report.jsonl` is a pure function of config and seed. Wall time and
//! memory go to a `timings.jsonl` sidecar so reports stay bit-identical
//! across re-runs.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EdgePrecision, MetricReport};
use crate::numerics::AdamConfig;
use crate::recmodel::{EpochRecord, Timings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&AdamConfig> for AdamSettings {
    fn from(c: &AdamConfig) -> Self {
        AdamSettings {
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// Edge precision of each item graph against planted cluster labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphQuality {
    pub semantic: EdgePrecision,
    pub behavioral: EdgePrecision,
    pub diffusion: Option<EdgePrecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub dataset_hash: String,
    pub adam: AdamSettings,
    /// Parameters covered by the L2 term.
    pub l2_scope: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub test: MetricReport,
    pub graph_quality: Option<GraphQuality>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum ReportRecord {
    Config(ConfigRecord),
    Epoch(EpochRecord),
    Final(FinalRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: ConfigRecord,
    pub epochs: Vec<EpochRecord>,
    pub result: FinalRecord,
}

impl RunReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut v = vec![ReportRecord::Config(self.config.clone())];
        v.extend(self.epochs.iter().cloned().map(ReportRecord::Epoch));
        v.push(ReportRecord::Final(self.result.clone()));
        v
    }

    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("report records serialize") + "\n")
            .collect()
    }

    pub fn parse_jsonl(text: &str, path: &Path) -> Result<Self> {
        let (mut config, mut result, mut epochs) = (None, None, Vec::new());
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: ReportRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            match rec {
                ReportRecord::Config(c) => config = Some(c),
                ReportRecord::Epoch(e) => epochs.push(e),
                ReportRecord::Final(f) => result = Some(f),
            }
        }
        let missing = |what: &str| Error::Data(format!("{}: report has no {what} record", path.display()));
        Ok(RunReport {
            config: config.ok_or_else(|| missing("config"))?,
            epochs,
            result: result.ok_or_else(|| missing("final"))?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub total_seconds: f64,
    pub bgd_seconds: f64,
    pub refreshes: usize,
    /// Peak resident set size, where the platform exposes it.
    pub peak_rss_kib: Option<u64>,
}

impl TimingRecord {
    pub fn capture(t: &Timings) -> Self {
        TimingRecord {
            total_seconds: t.total_seconds,
            bgd_seconds: t.bgd_seconds,
            refreshes: t.refreshes,
            peak_rss_kib: peak_rss_kib(),
        }
    }
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
