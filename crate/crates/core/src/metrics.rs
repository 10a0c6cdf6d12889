//! Counter snapshots, success/error rates and report export.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::MessageCounters;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no receptions counted")]
    EmptyCounters,
    #[error("unknown report format {0:?} (expected json or csv)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub success_rate: f64,
    pub error_rate: f64,
}

/// Fraction of receptions lost to link errors, and its complement.
pub fn compute_rates(counters: &MessageCounters) -> Result<Rates, MetricsError> {
    let total = counters.receptions();
    if total == 0 {
        return Err(MetricsError::EmptyCounters);
    }
    let error_rate = counters.errors as f64 / total as f64;
    Ok(Rates {
        success_rate: 1.0 - error_rate,
        error_rate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub device_id: u32,
    pub name: String,
    pub counters: MessageCounters,
    /// Absent when the device counted no receptions.
    pub rates: Option<Rates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub requests: u64,
    pub answered: u64,
    pub timed_out: u64,
    /// When the mesh fell silent after the last request, if the run was
    /// drained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settled_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: RunInfo,
    pub devices: Vec<DeviceMetrics>,
    /// Counter totals over all devices.
    pub totals: MessageCounters,
    /// Unweighted mean of the per-device rates.
    pub aggregate: Option<Rates>,
}

impl MetricsReport {
    pub fn build(run: RunInfo, devices: Vec<(u32, String, MessageCounters)>) -> MetricsReport {
        let devices: Vec<DeviceMetrics> = devices
            .into_iter()
            .map(|(device_id, name, counters)| DeviceMetrics {
                device_id,
                name,
                counters,
                rates: compute_rates(&counters).ok(),
            })
            .collect();
        let mut totals = MessageCounters::default();
        for d in &devices {
            totals.errors += d.counters.errors;
            totals.retransmitted += d.counters.retransmitted;
            totals.received += d.counters.received;
            totals.sent += d.counters.sent;
            totals.ignored += d.counters.ignored;
        }
        let rated: Vec<Rates> = devices.iter().filter_map(|d| d.rates).collect();
        let aggregate = (!rated.is_empty()).then(|| {
            let error_rate = rated.iter().map(|r| r.error_rate).sum::<f64>() / rated.len() as f64;
            Rates {
                success_rate: 1.0 - error_rate,
                error_rate,
            }
        });
        MetricsReport {
            run,
            devices,
            totals,
            aggregate,
        }
    }

    pub fn device(&self, id: u32) -> Option<&DeviceMetrics> {
        self.devices.iter().find(|d| d.device_id == id)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Csv => self.to_csv(),
        }
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let rate = |r: Option<Rates>, f: fn(Rates) -> f64| r.map(|r| format!("{:.6}", f(r))).unwrap_or_default();
        w.write_record([
            "device",
            "errors",
            "retransmitted",
            "received",
            "sent",
            "ignored",
            "success_rate",
            "error_rate",
        ])
        .expect("in-memory write");
        let rows = self
            .devices
            .iter()
            .map(|d| (d.name.as_str(), d.counters, d.rates))
            .chain(std::iter::once(("aggregate", self.totals, self.aggregate)));
        for (name, c, rates) in rows {
            w.write_record([
                name.to_string(),
                c.errors.to_string(),
                c.retransmitted.to_string(),
                c.received.to_string(),
                c.sent.to_string(),
                c.ignored.to_string(),
                rate(rates, |r| r.success_rate),
                rate(rates, |r| r.error_rate),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Result<ReportFormat, MetricsError> {
        match path.extension().and_then(|e| e.to_str()) {
            None => Ok(ReportFormat::Json),
            Some(ext) => ext.parse(),
        }
    }
}

impl FromStr for ReportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(MetricsError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

pub fn export_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<(), MetricsError> {
    fs::write(path, report.render(format)).map_err(|source| MetricsError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a report previously exported as JSON.
pub fn load_report(path: &Path) -> Result<MetricsReport, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| MetricsError::Parse {
        path: path.to_path_buf(),
        source,
    })
}
