//! Per-run reports, batch summaries, and CSV/JSON emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{HandoffRecord, Outcome};
use crate::engine::SimTime;
use crate::net::DropReason;
use crate::scenario::{ScenarioConfig, Scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRecord {
    pub seq: u64,
    pub t_sent: SimTime,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub handoffs: Vec<HandoffRecord>,
    /// Trigger-to-completion latency of each completed handoff.
    pub latencies_us: Vec<u64>,
    /// Association-to-default-route-switch part of each completed handoff.
    pub exchange_latencies_us: Vec<u64>,
    pub sent: u64,
    pub lost: u64,
    pub loss_reasons: BTreeMap<DropReason, u64>,
    pub losses: Vec<LossRecord>,
    pub violations: Vec<String>,
    pub violation_count: u64,
    pub events: u64,
    pub config: ScenarioConfig,
}

impl RunReport {
    pub fn completed_handoffs(&self) -> usize {
        self.handoffs
            .iter()
            .filter(|h| h.outcome == Outcome::Completed)
            .count()
    }

    pub fn latency(&self) -> LatencyStats {
        latency_stats(&self.latencies_us)
    }

    pub fn loss(&self) -> LossStats {
        loss_stats(self.lost, self.sent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub lost: u64,
    pub sent: u64,
    /// `None` when nothing was sent.
    pub per_10k: Option<f64>,
}

pub fn loss_stats(lost: u64, sent: u64) -> LossStats {
    LossStats {
        lost,
        sent,
        per_10k: (sent > 0).then(|| lost as f64 * 10_000.0 / sent as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: Option<f64>,
    pub min_ms: Option<f64>,
    pub max_ms: Option<f64>,
    pub std_ms: Option<f64>,
}

pub fn latency_stats(samples_us: &[u64]) -> LatencyStats {
    if samples_us.is_empty() {
        return LatencyStats {
            count: 0,
            mean_ms: None,
            min_ms: None,
            max_ms: None,
            std_ms: None,
        };
    }
    let ms: Vec<f64> = samples_us.iter().map(|u| *u as f64 / 1_000.0).collect();
    let n = ms.len() as f64;
    let mean = ms.iter().sum::<f64>() / n;
    let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    LatencyStats {
        count: ms.len(),
        mean_ms: Some(mean),
        min_ms: ms.iter().copied().reduce(f64::min),
        max_ms: ms.iter().copied().reduce(f64::max),
        std_ms: Some(var.sqrt()),
    }
}

/// Minimum cell overlap, in meters, needed to finish a handoff of
/// `latency_ms` at `speed_kmph` before leaving the old cell.
pub fn overlap_required(speed_kmph: f64, latency_ms: f64) -> f64 {
    speed_kmph / 3.6 * latency_ms / 1_000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    /// `None` for a batch mixing schemes.
    pub scheme: Option<Scheme>,
    pub handoffs: usize,
    pub latency: LatencyStats,
    pub loss: LossStats,
    pub violations: u64,
}

pub fn summarize(reports: &[RunReport]) -> BatchSummary {
    let scheme = reports
        .first()
        .map(|r| r.scheme)
        .filter(|s| reports.iter().all(|r| r.scheme == *s));
    let all: Vec<u64> = reports
        .iter()
        .flat_map(|r| r.latencies_us.iter().copied())
        .collect();
    BatchSummary {
        runs: reports.len(),
        scheme,
        handoffs: reports.iter().map(RunReport::completed_handoffs).sum(),
        latency: latency_stats(&all),
        loss: loss_stats(
            reports.iter().map(|r| r.lost).sum(),
            reports.iter().map(|r| r.sent).sum(),
        ),
        violations: reports.iter().map(|r| r.violation_count).sum(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

pub const CSV_HEADER: &str =
    "run,seed,scheme,handoffs,mean_latency_ms,max_latency_ms,lost,sent,per_10k";

/// One row per run plus a trailing summary row. Byte-identical for
/// identical inputs.
pub fn results_csv(reports: &[RunReport], summary: &BatchSummary) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let lat = r.latency();
        let loss = r.loss();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.scheme,
            r.completed_handoffs(),
            fmt_opt(lat.mean_ms),
            fmt_opt(lat.max_ms),
            loss.lost,
            loss.sent,
            fmt_opt(loss.per_10k)
        );
    }
    let scheme = summary
        .scheme
        .map_or_else(|| "mixed".to_string(), |s| s.to_string());
    let _ = writeln!(
        out,
        "summary,,{},{},{},{},{},{},{}",
        scheme,
        summary.handoffs,
        fmt_opt(summary.latency.mean_ms),
        fmt_opt(summary.latency.max_ms),
        summary.loss.lost,
        summary.loss.sent,
        fmt_opt(summary.loss.per_10k)
    );
    out
}

/// One row per completed handoff.
pub fn latency_series_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "run,seed,scheme,index,old_ap,new_ap,t_trigger_ms,latency_ms,exchange_ms,retries\n",
    );
    for r in reports {
        let completed = r
            .handoffs
            .iter()
            .filter(|h| h.outcome == Outcome::Completed);
        for (i, h) in completed.enumerate() {
            let lat = crate::agents::handoff_latency(h).map(|d| d.as_secs_f64() * 1_000.0);
            let ex = crate::agents::exchange_latency(h).map(|d| d.as_secs_f64() * 1_000.0);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.3},{},{},{}",
                r.run,
                r.seed,
                r.scheme,
                i,
                h.old_ap.as_deref().unwrap_or(""),
                h.new_ap,
                h.t_trigger.as_millis_f64(),
                fmt_opt(lat),
                fmt_opt(ex),
                h.retries
            );
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonResults {
    runs: Vec<RunReport>,
    summary: BatchSummary,
}

pub fn results_json(reports: &[RunReport], summary: &BatchSummary) -> String {
    let doc = JsonResults {
        runs: reports.to_vec(),
        summary: summary.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("reports serialize")
}

pub fn parse_results_json(text: &str) -> Result<(Vec<RunReport>, BatchSummary), serde_json::Error> {
    let doc: JsonResults = serde_json::from_str(text)?;
    Ok((doc.runs, doc.summary))
}

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), OutputError> {
    std::fs::create_dir_all(path).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(run: usize, lat: &[u64], lost: u64, sent: u64) -> RunReport {
        RunReport {
            run,
            seed: 10 + run as u64,
            scheme: Scheme::Dual,
            handoffs: Vec::new(),
            latencies_us: lat.to_vec(),
            exchange_latencies_us: Vec::new(),
            sent,
            lost,
            loss_reasons: BTreeMap::new(),
            losses: Vec::new(),
            violations: Vec::new(),
            violation_count: 0,
            events: 0,
            config: ScenarioConfig::default(),
        }
    }

    #[test]
    fn loss_rate_scales_to_ten_thousand() {
        assert_eq!(loss_stats(3, 10_000).per_10k, Some(3.0));
        assert_eq!(loss_stats(1, 2_000).per_10k, Some(5.0));
        assert_eq!(loss_stats(0, 0).per_10k, None);
    }

    #[test]
    fn latency_stats_over_samples() {
        let s = latency_stats(&[50_000, 60_000]);
        assert_eq!(s.mean_ms, Some(55.0));
        assert_eq!(s.max_ms, Some(60.0));
        assert_eq!(s.min_ms, Some(50.0));
        assert_eq!(s.std_ms, Some(5.0));
        assert_eq!(latency_stats(&[]).mean_ms, None);
    }

    #[test]
    fn overlap_for_fast_vehicle() {
        let d = overlap_required(100.0, 80.0);
        assert!((d - 2.2222).abs() < 1e-3);
        assert_eq!(overlap_required(0.0, 80.0), 0.0);
    }

    #[test]
    fn csv_layout_and_undefined_markers() {
        let reports = vec![report(0, &[55_000], 0, 10_000), report(1, &[], 0, 0)];
        let csv = results_csv(&reports, &summarize(&reports));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,10,dual,0,55.000,55.000,0,10000,0.000");
        assert_eq!(lines[2], "1,11,dual,0,NA,NA,0,0,NA");
        assert_eq!(lines[3], "summary,,dual,0,55.000,55.000,0,10000,0.000");
    }

    #[test]
    fn json_round_trips() {
        let reports = vec![report(0, &[55_000, 56_500], 2, 10_000)];
        let summary = summarize(&reports);
        let text = results_json(&reports, &summary);
        let (back, s2) = parse_results_json(&text).unwrap();
        assert_eq!(back, reports);
        assert_eq!(s2, summary);
    }

    #[test]
    fn write_error_names_path() {
        let err = write_file(Path::new("/nonexistent-dir/out.csv"), "x").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
    }
}
