use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataspace::{Quality, ShardRecord};
use crate::detection::{ClientScore, DetectionRecord, NormHistogram};
use crate::error::{Error, Result};
use crate::model::GradNormTrace;

use super::run::{DetectionStatus, RoundMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundMetrics>,
    pub detection_status: DetectionStatus,
    /// Round in which clustering ran.
    pub detection_round: Option<usize>,
    pub labels: Option<BTreeMap<usize, Quality>>,
    pub detection_accuracy: Option<f64>,
    pub centroids: Option<(f64, f64)>,
    pub kmeans_invocations: usize,
    /// Sorted by client id.
    pub scores: Vec<ClientScore>,
    pub traces: Vec<GradNormTrace>,
    pub truth: BTreeMap<usize, Quality>,
    pub shards: Vec<ShardRecord>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.test_accuracy)
    }

    pub fn detection_records(&self) -> Vec<DetectionRecord> {
        self.scores
            .iter()
            .map(|s| DetectionRecord {
                client_id: s.client_id,
                score: s.score,
                label: self.labels.as_ref().map(|l| l[&s.client_id]),
                truth_tag: self.truth[&s.client_id],
            })
            .collect()
    }

    pub fn histogram(&self) -> NormHistogram {
        NormHistogram::build(
            self.traces.iter().map(|t| (t, self.truth[&t.client_id])),
            self.config.detection.histogram_bins,
        )
    }
}

fn jsonl<S: Serialize>(items: &[S]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Human-readable digest. Holds no timing data, so reruns match.
pub fn summary_text(r: &ExperimentReport) -> String {
    let c = &r.config;
    let a = &c.aggregation;
    let mut s = String::new();
    let _ = writeln!(s, "strategy: {}", a.strategy.name());
    if a.ns_enabled {
        let _ = writeln!(s, "noise_sifting: on (alpha {}, beta {})", a.alpha, a.beta);
    } else {
        let _ = writeln!(s, "noise_sifting: off");
    }
    let _ = writeln!(s, "seed: {}", c.experiment.seed);
    let _ = writeln!(s, "clients: {} ({} noisy)", c.federation.num_clients, c.federation.noisy_clients);
    let _ = writeln!(s, "rounds: {}", r.rounds.len());
    let _ = writeln!(s, "final_accuracy: {:.4}", r.final_accuracy());
    if let Some(best) = r.rounds.iter().max_by(|x, y| x.test_accuracy.total_cmp(&y.test_accuracy).then(y.round.cmp(&x.round))) {
        let _ = writeln!(s, "best_accuracy: {:.4} (round {})", best.test_accuracy, best.round);
    }
    if let Some(last) = r.rounds.last() {
        let _ = writeln!(s, "final_loss: {:.4}", last.global_loss);
    }
    let status = match r.detection_status {
        DetectionStatus::Pending => "pending",
        DetectionStatus::Done => "done",
        DetectionStatus::Abstained => "abstained",
    };
    match (r.detection_round, r.detection_accuracy) {
        (Some(round), Some(acc)) => {
            let _ = writeln!(s, "detection: {status} in round {round}, accuracy {acc:.4}");
        }
        _ => {
            let _ = writeln!(s, "detection: {status}");
        }
    }
    if let Some((lo, hi)) = r.centroids {
        let _ = writeln!(s, "centroids: {lo:.6e} {hi:.6e}");
    }
    s
}

/// Writes the report files into `dir`, creating it if needed:
/// `metrics.jsonl`, `detection.jsonl`, `norms_hist.csv`, `summary.txt`,
/// `norm_traces.jsonl`, `shards.jsonl` and `config.toml`.
pub fn export_report(r: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "metrics.jsonl", &jsonl(&r.rounds))?;
    write(dir, "detection.jsonl", &jsonl(&r.detection_records()))?;
    write(dir, "norms_hist.csv", &r.histogram().to_csv())?;
    write(dir, "summary.txt", &summary_text(r))?;
    write(dir, "norm_traces.jsonl", &jsonl(&r.traces))?;
    write(dir, "shards.jsonl", &jsonl(&r.shards))?;
    write(dir, "config.toml", &r.config.to_toml())?;
    Ok(())
}

/// Reads `metrics.jsonl` back from a report directory.
pub fn read_metrics(dir: &Path) -> Result<Vec<RoundMetrics>> {
    let path = dir.join("metrics.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
