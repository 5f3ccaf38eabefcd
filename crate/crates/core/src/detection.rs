//! One-shot noisy-client discovery from first-round gradient-norm traces.
//!
//! Each client is scored by the population variance of its per-batch
//! last-layer gradient norms. The scores are split by 1-D 2-means, and the
//! cluster with the higher centroid is labelled clean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataspace::Quality;
use crate::error::{Error, Result};
use crate::model::GradNormTrace;

/// Scores closer than this are treated as equal.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientScore {
    pub client_id: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub members: BTreeMap<usize, Cluster>,
    /// `(low, high)`, with `low <= high`.
    pub centroids: (f64, f64),
    pub iterations: usize,
}

/// Population variance of the trace's per-batch norms.
pub fn client_score(trace: &GradNormTrace) -> Result<ClientScore> {
    let norms = &trace.per_batch_norms;
    if norms.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "client {} recorded {} gradient-norm batch(es); variance needs at least 2",
            trace.client_id,
            norms.len()
        )));
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(ClientScore {
        client_id: trace.client_id,
        score: var,
    })
}

fn assign(score: f64, low: f64, high: f64) -> Cluster {
    if (score - low).abs() <= (score - high).abs() {
        Cluster::Low
    } else {
        Cluster::High
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Lloyd iterations from the given centroids until no assignment changes.
fn lloyd(values: &[f64], start: (f64, f64), fallback: (f64, f64)) -> (Vec<Cluster>, (f64, f64), usize) {
    let mut centroids = start;
    let mut members: Vec<Cluster> = values.iter().map(|&v| assign(v, centroids.0, centroids.1)).collect();
    let mut iterations = 1;
    loop {
        let pick = |c: Cluster| values.iter().zip(&members).filter(move |(_, m)| **m == c).map(|(v, _)| *v);
        centroids = (
            mean_of(pick(Cluster::Low)).unwrap_or(fallback.0),
            mean_of(pick(Cluster::High)).unwrap_or(fallback.1),
        );
        let next: Vec<Cluster> = values.iter().map(|&v| assign(v, centroids.0, centroids.1)).collect();
        if next == members {
            return (members, centroids, iterations);
        }
        members = next;
        iterations += 1;
    }
}

fn within_sse(values: &[f64], members: &[Cluster], centroids: (f64, f64)) -> f64 {
    values
        .iter()
        .zip(members)
        .map(|(&v, &m)| {
            let c = if m == Cluster::Low { centroids.0 } else { centroids.1 };
            (v - c) * (v - c)
        })
        .sum()
}

/// Cheapest split of the sorted values into a low prefix and a high
/// suffix: `(within-cluster SSE, low centroid, high centroid)`.
fn best_sorted_split(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut best = (f64::INFINITY, sorted[0], sorted[n - 1]);
    for cut in 1..n {
        let (lo, hi) = sorted.split_at(cut);
        let ml = lo.iter().sum::<f64>() / lo.len() as f64;
        let mh = hi.iter().sum::<f64>() / hi.len() as f64;
        let sse = lo.iter().map(|v| (v - ml) * (v - ml)).sum::<f64>() + hi.iter().map(|v| (v - mh) * (v - mh)).sum::<f64>();
        if sse < best.0 {
            best = (sse, ml, mh);
        }
    }
    best
}

/// Two-cluster Lloyd iterations on scalar scores.
///
/// Centroids start at the minimum and maximum score; a score equidistant
/// from both centroids joins the lower one. Iteration stops when no
/// assignment changes. Lloyd can stall in a local optimum, so the result
/// is checked against the best contiguous split of the sorted scores; if
/// that split is strictly cheaper, iteration restarts from its centroids,
/// which are a fixed point.
pub fn kmeans_1d(scores: &[ClientScore]) -> Result<ClusterAssignment> {
    if scores.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "clustering needs at least 2 clients, got {}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::arg(format!("client {} has a non-finite score", bad.client_id)));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateScores(format!(
            "all {} scores equal {lo}",
            scores.len()
        )));
    }

    let (mut members, mut centroids, mut iterations) = lloyd(&values, (lo, hi), (lo, hi));
    let current = within_sse(&values, &members, centroids);
    let (best, ml, mh) = best_sorted_split(&values);
    if best < current - 1e-12 * (1.0 + current) {
        let (m, c, extra) = lloyd(&values, (ml, mh), (lo, hi));
        members = m;
        centroids = c;
        iterations += extra;
    }

    Ok(ClusterAssignment {
        members: scores
            .iter()
            .zip(members)
            .map(|(s, m)| (s.client_id, m))
            .collect(),
        centroids,
        iterations,
    })
}

/// Higher-centroid cluster → `Clean`, lower → `Noisy`.
pub fn label_clusters(a: &ClusterAssignment) -> Result<BTreeMap<usize, Quality>> {
    if (a.centroids.1 - a.centroids.0).abs() <= DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateScores(format!(
            "centroids coincide at {}",
            a.centroids.0
        )));
    }
    let high = if a.centroids.1 >= a.centroids.0 {
        Cluster::High
    } else {
        Cluster::Low
    };
    Ok(a.members
        .iter()
        .map(|(&id, &m)| {
            let q = if m == high { Quality::Clean } else { Quality::Noisy };
            (id, q)
        })
        .collect())
}

/// Scores every trace, clusters, and labels.
pub fn detect(traces: &[GradNormTrace]) -> Result<(Vec<ClientScore>, ClusterAssignment, BTreeMap<usize, Quality>)> {
    let scores = traces.iter().map(client_score).collect::<Result<Vec<_>>>()?;
    let assignment = kmeans_1d(&scores)?;
    let labels = label_clusters(&assignment)?;
    Ok((scores, assignment, labels))
}

/// Fraction of clients whose predicted tag matches the truth.
pub fn detection_accuracy(
    pred: &BTreeMap<usize, Quality>,
    truth: &BTreeMap<usize, Quality>,
) -> Result<f64> {
    if pred.len() != truth.len() || pred.keys().ne(truth.keys()) {
        return Err(Error::arg("predicted and true label maps cover different clients"));
    }
    if pred.is_empty() {
        return Err(Error::arg("no clients to compare"));
    }
    let hits = pred.iter().filter(|(id, q)| truth[*id] == **q).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// One detection export record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub client_id: usize,
    pub score: f64,
    pub label: Option<Quality>,
    pub truth_tag: Quality,
}

/// Equal-width histogram of every recorded norm, split by ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormHistogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub clean_counts: Vec<usize>,
    pub noisy_counts: Vec<usize>,
}

impl NormHistogram {
    pub fn build<'a>(
        traces: impl IntoIterator<Item = (&'a GradNormTrace, Quality)>,
        bins: usize,
    ) -> Self {
        let bins = bins.max(1);
        let tagged: Vec<(f64, Quality)> = traces
            .into_iter()
            .flat_map(|(t, q)| t.per_batch_norms.iter().map(move |&n| (n, q)))
            .collect();
        let mut clean_counts = vec![0; bins];
        let mut noisy_counts = vec![0; bins];
        if tagged.is_empty() {
            return Self {
                edges: (0..=bins).map(|i| i as f64).collect(),
                clean_counts,
                noisy_counts,
            };
        }
        let lo = tagged.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let mut hi = tagged.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        for (v, q) in tagged {
            let bin = (((v - lo) / width) as usize).min(bins - 1);
            match q {
                Quality::Clean => clean_counts[bin] += 1,
                Quality::Noisy => noisy_counts[bin] += 1,
            }
        }
        Self {
            edges,
            clean_counts,
            noisy_counts,
        }
    }

    pub fn total(&self) -> usize {
        self.clean_counts.iter().chain(&self.noisy_counts).sum()
    }

    /// `bin_start,bin_end,clean,noisy,total` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,clean,noisy,total\n");
        for i in 0..self.clean_counts.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.clean_counts[i],
                self.noisy_counts[i],
                self.clean_counts[i] + self.noisy_counts[i]
            ));
        }
        out
    }
}
