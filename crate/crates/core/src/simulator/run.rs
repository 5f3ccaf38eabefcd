use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, ClientUpdate};
use crate::config::ExperimentConfig;
use crate::dataspace::{Quality, ShardRecord};
use crate::detection::{client_score, detection_accuracy, kmeans_1d, label_clusters, ClientScore};
use crate::error::{Error, Result};
use crate::model::{evaluate, local_train, mean_loss, GradNormTrace, ModelParams};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scalar::Scalar;

use super::report::ExperimentReport;
use super::world::{build_world, sample_round, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionStatus {
    Pending,
    Done,
    Abstained,
}

/// Messages exchanged in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub params_down: usize,
    pub params_up: usize,
    pub norm_traces_up: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub global_loss: f64,
    pub participating: Vec<usize>,
    pub detection: DetectionStatus,
    pub transcript: RoundTranscript,
    /// Set when the server kept the previous model because no update
    /// carried positive weight.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped_aggregation: bool,
}

/// A finished run: its report and the final global model.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub report: ExperimentReport,
    pub global: ModelParams<T>,
}

/// Builds the world from `cfg` and runs it.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<RunOutcome<T>> {
    let world = build_world::<T>(cfg)?;
    run_on_world(cfg, &world)
}

/// Usable norm batch for a shard of `n` samples: at least two batches are
/// needed for a variance, so small shards get smaller batches.
fn norm_batch_for(requested: usize, n: usize) -> usize {
    if n >= 2 * requested {
        requested
    } else {
        (n / 2).max(1)
    }
}

/// Runs the round loop on a prebuilt world.
///
/// Norm traces are collected from every participant not yet scored.
/// Clustering fires once, in the round where the last client is scored;
/// until then every client counts as clean. Labels are frozen afterwards.
pub fn run_on_world<T: Scalar>(cfg: &ExperimentConfig, world: &World<T>) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.experiment.seed;
    let opt = cfg.opt_config();
    let norm_order = cfg.detection.norm_order;
    let k = world.clients.len();
    if k != cfg.federation.num_clients {
        return Err(Error::Consistency(format!(
            "world has {k} clients but the config names {}",
            cfg.federation.num_clients
        )));
    }

    let mut global = world.global.clone();
    let mut sampler = stream_rng(seed, Stream::Sampling, &[]);
    let mut scores: BTreeMap<usize, ClientScore> = BTreeMap::new();
    let mut traces: BTreeMap<usize, GradNormTrace> = BTreeMap::new();
    let mut status = DetectionStatus::Pending;
    let mut frozen: Option<BTreeMap<usize, Quality>> = None;
    let mut centroids = None;
    let mut detection_round = None;
    let mut kmeans_calls = 0usize;
    let mut rounds = Vec::with_capacity(cfg.experiment.rounds);

    for t in 0..cfg.experiment.rounds {
        let undetected: BTreeSet<usize> = (0..k).filter(|c| !scores.contains_key(c)).collect();
        let participants = sample_round(cfg, t, &undetected, &mut sampler);

        let outcomes = participants
            .par_iter()
            .map(|&id| {
                let c = &world.clients[id];
                let collect = (!scores.contains_key(&id)).then_some(norm_order);
                let nb = norm_batch_for(cfg.detection.norm_batch, c.len());
                let train_seed = derive_seed(seed, Stream::Training, &[t as u64, id as u64]);
                local_train(&global, c, &opt, collect, nb, train_seed)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut updates = Vec::with_capacity(outcomes.len());
        let mut traces_up = 0;
        for (&id, out) in participants.iter().zip(outcomes) {
            if let Some(trace) = out.trace {
                scores.insert(id, client_score(&trace)?);
                traces.insert(id, trace);
                traces_up += 1;
            }
            updates.push(ClientUpdate {
                client_id: id,
                params: out.params,
                num_samples: world.clients[id].len(),
                local_steps: out.steps,
            });
        }

        if status == DetectionStatus::Pending && scores.len() == k {
            let all: Vec<ClientScore> = scores.values().copied().collect();
            kmeans_calls += 1;
            detection_round = Some(t);
            match kmeans_1d(&all) {
                Ok(a) => {
                    centroids = Some(a.centroids);
                    frozen = Some(label_clusters(&a)?);
                    status = DetectionStatus::Done;
                }
                Err(Error::DegenerateScores(_)) => {
                    frozen = Some((0..k).map(|c| (c, Quality::Clean)).collect());
                    status = DetectionStatus::Abstained;
                }
                Err(e) => return Err(e),
            }
        }

        let mut plan = cfg.plan_template();
        plan.labels = participants
            .iter()
            .map(|&id| (id, frozen.as_ref().map_or(Quality::Clean, |l| l[&id])))
            .collect();
        let mut skipped = false;
        match aggregate(&plan, &global, &updates) {
            Ok(next) => global = next,
            Err(Error::EmptyMass(_)) => skipped = true,
            Err(e) => return Err(e),
        }

        rounds.push(RoundMetrics {
            round: t,
            test_accuracy: evaluate(&global, &world.test)?,
            global_loss: mean_loss(&global, &world.test, opt.temperature)?,
            participating: participants.clone(),
            detection: status,
            transcript: RoundTranscript {
                params_down: participants.len(),
                params_up: updates.len(),
                norm_traces_up: traces_up,
            },
            skipped_aggregation: skipped,
        });
    }

    let truth: BTreeMap<usize, Quality> = world.clients.iter().map(|c| (c.client_id, c.truth_tag)).collect();
    let accuracy = match &frozen {
        Some(l) => Some(detection_accuracy(l, &truth)?),
        None => None,
    };
    let report = ExperimentReport {
        config: cfg.clone(),
        rounds,
        detection_status: status,
        detection_round,
        labels: frozen,
        detection_accuracy: accuracy,
        centroids,
        kmeans_invocations: kmeans_calls,
        scores: scores.into_values().collect(),
        traces: traces.into_values().collect(),
        truth,
        shards: world.clients.iter().map(ShardRecord::of).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { report, global })
}
