use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};

use crate::config::{DataSource, ExperimentConfig, PartitionKind};
use crate::dataspace::{corrupt_client, load_idx, partition_dirichlet, partition_iid, synth_blobs, ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::model::{init_params, ModelLayout, ModelParams};
use crate::rng::{derive_seed, stream_rng, Rng, Stream};
use crate::scalar::Scalar;

/// Everything a run starts from.
#[derive(Clone, Debug, PartialEq)]
pub struct World<T> {
    pub global: ModelParams<T>,
    pub clients: Vec<ClientDataset<T>>,
    pub test: Dataset<T>,
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Train and test splits named by the config.
pub fn load_datasets<T: Scalar>(cfg: &ExperimentConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    let d = &cfg.data;
    let seed = cfg.experiment.seed;
    match d.source {
        DataSource::Synthetic => Ok((
            synth_blobs(d.num_classes, d.per_class, d.side, d.sigma, derive_seed(seed, Stream::TrainData, &[]))?,
            synth_blobs(d.num_classes, d.test_per_class, d.side, d.sigma, derive_seed(seed, Stream::TestData, &[]))?,
        )),
        DataSource::Idx => {
            let path = |p: &Option<std::path::PathBuf>, key: &str| {
                p.clone().ok_or_else(|| Error::Config {
                    key: key.into(),
                    line: None,
                    message: "required when data.source = \"idx\"".into(),
                })
            };
            let train = load_idx(&path(&d.train_images, "data.train_images")?, &path(&d.train_labels, "data.train_labels")?)?;
            let test = load_idx(&path(&d.test_images, "data.test_images")?, &path(&d.test_labels, "data.test_labels")?)?;
            Ok((truncate(train, d.train_limit), truncate(test, d.test_limit)))
        }
    }
}

fn truncate<T: Scalar>(d: Dataset<T>, limit: Option<usize>) -> Dataset<T> {
    match limit {
        Some(n) if n < d.len() => d.subset(&(0..n).collect::<Vec<_>>()),
        _ => d,
    }
}

/// Partitions the train split, corrupts a seeded choice of noisy clients
/// and initialises the global model. The test split stays clean.
pub fn build_world<T: Scalar>(cfg: &ExperimentConfig) -> Result<World<T>> {
    cfg.validate()?;
    let (train, test) = load_datasets::<T>(cfg)?;
    world_from_data(cfg, &train, test)
}

pub(crate) fn world_from_data<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset<T>, test: Dataset<T>) -> Result<World<T>> {
    let seed = cfg.experiment.seed;
    let f = &cfg.federation;
    if test.feature_dim() != train.feature_dim() {
        return Err(Error::Consistency(format!(
            "train images have {} features but test images have {}",
            train.feature_dim(),
            test.feature_dim()
        )));
    }
    let part_seed = derive_seed(seed, Stream::Partition, &[]);
    let mut clients = match f.partition {
        PartitionKind::Iid => partition_iid(train, f.num_clients, part_seed)?,
        PartitionKind::Dirichlet => partition_dirichlet(train, f.num_clients, f.dirichlet_alpha, part_seed)?,
    };

    let mut pick = stream_rng(seed, Stream::NoisySelection, &[]);
    let noisy = index::sample(&mut pick, f.num_clients, f.noisy_clients);
    for id in noisy {
        let spec = cfg.corruption_spec(derive_seed(seed, Stream::Corruption, &[id as u64]));
        clients[id] = corrupt_client(&clients[id], &spec)?;
    }

    let classes = train.num_classes().max(test.num_classes());
    let layout = ModelLayout::new(train.feature_dim(), cfg.model.hidden.clone(), classes);
    let global = init_params(&layout, derive_seed(seed, Stream::Init, &[]))?;
    Ok(World { global, clients, test })
}

/// Clients taking part in `round`.
///
/// Round 0 uses the larger of the first-round and regular rates. Later
/// rounds fill their quota from `undetected` first, then uniformly from the
/// rest. The result is sorted.
pub fn sample_round(cfg: &ExperimentConfig, round: usize, undetected: &BTreeSet<usize>, rng: &mut Rng) -> Vec<usize> {
    let f = &cfg.federation;
    let k = f.num_clients;
    let rate = if round == 0 {
        f.first_round_participation.max(f.participation_rate)
    } else {
        f.participation_rate
    };
    let quota = round_half_up(rate * k as f64).clamp(1, k);
    if quota == k {
        return (0..k).collect();
    }
    let mut chosen: Vec<usize>;
    let pending: Vec<usize> = undetected.iter().copied().filter(|&c| c < k).collect();
    if round > 0 && !pending.is_empty() {
        if pending.len() >= quota {
            chosen = index::sample(rng, pending.len(), quota).into_iter().map(|i| pending[i]).collect();
        } else {
            let mut rest: Vec<usize> = (0..k).filter(|c| !undetected.contains(c)).collect();
            rest.shuffle(rng);
            chosen = pending;
            chosen.extend(rest.into_iter().take(quota - chosen.len()));
        }
    } else {
        chosen = index::sample(rng, k, quota).into_vec();
    }
    chosen.sort_unstable();
    chosen
}
