//! IID and Dirichlet label-skew client partitioning.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::dataspace::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Allocation attempts before `partition_dirichlet` gives up on finding a
/// split with no empty client.
pub const DIRICHLET_MAX_RETRIES: usize = 1000;

/// Seeded shuffle split into `k` shards whose sizes differ by at most one.
pub fn partition_iid<T: Scalar>(d: &Dataset<T>, k: usize, seed: u64) -> Result<Vec<ClientDataset<T>>> {
    if k == 0 {
        return Err(Error::arg("number of clients must be at least 1"));
    }
    if k > d.len() {
        return Err(Error::arg(format!(
            "cannot split {} samples across {k} clients",
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let base = d.len() / k;
    let extra = d.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for client in 0..k {
        let size = base + usize::from(client < extra);
        let indices = order[start..start + size].to_vec();
        start += size;
        shards.push(ClientDataset::from_indices(client, d, indices));
    }
    Ok(shards)
}

/// Label-skewed split: every class is spread over the `k` clients with
/// proportions drawn from a symmetric `Dirichlet(alpha)`.
///
/// Allocations leaving any client empty are redrawn, up to
/// [`DIRICHLET_MAX_RETRIES`] times.
pub fn partition_dirichlet<T: Scalar>(
    d: &Dataset<T>,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientDataset<T>>> {
    if k == 0 {
        return Err(Error::arg("number of clients must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    if k > d.len() {
        return Err(Error::Partition(format!(
            "{} samples cannot fill {k} non-empty clients",
            d.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes()];
    for (i, &l) in d.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = rng_from_seed(seed);

    for _ in 0..DIRICHLET_MAX_RETRIES {
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut degenerate = false;
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                degenerate = true;
                break;
            }
            let n = members.len();
            let mut cumulative = 0.0;
            let mut start = 0;
            for (client, &g) in draws.iter().enumerate() {
                cumulative += g / total;
                let end = if client + 1 == k {
                    n
                } else {
                    ((cumulative * n as f64).round() as usize).clamp(start, n)
                };
                assigned[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if degenerate || assigned.iter().any(Vec::is_empty) {
            continue;
        }
        return Ok(assigned
            .into_iter()
            .enumerate()
            .map(|(client, mut indices)| {
                indices.sort_unstable();
                ClientDataset::from_indices(client, d, indices)
            })
            .collect());
    }
    Err(Error::Partition(format!(
        "no allocation with every client non-empty after {DIRICHLET_MAX_RETRIES} draws (k={k}, alpha={alpha})"
    )))
}
