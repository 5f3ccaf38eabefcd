//! Server-side aggregation: FedAvg, FedProx, coordinatewise trimmed mean,
//! FedNova normalised averaging, and the noise-sifting reweighting that
//! composes with each of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataspace::Quality;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Mixing weight per client id.
pub type Weights<T> = BTreeMap<usize, T>;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    FedAvg,
    /// Aggregates like FedAvg; the proximal term lives in local training.
    FedProx,
    FedTrimmedAvg,
    FedNova,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::FedAvg,
        Strategy::FedProx,
        Strategy::FedTrimmedAvg,
        Strategy::FedNova,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
            Strategy::FedTrimmedAvg => "fedtrimmedavg",
            Strategy::FedNova => "fednova",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown strategy `{s}`")))
    }
}

/// A client's post-training parameters as received by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    pub params: ModelParams<T>,
    pub num_samples: usize,
    pub local_steps: usize,
}

/// How one round of updates is combined.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationPlan {
    pub strategy: Strategy,
    /// Clean-client factor.
    pub alpha: f64,
    /// Noisy-client factor.
    pub beta: f64,
    pub trim_ratio: f64,
    pub labels: BTreeMap<usize, Quality>,
    pub ns_enabled: bool,
}

impl AggregationPlan {
    pub fn bare(strategy: Strategy) -> Self {
        Self {
            strategy,
            alpha: 2.0,
            beta: 0.3,
            trim_ratio: 0.2,
            labels: BTreeMap::new(),
            ns_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::arg(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(0.0..0.5).contains(&self.trim_ratio) {
            return Err(Error::arg(format!("trim_ratio must lie in [0, 0.5), got {}", self.trim_ratio)));
        }
        Ok(())
    }
}

fn check_updates<T: Scalar>(global: &ModelParams<T>, updates: &[ClientUpdate<T>]) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::arg("no client updates to aggregate"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for u in updates {
        if !u.params.same_shape(global) {
            return Err(Error::arg(format!(
                "client {} returned parameters with a different layout",
                u.client_id
            )));
        }
        if !seen.insert(u.client_id) {
            return Err(Error::arg(format!("duplicate update from client {}", u.client_id)));
        }
    }
    Ok(())
}

fn check_weights<T: Scalar>(updates: &[ClientUpdate<T>], weights: &Weights<T>) -> Result<()> {
    let mut total = 0.0;
    for u in updates {
        let w = weights
            .get(&u.client_id)
            .ok_or_else(|| Error::arg(format!("no weight for client {}", u.client_id)))?
            .as_f64();
        if !(w >= 0.0) {
            return Err(Error::arg(format!("negative weight for client {}", u.client_id)));
        }
        total += w;
    }
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::arg(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Sample-count-proportional weights.
pub fn base_weights<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<Weights<T>> {
    if updates.is_empty() {
        return Err(Error::arg("no client updates"));
    }
    if let Some(u) = updates.iter().find(|u| u.num_samples == 0) {
        return Err(Error::arg(format!("client {} reports zero samples", u.client_id)));
    }
    let total = T::of(updates.iter().map(|u| u.num_samples).sum::<usize>() as f64);
    Ok(updates
        .iter()
        .map(|u| (u.client_id, T::of(u.num_samples as f64) / total))
        .collect())
}

/// Scales clean weights by `alpha` and noisy weights by `beta`, then
/// renormalises onto the simplex.
///
/// When every client carries the same factor (`alpha == beta`, or a single
/// label among the participants) the input is returned unchanged.
pub fn ns_reweight<T: Scalar>(
    w: &Weights<T>,
    labels: &BTreeMap<usize, Quality>,
    alpha: f64,
    beta: f64,
) -> Result<Weights<T>> {
    let mut factors = BTreeMap::new();
    for &id in w.keys() {
        let q = labels
            .get(&id)
            .ok_or_else(|| Error::arg(format!("client {id} has no clean/noisy label")))?;
        factors.insert(id, if *q == Quality::Clean { alpha } else { beta });
    }
    let mass: f64 = w.iter().map(|(id, v)| v.as_f64() * factors[id]).sum();
    if !(mass > 0.0) {
        return Err(Error::EmptyMass(format!(
            "beta = {beta} leaves no weight on {} participant(s)",
            w.len()
        )));
    }
    let first = factors.values().next().copied();
    if factors.values().all(|f| Some(*f) == first) {
        return Ok(w.clone());
    }
    let (a, b) = (T::of(alpha), T::of(beta));
    let scaled: Weights<T> = w
        .iter()
        .map(|(&id, &v)| (id, v * if labels[&id] == Quality::Clean { a } else { b }))
        .collect();
    let total: T = scaled.values().copied().sum();
    Ok(scaled.into_iter().map(|(id, v)| (id, v / total)).collect())
}

/// `θ ← Σ_k w_k θ_k`, coordinatewise.
pub fn aggregate_fedavg<T: Scalar>(
    global: &ModelParams<T>,
    updates: &[ClientUpdate<T>],
    weights: &Weights<T>,
) -> Result<ModelParams<T>> {
    check_updates(global, updates)?;
    check_weights(updates, weights)?;
    let mut out = ModelParams::zeros(global.layout().clone());
    for u in updates {
        let w = weights[&u.client_id];
        for (o, &v) in out.values_mut().iter_mut().zip(u.params.values()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Coordinatewise trimmed mean: drop the `t = ⌊trim_ratio·K⌋` largest and
/// smallest client values per coordinate and average the rest.
///
/// With `factors`, survivors are combined as `Σ f_k x_k / Σ f_k`; a
/// coordinate whose survivors all carry zero factor falls back to their
/// plain mean.
pub fn aggregate_trimmed<T: Scalar>(
    global: &ModelParams<T>,
    updates: &[ClientUpdate<T>],
    trim_ratio: f64,
    factors: Option<&Weights<T>>,
) -> Result<ModelParams<T>> {
    check_updates(global, updates)?;
    if !(0.0..0.5).contains(&trim_ratio) {
        return Err(Error::arg(format!("trim_ratio must lie in [0, 0.5), got {trim_ratio}")));
    }
    let k = updates.len();
    let t = (trim_ratio * k as f64).floor() as usize;
    if 2 * t >= k {
        return Err(Error::arg(format!("trimming {t} from each side of {k} clients leaves nothing")));
    }
    let f: Vec<T> = match factors {
        Some(map) => updates
            .iter()
            .map(|u| {
                map.get(&u.client_id)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("no factor for client {}", u.client_id)))
            })
            .collect::<Result<_>>()?,
        None => vec![T::one(); k],
    };
    let mut out = ModelParams::zeros(global.layout().clone());
    let mut column: Vec<(T, T)> = Vec::with_capacity(k);
    let keep = k - 2 * t;
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        column.clear();
        column.extend(updates.iter().zip(&f).map(|(u, &fk)| (u.params.values()[i], fk)));
        column.sort_by(|a, b| a.0.as_f64().total_cmp(&b.0.as_f64()));
        let survivors = &column[t..k - t];
        let mass: T = survivors.iter().map(|s| s.1).sum();
        *o = if mass > T::zero() {
            survivors.iter().map(|s| s.0 * s.1).sum::<T>() / mass
        } else {
            survivors.iter().map(|s| s.0).sum::<T>() / T::of(keep as f64)
        };
    }
    Ok(out)
}

/// Normalised averaging: `d_k = (θ_g − θ_k) / τ_k`,
/// `τ_eff = Σ w_k τ_k`, `θ ← θ_g − τ_eff Σ w_k d_k`.
pub fn aggregate_fednova<T: Scalar>(
    global: &ModelParams<T>,
    updates: &[ClientUpdate<T>],
    weights: &Weights<T>,
) -> Result<ModelParams<T>> {
    check_updates(global, updates)?;
    check_weights(updates, weights)?;
    if let Some(u) = updates.iter().find(|u| u.local_steps == 0) {
        return Err(Error::arg(format!("client {} took zero local steps", u.client_id)));
    }
    let tau_eff: T = updates
        .iter()
        .map(|u| weights[&u.client_id] * T::of(u.local_steps as f64))
        .sum();
    let mut direction = vec![T::zero(); global.len()];
    for u in updates {
        let scale = weights[&u.client_id] / T::of(u.local_steps as f64);
        for ((d, &g), &v) in direction.iter_mut().zip(global.values()).zip(u.params.values()) {
            *d += scale * (g - v);
        }
    }
    let values = global
        .values()
        .iter()
        .zip(&direction)
        .map(|(&g, &d)| g - tau_eff * d)
        .collect();
    ModelParams::from_values(global.layout().clone(), values)
}

/// Full server step for one round: base weights, optional noise-sifting
/// reweighting, then the strategy's combiner.
pub fn aggregate<T: Scalar>(
    plan: &AggregationPlan,
    global: &ModelParams<T>,
    updates: &[ClientUpdate<T>],
) -> Result<ModelParams<T>> {
    plan.validate()?;
    check_updates(global, updates)?;
    let base = base_weights(updates)?;
    if plan.strategy == Strategy::FedTrimmedAvg {
        let factors: Option<Weights<T>> = if plan.ns_enabled {
            Some(ns_factors(updates, plan)?)
        } else {
            None
        };
        return aggregate_trimmed(global, updates, plan.trim_ratio, factors.as_ref());
    }
    let weights = if plan.ns_enabled {
        ns_reweight(&base, &plan.labels, plan.alpha, plan.beta)?
    } else {
        base
    };
    match plan.strategy {
        Strategy::FedAvg | Strategy::FedProx => aggregate_fedavg(global, updates, &weights),
        Strategy::FedNova => aggregate_fednova(global, updates, &weights),
        Strategy::FedTrimmedAvg => unreachable!("handled above"),
    }
}

/// Per-client `alpha`/`beta` multipliers for the trimmed-mean composition.
fn ns_factors<T: Scalar>(updates: &[ClientUpdate<T>], plan: &AggregationPlan) -> Result<Weights<T>> {
    updates
        .iter()
        .map(|u| {
            let q = plan
                .labels
                .get(&u.client_id)
                .ok_or_else(|| Error::arg(format!("client {} has no clean/noisy label", u.client_id)))?;
            let f = if *q == Quality::Clean { plan.alpha } else { plan.beta };
            Ok((u.client_id, T::of(f)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelLayout;

    fn layout() -> ModelLayout {
        ModelLayout::new(2, vec![], 1)
    }

    fn update(id: usize, fill: f64, n: usize, steps: usize) -> ClientUpdate<f64> {
        ClientUpdate {
            client_id: id,
            params: ModelParams::from_values(layout(), vec![fill; 3]).unwrap(),
            num_samples: n,
            local_steps: steps,
        }
    }

    fn labels(pairs: &[(usize, Quality)]) -> BTreeMap<usize, Quality> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn base_weight_examples() {
        let w = base_weights(&[update(0, 0.0, 5, 1), update(1, 0.0, 5, 1)]).unwrap();
        assert_eq!(w[&0], 0.5);
        let w = base_weights(&[update(0, 0.0, 1, 1), update(1, 0.0, 3, 1)]).unwrap();
        assert_eq!((w[&0], w[&1]), (0.25, 0.75));
        let w = base_weights(&[update(4, 0.0, 9, 1)]).unwrap();
        assert_eq!(w[&4], 1.0);
    }

    #[test]
    fn reweight_examples() {
        let w: Weights<f64> = [(0, 0.5), (1, 0.5)].into_iter().collect();
        let l = labels(&[(0, Quality::Clean), (1, Quality::Noisy)]);
        for ab in [0.3, 1.0, 7.0] {
            assert_eq!(ns_reweight(&w, &l, ab, ab).unwrap(), w);
        }
        let r = ns_reweight(&w, &l, 2.0, 0.3).unwrap();
        assert!((r[&0] - 2.0 / 2.3).abs() < 1e-12);
        assert!((r[&1] - 0.3 / 2.3).abs() < 1e-12);
        let r = ns_reweight(&w, &l, 2.0, 0.0).unwrap();
        assert_eq!(r[&1], 0.0);
        assert_eq!(r[&0], 1.0);
    }

    #[test]
    fn reweight_single_label_and_empty_mass() {
        let w: Weights<f64> = [(0, 0.25), (1, 0.75)].into_iter().collect();
        let noisy = labels(&[(0, Quality::Noisy), (1, Quality::Noisy)]);
        assert_eq!(ns_reweight(&w, &noisy, 2.0, 0.3).unwrap(), w);
        assert!(matches!(ns_reweight(&w, &noisy, 2.0, 0.0), Err(Error::EmptyMass(_))));
        assert!(ns_reweight(&w, &labels(&[(0, Quality::Clean)]), 2.0, 0.3).is_err());
    }

    #[test]
    fn fedavg_examples() {
        let g = ModelParams::zeros(layout());
        let one = [update(3, 0.7, 10, 1)];
        let w: Weights<f64> = [(3, 1.0)].into_iter().collect();
        assert_eq!(aggregate_fedavg(&g, &one, &w).unwrap(), one[0].params);

        let same = [update(0, 0.4, 1, 1), update(1, 0.4, 1, 1)];
        let w: Weights<f64> = [(0, 0.9), (1, 0.1)].into_iter().collect();
        for v in aggregate_fedavg(&g, &same, &w).unwrap().values() {
            assert!((v - 0.4).abs() < 1e-15);
        }

        let pair = [update(0, 0.0, 1, 1), update(1, 1.0, 3, 1)];
        let w: Weights<f64> = [(0, 0.25), (1, 0.75)].into_iter().collect();
        assert!(aggregate_fedavg(&g, &pair, &w).unwrap().values().iter().all(|&v| v == 0.75));

        let bad: Weights<f64> = [(0, 0.5), (1, 0.75)].into_iter().collect();
        assert!(aggregate_fedavg(&g, &pair, &bad).is_err());
    }

    #[test]
    fn trimmed_examples() {
        let g = ModelParams::zeros(layout());
        let ups: Vec<_> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| update(i, v, 1, 1))
            .collect();
        assert!(aggregate_trimmed(&g, &ups, 0.2, None).unwrap().values().iter().all(|&v| v == 3.0));
        let mean = aggregate_trimmed(&g, &ups, 0.0, None).unwrap();
        assert!((mean.values()[0] - 22.0).abs() < 1e-12);
        let same: Vec<_> = (0..4).map(|i| update(i, 0.6, 1, 1)).collect();
        assert!(aggregate_trimmed(&g, &same, 0.2, None).unwrap().values().iter().all(|&v| v == 0.6));
        assert!(aggregate_trimmed(&g, &ups[..2], 0.49, None).is_ok());
        let three: Vec<_> = (0..3).map(|i| update(i, 0.6, 1, 1)).collect();
        assert!(aggregate_trimmed(&g, &three[..2], 0.4, None).is_ok());
        assert!(aggregate_trimmed(&g, &three, 0.5, None).is_err());
    }

    #[test]
    fn fednova_examples() {
        let g = ModelParams::from_values(layout(), vec![0.5, -0.5, 0.1]).unwrap();
        let one = [update(0, 0.9, 4, 7)];
        let w: Weights<f64> = [(0, 1.0)].into_iter().collect();
        for (a, b) in aggregate_fednova(&g, &one, &w).unwrap().values().iter().zip(one[0].params.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let stay: Vec<_> = (0..3)
            .map(|i| ClientUpdate {
                client_id: i,
                params: g.clone(),
                num_samples: 1,
                local_steps: i + 1,
            })
            .collect();
        let w = base_weights(&stay).unwrap();
        assert_eq!(aggregate_fednova(&g, &stay, &w).unwrap(), g);
        let zero = [update(0, 0.9, 4, 0)];
        let w: Weights<f64> = [(0, 1.0)].into_iter().collect();
        assert!(aggregate_fednova(&g, &zero, &w).is_err());
    }

    #[test]
    fn twenty_client_clean_mass() {
        let ups: Vec<_> = (0..20).map(|i| update(i, 0.0, 10, 1)).collect();
        let l: BTreeMap<usize, Quality> = (0..20)
            .map(|i| (i, if i < 5 { Quality::Clean } else { Quality::Noisy }))
            .collect();
        let w = ns_reweight(&base_weights(&ups).unwrap(), &l, 2.0, 0.3).unwrap();
        let clean: f64 = (0..5).map(|i| w[&i]).sum();
        assert!((clean - 10.0 / 14.5).abs() < 1e-12);
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("krum".parse::<Strategy>().is_err());
    }
}
