use super::Dataset;
use crate::seed::rng_from;
use crate::NodeId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("invalid partition plan: {0}")]
    BadPlan(String),
    #[error("partition {index} would hold {size} samples; need at least 2 (one for training, one holdout)")]
    Empty { index: usize, size: usize },
    #[error("one-to-one assignment needs as many partitions ({partitions}) as nodes ({nodes})")]
    SizeMismatch { partitions: usize, nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    OneToOne,
    RandomWithReplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub num_partitions: usize,
    /// Share of partitions (rounded down) drawn as uniform random splits.
    pub iid_fraction: f64,
    /// Dirichlet concentration for the remaining partitions.
    pub non_iid_alpha: f64,
    pub assignment: Assignment,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl PartitionPlan {
    fn check(&self, n: usize) -> Result<(), PartitionError> {
        if self.num_partitions == 0 {
            return Err(PartitionError::BadPlan(
                "num_partitions must be at least 1".into(),
            ));
        }
        if self.num_partitions > n {
            return Err(PartitionError::BadPlan(format!(
                "num_partitions {} exceeds {} samples",
                self.num_partitions, n
            )));
        }
        if !(0.0..=1.0).contains(&self.iid_fraction) {
            return Err(PartitionError::BadPlan(
                "iid_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.non_iid_alpha > 0.0 && self.non_iid_alpha.is_finite()) {
            return Err(PartitionError::BadPlan(
                "non_iid_alpha must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(PartitionError::BadPlan(
                "holdout_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Row indices owned by one partition. `holdout_indices` are never trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

impl Partition {
    pub fn size(&self) -> usize {
        self.indices.len() + self.holdout_indices.len()
    }
}

pub fn label_histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &y in labels {
        h[y] += 1;
    }
    h
}

/// Largest-remainder apportionment of `total` items by `weights`; ties in the
/// remainder go to the lower index.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>().min(total);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn dirichlet(alpha: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        draws.iter().map(|g| g / sum).collect()
    } else {
        // Every draw underflowed: put the mass on one class.
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Splits every row of `dataset` into `plan.num_partitions` partitions.
///
/// The first `floor(iid_fraction * P)` partitions share a proportional slice
/// of the shuffled rows split evenly. Each remaining partition draws class
/// proportions from `Dirichlet(alpha)`, and every class's remaining rows are
/// apportioned across those partitions by their proportion for that class.
pub fn partition(
    dataset: &Dataset,
    plan: &PartitionPlan,
) -> Result<Vec<Partition>, PartitionError> {
    let n = dataset.len();
    plan.check(n)?;
    let p = plan.num_partitions;
    let n_iid = ((plan.iid_fraction * p as f64) + 1e-9).floor() as usize;
    let n_non = p - n_iid;
    let mut rng = rng_from(plan.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let iid_pool = if n_non == 0 {
        n
    } else {
        ((n as u128 * n_iid as u128) / p as u128) as usize
    };

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); p];
    let iid_sizes = apportion(iid_pool, &vec![1.0; n_iid.max(1)]);
    let mut at = 0;
    for (j, size) in iid_sizes.iter().enumerate().take(n_iid) {
        members[j].extend_from_slice(&order[at..at + size]);
        at += size;
    }

    if n_non > 0 {
        let c = dataset.num_classes;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
        for &i in &order[iid_pool..] {
            by_class[dataset.labels[i]].push(i);
        }
        let props: Vec<Vec<f64>> = (0..n_non)
            .map(|_| dirichlet(plan.non_iid_alpha, c, &mut rng))
            .collect();
        for (k, rows) in by_class.iter().enumerate() {
            let weights: Vec<f64> = props.iter().map(|pj| pj[k]).collect();
            let counts = apportion(rows.len(), &weights);
            let mut at = 0;
            for (j, cnt) in counts.into_iter().enumerate() {
                members[n_iid + j].extend_from_slice(&rows[at..at + cnt]);
                at += cnt;
            }
        }
    }

    members
        .into_iter()
        .enumerate()
        .map(|(index, mut rows)| {
            if rows.len() < 2 {
                return Err(PartitionError::Empty {
                    index,
                    size: rows.len(),
                });
            }
            rows.sort_unstable();
            rows.shuffle(&mut rng);
            let holdout = ((plan.holdout_fraction * rows.len() as f64).floor() as usize).max(1);
            let mut holdout_indices = rows[..holdout].to_vec();
            let mut indices = rows[holdout..].to_vec();
            holdout_indices.sort_unstable();
            indices.sort_unstable();
            Ok(Partition {
                indices,
                holdout_indices,
            })
        })
        .collect()
}

/// Maps each node to a partition index.
pub fn assign(
    num_partitions: usize,
    node_ids: &[NodeId],
    strategy: Assignment,
    seed: u64,
) -> Result<BTreeMap<NodeId, usize>, PartitionError> {
    let mut rng = rng_from(seed);
    match strategy {
        Assignment::OneToOne => {
            if num_partitions != node_ids.len() {
                return Err(PartitionError::SizeMismatch {
                    partitions: num_partitions,
                    nodes: node_ids.len(),
                });
            }
            let mut perm: Vec<usize> = (0..num_partitions).collect();
            perm.shuffle(&mut rng);
            Ok(node_ids.iter().copied().zip(perm).collect())
        }
        Assignment::RandomWithReplacement => {
            if num_partitions == 0 {
                return Err(PartitionError::BadPlan("no partitions to assign".into()));
            }
            Ok(node_ids
                .iter()
                .map(|&id| (id, rng.random_range(0..num_partitions)))
                .collect())
        }
    }
}
