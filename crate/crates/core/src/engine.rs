//! The round loop.
//!
//! Each round: consensus assigns roles, trainers run local SGD from the
//! current global model (in parallel, collected in node order), attackers
//! poison or perturb, validation filters, the aggregator folds the accepted
//! payloads, stakes are rewarded, a block is appended and the new global model
//! is scored on the test split.

use crate::aggregation::{self, AggregationError, Aggregator};
use crate::attacks::{Attack, AttackError, AttackSetup};
use crate::config::{ConfigError, ConfigIssue, SimulationConfig};
use crate::consensus::{update_stake, Consensus, ConsensusError, RoundState};
use crate::dataset::{
    assign, generate_blobs, load_idx, partition, split_train_val_test, Dataset, DatasetError,
    IdxError, Partition, PartitionError, PartitionPlan,
};
use crate::hash::Digest;
use crate::ledger::encode::param_vector_digest;
use crate::ledger::{verify_chain, Block, Chain, ChainFailure, LedgerError, UpdateRecord};
use crate::model::{
    evaluate_per_class, init_model, mlp_shapes, train_local, Model, ModelError, ParamVector,
    TrainSpec,
};
use crate::registry::RegistryError;
use crate::seed::{tags, GLOBAL_STREAM};
use crate::strategies::Registries;
use crate::update::ModelUpdate;
use crate::validation::{ValidationContext, ValidationError, Validator};
use crate::{NodeId, UpdateForm};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::AtomicUsize;
use std::time::Instant;

pub use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Consensus,
    Training,
    Validation,
    Aggregation,
    Ledger,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Setup => "setup",
            Stage::Consensus => "consensus",
            Stage::Training => "training",
            Stage::Validation => "validation",
            Stage::Aggregation => "aggregation",
            Stage::Ledger => "ledger",
            Stage::Metrics => "metrics",
        };
        f.write_str(s)
    }
}

/// A run that stopped early. `partial_metrics` covers the completed rounds.
#[derive(Debug, thiserror::Error)]
#[error("round {round}, {stage}: {source}")]
pub struct RunError {
    /// 0 for setup failures.
    pub round: usize,
    pub stage: Stage,
    #[source]
    pub source: StageError,
    pub partial_metrics: Vec<RoundMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub submitted: usize,
    pub accepted: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    pub producer: NodeId,
    /// Wall-clock time of the round. Not deterministic; kept out of digests.
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub chain: Chain,
    pub metrics: Vec<RoundMetrics>,
    pub initial_model: Model,
    pub final_model: Model,
    pub final_model_digest: Digest,
    pub config_digest: Digest,
    /// Every submitted payload, keyed by digest.
    pub payloads: BTreeMap<Digest, ParamVector>,
    /// Stakes after the last reward step.
    pub final_stakes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Threads for per-round training and validation. Results do not depend
    /// on this.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// One simulated participant.
pub struct NodeState {
    pub id: NodeId,
    pub partition: usize,
    /// Training rows (already poisoned for data attacks).
    pub train: Dataset,
    pub holdout: Dataset,
    pub attack: Option<Box<dyn Attack>>,
    pub attack_seed: u64,
    pub stake: f64,
    pub hashpower: f64,
}

/// Data and partitioning shared by every node, before any attack.
#[derive(Debug, Clone)]
pub struct Setup {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub partitions: Vec<Partition>,
    pub assignment: BTreeMap<NodeId, usize>,
}

/// Loads or generates the dataset, splits it, and partitions the train split.
pub fn prepare(config: &SimulationConfig) -> Result<Setup, StageError> {
    let seed = config.master_seed;
    let d = &config.dataset;
    let data = match d.kind.as_str() {
        "blobs" => generate_blobs(
            d.num_classes.unwrap_or(0),
            d.per_class.unwrap_or(0),
            d.dim.unwrap_or(0),
            d.spread.unwrap_or(0.0),
            derive_seed(seed, 0, GLOBAL_STREAM, tags::DATA),
        )?,
        "mnist" => {
            let (Some(images), Some(labels)) = (&d.images_path, &d.labels_path) else {
                return Err(StageError::Other(
                    "mnist needs images_path and labels_path".into(),
                ));
            };
            let full = load_idx(images, labels)?;
            match d.max_samples {
                Some(m) if m < full.len() => full.subset(&(0..m).collect::<Vec<_>>()),
                _ => full,
            }
        }
        other => return Err(StageError::Other(format!("unknown dataset kind `{other}`"))),
    };
    let (train, validation, test) = split_train_val_test(
        &data,
        d.validation_fraction,
        d.test_fraction,
        derive_seed(seed, 0, GLOBAL_STREAM, tags::SPLIT),
    );
    if test.is_empty() {
        return Err(StageError::Other(
            "test split is empty; raise test_fraction or the sample count".into(),
        ));
    }
    let p = &d.partition;
    let plan = PartitionPlan {
        num_partitions: config.num_partitions(),
        iid_fraction: p.iid_fraction,
        non_iid_alpha: p.non_iid_alpha,
        assignment: p.assignment,
        holdout_fraction: p.holdout_fraction,
        seed: derive_seed(seed, 0, GLOBAL_STREAM, tags::PARTITION),
    };
    let partitions = partition(&train, &plan)?;
    let ids: Vec<NodeId> = (0..config.nodes as u32).map(NodeId).collect();
    let assignment = assign(
        partitions.len(),
        &ids,
        p.assignment,
        derive_seed(seed, 0, GLOBAL_STREAM, tags::ASSIGN),
    )?;
    Ok(Setup {
        train,
        validation,
        test,
        partitions,
        assignment,
    })
}

fn build_nodes(
    config: &SimulationConfig,
    setup: &Setup,
    registries: &Registries,
) -> Result<Vec<NodeState>, StageError> {
    let attackers: BTreeMap<u32, _> = config.attackers.iter().map(|a| (a.node_id, a)).collect();
    (0..config.nodes as u32)
        .map(|i| {
            let id = NodeId(i);
            let pi = setup.assignment[&id];
            let part = &setup.partitions[pi];
            let mut train = setup.train.subset(&part.indices);
            let holdout = setup.train.subset(&part.holdout_indices);
            let (attack, attack_seed) = match attackers.get(&i) {
                None => (None, config.master_seed),
                Some(a) => {
                    let attack = registries.attack.build(
                        &a.kind,
                        &AttackSetup {
                            config: (*a).clone(),
                            num_classes: setup.train.num_classes,
                        },
                    )?;
                    let base = a.seed.unwrap_or(config.master_seed);
                    train =
                        attack.poison_data(&train, derive_seed(base, 0, i as u64, tags::ATTACK))?;
                    (Some(attack), base)
                }
            };
            Ok(NodeState {
                id,
                partition: pi,
                train,
                holdout,
                attack,
                attack_seed,
                stake: config.consensus.pos_initial_stake,
                hashpower: config.consensus.hashpower(i),
            })
        })
        .collect()
}

/// Runs with the built-in strategies and one worker per core.
pub fn run(config: &SimulationConfig) -> Result<RunResult, RunError> {
    run_with(config, &RunOptions::default(), &Registries::default())
}

struct Strategies {
    consensus: Box<dyn Consensus>,
    validator: Box<dyn Validator>,
    aggregator: Box<dyn Aggregator>,
}

pub fn run_with(
    config: &SimulationConfig,
    options: &RunOptions,
    registries: &Registries,
) -> Result<RunResult, RunError> {
    let setup_err = |source: StageError| RunError {
        round: 0,
        stage: Stage::Setup,
        source,
        partial_metrics: Vec::new(),
    };
    // A zero-round run is meaningful here (genesis only) even though config
    // files must ask for at least one round.
    if let Err(e) = config.validate(registries) {
        let issues: Vec<ConfigIssue> = e
            .issues()
            .iter()
            .filter(|i| !(config.rounds == 0 && i.path == "$.rounds"))
            .cloned()
            .collect();
        if !issues.is_empty() || e.issues().is_empty() {
            return Err(setup_err(ConfigError::Invalid(issues).into()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| setup_err(StageError::Other(format!("cannot start worker pool: {e}"))))?;
    pool.install(|| {
        let strategies = Strategies {
            consensus: registries
                .consensus
                .build(&config.consensus.kind, &config.consensus)
                .map_err(|e| setup_err(e.into()))?,
            validator: registries
                .validation
                .build(&config.validation.kind, &config.validation)
                .map_err(|e| setup_err(e.into()))?,
            aggregator: registries
                .aggregation
                .build(&config.aggregation.kind, &config.aggregation)
                .map_err(|e| setup_err(e.into()))?,
        };
        let setup = prepare(config).map_err(setup_err)?;
        let nodes = build_nodes(config, &setup, registries).map_err(setup_err)?;
        let shapes = mlp_shapes(
            setup.train.dim(),
            &config.model.hidden_dims,
            setup.train.num_classes,
        );
        let initial = init_model(
            &shapes,
            derive_seed(config.master_seed, 0, GLOBAL_STREAM, tags::INIT),
        )
        .map_err(|e| setup_err(e.into()))?;
        let mut sim = Simulation {
            config,
            strategies,
            setup,
            holdouts: nodes.iter().map(|n| (n.id, n.holdout.clone())).collect(),
            stakes: nodes.iter().map(|n| n.stake).collect(),
            nodes,
            chain: Chain::genesis(param_vector_digest(&initial.params)),
            global: initial.clone(),
            payloads: BTreeMap::new(),
            metrics: Vec::new(),
        };
        for round in 1..=config.rounds {
            if let Err((stage, source)) = sim.run_round(round) {
                return Err(RunError {
                    round,
                    stage,
                    source,
                    partial_metrics: sim.metrics,
                });
            }
        }
        Ok(RunResult {
            final_model_digest: param_vector_digest(&sim.global.params),
            config_digest: config.digest(),
            chain: sim.chain,
            metrics: sim.metrics,
            initial_model: initial,
            final_model: sim.global,
            payloads: sim.payloads,
            final_stakes: sim.stakes,
        })
    })
}

struct Simulation<'a> {
    config: &'a SimulationConfig,
    strategies: Strategies,
    setup: Setup,
    nodes: Vec<NodeState>,
    holdouts: BTreeMap<NodeId, Dataset>,
    stakes: Vec<f64>,
    chain: Chain,
    global: Model,
    payloads: BTreeMap<Digest, ParamVector>,
    metrics: Vec<RoundMetrics>,
}

type StageResult<T> = Result<T, (Stage, StageError)>;

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> (Stage, StageError) {
    move |e| (stage, e.into())
}

impl Simulation<'_> {
    fn train_node(&self, node: &NodeState, round: usize) -> Result<ModelUpdate, StageError> {
        let t = &self.config.train;
        let spec = TrainSpec {
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: derive_seed(
                self.config.master_seed,
                round as u64,
                node.id.0 as u64,
                tags::SHUFFLE,
            ),
        };
        let trained = train_local(&self.global, &node.train, &spec)?;
        let mut payload = match self.config.update_form {
            UpdateForm::Weights => trained.params,
            // Average gradient over the local run: equals the exact batch
            // gradient for one full-batch epoch.
            UpdateForm::Gradients => {
                let g = self
                    .global
                    .params
                    .values()
                    .iter()
                    .zip(trained.params.values())
                    .map(|(before, after)| (before - after) / t.learning_rate)
                    .collect();
                self.global.params.with_values(g)?
            }
        };
        if let Some(attack) = &node.attack {
            let seed = derive_seed(
                node.attack_seed,
                round as u64,
                node.id.0 as u64,
                tags::ATTACK,
            );
            payload = attack.perturb_payload(&payload, seed)?;
        }
        Ok(ModelUpdate::new(
            node.id,
            self.config.update_form,
            payload,
            node.train.len() as u64,
        ))
    }

    fn run_round(&mut self, round: usize) -> StageResult<()> {
        let started = Instant::now();
        let tip = self.chain.tip();
        let state = RoundState {
            round: round as u64,
            master_seed: self.config.master_seed,
            prev_hash: tip.block_hash,
            stakes: &self.stakes,
        };
        let roles = self
            .strategies
            .consensus
            .select_roles(&state)
            .map_err(at(Stage::Consensus))?;
        let trainers = self.strategies.consensus.trainers(&roles, self.nodes.len());

        let updates: Vec<ModelUpdate> = trainers
            .par_iter()
            .map(|id| self.train_node(&self.nodes[id.0 as usize], round))
            .collect::<Result<_, _>>()
            .map_err(|e| (Stage::Training, e))?;

        let evaluations = AtomicUsize::new(0);
        let ctx = ValidationContext {
            global: &self.global,
            form: self.config.update_form,
            server_lr: self.config.aggregation.server_lr,
            validators: &roles.validators,
            shared_set: Some(&self.setup.validation),
            local_sets: &self.holdouts,
            evaluations: &evaluations,
        };
        let verdicts = self
            .strategies
            .validator
            .validate(&updates, &ctx)
            .map_err(at(Stage::Validation))?;
        if verdicts.len() != updates.len() {
            return Err((
                Stage::Validation,
                StageError::Other(format!(
                    "{} verdicts for {} updates",
                    verdicts.len(),
                    updates.len()
                )),
            ));
        }

        let accepted: Vec<&ModelUpdate> = updates
            .iter()
            .zip(&verdicts)
            .filter(|(_, v)| v.accepted)
            .map(|(u, _)| u)
            .collect();
        let next = aggregation::apply(
            &self.global,
            &accepted,
            self.strategies.aggregator.as_ref(),
            self.config.aggregation.server_lr,
        )
        .map_err(at(Stage::Aggregation))?;

        let authors: Vec<NodeId> = accepted.iter().map(|u| u.author).collect();
        update_stake(&mut self.stakes, &authors, self.config.consensus.pos_reward);

        let mut rejected_by_reason = BTreeMap::new();
        for v in verdicts.iter().filter(|v| !v.accepted) {
            let reason = v.reason.map_or("unspecified", |r| r.as_str());
            *rejected_by_reason.entry(reason.to_string()).or_insert(0) += 1;
        }
        let accepted_ids: Vec<Digest> = accepted.iter().map(|u| u.digest).collect();
        let records: Vec<UpdateRecord> = updates
            .iter()
            .zip(verdicts)
            .map(|(u, v)| UpdateRecord::new(u, v))
            .collect();
        let block = Block::new(
            round as u64,
            tip.block_hash,
            records,
            accepted_ids,
            roles.producer,
            roles.proof,
            param_vector_digest(&next.params),
        )
        .map_err(|e| (Stage::Ledger, LedgerError::from(e).into()))?;
        self.chain.append_block(block).map_err(at(Stage::Ledger))?;
        for u in &updates {
            self.payloads
                .entry(u.digest)
                .or_insert_with(|| u.payload.clone());
        }
        let submitted = updates.len();
        let n_accepted = accepted.len();
        self.global = next;

        let (global_accuracy, per_class_accuracy) =
            evaluate_per_class(&self.global, &self.setup.test).map_err(at(Stage::Metrics))?;
        self.metrics.push(RoundMetrics {
            round,
            global_accuracy,
            per_class_accuracy,
            submitted,
            accepted: n_accepted,
            rejected_by_reason,
            producer: roles.producer,
            wallclock_ms: started.elapsed().as_millis() as u64,
        });
        Ok(())
    }
}

/// Rebuilds every global model from the chain and the payload store and
/// checks it against the recorded digests.
pub fn replay(
    result: &RunResult,
    aggregator: &dyn Aggregator,
    server_lr: f64,
) -> Result<(), ChainFailure> {
    verify_chain(&result.chain)?;
    let fail = |h: u64, m: String| ChainFailure {
        height: Some(h),
        error: LedgerError::Integrity(m),
    };
    let genesis = &result.chain.blocks[0];
    if param_vector_digest(&result.initial_model.params) != genesis.global_model_digest {
        return Err(fail(0, "initial model does not match genesis".into()));
    }
    let mut global = result.initial_model.clone();
    for block in &result.chain.blocks[1..] {
        let mut accepted = Vec::new();
        for record in block.accepted_records() {
            let id = &record.update_id;
            let payload = result
                .payloads
                .get(id)
                .ok_or_else(|| fail(block.height, format!("payload {id} missing from store")))?;
            if param_vector_digest(payload) != *id {
                return Err(fail(
                    block.height,
                    format!("stored payload {id} does not hash to its key"),
                ));
            }
            accepted.push(ModelUpdate::new(
                record.author,
                record.form,
                payload.clone(),
                record.claimed_num_samples,
            ));
        }
        let refs: Vec<&ModelUpdate> = accepted.iter().collect();
        global = aggregation::apply(&global, &refs, aggregator, server_lr)
            .map_err(|e| fail(block.height, e.to_string()))?;
        if param_vector_digest(&global.params) != block.global_model_digest {
            return Err(fail(block.height, "replayed model digest differs".into()));
        }
    }
    Ok(())
}
