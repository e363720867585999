use fbp_core::aggregation::{AggregationError, Aggregator, Mean};
use fbp_core::config::{from_value, SimulationConfig};
use fbp_core::consensus::Proof;
use fbp_core::engine::{replay, run_with, RunOptions, RunResult, Stage};
use fbp_core::ledger::{verify_chain, verify_chain_json};
use fbp_core::model::ParamVector;
use fbp_core::strategies::Registries;
use fbp_core::NodeId;
use serde_json::{json, Value};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

fn small(seed: u64) -> Value {
    json!({
        "rounds": 4,
        "nodes": 8,
        "master_seed": seed,
        "model": {"hidden_dims": [8]},
        "dataset": {"kind": "blobs", "num_classes": 3, "per_class": 300, "dim": 2, "spread": 0.5},
        "consensus": {"kind": "committee", "committee_size": 3},
        "validation": {"kind": "global_dataset", "accuracy_threshold": 0.0},
        "aggregation": {"kind": "fedavg"},
        "train": {"local_epochs": 1, "batch_size": 16, "learning_rate": 0.05}
    })
}

fn config(v: Value) -> SimulationConfig {
    from_value(v, &Registries::default()).unwrap()
}

fn go(cfg: &SimulationConfig, workers: usize) -> RunResult {
    run_with(cfg, &RunOptions { workers }, &Registries::default()).unwrap()
}

#[test]
fn same_seed_same_bytes_regardless_of_workers() {
    let cfg = config(small(3));
    let a = go(&cfg, 1);
    let b = go(&cfg, 3);
    assert_eq!(a.chain.to_json(), b.chain.to_json());
    assert_eq!(a.final_model_digest, b.final_model_digest);
    let c = go(&config(small(4)), 1);
    assert_ne!(a.final_model_digest, c.final_model_digest);
}

#[test]
fn zero_rounds_is_genesis_only() {
    let mut cfg = config(small(1));
    cfg.rounds = 0;
    let run = go(&cfg, 1);
    assert_eq!(run.chain.len(), 1);
    assert!(run.metrics.is_empty());
    assert_eq!(run.initial_model, run.final_model);
    assert_eq!(run.chain.blocks[0].proof, Proof::Genesis);
    assert_eq!(
        run.chain.blocks[0].global_model_digest,
        run.final_model_digest
    );
}

#[test]
fn chain_and_metrics_agree() {
    let mut v = small(5);
    v["validation"] = json!({"kind": "multi_krum", "assumed_byzantine": 1, "accept_count": 3});
    v["aggregation"] = json!({"kind": "mean"});
    let cfg = config(v);
    let run = go(&cfg, 2);
    verify_chain(&run.chain).unwrap();
    verify_chain_json(&run.chain.to_json()).unwrap();
    assert_eq!(run.chain.len(), cfg.rounds + 1);
    assert_eq!(run.metrics.len(), cfg.rounds);
    for (m, block) in run.metrics.iter().zip(&run.chain.blocks[1..]) {
        assert_eq!(block.height as usize, m.round);
        assert_eq!(block.records.len(), m.submitted);
        assert_eq!(block.accepted_ids.len(), m.accepted);
        assert_eq!(m.accepted, 3);
        assert_eq!(
            m.submitted,
            m.accepted + m.rejected_by_reason.values().sum::<usize>()
        );
        assert_eq!(block.producer, m.producer);
        // Committee members validate, the rest train.
        let Proof::Committee { members, .. } = &block.proof else {
            panic!("committee proof expected")
        };
        for r in &block.records {
            assert!(!members.contains(&r.author));
        }
    }
    assert_eq!(run.chain.tip().global_model_digest, run.final_model_digest);
}

#[test]
fn replay_rebuilds_every_model() {
    let cfg = config(small(6));
    let run = go(&cfg, 2);
    replay(
        &run,
        &fbp_core::aggregation::FedAvg,
        cfg.aggregation.server_lr,
    )
    .unwrap();

    let mut tampered = run.clone();
    let (&id, p) = tampered.payloads.iter().next().unwrap();
    let mut values = p.values().to_vec();
    values[0] += 1e-3;
    tampered.payloads.insert(id, p.with_values(values).unwrap());
    assert!(replay(
        &tampered,
        &fbp_core::aggregation::FedAvg,
        cfg.aggregation.server_lr
    )
    .is_err());

    // Replaying with a different rule does not reproduce the recorded models.
    assert!(replay(&run, &Mean, cfg.aggregation.server_lr).is_err());
}

#[test]
fn gradient_form_replays() {
    let mut v = small(7);
    v["update_form"] = json!("gradients");
    v["validation"] = json!({"kind": "pass_gradients"});
    v["aggregation"] = json!({"kind": "mean", "server_lr": 0.05});
    let cfg = config(v);
    let run = go(&cfg, 2);
    replay(&run, &Mean, 0.05).unwrap();
    assert_ne!(run.initial_model, run.final_model);
}

#[test]
fn fully_rejected_round_keeps_the_model() {
    let mut v = small(8);
    // Overlapping blobs: no candidate reaches perfect accuracy.
    v["dataset"]["spread"] = json!(4.0);
    v["validation"] = json!({"kind": "global_dataset", "accuracy_threshold": 1.0});
    let cfg = config(v);
    let run = go(&cfg, 2);
    for m in &run.metrics {
        assert_eq!(m.accepted, 0);
        assert_eq!(m.rejected_by_reason.get("threshold"), Some(&m.submitted));
    }
    assert_eq!(run.initial_model, run.final_model);
    for b in &run.chain.blocks {
        assert_eq!(b.global_model_digest, run.final_model_digest);
    }
}

#[test]
fn multi_krum_keeps_loud_attackers_out() {
    let mut v = small(9);
    v["nodes"] = json!(10);
    v["validation"] = json!({"kind": "multi_krum", "assumed_byzantine": 2, "accept_count": 4});
    v["aggregation"] = json!({"kind": "mean"});
    v["attackers"] = json!([
        {"node_id": 0, "kind": "additive_noise", "sigma": 50.0},
        {"node_id": 1, "kind": "additive_noise", "sigma": 50.0}
    ]);
    let run = go(&config(v), 2);
    for b in &run.chain.blocks[1..] {
        for r in b.accepted_records() {
            assert!(
                r.author != NodeId(0) && r.author != NodeId(1),
                "attacker accepted at height {}",
                b.height
            );
        }
    }
}

#[test]
fn pos_rewards_accepted_authors() {
    let mut v = small(10);
    v["consensus"] = json!({"kind": "pos", "pos_initial_stake": 2.0, "pos_reward": 0.5});
    let cfg = config(v);
    let run = go(&cfg, 2);
    let accepted: usize = run.metrics.iter().map(|m| m.accepted).sum();
    let total: f64 = run.final_stakes.iter().sum();
    assert!((total - (2.0 * cfg.nodes as f64 + 0.5 * accepted as f64)).abs() < 1e-9);
    for (i, s) in run.final_stakes.iter().enumerate() {
        let own: usize = run.chain.blocks[1..]
            .iter()
            .flat_map(|b| b.accepted_records())
            .filter(|r| r.author == NodeId(i as u32))
            .count();
        assert!((s - (2.0 + 0.5 * own as f64)).abs() < 1e-9);
    }
}

#[test]
fn pow_chain_verifies() {
    let mut v = small(11);
    v["consensus"] = json!({"kind": "pow", "pow_difficulty_bits": 6, "pow_hashpower": {"2": 4.0}});
    let run = go(&config(v), 2);
    verify_chain(&run.chain).unwrap();
    for b in &run.chain.blocks[1..] {
        let Proof::Pow {
            difficulty_bits, ..
        } = b.proof
        else {
            panic!("pow proof expected")
        };
        assert_eq!(difficulty_bits, 6);
        assert!(b.block_hash != b.prev_hash);
    }
}

/// Fails on its third call.
struct Flaky(Arc<AtomicUsize>);

impl Aggregator for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn aggregate(&self, updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError> {
        if self.0.fetch_add(1, Ordering::SeqCst) == 2 {
            return Err(AggregationError::Empty);
        }
        fbp_core::aggregation::mean(&updates.iter().map(|(p, _)| *p).collect::<Vec<_>>())
    }
}

#[test]
fn registered_strategy_runs_and_aborts_with_context() {
    let calls = Arc::new(AtomicUsize::new(0));
    let mut registries = Registries::default();
    let c = calls.clone();
    registries.aggregation.register("flaky", move |_| {
        Ok(Box::new(Flaky(c.clone())) as Box<dyn Aggregator>)
    });
    let mut v = small(12);
    v["aggregation"] = json!({"kind": "flaky"});
    let cfg = from_value(v, &registries).unwrap();
    let err = run_with(&cfg, &RunOptions { workers: 2 }, &registries).unwrap_err();
    assert_eq!(err.round, 3);
    assert_eq!(err.stage, Stage::Aggregation);
    assert_eq!(err.partial_metrics.len(), 2);
    assert!(err.to_string().starts_with("round 3, aggregation"));
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let mut v = small(1);
    v["aggregation"] = json!({"kind": "flaky"});
    let err = from_value(v, &Registries::default()).unwrap_err();
    assert!(err.issues().iter().any(|i| i.path == "$.aggregation.kind"));
}
