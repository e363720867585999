use fbp_core::config::{from_value, load_config};
use fbp_core::engine::{run_with, RunOptions};
use fbp_core::ledger::verify_chain_json;
use fbp_core::metrics::{summarize, write_outputs, RunSummary};
use fbp_core::strategies::Registries;
use serde_json::json;
use std::path::PathBuf;

#[test]
fn run_leaves_three_consistent_files() {
    let cfg = from_value(
        json!({
            "rounds": 5,
            "nodes": 6,
            "master_seed": 2,
            "model": {"hidden_dims": [8]},
            "dataset": {"kind": "blobs", "num_classes": 4, "per_class": 150, "dim": 3, "spread": 0.6},
            "consensus": {"kind": "pos"},
            "validation": {"kind": "local_dataset", "accuracy_threshold": 0.3},
            "aggregation": {"kind": "median"},
            "train": {"local_epochs": 2, "batch_size": 8, "learning_rate": 0.05},
            "attackers": [{"node_id": 5, "kind": "label_flip", "flip_map": {"0": 1, "1": 0}}]
        }),
        &Registries::default(),
    )
    .unwrap();
    let run = run_with(&cfg, &RunOptions { workers: 2 }, &Registries::default()).unwrap();
    let summary = summarize(&run, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&run, Some(&summary), dir.path()).unwrap();

    let mut rdr = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "round",
            "global_accuracy",
            "submitted",
            "accepted",
            "producer",
            "class_0_accuracy",
            "class_1_accuracy",
            "class_2_accuracy",
            "class_3_accuracy"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), cfg.rounds);
    for (row, m) in rows.iter().zip(&run.metrics) {
        assert_eq!(row[0].parse::<usize>().unwrap(), m.round);
        assert!((row[1].parse::<f64>().unwrap() - m.global_accuracy).abs() <= 5e-7);
        assert_eq!(row[4], m.producer.to_string());
    }

    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let back: RunSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(back, summary);
    assert_eq!(back.rounds, 5);
    assert_eq!(back.attack_kind.as_deref(), Some("label_flip"));
    assert!((back.attacker_fraction - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(back.final_model_digest, run.final_model_digest);
    assert_eq!(back.config_digest, cfg.digest());
    assert!(back.best_accuracy >= back.final_accuracy && back.best_accuracy >= back.mean_accuracy);

    let chain = std::fs::read_to_string(dir.path().join("chain.json")).unwrap();
    assert_eq!(verify_chain_json(&chain).unwrap(), run.chain);
}

#[test]
fn shipped_configs_load() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
