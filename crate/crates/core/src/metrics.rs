//! End-of-run summaries and the files a run leaves behind.

use crate::config::SimulationConfig;
use crate::engine::{RoundMetrics, RunResult};
use crate::hash::Digest;
use crate::ledger::Chain;
use crate::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub mean_accuracy: f64,
    /// First round reaching 90% of the best accuracy.
    pub rounds_to_90pct_of_best: usize,
    /// Attack kinds in use, `+`-joined when mixed.
    pub attack_kind: Option<String>,
    pub attacker_fraction: f64,
    /// `null` when honest nodes submitted nothing.
    pub acceptance_rate_honest: Option<f64>,
    /// `null` when attackers submitted nothing.
    pub acceptance_rate_malicious: Option<f64>,
    pub final_model_digest: Digest,
    pub config_digest: Digest,
}

/// Submission and acceptance counts split by authorship.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceCounts {
    pub honest_submitted: usize,
    pub honest_accepted: usize,
    pub malicious_submitted: usize,
    pub malicious_accepted: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AcceptanceCounts {
    pub fn honest_rate(&self) -> Option<f64> {
        ratio(self.honest_accepted, self.honest_submitted)
    }

    pub fn malicious_rate(&self) -> Option<f64> {
        ratio(self.malicious_accepted, self.malicious_submitted)
    }
}

/// Tallies every record in blocks with `height >= from_height`. Assumes a
/// verified chain, where verdicts and `accepted_ids` agree.
pub fn acceptance_counts(
    chain: &Chain,
    attackers: &BTreeSet<NodeId>,
    from_height: u64,
) -> AcceptanceCounts {
    let mut c = AcceptanceCounts::default();
    for block in chain.blocks.iter().filter(|b| b.height >= from_height) {
        for r in &block.records {
            let ok = r.verdict.accepted as usize;
            if attackers.contains(&r.author) {
                c.malicious_submitted += 1;
                c.malicious_accepted += ok;
            } else {
                c.honest_submitted += 1;
                c.honest_accepted += ok;
            }
        }
    }
    c
}

pub fn attacker_ids(config: &SimulationConfig) -> BTreeSet<NodeId> {
    config.attackers.iter().map(|a| NodeId(a.node_id)).collect()
}

/// `None` when the run completed no rounds.
pub fn summarize(run: &RunResult, config: &SimulationConfig) -> Option<RunSummary> {
    let acc: Vec<f64> = run.metrics.iter().map(|m| m.global_accuracy).collect();
    let final_accuracy = *acc.last()?;
    let best_accuracy = acc.iter().copied().fold(f64::MIN, f64::max);
    let mean_accuracy = acc.iter().sum::<f64>() / acc.len() as f64;
    let rounds_to_90pct_of_best = run
        .metrics
        .iter()
        .find(|m| m.global_accuracy >= 0.9 * best_accuracy)
        .map(|m| m.round)
        .expect("the best round qualifies");
    let kinds: BTreeSet<&str> = config.attackers.iter().map(|a| a.kind.as_str()).collect();
    let attack_kind = (!kinds.is_empty()).then(|| kinds.into_iter().collect::<Vec<_>>().join("+"));
    let counts = acceptance_counts(&run.chain, &attacker_ids(config), 1);
    Some(RunSummary {
        rounds: run.metrics.len(),
        final_accuracy,
        best_accuracy,
        mean_accuracy,
        rounds_to_90pct_of_best,
        attack_kind,
        attacker_fraction: config.attackers.len() as f64 / config.nodes as f64,
        acceptance_rate_honest: counts.honest_rate(),
        acceptance_rate_malicious: counts.malicious_rate(),
        final_model_digest: run.final_model_digest,
        config_digest: run.config_digest,
    })
}

pub fn metrics_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "round",
        "global_accuracy",
        "submitted",
        "accepted",
        "producer",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..num_classes).map(|i| format!("class_{i}_accuracy")));
    h
}

/// One row per round; floats with six decimals.
pub fn write_metrics_csv<W: Write>(
    metrics: &[RoundMetrics],
    num_classes: usize,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header(num_classes))?;
    for m in metrics {
        let mut row = vec![
            m.round.to_string(),
            format!("{:.6}", m.global_accuracy),
            m.submitted.to_string(),
            m.accepted.to_string(),
            m.producer.to_string(),
        ];
        row.extend(
            (0..num_classes)
                .map(|i| format!("{:.6}", m.per_class_accuracy.get(i).copied().unwrap_or(0.0))),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics_csv(
    metrics: &[RoundMetrics],
    num_classes: usize,
    path: &Path,
) -> Result<(), OutputError> {
    let file = std::fs::File::create(path).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_metrics_csv(metrics, num_classes, std::io::BufWriter::new(file)).map_err(|source| {
        OutputError::Csv {
            path: path.to_path_buf(),
            source,
        }
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `metrics.csv`, `summary.json` and `chain.json` into `out_dir`.
pub fn write_outputs(
    run: &RunResult,
    summary: Option<&RunSummary>,
    out_dir: &Path,
) -> Result<(), OutputError> {
    std::fs::create_dir_all(out_dir).map_err(|source| OutputError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let classes = run.final_model.num_classes();
    save_metrics_csv(&run.metrics, classes, &out_dir.join("metrics.csv"))?;
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&out_dir.join("summary.json"), &(summary_json + "\n"))?;
    write_file(&out_dir.join("chain.json"), &run.chain.to_json())?;
    Ok(())
}
