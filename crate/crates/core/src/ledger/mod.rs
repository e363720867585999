//! Hash-linked record of rounds. One block per round; payloads live off-chain
//! and are referenced by digest.

pub mod encode;

use crate::consensus::{verify_proof, ConsensusError, Proof};
use crate::hash::Digest;
use crate::update::ModelUpdate;
use crate::validation::ValidationVerdict;
use crate::{NodeId, UpdateForm};
use encode::{CanonicalEncode, EncodeError, Encoder};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("ordering: expected height {expected}, got {got}")]
    Ordering { expected: u64, got: u64 },
    #[error("consensus: {0}")]
    Consensus(#[from] ConsensusError),
    #[error("encoding: {0}")]
    Encode(#[from] EncodeError),
    #[error("malformed chain document: {0}")]
    Parse(String),
    #[error("chain document is not in canonical form")]
    NonCanonical,
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRecord {
    pub update_id: Digest,
    pub author: NodeId,
    pub form: UpdateForm,
    pub claimed_num_samples: u64,
    pub payload_digest: Digest,
    pub verdict: ValidationVerdict,
}

impl UpdateRecord {
    pub fn new(update: &ModelUpdate, verdict: ValidationVerdict) -> Self {
        UpdateRecord {
            update_id: update.digest,
            author: update.author,
            form: update.form,
            claimed_num_samples: update.num_samples,
            payload_digest: update.digest,
            verdict,
        }
    }
}

impl CanonicalEncode for UpdateRecord {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.digest(&self.update_id);
        self.author.encode(enc)?;
        self.form.encode(enc)?;
        enc.u64(self.claimed_num_samples);
        enc.digest(&self.payload_digest);
        self.verdict.encode(enc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub records: Vec<UpdateRecord>,
    pub accepted_ids: Vec<Digest>,
    pub producer: NodeId,
    pub proof: Proof,
    pub global_model_digest: Digest,
    pub block_hash: Digest,
}

impl Block {
    /// Builds a block and seals it with its hash.
    pub fn new(
        height: u64,
        prev_hash: Digest,
        records: Vec<UpdateRecord>,
        accepted_ids: Vec<Digest>,
        producer: NodeId,
        proof: Proof,
        global_model_digest: Digest,
    ) -> Result<Block, EncodeError> {
        let mut b = Block {
            height,
            prev_hash,
            records,
            accepted_ids,
            producer,
            proof,
            global_model_digest,
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.compute_hash()?;
        Ok(b)
    }

    /// SHA-256 over the canonical encoding of every field but `block_hash`.
    pub fn compute_hash(&self) -> Result<Digest, EncodeError> {
        let mut e = Encoder::new();
        e.u64(self.height);
        e.digest(&self.prev_hash);
        e.list(&self.records)?;
        e.list(&self.accepted_ids)?;
        self.producer.encode(&mut e)?;
        self.proof.encode(&mut e)?;
        e.digest(&self.global_model_digest);
        Ok(Digest::of(&e.into_bytes()))
    }

    /// Records whose verdict accepted them, in submission order.
    pub fn accepted_records(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.records.iter().filter(|r| r.verdict.accepted)
    }

    /// Checks that depend on this block alone.
    fn check_self(&self) -> Result<(), LedgerError> {
        if self.compute_hash()? != self.block_hash {
            return Err(LedgerError::Integrity(
                "block_hash does not match contents".into(),
            ));
        }
        for r in &self.records {
            if r.update_id != r.payload_digest {
                return Err(LedgerError::Integrity(format!(
                    "record {} has update_id != payload_digest",
                    r.update_id
                )));
            }
            if r.verdict.update_id != r.update_id {
                return Err(LedgerError::Integrity(format!(
                    "verdict does not belong to record {}",
                    r.update_id
                )));
            }
        }
        // Identical payloads from different authors share an id, so the
        // accepted list is compared as a sequence, not as a set.
        let expected: Vec<Digest> = self.accepted_records().map(|r| r.update_id).collect();
        if expected != self.accepted_ids {
            return Err(LedgerError::Integrity(
                "accepted_ids do not match the accepted records in order".into(),
            ));
        }
        Ok(())
    }
}

/// Blocks in height order, starting at genesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chain {
    pub blocks: Vec<Block>,
}

impl Chain {
    /// Height 0, zero parent hash, producer 0, no records.
    pub fn genesis(initial_model_digest: Digest) -> Chain {
        let g = Block::new(
            0,
            Digest::ZERO,
            vec![],
            vec![],
            NodeId(0),
            Proof::Genesis,
            initial_model_digest,
        )
        .expect("genesis has no floats");
        Chain { blocks: vec![g] }
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("a chain always holds genesis")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Appends `block` after checking it against the tip.
    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        check_link(self.tip(), &block)?;
        self.blocks.push(block);
        Ok(())
    }

    /// Compact JSON; this exact byte form is what [`verify_chain_json`]
    /// accepts.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chain serialises")
    }

    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        std::fs::write(path, self.to_json()).map_err(|e| LedgerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn check_link(parent: &Block, block: &Block) -> Result<(), LedgerError> {
    let expected = parent.height + 1;
    if block.height != expected {
        return Err(LedgerError::Ordering {
            expected,
            got: block.height,
        });
    }
    if block.prev_hash != parent.block_hash {
        return Err(LedgerError::Integrity(
            "prev_hash does not match parent block_hash".into(),
        ));
    }
    block.check_self()?;
    verify_proof(&block.proof, block.height, &block.prev_hash, block.producer)?;
    Ok(())
}

/// Where and why verification stopped.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{error}", height.map(|h| format!("block {h}: ")).unwrap_or_default())]
pub struct ChainFailure {
    pub height: Option<u64>,
    pub error: LedgerError,
}

/// Re-checks every link, every block hash and every consensus proof.
pub fn verify_chain(chain: &Chain) -> Result<(), ChainFailure> {
    let fail = |height: Option<u64>, error: LedgerError| ChainFailure { height, error };
    let Some(genesis) = chain.blocks.first() else {
        return Err(fail(
            None,
            LedgerError::Integrity("chain has no genesis block".into()),
        ));
    };
    if genesis.height != 0 {
        return Err(fail(
            Some(genesis.height),
            LedgerError::Ordering {
                expected: 0,
                got: genesis.height,
            },
        ));
    }
    if genesis.prev_hash != Digest::ZERO {
        return Err(fail(
            Some(0),
            LedgerError::Integrity("genesis prev_hash is not zero".into()),
        ));
    }
    if genesis.proof != Proof::Genesis || !genesis.records.is_empty() {
        return Err(fail(
            Some(0),
            LedgerError::Integrity("genesis carries rounds data".into()),
        ));
    }
    genesis.check_self().map_err(|e| fail(Some(0), e))?;
    for pair in chain.blocks.windows(2) {
        check_link(&pair[0], &pair[1]).map_err(|e| fail(Some(pair[1].height), e))?;
    }
    Ok(())
}

/// Parses a chain document strictly (unknown fields, bad hex, malformed
/// numbers are errors).
pub fn chain_from_json(text: &str) -> Result<Chain, LedgerError> {
    serde_json::from_str(text).map_err(|e| LedgerError::Parse(e.to_string()))
}

/// Verifies a serialized chain: the semantic checks of [`verify_chain`], then
/// a byte comparison against the canonical re-serialization, so edits that
/// keep the values intact (spacing, number spelling) are caught too.
pub fn verify_chain_json(text: &str) -> Result<Chain, ChainFailure> {
    let chain = chain_from_json(text).map_err(|error| ChainFailure {
        height: None,
        error,
    })?;
    verify_chain(&chain)?;
    if chain.to_json() != text.trim_end_matches('\n') {
        return Err(ChainFailure {
            height: None,
            error: LedgerError::NonCanonical,
        });
    }
    Ok(chain)
}
