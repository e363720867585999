//! Per-round role assignment: who produces the block, who validates, who
//! trains.
//!
//! PoW runs a real SHA-256 nonce search per node but ranks nodes by simulated
//! time `attempts / hashpower`. PoS draws one uniform `u` against the
//! cumulative stake distribution. The committee kind samples `k` distinct
//! validators by sequential draws; the first member produces the block and
//! members sit out of training while serving.

use crate::config::{CommitteeSelection, ConsensusConfig, MAX_POW_DIFFICULTY_BITS};
use crate::hash::Digest;
use crate::registry::Registry;
use crate::seed::{derive_seed, rng_from, tags, GLOBAL_STREAM};
use crate::NodeId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsensusError {
    #[error("no nodes to choose from")]
    NoNodes,
    #[error("total stake is zero")]
    ZeroStake,
    #[error("stake of node {0} is negative or not finite")]
    BadStake(NodeId),
    #[error("hashpower of node {0} must be positive")]
    BadHashpower(NodeId),
    #[error("committee of {k} requested from {n} nodes")]
    CommitteeTooLarge { k: usize, n: usize },
    #[error("difficulty of {0} bits exceeds the cap of {MAX_POW_DIFFICULTY_BITS}")]
    DifficultyTooHigh(u32),
    #[error("invalid proof: {0}")]
    InvalidProof(String),
}

/// Evidence that lets anyone re-derive the producer of a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Proof {
    Genesis,
    Pow {
        nonce: u64,
        attempts: u64,
        difficulty_bits: u32,
    },
    Pos {
        u: f64,
        /// Stakes of nodes `0..n` at draw time.
        stakes: Vec<f64>,
    },
    Committee {
        /// One uniform draw per seat, in seat order.
        draws: Vec<f64>,
        /// Selection weights of nodes `0..n` before the first draw.
        weights: Vec<f64>,
        members: Vec<NodeId>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRoles {
    pub producer: NodeId,
    pub validators: Vec<NodeId>,
    pub proof: Proof,
}

/// What a selector may look at. `stakes[i]` belongs to `NodeId(i)`.
#[derive(Debug, Clone, Copy)]
pub struct RoundState<'a> {
    pub round: u64,
    pub master_seed: u64,
    /// Hash of the current chain tip; part of the PoW header.
    pub prev_hash: Digest,
    pub stakes: &'a [f64],
}

impl RoundState<'_> {
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.stakes.len() as u32).map(NodeId)
    }

    fn roles_rng(&self) -> rand_chacha::ChaCha8Rng {
        rng_from(derive_seed(
            self.master_seed,
            self.round,
            GLOBAL_STREAM,
            tags::ROLES,
        ))
    }
}

pub trait Consensus: Send + Sync {
    fn name(&self) -> &str;

    fn select_roles(&self, state: &RoundState<'_>) -> Result<RoundRoles, ConsensusError>;

    /// Nodes that train this round. Defaults to every node.
    fn trainers(&self, roles: &RoundRoles, nodes: usize) -> Vec<NodeId> {
        let _ = roles;
        (0..nodes as u32).map(NodeId).collect()
    }
}

/// SHA-256(height ‖ prev_hash ‖ node_id ‖ nonce), all integers big-endian.
pub fn pow_digest(height: u64, prev_hash: &Digest, node: NodeId, nonce: u64) -> Digest {
    Digest::of_parts(&[
        &height.to_be_bytes(),
        &prev_hash.0,
        &node.0.to_be_bytes(),
        &nonce.to_be_bytes(),
    ])
}

/// Nonce search of a single node. Gives up once `attempts` exceeds `limit`.
fn pow_search(
    height: u64,
    prev_hash: &Digest,
    node: NodeId,
    start: u64,
    bits: u32,
    limit: u64,
) -> Option<(u64, u64)> {
    let mut nonce = start;
    for attempts in 1..=limit {
        if pow_digest(height, prev_hash, node, nonce).leading_zero_bits() >= bits {
            return Some((nonce, attempts));
        }
        nonce = nonce.wrapping_add(1);
    }
    None
}

/// Simulated hashing race. Every node starts at its own seeded nonce; the
/// producer is the node with the smallest `attempts / hashpower`, ties broken
/// by larger hashpower and then by lower id.
pub fn pow_select(
    state: &RoundState<'_>,
    difficulty_bits: u32,
    hashpower: &[f64],
) -> Result<RoundRoles, ConsensusError> {
    if difficulty_bits > MAX_POW_DIFFICULTY_BITS {
        return Err(ConsensusError::DifficultyTooHigh(difficulty_bits));
    }
    if hashpower.is_empty() {
        return Err(ConsensusError::NoNodes);
    }
    let mut best: Option<(f64, f64, NodeId, u64, u64)> = None;
    for (i, &hp) in hashpower.iter().enumerate() {
        let node = NodeId(i as u32);
        if !(hp > 0.0 && hp.is_finite()) {
            return Err(ConsensusError::BadHashpower(node));
        }
        let start = derive_seed(state.master_seed, state.round, node.0 as u64, tags::POW);
        // A node cannot win once its simulated time passes the leader's, so
        // its search is cut off there (one attempt of slack for rounding).
        let limit = match best {
            Some((t, ..)) => ((t * hp).floor() + 1.0).min(u64::MAX as f64) as u64,
            None => u64::MAX,
        };
        let Some((nonce, attempts)) = pow_search(
            state.round,
            &state.prev_hash,
            node,
            start,
            difficulty_bits,
            limit,
        ) else {
            continue;
        };
        let time = attempts as f64 / hp;
        let better = match best {
            None => true,
            Some((bt, bhp, ..)) => time < bt || (time == bt && hp > bhp),
        };
        if better {
            best = Some((time, hp, node, nonce, attempts));
        }
    }
    let (_, _, producer, nonce, attempts) = best.expect("first node always completes its search");
    Ok(RoundRoles {
        producer,
        validators: state.nodes().collect(),
        proof: Proof::Pow {
            nonce,
            attempts,
            difficulty_bits,
        },
    })
}

fn check_stakes(stakes: &[f64]) -> Result<f64, ConsensusError> {
    if stakes.is_empty() {
        return Err(ConsensusError::NoNodes);
    }
    let mut total = 0.0;
    for (i, &s) in stakes.iter().enumerate() {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(ConsensusError::BadStake(NodeId(i as u32)));
        }
        total += s;
    }
    if total > 0.0 {
        Ok(total)
    } else {
        Err(ConsensusError::ZeroStake)
    }
}

/// Index of the first cumulative share strictly above `u`. Rounding can leave
/// the last share a hair under 1, so the fallback is the last positive weight.
fn cumulative_pick(weights: &[f64], total: f64, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && u < acc / total {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).expect("total > 0")
}

/// Producer drawn with probability proportional to stake.
pub fn pos_pick(stakes: &[f64], u: f64) -> Result<NodeId, ConsensusError> {
    let total = check_stakes(stakes)?;
    Ok(NodeId(cumulative_pick(stakes, total, u) as u32))
}

pub fn pos_select(state: &RoundState<'_>) -> Result<RoundRoles, ConsensusError> {
    check_stakes(state.stakes)?;
    let u: f64 = state.roles_rng().random();
    let producer = pos_pick(state.stakes, u)?;
    let mut validators: Vec<NodeId> = state.nodes().filter(|&n| n != producer).collect();
    if validators.is_empty() {
        // A single-node network validates itself.
        validators.push(producer);
    }
    Ok(RoundRoles {
        producer,
        validators,
        proof: Proof::Pos {
            u,
            stakes: state.stakes.to_vec(),
        },
    })
}

/// Sequential draws without replacement; after each seat the remaining
/// weights are renormalised.
pub fn committee_members(weights: &[f64], draws: &[f64]) -> Result<Vec<NodeId>, ConsensusError> {
    check_stakes(weights)?;
    if draws.len() > weights.len() {
        return Err(ConsensusError::CommitteeTooLarge {
            k: draws.len(),
            n: weights.len(),
        });
    }
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut members = Vec::with_capacity(draws.len());
    for &u in draws {
        let total: f64 = remaining.iter().sum();
        if total <= 0.0 {
            return Err(ConsensusError::ZeroStake);
        }
        let i = cumulative_pick(&remaining, total, u);
        remaining[i] = 0.0;
        members.push(NodeId(i as u32));
    }
    Ok(members)
}

pub fn committee_select(
    state: &RoundState<'_>,
    k: usize,
    selection: CommitteeSelection,
) -> Result<RoundRoles, ConsensusError> {
    let n = state.stakes.len();
    if n == 0 {
        return Err(ConsensusError::NoNodes);
    }
    if k == 0 || k > n {
        return Err(ConsensusError::CommitteeTooLarge { k, n });
    }
    let weights = match selection {
        CommitteeSelection::Uniform => vec![1.0; n],
        CommitteeSelection::StakeWeighted => {
            check_stakes(state.stakes)?;
            if state.stakes.iter().filter(|&&s| s > 0.0).count() < k {
                return Err(ConsensusError::ZeroStake);
            }
            state.stakes.to_vec()
        }
    };
    let mut rng = state.roles_rng();
    let draws: Vec<f64> = (0..k).map(|_| rng.random()).collect();
    let members = committee_members(&weights, &draws)?;
    Ok(RoundRoles {
        producer: members[0],
        validators: members.clone(),
        proof: Proof::Committee {
            draws,
            weights,
            members,
        },
    })
}

/// Re-derives the producer from a recorded proof.
pub fn verify_proof(
    proof: &Proof,
    height: u64,
    prev_hash: &Digest,
    producer: NodeId,
) -> Result<(), ConsensusError> {
    let bad = |m: String| Err(ConsensusError::InvalidProof(m));
    match proof {
        Proof::Genesis => {
            if height == 0 {
                Ok(())
            } else {
                bad(format!("genesis proof at height {height}"))
            }
        }
        Proof::Pow {
            nonce,
            attempts,
            difficulty_bits,
        } => {
            if *difficulty_bits > MAX_POW_DIFFICULTY_BITS {
                return Err(ConsensusError::DifficultyTooHigh(*difficulty_bits));
            }
            if *attempts == 0 {
                return bad("zero attempts".into());
            }
            let zeros = pow_digest(height, prev_hash, producer, *nonce).leading_zero_bits();
            if zeros >= *difficulty_bits {
                Ok(())
            } else {
                bad(format!(
                    "nonce {nonce} gives {zeros} leading zero bits, need {difficulty_bits}"
                ))
            }
        }
        Proof::Pos { u, stakes } => {
            if !(0.0..1.0).contains(u) {
                return bad(format!("draw {u} outside [0, 1)"));
            }
            let expected = pos_pick(stakes, *u)?;
            if expected == producer {
                Ok(())
            } else {
                bad(format!(
                    "draw selects node {expected}, block names {producer}"
                ))
            }
        }
        Proof::Committee {
            draws,
            weights,
            members,
        } => {
            if draws.is_empty() {
                return bad("empty committee".into());
            }
            if let Some(u) = draws.iter().find(|u| !(0.0..1.0).contains(*u)) {
                return bad(format!("draw {u} outside [0, 1)"));
            }
            let expected = committee_members(weights, draws)?;
            if &expected != members {
                return bad("recorded members do not follow from the draws".into());
            }
            if members[0] != producer {
                return bad(format!(
                    "producer {producer} is not the first member {}",
                    members[0]
                ));
            }
            Ok(())
        }
    }
}

/// Accepted authors each gain `reward`.
pub fn update_stake(stakes: &mut [f64], accepted_authors: &[NodeId], reward: f64) {
    for a in accepted_authors {
        if let Some(s) = stakes.get_mut(a.0 as usize) {
            *s = (*s + reward).max(0.0);
        }
    }
}

pub struct ProofOfWork {
    pub difficulty_bits: u32,
    pub hashpower: BTreeMap<u32, f64>,
}

impl Consensus for ProofOfWork {
    fn name(&self) -> &str {
        "pow"
    }

    fn select_roles(&self, state: &RoundState<'_>) -> Result<RoundRoles, ConsensusError> {
        let hp: Vec<f64> = state
            .nodes()
            .map(|n| self.hashpower.get(&n.0).copied().unwrap_or(1.0))
            .collect();
        pow_select(state, self.difficulty_bits, &hp)
    }
}

pub struct ProofOfStake;

impl Consensus for ProofOfStake {
    fn name(&self) -> &str {
        "pos"
    }

    fn select_roles(&self, state: &RoundState<'_>) -> Result<RoundRoles, ConsensusError> {
        pos_select(state)
    }
}

pub struct Committee {
    pub size: usize,
    pub selection: CommitteeSelection,
}

impl Consensus for Committee {
    fn name(&self) -> &str {
        "committee"
    }

    fn select_roles(&self, state: &RoundState<'_>) -> Result<RoundRoles, ConsensusError> {
        committee_select(state, self.size, self.selection)
    }

    fn trainers(&self, roles: &RoundRoles, nodes: usize) -> Vec<NodeId> {
        (0..nodes as u32)
            .map(NodeId)
            .filter(|n| !roles.validators.contains(n))
            .collect()
    }
}

pub type ConsensusRegistry = Registry<dyn Consensus, ConsensusConfig>;

pub fn default_registry() -> ConsensusRegistry {
    let mut reg = ConsensusRegistry::new("consensus");
    reg.register("pow", |c: &ConsensusConfig| {
        if c.pow_difficulty_bits > MAX_POW_DIFFICULTY_BITS {
            return Err(format!("difficulty above {MAX_POW_DIFFICULTY_BITS} bits"));
        }
        Ok(Box::new(ProofOfWork {
            difficulty_bits: c.pow_difficulty_bits,
            hashpower: c.pow_hashpower.clone(),
        }) as Box<dyn Consensus>)
    });
    reg.register("pos", |_: &ConsensusConfig| {
        Ok(Box::new(ProofOfStake) as Box<dyn Consensus>)
    });
    reg.register("committee", |c: &ConsensusConfig| {
        let size = c.committee_size.ok_or("committee_size is required")?;
        if size == 0 {
            return Err("committee_size must be at least 1".into());
        }
        Ok(Box::new(Committee {
            size,
            selection: c.committee_selection,
        }) as Box<dyn Consensus>)
    });
    reg
}
