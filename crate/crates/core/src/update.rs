use crate::hash::Digest;
use crate::ledger::encode::param_vector_digest;
use crate::model::ParamVector;
use crate::{NodeId, UpdateForm};

/// One node's submission for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub author: NodeId,
    pub form: UpdateForm,
    pub payload: ParamVector,
    pub num_samples: u64,
    /// SHA-256 of the canonical payload encoding; doubles as the update id.
    pub digest: Digest,
}

impl ModelUpdate {
    pub fn new(author: NodeId, form: UpdateForm, payload: ParamVector, num_samples: u64) -> Self {
        let digest = param_vector_digest(&payload);
        ModelUpdate {
            author,
            form,
            payload,
            num_samples,
            digest,
        }
    }
}
