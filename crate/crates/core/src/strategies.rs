//! The four pluggable strategy families, bundled.

use crate::aggregation::{self, AggregatorRegistry};
use crate::attacks::{self, AttackRegistry};
use crate::consensus::{self, ConsensusRegistry};
use crate::validation::{self, ValidatorRegistry};

/// Name → factory tables consulted when building a run. Start from
/// [`Registries::default`] and `register` extra variants to extend the
/// simulator.
#[derive(Debug)]
pub struct Registries {
    pub consensus: ConsensusRegistry,
    pub validation: ValidatorRegistry,
    pub aggregation: AggregatorRegistry,
    pub attack: AttackRegistry,
}

impl Default for Registries {
    fn default() -> Self {
        Registries {
            consensus: consensus::default_registry(),
            validation: validation::default_registry(),
            aggregation: aggregation::default_registry(),
            attack: attacks::default_registry(),
        }
    }
}
