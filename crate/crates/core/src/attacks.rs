//! Malicious node behaviours.
//!
//! Data attacks (label flipping, targeted poisoning) rewrite the attacker's
//! training labels before local training; additive noise perturbs the
//! submitted payload afterwards. Attackers otherwise train honestly.

use crate::config::AttackConfig;
use crate::dataset::Dataset;
use crate::model::{ModelError, ParamVector};
use crate::registry::Registry;
use crate::seed::rng_from;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("flip map entry {from} -> {to} is out of range for {classes} classes")]
    FlipOutOfRange {
        from: usize,
        to: usize,
        classes: usize,
    },
    #[error("flip map maps class {0} to itself")]
    FixedPoint(usize),
    #[error("source and target class must differ (both {0})")]
    SameClass(usize),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("poison_fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("noisy payload is not finite: {0}")]
    NonFinite(#[from] ModelError),
}

pub fn check_flip_map(
    flip_map: &BTreeMap<usize, usize>,
    num_classes: usize,
) -> Result<(), AttackError> {
    for (&from, &to) in flip_map {
        if from >= num_classes || to >= num_classes {
            return Err(AttackError::FlipOutOfRange {
                from,
                to,
                classes: num_classes,
            });
        }
        if from == to {
            return Err(AttackError::FixedPoint(from));
        }
    }
    Ok(())
}

/// Replaces every label that is a key of `flip_map` with its value.
pub fn apply_label_flip(
    labels: &[usize],
    flip_map: &BTreeMap<usize, usize>,
    num_classes: usize,
) -> Result<Vec<usize>, AttackError> {
    check_flip_map(flip_map, num_classes)?;
    Ok(labels
        .iter()
        .map(|y| *flip_map.get(y).unwrap_or(y))
        .collect())
}

/// Relabels a seeded uniform sample of `floor(fraction * #source)` rows of
/// `source_class` as `target_class`. Features and all other rows are kept.
pub fn apply_targeted_poison(
    data: &Dataset,
    source_class: usize,
    target_class: usize,
    poison_fraction: f64,
    seed: u64,
) -> Result<Dataset, AttackError> {
    check_targeted(
        source_class,
        target_class,
        poison_fraction,
        data.num_classes,
    )?;
    let mut source_rows: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] == source_class)
        .collect();
    let k = (poison_fraction * source_rows.len() as f64).floor() as usize;
    source_rows.shuffle(&mut rng_from(seed));
    let mut out = data.clone();
    for &i in &source_rows[..k] {
        out.labels[i] = target_class;
    }
    Ok(out)
}

fn check_targeted(
    source: usize,
    target: usize,
    fraction: f64,
    classes: usize,
) -> Result<(), AttackError> {
    if source == target {
        return Err(AttackError::SameClass(source));
    }
    for class in [source, target] {
        if class >= classes {
            return Err(AttackError::ClassOutOfRange { class, classes });
        }
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AttackError::BadFraction(fraction));
    }
    Ok(())
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn apply_additive_noise(
    payload: &ParamVector,
    sigma: f64,
    seed: u64,
) -> Result<ParamVector, AttackError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(AttackError::BadSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(payload.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = rng_from(seed);
    let values = payload
        .values()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Ok(payload.with_values(values)?)
}

/// A malicious behaviour. Both hooks default to the honest identity.
pub trait Attack: Send + Sync {
    fn name(&self) -> &str;

    /// Applied to the local training data before training.
    fn poison_data(&self, data: &Dataset, _seed: u64) -> Result<Dataset, AttackError> {
        Ok(data.clone())
    }

    /// Applied to the payload after training, before submission.
    fn perturb_payload(
        &self,
        payload: &ParamVector,
        _seed: u64,
    ) -> Result<ParamVector, AttackError> {
        Ok(payload.clone())
    }
}

pub struct LabelFlip {
    pub flip_map: BTreeMap<usize, usize>,
}

impl Attack for LabelFlip {
    fn name(&self) -> &str {
        "label_flip"
    }

    fn poison_data(&self, data: &Dataset, _seed: u64) -> Result<Dataset, AttackError> {
        let mut out = data.clone();
        out.labels = apply_label_flip(&data.labels, &self.flip_map, data.num_classes)?;
        Ok(out)
    }
}

pub struct TargetedPoison {
    pub source_class: usize,
    pub target_class: usize,
    pub poison_fraction: f64,
}

impl Attack for TargetedPoison {
    fn name(&self) -> &str {
        "targeted_poison"
    }

    fn poison_data(&self, data: &Dataset, seed: u64) -> Result<Dataset, AttackError> {
        apply_targeted_poison(
            data,
            self.source_class,
            self.target_class,
            self.poison_fraction,
            seed,
        )
    }
}

pub struct AdditiveNoise {
    pub sigma: f64,
}

impl Attack for AdditiveNoise {
    fn name(&self) -> &str {
        "additive_noise"
    }

    fn perturb_payload(
        &self,
        payload: &ParamVector,
        seed: u64,
    ) -> Result<ParamVector, AttackError> {
        apply_additive_noise(payload, self.sigma, seed)
    }
}

/// What an attack factory needs: the attacker's config entry and the class
/// count of the dataset in use.
#[derive(Debug, Clone)]
pub struct AttackSetup {
    pub config: AttackConfig,
    pub num_classes: usize,
}

pub type AttackRegistry = Registry<dyn Attack, AttackSetup>;

fn need<T: Copy>(v: Option<T>, field: &str, kind: &str) -> Result<T, String> {
    v.ok_or_else(|| format!("`{field}` is required for {kind}"))
}

pub fn default_registry() -> AttackRegistry {
    let mut reg = AttackRegistry::new("attack");
    reg.register("label_flip", |s: &AttackSetup| {
        let flip_map = s
            .config
            .flip_map
            .clone()
            .ok_or_else(|| "`flip_map` is required for label_flip".to_string())?;
        check_flip_map(&flip_map, s.num_classes).map_err(|e| e.to_string())?;
        Ok(Box::new(LabelFlip { flip_map }) as Box<dyn Attack>)
    });
    reg.register("targeted_poison", |s: &AttackSetup| {
        let c = &s.config;
        let source_class = need(c.source_class, "source_class", "targeted_poison")?;
        let target_class = need(c.target_class, "target_class", "targeted_poison")?;
        let poison_fraction = need(c.poison_fraction, "poison_fraction", "targeted_poison")?;
        check_targeted(source_class, target_class, poison_fraction, s.num_classes)
            .map_err(|e| e.to_string())?;
        Ok(Box::new(TargetedPoison {
            source_class,
            target_class,
            poison_fraction,
        }) as Box<dyn Attack>)
    });
    reg.register("additive_noise", |s: &AttackSetup| {
        let sigma = need(s.config.sigma, "sigma", "additive_noise")?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(AttackError::BadSigma(sigma).to_string());
        }
        Ok(Box::new(AdditiveNoise { sigma }) as Box<dyn Attack>)
    });
    reg
}
