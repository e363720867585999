//! Per-update accept/reject decisions.
//!
//! * `pass_weights` / `pass_gradients` accept every update of the expected
//!   form without looking at it.
//! * `global_dataset` / `local_dataset` build the candidate model an update
//!   implies and accept it when its accuracy on the shared validation split
//!   (or on each validator's local holdout, by strict majority vote) reaches
//!   the threshold. The threshold is inclusive.
//! * `multi_krum` scores every update by the summed squared distance to its
//!   `n - f - 2` nearest peers and accepts the `m` lowest scores.

use crate::config::ValidationConfig;
use crate::dataset::Dataset;
use crate::hash::Digest;
use crate::model::{evaluate, Model, ParamVector};
use crate::registry::Registry;
use crate::update::ModelUpdate;
use crate::{NodeId, UpdateForm};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("multi_krum needs at least f + 3 = {needed} updates, got {got}; run more trainers per round or lower f")]
    TooFewForKrum { needed: usize, got: usize },
    #[error("multi_krum cannot accept {m} of {n} updates")]
    AcceptCountTooLarge { m: usize, n: usize },
    #[error("update {index} has a different parameter layout")]
    ShapeMismatch { index: usize },
    #[error("every validator abstained (no evaluation data)")]
    AllAbstained,
    #[error("no validators assigned")]
    NoValidators,
    #[error("dataset validation needs a shared validation split")]
    NoSharedSet,
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Payload form differs from what the validator expects.
    Form,
    /// Accuracy below the threshold (or lost the committee vote).
    Threshold,
    /// Candidate parameters were not finite.
    Numeric,
    /// Not among the `m` best Multi-Krum scores.
    Krum,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Form => "form",
            RejectReason::Threshold => "threshold",
            RejectReason::Numeric => "numeric",
            RejectReason::Krum => "krum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationVerdict {
    pub update_id: Digest,
    pub accepted: bool,
    /// 1.0 for pass kinds, accuracy for dataset kinds, negated Krum score.
    pub score: f64,
    pub voter_ids: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

/// Everything a validator may consult for one round.
pub struct ValidationContext<'a> {
    pub global: &'a Model,
    pub form: UpdateForm,
    pub server_lr: f64,
    pub validators: &'a [NodeId],
    pub shared_set: Option<&'a Dataset>,
    /// Local holdout per node.
    pub local_sets: &'a BTreeMap<NodeId, Dataset>,
    /// Incremented once per model evaluation.
    pub evaluations: &'a AtomicUsize,
}

pub trait Validator: Send + Sync {
    fn name(&self) -> &str;

    /// One verdict per update, in input order.
    fn validate(
        &self,
        updates: &[ModelUpdate],
        ctx: &ValidationContext<'_>,
    ) -> Result<Vec<ValidationVerdict>, ValidationError>;
}

pub fn validate_pass(
    update: &ModelUpdate,
    expected: UpdateForm,
    voters: &[NodeId],
) -> ValidationVerdict {
    let ok = update.form == expected;
    ValidationVerdict {
        update_id: update.digest,
        accepted: ok,
        score: if ok { 1.0 } else { 0.0 },
        voter_ids: voters.to_vec(),
        reason: (!ok).then_some(RejectReason::Form),
    }
}

/// The model an update would produce on its own.
pub fn candidate_model(update: &ModelUpdate, global: &Model, server_lr: f64) -> Option<Model> {
    let params = match update.form {
        UpdateForm::Weights => update.payload.clone(),
        UpdateForm::Gradients => {
            if !update.payload.same_layout(&global.params) {
                return None;
            }
            let stepped = global
                .params
                .values()
                .iter()
                .zip(update.payload.values())
                .map(|(p, g)| p - server_lr * g)
                .collect();
            global.params.with_values(stepped).ok()?
        }
    };
    if !params.same_layout(&global.params) {
        return None;
    }
    Some(Model {
        params,
        activation: global.activation,
    })
}

/// Accuracy-threshold check of one update against one evaluation set.
pub fn validate_accuracy(
    update: &ModelUpdate,
    global: &Model,
    eval_set: &Dataset,
    threshold: f64,
    server_lr: f64,
    evaluations: &AtomicUsize,
) -> Result<ValidationVerdict, ValidationError> {
    let Some(candidate) = candidate_model(update, global, server_lr) else {
        return Ok(ValidationVerdict {
            update_id: update.digest,
            accepted: false,
            score: 0.0,
            voter_ids: Vec::new(),
            reason: Some(RejectReason::Numeric),
        });
    };
    evaluations.fetch_add(1, Ordering::Relaxed);
    let score =
        evaluate(&candidate, eval_set).map_err(|e| ValidationError::Evaluation(e.to_string()))?;
    let accepted = score >= threshold;
    Ok(ValidationVerdict {
        update_id: update.digest,
        accepted,
        score,
        voter_ids: Vec::new(),
        reason: (!accepted).then_some(RejectReason::Threshold),
    })
}

/// Every validator with evaluation data votes on every update; an update is
/// accepted when strictly more than half of the voting validators accept it.
/// Validators without data abstain. The verdict score is the mean score.
pub fn committee_validate(
    updates: &[ModelUpdate],
    validators: &[(NodeId, Option<&Dataset>)],
    threshold: f64,
    global: &Model,
    server_lr: f64,
    evaluations: &AtomicUsize,
) -> Result<Vec<ValidationVerdict>, ValidationError> {
    if validators.is_empty() {
        return Err(ValidationError::NoValidators);
    }
    let voting: Vec<(NodeId, &Dataset)> = validators
        .iter()
        .filter_map(|(id, set)| set.filter(|s| !s.is_empty()).map(|s| (*id, s)))
        .collect();
    if voting.is_empty() {
        return Err(ValidationError::AllAbstained);
    }
    let voter_ids: Vec<NodeId> = voting.iter().map(|(id, _)| *id).collect();
    updates
        .par_iter()
        .map(|u| {
            let mut yes = 0usize;
            let mut scores = Vec::with_capacity(voting.len());
            let mut numeric = false;
            for (_, set) in &voting {
                let v = validate_accuracy(u, global, set, threshold, server_lr, evaluations)?;
                numeric |= v.reason == Some(RejectReason::Numeric);
                yes += v.accepted as usize;
                scores.push(v.score);
            }
            let accepted = 2 * yes > voting.len();
            let reason = match (accepted, numeric) {
                (true, _) => None,
                (false, true) => Some(RejectReason::Numeric),
                (false, false) => Some(RejectReason::Threshold),
            };
            Ok(ValidationVerdict {
                update_id: u.digest,
                accepted,
                score: scores.iter().sum::<f64>() / scores.len() as f64,
                voter_ids: voter_ids.clone(),
                reason,
            })
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Multi-Krum score of every update: sum of the `n - f - 2` smallest squared
/// distances to the other updates.
pub fn krum_scores(updates: &[&ParamVector], f: usize) -> Result<Vec<f64>, ValidationError> {
    let n = updates.len();
    if n < f + 3 {
        return Err(ValidationError::TooFewForKrum {
            needed: f + 3,
            got: n,
        });
    }
    if let Some(first) = updates.first() {
        if let Some(index) = updates.iter().position(|u| !u.same_layout(first)) {
            return Err(ValidationError::ShapeMismatch { index });
        }
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(updates[i].values(), updates[j].values());
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let neighbours = n - f - 2;
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist[i * n + j])
                .collect();
            row.sort_unstable_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect())
}

/// Indices of the `m` lowest Krum scores (ties to the lower index), in
/// ascending index order.
pub fn multi_krum(
    updates: &[&ParamVector],
    f: usize,
    m: usize,
) -> Result<Vec<usize>, ValidationError> {
    let n = updates.len();
    if m > n {
        return Err(ValidationError::AcceptCountTooLarge { m, n });
    }
    let scores = krum_scores(updates, f)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub struct PassThrough {
    name: &'static str,
    expected: UpdateForm,
}

impl Validator for PassThrough {
    fn name(&self) -> &str {
        self.name
    }

    fn validate(
        &self,
        updates: &[ModelUpdate],
        ctx: &ValidationContext<'_>,
    ) -> Result<Vec<ValidationVerdict>, ValidationError> {
        Ok(updates
            .iter()
            .map(|u| validate_pass(u, self.expected, ctx.validators))
            .collect())
    }
}

/// Accuracy on the shared validation split. The split is the same for every
/// validator, so each update is evaluated once and the unanimous vote is
/// recorded for the whole committee.
pub struct GlobalDatasetValidation {
    pub threshold: f64,
}

impl Validator for GlobalDatasetValidation {
    fn name(&self) -> &str {
        "global_dataset"
    }

    fn validate(
        &self,
        updates: &[ModelUpdate],
        ctx: &ValidationContext<'_>,
    ) -> Result<Vec<ValidationVerdict>, ValidationError> {
        if ctx.validators.is_empty() {
            return Err(ValidationError::NoValidators);
        }
        let set = ctx
            .shared_set
            .filter(|s| !s.is_empty())
            .ok_or(ValidationError::NoSharedSet)?;
        updates
            .par_iter()
            .map(|u| {
                let mut v = validate_accuracy(
                    u,
                    ctx.global,
                    set,
                    self.threshold,
                    ctx.server_lr,
                    ctx.evaluations,
                )?;
                v.voter_ids = ctx.validators.to_vec();
                Ok(v)
            })
            .collect()
    }
}

/// Each validator scores updates on its own local holdout; strict majority.
pub struct LocalDatasetValidation {
    pub threshold: f64,
}

impl Validator for LocalDatasetValidation {
    fn name(&self) -> &str {
        "local_dataset"
    }

    fn validate(
        &self,
        updates: &[ModelUpdate],
        ctx: &ValidationContext<'_>,
    ) -> Result<Vec<ValidationVerdict>, ValidationError> {
        let validators: Vec<(NodeId, Option<&Dataset>)> = ctx
            .validators
            .iter()
            .map(|id| (*id, ctx.local_sets.get(id)))
            .collect();
        committee_validate(
            updates,
            &validators,
            self.threshold,
            ctx.global,
            ctx.server_lr,
            ctx.evaluations,
        )
    }
}

pub struct MultiKrumValidation {
    pub assumed_byzantine: usize,
    pub accept_count: usize,
}

impl Validator for MultiKrumValidation {
    fn name(&self) -> &str {
        "multi_krum"
    }

    fn validate(
        &self,
        updates: &[ModelUpdate],
        ctx: &ValidationContext<'_>,
    ) -> Result<Vec<ValidationVerdict>, ValidationError> {
        let payloads: Vec<&ParamVector> = updates.iter().map(|u| &u.payload).collect();
        let n = payloads.len();
        if self.accept_count > n {
            return Err(ValidationError::AcceptCountTooLarge {
                m: self.accept_count,
                n,
            });
        }
        let scores = krum_scores(&payloads, self.assumed_byzantine)?;
        let accepted = multi_krum(&payloads, self.assumed_byzantine, self.accept_count)?;
        Ok(updates
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let ok = accepted.binary_search(&i).is_ok();
                ValidationVerdict {
                    update_id: u.digest,
                    accepted: ok,
                    score: -scores[i],
                    voter_ids: ctx.validators.to_vec(),
                    reason: (!ok).then_some(RejectReason::Krum),
                }
            })
            .collect())
    }
}

pub type ValidatorRegistry = Registry<dyn Validator, ValidationConfig>;

fn threshold(cfg: &ValidationConfig) -> Result<f64, String> {
    match cfg.accuracy_threshold {
        Some(t) if (0.0..=1.0).contains(&t) => Ok(t),
        Some(t) => Err(format!("accuracy_threshold {t} outside [0, 1]")),
        None => Err("accuracy_threshold is required".into()),
    }
}

pub fn default_registry() -> ValidatorRegistry {
    let mut reg = ValidatorRegistry::new("validation");
    reg.register("pass_weights", |_: &ValidationConfig| {
        Ok(Box::new(PassThrough {
            name: "pass_weights",
            expected: UpdateForm::Weights,
        }) as Box<dyn Validator>)
    });
    reg.register("pass_gradients", |_: &ValidationConfig| {
        Ok(Box::new(PassThrough {
            name: "pass_gradients",
            expected: UpdateForm::Gradients,
        }) as Box<dyn Validator>)
    });
    reg.register("global_dataset", |c: &ValidationConfig| {
        Ok(Box::new(GlobalDatasetValidation {
            threshold: threshold(c)?,
        }) as Box<dyn Validator>)
    });
    reg.register("local_dataset", |c: &ValidationConfig| {
        Ok(Box::new(LocalDatasetValidation {
            threshold: threshold(c)?,
        }) as Box<dyn Validator>)
    });
    reg.register("multi_krum", |c: &ValidationConfig| {
        let f = c.assumed_byzantine.ok_or("assumed_byzantine is required")?;
        let m = c.accept_count.ok_or("accept_count is required")?;
        if m == 0 {
            return Err("accept_count must be at least 1".into());
        }
        Ok(Box::new(MultiKrumValidation {
            assumed_byzantine: f,
            accept_count: m,
        }) as Box<dyn Validator>)
    });
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_blobs;
    use crate::model::{init_model, mlp_shapes, LayerShape};
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec(), vec![LayerShape::new(values.len() - 1, 1)]).unwrap()
    }

    /// Scalars embedded as a single-bias layer `(1 -> 1)` with zero weight.
    fn scalar(x: f64) -> ParamVector {
        pv(&[0.0, x])
    }

    #[test]
    fn krum_worked_example() {
        let vs: Vec<ParamVector> = [0.0, 1.0, 2.0, 3.0, 100.0]
            .iter()
            .map(|&x| scalar(x))
            .collect();
        let refs: Vec<&ParamVector> = vs.iter().collect();
        assert_eq!(
            krum_scores(&refs, 1).unwrap(),
            vec![5.0, 2.0, 2.0, 5.0, 19013.0]
        );
        assert_eq!(multi_krum(&refs, 1, 2).unwrap(), vec![1, 2]);
        assert_eq!(multi_krum(&refs, 1, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn krum_identical_updates_take_first_m() {
        let v = pv(&[1.0, 2.0, 3.0]);
        let refs = vec![&v; 6];
        assert!(krum_scores(&refs, 2).unwrap().iter().all(|&s| s == 0.0));
        assert_eq!(multi_krum(&refs, 2, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn krum_needs_enough_updates() {
        let v = scalar(0.0);
        let refs = vec![&v; 4];
        assert_eq!(
            multi_krum(&refs, 2, 1),
            Err(ValidationError::TooFewForKrum { needed: 5, got: 4 })
        );
        assert!(matches!(
            multi_krum(&refs, 1, 5),
            Err(ValidationError::AcceptCountTooLarge { .. })
        ));
    }

    fn update(author: u32, payload: ParamVector, form: UpdateForm) -> ModelUpdate {
        ModelUpdate::new(NodeId(author), form, payload, 10)
    }

    #[test]
    fn pass_checks_form_only() {
        let w = update(0, pv(&[f64::MAX, -1e300]), UpdateForm::Weights);
        let v = validate_pass(&w, UpdateForm::Weights, &[NodeId(1)]);
        assert!(v.accepted);
        assert_eq!(v.score, 1.0);
        let g = update(0, pv(&[0.0, 1.0]), UpdateForm::Gradients);
        let v = validate_pass(&g, UpdateForm::Weights, &[]);
        assert!(!v.accepted);
        assert_eq!(v.reason, Some(RejectReason::Form));
    }

    fn blob_setup() -> (Model, Dataset) {
        let data = generate_blobs(3, 30, 2, 0.5, 1).unwrap();
        (init_model(&mlp_shapes(2, &[4], 3), 2).unwrap(), data)
    }

    #[test]
    fn threshold_is_inclusive() {
        let (model, data) = blob_setup();
        let u = update(0, model.params.clone(), UpdateForm::Weights);
        let counter = AtomicUsize::new(0);
        let score = evaluate(&model, &data).unwrap();
        let at = validate_accuracy(&u, &model, &data, score, 0.1, &counter).unwrap();
        assert!(at.accepted);
        assert_eq!(at.score, score);
        let above = validate_accuracy(&u, &model, &data, score + 1e-9, 0.1, &counter).unwrap();
        assert!(!above.accepted);
        assert_eq!(above.reason, Some(RejectReason::Threshold));
        let zero = validate_accuracy(&u, &model, &data, 0.0, 0.1, &counter).unwrap();
        assert!(zero.accepted);
        assert_eq!(counter.load(Ordering::Relaxed), 3);
    }

    #[test]
    fn committee_majority_rules() {
        let (model, data) = blob_setup();
        let u = update(0, model.params.clone(), UpdateForm::Weights);
        let score = evaluate(&model, &data).unwrap();
        let empty = data.subset(&[]);
        // A validator whose set yields `score` accepts at threshold = score;
        // a set of a single misclassified row rejects.
        let pred = crate::model::predict(&model, &data).unwrap();
        let wrong = (0..data.len())
            .find(|&i| pred[i] != data.labels[i])
            .unwrap();
        let right = (0..data.len())
            .find(|&i| pred[i] == data.labels[i])
            .unwrap();
        let reject_set = data.subset(&[wrong]);
        let accept_set = data.subset(&[right]);
        let c = AtomicUsize::new(0);
        let t = 0.5;
        let run = |sets: Vec<Option<&Dataset>>| {
            let vs: Vec<(NodeId, Option<&Dataset>)> = sets
                .into_iter()
                .enumerate()
                .map(|(i, s)| (NodeId(i as u32), s))
                .collect();
            committee_validate(std::slice::from_ref(&u), &vs, t, &model, 0.1, &c)
        };
        assert!(
            run(vec![
                Some(&accept_set),
                Some(&accept_set),
                Some(&reject_set)
            ])
            .unwrap()[0]
                .accepted
        );
        assert!(!run(vec![Some(&accept_set), Some(&reject_set)]).unwrap()[0].accepted);
        assert!(run(vec![Some(&accept_set)]).unwrap()[0].accepted);
        assert!(!run(vec![Some(&reject_set)]).unwrap()[0].accepted);
        // Abstainers do not count.
        let v = run(vec![Some(&accept_set), None, Some(&empty)]).unwrap();
        assert!(v[0].accepted);
        assert_eq!(v[0].voter_ids, vec![NodeId(0)]);
        assert_eq!(
            run(vec![None, Some(&empty)]),
            Err(ValidationError::AllAbstained)
        );
        let _ = score;
        let again = run(vec![Some(&accept_set), Some(&reject_set), Some(&data)]).unwrap();
        assert_eq!(
            again,
            run(vec![Some(&accept_set), Some(&reject_set), Some(&data)]).unwrap()
        );
    }

    #[test]
    fn gradient_candidates_step_from_global() {
        let (model, _) = blob_setup();
        let g = model
            .params
            .with_values(vec![1.0; model.params.len()])
            .unwrap();
        let u = update(0, g, UpdateForm::Gradients);
        let cand = candidate_model(&u, &model, 0.5).unwrap();
        for (c, p) in cand.params.values().iter().zip(model.params.values()) {
            assert_eq!(*c, p - 0.5);
        }
    }

    #[test]
    fn pass_kinds_never_evaluate() {
        let (model, data) = blob_setup();
        let updates = vec![update(0, model.params.clone(), UpdateForm::Weights)];
        let counter = AtomicUsize::new(0);
        let locals = BTreeMap::new();
        let ctx = ValidationContext {
            global: &model,
            form: UpdateForm::Weights,
            server_lr: 0.1,
            validators: &[NodeId(3)],
            shared_set: Some(&data),
            local_sets: &locals,
            evaluations: &counter,
        };
        let reg = default_registry();
        for kind in ["pass_weights", "pass_gradients"] {
            let v = reg.build(kind, &ValidationConfig::new(kind)).unwrap();
            v.validate(&updates, &ctx).unwrap();
        }
        assert_eq!(counter.load(Ordering::Relaxed), 0);
        let mut cfg = ValidationConfig::new("global_dataset");
        cfg.accuracy_threshold = Some(0.0);
        reg.build("global_dataset", &cfg)
            .unwrap()
            .validate(&updates, &ctx)
            .unwrap();
        assert_eq!(counter.load(Ordering::Relaxed), 1);
    }

    /// Independent reference: brute-force pairwise distances, repeated
    /// minimum extraction for the neighbour sums, then a full ranking.
    fn oracle(points: &[Vec<f64>], f: usize, m: usize) -> Vec<usize> {
        let n = points.len();
        let mut scores = Vec::new();
        for i in 0..n {
            let mut pool: Vec<f64> = Vec::new();
            for j in 0..n {
                if i != j {
                    let mut d = 0.0;
                    for (a, b) in points[i].iter().zip(&points[j]) {
                        d += (a - b).powi(2);
                    }
                    pool.push(d);
                }
            }
            let mut picked = Vec::new();
            for _ in 0..n - f - 2 {
                let (at, _) = pool
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                picked.push(pool.remove(at));
            }
            picked.sort_by(|a, b| a.partial_cmp(b).unwrap());
            scores.push(picked.iter().sum::<f64>());
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
        let mut out = idx[..m].to_vec();
        out.sort();
        out
    }

    fn krum_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
        (3usize..=12, 1usize..=30).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n),
                0..=n - 3,
            )
                .prop_flat_map(move |(pts, f)| (Just(pts), Just(f), 1..=n))
        })
    }

    fn as_pv(points: &[Vec<f64>]) -> Vec<ParamVector> {
        points
            .iter()
            .map(|p| {
                let mut v = p.clone();
                v.push(0.0);
                pv(&v)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn krum_matches_oracle((points, f, m) in krum_instance()) {
            let vs = as_pv(&points);
            let refs: Vec<&ParamVector> = vs.iter().collect();
            prop_assert_eq!(multi_krum(&refs, f, m).unwrap(), oracle(&points, f, m));
        }

        #[test]
        fn krum_is_translation_invariant((points, f, _) in krum_instance(), shift in -50.0f64..50.0) {
            // Power-of-two shifts keep every difference exact.
            let shift = (shift * 4.0).round() / 4.0;
            let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
            let a = as_pv(&points);
            let b = as_pv(&moved);
            let ra: Vec<&ParamVector> = a.iter().collect();
            let rb: Vec<&ParamVector> = b.iter().collect();
            let sa = krum_scores(&ra, f).unwrap();
            let sb = krum_scores(&rb, f).unwrap();
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn krum_rejects_far_outliers(
            honest in 5usize..10,
            outliers in 0usize..4,
            dim in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seed::rng_from(seed);
            let f = outliers.max(1);
            let r = 1.0;
            let n = honest + outliers;
            prop_assume!(n >= f + 3);
            let mut pts: Vec<Vec<f64>> = (0..honest)
                .map(|_| (0..dim).map(|_| rng.random_range(-r / 2.0..r / 2.0)).collect())
                .collect();
            for _ in 0..outliers {
                let far = 10.0 * r * n as f64 + rng.random_range(1.0..1000.0);
                let mut p: Vec<f64> = (0..dim).map(|_| rng.random_range(-r..r)).collect();
                p[0] += if rng.random::<bool>() { far } else { -far };
                pts.push(p);
            }
            let vs = as_pv(&pts);
            let refs: Vec<&ParamVector> = vs.iter().collect();
            for m in 1..=n - f {
                let acc = multi_krum(&refs, f, m).unwrap();
                prop_assert!(acc.iter().all(|&i| i < honest), "m={} accepted {:?}", m, acc);
            }
        }

        #[test]
        fn raising_threshold_never_grows_acceptance(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let data = generate_blobs(3, 10, 2, 1.0, seed).unwrap();
            let global = init_model(&mlp_shapes(2, &[3], 3), seed).unwrap();
            let updates: Vec<ModelUpdate> = (0..5)
                .map(|i| update(i, init_model(&mlp_shapes(2, &[3], 3), seed ^ i as u64).unwrap().params, UpdateForm::Weights))
                .collect();
            let c = AtomicUsize::new(0);
            let accepted = |t: f64| -> Vec<bool> {
                updates.iter().map(|u| validate_accuracy(u, &global, &data, t, 0.1, &c).unwrap().accepted).collect()
            };
            let (a_lo, a_hi) = (accepted(lo), accepted(hi));
            for (l, h) in a_lo.iter().zip(&a_hi) {
                prop_assert!(!h || *l);
            }
        }
    }
}
