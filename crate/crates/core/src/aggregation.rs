//! Coordinate-wise aggregation of accepted updates.
//!
//! Per coordinate, summands are sorted (IEEE total order) and then summed
//! pairwise, so mean and FedAvg are bit-identical under any permutation of
//! their inputs. Mean and FedAvg results are clamped to the coordinate's
//! input range to absorb the last-ulp rounding of the division.

use crate::config::AggregationConfig;
use crate::model::{Model, ModelError, ParamVector};
use crate::registry::Registry;
use crate::update::ModelUpdate;
use crate::UpdateForm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("nothing to aggregate")]
    Empty,
    #[error("update {index} has a different parameter layout")]
    ShapeMismatch { index: usize },
    #[error("update {index} claims zero samples")]
    ZeroSamples { index: usize },
    #[error("round mixes weight- and gradient-form payloads")]
    MixedForms,
    #[error("{aggregator} only accepts weight-form payloads")]
    FormNotSupported { aggregator: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn pairwise(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise(&xs[..mid]) + pairwise(&xs[mid..])
        }
    }
}

/// Order-independent sum: sort, then pairwise.
fn stable_sum(scratch: &mut [f64]) -> f64 {
    scratch.sort_unstable_by(f64::total_cmp);
    pairwise(scratch)
}

fn check_layout(updates: &[&ParamVector]) -> Result<(), AggregationError> {
    let first = updates.first().ok_or(AggregationError::Empty)?;
    for (index, u) in updates.iter().enumerate().skip(1) {
        if !first.same_layout(u) {
            return Err(AggregationError::ShapeMismatch { index });
        }
    }
    Ok(())
}

fn coordinate_range(updates: &[&ParamVector], j: usize) -> (f64, f64) {
    updates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            let v = u.values()[j];
            (lo.min(v), hi.max(v))
        })
}

/// Sample-weighted average with weights `n_i / sum(n)`.
pub fn fedavg(updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError> {
    let vectors: Vec<&ParamVector> = updates.iter().map(|(p, _)| *p).collect();
    check_layout(&vectors)?;
    if let Some(index) = updates.iter().position(|(_, n)| *n == 0) {
        return Err(AggregationError::ZeroSamples { index });
    }
    let total: u64 = updates.iter().map(|(_, n)| n).sum();
    let weights: Vec<f64> = updates
        .iter()
        .map(|(_, n)| *n as f64 / total as f64)
        .collect();
    let dim = vectors[0].len();
    let mut scratch = vec![0.0; updates.len()];
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        for (s, (u, w)) in scratch.iter_mut().zip(vectors.iter().zip(&weights)) {
            *s = w * u.values()[j];
        }
        let (lo, hi) = coordinate_range(&vectors, j);
        out.push(stable_sum(&mut scratch).clamp(lo, hi));
    }
    Ok(vectors[0].with_values(out)?)
}

/// Coordinate-wise arithmetic mean.
pub fn mean(updates: &[&ParamVector]) -> Result<ParamVector, AggregationError> {
    check_layout(updates)?;
    let k = updates.len() as f64;
    let dim = updates[0].len();
    let mut scratch = vec![0.0; updates.len()];
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        for (s, u) in scratch.iter_mut().zip(updates) {
            *s = u.values()[j];
        }
        let (lo, hi) = coordinate_range(updates, j);
        out.push((stable_sum(&mut scratch) / k).clamp(lo, hi));
    }
    Ok(updates[0].with_values(out)?)
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn median(updates: &[&ParamVector]) -> Result<ParamVector, AggregationError> {
    check_layout(updates)?;
    let k = updates.len();
    let dim = updates[0].len();
    let mut scratch = vec![0.0; k];
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        for (s, u) in scratch.iter_mut().zip(updates) {
            *s = u.values()[j];
        }
        scratch.sort_unstable_by(f64::total_cmp);
        let m = if k % 2 == 1 {
            scratch[k / 2]
        } else {
            let (a, b) = (scratch[k / 2 - 1], scratch[k / 2]);
            a + (b - a) / 2.0
        };
        out.push(m);
    }
    Ok(updates[0].with_values(out)?)
}

/// An aggregation rule over accepted payloads.
pub trait Aggregator: Send + Sync {
    fn name(&self) -> &str;

    /// True when the rule is only defined for weight-form payloads.
    fn weights_only(&self) -> bool {
        false
    }

    /// `updates` pairs each payload with its claimed sample count.
    fn aggregate(&self, updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError>;
}

pub struct FedAvg;
pub struct Mean;
pub struct Median;

impl Aggregator for FedAvg {
    fn name(&self) -> &str {
        "fedavg"
    }
    fn weights_only(&self) -> bool {
        true
    }
    fn aggregate(&self, updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError> {
        fedavg(updates)
    }
}

impl Aggregator for Mean {
    fn name(&self) -> &str {
        "mean"
    }
    fn aggregate(&self, updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError> {
        mean(&updates.iter().map(|(p, _)| *p).collect::<Vec<_>>())
    }
}

impl Aggregator for Median {
    fn name(&self) -> &str {
        "median"
    }
    fn aggregate(&self, updates: &[(&ParamVector, u64)]) -> Result<ParamVector, AggregationError> {
        median(&updates.iter().map(|(p, _)| *p).collect::<Vec<_>>())
    }
}

pub type AggregatorRegistry = Registry<dyn Aggregator, AggregationConfig>;

pub fn default_registry() -> AggregatorRegistry {
    let mut reg = AggregatorRegistry::new("aggregation");
    reg.register("fedavg", |_: &AggregationConfig| {
        Ok(Box::new(FedAvg) as Box<dyn Aggregator>)
    });
    reg.register("mean", |_: &AggregationConfig| {
        Ok(Box::new(Mean) as Box<dyn Aggregator>)
    });
    reg.register("median", |_: &AggregationConfig| {
        Ok(Box::new(Median) as Box<dyn Aggregator>)
    });
    reg
}

/// Folds the accepted updates into the next global model. Weight payloads
/// replace the parameters with their aggregate; gradient payloads step the
/// current parameters by `-server_lr * aggregate`. No updates: unchanged.
pub fn apply(
    global: &Model,
    accepted: &[&ModelUpdate],
    aggregator: &dyn Aggregator,
    server_lr: f64,
) -> Result<Model, AggregationError> {
    let Some(first) = accepted.first() else {
        return Ok(global.clone());
    };
    let form = first.form;
    if accepted.iter().any(|u| u.form != form) {
        return Err(AggregationError::MixedForms);
    }
    if form == UpdateForm::Gradients && aggregator.weights_only() {
        return Err(AggregationError::FormNotSupported {
            aggregator: aggregator.name().to_string(),
        });
    }
    for (index, u) in accepted.iter().enumerate() {
        if !u.payload.same_layout(&global.params) {
            return Err(AggregationError::ShapeMismatch { index });
        }
    }
    let pairs: Vec<(&ParamVector, u64)> = accepted
        .iter()
        .map(|u| (&u.payload, u.num_samples))
        .collect();
    let agg = aggregator.aggregate(&pairs)?;
    let params = match form {
        UpdateForm::Weights => agg,
        UpdateForm::Gradients => {
            let stepped = global
                .params
                .values()
                .iter()
                .zip(agg.values())
                .map(|(p, g)| p - server_lr * g)
                .collect();
            global.params.with_values(stepped)?
        }
    };
    Ok(Model {
        params,
        activation: global.activation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerShape;
    use crate::NodeId;
    use proptest::prelude::*;

    /// Vectors of length `n` laid out as one `(n-1) -> 1` layer.
    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec(), vec![LayerShape::new(values.len() - 1, 1)]).unwrap()
    }

    #[test]
    fn fedavg_weighted_example() {
        let (a, b) = (pv(&[0.0, 0.0]), pv(&[4.0, 8.0]));
        let out = fedavg(&[(&a, 100), (&b, 300)]).unwrap();
        // Scalar-loop reference.
        let mut want = [0.0; 2];
        for (v, n) in [(&a, 100.0), (&b, 300.0)] {
            for (w, x) in want.iter_mut().zip(v.values()) {
                *w += x * n / 400.0;
            }
        }
        assert_eq!(out.values(), &want);
        assert_eq!(out.values(), &[3.0, 6.0]);
        assert_eq!(fedavg(&[(&b, 7)]).unwrap(), b);
        assert_eq!(
            fedavg(&[(&a, 0)]),
            Err(AggregationError::ZeroSamples { index: 0 })
        );
    }

    #[test]
    fn mean_examples() {
        let vs = [pv(&[1.0, 5.0]), pv(&[2.0, 4.0]), pv(&[9.0, 0.0])];
        let refs: Vec<&ParamVector> = vs.iter().collect();
        assert_eq!(mean(&refs).unwrap().values(), &[4.0, 3.0]);
        let v = pv(&[0.1, -0.7, 1e-3]);
        assert_eq!(mean(&[&v, &v, &v]).unwrap(), v);
        let neg = pv(&[-0.1, 0.7, -1e-3]);
        assert_eq!(mean(&[&v, &neg]).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn median_examples() {
        let vs = [pv(&[1.0, 5.0]), pv(&[2.0, 4.0]), pv(&[9.0, 0.0])];
        let refs: Vec<&ParamVector> = vs.iter().collect();
        assert_eq!(median(&refs).unwrap().values(), &[2.0, 4.0]);
        let (a, b) = (pv(&[1.0, -3.5]), pv(&[2.0, 10.25]));
        assert_eq!(median(&[&a, &b]).unwrap(), mean(&[&a, &b]).unwrap());
        let (z, big) = (pv(&[0.0, 0.0]), pv(&[1e9, 1e9]));
        assert_eq!(median(&[&z, &z, &big]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn layout_and_emptiness_errors() {
        let a = pv(&[1.0, 2.0]);
        let b = pv(&[1.0, 2.0, 3.0]);
        assert_eq!(
            mean(&[&a, &b]),
            Err(AggregationError::ShapeMismatch { index: 1 })
        );
        assert_eq!(median(&[]), Err(AggregationError::Empty));
    }

    fn update(values: &[f64], form: UpdateForm) -> ModelUpdate {
        ModelUpdate::new(NodeId(0), form, pv(values), 10)
    }

    #[test]
    fn apply_forms() {
        let global = Model::from_params(pv(&[1.0, 2.0]));
        let g = update(&[10.0, -20.0], UpdateForm::Gradients);
        let out = apply(&global, &[&g], &Mean, 0.1).unwrap();
        assert_eq!(out.params.values(), &[0.0, 4.0]);

        let same = update(&[1.0, 2.0], UpdateForm::Weights);
        assert_eq!(
            apply(&global, &[&same, &same], &FedAvg, 0.1).unwrap(),
            global
        );
        assert_eq!(apply(&global, &[], &Median, 0.1).unwrap(), global);

        assert_eq!(
            apply(&global, &[&same, &g], &Mean, 0.1),
            Err(AggregationError::MixedForms)
        );
        assert!(matches!(
            apply(&global, &[&g], &FedAvg, 0.1),
            Err(AggregationError::FormNotSupported { .. })
        ));
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u64>, u64)> {
        (1usize..=20, 2usize..=50).prop_flat_map(|(k, d)| {
            (
                prop::collection::vec(prop::collection::vec(-1e3f64..1e3, d), k),
                prop::collection::vec(1u64..1000, k),
                any::<u64>(),
            )
        })
    }

    fn shuffled<T: Clone>(xs: &[T], seed: u64) -> Vec<T> {
        use rand::seq::SliceRandom;
        let mut v = xs.to_vec();
        v.shuffle(&mut crate::seed::rng_from(seed));
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn permutation_invariance((rows, counts, seed) in instance()) {
            let vs: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
            let pairs: Vec<(&ParamVector, u64)> = vs.iter().zip(&counts).map(|(v, &n)| (v, n)).collect();
            let refs: Vec<&ParamVector> = vs.iter().collect();
            let pairs_p = shuffled(&pairs, seed);
            let refs_p = shuffled(&refs, seed);
            prop_assert_eq!(fedavg(&pairs).unwrap(), fedavg(&pairs_p).unwrap());
            prop_assert_eq!(median(&refs).unwrap(), median(&refs_p).unwrap());
            let (m, mp) = (mean(&refs).unwrap(), mean(&refs_p).unwrap());
            for (a, b) in m.values().iter().zip(mp.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn averages_stay_in_coordinate_range((rows, counts, _seed) in instance()) {
            let vs: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
            let pairs: Vec<(&ParamVector, u64)> = vs.iter().zip(&counts).map(|(v, &n)| (v, n)).collect();
            let refs: Vec<&ParamVector> = vs.iter().collect();
            let f = fedavg(&pairs).unwrap();
            let m = mean(&refs).unwrap();
            for j in 0..f.len() {
                let (lo, hi) = coordinate_range(&refs, j);
                prop_assert!(lo <= f.values()[j] && f.values()[j] <= hi);
                prop_assert!(lo <= m.values()[j] && m.values()[j] <= hi);
            }
        }

        #[test]
        fn median_ignores_a_minority(
            majority in 3usize..8,
            x in -10.0f64..10.0,
            junk in prop::collection::vec(-1e12f64..1e12, 0..7),
        ) {
            prop_assume!(junk.len() < majority);
            let mut vs: Vec<ParamVector> = (0..majority).map(|_| pv(&[x, x])).collect();
            vs.extend(junk.iter().map(|&j| pv(&[j, -j])));
            let refs: Vec<&ParamVector> = vs.iter().collect();
            let med = median(&refs).unwrap();
            prop_assert_eq!(med.values(), &[x, x]);
        }
    }
}
