//! Multilayer perceptron substrate: ReLU hidden layers, softmax output,
//! mean cross-entropy loss and plain mini-batch SGD.
//!
//! Parameters live in one flat [`ParamVector`]. Layer `l` occupies
//! `input_dim * output_dim` weights stored row-major (`w[i * output_dim + j]`
//! connects input `i` to output `j`) followed by `output_dim` biases.

use crate::dataset::Dataset;
use crate::seed::rng_from;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("architecture must contain at least one layer")]
    EmptyArchitecture,
    #[error("layer {index} has a zero dimension")]
    ZeroDimension { index: usize },
    #[error("layer {index} expects input_dim {expected}, previous layer outputs {found}")]
    BrokenChain {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("parameter vector has {found} values, layer shapes require {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("input has {found} columns, model expects {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} requires a non-empty batch")]
    EmptyBatch(&'static str),
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LayerShape {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        LayerShape {
            input_dim,
            output_dim,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.input_dim * self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.output_dim
    }
}

/// Builds the chained shapes `input -> hidden... -> classes`.
pub fn mlp_shapes(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerShape> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    dims.windows(2)
        .map(|w| LayerShape::new(w[0], w[1]))
        .collect()
}

pub fn check_shapes(shapes: &[LayerShape]) -> Result<(), ModelError> {
    if shapes.is_empty() {
        return Err(ModelError::EmptyArchitecture);
    }
    for (index, s) in shapes.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(ModelError::ZeroDimension { index });
        }
        if index > 0 && shapes[index - 1].output_dim != s.input_dim {
            return Err(ModelError::BrokenChain {
                index,
                expected: s.input_dim,
                found: shapes[index - 1].output_dim,
            });
        }
    }
    Ok(())
}

/// Flat finite parameter (or gradient) vector plus the layer layout it
/// follows. Both update forms share this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shapes: Vec<LayerShape>) -> Result<Self, ModelError> {
        check_shapes(&shapes)?;
        let expected: usize = shapes.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(ParamVector { values, shapes })
    }

    pub fn zeros(shapes: Vec<LayerShape>) -> Result<Self, ModelError> {
        let n = shapes.iter().map(LayerShape::param_count).sum();
        ParamVector::new(vec![0.0; n], shapes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same layout, new values. Re-checks length and finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        ParamVector::new(values, self.shapes.clone())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes && self.values.len() == other.values.len()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.shapes.len());
        let mut at = 0;
        for s in &self.shapes {
            offsets.push(at);
            at += s.param_count();
        }
        offsets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ReLU on hidden layers, softmax on the output layer.
    ReluSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParamVector,
    pub activation: Activation,
}

impl Model {
    pub fn from_params(params: ParamVector) -> Self {
        Model {
            params,
            activation: Activation::ReluSoftmax,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.shapes[0].input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.params.shapes.last().expect("non-empty").output_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(shapes: &[LayerShape], seed: u64) -> Result<Model, ModelError> {
    check_shapes(shapes)?;
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(shapes.iter().map(LayerShape::param_count).sum());
    for s in shapes {
        let limit = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
        for _ in 0..s.weight_count() {
            values.push(rng.random_range(-limit..limit));
        }
        values.extend(std::iter::repeat_n(0.0, s.output_dim));
    }
    Ok(Model::from_params(ParamVector::new(
        values,
        shapes.to_vec(),
    )?))
}

/// Scratch buffers for one example's forward/backward pass.
struct Workspace {
    /// Post-activation outputs per layer; `acts[0]` is the input copy.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(shapes: &[LayerShape]) -> Self {
        let mut acts = vec![vec![0.0; shapes[0].input_dim]];
        for s in shapes {
            acts.push(vec![0.0; s.output_dim]);
        }
        let widest = shapes
            .iter()
            .map(|s| s.input_dim.max(s.output_dim))
            .max()
            .unwrap_or(0);
        Workspace {
            acts,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }
}

/// Fills `ws.acts` for input `x`; the last layer holds raw logits.
fn forward_logits(params: &ParamVector, offsets: &[usize], x: &[f64], ws: &mut Workspace) {
    ws.acts[0].copy_from_slice(x);
    let last = params.shapes.len() - 1;
    for (l, s) in params.shapes.iter().enumerate() {
        let w = &params.values[offsets[l]..offsets[l] + s.weight_count()];
        let b = &params.values[offsets[l] + s.weight_count()..offsets[l] + s.param_count()];
        let (before, after) = ws.acts.split_at_mut(l + 1);
        let input = &before[l];
        let out = &mut after[0];
        out.copy_from_slice(b);
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * s.output_dim..(i + 1) * s.output_dim];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        if l != last {
            for o in out.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// First index of the maximum; ties resolve to the lowest class.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities, one row per input row.
pub fn forward(model: &Model, inputs: &Matrix) -> Result<Matrix, ModelError> {
    let d = model.input_dim();
    if inputs.cols != d {
        return Err(ModelError::InputShape {
            expected: d,
            found: inputs.cols,
        });
    }
    let c = model.num_classes();
    let offsets = model.params.layer_offsets();
    let mut ws = Workspace::new(&model.params.shapes);
    let mut out = Vec::with_capacity(inputs.rows * c);
    for r in 0..inputs.rows {
        forward_logits(&model.params, &offsets, inputs.row(r), &mut ws);
        let probs = ws.acts.last_mut().expect("output layer");
        softmax_in_place(probs);
        out.extend_from_slice(probs);
    }
    Ok(Matrix::new(inputs.rows, c, out))
}

fn check_batch(model: &Model, data: &Dataset) -> Result<(), ModelError> {
    if data.features.cols != model.input_dim() {
        return Err(ModelError::InputShape {
            expected: model.input_dim(),
            found: data.features.cols,
        });
    }
    let c = model.num_classes();
    if let Some(&label) = data.labels.iter().find(|&&y| y >= c) {
        return Err(ModelError::LabelOutOfRange { label, classes: c });
    }
    Ok(())
}

/// Mean cross-entropy of `data` under `model`.
pub fn loss(model: &Model, data: &Dataset) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch("loss"));
    }
    check_batch(model, data)?;
    let offsets = model.params.layer_offsets();
    let mut ws = Workspace::new(&model.params.shapes);
    let mut total = 0.0;
    for (r, &y) in data.labels.iter().enumerate() {
        forward_logits(&model.params, &offsets, data.features.row(r), &mut ws);
        let logits = ws.acts.last().expect("output layer");
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    Ok(total / data.len() as f64)
}

/// Sums per-example gradients of the cross-entropy over `rows` into `grad`
/// (not averaged).
fn accumulate_gradient(
    params: &ParamVector,
    offsets: &[usize],
    data: &Dataset,
    rows: &[usize],
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let shapes = &params.shapes;
    for &r in rows {
        forward_logits(params, offsets, data.features.row(r), ws);
        let out = ws.acts.last_mut().expect("output layer");
        softmax_in_place(out);
        ws.delta.clear();
        ws.delta.extend_from_slice(out);
        ws.delta[data.labels[r]] -= 1.0;

        for l in (0..shapes.len()).rev() {
            let s = shapes[l];
            let wc = s.weight_count();
            let input = &ws.acts[l];
            let g = &mut grad[offsets[l]..offsets[l] + s.param_count()];
            let (gw, gb) = g.split_at_mut(wc);
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut gw[i * s.output_dim..(i + 1) * s.output_dim];
                for (gij, &dj) in row.iter_mut().zip(&ws.delta) {
                    *gij += xi * dj;
                }
            }
            for (gbj, &dj) in gb.iter_mut().zip(&ws.delta) {
                *gbj += dj;
            }
            if l == 0 {
                break;
            }
            let w = &params.values[offsets[l]..offsets[l] + wc];
            ws.delta_prev.clear();
            for (i, &ai) in input.iter().enumerate() {
                // ReLU derivative: the stored activation is zero iff the
                // pre-activation was non-positive.
                if ai <= 0.0 {
                    ws.delta_prev.push(0.0);
                    continue;
                }
                let row = &w[i * s.output_dim..(i + 1) * s.output_dim];
                let v: f64 = row.iter().zip(&ws.delta).map(|(a, b)| a * b).sum();
                ws.delta_prev.push(v);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
}

/// Gradient of the mean cross-entropy over `batch` with respect to the
/// parameters.
pub fn gradient(model: &Model, batch: &Dataset) -> Result<ParamVector, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch("gradient"));
    }
    check_batch(model, batch)?;
    let offsets = model.params.layer_offsets();
    let mut ws = Workspace::new(&model.params.shapes);
    let mut grad = vec![0.0; model.params.len()];
    let rows: Vec<usize> = (0..batch.len()).collect();
    accumulate_gradient(&model.params, &offsets, batch, &rows, &mut ws, &mut grad);
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    model.params.with_values(grad)
}

/// Mini-batch SGD for `spec.local_epochs` epochs. Epoch `e` shuffles with a
/// ChaCha stream keyed by `(spec.seed, e)`.
pub fn train_local(
    model: &Model,
    partition: &Dataset,
    spec: &TrainSpec,
) -> Result<Model, ModelError> {
    if partition.is_empty() {
        return Err(ModelError::EmptyBatch("train_local"));
    }
    if !(spec.learning_rate >= 0.0 && spec.learning_rate.is_finite()) {
        return Err(ModelError::BadLearningRate(spec.learning_rate));
    }
    check_batch(model, partition)?;
    let batch_size = spec.batch_size.max(1);
    let offsets = model.params.layer_offsets();
    let mut ws = Workspace::new(&model.params.shapes);
    let mut params = model.params.clone();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..partition.len()).collect();

    for epoch in 0..spec.local_epochs {
        let mut rng = rng_from(spec.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_gradient(&params, &offsets, partition, chunk, &mut ws, &mut grad);
            let step = spec.learning_rate / chunk.len() as f64;
            for (p, g) in params.values.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    if let Some(index) = params.values.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { index });
    }
    Ok(Model {
        params,
        activation: model.activation,
    })
}

/// Predicted class per row (argmax of logits, ties to the lowest index).
pub fn predict(model: &Model, data: &Dataset) -> Result<Vec<usize>, ModelError> {
    check_batch(model, data)?;
    let offsets = model.params.layer_offsets();
    let mut ws = Workspace::new(&model.params.shapes);
    Ok((0..data.len())
        .map(|r| {
            forward_logits(&model.params, &offsets, data.features.row(r), &mut ws);
            argmax(ws.acts.last().expect("output layer"))
        })
        .collect())
}

/// Fraction of rows whose predicted class matches the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyBatch("evaluate"));
    }
    let pred = predict(model, dataset)?;
    let correct = pred
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Overall accuracy plus accuracy restricted to each class. Classes absent
/// from `dataset` report 0.
pub fn evaluate_per_class(model: &Model, dataset: &Dataset) -> Result<(f64, Vec<f64>), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyBatch("evaluate"));
    }
    let pred = predict(model, dataset)?;
    let c = model.num_classes();
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    for (&p, &y) in pred.iter().zip(&dataset.labels) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let overall = hits.iter().sum::<usize>() as f64 / dataset.len() as f64;
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    Ok((overall, per_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_blobs;
    use proptest::prelude::*;

    fn shapes_2_3_2() -> Vec<LayerShape> {
        vec![LayerShape::new(2, 3), LayerShape::new(3, 2)]
    }

    fn tiny_data() -> Dataset {
        Dataset::new(
            "tiny",
            Matrix::new(4, 2, vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.8, 2.0, -2.0]),
            vec![0, 1, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn init_length_and_determinism() {
        let a = init_model(&shapes_2_3_2(), 9).unwrap();
        assert_eq!(a.params.len(), 17);
        let b = init_model(&shapes_2_3_2(), 9).unwrap();
        assert_eq!(a, b);
        let c = init_model(&shapes_2_3_2(), 2).unwrap();
        let d = init_model(&shapes_2_3_2(), 1).unwrap();
        assert_ne!(c.params.values(), d.params.values());
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_bias() {
        let m = init_model(&[LayerShape::new(10, 6)], 3).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        let v = m.params.values();
        assert!(v[..60].iter().all(|w| w.abs() < limit));
        assert!(v[60..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let err = init_model(&[LayerShape::new(2, 3), LayerShape::new(4, 2)], 0).unwrap_err();
        assert!(matches!(err, ModelError::BrokenChain { index: 1, .. }));
        assert_eq!(
            init_model(&[], 0).unwrap_err(),
            ModelError::EmptyArchitecture
        );
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let m = Model::from_params(ParamVector::zeros(shapes_2_3_2()).unwrap());
        let p = forward(&m, &Matrix::new(2, 2, vec![1.0, 2.0, -3.0, 4.0])).unwrap();
        assert!(p.data.iter().all(|&x| x == 0.5));
        let empty = forward(&m, &Matrix::zeros(0, 2)).unwrap();
        assert_eq!((empty.rows, empty.cols), (0, 2));
        assert!(forward(&m, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn gradient_vanishes_at_a_minimum() {
        // A model whose output ignores the input and puts almost all mass on
        // the label: the gradient of the single-example loss is ~0.
        let mut values = vec![0.0; 17];
        values[15] = 40.0;
        let m = Model::from_params(ParamVector::new(values, shapes_2_3_2()).unwrap());
        let batch = Dataset::new("one", Matrix::new(1, 2, vec![0.3, 0.7]), vec![0], 2).unwrap();
        let g = gradient(&m, &batch).unwrap();
        let norm: f64 = g.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn gradient_is_invariant_to_duplicating_the_batch() {
        let m = init_model(&shapes_2_3_2(), 4).unwrap();
        let data = tiny_data();
        let idx: Vec<usize> = (0..data.len()).chain(0..data.len()).collect();
        let doubled = data.subset(&idx);
        let a = gradient(&m, &data).unwrap();
        let b = gradient(&m, &doubled).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(gradient(&m, &data.subset(&[])).is_err());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let m = init_model(&shapes_2_3_2(), 4).unwrap();
        let spec = TrainSpec {
            local_epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            seed: 1,
        };
        assert_eq!(train_local(&m, &tiny_data(), &spec).unwrap(), m);
    }

    #[test]
    fn full_batch_epoch_is_one_gradient_step() {
        let m = init_model(&shapes_2_3_2(), 4).unwrap();
        let data = tiny_data();
        let lr = 0.3;
        let spec = TrainSpec {
            local_epochs: 1,
            batch_size: data.len(),
            learning_rate: lr,
            seed: 77,
        };
        let out = train_local(&m, &data, &spec).unwrap();
        let g = gradient(&m, &data).unwrap();
        for ((o, p), gi) in out
            .params
            .values()
            .iter()
            .zip(m.params.values())
            .zip(g.values())
        {
            assert!((o - (p - lr * gi)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_improves_blob_accuracy_and_is_deterministic() {
        let data = generate_blobs(3, 60, 2, 0.5, 5).unwrap();
        let m = init_model(&mlp_shapes(2, &[8], 3), 1).unwrap();
        let spec = TrainSpec {
            local_epochs: 5,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 3,
        };
        let before = evaluate(&m, &data).unwrap();
        let trained = train_local(&m, &data, &spec).unwrap();
        let after = evaluate(&trained, &data).unwrap();
        assert!(after > before, "{before} -> {after}");
        assert_eq!(trained, train_local(&m, &data, &spec).unwrap());
        assert_eq!(trained.params.shapes(), m.params.shapes());
    }

    #[test]
    fn evaluate_counts_and_breaks_ties_low() {
        // Output bias favours class 0 for every input.
        let mut values = vec![0.0; 17];
        values[15] = 1.0;
        let m = Model::from_params(ParamVector::new(values, shapes_2_3_2()).unwrap());
        let labels = vec![0, 0, 1, 1, 1];
        let data = Dataset::new("d", Matrix::zeros(5, 2), labels, 2).unwrap();
        assert_eq!(evaluate(&m, &data).unwrap(), 0.4);
        assert_eq!(evaluate(&m, &data).unwrap(), evaluate(&m, &data).unwrap());

        let zero = Model::from_params(ParamVector::zeros(mlp_shapes(2, &[4], 3)).unwrap());
        let balanced = generate_blobs(3, 10, 2, 1.0, 0).unwrap();
        assert!((evaluate(&zero, &balanced).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let (_, per_class) = evaluate_per_class(&zero, &balanced).unwrap();
        assert_eq!(per_class, vec![1.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in any::<u64>(), xs in prop::collection::vec(-50.0f64..50.0, 12)) {
            let m = init_model(&mlp_shapes(3, &[5], 4), seed).unwrap();
            let p = forward(&m, &Matrix::new(4, 3, xs)).unwrap();
            for r in 0..4 {
                let row = p.row(r);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
