//! Softmax-regression head over [`FeatureVector`]s.
//!
//! Features are standardized with the training-set mean and (floored)
//! population standard deviation, then a multinomial logistic regression is
//! fit by full-batch gradient descent from zero on
//! `mean cross-entropy + (l2 / 2) * ||W||^2`. Every reduction runs in a
//! fixed order so training is bit-for-bit reproducible.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::ids::LabelId;
use crate::project::ClassificationResult;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-8;
/// Slack allowed before a loss increase counts as a violation.
pub const LOSS_SLACK: f64 = 1e-12;
const MAX_LR_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.1, epochs: 300, l2: 1e-3 }
    }
}

/// A trained classifier. Serialized as JSON into the blob store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub schema_version: u32,
    pub version: u64,
    pub label_ids: Vec<LabelId>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// One row of `FEATURE_DIM` weights per label.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub trained_at_ms: u64,
    pub train_sample_count: usize,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Times the step size was halved after a loss increase.
    pub lr_halvings: u32,
    pub final_learning_rate: f64,
}

impl ModelVersion {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let model: ModelVersion = serde_json::from_slice(bytes)?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(CoreError::InvalidEvent(format!(
                "unsupported model schema version {}",
                model.schema_version
            )));
        }
        let k = model.label_ids.len();
        let dims_ok = model.mean.len() == FEATURE_DIM
            && model.std.len() == FEATURE_DIM
            && model.bias.len() == k
            && model.weights.len() == k
            && model.weights.iter().all(|r| r.len() == FEATURE_DIM);
        if !dims_ok || k < 2 {
            return Err(CoreError::InvalidEvent("model parameters have the wrong shape".into()));
        }
        Ok(model)
    }
}

/// Flat parameter vector: `k * d` weights (row-major) followed by `k` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub k: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl Params {
    pub fn zeros(k: usize, d: usize) -> Self {
        Params { k, d, values: vec![0.0; k * d + k] }
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.values[class * self.d + feature]
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.values[class * self.d..(class + 1) * self.d]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[self.k * self.d + class]
    }

    pub fn biases(&self) -> &[f64] {
        &self.values[self.k * self.d..]
    }

    pub fn is_bias(&self, index: usize) -> bool {
        index >= self.k * self.d
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Regularized mean cross-entropy over an already standardized dataset.
#[derive(Debug, Clone)]
pub struct SoftmaxObjective {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
    pub k: usize,
    pub l2: f64,
}

impl SoftmaxObjective {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<usize>, k: usize, l2: f64) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(ys.iter().all(|&y| y < k));
        SoftmaxObjective { xs, ys, k, l2 }
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    pub fn loss(&self, p: &Params) -> f64 {
        self.loss_and_gradient(p).0
    }

    pub fn gradient(&self, p: &Params) -> Params {
        self.loss_and_gradient(p).1
    }

    pub fn loss_and_gradient(&self, p: &Params) -> (f64, Params) {
        let (k, d) = (p.k, p.d);
        let n = self.xs.len() as f64;
        let mut grad = Params::zeros(k, d);
        let mut ce = 0.0;
        let mut logits = vec![0.0; k];
        let mut probs = vec![0.0; k];
        for (x, &y) in self.xs.iter().zip(&self.ys) {
            for (c, z) in logits.iter_mut().enumerate() {
                *z = dot(p.weight_row(c), x) + p.bias(c);
            }
            let lse = softmax_into(&logits, &mut probs);
            ce += lse - logits[y];
            for c in 0..k {
                let r = probs[c] - if c == y { 1.0 } else { 0.0 };
                let row = &mut grad.values[c * d..(c + 1) * d];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += r * xi;
                }
                grad.values[k * d + c] += r;
            }
        }
        let mut penalty = 0.0;
        for w in &p.values[..k * d] {
            penalty += w * w;
        }
        for (g, w) in grad.values[..k * d].iter_mut().zip(&p.values[..k * d]) {
            *g = *g / n + self.l2 * w;
        }
        for g in &mut grad.values[k * d..] {
            *g /= n;
        }
        (ce / n + 0.5 * self.l2 * penalty, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Writes softmax(z) into `out` and returns log-sum-exp(z).
fn softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    max + sum.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FittedHead {
    pub standardizer: Standardizer,
    pub params: Params,
    pub report: TrainReport,
    /// Objective value after each accepted step, starting with the initial point.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent from zero. `classes[i]` indexes the label
/// list for `rows[i]`.
pub fn fit_head(rows: &[&[f64]], classes: &[usize], k: usize, config: &TrainConfig) -> FittedHead {
    // Reduce in a content-defined order so the result does not depend on
    // the order samples were added in.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        classes[a].cmp(&classes[b]).then_with(|| {
            let ka = rows[a].iter().map(|v| v.to_bits());
            ka.cmp(rows[b].iter().map(|v| v.to_bits()))
        })
    });
    let rows: Vec<&[f64]> = order.iter().map(|&i| rows[i]).collect();
    let classes: Vec<usize> = order.iter().map(|&i| classes[i]).collect();
    let rows = rows.as_slice();
    let standardizer = Standardizer::fit(rows);
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let d = standardizer.mean.len();
    let objective = SoftmaxObjective::new(xs, classes, k, config.l2);

    let mut params = Params::zeros(k, d);
    let (mut loss, mut grad) = objective.loss_and_gradient(&params);
    let initial_loss = loss;
    let mut losses = vec![loss];
    let mut lr = config.learning_rate;
    let mut halvings = 0;
    let mut epoch = 0;
    while epoch < config.epochs {
        let mut candidate = params.clone();
        for (c, g) in candidate.values.iter_mut().zip(&grad.values) {
            *c -= lr * g;
        }
        let (c_loss, c_grad) = objective.loss_and_gradient(&candidate);
        if c_loss > loss + LOSS_SLACK {
            if halvings == MAX_LR_HALVINGS {
                break;
            }
            lr *= 0.5;
            halvings += 1;
            continue;
        }
        params = candidate;
        loss = c_loss;
        grad = c_grad;
        losses.push(loss);
        epoch += 1;
    }
    FittedHead {
        standardizer,
        params,
        report: TrainReport {
            config: *config,
            initial_loss,
            final_loss: loss,
            lr_halvings: halvings,
            final_learning_rate: lr,
        },
        losses,
    }
}

impl FittedHead {
    pub fn into_model(
        self,
        version: u64,
        label_ids: Vec<LabelId>,
        trained_at_ms: u64,
        train_sample_count: usize,
    ) -> ModelVersion {
        let k = self.params.k;
        ModelVersion {
            schema_version: MODEL_SCHEMA_VERSION,
            version,
            label_ids,
            weights: (0..k).map(|c| self.params.weight_row(c).to_vec()).collect(),
            bias: self.params.biases().to_vec(),
            mean: self.standardizer.mean,
            std: self.standardizer.std,
            trained_at_ms,
            train_sample_count,
            report: self.report,
        }
    }
}

/// Confidence distribution of `model` for `features`.
pub fn predict(model: &ModelVersion, features: &FeatureVector) -> Result<ClassificationResult> {
    predict_raw(model, features.as_slice())
}

pub fn predict_raw(model: &ModelVersion, x: &[f64]) -> Result<ClassificationResult> {
    if x.len() != model.mean.len() {
        return Err(CoreError::DimensionMismatch { expected: model.mean.len(), got: x.len() });
    }
    let z: Vec<f64> = x
        .iter()
        .zip(&model.mean)
        .zip(&model.std)
        .map(|((v, m), s)| (v - m) / s)
        .collect();
    let logits: Vec<f64> =
        model.weights.iter().zip(&model.bias).map(|(row, b)| dot(row, &z) + b).collect();
    let mut probs = vec![0.0; logits.len()];
    softmax_into(&logits, &mut probs);
    let distribution: BTreeMap<LabelId, f64> =
        model.label_ids.iter().copied().zip(probs).collect();
    Ok(ClassificationResult::from_distribution(distribution).expect("model has labels"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// (parameter index, analytic, numeric)
    pub worst: Option<(usize, f64, f64)>,
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Compares the analytic gradient with central differences on `count`
/// randomly chosen parameters (all of them if there are fewer).
///
/// Relative error is `|a - n| / max(|a|, |n|)`, taken as zero when both are
/// below 1e-10.
pub fn gradient_check(
    objective: &SoftmaxObjective,
    params: &Params,
    count: usize,
    seed: u64,
) -> GradientCheck {
    let analytic = objective.gradient(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, params.len(), count.min(params.len()));
    let mut max_err = 0.0;
    let mut worst = None;
    let mut probe = params.clone();
    for i in picks.iter() {
        let orig = probe.values[i];
        probe.values[i] = orig + GRADIENT_CHECK_STEP;
        let up = objective.loss(&probe);
        probe.values[i] = orig - GRADIENT_CHECK_STEP;
        let down = objective.loss(&probe);
        probe.values[i] = orig;
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let a = analytic.values[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-10 { 0.0 } else { (a - numeric).abs() / scale };
        if err >= max_err {
            max_err = err;
            worst = Some((i, a, numeric));
        }
    }
    GradientCheck { max_relative_error: max_err, checked: picks.len(), worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, d: usize, k: usize) -> (SoftmaxObjective, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys = (0..n).map(|i| i % k).collect();
        let obj = SoftmaxObjective::new(xs, ys, k, 1e-3);
        let mut p = Params::zeros(k, d);
        for v in &mut p.values {
            *v = rng.random_range(-0.5..0.5);
        }
        (obj, p)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (obj, p) = random_problem(seed, 12, 7, 3);
            let check = gradient_check(&obj, &p, 50, seed);
            assert_eq!(check.checked, 24);
            assert!(check.max_relative_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn bias_gradient_vanishes_on_balanced_symmetric_data() {
        let xs = vec![vec![1.0, -2.0], vec![-1.0, 2.0]];
        let obj = SoftmaxObjective::new(xs, vec![0, 1], 2, 1e-3);
        let g = obj.gradient(&Params::zeros(2, 2));
        for b in g.biases() {
            assert!(b.abs() < 1e-15);
        }
    }

    #[test]
    fn single_sample_gradient_is_softmax_minus_onehot() {
        let x = vec![0.3, -1.2, 2.0];
        let obj = SoftmaxObjective::new(vec![x.clone()], vec![2], 3, 1e-3);
        let mut p = Params::zeros(3, 3);
        p.values = vec![0.1, 0.2, -0.3, 0.0, 0.5, 0.1, -0.2, 0.3, 0.4, 0.05, -0.1, 0.2];
        let g = obj.gradient(&p);
        let z: Vec<f64> = (0..3).map(|c| dot(p.weight_row(c), &x) + p.bias(c)).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            let r = e[c] / s - if c == 2 { 1.0 } else { 0.0 };
            assert!((g.bias(c) - r).abs() < 1e-8);
            for j in 0..3 {
                let expect = r * x[j] + 1e-3 * p.weight(c, j);
                assert!((g.weight(c, j) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn std_is_floored() {
        let a = [1.0, 5.0];
        let b = [1.0, 7.0];
        let s = Standardizer::fit(&[&a, &b]);
        assert_eq!(s.std[0], STD_FLOOR);
        assert_eq!(s.mean, vec![1.0, 6.0]);
        assert_eq!(s.std[1], 1.0);
    }

    #[test]
    fn loss_is_monotone() {
        let (obj, _) = random_problem(3, 20, 5, 4);
        let rows: Vec<&[f64]> = obj.xs.iter().map(Vec::as_slice).collect();
        let fit = fit_head(&rows, &obj.ys, 4, &TrainConfig::default());
        assert_eq!(fit.losses.len(), 301);
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0] + LOSS_SLACK);
        }
        assert!(fit.report.final_loss < fit.report.initial_loss);
    }

    #[test]
    fn permuted_rows_give_identical_weights() {
        let (obj, _) = random_problem(11, 15, 6, 3);
        let rows: Vec<&[f64]> = obj.xs.iter().map(Vec::as_slice).collect();
        let a = fit_head(&rows, &obj.ys, 3, &TrainConfig::default());
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.reverse();
        idx.swap(0, 7);
        let rows_p: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
        let ys_p: Vec<usize> = idx.iter().map(|&i| obj.ys[i]).collect();
        let b = fit_head(&rows_p, &ys_p, 3, &TrainConfig::default());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn concurrent_train_is_rejected() {
        let store = crate::Store::in_memory();
        let p = store.create_project("p").unwrap().id;
        let handle = store.handle(p).unwrap();
        let _running = handle.training.lock();
        assert!(matches!(store.train(p, "t"), Err(CoreError::TrainingInProgress)));
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let model = ModelVersion {
            schema_version: MODEL_SCHEMA_VERSION,
            version: 1,
            label_ids: vec![LabelId(1), LabelId(2), LabelId(3), LabelId(4)],
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
            weights: vec![vec![0.0; FEATURE_DIM]; 4],
            bias: vec![0.0; 4],
            trained_at_ms: 0,
            train_sample_count: 0,
            report: TrainReport {
                config: TrainConfig::default(),
                initial_loss: 0.0,
                final_loss: 0.0,
                lr_halvings: 0,
                final_learning_rate: 0.1,
            },
        };
        let f = FeatureVector::from_values(vec![0.3; FEATURE_DIM]).unwrap();
        let r = predict(&model, &f).unwrap();
        for p in r.distribution.values() {
            assert_eq!(*p, 0.25);
        }
        assert_eq!(r.top_label_id, LabelId(1));
        assert!(matches!(
            predict_raw(&model, &[0.0; 3]),
            Err(CoreError::DimensionMismatch { expected: FEATURE_DIM, got: 3 })
        ));
        let bytes = model.to_json();
        assert_eq!(ModelVersion::from_json(&bytes).unwrap(), model);
    }
}

mod pipeline {
    use std::collections::{BTreeMap, HashMap};
    use std::sync::Arc;

    use rayon::prelude::*;

    use super::{fit_head, predict, ModelVersion};
    use crate::error::{CoreError, Result};
    use crate::event::{EventDraft, EventPayload, ModelRef, Reclassification};
    use crate::features::FeatureVector;
    use crate::ids::{BlobHash, LabelId, ProjectId, TestSampleId};
    use crate::store::Store;

    impl Store {
        /// Trains a new model version on the live dataset, re-classifies every
        /// live test sample with it and records both in one `ModelTrained`
        /// event. Rejects (does not queue) a second concurrent request.
        pub fn train(&self, id: ProjectId, author: &str) -> Result<Arc<ModelVersion>> {
            let handle = self.handle(id)?;
            let _running = handle.training.try_lock().ok_or(CoreError::TrainingInProgress)?;

            let (label_ids, samples, tests, version) = {
                let inner = handle.inner.read();
                let state = &inner.state;
                let mut counts: BTreeMap<LabelId, usize> = BTreeMap::new();
                for s in state.live_samples() {
                    *counts.entry(s.label_id).or_default() += 1;
                }
                let label_ids: Vec<LabelId> =
                    state.live_labels().map(|l| l.id).filter(|l| counts.contains_key(l)).collect();
                if label_ids.len() < 2 {
                    return Err(CoreError::TrainingPrerequisite { eligible: label_ids.len() });
                }
                let class_of: HashMap<LabelId, usize> =
                    label_ids.iter().enumerate().map(|(i, l)| (*l, i)).collect();
                let samples: Vec<(BlobHash, usize)> = state
                    .live_samples()
                    .map(|s| (s.image_ref.clone(), class_of[&s.label_id]))
                    .collect();
                let tests: Vec<(TestSampleId, BlobHash)> =
                    state.live_test_samples().map(|t| (t.id, t.image_ref.clone())).collect();
                let version = state.current_model.as_ref().map_or(1, |m| m.version + 1);
                (label_ids, samples, tests, version)
            };

            let features: Vec<Arc<FeatureVector>> = samples
                .par_iter()
                .map(|(h, _)| self.features_for(h))
                .collect::<Result<_>>()?;
            let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
            let classes: Vec<usize> = samples.iter().map(|(_, c)| *c).collect();
            let fit = fit_head(&rows, &classes, label_ids.len(), &self.train_config);
            let model = fit.into_model(version, label_ids, self.now_ms(), samples.len());
            let model_ref = self.store_model(&model)?;

            let mut test_features: HashMap<TestSampleId, Arc<FeatureVector>> = tests
                .par_iter()
                .map(|(t, h)| Ok((*t, self.features_for(h)?)))
                .collect::<Result<_>>()?;

            let mut inner = handle.inner.write();
            let mut results = Vec::new();
            for t in inner.state.live_test_samples() {
                // Test samples added while the head was fitting are picked up here.
                let f = match test_features.remove(&t.id) {
                    Some(f) => f,
                    None => self.features_for(&t.image_ref)?,
                };
                results.push(Reclassification { test_sample_id: t.id, result: predict(&model, &f)? });
            }
            let model_ref = ModelRef {
                version: model.version,
                model_ref,
                label_ids: model.label_ids.clone(),
                train_sample_count: model.train_sample_count,
                trained_at_ms: model.trained_at_ms,
            };
            self.append(
                &mut inner,
                EventDraft::new(author, EventPayload::ModelTrained { model: model_ref, results }),
            )?;
            let model = Arc::new(model);
            inner.model = Some(model.clone());
            Ok(model)
        }
    }
}
