//! A small convolutional classifier with hand-written backpropagation.

mod log;
mod network;
mod persist;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizedImage, CHANNELS, IMAGE_LEN};
use crate::error::{Error, Result};

pub use log::{
    load_prediction_log, parse_prediction_log, save_prediction_log, write_prediction_log,
};
pub use network::{CONV1_OUT, CONV2_OUT, FEATURES, KERNEL};
pub use persist::{load_model, save_model, ModelHeader, TrainedModel};
pub use train::{train, EpochStats, TrainConfig, TrainingTrace};

const CONV1_W: usize = CONV1_OUT * CHANNELS * KERNEL * KERNEL;
const CONV2_W: usize = CONV2_OUT * CONV1_OUT * KERNEL * KERNEL;

/// Tolerance on the sum of a probability vector.
pub const SCORE_SUM_TOL: f64 = 1e-9;

/// Network weights. Kernels are laid out `[out][in][ky][kx]`, the fully
/// connected weights `[class][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub num_classes: usize,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            conv1_w: vec![0.0; CONV1_W],
            conv1_b: vec![0.0; CONV1_OUT],
            conv2_w: vec![0.0; CONV2_W],
            conv2_b: vec![0.0; CONV2_OUT],
            fc_w: vec![0.0; num_classes * FEATURES],
            fc_b: vec![0.0; num_classes],
        }
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn shapes(num_classes: usize) -> [usize; 6] {
        [
            CONV1_W,
            CONV1_OUT,
            CONV2_W,
            CONV2_OUT,
            num_classes * FEATURES,
            num_classes,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(
                "a classifier needs at least two classes".into(),
            ));
        }
        for (t, expected) in self.tensors().iter().zip(Self::shapes(self.num_classes)) {
            if t.len() != expected {
                return Err(Error::Shape {
                    expected,
                    actual: t.len(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfRange("model parameters must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Glorot-uniform kernels, zero biases.
pub fn init_model(seed: u64, num_classes: usize) -> Result<ModelParams> {
    if num_classes < 2 {
        return Err(Error::Config(
            "a classifier needs at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(num_classes);
    for (weights, bound) in [
        (&mut params.conv1_w, init_bound(CHANNELS * 9, CONV1_OUT * 9)),
        (
            &mut params.conv2_w,
            init_bound(CONV1_OUT * 9, CONV2_OUT * 9),
        ),
        (&mut params.fc_w, init_bound(FEATURES, num_classes)),
    ] {
        for w in weights.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(scores, SCORE_SUM_TOL)
    }

    pub(crate) fn with_tolerance(scores: Vec<f64>, tol: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::OutOfRange(
                "a score vector needs at least two classes".into(),
            ));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::OutOfRange("scores must lie in [0,1]".into()));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::OutOfRange(format!("scores sum to {sum}, not 1")));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted_label: usize,
    pub scores: ScoreVector,
}

/// One line of a prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub image_id: String,
    pub true_label: usize,
    pub predicted_label: usize,
    pub scores: ScoreVector,
    pub model_id: String,
}

impl ClassificationRecord {
    pub fn from_prediction(
        image_id: &str,
        true_label: usize,
        p: Prediction,
        model_id: &str,
    ) -> Self {
        Self {
            image_id: image_id.to_string(),
            true_label,
            predicted_label: p.predicted_label,
            scores: p.scores,
            model_id: model_id.to_string(),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

fn check(params: &ModelParams, image: &NormalizedImage) -> Result<()> {
    params.validate()?;
    if image.values().len() != IMAGE_LEN {
        return Err(Error::Shape {
            expected: IMAGE_LEN,
            actual: image.values().len(),
        });
    }
    Ok(())
}

pub fn forward(params: &ModelParams, image: &NormalizedImage) -> Result<ScoreVector> {
    check(params, image)?;
    Ok(ScoreVector(network::forward(params, image.values()).probs))
}

pub fn predict(params: &ModelParams, image: &NormalizedImage) -> Result<Prediction> {
    let scores = forward(params, image)?;
    Ok(Prediction {
        predicted_label: scores.argmax(),
        scores,
    })
}

/// [`predict`] over many images, evaluated in parallel; output order
/// follows input order.
pub fn predict_batch(params: &ModelParams, images: &[NormalizedImage]) -> Result<Vec<Prediction>> {
    images.par_iter().map(|img| predict(params, img)).collect()
}

/// Gradient of the softmax probability of `target` with respect to every
/// normalized input value, in image layout.
pub fn input_gradient(
    params: &ModelParams,
    image: &NormalizedImage,
    target: usize,
) -> Result<Vec<f64>> {
    check(params, image)?;
    if target >= params.num_classes {
        return Err(Error::InvalidClass {
            class: target,
            num_classes: params.num_classes,
        });
    }
    let act = network::forward(params, image.values());
    let p = &act.probs;
    // d p_t / d z_k = p_t (δ_tk − p_k)
    let d_logits: Vec<f64> = (0..p.len())
        .map(|k| p[target] * (f64::from(u8::from(k == target)) - p[k]))
        .collect();
    Ok(
        network::backward(params, image.values(), &act, &d_logits, None, true)
            .expect("input gradient requested"),
    )
}

/// Central differences `(f(x+h) − f(x−h)) / 2h` of an arbitrary scalar
/// function, one coordinate at a time.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Forward-only estimate of [`input_gradient`].
pub fn finite_diff_gradient(
    params: &ModelParams,
    image: &NormalizedImage,
    target: usize,
    h: f64,
) -> Result<Vec<f64>> {
    check(params, image)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange(format!("step must be positive, got {h}")));
    }
    if target >= params.num_classes {
        return Err(Error::InvalidClass {
            class: target,
            num_classes: params.num_classes,
        });
    }
    Ok(central_differences(
        |x| network::forward(params, x).probs[target],
        image.values(),
        h,
    ))
}
