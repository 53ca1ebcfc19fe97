//! Small convolutional image classifier: four strided conv blocks with
//! leaky-relu, then a linear softmax head. Trained from scratch with Adam on
//! cross-entropy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::Rng;

use crate::data::{ViewSample, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::layers::{leaky_relu_backward_inplace, leaky_relu_inplace, Conv2d, Dense};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{seeded, shuffle, stream};
use crate::weights::{NamedTensor, WeightsHandle};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub channels: [usize; 4],
    pub kernel: usize,
    pub leaky_relu_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Fraction of each class held out as the real-image test set.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channels: [8, 16, 32, 32],
            kernel: 3,
            leaky_relu_slope: 0.2,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.kernel == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::domain("classifier channels, kernel, batch size and epochs must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::domain(format!("test fraction {} not in (0, 1)", self.test_fraction)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Counts indexed `[true][predicted]` over `classes` (sorted ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<u32>,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<u32>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![0; n * n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn index(&self, class_id: u32) -> Result<usize> {
        self.classes
            .binary_search(&class_id)
            .map_err(|_| Error::domain(format!("class {class_id} not in the confusion matrix")))
    }

    pub fn record(&mut self, truth: u32, predicted: u32) -> Result<()> {
        let (t, p) = (self.index(truth)?, self.index(predicted)?);
        let n = self.n_classes();
        self.counts[t * n + p] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes() + predicted]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.n_classes().max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total().max(1) as f64
    }

    /// Fraction of `class_id`'s test samples predicted correctly.
    pub fn recall(&self, class_id: u32) -> Result<f64> {
        let i = self.index(class_id)?;
        let row = self.row_sums()[i];
        Ok(self.get(i, i) as f64 / row.max(1) as f64)
    }

    /// Plain-text table, rows = true class, columns = predicted.
    pub fn to_table(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            s += &format!("\t{c}");
        }
        s.push('\n');
        for (i, c) in self.classes.iter().enumerate() {
            s += &format!("{c}");
            for j in 0..self.n_classes() {
                s += &format!("\t{}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    config: ClassifierConfig,
    classes: Vec<u32>,
    blocks: [Conv2d; 4],
    head: Dense,
    weights: WeightsHandle<f32>,
}

struct Activations {
    blocks: Vec<Vec<f32>>,
    logits: Vec<f32>,
}

impl Classifier {
    /// Untrained classifier over the given class ids.
    pub fn new(config: &ClassifierConfig, mut classes: Vec<u32>) -> Result<Self> {
        config.validate()?;
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::domain("a classifier needs at least two classes"));
        }
        let mut side = IMAGE_SIZE;
        let mut in_c = 1;
        let blocks = config.channels.map(|out_c| {
            let conv = Conv2d::new(in_c, out_c, config.kernel, 2, side, side);
            side = conv.out_h();
            in_c = out_c;
            conv
        });
        let head = Dense::new(in_c * side * side, classes.len());
        let mut rng = seeded(config.seed, stream::CLASSIFIER);
        let slope = config.leaky_relu_slope;
        let mut weights = WeightsHandle::new();
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize, gain: f64| -> Result<()> {
            let mut t = NamedTensor::zeros(format!("{name}.weight"), shape);
            let bound = (6.0 / (gain * fan_in as f64)).sqrt();
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound) as f32);
            let outputs = t.shape[0];
            weights.push(t)?;
            weights.push(NamedTensor::zeros(format!("{name}.bias"), vec![outputs]))
        };
        for (i, b) in blocks.iter().enumerate() {
            push(format!("block{}", i + 1), b.weight_shape(), b.fan_in(), 1.0 + slope * slope)?;
        }
        push(String::from("head"), head.weight_shape(), head.inputs, 2.0)?;
        Ok(Classifier {
            config: config.clone(),
            classes,
            blocks,
            head,
            weights,
        })
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn weights(&self) -> &WeightsHandle<f32> {
        &self.weights
    }

    fn forward(&self, images: &[f32], n: usize) -> Activations {
        let slope = self.config.leaky_relu_slope as f32;
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(4);
        for (i, conv) in self.blocks.iter().enumerate() {
            let x = if i == 0 { images } else { &acts[i - 1] };
            let mut y = conv.forward(self.weights.at(2 * i), self.weights.at(2 * i + 1), x, n);
            leaky_relu_inplace(&mut y, slope);
            acts.push(y);
        }
        let logits = self.head.forward(self.weights.at(8), self.weights.at(9), &acts[3], n);
        Activations { blocks: acts, logits }
    }

    /// Mean cross-entropy of a batch; accumulates gradients into `grads`.
    fn backward(&self, images: &[f32], labels: &[usize], acts: &Activations, grads: &mut WeightsHandle<f32>) -> f64 {
        let n = labels.len();
        let k = self.classes.len();
        let slope = self.config.leaky_relu_slope as f32;
        let mut dlogits = vec![0.0f32; n * k];
        let mut loss = 0.0;
        for (s, &label) in labels.iter().enumerate() {
            let row = &acts.logits[s * k..(s + 1) * k];
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss -= (exps[label] / sum).ln();
            for (j, e) in exps.iter().enumerate() {
                let target = if j == label { 1.0 } else { 0.0 };
                dlogits[s * k + j] = ((e / sum - target) / n as f64) as f32;
            }
        }
        let (gw, gb) = two_mut(grads, 8);
        let mut dy = self
            .head
            .backward(self.weights.at(8), &acts.blocks[3], &dlogits, n, gw, gb, true)
            .expect("requested input gradient");
        for i in (0..4).rev() {
            leaky_relu_backward_inplace(&mut dy, &acts.blocks[i], slope);
            let x = if i == 0 { images } else { &acts.blocks[i - 1] };
            let (gw, gb) = two_mut(grads, 2 * i);
            let dx = self.blocks[i].backward(self.weights.at(2 * i), x, &dy, n, gw, gb, i > 0);
            if let Some(dx) = dx {
                dy = dx;
            }
        }
        loss / n as f64
    }

    fn label_index(&self, class_id: u32) -> Result<usize> {
        self.classes
            .binary_search(&class_id)
            .map_err(|_| Error::domain(format!("class {class_id} unknown to the classifier")))
    }

    /// Trains on `samples`; returns the mean training loss of each epoch.
    pub fn train(&mut self, samples: &[ViewSample]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::domain("classifier training set is empty"));
        }
        let labels = samples
            .iter()
            .map(|s| self.label_index(s.class_id))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seeded(self.config.seed, stream::SHUFFLE);
        let mut adam = Adam::new(self.config.adam, &self.weights);
        let mut grads = self.weights.zeros_like();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let pixels = IMAGE_SIZE * IMAGE_SIZE;
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            shuffle(&mut order, &mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let mut images = Vec::with_capacity(chunk.len() * pixels);
                chunk.iter().for_each(|&i| images.extend_from_slice(samples[i].image.as_slice()));
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let acts = self.forward(&images, chunk.len());
                grads.fill_zero();
                let loss = self.backward(&images, &batch_labels, &acts, &mut grads);
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        step: epoch,
                        detail: String::from("classifier cross-entropy"),
                    });
                }
                total += loss * chunk.len() as f64;
                adam.step(&mut self.weights, &grads, self.config.learning_rate)?;
            }
            history.push(total / samples.len() as f64);
        }
        Ok(history)
    }

    /// Predicted class id per sample.
    pub fn predict(&self, samples: &[ViewSample]) -> Vec<u32> {
        let pixels = IMAGE_SIZE * IMAGE_SIZE;
        let k = self.classes.len();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len() * pixels);
            chunk.iter().for_each(|s| images.extend_from_slice(s.image.as_slice()));
            let acts = self.forward(&images, chunk.len());
            for row in acts.logits.chunks_exact(k) {
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                out.push(self.classes[best]);
            }
        }
        out
    }

    pub fn evaluate(&self, samples: &[ViewSample]) -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(self.classes.clone());
        for (s, p) in samples.iter().zip(self.predict(samples)) {
            cm.record(s.class_id, p)?;
        }
        Ok(cm)
    }
}

fn two_mut(grads: &mut WeightsHandle<f32>, weight_index: usize) -> (&mut [f32], &mut [f32]) {
    let (a, b) = grads.tensors_mut().split_at_mut(weight_index + 1);
    (&mut a[weight_index].data, &mut b[0].data)
}
