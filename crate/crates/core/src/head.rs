//! Differentiable classification head over the aligned activation space.
//!
//! Two architectures share one training loop (full-batch gradient descent on
//! mean cross-entropy plus an L2 penalty on weight matrices): multinomial
//! logistic regression, and a single tanh hidden layer of fixed width.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN_WIDTH: usize = 32;
pub const DEFAULT_UU_THRESHOLD: f64 = 0.75;
const LINEAR_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Linear,
    /// One tanh hidden layer of [`HIDDEN_WIDTH`] units.
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { learning_rate: 0.2, iterations: 500, l2: 1.0, seed: 0, architecture: Architecture::Linear }
    }
}

/// Weight decay for the tanh preset. The linear default of 1.0 drives both
/// layers to zero and leaves a constant classifier.
pub const TANH_L2: f64 = 1e-2;

impl HeadConfig {
    pub fn tanh() -> Self {
        Self { l2: TANH_L2, architecture: Architecture::Tanh, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// H×D.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub architecture: Architecture,
    /// K×D for the linear head, K×H for the output layer of the tanh head.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenLayer>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Array1<f64>,
    pub predicted: usize,
    /// Present when the true label is known.
    pub brier: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientTarget {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub positive_fraction: f64,
    pub mean_derivative: f64,
    pub count: usize,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

impl HeadModel {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.ncols(),
            None => self.weights.ncols(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: d });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: ArrayView2<f64>) -> Option<Array2<f64>> {
        self.hidden.as_ref().map(|h| (x.dot(&h.weights.t()) + &h.bias).mapv(f64::tanh))
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        Ok(match self.hidden_activations(x) {
            Some(h) => h.dot(&self.weights.t()) + &self.bias,
            None => x.dot(&self.weights.t()) + &self.bias,
        })
    }

    /// Row-wise class probabilities (N×K).
    pub fn probabilities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut p = self.logits(x)?;
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Jacobian of the logits with respect to the input (K×D).
    pub fn logit_jacobian(&self, v: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_dim(v.len())?;
        Ok(match &self.hidden {
            None => self.weights.clone(),
            Some(h) => {
                let a = (h.weights.dot(&v) + &h.bias).mapv(f64::tanh);
                let slope = a.mapv(|t| 1.0 - t * t);
                (&self.weights * &slope).dot(&h.weights)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Params {
    w: Array2<f64>,
    b: Array1<f64>,
    hidden: Option<(Array2<f64>, Array1<f64>)>,
}

impl Params {
    fn penalty(&self) -> f64 {
        let mut s = self.w.iter().map(|v| v * v).sum::<f64>();
        if let Some((a, _)) = &self.hidden {
            s += a.iter().map(|v| v * v).sum::<f64>();
        }
        0.5 * s
    }
}

/// Mean cross-entropy plus penalty, and the gradients when `grads` is set.
fn loss_and_grad(
    p: &Params,
    x: ArrayView2<f64>,
    onehot: &Array2<f64>,
    l2: f64,
) -> (f64, Params) {
    let n = x.nrows() as f64;
    let h = p.hidden.as_ref().map(|(a, c)| (x.dot(&a.t()) + c).mapv(f64::tanh));
    let feats = h.as_ref().map(|h| h.view()).unwrap_or(x);
    let mut probs = feats.dot(&p.w.t()) + &p.b;
    softmax_rows(&mut probs);
    let ce = -(&probs.mapv(|v| v.max(1e-300).ln()) * onehot).sum() / n;
    let loss = ce + l2 * p.penalty();

    let delta = (&probs - onehot) / n;
    let gw = delta.t().dot(&feats) + &(&p.w * l2);
    let gb = delta.sum_axis(Axis(0));
    let hidden = match (&p.hidden, &h) {
        (Some((a, _)), Some(h)) => {
            let back = delta.dot(&p.w) * &h.mapv(|t| 1.0 - t * t);
            let ga = back.t().dot(&x) + &(a * l2);
            let gc = back.sum_axis(Axis(0));
            Some((ga, gc))
        }
        _ => None,
    };
    (loss, Params { w: gw, b: gb, hidden })
}

/// Fit a head by full-batch gradient descent. Deterministic given `config.seed`.
pub fn train_head(x: ArrayView2<f64>, labels: &[usize], num_classes: usize, config: &HeadConfig) -> Result<HeadModel> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::param("labels", format!("label {bad} out of range for {num_classes} classes")));
    }
    let mut present = vec![false; num_classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::param("labels", "at least two classes must be present"));
    }
    if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::param("config", "learning rate must be positive and l2 non-negative"));
    }

    let d = x.ncols();
    let k = num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |rows: usize, cols: usize, std: f64| {
        let dist = Normal::new(0.0, std).expect("positive std");
        Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
    };
    let mut params = match config.architecture {
        Architecture::Linear => Params { w: draw(k, d, LINEAR_INIT_STD), b: Array1::zeros(k), hidden: None },
        Architecture::Tanh => {
            let a = draw(HIDDEN_WIDTH, d, 1.0 / (d as f64).sqrt());
            let w = draw(k, HIDDEN_WIDTH, 1.0 / (HIDDEN_WIDTH as f64).sqrt());
            Params { w, b: Array1::zeros(k), hidden: Some((a, Array1::zeros(HIDDEN_WIDTH))) }
        }
    };

    let mut onehot = Array2::zeros((x.nrows(), k));
    for (i, &l) in labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }

    let lr = config.learning_rate;
    let mut initial_loss = f64::NAN;
    let mut loss = f64::NAN;
    for it in 0..=config.iterations {
        let (l, g) = loss_and_grad(&params, x, &onehot, config.l2);
        if !l.is_finite() {
            return Err(Error::Training(format!("non-finite loss at iteration {it}")));
        }
        if it == 0 {
            initial_loss = l;
        }
        loss = l;
        if it == config.iterations {
            break;
        }
        params.w.scaled_add(-lr, &g.w);
        params.b.scaled_add(-lr, &g.b);
        if let (Some((a, c)), Some((ga, gc))) = (params.hidden.as_mut(), g.hidden.as_ref()) {
            a.scaled_add(-lr, ga);
            c.scaled_add(-lr, gc);
        }
    }
    if loss > initial_loss {
        return Err(Error::Training(format!("loss rose from {initial_loss} to {loss}")));
    }

    Ok(HeadModel {
        architecture: config.architecture,
        weights: params.w,
        bias: params.b,
        hidden: params.hidden.map(|(weights, bias)| HiddenLayer { weights, bias }),
        meta: TrainingMeta {
            seed: config.seed,
            iterations: config.iterations,
            learning_rate: lr,
            l2: config.l2,
            initial_loss,
            final_loss: loss,
        },
    })
}

/// Squared distance to the one-hot truth, halved so it lies in [0, 1].
pub fn brier_score(probs: ArrayView1<f64>, label: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let t = if k == label { 1.0 } else { 0.0 };
            (p - t) * (p - t)
        })
        .sum::<f64>()
        / 2.0
}

pub fn predict(head: &HeadModel, v: ArrayView1<f64>, label: Option<usize>) -> Result<Prediction> {
    let x = v.insert_axis(Axis(0));
    let probs = head.probabilities(x)?.row(0).to_owned();
    let predicted = argmax(probs.view());
    let brier = label.map(|l| brier_score(probs.view(), l));
    Ok(Prediction { probs, predicted, brier })
}

/// Batch prediction; `labels`, when given, fills in brier scores.
pub fn predict_all(head: &HeadModel, x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Vec<Prediction>> {
    let probs = head.probabilities(x)?;
    Ok(probs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, p)| Prediction {
            predicted: argmax(p),
            brier: labels.map(|l| brier_score(p, l[i])),
            probs: p.to_owned(),
        })
        .collect())
}

pub fn accuracy(preds: &[Prediction], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, &l)| p.predicted == l).count();
    hits as f64 / preds.len() as f64
}

/// Gradient of class-`k` probability with respect to the input.
pub fn prob_gradient(head: &HeadModel, v: ArrayView1<f64>, k: usize) -> Result<Array1<f64>> {
    let p = predict(head, v, None)?.probs;
    let jac = head.logit_jacobian(v)?;
    let mean_row = p.dot(&jac);
    Ok((&jac.row(k) - &mean_row) * p[k])
}

/// Gradient of the class-`k` logit with respect to the input.
pub fn logit_gradient(head: &HeadModel, v: ArrayView1<f64>, k: usize) -> Result<Array1<f64>> {
    Ok(head.logit_jacobian(v)?.row(k).to_owned())
}

pub fn gradient(head: &HeadModel, v: ArrayView1<f64>, k: usize, target: GradientTarget) -> Result<Array1<f64>> {
    if k >= head.num_classes() {
        return Err(Error::param("k", format!("class {k} out of range")));
    }
    match target {
        GradientTarget::Probability => prob_gradient(head, v, k),
        GradientTarget::Logit => logit_gradient(head, v, k),
    }
}

/// Directional sensitivity of class `k` along the normalized concept direction.
pub fn concept_influence(
    head: &HeadModel,
    instances: ArrayView2<f64>,
    v_c: ArrayView1<f64>,
    k: usize,
    target: GradientTarget,
) -> Result<Influence> {
    if instances.nrows() == 0 {
        return Err(Error::Empty { what: "instance set" });
    }
    let norm = v_c.dot(&v_c).sqrt();
    if norm <= 1e-12 {
        return Err(Error::ZeroNorm { what: "concept vector".into() });
    }
    let dir = &v_c / norm;
    let mut positive = 0usize;
    let mut total = 0.0;
    for row in instances.rows() {
        let d = gradient(head, row, k, target)?.dot(&dir);
        if d > 0.0 {
            positive += 1;
        }
        total += d;
    }
    let n = instances.nrows();
    Ok(Influence { positive_fraction: positive as f64 / n as f64, mean_derivative: total / n as f64, count: n })
}
