//! The transparent classifier: multinomial logistic regression over binary
//! attribute vectors, trained by full-batch gradient descent on
//! cross-entropy, plus a Bernoulli naive Bayes baseline.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeVector, AttributeVocabulary, ClassVocabulary};
use crate::error::{read_to_string, write_string, Error, Result};

pub const LOGREG_HEADER: &str = "greybox-logreg v1";
pub const NAIVE_BAYES_HEADER: &str = "greybox-nb v1";

/// Consecutive loss increases tolerated before training is declared divergent.
pub const DIVERGENCE_WINDOW: usize = 10;

/// Max-shifted softmax. Entries are strictly positive as long as every score
/// lies within ~745 of the maximum; beyond that the tail underflows to 0.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(s)`, max-shifted.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Binary logistic model: `1 / (1 + exp(-θᵀz))`.
pub fn sigmoid_predict(theta: &[f64], z: &AttributeVector) -> Result<f64> {
    if theta.len() != z.len() {
        return Err(dimension_error(z.len(), theta.len()));
    }
    let s: f64 = z.ones().map(|j| theta[j]).sum();
    Ok(if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    })
}

fn dimension_error(got: usize, want: usize) -> Error {
    Error::validation(format!(
        "attribute vector has length {got}, model expects {want}"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Step size applied to the per-sample mean gradient.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Training stops once an epoch decreases the loss by less than this.
    pub loss_tolerance: f64,
    pub l2_penalty: f64,
    /// Adds a per-class intercept (an always-on input).
    pub bias: bool,
    /// Unused by full-batch logistic regression.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            max_epochs: 5000,
            loss_tolerance: 1e-9,
            l2_penalty: 1e-4,
            bias: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs must be >= 1"));
        }
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !non_negative(self.loss_tolerance) || !non_negative(self.l2_penalty) {
            return Err(Error::validation(
                "loss_tolerance and l2_penalty must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Weight matrix θ (classes × attributes, row-major) with vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    attr_vocab: AttributeVocabulary,
    class_vocab: ClassVocabulary,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
    l2_penalty: f64,
}

impl LogRegModel {
    pub fn zeros(
        attr_vocab: AttributeVocabulary,
        class_vocab: ClassVocabulary,
        bias: bool,
        l2_penalty: f64,
    ) -> Self {
        let k = class_vocab.len();
        LogRegModel {
            weights: vec![0.0; k * attr_vocab.len()],
            bias: bias.then(|| vec![0.0; k]),
            attr_vocab,
            class_vocab,
            l2_penalty,
        }
    }

    /// Builds a model from explicit rows (one per class).
    pub fn from_rows(
        attr_vocab: AttributeVocabulary,
        class_vocab: ClassVocabulary,
        rows: Vec<Vec<f64>>,
        bias: Option<Vec<f64>>,
        l2_penalty: f64,
    ) -> Result<Self> {
        if rows.len() != class_vocab.len() || rows.iter().any(|r| r.len() != attr_vocab.len()) {
            return Err(Error::validation(format!(
                "weight matrix must be {}x{}",
                class_vocab.len(),
                attr_vocab.len()
            )));
        }
        if bias.as_ref().is_some_and(|b| b.len() != class_vocab.len()) {
            return Err(Error::validation("bias length must equal class count"));
        }
        let model = LogRegModel {
            weights: rows.into_iter().flatten().collect(),
            bias,
            attr_vocab,
            class_vocab,
            l2_penalty,
        };
        model.check_finite()?;
        Ok(model)
    }

    fn check_finite(&self) -> Result<()> {
        let all = self.weights.iter().chain(self.bias.iter().flatten());
        if all.clone().any(|w| !w.is_finite()) || !self.l2_penalty.is_finite() {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn attr_vocab(&self) -> &AttributeVocabulary {
        &self.attr_vocab
    }

    pub fn class_vocab(&self) -> &ClassVocabulary {
        &self.class_vocab
    }

    pub fn n_classes(&self) -> usize {
        self.class_vocab.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attr_vocab.len()
    }

    pub fn weight(&self, class: usize, attr: usize) -> f64 {
        self.weights[class * self.n_attributes() + attr]
    }

    pub fn set_weight(&mut self, class: usize, attr: usize, value: f64) {
        let n = self.n_attributes();
        self.weights[class * n + attr] = value;
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let n = self.n_attributes();
        &self.weights[class * n..(class + 1) * n]
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn set_bias(&mut self, class: usize, value: f64) {
        if let Some(b) = self.bias.as_mut() {
            b[class] = value;
        }
    }

    pub fn l2_penalty(&self) -> f64 {
        self.l2_penalty
    }

    pub fn check_dims(&self, z: &AttributeVector) -> Result<()> {
        if z.len() == self.n_attributes() {
            Ok(())
        } else {
            Err(dimension_error(z.len(), self.n_attributes()))
        }
    }

    fn scores_unchecked(&self, z: &AttributeVector) -> Vec<f64> {
        (0..self.n_classes())
            .map(|k| {
                let row = self.row(k);
                let b = self.bias.as_ref().map_or(0.0, |b| b[k]);
                z.ones().fold(b, |acc, j| acc + row[j])
            })
            .collect()
    }

    /// Per-attribute terms `θ[k][j]·z[j]` of the class-`k` score.
    pub fn contributions(&self, class: usize, z: &AttributeVector) -> Result<Vec<f64>> {
        self.check_dims(z)?;
        Ok(self
            .row(class)
            .iter()
            .enumerate()
            .map(|(j, &w)| if z.get(j) { w } else { 0.0 })
            .collect())
    }

    fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, &path.display().to_string())
    }

    /// Versioned text form; floats use the shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{LOGREG_HEADER}").unwrap();
        writeln!(out, "bias {}", self.bias.is_some()).unwrap();
        writeln!(out, "l2_penalty {:?}", self.l2_penalty).unwrap();
        write_vocabularies(&mut out, &self.attr_vocab, &self.class_vocab);
        writeln!(out, "weights {} {}", self.n_classes(), self.n_attributes()).unwrap();
        for k in 0..self.n_classes() {
            writeln!(out, "{}", join_floats(self.row(k))).unwrap();
        }
        if let Some(b) = &self.bias {
            writeln!(out, "intercepts {}", join_floats(b)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut r = LineReader::new(text, source_name);
        r.expect_exact(LOGREG_HEADER)?;
        let bias = match r.keyed("bias")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(r.error(format!("bad bias flag {other:?}"))),
        };
        let l2_raw = r.keyed("l2_penalty")?;
    let l2 = r.parse_float(&l2_raw)?;
        let (attr_vocab, class_vocab) = read_vocabularies(&mut r)?;
        let dims = r.keyed("weights")?;
        let expected = format!("{} {}", class_vocab.len(), attr_vocab.len());
        if dims != expected {
            return Err(r.error(format!("weights shape {dims:?}, expected {expected:?}")));
        }
        let mut rows = Vec::with_capacity(class_vocab.len());
        for _ in 0..class_vocab.len() {
            let line = r.next_line()?;
            rows.push(r.parse_floats(&line, attr_vocab.len())?);
        }
        let intercepts = if bias {
            let line = r.keyed("intercepts")?;
            Some(r.parse_floats(&line, class_vocab.len())?)
        } else {
            None
        };
        r.expect_end()?;
        LogRegModel::from_rows(attr_vocab, class_vocab, rows, intercepts, l2)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_vocabularies(out: &mut String, attrs: &AttributeVocabulary, classes: &ClassVocabulary) {
    writeln!(out, "attributes {}", attrs.len()).unwrap();
    for (id, name) in attrs.iter() {
        writeln!(out, "{id} {name}").unwrap();
    }
    writeln!(out, "classes {}", classes.len()).unwrap();
    for (id, name) in classes.names().iter().enumerate() {
        writeln!(out, "{id} {name}").unwrap();
    }
}

fn read_vocabularies(r: &mut LineReader<'_>) -> Result<(AttributeVocabulary, ClassVocabulary)> {
    let n_attr_raw = r.keyed("attributes")?;
    let n_attr = r.parse_count(&n_attr_raw)?;
    let attrs = (1..=n_attr)
        .map(|id| r.numbered_name(id))
        .collect::<Result<Vec<_>>>()?;
    let n_class_raw = r.keyed("classes")?;
    let n_class = r.parse_count(&n_class_raw)?;
    let classes = (0..n_class)
        .map(|id| r.numbered_name(id))
        .collect::<Result<Vec<_>>>()?;
    Ok((AttributeVocabulary::new(attrs)?, ClassVocabulary::new(classes)?))
}

/// Line-oriented reader for the model formats.
struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    source_name: &'a str,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str, source_name: &'a str) -> Self {
        LineReader {
            lines: text.lines().enumerate(),
            source_name,
            line_no: 0,
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.source_name, self.line_no.max(1), message)
    }

    fn next_line(&mut self) -> Result<String> {
        match self.lines.next() {
            Some((i, line)) => {
                self.line_no = i + 1;
                Ok(line.to_string())
            }
            None => {
                self.line_no += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() == want {
            Ok(())
        } else {
            Err(self.error(format!("expected {want:?}")))
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim().to_string()),
            _ => Err(self.error(format!("expected \"{key} ...\""))),
        }
    }

    fn numbered_name(&mut self, id: usize) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((n, name)) if n.parse::<usize>() == Ok(id) => Ok(name.trim().to_string()),
            _ => Err(self.error(format!("expected entry \"{id} <name>\""))),
        }
    }

    fn parse_count(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.error(format!("bad count {s:?}")))
    }

    fn parse_float(&self, s: &str) -> Result<f64> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("bad number {s:?}"))),
        }
    }

    fn parse_floats(&self, line: &str, expected: usize) -> Result<Vec<f64>> {
        let values = line
            .split_whitespace()
            .map(|t| self.parse_float(t))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.error(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn expect_end(&mut self) -> Result<()> {
        for (i, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                self.line_no = i + 1;
                return Err(self.error("trailing content"));
            }
        }
        Ok(())
    }
}

/// `θ z` (plus intercepts when enabled).
pub fn score_linear(model: &LogRegModel, z: &AttributeVector) -> Result<Vec<f64>> {
    model.check_dims(z)?;
    Ok(model.scores_unchecked(z))
}

pub fn predict_proba(model: &LogRegModel, z: &AttributeVector) -> Result<Vec<f64>> {
    Ok(softmax(&score_linear(model, z)?))
}

/// Argmax of [`predict_proba`], ties to the lowest class id.
pub fn predict(model: &LogRegModel, z: &AttributeVector) -> Result<usize> {
    Ok(argmax(&predict_proba(model, z)?))
}

fn check_batch(model: &LogRegModel, xs: &[AttributeVector], ys: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    if xs.len() != ys.len() {
        return Err(Error::validation(format!(
            "{} vectors but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    for z in xs {
        model.check_dims(z)?;
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= model.n_classes()) {
        return Err(Error::validation(format!("label {y} out of range")));
    }
    Ok(())
}

/// Summed cross-entropy of the true classes plus `l2_penalty·‖θ‖²`
/// (intercepts are not penalized).
pub fn loss(model: &LogRegModel, xs: &[AttributeVector], ys: &[usize]) -> Result<f64> {
    check_batch(model, xs, ys)?;
    let nll: f64 = xs
        .iter()
        .zip(ys)
        .map(|(z, &y)| {
            let s = model.scores_unchecked(z);
            log_sum_exp(&s) - s[y]
        })
        .sum();
    Ok(nll + model.l2_penalty * model.squared_norm())
}

/// Gradient of [`loss`] with the model's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub n_attributes: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Gradient {
    pub fn weight(&self, class: usize, attr: usize) -> f64 {
        self.weights[class * self.n_attributes + attr]
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.bias.iter().flatten())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// `∂J/∂θ_k = Σ_i z_i (P(y=k|z_i) − 1{y_i=k}) + 2λθ_k`.
pub fn gradient(model: &LogRegModel, xs: &[AttributeVector], ys: &[usize]) -> Result<Gradient> {
    check_batch(model, xs, ys)?;
    let n_attr = model.n_attributes();
    let mut grad = vec![0.0; model.weights.len()];
    let mut bias_grad = model.bias.as_ref().map(|b| vec![0.0; b.len()]);
    for (z, &y) in xs.iter().zip(ys) {
        let p = softmax(&model.scores_unchecked(z));
        for (k, pk) in p.iter().enumerate() {
            let residual = pk - f64::from(u8::from(k == y));
            for j in z.ones() {
                grad[k * n_attr + j] += residual;
            }
            if let Some(bg) = bias_grad.as_mut() {
                bg[k] += residual;
            }
        }
    }
    for (g, w) in grad.iter_mut().zip(&model.weights) {
        *g += 2.0 * model.l2_penalty * w;
    }
    Ok(Gradient {
        n_attributes: n_attr,
        weights: grad,
        bias: bias_grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
}

/// Full-batch gradient descent from θ = 0. Each step moves by
/// `learning_rate / n` times the gradient of the summed loss. Returns the
/// lowest-loss parameters visited.
pub fn train_logreg(
    xs: &[AttributeVector],
    ys: &[usize],
    attr_vocab: &AttributeVocabulary,
    class_vocab: &ClassVocabulary,
    cfg: &TrainConfig,
) -> Result<(LogRegModel, TrainReport)> {
    cfg.validate()?;
    let mut model = LogRegModel::zeros(attr_vocab.clone(), class_vocab.clone(), cfg.bias, cfg.l2_penalty);
    check_batch(&model, xs, ys)?;
    let missing: Vec<&str> = (0..class_vocab.len())
        .filter(|k| !ys.contains(k))
        .map(|k| class_vocab.names()[k].as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "classes absent from training labels: {}",
            missing.join(", ")
        )));
    }

    let step = cfg.learning_rate / xs.len() as f64;
    let initial_loss = loss(&model, xs, ys)?;
    let mut best = (model.clone(), initial_loss);
    let mut current_loss = initial_loss;
    let mut increases = 0;
    let mut epochs = 0;
    let mut converged = false;
    while epochs < cfg.max_epochs {
        let g = gradient(&model, xs, ys)?;
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            *w -= step * gw;
        }
        if let (Some(b), Some(gb)) = (model.bias.as_mut(), g.bias.as_ref()) {
            for (bk, gk) in b.iter_mut().zip(gb) {
                *bk -= step * gk;
            }
        }
        epochs += 1;
        let new_loss = loss(&model, xs, ys)?;
        if !new_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at epoch {epochs}; use a smaller learning_rate"
            )));
        }
        if new_loss > current_loss {
            increases += 1;
            if increases >= DIVERGENCE_WINDOW {
                return Err(Error::Numeric(format!(
                    "loss increased for {DIVERGENCE_WINDOW} consecutive epochs \
                     (epoch {epochs}); use a smaller learning_rate"
                )));
            }
        } else {
            increases = 0;
        }
        let decrease = current_loss - new_loss;
        current_loss = new_loss;
        if new_loss < best.1 {
            best = (model.clone(), new_loss);
        }
        if (0.0..cfg.loss_tolerance).contains(&decrease) {
            converged = true;
            break;
        }
    }
    let (model, final_loss) = best;
    Ok((
        model,
        TrainReport {
            epochs,
            initial_loss,
            final_loss,
            converged,
        },
    ))
}

/// Fraction of vectors whose prediction matches the label.
pub fn accuracy(
    predict: impl Fn(&AttributeVector) -> Result<usize>,
    xs: &[AttributeVector],
    ys: &[usize],
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::validation("accuracy of an empty set"));
    }
    let mut correct = 0;
    for (z, &y) in xs.iter().zip(ys) {
        if predict(z)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// Bernoulli naive Bayes with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    attr_vocab: AttributeVocabulary,
    class_vocab: ClassVocabulary,
    pub alpha: f64,
    pub log_prior: Vec<f64>,
    /// `ln P(bit = 1 | class)`, row-major classes × attributes.
    pub log_present: Vec<f64>,
    /// `ln P(bit = 0 | class)`.
    pub log_absent: Vec<f64>,
}

pub fn train_nb(
    xs: &[AttributeVector],
    ys: &[usize],
    attr_vocab: &AttributeVocabulary,
    class_vocab: &ClassVocabulary,
    alpha: f64,
) -> Result<NaiveBayesModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::validation("smoothing alpha must be positive"));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::validation("naive Bayes needs a non-empty, aligned batch"));
    }
    let (k, n_attr) = (class_vocab.len(), attr_vocab.len());
    let mut class_count = vec![0usize; k];
    let mut present = vec![0usize; k * n_attr];
    for (z, &y) in xs.iter().zip(ys) {
        if z.len() != n_attr {
            return Err(dimension_error(z.len(), n_attr));
        }
        if y >= k {
            return Err(Error::validation(format!("label {y} out of range")));
        }
        class_count[y] += 1;
        for j in z.ones() {
            present[y * n_attr + j] += 1;
        }
    }
    if let Some(empty) = class_count.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!(
            "class {:?} has no training samples",
            class_vocab.names()[empty]
        )));
    }
    let n = xs.len() as f64;
    let log_prior = class_count.iter().map(|&c| (c as f64 / n).ln()).collect();
    let mut log_present = Vec::with_capacity(k * n_attr);
    let mut log_absent = Vec::with_capacity(k * n_attr);
    for (c, &total) in class_count.iter().enumerate() {
        let denom = total as f64 + 2.0 * alpha;
        for j in 0..n_attr {
            let ones = present[c * n_attr + j] as f64;
            log_present.push(((ones + alpha) / denom).ln());
            log_absent.push(((total as f64 - ones + alpha) / denom).ln());
        }
    }
    Ok(NaiveBayesModel {
        attr_vocab: attr_vocab.clone(),
        class_vocab: class_vocab.clone(),
        alpha,
        log_prior,
        log_present,
        log_absent,
    })
}

impl NaiveBayesModel {
    pub fn attr_vocab(&self) -> &AttributeVocabulary {
        &self.attr_vocab
    }

    pub fn class_vocab(&self) -> &ClassVocabulary {
        &self.class_vocab
    }

    /// Unnormalized log posterior per class.
    pub fn log_joint(&self, z: &AttributeVector) -> Result<Vec<f64>> {
        let n_attr = self.attr_vocab.len();
        if z.len() != n_attr {
            return Err(dimension_error(z.len(), n_attr));
        }
        Ok((0..self.class_vocab.len())
            .map(|c| {
                let base = c * n_attr;
                (0..n_attr).fold(self.log_prior[c], |acc, j| {
                    acc + if z.get(j) {
                        self.log_present[base + j]
                    } else {
                        self.log_absent[base + j]
                    }
                })
            })
            .collect())
    }

    pub fn posterior(&self, z: &AttributeVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.log_joint(z)?))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{NAIVE_BAYES_HEADER}").unwrap();
        writeln!(out, "alpha {:?}", self.alpha).unwrap();
        write_vocabularies(&mut out, &self.attr_vocab, &self.class_vocab);
        writeln!(out, "log_prior {}", join_floats(&self.log_prior)).unwrap();
        let n_attr = self.attr_vocab.len();
        for c in 0..self.class_vocab.len() {
            let range = c * n_attr..(c + 1) * n_attr;
            writeln!(out, "present {}", join_floats(&self.log_present[range.clone()])).unwrap();
            writeln!(out, "absent {}", join_floats(&self.log_absent[range])).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut r = LineReader::new(text, source_name);
        r.expect_exact(NAIVE_BAYES_HEADER)?;
        let alpha_raw = r.keyed("alpha")?;
    let alpha = r.parse_float(&alpha_raw)?;
        let (attr_vocab, class_vocab) = read_vocabularies(&mut r)?;
        let k = class_vocab.len();
        let n_attr = attr_vocab.len();
        let line = r.keyed("log_prior")?;
        let log_prior = r.parse_floats(&line, k)?;
        let mut log_present = Vec::with_capacity(k * n_attr);
        let mut log_absent = Vec::with_capacity(k * n_attr);
        for _ in 0..k {
            let line = r.keyed("present")?;
            log_present.extend(r.parse_floats(&line, n_attr)?);
            let line = r.keyed("absent")?;
            log_absent.extend(r.parse_floats(&line, n_attr)?);
        }
        r.expect_end()?;
        Ok(NaiveBayesModel {
            attr_vocab,
            class_vocab,
            alpha,
            log_prior,
            log_present,
            log_absent,
        })
    }
}

/// MAP class; ties go to the lowest class id.
pub fn predict_nb(model: &NaiveBayesModel, z: &AttributeVector) -> Result<usize> {
    Ok(argmax(&model.log_joint(z)?))
}

/// Either kind of saved classifier, distinguished by the file header.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    LogReg(LogRegModel),
    NaiveBayes(NaiveBayesModel),
}

impl SavedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let name = path.display().to_string();
        match text.lines().next().map(str::trim) {
            Some(LOGREG_HEADER) => Ok(SavedModel::LogReg(LogRegModel::from_text(&text, &name)?)),
            Some(NAIVE_BAYES_HEADER) => {
                Ok(SavedModel::NaiveBayes(NaiveBayesModel::from_text(&text, &name)?))
            }
            _ => Err(Error::parse(&name, 1, "unrecognized model header")),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            SavedModel::LogReg(m) => m.to_text(),
            SavedModel::NaiveBayes(m) => m.to_text(),
        }
    }

    pub fn predict(&self, z: &AttributeVector) -> Result<usize> {
        match self {
            SavedModel::LogReg(m) => predict(m, z),
            SavedModel::NaiveBayes(m) => predict_nb(m, z),
        }
    }

    pub fn attr_vocab(&self) -> &AttributeVocabulary {
        match self {
            SavedModel::LogReg(m) => m.attr_vocab(),
            SavedModel::NaiveBayes(m) => m.attr_vocab(),
        }
    }
}
