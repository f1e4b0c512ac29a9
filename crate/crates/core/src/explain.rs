//! Natural-language explanations of transparent-classifier predictions,
//! their objectivity/intrinsicality audits, counterfactual search, and the
//! self-explaining model check.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, predict, score_linear, softmax, LogRegModel};
use crate::dataset::AttributeVector;
use crate::error::{Error, Result};

/// Largest vocabulary for which [`counterfactual_scan`] enumerates flips.
pub const DEFAULT_MAX_SCAN_ATTRIBUTES: usize = 24;

/// Where an explanation field's value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ModelWeight,
    InputBit,
    Vocabulary,
    /// Anything outside the model; never produced by [`explain`].
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldProvenance {
    pub field: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedAttribute {
    pub name: String,
    pub index: usize,
    /// `θ[predicted_class][index]`, stored exactly.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sample_id: String,
    pub predicted_class: String,
    pub predicted_class_id: usize,
    /// Present attributes in descending |weight|.
    pub attributes: Vec<ExplainedAttribute>,
    pub text: String,
    pub segmap_ref: Option<String>,
    pub provenance: Vec<FieldProvenance>,
}

impl Explanation {
    pub fn is_degenerate(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Sum of the quoted weights.
    pub fn weight_mass(&self) -> f64 {
        self.attributes.iter().filter_map(|a| a.weight).sum()
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Renders the explanation sentence. Weights are shown with 4 decimals.
pub fn render_text(sample_id: &str, class: &str, attributes: &[ExplainedAttribute]) -> String {
    if attributes.is_empty() {
        return format!(
            "Image {sample_id} represents a {class}, but no attributes were detected; \
             the prediction follows from the classifier's scores for an empty attribute vector."
        );
    }
    let names: Vec<String> = attributes.iter().map(|a| a.name.clone()).collect();
    let weights: Vec<String> = attributes
        .iter()
        .map(|a| a.weight.map_or_else(|| "?".to_string(), |w| format!("{w:.4}")))
        .collect();
    let (noun, verb) = if attributes.len() == 1 {
        ("attribute", "is")
    } else {
        ("attributes", "are")
    };
    let (those, with) = if attributes.len() == 1 {
        ("that attribute", "with weight")
    } else {
        ("those attributes respectively", "with weights")
    };
    format!(
        "Image {sample_id} represents a {class} because {noun} {} {verb} present, \
         and the classifier leads {those} {with} {} to class {class}.",
        join_list(&names),
        join_list(&weights),
    )
}

pub fn explain(model: &LogRegModel, z: &AttributeVector, sample_id: &str) -> Result<Explanation> {
    let class_id = predict(model, z)?;
    let class = model.class_vocab().names()[class_id].clone();
    let mut attributes: Vec<ExplainedAttribute> = z
        .ones()
        .map(|j| ExplainedAttribute {
            name: model.attr_vocab().name_at(j).to_string(),
            index: j,
            weight: Some(model.weight(class_id, j)),
        })
        .collect();
    attributes.sort_by(|a, b| {
        let (wa, wb) = (a.weight.unwrap_or(0.0).abs(), b.weight.unwrap_or(0.0).abs());
        wb.total_cmp(&wa).then(a.index.cmp(&b.index))
    });
    let mut provenance = vec![FieldProvenance {
        field: "predicted_class".into(),
        source: Source::Vocabulary,
    }];
    for i in 0..attributes.len() {
        provenance.extend([
            FieldProvenance {
                field: format!("attributes[{i}].name"),
                source: Source::Vocabulary,
            },
            FieldProvenance {
                field: format!("attributes[{i}].present"),
                source: Source::InputBit,
            },
            FieldProvenance {
                field: format!("attributes[{i}].weight"),
                source: Source::ModelWeight,
            },
        ]);
    }
    Ok(Explanation {
        sample_id: sample_id.to_string(),
        text: render_text(sample_id, &class, &attributes),
        predicted_class: class,
        predicted_class_id: class_id,
        attributes,
        segmap_ref: None,
        provenance,
    })
}

/// True iff the explanation names at least one symbol and every named
/// symbol carries a relationship (a weight) quoted in the text.
pub fn audit_objectivity(e: &Explanation) -> bool {
    !e.attributes.is_empty()
        && e.attributes.iter().all(|a| {
            !a.name.is_empty()
                && e.text.contains(&a.name)
                && a.weight.is_some_and(f64::is_finite)
        })
}

/// True iff every element of the explanation traces back to the model, its
/// vocabularies, or the input vector.
pub fn audit_intrinsicality(e: &Explanation, model: &LogRegModel, z: &AttributeVector) -> bool {
    if e.provenance.iter().any(|p| p.source == Source::External) {
        return false;
    }
    let Ok(class_id) = predict(model, z) else {
        return false;
    };
    if e.predicted_class_id != class_id
        || model.class_vocab().name(class_id) != Some(e.predicted_class.as_str())
    {
        return false;
    }
    let traced = e.attributes.iter().all(|a| {
        a.index < model.n_attributes()
            && model.attr_vocab().name_at(a.index) == a.name
            && z.get(a.index)
            && a.weight.map(f64::to_bits) == Some(model.weight(class_id, a.index).to_bits())
    });
    traced && e.text == render_text(&e.sample_id, &e.predicted_class, &e.attributes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualResult {
    /// Toggled attribute indices, ascending.
    pub flips: Vec<usize>,
    pub new_class: usize,
    /// Probability of the original class before and after flipping.
    pub old_prob: f64,
    pub new_prob: f64,
    /// All class probabilities of the flipped vector.
    pub new_probs: Vec<f64>,
}

impl CounterfactualResult {
    pub fn apply(&self, z: &AttributeVector) -> AttributeVector {
        let mut flipped = z.clone();
        for &j in &self.flips {
            flipped.toggle(j);
        }
        flipped
    }
}

/// All minimum-cardinality flip sets (up to `max_flips` toggles) that change
/// the predicted class, ordered by cardinality then lexicographically.
///
/// Because z is binary, toggling bit j moves every class score by ±θ[k][j];
/// probabilities follow by exponentiating and normalizing the shifted scores.
pub fn counterfactual_scan(
    model: &LogRegModel,
    z: &AttributeVector,
    max_flips: usize,
) -> Result<Vec<CounterfactualResult>> {
    counterfactual_scan_bounded(model, z, max_flips, DEFAULT_MAX_SCAN_ATTRIBUTES)
}

pub fn counterfactual_scan_bounded(
    model: &LogRegModel,
    z: &AttributeVector,
    max_flips: usize,
    max_attributes: usize,
) -> Result<Vec<CounterfactualResult>> {
    if max_flips == 0 {
        return Err(Error::validation("max_flips must be >= 1"));
    }
    let n = model.n_attributes();
    if n > max_attributes {
        return Err(Error::validation(format!(
            "exhaustive counterfactual search supports at most {max_attributes} attributes, model has {n}"
        )));
    }
    let base = score_linear(model, z)?;
    let base_probs = softmax(&base);
    let original = argmax(&base_probs);
    for size in 1..=max_flips.min(n) {
        let mut found = Vec::new();
        for flips in (0..n).combinations(size) {
            let mut scores = base.clone();
            for &j in &flips {
                let sign = if z.get(j) { -1.0 } else { 1.0 };
                for (k, s) in scores.iter_mut().enumerate() {
                    *s += sign * model.weight(k, j);
                }
            }
            let probs = softmax(&scores);
            let new_class = argmax(&probs);
            if new_class != original {
                found.push(CounterfactualResult {
                    flips,
                    new_class,
                    old_prob: base_probs[original],
                    new_prob: probs[original],
                    new_probs: probs,
                });
            }
        }
        if !found.is_empty() {
            return Ok(found);
        }
    }
    Ok(Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfExplainingConfig {
    /// Simulatability bound on the number of attributes.
    pub max_attributes: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SelfExplainingConfig {
    fn default() -> Self {
        SelfExplainingConfig {
            max_attributes: 20,
            samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfExplainingAudit {
    pub additive: bool,
    pub monotone: bool,
    pub simulatable: bool,
    /// Largest |Σ contributions − score| over the sampled vectors.
    pub max_deviation: f64,
}

impl SelfExplainingAudit {
    pub fn passed(&self) -> bool {
        self.additive && self.monotone && self.simulatable
    }
}

/// Checks additive separability of class scores into per-attribute
/// contributions, monotonicity of the aggregation, and the attribute bound.
pub fn self_explaining_audit(model: &LogRegModel, cfg: &SelfExplainingConfig) -> SelfExplainingAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = model.n_attributes();
    let mut max_deviation: f64 = 0.0;
    let mut monotone = true;
    for _ in 0..cfg.samples {
        let z = AttributeVector::from_bits((0..n).map(|_| rng.gen_bool(0.5)).collect());
        let scores = score_linear(model, &z).expect("vector sized from model");
        for (k, &score) in scores.iter().enumerate() {
            let intercept = model.bias().map_or(0.0, |b| b[k]);
            let terms = model.contributions(k, &z).expect("vector sized from model");
            let aggregate = |t: &[f64]| t.iter().fold(intercept, |acc, c| acc + c);
            let total = aggregate(&terms);
            max_deviation = max_deviation.max((total - score).abs());
            for j in 0..n {
                let mut raised = terms.clone();
                raised[j] += 1.0;
                if aggregate(&raised) < total {
                    monotone = false;
                }
            }
        }
    }
    SelfExplainingAudit {
        additive: max_deviation <= 1e-12,
        monotone,
        simulatable: n <= cfg.max_attributes,
        max_deviation,
    }
}

pub fn audit_self_explaining(model: &LogRegModel, cfg: &SelfExplainingConfig) -> bool {
    self_explaining_audit(model, cfg).passed()
}

/// Audit flags for one explanation; `valid` is filled from the KG audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExplanationAudit {
    pub objective: bool,
    pub intrinsic: bool,
    pub valid: Option<bool>,
    pub self_explaining: bool,
}

impl ExplanationAudit {
    pub fn compute(
        e: &Explanation,
        model: &LogRegModel,
        z: &AttributeVector,
        valid: Option<bool>,
        self_explaining: bool,
    ) -> Self {
        ExplanationAudit {
            objective: audit_objectivity(e),
            intrinsic: audit_intrinsicality(e, model, z),
            valid,
            self_explaining,
        }
    }
}
