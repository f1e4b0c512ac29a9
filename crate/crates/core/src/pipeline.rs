//! End-to-end inference (segment, vectorize, classify, explain), dataset
//! evaluation, and the audit run, with text and JSON-lines reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::{predict, LogRegModel};
use crate::dataset::{vectorize, AttributeVector, Sample, TripleDataset, VectorizeConfig};
use crate::error::{Error, Result};
use crate::explain::{
    audit_intrinsicality, audit_objectivity, counterfactual_scan, explain,
    self_explaining_audit, CounterfactualResult, Explanation, SelfExplainingAudit,
    SelfExplainingConfig,
};
use crate::kb::KnowledgeBase;
use crate::kg::{audit_validity, GedResult};
use crate::lsp::{classify_failure, predict_segmap, FailureCase, LatentPrediction, PredictorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub class_id: usize,
    pub explanation: Explanation,
    pub segmap: LatentPrediction,
    pub vector: AttributeVector,
}

/// Predict the latent space, vectorize it, classify, explain.
pub fn run_inference(
    sample: &Sample,
    predictor_cfg: &PredictorConfig,
    model: &LogRegModel,
    vect_cfg: &VectorizeConfig,
) -> Result<Inference> {
    let segmap = predict_segmap(predictor_cfg, sample, model.attr_vocab(), vect_cfg)?;
    let vector = vectorize(&segmap.segmap, model.attr_vocab(), vect_cfg)?;
    let class_id = predict(model, &vector)?;
    let explanation = explain(model, &vector, &sample.sample_id)?;
    Ok(Inference {
        class_id,
        explanation,
        segmap,
        vector,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub gt_label: usize,
    pub pred_label: usize,
    pub failure: FailureCase,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    /// `confusion[gt][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub failure_counts: BTreeMap<FailureCase, usize>,
    pub per_sample: Vec<SampleOutcome>,
}

fn check_vocabularies(ds: &TripleDataset, model: &LogRegModel) -> Result<()> {
    if &ds.attr_vocab != model.attr_vocab() || &ds.class_vocab != model.class_vocab() {
        return Err(Error::validation(
            "dataset vocabularies do not match the model's vocabularies",
        ));
    }
    Ok(())
}

/// Runs inference on every sample (in parallel) and aggregates in sample
/// order, so the report does not depend on scheduling.
pub fn evaluate(
    ds: &TripleDataset,
    predictor_cfg: &PredictorConfig,
    model: &LogRegModel,
    vect_cfg: &VectorizeConfig,
) -> Result<EvalReport> {
    check_vocabularies(ds, model)?;
    predictor_cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::validation("cannot evaluate an empty dataset"));
    }
    let per_sample = ds
        .samples
        .par_iter()
        .map(|sample| {
            let inf = run_inference(sample, predictor_cfg, model, vect_cfg)?;
            let failure =
                classify_failure(sample, &inf.segmap, inf.class_id, model.attr_vocab(), vect_cfg)?;
            Ok(SampleOutcome {
                sample_id: sample.sample_id.clone(),
                gt_label: sample.label,
                pred_label: inf.class_id,
                failure,
                explanation: inf.explanation,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = model.n_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut failure_counts: BTreeMap<FailureCase, usize> =
        FailureCase::all().map(|c| (c, 0)).collect();
    for o in &per_sample {
        confusion[o.gt_label][o.pred_label] += 1;
        *failure_counts.entry(o.failure).or_insert(0) += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    Ok(EvalReport {
        class_names: model.class_vocab().names().to_vec(),
        accuracy: correct as f64 / per_sample.len() as f64,
        confusion,
        failure_counts,
        per_sample,
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum EvalRecord<'a> {
    Summary {
        samples: usize,
        accuracy: f64,
        classes: &'a [String],
        confusion: &'a [Vec<usize>],
        failure_counts: BTreeMap<String, usize>,
    },
    Sample {
        sample_id: &'a str,
        gt_label: &'a str,
        pred_label: &'a str,
        failure: FailureCase,
        attribute_count: usize,
        weight_mass: f64,
        attributes: Vec<(&'a str, f64)>,
        text: &'a str,
    },
}

fn json_line(out: &mut String, record: &impl Serialize) {
    out.push_str(&serde_json::to_string(record).expect("report records serialize"));
    out.push('\n');
}

impl EvalReport {
    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "samples: {}", self.per_sample.len()).unwrap();
        writeln!(
            out,
            "accuracy: {:.4} ({}/{})",
            self.accuracy,
            self.correct(),
            self.per_sample.len()
        )
        .unwrap();
        writeln!(out, "confusion (rows = ground truth, columns = prediction):").unwrap();
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            writeln!(out, "  {:>2} {} | {}", i, cells.join(""), self.class_names[i]).unwrap();
        }
        writeln!(out, "failure cases:").unwrap();
        for (case, count) in &self.failure_counts {
            writeln!(out, "  {case:<28} {count}").unwrap();
        }
        writeln!(out, "explanations:").unwrap();
        for o in &self.per_sample {
            writeln!(out, "  [{}] {}", o.failure, o.explanation.text).unwrap();
        }
        out
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        json_line(
            &mut out,
            &EvalRecord::Summary {
                samples: self.per_sample.len(),
                accuracy: self.accuracy,
                classes: &self.class_names,
                confusion: &self.confusion,
                failure_counts: self
                    .failure_counts
                    .iter()
                    .map(|(c, n)| (c.to_string(), *n))
                    .collect(),
            },
        );
        for o in &self.per_sample {
            json_line(
                &mut out,
                &EvalRecord::Sample {
                    sample_id: &o.sample_id,
                    gt_label: &self.class_names[o.gt_label],
                    pred_label: &self.class_names[o.pred_label],
                    failure: o.failure,
                    attribute_count: o.explanation.attributes.len(),
                    weight_mass: o.explanation.weight_mass(),
                    attributes: o
                        .explanation
                        .attributes
                        .iter()
                        .map(|a| (a.name.as_str(), a.weight.unwrap_or(f64::NAN)))
                        .collect(),
                    text: &o.explanation.text,
                },
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleAudit {
    pub sample_id: String,
    pub predicted_class: String,
    pub objective: bool,
    pub intrinsic: bool,
    pub degenerate: bool,
    pub counterfactuals: Vec<CounterfactualResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub class_names: Vec<String>,
    pub attribute_names: Vec<String>,
    pub epsilon: f64,
    pub valid: bool,
    pub ged: GedResult,
    pub self_explaining: SelfExplainingAudit,
    pub samples: Vec<SampleAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub epsilon: f64,
    pub max_flips: usize,
    pub self_explaining: SelfExplainingConfig,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            epsilon: crate::kg::DEFAULT_EPSILON,
            max_flips: 2,
            self_explaining: SelfExplainingConfig::default(),
        }
    }
}

/// Audits every ground-truth explanation of `ds`, the model's validity
/// against the expert KB, and the self-explaining conditions.
pub fn audit(
    ds: &TripleDataset,
    model: &LogRegModel,
    expert_kb: &KnowledgeBase,
    vect_cfg: &VectorizeConfig,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    check_vocabularies(ds, model)?;
    let (valid, ged) = audit_validity(model, expert_kb, opts.epsilon)?;
    let self_explaining = self_explaining_audit(model, &opts.self_explaining);
    let vectors = ds.vectors(vect_cfg)?;
    let samples = ds
        .samples
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(sample, z)| {
            let e = explain(model, z, &sample.sample_id)?;
            Ok(SampleAudit {
                sample_id: sample.sample_id.clone(),
                predicted_class: e.predicted_class.clone(),
                objective: audit_objectivity(&e),
                intrinsic: audit_intrinsicality(&e, model, z),
                degenerate: e.is_degenerate(),
                counterfactuals: counterfactual_scan(model, z, opts.max_flips)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditReport {
        class_names: model.class_vocab().names().to_vec(),
        attribute_names: model.attr_vocab().names().to_vec(),
        epsilon: opts.epsilon,
        valid,
        ged,
        self_explaining,
        samples,
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum AuditRecord<'a> {
    Summary {
        samples: usize,
        objective: usize,
        intrinsic: usize,
        degenerate: usize,
        epsilon: f64,
        valid: bool,
        ged: &'a GedResult,
        self_explaining: &'a SelfExplainingAudit,
    },
    Sample(&'a SampleAudit),
}

impl AuditReport {
    fn count(&self, f: impl Fn(&SampleAudit) -> bool) -> usize {
        self.samples.iter().filter(|s| f(s)).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.samples.len();
        writeln!(out, "explanations audited: {n}").unwrap();
        writeln!(out, "objective: {}/{n}", self.count(|s| s.objective)).unwrap();
        writeln!(out, "intrinsic: {}/{n}", self.count(|s| s.intrinsic)).unwrap();
        writeln!(out, "degenerate (no attributes): {}", self.count(|s| s.degenerate)).unwrap();
        writeln!(
            out,
            "validity: {} (graph edit distance {} at epsilon {})",
            if self.valid { "valid" } else { "not valid" },
            self.ged.distance,
            self.epsilon
        )
        .unwrap();
        for op in &self.ged.edit_script {
            writeln!(out, "  {op}").unwrap();
        }
        let se = &self.self_explaining;
        writeln!(
            out,
            "self-explaining: {} (additive {}, monotone {}, simulatable {}, max deviation {:e})",
            se.passed(),
            se.additive,
            se.monotone,
            se.simulatable,
            se.max_deviation
        )
        .unwrap();
        writeln!(out, "counterfactuals:").unwrap();
        for s in &self.samples {
            let summary = match s.counterfactuals.first() {
                None => "none within flip budget".to_string(),
                Some(first) => {
                    let flips: Vec<String> = first
                        .flips
                        .iter()
                        .map(|&j| self.attribute_names[j].clone())
                        .collect();
                    format!(
                        "{} minimal change(s) of size {}, e.g. toggle [{}] -> {}",
                        s.counterfactuals.len(),
                        first.flips.len(),
                        flips.join(", "),
                        self.class_names[first.new_class]
                    )
                }
            };
            writeln!(out, "  {} ({}): {summary}", s.sample_id, s.predicted_class).unwrap();
        }
        out
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        json_line(
            &mut out,
            &AuditRecord::Summary {
                samples: self.samples.len(),
                objective: self.count(|s| s.objective),
                intrinsic: self.count(|s| s.intrinsic),
                degenerate: self.count(|s| s.degenerate),
                epsilon: self.epsilon,
                valid: self.valid,
                ged: &self.ged,
                self_explaining: &self.self_explaining,
            },
        );
        for s in &self.samples {
            json_line(&mut out, &AuditRecord::Sample(s));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{accuracy, train_logreg, TrainConfig};
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::lsp::{NoiseConfig, PredOutcome, SegOutcome};

    fn trained(n_per_class: usize, p_omit: f64) -> (TripleDataset, LogRegModel) {
        let kb = KnowledgeBase::monumai();
        let cfg = SynthConfig {
            p_omit,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&kb, n_per_class, &cfg, 11).unwrap();
        let xs = ds.vectors(&VectorizeConfig::default()).unwrap();
        let (m, _) = train_logreg(&xs, &ds.labels(), &ds.attr_vocab, &ds.class_vocab, &TrainConfig::default())
            .unwrap();
        (ds, m)
    }

    #[test]
    fn oracle_accuracy_equals_classifier_accuracy() {
        let (ds, m) = trained(20, 0.3);
        let vc = VectorizeConfig::default();
        let report = evaluate(&ds, &PredictorConfig::Oracle, &m, &vc).unwrap();
        let xs = ds.vectors(&vc).unwrap();
        let direct = accuracy(|z| predict(&m, z), &xs, &ds.labels()).unwrap();
        assert_eq!(report.accuracy, direct);
        assert_eq!(report.confusion.iter().flatten().sum::<usize>(), ds.len());
        assert_eq!(report.failure_counts.values().sum::<usize>(), ds.len());
    }

    #[test]
    fn noiseless_evaluation_is_exact_and_correct() {
        let (ds, m) = trained(10, 0.0);
        let report = evaluate(&ds, &PredictorConfig::Oracle, &m, &VectorizeConfig::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
        let exact = FailureCase {
            seg: SegOutcome::ExactSeg,
            pred: PredOutcome::CorrectPred,
        };
        assert_eq!(report.failure_counts[&exact], ds.len());
    }

    #[test]
    fn dropping_every_attribute_predicts_class_zero() {
        let (ds, m) = trained(5, 0.0);
        let noise = NoiseConfig {
            p_drop_attribute: 1.0,
            ..NoiseConfig::default()
        };
        let report = evaluate(&ds, &PredictorConfig::Noisy(noise), &m, &VectorizeConfig::default()).unwrap();
        assert!(report.per_sample.iter().all(|o| o.pred_label == 0));
        assert!(report.per_sample.iter().all(|o| o.explanation.is_degenerate()));
    }

    #[test]
    fn gothic_sample_end_to_end() {
        let (ds, m) = trained(10, 0.0);
        let gothic = m.class_vocab().id_of("Gothic Monument").unwrap();
        let sample = ds.samples.iter().find(|s| s.label == gothic).unwrap();
        let inf = run_inference(sample, &PredictorConfig::Oracle, &m, &VectorizeConfig::default()).unwrap();
        assert_eq!(inf.class_id, gothic);
        assert_eq!(inf.segmap.segmap, sample.gt_segmap);
        let mut names: Vec<&str> = inf.explanation.attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        assert_eq!(names, ["Gothic Pinnacle", "Ogee Arch", "Pointed Arch", "Trefoil Arch"]);
        assert!(inf.explanation.text.contains("represents a Gothic Monument because"));
    }

    #[test]
    fn reports_are_deterministic() {
        let (ds, m) = trained(8, 0.2);
        let noise = NoiseConfig {
            p_drop_instance: 0.4,
            p_spurious: 0.1,
            seed: 5,
            ..NoiseConfig::default()
        };
        let cfg = PredictorConfig::Noisy(noise);
        let vc = VectorizeConfig::default();
        let a = evaluate(&ds, &cfg, &m, &vc).unwrap();
        let b = evaluate(&ds, &cfg, &m, &vc).unwrap();
        assert_eq!(a.to_records(), b.to_records());
        assert_eq!(a.to_text(), b.to_text());
        let audit_a = audit(&ds, &m, &KnowledgeBase::monumai(), &vc, &AuditOptions::default()).unwrap();
        assert!(audit_a.to_records().lines().count() == ds.len() + 1);
    }
}
