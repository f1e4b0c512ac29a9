//! Latent space predictors: the ground-truth oracle, file-backed external
//! predictions, and a seeded noise simulator, plus the segmentation failure
//! taxonomy.
//!
//! A prediction directory holds `<sample_id>.seg` (label grid) and an
//! optional `<sample_id>.conf` (confidence grid) per sample, in the grid
//! format documented in [`crate::dataset`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    rasterize_bboxes, vectorize, AttributeVocabulary, BBox, Sample, SegMap, VectorizeConfig,
};
use crate::error::{read_to_string, write_string, Error, Result};

pub const SEGMAP_EXT: &str = "seg";
pub const CONFIDENCE_EXT: &str = "conf";

/// Corruptions applied in order: instance drops, attribute drops, spurious
/// injections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Probability of erasing each ground-truth box independently.
    pub p_drop_instance: f64,
    /// Probability of erasing every box of a present attribute.
    pub p_drop_attribute: f64,
    /// Probability of injecting one region of each ground-truth-absent attribute.
    pub p_spurious: f64,
    /// Restore one box of any attribute whose instances were all dropped by
    /// the instance stage.
    pub keep_one_instance: bool,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_drop_instance: 0.0,
            p_drop_attribute: 0.0,
            p_spurious: 0.0,
            keep_one_instance: false,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_drop_instance", self.p_drop_instance),
            ("p_drop_attribute", self.p_drop_attribute),
            ("p_spurious", self.p_spurious),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} = {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorConfig {
    Oracle,
    File(PathBuf),
    Noisy(NoiseConfig),
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictorConfig::Oracle => Ok(()),
            PredictorConfig::File(dir) if dir.is_dir() => Ok(()),
            PredictorConfig::File(dir) => Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "prediction directory not found"),
            )),
            PredictorConfig::Noisy(noise) => noise.validate(),
        }
    }
}

/// A predicted segmentation map. Oracle and noisy predictors also report
/// the boxes that produced it, which then define instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrediction {
    pub segmap: SegMap,
    pub boxes: Option<Vec<BBox>>,
}

/// Seed for one sample, independent of evaluation order.
pub fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(sample_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn predict_segmap(
    cfg: &PredictorConfig,
    sample: &Sample,
    vocab: &AttributeVocabulary,
    vect_cfg: &VectorizeConfig,
) -> Result<LatentPrediction> {
    match cfg {
        PredictorConfig::Oracle => Ok(LatentPrediction {
            segmap: sample.gt_segmap.clone(),
            boxes: Some(sample.gt_boxes.clone()),
        }),
        PredictorConfig::File(dir) => {
            let segmap = read_prediction(dir, &sample.sample_id)?;
            let (gt, got) = (&sample.gt_segmap, (segmap.height(), segmap.width()));
            if got != (gt.height(), gt.width()) {
                return Err(Error::validation(format!(
                    "prediction for {} is {}x{}, sample grid is {}x{}",
                    sample.sample_id,
                    got.0,
                    got.1,
                    gt.height(),
                    gt.width()
                )));
            }
            segmap.check_vocabulary(vocab)?;
            Ok(LatentPrediction {
                segmap,
                boxes: None,
            })
        }
        PredictorConfig::Noisy(noise) => noisy_prediction(noise, sample, vocab, vect_cfg),
    }
}

fn noisy_prediction(
    noise: &NoiseConfig,
    sample: &Sample,
    vocab: &AttributeVocabulary,
    vect_cfg: &VectorizeConfig,
) -> Result<LatentPrediction> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(noise.seed, &sample.sample_id));
    let height = sample.gt_segmap.height();
    let width = sample.gt_segmap.width();

    let mut keep: Vec<bool> = sample
        .gt_boxes
        .iter()
        .map(|_| !rng.gen_bool(noise.p_drop_instance))
        .collect();
    if noise.keep_one_instance {
        let mut first_of: BTreeMap<u32, usize> = BTreeMap::new();
        let mut any_kept: BTreeSet<u32> = BTreeSet::new();
        for (i, b) in sample.gt_boxes.iter().enumerate() {
            first_of.entry(b.attribute_id).or_insert(i);
            if keep[i] {
                any_kept.insert(b.attribute_id);
            }
        }
        for (attr, i) in first_of {
            if !any_kept.contains(&attr) {
                keep[i] = true;
            }
        }
    }
    let mut boxes: Vec<BBox> = sample
        .gt_boxes
        .iter()
        .zip(&keep)
        .filter_map(|(b, &k)| k.then_some(*b))
        .collect();

    let present: BTreeSet<u32> = boxes.iter().map(|b| b.attribute_id).collect();
    let dropped: BTreeSet<u32> = present
        .into_iter()
        .filter(|_| rng.gen_bool(noise.p_drop_attribute))
        .collect();
    boxes.retain(|b| !dropped.contains(&b.attribute_id));

    let gt_attrs: BTreeSet<u32> = sample.gt_boxes.iter().map(|b| b.attribute_id).collect();
    let side = ((vect_cfg.min_pixels as f64).sqrt().ceil() as usize).max(1);
    let mut spurious = Vec::new();
    for (id, _) in vocab.iter() {
        if gt_attrs.contains(&id) || !rng.gen_bool(noise.p_spurious) {
            continue;
        }
        let w = rng.gen_range(side..=side + 2).min(width);
        let h = rng.gen_range(side..=side + 2).min(height);
        let x = rng.gen_range(0..=width - w);
        let y = rng.gen_range(0..=height - h);
        spurious.push(BBox::new(id, x, y, w, h));
    }

    let mut segmap = rasterize_bboxes(&boxes, height, width)?;
    // Injected regions are painted last so they always reach vectorization.
    for b in &spurious {
        for row in b.y..b.y + b.h {
            for col in b.x..b.x + b.w {
                segmap.set(row, col, b.attribute_id);
            }
        }
    }
    boxes.extend(spurious);
    Ok(LatentPrediction {
        segmap,
        boxes: Some(boxes),
    })
}

pub fn prediction_paths(dir: &Path, sample_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{sample_id}.{SEGMAP_EXT}")),
        dir.join(format!("{sample_id}.{CONFIDENCE_EXT}")),
    )
}

/// Reads `<sample_id>.seg` and, when present, `<sample_id>.conf`.
pub fn read_prediction(dir: &Path, sample_id: &str) -> Result<SegMap> {
    let (seg_path, conf_path) = prediction_paths(dir, sample_id);
    let map = SegMap::parse(&read_to_string(&seg_path)?, &seg_path.display().to_string())?;
    if !conf_path.exists() {
        return Ok(map);
    }
    let conf_name = conf_path.display().to_string();
    let (h, w, conf) = SegMap::parse_confidence(&read_to_string(&conf_path)?, &conf_name)?;
    if (h, w) != (map.height(), map.width()) {
        return Err(Error::parse(
            &conf_name,
            1,
            format!(
                "confidence grid is {h}x{w}, segmentation is {}x{}",
                map.height(),
                map.width()
            ),
        ));
    }
    map.with_confidence(conf)
}

pub fn write_prediction(dir: &Path, sample_id: &str, map: &SegMap) -> Result<()> {
    let (seg_path, conf_path) = prediction_paths(dir, sample_id);
    write_string(&seg_path, &map.to_text())?;
    if let Some(conf) = map.confidence_to_text() {
        write_string(&conf_path, &conf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SegOutcome {
    ExactSeg,
    IncompleteSeg,
    WrongSeg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PredOutcome {
    CorrectPred,
    WrongPred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FailureCase {
    pub seg: SegOutcome,
    pub pred: PredOutcome,
}

impl FailureCase {
    pub fn all() -> impl Iterator<Item = FailureCase> {
        [SegOutcome::ExactSeg, SegOutcome::IncompleteSeg, SegOutcome::WrongSeg]
            .into_iter()
            .flat_map(|seg| {
                [PredOutcome::CorrectPred, PredOutcome::WrongPred]
                    .into_iter()
                    .map(move |pred| FailureCase { seg, pred })
            })
    }
}

impl fmt::Display for FailureCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}", self.seg, self.pred)
    }
}

impl Serialize for FailureCase {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Compares predicted and ground-truth segmentations.
///
/// Attribute sets come from [`vectorize`] under `cfg`. When the prediction
/// carries boxes, instances are boxes on both sides; otherwise they are
/// 4-connected regions of each map. Equal sets with differing instance
/// counts are `IncompleteSeg`.
pub fn classify_failure(
    gt: &Sample,
    pred: &LatentPrediction,
    pred_label: usize,
    vocab: &AttributeVocabulary,
    cfg: &VectorizeConfig,
) -> Result<FailureCase> {
    let gt_set = vectorize(&gt.gt_segmap, vocab, cfg)?.ids();
    let pred_set = vectorize(&pred.segmap, vocab, cfg)?.ids();
    let seg = if gt_set != pred_set {
        SegOutcome::WrongSeg
    } else {
        let (gt_counts, pred_counts) = match &pred.boxes {
            Some(boxes) => (gt.box_counts(), count_boxes(boxes)),
            None => (gt.gt_segmap.region_counts(), pred.segmap.region_counts()),
        };
        let same = gt_set
            .iter()
            .all(|id| gt_counts.get(id) == pred_counts.get(id));
        if same {
            SegOutcome::ExactSeg
        } else {
            SegOutcome::IncompleteSeg
        }
    };
    let pred = if pred_label == gt.label {
        PredOutcome::CorrectPred
    } else {
        PredOutcome::WrongPred
    };
    Ok(FailureCase { seg, pred })
}

fn count_boxes(boxes: &[BBox]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for b in boxes {
        *counts.entry(b.attribute_id).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeVocabulary, ClassVocabulary, TripleDataset};

    fn fixture() -> TripleDataset {
        let attrs = AttributeVocabulary::new(["a1", "a2", "a3", "a4"]).unwrap();
        let classes = ClassVocabulary::new(["c0", "c1"]).unwrap();
        let mut six = (0..6).map(|i| BBox::new(1, 4 * i, 0, 3, 3)).collect::<Vec<_>>();
        six.push(BBox::new(2, 0, 10, 4, 4));
        TripleDataset::from_annotations(attrs, classes, 24, 24, vec![("s0".into(), 0, six)]).unwrap()
    }

    #[test]
    fn oracle_returns_ground_truth() {
        let ds = fixture();
        let s = &ds.samples[0];
        let p = predict_segmap(&PredictorConfig::Oracle, s, &ds.attr_vocab, &VectorizeConfig::default())
            .unwrap();
        assert_eq!(p.segmap, s.gt_segmap);
        let case = classify_failure(s, &p, 0, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        assert_eq!(case.to_string(), "ExactSeg/CorrectPred");
    }

    #[test]
    fn zero_noise_matches_oracle() {
        let ds = fixture();
        let s = &ds.samples[0];
        let cfg = PredictorConfig::Noisy(NoiseConfig { seed: 9, ..NoiseConfig::default() });
        let p = predict_segmap(&cfg, s, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        assert_eq!(p.segmap, s.gt_segmap);
        assert_eq!(p.boxes.as_deref(), Some(s.gt_boxes.as_slice()));
    }

    #[test]
    fn full_instance_drop_erases_attribute() {
        let ds = fixture();
        let s = &ds.samples[0];
        let cfg = PredictorConfig::Noisy(NoiseConfig {
            p_drop_instance: 1.0,
            ..NoiseConfig::default()
        });
        let p = predict_segmap(&cfg, s, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        // every one of the six attribute-1 boxes is gone
        assert!(p.segmap.labels().iter().all(|&id| id != 1));
        assert!(p.boxes.unwrap().is_empty());
    }

    #[test]
    fn keep_one_instance_preserves_attribute_set() {
        let ds = fixture();
        let s = &ds.samples[0];
        let cfg = PredictorConfig::Noisy(NoiseConfig {
            p_drop_instance: 1.0,
            keep_one_instance: true,
            ..NoiseConfig::default()
        });
        let vc = VectorizeConfig::default();
        let p = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap();
        assert_eq!(p.boxes.as_ref().unwrap().len(), 2);
        let case = classify_failure(s, &p, 0, &ds.attr_vocab, &vc).unwrap();
        assert_eq!(case.seg, SegOutcome::IncompleteSeg);
    }

    #[test]
    fn five_of_six_missing_is_incomplete() {
        let ds = fixture();
        let s = &ds.samples[0];
        let kept: Vec<BBox> = s.gt_boxes.iter().copied().skip(5).collect();
        let pred = LatentPrediction {
            segmap: rasterize_bboxes(&kept, 24, 24).unwrap(),
            boxes: Some(kept),
        };
        let case = classify_failure(s, &pred, 0, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        assert_eq!(case.to_string(), "IncompleteSeg/CorrectPred");
        // Same comparison through connected regions (file mode).
        let pred = LatentPrediction { boxes: None, ..pred };
        let case = classify_failure(s, &pred, 0, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        assert_eq!(case.seg, SegOutcome::IncompleteSeg);
    }

    #[test]
    fn spurious_injection_is_wrong_segmentation() {
        let ds = fixture();
        let s = &ds.samples[0];
        let cfg = PredictorConfig::Noisy(NoiseConfig {
            p_spurious: 1.0,
            seed: 4,
            ..NoiseConfig::default()
        });
        let vc = VectorizeConfig { tau: 0.5, min_pixels: 4 };
        let p = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap();
        let v = vectorize(&p.segmap, &ds.attr_vocab, &vc).unwrap();
        assert!(v.get(2) && v.get(3), "spurious regions must survive min_pixels");
        let case = classify_failure(s, &p, 1, &ds.attr_vocab, &vc).unwrap();
        assert_eq!(case.to_string(), "WrongSeg/WrongPred");
    }

    #[test]
    fn noisy_predictions_are_reproducible() {
        let ds = fixture();
        let s = &ds.samples[0];
        let cfg = PredictorConfig::Noisy(NoiseConfig {
            p_drop_instance: 0.5,
            p_drop_attribute: 0.3,
            p_spurious: 0.5,
            seed: 17,
            ..NoiseConfig::default()
        });
        let vc = VectorizeConfig::default();
        let a = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap();
        let b = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap();
        assert_eq!(a, b);
        assert_ne!(sample_seed(17, "s0"), sample_seed(17, "s1"));
    }

    #[test]
    fn file_mode_reads_written_predictions() {
        let ds = fixture();
        let s = &ds.samples[0];
        let dir = tempfile::tempdir().unwrap();
        let conf = vec![0.75; 24 * 24];
        let map = s.gt_segmap.clone().with_confidence(conf).unwrap();
        write_prediction(dir.path(), "s0", &map).unwrap();
        let cfg = PredictorConfig::File(dir.path().to_path_buf());
        cfg.validate().unwrap();
        let p = predict_segmap(&cfg, s, &ds.attr_vocab, &VectorizeConfig::default()).unwrap();
        assert_eq!(p.segmap, map);
        assert!(p.boxes.is_none());

        let mut other = s.clone();
        other.sample_id = "missing".into();
        let err = predict_segmap(&cfg, &other, &ds.attr_vocab, &VectorizeConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        std::fs::write(dir.path().join("bad.seg"), "2 2\n0 0\n0\n").unwrap();
        other.sample_id = "bad".into();
        let err = predict_segmap(&cfg, &other, &ds.attr_vocab, &VectorizeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn invalid_noise_rejected() {
        let bad = NoiseConfig {
            p_spurious: 1.5,
            ..NoiseConfig::default()
        };
        assert!(PredictorConfig::Noisy(bad).validate().is_err());
        assert!(PredictorConfig::File("/nonexistent/dir".into()).validate().is_err());
    }
}
