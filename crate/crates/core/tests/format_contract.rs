//! The prediction-directory contract shared with external segmentation
//! exporters: `<dir>/<sample_id>.seg` holds the label grid and an optional
//! `<dir>/<sample_id>.conf` holds per-pixel confidences in `[0, 1]`.

use std::fs;

use greybox::classifier::{train_logreg, TrainConfig};
use greybox::dataset::{synth_generate, SegMap, SynthConfig, VectorizeConfig};
use greybox::kb::KnowledgeBase;
use greybox::lsp::{
    predict_segmap, prediction_paths, read_prediction, write_prediction, NoiseConfig,
    PredictorConfig,
};
use greybox::pipeline::evaluate;
use greybox::Error;

fn dataset() -> greybox::dataset::TripleDataset {
    let cfg = SynthConfig {
        p_omit: 0.2,
        height: 20,
        width: 24,
        max_instances: 2,
    };
    synth_generate(&KnowledgeBase::monumai(), 6, &cfg, 3).unwrap()
}

#[test]
fn layout_is_keyed_by_sample_id() {
    let (seg, conf) = prediction_paths("preds".as_ref(), "s000042");
    assert_eq!(seg, std::path::Path::new("preds/s000042.seg"));
    assert_eq!(conf, std::path::Path::new("preds/s000042.conf"));
}

#[test]
fn grid_text_layout() {
    let map = SegMap::new(2, 3, vec![0, 1, 2, 3, 0, 15], Some(vec![0.0, 0.5, 1.0, 0.25, 0.125, 0.75]))
        .unwrap();
    assert_eq!(map.to_text(), "2 3\n0 1 2\n3 0 15\n");
    assert_eq!(map.confidence_to_text().unwrap(), "2 3\n0 0.5 1\n0.25 0.125 0.75\n");
}

#[test]
fn exported_predictions_parse_back_element_wise() {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let noisy = PredictorConfig::Noisy(NoiseConfig {
        p_drop_instance: 0.3,
        p_spurious: 0.2,
        seed: 4,
        ..NoiseConfig::default()
    });
    let vc = VectorizeConfig::default();
    for (i, s) in ds.samples.iter().enumerate() {
        let mut map = predict_segmap(&noisy, s, &ds.attr_vocab, &vc).unwrap().segmap;
        if i % 2 == 0 {
            let conf = (0..map.labels().len()).map(|p| (p % 11) as f64 / 10.0).collect();
            map = map.with_confidence(conf).unwrap();
        }
        write_prediction(dir.path(), &s.sample_id, &map).unwrap();
        let back = read_prediction(dir.path(), &s.sample_id).unwrap();
        assert_eq!(back, map, "{}", s.sample_id);
        let (_, conf_path) = prediction_paths(dir.path(), &s.sample_id);
        assert_eq!(conf_path.exists(), i % 2 == 0);
    }
}

#[test]
fn file_predictor_reproduces_in_memory_evaluation() {
    let ds = dataset();
    let vc = VectorizeConfig::default();
    let xs = ds.vectors(&vc).unwrap();
    let (model, _) =
        train_logreg(&xs, &ds.labels(), &ds.attr_vocab, &ds.class_vocab, &TrainConfig::default()).unwrap();
    let noisy = PredictorConfig::Noisy(NoiseConfig {
        p_drop_attribute: 0.3,
        p_spurious: 0.3,
        seed: 8,
        ..NoiseConfig::default()
    });
    let dir = tempfile::tempdir().unwrap();
    for s in &ds.samples {
        let map = predict_segmap(&noisy, s, &ds.attr_vocab, &vc).unwrap().segmap;
        write_prediction(dir.path(), &s.sample_id, &map).unwrap();
    }
    let in_memory = evaluate(&ds, &noisy, &model, &vc).unwrap();
    let from_files = evaluate(&ds, &PredictorConfig::File(dir.path().into()), &model, &vc).unwrap();
    assert_eq!(from_files.accuracy, in_memory.accuracy);
    assert_eq!(from_files.confusion, in_memory.confusion);
    for (a, b) in from_files.per_sample.iter().zip(&in_memory.per_sample) {
        assert_eq!(a.explanation, b.explanation);
        assert_eq!(a.failure.seg, b.failure.seg);
    }
}

#[test]
fn confidence_mask_controls_presence() {
    let ds = dataset();
    let s = &ds.samples[0];
    let dir = tempfile::tempdir().unwrap();
    let n = s.gt_segmap.labels().len();
    let low = s.gt_segmap.clone().with_confidence(vec![0.4; n]).unwrap();
    write_prediction(dir.path(), &s.sample_id, &low).unwrap();
    let cfg = PredictorConfig::File(dir.path().into());
    let vc = VectorizeConfig::default();
    let pred = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap();
    let z = greybox::dataset::vectorize(&pred.segmap, &ds.attr_vocab, &vc).unwrap();
    assert_eq!(z.count_ones(), 0);
    let relaxed = VectorizeConfig { tau: 0.4, min_pixels: 1 };
    let z = greybox::dataset::vectorize(&pred.segmap, &ds.attr_vocab, &relaxed).unwrap();
    assert_eq!(z, greybox::dataset::vectorize(&s.gt_segmap, &ds.attr_vocab, &vc).unwrap());
}

#[test]
fn contract_violations_are_reported() {
    let ds = dataset();
    let s = &ds.samples[0];
    let dir = tempfile::tempdir().unwrap();
    let cfg = PredictorConfig::File(dir.path().into());
    let vc = VectorizeConfig::default();
    let (seg, conf) = prediction_paths(dir.path(), &s.sample_id);

    let missing = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap_err();
    assert_eq!(missing.exit_code(), 2);

    fs::write(&seg, "2 2\n0 1\n1 0\n").unwrap();
    let shape = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap_err();
    assert!(matches!(shape, Error::Validation(_)), "{shape}");

    fs::write(&seg, s.gt_segmap.to_text().replacen(" 0", " 99", 1)).unwrap();
    let vocab = predict_segmap(&cfg, s, &ds.attr_vocab, &vc).unwrap_err();
    assert!(vocab.to_string().contains("99"), "{vocab}");

    fs::write(&seg, "2 2\n0 1\n1 0\n").unwrap();
    fs::write(&conf, "2 2\n0.5 1.3\n0.5 0.5\n").unwrap();
    match read_prediction(dir.path(), &s.sample_id).unwrap_err() {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 2);
            assert!(message.contains("1.3"));
        }
        other => panic!("unexpected {other:?}"),
    }

    fs::write(&conf, "2 3\n0.5 0.5 0.5\n0.5 0.5 0.5\n").unwrap();
    assert!(matches!(
        read_prediction(dir.path(), &s.sample_id).unwrap_err(),
        Error::Parse { .. }
    ));

    fs::write(&seg, "2 2\n0 1\n").unwrap();
    assert_eq!(read_prediction(dir.path(), &s.sample_id).unwrap_err().exit_code(), 1);
}
