use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptdet_core::data::{load_split, save_split, Sample};
use ptdet_core::geometry::{polygon_iou, Point, Polygon, Rotation};
use ptdet_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use ptdet_core::tensor::Tensor;
use ptdet_core::train::{
    generate_scenes, hungarian_match, prepare_all, train, BaseSample, LabelMode, SceneParams, TrainConfig,
    TrainData, METRICS_FILE, METRICS_HEADER,
};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_deform_points: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 2,
        num_queries: 4,
        image_size: 32,
        stem_channels: [4, 8],
        ffn_dim: 16,
        ..ModelConfig::default()
    }
}

fn scenes(seed: u64, count: usize) -> Vec<Sample> {
    let params = SceneParams { inverse_prob: 0.3, ..SceneParams::default() };
    generate_scenes(seed, count, &params).unwrap().into_iter().map(|s| s.into_sample()).collect()
}

fn tiny_data(cfg: &TrainConfig) -> TrainData {
    let n = cfg.model.num_points;
    TrainData {
        train: scenes(1, 6).iter().map(|s| BaseSample::new(s, n)).collect::<Result<_, _>>().unwrap(),
        eval: prepare_all(&scenes(2, 3), cfg.model.image_size, n, cfg.label_mode).unwrap(),
        eval_split: "eval".into(),
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: tiny_model(),
        iterations: 4,
        lr_decay_step: 3,
        batch_size: 2,
        eval_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn split_survives_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let original = scenes(7, 4);
    save_split(dir.path(), &original).unwrap();
    let loaded = load_split(dir.path()).unwrap();
    assert_eq!(loaded.len(), original.len());
    for (a, b) in original.iter().zip(&loaded) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.annotations, b.annotations);
    }
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_model();
    let model = Model::new(cfg.clone(), 3).unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&path, &model, serde_json::json!({"note": "x"})).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.metadata["note"], "x");

    let batch = prepare_all(&scenes(4, 2), cfg.image_size, cfg.num_points, LabelMode::Positional).unwrap();
    let rows: Vec<f64> = batch.iter().flat_map(|p| p.image.iter().copied()).collect();
    let images = Tensor::new([batch.len(), cfg.image_size * cfg.image_size], rows).unwrap();
    assert_eq!(model.predict(&images).unwrap(), back.model.predict(&images).unwrap());
}

#[test]
fn training_is_reproducible_and_logs_metrics() {
    let cfg = tiny_config();
    let data = tiny_data(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let a = train(&cfg, &data, Some(dir.path())).unwrap();
    let b = train(&cfg, &data, None).unwrap();
    assert_eq!(a.train_losses, b.train_losses);
    assert!(a.train_losses.iter().all(|l| l.is_finite()));
    let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), a.curve.len());
}

#[test]
fn a_different_seed_changes_the_run() {
    let cfg = tiny_config();
    let data = tiny_data(&cfg);
    let a = train(&cfg, &data, None).unwrap();
    let b = train(&TrainConfig { seed: 9, ..cfg }, &data, None).unwrap();
    assert_ne!(a.train_losses, b.train_losses);
}

fn quad() -> impl Strategy<Value = Polygon> {
    (0.0..50.0f64, 0.0..50.0f64, 2.0..30.0f64, 2.0..30.0f64, -0.4..0.4f64).prop_map(|(x, y, w, h, k)| {
        Polygon::from_xy(&[(x, y), (x + w, y + k * h), (x + w, y + h), (x + k * w, y + h)]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in quad(), b in quad()) {
        let ab = polygon_iou(&a, &b, 128).iou;
        let ba = polygon_iou(&b, &a, 128).iou;
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn rotation_inverts(angle in -180.0..180.0f64, x in 0.0..63.0f64, y in 0.0..63.0f64) {
        let r = Rotation::new(angle, 64, 64);
        let p = Point::new(x, y);
        let q = r.invert(r.apply(p));
        prop_assert!((q.x - p.x).abs() < 1e-9 && (q.y - p.y).abs() < 1e-9);
    }

    #[test]
    fn assignment_beats_random_permutations(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = hungarian_match(&cost, rows, cols).unwrap();
        prop_assert_eq!(m.pairs.len(), rows.min(cols));
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..rows.max(cols)).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let other: f64 = (0..rows.min(cols))
                .map(|i| if rows <= cols { cost[i * cols + perm[i]] } else { cost[perm[i] * cols + i] })
                .sum();
            prop_assert!(m.total_cost <= other + 1e-12);
        }
    }
}
