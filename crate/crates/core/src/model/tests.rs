use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::{full_model_gradcheck, layer_cases, FULL_MODEL_TOLERANCE};
use super::*;
use crate::tensor::gradcheck::{run_cases, DEFAULT_STEP};
use crate::tensor::{MapShape, Mode, ParamStore, Session, Tensor};

fn images(seed: u64, batch: usize, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        [batch, size * size],
        (0..batch * size * size).map(|_| rng.gen::<f64>()).collect(),
    )
    .unwrap()
}

fn small(query_mode: QueryMode, efsa_mode: EfsaMode) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 4,
        num_queries: 5,
        num_points: 8,
        image_size: 32,
        stem_channels: [4, 8],
        ffn_dim: 32,
        query_mode,
        efsa_mode,
        ..ModelConfig::default()
    }
}

#[test]
fn output_contract_in_every_mode() {
    for qm in [QueryMode::BoxBaseline, QueryMode::ExplicitPoint] {
        for em in [EfsaMode::Fsa, EfsaMode::Efsa] {
            let cfg = small(qm, em);
            let model = Model::new(cfg.clone(), 1).unwrap();
            let mut s = Session::new(&model.params, Mode::Train);
            let out = model.forward(&mut s, &images(2, 3, 32)).unwrap();
            assert_eq!(out.layers.len(), cfg.n_decoder_layers);
            for l in &out.layers {
                assert_eq!(s.tape.shape(l.logits), &[15, 1]);
                assert_eq!(s.tape.shape(l.points), &[15, 16]);
                assert!(s.tape.value(l.points).data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert_eq!(out.encoder.proposals.len(), 3);
            for props in &out.encoder.proposals {
                assert_eq!(props.len(), cfg.num_queries);
                for b in props {
                    assert!(b.cx - b.w / 2.0 >= -1e-12 && b.cx + b.w / 2.0 <= 1.0 + 1e-12);
                    assert!(b.cy - b.h / 2.0 >= -1e-12 && b.cy + b.h / 2.0 <= 1.0 + 1e-12);
                    assert!(b.w > 0.0 && b.h > 0.0);
                }
            }
        }
    }
}

#[test]
fn too_many_queries_is_a_config_error() {
    let cfg = ModelConfig { num_queries: 17, ..small(QueryMode::ExplicitPoint, EfsaMode::Efsa) };
    assert!(Model::new(cfg, 0).is_err());
}

#[test]
fn first_layer_points_start_from_prior_sampling() {
    // zero-initialized point heads leave the priors unchanged in layer one
    let cfg = small(QueryMode::ExplicitPoint, EfsaMode::Efsa);
    let model = Model::new(cfg.clone(), 4).unwrap();
    let mut s = Session::new(&model.params, Mode::Eval);
    let out = model.forward(&mut s, &images(5, 1, 32)).unwrap();
    let pts = s.tape.value(out.layers[0].points).data().to_vec();
    for (k, b) in out.encoder.proposals[0].iter().enumerate() {
        let prior = prior_points_sampling(b, cfg.num_points).unwrap();
        for (n, p) in prior.iter().enumerate() {
            let i = (k * cfg.num_points + n) * 2;
            assert!((pts[i] - p.x).abs() < 1e-5 && (pts[i + 1] - p.y).abs() < 1e-5);
        }
    }
}

#[test]
fn box_baseline_points_are_offsets_from_fixed_centers() {
    let cfg = small(QueryMode::BoxBaseline, EfsaMode::Fsa);
    let model = Model::new(cfg.clone(), 4).unwrap();
    let mut s = Session::new(&model.params, Mode::Eval);
    let out = model.forward(&mut s, &images(5, 1, 32)).unwrap();
    for l in &out.layers {
        let pts = s.tape.value(l.points).data();
        for (k, b) in out.encoder.proposals[0].iter().enumerate() {
            for n in 0..cfg.num_points {
                let i = (k * cfg.num_points + n) * 2;
                assert!((pts[i] - b.cx).abs() < 1e-6 && (pts[i + 1] - b.cy).abs() < 1e-6);
            }
        }
    }
}

fn bound(store: &ParamStore) -> Session<'_> {
    Session::new(store, Mode::Eval)
}

#[test]
fn positional_encoding_is_per_point_and_deterministic() {
    let model = Model::new(small(QueryMode::ExplicitPoint, EfsaMode::Efsa), 2).unwrap();
    let mut s = bound(&model.params);
    let b = AnchorBoxProposal { cx: 0.5, cy: 0.4, w: 0.3, h: 0.1, score: 0.0 };
    let pts: Vec<f64> = prior_points_sampling(&b, 8).unwrap().iter().flat_map(|p| [p.x, p.y]).collect();
    let twice: Vec<f64> = pts.iter().chain(&pts).copied().collect();
    let x = s.tape.constant(Tensor::new([16, 2], twice).unwrap());
    let p = positional_query_encode(&mut s, x, 16).unwrap();
    let v = s.tape.value(p);
    assert_eq!(v.shape(), &[16, 16]);
    for n in 0..8 {
        assert_eq!(v.row(n), v.row(n + 8));
        for m in 0..n {
            assert_ne!(v.row(n), v.row(m), "points {m} and {n} share an encoding");
        }
    }
}

#[test]
fn box_encoding_is_shared_by_all_points_of_an_instance() {
    let model = Model::new(small(QueryMode::BoxBaseline, EfsaMode::Fsa), 2).unwrap();
    let mut s = bound(&model.params);
    let bx = s.tape.constant(Tensor::new([2, 4], vec![0.5, 0.4, 0.3, 0.1, 0.2, 0.7, 0.2, 0.2]).unwrap());
    let p = baseline_box_query_encode(&mut s, bx, 16, 8).unwrap();
    let v = s.tape.value(p);
    assert_eq!(v.shape(), &[16, 16]);
    for n in 1..8 {
        assert_eq!(v.row(0), v.row(n));
        assert_eq!(v.row(8), v.row(8 + n));
    }
    assert_ne!(v.row(0), v.row(8));
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new([rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run_efsa(model: &Model, tgt: &Tensor, pos: &Tensor, layout: QueryLayout) -> Tensor {
    let mut s = bound(&model.params);
    let t = s.tape.constant(tgt.clone());
    let p = s.tape.constant(pos.clone());
    let out = efsa(&mut s, &model.config, "dec0", t, p, layout).unwrap();
    s.tape.value(out).clone()
}

fn permute_instances(x: &Tensor, order: &[usize], n: usize) -> Tensor {
    let d = x.cols();
    let data = order
        .iter()
        .flat_map(|&k| (0..n).flat_map(move |p| x.row(k * n + p).to_vec()))
        .collect();
    Tensor::new([x.rows(), d], data).unwrap()
}

#[test]
fn efsa_preserves_shape_and_is_equivariant_over_instances() {
    for em in [EfsaMode::Fsa, EfsaMode::Efsa] {
        let model = Model::new(small(QueryMode::ExplicitPoint, em), 3).unwrap();
        let layout = QueryLayout { batch: 1, instances: 4, points: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tgt = random(&mut rng, 32, 16);
        let pos = random(&mut rng, 32, 16);
        let out = run_efsa(&model, &tgt, &pos, layout);
        assert_eq!(out.shape(), &[32, 16]);
        let order = [2, 0, 3, 1];
        let permuted = run_efsa(
            &model,
            &permute_instances(&tgt, &order, 8),
            &permute_instances(&pos, &order, 8),
            layout,
        );
        let expected = permute_instances(&out, &order, 8);
        for (a, b) in permuted.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn circular_branch_rotates_with_the_points() {
    let model = Model::new(small(QueryMode::ExplicitPoint, EfsaMode::Efsa), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = random(&mut rng, 8, 16);
    let shift = 3;
    let rotated_rows: Vec<f64> = (0..8).flat_map(|i| q.row((i + shift) % 8).to_vec()).collect();
    let rotated = Tensor::new([8, 16], rotated_rows).unwrap();
    let branch = |x: &Tensor| {
        let mut s = Session::new(&model.params, Mode::Train);
        let v = s.tape.constant(x.clone());
        let out = efsa_local_branch(&mut s, &model.config, "dec0", v, 8).unwrap();
        s.tape.value(out).clone()
    };
    let a = branch(&q);
    let b = branch(&rotated);
    for i in 0..8 {
        for (x, y) in b.row(i).iter().zip(a.row((i + shift) % 8)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn collapsed_sampling_reads_projected_feature_at_reference() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    super::layers::init_deformable_for_tests(&mut store, &mut rng);
    let map = MapShape { batch: 1, height: 4, width: 4 };
    let feats = random(&mut rng, 16, 8);
    let mut s = Session::new(&store, Mode::Eval);
    let memory = s.tape.constant(feats.clone());
    let q = s.tape.constant(random(&mut rng, 1, 8));
    // reference exactly on the center of cell (row 2, col 1)
    let r = s.tape.constant(Tensor::new([1, 2], vec![1.5 / 4.0, 2.5 / 4.0]).unwrap());
    let v = s.linear("da.value", memory).unwrap();
    let out = deformable_attention(&mut s, "da", q, r, v, map, 2, 3).unwrap();
    let got = s.tape.value(out).data().to_vec();

    let mut s2 = Session::new(&store, Mode::Eval);
    let cell = s2.tape.constant(Tensor::new([1, 8], feats.row(2 * 4 + 1).to_vec()).unwrap());
    let v = s2.linear("da.value", cell).unwrap();
    let expected = s2.linear("da.out", v).unwrap();
    for (a, b) in got.iter().zip(s2.tape.value(expected).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layer_compositions_pass_gradient_checks() {
    let seeds: Vec<u64> = (0..10).collect();
    for r in run_cases(&layer_cases(), &seeds, DEFAULT_STEP, 1e-4) {
        assert!(r.passed, "{}: {:e} {:?}", r.name, r.max_rel_err, r.error);
    }
}

#[test]
fn full_tiny_model_passes_gradient_check() {
    for seed in 0..10 {
        let e = full_model_gradcheck(seed, DEFAULT_STEP).unwrap();
        assert!(e < FULL_MODEL_TOLERANCE, "seed {seed}: {e:e}");
    }
}

#[test]
fn forward_is_deterministic_and_batch_order_free() {
    let model = Model::new(small(QueryMode::ExplicitPoint, EfsaMode::Efsa), 8).unwrap();
    let a = images(1, 1, 32);
    let b = images(2, 1, 32);
    let ab = Tensor::new([2, 1024], a.data().iter().chain(b.data()).copied().collect()).unwrap();
    let ba = Tensor::new([2, 1024], b.data().iter().chain(a.data()).copied().collect()).unwrap();
    let p_ab = model.predict(&ab).unwrap();
    let p_ba = model.predict(&ba).unwrap();
    assert_eq!(p_ab[0], p_ba[1]);
    assert_eq!(p_ab[1], p_ba[0]);
    assert_eq!(model.predict(&ab).unwrap(), p_ab);
    assert_eq!(Model::new(model.config.clone(), 8).unwrap().params, model.params);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = Model::new(small(QueryMode::ExplicitPoint, EfsaMode::Efsa), 8).unwrap();
    model.params.insert_buffer("dec0.conv0.bn.running_mean", Tensor::full([16], 0.1 + 1e-17));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &model, serde_json::json!({"iteration": 7})).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.params, model.params);
    assert_eq!(back.model.config, model.config);
    assert_eq!(back.metadata["iteration"], 7);
}
