//! Acceptance gate. Each test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it. Training runs are shared between
//! criteria through lazily initialized caches.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptdet_core::geometry::{canonicalize_positional_label, centroid, polygon_iou, Point, Polygon};
use ptdet_core::model::{prior_points_sampling, AnchorBoxProposal, EfsaMode, QueryMode};
use ptdet_core::train::benchmark::{
    benchmark_config, eval_split, train_data, train_split, EVAL_SCENES, INVERSE_HEAVY, TRAIN_SCENES,
};
use ptdet_core::train::{evaluate, hungarian_match, prepare_all, train, LabelMode, MetricsRow, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const DATA_SEED: u64 = 0;
const NORMAL_INVERSE: f64 = 0.03;

/// Written straight to stderr so the line shows without `--nocapture`.
fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} {verdict}: {name}: {detail}");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ptdet"))
        .args(["gradcheck", "--seed", "0", "--seeds", "10", "--tolerance", "1e-4"])
        .env_remove("PTDET_SEED")
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().filter(|l| l.contains("PASS") || l.contains("FAIL")).collect();
    let failed: Vec<&str> = rows.iter().copied().filter(|l| l.contains("FAIL")).collect();
    let has_model = rows.iter().any(|l| l.starts_with("full_model"));
    let pass = out.status.success() && failed.is_empty() && has_model && secs < 120.0;
    report(
        1,
        "gradient suite",
        pass,
        &format!("{} cases over 10 seeds, {} failed, full model included: {has_model}, {secs:.1} s", rows.len(), failed.len()),
    );
    assert!(pass, "{text}\n{}", String::from_utf8_lossy(&out.stderr));
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_prior_points_sampling() {
    let b = AnchorBoxProposal { cx: 0.5, cy: 0.5, w: 0.4, h: 0.2, score: 1.0 };
    let got: Vec<(f64, f64)> = prior_points_sampling(&b, 4).unwrap().iter().map(|p| (p.x, p.y)).collect();
    let expected: [(f64, f64); 4] = [(0.3, 0.4), (0.7, 0.4), (0.7, 0.6), (0.3, 0.6)];
    let exact = got.iter().zip(&expected).all(|(g, e)| g.0.to_bits() == e.0.to_bits() && g.1.to_bits() == e.1.to_bits());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clockwise = 0;
    for _ in 0..1000 {
        let b = AnchorBoxProposal {
            cx: rng.gen_range(0.05..0.95),
            cy: rng.gen_range(0.05..0.95),
            w: rng.gen_range(0.01..0.6),
            h: rng.gen_range(0.01..0.6),
            score: 0.0,
        }
        .clipped();
        let n = 2 * rng.gen_range(2..=8);
        if Polygon::new(prior_points_sampling(&b, n).unwrap()).unwrap().is_clockwise().unwrap() {
            clockwise += 1;
        }
    }
    let pass = exact && clockwise == 1000;
    report(2, "prior points sampling", pass, &format!("example bit-exact: {exact}, clockwise {clockwise}/1000"));
    assert!(pass, "{got:?}");
}

// ---------------------------------------------------------------- 3

/// A ribbon outline: `half` points along a curved top side left to right,
/// then the bottom side right to left, turned by `angle` about its center.
fn ribbon(rng: &mut ChaCha8Rng, half: usize, angle: f64) -> Vec<Point> {
    let (cx, cy) = (rng.gen_range(30.0..70.0), rng.gen_range(30.0..70.0));
    let len = rng.gen_range(10.0..40.0);
    let width = rng.gen_range(2.0..(len / 2.0));
    let bend = rng.gen_range(-0.3..0.3) * len;
    let (s, c) = angle.to_radians().sin_cos();
    let at = |t: f64, off: f64| {
        let x = (t - 0.5) * len;
        let y = bend * (1.0 - 4.0 * (t - 0.5) * (t - 0.5)) + off;
        Point::new(cx + c * x - s * y, cy + s * x + c * y)
    };
    let ts: Vec<f64> = (0..half).map(|i| i as f64 / (half - 1) as f64).collect();
    let mut pts: Vec<Point> = ts.iter().map(|&t| at(t, -width / 2.0)).collect();
    pts.extend(ts.iter().rev().map(|&t| at(t, width / 2.0)));
    pts
}

#[test]
fn criterion_3_canonicalizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut idempotent, mut clockwise) = (0, 0);
    for _ in 0..10_000 {
        let half = rng.gen_range(2..=8);
        let angle = rng.gen_range(-180.0..180.0);
        let mut pts = ribbon(&mut rng, half, angle);
        if rng.gen_bool(0.5) {
            pts.reverse();
        }
        if rng.gen_bool(0.5) {
            pts.rotate_left(half);
        }
        let p = Polygon::new(pts).unwrap();
        let once = canonicalize_positional_label(&p).unwrap();
        let twice = canonicalize_positional_label(&once).unwrap();
        idempotent += usize::from(once == twice);
        clockwise += usize::from(once.is_clockwise().unwrap());
    }

    // reading-order rectangles (start top-left, clockwise) turned by a half turn
    let mut upper = 0;
    let family = 1000;
    for i in 0..family {
        let (w, h) = (rng.gen_range(4.0..60.0), rng.gen_range(2.0..20.0));
        let (x, y) = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
        let half = 2 + i % 7;
        let top: Vec<Point> = (0..half).map(|k| Point::new(x + w * k as f64 / (half - 1) as f64, y)).collect();
        let mut pts = top.clone();
        pts.extend(top.iter().rev().map(|p| Point::new(p.x, y + h)));
        let (cx, cy) = (x + w / 2.0, y + h / 2.0);
        let inverted = Polygon::new(pts.iter().map(|p| Point::new(2.0 * cx - p.x, 2.0 * cy - p.y)).collect()).unwrap();
        let c = canonicalize_positional_label(&inverted).unwrap();
        let (a, b) = (centroid(c.first_side()), centroid(c.second_side()));
        if a.y < b.y && c.is_clockwise().unwrap() {
            upper += 1;
        }
    }
    let pass = idempotent == 10_000 && clockwise == 10_000 && upper == family;
    report(
        3,
        "canonicalizer",
        pass,
        &format!("idempotent {idempotent}/10000, clockwise {clockwise}/10000, inverted start on upper side {upper}/{family}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
    // assign each column (ground truth) a distinct row, or leave columns
    // unmatched only when there are fewer rows than columns
    fn go(cost: &[f64], rows: usize, cols: usize, col: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
        if col == cols {
            *best = best.min(acc);
            return;
        }
        let remaining_cols = cols - col;
        // a column may be skipped only if rows cannot cover every column
        if remaining_cols > left {
            go(cost, rows, cols, col + 1, used, left, acc, best);
        }
        for r in 0..rows {
            if !used[r] {
                used[r] = true;
                go(cost, rows, cols, col + 1, used, left - 1, acc + cost[r * cols + col], best);
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, rows, cols, 0, &mut vec![false; rows], rows, 0.0, &mut best);
    best
}

#[test]
fn criterion_4_hungarian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    for trial in 0..200 {
        let cols = 1 + trial % 6;
        let rows = rng.gen_range(1..=8);
        let cost: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect();
        let m = hungarian_match(&cost, rows, cols).unwrap();
        let mut pairs = m.pairs.clone();
        pairs.sort_by_key(|p| p.1);
        let mut total = 0.0;
        for (r, c) in &pairs {
            total += cost[r * cols + c];
        }
        let expected = brute_force(&cost, rows, cols);
        let matched = pairs.len() == rows.min(cols);
        if matched && total == expected {
            agree += 1;
        }
    }
    let pass = agree == 200;
    report(4, "hungarian oracle", pass, &format!("{agree}/200 matrices equal the exhaustive minimum exactly"));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_polygon_iou() {
    let rect = |x: f64, y: f64, w: f64, h: f64| Polygon::from_xy(&[(x, y), (x + w, y), (x + w, y + h), (x, y + h)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (w1, h1, w2, h2): (f64, f64, f64, f64) = (rng.gen_range(1.0..20.0), rng.gen_range(1.0..20.0), rng.gen_range(1.0..20.0), rng.gen_range(1.0..20.0));
        let (x2, y2) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let ix = (w1.min(x2 + w2) - 0.0f64.max(x2)).max(0.0);
        let iy = (h1.min(y2 + h2) - 0.0f64.max(y2)).max(0.0);
        let inter = ix * iy;
        let analytic = inter / (w1 * h1 + w2 * h2 - inter);
        let got = polygon_iou(&rect(0.0, 0.0, w1, h1), &rect(x2, y2, w2, h2), 512).iou;
        worst = worst.max((got - analytic).abs());
    }
    let a = Polygon::from_xy(&[(1.0, 1.0), (9.0, 2.0), (10.0, 7.0), (5.0, 9.0), (2.0, 8.5), (0.5, 6.0)]).unwrap();
    let identical = polygon_iou(&a, &a, 512).iou;
    let disjoint = polygon_iou(&rect(0.0, 0.0, 3.0, 3.0), &rect(5.0, 0.0, 3.0, 3.0), 512).iou;
    let touching = polygon_iou(&rect(0.0, 0.0, 3.0, 3.0), &rect(3.0, 0.0, 3.0, 3.0), 512).iou;
    let pass = worst <= 0.01 && identical == 1.0 && disjoint == 0.0 && touching == 0.0;
    report(
        5,
        "polygon IoU",
        pass,
        &format!("max error {worst:.5} over 500 rectangle pairs, identical {identical}, disjoint {disjoint}, touching {touching}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- shared runs

#[derive(Debug, Clone)]
struct Run {
    curve: Vec<MetricsRow>,
    secs: f64,
    /// Final-model F on extra splits, in the order requested.
    extra_f: Vec<f64>,
}

impl Run {
    fn final_f(&self) -> f64 {
        self.curve.last().unwrap().f_measure
    }
}

fn variant(q: QueryMode, e: EfsaMode) -> TrainConfig {
    let mut cfg = benchmark_config();
    cfg.model.query_mode = q;
    cfg.model.efsa_mode = e;
    cfg
}

fn run(cfg: &TrainConfig, train_s: &[ptdet_core::data::Sample], eval_s: &[ptdet_core::data::Sample], extra: &[&[ptdet_core::data::Sample]]) -> Run {
    let start = Instant::now();
    let data = train_data(cfg, train_s, eval_s, "eval").unwrap();
    let outcome = train(cfg, &data, None).unwrap();
    let extra_f = extra
        .iter()
        .map(|split| {
            let prepared = prepare_all(split, cfg.model.image_size, cfg.model.num_points, cfg.label_mode).unwrap();
            evaluate(&outcome.model, &prepared, &cfg.loss, &cfg.eval).unwrap().score.f_measure
        })
        .collect();
    Run { curve: outcome.curve, secs: start.elapsed().as_secs_f64(), extra_f }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seed-mean F at each evaluated iteration.
fn mean_curve(runs: &[Run]) -> Vec<(usize, f64)> {
    (0..runs[0].curve.len())
        .map(|i| (runs[0].curve[i].iteration, mean(runs.iter().map(|r| r.curve[i].f_measure))))
        .collect()
}

fn curve_text(c: &[(usize, f64)]) -> String {
    c.iter().map(|(i, f)| format!("{i}:{f:.3}")).collect::<Vec<_>>().join(" ")
}

struct Benchmark {
    box_fsa: Vec<Run>,
    point_fsa: Vec<Run>,
    point_efsa: Vec<Run>,
}

fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let tr = train_split(DATA_SEED, TRAIN_SCENES, NORMAL_INVERSE).unwrap();
        let ev = eval_split(DATA_SEED, EVAL_SCENES, NORMAL_INVERSE).unwrap();
        let runs = |q, e| -> Vec<Run> {
            SEEDS.iter().map(|&seed| run(&TrainConfig { seed, ..variant(q, e) }, &tr, &ev, &[])).collect()
        };
        Benchmark {
            box_fsa: runs(QueryMode::BoxBaseline, EfsaMode::Fsa),
            point_fsa: runs(QueryMode::ExplicitPoint, EfsaMode::Fsa),
            point_efsa: runs(QueryMode::ExplicitPoint, EfsaMode::Efsa),
        }
    })
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_convergence_ordering() {
    let b = benchmark();
    let base_iters = benchmark_config().iterations;
    let baseline = mean_curve(&b.box_fsa);
    let point = mean_curve(&b.point_fsa);
    let full = mean_curve(&b.point_efsa);
    let target = baseline.last().unwrap().1;
    let reached = point.iter().find(|(_, f)| *f >= target).map(|(i, _)| *i);
    let fast = reached.is_some_and(|i| 2 * i <= base_iters);
    let (fb, fp, ff) = (target, point.last().unwrap().1, full.last().unwrap().1);
    let ordered = ff >= fp && fp >= fb;
    let config_secs: Vec<f64> = [&b.box_fsa, &b.point_fsa, &b.point_efsa].iter().map(|r| r.iter().map(|x| x.secs).sum()).collect();
    let in_time = config_secs.iter().all(|&s| s <= 3600.0);
    let pass = fast && ordered && in_time;
    report(
        6,
        "convergence ordering",
        pass,
        &format!(
            "baseline final F {fb:.4} reached by explicit points at iteration {} of {base_iters}; final F point+efsa {ff:.4}, point {fp:.4}, box {fb:.4}; seconds per config {:?}",
            reached.map_or("never".to_string(), |i| i.to_string()),
            config_secs.iter().map(|s| s.round()).collect::<Vec<_>>()
        ),
    );
    let _ = writeln!(std::io::stderr(), "  box        {}", curve_text(&baseline));
    let _ = writeln!(std::io::stderr(), "  point      {}", curve_text(&point));
    let _ = writeln!(std::io::stderr(), "  point+efsa {}", curve_text(&full));
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_label_form_robustness() {
    let tr = train_split(DATA_SEED, TRAIN_SCENES, INVERSE_HEAVY).unwrap();
    let inverse = eval_split(DATA_SEED, EVAL_SCENES, INVERSE_HEAVY).unwrap();
    let normal = eval_split(DATA_SEED, EVAL_SCENES, NORMAL_INVERSE).unwrap();
    let runs = |label: LabelMode| -> Vec<Run> {
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, label_mode: label, rotation_augment: false, ..benchmark_config() };
                run(&cfg, &tr, &inverse, &[&normal])
            })
            .collect()
    };
    let original = runs(LabelMode::Original);
    let positional = runs(LabelMode::Positional);
    let inv = |r: &[Run]| mean(r.iter().map(|x| x.final_f()));
    let norm = |r: &[Run]| mean(r.iter().map(|x| x.extra_f[0]));
    let gain = inv(&positional) - inv(&original);
    let normal_change = norm(&positional) - norm(&original);
    let pass = gain >= 0.02 && normal_change >= -0.01;
    report(
        7,
        "label-form robustness",
        pass,
        &format!(
            "inverse-heavy F positional {:.4} vs original {:.4} (gain {:+.2} points); normal F {:.4} vs {:.4} ({:+.2} points)",
            inv(&positional),
            inv(&original),
            100.0 * gain,
            norm(&positional),
            norm(&original),
            100.0 * normal_change
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_data_efficiency_ordering() {
    let b = benchmark();
    let full_gap = mean(b.point_fsa.iter().map(Run::final_f)) - mean(b.box_fsa.iter().map(Run::final_f));

    let base = benchmark_config();
    let quarter = TRAIN_SCENES / 4;
    let iterations = base.iterations / 4;
    let tr = train_split(DATA_SEED, TRAIN_SCENES, NORMAL_INVERSE).unwrap();
    let ev = eval_split(DATA_SEED, EVAL_SCENES, NORMAL_INVERSE).unwrap();
    let small = &tr[..quarter];
    let runs = |q, e| -> Vec<Run> {
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    seed,
                    iterations,
                    lr_decay_step: base.lr_decay_step / 4,
                    eval_every: base.eval_every / 4,
                    ..variant(q, e)
                };
                run(&cfg, small, &ev, &[])
            })
            .collect()
    };
    let point = runs(QueryMode::ExplicitPoint, EfsaMode::Fsa);
    let boxed = runs(QueryMode::BoxBaseline, EfsaMode::Fsa);
    let (fp, fb) = (mean(point.iter().map(Run::final_f)), mean(boxed.iter().map(Run::final_f)));
    let small_gap = fp - fb;
    let pass = small_gap > full_gap;
    report(
        8,
        "data-efficiency ordering",
        pass,
        &format!(
            "F(point) - F(box) at 25% data ({quarter} scenes, {iterations} iterations): {:+.2} points ({fp:.4} vs {fb:.4}); at 100%: {:+.2} points",
            100.0 * small_gap,
            100.0 * full_gap
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn ptdet(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_ptdet")).args(args).env_remove("PTDET_SEED").output().expect("binary runs");
    assert!(
        out.status.success(),
        "ptdet {args:?} failed\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(path: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    if path.is_file() {
        return vec![(PathBuf::new(), fs::read(path).unwrap())];
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(path).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const DETERMINISM_CONFIG: &str = r#"{
  "model": {
    "d_model": 16, "n_heads": 2, "n_deform_points": 2, "n_encoder_layers": 1,
    "n_decoder_layers": 2, "num_queries": 4, "num_points": 8, "efsa_conv_layers": 1,
    "efsa_neighborhood": 4, "query_mode": "explicit_point", "efsa_mode": "efsa",
    "image_size": 32, "stem_channels": [4, 8], "ffn_dim": 16, "anchor_size": 0.25
  },
  "iterations": 6, "lr_decay_step": 4, "batch_size": 2, "eval_every": 3, "seed": 5
}"#;

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let at = |name: &str| dir.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    fs::write(at("cfg.json"), DETERMINISM_CONFIG).unwrap();
    let (train_d, eval_d, rot_d) = (s(&at("train")), s(&at("eval")), s(&at("rot")));
    let cfg = s(&at("cfg.json"));
    let ckpt = s(&at("run/final.json"));
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("train", vec!["gen-data".into(), "--scenes".into(), "8".into(), "--seed".into(), "1".into(), "--inverse-prob".into(), "0.4".into(), "--rotation".into(), "train-set".into()]),
        ("eval", vec!["gen-data".into(), "--scenes".into(), "4".into(), "--seed".into(), "2".into()]),
        ("rot", vec!["gen-data".into(), "--scenes".into(), "2".into(), "--rotation".into(), "rot-test-set".into()]),
        ("canon.json", vec!["canonicalize".into(), "--in".into(), s(&at("train/annotations.json"))]),
        ("run", vec!["train".into(), "--config".into(), cfg.clone(), "--train-data".into(), train_d.clone(), "--eval-data".into(), eval_d.clone()]),
        ("eval.json", vec!["eval".into(), "--checkpoint".into(), ckpt, "--data".into(), eval_d.clone()]),
        ("grad.json", vec!["gradcheck".into(), "--ops".into(), "matmul,softmax,full_model".into(), "--seeds".into(), "2".into()]),
        (
            "ablation",
            vec![
                "ablate".into(), "--config".into(), cfg, "--train-data".into(), train_d, "--normal-data".into(), eval_d.clone(),
                "--rotated-data".into(), rot_d, "--inverse-data".into(), eval_d, "--seeds".into(), "0".into(),
                "--only".into(), "point-efsa-pos-rot,box-fsa-orig-rot".into(),
            ],
        ),
    ];
    let mut identical = Vec::new();
    for (name, args) in &commands {
        let first = at(name);
        let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = s(&first);
        a.extend(["--out", &out]);
        ptdet(&a);
        let copy = at(&format!("{name}.again"));
        let manifest = s(&at(&format!("{name}.manifest.json")));
        let copy_s = s(&copy);
        ptdet(&["replay", "--manifest", &manifest, "--out", &copy_s]);
        let ctx = format!("{name}.rerun");
        let rerun = s(&at(&ctx));
        let mut b: Vec<&str> = args.iter().map(String::as_str).collect();
        b.extend(["--out", &rerun]);
        ptdet(&b);
        let same = snapshot(&first) == snapshot(&copy) && snapshot(&first) == snapshot(&at(&ctx));
        identical.push((args[0].clone(), same));
    }
    let pass = identical.iter().all(|(_, s)| *s);
    let detail: Vec<String> = identical.iter().map(|(c, s)| format!("{c} {}", if *s { "identical" } else { "DIFFERS" })).collect();
    report(9, "determinism", pass, &detail.join(", "));
    assert!(pass);
}
