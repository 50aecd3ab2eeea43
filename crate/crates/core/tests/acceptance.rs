//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 1 4`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use widecorrect::geometry::{
    flow_to_seg, invert_flow_at_points, sample_flow, warp_image, FlowMap, Image, InvertOptions,
};
use widecorrect::gradcheck;
use widecorrect::io::flo::{decode_flo, encode_flo};
use widecorrect::io::png::{decode_image_png, decode_mask_png, encode_image_png, encode_mask_png};
use widecorrect::losses::{loss_supervised, loss_unsupervised, LossWeights};
use widecorrect::metrics::{evaluate_dataset, evaluate_flows, MetricReport, EVAL_INVERT};
use widecorrect::msunet::layers::{window_partition, window_reverse};
use widecorrect::msunet::{
    decode_checkpoint, encode_checkpoint, init_weights, read_checkpoint, write_checkpoint, Checkpoint, FeatureMap,
    ModelConfig, SegLogits,
};
use widecorrect::synth::dataset::{decode_annotations, decode_manifest, encode_annotations};
use widecorrect::synth::{generate_dataset, generate_with_scene, read_dataset, write_dataset, GenOptions, Sample};
use widecorrect::train::{run_training, AdamConfig, EpochRecord, TrainConfig, NUM_WORKERS_ENV};
use widecorrect::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk() -> GenOptions {
    GenOptions::new(64, 48)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------- criterion 1

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let results = gradcheck::run(None, 0).expect("gradcheck runs");
    let elapsed = t.elapsed();
    for r in &results {
        println!(
            "    {:<20} max rel error {:.3e} (tolerance {:.0e}, {} entries)",
            r.module, r.max_rel_error, r.tolerance, r.entries_checked
        );
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.module.clone()).collect();
    let covered = gradcheck::MODULES.iter().all(|m| results.iter().any(|r| r.module == *m));
    let in_time = elapsed < Duration::from_secs(300);
    outcome(
        failed.is_empty() && covered && in_time,
        format!(
            "{} modules, worst {:.2e}, {:.1}s{}",
            results.len(),
            results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn seg_oracle(v: f64, delta: f64) -> u8 {
    if v <= -delta {
        0
    } else if v >= delta {
        2
    } else {
        1
    }
}

fn naive_l1(a: &Array3<f64>, b: &Array3<f64>, m: &Array2<f64>) -> f64 {
    let (c, h, w) = a.dim();
    let mut s = 0.0;
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                s += (a[[k, i, j]] - b[[k, i, j]]).abs() * m[[i, j]];
            }
        }
    }
    s / (c * h * w) as f64
}

fn naive_sobel_l1(a: &Array3<f64>, b: &Array3<f64>, m: &Array2<f64>) -> f64 {
    const GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const GY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (c, h, w) = a.dim();
    let at = |k: usize, i: i64, j: i64| {
        let ii = i.clamp(0, h as i64 - 1) as usize;
        let jj = j.clamp(0, w as i64 - 1) as usize;
        a[[k, ii, jj]] - b[[k, ii, jj]]
    };
    let mut s = 0.0;
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for di in 0..3 {
                    for dj in 0..3 {
                        let v = at(k, i as i64 + di as i64 - 1, j as i64 + dj as i64 - 1);
                        gx += GX[di][dj] * v;
                        gy += GY[di][dj] * v;
                    }
                }
                s += (gx.abs() + gy.abs()) * m[[i, j]];
            }
        }
    }
    s / (c * h * w) as f64
}

fn naive_ce(logits: &Array4<f64>, flow: &Array3<f64>, delta: f64) -> f64 {
    let (g, _, h, w) = logits.dim();
    let mut s = 0.0;
    for k in 0..g {
        for i in 0..h {
            for j in 0..w {
                let z: Vec<f64> = (0..3).map(|c| logits[[k, c, i, j]]).collect();
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                s += lse - z[seg_oracle(flow[[k, i, j]], delta) as usize];
            }
        }
    }
    s / (g * h * w) as f64
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seg_mismatches = 0usize;
    for n in 0..1000 {
        let h = rng.random_range(1..12);
        let w = rng.random_range(1..12);
        let delta = if n % 2 == 0 { 5.0 } else { rng.random_range(0.5..10.0) };
        let data = Array3::from_shape_fn((2, h, w), |_| match rng.random_range(0..10) {
            0 => delta,
            1 => -delta,
            _ => rng.random_range(-20.0..20.0),
        });
        let seg = flow_to_seg(&FlowMap::new(data.clone()).unwrap(), delta).unwrap();
        seg_mismatches += seg
            .data()
            .indexed_iter()
            .filter(|&(idx, &c)| c != seg_oracle(data[idx], delta))
            .count();
    }

    let lw = LossWeights::default();
    let delta = 5.0;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(3..14), rng.random_range(3..14));
        let pred = Array3::from_shape_fn((2, h, w), |_| rng.random_range(-9.0..9.0));
        let gt = Array3::from_shape_fn((2, h, w), |_| rng.random_range(-9.0..9.0));
        let logits = Array4::from_shape_fn((2, 3, h, w), |_| rng.random_range(-3.0..3.0));
        let face = Array2::from_shape_fn((h, w), |_| rng.random_range(0..2u8));
        let m = face.mapv(|f| if f == 1 { 3.0 } else { 1.0 });
        let fp = FlowMap::new(pred.clone()).unwrap();
        let fg = FlowMap::new(gt.clone()).unwrap();
        let sl = SegLogits::new(logits.clone()).unwrap();

        let s = loss_supervised(&fp, &sl, &fg, face.view(), &lw, delta).unwrap();
        let expect = naive_l1(&pred, &gt, &m) + lw.lambda1 * naive_sobel_l1(&pred, &gt, &m) + lw.lambda2 * naive_ce(&logits, &gt, delta);
        worst = worst.max(rel(s.total, expect));
        worst = worst.max(rel(s.total, s.m1 + lw.lambda1 * s.ms + lw.lambda2 * s.ce));

        let logits2 = Array4::from_shape_fn((2, 3, h, w), |_| rng.random_range(-3.0..3.0));
        let sl2 = SegLogits::new(logits2.clone()).unwrap();
        let u = loss_unsupervised([&fp, &fg], [&sl, &sl2], &lw, delta).unwrap();
        let ones = Array2::ones((h, w));
        let expect = naive_l1(&pred, &gt, &ones)
            + lw.lambda1 * naive_sobel_l1(&pred, &gt, &ones)
            + naive_ce(&logits, &pred, delta)
            + naive_ce(&logits2, &gt, delta);
        worst = worst.max(rel(u.total, expect));
        worst = worst.max(rel(u.total, u.rc_m1 + lw.lambda1 * u.rc_ms + u.drc1 + u.drc2));
    }
    outcome(
        seg_mismatches == 0 && worst < 1e-10,
        format!("flow_to_seg mismatches {seg_mismatches} over 1000 maps; worst loss recomposition rel error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn chord_distance(points: &[(f64, f64)]) -> f64 {
    let (a, b) = (points[0], points[points.len() - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    points
        .iter()
        .map(|p| ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / len)
        .fold(0.0, f64::max)
}

fn geometry_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut window_ok = true;
    for &(batch, grid, win, shift) in &[
        (1, (4, 4), (2, 2), (0, 0)),
        (2, (8, 8), (4, 4), (2, 2)),
        (3, (16, 12), (4, 4), (2, 2)),
        (2, (8, 6), (4, 3), (2, 1)),
        (1, (6, 9), (3, 3), (1, 2)),
    ] {
        let data = Array2::from_shape_fn((batch * grid.0 * grid.1, 5), |_| rng.random_range(-1.0..1.0));
        let fm = FeatureMap::grid(data, batch, grid).unwrap();
        let back = window_reverse(&window_partition(&fm, win, shift).unwrap()).unwrap();
        window_ok &= back == fm;
    }

    let mut warp_ok = true;
    for _ in 0..10 {
        let img = Image::new(Array3::from_shape_fn((3, 17, 23), |_| rng.random_range(0.0..1.0))).unwrap();
        let out = warp_image(&img, &FlowMap::zeros(17, 23)).unwrap();
        warp_ok &= out.data().iter().zip(img.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut inv_err = 0.0f64;
    let mut inv_unconverged = 0;
    for _ in 0..20 {
        let (h, w) = (64, 48);
        let amp = rng.random_range(1.0..3.0);
        let (fx, fy, ph) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), rng.random_range(0.0..6.28));
        let flow = FlowMap::new(Array3::from_shape_fn((2, h, w), |(c, i, j)| {
            let (x, y) = (j as f64 / w as f64, i as f64 / h as f64);
            let t = std::f64::consts::TAU;
            if c == 0 {
                amp * (t * fx * x + ph).sin() * (t * 0.5 * y).cos()
            } else {
                amp * (t * fy * y + ph).cos() * (t * 0.5 * x).sin()
            }
        }))
        .unwrap();
        let ps: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.random_range(5.0..w as f64 - 6.0), rng.random_range(5.0..h as f64 - 6.0)))
            .collect();
        let qs: Vec<(f64, f64)> = ps
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = sample_flow(&flow, x, y);
                (x + dx, y + dy)
            })
            .collect();
        for (p, r) in ps.iter().zip(invert_flow_at_points(&flow, &qs, InvertOptions::default()).unwrap()) {
            inv_err = inv_err.max(((r.x - p.0).powi(2) + (r.y - p.1).powi(2)).sqrt());
            inv_unconverged += usize::from(!r.converged);
        }
    }

    let mut min_psnr = f64::INFINITY;
    let mut line_dev = 0.0f64;
    let mut landmark_err = 0.0f64;
    for i in 0..16 {
        let (scene, sample) = generate_with_scene(100, i, &desk()).unwrap();
        let gt = sample.flow_gt.as_ref().unwrap();
        let restored = warp_image(&sample.distorted, gt).unwrap();
        min_psnr = min_psnr.min(restored.psnr(&scene.render(), 4).unwrap());
        let anno = sample.annotations.as_ref().unwrap();
        for line in &anno.lines {
            let corrected: Vec<_> = invert_flow_at_points(gt, &line.distorted, EVAL_INVERT)
                .unwrap()
                .iter()
                .map(|p| (p.x, p.y))
                .collect();
            line_dev = line_dev.max(chord_distance(&corrected));
        }
        for face in &anno.faces {
            for (p, r) in invert_flow_at_points(gt, &face.distorted, EVAL_INVERT).unwrap().iter().zip(&face.reference) {
                landmark_err = landmark_err.max(((p.x - r.0).powi(2) + (p.y - r.1).powi(2)).sqrt());
            }
        }
    }

    let pass = window_ok
        && warp_ok
        && inv_err < 0.05
        && inv_unconverged == 0
        && min_psnr > 35.0
        && line_dev < 0.1
        && landmark_err < 0.1;
    outcome(
        pass,
        format!(
            "window identity {window_ok}, zero-flow warp bitwise {warp_ok}, inversion max err {inv_err:.2e} px \
             ({inv_unconverged} unconverged), min PSNR {min_psnr:.1} dB, line deviation {line_dev:.2e} px, \
             landmark error {landmark_err:.2e} px"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn metric_sanity() -> Outcome {
    let samples = generate_dataset(20, 1.0, 400, &desk()).unwrap();
    let gt: Vec<FlowMap> = samples.iter().map(|s| s.flow_gt.clone().unwrap()).collect();
    let zero: Vec<FlowMap> = samples.iter().map(|_| FlowMap::zeros(64, 48)).collect();
    let perfect = evaluate_flows(&samples, &gt).unwrap();
    let none = evaluate_flows(&samples, &zero).unwrap();
    let (pl, ps) = (perfect.lineacc.unwrap(), perfect.shapeacc.unwrap());
    let (zl, zs) = (none.lineacc.unwrap(), none.shapeacc.unwrap());
    let pass = (pl - 100.0).abs() <= 1e-4 && (ps - 100.0).abs() <= 1e-4 && perfect.epe == Some(0.0) && zl < pl && zs < ps;
    outcome(
        pass,
        format!("GT flow LineAcc {pl:.6} ShapeAcc {ps:.6} EPE {:?}; zero flow LineAcc {zl:.4} ShapeAcc {zs:.4}", perfect.epe),
    )
}

// ---------------------------------------------------------------- criterion 5

fn training_descent() -> Outcome {
    let labeled = generate_dataset(200, 1.0, 500, &desk()).unwrap();
    let config = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let outcome_ = run_training(&labeled, &[], &config, |r, _| {
        if r.epoch % 20 == 0 {
            println!("    epoch {:>3}: val EPE {:.4} ({:.0}s)", r.epoch, r.epe.unwrap_or(f64::NAN), t.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .unwrap();
    let elapsed = t.elapsed();
    let first = outcome_.log.first().unwrap().epe.unwrap();
    let last = outcome_.log.last().unwrap().epe.unwrap();
    let drop = 1.0 - last / first;
    outcome(
        drop >= 0.40 && elapsed <= Duration::from_secs(30 * 60),
        format!(
            "{}+{} epochs, val EPE {first:.4} -> {last:.4} ({:.1}% drop), {:.1} min",
            config.pretrain_epochs,
            config.main_epochs,
            100.0 * drop,
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

// Compressed schedule: the default 20+100 epochs at lr 1e-4 take about three hours for
// the ten runs on one core; 10+30 epochs at lr 1e-3 reach the same EPE floor.
const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TREND_PRETRAIN: usize = 10;
const TREND_MAIN: usize = 30;
const TREND_LR: f64 = 1e-3;

fn final_record(log: &[EpochRecord]) -> (f64, f64) {
    let r = log.last().unwrap();
    (r.epe.unwrap(), r.lineacc.unwrap())
}

fn semi_supervised_trend() -> Outcome {
    let mut wins = 0;
    for &seed in &TREND_SEEDS {
        let data = generate_dataset(400, 0.5, 600 + seed, &desk()).unwrap();
        let (labeled, rest) = data.split_at(200);
        let unlabeled: Vec<Sample> = rest.iter().cloned().map(Sample::into_unlabeled).collect();
        let base = TrainConfig {
            seed,
            pretrain_epochs: TREND_PRETRAIN,
            main_epochs: TREND_MAIN,
            optimizer: AdamConfig {
                lr: TREND_LR,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let full = run_training(labeled, &unlabeled, &base, |_, _| Ok(())).unwrap();
        let sup_cfg = TrainConfig {
            supervised_only: true,
            ..base.clone()
        };
        let sup = run_training(labeled, &unlabeled, &sup_cfg, |_, _| Ok(())).unwrap();
        let (fe, fl) = final_record(&full.log);
        let (se, sl) = final_record(&sup.log);
        let win = fe < se && fl >= sl;
        wins += usize::from(win);
        println!(
            "    seed {seed}: DRC+RC EPE {fe:.4} LineAcc {fl:.3} | supervised-only EPE {se:.4} LineAcc {sl:.3} | {} ({:.0}s)",
            if win { "semi better" } else { "semi not better" },
            t.elapsed().as_secs_f64()
        );
    }

    // Each ablation switch must run end to end and produce a training log.
    let data = generate_dataset(24, 0.5, 650, &desk()).unwrap();
    let (labeled, rest) = data.split_at(12);
    let unlabeled: Vec<Sample> = rest.iter().cloned().map(Sample::into_unlabeled).collect();
    let mut ablations_ok = true;
    for (name, rc, drc) in [("no-drc", true, false), ("no-rc", false, true)] {
        let cfg = TrainConfig {
            pretrain_epochs: 1,
            main_epochs: 1,
            use_rc: rc,
            use_drc: drc,
            val_fraction: 0.25,
            ..TrainConfig::default()
        };
        let out = run_training(labeled, &unlabeled, &cfg, |_, _| Ok(())).unwrap();
        let ok = out.log.len() == 3 && out.log[2].loss_u.is_some_and(|v| v.is_finite());
        println!("    ablation {name}: {} log records, final loss_u {:?}", out.log.len(), out.log[2].loss_u);
        ablations_ok &= ok;
    }

    outcome(
        wins >= 4 && ablations_ok,
        format!(
            "semi-supervised better in {wins}/{} seeds ({}+{} epochs, lr {TREND_LR:e}), ablations runnable {ablations_ok}",
            TREND_SEEDS.len(),
            TREND_PRETRAIN,
            TREND_MAIN
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn determinism_run(labeled: &[Sample], unlabeled: &[Sample], config: &TrainConfig) -> (String, MetricReport, Vec<EpochRecord>) {
    let out = run_training(labeled, unlabeled, config, |_, _| Ok(())).unwrap();
    let val: Vec<Sample> = labeled.iter().filter(|s| out.val_ids.contains(&s.id)).cloned().collect();
    let report = evaluate_dataset(&val, &out.state.weights, &config.model).unwrap();
    let ckpt = Checkpoint::new(config.model.clone(), out.state.weights).unwrap();
    (ckpt.checksum(), report, out.log)
}

fn determinism() -> Outcome {
    let data = generate_dataset(40, 0.6, 700, &desk()).unwrap();
    let (labeled, rest) = data.split_at(24);
    let unlabeled: Vec<Sample> = rest.iter().cloned().map(Sample::into_unlabeled).collect();
    let config = TrainConfig {
        seed: 7,
        pretrain_epochs: 1,
        main_epochs: 2,
        val_fraction: 0.25,
        ..TrainConfig::default()
    };
    std::env::remove_var(NUM_WORKERS_ENV);
    let a = determinism_run(labeled, &unlabeled, &config);
    let b = determinism_run(labeled, &unlabeled, &config);
    std::env::set_var(NUM_WORKERS_ENV, "3");
    let c = determinism_run(labeled, &unlabeled, &config);
    std::env::remove_var(NUM_WORKERS_ENV);
    let same = a == b;
    let same_workers = a == c;
    outcome(
        same && same_workers,
        format!(
            "checksum {}..., two runs identical {same}, identical with 3 augmentation workers {same_workers}",
            &a.0[..16]
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

/// Decodes every truncation point and `mutations` random byte corruptions of `bytes`;
/// returns the number of panics.
fn hammer<T, E>(bytes: &[u8], mutations: usize, seed: u64, decode: impl Fn(&[u8]) -> Result<T, E>) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = (bytes.len() / 64).max(1);
    let mut inputs: Vec<Vec<u8>> = (0..bytes.len()).step_by(step).map(|n| bytes[..n].to_vec()).collect();
    for _ in 0..mutations {
        let mut b = bytes.to_vec();
        for _ in 0..rng.random_range(1..8) {
            let i = rng.random_range(0..b.len());
            b[i] = rng.random();
        }
        inputs.push(b);
    }
    inputs
        .iter()
        .filter(|b| catch_unwind(AssertUnwindSafe(|| decode(b).is_ok())).is_err())
        .count()
}

fn expect_err(result: widecorrect::Result<impl Sized>, check: impl Fn(&Error) -> bool, what: &str, failures: &mut Vec<String>) {
    match result {
        Err(e) if check(&e) => {}
        Err(e) => failures.push(format!("{what}: wrong error {e}")),
        Ok(_) => failures.push(format!("{what}: accepted")),
    }
}

fn mentions(e: &Error, path: &Path) -> bool {
    e.to_string().contains(path.to_str().unwrap())
}

fn format_fidelity() -> Outcome {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();

    let samples = generate_dataset(6, 0.5, 800, &desk()).unwrap();
    let ds = dir.path().join("ds");
    write_dataset(&samples, &ds).unwrap();
    let back = read_dataset(&ds).unwrap();
    let dataset_exact = back == samples;
    if !dataset_exact {
        failures.push("dataset roundtrip differs".into());
    }

    let config = ModelConfig::desk();
    let weights = init_weights(&config, 8).unwrap();
    let ckpt = Checkpoint::new(config.clone(), weights.clone()).unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    write_checkpoint(&ckpt_path, &ckpt).unwrap();
    let loaded = read_checkpoint(&ckpt_path).unwrap();
    let f32_exact = weights
        .iter()
        .all(|(name, t)| t.iter().zip(loaded.weights.get(name).iter()).all(|(a, b)| (*a as f32) as f64 == *b));
    let reencode_same = encode_checkpoint(&loaded) == fs::read(&ckpt_path).unwrap();
    if !(f32_exact && reencode_same && loaded.config == config) {
        failures.push("checkpoint roundtrip is not float32-exact".into());
    }

    // Declared errors for targeted corruption.
    let flo = ds.join("000000.flo");
    let bytes = fs::read(&flo).unwrap();
    fs::write(&flo, &bytes[..bytes.len() / 2]).unwrap();
    expect_err(read_dataset(&ds), |e| matches!(e, Error::CorruptFile { .. }) && mentions(e, &flo), "truncated flo", &mut failures);
    fs::write(&flo, &bytes).unwrap();

    let mask = ds.join("000001.mask.png");
    let mask_bytes = fs::read(&mask).unwrap();
    fs::remove_file(&mask).unwrap();
    expect_err(read_dataset(&ds), |e| matches!(e, Error::MissingFile { .. }) && mentions(e, &mask), "missing mask", &mut failures);
    fs::write(&mask, &mask_bytes).unwrap();

    let manifest = ds.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, manifest_text.replacen("\"version\": 1", "\"version\": 99", 1)).unwrap();
    expect_err(read_dataset(&ds), |e| matches!(e, Error::VersionMismatch { found: 99, .. }), "manifest version", &mut failures);
    fs::write(&manifest, "{\"version\":1,\"samples\":[{\"id\":\"../x\"").unwrap();
    expect_err(read_dataset(&ds), |e| matches!(e, Error::CorruptFile { .. }) && mentions(e, &manifest), "manifest garbage", &mut failures);
    fs::write(&manifest, &manifest_text).unwrap();

    let anno = ds.join("000002.anno.json");
    fs::write(&anno, "{\"version\":1,\"lines\":[{\"distorted\":[[1.0,2.0]],\"reference\":[]}],\"faces\":[]}").unwrap();
    expect_err(read_dataset(&ds), |e| matches!(e, Error::CorruptFile { .. }) && mentions(e, &anno), "inconsistent annotations", &mut failures);

    let ck_bytes = fs::read(&ckpt_path).unwrap();
    let text = String::from_utf8_lossy(&ck_bytes[4..64]).into_owned();
    if !text.contains("\"format_version\":1") {
        failures.push("checkpoint manifest layout unexpected".into());
    }
    let bumped = {
        let mut b = ck_bytes.clone();
        let at = 4 + text.find("\"format_version\":1").unwrap() + "\"format_version\":".len();
        b[at] = b'7';
        b
    };
    fs::write(&ckpt_path, &bumped).unwrap();
    expect_err(read_checkpoint(&ckpt_path), |e| matches!(e, Error::VersionMismatch { found: 7, .. }), "checkpoint version", &mut failures);
    fs::write(&ckpt_path, &ck_bytes[..ck_bytes.len() - 3]).unwrap();
    expect_err(read_checkpoint(&ckpt_path), |e| matches!(e, Error::CorruptFile { .. }) && mentions(e, &ckpt_path), "truncated checkpoint", &mut failures);
    let mut nan = ck_bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&ckpt_path, &nan).unwrap();
    expect_err(read_checkpoint(&ckpt_path), |e| matches!(e, Error::CorruptFile { .. }), "non-finite weight", &mut failures);

    // Random corruption never crashes a decoder.
    let s = &samples[0];
    let tiny = {
        let mut c = ModelConfig::tiny();
        c.base_channels = 4;
        c.heads = widecorrect::msunet::HeadSpec::Fixed(1);
        let w = init_weights(&c, 0).unwrap();
        encode_checkpoint(&Checkpoint::new(c, w).unwrap())
    };
    let panics = hammer(&encode_flo(s.flow_gt.as_ref().unwrap()), 300, 1, decode_flo)
        + hammer(&encode_image_png(&s.distorted).unwrap(), 300, 2, decode_image_png)
        + hammer(&encode_mask_png(s.face_mask.as_ref().unwrap()).unwrap(), 300, 3, decode_mask_png)
        + hammer(&encode_annotations(s.annotations.as_ref().unwrap()), 300, 4, decode_annotations)
        + hammer(manifest_text.as_bytes(), 300, 5, decode_manifest)
        + hammer(&tiny, 300, 6, decode_checkpoint);
    if panics > 0 {
        failures.push(format!("{panics} decoder panics under corruption"));
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "dataset and checkpoint roundtrips float32-exact; corruption yields declared errors, no panics".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// ----------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 8] = [
    (1, "gradient suite", gradient_suite),
    (2, "oracle equivalence", oracle_equivalence),
    (3, "geometry roundtrips", geometry_roundtrips),
    (4, "metric sanity", metric_sanity),
    (5, "training descent", training_descent),
    (6, "semi-supervised trend", semi_supervised_trend),
    (7, "determinism", determinism),
    (8, "format fidelity", format_fidelity),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // Quiet the default hook; panics are reported as failures below.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        println!("criterion {n} ({name}): running");
        let t = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "criterion {n} ({name}): {} [{:.1}s] {}",
            if result.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
