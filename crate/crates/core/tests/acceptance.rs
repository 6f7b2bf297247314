//! One pass/fail line per acceptance criterion. Run with `--nocapture` to see them.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ocean_fusion::btl::{fit_btl, simulate_comparisons, spearman, BtlOptions, PairwiseComparison, Winner};
use ocean_fusion::fusion::{assemble_fused_model, verify_transfer, FusedModelConfig, SourceCheckpoint, FUSED_FEATURE_DIM};
use ocean_fusion::nn::gradcheck::{finite_difference_check, GradCheckOptions};
use ocean_fusion::nn::head::sigmoid_backward;
use ocean_fusion::nn::lstm::logistic;
use ocean_fusion::nn::tensor::named_tensors;
use ocean_fusion::nn::{ConvBlock, ConvSpec, Dense, LstmStack, LstmStackConfig, MapShape, Mlp};
use ocean_fusion::pipeline::reference::{METHOD_ROWS, SUBNET_ROWS};
use ocean_fusion::pipeline::{
    emit_comparison_table, evaluate, generate_synthetic_dataset, train_stage1, train_stage2, Dataset, FrontendConfig, TrainConfig,
    REFERENCE_SCORES,
};
use ocean_fusion::preprocess::audio::band_centers_hz;
use ocean_fusion::preprocess::frames::sample_frame_indices;
use ocean_fusion::preprocess::{compute_log_mel, extract_face_frames, sample_frames, CenterRegionDetector, Image, LogMelConfig};
use ocean_fusion::subnets::{Modality, SubnetCheckpoint};
use ocean_fusion::{EvaluationReport, Split, Trait};

const METRIC_TOL: f64 = 1e-12;
const UNIFORM_N: usize = 10_000;
const UNIFORM_EXPECTED: f64 = 0.75;
const UNIFORM_TOL: f64 = 0.01;
const UNIFORM_BUDGET: Duration = Duration::from_secs(5);
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const IDENTITY_SEQUENCES: usize = 100;
const TRANSFER_STEPS: usize = 100;
const DESK_AMBIENT_MIN: f64 = 0.98;
const DESK_MAX_STEPS: usize = 2000;
const PATCH_DURATIONS: usize = 50;
const SAMPLING_CASES: usize = 100;
const BTL_ITEMS: usize = 20;
const BTL_PER_PAIR: usize = 11;
const BTL_SEEDS: u64 = 10;
const BTL_SPEARMAN_MIN: f64 = 0.95;
const BTL_MONOTONE_REL_SLACK: f64 = 1e-12;
const BTL_CLOSED_FORM_TOL: f64 = 1e-8;

fn verdict(n: usize, what: &str, ok: bool, detail: &str) {
    println!("[{}] criterion {n}: {what} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {what} ({detail})");
}

/// Small architecture shared by the transfer and determinism runs.
const TINY_TOML: &str = r#"
hidden_size = 8
batch_videos = 4
max_steps = 20
validate_every = 10
image_channels = [4, 8]
image_feature_dim = 32
audio_channels = [4, 8]
transcript_layers = [32, 16, 20]
fusion_hidden = 16
"#;

fn tiny_config() -> TrainConfig {
    TrainConfig::parse(TINY_TOML).unwrap()
}

fn cached_dataset(dir: &Path, n: usize, seed: u64, cfg: &TrainConfig) -> Dataset {
    let d = generate_synthetic_dataset(n, seed, dir).unwrap();
    let ds = Dataset::open(&d.manifest_path, FrontendConfig::from(cfg)).unwrap();
    let cache = dir.join("cache");
    ds.write_cache(&cache).unwrap();
    ds.with_cache_dir(&cache)
}

fn stage1_all(ds: &Dataset, cfg: &TrainConfig) -> Vec<SubnetCheckpoint> {
    Modality::ALL.iter().map(|&m| train_stage1(m, ds, cfg).unwrap()).collect()
}

#[test]
fn criterion_01_metric_exactness() {
    let cases: Vec<(Vec<[f64; 5]>, Vec<[f64; 5]>, [f64; 5], f64)> = vec![
        (vec![[0.5; 5]], vec![[0.5; 5]], [1.0; 5], 1.0),
        (vec![[0.0; 5]], vec![[1.0; 5]], [0.0; 5], 0.0),
        (vec![[0.2, 0.4, 0.6, 0.8, 0.5]], vec![[0.3, 0.3, 0.7, 0.6, 0.5]], [0.9, 0.9, 0.9, 0.8, 1.0], 0.9),
        (vec![[0.1; 5], [0.9; 5]], vec![[0.2; 5], [0.6; 5]], [0.8; 5], 0.8),
        (
            vec![[0.0, 0.25, 0.5, 0.75, 1.0], [1.0, 1.0, 0.0, 0.0, 0.5], [0.3, 0.6, 0.9, 0.2, 0.4]],
            vec![[0.5; 5], [1.0, 0.75, 0.25, 0.0, 0.5], [0.3; 5]],
            [5.0 / 6.0, 11.0 / 15.0, 43.0 / 60.0, 53.0 / 60.0, 0.8],
            119.0 / 150.0,
        ),
    ];
    let mut worst = 0.0f64;
    for (truth, pred, per_trait, mean) in &cases {
        let (ds, model) = common::lookup_case(truth, pred, Split::Validation);
        let r = evaluate(&model, &ds, Split::Validation, 6).unwrap();
        worst = worst.max((r.mean_accuracy - mean).abs());
        for (a, b) in r.per_trait_accuracy.iter().zip(per_trait) {
            worst = worst.max((a - b).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truths: Vec<[f64; 5]> = (0..UNIFORM_N).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    let preds = vec![[0.5; 5]; UNIFORM_N];
    let (ds, model) = common::lookup_case(&truths, &preds, Split::Test);
    let t0 = Instant::now();
    let r = evaluate(&model, &ds, Split::Test, 6).unwrap();
    let took = t0.elapsed();
    let ok = worst <= METRIC_TOL && (r.mean_accuracy - UNIFORM_EXPECTED).abs() <= UNIFORM_TOL && took < UNIFORM_BUDGET;
    verdict(
        1,
        "mean accuracy matches hand cases; constant 0.5 on uniform labels gives 0.75",
        ok,
        &format!("{} hand cases max error {worst:.2e}; uniform N={UNIFORM_N} gives {:.5} in {took:?}", cases.len(), r.mean_accuracy),
    );
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stack_check(seed: u64, cfg: LstmStackConfig, input: usize, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stack = LstmStack::new(cfg, input, &mut rng).unwrap();
    let seq: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, input)).collect();
    let proj: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, cfg.hidden_size)).collect();
    let r = finite_difference_check(
        &mut stack,
        |m, g| {
            let (ys, cache) = m.forward_cached::<ChaCha8Rng>(&seq, None)?;
            if g {
                m.backward(&cache, &proj);
            }
            Ok(ys.iter().zip(&proj).map(|(y, p)| dot(y, p)).sum())
        },
        GradCheckOptions {
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    r.max_rel_error
}

#[test]
fn criterion_02_gradient_checks() {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut fc = Dense::new(6, 4, &mut rng);
        let x = random_vec(&mut rng, 6);
        let p = random_vec(&mut rng, 4);
        let r = finite_difference_check(
            &mut fc,
            |m, g| {
                let y = m.forward(&x)?;
                if g {
                    m.backward(&x, &p);
                }
                Ok(dot(&y, &p))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        let e = worst.entry("fully connected").or_default();
        *e = e.max(r.max_rel_error);

        let spec = ConvSpec {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 1,
        };
        let mut conv = ConvBlock::new(spec, &mut rng);
        let shape = MapShape {
            channels: 2,
            height: 6,
            width: 6,
        };
        let img = random_vec(&mut rng, shape.len());
        let out_len = conv.output_shape(shape).len();
        let p = random_vec(&mut rng, out_len);
        let r = finite_difference_check(
            &mut conv,
            |m, g| {
                let (y, cache) = m.forward(&img, shape)?;
                if g {
                    m.backward(&cache, &p);
                }
                Ok(dot(&y, &p))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        let e = worst.entry("conv block").or_default();
        *e = e.max(r.max_rel_error);

        let cell = LstmStackConfig {
            num_layers: 1,
            hidden_size: 4,
            residual: false,
            dropout_p: 0.0,
        };
        let e = worst.entry("LSTM cell").or_default();
        *e = e.max(stack_check(seed, cell, 3, 1));

        let stack = LstmStackConfig {
            num_layers: 2,
            hidden_size: 4,
            residual: true,
            dropout_p: 0.0,
        };
        let e = worst.entry("residual LSTM stack").or_default();
        *e = e.max(stack_check(seed, stack, 4, 5));

        let mut head = Mlp::new(FUSED_FEATURE_DIM, &[64, 5], false, &mut rng);
        let feat = random_vec(&mut rng, FUSED_FEATURE_DIM);
        let target: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let r = finite_difference_check(
            &mut head,
            |m, g| {
                let (z, cache) = m.forward_cached(&feat)?;
                let probs: Vec<f64> = z.iter().map(|&v| logistic(v)).collect();
                let loss = probs.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 5.0;
                if g {
                    let d: Vec<f64> = probs.iter().zip(&target).map(|(a, b)| (a - b).signum() / 5.0).collect();
                    m.backward(&cache, &sigmoid_backward(&probs, &d));
                }
                Ok(loss)
            },
            GradCheckOptions {
                max_per_block: Some(64),
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let e = worst.entry("fusion head").or_default();
        *e = e.max(r.max_rel_error);
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(
        2,
        "analytic gradients agree with central differences",
        max < GRAD_REL_TOL,
        &format!("{GRAD_SEEDS} seeds, worst relative error: {detail}"),
    );
}

#[test]
fn criterion_03_zero_residual_stack_is_identity() {
    let cfg = LstmStackConfig {
        num_layers: 3,
        hidden_size: 8,
        residual: true,
        dropout_p: 0.0,
    };
    let stack = LstmStack::zeros(cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..IDENTITY_SEQUENCES {
        let len = rng.random_range(1..12);
        let seq: Vec<Vec<f64>> = (0..len).map(|_| (0..8).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        if stack.forward(&seq).unwrap() != seq {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "zero-parameter residual stack returns its input exactly",
        mismatches == 0,
        &format!("{IDENTITY_SEQUENCES} random sequences, {mismatches} not bit-identical"),
    );
}

#[test]
fn criterion_04_transfer_and_freezing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.max_steps = 10;
    let ds = cached_dataset(dir.path(), 6, 5, &cfg);
    let stage1 = stage1_all(&ds, &cfg);
    let sources: Vec<SourceCheckpoint> = stage1.iter().cloned().map(SourceCheckpoint::in_memory).collect();
    let fused_cfg = cfg.fused_config(FusedModelConfig::from_checkpoints(&stage1).unwrap().subnets);
    let model = assemble_fused_model(&sources, &fused_cfg, 0).unwrap();
    let report = verify_transfer(&model, &stage1);

    let before = named_tensors(&model, "");
    let frozen = model.frozen_names();
    cfg.max_steps = TRANSFER_STEPS;
    let trained = train_stage2(model, &stage1, &ds, &cfg).unwrap().to_model().unwrap();
    let after = named_tensors(&trained, "");
    let frozen_changed = frozen.iter().filter(|n| before[*n] != after[*n]).count();
    let trainable_changed = before.keys().filter(|n| !frozen.contains(n) && before[*n] != after[*n]).count();
    let ok = report.passed() && report.checked > 0 && !frozen.is_empty() && frozen_changed == 0 && trainable_changed > 0;
    verdict(
        4,
        "stage-1 weights transfer exactly and frozen tensors never move",
        ok,
        &format!(
            "{} tensors checked, {} discrepancies; after {TRANSFER_STEPS} steps {frozen_changed} of {} frozen and {trainable_changed} of {} trainable tensors changed",
            report.checked,
            report.discrepancies.len(),
            frozen.len(),
            before.len() - frozen.len()
        ),
    );
}

#[test]
fn criterion_05_fusion_geometry() {
    let cfg = TrainConfig::default();
    let fused = cfg.fused_config(Modality::ALL.iter().map(|&m| cfg.subnet_config(m)).collect());
    let slices = fused.feature_slices().unwrap();
    let expected = vec![
        (Modality::Ambient, 0..80),
        (Modality::Facial, 80..160),
        (Modality::Audio, 160..180),
        (Modality::Transcript, 180..200),
    ];

    let mut tiny = tiny_config();
    tiny.stage1_lstm_layers = 1;
    tiny.stage2_lstm_layers = 2;
    let subnets: Vec<SubnetCheckpoint> = Modality::ALL
        .iter()
        .map(|&m| {
            let net = ocean_fusion::subnets::Subnet::new(tiny.subnet_config(m), 1).unwrap();
            SubnetCheckpoint::from_subnet(&net, Default::default())
        })
        .collect();
    let sources: Vec<SourceCheckpoint> = subnets.iter().cloned().map(SourceCheckpoint::in_memory).collect();
    let model = assemble_fused_model(&sources, &tiny.fused_config(subnets.iter().map(|c| c.config.clone()).collect()), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ds = cached_dataset(dir.path(), 1, 2, &tiny);
    let inputs = ds.inputs(0).unwrap().head(tiny.frames_per_video);
    let concat = model.concatenated_features(&model.extract(&inputs).unwrap()).unwrap();
    let ok = slices == expected && concat.len() == FUSED_FEATURE_DIM && fused.validate().is_ok();
    verdict(
        5,
        "concatenated feature is ambient 80, facial 80, audio 20, transcript 20",
        ok,
        &format!("slices {slices:?}, concatenation length {}", concat.len()),
    );
}

#[test]
fn criterion_06_desk_learning() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig {
        hidden_size: 32,
        dropout_p: 0.0,
        max_steps: DESK_MAX_STEPS,
        validate_every: 200,
        select_best: false,
        ..Default::default()
    };
    for lr in [&mut cfg.lr_ambient, &mut cfg.lr_facial, &mut cfg.lr_audio, &mut cfg.lr_transcript, &mut cfg.lr_fusion] {
        *lr = 1e-3;
    }
    let ds = cached_dataset(dir.path(), 16, 7, &cfg);
    let stage1 = stage1_all(&ds, &cfg);
    let mut single = BTreeMap::new();
    for ck in &stage1 {
        let net = ck.to_subnet().unwrap();
        single.insert(ck.config.modality, evaluate(&net, &ds, Split::Train, cfg.frames_per_video).unwrap().mean_accuracy);
    }
    for lr in [&mut cfg.lr_ambient, &mut cfg.lr_facial, &mut cfg.lr_audio, &mut cfg.lr_transcript, &mut cfg.lr_fusion] {
        *lr = 1e-4;
    }
    let sources: Vec<SourceCheckpoint> = stage1.iter().cloned().map(SourceCheckpoint::in_memory).collect();
    let fused = ocean_fusion::pipeline::run_stage2(&sources, &ds, &cfg).unwrap().to_model().unwrap();
    let fused_acc = evaluate(&fused, &ds, Split::Train, cfg.frames_per_video).unwrap().mean_accuracy;
    let best_single = single.values().copied().fold(0.0, f64::max);
    let ambient = single[&Modality::Ambient];
    let ok = ambient >= DESK_AMBIENT_MIN && fused_acc >= best_single;
    let per = single.iter().map(|(m, a)| format!("{m} {a:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        6,
        "desk-scale training fits the synthetic train split and fusion is no worse than any single modality",
        ok,
        &format!("train accuracy {per}; fused {fused_acc:.4}"),
    );
}

/// Frames whose window fits entirely inside `samples`, counted one start at a time.
fn brute_force_frames(samples: usize, cfg: &LogMelConfig) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + cfg.window <= samples {
        n += 1;
        start += cfg.hop;
    }
    n
}

#[test]
fn criterion_07_audio_frontend() {
    let cfg = LogMelConfig::default();
    let rate = cfg.sample_rate;
    let silence = compute_log_mel(&vec![0.0; rate as usize * 2], rate, &cfg).unwrap();
    let floor = cfg.log_offset.ln();
    let silence_ok = !silence.is_empty() && silence.patches.iter().flatten().all(|&v| v == floor);

    let centers = band_centers_hz(&cfg);
    let mut wrong_frames = 0;
    let mut tone_frames = 0;
    for band in 12..cfg.bands {
        let tone: Vec<f64> = (0..rate as usize)
            .map(|i| 0.5 * (std::f64::consts::TAU * centers[band] * i as f64 / f64::from(rate)).sin())
            .collect();
        let p = compute_log_mel(&tone, rate, &cfg).unwrap();
        for frame in p.patches.iter().flat_map(|patch| patch.chunks(cfg.bands)) {
            tone_frames += 1;
            let arg = (0..cfg.bands).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            if arg != band {
                wrong_frames += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut count_errors = 0;
    for _ in 0..PATCH_DURATIONS {
        let n = rng.random_range(cfg.window..rate as usize * 5);
        let p = compute_log_mel(&vec![0.0; n], rate, &cfg).unwrap();
        if p.len() != brute_force_frames(n, &cfg) / cfg.patch_frames {
            count_errors += 1;
        }
    }
    let ok = silence_ok && wrong_frames == 0 && tone_frames > 0 && count_errors == 0;
    verdict(
        7,
        "log-mel floor on silence, tone lands in its band, patch count from whole frames",
        ok,
        &format!(
            "silence at ln({}) everywhere: {silence_ok}; {wrong_frames} of {tone_frames} tone frames off-band; {count_errors} of {PATCH_DURATIONS} patch counts wrong",
            cfg.log_offset
        ),
    );
}

#[test]
fn criterion_08_frame_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut errors = Vec::new();
    let mut face_mismatch = 0;
    for case in 0..SAMPLING_CASES {
        let duration: f64 = rng.random_range(1.0..20.0);
        let fps: f64 = rng.random_range(2.0..60.0);
        let n = (duration * fps).floor() as usize;
        let picks = sample_frame_indices(n, fps, duration).unwrap();
        if picks.len() != duration.floor() as usize {
            errors.push(format!("case {case}: {} picks for {duration} s", picks.len()));
        }
        for (k, p) in picks.iter().enumerate() {
            let target = k as f64 + 0.5;
            let best = (0..n)
                .min_by(|&a, &b| (a as f64 / fps - target).abs().total_cmp(&(b as f64 / fps - target).abs()))
                .unwrap();
            if p.index != best || p.target_s != target {
                errors.push(format!("case {case} k {k}: index {} vs nearest {best}", p.index));
            }
        }
        if picks.windows(2).any(|w| w[1].target_s - w[0].target_s != 1.0) {
            errors.push(format!("case {case}: target spacing not one second"));
        }
        if case < 10 {
            let frames: Vec<Image> = (0..n).map(|i| Image::filled(16, 16, [(i % 7) as f64 / 7.0, 0.5, 0.5])).collect();
            let ambient = sample_frames(&frames, fps, duration).unwrap();
            let face = extract_face_frames(&ambient, &CenterRegionDetector::default()).unwrap();
            if face.timestamps_s != ambient.timestamps_s {
                face_mismatch += 1;
            }
        }
    }
    let ok = errors.is_empty() && face_mismatch == 0;
    verdict(
        8,
        "one frame per second nearest each half-second mark; face crops share timestamps",
        ok,
        &format!("{SAMPLING_CASES} random clips, {} disagreements with the nearest-frame search, {face_mismatch} timestamp mismatches {:?}", errors.len(), errors.first()),
    );
}

#[test]
fn criterion_09_btl() {
    let mut min_rho = f64::INFINITY;
    let mut worst_rise = 0.0f64;
    for seed in 0..BTL_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: BTreeMap<String, f64> = (0..BTL_ITEMS).map(|i| (format!("item{i:02}"), rng.random_range(-2.0f64..2.0).exp())).collect();
        let cs = simulate_comparisons(&truth, BTL_PER_PAIR, Trait::Extraversion, seed).unwrap();
        let fit = fit_btl(&cs, &BtlOptions::default()).unwrap();
        let a: Vec<f64> = truth.values().copied().collect();
        let b: Vec<f64> = truth.keys().map(|k| fit.strengths[k]).collect();
        min_rho = min_rho.min(spearman(&a, &b));
        for w in fit.objective_trace.windows(2) {
            let slack = BTL_MONOTONE_REL_SLACK * w[0].abs().max(1.0);
            worst_rise = worst_rise.max((w[0] - w[1] - slack).max(0.0));
        }
    }

    let mut closed_err = 0.0f64;
    for (k, n) in [(1usize, 3usize), (3, 4), (7, 10), (5, 6)] {
        let cs: Vec<PairwiseComparison> = (0..n)
            .map(|i| PairwiseComparison {
                trait_: Trait::Openness,
                video_a: "a".into(),
                video_b: "b".into(),
                winner: if i < k { Winner::A } else { Winner::B },
                worker_id: format!("w{i}"),
            })
            .collect();
        let fit = fit_btl(
            &cs,
            &BtlOptions {
                regularize: false,
                ..Default::default()
            },
        )
        .unwrap();
        let ratio = fit.strengths["a"] / fit.strengths["b"];
        let expected = k as f64 / (n - k) as f64;
        closed_err = closed_err.max((ratio - expected).abs() / expected);
    }
    let ok = min_rho >= BTL_SPEARMAN_MIN && worst_rise == 0.0 && closed_err <= BTL_CLOSED_FORM_TOL;
    verdict(
        9,
        "BTL recovers the ranking, never lowers its objective, and matches the two-item closed form",
        ok,
        &format!("min Spearman {min_rho:.4} over {BTL_SEEDS} seeds; largest objective drop beyond slack {worst_rise:.2e}; two-item relative error {closed_err:.2e}"),
    );
}

fn cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ocean-fusion")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn full_cli_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("tiny.toml"), TINY_TOML).unwrap();
    cli(dir, &["synth-data", "--n", "6", "--seed", "3", "--out", "data"]);
    cli(dir, &["preprocess", "--manifest", "data/manifest.jsonl", "--out", "cache", "--config", "tiny.toml"]);
    let common = ["--manifest", "data/manifest.jsonl", "--config", "tiny.toml", "--cache", "cache"];
    let mut ckpts = Vec::new();
    for m in Modality::ALL {
        let out = format!("{m}.ckpt");
        let mut args = vec!["train-stage1", "--modality", m.name(), "--out", &out];
        args.extend(common);
        cli(dir, &args);
        ckpts.push(out);
    }
    let joined = ckpts.join(",");
    let mut args = vec!["train-stage2", "--ckpts", &joined, "--out", "fused.ckpt"];
    args.extend(common);
    cli(dir, &args);
    let mut args = vec!["evaluate", "--ckpt", "fused.ckpt", "--split", "validation", "--out", "report.json"];
    args.extend(common);
    let stdout = cli(dir, &args);
    let mut files: Vec<String> = ckpts.clone();
    files.extend(["fused.ckpt", "fused.ckpt.transfer.jsonl", "fused.ckpt.curve.jsonl", "report.json"].map(String::from));
    let mut out: Vec<(String, Vec<u8>)> = files.into_iter().map(|f| (f.clone(), std::fs::read(dir.join(&f)).unwrap())).collect();
    out.push(("evaluate stdout".into(), stdout));
    out
}

#[test]
fn criterion_10_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_cli_run(a.path());
    let second = full_cli_run(b.path());
    let differing: Vec<&str> = first.iter().zip(&second).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    verdict(
        10,
        "two identical command-line runs produce byte-identical artifacts",
        differing.is_empty() && first.len() == second.len(),
        &format!("{} artifacts compared, differing: {differing:?}", first.len()),
    );
}

#[test]
fn criterion_11_reference_table() {
    let report = EvaluationReport::from_pairs([(&ocean_fusion::TraitVector::splat(0.5).unwrap(), &ocean_fusion::TraitVector::splat(0.4).unwrap())])
        .unwrap()
        .with_context("validation", "fused");
    let table = emit_comparison_table(&report, &REFERENCE_SCORES);
    let proposed = REFERENCE_SCORES.find("Proposed (four-modality fusion)").unwrap();
    let mut missing: Vec<String> = Vec::new();
    if proposed.mean != 0.9188 || proposed.per_trait != Some([0.9166, 0.9214, 0.9208, 0.9189, 0.9162]) {
        missing.push("proposed row constants".into());
    }
    for (name, mean) in [
        ("Face: MTCNN + ResNet-v2-101", 0.9136),
        ("Ambient: ResNet-v2-101", 0.9116),
        ("Audio: VGGish", 0.9049),
        ("Transcription: ELMo", 0.8872),
    ] {
        if REFERENCE_SCORES.find(name).map(|r| r.mean) != Some(mean) {
            missing.push(name.into());
        }
    }
    for needle in ["0.9188", "0.9166", "0.9214", "0.9208", "0.9189", "0.9162", "0.9136", "0.9116", "0.9049", "0.8872", "measured"] {
        if !table.contains(needle) {
            missing.push(needle.into());
        }
    }
    for row in METHOD_ROWS.iter().chain(&SUBNET_ROWS) {
        if row.citation.is_empty() || !table.contains(row.citation) {
            missing.push(format!("citation for {}", row.name));
        }
    }
    verdict(
        11,
        "reference scores are carried as labeled constants with their source",
        missing.is_empty(),
        &format!("missing: {missing:?}"),
    );
}
