use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ocean_fusion::nn::tensor::named_tensors;
use ocean_fusion::pipeline::synth::{synth_audio, synth_transcript, SYNTH_TONE_BANDS};
use ocean_fusion::pipeline::{evaluate, generate_synthetic_dataset, train_stage1, Dataset, FrontendConfig, TrainConfig};
use ocean_fusion::preprocess::{compute_log_mel, embed_transcript, HashEmbedder, LogMelConfig};
use ocean_fusion::subnets::Modality;
use ocean_fusion::Split;

fn tiny() -> TrainConfig {
    TrainConfig::parse(
        r#"
hidden_size = 8
batch_videos = 4
max_steps = 15
validate_every = 5
image_channels = [4, 8]
image_feature_dim = 32
audio_channels = [4, 8]
transcript_layers = [32, 16, 20]
"#,
    )
    .unwrap()
}

fn dataset(dir: &std::path::Path, cfg: &TrainConfig) -> Dataset {
    let d = generate_synthetic_dataset(6, 4, dir).unwrap();
    let ds = Dataset::open(&d.manifest_path, FrontendConfig::from(cfg)).unwrap();
    ds.write_cache(&dir.join("cache")).unwrap();
    ds.with_cache_dir(&dir.join("cache"))
}

#[test]
fn same_seed_same_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ds = dataset(dir.path(), &cfg);
    let a = train_stage1(Modality::Audio, &ds, &cfg).unwrap();
    let b = train_stage1(Modality::Audio, &ds, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.meta, b.meta);
    let other = TrainConfig { seed: 1, ..cfg };
    let c = train_stage1(Modality::Audio, &ds, &other).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn default_learning_rates_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ds = dataset(dir.path(), &cfg);
    let audio = train_stage1(Modality::Audio, &ds, &cfg).unwrap();
    let facial = train_stage1(Modality::Facial, &ds, &cfg).unwrap();
    assert_eq!(audio.meta.learning_rates, BTreeMap::from([("audio".to_string(), 1e-4)]));
    assert_eq!(facial.meta.learning_rates, BTreeMap::from([("facial".to_string(), 1e-5)]));
    let emitted = TrainConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(emitted.lr_audio, 1e-4);
    for m in [Modality::Ambient, Modality::Facial, Modality::Transcript] {
        assert_eq!(emitted.learning_rate(m), 1e-5);
    }
    assert_eq!(emitted.lr_fusion, 1e-5);
}

#[test]
fn recorded_train_accuracy_matches_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { select_best: false, ..tiny() };
    let ds = dataset(dir.path(), &cfg);
    let ck = train_stage1(Modality::Transcript, &ds, &cfg).unwrap();
    let r = evaluate(&ck.to_subnet().unwrap(), &ds, Split::Train, cfg.frames_per_video).unwrap();
    assert!((ck.meta.final_train_accuracy.unwrap() - r.mean_accuracy).abs() < 1e-12);
    assert_eq!(r.model, "transcript subnet");
    assert_eq!(ck.meta.curve.last().unwrap().step, cfg.max_steps);
}

#[test]
fn frozen_extractor_is_untouched_in_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ds = dataset(dir.path(), &cfg);
    let ck = train_stage1(Modality::Ambient, &ds, &cfg).unwrap();
    let init = ocean_fusion::subnets::Subnet::new(cfg.subnet_config(Modality::Ambient), cfg.seed).unwrap();
    let init = named_tensors(&init, "");
    let backbone: Vec<&String> = init.keys().filter(|k| k.starts_with("backbone.")).collect();
    assert!(!backbone.is_empty());
    for k in backbone {
        assert_eq!(init[k], ck.params[k], "{k}");
    }
}

/// Least-squares fit on the first `n_fit` rows (with intercept), accuracy on the rest.
fn probe_accuracy(features: &[Vec<f64>], targets: &[[f64; 5]], n_fit: usize) -> f64 {
    let d = features[0].len() + 1;
    let row = |f: &Vec<f64>| std::iter::once(1.0).chain(f.iter().copied()).collect::<Vec<_>>();
    let x = DMatrix::from_row_iterator(n_fit, d, features[..n_fit].iter().flat_map(row));
    let svd = x.svd(true, true);
    let mut err = 0.0;
    let held = features.len() - n_fit;
    for t in 0..5 {
        let y = DVector::from_iterator(n_fit, targets[..n_fit].iter().map(|v| v[t]));
        let w = svd.solve(&y, 1e-10).unwrap();
        for (f, v) in features[n_fit..].iter().zip(&targets[n_fit..]) {
            let pred = DVector::from_vec(row(f)).dot(&w);
            err += (pred.clamp(0.0, 1.0) - v[t]).abs();
        }
    }
    1.0 - err / (5 * held) as f64
}

fn planted(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 5]> {
    use rand::Rng;
    (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.05..0.95))).collect()
}

#[test]
fn transcript_traits_are_linearly_recoverable() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let traits = planted(60, &mut rng);
    let emb = HashEmbedder::default();
    let feats: Vec<Vec<f64>> = traits
        .iter()
        .map(|t| embed_transcript("v", &synth_transcript(t, &mut rng), &emb).unwrap().vector)
        .collect();
    let acc = probe_accuracy(&feats, &traits, 40);
    assert!(acc >= 0.95, "held-out probe accuracy {acc}");
}

#[test]
fn audio_traits_are_linearly_recoverable() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let traits = planted(40, &mut rng);
    let cfg = LogMelConfig::default();
    let feats: Vec<Vec<f64>> = traits
        .iter()
        .map(|t| {
            let p = compute_log_mel(&synth_audio(t, &mut rng), cfg.sample_rate, &cfg).unwrap();
            let frames: Vec<&[f64]> = p.patches.iter().flat_map(|q| q.chunks(cfg.bands)).collect();
            SYNTH_TONE_BANDS
                .iter()
                .map(|&b| {
                    let power = frames.iter().map(|f| f[b].exp() - cfg.log_offset).sum::<f64>() / frames.len() as f64;
                    power.max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    let acc = probe_accuracy(&feats, &traits, 25);
    assert!(acc >= 0.95, "held-out probe accuracy {acc}");
}
