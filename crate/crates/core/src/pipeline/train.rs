//! Stage-1 and stage-2 training loops: Adam on mean absolute error over
//! batches of videos, each contributing a window of consecutive timesteps.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{assemble_fused_model, verify_transfer, FusedCheckpoint, FusedFeatures, FusedModel, SourceCheckpoint};
use crate::manifest::Split;
use crate::metrics::EvaluationReport;
use crate::nn::tensor::{load_tensors, named_tensors, zero_grads, Parameterized};
use crate::nn::{Adam, AdamConfig, Container, Tensor};
use crate::preprocess::{augment, AugmentationConfig, FrameSequence, VideoInputs};
use crate::subnets::{frame_steps, patch_steps, CurvePoint, Modality, SequenceSubnet, Subnet, SubnetCheckpoint, TrainingMeta};
use crate::traits::TraitVector;

/// splitmix64 folded over `parts`.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

fn modality_code(m: Modality) -> u64 {
    Modality::ALL.iter().position(|&x| x == m).expect("known modality") as u64
}

/// Training window: random start when `rng` is given, else the first `w`.
fn window<R: Rng>(len: usize, w: usize, rng: Option<&mut R>) -> Range<usize> {
    if len <= w {
        return 0..len;
    }
    let start = rng.map_or(0, |r| r.random_range(0..=len - w));
    start..start + w
}

/// Subgradient of `scale * sum |p - y|` with respect to `p`.
fn mae_grad(probs: &[f64], label: &[f64], scale: f64) -> Vec<f64> {
    probs
        .iter()
        .zip(label)
        .map(|(p, y)| {
            let d = p - y;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect()
}

/// Clip-consistent jitter: every frame of a copy sees the same draw.
fn jitter(seq: &FrameSequence, aug: &AugmentationConfig, seed: u64) -> FrameSequence {
    FrameSequence {
        frames: seq
            .frames
            .iter()
            .map(|f| augment(f, aug, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect(),
        timestamps_s: seq.timestamps_s.clone(),
    }
}

/// Clean sequence followed by the configured augmented copies.
fn frame_copies(seq: &FrameSequence, cfg: &TrainConfig, video: usize, m: Modality, augmented: bool) -> Vec<FrameSequence> {
    let aug = cfg.augmentation();
    let mut out = vec![seq.clone()];
    if augmented && !aug.is_identity() {
        for c in 1..=cfg.augment_copies {
            out.push(jitter(seq, &aug, mix_seed(&[aug.seed, video as u64, c as u64, modality_code(m)])));
        }
    }
    out
}

struct Split3 {
    train: Vec<usize>,
    validation: Vec<usize>,
    labels: BTreeMap<usize, [f64; 5]>,
}

fn splits(dataset: &Dataset) -> Result<Split3> {
    let train = dataset.labeled(Split::Train)?;
    if train.is_empty() {
        return Err(Error::Dataset("the train split is empty".into()));
    }
    let validation = dataset.labeled(Split::Validation)?;
    let mut labels = BTreeMap::new();
    for &i in train.iter().chain(&validation) {
        labels.insert(i, *dataset.label(i)?.as_array());
    }
    Ok(Split3 { train, validation, labels })
}

struct Hooks<'a, M> {
    lr_for: &'a dyn Fn(&str) -> Option<f64>,
    /// Forward and backward for one video; returns its predictions.
    step: &'a mut dyn FnMut(&mut M, usize, &[f64], f64, &mut ChaCha8Rng) -> Result<Vec<f64>>,
    predict: &'a dyn Fn(&M, usize) -> Result<Vec<f64>>,
    before_update: &'a dyn Fn(&M) -> Result<()>,
    snapshot: &'a dyn Fn(&M, &TrainingMeta) -> Container,
}

fn accuracy<M>(model: &M, idx: &[usize], labels: &BTreeMap<usize, [f64; 5]>, predict: &dyn Fn(&M, usize) -> Result<Vec<f64>>) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut pairs = Vec::with_capacity(idx.len());
    for &i in idx {
        let p = predict(model, i)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Ok(Some(f64::NAN));
        }
        let p = TraitVector::from_slice(&p)?;
        pairs.push((TraitVector::new(labels[&i])?, p));
    }
    Ok(Some(EvaluationReport::from_pairs(pairs.iter().map(|(a, b)| (a, b)))?.mean_accuracy))
}

fn run<M: Parameterized>(model: &mut M, cfg: &TrainConfig, data: &Split3, learning_rates: BTreeMap<String, f64>, hooks: Hooks<M>) -> Result<TrainingMeta> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x7a1]));
    let mut adam = Adam::new(AdamConfig::with_lr(1.0))?;
    let b = cfg.batch_videos.min(data.train.len());
    let scale = 1.0 / (b * 5) as f64;
    let mut meta = TrainingMeta {
        seed: cfg.seed,
        learning_rates,
        ..Default::default()
    };
    let mut last_good: BTreeMap<String, Tensor> = named_tensors(model, "");
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>, f64)> = None;
    let mut queue: Vec<usize> = Vec::new();
    let diverge = |model: &mut M, meta: &TrainingMeta, last_good: &BTreeMap<String, Tensor>, message: String| -> Error {
        let restored = load_tensors(model, "", last_good).is_ok();
        Error::Diverged {
            message,
            last_good: restored.then(|| Box::new((hooks.snapshot)(model, meta))),
        }
    };
    for step in 1..=cfg.max_steps {
        if queue.len() < b {
            queue = data.train.clone();
            queue.shuffle(&mut rng);
        }
        let batch: Vec<usize> = queue.drain(..b).collect();
        zero_grads(model);
        let mut loss = 0.0;
        for &v in &batch {
            let y = &data.labels[&v];
            let p = (hooks.step)(model, v, y, scale, &mut rng)?;
            loss += p.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(diverge(model, &meta, &last_good, format!("loss {loss} at step {step}")));
        }
        (hooks.before_update)(model)?;
        match adam.step(model, hooks.lr_for) {
            Err(Error::Numeric(m)) => return Err(diverge(model, &meta, &last_good, format!("{m} at step {step}"))),
            r => r?,
        }
        meta.steps = step;
        if step % cfg.validate_every == 0 || step == cfg.max_steps {
            let train_acc = accuracy(model, &data.train, &data.labels, hooks.predict)?.expect("train split is non-empty");
            let val_acc = accuracy(model, &data.validation, &data.labels, hooks.predict)?;
            if !train_acc.is_finite() || val_acc.is_some_and(|v| !v.is_finite()) {
                return Err(diverge(model, &meta, &last_good, format!("non-finite accuracy at step {step}")));
            }
            meta.curve.push(CurvePoint {
                step,
                train_loss: loss,
                train_accuracy: train_acc,
                validation_accuracy: val_acc,
            });
            last_good = named_tensors(model, "");
            if let Some(v) = val_acc {
                if best.as_ref().is_none_or(|(bv, ..)| v > *bv) {
                    best = Some((v, step, last_good.clone(), train_acc));
                }
            }
            meta.final_train_accuracy = Some(train_acc);
            meta.final_validation_accuracy = val_acc;
        }
    }
    if cfg.select_best {
        if let Some((v, step, params, train_acc)) = best {
            load_tensors(model, "", &params)?;
            meta.best_step = Some(step);
            meta.final_train_accuracy = Some(train_acc);
            meta.final_validation_accuracy = Some(v);
        }
    }
    Ok(meta)
}

fn sequence_of(net: &mut Subnet) -> &mut SequenceSubnet {
    match net {
        Subnet::Sequence(s) => s,
        Subnet::Transcript(_) => unreachable!("sequence modality"),
    }
}

/// Per-video timestep inputs for a sequence subnet: extractor features, or
/// raw inputs when the extractor trains. Indexed `[copy][timestep]`.
fn sequence_inputs(net: &SequenceSubnet, m: Modality, v: &VideoInputs, cfg: &TrainConfig, video: usize, augmented: bool) -> Result<Vec<Vec<Vec<f64>>>> {
    let raw: Vec<Vec<Vec<f64>>> = match m {
        Modality::Ambient => frame_copies(&v.ambient, cfg, video, m, augmented).iter().map(frame_steps).collect::<Result<_>>()?,
        Modality::Facial => frame_copies(&v.face, cfg, video, m, augmented).iter().map(frame_steps).collect::<Result<_>>()?,
        Modality::Audio => vec![patch_steps(&v.logmel)?],
        Modality::Transcript => unreachable!("sequence modality"),
    };
    if raw.iter().any(|c| c.is_empty()) {
        return Err(Error::ModalityMissing(format!("{m} input absent for sample {}", v.id)));
    }
    if net.extractor.config.trainable {
        Ok(raw)
    } else {
        raw.iter().map(|c| net.extract(c)).collect()
    }
}

/// Trains one modality network from a seeded initialization.
pub fn train_stage1(modality: Modality, dataset: &Dataset, config: &TrainConfig) -> Result<SubnetCheckpoint> {
    config.check_values()?;
    if config.modality.is_some_and(|m| m != modality) {
        return Err(Error::Config(format!("config names {:?}, run asked for {modality}", config.modality)));
    }
    let data = splits(dataset)?;
    let mut net = Subnet::new(config.subnet_config(modality), config.seed)?;
    let lr = config.learning_rate(modality);
    let mut rates = BTreeMap::from([(modality.name().to_string(), lr)]);
    let w = config.frames_per_video;
    let snapshot = |net: &Subnet, meta: &TrainingMeta| SubnetCheckpoint::from_subnet(net, meta.clone()).to_container();
    let no_check = |_: &Subnet| Ok(());

    let mut used: Vec<usize> = data.train.iter().chain(&data.validation).copied().collect();
    used.sort_unstable();
    let meta = if modality == Modality::Transcript {
        let mut emb: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &i in &used {
            emb.insert(i, dataset.inputs(i)?.transcript.vector.clone());
        }
        let lr_for = |_: &str| Some(lr);
        let mut step = |net: &mut Subnet, v: usize, y: &[f64], scale: f64, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
            let Subnet::Transcript(t) = net else { unreachable!() };
            let c = t.stage1_cached(&emb[&v], Some(rng))?;
            t.stage1_backward(&c, &mae_grad(&c.probs, y, scale));
            Ok(c.probs)
        };
        let predict = |net: &Subnet, v: usize| -> Result<Vec<f64>> { Ok(net.as_transcript()?.predict(&emb[&v])?.to_vec()) };
        let hooks = Hooks {
            lr_for: &lr_for,
            step: &mut step,
            predict: &predict,
            before_update: &no_check,
            snapshot: &snapshot,
        };
        run(&mut net, config, &data, rates, hooks)?
    } else {
        let seq = net.as_sequence()?;
        let trainable = seq.extractor.config.trainable;
        let prefix = format!("{}.", seq.extractor_prefix());
        if trainable {
            rates.insert(prefix.trim_end_matches('.').to_string(), lr);
        }
        let mut cache: BTreeMap<usize, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
        for &i in &used {
            let inputs = dataset.inputs(i)?;
            let augmented = data.train.binary_search(&i).is_ok();
            cache.insert(i, sequence_inputs(seq, modality, &inputs, config, i, augmented)?);
        }
        let lr_for = move |name: &str| if !trainable && name.starts_with(&prefix) { None } else { Some(lr) };
        let mut step = |net: &mut Subnet, v: usize, y: &[f64], scale: f64, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
            let s = sequence_of(net);
            let copies = &cache[&v];
            let copy = &copies[rng.random_range(0..copies.len())];
            let r = window(copy.len(), w, Some(&mut *rng));
            if trainable {
                let (feats, ext) = s.extract_cached(&copy[r])?;
                let c = s.stage1_cached(&feats, Some(rng))?;
                let df = s.stage1_backward(&c, &mae_grad(&c.probs, y, scale));
                s.extract_backward(&ext, &df);
                Ok(c.probs)
            } else {
                let c = s.stage1_cached(&copy[r], Some(rng))?;
                s.stage1_backward(&c, &mae_grad(&c.probs, y, scale));
                Ok(c.probs)
            }
        };
        let predict = |net: &Subnet, v: usize| -> Result<Vec<f64>> {
            let s = net.as_sequence()?;
            let clean = &cache[&v][0];
            let r = window::<ChaCha8Rng>(clean.len(), w, None);
            let feats = if trainable { s.extract(&clean[r])? } else { clean[r].to_vec() };
            Ok(s.predict_features(&feats)?.to_vec())
        };
        let hooks = Hooks {
            lr_for: &lr_for,
            step: &mut step,
            predict: &predict,
            before_update: &no_check,
            snapshot: &snapshot,
        };
        run(&mut net, config, &data, rates, hooks)?
    };
    Ok(SubnetCheckpoint::from_subnet(&net, meta))
}

fn fused_copies(model: &FusedModel, v: &VideoInputs, cfg: &TrainConfig, video: usize, augmented: bool) -> Result<Vec<FusedFeatures>> {
    let clean = model.extract(v)?;
    let amb = frame_copies(&v.ambient, cfg, video, Modality::Ambient, augmented);
    let face = frame_copies(&v.face, cfg, video, Modality::Facial, augmented);
    let mut out = vec![clean.clone()];
    for (a, f) in amb.iter().zip(&face).skip(1) {
        out.push(FusedFeatures {
            ambient: model.ambient.extract(&frame_steps(a)?)?,
            facial: model.facial.extract(&frame_steps(f)?)?,
            ..clean.clone()
        });
    }
    Ok(out)
}

/// Scene and face windows share their start; audio draws its own.
fn fused_window<R: Rng>(f: &FusedFeatures, w: usize, mut rng: Option<&mut R>) -> FusedFeatures {
    let visual = window(f.ambient.len().min(f.facial.len()), w, rng.as_deref_mut());
    let audio = window(f.audio.len(), w, rng);
    FusedFeatures {
        ambient: f.ambient[visual.clone()].to_vec(),
        facial: f.facial[visual].to_vec(),
        audio: f.audio[audio].to_vec(),
        transcript: f.transcript.clone(),
    }
}

/// Fine-tunes an assembled model. Refuses to start unless every transferred
/// parameter still matches `stage1`.
pub fn train_stage2(mut model: FusedModel, stage1: &[SubnetCheckpoint], dataset: &Dataset, config: &TrainConfig) -> Result<FusedCheckpoint> {
    config.check_values()?;
    let report = verify_transfer(&model, stage1);
    if !report.passed() {
        return Err(Error::Integrity(format!("transfer check failed for {}", report.names().join(", "))));
    }
    let data = splits(dataset)?;
    let w = config.frames_per_video;
    let mut rates: BTreeMap<String, f64> = Modality::ALL.iter().map(|&m| (m.name().to_string(), config.learning_rate(m))).collect();
    rates.insert("fusion".into(), config.lr_fusion);

    let mut cache: BTreeMap<usize, Vec<FusedFeatures>> = BTreeMap::new();
    for &i in data.train.iter().chain(&data.validation) {
        let inputs = dataset.inputs(i)?;
        let augmented = data.train.binary_search(&i).is_ok();
        cache.insert(i, fused_copies(&model, &inputs, config, i, augmented).map_err(|e| e.for_sample(&inputs.id))?);
    }
    let frozen = model.config.frozen_patterns.clone();
    let lr_for = |name: &str| {
        if frozen.iter().any(|p| crate::fusion::pattern_matches(p, name)) {
            return None;
        }
        let group = name.split('.').next().unwrap_or("");
        match group.parse::<Modality>() {
            Ok(m) => Some(config.learning_rate(m)),
            Err(_) => Some(config.lr_fusion),
        }
    };
    let mut step = |m: &mut FusedModel, v: usize, y: &[f64], scale: f64, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let copies = &cache[&v];
        let f = fused_window(&copies[rng.random_range(0..copies.len())], w, Some(&mut *rng));
        let c = m.forward_cached(&f, Some(rng), &[])?;
        m.backward(&c, &mae_grad(&c.probs, y, scale));
        Ok(c.probs)
    };
    let predict = |m: &FusedModel, v: usize| -> Result<Vec<f64>> {
        Ok(m.forward_features(&fused_window::<ChaCha8Rng>(&cache[&v][0], w, None))?.to_vec())
    };
    let check_frozen = |m: &FusedModel| -> Result<()> {
        let mut hit = None;
        m.visit("", &mut |name, p| {
            if hit.is_none() && m.is_frozen(name) && p.grad.iter().any(|&g| g != 0.0) {
                hit = Some(name.to_string());
            }
        });
        match hit {
            Some(n) => Err(Error::Integrity(format!("frozen parameter `{n}` received a gradient"))),
            None => Ok(()),
        }
    };
    let snapshot = |m: &FusedModel, meta: &TrainingMeta| FusedCheckpoint::from_model(m, meta.clone()).to_container();
    let hooks = Hooks {
        lr_for: &lr_for,
        step: &mut step,
        predict: &predict,
        before_update: &check_frozen,
        snapshot: &snapshot,
    };
    let meta = run(&mut model, config, &data, rates, hooks)?;
    Ok(FusedCheckpoint::from_model(&model, meta))
}

/// Assembles the fused model from four stage-1 checkpoints and fine-tunes it.
pub fn run_stage2(sources: &[SourceCheckpoint], dataset: &Dataset, config: &TrainConfig) -> Result<FusedCheckpoint> {
    let ckpts: Vec<SubnetCheckpoint> = sources.iter().map(|s| s.checkpoint.clone()).collect();
    let base = crate::fusion::FusedModelConfig::from_checkpoints(&ckpts)?;
    let fused = config.fused_config(base.subnets);
    let model = assemble_fused_model(sources, &fused, config.seed)?;
    train_stage2(model, &ckpts, dataset, config)
}
