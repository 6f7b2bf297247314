//! Synthetic clips whose frames, audio and transcripts encode planted trait
//! values, for desk-scale runs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::{proportional_sizes, DatasetManifest, Split, VideoRecord, DEFAULT_SPLIT_RATIO};
use crate::preprocess::audio::{band_centers_hz, write_wav};
use crate::preprocess::{Image, LogMelConfig};
use crate::traits::TraitVector;

pub const SYNTH_DURATION_S: f64 = 7.0;
pub const SYNTH_FPS: f64 = 5.0;
pub const SYNTH_FRAME_SIZE: usize = 64;
/// Mel bands carrying one trait each, in trait order.
pub const SYNTH_TONE_BANDS: [usize; 5] = [12, 22, 32, 42, 52];
pub const TRAIT_WORDS: [&str; 5] = ["curious", "organized", "outgoing", "friendly", "anxious"];
const FILLER: [&str; 10] = ["the", "and", "then", "we", "went", "to", "a", "place", "it", "was"];
const TRANSCRIPT_TOKENS: usize = 100;

pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
}

/// One frame: background from the first three traits, stripe contrast from
/// agreeableness, a central disc sized by neuroticism, plus a moving bar and noise.
pub fn synth_frame(traits: &[f64; 5], frame: usize, rng: &mut ChaCha8Rng) -> Image {
    let s = SYNTH_FRAME_SIZE;
    let [o, c, e, a, n] = *traits;
    let radius = 6.0 + 10.0 * n;
    let center = (s as f64 - 1.0) / 2.0;
    let bar = (frame * 5) % s;
    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let stripe = if (y / 4) % 2 == 0 { 0.25 * a } else { -0.25 * a };
            let mut px = [0.15 + 0.7 * o + stripe, 0.15 + 0.7 * c + stripe, 0.15 + 0.7 * e + stripe];
            let d = ((y as f64 - center).powi(2) + (x as f64 - center).powi(2)).sqrt();
            if d <= radius {
                px = [a, 1.0 - a, n];
            }
            if x.abs_diff(bar) < 2 && y < s / 5 {
                px = [1.0, 1.0, 1.0];
            }
            for v in px {
                data.push((v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(s, s, 3, data).expect("consistent frame size")
}

/// Tones at fixed mel-band centers with trait-scaled amplitudes, plus noise.
pub fn synth_audio(traits: &[f64; 5], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cfg = LogMelConfig::default();
    let centers = band_centers_hz(&cfg);
    let rate = f64::from(cfg.sample_rate);
    let n = (SYNTH_DURATION_S * rate) as usize;
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let tones: f64 = SYNTH_TONE_BANDS
                .iter()
                .zip(traits)
                .zip(&phases)
                .map(|((&b, &v), &ph)| (0.02 + 0.15 * v) * (std::f64::consts::TAU * centers[b] * t + ph).sin())
                .sum();
            tones + rng.random_range(-0.005..0.005)
        })
        .collect()
}

/// Trait words repeated in proportion to the trait, padded with filler.
pub fn synth_transcript(traits: &[f64; 5], rng: &mut ChaCha8Rng) -> String {
    let mut tokens: Vec<&str> = Vec::with_capacity(TRANSCRIPT_TOKENS);
    for (w, v) in TRAIT_WORDS.iter().zip(traits) {
        tokens.extend(std::iter::repeat_n(*w, (20.0 * v).round() as usize));
    }
    while tokens.len() < TRANSCRIPT_TOKENS {
        tokens.push(FILLER[rng.random_range(0..FILLER.len())]);
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes `n` clips under `out` (`frames/<id>/NNNNNN.png`, `audio/<id>.wav`)
/// and `manifest.jsonl` with 3:1:1 splits.
pub fn generate_synthetic_dataset(n: usize, seed: u64, out: &Path) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::Validation("need at least one video".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LogMelConfig::default();
    let frames_per_clip = (SYNTH_DURATION_S * SYNTH_FPS).round() as usize;
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let id = format!("synth_{k:03}");
        let traits: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let mut media = ChaCha8Rng::seed_from_u64(rng.random());
        let frames_rel = PathBuf::from("frames").join(&id);
        let frames_dir = out.join(&frames_rel);
        std::fs::create_dir_all(&frames_dir).map_err(io(&frames_dir))?;
        for f in 0..frames_per_clip {
            synth_frame(&traits, f, &mut media).save_png(&frames_dir.join(format!("{f:06}.png")))?;
        }
        let audio_rel = PathBuf::from("audio").join(format!("{id}.wav"));
        let audio_path = out.join(&audio_rel);
        std::fs::create_dir_all(out.join("audio")).map_err(io(out))?;
        write_wav(&audio_path, &synth_audio(&traits, &mut media), cfg.sample_rate)?;
        records.push(VideoRecord {
            id,
            frames_path: frames_rel,
            audio_path: audio_rel,
            transcript: synth_transcript(&traits, &mut media),
            labels: Some(TraitVector::new(traits)?),
            split: Split::Train,
            duration_s: SYNTH_DURATION_S,
            fps: SYNTH_FPS,
        });
    }
    let sizes = proportional_sizes(n, DEFAULT_SPLIT_RATIO);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Validation
        } else {
            Split::Test
        };
    }
    let manifest = DatasetManifest {
        records,
        split_ratio: DEFAULT_SPLIT_RATIO,
    };
    let manifest_path = out.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    Ok(SyntheticDataset { manifest, manifest_path })
}
