//! Log mel-spectrogram frontend in the style of VGGish: 25 ms periodic-Hann
//! windows every 10 ms, 512-point magnitude spectra, 64 HTK-mel bands over
//! 125..7500 Hz, `ln(mel + 0.01)`, cut into non-overlapping 96-frame patches.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub bands: usize,
    pub min_hz: f64,
    pub max_hz: f64,
    pub log_offset: f64,
    pub patch_frames: usize,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            sample_rate: 16_000,
            window: 400,
            hop: 160,
            fft_size: 512,
            bands: 64,
            min_hz: 125.0,
            max_hz: 7500.0,
            log_offset: 0.01,
            patch_frames: 96,
        }
    }
}

impl LogMelConfig {
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            1 + (samples - self.window) / self.hop
        }
    }

    pub fn patch_seconds(&self) -> f64 {
        (self.patch_frames * self.hop) as f64 / self.sample_rate as f64
    }
}

/// Patches of `patch_frames x bands` log energies, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelPatches {
    pub patches: Vec<Vec<f64>>,
    pub config: LogMelConfig,
}

impl LogMelPatches {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.config.patch_frames * self.config.bands
    }

    /// `[start, end)` in seconds covered by patch `i`.
    pub fn patch_span(&self, i: usize) -> (f64, f64) {
        let d = self.config.patch_seconds();
        (i as f64 * d, (i + 1) as f64 * d)
    }

    pub fn head(&self, n: usize) -> LogMelPatches {
        LogMelPatches {
            patches: self.patches[..n.min(self.len())].to_vec(),
            config: self.config,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Center frequency of each mel band.
pub fn band_centers_hz(config: &LogMelConfig) -> Vec<f64> {
    let edges = band_edges_mel(config);
    (0..config.bands).map(|b| mel_to_hz(edges[b + 1])).collect()
}

fn band_edges_mel(config: &LogMelConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.min_hz);
    let hi = hz_to_mel(config.max_hz);
    let n = config.bands + 1;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// `bands x (fft_size/2 + 1)` triangular weights with unit peaks; the DC bin is zero.
pub fn mel_filterbank(config: &LogMelConfig) -> Vec<Vec<f64>> {
    let bins = config.fft_size / 2 + 1;
    let nyquist = config.sample_rate as f64 / 2.0;
    let bin_mel: Vec<f64> = (0..bins)
        .map(|k| hz_to_mel(nyquist * k as f64 / (bins - 1) as f64))
        .collect();
    let edges = band_edges_mel(config);
    (0..config.bands)
        .map(|b| {
            let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            bin_mel
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    if k == 0 {
                        return 0.0;
                    }
                    let up = (m - lo) / (c - lo);
                    let down = (hi - m) / (hi - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

struct Frontend {
    config: LogMelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: Vec<Vec<(usize, f64)>>,
}

impl Frontend {
    fn new(config: LogMelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let n = config.window;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let bank = mel_filterbank(&config)
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect())
            .collect();
        Frontend {
            config,
            fft,
            window,
            bank,
        }
    }

    fn frame(&self, samples: &[f64], out: &mut Vec<f64>) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        for (b, (s, w)) in buf.iter_mut().zip(samples.iter().zip(&self.window)) {
            b.re = s * w;
        }
        self.fft.process(&mut buf);
        for row in &self.bank {
            let e: f64 = row.iter().map(|&(k, w)| w * buf[k].norm()).sum();
            out.push((e + self.config.log_offset).ln());
        }
    }
}

/// Log-mel patches for a mono waveform already at `config.sample_rate`.
pub fn compute_log_mel(samples: &[f64], sample_rate: u32, config: &LogMelConfig) -> Result<LogMelPatches> {
    if samples.is_empty() {
        return Err(Error::EmptyMedia("empty waveform".into()));
    }
    if sample_rate != config.sample_rate {
        return Err(Error::Format(format!(
            "waveform at {sample_rate} Hz, frontend expects {} Hz",
            config.sample_rate
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Format("non-finite audio sample".into()));
    }
    let frontend = Frontend::new(*config);
    let n_patches = config.frame_count(samples.len()) / config.patch_frames;
    let mut patches = Vec::with_capacity(n_patches);
    for p in 0..n_patches {
        let mut patch = Vec::with_capacity(config.patch_frames * config.bands);
        for f in 0..config.patch_frames {
            let start = (p * config.patch_frames + f) * config.hop;
            frontend.frame(&samples[start..start + config.window], &mut patch);
        }
        patches.push(patch);
    }
    Ok(LogMelPatches {
        patches,
        config: *config,
    })
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = (samples.len() as u64 * to_hz as u64 / from_hz as u64) as usize;
    let ratio = from_hz as f64 / to_hz as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(samples.len() - 1);
            let f = pos - i0 as f64;
            samples[i0.min(samples.len() - 1)] * (1.0 - f) + samples[i1] * f
        })
        .collect()
}

/// Reads a WAV file as mono `[-1, 1]` samples (channels averaged).
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let fmt_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(fmt_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(fmt_err)?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let mono = interleaved
        .chunks_exact(ch)
        .map(|c| c.iter().sum::<f64>() / ch as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fmt_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(fmt_err)?;
    for s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(fmt_err)?;
    }
    w.finalize().map_err(fmt_err)
}

/// Reads, downmixes and resamples an audio file, then computes log-mel patches.
pub fn load_log_mel(path: &Path, config: &LogMelConfig) -> Result<LogMelPatches> {
    let (samples, rate) = read_wav(path)?;
    let samples = resample_linear(&samples, rate, config.sample_rate);
    compute_log_mel(&samples, config.sample_rate, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, samples: usize) -> Vec<f64> {
        (0..samples).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()).collect()
    }

    /// Naive DFT magnitude and per-band triangle evaluation.
    fn brute_force_bands(frame: &[f64], cfg: &LogMelConfig) -> Vec<f64> {
        let n = cfg.fft_size;
        let bins = n / 2 + 1;
        let mut mag = vec![0.0; bins];
        for (k, m) in mag.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, s) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.window as f64).cos();
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += s * w * a.cos();
                im += s * w * a.sin();
            }
            *m = (re * re + im * im).sqrt();
        }
        let lo = hz_to_mel(cfg.min_hz);
        let hi = hz_to_mel(cfg.max_hz);
        let step = (hi - lo) / (cfg.bands + 1) as f64;
        (0..cfg.bands)
            .map(|b| {
                let (l, c, h) = (lo + step * b as f64, lo + step * (b + 1) as f64, lo + step * (b + 2) as f64);
                (1..bins)
                    .map(|k| {
                        let m = hz_to_mel(8000.0 * k as f64 / (bins - 1) as f64);
                        let w = if m > l && m <= c {
                            (m - l) / (c - l)
                        } else if m > c && m < h {
                            (h - m) / (h - c)
                        } else {
                            0.0
                        };
                        w * mag[k]
                    })
                    .sum()
            })
            .collect()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    #[test]
    fn one_patch_from_96_frames() {
        let cfg = LogMelConfig::default();
        let n = 400 + 95 * 160;
        assert_eq!(n, 15_600);
        assert_eq!(cfg.frame_count(n), 96);
        let out = compute_log_mel(&vec![0.01; n], 16_000, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.patches[0].len(), 96 * 64);
        assert_eq!(compute_log_mel(&vec![0.0; n - 1], 16_000, &cfg).unwrap().len(), 0);
    }

    #[test]
    fn silence_is_log_offset() {
        let cfg = LogMelConfig::default();
        let out = compute_log_mel(&vec![0.0; 32_000], 16_000, &cfg).unwrap();
        assert_eq!(out.len(), 2);
        for p in &out.patches {
            assert!(p.iter().all(|&v| v == 0.01f64.ln()));
        }
    }

    #[test]
    fn tone_argmax_matches_bruteforce() {
        let cfg = LogMelConfig::default();
        let centers = band_centers_hz(&cfg);
        for band in [3, 12, 22, 40, 63] {
            let samples = tone(centers[band], 16_000);
            let out = compute_log_mel(&samples, 16_000, &cfg).unwrap();
            let oracle = brute_force_bands(&samples[..400], &cfg);
            let first = &out.patches[0][..64];
            assert_eq!(argmax(first), argmax(&oracle));
            for (a, b) in first.iter().zip(&oracle) {
                assert!((a - (b + 0.01).ln()).abs() < 1e-9);
            }
            if band >= 12 {
                for f in 0..96 {
                    assert_eq!(argmax(&out.patches[0][f * 64..(f + 1) * 64]), band);
                }
            }
        }
    }

    #[test]
    fn filterbank_rows_are_contiguous_and_bounded() {
        let cfg = LogMelConfig::default();
        let bank = mel_filterbank(&cfg);
        for row in &bank {
            let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert!(row.iter().all(|&w| w >= 0.0));
            if let (Some(a), Some(b)) = (nz.first(), nz.last()) {
                assert_eq!(b - a + 1, nz.len());
            }
        }
        for k in 0..bank[0].len() {
            for b in 1..bank.len() {
                assert!(bank[b - 1][k] + bank[b][k] <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn errors() {
        let cfg = LogMelConfig::default();
        assert!(matches!(compute_log_mel(&[], 16_000, &cfg), Err(Error::EmptyMedia(_))));
        assert!(matches!(compute_log_mel(&[0.0; 500], 44_100, &cfg), Err(Error::Format(_))));
    }

    #[test]
    fn resample_preserves_constant_and_length() {
        let out = resample_linear(&[0.25; 44_100], 44_100, 16_000);
        assert_eq!(out.len(), 16_000);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples = tone(440.0, 1600);
        write_wav(&path, &samples, 16_000).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
