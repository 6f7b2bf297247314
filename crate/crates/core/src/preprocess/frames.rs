//! One-frame-per-second sampling at the midpoint of each whole second.

use std::path::{Path, PathBuf};

use super::image::{resize_and_scale, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Image>,
    pub timestamps_s: Vec<f64>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// First `n` frames (all of them when shorter).
    pub fn head(&self, n: usize) -> FrameSequence {
        let n = n.min(self.len());
        FrameSequence {
            frames: self.frames[..n].to_vec(),
            timestamps_s: self.timestamps_s[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledFrame {
    /// Nominal sampling time `k + 0.5`.
    pub target_s: f64,
    pub index: usize,
    /// Presentation time of the chosen source frame.
    pub time_s: f64,
}

/// Chooses the source frame nearest each `t_k = k + 0.5`, `k < floor(duration)`.
/// Indices past the last available frame are clamped to it.
pub fn sample_frame_indices(n_available: usize, fps: f64, duration_s: f64) -> Result<Vec<SampledFrame>> {
    if !(fps > 0.0 && fps.is_finite()) || !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Validation(format!("fps {fps} / duration {duration_s} must be positive")));
    }
    if n_available == 0 {
        return Err(Error::EmptyMedia("no frames available".into()));
    }
    let count = duration_s.floor() as usize;
    if count == 0 {
        return Err(Error::EmptyMedia(format!("clip of {duration_s} s is shorter than one second")));
    }
    Ok((0..count)
        .map(|k| {
            let target_s = k as f64 + 0.5;
            let index = ((target_s * fps).round() as usize).min(n_available - 1);
            SampledFrame {
                target_s,
                index,
                time_s: index as f64 / fps,
            }
        })
        .collect())
}

/// Picks frames from a decoded clip; no resizing.
pub fn sample_frames(frames: &[Image], fps: f64, duration_s: f64) -> Result<FrameSequence> {
    let picks = sample_frame_indices(frames.len(), fps, duration_s)?;
    Ok(FrameSequence {
        frames: picks.iter().map(|p| frames[p.index].clone()).collect(),
        timestamps_s: picks.iter().map(|p| p.time_s).collect(),
    })
}

/// Frame files in a directory, ordered by the numeric index in their stem.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(u64, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            let idx = p.file_stem()?.to_str()?.parse::<u64>().ok()?;
            Some((idx, p))
        })
        .collect();
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// Loads only the sampled frames from a frame directory and prepares them
/// (224x224, scaled to `[0, 1]`).
pub fn load_sampled_frames(dir: &Path, fps: f64, duration_s: f64) -> Result<FrameSequence> {
    let files = list_frame_files(dir)?;
    let picks = sample_frame_indices(files.len(), fps, duration_s)?;
    let mut frames = Vec::with_capacity(picks.len());
    for p in &picks {
        frames.push(resize_and_scale(&Image::load(&files[p.index])?, 255.0)?);
    }
    Ok(FrameSequence {
        frames,
        timestamps_s: picks.iter().map(|p| p.time_s).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_seconds_at_thirty_fps() {
        let picks = sample_frame_indices(450, 30.0, 15.0).unwrap();
        assert_eq!(picks.len(), 15);
        for (k, p) in picks.iter().enumerate() {
            assert_eq!(p.target_s, k as f64 + 0.5);
            assert_eq!(p.time_s, k as f64 + 0.5);
        }
    }

    #[test]
    fn twenty_four_fps_indices_by_enumeration() {
        let picks = sample_frame_indices(360, 24.0, 15.0).unwrap();
        for (k, p) in picks.iter().enumerate() {
            let t = k as f64 + 0.5;
            // nearest frame by exhaustive search
            let best = (0..360usize)
                .min_by(|&a, &b| {
                    let da = (a as f64 / 24.0 - t).abs();
                    let db = (b as f64 / 24.0 - t).abs();
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap();
            assert_eq!(p.index, best);
            assert_eq!(p.index, (t * 24.0).round() as usize);
        }
    }

    #[test]
    fn short_clip_rejected() {
        assert!(matches!(sample_frame_indices(24, 30.0, 0.8), Err(Error::EmptyMedia(_))));
        assert!(matches!(sample_frame_indices(0, 30.0, 5.0), Err(Error::EmptyMedia(_))));
    }

    #[test]
    fn sample_frames_picks_nearest() {
        let frames: Vec<Image> = (0..20).map(|i| Image::filled(2, 2, [i as f64; 3])).collect();
        let seq = sample_frames(&frames, 4.0, 5.0).unwrap();
        let picked: Vec<f64> = seq.frames.iter().map(|f| f.data[0]).collect();
        assert_eq!(picked, vec![2.0, 6.0, 10.0, 14.0, 18.0]);
    }
}
