//! Face-crop extraction behind a pluggable detector.

use super::frames::FrameSequence;
use super::image::{resize_bilinear, Image, FRAME_SIZE};
use crate::error::{Error, Result};

/// Finds and aligns the face in a frame. Must be deterministic.
pub trait FaceDetector {
    /// Aligned face crop, or `None` when no face is found. Crops of other sizes
    /// are resized to 224x224.
    fn detect_and_align(&self, image: &Image) -> Option<Image>;
}

/// Treats the whole frame as the face.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughDetector;

impl FaceDetector for PassthroughDetector {
    fn detect_and_align(&self, image: &Image) -> Option<Image> {
        Some(resize_bilinear(image, FRAME_SIZE, FRAME_SIZE))
    }
}

/// Returns the centered square covering `fraction` of the shorter side.
#[derive(Debug, Clone, Copy)]
pub struct CenterRegionDetector {
    pub fraction: f64,
}

impl Default for CenterRegionDetector {
    fn default() -> Self {
        CenterRegionDetector { fraction: 0.5 }
    }
}

impl FaceDetector for CenterRegionDetector {
    fn detect_and_align(&self, image: &Image) -> Option<Image> {
        center_crop(image, self.fraction).ok()
    }
}

/// Centered square crop resized to 224x224.
pub fn center_crop(image: &Image, fraction: f64) -> Result<Image> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("crop fraction {fraction} outside (0, 1]")));
    }
    let side = ((image.height.min(image.width) as f64 * fraction).round() as usize).max(1);
    let y0 = (image.height - side) / 2;
    let x0 = (image.width - side) / 2;
    let crop = image.crop(y0, x0, side, side)?;
    Ok(resize_bilinear(&crop, FRAME_SIZE, FRAME_SIZE))
}

/// Runs the detector on every frame, keeping timestamps. A failed detection
/// reuses the previous crop, or a half-size center crop before the first
/// success.
pub fn extract_face_frames(frames: &FrameSequence, detector: &dyn FaceDetector) -> Result<FrameSequence> {
    let mut out = Vec::with_capacity(frames.len());
    let mut last: Option<Image> = None;
    let mut any = false;
    for frame in &frames.frames {
        let crop = match detector.detect_and_align(frame) {
            Some(face) => {
                any = true;
                resize_bilinear(&face, FRAME_SIZE, FRAME_SIZE)
            }
            None => match &last {
                Some(prev) => prev.clone(),
                None => center_crop(frame, 0.5)?,
            },
        };
        last = Some(crop.clone());
        out.push(crop);
    }
    if !any {
        return Err(Error::FaceAbsent(format!("no face found in {} frames", frames.len())));
    }
    Ok(FrameSequence {
        frames: out,
        timestamps_s: frames.timestamps_s.clone(),
    })
}
