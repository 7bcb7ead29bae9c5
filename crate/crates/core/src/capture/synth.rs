//! Procedural stand-in for the renderer.

use std::io::Cursor;

use image::{ImageBuffer, ImageFormat, Rgb};

use super::{Condition, TimeOfDay, Weather};
use crate::depth_codec::DepthMap;
use crate::geometry::Pose;
use crate::Result;

/// Produces the image payloads of a frame.
pub trait FrameSynthesizer: Send + Sync {
    /// Encoded PNG bytes of the color image.
    fn rgb_png(&self, pose: &Pose, condition: Condition) -> Result<Vec<u8>>;

    /// Raw inverse-log depth codes in `[0, 1]`.
    fn depth_codes(&self, pose: &Pose, condition: Condition) -> DepthMap;
}

/// Small gradient images whose colors depend on pose and condition, over a
/// tilted ground-plane depth field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProceduralSynthesizer {
    pub width: u32,
    pub height: u32,
}

impl Default for ProceduralSynthesizer {
    fn default() -> Self {
        Self {
            width: 32,
            height: 24,
        }
    }
}

fn brightness(condition: Condition) -> f64 {
    let base = match condition.time_of_day() {
        TimeOfDay::Day => 1.0,
        TimeOfDay::Night => 0.25,
    };
    let weather = match condition.weather() {
        Weather::Extrasunny | Weather::Clear => 1.0,
        Weather::Overcast => 0.75,
        Weather::Rain => 0.6,
    };
    base * weather
}

impl FrameSynthesizer for ProceduralSynthesizer {
    fn rgb_png(&self, pose: &Pose, condition: Condition) -> Result<Vec<u8>> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let gain = brightness(condition);
        let phase = pose.phi_z;
        let img = ImageBuffer::from_fn(self.width, self.height, |u, v| {
            let s = f64::from(u) / w;
            let t = f64::from(v) / h;
            let wave = |x: f64| 0.5 + 0.5 * x.sin();
            let r = wave(0.05 * pose.x + 6.0 * s + phase);
            let g = wave(0.05 * pose.y + 6.0 * t - phase);
            let b = wave(0.1 * pose.z + 3.0 * (s + t));
            let px = |c: f64| (255.0 * gain * c).round().clamp(0.0, 255.0) as u8;
            Rgb([px(r), px(g), px(b)])
        });
        let mut bytes = Vec::new();
        img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
        Ok(bytes)
    }

    fn depth_codes(&self, pose: &Pose, _condition: Condition) -> DepthMap {
        let (w, h) = (self.width as usize, self.height as usize);
        let values = (0..h)
            .flat_map(|v| {
                (0..w).map(move |u| {
                    // far at the top row, near at the bottom row
                    let t = v as f64 / (h.max(2) - 1) as f64;
                    let ripple = 0.05 * (0.1 * pose.x + u as f64 * 0.3).sin();
                    (0.1 + 0.8 * t + ripple).clamp(0.0, 1.0)
                })
            })
            .collect();
        DepthMap::new(w, h, values).expect("procedural codes are finite and in [0, 1]")
    }
}
