//! Synthetic segmentation scenes: coloured shapes over a textured background,
//! with additive Gaussian pixel noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, LabelMap};
use crate::rng::Rng;

/// Base colours; class 0 is the background.
const PALETTE: [[f64; 3]; 6] = [
    [105.0, 115.0, 95.0],
    [190.0, 60.0, 55.0],
    [55.0, 85.0, 190.0],
    [205.0, 190.0, 60.0],
    [60.0, 170.0, 75.0],
    [160.0, 70.0, 180.0],
];
pub const MAX_CLASSES: usize = PALETTE.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Labeled => 101,
            Split::Unlabeled => 102,
            Split::Test => 103,
        }
    }
}

/// Generator parameters for the three splits. Each split draws from its own
/// random stream, so the splits never share a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTask {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub noise_labeled: f64,
    pub noise_unlabeled: f64,
    pub noise_test: f64,
    pub seed: u64,
}

impl Default for SynthTask {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            classes: 3,
            n_labeled: 4,
            n_unlabeled: 32,
            n_test: 16,
            noise_labeled: 6.0,
            noise_unlabeled: 30.0,
            noise_test: 40.0,
            seed: 0,
        }
    }
}

pub type Dataset = Vec<(ImageBuffer<u8>, LabelMap)>;

impl SynthTask {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::InvalidArgument(format!(
                "synthetic task supports 2..={MAX_CLASSES} classes, got {}",
                self.classes
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument(format!(
                "synthetic scenes must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        for s in [self.noise_labeled, self.noise_unlabeled, self.noise_test] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise sigma {s} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn noise(&self, split: Split) -> f64 {
        match split {
            Split::Labeled => self.noise_labeled,
            Split::Unlabeled => self.noise_unlabeled,
            Split::Test => self.noise_test,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Labeled => self.n_labeled,
            Split::Unlabeled => self.n_unlabeled,
            Split::Test => self.n_test,
        }
    }

    pub fn generate(&self, split: Split) -> Result<Dataset> {
        self.validate()?;
        let mut rng = Rng::stream(self.seed, split.stream());
        (0..self.count(split))
            .map(|_| scene(&mut rng, self.height, self.width, self.classes, self.noise(split)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { top: f64, left: f64, h: f64, w: f64 },
    Disk { r: f64, c: f64, radius: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn contains(&self, r: f64, c: f64) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => r >= top && r < top + h && c >= left && c < left + w,
            Shape::Disk { r: cr, c: cc, radius } => (r - cr).powi(2) + (c - cc).powi(2) <= radius * radius,
            Shape::Triangle(v) => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (r - a.0) - (b.0 - a.0) * (c - a.1);
                let d = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                d.iter().all(|&x| x >= 0.0) || d.iter().all(|&x| x <= 0.0)
            }
        }
    }
}

/// One scene: 2 to 5 shapes of random foreground classes over a striped
/// background, then `N(0, noise²)` added to every sample.
pub fn scene(
    rng: &mut Rng,
    height: usize,
    width: usize,
    classes: usize,
    noise: f64,
) -> Result<(ImageBuffer<u8>, LabelMap)> {
    let (hf, wf) = (height as f64, width as f64);
    let freq = rng.range_f64(0.15, 0.5);
    let phase = rng.range_f64(0.0, std::f64::consts::TAU);
    let angle = rng.range_f64(0.0, std::f64::consts::PI);
    let shift = rng.range_f64(-12.0, 12.0);
    let (sa, ca) = angle.sin_cos();

    let mut colour = vec![[0.0f64; 3]; height * width];
    let mut labels = vec![0u8; height * width];
    for r in 0..height {
        for c in 0..width {
            let t = 18.0 * (freq * (r as f64 * sa + c as f64 * ca) + phase).sin();
            colour[r * width + c] = PALETTE[0].map(|v| v + shift + t);
        }
    }

    let n_shapes = rng.inclusive(2, 5);
    let min_side = (hf.min(wf) / 6.0).max(3.0);
    let max_side = (hf.min(wf) / 2.5).max(min_side + 1.0);
    for _ in 0..n_shapes {
        let class = rng.inclusive(1, classes - 1);
        let jitter = [0; 3].map(|_| rng.range_f64(-15.0, 15.0));
        let fill = PALETTE[class]
            .iter()
            .zip(jitter)
            .map(|(b, j)| b + j)
            .collect::<Vec<_>>();
        let size = rng.range_f64(min_side, max_side);
        let (r0, c0) = (rng.range_f64(0.0, hf - size), rng.range_f64(0.0, wf - size));
        let shape = match rng.below(0, 3) {
            0 => Shape::Rect {
                top: r0,
                left: c0,
                h: size,
                w: rng.range_f64(min_side, max_side),
            },
            1 => Shape::Disk {
                r: r0 + size / 2.0,
                c: c0 + size / 2.0,
                radius: size / 2.0,
            },
            _ => Shape::Triangle([
                (r0, c0 + rng.range_f64(0.0, size)),
                (r0 + size, c0),
                (r0 + size, c0 + size),
            ]),
        };
        for r in 0..height {
            for c in 0..width {
                if shape.contains(r as f64 + 0.5, c as f64 + 0.5) {
                    let p = r * width + c;
                    colour[p] = [fill[0], fill[1], fill[2]];
                    labels[p] = class as u8;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(height * width * 3);
    for px in &colour {
        for &v in px {
            let noisy = if noise > 0.0 { v + noise * rng.normal() } else { v };
            data.push(noisy.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((
        ImageBuffer::new(height, width, 3, data)?,
        LabelMap::new(height, width, labels)?,
    ))
}
