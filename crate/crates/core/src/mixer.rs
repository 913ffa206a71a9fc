//! Superpixel sampling, binary mixing masks and the weak augmentations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, LabelMap, ProbMap};
use crate::rng::Rng;
use crate::superpixel::{compute_superpixels, Algorithm, SuperpixelMap};

/// Proportion that performed best in the proportion ablation; the default
/// stays at the neutral midpoint.
pub const ABLATION_BEST_PROPORTION: f64 = 0.6;

/// Probability of a horizontal flip in [`weak_augment`].
pub const FLIP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub n_superpixels: usize,
    /// Fraction of superpixels taken from the donor image. `0.0` disables
    /// mixing; otherwise it must lie in `(0, 1)`.
    pub proportion: f64,
    pub algo: Algorithm,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            n_superpixels: 200,
            proportion: 0.5,
            algo: Algorithm::Watershed,
            seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_superpixels < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_superpixels must be at least 2, got {}",
                self.n_superpixels
            )));
        }
        if !(0.0..1.0).contains(&self.proportion) {
            return Err(Error::InvalidArgument(format!(
                "proportion must be in [0, 1), got {}",
                self.proportion
            )));
        }
        Ok(())
    }

    /// Number of superpixels to take from the donor out of `n` available.
    ///
    /// `round(proportion · n)` clamped to `[1, n−1]`, except that a proportion
    /// of exactly zero takes none.
    pub fn superpixels_to_take(&self, n: usize) -> usize {
        if self.proportion == 0.0 || n == 0 {
            return 0;
        }
        let k = (self.proportion * n as f64).round() as usize;
        k.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Per-pixel binary selector: 1 takes the donor pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(height * width, bits.len()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidInput(format!("mask value {b} is not binary")));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, bit: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![u8::from(bit); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| 1 - b).collect(),
            ..*self
        }
    }
}

/// Draws a uniform `k`-subset of `0..sp.n()`.
///
/// Partial Fisher-Yates on the identity permutation: for `i in 0..k`, swap
/// position `i` with a uniform position in `[i, n)`; the first `k` entries are
/// returned in draw order.
pub fn sample_superpixels(sp: &SuperpixelMap, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    sample_indices(sp.n(), k, rng)
}

pub fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} of {n} superpixels"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.below(i, n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    Ok(idx)
}

/// Mask that is 1 exactly on the union of the selected superpixels.
pub fn mask_from_superpixels(sp: &SuperpixelMap, selected: &[usize]) -> Result<MixMask> {
    let mut take = vec![0u8; sp.n()];
    for &j in selected {
        if j >= sp.n() {
            return Err(Error::InvalidArgument(format!(
                "superpixel index {j} out of range for {} regions",
                sp.n()
            )));
        }
        take[j] = 1;
    }
    let bits = sp.ids().iter().map(|&id| take[id as usize]).collect();
    MixMask::new(sp.height(), sp.width(), bits)
}

/// `(1 − m) ⊙ x1 + m ⊙ x2`, which for a binary mask is a per-pixel selection.
pub fn mix_images<T: Copy>(
    x1: &ImageBuffer<T>,
    x2: &ImageBuffer<T>,
    mask: &MixMask,
) -> Result<ImageBuffer<T>> {
    if !x1.same_shape(x2) {
        return Err(Error::shape(x1.shape_string(), x2.shape_string()));
    }
    if x1.dims() != mask.dims() {
        return Err(Error::shape(
            format!("{}x{} mask", x1.height(), x1.width()),
            format!("{}x{} mask", mask.height(), mask.width()),
        ));
    }
    let ch = x1.channels();
    let data = x1
        .data()
        .chunks_exact(ch)
        .zip(x2.data().chunks_exact(ch))
        .zip(mask.bits())
        .flat_map(|((a, b), &m)| if m == 1 { b } else { a }.iter().copied())
        .collect();
    ImageBuffer::new(x1.height(), x1.width(), ch, data)
}

/// Pixel-wise selection between two probability maps.
pub fn mix_probmaps(y1: &ProbMap, y2: &ProbMap, mask: &MixMask) -> Result<ProbMap> {
    if y1.dims() != y2.dims() || y1.classes() != y2.classes() {
        return Err(Error::shape(
            format!("{}x{}x{}", y1.height(), y1.width(), y1.classes()),
            format!("{}x{}x{}", y2.height(), y2.width(), y2.classes()),
        ));
    }
    if y1.dims() != mask.dims() {
        return Err(Error::shape(
            format!("{}x{} mask", y1.height(), y1.width()),
            format!("{}x{} mask", mask.height(), mask.width()),
        ));
    }
    let probs = y1
        .pixels()
        .zip(y2.pixels())
        .zip(mask.bits())
        .flat_map(|((a, b), &m)| if m == 1 { b } else { a }.iter().copied())
        .collect();
    ProbMap::new(y1.height(), y1.width(), y1.classes(), probs)
}

/// One draw of the weak augmentation: optional flip, then a crop window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakAugment {
    pub flip: bool,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl WeakAugment {
    /// Draws, in this order, the flip bit (p = 0.5), the crop row and the crop column.
    pub fn sample(rng: &mut Rng, dims: (usize, usize), crop: (usize, usize)) -> Result<Self> {
        let ((h, w), (ch, cw)) = (dims, crop);
        if ch == 0 || cw == 0 || ch > h || cw > w {
            return Err(Error::InvalidArgument(format!(
                "crop {ch}x{cw} does not fit a {h}x{w} image"
            )));
        }
        let flip = rng.bernoulli(FLIP_PROBABILITY);
        let top = rng.inclusive(0, h - ch);
        let left = rng.inclusive(0, w - cw);
        Ok(Self {
            flip,
            top,
            left,
            height: ch,
            width: cw,
        })
    }

    pub fn apply_image<T: Copy>(&self, x: &ImageBuffer<T>) -> Result<ImageBuffer<T>> {
        let src = if self.flip { x.hflip() } else { x.clone() };
        src.crop(self.top, self.left, self.height, self.width)
    }

    pub fn apply_labels(&self, y: &LabelMap) -> Result<LabelMap> {
        let src = if self.flip { y.hflip() } else { y.clone() };
        src.crop(self.top, self.left, self.height, self.width)
    }

    /// Source pixel that lands at output `(row, col)`.
    pub fn source_of(&self, row: usize, col: usize, source_width: usize) -> (usize, usize) {
        let c = self.left + col;
        (self.top + row, if self.flip { source_width - 1 - c } else { c })
    }
}

/// Random horizontal flip (p = 0.5) followed by a uniform random crop, applied
/// identically to the image and, if present, its labels.
pub fn weak_augment<T: Copy>(
    x: &ImageBuffer<T>,
    y: Option<&LabelMap>,
    rng: &mut Rng,
    crop: (usize, usize),
) -> Result<(ImageBuffer<T>, Option<LabelMap>)> {
    if let Some(y) = y {
        if y.dims() != x.dims() {
            return Err(Error::shape(
                format!("{}x{} labels", x.height(), x.width()),
                format!("{}x{} labels", y.height(), y.width()),
            ));
        }
    }
    let aug = WeakAugment::sample(rng, x.dims(), crop)?;
    let xa = aug.apply_image(x)?;
    let ya = y.map(|y| aug.apply_labels(y)).transpose()?;
    Ok((xa, ya))
}

/// Superpixel-mix of `x1` (base) and `x2` (donor).
///
/// Superpixels are computed on `x1` only; `k` of them are drawn from `rng`
/// and their pixels are replaced by the donor's.
pub fn make_mix(
    x1: &ImageBuffer<u8>,
    x2: &ImageBuffer<u8>,
    cfg: &MixConfig,
    rng: &mut Rng,
) -> Result<(ImageBuffer<u8>, MixMask)> {
    cfg.validate()?;
    if !x1.same_shape(x2) {
        return Err(Error::shape(x1.shape_string(), x2.shape_string()));
    }
    let mask = mix_mask_for(x1, cfg, rng)?;
    let mixed = mix_images(x1, x2, &mask)?;
    Ok((mixed, mask))
}

/// The mask [`make_mix`] would use for base image `x1`.
pub fn mix_mask_for(x1: &ImageBuffer<u8>, cfg: &MixConfig, rng: &mut Rng) -> Result<MixMask> {
    if cfg.proportion == 0.0 {
        return Ok(MixMask::filled(x1.height(), x1.width(), false));
    }
    let n = cfg.n_superpixels.min(x1.pixel_count());
    let sp = compute_superpixels(x1, cfg.algo, n)?;
    let k = cfg.superpixels_to_take(sp.n());
    let selected = sample_superpixels(&sp, k, rng)?;
    mask_from_superpixels(&sp, &selected)
}
