//! Raster types and the pixel kernels that feed the watershed.

use crate::error::{Error, Result};

/// Label value excluded from every loss and metric.
pub const IGNORE_LABEL: u8 = 255;

/// Tolerance on the per-pixel sum of a [`ProbMap`] vector.
pub const PROB_SUM_TOL: f32 = 1e-5;

/// Row-major `height × width × channels` raster.
///
/// Samples are interleaved per pixel: the sample for `(row, col, ch)` lives at
/// `(row * width + col) * channels + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

pub type RgbImage = ImageBuffer<u8>;
pub type FloatImage = ImageBuffer<f32>;

impl<T: Copy> ImageBuffer<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidInput("image needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} samples ({height}x{width}x{channels})", height * width * channels),
                format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)` for every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Extracts channel `ch` as a single-channel image.
    pub fn channel(&self, ch: usize) -> Result<Self> {
        if ch >= self.channels {
            return Err(Error::InvalidArgument(format!(
                "channel {ch} out of range for {}-channel image",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[ch])
            .collect();
        Self::new(self.height, self.width, 1, data)
    }

    pub fn same_shape<U>(&self, other: &ImageBuffer<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    /// Mirrors the image left to right.
    pub fn hflip(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.extend_from_slice(self.pixel(r, c));
            }
        }
        Self { data, ..*self }
    }

    /// Copies the `height × width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in top..top + height {
            let start = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Self::new(height, width, self.channels, data)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> ImageBuffer<U> {
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Per-pixel class ids in `[0, K)`, or [`IGNORE_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::shape(height * width, labels.len()));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
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

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Fails if any non-ignore label is `>= classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= classes)
        {
            Some(l) => Err(Error::InvalidInput(format!(
                "label {l} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }

    pub fn hflip(&self) -> Self {
        let mut labels = Vec::with_capacity(self.labels.len());
        for row in self.labels.chunks_exact(self.width) {
            labels.extend(row.iter().rev());
        }
        Self { labels, ..*self }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} label map",
                self.height, self.width
            )));
        }
        let mut labels = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            labels.extend_from_slice(&self.labels[start..start + width]);
        }
        Self::new(height, width, labels)
    }
}

/// Per-pixel class probabilities, `height × width × classes`, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    probs: Vec<f32>,
}

impl ProbMap {
    /// Validates non-negativity and per-pixel normalisation.
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidInput(format!(
                "probability map must be non-empty, got {height}x{width}x{classes}"
            )));
        }
        if probs.len() != height * width * classes {
            return Err(Error::shape(height * width * classes, probs.len()));
        }
        for (i, px) in probs.chunks_exact(classes).enumerate() {
            if px.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "pixel {i} has a negative or non-finite probability"
                )));
            }
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "pixel {i} probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            probs,
        })
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            classes,
            vec![1.0 / classes as f32; height * width * classes],
        )
    }

    /// One-hot map from labels; ignore pixels become uniform.
    pub fn one_hot(labels: &LabelMap, classes: usize) -> Result<Self> {
        labels.check_classes(classes)?;
        let mut probs = vec![0.0; labels.labels().len() * classes];
        for (px, &l) in probs.chunks_exact_mut(classes).zip(labels.labels()) {
            if l == IGNORE_LABEL {
                px.fill(1.0 / classes as f32);
            } else {
                px[l as usize] = 1.0;
            }
        }
        Self::new(labels.height(), labels.width(), classes, probs)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.probs[index * self.classes..(index + 1) * self.classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.probs.chunks_exact(self.classes)
    }

    /// Per-pixel argmax; the lowest class index wins ties.
    pub fn argmax(&self) -> LabelMap {
        let labels = self.pixels().map(|px| argmax(px) as u8).collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

// sRGB primaries to XYZ under D65.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one 8-bit sRGB triple to CIE L*a*b* (D65).
///
/// The reference white is the XYZ image of sRGB white, so every gray maps to
/// `a* = b* = 0`.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    let lin = rgb.map(|v| srgb_to_linear(v as f64 / 255.0));
    let mut xyz = [0.0; 3];
    let mut white = [0.0; 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        white[i] = row[0] + row[1] + row[2];
    }
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

/// Converts an 8-bit RGB image to CIE L*a*b*.
pub fn rgb_to_lab(img: &ImageBuffer<u8>) -> Result<ImageBuffer<f32>> {
    if img.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "Lab conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| srgb_to_lab([px[0], px[1], px[2]]))
        .collect();
    ImageBuffer::new(img.height(), img.width(), 3, data)
}

/// Neighbourhood used by erosion and dilation, as `(d_row, d_col)` offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    offsets: Vec<(isize, isize)>,
    square_radius: Option<usize>,
}

impl StructuringElement {
    /// `(2r+1) × (2r+1)` square. `square(1)` is the 8-neighbourhood plus the centre.
    pub fn square(radius: usize) -> Self {
        let r = radius as isize;
        let offsets = (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .collect();
        Self {
            offsets,
            square_radius: Some(radius),
        }
    }

    /// Diamond of L1 radius `radius` (the 4-neighbourhood for radius 1).
    pub fn cross(radius: usize) -> Self {
        let r = radius as isize;
        let offsets = (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .filter(|(dr, dc)| dr.abs() + dc.abs() <= r)
            .collect();
        Self {
            offsets,
            square_radius: None,
        }
    }

    pub fn from_offsets(offsets: Vec<(isize, isize)>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidArgument("structuring element is empty".into()));
        }
        Ok(Self {
            offsets,
            square_radius: None,
        })
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(1)
    }
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

// Running max/min along rows then columns; valid because a square is separable.
fn separable_extrema(src: &[f32], height: usize, width: usize, r: usize) -> (Vec<f32>, Vec<f32>) {
    let r = r as isize;
    let mut hmax = vec![0.0; src.len()];
    let mut hmin = vec![0.0; src.len()];
    for row in 0..height {
        let line = &src[row * width..(row + 1) * width];
        for col in 0..width {
            let (mut hi, mut lo) = (f32::NEG_INFINITY, f32::INFINITY);
            for d in -r..=r {
                let v = line[clamp_index(col as isize + d, width)];
                hi = hi.max(v);
                lo = lo.min(v);
            }
            hmax[row * width + col] = hi;
            hmin[row * width + col] = lo;
        }
    }
    let mut dil = vec![0.0; src.len()];
    let mut ero = vec![0.0; src.len()];
    for row in 0..height {
        for col in 0..width {
            let (mut hi, mut lo) = (f32::NEG_INFINITY, f32::INFINITY);
            for d in -r..=r {
                let idx = clamp_index(row as isize + d, height) * width + col;
                hi = hi.max(hmax[idx]);
                lo = lo.min(hmin[idx]);
            }
            dil[row * width + col] = hi;
            ero[row * width + col] = lo;
        }
    }
    (dil, ero)
}

/// Dilation minus erosion under `se`, with edge replication at the borders.
pub fn morphological_gradient(
    channel: &ImageBuffer<f32>,
    se: &StructuringElement,
) -> Result<ImageBuffer<f32>> {
    if channel.channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "morphological gradient needs a single channel, got {}",
            channel.channels()
        )));
    }
    let (height, width) = channel.dims();
    let src = channel.data();
    let out = match se.square_radius {
        Some(r) => {
            let (dil, ero) = separable_extrema(src, height, width, r);
            dil.iter().zip(&ero).map(|(d, e)| d - e).collect()
        }
        None => {
            let mut out = Vec::with_capacity(src.len());
            for row in 0..height {
                for col in 0..width {
                    let (mut hi, mut lo) = (f32::NEG_INFINITY, f32::INFINITY);
                    for &(dr, dc) in se.offsets() {
                        let rr = clamp_index(row as isize + dr, height);
                        let cc = clamp_index(col as isize + dc, width);
                        let v = src[rr * width + cc];
                        hi = hi.max(v);
                        lo = lo.min(v);
                    }
                    out.push(hi - lo);
                }
            }
            out
        }
    };
    ImageBuffer::new(height, width, 1, out)
}

/// Mean of the three Lab-channel morphological gradients (3×3 square element).
pub fn gradient_for_watershed(img: &ImageBuffer<u8>) -> Result<ImageBuffer<f32>> {
    let lab = rgb_to_lab(img)?;
    lab_gradient(&lab)
}

/// Same as [`gradient_for_watershed`] for an image already in Lab.
pub fn lab_gradient(lab: &ImageBuffer<f32>) -> Result<ImageBuffer<f32>> {
    if lab.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "Lab gradient needs 3 channels, got {}",
            lab.channels()
        )));
    }
    let se = StructuringElement::default();
    let mut acc = vec![0.0f32; lab.pixel_count()];
    for ch in 0..3 {
        let g = morphological_gradient(&lab.channel(ch)?, &se)?;
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= 3.0);
    ImageBuffer::new(lab.height(), lab.width(), 1, acc)
}
