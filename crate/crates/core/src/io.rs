//! File formats: 8-bit RGB and label PNGs, 16-bit superpixel PNGs, 0/255 mask
//! PNGs, raw `PMAP` probability maps and `TMDL` model checkpoints.
//!
//! Both binary formats start with a 16-byte header: four magic bytes followed
//! by three little-endian `u32`, then the payload as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer as PngBuffer, Luma, RgbImage};

use crate::consistency::{ToyModel, FEATURES};
use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, LabelMap, ProbMap};
use crate::mixer::MixMask;
use crate::superpixel::SuperpixelMap;

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const TMDL_MAGIC: &[u8; 4] = b"TMDL";
const HEADER_LEN: usize = 16;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(image_err(path))
}

fn save_png(path: &Path, img: DynamicImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(image_err(path))?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads a PNG as 8-bit RGB. Gray and alpha images are converted.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<ImageBuffer<u8>> {
    let path = path.as_ref();
    let img = open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::new(h as usize, w as usize, 3, img.into_raw())
}

pub fn write_rgb(path: impl AsRef<Path>, img: &ImageBuffer<u8>) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "RGB PNG needs 3 channels, got {}",
            img.channels()
        )));
    }
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer length matches dimensions");
    save_png(path, DynamicImage::ImageRgb8(buf))
}

fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok((h as usize, w as usize, g.into_raw()))
        }
        other => Err(format_err(
            path,
            format!("expected 8-bit grayscale PNG, got {:?}", other.color()),
        )),
    }
}

fn write_gray8(path: &Path, height: usize, width: usize, data: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, data).expect("buffer length matches dimensions");
    save_png(path, DynamicImage::ImageLuma8(buf))
}

/// Single-channel 8-bit PNG; 255 marks ignored pixels.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (h, w, data) = read_gray8(path.as_ref())?;
    LabelMap::new(h, w, data)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_gray8(path.as_ref(), labels.height(), labels.width(), labels.labels().to_vec())
}

/// Mask PNG with 0 for the first image and 255 for the second. Any non-zero
/// value reads back as set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MixMask> {
    let (h, w, data) = read_gray8(path.as_ref())?;
    MixMask::new(h, w, data.into_iter().map(|v| (v != 0) as u8).collect())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MixMask) -> Result<()> {
    let data = mask.bits().iter().map(|&b| b * 255).collect();
    write_gray8(path.as_ref(), mask.height(), mask.width(), data)
}

/// Region ids as a 16-bit grayscale PNG.
pub fn write_superpixels(path: impl AsRef<Path>, sp: &SuperpixelMap) -> Result<()> {
    let path = path.as_ref();
    if sp.n() > 1 << 16 {
        return Err(Error::InvalidInput(format!(
            "{} regions do not fit a 16-bit PNG",
            sp.n()
        )));
    }
    let data = sp.ids().iter().map(|&id| id as u16).collect();
    let buf = PngBuffer::<Luma<u16>, Vec<u16>>::from_raw(sp.width() as u32, sp.height() as u32, data)
        .expect("buffer length matches dimensions");
    save_png(path, DynamicImage::ImageLuma16(buf))
}

pub fn read_superpixels(path: impl AsRef<Path>) -> Result<SuperpixelMap> {
    let path = path.as_ref();
    match open(path)? {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            let ids = g.into_raw().into_iter().map(u32::from).collect();
            SuperpixelMap::new(h as usize, w as usize, ids)
        }
        other => Err(format_err(
            path,
            format!("expected 16-bit grayscale PNG, got {:?}", other.color()),
        )),
    }
}

fn encode(magic: &[u8; 4], dims: [u32; 3], payload: impl Iterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(path: &Path, magic: &[u8; 4], bytes: &[u8]) -> Result<([u32; 3], Vec<f32>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != magic {
        return Err(format_err(
            path,
            format!("missing {} header", String::from_utf8_lossy(magic)),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(4) {
        return Err(format_err(path, "payload is not a whole number of f32 values"));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(([word(0), word(1), word(2)], values))
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("dimension {v} exceeds u32")))
}

/// `PMAP` header with `H, W, K`, then `H·W·K` probabilities, pixel-major.
pub fn encode_probmap(p: &ProbMap) -> Result<Vec<u8>> {
    let dims = [dim_u32(p.height())?, dim_u32(p.width())?, dim_u32(p.classes())?];
    Ok(encode(PMAP_MAGIC, dims, p.probs().iter().copied()))
}

pub fn write_probmap(path: impl AsRef<Path>, p: &ProbMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_probmap(p)?).map_err(io_err(path))
}

pub fn read_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let ([h, w, k], probs) = decode(path, PMAP_MAGIC, &bytes)?;
    let (h, w, k) = (h as usize, w as usize, k as usize);
    if probs.len() != h * w * k {
        return Err(format_err(
            path,
            format!("header says {h}x{w}x{k} but payload has {} values", probs.len()),
        ));
    }
    ProbMap::new(h, w, k, probs).map_err(|e| format_err(path, e.to_string()))
}

/// `TMDL` header with `K, F` and a zero word, then the `K × F` weights
/// row-major, rounded to `f32`.
pub fn encode_checkpoint(model: &ToyModel) -> Result<Vec<u8>> {
    let dims = [dim_u32(model.classes())?, FEATURES as u32, 0];
    Ok(encode(TMDL_MAGIC, dims, model.weights().iter().map(|&w| w as f32)))
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &ToyModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(io_err(path))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ToyModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let ([k, f, _], weights) = decode(path, TMDL_MAGIC, &bytes)?;
    if f as usize != FEATURES {
        return Err(format_err(path, format!("expected {FEATURES} features, got {f}")));
    }
    ToyModel::from_weights(k as usize, weights.into_iter().map(f64::from).collect())
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Regular files in `dir` with the given extension, sorted by file name.
pub fn list_files(dir: impl AsRef<Path>, extension: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let matches = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case(extension));
        if path.is_file() && matches {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// File stem used to pair files across directories.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
