//! On-disk formats.
//!
//! * Images: PNG or JPEG, converted to unit-range RGB channels.
//! * Segmentation maps: single-channel 8- or 16-bit PNG of integer labels.
//! * Masks and condition images: 8-bit grayscale PNG, 255 on set pixels.
//! * Latents: magic `VPLT0001`, `u32` rank, `u32` per dimension, then
//!   little-endian `f32` values in row-major order.
//! * Schedules: JSON `{"T": n, "alpha_bar": [...]}`.
//! * VP sidecars: JSON `{"vps": [[x, y, w], ...]}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageEncoder};
use serde::{Deserialize, Serialize};
use vpkit_core::edge::to_grayscale;
use vpkit_core::guidance::{DiffusionSchedule, LatentTensor};
use vpkit_core::outline::{OutlineEdge, SegmentationMap};
use vpkit_core::{BinaryImage, HomogeneousPoint, ScalarField};

use crate::error::{AppError, AppResult};

pub const LATENT_MAGIC: &[u8; 8] = b"VPLT0001";

fn ctx<T, E: Into<AppError>>(r: Result<T, E>, path: &Path) -> AppResult<T> {
    r.map_err(|e| e.into().context(path.display()))
}

pub fn read_bytes(path: &Path) -> AppResult<Vec<u8>> {
    ctx(fs::read(path), path)
}

/// RGB channels with values in `[0, 1]`.
pub fn image_channels(img: &DynamicImage) -> Vec<ScalarField> {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    (0..3)
        .map(|c| ScalarField::from_fn(w, h, |x, y| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0))
        .collect()
}

pub fn read_image(path: &Path) -> AppResult<DynamicImage> {
    ctx(image::open(path), path)
}

/// Luma in `[0, 1]`.
pub fn read_gray(path: &Path) -> AppResult<ScalarField> {
    let img = read_image(path)?;
    Ok(to_grayscale(&image_channels(&img))?)
}

/// Quantizes a unit-range field to an 8-bit grayscale PNG.
pub fn gray_png_bytes(field: &ScalarField) -> AppResult<Vec<u8>> {
    let px: Vec<u8> = field.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    encode_gray(field.width(), field.height(), px)
}

pub fn binary_png_bytes(img: &BinaryImage) -> AppResult<Vec<u8>> {
    encode_gray(img.width(), img.height(), img.to_u8())
}

fn encode_gray(width: usize, height: usize, px: Vec<u8>) -> AppResult<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        &px,
        width as u32,
        height as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}

/// Pixels with luma ≥ 128 are set.
pub fn read_binary_png(path: &Path) -> AppResult<BinaryImage> {
    let g = read_image(path)?.to_luma8();
    let bits = g.pixels().map(|p| p[0] >= 128).collect();
    Ok(BinaryImage::from_bits(g.width() as usize, g.height() as usize, bits)?)
}

pub fn read_segmentation(path: &Path) -> AppResult<SegmentationMap> {
    let img = read_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p[0] as u32).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p[0] as u32).collect(),
        _ => return Err(AppError::validation("segmentation map must be single-channel").context(path.display())),
    };
    Ok(SegmentationMap::new(w, h, labels)?)
}

pub fn segmentation_png_bytes(map: &SegmentationMap) -> AppResult<Vec<u8>> {
    let max = map.labels().iter().copied().max().unwrap_or(0);
    if max > 255 {
        return Err(AppError::validation("labels above 255 need a 16-bit map"));
    }
    let img = GrayImage::from_raw(map.width() as u32, map.height() as u32, map.labels().iter().map(|l| *l as u8).collect())
        .ok_or_else(|| AppError::internal("label buffer size"))?;
    encode_gray(map.width(), map.height(), img.into_raw())
}

pub fn encode_latent(t: &LatentTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_latent(bytes: &[u8]) -> AppResult<LatentTensor> {
    let bad = |m: &str| AppError::validation(format!("malformed latent file: {m}"));
    if bytes.len() < 12 || &bytes[..8] != LATENT_MAGIC {
        return Err(bad("missing VPLT0001 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let rank = word(8);
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated shape"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| word(12 + 4 * i)).collect();
    let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| bad("shape overflows"))?;
    if bytes.len() != header + 4 * n {
        return Err(bad("payload length does not match shape"));
    }
    let data = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(LatentTensor::new(shape, data)?)
}

pub fn read_latent(path: &Path) -> AppResult<LatentTensor> {
    decode_latent(&read_bytes(path)?).map_err(|e| e.context(path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> AppResult<T> {
    let bytes = read_bytes(path)?;
    ctx(serde_json::from_slice(&bytes), path)
}

pub fn read_schedule(path: &Path) -> AppResult<DiffusionSchedule> {
    read_json(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpSidecar {
    pub vps: Vec<HomogeneousPoint>,
}

pub fn read_vps(path: &Path) -> AppResult<Vec<HomogeneousPoint>> {
    Ok(read_json::<VpSidecar>(path)?.vps)
}

/// One selected outline edge as written to `<id>.outlines.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlineRecord {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub vp_index: usize,
    pub deviation_deg: f64,
}

impl From<&OutlineEdge> for OutlineRecord {
    fn from(e: &OutlineEdge) -> Self {
        Self {
            p0: e.seg.p0().into(),
            p1: e.seg.p1().into(),
            vp_index: e.vp_index,
            deviation_deg: e.deviation.to_degrees(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> AppResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| AppError::internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers see either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> AppResult<()> {
    atomic_write_with(path, bytes, |_| Ok(()))
}

/// [`atomic_write`] with a hook that runs after the payload is written and
/// before the rename.
pub fn atomic_write_with(
    path: &Path,
    bytes: &[u8],
    before_rename: impl FnOnce(&mut fs::File) -> std::io::Result<()>,
) -> AppResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ctx(fs::create_dir_all(dir), dir)?;
    let mut tmp = ctx(tempfile::Builder::new().prefix(TEMP_PREFIX).suffix(".tmp").tempfile_in(dir), dir)?;
    ctx(tmp.write_all(bytes), path)?;
    ctx(before_rename(tmp.as_file_mut()), path)?;
    ctx(tmp.as_file().sync_all(), path)?;
    tmp.persist(path).map_err(|e| AppError::from(e.error).context(path.display()))?;
    Ok(())
}

/// Name prefix of in-flight temporary files.
pub const TEMP_PREFIX: &str = ".vpkit-";
