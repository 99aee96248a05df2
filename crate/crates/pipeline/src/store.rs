//! On-disk artifact formats.
//!
//! * Raw arrays: little-endian `f32`, row-major with the first axis slowest,
//!   plus a JSON sidecar with dimensions, axis names and value statistics.
//! * Frame stacks: one 16-bit grayscale PNG per angle plus `frames.json`.
//! * Everything else: pretty-printed JSON.

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vunwrap_core::projection::{Geometry, IntensityFrame};
use vunwrap_core::{Error, Image2D, Result};

pub const RAW_DTYPE: &str = "f32le";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub dtype: String,
    pub dims: Vec<usize>,
    /// Axis names, slowest first.
    pub axes: Vec<String>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Producer-specific metadata.
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Paths of the `.f32` payload and `.json` sidecar for `stem`.
pub fn raw_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f32"), stem.with_extension("json"))
}

/// Writes `images` stacked along a leading axis (or a single 2-D array when
/// `axes` has two names).
pub fn write_raw(stem: &Path, images: &[Image2D], axes: &[&str], extra: serde_json::Value) -> Result<RawMeta> {
    let first = images.first().ok_or_else(|| Error::Shape("nothing to write".into()))?;
    let (rows, cols) = first.dim();
    if images.iter().any(|i| i.dim() != (rows, cols)) {
        return Err(Error::Shape("raw stack images differ in size".into()));
    }
    let dims = match axes.len() {
        2 if images.len() == 1 => vec![rows, cols],
        3 => vec![images.len(), rows, cols],
        _ => return Err(Error::Shape(format!("{} axes for {} images", axes.len(), images.len()))),
    };
    let mut bytes = Vec::with_capacity(images.len() * rows * cols * 4);
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for img in images {
        for &v in img.as_slice() {
            let v32 = v as f32;
            bytes.extend_from_slice(&v32.to_le_bytes());
            lo = lo.min(v32 as f64);
            hi = hi.max(v32 as f64);
            sum += v32 as f64;
        }
    }
    let meta = RawMeta {
        dtype: RAW_DTYPE.into(),
        dims,
        axes: axes.iter().map(|s| s.to_string()).collect(),
        min: lo,
        max: hi,
        mean: sum / (images.len() * rows * cols) as f64,
        extra,
    };
    let (data_path, meta_path) = raw_paths(stem);
    write_bytes(&data_path, &bytes)?;
    write_json(&meta_path, &meta)?;
    Ok(meta)
}

fn read_raw_meta(stem: &Path) -> Result<(RawMeta, usize, usize, usize)> {
    let meta_path = raw_paths(stem).1;
    let meta: RawMeta = read_json(&meta_path)?;
    if meta.dtype != RAW_DTYPE {
        return Err(Error::format(&meta_path, format!("unsupported dtype {}", meta.dtype)));
    }
    let (count, rows, cols) = match meta.dims[..] {
        [r, c] => (1, r, c),
        [z, r, c] => (z, r, c),
        _ => return Err(Error::format(&meta_path, format!("unsupported dims {:?}", meta.dims))),
    };
    Ok((meta, count, rows, cols))
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect()
}

/// Reads a raw array back as a list of 2-D images along the leading axis.
pub fn read_raw(stem: &Path) -> Result<(Vec<Image2D>, RawMeta)> {
    let (meta, count, rows, cols) = read_raw_meta(stem)?;
    let data_path = raw_paths(stem).0;
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != count * rows * cols * 4 {
        return Err(Error::format(
            &data_path,
            format!("{} bytes, expected {} for dims {:?}", bytes.len(), count * rows * cols * 4, meta.dims),
        ));
    }
    let images = decode_f32(&bytes)
        .chunks_exact(rows * cols)
        .map(|chunk| Image2D::from_vec(rows, cols, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((images, meta))
}

/// Reads image `index` along the leading axis without loading the rest.
pub fn read_raw_frame(stem: &Path, index: usize) -> Result<(Image2D, RawMeta)> {
    let (meta, count, rows, cols) = read_raw_meta(stem)?;
    if index >= count {
        return Err(Error::Range {
            what: "raw frame",
            index,
            len: count,
        });
    }
    let data_path = raw_paths(stem).0;
    let mut file = fs::File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let frame_bytes = rows * cols * 4;
    let mut buf = vec![0u8; frame_bytes];
    file.seek(SeekFrom::Start((index * frame_bytes) as u64))
        .and_then(|_| file.read_exact(&mut buf))
        .map_err(|e| Error::io(&data_path, e))?;
    Ok((Image2D::from_vec(rows, cols, decode_f32(&buf))?, meta))
}

/// 16-bit grayscale PNG of `image`, mapping `[0, scale]` onto `[0, 65535]`.
pub fn write_png16(path: &Path, image: &Image2D, scale: f64) -> Result<()> {
    let (rows, cols) = image.dim();
    let data: Vec<u16> = image
        .as_slice()
        .iter()
        .map(|&v| ((v / scale).clamp(0.0, 1.0) * u16::MAX as f64).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(cols as u32, rows as u32, data).expect("buffer matches dimensions");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 8-bit grayscale PNG of an image already scaled to `[0, 1]`.
pub fn write_png8(path: &Path, unit: &Image2D) -> Result<()> {
    let (rows, cols) = unit.dim();
    let data: Vec<u8> = unit.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(cols as u32, rows as u32, data).expect("buffer matches dimensions");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Signed image as RGB: positive values in red, negative in green, both
/// scaled by `max_abs`.
pub fn write_signed_png(path: &Path, image: &Image2D, max_abs: f64) -> Result<()> {
    let (rows, cols) = image.dim();
    let scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    let mut data = Vec::with_capacity(rows * cols * 3);
    for &v in image.as_slice() {
        let t = ((v.abs() / scale).min(1.0) * 255.0).round() as u8;
        if v >= 0.0 {
            data.extend_from_slice(&[t, 0, 0]);
        } else {
            data.extend_from_slice(&[0, t, 0]);
        }
    }
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(cols as u32, rows as u32, data).expect("buffer matches dimensions");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Any grayscale image file as values in `[0, scale]`.
pub fn read_gray(path: &Path, scale: f64) -> Result<Image2D> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma16();
    let (w, h) = img.dimensions();
    let values = img.into_raw().into_iter().map(|v| v as f64 / u16::MAX as f64 * scale).collect();
    Image2D::from_vec(h as usize, w as usize, values)
}

/// Sidecar of a frame directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesMeta {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Intensity represented by the full-scale pixel value.
    pub scale: f64,
    /// Nominal acquisition geometry; the axis position is unknown here.
    pub geometry: Geometry,
    /// Detector rows that hold the slices to reconstruct, `[start, end)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_rows: Option<(usize, usize)>,
    /// File names in angle order.
    pub files: Vec<String>,
}

pub const FRAMES_META: &str = "frames.json";

pub fn frame_file_name(i: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(4);
    format!("frame_{i:0width$}.png")
}

/// Writes frames as 16-bit PNGs; returns the written file paths.
pub fn write_frames(dir: &Path, frames: &[IntensityFrame], meta: &FramesMeta) -> Result<Vec<PathBuf>> {
    if frames.len() != meta.files.len() {
        return Err(Error::Shape(format!("{} frames for {} file names", frames.len(), meta.files.len())));
    }
    let mut written = Vec::with_capacity(frames.len() + 1);
    for (frame, name) in frames.iter().zip(&meta.files) {
        let path = dir.join(name);
        write_png16(&path, &frame.data, meta.scale)?;
        written.push(path);
    }
    let meta_path = dir.join(FRAMES_META);
    write_json(&meta_path, meta)?;
    written.push(meta_path);
    Ok(written)
}

pub fn read_frames(dir: &Path) -> Result<(Vec<IntensityFrame>, FramesMeta)> {
    let meta: FramesMeta = read_json(&dir.join(FRAMES_META))?;
    if meta.files.len() != meta.count {
        return Err(Error::format(dir.join(FRAMES_META), "file list length differs from count"));
    }
    let mut frames = Vec::with_capacity(meta.count);
    for name in &meta.files {
        let path = dir.join(name);
        let data = read_gray(&path, meta.scale)?;
        if data.dim() != (meta.rows, meta.cols) {
            return Err(Error::format(&path, format!("frame is {:?}, expected {:?}", data.dim(), (meta.rows, meta.cols))));
        }
        frames.push(IntensityFrame { data, i0: meta.scale });
    }
    Ok((frames, meta))
}
