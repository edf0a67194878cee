//! Single-channel raster images and file I/O.
//!
//! Pixel values live in [0, 1] at the file boundary; intermediate values may
//! leave that range during optimization and are only clamped when saving.
//! Color files are reduced to one channel with Rec. 601 luma on load.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    /// Zero-filled image. Panics on zero dimensions.
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "image dimensions must be >= 1");
        Image {
            height,
            width,
            data: vec![T::zero(); height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: T) -> Self {
        let mut img = Image::new(height, width);
        img.data.fill(value);
        img
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut img = Image::new(height, width);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(y, x);
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, y: usize) -> &mut [T] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Top-left crop. Panics if the crop exceeds the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Self {
        assert!(top + height <= self.height && left + width <= self.width);
        Image::from_fn(height, width, |y, x| self.at(top + y, left + x))
    }

    /// Convert each sample to another scalar type through f64.
    pub fn convert<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| cast(v.to_f64().unwrap()))
                .collect(),
        }
    }

    /// True if every sample is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero() || v == T::one())
    }

    /// Maximum absolute difference against another image of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Quantize one sample to 8 bits: clamp to [0,1], scale, round half up.
fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64().unwrap().clamp(0.0, 1.0);
    ((v * 255.0 + 0.5).floor() as i64).clamp(0, 255) as u8
}

/// Rec. 601 luma from 8-bit RGB, scaled to [0,1].
fn luma601<T: Scalar>(r: u8, g: u8, b: u8) -> T {
    cast((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0)
}

/// Load an 8-bit PNG or binary PGM as a single-channel image in [0,1].
///
/// Color inputs are converted with Rec. 601 luma; 16-bit files are rejected.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        load_png(path, &bytes)
    } else if bytes.starts_with(b"P5") {
        load_pgm(path, &bytes)
    } else {
        Err(Error::decode(path, "not a PNG or binary PGM file"))
    }
}

fn load_png<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Image<T>> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::decode(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::decode(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::decode(
            path,
            format!("unsupported bit depth {:?}, only 8-bit is supported", info.bit_depth),
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    if h == 0 || w == 0 {
        return Err(Error::decode(path, "zero-sized image"));
    }
    let px = &buf[..info.buffer_size()];
    let data: Vec<T> = match info.color_type {
        png::ColorType::Grayscale => px.iter().map(|&v| cast(v as f64 / 255.0)).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks_exact(2).map(|c| cast(c[0] as f64 / 255.0)).collect(),
        png::ColorType::Rgb => px.chunks_exact(3).map(|c| luma601(c[0], c[1], c[2])).collect(),
        png::ColorType::Rgba => px.chunks_exact(4).map(|c| luma601(c[0], c[1], c[2])).collect(),
        other => {
            return Err(Error::decode(path, format!("unsupported color type {other:?}")));
        }
    };
    Image::from_vec(h, w, data)
}

fn load_pgm<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Image<T>> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comment lines between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::decode(path, "malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::decode(path, "malformed PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval > 255 {
        return Err(Error::decode(
            path,
            format!("unsupported bit depth (maxval {maxval}), only 8-bit is supported"),
        ));
    }
    if maxval == 0 || h == 0 || w == 0 {
        return Err(Error::decode(path, "degenerate PGM header"));
    }
    pos += 1; // single whitespace byte before the raster
    let raster = bytes
        .get(pos..pos + h * w)
        .ok_or_else(|| Error::decode(path, "truncated PGM raster"))?;
    let data = raster
        .iter()
        .map(|&v| cast(v as f64 / maxval as f64))
        .collect();
    Image::from_vec(h, w, data)
}

/// Save as 8-bit grayscale, clamped to [0,1]. Format follows the extension
/// (`.png` or `.pgm`).
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let quantized: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
    match ext.as_str() {
        "png" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut encoder = png::Encoder::new(
                BufWriter::new(file),
                img.width() as u32,
                img.height() as u32,
            );
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::decode(path, e.to_string()))?;
            writer
                .write_image_data(&quantized)
                .map_err(|e| Error::decode(path, e.to_string()))?;
        }
        "pgm" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = BufWriter::new(file);
            write!(out, "P5\n{} {}\n255\n", img.width(), img.height())
                .and_then(|_| out.write_all(&quantized))
                .map_err(|e| Error::io(path, e))?;
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported output extension {ext:?} on {}, use .png or .pgm",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Nearest-neighbor resample (pixel-center convention).
pub fn resize_nearest<T: Scalar>(img: &Image<T>, out_h: usize, out_w: usize) -> Image<T> {
    Image::from_fn(out_h, out_w, |y, x| {
        let sy = ((y as f64 + 0.5) * img.height() as f64 / out_h as f64) as usize;
        let sx = ((x as f64 + 0.5) * img.width() as f64 / out_w as f64) as usize;
        img.at(sy.min(img.height() - 1), sx.min(img.width() - 1))
    })
}
