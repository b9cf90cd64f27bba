//! Planar image and scalar-map containers plus PNG input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use autograd::Tensor;

use crate::{Error, Result};

/// Channel-planar image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Config(format!(
                "image {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Pixel `(y, x)` as RGB; single-channel images are replicated.
    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        if self.channels >= 3 {
            [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
        } else {
            let v = self.get(0, y, x);
            [v, v, v]
        }
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.iter().enumerate().take(self.channels) {
            self.set(c, y, x, *v);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image buffer matches its shape")
    }

    /// Converts sample `index` of a `[n, c, h, w]` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Self {
        let [_, c, h, w] = t.shape();
        let item = t.batch_item(index);
        Self {
            width: w,
            height: h,
            channels: c,
            data: item.into_data(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (color, channels) = match self.channels {
            1 => (png::ColorType::Grayscale, 1),
            3 => (png::ColorType::Rgb, 3),
            c => {
                return Err(Error::Config(format!(
                    "cannot encode a {c}-channel image as PNG"
                )))
            }
        };
        let mut bytes = Vec::with_capacity(self.width * self.height * channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..channels {
                    bytes.push((self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        write_png(path, self.width, self.height, color, png::BitDepth::Eight, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (info, bytes) = read_png(path)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::data(path, "expected an 8-bit image"));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            other => return Err(Error::data(path, format!("unsupported color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let keep = channels.min(3);
        Ok(Self::from_fn(w, h, keep, |c, y, x| {
            f64::from(bytes[(y * w + x) * channels + c]) / 255.0
        }))
    }
}

/// Row-major scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Map {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Config(format!(
                "map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.clone())
            .expect("map buffer matches its shape")
    }

    pub fn from_tensor(t: &Tensor, index: usize) -> Self {
        let [_, _, h, w] = t.shape();
        Self {
            width: w,
            height: h,
            data: t.batch_item(index).into_data(),
        }
    }

    /// Stores `value * scale` as 16-bit grayscale.
    pub fn save_png16(&self, path: &Path, scale: f64) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for &v in &self.data {
            let raw = (v * scale).round().clamp(0.0, f64::from(u16::MAX)) as u16;
            bytes.extend_from_slice(&raw.to_be_bytes());
        }
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &bytes,
        )
    }

    /// Inverse of [`Map::save_png16`].
    pub fn load_png16(path: &Path, scale: f64) -> Result<Self> {
        let (info, bytes) = read_png(path)?;
        if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale
        {
            return Err(Error::data(path, "expected a 16-bit grayscale image"));
        }
        let data = bytes
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / scale)
            .collect();
        Self::new(info.width as usize, info.height as usize, data)
    }
}

/// Per-pixel boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// 1.0 where set, 0.0 elsewhere, as a `[1, 1, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask buffer matches its shape")
    }

    pub fn from_tensor(t: &Tensor, index: usize) -> Self {
        let [_, _, h, w] = t.shape();
        Self {
            width: w,
            height: h,
            data: t.batch_item(index).data().iter().map(|&v| v > 0.5).collect(),
        }
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::data(path, e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::data(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::data(path, e.to_string()))
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::data(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::data(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::data(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, 3, |c, y, x| ((c * 31 + y * 7 + x * 13) % 256) as f64 / 255.0);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), img);

        let depth = Map::from_fn(7, 5, |y, x| 2.0 + (y * 7 + x) as f64 / 256.0);
        let q = dir.path().join("d.png");
        depth.save_png16(&q, 256.0).unwrap();
        assert_eq!(Map::load_png16(&q, 256.0).unwrap(), depth);
    }

    #[test]
    fn missing_png_names_path() {
        let err = Image::load_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
