//! 8-bit rasters, binary masks, and the resampling helpers shared by the
//! routing and grounding stages.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major interleaved 8-bit image with 1 or 3 channels.
///
/// Used both for equirectangular panoramas and for rectified viewports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[u8]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "buffer of {} bytes does not match {width}x{height}x{channels}",
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Checks the raster is usable as an equirectangular panorama.
    ///
    /// With `full_panorama` the 2:1 aspect is enforced as well.
    pub fn validate_erp(&self, full_panorama: bool) -> Result<()> {
        if self.width < 2 || self.height < 1 {
            return Err(Error::InvalidImage(format!(
                "panorama {}x{} is too small",
                self.width, self.height
            )));
        }
        if full_panorama && self.width != 2 * self.height {
            return Err(Error::InvalidImage(format!(
                "full panorama must be 2:1, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Horizontal circular shift: output column `x` is input column `x - shift`.
    pub fn roll_columns(&self, shift: i64) -> Image {
        let w = self.width as i64;
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (x as i64 - shift).rem_euclid(w) as usize;
                out.pixel_mut(x, y).copy_from_slice(self.pixel(src, y));
            }
        }
        out
    }

    /// Copies `[x0, x0+width) x [y0, y0+height)`; columns wrap modulo the
    /// image width, rows must be in bounds.
    pub fn crop_wrapped(&self, x0: i64, y0: usize, width: usize, height: usize) -> Result<Image> {
        if y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "crop rows {y0}..{} outside height {}",
                y0 + height,
                self.height
            )));
        }
        let w = self.width as i64;
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            for x in 0..width {
                let sx = (x0 + x as i64).rem_euclid(w) as usize;
                out.pixel_mut(x, y).copy_from_slice(self.pixel(sx, y0 + y));
            }
        }
        Ok(out)
    }

    /// Resamples to `width x height`. Each axis uses an area-averaging box
    /// filter when shrinking by 2x or more and bilinear interpolation otherwise.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let c = self.channels;
        let hw = axis_weights(self.width, width);
        let vw = axis_weights(self.height, height);

        // horizontal pass into f32 rows
        let mut tmp = vec![0f32; width * self.height * c];
        tmp.par_chunks_mut(width * c).enumerate().for_each(|(y, row)| {
            let src = &self.data[y * self.width * c..(y + 1) * self.width * c];
            for (ox, taps) in hw.iter().enumerate() {
                for ch in 0..c {
                    let mut acc = 0f32;
                    for &(sx, wgt) in taps {
                        acc += wgt * src[sx * c + ch] as f32;
                    }
                    row[ox * c + ch] = acc;
                }
            }
        });

        let mut out = Image::new(width, height, c);
        out.data.par_chunks_mut(width * c).enumerate().for_each(|(oy, row)| {
            for (i, px) in row.iter_mut().enumerate() {
                let mut acc = 0f32;
                for &(sy, wgt) in &vw[oy] {
                    acc += wgt * tmp[sy * width * c + i];
                }
                *px = acc.round().clamp(0.0, 255.0) as u8;
            }
        });
        out
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Image {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Image {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Image {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, self.data.clone()).expect("buffer size"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, self.data.clone()).expect("buffer size"))
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_dynamic().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Image> {
        Ok(Self::from_dynamic(image::load_from_memory(bytes)?))
    }
}

fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            if scale >= 2.0 {
                let lo = o as f64 * scale;
                let hi = lo + scale;
                let mut taps = Vec::new();
                let mut s = lo.floor() as usize;
                while (s as f64) < hi && s < src {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((s, (overlap / scale) as f32));
                    }
                    s += 1;
                }
                taps
            } else {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let s0 = pos.floor() as usize;
                let s1 = (s0 + 1).min(src - 1);
                let t = (pos - s0 as f64) as f32;
                if s1 == s0 || t == 0.0 {
                    vec![(s0, 1.0)]
                } else {
                    vec![(s0, 1.0 - t), (s1, t)]
                }
            }
        })
        .collect()
}

/// Per-pixel 0/1 raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v as u8;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Tight pixel bounding box `(x0, y0, x1, y1)`, exclusive upper bounds.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    /// Mean of set pixel centers.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Same circular column shift as [`Image::roll_columns`].
    pub fn roll_columns(&self, shift: i64) -> BinaryMask {
        let w = self.width as i64;
        let mut out = BinaryMask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (x as i64 - shift).rem_euclid(w) as usize;
                out.bits[y * self.width + x] = self.bits[y * self.width + src];
            }
        }
        out
    }

    /// Number of 8-connected components. With `wrap_columns` the first and
    /// last columns are treated as adjacent.
    pub fn connected_components(&self, wrap_columns: bool) -> usize {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.bits[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (px, py) = ((p % w) as i64, (p / w) as i64);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (mut nx, ny) = (px + dx, py + dy);
                        if ny < 0 || ny >= h as i64 {
                            continue;
                        }
                        if nx < 0 || nx >= w as i64 {
                            if !wrap_columns {
                                continue;
                            }
                            nx = nx.rem_euclid(w as i64);
                        }
                        let q = ny as usize * w + nx as usize;
                        if self.bits[q] != 0 && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        count
    }

    /// Intersection and union pixel counts.
    pub fn overlap(&self, other: &BinaryMask) -> Result<(u64, u64)> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let (mut inter, mut union) = (0u64, 0u64);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            let (a, b) = (a != 0, b != 0);
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
        Ok((inter, union))
    }

    /// Binarizes a single-channel raster: `value >= threshold` is set.
    pub fn from_gray(img: &Image, threshold: u8) -> Result<BinaryMask> {
        if img.channels != 1 {
            return Err(Error::InvalidImage(format!(
                "mask must be single-channel, got {} channels",
                img.channels
            )));
        }
        Ok(BinaryMask {
            width: img.width,
            height: img.height,
            bits: img.data.iter().map(|&v| (v >= threshold) as u8).collect(),
        })
    }

    /// Single-channel 0/255 raster.
    pub fn to_gray(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<BinaryMask> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let gray = Image::from_raw(w as usize, h as usize, 1, img.into_raw())?;
        BinaryMask::from_gray(&gray, 128)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_png(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_downsample_averages_blocks() {
        let mut img = Image::new(4, 2, 1);
        img.data = vec![0, 100, 200, 200, 0, 100, 200, 200];
        let out = img.resize(2, 1);
        assert_eq!(out.data, vec![50, 200]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::filled(37, 19, &[9, 80, 200]);
        assert_eq!(img.resize(37, 19), img);
        let up = img.resize(50, 31);
        assert!(up.data.chunks(3).all(|p| p == [9, 80, 200]));
        let down = img.resize(10, 5);
        assert!(down.data.chunks(3).all(|p| p == [9, 80, 200]));
    }

    #[test]
    fn crop_wraps_columns() {
        let mut img = Image::new(4, 1, 1);
        img.data = vec![1, 2, 3, 4];
        let c = img.crop_wrapped(3, 0, 3, 1).unwrap();
        assert_eq!(c.data, vec![4, 1, 2]);
        assert!(img.crop_wrapped(0, 0, 2, 2).is_err());
    }

    #[test]
    fn components_respect_seam_flag() {
        let m = BinaryMask::from_fn(10, 3, |x, _| x == 0 || x == 9);
        assert_eq!(m.connected_components(false), 2);
        assert_eq!(m.connected_components(true), 1);
        assert_eq!(m.roll_columns(1).connected_components(false), 1);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = BinaryMask::from_fn(13, 7, |x, y| (x + y) % 3 == 0);
        m.save_png(&p).unwrap();
        assert_eq!(BinaryMask::load_png(&p).unwrap(), m);
    }

    #[test]
    fn bbox_and_centroid() {
        let m = BinaryMask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..4).contains(&y));
        assert_eq!(m.bbox(), Some((2, 3, 5, 4)));
        assert_eq!(m.centroid(), Some((3.5, 3.5)));
        assert_eq!(BinaryMask::new(3, 3).bbox(), None);
    }
}
