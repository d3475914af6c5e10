//! Square RGB and label images plus their PNG encodings.
//!
//! RGB values live in `[-1, 1]` and map linearly to `[0, 255]` on disk.
//! Label images are single-channel 8-bit PNGs whose pixel value is the class.

use std::path::Path;

use semtex_tensor::{Scalar, Tensor};

use crate::{Error, Result};

/// Channel-major (3×H×W) RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), 3 * width * height, "RGB buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].fill(rgb[c]);
        }
        Self::new(width, height, data)
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let p = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[p + i], self.data[2 * p + i]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let p = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[p + i] = rgb[1];
        self.data[2 * p + i] = rgb[2];
    }

    pub fn clipped(&self) -> Self {
        Self::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        )
    }

    /// `[3,H,W]` tensor view of the pixels.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[3, self.height, self.width],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [3, h, w] => Ok(Self::new(*w, *h, t.data().iter().map(|v| v.f64() as f32).collect())),
            s => Err(Error::Shape(format!("expected [3,H,W] image tensor, got {s:?}"))),
        }
    }

    pub fn to_u8_rgb(&self) -> Vec<u8> {
        let p = self.width * self.height;
        let mut out = Vec::with_capacity(3 * p);
        for i in 0..p {
            for c in 0..3 {
                out.push(to_u8(self.data[c * p + i]));
            }
        }
        out
    }

    pub fn from_u8_rgb(width: usize, height: usize, rgb: &[u8]) -> Self {
        let p = width * height;
        let mut data = vec![0.0; 3 * p];
        for i in 0..p {
            for c in 0..3 {
                data[c * p + i] = from_u8(rgb[3 * i + c]);
            }
        }
        Self::new(width, height, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_u8_rgb(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::from_u8_rgb(w as usize, h as usize, img.as_raw()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

pub fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0 * 2.0 - 1.0
}

/// Row-major integer label image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "label buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize >= classes) {
            Some(&label) => Err(Error::LabelRange {
                label: label as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self::new(w as usize, h as usize, img.into_raw()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u8_mapping_endpoints() {
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(7.0), 255);
        assert_eq!(from_u8(0), -1.0);
        assert_eq!(from_u8(255), 1.0);
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8(v)), v);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = RgbImage::filled(4, 2, [-1.0, 0.0, 1.0]);
        img.set(3, 1, [1.0, 1.0, -1.0]);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = RgbImage::load_png(&p).unwrap();
        assert!(back.max_abs_diff(&img) <= 1.01 / 255.0);
        assert_eq!(back.get(3, 1), [1.0, 1.0, -1.0]);

        let mut lab = LabelMap::zeros(3, 3);
        lab.set(1, 2, 7);
        let q = dir.path().join("l.png");
        lab.save_png(&q).unwrap();
        assert_eq!(LabelMap::load_png(&q).unwrap(), lab);
    }

    #[test]
    fn label_range_check() {
        let lab = LabelMap::new(2, 1, vec![0, 5]);
        assert!(lab.check_classes(6).is_ok());
        assert!(matches!(
            lab.check_classes(3),
            Err(Error::LabelRange { label: 5, classes: 3 })
        ));
    }
}
