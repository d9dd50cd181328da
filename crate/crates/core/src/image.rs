//! Raster images and the PSNR quality metric.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// H×W×C raster, row-major with interleaved channels, nominal range `[0,1]`.
///
/// Degraded images may leave `[0,1]`; nothing here clips except where an
/// operation's contract says so (file export).
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<F>,
}

impl<F: Scalar> Image<F> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<F>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::InvalidParam(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(CoreError::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image::new(height, width, channels, vec![F::zero(); height * width * channels])
            .expect("valid shape")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> F,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Image::new(height, width, channels, data).expect("valid shape")
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> F {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: F) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn same_shape(&self, other: &Image<F>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Cast the storage scalar, rounding through `f64`.
    pub fn cast<G: Scalar>(&self) -> Image<G> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| G::from_f64_c(v.to_f64_c())).collect(),
        }
    }

    /// Apply a geometric augmentation; a pure pixel permutation.
    pub fn augment(&self, op: Augment) -> Image<F> {
        let (h, w, c) = (self.height, self.width, self.channels);
        match op {
            Augment::HFlip => Image::from_fn(h, w, c, |i, j, ch| self.get(i, w - 1 - j, ch)),
            Augment::VFlip => Image::from_fn(h, w, c, |i, j, ch| self.get(h - 1 - i, j, ch)),
            // 90 degrees counter-clockwise: output is W×H
            Augment::Rot90 => Image::from_fn(w, h, c, |i, j, ch| self.get(j, w - 1 - i, ch)),
            Augment::Rot270 => Image::from_fn(w, h, c, |i, j, ch| self.get(h - 1 - j, i, ch)),
        }
    }

    /// Centered crop of the given size.
    pub fn center_crop(&self, crop_h: usize, crop_w: usize) -> Result<Image<F>> {
        if crop_h == 0 || crop_w == 0 || crop_h > self.height || crop_w > self.width {
            return Err(CoreError::InvalidParam(format!(
                "crop {}x{} does not fit in {}x{}",
                crop_h, crop_w, self.height, self.width
            )));
        }
        let top = (self.height - crop_h) / 2;
        let left = (self.width - crop_w) / 2;
        Ok(Image::from_fn(crop_h, crop_w, self.channels, |i, j, c| {
            self.get(top + i, left + j, c)
        }))
    }

    /// Sum of all values in `f64`, useful for cheap content checksums.
    pub fn checksum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_c()).sum()
    }
}

/// Geometric augmentations used during predictor training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    HFlip,
    VFlip,
    Rot90,
    Rot270,
}

impl Augment {
    pub const ALL: [Augment; 4] = [Augment::HFlip, Augment::VFlip, Augment::Rot90, Augment::Rot270];
}

/// PSNR in decibels over all values: `10·log10(1 / MSE)`, MSE accumulated in
/// `f64`. Identical inputs return `f64::INFINITY`; no clipping, no border
/// crop.
pub fn psnr<F: Scalar>(reference: &Image<F>, candidate: &Image<F>) -> Result<f64> {
    if !reference.same_shape(candidate) {
        return Err(CoreError::ShapeMismatch(format!(
            "psnr: {}x{}x{} vs {}x{}x{}",
            reference.height(),
            reference.width(),
            reference.channels(),
            candidate.height(),
            candidate.width(),
            candidate.channels()
        )));
    }
    let mut acc = 0.0f64;
    for (a, b) in reference.data().iter().zip(candidate.data()) {
        let d = a.to_f64_c() - b.to_f64_c();
        acc += d * d;
    }
    let mse = acc / reference.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image<f64> {
        Image::from_fn(h, w, c, |i, j, ch| {
            (i as f64 + 2.0 * j as f64 + 0.5 * ch as f64) / (h + 2 * w) as f64
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let x = ramp(5, 7, 3);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_zero_vs_one_is_zero_db() {
        let x = Image::<f64>::zeros(4, 4, 1);
        let y = Image::from_fn(4, 4, 1, |_, _, _| 1.0);
        assert_eq!(psnr(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn psnr_half_offset() {
        // 10*log10(1/0.25) evaluated directly
        let expected = 6.020599913279624;
        let x = Image::<f64>::zeros(4, 4, 3);
        let y = Image::from_fn(4, 4, 3, |_, _, _| 0.5);
        assert!((psnr(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn psnr_shape_mismatch_errors() {
        let x = Image::<f64>::zeros(4, 4, 1);
        let y = Image::<f64>::zeros(4, 5, 1);
        assert!(psnr(&x, &y).is_err());
    }

    #[test]
    fn hflip_involution() {
        let x = ramp(6, 5, 3);
        assert_eq!(x.augment(Augment::HFlip).augment(Augment::HFlip), x);
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let x = ramp(6, 5, 1);
        let mut y = x.clone();
        for _ in 0..4 {
            y = y.augment(Augment::Rot90);
        }
        assert_eq!(y, x);
    }

    #[test]
    fn rot90_swaps_shape() {
        let x = ramp(6, 5, 3);
        let y = x.augment(Augment::Rot90);
        assert_eq!((y.height(), y.width()), (5, 6));
    }

    #[test]
    fn rot270_inverts_rot90() {
        let x = ramp(4, 7, 1);
        assert_eq!(x.augment(Augment::Rot90).augment(Augment::Rot270), x);
    }

    #[test]
    fn center_crop_picks_middle() {
        let x = ramp(8, 8, 1);
        let c = x.center_crop(4, 4).unwrap();
        assert_eq!(c.get(0, 0, 0), x.get(2, 2, 0));
        assert!(x.center_crop(9, 4).is_err());
    }
}
