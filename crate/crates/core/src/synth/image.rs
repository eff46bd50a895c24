use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major, channel-interleaved image with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Input(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image, clamping every sample into `[0, 1]`.
    pub fn from_fn_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sets a sample, clamped into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Input(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let start = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image::new(height, width, self.channels, data)
    }

    /// Adds `offset` to every sample, clamping into `[0, 1]`.
    pub fn brighten(&mut self, offset: f64) {
        if offset != 0.0 {
            self.data.iter_mut().for_each(|v| *v = (*v + offset).clamp(0.0, 1.0));
        }
    }

    /// Rounds every sample to the nearest multiple of 1/255, the precision
    /// of the on-disk formats.
    pub fn quantize(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = f64::from(to_byte(*v)) / 255.0);
    }

    /// Planar `[C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        Tensor::from_fn(&[c, h, w], |i| {
            let (ch, rest) = (i / (h * w), i % (h * w));
            self.data[rest * c + ch]
        })
    }

    /// Number of pixels with any non-zero channel.
    pub fn count_nonzero_pixels(&self) -> usize {
        self.data
            .chunks(self.channels)
            .filter(|p| p.iter().any(|&v| v != 0.0))
            .count()
    }
}

/// `round(255 * v)` with `v` clamped into `[0, 1]`.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary single-channel mask of the same height and width as an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Input(format!(
                "{height}x{width} mask needs {} entries, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Grows the mask by `radius` pixels (square structuring element).
    pub fn dilate(&self, radius: usize) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    for yy in y.saturating_sub(radius)..(y + radius + 1).min(self.height) {
                        for xx in x.saturating_sub(radius)..(x + radius + 1).min(self.width) {
                            out.set(yy, xx, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// 0/1 single-channel image.
    pub fn to_image(&self) -> Image {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(self.height, self.width, 1, data).expect("valid mask dims")
    }

    /// Pixels above one half become set.
    pub fn from_image(image: &Image) -> Self {
        let bits = image.data().chunks(image.channels()).map(|p| p[0] > 0.5).collect();
        Self {
            height: image.height(),
            width: image.width(),
            bits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_channels() {
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.1]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn planar_tensor_layout() {
        let img = Image::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }

    #[test]
    fn crop_and_brighten() {
        let img = Image::from_fn_clamped(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 16.0).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0 / 16.0, 7.0 / 16.0, 10.0 / 16.0, 11.0 / 16.0]);
        assert!(img.crop(3, 3, 2, 2).is_err());
        let mut b = c.clone();
        b.brighten(0.7);
        assert_eq!(b.get(1, 1, 0), 1.0);
    }

    #[test]
    fn dilate_grows_by_radius() {
        let mut m = Mask::empty(5, 5);
        m.set(2, 2, true);
        assert_eq!(m.dilate(1).count(), 9);
        assert_eq!(m.dilate(3).count(), 25);
    }
}
