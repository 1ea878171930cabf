use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-last raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel intensity {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.offset(y, x, c)]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Copy of the `side`x`side` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, side_h: usize, side_w: usize) -> Image {
        let mut data = Vec::with_capacity(side_h * side_w * self.channels);
        for y in top..top + side_h {
            let start = self.offset(y, left, 0);
            data.extend_from_slice(&self.data[start..start + side_w * self.channels]);
        }
        Image {
            height: side_h,
            width: side_w,
            channels: self.channels,
            data,
        }
    }

    /// Centered crop to the largest square whose side is a multiple of `grid_side`.
    pub fn center_crop_to_grid(&self, grid_side: usize) -> Result<Image> {
        if grid_side == 0 {
            return Err(Error::InvalidArgument("grid side must be positive".into()));
        }
        let short = self.height.min(self.width);
        let side = short - short % grid_side;
        if side == 0 {
            return Err(Error::NotDivisible {
                side: short,
                divisor: grid_side,
                remainder: short % grid_side,
            });
        }
        let top = (self.height - side) / 2;
        let left = (self.width - side) / 2;
        Ok(self.crop(top, left, side, side))
    }

    /// Bilinear resample to a `side`x`side` square.
    pub fn resize_square(&self, side: usize) -> Image {
        if self.height == side && self.width == side {
            return self.clone();
        }
        let buf = image::Rgb32FImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| self.get(y as usize, x as usize, c.min(self.channels - 1)) as f32;
            image::Rgb([px(0), px(1), px(2)])
        });
        let out = image::imageops::resize(
            &buf,
            side as u32,
            side as u32,
            image::imageops::FilterType::Triangle,
        );
        let mut data = Vec::with_capacity(side * side * self.channels);
        for p in out.pixels() {
            for c in 0..self.channels {
                data.push((p.0[c.min(2)] as f64).clamp(0.0, 1.0));
            }
        }
        Image {
            height: side,
            width: side,
            channels: self.channels,
            data,
        }
    }

    fn to_rgb8_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    let v = self.get(y, x, c.min(self.channels - 1));
                    out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }
}

/// Reads PNG or binary PPM (P6); any other format `image` can decode works too.
/// Output is always 3-channel RGB normalized to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let rgb = image::load_from_memory(&bytes)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, 3, data)
}

/// 8-bit binary PPM dump, for debugging.
pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    f.write_all(&img.to_rgb8_bytes())
        .map_err(|e| Error::io(path, e))
}
