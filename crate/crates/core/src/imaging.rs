//! Grayscale conversion, Gaussian-threshold noise removal and LoG word segmentation.
//!
//! Ink is dark on a light background throughout: intensity 0 is black ink and
//! 255 is white paper. Inverted scans have to be flipped before ingestion.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FloatImage;

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::dim(format!(
                "pixel buffer of {} for {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// # Panics
    /// Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("non-empty image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Intensities as floats in the original 0..=255 range.
    pub fn to_float(&self) -> FloatImage {
        FloatImage::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit_float(&self) -> FloatImage {
        FloatImage::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
    }

    /// Rounds and clamps a float raster in the 0..=255 range.
    pub fn from_float(img: &FloatImage) -> Self {
        let pixels = img
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Self::new(img.width, img.height, pixels).expect("float image is non-empty")
    }

    /// Sub-image; pixels falling outside the source are white.
    pub fn crop_padded(&self, x0: i64, y0: i64, w: usize, h: usize) -> GrayImage {
        let mut out = GrayImage::filled(w, h, 255);
        for y in 0..h {
            let sy = y0 + y as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x0 + x as i64;
                if sx < 0 || sx >= self.width as i64 {
                    continue;
                }
                out.set(x, y, self.get(sx as usize, sy as usize));
            }
        }
        out
    }

    pub fn crop(&self, bbox: BBox) -> Result<GrayImage> {
        if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > self.width || bbox.y + bbox.h > self.height
        {
            return Err(Error::dim(format!(
                "bbox {bbox:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.crop_padded(bbox.x as i64, bbox.y as i64, bbox.w, bbox.h))
    }

    /// Reads a PNG/PGM (or any format the `image` crate decodes). Color input goes
    /// through [`to_grayscale`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let dynimg = image::open(path.as_ref())?;
        match dynimg {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                GrayImage::new(w as usize, h as usize, g.into_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                to_grayscale(&RgbRaster::new(w as usize, h as usize, rgb.into_raw())?)
            }
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("buffer length matches dimensions");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "rgb buffer of {} for {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Boolean ink mask, row-major; `true` is ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::dim(format!(
                "mask of {} for {width}x{height} image",
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn ink_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Ink rendered black (0) on white (255).
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self.mask.iter().map(|&m| if m { 0 } else { 255 }).collect();
        GrayImage::new(self.width, self.height, pixels).expect("mask is non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordRegion {
    pub bbox: BBox,
    pub image: GrayImage,
    /// Ink pixels belonging to this region.
    pub ink_pixels: usize,
}

/// One line of the JSON-lines region sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub source: String,
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(image: &RgbRaster) -> Result<GrayImage> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::dim("empty raster"));
    }
    let pixels = image
        .data
        .chunks_exact(3)
        .map(|c| {
            let l = 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64;
            l.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(image.width, image.height, pixels)
}

/// Gaussian-blur then threshold: a pixel is ink iff its blurred intensity is below
/// `threshold`. Isolated specks wash out under the blur and are discarded.
pub fn denoise(image: &GrayImage, sigma: f64, threshold: f64) -> Result<BinaryImage> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("denoise sigma must be > 0, got {sigma}")));
    }
    let blurred = image.to_float().gaussian_blur(sigma);
    let mask = blurred.data.iter().map(|&v| v < threshold).collect();
    BinaryImage::new(image.width, image.height, mask)
}

/// Keeps the original gray value of pixels that survive [`denoise`] and whitens the rest.
pub fn clean(image: &GrayImage, sigma: f64, threshold: f64) -> Result<GrayImage> {
    let mask = denoise(image, sigma, threshold)?;
    let pixels = image
        .pixels
        .iter()
        .zip(&mask.mask)
        .map(|(&p, &m)| if m { p } else { 255 })
        .collect();
    GrayImage::new(image.width, image.height, pixels)
}

/// Splits an ink mask into word regions.
///
/// The ink indicator is filtered with an isotropic Laplacian of Gaussian; pixels with
/// negative response (inside a blob at scale `log_sigma`) are smeared into the mask, and
/// 8-connected components of the smeared mask become regions. Each region's bbox is the
/// tight box around its ink. Regions with fewer than `min_area` ink pixels are dropped.
/// Output is ordered top-to-bottom, then left-to-right by bbox origin.
pub fn segment_words(image: &BinaryImage, log_sigma: f64, min_area: usize) -> Result<Vec<WordRegion>> {
    if !(log_sigma > 0.0) {
        return Err(Error::param(format!("log_sigma must be > 0, got {log_sigma}")));
    }
    let (w, h) = (image.width, image.height);
    if image.ink_count() == 0 {
        return Ok(Vec::new());
    }
    let indicator = FloatImage::new(
        w,
        h,
        image.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    );
    let response = indicator.laplacian_of_gaussian(log_sigma);
    let smeared: Vec<bool> = image
        .mask
        .iter()
        .zip(&response.data)
        .map(|(&ink, &r)| ink || r < -1e-9)
        .collect();

    let mut label = vec![usize::MAX; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !smeared[start] || label[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        label[start] = id;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut ink = 0usize;
        while let Some(p) = queue.pop_front() {
            let (px, py) = (p % w, p / w);
            if image.mask[p] {
                ink += 1;
                x0 = x0.min(px);
                y0 = y0.min(py);
                x1 = x1.max(px);
                y1 = y1.max(py);
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = px as i64 + dx;
                    let ny = py as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if smeared[q] && label[q] == usize::MAX {
                        label[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        regions.push((id, ink, x0, y0, x1, y1));
    }

    let mut out: Vec<WordRegion> = regions
        .into_iter()
        .filter(|&(_, ink, ..)| ink > 0 && ink >= min_area)
        .map(|(id, ink, x0, y0, x1, y1)| {
            let bbox = BBox {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            };
            let mut crop = GrayImage::filled(bbox.w, bbox.h, 255);
            for y in 0..bbox.h {
                for x in 0..bbox.w {
                    let p = (bbox.y + y) * w + bbox.x + x;
                    if image.mask[p] && label[p] == id {
                        crop.set(x, y, 0);
                    }
                }
            }
            WordRegion {
                bbox,
                image: crop,
                ink_pixels: ink,
            }
        })
        .collect();
    out.sort_by_key(|r| (r.bbox.y, r.bbox.x));
    Ok(out)
}

/// Full page path: denoise, segment, and re-crop every region from the grayscale source.
pub fn segment_page(
    page: &GrayImage,
    sigma: f64,
    threshold: f64,
    log_sigma: f64,
    min_area: usize,
) -> Result<Vec<WordRegion>> {
    let mask = denoise(page, sigma, threshold)?;
    let mut regions = segment_words(&mask, log_sigma, min_area)?;
    for r in &mut regions {
        r.image = page.crop(r.bbox)?;
    }
    Ok(regions)
}
