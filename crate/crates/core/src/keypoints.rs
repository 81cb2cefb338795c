//! SIFT keypoint localization and scale-proportional patch extraction.
//!
//! Only the detector half of SIFT is implemented; descriptors are never computed because
//! the raw patches go to the embedding network instead.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FloatImage;
use crate::imaging::GrayImage;

/// Side length of the embedder's input.
pub const PATCH_SIZE: usize = 105;
/// Smallest accepted crop side.
pub const MIN_PATCH_SIDE: usize = 8;
/// Blur assumed to be present in the input image.
const INPUT_BLUR: f64 = 0.5;
const ORIENTATION_BINS: usize = 36;
const ORIENTATION_PEAK_RATIO: f64 = 0.8;
const ORIENTATION_SIGMA_FACTOR: f64 = 1.5;
const MAX_REFINE_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    /// On intensities scaled to `[0, 1]`.
    pub contrast_threshold: f64,
    pub edge_threshold: f64,
    /// Reduce `octaves` to what the image supports instead of failing.
    pub clamp_octaves: bool,
    pub size_factor: f64,
    /// Keep at most this many patches per word, strongest response first (0 = all).
    pub max_patches: usize,
    /// Detect on a 2x bilinear upsampling of the word, which finds far more extrema on
    /// thin strokes.
    #[serde(default)]
    pub upsample: bool,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            clamp_octaves: true,
            size_factor: 12.0,
            max_patches: 0,
            upsample: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoGPyramid {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    /// `scales_per_octave + 3` blurred images per octave.
    pub gaussians: Vec<Vec<FloatImage>>,
    /// `scales_per_octave + 2` difference images per octave.
    pub dogs: Vec<Vec<FloatImage>>,
}

/// Largest octave count keeping every octave at least 8x8.
pub fn max_octaves(width: usize, height: usize) -> usize {
    let mut n = 0;
    let (mut w, mut h) = (width, height);
    while w >= 8 && h >= 8 {
        n += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        if w == 1 && h == 1 {
            break;
        }
    }
    n
}

impl DoGPyramid {
    /// Builds the pyramid on intensities scaled to `[0, 1]`.
    pub fn build(
        image: &GrayImage,
        octaves: usize,
        scales_per_octave: usize,
        base_sigma: f64,
    ) -> Result<Self> {
        Self::build_float(&image.to_unit_float(), octaves, scales_per_octave, base_sigma)
    }

    pub fn build_float(
        base: &FloatImage,
        octaves: usize,
        scales_per_octave: usize,
        base_sigma: f64,
    ) -> Result<Self> {
        Self::build_with_input_blur(base, octaves, scales_per_octave, base_sigma, INPUT_BLUR)
    }

    /// As [`DoGPyramid::build_float`] for a base image already blurred by `input_blur`.
    pub fn build_with_input_blur(
        base: &FloatImage,
        octaves: usize,
        scales_per_octave: usize,
        base_sigma: f64,
        input_blur: f64,
    ) -> Result<Self> {
        if octaves == 0 || scales_per_octave == 0 {
            return Err(Error::param("octaves and scales_per_octave must be >= 1"));
        }
        if !(base_sigma > input_blur) {
            return Err(Error::param(format!(
                "base_sigma must exceed the assumed input blur {input_blur}"
            )));
        }
        if base.width < 16 || base.height < 16 {
            return Err(Error::dim(format!(
                "image {}x{} is smaller than 16x16",
                base.width, base.height
            )));
        }
        let supported = max_octaves(base.width, base.height);
        if octaves > supported {
            return Err(Error::dim(format!(
                "{}x{} image supports {supported} octaves, {octaves} requested",
                base.width, base.height
            )));
        }
        let s = scales_per_octave;
        let k = 2f64.powf(1.0 / s as f64);
        // incremental blur between consecutive levels within an octave
        let increments: Vec<f64> = (1..s + 3)
            .map(|i| {
                let prev = base_sigma * k.powi(i as i32 - 1);
                let cur = base_sigma * k.powi(i as i32);
                (cur * cur - prev * prev).sqrt()
            })
            .collect();

        let mut gaussians: Vec<Vec<FloatImage>> = Vec::with_capacity(octaves);
        for o in 0..octaves {
            let first = if o == 0 {
                base.gaussian_blur((base_sigma * base_sigma - input_blur * input_blur).sqrt())
            } else {
                gaussians[o - 1][s].downsample2()
            };
            let mut levels = Vec::with_capacity(s + 3);
            levels.push(first);
            for inc in &increments {
                let next = levels.last().expect("non-empty").gaussian_blur(*inc);
                levels.push(next);
            }
            gaussians.push(levels);
        }
        let dogs = gaussians
            .iter()
            .map(|levels| {
                levels
                    .windows(2)
                    .map(|pair| {
                        let data = pair[1]
                            .data
                            .iter()
                            .zip(&pair[0].data)
                            .map(|(b, a)| b - a)
                            .collect();
                        FloatImage::new(pair[0].width, pair[0].height, data)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            octaves,
            scales_per_octave,
            base_sigma,
            gaussians,
            dogs,
        })
    }

    /// Octave-local blur of level `layer` (possibly fractional).
    pub fn level_sigma(&self, layer: f64) -> f64 {
        self.base_sigma * 2f64.powf(layer / self.scales_per_octave as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in original image coordinates.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    /// Integer DoG layer the extremum was refined to.
    pub layer: usize,
    /// Octave-local blur `base_sigma * 2^(layer/s)`; the blur at original resolution
    /// is `scale * 2^octave`.
    pub scale: f64,
    /// Radians in `[0, 2π)`.
    pub orientation: f64,
    /// Absolute refined DoG value.
    pub response: f64,
}

impl Keypoint {
    pub fn original_scale(&self) -> f64 {
        self.scale * 2f64.powi(self.octave as i32)
    }
}

/// Scale-space extrema refined to sub-pixel accuracy and filtered by contrast and
/// principal-curvature ratio.
pub fn detect(pyramid: &DoGPyramid, contrast_threshold: f64, edge_threshold: f64) -> Result<Vec<Keypoint>> {
    if !(contrast_threshold > 0.0) || !(edge_threshold > 0.0) {
        return Err(Error::param("thresholds must be > 0"));
    }
    let s = pyramid.scales_per_octave;
    let prefilter = 0.5 * contrast_threshold;
    let edge_limit = (edge_threshold + 1.0).powi(2) / edge_threshold;
    let mut out = Vec::new();
    for (o, dogs) in pyramid.dogs.iter().enumerate() {
        let (w, h) = (dogs[0].width, dogs[0].height);
        for layer in 1..=s {
            let cur = &dogs[layer];
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = cur.get(x, y);
                    if v.abs() < prefilter || !is_strict_extremum(dogs, layer, x, y) {
                        continue;
                    }
                    if let Some(kp) =
                        refine(pyramid, o, layer, x, y, contrast_threshold, edge_limit)
                    {
                        out.push(kp);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn is_strict_extremum(dogs: &[FloatImage], layer: usize, x: usize, y: usize) -> bool {
    let v = dogs[layer].get(x, y);
    let (mut is_max, mut is_min) = (true, true);
    for img in &dogs[layer - 1..=layer + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(img, &dogs[layer]) && xx == x && yy == y {
                    continue;
                }
                let n = img.get(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// 3-D gradient and Hessian of the DoG stack by central differences.
fn derivatives(dogs: &[FloatImage], layer: usize, x: usize, y: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let d = |l: usize, xx: usize, yy: usize| dogs[l].get(xx, yy);
    let v = d(layer, x, y);
    let dx = 0.5 * (d(layer, x + 1, y) - d(layer, x - 1, y));
    let dy = 0.5 * (d(layer, x, y + 1) - d(layer, x, y - 1));
    let ds = 0.5 * (d(layer + 1, x, y) - d(layer - 1, x, y));
    let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * v;
    let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * v;
    let dss = d(layer + 1, x, y) + d(layer - 1, x, y) - 2.0 * v;
    let dxy = 0.25
        * (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1)
            + d(layer, x - 1, y - 1));
    let dxs = 0.25
        * (d(layer + 1, x + 1, y) - d(layer + 1, x - 1, y) - d(layer - 1, x + 1, y)
            + d(layer - 1, x - 1, y));
    let dys = 0.25
        * (d(layer + 1, x, y + 1) - d(layer + 1, x, y - 1) - d(layer - 1, x, y + 1)
            + d(layer - 1, x, y - 1));
    (
        [dx, dy, ds],
        [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    )
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|r, c| h[r][c]);
    let b = nalgebra::Vector3::new(g[0], g[1], g[2]);
    m.lu().solve(&b).map(|v| [v[0], v[1], v[2]])
}

/// Hessian ratio test value `tr(H)^2 / det(H)` of the spatial 2x2 Hessian, or `None`
/// when the determinant is non-positive (saddle or degenerate).
pub fn curvature_ratio(dxx: f64, dyy: f64, dxy: f64) -> Option<f64> {
    let det = dxx * dyy - dxy * dxy;
    if det <= 0.0 {
        None
    } else {
        Some((dxx + dyy).powi(2) / det)
    }
}

fn refine(
    pyramid: &DoGPyramid,
    octave: usize,
    layer0: usize,
    x0: usize,
    y0: usize,
    contrast_threshold: f64,
    edge_limit: f64,
) -> Option<Keypoint> {
    let dogs = &pyramid.dogs[octave];
    let s = pyramid.scales_per_octave;
    let (w, h) = (dogs[0].width, dogs[0].height);
    let (mut layer, mut x, mut y) = (layer0, x0, y0);
    let mut converged = None;
    for _ in 0..MAX_REFINE_STEPS {
        let (g, hess) = derivatives(dogs, layer, x, y);
        let step = solve3(hess, g)?;
        let offset = [-step[0], -step[1], -step[2]];
        if offset.iter().all(|o| o.abs() < 0.5) {
            converged = Some((g, offset));
            break;
        }
        if offset.iter().any(|o| !o.is_finite() || o.abs() > 1e6) {
            return None;
        }
        let nx = x as i64 + offset[0].round() as i64;
        let ny = y as i64 + offset[1].round() as i64;
        let nl = layer as i64 + offset[2].round() as i64;
        if nl < 1 || nl > s as i64 || nx < 1 || ny < 1 || nx >= w as i64 - 1 || ny >= h as i64 - 1 {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    let (g, offset) = converged?;
    let value = dogs[layer].get(x, y);
    let refined = value + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
    if refined.abs() < contrast_threshold {
        return None;
    }
    let (_, hess) = derivatives(dogs, layer, x, y);
    match curvature_ratio(hess[0][0], hess[1][1], hess[0][1]) {
        Some(r) if r < edge_limit => {}
        _ => return None,
    }
    let factor = 2f64.powi(octave as i32);
    Some(Keypoint {
        x: (x as f64 + offset[0]) * factor,
        y: (y as f64 + offset[1]) * factor,
        octave,
        layer,
        scale: pyramid.level_sigma(layer as f64 + offset[2]),
        orientation: 0.0,
        response: refined.abs(),
    })
}

/// Raw 36-bin orientation histogram around a keypoint; `None` when the window does not
/// fit inside the octave image.
pub fn orientation_histogram(kp: &Keypoint, pyramid: &DoGPyramid) -> Option<[f64; ORIENTATION_BINS]> {
    let img = pyramid.gaussians.get(kp.octave)?.get(kp.layer)?;
    let factor = 2f64.powi(kp.octave as i32);
    let cx = (kp.x / factor).round() as i64;
    let cy = (kp.y / factor).round() as i64;
    let sigma_w = ORIENTATION_SIGMA_FACTOR * kp.scale;
    let radius = (3.0 * sigma_w).round() as i64;
    let mut hist = [0.0; ORIENTATION_BINS];
    let (w, h) = (img.width as i64, img.height as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (cx + dx, cy + dy);
            if px < 1 || py < 1 || px >= w - 1 || py >= h - 1 {
                continue;
            }
            let (ux, uy) = (px as usize, py as usize);
            let gx = img.get(ux + 1, uy) - img.get(ux - 1, uy);
            let gy = img.get(ux, uy + 1) - img.get(ux, uy - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let weight = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_w * sigma_w)).exp();
            let bin = (angle * ORIENTATION_BINS as f64 / (2.0 * PI)).round() as usize % ORIENTATION_BINS;
            hist[bin] += weight * mag;
        }
    }
    Some(hist)
}

/// One keypoint per local histogram peak at or above 0.8 of the maximum, with the
/// orientation refined by a parabola through the peak and its neighbours. An empty
/// result means the window had no gradient.
pub fn assign_orientations(kp: &Keypoint, pyramid: &DoGPyramid) -> Vec<Keypoint> {
    let Some(hist) = orientation_histogram(kp, pyramid) else {
        return Vec::new();
    };
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let n = ORIENTATION_BINS;
    let mut out = Vec::new();
    for b in 0..n {
        let c = hist[b];
        let l = hist[(b + n - 1) % n];
        let r = hist[(b + 1) % n];
        if c > l && c > r && c >= ORIENTATION_PEAK_RATIO * max {
            let offset = 0.5 * (l - r) / (l - 2.0 * c + r);
            let angle = ((b as f64 + offset) * 2.0 * PI / n as f64).rem_euclid(2.0 * PI);
            out.push(Keypoint {
                orientation: angle,
                ..kp.clone()
            });
        }
    }
    out
}

/// Patch side for a keypoint: `round(size_factor * scale * 2^octave)`.
pub fn patch_side(kp: &Keypoint, size_factor: f64) -> usize {
    (size_factor * kp.scale * 2f64.powi(kp.octave as i32)).round().max(0.0) as usize
}

/// Axis-aligned square crop centred on the keypoint; outside pixels are white.
pub fn extract_patch(image: &GrayImage, kp: &Keypoint, size_factor: f64) -> Result<GrayImage> {
    if !(size_factor > 0.0) {
        return Err(Error::param("size_factor must be > 0"));
    }
    let side = patch_side(kp, size_factor);
    if side < MIN_PATCH_SIDE {
        return Err(Error::PatchTooSmall {
            side,
            min: MIN_PATCH_SIDE,
        });
    }
    let half = side as f64 / 2.0;
    let x0 = (kp.x - half).round() as i64;
    let y0 = (kp.y - half).round() as i64;
    Ok(image.crop_padded(x0, y0, side, side))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSource {
    pub word: String,
    pub keypoint: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatch {
    pub pixels: GrayImage,
    pub source: PatchSource,
}

impl NormalizedPatch {
    /// Intensities divided by 255.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.pixels().iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Size of a `w x h` crop after scaling its larger side to `target`, the smaller side
/// rounded half-up.
pub fn fitted_size(w: usize, h: usize, target: usize) -> (usize, usize) {
    let scale_round = |small: usize, large: usize| ((2 * small * target + large) / (2 * large)).max(1);
    if w >= h {
        (target, scale_round(h, w))
    } else {
        (scale_round(w, h), target)
    }
}

/// Bilinear resize preserving aspect ratio, centred on a white 105x105 canvas.
pub fn normalize_patch(crop: &GrayImage) -> Result<NormalizedPatch> {
    let (w, h) = (crop.width(), crop.height());
    if w < MIN_PATCH_SIDE || h < MIN_PATCH_SIDE {
        return Err(Error::dim(format!("degenerate crop {w}x{h}")));
    }
    let (nw, nh) = fitted_size(w, h, PATCH_SIZE);
    let resized = if (nw, nh) == (w, h) {
        crop.clone()
    } else {
        GrayImage::from_float(&crop.to_float().resize_bilinear(nw, nh))
    };
    let ox = (PATCH_SIZE - nw) / 2;
    let oy = (PATCH_SIZE - nh) / 2;
    let mut canvas = GrayImage::filled(PATCH_SIZE, PATCH_SIZE, 255);
    for y in 0..nh {
        for x in 0..nw {
            canvas.set(ox + x, oy + y, resized.get(x, y));
        }
    }
    Ok(NormalizedPatch {
        pixels: canvas,
        source: PatchSource::default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordPatch {
    pub keypoint: Keypoint,
    pub patch: NormalizedPatch,
}

/// Detector + patch pipeline for one word image.
///
/// Keypoints that differ only in orientation give identical axis-aligned patches, so
/// only the dominant orientation is kept per location. Patches smaller than 8 px or
/// larger than four times the word area are skipped. Output is ordered by descending
/// response, ties by position.
pub fn word_patches(image: &GrayImage, word_id: &str, cfg: &SiftConfig) -> Result<Vec<WordPatch>> {
    if image.width() < 16 || image.height() < 16 {
        log::warn!("word {word_id}: {}x{} too small for SIFT", image.width(), image.height());
        return Ok(Vec::new());
    }
    let upsampled;
    let (work, input_blur) = if cfg.upsample {
        upsampled = GrayImage::from_float(&image.to_float().upsample2());
        (&upsampled, 2.0 * INPUT_BLUR)
    } else {
        (image, INPUT_BLUR)
    };
    let supported = max_octaves(work.width(), work.height());
    let octaves = if cfg.octaves > supported && cfg.clamp_octaves {
        supported
    } else {
        cfg.octaves
    };
    let pyramid = DoGPyramid::build_with_input_blur(
        &work.to_unit_float(),
        octaves,
        cfg.scales_per_octave,
        cfg.base_sigma,
        input_blur,
    )?;
    let mut candidates = Vec::new();
    for kp in detect(&pyramid, cfg.contrast_threshold, cfg.edge_threshold)? {
        let oriented = assign_orientations(&kp, &pyramid);
        let Some(best) = oriented.into_iter().max_by(|a, b| {
            let ha = orientation_strength(a, &pyramid);
            let hb = orientation_strength(b, &pyramid);
            ha.total_cmp(&hb)
        }) else {
            continue;
        };
        let side = patch_side(&best, cfg.size_factor);
        if side < MIN_PATCH_SIDE || side * side > 4 * work.width() * work.height() {
            continue;
        }
        candidates.push(best);
    }
    candidates.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    if cfg.max_patches > 0 {
        candidates.truncate(cfg.max_patches);
    }
    candidates
        .into_iter()
        .enumerate()
        .map(|(i, kp)| {
            let crop = extract_patch(work, &kp, cfg.size_factor)?;
            let mut patch = normalize_patch(&crop)?;
            patch.source = PatchSource {
                word: word_id.to_string(),
                keypoint: i,
            };
            let keypoint = if cfg.upsample {
                Keypoint {
                    x: (kp.x + 0.5) / 2.0 - 0.5,
                    y: (kp.y + 0.5) / 2.0 - 0.5,
                    scale: kp.scale / 2.0,
                    ..kp
                }
            } else {
                kp
            };
            Ok(WordPatch { keypoint, patch })
        })
        .collect()
}

fn orientation_strength(kp: &Keypoint, pyramid: &DoGPyramid) -> f64 {
    orientation_histogram(kp, pyramid)
        .map(|h| {
            let b = (kp.orientation * ORIENTATION_BINS as f64 / (2.0 * PI)).round() as usize
                % ORIENTATION_BINS;
            h[b]
        })
        .unwrap_or(0.0)
}

/// One line of the patch-dump manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub file: String,
    pub word: String,
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    pub scale: f64,
    pub orientation: f64,
    pub response: f64,
}

/// Writes `<word-id>_<kp-index>.png` files into `dir` and appends their records to
/// `manifest` (JSON lines).
pub fn dump_patches(dir: &Path, patches: &[WordPatch], manifest: &mut impl Write) -> Result<()> {
    for wp in patches {
        let src = &wp.patch.source;
        let file = format!("{}_{}.png", src.word, src.keypoint);
        wp.patch.pixels.save_png(dir.join(&file))?;
        let rec = PatchRecord {
            file,
            word: src.word.clone(),
            index: src.keypoint,
            x: wp.keypoint.x,
            y: wp.keypoint.y,
            octave: wp.keypoint.octave,
            scale: wp.keypoint.scale,
            orientation: wp.keypoint.orientation,
            response: wp.keypoint.response,
        };
        serde_json::to_writer(&mut *manifest, &rec)?;
        manifest.write_all(b"\n")?;
    }
    Ok(())
}

pub fn create_manifest(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}
