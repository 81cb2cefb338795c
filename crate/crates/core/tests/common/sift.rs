//! Translation and intensity-scaling checks for the keypoint detector on rendered words.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wordwriter::corpus::{render_word, writer_alphabet, StyleParams, ALPHABET_SIZE};
use wordwriter::imaging::GrayImage;
use wordwriter::keypoints::{detect, DoGPyramid, Keypoint, SiftConfig};

pub const SHIFT: usize = 8;
const MARGIN: usize = 40;

/// A rendered pseudo-word on a white margin wide enough for an 8 px shift.
pub fn test_word(seed: u64) -> GrayImage {
    let style = StyleParams::for_writer(seed, 1 + (seed % 10) as u32);
    let alphabet = writer_alphabet(&style);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text: Vec<usize> = (0..5).map(|i| (seed as usize * 7 + i * 3) % ALPHABET_SIZE).collect();
    let word = render_word(&style, &alphabet, &text, &mut rng).unwrap();
    let (w, h) = (word.width() + 2 * MARGIN, word.height() + 2 * MARGIN);
    word.crop_padded(-(MARGIN as i64), -(MARGIN as i64), w, h)
}

pub fn keypoints(img: &GrayImage, contrast: f64) -> Vec<Keypoint> {
    let cfg = SiftConfig::default();
    let pyr = DoGPyramid::build(img, cfg.octaves, cfg.scales_per_octave, cfg.base_sigma).unwrap();
    detect(&pyr, contrast, cfg.edge_threshold).unwrap()
}

fn interior(k: &Keypoint, w: usize, h: usize) -> bool {
    let m = (3.0 * k.original_scale()).max(12.0);
    k.x >= m && k.y >= m && k.x <= w as f64 - 1.0 - m && k.y <= h as f64 - 1.0 - m
}

pub struct MatchReport {
    pub compared: usize,
    pub unmatched: usize,
    /// Largest positional error among matched keypoints, px.
    pub worst_offset: f64,
    /// Largest relative scale error among matched keypoints.
    pub worst_scale: f64,
}

impl MatchReport {
    fn new() -> Self {
        Self {
            compared: 0,
            unmatched: 0,
            worst_offset: 0.0,
            worst_scale: 0.0,
        }
    }

    /// Matches every keypoint of `a`, moved by `(dx, dy)`, to the nearest same-octave
    /// keypoint of `b`; a match needs both coordinates within `tol` px.
    fn add(&mut self, a: &[Keypoint], b: &[Keypoint], dx: f64, dy: f64, tol: f64) {
        for ka in a {
            self.compared += 1;
            let best = b
                .iter()
                .filter(|kb| kb.octave == ka.octave)
                .map(|kb| {
                    let off = (kb.x - ka.x - dx).abs().max((kb.y - ka.y - dy).abs());
                    (off, (kb.scale - ka.scale).abs() / ka.scale)
                })
                .min_by(|p, q| p.0.total_cmp(&q.0));
            match best {
                Some((off, ds)) if off <= tol => {
                    self.worst_offset = self.worst_offset.max(off);
                    self.worst_scale = self.worst_scale.max(ds);
                }
                _ => self.unmatched += 1,
            }
        }
    }
}

/// Shifts each test word by (8, 8) and matches interior keypoints in both directions.
pub fn translation(seeds: u64) -> MatchReport {
    let contrast = SiftConfig::default().contrast_threshold;
    let mut r = MatchReport::new();
    for seed in 0..seeds {
        let a = test_word(seed);
        let (w, h) = (a.width(), a.height());
        let b = a.crop_padded(-(SHIFT as i64), -(SHIFT as i64), w, h);
        let ka: Vec<Keypoint> = keypoints(&a, contrast).into_iter().filter(|k| interior(k, w, h)).collect();
        let kb: Vec<Keypoint> = keypoints(&b, contrast).into_iter().filter(|k| interior(k, w, h)).collect();
        let s = SHIFT as f64;
        r.add(&ka, &keypoints(&b, contrast), s, s, 1.0);
        r.add(&kb, &keypoints(&a, contrast), -s, -s, 1.0);
    }
    r
}

/// Halves every intensity (with the contrast threshold halved). Test words are first
/// quantized to even values so the halved image is exact in 8 bits.
pub fn intensity_scaling(seeds: u64) -> MatchReport {
    let contrast = SiftConfig::default().contrast_threshold;
    let mut r = MatchReport::new();
    for seed in 0..seeds {
        let word = test_word(seed);
        let (w, h) = (word.width(), word.height());
        let mut even = GrayImage::filled(w, h, 0);
        let mut half = GrayImage::filled(w, h, 0);
        for y in 0..h {
            for x in 0..w {
                let v = word.get(x, y) & !1;
                even.set(x, y, v);
                half.set(x, y, v / 2);
            }
        }
        let ka = keypoints(&even, contrast);
        let kb = keypoints(&half, contrast / 2.0);
        r.add(&ka, &kb, 0.0, 0.0, 0.5);
        r.add(&kb, &ka, 0.0, 0.0, 0.5);
    }
    r
}
