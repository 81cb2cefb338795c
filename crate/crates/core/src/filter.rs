//! Float raster workspace shared by the imaging and keypoint stages.

/// Symmetric reflection of an index into `0..n` (`... c b a | a b c ... c | c b a ...`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Unnormalized second derivative of the Gaussian, matched to [`gaussian_kernel`]'s
/// normalization so that `G'' * G + G * G''` is the Laplacian of Gaussian.
pub fn gaussian_second_derivative_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let s2 = sigma * sigma;
    let denom = 2.0 * s2;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    (-radius..=radius)
        .zip(raw)
        .map(|(x, g)| {
            let x2 = (x * x) as f64;
            (x2 / (s2 * s2) - 1.0 / s2) * g / sum
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value with reflected borders.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped at the borders.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Separable convolution with reflected borders: `kx` along rows, then `ky` along columns.
    pub fn convolve_separable(&self, kx: &[f64], ky: &[f64]) -> FloatImage {
        let (w, h) = (self.width, self.height);
        let rx = (kx.len() / 2) as isize;
        let ry = (ky.len() / 2) as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (t, k) in kx.iter().enumerate() {
                    acc += k * row[reflect(x as isize + t as isize - rx, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for (t, k) in ky.iter().enumerate() {
                let src = reflect(y as isize + t as isize - ry, h);
                let src_row = &tmp[src * w..(src + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for x in 0..w {
                    dst[x] += k * src_row[x];
                }
            }
        }
        FloatImage::new(w, h, out)
    }

    pub fn gaussian_blur(&self, sigma: f64) -> FloatImage {
        let k = gaussian_kernel(sigma);
        self.convolve_separable(&k, &k)
    }

    /// Laplacian-of-Gaussian response via the separable sum `G''(x)G(y) + G(x)G''(y)`.
    pub fn laplacian_of_gaussian(&self, sigma: f64) -> FloatImage {
        let g = gaussian_kernel(sigma);
        let g2 = gaussian_second_derivative_kernel(sigma);
        let a = self.convolve_separable(&g2, &g);
        let b = self.convolve_separable(&g, &g2);
        let data = a.data.iter().zip(&b.data).map(|(p, q)| p + q).collect();
        FloatImage::new(self.width, self.height, data)
    }

    /// Halves each dimension (rounding up) by averaging 2x2 blocks, i.e. bilinear
    /// sampling at block centers; odd trailing rows/columns are edge-clamped.
    pub fn downsample2(&self) -> FloatImage {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = FloatImage::filled(w, h, 0.0);
        for y in 0..h {
            let y0 = 2 * y;
            let y1 = (2 * y + 1).min(self.height - 1);
            for x in 0..w {
                let x0 = 2 * x;
                let x1 = (2 * x + 1).min(self.width - 1);
                let v = 0.25
                    * (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1));
                out.set(x, y, v);
            }
        }
        out
    }

    /// Doubles each dimension by bilinear interpolation.
    pub fn upsample2(&self) -> FloatImage {
        self.resize_bilinear(self.width * 2, self.height * 2)
    }

    /// Pixel-center aligned bilinear resize. Same-size resize is the identity.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> FloatImage {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = FloatImage::filled(width, height, 0.0);
        for y in 0..height {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                out.set(x, y, self.sample_bilinear(fx, fy));
            }
        }
        out
    }
}
