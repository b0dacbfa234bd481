//! Floating-point image conversion, Gaussian smoothing, Sobel gradients and
//! subpixel edge candidates.
//!
//! Pixel `(i, j)` has its center at coordinate `(i, j)` and covers
//! `[i - 0.5, i + 0.5] x [j - 0.5, j + 0.5]`. All positions in the crate use
//! this convention.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Point2;

use crate::error::{invalid, Result};
use crate::math;

/// Default absolute-suppression threshold in intensity units per pixel.
pub const DEFAULT_ABS_THRESHOLD_INTENSITY: f64 = 0.04;

/// Gain of the unnormalized 3x3 Sobel kernel on a unit-slope ramp.
pub const SOBEL_GAIN: f64 = 8.0;

/// Default absolute-suppression threshold expressed in stored gradient units.
pub const DEFAULT_ABS_THRESHOLD: f64 = DEFAULT_ABS_THRESHOLD_INTENSITY * SOBEL_GAIN;

/// Candidates closer than this many pixels to the image border are dropped.
pub const BORDER_MARGIN: usize = 3;

/// Standard deviation of the 5x5 smoothing kernel.
pub const GAUSSIAN_SIGMA: f64 = 1.0;

/// Row-major floating point raster.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image has a zero dimension"));
        }
        if data.len() != width * height {
            return Err(invalid("image data length does not match its dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite values"));
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
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Value at integer coordinates with edge replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    /// Converts back to 8-bit gray with rounding and clamping.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| math::round(v.clamp(0.0, 1.0) * 255.0) as u8)
            .collect()
    }
}

pub(crate) fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (math::floor(x) as usize).min(width.saturating_sub(2));
    let y0 = (math::floor(y) as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| data[yy * width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Pixel layout of an 8-bit raster handed to [`to_float_gray`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelLayout {
    Gray8,
    Rgb8,
}

impl PixelLayout {
    fn channels(self) -> usize {
        match self {
            PixelLayout::Gray8 => 1,
            PixelLayout::Rgb8 => 3,
        }
    }
}

/// Borrowed 8-bit raster.
#[derive(Clone, Copy, Debug)]
pub struct RawImage<'a> {
    pub width: usize,
    pub height: usize,
    pub layout: PixelLayout,
    pub data: &'a [u8],
}

/// Converts an 8-bit raster to intensities in `[0, 1]`. RGB uses Rec. 601 luma
/// weights.
pub fn to_float_gray(raw: &RawImage<'_>) -> Result<FloatImage> {
    if raw.width == 0 || raw.height == 0 || raw.data.is_empty() {
        return Err(invalid("empty raster"));
    }
    let ch = raw.layout.channels();
    if raw.data.len() != raw.width * raw.height * ch {
        return Err(invalid("raster length does not match width x height x channels"));
    }
    let data = match raw.layout {
        PixelLayout::Gray8 => raw.data.iter().map(|&v| v as f64 / 255.0).collect(),
        PixelLayout::Rgb8 => raw
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect(),
    };
    FloatImage::new(raw.width, raw.height, data)
}

/// Normalized 5-tap Gaussian weights for offsets -2..=2.
pub fn gaussian_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    let mut sum = 0.0;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *w = math::exp(-d * d / (2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA));
        sum += *w;
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Separable 5x5 Gaussian blur with edge replication.
pub fn gaussian_smooth(img: &FloatImage) -> Result<FloatImage> {
    if img.width < 5 || img.height < 5 {
        return Err(invalid("image smaller than the 5x5 smoothing kernel"));
    }
    let k = gaussian_kernel();
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                acc += kw * img.get_clamped(x as isize + i as isize - 2, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kw) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                acc += kw * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(FloatImage {
        width: w,
        height: h,
        data: out,
    })
}

/// Per-pixel derivatives, magnitude and direction.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// `atan2(gy, gx)` in (-pi, pi].
    pub direction: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn gradient(&self, x: usize, y: usize) -> (f64, f64) {
        let i = self.index(x, y);
        (self.gx[i], self.gy[i])
    }

    pub fn sample_magnitude(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(&self.magnitude, self.width, self.height, x, y)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude.iter().cloned().fold(0.0, f64::max)
    }
}

/// Unnormalized 3x3 Sobel derivatives with edge replication.
pub fn sobel(img: &FloatImage) -> Result<GradientField> {
    if img.width < 3 || img.height < 3 {
        return Err(invalid("image smaller than the 3x3 Sobel kernel"));
    }
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    let mut magnitude = Vec::with_capacity(n);
    let mut direction = Vec::with_capacity(n);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.push(dx);
            gy.push(dy);
            magnitude.push(math::sqrt(dx * dx + dy * dy));
            direction.push(math::atan2(dy, dx));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
        direction,
    })
}

/// Edge pixel that survived suppression.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCandidate {
    /// Source pixel on the integer grid.
    pub pixel: [usize; 2],
    pub position: Point2<f64>,
    pub direction: f64,
    pub magnitude: f64,
}

/// Quantizes a gradient direction to one of four bins (0, 45, 90, 135 deg)
/// and returns the integer step along the gradient.
pub fn quantized_step(direction: f64) -> (isize, isize) {
    let mut a = direction;
    if a < 0.0 {
        a += math::PI;
    }
    let bin = (math::round(a / (math::PI / 4.0)) as i64).rem_euclid(4);
    match bin {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        _ => (-1, 1),
    }
}

/// Absolute suppression followed by non-maximum suppression along the
/// quantized gradient direction.
///
/// A pixel is kept when its magnitude exceeds `abs_threshold`, is strictly
/// larger than its forward neighbor and not smaller than its backward one, so
/// a plateau of two pixels yields a single candidate.
pub fn suppress(field: &GradientField, abs_threshold: f64) -> Result<Vec<EdgeCandidate>> {
    if !(abs_threshold >= 0.0) {
        return Err(invalid("absolute suppression threshold must be non-negative"));
    }
    let (w, h) = (field.width, field.height);
    let mut out = Vec::new();
    if w <= 2 * BORDER_MARGIN || h <= 2 * BORDER_MARGIN {
        return Ok(out);
    }
    for y in BORDER_MARGIN..h - BORDER_MARGIN {
        for x in BORDER_MARGIN..w - BORDER_MARGIN {
            let i = field.index(x, y);
            let m = field.magnitude[i];
            if !(m > abs_threshold) {
                continue;
            }
            let (sx, sy) = quantized_step(field.direction[i]);
            let fwd = field.magnitude[field.index((x as isize + sx) as usize, (y as isize + sy) as usize)];
            let bwd = field.magnitude[field.index((x as isize - sx) as usize, (y as isize - sy) as usize)];
            if m > fwd && m >= bwd {
                out.push(EdgeCandidate {
                    pixel: [x, y],
                    position: Point2::new(x as f64, y as f64),
                    direction: field.direction[i],
                    magnitude: m,
                });
            }
        }
    }
    Ok(out)
}

/// Vertex offset of the parabola through `(-1, minus)`, `(0, center)`,
/// `(1, plus)`, clamped to +-0.5. `None` when the parabola is not concave.
pub fn parabola_peak(minus: f64, center: f64, plus: f64) -> Option<f64> {
    let denom = minus - 2.0 * center + plus;
    if !(denom < 0.0) {
        return None;
    }
    Some(((minus - plus) / (2.0 * denom)).clamp(-0.5, 0.5))
}

/// Result of subpixel localization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Localized {
    pub candidate: EdgeCandidate,
    /// `false` when the position was left at the pixel center.
    pub refined: bool,
}

/// Refines a candidate by a 3-point parabolic fit of the gradient magnitude
/// sampled bilinearly one pixel before and after it along its direction.
pub fn subpixel_localize(field: &GradientField, candidate: &EdgeCandidate) -> Localized {
    let (ux, uy) = (math::cos(candidate.direction), math::sin(candidate.direction));
    let [px, py] = candidate.pixel;
    let (cx, cy) = (px as f64, py as f64);
    let center = field.magnitude[field.index(px, py)];
    let minus = field.sample_magnitude(cx - ux, cy - uy);
    let plus = field.sample_magnitude(cx + ux, cy + uy);
    let offset = match (minus, plus) {
        (Some(m), Some(p)) => parabola_peak(m, center, p),
        _ => None,
    };
    let mut out = *candidate;
    out.position = Point2::new(cx, cy);
    match offset {
        Some(t) => {
            out.position = Point2::new(cx + t * ux, cy + t * uy);
            Localized {
                candidate: out,
                refined: true,
            }
        }
        None => Localized {
            candidate: out,
            refined: false,
        },
    }
}

/// Smoothing, gradients, suppression and localization in one pass. Returns the
/// gradient field of the smoothed image alongside the candidates.
pub fn detect_edge_candidates(
    img: &FloatImage,
    abs_threshold: f64,
) -> Result<(GradientField, Vec<EdgeCandidate>)> {
    let smooth = gaussian_smooth(img)?;
    let field = sobel(&smooth)?;
    let raw = suppress(&field, abs_threshold)?;
    let refined = raw
        .iter()
        .map(|c| subpixel_localize(&field, c).candidate)
        .collect();
    Ok((field, refined))
}
