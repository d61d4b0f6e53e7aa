//! Analysis metrics: texture frequency statistics, gradient-based target
//! density, and warp Jacobian density maps.

use std::io::Write;

use crate::error::Result;
use crate::raster::Image;
use crate::scene::{DeformationField, TextureMap};
use crate::warp::warp_jacobian;

pub const DEFAULT_HISTOGRAM_BINS: usize = 32;

const SOBEL_SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// Mean Sobel gradient magnitude over all texels and RGB channels, with
/// replicate padding at the border.
pub fn texture_frequency(t: &TextureMap) -> f64 {
    let tau = t.tau as isize;
    let at = |i: isize, j: isize, ch: usize| {
        let i = i.clamp(0, tau - 1) as usize;
        let j = j.clamp(0, tau - 1) as usize;
        t.rgb[3 * (j * t.tau + i) + ch]
    };
    let mut acc = 0.0;
    for ch in 0..3 {
        for j in 0..tau {
            for i in 0..tau {
                let (mut gx, mut gy) = (0.0, 0.0);
                for (k, w) in SOBEL_SMOOTH.iter().enumerate() {
                    let o = k as isize - 1;
                    gx += w * (at(i + 1, j + o, ch) - at(i - 1, j + o, ch));
                    gy += w * (at(i + o, j + 1, ch) - at(i + o, j - 1, ch));
                }
                acc += (gx * gx + gy * gy).sqrt();
            }
        }
    }
    acc / (3 * t.tau * t.tau) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins over `[0, max]`; the top edge is inclusive.
    pub fn uniform(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let max = values.iter().copied().fold(0.0, f64::max);
        let hi = if max > 0.0 { max } else { 1.0 };
        let edges = (0..=bins).map(|k| hi * k as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v / hi) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "bin_low,bin_high,count")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[k], self.edges[k + 1], c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub per_texture_freq: Vec<f64>,
    pub histogram: Histogram,
    pub mean: f64,
    pub median: f64,
}

impl FrequencyReport {
    pub fn new(textures: &[TextureMap], bins: usize) -> Self {
        let per_texture_freq: Vec<f64> = textures.iter().map(texture_frequency).collect();
        let n = per_texture_freq.len();
        let mean = if n == 0 {
            0.0
        } else {
            per_texture_freq.iter().sum::<f64>() / n as f64
        };
        let mut sorted = per_texture_freq.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        Self {
            histogram: Histogram::uniform(&per_texture_freq, bins),
            per_texture_freq,
            mean,
            median,
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "texture_index,freq")?;
        for (i, f) in self.per_texture_freq.iter().enumerate() {
            writeln!(out, "{i},{f}")?;
        }
        Ok(())
    }
}

/// Per-pixel `(‖∇C‖ + ε)^α`, with `‖∇C‖` taken over all channels from
/// central differences (one-sided at the border).
pub fn target_density(c: &Image, alpha_exp: f64, epsilon: f64) -> Image {
    let (w, h) = (c.width, c.height);
    let diff = |lo: f64, hi: f64, span: usize| {
        if span == 0 {
            0.0
        } else {
            (hi - lo) / span as f64
        }
    };
    Image::from_fn(w, h, 1, |x, y, _| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let mut sq = 0.0;
        for ch in 0..c.channels {
            let gx = diff(c.get(x0, y, ch), c.get(x1, y, ch), x1 - x0);
            let gy = diff(c.get(x, y0, ch), c.get(x, y1, ch), y1 - y0);
            sq += gx * gx + gy * gy;
        }
        (sq.sqrt() + epsilon).powf(alpha_exp)
    })
}

/// `|det J_Φ|` sampled at the centers of a `resolution × resolution` grid
/// spanning the hull of texel centers, `[0.5, τ − 0.5]²`.
pub fn jacobian_density_map(d: &DeformationField, lambda: f64, resolution: usize) -> Image {
    let lo = 0.5;
    let span = d.tau as f64 - 1.0;
    let res = resolution.max(1);
    Image::from_fn(res, res, 1, |x, y, _| {
        let u = lo + span * (x as f64 + 0.5) / res as f64;
        let v = lo + span * (y as f64 + 0.5) / res as f64;
        warp_jacobian(u, v, d, lambda).det.abs()
    })
}

/// Writes a single-channel map as `x,y,value` rows.
pub fn write_map_csv(map: &Image, mut out: impl Write) -> Result<()> {
    writeln!(out, "x,y,value")?;
    for y in 0..map.height {
        for x in 0..map.width {
            writeln!(out, "{x},{y},{}", map.get(x, y, 0))?;
        }
    }
    Ok(())
}
