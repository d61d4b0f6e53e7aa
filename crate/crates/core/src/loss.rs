//! Photometric training loss and image quality metrics.

use crate::compositor::RenderOutput;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene::View;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the L1 term; SSIM gets `1 − eta`.
    pub eta: f64,
    pub mask_weight: f64,
    pub fold_reg_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 0.2,
            mask_weight: 1.0,
            fold_reg_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn l1_only() -> Self {
        Self {
            eta: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Invalid(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.mask_weight >= 0.0 && self.fold_reg_weight >= 0.0) {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Individual loss terms, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    /// `1 − SSIM`.
    pub dssim: f64,
    /// Weighted mask term (zero without a mask).
    pub mask: f64,
    pub total: f64,
}

/// Loss value together with its gradient with respect to the rendered
/// (clamped) image and the accumulated alpha.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub terms: LossTerms,
    pub d_image: Image,
    pub d_alpha: Image,
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Adjoint of [`filter_valid`]: scatters an output-sized map back onto the
/// input plane.
fn filter_valid_adjoint(grad: &[f64], ow: usize, oh: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (w, h) = (ow + n - 1, oh + n - 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = grad[y * ow + x];
            for i in 0..n {
                tmp[(y + i) * ow + x] += k[i] * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = tmp[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * g;
            }
        }
    }
    out
}

struct SsimPlane {
    mean: f64,
    /// d(mean SSIM of this plane)/d(a).
    grad_a: Option<Vec<f64>>,
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> SsimPlane {
    let k = gaussian_window();
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter_valid(a, w, h, &k);
    let (mu_b, _, _) = filter_valid(b, w, h, &k);
    let (e_aa, _, _) = filter_valid(&sq(a, a), w, h, &k);
    let (e_bb, _, _) = filter_valid(&sq(b, b), w, h, &k);
    let (e_ab, _, _) = filter_valid(&sq(a, b), w, h, &k);
    let n = (ow * oh) as f64;
    let mut total = 0.0;
    let (mut g_mu, mut g_aa, mut g_ab) = if want_grad {
        (vec![0.0; ow * oh], vec![0.0; ow * oh], vec![0.0; ow * oh])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..ow * oh {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let var_a = e_aa[p] - ma * ma;
        let var_b = e_bb[p] - mb * mb;
        let cov = e_ab[p] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = var_a + var_b + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let p_a1 = a2 / (b1 * b2);
            let p_a2 = a1 / (b1 * b2);
            let p_b1 = -s / b1;
            let p_b2 = -s / b2;
            g_mu[p] = (p_a1 * 2.0 * mb - p_a2 * 2.0 * mb + p_b1 * 2.0 * ma - p_b2 * 2.0 * ma) / n;
            g_aa[p] = p_b2 / n;
            g_ab[p] = 2.0 * p_a2 / n;
        }
    }
    let grad_a = want_grad.then(|| {
        let d_mu = filter_valid_adjoint(&g_mu, ow, oh, &k);
        let d_aa = filter_valid_adjoint(&g_aa, ow, oh, &k);
        let d_ab = filter_valid_adjoint(&g_ab, ow, oh, &k);
        (0..w * h)
            .map(|q| d_mu[q] + 2.0 * a[q] * d_aa[q] + b[q] * d_ab[q])
            .collect()
    });
    SsimPlane {
        mean: total / n,
        grad_a,
    }
}

fn check_ssim_inputs(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM over valid window positions, averaged across channels.
pub fn ssim_index(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_inputs(a, b)?;
    let mut acc = 0.0;
    for c in 0..a.channels {
        let (pa, pb) = (a.channel(c), b.channel(c));
        acc += ssim_plane(&pa.data, &pb.data, a.width, a.height, false).mean;
    }
    Ok(acc / a.channels as f64)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_ssim_inputs(a, b)?;
    let mut acc = 0.0;
    let mut grad = Image::new(a.width, a.height, a.channels);
    let nc = a.channels as f64;
    for c in 0..a.channels {
        let (pa, pb) = (a.channel(c), b.channel(c));
        let plane = ssim_plane(&pa.data, &pb.data, a.width, a.height, true);
        acc += plane.mean;
        for (q, g) in plane.grad_a.unwrap().into_iter().enumerate() {
            grad.data[q * a.channels + c] = g / nc;
        }
    }
    Ok((acc / nc, grad))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for unit-range images; `+∞` when identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `η·L1 + (1 − η)·(1 − SSIM) + L_α`.
pub fn total_loss(rendered: &RenderOutput, view: &View, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_terms(rendered, view, cfg, false)?.terms.total)
}

/// Loss terms with gradients for the backward pass.
pub fn loss_with_grad(rendered: &RenderOutput, view: &View, cfg: &LossConfig) -> Result<LossGrad> {
    loss_terms(rendered, view, cfg, true)
}

fn loss_terms(
    rendered: &RenderOutput,
    view: &View,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<LossGrad> {
    cfg.validate()?;
    let img = &rendered.image;
    let reference = &view.image;
    img.ensure_same_shape(reference)?;
    let n = img.data.len() as f64;
    let l1_value = l1(img, reference)?;

    let mut d_image = Image::new(img.width, img.height, img.channels);
    if want_grad && cfg.eta > 0.0 {
        for (g, (x, y)) in d_image
            .data
            .iter_mut()
            .zip(img.data.iter().zip(&reference.data))
        {
            *g = cfg.eta * sign(x - y) / n;
        }
    }

    let dssim = if cfg.eta < 1.0 {
        if want_grad {
            let (s, g) = ssim_with_grad(img, reference)?;
            let scale = -(1.0 - cfg.eta);
            for (d, gs) in d_image.data.iter_mut().zip(&g.data) {
                *d += scale * gs;
            }
            1.0 - s
        } else {
            1.0 - ssim_index(img, reference)?
        }
    } else {
        0.0
    };

    let mut d_alpha = Image::new(img.width, img.height, 1);
    let mask_term = match &view.mask {
        Some(mask) if cfg.mask_weight > 0.0 => {
            rendered.alpha.ensure_same_shape(mask)?;
            let m = mask.data.len() as f64;
            if want_grad {
                for (g, (a, t)) in d_alpha
                    .data
                    .iter_mut()
                    .zip(rendered.alpha.data.iter().zip(&mask.data))
                {
                    *g = cfg.mask_weight * sign(a - t) / m;
                }
            }
            cfg.mask_weight * l1(&rendered.alpha, mask)?
        }
        _ => 0.0,
    };

    let total = cfg.eta * l1_value + (1.0 - cfg.eta) * dssim + mask_term;
    Ok(LossGrad {
        terms: LossTerms {
            l1: l1_value,
            dssim,
            mask: mask_term,
            total,
        },
        d_image,
        d_alpha,
    })
}
