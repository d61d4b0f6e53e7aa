//! Texture-space warping.
//!
//! A deformation grid `D` (one displacement per texel, in texel units) is
//! extended to a continuous field by bilinear interpolation and defines the
//! warp `Φ(u, v) = (u, v) + λ·D(u, v)`. Textures are then sampled at the
//! warped coordinates. Where `|det J_Φ| > 1` the warp stretches a small
//! patch of the footprint over many texels, which is how capacity moves
//! toward high-frequency content.
//!
//! Grid conventions shared by textures and deformations: texel `(i, j)` is
//! centered at `(i + 0.5, j + 0.5)`, queries outside the hull of texel
//! centers clamp to the border, and a query that falls exactly on a cell
//! boundary belongs to the cell with the lower index.

use nalgebra::Matrix2;

use crate::scene::{logistic, DeformationField, TextureMap};

/// Interpolation position along one grid axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Axis {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
    /// False when the query was clamped to the border; the derivative along
    /// this axis is then zero.
    pub inside: bool,
}

impl Axis {
    pub fn locate(coord: f64, tau: usize) -> Axis {
        if tau == 1 {
            return Axis {
                lo: 0,
                hi: 0,
                frac: 0.0,
                inside: false,
            };
        }
        let x = coord - 0.5;
        let last = (tau - 1) as f64;
        if x < 0.0 {
            return Axis {
                lo: 0,
                hi: 1,
                frac: 0.0,
                inside: false,
            };
        }
        if x > last {
            return Axis {
                lo: tau - 2,
                hi: tau - 1,
                frac: 1.0,
                inside: false,
            };
        }
        let fl = x.floor();
        let mut lo = fl as usize;
        if fl == x && lo > 0 {
            lo -= 1;
        }
        lo = lo.min(tau - 2);
        Axis {
            lo,
            hi: lo + 1,
            frac: x - lo as f64,
            inside: true,
        }
    }
}

/// Bilinear stencil: the four surrounding texels and their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub u: Axis,
    pub v: Axis,
    pub tau: usize,
}

impl Stencil {
    pub fn new(u: f64, v: f64, tau: usize) -> Self {
        Self {
            u: Axis::locate(u, tau),
            v: Axis::locate(v, tau),
            tau,
        }
    }

    /// Texel indices in the order `(lo,lo) (hi,lo) (lo,hi) (hi,hi)`.
    #[inline]
    pub fn texels(&self) -> [usize; 4] {
        let t = self.tau;
        [
            self.v.lo * t + self.u.lo,
            self.v.lo * t + self.u.hi,
            self.v.hi * t + self.u.lo,
            self.v.hi * t + self.u.hi,
        ]
    }

    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fu, fv) = (self.u.frac, self.v.frac);
        [
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        ]
    }

    /// Interpolates channel `ch` of a grid with `channels` interleaved values.
    #[inline]
    pub fn sample(&self, grid: &[f64], channels: usize, ch: usize) -> f64 {
        let w = self.weights();
        let k = self.texels();
        (0..4).map(|n| w[n] * grid[k[n] * channels + ch]).sum()
    }

    /// Like [`Stencil::sample`] with a per-texel transform applied first.
    #[inline]
    pub fn sample_map(&self, grid: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let w = self.weights();
        let k = self.texels();
        (0..4).map(|n| w[n] * f(grid[k[n]])).sum()
    }

    /// Partial derivatives `(∂/∂u, ∂/∂v)` of the interpolant. Written as
    /// weighted differences so constant grids give exactly zero.
    #[inline]
    pub fn gradient_of(&self, value: impl Fn(usize) -> f64) -> [f64; 2] {
        let [k00, k10, k01, k11] = self.texels();
        let (a, b, c, d) = (value(k00), value(k10), value(k01), value(k11));
        let (fu, fv) = (self.u.frac, self.v.frac);
        let du = if self.u.inside {
            (1.0 - fv) * (b - a) + fv * (d - c)
        } else {
            0.0
        };
        let dv = if self.v.inside {
            (1.0 - fu) * (c - a) + fu * (d - b)
        } else {
            0.0
        };
        [du, dv]
    }

    /// Derivatives of the four weights with respect to `u` and `v`, masked
    /// by the clamp rule.
    #[inline]
    pub fn weight_gradients(&self) -> ([f64; 4], [f64; 4]) {
        let (fu, fv) = (self.u.frac, self.v.frac);
        let du = if self.u.inside {
            [-(1.0 - fv), 1.0 - fv, -fv, fv]
        } else {
            [0.0; 4]
        };
        let dv = if self.v.inside {
            [-(1.0 - fu), -fu, 1.0 - fu, fu]
        } else {
            [0.0; 4]
        };
        (du, dv)
    }
}

/// Warp Jacobian `∂(u', v')/∂(u, v)` and its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian2 {
    pub m: Matrix2<f64>,
    pub det: f64,
}

impl Jacobian2 {
    pub fn from_matrix(m: Matrix2<f64>) -> Self {
        Self {
            det: m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
            m,
        }
    }

    pub fn singular_values(&self) -> (f64, f64) {
        let svd = self.m.svd(false, false);
        let s = svd.singular_values;
        (s[0].min(s[1]), s[0].max(s[1]))
    }
}

/// Continuous displacement `D(u, v)`.
pub fn eval_deformation(d: &DeformationField, u: f64, v: f64) -> (f64, f64) {
    let s = Stencil::new(u, v, d.tau);
    (s.sample(&d.disp, 2, 0), s.sample(&d.disp, 2, 1))
}

/// Result of warping one texture coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Warped {
    pub u: f64,
    pub v: f64,
    /// Per-axis flag: the warped value needed no clamping.
    pub in_u: bool,
    pub in_v: bool,
    pub stencil: Stencil,
}

#[inline]
pub(crate) fn warp_detailed(u: f64, v: f64, d: &DeformationField, lambda: f64) -> Warped {
    let s = Stencil::new(u, v, d.tau);
    let tau = d.tau as f64;
    let wu = u + lambda * s.sample(&d.disp, 2, 0);
    let wv = v + lambda * s.sample(&d.disp, 2, 1);
    Warped {
        u: wu.clamp(0.0, tau),
        v: wv.clamp(0.0, tau),
        in_u: (0.0..=tau).contains(&wu),
        in_v: (0.0..=tau).contains(&wv),
        stencil: s,
    }
}

/// `Φ(u, v) = (u, v) + λ·D(u, v)`, clamped to `[0, τ]²`.
pub fn warp_uv(u: f64, v: f64, d: &DeformationField, lambda: f64) -> (f64, f64) {
    let w = warp_detailed(u, v, d, lambda);
    (w.u, w.v)
}

/// `J_Φ = I + λ·J_D` with `J_D` the derivative of the bilinear interpolant.
pub fn warp_jacobian(u: f64, v: f64, d: &DeformationField, lambda: f64) -> Jacobian2 {
    let s = Stencil::new(u, v, d.tau);
    let gu = s.gradient_of(|k| d.disp[2 * k]);
    let gv = s.gradient_of(|k| d.disp[2 * k + 1]);
    Jacobian2::from_matrix(Matrix2::new(
        1.0 + lambda * gu[0],
        lambda * gu[1],
        lambda * gv[0],
        1.0 + lambda * gv[1],
    ))
}

/// Bilinear RGB and alpha at `(u', v')`; alpha is interpolated after the
/// logistic activation.
pub fn sample_texture(t: &TextureMap, u: f64, v: f64) -> ([f64; 3], f64) {
    let s = Stencil::new(u, v, t.tau);
    let rgb = [
        s.sample(&t.rgb, 3, 0),
        s.sample(&t.rgb, 3, 1),
        s.sample(&t.rgb, 3, 2),
    ];
    (rgb, s.sample_map(&t.raw_alpha, logistic))
}

/// Analytic spatial gradient of each RGB channel of the bilinear texture.
pub fn texture_gradient(t: &TextureMap, u: f64, v: f64) -> [[f64; 2]; 3] {
    let s = Stencil::new(u, v, t.tau);
    [0, 1, 2].map(|ch| s.gradient_of(|k| t.rgb[3 * k + ch]))
}

/// Gradient of the warped color lookup with respect to `(u, v)`, per
/// channel: `J_Φᵀ · ∇T(Φ(u, v))`.
pub fn warped_color_gradient(
    t: &TextureMap,
    d: &DeformationField,
    lambda: f64,
    u: f64,
    v: f64,
) -> [[f64; 2]; 3] {
    let w = warp_detailed(u, v, d, lambda);
    let j = warp_jacobian(u, v, d, lambda).m;
    let g = texture_gradient(t, w.u, w.v);
    g.map(|[gu, gv]| {
        // Clamped axes contribute nothing.
        let gu = if w.in_u { gu } else { 0.0 };
        let gv = if w.in_v { gv } else { 0.0 };
        [
            j[(0, 0)] * gu + j[(1, 0)] * gv,
            j[(0, 1)] * gu + j[(1, 1)] * gv,
        ]
    })
}

/// Fold penalty `Σ max(0, −det J_Φ)²` over texel centers, divided by the
/// texel count, with its gradient with respect to `d.disp`.
pub fn fold_penalty(d: &DeformationField, lambda: f64) -> (f64, Vec<f64>) {
    let tau = d.tau;
    let mut grad = vec![0.0; d.disp.len()];
    let mut value = 0.0;
    let norm = (tau * tau) as f64;
    for j in 0..tau {
        for i in 0..tau {
            let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
            let jac = warp_jacobian(u, v, d, lambda);
            if jac.det >= 0.0 {
                continue;
            }
            value += jac.det * jac.det / norm;
            // d(det)/d(m) = cofactor matrix.
            let m = jac.m;
            let dm = [m[(1, 1)], -m[(1, 0)], -m[(0, 1)], m[(0, 0)]];
            let scale = 2.0 * jac.det / norm * lambda;
            let s = Stencil::new(u, v, tau);
            let (wu, wv) = s.weight_gradients();
            for (n, k) in s.texels().into_iter().enumerate() {
                // m00 = 1 + λ ∂Du/∂u, m01 = λ ∂Du/∂v, m10 = λ ∂Dv/∂u, m11 = 1 + λ ∂Dv/∂v.
                grad[2 * k] += scale * (dm[0] * wu[n] + dm[1] * wv[n]);
                grad[2 * k + 1] += scale * (dm[2] * wu[n] + dm[3] * wv[n]);
            }
        }
    }
    (value, grad)
}
