//! Reverse-mode gradients of the render-plus-loss pipeline.
//!
//! The pipeline is fixed and shallow, so every forward stage has a matching
//! hand-written adjoint: compositing, texture lookup, warp, UV map, plane
//! intersection, SH color and the raw-parameter activations. Per-pixel work
//! accumulates gradients of *activated* quantities (frame vectors, scales,
//! opacity, base color) per primitive; these are pulled back to the raw
//! parameters once per view.
//!
//! Depth sorting is treated as a constant permutation, and fragments dropped
//! by the transmittance cutoff receive no gradient.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::compositor::{
    blended_prefix, collect_fragments, prepare, render_prepared, Prepared, RenderSettings, Shaded,
    TextureSampling, DEFAULT_TRANSMITTANCE_CUTOFF,
};
use crate::error::{Error, Result};
use crate::geometry::pixel_ray;
use crate::loss::{loss_with_grad, total_loss, LossConfig};
use crate::scene::{logistic, ParamBlock, Scene, View};
use crate::sh;
use crate::warp::{fold_penalty, Stencil};

/// Gradient buffers laid out exactly like [`Scene::gather`] for each block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    blocks: [Vec<f64>; 8],
    pub tau: usize,
    pub sh_degree: usize,
}

impl GradientSet {
    pub fn zeros_like(scene: &Scene) -> Self {
        Self {
            blocks: ParamBlock::ALL.map(|b| vec![0.0; scene.block_len(b)]),
            tau: scene.tau,
            sh_degree: scene.sh_degree,
        }
    }

    pub fn block(&self, b: ParamBlock) -> &[f64] {
        &self.blocks[b.index()]
    }

    pub fn block_mut(&mut self, b: ParamBlock) -> &mut [f64] {
        &mut self.blocks[b.index()]
    }

    /// Per-primitive slice of one block.
    pub fn of_primitive(&self, b: ParamBlock, prim: usize) -> &[f64] {
        let s = b.stride(self.tau, self.sh_degree);
        &self.block(b)[prim * s..(prim + 1) * s]
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.blocks.iter_mut().flatten().for_each(|v| *v *= k);
    }

    /// Fails with the name of the first block holding a non-finite value.
    pub fn ensure_finite(&self) -> Result<()> {
        for b in ParamBlock::ALL {
            if !self.block(b).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(b.name()));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self, b: ParamBlock) -> f64 {
        self.block(b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionMode {
    /// Fixed-order accumulation; bit-identical for any thread count.
    Deterministic,
    /// Tree reduction in whatever order the thread pool picks.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeConfig {
    pub mode: ReductionMode,
    pub transmittance_cutoff: f64,
}

impl Default for TapeConfig {
    fn default() -> Self {
        Self {
            mode: ReductionMode::Deterministic,
            transmittance_cutoff: DEFAULT_TRANSMITTANCE_CUTOFF,
        }
    }
}

impl TapeConfig {
    fn validate(&self) -> Result<()> {
        if self.transmittance_cutoff > 0.0 && self.transmittance_cutoff < 1.0 {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "transmittance cutoff {} outside (0, 1)",
                self.transmittance_cutoff
            )))
        }
    }
}

/// Gradient with respect to one primitive's activated quantities.
#[derive(Debug, Clone, Copy, Default)]
struct ActivatedGrad {
    center: Vector3<f64>,
    t_beta: Vector3<f64>,
    t_gamma: Vector3<f64>,
    normal: Vector3<f64>,
    scales: [f64; 2],
    opacity: f64,
    base: [f64; 3],
}

impl ActivatedGrad {
    fn add(&mut self, o: &ActivatedGrad) {
        self.center += o.center;
        self.t_beta += o.t_beta;
        self.t_gamma += o.t_gamma;
        self.normal += o.normal;
        for k in 0..2 {
            self.scales[k] += o.scales[k];
        }
        self.opacity += o.opacity;
        for k in 0..3 {
            self.base[k] += o.base[k];
        }
    }
}

/// Accumulator for a contiguous band of pixels.
#[derive(Debug, Clone)]
struct Partial {
    prims: Vec<ActivatedGrad>,
    rgb: Vec<f64>,
    raw_alpha: Vec<f64>,
    disp: Vec<f64>,
}

impl Partial {
    fn new(scene: &Scene) -> Self {
        Self {
            prims: vec![ActivatedGrad::default(); scene.len()],
            rgb: vec![0.0; scene.block_len(ParamBlock::TextureRgb)],
            raw_alpha: vec![0.0; scene.block_len(ParamBlock::TextureAlpha)],
            disp: vec![0.0; scene.block_len(ParamBlock::Disp)],
        }
    }

    fn add(mut self, o: &Partial) -> Self {
        for (a, b) in self.prims.iter_mut().zip(&o.prims) {
            a.add(b);
        }
        for (a, b) in [
            (&mut self.rgb, &o.rgb),
            (&mut self.raw_alpha, &o.raw_alpha),
            (&mut self.disp, &o.disp),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Adjoint of one shaded fragment given `∂L/∂color` and `∂L/∂weight`.
#[allow(clippy::too_many_arguments)]
fn fragment_backward(
    scene: &Scene,
    prep: &Prepared,
    settings: &RenderSettings,
    ray_origin: &Vector3<f64>,
    ray_dir: &Vector3<f64>,
    s: &Shaded,
    d_color: [f64; 3],
    d_weight: f64,
    acc: &mut Partial,
) {
    let k = s.prim;
    let act = &prep.acts[k];
    let tau = scene.tau;
    let texture = &scene.textures[k];
    let g = &mut acc.prims[k];

    // color = c_tex + c_base, weight = α_tex · G · o
    for ch in 0..3 {
        g.base[ch] += d_color[ch];
    }
    let d_alpha_tex = d_weight * s.footprint * act.opacity;
    let d_footprint = d_weight * s.tex_alpha * act.opacity;
    g.opacity += d_weight * s.tex_alpha * s.footprint;

    // Bilinear texture lookup.
    let (su, sv) = match &s.warped {
        Some(w) => (w.u, w.v),
        None => (s.u, s.v),
    };
    let st = Stencil::new(su, sv, tau);
    let weights = st.weights();
    let texels = st.texels();
    let base_rgb = k * tau * tau * 3;
    let base_a = k * tau * tau;
    for n in 0..4 {
        let t = texels[n];
        for ch in 0..3 {
            acc.rgb[base_rgb + 3 * t + ch] += weights[n] * d_color[ch];
        }
        let a = logistic(texture.raw_alpha[t]);
        acc.raw_alpha[base_a + t] += weights[n] * d_alpha_tex * a * (1.0 - a);
    }
    let (wu, wv) = st.weight_gradients();
    let mut d_su = 0.0;
    let mut d_sv = 0.0;
    for n in 0..4 {
        let t = texels[n];
        let mut v = d_alpha_tex * logistic(texture.raw_alpha[t]);
        for ch in 0..3 {
            v += d_color[ch] * texture.rgb[3 * t + ch];
        }
        d_su += wu[n] * v;
        d_sv += wv[n] * v;
    }

    // Warp: (u', v') = clamp((u, v) + λ·D(u, v)).
    let (mut d_u, mut d_v) = (d_su, d_sv);
    if let Some(w) = &s.warped {
        let lambda = settings.lambda;
        let d_wu = if w.in_u { d_su } else { 0.0 };
        let d_wv = if w.in_v { d_sv } else { 0.0 };
        let field = &scene.deformations[k];
        let ds = &w.stencil;
        let dw = ds.weights();
        let base_d = k * tau * tau * 2;
        for (n, t) in ds.texels().into_iter().enumerate() {
            acc.disp[base_d + 2 * t] += lambda * dw[n] * d_wu;
            acc.disp[base_d + 2 * t + 1] += lambda * dw[n] * d_wv;
        }
        let gu = ds.gradient_of(|t| field.disp[2 * t]);
        let gv = ds.gradient_of(|t| field.disp[2 * t + 1]);
        // (d_u, d_v) = J_Φᵀ (d_wu, d_wv)
        d_u = (1.0 + lambda * gu[0]) * d_wu + lambda * gv[0] * d_wv;
        d_v = lambda * gu[1] * d_wu + (1.0 + lambda * gv[1]) * d_wv;
    }
    if !s.uv_in[0] {
        d_u = 0.0;
    }
    if !s.uv_in[1] {
        d_v = 0.0;
    }

    // UV map and footprint.
    let (beta, gamma) = (s.hit.beta, s.hit.gamma);
    let uv_scale = tau as f64 / (2.0 * scene.xi);
    let d_beta = d_u * uv_scale - d_footprint * s.footprint * beta;
    let d_gamma = d_v * uv_scale - d_footprint * s.footprint * gamma;

    // Plane intersection.
    let [sb, sg] = act.scales;
    let r = ray_origin + ray_dir * s.hit.t - act.center;
    g.scales[0] -= d_beta * beta / sb;
    g.scales[1] -= d_gamma * gamma / sg;
    g.t_beta += r * (d_beta / sb);
    g.t_gamma += r * (d_gamma / sg);
    let d_r = act.t_beta * (d_beta / sb) + act.t_gamma * (d_gamma / sg);
    let denom = ray_dir.dot(&act.normal);
    let d_t = d_r.dot(ray_dir);
    g.center += -d_r + act.normal * (d_t / denom);
    g.normal -= r * (d_t / denom);
}

/// Adjoint of compositing for one pixel; dispatches to the fragments.
#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    scene: &Scene,
    prep: &Prepared,
    settings: &RenderSettings,
    ray_origin: &Vector3<f64>,
    ray_dir: &Vector3<f64>,
    frags: &[Shaded],
    d_image: [f64; 3],
    d_alpha: f64,
    acc: &mut Partial,
) {
    let n = blended_prefix(
        frags.iter().map(|s| s.fragment.weight),
        settings.transmittance_cutoff,
    );
    let frags = &frags[..n];
    let bg = scene.background;

    // Forward replay for transmittances and the unclamped color.
    let mut trans = Vec::with_capacity(n);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    for s in frags {
        trans.push(t);
        let f = &s.fragment;
        for ch in 0..3 {
            color[ch] += f.color[ch] * f.weight * t;
        }
        t *= 1.0 - f.weight;
    }
    let mut d_c = [0.0; 3];
    for ch in 0..3 {
        let c = color[ch] + t * bg[ch];
        if (0.0..=1.0).contains(&c) {
            d_c[ch] = d_image[ch];
        }
    }
    if d_c == [0.0; 3] && d_alpha == 0.0 {
        return;
    }

    let mut behind = bg;
    let mut behind_trans = 1.0;
    for i in (0..n).rev() {
        let f = &frags[i].fragment;
        let ti = trans[i];
        let mut d_w = d_alpha * ti * behind_trans;
        let mut d_col = [0.0; 3];
        for ch in 0..3 {
            d_col[ch] = d_c[ch] * f.weight * ti;
            d_w += d_c[ch] * ti * (f.color[ch] - behind[ch]);
            behind[ch] = f.color[ch] * f.weight + (1.0 - f.weight) * behind[ch];
        }
        behind_trans *= 1.0 - f.weight;
        fragment_backward(
            scene, prep, settings, ray_origin, ray_dir, &frags[i], d_col, d_w, acc,
        );
    }
}

/// Derivatives of the rotation matrix entries with respect to `(w, x, y, z)`,
/// contracted with `g = ∂L/∂R`.
fn quaternion_adjoint(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |r: usize, c: usize| g[(r, c)];
    let dw =
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// Pulls per-primitive activated gradients back to raw parameters.
fn pull_back(scene: &Scene, prep: &Prepared, partial: Partial, out: &mut GradientSet) {
    let n_sh = sh::coeff_count(scene.sh_degree);
    for (k, g) in partial.prims.iter().enumerate() {
        let act = &prep.acts[k];
        let prim = &scene.primitives[k];

        // Base color depends on the center through the view direction.
        let mut d_coeffs = vec![[0.0; 3]; n_sh];
        let d_dir = sh::eval_sh_color_backward(
            &prim.sh,
            &prep.view_dirs[k],
            scene.sh_degree,
            g.base,
            &mut d_coeffs,
        );
        let dir = prep.view_dirs[k];
        let dist = prep.view_dist[k];
        let d_center = g.center
            + if dist > 0.0 {
                (d_dir - dir * dir.dot(&d_dir)) / dist
            } else {
                Vector3::zeros()
            };

        let gr = Matrix3::from_columns(&[g.t_beta, g.t_gamma, g.normal]);
        let d_unit = quaternion_adjoint(act.unit_quaternion, &gr);
        let q = act.unit_quaternion;
        let radial: f64 = (0..4).map(|i| q[i] * d_unit[i]).sum();
        let d_quat: [f64; 4] =
            std::array::from_fn(|i| (d_unit[i] - q[i] * radial) / act.quaternion_norm);

        out.block_mut(ParamBlock::Center)[3 * k..3 * k + 3].copy_from_slice(d_center.as_slice());
        out.block_mut(ParamBlock::Quaternion)[4 * k..4 * k + 4].copy_from_slice(&d_quat);
        let ds = out.block_mut(ParamBlock::RawScales);
        ds[2 * k] = g.scales[0] * act.scales[0];
        ds[2 * k + 1] = g.scales[1] * act.scales[1];
        out.block_mut(ParamBlock::RawOpacity)[k] = g.opacity * act.opacity * (1.0 - act.opacity);
        let dsh = &mut out.block_mut(ParamBlock::Sh)[k * n_sh * 3..(k + 1) * n_sh * 3];
        for (j, c) in d_coeffs.iter().enumerate() {
            dsh[3 * j..3 * j + 3].copy_from_slice(c);
        }
    }
    out.block_mut(ParamBlock::TextureRgb)
        .copy_from_slice(&partial.rgb);
    out.block_mut(ParamBlock::TextureAlpha)
        .copy_from_slice(&partial.raw_alpha);
    out.block_mut(ParamBlock::Disp)
        .copy_from_slice(&partial.disp);
}

fn effective_settings(settings: &RenderSettings, tape: &TapeConfig) -> RenderSettings {
    RenderSettings {
        transmittance_cutoff: tape.transmittance_cutoff,
        ..*settings
    }
}

fn fold_term(
    scene: &Scene,
    settings: &RenderSettings,
    cfg: &LossConfig,
) -> Option<(f64, Vec<Vec<f64>>)> {
    if cfg.fold_reg_weight <= 0.0
        || settings.sampling != TextureSampling::Warped
        || scene.is_empty()
    {
        return None;
    }
    let n = scene.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(scene.len());
    for d in &scene.deformations {
        let (v, mut g) = fold_penalty(d, settings.lambda);
        value += cfg.fold_reg_weight * v / n;
        g.iter_mut().for_each(|x| *x *= cfg.fold_reg_weight / n);
        grads.push(g);
    }
    Some((value, grads))
}

fn backward_view(
    scene: &Scene,
    view: &View,
    cfg: &LossConfig,
    settings: &RenderSettings,
    tape: &TapeConfig,
) -> Result<(f64, GradientSet)> {
    let camera = &view.camera;
    let prep = prepare(scene, camera)?;
    let out = render_prepared(scene, camera, &prep, settings);
    if !out.image.is_finite() {
        return Err(Error::NonFinite("rendered image"));
    }
    let lg = loss_with_grad(&out, view, cfg)?;
    let w = camera.width;

    let row = |y: usize| -> Partial {
        let mut acc = Partial::new(scene);
        let mut frags = Vec::new();
        for x in 0..w {
            let ray = pixel_ray(camera, x as f64 + 0.5, y as f64 + 0.5);
            let p = y * w + x;
            let d_img = [
                lg.d_image.data[3 * p],
                lg.d_image.data[3 * p + 1],
                lg.d_image.data[3 * p + 2],
            ];
            let d_alpha = lg.d_alpha.data[p];
            if d_img == [0.0; 3] && d_alpha == 0.0 {
                continue;
            }
            collect_fragments(scene, &prep, settings, &ray, &mut frags);
            pixel_backward(
                scene,
                &prep,
                settings,
                &ray.origin,
                &ray.direction,
                &frags,
                d_img,
                d_alpha,
                &mut acc,
            );
        }
        acc
    };

    let rows = 0..camera.height;
    let partial = match tape.mode {
        ReductionMode::Deterministic => {
            let parts: Vec<Partial> = rows.into_par_iter().map(row).collect();
            parts.iter().fold(Partial::new(scene), |a, b| a.add(b))
        }
        ReductionMode::Fast => rows
            .into_par_iter()
            .map(row)
            .reduce(|| Partial::new(scene), |a, b| a.add(&b)),
    };

    let mut grads = GradientSet::zeros_like(scene);
    pull_back(scene, &prep, partial, &mut grads);
    Ok((lg.terms.total, grads))
}

/// Loss averaged over `views` and its exact gradient with respect to every
/// raw parameter.
pub fn backward(
    scene: &Scene,
    views: &[View],
    cfg: &LossConfig,
    settings: &RenderSettings,
    tape: &TapeConfig,
) -> Result<(f64, GradientSet)> {
    tape.validate()?;
    cfg.validate()?;
    scene.validate()?;
    if views.is_empty() {
        return Err(Error::Invalid("backward needs at least one view".into()));
    }
    let settings = effective_settings(settings, tape);
    let mut total = GradientSet::zeros_like(scene);
    let mut loss = 0.0;
    for view in views {
        let (l, g) = backward_view(scene, view, cfg, &settings, tape)?;
        loss += l;
        total.add_assign(&g);
    }
    let inv = 1.0 / views.len() as f64;
    loss *= inv;
    total.scale(inv);
    if let Some((value, grads)) = fold_term(scene, &settings, cfg) {
        loss += value;
        let stride = scene.tau * scene.tau * 2;
        let d = total.block_mut(ParamBlock::Disp);
        for (k, g) in grads.iter().enumerate() {
            for (x, y) in d[k * stride..(k + 1) * stride].iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    total.ensure_finite()?;
    Ok((loss, total))
}

/// Forward-only evaluation of the same objective [`backward`] differentiates.
pub fn evaluate_loss(
    scene: &Scene,
    views: &[View],
    cfg: &LossConfig,
    settings: &RenderSettings,
    tape: &TapeConfig,
) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::Invalid("loss needs at least one view".into()));
    }
    let settings = effective_settings(settings, tape);
    let mut loss = 0.0;
    for view in views {
        let prep = prepare(scene, &view.camera)?;
        let out = render_prepared(scene, &view.camera, &prep, &settings);
        loss += total_loss(&out, view, cfg)?;
    }
    loss /= views.len() as f64;
    if let Some((value, _)) = fold_term(scene, &settings, cfg) {
        loss += value;
    }
    Ok(loss)
}

/// Worst disagreement found in one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: ParamBlock,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub h: f64,
    pub tol: f64,
    pub abs_floor: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn block(&self, b: ParamBlock) -> Option<&BlockCheck> {
        self.blocks.iter().find(|c| c.block == b)
    }
}

/// Gradients whose magnitude stays below this are compared absolutely.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-6;

/// Steps tried per entry: `h`, then `h/10` and `h/100` while the entry
/// still fails.
pub const GRADCHECK_REFINEMENTS: usize = 3;

/// Compares [`backward`] against finite differences of [`evaluate_loss`]
/// for every scalar parameter.
///
/// Each entry is scored against the central, forward and backward
/// differences built from `f(x − h)`, `f(x)` and `f(x + h)`, keeping the
/// smallest relative error `|a − n| / max(|a|, |n|, abs_floor)`. Bilinear
/// lookups are only piecewise smooth, so a texel-center kink inside
/// `[x − h, x + h]` can spoil a difference; an entry that fails is retried
/// with smaller steps, which shrinks the chance of straddling a kink while
/// a wrong derivative keeps disagreeing at every step. A block passes when
/// its worst entry is below `tol`.
pub fn grad_check(
    scene: &Scene,
    views: &[View],
    cfg: &LossConfig,
    settings: &RenderSettings,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Invalid(
            "finite-difference step must be positive".into(),
        ));
    }
    let tape = TapeConfig::default();
    let (_, grads) = backward(scene, views, cfg, settings, &tape)?;
    let f0 = evaluate_loss(scene, views, cfg, settings, &tape)?;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_ABS_FLOOR);
    let mut blocks = Vec::new();
    for block in ParamBlock::ALL {
        let n = scene.block_len(block);
        let analytic = grads.block(block);
        let scored: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let a = analytic[i];
                let mut s = scene.clone();
                let x0 = s.param(block, i);
                let mut best = (f64::INFINITY, f64::NAN);
                let mut step = h;
                for _ in 0..GRADCHECK_REFINEMENTS {
                    *s.param_mut(block, i) = x0 + step;
                    let fp = evaluate_loss(&s, views, cfg, settings, &tape)?;
                    *s.param_mut(block, i) = x0 - step;
                    let fm = evaluate_loss(&s, views, cfg, settings, &tape)?;
                    for d in [(fp - fm) / (2.0 * step), (fp - f0) / step, (f0 - fm) / step] {
                        let e = rel(a, d);
                        if e < best.0 {
                            best = (e, d);
                        }
                    }
                    if best.0 < tol {
                        break;
                    }
                    step /= 10.0;
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let mut check = BlockCheck {
            block,
            entries: n,
            max_rel_error: 0.0,
            worst_index: None,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for (i, &(err, num)) in scored.iter().enumerate() {
            if check.worst_index.is_none() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = Some(i);
                check.analytic = analytic[i];
                check.numeric = num;
            }
        }
        check.passed = check.max_rel_error < tol;
        blocks.push(check);
    }
    Ok(GradCheckReport {
        blocks,
        h,
        tol,
        abs_floor: GRADCHECK_ABS_FLOOR,
    })
}
