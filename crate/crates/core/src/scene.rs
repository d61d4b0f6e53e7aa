//! Scene representation: tangent-plane Gaussians, their RGBA textures and
//! texture-space deformation grids, cameras and reference views.

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::sh;

/// Raw alpha assigned to fresh texels; logistic(4) ≈ 0.982.
pub const NEUTRAL_RAW_ALPHA: f64 = 4.0;
pub const DEFAULT_XI: f64 = 3.0;
pub const DEFAULT_SH_DEGREE: usize = 3;

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One textured splat in raw (unconstrained) parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub center: [f64; 3],
    /// `(w, x, y, z)`; normalized on activation.
    pub quaternion: [f64; 4],
    pub raw_scales: [f64; 2],
    pub raw_opacity: f64,
    /// `(degree + 1)²` RGB coefficient triples.
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    pub fn new(center: [f64; 3], scales: [f64; 2], opacity: f64, sh_degree: usize) -> Self {
        Self {
            center,
            quaternion: [1.0, 0.0, 0.0, 0.0],
            raw_scales: [scales[0].ln(), scales[1].ln()],
            raw_opacity: logit(opacity),
            sh: vec![[0.0; 3]; sh::coeff_count(sh_degree)],
        }
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh::degree_for_count(self.sh.len())
    }
}

/// Activated view of a primitive: orthonormal frame, positive scales and
/// opacity in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedPrimitive {
    pub center: Vector3<f64>,
    pub t_beta: Vector3<f64>,
    pub t_gamma: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub scales: [f64; 2],
    pub opacity: f64,
    /// Unit quaternion the frame was built from.
    pub unit_quaternion: [f64; 4],
    /// Norm of the raw quaternion.
    pub quaternion_norm: f64,
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Maps raw parameters to their constrained values.
pub fn activate(prim: &GaussianPrimitive) -> Result<ActivatedPrimitive> {
    let q = prim.quaternion;
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Invalid(format!(
            "quaternion {q:?} cannot be normalized"
        )));
    }
    if !prim
        .center
        .iter()
        .chain(&prim.raw_scales)
        .all(|v| v.is_finite())
        || !prim.raw_opacity.is_finite()
    {
        return Err(Error::Invalid("non-finite raw primitive parameter".into()));
    }
    let unit = q.map(|v| v / norm);
    let r = rotation_from_quaternion(unit);
    let t_beta: Vector3<f64> = r.column(0).into();
    let t_gamma: Vector3<f64> = r.column(1).into();
    Ok(ActivatedPrimitive {
        center: Vector3::from(prim.center),
        t_beta,
        t_gamma,
        normal: t_beta.cross(&t_gamma),
        scales: prim.raw_scales.map(f64::exp),
        opacity: logistic(prim.raw_opacity),
        unit_quaternion: unit,
        quaternion_norm: norm,
    })
}

/// Per-primitive `τ×τ` RGBA texel grid. Texel `(i, j)` sits at texture
/// coordinate `(i + 0.5, j + 0.5)`; storage is row-major in `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub tau: usize,
    /// Additive color residuals, `τ·τ·3`.
    pub rgb: Vec<f64>,
    /// Pre-logistic alpha, `τ·τ`.
    pub raw_alpha: Vec<f64>,
}

impl TextureMap {
    /// Zero color residual, alpha ≈ 0.982.
    pub fn neutral(tau: usize) -> Self {
        Self {
            tau,
            rgb: vec![0.0; tau * tau * 3],
            raw_alpha: vec![NEUTRAL_RAW_ALPHA; tau * tau],
        }
    }

    #[inline]
    pub fn texel(&self, i: usize, j: usize) -> usize {
        j * self.tau + i
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        logistic(self.raw_alpha[self.texel(i, j)])
    }
}

/// Per-primitive `τ×τ×2` displacement grid in texel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub tau: usize,
    pub disp: Vec<f64>,
}

impl DeformationField {
    pub fn zero(tau: usize) -> Self {
        Self {
            tau,
            disp: vec![0.0; tau * tau * 2],
        }
    }

    /// Fills the grid by sampling `f(u, v)` at texel centers.
    pub fn from_fn(tau: usize, mut f: impl FnMut(f64, f64) -> [f64; 2]) -> Self {
        let mut disp = Vec::with_capacity(tau * tau * 2);
        for j in 0..tau {
            for i in 0..tau {
                disp.extend(f(i as f64 + 0.5, j as f64 + 0.5));
            }
        }
        Self { tau, disp }
    }

    pub fn is_zero(&self) -> bool {
        self.disp.iter().all(|&d| d == 0.0)
    }
}

/// Pinhole camera with an OpenCV-style frame (+z forward, +y down).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation part of world_from_camera.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub translation: Vector3<f64>,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with the image `+y` axis
    /// following `-up` as closely as possible.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        focal: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: eye,
        }
    }

    pub fn violations(&self, out: &mut Vec<Violation>, ctx: &str) {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(Violation::new(ctx, "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            out.push(Violation::new(ctx, "principal point outside the image"));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).abs().max() > 1e-6 {
            out.push(Violation::new(ctx, "rotation is not orthonormal"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            out.push(Violation::new(ctx, "non-finite camera translation"));
        }
    }
}

/// A camera with its reference image and optional foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub mask: Option<Image>,
}

impl View {
    pub fn new(camera: Camera, image: Image, mask: Option<Image>) -> Result<Self> {
        let view = Self {
            camera,
            image,
            mask,
        };
        let v = view.violations();
        if v.is_empty() {
            Ok(view)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.camera.violations(&mut out, "camera");
        let (w, h) = (self.camera.width, self.camera.height);
        if self.image.width != w || self.image.height != h || self.image.channels != 3 {
            out.push(Violation::new(
                "image",
                "dimensions do not match the camera",
            ));
        }
        if !self.image.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            out.push(Violation::new("image", "values outside [0, 1]"));
        }
        if let Some(mask) = &self.mask {
            if mask.width != w || mask.height != h || mask.channels != 1 {
                out.push(Violation::new("mask", "dimensions do not match the camera"));
            }
            if !mask.data.iter().all(|v| (0.0..=1.0).contains(v)) {
                out.push(Violation::new("mask", "values outside [0, 1]"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub textures: Vec<TextureMap>,
    pub deformations: Vec<DeformationField>,
    /// Texture support half-width in units of the footprint σ.
    pub xi: f64,
    pub background: [f64; 3],
    pub sh_degree: usize,
    pub tau: usize,
}

impl Scene {
    pub fn new(tau: usize, sh_degree: usize) -> Self {
        Self {
            primitives: Vec::new(),
            textures: Vec::new(),
            deformations: Vec::new(),
            xi: DEFAULT_XI,
            background: [0.0; 3],
            sh_degree,
            tau,
        }
    }

    /// Appends a primitive with a neutral texture and zero deformation.
    pub fn push(&mut self, prim: GaussianPrimitive) {
        self.primitives.push(prim);
        self.textures.push(TextureMap::neutral(self.tau));
        self.deformations.push(DeformationField::zero(self.tau));
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Copy with every texture and deformation reset to neutral at `tau`.
    pub fn with_neutral_textures(&self, tau: usize) -> Scene {
        let n = self.len();
        Scene {
            primitives: self.primitives.clone(),
            textures: vec![TextureMap::neutral(tau); n],
            deformations: vec![DeformationField::zero(tau); n],
            tau,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_scene(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// One broken invariant, located by a short path such as `primitives[3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Checks every scene invariant and returns all violations found.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.primitives.len();
    if scene.textures.len() != n || scene.deformations.len() != n {
        out.push(Violation::new(
            "scene",
            format!(
                "list length mismatch: {} primitives, {} textures, {} deformations",
                n,
                scene.textures.len(),
                scene.deformations.len()
            ),
        ));
    }
    if !(scene.xi > 0.0) || !scene.xi.is_finite() {
        out.push(Violation::new("scene", "xi must be positive"));
    }
    if scene.tau == 0 {
        out.push(Violation::new("scene", "tau must be at least 1"));
    }
    if scene.sh_degree > sh::MAX_DEGREE {
        out.push(Violation::new(
            "scene",
            "sh_degree above 3 is not supported",
        ));
    }
    if !scene.background.iter().all(|v| (0.0..=1.0).contains(v)) {
        out.push(Violation::new("scene", "background outside [0, 1]"));
    }
    let want_sh = sh::coeff_count(scene.sh_degree);
    for (i, p) in scene.primitives.iter().enumerate() {
        let loc = format!("primitives[{i}]");
        if p.sh.len() != want_sh {
            out.push(Violation::new(
                &loc,
                format!("expected {want_sh} SH coefficients, found {}", p.sh.len()),
            ));
        }
        let finite = p
            .center
            .iter()
            .chain(&p.quaternion)
            .chain(&p.raw_scales)
            .chain(std::iter::once(&p.raw_opacity))
            .chain(p.sh.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            out.push(Violation::new(&loc, "non-finite parameter"));
        }
        if p.quaternion.iter().all(|&v| v == 0.0) {
            out.push(Violation::new(&loc, "zero quaternion"));
        }
    }
    let tau = scene.tau;
    for (i, t) in scene.textures.iter().enumerate() {
        let loc = format!("textures[{i}]");
        if t.tau != tau || t.rgb.len() != tau * tau * 3 || t.raw_alpha.len() != tau * tau {
            out.push(Violation::new(
                &loc,
                format!("dimensions are not {tau}x{tau}"),
            ));
        }
        if !t.rgb.iter().chain(&t.raw_alpha).all(|v| v.is_finite()) {
            out.push(Violation::new(&loc, "non-finite texel"));
        }
    }
    for (i, d) in scene.deformations.iter().enumerate() {
        let loc = format!("deformations[{i}]");
        if d.tau != tau || d.disp.len() != tau * tau * 2 {
            out.push(Violation::new(
                &loc,
                format!("dimensions are not {tau}x{tau}x2"),
            ));
        }
        if !d.disp.iter().all(|v| v.is_finite()) {
            out.push(Violation::new(&loc, "non-finite displacement"));
        }
    }
    out
}

/// Trainable parameter groups, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamBlock {
    Center,
    Quaternion,
    RawScales,
    RawOpacity,
    Sh,
    TextureRgb,
    TextureAlpha,
    Disp,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 8] = [
        ParamBlock::Center,
        ParamBlock::Quaternion,
        ParamBlock::RawScales,
        ParamBlock::RawOpacity,
        ParamBlock::Sh,
        ParamBlock::TextureRgb,
        ParamBlock::TextureAlpha,
        ParamBlock::Disp,
    ];

    pub const GAUSSIAN: [ParamBlock; 5] = [
        ParamBlock::Center,
        ParamBlock::Quaternion,
        ParamBlock::RawScales,
        ParamBlock::RawOpacity,
        ParamBlock::Sh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Center => "center",
            ParamBlock::Quaternion => "quaternion",
            ParamBlock::RawScales => "raw_scales",
            ParamBlock::RawOpacity => "raw_opacity",
            ParamBlock::Sh => "sh",
            ParamBlock::TextureRgb => "texture_rgb",
            ParamBlock::TextureAlpha => "texture_alpha",
            ParamBlock::Disp => "disp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Scalars per primitive.
    pub fn stride(self, tau: usize, sh_degree: usize) -> usize {
        match self {
            ParamBlock::Center => 3,
            ParamBlock::Quaternion => 4,
            ParamBlock::RawScales => 2,
            ParamBlock::RawOpacity => 1,
            ParamBlock::Sh => sh::coeff_count(sh_degree) * 3,
            ParamBlock::TextureRgb => tau * tau * 3,
            ParamBlock::TextureAlpha => tau * tau,
            ParamBlock::Disp => tau * tau * 2,
        }
    }
}

impl fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Scene {
    pub fn block_len(&self, block: ParamBlock) -> usize {
        self.len() * block.stride(self.tau, self.sh_degree)
    }

    /// Flattens one parameter block in primitive order.
    pub fn gather(&self, block: ParamBlock) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.block_len(block));
        match block {
            ParamBlock::Center => self.primitives.iter().for_each(|p| out.extend(p.center)),
            ParamBlock::Quaternion => self
                .primitives
                .iter()
                .for_each(|p| out.extend(p.quaternion)),
            ParamBlock::RawScales => self
                .primitives
                .iter()
                .for_each(|p| out.extend(p.raw_scales)),
            ParamBlock::RawOpacity => out.extend(self.primitives.iter().map(|p| p.raw_opacity)),
            ParamBlock::Sh => self
                .primitives
                .iter()
                .for_each(|p| out.extend(p.sh.iter().flatten())),
            ParamBlock::TextureRgb => self.textures.iter().for_each(|t| out.extend(&t.rgb)),
            ParamBlock::TextureAlpha => self.textures.iter().for_each(|t| out.extend(&t.raw_alpha)),
            ParamBlock::Disp => self.deformations.iter().for_each(|d| out.extend(&d.disp)),
        }
        out
    }

    /// Inverse of [`Scene::gather`].
    pub fn scatter(&mut self, block: ParamBlock, values: &[f64]) -> Result<()> {
        let stride = block.stride(self.tau, self.sh_degree);
        if values.len() != self.len() * stride {
            return Err(Error::Shape(format!(
                "block {block} expects {} values, got {}",
                self.len() * stride,
                values.len()
            )));
        }
        let chunks = values.chunks_exact(stride.max(1));
        match block {
            ParamBlock::Center => {
                for (p, c) in self.primitives.iter_mut().zip(chunks) {
                    p.center.copy_from_slice(c);
                }
            }
            ParamBlock::Quaternion => {
                for (p, c) in self.primitives.iter_mut().zip(chunks) {
                    p.quaternion.copy_from_slice(c);
                }
            }
            ParamBlock::RawScales => {
                for (p, c) in self.primitives.iter_mut().zip(chunks) {
                    p.raw_scales.copy_from_slice(c);
                }
            }
            ParamBlock::RawOpacity => {
                for (p, c) in self.primitives.iter_mut().zip(chunks) {
                    p.raw_opacity = c[0];
                }
            }
            ParamBlock::Sh => {
                for (p, c) in self.primitives.iter_mut().zip(chunks) {
                    for (k, rgb) in p.sh.iter_mut().enumerate() {
                        rgb.copy_from_slice(&c[k * 3..k * 3 + 3]);
                    }
                }
            }
            ParamBlock::TextureRgb => {
                for (t, c) in self.textures.iter_mut().zip(chunks) {
                    t.rgb.copy_from_slice(c);
                }
            }
            ParamBlock::TextureAlpha => {
                for (t, c) in self.textures.iter_mut().zip(chunks) {
                    t.raw_alpha.copy_from_slice(c);
                }
            }
            ParamBlock::Disp => {
                for (d, c) in self.deformations.iter_mut().zip(chunks) {
                    d.disp.copy_from_slice(c);
                }
            }
        }
        Ok(())
    }

    /// Reads one scalar by block and flat index.
    pub fn param(&self, block: ParamBlock, index: usize) -> f64 {
        let stride = block.stride(self.tau, self.sh_degree);
        let (p, k) = (index / stride, index % stride);
        match block {
            ParamBlock::Center => self.primitives[p].center[k],
            ParamBlock::Quaternion => self.primitives[p].quaternion[k],
            ParamBlock::RawScales => self.primitives[p].raw_scales[k],
            ParamBlock::RawOpacity => self.primitives[p].raw_opacity,
            ParamBlock::Sh => self.primitives[p].sh[k / 3][k % 3],
            ParamBlock::TextureRgb => self.textures[p].rgb[k],
            ParamBlock::TextureAlpha => self.textures[p].raw_alpha[k],
            ParamBlock::Disp => self.deformations[p].disp[k],
        }
    }

    pub fn param_mut(&mut self, block: ParamBlock, index: usize) -> &mut f64 {
        let stride = block.stride(self.tau, self.sh_degree);
        let (p, k) = (index / stride, index % stride);
        match block {
            ParamBlock::Center => &mut self.primitives[p].center[k],
            ParamBlock::Quaternion => &mut self.primitives[p].quaternion[k],
            ParamBlock::RawScales => &mut self.primitives[p].raw_scales[k],
            ParamBlock::RawOpacity => &mut self.primitives[p].raw_opacity,
            ParamBlock::Sh => &mut self.primitives[p].sh[k / 3][k % 3],
            ParamBlock::TextureRgb => &mut self.textures[p].rgb[k],
            ParamBlock::TextureAlpha => &mut self.textures[p].raw_alpha[k],
            ParamBlock::Disp => &mut self.deformations[p].disp[k],
        }
    }
}
