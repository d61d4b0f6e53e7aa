//! Scene and camera documents (JSON) and image files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene::{
    validate_scene, Camera, DeformationField, GaussianPrimitive, Scene, TextureMap, View,
    Violation, DEFAULT_SH_DEGREE, DEFAULT_XI,
};
use crate::sh;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: missing required field `{field}`")]
    MissingField { path: String, field: &'static str },
    #[error("{path}: field `{field}` needs {expected} values, found {found}")]
    Arity {
        path: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid scene: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    center: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quaternion: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw_scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw_opacity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sh: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextureDoc {
    rgb: Option<Vec<f64>>,
    raw_alpha: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeformationDoc {
    disp: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    xi: Option<f64>,
    background: Option<Vec<f64>>,
    tau: Option<usize>,
    sh_degree: Option<usize>,
    primitives: Option<Vec<PrimitiveDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    textures: Option<Vec<TextureDoc>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deformations: Option<Vec<DeformationDoc>>,
}

fn fixed<const N: usize>(
    v: Option<Vec<f64>>,
    default: Option<[f64; N]>,
    path: &str,
    field: &'static str,
) -> Result<[f64; N], ParseError> {
    match v {
        None => default.ok_or_else(|| ParseError::MissingField {
            path: path.to_string(),
            field,
        }),
        Some(v) => v.try_into().map_err(|v: Vec<f64>| ParseError::Arity {
            path: path.to_string(),
            field,
            expected: N,
            found: v.len(),
        }),
    }
}

fn sized(
    v: Option<Vec<f64>>,
    len: usize,
    default: f64,
    path: &str,
    field: &'static str,
) -> Result<Vec<f64>, ParseError> {
    match v {
        None => Ok(vec![default; len]),
        Some(v) if v.len() == len => Ok(v),
        Some(v) => Err(ParseError::Arity {
            path: path.to_string(),
            field,
            expected: len,
            found: v.len(),
        }),
    }
}

/// Parses a scene document. Missing textures and deformations start
/// neutral; the result always passes [`validate_scene`].
pub fn parse_scene_file(bytes: &[u8]) -> Result<Scene, ParseError> {
    let doc: SceneDoc = serde_json::from_slice(bytes)?;
    let tau = doc.tau.ok_or(ParseError::MissingField {
        path: "scene".into(),
        field: "tau",
    })?;
    let sh_degree = doc.sh_degree.unwrap_or(DEFAULT_SH_DEGREE);
    let n_sh = sh::coeff_count(sh_degree.min(sh::MAX_DEGREE));
    let prims_doc = doc.primitives.ok_or(ParseError::MissingField {
        path: "scene".into(),
        field: "primitives",
    })?;
    let mut scene = Scene::new(tau, sh_degree);
    scene.xi = doc.xi.unwrap_or(DEFAULT_XI);
    scene.background = fixed(doc.background, Some([0.0; 3]), "scene", "background")?;

    for (i, p) in prims_doc.into_iter().enumerate() {
        let path = format!("primitives[{i}]");
        let sh_flat = sized(p.sh, n_sh * 3, 0.0, &path, "sh")?;
        scene.primitives.push(GaussianPrimitive {
            center: fixed(p.center, None, &path, "center")?,
            quaternion: fixed(
                p.quaternion,
                Some([1.0, 0.0, 0.0, 0.0]),
                &path,
                "quaternion",
            )?,
            raw_scales: fixed(p.raw_scales, Some([0.0; 2]), &path, "raw_scales")?,
            raw_opacity: p.raw_opacity.unwrap_or(0.0),
            sh: sh_flat
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        });
    }
    let n = scene.primitives.len();
    scene.textures = match doc.textures {
        None => vec![TextureMap::neutral(tau); n],
        Some(ts) => ts
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let path = format!("textures[{i}]");
                let neutral = TextureMap::neutral(tau);
                Ok(TextureMap {
                    tau,
                    rgb: sized(t.rgb, tau * tau * 3, 0.0, &path, "rgb")?,
                    raw_alpha: sized(
                        t.raw_alpha,
                        tau * tau,
                        neutral.raw_alpha[0],
                        &path,
                        "raw_alpha",
                    )?,
                })
            })
            .collect::<Result<_, ParseError>>()?,
    };
    scene.deformations = match doc.deformations {
        None => vec![DeformationField::zero(tau); n],
        Some(ds) => ds
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let path = format!("deformations[{i}]");
                Ok(DeformationField {
                    tau,
                    disp: sized(d.disp, tau * tau * 2, 0.0, &path, "disp")?,
                })
            })
            .collect::<Result<_, ParseError>>()?,
    };
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(ParseError::Invalid(violations));
    }
    Ok(scene)
}

/// Canonical document: every field explicit, fixed key order.
pub fn serialize_scene(scene: &Scene) -> String {
    let doc = SceneDoc {
        xi: Some(scene.xi),
        background: Some(scene.background.to_vec()),
        tau: Some(scene.tau),
        sh_degree: Some(scene.sh_degree),
        primitives: Some(
            scene
                .primitives
                .iter()
                .map(|p| PrimitiveDoc {
                    center: Some(p.center.to_vec()),
                    quaternion: Some(p.quaternion.to_vec()),
                    raw_scales: Some(p.raw_scales.to_vec()),
                    raw_opacity: Some(p.raw_opacity),
                    sh: Some(p.sh.iter().flatten().copied().collect()),
                })
                .collect(),
        ),
        textures: Some(
            scene
                .textures
                .iter()
                .map(|t| TextureDoc {
                    rgb: Some(t.rgb.clone()),
                    raw_alpha: Some(t.raw_alpha.clone()),
                })
                .collect(),
        ),
        deformations: Some(
            scene
                .deformations
                .iter()
                .map(|d| DeformationDoc {
                    disp: Some(d.disp.clone()),
                })
                .collect(),
        ),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("scene documents always serialize");
    s.push('\n');
    s
}

pub fn load_scene_file(path: &Path) -> Result<Scene> {
    Ok(parse_scene_file(&fs::read(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// `[R | t]`, 3×4 row-major.
    pub world_from_camera: Vec<f64>,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    /// Reference image is sRGB-encoded and is linearized on load.
    #[serde(default)]
    pub srgb: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub views: Vec<CameraEntry>,
}

impl CameraEntry {
    pub fn from_camera(camera: &Camera, image_path: impl Into<String>) -> Self {
        let r = &camera.rotation;
        let t = &camera.translation;
        let mut m = Vec::with_capacity(12);
        for row in 0..3 {
            m.extend([r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]]);
        }
        Self {
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
            world_from_camera: m,
            image_path: image_path.into(),
            mask_path: None,
            srgb: false,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let m = &self.world_from_camera;
        if m.len() != 12 {
            return Err(Error::Shape(format!(
                "world_from_camera needs 12 values, found {}",
                m.len()
            )));
        }
        let camera = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
        };
        let mut v = Vec::new();
        camera.violations(&mut v, "camera");
        if v.is_empty() {
            Ok(camera)
        } else {
            Err(Error::Validation(v))
        }
    }
}

pub fn parse_camera_file(bytes: &[u8]) -> Result<CameraFile> {
    Ok(serde_json::from_slice(bytes).map_err(ParseError::from)?)
}

pub fn write_camera_file(path: &Path, file: &CameraFile) -> Result<()> {
    let mut s = serde_json::to_string_pretty(file).expect("camera documents always serialize");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every view of a camera file, resolving image paths relative to
/// the file's directory.
pub fn load_views(path: &Path) -> Result<Vec<View>> {
    let file = parse_camera_file(&fs::read(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.views
        .iter()
        .map(|e| {
            let camera = e.camera()?;
            let image = read_image(&resolve(base, &e.image_path), e.srgb)?;
            let mask = match &e.mask_path {
                Some(m) => Some(read_mask(&resolve(base, m))?),
                None => None,
            };
            View::new(camera, image, mask)
        })
        .collect()
}

/// Cameras only; image files are not touched.
pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let file = parse_camera_file(&fs::read(path)?)?;
    file.views.iter().map(CameraEntry::camera).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" | "pgm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// `round(v·255)` with halves rounded up, after the optional sRGB encode.
pub fn quantize(v: f64, srgb: bool) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let v = if srgb { linear_to_srgb(v) } else { v };
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn quantized_bytes(image: &Image, srgb: bool) -> Vec<u8> {
    image.data.iter().map(|&v| quantize(v, srgb)).collect()
}

/// Binary PPM (P6) for three channels, PGM (P5) for one.
pub fn encode_ppm(image: &Image, srgb: bool) -> Result<Vec<u8>> {
    let tag = match image.channels {
        3 => "P6",
        1 => "P5",
        c => {
            return Err(Error::Image(format!(
                "cannot encode {c}-channel image as PPM"
            )))
        }
    };
    let mut out = format!("{tag}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(quantized_bytes(image, srgb));
    Ok(out)
}

pub fn write_image(image: &Image, path: &Path, format: ImageFormat, srgb: bool) -> Result<()> {
    match format {
        ImageFormat::Ppm => {
            let bytes = encode_ppm(image, srgb)?;
            let mut f = fs::File::create(path)?;
            f.write_all(&bytes)?;
        }
        ImageFormat::Png => {
            let bytes = quantized_bytes(image, srgb);
            let (w, h) = (image.width as u32, image.height as u32);
            let result = match image.channels {
                3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
                1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
                c => {
                    return Err(Error::Image(format!(
                        "cannot encode {c}-channel image as PNG"
                    )))
                }
            };
            result
                .ok_or_else(|| Error::Image("buffer size mismatch".into()))?
                .map_err(|e| Error::Image(e.to_string()))?;
        }
    }
    Ok(())
}

/// Reads an 8-bit RGB image into linear `[0, 1]` values.
pub fn read_image(path: &Path, srgb: bool) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| {
            let v = b as f64 / 255.0;
            if srgb {
                srgb_to_linear(v)
            } else {
                v
            }
        })
        .collect();
    Image::from_vec(w, h, 3, data)
}

/// Reads a single-channel mask into `[0, 1]`.
pub fn read_mask(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::from_vec(
        w,
        h,
        1,
        img.into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect(),
    )
}
