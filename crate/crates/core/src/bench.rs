//! Analytic test scenes and the mode comparison experiment.
//!
//! References are produced by intersecting camera rays with the pattern
//! quad and looking the pattern up directly; the splatting pipeline is
//! never involved in generating ground truth.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compositor::render;
use crate::error::{Error, Result};
use crate::io::{write_image, ImageFormat};
use crate::loss::{psnr, ssim_index};
use crate::metrics::FrequencyReport;
use crate::raster::Image;
use crate::scene::{Camera, GaussianPrimitive, Scene, View, DEFAULT_XI};
use crate::sh;
use crate::train::{stage1_train, stage2_train, TrainConfig, TrainMode};

/// Half-extent of the pattern quad, which spans `[-1, 1]²` at `z = 0`.
pub const QUAD_HALF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternKind {
    Checkerboard {
        cell: usize,
    },
    /// Square-wave vertical stripes.
    Stripes {
        period: f64,
    },
    /// Sinusoidal stripes whose period shrinks geometrically from
    /// `max_period` at the left edge to `min_period` at the right.
    FrequencySweep {
        max_period: f64,
        min_period: f64,
    },
    /// 0.3 left of column `edge`, 0.9 from it on.
    FlatPlusEdge {
        edge: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    #[serde(flatten)]
    pub kind: PatternKind,
    pub size: usize,
}

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Invalid(format!(
                "pattern size {} is below 16",
                self.size
            )));
        }
        let ok = match self.kind {
            PatternKind::Checkerboard { cell } => cell >= 1,
            PatternKind::Stripes { period } => period >= 2.0,
            PatternKind::FrequencySweep {
                max_period,
                min_period,
            } => min_period >= 2.0 && max_period >= min_period,
            PatternKind::FlatPlusEdge { edge } => edge < self.size,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "bad pattern parameters {:?}",
                self.kind
            )))
        }
    }

    /// Pattern value at integer pixel `(x, y)`.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        match self.kind {
            PatternKind::Checkerboard { cell } => ((x / cell + y / cell) % 2) as f64,
            PatternKind::Stripes { period } => {
                if (x as f64 % period) < period / 2.0 {
                    0.0
                } else {
                    1.0
                }
            }
            PatternKind::FrequencySweep {
                max_period,
                min_period,
            } => 0.5 - 0.5 * sweep_phase(x as f64, self.size as f64, max_period, min_period).cos(),
            PatternKind::FlatPlusEdge { edge } => {
                if x < edge {
                    0.3
                } else {
                    0.9
                }
            }
        }
    }

    /// Local period at column `x` (constant except for the sweep).
    pub fn period_at(&self, x: f64) -> Option<f64> {
        match self.kind {
            PatternKind::Checkerboard { cell } => Some(2.0 * cell as f64),
            PatternKind::Stripes { period } => Some(period),
            PatternKind::FrequencySweep {
                max_period,
                min_period,
            } => Some(max_period * (min_period / max_period).powf(x / self.size as f64)),
            PatternKind::FlatPlusEdge { .. } => None,
        }
    }
}

/// `2π ∫₀ˣ 1/p(s) ds` for the geometric period schedule.
fn sweep_phase(x: f64, size: f64, p0: f64, p1: f64) -> f64 {
    let r = (p1 / p0).ln() / size;
    let tau = std::f64::consts::TAU;
    if r.abs() < 1e-12 {
        tau * x / p0
    } else {
        tau * (1.0 - (-r * x).exp()) / (p0 * r)
    }
}

/// Grayscale pattern replicated to RGB.
pub fn gen_pattern(spec: &PatternSpec) -> Result<Image> {
    spec.validate()?;
    Ok(Image::from_fn(spec.size, spec.size, 3, |x, y, _| {
        spec.value(x, y)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneGenConfig {
    pub n_primitives: usize,
    pub views: usize,
    /// Rendered image width and height.
    pub image_size: usize,
    /// Rays per pixel side for reference rendering.
    pub supersample: usize,
    /// Camera distance from the quad center.
    pub distance: f64,
    /// Polar angle of the orbiting views, in degrees.
    pub orbit_degrees: f64,
    pub tau: usize,
    pub sh_degree: usize,
    pub xi: f64,
    pub initial_opacity: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            n_primitives: 16,
            views: 9,
            image_size: 64,
            supersample: 4,
            distance: 3.0,
            orbit_degrees: 15.0,
            tau: 4,
            sh_degree: 0,
            xi: DEFAULT_XI,
            initial_opacity: 0.5,
        }
    }
}

/// View 0 faces the quad head-on and fills the frame with it; the others
/// orbit at `orbit_degrees` from the normal, evenly spaced in azimuth.
pub fn bench_cameras(cfg: &SceneGenConfig) -> Vec<Camera> {
    let size = cfg.image_size;
    let focal = 0.5 * size as f64 * cfg.distance / QUAD_HALF;
    let theta = cfg.orbit_degrees.to_radians();
    let orbiting = cfg.views.saturating_sub(1).max(1);
    (0..cfg.views)
        .map(|k| {
            let eye = if k == 0 {
                Vector3::new(0.0, 0.0, cfg.distance)
            } else {
                let phi = std::f64::consts::TAU * (k - 1) as f64 / orbiting as f64;
                cfg.distance
                    * Vector3::new(
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    )
            };
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), size, size, focal)
        })
        .collect()
}

/// Box-filtered reference image of the pattern quad seen from `camera`.
pub fn reference_image(
    pattern: &Image,
    camera: &Camera,
    supersample: usize,
    background: [f64; 3],
) -> Image {
    let s = supersample.max(1);
    let inv = 1.0 / (s * s) as f64;
    let (pw, ph) = (pattern.width as f64, pattern.height as f64);
    Image::from_fn(camera.width, camera.height, 3, |x, y, ch| {
        let mut acc = 0.0;
        for sy in 0..s {
            for sx in 0..s {
                let px = x as f64 + (sx as f64 + 0.5) / s as f64;
                let py = y as f64 + (sy as f64 + 0.5) / s as f64;
                let d_cam = Vector3::new(
                    (px - camera.cx) / camera.fx,
                    (py - camera.cy) / camera.fy,
                    1.0,
                );
                let d = camera.rotation * d_cam;
                let o = camera.translation;
                let mut value = background[ch];
                if d.z.abs() > 1e-12 {
                    let t = -o.z / d.z;
                    let (hx, hy) = (o.x + t * d.x, o.y + t * d.y);
                    let u = (hx + QUAD_HALF) / (2.0 * QUAD_HALF) * pw;
                    let v = (QUAD_HALF - hy) / (2.0 * QUAD_HALF) * ph;
                    if t > 0.0 && u >= 0.0 && u < pw && v >= 0.0 && v < ph {
                        value = pattern.get(u as usize, v as usize, ch.min(pattern.channels - 1));
                    }
                }
                acc += value;
            }
        }
        acc * inv
    })
}

/// Grid of `n` Gaussians tiling the quad, each with σ equal to the grid
/// spacing, plus one reference view per camera.
pub fn gen_scene(pattern: &Image, cfg: &SceneGenConfig) -> Result<(Scene, Vec<View>)> {
    if cfg.n_primitives == 0 || cfg.views == 0 {
        return Err(Error::Invalid(
            "need at least one primitive and one view".into(),
        ));
    }
    let cols = (cfg.n_primitives as f64).sqrt().ceil() as usize;
    let rows = cfg.n_primitives.div_ceil(cols);
    let spacing = 2.0 * QUAD_HALF / cols.max(rows) as f64;
    let mean: Vec<f64> = (0..3)
        .map(|c| {
            pattern
                .channel(c.min(pattern.channels - 1))
                .data
                .iter()
                .sum::<f64>()
                / pattern.pixel_count() as f64
        })
        .collect();
    let mut scene = Scene::new(cfg.tau, cfg.sh_degree);
    scene.xi = cfg.xi;
    for k in 0..cfg.n_primitives {
        let (i, j) = (k % cols, k / cols);
        let x = -QUAD_HALF
            + spacing * (i as f64 + 0.5)
            + 0.5 * spacing * (cols.max(rows) - cols) as f64;
        let y =
            QUAD_HALF - spacing * (j as f64 + 0.5) - 0.5 * spacing * (cols.max(rows) - rows) as f64;
        let mut p = GaussianPrimitive::new(
            [x, y, 0.0],
            [spacing, spacing],
            cfg.initial_opacity,
            cfg.sh_degree,
        );
        for c in 0..3 {
            p.sh[0][c] = (mean[c] - 0.5) / sh::C0;
        }
        scene.push(p);
    }
    let views = bench_cameras(cfg)
        .into_iter()
        .map(|cam| {
            let image = reference_image(pattern, &cam, cfg.supersample, scene.background);
            View::new(cam, image, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scene, views))
}

/// Moves every center by up to 5% of its in-plane scale; seed 0 leaves
/// the scene untouched.
pub fn jitter_centers(scene: &mut Scene, seed: u64) {
    if seed == 0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut scene.primitives {
        let s = p.raw_scales[0].exp().min(p.raw_scales[1].exp());
        p.center[0] += 0.05 * s * rng.gen_range(-1.0..1.0);
        p.center[1] += 0.05 * s * rng.gen_range(-1.0..1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub mode: ModeName,
    pub tau: usize,
    /// Overrides the shared warp strength for this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    NoTexture,
    Uniform,
    Fact,
}

impl From<ModeName> for TrainMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::NoTexture => TrainMode::NoTexture,
            ModeName::Uniform => TrainMode::Uniform,
            ModeName::Fact => TrainMode::Fact,
        }
    }
}

/// Everything `compare` needs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub pattern: PatternSpec,
    pub scene: SceneGenConfig,
    pub runs: Vec<RunSpec>,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lambda: f64,
    pub lr_texture: f64,
    pub lr_deformation: f64,
    pub seed: u64,
}

/// Short Gaussian stage: longer runs collapse the grid into thin, tilted
/// splats that generalize poorly to the held-out view.
pub const BENCH_STAGE1_ITERS: usize = 300;

impl Default for BenchConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            pattern: PatternSpec {
                kind: PatternKind::Checkerboard { cell: 8 },
                size: 64,
            },
            scene: SceneGenConfig::default(),
            runs: vec![
                RunSpec {
                    mode: ModeName::NoTexture,
                    tau: 4,
                    lambda: None,
                },
                RunSpec {
                    mode: ModeName::Uniform,
                    tau: 5,
                    lambda: None,
                },
                RunSpec {
                    mode: ModeName::Fact,
                    tau: 4,
                    lambda: None,
                },
            ],
            stage1_iters: BENCH_STAGE1_ITERS,
            stage2_iters: t.stage2_iters,
            lambda: t.lambda,
            lr_texture: t.lr_texture,
            lr_deformation: t.lr_deformation,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn train_config(&self, run: &RunSpec) -> TrainConfig {
        TrainConfig {
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
            lambda: run.lambda.unwrap_or(self.lambda),
            lr_texture: self.lr_texture,
            lr_deformation: self.lr_deformation,
            seed: self.seed,
            mode: run.mode.into(),
            ..TrainConfig::default()
        }
    }
}

/// Texel parameters per scene: RGBA for uniform textures, RGBA plus two
/// displacement channels for fact, none without textures.
pub fn texel_params(mode: TrainMode, n: usize, tau: usize) -> usize {
    match mode {
        TrainMode::NoTexture => 0,
        TrainMode::Uniform => n * tau * tau * 4,
        TrainMode::Fact => n * tau * tau * 6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mode: TrainMode,
    pub tau: usize,
    pub n_primitives: usize,
    pub texel_params: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mean_freq: f64,
    pub seed: u64,
    /// Mean PSNR over the training views (not part of the CSV).
    pub train_psnr_db: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub row: ReportRow,
    pub scene: Scene,
    pub frequency: FrequencyReport,
    /// Renders of the held-out views.
    pub renders: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub seed: u64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lambda: f64,
    pub held_out: Vec<usize>,
    pub references: Vec<Image>,
}

pub const REPORT_HEADER: &str = "mode,tau,n_primitives,texel_params,psnr_db,ssim,mean_freq,seed";

impl ExperimentReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.runs.iter().map(|r| &r.row)
    }

    pub fn row(&self, mode: TrainMode, tau: usize) -> Option<&ReportRow> {
        self.rows().find(|r| r.mode == mode && r.tau == tau)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in self.rows() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.mode.name(),
                r.tau,
                r.n_primitives,
                r.texel_params,
                r.psnr_db,
                r.ssim,
                r.mean_freq,
                r.seed
            )?;
        }
        Ok(())
    }

    /// `<label>_<view>.png`, `<label>_<view>_diff.png` and
    /// `reference_<view>.png` for every held-out view. The label is the
    /// mode name, suffixed with `_t<τ>` when a mode appears more than once.
    pub fn write_images(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, &v) in self.held_out.iter().enumerate() {
            write_image(
                &self.references[k],
                &dir.join(format!("reference_{v}.png")),
                ImageFormat::Png,
                false,
            )?;
        }
        for run in &self.runs {
            let repeats = self.rows().filter(|r| r.mode == run.row.mode).count();
            let label = if repeats > 1 {
                format!("{}_t{}", run.row.mode.name(), run.row.tau)
            } else {
                run.row.mode.name().to_string()
            };
            for (k, &v) in self.held_out.iter().enumerate() {
                let img = &run.renders[k];
                write_image(
                    img,
                    &dir.join(format!("{label}_{v}.png")),
                    ImageFormat::Png,
                    false,
                )?;
                let diff = img.abs_diff(&self.references[k])?;
                write_image(
                    &diff,
                    &dir.join(format!("{label}_{v}_diff.png")),
                    ImageFormat::Png,
                    false,
                )?;
            }
        }
        Ok(())
    }
}

/// Trains every run from one shared stage-1 result and evaluates on the
/// held-out view (the last one; with a single view it is also trained on).
pub fn run_comparison(cfg: &BenchConfig) -> Result<ExperimentReport> {
    let pattern = gen_pattern(&cfg.pattern)?;
    let (scene, views) = gen_scene(&pattern, &cfg.scene)?;
    let held_out = vec![views.len() - 1];
    let train_views = if views.len() > 1 {
        &views[..views.len() - 1]
    } else {
        &views[..]
    };
    let base = TrainConfig {
        stage1_iters: cfg.stage1_iters,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let stage1 = stage1_train(scene, train_views, &base)?.scene;

    let mut runs = Vec::with_capacity(cfg.runs.len());
    for run in &cfg.runs {
        let tcfg = cfg.train_config(run);
        let init = stage1.with_neutral_textures(run.tau);
        let outcome = stage2_train(init, train_views, &tcfg)?;
        let mut renders = Vec::new();
        let (mut p, mut s) = (0.0, 0.0);
        for &v in &held_out {
            let out = render(&outcome.scene, &views[v].camera, &outcome.settings)?;
            p += psnr(&out.image, &views[v].image)?;
            s += ssim_index(&out.image, &views[v].image)?;
            renders.push(out.image);
        }
        let n_eval = held_out.len() as f64;
        let mut train_psnr = 0.0;
        for v in train_views {
            let out = render(&outcome.scene, &v.camera, &outcome.settings)?;
            train_psnr += psnr(&out.image, &v.image)?;
        }
        train_psnr /= train_views.len() as f64;
        let frequency = FrequencyReport::new(
            &outcome.scene.textures,
            crate::metrics::DEFAULT_HISTOGRAM_BINS,
        );
        let n = outcome.scene.len();
        runs.push(RunResult {
            row: ReportRow {
                mode: tcfg.mode,
                tau: run.tau,
                n_primitives: n,
                texel_params: texel_params(tcfg.mode, n, run.tau),
                psnr_db: p / n_eval,
                ssim: s / n_eval,
                mean_freq: frequency.mean,
                seed: cfg.seed,
                train_psnr_db: train_psnr,
            },
            scene: outcome.scene,
            frequency,
            renders,
        });
    }
    Ok(ExperimentReport {
        runs,
        seed: cfg.seed,
        stage1_iters: cfg.stage1_iters,
        stage2_iters: cfg.stage2_iters,
        lambda: cfg.lambda,
        references: held_out.iter().map(|&v| views[v].image.clone()).collect(),
        held_out,
    })
}
