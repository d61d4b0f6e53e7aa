//! Two-stage optimization.
//!
//! Stage 1 fits the Gaussians alone while textures stay at their neutral
//! initialization. Stage 2 optimizes textures and deformation grids and
//! fine-tunes the Gaussians. Neither stage adds or removes primitives.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::compositor::{RenderSettings, TextureSampling, DEFAULT_TRANSMITTANCE_CUTOFF};
use crate::diff::{backward, GradientSet, ReductionMode, TapeConfig};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::scene::{ParamBlock, Scene, View};

/// Texture handling during stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Textures sampled through the learned warp.
    Fact,
    /// Textures on the fixed uniform grid.
    Uniform,
    /// Textures stay neutral; only the Gaussians move.
    NoTexture,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Fact => "fact",
            TrainMode::Uniform => "uniform",
            TrainMode::NoTexture => "no_texture",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fact" => Some(TrainMode::Fact),
            "uniform" => Some(TrainMode::Uniform),
            "no_texture" => Some(TrainMode::NoTexture),
            _ => None,
        }
    }

    pub fn sampling(self) -> TextureSampling {
        match self {
            TrainMode::Fact => TextureSampling::Warped,
            TrainMode::Uniform | TrainMode::NoTexture => TextureSampling::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRates {
    pub center: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for GaussianRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr_texture: f64,
    pub lr_deformation: f64,
    pub lr_gaussian: GaussianRates,
    pub lambda: f64,
    pub eta: f64,
    pub mask_weight: f64,
    pub fold_reg_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub mode: TrainMode,
    /// Keep the deformation grid fixed even in [`TrainMode::Fact`].
    pub freeze_deformation: bool,
    /// Fine-tune Gaussian blocks during stage 2.
    pub finetune_gaussians: bool,
    pub deterministic: bool,
    /// Optional per-entry gradient magnitude cap.
    pub grad_clip: Option<f64>,
    pub transmittance_cutoff: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 2000,
            stage2_iters: 2000,
            lr_texture: 2.5e-3,
            lr_deformation: 1e-3,
            lr_gaussian: GaussianRates::default(),
            lambda: 1.0,
            eta: 0.2,
            mask_weight: 1.0,
            fold_reg_weight: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            seed: 0,
            checkpoint_every: 0,
            mode: TrainMode::Fact,
            freeze_deformation: false,
            finetune_gaussians: true,
            deterministic: true,
            grad_clip: None,
            transmittance_cutoff: DEFAULT_TRANSMITTANCE_CUTOFF,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.lr_gaussian;
        let rates = [
            self.lr_texture,
            self.lr_deformation,
            g.center,
            g.scale,
            g.rotation,
            g.opacity,
            g.sh,
        ];
        if !rates.iter().all(|&r| r > 0.0 && r.is_finite()) {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid("lambda must be non-negative".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            eta: self.eta,
            mask_weight: self.mask_weight,
            fold_reg_weight: self.fold_reg_weight,
        }
    }

    pub fn tape(&self) -> TapeConfig {
        TapeConfig {
            mode: if self.deterministic {
                ReductionMode::Deterministic
            } else {
                ReductionMode::Fast
            },
            transmittance_cutoff: self.transmittance_cutoff,
        }
    }

    /// Render settings used for stage 2 (and for evaluating its result).
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            sampling: self.mode.sampling(),
            lambda: self.lambda,
            transmittance_cutoff: self.transmittance_cutoff,
        }
    }

    fn gaussian_rates(&self) -> BlockRates {
        let g = &self.lr_gaussian;
        let mut r = BlockRates::frozen();
        r.set(ParamBlock::Center, g.center);
        r.set(ParamBlock::Quaternion, g.rotation);
        r.set(ParamBlock::RawScales, g.scale);
        r.set(ParamBlock::RawOpacity, g.opacity);
        r.set(ParamBlock::Sh, g.sh);
        r
    }

    /// Stage-2 rates; `None` entries are frozen.
    pub fn stage2_rates(&self) -> BlockRates {
        let mut r = if self.finetune_gaussians {
            self.gaussian_rates()
        } else {
            BlockRates::frozen()
        };
        if self.mode != TrainMode::NoTexture {
            r.set(ParamBlock::TextureRgb, self.lr_texture);
            r.set(ParamBlock::TextureAlpha, self.lr_texture);
        }
        if self.mode == TrainMode::Fact && !self.freeze_deformation {
            r.set(ParamBlock::Disp, self.lr_deformation);
        }
        r
    }

    pub fn stage1_rates(&self) -> BlockRates {
        self.gaussian_rates()
    }
}

/// Learning rate per parameter block; `None` means frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRates(pub [Option<f64>; 8]);

impl BlockRates {
    pub fn frozen() -> Self {
        Self([None; 8])
    }

    pub fn set(&mut self, b: ParamBlock, lr: f64) {
        self.0[b.index()] = Some(lr);
    }

    pub fn get(&self, b: ParamBlock) -> Option<f64> {
        self.0[b.index()]
    }
}

/// First and second moment buffers per block plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: [Vec<f64>; 8],
    pub v: [Vec<f64>; 8],
    pub step: u64,
}

impl OptimizerState {
    pub fn new(scene: &Scene) -> Self {
        Self {
            m: ParamBlock::ALL.map(|b| vec![0.0; scene.block_len(b)]),
            v: ParamBlock::ALL.map(|b| vec![0.0; scene.block_len(b)]),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
            grad_clip: c.grad_clip,
        }
    }
}

/// One bias-corrected adaptive-moment update of every non-frozen block.
/// Quaternions are renormalized afterwards.
pub fn adam_step(
    scene: &mut Scene,
    grads: &GradientSet,
    state: &mut OptimizerState,
    rates: &BlockRates,
    adam: &AdamParams,
) -> Result<()> {
    grads.ensure_finite()?;
    for b in ParamBlock::ALL {
        if grads.block(b).len() != scene.block_len(b)
            || state.m[b.index()].len() != scene.block_len(b)
        {
            return Err(Error::Shape(format!("block {b} does not match the scene")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for b in ParamBlock::ALL {
        let Some(lr) = rates.get(b) else { continue };
        let mut params = scene.gather(b);
        let g = grads.block(b);
        let (m, v) = (&mut state.m[b.index()], &mut state.v[b.index()]);
        for i in 0..params.len() {
            let gi = match adam.grad_clip {
                Some(cap) => g[i].clamp(-cap, cap),
                None => g[i],
            };
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
        scene.scatter(b, &params)?;
        if b == ParamBlock::Quaternion {
            for p in &mut scene.primitives {
                let n = p.quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    p.quaternion = p.quaternion.map(|v| v / n);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: Scene,
    pub state: OptimizerState,
    /// Loss of the sampled view at every iteration, before the update.
    pub losses: Vec<f64>,
    pub settings: RenderSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    One,
    Two,
}

fn run_stage(
    mut scene: Scene,
    views: &[View],
    cfg: &TrainConfig,
    stage: Stage,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    scene.validate()?;
    if views.is_empty() {
        return Err(Error::Invalid("training needs at least one view".into()));
    }
    let (iters, rates, settings, salt) = match stage {
        Stage::One => (
            cfg.stage1_iters,
            cfg.stage1_rates(),
            RenderSettings {
                sampling: TextureSampling::Uniform,
                ..cfg.render_settings()
            },
            0x5354_4147_4531u64,
        ),
        Stage::Two => (
            cfg.stage2_iters,
            cfg.stage2_rates(),
            cfg.render_settings(),
            0x5354_4147_4532u64,
        ),
    };
    let loss_cfg = cfg.loss_config();
    let tape = cfg.tape();
    let adam = AdamParams::from(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let mut state = OptimizerState::new(&scene);
    let mut losses = Vec::with_capacity(iters);
    let count = scene.len();
    for it in 0..iters {
        let idx = rng.gen_range(0..views.len());
        let (loss, grads) = backward(&scene, &views[idx..=idx], &loss_cfg, &settings, &tape)?;
        losses.push(loss);
        adam_step(&mut scene, &grads, &mut state, &rates, &adam)?;
        if let Some(path) = checkpoint_path {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(path, &Checkpoint::new(&scene, &state, &settings))?;
            }
        }
    }
    debug_assert_eq!(scene.len(), count);
    Ok(TrainOutcome {
        scene,
        state,
        losses,
        settings,
    })
}

/// Fits Gaussian blocks only; textures and deformations are untouched.
pub fn stage1_train(scene: Scene, views: &[View], cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_stage(scene, views, cfg, Stage::One, None)
}

/// Optimizes textures and (in fact mode) deformation grids, fine-tuning the
/// Gaussians. Moments start fresh.
pub fn stage2_train(scene: Scene, views: &[View], cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_stage(scene, views, cfg, Stage::Two, None)
}

/// Like [`stage1_train`]/[`stage2_train`] with periodic checkpoints.
pub fn train_stage_with_checkpoints(
    scene: Scene,
    views: &[View],
    cfg: &TrainConfig,
    second_stage: bool,
    path: &Path,
) -> Result<TrainOutcome> {
    let stage = if second_stage { Stage::Two } else { Stage::One };
    run_stage(scene, views, cfg, stage, Some(path))
}
