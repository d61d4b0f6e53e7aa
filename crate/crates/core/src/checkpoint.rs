//! Binary checkpoint format.
//!
//! ```text
//! "FACTGS01"            8 bytes
//! format version        u32
//! primitive count       u32
//! tau                   u32
//! SH degree             u32
//! payload:
//!   scene scalars       6 × f64   xi, background rgb, lambda, sampling
//!   parameter blocks    f64 arrays in ParamBlock order
//!   first moments       f64 arrays in ParamBlock order
//!   second moments      f64 arrays in ParamBlock order
//!   step counter        u64
//! CRC32 of the payload  u32
//! ```
//!
//! Every integer and float is little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::compositor::{RenderSettings, TextureSampling, DEFAULT_TRANSMITTANCE_CUTOFF};
use crate::scene::{DeformationField, GaussianPrimitive, ParamBlock, Scene, TextureMap};
use crate::sh;
use crate::train::OptimizerState;

pub const MAGIC: &[u8; 8] = b"FACTGS01";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4;
const SCALARS: usize = 6;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version: {0}")]
    Version(String),
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scene, optimizer state and the render settings the scene was trained
/// with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scene: Scene,
    pub state: OptimizerState,
    pub settings: RenderSettings,
}

impl Checkpoint {
    pub fn new(scene: &Scene, state: &OptimizerState, settings: &RenderSettings) -> Self {
        Self {
            scene: scene.clone(),
            state: state.clone(),
            settings: *settings,
        }
    }

    pub fn fresh(scene: &Scene, settings: &RenderSettings) -> Self {
        Self::new(scene, &OptimizerState::new(scene), settings)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.scene;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            s.len() as u32,
            s.tau as u32,
            s.sh_degree as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sampling = match self.settings.sampling {
            TextureSampling::Warped => 0.0,
            TextureSampling::Uniform => 1.0,
        };
        let mut payload = Vec::new();
        let mut put = |vals: &[f64]| {
            for v in vals {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&[
            s.xi,
            s.background[0],
            s.background[1],
            s.background[2],
            self.settings.lambda,
            sampling,
        ]);
        for b in ParamBlock::ALL {
            put(&s.gather(b));
        }
        for m in &self.state.m {
            put(m);
        }
        for v in &self.state.v {
            put(v);
        }
        payload.extend_from_slice(&self.state.step.to_le_bytes());
        let crc = crc32fast::hash(&payload);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::Version(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(format!(
                "format version {version}"
            )));
        }
        let count = u32_at(12) as usize;
        let tau = u32_at(16) as usize;
        let sh_degree = u32_at(20) as usize;
        if sh_degree > sh::MAX_DEGREE || tau == 0 {
            return Err(CheckpointError::Malformed(format!(
                "tau {tau}, SH degree {sh_degree}"
            )));
        }
        let per_prim: usize = ParamBlock::ALL
            .iter()
            .map(|b| b.stride(tau, sh_degree))
            .sum();
        let floats = SCALARS + 3 * count * per_prim;
        let expected = HEADER_LEN + floats * 8 + 8 + 4;
        if bytes.len() < expected {
            return Err(CheckpointError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        let payload = &bytes[HEADER_LEN..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut cursor = payload.chunks_exact(8);
        let mut take = |n: usize| -> Vec<f64> {
            (&mut cursor)
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let scalars = take(SCALARS);
        let mut scene = Scene {
            primitives: vec![
                GaussianPrimitive {
                    center: [0.0; 3],
                    quaternion: [1.0, 0.0, 0.0, 0.0],
                    raw_scales: [0.0; 2],
                    raw_opacity: 0.0,
                    sh: vec![[0.0; 3]; sh::coeff_count(sh_degree)],
                };
                count
            ],
            textures: vec![TextureMap::neutral(tau); count],
            deformations: vec![DeformationField::zero(tau); count],
            xi: scalars[0],
            background: [scalars[1], scalars[2], scalars[3]],
            sh_degree,
            tau,
        };
        for b in ParamBlock::ALL {
            let vals = take(count * b.stride(tau, sh_degree));
            scene
                .scatter(b, &vals)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let m = ParamBlock::ALL.map(|b| take(count * b.stride(tau, sh_degree)));
        let v = ParamBlock::ALL.map(|b| take(count * b.stride(tau, sh_degree)));
        let step = u64::from_le_bytes(payload[payload.len() - 8..].try_into().unwrap());
        let sampling = match scalars[5] {
            s if s == 0.0 => TextureSampling::Warped,
            s if s == 1.0 => TextureSampling::Uniform,
            s => return Err(CheckpointError::Malformed(format!("sampling code {s}"))),
        };
        Ok(Self {
            scene,
            state: OptimizerState { m, v, step },
            settings: RenderSettings {
                sampling,
                lambda: scalars[4],
                transmittance_cutoff: DEFAULT_TRANSMITTANCE_CUTOFF,
            },
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

/// Reads a checkpoint; nothing is returned unless the whole file is valid.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
