#![allow(dead_code)]

use factgs::scene::{logit, Camera, DeformationField, GaussianPrimitive, Scene, View};
use factgs::Image;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera on the +z axis looking at the origin.
pub fn front_camera(size: usize, distance: f64, focal: f64) -> Camera {
    Camera::look_at(
        Vector3::new(0.0, 0.0, distance),
        Vector3::zeros(),
        Vector3::y(),
        size,
        size,
        focal,
    )
}

pub struct SceneSpec {
    pub n: usize,
    pub tau: usize,
    pub sh_degree: usize,
    pub disp_amplitude: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n: 8,
            tau: 4,
            sh_degree: 3,
            disp_amplitude: 0.2,
        }
    }
}

/// Image half-extent at `z = 0` seen by [`gradient_camera`].
pub const VIEW_HALF: f64 = 0.5;

/// 8×8 view of `[-0.5, 0.5]²` from `z = 4`.
pub fn gradient_camera(size: usize) -> Camera {
    front_camera(size, 4.0, size as f64 * 4.0 / (2.0 * VIEW_HALF))
}

/// Random scene on which the loss is smooth around the sampled point, so
/// central differences are a fair oracle: planes are stacked at distinct
/// depths with small tilts (no depth-order swaps), every support covers
/// the whole view (no culling edge), warped coordinates stay clear of the
/// texture border, colors stay inside (0, 1) and transmittance never hits
/// the cutoff.
pub fn random_scene(spec: &SceneSpec, r: &mut ChaCha8Rng) -> Scene {
    let mut s = Scene::new(spec.tau, spec.sh_degree);
    for k in 0..spec.n {
        let z = 0.6 - 0.25 * k as f64 + r.gen_range(-0.05..0.05);
        let c = [r.gen_range(-0.25..0.25), r.gen_range(-0.25..0.25), z];
        let mut p = GaussianPrimitive::new(
            c,
            [r.gen_range(0.45..0.7), r.gen_range(0.45..0.7)],
            r.gen_range(0.3..0.7),
            spec.sh_degree,
        );
        let half = r.gen_range(-1.5f64..1.5);
        p.quaternion = [
            half.cos() * r.gen_range(0.8..1.2),
            r.gen_range(-0.04..0.04),
            r.gen_range(-0.04..0.04),
            half.sin() * r.gen_range(0.8..1.2),
        ];
        for (k, coeff) in p.sh.iter_mut().enumerate() {
            let amp = if k == 0 { 0.3 } else { 0.05 };
            *coeff = [0, 1, 2].map(|_| r.gen_range(-amp..amp));
        }
        s.push(p);
    }
    for t in &mut s.textures {
        t.rgb.iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
        t.raw_alpha
            .iter_mut()
            .for_each(|v| *v = r.gen_range(0.5..3.0));
    }
    let amp = spec.disp_amplitude;
    for d in &mut s.deformations {
        *d = DeformationField::from_fn(spec.tau, |_, _| {
            [r.gen_range(-amp..amp), r.gen_range(-amp..amp)]
        });
    }
    s
}

pub fn random_image(w: usize, h: usize, c: usize, r: &mut ChaCha8Rng) -> Image {
    let data = (0..w * h * c).map(|_| r.gen_range(0.0..1.0)).collect();
    Image::from_vec(w, h, c, data).unwrap()
}

pub fn random_view(camera: Camera, r: &mut ChaCha8Rng) -> View {
    let img = random_image(camera.width, camera.height, 3, r);
    View::new(camera, img, None).unwrap()
}

pub fn opacity_raw(p: f64) -> f64 {
    logit(p)
}
