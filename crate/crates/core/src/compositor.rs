//! Fragment shading and front-to-back alpha compositing.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    gaussian_weight, intersect_tangent_plane, outside_support, pixel_ray, uv_from_local_with_mask,
    Intersection, Ray,
};
use crate::raster::Image;
use crate::scene::{activate, ActivatedPrimitive, Camera, Scene};
use crate::sh;
use crate::warp::{sample_texture, warp_detailed, Warped};

/// Compositing stops once transmittance falls below this value.
pub const DEFAULT_TRANSMITTANCE_CUTOFF: f64 = 1e-4;

/// How texture coordinates reach the texel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureSampling {
    /// Sample at `Φ(u, v)`.
    Warped,
    /// Sample at `(u, v)`; the deformation grid is ignored.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub sampling: TextureSampling,
    pub lambda: f64,
    pub transmittance_cutoff: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sampling: TextureSampling::Warped,
            lambda: 1.0,
            transmittance_cutoff: DEFAULT_TRANSMITTANCE_CUTOFF,
        }
    }
}

impl RenderSettings {
    pub fn uniform() -> Self {
        Self {
            sampling: TextureSampling::Uniform,
            ..Self::default()
        }
    }

    pub fn warped(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

/// One blended contribution along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub depth: f64,
    /// `c_tex + c_base`, not clamped.
    pub color: [f64; 3],
    /// `α_tex · G · o`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Composited color clamped to `[0, 1]`.
    pub image: Image,
    /// Accumulated opacity `1 − T_final`.
    pub alpha: Image,
}

/// Per-view quantities that do not depend on the pixel.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub acts: Vec<ActivatedPrimitive>,
    /// Unit direction from the camera center to each primitive center.
    pub view_dirs: Vec<Vector3<f64>>,
    pub view_dist: Vec<f64>,
    pub base: Vec<[f64; 3]>,
}

pub(crate) fn prepare(scene: &Scene, camera: &Camera) -> Result<Prepared> {
    let acts = scene
        .primitives
        .iter()
        .map(activate)
        .collect::<Result<Vec<_>>>()?;
    let mut view_dirs = Vec::with_capacity(acts.len());
    let mut view_dist = Vec::with_capacity(acts.len());
    let mut base = Vec::with_capacity(acts.len());
    for (a, p) in acts.iter().zip(&scene.primitives) {
        let offset = a.center - camera.translation;
        let dist = offset.norm();
        let dir = if dist > 0.0 {
            offset / dist
        } else {
            Vector3::z()
        };
        base.push(sh::eval_sh_color(&p.sh, &dir, scene.sh_degree));
        view_dirs.push(dir);
        view_dist.push(dist);
    }
    Ok(Prepared {
        acts,
        view_dirs,
        view_dist,
        base,
    })
}

/// Everything the backward pass needs to revisit one fragment.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shaded {
    pub prim: usize,
    pub hit: Intersection,
    pub footprint: f64,
    pub u: f64,
    pub v: f64,
    pub uv_in: [bool; 2],
    pub warped: Option<Warped>,
    pub tex_alpha: f64,
    pub fragment: Fragment,
}

pub(crate) fn shade(
    scene: &Scene,
    prep: &Prepared,
    settings: &RenderSettings,
    prim: usize,
    hit: Intersection,
) -> Shaded {
    let tau = scene.tau;
    let footprint = gaussian_weight(hit.beta, hit.gamma);
    let (u, v, in_u, in_v) = uv_from_local_with_mask(hit.beta, hit.gamma, scene.xi, tau);
    let texture = &scene.textures[prim];
    let (warped, (tex_rgb, tex_alpha)) = match settings.sampling {
        TextureSampling::Warped => {
            let w = warp_detailed(u, v, &scene.deformations[prim], settings.lambda);
            (Some(w), sample_texture(texture, w.u, w.v))
        }
        TextureSampling::Uniform => (None, sample_texture(texture, u, v)),
    };
    let base = prep.base[prim];
    Shaded {
        prim,
        hit,
        footprint,
        u,
        v,
        uv_in: [in_u, in_v],
        warped,
        tex_alpha,
        fragment: Fragment {
            depth: hit.t,
            color: [
                tex_rgb[0] + base[0],
                tex_rgb[1] + base[1],
                tex_rgb[2] + base[2],
            ],
            weight: tex_alpha * footprint * prep.acts[prim].opacity,
        },
    }
}

/// Shades a single primitive hit, activating the primitive on the fly.
pub fn fragment_weight_and_color(
    scene: &Scene,
    camera: &Camera,
    settings: &RenderSettings,
    prim: usize,
    hit: Intersection,
) -> Result<Fragment> {
    let prep = prepare(scene, camera)?;
    Ok(shade(scene, &prep, settings, prim, hit).fragment)
}

/// Intersects, culls, shades and depth-sorts every primitive along `ray`.
/// Equal depths keep primitive order.
pub(crate) fn collect_fragments(
    scene: &Scene,
    prep: &Prepared,
    settings: &RenderSettings,
    ray: &Ray,
    out: &mut Vec<Shaded>,
) {
    out.clear();
    for (i, act) in prep.acts.iter().enumerate() {
        let Some(hit) = intersect_tangent_plane(ray, act) else {
            continue;
        };
        if outside_support(hit.beta, hit.gamma, scene.xi) {
            continue;
        }
        out.push(shade(scene, prep, settings, i, hit));
    }
    out.sort_by(|a, b| {
        a.hit
            .t
            .total_cmp(&b.hit.t)
            .then_with(|| a.prim.cmp(&b.prim))
    });
}

/// Number of leading fragments that take part in blending: blending stops
/// right after the fragment that drives transmittance below `cutoff`.
pub(crate) fn blended_prefix(weights: impl Iterator<Item = f64>, cutoff: f64) -> usize {
    let mut transmittance = 1.0;
    let mut n = 0;
    for w in weights {
        transmittance *= 1.0 - w;
        n += 1;
        if transmittance < cutoff {
            break;
        }
    }
    n
}

/// Front-to-back blending of depth-sorted fragments over `background`.
/// Returns the unclamped color and the accumulated alpha.
pub fn composite_ray(fragments: &[Fragment], background: [f64; 3]) -> ([f64; 3], f64) {
    composite_ray_with_cutoff(fragments, background, DEFAULT_TRANSMITTANCE_CUTOFF)
}

pub fn composite_ray_with_cutoff(
    fragments: &[Fragment],
    background: [f64; 3],
    cutoff: f64,
) -> ([f64; 3], f64) {
    debug_assert!(
        fragments.windows(2).all(|w| w[0].depth <= w[1].depth),
        "fragments must be sorted by depth"
    );
    let mut rgb = [0.0; 3];
    let mut transmittance = 1.0;
    for f in fragments {
        let contrib = f.weight * transmittance;
        for ch in 0..3 {
            rgb[ch] += f.color[ch] * contrib;
        }
        transmittance *= 1.0 - f.weight;
        if transmittance < cutoff {
            break;
        }
    }
    for ch in 0..3 {
        rgb[ch] += transmittance * background[ch];
    }
    (rgb, 1.0 - transmittance)
}

/// Renders `scene` from `camera`.
pub fn render(scene: &Scene, camera: &Camera, settings: &RenderSettings) -> Result<RenderOutput> {
    scene.validate()?;
    let mut v = Vec::new();
    camera.violations(&mut v, "camera");
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let prep = prepare(scene, camera)?;
    Ok(render_prepared(scene, camera, &prep, settings))
}

pub(crate) fn render_prepared(
    scene: &Scene,
    camera: &Camera,
    prep: &Prepared,
    settings: &RenderSettings,
) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let mut image = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    image
        .data
        .par_chunks_mut(w * 3)
        .zip(alpha.data.par_chunks_mut(w))
        .enumerate()
        .for_each_init(Vec::new, |frags, (y, (img_row, alpha_row))| {
            let mut plain = Vec::new();
            for x in 0..w {
                let ray = pixel_ray(camera, x as f64 + 0.5, y as f64 + 0.5);
                collect_fragments(scene, prep, settings, &ray, frags);
                plain.clear();
                plain.extend(frags.iter().map(|s| s.fragment));
                let (rgb, a) = composite_ray_with_cutoff(
                    &plain,
                    scene.background,
                    settings.transmittance_cutoff,
                );
                for ch in 0..3 {
                    img_row[3 * x + ch] = rgb[ch].clamp(0.0, 1.0);
                }
                alpha_row[x] = a;
            }
        });
    RenderOutput { image, alpha }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GaussianPrimitive, TextureMap};
    use nalgebra::Matrix3;

    fn frag(depth: f64, color: [f64; 3], weight: f64) -> Fragment {
        Fragment {
            depth,
            color,
            weight,
        }
    }

    fn camera(w: usize, h: usize) -> Camera {
        Camera {
            fx: 20.0,
            fy: 20.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, -5.0),
        }
    }

    #[test]
    fn empty_ray_is_background() {
        assert_eq!(composite_ray(&[], [0.0; 3]), ([0.0; 3], 0.0));
        assert_eq!(composite_ray(&[], [0.2, 0.4, 0.6]), ([0.2, 0.4, 0.6], 0.0));
    }

    #[test]
    fn two_half_fragments() {
        let (c1, c2, bg) = ([1.0, 0.0, 0.2], [0.0, 1.0, 0.4], [0.3, 0.3, 0.3]);
        let (rgb, a) = composite_ray(&[frag(1.0, c1, 0.5), frag(2.0, c2, 0.5)], bg);
        for ch in 0..3 {
            let expect = 0.5 * c1[ch] + 0.25 * c2[ch] + 0.25 * bg[ch];
            assert!((rgb[ch] - expect).abs() < 1e-15);
        }
        assert_eq!(a, 0.75);
    }

    #[test]
    fn full_occlusion() {
        let c1 = [0.1, 0.2, 0.3];
        let (rgb, a) = composite_ray(&[frag(1.0, c1, 1.0), frag(2.0, [9.0; 3], 0.7)], [1.0; 3]);
        assert_eq!(rgb, c1);
        assert_eq!(a, 1.0);
    }

    #[test]
    #[should_panic(expected = "sorted")]
    #[cfg(debug_assertions)]
    fn unsorted_input_is_caught() {
        composite_ray(
            &[frag(2.0, [0.0; 3], 0.1), frag(1.0, [0.0; 3], 0.1)],
            [0.0; 3],
        );
    }

    #[test]
    fn fragment_terms() {
        let mut scene = Scene::new(4, 0);
        let mut p = GaussianPrimitive::new([0.0; 3], [1.0, 1.0], 0.5, 0);
        p.raw_opacity = 60.0;
        scene.push(p);
        scene.textures[0]
            .raw_alpha
            .iter_mut()
            .for_each(|a| *a = 60.0);
        let cam = camera(8, 8);
        let hit = Intersection {
            t: 5.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let s = RenderSettings::default();
        let f = fragment_weight_and_color(&scene, &cam, &s, 0, hit).unwrap();
        assert_eq!(f.color, [0.5; 3]);
        assert!((f.weight - 1.0).abs() < 1e-12);

        scene.primitives[0].raw_opacity = -800.0;
        let f = fragment_weight_and_color(&scene, &cam, &s, 0, hit).unwrap();
        assert_eq!(f.weight, 0.0);

        scene.primitives[0].raw_opacity = 0.0;
        scene.textures[0] = TextureMap::neutral(4);
        for k in 0..16 {
            scene.textures[0].rgb[3 * k] = 0.2;
        }
        let f = fragment_weight_and_color(&scene, &cam, &s, 0, hit).unwrap();
        assert!((f.color[0] - 0.7).abs() < 1e-15);
        assert_eq!(&f.color[1..], &[0.5, 0.5]);
    }

    #[test]
    fn empty_scene_renders_background() {
        let mut scene = Scene::new(4, 0);
        scene.background = [0.1, 0.2, 0.3];
        let out = render(&scene, &camera(6, 5), &RenderSettings::default()).unwrap();
        for px in out.image.data.chunks(3) {
            assert_eq!(px, &[0.1, 0.2, 0.3]);
        }
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn single_splat_is_local() {
        let mut scene = Scene::new(4, 0);
        scene.background = [0.0, 0.0, 1.0];
        let mut p = GaussianPrimitive::new([0.0; 3], [0.2, 0.2], 0.5, 0);
        p.raw_opacity = 60.0;
        p.sh[0] = [1.0, 0.0, -1.0];
        scene.push(p);
        let cam = camera(33, 33);
        let out = render(&scene, &cam, &RenderSettings::default()).unwrap();
        // Center pixel ray passes through the splat center.
        let a = logistic_neutral();
        let base = [
            0.5 + 0.282_094_791_773_878_14,
            0.5,
            0.5 - 0.282_094_791_773_878_14,
        ];
        for ch in 0..3 {
            let expect = base[ch] * a + (1.0 - a) * scene.background[ch];
            let got = out.image.get(16, 16, ch);
            assert!((got - expect).abs() < 1e-9, "ch {ch}: {got} vs {expect}");
        }
        assert_eq!(&out.image.data[..3], &[0.0, 0.0, 1.0]);
        assert_eq!(out.alpha.get(0, 0, 0), 0.0);
    }

    fn logistic_neutral() -> f64 {
        crate::scene::logistic(crate::scene::NEUTRAL_RAW_ALPHA)
    }

    #[test]
    fn render_is_deterministic() {
        let mut scene = Scene::new(3, 1);
        for k in 0..5 {
            let mut p = GaussianPrimitive::new(
                [0.1 * k as f64, -0.05 * k as f64, 0.2 * k as f64],
                [0.4, 0.3],
                0.7,
                1,
            );
            p.quaternion = [1.0, 0.1 * k as f64, 0.2, -0.1];
            p.sh[1] = [0.2, -0.1, 0.3];
            scene.push(p);
        }
        let cam = camera(16, 12);
        let s = RenderSettings::default();
        let a = render(&scene, &cam, &s).unwrap();
        let b = render(&scene, &cam, &s).unwrap();
        assert_eq!(a, b);
    }
}
