//! Rays, ray/tangent-plane intersection, the Gaussian footprint and the
//! plane-to-texture coordinate map.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{ActivatedPrimitive, Camera};

/// Intersections closer than this are rejected.
pub const NEAR_EPSILON: f64 = 1e-4;
/// Rays this close to parallel with a plane miss it.
pub const PARALLEL_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub t: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Ray through the continuous pixel position `(px, py)`; pass `x + 0.5`
/// for a pixel center.
pub fn generate_ray(camera: &Camera, px: f64, py: f64) -> Result<Ray> {
    if !(px >= 0.0 && px < camera.width as f64 && py >= 0.0 && py < camera.height as f64) {
        return Err(Error::Invalid(format!(
            "pixel ({px}, {py}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    Ok(pixel_ray(camera, px, py))
}

/// Unchecked variant of [`generate_ray`] for the render loop.
#[inline]
pub(crate) fn pixel_ray(camera: &Camera, px: f64, py: f64) -> Ray {
    let d_cam = Vector3::new(
        (px - camera.cx) / camera.fx,
        (py - camera.cy) / camera.fy,
        1.0,
    );
    Ray {
        origin: camera.translation,
        direction: (camera.rotation * d_cam).normalize(),
    }
}

/// Inverts `P(β, γ) = p + s_β t_β β + s_γ t_γ γ` along the ray.
pub fn intersect_tangent_plane(ray: &Ray, prim: &ActivatedPrimitive) -> Option<Intersection> {
    let denom = ray.direction.dot(&prim.normal);
    if denom.abs() < PARALLEL_EPSILON {
        return None;
    }
    let t = (prim.center - ray.origin).dot(&prim.normal) / denom;
    if !(t > NEAR_EPSILON) {
        return None;
    }
    let r = ray.at(t) - prim.center;
    Some(Intersection {
        t,
        beta: r.dot(&prim.t_beta) / prim.scales[0],
        gamma: r.dot(&prim.t_gamma) / prim.scales[1],
    })
}

/// Plane point at local coordinates `(β, γ)`.
pub fn plane_point(prim: &ActivatedPrimitive, beta: f64, gamma: f64) -> Vector3<f64> {
    prim.center + prim.t_beta * (prim.scales[0] * beta) + prim.t_gamma * (prim.scales[1] * gamma)
}

#[inline]
pub fn gaussian_weight(beta: f64, gamma: f64) -> f64 {
    (-(beta * beta + gamma * gamma) / 2.0).exp()
}

/// True when `(β, γ)` lies outside the texture support and is culled.
#[inline]
pub fn outside_support(beta: f64, gamma: f64, xi: f64) -> bool {
    beta * beta + gamma * gamma > xi * xi
}

/// Maps local plane coordinates to texture coordinates in `[0, τ]²`.
pub fn uv_from_local(beta: f64, gamma: f64, xi: f64, tau: usize) -> (f64, f64) {
    let (u, v, _, _) = uv_from_local_with_mask(beta, gamma, xi, tau);
    (u, v)
}

/// Like [`uv_from_local`] but also reports, per axis, whether the value
/// was inside the range (clamp subgradient is zero outside).
#[inline]
pub(crate) fn uv_from_local_with_mask(
    beta: f64,
    gamma: f64,
    xi: f64,
    tau: usize,
) -> (f64, f64, bool, bool) {
    let tau = tau as f64;
    let u = (beta + xi) / (2.0 * xi) * tau;
    let v = (gamma + xi) / (2.0 * xi) * tau;
    let in_u = (0.0..=tau).contains(&u);
    let in_v = (0.0..=tau).contains(&v);
    (u.clamp(0.0, tau), v.clamp(0.0, tau), in_u, in_v)
}
