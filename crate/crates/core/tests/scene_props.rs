mod common;

use common::*;
use factgs::geometry::{
    gaussian_weight, generate_ray, intersect_tangent_plane, outside_support, plane_point,
    uv_from_local, Ray,
};
use factgs::scene::{activate, logistic, logit, validate_scene, GaussianPrimitive, Scene};
use factgs::sh::{basis, coeff_count, eval_sh_color};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn unit_vector(r: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = r.gen_range(-1.0..1.0);
    let phi: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

fn random_primitive(r: &mut ChaCha8Rng, sh_degree: usize) -> GaussianPrimitive {
    let mut p = GaussianPrimitive::new(
        [0, 1, 2].map(|_| r.gen_range(-2.0..2.0)),
        [r.gen_range(0.05..3.0), r.gen_range(0.05..3.0)],
        r.gen_range(0.01..0.99),
        sh_degree,
    );
    p.quaternion = [0, 1, 2, 3].map(|_| r.gen_range(-2.0..2.0));
    p.sh.iter_mut()
        .for_each(|c| *c = [0, 1, 2].map(|_| r.gen_range(-1.0..1.0)));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn activation_satisfies_invariants(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_primitive(&mut r, 2);
        prop_assume!(p.quaternion.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let a = activate(&p).unwrap();
        prop_assert!(a.scales.iter().all(|&s| s > 0.0));
        prop_assert!(a.opacity > 0.0 && a.opacity < 1.0);
        let qn = a.unit_quaternion.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((qn - 1.0).abs() <= 1e-12);
        for (x, y) in [(a.t_beta, a.t_gamma), (a.t_beta, a.normal), (a.t_gamma, a.normal)] {
            prop_assert!(x.dot(&y).abs() <= 1e-6);
        }
        for v in [a.t_beta, a.t_gamma, a.normal] {
            prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn raw_mapping_inverts_activation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_primitive(&mut r, 0);
        let a = activate(&p).unwrap();
        let mut back = p.clone();
        back.raw_scales = a.scales.map(f64::ln);
        back.raw_opacity = logit(a.opacity);
        back.quaternion = a.unit_quaternion;
        let b = activate(&back).unwrap();
        for k in 0..2 {
            prop_assert!((a.scales[k] - b.scales[k]).abs() <= 1e-6 * a.scales[k]);
        }
        prop_assert!((a.opacity - b.opacity).abs() <= 1e-6);
        prop_assert!((a.t_beta - b.t_beta).norm() <= 1e-6);
        prop_assert!((a.t_gamma - b.t_gamma).norm() <= 1e-6);
        let x = r.gen_range(-20.0..20.0);
        prop_assert!((logit(logistic(x)) - x).abs() <= 1e-6);
    }

    #[test]
    fn degree_zero_color_is_view_independent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_primitive(&mut r, 3);
        let first = eval_sh_color(&p.sh, &unit_vector(&mut r), 0);
        for _ in 0..100 {
            prop_assert_eq!(eval_sh_color(&p.sh, &unit_vector(&mut r), 0), first);
        }
    }

    #[test]
    fn intersection_recovers_plane_coordinates(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_primitive(&mut r, 0);
        let a = activate(&p).unwrap();
        let (beta, gamma) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let target = plane_point(&a, beta, gamma);
        let origin = target + unit_vector(&mut r) * r.gen_range(0.5..5.0);
        let direction = (target - origin).normalize();
        prop_assume!(direction.dot(&a.normal).abs() > 0.05);
        let hit = intersect_tangent_plane(&Ray { origin, direction }, &a).unwrap();
        prop_assert!(hit.t > 0.0);
        prop_assert!((hit.beta - beta).abs() <= 1e-6, "{} vs {beta}", hit.beta);
        prop_assert!((hit.gamma - gamma).abs() <= 1e-6, "{} vs {gamma}", hit.gamma);
    }

    #[test]
    fn camera_rays_are_unit_length(seed in any::<u64>()) {
        let mut r = rng(seed);
        let size = r.gen_range(1..64);
        let cam = front_camera(size, r.gen_range(0.5..10.0), r.gen_range(1.0..200.0));
        let (px, py) = (r.gen_range(0.0..size as f64), r.gen_range(0.0..size as f64));
        let ray = generate_ray(&cam, px, py).unwrap();
        prop_assert!((ray.direction.norm() - 1.0).abs() <= 1e-9);
        prop_assert!(generate_ray(&cam, size as f64, py).is_err());
    }

    #[test]
    fn uv_map_is_monotone(xi in 0.1f64..10.0, tau in 1usize..16, a in -12.0f64..12.0, d in 0.0f64..5.0, other in -12.0f64..12.0) {
        let (u0, v0) = uv_from_local(a, other, xi, tau);
        let (u1, _) = uv_from_local(a + d, other, xi, tau);
        let (_, v1) = uv_from_local(other, a + d, xi, tau);
        let (_, v0b) = uv_from_local(other, a, xi, tau);
        prop_assert!(u1 >= u0);
        prop_assert!(v1 >= v0b);
        prop_assert!((0.0..=tau as f64).contains(&u0) && (0.0..=tau as f64).contains(&v0));
    }

    #[test]
    fn uv_center_maps_to_texture_center(xi in 0.1f64..10.0, tau in 1usize..16) {
        let half = tau as f64 / 2.0;
        prop_assert_eq!(uv_from_local(0.0, 0.0, xi, tau), (half, half));
        prop_assert_eq!(uv_from_local(-xi, xi, xi, tau), (0.0, tau as f64));
    }

    #[test]
    fn footprint_depends_only_on_radius(beta in -4.0f64..4.0, gamma in -4.0f64..4.0, theta in 0.0f64..std::f64::consts::TAU) {
        let (s, c) = theta.sin_cos();
        let (rb, rg) = (c * beta - s * gamma, s * beta + c * gamma);
        prop_assert!((gaussian_weight(beta, gamma) - gaussian_weight(rb, rg)).abs() <= 1e-12);
        let w = gaussian_weight(beta, gamma);
        prop_assert!(w > 0.0 && w <= 1.0);
        prop_assert_eq!(outside_support(beta, gamma, 3.0), beta * beta + gamma * gamma > 9.0);
    }

    #[test]
    fn validation_reports_broken_invariants(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let mut s = Scene::new(r.gen_range(1..6), 1);
        for _ in 0..n {
            s.push(random_primitive(&mut r, 1));
        }
        prop_assert!(validate_scene(&s).is_empty());
        let k = r.gen_range(0..n);
        let mut bad = s.clone();
        bad.textures[k].rgb[0] = f64::NAN;
        let loc = format!("textures[{k}]");
        prop_assert!(validate_scene(&bad).iter().any(|v| v.location == loc));
        let mut bad = s.clone();
        bad.deformations.pop();
        prop_assert!(!validate_scene(&bad).is_empty());
        let mut bad = s.clone();
        bad.xi = 0.0;
        prop_assert!(!validate_scene(&bad).is_empty());
        let mut bad = s;
        bad.primitives[k].sh.push([0.0; 3]);
        let loc = format!("primitives[{k}]");
        prop_assert!(validate_scene(&bad).iter().any(|v| v.location == loc));
    }
}

#[test]
fn sh_basis_is_orthonormal_on_the_sphere() {
    let n = coeff_count(3);
    let samples = 100_000;
    let mut r = rng(42);
    let mut gram = vec![0.0; n * n];
    for _ in 0..samples {
        let b = basis(&unit_vector(&mut r), 3);
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += b[i] * b[j];
            }
        }
    }
    let area = 4.0 * std::f64::consts::PI;
    for i in 0..n {
        for j in 0..n {
            let integral = gram[i * n + j] * area / samples as f64;
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((integral - want).abs() < 2e-2, "<Y{i}, Y{j}> = {integral}");
        }
    }
}
