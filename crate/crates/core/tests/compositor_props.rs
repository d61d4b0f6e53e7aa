mod common;

use common::*;
use factgs::compositor::{
    composite_ray, composite_ray_with_cutoff, render, Fragment, RenderSettings,
    DEFAULT_TRANSMITTANCE_CUTOFF,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn fragment_strategy() -> impl Strategy<Value = Fragment> {
    (
        0.0f64..10.0,
        prop::array::uniform3(-0.5f64..1.5),
        prop_oneof![4 => 0.0f64..=1.0, 1 => Just(1.0), 1 => 0.999f64..=1.0],
    )
        .prop_map(|(depth, color, weight)| Fragment {
            depth,
            color,
            weight,
        })
}

fn sorted(mut f: Vec<Fragment>) -> Vec<Fragment> {
    f.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    f
}

/// `Σᵢ cᵢ wᵢ Πⱼ<ᵢ (1 − wⱼ) + b Πⱼ (1 − wⱼ)`, each product expanded from
/// scratch, over the fragments that take part in blending.
fn direct_blend(f: &[Fragment], bg: [f64; 3], cutoff: f64) -> ([f64; 3], f64) {
    let prod = |k: usize| (0..k).map(|j| 1.0 - f[j].weight).product::<f64>();
    let used = (1..=f.len()).find(|&k| prod(k) < cutoff).unwrap_or(f.len());
    let mut out = [0.0; 3];
    for ch in 0..3 {
        for i in 0..used {
            out[ch] += f[i].color[ch] * f[i].weight * prod(i);
        }
        out[ch] += bg[ch] * prod(used);
    }
    (out, 1.0 - prod(used))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_direct_expansion(
        frags in prop::collection::vec(fragment_strategy(), 0..=4),
        bg in prop::array::uniform3(0.0f64..=1.0),
    ) {
        let f = sorted(frags);
        let (rgb, alpha) = composite_ray(&f, bg);
        let (want, want_alpha) = direct_blend(&f, bg, DEFAULT_TRANSMITTANCE_CUTOFF);
        for ch in 0..3 {
            prop_assert!((rgb[ch] - want[ch]).abs() <= 1e-12, "{rgb:?} vs {want:?}");
        }
        prop_assert!((alpha - want_alpha).abs() <= 1e-12);
    }

    #[test]
    fn transmittance_is_monotone(frags in prop::collection::vec(fragment_strategy(), 0..=8)) {
        let f = sorted(frags);
        let mut last = 1.0;
        for k in 0..=f.len() {
            let (_, alpha) = composite_ray_with_cutoff(&f[..k], [0.0; 3], 0.0);
            let t = 1.0 - alpha;
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert!(t <= last);
            last = t;
        }
    }

    #[test]
    fn output_is_a_convex_combination(
        frags in prop::collection::vec(fragment_strategy(), 0..=6),
        bg in prop::array::uniform3(0.0f64..=1.0),
    ) {
        let f: Vec<Fragment> = sorted(frags)
            .into_iter()
            .map(|mut x| {
                x.color = x.color.map(|c| c.clamp(0.0, 1.0));
                x
            })
            .collect();
        let (rgb, _) = composite_ray(&f, bg);
        for ch in 0..3 {
            let lo = f.iter().map(|x| x.color[ch]).fold(bg[ch], f64::min);
            let hi = f.iter().map(|x| x.color[ch]).fold(bg[ch], f64::max);
            prop_assert!(rgb[ch] >= lo - 1e-12 && rgb[ch] <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn primitive_order_does_not_matter(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 5, sh_degree: 1, ..SceneSpec::default() }, &mut r);
        let mut order: Vec<usize> = (0..scene.len()).collect();
        order.shuffle(&mut r);
        let mut shuffled = scene.clone();
        shuffled.primitives = order.iter().map(|&i| scene.primitives[i].clone()).collect();
        shuffled.textures = order.iter().map(|&i| scene.textures[i].clone()).collect();
        shuffled.deformations = order.iter().map(|&i| scene.deformations[i].clone()).collect();
        let cam = gradient_camera(10);
        let settings = RenderSettings::warped(r.gen_range(0.0..2.0));
        let a = render(&scene, &cam, &settings).unwrap();
        let b = render(&shuffled, &cam, &settings).unwrap();
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fragment_input_order_does_not_matter(frags in prop::collection::vec(fragment_strategy(), 0..=6), seed in any::<u64>()) {
        let f = sorted(frags);
        let mut shuffled = f.clone();
        shuffled.shuffle(&mut rng(seed));
        let a = composite_ray(&f, [0.2, 0.4, 0.6]);
        let b = composite_ray(&sorted(shuffled), [0.2, 0.4, 0.6]);
        for ch in 0..3 {
            prop_assert!((a.0[ch] - b.0[ch]).abs() <= 1e-12);
        }
        prop_assert!((a.1 - b.1).abs() <= 1e-12);
    }
}
