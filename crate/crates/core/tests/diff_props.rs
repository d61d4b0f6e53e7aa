mod common;

use common::*;
use factgs::compositor::{render, RenderSettings, TextureSampling};
use factgs::diff::{backward, grad_check, GradientSet, ReductionMode, TapeConfig};
use factgs::loss::LossConfig;
use factgs::scene::{DeformationField, GaussianPrimitive, ParamBlock, Scene, View};
use factgs::Error;
use proptest::prelude::*;
use rand::Rng;

fn grads(
    scene: &Scene,
    views: &[View],
    cfg: &LossConfig,
    settings: &RenderSettings,
) -> GradientSet {
    backward(scene, views, cfg, settings, &TapeConfig::default())
        .unwrap()
        .1
}

fn max_abs_all(g: &GradientSet) -> f64 {
    ParamBlock::ALL
        .iter()
        .map(|&b| g.max_abs(b))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backward_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 4, sh_degree: 2, ..SceneSpec::default() }, &mut r);
        let view = random_view(gradient_camera(8), &mut r);
        let lambda = r.gen_range(0.5..2.0);
        let rep = grad_check(&scene, &[view], &LossConfig::l1_only(), &RenderSettings::warped(lambda), 1e-4, 1e-3).unwrap();
        for b in &rep.blocks {
            prop_assert!(b.passed, "{:?}: {:.3e} at {:?} ({} vs {})", b.block, b.max_rel_error, b.worst_index, b.analytic, b.numeric);
        }
    }

    #[test]
    fn zero_lambda_cuts_the_deformation_path(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 3, sh_degree: 1, ..SceneSpec::default() }, &mut r);
        let view = random_view(gradient_camera(8), &mut r);
        let g = grads(&scene, &[view], &LossConfig::l1_only(), &RenderSettings::warped(0.0));
        prop_assert!(g.block(ParamBlock::Disp).iter().all(|&x| x == 0.0));
        prop_assert!(g.max_abs(ParamBlock::TextureRgb) > 0.0);
    }

    #[test]
    fn gradients_are_affine_in_the_loss_weights(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 3, sh_degree: 1, ..SceneSpec::default() }, &mut r);
        let views = [random_view(gradient_camera(16), &mut r), random_view(gradient_camera(16), &mut r)];
        let settings = RenderSettings::warped(1.0);
        let at = |eta: f64, v: &[View]| grads(&scene, v, &LossConfig { eta, ..LossConfig::default() }, &settings);
        let (ga, gb, g1, g0) = (at(a, &views), at(b, &views), at(1.0, &views), at(0.0, &views));
        let scale = max_abs_all(&g1).max(max_abs_all(&g0));
        for blk in ParamBlock::ALL {
            for i in 0..ga.block(blk).len() {
                let lhs = ga.block(blk)[i] + gb.block(blk)[i];
                let rhs = (a + b) * g1.block(blk)[i] + (2.0 - a - b) * g0.block(blk)[i];
                prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300), "{blk:?}[{i}]");
            }
        }
        // Averaging over views is linear too.
        let (v0, v1, both) = (at(1.0, &views[..1]), at(1.0, &views[1..]), at(1.0, &views));
        for blk in ParamBlock::ALL {
            for i in 0..v0.block(blk).len() {
                let sum = v0.block(blk)[i] + v1.block(blk)[i];
                prop_assert!((sum - 2.0 * both.block(blk)[i]).abs() <= 1e-10 * scale.max(1e-300));
            }
        }
    }

    #[test]
    fn exact_reconstruction_has_zero_l1_gradient(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 4, sh_degree: 1, ..SceneSpec::default() }, &mut r);
        let cam = gradient_camera(8);
        let settings = RenderSettings::warped(1.0);
        let target = render(&scene, &cam, &settings).unwrap().image;
        let view = View::new(cam, target, None).unwrap();
        let (loss, g) = backward(&scene, &[view], &LossConfig::l1_only(), &settings, &TapeConfig::default()).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assert_eq!(max_abs_all(&g), 0.0);
    }

    #[test]
    fn truncated_fragments_get_no_gradient(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut scene = Scene::new(3, 1);
        // Two nearly opaque layers drive transmittance below the cutoff.
        for (k, z) in [0.4, 0.2, 0.0].into_iter().enumerate() {
            let opacity = if k < 2 { 0.9999 } else { 0.5 };
            let mut p = GaussianPrimitive::new([0.0, 0.0, z], [50.0, 50.0], opacity, 1);
            p.sh[0] = [r.gen_range(-0.5..0.5), 0.1, -0.1];
            scene.push(p);
        }
        for t in &mut scene.textures {
            t.raw_alpha.iter_mut().for_each(|a| *a = 30.0);
            t.rgb.iter_mut().for_each(|c| *c = r.gen_range(-0.1..0.1));
        }
        scene.deformations[2] = DeformationField::from_fn(3, |_, _| [0.1, -0.1]);
        let view = random_view(gradient_camera(8), &mut r);
        let g = grads(&scene, &[view], &LossConfig::l1_only(), &RenderSettings::warped(1.0));
        for blk in ParamBlock::ALL {
            prop_assert!(g.of_primitive(blk, 2).iter().all(|&x| x == 0.0), "{blk:?}");
        }
        prop_assert!(g.of_primitive(ParamBlock::Sh, 1).iter().any(|&x| x != 0.0));
    }
}

#[test]
fn deterministic_mode_is_bitwise_stable_across_thread_counts() {
    let mut r = rng(7);
    let scene = random_scene(
        &SceneSpec {
            n: 6,
            ..SceneSpec::default()
        },
        &mut r,
    );
    let views = [random_view(gradient_camera(24), &mut r)];
    let cfg = LossConfig::default();
    let settings = RenderSettings::warped(1.0);
    let tape = TapeConfig {
        mode: ReductionMode::Deterministic,
        ..TapeConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| backward(&scene, &views, &cfg, &settings, &tape).unwrap())
    };
    let (l1, g1) = run(1);
    for threads in [1, 2, 3, 8] {
        let (l, g) = run(threads);
        assert_eq!(l.to_bits(), l1.to_bits());
        for blk in ParamBlock::ALL {
            let same = g
                .block(blk)
                .iter()
                .zip(g1.block(blk))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{blk:?} differs with {threads} threads");
        }
    }
}

#[test]
fn fast_mode_agrees_with_deterministic_mode() {
    let mut r = rng(8);
    let scene = random_scene(
        &SceneSpec {
            n: 5,
            sh_degree: 1,
            ..SceneSpec::default()
        },
        &mut r,
    );
    let views = [random_view(gradient_camera(16), &mut r)];
    let settings = RenderSettings::warped(1.0);
    let det = backward(
        &scene,
        &views,
        &LossConfig::default(),
        &settings,
        &TapeConfig::default(),
    )
    .unwrap();
    let fast_tape = TapeConfig {
        mode: ReductionMode::Fast,
        ..TapeConfig::default()
    };
    let fast = backward(
        &scene,
        &views,
        &LossConfig::default(),
        &settings,
        &fast_tape,
    )
    .unwrap();
    assert!((det.0 - fast.0).abs() < 1e-14);
    for blk in ParamBlock::ALL {
        for (a, b) in det.1.block(blk).iter().zip(fast.1.block(blk)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn gradcheck_on_the_reference_scene() {
    let mut r = rng(0);
    let scene = random_scene(&SceneSpec::default(), &mut r);
    assert!(scene.deformations.iter().all(|d| !d.is_zero()));
    let view = random_view(gradient_camera(8), &mut r);
    let views = [view];
    let settings = RenderSettings::warped(1.0);
    let rep = grad_check(
        &scene,
        &views,
        &LossConfig::l1_only(),
        &settings,
        1e-4,
        1e-3,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:#?}");

    let mut flat = scene.clone();
    flat.deformations
        .iter_mut()
        .for_each(|d| *d = DeformationField::zero(d.tau));
    let rep = grad_check(&flat, &views, &LossConfig::l1_only(), &settings, 1e-4, 1e-3).unwrap();
    assert!(rep.passed(), "{rep:#?}");

    let rep = grad_check(&scene, &views, &LossConfig::l1_only(), &settings, 1e-4, 0.0).unwrap();
    assert!(rep.blocks.iter().all(|b| !b.passed));
}

#[test]
fn gradcheck_with_the_full_loss() {
    let mut r = rng(3);
    let scene = random_scene(
        &SceneSpec {
            n: 4,
            sh_degree: 1,
            ..SceneSpec::default()
        },
        &mut r,
    );
    let views = [random_view(gradient_camera(16), &mut r)];
    let cfg = LossConfig::default();
    let rep = grad_check(
        &scene,
        &views,
        &cfg,
        &RenderSettings::warped(1.0),
        1e-4,
        1e-3,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:#?}");
    let uniform = RenderSettings {
        sampling: TextureSampling::Uniform,
        ..RenderSettings::default()
    };
    let rep = grad_check(&scene, &views, &cfg, &uniform, 1e-4, 1e-3).unwrap();
    assert!(rep.passed(), "{rep:#?}");
}

#[test]
fn non_finite_gradients_name_their_block() {
    let mut r = rng(1);
    let scene = random_scene(
        &SceneSpec {
            n: 2,
            sh_degree: 0,
            ..SceneSpec::default()
        },
        &mut r,
    );
    let mut g = GradientSet::zeros_like(&scene);
    assert!(g.ensure_finite().is_ok());
    g.block_mut(ParamBlock::Disp)[3] = f64::NAN;
    match g.ensure_finite() {
        Err(Error::NonFinite(name)) => assert_eq!(name, ParamBlock::Disp.name()),
        other => panic!("unexpected {other:?}"),
    }
}
