mod common;

use common::*;
use factgs::io::{
    encode_ppm, load_views, parse_camera_file, parse_scene_file, quantize, read_image,
    serialize_scene, write_camera_file, write_image, CameraEntry, CameraFile, ImageFormat,
    ParseError,
};
use factgs::scene::validate_scene;
use factgs::Image;
use proptest::prelude::*;
use rand::Rng;

fn ramp(w: usize, h: usize, ch: usize) -> Image {
    Image::from_fn(w, h, ch, |x, y, c| {
        ((x + w * y) * ch + c) as f64 / (w * 3 * ch - 1) as f64 * 1.2 - 0.1
    })
}

fn golden(name: &str) -> Vec<u8> {
    std::fs::read(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

#[test]
fn ppm_bytes_match_golden_files() {
    assert_eq!(
        encode_ppm(&ramp(5, 3, 3), false).unwrap(),
        golden("ramp_5x3.ppm")
    );
    assert_eq!(
        encode_ppm(&ramp(5, 3, 3), true).unwrap(),
        golden("ramp_5x3_srgb.ppm")
    );
    assert_eq!(
        encode_ppm(&ramp(4, 2, 1), false).unwrap(),
        golden("ramp_4x2.pgm")
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ramp.ppm");
    write_image(&ramp(5, 3, 3), &path, ImageFormat::Ppm, false).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), golden("ramp_5x3.ppm"));
}

#[test]
fn truncated_and_malformed_documents_are_rejected() {
    let good = br#"{"tau": 2, "primitives": [{"center": [0, 0, 0]}]}"#;
    assert!(parse_scene_file(good).is_ok());
    for cut in 0..good.len() {
        assert!(
            parse_scene_file(&good[..cut]).is_err(),
            "prefix of {cut} bytes parsed"
        );
    }
    let missing =
        br#"{"tau": 2, "primitives": [{"center": [0, 0, 0]}, {"quaternion": [1, 0, 0, 0]}]}"#;
    match parse_scene_file(missing) {
        Err(ParseError::MissingField { path, field }) => {
            assert_eq!(path, "primitives[1]");
            assert_eq!(field, "center");
        }
        other => panic!("unexpected {other:?}"),
    }
    let unknown = br#"{"tau": 2, "primitives": [], "colour": 1}"#;
    assert!(matches!(
        parse_scene_file(unknown),
        Err(ParseError::Syntax { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scene_documents_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spec = SceneSpec { n: r.gen_range(0..5), tau: r.gen_range(1..5), sh_degree: r.gen_range(0..4), disp_amplitude: 0.5 };
        let mut scene = random_scene(&spec, &mut r);
        scene.xi = r.gen_range(0.5..5.0);
        scene.background = [0, 1, 2].map(|_| r.gen_range(0.0..=1.0));
        let text = serialize_scene(&scene);
        let back = parse_scene_file(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &scene);
        prop_assert_eq!(serialize_scene(&back), text);
    }

    #[test]
    fn corrupted_documents_parse_fully_or_not_at_all(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(&SceneSpec { n: 2, tau: 2, sh_degree: 0, disp_amplitude: 0.1 }, &mut r);
        let mut bytes = serialize_scene(&scene).into_bytes();
        for _ in 0..r.gen_range(1..4) {
            let k = r.gen_range(0..bytes.len());
            bytes[k] = b"0123456789-.,[]{}\":e x"[r.gen_range(0..22)];
        }
        if let Ok(parsed) = parse_scene_file(&bytes) {
            prop_assert!(validate_scene(&parsed).is_empty());
        }
    }

    #[test]
    fn ppm_encoding_is_deterministic_and_exact(seed in any::<u64>(), srgb in any::<bool>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(1..9), r.gen_range(1..9));
        let img = Image::from_fn(w, h, 3, |_, _, _| r.gen_range(-0.2..1.2));
        let a = encode_ppm(&img, srgb).unwrap();
        prop_assert_eq!(&a, &encode_ppm(&img.clone(), srgb).unwrap());
        let header = format!("P6\n{w} {h}\n255\n");
        prop_assert_eq!(&a[..header.len()], header.as_bytes());
        prop_assert_eq!(a.len(), header.len() + w * h * 3);
        for (b, v) in a[header.len()..].iter().zip(&img.data) {
            prop_assert_eq!(*b, quantize(*v, srgb));
        }
    }

    #[test]
    fn eight_bit_values_survive_a_file_round_trip(seed in any::<u64>(), srgb in any::<bool>(), png in any::<bool>()) {
        let mut r = rng(seed);
        let (w, h) = (r.gen_range(1..7), r.gen_range(1..7));
        let img = Image::from_fn(w, h, 3, |_, _, _| r.gen_range(0..=255u8) as f64 / 255.0);
        let img = if srgb { Image::from_fn(w, h, 3, |x, y, c| factgs::io::srgb_to_linear(img.get(x, y, c))) } else { img };
        let dir = tempfile::tempdir().unwrap();
        let (path, fmt) = if png { (dir.path().join("a.png"), ImageFormat::Png) } else { (dir.path().join("a.ppm"), ImageFormat::Ppm) };
        write_image(&img, &path, fmt, srgb).unwrap();
        let back = read_image(&path, srgb).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn camera_files_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let size = r.gen_range(1..16);
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for k in 0..r.gen_range(1..4) {
            let cam = front_camera(size, r.gen_range(1.0..5.0), r.gen_range(1.0..50.0));
            let img = random_image(size, size, 3, &mut r);
            let name = format!("v{k}.ppm");
            write_image(&img, &dir.path().join(&name), ImageFormat::Ppm, false).unwrap();
            let entry = CameraEntry::from_camera(&cam, name);
            prop_assert_eq!(entry.camera().unwrap(), cam);
            entries.push(entry);
        }
        let file = CameraFile { views: entries };
        let path = dir.path().join("cameras.json");
        write_camera_file(&path, &file).unwrap();
        prop_assert_eq!(&parse_camera_file(&std::fs::read(&path).unwrap()).unwrap(), &file);
        let views = load_views(&path).unwrap();
        prop_assert_eq!(views.len(), file.views.len());
        for (v, e) in views.iter().zip(&file.views) {
            prop_assert_eq!(&v.camera, &e.camera().unwrap());
        }
    }
}
