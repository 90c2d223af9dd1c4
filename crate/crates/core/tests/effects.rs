use proptest::prelude::*;
use sal_core::config::DatasetKind;
use sal_core::dataset::{generate_synthetic_sequence, CameraIntrinsics, MetadataKind, SyntheticSpec};
use sal_core::effects::crack::{crack_apply, crack_generate, CrackParams};
use sal_core::effects::fog::{fog_apply, FogParams, KOSCHMIEDER_CONSTANT};
use sal_core::effects::frame_drop::{frame_drop_apply, frame_drop_plan, DropMode};
use sal_core::effects::motion_blur::{motion_blur_apply, MotionBlurParams};
use sal_core::effects::night::{night_apply, NightParams};
use sal_core::effects::rain::{rain_apply, RainParams};
use sal_core::effects::soiling::{soiling_apply, soiling_generate, SoilingParams};
use sal_core::image::{quantize, Image};

fn textured(w: u32, h: u32) -> Image {
    Image::from_fn(w, h, |x, y| {
        let v = ((x * 7 + y * 13) % 31) as f32 / 31.0;
        [v, 1.0 - v, 0.5 * v]
    })
}

fn bytes(img: &Image) -> Vec<u8> {
    img.to_bytes()
}

#[test]
fn fog_on_black_at_visibility_distance() {
    let black = Image::filled(32, 24, [0.0; 3]);
    let depth = vec![50.0f32; 32 * 24];
    let p = FogParams {
        atmospheric_light: 1.0,
        ..FogParams::new(50.0)
    };
    let out = fog_apply(&black, &depth, &p, 0);
    let expected = 1.0 - (-KOSCHMIEDER_CONSTANT).exp();
    assert!(out.data().iter().all(|&v| (f64::from(v) - expected).abs() <= 1.0 / 255.0));
}

#[test]
fn fog_at_zero_depth_is_byte_identical() {
    let img = textured(40, 30);
    let out = fog_apply(&img, &vec![0.0; 40 * 30], &FogParams::new(20.0), 3);
    assert_eq!(bytes(&out), bytes(&img));
}

#[test]
fn fog_transmission_is_monotone_in_visibility() {
    let img = textured(16, 16);
    let depth = vec![30.0f32; 256];
    let contrast = |v: f64| {
        let out = fog_apply(&img, &depth, &FogParams::new(v), 0);
        let m = out.mean();
        out.data().iter().map(|&p| (f64::from(p) - m).abs()).sum::<f64>()
    };
    assert!(contrast(200.0) > contrast(50.0));
    assert!(contrast(50.0) > contrast(10.0));
}

fn intrinsics(w: u32, h: u32) -> CameraIntrinsics {
    CameraIntrinsics::default_for(w, h)
}

#[test]
fn motion_blur_zero_speed_or_exposure_is_identity() {
    let img = textured(40, 30);
    let depth = vec![5.0f32; 40 * 30];
    for p in [MotionBlurParams::new(0.0, 30.0), MotionBlurParams::new(120.0, 0.0)] {
        assert_eq!(bytes(&motion_blur_apply(&img, &depth, &p, &intrinsics(40, 30))), bytes(&img));
    }
}

#[test]
fn motion_blur_forward_travel() {
    assert!((MotionBlurParams::new(120.0, 100.0).delta_z() - 10.0 / 3.0).abs() < 1e-9);
}

#[test]
fn motion_blur_keeps_principal_point() {
    let (w, h) = (40, 30);
    let img = textured(w, h);
    let k = intrinsics(w, h);
    let (cx, cy) = (k.cx as u32, k.cy as u32);
    assert_eq!((f64::from(cx), f64::from(cy)), (k.cx, k.cy), "fixture needs integer principal point");
    for d in [0.5f32, 3.0, 40.0] {
        let out = motion_blur_apply(&img, &vec![d; (w * h) as usize], &MotionBlurParams::new(90.0, 50.0), &k);
        assert_eq!(out.get(cx, cy).map(quantize), img.get(cx, cy).map(quantize));
    }
}

#[test]
fn motion_blur_smears_off_axis() {
    let img = textured(41, 31);
    let out = motion_blur_apply(&img, &vec![2.0; 41 * 31], &MotionBlurParams::new(120.0, 100.0), &intrinsics(41, 31));
    assert_ne!(bytes(&out), bytes(&img));
}

#[test]
fn periodic_drop_on_euroc_keeps_names_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_frames: 10,
        layout: DatasetKind::Euroc,
        width: 32,
        height: 24,
        ..SyntheticSpec::default()
    };
    let (m, _) = generate_synthetic_sequence(&dir.path().join("src"), "MH_01", &spec).unwrap();
    let plan = frame_drop_plan(10, DropMode::Periodic { period: 3 }, 0).unwrap();
    assert_eq!(plan.kept, [0, 1, 3, 4, 6, 7, 9]);
    let out_root = dir.path().join("out");
    let out = frame_drop_apply(&m, &plan, &out_root).unwrap();
    assert_eq!(out.len(), 7);
    for (f, &k) in out.frames.iter().zip(&plan.kept) {
        assert_eq!(f.images, m.frames[k].images);
        assert!(out.sequence_dir().join(&f.images[0]).is_file());
    }
    let csv_rel = &m.metadata_files.iter().find(|f| f.kind == MetadataKind::EurocCsv).unwrap().path;
    let csv = std::fs::read_to_string(out.sequence_dir().join(csv_rel)).unwrap();
    assert_eq!(csv.lines().count(), 7 + 1);
    assert!(csv.starts_with('#'));
    let images = std::fs::read_dir(out.sequence_dir().join("mav0/cam0/data")).unwrap().count();
    assert_eq!(images, 7);
}

#[test]
fn seeded_effects_depend_on_seed() {
    let img = textured(64, 48);
    // large enough for a handful of streaks
    let (big, big_depth, big_k) = (textured(320, 240), vec![20.0f32; 320 * 240], intrinsics(320, 240));
    let rain = RainParams::new(50.0);
    let r = |seed| bytes(&rain_apply(&big, &big_depth, &rain, seed, &big_k));
    assert_eq!(r(1), r(1));
    assert_ne!(r(1), r(2));
    let night = NightParams::default();
    assert_eq!(bytes(&night_apply(&img, &night, 5)), bytes(&night_apply(&img, &night, 5)));
    assert_ne!(bytes(&night_apply(&img, &night, 5)), bytes(&night_apply(&img, &night, 6)));
    let soil = SoilingParams::default();
    assert_eq!(soiling_generate(64, 48, &soil, 9), soiling_generate(64, 48, &soil, 9));
    assert_ne!(soiling_generate(64, 48, &soil, 9), soiling_generate(64, 48, &soil, 10));
    let crack = CrackParams::default();
    assert_eq!(crack_generate(64, 48, &crack, 4), crack_generate(64, 48, &crack, 4));
    assert_ne!(crack_generate(64, 48, &crack, 4), crack_generate(64, 48, &crack, 5));
}

#[test]
fn overlays_keep_dimensions() {
    let img = textured(64, 48);
    let o = soiling_generate(64, 48, &SoilingParams::default(), 1);
    assert_eq!(soiling_apply(&img, &o).unwrap().dimensions(), (64, 48));
    let c = crack_generate(64, 48, &CrackParams::default(), 1);
    assert_eq!(crack_apply(&img, &c).unwrap().dimensions(), (64, 48));
    let wrong = soiling_generate(32, 48, &SoilingParams::default(), 1);
    assert!(soiling_apply(&img, &wrong).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fog_output_stays_between_input_and_airlight(
        v in 1.0f64..500.0, d in 0.0f32..300.0, a in 0.0f64..1.0, j in 0.0f32..1.0,
    ) {
        let img = Image::filled(4, 3, [j; 3]);
        let p = FogParams { atmospheric_light: a, ..FogParams::new(v) };
        let out = fog_apply(&img, &[d; 12], &p, 0);
        let (lo, hi) = (f64::from(j).min(a), f64::from(j).max(a));
        for &o in out.data() {
            prop_assert!(f64::from(o) >= lo - 1e-6 && f64::from(o) <= hi + 1e-6);
        }
    }

    #[test]
    fn random_drop_keeps_first_frame_and_order(n in 2usize..200, rate in 0.0f64..99.0, seed in any::<u64>()) {
        let plan = frame_drop_plan(n, DropMode::Random { rate_percent: rate }, seed).unwrap();
        prop_assert_eq!(plan.kept[0], 0);
        prop_assert!(plan.kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(plan.kept.len() + plan.dropped().len(), n);
    }
}
