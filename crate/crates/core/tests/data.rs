use gan_translate::data::imageio::{from_u8, load_tensor_image, save_tensor_image, to_u8};
use gan_translate::data::*;
use gan_translate::evaluation::foreground_centroid;
use gan_translate::{Error, Tensor};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn ks_statistic_sanity() {
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    assert_eq!(ks_statistic(&a, &a), 0.0);
    let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
    assert_eq!(ks_statistic(&a, &b), 1.0);
}

#[test]
fn attribute_distributions_do_not_depend_on_domain() {
    let spec = ShapesSpec {
        n_per_domain: 10_000,
        ..ShapesSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut attrs = [Vec::new(), Vec::new()];
    for _ in 0..spec.n_per_domain {
        for (d, a) in attrs.iter_mut().enumerate() {
            a.push(generate_shapes_sample(d, &spec, &mut rng).unwrap().1);
        }
    }
    type Field = fn(&SampleAttributes) -> f64;
    let fields: [(&str, Field); 4] = [
        ("center_x", |a| a.center_x),
        ("center_y", |a| a.center_y),
        ("size", |a| a.size),
        ("color", |a| a.color_index as f64),
    ];
    for (name, f) in fields {
        let x: Vec<f64> = attrs[0].iter().map(f).collect();
        let y: Vec<f64> = attrs[1].iter().map(f).collect();
        let d = ks_statistic(&x, &y);
        assert!(d < 0.05, "{name}: KS statistic {d}");
    }
}

#[test]
fn default_dataset_has_five_thousand_per_domain() {
    let ds = build_shapes_dataset(&ShapesSpec::default()).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.counts(), vec![5000, 5000]);
    assert!(ds.items.iter().all(|s| s.label < 2 && s.image.shape() == [3, 32, 32]));
    assert!(ds.items.iter().all(|s| s.image.data().iter().all(|v| (-1.0..=1.0).contains(v))));
}

#[test]
fn rendered_centroid_tracks_the_attribute_center() {
    let spec = ShapesSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..500 {
        let (img, a) = generate_shapes_sample(i % 2, &spec, &mut rng).unwrap();
        let (cx, cy) = foreground_centroid(&img).unwrap();
        assert!((cx - a.center_x).hypot(cy - a.center_y) < 1.0, "sample {i}: {a:?} vs ({cx}, {cy})");
    }
}

#[test]
fn centroid_is_accurate_over_the_legal_grid() {
    let spec = ShapesSpec::default();
    for kind in [ShapeKind::Circle, ShapeKind::Square] {
        for size in [spec.size_range[0], 8.0, spec.size_range[1]] {
            let (lo, hi) = spec.center_range(size);
            for cx in [lo, (lo + hi) / 2.0, hi] {
                for cy in [lo, (lo + hi) / 2.0, hi] {
                    for color_index in [0, 3, 6] {
                        let a = SampleAttributes {
                            center_x: cx,
                            center_y: cy,
                            size,
                            color_index,
                        };
                        for bg in spec.background_range {
                            let img = render_shape(kind, &a, bg, &spec);
                            let (x, y) = foreground_centroid(&img).unwrap();
                            assert!((x - cx).hypot(y - cy) < 1.0, "{kind:?} {a:?}: ({x}, {y})");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn square_area_is_within_antialiasing_tolerance() {
    let spec = ShapesSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let (img, a) = generate_shapes_sample(1, &spec, &mut rng).unwrap();
        // Coverage per pixel from channel 0, between the background (the
        // corner pixel is always outside the margin) and the full color.
        let plane = 32 * 32;
        let fg = from_u8(spec.palette[a.color_index][0]) as f64;
        let corner = img.data()[0] as f64;
        if (fg - corner).abs() < 0.2 {
            continue;
        }
        let covered: f64 = img.data()[0..plane]
            .iter()
            .map(|&v| ((v as f64 - corner) / (fg - corner)).clamp(0.0, 1.0))
            .sum();
        let want = (2.0 * a.size).powi(2);
        assert!((covered - want).abs() <= 0.1 * want, "{covered} vs {want}");
    }
}

#[test]
fn invalid_specs_are_configuration_errors() {
    let too_big = ShapesSpec {
        size_range: [6.0, 12.0],
        ..ShapesSpec::default()
    };
    assert!(matches!(build_shapes_dataset(&too_big), Err(Error::Config(_))));
    let few_colors = ShapesSpec {
        palette: vec![[0, 0, 0]; 5],
        ..ShapesSpec::default()
    };
    assert!(matches!(few_colors.validate(), Err(Error::Config(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        generate_shapes_sample(2, &ShapesSpec::default(), &mut rng),
        Err(Error::Domain(_))
    ));
}

#[test]
fn saved_dataset_has_images_index_and_spec() {
    let spec = ShapesSpec {
        n_per_domain: 10,
        seed: 1,
        ..ShapesSpec::default()
    };
    let ds = build_shapes_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_shapes_dataset(&ds, &spec, dir.path()).unwrap();
    let pngs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 20);
    let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert_eq!(index.lines().next().unwrap(), "filename,domain,center_x,center_y,size,color_index");
    assert_eq!(index.lines().count(), 21);
    let (back, spec_back) = load_shapes_dataset(dir.path()).unwrap();
    assert_eq!(spec_back, spec);
    assert_eq!(back.items, ds.items);
}

fn write_rgb(path: &std::path::Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    let mut img = RgbImage::new(w, h);
    for (x, y, p) in img.enumerate_pixels_mut() {
        *p = Rgb(f(x, y));
    }
    img.save(path).unwrap();
}

#[test]
fn image_folder_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("male"), dir.path().join("female"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    for i in 0..3 {
        write_rgb(&a.join(format!("{i}.png")), 40, 20, |_, _| [255, 255, 255]);
    }
    for i in 0..4 {
        // Left half black, right half white; the center crop keeps both.
        write_rgb(&b.join(format!("{i}.jpg")), 30, 50, |x, _| if x < 15 { [0, 0, 0] } else { [255, 255, 255] });
    }
    std::fs::write(b.join("broken.png"), b"not an image").unwrap();
    let ds = load_image_folder(dir.path(), &[("male".into(), 0), ("female".into(), 1)], 16, 3).unwrap();
    assert_eq!(ds.len(), 7);
    assert_eq!(ds.counts(), vec![3, 4]);
    assert!(ds.items.iter().all(|s| s.image.shape() == [3, 16, 16]));
    assert!(ds.items[..3].iter().all(|s| s.image.data().iter().all(|&v| v == 1.0)));
    match &ds.provenance {
        Provenance::Folder { skipped, .. } => assert_eq!(*skipped, 1),
        p => panic!("unexpected provenance {p:?}"),
    }

    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let err = load_image_folder(dir.path(), &[("male".into(), 0), ("empty".into(), 1)], 16, 3).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn flip_frequency_is_one_half() {
    let settings = AugmentSettings {
        flip_prob: 0.5,
        max_rotation_deg: 0.0,
        max_zoom: 1.0,
    };
    // Asymmetric image: left column bright.
    let mut data = vec![-1.0f32; 8 * 8];
    for y in 0..8 {
        data[y * 8] = 1.0;
    }
    let img = Tensor::from_vec(&[1, 8, 8], data).unwrap();
    let flipped = hflip(&img);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let flips = (0..n)
        .filter(|_| {
            let out = augment(&img, &settings, &mut rng);
            assert!(out == img || out == flipped);
            out == flipped
        })
        .count();
    let f = flips as f64 / n as f64;
    assert!((0.48..=0.52).contains(&f), "flip frequency {f}");
}

#[test]
fn augmentation_is_deterministic_given_the_rng() {
    let settings = AugmentSettings::from_config(&gan_translate::RunConfig::default());
    let ds = build_shapes_dataset(&ShapesSpec {
        n_per_domain: 4,
        ..ShapesSpec::default()
    })
    .unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ds.items.iter().map(|s| augment(&s.image, &settings, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn quantization_round_trip_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::from_vec(&[3, 5, 7], (0..105).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()).unwrap();
    let path = dir.path().join("q.png");
    save_tensor_image(&t, &path).unwrap();
    let back = load_tensor_image(&path, 3).unwrap();
    assert_eq!(back.shape(), t.shape());
    for (a, b) in t.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1.0 / 127.5 + 1e-6);
    }
    assert_eq!(to_u8(-1.0), 0);
    assert_eq!(to_u8(1.0), 255);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_preserves_shape_and_range(
        seed in any::<u64>(),
        c in prop::sample::select(vec![1usize, 3]),
        s in 2usize..12,
        flip in 0.0f64..=1.0,
        rot in 0.0f64..=180.0,
        zoom in 1.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::from_vec(&[c, s, s], (0..c * s * s).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()).unwrap();
        let settings = AugmentSettings { flip_prob: flip, max_rotation_deg: rot, max_zoom: zoom };
        let out = augment(&img, &settings, &mut rng);
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn every_emitted_label_is_valid(seed in any::<u64>(), n in 1usize..6) {
        let ds = build_shapes_dataset(&ShapesSpec { n_per_domain: n, seed, image_size: 16, margin: 1.0, size_range: [2.0, 5.0], ..ShapesSpec::default() }).unwrap();
        prop_assert!(ds.items.iter().all(|s| s.label < 2));
        prop_assert_eq!(ds.counts(), vec![n, n]);
    }
}
