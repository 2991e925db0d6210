use proptest::prelude::*;
use sgbnet_core::data::{extract_sketch, generate_mask, generate_scene, training_sample, MaskSpec, SyntheticScene};
use sgbnet_core::ppm::{decode_ppm, encode_ppm};
use sgbnet_core::rng::{rng_from, uniform};
use sgbnet_core::{read_image, write_image};

fn edge_pixels(scene: &SyntheticScene) -> Vec<usize> {
    (0..scene.true_edges.len()).filter(|&i| scene.true_edges.data()[i] == 1.0).collect()
}

#[test]
fn contours_are_present_but_sparse() {
    for size in [32, 64] {
        for seed in 0..40 {
            let scene = generate_scene(size, 3, seed).unwrap();
            let count = edge_pixels(&scene).len();
            assert!(count > 0, "size {size} seed {seed}: no contour");
            assert!((count as f64) < 0.2 * (size * size) as f64, "size {size} seed {seed}: {count} contour pixels");
        }
    }
}

#[test]
fn every_edge_pixel_separates_two_colors() {
    for seed in 0..20 {
        let size = 32;
        let scene = generate_scene(size, 3, seed).unwrap();
        for i in edge_pixels(&scene) {
            let (y, x) = (i / size, i % size);
            let mine = scene.labels[i];
            let neighbours = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            let differs = neighbours.iter().any(|&(ny, nx)| {
                ny < size && nx < size && {
                    let other = scene.labels[ny * size + nx];
                    other != mine && scene.region_colors[other] != scene.region_colors[mine]
                }
            });
            assert!(differs, "seed {seed}: edge pixel ({y}, {x}) has no differently colored neighbour");
        }
    }
}

#[test]
fn sketches_cover_true_contours() {
    let size = 64;
    for seed in 0..20 {
        let scene = generate_scene(size, 3, seed).unwrap();
        let sketch = extract_sketch(&scene.image).unwrap();
        let on = |y: isize, x: isize| {
            y >= 0
                && x >= 0
                && (y as usize) < size
                && (x as usize) < size
                && sketch.data()[y as usize * size + x as usize] == 1.0
        };
        let edges = edge_pixels(&scene);
        let near = edges
            .iter()
            .filter(|&&i| {
                let (y, x) = ((i / size) as isize, (i % size) as isize);
                (-1..=1).any(|dy| (-1..=1).any(|dx| on(y + dy, x + dx)))
            })
            .count();
        assert!(near as f64 >= 0.9 * edges.len() as f64, "seed {seed}: {near}/{}", edges.len());
    }
}

#[test]
fn mask_fraction_over_many_seeds() {
    for size in [32, 64] {
        for seed in 0..100 {
            let m = generate_mask(&MaskSpec::for_size(size, seed), size).unwrap();
            assert!(m.is_binary());
            let frac = m.data().iter().sum::<f64>() / m.len() as f64;
            assert!((0.05..=0.5).contains(&frac), "size {size} seed {seed}: {frac}");
        }
    }
}

#[test]
fn controls_stay_in_the_hole_and_sparse() {
    let size = 64;
    for seed in 0..30 {
        let s = training_sample(size, 3, seed).unwrap();
        assert!(s.sketch.is_binary());
        let plane = size * size;
        let hole = s.mask.data().iter().filter(|&&m| m == 1.0).count();
        let mut stroke = 0;
        for p in 0..plane {
            let colored = (0..3).any(|c| s.color.data()[c * plane + p] != 0.0);
            if s.mask.data()[p] == 0.0 {
                assert!(!colored, "seed {seed}: color outside the hole");
                assert_eq!(s.sketch.data()[p], 0.0);
            }
            stroke += usize::from(colored);
        }
        assert!(stroke as f64 <= 0.1 * hole as f64, "seed {seed}: {stroke} stroke pixels for {hole} hole pixels");
    }
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let a = training_sample(32, 3, 77).unwrap();
    let b = training_sample(32, 3, 77).unwrap();
    for (x, y) in [(&a.target, &b.target), (&a.mask, &b.mask), (&a.sketch, &b.sketch), (&a.color, &b.color)] {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_ne!(a.target, training_sample(32, 3, 78).unwrap().target);
}

#[test]
fn golden_file_decodes_exactly() {
    let img = read_image(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_2x2.ppm")).unwrap();
    assert_eq!(img.shape(), [1, 3, 2, 2]);
    let half = 128.0 / 255.0;
    #[rustfmt::skip]
    let want = [
        1.0, 0.0, 0.0, 1.0,   // red plane
        0.0, half, 0.0, 1.0,  // green plane
        0.0, 0.0, 1.0, 1.0,   // blue plane
    ];
    assert_eq!(img.data(), want.as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_ppm(&bytes);
        let mut with_magic = b"P6 ".to_vec();
        with_magic.extend(&bytes);
        let _ = decode_ppm(&with_magic);
    }

    #[test]
    fn file_roundtrip_within_quantization(h in 1usize..=9, w in 1usize..=9, seed in any::<u64>()) {
        let img = uniform([1, 3, h, w], 0.0, 1.0, &mut rng_from(seed, &[]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        prop_assert!(img.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0));
        // re-encoding a decoded image is lossless
        prop_assert_eq!(encode_ppm(&back).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn non_image_bytes_are_errors() {
    for bytes in [&b""[..], b"P5\n1 1\n255\n\0", b"P6\n2 2\n255\nabc", b"\x89PNG\r\n", b"P6\n1 1\n65535\n\0\0\0\0\0\0"]
    {
        assert!(decode_ppm(bytes).is_err(), "{bytes:?}");
    }
}
