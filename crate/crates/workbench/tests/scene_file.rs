use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supersplat::appearance::{Appearance, ShCoefficients};
use supersplat::gradcheck::randomize_appearance;
use supersplat::{Scene, Surfel, SurfelGeometry, VariantSpec};
use workbench::scene_file::{decode_scene, encode_scene, load_scene, save_scene, FORMAT_VERSION};
use workbench::WorkbenchError;

fn random_scene(spec: &str, n: usize, seed: u64) -> Scene {
    let spec: VariantSpec = spec.parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Scene::new(
        (0..n)
            .map(|_| {
                let mut sh = ShCoefficients::zeros(3);
                for c in sh.coeffs_mut().iter_mut().flatten() {
                    *c = rng.gen_range(-1.0..1.0) * 1e3f64.powf(rng.gen_range(-3.0..1.0));
                }
                let mut appearance = Appearance::initial(&spec, 0.3, &mut rng);
                randomize_appearance(&mut appearance, &mut rng);
                Surfel {
                    geometry: SurfelGeometry::new(
                        Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                        UnitQuaternion::from_euler_angles(rng.gen(), rng.gen(), rng.gen()),
                        [rng.gen_range(1e-3..2.0), rng.gen_range(1e-3..2.0)],
                    ),
                    sh,
                    appearance,
                }
            })
            .collect(),
    )
}

#[test]
fn empty_scene_round_trip() {
    let bytes = encode_scene(&Scene::default()).unwrap();
    assert_eq!(&bytes[..4], b"SGS1");
    assert_eq!(decode_scene(&bytes).unwrap(), Scene::default());
}

#[test]
fn random_scenes_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in ["mk", "mk-sigmoid", "mk8", "constant", "bilinear", "mlp"].iter().enumerate() {
        let scene = random_scene(spec, 100, i as u64);
        let path = dir.path().join(format!("{spec}.sgs"));
        save_scene(&path, &scene).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back, scene, "{spec}");
        for (a, b) in back.surfels.iter().zip(&scene.surfels) {
            let bits = |s: &Surfel| s.to_flat().into_iter().map(f64::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = encode_scene(&random_scene("mk", 3, 9)).unwrap();
    for cut in [0, 10, 27, 28, bytes.len() - 1] {
        assert!(matches!(decode_scene(&bytes[..cut]), Err(WorkbenchError::SceneFormat(_))), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_scene(&extra).is_err());

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_scene(&magic).unwrap_err().to_string().contains("magic"));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(decode_scene(&version).unwrap_err().to_string().contains("version"));

    let mut tag = bytes.clone();
    tag[8] = 9;
    assert!(decode_scene(&tag).is_err());

    let mut huge = bytes;
    huge[20..28].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(decode_scene(&huge).is_err());
}

#[test]
fn non_finite_scenes_are_not_written() {
    let mut scene = random_scene("bilinear", 2, 1);
    scene.surfels[1].geometry.log_scale[0] = f64::INFINITY;
    assert!(encode_scene(&scene).is_err());
}
