use std::fs;

use klr_core::io::{self, VolumeData};
use klr_core::kernel::{kpca_fit_normalized, KernelParams};
use klr_core::phantom::{generate_phantom, PhantomSpec};
use klr_core::sampling::{generate_vd_mask, MaskSpec};
use klr_core::{Complex, Error};
use nalgebra::DMatrix;
use ndarray::{arr2, Array3, ArrayD, IxDyn};
use proptest::prelude::*;

fn header(dtype: u8, dims: &[u32]) -> Vec<u8> {
    let mut b = b"KLRVOL01".to_vec();
    b.push(dtype);
    b.push(dims.len() as u8);
    for d in dims {
        b.extend(d.to_le_bytes());
    }
    b
}

#[test]
fn complex_layout_matches_hand_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.vol");
    let a = ArrayD::from_shape_fn(IxDyn(&[2, 1, 1, 2]), |ix| Complex::new(ix[0] as f32 + 0.5, ix[3] as f32));
    io::write_container(&p, &VolumeData::C64(a)).unwrap();
    let mut want = header(1, &[2, 1, 1, 2]);
    for (re, im) in [(0.5f32, 0.0f32), (0.5, 1.0), (1.5, 0.0), (1.5, 1.0)] {
        want.extend(re.to_le_bytes());
        want.extend(im.to_le_bytes());
    }
    assert_eq!(fs::read(&p).unwrap(), want);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.vol");

    let mut bytes = header(0, &[2, 2]);
    bytes[..8].copy_from_slice(b"XXXXXX00");
    bytes.extend([0u8; 16]);
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(io::read_container(&p), Err(Error::BadMagic { .. })));

    let mut bytes = header(0, &[3, 3]);
    bytes.extend([0u8; 4 * 8]);
    fs::write(&p, &bytes).unwrap();
    match io::read_container(&p) {
        Err(Error::Truncated { expected, found, .. }) => assert!(expected > found),
        other => panic!("expected truncation, got {other:?}"),
    }

    let mut bytes = header(9, &[1]);
    bytes.extend([0u8; 4]);
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(io::read_container(&p), Err(Error::BadDtype { code: 9, .. })));

    fs::write(&p, header(2, &[u32::MAX, u32::MAX])).unwrap();
    assert!(matches!(io::read_container(&p), Err(Error::DimsOverflow { .. })));

    let mut bytes = header(2, &[2]);
    bytes.extend([1u8, 0, 7]);
    fs::write(&p, &bytes).unwrap();
    assert!(io::read_container(&p).is_err());
}

#[test]
fn dwi_round_trip_is_byte_identical_and_keeps_sidecar() {
    let ph = generate_phantom(&PhantomSpec::<f64> { nx: 32, ny: 32, nz: 2, n_directions: 6, noise_sigma: 0.05, seed: 4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.vol"), dir.path().join("b.vol"));
    io::write_dwi(&a, &ph.truth).unwrap();
    let back = io::read_dwi(&a).unwrap();
    io::write_dwi(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(back.gtab(), ph.truth.gtab());
    assert!(io::sidecar_path(&a).exists());
    let json: serde_json::Value = serde_json::from_slice(&fs::read(io::sidecar_path(&a)).unwrap()).unwrap();
    assert_eq!(json["bvalues"].as_array().unwrap().len(), 7);
    assert_eq!(json["directions"].as_array().unwrap().len(), 7);
    let max_dev = ph.truth.data().iter().zip(back.data()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(max_dev < 1e-6, "f32 storage error {max_dev}");
}

#[test]
fn mask_and_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let shape = "32x32x1x8".parse().unwrap();
    let mask = generate_vd_mask(shape, &MaskSpec { af: 4.0, per_direction: true, seed: 9, ..MaskSpec::default() }).unwrap();
    let p = dir.path().join("m.vol");
    io::write_mask(&p, &mask).unwrap();
    assert_eq!(io::read_mask(&p).unwrap().pattern(), mask.pattern());

    let x = DMatrix::from_fn(5, 12, |i, j| 0.2 + ((i * 7 + j * 3) % 11) as f64 / 11.0);
    let model = kpca_fit_normalized(&x, KernelParams::new(0.5, 3).unwrap(), 4).unwrap();
    let p = dir.path().join("model.vol");
    io::write_kernel_model(&p, &model).unwrap();
    let back = io::read_kernel_model(&p).unwrap();
    assert_eq!(back.effective_rank(), model.effective_rank());
    assert_eq!(back.params(), model.params());
    let probe = DMatrix::from_fn(5, 3, |i, j| 0.3 + 0.1 * (i + j) as f64);
    assert_eq!(back.denoise_batch(&probe).unwrap().0, model.denoise_batch(&probe).unwrap().0);
}

#[test]
fn png_pixels_follow_window() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    io::export_png(arr2(&[[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]]).view(), &p, (0.0, 1.0)).unwrap();
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (2, 2));
    assert_eq!(&buf[..4], &[0, 85, 170, 255]);

    io::export_png(arr2(&[[-5.0, 0.5], [0.5, 9.0]]).view(), &p, (0.0, 1.0)).unwrap();
    let mut reader = png::Decoder::new(std::io::BufReader::new(fs::File::open(&p).unwrap())).read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    reader.next_frame(&mut buf).unwrap();
    assert_eq!(&buf[..4], &[0, 128, 128, 255]);

    assert!(io::export_png(arr2(&[[f64::NAN]]).view(), &p, (0.0, 1.0)).is_err());
    assert!(io::export_png(arr2(&[[0.0]]).view(), &p, (1.0, 1.0)).is_err());
    let rgb = Array3::from_shape_fn((2, 3, 3), |(i, j, c)| (i + j + c) as f64 / 6.0);
    io::export_png_rgb(rgb.view(), dir.path().join("c.png"), (0.0, 1.0)).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_complex_volumes_rewrite_identically(dims in proptest::collection::vec(1usize..5, 4), seed in any::<u32>()) {
        let n: usize = dims.iter().product();
        let vals: Vec<Complex<f32>> = (0..n)
            .map(|i| {
                let h = (i as u32).wrapping_mul(2654435761).wrapping_add(seed);
                Complex::new(h as f32 / u32::MAX as f32 - 0.5, (h.rotate_left(13) as f32).sin())
            })
            .collect();
        let a = ArrayD::from_shape_vec(IxDyn(&dims), vals).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("p.vol"), dir.path().join("q.vol"));
        io::write_container(&p, &VolumeData::C64(a.clone())).unwrap();
        let back = io::read_container(&p).unwrap();
        prop_assert_eq!(&back, &VolumeData::C64(a));
        io::write_container(&q, &back).unwrap();
        prop_assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }
}
