use dlsr_core::data::{
    bicubic_downsample, cubic, sample_patch, split_dataset, synthetic_dataset, BatchStream, Image, SourceImage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct 2-D kernel sum over every (clamped) tap.
fn naive_downsample(img: &Image, s: usize) -> Image {
    let (oh, ow) = (img.height / s, img.width / s);
    let f = 1.0 / s as f64;
    let u = |o: usize| (o + 1) as f64 / f + 0.5 * (1.0 - 1.0 / f);
    let mut out = Image::filled(img.channels, oh, ow, 0.0);
    for c in 0..img.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let (uy, ux) = (u(oy), u(ox));
                let (mut acc, mut norm) = (0.0, 0.0);
                for ty in -20isize..(img.height as isize + 20) {
                    let wy = f * cubic(f * (uy - ty as f64));
                    if wy == 0.0 {
                        continue;
                    }
                    for tx in -20isize..(img.width as isize + 20) {
                        let wx = f * cubic(f * (ux - tx as f64));
                        if wx == 0.0 {
                            continue;
                        }
                        let sy = (ty - 1).clamp(0, img.height as isize - 1) as usize;
                        let sx = (tx - 1).clamp(0, img.width as isize - 1) as usize;
                        acc += wy * wx * img.at(c, sy, sx);
                        norm += wy * wx;
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = acc / norm;
            }
        }
    }
    out
}

#[test]
fn ramp_downsample_matches_kernel_sum() {
    let (h, w) = (12, 18);
    let data = (0..3 * h * w)
        .map(|i| {
            let (y, x) = ((i / w) % h, i % w);
            0.1 + 0.8 * (0.6 * y as f64 / h as f64 + 0.4 * x as f64 / w as f64)
        })
        .collect();
    let ramp = Image::new(3, h, w, data).unwrap();
    for s in [2, 3] {
        let fast = bicubic_downsample(&ramp, s).unwrap();
        let slow = naive_downsample(&ramp, s);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Image::new(3, 8, 8, (0..192).map(|_| rng.random_range(0.2..0.8)).collect()).unwrap();
    let fast = bicubic_downsample(&noise, 4).unwrap();
    let slow = naive_downsample(&noise, 4);
    for (a, b) in fast.data.iter().zip(&slow.data) {
        assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-6);
    }
}

#[test]
fn augmentation_commutes_with_downsampling() {
    let img = &synthetic_dataset(1, 24, 36, 4)[0];
    for s in [2, 3, 4] {
        let lr = bicubic_downsample(img, s).unwrap();
        for code in 0..8 {
            let a = bicubic_downsample(&img.transform(code).unwrap(), s).unwrap();
            let b = lr.transform(code).unwrap();
            assert_eq!((a.height, a.width), (b.height, b.width));
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn patches_are_aligned_and_in_range() {
    let imgs = synthetic_dataset(3, 40, 50, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in [2, 3, 4] {
        let src = SourceImage::new("img", &imgs[0], s).unwrap();
        let patch = 8 * s;
        for _ in 0..50 {
            let (sample, (y, x)) = sample_patch(&src, patch, &mut rng).unwrap();
            assert_eq!((sample.hr.height, sample.lr.height), (patch, patch / s));
            assert_eq!(sample.hr, src.hr.crop(y * s, x * s, patch, patch).unwrap());
            assert_eq!(sample.lr, src.lr.crop(y, x, patch / s, patch / s).unwrap());
            assert!(sample.hr.data.iter().chain(&sample.lr.data).all(|v| (0.0..=1.0).contains(v)));
        }
    }
    let src = SourceImage::new("img", &imgs[1], 2).unwrap();
    let (full, origin) = sample_patch(&src, 40, &mut rng).unwrap();
    assert_eq!(origin.0, 0);
    assert_eq!(full.hr.height, 40);
    assert!(sample_patch(&src, 64, &mut rng).is_err());
    assert!(sample_patch(&src, 31, &mut rng).is_err());
}

fn sources(n: usize) -> Vec<SourceImage> {
    synthetic_dataset(n, 32, 32, 9)
        .iter()
        .enumerate()
        .map(|(i, img)| SourceImage::new(format!("s{}", i), img, 2).unwrap())
        .collect()
}

#[test]
fn batch_stream_is_deterministic_and_epoch_complete() {
    let data = sources(5);
    let mut a = BatchStream::new(5, 2, 16, true, 7).unwrap();
    let mut b = BatchStream::new(5, 2, 16, true, 7).unwrap();
    for _ in 0..10 {
        let (x, y) = (a.next_batch(&data).unwrap(), b.next_batch(&data).unwrap());
        assert_eq!(x.lr, y.lr);
        assert_eq!(x.hr, y.hr);
        assert_eq!(x.lr.shape(), &[2, 3, 8, 8]);
        assert_eq!(x.hr.shape(), &[2, 3, 16, 16]);
    }

    let mut s = BatchStream::new(5, 1, 16, false, 1).unwrap();
    for _ in 0..3 {
        let mut ids: Vec<String> = (0..5).map(|_| s.next_samples(&data).unwrap().remove(0).source_id).collect();
        ids.sort();
        assert_eq!(ids, vec!["s0", "s1", "s2", "s3", "s4"]);
    }
}

#[test]
fn batch_stream_resumes_from_state() {
    let data = sources(4);
    let mut a = BatchStream::new(4, 3, 16, true, 11).unwrap();
    for _ in 0..3 {
        a.next_batch(&data).unwrap();
    }
    let state = a.state();
    let expected: Vec<_> = (0..4).map(|_| a.next_batch(&data).unwrap().hr).collect();
    let mut b = BatchStream::new(4, 3, 16, true, 999).unwrap();
    b.restore(&state).unwrap();
    let got: Vec<_> = (0..4).map(|_| b.next_batch(&data).unwrap().hr).collect();
    assert_eq!(expected, got);
}

#[test]
fn split_is_disjoint_exhaustive_and_seeded() {
    let (t, v) = split_dataset(20, 0.75, 5).unwrap();
    let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
    all.sort();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
    assert_eq!(split_dataset(20, 0.75, 5).unwrap(), (t, v));
}
