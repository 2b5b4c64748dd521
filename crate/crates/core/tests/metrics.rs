use dlsr_core::data::{synthetic_dataset, Image};
use dlsr_core::losses::LogKernel;
use dlsr_core::metrics::{evaluate_bicubic, hfen, psnr, rgb_to_y, ssim};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(h: usize, w: usize, rng: &mut impl Rng) -> Image {
    Image::new(1, h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn naive_psnr(a: &Image, b: &Image, border: usize) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in border..a.height - border {
        for x in border..a.width - border {
            let d = a.at(0, y, x) - b.at(0, y, x);
            se += d * d;
            n += 1.0;
        }
    }
    10.0 * (n / se).log10()
}

fn naive_ssim(a: &Image, b: &Image) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut win = vec![0.0; 121];
    for i in 0..11 {
        for j in 0..11 {
            win[i * 11 + j] = g[i] * g[j];
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y in 0..=a.height - 11 {
        for x in 0..=a.width - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i * 11 + j] * a.at(0, y + i, x + j);
                    mb += win[i * 11 + j] * b.at(0, y + i, x + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (da, db) = (a.at(0, y + i, x + j) - ma, b.at(0, y + i, x + j) - mb);
                    va += win[i * 11 + j] * da * da;
                    vb += win[i * 11 + j] * db * db;
                    cov += win[i * 11 + j] * da * db;
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

fn naive_hfen(a: &Image, b: &Image, k: &LogKernel) -> f64 {
    let (h, w) = (a.height as isize, a.width as isize);
    let mirror = |i: isize, n: isize| if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut fa, mut fb) = (0.0, 0.0);
            for i in 0..15isize {
                for j in 0..15isize {
                    let sy = mirror(y + i - 7, h) as usize;
                    let sx = mirror(x + j - 7, w) as usize;
                    let kv = k.weights[(i * 15 + j) as usize];
                    fa += kv * a.at(0, sy, sx);
                    fb += kv * b.at(0, sy, sx);
                }
            }
            num += (fa - fb) * (fa - fb);
            den += fb * fb;
        }
    }
    (num / den).sqrt()
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let k = LogKernel::default();
    for _ in 0..20 {
        let (h, w) = (rng.random_range(16..24), rng.random_range(16..24));
        let a = noise(h, w, &mut rng);
        let b = noise(h, w, &mut rng);
        assert!((psnr(&a, &b, 2).unwrap() - naive_psnr(&a, &b, 2)).abs() < 1e-6);
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-6);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((hfen(&a, &b, &k).unwrap() - naive_hfen(&a, &b, &k)).abs() < 1e-6);
    }
}

#[test]
fn luma_matches_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rgb = Image::new(3, 1, 1, vec![rng.random(), rng.random(), rng.random()]).unwrap();
    let y = rgb_to_y(&rgb).unwrap().data[0];
    let expected = (65.481 * rgb.data[0] + 128.553 * rgb.data[1] + 24.966 * rgb.data[2] + 16.0) / 255.0;
    assert!((y - expected).abs() < 1e-7);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = noise(32, 32, &mut rng);
    let base = noise(32, 32, &mut rng);
    let values: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|amp| {
            let b = Image::new(1, 32, 32, a.data.iter().zip(&base.data).map(|(x, n)| x + amp * (n - 0.5)).collect())
                .unwrap();
            psnr(&a, &b, 0).unwrap()
        })
        .collect();
    assert!(values[0] > values[1] && values[1] > values[2]);
}

#[test]
fn ssim_drops_under_pixel_permutation() {
    let img = rgb_to_y(&synthetic_dataset(1, 32, 32, 5)[0]).unwrap();
    let mut shuffled = img.clone();
    shuffled.data.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    assert!(ssim(&img, &shuffled).unwrap() < 1.0);
}

#[test]
fn bicubic_baseline_report_is_finite_and_averaged() {
    let images: Vec<(String, Image)> = synthetic_dataset(3, 40, 40, 8)
        .into_iter()
        .enumerate()
        .map(|(i, img)| (format!("img{}", i), img))
        .collect();
    let report = evaluate_bicubic(&images, 2).unwrap();
    assert_eq!(report.per_image.len(), 3);
    assert!(report.per_image.iter().all(|m| m.psnr.is_finite() && m.psnr > 0.0));
    let mean = report.per_image.iter().map(|m| m.psnr).sum::<f64>() / 3.0;
    assert!((report.mean_psnr - mean).abs() < 1e-12);

    let tiny = vec![("tiny".to_string(), Image::filled(3, 8, 8, 0.5))];
    let report = evaluate_bicubic(&tiny, 2).unwrap();
    assert!(report.per_image.is_empty());
    assert_eq!(report.skipped.len(), 1);
}
