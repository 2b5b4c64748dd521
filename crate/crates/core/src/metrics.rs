//! Y-channel PSNR and SSIM, the HFEN metric, evaluation reports and
//! scatter-plot rows.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{bicubic_downsample, bicubic_upsample, Image};
use crate::error::{Error, Result};
use crate::losses::LogKernel;

/// BT.601 studio-swing luma of an RGB image in [0, 1].
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::ShapeMismatch(format!("expected RGB, got {} channels", img.channels)));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..r.len())
        .map(|i| (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0)
        .collect();
    Image::new(1, img.height, img.width, data)
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )));
    }
    Ok(())
}

/// Removes `border` pixels from every side.
pub fn shave(img: &Image, border: usize) -> Result<Image> {
    if 2 * border >= img.height || 2 * border >= img.width {
        return Err(Error::TooSmall(format!(
            "border {} leaves nothing of a {}x{} image",
            border, img.height, img.width
        )));
    }
    img.crop(border, border, img.height - 2 * border, img.width - 2 * border)
}

/// `10·log10(1 / MSE)` after shaving `border` pixels per side. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, border: usize) -> Result<f64> {
    check_pair(a, b)?;
    let (a, b) = (shave(a, border)?, shave(b, border)?);
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * libm::log10(mse) })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows of a single-channel
/// pair with dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    if a.channels != 1 {
        return Err(Error::ShapeMismatch(format!("SSIM expects one channel, got {}", a.channels)));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {}x{}, got {}x{}",
            SSIM_WINDOW, SSIM_WINDOW, a.height, a.width
        )));
    }
    let (h, w) = (a.height, a.width);
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&a.data, h, w, &k);
    let mu_b = filter_valid(&b.data, h, w, &k);
    let aa = filter_valid(&sq(&a.data, &a.data), h, w, &k);
    let bb = filter_valid(&sq(&b.data, &b.data), h, w, &k);
    let ab = filter_valid(&sq(&a.data, &b.data), h, w, &k);
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// LoG response of a single-channel image with reflection padding.
pub fn log_response(img: &Image, kernel: &LogKernel) -> Result<Vec<f64>> {
    let (h, w, k) = (img.height, img.width, kernel.size);
    if h < k || w < k {
        return Err(Error::TooSmall(format!("image {}x{} is smaller than the {}x{} LoG kernel", h, w, k, k)));
    }
    let half = (k / 2) as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        (if i < 0 {
            -i
        } else if i >= n {
            2 * n - 2 - i
        } else {
            i
        }) as usize
    };
    let mut out = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..k {
                    let sy = reflect(y as isize + ky as isize - half, h);
                    for kx in 0..k {
                        let sx = reflect(x as isize + kx as isize - half, w);
                        acc += kernel.weights[ky * k + kx] * plane[sy * w + sx];
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(out)
}

/// `‖LoG(a) − LoG(b)‖₂ / ‖LoG(b)‖₂`, with `b` the reference.
pub fn hfen(a: &Image, b: &Image, kernel: &LogKernel) -> Result<f64> {
    check_pair(a, b)?;
    let la = log_response(a, kernel)?;
    let lb = log_response(b, kernel)?;
    let diff = libm::sqrt(la.iter().zip(&lb).map(|(x, y)| (x - y) * (x - y)).sum());
    let norm = libm::sqrt(lb.iter().map(|v| v * v).sum());
    Ok(if diff == 0.0 {
        0.0
    } else if norm == 0.0 {
        f64::INFINITY
    } else {
        diff / norm
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub hfen: f64,
}

/// Y-channel metrics of `sr` against `hr`, shaving `border` pixels.
pub fn image_metrics(name: &str, sr: &Image, hr: &Image, border: usize, kernel: &LogKernel) -> Result<ImageMetrics> {
    let sy = shave(&rgb_to_y(sr)?, border)?;
    let hy = shave(&rgb_to_y(hr)?, border)?;
    Ok(ImageMetrics {
        name: name.into(),
        psnr: psnr(&sy, &hy, 0)?,
        ssim: ssim(&sy, &hy)?,
        hfen: hfen(&sy, &hy, kernel)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexitySummary {
    pub params: u64,
    pub multiadds: u64,
    pub hr_dims: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub scale: usize,
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_hfen: f64,
    pub complexity: Option<ComplexitySummary>,
    /// Inputs that could not be evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(scale: usize, per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        Self {
            scale,
            mean_psnr: mean(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            mean_hfen: mean(|m| m.hfen),
            per_image,
            complexity: None,
            skipped: Vec::new(),
        }
    }
}

/// Downsamples each HR image, super-resolves it with `upscale`, clamps the
/// result to [0, 1] and scores it on Y with a `scale`-pixel border shave.
/// Images the model cannot process are recorded as skipped.
pub fn evaluate_images(
    images: &[(String, Image)],
    scale: usize,
    mut upscale: impl FnMut(&Image) -> Result<Image>,
) -> Result<EvalReport> {
    let kernel = LogKernel::default();
    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    for (name, hr) in images {
        let result = (|| {
            let hr = hr.mod_crop(scale)?;
            let lr = bicubic_downsample(&hr, scale)?;
            let mut sr = upscale(&lr)?;
            sr.clamp01();
            image_metrics(name, &sr, &hr, scale, &kernel)
        })();
        match result {
            Ok(m) => per_image.push(m),
            Err(e) => skipped.push((name.clone(), format!("{}", e))),
        }
    }
    let mut report = EvalReport::new(scale, per_image);
    report.skipped = skipped;
    Ok(report)
}

/// The bicubic-upsampling baseline.
pub fn evaluate_bicubic(images: &[(String, Image)], scale: usize) -> Result<EvalReport> {
    evaluate_images(images, scale, |lr| bicubic_upsample(lr, scale))
}

/// One point of the params / Multi-Adds / PSNR scatter.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScatterRow {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(rename = "params_K"))]
    pub params_k: f64,
    #[cfg_attr(feature = "serde", serde(rename = "multiadds_G"))]
    pub multiadds_g: f64,
    #[cfg_attr(feature = "serde", serde(rename = "psnr_dB"))]
    pub psnr_db: f64,
}

impl ScatterRow {
    pub fn new(name: &str, params_k: f64, multiadds_g: f64, psnr_db: f64) -> Self {
        Self {
            name: name.into(),
            params_k,
            multiadds_g,
            psnr_db,
        }
    }
}

/// Published Set5 results of lightweight models (params K, Multi-Adds G at
/// 720p, PSNR dB). They are reference values only and are not reproduced by
/// this crate.
pub fn reference_rows() -> Vec<ScatterRow> {
    [
        ("CARN-M x2", 412.0, 91.2, 37.53),
        ("FALSR-B x2", 326.0, 74.7, 37.61),
        ("ESRN-V x2", 324.0, 73.4, 37.85),
        ("PAN x2", 261.0, 70.5, 38.00),
        ("RFDN x2", 534.0, 123.0, 38.05),
        ("DLSR x2", 322.0, 68.1, 38.04),
        ("CARN-M x3", 412.0, 46.1, 33.99),
        ("ESRN-V x3", 324.0, 36.2, 34.23),
        ("PAN x3", 261.0, 39.0, 34.40),
        ("RFDN x3", 541.0, 55.4, 34.41),
        ("DLSR x3", 329.0, 30.9, 34.49),
        ("CARN-M x4", 412.0, 32.5, 31.92),
        ("ESRN-V x4", 324.0, 20.7, 31.99),
        ("PAN x4", 272.0, 28.2, 32.13),
        ("RFDN x4", 550.0, 31.6, 32.24),
        ("DLSR x4", 338.0, 17.9, 32.33),
    ]
    .iter()
    .map(|&(n, p, m, q)| ScatterRow::new(n, p, m, q))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_offsets() {
        let black = Image::filled(3, 2, 2, 0.0);
        let white = Image::filled(3, 2, 2, 1.0);
        assert!((rgb_to_y(&black).unwrap().data[0] - 16.0 / 255.0).abs() < 1e-12);
        assert!((rgb_to_y(&white).unwrap().data[0] - 235.0 / 255.0).abs() < 1e-3);
    }

    #[test]
    fn psnr_of_constant_offset() {
        let a = Image::filled(1, 8, 8, 0.0);
        let b = Image::filled(1, 8, 8, 0.1);
        assert!((psnr(&a, &b, 2).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, 4).is_err());
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let a = Image::new(1, 12, 13, (0..156).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect()).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let small = Image::filled(1, 10, 20, 0.5);
        assert!(ssim(&small, &small).is_err());
    }
}
