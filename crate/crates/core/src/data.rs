//! Images, bicubic degradation, patch sampling, augmentation and batching.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar RGB (or single-channel) image with values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major, then row-major.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::LengthMismatch {
                what: "image data",
                expected: channels * height * width,
                got: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: alloc::vec![value; channels * height * width],
        }
    }

    /// Interleaved 8-bit RGB to [0, 1] planar.
    pub fn from_rgb8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::LengthMismatch {
                what: "rgb8 pixels",
                expected: 3 * width * height,
                got: pixels.len(),
            });
        }
        let plane = width * height;
        let mut data = alloc::vec![0.0; 3 * plane];
        for (p, px) in pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = px[c] as f64 / 255.0;
            }
        }
        Self::new(3, height, width, data)
    }

    /// Interleaved 8-bit RGB, clamped and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                let v = self.data[(c % self.channels) * plane + p];
                out.push(libm::round(v.clamp(0.0, 1.0) * 255.0) as u8);
            }
        }
        out
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// As a `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Sample `n` of an `N×C×H×W` tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Self {
        let [_, c, h, w] = t.dims4();
        Self {
            channels: c,
            height: h,
            width: w,
            data: t.sample(n).into_data(),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::TooSmall(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                height, width, y0, x0, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in y0..y0 + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        Self::new(self.channels, height, width, data)
    }

    /// Crops the bottom/right so both extents are multiples of `scale`.
    pub fn mod_crop(&self, scale: usize) -> Result<Self> {
        self.crop(0, 0, self.height - self.height % scale, self.width - self.width % scale)
    }

    /// Dihedral transform: horizontal flip when `code & 4`, then `code & 3`
    /// counter-clockwise quarter turns.
    pub fn transform(&self, code: u8) -> Result<Self> {
        if code > 7 {
            return Err(Error::InvalidArgument(format!("augmentation code {} is outside 0..=7", code)));
        }
        let mut img = self.clone();
        if code & 4 != 0 {
            img = img.remap(img.height, img.width, |y, x| (y, img.width - 1 - x));
        }
        for _ in 0..code & 3 {
            // counter-clockwise: out(y, x) = in(x, W - 1 - y)
            let w = img.width;
            img = img.remap(img.width, img.height, |y, x| (x, w - 1 - y));
        }
        Ok(img)
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let (sy, sx) = src(y, x);
                    data.push(self.at(c, sy, sx));
                }
            }
        }
        Self {
            channels: self.channels,
            height,
            width,
            data,
        }
    }
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Source indices and normalized weights of each output sample along one
/// axis. Downscaling widens the kernel by the inverse factor (antialiasing).
/// Indices beyond the edges are clamped.
pub fn resize_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let factor = output as f64 / input as f64;
    let stretch = if factor < 1.0 { factor } else { 1.0 };
    let support = 4.0 / stretch;
    let taps = libm::ceil(support) as isize + 2;
    (1..=output)
        .map(|o| {
            let u = o as f64 / factor + 0.5 * (1.0 - 1.0 / factor);
            let left = libm::floor(u - support / 2.0) as isize;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(taps as usize);
            for t in 0..taps {
                let idx = left + t;
                let w = stretch * cubic(stretch * (u - idx as f64));
                if w == 0.0 {
                    continue;
                }
                let clamped = (idx - 1).clamp(0, input as isize - 1) as usize;
                match row.iter_mut().find(|(i, _)| *i == clamped) {
                    Some(entry) => entry.1 += w,
                    None => row.push((clamped, w)),
                }
            }
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= total);
            row
        })
        .collect()
}

/// Separable bicubic resampling to `height × width`, clamped to [0, 1].
pub fn bicubic_resize(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 || img.height == 0 || img.width == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty image".into()));
    }
    let wx = resize_weights(img.width, width);
    let wy = resize_weights(img.height, height);
    let mut out = Vec::with_capacity(img.channels * height * width);
    let mut rows = alloc::vec![0.0; img.height * width];
    for c in 0..img.channels {
        let plane = img.plane(c);
        for y in 0..img.height {
            let src = &plane[y * img.width..(y + 1) * img.width];
            for (x, taps) in wx.iter().enumerate() {
                rows[y * width + x] = taps.iter().map(|&(i, w)| w * src[i]).sum();
            }
        }
        for taps in &wy {
            for x in 0..width {
                let v: f64 = taps.iter().map(|&(i, w)| w * rows[i * width + x]).sum();
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image::new(img.channels, height, width, out)
}

pub fn bicubic_downsample(img: &Image, scale: usize) -> Result<Image> {
    if scale == 0 || img.height % scale != 0 || img.width % scale != 0 {
        return Err(Error::NotDivisible {
            dim: if scale != 0 && img.height % scale != 0 { img.height } else { img.width },
            divisor: scale,
        });
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    bicubic_resize(img, img.height / scale, img.width / scale)
}

pub fn bicubic_upsample(img: &Image, scale: usize) -> Result<Image> {
    if scale == 1 {
        return Ok(img.clone());
    }
    bicubic_resize(img, img.height * scale, img.width * scale)
}

/// An HR image cropped to a multiple of the scale, with its LR counterpart.
#[derive(Clone, Debug)]
pub struct SourceImage {
    pub id: String,
    pub hr: Image,
    pub lr: Image,
    pub scale: usize,
}

impl SourceImage {
    pub fn new(id: impl Into<String>, hr: &Image, scale: usize) -> Result<Self> {
        if hr.channels != 3 {
            return Err(Error::ShapeMismatch(format!("expected an RGB image, got {} channels", hr.channels)));
        }
        let hr = hr.mod_crop(scale)?;
        let lr = bicubic_downsample(&hr, scale)?;
        Ok(Self {
            id: id.into(),
            hr,
            lr,
            scale,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SrSample {
    pub hr: Image,
    pub lr: Image,
    pub source_id: String,
}

impl SrSample {
    /// The same dihedral transform applied to both images.
    pub fn augment(&self, code: u8) -> Result<Self> {
        Ok(Self {
            hr: self.hr.transform(code)?,
            lr: self.lr.transform(code)?,
            source_id: self.source_id.clone(),
        })
    }
}

/// Uniform crop aligned on the LR grid. Returns the sample and the LR
/// origin `(y, x)`.
pub fn sample_patch(src: &SourceImage, hr_patch: usize, rng: &mut impl Rng) -> Result<(SrSample, (usize, usize))> {
    let s = src.scale;
    if hr_patch == 0 || hr_patch % s != 0 {
        return Err(Error::NotDivisible { dim: hr_patch, divisor: s });
    }
    let p = hr_patch / s;
    if src.lr.height < p || src.lr.width < p {
        return Err(Error::TooSmall(format!(
            "{} is {}x{}, smaller than the {}x{} patch",
            src.id, src.hr.height, src.hr.width, hr_patch, hr_patch
        )));
    }
    let y = rng.random_range(0..=src.lr.height - p);
    let x = rng.random_range(0..=src.lr.width - p);
    let sample = SrSample {
        hr: src.hr.crop(y * s, x * s, hr_patch, hr_patch)?,
        lr: src.lr.crop(y, x, p, p)?,
        source_id: src.id.clone(),
    };
    Ok((sample, (y, x)))
}

/// A training batch as `N×3×h×w` (LR) and `N×3×H×W` (HR) tensors.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[SrSample]) -> Self {
        let lr: Vec<Tensor> = samples.iter().map(|s| s.lr.to_tensor()).collect();
        let hr: Vec<Tensor> = samples.iter().map(|s| s.hr.to_tensor()).collect();
        Self {
            lr: Tensor::stack(&lr),
            hr: Tensor::stack(&hr),
        }
    }
}

/// Resumable position of a [`BatchStream`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreamState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
}

/// Endless shuffled patch batches: each epoch visits every source image
/// once in a fresh random order.
#[derive(Clone, Debug)]
pub struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    pub batch_size: usize,
    pub hr_patch: usize,
    pub augment: bool,
}

impl BatchStream {
    pub fn new(num_images: usize, batch_size: usize, hr_patch: usize, augment: bool, seed: u64) -> Result<Self> {
        if num_images == 0 {
            return Err(Error::InvalidArgument("batch stream needs at least one image".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut stream = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..num_images).collect(),
            cursor: 0,
            epoch: 0,
            batch_size,
            hr_patch,
            augment,
        };
        stream.order.shuffle(&mut stream.rng);
        Ok(stream)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn next_samples(&mut self, images: &[SourceImage]) -> Result<Vec<SrSample>> {
        if images.len() != self.order.len() {
            return Err(Error::LengthMismatch {
                what: "dataset images",
                expected: self.order.len(),
                got: images.len(),
            });
        }
        let mut samples = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let i = self.next_index();
            let (mut sample, _) = sample_patch(&images[i], self.hr_patch, &mut self.rng)?;
            if self.augment {
                let code = self.rng.random_range(0..8u8);
                sample = sample.augment(code)?;
            }
            samples.push(sample);
        }
        Ok(samples)
    }

    pub fn next_batch(&mut self, images: &[SourceImage]) -> Result<Batch> {
        Ok(Batch::from_samples(&self.next_samples(images)?))
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.rng.get_seed(),
            word_pos: self.rng.get_word_pos(),
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
        }
    }

    pub fn restore(&mut self, state: &StreamState) -> Result<()> {
        if state.order.len() != self.order.len() || state.cursor > state.order.len() {
            return Err(Error::InvalidArgument("batch stream state does not fit this dataset".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_word_pos(state.word_pos);
        self.rng = rng;
        self.order = state.order.clone();
        self.cursor = state.cursor;
        self.epoch = state.epoch;
        Ok(())
    }
}

/// Deterministic disjoint split of `0..n` into (train, valid) index lists,
/// each sorted. The train side gets `round(n · fraction)` items.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {} must lie in (0, 1)", train_fraction)));
    }
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "splitting {} items at {} leaves an empty side",
            n, train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut valid = idx.split_off(n_train);
    idx.sort_unstable();
    valid.sort_unstable();
    Ok((idx, valid))
}

/// Procedural RGB test image: a smooth background with rectangles, discs
/// and oriented stripe patches, so it has both flat regions and sharp
/// high-frequency structure.
pub fn synthetic_image(height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let plane = height * width;
    let mut data = alloc::vec![0.0; 3 * plane];
    let base: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let grad: [f64; 3] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    for y in 0..height {
        for x in 0..width {
            let t = (x + y) as f64 / (height + width) as f64;
            for c in 0..3 {
                data[c * plane + y * width + x] = base[c] + grad[c] * (t - 0.5);
            }
        }
    }
    let shapes = rng.random_range(4..9);
    for _ in 0..shapes {
        let color: [f64; 3] = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(3.0..(height as f64 / 3.0).max(4.0));
        let rx = rng.random_range(3.0..(width as f64 / 3.0).max(4.0));
        let kind = rng.random_range(0..3);
        let period = rng.random_range(2.5..7.0);
        let angle = rng.random_range(0.0..core::f64::consts::PI);
        let (sa, ca) = (libm::sin(angle), libm::cos(angle));
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let inside = match kind {
                    0 => dy.abs() <= ry && dx.abs() <= rx,
                    1 => (dy / ry) * (dy / ry) + (dx / rx) * (dx / rx) <= 1.0,
                    _ => {
                        let phase = (dx * ca + dy * sa) / period;
                        dy.abs() <= ry && dx.abs() <= rx && libm::floor(phase) as i64 % 2 == 0
                    }
                };
                if inside {
                    for c in 0..3 {
                        data[c * plane + y * width + x] = color[c];
                    }
                }
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image {
        channels: 3,
        height,
        width,
        data,
    }
}

/// `count` synthetic images from one seed.
pub fn synthetic_dataset(count: usize, height: usize, width: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(height, width, &mut rng)).collect()
}
