//! 8-bit RGB image files and dataset assembly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use dlsr_core::data::{split_dataset, synthetic_dataset, Image, SourceImage};

use crate::config::DatasetConfig;

pub const IMAGE_EXTENSIONS: [&str; 2] = ["png", "bmp"];

pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("cannot decode {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_rgb8(w as usize, h as usize, img.as_raw())?)
}

/// Writes an RGB image, rounding to 8 bits; the format follows the extension.
pub fn save_rgb(path: &Path, img: &Image) -> Result<()> {
    ensure!(img.channels == 3, "expected an RGB image, got {} channels", img.channels);
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8()).context("image size")?;
    buf.save(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Named HR images plus the files that could not be read.
pub struct LoadedImages {
    pub images: Vec<(String, Image)>,
    pub skipped: Vec<(String, String)>,
}

pub fn load_dir(dir: &Path) -> Result<LoadedImages> {
    let mut out = LoadedImages {
        images: Vec::new(),
        skipped: Vec::new(),
    };
    for path in list_images(dir)? {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        match load_rgb(&path) {
            Ok(img) => out.images.push((name, img)),
            Err(e) => {
                log::warn!("skipping {}: {:#}", path.display(), e);
                out.skipped.push((name, format!("{:#}", e)));
            }
        }
    }
    Ok(out)
}

/// HR images described by `cfg`, unreadable files excluded.
pub fn dataset_images(cfg: &DatasetConfig) -> Result<LoadedImages> {
    match &cfg.hr_dir {
        Some(dir) => load_dir(dir),
        None => {
            let s = &cfg.synthetic;
            let images = synthetic_dataset(s.count, s.height, s.width, cfg.seed)
                .into_iter()
                .enumerate()
                .map(|(i, img)| (format!("synthetic_{:04}", i), img))
                .collect();
            Ok(LoadedImages {
                images,
                skipped: Vec::new(),
            })
        }
    }
}

/// Training sources and held-out HR images, split by the dataset seed.
pub struct Split {
    pub train: Vec<SourceImage>,
    pub held_out: Vec<(String, Image)>,
}

pub fn split(cfg: &DatasetConfig, images: &[(String, Image)]) -> Result<Split> {
    ensure!(!images.is_empty(), "dataset has no images");
    let (train, held_out) = split_dataset(images.len(), cfg.train_fraction, cfg.seed)?;
    Ok(Split {
        train: train
            .iter()
            .map(|&i| SourceImage::new(images[i].0.clone(), &images[i].1, cfg.scale))
            .collect::<Result<_, _>>()?,
        held_out: held_out.iter().map(|&i| images[i].clone()).collect(),
    })
}

/// All images as search sources; the search splits them itself.
pub fn sources(cfg: &DatasetConfig, images: &[(String, Image)]) -> Result<Vec<SourceImage>> {
    ensure!(!images.is_empty(), "dataset has no images");
    Ok(images
        .iter()
        .map(|(name, img)| SourceImage::new(name.clone(), img, cfg.scale))
        .collect::<Result<_, _>>()?)
}
