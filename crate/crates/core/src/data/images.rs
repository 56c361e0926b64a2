//! Raster image I/O for the `<root>/<identity>/<image>` layout.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use log::warn;

use crate::data::{IdentityDataset, Item};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Largest tolerated fraction of undecodable files.
pub const MAX_SKIP_FRACTION: f64 = 0.10;

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Center-crops to a square, resizes, and maps pixels to `[-1, 1]` as `3×size×size`.
pub fn image_to_tensor(img: &DynamicImage, size: usize) -> Tensor<f32> {
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
    let rgb = if side as usize == size {
        cropped.to_rgb8()
    } else {
        image::imageops::resize(&cropped.to_rgb8(), size as u32, size as u32, FilterType::Triangle)
    };
    let p = size * size;
    let mut data = vec![0f32; 3 * p];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * p + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::new(&[3, size, size], data).unwrap()
}

/// Quantizes a `3×H×W` tensor in `[-1, 1]` to 8-bit RGB.
pub fn tensor_to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let p = h * w;
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f32| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        image::Rgb([q(d[i]), q(d[p + i]), q(d[2 * p + i])])
    }))
}

pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    tensor_to_rgb8(t)?
        .save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Loads `<dir>/<identity>/<image>.{png,jpg}` in lexicographic order.
pub fn load_images(dir: &Path, image_size: usize) -> Result<IdentityDataset> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut identities = Vec::new();
    let mut items = Vec::new();
    let mut seen = 0usize;
    let mut skipped = 0usize;
    for sub in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let label = identities.len();
        let mut count = 0;
        for file in sorted_entries(&sub)?.into_iter().filter(|p| is_image(p)) {
            seen += 1;
            match image::open(&file) {
                Ok(img) => {
                    items.push(Item { image: image_to_tensor(&img, image_size), label, path: file });
                    count += 1;
                }
                Err(e) => {
                    warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                }
            }
        }
        if count > 0 {
            identities.push(sub.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    if seen == 0 {
        return Err(Error::Config(format!("no images under {}", dir.display())));
    }
    if skipped as f64 > MAX_SKIP_FRACTION * seen as f64 {
        return Err(Error::Config(format!("{skipped} of {seen} images under {} could not be decoded", dir.display())));
    }
    Ok(IdentityDataset { items, identities, image_size })
}

/// Loads the images directly inside `dir` (one identity), sorted by file name.
pub fn load_image_dir(dir: &Path, image_size: usize) -> Result<Vec<(PathBuf, Tensor<f32>)>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for file in sorted_entries(dir)?.into_iter().filter(|p| is_image(p)) {
        let img = image::open(&file).map_err(|source| Error::Image { path: file.clone(), source })?;
        out.push((file, image_to_tensor(&img, image_size)));
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no images in {}", dir.display())));
    }
    Ok(out)
}

/// Writes every item as `<root>/<identity>/<stem><suffix>.png`; returns the written paths.
pub fn write_dataset(ds: &IdentityDataset, root: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::with_capacity(ds.len());
    for it in &ds.items {
        let stem = it.path.file_stem().unwrap_or_default().to_string_lossy();
        let path = root.join(&ds.identities[it.label]).join(format!("{stem}{suffix}.png"));
        save_image(&it.image, &path)?;
        out.push(path);
    }
    Ok(out)
}
