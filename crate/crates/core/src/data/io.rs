use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{PfpnError, Result};
use crate::maps::{GroundTruthMask, SaliencyMap};
use crate::tensor::Tensor;

use super::{image_shape, Sample};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> PfpnError + '_ {
    move |source| PfpnError::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| PfpnError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| PfpnError::io(path, e))?
        .decode()
        .map_err(image_err(path))
}

/// Image files in `dir` keyed by basename (without extension), sorted by id.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| PfpnError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| PfpnError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| PfpnError::Input(format!("unreadable file name {}", path.display())))?
            .to_string();
        if let Some(previous) = out.insert(id.clone(), path.clone()) {
            return Err(PfpnError::Input(format!(
                "duplicate id {id}: {} and {}",
                previous.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// RGB image as a `1 x 3 x H x W` tensor in [0, 1].
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(image_shape(h, w), |_, c, y, x| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(open(path)?.to_luma8())
}

/// Mask binarized at 128.
pub fn load_mask(path: &Path) -> Result<GroundTruthMask> {
    let img = load_gray(path)?;
    GroundTruthMask::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// 8-bit prediction read back as `value / 255`.
pub fn load_prediction(path: &Path) -> Result<SaliencyMap> {
    let img = load_gray(path)?;
    SaliencyMap::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
}

fn save_gray(path: &Path, w: usize, h: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches size");
    img.save(path).map_err(image_err(path))
}

/// Writes `round(s * 255)` as an 8-bit grayscale image.
pub fn save_prediction(path: &Path, map: &SaliencyMap) -> Result<()> {
    save_gray(path, map.width(), map.height(), map.to_u8())
}

pub fn save_mask(path: &Path, mask: &GroundTruthMask) -> Result<()> {
    save_gray(path, mask.width(), mask.height(), mask.to_u8())
}

pub fn save_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            (image.at(0, c, y as usize, x as usize) * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        }))
    });
    img.save(path).map_err(image_err(path))
}

/// Loads `root/images/*` with masks from `root/masks/<id>.png`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = list_images(&root.join("images"))?;
    if images.is_empty() {
        return Err(PfpnError::Input(format!(
            "no images under {}",
            root.join("images").display()
        )));
    }
    let masks = list_images(&root.join("masks"))?;
    let missing: Vec<&str> = images
        .keys()
        .filter(|id| !masks.contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(PfpnError::Input(format!(
            "missing mask for image(s): {}",
            missing.join(", ")
        )));
    }
    images
        .iter()
        .map(|(id, path)| Sample::new(id.clone(), load_rgb(path)?, load_mask(&masks[id])?))
        .collect()
}

/// Writes samples in the layout read by [`load_dataset`].
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| PfpnError::io(&dir, e))?;
    }
    for s in samples {
        save_rgb(
            &root.join("images").join(format!("{}.png", s.id)),
            s.image(),
        )?;
        save_mask(&root.join("masks").join(format!("{}.png", s.id)), s.mask())?;
    }
    Ok(())
}
