//! 8-bit image files and frame directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::{ImageFormat, RgbImage};
use msdeblur_core::blur::FrameSequence;
use msdeblur_core::math::quantize_u8;
use msdeblur_core::{Shape, Tensor};
use serde::{Deserialize, Serialize};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "JPG"];

/// Reads any supported image as a `1x3xHxW` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

pub fn to_rgb8(t: &Tensor, item: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.c != 3 || item >= s.n {
        bail!("cannot encode tensor of shape {s} item {item} as RGB");
    }
    Ok(RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| quantize_u8(t.at(item, c, y as usize, x as usize))))
    }))
}

/// Writes batch item 0 as an 8-bit PNG whatever the extension says.
pub fn write_png(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    to_rgb8(t, 0)?
        .save_with_format(path, ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && IMAGE_EXTENSIONS.contains(&ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesMeta {
    pub fps: f64,
}

pub const FRAMES_META: &str = "meta.toml";

/// Writes `00000.png, 00001.png, ...` plus `meta.toml` with the frame rate.
pub fn write_frames(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in seq.frames().iter().enumerate() {
        write_png(&dir.join(format!("{i:05}.png")), f)?;
    }
    let meta = toml::to_string(&FramesMeta { fps: seq.fps() })?;
    fs::write(dir.join(FRAMES_META), meta)?;
    Ok(())
}

pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let meta_path = dir.join(FRAMES_META);
    let meta: FramesMeta = toml::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    let frames = list_images(dir)?.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence::new(frames, meta.fps)?)
}
