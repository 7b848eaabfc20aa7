use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Magnification, SlideRef};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub slides: Vec<SlideRef>,
}

/// A directory of tiled slide pyramids:
/// `<root>/manifest.json` plus `<root>/<slide_id>/<level>/<ty>_<tx>.png`,
/// where `level` is the pyramid level index (0 = 40X).
#[derive(Debug, Clone)]
pub struct SlideStore {
    root: PathBuf,
    manifest: Manifest,
}

impl SlideStore {
    /// Opens an existing store and checks that every tile file is present.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let store = SlideStore { root, manifest };
        store.validate()?;
        Ok(store)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for slide in &self.manifest.slides {
            slide.validate()?;
            if !seen.insert(slide.slide_id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate slide id {} in manifest",
                    slide.slide_id
                )));
            }
            for &mag in &slide.levels {
                let (cols, rows) = slide.tile_grid(mag);
                for ty in 0..rows {
                    for tx in 0..cols {
                        let p = self.tile_path(slide.slide_id, mag.level(), tx, ty);
                        if !p.is_file() {
                            return Err(Error::MissingTile(p));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Creates an empty store directory; slides are added with [`SlideStore::write_slide`].
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(SlideStore {
            root,
            manifest: Manifest { slides: Vec::new() },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn slides(&self) -> &[SlideRef] {
        &self.manifest.slides
    }

    pub fn slide(&self, slide_id: u32) -> Result<&SlideRef> {
        self.manifest
            .slides
            .iter()
            .find(|s| s.slide_id == slide_id)
            .ok_or(Error::UnknownSlide(slide_id))
    }

    pub fn tile_path(&self, slide_id: u32, level: u32, tx: u32, ty: u32) -> PathBuf {
        self.root
            .join(slide_id.to_string())
            .join(level.to_string())
            .join(format!("{ty}_{tx}.png"))
    }

    /// Writes one pyramid level per entry in `levels` (full-level images) as tiles,
    /// then records the slide in the manifest on disk.
    pub fn write_slide(&mut self, slide: SlideRef, levels: &[RgbImage]) -> Result<()> {
        slide.validate()?;
        if levels.len() != slide.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "slide {} declares {} levels but {} images were given",
                slide.slide_id,
                slide.levels.len(),
                levels.len()
            )));
        }
        for (&mag, img) in slide.levels.iter().zip(levels) {
            if img.dimensions() != slide.level_dimensions(mag) {
                return Err(Error::InvalidArgument(format!(
                    "level {mag} image is {:?}, expected {:?}",
                    img.dimensions(),
                    slide.level_dimensions(mag)
                )));
            }
            let (cols, rows) = slide.tile_grid(mag);
            let ts = slide.tile_size_px;
            for ty in 0..rows {
                for tx in 0..cols {
                    let x = tx * ts;
                    let y = ty * ts;
                    let w = ts.min(img.width() - x);
                    let h = ts.min(img.height() - y);
                    let tile = image::imageops::crop_imm(img, x, y, w, h).to_image();
                    let path = self.tile_path(slide.slide_id, mag.level(), tx, ty);
                    write_png(&path, &tile)?;
                }
            }
        }
        self.manifest
            .slides
            .retain(|s| s.slide_id != slide.slide_id);
        self.manifest.slides.push(slide);
        self.manifest.slides.sort_by_key(|s| s.slide_id);
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn level_slide(&self, slide_id: u32, mag: Magnification) -> Result<&SlideRef> {
        let slide = self.slide(slide_id)?;
        if !slide.has_level(mag) {
            return Err(Error::MissingLevel {
                slide_id,
                magnification: mag.to_string(),
            });
        }
        Ok(slide)
    }

    pub fn read_tile(
        &self,
        slide_id: u32,
        mag: Magnification,
        tx: u32,
        ty: u32,
    ) -> Result<RgbImage> {
        let slide = self.level_slide(slide_id, mag)?;
        let (cols, rows) = slide.tile_grid(mag);
        if tx >= cols || ty >= rows {
            return Err(Error::MissingTile(self.tile_path(
                slide_id,
                mag.level(),
                tx,
                ty,
            )));
        }
        read_png(&self.tile_path(slide_id, mag.level(), tx, ty))
    }

    /// Reads a rectangle given in level-pixel coordinates, stitching tiles as needed.
    pub fn read_region(
        &self,
        slide_id: u32,
        mag: Magnification,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    ) -> Result<RgbImage> {
        let slide = self.level_slide(slide_id, mag)?;
        let (lw, lh) = slide.level_dimensions(mag);
        if width == 0
            || height == 0
            || x as u64 + width as u64 > lw as u64
            || y as u64 + height as u64 > lh as u64
        {
            return Err(Error::OutOfBounds {
                x: x as i64,
                y: y as i64,
                width,
                height,
                level_width: lw,
                level_height: lh,
            });
        }
        let ts = slide.tile_size_px;
        let mut out = RgbImage::new(width, height);
        for ty in y / ts..=(y + height - 1) / ts {
            for tx in x / ts..=(x + width - 1) / ts {
                let tile = self.read_tile(slide_id, mag, tx, ty)?;
                let (tile_x, tile_y) = (tx * ts, ty * ts);
                // Intersection of the tile with the requested rectangle, in level pixels.
                let x0 = x.max(tile_x);
                let y0 = y.max(tile_y);
                let x1 = (x + width).min(tile_x + tile.width());
                let y1 = (y + height).min(tile_y + tile.height());
                let row_bytes = ((x1 - x0) * 3) as usize;
                for ly in y0..y1 {
                    let src = (((ly - tile_y) * tile.width() + (x0 - tile_x)) * 3) as usize;
                    let dst = (((ly - y) * width + (x0 - x)) * 3) as usize;
                    out.as_mut()[dst..dst + row_bytes]
                        .copy_from_slice(&tile.as_raw()[src..src + row_bytes]);
                }
            }
        }
        Ok(out)
    }

    /// Reads a whole pyramid level into memory.
    pub fn read_level(&self, slide_id: u32, mag: Magnification) -> Result<RgbImage> {
        let (w, h) = self.level_slide(slide_id, mag)?.level_dimensions(mag);
        self.read_region(slide_id, mag, 0, 0, w, h)
    }

    /// Total bytes of all tile files on disk.
    pub fn image_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for slide in &self.manifest.slides {
            for &mag in &slide.levels {
                let (cols, rows) = slide.tile_grid(mag);
                for ty in 0..rows {
                    for tx in 0..cols {
                        let p = self.tile_path(slide.slide_id, mag.level(), tx, ty);
                        total += fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
                    }
                }
            }
        }
        Ok(total)
    }
}

pub(crate) fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    encode_png(BufWriter::new(file), img)
}

/// PNG-encodes an RGB image with fixed encoder settings, so output bytes are reproducible.
pub fn encode_png<W: std::io::Write>(writer: W, img: &RgbImage) -> Result<()> {
    PngEncoder::new_with_quality(writer, CompressionType::Fast, FilterType::Sub).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(())
}

pub(crate) fn read_png(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingTile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?.to_rgb8())
}
