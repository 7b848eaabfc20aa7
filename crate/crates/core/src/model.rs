//! Shared domain types: magnification levels, the eight patch orientations,
//! patch records and their labels, and embeddings.
//!
//! Coordinates are always base-level pixels (the highest magnification).
//! A patch of `side_px` level pixels at downsample `d` covers `side_px * d`
//! base pixels along each axis.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default patch side length in level pixels.
pub const DEFAULT_PATCH_SIDE: u32 = 300;

/// Default embedding dimension of the reference embedder.
pub const DEFAULT_DIM: usize = 128;

/// Pyramid magnification. Each level halves the resolution of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "40X")]
    X40,
    #[serde(rename = "20X")]
    X20,
    #[serde(rename = "10X")]
    X10,
    #[serde(rename = "5X")]
    X5,
}

impl Magnification {
    pub const ALL: [Magnification; 4] = [
        Magnification::X40,
        Magnification::X20,
        Magnification::X10,
        Magnification::X5,
    ];

    pub fn downsample(self) -> u32 {
        1 << self.level()
    }

    /// Pyramid level index, 0 for the base level.
    pub fn level(self) -> u32 {
        match self {
            Magnification::X40 => 0,
            Magnification::X20 => 1,
            Magnification::X10 => 2,
            Magnification::X5 => 3,
        }
    }

    pub fn from_level(level: u32) -> Option<Self> {
        Self::ALL.get(level as usize).copied()
    }

    /// The nominal objective power: 40, 20, 10 or 5.
    pub fn power(self) -> u8 {
        40 >> self.level()
    }

    pub fn from_power(power: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.power() == power)
    }

    /// Validates a (magnification, downsample) pair.
    pub fn with_downsample(self, downsample: u32) -> Result<Self> {
        if self.downsample() == downsample {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!(
                "{self} requires downsample {}, got {downsample}",
                self.downsample()
            )))
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}X", self.power())
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_end_matches(['X', 'x']);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Magnification::from_power)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown magnification `{s}`")))
    }
}

/// One element of the dihedral group of the square.
///
/// `R*` are counter-clockwise rotations; `MR*` first mirror horizontally and
/// then rotate. Discriminants are the on-disk orientation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Orientation {
    R0 = 0,
    R90 = 1,
    R180 = 2,
    R270 = 3,
    MR0 = 4,
    MR90 = 5,
    MR180 = 6,
    MR270 = 7,
}

impl Orientation {
    pub const ALL: [Orientation; 8] = [
        Orientation::R0,
        Orientation::R90,
        Orientation::R180,
        Orientation::R270,
        Orientation::MR0,
        Orientation::MR90,
        Orientation::MR180,
        Orientation::MR270,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn from_parts(mirrored: bool, quarter_turns: u8) -> Self {
        Self::ALL[(mirrored as usize) * 4 + (quarter_turns % 4) as usize]
    }

    pub fn is_mirrored(self) -> bool {
        self.code() >= 4
    }

    /// Counter-clockwise quarter turns applied after the optional mirror.
    pub fn quarter_turns(self) -> u8 {
        self.code() % 4
    }

    /// Function composition `self ∘ other`: the result applies `other` first,
    /// then `self`. Thus
    /// `apply_orientation(&apply_orientation(img, a)?, b)? == apply_orientation(img, b.compose(a))?`.
    pub fn compose(self, other: Orientation) -> Orientation {
        // Element = r^k m^f. Since m r^k = r^-k m:
        // r^k1 m^f1 r^k2 m^f2 = r^(k1 ± k2) m^(f1 xor f2).
        let k1 = self.quarter_turns();
        let k2 = other.quarter_turns();
        let turns = if self.is_mirrored() {
            (k1 + 4 - k2) % 4
        } else {
            (k1 + k2) % 4
        };
        Orientation::from_parts(self.is_mirrored() ^ other.is_mirrored(), turns)
    }

    pub fn inverse(self) -> Orientation {
        if self.is_mirrored() {
            self
        } else {
            Orientation::from_parts(false, (4 - self.quarter_turns()) % 4)
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Group composition; `compose_orientations(a, b)` applies `b` first, then `a`.
pub fn compose_orientations(a: Orientation, b: Orientation) -> Orientation {
    a.compose(b)
}

/// Re-orients an RGB image. Quarter turns require a square image.
pub fn apply_orientation(img: &RgbImage, o: Orientation) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let quarter = o.quarter_turns() % 2 == 1;
    if quarter && w != h {
        return Err(Error::NonSquareImage {
            width: w,
            height: h,
        });
    }
    if o == Orientation::R0 {
        return Ok(img.clone());
    }
    // Walk the inverse map: undo the rotations, then the mirror. One CCW
    // turn on a square of side n maps source (n-1-y, x) to (x, y).
    // Source column and row are affine in (x, y): (c0, cx, cy) and (r0, rx, ry).
    let (wi, hi) = (w as isize, h as isize);
    let (mut col, row) = match o.quarter_turns() {
        0 => ((0, 1, 0), (0, 0, 1)),
        1 => ((wi - 1, 0, -1), (0, 1, 0)),
        2 => ((wi - 1, -1, 0), (hi - 1, 0, -1)),
        _ => ((0, 0, 1), (wi - 1, -1, 0)),
    };
    if o.is_mirrored() {
        col = (wi - 1 - col.0, -col.1, -col.2);
    }
    let base = row.0 * wi + col.0;
    let dx = row.1 * wi + col.1;
    let dy = row.2 * wi + col.2;
    let src = img.as_raw();
    let mut out = vec![0u8; src.len()];
    for (y, line) in out.chunks_exact_mut(w as usize * 3).enumerate() {
        let mut s = base + y as isize * dy;
        for px in line.chunks_exact_mut(3) {
            let i = s as usize * 3;
            px.copy_from_slice(&src[i..i + 3]);
            s += dx;
        }
    }
    Ok(RgbImage::from_raw(w, h, out).expect("buffer sized from source image"))
}

/// Prostate grading category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gleason {
    NT,
    GP3,
    GP4,
    GP5,
}

impl Gleason {
    pub const ALL: [Gleason; 4] = [Gleason::NT, Gleason::GP3, Gleason::GP4, Gleason::GP5];

    pub fn is_tumor(self) -> bool {
        self != Gleason::NT
    }
}

impl fmt::Display for Gleason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Gleason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NT" => Ok(Gleason::NT),
            "GP3" => Ok(Gleason::GP3),
            "GP4" => Ok(Gleason::GP4),
            "GP5" => Ok(Gleason::GP5),
            other => Err(Error::InvalidArgument(format!(
                "unknown gleason pattern `{other}`"
            ))),
        }
    }
}

/// Labels attached to a patch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(default)]
    pub histologic_features: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organ: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gleason: Option<Gleason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tumor_present: Option<bool>,
}

impl LabelSet {
    pub fn with_feature(feature: impl Into<String>) -> Self {
        let mut labels = LabelSet::default();
        labels.histologic_features.insert(feature.into());
        labels
    }

    /// Sets the grade and the tumor flag it implies.
    pub fn with_gleason(mut self, gleason: Gleason) -> Self {
        self.gleason = Some(gleason);
        self.tumor_present = Some(gleason.is_tumor());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.histologic_features.is_empty()
            && self.organ.is_none()
            && self.gleason.is_none()
            && self.tumor_present.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(g), Some(t)) = (self.gleason, self.tumor_present) {
            if g.is_tumor() != t {
                return Err(Error::InvalidArgument(format!(
                    "gleason {g} inconsistent with tumor_present={t}"
                )));
            }
        }
        if self.gleason.is_some() && self.tumor_present.is_none() {
            return Err(Error::InvalidArgument(
                "gleason set without tumor_present".into(),
            ));
        }
        Ok(())
    }
}

/// A slide in the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideRef {
    pub slide_id: u32,
    pub name: String,
    pub base_width_px: u32,
    pub base_height_px: u32,
    pub tile_size_px: u32,
    pub levels: Vec<Magnification>,
}

impl SlideRef {
    pub fn validate(&self) -> Result<()> {
        if self.base_width_px == 0 || self.base_height_px == 0 {
            return Err(Error::InvalidArgument(format!(
                "slide {} has empty dimensions",
                self.slide_id
            )));
        }
        if self.tile_size_px == 0 {
            return Err(Error::InvalidArgument(format!(
                "slide {} has zero tile size",
                self.slide_id
            )));
        }
        match self.levels.first() {
            Some(Magnification::X40) => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "slide {} levels must start at 40X (downsample 1)",
                    self.slide_id
                )))
            }
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "slide {} levels must have strictly increasing downsample",
                self.slide_id
            )));
        }
        Ok(())
    }

    pub fn has_level(&self, mag: Magnification) -> bool {
        self.levels.contains(&mag)
    }

    /// Level dimensions in level pixels (base dimensions divided by downsample, rounded down).
    pub fn level_dimensions(&self, mag: Magnification) -> (u32, u32) {
        let d = mag.downsample();
        (self.base_width_px / d, self.base_height_px / d)
    }

    /// Tile grid (columns, rows) at a level.
    pub fn tile_grid(&self, mag: Magnification) -> (u32, u32) {
        let (w, h) = self.level_dimensions(mag);
        (w.div_ceil(self.tile_size_px), h.div_ceil(self.tile_size_px))
    }
}

/// Location part of a patch: everything stored alongside each embedding record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchMeta {
    pub patch_id: u64,
    pub slide_id: u32,
    pub magnification: Magnification,
    pub x: u32,
    pub y: u32,
    pub side_px: u32,
}

impl PatchMeta {
    /// Side length of the patch footprint in base pixels.
    pub fn base_side(&self) -> u32 {
        self.side_px * self.magnification.downsample()
    }

    pub fn base_center(&self) -> (f64, f64) {
        let half = self.base_side() as f64 / 2.0;
        (self.x as f64 + half, self.y as f64 + half)
    }

    /// Whether the base-pixel footprints of two patches overlap.
    pub fn overlaps(&self, other: &PatchMeta) -> bool {
        self.slide_id == other.slide_id
            && rects_overlap(
                (self.x, self.y, self.base_side(), self.base_side()),
                (other.x, other.y, other.base_side(), other.base_side()),
            )
    }
}

pub(crate) fn rects_overlap(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> bool {
    let (ax, ay, aw, ah) = (a.0 as u64, a.1 as u64, a.2 as u64, a.3 as u64);
    let (bx, by, bw, bh) = (b.0 as u64, b.1 as u64, b.2 as u64, b.3 as u64);
    ax < bx + bw && bx < ax + aw && ay < by + bh && by < ay + ah
}

/// One extracted patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: u64,
    pub slide_id: u32,
    pub magnification: Magnification,
    pub x: u32,
    pub y: u32,
    pub side_px: u32,
    #[serde(default)]
    pub labels: LabelSet,
}

impl PatchRecord {
    /// Builds a record, checking it lies on the level grid and inside the slide.
    pub fn new(
        slide: &SlideRef,
        patch_id: u64,
        magnification: Magnification,
        x: u32,
        y: u32,
        side_px: u32,
        labels: LabelSet,
    ) -> Result<Self> {
        let record = PatchRecord {
            patch_id,
            slide_id: slide.slide_id,
            magnification,
            x,
            y,
            side_px,
            labels,
        };
        record.validate(slide)?;
        Ok(record)
    }

    pub fn validate(&self, slide: &SlideRef) -> Result<()> {
        if self.slide_id != slide.slide_id {
            return Err(Error::UnknownSlide(self.slide_id));
        }
        if !slide.has_level(self.magnification) {
            return Err(Error::MissingLevel {
                slide_id: slide.slide_id,
                magnification: self.magnification.to_string(),
            });
        }
        let d = self.magnification.downsample();
        if self.side_px == 0 || !self.x.is_multiple_of(d) || !self.y.is_multiple_of(d) {
            return Err(Error::InvalidArgument(format!(
                "patch {} not aligned to the {} grid",
                self.patch_id, self.magnification
            )));
        }
        let side = self.side_px as u64 * d as u64;
        if self.x as u64 + side > slide.base_width_px as u64
            || self.y as u64 + side > slide.base_height_px as u64
        {
            return Err(Error::OutOfBounds {
                x: self.x as i64,
                y: self.y as i64,
                width: side as u32,
                height: side as u32,
                level_width: slide.base_width_px,
                level_height: slide.base_height_px,
            });
        }
        self.labels.validate()
    }

    pub fn meta(&self) -> PatchMeta {
        PatchMeta {
            patch_id: self.patch_id,
            slide_id: self.slide_id,
            magnification: self.magnification,
            x: self.x,
            y: self.y,
            side_px: self.side_px,
        }
    }

    pub fn base_center(&self) -> (f64, f64) {
        self.meta().base_center()
    }
}

/// Center of a patch footprint in base pixels.
pub fn base_center(p: &PatchRecord) -> (f64, f64) {
    p.base_center()
}

/// A fixed-length embedding vector with 32-bit components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(components: Vec<f32>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("empty embedding".into()));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding component {i} is not finite"
            )));
        }
        Ok(Embedding(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bits_eq(&self, other: &Embedding) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Squared L2 distance, accumulated in 64-bit in dimension order.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}
