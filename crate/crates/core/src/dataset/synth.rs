//! Deterministic synthetic slides: square class regions filled with striped,
//! noised color textures on a pale background.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use image::RgbImage;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRegion, LabelKind, SlideStore};
use crate::error::{Error, Result};
use crate::model::{Magnification, SlideRef};

/// Texture parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    pub name: String,
    #[serde(default = "default_kind")]
    pub label_kind: LabelKind,
    pub base_color: [u8; 3],
    pub stripe_period_px: f64,
    pub stripe_angle_deg: f64,
    pub noise_amplitude: f64,
}

fn default_kind() -> LabelKind {
    LabelKind::HistologicFeature
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_slides: u32,
    pub classes: Vec<ClassTexture>,
    pub regions_per_slide: u32,
    pub slide_width_px: u32,
    pub slide_height_px: u32,
    /// Regions are squares of this side placed on a grid of the same pitch.
    pub region_size_px: u32,
    pub tile_size_px: u32,
    #[serde(default = "all_levels")]
    pub levels: Vec<Magnification>,
    /// When nonempty, slide `s` is annotated as organ `organs[s % len]`.
    #[serde(default)]
    pub organs: Vec<String>,
}

fn all_levels() -> Vec<Magnification> {
    Magnification::ALL.to_vec()
}

const STRIPE_CONTRAST: f64 = 0.35;
const LUT_SIZE: usize = 1024;
const BACKGROUND: ClassTexture = ClassTexture {
    name: String::new(),
    label_kind: LabelKind::HistologicFeature,
    base_color: [236, 226, 232],
    stripe_period_px: 97.0,
    stripe_angle_deg: 15.0,
    noise_amplitude: 6.0,
};

impl SynthSpec {
    /// Nine well-separated feature classes.
    pub fn nine_class(seed: u64) -> Self {
        let table: [(&str, [u8; 3], f64, f64, f64); 9] = [
            ("adipose", [250, 240, 200], 48.0, 0.0, 10.0),
            ("artery", [200, 40, 60], 12.0, 30.0, 14.0),
            ("blood", [150, 10, 20], 20.0, 90.0, 12.0),
            ("gland", [120, 60, 170], 32.0, 60.0, 16.0),
            ("inflammation", [40, 30, 120], 8.0, 45.0, 20.0),
            ("necrosis", [120, 110, 90], 64.0, 120.0, 18.0),
            ("nerve", [230, 150, 180], 16.0, 10.0, 12.0),
            ("smooth_muscle", [210, 90, 110], 24.0, 150.0, 14.0),
            ("stroma", [170, 190, 120], 40.0, 75.0, 16.0),
        ];
        SynthSpec {
            seed,
            n_slides: 4,
            classes: table
                .iter()
                .map(|&(name, color, period, angle, noise)| ClassTexture {
                    name: name.to_string(),
                    label_kind: LabelKind::HistologicFeature,
                    base_color: color,
                    stripe_period_px: period,
                    stripe_angle_deg: angle,
                    noise_amplitude: noise,
                })
                .collect(),
            regions_per_slide: 9,
            slide_width_px: 3600,
            slide_height_px: 3600,
            region_size_px: 1200,
            tile_size_px: 512,
            levels: all_levels(),
            organs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthSpec(m));
        if self.classes.len() < 2 {
            return bad("need at least two classes".into());
        }
        let names: BTreeSet<_> = self.classes.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.classes.len() || names.contains("") {
            return bad("class names must be unique and nonempty".into());
        }
        for (i, a) in self.classes.iter().enumerate() {
            if !(a.stripe_period_px > 0.0 && a.stripe_period_px.is_finite()) {
                return bad(format!("class {} has invalid stripe period", a.name));
            }
            if !(a.noise_amplitude >= 0.0 && a.noise_amplitude.is_finite())
                || !a.stripe_angle_deg.is_finite()
            {
                return bad(format!("class {} has invalid texture parameters", a.name));
            }
            for b in &self.classes[i + 1..] {
                if a.base_color == b.base_color
                    && a.stripe_period_px == b.stripe_period_px
                    && a.stripe_angle_deg == b.stripe_angle_deg
                    && a.noise_amplitude == b.noise_amplitude
                {
                    return bad(format!("classes {} and {} share a texture", a.name, b.name));
                }
            }
        }
        if self.n_slides == 0 || self.tile_size_px == 0 || self.region_size_px == 0 {
            return bad("n_slides, tile_size_px and region_size_px must be positive".into());
        }
        let cells = (self.slide_width_px / self.region_size_px) as u64
            * (self.slide_height_px / self.region_size_px) as u64;
        if self.regions_per_slide as u64 > cells {
            return bad(format!(
                "slide too small: {} regions requested but a {}x{} slide holds {} regions of {} px",
                self.regions_per_slide,
                self.slide_width_px,
                self.slide_height_px,
                cells,
                self.region_size_px
            ));
        }
        let probe = SlideRef {
            slide_id: 0,
            name: String::new(),
            base_width_px: self.slide_width_px,
            base_height_px: self.slide_height_px,
            tile_size_px: self.tile_size_px,
            levels: self.levels.clone(),
        };
        probe
            .validate()
            .map_err(|e| Error::InvalidSynthSpec(e.to_string()))
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub store: SlideStore,
    pub annotations: Vec<AnnotationRegion>,
}

/// Renders every slide of `spec` into a new store at `root` and writes
/// `annotations.json` alongside the manifest.
pub fn generate_synthetic(
    spec: &SynthSpec,
    root: impl AsRef<std::path::Path>,
) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut store = SlideStore::create(root)?;
    let mut annotations = Vec::new();
    let cols = spec.slide_width_px / spec.region_size_px;
    let rows = spec.slide_height_px / spec.region_size_px;
    for slide_id in 0..spec.n_slides {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((slide_id as u64 + 1) << 32));
        let mut cells = sample(
            &mut rng,
            (cols * rows) as usize,
            spec.regions_per_slide as usize,
        )
        .into_vec();
        cells.sort_unstable();
        // (x, y, class index) of each region
        let regions: Vec<(u32, u32, usize)> = cells
            .iter()
            .enumerate()
            .map(|(r, &cell)| {
                let global = slide_id as usize * spec.regions_per_slide as usize + r;
                let cell = cell as u32;
                (
                    (cell % cols) * spec.region_size_px,
                    (cell / cols) * spec.region_size_px,
                    global % spec.classes.len(),
                )
            })
            .collect();

        let max_level = spec.levels.iter().map(|m| m.level()).max().unwrap_or(0);
        let mut chain = vec![render_slide(spec, slide_id, &regions)];
        for _ in 0..max_level {
            let next = downsample_2x(chain.last().expect("nonempty"));
            chain.push(next);
        }
        let mut chain: Vec<Option<RgbImage>> = chain.into_iter().map(Some).collect();
        let declared: Vec<RgbImage> = spec
            .levels
            .iter()
            .map(|m| {
                chain[m.level() as usize]
                    .take()
                    .expect("levels are distinct")
            })
            .collect();

        let slide = SlideRef {
            slide_id,
            name: format!("synthetic-{slide_id:04}"),
            base_width_px: spec.slide_width_px,
            base_height_px: spec.slide_height_px,
            tile_size_px: spec.tile_size_px,
            levels: spec.levels.clone(),
        };
        store.write_slide(slide, &declared)?;

        if !spec.organs.is_empty() {
            let (w, h) = (spec.slide_width_px as f64, spec.slide_height_px as f64);
            annotations.push(AnnotationRegion {
                slide_id,
                label: spec.organs[slide_id as usize % spec.organs.len()].clone(),
                label_kind: LabelKind::Organ,
                points: vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)],
            });
        }
        for &(x, y, class) in &regions {
            let (x0, y0) = (x as f64, y as f64);
            let s = spec.region_size_px as f64;
            let texture = &spec.classes[class];
            annotations.push(AnnotationRegion {
                slide_id,
                label: texture.name.clone(),
                label_kind: texture.label_kind,
                points: vec![(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)],
            });
        }
    }
    super::save_annotations(store.root(), &annotations)?;
    Ok(SyntheticDataset { store, annotations })
}

struct TextureLut {
    base: [f64; 3],
    cos: f64,
    sin: f64,
    inv_period: f64,
    noise: f64,
    /// Brightness factor over one stripe period.
    factor: Vec<f64>,
}

impl TextureLut {
    fn new(t: &ClassTexture) -> Self {
        let angle = t.stripe_angle_deg.to_radians();
        let factor = (0..LUT_SIZE)
            .map(|i| {
                let s = (TAU * i as f64 / LUT_SIZE as f64).sin();
                1.0 - STRIPE_CONTRAST * (0.5 + 0.5 * s)
            })
            .collect();
        TextureLut {
            base: t.base_color.map(f64::from),
            cos: angle.cos(),
            sin: angle.sin(),
            inv_period: 1.0 / t.stripe_period_px,
            noise: t.noise_amplitude,
            factor,
        }
    }

    #[inline]
    fn pixel(&self, x: u32, y: u32, hash: u64) -> [u8; 3] {
        let phase = (x as f64 * self.cos + y as f64 * self.sin) * self.inv_period;
        let idx = ((phase - phase.floor()) * LUT_SIZE as f64) as usize % LUT_SIZE;
        let f = self.factor[idx];
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let bits = (hash >> (c * 16)) & 0xffff;
            let n = (bits as f64 / 65535.0 * 2.0 - 1.0) * self.noise;
            *o = (self.base[c] * f + n).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn render_slide(spec: &SynthSpec, slide_id: u32, regions: &[(u32, u32, usize)]) -> RgbImage {
    let (w, h) = (spec.slide_width_px, spec.slide_height_px);
    let luts: Vec<TextureLut> = spec.classes.iter().map(TextureLut::new).collect();
    let background = TextureLut::new(&BACKGROUND);
    let s = spec.region_size_px;
    let cols = w / s;
    // class index per grid cell; usize::MAX = background
    let mut cell_class = vec![usize::MAX; (cols * (h / s)) as usize];
    for &(x, y, c) in regions {
        cell_class[((y / s) * cols + x / s) as usize] = c;
    }
    let seed = splitmix64(spec.seed) ^ ((slide_id as u64) << 40);
    let mut buf = vec![0u8; w as usize * h as usize * 3];
    for (y, row) in buf.chunks_exact_mut(w as usize * 3).enumerate() {
        let y = y as u32;
        let row_seed = splitmix64(seed ^ y as u64);
        for x in 0..w {
            let lut = if x / s < cols && y / s < h / s {
                match cell_class[((y / s) * cols + x / s) as usize] {
                    usize::MAX => &background,
                    c => &luts[c],
                }
            } else {
                &background
            };
            let px = lut.pixel(
                x,
                y,
                splitmix64(row_seed ^ (x as u64).wrapping_mul(0x2545_f491)),
            );
            row[x as usize * 3..x as usize * 3 + 3].copy_from_slice(&px);
        }
    }
    RgbImage::from_raw(w, h, buf).expect("sized buffer")
}

/// 2x box-filter downsample with round-half-up; output is `floor(w/2) x floor(h/2)`.
pub fn downsample_2x(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let src = img.as_raw();
    let stride = img.width() as usize * 3;
    let mut out = vec![0u8; w as usize * h as usize * 3];
    for y in 0..h as usize {
        for x in 0..w as usize {
            for c in 0..3 {
                let i = 2 * y * stride + 2 * x * 3 + c;
                let sum = src[i] as u32
                    + src[i + 3] as u32
                    + src[i + stride] as u32
                    + src[i + stride + 3] as u32;
                out[(y * w as usize + x) * 3 + c] = ((sum + 2) / 4) as u8;
            }
        }
    }
    RgbImage::from_raw(w, h, out).expect("sized buffer")
}
