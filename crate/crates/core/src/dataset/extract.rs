use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::polygon::{bounding_box, covered_pixels, validate_polygon, Point};
use super::{AnnotationRegion, LabelKind, SlideStore};
use crate::error::{Error, Result};
use crate::model::{LabelSet, Magnification, PatchRecord, SlideRef, DEFAULT_PATCH_SIDE};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    /// Patch side in level pixels.
    pub side_px: u32,
    /// Minimum fraction of the patch inside a label's polygons for the label to apply.
    pub coverage_threshold: f64,
    /// Grid step in level pixels; `None` means `side_px` (non-overlapping).
    pub stride_px: Option<u32>,
    /// Keep patches without labels (serving databases) instead of dropping them.
    pub keep_unlabeled: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            side_px: DEFAULT_PATCH_SIDE,
            coverage_threshold: 0.75,
            stride_px: None,
            keep_unlabeled: false,
        }
    }
}

struct LabelGroup<'a> {
    kind: LabelKind,
    label: &'a str,
    polygons: Vec<&'a [Point]>,
    bbox: (f64, f64, f64, f64),
}

/// Cuts grid-aligned patches at each requested magnification and labels each
/// one by polygon coverage. Patch ids are dense and follow the scan order
/// (slide, magnification, y, x).
pub fn extract_patches(
    store: &SlideStore,
    annotations: &[AnnotationRegion],
    magnifications: &[Magnification],
    opts: &ExtractOptions,
) -> Result<Vec<PatchRecord>> {
    if opts.side_px == 0 {
        return Err(Error::InvalidArgument("side_px must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.coverage_threshold) || opts.coverage_threshold == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "coverage_threshold {} outside (0, 1]",
            opts.coverage_threshold
        )));
    }
    let stride = opts.stride_px.unwrap_or(opts.side_px);
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    for a in annotations {
        let slide = store.slide(a.slide_id)?;
        validate_polygon(&a.points, slide.base_width_px, slide.base_height_px)?;
    }
    let mut mags: Vec<Magnification> = magnifications.to_vec();
    mags.sort();
    mags.dedup();
    if mags.is_empty() {
        return Err(Error::InvalidArgument("no magnification requested".into()));
    }

    let mut slides: Vec<&SlideRef> = store.slides().iter().collect();
    slides.sort_by_key(|s| s.slide_id);
    for slide in &slides {
        for &mag in &mags {
            if !slide.has_level(mag) {
                return Err(Error::MissingLevel {
                    slide_id: slide.slide_id,
                    magnification: mag.to_string(),
                });
            }
        }
    }

    let per_slide: Vec<Vec<PatchRecord>> = slides
        .par_iter()
        .map(|slide| {
            let groups = label_groups(annotations, slide.slide_id);
            let mut out = Vec::new();
            for &mag in &mags {
                extract_level(slide, mag, &groups, opts, stride, &mut out);
            }
            out
        })
        .collect();

    let mut patches: Vec<PatchRecord> = per_slide.into_iter().flatten().collect();
    for (i, p) in patches.iter_mut().enumerate() {
        p.patch_id = i as u64;
    }
    Ok(patches)
}

fn label_groups(annotations: &[AnnotationRegion], slide_id: u32) -> Vec<LabelGroup<'_>> {
    let mut by_label: BTreeMap<(LabelKind, &str), Vec<&[Point]>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.slide_id == slide_id) {
        by_label
            .entry((a.label_kind, a.label.as_str()))
            .or_default()
            .push(&a.points);
    }
    by_label
        .into_iter()
        .map(|((kind, label), polygons)| {
            let bbox = polygons.iter().map(|p| bounding_box(p)).fold(
                (
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ),
                |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
            );
            LabelGroup {
                kind,
                label,
                polygons,
                bbox,
            }
        })
        .collect()
}

fn extract_level(
    slide: &SlideRef,
    mag: Magnification,
    groups: &[LabelGroup<'_>],
    opts: &ExtractOptions,
    stride: u32,
    out: &mut Vec<PatchRecord>,
) {
    let d = mag.downsample();
    let (lw, lh) = slide.level_dimensions(mag);
    let side = opts.side_px;
    if side > lw || side > lh {
        return;
    }
    let area = side as u64 * side as u64;
    let needed = (opts.coverage_threshold * area as f64).ceil() as u64;
    for ly in (0..=lh - side).step_by(stride as usize) {
        for lx in (0..=lw - side).step_by(stride as usize) {
            let (bx0, by0) = ((lx * d) as f64, (ly * d) as f64);
            let (bx1, by1) = (bx0 + (side * d) as f64, by0 + (side * d) as f64);
            let mut labels = LabelSet::default();
            for g in groups {
                let (gx0, gy0, gx1, gy1) = g.bbox;
                if gx1 <= bx0 || gx0 >= bx1 || gy1 <= by0 || gy0 >= by1 {
                    continue;
                }
                if covered_pixels(&g.polygons, lx, ly, side, d) < needed {
                    continue;
                }
                match g.kind {
                    LabelKind::HistologicFeature => {
                        labels.histologic_features.insert(g.label.to_string());
                    }
                    // Groups iterate in label order, so the lexicographically first wins.
                    LabelKind::Organ => {
                        labels.organ.get_or_insert_with(|| g.label.to_string());
                    }
                    LabelKind::Gleason => {
                        if labels.gleason.is_none() {
                            if let Ok(grade) = g.label.parse() {
                                labels = labels.with_gleason(grade);
                            }
                        }
                    }
                }
            }
            if labels.is_empty() && !opts.keep_unlabeled {
                continue;
            }
            out.push(PatchRecord {
                patch_id: 0,
                slide_id: slide.slide_id,
                magnification: mag,
                x: lx * d,
                y: ly * d,
                side_px: side,
                labels,
            });
        }
    }
}

/// Distinct labels present on any patch, per kind.
pub fn label_inventory(patches: &[PatchRecord]) -> BTreeMap<LabelKind, BTreeSet<String>> {
    let mut inv: BTreeMap<LabelKind, BTreeSet<String>> = BTreeMap::new();
    for p in patches {
        for f in &p.labels.histologic_features {
            inv.entry(LabelKind::HistologicFeature)
                .or_default()
                .insert(f.clone());
        }
        if let Some(o) = &p.labels.organ {
            inv.entry(LabelKind::Organ).or_default().insert(o.clone());
        }
        if let Some(g) = p.labels.gleason {
            inv.entry(LabelKind::Gleason)
                .or_default()
                .insert(g.to_string());
        }
    }
    inv
}
