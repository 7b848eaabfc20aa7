use std::collections::BTreeSet;

use image::RgbImage;
use patchsearch::embedder::{Embedder, ReferenceEmbedder};
use patchsearch::eval::{chi_squared_2x2, rubric_score};
use patchsearch::index::{IndexEntry, IndexParams, ShardSet};
use patchsearch::query::{diversity_filter_hits, filter_hits, QuerySpec};
use patchsearch::{
    apply_orientation, Embedding, Gleason, LabelSet, Magnification, Orientation, PatchMeta,
};
use proptest::prelude::*;

fn orientation() -> impl Strategy<Value = Orientation> {
    (0u8..8).prop_map(|c| Orientation::from_code(c).unwrap())
}

fn square_image(max: u32) -> impl Strategy<Value = RgbImage> {
    (1..=max).prop_flat_map(|n| {
        proptest::collection::vec(any::<u8>(), (n * n * 3) as usize)
            .prop_map(move |buf| RgbImage::from_raw(n, n, buf).unwrap())
    })
}

/// Destination of pixel (x, y) under o, worked out by hand: mirror first,
/// then quarter turns counter-clockwise, each sending (x, y) to (y, n-1-x).
fn forward(o: Orientation, n: u32, x: u32, y: u32) -> (u32, u32) {
    let (mut x, mut y) = (x, y);
    if o.is_mirrored() {
        x = n - 1 - x;
    }
    for _ in 0..o.quarter_turns() {
        (x, y) = (y, n - 1 - x);
    }
    (x, y)
}

fn meta(patch_id: u64, slide_id: u32, x: u32, y: u32) -> PatchMeta {
    PatchMeta {
        patch_id,
        slide_id,
        magnification: Magnification::X40,
        x,
        y,
        side_px: 300,
    }
}

fn entries_from(vectors: &[Vec<f32>]) -> Vec<IndexEntry> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| IndexEntry {
            patch: meta((i / 8) as u64, (i / 8 % 3) as u32, (i / 8 * 700) as u32, 0),
            orientation: Orientation::from_code((i % 8) as u8).unwrap(),
            embedding: Embedding::new(v.clone()).unwrap(),
        })
        .collect()
}

fn label_set() -> impl Strategy<Value = LabelSet> {
    (
        proptest::collection::btree_set(prop_oneof!["a", "b", "c"], 0..3),
        proptest::option::of(any::<bool>()),
        proptest::option::of(0usize..4),
    )
        .prop_map(|(features, tumor, grade)| LabelSet {
            histologic_features: features.into_iter().collect::<BTreeSet<_>>(),
            organ: None,
            gleason: grade.map(|g| Gleason::ALL[g]),
            tumor_present: tumor,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orientation_moves_pixels_as_described(img in square_image(9), o in orientation()) {
        let n = img.width();
        let out = apply_orientation(&img, o).unwrap();
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = forward(o, n, x, y);
                prop_assert_eq!(out.get_pixel(dx, dy), img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn orientation_application_is_a_group_action(img in square_image(7), a in orientation(), b in orientation()) {
        let twice = apply_orientation(&apply_orientation(&img, b).unwrap(), a).unwrap();
        prop_assert_eq!(twice, apply_orientation(&img, a.compose(b)).unwrap());
        let back = apply_orientation(&apply_orientation(&img, a).unwrap(), a.inverse()).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn reference_embedding_permutes_under_rotation(seed in any::<u64>(), o in orientation()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Blocky texture so gradients are not all noise.
        let cells: Vec<[u8; 3]> = (0..64).map(|_| rng.random()).collect();
        let img = RgbImage::from_fn(224, 224, |x, y| image::Rgb(cells[(y / 28 * 8 + x / 28) as usize]));
        let a = ReferenceEmbedder.embed(&img).unwrap();
        let b = ReferenceEmbedder.embed(&apply_orientation(&img, o).unwrap()).unwrap();
        if o.is_mirrored() {
            // Raw color counts are equal; the norm may differ through edge-aligned gradients.
            let color = |e: &Embedding| e.as_slice()[..48].iter().map(|v| v / e.as_slice()[..48].iter().cloned().fold(0.0, f32::max)).collect::<Vec<_>>();
            let (ca, cb) = (color(&a), color(&b));
            for (x, y) in ca.iter().zip(&cb) {
                prop_assert!((x - y).abs() < 1e-5);
            }
            return Ok(());
        }
        prop_assert_eq!(&a.as_slice()[..48], &b.as_slice()[..48]);
        let bits = |e: &Embedding| {
            let mut v: Vec<u32> = e.as_slice().iter().map(|x| x.to_bits()).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn search_equals_exhaustive_ranking(
        vectors in proptest::collection::vec(proptest::collection::vec(-4i8..4, 3), 8..200),
        q in proptest::collection::vec(-4i8..4, 3),
        m in 1usize..40,
        shards in 1usize..4,
    ) {
        // Small integer grids force many exact ties.
        let vectors: Vec<Vec<f32>> = vectors.iter().map(|v| v.iter().map(|&x| x as f32).collect()).collect();
        let q: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let params = IndexParams { n_shards: shards, leaf_target: 4, ..IndexParams::default() };
        let db = ShardSet::build("t", 3, entries_from(&vectors), &params).unwrap();
        let got: Vec<(u64, u8, f64)> = db
            .search(&q, m)
            .unwrap()
            .iter()
            .map(|h| (h.patch.patch_id, h.orientation.code(), h.distance_sq))
            .collect();
        let mut expect: Vec<(u64, u8, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d: f64 = v.iter().zip(&q).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                ((i / 8) as u64, (i % 8) as u8, d)
            })
            .collect();
        expect.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        expect.truncate(m);
        prop_assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(&expect) {
            prop_assert!(g.2 >= 0.0);
            prop_assert_eq!(g, e);
        }
    }

    #[test]
    fn filter_pipeline_is_idempotent_and_separated(
        points in proptest::collection::vec((0u32..3, 0u32..20, 0u32..20), 1..80),
        sep in 0u32..4000,
    ) {
        let vectors: Vec<Vec<f32>> = points.iter().map(|p| vec![p.1 as f32]).collect();
        let mut entries = entries_from(&vectors);
        for (e, (i, p)) in entries.iter_mut().zip(points.iter().enumerate()) {
            e.patch = meta((i / 8) as u64, p.0, p.1 * 300, p.2 * 300);
        }
        // Orientations of one patch must share metadata.
        for i in 0..entries.len() {
            entries[i].patch = entries[i / 8 * 8].patch;
        }
        let db = ShardSet::build("t", 1, entries, &IndexParams::default()).unwrap();
        let hits = db.search(&[0.0], db.len()).unwrap();
        let spec = QuerySpec::pixels(RgbImage::new(300, 300)).with_min_separation(sep as f64);
        let once = filter_hits(&hits, &spec);
        prop_assert_eq!(&filter_hits(&once, &spec), &once);
        prop_assert_eq!(&diversity_filter_hits(&once, sep as f64), &once);
        let ids: BTreeSet<u64> = once.iter().map(|h| h.patch.patch_id).collect();
        prop_assert_eq!(ids.len(), once.len());
        for (i, a) in once.iter().enumerate() {
            for b in &once[i + 1..] {
                prop_assert!(b.canonical_cmp(a).is_ge());
                if a.patch.slide_id == b.patch.slide_id {
                    let (ca, cb) = (a.patch.base_center(), b.patch.base_center());
                    prop_assert!((ca.0 - cb.0).hypot(ca.1 - cb.1) >= sep as f64);
                }
            }
        }
    }

    #[test]
    fn chi_squared_symmetric_and_bounded(a in 0u64..500, an in 1u64..500, b in 0u64..500, bn in 1u64..500) {
        let (a, b) = (a.min(an), b.min(bn));
        match (chi_squared_2x2(a, an, b, bn), chi_squared_2x2(b, bn, a, an)) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x.statistic - y.statistic).abs() <= 1e-9 * x.statistic.max(1.0));
                prop_assert!(x.statistic >= 0.0);
                prop_assert!((0.0..=1.0).contains(&x.p_value));
                // Swapping hits and misses leaves the test unchanged too.
                let z = chi_squared_2x2(an - a, an, bn - b, bn).unwrap();
                prop_assert!((x.statistic - z.statistic).abs() <= 1e-9 * x.statistic.max(1.0));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "asymmetric failure"),
        }
    }

    #[test]
    fn rubric_is_symmetric_and_on_the_scale(q in label_set(), r in label_set()) {
        match (rubric_score(&q, &r), rubric_score(&r, &q)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!([0, 25, 50, 75, 100].contains(&x));
            }
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
        }
    }
}
