use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PatchRecord;

/// Which labels define a class for balancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAxis {
    Feature,
    Gleason,
    FeatureXOrgan,
}

/// The balancing class of a patch; multi-label patches use their
/// lexicographically first feature.
pub fn class_key(patch: &PatchRecord, axis: ClassAxis) -> Option<String> {
    let first_feature = || patch.labels.histologic_features.iter().next().cloned();
    match axis {
        ClassAxis::Feature => first_feature(),
        ClassAxis::Gleason => patch.labels.gleason.map(|g| g.to_string()),
        ClassAxis::FeatureXOrgan => {
            let organ = patch.labels.organ.as_ref()?;
            Some(format!("{}/{}", first_feature()?, organ))
        }
    }
}

/// Per class, `n` patches drawn without replacement, in draw order.
fn draw(
    patches: &[PatchRecord],
    n: usize,
    axis: ClassAxis,
    seed: u64,
) -> Result<BTreeMap<String, Vec<PatchRecord>>> {
    let mut by_class: BTreeMap<String, Vec<&PatchRecord>> = BTreeMap::new();
    for p in patches {
        if let Some(key) = class_key(p, axis) {
            by_class.entry(key).or_default().push(p);
        }
    }
    let short: Vec<(String, usize)> = by_class
        .iter()
        .filter(|(_, v)| v.len() < n)
        .map(|(k, v)| (k.clone(), v.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::ClassUnderflow { needed: n, short });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(by_class
        .into_iter()
        .map(|(class, mut members)| {
            members.sort_by_key(|p| p.patch_id);
            let picked = sample(&mut rng, members.len(), n)
                .into_iter()
                .map(|i| members[i].clone())
                .collect();
            (class, picked)
        })
        .collect())
}

/// Exactly `n_per_class` patches of every class present on `axis`, sampled
/// without replacement. Output is sorted by patch id.
pub fn sample_balanced(
    patches: &[PatchRecord],
    n_per_class: usize,
    axis: ClassAxis,
    seed: u64,
) -> Result<Vec<PatchRecord>> {
    let mut out: Vec<PatchRecord> = draw(patches, n_per_class, axis, seed)?
        .into_values()
        .flatten()
        .collect();
    out.sort_by_key(|p| p.patch_id);
    Ok(out)
}

/// Disjoint balanced query and database sets: per class, the first
/// `n_query` draws become queries and the next `n_db` go to the database.
pub fn split_balanced(
    patches: &[PatchRecord],
    n_query: usize,
    n_db: usize,
    axis: ClassAxis,
    seed: u64,
) -> Result<(Vec<PatchRecord>, Vec<PatchRecord>)> {
    let mut queries = Vec::new();
    let mut db = Vec::new();
    for (_, picked) in draw(patches, n_query + n_db, axis, seed)? {
        let mut it = picked.into_iter();
        queries.extend(it.by_ref().take(n_query));
        db.extend(it);
    }
    queries.sort_by_key(|p| p.patch_id);
    db.sort_by_key(|p| p.patch_id);
    Ok((queries, db))
}
