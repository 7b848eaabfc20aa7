use crate::error::{Error, Result};
use crate::model::LabelSet;

/// Match-quality score of result `r` for query `q`, on the 0..=100 scale in steps of 25.
///
/// | score | condition |
/// |---|---|
/// | 0 | tumor presence differs, no shared feature |
/// | 25 | tumor presence differs, some shared feature |
/// | 50 | both tumor, grades differ |
/// | 75 | same grade, or both free of tumor |
/// | 100 | as 75, plus some shared feature |
///
/// Visual dissimilarity is taken to mean disjoint feature sets.
pub fn rubric_score(q: &LabelSet, r: &LabelSet) -> Result<u8> {
    let tq = q.tumor_present.ok_or(Error::MissingTumorFlag)?;
    let tr = r.tumor_present.ok_or(Error::MissingTumorFlag)?;
    let overlap = !q.histologic_features.is_disjoint(&r.histologic_features);
    if tq != tr {
        return Ok(if overlap { 25 } else { 0 });
    }
    if tq {
        let gq = q.gleason.ok_or(Error::MissingGrade)?;
        let gr = r.gleason.ok_or(Error::MissingGrade)?;
        if gq != gr {
            return Ok(50);
        }
    }
    Ok(if overlap { 100 } else { 75 })
}
