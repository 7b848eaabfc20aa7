use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::chi2::{chi_squared_2x2, ChiSquaredResult};
use super::metrics::{
    confusion_matrix, has_axis, metric_variants, per_class_top_k, query_classes, top_k_counts,
    ConfusionMatrix, LabelAxis, MatchMode,
};
use super::rubric::rubric_score;
use super::run::{RetrievalRun, RunConfig};
use crate::error::{Error, Result};
use crate::model::Magnification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub k: usize,
    pub axis: LabelAxis,
    pub mode: MatchMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 5,
            axis: LabelAxis::Feature,
            mode: MatchMode::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub name: String,
    pub result: ChiSquaredResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub options: EvalOptions,
    pub queries: usize,
    pub exhausted_queries: usize,
    pub top_k: f64,
    pub top_k_scores: BTreeMap<usize, f64>,
    pub mean_match: f64,
    pub rank_weighted: f64,
    pub confusion: ConfusionMatrix,
    pub per_class_top_k: BTreeMap<String, f64>,
    /// Present when every query carries the corresponding labels.
    pub organ_match: Option<f64>,
    pub gleason_match: Option<f64>,
    pub combined_match: Option<f64>,
    pub rubric_mean: Option<f64>,
    /// Top-k score of the comparison run, when one was given.
    pub baseline_top_k: Option<f64>,
    pub tests: Vec<NamedTest>,
}

fn optional_axis(run: &RetrievalRun, axis: LabelAxis, opts: &EvalOptions) -> Result<Option<f64>> {
    if run.is_empty() || !run.queries.iter().all(|q| has_axis(&q.query.labels, axis)) {
        return Ok(None);
    }
    let (h, n) = top_k_counts(run, opts.k, axis, opts.mode)?;
    Ok(Some(h as f64 / n as f64))
}

/// Mean rubric score over every (query, top-k result) pair, when all carry tumor flags.
pub fn rubric_mean(run: &RetrievalRun, k: usize) -> Result<Option<f64>> {
    let mut sum = 0u64;
    let mut count = 0u64;
    for q in &run.queries {
        for r in q.results.iter().take(k) {
            match rubric_score(&q.query.labels, &r.labels) {
                Ok(s) => {
                    sum += s as u64;
                    count += 1;
                }
                Err(Error::MissingTumorFlag) | Err(Error::MissingGrade) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((count > 0).then(|| sum as f64 / count as f64))
}

/// Scores a run; with a `baseline`, also tests the top-k rates against each other.
pub fn evaluate(
    run: &RetrievalRun,
    opts: &EvalOptions,
    baseline: Option<&RetrievalRun>,
) -> Result<EvalReport> {
    let variants = metric_variants(run, opts.k, opts.axis, opts.mode)?;
    let (hits, n) = top_k_counts(run, opts.k, opts.axis, opts.mode)?;
    let classes = query_classes(run, opts.axis);
    let mut tests = Vec::new();
    let mut baseline_top_k = None;
    if let Some(b) = baseline {
        let (bh, bn) = top_k_counts(b, opts.k, opts.axis, opts.mode)?;
        baseline_top_k = Some(if bn == 0 { 0.0 } else { bh as f64 / bn as f64 });
        tests.push(NamedTest {
            name: format!(
                "top_{}_{:?}_vs_{:?}",
                opts.k, run.config.provenance, b.config.provenance
            )
            .to_lowercase(),
            result: chi_squared_2x2(hits, n, bh, bn)?,
        });
    }
    Ok(EvalReport {
        config: run.config.clone(),
        options: opts.clone(),
        queries: run.len(),
        exhausted_queries: run.queries.iter().filter(|q| q.exhausted).count(),
        top_k: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        top_k_scores: variants.top_k_curve,
        mean_match: variants.mean_match,
        rank_weighted: variants.rank_weighted,
        confusion: confusion_matrix(run, &classes, opts.k, opts.axis)?,
        per_class_top_k: per_class_top_k(run, &classes, opts.k, opts.axis, opts.mode)?,
        organ_match: optional_axis(run, LabelAxis::Organ, opts)?,
        gleason_match: optional_axis(run, LabelAxis::Gleason, opts)?,
        combined_match: optional_axis(run, LabelAxis::FeatureAndOrgan, opts)?,
        rubric_mean: rubric_mean(run, opts.k)?,
        baseline_top_k,
        tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub magnifications: Vec<Magnification>,
    /// Database patches per class.
    pub db_sizes: Vec<usize>,
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub magnification: Magnification,
    pub db_size: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub point: SweepPoint,
    pub report: EvalReport,
}

/// Evaluates every grid point. `build` is called once per (magnification,
/// db size) and must return results deep enough for the largest k.
/// Points come out by magnification (grid order), then ascending size and k.
pub fn sweep(
    grid: &SweepGrid,
    opts: &EvalOptions,
    mut build: impl FnMut(Magnification, usize) -> Result<RetrievalRun>,
) -> Result<Vec<SweepEntry>> {
    let mut sizes = grid.db_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut ks = grid.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    if grid.magnifications.is_empty() || sizes.is_empty() || ks.is_empty() || ks[0] == 0 {
        return Err(Error::InvalidArgument(
            "sweep grid needs magnifications, sizes and positive ks".into(),
        ));
    }
    let mut out = Vec::new();
    for &mag in &grid.magnifications {
        for &size in &sizes {
            let run = build(mag, size)?;
            for &k in &ks {
                let o = EvalOptions { k, ..opts.clone() };
                out.push(SweepEntry {
                    point: SweepPoint {
                        magnification: mag,
                        db_size: size,
                        k,
                    },
                    report: evaluate(&run, &o, None)?,
                });
            }
        }
    }
    Ok(out)
}

/// Tab-separated sweep curves, one line per grid point.
pub fn sweep_tsv(entries: &[SweepEntry]) -> String {
    let mut out = String::from("magnification\tdb_size\tk\ttop_k\tmean_match\trank_weighted\n");
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.point.magnification,
            e.point.db_size,
            e.point.k,
            e.report.top_k,
            e.report.mean_match,
            e.report.rank_weighted
        ));
    }
    out
}
