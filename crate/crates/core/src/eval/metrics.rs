use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::RetrievalRun;
use crate::error::{Error, Result};
use crate::model::{LabelSet, PatchRecord};

/// Which labels a query and a result must share to count as a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAxis {
    Feature,
    Organ,
    Gleason,
    /// Feature and organ must both match.
    FeatureAndOrgan,
}

impl LabelAxis {
    pub const ALL: [LabelAxis; 4] = [
        LabelAxis::Feature,
        LabelAxis::Organ,
        LabelAxis::Gleason,
        LabelAxis::FeatureAndOrgan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelAxis::Feature => "feature",
            LabelAxis::Organ => "organ",
            LabelAxis::Gleason => "gleason",
            LabelAxis::FeatureAndOrgan => "feature_and_organ",
        }
    }
}

impl fmt::Display for LabelAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label axis `{s}`")))
    }
}

/// Lenient: any shared feature. Strict: equal primary (lexicographically first) feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Lenient,
    Strict,
}

fn feature_match(q: &LabelSet, r: &LabelSet, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Lenient => !q.histologic_features.is_disjoint(&r.histologic_features),
        MatchMode::Strict => {
            let a = q.histologic_features.iter().next();
            a.is_some() && a == r.histologic_features.iter().next()
        }
    }
}

pub fn labels_match(q: &LabelSet, r: &LabelSet, axis: LabelAxis, mode: MatchMode) -> bool {
    let organ = || q.organ.is_some() && q.organ == r.organ;
    match axis {
        LabelAxis::Feature => feature_match(q, r, mode),
        LabelAxis::Organ => organ(),
        LabelAxis::Gleason => q.gleason.is_some() && q.gleason == r.gleason,
        LabelAxis::FeatureAndOrgan => feature_match(q, r, mode) && organ(),
    }
}

pub fn has_axis(l: &LabelSet, axis: LabelAxis) -> bool {
    match axis {
        LabelAxis::Feature => !l.histologic_features.is_empty(),
        LabelAxis::Organ => l.organ.is_some(),
        LabelAxis::Gleason => l.gleason.is_some(),
        LabelAxis::FeatureAndOrgan => !l.histologic_features.is_empty() && l.organ.is_some(),
    }
}

fn require_axis(q: &PatchRecord, axis: LabelAxis) -> Result<()> {
    if has_axis(&q.labels, axis) {
        Ok(())
    } else {
        Err(Error::MissingAxis {
            axis: axis.to_string(),
            patch_id: q.patch_id,
        })
    }
}

/// Every class a label set belongs to on `axis`.
pub fn axis_classes(l: &LabelSet, axis: LabelAxis) -> Vec<String> {
    match axis {
        LabelAxis::Feature => l.histologic_features.iter().cloned().collect(),
        LabelAxis::Organ => l.organ.iter().cloned().collect(),
        LabelAxis::Gleason => l.gleason.iter().map(|g| g.to_string()).collect(),
        LabelAxis::FeatureAndOrgan => match &l.organ {
            Some(o) => l
                .histologic_features
                .iter()
                .map(|f| format!("{f}/{o}"))
                .collect(),
            None => Vec::new(),
        },
    }
}

/// The query's class for per-class breakdowns: its first class on `axis`.
pub fn primary_class(l: &LabelSet, axis: LabelAxis) -> Option<String> {
    axis_classes(l, axis).into_iter().next()
}

fn matches_in_top(
    run_query: &super::run::RunQuery,
    k: usize,
    axis: LabelAxis,
    mode: MatchMode,
) -> Vec<bool> {
    run_query
        .results
        .iter()
        .take(k)
        .map(|r| labels_match(&run_query.query.labels, &r.labels, axis, mode))
        .collect()
}

/// Number of queries with at least one match in the top `k`, and the number of queries.
pub fn top_k_counts(
    run: &RetrievalRun,
    k: usize,
    axis: LabelAxis,
    mode: MatchMode,
) -> Result<(u64, u64)> {
    let mut hits = 0u64;
    for q in &run.queries {
        require_axis(&q.query, axis)?;
        if matches_in_top(q, k, axis, mode).into_iter().any(|m| m) {
            hits += 1;
        }
    }
    Ok((hits, run.queries.len() as u64))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of queries with at least one matching result among the first `k`.
pub fn top_k_score(run: &RetrievalRun, k: usize, axis: LabelAxis, mode: MatchMode) -> Result<f64> {
    let (hits, n) = top_k_counts(run, k, axis, mode)?;
    Ok(ratio(hits, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVariants {
    /// Matches among the top `k`, divided by `k` times the number of queries.
    pub mean_match: f64,
    /// Linear rank weights `(k - r + 1) / (k (k + 1) / 2)` summed over matches, averaged over queries.
    pub rank_weighted: f64,
    /// Top-k score for k = 1..=10.
    pub top_k_curve: BTreeMap<usize, f64>,
}

pub const CURVE_MAX_K: usize = 10;

pub fn metric_variants(
    run: &RetrievalRun,
    k: usize,
    axis: LabelAxis,
    mode: MatchMode,
) -> Result<MetricVariants> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut matched = 0u64;
    let mut weighted = 0u64;
    for q in &run.queries {
        require_axis(&q.query, axis)?;
        for (r, m) in matches_in_top(q, k, axis, mode).into_iter().enumerate() {
            if m {
                matched += 1;
                weighted += (k - r) as u64;
            }
        }
    }
    let n = run.queries.len() as u64;
    let k64 = k as u64;
    let mut top_k_curve = BTreeMap::new();
    for kk in 1..=CURVE_MAX_K {
        top_k_curve.insert(kk, top_k_score(run, kk, axis, mode)?);
    }
    Ok(MetricVariants {
        mean_match: ratio(matched, n * k64),
        rank_weighted: ratio(weighted, n * k64 * (k64 + 1) / 2),
        top_k_curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `rows[i][j]`: fraction of class-i queries with a class-j result in the top `k`.
    pub rows: Vec<Vec<f64>>,
    pub query_counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.rows) {
            out.push_str(c);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn class_position(classes: &[String], c: &str) -> Result<usize> {
    classes
        .iter()
        .position(|x| x == c)
        .ok_or_else(|| Error::UnknownClass(c.to_string()))
}

/// Queries are grouped by primary class; a result counts toward every class it carries.
/// Rows need not sum to one.
pub fn confusion_matrix(
    run: &RetrievalRun,
    classes: &[String],
    k: usize,
    axis: LabelAxis,
) -> Result<ConfusionMatrix> {
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    let mut totals = vec![0u64; c];
    for q in &run.queries {
        require_axis(&q.query, axis)?;
        let i = class_position(
            classes,
            &primary_class(&q.query.labels, axis).expect("axis present"),
        )?;
        totals[i] += 1;
        let mut seen = vec![false; c];
        for r in q.results.iter().take(k) {
            for rc in axis_classes(&r.labels, axis) {
                if let Some(j) = classes.iter().position(|x| *x == rc) {
                    seen[j] = true;
                }
            }
        }
        for (j, s) in seen.into_iter().enumerate() {
            counts[i][j] += s as u64;
        }
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        rows: counts
            .iter()
            .zip(&totals)
            .map(|(row, &t)| row.iter().map(|&h| ratio(h, t)).collect())
            .collect(),
        query_counts: totals,
    })
}

/// Top-k score restricted to the queries of each primary class.
pub fn per_class_top_k(
    run: &RetrievalRun,
    classes: &[String],
    k: usize,
    axis: LabelAxis,
    mode: MatchMode,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for class in classes {
        let subset = RetrievalRun {
            config: run.config.clone(),
            queries: run
                .queries
                .iter()
                .filter(|q| primary_class(&q.query.labels, axis).as_deref() == Some(class.as_str()))
                .cloned()
                .collect(),
        };
        out.insert(class.clone(), top_k_score(&subset, k, axis, mode)?);
    }
    Ok(out)
}

/// Sorted distinct primary classes of the run's queries.
pub fn query_classes(run: &RetrievalRun, axis: LabelAxis) -> Vec<String> {
    let mut v: Vec<String> = run
        .queries
        .iter()
        .filter_map(|q| primary_class(&q.query.labels, axis))
        .collect();
    v.sort();
    v.dedup();
    v
}
