//! Blinded rating studies: arm assignment, rating validation, the
//! append-only session journal and the post-close reveal.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use patchsearch::eval::{chi_squared_2x2, ChiSquaredResult};
use patchsearch::query::QuerySpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Results shown per study query.
pub const RESULTS_PER_QUERY: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("{0}")]
    Invalid(String),
    #[error("journal {path}: {message}")]
    Journal { path: PathBuf, message: String },
}

/// Rating scale of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 0 or 100.
    #[default]
    Binary,
    /// 0, 100 or "unclear".
    Organ,
    /// 0 to 100 in steps of 25.
    Rubric,
}

impl Scale {
    pub fn allowed(self) -> Vec<Score> {
        match self {
            Scale::Binary => vec![Score::Points(0), Score::Points(100)],
            Scale::Organ => vec![Score::Points(0), Score::Points(100), Score::Unclear],
            Scale::Rubric => (0..=4).map(|i| Score::Points(i * 25)).collect(),
        }
    }

    pub fn check(self, score: Score) -> Result<(), StudyError> {
        if self.allowed().contains(&score) {
            Ok(())
        } else {
            Err(StudyError::Invalid(format!(
                "score {score} is not on the {self:?} scale (allowed: {})",
                self.allowed()
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

/// A rating: points, or "unclear" where the scale permits it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Score {
    Points(u32),
    Unclear,
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Points(p) => write!(f, "{p}"),
            Score::Unclear => f.write_str("unclear"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Points(p) => s.serialize_u32(*p),
            Score::Unclear => s.serialize_str("unclear"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Points(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Points(p) => Ok(Score::Points(p)),
            Raw::Text(t) if t == "unclear" => Ok(Score::Unclear),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "score must be a number or \"unclear\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Engine,
    Random,
}

/// Exactly `round(fraction * n)` random-arm queries, placed by a seeded shuffle.
pub fn assign_arms(n: usize, random_fraction: f64, seed: u64) -> Vec<Arm> {
    let n_random = ((random_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut arms = vec![Arm::Engine; n];
    for &i in &order[..n_random] {
        arms[i] = Arm::Random;
    }
    arms
}

/// `count` distinct opaque 16-hex-digit tokens.
pub fn image_tokens(seed: u64, count: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f1a_6e5a);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = format!("{:016x}", rng.random::<u64>());
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub spec: QuerySpec,
    pub arm: Arm,
    /// Result patch ids in display order.
    pub results: Vec<u64>,
    pub query_token: String,
    pub result_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub rater_id: String,
    pub scale: Scale,
    pub seed: u64,
    pub queries: Vec<PlannedQuery>,
}

/// What a study image token points at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageRef<'a> {
    Query(&'a QuerySpec),
    Patch(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Created {
        plan: SessionPlan,
    },
    Rated {
        query_index: usize,
        result_index: usize,
        score: Score,
    },
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub plan: SessionPlan,
    /// Latest score per (query, result).
    pub ratings: BTreeMap<(usize, usize), Score>,
    pub closed: bool,
}

impl Session {
    pub fn new(plan: SessionPlan) -> Result<Session, StudyError> {
        if plan.queries.is_empty() {
            return Err(StudyError::Invalid(
                "a session needs at least one query".into(),
            ));
        }
        for (i, q) in plan.queries.iter().enumerate() {
            if q.results.len() != RESULTS_PER_QUERY || q.result_tokens.len() != RESULTS_PER_QUERY {
                return Err(StudyError::Invalid(format!(
                    "query {i} has {} results, expected {RESULTS_PER_QUERY}",
                    q.results.len()
                )));
            }
        }
        Ok(Session {
            plan,
            ratings: BTreeMap::new(),
            closed: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.plan.session_id
    }

    fn ensure_open(&self) -> Result<(), StudyError> {
        if self.closed {
            Err(StudyError::Closed(self.id().to_string()))
        } else {
            Ok(())
        }
    }

    /// First query that still has unrated results.
    pub fn next_query(&self) -> Result<Option<usize>, StudyError> {
        self.ensure_open()?;
        Ok((0..self.plan.queries.len())
            .find(|&q| (0..RESULTS_PER_QUERY).any(|r| !self.ratings.contains_key(&(q, r)))))
    }

    /// Validates a rating and returns the journal event that records it.
    pub fn check_rating(
        &self,
        query_index: usize,
        result_index: usize,
        score: Score,
    ) -> Result<JournalEvent, StudyError> {
        self.ensure_open()?;
        if query_index >= self.plan.queries.len() {
            return Err(StudyError::Invalid(format!(
                "query_index {query_index} out of range 0..{}",
                self.plan.queries.len()
            )));
        }
        if result_index >= RESULTS_PER_QUERY {
            return Err(StudyError::Invalid(format!(
                "result_index {result_index} out of range 0..{RESULTS_PER_QUERY}"
            )));
        }
        self.plan.scale.check(score)?;
        Ok(JournalEvent::Rated {
            query_index,
            result_index,
            score,
        })
    }

    pub fn check_close(&self) -> Result<Option<JournalEvent>, StudyError> {
        Ok((!self.closed).then_some(JournalEvent::Closed))
    }

    /// Applies a journaled mutation. `Created` only starts a session.
    pub fn apply(&mut self, event: &JournalEvent) -> Result<(), StudyError> {
        match *event {
            JournalEvent::Created { .. } => {
                return Err(StudyError::Invalid("session already created".into()));
            }
            JournalEvent::Rated {
                query_index,
                result_index,
                score,
            } => {
                self.check_rating(query_index, result_index, score)?;
                self.ratings.insert((query_index, result_index), score);
            }
            JournalEvent::Closed => self.closed = true,
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.plan.queries.len() * RESULTS_PER_QUERY - self.ratings.len()
    }

    pub fn image(&self, token: &str) -> Option<ImageRef<'_>> {
        self.plan.queries.iter().find_map(|q| {
            if q.query_token == token {
                return Some(ImageRef::Query(&q.spec));
            }
            q.result_tokens
                .iter()
                .position(|t| t == token)
                .map(|i| ImageRef::Patch(q.results[i]))
        })
    }

    pub fn reveal(&self) -> Result<Reveal, StudyError> {
        if !self.closed {
            return Err(StudyError::Invalid(
                "arms are revealed only after close".into(),
            ));
        }
        let mut aggregates: BTreeMap<Arm, ArmSummary> = BTreeMap::new();
        let mut queries = Vec::new();
        for (qi, q) in self.plan.queries.iter().enumerate() {
            let scores: Vec<Option<Score>> = (0..RESULTS_PER_QUERY)
                .map(|r| self.ratings.get(&(qi, r)).copied())
                .collect();
            let agg = aggregates.entry(q.arm).or_default();
            agg.queries += 1;
            for s in scores.iter().flatten() {
                agg.ratings += 1;
                match s {
                    Score::Points(p) => {
                        agg.points_sum += *p as u64;
                        agg.scored += 1;
                        agg.full_marks += (*p == 100) as u64;
                    }
                    Score::Unclear => agg.unclear += 1,
                }
            }
            queries.push(RevealedQuery {
                query_index: qi,
                arm: q.arm,
                results: q.results.clone(),
                scores,
            });
        }
        for a in aggregates.values_mut() {
            a.mean_score = (a.scored > 0).then(|| a.points_sum as f64 / a.scored as f64);
        }
        let test = match (aggregates.get(&Arm::Engine), aggregates.get(&Arm::Random)) {
            (Some(e), Some(r)) => {
                chi_squared_2x2(e.full_marks, e.scored, r.full_marks, r.scored).ok()
            }
            _ => None,
        };
        Ok(Reveal {
            session_id: self.id().to_string(),
            rater_id: self.plan.rater_id.clone(),
            scale: self.plan.scale,
            seed: self.plan.seed,
            queries,
            aggregates,
            full_marks_engine_vs_random: test,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub queries: u64,
    pub ratings: u64,
    /// Ratings with points (not "unclear").
    pub scored: u64,
    pub points_sum: u64,
    pub full_marks: u64,
    pub unclear: u64,
    pub mean_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedQuery {
    pub query_index: usize,
    pub arm: Arm,
    pub results: Vec<u64>,
    pub scores: Vec<Option<Score>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub session_id: String,
    pub rater_id: String,
    pub scale: Scale,
    pub seed: u64,
    pub queries: Vec<RevealedQuery>,
    pub aggregates: BTreeMap<Arm, ArmSummary>,
    /// Chi-squared test of the share of 100-point ratings, engine arm against random arm.
    pub full_marks_engine_vs_random: Option<ChiSquaredResult>,
}

/// One NDJSON file per session; every event is synced before it is applied.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

fn journal_err(path: &Path, e: impl fmt::Display) -> StudyError {
    StudyError::Journal {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl Journal {
    pub fn path_for(dir: &Path, session_id: &str) -> PathBuf {
        dir.join(format!("{session_id}.ndjson"))
    }

    /// Opens (creating if needed) the journal of a session for appending.
    pub fn open(dir: &Path, session_id: &str) -> Result<Journal, StudyError> {
        fs::create_dir_all(dir).map_err(|e| journal_err(dir, e))?;
        let path = Self::path_for(dir, session_id);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| journal_err(&path, e))?;
        Ok(Journal { path, file })
    }

    pub fn append(&mut self, event: &JournalEvent) -> Result<(), StudyError> {
        let mut line = serde_json::to_vec(event).map_err(|e| journal_err(&self.path, e))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .map_err(|e| journal_err(&self.path, e))?;
        self.file
            .sync_data()
            .map_err(|e| journal_err(&self.path, e))
    }
}

/// Rebuilds one session from its journal. A final line without a newline is
/// a torn write and is dropped.
pub fn replay_file(path: &Path) -> Result<Session, StudyError> {
    let text = fs::read_to_string(path).map_err(|e| journal_err(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| journal_err(path, "empty journal"))?;
    let JournalEvent::Created { plan } =
        serde_json::from_str(first).map_err(|e| journal_err(path, e))?
    else {
        return Err(journal_err(path, "journal must start with a created event"));
    };
    let mut session = Session::new(plan)?;
    for (n, line) in lines.enumerate() {
        let event: JournalEvent = serde_json::from_str(line)
            .map_err(|e| journal_err(path, format!("line {}: {e}", n + 2)))?;
        session
            .apply(&event)
            .map_err(|e| journal_err(path, format!("line {}: {e}", n + 2)))?;
    }
    Ok(session)
}

/// Every session journaled in `dir`, by session id.
pub fn replay_dir(dir: &Path) -> Result<BTreeMap<String, Session>, StudyError> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| journal_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    paths.sort();
    for p in paths {
        let s = replay_file(&p)?;
        out.insert(s.id().to_string(), s);
    }
    Ok(out)
}
