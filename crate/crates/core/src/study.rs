//! Two-phase rating studies.
//!
//! Each examiner rates every case twice (phases T0 and T1), each time in a
//! seeded order of their own, and the T1 order always differs from T0 when
//! there are at least two cases. A trainer's labels serve as the reference.
//!
//! A study on disk is a directory holding `manifest.json` and an
//! append-only `ratings.jsonl` event log in the ratings-file line format.
//! All state is derived from the log, so reopening a study replays it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{
    study_tables, AgreementError, Coverage, Phase, RatingRecord, SpaceTables, TablesConfig,
};
use crate::geometry::{GeometryError, LabelSpace, SectorLabel};
use crate::rng::{fnv1a, stream, Purpose};

const MANIFEST: &str = "manifest.json";
const LOG: &str = "ratings.jsonl";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("study {0} already exists")]
    DuplicateStudyId(String),
    #[error("a study needs at least one case")]
    EmptyCaseList,
    #[error("a study needs at least one rater")]
    NoRaters,
    #[error("invalid study definition: {0}")]
    InvalidSpec(String),
    #[error("no study {0}")]
    UnknownStudy(String),
    #[error("rater {0} is not on the study roster")]
    UnknownRater(String),
    #[error("case {0} is not part of the study")]
    UnknownCase(String),
    #[error("phase {phase} is not open for rater {rater}: {reason}")]
    PhaseNotOpen {
        rater: String,
        phase: Phase,
        reason: String,
    },
    #[error("case {got} is not the current item (expected {})", .expected.as_deref().unwrap_or("none, phase complete"))]
    OutOfOrderRating { expected: Option<String>, got: String },
    #[error("case {case} already rated {existing}, got {submitted}")]
    ConflictingRating {
        case: String,
        existing: SectorLabel,
        submitted: SectorLabel,
    },
    #[error("label {label} does not belong to the {space} system of this study")]
    LabelSpaceMismatch { label: String, space: LabelSpace },
    #[error("unknown sector label {0:?}")]
    InvalidLabel(String),
    #[error("incomplete study: {0}")]
    IncompleteStudy(String),
    #[error("ratings log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRef {
    pub case_id: String,
    /// Path or URL of the image shown to the rater.
    pub asset_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterSpec {
    pub rater_id: String,
    pub group: String,
}

fn default_trainer() -> String {
    "trainer".to_string()
}

fn default_interval() -> u32 {
    28
}

/// Everything needed to create a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study_id: String,
    pub space: LabelSpace,
    pub cases: Vec<CaseRef>,
    pub raters: Vec<RaterSpec>,
    #[serde(default = "default_trainer")]
    pub trainer: String,
    /// Reference labels by case id; empty or covering every case.
    #[serde(default)]
    pub trainer_labels: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: u64,
    /// Planned gap between T0 and T1. Recorded, not enforced.
    #[serde(default = "default_interval")]
    pub interval_days: u32,
}

/// One rater's case order for one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    /// Index of the random stream that produced the permutation.
    pub stream: u64,
    pub cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterOrderings {
    #[serde(rename = "T0")]
    pub t0: Ordering,
    #[serde(rename = "T1")]
    pub t1: Ordering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub study_id: String,
    pub space: LabelSpace,
    pub cases: Vec<CaseRef>,
    pub raters: Vec<RaterSpec>,
    pub trainer: String,
    pub seed: u64,
    pub orderings: BTreeMap<String, RaterOrderings>,
    pub interval_days: u32,
    pub created_at: String,
}

/// Seeded T0 and T1 permutations of `cases` for one rater.
///
/// T0 uses stream 0 of the rater's key; T1 starts at stream 1 and moves on
/// to the next odd stream while the permutation equals T0 (only possible to
/// avoid with two or more cases).
pub fn derive_orderings(seed: u64, rater: &str, cases: &[String]) -> RaterOrderings {
    let key = seed ^ fnv1a(rater.as_bytes());
    let draw = |index: u64| {
        let mut v = cases.to_vec();
        v.shuffle(&mut stream(key, Purpose::Ordering, index));
        Ordering { stream: index, cases: v }
    };
    let t0 = draw(0);
    let mut t1 = draw(1);
    while cases.len() >= 2 && t1.cases == t0.cases {
        t1 = draw(t1.stream + 2);
    }
    RaterOrderings { t0, t1 }
}

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !s.starts_with('.')
}

fn parse_label(space: LabelSpace, s: &str) -> Result<SectorLabel, StudyError> {
    SectorLabel::parse_in(space, s).map_err(|e| match e {
        GeometryError::WrongSpace { .. } => StudyError::LabelSpaceMismatch {
            label: s.to_string(),
            space,
        },
        _ => StudyError::InvalidLabel(s.to_string()),
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl StudyManifest {
    fn build(spec: &StudySpec, created_at: String) -> Result<Self, StudyError> {
        if !valid_id(&spec.study_id) {
            return Err(StudyError::InvalidSpec(format!(
                "study id {:?} must be 1-128 characters of [A-Za-z0-9._-]",
                spec.study_id
            )));
        }
        if spec.cases.is_empty() {
            return Err(StudyError::EmptyCaseList);
        }
        if spec.raters.is_empty() {
            return Err(StudyError::NoRaters);
        }
        let mut seen = BTreeSet::new();
        if let Some(c) = spec.cases.iter().find(|c| !seen.insert(c.case_id.as_str())) {
            return Err(StudyError::InvalidSpec(format!("case {} listed twice", c.case_id)));
        }
        let mut ids = BTreeSet::new();
        for r in &spec.raters {
            if r.rater_id.is_empty() || !ids.insert(r.rater_id.as_str()) {
                return Err(StudyError::InvalidSpec(format!(
                    "rater id {:?} is empty or repeated",
                    r.rater_id
                )));
            }
        }
        if spec.trainer.is_empty() || ids.contains(spec.trainer.as_str()) {
            return Err(StudyError::InvalidSpec(format!(
                "trainer id {:?} must be non-empty and distinct from the raters",
                spec.trainer
            )));
        }
        let case_ids: Vec<String> = spec.cases.iter().map(|c| c.case_id.clone()).collect();
        let orderings = spec
            .raters
            .iter()
            .map(|r| (r.rater_id.clone(), derive_orderings(spec.seed, &r.rater_id, &case_ids)))
            .collect();
        Ok(Self {
            study_id: spec.study_id.clone(),
            space: spec.space,
            cases: spec.cases.clone(),
            raters: spec.raters.clone(),
            trainer: spec.trainer.clone(),
            seed: spec.seed,
            orderings,
            interval_days: spec.interval_days,
            created_at,
        })
    }

    fn ordering(&self, rater: &str, phase: Phase) -> Option<&Ordering> {
        let o = self.orderings.get(rater)?;
        match phase {
            Phase::T0 => Some(&o.t0),
            Phase::T1 => Some(&o.t1),
            Phase::Trainer => None,
        }
    }

    pub fn grouping(&self) -> BTreeMap<String, String> {
        self.raters
            .iter()
            .map(|r| (r.rater_id.clone(), r.group.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhaseStatus {
    NotStarted,
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterStatus {
    pub rater: String,
    pub group: String,
    #[serde(rename = "T0")]
    pub t0: PhaseStatus,
    #[serde(rename = "T1")]
    pub t1: PhaseStatus,
    pub rated_t0: usize,
    pub rated_t1: usize,
    /// False only when T0 and T1 orders coincide (single-case studies).
    pub orderings_differ: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextItem {
    Case {
        case: String,
        asset_ref: String,
        /// 1-based position in the rater's order.
        position: usize,
        total: usize,
    },
    Done { done: bool },
}

/// In-memory state of one study, rebuilt from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub manifest: StudyManifest,
    trainer: BTreeMap<String, SectorLabel>,
    ratings: BTreeMap<(String, Phase), BTreeMap<String, RatingRecord>>,
    log: Vec<RatingRecord>,
    log_path: Option<PathBuf>,
}

impl Study {
    /// A study kept only in memory (no log file).
    pub fn new(spec: &StudySpec) -> Result<Self, StudyError> {
        Self::create_with(spec, None)
    }

    fn create_with(spec: &StudySpec, log_path: Option<PathBuf>) -> Result<Self, StudyError> {
        let manifest = StudyManifest::build(spec, now())?;
        let mut study = Self::empty(manifest, log_path);
        if !spec.trainer_labels.is_empty() {
            let listed: BTreeSet<&str> = spec.cases.iter().map(|c| c.case_id.as_str()).collect();
            let labelled: BTreeSet<&str> = spec.trainer_labels.keys().map(String::as_str).collect();
            if listed != labelled {
                return Err(StudyError::InvalidSpec(
                    "trainer labels must cover exactly the study's cases".into(),
                ));
            }
            let ts = study.manifest.created_at.clone();
            for c in &spec.cases {
                let label = parse_label(spec.space, &spec.trainer_labels[&c.case_id])?;
                study.trainer.insert(c.case_id.clone(), label);
                study.log.push(RatingRecord {
                    study: spec.study_id.clone(),
                    rater: spec.trainer.clone(),
                    phase: Phase::Trainer,
                    case: c.case_id.clone(),
                    label,
                    ts: ts.clone(),
                    elapsed_ms: None,
                });
            }
        }
        Ok(study)
    }

    fn empty(manifest: StudyManifest, log_path: Option<PathBuf>) -> Self {
        Self {
            manifest,
            trainer: BTreeMap::new(),
            ratings: BTreeMap::new(),
            log: Vec::new(),
            log_path,
        }
    }

    /// Rebuilds a study by re-applying every logged record in order.
    pub fn replay(manifest: StudyManifest, records: &[RatingRecord]) -> Result<Self, StudyError> {
        let mut s = Self::empty(manifest, None);
        for (i, r) in records.iter().enumerate() {
            let bad = |e: StudyError| StudyError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            };
            if r.study != s.manifest.study_id {
                return Err(bad(StudyError::UnknownStudy(r.study.clone())));
            }
            if r.phase == Phase::Trainer {
                if r.rater != s.manifest.trainer || r.label.space() != s.manifest.space {
                    return Err(bad(StudyError::InvalidSpec("unexpected trainer record".into())));
                }
                s.trainer.insert(r.case.clone(), r.label);
                s.log.push(r.clone());
            } else {
                s.check(&r.rater, r.phase, &r.case, r.label).map_err(bad)?;
                s.apply(r.clone());
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.manifest.study_id
    }

    /// The full event log, trainer labels first.
    pub fn records(&self) -> &[RatingRecord] {
        &self.log
    }

    pub fn has_trainer_labels(&self) -> bool {
        !self.trainer.is_empty()
    }

    fn rated(&self, rater: &str, phase: Phase) -> usize {
        self.ratings
            .get(&(rater.to_string(), phase))
            .map_or(0, BTreeMap::len)
    }

    pub fn phase_status(&self, rater: &str, phase: Phase) -> PhaseStatus {
        match self.rated(rater, phase) {
            0 => PhaseStatus::NotStarted,
            n if n == self.manifest.cases.len() => PhaseStatus::Complete,
            _ => PhaseStatus::InProgress,
        }
    }

    pub fn status(&self) -> Vec<RaterStatus> {
        self.manifest
            .raters
            .iter()
            .map(|r| {
                let o = &self.manifest.orderings[&r.rater_id];
                RaterStatus {
                    rater: r.rater_id.clone(),
                    group: r.group.clone(),
                    t0: self.phase_status(&r.rater_id, Phase::T0),
                    t1: self.phase_status(&r.rater_id, Phase::T1),
                    rated_t0: self.rated(&r.rater_id, Phase::T0),
                    rated_t1: self.rated(&r.rater_id, Phase::T1),
                    orderings_differ: o.t0.cases != o.t1.cases,
                }
            })
            .collect()
    }

    fn open_ordering(&self, rater: &str, phase: Phase) -> Result<&Ordering, StudyError> {
        if !self.manifest.orderings.contains_key(rater) {
            return Err(StudyError::UnknownRater(rater.to_string()));
        }
        let closed = |reason: &str| StudyError::PhaseNotOpen {
            rater: rater.to_string(),
            phase,
            reason: reason.to_string(),
        };
        match phase {
            Phase::Trainer => Err(closed("trainer labels are fixed at creation")),
            Phase::T1 if self.phase_status(rater, Phase::T0) != PhaseStatus::Complete => {
                Err(closed("T0 is not complete"))
            }
            _ => Ok(self.manifest.ordering(rater, phase).expect("rater has orderings")),
        }
    }

    pub fn next_item(&self, rater: &str, phase: Phase) -> Result<NextItem, StudyError> {
        let ordering = self.open_ordering(rater, phase)?;
        let done = self.rated(rater, phase);
        Ok(match ordering.cases.get(done) {
            None => NextItem::Done { done: true },
            Some(case) => NextItem::Case {
                case: case.clone(),
                asset_ref: self
                    .manifest
                    .cases
                    .iter()
                    .find(|c| &c.case_id == case)
                    .map(|c| c.asset_ref.clone())
                    .unwrap_or_default(),
                position: done + 1,
                total: ordering.cases.len(),
            },
        })
    }

    /// Validates a rating. `Ok(true)` means it is new, `Ok(false)` that the
    /// identical rating is already recorded.
    fn check(&self, rater: &str, phase: Phase, case: &str, label: SectorLabel) -> Result<bool, StudyError> {
        let ordering = self.open_ordering(rater, phase)?;
        if label.space() != self.manifest.space {
            return Err(StudyError::LabelSpaceMismatch {
                label: label.to_string(),
                space: self.manifest.space,
            });
        }
        if let Some(prev) = self
            .ratings
            .get(&(rater.to_string(), phase))
            .and_then(|m| m.get(case))
        {
            if prev.label == label {
                return Ok(false);
            }
            return Err(StudyError::ConflictingRating {
                case: case.to_string(),
                existing: prev.label,
                submitted: label,
            });
        }
        if !ordering.cases.iter().any(|c| c == case) {
            return Err(StudyError::UnknownCase(case.to_string()));
        }
        let expected = ordering.cases.get(self.rated(rater, phase));
        if expected.map(String::as_str) != Some(case) {
            return Err(StudyError::OutOfOrderRating {
                expected: expected.cloned(),
                got: case.to_string(),
            });
        }
        Ok(true)
    }

    fn apply(&mut self, r: RatingRecord) {
        self.ratings
            .entry((r.rater.clone(), r.phase))
            .or_default()
            .insert(r.case.clone(), r.clone());
        self.log.push(r);
    }

    /// Records a rating for the rater's current item. Re-submitting an
    /// identical rating returns the stored record with `false`.
    pub fn record_rating(
        &mut self,
        rater: &str,
        phase: Phase,
        case: &str,
        label: &str,
        elapsed_ms: Option<u64>,
    ) -> Result<(RatingRecord, bool), StudyError> {
        self.open_ordering(rater, phase)?;
        let label = parse_label(self.manifest.space, label)?;
        if !self.check(rater, phase, case, label)? {
            let prev = &self.ratings[&(rater.to_string(), phase)][case];
            return Ok((prev.clone(), false));
        }
        let record = RatingRecord {
            study: self.manifest.study_id.clone(),
            rater: rater.to_string(),
            phase,
            case: case.to_string(),
            label,
            ts: now(),
            elapsed_ms,
        };
        if let Some(path) = &self.log_path {
            append_line(path, &serde_json::to_string(&record)?)?;
        }
        self.apply(record.clone());
        Ok((record, true))
    }

    /// Agreement tables plus completion status.
    ///
    /// With `strict`, every rater must have completed both phases. Otherwise
    /// the tables use whichever phases are complete and are omitted (with a
    /// note) while there are no trainer labels or no complete phase.
    pub fn report(&self, strict: bool, cfg: &TablesConfig) -> Result<StudyReport, StudyError> {
        let status = self.status();
        let any_complete = status
            .iter()
            .any(|s| s.t0 == PhaseStatus::Complete || s.t1 == PhaseStatus::Complete);
        let single_case = self.manifest.cases.len() < 2;
        let mut notes = Vec::new();
        if single_case {
            notes.push("single-case study: T0 and T1 orders are necessarily identical".to_string());
        }
        let missing = if !self.has_trainer_labels() {
            Some("study has no trainer labels")
        } else if !any_complete {
            Some("no rater has completed a phase")
        } else {
            None
        };
        let tables = match missing {
            Some(why) if strict => return Err(StudyError::IncompleteStudy(why.to_string())),
            Some(why) => {
                notes.push(why.to_string());
                None
            }
            None => {
                let cfg = TablesConfig {
                    coverage: if strict { Coverage::Strict } else { Coverage::Partial },
                    ..*cfg
                };
                let complete: Vec<RatingRecord> = self
                    .log
                    .iter()
                    .filter(|r| {
                        r.phase == Phase::Trainer
                            || self.phase_status(&r.rater, r.phase) == PhaseStatus::Complete
                    })
                    .cloned()
                    .collect();
                let records = if strict { &self.log } else { &complete };
                let mut t = study_tables(records, &self.manifest.grouping(), &cfg)?;
                t.studies.pop()
            }
        };
        Ok(StudyReport {
            study_id: self.manifest.study_id.clone(),
            space: self.manifest.space,
            n_cases: self.manifest.cases.len(),
            trainer_labels: self.trainer.len(),
            status,
            notes,
            tables,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study_id: String,
    pub space: LabelSpace,
    pub n_cases: usize,
    pub trainer_labels: usize,
    pub status: Vec<RaterStatus>,
    pub notes: Vec<String>,
    pub tables: Option<SpaceTables>,
}

fn append_line(path: &Path, line: &str) -> Result<(), StudyError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Reads a JSON-lines ratings file, skipping blank lines.
pub fn read_ratings<R: BufRead>(reader: R) -> Result<Vec<RatingRecord>, StudyError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StudyError::CorruptLog {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Directory of studies, one sub-directory per study id.
#[derive(Debug, Clone)]
pub struct StudyStore {
    root: PathBuf,
}

impl StudyStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StudyError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StudyError> {
        if !valid_id(id) {
            return Err(StudyError::UnknownStudy(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn create(&self, spec: &StudySpec) -> Result<Study, StudyError> {
        let mut study = Study::create_with(spec, None)?;
        let dir = self.dir(&spec.study_id)?;
        study.log_path = Some(dir.join(LOG));
        match fs::create_dir(&dir) {
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StudyError::DuplicateStudyId(spec.study_id.clone()))
            }
            r => r?,
        }
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&study.manifest)?)?;
        let mut log = File::create(dir.join(LOG))?;
        for r in &study.log {
            writeln!(log, "{}", serde_json::to_string(r)?)?;
        }
        log.sync_all()?;
        Ok(study)
    }

    pub fn load(&self, id: &str) -> Result<Study, StudyError> {
        let dir = self.dir(id)?;
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(StudyError::UnknownStudy(id.to_string()));
        }
        let manifest: StudyManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let records = match File::open(dir.join(LOG)) {
            Ok(f) => read_ratings(BufReader::new(f))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut study = Study::replay(manifest, &records)?;
        study.log_path = Some(dir.join(LOG));
        Ok(study)
    }

    pub fn ids(&self) -> Result<Vec<String>, StudyError> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Manifest plus live status, as served for `GET /studies/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOverview {
    pub manifest: StudyManifest,
    pub status: Vec<RaterStatus>,
}

/// Thread-safe front end over a [`StudyStore`].
///
/// Each study sits behind its own lock: reads share it, ratings take it
/// exclusively, so writes to one study are serialized while different
/// studies proceed independently.
#[derive(Debug)]
pub struct StudyService {
    store: StudyStore,
    studies: Mutex<HashMap<String, Arc<RwLock<Study>>>>,
    create_lock: Mutex<()>,
    tables: TablesConfig,
}

impl StudyService {
    pub fn new(store: StudyStore, tables: TablesConfig) -> Self {
        Self {
            store,
            studies: Mutex::new(HashMap::new()),
            create_lock: Mutex::new(()),
            tables,
        }
    }

    pub fn store(&self) -> &StudyStore {
        &self.store
    }

    fn handle(&self, id: &str) -> Result<Arc<RwLock<Study>>, StudyError> {
        if let Some(h) = self.studies.lock().expect("study map lock").get(id) {
            return Ok(h.clone());
        }
        let study = self.store.load(id)?;
        let mut map = self.studies.lock().expect("study map lock");
        Ok(map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(study)))
            .clone())
    }

    pub fn create(&self, spec: &StudySpec) -> Result<StudyOverview, StudyError> {
        let _guard = self.create_lock.lock().expect("create lock");
        let study = self.store.create(spec)?;
        let overview = StudyOverview {
            manifest: study.manifest.clone(),
            status: study.status(),
        };
        self.studies
            .lock()
            .expect("study map lock")
            .insert(spec.study_id.clone(), Arc::new(RwLock::new(study)));
        Ok(overview)
    }

    pub fn overview(&self, id: &str) -> Result<StudyOverview, StudyError> {
        let h = self.handle(id)?;
        let s = h.read().expect("study lock");
        Ok(StudyOverview {
            manifest: s.manifest.clone(),
            status: s.status(),
        })
    }

    pub fn next_item(&self, id: &str, rater: &str, phase: Phase) -> Result<NextItem, StudyError> {
        let h = self.handle(id)?;
        let s = h.read().expect("study lock");
        s.next_item(rater, phase)
    }

    pub fn record_rating(
        &self,
        id: &str,
        rater: &str,
        phase: Phase,
        case: &str,
        label: &str,
        elapsed_ms: Option<u64>,
    ) -> Result<(RatingRecord, bool), StudyError> {
        let h = self.handle(id)?;
        let mut s = h.write().expect("study lock");
        s.record_rating(rater, phase, case, label, elapsed_ms)
    }

    pub fn report(&self, id: &str, strict: bool) -> Result<StudyReport, StudyError> {
        let h = self.handle(id)?;
        let s = h.read().expect("study lock");
        s.report(strict, &self.tables)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, raters: usize, space: LabelSpace) -> StudySpec {
        let labels = space.labels();
        StudySpec {
            study_id: "s1".into(),
            space,
            cases: (0..n)
                .map(|i| CaseRef {
                    case_id: format!("c{i:03}"),
                    asset_ref: format!("img/{i}.png"),
                })
                .collect(),
            raters: (0..raters)
                .map(|i| RaterSpec {
                    rater_id: format!("e{}", i + 1),
                    group: if i % 2 == 0 { "orthodontist" } else { "gp" }.into(),
                })
                .collect(),
            trainer: "trainer".into(),
            trainer_labels: (0..n)
                .map(|i| (format!("c{i:03}"), labels[i % labels.len()].to_string()))
                .collect(),
            seed: 11,
            interval_days: 28,
        }
    }

    fn rate_all(s: &mut Study, rater: &str, phase: Phase, mut label_of: impl FnMut(&str) -> String) {
        while let NextItem::Case { case, .. } = s.next_item(rater, phase).unwrap() {
            let l = label_of(&case);
            s.record_rating(rater, phase, &case, &l, None).unwrap();
        }
    }

    #[test]
    fn full_size_study_has_distinct_orderings() {
        let s = Study::new(&spec(306, 6, LabelSpace::Three)).unwrap();
        let all: BTreeSet<&Vec<String>> = s
            .manifest
            .orderings
            .values()
            .flat_map(|o| [&o.t0.cases, &o.t1.cases])
            .collect();
        assert_eq!(all.len(), 12);
    }

    #[test]
    fn orderings_are_reproducible() {
        let a = Study::new(&spec(30, 3, LabelSpace::Five)).unwrap();
        let b = Study::new(&spec(30, 3, LabelSpace::Five)).unwrap();
        assert_eq!(a.manifest.orderings, b.manifest.orderings);
    }

    #[test]
    fn two_cases_always_reorder() {
        for seed in 0..200 {
            let cases = vec!["a".to_string(), "b".to_string()];
            let o = derive_orderings(seed, "r", &cases);
            assert_ne!(o.t0.cases, o.t1.cases);
        }
    }

    #[test]
    fn single_case_is_flagged() {
        let s = Study::new(&spec(1, 1, LabelSpace::Three)).unwrap();
        assert!(!s.status()[0].orderings_differ);
        let r = s.report(false, &TablesConfig::default()).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("single-case")));
    }

    #[test]
    fn creation_errors() {
        let mut sp = spec(3, 1, LabelSpace::Three);
        sp.cases.clear();
        sp.trainer_labels.clear();
        assert!(matches!(Study::new(&sp), Err(StudyError::EmptyCaseList)));
        let mut sp = spec(3, 1, LabelSpace::Three);
        sp.trainer_labels.insert("c000".into(), "IV".into());
        assert!(matches!(Study::new(&sp), Err(StudyError::LabelSpaceMismatch { .. })));
        let mut sp = spec(3, 1, LabelSpace::Three);
        sp.study_id = "../x".into();
        assert!(matches!(Study::new(&sp), Err(StudyError::InvalidSpec(_))));
    }

    #[test]
    fn phase_flow() {
        let mut s = Study::new(&spec(5, 1, LabelSpace::Three)).unwrap();
        let first = s.manifest.orderings["e1"].t0.cases[0].clone();
        match s.next_item("e1", Phase::T0).unwrap() {
            NextItem::Case { case, position, total, .. } => {
                assert_eq!((case, position, total), (first, 1, 5));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            s.next_item("e1", Phase::T1),
            Err(StudyError::PhaseNotOpen { .. })
        ));
        assert!(matches!(s.next_item("zz", Phase::T0), Err(StudyError::UnknownRater(_))));
        assert_eq!(s.phase_status("e1", Phase::T0), PhaseStatus::NotStarted);
        rate_all(&mut s, "e1", Phase::T0, |_| "A".into());
        assert_eq!(s.next_item("e1", Phase::T0).unwrap(), NextItem::Done { done: true });
        assert_eq!(s.phase_status("e1", Phase::T0), PhaseStatus::Complete);
        assert!(matches!(s.next_item("e1", Phase::T1).unwrap(), NextItem::Case { position: 1, .. }));
    }

    #[test]
    fn rating_rules() {
        let mut s = Study::new(&spec(4, 1, LabelSpace::Three)).unwrap();
        let order = s.manifest.orderings["e1"].t0.cases.clone();
        assert!(matches!(
            s.record_rating("e1", Phase::T0, &order[1], "A", None),
            Err(StudyError::OutOfOrderRating { .. })
        ));
        assert!(matches!(
            s.record_rating("e1", Phase::T0, &order[0], "IV", None),
            Err(StudyError::LabelSpaceMismatch { .. })
        ));
        assert!(matches!(
            s.record_rating("e1", Phase::T0, &order[0], "Z", None),
            Err(StudyError::InvalidLabel(_))
        ));
        let (rec, new) = s.record_rating("e1", Phase::T0, &order[0], "b", Some(1200)).unwrap();
        assert!(new);
        assert!(!rec.ts.is_empty());
        let (again, new) = s.record_rating("e1", Phase::T0, &order[0], "B", None).unwrap();
        assert!(!new);
        assert_eq!(again, rec);
        assert!(matches!(
            s.record_rating("e1", Phase::T0, &order[0], "C", None),
            Err(StudyError::ConflictingRating { .. })
        ));
        assert!(matches!(
            s.record_rating("e1", Phase::T0, "nope", "C", None),
            Err(StudyError::UnknownCase(_))
        ));
    }

    #[test]
    fn copying_the_trainer_gives_perfect_agreement() {
        let sp = spec(12, 4, LabelSpace::Four);
        let mut s = Study::new(&sp).unwrap();
        for r in ["e1", "e2", "e3", "e4"] {
            for phase in [Phase::T0, Phase::T1] {
                rate_all(&mut s, r, phase, |c| sp.trainer_labels[c].clone());
            }
        }
        let report = s.report(true, &TablesConfig::default()).unwrap();
        let t = report.tables.unwrap();
        assert!(t.calibration.iter().all(|row| row.t0.as_ref().unwrap().result.as_ref().unwrap().kappa == 1.0));
        assert!(t.intra.iter().all(|row| row.kappa.result.as_ref().unwrap().kappa == 1.0));
        assert_eq!(t.inter[0].overall.as_ref().unwrap().result.as_ref().unwrap().kappa, 1.0);
    }

    #[test]
    fn report_before_ratings() {
        let s = Study::new(&spec(6, 2, LabelSpace::Three)).unwrap();
        assert!(matches!(
            s.report(true, &TablesConfig::default()),
            Err(StudyError::IncompleteStudy(_))
        ));
        let r = s.report(false, &TablesConfig::default()).unwrap();
        assert!(r.tables.is_none());
        assert_eq!(r.status.len(), 2);
        assert!(r.status.iter().all(|st| st.t0 == PhaseStatus::NotStarted));
    }

    #[test]
    fn partial_report_uses_complete_phases() {
        let sp = spec(8, 2, LabelSpace::Three);
        let mut s = Study::new(&sp).unwrap();
        rate_all(&mut s, "e1", Phase::T0, |c| sp.trainer_labels[c].clone());
        let order = s.manifest.orderings["e2"].t0.cases.clone();
        s.record_rating("e2", Phase::T0, &order[0], "A", None).unwrap();
        let r = s.report(false, &TablesConfig::default()).unwrap();
        let t = r.tables.unwrap();
        let e1 = t.calibration.iter().find(|c| c.rater == "e1").unwrap();
        assert_eq!(e1.t0.as_ref().unwrap().result.as_ref().unwrap().kappa, 1.0);
        assert!(t.calibration.iter().all(|c| c.rater != "e2"));
        assert!(s.report(true, &TablesConfig::default()).is_err());
    }

    #[test]
    fn store_persists_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let sp = spec(5, 2, LabelSpace::Five);
        let mut s = store.create(&sp).unwrap();
        assert!(matches!(store.create(&sp), Err(StudyError::DuplicateStudyId(_))));
        rate_all(&mut s, "e1", Phase::T0, |_| "S2".into());
        let order = s.manifest.orderings["e2"].t0.cases.clone();
        s.record_rating("e2", Phase::T0, &order[0], "S4", None).unwrap();
        let loaded = store.load("s1").unwrap();
        assert_eq!(loaded, s);
        assert_eq!(store.ids().unwrap(), vec!["s1".to_string()]);
        assert!(matches!(store.load("nope"), Err(StudyError::UnknownStudy(_))));
    }

    #[test]
    fn replay_rejects_out_of_order_log() {
        let sp = spec(3, 1, LabelSpace::Three);
        let mut s = Study::new(&sp).unwrap();
        rate_all(&mut s, "e1", Phase::T0, |_| "A".into());
        let mut recs = s.records().to_vec();
        let n = recs.len();
        recs.swap(n - 1, n - 2);
        assert!(matches!(
            Study::replay(s.manifest.clone(), &recs),
            Err(StudyError::CorruptLog { .. })
        ));
    }

    #[test]
    fn service_serializes_concurrent_writers() {
        let dir = tempfile::tempdir().unwrap();
        let svc = Arc::new(StudyService::new(
            StudyStore::open(dir.path()).unwrap(),
            TablesConfig::default(),
        ));
        let sp = spec(40, 4, LabelSpace::Three);
        svc.create(&sp).unwrap();
        std::thread::scope(|scope| {
            for r in ["e1", "e2", "e3", "e4"] {
                let svc = svc.clone();
                let labels = sp.trainer_labels.clone();
                scope.spawn(move || {
                    while let NextItem::Case { case, .. } = svc.next_item("s1", r, Phase::T0).unwrap() {
                        svc.record_rating("s1", r, Phase::T0, &case, &labels[&case], None).unwrap();
                    }
                });
            }
        });
        let fresh = StudyStore::open(dir.path()).unwrap().load("s1").unwrap();
        assert_eq!(fresh.records().len(), 40 + 4 * 40);
        assert!(fresh.status().iter().all(|s| s.t0 == PhaseStatus::Complete));
    }
}
