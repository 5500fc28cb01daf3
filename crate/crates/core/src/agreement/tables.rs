//! The four agreement tables of a two-phase rating study:
//!
//! 1. examiner vs trainer at T0 and T1 (Cohen),
//! 2. examiner T0 vs T1 (Cohen, intra-rater),
//! 3. intra-rater agreement pooled per group, with between-group z-tests,
//! 4. inter-rater agreement per phase, per group and overall (Fleiss), with
//!    between-group z-tests.
//!
//! Group pooling for table 3 concatenates every member's (T0, T1) pairs into
//! one pair sequence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{
    cohen_kappa, compare_kappas, fleiss_counts, fleiss_kappa, fleiss_kappa_bootstrap,
    AgreementError, BootstrapConfig, CiMethod, KappaComparison, KappaResult,
};
use crate::geometry::{LabelSpace, SectorLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    T0,
    T1,
    #[serde(rename = "TRAINER")]
    Trainer,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::T0 => "T0",
            Phase::T1 => "T1",
            Phase::Trainer => "TRAINER",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = AgreementError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T0" => Ok(Phase::T0),
            "T1" => Ok(Phase::T1),
            "TRAINER" => Ok(Phase::Trainer),
            other => Err(AgreementError::InvalidParameter(format!("unknown phase {other:?}"))),
        }
    }
}

/// One examiner's sector choice for one case at one phase. This is also the
/// line format of ratings files and study event logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub study: String,
    pub rater: String,
    pub phase: Phase,
    pub case: String,
    pub label: SectorLabel,
    pub ts: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl RatingRecord {
    /// Same rating, ignoring timing metadata.
    pub fn same_rating(&self, other: &RatingRecord) -> bool {
        self.study == other.study
            && self.rater == other.rater
            && self.phase == other.phase
            && self.case == other.case
            && self.label == other.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    /// Every examiner must have complete T0 and T1 ratings.
    Strict,
    /// Use whatever (rater, phase) sets are complete.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TablesConfig {
    pub bootstrap: BootstrapConfig,
    pub fleiss_ci: CiMethod,
    pub coverage: Coverage,
}

impl Default for TablesConfig {
    fn default() -> Self {
        Self {
            bootstrap: BootstrapConfig::default(),
            fleiss_ci: CiMethod::Bootstrap,
            coverage: Coverage::Strict,
        }
    }
}

/// A kappa, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaCell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<KappaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<Result<KappaResult, AgreementError>> for KappaCell {
    fn from(r: Result<KappaResult, AgreementError>) -> Self {
        match r {
            Ok(result) => KappaCell {
                result: Some(result),
                error: None,
            },
            Err(e) => KappaCell {
                result: None,
                error: Some(e.to_string()),
            },
        }
    }
}

impl fmt::Display for KappaCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.result, &self.error) {
            (Some(r), _) => f.write_str(&r.summary()),
            (None, Some(e)) => write!(f, "n/a ({e})"),
            (None, None) => f.write_str("n/a"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub rater: String,
    pub group: String,
    pub t0: Option<KappaCell>,
    pub t1: Option<KappaCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraRow {
    pub rater: String,
    pub group: String,
    pub kappa: KappaCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    pub group: String,
    pub raters: Vec<String>,
    pub kappa: KappaCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub group_a: String,
    pub group_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<KappaComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseInter {
    pub phase: Phase,
    pub groups: Vec<GroupCell>,
    pub overall: Option<KappaCell>,
    pub comparisons: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTables {
    pub study: String,
    pub space: LabelSpace,
    pub n_cases: usize,
    pub calibration: Vec<CalibrationRow>,
    pub intra: Vec<IntraRow>,
    pub intra_groups: Vec<GroupCell>,
    pub intra_comparisons: Vec<ComparisonCell>,
    pub inter: Vec<PhaseInter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTables {
    pub studies: Vec<SpaceTables>,
}

type LabelMap = BTreeMap<String, SectorLabel>;

struct StudyRatings<'a> {
    space: LabelSpace,
    trainer: LabelMap,
    by_rater: BTreeMap<&'a str, BTreeMap<Phase, LabelMap>>,
}

fn collect<'a>(study: &str, records: &[&'a RatingRecord]) -> Result<StudyRatings<'a>, AgreementError> {
    let space = records[0].label.space();
    let mut trainer_ids = BTreeSet::new();
    let mut trainer = LabelMap::new();
    let mut by_rater: BTreeMap<&str, BTreeMap<Phase, LabelMap>> = BTreeMap::new();
    for r in records {
        if r.label.space() != space {
            return Err(AgreementError::ConflictingRecords(format!(
                "study {study} mixes {space} and {} labels",
                r.label.space()
            )));
        }
        let slot = if r.phase == Phase::Trainer {
            trainer_ids.insert(r.rater.as_str());
            &mut trainer
        } else {
            by_rater
                .entry(r.rater.as_str())
                .or_default()
                .entry(r.phase)
                .or_default()
        };
        if let Some(prev) = slot.insert(r.case.clone(), r.label) {
            if prev != r.label {
                return Err(AgreementError::ConflictingRecords(format!(
                    "study {study}: {} {} rated case {} as both {prev} and {}",
                    r.rater, r.phase, r.case, r.label
                )));
            }
        }
    }
    if trainer_ids.len() > 1 {
        return Err(AgreementError::ConflictingRecords(format!(
            "study {study} has several trainers: {trainer_ids:?}"
        )));
    }
    if trainer.is_empty() {
        return Err(AgreementError::IncompleteStudy(format!(
            "study {study} has no trainer labels"
        )));
    }
    Ok(StudyRatings {
        space,
        trainer,
        by_rater,
    })
}

fn pairs(a: &LabelMap, b: &LabelMap) -> Vec<(usize, usize)> {
    a.iter()
        .filter_map(|(case, la)| b.get(case).map(|lb| (la.index(), lb.index())))
        .collect()
}

fn compare_cells(cells: &[GroupCell]) -> Vec<ComparisonCell> {
    let mut out = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let (a, b) = (&cells[i], &cells[j]);
            let cell = match (&a.kappa.result, &b.kappa.result) {
                (Some(ka), Some(kb)) => match compare_kappas(ka, kb) {
                    Ok(c) => (Some(c), None),
                    Err(e) => (None, Some(e.to_string())),
                },
                _ => (None, Some("kappa unavailable for a group".to_string())),
            };
            out.push(ComparisonCell {
                group_a: a.group.clone(),
                group_b: b.group.clone(),
                result: cell.0,
                error: cell.1,
            });
        }
    }
    out
}

fn space_tables(
    study: &str,
    ratings: &StudyRatings<'_>,
    grouping: &BTreeMap<String, String>,
    cfg: &TablesConfig,
) -> Result<SpaceTables, AgreementError> {
    let k = ratings.space.num_classes();
    let cases: Vec<&String> = ratings.trainer.keys().collect();
    let mut complete: BTreeMap<(&str, Phase), &LabelMap> = BTreeMap::new();

    for (&rater, phases) in &ratings.by_rater {
        if !grouping.contains_key(rater) {
            return Err(AgreementError::IncompleteStudy(format!(
                "rater {rater} has no group assignment"
            )));
        }
        for phase in [Phase::T0, Phase::T1] {
            let labels = phases.get(&phase);
            if let Some(extra) = labels
                .into_iter()
                .flat_map(|m| m.keys())
                .find(|c| !ratings.trainer.contains_key(*c))
            {
                return Err(AgreementError::IncompleteStudy(format!(
                    "case {extra} rated by {rater} has no trainer label"
                )));
            }
            match labels {
                Some(m) if m.len() == cases.len() => {
                    complete.insert((rater, phase), m);
                }
                _ if cfg.coverage == Coverage::Strict => {
                    let have = labels.map_or(0, |m| m.len());
                    return Err(AgreementError::IncompleteStudy(format!(
                        "rater {rater} has {have}/{} {phase} ratings in study {study}",
                        cases.len()
                    )));
                }
                _ => {}
            }
        }
    }
    if cfg.coverage == Coverage::Strict && ratings.by_rater.is_empty() {
        return Err(AgreementError::IncompleteStudy(format!(
            "study {study} has no examiner ratings"
        )));
    }

    let raters: Vec<&str> = ratings.by_rater.keys().copied().collect();
    let group_of = |r: &str| grouping[r].clone();
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for &r in &raters {
        groups.entry(group_of(r)).or_default().push(r);
    }
    let cohen = |p: Vec<(usize, usize)>| KappaCell::from(cohen_kappa(&p, k));

    let calibration = raters
        .iter()
        .map(|&r| CalibrationRow {
            rater: r.to_string(),
            group: group_of(r),
            t0: complete.get(&(r, Phase::T0)).map(|m| cohen(pairs(m, &ratings.trainer))),
            t1: complete.get(&(r, Phase::T1)).map(|m| cohen(pairs(m, &ratings.trainer))),
        })
        .collect();

    let intra_pairs = |r: &str| -> Option<Vec<(usize, usize)>> {
        let t0 = complete.get(&(r, Phase::T0))?;
        let t1 = complete.get(&(r, Phase::T1))?;
        Some(pairs(t0, t1))
    };
    let intra = raters
        .iter()
        .filter_map(|&r| {
            intra_pairs(r).map(|p| IntraRow {
                rater: r.to_string(),
                group: group_of(r),
                kappa: cohen(p),
            })
        })
        .collect();

    let intra_groups: Vec<GroupCell> = groups
        .iter()
        .filter_map(|(g, members)| {
            let included: Vec<&str> = members
                .iter()
                .copied()
                .filter(|r| intra_pairs(r).is_some())
                .collect();
            if included.is_empty() {
                return None;
            }
            let pooled: Vec<(usize, usize)> =
                included.iter().flat_map(|r| intra_pairs(r).unwrap()).collect();
            Some(GroupCell {
                group: g.clone(),
                raters: included.iter().map(|r| r.to_string()).collect(),
                kappa: cohen(pooled),
            })
        })
        .collect();
    let intra_comparisons = compare_cells(&intra_groups);

    let fleiss = |members: &[&str], phase: Phase| -> KappaCell {
        let label_rows: Vec<Vec<usize>> = cases
            .iter()
            .map(|c| {
                members
                    .iter()
                    .map(|r| complete[&(*r, phase)][*c].index())
                    .collect()
            })
            .collect();
        let result = fleiss_counts(&label_rows, k).and_then(|counts| {
            let r = members.len() as u64;
            match cfg.fleiss_ci {
                CiMethod::Analytic => fleiss_kappa(&counts, r),
                CiMethod::Bootstrap => fleiss_kappa_bootstrap(&counts, r, &cfg.bootstrap),
            }
        });
        KappaCell::from(result)
    };
    let inter = [Phase::T0, Phase::T1]
        .into_iter()
        .map(|phase| {
            let in_phase = |r: &&str| complete.contains_key(&(*r, phase));
            let group_cells: Vec<GroupCell> = groups
                .iter()
                .filter_map(|(g, members)| {
                    let m: Vec<&str> = members.iter().copied().filter(in_phase).collect();
                    (m.len() >= 2).then(|| GroupCell {
                        group: g.clone(),
                        raters: m.iter().map(|r| r.to_string()).collect(),
                        kappa: fleiss(&m, phase),
                    })
                })
                .collect();
            let all: Vec<&str> = raters.iter().copied().filter(in_phase).collect();
            PhaseInter {
                phase,
                overall: (all.len() >= 2).then(|| fleiss(&all, phase)),
                comparisons: compare_cells(&group_cells),
                groups: group_cells,
            }
        })
        .collect();

    Ok(SpaceTables {
        study: study.to_string(),
        space: ratings.space,
        n_cases: cases.len(),
        calibration,
        intra,
        intra_groups,
        intra_comparisons,
        inter,
    })
}

/// Builds the four tables for every study present in `records`.
/// `grouping` maps examiner ids to group names.
pub fn study_tables(
    records: &[RatingRecord],
    grouping: &BTreeMap<String, String>,
    cfg: &TablesConfig,
) -> Result<StudyTables, AgreementError> {
    let mut by_study: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_study.entry(r.study.as_str()).or_default().push(r);
    }
    if by_study.is_empty() {
        return Err(AgreementError::IncompleteStudy("no rating records".into()));
    }
    let studies = by_study
        .into_iter()
        .map(|(study, recs)| {
            let ratings = collect(study, &recs)?;
            space_tables(study, &ratings, grouping, cfg)
        })
        .collect::<Result<_, _>>()?;
    Ok(StudyTables { studies })
}

fn comparison_line(c: &ComparisonCell) -> String {
    match (&c.result, &c.error) {
        (Some(r), _) => format!(
            "{} vs {}: z = {:.2}, p = {:.3}",
            c.group_a, c.group_b, r.z, r.p_value
        ),
        (None, e) => format!(
            "{} vs {}: n/a ({})",
            c.group_a,
            c.group_b,
            e.as_deref().unwrap_or("unavailable")
        ),
    }
}

impl StudyTables {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let opt = |c: &Option<KappaCell>| c.as_ref().map_or("-".to_string(), |c| c.to_string());
        for t in &self.studies {
            let _ = writeln!(
                s,
                "== study {} ({}-sector system, {} cases) ==",
                t.study,
                t.space.num_classes(),
                t.n_cases
            );
            let _ = writeln!(s, "Examiner vs trainer (Cohen's kappa)");
            for row in &t.calibration {
                let _ = writeln!(
                    s,
                    "  {:<12} {:<24} T0: {:<36} T1: {}",
                    row.rater,
                    row.group,
                    opt(&row.t0),
                    opt(&row.t1)
                );
            }
            let _ = writeln!(s, "Intra-examiner agreement, T0 vs T1 (Cohen's kappa)");
            for row in &t.intra {
                let _ = writeln!(s, "  {:<12} {:<24} {}", row.rater, row.group, row.kappa);
            }
            let _ = writeln!(s, "Intra-examiner agreement by group");
            for g in &t.intra_groups {
                let _ = writeln!(s, "  {:<24} {}", g.group, g.kappa);
            }
            for c in &t.intra_comparisons {
                let _ = writeln!(s, "  {}", comparison_line(c));
            }
            let _ = writeln!(s, "Inter-examiner agreement (Fleiss' kappa)");
            for p in &t.inter {
                for g in &p.groups {
                    let _ = writeln!(s, "  {} {:<24} {}", p.phase, g.group, g.kappa);
                }
                let _ = writeln!(s, "  {} {:<24} {}", p.phase, "overall", opt(&p.overall));
                for c in &p.comparisons {
                    let _ = writeln!(s, "  {} {}", p.phase, comparison_line(c));
                }
            }
            s.push('\n');
        }
        s
    }
}
