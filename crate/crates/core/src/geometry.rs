//! Sector boundaries and canine point classification.
//!
//! Four boundary lines are built from incisor landmarks:
//!
//! | line | through                                   |
//! |------|-------------------------------------------|
//! | d1   | lateral incisor distal crown/root heights of contour |
//! | d2   | lateral incisor crown tip and root apex   |
//! | d3   | lateral incisor mesial crown/root heights of contour |
//! | d4   | central incisor crown tip and root apex   |
//!
//! Every line carries a unit normal pointing to the mesial side, so a
//! positive signed distance means "mesial of this boundary". The five
//! sectors S1..S5 are the runs between consecutive boundaries along the
//! mesial direction; the 4-sector system merges S4 and S5, and the 3-sector
//! system is a configurable merge of the five.
//!
//! Coordinates are image pixels with y growing downward.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exec::Execution;

/// Minimum separation of the two points defining a line.
pub const MIN_LINE_SPAN: f64 = 1e-6;
/// Default tie tolerance for on-boundary points.
pub const DEFAULT_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("boundary {0} is degenerate: its two defining points coincide")]
    DegenerateLine(BoundaryId),
    #[error("lateral and central crown tips coincide; mesial direction undefined")]
    DegenerateDirection,
    #[error("boundary {0} runs parallel to the mesial direction")]
    LineParallelToMesial(BoundaryId),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("boundaries cross near the point (signed distances {0:?})")]
    AmbiguousGeometry([f64; 4]),
    #[error("label {label} does not belong to the {expected} system")]
    WrongSpace { label: SectorLabel, expected: LabelSpace },
    #[error("unknown sector label {0:?}")]
    UnknownLabel(String),
    #[error("merge map {0:?} interleaves classes along the mesial direction")]
    NonContiguousMerge(String),
    #[error("unknown merge preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryId {
    DistalTangent,
    LateralAxis,
    MesialTangent,
    CentralAxis,
}

impl fmt::Display for BoundaryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryId::DistalTangent => "d1 (lateral distal tangent)",
            BoundaryId::LateralAxis => "d2 (lateral long axis)",
            BoundaryId::MesialTangent => "d3 (lateral mesial tangent)",
            BoundaryId::CentralAxis => "d4 (central long axis)",
        };
        f.write_str(s)
    }
}

/// A point (or displacement) in image pixels. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2D) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Point2D {
        Point2D::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2D {
    fn from(v: [f64; 2]) -> Self {
        Point2D::new(v[0], v[1])
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2D {
    type Output = Point2D;
    fn add(self, o: Point2D) -> Point2D {
        Point2D::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2D {
    type Output = Point2D;
    fn sub(self, o: Point2D) -> Point2D {
        Point2D::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2D {
    type Output = Point2D;
    fn mul(self, s: f64) -> Point2D {
        Point2D::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2D {
    type Output = Point2D;
    fn neg(self) -> Point2D {
        Point2D::new(-self.x, -self.y)
    }
}

/// Oriented boundary line. `normal` is unit length, perpendicular to
/// `direction`, and points to the mesial side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2D {
    pub anchor: Point2D,
    pub direction: Point2D,
    pub normal: Point2D,
}

impl Line2D {
    /// Line through `a` and `b` with its normal oriented toward `mesial`.
    pub fn through(
        a: Point2D,
        b: Point2D,
        mesial: Point2D,
        id: BoundaryId,
    ) -> Result<Self, GeometryError> {
        let d = b - a;
        let len = d.norm();
        if len < MIN_LINE_SPAN {
            return Err(GeometryError::DegenerateLine(id));
        }
        let direction = d * (1.0 / len);
        let mut normal = direction.perp();
        let side = normal.dot(mesial);
        if side.abs() < 1e-9 {
            return Err(GeometryError::LineParallelToMesial(id));
        }
        if side < 0.0 {
            normal = -normal;
        }
        Ok(Self {
            anchor: a,
            direction,
            normal,
        })
    }

    /// Mesial-positive perpendicular distance.
    pub fn signed_distance(&self, p: Point2D) -> f64 {
        (p - self.anchor).dot(self.normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Image x direction expected for the mesial side: the patient's right
    /// is on the image left, so its midline lies toward +x.
    pub fn expected_mesial_x(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

/// Lateral incisor landmarks (hoc = height of contour).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncisorAnnotation {
    pub crown_tip: Point2D,
    pub root_apex: Point2D,
    pub distal_crown_hoc: Point2D,
    pub distal_root_hoc: Point2D,
    pub mesial_crown_hoc: Point2D,
    pub mesial_root_hoc: Point2D,
}

/// Central incisor landmarks; only the long axis is needed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAnnotation {
    pub crown_tip: Point2D,
    pub root_apex: Point2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanineCase {
    pub case_id: String,
    pub side: Side,
    /// Mesial crown point of the unerupted canine.
    pub canine_point: Point2D,
    pub lateral: IncisorAnnotation,
    pub central: AxisAnnotation,
}

impl CanineCase {
    fn points(&self) -> [(&'static str, Point2D); 9] {
        [
            ("canine_point", self.canine_point),
            ("lateral.crown_tip", self.lateral.crown_tip),
            ("lateral.root_apex", self.lateral.root_apex),
            ("lateral.distal_crown_hoc", self.lateral.distal_crown_hoc),
            ("lateral.distal_root_hoc", self.lateral.distal_root_hoc),
            ("lateral.mesial_crown_hoc", self.lateral.mesial_crown_hoc),
            ("lateral.mesial_root_hoc", self.lateral.mesial_root_hoc),
            ("central.crown_tip", self.central.crown_tip),
            ("central.root_apex", self.central.root_apex),
        ]
    }

    /// Applies `f` to every annotated point.
    pub fn map_points(&self, f: impl Fn(Point2D) -> Point2D) -> CanineCase {
        let l = &self.lateral;
        CanineCase {
            case_id: self.case_id.clone(),
            side: self.side,
            canine_point: f(self.canine_point),
            lateral: IncisorAnnotation {
                crown_tip: f(l.crown_tip),
                root_apex: f(l.root_apex),
                distal_crown_hoc: f(l.distal_crown_hoc),
                distal_root_hoc: f(l.distal_root_hoc),
                mesial_crown_hoc: f(l.mesial_crown_hoc),
                mesial_root_hoc: f(l.mesial_root_hoc),
            },
            central: AxisAnnotation {
                crown_tip: f(self.central.crown_tip),
                root_apex: f(self.central.root_apex),
            },
        }
    }

    /// Reflects across the vertical line `x = axis_x` and flips the side tag.
    pub fn mirrored(&self, axis_x: f64) -> CanineCase {
        let mut m = self.map_points(|p| Point2D::new(2.0 * axis_x - p.x, p.y));
        m.side = match self.side {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        };
        m
    }
}

/// One radiograph's annotation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub radiograph_id: String,
    pub cases: Vec<CanineCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorBoundarySet {
    /// d1..d4 in distal-to-mesial order.
    pub lines: [Line2D; 4],
    pub mesial_dir: Point2D,
}

impl SectorBoundarySet {
    pub fn d1(&self) -> &Line2D {
        &self.lines[0]
    }
    pub fn d2(&self) -> &Line2D {
        &self.lines[1]
    }
    pub fn d3(&self) -> &Line2D {
        &self.lines[2]
    }
    pub fn d4(&self) -> &Line2D {
        &self.lines[3]
    }
}

pub fn build_boundaries(case: &CanineCase) -> Result<SectorBoundarySet, GeometryError> {
    for (name, p) in case.points() {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite(name));
        }
    }
    let l = &case.lateral;
    let c = &case.central;
    let towards_central = c.crown_tip - l.crown_tip;
    let span = towards_central.norm();
    if span < MIN_LINE_SPAN {
        return Err(GeometryError::DegenerateDirection);
    }
    let mesial = towards_central * (1.0 / span);
    let lines = [
        Line2D::through(
            l.distal_crown_hoc,
            l.distal_root_hoc,
            mesial,
            BoundaryId::DistalTangent,
        )?,
        Line2D::through(l.crown_tip, l.root_apex, mesial, BoundaryId::LateralAxis)?,
        Line2D::through(
            l.mesial_crown_hoc,
            l.mesial_root_hoc,
            mesial,
            BoundaryId::MesialTangent,
        )?,
        Line2D::through(c.crown_tip, c.root_apex, mesial, BoundaryId::CentralAxis)?,
    ];
    Ok(SectorBoundarySet {
        lines,
        mesial_dir: mesial,
    })
}

/// True when the side tag agrees with the crown-tip ordering.
pub fn side_consistent(case: &CanineCase, b: &SectorBoundarySet) -> bool {
    b.mesial_dir.x * case.side.expected_mesial_x() > 0.0
}

pub fn signed_distances(p: Point2D, b: &SectorBoundarySet) -> [f64; 4] {
    [
        b.lines[0].signed_distance(p),
        b.lines[1].signed_distance(p),
        b.lines[2].signed_distance(p),
        b.lines[3].signed_distance(p),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sector5 {
    S1,
    S2,
    S3,
    S4,
    S5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sector4 {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sector3 {
    A,
    B,
    C,
}

impl Sector5 {
    pub const ALL: [Sector5; 5] = [
        Sector5::S1,
        Sector5::S2,
        Sector5::S3,
        Sector5::S4,
        Sector5::S5,
    ];
}

impl Sector4 {
    pub const ALL: [Sector4; 4] = [Sector4::I, Sector4::II, Sector4::III, Sector4::IV];
}

impl Sector3 {
    pub const ALL: [Sector3; 3] = [Sector3::A, Sector3::B, Sector3::C];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    Five,
    Four,
    Three,
}

impl LabelSpace {
    pub const ALL: [LabelSpace; 3] = [LabelSpace::Five, LabelSpace::Four, LabelSpace::Three];

    pub fn num_classes(self) -> usize {
        match self {
            LabelSpace::Five => 5,
            LabelSpace::Four => 4,
            LabelSpace::Three => 3,
        }
    }

    /// Labels of the space in index order.
    pub fn labels(self) -> Vec<SectorLabel> {
        (0..self.num_classes())
            .map(|i| SectorLabel::from_index(self, i).expect("index in range"))
            .collect()
    }
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSpace::Five => "five",
            LabelSpace::Four => "four",
            LabelSpace::Three => "three",
        })
    }
}

impl FromStr for LabelSpace {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "five" | "5" => Ok(LabelSpace::Five),
            "four" | "4" => Ok(LabelSpace::Four),
            "three" | "3" => Ok(LabelSpace::Three),
            _ => Err(GeometryError::UnknownLabel(s.to_string())),
        }
    }
}

/// A sector in one of the three systems. Serialized as its short name
/// (`"S3"`, `"IV"`, `"A"`); the names are disjoint across systems so the
/// space is recovered on parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectorLabel {
    Five(Sector5),
    Four(Sector4),
    Three(Sector3),
}

impl SectorLabel {
    pub fn space(self) -> LabelSpace {
        match self {
            SectorLabel::Five(_) => LabelSpace::Five,
            SectorLabel::Four(_) => LabelSpace::Four,
            SectorLabel::Three(_) => LabelSpace::Three,
        }
    }

    /// Zero-based position within the space.
    pub fn index(self) -> usize {
        match self {
            SectorLabel::Five(s) => s as usize,
            SectorLabel::Four(s) => s as usize,
            SectorLabel::Three(s) => s as usize,
        }
    }

    pub fn from_index(space: LabelSpace, i: usize) -> Option<SectorLabel> {
        match space {
            LabelSpace::Five => Sector5::ALL.get(i).map(|s| SectorLabel::Five(*s)),
            LabelSpace::Four => Sector4::ALL.get(i).map(|s| SectorLabel::Four(*s)),
            LabelSpace::Three => Sector3::ALL.get(i).map(|s| SectorLabel::Three(*s)),
        }
    }

    pub fn name(self) -> &'static str {
        const FIVE: [&str; 5] = ["S1", "S2", "S3", "S4", "S5"];
        const FOUR: [&str; 4] = ["I", "II", "III", "IV"];
        const THREE: [&str; 3] = ["A", "B", "C"];
        match self {
            SectorLabel::Five(s) => FIVE[s as usize],
            SectorLabel::Four(s) => FOUR[s as usize],
            SectorLabel::Three(s) => THREE[s as usize],
        }
    }

    /// Parses a label and checks it belongs to `space`.
    pub fn parse_in(space: LabelSpace, s: &str) -> Result<SectorLabel, GeometryError> {
        let label: SectorLabel = s.parse()?;
        if label.space() != space {
            return Err(GeometryError::WrongSpace {
                label,
                expected: space,
            });
        }
        Ok(label)
    }
}

impl fmt::Display for SectorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SectorLabel {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        for space in LabelSpace::ALL {
            for label in space.labels() {
                if label.name().eq_ignore_ascii_case(t) {
                    return Ok(label);
                }
            }
        }
        Err(GeometryError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for SectorLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SectorLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Five-sector classification from precomputed signed distances.
///
/// `δ ≥ −eps` counts as mesial of a boundary, so on-line points go to the
/// more mesial sector. The mesial flags must form a prefix; anything else
/// means two boundaries cross near the point.
pub fn classify5_from_distances(deltas: [f64; 4], eps: f64) -> Result<Sector5, GeometryError> {
    let mesial = deltas.map(|d| d >= -eps);
    let passed = mesial.iter().take_while(|m| **m).count();
    if mesial[passed..].iter().any(|m| *m) {
        return Err(GeometryError::AmbiguousGeometry(deltas));
    }
    Ok(Sector5::ALL[passed])
}

pub fn classify5(p: Point2D, b: &SectorBoundarySet, eps: f64) -> Result<Sector5, GeometryError> {
    classify5_from_distances(signed_distances(p, b), eps)
}

pub fn merge_to4(s: Sector5) -> Sector4 {
    match s {
        Sector5::S1 => Sector4::I,
        Sector5::S2 => Sector4::II,
        Sector5::S3 => Sector4::III,
        Sector5::S4 | Sector5::S5 => Sector4::IV,
    }
}

/// Total map from the five sectors to the three-sector system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap3 {
    pub name: String,
    #[serde(with = "merge_table")]
    pub mapping: [Sector3; 5],
}

mod merge_table {
    use super::{Sector3, SectorLabel};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &[Sector3; 5], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|c| SectorLabel::Three(*c).name()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Sector3; 5], D::Error> {
        let v: Vec<SectorLabel> = Vec::deserialize(d)?;
        let classes: Vec<Sector3> = v
            .into_iter()
            .map(|l| match l {
                SectorLabel::Three(c) => Ok(c),
                other => Err(serde::de::Error::custom(format!("{other} is not A/B/C"))),
            })
            .collect::<Result<_, _>>()?;
        classes
            .try_into()
            .map_err(|_| serde::de::Error::custom("merge table needs five entries"))
    }
}

impl MergeMap3 {
    pub const MESIAL_RISK: &'static str = "mesial-risk";
    pub const DISTAL_FAVORABLE: &'static str = "distal-favorable";

    /// Validates contiguity: each class covers one unbroken run of S1..S5.
    pub fn new(name: impl Into<String>, mapping: [Sector3; 5]) -> Result<Self, GeometryError> {
        let name = name.into();
        let mut seen = Vec::with_capacity(3);
        for (i, c) in mapping.iter().enumerate() {
            if i > 0 && mapping[i - 1] == *c {
                continue;
            }
            if seen.contains(c) {
                return Err(GeometryError::NonContiguousMerge(name));
            }
            seen.push(*c);
        }
        Ok(Self { name, mapping })
    }

    /// S1 → C, S2 → B, S3..S5 → A. A/B split on the lateral long axis.
    pub fn mesial_risk() -> Self {
        use Sector3::*;
        Self::new(Self::MESIAL_RISK, [C, B, A, A, A]).expect("contiguous")
    }

    /// S1,S2 → A, S3,S4 → B, S5 → C.
    pub fn distal_favorable() -> Self {
        use Sector3::*;
        Self::new(Self::DISTAL_FAVORABLE, [A, A, B, B, C]).expect("contiguous")
    }

    pub fn preset(name: &str) -> Result<Self, GeometryError> {
        match name {
            Self::MESIAL_RISK => Ok(Self::mesial_risk()),
            Self::DISTAL_FAVORABLE => Ok(Self::distal_favorable()),
            other => Err(GeometryError::UnknownPreset(other.to_string())),
        }
    }

    pub fn apply(&self, s: Sector5) -> Sector3 {
        self.mapping[s as usize]
    }

    /// Five-sector members of a three-sector class, in mesial order.
    pub fn members(&self, c: Sector3) -> Vec<Sector5> {
        Sector5::ALL
            .into_iter()
            .filter(|s| self.apply(*s) == c)
            .collect()
    }
}

impl Default for MergeMap3 {
    fn default() -> Self {
        Self::mesial_risk()
    }
}

pub fn merge_to3(s: Sector5, m: &MergeMap3) -> Sector3 {
    m.apply(s)
}

/// Expresses a five-sector result in the requested space.
pub fn project(s: Sector5, space: LabelSpace, m: &MergeMap3) -> SectorLabel {
    match space {
        LabelSpace::Five => SectorLabel::Five(s),
        LabelSpace::Four => SectorLabel::Four(merge_to4(s)),
        LabelSpace::Three => SectorLabel::Three(m.apply(s)),
    }
}

pub fn classify(
    case: &CanineCase,
    space: LabelSpace,
    m: &MergeMap3,
) -> Result<SectorLabel, GeometryError> {
    let b = build_boundaries(case)?;
    let s = classify5(case.canine_point, &b, DEFAULT_TIE_EPS)?;
    Ok(project(s, space, m))
}

/// Classifies many cases; results are in input order.
pub fn classify_batch(
    cases: &[CanineCase],
    space: LabelSpace,
    m: &MergeMap3,
    exec: Execution,
) -> Vec<Result<SectorLabel, GeometryError>> {
    exec.map(cases, |c| classify(c, space, m))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Lateral axis x=20, tangents x=10 and x=30, central axis x=40.
    pub fn vertical_strip(p: Point2D) -> CanineCase {
        CanineCase {
            case_id: "strip".into(),
            side: Side::Right,
            canine_point: p,
            lateral: IncisorAnnotation {
                crown_tip: Point2D::new(20.0, 0.0),
                root_apex: Point2D::new(20.0, 60.0),
                distal_crown_hoc: Point2D::new(10.0, 5.0),
                distal_root_hoc: Point2D::new(10.0, 45.0),
                mesial_crown_hoc: Point2D::new(30.0, 5.0),
                mesial_root_hoc: Point2D::new(30.0, 45.0),
            },
            central: AxisAnnotation {
                crown_tip: Point2D::new(40.0, 0.0),
                root_apex: Point2D::new(40.0, 65.0),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::vertical_strip;
    use super::*;
    use proptest::prelude::*;

    fn strip_boundaries() -> SectorBoundarySet {
        build_boundaries(&vertical_strip(Point2D::new(25.0, 0.0))).unwrap()
    }

    #[test]
    fn vertical_strip_lines_point_mesially() {
        let b = strip_boundaries();
        for (line, x) in b.lines.iter().zip([10.0, 20.0, 30.0, 40.0]) {
            assert_eq!(line.anchor.x, x);
            assert!(line.direction.x.abs() < 1e-12);
            assert!((line.normal.x - 1.0).abs() < 1e-12);
            assert!((line.direction.norm() - 1.0).abs() < 1e-9);
            assert!(line.direction.dot(line.normal).abs() < 1e-12);
        }
        assert_eq!(b.mesial_dir, Point2D::new(1.0, 0.0));
    }

    #[test]
    fn mirrored_fixture_flips_normals() {
        let m = vertical_strip(Point2D::new(25.0, 0.0)).mirrored(0.0);
        assert_eq!(m.side, Side::Left);
        let b = build_boundaries(&m).unwrap();
        for (line, x) in b.lines.iter().zip([-10.0, -20.0, -30.0, -40.0]) {
            assert_eq!(line.anchor.x, x);
            assert!((line.normal.x + 1.0).abs() < 1e-12);
        }
        assert!(side_consistent(&m, &b));
    }

    #[test]
    fn coincident_tangent_points_are_degenerate() {
        let mut c = vertical_strip(Point2D::new(25.0, 0.0));
        c.lateral.distal_root_hoc = c.lateral.distal_crown_hoc;
        assert_eq!(
            build_boundaries(&c),
            Err(GeometryError::DegenerateLine(BoundaryId::DistalTangent))
        );
        let mut c = vertical_strip(Point2D::new(25.0, 0.0));
        c.central.crown_tip = c.lateral.crown_tip;
        assert_eq!(build_boundaries(&c), Err(GeometryError::DegenerateDirection));
    }

    #[test]
    fn signed_distances_on_strips() {
        let b = strip_boundaries();
        assert_eq!(
            signed_distances(Point2D::new(25.0, 0.0), &b),
            [15.0, 5.0, -5.0, -15.0]
        );
        assert_eq!(signed_distances(Point2D::new(20.0, 13.0), &b)[1], 0.0);
    }

    #[test]
    fn slanted_line_distance() {
        let line = Line2D::through(
            Point2D::new(0.0, 0.0),
            Point2D::new(0.0, 1.0),
            Point2D::new(1.0, 0.0),
            BoundaryId::DistalTangent,
        )
        .unwrap();
        assert!((line.signed_distance(Point2D::new(3.0, 7.0)) - 3.0).abs() < 1e-12);
        // 45 degree line through the origin, mesial toward +x
        let line = Line2D::through(
            Point2D::new(0.0, 0.0),
            Point2D::new(1.0, 1.0),
            Point2D::new(1.0, 0.0),
            BoundaryId::DistalTangent,
        )
        .unwrap();
        let d = line.signed_distance(Point2D::new(3.0, 7.0));
        assert!((d - (3.0 - 7.0) / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn classify5_examples() {
        let b = strip_boundaries();
        let c = |x: f64| classify5(Point2D::new(x, 0.0), &b, DEFAULT_TIE_EPS).unwrap();
        assert_eq!(c(25.0), Sector5::S3);
        assert_eq!(c(20.0), Sector5::S3);
        assert_eq!(c(45.0), Sector5::S5);
        assert_eq!(c(5.0), Sector5::S1);
        assert_eq!(c(15.0), Sector5::S2);
        assert_eq!(c(35.0), Sector5::S4);
        assert!(matches!(
            classify5_from_distances([-1.0, 1.0, -1.0, -1.0], DEFAULT_TIE_EPS),
            Err(GeometryError::AmbiguousGeometry(_))
        ));
    }

    #[test]
    fn merges() {
        assert_eq!(merge_to4(Sector5::S1), Sector4::I);
        assert_eq!(merge_to4(Sector5::S3), Sector4::III);
        assert_eq!(merge_to4(Sector5::S4), Sector4::IV);
        assert_eq!(merge_to4(Sector5::S5), Sector4::IV);
        let m = MergeMap3::mesial_risk();
        assert_eq!(merge_to3(Sector5::S1, &m), Sector3::C);
        assert_eq!(merge_to3(Sector5::S4, &m), Sector3::A);
        let m = MergeMap3::distal_favorable();
        assert_eq!(merge_to3(Sector5::S2, &m), Sector3::A);
        assert_eq!(merge_to3(Sector5::S5, &m), Sector3::C);
    }

    #[test]
    fn interleaved_merge_rejected() {
        use Sector3::*;
        assert!(MergeMap3::new("bad", [A, B, A, C, C]).is_err());
        assert!(MergeMap3::new("ok", [A, A, A, A, A]).is_ok());
        assert!(MergeMap3::preset("nope").is_err());
    }

    #[test]
    fn classify_composition() {
        let m = MergeMap3::default();
        let at = |x| vertical_strip(Point2D::new(x, 0.0));
        assert_eq!(
            classify(&at(25.0), LabelSpace::Three, &m).unwrap(),
            SectorLabel::Three(Sector3::A)
        );
        assert_eq!(
            classify(&at(5.0), LabelSpace::Four, &m).unwrap(),
            SectorLabel::Four(Sector4::I)
        );
        assert_eq!(
            classify(&at(35.0), LabelSpace::Three, &m).unwrap(),
            SectorLabel::Three(Sector3::A)
        );
        assert_eq!(
            classify(&at(35.0), LabelSpace::Five, &m).unwrap(),
            SectorLabel::Five(Sector5::S4)
        );
    }

    #[test]
    fn labels_parse_and_check_space() {
        assert_eq!("IV".parse::<SectorLabel>().unwrap(), SectorLabel::Four(Sector4::IV));
        assert_eq!("s2".parse::<SectorLabel>().unwrap(), SectorLabel::Five(Sector5::S2));
        assert!(matches!(
            SectorLabel::parse_in(LabelSpace::Three, "III"),
            Err(GeometryError::WrongSpace { .. })
        ));
        assert!("S6".parse::<SectorLabel>().is_err());
        let json = serde_json::to_string(&SectorLabel::Three(Sector3::B)).unwrap();
        assert_eq!(json, "\"B\"");
    }

    #[test]
    fn annotation_file_parses() {
        let doc = r#"{"radiograph_id": "pr-1", "cases": [{"case_id": "pr-1A", "side": "right",
            "canine_point": [25, 0],
            "lateral": {"crown_tip": [20,0], "root_apex": [20,60], "distal_crown_hoc": [10,5],
                        "distal_root_hoc": [10,45], "mesial_crown_hoc": [30,5], "mesial_root_hoc": [30,45]},
            "central": {"crown_tip": [40,0], "root_apex": [40,65]}}]}"#;
        let f: AnnotationFile = serde_json::from_str(doc).unwrap();
        assert_eq!(f.cases[0], {
            let mut c = vertical_strip(Point2D::new(25.0, 0.0));
            c.case_id = "pr-1A".into();
            c
        });
    }

    proptest! {
        #[test]
        fn strip_traversal_is_ordered(y in -10.0f64..50.0) {
            let b = strip_boundaries();
            let mut last = Sector5::S1;
            for i in 0..=600 {
                let x = -5.0 + i as f64 * 0.1;
                let s = classify5(Point2D::new(x, y), &b, DEFAULT_TIE_EPS).unwrap();
                prop_assert!(s >= last);
                last = s;
            }
            prop_assert_eq!(last, Sector5::S5);
        }

        #[test]
        fn batch_matches_single(xs in proptest::collection::vec(-5.0f64..55.0, 1..40)) {
            let m = MergeMap3::default();
            let cases: Vec<_> = xs.iter().map(|x| vertical_strip(Point2D::new(*x, 3.0))).collect();
            let batch = classify_batch(&cases, LabelSpace::Four, &m, Execution::Parallel);
            for (c, r) in cases.iter().zip(batch) {
                prop_assert_eq!(r, classify(c, LabelSpace::Four, &m));
            }
        }
    }
}
