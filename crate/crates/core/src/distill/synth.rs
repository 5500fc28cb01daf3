//! Geometry-driven synthetic dataset.
//!
//! Each sample is a jittered incisor fixture with a canine point drawn
//! uniformly from its class's strip. The fixture is built in a canonical
//! frame (lines roughly vertical, mesial toward +x), then mirrored for left
//! sides and moved by a random similarity transform. Labels are re-checked
//! with [`geometry::classify`](crate::geometry::classify) before features are
//! formed.
//!
//! Features: `P·v + σ·ε` where `v` holds the four signed distances and the
//! canine point relative to the lateral crown tip, divided by
//! [`FEATURE_SCALE`], and `P` is a fixed Gaussian projection drawn from the
//! seed.
//!
//! Clinical metadata follows a linear model in the canonical distance to the
//! lateral long axis (`δ2`, px, mesial positive):
//!
//! - depth_mm = 10 + 0.12·δ2 + N(0, 1)
//! - angle_deg = 18 + 0.9·δ2 + N(0, 4)
//! - root_maturity = clamp(0.55 + 0.006·δ2 + N(0, 0.12), 0, 1)

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::{Clinical, Sample};
use super::DistillError;
use crate::exec::Execution;
use crate::geometry::{
    build_boundaries, classify5, project, signed_distances, AxisAnnotation, CanineCase,
    IncisorAnnotation, LabelSpace, MergeMap3, Point2D, Sector3, Sector5, SectorLabel, Side,
    DEFAULT_TIE_EPS,
};
use crate::rng::{stream, Purpose};

/// Class counts of the reference cohort (sectors A, B, C).
pub const DEFAULT_CLASS_COUNTS: [u32; 3] = [592, 568, 368];

/// Pixels per feature unit.
pub const FEATURE_SCALE: f64 = 10.0;
/// Raw geometric inputs per sample: four distances and two coordinates.
pub const RAW_DIM: usize = 6;

/// Width of the open-ended outer strips (S1 and S5) in the canonical frame.
const OUTER_STRIP_PX: f64 = 15.0;
const LANDMARK_JITTER_PX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Class shares for A, B, C.
    pub proportions: [f64; 3],
    pub n: usize,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub seed: u64,
    pub merge_preset: String,
    /// Canine points keep this horizontal distance (canonical px) from every
    /// boundary.
    pub margin_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let total: u32 = DEFAULT_CLASS_COUNTS.iter().sum();
        Self {
            proportions: DEFAULT_CLASS_COUNTS.map(|c| c as f64 / total as f64),
            n: total as usize,
            noise_sigma: 0.05,
            feature_dim: 16,
            seed: 0,
            merge_preset: MergeMap3::MESIAL_RISK.to_string(),
            margin_px: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<MergeMap3, DistillError> {
        let p = &self.proportions;
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(DistillError::InvalidProportions(p.to_vec()));
        }
        if self.feature_dim == 0 {
            return Err(DistillError::InvalidConfig("feature_dim must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DistillError::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if !(0.0..2.0).contains(&self.margin_px) {
            return Err(DistillError::InvalidConfig("margin_px must be in [0, 2)".into()));
        }
        let map = MergeMap3::preset(&self.merge_preset)?;
        for c in Sector3::ALL {
            if p[c as usize] > 0.0 && map.members(c).is_empty() {
                return Err(DistillError::InvalidConfig(format!(
                    "preset {} has no sector for class {}",
                    map.name,
                    SectorLabel::Three(c)
                )));
            }
        }
        Ok(map)
    }
}

/// How a sample was generated, kept for consistency checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub case: CanineCase,
    pub sector5: Sector5,
    /// Noise-free geometric inputs `v`.
    pub raw: [f64; RAW_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<Sample>,
    pub provenance: Vec<Provenance>,
    /// `feature_dim × RAW_DIM`, row-major.
    pub projection: Vec<f64>,
}

impl SynthDataset {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(Sample::class_index).collect()
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn canonical_fixture(rng: &mut impl Rng) -> (IncisorAnnotation, AxisAnnotation) {
    let mut j = || uniform(rng, -LANDMARK_JITTER_PX, LANDMARK_JITTER_PX);
    let lateral = IncisorAnnotation {
        crown_tip: Point2D::new(20.0 + j(), 0.0),
        root_apex: Point2D::new(20.0 + j(), 60.0),
        distal_crown_hoc: Point2D::new(10.0 + j(), 5.0),
        distal_root_hoc: Point2D::new(11.0 + j(), 45.0),
        mesial_crown_hoc: Point2D::new(30.0 + j(), 5.0),
        mesial_root_hoc: Point2D::new(29.0 + j(), 45.0),
    };
    let central = AxisAnnotation {
        crown_tip: Point2D::new(40.0 + j(), 0.0),
        root_apex: Point2D::new(40.0 + j(), 65.0),
    };
    (lateral, central)
}

/// x where the line through `a`, `b` crosses height `y`.
fn x_at(a: Point2D, b: Point2D, y: f64) -> f64 {
    a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y)
}

fn generate_one(
    i: usize,
    cfg: &SynthConfig,
    map: &MergeMap3,
    projection: &[f64],
) -> Result<(Sample, Provenance), DistillError> {
    let mut rng = stream(cfg.seed, Purpose::SynthSample, i as u64);
    let u: f64 = rng.random();
    let mut class = Sector3::C;
    let mut acc = 0.0;
    for c in Sector3::ALL {
        acc += cfg.proportions[c as usize];
        if u < acc && cfg.proportions[c as usize] > 0.0 {
            class = c;
            break;
        }
    }
    if cfg.proportions[class as usize] == 0.0 {
        // rounding left u above the cumulative sum; take the last non-empty class
        class = *Sector3::ALL
            .iter()
            .rev()
            .find(|c| cfg.proportions[**c as usize] > 0.0)
            .expect("validated proportions");
    }

    let (lateral, central) = canonical_fixture(&mut rng);
    let y = uniform(&mut rng, 0.0, 30.0);
    let cuts = [
        x_at(lateral.distal_crown_hoc, lateral.distal_root_hoc, y),
        x_at(lateral.crown_tip, lateral.root_apex, y),
        x_at(lateral.mesial_crown_hoc, lateral.mesial_root_hoc, y),
        x_at(central.crown_tip, central.root_apex, y),
    ];
    let members = map.members(class);
    let first = members[0] as usize;
    let last = *members.last().expect("non-empty") as usize;
    let lo = if first == 0 { cuts[0] - OUTER_STRIP_PX } else { cuts[first - 1] };
    let hi = if last == 4 { cuts[3] + OUTER_STRIP_PX } else { cuts[last] };
    let x = uniform(&mut rng, lo + cfg.margin_px, hi - cfg.margin_px);

    let canonical = CanineCase {
        case_id: format!("syn-{i:05}"),
        side: Side::Right,
        canine_point: Point2D::new(x, y),
        lateral,
        central,
    };
    let delta2 = signed_distances(canonical.canine_point, &build_boundaries(&canonical)?)[1];

    let mirrored = rng.random::<bool>();
    let theta = uniform(&mut rng, -12.0, 12.0).to_radians();
    let scale = uniform(&mut rng, 0.85, 1.15);
    let shift = Point2D::new(uniform(&mut rng, 100.0, 900.0), uniform(&mut rng, 100.0, 900.0));
    let (sin, cos) = theta.sin_cos();
    let base = if mirrored { canonical.mirrored(0.0) } else { canonical };
    let case = base.map_points(|p| {
        Point2D::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y) * scale + shift
    });

    let bounds = build_boundaries(&case)?;
    let sector5 = classify5(case.canine_point, &bounds, DEFAULT_TIE_EPS)?;
    if project(sector5, LabelSpace::Three, map) != SectorLabel::Three(class) {
        return Err(DistillError::GeneratorInconsistent(case.case_id));
    }

    let d = signed_distances(case.canine_point, &bounds);
    let rel = case.canine_point - case.lateral.crown_tip;
    let raw = [d[0], d[1], d[2], d[3], rel.x, rel.y].map(|v| v / FEATURE_SCALE);
    let image_features: Vec<f64> = projection
        .chunks_exact(RAW_DIM)
        .map(|row| {
            let clean: f64 = row.iter().zip(&raw).map(|(p, v)| p * v).sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            clean + cfg.noise_sigma * noise
        })
        .collect();

    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let clinical = Clinical {
        depth_mm: 10.0 + 0.12 * delta2 + gauss(),
        angle_deg: 18.0 + 0.9 * delta2 + 4.0 * gauss(),
        root_maturity: (0.55 + 0.006 * delta2 + 0.12 * gauss()).clamp(0.0, 1.0),
    };

    let sample = Sample {
        case_id: case.case_id.clone(),
        image_features,
        clinical,
        label: class,
    };
    Ok((sample, Provenance { case, sector5, raw }))
}

pub fn synth_generate(cfg: &SynthConfig, exec: Execution) -> Result<SynthDataset, DistillError> {
    let map = cfg.validate()?;
    let mut prng = stream(cfg.seed, Purpose::SynthProjection, 0);
    let norm = 1.0 / (RAW_DIM as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.feature_dim * RAW_DIM)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut prng);
            norm * z
        })
        .collect();
    let generated = exec.map_range(cfg.n, |i| generate_one(i, cfg, &map, &projection));
    let mut samples = Vec::with_capacity(cfg.n);
    let mut provenance = Vec::with_capacity(cfg.n);
    for g in generated {
        let (s, p) = g?;
        samples.push(s);
        provenance.push(p);
    }
    Ok(SynthDataset {
        samples,
        provenance,
        projection,
    })
}

/// Number of samples whose stored label differs from the geometry module's
/// classification of the generating case.
pub fn verify_generator(ds: &SynthDataset, map: &MergeMap3) -> usize {
    ds.samples
        .iter()
        .zip(&ds.provenance)
        .filter(|(s, p)| {
            crate::geometry::classify(&p.case, LabelSpace::Three, map)
                != Ok(SectorLabel::Three(s.label))
        })
        .count()
}
