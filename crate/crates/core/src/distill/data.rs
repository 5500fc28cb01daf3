use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::geometry::{LabelSpace, Sector3, SectorLabel};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clinical {
    pub depth_mm: f64,
    pub angle_deg: f64,
    /// 0 = open apex, 1 = fully formed root.
    pub root_maturity: f64,
}

impl Clinical {
    pub fn as_array(&self) -> [f64; 3] {
        [self.depth_mm, self.angle_deg, self.root_maturity]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case_id: String,
    pub image_features: Vec<f64>,
    pub clinical: Clinical,
    pub label: Sector3,
}

impl Sample {
    pub fn class_index(&self) -> usize {
        self.label as usize
    }

    pub fn one_hot(&self) -> Vec<f64> {
        one_hot(self.class_index(), NUM_CLASSES).expect("Sector3 index is in range")
    }
}

pub fn one_hot(label: usize, k: usize) -> Result<Vec<f64>, DistillError> {
    if label >= k {
        return Err(DistillError::LabelOutOfRange { label, k });
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(v)
}

/// z-score statistics of the clinical fields, fit on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNormalizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ClinicalNormalizer {
    pub fn fit(samples: &[Sample]) -> Self {
        let n = samples.len().max(1) as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.clinical.as_array()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 3];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.clinical.as_array()).zip(mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        // constant columns pass through centred
        let std = var.map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    pub fn apply(&self, c: &Clinical) -> [f64; 3] {
        let a = c.as_array();
        [0, 1, 2].map(|i| (a[i] - self.mean[i]) / self.std[i])
    }
}

fn header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["case_id", "label", "depth_mm", "angle_deg", "root_maturity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..m).map(|i| format!("f{i}")));
    h
}

/// Writes `case_id,label,depth_mm,angle_deg,root_maturity,f0..f{m-1}`.
pub fn write_manifest<W: Write>(writer: W, samples: &[Sample]) -> Result<(), DistillError> {
    let m = samples.first().map_or(0, |s| s.image_features.len());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(m))?;
    for s in samples {
        if s.image_features.len() != m {
            return Err(DistillError::ShapeMismatch {
                expected: m,
                got: s.image_features.len(),
            });
        }
        let mut row = vec![
            s.case_id.clone(),
            SectorLabel::Three(s.label).to_string(),
            s.clinical.depth_mm.to_string(),
            s.clinical.angle_deg.to_string(),
            s.clinical.root_maturity.to_string(),
        ];
        row.extend(s.image_features.iter().map(|f| f.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<Sample>, DistillError> {
    let mut r = csv::Reader::from_reader(reader);
    let head = r.headers()?.clone();
    let m = head.len().saturating_sub(5);
    let expected = header(m);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DistillError::Manifest {
            line: 1,
            message: format!("header must be {}", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |message: String| DistillError::Manifest { line, message };
        let num = |j: usize| -> Result<f64, DistillError> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", expected[j])))
        };
        let label = match SectorLabel::parse_in(LabelSpace::Three, &rec[1]) {
            Ok(SectorLabel::Three(c)) => c,
            Ok(_) => unreachable!("parse_in checks the space"),
            Err(e) => return Err(bad(e.to_string())),
        };
        out.push(Sample {
            case_id: rec[0].to_string(),
            clinical: Clinical {
                depth_mm: num(2)?,
                angle_deg: num(3)?,
                root_maturity: num(4)?,
            },
            image_features: (5..5 + m).map(num).collect::<Result<_, _>>()?,
            label,
        });
    }
    Ok(out)
}
