//! Chance-corrected agreement statistics.
//!
//! Cohen's kappa for two raters, Fleiss' kappa for a fixed number of raters
//! per item, analytic and bootstrap confidence intervals, the two-sided
//! z-test between independent kappas, sample-size planning, and the four
//! agreement tables produced from a rating study.

mod cohen;
mod compare;
mod fleiss;
mod tables;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

pub use cohen::{cohen_kappa, cohen_kappa_bootstrap, contingency};
pub use compare::{compare_kappas, kappa_sample_size, KappaComparison};
pub use fleiss::{fleiss_counts, fleiss_kappa, fleiss_kappa_bootstrap, fleiss_point};
pub use tables::{
    study_tables, CalibrationRow, ComparisonCell, Coverage, GroupCell, IntraRow, KappaCell,
    Phase, PhaseInter, RatingRecord, SpaceTables, StudyTables, TablesConfig,
};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("no items to rate")]
    EmptyInput,
    #[error("at least {needed} items are required, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("label {label} out of range for {k} categories")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("chance agreement is 1; kappa is undefined")]
    ChanceDegenerate,
    #[error("item {item} has {got} ratings, expected {expected}")]
    UnequalRaterCount { item: usize, got: u64, expected: u64 },
    #[error("at least two raters per item are required")]
    TooFewRaters,
    #[error("standard errors are zero; the z-test is undefined")]
    ZeroVariance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("incomplete study: {0}")]
    IncompleteStudy(String),
    #[error("conflicting records: {0}")]
    ConflictingRecords(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMethod {
    Cohen,
    Fleiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Analytic,
    Bootstrap,
}

/// Viera–Garrett interpretation bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLabel {
    NoAgreement,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
    Perfect,
}

impl fmt::Display for AgreementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgreementLabel::NoAgreement => "no agreement",
            AgreementLabel::Slight => "slight",
            AgreementLabel::Fair => "fair",
            AgreementLabel::Moderate => "moderate",
            AgreementLabel::Substantial => "substantial",
            AgreementLabel::AlmostPerfect => "almost perfect",
            AgreementLabel::Perfect => "perfect",
        })
    }
}

/// Band lookup. Bands are printed with two decimals (0.01–0.20,
/// 0.21–0.40, ...); the gaps between printed bands belong to the upper band,
/// so `0.20` is slight and `0.2000001` is fair. Below 0.01 is no agreement.
pub fn label_agreement(kappa: f64) -> AgreementLabel {
    if kappa >= 1.0 {
        AgreementLabel::Perfect
    } else if kappa > 0.80 {
        AgreementLabel::AlmostPerfect
    } else if kappa > 0.60 {
        AgreementLabel::Substantial
    } else if kappa > 0.40 {
        AgreementLabel::Moderate
    } else if kappa > 0.20 {
        AgreementLabel::Fair
    } else if kappa >= 0.01 {
        AgreementLabel::Slight
    } else {
        AgreementLabel::NoAgreement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_items: usize,
    /// Observed agreement (p_o for Cohen, mean P_i for Fleiss).
    pub observed: f64,
    /// Chance agreement.
    pub expected: f64,
    pub agreement_label: AgreementLabel,
    pub method: KappaMethod,
    pub ci_method: CiMethod,
    /// Bootstrap replicates that produced a defined kappa.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
}

impl KappaResult {
    pub(crate) fn new(
        kappa: f64,
        se: f64,
        n_items: usize,
        observed: f64,
        expected: f64,
        method: KappaMethod,
        ci_method: CiMethod,
    ) -> Self {
        let half = Z_95 * se;
        Self {
            kappa,
            se,
            ci_low: (kappa - half).clamp(-1.0, 1.0),
            ci_high: (kappa + half).clamp(-1.0, 1.0),
            n_items,
            observed,
            expected,
            agreement_label: label_agreement(kappa),
            method,
            ci_method,
            replicates: None,
        }
    }

    /// Rebuilds a result from a reported kappa and its 95% interval, with
    /// `se = (high − low) / (2·1.96)`. Item count is zero and the
    /// agreement proportions are unknown (NaN).
    pub fn from_interval(kappa: f64, ci_low: f64, ci_high: f64, method: KappaMethod) -> Self {
        let mut r = Self::new(
            kappa,
            (ci_high - ci_low) / (2.0 * Z_95),
            0,
            f64::NAN,
            f64::NAN,
            method,
            CiMethod::Analytic,
        );
        r.ci_low = ci_low;
        r.ci_high = ci_high;
        r
    }

    /// "0.85 (0.83-0.87) almost perfect"
    pub fn summary(&self) -> String {
        format!(
            "{:.2} ({:.2}-{:.2}) {}",
            self.kappa, self.ci_low, self.ci_high, self.agreement_label
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

/// Standard deviation of the defined replicate values, plus their count.
pub(crate) fn replicate_spread(values: &[Option<f64>]) -> (f64, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    if n < 2 {
        return (0.0, n);
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var.sqrt(), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_examples() {
        assert_eq!(label_agreement(0.85), AgreementLabel::AlmostPerfect);
        assert_eq!(label_agreement(0.76), AgreementLabel::Substantial);
        assert_eq!(label_agreement(0.005), AgreementLabel::NoAgreement);
        assert_eq!(label_agreement(1.0), AgreementLabel::Perfect);
        assert_eq!(label_agreement(-0.3), AgreementLabel::NoAgreement);
        assert_eq!(label_agreement(0.40), AgreementLabel::Fair);
    }

    #[test]
    fn band_edges() {
        let eps = 1e-9;
        let edges = [
            (0.01, AgreementLabel::NoAgreement, AgreementLabel::Slight, AgreementLabel::Slight),
            (0.20, AgreementLabel::Slight, AgreementLabel::Slight, AgreementLabel::Fair),
            (0.40, AgreementLabel::Fair, AgreementLabel::Fair, AgreementLabel::Moderate),
            (0.60, AgreementLabel::Moderate, AgreementLabel::Moderate, AgreementLabel::Substantial),
            (0.80, AgreementLabel::Substantial, AgreementLabel::Substantial, AgreementLabel::AlmostPerfect),
            (1.00, AgreementLabel::AlmostPerfect, AgreementLabel::Perfect, AgreementLabel::Perfect),
        ];
        for (edge, below, at, above) in edges {
            assert_eq!(label_agreement(edge - eps), below, "below {edge}");
            assert_eq!(label_agreement(edge), at, "at {edge}");
            assert_eq!(label_agreement(edge + eps), above, "above {edge}");
        }
    }

    proptest! {
        #[test]
        fn labels_are_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(label_agreement(lo) <= label_agreement(hi));
        }
    }
}
