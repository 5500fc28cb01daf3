use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::{AgreementError, KappaResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaComparison {
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
    pub k1: KappaResult,
    pub k2: KappaResult,
}

/// z-test for the difference of two independent kappas.
pub fn compare_kappas(k1: &KappaResult, k2: &KappaResult) -> Result<KappaComparison, AgreementError> {
    if k1.se <= 0.0 || k2.se <= 0.0 {
        return Err(AgreementError::ZeroVariance);
    }
    let z = (k1.kappa - k2.kappa) / (k1.se * k1.se + k2.se * k2.se).sqrt();
    // 2 (1 - Φ(|z|)) = erfc(|z| / √2)
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(KappaComparison {
        z,
        p_value,
        k1: k1.clone(),
        k2: k2.clone(),
    })
}

/// Items needed so that a kappa CI at `ci_level` has half-width `margin`,
/// planning for the worst-case observed agreement (p_o = 0.5):
///
/// `n = ceil(z² · p_o (1 − p_o) / (margin² (1 − p_e)²))`
///
/// Chance agreement `p_e` assumes the positive category has frequency
/// `prevalence` and the remaining categories share the rest evenly,
/// identically for every rater.
pub fn kappa_sample_size(
    ci_level: f64,
    margin: f64,
    prevalence: f64,
    raters: usize,
    categories: usize,
) -> Result<u64, AgreementError> {
    let bad = |msg: &str| Err(AgreementError::InvalidParameter(msg.to_string()));
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return bad("ci_level must be in (0, 1)");
    }
    if !(margin > 0.0 && margin < 1.0) {
        return bad("margin must be in (0, 1)");
    }
    if !(prevalence > 0.0 && prevalence < 1.0) {
        return bad("prevalence must be in (0, 1)");
    }
    if raters < 2 {
        return bad("at least two raters");
    }
    if categories < 2 {
        return bad("at least two categories");
    }
    let z = Normal::standard().inverse_cdf(0.5 + ci_level / 2.0);
    let rest = (1.0 - prevalence) / (categories - 1) as f64;
    let p_e = prevalence * prevalence + (categories - 1) as f64 * rest * rest;
    let p_o = 0.5;
    let n = z * z * p_o * (1.0 - p_o) / (margin * margin * (1.0 - p_e).powi(2));
    Ok(n.ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::{CiMethod, KappaMethod};

    fn k(kappa: f64, se: f64) -> KappaResult {
        KappaResult::new(kappa, se, 100, 0.0, 0.0, KappaMethod::Fleiss, CiMethod::Analytic)
    }

    #[test]
    fn equal_kappas() {
        let c = compare_kappas(&k(0.5, 0.02), &k(0.5, 0.03)).unwrap();
        assert_eq!(c.z, 0.0);
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn reconstructed_group_comparison() {
        // SEs from the printed 95% CIs: width / 3.92
        let se = 0.07 / 3.92;
        let c = compare_kappas(&k(0.72, se), &k(0.78, se)).unwrap();
        assert!((c.z + 2.3759).abs() < 1e-3, "{}", c.z);
        assert!((c.p_value - 0.0175).abs() < 1e-3, "{}", c.p_value);
    }

    #[test]
    fn zero_variance() {
        assert_eq!(
            compare_kappas(&k(1.0, 0.0), &k(0.7, 0.02)),
            Err(AgreementError::ZeroVariance)
        );
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(kappa_sample_size(0.95, 0.2, 0.2, 2, 2).unwrap(), 235);
        assert_eq!(kappa_sample_size(0.95, 0.4, 0.2, 2, 2).unwrap(), 59);
        assert_eq!(kappa_sample_size(0.95, 0.2, 0.5, 2, 2).unwrap(), 97);
        assert!(kappa_sample_size(0.95, 0.0, 0.2, 2, 2).is_err());
        assert!(kappa_sample_size(0.95, 0.2, 1.0, 2, 2).is_err());
    }

    #[test]
    fn halving_margin_quadruples_n() {
        let wide = kappa_sample_size(0.95, 0.4, 0.3, 2, 2).unwrap() as f64;
        let narrow = kappa_sample_size(0.95, 0.2, 0.3, 2, 2).unwrap() as f64;
        assert!((narrow / wide - 4.0).abs() < 0.1);
    }
}
