use rand::Rng;

use super::{
    replicate_spread, AgreementError, BootstrapConfig, CiMethod, KappaMethod, KappaResult,
};
use crate::rng::{stream, Purpose};

/// Per-item category counts from an items × raters label matrix.
pub fn fleiss_counts(ratings: &[Vec<usize>], k: usize) -> Result<Vec<Vec<u64>>, AgreementError> {
    ratings
        .iter()
        .map(|item| {
            let mut row = vec![0u64; k];
            for &label in item {
                if label >= k {
                    return Err(AgreementError::LabelOutOfRange { label, k });
                }
                row[label] += 1;
            }
            Ok(row)
        })
        .collect()
}

fn validate(counts: &[Vec<u64>], raters: u64) -> Result<(), AgreementError> {
    if counts.is_empty() {
        return Err(AgreementError::EmptyInput);
    }
    if counts.len() < 2 {
        return Err(AgreementError::TooFewItems {
            needed: 2,
            got: counts.len(),
        });
    }
    if raters < 2 {
        return Err(AgreementError::TooFewRaters);
    }
    for (item, row) in counts.iter().enumerate() {
        let got: u64 = row.iter().sum();
        if got != raters {
            return Err(AgreementError::UnequalRaterCount {
                item,
                got,
                expected: raters,
            });
        }
    }
    Ok(())
}

/// Point estimate `(kappa, P̄, P̄_e, category proportions)` over the items
/// selected by `rows`.
///
/// Sums are kept as integers and kappa is formed from one exact integer
/// numerator, so it is exactly zero when observed and chance agreement
/// coincide.
fn estimate<'a>(
    rows: impl Iterator<Item = &'a Vec<u64>>,
    k: usize,
    raters: u64,
) -> Result<(f64, f64, f64, Vec<f64>), AgreementError> {
    let r = raters as i128;
    let mut n = 0i128;
    let mut pairs = 0i128;
    let mut category = vec![0i128; k];
    for row in rows {
        n += 1;
        for (c, &v) in category.iter_mut().zip(row) {
            let v = v as i128;
            pairs += v * (v - 1);
            *c += v;
        }
    }
    let d_obs = n * r * (r - 1);
    let d_exp = (n * r) * (n * r);
    let same: i128 = category.iter().map(|c| c * c).sum();
    if same == d_exp {
        return Err(AgreementError::ChanceDegenerate);
    }
    let kappa = (pairs * d_exp - same * d_obs) as f64 / (d_obs * (d_exp - same)) as f64;
    let total = (n * r) as f64;
    let p = category.iter().map(|c| *c as f64 / total).collect();
    Ok((kappa, pairs as f64 / d_obs as f64, same as f64 / d_exp as f64, p))
}

/// Point estimate only, `(kappa, P̄, P̄_e)`.
pub fn fleiss_point(counts: &[Vec<u64>], raters: u64) -> Result<(f64, f64, f64), AgreementError> {
    validate(counts, raters)?;
    let k = counts[0].len();
    let (kappa, p_bar, p_e, _) = estimate(counts.iter(), k, raters)?;
    Ok((kappa, p_bar, p_e))
}

/// Fleiss' kappa with the large-sample standard error of Fleiss, Nee and
/// Landis (valid under the null of chance agreement).
pub fn fleiss_kappa(counts: &[Vec<u64>], raters: u64) -> Result<KappaResult, AgreementError> {
    validate(counts, raters)?;
    let k = counts[0].len();
    let n = counts.len();
    let (kappa, p_bar, p_e, p) = estimate(counts.iter(), k, raters)?;
    let r = raters as f64;
    let pq: f64 = p.iter().map(|v| v * (1.0 - v)).sum();
    let skew: f64 = p.iter().map(|v| v * (1.0 - v) * ((1.0 - v) - v)).sum();
    let inner = (pq * pq - skew).max(0.0);
    let se = std::f64::consts::SQRT_2 / (pq * (n as f64 * r * (r - 1.0)).sqrt()) * inner.sqrt();
    Ok(KappaResult::new(
        kappa,
        se,
        n,
        p_bar,
        p_e,
        KappaMethod::Fleiss,
        CiMethod::Analytic,
    ))
}

/// Fleiss' kappa with an item-resampling bootstrap standard error. Each
/// replicate draws from its own seeded stream, so the result does not depend
/// on the number of workers.
pub fn fleiss_kappa_bootstrap(
    counts: &[Vec<u64>],
    raters: u64,
    cfg: &BootstrapConfig,
) -> Result<KappaResult, AgreementError> {
    let analytic = fleiss_kappa(counts, raters)?;
    let n = counts.len();
    let k = counts[0].len();
    let values = cfg.exec.map_range(cfg.replicates, |b| {
        let mut rng = stream(cfg.seed, Purpose::Bootstrap, b as u64);
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        estimate(picks.iter().map(|&i| &counts[i]), k, raters)
            .ok()
            .map(|(kappa, ..)| kappa)
    });
    let (se, used) = replicate_spread(&values);
    let mut r = KappaResult::new(
        analytic.kappa,
        se,
        n,
        analytic.observed,
        analytic.expected,
        KappaMethod::Fleiss,
        CiMethod::Bootstrap,
    );
    r.replicates = Some(used);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;

    #[test]
    fn hand_example_is_zero() {
        let counts = vec![vec![3, 0], vec![2, 1], vec![1, 2]];
        let r = fleiss_kappa(&counts, 3).unwrap();
        assert!((r.observed - 5.0 / 9.0).abs() < 1e-15);
        assert!((r.expected - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(r.kappa, 0.0);
    }

    #[test]
    fn unanimous_is_one() {
        let counts = vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4], vec![4, 0, 0]];
        let r = fleiss_kappa(&counts, 4).unwrap();
        assert_eq!(r.kappa, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fleiss_kappa(&[vec![2, 2], vec![3, 0]], 3),
            Err(AgreementError::UnequalRaterCount { item: 0, got: 4, expected: 3 })
        ));
        assert_eq!(
            fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3),
            Err(AgreementError::ChanceDegenerate)
        );
        assert_eq!(
            fleiss_kappa(&[vec![1, 0], vec![0, 1]], 1),
            Err(AgreementError::TooFewRaters)
        );
    }

    #[test]
    fn counts_from_label_matrix() {
        let counts = fleiss_counts(&[vec![0, 0, 1], vec![2, 2, 2]], 3).unwrap();
        assert_eq!(counts, vec![vec![2, 1, 0], vec![0, 0, 3]]);
    }

    #[test]
    fn textbook_example() {
        // 10 subjects, 14 raters, 5 categories: P = 0.378, Pe = 0.213
        let counts: Vec<Vec<u64>> = vec![
            vec![0, 0, 0, 0, 14], vec![0, 2, 6, 4, 2], vec![0, 0, 3, 5, 6], vec![0, 3, 9, 2, 0],
            vec![2, 2, 8, 1, 1], vec![7, 7, 0, 0, 0], vec![3, 2, 6, 3, 0], vec![2, 5, 3, 2, 2],
            vec![6, 5, 2, 1, 0], vec![0, 2, 2, 3, 7],
        ];
        let r = fleiss_kappa(&counts, 14).unwrap();
        assert!((r.observed - 0.378).abs() < 5e-4, "{}", r.observed);
        assert!((r.expected - 0.213).abs() < 5e-4, "{}", r.expected);
        assert!((r.kappa - 0.210).abs() < 5e-4, "{}", r.kappa);
    }

    #[test]
    fn bootstrap_is_worker_independent() {
        let counts = vec![
            vec![3, 0, 0], vec![0, 3, 0], vec![1, 2, 0], vec![0, 1, 2],
            vec![0, 0, 3], vec![2, 1, 0], vec![3, 0, 0], vec![0, 2, 1],
        ];
        let cfg = |exec| BootstrapConfig {
            replicates: 300,
            seed: 5,
            exec,
        };
        let a = fleiss_kappa_bootstrap(&counts, 3, &cfg(Execution::Sequential)).unwrap();
        let b = fleiss_kappa_bootstrap(&counts, 3, &cfg(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.kappa && a.kappa <= a.ci_high);
        assert!(a.se > 0.0);
    }
}
