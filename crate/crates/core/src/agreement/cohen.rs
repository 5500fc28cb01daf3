use rand::Rng;

use super::{
    replicate_spread, AgreementError, BootstrapConfig, CiMethod, KappaMethod, KappaResult,
};
use crate::rng::{stream, Purpose};

/// k×k table of pair counts, rows = rater A, columns = rater B.
pub fn contingency(pairs: &[(usize, usize)], k: usize) -> Result<Vec<Vec<u64>>, AgreementError> {
    let mut table = vec![vec![0u64; k]; k];
    for &(a, b) in pairs {
        for label in [a, b] {
            if label >= k {
                return Err(AgreementError::LabelOutOfRange { label, k });
            }
        }
        table[a][b] += 1;
    }
    Ok(table)
}

fn point(table: &[Vec<u64>], n: usize) -> Result<(f64, f64, f64), AgreementError> {
    let n_f = n as f64;
    let k = table.len();
    let agree: u64 = (0..k).map(|c| table[c][c]).sum();
    let p_o = agree as f64 / n_f;
    let p_e: f64 = (0..k)
        .map(|c| {
            let row: u64 = table[c].iter().sum();
            let col: u64 = table.iter().map(|r| r[c]).sum();
            (row as f64 / n_f) * (col as f64 / n_f)
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(AgreementError::ChanceDegenerate);
    }
    Ok(((p_o - p_e) / (1.0 - p_e), p_o, p_e))
}

fn check_len(n: usize) -> Result<(), AgreementError> {
    match n {
        0 => Err(AgreementError::EmptyInput),
        1 => Err(AgreementError::TooFewItems { needed: 2, got: 1 }),
        _ => Ok(()),
    }
}

/// Cohen's kappa with the analytic standard error
/// `sqrt(p_o (1 - p_o) / (n (1 - p_e)^2))`.
pub fn cohen_kappa(pairs: &[(usize, usize)], k: usize) -> Result<KappaResult, AgreementError> {
    check_len(pairs.len())?;
    let table = contingency(pairs, k)?;
    let n = pairs.len();
    let (kappa, p_o, p_e) = point(&table, n)?;
    let se = (p_o * (1.0 - p_o) / (n as f64 * (1.0 - p_e).powi(2))).sqrt();
    Ok(KappaResult::new(
        kappa,
        se,
        n,
        p_o,
        p_e,
        KappaMethod::Cohen,
        CiMethod::Analytic,
    ))
}

/// Cohen's kappa with a bootstrap (item-resampling) standard error; the
/// interval is `kappa ± z·se_boot`. Replicates with undefined kappa are
/// skipped.
pub fn cohen_kappa_bootstrap(
    pairs: &[(usize, usize)],
    k: usize,
    cfg: &BootstrapConfig,
) -> Result<KappaResult, AgreementError> {
    let analytic = cohen_kappa(pairs, k)?;
    let n = pairs.len();
    let values = cfg.exec.map_range(cfg.replicates, |b| {
        let mut rng = stream(cfg.seed, Purpose::Bootstrap, b as u64);
        let mut table = vec![vec![0u64; k]; k];
        for _ in 0..n {
            let (a, c) = pairs[rng.random_range(0..n)];
            table[a][c] += 1;
        }
        point(&table, n).ok().map(|(kappa, _, _)| kappa)
    });
    let (se, used) = replicate_spread(&values);
    let mut r = KappaResult::new(
        analytic.kappa,
        se,
        n,
        analytic.observed,
        analytic.expected,
        KappaMethod::Cohen,
        CiMethod::Bootstrap,
    );
    r.replicates = Some(used);
    Ok(r)
}
