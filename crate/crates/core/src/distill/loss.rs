use super::model::{log_softmax, softmax};
use super::DistillError;

/// Cross-entropy of `softmax(logits)` against a target distribution and its
/// gradient `p − y` (for targets summing to 1).
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let log_p = log_softmax(logits);
    let loss = -target
        .iter()
        .zip(&log_p)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, lp)| y * lp)
        .sum::<f64>();
    let mass: f64 = target.iter().sum();
    let grad = log_p
        .iter()
        .zip(target)
        .map(|(lp, y)| lp.exp() * mass - y)
        .collect();
    (loss, grad)
}

/// Temperature-softened distribution: `p^(1/T)` renormalized, i.e.
/// `softmax(ln p / T)`.
pub fn soften(probs: &[f64], temperature: f64) -> Vec<f64> {
    let powered: Vec<f64> = probs.iter().map(|p| p.powf(1.0 / temperature)).collect();
    let sum: f64 = powered.iter().sum();
    powered.into_iter().map(|p| p / sum).collect()
}

fn check_distribution(p: &[f64]) -> Result<(), DistillError> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DistillError::InvalidDistribution);
    }
    Ok(())
}

/// Distillation loss
///
/// `α·CE(y, softmax(z)) + (1 − α)·T²·KL(soften(teacher, T) ‖ softmax(z / T))`
///
/// and its gradient with respect to the student logits `z`. The KL part's
/// gradient is `T·(softmax(z/T) − soften(teacher, T))`. At `α = 1` the
/// teacher is ignored entirely and the result is exactly the cross-entropy.
pub fn kd_loss(
    student_logits: &[f64],
    teacher_probs: &[f64],
    target: &[f64],
    temperature: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>), DistillError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DistillError::InvalidTemperature(temperature));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DistillError::InvalidAlpha(alpha));
    }
    if alpha == 1.0 {
        return Ok(cross_entropy(student_logits, target));
    }
    check_distribution(teacher_probs)?;
    if teacher_probs.len() != student_logits.len() {
        return Err(DistillError::ShapeMismatch {
            expected: student_logits.len(),
            got: teacher_probs.len(),
        });
    }

    let t = temperature;
    let scaled: Vec<f64> = student_logits.iter().map(|z| z / t).collect();
    let log_ps = log_softmax(&scaled);
    let pt = soften(teacher_probs, t);
    let kl: f64 = pt
        .iter()
        .zip(&log_ps)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lq)| p * (p.ln() - lq))
        .sum();
    let ps = softmax(&scaled);
    let kl_grad: Vec<f64> = ps.iter().zip(&pt).map(|(s, p)| t * (s - p)).collect();

    if alpha == 0.0 {
        return Ok((t * t * kl, kl_grad));
    }
    let (ce, ce_grad) = cross_entropy(student_logits, target);
    let loss = alpha * ce + (1.0 - alpha) * t * t * kl;
    let grad = ce_grad
        .iter()
        .zip(&kl_grad)
        .map(|(c, k)| alpha * c + (1.0 - alpha) * k)
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_student_pure_ce() {
        let (l, _) = kd_loss(&[0.0; 3], &[0.7, 0.2, 0.1], &[1.0, 0.0, 0.0], 2.0, 1.0).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matching_teacher_pure_kl_is_zero() {
        let z = [0.3, -1.2, 2.0];
        let teacher = softmax(&z);
        let (l, g) = kd_loss(&z, &teacher, &[0.0, 1.0, 0.0], 2.0, 0.0).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mixed_hand_example() {
        // KL((0.7, 0.2, 0.1) || uniform), evaluated term by term
        let kl = 0.7 * (0.7f64 * 3.0).ln() + 0.2 * (0.2f64 * 3.0).ln() + 0.1 * (0.1f64 * 3.0).ln();
        assert!((kl - 0.296_793_736_124_772_3).abs() < 1e-12);
        let (l, _) = kd_loss(&[0.0; 3], &[0.7, 0.2, 0.1], &[1.0, 0.0, 0.0], 1.0, 0.5).unwrap();
        assert!((l - (0.5 * 3f64.ln() + 0.5 * kl)).abs() < 1e-12);
    }

    #[test]
    fn invalid_arguments() {
        let z = [0.0; 3];
        let t = [0.5, 0.25, 0.25];
        let y = [1.0, 0.0, 0.0];
        assert!(matches!(kd_loss(&z, &t, &y, 0.0, 0.5), Err(DistillError::InvalidTemperature(_))));
        assert!(matches!(kd_loss(&z, &t, &y, 2.0, 1.5), Err(DistillError::InvalidAlpha(_))));
        assert!(matches!(
            kd_loss(&z, &[0.5, 0.5, 0.5], &y, 2.0, 0.5),
            Err(DistillError::InvalidDistribution)
        ));
    }

    #[test]
    fn soften_flattens() {
        let p = soften(&[0.7, 0.2, 0.1], 2.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[0] < 0.7 && p[2] > 0.1);
        for (a, b) in soften(&[0.7, 0.2, 0.1], 1.0).iter().zip([0.7, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn dist() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, 3).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn loss_is_non_negative(
            z in proptest::collection::vec(-20.0f64..20.0, 3),
            teacher in dist(),
            class in 0usize..3,
            t in 0.5f64..5.0,
            alpha in 0.0f64..=1.0,
        ) {
            let mut y = vec![0.0; 3];
            y[class] = 1.0;
            let (l, _) = kd_loss(&z, &teacher, &y, t, alpha).unwrap();
            prop_assert!(l >= -1e-12);
        }

        #[test]
        fn softmax_sums_to_one(z in proptest::collection::vec(-300.0f64..300.0, 1..8)) {
            let p = softmax(&z);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v > 0.0));
        }
    }
}
