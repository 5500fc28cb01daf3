use super::loss::{cross_entropy, kd_loss};
use super::model::MlpModel;
use super::DistillError;

/// A loss defined on the logits of one sample.
pub trait LogitLoss {
    /// Loss value and its gradient with respect to the logits.
    fn eval(&self, logits: &[f64]) -> Result<(f64, Vec<f64>), DistillError>;
}

pub struct CrossEntropyLoss {
    pub target: Vec<f64>,
}

impl LogitLoss for CrossEntropyLoss {
    fn eval(&self, logits: &[f64]) -> Result<(f64, Vec<f64>), DistillError> {
        Ok(cross_entropy(logits, &self.target))
    }
}

pub struct KdLoss {
    pub teacher_probs: Vec<f64>,
    pub target: Vec<f64>,
    pub temperature: f64,
    pub alpha: f64,
}

impl LogitLoss for KdLoss {
    fn eval(&self, logits: &[f64]) -> Result<(f64, Vec<f64>), DistillError> {
        kd_loss(logits, &self.teacher_probs, &self.target, self.temperature, self.alpha)
    }
}

fn total_loss(model: &MlpModel, loss: &dyn LogitLoss, x: &[f64], l2: f64) -> Result<f64, DistillError> {
    let logits = model.forward(x)?.logits;
    Ok(loss.eval(&logits)?.0 + model.l2_penalty(l2))
}

/// Largest relative error between the analytic parameter gradient and a
/// central finite difference with step `h`, over all parameters.
///
/// Relative error is `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn gradient_check(
    model: &MlpModel,
    loss: &dyn LogitLoss,
    x: &[f64],
    l2: f64,
    h: f64,
) -> Result<f64, DistillError> {
    let trace = model.trace(x)?;
    let (_, dz) = loss.eval(trace.logits())?;
    let mut g = model.backward(&trace, &dz);
    model.add_l2_gradient(&mut g, l2);
    let analytic = g.flatten();

    let base = model.params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let up = total_loss(&probe, loss, x, l2)?;
        p[i] = base[i] - h;
        probe.set_params(&p);
        let down = total_loss(&probe, loss, x, l2)?;
        let n = (up - down) / (2.0 * h);
        worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-6));
    }
    Ok(worst)
}
