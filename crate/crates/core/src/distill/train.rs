use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{ClinicalNormalizer, Sample, NUM_CLASSES};
use super::loss::{cross_entropy, kd_loss};
use super::model::{Gradients, MlpModel};
use super::DistillError;
use crate::exec::Execution;
use crate::metrics::{confusion, ConfusionMatrix};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub l2: f64,
    pub early_stopping: bool,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            alpha: 0.5,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            l2: 1e-4,
            early_stopping: true,
            teacher_hidden: vec![32, 16],
            student_hidden: vec![16],
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DistillError::InvalidTemperature(self.temperature));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::InvalidAlpha(self.alpha));
        }
        let bad = |m: &str| Err(DistillError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if self.teacher_hidden.contains(&0) || self.student_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
    Baseline,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub model: Role,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (None when no epoch ran).
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub net: TrainedModel,
    pub normalizer: ClinicalNormalizer,
}

impl TeacherModel {
    pub fn probs(&self, s: &Sample) -> Result<Vec<f64>, DistillError> {
        Ok(self.net.model.forward(&teacher_input(s, &self.normalizer))?.probs)
    }
}

/// Image features followed by z-scored clinical fields.
pub fn teacher_input(s: &Sample, norm: &ClinicalNormalizer) -> Vec<f64> {
    let mut x = s.image_features.clone();
    x.extend_from_slice(&norm.apply(&s.clinical));
    x
}

pub fn student_input(s: &Sample) -> Vec<f64> {
    s.image_features.clone()
}

fn sizes(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(NUM_CLASSES);
    v
}

pub fn predict(model: &MlpModel, inputs: &[Vec<f64>], exec: Execution) -> Result<Vec<usize>, DistillError> {
    exec.map(inputs, |x| {
        model.forward(x).map(|f| {
            // first maximum wins
            f.probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0
        })
    })
    .into_iter()
    .collect()
}

pub fn evaluate_model(
    model: &MlpModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    exec: Execution,
) -> Result<ConfusionMatrix, DistillError> {
    let pred = predict(model, inputs, exec)?;
    let mut cm = confusion(labels, &pred, NUM_CLASSES).map_err(|e| DistillError::InvalidConfig(e.to_string()))?;
    cm.class_names = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    Ok(cm)
}

fn accuracy(model: &MlpModel, inputs: &[Vec<f64>], labels: &[usize], exec: Execution) -> Result<f64, DistillError> {
    let pred = predict(model, inputs, exec)?;
    let hits = pred.iter().zip(labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

enum Targets<'a> {
    Hard,
    Distill { teacher_probs: &'a [Vec<f64>] },
}

struct Fit<'a> {
    role: Role,
    sizes: Vec<usize>,
    inputs: &'a [Vec<f64>],
    labels: &'a [usize],
    targets: Targets<'a>,
    val: Option<(&'a [Vec<f64>], &'a [usize])>,
    init: Purpose,
    shuffle: Purpose,
}

fn fit(job: Fit<'_>, cfg: &DistillConfig, exec: Execution) -> Result<TrainedModel, DistillError> {
    cfg.validate()?;
    if job.inputs.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let mut model = MlpModel::init(&job.sizes, &mut stream(cfg.seed, job.init, 0))?;
    let one_hots: Vec<Vec<f64>> = job
        .labels
        .iter()
        .map(|&l| super::data::one_hot(l, NUM_CLASSES))
        .collect::<Result<_, _>>()?;

    let per_sample = |model: &MlpModel, i: usize| -> Result<(f64, Gradients), DistillError> {
        let trace = model.trace(&job.inputs[i])?;
        let (loss, dz) = match job.targets {
            Targets::Hard => cross_entropy(trace.logits(), &one_hots[i]),
            Targets::Distill { teacher_probs } => kd_loss(
                trace.logits(),
                &teacher_probs[i],
                &one_hots[i],
                cfg.temperature,
                cfg.alpha,
            )?,
        };
        Ok((loss, model.backward(&trace, &dz)))
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, MlpModel)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..job.inputs.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut stream(cfg.seed, job.shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = exec.map(batch, |&i| per_sample(&model, i));
            let mut grad = Gradients::zeros_like(&model);
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            model.add_l2_gradient(&mut grad, cfg.l2);
            if !grad.is_finite() {
                return Err(DistillError::NonFiniteLoss { epoch });
            }
            model.step(&grad, cfg.learning_rate);
        }
        let train_loss = loss_sum / job.inputs.len() as f64 + model.l2_penalty(cfg.l2);
        if !train_loss.is_finite() || !model.is_finite() {
            return Err(DistillError::NonFiniteLoss { epoch });
        }
        let val_accuracy = match job.val {
            Some((x, y)) if !y.is_empty() => Some(accuracy(&model, x, y, exec)?),
            _ => None,
        };
        log.push(EpochLog {
            model: job.role,
            epoch,
            train_loss,
            val_accuracy,
        });
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.early_stopping && since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    let ran = log.last().map(|l| l.epoch);
    match best {
        Some((_, epoch, m)) if cfg.early_stopping => Ok(TrainedModel {
            model: m,
            log,
            best_epoch: Some(epoch),
        }),
        _ => Ok(TrainedModel {
            model,
            log,
            best_epoch: ran,
        }),
    }
}

fn labels_of(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(Sample::class_index).collect()
}

/// Trains the multimodal teacher with cross-entropy and L2. When `val` is
/// given, its accuracy is logged each epoch and drives early stopping.
pub fn train_teacher(
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &DistillConfig,
    exec: Execution,
) -> Result<TeacherModel, DistillError> {
    if train.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let normalizer = ClinicalNormalizer::fit(train);
    let inputs: Vec<Vec<f64>> = train.iter().map(|s| teacher_input(s, &normalizer)).collect();
    let labels = labels_of(train);
    let val_inputs: Vec<Vec<f64>> = val
        .unwrap_or_default()
        .iter()
        .map(|s| teacher_input(s, &normalizer))
        .collect();
    let val_labels = labels_of(val.unwrap_or_default());
    let net = fit(
        Fit {
            role: Role::Teacher,
            sizes: sizes(inputs[0].len(), &cfg.teacher_hidden),
            inputs: &inputs,
            labels: &labels,
            targets: Targets::Hard,
            val: val.map(|_| (val_inputs.as_slice(), val_labels.as_slice())),
            init: Purpose::TeacherInit,
            shuffle: Purpose::TeacherShuffle,
        },
        cfg,
        exec,
    )?;
    Ok(TeacherModel { net, normalizer })
}

fn student_job<'a>(
    role: Role,
    inputs: &'a [Vec<f64>],
    labels: &'a [usize],
    targets: Targets<'a>,
    val: Option<(&'a [Vec<f64>], &'a [usize])>,
    cfg: &DistillConfig,
) -> Fit<'a> {
    Fit {
        role,
        sizes: sizes(inputs[0].len(), &cfg.student_hidden),
        inputs,
        labels,
        targets,
        val,
        init: Purpose::StudentInit,
        shuffle: Purpose::StudentShuffle,
    }
}

/// Image-only student trained on the distillation loss against the
/// teacher's probabilities for each training sample.
pub fn distill_student(
    teacher: &TeacherModel,
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &DistillConfig,
    exec: Execution,
) -> Result<TrainedModel, DistillError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let teacher_probs: Vec<Vec<f64>> = exec
        .map(train, |s| teacher.probs(s))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let inputs: Vec<Vec<f64>> = train.iter().map(student_input).collect();
    let labels = labels_of(train);
    let val_inputs: Vec<Vec<f64>> = val.unwrap_or_default().iter().map(student_input).collect();
    let val_labels = labels_of(val.unwrap_or_default());
    let mut out = fit(
        student_job(
            Role::Student,
            &inputs,
            &labels,
            Targets::Distill {
                teacher_probs: &teacher_probs,
            },
            val.map(|_| (val_inputs.as_slice(), val_labels.as_slice())),
            cfg,
        ),
        cfg,
        exec,
    )?;
    out.log.iter_mut().for_each(|l| l.model = Role::Student);
    Ok(out)
}

/// The student architecture trained on hard labels alone, with the
/// student's random streams.
pub fn train_student_baseline(
    train: &[Sample],
    val: Option<&[Sample]>,
    cfg: &DistillConfig,
    exec: Execution,
) -> Result<TrainedModel, DistillError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let inputs: Vec<Vec<f64>> = train.iter().map(student_input).collect();
    let labels = labels_of(train);
    let val_inputs: Vec<Vec<f64>> = val.unwrap_or_default().iter().map(student_input).collect();
    let val_labels = labels_of(val.unwrap_or_default());
    fit(
        student_job(
            Role::Baseline,
            &inputs,
            &labels,
            Targets::Hard,
            val.map(|_| (val_inputs.as_slice(), val_labels.as_slice())),
            cfg,
        ),
        cfg,
        exec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{split, synth_generate, SplitSpec, SynthConfig};

    fn data(n: usize, sigma: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
        let ds = synth_generate(
            &SynthConfig {
                n,
                noise_sigma: sigma,
                seed,
                ..Default::default()
            },
            Execution::default(),
        )
        .unwrap();
        split(&ds.samples, &ds.labels(), 3, &SplitSpec { seed, ..Default::default() })
    }

    #[test]
    fn empty_train_set() {
        let cfg = DistillConfig::default();
        assert!(matches!(
            train_teacher(&[], None, &cfg, Execution::default()),
            Err(DistillError::EmptyDataset)
        ));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (tr, va) = data(300, 0.05, 1);
        let cfg = DistillConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let t = train_teacher(&tr, Some(&va), &cfg, Execution::default()).unwrap();
        assert!(t.net.log.is_empty());
        assert_eq!(t.net.best_epoch, None);
        let init = MlpModel::init(&t.net.model.layer_sizes, &mut stream(0, Purpose::TeacherInit, 0)).unwrap();
        assert_eq!(t.net.model, init);
    }

    #[test]
    fn invalid_temperature() {
        let (tr, _) = data(50, 0.05, 1);
        let cfg = DistillConfig::default();
        let t = train_teacher(&tr, None, &DistillConfig { max_epochs: 1, ..cfg.clone() }, Execution::default()).unwrap();
        let bad = DistillConfig {
            temperature: 0.0,
            ..cfg
        };
        assert!(matches!(
            distill_student(&t, &tr, None, &bad, Execution::default()),
            Err(DistillError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn divergence_is_caught() {
        let (mut tr, _) = data(100, 0.05, 1);
        tr[7].image_features[0] = f64::INFINITY;
        let cfg = DistillConfig::default();
        assert!(matches!(
            train_teacher(&tr, None, &cfg, Execution::default()),
            Err(DistillError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn separable_teacher_is_accurate() {
        let (tr, va) = data(1528, 0.05, 2);
        let t = train_teacher(&tr, Some(&va), &DistillConfig::default(), Execution::default()).unwrap();
        let acc = t.net.log[t.net.best_epoch.unwrap()].val_accuracy.unwrap();
        assert!(acc >= 0.90, "{acc}");
    }

    #[test]
    fn training_is_bitwise_reproducible_across_strategies() {
        let (tr, va) = data(200, 0.05, 3);
        let cfg = DistillConfig {
            max_epochs: 5,
            ..Default::default()
        };
        let a = train_teacher(&tr, Some(&va), &cfg, Execution::Sequential).unwrap();
        let b = train_teacher(&tr, Some(&va), &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let sa = distill_student(&a, &tr, Some(&va), &cfg, Execution::Sequential).unwrap();
        let sb = distill_student(&b, &tr, Some(&va), &cfg, Execution::Parallel).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn alpha_one_matches_baseline() {
        let (tr, va) = data(200, 0.05, 4);
        let cfg = DistillConfig {
            alpha: 1.0,
            max_epochs: 8,
            ..Default::default()
        };
        let t = train_teacher(&tr, Some(&va), &cfg, Execution::default()).unwrap();
        let s = distill_student(&t, &tr, Some(&va), &cfg, Execution::default()).unwrap();
        let b = train_student_baseline(&tr, Some(&va), &cfg, Execution::default()).unwrap();
        assert_eq!(s.model, b.model);
        let bits = |m: &MlpModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&s.model), bits(&b.model));
    }
}
