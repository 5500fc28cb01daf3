use serde::{Deserialize, Serialize};

use super::data::ClinicalNormalizer;
use super::model::MlpModel;
use super::train::{DistillConfig, Role, TeacherModel, TrainedModel};
use super::DistillError;

/// What the model expects as input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub image_dim: usize,
    /// Present for models that also take z-scored clinical fields.
    pub clinical: Option<ClinicalNormalizer>,
}

/// Serializable snapshot of a trained network. Field order is fixed, so the
/// same model always serializes to the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub role: Role,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub best_epoch: Option<usize>,
    pub config: DistillConfig,
    pub inputs: InputSpec,
    pub class_names: Vec<String>,
}

impl ModelArchive {
    pub fn new(role: Role, net: &TrainedModel, clinical: Option<ClinicalNormalizer>, config: &DistillConfig) -> Self {
        let m = &net.model;
        let clinical_dim = if clinical.is_some() { 3 } else { 0 };
        Self {
            role,
            layer_sizes: m.layer_sizes.clone(),
            weights: m.weights.clone(),
            biases: m.biases.clone(),
            best_epoch: net.best_epoch,
            config: config.clone(),
            inputs: InputSpec {
                image_dim: m.input_dim() - clinical_dim,
                clinical,
            },
            class_names: ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn teacher(t: &TeacherModel, config: &DistillConfig) -> Self {
        Self::new(Role::Teacher, &t.net, Some(t.normalizer), config)
    }

    pub fn model(&self) -> Result<MlpModel, DistillError> {
        let mut m = MlpModel::zeros(&self.layer_sizes)?;
        let shapes_ok = m.weights.len() == self.weights.len()
            && m.weights.iter().zip(&self.weights).all(|(a, b)| a.len() == b.len())
            && m.biases.iter().zip(&self.biases).all(|(a, b)| a.len() == b.len());
        if !shapes_ok {
            return Err(DistillError::InvalidConfig(
                "archive parameters do not match its layer sizes".into(),
            ));
        }
        m.weights = self.weights.clone();
        m.biases = self.biases.clone();
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String, DistillError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, DistillError> {
        Ok(serde_json::from_str(s)?)
    }
}
