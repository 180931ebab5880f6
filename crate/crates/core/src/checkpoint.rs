//! JSON checkpoint: configuration header, vocabulary, priors and named tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::pipeline::{Grasp, Pipeline, PipelineConfig};
use crate::prompting::TypePriors;
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

pub const FORMAT: &str = "grasp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub relation_inventory: Vec<String>,
    pub priors: TypePriors,
    /// Vocabulary in its TSV form.
    pub vocab: String,
    pub tensors: Vec<TensorDump>,
}

fn scalar_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(g: &Grasp<T>) -> Self {
        let specs = ModelParams::<T>::specs(&g.model.config);
        let tensors = specs
            .into_iter()
            .zip(g.model.params.tensors())
            .map(|(spec, t)| TensorDump {
                name: spec.name,
                shape: spec.shape,
                data: t.iter().map(|x| x.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            scalar: scalar_name::<T>().into(),
            model: g.model.config.clone(),
            pipeline: g.pipeline.config.clone(),
            relation_inventory: g.pipeline.relation_inventory.clone(),
            priors: g.pipeline.priors.clone(),
            vocab: g.pipeline.vocab.to_tsv(),
            tensors,
        }
    }

    pub fn into_model<T: Scalar>(self) -> Result<Grasp<T>> {
        let bad = |m: String| GraspError::Checkpoint(m);
        if self.format != FORMAT {
            return Err(bad(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let specs = ModelParams::<T>::specs(&self.model);
        if specs.len() != self.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape {
                return Err(bad(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, spec.name, spec.shape
                )));
            }
        }
        let vocab = Vocabulary::from_tsv(&self.vocab)?;
        let pipeline =
            Pipeline::from_parts(self.pipeline, vocab, self.relation_inventory, self.priors)?;
        let tensors = self
            .tensors
            .into_iter()
            .map(|t| t.data.into_iter().map(T::of).collect())
            .collect();
        let params = ModelParams::from_tensors(&self.model, tensors)
            .map_err(|e| bad(e.to_string()))?;
        let model = Model::from_params(self.model, params).map_err(|e| bad(e.to_string()))?;
        if model.config.vocab_size != pipeline.vocab.len() {
            return Err(bad("vocabulary size differs from the embedding table".into()));
        }
        Ok(Grasp { pipeline, model })
    }
}

pub fn save_checkpoint<T: Scalar>(g: &Grasp<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from_model(g)).expect("checkpoint serializes");
    fs::write(path, text).map_err(|source| GraspError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Grasp<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraspError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| GraspError::Checkpoint(e.to_string()))?;
    ck.into_model()
}
