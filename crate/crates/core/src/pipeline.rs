//! Ties the text side (vocabulary, template, verbalizer) to a model and runs
//! two-pass prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, RelationInstance};
use crate::encoding::{encode_instance, MarkerPlacement};
use crate::error::{GraspError, Result};
use crate::model::{Model, ModelConfig};
use crate::prompting::{
    build_template, build_verbalizer, compute_type_priors, initialize_embeddings, MarkerInit,
    PromptExample, TypePriors, Verbalizer,
};
use crate::rcd::{build_clue_labels, mark_predicted_triggers, teacher_forced, ClueLabelSeq};
use crate::scalar::{argmax_over, Scalar};
use crate::vocab::{build_vocabulary, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub min_count: usize,
    pub max_seq_len: usize,
    pub placement: MarkerPlacement,
    pub marker_init: MarkerInit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            min_count: 1,
            max_seq_len: 512,
            placement: MarkerPlacement::Front,
            marker_init: MarkerInit::MeanOfWords,
        }
    }
}

/// Everything needed to turn corpus instances into model inputs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub vocab: Vocabulary,
    pub relation_inventory: Vec<String>,
    pub verbalizer: Verbalizer,
    pub priors: TypePriors,
}

/// One training target: an instance paired with one of its gold relations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    /// Prompt without trigger re-marking (pass-1 input).
    pub base: PromptExample,
    pub base_clues: ClueLabelSeq,
    /// Prompt with gold trigger runs re-marked.
    pub forced: PromptExample,
    pub forced_clues: ClueLabelSeq,
    pub target_label: String,
    pub target_word: u32,
}

impl Pipeline {
    /// Builds vocabulary, verbalizer and type priors from a training corpus.
    pub fn fit(train: &Corpus, config: PipelineConfig) -> Result<Self> {
        let vocab = build_vocabulary(train, config.min_count);
        let priors = compute_type_priors(train);
        Self::from_parts(config, vocab, train.relation_inventory.clone(), priors)
    }

    pub fn from_parts(
        config: PipelineConfig,
        vocab: Vocabulary,
        relation_inventory: Vec<String>,
        priors: TypePriors,
    ) -> Result<Self> {
        let verbalizer = build_verbalizer(&relation_inventory, &vocab)?;
        Ok(Pipeline {
            config,
            vocab,
            relation_inventory,
            verbalizer,
            priors,
        })
    }

    pub fn encode(&self, dialogue: &Dialogue, inst: &RelationInstance) -> Result<PromptExample> {
        let e = encode_instance(dialogue, inst, self.config.placement)?;
        build_template(&inst.id, &e, &inst.relations, &self.vocab, self.config.max_seq_len)
    }

    pub fn encode_corpus(&self, c: &Corpus) -> Result<Vec<PromptExample>> {
        c.instances
            .par_iter()
            .map(|inst| self.encode(c.dialogue_of(inst), inst))
            .collect()
    }

    /// One example per (instance, gold relation known to the verbalizer), in corpus order.
    pub fn training_examples(&self, c: &Corpus) -> Result<Vec<TrainExample>> {
        let per_instance: Vec<Vec<TrainExample>> = c
            .instances
            .par_iter()
            .map(|inst| -> Result<Vec<TrainExample>> {
                let base = self.encode(c.dialogue_of(inst), inst)?;
                let base_clues = build_clue_labels(&base, &self.vocab);
                let (forced, forced_clues) =
                    teacher_forced(&base, &self.vocab, self.config.max_seq_len);
                Ok(inst
                    .relations
                    .iter()
                    .filter_map(|label| {
                        self.verbalizer.word(label).map(|word| TrainExample {
                            base: base.clone(),
                            base_clues: base_clues.clone(),
                            forced: forced.clone(),
                            forced_clues: forced_clues.clone(),
                            target_label: label.clone(),
                            target_word: word,
                        })
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_instance.into_iter().flatten().collect())
    }

    pub fn model_config(&self, d_model: usize, n_layers: usize, n_heads: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.vocab.len(), d_model, n_layers, n_heads);
        cfg.max_seq_len = self.config.max_seq_len;
        cfg
    }
}

/// Output of two-pass prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    /// Pass-1 clue predictions over the un-marked prompt.
    pub clues: ClueLabelSeq,
    /// Pass-2 input: the prompt with predicted trigger runs re-marked.
    pub remarked: PromptExample,
}

/// A pipeline together with a model over its vocabulary.
#[derive(Debug, Clone)]
pub struct Grasp<T> {
    pub pipeline: Pipeline,
    pub model: Model<T>,
}

impl<T: Scalar> Grasp<T> {
    /// Randomly initialized model with the prompt-token, marker and label-word
    /// rows set from the pipeline's priors and metadata.
    pub fn init(pipeline: Pipeline, config: ModelConfig, seed: u64) -> Result<Self> {
        if config.vocab_size != pipeline.vocab.len() {
            return Err(GraspError::Contract(
                "model vocabulary size differs from the pipeline vocabulary".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new(config, &mut rng)?;
        initialize_embeddings(
            &mut model.params.embedding,
            &pipeline.vocab,
            &pipeline.priors,
            &pipeline.verbalizer,
            &pipeline.config.marker_init,
        )?;
        Ok(Grasp { pipeline, model })
    }

    /// Pass 1: argmax over the clue label words at every non-mask position.
    pub fn predict_clues(&self, p: &PromptExample) -> Result<ClueLabelSeq> {
        let logits = self.model.forward(&p.token_ids)?;
        let s = self.pipeline.vocab.specials();
        let clue_ids = s.clue_ids();
        let mut labels = Vec::with_capacity(p.len());
        let mut ignore = vec![false; p.len()];
        for i in 0..p.len() {
            if i == p.mask_index {
                labels.push(s.outside);
                ignore[i] = true;
            } else {
                labels.push(argmax_over(logits.row(i), &clue_ids).expect("four clue words"));
            }
        }
        Ok(ClueLabelSeq { labels, ignore })
    }

    /// Label-word argmax at the mask position.
    pub fn predict_relation(&self, p: &PromptExample) -> Result<String> {
        let logits = self.model.forward(&p.token_ids)?;
        let ids = self.pipeline.verbalizer.word_ids();
        let best = argmax_over(logits.row(p.mask_index), &ids)
            .ok_or_else(|| GraspError::Contract("verbalizer is empty".into()))?;
        Ok(self
            .pipeline
            .verbalizer
            .label(best)
            .expect("argmax ranges over verbalizer ids")
            .to_string())
    }

    /// Two-pass prediction: tag clues, re-mark predicted triggers, read the mask.
    pub fn predict_prompt(&self, p: &PromptExample) -> Result<Prediction> {
        let clues = self.predict_clues(p)?;
        let remarked = mark_predicted_triggers(
            p,
            &clues,
            &self.pipeline.vocab,
            self.model.config.max_seq_len.min(self.pipeline.config.max_seq_len),
        );
        let label = self.predict_relation(&remarked)?;
        Ok(Prediction {
            label,
            clues,
            remarked,
        })
    }

    pub fn predict(&self, dialogue: &Dialogue, inst: &RelationInstance) -> Result<Prediction> {
        let p = self.pipeline.encode(dialogue, inst)?;
        self.predict_prompt(&p)
    }

    /// Predicted labels for every instance, in corpus order.
    pub fn predict_corpus(&self, c: &Corpus) -> Result<Vec<String>> {
        c.instances
            .par_iter()
            .map(|inst| self.predict(c.dialogue_of(inst), inst).map(|p| p.label))
            .collect()
    }
}
