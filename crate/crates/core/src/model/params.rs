use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::prompting::EmbeddingTable;
use crate::scalar::Scalar;

/// Shape of the reference encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Standard deviation for token and position embeddings.
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model,
            n_layers,
            n_heads,
            max_seq_len: 512,
            ffn_mult: 4,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn ffn_dim(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return contract("model dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return contract(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    /// Projections are stored `in x out`, row-major.
    pub wq: Vec<T>,
    pub bq: Vec<T>,
    pub wk: Vec<T>,
    pub bk: Vec<T>,
    pub wv: Vec<T>,
    pub bv: Vec<T>,
    pub wo: Vec<T>,
    pub bo: Vec<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        let z = |n: usize| vec![T::zero(); n];
        LayerParams {
            ln1_gain: z(d),
            ln1_bias: z(d),
            wq: z(d * d),
            bq: z(d),
            wk: z(d * d),
            bk: z(d),
            wv: z(d * d),
            bv: z(d),
            wo: z(d * d),
            bo: z(d),
            ln2_gain: z(d),
            ln2_bias: z(d),
            w1: z(d * f),
            b1: z(f),
            w2: z(f * d),
            b2: z(d),
        }
    }

    fn tensors(&self) -> [(&'static str, &Vec<T>); 16] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<T>; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: EmbeddingTable<T>,
    pub positional: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_gain: Vec<T>,
    pub lnf_bias: Vec<T>,
    pub out_bias: Vec<T>,
}

/// Name and shape of one tensor, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        ModelParams {
            embedding: EmbeddingTable::zeros(cfg.vocab_size, d),
            positional: vec![T::zero(); cfg.max_seq_len * d],
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            lnf_gain: vec![T::zero(); d],
            lnf_bias: vec![T::zero(); d],
            out_bias: vec![T::zero(); cfg.vocab_size],
        }
    }

    /// Random initialization: embeddings ~ N(0, init_std), projections
    /// ~ N(0, 1/fan_in), biases zero, layer-norm gains one.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        let mut fill = |xs: &mut [T], std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in xs.iter_mut() {
                *x = T::of(normal.sample(rng));
            }
        };
        fill(p.embedding.as_mut_slice(), cfg.init_std);
        fill(&mut p.positional, cfg.init_std);
        let wd = (1.0 / d as f64).sqrt();
        let wf = (1.0 / f as f64).sqrt();
        for layer in &mut p.layers {
            fill(&mut layer.wq, wd);
            fill(&mut layer.wk, wd);
            fill(&mut layer.wv, wd);
            fill(&mut layer.wo, wd);
            fill(&mut layer.w1, wd);
            fill(&mut layer.w2, wf);
            layer.ln1_gain.fill(T::one());
            layer.ln2_gain.fill(T::one());
        }
        p.lnf_gain.fill(T::one());
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(T::zero()));
        z
    }

    /// Canonical tensor layout for a configuration.
    pub fn specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
        let d = cfg.d_model;
        let f = cfg.ffn_dim();
        let mut out = vec![
            TensorSpec {
                name: "embedding".into(),
                shape: vec![cfg.vocab_size, d],
            },
            TensorSpec {
                name: "positional".into(),
                shape: vec![cfg.max_seq_len, d],
            },
        ];
        for l in 0..cfg.n_layers {
            for (name, shape) in [
                ("ln1_gain", vec![d]),
                ("ln1_bias", vec![d]),
                ("wq", vec![d, d]),
                ("bq", vec![d]),
                ("wk", vec![d, d]),
                ("bk", vec![d]),
                ("wv", vec![d, d]),
                ("bv", vec![d]),
                ("wo", vec![d, d]),
                ("bo", vec![d]),
                ("ln2_gain", vec![d]),
                ("ln2_bias", vec![d]),
                ("w1", vec![d, f]),
                ("b1", vec![f]),
                ("w2", vec![f, d]),
                ("b2", vec![d]),
            ] {
                out.push(TensorSpec {
                    name: format!("layers.{l}.{name}"),
                    shape,
                });
            }
        }
        for (name, shape) in [
            ("lnf_gain", vec![d]),
            ("lnf_bias", vec![d]),
            ("out_bias", vec![cfg.vocab_size]),
        ] {
            out.push(TensorSpec {
                name: name.into(),
                shape,
            });
        }
        out
    }

    /// Every tensor in canonical order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.embedding.as_slice(), &self.positional];
        for layer in &self.layers {
            out.extend(layer.tensors().into_iter().map(|(_, t)| t.as_slice()));
        }
        out.extend([
            self.lnf_gain.as_slice(),
            self.lnf_bias.as_slice(),
            self.out_bias.as_slice(),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.embedding.as_mut_slice(), &mut self.positional];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut().into_iter().map(|t| t.as_mut_slice()));
        }
        out.extend([
            self.lnf_gain.as_mut_slice(),
            self.lnf_bias.as_mut_slice(),
            self.out_bias.as_mut_slice(),
        ]);
        out
    }

    /// Applies `f(self_tensor, other_tensor)` pairwise over two parameter sets of equal shape.
    pub fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(&mut [T], &[T])) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            f(a, b);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Mutable access to the scalar at flat index `k` (canonical order).
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut T {
        for t in self.tensors_mut() {
            if k < t.len() {
                return &mut t[k];
            }
            k -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        self.zip_mut(other, |a, b| {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        });
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Builds parameters from tensors listed in canonical order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Vec<T>>) -> Result<Self> {
        let specs = Self::specs(cfg);
        if tensors.len() != specs.len() {
            return contract(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            ));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.len() != spec.shape.iter().product::<usize>() {
                return contract(format!("tensor {} has wrong size", spec.name));
            }
        }
        let mut p = Self::zeros(cfg);
        for (dst, src) in p.tensors_mut().into_iter().zip(&tensors) {
            dst.copy_from_slice(src);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn specs_match_visit_order() {
        let cfg = ModelConfig::new(11, 8, 2, 2);
        let p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let specs = ModelParams::<f64>::specs(&cfg);
        let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
        let expect: Vec<usize> = specs.iter().map(|s| s.shape.iter().product()).collect();
        assert_eq!(sizes, expect);
    }

    #[test]
    fn scalar_mut_addresses_flat_order() {
        let cfg = ModelConfig::new(5, 4, 1, 2);
        let mut p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let flat = p.flat();
        for k in [0, 19, 20, flat.len() - 1] {
            assert_eq!(*p.scalar_mut(k), flat[k]);
        }
        *p.scalar_mut(20) = 42.0;
        assert_eq!(p.flat()[20], 42.0);
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(ModelConfig::new(5, 6, 1, 4).validate().is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let cfg = ModelConfig::new(7, 4, 1, 1);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let tensors: Vec<Vec<f32>> = p.tensors().iter().map(|t| t.to_vec()).collect();
        assert_eq!(ModelParams::from_tensors(&cfg, tensors).unwrap(), p);
    }
}
