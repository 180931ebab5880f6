//! Bidirectional pre-norm transformer encoder with a tied output projection.

use rand::Rng;

use super::ops::{
    add_assign, add_bias, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul,
    matmul_at_acc, matmul_bt, sum_rows_acc, LayerNormCache,
};
use super::params::{LayerParams, ModelConfig, ModelParams};
use crate::error::{contract, Result};
use crate::scalar::{softmax_in_place, Scalar};

/// `positions x vocab` output scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub positions: usize,
    pub vocab: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn zeros(positions: usize, vocab: usize) -> Self {
        Logits {
            positions,
            vocab,
            data: vec![T::zero(); positions * vocab],
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.positions, self.vocab)
    }

    pub fn softmax_row(&self, i: usize) -> Vec<T> {
        let mut p = self.row(i).to_vec();
        softmax_in_place(&mut p);
        p
    }
}

struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention probabilities, `heads x n x n`.
    probs: Vec<T>,
    ctx: Vec<T>,
    drop1: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
    m: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
    drop2: Option<Vec<T>>,
}

/// Activations retained by [`Model::forward_train`] for [`Model::backward`].
pub struct ForwardCache<T> {
    ids: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    lnf: LayerNormCache<T>,
    f: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Model { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        if params.embedding.rows() != config.vocab_size || params.layers.len() != config.n_layers {
            return contract("parameters do not match the model configuration");
        }
        Ok(Model { config, params })
    }

    fn check_input(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return contract("empty input sequence");
        }
        if ids.len() > self.config.max_seq_len {
            return contract(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return contract(format!("token id {bad} outside vocabulary"));
        }
        Ok(())
    }

    /// Inference forward pass (no dropout).
    pub fn forward(&self, ids: &[u32]) -> Result<Logits<T>> {
        let (logits, _) = self.run::<rand_chacha::ChaCha8Rng>(ids, 0.0, None)?;
        Ok(logits)
    }

    /// Forward pass keeping activations; dropout is applied when `dropout > 0` and an RNG is given.
    pub fn forward_train<R: Rng>(
        &self,
        ids: &[u32],
        dropout: f64,
        rng: Option<&mut R>,
    ) -> Result<(Logits<T>, ForwardCache<T>)> {
        self.run(ids, dropout, rng)
    }

    fn run<R: Rng>(
        &self,
        ids: &[u32],
        dropout: f64,
        mut rng: Option<&mut R>,
    ) -> Result<(Logits<T>, ForwardCache<T>)> {
        self.check_input(ids)?;
        let cfg = &self.config;
        let p = &self.params;
        let n = ids.len();
        let d = cfg.d_model;
        let eps = T::of(cfg.layer_norm_eps);

        let mut x = vec![T::zero(); n * d];
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            for ((o, &e), &pe) in row
                .iter_mut()
                .zip(p.embedding.row(id))
                .zip(&p.positional[i * d..(i + 1) * d])
            {
                *o = e + pe;
            }
        }

        let mut layers = Vec::with_capacity(p.layers.len());
        for lp in &p.layers {
            let use_dropout = dropout > 0.0 && rng.is_some();
            let (cache, out) = self.layer_forward(lp, x, n, eps, |len| {
                if use_dropout {
                    rng.as_deref_mut().map(|r| dropout_mask(len, dropout, r))
                } else {
                    None
                }
            });
            layers.push(cache);
            x = out;
        }

        let (f, lnf) = layer_norm(&x, &p.lnf_gain, &p.lnf_bias, eps);
        let mut data = matmul_bt(&f, p.embedding.as_slice(), n, d, cfg.vocab_size);
        add_bias(&mut data, &p.out_bias);
        let logits = Logits {
            positions: n,
            vocab: cfg.vocab_size,
            data,
        };
        Ok((
            logits,
            ForwardCache {
                ids: ids.to_vec(),
                layers,
                lnf,
                f,
            },
        ))
    }

    fn layer_forward(
        &self,
        lp: &LayerParams<T>,
        x_in: Vec<T>,
        n: usize,
        eps: T,
        mut mask: impl FnMut(usize) -> Option<Vec<T>>,
    ) -> (LayerCache<T>, Vec<T>) {
        let d = self.config.d_model;
        let ff = self.config.ffn_dim();
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = T::one() / T::of(hd as f64).sqrt();

        let (a, ln1) = layer_norm(&x_in, &lp.ln1_gain, &lp.ln1_bias, eps);
        let mut q = matmul(&a, &lp.wq, n, d, d);
        add_bias(&mut q, &lp.bq);
        let mut k = matmul(&a, &lp.wk, n, d, d);
        add_bias(&mut k, &lp.bk);
        let mut v = matmul(&a, &lp.wv, n, d, d);
        add_bias(&mut v, &lp.bv);

        let mut probs = vec![T::zero(); heads * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + hd];
                let prow = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                for j in 0..n {
                    prow[j] = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                }
                softmax_in_place(prow);
                let crow = &mut ctx[i * d + off..i * d + off + hd];
                for j in 0..n {
                    let w = prow[j];
                    for (c, &vv) in crow.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                        *c += w * vv;
                    }
                }
            }
        }

        let mut attn = matmul(&ctx, &lp.wo, n, d, d);
        add_bias(&mut attn, &lp.bo);
        let drop1 = mask(n * d);
        if let Some(m) = &drop1 {
            attn.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
        }
        let mut x_mid = x_in.clone();
        add_assign(&mut x_mid, &attn);

        let (m, ln2) = layer_norm(&x_mid, &lp.ln2_gain, &lp.ln2_bias, eps);
        let mut h_pre = matmul(&m, &lp.w1, n, d, ff);
        add_bias(&mut h_pre, &lp.b1);
        let h_act: Vec<T> = h_pre.iter().map(|&z| gelu(z)).collect();
        let mut ffn = matmul(&h_act, &lp.w2, n, ff, d);
        add_bias(&mut ffn, &lp.b2);
        let drop2 = mask(n * d);
        if let Some(m) = &drop2 {
            ffn.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
        }
        let mut out = x_mid;
        add_assign(&mut out, &ffn);

        (
            LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                drop1,
                ln2,
                m,
                h_pre,
                h_act,
                drop2,
            },
            out,
        )
    }

    /// Accumulates parameter gradients for upstream gradient `dlogits` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Logits<T>, grads: &mut ModelParams<T>) {
        let cfg = &self.config;
        let p = &self.params;
        let n = cache.ids.len();
        let d = cfg.d_model;
        let vsz = cfg.vocab_size;

        sum_rows_acc(&dlogits.data, &mut grads.out_bias);
        // logits = f E^T: dE += dlogits^T f, df = dlogits E.
        matmul_at_acc(&dlogits.data, &cache.f, n, vsz, d, grads.embedding.as_mut_slice());
        let df = matmul(&dlogits.data, p.embedding.as_slice(), n, vsz, d);
        let mut dx = layer_norm_backward(&df, &cache.lnf, &p.lnf_gain, &mut grads.lnf_gain, &mut grads.lnf_bias);

        for (l, lc) in cache.layers.iter().enumerate().rev() {
            dx = self.layer_backward(&p.layers[l], lc, dx, n, &mut grads.layers[l]);
        }

        for (i, &id) in cache.ids.iter().enumerate() {
            let g = &dx[i * d..(i + 1) * d];
            add_assign(grads.embedding.row_mut(id), g);
            add_assign(&mut grads.positional[i * d..(i + 1) * d], g);
        }
    }

    fn layer_backward(
        &self,
        lp: &LayerParams<T>,
        c: &LayerCache<T>,
        dout: Vec<T>,
        n: usize,
        g: &mut LayerParams<T>,
    ) -> Vec<T> {
        let d = self.config.d_model;
        let ff = self.config.ffn_dim();
        let heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let scale = T::one() / T::of(hd as f64).sqrt();

        // Feed-forward branch.
        let mut dffn = dout.clone();
        if let Some(m) = &c.drop2 {
            dffn.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
        }
        sum_rows_acc(&dffn, &mut g.b2);
        matmul_at_acc(&c.h_act, &dffn, n, ff, d, &mut g.w2);
        let dh_act = matmul_bt(&dffn, &lp.w2, n, d, ff);
        let dh_pre: Vec<T> = dh_act
            .iter()
            .zip(&c.h_pre)
            .map(|(&g, &z)| g * gelu_grad(z))
            .collect();
        sum_rows_acc(&dh_pre, &mut g.b1);
        matmul_at_acc(&c.m, &dh_pre, n, d, ff, &mut g.w1);
        let dm = matmul_bt(&dh_pre, &lp.w1, n, ff, d);
        let mut dx_mid = layer_norm_backward(&dm, &c.ln2, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
        add_assign(&mut dx_mid, &dout);

        // Attention branch.
        let mut datt = dx_mid.clone();
        if let Some(m) = &c.drop1 {
            datt.iter_mut().zip(m).for_each(|(x, &k)| *x *= k);
        }
        sum_rows_acc(&datt, &mut g.bo);
        matmul_at_acc(&c.ctx, &datt, n, d, d, &mut g.wo);
        let dctx = matmul_bt(&datt, &lp.wo, n, d, d);

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); n];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let prow = &c.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d + off..i * d + off + hd];
                // ctx_i = sum_j p_ij v_j
                for j in 0..n {
                    dp[j] = dot(dci, &c.v[j * d + off..j * d + off + hd]);
                    let w = prow[j];
                    for (o, &x) in dv[j * d + off..j * d + off + hd].iter_mut().zip(dci) {
                        *o += w * x;
                    }
                }
                let inner: T = prow.iter().zip(&dp).map(|(&pj, &dpj)| pj * dpj).sum();
                for j in 0..n {
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for t in 0..hd {
                        dq[i * d + off + t] += ds * c.k[j * d + off + t];
                        dk[j * d + off + t] += ds * c.q[i * d + off + t];
                    }
                }
            }
        }

        sum_rows_acc(&dq, &mut g.bq);
        sum_rows_acc(&dk, &mut g.bk);
        sum_rows_acc(&dv, &mut g.bv);
        matmul_at_acc(&c.a, &dq, n, d, d, &mut g.wq);
        matmul_at_acc(&c.a, &dk, n, d, d, &mut g.wk);
        matmul_at_acc(&c.a, &dv, n, d, d, &mut g.wv);
        let mut da = matmul_bt(&dq, &lp.wq, n, d, d);
        add_assign(&mut da, &matmul_bt(&dk, &lp.wk, n, d, d));
        add_assign(&mut da, &matmul_bt(&dv, &lp.wv, n, d, d));
        let mut dx_in = layer_norm_backward(&da, &c.ln1, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        add_assign(&mut dx_in, &dx_mid);
        dx_in
    }
}
