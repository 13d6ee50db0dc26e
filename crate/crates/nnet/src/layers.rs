//! Transformer building blocks: linear maps, layer norm, multi-head
//! attention, position-wise feed-forward, and post-norm encoder/decoder
//! stacks with sinusoidal positions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{NnetError, Result};
use crate::graph::{Graph, Mask, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn uniform(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Xavier-uniform weight `(fan_in, fan_out)`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[fan_in, fan_out], limit, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[d]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            n_heads,
        }
    }

    /// Attends from `queries` to `memory`; pass the same var twice for
    /// self-attention.
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        memory: Var,
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        self.attend(g, q, k, v, mask)
    }

    /// Per-head attention over already projected `q`, `k`, `v`, followed by
    /// the output projection.
    pub fn attend(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Mask>,
    ) -> Result<Var> {
        let d_model = g.value(q).dims2().1;
        let dk = d_model / self.n_heads;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            heads.push(g.attention(qh, kh, vh, mask)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.output.forward(g, joined)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), d, d_ff, rng),
            outer: Linear::new(store, &format!("{name}.outer"), d_ff, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        let h = g.dropout(h);
        self.outer.forward(g, h)
    }
}

/// `LN(x + Dropout(sublayer))`
pub(crate) fn residual(g: &mut Graph, norm: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let sub = g.dropout(sub);
    let sum = g.add(x, sub)?;
    norm.forward(g, sum)
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub feed_forward_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                cfg.d_model,
                cfg.n_heads,
                rng,
            ),
            attention_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.d_model),
            feed_forward: FeedForward::new(
                store,
                &format!("{name}.ffn"),
                cfg.d_model,
                cfg.d_ff,
                rng,
            ),
            feed_forward_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.d_model),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let a = self.attention.forward(g, x, x, mask)?;
        let h = residual(g, &self.attention_norm, x, a)?;
        let f = self.feed_forward.forward(g, h)?;
        residual(g, &self.feed_forward_norm, h, f)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_attention_norm: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub cross_attention_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub feed_forward_norm: LayerNorm,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            self_attention: MultiHeadAttention::new(
                store,
                &format!("{name}.self_attn"),
                cfg.d_model,
                cfg.n_heads,
                rng,
            ),
            self_attention_norm: LayerNorm::new(
                store,
                &format!("{name}.self_attn_norm"),
                cfg.d_model,
            ),
            cross_attention: MultiHeadAttention::new(
                store,
                &format!("{name}.cross_attn"),
                cfg.d_model,
                cfg.n_heads,
                rng,
            ),
            cross_attention_norm: LayerNorm::new(
                store,
                &format!("{name}.cross_attn_norm"),
                cfg.d_model,
            ),
            feed_forward: FeedForward::new(
                store,
                &format!("{name}.ffn"),
                cfg.d_model,
                cfg.d_ff,
                rng,
            ),
            feed_forward_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.d_model),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        self_mask: &Mask,
        memory_mask: Option<&Mask>,
    ) -> Result<Var> {
        let a = self.self_attention.forward(g, x, x, Some(self_mask))?;
        let h = residual(g, &self.self_attention_norm, x, a)?;
        let c = self.cross_attention.forward(g, h, memory, memory_mask)?;
        let h = residual(g, &self.cross_attention_norm, h, c)?;
        let f = self.feed_forward.forward(g, h)?;
        residual(g, &self.feed_forward_norm, h, f)
    }
}

/// Sinusoidal position table of shape `(max_len, d)`.
pub fn sinusoidal_encoding(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            data[pos * d + i] = angle.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(vec![max_len, d], data).expect("shape matches")
}

/// Token embedding plus fixed positional encoding, followed by dropout.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    positions: Tensor,
    max_len: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        d: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // unit variance entries
        let table = store.add(
            format!("{name}.table"),
            uniform(&[vocab, d], 3f64.sqrt(), rng),
        );
        Self {
            table,
            positions: sinusoidal_encoding(max_len, d),
            max_len,
        }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        self.forward_at(g, ids, 0)
    }

    /// Embeds `ids` as if they started at position `offset`.
    pub fn forward_at(&self, g: &mut Graph, ids: &[usize], offset: usize) -> Result<Var> {
        if offset + ids.len() > self.max_len {
            return Err(NnetError::Length {
                len: offset + ids.len(),
                max_len: self.max_len,
            });
        }
        let table = g.param(self.table);
        let tokens = g.embedding(table, ids)?;
        let d = self.positions.dims2().1;
        let pe = Tensor::new(
            vec![ids.len(), d],
            self.positions.data()[offset * d..(offset + ids.len()) * d].to_vec(),
        )?;
        let pe = g.input(pe);
        let x = g.add(tokens, pe)?;
        Ok(g.dropout(x))
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: Embedding,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        vocab: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = Embedding::new(
            store,
            &format!("{name}.embed"),
            vocab,
            cfg.d_model,
            cfg.max_len,
            rng,
        );
        let layers = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
            .collect();
        Self { embedding, layers }
    }

    /// Hidden states `(len, d_model)`. Keys flagged in `padding` are masked
    /// out of every self-attention.
    pub fn forward(&self, g: &mut Graph, ids: &[usize], padding: Option<&[bool]>) -> Result<Var> {
        let mask = padding.map(|p| Mask::key_padding(ids.len(), p));
        let mut x = self.embedding.forward(g, ids)?;
        for layer in &self.layers {
            x = layer.forward(g, x, mask.as_ref())?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub embedding: Embedding,
    pub layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        vocab: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = Embedding::new(
            store,
            &format!("{name}.embed"),
            vocab,
            cfg.d_model,
            cfg.max_len,
            rng,
        );
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
            .collect();
        Self { embedding, layers }
    }

    /// Causal decoder states `(len, d_model)` attending to `memory`.
    pub fn forward(
        &self,
        g: &mut Graph,
        ids: &[usize],
        memory: Var,
        memory_padding: Option<&[bool]>,
    ) -> Result<Var> {
        let causal = Mask::causal(ids.len());
        let memory_mask = memory_padding.map(|p| Mask::key_padding(ids.len(), p));
        let mut x = self.embedding.forward(g, ids)?;
        for layer in &self.layers {
            x = layer.forward(g, x, memory, &causal, memory_mask.as_ref())?;
        }
        Ok(x)
    }
}

/// Evaluation-mode encoder pass returning plain hidden states.
pub fn encoder_forward(
    encoder: &Encoder,
    params: &ParamStore,
    ids: &[usize],
    padding: Option<&[bool]>,
) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let h = encoder.forward(&mut g, ids, padding)?;
    Ok(g.value(h).clone())
}

/// Evaluation-mode decoder pass over a fixed encoder memory.
pub fn decoder_forward(
    decoder: &Decoder,
    params: &ParamStore,
    ids: &[usize],
    memory: &Tensor,
    memory_padding: Option<&[bool]>,
) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let mem = g.input(memory.clone());
    let h = decoder.forward(&mut g, ids, mem, memory_padding)?;
    Ok(g.value(h).clone())
}
